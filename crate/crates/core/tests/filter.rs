use etsynth::et_filter::{g_lambda, predict, step, steady_state_kf_covariance, FilterParams, FilterState};
use etsynth::harness::stationary_trigger_frequency;
use etsynth::numerics::{beta_coefficient, expected_trigger_rate, gaussian_tail_q, sym_eigen, GaussianBelief, Matrix, RngStream};

type M = Vec<Vec<f64>>;

fn mm(a: &M, b: &M) -> M {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    (0..n).map(|i| (0..m).map(|j| (0..k).map(|l| a[i][l] * b[l][j]).sum()).collect()).collect()
}

fn tr(a: &M) -> M {
    (0..a[0].len()).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

fn add(a: &M, b: &M, s: f64) -> M {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + s * q).collect()).collect()
}

/// Gauss-Jordan inverse, independent of the library's LU.
fn inv(a: &M) -> M {
    let n = a.len();
    let mut w: M = a.iter().enumerate().map(|(i, r)| {
        let mut r = r.clone();
        r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
        r
    }).collect();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| w[i][c].abs().total_cmp(&w[j][c].abs())).unwrap();
        w.swap(c, p);
        let d = w[c][c];
        for v in w[c].iter_mut() {
            *v /= d;
        }
        for i in 0..n {
            if i != c {
                let f = w[i][c];
                let row = w[c].clone();
                for (v, r) in w[i].iter_mut().zip(row) {
                    *v -= f * r;
                }
            }
        }
    }
    w.into_iter().map(|r| r[n..].to_vec()).collect()
}

fn mv(a: &M, v: &[f64]) -> Vec<f64> {
    a.iter().map(|r| r.iter().zip(v).map(|(x, y)| x * y).sum()).collect()
}

fn params(f: M, g: M, h: M, q: M, r: M) -> FilterParams {
    FilterParams {
        f: Matrix::from_rows(&f).unwrap(),
        g: Matrix::from_rows(&g).unwrap(),
        h: Matrix::from_rows(&h).unwrap(),
        q: Matrix::from_rows(&q).unwrap(),
        r: Matrix::from_rows(&r).unwrap(),
    }
}

fn planar_2d() -> FilterParams {
    let i: M = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
    let s = |v: f64| vec![vec![v, 0.0], vec![0.0, v]];
    params(i.clone(), i.clone(), i, s(0.07 * 0.07), s(0.03 * 0.03))
}

fn coupled() -> FilterParams {
    params(
        vec![vec![1.0, 0.1, 0.0], vec![0.0, 1.0, 0.1], vec![0.0, 0.0, 0.95]],
        vec![vec![0.0], vec![0.0], vec![0.1]],
        vec![vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0]],
        vec![vec![0.01, 0.002, 0.0], vec![0.002, 0.02, 0.001], vec![0.0, 0.001, 0.03]],
        vec![vec![0.04, 0.01], vec![0.01, 0.09]],
    )
}

#[test]
fn forced_trigger_matches_plain_kalman_filter() {
    for (seed, p) in [(1u64, planar_2d()), (2, coupled())] {
        let rows = |m: &Matrix| m.to_rows();
        let (f, g, h, q, r) = (rows(&p.f), rows(&p.g), rows(&p.h), rows(&p.q), rows(&p.r));
        let n = p.state_dim();
        let mut rng = RngStream::new(seed);
        let mut mean = vec![0.3; n];
        let mut cov: M = (0..n).map(|i| (0..n).map(|j| if i == j { 0.5 } else { 0.0 }).collect()).collect();
        let mut et = FilterState::new(GaussianBelief::new(mean.clone(), Matrix::from_rows(&cov).unwrap()).unwrap());
        for _ in 0..100 {
            let u: Vec<f64> = (0..p.input_dim()).map(|_| rng.standard_normal()).collect();
            let y: Vec<f64> = (0..p.measurement_dim()).map(|_| rng.standard_normal()).collect();
            let (next, decision) = step(&et, &u, &y, 2.5, true, &p).unwrap();
            assert!(decision.gamma);
            et = next;

            let m_pred: Vec<f64> = mv(&f, &mean).iter().zip(mv(&g, &u)).map(|(a, b)| a + b).collect();
            let p_pred = add(&mm(&mm(&f, &cov), &tr(&f)), &q, 1.0);
            let s = add(&mm(&mm(&h, &p_pred), &tr(&h)), &r, 1.0);
            let k = mm(&mm(&p_pred, &tr(&h)), &inv(&s));
            let innov: Vec<f64> = y.iter().zip(mv(&h, &m_pred)).map(|(a, b)| a - b).collect();
            mean = m_pred.iter().zip(mv(&k, &innov)).map(|(a, b)| a + b).collect();
            cov = add(&p_pred, &mm(&mm(&k, &h), &p_pred), -1.0);

            for i in 0..n {
                assert!((et.belief.mean[i] - mean[i]).abs() <= 1e-12);
                for j in 0..n {
                    assert!((et.belief.cov[(i, j)] - cov[i][j]).abs() <= 1e-12);
                }
            }
        }
    }
}

#[test]
fn steady_state_covariance_of_the_planar_system() {
    let (post, prior) = steady_state_kf_covariance(&planar_2d(), 1e-14, 10_000).unwrap();
    // scalar Riccati: p⁻ = p + q, p = p⁻r/(p⁻+r) → p² + qp − qr = 0
    let (q, r) = (0.07f64 * 0.07, 0.03f64 * 0.03);
    let p = 0.5 * (-q + (q * q + 4.0 * q * r).sqrt());
    for i in 0..2 {
        assert!((post[(i, i)] - p).abs() <= 1e-12);
        assert!((post[(i, i)] - 7.768e-4).abs() <= 1e-6);
        assert!((prior[(i, i)] - (p + q)).abs() <= 1e-12);
    }
    assert_eq!(post[(0, 1)], 0.0);
}

#[test]
fn coefficient_endpoints() {
    assert_eq!(gaussian_tail_q(0.0).unwrap(), 0.5);
    assert!((beta_coefficient(1e-6).unwrap() - 1.0).abs() <= 1e-6);
}

fn is_psd(m: &Matrix) -> bool {
    sym_eigen(m).unwrap().eigenvalues.iter().all(|&l| l >= -1e-12)
}

#[test]
fn implicit_update_sits_between_the_extremes() {
    let p = coupled();
    let prior = predict(
        &FilterState::new(GaussianBelief::new(vec![0.0; 3], Matrix::identity(3).scale(0.2)).unwrap()),
        &[0.0],
        &p,
    )
    .unwrap()
    .belief
    .cov;
    let full = g_lambda(&prior, 1.0, &p).unwrap();
    for delta in [0.05, 0.25, 0.5, 1.0, 1.5, 2.0, 3.0, 5.0] {
        let mid = g_lambda(&prior, beta_coefficient(delta).unwrap(), &p).unwrap();
        assert!(is_psd(&(&mid - &full)), "g1 exceeds g_beta at {delta}");
        assert!(is_psd(&(&prior - &mid)), "g_beta exceeds the prior at {delta}");
    }
}

#[test]
fn trigger_frequency_follows_the_tail_formula() {
    for m in 1..=3usize {
        let eye: M = (0..m).map(|i| (0..m).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
        let scaled = |s: f64| add(&eye, &eye, s - 1.0);
        let p = params(eye.clone(), eye.clone(), eye.clone(), scaled(0.0049), scaled(0.0009));
        for delta in [0.5, 1.0, 2.0, 3.0] {
            let empirical = stationary_trigger_frequency(&p, delta, 10_000, 200, 11 + m as u64).unwrap();
            let expected = expected_trigger_rate(delta, m).unwrap();
            assert!((empirical - expected).abs() <= 0.03, "m={m} δ={delta}: {empirical} vs {expected}");
        }
    }
}
