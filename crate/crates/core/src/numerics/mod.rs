//! Small dense linear algebra and Gaussian helpers used by the filter and the
//! abstraction: symmetric eigendecomposition, Gaussian sampling, whitening,
//! the normal tail function and the event-trigger attenuation coefficient.

mod eigen;
mod gaussian;
mod matrix;
mod rng;

pub use eigen::{sym_eigen, EigenDecomposition};
pub use gaussian::{
    beta_coefficient, expected_trigger_rate, gaussian_tail_q, whiten_innovation, GaussianBelief,
    GaussianSampler,
};
pub use matrix::{dot, norm2, vec_add, vec_sub, Matrix};
pub use rng::{derive_seed, label, RngStream};
