#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod diagnostics;
pub mod error;
pub mod estimator;
pub mod forward;
pub mod harness;
pub mod linalg;
pub mod noise;
pub mod report;
pub mod rkhs;
pub mod rng;
pub mod scalar;
pub mod stats;
pub mod testbed;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Testbed = testbed::TestbedSpec<f64>;
pub type Coefs = testbed::CoefVector<f64>;
pub type Kernel = rkhs::KernelView<f64>;
pub type Design = rkhs::DesignPoints<f64>;
pub type ForwardOp = forward::ForwardOp<f64>;
pub type Noise = noise::NoiseModel<f64>;
pub type Config = harness::ExperimentConfig<f64>;
