//! Dense-array engine with a small reverse-mode tape.
//!
//! Only the operations the cognate model needs are provided. Every
//! differentiable op has an analytic backward pass, and [`gradcheck`]
//! compares those against central finite differences.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

pub mod checkpoint;
pub mod gradcheck;
pub mod ops;
pub mod optim;
pub mod param;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use checkpoint::Checkpoint;
pub use optim::Sgd;
pub use param::{ParamId, ParamStore, Parameter};
pub use rng::Rng;
pub use tape::{NodeId, Tape};
pub use tensor::Tensor;

/// Version of the numerics engine, reported by `selfcheck`.
pub const NUMERICS_VERSION: &str = "1.0";

/// Floating point element type. Models run in `f32`; the gradient checker
/// re-runs them in `f64`.
pub trait Real: Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Sum + Send + Sync + 'static {
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("representable constant")
    }

    fn f64(self) -> f64 {
        self.to_f64().expect("finite conversion")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Activation used by the convolution and the sense layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Identity,
}
