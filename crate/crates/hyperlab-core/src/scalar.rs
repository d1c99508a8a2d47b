//! Scalar abstraction for the numerics.

use std::fmt::{Debug, Display, LowerExp};

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign};

/// Floating-point scalar the solvers are generic over: `f32` or `f64`.
pub trait Real:
    Float + FloatConst + NumAssign + FromPrimitive + Debug + Display + LowerExp + Send + Sync + 'static
{
    /// Shorthand for pulling literals into the scalar type.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite literal representable in scalar type")
    }

    /// Cast a grid size into the scalar type.
    fn of_usize(n: usize) -> Self {
        Self::from_usize(n).expect("grid size representable in scalar type")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Default convergence tolerance for the iterative solvers.
///
/// `1e-10` where the scalar type can resolve it, loosened to a multiple of
/// machine epsilon otherwise (so `f32` instantiations stay convergent).
pub fn default_tolerance<R: Real>() -> R {
    let floor = R::epsilon() * R::of(100.0);
    floor.max(R::of(1e-10))
}
