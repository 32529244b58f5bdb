use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Scalar used by grid functions, measures, sparse operators and solvers.
///
/// Map geometry (branch inverses, interval endpoints) stays in `f64`; only the
/// linear algebra is generic.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Debug + Display + Default + Send + Sync + 'static
{
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable")
    }

    fn f64(self) -> f64 {
        self.to_f64().expect("finite scalar converts to f64")
    }

    /// Smallest relative tolerance worth asking for at this precision.
    fn floor_tol(tol: f64) -> f64 {
        tol.max(Self::epsilon().f64() * 64.0)
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tolerance_floor_depends_on_precision() {
        assert_eq!(<f64 as Real>::floor_tol(1e-12), 1e-12);
        assert!(<f32 as Real>::floor_tol(1e-12) > 1e-6);
    }

    #[test]
    fn round_trip() {
        assert_eq!(f32::of(0.5).f64(), 0.5);
        assert_eq!(f64::of(0.25), 0.25);
    }
}
