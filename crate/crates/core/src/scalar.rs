use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssignOps};

/// Floating-point scalar the numeric kernels are generic over.
///
/// `f64` is the pipeline default; `f32` matches the on-disk formats. Exotic
/// floats work too as long as they implement the `num-traits` surface.
pub trait Scalar:
    Float + FromPrimitive + NumAssignOps + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` constant into this scalar type.
    fn cast(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 constant must convert")
    }

    /// Widens to `f64` for reporting and serialization.
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("float scalar must widen to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
