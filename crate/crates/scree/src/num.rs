//! Scalar abstraction: the solver core is generic over f32/f64.

use nalgebra::RealField;
use num_traits::{FloatConst, FromPrimitive};

/// Floating-point scalar the solvers operate on.
///
/// Bundles the nalgebra field operations with num-traits conversions so the
/// same code instantiates at `f32` and `f64`.
pub trait Real: RealField + FloatConst + FromPrimitive + Copy {}

impl Real for f32 {}
impl Real for f64 {}

/// Converts an `f64` literal into the generic scalar.
#[inline(always)]
pub fn lit<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("literal not representable")
}

/// 3-vector over the generic scalar.
pub type V3<T> = nalgebra::Vector3<T>;
/// 3x3 matrix over the generic scalar.
pub type M3<T> = nalgebra::Matrix3<T>;

/// Spatial dimensionality of a simulation.
///
/// Planar runs still store 3-component vectors and full 3x3 tensors; the third
/// coordinate and velocity component are identically zero (plane strain).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dim {
    Two,
    Three,
}

impl Dim {
    /// Number of active spatial axes.
    #[inline]
    pub fn count(self) -> usize {
        match self {
            Dim::Two => 2,
            Dim::Three => 3,
        }
    }

    /// Index of the gravity-aligned axis (y in 2D, z in 3D).
    #[inline]
    pub fn vertical_axis(self) -> usize {
        match self {
            Dim::Two => 1,
            Dim::Three => 2,
        }
    }

    /// Gravity vector of magnitude `g` (signed, usually negative) along the
    /// vertical axis.
    pub fn gravity<T: Real>(self, g: T) -> V3<T> {
        let mut v = V3::zeros();
        v[self.vertical_axis()] = g;
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn literal_conversion_both_scalars() {
        assert_eq!(lit::<f64>(6.25), 6.25);
        assert_eq!(lit::<f32>(6.25), 6.25f32);
    }

    #[test]
    fn gravity_axis() {
        let g2 = Dim::Two.gravity::<f64>(-9.81);
        assert_eq!(g2, V3::new(0.0, -9.81, 0.0));
        let g3 = Dim::Three.gravity::<f64>(-9.81);
        assert_eq!(g3, V3::new(0.0, 0.0, -9.81));
    }
}
