//! Scalar abstraction for the numerical core.
//!
//! All deterministic math (bases, penalized least squares, the manifold
//! solver, FPCA) is generic over [`Real`]. Simulation and the Monte Carlo
//! harness are `f64`-only since random sampling fixes the precision anyway.

/// Floating-point scalar the numerical core operates on: `f32` or `f64`.
pub trait Real: nalgebra::RealField + Copy {
    fn of_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;
    fn of_usize(n: usize) -> Self {
        Self::of_f64(n as f64)
    }
}

impl Real for f64 {
    #[inline]
    fn of_f64(x: f64) -> Self {
        x
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

impl Real for f32 {
    #[inline]
    fn of_f64(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}
