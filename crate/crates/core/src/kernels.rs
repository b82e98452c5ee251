//! Symmetric probability kernels and their analytic moment constants.
//!
//! Only the Gaussian shape is provided. All closed-form bandwidth formulas in
//! this crate (normal reference, asymptotic divergence) are stated for it,
//! though they are written against the generic constants `mu2`, `mu4` and
//! `roughness` so another shape can be slotted in.

use std::f64::consts::PI;

/// 1 / sqrt(2π)
pub const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Truncation half-width (in kernel units) used by evaluation loops.
pub const GAUSSIAN_SUPPORT_RADIUS: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelShape {
    Gaussian,
}

/// A symmetric probability kernel `K` with `∫K = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kernel {
    shape: KernelShape,
    support_radius: f64,
}

/// The standard normal density kernel.
pub fn gaussian_kernel() -> Kernel {
    Kernel {
        shape: KernelShape::Gaussian,
        support_radius: GAUSSIAN_SUPPORT_RADIUS,
    }
}

impl Default for Kernel {
    fn default() -> Self {
        gaussian_kernel()
    }
}

impl Kernel {
    pub fn shape(&self) -> KernelShape {
        self.shape
    }

    /// K(u).
    #[inline]
    pub fn evaluate(&self, u: f64) -> f64 {
        match self.shape {
            KernelShape::Gaussian => INV_SQRT_2PI * (-0.5 * u * u).exp(),
        }
    }

    /// K''(u).
    #[inline]
    pub fn second_derivative(&self, u: f64) -> f64 {
        match self.shape {
            KernelShape::Gaussian => (u * u - 1.0) * INV_SQRT_2PI * (-0.5 * u * u).exp(),
        }
    }

    /// `(K(u), K''(u))` sharing one exponential.
    #[inline]
    pub fn value_and_second(&self, u: f64) -> (f64, f64) {
        match self.shape {
            KernelShape::Gaussian => {
                let k = INV_SQRT_2PI * (-0.5 * u * u).exp();
                (k, (u * u - 1.0) * k)
            }
        }
    }

    /// ∫ t² K(t) dt
    pub fn mu2(&self) -> f64 {
        match self.shape {
            KernelShape::Gaussian => 1.0,
        }
    }

    /// ∫ t⁴ K(t) dt
    pub fn mu4(&self) -> f64 {
        match self.shape {
            KernelShape::Gaussian => 3.0,
        }
    }

    /// R(K) = ∫ K(t)² dt
    pub fn roughness(&self) -> f64 {
        match self.shape {
            KernelShape::Gaussian => 1.0 / (4.0 * PI).sqrt(),
        }
    }

    /// Half-width outside which K is treated as zero.
    pub fn support_radius(&self) -> f64 {
        self.support_radius
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::{simpson, QuadratureSpec};

    fn full_support(k: &Kernel) -> QuadratureSpec {
        let r = k.support_radius();
        QuadratureSpec::new(-r, r, 4096).unwrap()
    }

    #[test]
    fn gaussian_constants() {
        let k = gaussian_kernel();
        assert!((k.roughness() - 0.282_094_8).abs() < 1e-7);
        assert_eq!(k.mu4(), 3.0);
        assert_eq!(k.mu2(), 1.0);
        assert_eq!(k.second_derivative(1.0), 0.0);
        assert!((k.second_derivative(0.0) + 0.398_942_3).abs() < 1e-7);
    }

    #[test]
    fn stored_moments_match_quadrature() {
        let k = gaussian_kernel();
        let spec = full_support(&k);
        let mass = simpson(|t| k.evaluate(t), &spec).unwrap();
        let m2 = simpson(|t| t * t * k.evaluate(t), &spec).unwrap();
        let m4 = simpson(|t| t.powi(4) * k.evaluate(t), &spec).unwrap();
        let rough = simpson(|t| k.evaluate(t).powi(2), &spec).unwrap();
        assert!((mass - 1.0).abs() < 1e-8, "mass {mass}");
        assert!((m2 - k.mu2()).abs() < 1e-8, "mu2 {m2}");
        assert!((m4 - k.mu4()).abs() < 1e-8, "mu4 {m4}");
        assert!((rough - k.roughness()).abs() < 1e-8, "R(K) {rough}");
    }

    #[test]
    fn second_derivative_matches_finite_difference() {
        let k = gaussian_kernel();
        let step = 1e-4;
        for i in 0..100 {
            let u = -4.0 + 8.0 * i as f64 / 99.0;
            let fd = (k.evaluate(u + step) - 2.0 * k.evaluate(u) + k.evaluate(u - step)) / (step * step);
            assert!((fd - k.second_derivative(u)).abs() < 1e-6, "u = {u}");
        }
    }

    #[test]
    fn value_and_second_consistent() {
        let k = gaussian_kernel();
        for u in [-3.1, -0.2, 0.0, 0.7, 5.5] {
            let (v, d2) = k.value_and_second(u);
            assert_eq!(v, k.evaluate(u));
            assert!((d2 - k.second_derivative(u)).abs() <= 1e-15 * d2.abs().max(v));
        }
    }

    proptest::proptest! {
        #[test]
        fn symmetric_and_nonnegative(u in -20.0f64..20.0) {
            let k = gaussian_kernel();
            proptest::prop_assert!(k.evaluate(u) >= 0.0);
            proptest::prop_assert_eq!(k.evaluate(u), k.evaluate(-u));
            proptest::prop_assert_eq!(k.second_derivative(u), k.second_derivative(-u));
        }
    }
}
