//! Composite Simpson quadrature and the Gaussian density functionals that feed
//! the optimal-bandwidth formulas.

use crate::error::{Error, Result};
use crate::kernels::INV_SQRT_2PI;

/// Density values below this are lifted to it before negative powers.
pub const DENSITY_FLOOR: f64 = 1e-300;

/// Minimum half-width, in standard deviations, of the Gaussian functional range.
pub const ORACLE_HALF_WIDTH_SD: f64 = 10.0;

/// Simpson panel count per `ORACLE_HALF_WIDTH_SD` of half-width.
pub const ORACLE_INTERVALS: usize = 4096;

/// Half-width in standard deviations at which `φ^(β−1)` has decayed by `e⁻⁴⁰`,
/// never less than [`ORACLE_HALF_WIDTH_SD`] and capped before `φ` underflows.
pub fn tail_half_width(beta: f64) -> f64 {
    (80.0 / (beta - 1.0)).sqrt().clamp(ORACLE_HALF_WIDTH_SD, 37.0)
}

/// A closed interval split into an even number of Simpson panels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureSpec {
    lo: f64,
    hi: f64,
    intervals: usize,
}

impl QuadratureSpec {
    pub fn new(lo: f64, hi: f64, intervals: usize) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || lo >= hi {
            return Err(Error::InvalidQuadrature(format!("need finite lo < hi, got [{lo}, {hi}]")));
        }
        if intervals < 2 || !intervals.is_multiple_of(2) {
            return Err(Error::InvalidQuadrature(format!(
                "interval count must be even and >= 2, got {intervals}"
            )));
        }
        if (hi - lo) / intervals as f64 <= 0.0 {
            return Err(Error::InvalidQuadrature("step underflows to zero".into()));
        }
        Ok(Self { lo, hi, intervals })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn intervals(&self) -> usize {
        self.intervals
    }

    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / self.intervals as f64
    }

    /// Number of nodes, `intervals + 1`.
    pub fn node_count(&self) -> usize {
        self.intervals + 1
    }

    #[inline]
    pub fn node(&self, k: usize) -> f64 {
        if k == self.intervals {
            self.hi
        } else {
            self.lo + k as f64 * self.step()
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.intervals).map(move |k| self.node(k))
    }

    /// Same range with twice the panels.
    pub fn refined(&self) -> Self {
        Self {
            intervals: self.intervals * 2,
            ..*self
        }
    }
}

#[inline]
fn simpson_weight(k: usize, intervals: usize) -> f64 {
    if k == 0 || k == intervals {
        1.0
    } else if k % 2 == 1 {
        4.0
    } else {
        2.0
    }
}

/// Composite Simpson rule for `f` on `spec`. Nodes are visited in ascending order.
pub fn simpson<F>(f: F, spec: &QuadratureSpec) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    let n = spec.intervals;
    let mut acc = 0.0;
    for k in 0..=n {
        let x = spec.node(k);
        let value = f(x);
        if !value.is_finite() {
            return Err(Error::NonFiniteIntegrand { x, value });
        }
        acc += simpson_weight(k, n) * value;
    }
    Ok(acc * spec.step() / 3.0)
}

/// Simpson rule over integrand values already sampled at the nodes of `spec`.
pub fn simpson_sampled(values: &[f64], spec: &QuadratureSpec) -> Result<f64> {
    if values.len() != spec.node_count() {
        return Err(Error::InvalidQuadrature(format!(
            "expected {} node values, got {}",
            spec.node_count(),
            values.len()
        )));
    }
    let n = spec.intervals;
    let mut acc = 0.0;
    for (k, &value) in values.iter().enumerate() {
        if !value.is_finite() {
            return Err(Error::NonFiniteIntegrand { x: spec.node(k), value });
        }
        acc += simpson_weight(k, n) * value;
    }
    Ok(acc * spec.step() / 3.0)
}

/// N(mean, sd²) density.
#[inline]
pub fn normal_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    INV_SQRT_2PI * (-0.5 * z * z).exp() / sd
}

/// Fourth derivative of the N(mean, sd²) density,
/// `φ(z)·σ⁻⁵·(3 − 6z² + z⁴)` with `z = (x − m)/σ`.
#[inline]
pub fn normal_fourth_derivative(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    let z2 = z * z;
    normal_pdf(x, mean, sd) * (3.0 - 6.0 * z2 + z2 * z2) / sd.powi(4)
}

/// `I1 = ∫ f^(β−1)` and `I2 = ∫ f^(β−2) (f⁽⁴⁾)²` for some density `f`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityFunctionals {
    pub i1: f64,
    pub i2: f64,
}

/// Computes [`DensityFunctionals`] by Simpson quadrature of `pdf` and its
/// analytic fourth derivative on `spec`.
///
/// Density values under [`DENSITY_FLOOR`] are lifted before raising to the
/// (possibly negative) power `β − 2`; if the lifted nodes carry more than
/// 1e-10 of either integral the result is rejected.
pub fn functionals_by_quadrature<P, D>(
    pdf: P,
    fourth_derivative: D,
    beta: f64,
    spec: &QuadratureSpec,
) -> Result<DensityFunctionals>
where
    P: Fn(f64) -> f64,
    D: Fn(f64) -> f64,
{
    if !(beta.is_finite() && beta > 1.0) {
        return Err(Error::InvalidBeta(beta));
    }
    let n = spec.node_count();
    let mut i1_vals = Vec::with_capacity(n);
    let mut i2_vals = Vec::with_capacity(n);
    let mut clipped = [0.0f64; 2];
    let mut total = [0.0f64; 2];
    for k in 0..n {
        let x = spec.node(k);
        let raw = pdf(x);
        let f = raw.max(DENSITY_FLOOR);
        let d4 = fourth_derivative(x);
        let a = f.powf(beta - 1.0);
        let b = if d4 == 0.0 { 0.0 } else { f.powf(beta - 2.0) * d4 * d4 };
        let w = simpson_weight(k, spec.intervals);
        total[0] += w * a.abs();
        total[1] += w * b.abs();
        if raw < DENSITY_FLOOR {
            clipped[0] += w * a.abs();
            clipped[1] += w * b.abs();
        }
        i1_vals.push(a);
        i2_vals.push(b);
    }
    for j in 0..2 {
        if total[j] > 0.0 {
            let rel = clipped[j] / total[j];
            if rel > 1e-10 {
                return Err(Error::ClippedMass { relative_mass: rel });
            }
        }
    }
    Ok(DensityFunctionals {
        i1: simpson_sampled(&i1_vals, spec)?,
        i2: simpson_sampled(&i2_vals, spec)?,
    })
}

/// `I1`, `I2` for the N(mean, sd²) density by quadrature over mean ± [`tail_half_width`]·sd.
pub fn gaussian_functional_oracle(mean: f64, sd: f64, beta: f64) -> Result<DensityFunctionals> {
    if !(sd.is_finite() && sd > 0.0) {
        return Err(Error::DegenerateScale);
    }
    if !(beta.is_finite() && beta > 1.0) {
        return Err(Error::InvalidBeta(beta));
    }
    let width = tail_half_width(beta);
    let intervals = (ORACLE_INTERVALS as f64 * width / ORACLE_HALF_WIDTH_SD).ceil() as usize;
    let half = width * sd;
    let spec = QuadratureSpec::new(mean - half, mean + half, intervals + intervals % 2)?;
    functionals_by_quadrature(
        |x| normal_pdf(x, mean, sd),
        |x| normal_fourth_derivative(x, mean, sd),
        beta,
        &spec,
    )
}
