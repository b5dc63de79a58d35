//! Resolution settings and the one-dimensional rules every integrator is built from.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::num::NonZeroUsize;
use std::sync::{Arc, Mutex, OnceLock};

use gauss_quad::legendre::GaussLegendre;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Vec3;

/// A value together with an absolute error estimate.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

impl Estimate {
    pub fn new(value: f64, error: f64) -> Self {
        Estimate {
            value,
            error: error.abs(),
        }
    }

    pub fn exact(value: f64) -> Self {
        Estimate { value, error: 0.0 }
    }

    pub fn lower(&self) -> f64 {
        self.value - self.error
    }

    pub fn upper(&self) -> f64 {
        self.value + self.error
    }

    pub fn scale(&self, a: f64) -> Self {
        Estimate::new(self.value * a, self.error * a.abs())
    }
}

impl std::ops::Add for Estimate {
    type Output = Estimate;
    fn add(self, rhs: Estimate) -> Estimate {
        Estimate::new(self.value + rhs.value, self.error + rhs.error)
    }
}

impl std::ops::Sub for Estimate {
    type Output = Estimate;
    fn sub(self, rhs: Estimate) -> Estimate {
        Estimate::new(self.value - rhs.value, self.error + rhs.error)
    }
}

/// Node counts, truncation radii, angular grading and Monte Carlo budgets.
///
/// Lengths marked "relative" are multiples of the density's core scale
/// (the square root of its smallest temperature, or 1 for heavy tails).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadratureSpec {
    /// Nodes per axis of the outer velocity grids.
    pub velocity_nodes: usize,
    /// Relative panel width of composite radial rules.
    pub radial_panel: f64,
    /// Gauss-Legendre order per radial panel.
    pub radial_order: usize,
    /// Directions of the relative velocity: circle nodes in d = 2, azimuths in d = 3.
    pub direction_nodes: usize,
    /// Azimuths of sigma around the relative velocity in d = 3 (rounded up to even).
    pub azimuth_nodes: usize,
    /// Smallest deviation angle resolved; the grazing tail below it is estimated analytically.
    pub theta_min: f64,
    /// Ratio of consecutive cells in geometric meshes.
    pub grading_ratio: f64,
    /// Gauss-Legendre order per geometric cell.
    pub grading_order: usize,
    /// Relative size of the innermost cell of graded radial meshes.
    pub graded_min: f64,
    /// Truncation radius in units of the thermal speed, beyond the farthest mean.
    pub truncation_scale: f64,
    /// Relative density level defining the truncation radius of heavy tails.
    pub tail_tolerance: f64,
    /// Gauss-Legendre order per panel of plane integrals.
    pub plane_order: usize,
    /// Relative panel width of plane integrals.
    pub plane_panel: f64,
    /// Monte Carlo pairs (v, v*).
    pub mc_samples: usize,
    pub seed: u64,
    /// Resolution of the companion run used for deterministic error estimates.
    pub coarse_factor: f64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec {
            velocity_nodes: 36,
            radial_panel: 1.0,
            radial_order: 4,
            direction_nodes: 28,
            azimuth_nodes: 8,
            theta_min: 1e-3,
            grading_ratio: 2.5,
            grading_order: 4,
            graded_min: 1e-3,
            truncation_scale: 8.0,
            tail_tolerance: 1e-6,
            plane_order: 8,
            plane_panel: 0.75,
            mc_samples: 20_000,
            seed: 7,
            coarse_factor: 0.7,
        }
    }
}

impl QuadratureSpec {
    /// Cheaper preset for parameter sweeps.
    pub fn fast() -> Self {
        QuadratureSpec {
            velocity_nodes: 28,
            radial_panel: 1.5,
            direction_nodes: 20,
            theta_min: 1e-2,
            grading_ratio: 4.0,
            grading_order: 3,
            plane_panel: 1.0,
            truncation_scale: 7.0,
            ..QuadratureSpec::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("quadrature.radial_panel", self.radial_panel),
            ("quadrature.theta_min", self.theta_min),
            ("quadrature.graded_min", self.graded_min),
            ("quadrature.truncation_scale", self.truncation_scale),
            ("quadrature.tail_tolerance", self.tail_tolerance),
            ("quadrature.plane_panel", self.plane_panel),
            ("quadrature.coarse_factor", self.coarse_factor),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::invalid(name, format!("must be positive, got {value}")));
            }
        }
        if self.theta_min >= PI / 2.0 {
            return Err(Error::invalid("quadrature.theta_min", "must be below pi/2"));
        }
        if !(self.grading_ratio > 1.0) {
            return Err(Error::invalid("quadrature.grading_ratio", "must exceed 1"));
        }
        let counts = [
            ("quadrature.velocity_nodes", self.velocity_nodes, 4),
            ("quadrature.radial_order", self.radial_order, 1),
            ("quadrature.direction_nodes", self.direction_nodes, 4),
            ("quadrature.azimuth_nodes", self.azimuth_nodes, 2),
            ("quadrature.grading_order", self.grading_order, 1),
            ("quadrature.plane_order", self.plane_order, 1),
        ];
        for (name, value, min) in counts {
            if value < min {
                return Err(Error::invalid(name, format!("must be at least {min}, got {value}")));
            }
        }
        Ok(())
    }

    /// The same rule family at a different resolution; `factor < 1` coarsens.
    pub fn rescaled(&self, factor: f64) -> Self {
        let count = |n: usize| ((n as f64 * factor).round() as usize).max(4);
        QuadratureSpec {
            velocity_nodes: count(self.velocity_nodes),
            direction_nodes: count(self.direction_nodes),
            radial_panel: self.radial_panel / factor,
            plane_panel: self.plane_panel / factor,
            grading_ratio: self.grading_ratio.powf(1.0 / factor),
            ..self.clone()
        }
    }

    pub fn coarse(&self) -> Self {
        self.rescaled(self.coarse_factor)
    }

    pub fn azimuths(&self) -> usize {
        self.azimuth_nodes + self.azimuth_nodes % 2
    }
}

/// Gauss-Legendre nodes and weights on [-1, 1], cached per order.
pub fn gauss_legendre(order: usize) -> Arc<[(f64, f64)]> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<[(f64, f64)]>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("rule cache poisoned");
    guard
        .entry(order)
        .or_insert_with(|| {
            let n = NonZeroUsize::new(order).expect("quadrature order must be positive");
            GaussLegendre::new(n).as_node_weight_pairs().into()
        })
        .clone()
}

/// Composite Gauss-Legendre rule over consecutive breakpoints.
pub fn composite(breaks: &[f64], order: usize) -> Vec<(f64, f64)> {
    let rule = gauss_legendre(order);
    let mut out = Vec::with_capacity(breaks.len().saturating_sub(1) * order);
    for pair in breaks.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if b <= a {
            continue;
        }
        let half = 0.5 * (b - a);
        let mid = 0.5 * (b + a);
        out.extend(rule.iter().map(|&(x, w)| (mid + half * x, half * w)));
    }
    out
}

/// Breakpoints `lo, lo*r, lo*r^2, ...` ending exactly at `hi`.
pub fn geometric_breaks(lo: f64, hi: f64, ratio: f64) -> Vec<f64> {
    let mut out = vec![lo];
    let mut x = lo;
    while x * ratio < hi * (1.0 - 1e-9) {
        x *= ratio;
        out.push(x);
    }
    out.push(hi);
    out
}

/// Breakpoints of equal panels no wider than `width`.
pub fn uniform_breaks(a: f64, b: f64, width: f64) -> Vec<f64> {
    let n = ((b - a) / width).ceil().max(1.0) as usize;
    (0..=n).map(|i| a + (b - a) * i as f64 / n as f64).collect()
}

/// Merges extra breakpoints that fall strictly inside the range of `breaks`.
pub fn with_breaks(mut breaks: Vec<f64>, extra: &[f64]) -> Vec<f64> {
    let (lo, hi) = (breaks[0], breaks[breaks.len() - 1]);
    breaks.extend(extra.iter().copied().filter(|&x| x > lo && x < hi));
    breaks.sort_by(f64::total_cmp);
    breaks.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs().max(1.0));
    breaks
}

/// Radial rule on [0, max]: geometric cells from `min` up to `core`, uniform panels beyond.
pub fn graded_radial(
    min: f64,
    core: f64,
    max: f64,
    spec: &QuadratureSpec,
    kinks: &[f64],
) -> Vec<(f64, f64)> {
    let core = core.min(max);
    let mut breaks = vec![0.0];
    if min < core {
        breaks.extend(geometric_breaks(min, core, spec.grading_ratio));
    } else {
        breaks.push(core);
    }
    if max > core {
        breaks.extend(uniform_breaks(core, max, spec.radial_panel * core.max(1e-300)).into_iter().skip(1));
    }
    breaks.dedup();
    composite(&with_breaks(breaks, kinks), spec.radial_order.max(spec.grading_order))
}

/// Equispaced angles on the circle; exact for trigonometric polynomials below degree n.
pub fn periodic(n: usize) -> Vec<(f64, f64)> {
    let h = 2.0 * PI / n as f64;
    (0..n).map(|k| (k as f64 * h, h)).collect()
}

/// Directions on the unit sphere of R^d with surface weights summing to |S^{d-1}|.
pub fn directions(d: usize, n: usize) -> Vec<(Vec3, f64)> {
    if d == 2 {
        return periodic(n)
            .into_iter()
            .map(|(a, w)| (Vec3::new(a.cos(), a.sin(), 0.0), w))
            .collect();
    }
    let polar = gauss_legendre((n / 2).max(2));
    let azimuth = periodic(n);
    let mut out = Vec::with_capacity(polar.len() * azimuth.len());
    for &(z, wz) in polar.iter() {
        let rho = (1.0 - z * z).sqrt();
        for &(a, wa) in &azimuth {
            out.push((Vec3::new(rho * a.cos(), rho * a.sin(), z), wz * wa));
        }
    }
    out
}

/// Axis rule on [center - radius, center + radius].
///
/// Light-tailed densities get the midpoint rule, which is spectrally accurate for
/// Gaussians; heavy tails get a sinh map that clusters nodes within `core` of the center.
pub fn axis_rule(center: f64, radius: f64, n: usize, core: f64, heavy: bool) -> Vec<(f64, f64)> {
    if !heavy || radius <= 4.0 * core {
        let h = 2.0 * radius / n as f64;
        return (0..n)
            .map(|i| (center - radius + (i as f64 + 0.5) * h, h))
            .collect();
    }
    let t_max = (radius / core).asinh();
    let h = 2.0 * t_max / n as f64;
    (0..n)
        .map(|i| {
            let t = -t_max + (i as f64 + 0.5) * h;
            (center + core * t.sinh(), core * t.cosh() * h)
        })
        .collect()
}

/// Deviation-angle rule on [theta_min, pi/2] with geometric cells.
pub fn theta_rule(spec: &QuadratureSpec) -> Vec<(f64, f64)> {
    composite(
        &geometric_breaks(spec.theta_min, PI / 2.0, spec.grading_ratio),
        spec.grading_order,
    )
}

/// Globally adaptive double-exponential quadrature: the interval with the largest
/// error estimate is bisected until the summed estimate meets `tol`.
pub fn adaptive<F>(f: &F, a: f64, b: f64, tol: f64) -> Result<Estimate>
where
    F: Fn(f64) -> f64,
{
    const MAX_PIECES: usize = 4000;
    if b <= a {
        return Ok(Estimate::default());
    }
    let piece = |lo: f64, hi: f64| -> Result<(f64, f64, f64, f64)> {
        let out = quadrature::integrate(f, lo, hi, 0.1 * tol);
        if !out.integral.is_finite() {
            return Err(Error::NonConvergence(format!(
                "non-finite integral on [{lo:e}, {hi:e}]"
            )));
        }
        // Estimates below the rounding floor of the piece are not actionable.
        let floor = 8.0 * f64::EPSILON * out.integral.abs();
        Ok((lo, hi, out.integral, (out.error_estimate - floor).max(0.0)))
    };
    let mut pieces = vec![piece(a, b)?];
    loop {
        let total_err: f64 = pieces.iter().map(|p| p.3).sum();
        if total_err <= tol {
            let value = pieces.iter().map(|p| p.2).sum();
            return Ok(Estimate::new(value, total_err));
        }
        if pieces.len() >= MAX_PIECES {
            return Err(Error::NonConvergence(format!(
                "error estimate {total_err:e} above tolerance {tol:e} on [{a:e}, {b:e}] after {MAX_PIECES} bisections"
            )));
        }
        let worst = pieces
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .map(|(i, _)| i)
            .expect("at least one piece");
        let (lo, hi, _, _) = pieces.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            return Err(Error::NonConvergence(format!(
                "interval [{lo:e}, {hi:e}] cannot be bisected further"
            )));
        }
        pieces.push(piece(lo, mid)?);
        pieces.push(piece(mid, hi)?);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn composite_rule_integrates_polynomials_exactly() {
        let rule = composite(&[0.0, 0.3, 1.0, 2.5], 4);
        let sum: f64 = rule.iter().map(|&(x, w)| w * x.powi(7)).sum();
        assert_relative_eq!(sum, 2.5f64.powi(8) / 8.0, max_relative = 1e-13);
    }

    #[test]
    fn direction_weights_sum_to_sphere_area() {
        let two: f64 = directions(2, 17).iter().map(|d| d.1).sum();
        let three: f64 = directions(3, 12).iter().map(|d| d.1).sum();
        assert_relative_eq!(two, 2.0 * PI, max_relative = 1e-14);
        assert_relative_eq!(three, 4.0 * PI, max_relative = 1e-13);
    }

    #[test]
    fn second_moment_on_sphere() {
        // <z^2> over S^2 is 1/3.
        let m: f64 = directions(3, 10).iter().map(|(u, w)| w * u.z * u.z).sum();
        assert_relative_eq!(m, 4.0 * PI / 3.0, max_relative = 1e-13);
    }

    #[test]
    fn sinh_axis_integrates_a_slow_tail() {
        let rule = axis_rule(0.0, 1e3, 400, 1.0, true);
        let sum: f64 = rule.iter().map(|&(x, w)| w / (1.0 + x * x)).sum();
        let exact = 2.0 * 1e3f64.atan();
        assert_relative_eq!(sum, exact, max_relative = 1e-6);
    }

    #[test]
    fn adaptive_handles_endpoint_singularity() {
        let est = adaptive(&|x: f64| x.powf(-0.5), 0.0, 1.0, 1e-10).unwrap();
        assert!((est.value - 2.0).abs() < 1e-8, "{est:?}");
    }

    #[test]
    fn graded_radial_resolves_power_singularity() {
        let spec = QuadratureSpec::default();
        let rule = graded_radial(1e-6, 1.0, 4.0, &spec, &[2.0]);
        let sum: f64 = rule.iter().map(|&(x, w)| w * x.powf(-0.4)).sum();
        let exact = 4f64.powf(0.6) / 0.6;
        assert_relative_eq!(sum, exact, max_relative = 1e-5);
    }

    #[test]
    fn rescaling_coarsens_counts() {
        let spec = QuadratureSpec::default();
        let coarse = spec.coarse();
        assert!(coarse.velocity_nodes < spec.velocity_nodes);
        assert!(coarse.grading_ratio > spec.grading_ratio);
        assert!(spec.validate().is_ok());
        let bad = QuadratureSpec {
            theta_min: 0.0,
            ..spec
        };
        assert!(bad.validate().is_err());
    }
}
