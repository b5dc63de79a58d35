//! The kernel K_f(v, v') of the singular part of the collision operator, evaluated as
//! an integral of f over the hyperplane through the offset point orthogonal to v' - v,
//! and the cones of directions along which it is nondegenerate.

use std::f64::consts::PI;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::{Density, Support};
use crate::error::{Error, Result};
use crate::kernel::{KineticParams, Variant};
use crate::quadrature::{composite, directions, geometric_breaks, Estimate, QuadratureSpec};
use crate::Vec3;

/// Which point the plane integral is centered on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OffsetConvention {
    /// f(v + w).
    VPlusW,
    /// f(v' + w); w = v*' - v puts v* = v' + w, so this matches the sphere form.
    #[default]
    VPrimePlusW,
}

impl FromStr for OffsetConvention {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "v_plus_w" => Ok(OffsetConvention::VPlusW),
            "v_prime_plus_w" => Ok(OffsetConvention::VPrimePlusW),
            other => Err(Error::invalid(
                "offset_convention",
                format!("expected v_plus_w or v_prime_plus_w, got {other}"),
            )),
        }
    }
}

#[derive(Debug, Clone)]
pub struct KernelEvaluator {
    density: Density,
    params: KineticParams,
    spec: QuadratureSpec,
    variant: Variant,
    offset: OffsetConvention,
    support: Support,
}

impl KernelEvaluator {
    pub fn new(density: Density, params: KineticParams, spec: QuadratureSpec, variant: Variant) -> Result<Self> {
        params.validate()?;
        spec.validate()?;
        if density.d() != params.d {
            return Err(Error::invalid("d", "density and kinetic parameters disagree on the dimension"));
        }
        let support = density.support(&spec);
        Ok(KernelEvaluator {
            density,
            params,
            spec,
            variant,
            offset: OffsetConvention::default(),
            support,
        })
    }

    pub fn with_offset(mut self, offset: OffsetConvention) -> Self {
        self.offset = offset;
        self
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn density(&self) -> &Density {
        &self.density
    }

    pub fn params(&self) -> &KineticParams {
        &self.params
    }

    pub fn spec(&self) -> &QuadratureSpec {
        &self.spec
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn offset(&self) -> OffsetConvention {
        self.offset
    }

    /// K_f(v, v') at the evaluator's resolution, with the difference to a coarser
    /// rule as error estimate.
    pub fn eval(&self, v: &Vec3, v_prime: &Vec3) -> Result<Estimate> {
        check_pair(v, v_prime)?;
        let fine = self.value(v, v_prime, &self.spec);
        let coarse = self.value(v, v_prime, &self.spec.coarse());
        let tail = self.density.tail_fraction(self.support.radius, &self.spec);
        Ok(Estimate::new(fine, (fine - coarse).abs() + 2.0 * tail * fine))
    }

    /// Plane integral at a given resolution; v != v' is the caller's responsibility.
    pub(crate) fn value(&self, v: &Vec3, v_prime: &Vec3, spec: &QuadratureSpec) -> f64 {
        let rel = v_prime - v;
        let ell = rel.norm();
        let e = rel / ell;
        let base = match self.offset {
            OffsetConvention::VPlusW => *v,
            OffsetConvention::VPrimePlusW => *v_prime,
        };
        let p = &self.params;
        let s2 = 2.0 * p.s;
        let kink = match self.variant {
            Variant::Psi => p.psi_kink(),
            Variant::Full => None,
        };
        let mut breaks = Vec::new();
        if let Some(k) = kink.filter(|k| *k > ell) {
            breaks.push((k * k - ell * ell).sqrt());
        }
        let integrand = |q: f64| {
            let r = ell.hypot(q);
            let dev = 2.0 * ell.atan2(q);
            p.factor(self.variant, r) * dev.powf(-1.0 - s2) * if p.d == 3 { 1.0 / (dev.sin() * r) } else { 1.0 }
        };
        let integral = self.plane(&base, &e, ell, None, &breaks, spec, &integrand);
        2f64.powi(p.d as i32 - 1) / ell * integral
    }

    /// int_{w perp e, |w| >= lo} f(base + w) h(|w|) dw, restricted to the support ball.
    /// With `lo = None` the whole plane is used and |w| = 0 is graded.
    #[allow(clippy::too_many_arguments)]
    fn plane<H: Fn(f64) -> f64>(
        &self,
        base: &Vec3,
        e: &Vec3,
        ell: f64,
        whole: Option<()>,
        extra: &[f64],
        spec: &QuadratureSpec,
        h: &H,
    ) -> f64 {
        let core = self.support.core;
        let radius = self.support.radius;
        let to_center = self.support.center - base;
        let along = to_center.dot(e);
        if along.abs() >= radius {
            return 0.0;
        }
        let disk = (radius * radius - along * along).sqrt();
        let in_plane = to_center - along * e;
        let panel = spec.plane_panel * core;
        let lo = if whole.is_some() { 0.0 } else { ell };
        let f = &self.density;
        if self.params.d == 2 {
            let n = Vec3::new(-e.y, e.x, 0.0);
            let t0 = in_plane.dot(&n);
            let mut total = 0.0;
            for sign in [-1.0, 1.0] {
                // Half line t = sign * q, q >= lo.
                let center_q = sign * t0;
                let (a, b) = ((center_q - disk).max(lo), center_q + disk);
                if b <= a {
                    continue;
                }
                let rule = line_rule(a, b, lo, whole.is_some(), core, panel, extra, spec);
                for (q, w) in rule {
                    let fv = f.eval(&(base + sign * q * n));
                    if fv > 0.0 {
                        total += w * fv * h(q);
                    }
                }
            }
            total
        } else {
            let (n1, n2) = orthonormal(e);
            let px = in_plane.dot(&n1);
            let py = in_plane.dot(&n2);
            let pr = px.hypot(py);
            let phi_p = py.atan2(px);
            let (a, b) = ((pr - disk).max(lo), pr + disk);
            if b <= a {
                return 0.0;
            }
            let rule = line_rule(a, b, lo, whole.is_some(), core, panel, extra, spec);
            let mut total = 0.0;
            for (q, wq) in rule {
                let (start, width) = if pr < 1e-14 || q + pr <= disk {
                    (0.0, 2.0 * PI)
                } else {
                    let c = ((q * q + pr * pr - disk * disk) / (2.0 * q * pr)).clamp(-1.0, 1.0);
                    let beta = c.acos();
                    (phi_p - beta, 2.0 * beta)
                };
                if width <= 0.0 {
                    continue;
                }
                let pieces = ((q * width / panel).ceil() as usize).max(1);
                let breaks: Vec<f64> = (0..=pieces).map(|i| start + width * i as f64 / pieces as f64).collect();
                let hq = h(q);
                let mut ring = 0.0;
                for (phi, wphi) in composite(&breaks, spec.plane_order) {
                    let (s, c) = phi.sin_cos();
                    ring += wphi * f.eval(&(base + q * (c * n1 + s * n2)));
                }
                total += wq * q * hq * ring;
            }
            total
        }
    }

    /// Right-hand side of the kernel lower bound:
    /// |v - v'|^{-d-2s} int_{w perp (v'-v)} f(v' + w) m(|w|) dw with
    /// m = min(|w|^{gamma+2s+1}, |w|^{2s+1}) for gamma < 0 and |w|^{gamma+2s+1} otherwise.
    pub fn lower_bound_integral(&self, v: &Vec3, v_prime: &Vec3) -> Result<f64> {
        check_pair(v, v_prime)?;
        let rel = v_prime - v;
        let ell = rel.norm();
        let p = &self.params;
        let (g, s2) = (p.gamma, 2.0 * p.s);
        let m = |q: f64| {
            if g < 0.0 {
                q.powf(g + s2 + 1.0).min(q.powf(s2 + 1.0))
            } else {
                q.powf(g + s2 + 1.0)
            }
        };
        let integral = self.plane(v_prime, &(rel / ell), ell, Some(()), &[1.0], &self.spec, &m);
        Ok(ell.powf(-(p.dim() + s2)) * integral)
    }
}

fn check_pair(v: &Vec3, v_prime: &Vec3) -> Result<()> {
    if v == v_prime {
        return Err(Error::DegeneratePair);
    }
    Ok(())
}

fn orthonormal(u: &Vec3) -> (Vec3, Vec3) {
    let a = if u.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let n1 = (a - u * u.dot(&a)).normalize();
    (n1, u.cross(&n1))
}

/// Composite rule on [a, b]: panels of width `panel`, geometric cells toward q = 0
/// when the whole plane is integrated, and extra breakpoints.
#[allow(clippy::too_many_arguments)]
fn line_rule(
    a: f64,
    b: f64,
    lo: f64,
    graded: bool,
    core: f64,
    panel: f64,
    extra: &[f64],
    spec: &QuadratureSpec,
) -> Vec<(f64, f64)> {
    let mut breaks = vec![a];
    if graded && a <= lo {
        let g = geometric_breaks(spec.graded_min * core, core.min(b), spec.grading_ratio);
        breaks.extend(g.into_iter().filter(|&x| x > a && x < b));
    }
    let start = breaks.last().copied().unwrap_or(a).max(a);
    let m = ((b - start) / panel).ceil().max(1.0) as usize;
    breaks.extend((1..=m).map(|i| start + (b - start) * i as f64 / m as f64));
    breaks.extend(extra.iter().copied().filter(|&x| x > a && x < b));
    breaks.sort_by(f64::total_cmp);
    breaks.dedup_by(|x, y| (*x - *y).abs() <= 1e-12 * y.abs().max(1.0));
    composite(&breaks, spec.plane_order)
}

pub fn kf_eval(evaluator: &KernelEvaluator, v: &Vec3, v_prime: &Vec3) -> Result<Estimate> {
    evaluator.eval(v, v_prime)
}

/// K^psi_f(v, v') over the lower-bound integral; the psi variant is used whatever the
/// evaluator's setting (it coincides with the full kernel for gamma >= 0).
pub fn kf_lower_bound_check(evaluator: &KernelEvaluator, v: &Vec3, v_prime: &Vec3) -> Result<f64> {
    let den = evaluator.lower_bound_integral(v, v_prime)?;
    if !(den > 0.0) {
        return Err(Error::Vacuous);
    }
    let ev = evaluator.clone().with_variant(Variant::Psi);
    Ok(ev.value(v, v_prime, &ev.spec) / den)
}

/// Directions sigma along which K(v, v + t sigma) >= lambda <v>^{1+2s+gamma} t^{-d-2s}.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConeReport {
    pub v: Vec<f64>,
    pub lambda_hat: f64,
    pub measure_hat: f64,
    pub max_alignment: f64,
    pub directions: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConeOptions {
    pub n_dirs: usize,
    pub radii: Vec<f64>,
    /// Fixed threshold; when absent the largest power of two accepting at least
    /// `target_fraction / <v>` of the sphere is used. Only a fixed threshold makes
    /// measures at different v comparable.
    pub lambda: Option<f64>,
    pub target_fraction: f64,
}

impl Default for ConeOptions {
    fn default() -> Self {
        ConeOptions {
            n_dirs: 256,
            radii: vec![0.25, 0.5, 1.0],
            lambda: None,
            target_fraction: 0.5,
        }
    }
}

pub fn cone_estimate(evaluator: &KernelEvaluator, v: &Vec3, n_dirs: usize, radii: &[f64]) -> Result<ConeReport> {
    cone_estimate_with(
        evaluator,
        v,
        &ConeOptions {
            n_dirs,
            radii: radii.to_vec(),
            ..ConeOptions::default()
        },
    )
}

pub fn cone_estimate_with(evaluator: &KernelEvaluator, v: &Vec3, opts: &ConeOptions) -> Result<ConeReport> {
    let p = evaluator.params;
    let d = p.d;
    if opts.n_dirs < 64 {
        return Err(Error::invalid("n_dirs", format!("must be at least 64, got {}", opts.n_dirs)));
    }
    if opts.radii.is_empty() || opts.radii.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
        return Err(Error::invalid("radii", "need a nonempty set of positive radii"));
    }
    if d == 2 && v.z != 0.0 {
        return Err(Error::invalid("v", "third component must be 0 in d = 2"));
    }
    if !(opts.target_fraction > 0.0 && opts.target_fraction <= 1.0) {
        return Err(Error::invalid("target_fraction", "must lie in (0, 1]"));
    }
    // Antipodal pairs: index i + n/2 in d = 2; in d = 3 the product rule is symmetric
    // under z -> -z and azimuth + pi, so -sigma is looked up explicitly.
    let dirs = if d == 2 {
        directions(2, opts.n_dirs + opts.n_dirs % 2)
    } else {
        let m = ((opts.n_dirs as f64).sqrt() * std::f64::consts::SQRT_2).ceil() as usize;
        directions(3, m + m % 2)
    };
    let bracket = (1.0 + v.norm_squared()).sqrt();
    let weight = bracket.powf(1.0 + 2.0 * p.s + p.gamma);
    let scaled: Vec<f64> = dirs
        .par_iter()
        .map(|(sigma, _)| {
            opts.radii
                .iter()
                .map(|&t| evaluator.value(v, &(v + t * sigma), &evaluator.spec) * t.powf(p.dim() + 2.0 * p.s) / weight)
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let partner: Vec<usize> = (0..dirs.len())
        .map(|i| {
            let target = -dirs[i].0;
            (0..dirs.len())
                .min_by(|&a, &b| (dirs[a].0 - target).norm().total_cmp(&(dirs[b].0 - target).norm()))
                .unwrap_or(i)
        })
        .collect();
    let joint: Vec<f64> = (0..dirs.len()).map(|i| scaled[i].min(scaled[partner[i]])).collect();
    let total: f64 = dirs.iter().map(|(_, w)| w).sum();
    let fraction = |lambda: f64| -> f64 {
        dirs.iter()
            .zip(&joint)
            .filter(|(_, m)| **m >= lambda)
            .map(|((_, w), _)| w)
            .sum::<f64>()
            / total
    };
    let lambda = match opts.lambda {
        Some(l) => l,
        None => {
            let mut found = 0.0;
            for k in (-80..=40).rev() {
                let l = 2f64.powi(k);
                if fraction(l) >= opts.target_fraction / bracket {
                    found = l;
                    break;
                }
            }
            found
        }
    };
    let mut accepted = Vec::new();
    let mut measure = 0.0;
    let mut max_alignment: f64 = 0.0;
    if lambda > 0.0 {
        for ((sigma, w), m) in dirs.iter().zip(&joint) {
            if *m >= lambda {
                measure += w;
                max_alignment = max_alignment.max(sigma.dot(v).abs());
                accepted.push(sigma.iter().take(d).copied().collect());
            }
        }
    }
    Ok(ConeReport {
        v: v.iter().take(d).copied().collect(),
        lambda_hat: lambda,
        measure_hat: measure * p.sphere_area() / total,
        max_alignment,
        directions: accepted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::make_maxwellian;
    use approx::assert_relative_eq;

    fn v2(x: f64, y: f64) -> Vec3 {
        Vec3::new(x, y, 0.0)
    }

    fn evaluator(gamma: f64, s: f64, variant: Variant) -> KernelEvaluator {
        let f = make_maxwellian(2, Vec3::zeros(), 1.0, 1.0).unwrap();
        KernelEvaluator::new(f, KineticParams::new(2, gamma, s).unwrap(), QuadratureSpec::default(), variant).unwrap()
    }

    #[test]
    fn zero_density_gives_zero_kernel() {
        let ev = KernelEvaluator::new(
            Density::zero(2).unwrap(),
            KineticParams::new(2, -1.0, 0.3).unwrap(),
            QuadratureSpec::default(),
            Variant::Full,
        )
        .unwrap();
        assert_eq!(ev.eval(&v2(0.0, 0.0), &v2(0.5, 0.0)).unwrap().value, 0.0);
        assert!(matches!(kf_lower_bound_check(&ev, &v2(0.0, 0.0), &v2(0.5, 0.0)), Err(Error::Vacuous)));
        let cone = cone_estimate(&ev, &Vec3::zeros(), 64, &[0.5]).unwrap();
        assert_eq!(cone.measure_hat, 0.0);
    }

    #[test]
    fn self_convergence_at_four_times_the_nodes() {
        let ev = evaluator(-1.0, 0.3, Variant::Full);
        let (v, vp) = (v2(0.0, 0.0), v2(0.5, 0.0));
        let k = ev.eval(&v, &vp).unwrap();
        let fine_spec = QuadratureSpec {
            plane_order: 16,
            plane_panel: ev.spec.plane_panel / 2.0,
            ..ev.spec.clone()
        };
        let reference = ev.value(&v, &vp, &fine_spec);
        assert!(k.value > 0.0);
        assert!((k.value - reference).abs() <= 0.01 * reference, "{k:?} vs {reference}");
        assert!((k.value - reference).abs() <= k.error.max(1e-12 * reference));
    }

    #[test]
    fn rotation_equivariance_for_radial_density() {
        let ev = evaluator(-1.0, 0.3, Variant::Psi);
        let (v, vp) = (v2(0.3, -0.4), v2(1.1, 0.2));
        let base = ev.value(&v, &vp, &ev.spec);
        for angle in [0.3f64, 1.7, 4.0] {
            let rot = nalgebra::Rotation3::from_axis_angle(&Vec3::z_axis(), angle);
            let k = ev.value(&(rot * v), &(rot * vp), &ev.spec);
            assert_relative_eq!(k, base, max_relative = 1e-6);
        }
    }

    #[test]
    fn psi_kernel_below_full_kernel() {
        let full = evaluator(-1.5, 0.4, Variant::Full);
        let psi = full.clone().with_variant(Variant::Psi);
        for (v, vp) in [(v2(0.0, 0.0), v2(0.2, 0.1)), (v2(1.0, 2.0), v2(-1.0, 0.5)), (v2(3.0, 0.0), v2(3.0, 0.3))] {
            let a = psi.eval(&v, &vp).unwrap();
            let b = full.eval(&v, &vp).unwrap();
            assert!(a.value <= b.value + a.error + b.error);
        }
    }

    #[test]
    fn kernel_is_linear_in_f() {
        let ev = evaluator(-1.0, 0.5, Variant::Full);
        let scaled = KernelEvaluator::new(
            ev.density().scaled(3.5).unwrap(),
            *ev.params(),
            ev.spec().clone(),
            Variant::Full,
        )
        .unwrap();
        let (v, vp) = (v2(0.5, 0.5), v2(-0.2, 1.0));
        assert_relative_eq!(
            scaled.value(&v, &vp, &ev.spec),
            3.5 * ev.value(&v, &vp, &ev.spec),
            max_relative = 1e-10
        );
        let r1 = kf_lower_bound_check(&ev, &v, &vp).unwrap();
        let r2 = kf_lower_bound_check(&scaled, &v, &vp).unwrap();
        assert_relative_eq!(r1, r2, max_relative = 1e-10);
    }

    #[test]
    fn three_dimensional_kernel_converges() {
        let f = make_maxwellian(3, Vec3::zeros(), 1.0, 1.0).unwrap();
        let ev = KernelEvaluator::new(f, KineticParams::new(3, -2.0, 0.5).unwrap(), QuadratureSpec::default(), Variant::Psi)
            .unwrap();
        let k = ev.eval(&Vec3::new(0.1, 0.2, 0.0), &Vec3::new(0.5, 0.0, 0.3)).unwrap();
        assert!(k.value > 0.0 && k.error < 1e-3 * k.value, "{k:?}");
    }

    #[test]
    fn cone_at_origin_covers_the_circle() {
        let ev = evaluator(-2.0, 0.6, Variant::Psi);
        let cone = cone_estimate(&ev, &Vec3::zeros(), 64, &[0.25, 0.5, 1.0]).unwrap();
        assert!(cone.lambda_hat > 0.0);
        // Radial symmetry: the joint ratio is constant in sigma up to quadrature error,
        // so the calibrated threshold accepts the whole circle.
        assert_relative_eq!(cone.measure_hat, 2.0 * PI, max_relative = 1e-12);
        for sigma in &cone.directions {
            let neg = [-sigma[0], -sigma[1]];
            assert!(cone
                .directions
                .iter()
                .any(|x| (x[0] - neg[0]).abs() < 1e-12 && (x[1] - neg[1]).abs() < 1e-12));
        }
    }
}
