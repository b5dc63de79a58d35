//! Weighted Lebesgue norms, the lifted-paraboloid distance d_GS, the T_0 change of
//! variables and the anisotropic fractional seminorm.

use nalgebra::Vector4;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::{Density, Field, Support, VelocityGrid};
use crate::error::{Error, Result};
use crate::kernel::{exponents, KineticParams};
use crate::quadrature::{axis_rule, composite, directions, geometric_breaks, Estimate, QuadratureSpec};
use crate::Vec3;

/// A velocity together with its lift (v, |v|^2 / 2) onto the paraboloid.
///
/// In d = 2 the third velocity component is zero, so the lift still lives in the
/// first d coordinates plus the last one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnisoPoint {
    pub v: Vec3,
    pub lift: Vector4<f64>,
}

impl AnisoPoint {
    pub fn new(v: Vec3) -> AnisoPoint {
        AnisoPoint {
            v,
            lift: Vector4::new(v.x, v.y, v.z, 0.5 * v.norm_squared()),
        }
    }
}

#[inline]
pub fn bracket(v: &Vec3) -> f64 {
    (1.0 + v.norm_squared()).sqrt()
}

/// sqrt(|v1 - v2|^2 + (|v1|^2 - |v2|^2)^2 / 4), computed as the distance of the lifts.
pub fn d_gs(v1: &Vec3, v2: &Vec3) -> f64 {
    (AnisoPoint::new(*v1).lift - AnisoPoint::new(*v2).lift).norm()
}

/// Components of x parallel and orthogonal to v0: x = a v0 + w.
fn split(v0: &Vec3, x: &Vec3) -> (f64, Vec3) {
    let a = x.dot(v0) / v0.norm_squared();
    (a, x - a * v0)
}

/// T_0: the v0-parallel component is divided by |v0|, the orthogonal part is kept.
/// For |v0| < 2 the map is the identity.
pub fn t0_map(v0: &Vec3, x: &Vec3) -> Vec3 {
    let n = v0.norm();
    if n < 2.0 {
        return *x;
    }
    let (a, w) = split(v0, x);
    (a / n) * v0 + w
}

pub fn t0_inverse(v0: &Vec3, y: &Vec3) -> Vec3 {
    let n = v0.norm();
    if n < 2.0 {
        return *y;
    }
    let (a, w) = split(v0, y);
    (a * n) * v0 + w
}

/// Whether v lies in E_1(v0) = v0 + T_0(B_1).
pub fn in_ellipsoid(v0: &Vec3, v: &Vec3) -> bool {
    t0_inverse(v0, &(v - v0)).norm() <= 1.0 + 1e-12
}

/// d_GS(v1, v2) / |T_0^{-1}(v1 - v2)| for v1 != v2 in E_1(v0), |v0| >= 2.
pub fn comparability_ratio(v0: &Vec3, v1: &Vec3, v2: &Vec3) -> Result<f64> {
    if !(v0.norm() >= 2.0) {
        return Err(Error::invalid("v0", "comparability needs |v0| >= 2"));
    }
    if v1 == v2 {
        return Err(Error::DegeneratePair);
    }
    if !in_ellipsoid(v0, v1) || !in_ellipsoid(v0, v2) {
        return Err(Error::OutsideEllipsoid);
    }
    Ok(d_gs(v1, v2) / t0_inverse(v0, &(v1 - v2)).norm())
}

/// (int <v>^{ell p} |g|^p dv)^{1/p} over the box around `domain`.
///
/// The error combines a coarse companion grid with a power-law extrapolation of the
/// integrand beyond the domain radius; an integrand that decays no faster than
/// |v|^{-d} there is reported as divergent.
pub fn weighted_lp_norm(
    g: &(impl Field + ?Sized),
    d: usize,
    domain: &Support,
    p: f64,
    ell: f64,
    spec: &QuadratureSpec,
) -> Result<Estimate> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::invalid("p", format!("must be at least 1, got {p}")));
    }
    if !ell.is_finite() {
        return Err(Error::invalid("ell", "must be finite"));
    }
    if d != 2 && d != 3 {
        return Err(Error::invalid("d", format!("must be 2 or 3, got {d}")));
    }
    spec.validate()?;
    let h = |v: &Vec3| {
        let x = g.value(v).abs();
        if x == 0.0 {
            0.0
        } else {
            bracket(v).powf(ell * p) * x.powf(p)
        }
    };
    // The weight varies on the unit scale even when the profile is wide.
    let cap = if d == 2 { 1024 } else { 160 };
    let resolve = (8.0 * domain.radius / domain.core.min(1.0)).ceil() as usize;
    let n = (2 * spec.velocity_nodes).max(resolve.min(cap));
    let fine = VelocityGrid::new(d, domain, n).integrate(h);
    let coarse = VelocityGrid::new(d, domain, (n as f64 * spec.coarse_factor).ceil() as usize).integrate(h);
    let tail = lp_tail(&h, d, domain)?;
    let value = fine.max(0.0);
    let error = (fine - coarse).abs() + tail;
    if value == 0.0 {
        return Ok(Estimate::new(0.0, error.powf(1.0 / p)));
    }
    let root = value.powf(1.0 / p);
    Ok(Estimate::new(root, root / p * error / value))
}

/// Integral of h beyond the domain ball, from the decay between R/2 and R.
fn lp_tail<H: Fn(&Vec3) -> f64>(h: &H, d: usize, domain: &Support) -> Result<f64> {
    let r = domain.radius;
    let dirs = directions(d, 16);
    let area: f64 = dirs.iter().map(|(_, w)| w).sum();
    let mean = |rad: f64| -> f64 {
        dirs.iter().map(|(e, w)| w * h(&(domain.center + rad * e))).sum::<f64>() / area
    };
    let (outer, inner) = (mean(r), mean(0.5 * r));
    if outer == 0.0 {
        return Ok(0.0);
    }
    if inner == 0.0 {
        return Err(Error::Divergent("integrand grows toward the domain boundary".into()));
    }
    // h ~ |v|^{-k} near the boundary.
    let k = (inner / outer).ln() / 2f64.ln();
    let dd = d as f64;
    if k <= dd {
        return Err(Error::Divergent(format!(
            "integrand decays like |v|^-{k:.3}, too slowly for d = {d}"
        )));
    }
    Ok(area * outer * r.powf(dd) / (k - dd))
}

/// The weighted norm ||f||_{L^p_{-q}} with the exponents of the main estimate.
pub fn lpq_norm(f: &Density, params: &KineticParams, spec: &QuadratureSpec) -> Result<Estimate> {
    let e = exponents(params);
    weighted_lp_norm(f, f.d(), &f.support(spec), e.p, -e.q, spec)
}

/// Restriction and weight of the anisotropic seminorm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SeminormOptions {
    /// Pairs with d_GS(v, v') below this radius contribute.
    pub radius: f64,
    /// Exponent of (<v><v'>); None means (gamma + 2s + 1) / 2.
    pub weight_exponent: Option<f64>,
}

impl Default for SeminormOptions {
    fn default() -> Self {
        SeminormOptions {
            radius: 1.0,
            weight_exponent: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeminormResult {
    pub value: Estimate,
    pub nodes: usize,
    /// Contributions of the innermost geometric shells in |v' - v|, smallest first.
    pub shells: Vec<f64>,
}

/// Largest r with d_GS(v, v + r e) <= radius; d_GS grows monotonically along the ray
/// for radius < 2.
fn shell_limit(a: f64, radius: f64) -> f64 {
    let h = |r: f64| r * r * (1.0 + 0.25 * (2.0 * a + r) * (2.0 * a + r)) - radius * radius;
    let (mut lo, mut hi) = (0.0, radius);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if h(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-15 * radius {
            break;
        }
    }
    lo
}

struct SeminormPass {
    value: f64,
    tail_spread: f64,
    shells: Vec<f64>,
    nodes: usize,
}

fn seminorm_pass<G: Field + ?Sized>(
    g: &G,
    d: usize,
    domain: &Support,
    params: &KineticParams,
    spec: &QuadratureSpec,
    opts: &SeminormOptions,
) -> SeminormPass {
    let s2 = 2.0 * params.s;
    let q = opts.weight_exponent.unwrap_or(0.5 * (params.gamma + s2 + 1.0));
    let radius = opts.radius;
    let reach = domain.radius + radius;
    let n = spec.velocity_nodes;
    let axis = |c: f64| axis_rule(c, reach, n, domain.core, domain.heavy);
    let (xs, ys) = (axis(domain.center.x), axis(domain.center.y));
    let mut outer = Vec::new();
    if d == 2 {
        for &(x, wx) in &xs {
            for &(y, wy) in &ys {
                outer.push((Vec3::new(x, y, 0.0), wx * wy));
            }
        }
    } else {
        let zs = axis(domain.center.z);
        for &(x, wx) in &xs {
            for &(y, wy) in &ys {
                for &(z, wz) in &zs {
                    outer.push((Vec3::new(x, y, z), wx * wy * wz));
                }
            }
        }
    }
    let r_min = spec.graded_min * radius;
    let breaks = geometric_breaks(r_min, radius, spec.grading_ratio);
    let n_shells = breaks.len() - 1;
    let order = spec.grading_order.max(2);
    let dd = d as f64;
    let tail_power = 2.0 - s2;

    let parts: Vec<SeminormPass> = outer
        .par_iter()
        .map(|&(v, wv)| {
            let mut acc = SeminormPass {
                value: 0.0,
                tail_spread: 0.0,
                shells: vec![0.0; n_shells],
                nodes: 0,
            };
            let gv = g.value(&v);
            let bv = bracket(&v);
            // The admissible set narrows to width ~ 1/|v| along v.
            let want = (8.0 * (1.0 + v.norm()) * radius).ceil() as usize;
            let count = spec.direction_nodes.max(want);
            for (e, we) in directions(d, count + count % 2) {
                let r_max = shell_limit(v.dot(&e), radius);
                if r_max <= r_min {
                    continue;
                }
                let mut first = (0.0, 0.0);
                let mut second = (0.0, 0.0);
                for (k, pair) in breaks.windows(2).enumerate() {
                    if pair[0] >= r_max {
                        break;
                    }
                    let cell = [pair[0], pair[1].min(r_max)];
                    let mut sum = 0.0;
                    for (i, (r, wr)) in composite(&cell, order).into_iter().enumerate() {
                        let vp = v + r * e;
                        let dg = g.value(&vp) - gv;
                        let dist = d_gs(&v, &vp);
                        let w = (bv * bracket(&vp)).powf(q);
                        let val = dg * dg * dist.powf(-dd - s2) * w * r.powf(dd - 1.0);
                        sum += wr * val;
                        if k == 0 && i == 0 {
                            first = (r, val);
                        } else if k == 0 && i == 1 {
                            second = (r, val);
                        }
                        acc.nodes += 1;
                    }
                    acc.shells[k] += wv * we * sum;
                    acc.value += wv * we * sum;
                }
                // Below r_min the integrand behaves like A r^{1-2s}.
                let a1 = first.1 / first.0.powf(1.0 - s2);
                let a2 = second.1 / second.0.powf(1.0 - s2);
                let tail = r_min.powf(tail_power) / tail_power;
                acc.value += wv * we * a1 * tail;
                acc.tail_spread += (wv * we * (a1 - a2) * tail).abs();
            }
            acc
        })
        .collect();
    let mut total = SeminormPass {
        value: 0.0,
        tail_spread: 0.0,
        shells: vec![0.0; n_shells],
        nodes: 0,
    };
    for p in parts {
        total.value += p.value;
        total.tail_spread += p.tail_spread;
        total.nodes += p.nodes;
        for (t, x) in total.shells.iter_mut().zip(&p.shells) {
            *t += x;
        }
    }
    total
}

/// The seminorm int int_{d_GS <= radius} (g(v') - g(v))^2 d_GS^{-d-2s}
/// (<v><v'>)^q dv' dv with v in the box around `domain` widened by the radius.
///
/// The inner integral runs along rays v' = v + r e up to the exact boundary of the
/// d_GS ball, with geometric shells in r. Shell contributions that fail to shrink
/// toward the diagonal signal a divergent seminorm.
pub fn aniso_seminorm_with<G: Field + ?Sized>(
    g: &G,
    d: usize,
    domain: &Support,
    params: &KineticParams,
    spec: &QuadratureSpec,
    opts: &SeminormOptions,
) -> Result<SeminormResult> {
    params.validate()?;
    spec.validate()?;
    if d != params.d {
        return Err(Error::invalid("d", "domain and kinetic parameters disagree on the dimension"));
    }
    if !(opts.radius > 0.0 && opts.radius < 2.0) {
        return Err(Error::invalid("radius", format!("must lie in (0, 2), got {}", opts.radius)));
    }
    let fine = seminorm_pass(g, d, domain, params, spec, opts);
    let coarse = seminorm_pass(g, d, domain, params, &spec.coarse(), opts);
    let shells = fine.shells.clone();
    if shells.len() >= 3 {
        let scale = shells.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if scale > 0.0 && shells[0] > 1e-12 * scale && shells[0] >= shells[1] && shells[1] >= shells[2] {
            return Err(Error::Divergent(format!(
                "shell contributions {:.3e}, {:.3e}, {:.3e} do not shrink toward the diagonal",
                shells[0], shells[1], shells[2]
            )));
        }
    }
    let error = (fine.value - coarse.value).abs() + fine.tail_spread + 1e-14 * fine.value.abs();
    Ok(SeminormResult {
        value: Estimate::new(fine.value, error),
        nodes: fine.nodes + coarse.nodes,
        shells: shells.into_iter().take(4).collect(),
    })
}

pub fn aniso_seminorm<G: Field + ?Sized>(
    g: &G,
    d: usize,
    domain: &Support,
    params: &KineticParams,
    spec: &QuadratureSpec,
) -> Result<SeminormResult> {
    aniso_seminorm_with(g, d, domain, params, spec, &SeminormOptions::default())
}

/// Domain for sqrt f: sqrt of a Gaussian is twice as wide in variance.
pub fn sqrt_support(f: &Density, spec: &QuadratureSpec) -> Support {
    let sup = f.support(spec);
    Support {
        radius: sup.radius * if sup.heavy { 1.0 } else { std::f64::consts::SQRT_2 },
        core: sup.core * std::f64::consts::SQRT_2,
        ..sup
    }
}

/// |sqrt f|^2 of the anisotropic seminorm.
pub fn sqrt_seminorm(
    f: &Density,
    params: &KineticParams,
    spec: &QuadratureSpec,
    opts: &SeminormOptions,
) -> Result<SeminormResult> {
    let root = |v: &Vec3| f.eval(v).sqrt();
    aniso_seminorm_with(&root, f.d(), &sqrt_support(f, spec), params, spec, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn lifts_and_distance() {
        let a = Vec3::new(1.0, 0.0, 0.0);
        let b = Vec3::new(0.0, 1.0, 0.0);
        assert_relative_eq!(d_gs(&a, &b), 2f64.sqrt(), epsilon = 1e-15);
        assert_relative_eq!(d_gs(&a, &Vec3::new(3.0, 0.0, 0.0)), 20f64.sqrt(), epsilon = 1e-14);
        assert_eq!(d_gs(&a, &a), 0.0);
        let p = AnisoPoint::new(Vec3::new(0.3, -2.0, 0.0));
        assert_eq!(p.lift[3], 0.5 * p.v.norm_squared());
    }

    #[test]
    fn t0_examples() {
        let v0 = Vec3::new(2.0, 0.0, 0.0);
        let y = t0_map(&v0, &Vec3::new(2.0, 3.0, 0.0));
        assert_relative_eq!(y, Vec3::new(1.0, 3.0, 0.0), epsilon = 1e-15);
        let x = Vec3::new(0.0, 5.0, 0.0);
        assert_eq!(t0_map(&v0, &x), x);
        let small = Vec3::new(1.0, 1.0, 0.0);
        assert_eq!(t0_map(&small, &x), x);
    }

    #[test]
    fn comparability_rejections() {
        let v0 = Vec3::new(3.0, 0.0, 0.0);
        let v1 = Vec3::new(3.1, 0.2, 0.0);
        assert!(matches!(comparability_ratio(&v0, &v1, &v1), Err(Error::DegeneratePair)));
        let far = Vec3::new(3.0, 2.0, 0.0);
        assert!(matches!(comparability_ratio(&v0, &v1, &far), Err(Error::OutsideEllipsoid)));
        assert!(comparability_ratio(&Vec3::new(1.0, 0.0, 0.0), &v1, &far).is_err());
    }

    #[test]
    fn comparability_equal_speeds() {
        let v0 = Vec3::new(4.0, 0.0, 0.0);
        let v2 = Vec3::new(4.0, 0.3, 0.0);
        // Rotate v2 slightly about the origin: same speed, displacement nearly orthogonal to v0.
        let eps = 1e-6f64;
        let (s, c) = eps.sin_cos();
        let v1 = Vec3::new(c * v2.x - s * v2.y, s * v2.x + c * v2.y, 0.0);
        let r = comparability_ratio(&v0, &v1, &v2).unwrap();
        assert!((r - 1.0).abs() < 0.1, "ratio {r}");
    }

    #[test]
    fn lp_norm_examples() {
        let spec = QuadratureSpec::default();
        let ball = |v: &Vec3| if v.norm() <= 1.0 { 1.0 } else { 0.0 };
        let dom = Support {
            center: Vec3::zeros(),
            radius: 1.25,
            core: 1.0,
            heavy: false,
        };
        let n = weighted_lp_norm(&ball, 2, &dom, 1.0, 0.0, &spec).unwrap();
        assert!((n.value - PI).abs() < 0.02, "{n:?}");

        let m = Density::maxwellian(2, Vec3::zeros(), 1.0, 1.0).unwrap();
        let sup = m.support(&spec);
        let e2 = weighted_lp_norm(&m, 2, &sup, 1.0, 2.0, &spec).unwrap();
        assert!((e2.value - 3.0).abs() <= 1e-6 + e2.error, "{e2:?}");
        let l2 = weighted_lp_norm(&m, 2, &sup, 2.0, 0.0, &spec).unwrap();
        assert_relative_eq!(l2.value, (4.0 * PI).powf(-0.5), max_relative = 1e-6);
        let mass = weighted_lp_norm(&m, 2, &sup, 1.0, 0.0, &spec).unwrap();
        assert_relative_eq!(mass.value, 1.0, max_relative = 1e-6);
    }

    #[test]
    fn lp_norm_divergent_tail() {
        let spec = QuadratureSpec::default();
        let f = Density::heavy_tail(2, 0.5).unwrap();
        let sup = f.support(&spec);
        // <v>^{4.5} f tends to a constant: not integrable.
        assert!(matches!(
            weighted_lp_norm(&f, 2, &sup, 1.0, 4.5, &spec),
            Err(Error::Divergent(_))
        ));
        assert!(weighted_lp_norm(&f, 2, &sup, 1.0, 0.0, &spec).is_ok());
    }

    #[test]
    fn seminorm_constant_and_scaling() {
        let spec = QuadratureSpec::fast();
        let params = KineticParams::new(2, -1.0, 0.4).unwrap();
        let m = Density::maxwellian(2, Vec3::zeros(), 1.0, 1.0).unwrap();
        let dom = sqrt_support(&m, &spec);
        let one = |_: &Vec3| 1.0;
        let c = aniso_seminorm(&one, 2, &dom, &params, &spec).unwrap();
        assert_eq!(c.value.value, 0.0);
        let g = |v: &Vec3| m.eval(v).sqrt();
        let g3 = |v: &Vec3| 3.0 * m.eval(v).sqrt();
        let a = aniso_seminorm(&g, 2, &dom, &params, &spec).unwrap();
        let b = aniso_seminorm(&g3, 2, &dom, &params, &spec).unwrap();
        assert!(a.value.value > 0.0);
        assert_relative_eq!(b.value.value, 9.0 * a.value.value, max_relative = 1e-10);
    }

    #[test]
    fn seminorm_self_convergence() {
        let params = KineticParams::new(2, -1.0, 0.4).unwrap();
        let m = Density::maxwellian(2, Vec3::zeros(), 1.0, 1.0).unwrap();
        let opts = SeminormOptions::default();
        let lo = sqrt_seminorm(&m, &params, &QuadratureSpec::fast(), &opts).unwrap();
        let hi = sqrt_seminorm(&m, &params, &QuadratureSpec::default(), &opts).unwrap();
        let rel = (lo.value.value - hi.value.value).abs() / hi.value.value;
        assert!(rel < 0.02, "{lo:?} {hi:?}");
        assert!(hi.value.error < 0.02 * hi.value.value);
    }

    #[test]
    fn seminorm_detects_rough_data() {
        let spec = QuadratureSpec::fast();
        let params = KineticParams::new(2, -1.0, 0.6).unwrap();
        // Weierstrass-type profile, Holder of order 0.2 < s down to scale 2^-24.
        let rough = |v: &Vec3| {
            let w: f64 = (0..24).map(|k| 2f64.powf(-0.2 * k as f64) * (2f64.powi(k) * v.x).cos()).sum();
            w * (-v.norm_squared()).exp()
        };
        let dom = Support {
            center: Vec3::zeros(),
            radius: 4.0,
            core: 1.0,
            heavy: false,
        };
        assert!(matches!(
            aniso_seminorm(&rough, 2, &dom, &params, &spec),
            Err(Error::Divergent(_))
        ));
    }
}
