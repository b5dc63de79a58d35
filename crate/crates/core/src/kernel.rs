//! Collision kernel B = Phi * b, the bounded minorant psi, exponent algebra and
//! the cancellation constant.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{adaptive, Estimate};
use crate::Vec3;

/// Dimension, potential exponent gamma, angular singularity s and kernel constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KineticParams {
    pub d: usize,
    pub gamma: f64,
    pub s: f64,
    pub c_phi: f64,
    pub c_b: f64,
}

/// Which kinetic factor enters a kernel or functional.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    #[default]
    Full,
    Psi,
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" | "phi" => Ok(Variant::Full),
            "psi" => Ok(Variant::Psi),
            other => Err(Error::invalid("variant", format!("expected full or psi, got {other}"))),
        }
    }
}

impl KineticParams {
    /// Parameters with c_phi = c_b = 1.
    pub fn new(d: usize, gamma: f64, s: f64) -> Result<Self> {
        Self::with_constants(d, gamma, s, 1.0, 1.0)
    }

    pub fn with_constants(d: usize, gamma: f64, s: f64, c_phi: f64, c_b: f64) -> Result<Self> {
        let p = KineticParams {
            d,
            gamma,
            s,
            c_phi,
            c_b,
        };
        p.validate()?;
        Ok(p)
    }

    /// The boundary gamma = -d is admitted: every functional used here stays finite
    /// there for smooth densities, and C_b vanishes exactly.
    pub fn validate(&self) -> Result<()> {
        if self.d != 2 && self.d != 3 {
            return Err(Error::invalid("d", format!("must be 2 or 3, got {}", self.d)));
        }
        let d = self.d as f64;
        if !(self.gamma >= -d && self.gamma <= 2.0) {
            return Err(Error::invalid(
                "gamma",
                format!("must lie in [-{d}, 2], got {}", self.gamma),
            ));
        }
        if !(self.s > 0.0 && self.s < 1.0) {
            return Err(Error::invalid("s", format!("must lie in (0, 1), got {}", self.s)));
        }
        if !(self.c_phi >= 1.0 && self.c_phi.is_finite()) {
            return Err(Error::invalid("c_phi", format!("must be >= 1, got {}", self.c_phi)));
        }
        if !(self.c_b > 0.0 && self.c_b.is_finite()) {
            return Err(Error::invalid("c_b", format!("must be positive, got {}", self.c_b)));
        }
        Ok(())
    }

    pub fn dim(&self) -> f64 {
        self.d as f64
    }

    /// c_phi * rho^gamma without the rho = 0 check.
    #[inline]
    pub fn phi(&self, rho: f64) -> f64 {
        if self.gamma == 0.0 {
            self.c_phi
        } else {
            self.c_phi * rho.powf(self.gamma)
        }
    }

    #[inline]
    pub fn psi(&self, rho: f64) -> f64 {
        if self.gamma < 0.0 {
            self.phi(rho).min(2.0 * self.c_phi)
        } else {
            self.phi(rho)
        }
    }

    #[inline]
    pub fn factor(&self, variant: Variant, rho: f64) -> f64 {
        match variant {
            Variant::Full => self.phi(rho),
            Variant::Psi => self.psi(rho),
        }
    }

    /// sin(theta)^{d-2} b(theta) = theta^{-1-2s} on (0, pi/2], zero beyond.
    #[inline]
    pub fn angular_weight(&self, theta: f64) -> f64 {
        if theta > PI / 2.0 {
            0.0
        } else {
            theta.powf(-1.0 - 2.0 * self.s)
        }
    }

    /// |S^{d-2}|: 2 for d = 2, 2 pi for d = 3.
    pub fn sub_sphere_area(&self) -> f64 {
        if self.d == 2 {
            2.0
        } else {
            2.0 * PI
        }
    }

    /// |S^{d-1}|.
    pub fn sphere_area(&self) -> f64 {
        if self.d == 2 {
            2.0 * PI
        } else {
            4.0 * PI
        }
    }

    /// Relative speed where psi switches from the cap 2 c_phi to Phi (gamma < 0 only).
    pub fn psi_kink(&self) -> Option<f64> {
        (self.gamma < 0.0).then(|| 2f64.powf(1.0 / self.gamma))
    }

    /// Angular measure of deviations in [theta0, pi/2]: int b d sigma.
    pub fn grazing_measure(&self, theta0: f64) -> f64 {
        let s2 = 2.0 * self.s;
        self.sub_sphere_area() * (theta0.powf(-s2) - (PI / 2.0).powf(-s2)) / s2
    }
}

/// b(theta) of the representative kernel (c_b = 1): theta^{-1-2s} / sin(theta)^{d-2}.
pub fn angular_b(theta: f64, params: &KineticParams) -> Result<f64> {
    if !(theta > 0.0 && theta <= PI) {
        return Err(Error::invalid("theta", format!("must lie in (0, pi], got {theta}")));
    }
    if theta > PI / 2.0 {
        return Ok(0.0);
    }
    let w = params.angular_weight(theta);
    Ok(if params.d == 2 { w } else { w / theta.sin() })
}

pub fn kinetic_phi(rho: f64, params: &KineticParams) -> Result<f64> {
    if rho < 0.0 {
        return Err(Error::invalid("rho", "must be nonnegative"));
    }
    if rho == 0.0 && params.gamma < 0.0 {
        return Err(Error::KineticSingularity {
            gamma: params.gamma,
        });
    }
    Ok(params.phi(rho))
}

pub fn kinetic_psi(rho: f64, params: &KineticParams) -> f64 {
    params.psi(rho.max(0.0))
}

/// The Lebesgue exponent p and weight exponent q of the main estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentPair {
    pub p: f64,
    pub q: f64,
}

pub fn exponents(params: &KineticParams) -> ExponentPair {
    let d = params.dim();
    let s = params.s;
    ExponentPair {
        p: d / (d - 2.0 * s),
        q: 2.0 * s / d - params.gamma - 2.0 * s,
    }
}

/// int_a^b theta^{-1-2s} (cos(theta/2)^{-k} - 1) dtheta.
///
/// The piece below `SERIES_CUT` uses the two-term expansion of cos^{-k}, which keeps
/// the integral accurate even as s approaches 1 and the integrand nears theta^{-1}.
pub(crate) fn reduced_integral(k: f64, s: f64, a: f64, b: f64, tol: f64) -> Result<Estimate> {
    const SERIES_CUT: f64 = 0.02;
    if k == 0.0 || b <= a {
        return Ok(Estimate::default());
    }
    let c2 = k / 8.0;
    let c4 = (k / 12.0 + k * k / 8.0) / 16.0;
    let e2 = 2.0 - 2.0 * s;
    let e4 = 4.0 - 2.0 * s;
    let e6 = 6.0 - 2.0 * s;
    let mut total = Estimate::default();
    if a < SERIES_CUT {
        let hi = b.min(SERIES_CUT);
        let prim = |x: f64| c2 * x.powf(e2) / e2 + c4 * x.powf(e4) / e4;
        let c6 = (k.abs() / 45.0 + k * k / 24.0 + k.abs().powi(3) / 48.0) / 64.0;
        let rem = 2.0 * c6 * (hi.powf(e6) - a.powf(e6)) / e6;
        total = total + Estimate::new(prim(hi) - prim(a), rem);
    }
    let lo = a.max(SERIES_CUT);
    if lo < b {
        let f = |t: f64| t.powf(-1.0 - 2.0 * s) * cos_half_pow_m1(t, k);
        total = total + adaptive(&f, lo, b, tol)?;
    }
    Ok(total)
}

/// cos(theta/2)^{-k} - 1 without cancellation at small theta.
#[inline]
pub(crate) fn cos_half_pow_m1(theta: f64, k: f64) -> f64 {
    let q = (0.25 * theta).sin();
    (-k * (-2.0 * q * q).ln_1p()).exp_m1()
}

/// C_b = |S^{d-2}| int_0^{pi/2} sin^{d-2} b (cos(theta/2)^{-(d+gamma)} - 1) dtheta.
pub fn cancellation_constant(params: &KineticParams, tol: f64) -> Result<Estimate> {
    params.validate()?;
    if !(tol > 0.0) {
        return Err(Error::invalid("tol", "must be positive"));
    }
    let area = params.sub_sphere_area();
    let k = params.dim() + params.gamma;
    Ok(reduced_integral(k, params.s, 0.0, PI / 2.0, tol / area)?.scale(area))
}

/// The reduced kernel S(rho) of the cancellation lemma applied to psi b:
///
/// int f(v*) (f(v') - f(v)) psi b dsigma dv = int f f* S(|v - v*|).
///
/// S equals C_b psi wherever psi = Phi along the whole reduction; near the diagonal
/// (gamma < 0) the cap of psi makes it strictly larger.
#[derive(Debug, Clone)]
pub struct CancellationProfile {
    params: KineticParams,
    c_b: Estimate,
    /// J(d; 0, pi/2): the plateau integral for rho below the kink.
    plateau: Estimate,
    tol: f64,
}

impl CancellationProfile {
    pub fn new(params: &KineticParams, tol: f64) -> Result<Self> {
        let c_b = cancellation_constant(params, tol)?;
        let plateau = reduced_integral(params.dim(), params.s, 0.0, PI / 2.0, tol)?;
        Ok(CancellationProfile {
            params: *params,
            c_b,
            plateau,
            tol,
        })
    }

    pub fn c_b(&self) -> Estimate {
        self.c_b
    }

    /// S(rho) with an absolute error estimate.
    pub fn eval(&self, rho: f64) -> Result<Estimate> {
        let p = &self.params;
        let c = p.c_phi;
        let area = p.sub_sphere_area();
        let kink = match p.psi_kink() {
            Some(k) if rho < k => k,
            _ => {
                if rho == 0.0 {
                    return Ok(if p.gamma > 0.0 {
                        Estimate::default()
                    } else {
                        self.c_b.scale(c)
                    });
                }
                return Ok(self.c_b.scale(p.phi(rho)));
            }
        };
        let theta_k = 2.0 * (rho / kink).acos();
        if theta_k >= PI / 2.0 {
            return Ok(self.plateau.scale(2.0 * c * area));
        }
        let s2 = 2.0 * p.s;
        let capped = reduced_integral(p.dim(), p.s, 0.0, theta_k, self.tol)?.scale(2.0);
        let uncapped = reduced_integral(p.dim() + p.gamma, p.s, theta_k, PI / 2.0, self.tol)?
            .scale(rho.powf(p.gamma));
        let constant = (rho.powf(p.gamma) - 2.0) * (theta_k.powf(-s2) - (PI / 2.0).powf(-s2)) / s2;
        Ok((capped + uncapped + Estimate::exact(constant)).scale(c * area))
    }

    /// Largest value of S, attained on the plateau near the diagonal for gamma < 0.
    pub fn sup(&self) -> Result<f64> {
        match self.params.psi_kink() {
            None => Ok(f64::INFINITY),
            Some(kink) => {
                let mut best: f64 = 0.0;
                for i in 0..=64 {
                    best = best.max(self.eval(kink * i as f64 / 64.0)?.upper());
                }
                Ok(best)
            }
        }
    }
}

/// Pre- and post-collisional velocities for one (v, v*, sigma).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollisionGeometry {
    pub v: Vec3,
    pub v_star: Vec3,
    pub sigma: Vec3,
    pub v_prime: Vec3,
    pub v_star_prime: Vec3,
    /// Angle between sigma and v* - v; theta = 0 sends v' to v*.
    pub theta: f64,
    /// Angle between sigma and v - v* (= pi - theta); grazing collisions have small deviation.
    pub deviation: f64,
    /// |v - v*|.
    pub r: f64,
    /// w = v*' - v, orthogonal to v' - v with |w| = r cos(deviation / 2).
    pub w: Vec3,
}

pub fn collision_geometry(v: &Vec3, v_star: &Vec3, sigma: &Vec3) -> Result<CollisionGeometry> {
    if (sigma.norm() - 1.0).abs() > 1e-12 {
        return Err(Error::invalid("sigma", format!("|sigma| = {} is not 1", sigma.norm())));
    }
    let rel = v_star - v;
    let r = rel.norm();
    if r == 0.0 {
        return Err(Error::DegeneratePair);
    }
    let mid = 0.5 * (v + v_star);
    let v_prime = mid + 0.5 * r * sigma;
    let v_star_prime = mid - 0.5 * r * sigma;
    let cos = (sigma.dot(&rel) / r).clamp(-1.0, 1.0);
    let theta = cos.acos();
    Ok(CollisionGeometry {
        v: *v,
        v_star: *v_star,
        sigma: *sigma,
        v_prime,
        v_star_prime,
        theta,
        deviation: PI - theta,
        r,
        w: v_star_prime - v,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn params(d: usize, gamma: f64, s: f64) -> KineticParams {
        KineticParams::new(d, gamma, s).unwrap()
    }

    #[test]
    fn angular_b_examples() {
        let p = params(2, -1.0, 0.5);
        assert_relative_eq!(angular_b(PI / 2.0, &p).unwrap(), 0.405284734569351, max_relative = 1e-12);
        assert_eq!(angular_b(3.0, &p).unwrap(), 0.0);
        assert!(angular_b(0.0, &p).is_err());
        let p3 = params(3, -1.0, 0.3);
        for i in 1..100 {
            let t = PI / 2.0 * i as f64 / 100.0;
            let lhs = t.sin() * angular_b(t, &p3).unwrap();
            assert_relative_eq!(lhs, t.powf(-1.6), max_relative = 1e-13);
        }
    }

    #[test]
    fn kinetic_factor_examples() {
        let p = params(3, -1.0, 0.5);
        assert_eq!(kinetic_phi(2.0, &p).unwrap(), 0.5);
        assert_eq!(kinetic_phi(1.0, &params(2, 1.3, 0.2)).unwrap(), 1.0);
        assert_eq!(kinetic_phi(0.0, &params(2, 0.5, 0.2)).unwrap(), 0.0);
        assert!(matches!(
            kinetic_phi(0.0, &p),
            Err(Error::KineticSingularity { .. })
        ));
        assert_eq!(kinetic_psi(0.5, &p), 2.0);
        assert_eq!(kinetic_psi(2.0, &p), 0.5);
        assert_eq!(kinetic_psi(0.5, &params(3, 1.0, 0.5)), 0.5);
    }

    #[test]
    fn psi_never_exceeds_phi() {
        for gamma in [-3.0, -2.0, -0.5, 0.0, 1.0] {
            let p = params(3, gamma, 0.4);
            for i in 0..=120 {
                let rho = 10f64.powf(-6.0 + 0.1 * i as f64);
                assert!(p.psi(rho) <= p.phi(rho) * (1.0 + 1e-15));
            }
        }
    }

    #[test]
    fn exponent_examples() {
        let e = exponents(&params(2, 0.0, 0.5));
        assert_eq!((e.p, e.q), (2.0, -0.5));
        let e = exponents(&params(3, -2.0, 0.5));
        assert_relative_eq!(e.p, 1.5, max_relative = 1e-15);
        assert_relative_eq!(e.q, 4.0 / 3.0, max_relative = 1e-15);
    }

    #[test]
    fn parameters_are_validated() {
        assert!(KineticParams::new(4, 0.0, 0.5).is_err());
        assert!(KineticParams::new(2, -2.5, 0.5).is_err());
        assert!(KineticParams::new(2, 2.5, 0.5).is_err());
        assert!(KineticParams::new(2, 0.0, 1.0).is_err());
        assert!(KineticParams::with_constants(2, 0.0, 0.5, 0.5, 1.0).is_err());
        assert!(KineticParams::new(2, -2.0, 0.5).is_ok());
    }

    /// Graded trapezoid oracle: theta = (pi/2) x^m with m chosen so the transformed
    /// integrand vanishes linearly at x = 0.
    fn trapezoid_c_b(p: &KineticParams, n: usize) -> f64 {
        let m = 2.0 / (2.0 - 2.0 * p.s);
        let k = p.dim() + p.gamma;
        let g = |x: f64| {
            if x == 0.0 {
                return 0.0;
            }
            let t = PI / 2.0 * x.powf(m);
            let jac = PI / 2.0 * m * x.powf(m - 1.0);
            t.powf(-1.0 - 2.0 * p.s) * cos_half_pow_m1(t, k) * jac
        };
        let h = 1.0 / n as f64;
        let mut sum = 0.5 * (g(0.0) + g(1.0));
        for i in 1..n {
            sum += g(i as f64 * h);
        }
        p.sub_sphere_area() * sum * h
    }

    #[test]
    fn cancellation_constant_matches_trapezoid_oracle() {
        let p = params(2, -1.0, 0.3);
        let c = cancellation_constant(&p, 1e-10).unwrap();
        let oracle = trapezoid_c_b(&p, 1_000_000);
        assert!(c.error <= 1e-8);
        assert!((c.value - oracle).abs() <= 1e-8, "{} vs {oracle}", c.value);
        let p3 = params(3, -2.5, 0.85);
        let c3 = cancellation_constant(&p3, 1e-10).unwrap();
        let o3 = trapezoid_c_b(&p3, 1_000_000);
        assert!((c3.value - o3).abs() <= 1e-7, "{c3:?} vs {o3}");
    }

    #[test]
    fn cancellation_constant_limits_and_monotonicity() {
        let zero = cancellation_constant(&params(2, -2.0, 0.4), 1e-10).unwrap();
        assert_eq!(zero.value, 0.0);
        let mut last = f64::NEG_INFINITY;
        for i in 0..12 {
            let gamma = -1.9 + 0.3 * i as f64;
            let c = cancellation_constant(&params(2, gamma, 0.6), 1e-10).unwrap().value;
            assert!(c > last);
            last = c;
        }
    }

    #[test]
    fn halving_tolerance_stays_within_previous_bound() {
        let p = params(3, -1.5, 0.7);
        let mut prev = cancellation_constant(&p, 1e-4).unwrap();
        for k in 1..8 {
            let next = cancellation_constant(&p, 1e-4 / 2f64.powi(k)).unwrap();
            assert!((next.value - prev.value).abs() <= prev.error.max(1e-15));
            prev = next;
        }
    }

    #[test]
    fn profile_reduces_to_c_b_phi_above_kink() {
        let p = params(2, -1.0, 0.4);
        let prof = CancellationProfile::new(&p, 1e-11).unwrap();
        let c_b = prof.c_b().value;
        for rho in [0.5, 0.75, 1.0, 3.0] {
            assert_relative_eq!(prof.eval(rho).unwrap().value, c_b * p.phi(rho), max_relative = 1e-12);
        }
    }

    #[test]
    fn profile_matches_direct_quadrature_below_kink() {
        for (gamma, s) in [(-1.0, 0.4), (-2.0, 0.3), (-0.5, 0.8)] {
            let p = params(2, gamma, s);
            let prof = CancellationProfile::new(&p, 1e-11).unwrap();
            let kink = p.psi_kink().unwrap();
            for rho in [0.1 * kink, 0.4 * kink, 0.66 * kink, 0.9 * kink] {
                let integrand = |t: f64| {
                    let c = (0.5 * t).cos();
                    let (inner, outer) = (p.psi(rho / c), p.psi(rho));
                    let bracket = if inner == outer {
                        outer * cos_half_pow_m1(t, 2.0)
                    } else {
                        c.powf(-2.0) * inner - outer
                    };
                    t.powf(-1.0 - 2.0 * s) * bracket
                };
                // theta = u^5 removes the endpoint singularity.
                let smooth = |u: f64| integrand(u.powi(5)) * 5.0 * u.powi(4);
                let split = (2.0 * (rho / kink).acos()).min(PI / 2.0).powf(0.2);
                let direct = 2.0
                    * (adaptive(&smooth, 0.0, split, 1e-12).unwrap().value
                        + adaptive(&smooth, split, (PI / 2.0).powf(0.2), 1e-12).unwrap().value);
                let got = prof.eval(rho).unwrap();
                assert!((got.value - direct).abs() < 1e-8 * direct.abs().max(1.0), "{rho}: {got:?} vs {direct}");
                assert!(got.value >= prof.c_b().value * p.psi(rho) - 1e-10);
            }
            let sup = prof.sup().unwrap();
            assert!(sup >= prof.eval(0.0).unwrap().value);
        }
    }

    #[test]
    fn collision_geometry_examples() {
        let v = Vec3::new(1.0, 0.0, 0.0);
        let vs = Vec3::new(-1.0, 0.0, 0.0);
        let g = collision_geometry(&v, &vs, &Vec3::new(0.0, 1.0, 0.0)).unwrap();
        assert_relative_eq!(g.v_prime, Vec3::new(0.0, 1.0, 0.0), epsilon = 1e-15);
        assert_relative_eq!(g.v_star_prime, Vec3::new(0.0, -1.0, 0.0), epsilon = 1e-15);
        assert_relative_eq!(g.theta, PI / 2.0, epsilon = 1e-15);

        let aligned = collision_geometry(&v, &vs, &Vec3::new(-1.0, 0.0, 0.0)).unwrap();
        assert_relative_eq!(aligned.v_prime, vs, epsilon = 1e-15);
        assert_relative_eq!(aligned.v_star_prime, v, epsilon = 1e-15);
        assert_eq!(aligned.theta, 0.0);

        assert!(matches!(
            collision_geometry(&v, &v, &Vec3::new(0.0, 1.0, 0.0)),
            Err(Error::DegeneratePair)
        ));
        assert!(collision_geometry(&v, &vs, &Vec3::new(0.0, 1.1, 0.0)).is_err());
    }

    #[test]
    fn w_parametrization_uses_the_deviation_angle() {
        let v = Vec3::new(0.3, -1.0, 0.2);
        let vs = Vec3::new(-0.7, 0.5, 1.1);
        for k in 0..20 {
            let a = 0.3 * k as f64;
            let sigma = Vec3::new(a.cos() * 0.6, a.sin() * 0.6, 0.8);
            let g = collision_geometry(&v, &vs, &sigma).unwrap();
            assert_relative_eq!((0.5 * g.deviation).cos(), g.w.norm() / g.r, epsilon = 1e-12);
            assert!(g.w.dot(&(g.v_prime - g.v)).abs() < 1e-12);
            assert_relative_eq!(g.v_star, g.v_prime + g.w, epsilon = 1e-14);
        }
    }
}
