//! Entropy dissipation, the weak form of Q(f, f), the coercive quadratic form and the
//! cancellation term.
//!
//! D(f) = -<Q(f, f), ln f> = 1/4 int (F - F') ln(F / F') B with F = f f*, F' = f' f*'.

use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::{Density, Field, VelocityGrid, DENSITY_FLOOR};
use crate::error::{Error, Result};
use crate::kernel::{CancellationProfile, KineticParams, Variant};
use crate::kf_kernel::KernelEvaluator;
use crate::quadrature::{composite, directions, geometric_breaks, Estimate, QuadratureSpec};
use crate::sphere::{self, Point, Skip, Term};
use crate::Vec3;

/// Tolerance for the one-dimensional angular integrals behind C_b and S_psi.
pub const PROFILE_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Deterministic,
    MonteCarlo,
}

impl Method {
    /// Tensor grids in d = 2, sampling in d = 3.
    pub fn default_for(d: usize) -> Method {
        if d == 2 {
            Method::Deterministic
        } else {
            Method::MonteCarlo
        }
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "deterministic" | "det" => Ok(Method::Deterministic),
            "monte_carlo" | "mc" => Ok(Method::MonteCarlo),
            other => Err(Error::invalid("method", format!("expected deterministic or mc, got {other}"))),
        }
    }
}

/// Double integral against K^psi_f, or the equivalent triple integral over the sphere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    Kernel,
    Sphere,
}

impl FromStr for Route {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kernel" => Ok(Route::Kernel),
            "sphere" => Ok(Route::Sphere),
            other => Err(Error::invalid("route", format!("expected kernel or sphere, got {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FunctionalResult {
    pub value: f64,
    pub abs_error_estimate: f64,
    pub method: Method,
    pub nodes_or_samples: usize,
    pub params_echo: KineticParams,
}

impl FunctionalResult {
    fn new(e: Estimate, method: Method, nodes: usize, params: &KineticParams) -> Self {
        FunctionalResult {
            value: e.value,
            abs_error_estimate: e.error,
            method,
            nodes_or_samples: nodes,
            params_echo: *params,
        }
    }

    fn zero(method: Method, params: &KineticParams) -> Self {
        Self::new(Estimate::default(), method, 0, params)
    }

    pub fn estimate(&self) -> Estimate {
        Estimate::new(self.value, self.abs_error_estimate)
    }
}

fn check(f: &Density, params: &KineticParams, spec: &QuadratureSpec) -> Result<()> {
    params.validate()?;
    spec.validate()?;
    if f.d() != params.d {
        return Err(Error::invalid("d", "density and kinetic parameters disagree on the dimension"));
    }
    Ok(())
}

/// Mass used to scale Monte Carlo estimates.
fn sampling_mass(f: &Density, spec: &QuadratureSpec) -> f64 {
    f.mass()
        .unwrap_or_else(|| VelocityGrid::for_density(f, spec, 2 * spec.velocity_nodes).integrate(|v| f.eval(v)))
}

/// Symmetric, pointwise nonnegative integrand 1/4 (F - F') ln(F/F') times the kinetic factor.
fn dissipation_term(p: &Point, factor: f64) -> Term {
    let big_f = p.f[0] * p.f[1];
    let big_fp = p.f[2] * p.f[3];
    let dl = p.log_ratio();
    let df = big_f - big_fp;
    let logs = (p.ln[0] + p.ln[1]).abs() + (p.ln[2] + p.ln[3]).abs() + 1.0;
    let sum = big_f + big_fp;
    let round = 4.0 * (sum * dl.abs() + df.abs() * logs) + 16.0 * f64::EPSILON * sum * logs * logs;
    Term::new(0.25 * factor * df * dl, 0.25 * factor * round)
}

/// f*(sqrt f' - sqrt f)^2 psi.
fn quadratic_term(p: &Point, psi: f64) -> Term {
    let (a, b) = (p.f[2].sqrt(), p.f[0].sqrt());
    let diff = a - b;
    let value = p.f[1] * diff * diff * psi;
    Term::new(value, 4.0 * p.f[1] * psi * (a + b) * (diff.abs() + (a + b) * 4.0 * f64::EPSILON))
}

/// f*(f' - f) psi: the integrand of I2 before the cancellation lemma.
fn cancellation_direct_term(p: &Point, psi: f64) -> Term {
    let value = p.f[1] * (p.f[2] - p.f[0]) * psi;
    let logs = p.ln[0].abs() + p.ln[2].abs() + 1.0;
    Term::new(value, 4.0 * p.f[1] * psi * (p.f[2] + p.f[0]) * logs)
}

pub fn entropy_dissipation(
    f: &Density,
    params: &KineticParams,
    spec: &QuadratureSpec,
    variant: Variant,
) -> Result<FunctionalResult> {
    entropy_dissipation_with(f, params, spec, variant, Method::default_for(params.d))
}

pub fn entropy_dissipation_with(
    f: &Density,
    params: &KineticParams,
    spec: &QuadratureSpec,
    variant: Variant,
    method: Method,
) -> Result<FunctionalResult> {
    check(f, params, spec)?;
    if f.is_zero() {
        return Ok(FunctionalResult::zero(method, params));
    }
    let (est, nodes) = match method {
        Method::Deterministic => {
            let out = sphere::integrate(f, params, spec, Skip::Pair, |p: &Point| {
                [dissipation_term(p, p.factor(variant))]
            })?;
            (out.values[0], out.nodes)
        }
        Method::MonteCarlo => {
            let mass = sampling_mass(f, spec);
            // One-sided form 1/2 int F ln(F/F') B, divided by the sampling weight F.
            let out = sphere::monte_carlo(f, params, spec, mass, |p: &Point| {
                [0.5 * p.factor(variant) * p.log_ratio()]
            })?;
            (out.values[0], out.nodes)
        }
    };
    if est.value < -est.error {
        return Err(Error::QuadratureInconsistency {
            value: est.value,
            error: est.error,
        });
    }
    Ok(FunctionalResult::new(est, method, nodes, params))
}

/// <Q(f, f), phi> = 1/2 int f f* (phi' + phi*' - phi - phi*) B.
pub fn weak_form<P: Field + ?Sized>(
    f: &Density,
    phi: &P,
    params: &KineticParams,
    spec: &QuadratureSpec,
) -> Result<FunctionalResult> {
    weak_form_with(f, phi, params, spec, Method::default_for(params.d))
}

pub fn weak_form_with<P: Field + ?Sized>(
    f: &Density,
    phi: &P,
    params: &KineticParams,
    spec: &QuadratureSpec,
    method: Method,
) -> Result<FunctionalResult> {
    check(f, params, spec)?;
    if f.is_zero() {
        return Ok(FunctionalResult::zero(method, params));
    }
    let (est, nodes) = match method {
        Method::Deterministic => {
            let out = sphere::integrate(f, params, spec, Skip::Pair, |p: &Point| {
                let ph = [phi.value(&p.x[0]), phi.value(&p.x[1]), phi.value(&p.x[2]), phi.value(&p.x[3])];
                let delta = (ph[2] - ph[0]) + (ph[3] - ph[1]);
                let weight = 0.5 * p.f[0] * p.f[1] * p.phi;
                let scale: f64 = ph.iter().map(|x| x.abs()).sum();
                let logs = p.ln[0].abs() + p.ln[1].abs() + 2.0;
                [Term::new(weight * delta, weight * (4.0 * scale + delta.abs() * logs))]
            })?;
            (out.values[0], out.nodes)
        }
        Method::MonteCarlo => {
            let mass = sampling_mass(f, spec);
            let out = sphere::monte_carlo(f, params, spec, mass, |p: &Point| {
                let delta = (phi.value(&p.x[2]) - phi.value(&p.x[0])) + (phi.value(&p.x[3]) - phi.value(&p.x[1]));
                [0.5 * p.phi * delta]
            })?;
            (out.values[0], out.nodes)
        }
    };
    Ok(FunctionalResult::new(est, method, nodes, params))
}

/// Gamma(g) = int int (sqrt g(v') - sqrt g(v))^2 K^psi_f(v, v') dv' dv.
pub fn quadratic_form<G: Field + ?Sized>(
    g: &G,
    f: &Density,
    params: &KineticParams,
    spec: &QuadratureSpec,
    route: Route,
) -> Result<FunctionalResult> {
    check(f, params, spec)?;
    if f.is_zero() {
        return Ok(FunctionalResult::zero(Method::Deterministic, params));
    }
    match route {
        Route::Sphere => {
            if params.d == 3 {
                let mass = sampling_mass(f, spec);
                let out = sphere::monte_carlo(f, params, spec, mass, |p: &Point| {
                    if p.f[0] <= DENSITY_FLOOR {
                        return [0.0];
                    }
                    let diff = g.value(&p.x[2]).max(0.0).sqrt() - g.value(&p.x[0]).max(0.0).sqrt();
                    [p.psi * diff * diff / p.f[0]]
                })?;
                return Ok(FunctionalResult::new(out.values[0], Method::MonteCarlo, out.nodes, params));
            }
            let out = sphere::integrate(f, params, spec, Skip::Never, |p: &Point| {
                let (a, b) = (g.value(&p.x[2]).max(0.0).sqrt(), g.value(&p.x[0]).max(0.0).sqrt());
                let psi = p.psi;
                let diff = a - b;
                [Term::new(p.f[1] * diff * diff * psi, 4.0 * p.f[1] * psi * (a + b) * diff.abs())]
            })?;
            Ok(FunctionalResult::new(out.values[0], Method::Deterministic, out.nodes, params))
        }
        Route::Kernel => {
            let ev = KernelEvaluator::new(f.clone(), *params, spec.clone(), Variant::Psi)?;
            let fine = kernel_route_pass(g, f, &ev, spec);
            let coarse = kernel_route_pass(g, f, &ev, &spec.coarse());
            let sup = f.support(spec);
            let trunc = f.tail_fraction(sup.radius, spec);
            let value = fine.0 + fine.1;
            let error = (value - coarse.0 - coarse.1).abs() + fine.1.abs() + 2.0 * trunc * value.abs();
            Ok(FunctionalResult::new(
                Estimate::new(value, error),
                Method::Deterministic,
                fine.2 + coarse.2,
                params,
            ))
        }
    }
}

/// (value, extrapolated contribution of |v' - v| below the innermost cell, nodes).
fn kernel_route_pass<G: Field + ?Sized>(
    g: &G,
    f: &Density,
    ev: &KernelEvaluator,
    spec: &QuadratureSpec,
) -> (f64, f64, usize) {
    let params = ev.params();
    let d = params.d;
    let sup = f.support(spec);
    let core = sup.core;
    let grid = VelocityGrid::new(d, &sup, spec.velocity_nodes);
    let lmin = spec.graded_min * core;
    let mut breaks = geometric_breaks(lmin, core, spec.grading_ratio);
    let max = 2.0 * sup.radius;
    let m = ((max - core) / (spec.radial_panel * core)).ceil().max(1.0) as usize;
    breaks.extend((1..=m).map(|i| core + (max - core) * i as f64 / m as f64));
    let lengths = composite(&breaks, spec.radial_order.max(spec.grading_order));
    let first = lengths[0].0;
    let s2 = 2.0 * params.s;
    // Near the diagonal the integrand in |v' - v| behaves like l^{1-2s}.
    let tail_factor = lmin.powf(2.0 - s2) / (2.0 - s2) / first.powf(1.0 - s2);
    let dirs = directions(d, spec.direction_nodes);
    let gmax = grid.nodes.iter().map(|(v, _)| g.value(v)).fold(0.0, f64::max);
    let negligible = 1e-16 * gmax;
    let parts: Vec<(f64, f64, usize)> = grid
        .nodes
        .par_iter()
        .map(|(v, wv)| {
            let gv = g.value(v).max(0.0).sqrt();
            let mut acc = (0.0, 0.0, 0usize);
            for (e, we) in &dirs {
                for (j, &(ell, wl)) in lengths.iter().enumerate() {
                    let vp = v + ell * e;
                    let diff = g.value(&vp).max(0.0).sqrt() - gv;
                    let inc = diff * diff;
                    if inc <= negligible {
                        continue;
                    }
                    let k = ev.value(v, &vp, spec);
                    let term = wv * we * inc * k * ell.powi(d as i32 - 1);
                    acc.0 += wl * term;
                    if j == 0 {
                        acc.1 += term * tail_factor;
                    }
                    acc.2 += 1;
                }
            }
            acc
        })
        .collect();
    parts.iter().fold((0.0, 0.0, 0), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2))
}

/// I2 = int f*(f' - f) psi b, evaluated through the cancellation lemma as
/// int int f f* S_psi(|v - v*|).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CancellationTerm {
    pub result: FunctionalResult,
    pub c_b: Estimate,
    /// C_b int int f f* psi(|v - v*|), exact only where psi = Phi along the reduction.
    pub c_b_psi_form: Estimate,
    /// sup S_psi * M0^2 (gamma <= 0) or C_b c_phi (int f <v>^gamma)^2 (gamma > 0).
    pub bound: f64,
    /// 2 c_phi C_b M0^2 (gamma <= 0) or C_b c_phi (int f <v>^gamma)^2 (gamma > 0).
    pub coarse_bound: f64,
}

pub fn cancellation_term(f: &Density, params: &KineticParams, spec: &QuadratureSpec) -> Result<CancellationTerm> {
    check(f, params, spec)?;
    let profile = CancellationProfile::new(params, PROFILE_TOLERANCE)?;
    let c_b = profile.c_b();
    if f.is_zero() {
        return Ok(CancellationTerm {
            result: FunctionalResult::zero(Method::Deterministic, params),
            c_b,
            c_b_psi_form: Estimate::default(),
            bound: 0.0,
            coarse_bound: 0.0,
        });
    }
    let (value, nodes) = if params.d == 2 {
        sphere::pair_integrate(f, params, spec, |rho| profile.eval(rho))?
    } else {
        pair_monte_carlo(f, spec, |rho| profile.eval(rho))?
    };
    let (psi_form, _) = if params.d == 2 {
        sphere::pair_integrate(f, params, spec, |rho| Ok(c_b.scale(params.psi(rho))))?
    } else {
        pair_monte_carlo(f, spec, |rho| Ok(c_b.scale(params.psi(rho))))?
    };
    let state = crate::distributions::macro_state_with_gamma(f, spec, params.gamma)?;
    let m0 = state.mass;
    let (bound, coarse_bound) = if params.gamma <= 0.0 {
        (
            profile.sup()? * m0 * m0,
            2.0 * params.c_phi * c_b.upper() * m0 * m0,
        )
    } else {
        let b = c_b.upper() * params.c_phi * state.gamma_moment.powi(2);
        (b, b)
    };
    let method = if params.d == 2 {
        Method::Deterministic
    } else {
        Method::MonteCarlo
    };
    Ok(CancellationTerm {
        result: FunctionalResult::new(value, method, nodes, params),
        c_b,
        c_b_psi_form: psi_form,
        bound,
        coarse_bound,
    })
}

fn pair_monte_carlo<H>(f: &Density, spec: &QuadratureSpec, h: H) -> Result<(Estimate, usize)>
where
    H: Fn(f64) -> Result<Estimate>,
{
    use rand::SeedableRng;
    let mass = sampling_mass(f, spec);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.mc_samples.max(2);
    let mut sum = 0.0;
    let mut sq = 0.0;
    let mut err = 0.0;
    for _ in 0..n {
        let v = f.sample_one(&mut rng)?;
        let vs = f.sample_one(&mut rng)?;
        let e = h((v - vs).norm())?;
        sum += e.value;
        sq += e.value * e.value;
        err += e.error;
    }
    let nf = n as f64;
    let mean = sum / nf;
    let var = ((sq / nf - mean * mean) * nf / (nf - 1.0)).max(0.0);
    let m2 = mass * mass;
    Ok((Estimate::new(m2 * mean, m2 * ((var / nf).sqrt() + err / nf)), n))
}

/// Everything the dissipation inequalities need from one sweep over collisions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DissipationBundle {
    pub d_full: FunctionalResult,
    pub d_psi: FunctionalResult,
    /// Gamma(sqrt f) in its sphere form I1.
    pub gamma_sqrt_f: FunctionalResult,
    /// I2 from its defining triple integral (before the cancellation lemma).
    pub i2_direct: FunctionalResult,
}

pub fn dissipation_bundle(f: &Density, params: &KineticParams, spec: &QuadratureSpec) -> Result<DissipationBundle> {
    check(f, params, spec)?;
    let method = Method::default_for(params.d);
    if f.is_zero() {
        let z = FunctionalResult::zero(method, params);
        return Ok(DissipationBundle {
            d_full: z,
            d_psi: z,
            gamma_sqrt_f: z,
            i2_direct: z,
        });
    }
    let (values, nodes) = match method {
        Method::Deterministic => {
            let out = sphere::integrate(f, params, spec, Skip::Single, |p: &Point| {
                let psi = p.psi;
                [
                    dissipation_term(p, p.phi),
                    dissipation_term(p, psi),
                    quadratic_term(p, psi),
                    cancellation_direct_term(p, psi),
                ]
            })?;
            (out.values, out.nodes)
        }
        Method::MonteCarlo => {
            let mass = sampling_mass(f, spec);
            let out = sphere::monte_carlo(f, params, spec, mass, |p: &Point| {
                let psi = p.psi;
                let dl = p.log_ratio();
                if p.f[0] <= DENSITY_FLOOR {
                    return [0.5 * p.phi * dl, 0.5 * psi * dl, 0.0, 0.0];
                }
                let ratio = p.f[2] / p.f[0];
                let root = ratio.sqrt() - 1.0;
                [0.5 * p.phi * dl, 0.5 * psi * dl, psi * root * root, psi * (ratio - 1.0)]
            })?;
            (out.values, out.nodes)
        }
    };
    for est in values.iter().take(2) {
        if est.value < -est.error {
            return Err(Error::QuadratureInconsistency {
                value: est.value,
                error: est.error,
            });
        }
    }
    let r = |e: Estimate| FunctionalResult::new(e, method, nodes, params);
    Ok(DissipationBundle {
        d_full: r(values[0]),
        d_psi: r(values[1]),
        gamma_sqrt_f: r(values[2]),
        i2_direct: r(values[3]),
    })
}

/// D(f) - (Gamma(sqrt f) - I2(f)); nonnegative up to the combined error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lemma21Gap {
    pub gap: Estimate,
    pub dissipation: Estimate,
    pub quadratic: Estimate,
    pub cancellation: Estimate,
}

impl Lemma21Gap {
    pub fn holds(&self) -> bool {
        self.gap.value >= -self.gap.error
    }
}

pub fn lemma21_gap(f: &Density, params: &KineticParams, spec: &QuadratureSpec) -> Result<Lemma21Gap> {
    let bundle = dissipation_bundle(f, params, spec)?;
    let i2 = cancellation_term(f, params, spec)?.result.estimate();
    let d = bundle.d_full.estimate();
    let q = bundle.gamma_sqrt_f.estimate();
    Ok(Lemma21Gap {
        gap: d - (q - i2),
        dissipation: d,
        quadratic: q,
        cancellation: i2,
    })
}

/// The collision invariants 1, v_1, ..., v_d, |v|^2.
/// A named test function.
pub type Invariant = (String, Box<dyn Fn(&Vec3) -> f64 + Sync>);

pub fn collision_invariants(d: usize) -> Vec<Invariant> {
    let mut out: Vec<Invariant> = vec![("1".into(), Box::new(|_: &Vec3| 1.0))];
    for i in 0..d {
        out.push((format!("v{}", i + 1), Box::new(move |v: &Vec3| v[i])));
    }
    out.push(("|v|^2".into(), Box::new(|v: &Vec3| v.norm_squared())));
    out
}
