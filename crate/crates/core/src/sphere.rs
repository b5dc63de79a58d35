//! Collision integrals over (v, v*, sigma).
//!
//! Deterministic route: v = c + u/2, v* = c - u/2 with the center c on a tensor grid
//! and u in polar coordinates. Pre- and post-collisional pairs share the sphere
//! |u| = rho about c, so rings where f is negligible are skipped as a whole.
//! The deviation angle runs over geometric cells down to theta_min; the grazing
//! remainder is extrapolated from the innermost node assuming G(theta) ~ A theta^2.
//!
//! Monte Carlo route: v, v* ~ f / M0 with dyadic strata in the deviation angle.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::distributions::{Density, DENSITY_FLOOR};
use crate::error::{Error, Result};
use crate::kernel::{KineticParams, Variant};
use crate::quadrature::{axis_rule, composite, directions, geometric_breaks, periodic, Estimate, QuadratureSpec};
use crate::Vec3;

/// A collision configuration with f and ln f at v, v*, v', v*' (in that order).
#[derive(Debug, Clone, Copy)]
pub(crate) struct Point {
    pub x: [Vec3; 4],
    pub f: [f64; 4],
    pub ln: [f64; 4],
    /// Phi(|v - v*|) and psi(|v - v*|).
    pub phi: f64,
    pub psi: f64,
}

impl Point {
    /// ln(f f*) - ln(f' f*').
    #[inline]
    pub fn log_ratio(&self) -> f64 {
        (self.ln[0] - self.ln[2]) + (self.ln[1] - self.ln[3])
    }

    #[inline]
    pub fn factor(&self, variant: Variant) -> f64 {
        match variant {
            Variant::Full => self.phi,
            Variant::Psi => self.psi,
        }
    }
}

/// Integrand value and a bound on its rounding error in units of machine epsilon.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Term {
    pub value: f64,
    pub round: f64,
}

impl Term {
    pub fn new(value: f64, round: f64) -> Term {
        Term { value, round }
    }
}

/// When a (center, |u|) ring may be skipped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Skip {
    /// Integrand carries f f* or f' f*' as a factor.
    Pair,
    /// Integrand is bounded by products of f values on the ring.
    Single,
    Never,
}

/// Rings whose integrand bound falls below this fraction of (sup f)^2 are skipped.
const SKIP_RELATIVE: f64 = 1e-15;

#[derive(Debug, Clone)]
pub(crate) struct SphereOutput<const K: usize> {
    pub values: [Estimate; K],
    pub nodes: usize,
}

struct Pass<const K: usize> {
    value: [f64; K],
    round: [f64; K],
    tail: [f64; K],
    tail_spread: [f64; K],
    nodes: usize,
}

impl<const K: usize> Pass<K> {
    fn zero() -> Self {
        Pass {
            value: [0.0; K],
            round: [0.0; K],
            tail: [0.0; K],
            tail_spread: [0.0; K],
            nodes: 0,
        }
    }

    fn add(mut self, o: &Pass<K>) -> Self {
        for k in 0..K {
            self.value[k] += o.value[k];
            self.round[k] += o.round[k];
            self.tail[k] += o.tail[k];
            self.tail_spread[k] += o.tail_spread[k];
        }
        self.nodes += o.nodes;
        self
    }
}

struct Rules {
    centers: Vec<(Vec3, f64)>,
    /// (rho, weight including the polar Jacobian, theta rule, number of directions)
    radii: Vec<(f64, f64, Vec<(f64, f64)>, usize)>,
}

fn rules(f: &Density, params: &KineticParams, spec: &QuadratureSpec, grade_kink: bool) -> Rules {
    let d = params.d;
    let sup = f.support(spec);
    let core = sup.core;
    let n = spec.velocity_nodes;
    let axis = |c: f64| axis_rule(c, sup.radius, n, core, sup.heavy);
    let (xs, ys) = (axis(sup.center.x), axis(sup.center.y));
    let mut centers = Vec::new();
    if d == 2 {
        for &(x, wx) in &xs {
            for &(y, wy) in &ys {
                centers.push((Vec3::new(x, y, 0.0), wx * wy));
            }
        }
    } else {
        let zs = axis(sup.center.z);
        for &(x, wx) in &xs {
            for &(y, wy) in &ys {
                for &(z, wz) in &zs {
                    centers.push((Vec3::new(x, y, z), wx * wy * wz));
                }
            }
        }
    }

    // Relative speeds spread like sqrt(2) times the thermal speed.
    let scale = std::f64::consts::SQRT_2 * core;
    let max = 2.0 * sup.radius;
    let mut breaks = vec![0.0];
    breaks.extend(geometric_breaks(0.1 * scale, scale, spec.grading_ratio));
    let panel = spec.radial_panel * scale;
    if sup.heavy {
        breaks.extend(geometric_breaks(scale, max, 1.0 + spec.radial_panel).into_iter().skip(1));
    } else {
        let m = ((max - scale) / panel).ceil().max(1.0) as usize;
        breaks.extend((1..=m).map(|i| scale + (max - scale) * i as f64 / m as f64));
    }
    if let Some(k) = params.psi_kink() {
        breaks.push(k);
        if grade_kink {
            // The cancellation profile has a (k - rho)^{1-s} cusp below the kink.
            let lo = spec.graded_min * k;
            breaks.extend(geometric_breaks(lo, 0.5 * k, spec.grading_ratio).into_iter().map(|x| k - x));
        }
    }
    breaks.sort_by(f64::total_cmp);
    breaks.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs().max(1.0));
    let radial = composite(&breaks, spec.radial_order);

    let s2 = 2.0 * params.s;
    let cells = geometric_breaks(spec.theta_min, PI / 2.0, spec.grading_ratio);
    let radii = radial
        .into_iter()
        .map(|(rho, w)| {
            // Post-collisional points move by about rho * theta / 2.
            // Heavy tails vary on a scale comparable to |v| away from the core.
            let local = if sup.heavy { core.max(0.25 * rho) } else { core };
            let max_width = 6.0 * spec.radial_panel * local / rho;
            let mut fine = vec![cells[0]];
            for pair in cells.windows(2) {
                let m = ((pair[1] - pair[0]) / max_width).ceil().max(1.0) as usize;
                fine.extend((1..=m).map(|i| pair[0] + (pair[1] - pair[0]) * i as f64 / m as f64));
            }
            let theta: Vec<(f64, f64)> = composite(&fine, spec.grading_order)
                .into_iter()
                .map(|(t, wt)| (t, wt * t.powf(-1.0 - s2)))
                .collect();
            let dirs = if d == 2 {
                let want = (6.0 * rho / local).ceil() as usize;
                let n = spec.direction_nodes.max(want);
                n + n % 2
            } else {
                spec.direction_nodes
            };
            let jac = if d == 2 { rho } else { rho * rho };
            (rho, w * jac, theta, dirs)
        })
        .collect();
    Rules { centers, radii }
}

fn orthonormal(u: &Vec3) -> (Vec3, Vec3) {
    let a = if u.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let n1 = (a - u * u.dot(&a)).normalize();
    (n1, u.cross(&n1))
}

fn pass<const K: usize, G>(
    f: &Density,
    params: &KineticParams,
    spec: &QuadratureSpec,
    skip: Skip,
    g: &G,
) -> Pass<K>
where
    G: Fn(&Point) -> [Term; K] + Sync,
{
    let d = params.d;
    let r = rules(f, params, spec, false);
    let fmax = r
        .centers
        .iter()
        .map(|(c, _)| f.eval(c))
        .fold(0.0, f64::max);
    let threshold = SKIP_RELATIVE * fmax * fmax;
    let s2 = 2.0 * params.s;
    let theta_min = spec.theta_min;
    let tail_factor = theta_min.powf(2.0 - s2) / (2.0 - s2);
    let azimuths: Vec<(f64, f64)> = if d == 2 {
        vec![(0.0, 1.0), (PI, 1.0)]
    } else {
        periodic(spec.azimuths())
    };
    let dir_cache: Vec<Vec<(Vec3, f64)>> = r
        .radii
        .iter()
        .map(|(_, _, _, n)| directions(d, *n))
        .collect();

    let per_center: Vec<Pass<K>> = r
        .centers
        .par_iter()
        .map(|&(c, wc)| {
            let mut acc = Pass::<K>::zero();
            let mut ring: Vec<(f64, f64)> = Vec::new();
            for ((rho, wr, theta, _), dirs) in r.radii.iter().zip(&dir_cache) {
                let half = 0.5 * rho;
                let (phi_r, psi_r) = (params.phi(*rho), params.psi(*rho));
                ring.clear();
                ring.extend(dirs.iter().map(|(e, _)| f.eval_ln(&(c + half * e))));
                let m = dirs.len();
                if skip != Skip::Never {
                    let bound = if d == 2 {
                        let h = m / 2;
                        match skip {
                            Skip::Pair => (0..m).map(|i| ring[i].0 * ring[(i + h) % m].0).fold(0.0, f64::max),
                            _ => ring.iter().map(|x| x.0).fold(0.0, f64::max).powi(2),
                        }
                    } else {
                        ring.iter().map(|x| x.0).fold(0.0, f64::max).powi(2)
                    };
                    if bound < threshold {
                        continue;
                    }
                }
                for (i, (e, we)) in dirs.iter().enumerate() {
                    let pre_v = ring[i];
                    let pre_s = if d == 2 {
                        ring[(i + m / 2) % m]
                    } else {
                        f.eval_ln(&(c - half * e))
                    };
                    let (n1, n2) = if d == 2 {
                        (Vec3::new(-e.y, e.x, 0.0), Vec3::zeros())
                    } else {
                        orthonormal(e)
                    };
                    let w0 = wc * wr * we;
                    let mut first = [0.0; K];
                    let mut second = [0.0; K];
                    for (j, &(t, wt)) in theta.iter().enumerate() {
                        let (st, ct) = t.sin_cos();
                        for &(phi, wphi) in &azimuths {
                            let (sp, cp) = phi.sin_cos();
                            let sigma = ct * e + st * (cp * n1 + sp * n2);
                            let vp = c + half * sigma;
                            let vsp = c - half * sigma;
                            let (fp, lp) = f.eval_ln(&vp);
                            let (fsp, lsp) = f.eval_ln(&vsp);
                            let pt = Point {
                                x: [c + half * e, c - half * e, vp, vsp],
                                f: [pre_v.0, pre_s.0, fp, fsp],
                                ln: [pre_v.1, pre_s.1, lp, lsp],
                                phi: phi_r,
                                psi: psi_r,
                            };
                            let terms = g(&pt);
                            let w = w0 * wt * wphi;
                            for k in 0..K {
                                acc.value[k] += w * terms[k].value;
                                acc.round[k] += w * terms[k].round.abs();
                                if j == 0 {
                                    first[k] += wphi * terms[k].value;
                                } else if j == 1 {
                                    second[k] += wphi * terms[k].value;
                                }
                            }
                            acc.nodes += 1;
                        }
                    }
                    let (t1, t2) = (theta[0].0, theta[1].0);
                    for k in 0..K {
                        let a1 = first[k] / (t1 * t1);
                        let a2 = second[k] / (t2 * t2);
                        acc.tail[k] += w0 * a1 * tail_factor;
                        acc.tail_spread[k] += (w0 * (a1 - a2) * tail_factor).abs();
                    }
                }
            }
            acc
        })
        .collect();
    per_center.iter().fold(Pass::zero(), |a, b| a.add(b))
}

/// Deterministic triple integral of g against theta^{-1-2s} d theta (sphere measure
/// with the representative b) and dv dv*.
pub(crate) fn integrate<const K: usize, G>(
    f: &Density,
    params: &KineticParams,
    spec: &QuadratureSpec,
    skip: Skip,
    g: G,
) -> Result<SphereOutput<K>>
where
    G: Fn(&Point) -> [Term; K] + Sync,
{
    spec.validate()?;
    params.validate()?;
    if f.d() != params.d {
        return Err(Error::invalid("d", "density and kinetic parameters disagree on the dimension"));
    }
    let fine = pass(f, params, spec, skip, &g);
    let coarse = pass(f, params, &spec.coarse(), skip, &g);
    let sup = f.support(spec);
    let trunc = f.tail_fraction(sup.radius, spec);
    let mut values = [Estimate::default(); K];
    for k in 0..K {
        let value = fine.value[k] + fine.tail[k];
        let other = coarse.value[k] + coarse.tail[k];
        let error = (value - other).abs()
            + fine.tail_spread[k]
            + 2.0 * trunc * value.abs()
            + 4.0 * f64::EPSILON * fine.round[k];
        values[k] = Estimate::new(value, error);
    }
    Ok(SphereOutput {
        values,
        nodes: fine.nodes + coarse.nodes,
    })
}

/// Dyadic strata of the deviation angle: [pi/4, pi/2], [pi/8, pi/4], ..., [0, a_last].
fn strata(theta_min: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut b = PI / 2.0;
    while b > theta_min {
        out.push((0.5 * b, b));
        b *= 0.5;
    }
    out.push((0.0, b));
    out
}

/// Monte Carlo estimate of int int int h dv dv* b dsigma with v, v* ~ f / M0.
///
/// `h` returns the integrand divided by the sampling weight f(v) f(v*), and is
/// evaluated at sigma and its antithetic partner.
pub(crate) fn monte_carlo<const K: usize, H>(
    f: &Density,
    params: &KineticParams,
    spec: &QuadratureSpec,
    mass: f64,
    h: H,
) -> Result<SphereOutput<K>>
where
    H: Fn(&Point) -> [f64; K] + Sync,
{
    const BLOCK: usize = 1000;
    if !f.has_sampler() {
        return Err(Error::MissingSampler(f.name().to_string()));
    }
    let d = params.d;
    let s2 = 2.0 * params.s;
    let p = 2.0 - s2;
    let layers = strata(spec.theta_min);
    let area = params.sub_sphere_area();
    let n = spec.mc_samples.max(2);
    let blocks = n.div_ceil(BLOCK);
    let parts: Vec<Result<Vec<[f64; K]>>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(b as u64 + 1);
            let count = BLOCK.min(n - b * BLOCK);
            let mut out = Vec::with_capacity(count);
            for _ in 0..count {
                let v = f.sample_one(&mut rng)?;
                let vs = f.sample_one(&mut rng)?;
                let u = v - vs;
                let rho = u.norm();
                let mut x = [0.0; K];
                if rho == 0.0 {
                    out.push(x);
                    continue;
                }
                let e = u / rho;
                let c = 0.5 * (v + vs);
                let (n1, n2) = if d == 2 {
                    (Vec3::new(-e.y, e.x, 0.0), Vec3::zeros())
                } else {
                    orthonormal(&e)
                };
                let (fv, lv) = f.eval_ln(&v);
                let (fs, ls) = f.eval_ln(&vs);
                let (phi_r, psi_r) = (params.phi(rho), params.psi(rho));
                for &(a, bb) in &layers {
                    let z = (bb.powf(p) - a.powf(p)) / p;
                    let un: f64 = rng.random();
                    let t = (a.powf(p) + un * (bb.powf(p) - a.powf(p))).powf(1.0 / p);
                    let phi = if d == 2 { 0.0 } else { rng.random::<f64>() * 2.0 * PI };
                    let (st, ct) = t.sin_cos();
                    for side in [0.0, PI] {
                        let (sp, cp) = (phi + side).sin_cos();
                        let sigma = ct * e + st * (cp * n1 + sp * n2);
                        let vp = c + 0.5 * rho * sigma;
                        let vsp = c - 0.5 * rho * sigma;
                        let (fp, lp) = f.eval_ln(&vp);
                        let (fsp, lsp) = f.eval_ln(&vsp);
                        let pt = Point {
                            x: [v, vs, vp, vsp],
                            f: [fv, fs, fp, fsp],
                            ln: [lv, ls, lp, lsp],
                            phi: phi_r,
                            psi: psi_r,
                        };
                        let vals = h(&pt);
                        // Two antithetic sides share the azimuthal measure |S^{d-2}|.
                        for k in 0..K {
                            x[k] += 0.5 * area * z * vals[k] / (t * t);
                        }
                    }
                }
                out.push(x);
            }
            Ok(out)
        })
        .collect();
    let mut sum = [0.0; K];
    let mut sq = [0.0; K];
    let mut count = 0usize;
    for part in parts {
        for x in part? {
            for k in 0..K {
                sum[k] += x[k];
                sq[k] += x[k] * x[k];
            }
            count += 1;
        }
    }
    let nf = count as f64;
    let mut values = [Estimate::default(); K];
    for k in 0..K {
        let mean = sum[k] / nf;
        let var = ((sq[k] / nf - mean * mean) * nf / (nf - 1.0)).max(0.0);
        values[k] = Estimate::new(mass * mass * mean, mass * mass * (var / nf).sqrt());
    }
    Ok(SphereOutput { values, nodes: count })
}

/// int int f f* h(|v - v*|) dv dv* over the same (center, u) grids.
pub(crate) fn pair_integrate<H>(f: &Density, params: &KineticParams, spec: &QuadratureSpec, h: H) -> Result<(Estimate, usize)>
where
    H: Fn(f64) -> Result<Estimate> + Sync,
{
    spec.validate()?;
    let run = |spec: &QuadratureSpec| -> Result<(f64, f64, usize)> {
        let r = rules(f, params, spec, true);
        let profile: Vec<Estimate> = r.radii.iter().map(|(rho, ..)| h(*rho)).collect::<Result<_>>()?;
        let dirs: Vec<Vec<(Vec3, f64)>> = r.radii.iter().map(|(_, _, _, n)| directions(params.d, *n)).collect();
        let parts: Vec<(f64, f64, usize)> = r
            .centers
            .par_iter()
            .map(|&(c, wc)| {
                let mut acc = (0.0, 0.0, 0);
                for (((rho, wr, _, _), ds), hv) in r.radii.iter().zip(&dirs).zip(&profile) {
                    for (e, we) in ds {
                        let fv = f.eval(&(c + 0.5 * rho * e));
                        if fv <= DENSITY_FLOOR {
                            continue;
                        }
                        let w = wc * wr * we * fv * f.eval(&(c - 0.5 * rho * e));
                        acc.0 += w * hv.value;
                        acc.1 += w * hv.error;
                        acc.2 += 1;
                    }
                }
                acc
            })
            .collect();
        Ok(parts.iter().fold((0.0, 0.0, 0), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2)))
    };
    let fine = run(spec)?;
    let coarse = run(&spec.coarse())?;
    let sup = f.support(spec);
    let trunc = f.tail_fraction(sup.radius, spec);
    let error = (fine.0 - coarse.0).abs() + fine.1 + 2.0 * trunc * fine.0.abs() + 8.0 * f64::EPSILON * fine.0.abs();
    Ok((Estimate::new(fine.0, error), fine.2 + coarse.2))
}

