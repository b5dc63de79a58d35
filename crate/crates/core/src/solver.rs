//! Spatially homogeneous relaxation by direct simulation Monte Carlo with an angular
//! cutoff, and the time-integrated diagnostics along the trajectory.
//!
//! Particles are paired at random each step (Nanbu–Babovsky). A pair with relative
//! speed u collides a Poisson number of times with mean M(u) dt, where
//! M(u) = m c_phi max(u, floor)^gamma Lambda(theta_min), and each candidate is kept with
//! probability Phi(u) / M(u). Collisions preserve u, so repeated collisions of one pair
//! within a step are exact for that pair.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::{macro_state, numeric_entropy, Density, Histogram};
use crate::error::{Error, Result};
use crate::geometry::lpq_norm;
use crate::kernel::{collision_geometry, KineticParams};
use crate::quadrature::{Estimate, QuadratureSpec};
use crate::verifier::holder_chain;
use crate::Vec3;

pub const DEFAULT_THETA_MIN: f64 = 0.05;
pub const DEFAULT_VREL_FLOOR: f64 = 1e-3;
pub const MIN_PARTICLES: usize = 1000;
/// Expected collisions per particle per step allowed by `step`.
pub const MAX_PER_PARTICLE: f64 = 0.5;
/// Collisions of one pair within a step are capped here; by then the direction of
/// its relative velocity is uniformly scrambled for any theta_min used in practice.
pub const MAX_PAIR_COLLISIONS: u64 = 64;
const PAIR_BLOCK: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleEnsemble {
    pub d: usize,
    pub velocities: Vec<Vec3>,
    /// Uniform particle weight 1/N.
    pub weight: f64,
    /// Mass of the sampled density; enters the collision rate.
    pub mass: f64,
    pub time: f64,
    pub rng_seed: u64,
    pub steps: u64,
}

impl ParticleEnsemble {
    pub fn len(&self) -> usize {
        self.velocities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.velocities.is_empty()
    }

    pub fn momentum(&self) -> Vec3 {
        self.mass * self.weight * self.velocities.iter().sum::<Vec3>()
    }

    /// m / N * sum |v_i|^2.
    pub fn energy(&self) -> f64 {
        self.mass * self.weight * self.velocities.iter().map(|v| v.norm_squared()).sum::<f64>()
    }

    /// Smoothed density carrying the ensemble mass.
    pub fn density(&self) -> Result<Density> {
        let f = Density::from_histogram(Histogram::from_samples(self.d, &self.velocities)?);
        if self.mass == 1.0 {
            Ok(f)
        } else {
            f.scaled(self.mass)
        }
    }

    /// Velocities as CSV with columns `v1..vd`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record((1..=self.d).map(|i| format!("v{i}")))?;
        for v in &self.velocities {
            w.write_record(v.iter().take(self.d).map(|x| format!("{x:.16e}")))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R, mass: f64, seed: u64) -> Result<ParticleEnsemble> {
        let mut r = csv::Reader::from_reader(input);
        let d = r.headers()?.len();
        if d != 2 && d != 3 {
            return Err(Error::invalid("checkpoint", format!("expected 2 or 3 columns, got {d}")));
        }
        let mut velocities = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let mut v = Vec3::zeros();
            for (i, field) in rec.iter().enumerate() {
                v[i] = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::invalid("checkpoint", format!("bad number {field:?}")))?;
            }
            velocities.push(v);
        }
        if velocities.is_empty() {
            return Err(Error::invalid("checkpoint", "no velocities"));
        }
        Ok(ParticleEnsemble {
            d,
            weight: 1.0 / velocities.len() as f64,
            velocities,
            mass,
            time: 0.0,
            rng_seed: seed,
            steps: 0,
        })
    }
}

/// N i.i.d. samples of f0 / mass.
pub fn init_ensemble(f0: &Density, n: usize, seed: u64) -> Result<ParticleEnsemble> {
    if n < MIN_PARTICLES {
        return Err(Error::invalid("n", format!("need at least {MIN_PARTICLES} particles, got {n}")));
    }
    if !f0.has_sampler() {
        return Err(Error::MissingSampler(f0.name().to_string()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let velocities = f0.sample(&mut rng, n)?;
    let mass = match f0.mass() {
        Some(m) => m,
        None => macro_state(f0, &QuadratureSpec::default())?.mass,
    };
    Ok(ParticleEnsemble {
        d: f0.d(),
        velocities,
        weight: 1.0 / n as f64,
        mass,
        time: 0.0,
        rng_seed: seed,
        steps: 0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepOptions {
    pub theta_min: f64,
    pub vrel_floor: f64,
}

impl Default for StepOptions {
    fn default() -> Self {
        StepOptions {
            theta_min: DEFAULT_THETA_MIN,
            vrel_floor: DEFAULT_VREL_FLOOR,
        }
    }
}

impl StepOptions {
    fn validate(&self) -> Result<()> {
        if !(self.theta_min > 0.0 && self.theta_min < std::f64::consts::FRAC_PI_2) {
            return Err(Error::invalid("theta_min", format!("must lie in (0, pi/2), got {}", self.theta_min)));
        }
        if !(self.vrel_floor >= 0.0 && self.vrel_floor.is_finite()) {
            return Err(Error::invalid("vrel_floor", "must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub pairs: u64,
    pub candidates: u64,
    pub accepted: u64,
    /// Pairs whose collision count hit the cap.
    pub saturated: u64,
    /// Expected collisions per particle under the majorant.
    pub per_particle: f64,
    /// Largest |p' - p| / sqrt(E) and |E' - E| / E over the collisions of the step.
    pub max_momentum_defect: f64,
    pub max_energy_defect: f64,
}

impl StepStats {
    fn merge(mut self, o: &StepStats) -> StepStats {
        self.pairs += o.pairs;
        self.candidates += o.candidates;
        self.accepted += o.accepted;
        self.saturated += o.saturated;
        self.max_momentum_defect = self.max_momentum_defect.max(o.max_momentum_defect);
        self.max_energy_defect = self.max_energy_defect.max(o.max_energy_defect);
        self
    }
}

struct Rates {
    scale: f64,
    gamma: f64,
    floor: f64,
}

impl Rates {
    fn new(ens: &ParticleEnsemble, params: &KineticParams, opts: &StepOptions) -> Rates {
        Rates {
            scale: ens.mass * params.c_phi * params.grazing_measure(opts.theta_min),
            gamma: params.gamma,
            floor: opts.vrel_floor,
        }
    }

    fn majorant(&self, u: f64) -> f64 {
        if self.gamma == 0.0 {
            self.scale
        } else {
            self.scale * u.max(self.floor).powf(self.gamma)
        }
    }

    fn acceptance(&self, u: f64) -> f64 {
        if self.gamma == 0.0 || u >= self.floor {
            1.0
        } else if self.gamma > 0.0 {
            (u / self.floor).powf(self.gamma)
        } else {
            // Below the floor the clamped rate is used as is.
            1.0
        }
    }

    /// Mean majorant rate over the current pairing, with each pair capped as in `step`
    /// at a vanishing time step.
    fn mean_rate(&self, velocities: &[Vec3]) -> f64 {
        let probe = 1e-9;
        self.per_particle(velocities, probe) / probe
    }

    /// Mean over the current pairing of the capped expected collision count.
    fn per_particle(&self, velocities: &[Vec3], dt: f64) -> f64 {
        let pairs = velocities.len() / 2;
        if pairs == 0 {
            return 0.0;
        }
        let sum: f64 = velocities
            .chunks_exact(2)
            .map(|p| (self.majorant((p[0] - p[1]).norm()) * dt).min(MAX_PAIR_COLLISIONS as f64))
            .sum();
        sum / pairs as f64
    }
}

/// Deviation from the pre-collisional relative velocity, drawn from theta^{-1-2s} on
/// [theta_min, pi/2], and a uniformly random orientation around it.
fn draw_sigma<R: Rng>(rng: &mut R, d: usize, axis: &Vec3, s: f64, theta_min: f64) -> Vec3 {
    let s2 = 2.0 * s;
    let (a, b) = (theta_min.powf(-s2), std::f64::consts::FRAC_PI_2.powf(-s2));
    let u: f64 = rng.random();
    let chi = (a - u * (a - b)).powf(-1.0 / s2);
    let (c, sn) = (chi.cos(), chi.sin());
    let sigma = if d == 2 {
        let normal = Vec3::new(-axis.y, axis.x, 0.0);
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        c * axis + sign * sn * normal
    } else {
        let helper = if axis.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
        let e1 = axis.cross(&helper).normalize();
        let e2 = axis.cross(&e1);
        let phi = 2.0 * std::f64::consts::PI * rng.random::<f64>();
        c * axis + sn * (phi.cos() * e1 + phi.sin() * e2)
    };
    sigma.normalize()
}

fn block_rng(seed: u64, step: u64, block: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((step << 24) | block);
    rng
}

/// Advances the ensemble by dt.
pub fn step(ens: &mut ParticleEnsemble, dt: f64, params: &KineticParams, opts: &StepOptions) -> Result<StepStats> {
    params.validate()?;
    opts.validate()?;
    if ens.d != params.d {
        return Err(Error::invalid("d", "ensemble and kinetic parameters disagree on the dimension"));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::invalid("dt", format!("must be positive, got {dt}")));
    }
    let paired = pairing(ens);
    let rates = Rates::new(ens, params, opts);
    let per_particle = rates.per_particle(&paired, dt);
    if per_particle > MAX_PER_PARTICLE {
        // The ensemble is untouched, so a retry sees the same pairing.
        return Err(Error::TimeStepTooLarge {
            per_particle,
            suggested_dt: 0.5 * MAX_PER_PARTICLE / rates.mean_rate(&paired),
        });
    }
    ens.velocities = paired;
    let (seed, steps, d, s, theta_min) = (ens.rng_seed, ens.steps, ens.d, params.s, opts.theta_min);
    let parts: Vec<StepStats> = ens
        .velocities
        .par_chunks_mut(2 * PAIR_BLOCK)
        .enumerate()
        .map(|(b, chunk)| {
            let mut rng = block_rng(seed, steps, b as u64 + 1);
            let mut st = StepStats::default();
            for pair in chunk.chunks_exact_mut(2) {
                st.pairs += 1;
                let rel = pair[0] - pair[1];
                let u = rel.norm();
                let mean = rates.majorant(u) * dt;
                if !(mean > 0.0) || u == 0.0 {
                    continue;
                }
                let mut k = Poisson::new(mean).map(|p| p.sample(&mut rng) as u64).unwrap_or(0);
                if k > MAX_PAIR_COLLISIONS {
                    k = MAX_PAIR_COLLISIONS;
                    st.saturated += 1;
                }
                let accept = rates.acceptance(u);
                for _ in 0..k {
                    st.candidates += 1;
                    if accept < 1.0 && rng.random::<f64>() >= accept {
                        continue;
                    }
                    let axis = (pair[0] - pair[1]) / u;
                    let sigma = draw_sigma(&mut rng, d, &axis, s, theta_min);
                    let Ok(g) = collision_geometry(&pair[0], &pair[1], &sigma) else {
                        continue;
                    };
                    let (p0, e0) = (pair[0] + pair[1], pair[0].norm_squared() + pair[1].norm_squared());
                    pair[0] = g.v_prime;
                    pair[1] = g.v_star_prime;
                    let (p1, e1) = (pair[0] + pair[1], pair[0].norm_squared() + pair[1].norm_squared());
                    st.accepted += 1;
                    st.max_momentum_defect = st.max_momentum_defect.max((p1 - p0).norm() / e0.sqrt());
                    st.max_energy_defect = st.max_energy_defect.max((e1 - e0).abs() / e0);
                }
            }
            st
        })
        .collect();
    let mut total = parts.iter().fold(StepStats::default(), |a, b| a.merge(b));
    total.per_particle = per_particle;
    ens.time += dt;
    ens.steps += 1;
    Ok(total)
}

/// The random pairing the next `step` uses: consecutive entries collide.
fn pairing(ens: &ParticleEnsemble) -> Vec<Vec3> {
    let mut order: Vec<usize> = (0..ens.len()).collect();
    order.shuffle(&mut block_rng(ens.rng_seed, ens.steps, 0));
    order.iter().map(|&i| ens.velocities[i]).collect()
}

/// Largest dt keeping the expected collisions per particle at a quarter on the pairing
/// the next `step` will use.
pub fn suggested_dt(ens: &ParticleEnsemble, params: &KineticParams, opts: &StepOptions) -> f64 {
    let mean = Rates::new(ens, params, opts).mean_rate(&pairing(ens));
    if mean > 0.0 {
        0.5 * MAX_PER_PARTICLE / mean
    } else {
        f64::INFINITY
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunOptions {
    pub t_end: f64,
    pub snapshots: usize,
    pub particles: usize,
    pub seed: u64,
    pub theta_min: f64,
    pub vrel_floor: f64,
    /// Fixed time step; by default derived from the initial ensemble.
    pub dt: Option<f64>,
    /// Ball radius of the Hölder chain diagnostic.
    pub holder_radius: f64,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            t_end: 5.0,
            snapshots: 10,
            particles: 20_000,
            seed: 7,
            theta_min: DEFAULT_THETA_MIN,
            vrel_floor: DEFAULT_VREL_FLOOR,
            dt: None,
            holder_radius: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub t: f64,
    /// int f log f of the smoothed density.
    pub entropy: Estimate,
    pub mass: f64,
    pub energy: f64,
    pub lpq_norm: Estimate,
    /// Trapezoidal int_0^t ||f||_{L^p_{-q}}.
    pub lpq_running_integral: f64,
    pub holder_lhs: Option<f64>,
    pub holder_rhs: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryDiagnostics {
    pub params: KineticParams,
    pub options: RunOptions,
    pub dt: f64,
    pub snapshots: Vec<Snapshot>,
    pub steps: u64,
    pub collisions: u64,
    pub candidates: u64,
    pub saturated_pairs: u64,
    pub max_momentum_defect: f64,
    pub max_energy_defect: f64,
    /// H(0) - H(T) of the smoothed densities.
    pub entropy_drop: f64,
    /// Steps split because their random pairing exceeded the collision budget.
    pub refined_steps: u64,
}

impl TrajectoryDiagnostics {
    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.t).collect()
    }

    pub fn entropy(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.entropy.value).collect()
    }

    /// Columns t, H, mass, energy, lpq_norm, lpq_running_integral, holder_lhs, holder_rhs.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "H", "mass", "energy", "lpq_norm", "lpq_running_integral", "holder_lhs", "holder_rhs"])?;
        let num = |x: f64| format!("{x:.16e}");
        let opt = |x: Option<f64>| x.map(num).unwrap_or_default();
        for s in &self.snapshots {
            w.write_record([
                num(s.t),
                num(s.entropy.value),
                num(s.mass),
                num(s.energy),
                num(s.lpq_norm.value),
                num(s.lpq_running_integral),
                opt(s.holder_lhs),
                opt(s.holder_rhs),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn snapshot(
    ens: &ParticleEnsemble,
    params: &KineticParams,
    spec: &QuadratureSpec,
    holder_radius: f64,
    previous: Option<&Snapshot>,
) -> Result<Snapshot> {
    let f = ens.density()?;
    let entropy = numeric_entropy(&f, spec);
    let lpq = lpq_norm(&f, params, spec)?;
    let (holder_lhs, holder_rhs) = if params.gamma <= 0.0 {
        let h = holder_chain(&f, holder_radius, params, spec)?;
        (Some(h.lhs.value), h.rhs.map(|r| r.value))
    } else {
        (None, None)
    };
    let running = match previous {
        Some(p) => p.lpq_running_integral + 0.5 * (ens.time - p.t) * (lpq.value + p.lpq_norm.value),
        None => 0.0,
    };
    Ok(Snapshot {
        t: ens.time,
        entropy,
        mass: ens.mass * ens.weight * ens.len() as f64,
        energy: ens.energy(),
        lpq_norm: lpq,
        lpq_running_integral: running,
        holder_lhs,
        holder_rhs,
    })
}

/// Relaxes f0 to time t_end, recording diagnostics at t = 0 and `snapshots` equally
/// spaced times.
pub fn run(
    f0: &Density,
    params: &KineticParams,
    spec: &QuadratureSpec,
    opts: &RunOptions,
) -> Result<(TrajectoryDiagnostics, ParticleEnsemble)> {
    params.validate()?;
    spec.validate()?;
    if opts.snapshots == 0 {
        return Err(Error::invalid("snapshots", "must be at least 1"));
    }
    if !(opts.t_end > 0.0 && opts.t_end.is_finite()) {
        return Err(Error::invalid("t_end", format!("must be positive, got {}", opts.t_end)));
    }
    if !(opts.holder_radius > 0.0) {
        return Err(Error::invalid("holder_radius", "must be positive"));
    }
    let step_opts = StepOptions {
        theta_min: opts.theta_min,
        vrel_floor: opts.vrel_floor,
    };
    step_opts.validate()?;
    let mut ens = init_ensemble(f0, opts.particles, opts.seed)?;
    let interval = opts.t_end / opts.snapshots as f64;
    let dt_max = match opts.dt {
        Some(dt) if dt > 0.0 => dt,
        Some(dt) => return Err(Error::invalid("dt", format!("must be positive, got {dt}"))),
        None => suggested_dt(&ens, params, &step_opts),
    };
    let per_interval = (interval / dt_max).ceil().max(1.0) as usize;
    let dt = interval / per_interval as f64;
    let mut snaps = vec![snapshot(&ens, params, spec, opts.holder_radius, None)?];
    let mut total = StepStats::default();
    let mut refined = 0;
    for k in 1..=opts.snapshots {
        for _ in 0..per_interval {
            advance(&mut ens, dt, params, &step_opts, &mut total, &mut refined)?;
        }
        ens.time = k as f64 * interval;
        let s = snapshot(&ens, params, spec, opts.holder_radius, snaps.last())?;
        snaps.push(s);
    }
    let entropy_drop = snaps[0].entropy.value - snaps[snaps.len() - 1].entropy.value;
    Ok((
        TrajectoryDiagnostics {
            params: *params,
            options: opts.clone(),
            dt,
            snapshots: snaps,
            steps: ens.steps,
            collisions: total.accepted,
            candidates: total.candidates,
            saturated_pairs: total.saturated,
            max_momentum_defect: total.max_momentum_defect,
            max_energy_defect: total.max_energy_defect,
            entropy_drop,
            refined_steps: refined,
        },
        ens,
    ))
}

/// One step of dt, split into equal substeps when a pairing is too collisional for it.
fn advance(
    ens: &mut ParticleEnsemble,
    dt: f64,
    params: &KineticParams,
    opts: &StepOptions,
    total: &mut StepStats,
    refined: &mut u64,
) -> Result<()> {
    match step(ens, dt, params, opts) {
        Ok(st) => {
            *total = total.merge(&st);
            Ok(())
        }
        Err(Error::TimeStepTooLarge { suggested_dt, .. }) => {
            *refined += 1;
            let n = (dt / suggested_dt).ceil().max(2.0) as usize;
            for _ in 0..n {
                advance(ens, dt / n as f64, params, opts, total, refined)?;
            }
            Ok(())
        }
        Err(e) => Err(e),
    }
}

/// Largest increase of H between consecutive snapshots.
pub fn max_entropy_increase(diag: &TrajectoryDiagnostics) -> f64 {
    diag.snapshots
        .windows(2)
        .map(|w| w[1].entropy.value - w[0].entropy.value)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Per-snapshot sample standard deviation across repeated runs of H, the L^p_{-q}
/// norm and both Hölder sides.
pub fn seed_spread(runs: &[TrajectoryDiagnostics]) -> Result<Vec<[f64; 4]>> {
    if runs.len() < 2 {
        return Err(Error::invalid("runs", "need at least two runs"));
    }
    let m = runs[0].snapshots.len();
    if runs.iter().any(|r| r.snapshots.len() != m) {
        return Err(Error::invalid("runs", "snapshot counts differ"));
    }
    let n = runs.len() as f64;
    Ok((0..m)
        .map(|k| {
            let pick = |g: &dyn Fn(&Snapshot) -> f64| -> f64 {
                let xs: Vec<f64> = runs.iter().map(|r| g(&r.snapshots[k])).collect();
                let mean = xs.iter().sum::<f64>() / n;
                (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            };
            [
                pick(&|s| s.entropy.value),
                pick(&|s| s.lpq_norm.value),
                pick(&|s| s.holder_lhs.unwrap_or(0.0)),
                pick(&|s| s.holder_rhs.unwrap_or(0.0)),
            ]
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_pair_kinematics() {
        let g = collision_geometry(&Vec3::new(1.0, 0.0, 0.0), &Vec3::new(-1.0, 0.0, 0.0), &Vec3::new(0.0, 1.0, 0.0)).unwrap();
        assert_eq!(g.v_prime, Vec3::new(0.0, 1.0, 0.0));
        assert_eq!(g.v_star_prime, Vec3::new(0.0, -1.0, 0.0));
    }

    #[test]
    fn small_ensembles_and_missing_samplers_are_rejected() {
        let m = Density::maxwellian(2, Vec3::zeros(), 1.0, 1.0).unwrap();
        assert!(init_ensemble(&m, 1, 1).is_err());
        assert!(matches!(init_ensemble(&Density::zero(2).unwrap(), 2000, 1), Err(Error::MissingSampler(_))));
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let m = Density::maxwellian(2, Vec3::zeros(), 1.0, 1.0).unwrap();
        let p = KineticParams::new(2, -1.0, 0.5).unwrap();
        let mut a = init_ensemble(&m, 4000, 11).unwrap();
        let mut b = init_ensemble(&m, 4000, 11).unwrap();
        assert_eq!(a.velocities, b.velocities);
        for _ in 0..5 {
            step(&mut a, 0.01, &p, &StepOptions::default()).unwrap();
            step(&mut b, 0.01, &p, &StepOptions::default()).unwrap();
        }
        assert_eq!(a.velocities, b.velocities);
    }

    #[test]
    fn maxwell_molecules_accept_every_candidate() {
        let m = Density::maxwellian(2, Vec3::zeros(), 1.0, 1.0).unwrap();
        let p = KineticParams::new(2, 0.0, 0.5).unwrap();
        let mut e = init_ensemble(&m, 2000, 3).unwrap();
        let opts = StepOptions {
            vrel_floor: 0.0,
            ..StepOptions::default()
        };
        let st = step(&mut e, 0.01, &p, &opts).unwrap();
        assert!(st.candidates > 0);
        assert_eq!(st.candidates, st.accepted);
    }

    #[test]
    fn oversized_steps_report_a_smaller_dt() {
        let m = Density::maxwellian(2, Vec3::zeros(), 1.0, 1.0).unwrap();
        let p = KineticParams::new(2, -1.0, 0.5).unwrap();
        let mut e = init_ensemble(&m, 2000, 3).unwrap();
        match step(&mut e, 10.0, &p, &StepOptions::default()) {
            Err(Error::TimeStepTooLarge { suggested_dt, .. }) => {
                assert!(suggested_dt < 10.0);
                step(&mut e, suggested_dt, &p, &StepOptions::default()).unwrap();
            }
            other => panic!("{other:?}"),
        }
    }
}
