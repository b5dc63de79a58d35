//! Test densities, their macroscopic quantities and samplers.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::quadrature::{axis_rule, Estimate, QuadratureSpec};
use crate::Vec3;

/// Values of f below this are treated as zero (0 log 0 = 0).
pub const DENSITY_FLOOR: f64 = 1e-300;

/// Largest tolerated mass fraction outside the truncation radius.
pub const MAX_TAIL_FRACTION: f64 = 1e-3;

/// Truncation target for power-law tails.
pub const HEAVY_TAIL_TARGET: f64 = 1e-4;

/// Anything that can be evaluated at a velocity.
pub trait Field: Sync {
    fn value(&self, v: &Vec3) -> f64;
}

impl<F> Field for F
where
    F: Fn(&Vec3) -> f64 + Sync,
{
    fn value(&self, v: &Vec3) -> f64 {
        self(v)
    }
}

impl Field for Density {
    fn value(&self, v: &Vec3) -> f64 {
        self.eval(v)
    }
}

/// Where a density lives: a ball about `center` holding all but a negligible tail.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Support {
    pub center: Vec3,
    pub radius: f64,
    /// Smallest length scale of the profile (thermal speed of the narrowest component).
    pub core: f64,
    pub heavy: bool,
}

#[derive(Debug, Clone)]
enum Shape {
    Zero,
    /// Unit mass.
    Maxwellian { mean: Vec3, temperature: f64 },
    BiMaxwellian {
        weights: [f64; 2],
        means: [Vec3; 2],
        temperatures: [f64; 2],
    },
    /// Unit mass c <v>^{-d-2-eps}.
    HeavyTail { epsilon: f64, log_norm: f64 },
    /// M(v)(1 + delta cos(k v_1)) with M the centered unit Maxwellian.
    ProductPerturbation {
        temperature: f64,
        delta: f64,
        wavenumber: f64,
    },
    Histogram(Arc<Histogram>),
}

/// A nonnegative velocity density f_t(v) = a * lambda^{-d} * f((v - u) / lambda).
///
/// Values are immutable after construction and cheap to clone.
#[derive(Debug, Clone)]
pub struct Density {
    d: usize,
    shape: Shape,
    amplitude: f64,
    dilation: f64,
    shift: Vec3,
    name: String,
    /// ln(a lambda^{-d}), or -inf for a vanishing amplitude.
    ln_pre: f64,
    /// Per-component ln normalizations of the Gaussian shapes.
    ln_norm: [f64; 2],
}

fn check_dim(d: usize) -> Result<()> {
    if d == 2 || d == 3 {
        Ok(())
    } else {
        Err(Error::invalid("d", format!("must be 2 or 3, got {d}")))
    }
}

fn check_velocity(d: usize, v: &Vec3, name: &'static str) -> Result<()> {
    if !(v.iter().all(|x| x.is_finite())) {
        return Err(Error::invalid(name, "must be finite"));
    }
    if d == 2 && v.z != 0.0 {
        return Err(Error::invalid(name, "third component must be 0 in d = 2"));
    }
    Ok(())
}

fn positive(name: &'static str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(name, format!("must be positive, got {x}")))
    }
}

fn sphere_area(d: usize) -> f64 {
    if d == 2 {
        2.0 * PI
    } else {
        4.0 * PI
    }
}

/// ln of int_{R^d} <v>^{-k} dv = pi^{d/2} Gamma((k-d)/2) / Gamma(k/2).
fn ln_bracket_integral(d: f64, k: f64) -> f64 {
    0.5 * d * PI.ln() + ln_gamma(0.5 * (k - d)) - ln_gamma(0.5 * k)
}

/// Probability that a centered d-dimensional Gaussian with variance T per axis leaves
/// the ball of radius r.
fn gaussian_tail(d: usize, r: f64, temperature: f64) -> f64 {
    if r <= 0.0 {
        return 1.0;
    }
    let x = r / temperature.sqrt();
    if d == 2 {
        (-0.5 * x * x).exp()
    } else {
        erfc(x / 2f64.sqrt()) + (2.0 / PI).sqrt() * x * (-0.5 * x * x).exp()
    }
}

pub fn make_maxwellian(d: usize, mean: Vec3, temperature: f64, mass: f64) -> Result<Density> {
    Density::maxwellian(d, mean, temperature, mass)
}

pub fn make_bi_maxwellian(
    d: usize,
    c1: f64,
    mean1: Vec3,
    t1: f64,
    c2: f64,
    mean2: Vec3,
    t2: f64,
) -> Result<Density> {
    Density::bi_maxwellian(d, [c1, c2], [mean1, mean2], [t1, t2])
}

impl Density {
    fn base(d: usize, shape: Shape, name: String) -> Density {
        let g = |t: f64| -0.5 * d as f64 * (2.0 * PI * t).ln();
        let ln_norm = match &shape {
            Shape::Maxwellian { temperature, .. } | Shape::ProductPerturbation { temperature, .. } => {
                [g(*temperature), 0.0]
            }
            Shape::BiMaxwellian {
                weights, temperatures, ..
            } => [
                weights[0].ln() + g(temperatures[0]),
                weights[1].ln() + g(temperatures[1]),
            ],
            _ => [0.0; 2],
        };
        Density {
            d,
            shape,
            amplitude: 1.0,
            dilation: 1.0,
            shift: Vec3::zeros(),
            name,
            ln_pre: 0.0,
            ln_norm,
        }
    }

    fn transformed(&self, amplitude: f64, dilation: f64, shift: Vec3) -> Density {
        Density {
            amplitude,
            dilation,
            shift,
            ln_pre: (amplitude * dilation.powi(-(self.d as i32))).ln(),
            ..self.clone()
        }
    }

    pub fn zero(d: usize) -> Result<Density> {
        check_dim(d)?;
        Ok(Density::base(d, Shape::Zero, "zero".into()))
    }

    pub fn maxwellian(d: usize, mean: Vec3, temperature: f64, mass: f64) -> Result<Density> {
        check_dim(d)?;
        check_velocity(d, &mean, "mean")?;
        positive("temperature", temperature)?;
        positive("mass", mass)?;
        let f = Density::base(
            d,
            Shape::Maxwellian { mean, temperature },
            format!("maxwellian(T={temperature})"),
        );
        Ok(f.transformed(mass, 1.0, Vec3::zeros()))
    }

    /// c1 M[mean1, T1] + c2 M[mean2, T2]; a vanishing weight reduces to a Maxwellian.
    pub fn bi_maxwellian(
        d: usize,
        weights: [f64; 2],
        means: [Vec3; 2],
        temperatures: [f64; 2],
    ) -> Result<Density> {
        check_dim(d)?;
        for (i, c) in weights.iter().enumerate() {
            if !(*c >= 0.0 && c.is_finite()) {
                let name = if i == 0 { "c1" } else { "c2" };
                return Err(Error::invalid(name, format!("must be nonnegative, got {c}")));
            }
        }
        if !(weights[0] + weights[1] > 0.0) {
            return Err(Error::invalid("c1 + c2", "weights are degenerate (sum is zero)"));
        }
        positive("T1", temperatures[0])?;
        positive("T2", temperatures[1])?;
        check_velocity(d, &means[0], "mean1")?;
        check_velocity(d, &means[1], "mean2")?;
        for i in 0..2 {
            if weights[1 - i] == 0.0 {
                return Density::maxwellian(d, means[i], temperatures[i], weights[i]);
            }
        }
        Ok(Density::base(
            d,
            Shape::BiMaxwellian {
                weights,
                means,
                temperatures,
            },
            "bi_maxwellian".into(),
        ))
    }

    /// Unit-mass c <v>^{-d-2-eps}, eps in (0, 1]: finite energy, slow decay.
    pub fn heavy_tail(d: usize, epsilon: f64) -> Result<Density> {
        check_dim(d)?;
        if !(epsilon > 0.0 && epsilon <= 1.0) {
            return Err(Error::invalid("epsilon", format!("must lie in (0, 1], got {epsilon}")));
        }
        let k = d as f64 + 2.0 + epsilon;
        Ok(Density::base(
            d,
            Shape::HeavyTail {
                epsilon,
                log_norm: -ln_bracket_integral(d as f64, k),
            },
            format!("heavy_tail(eps={epsilon})"),
        ))
    }

    /// M(v)(1 + delta cos(k v_1)) with |delta| < 1.
    pub fn product_perturbation(d: usize, temperature: f64, delta: f64, wavenumber: f64) -> Result<Density> {
        check_dim(d)?;
        positive("temperature", temperature)?;
        if !(delta.abs() < 1.0) {
            return Err(Error::invalid("delta", format!("must satisfy |delta| < 1, got {delta}")));
        }
        if !wavenumber.is_finite() {
            return Err(Error::invalid("wavenumber", "must be finite"));
        }
        Ok(Density::base(
            d,
            Shape::ProductPerturbation {
                temperature,
                delta,
                wavenumber,
            },
            format!("perturbation(delta={delta},k={wavenumber})"),
        ))
    }

    pub fn from_histogram(hist: Histogram) -> Density {
        let d = hist.d;
        Density::base(d, Shape::Histogram(Arc::new(hist)), "histogram".into())
    }

    /// a * f.
    pub fn scaled(&self, a: f64) -> Result<Density> {
        if !(a >= 0.0 && a.is_finite()) {
            return Err(Error::invalid("a", format!("must be nonnegative, got {a}")));
        }
        Ok(self.transformed(self.amplitude * a, self.dilation, self.shift))
    }

    /// lambda^{-d} f(v / lambda): same mass, velocities stretched by lambda.
    pub fn dilated(&self, lambda: f64) -> Result<Density> {
        positive("lambda", lambda)?;
        Ok(self.transformed(self.amplitude, self.dilation * lambda, self.shift * lambda))
    }

    /// f(v - u).
    pub fn shifted(&self, u: Vec3) -> Result<Density> {
        check_velocity(self.d, &u, "shift")?;
        Ok(self.transformed(self.amplitude, self.dilation, self.shift + u))
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Density {
        self.name = name.into();
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn kind(&self) -> &'static str {
        match self.shape {
            Shape::Zero => "zero",
            Shape::Maxwellian { .. } => "maxwellian",
            Shape::BiMaxwellian { .. } => "bi_maxwellian",
            Shape::HeavyTail { .. } => "heavy_tail",
            Shape::ProductPerturbation { .. } => "product_perturbation",
            Shape::Histogram(_) => "histogram",
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.shape, Shape::Zero) || self.amplitude == 0.0
    }

    pub fn is_maxwellian(&self) -> bool {
        matches!(self.shape, Shape::Maxwellian { .. })
    }

    #[inline]
    fn to_base(&self, v: &Vec3) -> Vec3 {
        if self.dilation == 1.0 {
            v - self.shift
        } else {
            (v - self.shift) / self.dilation
        }
    }

    #[inline]
    fn prefactor(&self) -> f64 {
        self.amplitude * self.dilation.powi(-(self.d as i32))
    }

    pub fn eval(&self, v: &Vec3) -> f64 {
        let x = self.to_base(v);
        let pre = self.prefactor();
        let d = self.d as f64;
        match &self.shape {
            Shape::Zero => 0.0,
            Shape::Maxwellian { mean, temperature } => {
                pre * maxwell(d, &(x - mean), *temperature)
            }
            Shape::BiMaxwellian {
                weights,
                means,
                temperatures,
            } => {
                pre * (weights[0] * maxwell(d, &(x - means[0]), temperatures[0])
                    + weights[1] * maxwell(d, &(x - means[1]), temperatures[1]))
            }
            Shape::HeavyTail { epsilon, log_norm } => {
                let k = d + 2.0 + epsilon;
                pre * (log_norm - 0.5 * k * x.norm_squared().ln_1p()).exp()
            }
            Shape::ProductPerturbation {
                temperature,
                delta,
                wavenumber,
            } => pre * maxwell(d, &x, *temperature) * (1.0 + delta * (wavenumber * x.x).cos()),
            Shape::Histogram(h) => pre * h.eval(&x),
        }
    }

    /// ln f(v), computed without underflow for the analytic families; values below
    /// the density floor are clipped to it.
    pub fn ln_eval(&self, v: &Vec3) -> f64 {
        let x = self.to_base(v);
        let floor = DENSITY_FLOOR.ln();
        let value = match &self.shape {
            Shape::Zero => return floor,
            Shape::Maxwellian { mean, temperature } => {
                self.ln_norm[0] - 0.5 * (x - mean).norm_squared() / temperature
            }
            Shape::BiMaxwellian {
                means, temperatures, ..
            } => {
                let a = self.ln_norm[0] - 0.5 * (x - means[0]).norm_squared() / temperatures[0];
                let b = self.ln_norm[1] - 0.5 * (x - means[1]).norm_squared() / temperatures[1];
                a.max(b) + (-(a - b).abs()).exp().ln_1p()
            }
            Shape::HeavyTail { epsilon, log_norm } => {
                log_norm - 0.5 * (self.d as f64 + 2.0 + epsilon) * x.norm_squared().ln_1p()
            }
            Shape::ProductPerturbation {
                temperature,
                delta,
                wavenumber,
            } => {
                self.ln_norm[0] - 0.5 * x.norm_squared() / temperature
                    + (delta * (wavenumber * x.x).cos()).ln_1p()
            }
            Shape::Histogram(h) => h.eval(&x).max(DENSITY_FLOOR).ln(),
        };
        (self.ln_pre + value).max(floor)
    }

    /// (f(v), ln f(v)) from a single evaluation; f is zero below the density floor.
    #[inline]
    pub fn eval_ln(&self, v: &Vec3) -> (f64, f64) {
        let l = self.ln_eval(v);
        if l <= DENSITY_FLOOR.ln() {
            (0.0, l)
        } else {
            (l.exp(), l)
        }
    }

    /// Support ball for the given truncation settings.
    pub fn support(&self, spec: &QuadratureSpec) -> Support {
        let scale = spec.truncation_scale;
        let (center, radius, core, heavy) = match &self.shape {
            Shape::Zero => (Vec3::zeros(), 1.0, 1.0, false),
            Shape::Maxwellian { mean, temperature } => {
                (*mean, scale * temperature.sqrt(), temperature.sqrt(), false)
            }
            Shape::BiMaxwellian {
                means,
                temperatures,
                ..
            } => {
                let center = 0.5 * (means[0] + means[1]);
                let radius = (0..2)
                    .map(|i| (means[i] - center).norm() + scale * temperatures[i].sqrt())
                    .fold(0.0, f64::max);
                let core = temperatures[0].min(temperatures[1]).sqrt();
                (center, radius, core, false)
            }
            Shape::HeavyTail { epsilon, log_norm } => {
                // Solve c |S| R^{-2-eps} / (2 + eps) = target; a power tail cannot meet
                // the Gaussian tolerance at any practical radius.
                let target = spec.tail_tolerance.max(HEAVY_TAIL_TARGET);
                let p = 2.0 + epsilon;
                let radius = (log_norm.exp() * sphere_area(self.d) / (p * target)).powf(1.0 / p).max(1.0);
                (Vec3::zeros(), radius, 1.0, true)
            }
            Shape::ProductPerturbation {
                temperature,
                wavenumber,
                ..
            } => {
                let t = temperature.sqrt();
                let core = if *wavenumber > 0.0 {
                    t.min(2.0 / wavenumber)
                } else {
                    t
                };
                (Vec3::zeros(), scale * t, core, false)
            }
            Shape::Histogram(h) => (h.center(), h.radius(), 2.0 * h.bandwidth, false),
        };
        Support {
            center: self.dilation * center + self.shift,
            radius: self.dilation * radius,
            core: self.dilation * core,
            heavy,
        }
    }

    /// Fraction of the mass outside the ball of radius r about the support center.
    pub fn tail_fraction(&self, r: f64, spec: &QuadratureSpec) -> f64 {
        let center = self.support(spec).center;
        let base_center = self.to_base(&center);
        let r = r / self.dilation;
        match &self.shape {
            Shape::Zero => 0.0,
            Shape::Maxwellian { mean, temperature } => {
                gaussian_tail(self.d, r - (mean - base_center).norm(), *temperature)
            }
            Shape::BiMaxwellian {
                weights,
                means,
                temperatures,
            } => {
                let total = weights[0] + weights[1];
                (0..2)
                    .map(|i| {
                        weights[i] / total
                            * gaussian_tail(self.d, r - (means[i] - base_center).norm(), temperatures[i])
                    })
                    .sum()
            }
            Shape::HeavyTail { epsilon, log_norm } => {
                let k = self.d as f64 + 2.0 + epsilon;
                let r = r.max(1.0);
                (log_norm.exp() * sphere_area(self.d) * r.powf(self.d as f64 - k) / (k - self.d as f64)).min(1.0)
            }
            Shape::ProductPerturbation {
                temperature, delta, ..
            } => {
                let mass = self.base_moments().map(|m| m.mass).unwrap_or(1.0);
                ((1.0 + delta.abs()) / mass * gaussian_tail(self.d, r, *temperature)).min(1.0)
            }
            Shape::Histogram(h) => {
                if r >= h.radius() {
                    0.0
                } else {
                    1.0
                }
            }
        }
    }

    /// Mass, momentum, energy and entropy of the untransformed profile, when known.
    fn base_moments(&self) -> Option<BaseMoments> {
        let d = self.d as f64;
        match &self.shape {
            Shape::Zero => Some(BaseMoments {
                mass: 0.0,
                momentum: Vec3::zeros(),
                energy: 0.0,
                entropy: Some(0.0),
            }),
            Shape::Maxwellian { mean, temperature } => Some(BaseMoments {
                mass: 1.0,
                momentum: *mean,
                energy: d * temperature + mean.norm_squared(),
                entropy: Some(-0.5 * d * (2.0 * PI * std::f64::consts::E * temperature).ln()),
            }),
            Shape::BiMaxwellian {
                weights,
                means,
                temperatures,
            } => Some(BaseMoments {
                mass: weights[0] + weights[1],
                momentum: weights[0] * means[0] + weights[1] * means[1],
                energy: (0..2)
                    .map(|i| weights[i] * (d * temperatures[i] + means[i].norm_squared()))
                    .sum(),
                entropy: None,
            }),
            Shape::HeavyTail { epsilon, .. } => {
                let k = d + 2.0 + epsilon;
                let ratio = (ln_bracket_integral(d, k - 2.0) - ln_bracket_integral(d, k)).exp();
                Some(BaseMoments {
                    mass: 1.0,
                    momentum: Vec3::zeros(),
                    energy: ratio - 1.0,
                    entropy: None,
                })
            }
            Shape::ProductPerturbation {
                temperature,
                delta,
                wavenumber,
            } => {
                let t = *temperature;
                let damp = (-0.5 * wavenumber * wavenumber * t).exp();
                Some(BaseMoments {
                    mass: 1.0 + delta * damp,
                    momentum: Vec3::zeros(),
                    energy: d * t + delta * (d * t - wavenumber * wavenumber * t * t) * damp,
                    entropy: None,
                })
            }
            Shape::Histogram(_) => None,
        }
    }

    pub fn mass(&self) -> Option<f64> {
        self.base_moments().map(|m| self.amplitude * m.mass)
    }

    pub fn momentum(&self) -> Option<Vec3> {
        self.base_moments()
            .map(|m| self.amplitude * (self.dilation * m.momentum + m.mass * self.shift))
    }

    /// int f |v|^2.
    pub fn energy(&self) -> Option<f64> {
        self.base_moments().map(|m| {
            let l = self.dilation;
            self.amplitude
                * (l * l * m.energy + 2.0 * l * self.shift.dot(&m.momentum) + self.shift.norm_squared() * m.mass)
        })
    }

    /// int f ln f.
    pub fn entropy(&self) -> Option<f64> {
        let m = self.base_moments()?;
        let h = m.entropy?;
        if self.amplitude == 0.0 {
            return Some(0.0);
        }
        Some(self.amplitude * (m.mass * self.prefactor().ln() + h))
    }

    pub fn has_sampler(&self) -> bool {
        !matches!(self.shape, Shape::Zero)
    }

    /// One velocity distributed as f / mass.
    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec3> {
        let d = self.d;
        let gauss = |rng: &mut R, t: f64| -> Vec3 {
            let s = t.sqrt();
            let x: f64 = rng.sample(StandardNormal);
            let y: f64 = rng.sample(StandardNormal);
            let z: f64 = if d == 3 { rng.sample(StandardNormal) } else { 0.0 };
            Vec3::new(s * x, s * y, s * z)
        };
        let x = match &self.shape {
            Shape::Zero => return Err(Error::MissingSampler(self.name.clone())),
            Shape::Maxwellian { mean, temperature } => mean + gauss(rng, *temperature),
            Shape::BiMaxwellian {
                weights,
                means,
                temperatures,
            } => {
                let u: f64 = rng.random::<f64>() * (weights[0] + weights[1]);
                let i = if u < weights[0] { 0 } else { 1 };
                means[i] + gauss(rng, temperatures[i])
            }
            Shape::HeavyTail { epsilon, .. } => {
                // |v|^2 / (1 + |v|^2) ~ Beta(d/2, 1 + eps/2).
                let beta = Beta::new(0.5 * d as f64, 1.0 + 0.5 * epsilon)
                    .map_err(|e| Error::invalid("epsilon", e.to_string()))?;
                let u: f64 = beta.sample(rng);
                let r = (u / (1.0 - u)).sqrt();
                let dir = gauss(rng, 1.0);
                let n = dir.norm();
                if n == 0.0 {
                    Vec3::zeros()
                } else {
                    dir * (r / n)
                }
            }
            Shape::ProductPerturbation {
                temperature,
                delta,
                wavenumber,
            } => loop {
                let x = gauss(rng, *temperature);
                let accept = (1.0 + delta * (wavenumber * x.x).cos()) / (1.0 + delta.abs());
                if rng.random::<f64>() < accept {
                    break x;
                }
            },
            Shape::Histogram(h) => h.sample(rng),
        };
        Ok(self.dilation * x + self.shift)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Result<Vec<Vec3>> {
        (0..n).map(|_| self.sample_one(rng)).collect()
    }
}

struct BaseMoments {
    mass: f64,
    momentum: Vec3,
    energy: f64,
    entropy: Option<f64>,
}

#[inline]
fn maxwell(d: f64, x: &Vec3, t: f64) -> f64 {
    (2.0 * PI * t).powf(-0.5 * d) * (-0.5 * x.norm_squared() / t).exp()
}


/// Tensor-product velocity grid over the support box of a density.
#[derive(Debug, Clone)]
pub struct VelocityGrid {
    pub nodes: Vec<(Vec3, f64)>,
}

impl VelocityGrid {
    pub fn new(d: usize, support: &Support, n: usize) -> VelocityGrid {
        let axis = |c: f64| axis_rule(c, support.radius, n, support.core, support.heavy);
        let xs = axis(support.center.x);
        let ys = axis(support.center.y);
        let mut nodes = Vec::with_capacity(n.pow(d as u32));
        if d == 2 {
            for &(x, wx) in &xs {
                for &(y, wy) in &ys {
                    nodes.push((Vec3::new(x, y, 0.0), wx * wy));
                }
            }
        } else {
            let zs = axis(support.center.z);
            for &(x, wx) in &xs {
                for &(y, wy) in &ys {
                    for &(z, wz) in &zs {
                        nodes.push((Vec3::new(x, y, z), wx * wy * wz));
                    }
                }
            }
        }
        VelocityGrid { nodes }
    }

    pub fn for_density(f: &Density, spec: &QuadratureSpec, n: usize) -> VelocityGrid {
        VelocityGrid::new(f.d, &f.support(spec), n)
    }

    /// Sums w * g(v) in a fixed order.
    pub fn integrate<G>(&self, g: G) -> f64
    where
        G: Fn(&Vec3) -> f64 + Sync,
    {
        let parts: Vec<f64> = self
            .nodes
            .par_chunks(256)
            .map(|chunk| chunk.iter().map(|(v, w)| w * g(v)).sum::<f64>())
            .collect();
        parts.iter().sum()
    }
}

/// Moments required by the macroscopic bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MacroState {
    pub m0: f64,
    #[serde(rename = "M0")]
    pub mass: f64,
    #[serde(rename = "E0")]
    pub energy: f64,
    #[serde(rename = "H0")]
    pub entropy: f64,
    /// int f <v>^{gamma_+}.
    pub gamma_moment: f64,
    /// Numerically integrated mass, energy and entropy.
    pub numeric: [f64; 3],
    /// Error estimates of the numeric values (resolution difference plus truncation tail).
    pub numeric_error: [f64; 3],
    /// Numeric minus closed form, where a closed form exists.
    pub discrepancy: [Option<f64>; 3],
    /// Estimated mass fraction beyond the truncation radius.
    pub tail_fraction: f64,
}

pub fn macro_state(f: &Density, spec: &QuadratureSpec) -> Result<MacroState> {
    macro_state_with_gamma(f, spec, 0.0)
}

/// Moments of f with the gamma-moment taken for the given potential exponent.
pub fn macro_state_with_gamma(f: &Density, spec: &QuadratureSpec, gamma: f64) -> Result<MacroState> {
    spec.validate()?;
    let support = f.support(spec);
    let gp = gamma.max(0.0);
    let moments = |n: usize| -> [f64; 4] {
        let grid = VelocityGrid::new(f.d, &support, n);
        let vals: Vec<[f64; 4]> = grid
            .nodes
            .par_chunks(256)
            .map(|chunk| {
                let mut acc = [0.0; 4];
                for (v, w) in chunk {
                    let fv = f.eval(v);
                    if fv <= DENSITY_FLOOR {
                        continue;
                    }
                    let r2 = v.norm_squared();
                    acc[0] += w * fv;
                    acc[1] += w * fv * r2;
                    acc[2] += w * fv * f.ln_eval(v);
                    acc[3] += w * fv * (1.0 + r2).powf(0.5 * gp);
                }
                acc
            })
            .collect();
        vals.iter().fold([0.0; 4], |mut a, b| {
            for i in 0..4 {
                a[i] += b[i];
            }
            a
        })
    };
    let n = 2 * spec.velocity_nodes;
    let fine = moments(n);
    let coarse = moments(((n as f64) * spec.coarse_factor).round() as usize);
    let tail = f.tail_fraction(support.radius, spec);
    if !f.is_zero() && fine[0] <= 1e-12 {
        return Err(Error::MassBelowThreshold { mass: fine[0] });
    }
    if f.is_zero() {
        return Err(Error::MassBelowThreshold { mass: 0.0 });
    }
    if tail > MAX_TAIL_FRACTION {
        return Err(Error::TailNotResolved {
            tail,
            tolerance: MAX_TAIL_FRACTION,
        });
    }
    let mass_scale = fine[0];
    let r = support.radius + support.center.norm();
    // Beyond R the energy tail of c<v>^{-d-2-eps} decays only like R^{-eps}.
    let energy_tail = if support.heavy {
        let eps = match f.shape {
            Shape::HeavyTail { epsilon, .. } => epsilon,
            _ => 1.0,
        };
        let k = f.d as f64 + 2.0 + eps;
        tail * mass_scale * (k - f.d as f64) / eps * support.radius.powi(2)
    } else {
        tail * mass_scale * r * r * 4.0
    };
    let err = [
        (fine[0] - coarse[0]).abs() + tail * mass_scale,
        (fine[1] - coarse[1]).abs() + energy_tail,
        (fine[2] - coarse[2]).abs() + tail * mass_scale * (1.0 + fine[2].abs() / mass_scale),
    ];
    let analytic = [f.mass(), f.energy(), f.entropy()];
    let numeric = [fine[0], fine[1], fine[2]];
    let pick = |i: usize| analytic[i].unwrap_or(numeric[i]);
    let gamma_moment = if gp == 0.0 { pick(0) } else { fine[3] };
    Ok(MacroState {
        m0: pick(0),
        mass: pick(0),
        energy: pick(1),
        entropy: pick(2),
        gamma_moment,
        numeric,
        numeric_error: err,
        discrepancy: [
            analytic[0].map(|a| numeric[0] - a),
            analytic[1].map(|a| numeric[1] - a),
            analytic[2].map(|a| numeric[2] - a),
        ],
        tail_fraction: tail,
    })
}

/// Numerical entropy int f ln f (0 ln 0 = 0) on the density's velocity grid.
pub fn numeric_entropy(f: &Density, spec: &QuadratureSpec) -> Estimate {
    let h = |n: usize| {
        VelocityGrid::for_density(f, spec, n).integrate(|v| {
            let x = f.eval(v);
            if x <= DENSITY_FLOOR {
                0.0
            } else {
                x * x.ln()
            }
        })
    };
    let n = 2 * spec.velocity_nodes;
    let fine = h(n);
    let coarse = h(((n as f64) * spec.coarse_factor).round() as usize);
    Estimate::new(fine, fine - coarse)
}

/// Binned velocity samples, evaluated through separable Gaussian smoothing and
/// multilinear interpolation between bin centers.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    d: usize,
    /// Center of the first bin along each axis.
    origin: [f64; 3],
    width: f64,
    dims: [usize; 3],
    counts: Vec<f64>,
    total: f64,
    bandwidth: f64,
    /// Smoothed density at bin centers, normalized to unit mass.
    smoothed: Vec<f64>,
}

impl Histogram {
    /// Bins samples with width h/2, where h = sigma (4 / ((d + 2) N))^{1/(d+4)} is the
    /// normal-reference bandwidth.
    pub fn from_samples(d: usize, samples: &[Vec3]) -> Result<Histogram> {
        check_dim(d)?;
        let n = samples.len();
        if n < 2 {
            return Err(Error::invalid("samples", "need at least two samples"));
        }
        let nf = n as f64;
        let mean = samples.iter().sum::<Vec3>() / nf;
        let var = samples
            .iter()
            .map(|v| (v - mean).norm_squared())
            .sum::<f64>()
            / (nf - 1.0)
            / d as f64;
        let sigma = var.sqrt();
        if !(sigma > 0.0) {
            return Err(Error::invalid("samples", "all samples coincide"));
        }
        let df = d as f64;
        let bandwidth = sigma * (4.0 / ((df + 2.0) * nf)).powf(1.0 / (df + 4.0));
        let width = 0.5 * bandwidth;
        let pad = 4.0 * bandwidth + width;
        let mut lo = [0.0; 3];
        let mut dims = [1usize; 3];
        for a in 0..d {
            let min = samples.iter().map(|v| v[a]).fold(f64::INFINITY, f64::min) - pad;
            let max = samples.iter().map(|v| v[a]).fold(f64::NEG_INFINITY, f64::max) + pad;
            // Bin edges on a lattice of the width so that centers are reproducible.
            let first = (min / width).floor();
            lo[a] = (first + 0.5) * width;
            dims[a] = ((max / width).ceil() - first) as usize;
        }
        let mut counts = vec![0.0; dims[0] * dims[1] * dims[2]];
        for v in samples {
            let mut idx = [0usize; 3];
            for a in 0..d {
                let i = ((v[a] - (lo[a] - 0.5 * width)) / width).floor();
                idx[a] = (i.max(0.0) as usize).min(dims[a] - 1);
            }
            counts[(idx[0] * dims[1] + idx[1]) * dims[2] + idx[2]] += 1.0;
        }
        Ok(Histogram::from_bins(d, lo, width, dims, counts))
    }

    fn from_bins(d: usize, origin: [f64; 3], width: f64, dims: [usize; 3], counts: Vec<f64>) -> Histogram {
        let bandwidth = 2.0 * width;
        let total: f64 = counts.iter().sum();
        let mut smoothed = counts.clone();
        let reach = (4.0 * bandwidth / width).ceil() as isize;
        let kernel: Vec<f64> = {
            let raw: Vec<f64> = (-reach..=reach)
                .map(|j| (-0.5 * (j as f64 * width / bandwidth).powi(2)).exp())
                .collect();
            let s: f64 = raw.iter().sum();
            raw.into_iter().map(|x| x / s).collect()
        };
        for axis in 0..d {
            smoothed = convolve_axis(&smoothed, dims, axis, &kernel, reach);
        }
        let norm = total * width.powi(d as i32);
        for x in &mut smoothed {
            *x /= norm;
        }
        Histogram {
            d,
            origin,
            width,
            dims,
            counts,
            total,
            bandwidth,
            smoothed,
        }
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn sample_count(&self) -> f64 {
        self.total
    }

    fn center(&self) -> Vec3 {
        let mut c = Vec3::zeros();
        for a in 0..self.d {
            c[a] = self.origin[a] + 0.5 * self.width * (self.dims[a] - 1) as f64;
        }
        c
    }

    fn radius(&self) -> f64 {
        (0..self.d)
            .map(|a| (0.5 * self.width * self.dims[a] as f64).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    fn index(&self, i: [usize; 3]) -> usize {
        (i[0] * self.dims[1] + i[1]) * self.dims[2] + i[2]
    }

    pub fn eval(&self, x: &Vec3) -> f64 {
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..self.d {
            let t = (x[a] - self.origin[a]) / self.width;
            if !(t >= 0.0 && t <= (self.dims[a] - 1) as f64) {
                return 0.0;
            }
            let i = (t.floor() as usize).min(self.dims[a].saturating_sub(2));
            base[a] = i;
            frac[a] = t - i as f64;
        }
        let corners = 1usize << self.d;
        let mut sum = 0.0;
        for c in 0..corners {
            let mut idx = base;
            let mut w = 1.0;
            for a in 0..self.d {
                if c >> a & 1 == 1 {
                    idx[a] += 1;
                    w *= frac[a];
                } else {
                    w *= 1.0 - frac[a];
                }
            }
            if w != 0.0 {
                sum += w * self.smoothed[self.index(idx)];
            }
        }
        sum
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec3 {
        let target = rng.random::<f64>() * self.total;
        let mut acc = 0.0;
        let mut flat = self.counts.len() - 1;
        for (i, c) in self.counts.iter().enumerate() {
            acc += c;
            if acc > target {
                flat = i;
                break;
            }
        }
        let idx = [
            flat / (self.dims[1] * self.dims[2]),
            (flat / self.dims[2]) % self.dims[1],
            flat % self.dims[2],
        ];
        let mut v = Vec3::zeros();
        for a in 0..self.d {
            let jitter: f64 = rng.random::<f64>() - 0.5;
            let noise: f64 = rng.sample(StandardNormal);
            v[a] = self.origin[a] + self.width * (idx[a] as f64 + jitter) + self.bandwidth * noise;
        }
        v
    }

    /// CSV with columns `bin_center_1..bin_center_d,count`, one row per bin.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (1..=self.d).map(|a| format!("bin_center_{a}")).collect();
        header.push("count".into());
        w.write_record(&header)?;
        for i in 0..self.dims[0] {
            for j in 0..self.dims[1] {
                for k in 0..self.dims[2] {
                    let idx = [i, j, k];
                    let mut row: Vec<String> = (0..self.d)
                        .map(|a| format!("{:.16e}", self.origin[a] + self.width * idx[a] as f64))
                        .collect();
                    row.push(format!("{}", self.counts[self.index(idx)]));
                    w.write_record(&row)?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Inverse of [`Histogram::write_csv`]; the bin width is inferred from the centers.
    pub fn read_csv<R: Read>(input: R) -> Result<Histogram> {
        let mut r = csv::Reader::from_reader(input);
        let headers = r.headers()?.clone();
        let d = headers.len().saturating_sub(1);
        check_dim(d)?;
        if headers.get(d) != Some("count") {
            return Err(Error::Config("histogram CSV must end with a `count` column".into()));
        }
        let mut rows: Vec<([f64; 3], f64)> = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let parse = |i: usize| -> Result<f64> {
                rec.get(i)
                    .and_then(|x| x.trim().parse::<f64>().ok())
                    .ok_or_else(|| Error::Config(format!("histogram CSV row {}: bad column {}", line + 2, i + 1)))
            };
            let mut c = [0.0; 3];
            for (a, slot) in c.iter_mut().enumerate().take(d) {
                *slot = parse(a)?;
            }
            rows.push((c, parse(d)?));
        }
        if rows.is_empty() {
            return Err(Error::Config("histogram CSV has no rows".into()));
        }
        let mut width = f64::INFINITY;
        let mut origin = [0.0; 3];
        let mut max = [0.0; 3];
        for a in 0..d {
            let mut xs: Vec<f64> = rows.iter().map(|r| r.0[a]).collect();
            xs.sort_by(f64::total_cmp);
            xs.dedup();
            origin[a] = xs[0];
            max[a] = xs[xs.len() - 1];
            for p in xs.windows(2) {
                width = width.min(p[1] - p[0]);
            }
        }
        if !width.is_finite() {
            return Err(Error::Config("histogram CSV needs at least two bins per axis".into()));
        }
        let mut dims = [1usize; 3];
        for a in 0..d {
            dims[a] = ((max[a] - origin[a]) / width).round() as usize + 1;
        }
        let mut counts = vec![0.0; dims[0] * dims[1] * dims[2]];
        for (c, n) in rows {
            let mut idx = [0usize; 3];
            for a in 0..d {
                idx[a] = ((c[a] - origin[a]) / width).round() as usize;
            }
            counts[(idx[0] * dims[1] + idx[1]) * dims[2] + idx[2]] += n;
        }
        Ok(Histogram::from_bins(d, origin, width, dims, counts))
    }
}

fn convolve_axis(data: &[f64], dims: [usize; 3], axis: usize, kernel: &[f64], reach: isize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    let stride = match axis {
        0 => dims[1] * dims[2],
        1 => dims[2],
        _ => 1,
    };
    let len = dims[axis] as isize;
    for (flat, &x) in data.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        let pos = ((flat / stride) % dims[axis]) as isize;
        for (j, k) in kernel.iter().enumerate() {
            let target = pos + j as isize - reach;
            if target >= 0 && target < len {
                let t = flat as isize + (target - pos) * stride as isize;
                out[t as usize] += x * k;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn v2(x: f64, y: f64) -> Vec3 {
        Vec3::new(x, y, 0.0)
    }

    #[test]
    fn maxwellian_point_value() {
        let f = make_maxwellian(2, Vec3::zeros(), 1.0, 1.0).unwrap();
        assert_relative_eq!(f.eval(&Vec3::zeros()), 1.0 / (2.0 * PI), max_relative = 1e-15);
        assert_relative_eq!(f.ln_eval(&v2(0.3, -2.0)), f.eval(&v2(0.3, -2.0)).ln(), max_relative = 1e-14);
    }

    #[test]
    fn maxwellian_moments_match_closed_form() {
        let spec = QuadratureSpec::default();
        let f3 = make_maxwellian(3, Vec3::zeros(), 1.0, 1.0).unwrap();
        let m = macro_state(&f3, &spec).unwrap();
        assert_relative_eq!(m.energy, 3.0, max_relative = 1e-14);
        assert!((m.numeric[1] - 3.0).abs() <= m.numeric_error[1] + 1e-10);

        let f2 = make_maxwellian(2, Vec3::zeros(), 1.0, 1.0).unwrap();
        let m = macro_state(&f2, &spec).unwrap();
        let h = -(2.0 * PI * std::f64::consts::E).ln();
        assert_relative_eq!(m.entropy, h, max_relative = 1e-14);
        assert_relative_eq!(m.entropy, -2.837877066409345, max_relative = 1e-12);
        assert!((m.numeric[2] - h).abs() <= 1e-9, "{:?}", m);
        assert_relative_eq!(m.energy, 2.0, max_relative = 1e-14);
        assert_relative_eq!(m.mass, 1.0, max_relative = 1e-14);
    }

    #[test]
    fn bi_maxwellian_moments() {
        let f = make_bi_maxwellian(2, 0.5, v2(2.0, 0.0), 1.0, 0.5, v2(-2.0, 0.0), 1.0).unwrap();
        assert_relative_eq!(f.mass().unwrap(), 1.0);
        assert_relative_eq!(f.energy().unwrap(), 6.0);
        let m = macro_state(&f, &QuadratureSpec::default()).unwrap();
        assert!((m.numeric[1] - 6.0).abs() <= m.numeric_error[1] + 1e-10);
        assert!((m.numeric[0] - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn degenerate_mixture_is_a_maxwellian() {
        let f = make_bi_maxwellian(2, 0.7, v2(1.0, 0.5), 1.3, 0.0, v2(-2.0, 0.0), 1.0).unwrap();
        let g = make_maxwellian(2, v2(1.0, 0.5), 1.3, 0.7).unwrap();
        for v in [v2(0.0, 0.0), v2(1.0, -3.0), v2(4.0, 2.0)] {
            assert_eq!(f.eval(&v), g.eval(&v));
        }
        assert!(make_bi_maxwellian(2, 0.0, v2(1.0, 0.5), 1.3, 0.0, v2(-2.0, 0.0), 1.0).is_err());
        assert!(make_bi_maxwellian(2, -0.1, v2(1.0, 0.5), 1.3, 0.5, v2(-2.0, 0.0), 1.0).is_err());
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        assert!(make_maxwellian(2, Vec3::zeros(), 0.0, 1.0).is_err());
        assert!(make_maxwellian(2, Vec3::zeros(), 1.0, -1.0).is_err());
        assert!(make_maxwellian(2, Vec3::new(0.0, 0.0, 1.0), 1.0, 1.0).is_err());
        assert!(Density::heavy_tail(2, 0.0).is_err());
        assert!(Density::product_perturbation(2, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn zero_density_has_no_mass() {
        let f = Density::zero(2).unwrap();
        assert!(matches!(
            macro_state(&f, &QuadratureSpec::default()),
            Err(Error::MassBelowThreshold { .. })
        ));
        assert!(matches!(
            f.sample_one(&mut ChaCha8Rng::seed_from_u64(1)),
            Err(Error::MissingSampler(_))
        ));
    }

    #[test]
    fn transformed_moments_follow_scaling_rules() {
        let spec = QuadratureSpec::default();
        let f = Density::product_perturbation(2, 1.0, 0.6, 1.5)
            .unwrap()
            .scaled(2.5)
            .unwrap()
            .dilated(0.7)
            .unwrap()
            .shifted(v2(0.4, -0.3))
            .unwrap();
        let m = macro_state(&f, &spec).unwrap();
        for i in 0..2 {
            let gap = m.discrepancy[i].unwrap().abs();
            assert!(gap <= m.numeric_error[i] + 1e-9, "moment {i}: {m:?}");
        }
        let g = make_maxwellian(3, Vec3::new(0.2, 0.0, 1.0), 0.5, 2.0)
            .unwrap()
            .dilated(3.0)
            .unwrap();
        let m = macro_state(&g, &spec).unwrap();
        assert!(m.discrepancy[2].unwrap().abs() < 1e-8, "{m:?}");
    }

    #[test]
    fn heavy_tail_is_normalized_with_finite_energy() {
        let spec = QuadratureSpec::default();
        for d in [2, 3] {
            for eps in [0.5, 1.0] {
                let f = Density::heavy_tail(d, eps).unwrap();
                let m = macro_state(&f, &spec).unwrap();
                assert!((m.numeric[0] - 1.0).abs() <= m.numeric_error[0] + 1e-9, "{m:?}");
                assert!(m.energy.is_finite() && m.energy > 0.0);
                assert!(m.discrepancy[1].unwrap().abs() <= m.numeric_error[1], "{m:?}");
            }
        }
    }

    #[test]
    fn sampler_moments_converge_at_monte_carlo_rate() {
        let f = make_bi_maxwellian(2, 0.3, v2(1.0, 0.0), 0.5, 0.7, v2(-1.0, 1.0), 2.0).unwrap();
        let mean = f.momentum().unwrap() / f.mass().unwrap();
        let energy = f.energy().unwrap() / f.mass().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [1_000usize, 10_000, 100_000] {
            let xs = f.sample(&mut rng, n).unwrap();
            let m = xs.iter().sum::<Vec3>() / n as f64;
            let e = xs.iter().map(|x| x.norm_squared()).sum::<f64>() / n as f64;
            let band = 5.0 / (n as f64).sqrt();
            assert!((m - mean).norm() < band * 2.0, "n={n}");
            assert!((e - energy).abs() < band * 12.0, "n={n}");
        }
    }

    #[test]
    fn heavy_tail_and_perturbation_samplers_match_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = Density::product_perturbation(2, 1.0, 0.9, 1.5).unwrap();
        let n = 100_000;
        let xs = f.sample(&mut rng, n).unwrap();
        let e = xs.iter().map(|x| x.norm_squared()).sum::<f64>() / n as f64;
        assert!((e - f.energy().unwrap() / f.mass().unwrap()).abs() < 0.05);

        let h = Density::heavy_tail(3, 1.0).unwrap();
        let xs = h.sample(&mut rng, n).unwrap();
        let inside = xs.iter().filter(|x| x.norm() < 1.0).count() as f64 / n as f64;
        let spec = QuadratureSpec::default();
        let exact = VelocityGrid::new(3, &Support { center: Vec3::zeros(), radius: 1.0, core: 1.0, heavy: false }, 60)
            .integrate(|v| if v.norm() < 1.0 { h.eval(v) } else { 0.0 });
        assert!((inside - exact).abs() < 0.01, "{inside} vs {exact}");
        assert!(h.tail_fraction(h.support(&spec).radius, &spec) < MAX_TAIL_FRACTION);
    }

    #[test]
    fn histogram_round_trips_through_csv() {
        let f = make_maxwellian(2, v2(0.5, 0.0), 1.0, 1.0).unwrap();
        let xs = f.sample(&mut ChaCha8Rng::seed_from_u64(3), 20_000).unwrap();
        let h = Histogram::from_samples(2, &xs).unwrap();
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        let back = Histogram::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.dims, h.dims);
        assert_relative_eq!(back.width, h.width, max_relative = 1e-12);
        for v in [v2(0.0, 0.0), v2(1.2, -0.7)] {
            assert_relative_eq!(back.eval(&v), h.eval(&v), max_relative = 1e-9);
        }
    }

    #[test]
    fn smoothed_histogram_tracks_the_source_density() {
        let f = make_maxwellian(2, Vec3::zeros(), 1.0, 1.0).unwrap();
        let xs = f.sample(&mut ChaCha8Rng::seed_from_u64(9), 50_000).unwrap();
        let g = Density::from_histogram(Histogram::from_samples(2, &xs).unwrap());
        let spec = QuadratureSpec::default();
        let grid = VelocityGrid::for_density(&f, &spec, 120);
        let l1 = grid.integrate(|v| (f.eval(v) - g.eval(v)).abs());
        let mass = VelocityGrid::for_density(&g, &spec, 120).integrate(|v| g.eval(v));
        assert!(l1 < 0.08, "L1 = {l1}");
        assert!((mass - 1.0).abs() < 1e-3, "{mass}");
        let m = macro_state(&g, &spec).unwrap();
        assert!((m.energy - 2.0).abs() < 0.1, "{m:?}");
    }
}
