//! Command-line driver: configuration resolution, subcommands and artifact output.
//!
//! Configuration is a TOML file of dotted keys (`kinetic.gamma = -2`,
//! `quadrature.theta_min = 1e-3`); flags override file values. Every run writes its
//! resolved configuration as `config.toml` next to its outputs.
//!
//! Exit codes: 0 success, 1 configuration error, 2 numerical failure (including a
//! failed verification).

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::distributions::{macro_state, Density, Histogram};
use crate::error::{Error, Result};
use crate::functionals::{entropy_dissipation_with, Method};
use crate::geometry::{lpq_norm, sqrt_seminorm, weighted_lp_norm, SeminormOptions};
use crate::kernel::{exponents, KineticParams, Variant};
use crate::kf_kernel::{cone_estimate_with, ConeOptions, KernelEvaluator};
use crate::quadrature::QuadratureSpec;
use crate::solver::{self, RunOptions};
use crate::verifier::{
    self, holder_chain, holder_predicate, third_factor_probe, verify_prop22_construction, Claim, ConstructionOptions,
    VerifyOptions,
};
use crate::Vec3;

pub const JOBS_ENV: &str = "BOLTZLAB_JOBS";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KineticConfig {
    pub d: Option<usize>,
    pub gamma: Option<f64>,
    pub s: Option<f64>,
    pub c_phi: Option<f64>,
    pub c_b: Option<f64>,
}

/// One density of the analytic families, or a histogram CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensityConfig {
    /// maxwellian, bimaxwellian, heavy_tail, perturbation, histogram or zero.
    pub kind: String,
    pub mean: [f64; 3],
    pub temperature: f64,
    pub mass: f64,
    /// Symmetric bi-Maxwellian with means +-separation/2 along v1 when set.
    pub separation: Option<f64>,
    pub weights: [f64; 2],
    pub means: [[f64; 3]; 2],
    pub temperatures: [f64; 2],
    pub epsilon: f64,
    pub delta: f64,
    pub wavenumber: f64,
    pub path: Option<PathBuf>,
    /// Applied in this order: f -> a f, f -> lambda^{-d} f(./lambda), f -> f(. - shift).
    pub amplitude: f64,
    pub dilation: f64,
    pub shift: [f64; 3],
}

impl Default for DensityConfig {
    fn default() -> Self {
        DensityConfig {
            kind: "bimaxwellian".into(),
            mean: [0.0; 3],
            temperature: 1.0,
            mass: 1.0,
            separation: Some(4.0),
            weights: [0.5, 0.5],
            means: [[2.0, 0.0, 0.0], [-2.0, 0.0, 0.0]],
            temperatures: [1.0, 1.0],
            epsilon: 1.0,
            delta: 0.5,
            wavenumber: 1.5,
            path: None,
            amplitude: 1.0,
            dilation: 1.0,
            shift: [0.0; 3],
        }
    }
}

impl DensityConfig {
    pub fn build(&self, d: usize) -> Result<Density> {
        let v = |x: [f64; 3]| Vec3::new(x[0], x[1], if d == 3 { x[2] } else { 0.0 });
        let base = match self.kind.as_str() {
            "maxwellian" => Density::maxwellian(d, v(self.mean), self.temperature, self.mass)?,
            "bimaxwellian" => {
                let means = match self.separation {
                    Some(sep) => [Vec3::new(0.5 * sep, 0.0, 0.0), Vec3::new(-0.5 * sep, 0.0, 0.0)],
                    None => [v(self.means[0]), v(self.means[1])],
                };
                Density::bi_maxwellian(d, self.weights, means, self.temperatures)?
            }
            "heavy_tail" => Density::heavy_tail(d, self.epsilon)?,
            "perturbation" => Density::product_perturbation(d, self.temperature, self.delta, self.wavenumber)?,
            "zero" => Density::zero(d)?,
            "histogram" => {
                let path = self
                    .path
                    .as_ref()
                    .ok_or_else(|| Error::Config("density.path is required for kind = \"histogram\"".into()))?;
                let h = Histogram::read_csv(File::open(path)?)?;
                Density::from_histogram(h)
            }
            other => {
                return Err(Error::Config(format!(
                    "density.kind: unknown kind {other:?} (maxwellian, bimaxwellian, heavy_tail, perturbation, histogram, zero)"
                )))
            }
        };
        let mut f = base;
        if self.amplitude != 1.0 {
            f = f.scaled(self.amplitude)?;
        }
        if self.dilation != 1.0 {
            f = f.dilated(self.dilation)?;
        }
        if self.shift != [0.0; 3] {
            f = f.shifted(v(self.shift))?;
        }
        Ok(f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DissipateConfig {
    pub method: Option<String>,
    pub variant: String,
}

impl Default for DissipateConfig {
    fn default() -> Self {
        DissipateConfig {
            method: None,
            variant: "full".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    /// A named family (standard, bimaxwellian, maxwellian, lemma) or `custom`.
    pub family: String,
    pub members: Vec<DensityConfig>,
    /// theorem11, prop12, both, holder or construction.
    pub claim: String,
    /// (gamma, s) pairs; empty means the kinetic section alone.
    pub pairs: Vec<[f64; 2]>,
    pub holder_radius: f64,
    pub options: VerifyOptions,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            family: "standard".into(),
            members: Vec::new(),
            claim: "theorem11".into(),
            pairs: Vec::new(),
            holder_radius: 4.0,
            options: VerifyOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConeConfig {
    pub v: Vec<f64>,
    pub variant: String,
    pub options: ConeOptions,
}

impl Default for ConeConfig {
    fn default() -> Self {
        ConeConfig {
            v: vec![0.0, 0.0],
            variant: "psi".into(),
            options: ConeOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NormsConfig {
    pub seminorm: SeminormOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: PathBuf::from("out") }
    }
}

/// Everything a run depends on. `preset` selects the quadrature defaults that the
/// `quadrature` table then overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub jobs: Option<usize>,
    pub preset: String,
    pub output: OutputConfig,
    pub kinetic: KineticConfig,
    pub quadrature: toml::Table,
    pub density: DensityConfig,
    pub dissipate: DissipateConfig,
    pub verify: VerifyConfig,
    pub solve: RunOptions,
    pub cone: ConeConfig,
    pub norms: NormsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            jobs: None,
            preset: "default".into(),
            output: OutputConfig::default(),
            kinetic: KineticConfig::default(),
            quadrature: toml::Table::new(),
            density: DensityConfig::default(),
            dissipate: DissipateConfig::default(),
            verify: VerifyConfig::default(),
            solve: RunOptions::default(),
            cone: ConeConfig::default(),
            norms: NormsConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn params(&self) -> Result<KineticParams> {
        let missing = |key: &str, flag: &str| Error::Config(format!("missing field `kinetic.{key}` (set --{flag} or kinetic.{key})"));
        let k = &self.kinetic;
        KineticParams::with_constants(
            k.d.ok_or_else(|| missing("d", "d"))?,
            k.gamma.ok_or_else(|| missing("gamma", "gamma"))?,
            k.s.ok_or_else(|| missing("s", "s"))?,
            k.c_phi.unwrap_or(1.0),
            k.c_b.unwrap_or(1.0),
        )
    }

    /// The preset with the `quadrature` table laid over it.
    pub fn spec(&self) -> Result<QuadratureSpec> {
        let base = match self.preset.as_str() {
            "default" => QuadratureSpec::default(),
            "fast" => QuadratureSpec::fast(),
            other => return Err(Error::Config(format!("preset: expected default or fast, got {other:?}"))),
        };
        let mut table = toml::Table::try_from(&base).map_err(|e| Error::Config(e.to_string()))?;
        for (k, v) in &self.quadrature {
            table.insert(k.clone(), v.clone());
        }
        let spec: QuadratureSpec = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("quadrature: {}", e.message())))?;
        spec.validate()?;
        Ok(spec)
    }

    /// Fully explicit copy: the quadrature table holds every field.
    pub fn resolved(&self) -> Result<RunConfig> {
        let spec = self.spec()?;
        let mut out = self.clone();
        out.quadrature = toml::Table::try_from(&spec).map_err(|e| Error::Config(e.to_string()))?;
        Ok(out)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Debug, Parser)]
#[command(name = "boltzlab", version, about = "Entropy dissipation, collision kernels and weighted velocity norms")]
struct Cli {
    #[command(flatten)]
    common: CommonArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (falls back to BOLTZLAB_JOBS).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true)]
    d: Option<usize>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    gamma: Option<f64>,
    #[arg(long, global = true)]
    s: Option<f64>,
    /// Quadrature preset: default or fast.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Seed of Monte Carlo quadrature and of the particle solver.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct DensityArgs {
    /// Density kind (maxwellian, bimaxwellian, heavy_tail, perturbation, histogram, zero).
    #[arg(long)]
    family: Option<String>,
    #[arg(long)]
    separation: Option<f64>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    delta: Option<f64>,
    #[arg(long)]
    wavenumber: Option<f64>,
    /// Histogram CSV for kind = histogram.
    #[arg(long)]
    histogram: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Entropy dissipation of one density.
    Dissipate {
        #[command(flatten)]
        density: DensityArgs,
        /// deterministic or mc.
        #[arg(long)]
        method: Option<String>,
        /// Monte Carlo pairs; accepts 1e6.
        #[arg(long)]
        samples: Option<f64>,
        /// full or psi.
        #[arg(long)]
        variant: Option<String>,
    },
    /// Empirical constants of the dissipation estimates over a family.
    Verify {
        /// Named family: standard, bimaxwellian, maxwellian, lemma or custom.
        #[arg(long)]
        family: Option<String>,
        /// theorem11, prop12, both, holder or construction.
        #[arg(long)]
        claim: Option<String>,
        /// Comma-separated gamma:s pairs, e.g. "-2:0.3,-1:0.25".
        #[arg(long, allow_hyphen_values = true)]
        pairs: Option<String>,
        /// Print the finiteness table of the Hölder chain and exit.
        #[arg(long)]
        predicate_only: bool,
        #[arg(long)]
        gamma_form: bool,
        #[arg(long)]
        radius: Option<f64>,
    },
    /// DSMC relaxation with time-integrated diagnostics.
    Solve {
        #[command(flatten)]
        density: DensityArgs,
        #[arg(long)]
        t_end: Option<f64>,
        #[arg(long)]
        snapshots: Option<usize>,
        #[arg(long)]
        particles: Option<usize>,
        #[arg(long)]
        theta_min: Option<f64>,
        #[arg(long)]
        vrel_floor: Option<f64>,
        #[arg(long)]
        dt: Option<f64>,
    },
    /// Cone of nondegeneracy of K_f at one velocity.
    Cone {
        #[command(flatten)]
        density: DensityArgs,
        /// Comma-separated components of v.
        #[arg(long, allow_hyphen_values = true)]
        v: Option<String>,
        #[arg(long)]
        n_dirs: Option<usize>,
        #[arg(long, allow_hyphen_values = true)]
        lambda: Option<f64>,
    },
    /// Weighted Lebesgue norms and the anisotropic seminorm of one density.
    Norms {
        #[command(flatten)]
        density: DensityArgs,
        #[arg(long)]
        radius: Option<f64>,
    },
}

fn apply_density(cfg: &mut DensityConfig, a: &DensityArgs) {
    if let Some(k) = &a.family {
        cfg.kind = k.clone();
    }
    if a.separation.is_some() {
        cfg.separation = a.separation;
    }
    if let Some(t) = a.temperature {
        cfg.temperature = t;
    }
    if let Some(e) = a.epsilon {
        cfg.epsilon = e;
    }
    if let Some(x) = a.delta {
        cfg.delta = x;
    }
    if let Some(k) = a.wavenumber {
        cfg.wavenumber = k;
    }
    if let Some(p) = &a.histogram {
        cfg.path = Some(p.clone());
    }
}

fn parse_list(text: &str, name: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|x| {
            x.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("{name}: cannot parse {x:?} as a number")))
        })
        .collect()
}

fn parse_pairs(text: &str) -> Result<Vec<[f64; 2]>> {
    text.split(',')
        .map(|pair| {
            let parts: Vec<&str> = pair.split(':').collect();
            if parts.len() != 2 {
                return Err(Error::Config(format!("pairs: expected gamma:s, got {pair:?}")));
            }
            let g = parts[0].trim().parse().map_err(|_| Error::Config(format!("pairs: bad gamma in {pair:?}")))?;
            let s = parts[1].trim().parse().map_err(|_| Error::Config(format!("pairs: bad s in {pair:?}")))?;
            Ok([g, s])
        })
        .collect()
}

/// Loads the config file and applies the flags.
fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.common.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            RunConfig::from_toml(&text)?
        }
        None => RunConfig::default(),
    };
    let c = &cli.common;
    if let Some(o) = &c.out {
        cfg.output.dir = o.clone();
    }
    if c.jobs.is_some() {
        cfg.jobs = c.jobs;
    }
    if c.d.is_some() {
        cfg.kinetic.d = c.d;
    }
    if c.gamma.is_some() {
        cfg.kinetic.gamma = c.gamma;
    }
    if c.s.is_some() {
        cfg.kinetic.s = c.s;
    }
    if let Some(p) = &c.preset {
        cfg.preset = p.clone();
    }
    if let Some(seed) = c.seed {
        cfg.quadrature.insert("seed".into(), toml::Value::Integer(seed as i64));
        cfg.solve.seed = seed;
    }
    match &cli.command {
        Command::Dissipate {
            density,
            method,
            samples,
            variant,
        } => {
            apply_density(&mut cfg.density, density);
            if method.is_some() {
                cfg.dissipate.method = method.clone();
            }
            if let Some(n) = samples {
                if !(*n >= 1.0 && n.fract() == 0.0 && *n < 1e15) {
                    return Err(Error::Config(format!("samples: expected a positive integer, got {n}")));
                }
                cfg.quadrature.insert("mc_samples".into(), toml::Value::Integer(*n as i64));
            }
            if let Some(v) = variant {
                cfg.dissipate.variant = v.clone();
            }
        }
        Command::Verify {
            family,
            claim,
            pairs,
            gamma_form,
            radius,
            ..
        } => {
            if let Some(f) = family {
                cfg.verify.family = f.clone();
            }
            if let Some(c) = claim {
                cfg.verify.claim = c.clone();
            }
            if let Some(p) = pairs {
                cfg.verify.pairs = parse_pairs(p)?;
            }
            if *gamma_form {
                cfg.verify.options.gamma_form = true;
            }
            if let Some(r) = radius {
                cfg.verify.holder_radius = *r;
            }
        }
        Command::Solve {
            density,
            t_end,
            snapshots,
            particles,
            theta_min,
            vrel_floor,
            dt,
        } => {
            apply_density(&mut cfg.density, density);
            if let Some(t) = t_end {
                cfg.solve.t_end = *t;
            }
            if let Some(n) = snapshots {
                cfg.solve.snapshots = *n;
            }
            if let Some(n) = particles {
                cfg.solve.particles = *n;
            }
            if let Some(t) = theta_min {
                cfg.solve.theta_min = *t;
            }
            if let Some(v) = vrel_floor {
                cfg.solve.vrel_floor = *v;
            }
            if dt.is_some() {
                cfg.solve.dt = *dt;
            }
        }
        Command::Cone {
            density,
            v,
            n_dirs,
            lambda,
        } => {
            apply_density(&mut cfg.density, density);
            if let Some(v) = v {
                cfg.cone.v = parse_list(v, "v")?;
            }
            if let Some(n) = n_dirs {
                cfg.cone.options.n_dirs = *n;
            }
            if lambda.is_some() {
                cfg.cone.options.lambda = *lambda;
            }
        }
        Command::Norms { density, radius } => {
            apply_density(&mut cfg.density, density);
            if let Some(r) = radius {
                cfg.norms.seminorm.radius = *r;
            }
        }
    }
    if cfg.jobs.is_none() {
        if let Ok(v) = std::env::var(JOBS_ENV) {
            let n = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{JOBS_ENV}: expected a positive integer, got {v:?}")))?;
            cfg.jobs = Some(n);
        }
    }
    if cfg.jobs == Some(0) {
        return Err(Error::Config("jobs: must be at least 1".into()));
    }
    Ok(cfg)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_config(cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(&cfg.output.dir)?;
    fs::write(cfg.output.dir.join("config.toml"), cfg.resolved()?.to_toml()?)?;
    Ok(())
}

#[derive(Serialize)]
struct DissipationOutput<'a> {
    density: &'a str,
    variant: Variant,
    result: crate::functionals::FunctionalResult,
}

fn cmd_dissipate(cfg: &RunConfig) -> Result<bool> {
    let params = cfg.params()?;
    let spec = cfg.spec()?;
    let f = cfg.density.build(params.d)?;
    let method = match &cfg.dissipate.method {
        Some(m) => m.parse()?,
        None => Method::default_for(params.d),
    };
    let variant: Variant = cfg.dissipate.variant.parse()?;
    write_config(cfg)?;
    let r = entropy_dissipation_with(&f, &params, &spec, variant, method)?;
    let dir = &cfg.output.dir;
    serde_json::to_writer_pretty(
        create(dir, "dissipation.json")?,
        &DissipationOutput {
            density: f.name(),
            variant,
            result: r,
        },
    )?;
    let mut w = csv::Writer::from_writer(create(dir, "dissipation.csv")?);
    w.write_record(["density", "method", "variant", "gamma", "s", "D", "D_err", "nodes_or_samples"])?;
    w.write_record([
        f.name().to_string(),
        format!("{:?}", r.method).to_lowercase(),
        cfg.dissipate.variant.clone(),
        num(params.gamma),
        num(params.s),
        num(r.value),
        num(r.abs_error_estimate),
        r.nodes_or_samples.to_string(),
    ])?;
    w.flush()?;
    println!("D = {} +- {}", num(r.value), num(r.abs_error_estimate));
    Ok(true)
}

fn verify_params(cfg: &RunConfig) -> Result<Vec<KineticParams>> {
    if cfg.verify.pairs.is_empty() {
        return Ok(vec![cfg.params()?]);
    }
    let d = cfg
        .kinetic
        .d
        .ok_or_else(|| Error::Config("missing field `kinetic.d` (set --d or kinetic.d)".into()))?;
    cfg.verify
        .pairs
        .iter()
        .map(|[g, s]| KineticParams::with_constants(d, *g, *s, cfg.kinetic.c_phi.unwrap_or(1.0), cfg.kinetic.c_b.unwrap_or(1.0)))
        .collect()
}

fn verify_family_members(cfg: &RunConfig, d: usize) -> Result<Vec<Density>> {
    let fam = if cfg.verify.family == "custom" {
        cfg.verify.members.iter().map(|m| m.build(d)).collect::<Result<Vec<_>>>()?
    } else {
        verifier::family(&cfg.verify.family, d)?
    };
    if fam.is_empty() {
        return Err(Error::Config("verify.members: the family is empty".into()));
    }
    Ok(fam)
}

fn predicate_table(cfg: &RunConfig) -> Result<()> {
    let grid: Vec<(usize, f64, f64)> = if cfg.verify.pairs.is_empty() {
        let mut g = Vec::new();
        for d in [2usize, 3] {
            for i in 0..=(2 * d) {
                let gamma = -(d as f64) + 0.5 * i as f64;
                for s in [0.1, 0.3, 0.5, 0.7, 0.9] {
                    g.push((d, gamma, s));
                }
            }
        }
        g
    } else {
        let d = cfg.kinetic.d.unwrap_or(3);
        cfg.verify.pairs.iter().map(|[g, s]| (d, *g, *s)).collect()
    };
    fs::create_dir_all(&cfg.output.dir)?;
    let mut w = csv::Writer::from_writer(create(&cfg.output.dir, "predicate.csv")?);
    w.write_record(["d", "gamma", "s", "gamma_plus_2s", "finite", "probe_divergent"])?;
    // Write errors on stdout (a closed pipe) are ignored; the CSV is the artifact.
    let mut stdout = std::io::stdout().lock();
    let _ = writeln!(stdout, "{:>2} {:>6} {:>5} {:>9} {:>7}", "d", "gamma", "s", "gamma+2s", "finite");
    for (d, gamma, s) in grid {
        let p = KineticParams::new(d, gamma, s)?;
        let finite = holder_predicate(&p);
        let probe = third_factor_probe(&p)?;
        let _ = writeln!(stdout, "{d:>2} {gamma:>6.2} {s:>5.2} {:>9.3} {:>7}", gamma + 2.0 * s, finite);
        w.write_record([
            d.to_string(),
            num(gamma),
            num(s),
            num(gamma + 2.0 * s),
            finite.to_string(),
            probe.divergent.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_verify(cfg: &RunConfig, predicate_only: bool) -> Result<bool> {
    if predicate_only {
        write_config(cfg)?;
        predicate_table(cfg)?;
        return Ok(true);
    }
    let spec = cfg.spec()?;
    let all_params = verify_params(cfg)?;
    let fam = verify_family_members(cfg, all_params[0].d)?;
    write_config(cfg)?;
    let dir = &cfg.output.dir;
    let mut ok = true;
    match cfg.verify.claim.as_str() {
        "holder" => {
            let mut reports = Vec::new();
            for p in &all_params {
                for f in &fam {
                    let r = holder_chain(f, cfg.verify.holder_radius, p, &spec)?;
                    ok &= r.holds && r.predicate_matches;
                    reports.push((f.name().to_string(), *p, r));
                }
            }
            serde_json::to_writer_pretty(create(dir, "holder.json")?, &reports)?;
            let mut w = csv::Writer::from_writer(create(dir, "holder.csv")?);
            w.write_record(["member", "gamma", "s", "lhs", "rhs", "predicate", "holds"])?;
            for (name, p, r) in &reports {
                w.write_record([
                    name.clone(),
                    num(p.gamma),
                    num(p.s),
                    num(r.lhs.value),
                    r.rhs.map(|x| num(x.value)).unwrap_or_default(),
                    r.predicate.to_string(),
                    r.holds.to_string(),
                ])?;
            }
            w.flush()?;
        }
        "construction" => {
            let mut reports = Vec::new();
            for p in &all_params {
                for f in &fam {
                    let r = verify_prop22_construction(f, f, p, &spec, &ConstructionOptions::default())?;
                    ok &= r.pass;
                    println!("{}: c_hat = {:?}, min sub-level ratio = {:?}", f.name(), r.c_hat, r.min_sublevel_ratio);
                    reports.push((f.name().to_string(), r));
                }
            }
            serde_json::to_writer_pretty(create(dir, "construction.json")?, &reports)?;
        }
        claim => {
            let claim: Claim = claim.parse()?;
            let mut reports = Vec::new();
            for p in &all_params {
                let id = format!("{}(gamma={},s={})", cfg.verify.family, p.gamma, p.s);
                let r = verifier::verify_family(&id, &fam, p, &spec, claim, &cfg.verify.options)?;
                ok &= r.pass.all();
                println!(
                    "{id}: c_hat_thm = {:?}, c_hat_prop = {:?}, pass = {}",
                    r.c_hat_thm,
                    r.c_hat_prop,
                    r.pass.all()
                );
                reports.push(r);
            }
            serde_json::to_writer_pretty(create(dir, "report.json")?, &reports)?;
            let mut buf = Vec::new();
            for (i, r) in reports.iter().enumerate() {
                let mut one = Vec::new();
                r.write_csv(&mut one)?;
                let text = String::from_utf8_lossy(&one).into_owned();
                let body = if i == 0 {
                    text
                } else {
                    text.lines().skip(1).map(|l| format!("{l}\n")).collect()
                };
                buf.extend_from_slice(body.as_bytes());
            }
            fs::write(dir.join("report.csv"), buf)?;
        }
    }
    Ok(ok)
}

fn cmd_solve(cfg: &RunConfig) -> Result<bool> {
    let params = cfg.params()?;
    let spec = cfg.spec()?;
    let f = cfg.density.build(params.d)?;
    if cfg.solve.snapshots == 0 {
        return Err(Error::Config("solve.snapshots: must be at least 1".into()));
    }
    write_config(cfg)?;
    let (diag, ens) = solver::run(&f, &params, &spec, &cfg.solve)?;
    let dir = &cfg.output.dir;
    diag.write_csv(create(dir, "trajectory.csv")?)?;
    serde_json::to_writer_pretty(create(dir, "trajectory.json")?, &diag)?;
    ens.write_csv(create(dir, "velocities.csv")?)?;
    println!(
        "{} steps, {} collisions, H: {} -> {}",
        diag.steps,
        diag.collisions,
        num(diag.snapshots[0].entropy.value),
        num(diag.snapshots[diag.snapshots.len() - 1].entropy.value)
    );
    Ok(true)
}

fn cmd_cone(cfg: &RunConfig) -> Result<bool> {
    let params = cfg.params()?;
    let spec = cfg.spec()?;
    let f = cfg.density.build(params.d)?;
    let v = &cfg.cone.v;
    if v.len() != params.d {
        return Err(Error::Config(format!("cone.v: expected {} components, got {}", params.d, v.len())));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Config("cone.v: components must be finite".into()));
    }
    let v = Vec3::new(v[0], v[1], if params.d == 3 { v[2] } else { 0.0 });
    let variant: Variant = cfg.cone.variant.parse()?;
    write_config(cfg)?;
    let report = if f.is_zero() {
        crate::kf_kernel::ConeReport {
            v: v.iter().take(params.d).copied().collect(),
            lambda_hat: 0.0,
            measure_hat: 0.0,
            max_alignment: 0.0,
            directions: Vec::new(),
        }
    } else {
        let ev = KernelEvaluator::new(f, params, spec, variant)?;
        cone_estimate_with(&ev, &v, &cfg.cone.options)?
    };
    serde_json::to_writer_pretty(create(&cfg.output.dir, "cone.json")?, &report)?;
    println!("measure_hat = {}, lambda_hat = {}", num(report.measure_hat), num(report.lambda_hat));
    Ok(true)
}

#[derive(Serialize)]
struct NormsOutput {
    density: String,
    p: f64,
    q: f64,
    mass: f64,
    lpq_norm: crate::quadrature::Estimate,
    l1_2_norm: crate::quadrature::Estimate,
    seminorm_sqrt_f: crate::quadrature::Estimate,
}

fn cmd_norms(cfg: &RunConfig) -> Result<bool> {
    let params = cfg.params()?;
    let spec = cfg.spec()?;
    let f = cfg.density.build(params.d)?;
    write_config(cfg)?;
    let e = exponents(&params);
    let out = NormsOutput {
        density: f.name().to_string(),
        p: e.p,
        q: e.q,
        mass: macro_state(&f, &spec)?.mass,
        lpq_norm: lpq_norm(&f, &params, &spec)?,
        l1_2_norm: weighted_lp_norm(&f, params.d, &f.support(&spec), 1.0, 2.0, &spec)?,
        seminorm_sqrt_f: sqrt_seminorm(&f, &params, &spec, &cfg.norms.seminorm)?.value,
    };
    let dir = &cfg.output.dir;
    serde_json::to_writer_pretty(create(dir, "norms.json")?, &out)?;
    let mut w = csv::Writer::from_writer(create(dir, "norms.csv")?);
    w.write_record(["density", "p", "q", "mass", "lpq_norm", "lpq_err", "l1_2_norm", "seminorm", "seminorm_err"])?;
    w.write_record([
        out.density.clone(),
        num(out.p),
        num(out.q),
        num(out.mass),
        num(out.lpq_norm.value),
        num(out.lpq_norm.error),
        num(out.l1_2_norm.value),
        num(out.seminorm_sqrt_f.value),
        num(out.seminorm_sqrt_f.error),
    ])?;
    w.flush()?;
    println!("||f||_Lp_-q = {}, |sqrt f|^2_N = {}", num(out.lpq_norm.value), num(out.seminorm_sqrt_f.value));
    Ok(true)
}

fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        2
    } else {
        1
    }
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let cfg = match resolve(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    };
    if let Some(n) = cfg.jobs {
        // A pool already built by an embedding process is left alone.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let outcome = match &cli.command {
        Command::Dissipate { .. } => cmd_dissipate(&cfg),
        Command::Verify { predicate_only, .. } => cmd_verify(&cfg, *predicate_only),
        Command::Solve { .. } => cmd_solve(&cfg),
        Command::Cone { .. } => cmd_cone(&cfg),
        Command::Norms { .. } => cmd_norms(&cfg),
    };
    match outcome {
        Ok(true) => 0,
        Ok(false) => {
            eprintln!("verification failed; see the report in {}", cfg.output.dir.display());
            2
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
