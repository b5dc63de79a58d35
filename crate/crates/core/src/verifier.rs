//! Empirical constants for the dissipation inequalities over density families,
//! the construction behind the quadratic-form lower bound and the Hölder chain
//! for the time-integrated diagnostics.
//!
//! Every ratio is formed from error-widened quantities: numerators at their lower
//! end, denominators at their upper end.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::{macro_state, Density, Field, VelocityGrid};
use crate::error::{Error, Result};
use crate::functionals::{cancellation_term, dissipation_bundle, entropy_dissipation, quadratic_form, Route};
use crate::geometry::{bracket, lpq_norm, sqrt_seminorm, weighted_lp_norm, SeminormOptions};
use crate::kernel::{exponents, KineticParams, Variant};
use crate::kf_kernel::{cone_estimate_with, ConeOptions, KernelEvaluator};
use crate::quadrature::{adaptive, composite, directions, geometric_breaks, uniform_breaks, Estimate, QuadratureSpec};
use crate::Vec3;

/// Members whose dissipation error exceeds this fraction of D are excluded.
pub const UNRESOLVED_FRACTION: f64 = 0.1;

fn bimax(d: usize, weights: [f64; 2], means: [[f64; 2]; 2], temps: [f64; 2]) -> Result<Density> {
    let m = |x: [f64; 2]| Vec3::new(x[0], x[1], 0.0);
    Density::bi_maxwellian(d, weights, [m(means[0]), m(means[1])], temps)
}

fn symmetric_bimax(d: usize, sep: f64) -> Result<Density> {
    Ok(bimax(d, [0.5, 0.5], [[0.5 * sep, 0.0], [-0.5 * sep, 0.0]], [1.0, 1.0])?.with_name(format!("bimax(sep={sep})")))
}

/// Named density families. `standard` has twenty members: symmetric and skewed
/// bi-Maxwellians, Maxwellians, power tails, cosine perturbations and transformed
/// and rotated bi-Maxwellians.
pub fn family(name: &str, d: usize) -> Result<Vec<Density>> {
    let seps = [1.0, 2.0, 4.0, 8.0];
    match name {
        "bimaxwellian" => seps.iter().map(|&s| symmetric_bimax(d, s)).collect(),
        "maxwellian" => maxwellians(d),
        "lemma" => Ok(vec![
            symmetric_bimax(d, 2.0)?,
            symmetric_bimax(d, 4.0)?,
            bimax(d, [0.7, 0.3], [[1.0, 0.5], [-1.0, 0.0]], [0.5, 2.0])?.with_name("bimax(skewed)"),
            Density::product_perturbation(d, 1.0, 0.5, 1.5)?,
            Density::heavy_tail(d, 1.0)?,
        ]),
        "standard" => {
            let mut out: Vec<Density> = seps.iter().map(|&s| symmetric_bimax(d, s)).collect::<Result<_>>()?;
            out.push(bimax(d, [0.7, 0.3], [[1.0, 0.5], [-1.0, 0.0]], [0.5, 2.0])?.with_name("bimax(skewed)"));
            out.push(bimax(d, [0.8, 0.2], [[0.0, 0.0], [3.0, 0.0]], [1.0, 0.5])?.with_name("bimax(beam)"));
            out.extend(maxwellians(d)?);
            out.push(Density::heavy_tail(d, 0.5)?);
            out.push(Density::heavy_tail(d, 1.0)?);
            out.push(Density::product_perturbation(d, 1.0, 0.5, 1.5)?);
            out.push(Density::product_perturbation(d, 1.0, 0.3, 1.0)?);
            out.push(Density::product_perturbation(d, 0.7, 0.8, 2.0)?);
            out.push(Density::product_perturbation(d, 1.5, 0.5, 0.8)?);
            let base = symmetric_bimax(d, 4.0)?;
            out.push(base.shifted(Vec3::new(1.0, 1.0, 0.0))?.with_name("bimax(sep=4,shift=(1,1))"));
            out.push(base.dilated(2.0)?.with_name("bimax(sep=4,lambda=2)"));
            out.push(symmetric_bimax(d, 2.0)?.scaled(3.0)?.with_name("bimax(sep=2,a=3)"));
            out.push(bimax(d, [0.5, 0.5], [[0.0, 1.5], [0.0, -1.5]], [1.0, 1.0])?.with_name("bimax(vertical)"));
            out.push(bimax(d, [0.5, 0.5], [[1.0, 1.0], [-1.0, -1.0]], [0.5, 1.5])?.with_name("bimax(diagonal)"));
            Ok(out)
        }
        other => Err(Error::invalid(
            "family",
            format!("unknown family {other}; expected standard, bimaxwellian, maxwellian or lemma"),
        )),
    }
}

fn maxwellians(d: usize) -> Result<Vec<Density>> {
    Ok(vec![
        Density::maxwellian(d, Vec3::zeros(), 1.0, 1.0)?.with_name("maxwellian(T=1)"),
        Density::maxwellian(d, Vec3::new(1.0, -0.5, 0.0), 0.5, 1.0)?.with_name("maxwellian(T=0.5,shifted)"),
        Density::maxwellian(d, Vec3::zeros(), 2.0, 2.0)?.with_name("maxwellian(T=2,m=2)"),
    ])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Claim {
    Theorem11,
    Prop12,
    Both,
}

impl Claim {
    fn lebesgue(self) -> bool {
        matches!(self, Claim::Theorem11 | Claim::Both)
    }

    fn sobolev(self) -> bool {
        matches!(self, Claim::Prop12 | Claim::Both)
    }
}

impl std::str::FromStr for Claim {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "theorem11" => Ok(Claim::Theorem11),
            "prop12" => Ok(Claim::Prop12),
            "both" => Ok(Claim::Both),
            other => Err(Error::invalid("claim", format!("expected theorem11, prop12 or both, got {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifyOptions {
    /// Also evaluate Gamma(sqrt f) through the combined sphere sweep (slow).
    pub gamma_form: bool,
    /// Family indices used for the scaling sweep; `None` takes the first three
    /// resolved non-equilibrium members.
    pub scaling_members: Option<Vec<usize>>,
    /// Amplitudes a and dilations lambda applied to each sweep member (1 is the base).
    pub scaling_factors: Vec<f64>,
    /// Seminorm radii rho of the enlargement check, and the enlargement factor.
    pub enlargement_radii: Vec<f64>,
    pub enlargement_factor: f64,
    pub seminorm: SeminormOptions,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            gamma_form: false,
            scaling_members: None,
            scaling_factors: vec![0.25, 4.0],
            enlargement_radii: vec![0.3, 0.6],
            enlargement_factor: 1.5,
            seminorm: SeminormOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "reason", rename_all = "snake_case")]
pub enum MemberStatus {
    Included,
    /// Maxwellians: D = 0 and the claim is a consistency statement only.
    Equilibrium,
    Unresolved(String),
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberRow {
    pub member: String,
    pub status: MemberStatus,
    pub m0: f64,
    pub dissipation: Option<Estimate>,
    pub gamma_form: Option<Estimate>,
    /// I2 through the exact cancellation profile.
    pub i2: Option<Estimate>,
    /// sup S_psi * M0^2 (or the higher-moment form for gamma > 0).
    pub i2_bound: Option<f64>,
    pub i2_coarse_bound: Option<f64>,
    pub norm_lpq: Option<Estimate>,
    pub seminorm: Option<Estimate>,
    /// (D + I2) / ||f||_{L^p_{-q}}, conservative.
    pub c_thm: Option<f64>,
    /// The same with the mass bound and with the coarse bound in place of I2.
    pub c_thm_mass_bound: Option<f64>,
    pub c_thm_coarse: Option<f64>,
    /// (D + I2) / |sqrt f|^2_N, conservative.
    pub c_prop: Option<f64>,
}

impl MemberRow {
    fn empty(member: String, m0: f64) -> Self {
        MemberRow {
            member,
            status: MemberStatus::Included,
            m0,
            dissipation: None,
            gamma_form: None,
            i2: None,
            i2_bound: None,
            i2_coarse_bound: None,
            norm_lpq: None,
            seminorm: None,
            c_thm: None,
            c_thm_mass_bound: None,
            c_thm_coarse: None,
            c_prop: None,
        }
    }

    pub fn included(&self) -> bool {
        self.status == MemberStatus::Included
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub member: String,
    /// "amplitude" (f -> a f) or "dilation" (f -> lambda^{-d} f(./lambda)).
    pub transform: String,
    pub factor: f64,
    pub status: MemberStatus,
    pub c_thm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnlargementRow {
    pub member: String,
    pub rho: f64,
    pub inner: Estimate,
    pub outer: Estimate,
    /// Upper end of the outer seminorm over the lower end of the inner one.
    pub ratio: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PassFlags {
    pub theorem11: Option<bool>,
    pub prop12: Option<bool>,
    /// No sweep member collapses to a nonpositive constant.
    pub scaling: Option<bool>,
    pub enlargement: Option<bool>,
}

impl PassFlags {
    pub fn all(&self) -> bool {
        [self.theorem11, self.prop12, self.scaling, self.enlargement]
            .iter()
            .all(|f| f.unwrap_or(true))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub family_id: String,
    pub claim: Claim,
    pub params: KineticParams,
    pub rows: Vec<MemberRow>,
    pub c_hat_thm: Option<f64>,
    pub c_hat_thm_mass_bound: Option<f64>,
    pub c_hat_thm_coarse: Option<f64>,
    pub c_hat_prop: Option<f64>,
    pub scaling: Vec<ScalingRow>,
    /// Smallest sweep constant over c_hat_thm of the base family.
    pub scaling_min_ratio: Option<f64>,
    pub enlargement: Vec<EnlargementRow>,
    pub excluded: Vec<String>,
    pub pass: PassFlags,
}

impl VerificationReport {
    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }

    /// Columns: family, member, D, D_err, gamma_form, norm_lpq, seminorm, I2, M0,
    /// c_hat_candidate. Missing values are left empty.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "family",
            "member",
            "D",
            "D_err",
            "gamma_form",
            "norm_lpq",
            "seminorm",
            "I2",
            "M0",
            "c_hat_candidate",
        ])?;
        let num = |x: Option<f64>| x.map(|v| format!("{v:.16e}")).unwrap_or_default();
        for r in &self.rows {
            let candidate = if self.claim.lebesgue() { r.c_thm } else { r.c_prop };
            w.write_record([
                self.family_id.clone(),
                r.member.clone(),
                num(r.dissipation.map(|e| e.value)),
                num(r.dissipation.map(|e| e.error)),
                num(r.gamma_form.map(|e| e.value)),
                num(r.norm_lpq.map(|e| e.value)),
                num(r.seminorm.map(|e| e.value)),
                num(r.i2.map(|e| e.value)),
                num(Some(r.m0)),
                num(candidate),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Conservative lower bound of numerator / denominator.
fn ratio_lower(numerator: f64, denominator: Estimate) -> Option<f64> {
    let den = denominator.upper();
    (den > 0.0 && den.is_finite()).then(|| numerator / den)
}

fn total_mass(f: &Density, spec: &QuadratureSpec) -> Result<f64> {
    match f.mass() {
        Some(m) => Ok(m),
        None => Ok(macro_state(f, spec)?.mass),
    }
}

fn evaluate_member(
    f: &Density,
    params: &KineticParams,
    spec: &QuadratureSpec,
    claim: Claim,
    opts: &VerifyOptions,
) -> Result<MemberRow> {
    let mut row = MemberRow::empty(f.name().to_string(), total_mass(f, spec)?);
    match fill_member(&mut row, f, params, spec, claim, opts) {
        Ok(()) => {}
        Err(e) if e.is_numerical() => row.status = MemberStatus::Failed(e.to_string()),
        Err(e) => return Err(e),
    }
    if row.status == MemberStatus::Included && f.is_maxwellian() {
        row.status = MemberStatus::Equilibrium;
    }
    Ok(row)
}

fn fill_member(
    row: &mut MemberRow,
    f: &Density,
    params: &KineticParams,
    spec: &QuadratureSpec,
    claim: Claim,
    opts: &VerifyOptions,
) -> Result<()> {
    let dis = if opts.gamma_form {
        let b = dissipation_bundle(f, params, spec)?;
        row.gamma_form = Some(b.gamma_sqrt_f.estimate());
        b.d_full.estimate()
    } else {
        entropy_dissipation(f, params, spec, Variant::Full)?.estimate()
    };
    row.dissipation = Some(dis);
    let cancel = cancellation_term(f, params, spec)?;
    let i2 = cancel.result.estimate();
    row.i2 = Some(i2);
    row.i2_bound = Some(cancel.bound);
    row.i2_coarse_bound = Some(cancel.coarse_bound);
    if dis.error > UNRESOLVED_FRACTION * dis.value.abs() && !f.is_maxwellian() {
        row.status = MemberStatus::Unresolved(format!(
            "dissipation error {:.3e} exceeds {} of D = {:.3e}",
            dis.error, UNRESOLVED_FRACTION, dis.value
        ));
    }
    let numerator = dis.lower() + i2.lower();
    if claim.lebesgue() {
        let norm = lpq_norm(f, params, spec)?;
        row.norm_lpq = Some(norm);
        row.c_thm = ratio_lower(numerator, norm);
        row.c_thm_mass_bound = ratio_lower(dis.lower() + cancel.bound, norm);
        row.c_thm_coarse = ratio_lower(dis.lower() + cancel.coarse_bound, norm);
    }
    if claim.sobolev() {
        let semi = sqrt_seminorm(f, params, spec, &opts.seminorm)?.value;
        row.seminorm = Some(semi);
        row.c_prop = ratio_lower(numerator, semi);
    }
    Ok(())
}

fn min_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    values.fold(None, |acc, v| match (acc, v) {
        (None, v) => v,
        (Some(a), Some(b)) => Some(a.min(b)),
        (a, None) => a,
    })
}

/// Evaluates every member of `family` and extracts the empirical constants of the
/// requested claims.
pub fn verify_family(
    family_id: &str,
    family: &[Density],
    params: &KineticParams,
    spec: &QuadratureSpec,
    claim: Claim,
    opts: &VerifyOptions,
) -> Result<VerificationReport> {
    params.validate()?;
    spec.validate()?;
    if family.is_empty() {
        return Err(Error::invalid("family", "is empty"));
    }
    if let Some(f) = family.iter().find(|f| f.d() != params.d) {
        return Err(Error::invalid("family", format!("member {} has the wrong dimension", f.name())));
    }
    if claim.sobolev() && params.gamma > 0.0 {
        return Err(Error::invalid("gamma", "the anisotropic estimate needs gamma <= 0"));
    }
    let rows: Vec<MemberRow> = family
        .par_iter()
        .map(|f| evaluate_member(f, params, spec, claim, opts))
        .collect::<Result<_>>()?;
    let included = || rows.iter().filter(|r| r.included());
    let excluded: Vec<String> = rows
        .iter()
        .filter(|r| matches!(r.status, MemberStatus::Unresolved(_) | MemberStatus::Failed(_)))
        .map(|r| r.member.clone())
        .collect();
    let any = included().next().is_some();
    let mut report = VerificationReport {
        family_id: family_id.to_string(),
        claim,
        params: *params,
        c_hat_thm: min_of(included().map(|r| r.c_thm)),
        c_hat_thm_mass_bound: min_of(included().map(|r| r.c_thm_mass_bound)),
        c_hat_thm_coarse: min_of(included().map(|r| r.c_thm_coarse)),
        c_hat_prop: min_of(included().map(|r| r.c_prop)),
        rows: Vec::new(),
        scaling: Vec::new(),
        scaling_min_ratio: None,
        enlargement: Vec::new(),
        excluded,
        pass: PassFlags::default(),
    };
    if claim.lebesgue() {
        report.pass.theorem11 = Some(any && report.c_hat_thm.is_some_and(|c| c > 0.0));
        let picks: Vec<usize> = match &opts.scaling_members {
            Some(list) => list.clone(),
            None => (0..rows.len()).filter(|&i| rows[i].included()).take(3).collect(),
        };
        if !picks.is_empty() && !opts.scaling_factors.is_empty() {
            report.scaling = scaling_sweep(family, &rows, &picks, params, spec, opts)?;
            let sweep_min = min_of(report.scaling.iter().map(|r| r.c_thm));
            report.scaling_min_ratio = match (sweep_min, report.c_hat_thm) {
                (Some(s), Some(c)) if c > 0.0 => Some(s / c),
                _ => None,
            };
            report.pass.scaling = Some(
                report
                    .scaling
                    .iter()
                    .all(|r| r.status != MemberStatus::Included || r.c_thm.is_some_and(|c| c > 0.0)),
            );
        }
    }
    if claim.sobolev() {
        report.pass.prop12 = Some(any && report.c_hat_prop.is_some_and(|c| c > 0.0));
        if !opts.enlargement_radii.is_empty() {
            report.enlargement = enlargement(family, &rows, params, spec, opts)?;
            report.pass.enlargement = Some(
                !report.enlargement.is_empty() && report.enlargement.iter().all(|r| r.ratio.is_finite() && r.ratio > 0.0),
            );
        }
    }
    report.rows = rows;
    Ok(report)
}

fn scaling_sweep(
    family: &[Density],
    rows: &[MemberRow],
    picks: &[usize],
    params: &KineticParams,
    spec: &QuadratureSpec,
    opts: &VerifyOptions,
) -> Result<Vec<ScalingRow>> {
    let mut jobs = Vec::new();
    for &i in picks {
        let f = family
            .get(i)
            .ok_or_else(|| Error::invalid("scaling_members", format!("index {i} outside the family")))?;
        if !rows[i].included() {
            continue;
        }
        for &a in &opts.scaling_factors {
            jobs.push(("amplitude", a, f.scaled(a)?));
        }
        for &l in &opts.scaling_factors {
            jobs.push(("dilation", l, f.dilated(l)?));
        }
    }
    let sweep_opts = VerifyOptions {
        gamma_form: false,
        ..opts.clone()
    };
    jobs.par_iter()
        .map(|(transform, factor, g)| {
            let row = evaluate_member(g, params, spec, Claim::Theorem11, &sweep_opts)?;
            Ok(ScalingRow {
                member: row.member.clone(),
                transform: transform.to_string(),
                factor: *factor,
                c_thm: row.c_thm,
                status: row.status,
            })
        })
        .collect()
}

fn enlargement(
    family: &[Density],
    rows: &[MemberRow],
    params: &KineticParams,
    spec: &QuadratureSpec,
    opts: &VerifyOptions,
) -> Result<Vec<EnlargementRow>> {
    let mut jobs = Vec::new();
    for (f, row) in family.iter().zip(rows) {
        if row.included() {
            for &rho in &opts.enlargement_radii {
                jobs.push((f, rho));
            }
        }
    }
    jobs.par_iter()
        .map(|(f, rho)| {
            let at = |radius: f64| {
                let o = SeminormOptions {
                    radius,
                    ..opts.seminorm
                };
                sqrt_seminorm(f, params, spec, &o).map(|r| r.value)
            };
            let inner = at(*rho)?;
            let outer = at(rho * opts.enlargement_factor)?;
            let lo = inner.lower();
            Ok(EnlargementRow {
                member: f.name().to_string(),
                rho: *rho,
                inner,
                outer,
                ratio: if lo > 0.0 { outer.upper() / lo } else { f64::INFINITY },
            })
        })
        .collect()
}

pub fn verify_theorem11(
    family_id: &str,
    family: &[Density],
    params: &KineticParams,
    spec: &QuadratureSpec,
    opts: &VerifyOptions,
) -> Result<VerificationReport> {
    verify_family(family_id, family, params, spec, Claim::Theorem11, opts)
}

pub fn verify_prop12(
    family_id: &str,
    family: &[Density],
    params: &KineticParams,
    spec: &QuadratureSpec,
    opts: &VerifyOptions,
) -> Result<VerificationReport> {
    verify_family(family_id, family, params, spec, Claim::Prop12, opts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConstructionOptions {
    /// Velocities at which the radius R(v) and the sub-level set are examined.
    pub points: Vec<[f64; 3]>,
    /// The constant C in g(v)^p R^d <v>^{-qp-1} = C ||g||^p.
    pub radius_constant: f64,
    pub truncations: Vec<f64>,
    pub cone: ConeOptions,
    pub route: Route,
}

impl Default for ConstructionOptions {
    fn default() -> Self {
        let (c, s) = (0.3f64.cos(), 0.3f64.sin());
        ConstructionOptions {
            points: [0.0, 1.0, 2.0, 4.0].iter().map(|&r| [r * c, r * s, 0.0]).collect(),
            radius_constant: 16.0,
            truncations: vec![1.0, 10.0, 100.0],
            cone: ConeOptions {
                n_dirs: 128,
                radii: vec![0.25, 0.5, 1.0],
                lambda: None,
                target_fraction: 0.25,
            },
            route: Route::Sphere,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubLevelRow {
    pub v: Vec<f64>,
    pub g: f64,
    pub radius: f64,
    pub cone_measure: f64,
    /// |{v' in B_R(v) cap Xi(v) : g(v') <= g(v)/2}|.
    pub sublevel_measure: f64,
    /// sublevel_measure / (R^d <v>^{-1}).
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstructionReport {
    pub params: KineticParams,
    pub norm: Estimate,
    /// ||g||_{L^1_2} on the truncated domain; `None` when the tail check fails.
    pub l1_2: Option<Estimate>,
    pub gamma_form: Estimate,
    pub c_hat: Option<f64>,
    pub samples: Vec<SubLevelRow>,
    pub min_sublevel_ratio: Option<f64>,
    pub truncations: Vec<(f64, Estimate)>,
    pub monotone: bool,
    pub flags: Vec<String>,
    pub pass: bool,
}

/// Rebuilds the radius R(v) of the quadratic-form lower bound at sample points,
/// measures the sub-level set inside the cone of nondegeneracy of f, and compares
/// Gamma(g) with ||g||_{L^p_{-q}}.
pub fn verify_prop22_construction<G: Field + ?Sized>(
    f: &Density,
    g: &G,
    params: &KineticParams,
    spec: &QuadratureSpec,
    opts: &ConstructionOptions,
) -> Result<ConstructionReport> {
    params.validate()?;
    spec.validate()?;
    if !(opts.radius_constant > 0.0) {
        return Err(Error::invalid("radius_constant", "must be positive"));
    }
    let d = params.d;
    let dd = d as f64;
    let e = exponents(params);
    let domain = f.support(spec);
    let mut flags = Vec::new();
    let norm = weighted_lp_norm(g, d, &domain, e.p, -e.q, spec)?;
    let l1_2 = match weighted_lp_norm(g, d, &domain, 1.0, 2.0, spec) {
        Ok(n) => Some(n),
        Err(Error::Divergent(msg)) => {
            flags.push(format!("g is not in L^1_2 ({msg}); constants make the quadratic form vanish"));
            None
        }
        Err(e) => return Err(e),
    };
    let ev = KernelEvaluator::new(f.clone(), *params, spec.clone(), Variant::Psi)?;
    let norm_p = norm.value.powf(e.p);
    let mut samples = Vec::new();
    for x in &opts.points {
        let v = Vec3::new(x[0], x[1], if d == 3 { x[2] } else { 0.0 });
        let gv = g.value(&v);
        if !(gv > 0.0) {
            flags.push(format!("g vanishes at {v:?}; point skipped"));
            continue;
        }
        let br = bracket(&v);
        let radius = (opts.radius_constant * norm_p * br.powf(e.q * e.p + 1.0) / gv.powf(e.p)).powf(1.0 / dd);
        let cone = cone_estimate_with(&ev, &v, &opts.cone)?;
        if cone.measure_hat == 0.0 || cone.directions.is_empty() {
            flags.push(format!("cone at {v:?} is empty"));
            samples.push(SubLevelRow {
                v: cone.v,
                g: gv,
                radius,
                cone_measure: 0.0,
                sublevel_measure: 0.0,
                ratio: 0.0,
            });
            continue;
        }
        let radial = composite(&uniform_breaks(0.0, radius, radius / 32.0), 4);
        let per_direction = cone.measure_hat / cone.directions.len() as f64;
        let mut sub = 0.0;
        for sigma in &cone.directions {
            let s = Vec3::new(sigma[0], sigma[1], if d == 3 { sigma[2] } else { 0.0 });
            for &(r, w) in &radial {
                if g.value(&(v + r * s)) <= 0.5 * gv {
                    sub += per_direction * w * r.powi(d as i32 - 1);
                }
            }
        }
        samples.push(SubLevelRow {
            v: cone.v,
            g: gv,
            radius,
            cone_measure: cone.measure_hat,
            sublevel_measure: sub,
            ratio: sub * br / radius.powf(dd),
        });
    }
    let min_sublevel_ratio = samples.iter().map(|s| s.ratio).reduce(f64::min);
    let gamma_form = quadratic_form(g, f, params, spec, opts.route)?.estimate();
    let c_hat = ratio_lower(gamma_form.lower(), norm);
    let mut truncations = Vec::new();
    for &m in &opts.truncations {
        let gm = |v: &Vec3| g.value(v).min(m);
        truncations.push((m, quadratic_form(&gm, f, params, spec, opts.route)?.estimate()));
    }
    let monotone = truncations.windows(2).all(|w| w[1].1.upper() >= w[0].1.lower());
    if gamma_form.upper() <= 0.0 {
        flags.push("quadratic form vanishes".into());
    }
    let pass = c_hat.is_some_and(|c| c > 0.0)
        && min_sublevel_ratio.is_some_and(|r| r > 0.0)
        && monotone
        && samples.iter().all(|s| s.cone_measure > 0.0);
    Ok(ConstructionReport {
        params: *params,
        norm,
        l1_2,
        gamma_form,
        c_hat,
        samples,
        min_sublevel_ratio,
        truncations,
        monotone,
        flags,
        pass,
    })
}

/// Whether the third Hölder factor sup_v || |v - .|^{gamma+2} ||_{L^{p'}(B_R)} is finite:
/// gamma + 2s > -2.
pub fn holder_predicate(params: &KineticParams) -> bool {
    params.gamma + 2.0 * params.s > -2.0
}

/// Integrals of |u|^a over eps < |u| < 1 for shrinking eps, a = (gamma + 2) d / (2s).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceProbe {
    pub exponent: f64,
    pub cutoffs: Vec<f64>,
    pub partial: Vec<f64>,
    /// Increments between successive cutoffs stop shrinking.
    pub divergent: bool,
}

pub fn third_factor_probe(params: &KineticParams) -> Result<DivergenceProbe> {
    let dd = params.dim();
    let a = (params.gamma + 2.0) * dd / (2.0 * params.s);
    let area = params.sphere_area();
    // In t = ln r the radial integrand r^{a+d-1} dr becomes e^{(a+d) t} dt.
    let k = a + dd;
    let cutoffs: Vec<f64> = (1..=6).map(|i| 10f64.powi(-2 * i)).collect();
    let mut partial = Vec::new();
    for &eps in &cutoffs {
        let lo = eps.ln();
        let scale = (k * lo).exp().max(1.0) * lo.abs();
        let est = adaptive(&|t: f64| (k * t).exp(), lo, 0.0, 1e-12 * scale)?;
        partial.push(area * est.value);
    }
    let inc: Vec<f64> = partial.windows(2).map(|w| w[1] - w[0]).collect();
    let divergent = inc.windows(2).all(|w| w[1] >= w[0] * (1.0 - 1e-9)) && inc.iter().all(|&x| x > 0.0);
    Ok(DivergenceProbe {
        exponent: a,
        cutoffs,
        partial,
        divergent,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HolderReport {
    pub radius: f64,
    /// int int_{B_R x B_R, |v - v*| <= 1} f f* |v - v*|^{gamma+2}.
    pub lhs: Estimate,
    pub l1: Estimate,
    /// ||f||_{L^p(B_R)}.
    pub lp_ball: Estimate,
    /// sup_v || |v - .|^{gamma+2} ||_{L^{p'}(B_R)}; `None` when divergent.
    pub third: Option<Estimate>,
    pub rhs: Option<Estimate>,
    pub predicate: bool,
    pub probe: DivergenceProbe,
    pub predicate_matches: bool,
    /// lhs (upper) <= rhs (lower); vacuously true for a divergent third factor.
    pub holds: bool,
}

/// Polar rule on the ball |v| <= radius.
fn ball_rule(d: usize, radius: f64, core: f64, spec: &QuadratureSpec) -> Vec<(Vec3, f64)> {
    let radial = composite(
        &uniform_breaks(0.0, radius, 0.5 * spec.radial_panel * core.min(radius)),
        spec.radial_order,
    );
    let n = spec.direction_nodes.max((8.0 * radius / core).ceil() as usize);
    let dirs = directions(d, n);
    let mut out = Vec::with_capacity(radial.len() * dirs.len());
    for &(r, wr) in &radial {
        for (e, we) in &dirs {
            out.push((r * e, wr * we * r.powi(d as i32 - 1)));
        }
    }
    out
}

/// Distance from v (inside the ball) to the sphere |x| = radius along e.
fn exit_distance(v: &Vec3, e: &Vec3, radius: f64) -> f64 {
    let b = v.dot(e);
    let c = v.norm_squared() - radius * radius;
    (-b + (b * b - c).max(0.0).sqrt()).max(0.0)
}

fn holder_pass(f: &Density, radius: f64, params: &KineticParams, spec: &QuadratureSpec) -> (f64, f64) {
    let d = params.d;
    let p = exponents(params).p;
    let core = f.support(spec).core;
    let outer = ball_rule(d, radius, core, spec);
    let dirs = directions(d, spec.direction_nodes);
    let power = params.gamma + 2.0 + (d as f64 - 1.0);
    let order = spec.grading_order.max(2);
    let lhs: f64 = outer
        .par_iter()
        .map(|(v, wv)| {
            let fv = f.eval(v);
            if fv == 0.0 {
                return 0.0;
            }
            let mut inner = 0.0;
            for (e, we) in &dirs {
                let top = exit_distance(v, e, radius).min(1.0);
                if top <= 0.0 {
                    continue;
                }
                let mut breaks = vec![0.0];
                breaks.extend(geometric_breaks(spec.graded_min * top, top, spec.grading_ratio));
                for (r, wr) in composite(&breaks, order) {
                    inner += we * wr * f.eval(&(v + r * e)) * r.powf(power);
                }
            }
            wv * fv * inner
        })
        .sum();
    let lp: f64 = outer.iter().map(|(v, w)| w * f.eval(v).powf(p)).sum();
    (lhs, lp)
}

/// Both sides of the Hölder bound behind the time-integrated Lebesgue estimate.
pub fn holder_chain(f: &Density, radius: f64, params: &KineticParams, spec: &QuadratureSpec) -> Result<HolderReport> {
    params.validate()?;
    spec.validate()?;
    if params.gamma > 0.0 {
        return Err(Error::invalid("gamma", "the Hölder chain is stated for gamma <= 0"));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::invalid("radius", format!("must be positive, got {radius}")));
    }
    if f.d() != params.d {
        return Err(Error::invalid("d", "density and kinetic parameters disagree on the dimension"));
    }
    let d = params.d;
    let dd = d as f64;
    let e = exponents(params);
    let predicate = holder_predicate(params);
    let probe = third_factor_probe(params)?;
    let (lhs, lp, l1) = if f.is_zero() {
        (Estimate::default(), Estimate::default(), Estimate::default())
    } else {
        let fine = holder_pass(f, radius, params, spec);
        let coarse = holder_pass(f, radius, params, &spec.coarse());
        let lhs = Estimate::new(fine.0, (fine.0 - coarse.0).abs());
        let lp_value = fine.1.max(0.0).powf(1.0 / e.p);
        let lp_err = if fine.1 > 0.0 {
            lp_value / e.p * (fine.1 - coarse.1).abs() / fine.1
        } else {
            0.0
        };
        let l1_at = |n: usize| VelocityGrid::for_density(f, spec, n).integrate(|v| f.eval(v).abs());
        let n = 2 * spec.velocity_nodes;
        let l1_fine = l1_at(n);
        let l1_coarse = l1_at((n as f64 * spec.coarse_factor).round() as usize);
        let tail = f.tail_fraction(f.support(spec).radius, spec) * l1_fine;
        (
            lhs,
            Estimate::new(lp_value, lp_err),
            Estimate::new(l1_fine, (l1_fine - l1_coarse).abs() + tail),
        )
    };
    // Conjugate exponent p' = d / (2s) and the power a = (gamma + 2) p'.
    let pc = dd / (2.0 * params.s);
    let a = (params.gamma + 2.0) * pc;
    let third = if a + dd > 0.0 {
        let at = |n: usize| -> f64 {
            let dirs = directions(d, n);
            (0..=4)
                .map(|i| {
                    let v = Vec3::new(radius * i as f64 / 4.0, 0.0, 0.0);
                    let j: f64 = dirs
                        .iter()
                        .map(|(e, w)| w * exit_distance(&v, e, radius).powf(a + dd) / (a + dd))
                        .sum();
                    j.powf(1.0 / pc)
                })
                .fold(0.0, f64::max)
        };
        let n = if d == 2 { 512 } else { 64 };
        let (fine, coarse) = (at(n), at(n / 2));
        Some(Estimate::new(fine, (fine - coarse).abs()))
    } else {
        None
    };
    let rhs = third.map(|t| {
        let value = l1.value * lp.value * t.value;
        let upper = l1.upper() * lp.upper() * t.upper();
        let lower = l1.lower().max(0.0) * lp.lower().max(0.0) * t.lower().max(0.0);
        Estimate::new(value, (upper - value).max(value - lower))
    });
    let holds = match rhs {
        Some(r) => lhs.upper() <= r.lower() || (lhs.value == 0.0 && r.value == 0.0),
        None => true,
    };
    Ok(HolderReport {
        radius,
        lhs,
        l1,
        lp_ball: lp,
        third,
        rhs,
        predicate,
        predicate_matches: predicate == !probe.divergent,
        probe,
        holds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_family_has_twenty_members() {
        let fam = family("standard", 2).unwrap();
        assert_eq!(fam.len(), 20);
        assert_eq!(fam.iter().filter(|f| f.is_maxwellian()).count(), 3);
        assert!(family("nope", 2).is_err());
    }

    #[test]
    fn predicate_matches_probe_on_both_sides() {
        for (d, g, s) in [(3, -3.0, 0.6), (3, -3.0, 0.4), (3, -2.5, 0.2), (3, -2.5, 0.4), (2, -2.0, 0.3), (3, -2.9, 0.45)] {
            let p = KineticParams::new(d, g, s).unwrap();
            let probe = third_factor_probe(&p).unwrap();
            assert_eq!(holder_predicate(&p), !probe.divergent, "{d} {g} {s}: {probe:?}");
        }
    }

    #[test]
    fn holder_chain_for_zero_and_maxwellian() {
        let p = KineticParams::new(2, -1.5, 0.4).unwrap();
        let spec = QuadratureSpec::fast();
        let z = holder_chain(&Density::zero(2).unwrap(), 4.0, &p, &spec).unwrap();
        assert_eq!(z.lhs.value, 0.0);
        assert!(z.holds);
        let m = Density::maxwellian(2, Vec3::zeros(), 1.0, 1.0).unwrap();
        let r = holder_chain(&m, 4.0, &p, &spec).unwrap();
        assert!(r.holds && r.predicate && r.predicate_matches, "{r:?}");
        assert!(r.lhs.value > 0.0 && r.lhs.error < 1e-3 * r.lhs.value, "{r:?}");
        assert!((r.l1.value - 1.0).abs() < 1e-8);
    }

    #[test]
    fn exit_distance_hits_the_sphere() {
        let v = Vec3::new(0.3, -0.2, 0.0);
        let e = Vec3::new(0.6, 0.8, 0.0);
        let t = exit_distance(&v, &e, 2.0);
        assert!(((v + t * e).norm() - 2.0).abs() < 1e-12);
    }
}
