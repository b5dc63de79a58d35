//! Empirical constants of the dissipation estimates on the bi-Maxwellian family.

use boltzlab::kernel::KineticParams;
use boltzlab::quadrature::QuadratureSpec;
use boltzlab::verifier::{family, verify_family, Claim, VerifyOptions};

fn main() -> boltzlab::Result<()> {
    let params = KineticParams::new(2, -2.0, 0.3)?;
    let fam = family("bimaxwellian", 2)?;
    let opts = VerifyOptions {
        scaling_members: Some(vec![0]),
        ..VerifyOptions::default()
    };
    let r = verify_family("bimaxwellian", &fam, &params, &QuadratureSpec::fast(), Claim::Both, &opts)?;
    for row in &r.rows {
        println!(
            "{:<24} D = {:.4e}  norm = {:.4e}  c_thm = {:?}  c_prop = {:?}",
            row.member,
            row.dissipation.map(|e| e.value).unwrap_or(f64::NAN),
            row.norm_lpq.map(|e| e.value).unwrap_or(f64::NAN),
            row.c_thm,
            row.c_prop
        );
    }
    println!("c_hat_thm = {:?}  c_hat_prop = {:?}  pass = {}", r.c_hat_thm, r.c_hat_prop, r.pass.all());
    r.write_csv(std::io::stdout())?;
    Ok(())
}
