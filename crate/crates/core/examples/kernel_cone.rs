//! Cone of nondegeneracy of K_f for Maxwellian data: its measure shrinks like <v>^{-1}.

use boltzlab::distributions::Density;
use boltzlab::kernel::{KineticParams, Variant};
use boltzlab::kf_kernel::{cone_estimate_with, ConeOptions, KernelEvaluator};
use boltzlab::quadrature::QuadratureSpec;
use boltzlab::Vec3;

fn main() -> boltzlab::Result<()> {
    let params = KineticParams::new(2, -2.0, 0.6)?;
    let f = Density::maxwellian(2, Vec3::zeros(), 1.0, 1.0)?;
    let ev = KernelEvaluator::new(f, params, QuadratureSpec::fast(), Variant::Psi)?;
    let k = ev.eval(&Vec3::zeros(), &Vec3::new(0.5, 0.0, 0.0))?;
    println!("K(0, 0.5 e1) = {:.5e} +- {:.1e}", k.value, k.error);
    // A fixed threshold keeps the measures at different |v| comparable.
    let opts = ConeOptions {
        n_dirs: 2048,
        lambda: Some(1e-2),
        ..ConeOptions::default()
    };
    for r in [0.0, 2.0, 5.0, 10.0, 20.0] {
        let v = Vec3::new(r, 0.0, 0.0);
        let c = cone_estimate_with(&ev, &v, &opts)?;
        let bracket = (1.0 + r * r).sqrt();
        println!(
            "|v| = {r:>4}: measure = {:.4}  measure*<v> = {:.4}  max |sigma.v| = {:.3}",
            c.measure_hat,
            c.measure_hat * bracket,
            c.max_alignment
        );
    }
    Ok(())
}
