//! DSMC relaxation of a bi-Maxwellian: entropy, conservation and the running L^p_{-q} integral.

use boltzlab::distributions::Density;
use boltzlab::kernel::KineticParams;
use boltzlab::quadrature::QuadratureSpec;
use boltzlab::solver::{run, RunOptions};
use boltzlab::Vec3;

fn main() -> boltzlab::Result<()> {
    let params = KineticParams::new(2, -2.0, 0.3)?;
    let f0 = Density::bi_maxwellian(2, [0.5, 0.5], [Vec3::new(2.0, 0.0, 0.0), Vec3::new(-2.0, 0.0, 0.0)], [1.0, 1.0])?;
    let opts = RunOptions {
        particles: 10_000,
        t_end: 2.0,
        snapshots: 5,
        ..RunOptions::default()
    };
    let (diag, ens) = run(&f0, &params, &QuadratureSpec::fast(), &opts)?;
    for s in &diag.snapshots {
        println!(
            "t = {:.2}  H = {:+.5}  E = {:.6}  ||f||_Lp-q = {:.5}  running integral = {:.5}",
            s.t, s.entropy.value, s.energy, s.lpq_norm.value, s.lpq_running_integral
        );
    }
    println!(
        "{} collisions, max defects: momentum {:.1e}, energy {:.1e}; {} particles at t = {}",
        diag.collisions,
        diag.max_momentum_defect,
        diag.max_energy_defect,
        ens.len(),
        ens.time
    );
    Ok(())
}
