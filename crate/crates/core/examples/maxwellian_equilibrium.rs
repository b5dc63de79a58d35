//! D vanishes on Maxwellians and is positive off equilibrium.

use boltzlab::distributions::Density;
use boltzlab::functionals::entropy_dissipation;
use boltzlab::kernel::{KineticParams, Variant};
use boltzlab::quadrature::QuadratureSpec;
use boltzlab::Vec3;

fn main() -> boltzlab::Result<()> {
    let params = KineticParams::new(2, -2.0, 0.3)?;
    let spec = QuadratureSpec::fast();
    let cases = [
        Density::maxwellian(2, Vec3::zeros(), 1.0, 1.0)?,
        Density::maxwellian(2, Vec3::new(1.0, -0.5, 0.0), 2.0, 1.0)?,
        Density::bi_maxwellian(2, [0.5, 0.5], [Vec3::new(2.0, 0.0, 0.0), Vec3::new(-2.0, 0.0, 0.0)], [1.0, 1.0])?,
    ];
    for f in &cases {
        let d = entropy_dissipation(f, &params, &spec, Variant::Full)?;
        println!("{:<14} D = {:+.3e} +- {:.1e}", f.name(), d.value, d.abs_error_estimate);
    }
    Ok(())
}
