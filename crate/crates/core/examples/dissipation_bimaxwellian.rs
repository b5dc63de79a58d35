//! D, Gamma(sqrt f) and I2 of bi-Maxwellians against their separation, with both quadratures.

use boltzlab::distributions::Density;
use boltzlab::functionals::{dissipation_bundle, entropy_dissipation_with, Method};
use boltzlab::kernel::{KineticParams, Variant};
use boltzlab::quadrature::QuadratureSpec;
use boltzlab::Vec3;

fn main() -> boltzlab::Result<()> {
    let params = KineticParams::new(2, -2.0, 0.3)?;
    let spec = QuadratureSpec::fast();
    for sep in [1.0, 2.0, 4.0] {
        let f = Density::bi_maxwellian(
            2,
            [0.5, 0.5],
            [Vec3::new(0.5 * sep, 0.0, 0.0), Vec3::new(-0.5 * sep, 0.0, 0.0)],
            [1.0, 1.0],
        )?;
        let b = dissipation_bundle(&f, &params, &spec)?;
        let mc = entropy_dissipation_with(&f, &params, &spec, Variant::Full, Method::MonteCarlo)?;
        println!(
            "sep {sep}: D = {:.5e} (mc {:.5e} +- {:.1e})  D_psi = {:.5e}  Gamma = {:.5e}  I2 = {:.5e}",
            b.d_full.value, mc.value, mc.abs_error_estimate, b.d_psi.value, b.gamma_sqrt_f.value, b.i2_direct.value
        );
    }
    Ok(())
}
