//! C_b across (gamma, s), and the cancellation term of a bi-Maxwellian.

use boltzlab::distributions::Density;
use boltzlab::functionals::cancellation_term;
use boltzlab::kernel::{cancellation_constant, KineticParams};
use boltzlab::quadrature::QuadratureSpec;
use boltzlab::Vec3;

fn main() -> boltzlab::Result<()> {
    for d in [2usize, 3] {
        for gamma in [-(d as f64), -1.0, 0.0, 1.0] {
            for s in [0.25, 0.5, 0.75] {
                let p = KineticParams::new(d, gamma, s)?;
                let c = cancellation_constant(&p, 1e-10)?;
                println!("d={d} gamma={gamma:+.1} s={s:.2}  C_b = {:.6e}", c.value);
            }
        }
    }
    let params = KineticParams::new(2, -1.0, 0.3)?;
    let f = Density::bi_maxwellian(2, [0.5, 0.5], [Vec3::new(2.0, 0.0, 0.0), Vec3::new(-2.0, 0.0, 0.0)], [1.0, 1.0])?;
    let t = cancellation_term(&f, &params, &QuadratureSpec::fast())?;
    println!(
        "I2 = {:.5e}  bound = {:.5e}  coarse bound = {:.5e}",
        t.result.value, t.bound, t.coarse_bound
    );
    Ok(())
}
