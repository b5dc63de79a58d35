//! d_GS against the Euclidean distance, the T0 comparability band and the seminorm.

use boltzlab::distributions::Density;
use boltzlab::geometry::{comparability_ratio, d_gs, sqrt_seminorm, t0_map, SeminormOptions};
use boltzlab::kernel::KineticParams;
use boltzlab::quadrature::QuadratureSpec;
use boltzlab::Vec3;

fn main() -> boltzlab::Result<()> {
    let a = Vec3::new(10.0, 0.0, 0.0);
    for (name, dir) in [("radial", Vec3::new(1.0, 0.0, 0.0)), ("tangential", Vec3::new(0.0, 1.0, 0.0))] {
        let b = a + 0.1 * dir;
        println!("{name:>10}: |a-b| = 0.1, d_GS = {:.4}", d_gs(&a, &b));
    }
    for r in [2.0, 10.0, 50.0] {
        let v0 = Vec3::new(r, 0.0, 0.0);
        let mut lo = f64::INFINITY;
        let mut hi: f64 = 0.0;
        for i in 0..16 {
            let t = i as f64 * std::f64::consts::PI / 8.0;
            let v1 = v0 + t0_map(&v0, &Vec3::new(0.3 * t.cos(), 0.3 * t.sin(), 0.0));
            let v2 = v0 + t0_map(&v0, &Vec3::new(-0.4 * t.sin(), 0.4 * t.cos(), 0.0));
            let c = comparability_ratio(&v0, &v1, &v2)?;
            lo = lo.min(c);
            hi = hi.max(c);
        }
        println!("|v0| = {r}: comparability ratio in [{lo:.3}, {hi:.3}]");
    }
    let params = KineticParams::new(2, -1.0, 0.5)?;
    let f = Density::maxwellian(2, Vec3::zeros(), 1.0, 1.0)?;
    let n = sqrt_seminorm(&f, &params, &QuadratureSpec::fast(), &SeminormOptions::default())?;
    println!("|sqrt M|^2 = {:.5e} +- {:.1e}", n.value.value, n.value.error);
    Ok(())
}
