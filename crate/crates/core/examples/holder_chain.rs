//! The Hölder chain bounding the near-diagonal interaction, and where its third factor blows up.

use boltzlab::distributions::Density;
use boltzlab::kernel::KineticParams;
use boltzlab::quadrature::QuadratureSpec;
use boltzlab::verifier::{holder_chain, holder_predicate, third_factor_probe};
use boltzlab::Vec3;

fn main() -> boltzlab::Result<()> {
    for (d, gamma, s) in [(2, -2.0, 0.3), (3, -3.0, 0.3), (3, -3.0, 0.6), (3, -2.5, 0.1)] {
        let p = KineticParams::new(d, gamma, s)?;
        let probe = third_factor_probe(&p)?;
        println!(
            "d={d} gamma={gamma} s={s}: predicate {}  probe divergent {}  last partial integral {:.3e}",
            holder_predicate(&p),
            probe.divergent,
            probe.partial.last().copied().unwrap_or(f64::NAN)
        );
    }
    let p = KineticParams::new(2, -2.0, 0.3)?;
    let f = Density::bi_maxwellian(2, [0.5, 0.5], [Vec3::new(1.0, 0.0, 0.0), Vec3::new(-1.0, 0.0, 0.0)], [1.0, 1.0])?;
    let r = holder_chain(&f, 4.0, &p, &QuadratureSpec::fast())?;
    println!(
        "lhs = {:.4e}  rhs = {:.4e}  holds = {}",
        r.lhs.value,
        r.rhs.map(|e| e.value).unwrap_or(f64::INFINITY),
        r.holds
    );
    Ok(())
}
