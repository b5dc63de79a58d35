use std::f64::consts::PI;

use boltzlab::distributions::Density;
use boltzlab::geometry::{bracket, comparability_ratio, d_gs, t0_inverse, t0_map};
use boltzlab::kernel::{angular_b, collision_geometry, exponents, kinetic_psi, KineticParams};
use boltzlab::Vec3;
use proptest::prelude::*;

fn vec2(r: f64) -> impl Strategy<Value = Vec3> {
    (-r..r, -r..r).prop_map(|(x, y)| Vec3::new(x, y, 0.0))
}

fn vec3(r: f64) -> impl Strategy<Value = Vec3> {
    (-r..r, -r..r, -r..r).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn unit3() -> impl Strategy<Value = Vec3> {
    (0.0..PI, 0.0..2.0 * PI).prop_map(|(t, p)| Vec3::new(t.sin() * p.cos(), t.sin() * p.sin(), t.cos()))
}

proptest! {
    #[test]
    fn exponent_identities(d in 2usize..=3, gamma_frac in 0.0f64..1.0, s in 0.01f64..0.99) {
        let gamma = -(d as f64) + gamma_frac * (d as f64 + 2.0);
        let params = KineticParams::new(d, gamma, s).unwrap();
        let e = exponents(&params);
        let df = d as f64;
        prop_assert!((e.p - (1.0 + 2.0 * s * e.p / df)).abs() < 1e-12 * e.p.max(1.0));
        let lhs = -e.q * e.p;
        let rhs = gamma + 2.0 * s - 2.0 * s * (e.q * e.p + 1.0) / df;
        prop_assert!((lhs - rhs).abs() < 1e-10 * (1.0 + lhs.abs()));
    }

    #[test]
    fn d_gs_is_a_metric(a in vec3(20.0), b in vec3(20.0), c in vec3(20.0)) {
        let ab = d_gs(&a, &b);
        prop_assert!((ab - d_gs(&b, &a)).abs() <= 1e-12 * (1.0 + ab));
        prop_assert!(d_gs(&a, &a) == 0.0);
        prop_assert!(ab >= (a - b).norm() * (1.0 - 1e-12));
        prop_assert!(ab <= d_gs(&a, &c) + d_gs(&c, &b) + 1e-12 * (1.0 + ab));
    }

    #[test]
    fn t0_round_trip(v0 in vec3(30.0), x in vec3(5.0)) {
        let y = t0_map(&v0, &x);
        let back = t0_inverse(&v0, &y);
        prop_assert!((back - x).norm() <= 1e-10 * (1.0 + x.norm()) * (1.0 + v0.norm()));
    }

    #[test]
    fn comparability_stays_in_band(r in 2.0f64..50.0, dir in unit3(), a in unit3(), b in unit3(), ra in 0.0f64..1.0, rb in 0.0f64..1.0) {
        let v0 = r * dir;
        let v1 = v0 + t0_map(&v0, &(ra * a));
        let v2 = v0 + t0_map(&v0, &(rb * b));
        prop_assume!((v1 - v2).norm() > 1e-9);
        let c = comparability_ratio(&v0, &v1, &v2).unwrap();
        prop_assert!(c > 1.0 / 32.0 && c < 32.0, "ratio {c}");
    }

    #[test]
    fn collisions_conserve_momentum_and_energy(v in vec3(10.0), w in vec3(10.0), sigma in unit3()) {
        prop_assume!((v - w).norm() > 1e-6);
        let g = collision_geometry(&v, &w, &sigma).unwrap();
        let scale = 1.0 + v.norm_squared() + w.norm_squared();
        prop_assert!((g.v_prime + g.v_star_prime - v - w).norm() <= 1e-12 * scale);
        let e0 = v.norm_squared() + w.norm_squared();
        let e1 = g.v_prime.norm_squared() + g.v_star_prime.norm_squared();
        prop_assert!((e0 - e1).abs() <= 1e-12 * scale);
        prop_assert!((g.w.norm() - g.r * (0.5 * g.deviation).cos()).abs() <= 1e-9 * (1.0 + g.r));
    }

    #[test]
    fn psi_is_a_bounded_minorant(rho in 1e-6f64..100.0, gamma in -3.0f64..0.0, s in 0.05f64..0.95) {
        let params = KineticParams::new(3, gamma, s).unwrap();
        let psi = kinetic_psi(rho, &params);
        prop_assert!(psi >= 0.0);
        prop_assert!(psi <= params.c_phi * rho.powf(gamma) * (1.0 + 1e-12));
    }

    #[test]
    fn angular_weight_is_nonintegrable_near_zero(theta in 1e-4f64..1e-2, s in 0.05f64..0.95) {
        let params = KineticParams::new(2, -1.0, s).unwrap();
        let b1 = angular_b(theta, &params).unwrap();
        let b2 = angular_b(0.5 * theta, &params).unwrap();
        let ratio = b2 / b1;
        prop_assert!((ratio / 2f64.powf(1.0 + 2.0 * s) - 1.0).abs() < 0.05, "ratio {ratio}");
    }

    #[test]
    fn maxwellian_mass_scales(a in 0.1f64..5.0, lambda in 0.25f64..4.0, mean in vec2(3.0), t in 0.3f64..3.0) {
        let f = Density::maxwellian(2, mean, t, 1.0).unwrap();
        let g = f.scaled(a).unwrap().dilated(lambda).unwrap();
        let m = g.mass().unwrap();
        prop_assert!((m - a).abs() < 1e-12 * a);
        let v = Vec3::new(0.3, -0.2, 0.0);
        let expect = a * lambda.powi(-2) * f.eval(&(v / lambda));
        prop_assert!((g.eval(&v) - expect).abs() <= 1e-12 * expect.max(1e-300));
        prop_assert!(bracket(&v) >= 1.0);
    }
}
