use boltzlab::distributions::Density;
use boltzlab::kernel::KineticParams;
use boltzlab::quadrature::QuadratureSpec;
use boltzlab::solver::{init_ensemble, run, step, suggested_dt, ParticleEnsemble, RunOptions, StepOptions};
use boltzlab::{Error, Vec3};

fn bimax() -> Density {
    Density::bi_maxwellian(2, [0.5, 0.5], [Vec3::new(2.0, 0.0, 0.0), Vec3::new(-2.0, 0.0, 0.0)], [1.0, 1.0]).unwrap()
}

#[test]
fn initial_sample_mean_is_within_four_sigma() {
    let n = 20_000;
    let mean = Vec3::new(0.7, -0.4, 0.0);
    let t = 1.5;
    let f = Density::maxwellian(2, mean, t, 1.0).unwrap();
    let ens = init_ensemble(&f, n, 11).unwrap();
    let m = ens.momentum();
    let tol = 4.0 * t.sqrt() / (n as f64).sqrt();
    assert!((m - mean).norm() < tol * 2f64.sqrt(), "sample mean {m:?}");
    // energy m/N sum |v|^2 = |u|^2 + d T
    let e = ens.energy();
    let expect = mean.norm_squared() + 2.0 * t;
    assert!((e - expect).abs() < 0.05 * expect);
}

#[test]
fn maxwellian_is_stationary() {
    let params = KineticParams::new(2, -1.0, 0.3).unwrap();
    let f = Density::maxwellian(2, Vec3::zeros(), 1.0, 1.0).unwrap();
    let opts = RunOptions {
        particles: 10_000,
        t_end: 1.0,
        snapshots: 4,
        ..RunOptions::default()
    };
    let (diag, ens) = run(&f, &params, &QuadratureSpec::fast(), &opts).unwrap();
    let h: Vec<f64> = diag.entropy();
    let spread = h.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - h.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(spread < 0.03, "H drifts on a Maxwellian: {h:?}");
    // the fourth moment of a unit 2-d Maxwellian is 8
    let m4 = ens.velocities.iter().map(|v| v.norm_squared().powi(2)).sum::<f64>() / ens.len() as f64;
    assert!((m4 - 8.0).abs() < 0.5, "fourth moment {m4}");
}

#[test]
fn steps_conserve_to_round_off() {
    let params = KineticParams::new(2, -2.0, 0.3).unwrap();
    let mut ens = init_ensemble(&bimax(), 4000, 3).unwrap();
    let opts = StepOptions::default();
    let dt = suggested_dt(&ens, &params, &opts);
    let p0 = ens.momentum();
    let e0 = ens.energy();
    for _ in 0..20 {
        let stats = step(&mut ens, dt, &params, &opts).unwrap();
        assert!(stats.max_energy_defect < 1e-12);
        assert!(stats.max_momentum_defect < 1e-12);
    }
    assert!((ens.momentum() - p0).norm() < 1e-12 * e0);
    assert!((ens.energy() - e0).abs() < 1e-12 * e0);
}

#[test]
fn oversized_step_is_refused() {
    let params = KineticParams::new(2, -2.0, 0.3).unwrap();
    let mut ens = init_ensemble(&bimax(), 2000, 3).unwrap();
    let before = ens.clone();
    match step(&mut ens, 10.0, &params, &StepOptions::default()) {
        Err(Error::TimeStepTooLarge { suggested_dt, .. }) => {
            assert!(suggested_dt > 0.0 && suggested_dt < 10.0);
            step(&mut ens, suggested_dt, &params, &StepOptions::default()).unwrap();
        }
        other => panic!("expected TimeStepTooLarge, got {other:?}"),
    }
    assert_eq!(before.len(), ens.len());
}

#[test]
fn runs_are_reproducible_from_the_seed() {
    let params = KineticParams::new(2, -1.0, 0.5).unwrap();
    let opts = RunOptions {
        particles: 2000,
        t_end: 0.5,
        snapshots: 2,
        ..RunOptions::default()
    };
    let spec = QuadratureSpec::fast();
    let (a, ea) = run(&bimax(), &params, &spec, &opts).unwrap();
    let (b, eb) = run(&bimax(), &params, &spec, &opts).unwrap();
    assert_eq!(ea.velocities, eb.velocities);
    assert_eq!(a.entropy(), b.entropy());
    let (_, ec) = run(&bimax(), &params, &spec, &RunOptions { seed: 8, ..opts }).unwrap();
    assert_ne!(ea.velocities, ec.velocities);
}

#[test]
fn velocities_round_trip_through_csv() {
    let ens = init_ensemble(&bimax(), 1000, 5).unwrap();
    let mut buf = Vec::new();
    ens.write_csv(&mut buf).unwrap();
    let back = ParticleEnsemble::read_csv(buf.as_slice(), ens.mass, 5).unwrap();
    assert_eq!(back.len(), ens.len());
    for (a, b) in ens.velocities.iter().zip(&back.velocities) {
        assert!((a - b).norm() <= 1e-15 * (1.0 + a.norm()));
    }
}

#[test]
fn zero_snapshots_are_rejected() {
    let params = KineticParams::new(2, -1.0, 0.5).unwrap();
    let opts = RunOptions {
        snapshots: 0,
        ..RunOptions::default()
    };
    assert!(run(&bimax(), &params, &QuadratureSpec::fast(), &opts).is_err());
}
