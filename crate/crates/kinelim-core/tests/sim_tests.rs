//! Kinetic solver: conservation, preservation of equilibria, determinism,
//! self-convergence, and the effective viscosity of the BGK dynamics.

use approx::assert_relative_eq;
use kinelim_core::collision::CollisionKernel;
use kinelim_core::moments::{project_p, NullSpaceBasis};
use kinelim_core::nsf::{RemainderSpec, ScalarSpec, VelocitySpec, WellPreparedIc};
use kinelim_core::sim::{
    initial_fluctuation, run_simulation, Distribution, Integrator, MemorySink, RunConfig, Stepper,
};

fn small_cfg() -> RunConfig {
    RunConfig {
        dim: 2,
        n_x: 16,
        v_max: 4.8,
        n_v: 8,
        tol_mass: 1e-2,
        kernel: CollisionKernel::bgk(0.5),
        eps: 0.1,
        dt: 2e-3,
        t_end: 0.05,
        ic: WellPreparedIc::taylor_green(0.05),
        report_every: 5,
        snapshot_every: 0,
        ..RunConfig::default()
    }
}

#[test]
fn config_validation_catches_cfl_and_ranges() {
    let mut cfg = small_cfg();
    cfg.dt = 1.0;
    assert!(matches!(cfg.validate(), Err(kinelim_core::Error::StepRejected { .. })));
    let mut cfg = small_cfg();
    cfg.eps = 1.5;
    assert!(cfg.validate().is_err());
}

#[test]
fn zero_state_stays_zero() {
    let mut cfg = small_cfg();
    cfg.ic = WellPreparedIc::zero();
    let mut sink = MemorySink::default();
    run_simulation(&cfg, &mut sink).unwrap();
    for r in &sink.reports {
        assert_eq!(r.e_n, 0.0);
        assert_eq!(r.d_n, 0.0);
    }
}

#[test]
fn initial_moments_match_prescribed_fields() {
    let cfg = small_cfg();
    let (sgrid, vgrid) = cfg.build_grids().unwrap();
    let basis = NullSpaceBasis::new(&vgrid);
    let g = initial_fluctuation(&cfg.ic, &sgrid, &vgrid, &basis, cfg.eps).unwrap();
    let (fields, _, g2) = project_p(&g, &vgrid, &basis).unwrap();
    let (_, u0, _) = cfg.ic.sample_fields(&sgrid).unwrap();
    for cell in 0..sgrid.len {
        assert_relative_eq!(fields.u[0][cell], u0[0][cell], epsilon = 1e-12);
        assert_relative_eq!(fields.u[1][cell], u0[1][cell], epsilon = 1e-12);
        assert!(fields.rho[cell].abs() < 1e-13);
        assert!(fields.theta[cell].abs() < 1e-13);
        assert!(vgrid.norm(g2.cell(cell)) < 1e-13);
    }
}

#[test]
fn constant_density_ic_reconstructs_sqrt_mu() {
    let cfg = small_cfg();
    let (sgrid, vgrid) = cfg.build_grids().unwrap();
    let basis = NullSpaceBasis::new(&vgrid);
    let ic = WellPreparedIc {
        rho0: ScalarSpec::Mode { amplitude: 0.0, k: [0, 0, 0], phase: 0.0 },
        u0: VelocitySpec::Zero,
        theta0: ScalarSpec::Zero,
        remainder: RemainderSpec::Zero,
    };
    // amplitude 0 mode is just zero; use a direct constant instead
    let mut g = initial_fluctuation(&ic, &sgrid, &vgrid, &basis, cfg.eps).unwrap();
    // rho0 = 1 constant: build by hand through the same entry point.
    let one = WellPreparedIc {
        rho0: ScalarSpec::Mode { amplitude: 1.0, k: [0, 0, 0], phase: std::f64::consts::FRAC_PI_2 },
        u0: VelocitySpec::Zero,
        theta0: ScalarSpec::Zero,
        remainder: RemainderSpec::Zero,
    };
    g = initial_fluctuation(&one, &sgrid, &vgrid, &basis, cfg.eps).unwrap();
    let (fields, _, _) = project_p(&g, &vgrid, &basis).unwrap();
    for cell in 0..sgrid.len {
        assert_relative_eq!(fields.a[cell], 1.0, epsilon = 1e-8);
        assert!(fields.c[cell].abs() < 1e-8);
    }
    // The cell distribution is sqrt(mu) up to the discrete-moment calibration.
    for i in 0..vgrid.len {
        assert_relative_eq!(g.cell(0)[i], vgrid.sqrt_maxwellian[i], max_relative = 1e-6);
    }
}

#[test]
fn pointwise_invariant_state_is_preserved() {
    // g in the collision-invariant span, constant in x: collision and
    // transport substeps both act as the identity.
    let cfg = small_cfg();
    let stepper = Stepper::new(&cfg).unwrap();
    let (sgrid, vgrid) = cfg.build_grids().unwrap();
    let mut g = Distribution::zeros(sgrid.len, vgrid.len, cfg.eps);
    for cell in 0..sgrid.len {
        let out = g.cell_mut(cell);
        for i in 0..vgrid.len {
            let v = vgrid.nodes[i];
            out[i] = (0.03 + 0.01 * v[0] + 0.005 * vgrid.speed_squared(i))
                * vgrid.sqrt_maxwellian[i];
        }
    }
    let before = g.clone();
    let after = stepper.step(&g).unwrap();
    for (a, b) in after.data.iter().zip(before.data.iter()) {
        assert!((a - b).abs() < 1e-13, "{a} vs {b}");
    }
}

#[test]
fn moments_are_conserved_in_time() {
    let mut cfg = small_cfg();
    cfg.t_end = 0.1;
    cfg.ic = WellPreparedIc {
        rho0: ScalarSpec::Mode { amplitude: 0.02, k: [1, 0, 0], phase: 0.0 },
        u0: VelocitySpec::TaylorGreen { amplitude: 0.05 },
        theta0: ScalarSpec::Mode { amplitude: 0.02, k: [0, 1, 0], phase: 0.5 },
        remainder: RemainderSpec::RandomPerp { amplitude: 0.01, seed: 2 },
    };
    let mut sink = MemorySink::default();
    run_simulation(&cfg, &mut sink).unwrap();
    let first = &sink.fields[0];
    let last = sink.fields.last().unwrap();
    let n = first.rho.len() as f64;
    let mean = |f: &[f64]| f.iter().sum::<f64>() / n;
    // Domain means of the conserved moments drift below 1e-6 per unit time.
    assert!((mean(&first.rho) - mean(&last.rho)).abs() < 1e-7);
    for axis in 0..3 {
        assert!((mean(&first.u[axis]) - mean(&last.u[axis])).abs() < 1e-7);
    }
    assert!((mean(&first.theta) - mean(&last.theta)).abs() < 1e-7);
}

#[test]
fn simulation_is_deterministic() {
    let cfg = small_cfg();
    let mut a = MemorySink::default();
    let mut b = MemorySink::default();
    run_simulation(&cfg, &mut a).unwrap();
    run_simulation(&cfg, &mut b).unwrap();
    assert_eq!(a.reports.len(), b.reports.len());
    for (ra, rb) in a.reports.iter().zip(b.reports.iter()) {
        assert_eq!(ra.e_n.to_bits(), rb.e_n.to_bits());
        assert_eq!(ra.d_n.to_bits(), rb.d_n.to_bits());
        assert_eq!(ra.e_n_combined.to_bits(), rb.e_n_combined.to_bits());
    }
}

#[test]
fn zero_horizon_emits_single_snapshot() {
    let mut cfg = small_cfg();
    cfg.t_end = 0.0;
    cfg.snapshot_every = 1;
    let mut sink = MemorySink::default();
    run_simulation(&cfg, &mut sink).unwrap();
    assert_eq!(sink.snapshots.len(), 1);
    assert_eq!(sink.reports.len(), 1);
}

#[test]
fn small_data_energy_is_monotone() {
    let mut cfg = small_cfg();
    cfg.t_end = 0.2;
    cfg.eps = 0.1;
    cfg.report_every = 1;
    let mut sink = MemorySink::default();
    run_simulation(&cfg, &mut sink).unwrap();
    for w in sink.reports.windows(2) {
        assert!(
            w[1].e_n <= w[0].e_n * (1.0 + 1e-6),
            "energy grew: {} -> {}",
            w[0].e_n,
            w[1].e_n
        );
    }
}

#[test]
fn moment_self_convergence_under_dt_refinement() {
    // First-order lower bound on the observed temporal order of the moments.
    let base = RunConfig {
        dim: 2,
        n_x: 16,
        v_max: 4.8,
        n_v: 8,
        tol_mass: 1e-2,
        kernel: CollisionKernel::bgk(0.3),
        eps: 0.2,
        t_end: 0.1,
        dt: 4e-3,
        ic: WellPreparedIc::taylor_green(0.05),
        report_every: usize::MAX,
        ..RunConfig::default()
    };
    let run = |dt: f64| {
        let mut cfg = base.clone();
        cfg.dt = dt;
        let mut sink = MemorySink::default();
        run_simulation(&cfg, &mut sink).unwrap();
        sink.fields.last().unwrap().clone()
    };
    let coarse = run(4e-3);
    let medium = run(2e-3);
    let fine = run(1e-3);
    let diff = |a: &kinelim_core::moments::MacroFields, b: &kinelim_core::moments::MacroFields| {
        let mut acc: f64 = 0.0;
        for axis in 0..2 {
            for (x, y) in a.u[axis].iter().zip(b.u[axis].iter()) {
                acc += (x - y) * (x - y);
            }
        }
        acc.sqrt()
    };
    let e1 = diff(&coarse, &fine);
    let e2 = diff(&medium, &fine);
    let p = (e1 / e2).log2();
    assert!(p >= 0.9, "observed moment order {p}");
}

#[test]
fn bgk_shear_mode_decays_at_rate_tau_k_squared() {
    // Effective viscosity of the kinetic BGK dynamics: a single shear mode
    // u2 ~ sin(x1) decays like exp(-tau k^2 t) up to O(eps^2) dispersive
    // corrections. This pins the closure coefficient wired into the fluid
    // reference (nu_limit = tau), as opposed to the 1/15-normalized pairing.
    let tau = 0.15;
    let eps = 0.05;
    let cfg = RunConfig {
        dim: 2,
        n_x: 8,
        v_max: 6.0,
        n_v: 12,
        tol_mass: 1e-2,
        kernel: CollisionKernel::bgk(tau),
        eps,
        dt: 5e-4,
        t_end: 0.5,
        ic: WellPreparedIc {
            rho0: ScalarSpec::Zero,
            // shear: u = (0, A sin x1, 0) is solenoidal
            u0: VelocitySpec::SolenoidalRandom { amplitude: 0.0, seed: 0, k_max: 1 },
            theta0: ScalarSpec::Zero,
            remainder: RemainderSpec::Zero,
        },
        report_every: usize::MAX,
        ..RunConfig::default()
    };
    // Build the shear initial state by hand.
    let (sgrid, vgrid) = cfg.build_grids().unwrap();
    let basis = NullSpaceBasis::new(&vgrid);
    let mut g = Distribution::zeros(sgrid.len, vgrid.len, eps);
    let amp = 1e-3;
    for cell in 0..sgrid.len {
        let [x, _, _] = sgrid.coords(cell);
        let b2 = amp * x.sin() / basis.sii[1];
        let out = g.cell_mut(cell);
        for i in 0..vgrid.len {
            out[i] = b2 * vgrid.nodes[i][1] * vgrid.sqrt_maxwellian[i];
        }
    }
    let stepper = Stepper::new(&cfg).unwrap();
    let n_steps = (cfg.t_end / cfg.dt).round() as usize;
    for _ in 0..n_steps {
        g = stepper.step(&g).unwrap();
    }
    let (fields, _, _) = project_p(&g, &vgrid, &basis).unwrap();
    let u2_norm = sgrid.l2_norm(&fields.u[1]);
    let u2_initial = amp * sgrid.l2_norm(
        &(0..sgrid.len).map(|i| sgrid.coords(i)[0].sin()).collect::<Vec<f64>>(),
    );
    let observed_rate = -(u2_norm / u2_initial).ln() / cfg.t_end;
    // k^2 = 1: the decay rate is tau (1 + O(eps^2 tau^2 k^2)).
    assert_relative_eq!(observed_rate, tau, max_relative = 2e-2);
}
