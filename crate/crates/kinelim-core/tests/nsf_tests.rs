//! Pseudo-spectral NSF reference solver: Leray projection, limit initial
//! data, analytic decay cases and conservation structure.

use approx::assert_relative_eq;
use kinelim_core::grid::SpatialGrid;
use kinelim_core::nsf::{
    leray_project, nsf_initial_data, run_nsf, NsfSolver, ScalarSpec, VelocitySpec, WellPreparedIc,
};

fn grid(n: usize) -> SpatialGrid {
    SpatialGrid::new(2, n).unwrap()
}

#[test]
fn leray_annihilates_gradients() {
    let g = grid(16);
    // w = grad phi with phi = sin(x) cos(2y), zero mean.
    let mut w: Vec<Vec<f64>> = vec![vec![0.0; g.len]; 2];
    for i in 0..g.len {
        let [x, y, _] = g.coords(i);
        w[0][i] = x.cos() * (2.0 * y).cos();
        w[1][i] = -2.0 * x.sin() * (2.0 * y).sin();
    }
    leray_project(&g, &mut w);
    for comp in &w {
        assert!(g.l2_norm(comp) < 1e-12, "gradient survived projection");
    }
}

#[test]
fn leray_fixes_solenoidal_fields_and_shear() {
    let g = grid(16);
    let mut w: Vec<Vec<f64>> = vec![vec![0.0; g.len]; 2];
    for i in 0..g.len {
        let [x, y, _] = g.coords(i);
        w[0][i] = x.sin() * y.cos();
        w[1][i] = -x.cos() * y.sin();
    }
    let before = w.clone();
    leray_project(&g, &mut w);
    for (a, b) in w.iter().zip(before.iter()) {
        for (ai, bi) in a.iter().zip(b.iter()) {
            assert!((ai - bi).abs() < 1e-12);
        }
    }

    // Single-mode shear u = (sin x2, 0): divergence-free, passes unchanged.
    let mut shear: Vec<Vec<f64>> = vec![vec![0.0; g.len]; 2];
    for i in 0..g.len {
        let [_, y, _] = g.coords(i);
        shear[0][i] = y.sin();
    }
    let before = shear.clone();
    leray_project(&g, &mut shear);
    for (a, b) in shear.iter().zip(before.iter()) {
        for (ai, bi) in a.iter().zip(b.iter()) {
            assert!((ai - bi).abs() < 1e-12);
        }
    }

    // Divergence after projection is at round-off.
    let div = g.divergence(&shear);
    assert!(g.l2_norm(&div) < 1e-12);
}

#[test]
fn initial_data_arithmetic() {
    let g = grid(8);
    // rho0 = theta0 -> theta(0) = (1/5) theta0.
    let ic = WellPreparedIc {
        rho0: ScalarSpec::Mode { amplitude: 0.3, k: [1, 0, 0], phase: 0.0 },
        u0: VelocitySpec::Zero,
        theta0: ScalarSpec::Mode { amplitude: 0.3, k: [1, 0, 0], phase: 0.0 },
        remainder: kinelim_core::nsf::RemainderSpec::Zero,
    };
    let state = nsf_initial_data(&ic, &g).unwrap();
    for i in 0..g.len {
        let [x, _, _] = g.coords(i);
        assert_relative_eq!(state.theta[i], 0.2 * 0.3 * x.sin(), epsilon = 1e-12);
    }

    // Boussinesq-prepared rho0 = -theta0 -> theta(0) = theta0.
    let ic = WellPreparedIc {
        rho0: ScalarSpec::MinusTheta,
        u0: VelocitySpec::TaylorGreen { amplitude: 0.1 },
        theta0: ScalarSpec::Mode { amplitude: 0.2, k: [0, 1, 0], phase: 0.0 },
        remainder: kinelim_core::nsf::RemainderSpec::Zero,
    };
    let state = nsf_initial_data(&ic, &g).unwrap();
    for i in 0..g.len {
        let [x, y, _] = g.coords(i);
        assert_relative_eq!(state.theta[i], 0.2 * y.sin(), epsilon = 1e-12);
        // u0 solenoidal -> unchanged by the projection.
        assert_relative_eq!(state.u[0][i], 0.1 * x.sin() * y.cos(), epsilon = 1e-12);
    }
}

#[test]
fn pure_diffusion_matches_integrating_factor() {
    let g = grid(16);
    let kappa = 0.37;
    let dt = 1e-2;
    let solver = NsfSolver::new(g.clone(), 0.1, kappa, dt).unwrap();
    let mut state = kinelim_core::nsf::FluidState {
        u: vec![vec![0.0; g.len]; 2],
        theta: (0..g.len)
            .map(|i| {
                let [x, y, _] = g.coords(i);
                (x + y).sin()
            })
            .collect(),
        t: 0.0,
    };
    let theta0 = state.theta.clone();
    for _ in 0..10 {
        state = solver.step(&state).unwrap();
    }
    // |k|^2 = 2 for the (1,1) mode; the factor is exact per step.
    let decay = (-kappa * 2.0 * dt * 10.0).exp();
    for i in 0..g.len {
        assert_relative_eq!(state.theta[i], theta0[i] * decay, epsilon = 1e-10);
    }
}

#[test]
fn constant_temperature_is_invariant() {
    let g = grid(8);
    let solver = NsfSolver::new(g.clone(), 0.05, 0.05, 1e-2).unwrap();
    let mut state = kinelim_core::nsf::FluidState {
        u: vec![
            (0..g.len)
                .map(|i| {
                    let [x, y, _] = g.coords(i);
                    0.2 * x.sin() * y.cos()
                })
                .collect(),
            (0..g.len)
                .map(|i| {
                    let [x, y, _] = g.coords(i);
                    -0.2 * x.cos() * y.sin()
                })
                .collect(),
        ],
        theta: vec![0.7; g.len],
        t: 0.0,
    };
    for _ in 0..20 {
        state = solver.step(&state).unwrap();
    }
    for v in &state.theta {
        assert_relative_eq!(*v, 0.7, epsilon = 1e-12);
    }
}

#[test]
fn taylor_green_decays_analytically() {
    let g = SpatialGrid::new(2, 64).unwrap();
    let nu = 0.1;
    let dt = 1e-3;
    let ic = WellPreparedIc::taylor_green(1.0);
    let traj = run_nsf(&ic, nu, nu, 1.0, &g, dt, 1000).unwrap();
    let u0 = traj.u_l2[0];
    let u_final = *traj.u_l2.last().unwrap();
    let expected = u0 * (-2.0 * nu * 1.0f64).exp();
    assert_relative_eq!(u_final, expected, max_relative = 1e-6);
    // Divergence-free throughout.
    for d in &traj.div_u_l2 {
        assert!(*d < 1e-10 * u0);
    }
}

#[test]
fn zero_horizon_returns_initial_state_only() {
    let g = grid(8);
    let ic = WellPreparedIc::taylor_green(0.5);
    let traj = run_nsf(&ic, 0.1, 0.1, 0.0, &g, 1e-2, 1).unwrap();
    assert_eq!(traj.states.len(), 1);
    assert_eq!(traj.times, vec![0.0]);
}

#[test]
fn energy_identity_and_mean_conservation() {
    let g = SpatialGrid::new(2, 32).unwrap();
    let nu = 0.05;
    let dt = 5e-4;
    let ic = WellPreparedIc {
        rho0: ScalarSpec::Zero,
        u0: VelocitySpec::SolenoidalRandom { amplitude: 0.3, seed: 5, k_max: 2 },
        theta0: ScalarSpec::Mode { amplitude: 0.2, k: [1, 1, 0], phase: 0.3 },
        remainder: kinelim_core::nsf::RemainderSpec::Zero,
    };
    let traj = run_nsf(&ic, nu, nu, 0.5, &g, dt, 1).unwrap();

    // ||u(t)||^2 + 2 nu int ||grad u||^2 = ||u(0)||^2 up to time-stepping error.
    let mut dissipated = 0.0;
    for k in 1..traj.times.len() {
        let h = traj.times[k] - traj.times[k - 1];
        dissipated += 0.5 * h * (traj.grad_u_sq[k] + traj.grad_u_sq[k - 1]);
    }
    let lhs = traj.u_l2.last().unwrap().powi(2) + 2.0 * nu * dissipated;
    let rhs = traj.u_l2[0].powi(2);
    assert_relative_eq!(lhs, rhs, max_relative = 1e-6);

    // Mean of u and theta conserved exactly (zero mode untouched).
    let mean_u0: f64 = g.mean(&traj.states[0].u[0]);
    let mean_u1: f64 = g.mean(traj.states.last().unwrap().u[0].as_slice());
    assert!((mean_u0 - mean_u1).abs() < 1e-14);
    let mean_t0: f64 = g.mean(&traj.states[0].theta);
    let mean_t1: f64 = g.mean(traj.states.last().unwrap().theta.as_slice());
    assert!((mean_t0 - mean_t1).abs() < 1e-13);

    // theta maximum stays within the discrete maximum-principle margin.
    let max0 = traj.theta_max[0];
    for m in &traj.theta_max {
        assert!(*m <= max0 * (1.0 + 1e-3), "theta max grew: {m} vs {max0}");
    }
}

#[test]
fn temporal_self_convergence_is_second_order() {
    let g = SpatialGrid::new(2, 32).unwrap();
    let ic = WellPreparedIc {
        rho0: ScalarSpec::Zero,
        u0: VelocitySpec::SolenoidalRandom { amplitude: 0.4, seed: 9, k_max: 2 },
        theta0: ScalarSpec::Mode { amplitude: 0.3, k: [1, 0, 0], phase: 0.0 },
        remainder: kinelim_core::nsf::RemainderSpec::Zero,
    };
    let t_end = 0.2;
    let run = |dt: f64| {
        let traj = run_nsf(&ic, 0.05, 0.08, t_end, &g, dt, usize::MAX).unwrap();
        traj.states.last().unwrap().clone()
    };
    let coarse = run(4e-3);
    let medium = run(2e-3);
    let fine = run(1e-3);

    let diff = |a: &kinelim_core::nsf::FluidState, b: &kinelim_core::nsf::FluidState| -> f64 {
        let mut acc: f64 = 0.0;
        for axis in 0..2 {
            let d: Vec<f64> =
                a.u[axis].iter().zip(b.u[axis].iter()).map(|(x, y)| x - y).collect();
            let n = g.l2_norm(&d);
            acc += n * n;
        }
        acc.sqrt()
    };
    let e1 = diff(&coarse, &fine);
    let e2 = diff(&medium, &fine);
    // err(dt) ~ C dt^p against the dt/4 reference: e1/e2 = (4^p-1)/(2^p-1),
    // whose log2 is p + log2(1 + 2^-p) >= p; at p = 1 it is only 1.58.
    let p = (e1 / e2).log2();
    assert!(p >= 1.9, "observed temporal order {p}");
}
