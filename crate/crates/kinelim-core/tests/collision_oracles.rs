//! Collision quadrature against an independent brute-force oracle, plus the
//! structural properties of Gamma and the linearized operator.

use approx::assert_relative_eq;
use kinelim_core::collision::{
    apply_l, apply_l_slice, assemble_l_matrix, gamma_bilinear, q_bilinear, spectral_gap,
    CollisionKernel, LinearOperator, SigmaQuadrature,
};
use kinelim_core::moments::NullSpaceBasis;
use kinelim_core::velocity::{build_velocity_grid_with_tol, VelocityFunction, VelocityGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn test_grid() -> VelocityGrid {
    // Coarse 8^3 grid; the mass tolerance is relaxed accordingly.
    build_velocity_grid_with_tol(4.8, 8, 1e-2).unwrap()
}

fn random_function(grid: &VelocityGrid, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..grid.len).map(|i| rng.gen_range(-1.0..1.0) * grid.sqrt_maxwellian[i]).collect()
}

/// Naive double-loop quadrature of Q(g, h): same sigma rule and the same
/// conservative remap definition, written independently of the library path.
fn brute_force_q(
    g: &[f64],
    h: &[f64],
    kernel: &CollisionKernel,
    grid: &VelocityGrid,
) -> Vec<f64> {
    let (gamma, b0) = match kernel.model {
        kinelim_core::collision::CollisionModel::Vhs { gamma, b0 } => (gamma, b0),
        _ => panic!("oracle only handles VHS"),
    };
    let sigma = SigmaQuadrature::new(kernel.n_theta, kernel.n_phi, 0.0, 0.5 * std::f64::consts::PI);

    // Ratio-to-Maxwellian form of the gain term, as in the library quadrature.
    let mu_exact = |p: [f64; 3]| -> f64 {
        (2.0 * std::f64::consts::PI).powf(-1.5)
            * (-0.5 * (p[0] * p[0] + p[1] * p[1] + p[2] * p[2])).exp()
    };
    let rg: Vec<f64> = g.iter().zip(grid.maxwellian.iter()).map(|(a, m)| a / m).collect();
    let rh: Vec<f64> = h.iter().zip(grid.maxwellian.iter()).map(|(a, m)| a / m).collect();

    let n = grid.n_per_axis;
    let interp = |values: &[f64], p: [f64; 3]| -> f64 {
        // independent trilinear interpolation, zero outside the box
        let mut acc = 0.0;
        let t0 = (p[0] - grid.axis[0]) / grid.h;
        let t1 = (p[1] - grid.axis[0]) / grid.h;
        let t2 = (p[2] - grid.axis[0]) / grid.h;
        let (i0, f0) = (t0.floor() as i64, t0 - t0.floor());
        let (i1, f1) = (t1.floor() as i64, t1 - t1.floor());
        let (i2, f2) = (t2.floor() as i64, t2 - t2.floor());
        for (di, wi) in [(0i64, 1.0 - f0), (1, f0)] {
            for (dj, wj) in [(0i64, 1.0 - f1), (1, f1)] {
                for (dk, wk) in [(0i64, 1.0 - f2), (1, f2)] {
                    let (a, b, c) = (i0 + di, i1 + dj, i2 + dk);
                    if a < 0 || b < 0 || c < 0 || a >= n as i64 || b >= n as i64 || c >= n as i64 {
                        continue;
                    }
                    let idx = ((a as usize * n) + b as usize) * n + c as usize;
                    acc += wi * wj * wk * values[idx];
                }
            }
        }
        acc
    };

    let mut q = vec![0.0; grid.len];
    for v_idx in 0..grid.len {
        let v = grid.nodes[v_idx];
        let mut acc = 0.0;
        for vs_idx in 0..grid.len {
            let vs = grid.nodes[vs_idx];
            let rel = [v[0] - vs[0], v[1] - vs[1], v[2] - vs[2]];
            let r = (rel[0] * rel[0] + rel[1] * rel[1] + rel[2] * rel[2]).sqrt();
            if r == 0.0 {
                continue;
            }
            // frame: e1 along rel, helper axis least aligned with it
            let e1 = [rel[0] / r, rel[1] / r, rel[2] / r];
            let abs = [e1[0].abs(), e1[1].abs(), e1[2].abs()];
            let helper = if abs[0] <= abs[1] && abs[0] <= abs[2] {
                [1.0, 0.0, 0.0]
            } else if abs[1] <= abs[2] {
                [0.0, 1.0, 0.0]
            } else {
                [0.0, 0.0, 1.0]
            };
            let cross = |a: [f64; 3], b: [f64; 3]| {
                [
                    a[1] * b[2] - a[2] * b[1],
                    a[2] * b[0] - a[0] * b[2],
                    a[0] * b[1] - a[1] * b[0],
                ]
            };
            let mut e2 = cross(helper, e1);
            let n2 = (e2[0] * e2[0] + e2[1] * e2[1] + e2[2] * e2[2]).sqrt();
            e2 = [e2[0] / n2, e2[1] / n2, e2[2] / n2];
            let e3 = cross(e1, e2);

            let bpref = b0 * r.powf(gamma);
            for node in &sigma.nodes {
                let s = [
                    node.cos_theta * e1[0] + node.c2 * e2[0] + node.c3 * e3[0],
                    node.cos_theta * e1[1] + node.c2 * e2[1] + node.c3 * e3[1],
                    node.cos_theta * e1[2] + node.c2 * e2[2] + node.c3 * e3[2],
                ];
                let mid = [0.5 * (v[0] + vs[0]), 0.5 * (v[1] + vs[1]), 0.5 * (v[2] + vs[2])];
                let vp = [
                    mid[0] + 0.5 * r * s[0],
                    mid[1] + 0.5 * r * s[1],
                    mid[2] + 0.5 * r * s[2],
                ];
                let vps = [
                    mid[0] - 0.5 * r * s[0],
                    mid[1] - 0.5 * r * s[1],
                    mid[2] - 0.5 * r * s[2],
                ];
                let gain =
                    mu_exact(vps) * interp(&rg, vps) * mu_exact(vp) * interp(&rh, vp);
                acc += node.weight * bpref * (gain - g[vs_idx] * h[v_idx]);
            }
        }
        q[v_idx] = acc * grid.weight;
    }

    // Same conservative remap: zero below-floor entries, then project the
    // moment defect onto {1, v, |v|^2} mu.
    for i in 0..grid.len {
        if grid.maxwellian[i] <= kernel.mu_floor {
            q[i] = 0.0;
        }
    }
    let phi: Vec<Vec<f64>> = vec![
        vec![1.0; grid.len],
        (0..grid.len).map(|i| grid.nodes[i][0]).collect(),
        (0..grid.len).map(|i| grid.nodes[i][1]).collect(),
        (0..grid.len).map(|i| grid.nodes[i][2]).collect(),
        (0..grid.len).map(|i| grid.speed_squared(i)).collect(),
    ];
    let psi: Vec<Vec<f64>> = phi
        .iter()
        .map(|p| p.iter().zip(grid.maxwellian.iter()).map(|(a, m)| a * m).collect())
        .collect();
    let mut gram = nalgebra::DMatrix::<f64>::zeros(5, 5);
    let mut defect = nalgebra::DVector::<f64>::zeros(5);
    for r in 0..5 {
        for c in 0..5 {
            gram[(r, c)] = grid.inner(&phi[r], &psi[c]);
        }
        defect[r] = grid.inner(&q, &phi[r]);
    }
    let alpha = gram.lu().solve(&defect).unwrap();
    for k in 0..5 {
        for i in 0..grid.len {
            q[i] -= alpha[k] * psi[k][i];
        }
    }
    q
}

#[test]
fn q_bilinear_matches_brute_force_oracle() {
    let grid = test_grid();
    let kernel = CollisionKernel::hard_sphere();
    let g = VelocityFunction::new(random_function(&grid, 11)).unwrap();
    let h = VelocityFunction::new(random_function(&grid, 17)).unwrap();
    let fast = q_bilinear(&g, &h, &kernel, &grid).unwrap();
    let oracle = brute_force_q(&g.values, &h.values, &kernel, &grid);
    let scale = oracle.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for i in 0..grid.len {
        assert!(
            (fast.values[i] - oracle[i]).abs() <= 1e-12 * scale,
            "node {i}: {} vs oracle {}",
            fast.values[i],
            oracle[i]
        );
    }
}

#[test]
fn q_bilinear_rejects_bgk() {
    let grid = test_grid();
    let kernel = CollisionKernel::bgk(0.5);
    let g = VelocityFunction::zeros(&grid);
    assert!(matches!(
        q_bilinear(&g, &g, &kernel, &grid),
        Err(kinelim_core::Error::Unsupported(_))
    ));
}

#[test]
fn maxwellian_is_a_discrete_equilibrium() {
    let grid = test_grid();
    let kernel = CollisionKernel::hard_sphere();
    let mu = VelocityFunction::new(grid.maxwellian.clone()).unwrap();
    let q = q_bilinear(&mu, &mu, &kernel, &grid).unwrap();
    let q_norm = grid.norm(&q.values);
    let mu_norm = grid.norm(&grid.maxwellian);
    assert!(q_norm <= 1e-3 * mu_norm, "equilibrium residual {q_norm} vs {mu_norm}");

    // The residual shrinks under refinement (it is box-clipping plus
    // interpolation error, both vanishing).
    let fine = build_velocity_grid_with_tol(6.0, 12, 1e-2).unwrap();
    let mu_f = VelocityFunction::new(fine.maxwellian.clone()).unwrap();
    let qf = q_bilinear(&mu_f, &mu_f, &kernel, &fine).unwrap();
    assert!(fine.norm(&qf.values) / fine.norm(&fine.maxwellian) < q_norm / mu_norm);
}

#[test]
fn collision_invariants_vanish_after_remap() {
    let grid = test_grid();
    let kernel = CollisionKernel::hard_sphere();
    let g = VelocityFunction::new(random_function(&grid, 3)).unwrap();
    let h = VelocityFunction::new(random_function(&grid, 5)).unwrap();
    let q = q_bilinear(&g, &h, &kernel, &grid).unwrap();
    let scale = grid.norm(&q.values).max(1e-300);
    for phi in invariants(&grid) {
        let m = grid.inner(&q.values, &phi);
        assert!(m.abs() <= 1e-8 * scale, "moment {m} vs scale {scale}");
    }
}

fn invariants(grid: &VelocityGrid) -> Vec<Vec<f64>> {
    vec![
        vec![1.0; grid.len],
        (0..grid.len).map(|i| grid.nodes[i][0]).collect(),
        (0..grid.len).map(|i| grid.nodes[i][1]).collect(),
        (0..grid.len).map(|i| grid.nodes[i][2]).collect(),
        (0..grid.len).map(|i| grid.speed_squared(i)).collect(),
    ]
}

#[test]
fn gamma_is_bilinear_and_annihilates_equilibrium() {
    let grid = test_grid();
    let kernel = CollisionKernel::hard_sphere();
    let zero = VelocityFunction::zeros(&grid);
    let h = VelocityFunction::new(random_function(&grid, 23)).unwrap();
    let out = gamma_bilinear(&zero, &h, &kernel, &grid).unwrap();
    assert!(out.values.iter().all(|v| *v == 0.0));

    // Discretization-floor fixture calibrated for the (V = 4.8, n = 8) grid.
    let sqrt_mu = VelocityFunction::new(grid.sqrt_maxwellian.clone()).unwrap();
    let gm = gamma_bilinear(&sqrt_mu, &sqrt_mu, &kernel, &grid).unwrap();
    assert!(grid.norm(&gm.values) <= 5e-3, "Gamma(sqrt mu, sqrt mu) = {}", grid.norm(&gm.values));

    // Linearity in the first slot: Gamma(a f + b g, h).
    let f = VelocityFunction::new(random_function(&grid, 31)).unwrap();
    let g2 = VelocityFunction::new(random_function(&grid, 37)).unwrap();
    let combo = VelocityFunction::new(
        f.values.iter().zip(g2.values.iter()).map(|(a, b)| 2.0 * a - 0.5 * b).collect(),
    )
    .unwrap();
    let lhs = gamma_bilinear(&combo, &h, &kernel, &grid).unwrap();
    let gf = gamma_bilinear(&f, &h, &kernel, &grid).unwrap();
    let gg = gamma_bilinear(&g2, &h, &kernel, &grid).unwrap();
    let scale = grid.norm(&lhs.values).max(1e-300);
    for i in 0..grid.len {
        let expect = 2.0 * gf.values[i] - 0.5 * gg.values[i];
        assert!((lhs.values[i] - expect).abs() <= 1e-11 * scale);
    }

    // Invariant pairings of Gamma vanish against the sqrt(mu)-weighted family.
    let gamma_fg = gamma_bilinear(&f, &g2, &kernel, &grid).unwrap();
    let scale = grid.norm(&gamma_fg.values).max(1e-300);
    for phi in invariants(&grid) {
        let weighted: Vec<f64> =
            phi.iter().zip(grid.sqrt_maxwellian.iter()).map(|(p, m)| p * m).collect();
        let pairing = grid.inner(&gamma_fg.values, &weighted);
        assert!(pairing.abs() <= 1e-8 * scale, "pairing {pairing}");
    }
}

#[test]
fn linearized_operator_annihilates_null_space() {
    let grid = test_grid();
    let basis = NullSpaceBasis::new(&grid);
    let kernel = CollisionKernel::hard_sphere();
    let op = assemble_l_matrix(&kernel, &grid, &basis, 4096).unwrap();

    let scale = match &op {
        LinearOperator::Assembled { matrix, .. } => matrix.norm(),
        _ => panic!("expected assembled"),
    };
    for dir in [
        grid.sqrt_maxwellian.clone(),
        (0..grid.len).map(|i| grid.nodes[i][0] * grid.sqrt_maxwellian[i]).collect::<Vec<f64>>(),
        (0..grid.len)
            .map(|i| grid.speed_squared(i) * grid.sqrt_maxwellian[i])
            .collect::<Vec<f64>>(),
    ] {
        let f = VelocityFunction::new(dir).unwrap();
        let out = apply_l(&f, &op, &grid, &basis).unwrap();
        let rel = grid.norm(&out.values) / (scale * grid.norm(&f.values)).max(1e-300);
        assert!(rel <= 1e-8, "null-space residual {rel}");
    }
}

#[test]
fn linearized_operator_is_symmetric_and_nonnegative() {
    let grid = test_grid();
    let basis = NullSpaceBasis::new(&grid);
    let kernel = CollisionKernel::hard_sphere();
    let op = assemble_l_matrix(&kernel, &grid, &basis, 4096).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..20 {
        let f: Vec<f64> =
            (0..grid.len).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g: Vec<f64> =
            (0..grid.len).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let lf = apply_l_slice(&f, &op, &grid, &basis).unwrap();
        let lg = apply_l_slice(&g, &op, &grid, &basis).unwrap();
        let a = grid.inner(&lf, &g);
        let b = grid.inner(&f, &lg);
        assert_relative_eq!(a, b, max_relative = 1e-8, epsilon = 1e-12);
        let quad = grid.inner(&lf, &f);
        assert!(quad >= -1e-8 * grid.inner(&f, &f), "negative quadratic form {quad}");
    }
}

#[test]
fn assembled_columns_match_operator_application() {
    let grid = test_grid();
    let basis = NullSpaceBasis::new(&grid);
    let kernel = CollisionKernel::hard_sphere();
    let op = assemble_l_matrix(&kernel, &grid, &basis, 4096).unwrap();
    let matrix = match &op {
        LinearOperator::Assembled { matrix, .. } => matrix.clone(),
        _ => unreachable!(),
    };
    // Column k of the assembled matrix equals L applied to the unit node
    // function e_k.
    for k in [0usize, 57, 255, 511] {
        let mut e = vec![0.0; grid.len];
        e[k] = 1.0;
        let col = apply_l_slice(&e, &op, &grid, &basis).unwrap();
        for r in 0..grid.len {
            assert_relative_eq!(col[r], matrix[(r, k)], epsilon = 1e-12);
        }
    }
}

#[test]
fn bgk_operator_closed_form_and_projector_idempotence() {
    let grid = test_grid();
    let basis = NullSpaceBasis::new(&grid);
    let tau = 0.7;

    let p = kinelim_core::collision::projector_matrix(&grid, &basis);
    let p2 = &p * &p;
    let dev = (&p2 - &p).norm() / p.norm();
    assert!(dev <= 1e-10, "projector idempotence deviation {dev}");

    // L = (1/tau)(I - P) applied to anything reproduces the closed form.
    let op = LinearOperator::bgk(tau);
    let f = random_function(&grid, 41);
    let lf = apply_l_slice(&f, &op, &grid, &basis).unwrap();
    let fv = nalgebra::DVector::from_column_slice(&f);
    let expected = (&fv - &p * &fv) / tau;
    for i in 0..grid.len {
        assert_relative_eq!(lf[i], expected[i], epsilon = 1e-10);
    }
}

#[test]
fn hard_sphere_spectral_gap_is_positive() {
    let grid = test_grid();
    let basis = NullSpaceBasis::new(&grid);
    let kernel = CollisionKernel::hard_sphere();
    let op = assemble_l_matrix(&kernel, &grid, &basis, 4096).unwrap();
    let (gap, max) = spectral_gap(&op, &grid, &basis).unwrap();
    assert!(gap > 0.0, "spectral gap {gap}");
    assert!(max > gap);
    println!("hard-sphere 8^3 spectral gap fixture: lambda_g = {gap:.6e}, max = {max:.6e}");
}

#[test]
fn angular_weights_sum_to_full_sphere() {
    let sigma = SigmaQuadrature::new(8, 4, 0.0, 0.5 * std::f64::consts::PI);
    let total = sigma.total_weight();
    assert!((total - 4.0 * std::f64::consts::PI).abs() < 1e-8, "total {total}");
}

#[test]
fn grid_above_assembly_limit_is_rejected() {
    let grid = test_grid();
    let basis = NullSpaceBasis::new(&grid);
    let kernel = CollisionKernel::hard_sphere();
    assert!(matches!(
        assemble_l_matrix(&kernel, &grid, &basis, 100),
        Err(kinelim_core::Error::Resource(_))
    ));
}
