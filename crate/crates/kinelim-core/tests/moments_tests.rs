//! Macro-micro decomposition properties, the 13-moment bi-orthogonal family,
//! and the macroscopic source terms.

use approx::assert_relative_eq;
use kinelim_core::collision::{CollisionKernel, LinearOperator};
use kinelim_core::grid::SpatialGrid;
use kinelim_core::moments::{
    build_moment_basis, macro_sources, moment_index, project_p, NullSpaceBasis,
};
use kinelim_core::sim::Distribution;
use kinelim_core::velocity::{build_velocity_grid, build_velocity_grid_with_tol, VelocityGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn vgrid() -> VelocityGrid {
    build_velocity_grid_with_tol(4.8, 8, 1e-2).unwrap()
}

fn single_cell(values: Vec<f64>) -> Distribution {
    let n = values.len();
    Distribution { data: values, n_cells: 1, n_nodes: n, t: 0.0, eps: 1.0 }
}

/// Dense-Gram projection oracle: solve the 5x5 normal equations directly.
fn oracle_project(grid: &VelocityGrid, f: &[f64]) -> Vec<f64> {
    let raw: Vec<Vec<f64>> = vec![
        grid.sqrt_maxwellian.clone(),
        (0..grid.len).map(|i| grid.nodes[i][0] * grid.sqrt_maxwellian[i]).collect(),
        (0..grid.len).map(|i| grid.nodes[i][1] * grid.sqrt_maxwellian[i]).collect(),
        (0..grid.len).map(|i| grid.nodes[i][2] * grid.sqrt_maxwellian[i]).collect(),
        (0..grid.len).map(|i| grid.speed_squared(i) * grid.sqrt_maxwellian[i]).collect(),
    ];
    let mut gram = nalgebra::DMatrix::<f64>::zeros(5, 5);
    let mut rhs = nalgebra::DVector::<f64>::zeros(5);
    for r in 0..5 {
        for c in 0..5 {
            gram[(r, c)] = grid.inner(&raw[r], &raw[c]);
        }
        rhs[r] = grid.inner(f, &raw[r]);
    }
    let coef = gram.lu().solve(&rhs).unwrap();
    let mut out = vec![0.0; grid.len];
    for k in 0..5 {
        for i in 0..grid.len {
            out[i] += coef[k] * raw[k][i];
        }
    }
    out
}

#[test]
fn projection_of_sqrt_mu_recovers_unit_density() {
    let grid = vgrid();
    let basis = NullSpaceBasis::new(&grid);
    let g = single_cell(grid.sqrt_maxwellian.clone());
    let (fields, _pg, g2) = project_p(&g, &grid, &basis).unwrap();
    assert_relative_eq!(fields.a[0], 1.0, epsilon = 1e-10);
    for axis in 0..3 {
        assert!(fields.b_vec[axis][0].abs() < 1e-12);
    }
    assert!(fields.c[0].abs() < 1e-10);
    assert!(grid.norm(g2.cell(0)) < 1e-12);
}

#[test]
fn null_space_member_has_zero_kinetic_part() {
    let grid = vgrid();
    let basis = NullSpaceBasis::new(&grid);
    // g = (|v|^2/2 - 3/2) sqrt(mu) lies in the span.
    let values: Vec<f64> = (0..grid.len)
        .map(|i| (0.5 * grid.speed_squared(i) - 1.5) * grid.sqrt_maxwellian[i])
        .collect();
    let g = single_cell(values);
    let (_, pg, g2) = project_p(&g, &grid, &basis).unwrap();
    let rel = grid.norm(g2.cell(0)) / grid.norm(pg.cell(0));
    assert!(rel < 1e-8, "kinetic part {rel}");
}

#[test]
fn projection_matches_dense_gram_oracle_and_pythagoras() {
    let grid = vgrid();
    let basis = NullSpaceBasis::new(&grid);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..10 {
        let values: Vec<f64> =
            (0..grid.len).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g = single_cell(values.clone());
        let (_, pg, g2) = project_p(&g, &grid, &basis).unwrap();

        let oracle = oracle_project(&grid, &values);
        for i in 0..grid.len {
            assert!((pg.cell(0)[i] - oracle[i]).abs() < 1e-10);
        }

        // P(Pg) = Pg
        let (_, ppg, _) = project_p(&pg, &grid, &basis).unwrap();
        for i in 0..grid.len {
            assert!((ppg.cell(0)[i] - pg.cell(0)[i]).abs() < 1e-10);
        }

        // orthogonality and norm splitting
        let cross = grid.inner(pg.cell(0), g2.cell(0));
        assert!(cross.abs() < 1e-8 * grid.inner(&values, &values));
        let total = grid.inner(&values, &values);
        let split = grid.inner(pg.cell(0), pg.cell(0)) + grid.inner(g2.cell(0), g2.cell(0));
        assert_relative_eq!(total, split, max_relative = 1e-8);
    }
}

#[test]
fn projection_is_self_adjoint() {
    let grid = vgrid();
    let basis = NullSpaceBasis::new(&grid);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let f: Vec<f64> = (0..grid.len).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let h: Vec<f64> = (0..grid.len).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let pf = basis.project(&grid, &f);
    let ph = basis.project(&grid, &h);
    let a = grid.inner(&pf, &h);
    let b = grid.inner(&f, &ph);
    assert_relative_eq!(a, b, max_relative = 1e-8, epsilon = 1e-14);
}

#[test]
fn moment_basis_is_biorthogonal() {
    let grid = build_velocity_grid(8.0, 32).unwrap();
    let mb = build_moment_basis(&grid).unwrap();
    for j in 0..13 {
        for k in 0..13 {
            let p = grid.inner(&mb.e_star[j], &mb.e[k]);
            let expected = if j == k { 1.0 } else { 0.0 };
            assert!(
                (p - expected).abs() < 1e-8,
                "bi-orthogonality ({j},{k}): {p} vs {expected}"
            );
        }
    }
}

#[test]
fn gram_matrix_matches_gaussian_closed_forms() {
    let grid = build_velocity_grid(8.0, 32).unwrap();
    let mb = build_moment_basis(&grid).unwrap();
    // (v1 sqrt(mu), v1 |v|^2 sqrt(mu)) = E[v1^2 |v|^2] = 5.
    let b1 = moment_index::B[0];
    let c1 = moment_index::C[0];
    assert_relative_eq!(mb.gram[(b1, c1)], 5.0, epsilon = 1e-4);
    // (sqrt(mu), v1^2 sqrt(mu)) = E[v1^2] = 1.
    assert_relative_eq!(mb.gram[(moment_index::A, moment_index::AB[0])], 1.0, epsilon = 1e-5);
    // (v1 v2 sqrt(mu), v1 v2 sqrt(mu)) = E[v1^2 v2^2] = 1.
    assert_relative_eq!(mb.gram[(moment_index::AB[1], moment_index::AB[1])], 1.0, epsilon = 1e-5);
    // (v1 |v|^2 sqrt(mu), v1 |v|^2 sqrt(mu)) = E[v1^2 |v|^4] = 35.
    assert_relative_eq!(mb.gram[(c1, c1)], 35.0, epsilon = 1e-3);
}

#[test]
fn dual_of_density_row_lies_in_collision_invariants() {
    // e*_a = (5 - |v|^2)/2 sqrt(mu) in the continuum; on the grid it stays in
    // the invariant span, so l_a = -(L g2, e*_a) vanishes identically.
    let grid = vgrid();
    let basis = NullSpaceBasis::new(&grid);
    let mb = build_moment_basis(&grid).unwrap();
    let mut dual = mb.e_star[moment_index::A].clone();
    basis.project_out(&grid, &mut dual);
    let rel = grid.norm(&dual) / grid.norm(&mb.e_star[moment_index::A]);
    assert!(rel < 1e-8, "density dual has non-invariant part {rel}");
}

#[test]
fn macro_sources_vanish_on_macroscopic_states() {
    let grid = vgrid();
    let sgrid = SpatialGrid::new(2, 8).unwrap();
    let basis = NullSpaceBasis::new(&grid);
    let mb = build_moment_basis(&grid).unwrap();
    let kernel = CollisionKernel::bgk(0.5);
    let op = LinearOperator::bgk(0.5);

    // g with g2 = 0: r, l, m vanish exactly.
    let mut g = Distribution::zeros(sgrid.len, grid.len, 0.1);
    for cell in 0..sgrid.len {
        let x = sgrid.coords(cell);
        let amp = 0.01 * (x[0].sin() + 0.5 * x[1].cos());
        let out = g.cell_mut(cell);
        for i in 0..grid.len {
            out[i] = amp * grid.sqrt_maxwellian[i];
        }
    }
    let src = macro_sources(&g, &op, &kernel, &sgrid, &grid, &basis, &mb).unwrap();
    for cell in 0..sgrid.len {
        for j in 0..13 {
            assert!(src.r[cell][j].abs() < 1e-12, "r[{cell}][{j}] = {}", src.r[cell][j]);
            assert!(src.l[cell][j].abs() < 1e-12);
            assert!(src.m[cell][j].abs() < 1e-10);
        }
    }

    // g = 0: h vanishes exactly.
    let zero = Distribution::zeros(sgrid.len, grid.len, 0.1);
    let src0 = macro_sources(&zero, &op, &kernel, &sgrid, &grid, &basis, &mb).unwrap();
    for cell in 0..sgrid.len {
        for j in 0..13 {
            assert_eq!(src0.h[cell][j], 0.0);
        }
    }
}

#[test]
fn macro_sources_m_vanishes_for_spatially_constant_state() {
    let grid = vgrid();
    let sgrid = SpatialGrid::new(2, 8).unwrap();
    let basis = NullSpaceBasis::new(&grid);
    let mb = build_moment_basis(&grid).unwrap();
    let kernel = CollisionKernel::bgk(0.5);
    let op = LinearOperator::bgk(0.5);

    // Constant-in-x state with a genuine kinetic part.
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut slice: Vec<f64> =
        (0..grid.len).map(|_| rng.gen_range(-1.0..1.0) * grid.sqrt_maxwellian[0]).collect();
    basis.project_out(&grid, &mut slice);
    let mut g = Distribution::zeros(sgrid.len, grid.len, 0.1);
    for cell in 0..sgrid.len {
        g.cell_mut(cell).copy_from_slice(&slice);
    }
    let src = macro_sources(&g, &op, &kernel, &sgrid, &grid, &basis, &mb).unwrap();
    for cell in 0..sgrid.len {
        for j in 0..13 {
            assert!(src.m[cell][j].abs() < 1e-12, "m[{cell}][{j}] = {}", src.m[cell][j]);
        }
    }

    // l entries for the density-row dual vanish (it is a collision invariant);
    // generic rows are nonzero.
    let l_a = src.l[0][moment_index::A];
    let g2_norm = grid.norm(&slice);
    assert!(l_a.abs() <= 1e-8 * g2_norm, "l_a = {l_a}");
}

#[test]
fn conservation_residuals_reject_thin_input() {
    let grid = vgrid();
    let sgrid = SpatialGrid::new(2, 8).unwrap();
    let basis = NullSpaceBasis::new(&grid);
    let g = Distribution::zeros(sgrid.len, grid.len, 0.1);
    let err = kinelim_core::moments::conservation_residuals(
        &[0.0],
        std::slice::from_ref(&g),
        0.1,
        &sgrid,
        &grid,
        &basis,
    );
    assert!(matches!(err, Err(kinelim_core::Error::Usage(_))));
}

#[test]
fn conservation_residuals_vanish_for_static_equilibrium() {
    let grid = vgrid();
    let sgrid = SpatialGrid::new(2, 8).unwrap();
    let basis = NullSpaceBasis::new(&grid);
    // Static macroscopic state, constant in x: all residual terms vanish.
    let mut g = Distribution::zeros(sgrid.len, grid.len, 0.1);
    for cell in 0..sgrid.len {
        let out = g.cell_mut(cell);
        for i in 0..grid.len {
            out[i] = 0.02 * grid.sqrt_maxwellian[i];
        }
    }
    let snaps = vec![g.clone(), g.clone(), g.clone()];
    let res = kinelim_core::moments::conservation_residuals(
        &[0.0, 0.1, 0.2],
        &snaps,
        0.1,
        &sgrid,
        &grid,
        &basis,
    )
    .unwrap();
    assert_eq!(res.len(), 1);
    for r in &res[0] {
        assert!(r.abs() < 1e-12, "static residual {r}");
    }

    // The all-zero trajectory gives exactly zero.
    let zero = Distribution::zeros(sgrid.len, grid.len, 0.1);
    let res0 = kinelim_core::moments::conservation_residuals(
        &[0.0, 0.1, 0.2],
        &[zero.clone(), zero.clone(), zero],
        0.1,
        &sgrid,
        &grid,
        &basis,
    )
    .unwrap();
    for r in &res0[0] {
        assert_eq!(*r, 0.0);
    }
}
