//! Velocity-grid quadrature validated against an independent 1D
//! Gauss-Hermite oracle (Golub-Welsch nodes, cubed by separability).

use approx::assert_relative_eq;
use kinelim_core::velocity::{build_velocity_grid, weighted_l2_norm, VelocityFunction};

/// Gauss-Hermite nodes/weights for the weight exp(-x^2/2)/sqrt(2 pi)
/// (probabilists' convention), via the symmetric Jacobi matrix.
fn gauss_hermite_prob(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut jacobi = nalgebra::DMatrix::<f64>::zeros(n, n);
    for i in 1..n {
        let b = (i as f64).sqrt();
        jacobi[(i - 1, i)] = b;
        jacobi[(i, i - 1)] = b;
    }
    let eig = jacobi.symmetric_eigen();
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|k| {
            let node = eig.eigenvalues[k];
            let first = eig.eigenvectors[(0, k)];
            (node, first * first)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    (pairs.iter().map(|p| p.0).collect(), pairs.iter().map(|p| p.1).collect())
}

/// 1D Gaussian moment E[x^p] by the 200-node oracle.
fn gh_moment(p: usize) -> f64 {
    let (nodes, weights) = gauss_hermite_prob(200);
    nodes.iter().zip(weights.iter()).map(|(x, w)| w * x.powi(p as i32)).sum()
}

#[test]
fn oracle_reproduces_known_gaussian_moments() {
    assert_relative_eq!(gh_moment(0), 1.0, epsilon = 1e-12);
    assert!(gh_moment(1).abs() < 1e-12);
    assert_relative_eq!(gh_moment(2), 1.0, epsilon = 1e-12);
    assert_relative_eq!(gh_moment(4), 3.0, epsilon = 1e-11);
    assert_relative_eq!(gh_moment(6), 15.0, epsilon = 1e-10);
}

#[test]
fn grid_mass_matches_gauss_hermite_oracle() {
    let g = build_velocity_grid(8.0, 32).unwrap();
    // E[1]^3 via the oracle.
    let oracle = gh_moment(0).powi(3);
    assert!((g.mass - oracle).abs() < 1e-6, "mass defect {}", (g.mass - oracle).abs());
}

#[test]
fn first_moment_cancels_exactly() {
    let g = build_velocity_grid(8.0, 32).unwrap();
    for axis in 0..3 {
        let f: Vec<f64> = (0..g.len).map(|i| g.maxwellian[i] * g.nodes[i][axis]).collect();
        assert_eq!(g.integrate(&f), 0.0);
    }
}

#[test]
fn energy_moment_matches_oracle() {
    let g = build_velocity_grid(8.0, 32).unwrap();
    let e: Vec<f64> = (0..g.len).map(|i| g.maxwellian[i] * g.speed_squared(i)).collect();
    // E|v|^2 = 3 E[x^2] by separability.
    let oracle = 3.0 * gh_moment(2);
    assert!((g.integrate(&e) - oracle).abs() < 1e-5);
}

#[test]
fn gaussian_moments_up_to_order_six() {
    // Quadrature exactness regression at (V = 8, n = 32): mixed moments of
    // total order <= 6 against the separable oracle.
    let g = build_velocity_grid(8.0, 32).unwrap();
    let cases: Vec<(usize, usize, usize, f64)> = vec![
        (2, 0, 0, gh_moment(2)),
        (4, 0, 0, gh_moment(4)),
        (2, 2, 0, gh_moment(2) * gh_moment(2)),
        (6, 0, 0, gh_moment(6)),
        (4, 2, 0, gh_moment(4) * gh_moment(2)),
        (2, 2, 2, gh_moment(2).powi(3)),
    ];
    for (p, q, r, expected) in cases {
        let f: Vec<f64> = (0..g.len)
            .map(|i| {
                let v = g.nodes[i];
                g.maxwellian[i] * v[0].powi(p as i32) * v[1].powi(q as i32) * v[2].powi(r as i32)
            })
            .collect();
        let got = g.integrate(&f);
        assert!(
            (got - expected).abs() < 1e-5 * expected.max(1.0),
            "moment ({p},{q},{r}): got {got}, oracle {expected}"
        );
    }
}

#[test]
fn sqrt_mu_norms_against_oracle() {
    let g = build_velocity_grid(8.0, 32).unwrap();
    let f = VelocityFunction::new(g.sqrt_maxwellian.clone()).unwrap();
    // l = 1: integral (1 + |v|^2) mu = E[1] + E|v|^2 = 4 by the oracle.
    let oracle = (gh_moment(0).powi(3) + 3.0 * gh_moment(2)).sqrt();
    assert_relative_eq!(weighted_l2_norm(&f, &g, 1.0).unwrap(), oracle, epsilon = 1e-4);
}
