//! Truncated Cartesian velocity grid with midpoint quadrature.
//!
//! Nodes are cell centers of a uniform grid over `[-V, V]^3` with an even
//! number of points per axis, so the node set is exactly invariant under
//! `v -> -v` and no node sits at the origin. Quadrature sums traverse the
//! nodes in mirror pairs `(idx, len-1-idx)`; the pair members of an odd
//! integrand cancel exactly in floating point, which makes odd Gaussian
//! moments vanish identically and keeps every reduction deterministic.

use crate::error::{Error, Result};

/// Default relative mass defect tolerated by the grid validator.
pub const DEFAULT_TOL_MASS: f64 = 1e-6;

/// Velocity-space discretization: nodes, midpoint weights and the tabulated
/// global Maxwellian.
#[derive(Clone)]
pub struct VelocityGrid {
    /// Cutoff radius `V`; the grid covers `[-V, V]^3`.
    pub v_max: f64,
    /// Points per axis (even, >= 8).
    pub n_per_axis: usize,
    /// Total node count `n^3`.
    pub len: usize,
    /// Axis spacing `2V/n`.
    pub h: f64,
    /// Midpoint quadrature weight per node, `h^3`.
    pub weight: f64,
    /// 1D axis coordinates.
    pub axis: Vec<f64>,
    /// Node coordinates, row-major over (i, j, k).
    pub nodes: Vec<[f64; 3]>,
    /// `mu(v) = (2 pi)^(-3/2) exp(-|v|^2/2)` at the nodes.
    pub maxwellian: Vec<f64>,
    /// `sqrt(mu)` at the nodes.
    pub sqrt_maxwellian: Vec<f64>,
    /// Discrete Maxwellian mass `sum w*mu` (close to but never above 1).
    pub mass: f64,
    /// Mass tolerance the grid was validated against.
    pub tol_mass: f64,
}

/// Values of a scalar function on the velocity nodes.
#[derive(Clone, Debug)]
pub struct VelocityFunction {
    pub values: Vec<f64>,
}

impl VelocityFunction {
    /// Wraps nodal values, rejecting non-finite entries.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::shape("velocity function contains NaN/Inf entries"));
        }
        Ok(VelocityFunction { values })
    }

    pub fn zeros(grid: &VelocityGrid) -> Self {
        VelocityFunction { values: vec![0.0; grid.len] }
    }
}

/// Builds the velocity grid for cutoff radius `v_max` and `n_per_axis` points
/// per axis. Rejects odd `n_per_axis` (the grid must be sign-symmetric
/// without a node at v = 0) and non-positive `v_max`.
pub fn build_velocity_grid(v_max: f64, n_per_axis: usize) -> Result<VelocityGrid> {
    build_velocity_grid_with_tol(v_max, n_per_axis, DEFAULT_TOL_MASS)
}

/// Same as [`build_velocity_grid`] with an explicit mass tolerance, for
/// deliberately coarse grids.
pub fn build_velocity_grid_with_tol(
    v_max: f64,
    n_per_axis: usize,
    tol_mass: f64,
) -> Result<VelocityGrid> {
    if !(v_max > 0.0) {
        return Err(Error::config(format!("velocity cutoff must be positive, got {v_max}")));
    }
    if n_per_axis < 8 || n_per_axis % 2 != 0 {
        return Err(Error::config(format!(
            "points per axis must be even and >= 8, got {n_per_axis}"
        )));
    }

    let n = n_per_axis;
    let h = 2.0 * v_max / n as f64;
    // node(i) = (2i + 1 - n) * (V/n): integer multiplier times a fixed float,
    // so node(n-1-i) is the exact floating-point negation of node(i).
    let scale = v_max / n as f64;
    let axis: Vec<f64> = (0..n).map(|i| (2 * i as i64 + 1 - n as i64) as f64 * scale).collect();

    let len = n * n * n;
    let mut nodes = Vec::with_capacity(len);
    let mut maxwellian = Vec::with_capacity(len);
    let mut sqrt_maxwellian = Vec::with_capacity(len);
    let norm = (2.0 * std::f64::consts::PI).powf(-1.5);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let v = [axis[i], axis[j], axis[k]];
                let sq = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
                let mu = norm * (-0.5 * sq).exp();
                nodes.push(v);
                maxwellian.push(mu);
                sqrt_maxwellian.push(mu.sqrt());
            }
        }
    }

    let weight = h * h * h;
    let mut grid = VelocityGrid {
        v_max,
        n_per_axis,
        len,
        h,
        weight,
        axis,
        nodes,
        maxwellian,
        sqrt_maxwellian,
        mass: 0.0,
        tol_mass,
    };
    grid.mass = grid.integrate(&grid.maxwellian);

    if grid.mass > 1.0 + 1e-12 || grid.mass < 1.0 - tol_mass {
        return Err(Error::config(format!(
            "Maxwellian mass {} outside [1 - {tol_mass}, 1]; increase v_max or n_per_axis",
            grid.mass
        )));
    }
    Ok(grid)
}

impl VelocityGrid {
    /// Flat index of the mirror node `-v`.
    #[inline]
    pub fn mirror(&self, idx: usize) -> usize {
        self.len - 1 - idx
    }

    /// Quadrature of nodal values: `w * sum f`, accumulated over mirror pairs
    /// in a fixed order so sign-symmetric integrands cancel exactly.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        debug_assert_eq!(f.len(), self.len);
        let half = self.len / 2;
        let mut acc = 0.0;
        for idx in 0..half {
            acc += f[idx] + f[self.len - 1 - idx];
        }
        acc * self.weight
    }

    /// Plain L2(dv) inner product of nodal values.
    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        debug_assert_eq!(f.len(), self.len);
        debug_assert_eq!(g.len(), self.len);
        let half = self.len / 2;
        let mut acc = 0.0;
        for idx in 0..half {
            let m = self.len - 1 - idx;
            acc += f[idx] * g[idx] + f[m] * g[m];
        }
        acc * self.weight
    }

    /// L2(dv) norm of nodal values.
    pub fn norm(&self, f: &[f64]) -> f64 {
        self.inner(f, f).max(0.0).sqrt()
    }

    /// `|v|^2` at a node.
    #[inline]
    pub fn speed_squared(&self, idx: usize) -> f64 {
        let v = self.nodes[idx];
        v[0] * v[0] + v[1] * v[1] + v[2] * v[2]
    }
}

/// Weighted norm `|| <v>^l f ||_{L2(dv)}` with `<v> = (1+|v|^2)^(1/2)`;
/// `l = 0` reduces to the plain L2 norm.
pub fn weighted_l2_norm(f: &VelocityFunction, grid: &VelocityGrid, l: f64) -> Result<f64> {
    if f.values.len() != grid.len {
        return Err(Error::shape(format!(
            "velocity function has {} entries, grid has {}",
            f.values.len(),
            grid.len
        )));
    }
    let half = grid.len / 2;
    let mut acc = 0.0;
    for idx in 0..half {
        let m = grid.len - 1 - idx;
        // <v>^(2l) is mirror-symmetric; evaluate once per pair.
        let bracket = (1.0 + grid.speed_squared(idx)).powf(l);
        acc += bracket * (f.values[idx] * f.values[idx] + f.values[m] * f.values[m]);
    }
    Ok((acc * grid.weight).sqrt())
}
