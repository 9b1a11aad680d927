//! Macro-micro decomposition, fluid moments, the 13-moment bi-orthogonal
//! family and the macroscopic source terms.
//!
//! The macroscopic projection `P` maps a velocity function onto
//! `span{sqrt(mu), v_i sqrt(mu), |v|^2 sqrt(mu)}`. It is built from a
//! Gram-Schmidt orthonormalization computed with the *discrete* quadrature,
//! so idempotence, self-adjointness and the orthogonality of `g - Pg`
//! hold to round-off on every grid rather than only in the continuum limit.

use crate::error::{Error, Result};
use crate::grid::SpatialGrid;
use crate::sim::Distribution;
use crate::velocity::VelocityGrid;
use nalgebra::{DMatrix, DVector};

/// Orthonormal basis of the collision-invariant space N on the grid, plus the
/// change of basis to the (a, b, c) parameterization of
/// `Pg = {a + b.v + c|v|^2} sqrt(mu)`.
#[derive(Clone)]
pub struct NullSpaceBasis {
    /// Five orthonormal (discrete L2) vectors spanning N, in the order
    /// sqrt(mu), v_1 sqrt(mu), v_2 sqrt(mu), v_3 sqrt(mu), |v|^2-direction.
    pub ortho: Vec<Vec<f64>>,
    /// Raw (non-orthonormal) basis values {sqrt(mu), v_i sqrt(mu), |v|^2 sqrt(mu)}.
    pub raw: Vec<Vec<f64>>,
    /// Discrete moments used by the (a, c) solve: s00=(e0,e0), s04=(e0,e4),
    /// s44=(e4,e4) for e0=sqrt(mu), e4=|v|^2 sqrt(mu), and sii=(v_i e0, v_i e0).
    pub s00: f64,
    pub s04: f64,
    pub s44: f64,
    pub sii: [f64; 3],
}

impl NullSpaceBasis {
    pub fn new(grid: &VelocityGrid) -> Self {
        let mut raw: Vec<Vec<f64>> = Vec::with_capacity(5);
        raw.push(grid.sqrt_maxwellian.clone());
        for axis in 0..3 {
            raw.push(
                (0..grid.len).map(|i| grid.nodes[i][axis] * grid.sqrt_maxwellian[i]).collect(),
            );
        }
        raw.push((0..grid.len).map(|i| grid.speed_squared(i) * grid.sqrt_maxwellian[i]).collect());

        // Modified Gram-Schmidt with one reorthogonalization pass.
        let mut ortho: Vec<Vec<f64>> = Vec::with_capacity(5);
        for src in &raw {
            let mut v = src.clone();
            for _ in 0..2 {
                for e in &ortho {
                    let c = grid.inner(&v, e);
                    for (vi, ei) in v.iter_mut().zip(e.iter()) {
                        *vi -= c * ei;
                    }
                }
            }
            let n = grid.norm(&v);
            for vi in v.iter_mut() {
                *vi /= n;
            }
            ortho.push(v);
        }

        let s00 = grid.inner(&raw[0], &raw[0]);
        let s04 = grid.inner(&raw[0], &raw[4]);
        let s44 = grid.inner(&raw[4], &raw[4]);
        let sii = [
            grid.inner(&raw[1], &raw[1]),
            grid.inner(&raw[2], &raw[2]),
            grid.inner(&raw[3], &raw[3]),
        ];
        NullSpaceBasis { ortho, raw, s00, s04, s44, sii }
    }

    /// Projection of a velocity function onto N.
    pub fn project(&self, grid: &VelocityGrid, f: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; f.len()];
        for e in &self.ortho {
            let c = grid.inner(f, e);
            for (o, ei) in out.iter_mut().zip(e.iter()) {
                *o += c * ei;
            }
        }
        out
    }

    /// `f - Pf`, in place.
    pub fn project_out(&self, grid: &VelocityGrid, f: &mut [f64]) {
        for e in &self.ortho {
            let c = grid.inner(f, e);
            for (fi, ei) in f.iter_mut().zip(e.iter()) {
                *fi -= c * ei;
            }
        }
    }

    /// (a, b, c) coefficients of the projection of `f`, solved from the
    /// discrete moment system so that reconstruct-then-project is exact.
    pub fn abc_coefficients(&self, grid: &VelocityGrid, f: &[f64]) -> ([f64; 5], Vec<f64>) {
        let m0 = grid.inner(f, &self.raw[0]);
        let m1 = grid.inner(f, &self.raw[1]);
        let m2 = grid.inner(f, &self.raw[2]);
        let m3 = grid.inner(f, &self.raw[3]);
        let m4 = grid.inner(f, &self.raw[4]);
        // [s00 s04; s04 s44] [a; c] = [m0; m4]
        let det = self.s00 * self.s44 - self.s04 * self.s04;
        let a = (m0 * self.s44 - m4 * self.s04) / det;
        let c = (self.s00 * m4 - self.s04 * m0) / det;
        let b = [m1 / self.sii[0], m2 / self.sii[1], m3 / self.sii[2]];
        let mut pf = vec![0.0; f.len()];
        for i in 0..f.len() {
            let v = grid.nodes[i];
            let q = a + b[0] * v[0] + b[1] * v[1] + b[2] * v[2] + c * grid.speed_squared(i);
            pf[i] = q * grid.sqrt_maxwellian[i];
        }
        ([a, b[0], b[1], b[2], c], pf)
    }
}

/// Coefficients of `Pg` and derived fluid moments, one value per spatial cell.
#[derive(Clone, Debug)]
pub struct MacroFields {
    pub a: Vec<f64>,
    pub b_vec: [Vec<f64>; 3],
    pub c: Vec<f64>,
    /// rho = (g, sqrt(mu))
    pub rho: Vec<f64>,
    /// u_i = (g, v_i sqrt(mu))
    pub u: [Vec<f64>; 3],
    /// theta = (g, (|v|^2/3 - 1) sqrt(mu))
    pub theta: Vec<f64>,
    /// The (|v|^2/5 - 1) moment, emitted alongside the /3 convention.
    pub theta5: Vec<f64>,
}

impl MacroFields {
    pub fn zeros(n_cells: usize) -> Self {
        let z = || vec![0.0; n_cells];
        MacroFields {
            a: z(),
            b_vec: [z(), z(), z()],
            c: z(),
            rho: z(),
            u: [z(), z(), z()],
            theta: z(),
            theta5: z(),
        }
    }
}

/// Macro-micro decomposition of a distribution: coefficient fields of `Pg`,
/// the reconstruction `Pg` and the kinetic remainder `g2 = g - Pg`.
pub fn project_p(
    g: &Distribution,
    vgrid: &VelocityGrid,
    basis: &NullSpaceBasis,
) -> Result<(MacroFields, Distribution, Distribution)> {
    if g.n_nodes != vgrid.len {
        return Err(Error::shape("distribution velocity shape does not match grid"));
    }
    let n_cells = g.n_cells;
    let mut fields = MacroFields::zeros(n_cells);
    let mut pg = g.like_zeros();
    let mut g2 = g.clone();

    let theta_w: Vec<f64> = (0..vgrid.len)
        .map(|i| (vgrid.speed_squared(i) / 3.0 - 1.0) * vgrid.sqrt_maxwellian[i])
        .collect();
    let theta5_w: Vec<f64> = (0..vgrid.len)
        .map(|i| (vgrid.speed_squared(i) / 5.0 - 1.0) * vgrid.sqrt_maxwellian[i])
        .collect();

    for cell in 0..n_cells {
        let f = g.cell(cell);
        let ([a, b1, b2, b3, c], pf) = basis.abc_coefficients(vgrid, f);
        fields.a[cell] = a;
        fields.b_vec[0][cell] = b1;
        fields.b_vec[1][cell] = b2;
        fields.b_vec[2][cell] = b3;
        fields.c[cell] = c;
        fields.rho[cell] = vgrid.inner(f, &basis.raw[0]);
        for axis in 0..3 {
            fields.u[axis][cell] = vgrid.inner(f, &basis.raw[axis + 1]);
        }
        fields.theta[cell] = vgrid.inner(f, &theta_w);
        fields.theta5[cell] = vgrid.inner(f, &theta5_w);

        let pg_cell = pg.cell_mut(cell);
        let g2_cell = g2.cell_mut(cell);
        for i in 0..vgrid.len {
            pg_cell[i] = pf[i];
            g2_cell[i] -= pf[i];
        }
    }
    Ok((fields, pg, g2))
}

/// The 13-moment family and its bi-orthogonal dual, `(e*_j, e_k) = delta_jk`.
pub struct MomentBasis {
    /// e_1..e_13: {sqrt(mu), v_i sqrt(mu), v_i v_j sqrt(mu) (i<=j), v_i |v|^2 sqrt(mu)}.
    pub e: Vec<Vec<f64>>,
    /// Dual family solved from the Gram system.
    pub e_star: Vec<Vec<f64>>,
    /// Gram matrix of `e`.
    pub gram: DMatrix<f64>,
}

/// Index layout of the 13-moment family.
pub mod moment_index {
    /// sqrt(mu)
    pub const A: usize = 0;
    /// v_i sqrt(mu), i = 0..3
    pub const B: [usize; 3] = [1, 2, 3];
    /// v_i v_j sqrt(mu), pairs (0,0),(0,1),(0,2),(1,1),(1,2),(2,2)
    pub const AB_PAIRS: [(usize, usize); 6] = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];
    pub const AB: [usize; 6] = [4, 5, 6, 7, 8, 9];
    /// v_i |v|^2 sqrt(mu)
    pub const C: [usize; 3] = [10, 11, 12];
}

pub fn build_moment_basis(grid: &VelocityGrid) -> Result<MomentBasis> {
    let mut e: Vec<Vec<f64>> = Vec::with_capacity(13);
    e.push(grid.sqrt_maxwellian.clone());
    for axis in 0..3 {
        e.push((0..grid.len).map(|i| grid.nodes[i][axis] * grid.sqrt_maxwellian[i]).collect());
    }
    for &(ai, aj) in moment_index::AB_PAIRS.iter() {
        e.push(
            (0..grid.len)
                .map(|i| grid.nodes[i][ai] * grid.nodes[i][aj] * grid.sqrt_maxwellian[i])
                .collect(),
        );
    }
    for axis in 0..3 {
        e.push(
            (0..grid.len)
                .map(|i| grid.nodes[i][axis] * grid.speed_squared(i) * grid.sqrt_maxwellian[i])
                .collect(),
        );
    }

    let gram = DMatrix::from_fn(13, 13, |r, c| grid.inner(&e[r], &e[c]));
    let svd = gram.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smin <= 0.0 || smax / smin > 1e12 {
        return Err(Error::DegenerateGrid(format!(
            "13-moment Gram matrix condition number {:.3e} exceeds 1e12",
            smax / smin
        )));
    }

    let lu = gram.clone().lu();
    let mut e_star = Vec::with_capacity(13);
    for j in 0..13 {
        let mut rhs = DVector::zeros(13);
        rhs[j] = 1.0;
        let coeffs = lu.solve(&rhs).ok_or_else(|| {
            Error::DegenerateGrid("13-moment Gram solve failed".to_string())
        })?;
        let mut dual = vec![0.0; grid.len];
        for k in 0..13 {
            let ck = coeffs[k];
            for (d, ek) in dual.iter_mut().zip(e[k].iter()) {
                *d += ck * ek;
            }
        }
        e_star.push(dual);
    }

    Ok(MomentBasis { e, e_star, gram })
}

/// The four 13-vectors of macroscopic source terms per spatial cell:
/// r = (g2, e*), m = -(v . grad_x g2, e*), l = -(L g2, e*), h = (Gamma(g,g), e*).
#[derive(Clone)]
pub struct MacroSources {
    pub r: Vec<[f64; 13]>,
    pub m: Vec<[f64; 13]>,
    pub l: Vec<[f64; 13]>,
    pub h: Vec<[f64; 13]>,
}

pub fn macro_sources(
    g: &Distribution,
    op: &crate::collision::LinearOperator,
    kernel: &crate::collision::CollisionKernel,
    sgrid: &SpatialGrid,
    vgrid: &VelocityGrid,
    basis: &NullSpaceBasis,
    mbasis: &MomentBasis,
) -> Result<MacroSources> {
    let n_cells = g.n_cells;
    if n_cells != sgrid.len {
        return Err(Error::shape("distribution spatial shape does not match grid"));
    }
    let (_, _, g2) = project_p(g, vgrid, basis)?;

    let mut r = vec![[0.0; 13]; n_cells];
    let mut m = vec![[0.0; 13]; n_cells];
    let mut l = vec![[0.0; 13]; n_cells];
    let mut h = vec![[0.0; 13]; n_cells];

    // r and l are plain per-cell pairings.
    for cell in 0..n_cells {
        let f2 = g2.cell(cell);
        let lg2 = crate::collision::apply_l_slice(f2, op, vgrid, basis)?;
        for j in 0..13 {
            r[cell][j] = vgrid.inner(f2, &mbasis.e_star[j]);
            l[cell][j] = -vgrid.inner(&lg2, &mbasis.e_star[j]);
        }
    }

    // m_j = -sum_i d/dx_i (g2, v_i e*_j): moments first, spectral derivative after.
    for j in 0..13 {
        for axis in 0..sgrid.dim {
            let weighted: Vec<f64> = (0..vgrid.len)
                .map(|i| vgrid.nodes[i][axis] * mbasis.e_star[j][i])
                .collect();
            let mut field = vec![0.0; n_cells];
            for cell in 0..n_cells {
                field[cell] = vgrid.inner(g2.cell(cell), &weighted);
            }
            let d = sgrid.derivative(&field, axis);
            for cell in 0..n_cells {
                m[cell][j] -= d[cell];
            }
        }
    }

    // h uses the full g in Gamma.
    for cell in 0..n_cells {
        let f = g.cell(cell);
        let gamma = crate::collision::gamma_of_state(f, kernel, op, vgrid, basis)?;
        for j in 0..13 {
            h[cell][j] = vgrid.inner(&gamma, &mbasis.e_star[j]);
        }
    }

    Ok(MacroSources { r, m, l, h })
}

/// L2(dx) residual norms of the local conservation laws evaluated on a
/// trajectory of snapshots by centered time differences and spectral space
/// derivatives. Returns one `[res_a, res_b, res_c]` triple per interior
/// snapshot.
pub fn conservation_residuals(
    times: &[f64],
    snapshots: &[Distribution],
    eps: f64,
    sgrid: &SpatialGrid,
    vgrid: &VelocityGrid,
    basis: &NullSpaceBasis,
) -> Result<Vec<[f64; 3]>> {
    if snapshots.len() < 2 {
        return Err(Error::Usage(
            "conservation residuals need at least 2 snapshots for time differencing".to_string(),
        ));
    }
    if snapshots.len() != times.len() {
        return Err(Error::shape("times and snapshots have different lengths"));
    }

    struct Slice {
        a: Vec<f64>,
        b: [Vec<f64>; 3],
        c: Vec<f64>,
        /// F3_i = (g2, v_i |v|^2 sqrt(mu)), the heat-type flux of the a/c laws.
        f3: [Vec<f64>; 3],
        /// S_ij = (g2, v_i v_j sqrt(mu)), the stress-type flux of the b law.
        s: [[Vec<f64>; 3]; 3],
    }

    let mut slices = Vec::with_capacity(snapshots.len());
    let mut flux3_w: Vec<Vec<f64>> = Vec::new();
    for axis in 0..3 {
        flux3_w.push(
            (0..vgrid.len)
                .map(|i| vgrid.nodes[i][axis] * vgrid.speed_squared(i) * vgrid.sqrt_maxwellian[i])
                .collect(),
        );
    }
    for snap in snapshots {
        let (fields, _, g2) = project_p(snap, vgrid, basis)?;
        let n_cells = snap.n_cells;
        let mut f3: [Vec<f64>; 3] =
            [vec![0.0; n_cells], vec![0.0; n_cells], vec![0.0; n_cells]];
        let mut s: [[Vec<f64>; 3]; 3] = Default::default();
        for i in 0..3 {
            for j in 0..3 {
                s[i][j] = vec![0.0; n_cells];
            }
        }
        for cell in 0..n_cells {
            let f2 = g2.cell(cell);
            for axis in 0..3 {
                f3[axis][cell] = vgrid.inner(f2, &flux3_w[axis]);
            }
            for i in 0..3 {
                for j in i..3 {
                    let w: Vec<f64> = (0..vgrid.len)
                        .map(|k| {
                            vgrid.nodes[k][i] * vgrid.nodes[k][j] * vgrid.sqrt_maxwellian[k]
                        })
                        .collect();
                    let val = vgrid.inner(f2, &w);
                    s[i][j][cell] = val;
                    s[j][i][cell] = val;
                }
            }
        }
        slices.push(Slice { a: fields.a, b: fields.b_vec, c: fields.c, f3, s });
    }

    let mut out = Vec::new();
    for k in 1..snapshots.len() - 1 {
        let dt_fwd = times[k + 1] - times[k];
        let dt_bwd = times[k] - times[k - 1];
        if (dt_fwd - dt_bwd).abs() > 1e-12 * dt_fwd.abs().max(dt_bwd.abs()) {
            return Err(Error::Usage("snapshots must be equally spaced in time".to_string()));
        }
        let two_dt = dt_fwd + dt_bwd;
        let cur = &slices[k];
        let n_cells = cur.a.len();

        let ddt = |prev: &[f64], next: &[f64]| -> Vec<f64> {
            prev.iter().zip(next.iter()).map(|(p, n)| (n - p) / two_dt).collect()
        };

        // div F3 and grad fields, all spectral.
        let div_f3 = sgrid.divergence(&cur.f3[..sgrid.dim].to_vec());
        let div_b = sgrid.divergence(&cur.b[..sgrid.dim].to_vec());
        let grad_a: Vec<Vec<f64>> = (0..sgrid.dim).map(|ax| sgrid.derivative(&cur.a, ax)).collect();
        let grad_c: Vec<Vec<f64>> = (0..sgrid.dim).map(|ax| sgrid.derivative(&cur.c, ax)).collect();

        // d/dt a = (1/(2 eps)) div F3
        let at = ddt(&slices[k - 1].a, &slices[k + 1].a);
        let mut res_a = vec![0.0; n_cells];
        for cell in 0..n_cells {
            res_a[cell] = at[cell] - div_f3[cell] / (2.0 * eps);
        }

        // d/dt b_i + (1/eps)(grad a + 5 grad c)_i = -(1/eps) d_j S_ij
        let mut res_b_sq = vec![0.0; n_cells];
        for i in 0..3 {
            let bt = ddt(&slices[k - 1].b[i], &slices[k + 1].b[i]);
            let mut div_s_row = vec![0.0; n_cells];
            for j in 0..sgrid.dim {
                let d = sgrid.derivative(&cur.s[i][j], j);
                for cell in 0..n_cells {
                    div_s_row[cell] += d[cell];
                }
            }
            for cell in 0..n_cells {
                let pressure = if i < sgrid.dim {
                    (grad_a[i][cell] + 5.0 * grad_c[i][cell]) / eps
                } else {
                    0.0
                };
                let r = bt[cell] + pressure + div_s_row[cell] / eps;
                res_b_sq[cell] += r * r;
            }
        }

        // d/dt c + (1/(3 eps)) div b = -(1/(6 eps)) div F3
        let ct = ddt(&slices[k - 1].c, &slices[k + 1].c);
        let mut res_c = vec![0.0; n_cells];
        for cell in 0..n_cells {
            res_c[cell] = ct[cell] + div_b[cell] / (3.0 * eps) + div_f3[cell] / (6.0 * eps);
        }

        let vol = sgrid.cell_volume();
        let norm_a = (res_a.iter().map(|v| v * v).sum::<f64>() * vol).sqrt();
        let norm_b = (res_b_sq.iter().sum::<f64>() * vol).sqrt();
        let norm_c = (res_c.iter().map(|v| v * v).sum::<f64>() * vol).sqrt();
        out.push([norm_a, norm_b, norm_c]);
    }
    Ok(out)
}
