//! Collision operators: the bilinear Boltzmann operator Q in
//! sigma-representation, the fluctuation form Gamma, the linearized operator
//! L and the BGK surrogate.
//!
//! Post-collision velocities rarely land on grid nodes. The gain term
//! interpolates the ratio of the integrand to the global Maxwellian
//! (trilinear, zero outside the box) and multiplies by the closed-form
//! Maxwellian at the off-grid point; since `mu' mu'_* = mu mu_*` along every
//! collision, the Maxwellian is then a discrete equilibrium to round-off. A
//! conservative remap projects the residual moment defect of the quadrature
//! onto Maxwellian-weighted corrections, so the discrete collision
//! invariants hold to round-off as well. The linearized operator is
//! additionally sandwiched by the discrete projector onto the orthogonal
//! complement of the collision invariants and symmetrized, which pins its
//! null space exactly.

use crate::error::{Error, Result};
use crate::moments::NullSpaceBasis;
use crate::velocity::{VelocityFunction, VelocityGrid};
use nalgebra::{DMatrix, DVector, Matrix5, Vector5};
use rayon::prelude::*;
use std::sync::Arc;

/// Nodes with `mu` below this floor are excluded from the `mu^(-1/2)`
/// division in Gamma; they carry negligible quadrature weight.
pub const DEFAULT_MU_FLOOR: f64 = 1e-30;

/// Default matrix assembly limit (nodes), 16^3.
pub const DEFAULT_ASSEMBLY_LIMIT: usize = 4096;

/// Collision model selector.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CollisionModel {
    /// Relaxation toward the local Maxwellian with time `tau`.
    Bgk { tau: f64 },
    /// Variable hard sphere: `B = b0 |v - v*|^gamma` with constant angular
    /// factor. Hard spheres are `gamma = 1, b0 = 1/(4 pi)`.
    Vhs { gamma: f64, b0: f64 },
}

/// Kernel description: model plus the angular quadrature resolution.
#[derive(Clone, Copy, Debug)]
pub struct CollisionKernel {
    pub model: CollisionModel,
    /// Gauss-Legendre nodes in theta over [0, pi/2].
    pub n_theta: usize,
    /// Uniform midpoint nodes in phi over [0, 2 pi).
    pub n_phi: usize,
    pub mu_floor: f64,
}

impl CollisionKernel {
    pub fn bgk(tau: f64) -> Self {
        CollisionKernel { model: CollisionModel::Bgk { tau }, n_theta: 8, n_phi: 4, mu_floor: DEFAULT_MU_FLOOR }
    }

    pub fn vhs(gamma: f64, b0: f64) -> Self {
        CollisionKernel { model: CollisionModel::Vhs { gamma, b0 }, n_theta: 8, n_phi: 4, mu_floor: DEFAULT_MU_FLOOR }
    }

    pub fn hard_sphere() -> Self {
        Self::vhs(1.0, 1.0 / (4.0 * std::f64::consts::PI))
    }

    pub fn is_bgk(&self) -> bool {
        matches!(self.model, CollisionModel::Bgk { .. })
    }

    /// BGK relaxation time, if this is a BGK kernel.
    pub fn tau(&self) -> Option<f64> {
        match self.model {
            CollisionModel::Bgk { tau } => Some(tau),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.model {
            CollisionModel::Bgk { tau } => {
                if !(tau > 0.0) {
                    return Err(Error::config(format!("BGK relaxation time must be positive, got {tau}")));
                }
            }
            CollisionModel::Vhs { gamma, b0 } => {
                if !(gamma > -3.0 && gamma <= 1.0) {
                    return Err(Error::config(format!("VHS exponent must lie in (-3, 1], got {gamma}")));
                }
                if !(b0 > 0.0) {
                    return Err(Error::config(format!("angular factor must be positive, got {b0}")));
                }
            }
        }
        if self.n_theta == 0 || self.n_phi == 0 {
            return Err(Error::config("angular quadrature needs at least one node per angle"));
        }
        Ok(())
    }
}

/// One sigma node expressed in the collision frame (e1 along v - v*).
#[derive(Clone, Copy)]
pub struct SigmaNode {
    pub cos_theta: f64,
    /// sin(theta) cos(phi)
    pub c2: f64,
    /// sin(theta) sin(phi)
    pub c3: f64,
    pub theta: f64,
    /// Quadrature weight including the sin(theta) Jacobian and the factor 2
    /// folding the full sphere onto theta in [0, pi/2]; weights sum to 4 pi.
    pub weight: f64,
}

/// Product Gauss(theta) x midpoint(phi) rule on the sigma sphere.
#[derive(Clone)]
pub struct SigmaQuadrature {
    pub nodes: Vec<SigmaNode>,
}

impl SigmaQuadrature {
    pub fn new(n_theta: usize, n_phi: usize, theta_lo: f64, theta_hi: f64) -> Self {
        let (gl_nodes, gl_weights) = gauss_legendre(n_theta);
        let w_phi = 2.0 * std::f64::consts::PI / n_phi as f64;
        let half_width = 0.5 * (theta_hi - theta_lo);
        let mid = 0.5 * (theta_hi + theta_lo);
        let mut nodes = Vec::with_capacity(n_theta * n_phi);
        for (x, wt) in gl_nodes.iter().zip(gl_weights.iter()) {
            let theta = mid + half_width * x;
            let w_theta = half_width * wt;
            let (st, ct) = theta.sin_cos();
            for r in 0..n_phi {
                let phi = w_phi * (r as f64 + 0.5);
                let (sp, cp) = phi.sin_cos();
                nodes.push(SigmaNode {
                    cos_theta: ct,
                    c2: st * cp,
                    c3: st * sp,
                    theta,
                    weight: 2.0 * w_theta * st * w_phi,
                });
            }
        }
        SigmaQuadrature { nodes }
    }

    pub fn total_weight(&self) -> f64 {
        self.nodes.iter().map(|n| n.weight).sum()
    }
}

/// Gauss-Legendre nodes and weights on [-1, 1] by Newton iteration.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        // Chebyshev-like initial guess.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            // Legendre P_n(x) and derivative by recurrence.
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (mut p0, mut p1) = (1.0, x);
        for k in 2..=n {
            let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
            p0 = p1;
            p1 = p2;
        }
        let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
        nodes[n - 1 - i] = x;
        weights[n - 1 - i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// Conservative remap: subtracts from a quadrature output the Maxwellian-
/// weighted correction that zeroes its mass, momentum and energy moments.
#[derive(Clone)]
pub struct MomentRemap {
    /// phi_k in {1, v1, v2, v3, |v|^2} tabulated on the nodes.
    phi: Vec<Vec<f64>>,
    /// psi_k = phi_k * mu, the correction directions.
    psi: Vec<Vec<f64>>,
    gram_lu: nalgebra::LU<f64, nalgebra::U5, nalgebra::U5>,
    gram_t_lu: nalgebra::LU<f64, nalgebra::U5, nalgebra::U5>,
}

impl MomentRemap {
    pub fn new(grid: &VelocityGrid) -> Self {
        let mut phi: Vec<Vec<f64>> = Vec::with_capacity(5);
        phi.push(vec![1.0; grid.len]);
        for axis in 0..3 {
            phi.push((0..grid.len).map(|i| grid.nodes[i][axis]).collect());
        }
        phi.push((0..grid.len).map(|i| grid.speed_squared(i)).collect());
        let psi: Vec<Vec<f64>> = phi
            .iter()
            .map(|p| p.iter().zip(grid.maxwellian.iter()).map(|(a, m)| a * m).collect())
            .collect();
        let gram = Matrix5::from_fn(|r, c| grid.inner(&phi[r], &psi[c]));
        MomentRemap { phi, psi, gram_lu: gram.lu(), gram_t_lu: gram.transpose().lu() }
    }

    /// q <- q - sum_k alpha_k psi_k with alpha solving the 5x5 moment system.
    pub fn apply(&self, grid: &VelocityGrid, q: &mut [f64]) {
        let defect = Vector5::from_fn(|r, _| grid.inner(q, &self.phi[r]));
        let alpha = self.gram_lu.solve(&defect).expect("remap Gram system is nonsingular");
        for k in 0..5 {
            let a = alpha[k];
            for (qi, pi) in q.iter_mut().zip(self.psi[k].iter()) {
                *qi -= a * pi;
            }
        }
    }

    /// Adjoint of `apply` (both are linear maps with uniform weights).
    pub fn apply_adjoint(&self, grid: &VelocityGrid, y: &mut [f64]) {
        let defect = Vector5::from_fn(|r, _| grid.inner(y, &self.psi[r]));
        let alpha = self
            .gram_t_lu
            .solve(&defect)
            .expect("remap Gram system is nonsingular");
        for k in 0..5 {
            let a = alpha[k];
            for (yi, pi) in y.iter_mut().zip(self.phi[k].iter()) {
                *yi -= a * pi;
            }
        }
    }
}

/// Precomputed machinery for VHS collision quadrature on one velocity grid.
pub struct VhsQuadrature {
    pub kernel: CollisionKernel,
    pub sigma: SigmaQuadrature,
    pub remap: MomentRemap,
    gamma: f64,
    b0: f64,
    n: usize,
    len: usize,
    inv_h: f64,
    origin: f64,
    weight: f64,
    nodes: Vec<[f64; 3]>,
    mu: Vec<f64>,
    sqrt_mu: Vec<f64>,
    /// 1/mu at the nodes (mu never underflows for the supported cutoffs).
    inv_mu: Vec<f64>,
    /// 1/sqrt(mu) where mu > floor, else 0.
    inv_sqrt_mu: Vec<f64>,
    above_floor: Vec<bool>,
}

/// Closed-form Maxwellian at an arbitrary velocity point.
#[inline]
fn mu_exact(p: [f64; 3]) -> f64 {
    const NORM: f64 = 0.06349363593424097; // (2 pi)^(-3/2)
    NORM * (-0.5 * (p[0] * p[0] + p[1] * p[1] + p[2] * p[2])).exp()
}

/// Trilinear interpolation stencil for a point in velocity space.
#[derive(Clone, Copy)]
struct Stencil {
    base: [i64; 3],
    frac: [f64; 3],
}

impl VhsQuadrature {
    pub fn new(kernel: &CollisionKernel, grid: &VelocityGrid) -> Result<Self> {
        kernel.validate()?;
        let (gamma, b0) = match kernel.model {
            CollisionModel::Vhs { gamma, b0 } => (gamma, b0),
            CollisionModel::Bgk { .. } => {
                return Err(Error::Unsupported(
                    "BGK model has no bilinear collision operator".to_string(),
                ))
            }
        };
        let sigma = SigmaQuadrature::new(kernel.n_theta, kernel.n_phi, 0.0, 0.5 * std::f64::consts::PI);
        let inv_sqrt_mu: Vec<f64> = grid
            .maxwellian
            .iter()
            .map(|&m| if m > kernel.mu_floor { 1.0 / m.sqrt() } else { 0.0 })
            .collect();
        let inv_mu: Vec<f64> = grid.maxwellian.iter().map(|&m| 1.0 / m).collect();
        let above_floor: Vec<bool> = grid.maxwellian.iter().map(|&m| m > kernel.mu_floor).collect();
        Ok(VhsQuadrature {
            kernel: *kernel,
            sigma,
            remap: MomentRemap::new(grid),
            gamma,
            b0,
            n: grid.n_per_axis,
            len: grid.len,

            inv_h: 1.0 / grid.h,
            origin: grid.axis[0],
            weight: grid.weight,
            nodes: grid.nodes.clone(),
            mu: grid.maxwellian.clone(),
            sqrt_mu: grid.sqrt_maxwellian.clone(),
            inv_mu,
            inv_sqrt_mu,
            above_floor,
        })
    }

    #[inline]
    fn stencil(&self, p: [f64; 3]) -> Stencil {
        let mut base = [0i64; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let t = (p[a] - self.origin) * self.inv_h;
            let f = t.floor();
            base[a] = f as i64;
            frac[a] = t - f;
        }
        Stencil { base, frac }
    }

    #[inline]
    fn interpolate(&self, values: &[f64], st: &Stencil) -> f64 {
        let n = self.n as i64;
        let mut acc = 0.0;
        for ci in 0..2i64 {
            let i = st.base[0] + ci;
            if i < 0 || i >= n {
                continue;
            }
            let wi = if ci == 0 { 1.0 - st.frac[0] } else { st.frac[0] };
            for cj in 0..2i64 {
                let j = st.base[1] + cj;
                if j < 0 || j >= n {
                    continue;
                }
                let wj = if cj == 0 { 1.0 - st.frac[1] } else { st.frac[1] };
                for ck in 0..2i64 {
                    let k = st.base[2] + ck;
                    if k < 0 || k >= n {
                        continue;
                    }
                    let wk = if ck == 0 { 1.0 - st.frac[2] } else { st.frac[2] };
                    let idx = ((i * n + j) * n + k) as usize;
                    acc += wi * wj * wk * values[idx];
                }
            }
        }
        acc
    }

    /// In-range trilinear stencil points and weights for an off-grid point.
    pub fn stencil_points(&self, p: [f64; 3]) -> Vec<(usize, f64)> {
        let st = self.stencil(p);
        let mut out = Vec::with_capacity(8);
        self.for_stencil(&st, |idx, w| out.push((idx, w)));
        out
    }

    #[inline]
    fn for_stencil(&self, st: &Stencil, mut f: impl FnMut(usize, f64)) {
        let n = self.n as i64;
        for ci in 0..2i64 {
            let i = st.base[0] + ci;
            if i < 0 || i >= n {
                continue;
            }
            let wi = if ci == 0 { 1.0 - st.frac[0] } else { st.frac[0] };
            for cj in 0..2i64 {
                let j = st.base[1] + cj;
                if j < 0 || j >= n {
                    continue;
                }
                let wj = if cj == 0 { 1.0 - st.frac[1] } else { st.frac[1] };
                for ck in 0..2i64 {
                    let k = st.base[2] + ck;
                    if k < 0 || k >= n {
                        continue;
                    }
                    let wk = if ck == 0 { 1.0 - st.frac[2] } else { st.frac[2] };
                    f(((i * n + j) * n + k) as usize, wi * wj * wk);
                }
            }
        }
    }

    /// Collision frame: e1 along rel, e2/e3 completing an orthonormal triad.
    #[inline]
    fn frame(rel: [f64; 3], r: f64) -> ([f64; 3], [f64; 3], [f64; 3]) {
        let e1 = [rel[0] / r, rel[1] / r, rel[2] / r];
        // Pick the axis least aligned with e1 for a stable cross product.
        let a = e1[0].abs();
        let b = e1[1].abs();
        let c = e1[2].abs();
        let helper = if a <= b && a <= c {
            [1.0, 0.0, 0.0]
        } else if b <= c {
            [0.0, 1.0, 0.0]
        } else {
            [0.0, 0.0, 1.0]
        };
        let mut e2 = [
            helper[1] * e1[2] - helper[2] * e1[1],
            helper[2] * e1[0] - helper[0] * e1[2],
            helper[0] * e1[1] - helper[1] * e1[0],
        ];
        let n2 = (e2[0] * e2[0] + e2[1] * e2[1] + e2[2] * e2[2]).sqrt();
        e2 = [e2[0] / n2, e2[1] / n2, e2[2] / n2];
        let e3 = [
            e1[1] * e2[2] - e1[2] * e2[1],
            e1[2] * e2[0] - e1[0] * e2[2],
            e1[0] * e2[1] - e1[1] * e2[0],
        ];
        (e1, e2, e3)
    }

    /// Raw quadrature of Q(g, h) at every node, no remap. The gain term
    /// evaluates `mu(v') Itp[h/mu](v') * mu(v'_*) Itp[g/mu](v'_*)` with the
    /// Maxwellian in closed form.
    pub fn q_raw(&self, g: &[f64], h: &[f64]) -> Vec<f64> {
        let rg: Vec<f64> = g.iter().zip(self.inv_mu.iter()).map(|(a, m)| a * m).collect();
        let rh: Vec<f64> = h.iter().zip(self.inv_mu.iter()).map(|(a, m)| a * m).collect();
        self.map_rows(|v_idx| {
            let v = self.nodes[v_idx];
            let mut acc = 0.0;
            for vs_idx in 0..self.len {
                let vs = self.nodes[vs_idx];
                let rel = [v[0] - vs[0], v[1] - vs[1], v[2] - vs[2]];
                let r2 = rel[0] * rel[0] + rel[1] * rel[1] + rel[2] * rel[2];
                if r2 == 0.0 {
                    continue;
                }
                let r = r2.sqrt();
                let bpref = self.b0 * r.powf(self.gamma);
                let (e1, e2, e3) = Self::frame(rel, r);
                let mid = [0.5 * (v[0] + vs[0]), 0.5 * (v[1] + vs[1]), 0.5 * (v[2] + vs[2])];
                let half_r = 0.5 * r;
                let loss = g[vs_idx] * h[v_idx];
                for node in &self.sigma.nodes {
                    let s = [
                        node.cos_theta * e1[0] + node.c2 * e2[0] + node.c3 * e3[0],
                        node.cos_theta * e1[1] + node.c2 * e2[1] + node.c3 * e3[1],
                        node.cos_theta * e1[2] + node.c2 * e2[2] + node.c3 * e3[2],
                    ];
                    let vp = [mid[0] + half_r * s[0], mid[1] + half_r * s[1], mid[2] + half_r * s[2]];
                    let vps = [mid[0] - half_r * s[0], mid[1] - half_r * s[1], mid[2] - half_r * s[2]];
                    let gain = mu_exact(vps)
                        * self.interpolate(&rg, &self.stencil(vps))
                        * mu_exact(vp)
                        * self.interpolate(&rh, &self.stencil(vp));
                    acc += node.weight * bpref * (gain - loss);
                }
            }
            acc * self.weight
        })
    }

    /// Remapped quadrature of Q(g, h): the discrete mass/momentum/energy
    /// moments of the output vanish to round-off.
    pub fn q_bilinear(&self, grid: &VelocityGrid, g: &[f64], h: &[f64]) -> Vec<f64> {
        let mut q = self.q_raw(g, h);
        for (qi, &ok) in q.iter_mut().zip(self.above_floor.iter()) {
            if !ok {
                *qi = 0.0;
            }
        }
        self.remap.apply(grid, &mut q);
        q
    }

    /// Gamma(g, h) = mu^(-1/2) Q(sqrt(mu) g, sqrt(mu) h), remapped.
    pub fn gamma_bilinear(&self, grid: &VelocityGrid, g: &[f64], h: &[f64]) -> Vec<f64> {
        let gw: Vec<f64> = g.iter().zip(self.sqrt_mu.iter()).map(|(a, m)| a * m).collect();
        let hw: Vec<f64> = h.iter().zip(self.sqrt_mu.iter()).map(|(a, m)| a * m).collect();
        let mut q = self.q_bilinear(grid, &gw, &hw);
        for (qi, inv) in q.iter_mut().zip(self.inv_sqrt_mu.iter()) {
            *qi *= inv;
        }
        q
    }

    /// Raw `Q(mu, sqrt(mu) g) + Q(sqrt(mu) g, mu)`, the quadrature core of the
    /// linearized operator before remap, division and projection. Ratio
    /// interpolation: the mu slot becomes the clipped indicator Itp[1].
    fn q_sum_l(&self, g: &[f64]) -> Vec<f64> {
        // ratio of (sqrt(mu) g) to mu
        let rg: Vec<f64> = g.iter().zip(self.inv_sqrt_mu_full()).map(|(a, m)| a * m).collect();
        let ones = vec![1.0; self.len];
        self.map_rows(|v_idx| {
            let v = self.nodes[v_idx];
            let mut acc = 0.0;
            for vs_idx in 0..self.len {
                let vs = self.nodes[vs_idx];
                let rel = [v[0] - vs[0], v[1] - vs[1], v[2] - vs[2]];
                let r2 = rel[0] * rel[0] + rel[1] * rel[1] + rel[2] * rel[2];
                if r2 == 0.0 {
                    continue;
                }
                let r = r2.sqrt();
                let bpref = self.b0 * r.powf(self.gamma);
                let (e1, e2, e3) = Self::frame(rel, r);
                let mid = [0.5 * (v[0] + vs[0]), 0.5 * (v[1] + vs[1]), 0.5 * (v[2] + vs[2])];
                let half_r = 0.5 * r;
                let loss =
                    self.mu[vs_idx] * self.sqrt_mu[v_idx] * g[v_idx]
                        + self.sqrt_mu[vs_idx] * g[vs_idx] * self.mu[v_idx];
                for node in &self.sigma.nodes {
                    let s = [
                        node.cos_theta * e1[0] + node.c2 * e2[0] + node.c3 * e3[0],
                        node.cos_theta * e1[1] + node.c2 * e2[1] + node.c3 * e3[1],
                        node.cos_theta * e1[2] + node.c2 * e2[2] + node.c3 * e3[2],
                    ];
                    let vp = [mid[0] + half_r * s[0], mid[1] + half_r * s[1], mid[2] + half_r * s[2]];
                    let vps = [mid[0] - half_r * s[0], mid[1] - half_r * s[1], mid[2] - half_r * s[2]];
                    let st_p = self.stencil(vp);
                    let st_ps = self.stencil(vps);
                    let mu_p = mu_exact(vp);
                    let mu_ps = mu_exact(vps);
                    let clip_p = self.interpolate(&ones, &st_p);
                    let clip_ps = self.interpolate(&ones, &st_ps);
                    let gain = mu_ps * clip_ps * mu_p * self.interpolate(&rg, &st_p)
                        + mu_ps * self.interpolate(&rg, &st_ps) * mu_p * clip_p;
                    acc += node.weight * bpref * (gain - loss);
                }
            }
            acc * self.weight
        })
    }

    /// 1/sqrt(mu) without the floor (used only for ratio construction; mu is
    /// strictly positive at every node for the supported cutoffs).
    fn inv_sqrt_mu_full(&self) -> impl Iterator<Item = f64> + '_ {
        self.sqrt_mu.iter().zip(self.inv_mu.iter()).map(|(s, im)| s * im)
    }

    /// Adjoint of `q_sum_l` composed with the diagonal `sqrt(mu)` input map.
    fn q_sum_l_adjoint(&self, y: &[f64]) -> Vec<f64> {
        // Fixed chunking keeps the accumulation order independent of the
        // number of worker threads.
        let chunks = 64.min(self.len);
        let rows_per_chunk = (self.len + chunks - 1) / chunks;
        let partials: Vec<Vec<f64>> = (0..chunks)
            .into_par_iter()
            .map(|chunk| {
                let mut buf = vec![0.0; self.len];
                let lo = chunk * rows_per_chunk;
                let hi = ((chunk + 1) * rows_per_chunk).min(self.len);
                for v_idx in lo..hi {
                    let yv = y[v_idx] * self.weight;
                    if yv == 0.0 {
                        continue;
                    }
                    let v = self.nodes[v_idx];
                    for vs_idx in 0..self.len {
                        let vs = self.nodes[vs_idx];
                        let rel = [v[0] - vs[0], v[1] - vs[1], v[2] - vs[2]];
                        let r2 = rel[0] * rel[0] + rel[1] * rel[1] + rel[2] * rel[2];
                        if r2 == 0.0 {
                            continue;
                        }
                        let r = r2.sqrt();
                        let bpref = self.b0 * r.powf(self.gamma);
                        let (e1, e2, e3) = Self::frame(rel, r);
                        let mid =
                            [0.5 * (v[0] + vs[0]), 0.5 * (v[1] + vs[1]), 0.5 * (v[2] + vs[2])];
                        let half_r = 0.5 * r;
                        for node in &self.sigma.nodes {
                            let coeff = yv * node.weight * bpref;
                            let s = [
                                node.cos_theta * e1[0] + node.c2 * e2[0] + node.c3 * e3[0],
                                node.cos_theta * e1[1] + node.c2 * e2[1] + node.c3 * e3[1],
                                node.cos_theta * e1[2] + node.c2 * e2[2] + node.c3 * e3[2],
                            ];
                            let vp = [
                                mid[0] + half_r * s[0],
                                mid[1] + half_r * s[1],
                                mid[2] + half_r * s[2],
                            ];
                            let vps = [
                                mid[0] - half_r * s[0],
                                mid[1] - half_r * s[1],
                                mid[2] - half_r * s[2],
                            ];
                            let st_p = self.stencil(vp);
                            let st_ps = self.stencil(vps);
                            let mu_p = mu_exact(vp);
                            let mu_ps = mu_exact(vps);
                            let mut clip_p = 0.0;
                            self.for_stencil(&st_p, |_, w| clip_p += w);
                            let mut clip_ps = 0.0;
                            self.for_stencil(&st_ps, |_, w| clip_ps += w);
                            // gain1: mu(v'*) clip(v'*) mu(v') Itp[g/sqrt(mu)](v')
                            let c1 = coeff * mu_ps * clip_ps * mu_p;
                            self.for_stencil(&st_p, |idx, w| {
                                buf[idx] += c1 * w * self.sqrt_mu[idx] * self.inv_mu[idx];
                            });
                            // gain2: mu(v'*) Itp[g/sqrt(mu)](v'*) mu(v') clip(v')
                            let c2 = coeff * mu_ps * mu_p * clip_p;
                            self.for_stencil(&st_ps, |idx, w| {
                                buf[idx] += c2 * w * self.sqrt_mu[idx] * self.inv_mu[idx];
                            });
                            // losses
                            buf[v_idx] -= coeff * self.mu[vs_idx] * self.sqrt_mu[v_idx];
                            buf[vs_idx] -= coeff * self.mu[v_idx] * self.sqrt_mu[vs_idx];
                        }
                    }
                }
                buf
            })
            .collect();
        let mut out = vec![0.0; self.len];
        for buf in partials {
            for (o, b) in out.iter_mut().zip(buf.iter()) {
                *o += b;
            }
        }
        out
    }

    /// Forward application of the (unsandwiched) linearized operator:
    /// `-Gamma(sqrt(mu), g) - Gamma(g, sqrt(mu))` with floor and remap.
    pub fn l_raw(&self, grid: &VelocityGrid, g: &[f64]) -> Vec<f64> {
        let mut q = self.q_sum_l(g);
        for (qi, &ok) in q.iter_mut().zip(self.above_floor.iter()) {
            if !ok {
                *qi = 0.0;
            }
        }
        self.remap.apply(grid, &mut q);
        for (qi, inv) in q.iter_mut().zip(self.inv_sqrt_mu.iter()) {
            *qi = -*qi * inv;
        }
        q
    }

    /// Adjoint of `l_raw`.
    pub fn l_raw_adjoint(&self, grid: &VelocityGrid, y: &[f64]) -> Vec<f64> {
        let mut z: Vec<f64> = y
            .iter()
            .zip(self.inv_sqrt_mu.iter())
            .map(|(v, inv)| -v * inv)
            .collect();
        self.remap.apply_adjoint(grid, &mut z);
        for (zi, &ok) in z.iter_mut().zip(self.above_floor.iter()) {
            if !ok {
                *zi = 0.0;
            }
        }
        self.q_sum_l_adjoint(&z)
    }

    /// Symmetrized matrix-free application of L (before the null-space
    /// sandwich, which the caller adds).
    pub fn l_symmetric(&self, grid: &VelocityGrid, g: &[f64]) -> Vec<f64> {
        let fwd = self.l_raw(grid, g);
        let adj = self.l_raw_adjoint(grid, g);
        fwd.iter().zip(adj.iter()).map(|(a, b)| 0.5 * (a + b)).collect()
    }

    /// Deterministic parallel map over output rows.
    fn map_rows(&self, f: impl Fn(usize) -> f64 + Sync) -> Vec<f64> {
        let mut out = vec![0.0; self.len];
        out.par_iter_mut().enumerate().for_each(|(idx, slot)| *slot = f(idx));
        out
    }
}

/// Bilinear collision operator (spec operation): rejects BGK kernels.
pub fn q_bilinear(
    g: &VelocityFunction,
    h: &VelocityFunction,
    kernel: &CollisionKernel,
    grid: &VelocityGrid,
) -> Result<VelocityFunction> {
    check_len(g, grid)?;
    check_len(h, grid)?;
    let quad = VhsQuadrature::new(kernel, grid)?;
    Ok(VelocityFunction { values: quad.q_bilinear(grid, &g.values, &h.values) })
}

/// Fluctuation bilinear form Gamma (spec operation): rejects BGK kernels.
pub fn gamma_bilinear(
    g: &VelocityFunction,
    h: &VelocityFunction,
    kernel: &CollisionKernel,
    grid: &VelocityGrid,
) -> Result<VelocityFunction> {
    check_len(g, grid)?;
    check_len(h, grid)?;
    let quad = VhsQuadrature::new(kernel, grid)?;
    Ok(VelocityFunction { values: quad.gamma_bilinear(grid, &g.values, &h.values) })
}

fn check_len(f: &VelocityFunction, grid: &VelocityGrid) -> Result<()> {
    if f.values.len() != grid.len {
        return Err(Error::shape(format!(
            "velocity function has {} entries, grid has {}",
            f.values.len(),
            grid.len
        )));
    }
    Ok(())
}

/// Handle for the linearized operator restricted to the velocity grid.
pub enum LinearOperator {
    /// BGK: L = (1/tau)(I - P).
    Bgk { tau: f64 },
    /// Dense assembled VHS operator (null-space-projected and symmetrized),
    /// with the quadrature retained for the nonlinear term.
    Assembled {
        matrix: DMatrix<f64>,
        quad: Arc<VhsQuadrature>,
        /// Relative Frobenius deviation of the matrix before symmetrization.
        presym_deviation: f64,
        kernel: CollisionKernel,
    },
    /// Quadrature-backed VHS operator for grids too large to assemble.
    MatrixFree { quad: Arc<VhsQuadrature> },
}

impl LinearOperator {
    pub fn bgk(tau: f64) -> Self {
        LinearOperator::Bgk { tau }
    }

    pub fn matrix_free(kernel: &CollisionKernel, grid: &VelocityGrid) -> Result<Self> {
        Ok(LinearOperator::MatrixFree { quad: Arc::new(VhsQuadrature::new(kernel, grid)?) })
    }

    pub fn is_assembled(&self) -> bool {
        matches!(self, LinearOperator::Assembled { .. } | LinearOperator::Bgk { .. })
    }

    pub fn presym_deviation(&self) -> f64 {
        match self {
            LinearOperator::Assembled { presym_deviation, .. } => *presym_deviation,
            _ => 0.0,
        }
    }
}

/// Assembles the dense matrix of L (spec operation). For BGK this is the
/// closed form `(1/tau)(I - P)`; for VHS the quadrature is scanned once and
/// the result is remapped, projected onto the complement of the collision
/// invariants on both sides, and symmetrized.
pub fn assemble_l_matrix(
    kernel: &CollisionKernel,
    grid: &VelocityGrid,
    basis: &NullSpaceBasis,
    assembly_limit: usize,
) -> Result<LinearOperator> {
    kernel.validate()?;
    if grid.len > assembly_limit {
        return Err(Error::Resource(format!(
            "grid has {} nodes, above the assembly limit {}; use matrix-free mode",
            grid.len, assembly_limit
        )));
    }

    if let CollisionModel::Bgk { tau } = kernel.model {
        return Ok(LinearOperator::Bgk { tau });
    }

    let quad = Arc::new(VhsQuadrature::new(kernel, grid)?);
    let n = grid.len;

    // Raw rows of Q(mu, sqrt(mu) g) + Q(sqrt(mu) g, mu) by scattering the
    // quadrature coefficients; rows are independent.
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|v_idx| {
            let mut row = vec![0.0; n];
            if !quad.above_floor[v_idx] {
                return row; // floored rows of Gamma are zero
            }
            let v = quad.nodes[v_idx];
            for vs_idx in 0..n {
                let vs = quad.nodes[vs_idx];
                let rel = [v[0] - vs[0], v[1] - vs[1], v[2] - vs[2]];
                let r2 = rel[0] * rel[0] + rel[1] * rel[1] + rel[2] * rel[2];
                if r2 == 0.0 {
                    continue;
                }
                let r = r2.sqrt();
                let bpref = quad.b0 * r.powf(quad.gamma);
                let (e1, e2, e3) = VhsQuadrature::frame(rel, r);
                let mid = [0.5 * (v[0] + vs[0]), 0.5 * (v[1] + vs[1]), 0.5 * (v[2] + vs[2])];
                let half_r = 0.5 * r;
                for node in &quad.sigma.nodes {
                    let w_eff = node.weight * bpref * quad.weight;
                    let s = [
                        node.cos_theta * e1[0] + node.c2 * e2[0] + node.c3 * e3[0],
                        node.cos_theta * e1[1] + node.c2 * e2[1] + node.c3 * e3[1],
                        node.cos_theta * e1[2] + node.c2 * e2[2] + node.c3 * e3[2],
                    ];
                    let vp =
                        [mid[0] + half_r * s[0], mid[1] + half_r * s[1], mid[2] + half_r * s[2]];
                    let vps =
                        [mid[0] - half_r * s[0], mid[1] - half_r * s[1], mid[2] - half_r * s[2]];
                    let st_p = quad.stencil(vp);
                    let st_ps = quad.stencil(vps);
                    let mu_p = mu_exact(vp);
                    let mu_ps = mu_exact(vps);
                    let mut clip_p = 0.0;
                    quad.for_stencil(&st_p, |_, w| clip_p += w);
                    let mut clip_ps = 0.0;
                    quad.for_stencil(&st_ps, |_, w| clip_ps += w);
                    let c1 = w_eff * mu_ps * clip_ps * mu_p;
                    quad.for_stencil(&st_p, |idx, w| {
                        row[idx] += c1 * w * quad.sqrt_mu[idx] * quad.inv_mu[idx];
                    });
                    let c2 = w_eff * mu_ps * mu_p * clip_p;
                    quad.for_stencil(&st_ps, |idx, w| {
                        row[idx] += c2 * w * quad.sqrt_mu[idx] * quad.inv_mu[idx];
                    });
                    row[v_idx] -= w_eff * quad.mu[vs_idx] * quad.sqrt_mu[v_idx];
                    row[vs_idx] -= w_eff * quad.mu[v_idx] * quad.sqrt_mu[vs_idx];
                }
            }
            row
        })
        .collect();

    let mut m = DMatrix::zeros(n, n);
    for (r, row) in rows.iter().enumerate() {
        for (c, &val) in row.iter().enumerate() {
            m[(r, c)] = val;
        }
    }

    // Remap (column-wise moment projection), division by sqrt(mu), negation.
    {
        // alpha-coefficient rows: G^{-1} Phi^T W M, subtract Psi alpha.
        let mut defect = DMatrix::zeros(5, n);
        for k in 0..5 {
            for c in 0..n {
                let mut acc = 0.0;
                for r in 0..n {
                    acc += quad.remap.phi[k][r] * m[(r, c)];
                }
                defect[(k, c)] = acc * grid.weight;
            }
        }
        // Solve G alpha = defect column by column (G is 5x5).
        let mut alpha = DMatrix::zeros(5, n);
        for c in 0..n {
            let d = Vector5::from_fn(|r, _| defect[(r, c)]);
            let a = quad.remap.gram_lu.solve(&d).expect("remap Gram system is nonsingular");
            for k in 0..5 {
                alpha[(k, c)] = a[k];
            }
        }
        for k in 0..5 {
            for r in 0..n {
                let psi = quad.remap.psi[k][r];
                if psi == 0.0 {
                    continue;
                }
                for c in 0..n {
                    m[(r, c)] -= psi * alpha[(k, c)];
                }
            }
        }
    }
    for r in 0..n {
        let scale = -quad.inv_sqrt_mu[r];
        for c in 0..n {
            m[(r, c)] *= scale;
        }
    }

    // Null-space sandwich by rank-5 updates: M <- (I-P) M (I-P).
    let w = grid.weight;
    for e in &basis.ortho {
        let ev = DVector::from_column_slice(e);
        let row = (ev.transpose() * &m) * w; // (P M) contribution
        m -= &ev * row;
    }
    for e in &basis.ortho {
        let ev = DVector::from_column_slice(e);
        let col = (&m * &ev) * w;
        m -= col * ev.transpose();
    }

    // Symmetrize, recording the deviation.
    let mt = m.transpose();
    let diff_norm = (&m - &mt).norm();
    let base_norm = m.norm().max(1e-300);
    let presym_deviation = diff_norm / base_norm;
    m = (&m + &mt) * 0.5;

    Ok(LinearOperator::Assembled { matrix: m, quad, presym_deviation, kernel: *kernel })
}

/// Applies L to a velocity function (spec operation).
pub fn apply_l(
    g: &VelocityFunction,
    op: &LinearOperator,
    grid: &VelocityGrid,
    basis: &NullSpaceBasis,
) -> Result<VelocityFunction> {
    check_len(g, grid)?;
    Ok(VelocityFunction { values: apply_l_slice(&g.values, op, grid, basis)? })
}

/// Slice-level application of L, used in per-cell loops.
pub fn apply_l_slice(
    g: &[f64],
    op: &LinearOperator,
    grid: &VelocityGrid,
    basis: &NullSpaceBasis,
) -> Result<Vec<f64>> {
    if g.len() != grid.len {
        return Err(Error::shape("velocity function length does not match grid"));
    }
    match op {
        LinearOperator::Bgk { tau } => {
            let pg = basis.project(grid, g);
            Ok(g.iter().zip(pg.iter()).map(|(gi, pi)| (gi - pi) / tau).collect())
        }
        LinearOperator::Assembled { matrix, .. } => {
            let x = DVector::from_column_slice(g);
            let y = matrix * x;
            Ok(y.iter().copied().collect())
        }
        LinearOperator::MatrixFree { quad } => {
            let mut x = g.to_vec();
            basis.project_out(grid, &mut x);
            let mut y = quad.l_symmetric(grid, &x);
            basis.project_out(grid, &mut y);
            Ok(y)
        }
    }
}

/// Dense matrix of the discrete projector P onto the collision invariants.
pub fn projector_matrix(grid: &VelocityGrid, basis: &NullSpaceBasis) -> DMatrix<f64> {
    let n = grid.len;
    let mut p = DMatrix::zeros(n, n);
    for e in &basis.ortho {
        let ev = DVector::from_column_slice(e);
        p += &ev * (ev.transpose() * grid.weight);
    }
    p
}

/// Quadratic source of the BGK surrogate: the second-order term of the local
/// Maxwellian expansion around the global equilibrium, projected onto the
/// complement of the collision invariants so its conserved moments vanish on
/// the grid. Plays the role of Gamma(g, g) for BGK runs.
pub fn bgk_quadratic_source(
    g: &[f64],
    tau: f64,
    grid: &VelocityGrid,
    basis: &NullSpaceBasis,
) -> Vec<f64> {
    let rho = grid.inner(g, &basis.raw[0]);
    let u = [
        grid.inner(g, &basis.raw[1]),
        grid.inner(g, &basis.raw[2]),
        grid.inner(g, &basis.raw[3]),
    ];
    // theta = (g, (|v|^2/3 - 1) sqrt(mu)) written through the raw moments.
    let m4 = grid.inner(g, &basis.raw[4]);
    let theta = m4 / 3.0 - rho;
    let usq = u[0] * u[0] + u[1] * u[1] + u[2] * u[2];

    let mut n2 = vec![0.0; grid.len];
    for i in 0..grid.len {
        let v = grid.nodes[i];
        let vsq = grid.speed_squared(i);
        let uv = u[0] * v[0] + u[1] * v[1] + u[2] * v[2];
        let x1 = rho + uv + 0.5 * theta * (vsq - 3.0);
        let x2 = -0.5 * rho * rho + 0.75 * theta * theta
            - 0.5 * theta * theta * vsq
            - theta * uv
            - 0.5 * usq;
        let val = x2 + 0.5 * x1 * x1 - rho * uv - 0.5 * (rho * theta + usq / 3.0) * (vsq - 3.0);
        n2[i] = val * grid.sqrt_maxwellian[i];
    }
    basis.project_out(grid, &mut n2);
    for v in n2.iter_mut() {
        *v /= tau;
    }
    n2
}

/// Nonlinear collision source Gamma(g, g) for one spatial cell, dispatching
/// on the kernel model (VHS quadrature or the BGK quadratic surrogate).
pub fn gamma_of_state(
    g: &[f64],
    kernel: &CollisionKernel,
    op: &LinearOperator,
    grid: &VelocityGrid,
    basis: &NullSpaceBasis,
) -> Result<Vec<f64>> {
    match kernel.model {
        CollisionModel::Bgk { tau } => Ok(bgk_quadratic_source(g, tau, grid, basis)),
        CollisionModel::Vhs { .. } => match op {
            LinearOperator::Assembled { quad, .. } | LinearOperator::MatrixFree { quad } => {
                Ok(quad.gamma_bilinear(grid, g, g))
            }
            LinearOperator::Bgk { .. } => {
                Err(Error::Unsupported("VHS kernel paired with BGK operator handle".to_string()))
            }
        },
    }
}

/// Smallest nonzero eigenvalue of the assembled symmetric operator (the
/// spectral-gap diagnostic). Returns (gap, largest eigenvalue).
pub fn spectral_gap(op: &LinearOperator, grid: &VelocityGrid, basis: &NullSpaceBasis) -> Result<(f64, f64)> {
    let matrix = match op {
        LinearOperator::Assembled { matrix, .. } => matrix.clone(),
        LinearOperator::Bgk { tau } => {
            let n = grid.len;
            let p = projector_matrix(grid, basis);
            (DMatrix::identity(n, n) - p) / *tau
        }
        LinearOperator::MatrixFree { .. } => {
            return Err(Error::Unsupported(
                "spectral gap diagnostic needs an assembled operator".to_string(),
            ))
        }
    };
    let eig = matrix.symmetric_eigen();
    let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let max = *vals.last().unwrap();
    // Skip the 5 null directions (plus anything at round-off scale).
    let floor = max * 1e-10;
    let gap = vals.iter().copied().find(|v| *v > floor).unwrap_or(0.0);
    Ok((gap, max))
}
