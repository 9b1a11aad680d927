//! The non-isotropic triple norm, weighted Sobolev norms with spatial
//! derivatives, and the temporal energy / dissipation functionals.
//!
//! For cutoff VHS kernels the triple norm is assembled once as a positive
//! semidefinite quadratic form on the velocity grid (its two integrals are
//! explicit quadratures), after which every evaluation is a matrix-vector
//! product. For BGK the triple norm is the plain L2 norm by convention, which
//! makes the coercivity constant exactly 1/tau.

use crate::collision::{
    apply_l_slice, bgk_quadratic_source, CollisionKernel, CollisionModel, LinearOperator,
    SigmaQuadrature, VhsQuadrature,
};
use crate::error::{Error, Result};
use crate::grid::{multi_indices, SpatialGrid};
use crate::moments::{moment_index, MomentBasis, NullSpaceBasis};
use crate::sim::Distribution;
use crate::velocity::{VelocityFunction, VelocityGrid};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;

/// Which squared Maxwellian difference weights the second triple-norm
/// integral.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MuConvention {
    /// (sqrt(mu') - sqrt(mu))^2 — the fluctuation-weighted form.
    SqrtDifference,
    /// (mu' - mu)^2 — the literal printed form, kept for comparison.
    LiteralDifference,
}

/// Optional overrides for the triple norm assembly.
#[derive(Clone, Copy, Debug)]
pub struct TripleNormOptions {
    pub convention: MuConvention,
    /// Non-cutoff diagnostic: angular factor K * theta^(-2-2s) integrated over
    /// [theta_min, pi/2]. Requires a truncation angle.
    pub non_cutoff: Option<NonCutoffSpec>,
}

#[derive(Clone, Copy, Debug)]
pub struct NonCutoffSpec {
    pub s: f64,
    pub k_const: f64,
    pub theta_min: Option<f64>,
}

impl Default for TripleNormOptions {
    fn default() -> Self {
        TripleNormOptions { convention: MuConvention::SqrtDifference, non_cutoff: None }
    }
}

/// Triple norm value; `truncated` marks non-cutoff diagnostics.
#[derive(Clone, Copy, Debug)]
pub struct TripleNorm {
    pub value: f64,
    pub truncated: bool,
}

/// Reusable triple-norm evaluator.
pub enum TripleNormForm {
    /// BGK convention: plain L2(dv).
    PlainL2,
    /// Assembled quadratic form `|||f|||^2 = f^T T f` (T positive
    /// semidefinite by construction).
    Quadratic { matrix: DMatrix<f64>, truncated: bool },
}

impl TripleNormForm {
    pub fn new(kernel: &CollisionKernel, grid: &VelocityGrid) -> Result<Self> {
        Self::with_options(kernel, grid, TripleNormOptions::default())
    }

    pub fn with_options(
        kernel: &CollisionKernel,
        grid: &VelocityGrid,
        opts: TripleNormOptions,
    ) -> Result<Self> {
        kernel.validate()?;
        let (gamma, b0) = match kernel.model {
            CollisionModel::Bgk { .. } => return Ok(TripleNormForm::PlainL2),
            CollisionModel::Vhs { gamma, b0 } => (gamma, b0),
        };

        let (sigma, angular, truncated): (SigmaQuadrature, Box<dyn Fn(f64) -> f64>, bool) =
            match opts.non_cutoff {
                None => (
                    SigmaQuadrature::new(kernel.n_theta, kernel.n_phi, 0.0, 0.5 * std::f64::consts::PI),
                    Box::new(move |_| b0),
                    false,
                ),
                Some(spec) => {
                    let theta_min = spec.theta_min.ok_or_else(|| {
                        Error::Unsupported(
                            "non-cutoff triple norm requires a truncation angle theta_min"
                                .to_string(),
                        )
                    })?;
                    if !(theta_min > 0.0 && theta_min < 0.5 * std::f64::consts::PI) {
                        return Err(Error::config(format!(
                            "theta_min must lie in (0, pi/2), got {theta_min}"
                        )));
                    }
                    let s = spec.s;
                    let k_const = spec.k_const;
                    (
                        SigmaQuadrature::new(
                            kernel.n_theta,
                            kernel.n_phi,
                            theta_min,
                            0.5 * std::f64::consts::PI,
                        ),
                        Box::new(move |theta: f64| k_const * theta.powf(-2.0 - 2.0 * s)),
                        true,
                    )
                }
            };

        let n = grid.len;
        let mut t = DMatrix::<f64>::zeros(n, n);
        let quad = VhsQuadrature::new(&CollisionKernel::vhs(gamma, b0), grid)?;
        let w2 = grid.weight * grid.weight;
        let mu_norm = (2.0 * std::f64::consts::PI).powf(-1.5);
        for v_idx in 0..n {
            let v = grid.nodes[v_idx];
            for vs_idx in 0..n {
                let vs = grid.nodes[vs_idx];
                let rel = [v[0] - vs[0], v[1] - vs[1], v[2] - vs[2]];
                let r2 = rel[0] * rel[0] + rel[1] * rel[1] + rel[2] * rel[2];
                if r2 == 0.0 {
                    continue;
                }
                let r = r2.sqrt();
                let kin = r.powf(gamma);
                let frame = frame_of(rel, r);
                let mid = [0.5 * (v[0] + vs[0]), 0.5 * (v[1] + vs[1]), 0.5 * (v[2] + vs[2])];
                let half_r = 0.5 * r;
                for node in &sigma.nodes {
                    let b_theta = angular(node.theta);
                    let c = w2 * node.weight * kin * b_theta;
                    let s = [
                        node.cos_theta * frame.0[0] + node.c2 * frame.1[0] + node.c3 * frame.2[0],
                        node.cos_theta * frame.0[1] + node.c2 * frame.1[1] + node.c3 * frame.2[1],
                        node.cos_theta * frame.0[2] + node.c2 * frame.1[2] + node.c3 * frame.2[2],
                    ];
                    let vp = [
                        mid[0] + half_r * s[0],
                        mid[1] + half_r * s[1],
                        mid[2] + half_r * s[2],
                    ];

                    // First integral: mu(v_*) (f(v') - f(v))^2 with trilinear
                    // interpolation weights for f(v').
                    let c1 = c * grid.maxwellian[vs_idx];
                    let stencil = quad.stencil_points(vp);
                    t[(v_idx, v_idx)] += c1;
                    for &(p, wp) in &stencil {
                        t[(p, v_idx)] -= c1 * wp;
                        t[(v_idx, p)] -= c1 * wp;
                        for &(q, wq) in &stencil {
                            t[(p, q)] += c1 * wp * wq;
                        }
                    }

                    // Second integral: f(v_*)^2 (sqrt(mu') - sqrt(mu))^2, with
                    // the Maxwellian evaluated in closed form at v'.
                    let vp_sq = vp[0] * vp[0] + vp[1] * vp[1] + vp[2] * vp[2];
                    let diff = match opts.convention {
                        MuConvention::SqrtDifference => {
                            let smu_p = (mu_norm * (-0.5 * vp_sq).exp()).sqrt();
                            let d = smu_p - grid.sqrt_maxwellian[v_idx];
                            d * d
                        }
                        MuConvention::LiteralDifference => {
                            let mu_p = mu_norm * (-0.5 * vp_sq).exp();
                            let d = mu_p - grid.maxwellian[v_idx];
                            d * d
                        }
                    };
                    t[(vs_idx, vs_idx)] += c * diff;
                }
            }
        }
        Ok(TripleNormForm::Quadratic { matrix: t, truncated })
    }

    /// |||f||| for nodal values.
    pub fn evaluate(&self, grid: &VelocityGrid, f: &[f64]) -> TripleNorm {
        match self {
            TripleNormForm::PlainL2 => TripleNorm { value: grid.norm(f), truncated: false },
            TripleNormForm::Quadratic { matrix, truncated } => {
                let x = DVector::from_column_slice(f);
                let q = (x.transpose() * matrix * &x)[(0, 0)];
                TripleNorm { value: q.max(0.0).sqrt(), truncated: *truncated }
            }
        }
    }
}

fn frame_of(rel: [f64; 3], r: f64) -> ([f64; 3], [f64; 3], [f64; 3]) {
    let e1 = [rel[0] / r, rel[1] / r, rel[2] / r];
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

/// Spec-level one-off triple norm evaluation.
pub fn triple_norm(
    f: &VelocityFunction,
    kernel: &CollisionKernel,
    grid: &VelocityGrid,
) -> Result<TripleNorm> {
    if f.values.len() != grid.len {
        return Err(Error::shape("velocity function length does not match grid"));
    }
    let form = TripleNormForm::new(kernel, grid)?;
    Ok(form.evaluate(grid, &f.values))
}

/// Sampled energy and dissipation functionals at one time instant.
#[derive(Clone, Debug)]
pub struct EnergyReport {
    pub t: f64,
    /// E_N: H^N_x L^2_v norm of g.
    pub e_n: f64,
    /// C_N: H^(N-1) norm of grad_x of the macroscopic coefficients.
    pub c_n: f64,
    /// D_N: X^N norm of g2 (triple norm in v).
    pub d_n: f64,
    /// Combined functional with the eps-weighted cross terms.
    pub e_n_combined: f64,
    pub order: usize,
}

/// Reusable evaluator of the energy functionals for one discretization.
pub struct EnergyEvaluator {
    sgrid: SpatialGrid,
    vgrid: VelocityGrid,
    basis: NullSpaceBasis,
    mbasis: MomentBasis,
    triple: TripleNormForm,
    order: usize,
    d1: f64,
    /// Parseval multipliers: sum over |alpha| <= N of k^(2 alpha), and the
    /// C_N variant with one extra gradient over |alpha| <= N-1.
    mult_e: Vec<f64>,
    mult_c: Vec<f64>,
    /// Multiplier sum over |alpha| <= N-1 (cross terms).
    mult_cross: Vec<f64>,
    /// Multi-indices |alpha| <= N (for the physical-space D_N path).
    alphas: Vec<Vec<usize>>,
}

impl EnergyEvaluator {
    pub fn new(
        sgrid: SpatialGrid,
        vgrid: VelocityGrid,
        basis: NullSpaceBasis,
        mbasis: MomentBasis,
        kernel: &CollisionKernel,
        order: usize,
        d1: f64,
    ) -> Result<Self> {
        if order < 1 {
            return Err(Error::config(
                "energy order N must be >= 1 (C_N needs one derivative)".to_string(),
            ));
        }
        let triple = TripleNormForm::new(kernel, &vgrid)?;
        let n = sgrid.cells_per_axis;
        let alphas = multi_indices(sgrid.dim, order);
        let alphas_lower = multi_indices(sgrid.dim, order - 1);
        let mut mult_e = vec![0.0; sgrid.len];
        let mut mult_c = vec![0.0; sgrid.len];
        let mut mult_cross = vec![0.0; sgrid.len];
        for idx in 0..sgrid.len {
            let k: Vec<f64> = (0..sgrid.dim)
                .map(|a| SpatialGrid::wavenumber_deriv(sgrid.axis_mode(idx, a), n))
                .collect();
            let ksq: f64 = k.iter().map(|v| v * v).sum();
            for alpha in &alphas {
                let m: f64 = alpha
                    .iter()
                    .enumerate()
                    .map(|(a, &p)| k[a].powi(2 * p as i32))
                    .product();
                mult_e[idx] += m;
            }
            for alpha in &alphas_lower {
                let m: f64 = alpha
                    .iter()
                    .enumerate()
                    .map(|(a, &p)| k[a].powi(2 * p as i32))
                    .product();
                mult_c[idx] += m * ksq;
                mult_cross[idx] += m;
            }
        }
        Ok(EnergyEvaluator {
            sgrid,
            vgrid,
            basis,
            mbasis,
            triple,
            order,
            d1,
            mult_e,
            mult_c,
            mult_cross,
            alphas,
        })
    }

    /// Macroscopic fields and the energy report of a state.
    pub fn evaluate(&self, g: &Distribution) -> Result<(crate::moments::MacroFields, EnergyReport)> {
        let (fields, _, g2) = crate::moments::project_p(g, &self.vgrid, &self.basis)?;
        let parseval = self.sgrid.cell_volume() / self.sgrid.len as f64;

        // E_N^2 and (plain-L2) D_N^2 share one spectral pass per velocity node.
        let mut e_sq = 0.0;
        let mut d_sq_plain = 0.0;
        {
            let n_cells = g.n_cells;
            let mut row = vec![0.0; n_cells];
            let mut row2 = vec![0.0; n_cells];
            for node in 0..g.n_nodes {
                for cell in 0..n_cells {
                    row[cell] = g.data[cell * g.n_nodes + node];
                    row2[cell] = g2.data[cell * g.n_nodes + node];
                }
                let spec = self.sgrid.to_spectral(&row);
                let spec2 = self.sgrid.to_spectral(&row2);
                let mut acc = 0.0;
                let mut acc2 = 0.0;
                for idx in 0..self.sgrid.len {
                    acc += self.mult_e[idx] * spec[idx].norm_sqr();
                    acc2 += self.mult_e[idx] * spec2[idx].norm_sqr();
                }
                e_sq += acc * parseval * self.vgrid.weight;
                d_sq_plain += acc2 * parseval * self.vgrid.weight;
            }
        }

        // C_N^2 over the five coefficient fields.
        let mut c_sq = 0.0;
        for field in [&fields.a, &fields.b_vec[0], &fields.b_vec[1], &fields.b_vec[2], &fields.c] {
            let spec = self.sgrid.to_spectral(field);
            let mut acc = 0.0;
            for idx in 0..self.sgrid.len {
                acc += self.mult_c[idx] * spec[idx].norm_sqr();
            }
            c_sq += acc * parseval;
        }

        // D_N^2: plain path for BGK, per-slice triple norms otherwise.
        let d_sq = match &self.triple {
            TripleNormForm::PlainL2 => d_sq_plain,
            TripleNormForm::Quadratic { .. } => {
                let mut total = 0.0;
                for alpha in &self.alphas {
                    let da = self.derivative_state(&g2, alpha);
                    for cell in 0..da.n_cells {
                        let t = self.triple.evaluate(&self.vgrid, da.cell(cell));
                        total += t.value * t.value * self.sgrid.cell_volume();
                    }
                }
                total
            }
        };

        // Cross terms of the combined functional.
        let cross = self.cross_terms(&fields, &g2)?;
        let e_n_combined = e_sq + self.d1 * g.eps * cross;

        let report = EnergyReport {
            t: g.t,
            e_n: e_sq.max(0.0).sqrt(),
            c_n: c_sq.max(0.0).sqrt(),
            d_n: d_sq.max(0.0).sqrt(),
            e_n_combined,
            order: self.order,
        };
        Ok((fields, report))
    }

    /// Signed cross-term sum: for |alpha| <= N-1,
    /// (d^a r_b, grad d^a a) - (d^a r_A, grad d^a b) - (d^a r_c, grad d^a c)
    /// + (d^a b, grad d^a a).
    fn cross_terms(&self, fields: &crate::moments::MacroFields, g2: &Distribution) -> Result<f64> {
        let n_cells = g2.n_cells;
        // r-moment fields against the dual basis.
        let mut r_fields = vec![vec![0.0; n_cells]; 13];
        for cell in 0..n_cells {
            let f2 = g2.cell(cell);
            for j in 0..13 {
                r_fields[j][cell] = self.vgrid.inner(f2, &self.mbasis.e_star[j]);
            }
        }

        let mut total = 0.0;
        // (d^a r_b, grad d^a a) + (d^a b, grad d^a a)
        for axis in 0..self.sgrid.dim {
            let rb = &r_fields[moment_index::B[axis]];
            total += self.cross_pair(rb, &fields.a, axis);
            total += self.cross_pair(&fields.b_vec[axis], &fields.a, axis);
        }
        // -(d^a r_A, grad d^a b): r_A[i][j] against d_j b_i.
        for (slot, &(i, j)) in moment_index::AB_PAIRS.iter().enumerate() {
            let ra = &r_fields[moment_index::AB[slot]];
            if j < self.sgrid.dim {
                total -= self.cross_pair(ra, &fields.b_vec[i], j);
            }
            if i != j && i < self.sgrid.dim {
                total -= self.cross_pair(ra, &fields.b_vec[j], i);
            }
        }
        // -(d^a r_c, grad d^a c)
        for axis in 0..self.sgrid.dim {
            let rc = &r_fields[moment_index::C[axis]];
            total -= self.cross_pair(rc, &fields.c, axis);
        }
        Ok(total)
    }

    /// Sum over |alpha| <= N-1 of the L2 pairing (d^a f, d_axis d^a g).
    fn cross_pair(&self, f: &[f64], g: &[f64], axis: usize) -> f64 {
        let parseval = self.sgrid.cell_volume() / self.sgrid.len as f64;
        let fs = self.sgrid.to_spectral(f);
        let gs = self.sgrid.to_spectral(g);
        let n = self.sgrid.cells_per_axis;
        let mut acc = 0.0;
        for idx in 0..self.sgrid.len {
            let k = SpatialGrid::wavenumber_deriv(self.sgrid.axis_mode(idx, axis), n);
            let dg = gs[idx] * Complex64::new(0.0, k);
            acc += self.mult_cross[idx] * (fs[idx].conj() * dg).re;
        }
        acc * parseval
    }

    /// Physical-space spatial derivative of a full distribution.
    fn derivative_state(&self, g: &Distribution, alpha: &[usize]) -> Distribution {
        let mut out = g.clone();
        if alpha.iter().all(|&p| p == 0) {
            return out;
        }
        let n_cells = g.n_cells;
        let mut row = vec![0.0; n_cells];
        for node in 0..g.n_nodes {
            for cell in 0..n_cells {
                row[cell] = g.data[cell * g.n_nodes + node];
            }
            let d = self.sgrid.derivative_multi(&row, alpha);
            for cell in 0..n_cells {
                out.data[cell * g.n_nodes + node] = d[cell];
            }
        }
        out
    }
}

/// Spec-level entry point: energy functionals of one state.
pub fn energy_functionals(
    g: &Distribution,
    kernel: &CollisionKernel,
    sgrid: &SpatialGrid,
    vgrid: &VelocityGrid,
    order: usize,
    d1: f64,
) -> Result<EnergyReport> {
    let basis = NullSpaceBasis::new(vgrid);
    let mbasis = crate::moments::build_moment_basis(vgrid)?;
    let eval = EnergyEvaluator::new(sgrid.clone(), vgrid.clone(), basis, mbasis, kernel, order, d1)?;
    Ok(eval.evaluate(g)?.1)
}

/// Recorded constants realizing the norm-equivalence, coercivity and
/// trilinear inequalities over a random sample.
#[derive(Clone, Copy, Debug)]
pub struct EquivalenceConstants {
    pub c1: f64,
    pub c2: f64,
    pub c_coercive: f64,
    pub c_trilinear: f64,
}

/// Samples random velocity functions and returns the extreme ratios realizing
/// each inequality (cutoff case, s = 0).
pub fn check_equivalence_constants(
    samples: usize,
    kernel: &CollisionKernel,
    op: &LinearOperator,
    grid: &VelocityGrid,
    basis: &NullSpaceBasis,
    seed: u64,
) -> Result<EquivalenceConstants> {
    if samples == 0 {
        return Err(Error::Usage("equivalence check needs at least one sample".to_string()));
    }
    let form = TripleNormForm::new(kernel, grid)?;
    let gamma = match kernel.model {
        CollisionModel::Vhs { gamma, .. } => gamma,
        CollisionModel::Bgk { .. } => 0.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut c1 = f64::INFINITY;
    let mut c2: f64 = 0.0;
    let mut c_coercive = f64::INFINITY;
    let mut c_trilinear: f64 = 0.0;

    let mut draws = Vec::with_capacity(samples);
    for _ in 0..samples {
        let f: Vec<f64> = (0..grid.len)
            .map(|i| rng.gen_range(-1.0..1.0) * grid.sqrt_maxwellian[i])
            .collect();
        draws.push(f);
    }

    for f in &draws {
        let norm = grid.norm(f);
        if norm < 1e-14 {
            continue; // degenerate sample
        }
        let triple = form.evaluate(grid, f).value;
        let weighted = {
            let vf = VelocityFunction { values: f.clone() };
            crate::velocity::weighted_l2_norm(&vf, grid, gamma / 2.0)?
        };
        // Cutoff case s = 0: both sides of the equivalence collapse to the
        // weighted L2_(gamma/2) norm.
        c1 = c1.min(triple * triple / (2.0 * weighted * weighted));
        c2 = c2.max(triple * triple / (weighted * weighted));

        let mut perp = f.clone();
        basis.project_out(grid, &mut perp);
        let triple_perp = form.evaluate(grid, &perp).value;
        if triple_perp > 1e-14 {
            let lf = apply_l_slice(f, op, grid, basis)?;
            let quad = grid.inner(&lf, f);
            c_coercive = c_coercive.min(quad / (triple_perp * triple_perp));
        }
    }

    // Trilinear constant over consecutive sample triples.
    for window in draws.windows(3) {
        let (f, g, h) = (&window[0], &window[1], &window[2]);
        let gamma_fg = match kernel.model {
            CollisionModel::Bgk { tau } => {
                // Polarized quadratic surrogate.
                let sum: Vec<f64> = f.iter().zip(g.iter()).map(|(a, b)| a + b).collect();
                let n_sum = bgk_quadratic_source(&sum, tau, grid, basis);
                let n_f = bgk_quadratic_source(f, tau, grid, basis);
                let n_g = bgk_quadratic_source(g, tau, grid, basis);
                n_sum
                    .iter()
                    .zip(n_f.iter().zip(n_g.iter()))
                    .map(|(s, (a, b))| 0.5 * (s - a - b))
                    .collect()
            }
            CollisionModel::Vhs { .. } => match op {
                LinearOperator::Assembled { quad, .. } | LinearOperator::MatrixFree { quad } => {
                    quad.gamma_bilinear(grid, f, g)
                }
                _ => return Err(Error::Unsupported("VHS kernel without quadrature".to_string())),
            },
        };
        let pairing = grid.inner(&gamma_fg, h).abs();
        let nf = grid.norm(f);
        let tg = form.evaluate(grid, g).value;
        let th = form.evaluate(grid, h).value;
        if nf > 1e-14 && tg > 1e-14 && th > 1e-14 {
            c_trilinear = c_trilinear.max(pairing / (nf * tg * th));
        }
    }

    if !(c1.is_finite() && c_coercive.is_finite()) {
        return Err(Error::Usage("all samples were degenerate".to_string()));
    }
    Ok(EquivalenceConstants { c1, c2, c_coercive, c_trilinear })
}
