//! Periodic spatial torus `[0, 2*pi)^d` with spectral differentiation.
//!
//! Fields live on a uniform grid in row-major order and all derivatives are
//! Fourier multipliers, so gradients of constants and divergences of
//! solenoidal fields vanish to round-off. The domain measure is unnormalized
//! Lebesgue measure.

use crate::error::{Error, Result};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

pub const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Uniform periodic grid on `[0, 2*pi)^d`, `d` in {2, 3}.
#[derive(Clone)]
pub struct SpatialGrid {
    pub dim: usize,
    pub cells_per_axis: usize,
    pub len: usize,
    pub dx: f64,
    fft_fwd: Arc<dyn Fft<f64>>,
    fft_inv: Arc<dyn Fft<f64>>,
}

impl SpatialGrid {
    pub fn new(dim: usize, cells_per_axis: usize) -> Result<Self> {
        if !(dim == 2 || dim == 3) {
            return Err(Error::config(format!("spatial dimension must be 2 or 3, got {dim}")));
        }
        if cells_per_axis < 4 || cells_per_axis % 2 != 0 {
            return Err(Error::config(format!(
                "cells per axis must be even and >= 4, got {cells_per_axis}"
            )));
        }
        let mut planner = FftPlanner::new();
        Ok(SpatialGrid {
            dim,
            cells_per_axis,
            len: cells_per_axis.pow(dim as u32),
            dx: TWO_PI / cells_per_axis as f64,
            fft_fwd: planner.plan_fft_forward(cells_per_axis),
            fft_inv: planner.plan_fft_inverse(cells_per_axis),
        })
    }

    /// Volume of one cell, `dx^d`.
    pub fn cell_volume(&self) -> f64 {
        self.dx.powi(self.dim as i32)
    }

    /// Physical coordinates of the cell with flat index `idx`.
    pub fn coords(&self, idx: usize) -> [f64; 3] {
        let n = self.cells_per_axis;
        let mut c = [0.0; 3];
        let mut rem = idx;
        for a in (0..self.dim).rev() {
            c[a] = (rem % n) as f64 * self.dx;
            rem /= n;
        }
        debug_assert_eq!(rem, 0);
        c
    }

    /// Flat index from per-axis cell indices (`ix[0..dim]`).
    pub fn flat_index(&self, ix: &[usize]) -> usize {
        let n = self.cells_per_axis;
        ix.iter().take(self.dim).fold(0, |acc, &i| acc * n + (i % n))
    }

    /// Integer wavenumber of Fourier mode `m` on an `n`-point axis.
    pub fn wavenumber(m: usize, n: usize) -> f64 {
        if m <= n / 2 {
            m as f64
        } else {
            m as f64 - n as f64
        }
    }

    /// Wavenumber used in odd-order derivative multipliers; the Nyquist mode
    /// has no well-defined sign and is zeroed.
    pub fn wavenumber_deriv(m: usize, n: usize) -> f64 {
        if m == n / 2 {
            0.0
        } else {
            Self::wavenumber(m, n)
        }
    }

    fn fft_along_axes(&self, data: &mut [Complex64], inverse: bool) {
        let n = self.cells_per_axis;
        let plan = if inverse { &self.fft_inv } else { &self.fft_fwd };
        let mut line = vec![Complex64::default(); n];
        let mut scratch = vec![Complex64::default(); plan.get_inplace_scratch_len()];
        for axis in 0..self.dim {
            // Row-major layout: axis `a` has stride n^(dim-1-a).
            let stride = n.pow((self.dim - 1 - axis) as u32);
            let block = stride * n;
            for base_block in (0..self.len).step_by(block) {
                for off in 0..stride {
                    let base = base_block + off;
                    for (j, slot) in line.iter_mut().enumerate() {
                        *slot = data[base + j * stride];
                    }
                    plan.process_with_scratch(&mut line, &mut scratch);
                    for (j, slot) in line.iter().enumerate() {
                        data[base + j * stride] = *slot;
                    }
                }
            }
        }
    }

    /// Forward DFT of a real field (unnormalized).
    pub fn to_spectral(&self, field: &[f64]) -> Vec<Complex64> {
        debug_assert_eq!(field.len(), self.len);
        let mut out: Vec<Complex64> = field.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fft_along_axes(&mut out, false);
        out
    }

    /// Inverse DFT back to a real field (applies the 1/n^d normalization).
    pub fn to_physical(&self, spectral: &[Complex64]) -> Vec<f64> {
        debug_assert_eq!(spectral.len(), self.len);
        let mut buf = spectral.to_vec();
        self.fft_along_axes(&mut buf, true);
        let scale = 1.0 / self.len as f64;
        buf.iter().map(|c| c.re * scale).collect()
    }

    /// In-place spectral derivative along `axis` (multiplication by i*k).
    pub fn derivative_spectral(&self, spec: &mut [Complex64], axis: usize) {
        let n = self.cells_per_axis;
        for (idx, value) in spec.iter_mut().enumerate() {
            let m = self.axis_mode(idx, axis);
            let k = Self::wavenumber_deriv(m, n);
            *value *= Complex64::new(0.0, k);
        }
    }

    /// Mode index along `axis` of the flat spectral index `idx`.
    pub fn axis_mode(&self, idx: usize, axis: usize) -> usize {
        let n = self.cells_per_axis;
        let stride = n.pow((self.dim - 1 - axis) as u32);
        (idx / stride) % n
    }

    /// Squared wavenumber |k|^2 of the flat spectral index `idx`.
    pub fn k_squared(&self, idx: usize) -> f64 {
        let n = self.cells_per_axis;
        (0..self.dim)
            .map(|a| {
                let k = Self::wavenumber(self.axis_mode(idx, a), n);
                k * k
            })
            .sum()
    }

    /// Spectral partial derivative of a real field.
    pub fn derivative(&self, field: &[f64], axis: usize) -> Vec<f64> {
        let mut spec = self.to_spectral(field);
        self.derivative_spectral(&mut spec, axis);
        self.to_physical(&spec)
    }

    /// Spectral mixed derivative `d^alpha` for a multi-index over the axes.
    pub fn derivative_multi(&self, field: &[f64], alpha: &[usize]) -> Vec<f64> {
        let mut spec = self.to_spectral(field);
        for (axis, &order) in alpha.iter().enumerate().take(self.dim) {
            for _ in 0..order {
                self.derivative_spectral(&mut spec, axis);
            }
        }
        self.to_physical(&spec)
    }

    /// Divergence of a vector field given as `dim` component fields.
    pub fn divergence(&self, components: &[Vec<f64>]) -> Vec<f64> {
        let mut out = vec![0.0; self.len];
        for (axis, comp) in components.iter().enumerate().take(self.dim) {
            let d = self.derivative(comp, axis);
            for (o, v) in out.iter_mut().zip(d.iter()) {
                *o += v;
            }
        }
        out
    }

    /// L2 norm with unnormalized Lebesgue measure.
    pub fn l2_norm(&self, field: &[f64]) -> f64 {
        let vol = self.cell_volume();
        (field.iter().map(|v| v * v).sum::<f64>() * vol).sqrt()
    }

    /// Mean value over the torus.
    pub fn mean(&self, field: &[f64]) -> f64 {
        field.iter().sum::<f64>() / self.len as f64
    }

    /// Sobolev H^s norm computed through Parseval (s may be fractional).
    pub fn sobolev_norm(&self, field: &[f64], s: f64) -> f64 {
        let spec = self.to_spectral(field);
        let factor = self.cell_volume() / self.len as f64;
        let total: f64 = spec
            .iter()
            .enumerate()
            .map(|(idx, c)| (1.0 + self.k_squared(idx)).powf(s) * c.norm_sqr())
            .sum();
        (total * factor).sqrt()
    }
}

/// All spatial multi-indices with |alpha| <= max_order, in a fixed
/// deterministic order (by total order, then lexicographic).
pub fn multi_indices(dim: usize, max_order: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for total in 0..=max_order {
        let mut alpha = vec![0usize; dim];
        fill(&mut out, &mut alpha, 0, total);
    }
    return out;

    fn fill(out: &mut Vec<Vec<usize>>, alpha: &mut Vec<usize>, axis: usize, remaining: usize) {
        if axis + 1 == alpha.len() {
            alpha[axis] = remaining;
            out.push(alpha.clone());
            return;
        }
        for take in 0..=remaining {
            alpha[axis] = take;
            fill(out, alpha, axis + 1, remaining - take);
        }
        alpha[axis] = 0;
    }
}
