//! Pseudo-spectral incompressible Navier-Stokes-Fourier reference solver on
//! the torus, plus the well-prepared initial data shared with the kinetic
//! solver.
//!
//! Diffusion is integrated exactly by a Fourier integrating factor, advection
//! by Heun's second-order explicit rule with 2/3-rule dealiasing, and the
//! velocity is Leray-projected after every stage.

use crate::error::{Error, Result};
use crate::grid::SpatialGrid;
use crate::moments::NullSpaceBasis;
use crate::sim::Distribution;
use crate::velocity::VelocityGrid;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;

/// Scalar initial field: zero, a single trigonometric mode, or (for the
/// density) the negative of the temperature field (Boussinesq-prepared).
#[derive(Clone, Debug)]
pub enum ScalarSpec {
    Zero,
    /// amplitude * sin(k . x + phase)
    Mode { amplitude: f64, k: [i32; 3], phase: f64 },
    /// rho0 = -theta0; only meaningful for the density slot.
    MinusTheta,
}

/// Velocity initial field.
#[derive(Clone, Debug)]
pub enum VelocitySpec {
    Zero,
    /// Classical Taylor-Green vortex (2D form; modulated by cos z in 3D).
    TaylorGreen { amplitude: f64 },
    /// Random solenoidal low-mode field, deterministic in the seed.
    SolenoidalRandom { amplitude: f64, seed: u64, k_max: i32 },
}

/// Kinetic remainder added on top of the macroscopic initial data.
#[derive(Clone, Debug)]
pub enum RemainderSpec {
    Zero,
    /// Seeded noise shaped by sqrt(mu), projected cell-by-cell onto the
    /// complement of the collision invariants.
    RandomPerp { amplitude: f64, seed: u64 },
}

/// Well-prepared initial data (rho0, u0, theta0) plus an optional kinetic
/// remainder.
#[derive(Clone, Debug)]
pub struct WellPreparedIc {
    pub rho0: ScalarSpec,
    pub u0: VelocitySpec,
    pub theta0: ScalarSpec,
    pub remainder: RemainderSpec,
}

impl WellPreparedIc {
    pub fn zero() -> Self {
        WellPreparedIc {
            rho0: ScalarSpec::Zero,
            u0: VelocitySpec::Zero,
            theta0: ScalarSpec::Zero,
            remainder: RemainderSpec::Zero,
        }
    }

    pub fn taylor_green(amplitude: f64) -> Self {
        WellPreparedIc {
            rho0: ScalarSpec::Zero,
            u0: VelocitySpec::TaylorGreen { amplitude },
            theta0: ScalarSpec::Zero,
            remainder: RemainderSpec::Zero,
        }
    }

    /// Samples (rho0, u0, theta0) on the spatial grid.
    pub fn sample_fields(&self, sgrid: &SpatialGrid) -> Result<(Vec<f64>, [Vec<f64>; 3], Vec<f64>)> {
        let theta0 = sample_scalar(&self.theta0, sgrid)?;
        let rho0 = match self.rho0 {
            ScalarSpec::MinusTheta => theta0.iter().map(|v| -v).collect(),
            _ => sample_scalar(&self.rho0, sgrid)?,
        };
        let u0 = sample_velocity(&self.u0, sgrid);
        Ok((rho0, u0, theta0))
    }

    /// Adds the kinetic remainder to an assembled distribution.
    pub fn add_remainder(
        &self,
        g: &mut Distribution,
        sgrid: &SpatialGrid,
        vgrid: &VelocityGrid,
        basis: &NullSpaceBasis,
    ) -> Result<()> {
        match self.remainder {
            RemainderSpec::Zero => Ok(()),
            RemainderSpec::RandomPerp { amplitude, seed } => {
                for cell in 0..sgrid.len {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(cell as u64));
                    let mut noise: Vec<f64> = (0..vgrid.len)
                        .map(|i| amplitude * rng.gen_range(-1.0..1.0) * vgrid.sqrt_maxwellian[i])
                        .collect();
                    basis.project_out(vgrid, &mut noise);
                    let out = g.cell_mut(cell);
                    for (o, n) in out.iter_mut().zip(noise.iter()) {
                        *o += n;
                    }
                }
                Ok(())
            }
        }
    }
}

fn sample_scalar(spec: &ScalarSpec, sgrid: &SpatialGrid) -> Result<Vec<f64>> {
    match spec {
        ScalarSpec::Zero => Ok(vec![0.0; sgrid.len]),
        ScalarSpec::Mode { amplitude, k, phase } => Ok((0..sgrid.len)
            .map(|i| {
                let x = sgrid.coords(i);
                let arg = k[0] as f64 * x[0] + k[1] as f64 * x[1] + k[2] as f64 * x[2] + phase;
                amplitude * arg.sin()
            })
            .collect()),
        ScalarSpec::MinusTheta => {
            Err(Error::config("MinusTheta is only valid for the density slot".to_string()))
        }
    }
}

fn sample_velocity(spec: &VelocitySpec, sgrid: &SpatialGrid) -> [Vec<f64>; 3] {
    let mut u = [vec![0.0; sgrid.len], vec![0.0; sgrid.len], vec![0.0; sgrid.len]];
    match spec {
        VelocitySpec::Zero => {}
        VelocitySpec::TaylorGreen { amplitude } => {
            for i in 0..sgrid.len {
                let x = sgrid.coords(i);
                let modulation = if sgrid.dim == 3 { x[2].cos() } else { 1.0 };
                u[0][i] = amplitude * x[0].sin() * x[1].cos() * modulation;
                u[1][i] = -amplitude * x[0].cos() * x[1].sin() * modulation;
            }
        }
        VelocitySpec::SolenoidalRandom { amplitude, seed, k_max } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            for comp in u.iter_mut().take(sgrid.dim) {
                for kx in -k_max..=*k_max {
                    for ky in -k_max..=*k_max {
                        if kx == 0 && ky == 0 {
                            continue;
                        }
                        let (a, b): (f64, f64) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                        for i in 0..sgrid.len {
                            let x = sgrid.coords(i);
                            let arg = kx as f64 * x[0] + ky as f64 * x[1];
                            comp[i] += a * arg.sin() + b * arg.cos();
                        }
                    }
                }
            }
            let mut components: Vec<Vec<f64>> = u[..sgrid.dim].to_vec();
            leray_project(sgrid, &mut components);
            let max = components
                .iter()
                .flat_map(|c| c.iter())
                .fold(0.0f64, |m, v| m.max(v.abs()))
                .max(1e-300);
            let scale = amplitude / max;
            for (slot, comp) in u.iter_mut().zip(components.into_iter()) {
                *slot = comp.into_iter().map(|v| v * scale).collect();
            }
        }
    }
    u
}

/// Incompressible fluid state: divergence-free velocity, temperature, time.
#[derive(Clone)]
pub struct FluidState {
    /// One component field per spatial dimension.
    pub u: Vec<Vec<f64>>,
    pub theta: Vec<f64>,
    pub t: f64,
}

/// Leray projection onto divergence-free fields: `I - k (k.)/|k|^2` in
/// Fourier space, zero mode passed through.
pub fn leray_project(sgrid: &SpatialGrid, components: &mut [Vec<f64>]) {
    let dim = components.len();
    let n = sgrid.cells_per_axis;
    let mut spectra: Vec<Vec<Complex64>> =
        components.iter().map(|c| sgrid.to_spectral(c)).collect();
    for idx in 0..sgrid.len {
        let mut k = [0.0f64; 3];
        let mut ksq = 0.0;
        for (axis, slot) in k.iter_mut().enumerate().take(dim) {
            *slot = SpatialGrid::wavenumber(sgrid.axis_mode(idx, axis), n);
            ksq += *slot * *slot;
        }
        if ksq == 0.0 {
            continue;
        }
        let mut dot = Complex64::new(0.0, 0.0);
        for (axis, spec) in spectra.iter().enumerate() {
            dot += spec[idx] * k[axis];
        }
        let factor = dot / ksq;
        for (axis, spec) in spectra.iter_mut().enumerate() {
            spec[idx] -= factor * k[axis];
        }
    }
    for (c, spec) in components.iter_mut().zip(spectra.iter()) {
        *c = sgrid.to_physical(spec);
    }
}

/// Limit initial data: `u(0) = P u0`, `theta(0) = (3/5) theta0 - (2/5) rho0`.
pub fn nsf_initial_data(ic: &WellPreparedIc, sgrid: &SpatialGrid) -> Result<FluidState> {
    let (rho0, u0, theta0) = ic.sample_fields(sgrid)?;
    let mut u: Vec<Vec<f64>> = u0[..sgrid.dim].to_vec();
    leray_project(sgrid, &mut u);
    let theta = theta0
        .iter()
        .zip(rho0.iter())
        .map(|(t, r)| 0.6 * t - 0.4 * r)
        .collect();
    Ok(FluidState { u, theta, t: 0.0 })
}

/// Cached NSF stepping machinery for fixed (nu, kappa, dt).
pub struct NsfSolver {
    pub sgrid: SpatialGrid,
    pub nu: f64,
    pub kappa: f64,
    pub dt: f64,
    pub cfl_max: f64,
    /// 2/3-rule dealiasing mask.
    mask: Vec<f64>,
    /// exp(-nu |k|^2 dt), exp(-kappa |k|^2 dt).
    decay_u: Vec<f64>,
    decay_theta: Vec<f64>,
}

impl NsfSolver {
    pub fn new(sgrid: SpatialGrid, nu: f64, kappa: f64, dt: f64) -> Result<Self> {
        if !(nu > 0.0 && kappa > 0.0) {
            return Err(Error::config(format!(
                "transport coefficients must be positive (nu = {nu}, kappa = {kappa})"
            )));
        }
        if !(dt > 0.0) {
            return Err(Error::config("dt must be positive".to_string()));
        }
        let n = sgrid.cells_per_axis;
        let cutoff = n as f64 / 3.0;
        let mut mask = vec![1.0; sgrid.len];
        let mut decay_u = vec![0.0; sgrid.len];
        let mut decay_theta = vec![0.0; sgrid.len];
        for idx in 0..sgrid.len {
            for axis in 0..sgrid.dim {
                let k = SpatialGrid::wavenumber(sgrid.axis_mode(idx, axis), n);
                if k.abs() > cutoff {
                    mask[idx] = 0.0;
                }
            }
            let ksq = sgrid.k_squared(idx);
            decay_u[idx] = (-nu * ksq * dt).exp();
            decay_theta[idx] = (-kappa * ksq * dt).exp();
        }
        Ok(NsfSolver { sgrid, nu, kappa, dt, cfl_max: 0.9, mask, decay_u, decay_theta })
    }

    fn dealias(&self, spec: &mut [Complex64]) {
        for (s, m) in spec.iter_mut().zip(self.mask.iter()) {
            *s *= *m;
        }
    }

    /// Nonlinear tendencies in spectral space: advection of u (Leray-projected)
    /// and of theta, both dealiased.
    fn tendencies(&self, u: &[Vec<f64>], theta: &[f64]) -> (Vec<Vec<Complex64>>, Vec<Complex64>) {
        let sgrid = &self.sgrid;
        let dim = sgrid.dim;

        // Dealias inputs before forming products.
        let u_phys: Vec<Vec<f64>> = u
            .iter()
            .map(|c| {
                let mut s = sgrid.to_spectral(c);
                self.dealias(&mut s);
                sgrid.to_physical(&s)
            })
            .collect();
        let theta_phys = {
            let mut s = sgrid.to_spectral(theta);
            self.dealias(&mut s);
            sgrid.to_physical(&s)
        };

        // du_i/dt <- -d_j (u_i u_j)
        let mut du: Vec<Vec<Complex64>> = Vec::with_capacity(dim);
        for i in 0..dim {
            let mut total = vec![Complex64::new(0.0, 0.0); sgrid.len];
            for j in 0..dim {
                let prod: Vec<f64> =
                    u_phys[i].iter().zip(u_phys[j].iter()).map(|(a, b)| a * b).collect();
                let mut spec = sgrid.to_spectral(&prod);
                self.dealias(&mut spec);
                sgrid.derivative_spectral(&mut spec, j);
                for (t, s) in total.iter_mut().zip(spec.iter()) {
                    *t -= s;
                }
            }
            du.push(total);
        }
        project_spectral(sgrid, &mut du);

        // dtheta/dt <- -d_j (u_j theta)
        let mut dtheta = vec![Complex64::new(0.0, 0.0); sgrid.len];
        for j in 0..dim {
            let prod: Vec<f64> =
                u_phys[j].iter().zip(theta_phys.iter()).map(|(a, b)| a * b).collect();
            let mut spec = sgrid.to_spectral(&prod);
            self.dealias(&mut spec);
            sgrid.derivative_spectral(&mut spec, j);
            for (t, s) in dtheta.iter_mut().zip(spec.iter()) {
                *t -= s;
            }
        }
        (du, dtheta)
    }

    /// One Heun step with exact integrating-factor diffusion.
    pub fn step(&self, state: &FluidState) -> Result<FluidState> {
        let sgrid = &self.sgrid;
        let max_u = state
            .u
            .iter()
            .flat_map(|c| c.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()));
        let cfl = max_u * self.dt / sgrid.dx;
        if cfl > self.cfl_max {
            return Err(Error::StepRejected {
                reason: format!("advective CFL {cfl:.3} exceeds {}", self.cfl_max),
                advisory_dt: self.cfl_max * sgrid.dx / max_u.max(1e-300),
            });
        }

        let dim = sgrid.dim;
        let u_hat: Vec<Vec<Complex64>> = state.u.iter().map(|c| sgrid.to_spectral(c)).collect();
        let theta_hat = sgrid.to_spectral(&state.theta);

        let (k1_u, k1_theta) = self.tendencies(&state.u, &state.theta);

        // Predictor: E (u_hat + dt k1)
        let mut pred_u_hat: Vec<Vec<Complex64>> = Vec::with_capacity(dim);
        for i in 0..dim {
            let mut spec = vec![Complex64::new(0.0, 0.0); sgrid.len];
            for idx in 0..sgrid.len {
                spec[idx] = (u_hat[i][idx] + k1_u[i][idx] * self.dt) * self.decay_u[idx];
            }
            pred_u_hat.push(spec);
        }
        project_spectral(sgrid, &mut pred_u_hat);
        let mut pred_theta_hat = vec![Complex64::new(0.0, 0.0); sgrid.len];
        for idx in 0..sgrid.len {
            pred_theta_hat[idx] = (theta_hat[idx] + k1_theta[idx] * self.dt) * self.decay_theta[idx];
        }

        let pred_u: Vec<Vec<f64>> = pred_u_hat.iter().map(|s| sgrid.to_physical(s)).collect();
        let pred_theta = sgrid.to_physical(&pred_theta_hat);
        let (k2_u, k2_theta) = self.tendencies(&pred_u, &pred_theta);

        // Corrector: E u_hat + dt/2 (E k1 + k2)
        let mut new_u_hat: Vec<Vec<Complex64>> = Vec::with_capacity(dim);
        for i in 0..dim {
            let mut spec = vec![Complex64::new(0.0, 0.0); sgrid.len];
            for idx in 0..sgrid.len {
                spec[idx] = u_hat[i][idx] * self.decay_u[idx]
                    + (k1_u[i][idx] * self.decay_u[idx] + k2_u[i][idx]) * (0.5 * self.dt);
            }
            new_u_hat.push(spec);
        }
        project_spectral(sgrid, &mut new_u_hat);
        let mut new_theta_hat = vec![Complex64::new(0.0, 0.0); sgrid.len];
        for idx in 0..sgrid.len {
            new_theta_hat[idx] = theta_hat[idx] * self.decay_theta[idx]
                + (k1_theta[idx] * self.decay_theta[idx] + k2_theta[idx]) * (0.5 * self.dt);
        }

        Ok(FluidState {
            u: new_u_hat.iter().map(|s| sgrid.to_physical(s)).collect(),
            theta: sgrid.to_physical(&new_theta_hat),
            t: state.t + self.dt,
        })
    }

    /// Pressure recovered diagnostically from the projection residual of the
    /// advection term: `lap p = -div div (u (x) u)`.
    pub fn pressure(&self, state: &FluidState) -> Vec<f64> {
        let sgrid = &self.sgrid;
        let dim = sgrid.dim;
        let mut rhs = vec![Complex64::new(0.0, 0.0); sgrid.len];
        for i in 0..dim {
            for j in 0..dim {
                let prod: Vec<f64> =
                    state.u[i].iter().zip(state.u[j].iter()).map(|(a, b)| a * b).collect();
                let mut spec = sgrid.to_spectral(&prod);
                self.dealias(&mut spec);
                sgrid.derivative_spectral(&mut spec, i);
                sgrid.derivative_spectral(&mut spec, j);
                for (r, s) in rhs.iter_mut().zip(spec.iter()) {
                    *r -= s;
                }
            }
        }
        let n = sgrid.cells_per_axis;
        for idx in 0..sgrid.len {
            let mut ksq = 0.0;
            for axis in 0..dim {
                let k = SpatialGrid::wavenumber(sgrid.axis_mode(idx, axis), n);
                ksq += k * k;
            }
            if ksq == 0.0 {
                rhs[idx] = Complex64::new(0.0, 0.0);
            } else {
                rhs[idx] /= Complex64::new(ksq, 0.0);
            }
        }
        sgrid.to_physical(&rhs)
    }
}

fn project_spectral(sgrid: &SpatialGrid, spectra: &mut [Vec<Complex64>]) {
    let dim = spectra.len();
    let n = sgrid.cells_per_axis;
    for idx in 0..sgrid.len {
        let mut k = [0.0f64; 3];
        let mut ksq = 0.0;
        for (axis, slot) in k.iter_mut().enumerate().take(dim) {
            *slot = SpatialGrid::wavenumber(sgrid.axis_mode(idx, axis), n);
            ksq += *slot * *slot;
        }
        if ksq == 0.0 {
            continue;
        }
        let mut dot = Complex64::new(0.0, 0.0);
        for (axis, spec) in spectra.iter().enumerate() {
            dot += spec[idx] * k[axis];
        }
        let factor = dot / ksq;
        for (axis, spec) in spectra.iter_mut().enumerate() {
            spec[idx] -= factor * k[axis];
        }
    }
}

/// Time series and decimated states of an NSF run.
pub struct FluidTrajectory {
    pub times: Vec<f64>,
    pub u_l2: Vec<f64>,
    pub grad_u_sq: Vec<f64>,
    pub theta_l2: Vec<f64>,
    pub theta_max: Vec<f64>,
    pub div_u_l2: Vec<f64>,
    pub states: Vec<FluidState>,
}

/// Integrates the NSF system to `t_end`, storing diagnostics every
/// `report_every` steps and the full state at the same cadence.
pub fn run_nsf(
    ic: &WellPreparedIc,
    nu: f64,
    kappa: f64,
    t_end: f64,
    sgrid: &SpatialGrid,
    dt: f64,
    report_every: usize,
) -> Result<FluidTrajectory> {
    let solver = NsfSolver::new(sgrid.clone(), nu, kappa, dt)?;
    let mut state = nsf_initial_data(ic, sgrid)?;
    let mut traj = FluidTrajectory {
        times: Vec::new(),
        u_l2: Vec::new(),
        grad_u_sq: Vec::new(),
        theta_l2: Vec::new(),
        theta_max: Vec::new(),
        div_u_l2: Vec::new(),
        states: Vec::new(),
    };
    record(&mut traj, &state, sgrid);

    let n_steps = if t_end <= 0.0 { 0 } else { (t_end / dt).round() as usize };
    for step_idx in 1..=n_steps {
        state = solver.step(&state)?;
        if step_idx % report_every == 0 || step_idx == n_steps {
            record(&mut traj, &state, sgrid);
        }
    }
    return Ok(traj);

    fn record(traj: &mut FluidTrajectory, state: &FluidState, sgrid: &SpatialGrid) {
        let u_sq: f64 = state.u.iter().map(|c| {
            let n = sgrid.l2_norm(c);
            n * n
        }).sum();
        let mut grad_sq = 0.0;
        for comp in &state.u {
            for axis in 0..sgrid.dim {
                let d = sgrid.derivative(comp, axis);
                let n = sgrid.l2_norm(&d);
                grad_sq += n * n;
            }
        }
        let div = sgrid.divergence(&state.u);
        traj.times.push(state.t);
        traj.u_l2.push(u_sq.sqrt());
        traj.grad_u_sq.push(grad_sq);
        traj.theta_l2.push(sgrid.l2_norm(&state.theta));
        traj.theta_max.push(state.theta.iter().fold(0.0f64, |m, v| m.max(v.abs())));
        traj.div_u_l2.push(sgrid.l2_norm(&div));
        traj.states.push(state.clone());
    }
}
