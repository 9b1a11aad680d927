//! Picard iteration mode: a sequence of linear problems with the nonlinear
//! source frozen from the previous iterate's trajectory.
//!
//! Iterate 0 is identically zero; every iterate starts from the same initial
//! data. Trajectories are streamed through the binary snapshot container so
//! only two iterates' worth of states is ever held (on disk, not in memory).

use crate::energy::EnergyEvaluator;
use crate::error::{Error, Result};
use crate::io::{SnapshotReader, SnapshotWriter};
use crate::sim::{initial_fluctuation, Distribution, RunConfig, Stepper};
use std::path::Path;

/// Result of a Picard solve.
pub struct PicardOutcome {
    /// Cauchy increments `max_t ||g^(n+1) - g^n||_L2` for n = 0..K-1.
    pub increments: Vec<f64>,
    /// Decimated states of the final iterate (every `report_every` steps).
    pub final_states: Vec<Distribution>,
    /// E_N of the initial data.
    pub initial_energy: f64,
}

/// Runs `iterations` Picard sweeps of the configured scenario, storing
/// iterate trajectories under `workdir`.
pub fn picard_solve(cfg: &RunConfig, iterations: usize, workdir: &Path) -> Result<PicardOutcome> {
    cfg.validate()?;
    if iterations == 0 {
        return Err(Error::Usage("picard mode needs at least one iteration".to_string()));
    }
    std::fs::create_dir_all(workdir)?;

    let stepper = Stepper::new(cfg)?;
    let mbasis = crate::moments::build_moment_basis(&stepper.vgrid)?;
    let evaluator = EnergyEvaluator::new(
        stepper.sgrid.clone(),
        stepper.vgrid.clone(),
        stepper.basis.clone(),
        mbasis,
        &cfg.kernel,
        cfg.energy_order,
        cfg.d1,
    )?;

    let g0 = initial_fluctuation(&cfg.ic, &stepper.sgrid, &stepper.vgrid, &stepper.basis, cfg.eps)?;
    let (_, report0) = evaluator.evaluate(&g0)?;
    if report0.e_n > cfg.picard_smallness {
        return Err(Error::Usage(format!(
            "initial energy E_N = {:.3e} exceeds the Picard smallness threshold {:.3e}",
            report0.e_n, cfg.picard_smallness
        )));
    }

    let n_steps = if cfg.t_end <= 0.0 { 0 } else { (cfg.t_end / cfg.dt).round() as usize };
    let mut increments = Vec::with_capacity(iterations);
    let mut final_states = Vec::new();
    let mut prev_path: Option<std::path::PathBuf> = None;

    for iter_idx in 1..=iterations {
        let cur_path = workdir.join(format!("iter_{iter_idx}.bin"));
        let mut writer = SnapshotWriter::create(&cur_path, g0.n_cells, g0.n_nodes)?;
        let mut prev_reader = match &prev_path {
            Some(p) => Some(SnapshotReader::open(p)?),
            None => None,
        };

        let is_last = iter_idx == iterations;
        let mut g = g0.clone();
        writer.append(&g)?;
        let mut max_diff: f64 = 0.0;
        if is_last {
            final_states.push(g.clone());
        }

        // The previous iterate's state at the step start drives the frozen
        // source; iterate 0 is the zero trajectory (no source).
        let mut prev_state = match prev_reader.as_mut() {
            Some(r) => {
                let s = r.next_snapshot()?.ok_or_else(|| {
                    Error::Solver {
                        message: "previous iterate trajectory is truncated".to_string(),
                        residual: f64::NAN,
                    }
                })?;
                max_diff = max_diff.max(g.l2_distance(&s, &stepper.sgrid, &stepper.vgrid));
                Some(s)
            }
            None => {
                max_diff = max_diff.max(g.l2_norm(&stepper.sgrid, &stepper.vgrid));
                None
            }
        };

        for step_idx in 1..=n_steps {
            let source = match &prev_state {
                Some(ps) => stepper.gamma_source(ps)?,
                None => g.like_zeros(),
            };
            g = stepper.step_frozen(&g, &source)?;
            writer.append(&g)?;

            prev_state = match prev_reader.as_mut() {
                Some(r) => {
                    let s = r.next_snapshot()?.ok_or_else(|| Error::Solver {
                        message: "previous iterate trajectory is truncated".to_string(),
                        residual: f64::NAN,
                    })?;
                    max_diff = max_diff.max(g.l2_distance(&s, &stepper.sgrid, &stepper.vgrid));
                    Some(s)
                }
                None => {
                    max_diff = max_diff.max(g.l2_norm(&stepper.sgrid, &stepper.vgrid));
                    None
                }
            };

            if is_last && (step_idx % cfg.report_every == 0 || step_idx == n_steps) {
                final_states.push(g.clone());
            }
        }
        let _ = prev_state;
        writer.finish()?;
        increments.push(max_diff);

        // Detect divergence: three consecutive growing increments.
        if increments.len() >= 3 {
            let k = increments.len();
            if increments[k - 1] > increments[k - 2] && increments[k - 2] > increments[k - 3] {
                return Err(Error::NonContraction(format!(
                    "increments grew for 3 consecutive iterates (E_N(g0) = {:.3e})",
                    report0.e_n
                )));
            }
        }

        if let Some(p) = prev_path.take() {
            let _ = std::fs::remove_file(p);
        }
        prev_path = Some(cur_path);
    }

    Ok(PicardOutcome { increments, final_states, initial_energy: report0.e_n })
}
