//! `kinelim` — kinetic-to-hydrodynamic limit laboratory.
//!
//! Subcommands: `run` (kinetic solver), `nsf` (fluid reference), `transport`
//! (coefficient extraction), `sweep` (epsilon sweep + convergence report),
//! `report` (re-render a sweep report).
//!
//! Exit codes: 0 success, 1 failed acceptance thresholds or runtime error,
//! 2 usage/configuration errors.

use clap::{Parser, Subcommand};
use kinelim::config::FileConfig;
use kinelim::harness::{self, SweepSettings};
use kinelim_core::collision::{assemble_l_matrix, CollisionModel, LinearOperator};
use kinelim_core::error::Error;
use kinelim_core::io::{fmt_f64, write_json_pretty, DiskSink};
use kinelim_core::moments::NullSpaceBasis;
use kinelim_core::sim::{run_simulation, Integrator};
use kinelim_core::transport::compute_transport;
use kinelim_core::velocity::build_velocity_grid_with_tol;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "kinelim", version, about = "kinetic-to-hydrodynamic limit laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the kinetic equation per the config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides the config's `output.dir`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Integrate the Navier-Stokes-Fourier reference system.
    Nsf {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Viscosity override; defaults to the kernel's limit coefficient.
        #[arg(long)]
        nu: Option<f64>,
        /// Heat conductivity override.
        #[arg(long)]
        kappa: Option<f64>,
    },
    /// Extract transport coefficients for the configured kernel and grid.
    Transport {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the epsilon sweep and produce the convergence report.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-render report.csv/report.txt/plots from a sweep directory.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("KINELIM_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
        }
    }
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::Usage(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn dispatch(cli: Cli) -> kinelim_core::Result<ExitCode> {
    match cli.command {
        Command::Run { config, out } => {
            let file = FileConfig::load(&config)?;
            let cfg = file.to_run_config()?;
            let dir = out.unwrap_or_else(|| file.output.dir.clone());
            std::fs::create_dir_all(&dir)?;
            let sgrid = kinelim_core::grid::SpatialGrid::new(cfg.dim, cfg.n_x)?;
            let probes = file.probe_indices(&sgrid);
            match cfg.integrator {
                Integrator::Imex => {
                    let with_snapshots = if cfg.snapshot_every > 0 {
                        Some((sgrid.len, cfg.n_v * cfg.n_v * cfg.n_v))
                    } else {
                        None
                    };
                    let mut sink = DiskSink::create(&dir, &probes, cfg.eps, with_snapshots)?;
                    match run_simulation(&cfg, &mut sink) {
                        Ok(_) => {
                            sink.finish()?;
                            harness::write_run_manifest(&dir, &cfg)?;
                            println!("run complete: {}", dir.display());
                            Ok(ExitCode::SUCCESS)
                        }
                        Err(e) => {
                            sink.finish()?;
                            kinelim_core::io::write_error_manifest(&dir, &e.to_string())?;
                            Err(e)
                        }
                    }
                }
                Integrator::Picard { iterations } => {
                    let workdir = dir.join("picard");
                    let outcome = kinelim_core::picard::picard_solve(&cfg, iterations, &workdir)?;
                    let mut csv = String::from("iterate,increment\n");
                    for (i, inc) in outcome.increments.iter().enumerate() {
                        csv.push_str(&format!("{},{}\n", i + 1, fmt_f64(*inc)));
                    }
                    std::fs::write(dir.join("picard_increments.csv"), csv)?;
                    harness::write_run_manifest(&dir, &cfg)?;
                    println!(
                        "picard complete: {} iterations, last increment {}",
                        outcome.increments.len(),
                        fmt_f64(*outcome.increments.last().unwrap())
                    );
                    Ok(ExitCode::SUCCESS)
                }
            }
        }
        Command::Nsf { config, out, nu, kappa } => {
            let file = FileConfig::load(&config)?;
            let cfg = file.to_run_config()?;
            let dir = out.unwrap_or_else(|| file.output.dir.clone());
            std::fs::create_dir_all(&dir)?;
            let sgrid = kinelim_core::grid::SpatialGrid::new(cfg.dim, cfg.n_x)?;

            let (nu, kappa) = match (nu, kappa) {
                (Some(n), Some(k)) => (n, k),
                _ => {
                    let sweep = file.sweep.clone();
                    let (tv, tn) = sweep
                        .map(|s| (s.transport_v_max, s.transport_points))
                        .unwrap_or((8.0, 32));
                    let tgrid = build_velocity_grid_with_tol(tv, tn, 1e-6)?;
                    let tbasis = NullSpaceBasis::new(&tgrid);
                    let top = operator_for(&cfg, &tgrid, &tbasis)?;
                    let coeffs = compute_transport(&cfg.kernel, &tgrid, &tbasis, &top)?;
                    (nu.unwrap_or(coeffs.nu_limit), kappa.unwrap_or(coeffs.kappa_limit))
                }
            };

            let traj = kinelim_core::nsf::run_nsf(
                &cfg.ic,
                nu,
                kappa,
                cfg.t_end,
                &sgrid,
                cfg.dt,
                cfg.report_every,
            )?;
            let mut csv = String::from("t,u_l2,grad_u_sq,theta_l2,theta_max,div_u_l2\n");
            for i in 0..traj.times.len() {
                csv.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    fmt_f64(traj.times[i]),
                    fmt_f64(traj.u_l2[i]),
                    fmt_f64(traj.grad_u_sq[i]),
                    fmt_f64(traj.theta_l2[i]),
                    fmt_f64(traj.theta_max[i]),
                    fmt_f64(traj.div_u_l2[i])
                ));
            }
            std::fs::write(dir.join("fluid.csv"), csv)?;
            println!("nsf complete: {}", dir.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Transport { config, out } => {
            let file = FileConfig::load(&config)?;
            let kernel = file.kernel.to_kernel()?;
            let vgrid = build_velocity_grid_with_tol(
                file.velocity.v_max,
                file.velocity.points_per_axis,
                file.velocity.tol_mass,
            )?;
            let basis = NullSpaceBasis::new(&vgrid);
            let op = match kernel.model {
                CollisionModel::Bgk { tau } => LinearOperator::bgk(tau),
                CollisionModel::Vhs { .. } => {
                    assemble_l_matrix(&kernel, &vgrid, &basis, file.limits.assembly_limit)?
                }
            };
            let c = compute_transport(&kernel, &vgrid, &basis, &op)?;
            println!("kernel:      {}", file.kernel.model);
            println!("grid:        V = {}, n = {}", vgrid.v_max, vgrid.n_per_axis);
            println!("nu:          {}", fmt_f64(c.nu));
            println!("kappa:       {}", fmt_f64(c.kappa));
            println!("nu_limit:    {}", fmt_f64(c.nu_limit));
            println!("kappa_limit: {}", fmt_f64(c.kappa_limit));
            println!("residual_A:  {}", fmt_f64(c.residual_a));
            println!("residual_B:  {}", fmt_f64(c.residual_b));
            let payload = format!(
                "{{\n  \"model\": \"{}\",\n  \"v_max\": {},\n  \"points_per_axis\": {},\n  \"nu\": {},\n  \"kappa\": {},\n  \"nu_limit\": {},\n  \"kappa_limit\": {},\n  \"residual_a\": {},\n  \"residual_b\": {},\n  \"index_summation\": \"all pairs (i,j), symmetric off-diagonals doubled\"\n}}\n",
                file.kernel.model,
                fmt_f64(vgrid.v_max),
                vgrid.n_per_axis,
                fmt_f64(c.nu),
                fmt_f64(c.kappa),
                fmt_f64(c.nu_limit),
                fmt_f64(c.kappa_limit),
                fmt_f64(c.residual_a),
                fmt_f64(c.residual_b)
            );
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)?;
                write_json_pretty(&dir.join("transport.json"), &payload)?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep { config, out } => {
            let file = FileConfig::load(&config)?;
            let cfg = file.to_run_config()?;
            let sweep = file
                .sweep
                .clone()
                .ok_or_else(|| Error::Config("config has no [sweep] section".to_string()))?;
            let dir = out.unwrap_or_else(|| file.output.dir.clone());
            let settings = SweepSettings {
                epsilons: sweep.epsilons.clone(),
                compare_times: sweep.compare_times.clone(),
                eta_list: sweep.eta_list.clone(),
                nsf_dt: sweep.nsf_dt,
                check_monotone: sweep.check_monotone,
                weak_residual_factor: sweep.weak_residual_factor,
                transport_grid: (sweep.transport_v_max, sweep.transport_points),
            };
            let report = harness::epsilon_sweep(&cfg, &settings, &dir)?;
            println!("sweep complete: {}", dir.display());
            println!("{}", if report.passed { "PASS" } else { "FAIL" });
            if report.passed {
                Ok(ExitCode::SUCCESS)
            } else {
                Ok(ExitCode::from(1))
            }
        }
        Command::Report { input } => {
            kinelim::report::rerender(&input)?;
            println!("report rendered: {}", input.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn operator_for(
    cfg: &kinelim_core::sim::RunConfig,
    vgrid: &kinelim_core::velocity::VelocityGrid,
    basis: &NullSpaceBasis,
) -> kinelim_core::Result<LinearOperator> {
    match cfg.kernel.model {
        CollisionModel::Bgk { tau } => Ok(LinearOperator::bgk(tau)),
        CollisionModel::Vhs { .. } => {
            assemble_l_matrix(&cfg.kernel, vgrid, basis, cfg.assembly_limit)
        }
    }
}
