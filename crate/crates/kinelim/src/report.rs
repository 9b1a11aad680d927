//! Rendering of a convergence report to a human table, CSV and plot-data
//! files. Pure function of the report contents, so re-rendering is
//! byte-identical.

use crate::harness::ConvergenceReport;
use kinelim_core::error::{Error, Result};
use kinelim_core::io::fmt_f64;
use std::fmt::Write as _;
use std::path::Path;

pub fn render(report: &ConvergenceReport, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("report.csv"), render_csv(report))?;
    std::fs::write(out_dir.join("report.txt"), render_text(report))?;
    let plots = out_dir.join("plots");
    std::fs::create_dir_all(&plots)?;
    for (name, content) in plot_files(report) {
        std::fs::write(plots.join(name), content)?;
    }
    Ok(())
}

/// Re-renders the CSV/text/plot artifacts from a sweep directory's
/// report.json.
pub fn rerender(dir: &Path) -> Result<()> {
    let json = std::fs::read_to_string(dir.join("report.json"))
        .map_err(|e| Error::Usage(format!("cannot read report.json: {e}")))?;
    let report: ConvergenceReport = serde_json::from_str(&json)
        .map_err(|e| Error::Usage(format!("invalid report.json: {e}")))?;
    render(&report, dir)
}

fn render_csv(report: &ConvergenceReport) -> String {
    let mut out = String::from(
        "eps,status,t,err_u_l2,err_theta_l2,div_residual,boussinesq_residual,weak_u_max,weak_theta_max\n",
    );
    for entry in &report.entries {
        if entry.status != "ok" {
            let _ = writeln!(out, "{},\"{}\",,,,,,,", fmt_f64(entry.eps), entry.status);
            continue;
        }
        for (ti, &t) in report.compare_times.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},ok,{},{},{},{},{},{},{}",
                fmt_f64(entry.eps),
                fmt_f64(t),
                fmt_f64(entry.err_u[ti]),
                fmt_f64(entry.err_theta[ti]),
                fmt_f64(entry.div_residual[ti]),
                fmt_f64(entry.boussinesq_residual[ti]),
                fmt_f64(entry.weak_u_max),
                fmt_f64(entry.weak_theta_max)
            );
        }
    }
    out
}

fn render_text(report: &ConvergenceReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "hydrodynamic-limit sweep report");
    let _ = writeln!(out, "===============================");
    let _ = writeln!(
        out,
        "transport: nu = {} kappa = {} (limit closure: nu = {} kappa = {})",
        fmt_f64(report.nu),
        fmt_f64(report.kappa),
        fmt_f64(report.nu_limit),
        fmt_f64(report.kappa_limit)
    );
    let _ = writeln!(
        out,
        "comparison norms: strong L2(dx) at fixed times (plus H^(N-eta), eta in {:?}).",
        report.eta_list
    );
    let _ = writeln!(
        out,
        "t = 0 wiring errors: u {}  theta {}",
        fmt_f64(report.t0_error_u),
        fmt_f64(report.t0_error_theta)
    );
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "{:>10} {:>10} {:>14} {:>14} {:>14} {:>14}",
        "eps", "t", "err_u", "err_theta", "div_u", "grad(rho+th)"
    );
    for entry in &report.entries {
        if entry.status != "ok" {
            let _ = writeln!(out, "{:>10} run failed: {}", fmt_f64(entry.eps), entry.status);
            continue;
        }
        for (ti, &t) in report.compare_times.iter().enumerate() {
            let _ = writeln!(
                out,
                "{:>10} {:>10} {:>14.6e} {:>14.6e} {:>14.6e} {:>14.6e}",
                fmt_f64(entry.eps),
                fmt_f64(t),
                entry.err_u[ti],
                entry.err_theta[ti],
                entry.div_residual[ti],
                entry.boussinesq_residual[ti]
            );
        }
    }
    let _ = writeln!(out);
    if report.orders.is_empty() {
        let _ = writeln!(out, "observed orders: not fitted (need >= 3 successful epsilons)");
    } else {
        let _ = writeln!(out, "observed orders (log-log fit, recorded not asserted):");
        for fit in &report.orders {
            let _ = writeln!(
                out,
                "  {:<24} order = {:.3}  fit residual = {:.3e}",
                fit.series, fit.order, fit.fit_residual
            );
        }
    }
    let _ = writeln!(out);
    let flag = |b: bool| if b { "yes" } else { "NO" };
    let _ = writeln!(out, "monotone err_u:          {}", flag(report.monotone_u));
    let _ = writeln!(out, "monotone err_theta:      {}", flag(report.monotone_theta));
    let _ = writeln!(out, "monotone div residual:   {}", flag(report.monotone_div));
    let _ = writeln!(out, "monotone Boussinesq:     {}", flag(report.monotone_boussinesq));
    let _ = writeln!(out, "weak remainders shrink:  {}", flag(report.weak_residual_ok));
    let _ = writeln!(out, "overall: {}", if report.passed { "PASS" } else { "FAIL" });
    for note in &report.notes {
        let _ = writeln!(out, "note: {note}");
    }
    out
}

fn plot_files(report: &ConvergenceReport) -> Vec<(String, String)> {
    let mut files = Vec::new();
    let ok: Vec<_> = report.entries.iter().filter(|e| e.status == "ok").collect();
    for (ti, &t) in report.compare_times.iter().enumerate() {
        let mut content = String::from("eps,err_u,err_theta\n");
        for e in &ok {
            let _ = writeln!(
                content,
                "{},{},{}",
                fmt_f64(e.eps),
                fmt_f64(e.err_u[ti]),
                fmt_f64(e.err_theta[ti])
            );
        }
        files.push((format!("error_vs_eps_t{}.csv", fmt_f64(t)), content));
    }
    let mut resid = String::from("eps,weak_u_max,weak_theta_max,r_u_sup,r_theta_sup\n");
    for e in &ok {
        let _ = writeln!(
            resid,
            "{},{},{},{},{}",
            fmt_f64(e.eps),
            fmt_f64(e.weak_u_max),
            fmt_f64(e.weak_theta_max),
            fmt_f64(e.r_u_sup),
            fmt_f64(e.r_theta_sup)
        );
    }
    files.push(("weak_residuals_vs_eps.csv".to_string(), resid));
    files
}
