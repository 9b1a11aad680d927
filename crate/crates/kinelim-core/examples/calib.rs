use kinelim_core::collision::CollisionKernel;
use kinelim_core::moments::{project_p, NullSpaceBasis};
use kinelim_core::nsf::WellPreparedIc;
use kinelim_core::sim::{Distribution, RunConfig, Stepper};

fn shear_rate(tau: f64, eps: f64, dt: f64, t_end: f64) -> f64 {
    let cfg = RunConfig {
        dim: 2, n_x: 8, v_max: 6.0, n_v: 12, tol_mass: 1e-2,
        kernel: CollisionKernel::bgk(tau), eps, dt, t_end,
        ic: WellPreparedIc::zero(), report_every: usize::MAX,
        ..RunConfig::default()
    };
    let (sgrid, vgrid) = cfg.build_grids().unwrap();
    let basis = NullSpaceBasis::new(&vgrid);
    let mut g = Distribution::zeros(sgrid.len, vgrid.len, eps);
    let amp = 1e-3;
    for cell in 0..sgrid.len {
        let [x, _, _] = sgrid.coords(cell);
        let b2 = amp * x.sin() / basis.sii[1];
        let out = g.cell_mut(cell);
        for i in 0..vgrid.len {
            out[i] = b2 * vgrid.nodes[i][1] * vgrid.sqrt_maxwellian[i];
        }
    }
    let u0 = {
        let (f, _, _) = project_p(&g, &vgrid, &basis).unwrap();
        sgrid.l2_norm(&f.u[1])
    };
    let stepper = Stepper::new(&cfg).unwrap();
    let n = (t_end / dt).round() as usize;
    for _ in 0..n { g = stepper.step(&g).unwrap(); }
    let (f, _, _) = project_p(&g, &vgrid, &basis).unwrap();
    -(sgrid.l2_norm(&f.u[1]) / u0).ln() / t_end
}

fn main() {
    let tau = 0.15;
    for eps in [0.1, 0.05] {
        for dt in [1e-3, 5e-4, 2.5e-4, 1.25e-4, 6.25e-5] {
            let gamma = dt / (2.0 * eps * eps * tau);
            let r = shear_rate(tau, eps, dt, 0.3);
            println!("eps={eps} dt={dt:.2e} gamma={gamma:.3}: rate = {r:.6} (tau = {tau})");
        }
    }
}
