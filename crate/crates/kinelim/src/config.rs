//! TOML-facing configuration schema and its mapping onto the solver types.

use kinelim_core::collision::CollisionKernel;
use kinelim_core::error::{Error, Result};
use kinelim_core::nsf::{RemainderSpec, ScalarSpec, VelocitySpec, WellPreparedIc};
use kinelim_core::sim::{Integrator, RunConfig};
use serde::Deserialize;
use std::path::{Path, PathBuf};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub grid: GridSection,
    pub velocity: VelocitySection,
    pub kernel: KernelSection,
    pub time: TimeSection,
    pub scaling: ScalingSection,
    #[serde(default)]
    pub initial_data: InitialDataSection,
    #[serde(default)]
    pub integrator: IntegratorSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub limits: LimitsSection,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub dim: usize,
    pub cells_per_axis: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VelocitySection {
    pub v_max: f64,
    pub points_per_axis: usize,
    #[serde(default = "default_tol_mass")]
    pub tol_mass: f64,
}

fn default_tol_mass() -> f64 {
    1e-6
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSection {
    pub model: String,
    pub tau: Option<f64>,
    pub gamma: Option<f64>,
    pub b0: Option<f64>,
    #[serde(default = "default_sigma_theta")]
    pub sigma_theta: usize,
    #[serde(default = "default_sigma_phi")]
    pub sigma_phi: usize,
}

fn default_sigma_theta() -> usize {
    8
}
fn default_sigma_phi() -> usize {
    4
}

impl KernelSection {
    pub fn to_kernel(&self) -> Result<CollisionKernel> {
        let mut kernel = match self.model.as_str() {
            "bgk" => {
                let tau = self
                    .tau
                    .ok_or_else(|| Error::config("bgk kernel requires tau".to_string()))?;
                CollisionKernel::bgk(tau)
            }
            "vhs" => {
                let gamma = self
                    .gamma
                    .ok_or_else(|| Error::config("vhs kernel requires gamma".to_string()))?;
                let b0 = self
                    .b0
                    .ok_or_else(|| Error::config("vhs kernel requires b0".to_string()))?;
                CollisionKernel::vhs(gamma, b0)
            }
            "hard_sphere" => CollisionKernel::hard_sphere(),
            other => {
                return Err(Error::config(format!(
                    "unknown kernel model '{other}' (expected bgk | vhs | hard_sphere)"
                )))
            }
        };
        kernel.n_theta = self.sigma_theta;
        kernel.n_phi = self.sigma_phi;
        kernel.validate()?;
        Ok(kernel)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    pub dt: f64,
    pub t_end: f64,
    #[serde(default = "default_cfl")]
    pub cfl_max: f64,
}

fn default_cfl() -> f64 {
    0.9
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingSection {
    pub epsilon: f64,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialDataSection {
    #[serde(default)]
    pub rho0: ScalarSpecToml,
    #[serde(default)]
    pub u0: VelocitySpecToml,
    #[serde(default)]
    pub theta0: ScalarSpecToml,
    #[serde(default)]
    pub remainder: RemainderSpecToml,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScalarSpecToml {
    Zero,
    Mode {
        amplitude: f64,
        k: Vec<i32>,
        #[serde(default)]
        phase: f64,
    },
    MinusTheta,
}

impl Default for ScalarSpecToml {
    fn default() -> Self {
        ScalarSpecToml::Zero
    }
}

impl ScalarSpecToml {
    fn to_spec(&self) -> ScalarSpec {
        match self {
            ScalarSpecToml::Zero => ScalarSpec::Zero,
            ScalarSpecToml::Mode { amplitude, k, phase } => {
                let mut kk = [0i32; 3];
                for (slot, &v) in kk.iter_mut().zip(k.iter()) {
                    *slot = v;
                }
                ScalarSpec::Mode { amplitude: *amplitude, k: kk, phase: *phase }
            }
            ScalarSpecToml::MinusTheta => ScalarSpec::MinusTheta,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum VelocitySpecToml {
    Zero,
    TaylorGreen { amplitude: f64 },
    SolenoidalRandom { amplitude: f64, seed: u64, k_max: i32 },
}

impl Default for VelocitySpecToml {
    fn default() -> Self {
        VelocitySpecToml::Zero
    }
}

impl VelocitySpecToml {
    fn to_spec(&self) -> VelocitySpec {
        match self {
            VelocitySpecToml::Zero => VelocitySpec::Zero,
            VelocitySpecToml::TaylorGreen { amplitude } => {
                VelocitySpec::TaylorGreen { amplitude: *amplitude }
            }
            VelocitySpecToml::SolenoidalRandom { amplitude, seed, k_max } => {
                VelocitySpec::SolenoidalRandom { amplitude: *amplitude, seed: *seed, k_max: *k_max }
            }
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum RemainderSpecToml {
    Zero,
    RandomPerp { amplitude: f64, seed: u64 },
}

impl Default for RemainderSpecToml {
    fn default() -> Self {
        RemainderSpecToml::Zero
    }
}

impl RemainderSpecToml {
    fn to_spec(&self) -> RemainderSpec {
        match self {
            RemainderSpecToml::Zero => RemainderSpec::Zero,
            RemainderSpecToml::RandomPerp { amplitude, seed } => {
                RemainderSpec::RandomPerp { amplitude: *amplitude, seed: *seed }
            }
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSection {
    #[serde(default = "default_scheme")]
    pub scheme: String,
    #[serde(default = "default_picard_iterations")]
    pub picard_iterations: usize,
}

fn default_scheme() -> String {
    "imex".to_string()
}
fn default_picard_iterations() -> usize {
    6
}

impl Default for IntegratorSection {
    fn default() -> Self {
        IntegratorSection { scheme: default_scheme(), picard_iterations: default_picard_iterations() }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
    #[serde(default = "default_report_every")]
    pub report_every: usize,
    #[serde(default)]
    pub snapshot_every: usize,
    #[serde(default = "default_energy_order")]
    pub energy_order: usize,
    #[serde(default = "default_d1")]
    pub d1: f64,
    #[serde(default = "default_probes")]
    pub probes: Vec<Vec<usize>>,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_report_every() -> usize {
    10
}
fn default_energy_order() -> usize {
    2
}
fn default_d1() -> f64 {
    0.01
}
fn default_probes() -> Vec<Vec<usize>> {
    vec![vec![0, 0, 0]]
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: default_out_dir(),
            report_every: default_report_every(),
            snapshot_every: 0,
            energy_order: default_energy_order(),
            d1: default_d1(),
            probes: default_probes(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitsSection {
    #[serde(default = "default_assembly_limit")]
    pub assembly_limit: usize,
    #[serde(default = "default_gamma_ceiling")]
    pub gamma_ceiling: f64,
    #[serde(default = "default_picard_smallness")]
    pub picard_smallness: f64,
}

fn default_assembly_limit() -> usize {
    kinelim_core::collision::DEFAULT_ASSEMBLY_LIMIT
}
fn default_gamma_ceiling() -> f64 {
    1e3
}
fn default_picard_smallness() -> f64 {
    1.0
}

impl Default for LimitsSection {
    fn default() -> Self {
        LimitsSection {
            assembly_limit: default_assembly_limit(),
            gamma_ceiling: default_gamma_ceiling(),
            picard_smallness: default_picard_smallness(),
        }
    }
}

#[derive(Debug, Deserialize, Clone)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub epsilons: Vec<f64>,
    pub compare_times: Vec<f64>,
    #[serde(default = "default_eta_list")]
    pub eta_list: Vec<f64>,
    pub nsf_dt: f64,
    #[serde(default = "default_true")]
    pub check_monotone: bool,
    #[serde(default = "default_weak_factor")]
    pub weak_residual_factor: f64,
    #[serde(default = "default_transport_v_max")]
    pub transport_v_max: f64,
    #[serde(default = "default_transport_points")]
    pub transport_points: usize,
}

fn default_eta_list() -> Vec<f64> {
    vec![0.5, 1.0]
}
fn default_true() -> bool {
    true
}
fn default_weak_factor() -> f64 {
    1.5
}
fn default_transport_v_max() -> f64 {
    8.0
}
fn default_transport_points() -> usize {
    32
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::config(format!("cannot read config {}: {e}", path.display()))
        })?;
        toml::from_str(&text).map_err(|e| Error::config(format!("invalid config: {e}")))
    }

    pub fn to_run_config(&self) -> Result<RunConfig> {
        let kernel = self.kernel.to_kernel()?;
        let integrator = match self.integrator.scheme.as_str() {
            "imex" => Integrator::Imex,
            "picard" => Integrator::Picard { iterations: self.integrator.picard_iterations },
            other => {
                return Err(Error::config(format!(
                    "unknown integrator '{other}' (expected imex | picard)"
                )))
            }
        };
        let ic = WellPreparedIc {
            rho0: self.initial_data.rho0.to_spec(),
            u0: self.initial_data.u0.to_spec(),
            theta0: self.initial_data.theta0.to_spec(),
            remainder: self.initial_data.remainder.to_spec(),
        };
        let cfg = RunConfig {
            dim: self.grid.dim,
            n_x: self.grid.cells_per_axis,
            v_max: self.velocity.v_max,
            n_v: self.velocity.points_per_axis,
            tol_mass: self.velocity.tol_mass,
            kernel,
            eps: self.scaling.epsilon,
            dt: self.time.dt,
            t_end: self.time.t_end,
            cfl_max: self.time.cfl_max,
            ic,
            integrator,
            report_every: self.output.report_every.max(1),
            snapshot_every: self.output.snapshot_every,
            energy_order: self.output.energy_order,
            d1: self.output.d1,
            assembly_limit: self.limits.assembly_limit,
            gamma_ceiling: self.limits.gamma_ceiling,
            picard_smallness: self.limits.picard_smallness,
            probes: self.output.probes.clone(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Flat probe indices for the configured spatial grid.
    pub fn probe_indices(&self, sgrid: &kinelim_core::grid::SpatialGrid) -> Vec<usize> {
        self.output.probes.iter().map(|p| sgrid.flat_index(p)).collect()
    }
}
