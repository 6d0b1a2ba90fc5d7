//! Experiment configuration files.
//!
//! TOML with a strict schema: unknown keys are rejected everywhere. All
//! physical quantities carry fixed units (joules, hertz, seconds, watts,
//! dB for SNR axes). A parsed file converts into a core `ExperimentSpec`.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use fademac_core::{
    DpConfig, ExperimentSpec, FadingDistribution, IwfConfig, PolicyKind, SolverSettings, Sweep,
    SystemParams,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub experiment: ExperimentSection,
    pub system: SystemSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(default, skip_serializing_if = "is_default_solver")]
    pub solver: SolverSection,
    pub output: OutputSection,
}

fn is_default_solver(s: &SolverSection) -> bool {
    *s == SolverSection::default()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub policies: Vec<PolicyKind>,
    pub n_realizations: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub n_users: usize,
    pub horizon: usize,
    /// Channel bandwidth in hertz.
    pub bandwidth_hz: f64,
    /// Slot duration in seconds.
    pub slot_seconds: f64,
    /// Noise power in watts.
    pub noise_watts: f64,
    /// Per-user energy budgets in joules. A single entry is replicated to
    /// all users. May be omitted when an `snr_db` sweep derives budgets.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub energy_budgets: Option<Vec<f64>>,
    /// Per-user fading descriptors; a single entry is replicated.
    pub fading: Vec<FadingSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FadingSection {
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// `snr_db` or `n_users`.
    pub axis: String,
    pub values: Vec<f64>,
    /// Transmit SNR fixing the budgets of an `n_users` sweep.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snr_db: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    #[serde(default = "default_iwf_max_iters")]
    pub iwf_max_iters: usize,
    #[serde(default = "default_iwf_tol")]
    pub iwf_tol: f64,
    #[serde(default = "default_dp_grid_points")]
    pub dp_grid_points: usize,
    #[serde(default = "default_dp_quadrature_order")]
    pub dp_quadrature_order: usize,
    #[serde(default = "default_dp_inner_opt_points")]
    pub dp_inner_opt_points: usize,
    #[serde(default = "default_dp_max_users")]
    pub dp_max_users: usize,
}

fn default_iwf_max_iters() -> usize {
    IwfConfig::default().max_iters
}
fn default_iwf_tol() -> f64 {
    IwfConfig::default().objective_tol
}
fn default_dp_grid_points() -> usize {
    DpConfig::default().energy_grid_points
}
fn default_dp_quadrature_order() -> usize {
    DpConfig::default().quadrature_order
}
fn default_dp_inner_opt_points() -> usize {
    DpConfig::default().inner_opt_points
}
fn default_dp_max_users() -> usize {
    SolverSettings::default().dp_max_users
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            iwf_max_iters: default_iwf_max_iters(),
            iwf_tol: default_iwf_tol(),
            dp_grid_points: default_dp_grid_points(),
            dp_quadrature_order: default_dp_quadrature_order(),
            dp_inner_opt_points: default_dp_inner_opt_points(),
            dp_max_users: default_dp_max_users(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    /// CSV results table destination.
    pub csv_path: PathBuf,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn to_toml(&self) -> Result<String, String> {
        toml::to_string(self).map_err(|e| e.to_string())
    }

    /// Validates the file and converts it into an experiment description.
    pub fn to_spec(&self, dp_cache_dir: Option<PathBuf>) -> Result<ExperimentSpec, String> {
        let sys = &self.system;
        if sys.n_users < 1 {
            return Err("system.n_users: must be at least 1".into());
        }
        let fading = expand_per_user("system.fading", &sys.fading, sys.n_users)?
            .iter()
            .map(to_distribution)
            .collect::<Result<Vec<_>, _>>()?;

        let sweep = self.sweep.as_ref().map(to_sweep).transpose()?;
        let budgets = match &sys.energy_budgets {
            Some(list) => expand_per_user("system.energy_budgets", list, sys.n_users)?,
            None => match &sweep {
                Some(Sweep::SnrDb { .. })
                | Some(Sweep::NUsers {
                    snr_db: Some(_), ..
                }) => vec![0.0; sys.n_users], // overwritten per sweep point
                _ => {
                    return Err(
                        "system.energy_budgets: required unless an snr_db sweep derives budgets"
                            .into(),
                    )
                }
            },
        };

        let params = SystemParams::new(
            sys.n_users,
            sys.horizon,
            sys.bandwidth_hz,
            sys.slot_seconds,
            sys.noise_watts,
            budgets,
            fading,
        )
        .map_err(|e| format!("system: {e}"))?;

        if self.experiment.policies.is_empty() {
            return Err("experiment.policies: at least one policy required".into());
        }
        if self.experiment.n_realizations < 1 {
            return Err("experiment.n_realizations: must be at least 1".into());
        }
        let s = &self.solver;
        if s.iwf_max_iters < 1 {
            return Err("solver.iwf_max_iters: must be at least 1".into());
        }
        if !(s.iwf_tol > 0.0) {
            return Err("solver.iwf_tol: must be positive".into());
        }
        Ok(ExperimentSpec {
            params,
            policies: self.experiment.policies.clone(),
            n_realizations: self.experiment.n_realizations,
            seed: self.experiment.seed,
            sweep,
            solver: SolverSettings {
                iwf: IwfConfig {
                    max_iters: s.iwf_max_iters,
                    objective_tol: s.iwf_tol,
                },
                dp: DpConfig {
                    energy_grid_points: s.dp_grid_points,
                    quadrature_order: s.dp_quadrature_order,
                    inner_opt_points: s.dp_inner_opt_points,
                },
                dp_max_users: s.dp_max_users,
                dp_cache_dir,
            },
        })
    }
}

fn expand_per_user<T: Clone>(key: &str, list: &[T], n_users: usize) -> Result<Vec<T>, String> {
    match list.len() {
        0 => Err(format!("{key}: must not be empty")),
        1 => Ok(vec![list[0].clone(); n_users]),
        n if n == n_users => Ok(list.to_vec()),
        n => Err(format!("{key}: {n} entries for {n_users} users")),
    }
}

fn to_distribution(section: &FadingSection) -> Result<FadingDistribution, String> {
    let reject_extras = |allowed: &str| -> Result<(), String> {
        let extras = [
            ("rate", section.rate.is_some() && allowed != "rate"),
            ("value", section.value.is_some() && allowed != "value"),
            ("grid", section.grid.is_some() && allowed != "grid"),
        ];
        for (name, bad) in extras {
            if bad {
                return Err(format!(
                    "system.fading: field '{name}' not valid for kind '{}'",
                    section.kind
                ));
            }
        }
        Ok(())
    };
    let dist = match section.kind.as_str() {
        "exponential" => {
            reject_extras("rate")?;
            let rate = section
                .rate
                .ok_or("system.fading: exponential kind needs 'rate'")?;
            FadingDistribution::exponential(rate)
        }
        "deterministic" => {
            reject_extras("value")?;
            let value = section
                .value
                .ok_or("system.fading: deterministic kind needs 'value'")?;
            FadingDistribution::deterministic(value)
        }
        "tabulated" => {
            reject_extras("grid")?;
            let grid = section
                .grid
                .as_ref()
                .ok_or("system.fading: tabulated kind needs 'grid'")?;
            FadingDistribution::tabulated_inverse_cdf(
                grid.iter().map(|pair| (pair[0], pair[1])).collect(),
            )
        }
        other => {
            return Err(format!(
                "system.fading.kind: unknown kind '{other}', expected exponential, deterministic or tabulated"
            ))
        }
    };
    dist.map_err(|e| format!("system.fading: {e}"))
}

fn to_sweep(section: &SweepSection) -> Result<Sweep, String> {
    match section.axis.as_str() {
        "snr_db" => {
            if section.snr_db.is_some() {
                return Err("sweep.snr_db: only valid for the n_users axis".into());
            }
            if section.values.is_empty() {
                return Err("sweep.values: must not be empty".into());
            }
            Ok(Sweep::SnrDb {
                values: section.values.clone(),
            })
        }
        "n_users" => {
            if section.values.is_empty() {
                return Err("sweep.values: must not be empty".into());
            }
            let values = section
                .values
                .iter()
                .map(|&v| {
                    if v.fract() == 0.0 && v >= 1.0 && v <= 1e6 {
                        Ok(v as usize)
                    } else {
                        Err(format!("sweep.values: '{v}' is not a valid user count"))
                    }
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(Sweep::NUsers {
                values,
                snr_db: section.snr_db,
            })
        }
        other => Err(format!(
            "sweep.axis: unknown axis '{other}', expected snr_db or n_users"
        )),
    }
}
