//! JSON scenario files.
//!
//! All matrices are row-major arrays of rows. Quaternions are
//! `[q1, q2, q3, q4]` with the scalar last and are normalized on load.
//! Torques are in N·m, rates in rad/s, inertia in kg·m², times in s.

use nalgebra::{DVector, Matrix3, Vector3, Vector6};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::controller::Gains;
use crate::error::{Error, Result};
use crate::internal_model::{DesignConfig, OmegaBasis};
use crate::linalg::{from_rows, to_rows};
use crate::plant::{
    example_matrices, AxisDisturbance, DisturbanceModel, InertiaParameterization, PlantState, SpacecraftParams, Tone,
};
use crate::quat::Quaternion;
use crate::sim::{AnalysisConfig, Change, Event, Scenario};

pub const SCENARIO_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterizationFile {
    /// 6 × n_mu, rows ordered J11 J22 J33 J23 J13 J12.
    pub lbar1: Vec<Vec<f64>>,
    pub lbar0: [f64; 6],
    pub mu: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpacecraftFile {
    pub inertia: [[f64; 3]; 3],
    /// 3 × n.
    pub coupling: Vec<Vec<f64>>,
    pub damping: Vec<Vec<f64>>,
    pub stiffness: Vec<Vec<f64>>,
    /// Names from `J11 J22 J33 J23 J13 J12`; their values in `inertia` are the truth.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unknown_inertia_entries: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parameterization: Option<ParameterizationFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToneFile {
    pub amplitude: f64,
    pub frequency: f64,
    #[serde(default)]
    pub phase: f64,
    /// Frequency hidden from the controller.
    #[serde(default)]
    pub unknown: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisFile {
    #[serde(default)]
    pub bias: Option<f64>,
    #[serde(default)]
    pub tones: Vec<ToneFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceFile {
    pub axes: [AxisFile; 3],
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignFile {
    /// Per axis: `null` for the default poles, or a list of `[re, im]`.
    #[serde(default)]
    pub poles: [Option<Vec<[f64; 2]>>; 3],
    #[serde(default)]
    pub nominal_sigma: Option<Vec<f64>>,
    #[serde(default)]
    pub grid_range: Option<Vec<[f64; 2]>>,
    #[serde(default)]
    pub grid_points: Option<usize>,
    /// Exponent vectors; default `σ_k²` per unknown frequency.
    #[serde(default)]
    pub basis: Option<Vec<Vec<u32>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssumedFile {
    pub sigma: Vec<f64>,
    pub mu: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisFile {
    pub enabled: bool,
    #[serde(default = "one")]
    pub p: f64,
    #[serde(default = "one")]
    pub s: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub schema_version: u32,
    pub t_final: f64,
    pub dt: f64,
    #[serde(default = "default_decimate")]
    pub decimate: usize,
    pub q0: [f64; 4],
    #[serde(default)]
    pub omega0: [f64; 3],
    #[serde(default)]
    pub eta0: Option<Vec<f64>>,
    #[serde(default)]
    pub eta_dot0: Option<Vec<f64>>,
    pub q_desired: [f64; 4],
    pub spacecraft: SpacecraftFile,
    pub disturbance: DisturbanceFile,
    #[serde(default)]
    pub design: DesignFile,
    pub gains: Gains,
    /// Values used for `R̂` while adaptation is off; default: the truth at t = 0.
    #[serde(default)]
    pub assumed: Option<AssumedFile>,
    #[serde(default)]
    pub initial_r_hat: Option<Vec<f64>>,
    #[serde(default)]
    pub events: Vec<Event>,
    #[serde(default)]
    pub analysis: Option<AnalysisFile>,
}

fn default_decimate() -> usize {
    100
}

fn matrix3(rows: &[[f64; 3]; 3]) -> Matrix3<f64> {
    Matrix3::from_fn(|i, j| rows[i][j])
}

fn cols_of(rows: &[Vec<f64>]) -> usize {
    rows.first().map_or(0, Vec::len)
}

impl ScenarioFile {
    pub fn from_json(text: &str) -> Result<Self> {
        let f: ScenarioFile = serde_json::from_str(text).map_err(|e| Error::Schema(format!("scenario: {e}")))?;
        if f.schema_version != SCENARIO_SCHEMA_VERSION {
            return Err(Error::Schema(format!(
                "scenario schema_version {} is not supported (expected {SCENARIO_SCHEMA_VERSION})",
                f.schema_version
            )));
        }
        Ok(f)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Builds and validates the in-memory scenario.
    pub fn to_scenario(&self) -> Result<Scenario> {
        let sc = &self.spacecraft;
        let j = matrix3(&sc.inertia);
        let n = cols_of(&sc.coupling);
        let coupling = if sc.coupling.is_empty() {
            nalgebra::DMatrix::zeros(3, 0)
        } else {
            from_rows(&sc.coupling, n, "spacecraft.coupling")?
        };
        if coupling.nrows() != 3 {
            return Err(Error::Schema("spacecraft.coupling must have 3 rows".into()));
        }
        let damping = from_rows(&sc.damping, n, "spacecraft.damping")?;
        let stiffness = from_rows(&sc.stiffness, n, "spacecraft.stiffness")?;
        let spacecraft = SpacecraftParams::new(j, coupling, damping, stiffness)?;

        let inertia = match (&sc.unknown_inertia_entries, &sc.parameterization) {
            (Some(_), Some(_)) => {
                return Err(Error::Schema(
                    "give either unknown_inertia_entries or parameterization, not both".into(),
                ))
            }
            (Some(names), None) => InertiaParameterization::from_unknown_entries(&j, names)?,
            (None, Some(p)) => InertiaParameterization::new(
                from_rows(&p.lbar1, p.mu.len(), "spacecraft.parameterization.lbar1")?,
                Vector6::from_row_slice(&p.lbar0),
                DVector::from_vec(p.mu.clone()),
            )?,
            (None, None) => InertiaParameterization::from_unknown_entries(&j, &[])?,
        };

        let mut axes: [AxisDisturbance; 3] = Default::default();
        let mut unknown: [Vec<bool>; 3] = Default::default();
        for (i, a) in self.disturbance.axes.iter().enumerate() {
            axes[i] = AxisDisturbance {
                bias: a.bias,
                tones: a
                    .tones
                    .iter()
                    .map(|t| Tone {
                        amplitude: t.amplitude,
                        frequency: t.frequency,
                        phase: t.phase,
                    })
                    .collect(),
            };
            unknown[i] = a.tones.iter().map(|t| t.unknown).collect();
        }
        let disturbance = DisturbanceModel { axes };

        let mut poles: [Option<Vec<Complex64>>; 3] = Default::default();
        for (i, p) in self.design.poles.iter().enumerate() {
            poles[i] = p
                .as_ref()
                .map(|v| v.iter().map(|&[re, im]| Complex64::new(re, im)).collect());
        }
        let design = DesignConfig {
            poles,
            basis: self.design.basis.clone().map(|exponents| OmegaBasis { exponents }),
            nominal_sigma: self.design.nominal_sigma.clone(),
            grid_range: self
                .design
                .grid_range
                .as_ref()
                .map(|r| r.iter().map(|&[a, b]| (a, b)).collect()),
            grid_points: self.design.grid_points,
        };

        let modal = |v: &Option<Vec<f64>>, what: &str| -> Result<DVector<f64>> {
            match v {
                None => Ok(DVector::zeros(n)),
                Some(x) if x.len() == n => Ok(DVector::from_vec(x.clone())),
                Some(x) => Err(Error::Schema(format!("{what} has {} entries, expected {n}", x.len()))),
            }
        };
        let initial = PlantState {
            q: Quaternion::new_normalized(self.q0)?,
            omega: Vector3::from(self.omega0),
            eta: modal(&self.eta0, "eta0")?,
            eta_dot: modal(&self.eta_dot0, "eta_dot0")?,
        };

        let mut scenario = Scenario {
            t_final: self.t_final,
            dt: self.dt,
            decimate: self.decimate,
            q_desired: Quaternion::new_normalized(self.q_desired)?,
            initial,
            spacecraft,
            assumed_mu: inertia.mu_true.clone(),
            inertia,
            disturbance,
            unknown_tones: unknown,
            design,
            gains: self.gains,
            assumed_sigma: Vec::new(),
            initial_r_hat: self.initial_r_hat.clone().map(DVector::from_vec),
            events: self.events.clone(),
            analysis: self
                .analysis
                .as_ref()
                .filter(|a| a.enabled)
                .map(|a| AnalysisConfig { p: a.p, s: a.s }),
        };
        let structure = scenario.structure()?;
        scenario.assumed_sigma = structure.sigma_of(&scenario.disturbance);
        if let Some(a) = &self.assumed {
            scenario.assumed_sigma = a.sigma.clone();
            scenario.assumed_mu = DVector::from_vec(a.mu.clone());
        }
        scenario.segments()?;
        Ok(scenario)
    }
}

/// Parses and validates a scenario document.
pub fn load_scenario(text: &str) -> Result<Scenario> {
    ScenarioFile::from_json(text)?.to_scenario()
}

/// The worked example: `J₁₁ = μ = 20` unknown, the axis-3 tone frequency
/// `σ = 0.2` unknown, adaptation off with `R̂` pinned to the truth, then
/// switches at 200 s (σ = 1, μ = 22), 400 s (adaptation on) and 600 s
/// (back to σ = 0.2, μ = 20).
pub fn example_scenario_file() -> ScenarioFile {
    let (j, delta, c, k) = example_matrices(20.0);
    let rows3 = |m: &Matrix3<f64>| -> [[f64; 3]; 3] { std::array::from_fn(|i| std::array::from_fn(|jj| m[(i, jj)])) };
    let tone = |amplitude: f64, frequency: f64, unknown: bool| ToneFile {
        amplitude,
        frequency,
        phase: 0.0,
        unknown,
    };
    ScenarioFile {
        schema_version: SCENARIO_SCHEMA_VERSION,
        t_final: 800.0,
        dt: 1e-3,
        decimate: 100,
        q0: [0.3, -0.2, -0.3, 0.8832],
        omega0: [0.0; 3],
        eta0: None,
        eta_dot0: None,
        q_desired: [-0.24, -0.57, -0.18, 0.77],
        spacecraft: SpacecraftFile {
            inertia: rows3(&j),
            coupling: to_rows(&delta),
            damping: to_rows(&c),
            stiffness: to_rows(&k),
            unknown_inertia_entries: Some(vec!["J11".into()]),
            parameterization: None,
        },
        disturbance: DisturbanceFile {
            axes: [
                AxisFile {
                    bias: None,
                    tones: vec![tone(1.0, 1.0, false)],
                },
                AxisFile {
                    bias: None,
                    tones: vec![tone(2.0, 0.8, false)],
                },
                AxisFile {
                    bias: None,
                    tones: vec![tone(6.0, 0.2, true)],
                },
            ],
        },
        design: DesignFile::default(),
        gains: Gains {
            k: 10.0,
            k1: 10.0,
            k2: 50.0,
            adaptation_enabled: false,
        },
        assumed: Some(AssumedFile {
            sigma: vec![0.2],
            mu: vec![20.0],
        }),
        initial_r_hat: None,
        events: vec![
            Event {
                time: 200.0,
                changes: vec![
                    Change::SetDisturbanceFrequency {
                        axis: 3,
                        tone: 1,
                        value: 1.0,
                    },
                    Change::SetInertiaParameter { index: 1, value: 22.0 },
                ],
            },
            Event {
                time: 400.0,
                changes: vec![Change::EnableAdaptation],
            },
            Event {
                time: 600.0,
                changes: vec![
                    Change::SetDisturbanceFrequency {
                        axis: 3,
                        tone: 1,
                        value: 0.2,
                    },
                    Change::SetInertiaParameter { index: 1, value: 20.0 },
                ],
            },
        ],
        analysis: Some(AnalysisFile {
            enabled: true,
            p: 1.0,
            s: 1.0,
        }),
    }
}

pub fn example_scenario() -> Scenario {
    example_scenario_file()
        .to_scenario()
        .expect("the built-in example is valid")
}
