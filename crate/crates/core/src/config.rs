//! Experiment configuration: one TOML file plus `key=value` overrides.
//!
//! Every section is optional and defaults to the reference experiment
//! (four second-order agents, 20 s at 1 ms). Unknown keys are rejected.
//!
//! ```toml
//! [run]
//! dt = 0.001
//! horizon = 20.0
//! order = 2
//! seed = 1
//! coupling = "stage_coupled"   # or "sample_hold"
//!
//! [graph]
//! n_followers = 4
//! pinning = [2.0, 0.0, 0.0, 0.0]
//! edges = [{ i = 0, j = 1, weight = 0.5 }, { i = 1, j = 2, weight = 0.5 }]
//!
//! [design]
//! c0 = 6
//! c1 = 20.0
//! c2 = 10.0
//! c3 = 3.0
//! c_z = 1.0
//! # p_override = [[22.9454, 3.1623], [3.1623, 3.6280]]
//!
//! [schedule]
//! on_min = 0.5
//! on_max = 2.0
//! off_fraction = 0.9
//! off_duration = "fixed"       # or "uniform"
//! seed = 1
//! grid = 0.001
//!
//! [noise]
//! dim = 1
//! time_constant = 0.1
//! power = 1.0
//! correlation_time = 0.1
//! seeds = [23341, 34243, 23343, 34241]
//!
//! [controller]
//! gain = 15.0
//! rho = 1.0
//! sigma = 0.5
//! gamma = 10.0
//! rbf = { lo = -3.0, hi = 3.0, per_dim = 5 }
//!
//! [leader]
//! amplitude = 1.0
//! frequency = 0.5
//!
//! [plant]
//! model = "heterogeneous_example"      # or "integrator_chain"
//!
//! [initial]
//! x1_range = [-2.0, 2.0]
//! # x0 = [[...], ...]   per-agent initial states, overrides x1_range
//! # eta0 = [[...], ...] per-agent virtual states, default zero
//!
//! [output]
//! dir = "out"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::controller::ControllerParams;
use crate::design::DesignInputs;
use crate::error::{Error, Result};
use crate::graph::{Edge, Graph};
use crate::noise::NoiseParams;
use crate::plant::ModelKind;
use crate::schedule::ScheduleParams;
use crate::virtual_layer::SineLeader;

/// Noise seeds of the reference experiment, one per agent.
pub const REFERENCE_NOISE_SEEDS: [u64; 4] = [23341, 34243, 23343, 34241];

/// How controller, virtual layer and plant are coupled inside a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coupling {
    /// One RK4 step of the whole closed loop; ζ, u and the adaptation are
    /// re-evaluated at every stage. Mode and the held white sample stay fixed.
    #[default]
    StageCoupled,
    /// ζ, u, ξ, e and φ computed once per step and held (zero-order hold).
    SampleHold,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub dt: f64,
    pub horizon: f64,
    pub order: usize,
    pub seed: u64,
    pub coupling: Coupling,
}

impl Default for RunSection {
    fn default() -> Self {
        Self { dt: 1e-3, horizon: 20.0, order: 2, seed: 1, coupling: Coupling::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphSection {
    pub n_followers: usize,
    pub edges: Vec<Edge>,
    pub pinning: Vec<f64>,
}

impl Default for GraphSection {
    fn default() -> Self {
        let edges = [(0, 1), (1, 2), (2, 3), (3, 0)].map(|(i, j)| Edge { i, j, weight: 0.5 }).to_vec();
        Self { n_followers: 4, edges, pinning: vec![2.0, 0.0, 0.0, 0.0] }
    }
}

impl GraphSection {
    pub fn build(&self) -> Result<Graph> {
        Graph::from_edges(self.n_followers, &self.edges, &self.pinning)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DesignSection {
    pub c0: u32,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c_z: f64,
    /// Use this P instead of solving for one.
    pub p_override: Option<Vec<Vec<f64>>>,
}

impl Default for DesignSection {
    fn default() -> Self {
        let d = DesignInputs::default();
        Self { c0: d.c0, c1: d.c1, c2: d.c2, c3: d.c3, c_z: d.c_z, p_override: None }
    }
}

impl DesignSection {
    pub fn inputs(&self, n_followers: usize) -> DesignInputs {
        DesignInputs { c0: self.c0, c1: self.c1, c2: self.c2, c3: self.c3, c_z: self.c_z, n_followers }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSection {
    pub dim: usize,
    pub time_constant: f64,
    pub power: f64,
    pub correlation_time: f64,
    pub seeds: Vec<u64>,
}

impl Default for NoiseSection {
    fn default() -> Self {
        let p = NoiseParams::default();
        Self {
            dim: p.dim,
            time_constant: p.time_constant,
            power: p.power,
            correlation_time: p.correlation_time,
            seeds: REFERENCE_NOISE_SEEDS.to_vec(),
        }
    }
}

impl NoiseSection {
    pub fn params(&self) -> NoiseParams {
        NoiseParams {
            dim: self.dim,
            time_constant: self.time_constant,
            power: self.power,
            correlation_time: self.correlation_time,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantSection {
    pub model: ModelKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialSection {
    pub x1_range: [f64; 2],
    pub x0: Option<Vec<Vec<f64>>>,
    pub eta0: Option<Vec<Vec<f64>>>,
}

impl Default for InitialSection {
    fn default() -> Self {
        Self { x1_range: [-2.0, 2.0], x0: None, eta0: None }
    }
}

/// Everything a closed-loop run needs.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub run: RunSection,
    pub graph: GraphSection,
    pub design: DesignSection,
    pub schedule: ScheduleParams,
    pub noise: NoiseSection,
    pub controller: ControllerParams,
    pub leader: SineLeader,
    pub plant: PlantSection,
    pub initial: InitialSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

/// Simulation config plus output options, as read from one file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentConfig {
    pub sim: SimConfig,
    pub output: OutputSection,
}

/// Parses a `key.path=value` override; the value is read as a TOML literal,
/// falling back to a bare string.
fn parse_override(spec: &str) -> Result<(Vec<String>, toml::Value)> {
    let (key, raw) =
        spec.split_once('=').ok_or_else(|| Error::Config(format!("override `{spec}` is not of the form key=value")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(Error::Config(format!("override `{spec}` has an empty key")));
    }
    let raw = raw.trim();
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed table has key v"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    Ok((key.split('.').map(str::to_string).collect(), value))
}

fn apply_override(table: &mut toml::Table, path: &[String], value: toml::Value) -> Result<()> {
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut cur = table;
    for p in parents {
        let entry = cur.entry(p.clone()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur =
            entry.as_table_mut().ok_or_else(|| Error::Config(format!("override path crosses non-table key `{p}`")))?;
    }
    cur.insert(last.clone(), value);
    Ok(())
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            let (path, value) = parse_override(o)?;
            apply_override(&mut table, &path, value)?;
        }
        let output = match table.remove("output") {
            Some(v) => v.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?,
            None => OutputSection::default(),
        };
        let sim: SimConfig =
            toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        Ok(Self { sim, output })
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text, overrides)
    }

    /// Defaults with overrides applied.
    pub fn defaults_with(overrides: &[String]) -> Result<Self> {
        Self::from_toml_str("", overrides)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_reference_defaults() {
        let cfg = ExperimentConfig::from_toml_str("", &[]).unwrap();
        assert_eq!(cfg.sim, SimConfig::default());
        assert_eq!(cfg.sim.noise.seeds, REFERENCE_NOISE_SEEDS.to_vec());
        assert_eq!(cfg.sim.run.dt, 1e-3);
        assert_eq!(cfg.sim.controller.gain, 15.0);
        assert!((cfg.sim.graph.build().unwrap().min_eig_lb().unwrap() - 0.1981).abs() < 1e-3);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_toml_str("[run]\nbogus = 1\n", &[]).is_err());
        assert!(ExperimentConfig::from_toml_str("[nonsense]\n", &[]).is_err());
        assert!(ExperimentConfig::from_toml_str("[output]\nextra = 2\n", &[]).is_err());
    }

    #[test]
    fn overrides_apply_in_order() {
        let cfg = ExperimentConfig::from_toml_str(
            "[noise]\npower = 2.0\n",
            &["noise.power=0".into(), "run.coupling=sample_hold".into(), "design.c0=7".into()],
        )
        .unwrap();
        assert_eq!(cfg.sim.noise.power, 0.0);
        assert_eq!(cfg.sim.run.coupling, Coupling::SampleHold);
        assert_eq!(cfg.sim.design.c0, 7);
        assert!(ExperimentConfig::defaults_with(&["novalue".into()]).is_err());
    }

    #[test]
    fn full_section_round_trip() {
        let text = toml::to_string(&SimConfig::default()).unwrap();
        let back = ExperimentConfig::from_toml_str(&text, &[]).unwrap();
        assert_eq!(back.sim, SimConfig::default());
    }
}
