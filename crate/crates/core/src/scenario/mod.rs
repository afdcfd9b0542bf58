//! End-to-end runs comparing centralized dispatch with peer trading over
//! one day.
//!
//! A scenario file names a grid file, a topology file, a roster of
//! resources and the trading strategy parameters:
//!
//! ```toml
//! name = "demo"
//! seed = 7
//! grid = "grid.toml"
//! topology = "topology.toml"
//!
//! [strategy]
//! renewable_floor = 0.2
//!
//! [[resource]]
//! name = "rural-wind"
//! kind = "wind"
//! ```
//!
//! Paths are relative to the scenario file.

mod report;
mod runner;
mod strategy;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::bee::MacAddress;
use crate::grid::model::RenewableKind;
use crate::grid::{GridError, GridModel};
use crate::matching::MatchError;
use crate::profile::LedgerError;
use crate::stack::topology::TopologyConfig;
use crate::stack::StackError;

pub use report::{emit_report, fixed, write_summary, REPORT_FILES};
pub use runner::{run_mode, run_scenario, Mode, ModeReport, PeriodRecord, ScenarioReport};
pub use strategy::{PeriodContext, RuleBased, Strategy};

/// Periods in a scenario day.
pub const PERIODS: usize = 12;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Stack(#[from] StackError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Match(#[from] MatchError),
    #[error("reconciliation failed: {0}")]
    Reconciliation(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq, PartialOrd, Ord)]
#[serde(rename_all = "kebab-case")]
pub enum ResourceKind {
    Plant,
    Wind,
    Solar,
    Battery,
    Ev,
    UrbanLoad,
    RuralLoad,
    Load,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RosterEntry {
    pub name: String,
    pub kind: ResourceKind,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct StrategyConfig {
    /// Lowest price a renewable asks, CNY/kWh.
    #[serde(default = "default_floor")]
    pub renewable_floor: f64,
    /// State-of-charge grid used by the storage scheduler.
    #[serde(default = "default_levels")]
    pub storage_levels: usize,
}

fn default_floor() -> f64 {
    0.2
}
fn default_levels() -> usize {
    60
}
fn default_day_start() -> u32 {
    1_767_225_600
}

impl Default for StrategyConfig {
    fn default() -> Self {
        StrategyConfig { renewable_floor: default_floor(), storage_levels: default_levels() }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    name: String,
    #[serde(default)]
    seed: u64,
    grid: PathBuf,
    topology: PathBuf,
    #[serde(default = "default_day_start")]
    day_start: u32,
    #[serde(default)]
    strategy: StrategyConfig,
    #[serde(default, rename = "resource")]
    roster: Vec<RosterEntry>,
}

/// A fully loaded and cross-checked scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    /// Epoch seconds at the start of period 0.
    pub day_start: u32,
    pub grid: GridModel,
    pub topology: TopologyConfig,
    pub roster: Vec<RosterEntry>,
    pub strategy: StrategyConfig,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Scenario, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ScenarioError::Io { path: path.to_path_buf(), source })?;
        let file: ScenarioFile =
            toml::from_str(&text).map_err(|e| ScenarioError::Config(format!("{}: {e}", path.display())))?;
        let dir = path.parent().unwrap_or(Path::new("."));
        let grid_path = dir.join(&file.grid);
        let topo_path = dir.join(&file.topology);
        if !grid_path.exists() {
            return Err(ScenarioError::Io {
                path: grid_path,
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "grid file not found"),
            });
        }
        let grid = GridModel::load(&grid_path)?;
        let topology = TopologyConfig::load(&topo_path)?;
        let scenario = Scenario {
            name: file.name,
            seed: file.seed,
            day_start: file.day_start,
            grid,
            topology,
            roster: file.roster,
            strategy: file.strategy,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let cfg = |m: String| Err(ScenarioError::Config(m));
        if self.grid.periods != PERIODS {
            return cfg(format!("a scenario day has {PERIODS} periods, grid has {}", self.grid.periods));
        }
        let seconds = self.grid.period_hours * 3600.0;
        if seconds.fract() != 0.0 || seconds * PERIODS as f64 + f64::from(self.day_start) > f64::from(u32::MAX) {
            return cfg("period length must be a whole number of seconds within the BEE time range".into());
        }
        let hosts: BTreeMap<&str, MacAddress> =
            self.topology.hosts.iter().map(|h| (h.name.as_str(), h.mac)).collect();
        let g = &self.grid;
        for r in &self.roster {
            let found = match r.kind {
                ResourceKind::Plant => g.plants.iter().any(|p| p.name == r.name),
                ResourceKind::Wind => g.renewables.iter().any(|x| x.name == r.name && x.kind == RenewableKind::Wind),
                ResourceKind::Solar => g.renewables.iter().any(|x| x.name == r.name && x.kind == RenewableKind::Solar),
                ResourceKind::Battery => g.storage.iter().any(|x| x.name == r.name),
                ResourceKind::Ev => g.evs.iter().any(|x| x.name == r.name),
                ResourceKind::UrbanLoad | ResourceKind::RuralLoad | ResourceKind::Load => {
                    g.loads.iter().any(|x| x.name == r.name)
                }
            };
            if !found {
                return cfg(format!("roster entry {:?} ({:?}) has no matching grid resource", r.name, r.kind));
            }
            if r.kind != ResourceKind::Plant && !hosts.contains_key(r.name.as_str()) {
                return cfg(format!("roster entry {:?} has no topology host", r.name));
            }
        }
        let listed = |name: &str| self.roster.iter().any(|r| r.name == name);
        let all = g.loads.iter().map(|x| &x.name)
            .chain(g.renewables.iter().map(|x| &x.name))
            .chain(g.storage.iter().map(|x| &x.name))
            .chain(g.evs.iter().map(|x| &x.name));
        for name in all {
            if !listed(name) {
                return cfg(format!("grid resource {name:?} is missing from the roster"));
            }
        }
        Ok(())
    }

    pub(crate) fn mac_of(&self, name: &str) -> Option<MacAddress> {
        self.topology.hosts.iter().find(|h| h.name == name).map(|h| h.mac)
    }

    pub(crate) fn lan_of(&self, name: &str) -> Option<&str> {
        self.topology.hosts.iter().find(|h| h.name == name).map(|h| h.lan.as_str())
    }
}
