//! Physical network description loaded from a TOML grid file.
//!
//! Quantities in the file are in kW, kWh, CNY and hours. Line resistances
//! are per-unit on `base_kw`; the loss on a line carrying `f` p.u. is
//! `r·f²` p.u.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::Path;

use serde::Deserialize;

use super::demand::DemandCurve;
use super::GridError;
use crate::stack::EnergyIpAddress;

fn default_base() -> f64 {
    1000.0
}
fn default_hours() -> f64 {
    2.0
}
fn default_periods() -> usize {
    12
}
fn default_carbon() -> f64 {
    550.0
}
fn default_eff() -> f64 {
    0.95
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GridModel {
    #[serde(default = "default_base")]
    pub base_kw: f64,
    #[serde(default = "default_hours")]
    pub period_hours: f64,
    #[serde(default = "default_periods")]
    pub periods: usize,
    #[serde(rename = "node")]
    pub nodes: Vec<Node>,
    #[serde(default, rename = "line")]
    pub lines: Vec<Line>,
    #[serde(default, rename = "plant")]
    pub plants: Vec<Plant>,
    #[serde(default, rename = "load")]
    pub loads: Vec<Load>,
    #[serde(default, rename = "renewable")]
    pub renewables: Vec<Renewable>,
    #[serde(default, rename = "storage")]
    pub storage: Vec<Storage>,
    #[serde(default, rename = "ev")]
    pub evs: Vec<Ev>,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Node {
    pub id: u32,
    #[serde(default)]
    pub name: String,
    /// Router address of the node's Energy LAN, e.g. `"10.3.0"`.
    pub eip: Option<String>,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Line {
    pub from: u32,
    pub to: u32,
    /// Resistance, p.u.
    pub r: f64,
    /// Impedance used to split flow around loops; defaults to `r`.
    pub x: Option<f64>,
    pub limit_kw: Option<f64>,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Plant {
    pub name: String,
    pub node: u32,
    /// CNY/kWh² on the hourly cost ½aP² + bP.
    pub a: f64,
    /// CNY/kWh.
    pub b: f64,
    #[serde(default)]
    pub pmin_kw: f64,
    pub pmax_kw: f64,
    #[serde(default = "default_carbon")]
    pub carbon_g_per_kwh: f64,
}

impl Plant {
    /// Hourly cost in CNY at output `p` kW.
    pub fn cost(&self, p: f64) -> f64 {
        0.5 * self.a * p * p + self.b * p
    }

    pub fn marginal_cost(&self, p: f64) -> f64 {
        self.a * p + self.b
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Load {
    pub name: String,
    pub node: u32,
    /// Baseline quantity per period, kW.
    pub p0_kw: Vec<f64>,
    /// Baseline price per period, CNY/kWh. Required for elastic loads.
    #[serde(default)]
    pub pi0: Vec<f64>,
    /// Point elasticity at the baseline; absent means inelastic.
    pub elasticity: Option<f64>,
}

impl Load {
    pub fn curve(&self, period: usize) -> Result<Option<DemandCurve>, GridError> {
        match self.elasticity {
            None => Ok(None),
            Some(e) => DemandCurve::new(self.p0_kw[period], self.pi0[period], e).map(Some),
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum RenewableKind {
    Wind,
    Solar,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Renewable {
    pub name: String,
    pub node: u32,
    pub kind: RenewableKind,
    pub available_kw: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Storage {
    pub name: String,
    pub node: u32,
    pub capacity_kwh: f64,
    pub power_kw: f64,
    #[serde(default = "default_eff")]
    pub charge_eff: f64,
    #[serde(default = "default_eff")]
    pub discharge_eff: f64,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Ev {
    pub name: String,
    pub node: u32,
    /// Energy that must be delivered over the day.
    pub energy_kwh: f64,
    pub power_kw: f64,
    /// Charging profile the vehicle follows without price signals.
    pub baseline_kw: Vec<f64>,
    /// Periods during which the vehicle is plugged in.
    pub available_periods: Vec<usize>,
}

impl GridModel {
    pub fn from_toml_str(text: &str) -> Result<Self, GridError> {
        let model: GridModel = toml::from_str(text).map_err(|e| GridError::Config(e.to_string()))?;
        model.validate()?;
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<Self, GridError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GridError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn node_index(&self, id: u32) -> Result<usize, GridError> {
        self.nodes
            .iter()
            .position(|n| n.id == id)
            .ok_or_else(|| GridError::Config(format!("unknown node {id}")))
    }

    pub fn node_eip(&self, idx: usize) -> Option<EnergyIpAddress> {
        self.nodes[idx].eip.as_deref().and_then(|s| s.parse().ok())
    }

    pub fn check_period(&self, period: usize) -> Result<(), GridError> {
        if period < self.periods {
            Ok(())
        } else {
            Err(GridError::BadPeriod(period))
        }
    }

    pub fn validate(&self) -> Result<(), GridError> {
        let cfg = |m: String| Err(GridError::Config(m));
        if !(self.base_kw > 0.0) || !(self.period_hours > 0.0) || self.periods == 0 {
            return cfg("base_kw, period_hours and periods must be positive".into());
        }
        if self.nodes.is_empty() {
            return cfg("grid has no nodes".into());
        }
        let mut ids = BTreeSet::new();
        for n in &self.nodes {
            if !ids.insert(n.id) {
                return cfg(format!("node {} defined twice", n.id));
            }
            if let Some(e) = &n.eip {
                if e.parse::<EnergyIpAddress>().is_err() {
                    return cfg(format!("node {}: bad address {e:?}", n.id));
                }
            }
        }
        for l in &self.lines {
            self.node_index(l.from)?;
            self.node_index(l.to)?;
            if l.from == l.to {
                return cfg(format!("line {}-{} is a self loop", l.from, l.to));
            }
            if l.r < 0.0 || l.x.is_some_and(|x| x < 0.0) {
                return cfg(format!("line {}-{}: negative impedance", l.from, l.to));
            }
            if l.limit_kw.is_some_and(|v| v < 0.0) {
                return cfg(format!("line {}-{}: negative limit", l.from, l.to));
            }
        }
        self.check_connected()?;
        for p in &self.plants {
            self.node_index(p.node)?;
            if !(p.a > 0.0) {
                return cfg(format!("plant {}: a must be positive", p.name));
            }
            if p.pmin_kw < 0.0 || p.pmax_kw < p.pmin_kw {
                return cfg(format!("plant {}: bad output range", p.name));
            }
        }
        for l in &self.loads {
            self.node_index(l.node)?;
            if l.p0_kw.len() != self.periods {
                return cfg(format!("load {}: p0_kw needs {} values", l.name, self.periods));
            }
            if l.p0_kw.iter().any(|v| *v < 0.0) {
                return cfg(format!("load {}: negative baseline", l.name));
            }
            if l.elasticity.is_some() {
                if l.pi0.len() != self.periods {
                    return cfg(format!("load {}: pi0 needs {} values", l.name, self.periods));
                }
                for t in 0..self.periods {
                    l.curve(t)?;
                }
            }
        }
        for r in &self.renewables {
            self.node_index(r.node)?;
            if r.available_kw.len() != self.periods || r.available_kw.iter().any(|v| *v < 0.0) {
                return cfg(format!("renewable {}: available_kw needs {} non-negative values", r.name, self.periods));
            }
        }
        for s in &self.storage {
            self.node_index(s.node)?;
            let eff_ok = |e: f64| e > 0.0 && e <= 1.0;
            if s.capacity_kwh < 0.0 || s.power_kw < 0.0 || !eff_ok(s.charge_eff) || !eff_ok(s.discharge_eff) {
                return cfg(format!("storage {}: bad parameters", s.name));
            }
        }
        for ev in &self.evs {
            self.node_index(ev.node)?;
            if ev.baseline_kw.len() != self.periods {
                return cfg(format!("ev {}: baseline_kw needs {} values", ev.name, self.periods));
            }
            if ev.available_periods.iter().any(|p| *p >= self.periods) {
                return cfg(format!("ev {}: availability outside the day", ev.name));
            }
            let reachable = ev.power_kw * self.period_hours * ev.available_periods.len() as f64;
            if reachable + 1e-9 < ev.energy_kwh {
                return cfg(format!("ev {}: cannot reach its energy target", ev.name));
            }
        }
        let mut names = BTreeMap::new();
        let all = self.plants.iter().map(|p| &p.name)
            .chain(self.loads.iter().map(|l| &l.name))
            .chain(self.renewables.iter().map(|r| &r.name))
            .chain(self.storage.iter().map(|s| &s.name))
            .chain(self.evs.iter().map(|e| &e.name));
        for n in all {
            if names.insert(n.clone(), ()).is_some() {
                return cfg(format!("resource name {n:?} used twice"));
            }
        }
        Ok(())
    }

    fn check_connected(&self) -> Result<(), GridError> {
        let n = self.nodes.len();
        let mut adj = vec![Vec::new(); n];
        for l in &self.lines {
            let (a, b) = (self.node_index(l.from)?, self.node_index(l.to)?);
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(v) = queue.pop_front() {
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    queue.push_back(w);
                }
            }
        }
        if seen.iter().all(|s| *s) {
            Ok(())
        } else {
            Err(GridError::Config("network is not connected".into()))
        }
    }

    /// Inelastic demand at a node in a period, kW.
    pub fn fixed_demand_kw(&self, node: usize, period: usize) -> f64 {
        self.loads
            .iter()
            .filter(|l| l.elasticity.is_none() && self.node_index(l.node).ok() == Some(node))
            .map(|l| l.p0_kw[period])
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_NODE: &str = r#"
        [[node]]
        id = 1
        [[node]]
        id = 2
        eip = "10.2.0"
        [[line]]
        from = 1
        to = 2
        r = 0.01
        limit_kw = 500
        [[plant]]
        name = "g"
        node = 1
        a = 0.001
        b = 0.3
        pmax_kw = 1000
    "#;

    #[test]
    fn parses_and_defaults() {
        let g = GridModel::from_toml_str(TWO_NODE).unwrap();
        assert_eq!(g.base_kw, 1000.0);
        assert_eq!(g.periods, 12);
        assert_eq!(g.plants[0].carbon_g_per_kwh, 550.0);
        assert_eq!(g.node_eip(1).unwrap().to_string(), "10.2.0");
        assert!(g.node_eip(0).is_none());
    }

    #[test]
    fn rejects_disconnected_and_nonconvex() {
        let disconnected = TWO_NODE.replace("[[line]]\n        from = 1\n        to = 2", "[[line]]\n        from = 1\n        to = 1");
        assert!(GridModel::from_toml_str(&disconnected).is_err());
        let flat = TWO_NODE.replace("a = 0.001", "a = 0.0");
        assert!(matches!(GridModel::from_toml_str(&flat), Err(GridError::Config(_))));
        let mut g = GridModel::from_toml_str(TWO_NODE).unwrap();
        g.lines.clear();
        assert!(g.validate().is_err());
    }

    #[test]
    fn rejects_positive_elasticity() {
        let text = format!(
            "{TWO_NODE}\n[[load]]\nname='l'\nnode=2\np0_kw=[1.0,1,1,1,1,1,1,1,1,1,1,1]\npi0=[1.0,1,1,1,1,1,1,1,1,1,1,1]\nelasticity=0.5\n"
        );
        assert!(matches!(GridModel::from_toml_str(&text), Err(GridError::BadElasticity(_))));
    }
}
