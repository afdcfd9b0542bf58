//! Topology files: LANs, optional static routes, and attached hosts.
//!
//! ```toml
//! limit_scope = "wan-only"   # or "all" (default)
//! default_ttl = 16
//!
//! [[lan]]
//! name = "urban"
//! wan = 10
//! subnet = 3
//!
//! [[host]]
//! name = "urban-solar"
//! mac = "02:00:00:00:00:31"
//! lan = "urban"
//! static_limit_kwh = 400     # optional
//! ```
//!
//! Without any `[[route]]` table every router gets a direct route to every
//! other LAN.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use super::{EnergyIpAddress, LanId, LimitScope, Stack, StackConfig, StackError};
use crate::bee::MacAddress;
use crate::profile::Ledger;

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TopologyConfig {
    #[serde(default)]
    pub limit_scope: ScopeName,
    #[serde(default = "default_ttl")]
    pub default_ttl: u8,
    #[serde(default, rename = "lan")]
    pub lans: Vec<LanConfig>,
    #[serde(default, rename = "route")]
    pub routes: Vec<RouteConfig>,
    #[serde(default, rename = "host")]
    pub hosts: Vec<HostConfig>,
}

fn default_ttl() -> u8 {
    16
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ScopeName {
    #[default]
    All,
    WanOnly,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct LanConfig {
    pub name: String,
    pub wan: u8,
    pub subnet: u16,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RouteConfig {
    /// LAN whose router gets the route.
    pub lan: String,
    /// Destination prefix written as an address, e.g. `"10.4.0"`.
    pub prefix: String,
    pub len: u8,
    /// Next-hop LAN.
    pub via: String,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct HostConfig {
    pub name: String,
    pub mac: MacAddress,
    pub lan: String,
    pub static_limit_kwh: Option<u16>,
    pub dynamic_limit_kwh: Option<u16>,
}

impl TopologyConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, StackError> {
        toml::from_str(text).map_err(|e| StackError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, StackError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| StackError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn lan_id(&self, name: &str) -> Result<LanId, StackError> {
        self.lans
            .iter()
            .find(|l| l.name == name)
            .map(|l| LanId { wan: l.wan, subnet: l.subnet })
            .ok_or_else(|| StackError::Config(format!("unknown LAN name {name:?}")))
    }

    pub fn stack_config(&self, seed: u64) -> StackConfig {
        StackConfig {
            default_ttl: self.default_ttl,
            limit_scope: match self.limit_scope {
                ScopeName::All => LimitScope::AllExchanges,
                ScopeName::WanOnly => LimitScope::WanOnly,
            },
            seed,
            ..StackConfig::default()
        }
    }

    /// Builds the network, registering any card the ledger does not know yet.
    pub fn build(&self, seed: u64, ledger: &mut Ledger) -> Result<Stack, StackError> {
        let mut stack = Stack::new(self.stack_config(seed));
        let mut seen = BTreeMap::new();
        for l in &self.lans {
            if seen.insert(l.name.clone(), ()).is_some() {
                return Err(StackError::Config(format!("LAN name {:?} used twice", l.name)));
            }
            if l.subnet > super::addr::MAX_SUBNET {
                return Err(StackError::Config(format!("subnet {} out of range", l.subnet)));
            }
            stack.add_lan(LanId { wan: l.wan, subnet: l.subnet })?;
        }
        if self.routes.is_empty() {
            stack.mesh_routes();
        }
        for r in &self.routes {
            let prefix: EnergyIpAddress = r.prefix.parse().map_err(StackError::Config)?;
            stack.add_route(self.lan_id(&r.lan)?, prefix.0, r.len, self.lan_id(&r.via)?)?;
        }
        for h in &self.hosts {
            if !ledger.is_registered(&h.mac) {
                ledger
                    .register_card(h.mac, &h.name)
                    .map_err(|e| StackError::Config(format!("host {:?}: {e}", h.name)))?;
            }
            let eip = stack.register_host(&h.name, h.mac, self.lan_id(&h.lan)?, ledger)?;
            if let Some(kwh) = h.static_limit_kwh {
                stack.set_static_limit(eip, kwh)?;
            }
            if let Some(kwh) = h.dynamic_limit_kwh {
                stack.update_dynamic_limit(eip, kwh)?;
            }
        }
        Ok(stack)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
        limit_scope = "wan-only"

        [[lan]]
        name = "a"
        wan = 10
        subnet = 1

        [[lan]]
        name = "b"
        wan = 10
        subnet = 2

        [[host]]
        name = "pv"
        mac = "02:00:00:00:00:01"
        lan = "a"
        static_limit_kwh = 40

        [[host]]
        name = "load"
        mac = "02-00-00-00-00-02"
        lan = "b"
    "#;

    #[test]
    fn builds_meshed_network() {
        let cfg = TopologyConfig::from_toml_str(SAMPLE).unwrap();
        assert_eq!(cfg.limit_scope, ScopeName::WanOnly);
        let mut ledger = Ledger::new();
        let mut stack = cfg.build(1, &mut ledger).unwrap();
        let pv = stack.resolve_name("pv").unwrap();
        let load = stack.resolve_name("load").unwrap();
        assert_eq!(pv.to_string(), "10.1.1");
        assert_eq!(stack.static_limit_wh(&pv), Some(40_000));
        assert_eq!(ledger.profiles().count(), 2);
        let c = stack.open_connection(pv, load).unwrap();
        assert_eq!(stack.connection(c).unwrap().state, super::super::ConnState::Established);
    }

    #[test]
    fn explicit_routes_replace_mesh() {
        let text = format!("{SAMPLE}\n[[route]]\nlan = \"a\"\nprefix = \"10.2.0\"\nlen = 20\nvia = \"b\"\n");
        let cfg = TopologyConfig::from_toml_str(&text).unwrap();
        let mut ledger = Ledger::new();
        let mut stack = cfg.build(1, &mut ledger).unwrap();
        let (pv, load) = (stack.resolve_name("pv").unwrap(), stack.resolve_name("load").unwrap());
        assert!(stack.open_connection(pv, load).is_err(), "no return route from b");
    }

    #[test]
    fn rejects_unknown_fields_and_lans() {
        assert!(TopologyConfig::from_toml_str("bogus = 1").is_err());
        let cfg = TopologyConfig::from_toml_str("[[host]]\nname='x'\nmac='02:00:00:00:00:09'\nlan='nowhere'").unwrap();
        assert!(cfg.build(0, &mut Ledger::new()).is_err());
    }
}
