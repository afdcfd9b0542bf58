use std::collections::BTreeMap;

use super::addr::{EnergyIpAddress, LanId, LAN_PREFIX_LEN, MAX_HOST};
use super::StackError;
use crate::bee::MacAddress;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Route {
    pub prefix: u32,
    pub len: u8,
    pub next_hop: EnergyIpAddress,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NextHop {
    /// Destination is inside this router's LAN.
    Local,
    Router(EnergyIpAddress),
}

/// An Energy LAN router, operated by the LAN's virtual power plant.
#[derive(Debug, Clone)]
pub struct Router {
    lan: LanId,
    routes: Vec<Route>,
    members: BTreeMap<MacAddress, EnergyIpAddress>,
    hosts: BTreeMap<EnergyIpAddress, MacAddress>,
    static_limits_wh: BTreeMap<EnergyIpAddress, u64>,
    period_usage_wh: BTreeMap<EnergyIpAddress, u64>,
}

impl Router {
    pub fn new(lan: LanId) -> Self {
        Router {
            lan,
            routes: Vec::new(),
            members: BTreeMap::new(),
            hosts: BTreeMap::new(),
            static_limits_wh: BTreeMap::new(),
            period_usage_wh: BTreeMap::new(),
        }
    }

    pub fn lan(&self) -> LanId {
        self.lan
    }

    pub fn eip(&self) -> EnergyIpAddress {
        self.lan.router_eip()
    }

    pub fn mac(&self) -> MacAddress {
        router_mac(self.lan)
    }

    pub fn add_route(&mut self, prefix: u32, len: u8, next_hop: EnergyIpAddress) {
        self.routes.push(Route { prefix, len, next_hop });
    }

    pub fn routes(&self) -> &[Route] {
        &self.routes
    }

    /// Longest-prefix match. The attached LAN always wins; among equal
    /// lengths the route added first wins.
    pub fn lookup(&self, dst: EnergyIpAddress) -> Option<NextHop> {
        if self.lan.contains(dst) {
            return Some(NextHop::Local);
        }
        let mut best: Option<&Route> = None;
        for r in self.routes.iter().filter(|r| dst.matches(r.prefix, r.len)) {
            if best.is_none_or(|b| r.len > b.len) {
                best = Some(r);
            }
        }
        best.map(|r| NextHop::Router(r.next_hop))
    }

    /// Binds `mac` to the lowest free host number. Re-binding an attached
    /// MAC returns its existing address.
    pub fn bind(&mut self, mac: MacAddress) -> Result<EnergyIpAddress, StackError> {
        if let Some(eip) = self.members.get(&mac) {
            return Ok(*eip);
        }
        let host = (1..=MAX_HOST)
            .find(|h| !self.hosts.contains_key(&EnergyIpAddress::new(self.lan.wan, self.lan.subnet, *h)))
            .ok_or(StackError::SubnetFull(self.lan))?;
        let eip = EnergyIpAddress::new(self.lan.wan, self.lan.subnet, host);
        self.members.insert(mac, eip);
        self.hosts.insert(eip, mac);
        Ok(eip)
    }

    pub fn has_capacity(&self) -> bool {
        self.hosts.len() < usize::from(MAX_HOST)
    }

    pub fn release(&mut self, mac: &MacAddress) -> Option<EnergyIpAddress> {
        let eip = self.members.remove(mac)?;
        self.hosts.remove(&eip);
        self.static_limits_wh.remove(&eip);
        self.period_usage_wh.remove(&eip);
        Some(eip)
    }

    pub fn host_eip(&self, mac: &MacAddress) -> Option<EnergyIpAddress> {
        self.members.get(mac).copied()
    }

    pub fn host_mac(&self, eip: &EnergyIpAddress) -> Option<MacAddress> {
        self.hosts.get(eip).copied()
    }

    pub fn members(&self) -> impl Iterator<Item = (&MacAddress, &EnergyIpAddress)> {
        self.members.iter()
    }

    pub fn set_static_limit_wh(&mut self, eip: EnergyIpAddress, wh: u64) {
        self.static_limits_wh.insert(eip, wh);
    }

    pub fn static_limit_wh(&self, eip: &EnergyIpAddress) -> Option<u64> {
        self.static_limits_wh.get(eip).copied()
    }

    pub fn period_usage_wh(&self, eip: &EnergyIpAddress) -> u64 {
        self.period_usage_wh.get(eip).copied().unwrap_or(0)
    }

    /// Charges `wh` against the source's per-period static limit.
    pub(crate) fn charge_static(&mut self, eip: EnergyIpAddress, wh: u64) -> Result<(), StackError> {
        let used = self.period_usage_wh(&eip);
        if let Some(limit) = self.static_limit_wh(&eip) {
            if used + wh > limit {
                return Err(StackError::StaticLimitExceeded {
                    eip,
                    requested_wh: wh,
                    remaining_wh: limit.saturating_sub(used),
                });
            }
        }
        self.period_usage_wh.insert(eip, used + wh);
        Ok(())
    }

    pub(crate) fn refund_static(&mut self, eip: EnergyIpAddress, wh: u64) {
        if let Some(u) = self.period_usage_wh.get_mut(&eip) {
            *u = u.saturating_sub(wh);
        }
    }

    pub fn reset_period(&mut self) {
        self.period_usage_wh.clear();
    }
}

/// Router MAC derived from its LAN so every router has a stable address.
pub fn router_mac(lan: LanId) -> MacAddress {
    let s = lan.subnet.to_be_bytes();
    MacAddress([0x02, 0xEE, lan.wan, s[0], s[1], 0x00])
}

pub fn lan_route(lan: LanId) -> (u32, u8) {
    (lan.prefix(), LAN_PREFIX_LEN)
}
