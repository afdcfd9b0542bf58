//! Energy Internet Cards and the participant profiles they maintain.
//!
//! Profiles change only through [`Ledger::apply_settlement`]: every settled
//! BEE appends one trade record to each side and moves energy, money, green
//! certificates and carbon rights between the two profiles. Whatever leaves
//! one profile enters the other, so all aggregates sum to zero across the
//! ledger.
//!
//! Units are chosen so every update is exact integer arithmetic:
//! Wh x mCNY/kWh is micro-CNY, Wh x basis points / 10^4 is Wh of green
//! certificate (floored, certificates are whole Wh), Wh x gCO2/kWh / 10^3 is
//! grams (floored). Floors are applied once per trade and mirrored, so
//! conservation stays exact.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use thiserror::Error;

use crate::bee::{Bee, BeeError, BeeKind, MacAddress};
use crate::stack::EnergyIpAddress;

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("MAC {0} is already registered")]
    DuplicateMac(MacAddress),
    #[error("MAC {0} is reserved and cannot identify a participant")]
    InvalidMac(MacAddress),
    #[error("unknown MAC {0}")]
    UnknownMac(MacAddress),
    #[error("sender and receiver are both {0}")]
    SelfTrade(MacAddress),
    #[error("only settle-kind BEEs update profiles, got {0}")]
    NotSettleKind(&'static str),
    #[error(transparent)]
    Bee(#[from] BeeError),
    #[error("event log line {line}: {source}")]
    Log { line: usize, source: BeeError },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TradeRole {
    Sender,
    Receiver,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TradeRecord {
    pub bee: Bee,
    pub role: TradeRole,
    pub settled_at: u64,
}

/// Green-certificate and carbon-right holdings. Read-only outside this module.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CertificateInventory {
    green_certificates_wh: i64,
    carbon_rights_g: i64,
}

impl CertificateInventory {
    pub fn green_certificates_wh(&self) -> i64 {
        self.green_certificates_wh
    }

    pub fn carbon_rights_g(&self) -> i64 {
        self.carbon_rights_g
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserProfile {
    mac: MacAddress,
    current_eip: Option<EnergyIpAddress>,
    display_name: String,
    trades: Vec<TradeRecord>,
    net_energy_wh: i64,
    net_payment_ucny: i64,
    inventory: CertificateInventory,
}

impl UserProfile {
    fn new(mac: MacAddress, display_name: String) -> Self {
        UserProfile {
            mac,
            current_eip: None,
            display_name,
            trades: Vec::new(),
            net_energy_wh: 0,
            net_payment_ucny: 0,
            inventory: CertificateInventory::default(),
        }
    }

    pub fn mac(&self) -> MacAddress {
        self.mac
    }

    pub fn current_eip(&self) -> Option<EnergyIpAddress> {
        self.current_eip
    }

    pub fn display_name(&self) -> &str {
        &self.display_name
    }

    pub fn trades(&self) -> &[TradeRecord] {
        &self.trades
    }

    /// Energy received minus energy sent.
    pub fn net_energy_wh(&self) -> i64 {
        self.net_energy_wh
    }

    /// Money received minus money paid, micro-CNY.
    pub fn net_payment_ucny(&self) -> i64 {
        self.net_payment_ucny
    }

    pub fn net_payment_mcny(&self) -> f64 {
        self.net_payment_ucny as f64 / 1000.0
    }

    pub fn inventory(&self) -> CertificateInventory {
        self.inventory
    }

    /// Energy routed through the network on behalf of this participant, Wh.
    pub fn routed_wh(&self) -> u64 {
        self.trades.iter().map(|t| u64::from(t.bee.quantity_wh)).sum()
    }
}

/// Per-trade transfer amounts, in ledger units.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SettlementAmounts {
    pub energy_wh: i64,
    pub payment_ucny: i64,
    pub green_wh: i64,
    pub carbon_g: i64,
}

impl SettlementAmounts {
    pub fn of(bee: &Bee) -> Self {
        let q = i64::from(bee.quantity_wh);
        SettlementAmounts {
            energy_wh: q,
            payment_ucny: q * i64::from(bee.price_mcny_per_kwh),
            green_wh: q * i64::from(bee.green_fraction_bp) / 10_000,
            carbon_g: q * i64::from(bee.carbon_intensity_g_per_kwh) / 1_000,
        }
    }
}

/// In-memory profile store with an append-only log of settled BEEs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Ledger {
    profiles: BTreeMap<MacAddress, UserProfile>,
    log: Vec<Bee>,
}

impl Ledger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register_card(&mut self, mac: MacAddress, name: &str) -> Result<UserProfile, LedgerError> {
        if !mac.is_valid() {
            return Err(LedgerError::InvalidMac(mac));
        }
        if self.profiles.contains_key(&mac) {
            return Err(LedgerError::DuplicateMac(mac));
        }
        let profile = UserProfile::new(mac, name.to_string());
        self.profiles.insert(mac, profile.clone());
        Ok(profile)
    }

    pub fn is_registered(&self, mac: &MacAddress) -> bool {
        self.profiles.contains_key(mac)
    }

    /// Applies one settled BEE to both parties and returns their updated
    /// snapshots as `(sender, receiver)`.
    pub fn apply_settlement(&mut self, bee: &Bee) -> Result<(UserProfile, UserProfile), LedgerError> {
        if bee.kind != BeeKind::Settle {
            return Err(LedgerError::NotSettleKind(bee.kind.name()));
        }
        bee.validate()?;
        if bee.sender == bee.receiver {
            return Err(LedgerError::SelfTrade(bee.sender));
        }
        for mac in [bee.sender, bee.receiver] {
            if !self.profiles.contains_key(&mac) {
                return Err(LedgerError::UnknownMac(mac));
            }
        }

        let amounts = SettlementAmounts::of(bee);
        let settled_at = u64::from(bee.delivery_start);

        let sender = self.profiles.get_mut(&bee.sender).expect("checked above");
        sender.trades.push(TradeRecord { bee: *bee, role: TradeRole::Sender, settled_at });
        sender.net_energy_wh -= amounts.energy_wh;
        sender.net_payment_ucny += amounts.payment_ucny;
        sender.inventory.green_certificates_wh -= amounts.green_wh;
        sender.inventory.carbon_rights_g += amounts.carbon_g;
        let sender = sender.clone();

        let receiver = self.profiles.get_mut(&bee.receiver).expect("checked above");
        receiver.trades.push(TradeRecord { bee: *bee, role: TradeRole::Receiver, settled_at });
        receiver.net_energy_wh += amounts.energy_wh;
        receiver.net_payment_ucny -= amounts.payment_ucny;
        receiver.inventory.green_certificates_wh += amounts.green_wh;
        receiver.inventory.carbon_rights_g -= amounts.carbon_g;
        let receiver = receiver.clone();

        self.log.push(*bee);
        Ok((sender, receiver))
    }

    pub fn query_profile(&self, mac: &MacAddress) -> Result<UserProfile, LedgerError> {
        self.profiles.get(mac).cloned().ok_or(LedgerError::UnknownMac(*mac))
    }

    pub fn profiles(&self) -> impl Iterator<Item = &UserProfile> {
        self.profiles.values()
    }

    /// Records where a card is currently attached. Profiles follow the
    /// resource when it re-homes to another LAN.
    pub fn set_current_eip(&mut self, mac: &MacAddress, eip: Option<EnergyIpAddress>) -> Result<(), LedgerError> {
        let profile = self.profiles.get_mut(mac).ok_or(LedgerError::UnknownMac(*mac))?;
        profile.current_eip = eip;
        Ok(())
    }

    /// Every settled BEE in application order.
    pub fn settled(&self) -> &[Bee] {
        &self.log
    }

    pub fn settled_wh(&self) -> u64 {
        self.log.iter().map(|b| u64::from(b.quantity_wh)).sum()
    }

    /// Writes the event log: one settled BEE per line as lowercase hex.
    pub fn write_log<W: Write>(&self, mut out: W) -> Result<(), LedgerError> {
        for bee in &self.log {
            writeln!(out, "{}", bee.to_hex()?)?;
        }
        Ok(())
    }

    pub fn save_log(&self, path: &Path) -> Result<(), LedgerError> {
        let file = std::fs::File::create(path)?;
        let mut out = std::io::BufWriter::new(file);
        self.write_log(&mut out)?;
        out.flush()?;
        Ok(())
    }

    /// Replays an event log into this ledger. Cards that appear in the log
    /// but are not registered yet are registered under their MAC string.
    pub fn replay<R: BufRead>(&mut self, input: R) -> Result<usize, LedgerError> {
        let mut applied = 0;
        for (idx, line) in input.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let bee = Bee::from_hex(line).map_err(|source| LedgerError::Log { line: idx + 1, source })?;
            for mac in [bee.sender, bee.receiver] {
                if !self.is_registered(&mac) {
                    self.register_card(mac, &mac.to_string())?;
                }
            }
            self.apply_settlement(&bee)?;
            applied += 1;
        }
        Ok(applied)
    }

    pub fn load_log(path: &Path) -> Result<Ledger, LedgerError> {
        let file = std::fs::File::open(path)?;
        let mut ledger = Ledger::new();
        ledger.replay(std::io::BufReader::new(file))?;
        Ok(ledger)
    }

    pub fn total_net_energy_wh(&self) -> i64 {
        self.profiles.values().map(|p| p.net_energy_wh).sum()
    }

    pub fn total_net_payment_ucny(&self) -> i64 {
        self.profiles.values().map(|p| p.net_payment_ucny).sum()
    }

    pub fn total_green_wh(&self) -> i64 {
        self.profiles.values().map(|p| p.inventory.green_certificates_wh).sum()
    }

    pub fn total_carbon_g(&self) -> i64 {
        self.profiles.values().map(|p| p.inventory.carbon_rights_g).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn settle(q: u32, price: u32, green: u16, from: MacAddress, to: MacAddress) -> Bee {
        let mut b = Bee::electricity(BeeKind::Settle, q, 1_000, 60, price, from, to);
        b.green_fraction_bp = green;
        b
    }

    fn two_party() -> (Ledger, MacAddress, MacAddress) {
        let mut l = Ledger::new();
        let a = MacAddress::local(1);
        let b = MacAddress::local(2);
        l.register_card(a, "seller").unwrap();
        l.register_card(b, "buyer").unwrap();
        (l, a, b)
    }

    #[test]
    fn fresh_card_has_zero_aggregates() {
        let mut l = Ledger::new();
        let p = l.register_card(MacAddress::local(7), "ev-7").unwrap();
        assert_eq!(p.net_energy_wh(), 0);
        assert_eq!(p.net_payment_ucny(), 0);
        assert!(p.trades().is_empty());
        assert_eq!(p.inventory(), CertificateInventory::default());
        assert_eq!(p.display_name(), "ev-7");
    }

    #[test]
    fn duplicate_and_zero_mac_rejected() {
        let mut l = Ledger::new();
        l.register_card(MacAddress::local(1), "a").unwrap();
        assert!(matches!(l.register_card(MacAddress::local(1), "b"), Err(LedgerError::DuplicateMac(_))));
        assert!(matches!(l.register_card(MacAddress::ZERO, "z"), Err(LedgerError::InvalidMac(_))));
    }

    #[test]
    fn settlement_moves_energy_money_and_certificates() {
        let (mut l, a, b) = two_party();
        let bee = settle(1000, 500, 10_000, a, b);
        // independent arithmetic: 1000 Wh x 500 mCNY/kWh = 1 kWh x 0.5 CNY = 500 mCNY
        let expected_payment_mcny = (1000.0 / 1000.0) * 500.0;
        let expected_green = 1000.0 * (10_000.0 / 10_000.0);
        let (s, r) = l.apply_settlement(&bee).unwrap();
        assert_eq!(r.net_energy_wh(), 1000);
        assert_eq!(s.net_energy_wh(), -1000);
        assert_eq!(r.net_payment_mcny(), -expected_payment_mcny);
        assert_eq!(s.net_payment_mcny(), expected_payment_mcny);
        assert_eq!(r.inventory().green_certificates_wh() as f64, expected_green);
        assert_eq!(s.inventory().green_certificates_wh() as f64, -expected_green);
        assert_eq!(r.trades()[0].role, TradeRole::Receiver);
        assert_eq!(s.trades()[0].role, TradeRole::Sender);
    }

    #[test]
    fn carbon_burden_moves_to_receiver() {
        let (mut l, a, b) = two_party();
        let mut bee = settle(2000, 400, 0, a, b);
        bee.carbon_intensity_g_per_kwh = 550;
        let (s, r) = l.apply_settlement(&bee).unwrap();
        assert_eq!(r.inventory().carbon_rights_g(), -1100);
        assert_eq!(s.inventory().carbon_rights_g(), 1100);
    }

    #[test]
    fn zero_green_fraction_leaves_green_untouched() {
        let (mut l, a, b) = two_party();
        let (s, r) = l.apply_settlement(&settle(1000, 500, 0, a, b)).unwrap();
        assert_eq!(s.inventory().green_certificates_wh(), 0);
        assert_eq!(r.inventory().green_certificates_wh(), 0);
    }

    #[test]
    fn rejects_bad_settlements() {
        let (mut l, a, b) = two_party();
        assert!(matches!(l.apply_settlement(&settle(10, 1, 0, a, a)), Err(LedgerError::SelfTrade(_))));
        let stranger = MacAddress::local(99);
        assert!(matches!(
            l.apply_settlement(&settle(10, 1, 0, a, stranger)),
            Err(LedgerError::UnknownMac(m)) if m == stranger
        ));
        let mut offer = settle(10, 1, 0, a, b);
        offer.kind = BeeKind::Offer;
        assert!(matches!(l.apply_settlement(&offer), Err(LedgerError::NotSettleKind("offer"))));
        assert!(l.settled().is_empty());
        assert!(l.query_profile(&a).unwrap().trades().is_empty());
    }

    #[test]
    fn snapshots_are_frozen() {
        let (mut l, a, b) = two_party();
        l.apply_settlement(&settle(10, 1, 0, a, b)).unwrap();
        let snap = l.query_profile(&a).unwrap();
        l.apply_settlement(&settle(20, 1, 0, a, b)).unwrap();
        assert_eq!(snap.trades().len(), 1);
        assert_eq!(l.query_profile(&a).unwrap().trades().len(), 2);
        assert!(matches!(l.query_profile(&MacAddress::local(42)), Err(LedgerError::UnknownMac(_))));
    }

    #[test]
    fn event_log_replays_to_identical_profiles() {
        let (mut l, a, b) = two_party();
        l.apply_settlement(&settle(1500, 320, 2500, a, b)).unwrap();
        l.apply_settlement(&settle(700, 610, 10_000, b, a)).unwrap();
        let mut buf = Vec::new();
        l.write_log(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.lines().all(|line| line.len() == 96 && line == line.to_lowercase()));

        let (mut fresh, _, _) = two_party();
        assert_eq!(fresh.replay(buf.as_slice()).unwrap(), 2);
        assert_eq!(fresh, l);
    }

    #[test]
    fn replay_rejects_corrupt_line() {
        let (mut l, a, b) = two_party();
        l.apply_settlement(&settle(1500, 320, 0, a, b)).unwrap();
        let mut buf = Vec::new();
        l.write_log(&mut buf).unwrap();
        buf[10] = if buf[10] == b'0' { b'1' } else { b'0' };
        let mut fresh = Ledger::new();
        assert!(matches!(fresh.replay(buf.as_slice()), Err(LedgerError::Log { line: 1, .. })));
    }

    proptest! {
        #[test]
        fn conservation_and_append_only(
            ops in proptest::collection::vec((0usize..5, 0usize..5, 1u32..2_000_000, 0u32..3_000, 0u16..=10_000, 0u16..1_000), 0..120)
        ) {
            let mut l = Ledger::new();
            let macs: Vec<MacAddress> = (1..=5).map(MacAddress::local).collect();
            for (i, m) in macs.iter().enumerate() {
                l.register_card(*m, &format!("p{i}")).unwrap();
            }
            let mut prefixes: Vec<Vec<TradeRecord>> = vec![Vec::new(); macs.len()];
            for (s, r, q, p, g, c) in ops {
                let mut bee = settle(q, p, g, macs[s], macs[r]);
                bee.carbon_intensity_g_per_kwh = c;
                let _ = l.apply_settlement(&bee);
                for (i, m) in macs.iter().enumerate() {
                    let now = l.query_profile(m).unwrap().trades().to_vec();
                    prop_assert!(now.starts_with(&prefixes[i]));
                    prefixes[i] = now;
                }
                prop_assert_eq!(l.total_net_energy_wh(), 0);
                prop_assert_eq!(l.total_net_payment_ucny(), 0);
                prop_assert_eq!(l.total_green_wh(), 0);
                prop_assert_eq!(l.total_carbon_g(), 0);
            }
            for m in &macs {
                let p = l.query_profile(m).unwrap();
                let energy: i64 = p.trades().iter().map(|t| match t.role {
                    TradeRole::Receiver => i64::from(t.bee.quantity_wh),
                    TradeRole::Sender => -i64::from(t.bee.quantity_wh),
                }).sum();
                prop_assert_eq!(energy, p.net_energy_wh());
            }
        }
    }
}
