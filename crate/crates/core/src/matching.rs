//! The BEE pool: resting offers and requests, best-match search with
//! partial fills, and settlement of fills through the stack and ledger.
//!
//! Matching is price priority then arrival order. A request takes the
//! cheapest compatible offers first; an offer serves the highest compatible
//! bids first. Every fill clears at the offer's ask. Whatever an incoming
//! order cannot fill rests in the pool.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use thiserror::Error;

use crate::bee::{Bee, BeeError, BeeKind, Carrier};
use crate::profile::{Ledger, LedgerError};
use crate::stack::{Stack, StackError};

/// Shortest settled delivery window: one minute, the BEE's duration unit.
pub const MIN_OVERLAP_SECS: u64 = 60;

#[derive(Debug, Error)]
pub enum MatchError {
    #[error(transparent)]
    InvariantViolation(#[from] BeeError),
    #[error("only offers and requests can be pooled, got {0}")]
    IncompatibleKind(&'static str),
    #[error("pool file line {line}: {message}")]
    Csv { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum SettleError {
    #[error(transparent)]
    Stack(#[from] StackError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolEntry {
    pub bee: Bee,
    pub remaining_wh: u32,
    pub arrival_seq: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fill {
    /// Offer side as it stood before this fill.
    pub offer: PoolEntry,
    /// Request side as it stood before this fill.
    pub request: PoolEntry,
    pub matched_wh: u32,
    pub clearing_price_mcny_per_kwh: u32,
}

impl Fill {
    /// Intersection of the two delivery windows, `(start, minutes)`.
    pub fn window(&self) -> (u32, u16) {
        let (start, end) = overlap(&self.offer.bee, &self.request.bee);
        (start as u32, ((end - start) / 60) as u16)
    }

    /// The settle-kind BEE this fill turns into: seller to buyer, carrying
    /// the offer's carbon intensity and green fraction.
    pub fn settle_bee(&self) -> Bee {
        let (start, minutes) = self.window();
        Bee {
            kind: BeeKind::Settle,
            quantity_wh: self.matched_wh,
            delivery_start: start,
            delivery_duration_min: minutes,
            price_mcny_per_kwh: self.clearing_price_mcny_per_kwh,
            sender: self.offer.bee.sender,
            receiver: self.request.bee.sender,
            ..self.offer.bee
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchResult {
    pub incoming: PoolEntry,
    pub fills: Vec<Fill>,
    pub residual: Option<PoolEntry>,
}

impl MatchResult {
    pub fn matched_wh(&self) -> u64 {
        self.fills.iter().map(|f| u64::from(f.matched_wh)).sum()
    }

    /// Buyer cost of all fills in micro-CNY.
    pub fn cost_ucny(&self) -> u64 {
        self.fills.iter().map(|f| u64::from(f.matched_wh) * u64::from(f.clearing_price_mcny_per_kwh)).sum()
    }
}

/// Extra admission rule applied on top of carrier, window and price.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MatchFilter {
    #[default]
    Any,
    /// An offer may serve a request only if its green fraction is at least
    /// the one the request states.
    GreenAtLeastRequested,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BrowseFilter {
    pub carrier: Carrier,
    pub window_start: u64,
    pub window_end: u64,
}

/// Outcome of settling one match result.
#[derive(Debug, Default)]
pub struct Settlement {
    pub settled: Vec<Bee>,
    pub failed: Vec<(Fill, SettleError)>,
}

#[derive(Debug, Clone, Default)]
pub struct Pool {
    entries: BTreeMap<u64, PoolEntry>,
    next_seq: u64,
    now: u64,
    filter: MatchFilter,
}

fn overlap(a: &Bee, b: &Bee) -> (u64, u64) {
    let start = u64::from(a.delivery_start.max(b.delivery_start));
    let end = a.delivery_end().min(b.delivery_end());
    (start, end.max(start))
}

impl Pool {
    pub fn new() -> Self {
        Pool { next_seq: 1, ..Default::default() }
    }

    pub fn with_filter(filter: MatchFilter) -> Self {
        Pool { filter, ..Pool::new() }
    }

    /// Moves the pool clock. Entries whose delivery window has ended are
    /// no longer matched or listed.
    pub fn set_now(&mut self, epoch_secs: u64) {
        self.now = epoch_secs;
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &PoolEntry> {
        self.entries.values()
    }

    pub fn total_remaining_wh(&self) -> u64 {
        self.entries.values().map(|e| u64::from(e.remaining_wh)).sum()
    }

    fn live(&self, e: &PoolEntry) -> bool {
        e.bee.delivery_end() > self.now
    }

    pub fn compatible(&self, offer: &Bee, request: &Bee) -> bool {
        let (s, e) = overlap(offer, request);
        offer.carrier == request.carrier
            && e - s >= MIN_OVERLAP_SECS
            && request.price_mcny_per_kwh >= offer.price_mcny_per_kwh
            && match self.filter {
                MatchFilter::Any => true,
                MatchFilter::GreenAtLeastRequested => offer.green_fraction_bp >= request.green_fraction_bp,
            }
    }

    /// Offers (cheapest first) then requests (highest first) whose windows
    /// intersect the filter window.
    pub fn browse(&self, filter: &BrowseFilter) -> Vec<PoolEntry> {
        let mut offers = Vec::new();
        let mut requests = Vec::new();
        for e in self.entries.values().filter(|e| self.live(e)) {
            let b = &e.bee;
            let start = u64::from(b.delivery_start).max(filter.window_start);
            if b.carrier != filter.carrier || start >= b.delivery_end().min(filter.window_end) {
                continue;
            }
            match b.kind {
                BeeKind::Offer => offers.push(*e),
                _ => requests.push(*e),
            }
        }
        offers.sort_by_key(|e| (e.bee.price_mcny_per_kwh, e.arrival_seq));
        requests.sort_by_key(|e| (std::cmp::Reverse(e.bee.price_mcny_per_kwh), e.arrival_seq));
        offers.extend(requests);
        offers
    }

    /// Matches an incoming offer or request against the pool and rests any
    /// remainder.
    pub fn submit(&mut self, bee: Bee) -> Result<MatchResult, MatchError> {
        bee.validate()?;
        let is_request = match bee.kind {
            BeeKind::Request => true,
            BeeKind::Offer => false,
            other => return Err(MatchError::IncompatibleKind(other.name())),
        };
        let incoming = PoolEntry { bee, remaining_wh: bee.quantity_wh, arrival_seq: self.next_seq };
        self.next_seq += 1;

        let counter_kind = if is_request { BeeKind::Offer } else { BeeKind::Request };
        let mut candidates: Vec<PoolEntry> = self
            .entries
            .values()
            .filter(|e| e.bee.kind == counter_kind && self.live(e))
            .filter(|e| if is_request { self.compatible(&e.bee, &bee) } else { self.compatible(&bee, &e.bee) })
            .copied()
            .collect();
        if is_request {
            candidates.sort_by_key(|e| (e.bee.price_mcny_per_kwh, e.arrival_seq));
        } else {
            candidates.sort_by_key(|e| (std::cmp::Reverse(e.bee.price_mcny_per_kwh), e.arrival_seq));
        }

        let mut me = incoming;
        let mut fills = Vec::new();
        for c in candidates {
            if me.remaining_wh == 0 {
                break;
            }
            let q = me.remaining_wh.min(c.remaining_wh);
            let (offer, request) = if is_request { (c, me) } else { (me, c) };
            fills.push(Fill { offer, request, matched_wh: q, clearing_price_mcny_per_kwh: offer.bee.price_mcny_per_kwh });
            me.remaining_wh -= q;
            let rest = self.entries.get_mut(&c.arrival_seq).expect("candidate is resting");
            rest.remaining_wh -= q;
            if rest.remaining_wh == 0 {
                self.entries.remove(&c.arrival_seq);
            }
        }
        let residual = (me.remaining_wh > 0).then_some(me);
        if let Some(r) = residual {
            self.entries.insert(r.arrival_seq, r);
        }
        Ok(MatchResult { incoming, fills, residual })
    }

    /// Gives `wh` back to the entry that arrived as `entry`, re-resting it
    /// under its original sequence number if it had left the pool.
    fn restore(&mut self, entry: &PoolEntry, wh: u32) {
        self.entries
            .entry(entry.arrival_seq)
            .and_modify(|e| e.remaining_wh += wh)
            .or_insert(PoolEntry { remaining_wh: wh, ..*entry });
    }

    /// Sends every fill as a settle BEE from seller to buyer and applies it
    /// to the ledger. A fill that cannot be delivered is rolled back: both
    /// sides get their quantity back in the pool.
    pub fn settle_fills(&mut self, result: &MatchResult, ledger: &mut Ledger, stack: &mut Stack) -> Settlement {
        let mut out = Settlement::default();
        for fill in &result.fills {
            match settle_one(fill, ledger, stack) {
                Ok(bee) => out.settled.push(bee),
                Err(e) => {
                    self.restore(&fill.offer, fill.matched_wh);
                    self.restore(&fill.request, fill.matched_wh);
                    out.failed.push((*fill, e));
                }
            }
        }
        out
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<(), MatchError> {
        writeln!(out, "arrival_seq,kind,remaining_wh,bee_hex")?;
        for e in self.entries.values() {
            writeln!(out, "{},{},{},{}", e.arrival_seq, e.bee.kind.name(), e.remaining_wh, e.bee.to_hex()?)?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Pool, MatchError> {
        let mut pool = Pool::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            let n = i + 1;
            if n == 1 || line.trim().is_empty() {
                continue;
            }
            let err = |message: String| MatchError::Csv { line: n, message };
            let cols: Vec<&str> = line.trim().split(',').collect();
            let [seq, _kind, remaining, hex] = cols[..] else {
                return Err(err(format!("expected 4 columns, got {}", cols.len())));
            };
            let seq: u64 = seq.parse().map_err(|_| err(format!("bad arrival_seq {seq:?}")))?;
            let remaining: u32 = remaining.parse().map_err(|_| err(format!("bad remaining_wh {remaining:?}")))?;
            let bee = Bee::from_hex(hex).map_err(|e| err(e.to_string()))?;
            if !matches!(bee.kind, BeeKind::Offer | BeeKind::Request) {
                return Err(err(format!("{} cannot rest in the pool", bee.kind.name())));
            }
            if remaining == 0 || remaining > bee.quantity_wh {
                return Err(err(format!("remaining {remaining} Wh outside 1..={}", bee.quantity_wh)));
            }
            pool.entries.insert(seq, PoolEntry { bee, remaining_wh: remaining, arrival_seq: seq });
            pool.next_seq = pool.next_seq.max(seq + 1);
        }
        Ok(pool)
    }
}

fn settle_one(fill: &Fill, ledger: &mut Ledger, stack: &mut Stack) -> Result<Bee, SettleError> {
    let bee = fill.settle_bee();
    for mac in [bee.sender, bee.receiver] {
        ledger.query_profile(&mac)?;
    }
    let src = stack.eip_of(&bee.sender).ok_or(StackError::UnknownMac(bee.sender))?;
    let dst = stack.eip_of(&bee.receiver).ok_or(StackError::UnknownMac(bee.receiver))?;
    let conn = stack.connect(src, dst)?;
    let receipt = stack.send_bee(conn, bee)?;
    ledger.apply_settlement(&receipt.bee)?;
    Ok(receipt.bee)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bee::MacAddress;

    fn order(kind: BeeKind, q: u32, price: u32, who: u32) -> Bee {
        Bee::electricity(kind, q, 0, 120, price, MacAddress::local(who), MacAddress::ZERO)
    }

    #[test]
    fn single_partial_fill() {
        let mut pool = Pool::new();
        pool.submit(order(BeeKind::Offer, 10_000, 500, 1)).unwrap();
        let r = pool.submit(order(BeeKind::Request, 6_000, 600, 2)).unwrap();
        assert_eq!(r.fills.len(), 1);
        assert_eq!((r.fills[0].matched_wh, r.fills[0].clearing_price_mcny_per_kwh), (6_000, 500));
        assert!(r.residual.is_none());
        assert_eq!(pool.entries().next().unwrap().remaining_wh, 4_000);
    }

    #[test]
    fn cheapest_offer_first() {
        let mut pool = Pool::new();
        pool.submit(order(BeeKind::Offer, 5_000, 500, 1)).unwrap();
        pool.submit(order(BeeKind::Offer, 5_000, 400, 2)).unwrap();
        let r = pool.submit(order(BeeKind::Request, 8_000, 600, 3)).unwrap();
        let fills: Vec<_> = r.fills.iter().map(|f| (f.matched_wh, f.clearing_price_mcny_per_kwh)).collect();
        assert_eq!(fills, [(5_000, 400), (3_000, 500)]);
        assert_eq!(pool.len(), 1);
        assert_eq!(pool.entries().next().unwrap().remaining_wh, 2_000);
    }

    #[test]
    fn price_gap_rests_request() {
        let mut pool = Pool::new();
        pool.submit(order(BeeKind::Offer, 5_000, 500, 1)).unwrap();
        let r = pool.submit(order(BeeKind::Request, 6_000, 300, 2)).unwrap();
        assert!(r.fills.is_empty());
        assert_eq!(r.residual.unwrap().remaining_wh, 6_000);
        assert_eq!(pool.len(), 2);
    }

    #[test]
    fn incoming_offer_serves_highest_bid_at_its_ask() {
        let mut pool = Pool::new();
        pool.submit(order(BeeKind::Request, 2_000, 600, 1)).unwrap();
        pool.submit(order(BeeKind::Request, 2_000, 700, 2)).unwrap();
        let r = pool.submit(order(BeeKind::Offer, 3_000, 550, 3)).unwrap();
        let fills: Vec<_> = r.fills.iter().map(|f| (f.request.bee.sender, f.matched_wh, f.clearing_price_mcny_per_kwh)).collect();
        assert_eq!(fills, [(MacAddress::local(2), 2_000, 550), (MacAddress::local(1), 1_000, 550)]);
    }

    #[test]
    fn fifo_within_price_and_browse_order() {
        let mut pool = Pool::new();
        pool.submit(order(BeeKind::Offer, 1_000, 500, 1)).unwrap();
        pool.submit(order(BeeKind::Offer, 1_000, 400, 2)).unwrap();
        pool.submit(order(BeeKind::Offer, 1_000, 400, 3)).unwrap();
        let filter = BrowseFilter { carrier: Carrier::Electricity, window_start: 0, window_end: 7200 };
        let prices: Vec<_> = pool.browse(&filter).iter().map(|e| (e.bee.price_mcny_per_kwh, e.arrival_seq)).collect();
        assert_eq!(prices, [(400, 2), (400, 3), (500, 1)]);
        let r = pool.submit(order(BeeKind::Request, 1_000, 450, 9)).unwrap();
        assert_eq!(r.fills[0].offer.bee.sender, MacAddress::local(2));
        let late = BrowseFilter { carrier: Carrier::Electricity, window_start: 7200, window_end: 9000 };
        assert!(pool.browse(&late).is_empty());
        assert!(Pool::new().browse(&filter).is_empty());
    }

    #[test]
    fn windows_must_overlap_and_settle_on_intersection() {
        let mut pool = Pool::new();
        let mut offer = order(BeeKind::Offer, 1_000, 100, 1);
        offer.delivery_start = 3600;
        pool.submit(offer).unwrap();
        let mut req = order(BeeKind::Request, 1_000, 100, 2);
        req.delivery_start = 7200 + 3600; // starts when the offer ends
        assert!(pool.submit(req).unwrap().fills.is_empty());
        let r = pool.submit(order(BeeKind::Request, 500, 100, 3)).unwrap();
        assert_eq!(r.fills[0].window(), (3600, 60));
        let s = r.fills[0].settle_bee();
        assert_eq!((s.kind, s.sender, s.receiver, s.quantity_wh), (BeeKind::Settle, MacAddress::local(1), MacAddress::local(3), 500));
    }

    #[test]
    fn expired_entries_are_skipped() {
        let mut pool = Pool::new();
        pool.submit(order(BeeKind::Offer, 1_000, 100, 1)).unwrap();
        pool.set_now(7200);
        let mut req = order(BeeKind::Request, 1_000, 100, 2);
        req.delivery_duration_min = 240;
        assert!(pool.submit(req).unwrap().fills.is_empty());
    }

    #[test]
    fn green_filter_hook() {
        let mut pool = Pool::with_filter(MatchFilter::GreenAtLeastRequested);
        pool.submit(order(BeeKind::Offer, 1_000, 100, 1)).unwrap();
        let mut req = order(BeeKind::Request, 1_000, 100, 2);
        req.green_fraction_bp = 10_000;
        assert!(pool.submit(req).unwrap().fills.is_empty());
        let mut green = order(BeeKind::Offer, 1_000, 100, 3);
        green.green_fraction_bp = 10_000;
        assert_eq!(pool.submit(green).unwrap().matched_wh(), 1_000);
    }

    #[test]
    fn rejects_settle_and_invalid_orders() {
        let mut pool = Pool::new();
        assert!(matches!(pool.submit(order(BeeKind::Settle, 1, 1, 1)), Err(MatchError::IncompatibleKind("settle"))));
        assert!(matches!(pool.submit(order(BeeKind::Offer, 0, 1, 1)), Err(MatchError::InvariantViolation(_))));
    }

    #[test]
    fn csv_round_trip() {
        let mut pool = Pool::new();
        pool.submit(order(BeeKind::Offer, 10_000, 500, 1)).unwrap();
        pool.submit(order(BeeKind::Request, 6_000, 600, 2)).unwrap();
        pool.submit(order(BeeKind::Request, 1_000, 100, 3)).unwrap();
        let mut buf = Vec::new();
        pool.write_csv(&mut buf).unwrap();
        let back = Pool::read_csv(&buf[..]).unwrap();
        assert_eq!(back.entries().copied().collect::<Vec<_>>(), pool.entries().copied().collect::<Vec<_>>());
        assert_eq!(back.next_seq, pool.next_seq);
    }
}
