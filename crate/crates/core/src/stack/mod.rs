//! The four-layer energy protocol stack, simulated.
//!
//! Hosts and routers exchange real encoded frames through a single
//! deterministic event queue. Every hop costs one tick. A host always hands
//! its frames to the router of its LAN; routers forward by longest-prefix
//! match, decrement TTL and re-verify every checksum. Transport connections
//! use a three-way handshake and stop-and-wait delivery of one BEE per
//! segment.
//!
//! Two kinds of exchange limits are enforced:
//!
//! * the **static** limit (kWh per period) is checked by the source's router,
//!   i.e. at the network layer, against the cumulative quantity sent from
//!   that address in the current period;
//! * the **dynamic** limit (the Energy-TCP window) is a per-address
//!   allowance in Wh checked by the sending host before any frame is built.
//!
//! Both are set one-way by the operator through [`Stack::set_static_limit`]
//! and [`Stack::update_dynamic_limit`]; every update is recorded on the
//! operator plane ([`Stack::isp_log`]) and nothing flows back.

pub mod addr;
pub mod frame;
pub mod headers;
pub mod router;
pub mod topology;
mod trace;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use addr::{EnergyIpAddress, LanId, LAN_PREFIX_LEN, MAX_HOST};
use frame::{EnergyFrame, ETHERTYPE_ENERGY};
use headers::{EnergyIpHeader, EnergyTcpHeader, TcpFlags, TCP_HEADER_LEN};
use router::{router_mac, NextHop, Router};
pub use trace::{write_trace_csv, Layer, TraceEntry, TRACE_CSV_HEADER};

use crate::bee::{Bee, BeeError, MacAddress, BEE_LEN};
use crate::profile::Ledger;

pub const RESPONDER_PORT: u16 = 4900;
const EPHEMERAL_BASE: u16 = 49152;
/// Header value meaning "no limit configured".
pub const UNLIMITED_KWH: u16 = u16::MAX;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StackError {
    #[error("checksum failure")]
    ChecksumFailure,
    #[error("malformed frame: {0}")]
    Malformed(String),
    #[error("no route to {0}")]
    Unroutable(EnergyIpAddress),
    #[error("handshake with {0} timed out")]
    HandshakeTimeout(EnergyIpAddress),
    #[error("connection reset by {0}")]
    ResetByPeer(EnergyIpAddress),
    #[error("static limit exceeded at {eip}: requested {requested_wh} Wh, {remaining_wh} Wh left this period")]
    StaticLimitExceeded { eip: EnergyIpAddress, requested_wh: u64, remaining_wh: u64 },
    #[error("dynamic limit exceeded: requested {requested_wh} Wh, window {window_wh} Wh")]
    DynamicLimitExceeded { requested_wh: u64, window_wh: u64 },
    #[error("TTL expired at {0}")]
    TtlExpired(EnergyIpAddress),
    #[error("delivery failed after {0} attempts")]
    DeliveryFailed(u32),
    #[error("unknown Energy IP address {0}")]
    UnknownEip(EnergyIpAddress),
    #[error("unknown connection {0}")]
    UnknownConnection(ConnectionId),
    #[error("connection {0} is not established")]
    NotEstablished(ConnectionId),
    #[error("subnet {0} has no free host numbers")]
    SubnetFull(LanId),
    #[error("unknown name {0:?}")]
    UnknownName(String),
    #[error("unknown LAN {0}")]
    UnknownLan(LanId),
    #[error("MAC {0} has no registered Energy Internet Card")]
    NotRegistered(MacAddress),
    #[error("MAC {0} is not attached to any LAN")]
    UnknownMac(MacAddress),
    #[error(transparent)]
    Bee(#[from] BeeError),
    #[error("topology: {0}")]
    Config(String),
}

/// Which exchanges the address limits apply to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LimitScope {
    /// Every BEE is subject to both limits.
    #[default]
    AllExchanges,
    /// Only BEEs that leave their LAN are limited; traffic inside one LAN
    /// never loads a line the operator controls.
    WanOnly,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StackConfig {
    pub default_ttl: u8,
    pub max_retries: u32,
    pub timeout_ticks: u64,
    pub limit_scope: LimitScope,
    pub seed: u64,
}

impl Default for StackConfig {
    fn default() -> Self {
        StackConfig { default_ttl: 16, max_retries: 3, timeout_ticks: 2, limit_scope: LimitScope::default(), seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ConnectionId(pub u64);

impl fmt::Display for ConnectionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TxnId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConnState {
    SynSent,
    Established,
    Closed,
}

#[derive(Debug, Clone)]
pub struct Connection {
    pub id: ConnectionId,
    pub src: EnergyIpAddress,
    pub dst: EnergyIpAddress,
    pub src_port: u16,
    pub dst_port: u16,
    pub state: ConnState,
    /// Window the responder advertised in its last segment, kWh.
    pub peer_window_kwh: u16,
    isn: u32,
    snd_nxt: u32,
    /// Next sequence number the initiator expects from the responder.
    rcv_nxt: u32,
    /// Next sequence number the responder expects from the initiator.
    peer_rcv_nxt: u32,
    queue: std::collections::VecDeque<TxnId>,
    outstanding: Option<TxnId>,
}

/// Proof of delivery returned to the sender.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeliveryReceipt {
    pub connection: ConnectionId,
    pub bee: Bee,
    /// Routers traversed, in order.
    pub hops: Vec<EnergyIpAddress>,
    pub attempts: u32,
    pub delivered_at: u64,
}

impl DeliveryReceipt {
    pub fn hop_count(&self) -> usize {
        self.hops.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LimitKind {
    Static,
    Dynamic,
}

/// One operator-plane message. These only ever travel operator to stack.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LimitUpdate {
    pub tick: u64,
    pub eip: EnergyIpAddress,
    pub kind: LimitKind,
    pub wh: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Node {
    Host(MacAddress),
    Router(LanId),
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::Host(m) => write!(f, "host {m}"),
            Node::Router(l) => write!(f, "router {}", l.router_eip()),
        }
    }
}

#[derive(Debug, Clone)]
enum Event {
    Start { txn: TxnId },
    Arrive { at: Node, bytes: Vec<u8>, txn: TxnId, attempt: u32, forward: bool },
    Nak { txn: TxnId, attempt: u32 },
    Timeout { txn: TxnId, attempt: u32 },
    Fail { txn: TxnId, attempt: u32, error: StackError },
}

struct Scheduled {
    tick: u64,
    seq: u64,
    event: Event,
}

impl PartialEq for Scheduled {
    fn eq(&self, o: &Self) -> bool {
        (self.tick, self.seq) == (o.tick, o.seq)
    }
}
impl Eq for Scheduled {}
impl PartialOrd for Scheduled {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Scheduled {
    // Min-heap on (tick, seq).
    fn cmp(&self, o: &Self) -> Ordering {
        (o.tick, o.seq).cmp(&(self.tick, self.seq))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Fault {
    None,
    Corrupt,
    Lost,
}

#[derive(Debug, Clone)]
enum TxnKind {
    Handshake,
    Data { bee: Bee, seq: u32 },
}

#[derive(Debug, Clone)]
enum TxnOutcome {
    Established,
    Delivered(DeliveryReceipt),
}

#[derive(Debug, Clone)]
struct Txn {
    conn: ConnectionId,
    kind: TxnKind,
    attempt: u32,
    bytes: Vec<u8>,
    hops: Vec<EnergyIpAddress>,
    fault: Fault,
    reserved_wh: u64,
    static_charged: Option<(LanId, EnergyIpAddress, u64)>,
    outcome: Option<Result<TxnOutcome, StackError>>,
}

#[derive(Debug, Clone)]
struct HostInfo {
    name: String,
    eip: Option<EnergyIpAddress>,
}

/// The simulated network: routers, hosts, connections and the event queue.
pub struct Stack {
    config: StackConfig,
    routers: BTreeMap<LanId, Router>,
    hosts: BTreeMap<MacAddress, HostInfo>,
    names: BTreeMap<String, MacAddress>,
    refusing: BTreeSet<EnergyIpAddress>,
    dynamic_wh: BTreeMap<EnergyIpAddress, u64>,
    connections: BTreeMap<ConnectionId, Connection>,
    txns: BTreeMap<TxnId, Txn>,
    queue: BinaryHeap<Scheduled>,
    now: u64,
    next_seq: u64,
    next_conn: u64,
    next_txn: u64,
    next_ip_id: u16,
    rng: ChaCha8Rng,
    corrupt_pending: u32,
    drop_pending: u32,
    trace: Vec<TraceEntry>,
    isp_log: Vec<LimitUpdate>,
    delivered: Vec<Bee>,
    receipts_issued: u64,
}

impl Stack {
    pub fn new(config: StackConfig) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Stack {
            config,
            routers: BTreeMap::new(),
            hosts: BTreeMap::new(),
            names: BTreeMap::new(),
            refusing: BTreeSet::new(),
            dynamic_wh: BTreeMap::new(),
            connections: BTreeMap::new(),
            txns: BTreeMap::new(),
            queue: BinaryHeap::new(),
            now: 0,
            next_seq: 0,
            next_conn: 1,
            next_txn: 1,
            next_ip_id: 1,
            rng,
            corrupt_pending: 0,
            drop_pending: 0,
            trace: Vec::new(),
            isp_log: Vec::new(),
            delivered: Vec::new(),
            receipts_issued: 0,
        }
    }

    pub fn config(&self) -> &StackConfig {
        &self.config
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    // ---- topology ---------------------------------------------------------

    pub fn add_lan(&mut self, lan: LanId) -> Result<(), StackError> {
        if self.routers.contains_key(&lan) {
            return Err(StackError::Config(format!("LAN {lan} defined twice")));
        }
        self.routers.insert(lan, Router::new(lan));
        Ok(())
    }

    pub fn add_route(&mut self, from: LanId, prefix: u32, len: u8, via: LanId) -> Result<(), StackError> {
        if !self.routers.contains_key(&via) {
            return Err(StackError::UnknownLan(via));
        }
        let r = self.routers.get_mut(&from).ok_or(StackError::UnknownLan(from))?;
        r.add_route(prefix, len, via.router_eip());
        Ok(())
    }

    /// Gives every router a direct /20 route to every other LAN.
    pub fn mesh_routes(&mut self) {
        let lans: Vec<LanId> = self.routers.keys().copied().collect();
        for from in &lans {
            for to in lans.iter().filter(|l| *l != from) {
                let (prefix, len) = router::lan_route(*to);
                self.routers.get_mut(from).expect("listed").add_route(prefix, len, to.router_eip());
            }
        }
    }

    pub fn lans(&self) -> impl Iterator<Item = LanId> + '_ {
        self.routers.keys().copied()
    }

    pub fn router(&self, lan: LanId) -> Option<&Router> {
        self.routers.get(&lan)
    }

    /// Attaches a card to `lan` under a DNS-style name.
    pub fn register_host(
        &mut self,
        name: &str,
        mac: MacAddress,
        lan: LanId,
        ledger: &mut Ledger,
    ) -> Result<EnergyIpAddress, StackError> {
        if let Some(owner) = self.names.get(name) {
            if *owner != mac {
                return Err(StackError::Config(format!("name {name:?} already bound to {owner}")));
            }
        }
        let eip = self.assign_eip(lan, mac, ledger)?;
        self.names.insert(name.to_string(), mac);
        self.hosts.get_mut(&mac).expect("assigned").name = name.to_string();
        Ok(eip)
    }

    /// Binds `mac` to a fresh host number in `lan`, releasing any binding it
    /// held elsewhere. The card's profile follows the new address.
    pub fn assign_eip(&mut self, lan: LanId, mac: MacAddress, ledger: &mut Ledger) -> Result<EnergyIpAddress, StackError> {
        if !ledger.is_registered(&mac) {
            return Err(StackError::NotRegistered(mac));
        }
        let current = self.hosts.get(&mac).and_then(|h| h.eip);
        if let Some(eip) = current {
            if eip.lan() == lan {
                return Ok(eip);
            }
        }
        let router = self.routers.get(&lan).ok_or(StackError::UnknownLan(lan))?;
        if !router.has_capacity() {
            return Err(StackError::SubnetFull(lan));
        }
        if let Some(old) = current {
            if let Some(r) = self.routers.get_mut(&old.lan()) {
                r.release(&mac);
            }
            self.dynamic_wh.remove(&old);
            self.refusing.remove(&old);
        }
        let eip = self.routers.get_mut(&lan).expect("checked").bind(mac)?;
        self.hosts.entry(mac).or_insert_with(|| HostInfo { name: String::new(), eip: None }).eip = Some(eip);
        ledger.set_current_eip(&mac, Some(eip)).map_err(|_| StackError::NotRegistered(mac))?;
        Ok(eip)
    }

    pub fn eip_of(&self, mac: &MacAddress) -> Option<EnergyIpAddress> {
        self.hosts.get(mac).and_then(|h| h.eip)
    }

    pub fn mac_of(&self, eip: &EnergyIpAddress) -> Option<MacAddress> {
        self.routers.get(&eip.lan()).and_then(|r| r.host_mac(eip))
    }

    pub fn name_of(&self, mac: &MacAddress) -> Option<&str> {
        self.hosts.get(mac).map(|h| h.name.as_str()).filter(|n| !n.is_empty())
    }

    pub fn resolve_name(&self, name: &str) -> Result<EnergyIpAddress, StackError> {
        let mac = self.names.get(name).ok_or_else(|| StackError::UnknownName(name.to_string()))?;
        self.eip_of(mac).ok_or(StackError::UnknownMac(*mac))
    }

    /// Makes the host at `eip` answer every SYN with RST.
    pub fn set_refuse_connections(&mut self, eip: EnergyIpAddress, refuse: bool) {
        if refuse {
            self.refusing.insert(eip);
        } else {
            self.refusing.remove(&eip);
        }
    }

    // ---- operator plane ---------------------------------------------------

    fn require_host(&self, eip: EnergyIpAddress) -> Result<(), StackError> {
        self.mac_of(&eip).map(|_| ()).ok_or(StackError::UnknownEip(eip))
    }

    pub fn update_dynamic_limit(&mut self, eip: EnergyIpAddress, kwh: u16) -> Result<(), StackError> {
        self.update_dynamic_limit_wh(eip, Some(u64::from(kwh) * 1000))
    }

    /// Sets (or with `None` clears) the remaining allowance of `eip`.
    pub fn update_dynamic_limit_wh(&mut self, eip: EnergyIpAddress, wh: Option<u64>) -> Result<(), StackError> {
        self.require_host(eip)?;
        match wh {
            Some(w) => self.dynamic_wh.insert(eip, w),
            None => self.dynamic_wh.remove(&eip),
        };
        self.isp_log.push(LimitUpdate { tick: self.now, eip, kind: LimitKind::Dynamic, wh });
        Ok(())
    }

    pub fn set_static_limit(&mut self, eip: EnergyIpAddress, kwh: u16) -> Result<(), StackError> {
        self.set_static_limit_wh(eip, u64::from(kwh) * 1000)
    }

    pub fn set_static_limit_wh(&mut self, eip: EnergyIpAddress, wh: u64) -> Result<(), StackError> {
        self.require_host(eip)?;
        self.routers.get_mut(&eip.lan()).expect("host exists").set_static_limit_wh(eip, wh);
        self.isp_log.push(LimitUpdate { tick: self.now, eip, kind: LimitKind::Static, wh: Some(wh) });
        Ok(())
    }

    pub fn dynamic_limit_wh(&self, eip: &EnergyIpAddress) -> Option<u64> {
        self.dynamic_wh.get(eip).copied()
    }

    pub fn static_limit_wh(&self, eip: &EnergyIpAddress) -> Option<u64> {
        self.routers.get(&eip.lan()).and_then(|r| r.static_limit_wh(eip))
    }

    /// Starts a new limit period: static-limit usage counters return to 0.
    pub fn begin_period(&mut self) {
        for r in self.routers.values_mut() {
            r.reset_period();
        }
    }

    pub fn isp_log(&self) -> &[LimitUpdate] {
        &self.isp_log
    }

    fn limits_apply(&self, src: EnergyIpAddress, dst: EnergyIpAddress) -> bool {
        match self.config.limit_scope {
            LimitScope::AllExchanges => true,
            LimitScope::WanOnly => src.lan() != dst.lan(),
        }
    }

    /// Current effective window of a connection in Wh; `None` is unlimited.
    pub fn window_wh(&self, conn: ConnectionId) -> Result<Option<u64>, StackError> {
        let c = self.connections.get(&conn).ok_or(StackError::UnknownConnection(conn))?;
        if !self.limits_apply(c.src, c.dst) {
            return Ok(None);
        }
        Ok(match (self.dynamic_limit_wh(&c.src), self.dynamic_limit_wh(&c.dst)) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        })
    }

    fn window_kwh_field(&self, eip: EnergyIpAddress) -> u16 {
        match self.dynamic_limit_wh(&eip) {
            Some(wh) => (wh / 1000).min(u64::from(UNLIMITED_KWH - 1)) as u16,
            None => UNLIMITED_KWH,
        }
    }

    fn static_kwh_field(&self, eip: EnergyIpAddress) -> u16 {
        match self.static_limit_wh(&eip) {
            Some(wh) => (wh / 1000).min(u64::from(UNLIMITED_KWH - 1)) as u16,
            None => UNLIMITED_KWH,
        }
    }

    // ---- fault injection --------------------------------------------------

    /// Flips one random bit in each of the next `n` frames put on a wire.
    pub fn inject_corruption(&mut self, n: u32) {
        self.corrupt_pending += n;
    }

    /// Loses the next `n` frames put on a wire.
    pub fn drop_next(&mut self, n: u32) {
        self.drop_pending += n;
    }

    // ---- observation ------------------------------------------------------

    pub fn trace(&self) -> &[TraceEntry] {
        &self.trace
    }

    pub fn write_trace_csv<W: std::io::Write>(&self, out: W) -> std::io::Result<()> {
        write_trace_csv(&self.trace, out)
    }

    /// Frames placed on any wire by hosts or routers.
    pub fn frames_emitted(&self) -> usize {
        self.trace.iter().filter(|e| e.is_emission()).count()
    }

    /// BEEs handed to receiving applications, in delivery order.
    pub fn delivered(&self) -> &[Bee] {
        &self.delivered
    }

    pub fn receipts_issued(&self) -> u64 {
        self.receipts_issued
    }

    pub fn connection(&self, id: ConnectionId) -> Option<&Connection> {
        self.connections.get(&id)
    }

    // ---- transport API ----------------------------------------------------

    /// Runs a three-way handshake from `src` to `dst`.
    pub fn open_connection(&mut self, src: EnergyIpAddress, dst: EnergyIpAddress) -> Result<ConnectionId, StackError> {
        self.require_host(src)?;
        let id = ConnectionId(self.next_conn);
        self.next_conn += 1;
        let isn = (id.0 as u32).wrapping_mul(0x9E37_79B9);
        let conn = Connection {
            id,
            src,
            dst,
            src_port: EPHEMERAL_BASE + (id.0 % 16384) as u16,
            dst_port: RESPONDER_PORT,
            state: ConnState::SynSent,
            peer_window_kwh: 0,
            isn,
            snd_nxt: isn.wrapping_add(1),
            rcv_nxt: 0,
            peer_rcv_nxt: 0,
            queue: Default::default(),
            outstanding: None,
        };
        self.connections.insert(id, conn);
        let txn = self.new_txn(id, TxnKind::Handshake);
        self.schedule(0, Event::Start { txn });
        self.run_until_idle();
        match self.take_outcome(txn) {
            Some(Ok(_)) => Ok(id),
            Some(Err(e)) => {
                self.connections.get_mut(&id).expect("exists").state = ConnState::Closed;
                Err(e)
            }
            None => unreachable!("queue drained with handshake unresolved"),
        }
    }

    /// An established connection from `src` to `dst`, opening one if needed.
    pub fn connect(&mut self, src: EnergyIpAddress, dst: EnergyIpAddress) -> Result<ConnectionId, StackError> {
        let existing = self
            .connections
            .values()
            .find(|c| c.src == src && c.dst == dst && c.state == ConnState::Established)
            .map(|c| c.id);
        match existing {
            Some(id) => Ok(id),
            None => self.open_connection(src, dst),
        }
    }

    /// Queues `bee` on `conn`. Delivery happens as the event queue runs.
    pub fn submit_bee(&mut self, conn: ConnectionId, bee: Bee) -> Result<TxnId, StackError> {
        let c = self.connections.get(&conn).ok_or(StackError::UnknownConnection(conn))?;
        if c.state != ConnState::Established {
            return Err(StackError::NotEstablished(conn));
        }
        bee.validate()?;
        let txn = self.new_txn(conn, TxnKind::Data { bee, seq: 0 });
        let c = self.connections.get_mut(&conn).expect("exists");
        c.queue.push_back(txn);
        if c.outstanding.is_none() {
            self.start_next(conn);
        }
        Ok(txn)
    }

    /// Result of a submitted BEE, once the queue has resolved it.
    pub fn receipt(&self, txn: TxnId) -> Option<Result<DeliveryReceipt, StackError>> {
        self.txns.get(&txn).and_then(|t| t.outcome.clone()).map(|o| {
            o.map(|out| match out {
                TxnOutcome::Delivered(r) => r,
                TxnOutcome::Established => unreachable!("handshake transaction"),
            })
        })
    }

    /// Submits and runs the network until the BEE is acknowledged or fails.
    pub fn send_bee(&mut self, conn: ConnectionId, bee: Bee) -> Result<DeliveryReceipt, StackError> {
        let txn = self.submit_bee(conn, bee)?;
        self.run_until_idle();
        self.receipt(txn).expect("queue drained")
    }

    pub fn run_until_idle(&mut self) {
        while let Some(s) = self.queue.pop() {
            self.now = s.tick;
            self.dispatch(s.event);
        }
    }

    // ---- internals --------------------------------------------------------

    fn schedule(&mut self, delay: u64, event: Event) {
        self.queue.push(Scheduled { tick: self.now + delay, seq: self.next_seq, event });
        self.next_seq += 1;
    }

    fn new_txn(&mut self, conn: ConnectionId, kind: TxnKind) -> TxnId {
        let id = TxnId(self.next_txn);
        self.next_txn += 1;
        self.txns.insert(
            id,
            Txn {
                conn,
                kind,
                attempt: 0,
                bytes: Vec::new(),
                hops: Vec::new(),
                fault: Fault::None,
                reserved_wh: 0,
                static_charged: None,
                outcome: None,
            },
        );
        id
    }

    fn take_outcome(&mut self, txn: TxnId) -> Option<Result<TxnOutcome, StackError>> {
        self.txns.remove(&txn).and_then(|t| t.outcome)
    }

    fn start_next(&mut self, conn: ConnectionId) {
        let c = self.connections.get_mut(&conn).expect("exists");
        if let Some(txn) = c.queue.pop_front() {
            c.outstanding = Some(txn);
            self.schedule(0, Event::Start { txn });
        }
    }

    fn record(
        &mut self,
        layer: Layer,
        src: EnergyIpAddress,
        dst: EnergyIpAddress,
        kind: &'static str,
        quantity_wh: u32,
        verdict: impl Into<String>,
        txn: Option<TxnId>,
        at: Node,
    ) {
        self.trace.push(TraceEntry {
            tick: self.now,
            layer,
            src,
            dst,
            kind,
            quantity_wh,
            verdict: verdict.into(),
            txn: txn.map(|t| t.0),
            at: at.to_string(),
        });
    }

    fn dispatch(&mut self, event: Event) {
        match event {
            Event::Start { txn } => self.on_start(txn),
            Event::Arrive { at: Node::Router(lan), bytes, txn, attempt, forward } => {
                self.on_router(lan, bytes, txn, attempt, forward)
            }
            Event::Arrive { at: Node::Host(mac), bytes, txn, attempt, forward } => {
                self.on_host(mac, bytes, txn, attempt, forward)
            }
            Event::Nak { txn, attempt } => {
                if self.live(txn, attempt) {
                    self.retry(txn);
                }
            }
            Event::Timeout { txn, attempt } => {
                if self.live(txn, attempt) {
                    let t = self.txns.get_mut(&txn).expect("live");
                    if t.fault == Fault::None {
                        t.fault = Fault::Lost;
                    }
                    self.retry(txn);
                }
            }
            Event::Fail { txn, attempt, error } => {
                if self.live(txn, attempt) {
                    self.finish(txn, Err(error));
                }
            }
        }
    }

    fn live(&self, txn: TxnId, attempt: u32) -> bool {
        self.txns.get(&txn).is_some_and(|t| t.outcome.is_none() && t.attempt == attempt)
    }

    fn on_start(&mut self, txn: TxnId) {
        let t = self.txns.get(&txn).expect("scheduled").clone();
        let c = self.connections.get(&t.conn).expect("txn has connection").clone();
        let src_mac = self.mac_of(&c.src);
        let Some(src_mac) = src_mac else {
            self.finish(txn, Err(StackError::UnknownEip(c.src)));
            return;
        };
        let (tcp, bee_bytes, quantity) = match t.kind {
            TxnKind::Handshake => (
                EnergyTcpHeader {
                    source_port: c.src_port,
                    dest_port: c.dst_port,
                    sequence: c.isn,
                    ack_number: 0,
                    flags: TcpFlags::SYN,
                    window: self.window_kwh_field(c.src),
                    checksum: 0,
                },
                None,
                0,
            ),
            TxnKind::Data { bee, .. } => {
                let q = u64::from(bee.quantity_wh);
                let node = Node::Host(src_mac);
                self.record(Layer::Application, c.src, c.dst, "BEE", bee.quantity_wh, "submitted", Some(txn), node);
                if c.state != ConnState::Established {
                    self.finish(txn, Err(StackError::NotEstablished(c.id)));
                    return;
                }
                if let Ok(Some(window)) = self.window_wh(c.id) {
                    if q > window {
                        self.record(Layer::Transport, c.src, c.dst, "DATA", bee.quantity_wh, "rejected:dynamic-limit", Some(txn), node);
                        self.finish(txn, Err(StackError::DynamicLimitExceeded { requested_wh: q, window_wh: window }));
                        return;
                    }
                }
                if self.limits_apply(c.src, c.dst) {
                    for e in [c.src, c.dst] {
                        if let Some(w) = self.dynamic_wh.get_mut(&e) {
                            *w -= q;
                        }
                    }
                    self.txns.get_mut(&txn).expect("exists").reserved_wh = q;
                }
                let encoded = match bee.encode() {
                    Ok(b) => b,
                    Err(e) => {
                        self.finish(txn, Err(e.into()));
                        return;
                    }
                };
                let seq = c.snd_nxt;
                let conn = self.connections.get_mut(&c.id).expect("exists");
                conn.snd_nxt = conn.snd_nxt.wrapping_add(BEE_LEN as u32);
                if let TxnKind::Data { seq: s, .. } = &mut self.txns.get_mut(&txn).expect("exists").kind {
                    *s = seq;
                }
                (
                    EnergyTcpHeader {
                        source_port: c.src_port,
                        dest_port: c.dst_port,
                        sequence: seq,
                        ack_number: c.rcv_nxt,
                        flags: TcpFlags::PSH | TcpFlags::ACK,
                        window: self.window_kwh_field(c.src),
                        checksum: 0,
                    },
                    Some(encoded),
                    bee.quantity_wh,
                )
            }
        };
        let kind = tcp.flags.label();
        let payload_len = TCP_HEADER_LEN + bee_bytes.map_or(0, |_| BEE_LEN);
        let ip = EnergyIpHeader::new(c.src, c.dst, payload_len, self.next_ip_id(), self.config.default_ttl, self.static_kwh_field(c.src));
        let frame = EnergyFrame {
            dest_mac: router_mac(c.src.lan()),
            src_mac,
            ethertype: ETHERTYPE_ENERGY,
            ip,
            tcp,
            bee: bee_bytes,
        };
        let bytes = frame.encode();
        self.record(Layer::Transport, c.src, c.dst, kind, quantity, "segment", Some(txn), Node::Host(src_mac));
        self.txns.get_mut(&txn).expect("exists").bytes = bytes;
        self.transmit(txn);
    }

    fn next_ip_id(&mut self) -> u16 {
        let id = self.next_ip_id;
        self.next_ip_id = self.next_ip_id.wrapping_add(1);
        id
    }

    /// Puts the transaction's original frame on the wire (again) and arms
    /// its retransmission timer.
    fn transmit(&mut self, txn: TxnId) {
        let t = self.txns.get_mut(&txn).expect("exists");
        t.attempt += 1;
        t.hops.clear();
        let attempt = t.attempt;
        let bytes = t.bytes.clone();
        let c = self.connections.get(&t.conn).expect("exists");
        let (src, dst) = (c.src, c.dst);
        let src_mac = self.mac_of(&src).expect("checked at start");
        if attempt > 1 {
            self.record(Layer::Transport, src, dst, "DATA", 0, format!("retransmit:{attempt}"), Some(txn), Node::Host(src_mac));
        }
        let routers = self.path_routers(src, dst);
        let rto = 2 * (routers as u64 + 1) + self.config.timeout_ticks;
        self.emit(Node::Host(src_mac), Node::Router(src.lan()), bytes, txn, attempt, true, "sent");
        self.schedule(rto, Event::Timeout { txn, attempt });
    }

    /// Number of routers a frame from `src` to `dst` passes, following the
    /// current tables (bounded by the default TTL).
    fn path_routers(&self, src: EnergyIpAddress, dst: EnergyIpAddress) -> usize {
        let mut lan = src.lan();
        for n in 1..=usize::from(self.config.default_ttl) {
            match self.routers.get(&lan).and_then(|r| r.lookup(dst)) {
                Some(NextHop::Router(next)) => lan = next.lan(),
                _ => return n,
            }
        }
        usize::from(self.config.default_ttl)
    }

    #[allow(clippy::too_many_arguments)]
    fn emit(&mut self, from: Node, to: Node, mut bytes: Vec<u8>, txn: TxnId, attempt: u32, forward: bool, verdict: &str) {
        let (src, dst, kind, q) = describe(&bytes);
        self.record(Layer::Link, src, dst, kind, q, verdict, Some(txn), from);
        if self.drop_pending > 0 {
            self.drop_pending -= 1;
            self.record(Layer::Link, src, dst, kind, q, "lost", Some(txn), from);
            if let Some(t) = self.txns.get_mut(&txn) {
                if t.outcome.is_none() {
                    t.fault = Fault::Lost;
                }
            }
            return;
        }
        if self.corrupt_pending > 0 {
            self.corrupt_pending -= 1;
            let bit = self.rng.random_range(0..bytes.len() * 8);
            bytes[bit / 8] ^= 1 << (bit % 8);
        }
        self.schedule(1, Event::Arrive { at: to, bytes, txn, attempt, forward });
    }

    /// Link-layer failure at `at`: drop, and if the frame came from the
    /// transaction's originator, NAK it back for immediate retransmission.
    fn corrupted(&mut self, at: Node, txn: TxnId, attempt: u32, forward: bool) {
        let unknown = EnergyIpAddress::default();
        self.record(Layer::Link, unknown, unknown, "?", 0, "dropped:checksum", Some(txn), at);
        if let Some(t) = self.txns.get_mut(&txn) {
            if t.outcome.is_none() && t.attempt == attempt {
                t.fault = Fault::Corrupt;
            }
        }
        if forward {
            self.record(Layer::Link, unknown, unknown, "NAK", 0, "sent", Some(txn), at);
            self.schedule(1, Event::Nak { txn, attempt });
        }
    }

    fn on_router(&mut self, lan: LanId, bytes: Vec<u8>, txn: TxnId, attempt: u32, forward: bool) {
        let at = Node::Router(lan);
        let mut frame = match EnergyFrame::decode(&bytes) {
            Ok(f) => f,
            Err(_) => return self.corrupted(at, txn, attempt, forward),
        };
        let (src, dst) = (frame.ip.source, frame.ip.destination);
        let kind = frame.tcp.flags.label();
        let q = frame_quantity(&frame);
        let router_eip = lan.router_eip();
        if frame.dest_mac != router_mac(lan) {
            self.record(Layer::Link, src, dst, kind, q, "dropped:not-for-us", Some(txn), at);
            return;
        }
        self.record(Layer::Link, src, dst, kind, q, "received", Some(txn), at);

        if frame.ip.ttl <= 1 {
            self.record(Layer::Network, src, dst, kind, q, "rejected:ttl", Some(txn), at);
            self.schedule(1, Event::Fail { txn, attempt, error: StackError::TtlExpired(router_eip) });
            return;
        }

        let is_data_origin = forward && frame.bee.is_some() && lan.contains(src);
        if is_data_origin && self.limits_apply(src, dst) {
            let charged = self.txns.get(&txn).is_some_and(|t| t.static_charged.is_some());
            if !charged {
                let router = self.routers.get_mut(&lan).expect("router exists");
                match router.charge_static(src, u64::from(q)) {
                    Ok(()) => {
                        if let Some(t) = self.txns.get_mut(&txn) {
                            t.static_charged = Some((lan, src, u64::from(q)));
                        }
                    }
                    Err(e) => {
                        self.record(Layer::Network, src, dst, kind, q, "rejected:static-limit", Some(txn), at);
                        self.schedule(1, Event::Fail { txn, attempt, error: e });
                        return;
                    }
                }
            }
        }

        let router = self.routers.get(&lan).expect("router exists");
        let (next, dest_mac) = match router.lookup(dst) {
            Some(NextHop::Local) => match router.host_mac(&dst) {
                Some(mac) => (Node::Host(mac), mac),
                None => {
                    self.record(Layer::Network, src, dst, kind, q, "dropped:no-host", Some(txn), at);
                    return;
                }
            },
            Some(NextHop::Router(next)) if self.routers.contains_key(&next.lan()) => {
                (Node::Router(next.lan()), router_mac(next.lan()))
            }
            _ => {
                self.record(Layer::Network, src, dst, kind, q, "rejected:unroutable", Some(txn), at);
                self.schedule(1, Event::Fail { txn, attempt, error: StackError::Unroutable(dst) });
                return;
            }
        };
        self.record(Layer::Network, src, dst, kind, q, "forwarded", Some(txn), at);
        if forward && frame.bee.is_some() {
            if let Some(t) = self.txns.get_mut(&txn) {
                if t.attempt == attempt {
                    t.hops.push(router_eip);
                }
            }
        }
        frame.ip.decrement_ttl();
        frame.src_mac = router_mac(lan);
        frame.dest_mac = dest_mac;
        self.emit(at, next, frame.encode(), txn, attempt, forward, "relayed");
    }

    fn on_host(&mut self, mac: MacAddress, bytes: Vec<u8>, txn: TxnId, attempt: u32, forward: bool) {
        let at = Node::Host(mac);
        let frame = match EnergyFrame::decode(&bytes) {
            Ok(f) => f,
            Err(_) => return self.corrupted(at, txn, attempt, forward),
        };
        let (src, dst) = (frame.ip.source, frame.ip.destination);
        let kind = frame.tcp.flags.label();
        let q = frame_quantity(&frame);
        if frame.dest_mac != mac {
            self.record(Layer::Link, src, dst, kind, q, "dropped:not-for-us", Some(txn), at);
            return;
        }
        self.record(Layer::Link, src, dst, kind, q, "received", Some(txn), at);
        if self.eip_of(&mac) != Some(dst) {
            self.record(Layer::Network, src, dst, kind, q, "dropped:misdelivered", Some(txn), at);
            return;
        }
        self.record(Layer::Network, src, dst, kind, q, "accepted", Some(txn), at);

        let Some(conn_id) = self.txns.get(&txn).map(|t| t.conn) else { return };
        let Some(c) = self.connections.get(&conn_id).cloned() else { return };
        let flags = frame.tcp.flags;
        let is_responder = dst == c.dst && frame.tcp.dest_port == c.dst_port;

        if is_responder {
            self.record(Layer::Transport, src, dst, kind, q, "received", Some(txn), at);
            if flags.contains(TcpFlags::SYN) {
                if self.refusing.contains(&dst) {
                    self.reply(&c, mac, TcpFlags::RST | TcpFlags::ACK, 0, frame.tcp.sequence.wrapping_add(1), txn, attempt);
                    return;
                }
                let r_isn = c.isn.rotate_left(13) ^ 0x5A5A_5A5A;
                self.connections.get_mut(&conn_id).expect("exists").peer_rcv_nxt = frame.tcp.sequence.wrapping_add(1);
                self.reply(&c, mac, TcpFlags::SYN | TcpFlags::ACK, r_isn, frame.tcp.sequence.wrapping_add(1), txn, attempt);
            } else if let Some(raw) = frame.bee {
                let seq = frame.tcp.sequence;
                let fresh = !headers::seq_after(c.peer_rcv_nxt, seq);
                if fresh {
                    match Bee::decode(&raw) {
                        Ok(bee) => {
                            self.connections.get_mut(&conn_id).expect("exists").peer_rcv_nxt = seq.wrapping_add(BEE_LEN as u32);
                            self.delivered.push(bee);
                            self.record(Layer::Application, src, dst, "BEE", bee.quantity_wh, "delivered", Some(txn), at);
                        }
                        Err(_) => {
                            self.record(Layer::Application, src, dst, "BEE", q, "rejected:bee-checksum", Some(txn), at);
                            return self.corrupted(at, txn, attempt, forward);
                        }
                    }
                } else {
                    self.record(Layer::Transport, src, dst, kind, q, "duplicate", Some(txn), at);
                }
                let ack = self.connections[&conn_id].peer_rcv_nxt;
                self.reply(&c, mac, TcpFlags::ACK, 0, ack, txn, attempt);
            }
            // A bare ACK completes the responder's side of the handshake.
            return;
        }

        // Initiator side.
        self.record(Layer::Transport, src, dst, kind, q, "received", Some(txn), at);
        if !self.live(txn, attempt) {
            return;
        }
        if flags.contains(TcpFlags::RST) {
            self.finish(txn, Err(StackError::ResetByPeer(src)));
            return;
        }
        let t = self.txns.get(&txn).expect("live").clone();
        match t.kind {
            TxnKind::Handshake if flags.contains(TcpFlags::SYN) && flags.contains(TcpFlags::ACK) => {
                let conn = self.connections.get_mut(&conn_id).expect("exists");
                conn.state = ConnState::Established;
                conn.peer_window_kwh = frame.tcp.window;
                conn.rcv_nxt = frame.tcp.sequence.wrapping_add(1);
                let ack = EnergyTcpHeader {
                    source_port: c.src_port,
                    dest_port: c.dst_port,
                    sequence: c.snd_nxt,
                    ack_number: frame.tcp.sequence.wrapping_add(1),
                    flags: TcpFlags::ACK,
                    window: self.window_kwh_field(c.src),
                    checksum: 0,
                };
                self.finish(txn, Ok(TxnOutcome::Established));
                self.send_segment(mac, c.src, c.dst, ack, txn, attempt, true);
            }
            TxnKind::Data { bee, seq } if flags.contains(TcpFlags::ACK) => {
                if frame.tcp.ack_number != seq.wrapping_add(BEE_LEN as u32) {
                    return;
                }
                self.connections.get_mut(&conn_id).expect("exists").peer_window_kwh = frame.tcp.window;
                let receipt = DeliveryReceipt {
                    connection: conn_id,
                    bee,
                    hops: t.hops.clone(),
                    attempts: t.attempt,
                    delivered_at: self.now,
                };
                self.receipts_issued += 1;
                self.finish(txn, Ok(TxnOutcome::Delivered(receipt)));
            }
            _ => {}
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn reply(&mut self, c: &Connection, mac: MacAddress, flags: TcpFlags, seq: u32, ack: u32, txn: TxnId, attempt: u32) {
        let tcp = EnergyTcpHeader {
            source_port: c.dst_port,
            dest_port: c.src_port,
            sequence: seq,
            ack_number: ack,
            flags,
            window: self.window_kwh_field(c.dst),
            checksum: 0,
        };
        self.send_segment(mac, c.dst, c.src, tcp, txn, attempt, false);
    }

    #[allow(clippy::too_many_arguments)]
    fn send_segment(
        &mut self,
        mac: MacAddress,
        src: EnergyIpAddress,
        dst: EnergyIpAddress,
        tcp: EnergyTcpHeader,
        txn: TxnId,
        attempt: u32,
        forward: bool,
    ) {
        let ip = EnergyIpHeader::new(src, dst, TCP_HEADER_LEN, self.next_ip_id(), self.config.default_ttl, self.static_kwh_field(src));
        let frame = EnergyFrame { dest_mac: router_mac(src.lan()), src_mac: mac, ethertype: ETHERTYPE_ENERGY, ip, tcp, bee: None };
        self.record(Layer::Transport, src, dst, tcp.flags.label(), 0, "segment", Some(txn), Node::Host(mac));
        self.emit(Node::Host(mac), Node::Router(src.lan()), frame.encode(), txn, attempt, forward, "sent");
    }

    fn retry(&mut self, txn: TxnId) {
        let t = self.txns.get(&txn).expect("live");
        if t.attempt > self.config.max_retries {
            let dst = self.connections.get(&t.conn).map(|c| c.dst).unwrap_or_default();
            let err = match (t.fault, &t.kind) {
                (Fault::Corrupt, _) => StackError::ChecksumFailure,
                (_, TxnKind::Handshake) => StackError::HandshakeTimeout(dst),
                (_, TxnKind::Data { .. }) => StackError::DeliveryFailed(t.attempt),
            };
            self.finish(txn, Err(err));
        } else {
            self.transmit(txn);
        }
    }

    /// Resolves a transaction. Failed data transactions give back their
    /// limit reservations; the connection moves on to its next BEE.
    fn finish(&mut self, txn: TxnId, outcome: Result<TxnOutcome, StackError>) {
        let t = self.txns.get_mut(&txn).expect("exists");
        let failed = outcome.is_err();
        t.outcome = Some(outcome);
        let (conn_id, reserved, charged, is_data) =
            (t.conn, t.reserved_wh, t.static_charged, matches!(t.kind, TxnKind::Data { .. }));
        if failed {
            if let Some((lan, eip, wh)) = charged {
                if let Some(r) = self.routers.get_mut(&lan) {
                    r.refund_static(eip, wh);
                }
            }
            if reserved > 0 {
                let c = &self.connections[&conn_id];
                for e in [c.src, c.dst] {
                    if let Some(w) = self.dynamic_wh.get_mut(&e) {
                        *w += reserved;
                    }
                }
            }
        }
        if is_data {
            let c = self.connections.get_mut(&conn_id).expect("exists");
            if c.outstanding == Some(txn) {
                c.outstanding = None;
                self.start_next(conn_id);
            }
        }
    }
}

fn frame_quantity(frame: &EnergyFrame) -> u32 {
    frame.bee.map_or(0, |b| u32::from_be_bytes([b[4], b[5], b[6], b[7]]))
}

/// Best-effort addressing summary of raw frame bytes for the trace.
fn describe(bytes: &[u8]) -> (EnergyIpAddress, EnergyIpAddress, &'static str, u32) {
    match EnergyFrame::decode(bytes) {
        Ok(f) => (f.ip.source, f.ip.destination, f.tcp.flags.label(), frame_quantity(&f)),
        Err(_) => (EnergyIpAddress::default(), EnergyIpAddress::default(), "?", 0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bee::BeeKind;

    struct Net {
        stack: Stack,
        ledger: Ledger,
    }

    const LAN_A: LanId = LanId { wan: 10, subnet: 1 };
    const LAN_B: LanId = LanId { wan: 10, subnet: 2 };

    fn net(config: StackConfig) -> Net {
        let mut stack = Stack::new(config);
        stack.add_lan(LAN_A).unwrap();
        stack.add_lan(LAN_B).unwrap();
        stack.mesh_routes();
        let mut ledger = Ledger::new();
        for (i, (name, lan)) in [("a1", LAN_A), ("a2", LAN_A), ("b1", LAN_B)].into_iter().enumerate() {
            let mac = MacAddress::local(i as u32 + 1);
            ledger.register_card(mac, name).unwrap();
            stack.register_host(name, mac, lan, &mut ledger).unwrap();
        }
        Net { stack, ledger }
    }

    fn bee(q: u32) -> Bee {
        Bee::electricity(BeeKind::Settle, q, 0, 120, 500, MacAddress::local(1), MacAddress::local(2))
    }

    fn eip(n: &Net, name: &str) -> EnergyIpAddress {
        n.stack.resolve_name(name).unwrap()
    }

    #[test]
    fn handshake_uses_three_host_frames() {
        let mut n = net(StackConfig::default());
        let (a1, a2) = (eip(&n, "a1"), eip(&n, "a2"));
        let c = n.stack.open_connection(a1, a2).unwrap();
        assert_eq!(n.stack.connection(c).unwrap().state, ConnState::Established);
        let host_frames: Vec<_> = n.stack.trace().iter().filter(|e| e.layer == Layer::Link && e.verdict == "sent").map(|e| e.kind).collect();
        assert_eq!(host_frames, ["SYN", "SYN-ACK", "ACK"]);
    }

    #[test]
    fn window_arithmetic_and_dynamic_rejection() {
        let mut n = net(StackConfig::default());
        let (a1, a2) = (eip(&n, "a1"), eip(&n, "a2"));
        n.stack.set_static_limit(a1, 10).unwrap();
        n.stack.update_dynamic_limit(a1, 8).unwrap();
        let c = n.stack.open_connection(a1, a2).unwrap();
        assert_eq!(n.stack.connection(c).unwrap().peer_window_kwh, UNLIMITED_KWH);
        let r = n.stack.send_bee(c, bee(5000)).unwrap();
        assert_eq!(r.hop_count(), 1);
        assert_eq!(n.stack.window_wh(c).unwrap(), Some(3000));
        let frames = n.stack.frames_emitted();
        assert_eq!(
            n.stack.send_bee(c, bee(6000)),
            Err(StackError::DynamicLimitExceeded { requested_wh: 6000, window_wh: 3000 })
        );
        assert_eq!(n.stack.frames_emitted(), frames);
        assert_eq!(n.stack.window_wh(c).unwrap(), Some(3000));
    }

    #[test]
    fn cross_lan_receipt_lists_both_routers() {
        let mut n = net(StackConfig::default());
        let (a1, b1) = (eip(&n, "a1"), eip(&n, "b1"));
        let c = n.stack.open_connection(a1, b1).unwrap();
        let r = n.stack.send_bee(c, bee(1000)).unwrap();
        assert_eq!(r.hops, vec![LAN_A.router_eip(), LAN_B.router_eip()]);
        assert_eq!(n.stack.delivered().len(), 1);
        assert_eq!(n.stack.receipts_issued(), 1);
    }

    #[test]
    fn static_limit_rejected_at_network_layer() {
        let mut n = net(StackConfig::default());
        let (a1, b1) = (eip(&n, "a1"), eip(&n, "b1"));
        n.stack.set_static_limit(a1, 2).unwrap();
        let c = n.stack.open_connection(a1, b1).unwrap();
        n.stack.send_bee(c, bee(1500)).unwrap();
        let err = n.stack.send_bee(c, bee(1000)).unwrap_err();
        assert!(matches!(err, StackError::StaticLimitExceeded { remaining_wh: 500, .. }));
        let rejection = n.stack.trace().iter().find(|e| e.verdict.starts_with("rejected")).unwrap();
        assert_eq!(rejection.layer, Layer::Network);
        n.stack.begin_period();
        n.stack.send_bee(c, bee(1000)).unwrap();
    }

    #[test]
    fn unroutable_refused_and_missing_peers() {
        let mut n = net(StackConfig::default());
        let a1 = eip(&n, "a1");
        assert_eq!(
            n.stack.open_connection(a1, EnergyIpAddress::new(11, 1, 1)),
            Err(StackError::Unroutable(EnergyIpAddress::new(11, 1, 1)))
        );
        let a2 = eip(&n, "a2");
        n.stack.set_refuse_connections(a2, true);
        assert_eq!(n.stack.open_connection(a1, a2), Err(StackError::ResetByPeer(a2)));
        let ghost = EnergyIpAddress::new(10, 2, 99);
        assert_eq!(n.stack.open_connection(a1, ghost), Err(StackError::HandshakeTimeout(ghost)));
    }

    #[test]
    fn ttl_expires_on_long_paths() {
        let mut n = net(StackConfig { default_ttl: 2, ..StackConfig::default() });
        let (a1, a2, b1) = (eip(&n, "a1"), eip(&n, "a2"), eip(&n, "b1"));
        assert!(n.stack.open_connection(a1, a2).is_ok());
        assert_eq!(n.stack.open_connection(a1, b1), Err(StackError::TtlExpired(LAN_B.router_eip())));
    }

    #[test]
    fn corruption_is_nakked_and_retransmitted() {
        let mut n = net(StackConfig { seed: 7, ..StackConfig::default() });
        let (a1, b1) = (eip(&n, "a1"), eip(&n, "b1"));
        let c = n.stack.open_connection(a1, b1).unwrap();
        n.stack.inject_corruption(1);
        let r = n.stack.send_bee(c, bee(1000)).unwrap();
        assert_eq!(r.attempts, 2);
        assert_eq!(n.stack.delivered().len(), 1);
        n.stack.inject_corruption(4);
        assert_eq!(n.stack.send_bee(c, bee(1000)), Err(StackError::ChecksumFailure));
    }

    #[test]
    fn lost_frames_time_out_then_fail() {
        let mut n = net(StackConfig::default());
        let (a1, b1) = (eip(&n, "a1"), eip(&n, "b1"));
        let c = n.stack.open_connection(a1, b1).unwrap();
        n.stack.drop_next(2);
        let r = n.stack.send_bee(c, bee(1000)).unwrap();
        assert_eq!(r.attempts, 3);
        n.stack.drop_next(4);
        assert_eq!(n.stack.send_bee(c, bee(1000)), Err(StackError::DeliveryFailed(4)));
        assert_eq!(n.stack.delivered().len(), 1);
        n.stack.send_bee(c, bee(1000)).unwrap();
        assert_eq!(n.stack.delivered().len(), n.stack.receipts_issued() as usize);
    }

    #[test]
    fn lost_ack_does_not_duplicate_delivery() {
        let mut n = net(StackConfig::default());
        let (a1, a2) = (eip(&n, "a1"), eip(&n, "a2"));
        let c = n.stack.open_connection(a1, a2).unwrap();
        let txn = n.stack.submit_bee(c, bee(1000)).unwrap();
        // Run until the data frame is about to reach the responder, then
        // lose the ACK it sends back.
        while !matches!(n.stack.queue.peek().unwrap().event, Event::Arrive { at: Node::Host(_), forward: true, .. }) {
            let s = n.stack.queue.pop().unwrap();
            n.stack.now = s.tick;
            n.stack.dispatch(s.event);
        }
        n.stack.drop_next(1);
        n.stack.run_until_idle();
        assert!(n.stack.receipt(txn).unwrap().is_ok());
        assert_eq!(n.stack.delivered().len(), 1);
        assert!(n.stack.trace().iter().any(|e| e.verdict == "duplicate"));
    }

    #[test]
    fn wan_only_scope_ignores_lan_traffic() {
        let mut n = net(StackConfig { limit_scope: LimitScope::WanOnly, ..StackConfig::default() });
        let (a1, a2, b1) = (eip(&n, "a1"), eip(&n, "a2"), eip(&n, "b1"));
        n.stack.update_dynamic_limit(a1, 0).unwrap();
        let c = n.stack.open_connection(a1, a2).unwrap();
        n.stack.send_bee(c, bee(1000)).unwrap();
        let c = n.stack.open_connection(a1, b1).unwrap();
        assert!(matches!(n.stack.send_bee(c, bee(1000)), Err(StackError::DynamicLimitExceeded { .. })));
    }

    #[test]
    fn mobile_resource_keeps_mac_and_profile_follows() {
        let mut n = net(StackConfig::default());
        let mac = MacAddress::local(1);
        let before = eip(&n, "a1");
        let after = n.stack.assign_eip(LAN_B, mac, &mut n.ledger).unwrap();
        assert_ne!(before, after);
        assert_eq!(after.lan(), LAN_B);
        assert_eq!(eip(&n, "a1"), after);
        assert_eq!(n.ledger.query_profile(&mac).unwrap().current_eip(), Some(after));
        assert_eq!(n.stack.mac_of(&after), Some(mac));
        assert_eq!(n.stack.mac_of(&before), None);
    }

    #[test]
    fn subnet_capacity_is_4095_hosts() {
        let mut stack = Stack::new(StackConfig::default());
        stack.add_lan(LAN_A).unwrap();
        let mut ledger = Ledger::new();
        for i in 1..=4095u32 {
            let mac = MacAddress::local(i);
            ledger.register_card(mac, "h").unwrap();
            stack.assign_eip(LAN_A, mac, &mut ledger).unwrap();
        }
        let mac = MacAddress::local(5000);
        ledger.register_card(mac, "h").unwrap();
        assert_eq!(stack.assign_eip(LAN_A, mac, &mut ledger), Err(StackError::SubnetFull(LAN_A)));
    }

    #[test]
    fn unregistered_card_cannot_attach() {
        let mut n = net(StackConfig::default());
        let mac = MacAddress::local(77);
        assert_eq!(n.stack.assign_eip(LAN_A, mac, &mut n.ledger), Err(StackError::NotRegistered(mac)));
        assert_eq!(n.stack.resolve_name("nobody"), Err(StackError::UnknownName("nobody".into())));
        assert_eq!(
            n.stack.update_dynamic_limit(EnergyIpAddress::new(10, 1, 99), 1),
            Err(StackError::UnknownEip(EnergyIpAddress::new(10, 1, 99)))
        );
    }

    #[test]
    fn trace_csv_has_seven_columns() {
        let mut n = net(StackConfig::default());
        let (a1, a2) = (eip(&n, "a1"), eip(&n, "a2"));
        let c = n.stack.open_connection(a1, a2).unwrap();
        n.stack.send_bee(c, bee(1000)).unwrap();
        let mut out = Vec::new();
        n.stack.write_trace_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.lines().all(|l| l.split(',').count() == 7));
        assert!(text.lines().next().unwrap() == TRACE_CSV_HEADER);
    }
}
