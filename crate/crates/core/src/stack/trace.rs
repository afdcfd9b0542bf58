use std::fmt;
use std::io::{self, Write};

use super::addr::EnergyIpAddress;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Layer {
    Link,
    Network,
    Transport,
    Application,
}

impl Layer {
    pub fn name(&self) -> &'static str {
        match self {
            Layer::Link => "link",
            Layer::Network => "network",
            Layer::Transport => "transport",
            Layer::Application => "application",
        }
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One observation of a frame (or a BEE) at one layer of one node.
///
/// Link-layer verdicts: `sent` (a host put the frame on the wire),
/// `relayed` (a router re-emitted it), `received`, `lost`, `dropped:checksum`,
/// `dropped:not-for-us`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEntry {
    pub tick: u64,
    pub layer: Layer,
    pub src: EnergyIpAddress,
    pub dst: EnergyIpAddress,
    pub kind: &'static str,
    pub quantity_wh: u32,
    pub verdict: String,
    /// Transaction the event belongs to, if any.
    pub txn: Option<u64>,
    /// Node that made the observation.
    pub at: String,
}

impl TraceEntry {
    pub fn is_emission(&self) -> bool {
        self.layer == Layer::Link && (self.verdict == "sent" || self.verdict == "relayed")
    }
}

pub const TRACE_CSV_HEADER: &str = "tick,layer,src,dst,kind,quantity,verdict";

pub fn write_trace_csv<W: Write>(entries: &[TraceEntry], mut out: W) -> io::Result<()> {
    writeln!(out, "{TRACE_CSV_HEADER}")?;
    for e in entries {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            e.tick, e.layer, e.src, e.dst, e.kind, e.quantity_wh, e.verdict
        )?;
    }
    Ok(())
}
