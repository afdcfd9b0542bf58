//! Energy-IP and Energy-TCP headers.
//!
//! Both reuse the 20-byte IPv4 and TCP layouts field for field. Two slots
//! change meaning: the IPv4 flags/fragment-offset word carries the static
//! exchange limit (kWh per period) and the TCP window carries the dynamic
//! limit (kWh currently permitted).

use std::fmt;

use super::addr::EnergyIpAddress;
use super::StackError;
use crate::checksum::internet_checksum;

pub const IP_HEADER_LEN: usize = 20;
pub const TCP_HEADER_LEN: usize = 20;
pub const PROTO_ENERGY_TCP: u8 = 6;
pub const IP_VERSION: u8 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnergyIpHeader {
    pub version: u8,
    /// In 32-bit words, always 5.
    pub header_length: u8,
    pub total_length: u16,
    pub identification: u16,
    /// Occupies the IPv4 flags + fragment offset word.
    pub static_limit_kwh: u16,
    pub ttl: u8,
    pub protocol: u8,
    pub header_checksum: u16,
    pub source: EnergyIpAddress,
    pub destination: EnergyIpAddress,
}

impl EnergyIpHeader {
    pub fn new(
        source: EnergyIpAddress,
        destination: EnergyIpAddress,
        payload_len: usize,
        identification: u16,
        ttl: u8,
        static_limit_kwh: u16,
    ) -> Self {
        let mut h = EnergyIpHeader {
            version: IP_VERSION,
            header_length: 5,
            total_length: (IP_HEADER_LEN + payload_len) as u16,
            identification,
            static_limit_kwh,
            ttl,
            protocol: PROTO_ENERGY_TCP,
            header_checksum: 0,
            source,
            destination,
        };
        h.header_checksum = h.compute_checksum();
        h
    }

    fn write_unchecked(&self, checksum: u16) -> [u8; IP_HEADER_LEN] {
        let mut b = [0u8; IP_HEADER_LEN];
        b[0] = (self.version << 4) | (self.header_length & 0x0F);
        b[1] = 0;
        b[2..4].copy_from_slice(&self.total_length.to_be_bytes());
        b[4..6].copy_from_slice(&self.identification.to_be_bytes());
        b[6..8].copy_from_slice(&self.static_limit_kwh.to_be_bytes());
        b[8] = self.ttl;
        b[9] = self.protocol;
        b[10..12].copy_from_slice(&checksum.to_be_bytes());
        b[12..16].copy_from_slice(&self.source.0.to_be_bytes());
        b[16..20].copy_from_slice(&self.destination.0.to_be_bytes());
        b
    }

    pub fn compute_checksum(&self) -> u16 {
        internet_checksum(&self.write_unchecked(0))
    }

    pub fn encode(&self) -> [u8; IP_HEADER_LEN] {
        self.write_unchecked(self.header_checksum)
    }

    /// Decrements TTL and refreshes the checksum, as a router does per hop.
    pub fn decrement_ttl(&mut self) {
        self.ttl = self.ttl.saturating_sub(1);
        self.header_checksum = self.compute_checksum();
    }

    pub fn decode(b: &[u8]) -> Result<Self, StackError> {
        if b.len() < IP_HEADER_LEN {
            return Err(StackError::Malformed("short Energy-IP header".into()));
        }
        if internet_checksum(&b[..IP_HEADER_LEN]) != 0 {
            return Err(StackError::ChecksumFailure);
        }
        let h = EnergyIpHeader {
            version: b[0] >> 4,
            header_length: b[0] & 0x0F,
            total_length: u16::from_be_bytes([b[2], b[3]]),
            identification: u16::from_be_bytes([b[4], b[5]]),
            static_limit_kwh: u16::from_be_bytes([b[6], b[7]]),
            ttl: b[8],
            protocol: b[9],
            header_checksum: u16::from_be_bytes([b[10], b[11]]),
            source: EnergyIpAddress(u32::from_be_bytes([b[12], b[13], b[14], b[15]])),
            destination: EnergyIpAddress(u32::from_be_bytes([b[16], b[17], b[18], b[19]])),
        };
        if h.version != IP_VERSION || h.header_length != 5 || h.protocol != PROTO_ENERGY_TCP {
            return Err(StackError::Malformed("unsupported Energy-IP header".into()));
        }
        Ok(h)
    }
}

/// TCP control bits. `NAK` reuses the URG position and asks the sender to
/// retransmit a segment that arrived corrupted.
#[derive(Clone, Copy, PartialEq, Eq, Default)]
pub struct TcpFlags(pub u8);

impl TcpFlags {
    pub const FIN: TcpFlags = TcpFlags(0x01);
    pub const SYN: TcpFlags = TcpFlags(0x02);
    pub const RST: TcpFlags = TcpFlags(0x04);
    pub const PSH: TcpFlags = TcpFlags(0x08);
    pub const ACK: TcpFlags = TcpFlags(0x10);
    pub const NAK: TcpFlags = TcpFlags(0x20);

    pub fn contains(self, other: TcpFlags) -> bool {
        self.0 & other.0 == other.0
    }

    pub fn label(self) -> &'static str {
        let syn = self.contains(Self::SYN);
        let ack = self.contains(Self::ACK);
        if self.contains(Self::RST) {
            "RST"
        } else if self.contains(Self::NAK) {
            "NAK"
        } else if syn && ack {
            "SYN-ACK"
        } else if syn {
            "SYN"
        } else if self.contains(Self::FIN) {
            "FIN"
        } else if self.contains(Self::PSH) {
            "DATA"
        } else if ack {
            "ACK"
        } else {
            "NONE"
        }
    }
}

impl std::ops::BitOr for TcpFlags {
    type Output = TcpFlags;
    fn bitor(self, rhs: TcpFlags) -> TcpFlags {
        TcpFlags(self.0 | rhs.0)
    }
}

impl fmt::Debug for TcpFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TcpFlags({})", self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnergyTcpHeader {
    pub source_port: u16,
    pub dest_port: u16,
    pub sequence: u32,
    pub ack_number: u32,
    pub flags: TcpFlags,
    /// Dynamic exchange limit, kWh.
    pub window: u16,
    pub checksum: u16,
}

impl EnergyTcpHeader {
    fn write(&self, checksum: u16) -> [u8; TCP_HEADER_LEN] {
        let mut b = [0u8; TCP_HEADER_LEN];
        b[0..2].copy_from_slice(&self.source_port.to_be_bytes());
        b[2..4].copy_from_slice(&self.dest_port.to_be_bytes());
        b[4..8].copy_from_slice(&self.sequence.to_be_bytes());
        b[8..12].copy_from_slice(&self.ack_number.to_be_bytes());
        b[12] = 5 << 4;
        b[13] = self.flags.0;
        b[14..16].copy_from_slice(&self.window.to_be_bytes());
        b[16..18].copy_from_slice(&checksum.to_be_bytes());
        b
    }

    /// Encodes header + payload with the segment checksum filled in.
    pub fn encode_segment(&self, payload: &[u8]) -> Vec<u8> {
        let mut seg = Vec::with_capacity(TCP_HEADER_LEN + payload.len());
        seg.extend_from_slice(&self.write(0));
        seg.extend_from_slice(payload);
        let c = internet_checksum(&seg);
        seg[16..18].copy_from_slice(&c.to_be_bytes());
        seg
    }

    /// Decodes a segment, verifying its checksum; returns header and payload.
    pub fn decode_segment(seg: &[u8]) -> Result<(Self, &[u8]), StackError> {
        if seg.len() < TCP_HEADER_LEN {
            return Err(StackError::Malformed("short Energy-TCP header".into()));
        }
        if internet_checksum(seg) != 0 {
            return Err(StackError::ChecksumFailure);
        }
        let h = EnergyTcpHeader {
            source_port: u16::from_be_bytes([seg[0], seg[1]]),
            dest_port: u16::from_be_bytes([seg[2], seg[3]]),
            sequence: u32::from_be_bytes([seg[4], seg[5], seg[6], seg[7]]),
            ack_number: u32::from_be_bytes([seg[8], seg[9], seg[10], seg[11]]),
            flags: TcpFlags(seg[13]),
            window: u16::from_be_bytes([seg[14], seg[15]]),
            checksum: u16::from_be_bytes([seg[16], seg[17]]),
        };
        if seg[12] >> 4 != 5 {
            return Err(StackError::Malformed("unsupported Energy-TCP data offset".into()));
        }
        Ok((h, &seg[TCP_HEADER_LEN..]))
    }
}

/// `a` is strictly after `b` in modulo-2^32 sequence space.
pub fn seq_after(a: u32, b: u32) -> bool {
    (a.wrapping_sub(b) as i32) > 0
}
