//! Link-layer framing: Ethernet-style header, Energy-IP/TCP payload and a
//! CRC-32 frame check sequence.

use super::headers::{EnergyIpHeader, EnergyTcpHeader, IP_HEADER_LEN};
use super::StackError;
use crate::bee::{MacAddress, BEE_LEN};

/// Local experimental ethertype used for energy frames.
pub const ETHERTYPE_ENERGY: u16 = 0x88B5;
pub const LINK_HEADER_LEN: usize = 14;
pub const FCS_LEN: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnergyFrame {
    pub dest_mac: MacAddress,
    pub src_mac: MacAddress,
    pub ethertype: u16,
    pub ip: EnergyIpHeader,
    pub tcp: EnergyTcpHeader,
    /// Encoded BEE carried by data segments.
    pub bee: Option<[u8; BEE_LEN]>,
}

impl EnergyFrame {
    /// Serialises the frame. The TCP checksum and the frame check sequence
    /// are computed here; the IP header is written as given.
    pub fn encode(&self) -> Vec<u8> {
        let payload: &[u8] = match &self.bee {
            Some(b) => b,
            None => &[],
        };
        let segment = self.tcp.encode_segment(payload);
        let mut out = Vec::with_capacity(LINK_HEADER_LEN + IP_HEADER_LEN + segment.len() + FCS_LEN);
        out.extend_from_slice(&self.dest_mac.0);
        out.extend_from_slice(&self.src_mac.0);
        out.extend_from_slice(&self.ethertype.to_be_bytes());
        out.extend_from_slice(&self.ip.encode());
        out.extend_from_slice(&segment);
        let fcs = crc32fast::hash(&out);
        out.extend_from_slice(&fcs.to_be_bytes());
        out
    }

    pub fn frame_check_ok(bytes: &[u8]) -> bool {
        if bytes.len() < LINK_HEADER_LEN + FCS_LEN {
            return false;
        }
        let (body, fcs) = bytes.split_at(bytes.len() - FCS_LEN);
        crc32fast::hash(body).to_be_bytes() == fcs
    }

    /// Parses and fully validates a frame: FCS, IP checksum and length, TCP
    /// checksum. The BEE payload is returned undecoded.
    pub fn decode(bytes: &[u8]) -> Result<EnergyFrame, StackError> {
        if !Self::frame_check_ok(bytes) {
            return Err(StackError::ChecksumFailure);
        }
        let body = &bytes[..bytes.len() - FCS_LEN];
        let mut dest = [0u8; 6];
        dest.copy_from_slice(&body[0..6]);
        let mut src = [0u8; 6];
        src.copy_from_slice(&body[6..12]);
        let ethertype = u16::from_be_bytes([body[12], body[13]]);
        if ethertype != ETHERTYPE_ENERGY {
            return Err(StackError::Malformed(format!("unexpected ethertype {ethertype:#06x}")));
        }
        let packet = &body[LINK_HEADER_LEN..];
        let ip = EnergyIpHeader::decode(packet)?;
        if usize::from(ip.total_length) != packet.len() {
            return Err(StackError::Malformed("Energy-IP total length mismatch".into()));
        }
        let (tcp, payload) = EnergyTcpHeader::decode_segment(&packet[IP_HEADER_LEN..])?;
        let bee = match payload.len() {
            0 => None,
            BEE_LEN => {
                let mut b = [0u8; BEE_LEN];
                b.copy_from_slice(payload);
                Some(b)
            }
            n => return Err(StackError::Malformed(format!("segment payload of {n} bytes"))),
        };
        Ok(EnergyFrame { dest_mac: MacAddress(dest), src_mac: MacAddress(src), ethertype, ip, tcp, bee })
    }
}

#[cfg(test)]
mod tests {
    use super::super::addr::EnergyIpAddress;
    use super::super::headers::{TcpFlags, TCP_HEADER_LEN};
    use super::*;
    use crate::bee::{Bee, BeeKind};

    fn sample() -> EnergyFrame {
        let bee = Bee::electricity(BeeKind::Settle, 5000, 0, 120, 400, MacAddress::local(1), MacAddress::local(2));
        let tcp = EnergyTcpHeader {
            source_port: 49152,
            dest_port: 4900,
            sequence: 1,
            ack_number: 0,
            flags: TcpFlags::ACK | TcpFlags::PSH,
            window: 8,
            checksum: 0,
        };
        let ip = EnergyIpHeader::new(
            EnergyIpAddress::new(10, 1, 1),
            EnergyIpAddress::new(10, 2, 1),
            TCP_HEADER_LEN + BEE_LEN,
            9,
            16,
            10,
        );
        EnergyFrame {
            dest_mac: MacAddress::local(100),
            src_mac: MacAddress::local(1),
            ethertype: ETHERTYPE_ENERGY,
            ip,
            tcp,
            bee: Some(bee.encode().unwrap()),
        }
    }

    #[test]
    fn data_frame_is_106_bytes_and_round_trips() {
        let f = sample();
        let bytes = f.encode();
        assert_eq!(bytes.len(), 14 + 20 + 20 + 48 + 4);
        let d = EnergyFrame::decode(&bytes).unwrap();
        assert_eq!(d.ip, f.ip);
        assert_eq!(d.bee, f.bee);
        assert_eq!(d.tcp.window, 8);
    }

    #[test]
    fn every_bit_flip_fails_frame_check() {
        let bytes = sample().encode();
        for bit in 0..bytes.len() * 8 {
            let mut b = bytes.clone();
            b[bit / 8] ^= 1 << (bit % 8);
            assert!(EnergyFrame::decode(&b).is_err(), "bit {bit}");
        }
    }

    #[test]
    fn length_mismatch_rejected() {
        let mut f = sample();
        f.ip = EnergyIpHeader::new(f.ip.source, f.ip.destination, 10, 9, 16, 10);
        assert!(matches!(EnergyFrame::decode(&f.encode()), Err(StackError::Malformed(_))));
    }
}
