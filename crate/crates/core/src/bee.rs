//! Block of Energy Exchange (BEE): the record every participant exchanges.
//!
//! A BEE is nine domain entries (carrier, quantity, delivery start, duration,
//! price, carbon intensity, green fraction, grade, mass flow rate) plus a
//! version, a kind tag, the sender/receiver card addresses and a checksum.
//! On the wire it is a fixed 48-byte big-endian record; see `WIRE.md` at the
//! repository root for the layout.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checksum::internet_checksum;

/// Encoded size of one BEE record.
pub const BEE_LEN: usize = 48;

/// Current record version.
pub const BEE_VERSION: u8 = 1;

/// Upper bound on `green_fraction_bp`.
pub const MAX_GREEN_BP: u16 = 10_000;

const OFF_VERSION: usize = 0;
const OFF_KIND: usize = 1;
const OFF_CARRIER: usize = 2;
const OFF_PAD0: usize = 3;
const OFF_QUANTITY: usize = 4;
const OFF_START: usize = 8;
const OFF_DURATION: usize = 12;
const OFF_PRICE: usize = 14;
const OFF_CARBON: usize = 18;
const OFF_GREEN: usize = 20;
const OFF_GRADE: usize = 22;
const OFF_MASS_FLOW: usize = 24;
const OFF_PAD1: usize = 26;
const OFF_SENDER: usize = 28;
const OFF_RECEIVER: usize = 34;
const OFF_PAD2: usize = 40;
const OFF_CHECKSUM: usize = 46;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BeeError {
    #[error("BEE record must be {BEE_LEN} bytes, got {0}")]
    BadLength(usize),
    #[error("BEE checksum mismatch: stored {stored:#06x}, computed {computed:#06x}")]
    BadChecksum { stored: u16, computed: u16 },
    #[error("BEE invariant violated: {0}")]
    InvariantViolation(String),
    #[error("invalid hex encoding: {0}")]
    BadHex(String),
}

/// EUI-48 style identifier burned into an Energy Internet Card.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct MacAddress(pub [u8; 6]);

impl MacAddress {
    pub const ZERO: MacAddress = MacAddress([0; 6]);

    /// The all-zero address is reserved and never identifies a participant.
    pub fn is_valid(&self) -> bool {
        *self != Self::ZERO
    }

    pub fn octets(&self) -> [u8; 6] {
        self.0
    }

    /// Locally administered unicast address derived from a small index.
    /// Handy for tests and generated rosters.
    pub fn local(index: u32) -> MacAddress {
        let b = index.to_be_bytes();
        MacAddress([0x02, 0x00, b[0], b[1], b[2], b[3]])
    }
}

impl fmt::Display for MacAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let o = self.0;
        write!(
            f,
            "{:02x}:{:02x}:{:02x}:{:02x}:{:02x}:{:02x}",
            o[0], o[1], o[2], o[3], o[4], o[5]
        )
    }
}

impl fmt::Debug for MacAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MacAddress({self})")
    }
}

impl FromStr for MacAddress {
    type Err = BeeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split([':', '-']).collect();
        if parts.len() != 6 {
            return Err(BeeError::BadHex(format!("malformed MAC address {s:?}")));
        }
        let mut out = [0u8; 6];
        for (slot, part) in out.iter_mut().zip(parts) {
            *slot = u8::from_str_radix(part, 16)
                .map_err(|_| BeeError::BadHex(format!("malformed MAC address {s:?}")))?;
        }
        Ok(MacAddress(out))
    }
}

impl Serialize for MacAddress {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MacAddress {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum BeeKind {
    Offer = 0,
    Request = 1,
    Confirm = 2,
    Settle = 3,
}

impl BeeKind {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Self::Offer),
            1 => Some(Self::Request),
            2 => Some(Self::Confirm),
            3 => Some(Self::Settle),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Offer => "offer",
            Self::Request => "request",
            Self::Confirm => "confirm",
            Self::Settle => "settle",
        }
    }
}

impl FromStr for BeeKind {
    type Err = BeeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "offer" => Ok(Self::Offer),
            "request" => Ok(Self::Request),
            "confirm" => Ok(Self::Confirm),
            "settle" => Ok(Self::Settle),
            _ => Err(BeeError::InvariantViolation(format!("unknown kind {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Carrier {
    Electricity = 0,
    Heat = 1,
    Gas = 2,
    Hydrogen = 3,
}

impl Carrier {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Self::Electricity),
            1 => Some(Self::Heat),
            2 => Some(Self::Gas),
            3 => Some(Self::Hydrogen),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Electricity => "electricity",
            Self::Heat => "heat",
            Self::Gas => "gas",
            Self::Hydrogen => "hydrogen",
        }
    }
}

impl FromStr for Carrier {
    type Err = BeeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "electricity" => Ok(Self::Electricity),
            "heat" => Ok(Self::Heat),
            "gas" => Ok(Self::Gas),
            "hydrogen" => Ok(Self::Hydrogen),
            _ => Err(BeeError::InvariantViolation(format!("unknown carrier {s:?}"))),
        }
    }
}

/// One Block of Energy Exchange.
///
/// The checksum is not stored: it is a property of the encoding and is
/// recomputed by [`Bee::encode`] and verified by [`Bee::decode`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Bee {
    pub version: u8,
    pub kind: BeeKind,
    pub carrier: Carrier,
    pub quantity_wh: u32,
    /// Epoch seconds.
    pub delivery_start: u32,
    pub delivery_duration_min: u16,
    pub price_mcny_per_kwh: u32,
    pub carbon_intensity_g_per_kwh: u16,
    pub green_fraction_bp: u16,
    /// Carrier-specific scalar; 0 for electricity.
    pub grade: u16,
    /// Carrier-specific scalar; must be 0 for electricity.
    pub mass_flow_rate: u16,
    pub sender: MacAddress,
    pub receiver: MacAddress,
}

impl Bee {
    /// An electricity BEE with the remaining fields zeroed.
    pub fn electricity(
        kind: BeeKind,
        quantity_wh: u32,
        delivery_start: u32,
        delivery_duration_min: u16,
        price_mcny_per_kwh: u32,
        sender: MacAddress,
        receiver: MacAddress,
    ) -> Bee {
        Bee {
            version: BEE_VERSION,
            kind,
            carrier: Carrier::Electricity,
            quantity_wh,
            delivery_start,
            delivery_duration_min,
            price_mcny_per_kwh,
            carbon_intensity_g_per_kwh: 0,
            green_fraction_bp: 0,
            grade: 0,
            mass_flow_rate: 0,
            sender,
            receiver,
        }
    }

    pub fn validate(&self) -> Result<(), BeeError> {
        if self.green_fraction_bp > MAX_GREEN_BP {
            return Err(BeeError::InvariantViolation(format!(
                "green_fraction_bp {} exceeds {MAX_GREEN_BP}",
                self.green_fraction_bp
            )));
        }
        if self.quantity_wh == 0 && self.kind != BeeKind::Confirm {
            return Err(BeeError::InvariantViolation(format!(
                "quantity_wh must be positive for {}",
                self.kind.name()
            )));
        }
        if self.carrier == Carrier::Electricity && self.mass_flow_rate != 0 {
            return Err(BeeError::InvariantViolation(
                "electricity carries no mass flow rate".into(),
            ));
        }
        if self.delivery_duration_min == 0 {
            return Err(BeeError::InvariantViolation(
                "delivery_duration_min must be positive".into(),
            ));
        }
        Ok(())
    }

    /// End of the delivery window, epoch seconds (exclusive).
    pub fn delivery_end(&self) -> u64 {
        u64::from(self.delivery_start) + u64::from(self.delivery_duration_min) * 60
    }

    /// Payment for the whole quantity in micro-CNY (Wh x mCNY/kWh = uCNY).
    pub fn value_ucny(&self) -> i64 {
        i64::from(self.quantity_wh) * i64::from(self.price_mcny_per_kwh)
    }

    pub fn encode(&self) -> Result<[u8; BEE_LEN], BeeError> {
        self.validate()?;
        let mut buf = [0u8; BEE_LEN];
        buf[OFF_VERSION] = self.version;
        buf[OFF_KIND] = self.kind as u8;
        buf[OFF_CARRIER] = self.carrier as u8;
        buf[OFF_QUANTITY..OFF_QUANTITY + 4].copy_from_slice(&self.quantity_wh.to_be_bytes());
        buf[OFF_START..OFF_START + 4].copy_from_slice(&self.delivery_start.to_be_bytes());
        buf[OFF_DURATION..OFF_DURATION + 2]
            .copy_from_slice(&self.delivery_duration_min.to_be_bytes());
        buf[OFF_PRICE..OFF_PRICE + 4].copy_from_slice(&self.price_mcny_per_kwh.to_be_bytes());
        buf[OFF_CARBON..OFF_CARBON + 2]
            .copy_from_slice(&self.carbon_intensity_g_per_kwh.to_be_bytes());
        buf[OFF_GREEN..OFF_GREEN + 2].copy_from_slice(&self.green_fraction_bp.to_be_bytes());
        buf[OFF_GRADE..OFF_GRADE + 2].copy_from_slice(&self.grade.to_be_bytes());
        buf[OFF_MASS_FLOW..OFF_MASS_FLOW + 2].copy_from_slice(&self.mass_flow_rate.to_be_bytes());
        buf[OFF_SENDER..OFF_SENDER + 6].copy_from_slice(&self.sender.0);
        buf[OFF_RECEIVER..OFF_RECEIVER + 6].copy_from_slice(&self.receiver.0);
        let checksum = internet_checksum(&buf[..OFF_CHECKSUM]);
        buf[OFF_CHECKSUM..].copy_from_slice(&checksum.to_be_bytes());
        Ok(buf)
    }

    pub fn decode(bytes: &[u8]) -> Result<Bee, BeeError> {
        if bytes.len() != BEE_LEN {
            return Err(BeeError::BadLength(bytes.len()));
        }
        let stored = be16(bytes, OFF_CHECKSUM);
        let computed = internet_checksum(&bytes[..OFF_CHECKSUM]);
        if stored != computed {
            return Err(BeeError::BadChecksum { stored, computed });
        }
        let pads = [OFF_PAD0..OFF_PAD0 + 1, OFF_PAD1..OFF_PAD1 + 2, OFF_PAD2..OFF_PAD2 + 6];
        if pads.into_iter().any(|r| bytes[r].iter().any(|&b| b != 0)) {
            return Err(BeeError::InvariantViolation("non-zero padding".into()));
        }
        let kind = BeeKind::from_u8(bytes[OFF_KIND]).ok_or_else(|| {
            BeeError::InvariantViolation(format!("unknown kind tag {}", bytes[OFF_KIND]))
        })?;
        let carrier = Carrier::from_u8(bytes[OFF_CARRIER]).ok_or_else(|| {
            BeeError::InvariantViolation(format!("unknown carrier tag {}", bytes[OFF_CARRIER]))
        })?;
        let mut sender = [0u8; 6];
        sender.copy_from_slice(&bytes[OFF_SENDER..OFF_SENDER + 6]);
        let mut receiver = [0u8; 6];
        receiver.copy_from_slice(&bytes[OFF_RECEIVER..OFF_RECEIVER + 6]);
        let bee = Bee {
            version: bytes[OFF_VERSION],
            kind,
            carrier,
            quantity_wh: be32(bytes, OFF_QUANTITY),
            delivery_start: be32(bytes, OFF_START),
            delivery_duration_min: be16(bytes, OFF_DURATION),
            price_mcny_per_kwh: be32(bytes, OFF_PRICE),
            carbon_intensity_g_per_kwh: be16(bytes, OFF_CARBON),
            green_fraction_bp: be16(bytes, OFF_GREEN),
            grade: be16(bytes, OFF_GRADE),
            mass_flow_rate: be16(bytes, OFF_MASS_FLOW),
            sender: MacAddress(sender),
            receiver: MacAddress(receiver),
        };
        bee.validate()?;
        Ok(bee)
    }

    /// Checksum word the encoding of this BEE carries.
    pub fn checksum(&self) -> Result<u16, BeeError> {
        let buf = self.encode()?;
        Ok(be16(&buf, OFF_CHECKSUM))
    }

    pub fn to_hex(&self) -> Result<String, BeeError> {
        Ok(hex::encode(self.encode()?))
    }

    pub fn from_hex(s: &str) -> Result<Bee, BeeError> {
        let bytes = hex::decode(s.trim()).map_err(|e| BeeError::BadHex(e.to_string()))?;
        Bee::decode(&bytes)
    }
}

impl fmt::Display for Bee {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "version                 {}", self.version)?;
        writeln!(f, "kind                    {}", self.kind.name())?;
        writeln!(f, "carrier                 {}", self.carrier.name())?;
        writeln!(f, "quantity_wh             {}", self.quantity_wh)?;
        writeln!(f, "delivery_start          {}", self.delivery_start)?;
        writeln!(f, "delivery_duration_min   {}", self.delivery_duration_min)?;
        writeln!(f, "price_mcny_per_kwh      {}", self.price_mcny_per_kwh)?;
        writeln!(f, "carbon_g_per_kwh        {}", self.carbon_intensity_g_per_kwh)?;
        writeln!(f, "green_fraction_bp       {}", self.green_fraction_bp)?;
        writeln!(f, "grade                   {}", self.grade)?;
        writeln!(f, "mass_flow_rate          {}", self.mass_flow_rate)?;
        writeln!(f, "sender                  {}", self.sender)?;
        write!(f, "receiver                {}", self.receiver)
    }
}

fn be16(b: &[u8], off: usize) -> u16 {
    u16::from_be_bytes([b[off], b[off + 1]])
}

fn be32(b: &[u8], off: usize) -> u32 {
    u32::from_be_bytes([b[off], b[off + 1], b[off + 2], b[off + 3]])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checksum::ones_complement_sum;
    use proptest::prelude::*;

    fn zero_confirm() -> Bee {
        Bee {
            version: 0,
            kind: BeeKind::Confirm,
            carrier: Carrier::Electricity,
            quantity_wh: 0,
            delivery_start: 0,
            delivery_duration_min: 1,
            price_mcny_per_kwh: 0,
            carbon_intensity_g_per_kwh: 0,
            green_fraction_bp: 0,
            grade: 0,
            mass_flow_rate: 0,
            sender: MacAddress([2, 0, 0, 0, 0, 1]),
            receiver: MacAddress([2, 0, 0, 0, 0, 2]),
        }
    }

    pub(crate) fn arb_bee() -> impl Strategy<Value = Bee> {
        (
            any::<u8>(),
            0u8..4,
            0u8..4,
            1u32..,
            any::<u32>(),
            1u16..,
            any::<u32>(),
            any::<u16>(),
            0u16..=MAX_GREEN_BP,
            any::<u16>(),
            any::<u16>(),
            (any::<[u8; 6]>(), any::<[u8; 6]>()),
        )
            .prop_map(
                |(version, kind, carrier, q, start, dur, price, carbon, green, grade, flow, (s, r))| {
                    let carrier = Carrier::from_u8(carrier).unwrap();
                    Bee {
                        version,
                        kind: BeeKind::from_u8(kind).unwrap(),
                        carrier,
                        quantity_wh: q,
                        delivery_start: start,
                        delivery_duration_min: dur,
                        price_mcny_per_kwh: price,
                        carbon_intensity_g_per_kwh: carbon,
                        green_fraction_bp: green,
                        grade,
                        mass_flow_rate: if carrier == Carrier::Electricity { 0 } else { flow },
                        sender: MacAddress(s),
                        receiver: MacAddress(r),
                    }
                },
            )
    }

    #[test]
    fn zero_record_layout_and_checksum() {
        let bytes = zero_confirm().encode().unwrap();
        assert_eq!(bytes.len(), BEE_LEN);
        assert_eq!(bytes[1], 2);
        assert_eq!(&bytes[12..14], &[0, 1]);
        // Words: 0x0002 (kind) + 0x0001 (duration) + 0x0200 + 0x0001 (sender)
        // + 0x0200 + 0x0002 (receiver) = 0x0406.
        assert_eq!(u16::from_be_bytes([bytes[46], bytes[47]]), !0x0406u16);
        assert_eq!(zero_confirm().checksum().unwrap(), 0xFBF9);
        assert_eq!(ones_complement_sum(&bytes), 0xFFFF);
    }

    #[test]
    fn field_offsets_are_fixed() {
        let bee = Bee {
            version: 1,
            kind: BeeKind::Offer,
            carrier: Carrier::Heat,
            quantity_wh: 0x0102_0304,
            delivery_start: 0x0506_0708,
            delivery_duration_min: 0x090A,
            price_mcny_per_kwh: 0x0B0C_0D0E,
            carbon_intensity_g_per_kwh: 0x0F10,
            green_fraction_bp: 0x1112,
            grade: 0x1314,
            mass_flow_rate: 0x1516,
            sender: MacAddress([0xA1, 0xA2, 0xA3, 0xA4, 0xA5, 0xA6]),
            receiver: MacAddress([0xB1, 0xB2, 0xB3, 0xB4, 0xB5, 0xB6]),
        };
        let b = bee.encode().unwrap();
        assert_eq!(&b[0..4], &[1, 0, 1, 0]);
        assert_eq!(&b[4..8], &[1, 2, 3, 4]);
        assert_eq!(&b[8..12], &[5, 6, 7, 8]);
        assert_eq!(&b[12..14], &[9, 10]);
        assert_eq!(&b[14..18], &[11, 12, 13, 14]);
        assert_eq!(&b[18..20], &[15, 16]);
        assert_eq!(&b[20..22], &[0x11, 0x12]);
        assert_eq!(&b[22..24], &[0x13, 0x14]);
        assert_eq!(&b[24..26], &[0x15, 0x16]);
        assert_eq!(&b[26..28], &[0, 0]);
        assert_eq!(&b[28..34], &[0xA1, 0xA2, 0xA3, 0xA4, 0xA5, 0xA6]);
        assert_eq!(&b[34..40], &[0xB1, 0xB2, 0xB3, 0xB4, 0xB5, 0xB6]);
        assert_eq!(&b[40..46], &[0; 6]);
    }

    #[test]
    fn single_bit_flip_is_bad_checksum() {
        let bytes = zero_confirm().encode().unwrap();
        let mut bad = bytes;
        bad[5] ^= 0x10;
        assert!(matches!(Bee::decode(&bad), Err(BeeError::BadChecksum { .. })));
    }

    #[test]
    fn short_input_is_bad_length() {
        let bytes = zero_confirm().encode().unwrap();
        assert_eq!(Bee::decode(&bytes[..47]), Err(BeeError::BadLength(47)));
        assert_eq!(Bee::decode(&[]), Err(BeeError::BadLength(0)));
    }

    #[test]
    fn green_over_bound_with_valid_checksum_is_invariant_violation() {
        let mut bytes = zero_confirm().encode().unwrap();
        bytes[20..22].copy_from_slice(&10_001u16.to_be_bytes());
        let c = internet_checksum(&bytes[..46]);
        bytes[46..].copy_from_slice(&c.to_be_bytes());
        assert!(matches!(Bee::decode(&bytes), Err(BeeError::InvariantViolation(_))));
    }

    #[test]
    fn encode_rejects_invalid() {
        let mut b = zero_confirm();
        b.green_fraction_bp = 10_001;
        assert!(matches!(b.encode(), Err(BeeError::InvariantViolation(_))));
        let mut b = zero_confirm();
        b.kind = BeeKind::Offer;
        assert!(matches!(b.encode(), Err(BeeError::InvariantViolation(_))));
        let mut b = zero_confirm();
        b.mass_flow_rate = 3;
        assert!(b.encode().is_err());
        b.carrier = Carrier::Gas;
        assert!(b.encode().is_ok());
        let mut b = zero_confirm();
        b.delivery_duration_min = 0;
        assert!(b.encode().is_err());
    }

    #[test]
    fn unknown_tags_rejected() {
        let mut bytes = zero_confirm().encode().unwrap();
        bytes[1] = 9;
        let c = internet_checksum(&bytes[..46]);
        bytes[46..].copy_from_slice(&c.to_be_bytes());
        assert!(matches!(Bee::decode(&bytes), Err(BeeError::InvariantViolation(_))));
    }

    #[test]
    fn mac_parse_and_display() {
        let m: MacAddress = "02:00:00:00:0a:ff".parse().unwrap();
        assert_eq!(m.0, [2, 0, 0, 0, 10, 255]);
        assert_eq!(m.to_string(), "02:00:00:00:0a:ff");
        assert!("02:00:00".parse::<MacAddress>().is_err());
        assert!(!MacAddress::ZERO.is_valid());
        assert_eq!(MacAddress::local(258).0, [2, 0, 0, 0, 1, 2]);
    }

    #[test]
    fn hex_round_trip() {
        let b = zero_confirm();
        assert_eq!(Bee::from_hex(&b.to_hex().unwrap()).unwrap(), b);
        assert!(matches!(Bee::from_hex("zz"), Err(BeeError::BadHex(_))));
    }

    proptest! {
        #[test]
        fn round_trip_is_field_exact(bee in arb_bee()) {
            let bytes = bee.encode().unwrap();
            prop_assert_eq!(Bee::decode(&bytes).unwrap(), bee);
            prop_assert_eq!(bee.encode().unwrap(), bytes);
        }

        #[test]
        fn every_single_bit_flip_detected(bee in arb_bee(), bit in 0usize..(BEE_LEN * 8)) {
            let mut bytes = bee.encode().unwrap();
            bytes[bit / 8] ^= 1 << (bit % 8);
            prop_assert!(Bee::decode(&bytes).is_err());
        }
    }
}
