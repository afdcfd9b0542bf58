use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub const HOST_BITS: u32 = 12;
pub const SUBNET_BITS: u32 = 12;
pub const MAX_HOST: u16 = (1 << HOST_BITS) - 1;
pub const MAX_SUBNET: u16 = (1 << SUBNET_BITS) - 1;

/// Prefix length that identifies one Energy LAN (`wan | subnet`).
pub const LAN_PREFIX_LEN: u8 = 20;

/// 32-bit Energy IP address laid out as `wan_prefix(8) | lan_subnet(12) | host(12)`.
///
/// Host 0 of every subnet belongs to the LAN's router.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct EnergyIpAddress(pub u32);

impl EnergyIpAddress {
    pub fn new(wan: u8, subnet: u16, host: u16) -> Self {
        assert!(subnet <= MAX_SUBNET && host <= MAX_HOST, "address field out of range");
        EnergyIpAddress(
            (u32::from(wan) << (SUBNET_BITS + HOST_BITS)) | (u32::from(subnet) << HOST_BITS) | u32::from(host),
        )
    }

    pub fn wan(&self) -> u8 {
        (self.0 >> (SUBNET_BITS + HOST_BITS)) as u8
    }

    pub fn subnet(&self) -> u16 {
        ((self.0 >> HOST_BITS) & u32::from(MAX_SUBNET)) as u16
    }

    pub fn host(&self) -> u16 {
        (self.0 & u32::from(MAX_HOST)) as u16
    }

    pub fn is_router(&self) -> bool {
        self.host() == 0
    }

    pub fn lan(&self) -> LanId {
        LanId { wan: self.wan(), subnet: self.subnet() }
    }

    pub fn matches(&self, prefix: u32, len: u8) -> bool {
        let mask = prefix_mask(len);
        self.0 & mask == prefix & mask
    }
}

pub fn prefix_mask(len: u8) -> u32 {
    match len {
        0 => 0,
        l if l >= 32 => u32::MAX,
        l => u32::MAX << (32 - u32::from(l)),
    }
}

impl fmt::Display for EnergyIpAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}.{}", self.wan(), self.subnet(), self.host())
    }
}

impl fmt::Debug for EnergyIpAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "eip({self})")
    }
}

impl FromStr for EnergyIpAddress {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split('.').collect();
        if parts.len() != 3 {
            return Err(format!("expected wan.subnet.host, got {s:?}"));
        }
        let wan: u8 = parts[0].parse().map_err(|_| format!("bad wan field in {s:?}"))?;
        let subnet: u16 = parts[1].parse().map_err(|_| format!("bad subnet field in {s:?}"))?;
        let host: u16 = parts[2].parse().map_err(|_| format!("bad host field in {s:?}"))?;
        if subnet > MAX_SUBNET || host > MAX_HOST {
            return Err(format!("field out of range in {s:?}"));
        }
        Ok(EnergyIpAddress::new(wan, subnet, host))
    }
}

/// One Energy LAN: the `wan | subnet` part of an address.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub struct LanId {
    pub wan: u8,
    pub subnet: u16,
}

impl LanId {
    pub fn router_eip(&self) -> EnergyIpAddress {
        EnergyIpAddress::new(self.wan, self.subnet, 0)
    }

    pub fn prefix(&self) -> u32 {
        self.router_eip().0
    }

    pub fn contains(&self, eip: EnergyIpAddress) -> bool {
        eip.lan() == *self
    }
}

impl fmt::Display for LanId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}.0/{}", self.wan, self.subnet, LAN_PREFIX_LEN)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_partition() {
        let a = EnergyIpAddress::new(10, 0xABC, 0x123);
        assert_eq!(a.0, (10 << 24) | (0xABC << 12) | 0x123);
        assert_eq!((a.wan(), a.subnet(), a.host()), (10, 0xABC, 0x123));
        assert_eq!(a.to_string(), "10.2748.291");
        assert_eq!("10.2748.291".parse::<EnergyIpAddress>().unwrap(), a);
        assert!(EnergyIpAddress::new(1, 2, 0).is_router());
    }

    #[test]
    fn prefix_matching() {
        let lan = LanId { wan: 10, subnet: 3 };
        let a = EnergyIpAddress::new(10, 3, 17);
        assert!(a.matches(lan.prefix(), LAN_PREFIX_LEN));
        assert!(a.matches(10 << 24, 8));
        assert!(!EnergyIpAddress::new(10, 4, 17).matches(lan.prefix(), LAN_PREFIX_LEN));
        assert!(a.matches(0, 0));
        assert!(lan.contains(a));
        assert_eq!(prefix_mask(32), u32::MAX);
    }

    #[test]
    fn rejects_malformed() {
        assert!("1.2".parse::<EnergyIpAddress>().is_err());
        assert!("1.4096.0".parse::<EnergyIpAddress>().is_err());
        assert!("300.1.1".parse::<EnergyIpAddress>().is_err());
    }
}
