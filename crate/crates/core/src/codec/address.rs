//! Peer addresses and service flags as they appear on the wire.

use std::fmt;
use std::net::{IpAddr, Ipv4Addr, Ipv6Addr, SocketAddr};
use std::ops::{BitAnd, BitOr, BitOrAssign};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Prefix of IPv4-mapped IPv6 addresses (`::ffff:0:0/96`).
const IPV4_MAPPED_PREFIX: [u8; 12] = [0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0xff, 0xff];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AddressKind {
    Ipv4,
    Ipv6,
}

/// A 16-byte network address. IPv4 addresses are stored in their
/// IPv4-mapped IPv6 form, so the kind is a function of the bytes.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NetworkAddress([u8; 16]);

impl NetworkAddress {
    pub const UNSPECIFIED: NetworkAddress = NetworkAddress([0; 16]);

    pub const fn from_bytes(bytes: [u8; 16]) -> Self {
        NetworkAddress(bytes)
    }

    pub fn from_ipv4(addr: Ipv4Addr) -> Self {
        NetworkAddress(addr.to_ipv6_mapped().octets())
    }

    pub fn from_ipv6(addr: Ipv6Addr) -> Self {
        NetworkAddress(addr.octets())
    }

    pub fn bytes(&self) -> &[u8; 16] {
        &self.0
    }

    pub fn kind(&self) -> AddressKind {
        if self.0[..12] == IPV4_MAPPED_PREFIX {
            AddressKind::Ipv4
        } else {
            AddressKind::Ipv6
        }
    }

    pub fn to_ipv4(&self) -> Option<Ipv4Addr> {
        match self.kind() {
            AddressKind::Ipv4 => Some(Ipv4Addr::new(self.0[12], self.0[13], self.0[14], self.0[15])),
            AddressKind::Ipv6 => None,
        }
    }

    pub fn ip(&self) -> IpAddr {
        match self.to_ipv4() {
            Some(v4) => IpAddr::V4(v4),
            None => IpAddr::V6(Ipv6Addr::from(self.0)),
        }
    }

    pub fn socket_addr(&self, port: u16) -> SocketAddr {
        SocketAddr::new(self.ip(), port)
    }
}

impl From<IpAddr> for NetworkAddress {
    fn from(ip: IpAddr) -> Self {
        match ip {
            IpAddr::V4(v4) => NetworkAddress::from_ipv4(v4),
            IpAddr::V6(v6) => match v6.to_ipv4_mapped() {
                Some(v4) => NetworkAddress::from_ipv4(v4),
                None => NetworkAddress::from_ipv6(v6),
            },
        }
    }
}

impl From<Ipv4Addr> for NetworkAddress {
    fn from(ip: Ipv4Addr) -> Self {
        NetworkAddress::from_ipv4(ip)
    }
}

impl From<Ipv6Addr> for NetworkAddress {
    fn from(ip: Ipv6Addr) -> Self {
        NetworkAddress::from(IpAddr::V6(ip))
    }
}

/// Canonical text: dotted quad for IPv4, RFC 5952 for IPv6.
impl fmt::Display for NetworkAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.ip().fmt(f)
    }
}

impl fmt::Debug for NetworkAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "NetworkAddress({})", self)
    }
}

impl FromStr for NetworkAddress {
    type Err = std::net::AddrParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.parse::<IpAddr>().map(NetworkAddress::from)
    }
}

impl Serialize for NetworkAddress {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for NetworkAddress {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = <std::borrow::Cow<'de, str>>::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Service bits advertised by a peer. Unknown bits are carried through
/// untouched.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ServiceFlags(pub u64);

impl ServiceFlags {
    pub const NONE: ServiceFlags = ServiceFlags(0);
    pub const NODE_NETWORK: ServiceFlags = ServiceFlags(1 << 0);
    pub const NODE_WITNESS: ServiceFlags = ServiceFlags(1 << 3);
    pub const NODE_NETWORK_LIMITED: ServiceFlags = ServiceFlags(1 << 10);

    pub fn bits(self) -> u64 {
        self.0
    }

    pub fn contains(self, other: ServiceFlags) -> bool {
        self.0 & other.0 == other.0
    }
}

impl BitOr for ServiceFlags {
    type Output = ServiceFlags;
    fn bitor(self, rhs: ServiceFlags) -> ServiceFlags {
        ServiceFlags(self.0 | rhs.0)
    }
}

impl BitOrAssign for ServiceFlags {
    fn bitor_assign(&mut self, rhs: ServiceFlags) {
        self.0 |= rhs.0;
    }
}

impl BitAnd for ServiceFlags {
    type Output = ServiceFlags;
    fn bitand(self, rhs: ServiceFlags) -> ServiceFlags {
        ServiceFlags(self.0 & rhs.0)
    }
}

impl fmt::Debug for ServiceFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ServiceFlags({:#x})", self.0)
    }
}

/// Whether an address with these services is eligible for relay:
/// `NODE_WITNESS && (NODE_NETWORK || NODE_NETWORK_LIMITED)`.
pub fn has_useful_services(flags: ServiceFlags) -> bool {
    flags.contains(ServiceFlags::NODE_WITNESS)
        && (flags.contains(ServiceFlags::NODE_NETWORK)
            || flags.contains(ServiceFlags::NODE_NETWORK_LIMITED))
}

/// IPv4 blocks that are never routable on the public internet.
pub const NON_ROUTABLE_V4: &[(Ipv4Addr, u8)] = &[
    (Ipv4Addr::new(0, 0, 0, 0), 8),       // "this network"
    (Ipv4Addr::new(10, 0, 0, 0), 8),      // RFC 1918
    (Ipv4Addr::new(100, 64, 0, 0), 10),   // RFC 6598 shared address space
    (Ipv4Addr::new(127, 0, 0, 0), 8),     // loopback
    (Ipv4Addr::new(169, 254, 0, 0), 16),  // RFC 3927 link-local
    (Ipv4Addr::new(172, 16, 0, 0), 12),   // RFC 1918
    (Ipv4Addr::new(192, 0, 0, 0), 24),    // IETF protocol assignments
    (Ipv4Addr::new(192, 0, 2, 0), 24),    // RFC 5737 TEST-NET-1
    (Ipv4Addr::new(192, 168, 0, 0), 16),  // RFC 1918
    (Ipv4Addr::new(198, 18, 0, 0), 15),   // RFC 2544 benchmarking
    (Ipv4Addr::new(198, 51, 100, 0), 24), // RFC 5737 TEST-NET-2
    (Ipv4Addr::new(203, 0, 113, 0), 24),  // RFC 5737 TEST-NET-3
    (Ipv4Addr::new(224, 0, 0, 0), 4),     // multicast
    (Ipv4Addr::new(240, 0, 0, 0), 4),     // reserved, incl. broadcast
];

/// IPv6 blocks that are never routable on the public internet.
/// `::ffff:0:0/96` is absent because mapped addresses are judged as IPv4.
pub const NON_ROUTABLE_V6: &[(Ipv6Addr, u8)] = &[
    (Ipv6Addr::new(0, 0, 0, 0, 0, 0, 0, 0), 128),      // unspecified
    (Ipv6Addr::new(0, 0, 0, 0, 0, 0, 0, 1), 128),      // loopback
    (Ipv6Addr::new(0x0100, 0, 0, 0, 0, 0, 0, 0), 64),  // RFC 6666 discard
    (Ipv6Addr::new(0x2001, 0x10, 0, 0, 0, 0, 0, 0), 28), // RFC 4843 ORCHID
    (Ipv6Addr::new(0x2001, 0x20, 0, 0, 0, 0, 0, 0), 28), // RFC 7343 ORCHIDv2
    (Ipv6Addr::new(0x2001, 0xdb8, 0, 0, 0, 0, 0, 0), 32), // RFC 3849 documentation
    (Ipv6Addr::new(0xfc00, 0, 0, 0, 0, 0, 0, 0), 7),   // RFC 4193 unique local
    (Ipv6Addr::new(0xfe80, 0, 0, 0, 0, 0, 0, 0), 10),  // link-local
    (Ipv6Addr::new(0xff00, 0, 0, 0, 0, 0, 0, 0), 8),   // multicast
];

fn v4_in(addr: Ipv4Addr, (net, len): (Ipv4Addr, u8)) -> bool {
    let mask = if len == 0 { 0 } else { u32::MAX << (32 - len) };
    u32::from(addr) & mask == u32::from(net) & mask
}

fn v6_in(addr: Ipv6Addr, (net, len): (Ipv6Addr, u8)) -> bool {
    let mask = if len == 0 { 0 } else { u128::MAX << (128 - len) };
    u128::from(addr) & mask == u128::from(net) & mask
}

/// Whether the address lies outside every private, loopback, link-local,
/// documentation and otherwise reserved range.
pub fn is_routable(addr: &NetworkAddress) -> bool {
    match addr.to_ipv4() {
        Some(v4) => !NON_ROUTABLE_V4.iter().any(|&block| v4_in(v4, block)),
        None => {
            let v6 = Ipv6Addr::from(*addr.bytes());
            !NON_ROUTABLE_V6.iter().any(|&block| v6_in(v6, block))
        }
    }
}
