//! Byte-exact encoder/decoder for the subset of the Bitcoin P2P protocol
//! used by the monitor (VERSION, VERACK, GETADDR, v1 ADDR, PING, PONG),
//! plus the address and service predicates that address relay depends on.
//!
//! Everything here is a pure function over byte buffers.

mod address;
mod message;
mod varint;

pub use address::{
    has_useful_services, is_routable, AddressKind, NetworkAddress, ServiceFlags, NON_ROUTABLE_V4,
    NON_ROUTABLE_V6,
};
pub use message::{
    checksum, decode_message, encode_message, encode_payload, AddrEntry, CommandName, DecodeError,
    Decoded, EncodeError, InvalidCommand, Message, MessageHeader, PeerEndpoint, VersionMessage,
    ADDR_ENTRY_LEN, HEADER_LEN, MAINNET_MAGIC, MAX_ADDR_ENTRIES, MAX_PAYLOAD_LEN,
    MAX_USER_AGENT_LEN, MIN_PEER_VERSION, PROTOCOL_VERSION,
};
pub use varint::{decode_varint, encode_varint, varint_len, write_varint, VarIntError};
