//! Message framing and the payloads the monitor speaks.
//!
//! Every frame is a 24-byte header followed by the payload:
//!
//! ```text
//! magic (4) | command (12, NUL padded) | length (4, LE) | checksum (4)
//! ```
//!
//! The checksum is the first four bytes of `SHA256(SHA256(payload))`.
//! Integers are little-endian except ports, which are big-endian.

use std::fmt;

use sha2::{Digest, Sha256};
use thiserror::Error;

use super::address::{NetworkAddress, ServiceFlags};
use super::varint::{decode_varint, varint_len, write_varint, VarIntError};

/// Mainnet network magic.
pub const MAINNET_MAGIC: [u8; 4] = [0xf9, 0xbe, 0xb4, 0xd9];
/// Protocol version we advertise. Predates ADDRV2, so peers stay on v1 ADDR.
pub const PROTOCOL_VERSION: i32 = 70015;
/// Oldest peer version we keep a session with.
pub const MIN_PEER_VERSION: i32 = 31402;
pub const MAX_ADDR_ENTRIES: usize = 1000;
pub const MAX_USER_AGENT_LEN: usize = 256;
/// Frames declaring a longer payload are rejected before it is buffered.
pub const MAX_PAYLOAD_LEN: u32 = 4_000_000;
pub const HEADER_LEN: usize = 24;
/// timestamp (4) + services (8) + address (16) + port (2)
pub const ADDR_ENTRY_LEN: usize = 30;

const KNOWN_COMMANDS: &[&str] = &["version", "verack", "getaddr", "addr", "ping", "pong"];

/// A 12-byte command name: printable ASCII followed only by NUL padding.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct CommandName([u8; 12]);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid command name {0:?}")]
pub struct InvalidCommand(pub String);

impl CommandName {
    pub fn new(name: &str) -> Result<Self, InvalidCommand> {
        let bytes = name.as_bytes();
        if bytes.len() > 12 || !bytes.iter().all(|b| b.is_ascii_graphic()) {
            return Err(InvalidCommand(name.to_owned()));
        }
        let mut raw = [0u8; 12];
        raw[..bytes.len()].copy_from_slice(bytes);
        Ok(CommandName(raw))
    }

    /// Validates a raw header field: no byte after the first NUL may be
    /// non-NUL, and the name itself must be printable ASCII.
    pub fn from_wire(raw: [u8; 12]) -> Option<Self> {
        let end = raw.iter().position(|&b| b == 0).unwrap_or(12);
        if raw[end..].iter().any(|&b| b != 0) || !raw[..end].iter().all(|b| b.is_ascii_graphic()) {
            return None;
        }
        Some(CommandName(raw))
    }

    pub fn as_str(&self) -> &str {
        let end = self.0.iter().position(|&b| b == 0).unwrap_or(12);
        // Only printable ASCII is ever stored.
        std::str::from_utf8(&self.0[..end]).unwrap_or("")
    }

    pub fn as_bytes(&self) -> &[u8; 12] {
        &self.0
    }

    pub fn is_known(&self) -> bool {
        KNOWN_COMMANDS.contains(&self.as_str())
    }
}

impl fmt::Display for CommandName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Debug for CommandName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CommandName({:?})", self.as_str())
    }
}

/// Address as carried inside VERSION (no timestamp).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PeerEndpoint {
    pub services: ServiceFlags,
    pub address: NetworkAddress,
    pub port: u16,
}

impl PeerEndpoint {
    pub const UNSPECIFIED: PeerEndpoint = PeerEndpoint {
        services: ServiceFlags::NONE,
        address: NetworkAddress::UNSPECIFIED,
        port: 0,
    };
}

/// One ADDR entry: the unit every estimate is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AddrEntry {
    pub timestamp: u32,
    pub services: ServiceFlags,
    pub address: NetworkAddress,
    pub port: u16,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VersionMessage {
    pub version: i32,
    pub services: ServiceFlags,
    pub timestamp: i64,
    pub receiver: PeerEndpoint,
    pub sender: PeerEndpoint,
    pub nonce: u64,
    pub user_agent: String,
    pub start_height: i32,
    pub relay: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    Version(VersionMessage),
    Verack,
    Getaddr,
    Addr(Vec<AddrEntry>),
    Ping(u64),
    Pong(u64),
    Unknown { command: CommandName, payload: Vec<u8> },
}

impl Message {
    pub fn command(&self) -> CommandName {
        let name = match self {
            Message::Version(_) => "version",
            Message::Verack => "verack",
            Message::Getaddr => "getaddr",
            Message::Addr(_) => "addr",
            Message::Ping(_) => "ping",
            Message::Pong(_) => "pong",
            Message::Unknown { command, .. } => return *command,
        };
        CommandName::new(name).expect("static command names are valid")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MessageHeader {
    pub magic: [u8; 4],
    pub command: CommandName,
    pub length: u32,
    pub checksum: [u8; 4],
}

impl MessageHeader {
    pub fn encode(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[0..4].copy_from_slice(&self.magic);
        out[4..16].copy_from_slice(self.command.as_bytes());
        out[16..20].copy_from_slice(&self.length.to_le_bytes());
        out[20..24].copy_from_slice(&self.checksum);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncodeError {
    #[error("addr message has {0} entries, at most {MAX_ADDR_ENTRIES} allowed")]
    EntryCountExceeded(usize),
    #[error("user agent is {0} bytes, at most {MAX_USER_AGENT_LEN} allowed")]
    UserAgentTooLong(usize),
    #[error("`{0}` is a known command and cannot be sent as an opaque payload")]
    ReservedCommand(CommandName),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("bad magic {found:02x?}")]
    BadMagic { found: Vec<u8> },
    #[error("malformed command field {raw:02x?}")]
    MalformedCommand { raw: [u8; 12] },
    #[error("`{command}` frame declares {length} payload bytes")]
    OversizedPayload { command: CommandName, length: u32 },
    #[error("`{command}` frame checksum {declared:02x?} does not match payload ({computed:02x?})")]
    BadChecksum { command: CommandName, declared: [u8; 4], computed: [u8; 4] },
    #[error("malformed `{command}` payload: {reason}")]
    MalformedPayload { command: CommandName, reason: String },
}

impl DecodeError {
    /// Command of the frame that failed, when the header got that far.
    pub fn command(&self) -> Option<CommandName> {
        match self {
            DecodeError::BadMagic { .. } | DecodeError::MalformedCommand { .. } => None,
            DecodeError::OversizedPayload { command, .. }
            | DecodeError::BadChecksum { command, .. }
            | DecodeError::MalformedPayload { command, .. } => Some(*command),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Decoded {
    Frame { message: Message, consumed: usize },
    NeedMoreData,
}

/// First four bytes of `SHA256(SHA256(payload))`.
pub fn checksum(payload: &[u8]) -> [u8; 4] {
    let digest = Sha256::digest(Sha256::digest(payload));
    [digest[0], digest[1], digest[2], digest[3]]
}

pub fn encode_payload(msg: &Message) -> Result<Vec<u8>, EncodeError> {
    let mut out = Vec::new();
    match msg {
        Message::Version(v) => {
            if v.user_agent.len() > MAX_USER_AGENT_LEN {
                return Err(EncodeError::UserAgentTooLong(v.user_agent.len()));
            }
            out.extend_from_slice(&v.version.to_le_bytes());
            out.extend_from_slice(&v.services.0.to_le_bytes());
            out.extend_from_slice(&v.timestamp.to_le_bytes());
            write_endpoint(&mut out, &v.receiver);
            write_endpoint(&mut out, &v.sender);
            out.extend_from_slice(&v.nonce.to_le_bytes());
            write_varint(&mut out, v.user_agent.len() as u64);
            out.extend_from_slice(v.user_agent.as_bytes());
            out.extend_from_slice(&v.start_height.to_le_bytes());
            out.push(v.relay as u8);
        }
        Message::Verack | Message::Getaddr => {}
        Message::Addr(entries) => {
            if entries.len() > MAX_ADDR_ENTRIES {
                return Err(EncodeError::EntryCountExceeded(entries.len()));
            }
            out.reserve(varint_len(entries.len() as u64) + ADDR_ENTRY_LEN * entries.len());
            write_varint(&mut out, entries.len() as u64);
            for entry in entries {
                out.extend_from_slice(&entry.timestamp.to_le_bytes());
                out.extend_from_slice(&entry.services.0.to_le_bytes());
                out.extend_from_slice(entry.address.bytes());
                out.extend_from_slice(&entry.port.to_be_bytes());
            }
        }
        Message::Ping(nonce) | Message::Pong(nonce) => out.extend_from_slice(&nonce.to_le_bytes()),
        Message::Unknown { command, payload } => {
            if command.is_known() {
                return Err(EncodeError::ReservedCommand(*command));
            }
            out.extend_from_slice(payload);
        }
    }
    Ok(out)
}

fn write_endpoint(out: &mut Vec<u8>, ep: &PeerEndpoint) {
    out.extend_from_slice(&ep.services.0.to_le_bytes());
    out.extend_from_slice(ep.address.bytes());
    out.extend_from_slice(&ep.port.to_be_bytes());
}

/// Serializes `msg` into a complete frame (header ‖ payload).
pub fn encode_message(msg: &Message, magic: [u8; 4]) -> Result<Vec<u8>, EncodeError> {
    let payload = encode_payload(msg)?;
    let header = MessageHeader {
        magic,
        command: msg.command(),
        length: payload.len() as u32,
        checksum: checksum(&payload),
    };
    let mut frame = Vec::with_capacity(HEADER_LEN + payload.len());
    frame.extend_from_slice(&header.encode());
    frame.extend_from_slice(&payload);
    Ok(frame)
}

/// Decodes one frame from the front of `buf`. Never looks past the end of
/// that frame; callers drain `consumed` bytes and call again.
pub fn decode_message(buf: &[u8], expected_magic: [u8; 4]) -> Result<Decoded, DecodeError> {
    let seen = buf.len().min(4);
    if buf[..seen] != expected_magic[..seen] {
        return Err(DecodeError::BadMagic { found: buf[..seen].to_vec() });
    }
    if buf.len() < HEADER_LEN {
        return Ok(Decoded::NeedMoreData);
    }
    let raw: [u8; 12] = buf[4..16].try_into().expect("slice is 12 bytes");
    let command = CommandName::from_wire(raw).ok_or(DecodeError::MalformedCommand { raw })?;
    let length = u32::from_le_bytes(buf[16..20].try_into().expect("slice is 4 bytes"));
    if length > MAX_PAYLOAD_LEN {
        return Err(DecodeError::OversizedPayload { command, length });
    }
    let declared: [u8; 4] = buf[20..24].try_into().expect("slice is 4 bytes");
    let end = HEADER_LEN + length as usize;
    if buf.len() < end {
        return Ok(Decoded::NeedMoreData);
    }
    let payload = &buf[HEADER_LEN..end];
    let computed = checksum(payload);
    if computed != declared {
        return Err(DecodeError::BadChecksum { command, declared, computed });
    }
    let message = decode_payload(command, payload)
        .map_err(|reason| DecodeError::MalformedPayload { command, reason })?;
    Ok(Decoded::Frame { message, consumed: end })
}

fn decode_payload(command: CommandName, payload: &[u8]) -> Result<Message, String> {
    let mut r = Reader { buf: payload, pos: 0 };
    let msg = match command.as_str() {
        "version" => {
            let version = r.i32()?;
            let services = ServiceFlags(r.u64()?);
            let timestamp = r.i64()?;
            let receiver = r.endpoint()?;
            let sender = r.endpoint()?;
            let nonce = r.u64()?;
            let ua_len = r.varint()?;
            if ua_len > MAX_USER_AGENT_LEN as u64 {
                return Err(format!("user agent length {ua_len} exceeds {MAX_USER_AGENT_LEN}"));
            }
            let user_agent = String::from_utf8_lossy(r.take(ua_len as usize)?).into_owned();
            let start_height = r.i32()?;
            // The relay flag is absent from pre-BIP37 peers.
            let relay = if r.remaining() == 0 { true } else { r.take(1)?[0] != 0 };
            // Later protocol versions may append fields; they are ignored.
            r.pos = payload.len();
            Message::Version(VersionMessage {
                version,
                services,
                timestamp,
                receiver,
                sender,
                nonce,
                user_agent,
                start_height,
                relay,
            })
        }
        "verack" => Message::Verack,
        "getaddr" => Message::Getaddr,
        "addr" => {
            let count = r.varint()?;
            if count > MAX_ADDR_ENTRIES as u64 {
                return Err(format!("{count} entries exceeds {MAX_ADDR_ENTRIES}"));
            }
            let mut entries = Vec::with_capacity(count as usize);
            for _ in 0..count {
                let timestamp = r.u32()?;
                let services = ServiceFlags(r.u64()?);
                let address = r.address()?;
                let port = r.port()?;
                entries.push(AddrEntry { timestamp, services, address, port });
            }
            Message::Addr(entries)
        }
        "ping" => Message::Ping(r.u64()?),
        "pong" => Message::Pong(r.u64()?),
        _ => {
            r.pos = payload.len();
            Message::Unknown { command, payload: payload.to_vec() }
        }
    };
    if r.remaining() != 0 {
        return Err(format!("{} trailing bytes", r.remaining()));
    }
    Ok(msg)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        if self.remaining() < n {
            return Err(format!("truncated at byte {} (need {n} more)", self.pos));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], String> {
        Ok(self.take(N)?.try_into().expect("take returns N bytes"))
    }

    fn u32(&mut self) -> Result<u32, String> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn i32(&mut self) -> Result<i32, String> {
        Ok(i32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64, String> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn i64(&mut self) -> Result<i64, String> {
        Ok(i64::from_le_bytes(self.array()?))
    }

    fn port(&mut self) -> Result<u16, String> {
        Ok(u16::from_be_bytes(self.array()?))
    }

    fn address(&mut self) -> Result<NetworkAddress, String> {
        Ok(NetworkAddress::from_bytes(self.array()?))
    }

    fn endpoint(&mut self) -> Result<PeerEndpoint, String> {
        let services = ServiceFlags(self.u64()?);
        let address = self.address()?;
        let port = self.port()?;
        Ok(PeerEndpoint { services, address, port })
    }

    fn varint(&mut self) -> Result<u64, String> {
        let (n, used) = decode_varint(&self.buf[self.pos..]).map_err(|e| match e {
            VarIntError::NonCanonicalVarint => "non-canonical compact-size integer".to_owned(),
            VarIntError::Truncated => format!("truncated compact-size integer at byte {}", self.pos),
        })?;
        self.pos += used;
        Ok(n)
    }
}
