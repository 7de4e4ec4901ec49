//! Passive monitor: connects out to every reachable address it learns,
//! never relays anything and logs every connection and ADDR message.

mod book;
mod core;
mod log;
mod net;

pub use self::book::{AddressBook, AddressSource, BookEntry};
pub use self::core::{
    classify_solicited, ConfigError, Monitor, MonitorConfig, MonitorError, SolicitState, Transport, SMALL_ADDR_MAX,
};
pub use self::log::{
    parse_json_line, to_json_line, EventKind, EventSink, JsonLogWriter, LogReader, MalformedRecord, MonitorEvent,
    NullSink, PeerAddr, RecordError, SessionId, Tee,
};
pub use self::net::{run_monitor, run_until};
