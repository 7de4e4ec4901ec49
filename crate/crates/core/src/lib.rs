//! Passive Announcement Listening: count unreachable Bitcoin peers by
//! listening to the self-announcements the network relays.
//!
//! * [`codec`]: wire format of the messages involved.
//! * [`monitor`]: the passive monitor node and its event log.
//! * [`analysis`]: daily peer sets and reports from event logs.
//! * [`sim`]: gossip simulator with ground truth for evaluating the method.
//! * [`cli`]: the `addrscope` command.

pub mod analysis;
pub mod cli;
pub mod codec;
pub mod monitor;
pub mod sim;

pub use sim::end_to_end;
