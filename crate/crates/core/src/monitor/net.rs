//! Tokio driver: one task per TCP session, one loop owning the [`Monitor`].

use std::collections::HashMap;
use std::fs::OpenOptions;
use std::future::Future;
use std::io::LineWriter;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::TcpStream;
use tokio::sync::mpsc::{unbounded_channel, UnboundedReceiver, UnboundedSender};
use tokio::task::AbortHandle;

use super::core::{Monitor, MonitorConfig, MonitorError, Transport};
use super::log::{JsonLogWriter, PeerAddr, SessionId};
use crate::codec::{decode_message, encode_message, Decoded, Message};

#[derive(Debug)]
enum NetEvent {
    Connected(SessionId),
    ConnectFailed(SessionId, String),
    Received(SessionId, Message),
    Closed(SessionId, String),
}

struct TokioTransport {
    events: UnboundedSender<NetEvent>,
    writers: HashMap<SessionId, UnboundedSender<Message>>,
    tasks: HashMap<SessionId, AbortHandle>,
    magic: [u8; 4],
    connect_timeout: Duration,
}

impl TokioTransport {
    fn forget(&mut self, session: SessionId) {
        self.writers.remove(&session);
        if let Some(handle) = self.tasks.remove(&session) {
            handle.abort();
        }
    }
}

impl Transport for TokioTransport {
    fn connect(&mut self, session: SessionId, remote: PeerAddr) {
        let (tx, rx) = unbounded_channel();
        self.writers.insert(session, tx);
        let task = tokio::spawn(run_session(
            session,
            remote,
            self.magic,
            self.connect_timeout,
            self.events.clone(),
            rx,
        ));
        self.tasks.insert(session, task.abort_handle());
    }

    fn send(&mut self, session: SessionId, message: Message) {
        if let Some(tx) = self.writers.get(&session) {
            let _ = tx.send(message);
        }
    }

    fn disconnect(&mut self, session: SessionId) {
        self.forget(session);
    }
}

async fn run_session(
    session: SessionId,
    remote: PeerAddr,
    magic: [u8; 4],
    connect_timeout: Duration,
    events: UnboundedSender<NetEvent>,
    mut outgoing: UnboundedReceiver<Message>,
) {
    let stream = match tokio::time::timeout(connect_timeout, TcpStream::connect(remote.socket_addr())).await {
        Ok(Ok(s)) => s,
        Ok(Err(e)) => {
            let _ = events.send(NetEvent::ConnectFailed(session, e.to_string()));
            return;
        }
        Err(_) => {
            let _ = events.send(NetEvent::ConnectFailed(session, "connect timeout".into()));
            return;
        }
    };
    let _ = events.send(NetEvent::Connected(session));
    let (mut reader, mut writer) = stream.into_split();
    let mut buf: Vec<u8> = Vec::with_capacity(64 * 1024);
    let mut chunk = vec![0u8; 64 * 1024];
    let reason = loop {
        tokio::select! {
            read = reader.read(&mut chunk) => {
                let n = match read {
                    Ok(0) => break "closed by peer".to_owned(),
                    Ok(n) => n,
                    Err(e) => break e.to_string(),
                };
                buf.extend_from_slice(&chunk[..n]);
                let mut failure = None;
                loop {
                    match decode_message(&buf, magic) {
                        Ok(Decoded::Frame { message, consumed }) => {
                            buf.drain(..consumed);
                            let _ = events.send(NetEvent::Received(session, message));
                        }
                        Ok(Decoded::NeedMoreData) => break,
                        Err(e) => {
                            failure = Some(format!("protocol error: {e}"));
                            break;
                        }
                    }
                }
                if let Some(reason) = failure {
                    break reason;
                }
            }
            msg = outgoing.recv() => {
                let Some(msg) = msg else { return };
                let bytes = match encode_message(&msg, magic) {
                    Ok(b) => b,
                    Err(e) => {
                        log::warn!("dropping unencodable {} to {remote}: {e}", msg.command());
                        continue;
                    }
                };
                if let Err(e) = writer.write_all(&bytes).await {
                    break e.to_string();
                }
            }
        }
    };
    let _ = events.send(NetEvent::Closed(session, reason));
}

fn wall_clock_ms() -> i64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as i64)
}

/// Runs the monitor until `shutdown` resolves, appending events to
/// `config.log_path`.
pub async fn run_until<F: Future>(config: MonitorConfig, shutdown: F) -> Result<(), MonitorError> {
    config.validate()?;
    let file = OpenOptions::new().create(true).append(true).open(&config.log_path)?;
    let log = JsonLogWriter::new(LineWriter::new(file));
    let (tx, mut rx) = unbounded_channel();
    let transport = TokioTransport {
        events: tx,
        writers: HashMap::new(),
        tasks: HashMap::new(),
        magic: config.magic,
        connect_timeout: config.connect_timeout,
    };
    let mut monitor = Monitor::new(config, transport, log, rand::random())?;
    monitor.start(wall_clock_ms())?;
    let mut tick = tokio::time::interval(Duration::from_secs(1));
    tick.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    tokio::pin!(shutdown);
    loop {
        tokio::select! {
            _ = &mut shutdown => break,
            _ = tick.tick() => monitor.on_tick(wall_clock_ms())?,
            Some(event) = rx.recv() => {
                let now = wall_clock_ms();
                match event {
                    NetEvent::Connected(s) => monitor.on_connected(s, now)?,
                    NetEvent::ConnectFailed(s, reason) => {
                        monitor.transport_mut().forget(s);
                        monitor.on_connect_failed(s, Some(reason), now)?;
                    }
                    NetEvent::Received(s, msg) => monitor.on_message(s, msg, now)?,
                    NetEvent::Closed(s, reason) => {
                        monitor.transport_mut().forget(s);
                        monitor.on_disconnected(s, Some(reason), now)?;
                    }
                }
            }
        }
    }
    log::info!("shutting down with {} sessions open", monitor.session_count());
    monitor.log_mut().flush()?;
    Ok(())
}

/// Runs the monitor until Ctrl-C.
pub async fn run_monitor(config: MonitorConfig) -> Result<(), MonitorError> {
    run_until(config, async {
        let _ = tokio::signal::ctrl_c().await;
    })
    .await
}
