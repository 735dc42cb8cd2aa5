use std::collections::BTreeSet;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, TryRecvError};
use std::time::{Duration, Instant};

use serde::Serialize;

use super::wire::{decode, encode, BrickDescriptor, WireMessage};
use super::{ExternalError, ExternalOptions};
use crate::flow::{BrickSpec, Transport};
use crate::packet::PacketId;
use crate::scalar::Fields;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum HandleState {
    Spawning,
    Handshaking,
    Ready,
    Failed,
    Stopped,
}

enum ReaderEvent {
    Line(String),
    Invalid(String),
    Eof,
}

/// Output of one packet delivery.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Delivery {
    pub emissions: Vec<(String, Fields)>,
    pub signals: Vec<(String, Fields)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DeliverError {
    /// The brick reported an error for this packet.
    Brick { code: String, message: String },
    /// The brick broke the protocol.
    Protocol(String),
    /// The brick's process exited or its connection closed.
    Crashed(String),
    Timeout,
}

/// A live connection to one external brick process.
pub struct ExternalHandle {
    state: HandleState,
    descriptor: BrickDescriptor,
    writer: Box<dyn Write + Send>,
    rx: Receiver<ReaderEvent>,
    child: Option<Child>,
    tcp: Option<TcpStream>,
    outstanding_ping: Option<u64>,
    ping_seq: u64,
    missed_pongs: u32,
    last_activity: Instant,
}

fn spawn_reader<R: Read + Send + 'static>(src: R) -> Receiver<ReaderEvent> {
    let (tx, rx) = channel();
    std::thread::spawn(move || {
        let mut reader = BufReader::new(src);
        let mut buf = Vec::new();
        loop {
            buf.clear();
            match reader.read_until(b'\n', &mut buf) {
                Ok(0) | Err(_) => {
                    let _ = tx.send(ReaderEvent::Eof);
                    return;
                }
                Ok(_) => {}
            }
            let ev = if buf.last() != Some(&b'\n') {
                ReaderEvent::Invalid("line not terminated by \\n".into())
            } else {
                buf.pop();
                match String::from_utf8(std::mem::take(&mut buf)) {
                    Ok(s) => ReaderEvent::Line(s),
                    Err(_) => ReaderEvent::Invalid("line is not valid UTF-8".into()),
                }
            };
            if tx.send(ev).is_err() {
                return;
            }
        }
    });
    rx
}

impl ExternalHandle {
    /// Start (or connect to) the brick, wait for `hello`, check it against
    /// `spec`, and send `config`.
    pub fn spawn(spec: &BrickSpec, transport: Transport, endpoint: &str, opts: &ExternalOptions) -> Result<Self, ExternalError> {
        let mut tcp = None;
        let (writer, rx, child): (Box<dyn Write + Send>, _, _) = match transport {
            Transport::Stdio => {
                let mut parts = endpoint.split_whitespace();
                let program = parts.next().ok_or_else(|| ExternalError::SpawnFailed("empty command".into()))?;
                let mut child = Command::new(program)
                    .args(parts)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()
                    .map_err(|e| ExternalError::SpawnFailed(format!("{program}: {e}")))?;
                let stdin = child.stdin.take().expect("piped stdin");
                let stdout = child.stdout.take().expect("piped stdout");
                (Box::new(stdin), spawn_reader(stdout), Some(child))
            }
            Transport::Tcp => {
                let addr = endpoint
                    .to_socket_addrs()
                    .map_err(|e| ExternalError::SpawnFailed(format!("{endpoint}: {e}")))?
                    .next()
                    .ok_or_else(|| ExternalError::SpawnFailed(format!("{endpoint}: no address")))?;
                let stream = TcpStream::connect_timeout(&addr, opts.handshake_timeout)
                    .map_err(|e| ExternalError::SpawnFailed(format!("{endpoint}: {e}")))?;
                let _ = stream.set_nodelay(true);
                let read_half = stream.try_clone().map_err(|e| ExternalError::SpawnFailed(e.to_string()))?;
                tcp = stream.try_clone().ok();
                (Box::new(stream), spawn_reader(read_half), None)
            }
        };

        let mut h = ExternalHandle {
            state: HandleState::Handshaking,
            descriptor: BrickDescriptor { name: String::new(), kind: spec.kind, in_ports: vec![], out_ports: vec![] },
            writer,
            rx,
            child,
            tcp,
            outstanding_ping: None,
            ping_seq: 0,
            missed_pongs: 0,
            last_activity: Instant::now(),
        };
        match h.handshake(spec, opts) {
            Ok(()) => {
                h.state = HandleState::Ready;
                Ok(h)
            }
            Err(e) => {
                if let ExternalError::HandshakeMismatch(m) | ExternalError::Protocol(m) = &e {
                    h.send_error("handshake", m);
                }
                h.kill();
                Err(e)
            }
        }
    }

    fn handshake(&mut self, spec: &BrickSpec, opts: &ExternalOptions) -> Result<(), ExternalError> {
        let line = match self.rx.recv_timeout(opts.handshake_timeout) {
            Ok(ReaderEvent::Line(l)) => l,
            Ok(ReaderEvent::Invalid(why)) => return Err(ExternalError::Protocol(why)),
            Ok(ReaderEvent::Eof) | Err(RecvTimeoutError::Disconnected) => {
                return Err(ExternalError::SpawnFailed("brick exited before hello".into()))
            }
            Err(RecvTimeoutError::Timeout) => return Err(ExternalError::HandshakeTimeout),
        };
        let descriptor = match decode(&line) {
            Ok(WireMessage::Hello(d)) => d,
            Ok(other) => return Err(ExternalError::Protocol(format!("first message must be hello, got {}", other.type_name()))),
            Err(e) => return Err(ExternalError::Protocol(e.to_string())),
        };
        check_descriptor(&descriptor, spec).map_err(ExternalError::HandshakeMismatch)?;
        self.descriptor = descriptor;
        self.send(&WireMessage::Config { params: spec.params.clone() })
            .map_err(|e| ExternalError::SpawnFailed(format!("sending config: {e}")))?;
        Ok(())
    }

    pub fn state(&self) -> HandleState {
        self.state
    }

    pub fn descriptor(&self) -> &BrickDescriptor {
        &self.descriptor
    }

    pub fn send(&mut self, msg: &WireMessage) -> io::Result<()> {
        let mut line = encode(msg);
        line.push('\n');
        self.writer.write_all(line.as_bytes())?;
        self.writer.flush()
    }

    fn send_error(&mut self, code: &str, message: &str) {
        let _ = self.send(&WireMessage::Error { code: code.into(), message: message.into(), packet_id: None });
    }

    pub fn configure(&mut self, params: &Fields) -> Result<(), DeliverError> {
        self.send(&WireMessage::Config { params: params.clone() }).map_err(|e| DeliverError::Crashed(e.to_string()))
    }

    /// Send one packet and collect its emissions until the completion marker.
    pub fn deliver(&mut self, port: &str, packet_id: PacketId, fields: &Fields, timeout: Duration) -> Result<Delivery, DeliverError> {
        let result = self.deliver_inner(port, packet_id, fields, timeout);
        self.last_activity = Instant::now();
        if let Err(DeliverError::Protocol(m)) = &result {
            let m = m.clone();
            self.fail_protocol(&m);
        }
        result
    }

    fn deliver_inner(&mut self, port: &str, packet_id: PacketId, fields: &Fields, timeout: Duration) -> Result<Delivery, DeliverError> {
        if self.state != HandleState::Ready {
            return Err(DeliverError::Crashed(format!("brick is {:?}", self.state)));
        }
        self.send(&WireMessage::Packet { port: port.into(), packet_id, fields: fields.clone() })
            .map_err(|e| DeliverError::Crashed(e.to_string()))?;
        let deadline = Instant::now() + timeout;
        let mut out = Delivery::default();
        loop {
            let remaining = deadline.saturating_duration_since(Instant::now());
            let line = match self.rx.recv_timeout(remaining) {
                Ok(ReaderEvent::Line(l)) => l,
                Ok(ReaderEvent::Invalid(why)) => return Err(DeliverError::Protocol(why)),
                Ok(ReaderEvent::Eof) | Err(RecvTimeoutError::Disconnected) => {
                    return Err(DeliverError::Crashed("brick closed its output".into()))
                }
                Err(RecvTimeoutError::Timeout) => return Err(DeliverError::Timeout),
            };
            match decode(&line).map_err(|e| DeliverError::Protocol(e.to_string()))? {
                WireMessage::Emit { port, packet_id: id, fields, last } => {
                    if id != packet_id {
                        return Err(DeliverError::Protocol(format!("emit for packet {id} while {packet_id} is in flight")));
                    }
                    if !self.descriptor.out_ports.contains(&port) {
                        return Err(DeliverError::Protocol(format!("emit on undeclared port {port:?}")));
                    }
                    out.emissions.push((port, fields));
                    if last {
                        return Ok(out);
                    }
                }
                WireMessage::Done { packet_id: id } => {
                    if id != packet_id {
                        return Err(DeliverError::Protocol(format!("done for packet {id} while {packet_id} is in flight")));
                    }
                    return Ok(out);
                }
                WireMessage::Error { code, message, .. } => return Err(DeliverError::Brick { code, message }),
                WireMessage::Signal { name, fields } => out.signals.push((name, fields)),
                WireMessage::Pong { seq } => self.pong(seq),
                other => return Err(DeliverError::Protocol(format!("unexpected {} message", other.type_name()))),
            }
        }
    }

    fn pong(&mut self, seq: u64) {
        if self.outstanding_ping == Some(seq) {
            self.outstanding_ping = None;
            self.missed_pongs = 0;
        }
    }

    /// Non-blocking liveness check. Reads pending lines, then sends a ping if
    /// the brick has been idle for `ping_interval`; a ping still unanswered
    /// at the next check counts as missed.
    pub fn check_liveness(&mut self, ping_interval: Duration) -> Result<u32, DeliverError> {
        if self.state != HandleState::Ready {
            return Err(DeliverError::Crashed(format!("brick is {:?}", self.state)));
        }
        loop {
            match self.rx.try_recv() {
                Ok(ReaderEvent::Line(l)) => match decode(&l) {
                    Ok(WireMessage::Pong { seq }) => self.pong(seq),
                    Ok(other) => {
                        let m = format!("unexpected {} message while idle", other.type_name());
                        self.fail_protocol(&m);
                        return Err(DeliverError::Protocol(m));
                    }
                    Err(e) => {
                        let m = e.to_string();
                        self.fail_protocol(&m);
                        return Err(DeliverError::Protocol(m));
                    }
                },
                Ok(ReaderEvent::Invalid(m)) => {
                    self.fail_protocol(&m);
                    return Err(DeliverError::Protocol(m));
                }
                Ok(ReaderEvent::Eof) | Err(TryRecvError::Disconnected) => {
                    return Err(DeliverError::Crashed("brick closed its output".into()))
                }
                Err(TryRecvError::Empty) => break,
            }
        }
        if let Some(child) = self.child.as_mut() {
            if let Ok(Some(status)) = child.try_wait() {
                return Err(DeliverError::Crashed(format!("brick exited with {status}")));
            }
        }
        if self.last_activity.elapsed() >= ping_interval {
            if self.outstanding_ping.is_some() {
                self.missed_pongs += 1;
            }
            self.ping_seq += 1;
            self.outstanding_ping = Some(self.ping_seq);
            self.last_activity = Instant::now();
            let seq = self.ping_seq;
            self.send(&WireMessage::Ping { seq }).map_err(|e| DeliverError::Crashed(e.to_string()))?;
        }
        Ok(self.missed_pongs)
    }

    fn fail_protocol(&mut self, message: &str) {
        self.send_error("protocol", message);
        self.kill();
        self.state = HandleState::Failed;
    }

    fn kill(&mut self) {
        if let Some(s) = self.tcp.take() {
            let _ = s.shutdown(std::net::Shutdown::Both);
        }
        if let Some(mut c) = self.child.take() {
            let _ = c.kill();
            let _ = c.wait();
        }
    }

    /// Crash cleanup: make sure the process is gone.
    pub fn abandon(mut self) {
        self.kill();
    }

    /// Say `bye` and give the brick a moment to exit before killing it.
    pub fn close(mut self) {
        let _ = self.send(&WireMessage::Bye);
        if let Some(mut c) = self.child.take() {
            let deadline = Instant::now() + Duration::from_millis(500);
            while Instant::now() < deadline {
                if let Ok(Some(_)) = c.try_wait() {
                    return;
                }
                std::thread::sleep(Duration::from_millis(10));
            }
            let _ = c.kill();
            let _ = c.wait();
        }
        self.state = HandleState::Stopped;
    }
}

impl Drop for ExternalHandle {
    fn drop(&mut self) {
        self.kill();
    }
}

/// A brick's self-description must match the deployed spec exactly.
pub fn check_descriptor(d: &BrickDescriptor, spec: &BrickSpec) -> Result<(), String> {
    let arity = d.kind.arity_violations(d.in_ports.len(), d.out_ports.len());
    if !arity.is_empty() {
        return Err(format!("brick declares an invalid {}: {}", d.kind, arity.join("; ")));
    }
    if d.kind != spec.kind {
        return Err(format!("brick declares kind {} but the flow expects {}", d.kind, spec.kind));
    }
    let set = |v: &[String]| v.iter().cloned().collect::<BTreeSet<_>>();
    let want_in: BTreeSet<String> = spec.in_ports.iter().map(|p| p.name.clone()).collect();
    let want_out: BTreeSet<String> = spec.out_ports.iter().map(|p| p.name.clone()).collect();
    if set(&d.in_ports) != want_in || d.in_ports.len() != want_in.len() {
        return Err(format!("in-ports {:?} differ from the flow's {:?}", d.in_ports, want_in));
    }
    if set(&d.out_ports) != want_out || d.out_ports.len() != want_out.len() {
        return Err(format!("out-ports {:?} differ from the flow's {:?}", d.out_ports, want_out));
    }
    Ok(())
}
