use super::handle::{DeliverError, ExternalHandle};
use super::{ExternalError, ExternalOptions};
use crate::engine::{BrickContext, BrickError, BrickLogic, Emission, TraceKind};
use crate::flow::{BrickSpec, Transport};
use crate::packet::Packet;
use crate::scalar::{Fields, Scalar};

/// Brick logic backed by an external process, restarted on crashes.
///
/// Delivery is at most once: the packet in flight when the brick dies is
/// reported back as an error, so the engine records it as dropped.
pub struct ExternalLogic {
    spec: BrickSpec,
    transport: Transport,
    endpoint: String,
    opts: ExternalOptions,
    handle: Option<ExternalHandle>,
    /// Params most recently sent in a `config` message.
    sent_params: Fields,
    failed: bool,
    restarts: u32,
    consecutive_failures: u32,
}

impl ExternalLogic {
    pub fn spawn(spec: &BrickSpec, transport: Transport, endpoint: &str, opts: ExternalOptions) -> Result<Self, ExternalError> {
        let handle = ExternalHandle::spawn(spec, transport, endpoint, &opts)?;
        Ok(ExternalLogic {
            spec: spec.clone(),
            transport,
            endpoint: endpoint.to_string(),
            opts,
            handle: Some(handle),
            sent_params: spec.params.clone(),
            failed: false,
            restarts: 0,
            consecutive_failures: 0,
        })
    }

    pub fn restarts(&self) -> u32 {
        self.restarts
    }

    pub fn is_failed(&self) -> bool {
        self.failed
    }

    fn mark_failed(&mut self, ctx: &mut BrickContext<'_>, reason: &str) {
        self.failed = true;
        if let Some(h) = self.handle.take() {
            h.abandon();
        }
        let mut d = Fields::new();
        d.insert("code".into(), "BrickFailed".into());
        d.insert("message".into(), reason.into());
        d.insert("restarts".into(), Scalar::Int(self.restarts as i64));
        ctx.note(TraceKind::BrickError, d);
    }

    /// Restart after a crash, with exponential backoff, until the limit of
    /// consecutive failures is exceeded.
    fn recover(&mut self, ctx: &mut BrickContext<'_>, cause: &str) {
        if let Some(h) = self.handle.take() {
            h.abandon();
        }
        loop {
            self.consecutive_failures += 1;
            if self.consecutive_failures > self.opts.restart_limit {
                let reason = format!("{cause}; restart limit {} reached", self.opts.restart_limit);
                self.mark_failed(ctx, &reason);
                return;
            }
            let factor = 1u32 << (self.consecutive_failures - 1).min(16);
            std::thread::sleep(self.opts.backoff_base * factor);
            let mut spec = self.spec.clone();
            spec.params = ctx.params.clone();
            match ExternalHandle::spawn(&spec, self.transport, &self.endpoint, &self.opts) {
                Ok(h) => {
                    self.handle = Some(h);
                    self.sent_params = spec.params;
                    self.restarts += 1;
                    let mut d = Fields::new();
                    d.insert("restart".into(), Scalar::Int(self.restarts as i64));
                    d.insert("cause".into(), cause.into());
                    ctx.note(TraceKind::BrickStarted, d);
                    return;
                }
                Err(e) => {
                    let mut d = Fields::new();
                    d.insert("code".into(), "RestartFailed".into());
                    d.insert("message".into(), e.to_string().into());
                    ctx.note(TraceKind::BrickError, d);
                }
            }
        }
    }
}

impl BrickLogic for ExternalLogic {
    fn on_packet(&mut self, ctx: &mut BrickContext<'_>, port: &str, packet: &Packet) -> Result<Vec<Emission>, BrickError> {
        if self.failed {
            return Err(BrickError::new("BrickFailed", "external brick has failed"));
        }
        let Some(handle) = self.handle.as_mut() else {
            return Err(BrickError::new("BrickFailed", "external brick is not running"));
        };
        if &self.sent_params != ctx.params {
            let _ = handle.configure(ctx.params);
            self.sent_params = ctx.params.clone();
        }
        match handle.deliver(port, packet.id, &packet.fields, self.opts.packet_timeout) {
            Ok(delivery) => {
                self.consecutive_failures = 0;
                for (name, fields) in delivery.signals {
                    ctx.fire_signal(name, fields);
                }
                Ok(delivery.emissions.into_iter().map(|(p, f)| Emission::new(p, packet.derive(f))).collect())
            }
            Err(DeliverError::Brick { code, message }) => {
                self.consecutive_failures = 0;
                Err(BrickError::new(code, message))
            }
            Err(DeliverError::Protocol(m)) => {
                self.mark_failed(ctx, &format!("protocol error: {m}"));
                Err(BrickError::new("ProtocolError", m))
            }
            Err(DeliverError::Crashed(m)) => {
                self.recover(ctx, &m);
                Err(BrickError::new("Crashed", m))
            }
            Err(DeliverError::Timeout) => {
                let m = format!("no completion within {:?}", self.opts.packet_timeout);
                self.recover(ctx, &m);
                Err(BrickError::new("Timeout", m))
            }
        }
    }

    fn health(&mut self, ctx: &mut BrickContext<'_>) {
        if self.failed {
            return;
        }
        let Some(handle) = self.handle.as_mut() else { return };
        match handle.check_liveness(self.opts.ping_interval) {
            Ok(missed) if missed >= 2 => self.recover(ctx, "missed 2 consecutive pongs"),
            Ok(_) => {}
            Err(DeliverError::Protocol(m)) => self.mark_failed(ctx, &format!("protocol error: {m}")),
            Err(e) => {
                let cause = match e {
                    DeliverError::Crashed(m) => m,
                    other => format!("{other:?}"),
                };
                self.recover(ctx, &cause)
            }
        }
    }

    fn shutdown(&mut self) {
        if let Some(h) = self.handle.take() {
            h.close();
        }
    }
}
