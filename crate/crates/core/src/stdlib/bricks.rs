use super::device::check_interval;
use super::{param_f64, param_str, BuildContext};
use crate::engine::{BrickContext, BrickError, BrickLogic, Emission};
use crate::flow::BrickSpec;
use crate::packet::Packet;
use crate::scalar::{Fields, Scalar};

fn to_all_ports(spec: &BrickSpec, packet: Packet) -> Vec<Emission> {
    spec.out_port_names().map(|p| Emission::new(p, packet.clone())).collect()
}

struct Timer {
    next_due: Option<i64>,
    count: i64,
}

impl BrickLogic for Timer {
    fn on_packet(&mut self, _: &mut BrickContext<'_>, _: &str, _: &Packet) -> Result<Vec<Emission>, BrickError> {
        Ok(Vec::new())
    }

    fn poll(&mut self, ctx: &mut BrickContext<'_>) -> Result<Vec<Emission>, BrickError> {
        let interval = ctx.params.get("interval").and_then(Scalar::as_i64).unwrap_or(1).max(1);
        let due = *self.next_due.get_or_insert(ctx.now - 1 + interval);
        if ctx.now < due {
            return Ok(Vec::new());
        }
        self.next_due = Some(due + interval);
        self.count += 1;
        let mut f = Fields::new();
        f.insert("tick".into(), Scalar::Int(self.count));
        f.insert("ts".into(), Scalar::Timestamp(ctx.now));
        Ok(to_all_ports(ctx.spec, Packet::new(f)))
    }

    fn check_params(&self, params: &Fields) -> Result<(), String> {
        check_interval(params)
    }
}

pub(super) fn timer(spec: &BrickSpec, _: &BuildContext<'_>) -> Result<Box<dyn BrickLogic>, String> {
    if !spec.params.contains_key("interval") {
        return Err("timer requires an \"interval\" param".into());
    }
    check_interval(&spec.params)?;
    Ok(Box::new(Timer { next_due: None, count: 0 }))
}

struct TemperatureFilter;

impl BrickLogic for TemperatureFilter {
    fn on_packet(&mut self, ctx: &mut BrickContext<'_>, _: &str, packet: &Packet) -> Result<Vec<Emission>, BrickError> {
        let raw = packet
            .get("value_raw")
            .ok_or_else(|| BrickError::new("MissingField", "missing field \"value_raw\""))?
            .as_f64()
            .ok_or_else(|| BrickError::new("TypeMismatch", "field \"value_raw\" is not numeric"))?;
        let scale = ctx.params.get("scale").and_then(Scalar::as_f64).unwrap_or(1.0);
        let offset = ctx.params.get("offset").and_then(Scalar::as_f64).unwrap_or(0.0);
        let mut f = Fields::new();
        f.insert("MeasuredTemp".into(), Scalar::Float(raw * scale + offset));
        for carried in ["sensor_id", "ts"] {
            if let Some(v) = packet.get(carried) {
                f.insert(carried.into(), v.clone());
            }
        }
        Ok(to_all_ports(ctx.spec, packet.derive(f)))
    }

    fn check_params(&self, params: &Fields) -> Result<(), String> {
        for k in ["scale", "offset"] {
            if let Some(v) = params.get(k) {
                if !v.as_f64().is_some_and(f64::is_finite) {
                    return Err(format!("{k} must be a finite number"));
                }
            }
        }
        Ok(())
    }
}

pub(super) fn temperature_filter(spec: &BrickSpec, _: &BuildContext<'_>) -> Result<Box<dyn BrickLogic>, String> {
    param_f64(spec, "scale", 1.0)?;
    param_f64(spec, "offset", 0.0)?;
    Ok(Box::new(TemperatureFilter))
}

struct AdaptTemperature;

impl BrickLogic for AdaptTemperature {
    fn on_packet(&mut self, _: &mut BrickContext<'_>, _: &str, packet: &Packet) -> Result<Vec<Emission>, BrickError> {
        let action = match packet.get("direction").and_then(Scalar::as_str) {
            Some("too_high") => "decrease",
            Some("too_low") => "increase",
            Some(other) => return Err(BrickError::new("BadDirection", format!("unknown direction {other:?}"))),
            None => return Err(BrickError::new("MissingField", "missing field \"direction\"")),
        };
        let mut f = Fields::new();
        f.insert("action".into(), action.into());
        Ok(vec![Emission::new("order", packet.derive(f))])
    }
}

pub(super) fn adapt_temperature(spec: &BrickSpec, _: &BuildContext<'_>) -> Result<Box<dyn BrickLogic>, String> {
    if spec.out_port("order").is_none() {
        return Err("adapt_temperature needs an out-port named \"order\"".into());
    }
    Ok(Box::new(AdaptTemperature))
}

/// Ends the flow and raises the brick's signal with the packet's fields as
/// payload, plus the arrival port under `port_field` when that param is set.
struct SignalConsumer {
    name: String,
    port_field: Option<String>,
}

impl BrickLogic for SignalConsumer {
    fn on_packet(&mut self, ctx: &mut BrickContext<'_>, port: &str, packet: &Packet) -> Result<Vec<Emission>, BrickError> {
        let mut payload = packet.fields.clone();
        if let Some(k) = &self.port_field {
            payload.insert(k.clone(), port.into());
        }
        ctx.fire_signal(self.name.clone(), payload);
        Ok(Vec::new())
    }
}

pub(super) fn signal_consumer(spec: &BrickSpec, _: &BuildContext<'_>) -> Result<Box<dyn BrickLogic>, String> {
    let name = spec.signal_name.clone().ok_or("signal consumer without signal_name")?;
    let port_field = match spec.params.get("port_field") {
        None => None,
        Some(_) => Some(param_str(spec, "port_field", "")?),
    };
    Ok(Box::new(SignalConsumer { name, port_field }))
}

/// Emits the signal payload once on every out-port (the trait default).
struct SignalProducer;

impl BrickLogic for SignalProducer {
    fn on_packet(&mut self, _: &mut BrickContext<'_>, _: &str, _: &Packet) -> Result<Vec<Emission>, BrickError> {
        Ok(Vec::new())
    }
}

pub(super) fn signal_producer(spec: &BrickSpec, _: &BuildContext<'_>) -> Result<Box<dyn BrickLogic>, String> {
    spec.signal_name.as_ref().ok_or("signal producer without signal_name")?;
    Ok(Box::new(SignalProducer))
}

struct Passthrough;

impl BrickLogic for Passthrough {
    fn on_packet(&mut self, ctx: &mut BrickContext<'_>, _: &str, packet: &Packet) -> Result<Vec<Emission>, BrickError> {
        Ok(to_all_ports(ctx.spec, packet.derive(packet.fields.clone())))
    }
}

pub(super) fn passthrough(_: &BrickSpec, _: &BuildContext<'_>) -> Result<Box<dyn BrickLogic>, String> {
    Ok(Box::new(Passthrough))
}
