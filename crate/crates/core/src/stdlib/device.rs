//! Simulated engine: a first-order plant with drift, an actuation step, and
//! optional seeded noise.

use std::collections::{BTreeMap, VecDeque};
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::{param_f64, param_i64, param_str, BuildContext};
use crate::engine::{BrickContext, BrickError, BrickLogic, Emission};
use crate::flow::BrickSpec;
use crate::packet::Packet;
use crate::scalar::{Fields, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Order {
    Increase,
    Decrease,
}

impl Order {
    pub fn from_action(action: &str) -> Result<Order, BadOrder> {
        match action {
            "increase" => Ok(Order::Increase),
            "decrease" => Ok(Order::Decrease),
            other => Err(BadOrder(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("bad order {0:?}: expected \"increase\" or \"decrease\"")]
pub struct BadOrder(pub String);

#[derive(Debug, Clone, PartialEq)]
pub struct EngineSimState {
    pub temperature: f64,
    pub drift_per_tick: f64,
    pub actuation_delta: f64,
    pub pending_order: Option<Order>,
    pub noise_amplitude: f64,
    pub rng_seed: u64,
}

impl EngineSimState {
    fn effect(&self, order: Option<Order>) -> f64 {
        match order {
            Some(Order::Increase) => self.actuation_delta,
            Some(Order::Decrease) => -self.actuation_delta,
            None => 0.0,
        }
    }
}

pub struct EngineSim {
    state: EngineSimState,
    rng: ChaCha8Rng,
    /// Measurements taken right after an order, waiting for the inlet to emit them.
    pending_measurements: VecDeque<f64>,
}

impl EngineSim {
    pub fn new(state: EngineSimState) -> Result<Self, String> {
        if !state.temperature.is_finite() {
            return Err("start temperature must be finite".into());
        }
        if state.actuation_delta.is_nan() || state.actuation_delta <= 0.0 {
            return Err("actuation delta must be positive".into());
        }
        if state.noise_amplitude.is_nan() || state.noise_amplitude < 0.0 {
            return Err("noise amplitude must be non-negative".into());
        }
        let rng = ChaCha8Rng::seed_from_u64(state.rng_seed);
        Ok(EngineSim { state, rng, pending_measurements: VecDeque::new() })
    }

    pub fn state(&self) -> &EngineSimState {
        &self.state
    }

    /// Advance one timer period and return the new temperature.
    pub fn tick(&mut self) -> f64 {
        let noise = if self.state.noise_amplitude > 0.0 {
            let a = self.state.noise_amplitude;
            self.rng.random_range(-a..=a)
        } else {
            0.0
        };
        let pending = self.state.pending_order.take();
        let effect = self.state.effect(pending);
        self.state.temperature += self.state.drift_per_tick + noise + effect;
        self.state.temperature
    }

    /// Record an order and apply it right away. The order also stays pending
    /// for the next tick. Returns the temperature measured after actuation.
    pub fn order(&mut self, action: &str) -> Result<f64, BadOrder> {
        let order = Order::from_action(action)?;
        self.state.pending_order = Some(order);
        self.state.temperature += self.state.effect(Some(order));
        let t = self.state.temperature;
        self.pending_measurements.push_back(t);
        Ok(t)
    }

    pub fn take_measurements(&mut self) -> Vec<f64> {
        self.pending_measurements.drain(..).collect()
    }
}

/// Simulated devices of one run, keyed by the `device` param. The inlet that
/// reads a device and the outlet that commands it share the instance.
#[derive(Clone, Default)]
pub struct DeviceHub {
    devices: Arc<Mutex<BTreeMap<String, Arc<Mutex<EngineSim>>>>>,
}

impl DeviceHub {
    pub fn insert(&self, name: &str, sim: EngineSim) -> Result<Arc<Mutex<EngineSim>>, String> {
        let mut map = self.devices.lock().expect("device hub lock");
        if map.contains_key(name) {
            return Err(format!("device {name:?} is already read by another inlet"));
        }
        let dev = Arc::new(Mutex::new(sim));
        map.insert(name.to_string(), Arc::clone(&dev));
        Ok(dev)
    }

    pub fn get(&self, name: &str) -> Option<Arc<Mutex<EngineSim>>> {
        self.devices.lock().expect("device hub lock").get(name).cloned()
    }
}

struct EngineDevice {
    sim: Arc<Mutex<EngineSim>>,
    sensor_id: String,
    next_due: Option<i64>,
}

impl EngineDevice {
    fn measurement(&self, value: f64, now: i64, ctx: &BrickContext<'_>) -> Vec<Emission> {
        let mut f = Fields::new();
        f.insert("sensor_id".into(), self.sensor_id.clone().into());
        f.insert("value_raw".into(), Scalar::Float(value));
        f.insert("ts".into(), Scalar::Timestamp(now));
        ctx.spec.out_port_names().map(|p| Emission::new(p, Packet::new(f.clone()))).collect()
    }
}

impl BrickLogic for EngineDevice {
    fn on_packet(&mut self, _: &mut BrickContext<'_>, _: &str, _: &Packet) -> Result<Vec<Emission>, BrickError> {
        Ok(Vec::new())
    }

    fn poll(&mut self, ctx: &mut BrickContext<'_>) -> Result<Vec<Emission>, BrickError> {
        let interval = ctx.params.get("interval").and_then(Scalar::as_i64).unwrap_or(10).max(1);
        let now = ctx.now;
        let mut out = Vec::new();
        let mut sim = self.sim.lock().expect("device lock");
        for v in sim.take_measurements() {
            out.extend(self.measurement(v, now, ctx));
        }
        let due = *self.next_due.get_or_insert(now - 1 + interval);
        if now >= due {
            self.next_due = Some(due + interval);
            let v = sim.tick();
            out.extend(self.measurement(v, now, ctx));
        }
        Ok(out)
    }

    fn check_params(&self, params: &Fields) -> Result<(), String> {
        check_interval(params)
    }
}

pub(crate) fn check_interval(params: &Fields) -> Result<(), String> {
    match params.get("interval") {
        Some(Scalar::Int(i)) if *i >= 1 => Ok(()),
        None => Ok(()),
        Some(v) => Err(format!("interval must be an integer ≥ 1, got {}", v.render())),
    }
}

pub(super) fn engine_device(spec: &BrickSpec, cx: &BuildContext<'_>) -> Result<Box<dyn BrickLogic>, String> {
    check_interval(&spec.params)?;
    let state = EngineSimState {
        temperature: param_f64(spec, "start_temp", 70.0)?,
        drift_per_tick: param_f64(spec, "drift", 0.5)?,
        actuation_delta: param_f64(spec, "delta", 2.0)?,
        pending_order: None,
        noise_amplitude: param_f64(spec, "noise", 0.0)?,
        rng_seed: param_i64(spec, "seed", cx.seed as i64)? as u64,
    };
    let device = param_str(spec, "device", &spec.id)?;
    let sim = cx.devices.insert(&device, EngineSim::new(state)?)?;
    Ok(Box::new(EngineDevice { sim, sensor_id: param_str(spec, "sensor_id", &device)?, next_due: None }))
}

struct EngineCommand {
    hub: DeviceHub,
    device: String,
}

impl BrickLogic for EngineCommand {
    fn on_packet(&mut self, _: &mut BrickContext<'_>, _: &str, packet: &Packet) -> Result<Vec<Emission>, BrickError> {
        let action = packet
            .get("action")
            .and_then(Scalar::as_str)
            .ok_or_else(|| BrickError::new("MissingField", "order packet has no string field \"action\""))?;
        let sim = self
            .hub
            .get(&self.device)
            .ok_or_else(|| BrickError::new("UnknownDevice", format!("no inlet reads device {:?}", self.device)))?;
        let mut sim = sim.lock().expect("device lock");
        sim.order(action).map_err(|e| BrickError::new("BadOrder", e.to_string()))?;
        Ok(Vec::new())
    }
}

pub(super) fn engine_command(spec: &BrickSpec, cx: &BuildContext<'_>) -> Result<Box<dyn BrickLogic>, String> {
    Ok(Box::new(EngineCommand { hub: cx.devices.clone(), device: param_str(spec, "device", "engine")? }))
}
