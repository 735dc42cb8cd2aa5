//! Builtin bricks for the engine-temperature scenario and small test flows.
//!
//! | name                 | kinds                  | ports (canonical)                |
//! |----------------------|------------------------|----------------------------------|
//! | `timer`              | Inlet                  | out `tick`                       |
//! | `engine_device`      | Inlet                  | out `out`                        |
//! | `engine_command`     | Outlet                 | in `in`                          |
//! | `temperature_filter` | Filter                 | in `in`, out `out`               |
//! | `adapt_temperature`  | General                | in `in`, out `order`             |
//! | `tsdb_writer`        | Outlet                 | in `in`                          |
//! | `log_writer`         | Outlet                 | in `in`                          |
//! | `alert_outlet`       | Outlet, General        | in `in`                          |
//! | `signal_consumer`    | SignalConsumer         | in `in`                          |
//! | `signal_producer`    | SignalProducer         | out `out`                        |
//! | `passthrough`        | Filter, General        | in `in`, out `out`               |
//!
//! Bricks may rename or add ports; sources and pass-through bricks emit on
//! every declared out-port.

mod bricks;
mod device;
mod stores;

use std::collections::BTreeMap;
use std::path::Path;

use crate::engine::BrickLogic;
use crate::flow::{BrickKind, BrickSpec};
use crate::scalar::Scalar;

pub use device::{BadOrder, DeviceHub, EngineSim, EngineSimState, Order};
pub use stores::{read_log, read_tsdb, render_template, Alert, AlertError, AlertSeverity, AlertStore, LogRecord, TsdbRecord};

/// Run-wide resources available while builtin bricks are constructed.
pub struct BuildContext<'a> {
    pub run_id: &'a str,
    pub run_dir: Option<&'a Path>,
    pub seed: u64,
    pub devices: &'a DeviceHub,
    pub alerts: &'a AlertStore,
}

pub type Factory = fn(&BrickSpec, &BuildContext<'_>) -> Result<Box<dyn BrickLogic>, String>;

#[derive(Clone)]
pub struct BuiltinDef {
    pub name: &'static str,
    pub kinds: &'static [BrickKind],
    pub in_ports: &'static [&'static str],
    pub out_ports: &'static [&'static str],
    pub factory: Factory,
}

/// Builtin name to constructor.
#[derive(Clone, Default)]
pub struct Registry {
    defs: BTreeMap<&'static str, BuiltinDef>,
}

impl Registry {
    pub fn empty() -> Self {
        Registry::default()
    }

    pub fn standard() -> Self {
        use BrickKind::*;
        let mut r = Registry::empty();
        r.register(BuiltinDef { name: "timer", kinds: &[Inlet], in_ports: &[], out_ports: &["tick"], factory: bricks::timer });
        r.register(BuiltinDef { name: "engine_device", kinds: &[Inlet], in_ports: &[], out_ports: &["out"], factory: device::engine_device });
        r.register(BuiltinDef { name: "engine_command", kinds: &[Outlet], in_ports: &["in"], out_ports: &[], factory: device::engine_command });
        r.register(BuiltinDef {
            name: "temperature_filter",
            kinds: &[Filter],
            in_ports: &["in"],
            out_ports: &["out"],
            factory: bricks::temperature_filter,
        });
        r.register(BuiltinDef {
            name: "adapt_temperature",
            kinds: &[General],
            in_ports: &["in"],
            out_ports: &["order"],
            factory: bricks::adapt_temperature,
        });
        r.register(BuiltinDef { name: "tsdb_writer", kinds: &[Outlet], in_ports: &["in"], out_ports: &[], factory: stores::tsdb_writer });
        r.register(BuiltinDef { name: "log_writer", kinds: &[Outlet], in_ports: &["in"], out_ports: &[], factory: stores::log_writer });
        r.register(BuiltinDef {
            name: "alert_outlet",
            kinds: &[Outlet, General],
            in_ports: &["in"],
            out_ports: &[],
            factory: stores::alert_outlet,
        });
        r.register(BuiltinDef {
            name: "signal_consumer",
            kinds: &[SignalConsumer],
            in_ports: &["in"],
            out_ports: &[],
            factory: bricks::signal_consumer,
        });
        r.register(BuiltinDef {
            name: "signal_producer",
            kinds: &[SignalProducer],
            in_ports: &[],
            out_ports: &["out"],
            factory: bricks::signal_producer,
        });
        r.register(BuiltinDef {
            name: "passthrough",
            kinds: &[Filter, General],
            in_ports: &["in"],
            out_ports: &["out"],
            factory: bricks::passthrough,
        });
        r
    }

    pub fn register(&mut self, def: BuiltinDef) {
        self.defs.insert(def.name, def);
    }

    pub fn get(&self, name: &str) -> Option<&BuiltinDef> {
        self.defs.get(name)
    }

    pub fn defs(&self) -> impl Iterator<Item = &BuiltinDef> {
        self.defs.values()
    }

    /// Arity problems between each builtin's canonical ports and the kinds it claims.
    pub fn self_check(&self) -> Vec<String> {
        let mut problems = Vec::new();
        for def in self.defs.values() {
            if def.kinds.is_empty() {
                problems.push(format!("{}: no brick kinds declared", def.name));
            }
            for kind in def.kinds {
                for v in kind.arity_violations(def.in_ports.len(), def.out_ports.len()) {
                    problems.push(format!("{} as {kind}: {v}", def.name));
                }
            }
        }
        problems
    }
}

pub(crate) fn param_f64(spec: &BrickSpec, name: &str, default: f64) -> Result<f64, String> {
    match spec.params.get(name) {
        None => Ok(default),
        Some(v) => v.as_f64().filter(|f| f.is_finite()).ok_or_else(|| format!("param {name:?} must be a finite number")),
    }
}

pub(crate) fn param_i64(spec: &BrickSpec, name: &str, default: i64) -> Result<i64, String> {
    match spec.params.get(name) {
        None => Ok(default),
        Some(Scalar::Int(i)) => Ok(*i),
        Some(Scalar::Float(f)) if f.fract() == 0.0 && f.abs() < 9e15 => Ok(*f as i64),
        Some(_) => Err(format!("param {name:?} must be an integer")),
    }
}

pub(crate) fn param_str(spec: &BrickSpec, name: &str, default: &str) -> Result<String, String> {
    match spec.params.get(name) {
        None => Ok(default.to_string()),
        Some(Scalar::Str(s)) => Ok(s.clone()),
        Some(_) => Err(format!("param {name:?} must be a string")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_self_check_is_clean() {
        assert_eq!(Registry::standard().self_check(), Vec::<String>::new());
    }

    #[test]
    fn self_check_catches_bad_def() {
        let mut r = Registry::empty();
        r.register(BuiltinDef {
            name: "bad",
            kinds: &[BrickKind::Selector],
            in_ports: &["in"],
            out_ports: &["only"],
            factory: bricks::passthrough,
        });
        assert_eq!(r.self_check(), vec!["bad as Selector: Selector requires ≥2 out-ports".to_string()]);
    }
}
