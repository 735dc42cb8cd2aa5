//! Sample external brick: the check-temperature selector, speaking the
//! line protocol on stdio (or on a TCP listener with `--listen ADDR`).
//!
//! Packets carrying these boolean fields misbehave on purpose, for
//! supervision tests: `__crash` exits, `__hang` never answers, `__garble`
//! writes a malformed line, `__silent` completes with zero emissions,
//! `__fail` reports an error.
//!
//! `--name`, `--kind`, `--in-ports a,b` and `--out-ports x,y` override the
//! descriptor sent in `hello`; `--no-pong` ignores pings.

use std::io::{self, BufReader};
use std::net::TcpListener;
use std::process::exit;
use std::time::Duration;

use flowforge_core::external::{serve, BrickDescriptor, BrickHandler, Outcome};
use flowforge_core::flow::BrickKind;
use flowforge_core::{Fields, Scalar};

struct CheckTemperature {
    max: f64,
    min: f64,
    pong: bool,
}

fn flag(fields: &Fields, name: &str) -> bool {
    fields.get(name).and_then(Scalar::as_bool).unwrap_or(false)
}

impl BrickHandler for CheckTemperature {
    fn configure(&mut self, params: &Fields) -> Result<(), String> {
        if let Some(v) = params.get("MaxTemp") {
            self.max = v.as_f64().ok_or("MaxTemp must be numeric")?;
        }
        if let Some(v) = params.get("MinTemp") {
            self.min = v.as_f64().ok_or("MinTemp must be numeric")?;
        }
        Ok(())
    }

    fn handle(&mut self, _port: &str, fields: &Fields) -> Outcome {
        if flag(fields, "__crash") {
            exit(3);
        }
        if flag(fields, "__hang") {
            loop {
                std::thread::sleep(Duration::from_secs(3600));
            }
        }
        if flag(fields, "__garble") {
            return Outcome::Raw("{\"t\":\"emit\",".into());
        }
        if flag(fields, "__silent") {
            return Outcome::Emit(Vec::new());
        }
        if flag(fields, "__fail") {
            return Outcome::Fail { code: "Requested".into(), message: "failure requested by packet".into() };
        }
        let Some(temp) = fields.get("MeasuredTemp") else {
            return Outcome::Fail { code: "MissingField".into(), message: "missing field \"MeasuredTemp\"".into() };
        };
        let Some(t) = temp.as_f64() else {
            return Outcome::Fail { code: "TypeMismatch".into(), message: "MeasuredTemp is not numeric".into() };
        };
        let port = if t >= self.max {
            "TooHighPort"
        } else if t <= self.min {
            "TooLowPort"
        } else {
            "InRangePort"
        };
        let mut out = Fields::new();
        out.insert("MeasuredTemp".into(), temp.clone());
        Outcome::Emit(vec![(port.to_string(), out)])
    }

    fn answers_pings(&self) -> bool {
        self.pong
    }
}

fn list(v: &str) -> Vec<String> {
    v.split(',').filter(|s| !s.is_empty()).map(String::from).collect()
}

fn main() {
    let mut descriptor = BrickDescriptor {
        name: "check-temperature".into(),
        kind: BrickKind::Selector,
        in_ports: vec!["in".into()],
        out_ports: list("TooHighPort,TooLowPort,InRangePort"),
    };
    let mut handler = CheckTemperature { max: 75.0, min: 65.0, pong: true };
    let mut listen = None;
    let mut args = std::env::args().skip(1);
    while let Some(a) = args.next() {
        let mut value = || {
            args.next().unwrap_or_else(|| {
                eprintln!("{a} needs a value");
                exit(2)
            })
        };
        match a.as_str() {
            "--name" => descriptor.name = value(),
            "--kind" => {
                let v = value();
                descriptor.kind = BrickKind::from_name(&v).unwrap_or_else(|| {
                    eprintln!("unknown kind {v:?}");
                    exit(2)
                })
            }
            "--in-ports" => descriptor.in_ports = list(&value()),
            "--out-ports" => descriptor.out_ports = list(&value()),
            "--listen" => listen = Some(value()),
            "--no-pong" => handler.pong = false,
            other => {
                eprintln!("unknown argument {other:?}");
                exit(2)
            }
        }
    }

    let result = match listen {
        None => serve(&descriptor, &mut handler, io::stdin().lock(), io::stdout().lock()),
        Some(addr) => {
            let listener = TcpListener::bind(&addr).unwrap_or_else(|e| {
                eprintln!("cannot listen on {addr}: {e}");
                exit(2)
            });
            // One engine connection at a time; a reconnect after a restart gets a fresh session.
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                let Ok(read_half) = stream.try_clone() else { continue };
                let _ = serve(&descriptor, &mut handler, BufReader::new(read_half), stream);
            }
            Ok(())
        }
    };
    if let Err(e) = result {
        eprintln!("sample brick: {e}");
        exit(1);
    }
}
