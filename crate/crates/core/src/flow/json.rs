//! `.flow.json` reader and canonical writer.

use serde_json::{Map, Value};
use thiserror::Error;

use super::{BrickKind, BrickSpec, Connection, FlowGraph, LogicBinding, PortDecl, PortSchema, Transport};
use crate::scalar::{Fields, Scalar, ScalarKind};

/// Every object key the flow format accepts. There is deliberately no key for
/// conditions, branches, or loops on bricks or connections.
pub const FORMAT_KEYWORDS: &[&str] = &[
    // flow
    "id",
    "name",
    "bricks",
    "connections",
    "metadata",
    // brick
    "display_name",
    "kind",
    "in_ports",
    "out_ports",
    "logic",
    "params",
    "signal_name",
    // port
    "schema",
    // logic
    "type",
    "source",
    "transport",
    "endpoint",
    // connection
    "from_brick",
    "from_port",
    "to_brick",
    "to_port",
];

const FLOW_KEYS: &[&str] = &["id", "name", "bricks", "connections", "metadata"];
const BRICK_KEYS: &[&str] =
    &["id", "display_name", "kind", "in_ports", "out_ports", "logic", "params", "signal_name"];
const PORT_KEYS: &[&str] = &["name", "schema"];
const CONNECTION_KEYS: &[&str] = &["from_brick", "from_port", "to_brick", "to_port"];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FlowParseError {
    #[error("syntax error at line {line}, column {col}: {message}")]
    Syntax { line: usize, col: usize, message: String },
    #[error("schema error at {path}: {reason}")]
    Schema { path: String, reason: String },
}

fn schema_err(path: &str, reason: impl Into<String>) -> FlowParseError {
    FlowParseError::Schema { path: path.to_string(), reason: reason.into() }
}

/// Parse a `.flow.json` document.
///
/// Performs field-level checks and resolves connection endpoints against the
/// declared bricks and ports. Graph-level invariants (arity, acyclicity,
/// reachability) are left to [`super::validate`].
pub fn parse_flow(text: &str) -> Result<FlowGraph, FlowParseError> {
    let value: Value = serde_json::from_str(text).map_err(|e| FlowParseError::Syntax {
        line: e.line(),
        col: e.column(),
        message: e.to_string(),
    })?;
    let root = as_object(&value, "$")?;
    check_keys(root, FLOW_KEYS, "$")?;

    let id = req_str(root, "id", "$")?;
    let name = req_str(root, "name", "$")?;

    let bricks_v = req_array(root, "bricks", "$")?;
    let mut bricks = Vec::with_capacity(bricks_v.len());
    for (i, b) in bricks_v.iter().enumerate() {
        bricks.push(parse_brick(b, &format!("$.bricks[{i}]"))?);
    }

    let conns_v = req_array(root, "connections", "$")?;
    let mut connections = Vec::with_capacity(conns_v.len());
    for (i, c) in conns_v.iter().enumerate() {
        let path = format!("$.connections[{i}]");
        let conn = parse_connection(c, &path)?;
        resolve_connection(&conn, &bricks, &path)?;
        connections.push(conn);
    }

    let mut metadata = std::collections::BTreeMap::new();
    if let Some(m) = root.get("metadata") {
        let obj = as_object(m, "$.metadata")?;
        for (k, v) in obj {
            let s = v
                .as_str()
                .ok_or_else(|| schema_err(&format!("$.metadata.{k}"), "expected string"))?;
            metadata.insert(k.clone(), s.to_string());
        }
    }

    Ok(FlowGraph { id, name, bricks, connections, metadata })
}

fn parse_brick(v: &Value, path: &str) -> Result<BrickSpec, FlowParseError> {
    let obj = as_object(v, path)?;
    check_keys(obj, BRICK_KEYS, path)?;
    let id = req_str(obj, "id", path)?;
    if id.is_empty() {
        return Err(schema_err(&format!("{path}.id"), "brick id must be non-empty"));
    }
    let display_name = match obj.get("display_name") {
        Some(v) => v
            .as_str()
            .ok_or_else(|| schema_err(&format!("{path}.display_name"), "expected string"))?
            .to_string(),
        None => id.clone(),
    };
    let kind_s = req_str(obj, "kind", path)?;
    let kind = BrickKind::from_name(&kind_s).ok_or_else(|| {
        schema_err(
            &format!("{path}.kind"),
            format!(
                "unknown brick kind {kind_s:?}; expected one of {}",
                BrickKind::ALL.map(|k| k.as_str()).join(", ")
            ),
        )
    })?;
    let in_ports = parse_ports(obj.get("in_ports"), &format!("{path}.in_ports"))?;
    let out_ports = parse_ports(obj.get("out_ports"), &format!("{path}.out_ports"))?;
    let logic = parse_logic(
        obj.get("logic").ok_or_else(|| schema_err(path, "missing field \"logic\""))?,
        &format!("{path}.logic"),
    )?;
    let params = match obj.get("params") {
        Some(p) => parse_fields(p, &format!("{path}.params"))?,
        None => Fields::new(),
    };
    let signal_name = match obj.get("signal_name") {
        Some(Value::Null) | None => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(_) => return Err(schema_err(&format!("{path}.signal_name"), "expected string")),
    };
    Ok(BrickSpec { id, display_name, kind, in_ports, out_ports, logic, params, signal_name })
}

fn parse_ports(v: Option<&Value>, path: &str) -> Result<Vec<PortDecl>, FlowParseError> {
    let Some(v) = v else { return Ok(Vec::new()) };
    let arr = v.as_array().ok_or_else(|| schema_err(path, "expected array"))?;
    let mut out = Vec::with_capacity(arr.len());
    for (i, p) in arr.iter().enumerate() {
        let ppath = format!("{path}[{i}]");
        let decl = match p {
            Value::String(s) => PortDecl::new(s.clone()),
            Value::Object(obj) => {
                check_keys(obj, PORT_KEYS, &ppath)?;
                let name = req_str(obj, "name", &ppath)?;
                let schema = match obj.get("schema") {
                    None | Some(Value::Null) => None,
                    Some(s) => Some(parse_schema(s, &format!("{ppath}.schema"))?),
                };
                PortDecl { name, schema }
            }
            _ => return Err(schema_err(&ppath, "expected port object or name")),
        };
        if decl.name.is_empty() {
            return Err(schema_err(&ppath, "port name must be non-empty"));
        }
        out.push(decl);
    }
    Ok(out)
}

fn parse_schema(v: &Value, path: &str) -> Result<PortSchema, FlowParseError> {
    let obj = as_object(v, path)?;
    let mut schema = PortSchema::new();
    for (field, kind) in obj {
        let kind: ScalarKind = serde_json::from_value(kind.clone()).map_err(|_| {
            schema_err(
                &format!("{path}.{field}"),
                "expected one of int, float, string, bool, timestamp",
            )
        })?;
        schema.insert(field.clone(), kind);
    }
    Ok(schema)
}

fn parse_logic(v: &Value, path: &str) -> Result<LogicBinding, FlowParseError> {
    let obj = as_object(v, path)?;
    let ty = req_str(obj, "type", path)?;
    match ty.as_str() {
        "builtin" => {
            check_keys(obj, &["type", "name"], path)?;
            Ok(LogicBinding::Builtin { name: req_str(obj, "name", path)? })
        }
        "rules" => {
            check_keys(obj, &["type", "source"], path)?;
            Ok(LogicBinding::Rules { source: req_str(obj, "source", path)? })
        }
        "external" => {
            check_keys(obj, &["type", "transport", "endpoint"], path)?;
            let transport = match req_str(obj, "transport", path)?.as_str() {
                "stdio" => Transport::Stdio,
                "tcp" => Transport::Tcp,
                other => {
                    return Err(schema_err(
                        &format!("{path}.transport"),
                        format!("unknown transport {other:?}; expected stdio or tcp"),
                    ))
                }
            };
            Ok(LogicBinding::External { transport, endpoint: req_str(obj, "endpoint", path)? })
        }
        other => Err(schema_err(
            &format!("{path}.type"),
            format!("unknown logic type {other:?}; expected builtin, rules, or external"),
        )),
    }
}

fn parse_fields(v: &Value, path: &str) -> Result<Fields, FlowParseError> {
    let obj = as_object(v, path)?;
    let mut out = Fields::new();
    for (k, val) in obj {
        let s: Scalar = serde_json::from_value(val.clone())
            .map_err(|e| schema_err(&format!("{path}.{k}"), format!("expected scalar: {e}")))?;
        out.insert(k.clone(), s);
    }
    Ok(out)
}

fn parse_connection(v: &Value, path: &str) -> Result<Connection, FlowParseError> {
    let obj = as_object(v, path)?;
    check_keys(obj, CONNECTION_KEYS, path)?;
    Ok(Connection {
        from_brick: req_str(obj, "from_brick", path)?,
        from_port: req_str(obj, "from_port", path)?,
        to_brick: req_str(obj, "to_brick", path)?,
        to_port: req_str(obj, "to_port", path)?,
    })
}

fn resolve_connection(c: &Connection, bricks: &[BrickSpec], path: &str) -> Result<(), FlowParseError> {
    let from = bricks
        .iter()
        .find(|b| b.id == c.from_brick)
        .ok_or_else(|| schema_err(&format!("{path}.from_brick"), format!("unknown brick {:?}", c.from_brick)))?;
    if from.out_port(&c.from_port).is_none() {
        return Err(schema_err(
            &format!("{path}.from_port"),
            format!("brick {:?} declares no out-port {:?}", c.from_brick, c.from_port),
        ));
    }
    let to = bricks
        .iter()
        .find(|b| b.id == c.to_brick)
        .ok_or_else(|| schema_err(&format!("{path}.to_brick"), format!("unknown brick {:?}", c.to_brick)))?;
    if to.in_port(&c.to_port).is_none() {
        return Err(schema_err(
            &format!("{path}.to_port"),
            format!("brick {:?} declares no in-port {:?}", c.to_brick, c.to_port),
        ));
    }
    Ok(())
}

fn as_object<'a>(v: &'a Value, path: &str) -> Result<&'a Map<String, Value>, FlowParseError> {
    v.as_object().ok_or_else(|| schema_err(path, "expected object"))
}

fn check_keys(obj: &Map<String, Value>, allowed: &[&str], path: &str) -> Result<(), FlowParseError> {
    for k in obj.keys() {
        if !allowed.contains(&k.as_str()) {
            return Err(schema_err(&format!("{path}.{k}"), format!("unknown field {k:?}")));
        }
    }
    Ok(())
}

fn req_str(obj: &Map<String, Value>, key: &str, path: &str) -> Result<String, FlowParseError> {
    match obj.get(key) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(schema_err(&format!("{path}.{key}"), "expected string")),
        None => Err(schema_err(path, format!("missing field {key:?}"))),
    }
}

fn req_array<'a>(obj: &'a Map<String, Value>, key: &str, path: &str) -> Result<&'a Vec<Value>, FlowParseError> {
    match obj.get(key) {
        Some(Value::Array(a)) => Ok(a),
        Some(_) => Err(schema_err(&format!("{path}.{key}"), "expected array")),
        None => Err(schema_err(path, format!("missing field {key:?}"))),
    }
}

/// Canonical JSON: sorted object keys, author order for bricks and
/// connections, two-space indent, trailing newline.
pub fn serialize_flow(graph: &FlowGraph) -> String {
    let mut root = Map::new();
    root.insert("id".into(), Value::String(graph.id.clone()));
    root.insert("name".into(), Value::String(graph.name.clone()));
    root.insert("bricks".into(), Value::Array(graph.bricks.iter().map(brick_value).collect()));
    root.insert(
        "connections".into(),
        Value::Array(graph.connections.iter().map(connection_value).collect()),
    );
    root.insert(
        "metadata".into(),
        Value::Object(
            graph.metadata.iter().map(|(k, v)| (k.clone(), Value::String(v.clone()))).collect(),
        ),
    );
    let mut text = serde_json::to_string_pretty(&sorted(Value::Object(root))).expect("flow serializes");
    text.push('\n');
    text
}

fn brick_value(b: &BrickSpec) -> Value {
    let mut m = Map::new();
    m.insert("id".into(), Value::String(b.id.clone()));
    m.insert("display_name".into(), Value::String(b.display_name.clone()));
    m.insert("kind".into(), Value::String(b.kind.as_str().into()));
    m.insert("in_ports".into(), Value::Array(b.in_ports.iter().map(port_value).collect()));
    m.insert("out_ports".into(), Value::Array(b.out_ports.iter().map(port_value).collect()));
    m.insert("logic".into(), logic_value(&b.logic));
    m.insert("params".into(), serde_json::to_value(&b.params).expect("params serialize"));
    if let Some(s) = &b.signal_name {
        m.insert("signal_name".into(), Value::String(s.clone()));
    }
    Value::Object(m)
}

fn port_value(p: &PortDecl) -> Value {
    let mut m = Map::new();
    m.insert("name".into(), Value::String(p.name.clone()));
    if let Some(schema) = &p.schema {
        m.insert("schema".into(), serde_json::to_value(schema).expect("schema serializes"));
    }
    Value::Object(m)
}

fn logic_value(l: &LogicBinding) -> Value {
    let mut m = Map::new();
    match l {
        LogicBinding::Builtin { name } => {
            m.insert("type".into(), "builtin".into());
            m.insert("name".into(), Value::String(name.clone()));
        }
        LogicBinding::Rules { source } => {
            m.insert("type".into(), "rules".into());
            m.insert("source".into(), Value::String(source.clone()));
        }
        LogicBinding::External { transport, endpoint } => {
            m.insert("type".into(), "external".into());
            m.insert("transport".into(), serde_json::to_value(transport).expect("transport"));
            m.insert("endpoint".into(), Value::String(endpoint.clone()));
        }
    }
    Value::Object(m)
}

fn connection_value(c: &Connection) -> Value {
    let mut m = Map::new();
    m.insert("from_brick".into(), Value::String(c.from_brick.clone()));
    m.insert("from_port".into(), Value::String(c.from_port.clone()));
    m.insert("to_brick".into(), Value::String(c.to_brick.clone()));
    m.insert("to_port".into(), Value::String(c.to_port.clone()));
    Value::Object(m)
}

/// Rebuild every object with keys inserted in sorted order, so output is
/// sorted whether or not serde_json preserves insertion order.
fn sorted(v: Value) -> Value {
    match v {
        Value::Object(m) => {
            let mut entries: Vec<(String, Value)> = m.into_iter().collect();
            entries.sort_by(|a, b| a.0.cmp(&b.0));
            Value::Object(entries.into_iter().map(|(k, v)| (k, sorted(v))).collect())
        }
        Value::Array(a) => Value::Array(a.into_iter().map(sorted).collect()),
        other => other,
    }
}
