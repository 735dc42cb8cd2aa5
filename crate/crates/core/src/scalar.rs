//! Scalar values carried in packet fields, brick params, and rule constants.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use serde::de::{self, MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Field name to value map. Ordered so serialization is stable.
pub type Fields = BTreeMap<String, Scalar>;

/// JSON key used to tag timestamp scalars: `{"$ts": 1700000000000}`.
pub const TIMESTAMP_TAG: &str = "$ts";

#[derive(Debug, Clone, PartialEq)]
pub enum Scalar {
    Int(i64),
    Float(f64),
    Bool(bool),
    Str(String),
    /// Milliseconds since the epoch (or logical ticks in deterministic runs).
    Timestamp(i64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalarKind {
    Int,
    Float,
    String,
    Bool,
    Timestamp,
}

impl fmt::Display for ScalarKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScalarKind::Int => "int",
            ScalarKind::Float => "float",
            ScalarKind::String => "string",
            ScalarKind::Bool => "bool",
            ScalarKind::Timestamp => "timestamp",
        })
    }
}

impl Scalar {
    pub fn kind(&self) -> ScalarKind {
        match self {
            Scalar::Int(_) => ScalarKind::Int,
            Scalar::Float(_) => ScalarKind::Float,
            Scalar::Bool(_) => ScalarKind::Bool,
            Scalar::Str(_) => ScalarKind::String,
            Scalar::Timestamp(_) => ScalarKind::Timestamp,
        }
    }

    /// Numeric view; ints widen to float.
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Scalar::Int(i) => Some(*i as f64),
            Scalar::Float(f) => Some(*f),
            _ => None,
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        match self {
            Scalar::Int(i) | Scalar::Timestamp(i) => Some(*i),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Scalar::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Scalar::Bool(b) => Some(*b),
            _ => None,
        }
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self, Scalar::Int(_) | Scalar::Float(_))
    }

    /// Ordering between two scalars of compatible kinds.
    ///
    /// Int against float is compared exactly (no rounding of the integer
    /// through `f64`). Returns `None` for incompatible kinds or a NaN operand.
    pub fn compare(&self, other: &Scalar) -> Option<Ordering> {
        use Scalar::*;
        match (self, other) {
            (Int(a), Int(b)) => Some(a.cmp(b)),
            (Float(a), Float(b)) => a.partial_cmp(b),
            (Int(a), Float(b)) => cmp_int_float(*a, *b),
            (Float(a), Int(b)) => cmp_int_float(*b, *a).map(Ordering::reverse),
            (Str(a), Str(b)) => Some(a.cmp(b)),
            (Bool(a), Bool(b)) => Some(a.cmp(b)),
            (Timestamp(a), Timestamp(b)) => Some(a.cmp(b)),
            _ => None,
        }
    }

    /// Text used when substituting a value into a message template.
    pub fn render(&self) -> String {
        match self {
            Scalar::Int(i) | Scalar::Timestamp(i) => i.to_string(),
            Scalar::Float(f) => {
                if f.is_finite() && f.fract() == 0.0 && f.abs() < 1e15 {
                    format!("{}", *f as i64)
                } else {
                    format!("{f}")
                }
            }
            Scalar::Bool(b) => b.to_string(),
            Scalar::Str(s) => s.clone(),
        }
    }
}

/// Exact comparison of an `i64` with an `f64`.
fn cmp_int_float(i: i64, f: f64) -> Option<Ordering> {
    if f.is_nan() {
        return None;
    }
    // 2^63 is exactly representable; every i64 is below it.
    const TWO_63: f64 = 9_223_372_036_854_775_808.0;
    if f >= TWO_63 {
        return Some(Ordering::Less);
    }
    if f < -TWO_63 {
        return Some(Ordering::Greater);
    }
    let whole = f.trunc();
    let whole_i = whole as i64;
    match i.cmp(&whole_i) {
        Ordering::Equal => {
            let frac = f - whole;
            if frac > 0.0 {
                Some(Ordering::Less)
            } else if frac < 0.0 {
                Some(Ordering::Greater)
            } else {
                Some(Ordering::Equal)
            }
        }
        other => Some(other),
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scalar::Int(i) => write!(f, "{i}"),
            Scalar::Float(x) => write!(f, "{x:?}"),
            Scalar::Bool(b) => write!(f, "{b}"),
            Scalar::Str(s) => write!(f, "{s:?}"),
            Scalar::Timestamp(t) => write!(f, "timestamp({t})"),
        }
    }
}

impl From<i64> for Scalar {
    fn from(v: i64) -> Self {
        Scalar::Int(v)
    }
}

impl From<f64> for Scalar {
    fn from(v: f64) -> Self {
        Scalar::Float(v)
    }
}

impl From<bool> for Scalar {
    fn from(v: bool) -> Self {
        Scalar::Bool(v)
    }
}

impl From<&str> for Scalar {
    fn from(v: &str) -> Self {
        Scalar::Str(v.to_string())
    }
}

impl From<String> for Scalar {
    fn from(v: String) -> Self {
        Scalar::Str(v)
    }
}

impl Serialize for Scalar {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Scalar::Int(i) => serializer.serialize_i64(*i),
            Scalar::Float(f) => serializer.serialize_f64(*f),
            Scalar::Bool(b) => serializer.serialize_bool(*b),
            Scalar::Str(s) => serializer.serialize_str(s),
            Scalar::Timestamp(t) => {
                let mut map = serializer.serialize_map(Some(1))?;
                map.serialize_entry(TIMESTAMP_TAG, t)?;
                map.end()
            }
        }
    }
}

impl<'de> Deserialize<'de> for Scalar {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct ScalarVisitor;

        impl<'de> Visitor<'de> for ScalarVisitor {
            type Value = Scalar;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a number, string, bool, or {\"$ts\": int}")
            }

            fn visit_bool<E: de::Error>(self, v: bool) -> Result<Scalar, E> {
                Ok(Scalar::Bool(v))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Scalar, E> {
                Ok(Scalar::Int(v))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Scalar, E> {
                match i64::try_from(v) {
                    Ok(i) => Ok(Scalar::Int(i)),
                    Err(_) => Ok(Scalar::Float(v as f64)),
                }
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Scalar, E> {
                Ok(Scalar::Float(v))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<Scalar, E> {
                Ok(Scalar::Str(v.to_string()))
            }

            fn visit_string<E: de::Error>(self, v: String) -> Result<Scalar, E> {
                Ok(Scalar::Str(v))
            }

            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Scalar, A::Error> {
                let key: Option<String> = map.next_key()?;
                match key.as_deref() {
                    Some(TIMESTAMP_TAG) => {
                        let ts: i64 = map.next_value()?;
                        if map.next_key::<String>()?.is_some() {
                            return Err(de::Error::custom("timestamp object has extra keys"));
                        }
                        Ok(Scalar::Timestamp(ts))
                    }
                    _ => Err(de::Error::custom("objects are not scalars")),
                }
            }
        }

        deserializer.deserialize_any(ScalarVisitor)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn int_float_comparison_is_exact() {
        // 2^53 + 1 is not representable as f64; a lossy cast would call these equal.
        let big = (1_i64 << 53) + 1;
        let f = (1_i64 << 53) as f64;
        assert_eq!(Scalar::Int(big).compare(&Scalar::Float(f)), Some(Ordering::Greater));
        assert_eq!(Scalar::Int(75).compare(&Scalar::Float(75.0)), Some(Ordering::Equal));
        assert_eq!(Scalar::Float(74.5).compare(&Scalar::Int(75)), Some(Ordering::Less));
        assert_eq!(Scalar::Int(-3).compare(&Scalar::Float(-2.5)), Some(Ordering::Less));
        assert_eq!(Scalar::Int(i64::MAX).compare(&Scalar::Float(1e19)), Some(Ordering::Less));
        assert_eq!(Scalar::Int(1).compare(&Scalar::Float(f64::NAN)), None);
    }

    #[test]
    fn incompatible_kinds_do_not_compare() {
        assert_eq!(Scalar::Int(1).compare(&Scalar::Str("1".into())), None);
        assert_eq!(Scalar::Timestamp(1).compare(&Scalar::Int(1)), None);
    }

    #[test]
    fn json_encoding_keeps_kinds() {
        let mut fields = Fields::new();
        fields.insert("a".into(), Scalar::Int(3));
        fields.insert("b".into(), Scalar::Float(3.0));
        fields.insert("c".into(), Scalar::Timestamp(17));
        fields.insert("d".into(), Scalar::Str("x".into()));
        let text = serde_json::to_string(&fields).unwrap();
        assert_eq!(text, r#"{"a":3,"b":3.0,"c":{"$ts":17},"d":"x"}"#);
        let back: Fields = serde_json::from_str(&text).unwrap();
        assert_eq!(back, fields);
    }

    #[test]
    fn render_drops_trailing_zero_fraction() {
        assert_eq!(Scalar::Float(80.0).render(), "80");
        assert_eq!(Scalar::Float(72.5).render(), "72.5");
        assert_eq!(Scalar::Str("hi".into()).render(), "hi");
    }
}
