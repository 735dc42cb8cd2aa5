use serde::{Deserialize, Serialize};

use crate::scalar::{Fields, Scalar};

pub type PacketId = u64;

/// One brick traversal recorded on a packet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hop {
    pub brick_id: String,
    pub port: String,
    pub ts: i64,
}

/// The unit of data flow between bricks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Packet {
    /// Assigned by the engine when the packet is emitted; 0 until then.
    pub id: PacketId,
    pub created_at: i64,
    pub fields: Fields,
    /// Append-only hop list.
    pub trace: Vec<Hop>,
    pub lineage_depth: u32,
    /// The packet this one was derived from, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<PacketId>,
}

impl Packet {
    /// A fresh packet at the start of a lineage (inlet or signal producer without payload).
    pub fn new(fields: Fields) -> Self {
        Packet {
            id: 0,
            created_at: 0,
            fields,
            trace: Vec::new(),
            lineage_depth: 0,
            parent: None,
        }
    }

    /// A packet produced by a brick while processing `self`.
    pub fn derive(&self, fields: Fields) -> Packet {
        Packet {
            id: 0,
            created_at: 0,
            fields,
            trace: self.trace.clone(),
            lineage_depth: self.lineage_depth + 1,
            parent: Some(self.id),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Scalar> {
        self.fields.get(name)
    }

    pub fn with_field(mut self, name: impl Into<String>, value: impl Into<Scalar>) -> Self {
        self.fields.insert(name.into(), value.into());
        self
    }
}

/// Build a [`Fields`] map from `(name, value)` pairs.
pub fn fields<I, K, V>(pairs: I) -> Fields
where
    I: IntoIterator<Item = (K, V)>,
    K: Into<String>,
    V: Into<Scalar>,
{
    pairs.into_iter().map(|(k, v)| (k.into(), v.into())).collect()
}
