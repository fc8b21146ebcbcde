//! Identifier newtypes shared by every level of the memory hierarchy.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::ParseIdError;

/// Identifies a memory node. Chunks live at level 0 and are numbered in
/// arrival order; an abstraction at level `l + 1` reuses the cluster label
/// it summarizes at level `l` as its index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId {
    pub level: u32,
    pub index: u64,
}

impl NodeId {
    pub const fn new(level: u32, index: u64) -> Self {
        Self { level, index }
    }

    pub const fn chunk(index: u64) -> Self {
        Self { level: 0, index }
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}:{}", self.level, self.index)
    }
}

impl FromStr for NodeId {
    type Err = ParseIdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ParseIdError(s.to_string());
        let rest = s.strip_prefix('L').ok_or_else(bad)?;
        let (level, index) = rest.split_once(':').ok_or_else(bad)?;
        Ok(NodeId {
            level: level.parse().map_err(|_| bad())?,
            index: index.parse().map_err(|_| bad())?,
        })
    }
}

/// A per-level cluster label. Labels are minted from a monotone counter
/// and never reused within a level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClusterLabel(pub u64);

impl fmt::Display for ClusterLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}", self.0)
    }
}

/// Canonical replica identity: the replicated node plus the smallest member
/// of the ego-network component the replica stands for. Isolated nodes carry
/// a single replica whose anchor is `None`, which sorts before any member.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ReplicaId {
    pub node: NodeId,
    pub anchor: Option<NodeId>,
}

impl ReplicaId {
    pub const fn new(node: NodeId, anchor: Option<NodeId>) -> Self {
        Self { node, anchor }
    }

    pub const fn isolated(node: NodeId) -> Self {
        Self { node, anchor: None }
    }
}

impl fmt::Display for ReplicaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.anchor {
            Some(a) => write!(f, "{}@{}", self.node, a),
            None => write!(f, "{}@-", self.node),
        }
    }
}

impl FromStr for ReplicaId {
    type Err = ParseIdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (node, anchor) = s.split_once('@').ok_or_else(|| ParseIdError(s.to_string()))?;
        let anchor = match anchor {
            "-" => None,
            a => Some(a.parse()?),
        };
        Ok(ReplicaId { node: node.parse()?, anchor })
    }
}


macro_rules! serde_via_str {
    ($t:ty) => {
        impl Serialize for $t {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.collect_str(self)
            }
        }

        impl<'de> Deserialize<'de> for $t {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

serde_via_str!(NodeId);
serde_via_str!(ReplicaId);
