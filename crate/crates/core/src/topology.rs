use std::fmt;

use serde::{Deserialize, Serialize};

/// Index of a router in the metro network. A router plays the destination
/// role for its own wavelength and the source role toward every other one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub u16);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

/// Which destination trees are simulated.
///
/// A single tree has one destination (node 0) fed by `sources` source nodes
/// that transmit to nobody else, so there is never transmitter contention.
/// A network has `nodes` routers, each the root of its own tree and a source
/// on every other tree.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Topology {
    SingleTree { sources: u16 },
    Network { nodes: u16 },
}

impl Topology {
    pub fn node_count(&self) -> usize {
        match *self {
            Topology::SingleTree { sources } => sources as usize + 1,
            Topology::Network { nodes } => nodes as usize,
        }
    }

    pub fn destinations(&self) -> Vec<NodeId> {
        match *self {
            Topology::SingleTree { .. } => vec![NodeId(0)],
            Topology::Network { nodes } => (0..nodes).map(NodeId).collect(),
        }
    }

    pub fn sources(&self) -> Vec<NodeId> {
        match *self {
            Topology::SingleTree { sources } => (1..=sources).map(NodeId).collect(),
            Topology::Network { nodes } => (0..nodes).map(NodeId).collect(),
        }
    }

    /// Sources polled by destination `dest`.
    pub fn sources_of(&self, dest: NodeId) -> Vec<NodeId> {
        self.sources().into_iter().filter(|&s| s != dest).collect()
    }

    /// Number of sources per destination tree (S).
    pub fn sources_per_tree(&self) -> usize {
        match *self {
            Topology::SingleTree { sources } => sources as usize,
            Topology::Network { nodes } => nodes as usize - 1,
        }
    }

    /// Destinations a given source transmits to.
    pub fn destinations_of(&self, src: NodeId) -> Vec<NodeId> {
        self.destinations().into_iter().filter(|&d| d != src).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_tree_roles() {
        let t = Topology::SingleTree { sources: 3 };
        assert_eq!(t.node_count(), 4);
        assert_eq!(t.sources_of(NodeId(0)), vec![NodeId(1), NodeId(2), NodeId(3)]);
        assert_eq!(t.destinations_of(NodeId(2)), vec![NodeId(0)]);
    }

    #[test]
    fn network_roles() {
        let t = Topology::Network { nodes: 4 };
        assert_eq!(t.sources_per_tree(), 3);
        assert_eq!(t.sources_of(NodeId(1)), vec![NodeId(0), NodeId(2), NodeId(3)]);
    }
}
