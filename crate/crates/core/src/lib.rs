//! Incremental hierarchical memory: chunks become nodes of a similarity
//! graph, overlapping clusters of that graph become summary nodes one level
//! up, and queries are answered by localizing on the closest nodes and then
//! walking the hierarchy with a language model as the selector.

pub mod bench;
pub mod cluster;
pub mod config;
pub mod consistency;
pub mod corpus;
pub mod ego_split;
pub mod embedding;
pub mod engine;
pub mod error;
pub mod graph;
pub mod hierarchy;
pub mod ids;
pub mod oracles;
pub mod persistence;
pub mod providers;
pub mod retrieval;
pub mod synthetic;
