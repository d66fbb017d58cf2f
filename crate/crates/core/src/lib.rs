//! Holding-maneuver prediction on a directed airport network.
//!
//! Flights are parallel edges of a directed multigraph. The multigraph is
//! collapsed into a weighted digraph whose edge-level centralities are joined
//! back onto every flight as tabular features for a gradient-boosted tree
//! ensemble. A graph attention network consumes the multigraph directly.

pub mod centrality;
pub mod eval;
pub mod features;
pub mod gat;
pub mod gbdt;
pub mod graph;
pub mod ingest;
pub mod par;

pub use centrality::{EdgeGraphFeatures, GoogleMatrix};
pub use eval::{ClassificationReport, MetricsReport, RegressionReport};
pub use features::{FeatureMatrix, FeatureRegistry, NetworkFeatures};
pub use gat::{Gat, GatConfig, GraphBatch};
pub use gbdt::{GbdtModel, Task, TrainConfig};
pub use graph::{AirportNode, FlightMultigraph, WeightedDigraph};
pub use ingest::{Dataset, FlightRecord};
pub use par::Execution;
