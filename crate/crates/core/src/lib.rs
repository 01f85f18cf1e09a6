//! QTMTT partition-search laboratory: an intra RD engine, an exact and a
//! selector-driven partition search, a size-independent Q-network that
//! prunes split candidates, and the complexity and BD-rate metrics used to
//! compare them.

pub mod agent;
pub mod features;
pub mod io;
pub mod metrics;
pub mod partition;
pub mod rd;
pub mod search;
pub mod sweep;

pub use agent::{AgentError, AgentSelector, QNetwork};
pub use features::{StateVector, FEATURE_DIM};
pub use partition::{CuRect, ModeSet, PartitionConstraints, PartitionTree, SplitMode};
pub use rd::{Frame, LeafCost, PredictionReference, ReconState};
pub use search::{RdStats, SearchParams, SearchResult, SplitSelector};
