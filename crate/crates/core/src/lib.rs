//! Trace-driven simulator of a multi-core cache hierarchy whose sets are split
//! into temporary and persistent domains, with an attack harness for the
//! covert channels that speculative execution opens through cache state.

pub mod attacks;
pub mod cache;
pub mod coherence;
pub mod config;
pub mod domains;
pub mod engine;
pub mod error;
pub mod fig2;
pub mod notifier;
pub mod prefetch;
pub mod report;
pub mod tos;
pub mod trace;
pub mod types;
pub mod workload;

pub use config::{Mode, SimConfig};
pub use engine::{run, Simulator};
pub use error::{Result, SimError};
pub use report::{LatencyClass, SimReport, TimingObservation};
pub use trace::{parse_trace, TraceEvent};
