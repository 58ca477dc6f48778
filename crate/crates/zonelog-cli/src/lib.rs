//! Benchmark, verification and copyset-simulation harness for the zonelog
//! engine: workload distributions, the shadow oracle, the run driver and
//! metrics emission.

pub mod metrics;
pub mod oracle;
pub mod runner;
pub mod workload;
