//! Deterministic traffic-signal control at desk scale: a 1-second-tick
//! microsimulator, the pressure/demand observables computed from it, the
//! classical controller family (FixedTime, MaxPressure, Efficient-MP,
//! Advanced-MP), a parameter-shared deep-Q agent over the advanced traffic
//! state, and an experiment harness with seeded, reproducible output.

pub mod control;
pub mod experiment;
pub mod hash;
pub mod metrics;
pub mod network;
pub mod observer;
pub mod rl;
pub mod sim;

pub use control::{ControllerConfig, ControllerKind, Decision};
pub use metrics::EpisodeMetrics;
pub use network::{
    generate_grid, generate_poisson_flow, load_cityflow, FlowSpec, GridSpec, IntersectionId,
    LaneId, PoissonFlowConfig, RoadId, TrafficNetwork,
};
pub use observer::{IntersectionObservation, ObservationMode};
pub use sim::{SimConfig, World};
