//! Gain-schedule synthesis and closed-loop simulation for networked control
//! systems: an LTI plant whose sensor->controller and controller->actuator
//! paths cross networks with Markov-modeled random delays and drop-outs.
//!
//! The controller sends a packet vector with one candidate input per possible
//! delivery delay; the actuator applies the component matching the realized
//! age of the freshest packet it holds. Offline, a backward value recursion
//! over the delay modes (r, d~) produces a table of gains L_k and value
//! matrices K_k on an extended state (delayed plant state stacked with the
//! recent packet history). A Monte-Carlo simulator and an exhaustive
//! small-instance oracle validate the schedule.

pub mod config;
pub mod delay_model;
pub mod extended_dynamics;
pub mod oracle;
pub mod packet_layout;
pub mod rng_util;
pub mod schedule_io;
pub mod simulation;
pub mod synthesis;


pub use delay_model::{ChainError, DelayChain, TransitionQuery};
pub use extended_dynamics::{DynamicsError, ExtendedDynamics, ExtendedState, PlantModel};

pub use packet_layout::{LayoutError, PacketLayout, SelectorSet};
pub use config::{load_config, ConfigError, LoadedProblem, Problem, RunConfig};
pub use oracle::{CostDecomposition, ExpectedCosts, KernelDeviations, OracleError};
pub use schedule_io::{read_schedule, write_schedule, ScheduleIoError};
pub use simulation::{EpisodeInit, MonteCarloSummary, RealizedSequences, SimError, SimTrace};
pub use synthesis::{CostSpec, GainSchedule, SynthesisError, SynthesisOutput, Synthesizer};


