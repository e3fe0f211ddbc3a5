//! Scheduling of micro-service chains over a hierarchical multi-cloud.
//!
//! Requests arrive for service function chains (DAGs of micro-services).
//! A scheduler labels their services, orders the ready ones and places each
//! on a virtual machine in some cloud, trading off co-location against
//! queueing and network delay. [`sim::run`] drives a whole scenario and
//! reports traffic, turnaround, SLA satisfaction and cost; [`sweep`] repeats
//! that across demand or load levels.

// NaN-rejecting guards are written as `!(x >= 0.0)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod fws;
pub mod greedy;
pub mod infra;
pub mod model;
pub mod policy;
pub mod scenario;
pub mod sim;
pub mod sweep;

pub use error::{Result, SchedError};
pub use fws::{assign_labels, compute_weight, select_machine_fws, select_next_service, LabeledService, WeightParams};
pub use greedy::{greedy_select_machine, greedy_select_service, GreedyPolicy};
pub use infra::{default_catalog, link_delay, nearest_vm_type, Cluster, Topology, TopologySpec, VmType};
pub use model::{build_chain, canonical_sfcs, ChainInstance, MicroServiceDef, ResourceDemand, ServiceChain, UserRequest};
pub use policy::{MachineChoice, Policy};
pub use scenario::{parse_scenario, Scenario};
pub use sim::{accumulate_traffic, check_sla, generate_workload, run, run_with_policy, total_cost, MetricsReport};

pub use sweep::{emit_results, parse_results, run_sweep, OutputFormat, ResultRow, SweepVar};
