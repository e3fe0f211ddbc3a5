//! Scenario files.
//!
//! A scenario is TOML with the sections `topology`, `catalog`, `chains`,
//! `workload`, `fws` and `sweep`, plus a top-level `policy`. Every field has
//! a default, so an empty file is a complete scenario. Unknown keys are
//! rejected.
//!
//! ```toml
//! policy = "fws"
//!
//! [workload]
//! request_count = 1000
//! arrival_rate_rps = 100.0
//! seed = 7
//!
//! [[chains]]
//! id = 1
//! nodes = [1, 2, 3]
//! edges = [[1, 2], [2, 3]]
//! ```

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SchedError};
use crate::fws::{DependentsMode, WeightParams};
use crate::infra::{default_catalog, nearest_vm_type, Topology, TopologySpec, VmType};
use crate::model::{
    build_chain, canonical_chain_specs, ChainId, MicroServiceDef, ServiceChain, ServiceDefs, ServiceId,
    ServiceRanges,
};
use crate::policy::Policy;

/// Environment variable overriding `workload.seed`.
pub const SEED_ENV: &str = "SFC_SCHED_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSpec {
    pub id: ChainId,
    pub nodes: Vec<ServiceId>,
    #[serde(default)]
    pub edges: Vec<(ServiceId, ServiceId)>,
}

impl ChainSpec {
    pub fn build(&self) -> Result<ServiceChain> {
        build_chain(self.id, &self.nodes, &self.edges)
    }
}

pub fn default_chains() -> Vec<ChainSpec> {
    canonical_chain_specs()
        .into_iter()
        .map(|(id, nodes, edges)| ChainSpec { id, nodes, edges })
        .collect()
}

/// A request given verbatim instead of being generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedRequest {
    pub chain_id: ChainId,
    pub arrival_time_ms: f64,
    pub delay_sla_ms: f64,
    pub cost_sla: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorkloadSpec {
    pub request_count: usize,
    pub arrival_rate_rps: f64,
    pub sla_delay_range_ms: (f64, f64),
    /// Dollars attributable to one request.
    pub sla_cost_range: (f64, f64),
    pub background_load_fraction: f64,
    pub seed: u64,
    pub service_ranges: ServiceRanges,
    /// Explicit service definitions; services not listed are sampled.
    pub services: Vec<MicroServiceDef>,
    /// Explicit requests; replaces Poisson generation when nonempty.
    pub requests: Vec<FixedRequest>,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec {
            request_count: 1000,
            arrival_rate_rps: 100.0,
            sla_delay_range_ms: (250.0, 750.0),
            sla_cost_range: (5e-6, 2e-5),
            background_load_fraction: 0.0,
            seed: 1,
            service_ranges: ServiceRanges::default(),
            services: Vec::new(),
            requests: Vec::new(),
        }
    }
}

/// Scheduler weights and the service resume latency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FwsSpec {
    pub alpha_dep: f64,
    pub beta_wait: f64,
    pub dependents: DependentsMode,
    pub resume_latency_ms: f64,
}

impl Default for FwsSpec {
    fn default() -> Self {
        let w = WeightParams::default();
        FwsSpec {
            alpha_dep: w.alpha_dep,
            beta_wait: w.beta_wait,
            dependents: w.dependents,
            resume_latency_ms: 5.0,
        }
    }
}

impl FwsSpec {
    pub fn weights(&self) -> WeightParams {
        WeightParams {
            alpha_dep: self.alpha_dep,
            beta_wait: self.beta_wait,
            dependents: self.dependents,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSpec {
    pub demand_points: Vec<usize>,
    pub load_points: Vec<f64>,
    pub policies: Vec<Policy>,
    pub repetitions: usize,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            demand_points: vec![100, 500, 1000, 2000, 3000, 4000, 5000],
            load_points: (1..=9).map(|i| f64::from(i) / 10.0).collect(),
            policies: Policy::ALL.to_vec(),
            repetitions: 5,
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.demand_points.windows(2).any(|w| w[0] >= w[1]) {
            return Err(SchedError::validation("sweep.demand_points", "must be strictly increasing"));
        }
        if self.demand_points.first() == Some(&0) {
            return Err(SchedError::validation("sweep.demand_points", "must be positive"));
        }
        if self.load_points.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(SchedError::validation("sweep.load_points", "must be strictly increasing"));
        }
        if self.load_points.iter().any(|&l| !(0.0..1.0).contains(&l)) {
            return Err(SchedError::validation("sweep.load_points", "each point must lie in [0, 1)"));
        }
        if self.policies.is_empty() {
            return Err(SchedError::validation("sweep.policies", "must name at least one policy"));
        }
        let distinct: BTreeSet<_> = self.policies.iter().collect();
        if distinct.len() != self.policies.len() {
            return Err(SchedError::validation("sweep.policies", "contains duplicates"));
        }
        if self.repetitions == 0 {
            return Err(SchedError::validation("sweep.repetitions", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Scenario {
    pub policy: Policy,
    pub topology: TopologySpec,
    pub catalog: Vec<VmType>,
    pub chains: Vec<ChainSpec>,
    pub workload: WorkloadSpec,
    pub fws: FwsSpec,
    pub sweep: SweepSpec,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            policy: Policy::Fws,
            topology: TopologySpec::default(),
            catalog: default_catalog(),
            chains: default_chains(),
            workload: WorkloadSpec::default(),
            fws: FwsSpec::default(),
            sweep: SweepSpec::default(),
        }
    }
}

fn check_range(path: &str, (lo, hi): (f64, f64), positive: bool) -> Result<()> {
    if !(lo <= hi) {
        return Err(SchedError::validation(path, format!("lower bound {lo} exceeds upper bound {hi}")));
    }
    if positive && !(lo > 0.0) {
        return Err(SchedError::validation(path, "bounds must be positive"));
    }
    Ok(())
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let scenario: Scenario = toml::from_str(text).map_err(|e| SchedError::Parse(e.to_string()))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| SchedError::Parse(e.to_string()))
    }

    /// Checks every invariant; errors name the offending field.
    pub fn validate(&self) -> Result<()> {
        let w = &self.workload;
        if w.requests.is_empty() && !(w.arrival_rate_rps > 0.0) {
            return Err(SchedError::validation("workload.arrival_rate_rps", "must be positive"));
        }
        check_range("workload.sla_delay_range_ms", w.sla_delay_range_ms, true)?;
        check_range("workload.sla_cost_range", w.sla_cost_range, true)?;
        if !(0.0..1.0).contains(&w.background_load_fraction) {
            return Err(SchedError::validation(
                "workload.background_load_fraction",
                format!("{} is outside [0, 1)", w.background_load_fraction),
            ));
        }
        let r = &w.service_ranges;
        check_range("workload.service_ranges.exec_time_ms", r.exec_time_ms, true)?;
        check_range("workload.service_ranges.data_out_kb", r.data_out_kb, true)?;
        check_range("workload.service_ranges.capacity_rps", r.capacity_rps, true)?;
        check_range("workload.service_ranges.memory_gb", r.memory_gb, true)?;
        if !(r.cores.0 >= 1 && r.cores.0 <= r.cores.1) {
            return Err(SchedError::validation(
                "workload.service_ranges.cores",
                "bounds must be positive and ordered",
            ));
        }
        for (i, d) in w.services.iter().enumerate() {
            let path = format!("workload.services[{i}]");
            if !(d.exec_time_ms > 0.0 && d.data_out_kb > 0.0 && d.capacity_rps > 0.0) {
                return Err(SchedError::validation(path, "exec time, data size and capacity must be positive"));
            }
            if !(d.demand.memory_gb > 0.0 && d.demand.cores > 0) {
                return Err(SchedError::validation(path + ".demand", "must be positive"));
            }
        }
        for (i, rq) in w.requests.iter().enumerate() {
            if !(rq.arrival_time_ms >= 0.0 && rq.delay_sla_ms > 0.0 && rq.cost_sla > 0.0) {
                return Err(SchedError::validation(
                    format!("workload.requests[{i}]"),
                    "arrival must be nonnegative and SLA bounds positive",
                ));
            }
        }

        self.fws.weights().validate()?;
        if !(self.fws.resume_latency_ms >= 0.0) {
            return Err(SchedError::validation("fws.resume_latency_ms", "must be nonnegative"));
        }

        let n = &self.topology;
        if !(n.packet_kb > 0.0) {
            return Err(SchedError::validation("topology.packet_kb", "must be positive"));
        }
        if !(n.load_window_ms > 0.0) {
            return Err(SchedError::validation("topology.load_window_ms", "must be positive"));
        }
        if !(n.max_link_utilization > 0.0 && n.max_link_utilization < 1.0) {
            return Err(SchedError::validation("topology.max_link_utilization", "must lie in (0, 1)"));
        }
        if !(n.provision_latency_ms >= 0.0) {
            return Err(SchedError::validation("topology.provision_latency_ms", "must be nonnegative"));
        }

        if self.catalog.is_empty() {
            return Err(SchedError::validation("catalog", "must list at least one VM type"));
        }
        for (i, t) in self.catalog.iter().enumerate() {
            if !(t.memory_gb > 0.0 && t.cores > 0 && t.max_bandwidth_mbps > 0.0 && t.hourly_cost > 0.0) {
                return Err(SchedError::validation(format!("catalog[{i}]"), "all fields must be positive"));
            }
        }

        let topology = self.build_topology()?;
        for (i, m) in self.topology.machines.iter().enumerate() {
            if topology.node(m.node).is_none() {
                return Err(SchedError::validation(
                    format!("topology.machines[{i}].node"),
                    format!("unknown node {}", m.node),
                ));
            }
            if !self.catalog.iter().any(|t| t.name == m.vm_type) {
                return Err(SchedError::validation(
                    format!("topology.machines[{i}].vm_type"),
                    format!("`{}` is not in the catalog", m.vm_type),
                ));
            }
        }
        for node in topology.nodes() {
            let initial = self.topology.machines.iter().filter(|m| m.node == node.node_id).count();
            if initial > node.vm_slots {
                return Err(SchedError::validation(
                    "topology.machines",
                    format!("node {} holds {initial} machines but has {} slots", node.node_id, node.vm_slots),
                ));
            }
        }

        let chains = self.build_chains()?;
        for (i, rq) in w.requests.iter().enumerate() {
            if !chains.iter().any(|c| c.id() == rq.chain_id) {
                return Err(SchedError::validation(
                    format!("workload.requests[{i}].chain_id"),
                    format!("unknown chain {}", rq.chain_id),
                ));
            }
        }
        let defs = self.service_defs(&chains);
        for d in defs.iter() {
            if let Err(e) = nearest_vm_type(d.demand.memory_gb, d.demand.cores, &self.catalog) {
                return Err(SchedError::validation(format!("service[{}].demand", d.id), e.to_string()));
            }
        }
        if !w.services.is_empty() {
            let known: BTreeSet<ServiceId> = chains.iter().flat_map(|c| c.nodes().iter().copied()).collect();
            if let Some(d) = w.services.iter().find(|d| !known.contains(&d.id)) {
                return Err(SchedError::validation(
                    "workload.services",
                    format!("service {} belongs to no chain", d.id),
                ));
            }
        }
        self.sweep.validate()
    }

    pub fn build_topology(&self) -> Result<Topology> {
        let mut topology = self.topology.build()?;
        let f = self.workload.background_load_fraction;
        for link in topology.links_mut() {
            link.lambda_pps = f * link.mu_pps;
        }
        Ok(topology)
    }

    pub fn build_chains(&self) -> Result<Vec<Arc<ServiceChain>>> {
        if self.chains.is_empty() {
            return Err(SchedError::validation("chains", "must define at least one chain"));
        }
        let mut ids = BTreeSet::new();
        let mut services = BTreeSet::new();
        let mut out = Vec::with_capacity(self.chains.len());
        for (i, spec) in self.chains.iter().enumerate() {
            if !ids.insert(spec.id) {
                return Err(SchedError::validation(format!("chains[{i}].id"), "duplicate chain id"));
            }
            let chain = spec.build().map_err(|e| SchedError::validation(format!("chains[{i}]"), e.to_string()))?;
            for &n in chain.nodes() {
                if !services.insert(n) {
                    return Err(SchedError::validation(
                        format!("chains[{i}].nodes"),
                        format!("service {n} already belongs to another chain"),
                    ));
                }
            }
            out.push(Arc::new(chain));
        }
        Ok(out)
    }

    /// Sampled definitions for every chain service, overridden by any explicit
    /// `workload.services` entries. Depends only on the seed and the chain set.
    pub fn service_defs(&self, chains: &[Arc<ServiceChain>]) -> ServiceDefs {
        let mut rng = ChaCha8Rng::seed_from_u64(self.workload.seed);
        let mut defs = ServiceDefs::sample(chains, &self.workload.service_ranges, &mut rng);
        for d in &self.workload.services {
            defs.insert(d.clone());
        }
        defs
    }

    /// Applies `SFC_SCHED_SEED` when set.
    pub fn apply_env_seed(&mut self) -> Result<()> {
        if let Ok(raw) = std::env::var(SEED_ENV) {
            self.workload.seed = raw
                .trim()
                .parse()
                .map_err(|_| SchedError::validation(SEED_ENV, format!("`{raw}` is not a u64")))?;
        }
        Ok(())
    }
}

/// Reads, parses and validates a scenario file.
pub fn parse_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)?;
    Scenario::from_toml_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_scenario_is_valid() {
        let s = Scenario::default();
        s.validate().unwrap();
        assert_eq!(s.catalog.len(), 4);
        assert_eq!(s.chains.len(), 4);
        assert_eq!(s.sweep.repetitions, 5);
        assert_eq!(s.fws.resume_latency_ms, 5.0);
        assert_eq!(s.fws.alpha_dep, 1.0);
        assert_eq!(s.fws.beta_wait, 0.01);
    }

    #[test]
    fn minimal_file_takes_defaults() {
        let s = Scenario::from_toml_str("policy = \"mfdt\"\n").unwrap();
        assert_eq!(s.policy.name(), "mfdt");
        assert_eq!(Scenario { policy: Policy::Fws, ..s }, Scenario::default());
    }

    #[test]
    fn background_load_out_of_range_names_the_field() {
        let err = Scenario::from_toml_str("[workload]\nbackground_load_fraction = 1.2\n").unwrap_err();
        match err {
            SchedError::Validation { path, .. } => assert_eq!(path, "workload.background_load_fraction"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn catalog_override_replaces_defaults() {
        let text = r#"
[[catalog]]
name = "a.small"
memory_gb = 4.0
cores = 2
max_bandwidth_mbps = 10.0
hourly_cost = 0.05

[[catalog]]
name = "b.big"
memory_gb = 16.0
cores = 4
max_bandwidth_mbps = 20.0
hourly_cost = 0.2
"#;
        let s = Scenario::from_toml_str(text).unwrap();
        let names: Vec<_> = s.catalog.iter().map(|t| t.name.as_str()).collect();
        assert_eq!(names, ["a.small", "b.big"]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(
            Scenario::from_toml_str("[workload]\nrequests_count = 3\n"),
            Err(SchedError::Parse(_))
        ));
        assert!(matches!(Scenario::from_toml_str("colour = 1\n"), Err(SchedError::Parse(_))));
        assert!(matches!(Scenario::from_toml_str("policy = \"heft\"\n"), Err(SchedError::Parse(_))));
    }

    #[test]
    fn malformed_text_is_a_parse_error() {
        assert!(matches!(Scenario::from_toml_str("[workload\n"), Err(SchedError::Parse(_))));
    }

    #[test]
    fn chain_errors_are_reported_with_paths() {
        let text = "[[chains]]\nid = 1\nnodes = [1, 2]\nedges = [[1, 2], [2, 1]]\n";
        match Scenario::from_toml_str(text).unwrap_err() {
            SchedError::Validation { path, message } => {
                assert_eq!(path, "chains[0]");
                assert!(message.contains("cycle"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn sweep_points_must_increase() {
        let bad = SweepSpec { demand_points: vec![10, 5], ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = SweepSpec { load_points: vec![0.5, 1.0], ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn toml_round_trip() {
        let s = Scenario::default();
        let text = s.to_toml_string().unwrap();
        assert_eq!(Scenario::from_toml_str(&text).unwrap(), s);
    }

    #[test]
    fn service_defs_depend_only_on_seed() {
        let a = Scenario::default();
        let mut b = Scenario::default();
        b.workload.request_count = 17;
        let chains = a.build_chains().unwrap();
        assert_eq!(a.service_defs(&chains), b.service_defs(&chains));
        b.workload.seed = 2;
        assert_ne!(a.service_defs(&chains), b.service_defs(&chains));
    }
}
