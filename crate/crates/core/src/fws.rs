//! Affinity-based fair weighted scheduling.
//!
//! Three independent decisions:
//!
//! * **Labeling.** Coffman-Graham style: sinks take the lowest labels, and
//!   each further label goes to an unlabeled service whose successors are
//!   all labeled, preferring the shortest execution time. The service with
//!   the highest label is scheduled first, so chain heads lead.
//! * **Service selection.** Highest label, then highest weight. The weight
//!   grows with the number of dependents and with time spent waiting, which
//!   keeps long chains and long waits from being starved.
//! * **Machine selection.** A predecessor's machine if it still has room,
//!   otherwise the machine adding the least inter-machine traffic, otherwise a
//!   freshly provisioned machine close to the predecessors.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SchedError};
use crate::infra::{Cluster, MachineId, NodeId, Topology, VmType};
use crate::model::{InstanceId, ResourceDemand, ServiceChain, ServiceDefs, ServiceId};
use crate::policy::{free_nodes, provision_type, MachineChoice, SelectionRule};

/// How many dependents count toward a service's weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DependentsMode {
    #[default]
    Transitive,
    Immediate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeightParams {
    /// Weight per dependent service.
    pub alpha_dep: f64,
    /// Weight per millisecond spent waiting.
    pub beta_wait: f64,
    pub dependents: DependentsMode,
}

impl Default for WeightParams {
    fn default() -> Self {
        WeightParams {
            alpha_dep: 1.0,
            beta_wait: 0.01,
            dependents: DependentsMode::Transitive,
        }
    }
}

impl WeightParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_dep >= 0.0) {
            return Err(SchedError::validation("fws.alpha_dep", "must be nonnegative"));
        }
        if !(self.beta_wait >= 0.0) {
            return Err(SchedError::validation("fws.beta_wait", "must be nonnegative"));
        }
        if self.alpha_dep == 0.0 && self.beta_wait == 0.0 {
            return Err(SchedError::validation(
                "fws",
                "alpha_dep and beta_wait cannot both be zero",
            ));
        }
        Ok(())
    }

    pub fn dependents_of(&self, chain: &ServiceChain, service: ServiceId) -> Result<usize> {
        match self.dependents {
            DependentsMode::Transitive => chain.transitive_dependents(service),
            DependentsMode::Immediate => chain.immediate_dependents(service),
        }
    }
}

/// A ready (or soon ready) service waiting for placement.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledService {
    pub instance_id: InstanceId,
    pub service_id: ServiceId,
    pub label: u32,
    pub weight: f64,
    pub enqueue_time_ms: f64,
    pub exec_time_ms: f64,
    /// Dependent count under the configured [`DependentsMode`].
    pub dependents: usize,
}

impl LabeledService {
    pub fn key(&self) -> (InstanceId, ServiceId) {
        (self.instance_id, self.service_id)
    }
}

/// One chain instance contributing its not-yet-started services to a
/// labeling pass.
#[derive(Debug, Clone)]
pub struct LabelTask<'a> {
    pub instance_id: InstanceId,
    pub arrival_ms: f64,
    pub chain: &'a ServiceChain,
    pub services: Vec<ServiceId>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    exec_time_ms: f64,
    arrival_ms: f64,
    instance_id: InstanceId,
    service_id: ServiceId,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.exec_time_ms
            .total_cmp(&other.exec_time_ms)
            .then_with(|| self.arrival_ms.total_cmp(&other.arrival_ms))
            .then_with(|| self.instance_id.cmp(&other.instance_id))
            .then_with(|| self.service_id.cmp(&other.service_id))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Labels every service in `batch` with a distinct value in `1..=N`.
///
/// Successor relations only count within the batch. Candidates are ordered
/// by execution time, then instance arrival, then ids.
pub fn assign_labels(batch: &[LabelTask<'_>], defs: &ServiceDefs) -> BTreeMap<(InstanceId, ServiceId), u32> {
    let mut pending_succs: BTreeMap<(InstanceId, ServiceId), usize> = BTreeMap::new();
    let mut meta: BTreeMap<(InstanceId, ServiceId), (&LabelTask<'_>, Candidate)> = BTreeMap::new();
    for task in batch {
        let members: BTreeSet<ServiceId> = task.services.iter().copied().collect();
        for &s in &members {
            let in_batch = task
                .chain
                .successors(s)
                .iter()
                .filter(|n| members.contains(n))
                .count();
            pending_succs.insert((task.instance_id, s), in_batch);
            meta.insert(
                (task.instance_id, s),
                (
                    task,
                    Candidate {
                        exec_time_ms: defs.def(s).exec_time_ms,
                        arrival_ms: task.arrival_ms,
                        instance_id: task.instance_id,
                        service_id: s,
                    },
                ),
            );
        }
    }

    let mut ready: BTreeSet<Candidate> = pending_succs
        .iter()
        .filter(|(_, &n)| n == 0)
        .map(|(k, _)| meta[k].1)
        .collect();
    let mut labels = BTreeMap::new();
    let mut next = 1u32;
    while let Some(c) = ready.pop_first() {
        let key = (c.instance_id, c.service_id);
        labels.insert(key, next);
        next += 1;
        let task = meta[&key].0;
        for &p in task.chain.predecessors(c.service_id) {
            if let Some(n) = pending_succs.get_mut(&(c.instance_id, p)) {
                *n -= 1;
                if *n == 0 {
                    ready.insert(meta[&(c.instance_id, p)].1);
                }
            }
        }
    }
    labels
}

/// `alpha_dep * dependents + beta_wait * waited_ms`.
pub fn compute_weight(
    entry: &LabeledService,
    now_ms: f64,
    chain: &ServiceChain,
    params: &WeightParams,
) -> Result<f64> {
    let dependents = params.dependents_of(chain, entry.service_id)?;
    Ok(weight_of(dependents, now_ms - entry.enqueue_time_ms, params))
}

pub(crate) fn weight_of(dependents: usize, waited_ms: f64, params: &WeightParams) -> f64 {
    params.alpha_dep * dependents as f64 + params.beta_wait * waited_ms.max(0.0)
}

/// Orders queue entries by descending label, then descending weight, then
/// earliest enqueue time, then ascending ids.
fn fws_order(a: &LabeledService, b: &LabeledService) -> Ordering {
    b.label
        .cmp(&a.label)
        .then_with(|| b.weight.total_cmp(&a.weight))
        .then_with(|| a.enqueue_time_ms.total_cmp(&b.enqueue_time_ms))
        .then_with(|| a.key().cmp(&b.key()))
}

/// Refreshes weights at `now_ms` and picks the next entry to schedule.
/// Returns its index in `queue`.
pub fn select_next_service(queue: &mut [LabeledService], now_ms: f64, params: &WeightParams) -> Result<usize> {
    for e in queue.iter_mut() {
        e.weight = weight_of(e.dependents, now_ms - e.enqueue_time_ms, params);
    }
    queue
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| fws_order(a, b))
        .map(|(i, _)| i)
        .ok_or(SchedError::EmptyQueue)
}

/// Where an already-placed predecessor of the service lives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredecessorSite {
    pub machine: MachineId,
    pub node: NodeId,
    pub data_out_kb: f64,
}

/// Inter-machine traffic (kB, hop weighted) that placing on `node`/`machine`
/// adds. A transfer between two machines in the same cloud counts once; each
/// link crossed counts once more.
pub fn added_traffic(topology: &Topology, preds: &[PredecessorSite], machine: MachineId, node: NodeId) -> f64 {
    preds
        .iter()
        .filter(|p| p.machine != machine)
        .map(|p| {
            let hops = topology.hops(p.node, node).unwrap_or(usize::MAX / 2);
            p.data_out_kb * (1 + hops) as f64
        })
        .sum()
}

/// Picks a machine for a ready service.
///
/// `delay` gives the current path delay between two nodes and is used to
/// place freshly provisioned machines next to the predecessors.
pub fn select_machine_fws(
    demand: &ResourceDemand,
    preds: &[PredecessorSite],
    cluster: &Cluster,
    topology: &Topology,
    catalog: &[VmType],
    delay: &dyn Fn(NodeId, NodeId) -> f64,
) -> Result<MachineChoice> {
    let by_traffic_then_room = |a: &(f64, f64, MachineId), b: &(f64, f64, MachineId)| {
        a.0.total_cmp(&b.0)
            .then_with(|| b.1.total_cmp(&a.1))
            .then_with(|| a.2.cmp(&b.2))
    };

    // (a) affinity
    let affinity: BTreeSet<MachineId> = preds.iter().map(|p| p.machine).collect();
    let best_affine = affinity
        .iter()
        .filter_map(|&id| cluster.machine(id))
        .filter(|m| m.fits(demand))
        .map(|m| {
            (
                added_traffic(topology, preds, m.machine_id, m.node_id),
                m.remaining_fraction(),
                m.machine_id,
            )
        })
        .min_by(by_traffic_then_room);
    if let Some((_, _, machine)) = best_affine {
        return Ok(MachineChoice::Existing {
            machine,
            rule: SelectionRule::Affinity,
        });
    }

    // (b) least added traffic, then most remaining capacity
    let best_existing = cluster
        .machines()
        .filter(|m| m.fits(demand))
        .map(|m| {
            (
                added_traffic(topology, preds, m.machine_id, m.node_id),
                m.remaining_fraction(),
                m.machine_id,
            )
        })
        .min_by(by_traffic_then_room);
    if let Some((_, _, machine)) = best_existing {
        return Ok(MachineChoice::Existing {
            machine,
            rule: SelectionRule::Existing,
        });
    }

    // (c) provision next to the predecessors
    let vm_type = provision_type(demand, catalog)?;
    let node = free_nodes(cluster, topology.nodes().len())
        .map(|n| {
            let d: f64 = preds.iter().map(|p| delay(p.node, n)).sum();
            let limit = topology.nodes()[n].vm_slots as f64;
            let room = 1.0 - cluster.slots_used(n) as f64 / limit;
            (d, room, n)
        })
        .min_by(|a, b| {
            a.0.total_cmp(&b.0)
                .then_with(|| b.1.total_cmp(&a.1))
                .then_with(|| a.2.cmp(&b.2))
        })
        .map(|(_, _, n)| n)
        .ok_or(SchedError::NoCapacity)?;
    Ok(MachineChoice::Provision { node, vm_type })
}
