//! Biased greedy baselines: least/most-full machine crossed with
//! first-finish/decreasing-time service choice. None of them look at affinity
//! or inter-machine traffic.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SchedError};
use crate::fws::LabeledService;
use crate::infra::{Cluster, MachineId, Topology, VmType};
use crate::model::ResourceDemand;
use crate::policy::{free_nodes, provision_type, MachineChoice, SelectionRule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MachineBias {
    LeastFull,
    MostFull,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServiceBias {
    FirstFinish,
    DecreasingTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GreedyPolicy {
    pub machine_bias: MachineBias,
    pub service_bias: ServiceBias,
}

impl GreedyPolicy {
    pub const LFFF: GreedyPolicy = GreedyPolicy {
        machine_bias: MachineBias::LeastFull,
        service_bias: ServiceBias::FirstFinish,
    };
    pub const MFFF: GreedyPolicy = GreedyPolicy {
        machine_bias: MachineBias::MostFull,
        service_bias: ServiceBias::FirstFinish,
    };
    pub const LFDT: GreedyPolicy = GreedyPolicy {
        machine_bias: MachineBias::LeastFull,
        service_bias: ServiceBias::DecreasingTime,
    };
    pub const MFDT: GreedyPolicy = GreedyPolicy {
        machine_bias: MachineBias::MostFull,
        service_bias: ServiceBias::DecreasingTime,
    };

    pub fn name(&self) -> &'static str {
        match (self.machine_bias, self.service_bias) {
            (MachineBias::LeastFull, ServiceBias::FirstFinish) => "lfff",
            (MachineBias::MostFull, ServiceBias::FirstFinish) => "mfff",
            (MachineBias::LeastFull, ServiceBias::DecreasingTime) => "lfdt",
            (MachineBias::MostFull, ServiceBias::DecreasingTime) => "mfdt",
        }
    }
}

/// Among the highest-label entries, picks by execution time according to
/// `bias`; ties by ascending (instance, service). Returns the index.
pub fn greedy_select_service(queue: &[LabeledService], bias: ServiceBias) -> Result<usize> {
    let top = queue.iter().map(|e| e.label).max().ok_or(SchedError::EmptyQueue)?;
    let by_time = |a: &LabeledService, b: &LabeledService| -> Ordering {
        let t = a.exec_time_ms.total_cmp(&b.exec_time_ms);
        match bias {
            ServiceBias::FirstFinish => t,
            ServiceBias::DecreasingTime => t.reverse(),
        }
    };
    queue
        .iter()
        .enumerate()
        .filter(|(_, e)| e.label == top)
        .min_by(|(_, a), (_, b)| by_time(a, b).then_with(|| a.key().cmp(&b.key())))
        .map(|(i, _)| i)
        .ok_or(SchedError::EmptyQueue)
}

/// Feasible machine with the lowest (least full) or highest (most full)
/// utilization; otherwise a fresh machine on the lowest-id node with room.
pub fn greedy_select_machine(
    demand: &ResourceDemand,
    cluster: &Cluster,
    bias: MachineBias,
    catalog: &[VmType],
    topology: &Topology,
) -> Result<MachineChoice> {
    let pick = cluster
        .machines()
        .filter(|m| m.fits(demand))
        .map(|m| (m.utilization(), m.machine_id))
        .min_by(|a: &(f64, MachineId), b: &(f64, MachineId)| {
            let u = a.0.total_cmp(&b.0);
            let u = match bias {
                MachineBias::LeastFull => u,
                MachineBias::MostFull => u.reverse(),
            };
            u.then_with(|| a.1.cmp(&b.1))
        });
    if let Some((_, machine)) = pick {
        return Ok(MachineChoice::Existing {
            machine,
            rule: SelectionRule::Existing,
        });
    }
    let vm_type = provision_type(demand, catalog)?;
    let node = free_nodes(cluster, topology.nodes().len())
        .next()
        .ok_or(SchedError::NoCapacity)?;
    Ok(MachineChoice::Provision { node, vm_type })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::infra::{default_catalog, CloudKind, CloudNode};

    fn entry(inst: u64, svc: u32, label: u32, exec: f64) -> LabeledService {
        LabeledService {
            instance_id: inst,
            service_id: svc,
            label,
            weight: 0.0,
            enqueue_time_ms: 0.0,
            exec_time_ms: exec,
            dependents: 0,
        }
    }

    #[test]
    fn names() {
        let names: Vec<_> = [GreedyPolicy::LFFF, GreedyPolicy::MFFF, GreedyPolicy::LFDT, GreedyPolicy::MFDT]
            .iter()
            .map(GreedyPolicy::name)
            .collect();
        assert_eq!(names, ["lfff", "mfff", "lfdt", "mfdt"]);
    }

    #[test]
    fn service_bias_examples() {
        let q = vec![entry(0, 1, 2, 30.0), entry(1, 1, 2, 70.0)];
        assert_eq!(greedy_select_service(&q, ServiceBias::FirstFinish).unwrap(), 0);
        assert_eq!(greedy_select_service(&q, ServiceBias::DecreasingTime).unwrap(), 1);
        let single = vec![entry(3, 3, 1, 42.0)];
        assert_eq!(greedy_select_service(&single, ServiceBias::FirstFinish).unwrap(), 0);
        assert_eq!(greedy_select_service(&single, ServiceBias::DecreasingTime).unwrap(), 0);
        assert_eq!(greedy_select_service(&[], ServiceBias::FirstFinish), Err(SchedError::EmptyQueue));
    }

    #[test]
    fn service_bias_only_considers_top_label() {
        let q = vec![entry(0, 1, 1, 5.0), entry(1, 1, 4, 70.0), entry(2, 1, 4, 60.0)];
        assert_eq!(greedy_select_service(&q, ServiceBias::FirstFinish).unwrap(), 2);
    }

    fn cluster_with_utilizations() -> (Topology, Cluster, Vec<MachineId>) {
        let nodes = (0..2)
            .map(|i| CloudNode { node_id: i, kind: CloudKind::Micro, vm_slots: 2 })
            .collect();
        let topo = Topology::new(nodes, vec![]).unwrap();
        let mut cluster = Cluster::new(&topo);
        let large = VmType::new("x.10", 10.0, 10, 25.0, 1.0);
        let a = cluster.provision_machine(0, &large).unwrap();
        let b = cluster.provision_machine(0, &large).unwrap();
        cluster.machine_mut(a).unwrap().host(0, 1, ResourceDemand::new(2.0, 2)).unwrap();
        cluster.machine_mut(b).unwrap().host(0, 2, ResourceDemand::new(8.0, 8)).unwrap();
        (topo, cluster, vec![a, b])
    }

    #[test]
    fn machine_bias_examples() {
        let (topo, cluster, ids) = cluster_with_utilizations();
        let d = ResourceDemand::new(1.0, 1);
        let cat = default_catalog();
        assert_eq!(
            greedy_select_machine(&d, &cluster, MachineBias::LeastFull, &cat, &topo).unwrap(),
            MachineChoice::Existing { machine: ids[0], rule: SelectionRule::Existing }
        );
        assert_eq!(
            greedy_select_machine(&d, &cluster, MachineBias::MostFull, &cat, &topo).unwrap(),
            MachineChoice::Existing { machine: ids[1], rule: SelectionRule::Existing }
        );
    }

    #[test]
    fn most_full_never_picks_an_infeasible_machine() {
        let (topo, cluster, ids) = cluster_with_utilizations();
        // 3 cores fit only on the 0.2 machine
        let d = ResourceDemand::new(1.0, 3);
        let cat = vec![VmType::new("x.10", 10.0, 10, 25.0, 1.0)];
        assert_eq!(
            greedy_select_machine(&d, &cluster, MachineBias::MostFull, &cat, &topo).unwrap(),
            MachineChoice::Existing { machine: ids[0], rule: SelectionRule::Existing }
        );
    }

    #[test]
    fn provisions_on_lowest_free_node() {
        let (topo, cluster, _) = cluster_with_utilizations();
        let d = ResourceDemand::new(9.5, 9);
        let cat = vec![VmType::new("x.10", 10.0, 10, 25.0, 1.0)];
        match greedy_select_machine(&d, &cluster, MachineBias::LeastFull, &cat, &topo).unwrap() {
            MachineChoice::Provision { node, .. } => assert_eq!(node, 1),
            other => panic!("unexpected {other:?}"),
        }
    }
}
