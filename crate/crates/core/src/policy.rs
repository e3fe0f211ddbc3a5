//! Policy names and the machine decision shared by all schedulers.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SchedError};
use crate::greedy::GreedyPolicy;
use crate::infra::{nearest_vm_type, Cluster, MachineId, NodeId, VmType};
use crate::model::ResourceDemand;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Policy {
    Fws,
    Greedy(GreedyPolicy),
}

impl Policy {
    pub const ALL: [Policy; 5] = [
        Policy::Fws,
        Policy::Greedy(GreedyPolicy::LFFF),
        Policy::Greedy(GreedyPolicy::MFFF),
        Policy::Greedy(GreedyPolicy::LFDT),
        Policy::Greedy(GreedyPolicy::MFDT),
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Policy::Fws => "fws",
            Policy::Greedy(g) => g.name(),
        }
    }

    pub fn is_greedy(&self) -> bool {
        matches!(self, Policy::Greedy(_))
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Policy {
    type Err = SchedError;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        Policy::ALL
            .into_iter()
            .find(|p| p.name() == lower)
            .ok_or_else(|| SchedError::UnknownPolicy(s.to_string()))
    }
}

impl TryFrom<String> for Policy {
    type Error = SchedError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Policy> for String {
    fn from(p: Policy) -> String {
        p.name().to_string()
    }
}

/// Which branch of machine selection produced a decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionRule {
    /// Co-located with a predecessor of the same instance.
    Affinity,
    /// Existing machine chosen by the policy's ranking.
    Existing,
    /// Fresh machine provisioned.
    Provision,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MachineChoice {
    Existing { machine: MachineId, rule: SelectionRule },
    Provision { node: NodeId, vm_type: VmType },
}

impl MachineChoice {
    pub fn rule(&self) -> SelectionRule {
        match self {
            MachineChoice::Existing { rule, .. } => *rule,
            MachineChoice::Provision { .. } => SelectionRule::Provision,
        }
    }
}

/// Nodes with a free VM slot, ascending id.
pub(crate) fn free_nodes(cluster: &Cluster, node_count: usize) -> impl Iterator<Item = NodeId> + '_ {
    (0..node_count).filter(move |&n| cluster.has_free_slot(n))
}

/// Catalog type for a fresh machine hosting `demand`.
pub(crate) fn provision_type(demand: &ResourceDemand, catalog: &[VmType]) -> Result<VmType> {
    nearest_vm_type(demand.memory_gb, demand.cores, catalog).cloned()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn policy_names_round_trip() {
        for p in Policy::ALL {
            assert_eq!(p.name().parse::<Policy>().unwrap(), p);
        }
        assert_eq!("MFDT".parse::<Policy>().unwrap(), Policy::Greedy(GreedyPolicy::MFDT));
        assert!(matches!("heft".parse::<Policy>(), Err(SchedError::UnknownPolicy(_))));
    }
}
