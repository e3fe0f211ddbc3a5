//! Discrete-event simulation of a scenario under one policy.
//!
//! Time is continuous and measured in milliseconds. Events at equal
//! timestamps are processed finish, transfer, start, arrival, then by
//! insertion order. After every timestamp the dispatcher places as many
//! ready services as capacity allows.
//!
//! Execution model:
//!
//! * A service is placed once all its predecessors are done. Placement
//!   reserves its demand on the chosen machine immediately.
//! * The service comes up after the resume latency (plus boot time if the
//!   machine is new) and starts once every predecessor's output has arrived.
//! * Output crossing machines travels over the min-hop route between their
//!   clouds; it takes the M/D/1 path delay at current link load plus
//!   serialization at the slower endpoint's bandwidth.
//! * On finish the service drops to its buffered residual and frees its
//!   compute.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap, VecDeque};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SchedError};
use crate::fws::{
    assign_labels, select_machine_fws, select_next_service, LabelTask, LabeledService, PredecessorSite, WeightParams,
};
use crate::greedy::{greedy_select_machine, greedy_select_service};
use crate::infra::{Cluster, MachineId, NodeId, Topology, VmType};
use crate::model::{
    ChainId, ChainInstance, InstanceId, RequestId, ServiceChain, ServiceDefs, ServiceId, ServiceStatus, UserRequest,
};
use crate::policy::{MachineChoice, Policy, SelectionRule};
use crate::scenario::Scenario;

const MS_PER_HOUR: f64 = 3_600_000.0;

/// Poisson arrivals with uniformly drawn chains and SLA bounds, or the
/// scenario's explicit requests when it lists any.
pub fn generate_workload(scenario: &Scenario) -> Vec<UserRequest> {
    let w = &scenario.workload;
    let mut chain_ids: Vec<ChainId> = scenario.chains.iter().map(|c| c.id).collect();
    chain_ids.sort_unstable();
    if !w.requests.is_empty() {
        return w
            .requests
            .iter()
            .enumerate()
            .map(|(i, r)| UserRequest {
                request_id: i as RequestId,
                chain_id: r.chain_id,
                arrival_time_ms: r.arrival_time_ms,
                delay_sla_ms: r.delay_sla_ms,
                cost_sla: r.cost_sla,
            })
            .collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(w.seed);
    rng.set_stream(1);
    let gap = Exp::new(w.arrival_rate_rps / 1000.0).expect("validated positive rate");
    let draw = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let mut t = 0.0;
    (0..w.request_count)
        .map(|i| {
            t += gap.sample(&mut rng);
            let chain_id = chain_ids[rng.random_range(0..chain_ids.len())];
            let delay_sla_ms = draw(&mut rng, w.sla_delay_range_ms);
            let cost_sla = draw(&mut rng, w.sla_cost_range);
            UserRequest {
                request_id: i as RequestId,
                chain_id,
                arrival_time_ms: t,
                delay_sla_ms,
                cost_sla,
            }
        })
        .collect()
}

/// A request is satisfied when it completed within both its delay and its
/// cost bound. `turnaround_ms` is `None` for dropped requests.
pub fn check_sla(request: &UserRequest, turnaround_ms: Option<f64>, attributed_cost: f64) -> bool {
    match turnaround_ms {
        Some(t) => t <= request.delay_sla_ms && attributed_cost <= request.cost_sla,
        None => false,
    }
}

/// One service execution on a machine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub instance_id: InstanceId,
    pub request_id: RequestId,
    pub chain_id: ChainId,
    pub service_id: ServiceId,
    pub machine_id: MachineId,
    pub node_id: NodeId,
    /// Capacity held from here until `finish_ms`.
    pub reserve_ms: f64,
    pub start_ms: f64,
    pub finish_ms: f64,
}

/// Output of one predecessor shipped to a successor on another machine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transfer {
    pub instance_id: InstanceId,
    pub from_service: ServiceId,
    pub to_service: ServiceId,
    pub from_machine: MachineId,
    pub to_machine: MachineId,
    pub data_kb: f64,
    pub sent_ms: f64,
    pub arrive_ms: f64,
}

/// Sum of `data_out_kb` over precedence edges whose endpoints ran on
/// different machines.
pub fn accumulate_traffic(placements: &[Placement], chains: &[Arc<ServiceChain>], defs: &ServiceDefs) -> f64 {
    let mut machine_of: BTreeMap<(InstanceId, ServiceId), MachineId> = BTreeMap::new();
    let mut chain_of: BTreeMap<InstanceId, ChainId> = BTreeMap::new();
    for p in placements {
        machine_of.insert((p.instance_id, p.service_id), p.machine_id);
        chain_of.insert(p.instance_id, p.chain_id);
    }
    let by_id: BTreeMap<ChainId, &ServiceChain> = chains.iter().map(|c| (c.id(), c.as_ref())).collect();
    let mut total = 0.0;
    for (&inst, chain_id) in &chain_of {
        for &(a, b) in by_id[chain_id].edges() {
            if let (Some(ma), Some(mb)) = (machine_of.get(&(inst, a)), machine_of.get(&(inst, b))) {
                if ma != mb {
                    total += defs.def(a).data_out_kb;
                }
            }
        }
    }
    total
}

/// Hourly price of every machine listed.
pub fn total_cost<'a>(machines: impl IntoIterator<Item = &'a VmType>) -> f64 {
    machines.into_iter().map(|t| t.hourly_cost).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestRecord {
    pub request_id: RequestId,
    pub chain_id: ChainId,
    pub arrival_ms: f64,
    pub turnaround_ms: f64,
    pub attributed_cost: f64,
    pub satisfied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub policy: String,
    pub requests: usize,
    pub completed: usize,
    pub dropped: usize,
    pub total_traffic_kb: f64,
    pub avg_turnaround_ms: f64,
    pub satisfied_pct: f64,
    pub total_cost_per_hour: f64,
    pub machines: usize,
    pub makespan_ms: f64,
    /// One record per completed request, in request order.
    pub records: Vec<RequestRecord>,
}

/// Counters checked during the run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunAudit {
    pub events: usize,
    /// Decisions where a predecessor's machine still had room.
    pub affinity_opportunities: usize,
    /// Decisions resolved by co-locating with a predecessor.
    pub affinity_placements: usize,
    /// Samples of `arrived - completed - dropped - in_flight`; all zero when
    /// requests are conserved.
    pub conservation_breaches: usize,
    pub capacity_breaches: usize,
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: MetricsReport,
    pub placements: Vec<Placement>,
    pub transfers: Vec<Transfer>,
    /// Machine id to catalog type, for every machine provisioned.
    pub machine_types: BTreeMap<MachineId, VmType>,
    pub requests: Vec<UserRequest>,
    pub chains: Vec<Arc<ServiceChain>>,
    pub defs: ServiceDefs,
    pub audit: RunAudit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EventKind {
    ServiceFinish { instance: InstanceId, service: ServiceId },
    TransferComplete { transfer: usize },
    ServiceStart { instance: InstanceId, service: ServiceId },
    Arrival { request: usize },
}

impl EventKind {
    fn rank(&self) -> u8 {
        match self {
            EventKind::ServiceFinish { .. } => 0,
            EventKind::TransferComplete { .. } => 1,
            EventKind::ServiceStart { .. } => 2,
            EventKind::Arrival { .. } => 3,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Event {
    time_ms: f64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time_ms
            .total_cmp(&other.time_ms)
            .then_with(|| self.kind.rank().cmp(&other.kind.rank()))
            .then_with(|| self.seq.cmp(&other.seq))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Default)]
struct EventQueue {
    heap: BinaryHeap<Reverse<Event>>,
    next_seq: u64,
    last_ms: f64,
}

impl EventQueue {
    fn push(&mut self, time_ms: f64, kind: EventKind) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Reverse(Event { time_ms, seq, kind }));
    }

    fn peek_time(&self) -> Option<f64> {
        self.heap.peek().map(|e| e.0.time_ms)
    }

    fn peek_kind(&self) -> Option<EventKind> {
        self.heap.peek().map(|e| e.0.kind)
    }

    fn pop(&mut self) -> Option<Event> {
        let ev = self.heap.pop()?.0;
        assert!(ev.time_ms >= self.last_ms, "event at {} dequeued after {}", ev.time_ms, self.last_ms);
        self.last_ms = ev.time_ms;
        Some(ev)
    }
}

/// Sliding-window packet rate per link.
#[derive(Debug)]
struct LinkLoad {
    window_ms: f64,
    sent: Vec<VecDeque<(f64, f64)>>,
    totals: Vec<f64>,
    background: Vec<f64>,
}

impl LinkLoad {
    fn new(topology: &Topology, window_ms: f64) -> Self {
        let n = topology.links().len();
        LinkLoad {
            window_ms,
            sent: vec![VecDeque::new(); n],
            totals: vec![0.0; n],
            background: topology.links().iter().map(|l| l.lambda_pps).collect(),
        }
    }

    fn expire(&mut self, now_ms: f64) {
        for (q, total) in self.sent.iter_mut().zip(self.totals.iter_mut()) {
            while let Some(&(t, p)) = q.front() {
                if t > now_ms - self.window_ms {
                    break;
                }
                q.pop_front();
                *total -= p;
            }
            if q.is_empty() {
                *total = 0.0;
            }
        }
    }

    fn record(&mut self, link: usize, now_ms: f64, packets: f64) {
        self.sent[link].push_back((now_ms, packets));
        self.totals[link] += packets;
    }

    /// Current arrival rate (packets/s) per link.
    fn lambda(&self) -> Vec<f64> {
        self.background
            .iter()
            .zip(&self.totals)
            .map(|(bg, sent)| bg + sent * 1000.0 / self.window_ms)
            .collect()
    }
}

#[derive(Debug)]
struct InstanceState {
    instance: ChainInstance,
    request: usize,
    arrival_ms: f64,
    labels: BTreeMap<ServiceId, u32>,
    /// service -> placement index
    placed: BTreeMap<ServiceId, usize>,
    outstanding: usize,
    dropped: bool,
    cost: f64,
}

struct Engine<'s> {
    scenario: &'s Scenario,
    policy: Policy,
    weights: WeightParams,
    topology: Topology,
    catalog: Vec<VmType>,
    chains: BTreeMap<ChainId, Arc<ServiceChain>>,
    defs: ServiceDefs,
    requests: Vec<UserRequest>,

    cluster: Cluster,
    machine_ready_ms: BTreeMap<MachineId, f64>,
    machine_types: BTreeMap<MachineId, VmType>,
    events: EventQueue,
    loads: LinkLoad,
    instances: BTreeMap<InstanceId, InstanceState>,
    queue: Vec<LabeledService>,

    placements: Vec<Placement>,
    transfers: Vec<Transfer>,
    traffic_kb: f64,
    arrived: usize,
    completed: usize,
    dropped: usize,
    records: Vec<RequestRecord>,
    audit: RunAudit,
}

/// Runs a scenario to quiescence under its configured policy.
pub fn run(scenario: &Scenario) -> Result<RunOutput> {
    run_with_policy(scenario, scenario.policy)
}

pub fn run_with_policy(scenario: &Scenario, policy: Policy) -> Result<RunOutput> {
    scenario.validate()?;
    let chains = scenario.build_chains()?;
    let defs = scenario.service_defs(&chains);
    let topology = scenario.build_topology()?;
    let requests = generate_workload(scenario);
    let mut engine = Engine {
        scenario,
        policy,
        weights: scenario.fws.weights(),
        cluster: Cluster::new(&topology),
        loads: LinkLoad::new(&topology, scenario.topology.load_window_ms),
        topology,
        catalog: scenario.catalog.clone(),
        chains: chains.iter().map(|c| (c.id(), c.clone())).collect(),
        defs: defs.clone(),
        requests: requests.clone(),
        machine_ready_ms: BTreeMap::new(),
        machine_types: BTreeMap::new(),
        events: EventQueue::default(),
        instances: BTreeMap::new(),
        queue: Vec::new(),
        placements: Vec::new(),
        transfers: Vec::new(),
        traffic_kb: 0.0,
        arrived: 0,
        completed: 0,
        dropped: 0,
        records: Vec::new(),
        audit: RunAudit::default(),
    };
    engine.provision_initial()?;
    engine.run()?;
    let report = engine.report();
    Ok(RunOutput {
        report,
        placements: engine.placements,
        transfers: engine.transfers,
        machine_types: engine.machine_types,
        requests,
        chains,
        defs,
        audit: engine.audit,
    })
}

impl Engine<'_> {
    fn provision_initial(&mut self) -> Result<()> {
        for m in &self.scenario.topology.machines {
            let vm_type = self
                .catalog
                .iter()
                .find(|t| t.name == m.vm_type)
                .cloned()
                .ok_or_else(|| SchedError::validation("topology.machines", format!("unknown type {}", m.vm_type)))?;
            let id = self.cluster.provision_machine(m.node, &vm_type)?;
            self.machine_ready_ms.insert(id, 0.0);
            self.machine_types.insert(id, vm_type);
        }
        Ok(())
    }

    fn run(&mut self) -> Result<()> {
        for (i, r) in self.requests.iter().enumerate() {
            self.events.push(r.arrival_time_ms, EventKind::Arrival { request: i });
        }
        while let Some(ev) = self.events.pop() {
            let now = ev.time_ms;
            self.audit.events += 1;
            match ev.kind {
                EventKind::Arrival { request } => {
                    // Requests arriving together are labeled together.
                    let mut batch = vec![request];
                    while self.events.peek_time() == Some(now) {
                        match self.events.peek_kind() {
                            Some(EventKind::Arrival { request }) => {
                                self.events.pop();
                                self.audit.events += 1;
                                batch.push(request);
                            }
                            _ => break,
                        }
                    }
                    self.on_arrivals(now, &batch);
                }
                EventKind::ServiceStart { instance, service } => {
                    let st = self.instances.get_mut(&instance).expect("live instance");
                    st.instance.advance(service, ServiceStatus::Running)?;
                }
                EventKind::TransferComplete { transfer } => {
                    debug_assert!(self.transfers[transfer].arrive_ms <= now + 1e-9);
                }
                EventKind::ServiceFinish { instance, service } => self.on_finish(now, instance, service)?,
            }
            if self.events.peek_time() != Some(now) {
                self.dispatch(now)?;
                self.check_conservation();
            }
        }
        // Anything still queued can never be placed.
        let stranded: Vec<InstanceId> = self.queue.iter().map(|e| e.instance_id).collect();
        for inst in stranded {
            self.drop_instance(inst);
        }
        self.check_conservation();
        Ok(())
    }

    fn on_arrivals(&mut self, now: f64, batch: &[usize]) {
        let mut fresh = Vec::with_capacity(batch.len());
        for &r in batch {
            let req = &self.requests[r];
            let chain = self.chains[&req.chain_id].clone();
            let inst_id = req.request_id;
            let outstanding = chain.len();
            self.instances.insert(
                inst_id,
                InstanceState {
                    instance: ChainInstance::new(inst_id, req.request_id, chain),
                    request: r,
                    arrival_ms: now,
                    labels: BTreeMap::new(),
                    placed: BTreeMap::new(),
                    outstanding,
                    dropped: false,
                    cost: 0.0,
                },
            );
            self.arrived += 1;
            fresh.push(inst_id);
        }

        self.relabel();
        for id in fresh {
            self.enqueue_ready(now, id);
        }
    }

    /// Labels every not-yet-placed service of every live instance jointly.
    fn relabel(&mut self) {
        let labels = {
            let tasks: Vec<LabelTask<'_>> = self
                .instances
                .iter()
                .filter(|(_, st)| !st.dropped)
                .map(|(&id, st)| LabelTask {
                    instance_id: id,
                    arrival_ms: st.arrival_ms,
                    chain: st.instance.chain(),
                    services: st
                        .instance
                        .chain()
                        .nodes()
                        .iter()
                        .copied()
                        .filter(|s| !st.placed.contains_key(s))
                        .collect(),
                })
                .filter(|t| !t.services.is_empty())
                .collect();
            assign_labels(&tasks, &self.defs)
        };
        for (&(inst, svc), &label) in &labels {
            self.instances.get_mut(&inst).expect("live instance").labels.insert(svc, label);
        }
        for entry in &mut self.queue {
            entry.label = labels[&entry.key()];
        }
    }

    fn enqueue_ready(&mut self, now: f64, inst: InstanceId) {
        let st = self.instances.get_mut(&inst).expect("live instance");
        for svc in st.instance.ready_services() {
            st.instance.advance(svc, ServiceStatus::Ready).expect("ready service");
            let dependents = self
                .weights
                .dependents_of(st.instance.chain(), svc)
                .expect("service in chain");
            self.queue.push(LabeledService {
                instance_id: inst,
                service_id: svc,
                label: st.labels[&svc],
                weight: 0.0,
                enqueue_time_ms: now,
                exec_time_ms: self.defs.def(svc).exec_time_ms,
                dependents,
            });
        }
    }

    fn on_finish(&mut self, now: f64, inst: InstanceId, svc: ServiceId) -> Result<()> {
        let st = self.instances.get_mut(&inst).expect("live instance");
        st.instance.advance(svc, ServiceStatus::Done)?;
        st.outstanding -= 1;
        let machine_id = self.placements[st.placed[&svc]].machine_id;
        let machine = self.cluster.machine_mut(machine_id).expect("machine exists");
        machine.finish(inst, svc)?;
        machine.buffer_idle(inst, svc)?;

        if st.dropped {
            if st.outstanding_running() == 0 {
                self.retire(inst);
            }
            return Ok(());
        }
        if st.instance.is_complete() {
            let turnaround = now - st.arrival_ms;
            let req = &self.requests[st.request];
            let satisfied = check_sla(req, Some(turnaround), st.cost);
            self.records.push(RequestRecord {
                request_id: req.request_id,
                chain_id: req.chain_id,
                arrival_ms: st.arrival_ms,
                turnaround_ms: turnaround,
                attributed_cost: st.cost,
                satisfied,
            });
            self.completed += 1;
            self.retire(inst);
        } else {
            self.enqueue_ready(now, inst);
        }
        Ok(())
    }

    /// Forgets a finished or dropped instance and its buffered residuals.
    fn retire(&mut self, inst: InstanceId) {
        if let Some(st) = self.instances.remove(&inst) {
            let mut machines: Vec<MachineId> = st.placed.values().map(|&i| self.placements[i].machine_id).collect();
            machines.sort_unstable();
            machines.dedup();
            for m in machines {
                if let Some(machine) = self.cluster.machine_mut(m) {
                    machine.evict_instance(inst);
                }
            }
        }
    }

    fn drop_instance(&mut self, inst: InstanceId) {
        self.queue.retain(|e| e.instance_id != inst);
        let Some(st) = self.instances.get_mut(&inst) else {
            return;
        };
        if st.dropped {
            return;
        }
        st.dropped = true;
        self.dropped += 1;
        if st.outstanding_running() == 0 {
            self.retire(inst);
        }
    }

    fn check_conservation(&mut self) {
        let in_flight = self.instances.values().filter(|s| !s.dropped).count();
        if self.arrived != self.completed + self.dropped + in_flight {
            self.audit.conservation_breaches += 1;
        }
    }

    fn dispatch(&mut self, now: f64) -> Result<()> {
        if self.queue.is_empty() {
            return Ok(());
        }
        self.loads.expire(now);
        let mut blocked: Vec<LabeledService> = Vec::new();
        while !self.queue.is_empty() {
            let idx = match self.policy {
                Policy::Fws => select_next_service(&mut self.queue, now, &self.weights)?,
                Policy::Greedy(g) => greedy_select_service(&self.queue, g.service_bias)?,
            };
            let entry = self.queue.swap_remove(idx);
            match self.choose_machine(&entry) {
                Ok(choice) => self.place(now, entry, choice)?,
                Err(SchedError::NoCapacity) => blocked.push(entry),
                Err(e) => return Err(e),
            }
        }
        self.queue = blocked;

        // Requests already past their delay bound while waiting are dropped.
        let overdue: Vec<InstanceId> = self
            .queue
            .iter()
            .filter(|e| {
                let st = &self.instances[&e.instance_id];
                now - st.arrival_ms > self.requests[st.request].delay_sla_ms
            })
            .map(|e| e.instance_id)
            .collect();
        for inst in overdue {
            self.drop_instance(inst);
        }
        Ok(())
    }

    fn predecessor_sites(&self, entry: &LabeledService) -> Vec<PredecessorSite> {
        let st = &self.instances[&entry.instance_id];
        st.instance
            .chain()
            .predecessors(entry.service_id)
            .iter()
            .map(|p| {
                let pl = &self.placements[st.placed[p]];
                PredecessorSite {
                    machine: pl.machine_id,
                    node: pl.node_id,
                    data_out_kb: self.defs.def(*p).data_out_kb,
                }
            })
            .collect()
    }

    fn choose_machine(&mut self, entry: &LabeledService) -> Result<MachineChoice> {
        let demand = self.defs.def(entry.service_id).demand;
        match self.policy {
            Policy::Fws => {
                let preds = self.predecessor_sites(entry);
                let opportunity = preds
                    .iter()
                    .any(|p| self.cluster.machine(p.machine).is_some_and(|m| m.fits(&demand)));
                let lambda = self.loads.lambda();
                let max_rho = self.scenario.topology.max_link_utilization;
                let topology = &self.topology;
                let delay = |a: NodeId, b: NodeId| topology.path_delay_at(a, b, &lambda, max_rho).unwrap_or(f64::MAX);
                let choice = select_machine_fws(&demand, &preds, &self.cluster, topology, &self.catalog, &delay)?;
                if opportunity {
                    self.audit.affinity_opportunities += 1;
                }
                if choice.rule() == SelectionRule::Affinity {
                    self.audit.affinity_placements += 1;
                }
                Ok(choice)
            }
            Policy::Greedy(g) => {
                greedy_select_machine(&demand, &self.cluster, g.machine_bias, &self.catalog, &self.topology)
            }
        }
    }

    fn place(&mut self, now: f64, entry: LabeledService, choice: MachineChoice) -> Result<()> {
        let machine_id = match choice {
            MachineChoice::Existing { machine, .. } => machine,
            MachineChoice::Provision { node, vm_type } => {
                let id = self.cluster.provision_machine(node, &vm_type)?;
                self.machine_ready_ms
                    .insert(id, now + self.scenario.topology.provision_latency_ms);
                self.machine_types.insert(id, vm_type);
                id
            }
        };
        let inst = entry.instance_id;
        let svc = entry.service_id;
        let def = self.defs.def(svc).clone();
        let preds = self.predecessor_sites(&entry);

        let machine = self.cluster.machine_mut(machine_id).expect("chosen machine exists");
        let node_id = machine.node_id;
        let bandwidth = machine.vm_type.max_bandwidth_mbps;
        machine.host(inst, svc, def.demand)?;
        // The image is resumed out of the cloud's buffer once the machine is up.
        let resume = self.scenario.fws.resume_latency_ms;
        let ready_ms = (now + resume).max(self.machine_ready_ms[&machine_id] + resume);
        if self.cluster.machine(machine_id).is_some_and(|m| m.used_cores() > m.vm_type.cores) {
            self.audit.capacity_breaches += 1;
        }

        let lambda = self.loads.lambda();
        let max_rho = self.scenario.topology.max_link_utilization;
        let packet_kb = self.scenario.topology.packet_kb;
        let mut data_ready = now;
        let pred_ids: Vec<ServiceId> = self.instances[&inst].instance.chain().predecessors(svc).to_vec();
        for (p, site) in pred_ids.iter().zip(&preds) {
            if site.machine == machine_id {
                continue;
            }
            let sender_bw = self.machine_types[&site.machine].max_bandwidth_mbps;
            // kB / (MB/s) = ms
            let serialization_ms = site.data_out_kb / sender_bw.min(bandwidth);
            let path_ms = 1000.0 * self.topology.path_delay_at(site.node, node_id, &lambda, max_rho)?;
            let arrive_ms = now + path_ms + serialization_ms;
            let packets = (site.data_out_kb / packet_kb).ceil();
            for &link in self.topology.route(site.node, node_id)? {
                self.loads.record(link, now, packets);
            }
            self.traffic_kb += site.data_out_kb;
            let t = self.transfers.len();
            self.transfers.push(Transfer {
                instance_id: inst,
                from_service: *p,
                to_service: svc,
                from_machine: site.machine,
                to_machine: machine_id,
                data_kb: site.data_out_kb,
                sent_ms: now,
                arrive_ms,
            });
            self.events.push(arrive_ms, EventKind::TransferComplete { transfer: t });
            data_ready = data_ready.max(arrive_ms);
        }

        let start_ms = ready_ms.max(data_ready);
        let finish_ms = start_ms + def.exec_time_ms;
        let st = self.instances.get_mut(&inst).expect("live instance");
        let hourly = self.machine_types[&machine_id].hourly_cost;
        st.cost += hourly * (finish_ms - now) / MS_PER_HOUR;
        st.placed.insert(svc, self.placements.len());
        self.placements.push(Placement {
            instance_id: inst,
            request_id: st.instance.request_id,
            chain_id: st.instance.chain_id(),
            service_id: svc,
            machine_id,
            node_id,
            reserve_ms: now,
            start_ms,
            finish_ms,
        });
        self.events.push(start_ms, EventKind::ServiceStart { instance: inst, service: svc });
        self.events.push(finish_ms, EventKind::ServiceFinish { instance: inst, service: svc });
        Ok(())
    }

    fn report(&self) -> MetricsReport {
        let requests = self.requests.len();
        let satisfied = self.records.iter().filter(|r| r.satisfied).count();
        let avg_turnaround_ms = if self.records.is_empty() {
            0.0
        } else {
            self.records.iter().map(|r| r.turnaround_ms).sum::<f64>() / self.records.len() as f64
        };
        let satisfied_pct = if requests == 0 {
            100.0
        } else {
            100.0 * satisfied as f64 / requests as f64
        };
        let mut records = self.records.clone();
        records.sort_by_key(|r| r.request_id);
        MetricsReport {
            policy: self.policy.name().to_string(),
            requests,
            completed: self.completed,
            dropped: self.dropped,
            total_traffic_kb: self.traffic_kb,
            avg_turnaround_ms,
            satisfied_pct,
            total_cost_per_hour: total_cost(self.machine_types.values()),
            machines: self.machine_types.len(),
            makespan_ms: self.placements.iter().map(|p| p.finish_ms).fold(0.0, f64::max),
            records,
        }
    }
}

impl InstanceState {
    /// Placed services that have not finished yet.
    fn outstanding_running(&self) -> usize {
        self.placed
            .keys()
            .filter(|&&s| self.instance.status(s) != Some(ServiceStatus::Done))
            .count()
    }
}
