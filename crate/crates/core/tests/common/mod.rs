#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sfc_sched::fws::LabelTask;
use sfc_sched::infra::Topology;
use sfc_sched::model::{build_chain, MicroServiceDef, ResourceDemand, ServiceChain, ServiceDefs};
use sfc_sched::scenario::Scenario;
use sfc_sched::sim::{accumulate_traffic, RunOutput};

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

/// 1/μ + ρ/(2μ(1−ρ)), in seconds.
pub fn md1_alternate(lambda: f64, mu: f64) -> f64 {
    let rho = lambda / mu;
    1.0 / mu + rho / (2.0 * mu * (1.0 - rho))
}

/// Labels by rescanning every unlabeled service each step: a service is a
/// candidate once all its in-batch successors carry labels; the smallest
/// (exec, arrival, instance, service) candidate takes the next label.
pub fn brute_force_labels(tasks: &[LabelTask<'_>], defs: &ServiceDefs) -> BTreeMap<(u64, u32), u32> {
    let mut all = Vec::new();
    for t in tasks {
        for &s in &t.services {
            all.push((t, s));
        }
    }
    let mut labels: BTreeMap<(u64, u32), u32> = BTreeMap::new();
    for next in 1..=all.len() as u32 {
        let mut best: Option<(f64, f64, u64, u32)> = None;
        for &(t, s) in &all {
            if labels.contains_key(&(t.instance_id, s)) {
                continue;
            }
            let ready = t
                .chain
                .successors(s)
                .iter()
                .filter(|x| t.services.contains(x))
                .all(|x| labels.contains_key(&(t.instance_id, *x)));
            if !ready {
                continue;
            }
            let key = (defs.def(s).exec_time_ms, t.arrival_ms, t.instance_id, s);
            let better = match best {
                None => true,
                Some(b) => {
                    key.0 < b.0
                        || (key.0 == b.0
                            && (key.1 < b.1 || (key.1 == b.1 && (key.2, key.3) < (b.2, b.3))))
                }
            };
            if better {
                best = Some(key);
            }
        }
        let (_, _, inst, svc) = best.expect("an acyclic batch always has a candidate");
        labels.insert((inst, svc), next);
    }
    labels
}

/// A random chain on ids `base+1..=base+n` with forward edges only.
pub fn random_chain(rng: &mut ChaCha8Rng, id: u32, base: u32, max_nodes: u32) -> ServiceChain {
    let n = rng.random_range(1..=max_nodes);
    let density: f64 = rng.random_range(0.1..0.6);
    let nodes: Vec<u32> = (base + 1..=base + n).collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(density) {
                edges.push((nodes[i as usize], nodes[j as usize]));
            }
        }
    }
    build_chain(id, &nodes, &edges).expect("forward edges form a DAG")
}

/// Definitions with execution times drawn from a coarse grid so ties happen.
pub fn coarse_defs(rng: &mut ChaCha8Rng, ids: impl IntoIterator<Item = u32>) -> ServiceDefs {
    let mut defs = ServiceDefs::new();
    for id in ids {
        defs.insert(MicroServiceDef {
            id,
            exec_time_ms: f64::from(rng.random_range(1..=4u32)) * 10.0,
            data_out_kb: 10.0,
            capacity_rps: 50.0,
            demand: ResourceDemand::new(1.0, 1),
        });
    }
    defs
}

pub fn check_labels(tasks: &[LabelTask<'_>], labels: &BTreeMap<(u64, u32), u32>) -> Result<(), String> {
    let n: usize = tasks.iter().map(|t| t.services.len()).sum();
    let got: BTreeSet<u32> = labels.values().copied().collect();
    let want: BTreeSet<u32> = (1..=n as u32).collect();
    if labels.len() != n || got != want {
        return Err(format!("labels are not a permutation of 1..={n}"));
    }
    for t in tasks {
        for &(a, b) in t.chain.edges() {
            if t.services.contains(&a) && t.services.contains(&b) {
                let (la, lb) = (labels[&(t.instance_id, a)], labels[&(t.instance_id, b)]);
                if la <= lb {
                    return Err(format!("edge ({a},{b}) of instance {}: {la} <= {lb}", t.instance_id));
                }
            }
        }
    }
    Ok(())
}

/// Zero-load transfer time in ms between two nodes: hop delays at the
/// background rate plus serialization at `bandwidth` MB/s. Scheduled
/// traffic can only make a real transfer slower.
pub fn min_transfer_ms(topology: &Topology, src: usize, dst: usize, data_kb: f64, bandwidth: f64) -> f64 {
    let mut path = 0.0;
    for &l in topology.route(src, dst).unwrap() {
        let link = &topology.links()[l];
        path += md1_alternate(link.lambda_pps, link.mu_pps);
    }
    1000.0 * path + data_kb / bandwidth
}

/// Recomputes every invariant from the run's placements alone. Returns a
/// description of each violation.
pub fn schedule_violations(scenario: &Scenario, out: &RunOutput) -> Vec<String> {
    let mut bad = Vec::new();
    let topology = scenario.build_topology().unwrap();
    let eps = 1e-6;

    // capacity: replay reserve/finish intervals per machine
    let mut per_machine: BTreeMap<usize, Vec<(f64, f64, ResourceDemand)>> = BTreeMap::new();
    for p in &out.placements {
        let def = out.defs.def(p.service_id);
        if (p.finish_ms - p.start_ms - def.exec_time_ms).abs() > eps {
            bad.push(format!("placement {p:?} does not run for its exec time"));
        }
        if p.start_ms + eps < p.reserve_ms {
            bad.push(format!("placement {p:?} starts before it is reserved"));
        }
        per_machine
            .entry(p.machine_id)
            .or_default()
            .push((p.reserve_ms, p.finish_ms, def.demand));
    }
    for (m, spans) in &per_machine {
        let vm = &out.machine_types[m];
        for &(t, _, _) in spans {
            let (mut mem, mut cores) = (0.0, 0u32);
            for &(a, b, d) in spans {
                if a <= t && t < b {
                    mem += d.memory_gb;
                    cores += d.cores;
                }
            }
            if mem > vm.memory_gb + eps || cores > vm.cores {
                bad.push(format!("machine {m} over capacity at {t}: {mem} GB, {cores} cores"));
            }
        }
    }

    // precedence timing
    let mut at: BTreeMap<(u64, u32), &sfc_sched::sim::Placement> = BTreeMap::new();
    for p in &out.placements {
        if at.insert((p.instance_id, p.service_id), p).is_some() {
            bad.push(format!("service {} of instance {} placed twice", p.service_id, p.instance_id));
        }
    }
    let chains: BTreeMap<u32, &ServiceChain> = out.chains.iter().map(|c| (c.id(), c.as_ref())).collect();
    for p in &out.placements {
        let chain = chains[&p.chain_id];
        for &pred in chain.predecessors(p.service_id) {
            let Some(q) = at.get(&(p.instance_id, pred)) else {
                bad.push(format!("{} placed before predecessor {pred}", p.service_id));
                continue;
            };
            let mut earliest = q.finish_ms;
            if q.machine_id != p.machine_id {
                let bw = out.machine_types[&q.machine_id]
                    .max_bandwidth_mbps
                    .min(out.machine_types[&p.machine_id].max_bandwidth_mbps);
                earliest += min_transfer_ms(&topology, q.node_id, p.node_id, out.defs.def(pred).data_out_kb, bw);
            }
            if p.start_ms + eps < earliest {
                bad.push(format!(
                    "instance {} edge ({pred},{}) starts at {} before {earliest}",
                    p.instance_id, p.service_id, p.start_ms
                ));
            }
        }
    }

    // conservation
    let r = &out.report;
    if out.audit.conservation_breaches != 0 {
        bad.push(format!("{} conservation breaches during the run", out.audit.conservation_breaches));
    }
    if r.completed + r.dropped != r.requests || r.requests != out.requests.len() {
        bad.push(format!("{} completed + {} dropped != {} requests", r.completed, r.dropped, r.requests));
    }
    if r.records.len() != r.completed {
        bad.push("record count differs from completions".into());
    }
    for rec in &r.records {
        let chain = chains[&rec.chain_id];
        if !chain.nodes().iter().all(|s| at.contains_key(&(rec.request_id, *s))) {
            bad.push(format!("request {} completed with unplaced services", rec.request_id));
        }
    }

    // traffic: second pass over the placements
    let recount = accumulate_traffic(&out.placements, &out.chains, &out.defs);
    if (recount - r.total_traffic_kb).abs() > 1e-9 * recount.max(1.0) {
        bad.push(format!("traffic recount {recount} != online {}", r.total_traffic_kb));
    }
    bad
}

/// Machine available to the exhaustive search.
#[derive(Debug, Clone, Copy)]
pub struct SearchMachine {
    pub node: usize,
    pub bandwidth: f64,
}

/// One service of one instance in the exhaustive search.
#[derive(Debug, Clone)]
pub struct SearchJob {
    pub exec_ms: f64,
    pub data_out_kb: f64,
    pub preds: Vec<usize>,
}

/// Smallest makespan over every schedule in which each machine runs one
/// service at a time, a service is committed to a machine once the machine
/// is free and all predecessors are done, and starts after the resume latency
/// and after its predecessors' data (sent at commit time) has arrived.
///
/// Branch and bound over commit sequences in nondecreasing (commit time,
/// job) order, which reaches each schedule exactly once.
pub fn optimal_makespan(
    jobs: &[SearchJob],
    machines: &[SearchMachine],
    topology: &Topology,
    resume_ms: f64,
    upper_bound: f64,
) -> f64 {
    let n = jobs.len();
    let mut succs = vec![Vec::new(); n];
    for (j, job) in jobs.iter().enumerate() {
        for &p in &job.preds {
            succs[p].push(j);
        }
    }
    // longest remaining path including resume latencies
    let mut tail = vec![0.0; n];
    for j in (0..n).rev() {
        let below = succs[j].iter().map(|&s| tail[s]).fold(0.0, f64::max);
        tail[j] = resume_ms + jobs[j].exec_ms + below;
    }
    let delay: Vec<Vec<Vec<f64>>> = (0..n)
        .map(|j| {
            machines
                .iter()
                .map(|a| {
                    machines
                        .iter()
                        .map(|b| min_transfer_ms(topology, a.node, b.node, jobs[j].data_out_kb, a.bandwidth.min(b.bandwidth)))
                        .collect()
                })
                .collect()
        })
        .collect();

    struct State {
        finish: Vec<f64>,
        machine_of: Vec<usize>,
        done: Vec<bool>,
        free_at: Vec<f64>,
        best: f64,
    }

    #[allow(clippy::too_many_arguments)]
    fn search(
        st: &mut State,
        jobs: &[SearchJob],
        tail: &[f64],
        delay: &[Vec<Vec<f64>>],
        resume_ms: f64,
        last: (f64, usize),
        placed: usize,
        makespan: f64,
    ) {
        let n = jobs.len();
        if placed == n {
            st.best = st.best.min(makespan);
            return;
        }
        // bound: every unplaced job still needs its commit time plus its tail
        let mut bound = makespan;
        for j in 0..n {
            if st.done[j] {
                continue;
            }
            let ready = jobs[j]
                .preds
                .iter()
                .map(|&p| if st.done[p] { st.finish[p] } else { f64::INFINITY })
                .fold(0.0, f64::max);
            if ready.is_finite() {
                bound = bound.max(ready + tail[j]);
            }
        }
        let min_free = st.free_at.iter().copied().fold(f64::INFINITY, f64::min);
        let remaining: f64 = (0..n).filter(|&j| !st.done[j]).map(|j| jobs[j].exec_ms + resume_ms).sum();
        bound = bound.max(min_free + remaining / st.free_at.len() as f64);
        if bound >= st.best - 1e-9 {
            return;
        }
        for j in 0..n {
            if st.done[j] || !jobs[j].preds.iter().all(|&p| st.done[p]) {
                continue;
            }
            let pred_done = jobs[j].preds.iter().map(|&p| st.finish[p]).fold(0.0, f64::max);
            for m in 0..st.free_at.len() {
                let commit = st.free_at[m].max(pred_done);
                if (commit, j) < last {
                    continue;
                }
                let data = jobs[j]
                    .preds
                    .iter()
                    .filter(|&&p| st.machine_of[p] != m)
                    .map(|&p| delay[p][st.machine_of[p]][m])
                    .fold(0.0, f64::max);
                let finish = commit + resume_ms.max(data) + jobs[j].exec_ms;
                let saved = st.free_at[m];
                st.done[j] = true;
                st.finish[j] = finish;
                st.machine_of[j] = m;
                st.free_at[m] = finish;
                search(st, jobs, tail, delay, resume_ms, (commit, j), placed + 1, makespan.max(finish));
                st.free_at[m] = saved;
                st.done[j] = false;
            }
        }
    }

    let mut st = State {
        finish: vec![0.0; n],
        machine_of: vec![usize::MAX; n],
        done: vec![false; n],
        free_at: vec![0.0; machines.len()],
        best: upper_bound + 1e-6,
    };
    search(&mut st, jobs, &tail, &delay, resume_ms, (f64::NEG_INFINITY, 0), 0, 0.0);
    st.best
}

/// Jobs and machines of a scenario whose requests all arrive at time zero on
/// pre-provisioned machines.
pub fn search_instance(scenario: &Scenario) -> (Vec<SearchJob>, Vec<SearchMachine>) {
    let chains = scenario.build_chains().unwrap();
    let defs = scenario.service_defs(&chains);
    let mut jobs = Vec::new();
    for req in &scenario.workload.requests {
        let chain = chains.iter().find(|c| c.id() == req.chain_id).unwrap();
        let base = jobs.len();
        let mut nodes = chain.nodes().to_vec();
        nodes.sort_unstable();
        let index: BTreeMap<u32, usize> = nodes.iter().enumerate().map(|(i, &s)| (s, base + i)).collect();
        for &s in &nodes {
            let def = defs.def(s);
            jobs.push(SearchJob {
                exec_ms: def.exec_time_ms,
                data_out_kb: def.data_out_kb,
                preds: chain.predecessors(s).iter().map(|p| index[p]).collect(),
            });
        }
    }
    let machines = scenario
        .topology
        .machines
        .iter()
        .map(|m| SearchMachine {
            node: m.node,
            bandwidth: scenario.catalog.iter().find(|t| t.name == m.vm_type).unwrap().max_bandwidth_mbps,
        })
        .collect();
    (jobs, machines)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
