//! Profile-driven execution planning for the enhancement pipeline.
//!
//! A pipeline is a rooted tree of components: one ingest node feeding
//! downstream stages, each described by a [`ComponentProfile`] that maps
//! batch sizes to their resource cost (and optionally to wall-clock
//! latency). Given a global budget of integer resource units, [`dp_plan`]
//! splits the budget and picks a batch size per node so that the slowest
//! node — and therefore the whole pipeline — runs as fast as possible.
//! [`brute_force_plan`] solves the same problem by exhaustive enumeration
//! on small instances and serves as the planner's oracle in tests, and
//! [`verify_balance`] audits any plan for single-unit resource transfers
//! that would raise end-to-end throughput.
//!
//! Throughput is measured in batches-per-cost-unit: a node running batch
//! size `b` at cost `c` sustains `b / c`. End-to-end throughput is the
//! minimum over all nodes, so an optimal plan is a balanced one.

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Everything the planner can object to, from malformed graphs to budgets
/// too small for the cheapest viable configuration.
#[derive(Debug)]
pub enum PlanError {
    Json(serde_json::Error),
    BadProfile { node_id: String, why: &'static str },
    DuplicateNode(String),
    DanglingEdge { from: String, to: String },
    DuplicateEdge { from: String, to: String },
    SelfLoop(String),
    Cycle(String),
    NotATree(String),
    NoSource,
    MultipleSources(String, String),
    Infeasible { node_id: String, why: &'static str },
    OracleGuard(&'static str),
}

impl fmt::Display for PlanError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlanError::Json(e) => write!(f, "bad plan config: {e}"),
            PlanError::BadProfile { node_id, why } => {
                write!(f, "bad profile for node {node_id}: {why}")
            }
            PlanError::DuplicateNode(id) => write!(f, "node {id} declared twice"),
            PlanError::DanglingEdge { from, to } => {
                write!(f, "edge ({from}, {to}) references an undeclared node")
            }
            PlanError::DuplicateEdge { from, to } => {
                write!(f, "edge ({from}, {to}) declared twice")
            }
            PlanError::SelfLoop(id) => write!(f, "node {id} feeds itself"),
            PlanError::Cycle(id) => write!(f, "dataflow is cyclic (node {id} is on a cycle)"),
            PlanError::NotATree(id) => {
                write!(f, "node {id} has more than one upstream feeder; only chains and trees are supported")
            }
            PlanError::NoSource => write!(f, "dataflow has no source node"),
            PlanError::MultipleSources(a, b) => {
                write!(f, "dataflow has multiple sources (at least {a} and {b})")
            }
            PlanError::Infeasible { node_id, why } => {
                write!(f, "no feasible plan: node {node_id}: {why}")
            }
            PlanError::OracleGuard(why) => {
                write!(f, "instance too large for exhaustive planning: {why}")
            }
        }
    }
}

impl std::error::Error for PlanError {}

impl From<serde_json::Error> for PlanError {
    fn from(e: serde_json::Error) -> Self {
        PlanError::Json(e)
    }
}

/// Measured behaviour of one pipeline component: how many resource units a
/// batch of each supported size costs, and optionally how long it takes.
///
/// The cost table is the planner's whole world view of a node; batch sizes
/// absent from it are not runnable. The latency table only matters when a
/// plan must meet a wall-clock target (see [`dp_plan`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentProfile {
    #[serde(rename = "id")]
    pub node_id: String,
    pub device: String,
    /// batch size → resource units consumed to process one batch.
    pub cost: BTreeMap<u32, u32>,
    /// batch size → wall time (ms) to process one batch, if profiled.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency: Option<BTreeMap<u32, f64>>,
}

impl ComponentProfile {
    fn validate(&self) -> Result<(), PlanError> {
        let bad = |why| PlanError::BadProfile { node_id: self.node_id.clone(), why };
        if self.node_id.is_empty() {
            return Err(bad("empty node id"));
        }
        if self.cost.is_empty() {
            return Err(bad("empty cost table"));
        }
        if self.cost.keys().any(|&b| b == 0) {
            return Err(bad("batch size 0 in cost table"));
        }
        if self.cost.values().any(|&c| c == 0) {
            return Err(bad("zero cost in cost table"));
        }
        if let Some(lat) = &self.latency {
            if lat.keys().any(|&b| b == 0) {
                return Err(bad("batch size 0 in latency table"));
            }
            if lat.values().any(|&ms| !ms.is_finite() || ms < 0.0) {
                return Err(bad("non-finite or negative latency"));
            }
        }
        Ok(())
    }

    fn min_cost(&self) -> u32 {
        *self.cost.values().min().expect("validated cost table is nonempty")
    }

    /// Best achievable throughput with `r` resource units, if any batch fits.
    fn best_at(&self, r: u32) -> Option<f64> {
        self.cost
            .iter()
            .filter(|&(_, &c)| c <= r)
            .map(|(&b, &c)| f64::from(b) / f64::from(c))
            .fold(None, |acc: Option<f64>, t| Some(acc.map_or(t, |a| a.max(t))))
    }

    /// Smallest batch that fits in `r` units and sustains at least `floor`.
    fn cheapest_batch(&self, r: u32, floor: f64) -> Option<u32> {
        self.cost
            .iter()
            .find(|&(&b, &c)| c <= r && f64::from(b) / f64::from(c) >= floor)
            .map(|(&b, _)| b)
    }
}

/// A validated component graph: acyclic, single-source, at most one feeder
/// per node (chains and trees; join nodes are rejected).
///
/// Node indices are positions in [`Dataflow::nodes`]; the derived topology
/// (children, topological order, source) is computed once at construction.
#[derive(Debug, Clone)]
pub struct Dataflow {
    pub nodes: Vec<ComponentProfile>,
    /// Budget carried by the config file, if any; a convenience default for
    /// callers that plan straight from a parsed file.
    pub default_budget: Option<u32>,
    edges: Vec<(usize, usize)>,
    children: Vec<Vec<usize>>,
    topo: Vec<usize>,
    source: usize,
}

impl Dataflow {
    /// Builds and validates a dataflow from profiles and `(from, to)` edges
    /// named by node id.
    pub fn new(
        nodes: Vec<ComponentProfile>,
        edges: &[(String, String)],
    ) -> Result<Self, PlanError> {
        if nodes.is_empty() {
            return Err(PlanError::NoSource);
        }
        let mut index: BTreeMap<&str, usize> = BTreeMap::new();
        for (i, p) in nodes.iter().enumerate() {
            p.validate()?;
            if index.insert(p.node_id.as_str(), i).is_some() {
                return Err(PlanError::DuplicateNode(p.node_id.clone()));
            }
        }

        let mut resolved = Vec::with_capacity(edges.len());
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
        let mut parents: Vec<usize> = vec![0; nodes.len()];
        for (from, to) in edges {
            let dangling = || PlanError::DanglingEdge { from: from.clone(), to: to.clone() };
            let u = *index.get(from.as_str()).ok_or_else(dangling)?;
            let v = *index.get(to.as_str()).ok_or_else(dangling)?;
            if u == v {
                return Err(PlanError::SelfLoop(from.clone()));
            }
            if children[u].contains(&v) {
                return Err(PlanError::DuplicateEdge { from: from.clone(), to: to.clone() });
            }
            children[u].push(v);
            parents[v] += 1;
            resolved.push((u, v));
        }

        // Kahn's toposort; anything left unprocessed sits on a cycle.
        let mut indeg = parents.clone();
        let mut queue: Vec<usize> = (0..nodes.len()).filter(|&v| indeg[v] == 0).collect();
        let mut topo = Vec::with_capacity(nodes.len());
        while let Some(u) = queue.pop() {
            topo.push(u);
            for &v in &children[u] {
                indeg[v] -= 1;
                if indeg[v] == 0 {
                    queue.push(v);
                }
            }
        }
        if topo.len() < nodes.len() {
            let stuck = (0..nodes.len())
                .find(|&v| indeg[v] > 0)
                .expect("some node must remain when the sort stalls");
            return Err(PlanError::Cycle(nodes[stuck].node_id.clone()));
        }
        let parent = parents_of(&resolved, nodes.len());
        topo.sort_by_key(|&u| (depth(&parent, u), u));

        if let Some(v) = (0..nodes.len()).find(|&v| parents[v] > 1) {
            return Err(PlanError::NotATree(nodes[v].node_id.clone()));
        }
        let mut roots = (0..nodes.len()).filter(|&v| parents[v] == 0);
        let source = roots.next().ok_or(PlanError::NoSource)?;
        if let Some(other) = roots.next() {
            return Err(PlanError::MultipleSources(
                nodes[source].node_id.clone(),
                nodes[other].node_id.clone(),
            ));
        }

        Ok(Dataflow { nodes, default_budget: None, edges: resolved, children, topo, source })
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|p| p.node_id == id)
    }

    pub fn children(&self, u: usize) -> &[usize] {
        &self.children[u]
    }

    /// Topological order, stable across runs: by depth from the source,
    /// then by declaration order.
    pub fn topo_order(&self) -> &[usize] {
        &self.topo
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn source(&self) -> usize {
        self.source
    }

    /// Nodes with no downstream consumers, in topological order.
    pub fn sinks(&self) -> Vec<usize> {
        self.topo.iter().copied().filter(|&u| self.children[u].is_empty()).collect()
    }
}

fn parents_of(edges: &[(usize, usize)], n: usize) -> Vec<Option<usize>> {
    let mut parent = vec![None; n];
    for &(u, v) in edges {
        parent[v] = Some(u);
    }
    parent
}

fn depth(parent: &[Option<usize>], mut u: usize) -> usize {
    let mut d = 0;
    while let Some(p) = parent[u] {
        d += 1;
        u = p;
    }
    d
}

#[derive(Deserialize)]
struct DagConfig {
    nodes: Vec<ComponentProfile>,
    #[serde(default)]
    edges: Vec<(String, String)>,
    #[serde(default)]
    budget: Option<u32>,
}

/// Parses a dataflow config from JSON:
/// `{"nodes": [{"id", "device", "cost": {"batch": cost}, "latency": {"batch": ms}}],
///   "edges": [["from", "to"]], "budget": n}`.
///
/// Rejects cycles, dangling or duplicate edges, join nodes, and malformed
/// profiles with a descriptive error. The optional `budget` rides along on
/// [`Dataflow::default_budget`].
pub fn parse_dag(text: &str) -> Result<Dataflow, PlanError> {
    let cfg: DagConfig = serde_json::from_str(text)?;
    let mut dag = Dataflow::new(cfg.nodes, &cfg.edges)?;
    dag.default_budget = cfg.budget;
    Ok(dag)
}

/// One node's slice of an execution plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeAssignment {
    #[serde(rename = "id")]
    pub node_id: String,
    pub device: String,
    /// Resource units granted to the node.
    pub resource: u32,
    /// Batch size the node runs at.
    pub batch: u32,
    /// batch / cost(batch), the node's sustained rate.
    pub throughput: f64,
}

/// A complete resource/batch assignment; `e2e_throughput` is the minimum
/// node throughput, which is what the pipeline sustains end to end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionPlan {
    pub assignments: Vec<NodeAssignment>,
    pub e2e_throughput: f64,
}

impl ExecutionPlan {
    pub fn assignment(&self, node_id: &str) -> Option<&NodeAssignment> {
        self.assignments.iter().find(|a| a.node_id == node_id)
    }

    pub fn total_resource(&self) -> u32 {
        self.assignments.iter().map(|a| a.resource).sum()
    }
}

#[derive(Debug, Clone, Copy)]
struct Pin {
    resource: u32,
    batch: u32,
    throughput: f64,
}

/// When a wall-clock target is given, every sink is pinned to the least
/// resource (then least batch) whose profiled latency meets the target,
/// before any budget is handed to the rest of the pipeline.
fn pin_sinks(dag: &Dataflow, target: Option<f64>) -> Result<Vec<Option<Pin>>, PlanError> {
    let mut pins = vec![None; dag.nodes.len()];
    let Some(target) = target else { return Ok(pins) };
    for s in dag.sinks() {
        let prof = &dag.nodes[s];
        let infeasible = |why| PlanError::Infeasible { node_id: prof.node_id.clone(), why };
        let lat = prof.latency.as_ref().ok_or_else(|| {
            infeasible("a latency target was given but the node has no latency table")
        })?;
        let valid = prof
            .cost
            .iter()
            .filter(|&(b, _)| lat.get(b).is_some_and(|&ms| ms <= target))
            .map(|(&b, &c)| (c, b));
        let (resource, batch) = valid
            .min() // least cost, then least batch
            .ok_or_else(|| infeasible("no batch meets the latency target"))?;
        let throughput = f64::from(batch) / f64::from(resource);
        pins[s] = Some(Pin { resource, batch, throughput });
    }
    Ok(pins)
}

/// Deducts pinned resources from the budget and confirms the remaining
/// nodes' cheapest batches all fit, naming the first node (in topological
/// order) at which the budget runs out.
fn remaining_budget(
    dag: &Dataflow,
    pins: &[Option<Pin>],
    budget: u32,
) -> Result<u32, PlanError> {
    let mut rem = budget;
    for &u in dag.topo_order() {
        if let Some(pin) = &pins[u] {
            rem = rem.checked_sub(pin.resource).ok_or_else(|| PlanError::Infeasible {
                node_id: dag.nodes[u].node_id.clone(),
                why: "pinning the latency target exhausts the budget",
            })?;
        }
    }
    let mut acc: u64 = 0;
    for &u in dag.topo_order() {
        if pins[u].is_none() {
            acc += u64::from(dag.nodes[u].min_cost());
            if acc > u64::from(rem) {
                return Err(PlanError::Infeasible {
                    node_id: dag.nodes[u].node_id.clone(),
                    why: "cheapest batch does not fit the remaining budget",
                });
            }
        }
    }
    Ok(rem)
}

fn opt_min(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    match (a, b) {
        (Some(x), Some(y)) => Some(x.min(y)),
        _ => None,
    }
}

fn beats(candidate: Option<f64>, incumbent: Option<f64>) -> bool {
    match (candidate, incumbent) {
        (Some(c), Some(i)) => c > i,
        (Some(_), None) => true,
        _ => false,
    }
}

/// best over splits `s + (x - s) = x` of `min(a[s], b[x - s])`.
fn fold_split(a: &[Option<f64>], b: &[Option<f64>]) -> Vec<Option<f64>> {
    let n = a.len();
    (0..n)
        .map(|x| {
            let mut best = None;
            for s in 0..=x {
                let v = opt_min(a[s], b[x - s]);
                if beats(v, best) {
                    best = v;
                }
            }
            best
        })
        .collect()
}

/// Plans resource shares and batch sizes over the dataflow to maximize
/// end-to-end throughput within `budget` integer units.
///
/// The planner tabulates, bottom-up over the tree, the best subtree
/// throughput achievable with each sub-budget: a node keeps `r'` of its
/// allotment for itself (running the fastest batch that costs at most
/// `r'`) and hands the rest to its children, who split it the same way;
/// the subtree rate is the minimum of the node's own rate and its
/// children's. With `latency_target` set, sinks are first pinned to the
/// least resource and batch meeting the target (see [`pin_sinks`]) and the
/// recursion runs over the remaining nodes and budget.
///
/// Ties among optimal plans resolve toward the smallest total allocated
/// resource, then the smallest batch per node: each node receives the
/// least resource — and then runs the least batch — that still sustains
/// the optimal rate. Unused budget stays unallocated.
pub fn dp_plan(
    dag: &Dataflow,
    budget: u32,
    latency_target: Option<f64>,
) -> Result<ExecutionPlan, PlanError> {
    let pins = pin_sinks(dag, latency_target)?;
    let rem = remaining_budget(dag, &pins, budget)?;
    let r_max = rem as usize;

    let mut tbl: Vec<Vec<Option<f64>>> = vec![Vec::new(); dag.nodes.len()];
    for &u in dag.topo_order().iter().rev() {
        let mut comb: Vec<Option<f64>> = vec![Some(f64::INFINITY); r_max + 1];
        for &c in dag.children(u) {
            let ctab: Vec<Option<f64>> = match &pins[c] {
                Some(pin) => vec![Some(pin.throughput); r_max + 1],
                None => tbl[c].clone(),
            };
            comb = fold_split(&comb, &ctab);
        }
        tbl[u] = match &pins[u] {
            Some(pin) => comb.iter().map(|&x| opt_min(Some(pin.throughput), x)).collect(),
            None => {
                let own: Vec<Option<f64>> =
                    (0..=r_max).map(|r| dag.nodes[u].best_at(r as u32)).collect();
                (0..=r_max)
                    .map(|x| {
                        let mut best = None;
                        for rp in 0..=x {
                            let v = opt_min(own[rp], comb[x - rp]);
                            if beats(v, best) {
                                best = v;
                            }
                        }
                        best
                    })
                    .collect()
            }
        };
    }

    let tstar = tbl[dag.source()][r_max].ok_or_else(|| PlanError::Infeasible {
        node_id: dag.nodes[dag.source()].node_id.clone(),
        why: "cheapest batch does not fit the remaining budget",
    })?;

    let mut assignments = Vec::with_capacity(dag.nodes.len());
    for &u in dag.topo_order() {
        let prof = &dag.nodes[u];
        let a = match &pins[u] {
            Some(pin) => NodeAssignment {
                node_id: prof.node_id.clone(),
                device: prof.device.clone(),
                resource: pin.resource,
                batch: pin.batch,
                throughput: pin.throughput,
            },
            None => {
                let resource = (0..=rem)
                    .find(|&r| prof.best_at(r).is_some_and(|t| t >= tstar))
                    .expect("the throughput table certifies this rate is affordable");
                let batch = prof
                    .cheapest_batch(resource, tstar)
                    .expect("a batch sustaining the rate exists at the chosen resource");
                let throughput = f64::from(batch) / f64::from(prof.cost[&batch]);
                NodeAssignment {
                    node_id: prof.node_id.clone(),
                    device: prof.device.clone(),
                    resource,
                    batch,
                    throughput,
                }
            }
        };
        assignments.push(a);
    }
    let e2e = assignments.iter().map(|a| a.throughput).fold(f64::INFINITY, f64::min);
    debug_assert_eq!(e2e, tstar, "reconstruction must land on the tabulated optimum");
    Ok(ExecutionPlan { assignments, e2e_throughput: e2e })
}

/// Exhaustive oracle for [`dp_plan`]: enumerates every resource partition
/// and batch choice on small instances (≤ 4 nodes, budget ≤ 8, ≤ 4 batch
/// entries per node) and applies the same tie-breaks. Larger instances are
/// rejected rather than ground through.
pub fn brute_force_plan(
    dag: &Dataflow,
    budget: u32,
    latency_target: Option<f64>,
) -> Result<ExecutionPlan, PlanError> {
    if dag.nodes.len() > 4 {
        return Err(PlanError::OracleGuard("more than 4 nodes"));
    }
    if budget > 8 {
        return Err(PlanError::OracleGuard("budget above 8 units"));
    }
    if dag.nodes.iter().any(|p| p.cost.len() > 4) {
        return Err(PlanError::OracleGuard("more than 4 batch entries on a node"));
    }

    let pins = pin_sinks(dag, latency_target)?;
    let rem = remaining_budget(dag, &pins, budget)?;
    let unpinned: Vec<usize> =
        dag.topo_order().iter().copied().filter(|&u| pins[u].is_none()).collect();
    let pin_floor = pins
        .iter()
        .flatten()
        .map(|p| p.throughput)
        .fold(f64::INFINITY, f64::min);

    struct Best {
        e2e: f64,
        total: u32,
        resources: Vec<u32>,
        batches: Vec<u32>,
    }
    let mut best: Option<Best> = None;

    // Depth-first over (resource, batch) choices per unpinned node.
    fn descend(
        dag: &Dataflow,
        unpinned: &[usize],
        k: usize,
        left: u32,
        floor_so_far: f64,
        resources: &mut Vec<u32>,
        batches: &mut Vec<u32>,
        best: &mut Option<Best>,
    ) {
        if k == unpinned.len() {
            let e2e = floor_so_far;
            let total: u32 = resources.iter().sum();
            let replace = match best {
                None => true,
                Some(b) => {
                    e2e > b.e2e
                        || (e2e == b.e2e
                            && (total < b.total
                                || (total == b.total && batches.as_slice() < b.batches.as_slice())))
                }
            };
            if replace {
                *best = Some(Best {
                    e2e,
                    total,
                    resources: resources.clone(),
                    batches: batches.clone(),
                });
            }
            return;
        }
        let prof = &dag.nodes[unpinned[k]];
        for r in 0..=left {
            for (&b, &c) in prof.cost.iter().filter(|&(_, &c)| c <= r) {
                resources.push(r);
                batches.push(b);
                let rate = f64::from(b) / f64::from(c);
                descend(
                    dag,
                    unpinned,
                    k + 1,
                    left - r,
                    floor_so_far.min(rate),
                    resources,
                    batches,
                    best,
                );
                resources.pop();
                batches.pop();
            }
        }
    }
    descend(dag, &unpinned, 0, rem, pin_floor, &mut Vec::new(), &mut Vec::new(), &mut best);

    let best = best.expect("the budget scan certified a feasible assignment exists");
    let slot: BTreeMap<usize, usize> =
        unpinned.iter().enumerate().map(|(i, &u)| (u, i)).collect();
    let mut assignments = Vec::with_capacity(dag.nodes.len());
    for &u in dag.topo_order() {
        let prof = &dag.nodes[u];
        let (resource, batch, throughput) = match &pins[u] {
            Some(pin) => (pin.resource, pin.batch, pin.throughput),
            None => {
                let i = slot[&u];
                let b = best.batches[i];
                (best.resources[i], b, f64::from(b) / f64::from(prof.cost[&b]))
            }
        };
        assignments.push(NodeAssignment {
            node_id: prof.node_id.clone(),
            device: prof.device.clone(),
            resource,
            batch,
            throughput,
        });
    }
    Ok(ExecutionPlan { assignments, e2e_throughput: best.e2e })
}

/// An even split of the budget with no balancing: every node gets
/// `budget / n` units (the first `budget % n` in topological order get one
/// extra) and runs the fastest batch it can afford. The baseline the
/// planner is measured against.
pub fn naive_plan(dag: &Dataflow, budget: u32) -> Result<ExecutionPlan, PlanError> {
    let n = dag.nodes.len() as u32;
    let (share, extra) = (budget / n, budget % n);
    let mut assignments = Vec::with_capacity(dag.nodes.len());
    for (i, &u) in dag.topo_order().iter().enumerate() {
        let prof = &dag.nodes[u];
        let resource = share + u32::from((i as u32) < extra);
        let rate = prof.best_at(resource).ok_or_else(|| PlanError::Infeasible {
            node_id: prof.node_id.clone(),
            why: "cheapest batch does not fit an equal share of the budget",
        })?;
        let batch = prof
            .cheapest_batch(resource, rate)
            .expect("the best affordable rate is affordable");
        assignments.push(NodeAssignment {
            node_id: prof.node_id.clone(),
            device: prof.device.clone(),
            resource,
            batch,
            throughput: rate,
        });
    }
    let e2e = assignments.iter().map(|a| a.throughput).fold(f64::INFINITY, f64::min);
    Ok(ExecutionPlan { assignments, e2e_throughput: e2e })
}

/// One row of a [`BalanceReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeBalance {
    #[serde(rename = "id")]
    pub node_id: String,
    pub resource: u32,
    pub throughput: f64,
    /// Node throughput minus end-to-end throughput; 0 at the bottleneck.
    pub slack: f64,
}

/// Balance audit of a plan against its dataflow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    pub nodes: Vec<NodeBalance>,
    /// Node with the lowest throughput (first in topological order on ties).
    pub bottleneck: String,
    pub e2e_throughput: f64,
    /// True when moving one resource unit between some pair of nodes would
    /// strictly raise end-to-end throughput — i.e. the plan is not balanced.
    pub improvable: bool,
    /// A witnessing `(donor, receiver)` pair when `improvable`.
    pub improving_shift: Option<(String, String)>,
}

/// Reports per-node throughput and slack, names the bottleneck, and checks
/// whether any single-unit resource transfer between two nodes would beat
/// the plan's end-to-end throughput (re-picking batches after the shift).
/// Plans produced by [`dp_plan`] never flag; hand-built or skewed plans do.
///
/// Nodes missing from the plan are treated as allocated zero units.
pub fn verify_balance(dag: &Dataflow, plan: &ExecutionPlan) -> BalanceReport {
    let n = dag.nodes.len();
    let mut resource = vec![0u32; n];
    let mut rate = vec![0.0f64; n];
    for a in &plan.assignments {
        if let Some(u) = dag.node_index(&a.node_id) {
            resource[u] = a.resource;
            rate[u] = match dag.nodes[u].cost.get(&a.batch) {
                Some(&c) if c <= a.resource => f64::from(a.batch) / f64::from(c),
                _ => 0.0, // unrunnable assignment: no usable throughput
            };
        }
    }
    let e2e = dag
        .topo_order()
        .iter()
        .map(|&u| rate[u])
        .fold(f64::INFINITY, f64::min);

    let nodes: Vec<NodeBalance> = dag
        .topo_order()
        .iter()
        .map(|&u| NodeBalance {
            node_id: dag.nodes[u].node_id.clone(),
            resource: resource[u],
            throughput: rate[u],
            slack: rate[u] - e2e,
        })
        .collect();
    let bottleneck = nodes
        .iter()
        .min_by(|a, b| a.throughput.partial_cmp(&b.throughput).expect("rates are finite"))
        .expect("dataflows are nonempty")
        .node_id
        .clone();

    // Evaluate every single-unit donor→receiver shift, letting each node
    // re-pick its best affordable batch at the shifted allocation.
    let shifted_e2e = |donor: usize, receiver: usize| {
        dag.topo_order()
            .iter()
            .map(|&u| {
                let r = match u {
                    _ if u == donor => resource[u] - 1,
                    _ if u == receiver => resource[u] + 1,
                    _ => resource[u],
                };
                dag.nodes[u].best_at(r).unwrap_or(0.0)
            })
            .fold(f64::INFINITY, f64::min)
    };
    let mut improving_shift = None;
    'search: for &i in dag.topo_order() {
        if resource[i] == 0 {
            continue;
        }
        for &j in dag.topo_order() {
            if i != j && shifted_e2e(i, j) > e2e {
                improving_shift =
                    Some((dag.nodes[i].node_id.clone(), dag.nodes[j].node_id.clone()));
                break 'search;
            }
        }
    }

    BalanceReport {
        nodes,
        bottleneck,
        e2e_throughput: e2e,
        improvable: improving_shift.is_some(),
        improving_shift,
    }
}

/// Generates a random chain-or-tree planning instance: up to `max_nodes`
/// nodes, 1–`max_entries` cost entries each (batches 1..=8, costs 1..=4),
/// and a budget in `n ..= max_budget`. Deterministic per seed; used to
/// stress the planner against its oracle.
pub fn random_tree_instance(
    seed: u64,
    max_nodes: usize,
    max_budget: u32,
    max_entries: usize,
) -> (Dataflow, u32) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..=max_nodes.max(1));
    let mut nodes = Vec::with_capacity(n);
    for i in 0..n {
        let entries = rng.gen_range(1..=max_entries.max(1));
        let mut batches: Vec<u32> = (1..=8).collect();
        batches.shuffle(&mut rng);
        let mut cost = BTreeMap::new();
        for &b in batches.iter().take(entries) {
            if let Entry::Vacant(slot) = cost.entry(b) {
                slot.insert(rng.gen_range(1..=4u32));
            }
        }
        nodes.push(ComponentProfile {
            node_id: format!("n{i}"),
            device: if i % 2 == 0 { "cpu".into() } else { "gpu".into() },
            cost,
            latency: None,
        });
    }
    let mut edges = Vec::with_capacity(n.saturating_sub(1));
    for i in 1..n {
        let p = rng.gen_range(0..i);
        edges.push((format!("n{p}"), format!("n{i}")));
    }
    let dag = Dataflow::new(nodes, &edges).expect("generated trees are structurally valid");
    let budget = rng.gen_range(n as u32..=max_budget.max(n as u32));
    (dag, budget)
}
