//! Discrete-event simulator for a multi-stream enhancement pipeline.
//!
//! Five components are modeled: `decode`, `predict`, `pack`, `enhance`,
//! `analytics`. Which of them run, and how frames travel between them, is
//! picked by [`Policy`]:
//!
//! * `only_infer`      — decode → analytics (nothing is enhanced)
//! * `per_frame`       — decode → enhance(full frame) → analytics
//! * `selective_anchor`— decode → enhance for evenly spaced anchor frames,
//!   straight to analytics for the rest
//! * `region_based`    — decode → predict → pack → enhance(packed bins) →
//!   analytics; per chunk, predicted cells are packed into fixed bins and
//!   only the bins are enhanced
//!
//! Fixed components take their service times from per-batch latency tables;
//! `enhance` uses a pixel-count model so region packing actually changes its
//! load. The engine is a classic event-queue simulation on a 0.1 ms clock:
//! each component is a single server that launches a batch when enough items
//! are queued or when the head item has waited `(batch-1)` frame periods,
//! whichever comes first. Ties in the event queue resolve by component,
//! stream, frame, then insertion order, so runs are bit-for-bit repeatable.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};
use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::importance::{synth_importance, ImportanceError, MbGeometry};
use crate::pack::{self, BinSpec, MbIndex, PackError, PackPolicy};
use crate::plan::{dp_plan, ComponentProfile, Dataflow, ExecutionPlan, PlanError};
use crate::SCHEMA_VERSION;

/// Simulation clock resolution: one tick is 0.1 ms.
const TICKS_PER_MS: f64 = 10.0;

const DECODE: usize = 0;
const PREDICT: usize = 1;
const PACK: usize = 2;
const ENHANCE: usize = 3;
const ANALYTICS: usize = 4;
const COMP_NAMES: [&str; 5] = ["decode", "predict", "pack", "enhance", "analytics"];

/// Batch sizes tried when synthesizing the enhance cost table.
const ENHANCE_BATCHES: [u32; 3] = [1, 2, 4];

fn ticks(ms: f64) -> u64 {
    (ms * TICKS_PER_MS).round() as u64
}

fn ms_of(ticks: u64) -> f64 {
    ticks as f64 / TICKS_PER_MS
}

#[derive(Debug)]
pub enum SimError {
    /// The scenario itself is inconsistent.
    Scenario(String),
    /// The plan does not cover a component the policy needs.
    PlanPolicyMismatch { policy: &'static str, missing: String },
    /// A fixed component has no latency entry for its planned batch.
    MissingLatency { component: String, batch: u32 },
    Pack(PackError),
    Plan(PlanError),
    Importance(ImportanceError),
    Parse(String),
    Io(std::io::Error),
}

impl fmt::Display for SimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SimError::Scenario(why) => write!(f, "bad scenario: {why}"),
            SimError::PlanPolicyMismatch { policy, missing } => {
                write!(f, "plan has no assignment for '{missing}', required by policy {policy}")
            }
            SimError::MissingLatency { component, batch } => {
                write!(f, "component '{component}' has no latency entry for batch {batch}")
            }
            SimError::Pack(e) => write!(f, "packing failed during simulation: {e}"),
            SimError::Plan(e) => write!(f, "planning failed: {e}"),
            SimError::Importance(e) => write!(f, "importance synthesis failed: {e}"),
            SimError::Parse(why) => write!(f, "cannot parse scenario: {why}"),
            SimError::Io(e) => write!(f, "cannot read scenario: {e}"),
        }
    }
}

impl std::error::Error for SimError {}

impl From<PackError> for SimError {
    fn from(e: PackError) -> Self {
        SimError::Pack(e)
    }
}

impl From<PlanError> for SimError {
    fn from(e: PlanError) -> Self {
        SimError::Plan(e)
    }
}

impl From<ImportanceError> for SimError {
    fn from(e: ImportanceError) -> Self {
        SimError::Importance(e)
    }
}

impl From<std::io::Error> for SimError {
    fn from(e: std::io::Error) -> Self {
        SimError::Io(e)
    }
}

/// How frames move through the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    OnlyInfer,
    PerFrame,
    SelectiveAnchor,
    RegionBased,
}

impl Policy {
    pub fn name(self) -> &'static str {
        match self {
            Policy::OnlyInfer => "only_infer",
            Policy::PerFrame => "per_frame",
            Policy::SelectiveAnchor => "selective_anchor",
            Policy::RegionBased => "region_based",
        }
    }

    /// Component chain the policy runs, in flow order.
    pub fn components(self) -> &'static [usize] {
        match self {
            Policy::OnlyInfer => &[DECODE, ANALYTICS],
            Policy::PerFrame | Policy::SelectiveAnchor => &[DECODE, ENHANCE, ANALYTICS],
            Policy::RegionBased => &[DECODE, PREDICT, PACK, ENHANCE, ANALYTICS],
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Wall time of one enhance launch as a function of pixels processed:
/// a fixed floor plus a linear term above a small saturation point, so
/// batching amortizes the floor and fewer pixels mean less work.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyModel {
    pub floor_ms: f64,
    pub slope_ms_per_mpx: f64,
    pub saturation_px: u64,
}

impl LatencyModel {
    pub fn latency_ms(&self, px: u64) -> f64 {
        let extra = px.saturating_sub(self.saturation_px) as f64 / 1.0e6;
        self.floor_ms + self.slope_ms_per_mpx * extra
    }

    fn validate(&self) -> Result<(), SimError> {
        let ok = self.floor_ms.is_finite()
            && self.floor_ms >= 0.0
            && self.slope_ms_per_mpx.is_finite()
            && self.slope_ms_per_mpx >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(SimError::Scenario("latency model needs finite, non-negative terms".into()))
        }
    }
}

/// Serialize batch-keyed latency tables with string keys so the same
/// scenario file works as JSON and as TOML.
mod ms_table {
    use std::collections::BTreeMap;

    use serde::de::Error;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(map: &BTreeMap<u32, f64>, s: S) -> Result<S::Ok, S::Error> {
        map.iter()
            .map(|(k, v)| (k.to_string(), *v))
            .collect::<BTreeMap<String, f64>>()
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<u32, f64>, D::Error> {
        let raw: BTreeMap<String, f64> = Deserialize::deserialize(d)?;
        raw.into_iter()
            .map(|(k, v)| {
                k.trim()
                    .parse::<u32>()
                    .map(|b| (b, v))
                    .map_err(|_| D::Error::custom(format!("batch key '{k}' is not an integer")))
            })
            .collect()
    }
}

/// A fixed-cost component: service time depends only on batch size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentSpec {
    pub device: String,
    /// batch size → wall ms for one launch at that batch.
    #[serde(with = "ms_table")]
    pub latency: BTreeMap<u32, f64>,
}

fn default_fps() -> f64 {
    30.0
}

fn default_chunk() -> u32 {
    30
}

/// One synthetic video stream: frame geometry plus content knobs for the
/// importance synthesizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamSpec {
    pub stream_id: u32,
    #[serde(default = "default_fps")]
    pub fps: f64,
    /// Frames per prediction/packing chunk.
    #[serde(default = "default_chunk")]
    pub chunk_len: u32,
    pub frame_w: u32,
    pub frame_h: u32,
    /// Per-chunk content fraction is drawn uniformly from this range.
    pub sparsity: (f64, f64),
    pub hotspots: usize,
}

impl StreamSpec {
    fn frame_px(&self) -> u64 {
        self.frame_w as u64 * self.frame_h as u64
    }
}

/// Everything one simulation run needs, loadable from JSON or TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub seed: u64,
    pub duration_s: f64,
    pub policy: Policy,
    pub streams: Vec<StreamSpec>,
    /// Fixed components (`decode`, `predict`, `pack`, `analytics`).
    pub components: BTreeMap<String, ComponentSpec>,
    /// Pixel-count model for `enhance`.
    pub enhance: LatencyModel,
    pub bins: BinSpec,
    pub mb_size: u32,
    pub expand: u32,
    pub partition_limit: u32,
    /// Share of each chunk enhanced under `selective_anchor`.
    pub anchor_fraction: f64,
    /// Resource budget for planning; omitted means "enough for best batches".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<u32>,
    /// Pre-made plan; omitted means "plan for the scenario's policy".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<ExecutionPlan>,
}

impl Scenario {
    /// Six 360p streams at 30 fps, a calibrated enhance model, and bins
    /// sized so region packing comfortably outruns whole-frame enhancement.
    pub fn desk_default() -> Scenario {
        let streams = (0..6)
            .map(|i| StreamSpec {
                stream_id: i,
                fps: 30.0,
                chunk_len: 30,
                frame_w: 640,
                frame_h: 360,
                sparsity: (0.2, 0.3),
                hotspots: 3,
            })
            .collect();
        let mut components = BTreeMap::new();
        let spec = |device: &str, table: &[(u32, f64)]| ComponentSpec {
            device: device.to_string(),
            latency: table.iter().copied().collect(),
        };
        components.insert("decode".into(), spec("cpu", &[(1, 4.0), (4, 12.0)]));
        components.insert("predict".into(), spec("gpu", &[(1, 5.0), (4, 16.0)]));
        components.insert("pack".into(), spec("cpu", &[(1, 3.0)]));
        components.insert("analytics".into(), spec("gpu", &[(1, 4.5), (2, 8.0), (4, 14.0)]));
        Scenario {
            seed: crate::DEFAULT_SEED,
            duration_s: 60.0,
            policy: Policy::RegionBased,
            streams,
            components,
            enhance: LatencyModel { floor_ms: 20.0, slope_ms_per_mpx: 70.0, saturation_px: 20_000 },
            bins: BinSpec { count: 6, width: 512, height: 512 },
            mb_size: 16,
            expand: 3,
            partition_limit: 352,
            anchor_fraction: 0.4,
            budget: None,
            plan: None,
        }
    }

    /// Read a scenario from disk; `.toml` parses as TOML, anything else as JSON.
    pub fn load(path: &Path) -> Result<Scenario, SimError> {
        let text = std::fs::read_to_string(path)?;
        let sc: Scenario = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| SimError::Parse(e.to_string()))?
        } else {
            serde_json::from_str(&text).map_err(|e| SimError::Parse(e.to_string()))?
        };
        sc.validate()?;
        Ok(sc)
    }

    /// Render as TOML, the write-side counterpart of [`Scenario::load`].
    pub fn to_toml(&self) -> Result<String, SimError> {
        toml::to_string_pretty(self).map_err(|e| SimError::Parse(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |why: String| Err(SimError::Scenario(why));
        if self.streams.is_empty() {
            return bad("no streams".into());
        }
        let mut ids = BTreeSet::new();
        for s in &self.streams {
            if !ids.insert(s.stream_id) {
                return bad(format!("duplicate stream id {}", s.stream_id));
            }
            if !(s.fps.is_finite() && s.fps > 0.0) {
                return bad(format!("stream {}: fps must be positive", s.stream_id));
            }
            if s.chunk_len == 0 {
                return bad(format!("stream {}: chunk_len must be at least 1", s.stream_id));
            }
            if s.frame_w == 0 || s.frame_h == 0 {
                return bad(format!("stream {}: empty frame", s.stream_id));
            }
            let (lo, hi) = s.sparsity;
            if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi && hi <= 1.0) {
                return bad(format!("stream {}: sparsity range must satisfy 0 <= lo <= hi <= 1", s.stream_id));
            }
            if s.hotspots == 0 {
                return bad(format!("stream {}: needs at least one hotspot", s.stream_id));
            }
        }
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return bad("duration must be positive".into());
        }
        if self.mb_size == 0 {
            return bad("mb_size must be at least 1".into());
        }
        if self.bins.count == 0 || self.bins.width < self.mb_size || self.bins.height < self.mb_size {
            return bad("bins must exist and fit at least one MB".into());
        }
        if self.partition_limit < self.mb_size {
            return bad("partition_limit must be at least mb_size".into());
        }
        if !(self.anchor_fraction.is_finite() && (0.0..=1.0).contains(&self.anchor_fraction)) {
            return bad("anchor_fraction must lie in [0, 1]".into());
        }
        self.enhance.validate()?;
        for &comp in self.policy.components() {
            if comp == ENHANCE {
                continue;
            }
            let name = COMP_NAMES[comp];
            let Some(spec) = self.components.get(name) else {
                return bad(format!("policy {} needs component '{name}'", self.policy));
            };
            if spec.latency.is_empty() {
                return bad(format!("component '{name}' has an empty latency table"));
            }
            if spec.latency.keys().any(|&b| b == 0) {
                return bad(format!("component '{name}' lists batch 0"));
            }
            if spec.latency.values().any(|&ms| !ms.is_finite() || ms <= 0.0) {
                return bad(format!("component '{name}' lists a non-positive latency"));
            }
            if !spec.latency.contains_key(&1) {
                return bad(format!("component '{name}' needs a batch-1 latency entry"));
            }
        }
        Ok(())
    }
}

/// Whether to run the planner or pin every component to batch 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlanMode {
    BatchOne,
    Planned,
}

fn enhance_px_per_item(sc: &Scenario, policy: Policy) -> u64 {
    match policy {
        Policy::RegionBased => sc.bins.width as u64 * sc.bins.height as u64,
        _ => sc.streams.iter().map(|s| s.frame_px()).max().unwrap_or(0),
    }
}

fn cost_of_ms(ms: f64) -> u32 {
    (ms.ceil() as u32).max(1)
}

/// Chain dataflow for `policy`: fixed components keep their measured tables,
/// enhance gets a table synthesized from the pixel model at the item size the
/// policy actually enhances.
pub fn dag_for(sc: &Scenario, policy: Policy) -> Result<Dataflow, SimError> {
    let mut nodes = Vec::new();
    for &comp in policy.components() {
        let name = COMP_NAMES[comp];
        let profile = if comp == ENHANCE {
            let px = enhance_px_per_item(sc, policy);
            let mut cost = BTreeMap::new();
            let mut latency = BTreeMap::new();
            for b in ENHANCE_BATCHES {
                let ms = sc.enhance.latency_ms(b as u64 * px);
                cost.insert(b, cost_of_ms(ms));
                latency.insert(b, ms);
            }
            ComponentProfile {
                node_id: name.to_string(),
                device: "gpu".to_string(),
                cost,
                latency: Some(latency),
            }
        } else {
            let spec = sc
                .components
                .get(name)
                .ok_or_else(|| SimError::Scenario(format!("policy {policy} needs component '{name}'")))?;
            ComponentProfile {
                node_id: name.to_string(),
                device: spec.device.clone(),
                cost: spec.latency.iter().map(|(&b, &ms)| (b, cost_of_ms(ms))).collect(),
                latency: Some(spec.latency.clone()),
            }
        };
        nodes.push(profile);
    }
    let edges: Vec<(String, String)> = nodes
        .windows(2)
        .map(|w| (w[0].node_id.clone(), w[1].node_id.clone()))
        .collect();
    Dataflow::new(nodes, &edges).map_err(Into::into)
}

/// Budget that lets every node afford its most expensive batch.
fn generous_budget(dag: &Dataflow) -> u32 {
    dag.nodes.iter().map(|n| n.cost.values().copied().max().unwrap_or(1)).sum()
}

fn batch_one_plan(dag: &Dataflow) -> Result<ExecutionPlan, SimError> {
    let mut assignments = Vec::new();
    let mut e2e = f64::INFINITY;
    for node in &dag.nodes {
        let Some(&cost) = node.cost.get(&1) else {
            return Err(SimError::MissingLatency { component: node.node_id.clone(), batch: 1 });
        };
        let throughput = 1.0 / f64::from(cost);
        e2e = e2e.min(throughput);
        assignments.push(crate::plan::NodeAssignment {
            node_id: node.node_id.clone(),
            device: node.device.clone(),
            resource: cost,
            batch: 1,
            throughput,
        });
    }
    Ok(ExecutionPlan { assignments, e2e_throughput: e2e })
}

/// Build an execution plan for `policy` over this scenario's components.
pub fn plan_for(sc: &Scenario, policy: Policy, mode: PlanMode) -> Result<ExecutionPlan, SimError> {
    let dag = dag_for(sc, policy)?;
    match mode {
        PlanMode::BatchOne => batch_one_plan(&dag),
        PlanMode::Planned => {
            let budget = sc.budget.unwrap_or_else(|| generous_budget(&dag));
            dp_plan(&dag, budget, None).map_err(Into::into)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LatencySummary {
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p90_ms: f64,
    pub p99_ms: f64,
    pub max_ms: f64,
}

impl LatencySummary {
    fn of(samples: &[f64]) -> LatencySummary {
        if samples.is_empty() {
            return LatencySummary { mean_ms: 0.0, p50_ms: 0.0, p90_ms: 0.0, p99_ms: 0.0, max_ms: 0.0 };
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("latencies are finite"));
        let pct = |q: f64| {
            let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
            sorted[rank - 1]
        };
        LatencySummary {
            mean_ms: sorted.iter().sum::<f64>() / sorted.len() as f64,
            p50_ms: pct(0.50),
            p90_ms: pct(0.90),
            p99_ms: pct(0.99),
            max_ms: *sorted.last().expect("nonempty"),
        }
    }
}

/// Share of per-stream importance mass that went through enhancement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StreamProxy {
    pub stream_id: u32,
    pub proxy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrameSample {
    pub stream_id: u32,
    pub frame_id: u32,
    pub latency_ms: f64,
}

/// Everything one run reports. Frame-level samples stay in memory for CSV
/// export but are not serialized with the report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport {
    pub schema_version: u32,
    pub policy: Policy,
    pub seed: u64,
    pub duration_s: f64,
    pub frames_in: u64,
    pub frames_out: u64,
    pub throughput_fps: f64,
    /// Streams the measured rate sustains at the slowest stream's fps.
    pub sustainable_streams: u32,
    pub frame_latency: LatencySummary,
    pub chunk_latency: LatencySummary,
    /// Mean bin occupancy across packing rounds; region policy only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub occupy_mean: Option<f64>,
    pub accuracy_proxy: Vec<StreamProxy>,
    /// Worst extra wait the head of any batch saw, per component.
    pub max_fill_wait_ms: BTreeMap<String, f64>,
    #[serde(skip)]
    pub samples: Vec<FrameSample>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ItemKind {
    Frame,
    ChunkToken,
    Bin,
}

#[derive(Debug, Clone)]
struct Item {
    stream: u32,
    frame: u32,
    chunk: u32,
    px: u64,
    ready: u64,
    id: u64,
    kind: ItemKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EvKind {
    Arrive,
    Done,
    Timer(u64),
}

#[derive(Debug, Clone, Copy, Eq, PartialEq)]
struct Ev {
    tick: u64,
    comp: u8,
    stream: u32,
    frame: u32,
    seq: u64,
    kind: EvKind,
}

impl Ev {
    fn key(&self) -> (u64, u8, u32, u32, u64) {
        (self.tick, self.comp, self.stream, self.frame, self.seq)
    }
}

impl Ord for Ev {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key().cmp(&other.key())
    }
}

impl PartialOrd for Ev {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct Server {
    batch: usize,
    /// Fixed service ticks per launch; `None` means "ask the pixel model".
    svc_ticks: Option<u64>,
    timeout_ticks: u64,
    queue: VecDeque<Item>,
    busy: bool,
    in_flight: Vec<Item>,
    last_free: u64,
    max_fill_wait: u64,
    armed: Option<u64>,
}

impl Server {
    fn idle() -> Server {
        Server {
            batch: 1,
            svc_ticks: Some(1),
            timeout_ticks: 0,
            queue: VecDeque::new(),
            busy: false,
            in_flight: Vec::new(),
            last_free: 0,
            max_fill_wait: 0,
            armed: None,
        }
    }
}

struct ChunkRt {
    size: u32,
    predicted: u32,
    pending_bins: u32,
    released: bool,
    stash: Vec<MbIndex>,
}

struct StreamRt {
    spec: StreamSpec,
    geom: MbGeometry,
    total_frames: u32,
    arrivals: Vec<u64>,
    exits: Vec<u64>,
    frame_seeds: Vec<u64>,
    chunk_sparsity: Vec<f64>,
    chunks: Vec<ChunkRt>,
    mass_total: f64,
    mass_enhanced: f64,
}

impl StreamRt {
    fn build(
        spec: &StreamSpec,
        scenario_seed: u64,
        lane: u64,
        duration_s: f64,
        mb_size: u32,
    ) -> Result<StreamRt, SimError> {
        let total_frames = (duration_s * spec.fps + 1e-9).floor() as u32;
        let chunk_count = total_frames.div_ceil(spec.chunk_len).max(1) as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(scenario_seed);
        rng.set_stream(0x5350_0000 + lane);
        let (lo, hi) = spec.sparsity;
        let chunk_sparsity: Vec<f64> = (0..chunk_count).map(|_| lo + (hi - lo) * rng.gen::<f64>()).collect();
        let frame_seeds: Vec<u64> = (0..total_frames).map(|_| rng.gen()).collect();
        let arrivals: Vec<u64> = (0..total_frames)
            .map(|f| (f as f64 * 10_000.0 / spec.fps).round() as u64)
            .collect();
        let chunks = (0..chunk_count)
            .map(|c| {
                let start = c as u32 * spec.chunk_len;
                let size = spec.chunk_len.min(total_frames.saturating_sub(start));
                ChunkRt { size, predicted: 0, pending_bins: 0, released: false, stash: Vec::new() }
            })
            .collect();
        Ok(StreamRt {
            geom: MbGeometry::for_frame(spec.frame_w as usize, spec.frame_h as usize, mb_size as usize)?,
            spec: spec.clone(),
            total_frames,
            arrivals,
            exits: vec![u64::MAX; total_frames as usize],
            frame_seeds,
            chunk_sparsity,
            chunks,
            mass_total: 0.0,
            mass_enhanced: 0.0,
        })
    }

    fn synth_mass_and_cells(
        &mut self,
        frame: u32,
        collect_cells: bool,
    ) -> Result<f64, SimError> {
        let chunk = (frame / self.spec.chunk_len) as usize;
        let map = synth_importance(
            self.frame_seeds[frame as usize],
            self.geom,
            self.chunk_sparsity[chunk],
            self.spec.hotspots,
        )?;
        let mass: f64 = map.scores.iter().sum();
        if collect_cells {
            pack::queue_from_map(&map, self.spec.stream_id, frame, &mut self.chunks[chunk].stash);
        }
        Ok(mass)
    }
}

/// Evenly spaced anchor pattern: frame `i` of a `size`-frame chunk is an
/// anchor iff the running quota `ceil(fraction*size)` advances at `i`.
fn is_anchor(i: u32, size: u32, fraction: f64) -> bool {
    let k = (fraction * size as f64).ceil().min(size as f64).max(0.0) as u64;
    let (i, size) = (i as u64, size as u64);
    (i + 1) * k / size > i * k / size
}

struct Engine<'a> {
    sc: &'a Scenario,
    policy: Policy,
    servers: Vec<Server>,
    heap: BinaryHeap<std::cmp::Reverse<Ev>>,
    seq: u64,
    next_item: u64,
    streams: Vec<StreamRt>,
    stream_of: BTreeMap<u32, usize>,
    frames_out: u64,
    occupy_sum: f64,
    pack_rounds: u64,
    last_exit: u64,
}

impl<'a> Engine<'a> {
    fn new(plan: &ExecutionPlan, sc: &'a Scenario) -> Result<Engine<'a>, SimError> {
        let policy = sc.policy;
        let min_fps = sc.streams.iter().map(|s| s.fps).fold(f64::INFINITY, f64::min);
        let period_ticks = (10_000.0 / min_fps).round() as u64;

        let mut servers: Vec<Server> = (0..COMP_NAMES.len()).map(|_| Server::idle()).collect();
        for &comp in policy.components() {
            let name = COMP_NAMES[comp];
            let Some(assign) = plan.assignment(name) else {
                return Err(SimError::PlanPolicyMismatch { policy: policy.name(), missing: name.to_string() });
            };
            if assign.batch == 0 {
                return Err(SimError::Scenario(format!("plan gives '{name}' batch 0")));
            }
            let svc_ticks = if comp == ENHANCE {
                None
            } else {
                let table = &sc
                    .components
                    .get(name)
                    .ok_or_else(|| SimError::Scenario(format!("policy {policy} needs component '{name}'")))?
                    .latency;
                let Some(&ms) = table.get(&assign.batch) else {
                    return Err(SimError::MissingLatency { component: name.to_string(), batch: assign.batch });
                };
                Some(ticks(ms).max(1))
            };
            servers[comp] = Server {
                batch: assign.batch as usize,
                svc_ticks,
                timeout_ticks: (assign.batch as u64 - 1) * period_ticks,
                ..Server::idle()
            };
        }

        let mut streams = Vec::new();
        let mut stream_of = BTreeMap::new();
        for (lane, spec) in sc.streams.iter().enumerate() {
            let rt = StreamRt::build(spec, sc.seed, lane as u64, sc.duration_s, sc.mb_size)?;
            stream_of.insert(spec.stream_id, streams.len());
            streams.push(rt);
        }

        Ok(Engine {
            sc,
            policy,
            servers,
            heap: BinaryHeap::new(),
            seq: 0,
            next_item: 0,
            streams,
            stream_of,
            frames_out: 0,
            occupy_sum: 0.0,
            pack_rounds: 0,
            last_exit: 0,
        })
    }

    fn push_ev(&mut self, tick: u64, comp: usize, stream: u32, frame: u32, kind: EvKind) {
        self.seq += 1;
        self.heap.push(std::cmp::Reverse(Ev { tick, comp: comp as u8, stream, frame, seq: self.seq, kind }));
    }

    fn new_item(&mut self, stream: u32, frame: u32, chunk: u32, px: u64, ready: u64, kind: ItemKind) -> Item {
        self.next_item += 1;
        Item { stream, frame, chunk, px, ready, id: self.next_item, kind }
    }

    fn enqueue(&mut self, comp: usize, item: Item, now: u64) {
        self.servers[comp].queue.push_back(item);
        self.try_launch(comp, now);
    }

    fn try_launch(&mut self, comp: usize, now: u64) {
        let (launch_n, timer): (usize, Option<(u64, u32, u32, u64)>) = {
            let srv = &self.servers[comp];
            if srv.busy || srv.queue.is_empty() {
                return;
            }
            if srv.queue.len() >= srv.batch {
                (srv.batch, None)
            } else {
                let head = &srv.queue[0];
                let deadline = head.ready + srv.timeout_ticks;
                if now >= deadline {
                    (srv.queue.len(), None)
                } else if srv.armed == Some(head.id) {
                    return;
                } else {
                    (0, Some((deadline, head.stream, head.frame, head.id)))
                }
            }
        };
        if let Some((deadline, stream, frame, id)) = timer {
            self.servers[comp].armed = Some(id);
            self.push_ev(deadline, comp, stream, frame, EvKind::Timer(id));
            return;
        }
        let (svc, stream, frame) = {
            let srv = &mut self.servers[comp];
            let items: Vec<Item> = srv.queue.drain(..launch_n).collect();
            let fill = now.saturating_sub(items[0].ready.max(srv.last_free));
            srv.max_fill_wait = srv.max_fill_wait.max(fill);
            let svc = match srv.svc_ticks {
                Some(t) => t,
                None => ticks(self.sc.enhance.latency_ms(items.iter().map(|i| i.px).sum())).max(1),
            };
            srv.busy = true;
            srv.armed = None;
            srv.in_flight = items;
            (svc, srv.in_flight[0].stream, srv.in_flight[0].frame)
        };
        self.push_ev(now + svc, comp, stream, frame, EvKind::Done);
    }

    fn on_arrive(&mut self, stream: u32, frame: u32, now: u64) {
        let s = self.stream_of[&stream];
        let chunk = frame / self.streams[s].spec.chunk_len;
        let px = self.streams[s].spec.frame_px();
        let item = self.new_item(stream, frame, chunk, px, now, ItemKind::Frame);
        self.enqueue(DECODE, item, now);
    }

    fn on_done(&mut self, comp: usize, now: u64) -> Result<(), SimError> {
        let items = {
            let srv = &mut self.servers[comp];
            srv.busy = false;
            srv.last_free = now;
            std::mem::take(&mut srv.in_flight)
        };
        for item in items {
            self.route(comp, item, now)?;
        }
        self.try_launch(comp, now);
        Ok(())
    }

    fn route(&mut self, comp: usize, item: Item, now: u64) -> Result<(), SimError> {
        let s = self.stream_of[&item.stream];
        match comp {
            DECODE => match self.policy {
                Policy::OnlyInfer => {
                    let fwd = Item { ready: now, ..item };
                    self.enqueue(ANALYTICS, fwd, now);
                }
                Policy::PerFrame => {
                    let fwd = Item { ready: now, ..item };
                    self.enqueue(ENHANCE, fwd, now);
                }
                Policy::SelectiveAnchor => {
                    let mass = self.streams[s].synth_mass_and_cells(item.frame, false)?;
                    self.streams[s].mass_total += mass;
                    let rt = &self.streams[s];
                    let within = item.frame % rt.spec.chunk_len;
                    let size = rt.chunks[item.chunk as usize].size;
                    let anchor = is_anchor(within, size, self.sc.anchor_fraction);
                    if anchor {
                        self.streams[s].mass_enhanced += mass;
                    }
                    let fwd = Item { ready: now, ..item };
                    self.enqueue(if anchor { ENHANCE } else { ANALYTICS }, fwd, now);
                }
                Policy::RegionBased => {
                    let fwd = Item { ready: now, ..item };
                    self.enqueue(PREDICT, fwd, now);
                }
            },
            PREDICT => {
                let mass = self.streams[s].synth_mass_and_cells(item.frame, true)?;
                self.streams[s].mass_total += mass;
                let chunk = &mut self.streams[s].chunks[item.chunk as usize];
                chunk.predicted += 1;
                if chunk.predicted == chunk.size {
                    let token =
                        self.new_item(item.stream, item.chunk, item.chunk, 0, now, ItemKind::ChunkToken);
                    self.enqueue(PACK, token, now);
                }
            }
            PACK => self.pack_round(s, item.chunk as usize, now)?,
            ENHANCE => match item.kind {
                ItemKind::Frame => {
                    let fwd = Item { ready: now, ..item };
                    self.enqueue(ANALYTICS, fwd, now);
                }
                ItemKind::Bin => {
                    let chunk = &mut self.streams[s].chunks[item.chunk as usize];
                    chunk.pending_bins -= 1;
                    if chunk.pending_bins == 0 && !chunk.released {
                        self.release_chunk(s, item.chunk as usize, now);
                    }
                }
                ItemKind::ChunkToken => unreachable!("chunk tokens stop at pack"),
            },
            ANALYTICS => {
                let rt = &mut self.streams[s];
                rt.exits[item.frame as usize] = now;
                self.frames_out += 1;
                self.last_exit = self.last_exit.max(now);
            }
            _ => unreachable!("no such component"),
        }
        Ok(())
    }

    /// One packing round: select the chunk's best cells, grow boxes, pack
    /// them into the bins, and send one enhance item per occupied bin.
    fn pack_round(&mut self, s: usize, chunk: usize, now: u64) -> Result<(), SimError> {
        let stash = std::mem::take(&mut self.streams[s].chunks[chunk].stash);
        let selected = pack::select_top_n(&stash, self.sc.bins, self.sc.mb_size)?;
        let regions = pack::region_props(&selected);
        let spec = self.streams[s].spec.clone();
        let boxes = pack::bound_regions(&regions, self.sc.mb_size, self.sc.expand, spec.frame_w, spec.frame_h)?;
        let boxes = pack::partition_boxes(boxes, self.sc.partition_limit)?;
        let plan = pack::pack(&boxes, self.sc.bins, PackPolicy::ImportanceDensity)?;
        self.occupy_sum += pack::occupy_ratio(&plan);
        self.pack_rounds += 1;
        self.streams[s].mass_enhanced += pack::packed_importance(&plan);
        let used: BTreeSet<usize> = plan.placements.iter().map(|p| p.bin).collect();
        self.streams[s].chunks[chunk].pending_bins = used.len() as u32;
        if used.is_empty() {
            self.release_chunk(s, chunk, now);
            return Ok(());
        }
        let bin_px = self.sc.bins.width as u64 * self.sc.bins.height as u64;
        let first_frame = chunk as u32 * spec.chunk_len;
        for _ in used {
            let item =
                self.new_item(spec.stream_id, first_frame, chunk as u32, bin_px, now, ItemKind::Bin);
            self.enqueue(ENHANCE, item, now);
        }
        Ok(())
    }

    /// All bins of the chunk are enhanced (or none were needed): every frame
    /// of the chunk may continue to analytics.
    fn release_chunk(&mut self, s: usize, chunk: usize, now: u64) {
        let rt = &self.streams[s];
        let spec_id = rt.spec.stream_id;
        let start = chunk as u32 * rt.spec.chunk_len;
        let end = start + rt.chunks[chunk].size;
        let px = rt.spec.frame_px();
        self.streams[s].chunks[chunk].released = true;
        for f in start..end {
            let item = self.new_item(spec_id, f, chunk as u32, px, now, ItemKind::Frame);
            self.enqueue(ANALYTICS, item, now);
        }
    }

    fn run(&mut self) -> Result<(), SimError> {
        for s in 0..self.streams.len() {
            let id = self.streams[s].spec.stream_id;
            for f in 0..self.streams[s].total_frames {
                let tick = self.streams[s].arrivals[f as usize];
                self.push_ev(tick, DECODE, id, f, EvKind::Arrive);
            }
        }
        while let Some(std::cmp::Reverse(ev)) = self.heap.pop() {
            match ev.kind {
                EvKind::Arrive => self.on_arrive(ev.stream, ev.frame, ev.tick),
                EvKind::Done => self.on_done(ev.comp as usize, ev.tick)?,
                EvKind::Timer(token) => {
                    let comp = ev.comp as usize;
                    if self.servers[comp].armed == Some(token) {
                        self.servers[comp].armed = None;
                    }
                    self.try_launch(comp, ev.tick);
                }
            }
        }
        Ok(())
    }

    fn report(&self) -> SimReport {
        let frames_in: u64 = self.streams.iter().map(|s| s.total_frames as u64).sum();
        let mut samples = Vec::new();
        let mut frame_lat = Vec::new();
        let mut chunk_lat = Vec::new();
        for rt in &self.streams {
            for f in 0..rt.total_frames as usize {
                let latency_ms = ms_of(rt.exits[f].saturating_sub(rt.arrivals[f]));
                samples.push(FrameSample { stream_id: rt.spec.stream_id, frame_id: f as u32, latency_ms });
                frame_lat.push(latency_ms);
            }
            for (c, chunk) in rt.chunks.iter().enumerate() {
                if chunk.size == 0 {
                    continue;
                }
                let start = c * rt.spec.chunk_len as usize;
                let end = start + chunk.size as usize;
                let last_arrival = rt.arrivals[end - 1];
                let max_exit = rt.exits[start..end].iter().copied().max().expect("chunk is nonempty");
                chunk_lat.push(ms_of(max_exit.saturating_sub(last_arrival)));
            }
        }
        let last_exit_s = ms_of(self.last_exit) / 1000.0;
        let throughput_fps = if last_exit_s > 0.0 { self.frames_out as f64 / last_exit_s } else { 0.0 };
        let min_fps = self.sc.streams.iter().map(|s| s.fps).fold(f64::INFINITY, f64::min);
        let sustainable_streams = if last_exit_s <= self.sc.duration_s * 1.05 {
            self.streams.len() as u32
        } else {
            (throughput_fps / min_fps).floor() as u32
        };
        let accuracy_proxy = self
            .streams
            .iter()
            .map(|rt| {
                let proxy = match self.policy {
                    Policy::OnlyInfer => 0.0,
                    Policy::PerFrame => 1.0,
                    _ if rt.mass_total > 0.0 => (rt.mass_enhanced / rt.mass_total).min(1.0),
                    _ => 0.0,
                };
                StreamProxy { stream_id: rt.spec.stream_id, proxy }
            })
            .collect();
        let max_fill_wait_ms = self
            .policy
            .components()
            .iter()
            .map(|&c| (COMP_NAMES[c].to_string(), ms_of(self.servers[c].max_fill_wait)))
            .collect();
        SimReport {
            schema_version: SCHEMA_VERSION,
            policy: self.policy,
            seed: self.sc.seed,
            duration_s: self.sc.duration_s,
            frames_in,
            frames_out: self.frames_out,
            throughput_fps,
            sustainable_streams,
            frame_latency: LatencySummary::of(&frame_lat),
            chunk_latency: LatencySummary::of(&chunk_lat),
            occupy_mean: (self.pack_rounds > 0).then(|| self.occupy_sum / self.pack_rounds as f64),
            accuracy_proxy,
            max_fill_wait_ms,
            samples,
        }
    }
}

/// Run the scenario under `plan` until every ingested frame has left the
/// pipeline. Ingest stops at `duration_s`; the drain is part of the run, so
/// `frames_out` always equals `frames_in`.
pub fn simulate(plan: &ExecutionPlan, sc: &Scenario) -> Result<SimReport, SimError> {
    sc.validate()?;
    let mut engine = Engine::new(plan, sc)?;
    engine.run()?;
    let report = engine.report();
    debug_assert_eq!(report.frames_in, report.frames_out);
    Ok(report)
}

/// Simulate with the scenario's own plan if it carries one, otherwise plan
/// first and then run.
pub fn run_scenario(sc: &Scenario) -> Result<SimReport, SimError> {
    let plan = match &sc.plan {
        Some(p) => p.clone(),
        None => plan_for(sc, sc.policy, PlanMode::Planned)?,
    };
    simulate(&plan, sc)
}

/// One labeled run inside a comparison table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyRun {
    pub label: String,
    pub policy: Policy,
    pub report: SimReport,
}

/// Run each policy over the same scenario (same streams, same seeds) with a
/// freshly planned configuration, for side-by-side comparison.
pub fn compare_policies(sc: &Scenario, policies: &[Policy]) -> Result<Vec<PolicyRun>, SimError> {
    let mut rows = Vec::new();
    for &policy in policies {
        let mut variant = sc.clone();
        variant.policy = policy;
        variant.plan = None;
        let plan = plan_for(&variant, policy, PlanMode::Planned)?;
        let report = simulate(&plan, &variant)?;
        rows.push(PolicyRun { label: policy.name().to_string(), policy, report });
    }
    Ok(rows)
}

/// Four-rung ablation: whole-frame enhancement unplanned and planned, then
/// region packing unplanned and planned. Throughput should never drop along
/// the ladder, and the region rungs should each buy a strict improvement.
pub fn ablation_ladder(sc: &Scenario) -> Result<Vec<PolicyRun>, SimError> {
    let rungs: [(&str, Policy, PlanMode); 4] = [
        ("per_frame", Policy::PerFrame, PlanMode::BatchOne),
        ("per_frame_planned", Policy::PerFrame, PlanMode::Planned),
        ("region_unplanned", Policy::RegionBased, PlanMode::BatchOne),
        ("region_planned", Policy::RegionBased, PlanMode::Planned),
    ];
    let mut rows = Vec::new();
    for (label, policy, mode) in rungs {
        let mut variant = sc.clone();
        variant.policy = policy;
        variant.plan = None;
        let plan = plan_for(&variant, policy, mode)?;
        let report = simulate(&plan, &variant)?;
        rows.push(PolicyRun { label: label.to_string(), policy, report });
    }
    Ok(rows)
}

/// Frame-latency distribution of a batched run next to its batch-1 twin.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatencyHistogram {
    pub bucket_ms: f64,
    /// Batched-run frame counts per `bucket_ms`-wide bucket, from zero up.
    pub counts: Vec<u64>,
    pub delta_mean_ms: f64,
    pub delta_max_ms: f64,
    /// Worst batching wait in the batched run, across components.
    pub max_fill_wait_ms: f64,
}

/// Histogram the batched run's frame latencies and report how far its mean
/// and max moved against the unbatched baseline. Both reports must describe
/// the same frames.
pub fn frame_latency_histogram(
    batched: &SimReport,
    unbatched: &SimReport,
    bucket_ms: f64,
) -> Result<LatencyHistogram, SimError> {
    if !(bucket_ms.is_finite() && bucket_ms > 0.0) {
        return Err(SimError::Scenario("bucket_ms must be positive".into()));
    }
    if batched.samples.len() != unbatched.samples.len()
        || batched
            .samples
            .iter()
            .zip(&unbatched.samples)
            .any(|(a, b)| (a.stream_id, a.frame_id) != (b.stream_id, b.frame_id))
    {
        return Err(SimError::Scenario("reports describe different frame sets".into()));
    }
    let mut counts: Vec<u64> = Vec::new();
    for s in &batched.samples {
        let idx = (s.latency_ms / bucket_ms).floor() as usize;
        if idx >= counts.len() {
            counts.resize(idx + 1, 0);
        }
        counts[idx] += 1;
    }
    let max_fill_wait_ms = batched.max_fill_wait_ms.values().copied().fold(0.0, f64::max);
    Ok(LatencyHistogram {
        bucket_ms,
        counts,
        delta_mean_ms: batched.frame_latency.mean_ms - unbatched.frame_latency.mean_ms,
        delta_max_ms: batched.frame_latency.max_ms - unbatched.frame_latency.max_ms,
        max_fill_wait_ms,
    })
}
