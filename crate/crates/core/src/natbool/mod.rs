//! NatBool-DAG: random boolean-logic DAGs rendered as self-contained
//! narratives, with ground-truth derivations and an oracle verifier.
//!
//! Definitions used throughout (both are stored in every sample):
//! * `hops`  — derived-node count on the longest leaf→target path;
//! * `steps` — number of "Analyzing" blocks in the derivation, i.e. the
//!   count of derived nodes in the target's ancestry.

pub mod themes;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::seeding::substream;
use themes::Theme;

// ── Gates ─────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoolGate {
    #[serde(rename = "AND")]
    And,
    #[serde(rename = "OR")]
    Or,
    #[serde(rename = "XOR")]
    Xor,
    #[serde(rename = "NOT")]
    Not,
    #[serde(rename = "NAND")]
    Nand,
}

impl BoolGate {
    pub fn arity(self) -> usize {
        match self {
            BoolGate::Not => 1,
            _ => 2,
        }
    }

    pub fn eval(self, inputs: &[bool]) -> bool {
        match self {
            BoolGate::And => inputs[0] && inputs[1],
            BoolGate::Or => inputs[0] || inputs[1],
            BoolGate::Xor => inputs[0] ^ inputs[1],
            BoolGate::Not => !inputs[0],
            BoolGate::Nand => !(inputs[0] && inputs[1]),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BoolGate::And => "AND",
            BoolGate::Or => "OR",
            BoolGate::Xor => "XOR",
            BoolGate::Not => "NOT",
            BoolGate::Nand => "NAND",
        }
    }
}

pub const ALL_GATES: [BoolGate; 5] =
    [BoolGate::And, BoolGate::Or, BoolGate::Xor, BoolGate::Not, BoolGate::Nand];

// ── DAG structure ─────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Leaf {
    pub id: String,
    pub name: String,
    pub value: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DerivedNode {
    pub id: String,
    pub name: String,
    pub gate: BoolGate,
    pub inputs: Vec<String>,
}

/// Leaves carry observed booleans, derived nodes carry gates; ids are
/// "L{i}" / "N{i}".
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogicDag {
    pub leaves: Vec<Leaf>,
    pub nodes: Vec<DerivedNode>,
    pub target: String,
}

impl LogicDag {
    pub fn total_nodes(&self) -> usize {
        self.leaves.len() + self.nodes.len()
    }

    fn leaf_by_id(&self, id: &str) -> Option<&Leaf> {
        self.leaves.iter().find(|l| l.id == id)
    }

    fn node_by_id(&self, id: &str) -> Option<&DerivedNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn name_of(&self, id: &str) -> Option<&str> {
        self.leaf_by_id(id)
            .map(|l| l.name.as_str())
            .or_else(|| self.node_by_id(id).map(|n| n.name.as_str()))
    }

    pub fn all_names(&self) -> BTreeSet<&str> {
        self.leaves
            .iter()
            .map(|l| l.name.as_str())
            .chain(self.nodes.iter().map(|n| n.name.as_str()))
            .collect()
    }

    /// Ids of the target's ancestry (leaves and derived nodes), target
    /// included.
    pub fn ancestry(&self) -> BTreeSet<String> {
        let mut seen = BTreeSet::new();
        let mut stack = vec![self.target.clone()];
        while let Some(id) = stack.pop() {
            if !seen.insert(id.clone()) {
                continue;
            }
            if let Some(node) = self.node_by_id(&id) {
                stack.extend(node.inputs.iter().cloned());
            }
        }
        seen
    }
}

/// Topological evaluation by the fixed truth tables. Detects cycles and
/// dangling input references.
pub fn evaluate_dag(dag: &LogicDag) -> Result<(BTreeMap<String, bool>, bool)> {
    let mut values: BTreeMap<String, bool> = BTreeMap::new();
    for leaf in &dag.leaves {
        values.insert(leaf.id.clone(), leaf.value);
    }
    let mut pending: Vec<&DerivedNode> = dag.nodes.iter().collect();
    while !pending.is_empty() {
        let before = pending.len();
        pending.retain(|node| {
            let resolved: Option<Vec<bool>> =
                node.inputs.iter().map(|i| values.get(i).copied()).collect();
            match resolved {
                Some(inputs) if inputs.len() == node.gate.arity() => {
                    values.insert(node.id.clone(), node.gate.eval(&inputs));
                    false
                }
                Some(_) => true, // arity mismatch caught below
                None => true,
            }
        });
        if pending.len() == before {
            return Err(Error::structural(format!(
                "cycle or unresolved inputs among {:?}",
                pending.iter().map(|n| n.id.as_str()).collect::<Vec<_>>()
            )));
        }
    }
    let answer = *values
        .get(&dag.target)
        .ok_or_else(|| Error::structural("target id not present".to_string()))?;
    Ok((values, answer))
}

/// Depth per id: leaves 0, derived 1 + max input depth. The target depth is
/// the hop count.
pub fn dag_depths(dag: &LogicDag) -> Result<BTreeMap<String, usize>> {
    let mut depth: BTreeMap<String, usize> = BTreeMap::new();
    for leaf in &dag.leaves {
        depth.insert(leaf.id.clone(), 0);
    }
    let mut pending: Vec<&DerivedNode> = dag.nodes.iter().collect();
    while !pending.is_empty() {
        let before = pending.len();
        pending.retain(|node| {
            let resolved: Option<Vec<usize>> =
                node.inputs.iter().map(|i| depth.get(i).copied()).collect();
            match resolved {
                Some(ds) => {
                    depth.insert(node.id.clone(), 1 + ds.into_iter().max().unwrap_or(0));
                    false
                }
                None => true,
            }
        });
        if pending.len() == before {
            return Err(Error::structural("cycle while computing depths".to_string()));
        }
    }
    Ok(depth)
}

pub fn dag_hops(dag: &LogicDag) -> Result<usize> {
    let depths = dag_depths(dag)?;
    depths
        .get(&dag.target)
        .copied()
        .ok_or_else(|| Error::structural("target id not present".to_string()))
}

// ── Generation ────────────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct GenConfig {
    /// Maximum derived-node count (must cover the chain of length `hops`).
    pub node_budget: usize,
    /// Probability that a binary gate repeats one operand ("X AND X");
    /// never applied to XOR, whose self-application is constant.
    pub duplicate_operand_prob: f64,
    /// Probability that a free input slot takes a fresh leaf.
    pub fresh_leaf_prob: f64,
    /// Probability that a free input slot spawns a new derived node
    /// (budget permitting), giving branchy topologies.
    pub branch_prob: f64,
    /// Unused observed facts added to the context, inclusive range.
    pub distractor_leaves: (usize, usize),
    /// Sampling weights for AND, OR, XOR, NOT, NAND.
    pub gate_weights: [f64; 5],
}

impl GenConfig {
    pub fn for_hops(hops: usize) -> Self {
        GenConfig {
            node_budget: hops + 4,
            duplicate_operand_prob: 0.2,
            fresh_leaf_prob: 0.55,
            branch_prob: 0.35,
            distractor_leaves: (2, 5),
            gate_weights: [1.0, 1.0, 1.0, 0.5, 1.0],
        }
    }

    /// Pure chain: every derived node consumes the previous one plus a
    /// fresh leaf. A hops-h chain has h derived nodes and h+1 leaves.
    pub fn chain(hops: usize) -> Self {
        GenConfig {
            node_budget: hops,
            duplicate_operand_prob: 0.0,
            fresh_leaf_prob: 1.0,
            branch_prob: 0.0,
            distractor_leaves: (0, 0),
            gate_weights: [1.0, 1.0, 1.0, 0.0, 1.0],
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum R {
    L(usize),
    N(usize),
}

struct Builder {
    leaf_values: Vec<bool>,
    nodes: Vec<(BoolGate, Vec<R>)>,
    depths: Vec<usize>, // per derived node
    budget_left: usize,
}

impl Builder {
    fn fresh_leaf(&mut self, rng: &mut impl Rng) -> R {
        self.leaf_values.push(rng.random::<bool>());
        R::L(self.leaf_values.len() - 1)
    }

    fn depth_of(&self, r: R) -> usize {
        match r {
            R::L(_) => 0,
            R::N(i) => self.depths[i],
        }
    }

    fn sample_gate(&self, cfg: &GenConfig, rng: &mut impl Rng) -> BoolGate {
        let total: f64 = cfg.gate_weights.iter().sum();
        let mut roll = rng.random_range(0.0..total);
        for (gate, w) in ALL_GATES.iter().zip(&cfg.gate_weights) {
            if roll < *w {
                return *gate;
            }
            roll -= w;
        }
        BoolGate::And
    }

    /// An input of depth ≤ max_depth: a fresh leaf, an existing entity, or
    /// (budget permitting) a freshly built derived node.
    fn pick_input(&mut self, max_depth: usize, cfg: &GenConfig, rng: &mut impl Rng) -> R {
        if max_depth >= 1 && self.budget_left > 0 && rng.random::<f64>() < cfg.branch_prob {
            self.budget_left -= 1;
            let gate = self.sample_gate(cfg, rng);
            let first = self.pick_input(max_depth - 1, cfg, rng);
            let inputs = if gate.arity() == 1 {
                vec![first]
            } else if gate != BoolGate::Xor
                && rng.random::<f64>() < cfg.duplicate_operand_prob
            {
                vec![first, first]
            } else {
                vec![first, self.pick_input(max_depth - 1, cfg, rng)]
            };
            let depth = 1 + inputs.iter().map(|&r| self.depth_of(r)).max().unwrap();
            self.nodes.push((gate, inputs));
            self.depths.push(depth);
            return R::N(self.nodes.len() - 1);
        }
        let candidates: Vec<R> = (0..self.leaf_values.len())
            .map(R::L)
            .chain(
                (0..self.nodes.len())
                    .filter(|&i| self.depths[i] <= max_depth)
                    .map(R::N),
            )
            .collect();
        if candidates.is_empty() || rng.random::<f64>() < cfg.fresh_leaf_prob {
            self.fresh_leaf(rng)
        } else {
            candidates[rng.random_range(0..candidates.len())]
        }
    }
}

/// Generate a DAG whose target sits exactly `hops` derived nodes above its
/// deepest leaf. Names are filled in later by `generate_sample`.
pub fn generate_dag(hops: usize, rng: &mut impl Rng, cfg: &GenConfig) -> Result<LogicDag> {
    if !(1..=32).contains(&hops) {
        return Err(Error::invalid(format!("hops {hops} outside [1, 32]")));
    }
    if cfg.node_budget < hops {
        return Err(Error::invalid(format!(
            "node budget {} cannot reach {hops} hops",
            cfg.node_budget
        )));
    }
    let mut b = Builder {
        leaf_values: Vec::new(),
        nodes: Vec::new(),
        depths: Vec::new(),
        budget_left: cfg.node_budget - hops,
    };
    let mut prev = b.fresh_leaf(rng);
    for i in 1..=hops {
        let mut gate = b.sample_gate(cfg, rng);
        if i == hops && gate == BoolGate::Not {
            // keep the headline rule binary, like the rendered exemplars
            gate = BoolGate::Or;
        }
        let inputs = if gate.arity() == 1 {
            vec![prev]
        } else if gate != BoolGate::Xor && rng.random::<f64>() < cfg.duplicate_operand_prob {
            vec![prev, prev]
        } else {
            vec![prev, b.pick_input(i - 1, cfg, rng)]
        };
        let depth = 1 + inputs.iter().map(|&r| b.depth_of(r)).max().unwrap();
        debug_assert_eq!(depth, i);
        b.nodes.push((gate, inputs));
        b.depths.push(depth);
        prev = R::N(b.nodes.len() - 1);
    }
    let n_distract = if cfg.distractor_leaves.1 > 0 {
        rng.random_range(cfg.distractor_leaves.0..=cfg.distractor_leaves.1)
    } else {
        0
    };
    for _ in 0..n_distract {
        b.fresh_leaf(rng);
    }

    let target_idx = match prev {
        R::N(i) => i,
        R::L(_) => unreachable!("hops >= 1 always ends on a derived node"),
    };
    let ref_id = |r: R| -> String {
        match r {
            R::L(i) => format!("L{i}"),
            R::N(i) => format!("N{i}"),
        }
    };
    let dag = LogicDag {
        leaves: b
            .leaf_values
            .iter()
            .enumerate()
            .map(|(i, &value)| Leaf { id: format!("L{i}"), name: String::new(), value })
            .collect(),
        nodes: b
            .nodes
            .iter()
            .enumerate()
            .map(|(i, (gate, inputs))| DerivedNode {
                id: format!("N{i}"),
                name: String::new(),
                gate: *gate,
                inputs: inputs.iter().map(|&r| ref_id(r)).collect(),
            })
            .collect(),
        target: format!("N{target_idx}"),
    };
    debug_assert_eq!(dag_hops(&dag)?, hops);
    Ok(dag)
}

/// Fresh i.i.d. leaf values on the same topology.
pub fn resample_leaf_values(dag: &mut LogicDag, rng: &mut impl Rng) {
    for leaf in &mut dag.leaves {
        leaf.value = rng.random::<bool>();
    }
}

// ── Ground-truth derivation ───────────────────────────────────────────────

/// Render the step-by-step derivation: leaf checks, one "Analyzing" block
/// per ancestry node in topological order, then the final answer line.
pub fn derive_cot(dag: &LogicDag, values: &BTreeMap<String, bool>) -> Result<String> {
    let ancestry = dag.ancestry();
    let mut out = String::new();
    let mut step = 0usize;
    for leaf in &dag.leaves {
        if ancestry.contains(&leaf.id) {
            step += 1;
            out.push_str(&format!(
                "{step}. Check status of '{}': The logs indicate it is {}.\n",
                leaf.name,
                tf(leaf.value)
            ));
        }
    }
    for node in &dag.nodes {
        if !ancestry.contains(&node.id) {
            continue;
        }
        let val = values
            .get(&node.id)
            .ok_or_else(|| Error::structural(format!("missing value for {}", node.id)))?;
        let tag = if node.id == dag.target { " (Target)" } else { "" };
        out.push_str(&format!("Analyzing '{}'{}:\n", node.name, tag));
        let named = |id: &str| -> Result<String> {
            let name = dag
                .name_of(id)
                .ok_or_else(|| Error::structural(format!("unknown input id {id}")))?;
            let v = values
                .get(id)
                .ok_or_else(|| Error::structural(format!("missing value for {id}")))?;
            Ok(format!("{} ({})", name, tf(*v)))
        };
        match node.gate.arity() {
            1 => out.push_str(&format!("  - Requires: NOT {}\n", named(&node.inputs[0])?)),
            _ => out.push_str(&format!(
                "  - Requires: {} {} {}\n",
                named(&node.inputs[0])?,
                node.gate.name(),
                named(&node.inputs[1])?
            )),
        }
        out.push_str(&format!(
            "  - Logic: {} logic evaluates to {}. -> '{}' is {}.\n",
            node.gate.name(),
            tf(*val),
            node.name,
            tf(*val)
        ));
    }
    let answer = values
        .get(&dag.target)
        .ok_or_else(|| Error::structural("target value missing".to_string()))?;
    out.push_str(&format!("Final Answer: {}", tf(*answer)));
    Ok(out)
}

fn tf(v: bool) -> &'static str {
    if v {
        "True"
    } else {
        "False"
    }
}

/// Count of "Analyzing" blocks a derivation for this DAG contains.
pub fn step_count(dag: &LogicDag) -> usize {
    let ancestry = dag.ancestry();
    dag.nodes.iter().filter(|n| ancestry.contains(&n.id)).count()
}

// ── Natural-language rendering ────────────────────────────────────────────

/// Assign non-colliding entity names from the theme pool; the target gets
/// the theme's fixed target name.
pub fn assign_names(dag: &mut LogicDag, theme: &Theme, rng: &mut impl Rng) -> Result<()> {
    let needed = dag.total_nodes();
    if needed > theme.pool_size() {
        return Err(Error::config(format!(
            "theme pool ({}) smaller than node count ({needed})",
            theme.pool_size()
        )));
    }
    let mut indices: Vec<usize> = (0..theme.pool_size()).collect();
    indices.shuffle(rng);
    let mut it = indices.into_iter();
    for leaf in &mut dag.leaves {
        leaf.name = theme.entity_name(it.next().unwrap());
    }
    for node in &mut dag.nodes {
        node.name = if node.id == dag.target {
            theme.target_name.to_string()
        } else {
            theme.entity_name(it.next().unwrap())
        };
    }
    Ok(())
}

/// Render the instruction and the OBSERVED DATA / SYSTEM RULES context.
/// Line order is shuffled so position carries no signal.
pub fn render_natural_language(
    dag: &LogicDag,
    theme: &Theme,
    rng: &mut impl Rng,
) -> Result<(String, String)> {
    if dag.leaves.iter().any(|l| l.name.is_empty()) {
        return Err(Error::config("render needs named nodes; call assign_names".to_string()));
    }
    let instruction = format!(
        "Based on the observed data and system rules, determine the status of '{}'. Is it True or False?",
        dag.name_of(&dag.target).unwrap()
    );
    let mut observed: Vec<String> =
        dag.leaves.iter().map(|l| theme.observed_line(&l.name, l.value)).collect();
    observed.shuffle(rng);
    let mut rules: Vec<String> = dag
        .nodes
        .iter()
        .map(|n| {
            let inputs: Vec<&str> =
                n.inputs.iter().map(|i| dag.name_of(i).unwrap_or("?")).collect();
            theme.rule_line(n.gate, &n.name, &inputs)
        })
        .collect();
    rules.shuffle(rng);
    let context = format!(
        "=== SCENARIO: {} ===\n\n--- OBSERVED DATA ---\n{}\n\n--- SYSTEM RULES ---\n{}",
        theme.name,
        observed.join("\n"),
        rules.join("\n")
    );
    Ok((instruction, context))
}

// ── Samples ───────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NatBoolSample {
    pub id: String,
    pub theme: String,
    pub hops: usize,
    pub steps: usize,
    pub total_nodes: usize,
    pub instruction: String,
    pub context: String,
    pub cot: String,
    pub answer: bool,
    pub dag: LogicDag,
}

/// Build one full sample. When `desired_answer` is set, leaf values are
/// resampled (and degenerate topologies regenerated) until the oracle
/// answer matches, which is how datasets keep their answer marginals
/// balanced.
pub fn generate_sample(
    id: &str,
    hops: usize,
    theme: &Theme,
    cfg: &GenConfig,
    rng: &mut impl Rng,
    desired_answer: Option<bool>,
) -> Result<NatBoolSample> {
    let mut dag = None;
    'outer: for _topology_attempt in 0..64 {
        let mut candidate = generate_dag(hops, rng, cfg)?;
        for _value_attempt in 0..16 {
            let (_, answer) = evaluate_dag(&candidate)?;
            if desired_answer.is_none() || desired_answer == Some(answer) {
                dag = Some(candidate);
                break 'outer;
            }
            resample_leaf_values(&mut candidate, rng);
        }
    }
    let mut dag = dag.ok_or_else(|| {
        Error::structural(format!("no {hops}-hop topology reached the desired answer"))
    })?;
    assign_names(&mut dag, theme, rng)?;
    let (values, answer) = evaluate_dag(&dag)?;
    let (instruction, context) = render_natural_language(&dag, theme, rng)?;
    let cot = derive_cot(&dag, &values)?;
    Ok(NatBoolSample {
        id: id.to_string(),
        theme: theme.name.to_string(),
        hops: dag_hops(&dag)?,
        steps: step_count(&dag),
        total_nodes: dag.total_nodes(),
        instruction,
        context,
        cot,
        answer,
        dag,
    })
}

// ── Verification ──────────────────────────────────────────────────────────

/// Re-derive everything from the embedded DAG and compare against the
/// stored fields. Returns the list of failure kinds (empty = pass).
pub fn verify_sample(sample: &NatBoolSample) -> Vec<String> {
    let mut failures = Vec::new();
    let eval = match evaluate_dag(&sample.dag) {
        Ok(e) => Some(e),
        Err(e) => {
            failures.push(format!("structure: {e}"));
            None
        }
    };
    if let Some((values, answer)) = &eval {
        if *answer != sample.answer {
            failures.push("answer-mismatch".to_string());
        }
        let last_line = sample.cot.lines().last().unwrap_or("");
        if last_line != format!("Final Answer: {}", tf(*answer)) {
            failures.push("cot-final-mismatch".to_string());
        }
        if let Ok(expected_cot) = derive_cot(&sample.dag, values) {
            if expected_cot != sample.cot {
                failures.push("cot-body-mismatch".to_string());
            }
        }
    }
    match dag_hops(&sample.dag) {
        Ok(h) if h == sample.hops => {}
        Ok(_) => failures.push("hops-mismatch".to_string()),
        Err(e) => failures.push(format!("structure: {e}")),
    }
    if step_count(&sample.dag) != sample.steps {
        failures.push("steps-mismatch".to_string());
    }
    if sample.dag.total_nodes() != sample.total_nodes {
        failures.push("node-count-mismatch".to_string());
    }
    // every quoted entity in the text must be a DAG node name
    let names = sample.dag.all_names();
    for text in [&sample.instruction, &sample.context, &sample.cot] {
        for quoted in quoted_entities(text) {
            if !names.contains(quoted.as_str()) {
                failures.push(format!("entity-unknown: {quoted}"));
            }
        }
    }
    failures
}

fn quoted_entities(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find('\'') {
        let tail = &rest[start + 1..];
        match tail.find('\'') {
            Some(end) => {
                out.push(tail[..end].to_string());
                rest = &tail[end + 1..];
            }
            None => break,
        }
    }
    out
}

// ── Datasets ──────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRow {
    pub hops: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub rows: Vec<SplitRow>,
}

impl SplitSpec {
    /// The shipped benchmark layout: hops 3–10 with growing train sizes.
    pub fn table1() -> Self {
        let table = [
            (3, 469, 187, 220),
            (4, 662, 298, 299),
            (5, 911, 204, 276),
            (6, 1104, 189, 285),
            (7, 1349, 235, 287),
            (8, 1522, 253, 189),
            (9, 1712, 256, 229),
            (10, 1886, 227, 177),
        ];
        SplitSpec {
            rows: table
                .into_iter()
                .map(|(hops, train, val, test)| SplitRow { hops, train, val, test })
                .collect(),
        }
    }

    pub fn from_json(json: &str) -> Result<Self> {
        Ok(serde_json::from_str(json)?)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DatasetReport {
    pub files: Vec<String>,
    pub counts: BTreeMap<String, usize>,
}

/// Deterministic sample id from the generation coordinates.
pub fn sample_id(seed: u64, hops: usize, split: &str, index: usize) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in format!("{seed}:{hops}:{split}:{index}").bytes() {
        h = (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{:08x}-{:04x}-{:04x}", h >> 32, (h >> 16) & 0xffff, h & 0xffff)
}

/// Generate every split of the spec under `out_dir` as one JSONL file per
/// split. Deterministic at fixed seed; ids are unique across splits;
/// answers alternate per stratum so each hop level stays balanced.
pub fn build_dataset(
    spec: &SplitSpec,
    themes: &[&Theme],
    seed: u64,
    out_dir: &Path,
) -> Result<DatasetReport> {
    if themes.is_empty() {
        return Err(Error::config("at least one theme required".to_string()));
    }
    std::fs::create_dir_all(out_dir)?;
    let mut files = Vec::new();
    let mut counts = BTreeMap::new();
    for (split_idx, split) in ["train", "val", "test"].iter().enumerate() {
        let mut jobs = Vec::new();
        for row in &spec.rows {
            let count = [row.train, row.val, row.test][split_idx];
            for index in 0..count {
                jobs.push((row.hops, index));
            }
        }
        let lines: Vec<String> = jobs
            .par_iter()
            .map(|&(hops, index)| {
                let label = format!("natbool-h{hops}-{split}-{index}");
                let mut rng = substream(seed, &label);
                let theme = themes[(hops + index) % themes.len()];
                let desired = index % 2 == 0;
                let sample = generate_sample(
                    &sample_id(seed, hops, split, index),
                    hops,
                    theme,
                    &GenConfig::for_hops(hops),
                    &mut rng,
                    Some(desired),
                )
                .expect("sample generation");
                serde_json::to_string(&sample).expect("serialize sample")
            })
            .collect();
        let path = out_dir.join(format!("{split}.jsonl"));
        let mut file = std::io::BufWriter::new(std::fs::File::create(&path)?);
        for line in &lines {
            file.write_all(line.as_bytes())?;
            file.write_all(b"\n")?;
        }
        file.flush()?;
        counts.insert(split.to_string(), lines.len());
        files.push(path.to_string_lossy().into_owned());
    }
    Ok(DatasetReport { files, counts })
}

pub fn read_samples_jsonl(path: &Path) -> Result<Vec<NatBoolSample>> {
    let data = std::fs::read_to_string(path)?;
    data.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

// ── Corpus export for interaction metrics ─────────────────────────────────

/// Tokenize one sample structurally: leaf tokens "L{i}={T|F}" and, when
/// `with_cot` is set, derived-value tokens "N{i}={T|F}" for every ancestry
/// node except the target. Token identity is positional, so corpora built
/// on one fixed topology are comparable across samples.
pub fn metric_tokens(sample: &NatBoolSample, with_cot: bool) -> Result<(Vec<String>, u8)> {
    let (values, answer) = evaluate_dag(&sample.dag)?;
    let mut tokens: Vec<String> = sample
        .dag
        .leaves
        .iter()
        .map(|l| format!("{}={}", l.id, if l.value { "T" } else { "F" }))
        .collect();
    if with_cot {
        let ancestry = sample.dag.ancestry();
        for node in &sample.dag.nodes {
            if node.id != sample.dag.target && ancestry.contains(&node.id) {
                tokens.push(format!(
                    "{}={}",
                    node.id,
                    if values[&node.id] { "T" } else { "F" }
                ));
            }
        }
    }
    Ok((tokens, u8::from(answer)))
}

/// A corpus of n samples over one fixed topology with i.i.d. leaf values:
/// the controlled setting for the interaction-order experiments.
pub fn fixed_skeleton_corpus(
    hops: usize,
    n: usize,
    cfg: &GenConfig,
    seed: u64,
    with_cot: bool,
) -> Result<Vec<(Vec<String>, u8)>> {
    let mut rng = substream(seed, "skeleton");
    let mut dag = generate_dag(hops, &mut rng, cfg)?;
    // token ids are structural; names are irrelevant here
    for (i, leaf) in dag.leaves.iter_mut().enumerate() {
        leaf.name = format!("leaf-{i}");
    }
    for (i, node) in dag.nodes.iter_mut().enumerate() {
        node.name = format!("node-{i}");
    }
    let mut corpus = Vec::with_capacity(n);
    let mut vrng = substream(seed, "skeleton-values");
    for _ in 0..n {
        resample_leaf_values(&mut dag, &mut vrng);
        let (values, answer) = evaluate_dag(&dag)?;
        let mut tokens: Vec<String> = dag
            .leaves
            .iter()
            .map(|l| format!("{}={}", l.id, if l.value { "T" } else { "F" }))
            .collect();
        if with_cot {
            let ancestry = dag.ancestry();
            for node in &dag.nodes {
                if node.id != dag.target && ancestry.contains(&node.id) {
                    tokens.push(format!(
                        "{}={}",
                        node.id,
                        if values[&node.id] { "T" } else { "F" }
                    ));
                }
            }
        }
        corpus.push((tokens, u8::from(answer)));
    }
    Ok(corpus)
}
