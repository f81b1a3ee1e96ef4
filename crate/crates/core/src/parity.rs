//! k-parity instances, their binary-tree decomposition into 2-parity steps,
//! and the explicit/implicit token-sequence encodings.
//!
//! Index conventions follow the task layout: input bits occupy indices
//! `1..=d`, intermediate step tokens are numbered consecutively from `d+1`
//! in layer order, and the last step token (`d+k-1`) is the root / answer.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::error::{Error, Result};

/// A single k-parity instance over d ±1 bits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParityInstance {
    /// Input bits, each +1 or -1; `bits[0]` is x_1.
    pub bits: Vec<i8>,
    /// Ascending 1-based support indices p ⊆ [d].
    pub support: Vec<usize>,
    /// Product of the bits at the support indices.
    pub label: i8,
}

impl ParityInstance {
    pub fn d(&self) -> usize {
        self.bits.len()
    }
    pub fn k(&self) -> usize {
        self.support.len()
    }
    pub fn bit(&self, index: usize) -> i8 {
        self.bits[index - 1]
    }

    /// Validate the instance invariants (distinct in-range support, label
    /// equal to the support product).
    pub fn validate(&self) -> Result<()> {
        check_support(self.d(), &self.support)?;
        let prod: i8 = self.support.iter().map(|&j| self.bits[j - 1]).product();
        if prod != self.label {
            return Err(Error::structural(format!(
                "label {} does not match support product {}",
                self.label, prod
            )));
        }
        Ok(())
    }
}

fn check_support(d: usize, support: &[usize]) -> Result<()> {
    if support.is_empty() || support.len() > d {
        return Err(Error::invalid(format!(
            "support size {} must be in 1..={}",
            support.len(),
            d
        )));
    }
    let mut seen = vec![false; d + 1];
    for &j in support {
        if j == 0 || j > d {
            return Err(Error::invalid(format!("support index {j} outside [1, {d}]")));
        }
        if seen[j] {
            return Err(Error::invalid(format!("duplicate support index {j}")));
        }
        seen[j] = true;
    }
    Ok(())
}

/// Draw a fresh instance: bits i.i.d. uniform on {±1}, label computed from
/// the given support.
pub fn sample_instance(d: usize, support: &[usize], rng: &mut impl Rng) -> Result<ParityInstance> {
    check_support(d, support)?;
    let bits: Vec<i8> = (0..d).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect();
    let mut support = support.to_vec();
    support.sort_unstable();
    let label = support.iter().map(|&j| bits[j - 1]).product();
    Ok(ParityInstance { bits, support, label })
}

/// One intermediate 2-parity node: token `index` multiplies tokens `left`
/// and `right`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceNode {
    pub index: usize,
    pub left: usize,
    pub right: usize,
    pub value: i8,
}

/// The binary-tree decomposition of a k-parity into 2-parity steps.
///
/// `layers[s-1]` holds the *new* nodes created at step s. A layer with an
/// odd frontier promotes its leftover element unchanged to the next layer,
/// so the active frontier after step s has ⌈k/2^s⌉ elements while the new
/// node count over all layers is exactly k−1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoTTrace {
    pub layers: Vec<Vec<TraceNode>>,
    pub height: usize,
}

impl CoTTrace {
    /// Value of the root node (for k=1 traces, the instance label itself is
    /// the root and `layers` is empty).
    pub fn root_value(&self) -> Option<i8> {
        self.layers.last().and_then(|l| l.last()).map(|n| n.value)
    }

    /// All new nodes in token-index order.
    pub fn nodes(&self) -> impl Iterator<Item = &TraceNode> {
        self.layers.iter().flatten()
    }

    pub fn node_count(&self) -> usize {
        self.layers.iter().map(|l| l.len()).sum()
    }

    /// τ_s: cumulative new-node count of layers 1..=s. Strictly increasing
    /// in s with τ_H = k−1.
    pub fn tau(&self, s: usize) -> usize {
        self.layers.iter().take(s).map(|l| l.len()).sum()
    }
}

/// Build the step trace by pairing the support left-to-right in ascending
/// index order; odd leftovers are promoted unchanged.
pub fn build_cot_trace(instance: &ParityInstance) -> Result<CoTTrace> {
    instance.validate()?;
    let d = instance.d();
    if instance.k() == 1 {
        return Ok(CoTTrace { layers: Vec::new(), height: 0 });
    }
    // Frontier of (token index, value); starts as the support bits.
    let mut frontier: Vec<(usize, i8)> = instance
        .support
        .iter()
        .map(|&j| (j, instance.bit(j)))
        .collect();
    let mut next_index = d + 1;
    let mut layers = Vec::new();
    while frontier.len() > 1 {
        let mut layer = Vec::new();
        let mut next_frontier = Vec::new();
        let mut it = frontier.chunks_exact(2);
        for pair in &mut it {
            let (u, xu) = pair[0];
            let (v, xv) = pair[1];
            let node = TraceNode { index: next_index, left: u, right: v, value: xu * xv };
            next_frontier.push((node.index, node.value));
            layer.push(node);
            next_index += 1;
        }
        if let [odd] = it.remainder() {
            next_frontier.push(*odd);
        }
        layers.push(layer);
        frontier = next_frontier;
    }
    let height = layers.len();
    debug_assert_eq!(height, (instance.k() as f64).log2().ceil() as usize);
    Ok(CoTTrace { layers, height })
}

/// One entry of a token-sequence encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Token {
    /// A problem input bit.
    InputBit(i8),
    /// An explicit intermediate step token (carries its tree index so the
    /// original token identity survives position shifts).
    ExplicitStep { index: usize, value: i8 },
    /// The single latent placeholder replacing the concealed layers up to
    /// `step`.
    LatentSlot { step: usize },
    BotMarker,
    EotMarker,
}

/// A model-ready token sequence with its supervision window.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceEncoding {
    pub tokens: Vec<Token>,
    /// Number of explicit step tokens actually replaced by the latent slot.
    /// Zero for explicit encodings. Note the root token is never concealed,
    /// so at s = H this is τ_H − 1.
    pub tau: usize,
    /// Inclusive 1-based position range carrying loss, if any.
    pub supervised: Option<(usize, usize)>,
}

impl SequenceEncoding {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }
    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn supervised_positions(&self) -> impl Iterator<Item = usize> {
        let range = self.supervised;
        (1..=self.tokens.len()).filter(move |p| match range {
            Some((lo, hi)) => *p >= lo && *p <= hi,
            None => false,
        })
    }

    /// 1-based position of the latent slot, if present.
    pub fn latent_slot(&self) -> Option<usize> {
        self.tokens
            .iter()
            .position(|t| matches!(t, Token::LatentSlot { .. }))
            .map(|i| i + 1)
    }
}

/// Explicit encoding: inputs x_1..x_d, then every step token in index order.
/// Supervision covers all step tokens.
pub fn encode_explicit(instance: &ParityInstance, trace: &CoTTrace) -> SequenceEncoding {
    let d = instance.d();
    let mut tokens: Vec<Token> = instance.bits.iter().map(|&b| Token::InputBit(b)).collect();
    for node in trace.nodes() {
        tokens.push(Token::ExplicitStep { index: node.index, value: node.value });
    }
    let n_steps = trace.node_count();
    let supervised = if n_steps == 0 { None } else { Some((d + 1, d + n_steps)) };
    SequenceEncoding { tokens, tau: 0, supervised }
}

/// Implicit encoding at step `s`: the step tokens of layers 1..=s (the root
/// always excepted) collapse into one latent slot bracketed by the
/// begin/end-of-thought markers. Remaining explicit steps, including the
/// root, stay supervised.
pub fn encode_implicit(
    instance: &ParityInstance,
    trace: &CoTTrace,
    s: usize,
) -> Result<SequenceEncoding> {
    if s < 1 || s > trace.height {
        return Err(Error::invalid(format!(
            "concealed step {s} outside [1, {}]",
            trace.height
        )));
    }
    let d = instance.d();
    let root_index = d + trace.node_count();
    let mut tokens: Vec<Token> = instance.bits.iter().map(|&b| Token::InputBit(b)).collect();
    tokens.push(Token::BotMarker);
    tokens.push(Token::LatentSlot { step: s });
    tokens.push(Token::EotMarker);
    let mut concealed = 0usize;
    let mut explicit = Vec::new();
    for node in trace.nodes() {
        let layer_of_node = trace
            .layers
            .iter()
            .position(|l| l.iter().any(|n| n.index == node.index))
            .unwrap()
            + 1;
        if layer_of_node <= s && node.index != root_index {
            concealed += 1;
        } else {
            explicit.push(Token::ExplicitStep { index: node.index, value: node.value });
        }
    }
    let first_supervised = tokens.len() + 1;
    tokens.extend(explicit.iter().copied());
    let supervised = if explicit.is_empty() { None } else { Some((first_supervised, tokens.len())) };
    Ok(SequenceEncoding { tokens, tau: concealed, supervised })
}

/// Reinsert the concealed step tokens in place of the latent block. Used to
/// check that concealment is lossless.
pub fn reinflate(encoding: &SequenceEncoding, trace: &CoTTrace, d: usize) -> SequenceEncoding {
    let mut tokens = Vec::new();
    let root_index = d + trace.node_count();
    let step = match encoding.tokens.iter().find_map(|t| match t {
        Token::LatentSlot { step } => Some(*step),
        _ => None,
    }) {
        Some(s) => s,
        None => return encoding.clone(),
    };
    for t in &encoding.tokens {
        match t {
            Token::BotMarker | Token::EotMarker => {}
            Token::LatentSlot { .. } => {
                for (li, layer) in trace.layers.iter().enumerate() {
                    if li + 1 > step {
                        break;
                    }
                    for node in layer {
                        if node.index != root_index {
                            tokens.push(Token::ExplicitStep { index: node.index, value: node.value });
                        }
                    }
                }
            }
            other => tokens.push(*other),
        }
    }
    // Restore index order among the step tokens (the root may have been
    // emitted before late-layer concealed nodes when s = H).
    let step_start = d;
    tokens[step_start..].sort_by_key(|t| match t {
        Token::ExplicitStep { index, .. } => *index,
        _ => 0,
    });
    let n_steps = tokens.len() - d;
    let supervised = if n_steps == 0 { None } else { Some((d + 1, d + n_steps)) };
    SequenceEncoding { tokens, tau: 0, supervised }
}

/// JSONL record for instance export; field names are stable.
#[derive(Debug, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub bits: Vec<i8>,
    pub support: Vec<usize>,
    pub label: i8,
    pub trace: Vec<Vec<TraceNode>>,
}

/// Write instances (with their traces) as one JSON object per line.
pub fn write_instances_jsonl<W: Write>(
    out: &mut W,
    instances: &[(ParityInstance, CoTTrace)],
) -> Result<()> {
    for (inst, trace) in instances {
        let rec = InstanceRecord {
            bits: inst.bits.clone(),
            support: inst.support.clone(),
            label: inst.label,
            trace: trace.layers.clone(),
        };
        serde_json::to_writer(&mut *out, &rec)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::substream;

    fn inst(bits: &[i8], support: &[usize]) -> ParityInstance {
        let label = support.iter().map(|&j| bits[j - 1]).product();
        ParityInstance { bits: bits.to_vec(), support: support.to_vec(), label }
    }

    #[test]
    fn sample_label_is_support_product() {
        // d=4, support={2,4}, bits=(+1,-1,-1,+1) -> label -1
        let i = inst(&[1, -1, -1, 1], &[2, 4]);
        assert_eq!(i.label, -1);
        i.validate().unwrap();

        // singleton parity: label equals the single supported bit
        let i = inst(&[1, 1, -1, 1, 1, 1, 1, 1], &[3]);
        assert_eq!(i.label, -1);
    }

    #[test]
    fn sample_instance_respects_support_even_layout() {
        // the 8-even-positions layout on d=16
        let support: Vec<usize> = (1..=8).map(|i| 2 * i).collect();
        let mut rng = substream(3, "parity-test");
        let i = sample_instance(16, &support, &mut rng).unwrap();
        let expect: i8 = support.iter().map(|&j| i.bits[j - 1]).product();
        assert_eq!(i.label, expect);
        i.validate().unwrap();
    }

    #[test]
    fn invalid_supports_rejected() {
        let mut rng = substream(0, "parity-test");
        assert!(sample_instance(4, &[1, 1], &mut rng).is_err());
        assert!(sample_instance(4, &[0], &mut rng).is_err());
        assert!(sample_instance(4, &[5], &mut rng).is_err());
        assert!(sample_instance(4, &[], &mut rng).is_err());
    }

    #[test]
    fn trace_k8_matches_figure_layout() {
        let support: Vec<usize> = (1..=8).map(|i| 2 * i).collect();
        let mut rng = substream(11, "parity-test");
        let i = sample_instance(16, &support, &mut rng).unwrap();
        let t = build_cot_trace(&i).unwrap();
        assert_eq!(t.height, 3);
        let sizes: Vec<usize> = t.layers.iter().map(|l| l.len()).collect();
        assert_eq!(sizes, vec![4, 2, 1]);
        let indices: Vec<usize> = t.nodes().map(|n| n.index).collect();
        assert_eq!(indices, (17..=23).collect::<Vec<_>>());
        assert_eq!(t.root_value(), Some(i.label));
        // layer-1 tokens x17..x20 pair adjacent support bits
        assert_eq!(t.layers[0][0].left, 2);
        assert_eq!(t.layers[0][0].right, 4);
    }

    #[test]
    fn trace_k2_single_node() {
        let i = inst(&[1, 1, -1, -1], &[1, 3]);
        let t = build_cot_trace(&i).unwrap();
        assert_eq!(t.height, 1);
        assert_eq!(t.node_count(), 1);
        let n = t.layers[0][0];
        assert_eq!((n.index, n.left, n.right), (5, 1, 3));
        assert_eq!(n.value, -1);
    }

    #[test]
    fn trace_k5_promotion() {
        // hand enumeration: layer sizes (new nodes) 2,1,1; frontier 3,2,1
        let i = inst(&[1; 8], &[1, 2, 3, 4, 5]);
        let t = build_cot_trace(&i).unwrap();
        assert_eq!(t.height, 3);
        let sizes: Vec<usize> = t.layers.iter().map(|l| l.len()).collect();
        assert_eq!(sizes, vec![2, 1, 1]);
        assert_eq!(t.node_count(), 4);
        // frontier after step s has ceil(k / 2^s) elements
        let mut frontier = 5usize;
        for layer in &t.layers {
            frontier = frontier - 2 * layer.len() + layer.len();
        }
        assert_eq!(frontier, 1);
        // promoted leaf x5 pairs with the layer-1 product at layer 2
        assert_eq!(t.layers[1][0].left, 9);
        assert_eq!(t.layers[1][0].right, 10);
        assert_eq!(t.layers[2][0].right, 5);
    }

    #[test]
    fn trace_k1_empty() {
        let i = inst(&[1, -1], &[2]);
        let t = build_cot_trace(&i).unwrap();
        assert_eq!(t.height, 0);
        assert_eq!(t.node_count(), 0);
        assert_eq!(t.root_value(), None);
    }

    #[test]
    fn explicit_encoding_counts() {
        let support: Vec<usize> = (1..=8).map(|i| 2 * i).collect();
        let mut rng = substream(5, "parity-test");
        let i = sample_instance(16, &support, &mut rng).unwrap();
        let t = build_cot_trace(&i).unwrap();
        let e = encode_explicit(&i, &t);
        let inputs = e.tokens.iter().filter(|t| matches!(t, Token::InputBit(_))).count();
        let steps = e.tokens.iter().filter(|t| matches!(t, Token::ExplicitStep { .. })).count();
        assert_eq!((inputs, steps), (16, 7));
        assert_eq!(e.tau, 0);
        assert_eq!(e.supervised, Some((17, 23)));
    }

    #[test]
    fn explicit_encoding_k1_empty_supervision() {
        let i = inst(&[1; 16], &[7]);
        let t = build_cot_trace(&i).unwrap();
        let e = encode_explicit(&i, &t);
        assert_eq!(e.tokens.len(), 16);
        assert_eq!(e.supervised, None);
    }

    #[test]
    fn explicit_step_values_direct_product() {
        let i = inst(&[1, 1, -1, -1], &[1, 3]);
        let t = build_cot_trace(&i).unwrap();
        let e = encode_explicit(&i, &t);
        let vals: Vec<i8> = e
            .tokens
            .iter()
            .filter_map(|t| match t {
                Token::ExplicitStep { value, .. } => Some(*value),
                _ => None,
            })
            .collect();
        assert_eq!(vals, vec![-1]);
    }

    #[test]
    fn implicit_tau_and_supervision() {
        let support: Vec<usize> = (1..=8).map(|i| 2 * i).collect();
        let mut rng = substream(6, "parity-test");
        let i = sample_instance(16, &support, &mut rng).unwrap();
        let t = build_cot_trace(&i).unwrap();

        let e1 = encode_implicit(&i, &t, 1).unwrap();
        assert_eq!(e1.tau, 4); // conceals x17..x20
        // inputs + bot/slot/eot + x21,x22,x23
        assert_eq!(e1.tokens.len(), 16 + 3 + 3);
        assert_eq!(e1.supervised, Some((20, 22)));

        let e2 = encode_implicit(&i, &t, 2).unwrap();
        assert_eq!(e2.tau, 6);

        // s = H conceals everything but the root
        let e3 = encode_implicit(&i, &t, 3).unwrap();
        assert_eq!(e3.tau, 6);
        let steps: Vec<usize> = e3
            .tokens
            .iter()
            .filter_map(|t| match t {
                Token::ExplicitStep { index, .. } => Some(*index),
                _ => None,
            })
            .collect();
        assert_eq!(steps, vec![23]);
        assert_eq!(e3.supervised, Some((20, 20)));

        assert!(encode_implicit(&i, &t, 0).is_err());
        assert!(encode_implicit(&i, &t, 4).is_err());
    }

    #[test]
    fn tau_function_is_monotone_and_complete() {
        let support: Vec<usize> = (1..=8).map(|i| 2 * i).collect();
        let mut rng = substream(8, "parity-test");
        let i = sample_instance(16, &support, &mut rng).unwrap();
        let t = build_cot_trace(&i).unwrap();
        let taus: Vec<usize> = (1..=t.height).map(|s| t.tau(s)).collect();
        assert_eq!(taus, vec![4, 6, 7]);
        assert!(taus.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(*taus.last().unwrap(), i.k() - 1);
    }

    #[test]
    fn reinflation_reproduces_explicit() {
        let mut rng = substream(9, "parity-test");
        for &(d, k) in &[(16usize, 8usize), (8, 4), (12, 5), (6, 2)] {
            let support: Vec<usize> = (1..=k).collect();
            let i = sample_instance(d, &support, &mut rng).unwrap();
            let t = build_cot_trace(&i).unwrap();
            let explicit = encode_explicit(&i, &t);
            for s in 1..=t.height {
                let imp = encode_implicit(&i, &t, s).unwrap();
                let back = reinflate(&imp, &t, d);
                assert_eq!(back.tokens, explicit.tokens, "d={d} k={k} s={s}");
            }
        }
    }

    #[test]
    fn jsonl_roundtrip() {
        let mut rng = substream(10, "parity-test");
        let i = sample_instance(6, &[1, 4], &mut rng).unwrap();
        let t = build_cot_trace(&i).unwrap();
        let mut buf = Vec::new();
        write_instances_jsonl(&mut buf, &[(i.clone(), t.clone())]).unwrap();
        let rec: InstanceRecord = serde_json::from_slice(buf.trim_ascii_end()).unwrap();
        assert_eq!(rec.bits, i.bits);
        assert_eq!(rec.trace, t.layers);
    }
}
