//! Interaction-order metrics over tokenized corpora: pointwise mutual
//! information, interaction synergy σ, effective interaction density ρ_k
//! and interaction quality φ_k.
//!
//! Event semantics are bag-of-words co-presence: the event for a token set
//! S is "every token of S occurs in the sample"; positions are ignored.
//! PMI is the raw plug-in estimate with additive smoothing; a normalized
//! variant is available behind a flag. Estimates below the minimum joint
//! count are reported as skipped, never as zero.

use rand::Rng;
use serde::Serialize;
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::seeding::substream;

// ── Corpus representation ─────────────────────────────────────────────────

/// A tokenized corpus with per-token sample bitsets for fast co-presence
/// counting.
#[derive(Debug, Clone)]
pub struct TokenizedCorpus {
    pub vocab: Vec<String>,
    n: usize,
    /// Per-token presence bitset over samples.
    postings: Vec<Vec<u64>>,
    /// y = 1 bitset over samples.
    positives: Vec<u64>,
    /// Distinct token ids per sample.
    sample_tokens: Vec<Vec<u32>>,
    labels: Vec<bool>,
}

fn bitset_words(n: usize) -> usize {
    n.div_ceil(64)
}

fn bit_set(bits: &mut [u64], i: usize) {
    bits[i / 64] |= 1u64 << (i % 64);
}

impl TokenizedCorpus {
    pub fn from_samples(samples: &[(Vec<String>, u8)]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("empty corpus".to_string()));
        }
        let n = samples.len();
        let words = bitset_words(n);
        let mut vocab_map: BTreeMap<&str, u32> = BTreeMap::new();
        for (tokens, _) in samples {
            for t in tokens {
                let next = vocab_map.len() as u32;
                vocab_map.entry(t.as_str()).or_insert(next);
            }
        }
        let mut vocab = vec![String::new(); vocab_map.len()];
        for (tok, id) in &vocab_map {
            vocab[*id as usize] = (*tok).to_string();
        }
        let mut postings = vec![vec![0u64; words]; vocab.len()];
        let mut positives = vec![0u64; words];
        let mut sample_tokens = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for (i, (tokens, y)) in samples.iter().enumerate() {
            let mut ids: Vec<u32> = tokens.iter().map(|t| vocab_map[t.as_str()]).collect();
            ids.sort_unstable();
            ids.dedup();
            for &id in &ids {
                bit_set(&mut postings[id as usize], i);
            }
            if *y != 0 {
                bit_set(&mut positives, i);
            }
            sample_tokens.push(ids);
            labels.push(*y != 0);
        }
        Ok(TokenizedCorpus { vocab, n, postings, positives, sample_tokens, labels })
    }

    pub fn len(&self) -> usize {
        self.n
    }
    pub fn is_empty(&self) -> bool {
        self.n == 0
    }
    pub fn label(&self, i: usize) -> bool {
        self.labels[i]
    }
    pub fn tokens_of(&self, i: usize) -> &[u32] {
        &self.sample_tokens[i]
    }

    pub fn token_id(&self, token: &str) -> Option<u32> {
        self.vocab.iter().position(|t| t == token).map(|i| i as u32)
    }

    fn count_y(&self, y: bool) -> usize {
        let pos: usize = self.positives.iter().map(|w| w.count_ones() as usize).sum();
        if y {
            pos
        } else {
            self.n - pos
        }
    }

    /// (count of S-present, count of S-present ∧ label = y)
    fn subset_counts(&self, subset: &[u32], y: bool) -> (usize, usize) {
        let words = bitset_words(self.n);
        let mut joint = 0usize;
        let mut present = 0usize;
        for w in 0..words {
            let mut acc = !0u64;
            for &t in subset {
                acc &= self.postings[t as usize][w];
            }
            if w == words - 1 && self.n % 64 != 0 {
                acc &= (1u64 << (self.n % 64)) - 1;
            }
            present += acc.count_ones() as usize;
            let with_y = if y { acc & self.positives[w] } else { acc & !self.positives[w] };
            joint += with_y.count_ones() as usize;
        }
        (present, joint)
    }
}

// ── Configuration ─────────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct ProbeConfig {
    /// PMI threshold γ for the density filter.
    pub gamma: f64,
    pub max_order: usize,
    /// Candidate-subset budget at order 2; higher orders get budget/4^(k−2).
    pub base_budget: usize,
    pub min_budget: usize,
    /// Additive smoothing pseudo-count.
    pub smoothing: f64,
    /// Joint counts below this are undefined (skipped).
    pub min_joint: usize,
    /// Normalize PMI by −ln p̂(S, y).
    pub normalized: bool,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            gamma: 0.05,
            max_order: 4,
            base_budget: 200,
            min_budget: 20,
            smoothing: 0.5,
            min_joint: 5,
            normalized: false,
        }
    }
}

impl ProbeConfig {
    pub fn budget_for(&self, order: usize) -> usize {
        let shrink = 4usize.pow(order.saturating_sub(2) as u32);
        (self.base_budget / shrink).max(self.min_budget)
    }
}

// ── PMI and synergy ───────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum PmiOutcome {
    Value(f64),
    /// Joint count under the configured minimum; not evidence of zero.
    Skipped,
}

impl PmiOutcome {
    pub fn value(self) -> Option<f64> {
        match self {
            PmiOutcome::Value(v) => Some(v),
            PmiOutcome::Skipped => None,
        }
    }
}

/// Smoothed plug-in PMI of the event "subset co-present" against the label
/// value y.
pub fn pmi(corpus: &TokenizedCorpus, subset: &[u32], y: bool, cfg: &ProbeConfig) -> Result<PmiOutcome> {
    if subset.is_empty() {
        return Err(Error::invalid("empty subset".to_string()));
    }
    let mut sorted = subset.to_vec();
    sorted.sort_unstable();
    let before = sorted.len();
    sorted.dedup();
    if sorted.len() != before {
        return Err(Error::invalid("duplicate tokens in subset".to_string()));
    }
    if sorted.iter().any(|&t| t as usize >= corpus.vocab.len()) {
        return Err(Error::invalid("token id outside vocabulary".to_string()));
    }
    let (present, joint) = corpus.subset_counts(&sorted, y);
    if joint < cfg.min_joint {
        return Ok(PmiOutcome::Skipped);
    }
    let n = corpus.len() as f64;
    let a = cfg.smoothing;
    let p_joint = (joint as f64 + a) / (n + 2.0 * a);
    let p_s = (present as f64 + a) / (n + 2.0 * a);
    let p_y = (corpus.count_y(y) as f64 + a) / (n + 2.0 * a);
    let raw = (p_joint / (p_s * p_y)).ln();
    Ok(PmiOutcome::Value(if cfg.normalized { raw / -p_joint.ln() } else { raw }))
}

/// σ(S; y) = PMI(S; y) − max over (k−1)-subsets of PMI. Undefined when any
/// required PMI is skipped.
pub fn synergy(
    corpus: &TokenizedCorpus,
    subset: &[u32],
    y: bool,
    cfg: &ProbeConfig,
) -> Result<Option<f64>> {
    if subset.len() < 2 {
        return Err(Error::invalid("synergy needs |S| >= 2".to_string()));
    }
    let full = match pmi(corpus, subset, y, cfg)? {
        PmiOutcome::Value(v) => v,
        PmiOutcome::Skipped => return Ok(None),
    };
    let mut best_sub = f64::NEG_INFINITY;
    for skip in 0..subset.len() {
        let sub: Vec<u32> = subset
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != skip)
            .map(|(_, &t)| t)
            .collect();
        match pmi(corpus, &sub, y, cfg)? {
            PmiOutcome::Value(v) => best_sub = best_sub.max(v),
            PmiOutcome::Skipped => return Ok(None),
        }
    }
    Ok(Some(full - best_sub))
}

// ── Density and quality ───────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize)]
pub struct OrderReport {
    pub order: usize,
    /// Budget-scaled mean count of valid irreducible subsets per sample.
    pub rho: f64,
    /// Mean synergy over subsets passing the density filter; absent when no
    /// subset passed.
    pub phi: Option<f64>,
    pub valid_count: usize,
    pub sampled_count: usize,
}

/// Evaluate ρ_k and φ_k in one pass. Within each sample, up to
/// `cfg.budget_for(k)` distinct size-k subsets of its token set are drawn
/// uniformly without replacement; the per-sample pass count is scaled by
/// (total subsets / sampled subsets), a Horvitz-style unbiased estimate.
pub fn density_quality(
    corpus: &TokenizedCorpus,
    k: usize,
    cfg: &ProbeConfig,
    seed: u64,
) -> Result<OrderReport> {
    if k < 2 {
        return Err(Error::invalid("interaction order must be >= 2".to_string()));
    }
    let budget = cfg.budget_for(k).max(1);
    // (subset, y) -> (passes filter, synergy)
    let mut memo: BTreeMap<(Vec<u32>, bool), Option<(bool, f64)>> = BTreeMap::new();
    let mut rho_sum = 0.0;
    let mut phi_acc = 0.0;
    let mut valid = 0usize;
    let mut sampled_total = 0usize;

    for i in 0..corpus.len() {
        let tokens = corpus.tokens_of(i);
        if tokens.len() < k {
            continue;
        }
        let total = binomial(tokens.len(), k);
        let y = corpus.label(i);
        let mut rng = substream(seed, &format!("rho-sample-{i}"));
        let subsets = draw_subsets(tokens, k, budget.min(total), &mut rng);
        let mut passes = 0usize;
        for subset in &subsets {
            sampled_total += 1;
            let key = (subset.clone(), y);
            let entry = match memo.get(&key) {
                Some(e) => *e,
                None => {
                    let outcome = match synergy(corpus, subset, y, cfg)? {
                        None => None,
                        Some(sigma) => {
                            let p = pmi(corpus, subset, y, cfg)?.value().unwrap_or(f64::NEG_INFINITY);
                            Some((sigma > 0.0 && p > cfg.gamma, sigma))
                        }
                    };
                    memo.insert(key, outcome);
                    outcome
                }
            };
            if let Some((pass, sigma)) = entry {
                if pass {
                    passes += 1;
                    valid += 1;
                    phi_acc += sigma;
                }
            }
        }
        if !subsets.is_empty() {
            rho_sum += passes as f64 * total as f64 / subsets.len() as f64;
        }
    }

    Ok(OrderReport {
        order: k,
        rho: rho_sum / corpus.len() as f64,
        phi: if valid > 0 { Some(phi_acc / valid as f64) } else { None },
        valid_count: valid,
        sampled_count: sampled_total,
    })
}

fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc.min(usize::MAX as u128) as usize
}

/// Up to `count` distinct size-k subsets of `tokens`, uniform without
/// replacement. Exhaustive when the budget covers the whole space.
fn draw_subsets(tokens: &[u32], k: usize, count: usize, rng: &mut impl Rng) -> Vec<Vec<u32>> {
    let total = binomial(tokens.len(), k);
    if count >= total {
        // enumerate all combinations
        let mut out = Vec::with_capacity(total);
        let mut idx: Vec<usize> = (0..k).collect();
        loop {
            out.push(idx.iter().map(|&i| tokens[i]).collect());
            let mut pos = k;
            loop {
                if pos == 0 {
                    return out;
                }
                pos -= 1;
                if idx[pos] + (k - pos) < tokens.len() {
                    idx[pos] += 1;
                    for q in pos + 1..k {
                        idx[q] = idx[q - 1] + 1;
                    }
                    break;
                }
            }
        }
    }
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::with_capacity(count);
    // rejection sampling; budget is far below the space here
    while out.len() < count {
        let mut pick = std::collections::BTreeSet::new();
        while pick.len() < k {
            pick.insert(tokens[rng.random_range(0..tokens.len())]);
        }
        let subset: Vec<u32> = pick.into_iter().collect();
        if seen.insert(subset.clone()) {
            out.push(subset);
        }
    }
    out
}

// ── Landscape ─────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize)]
pub struct LandscapeRow {
    pub order: usize,
    pub variant: String,
    pub rho: f64,
    pub phi: Option<f64>,
    pub valid_count: usize,
    pub sampled_count: usize,
}

/// Per-order density/quality tables for paired corpus variants (typically
/// input-only against input+CoT tokenizations of the same data).
pub fn interaction_landscape(
    variants: &[(&str, &TokenizedCorpus)],
    orders: std::ops::RangeInclusive<usize>,
    cfg: &ProbeConfig,
    seed: u64,
) -> Result<Vec<LandscapeRow>> {
    let mut rows = Vec::new();
    for (name, corpus) in variants {
        for k in orders.clone() {
            let rep = density_quality(corpus, k, cfg, seed)?;
            rows.push(LandscapeRow {
                order: k,
                variant: (*name).to_string(),
                rho: rep.rho,
                phi: rep.phi,
                valid_count: rep.valid_count,
                sampled_count: rep.sampled_count,
            });
        }
    }
    Ok(rows)
}

// ── Synthetic corpora ─────────────────────────────────────────────────────

/// y = parity of the presence of the first k tokens; every token present
/// i.i.d. with probability 1/2. The canonical irreducible order-k corpus.
pub fn planted_parity_corpus(
    k: usize,
    n_tokens: usize,
    n: usize,
    seed: u64,
) -> Vec<(Vec<String>, u8)> {
    let mut rng = substream(seed, "planted-parity");
    (0..n)
        .map(|_| {
            let present: Vec<bool> = (0..n_tokens).map(|_| rng.random::<bool>()).collect();
            let y = present.iter().take(k).filter(|&&p| p).count() % 2 == 1;
            let tokens = present
                .iter()
                .enumerate()
                .filter(|(_, &p)| p)
                .map(|(i, _)| format!("t{i}"))
                .collect();
            (tokens, u8::from(y))
        })
        .collect()
}

/// y equals the presence of token t0: fully reducible to order 1.
pub fn single_token_corpus(n_tokens: usize, n: usize, seed: u64) -> Vec<(Vec<String>, u8)> {
    let mut rng = substream(seed, "single-token");
    (0..n)
        .map(|_| {
            let present: Vec<bool> = (0..n_tokens).map(|_| rng.random::<bool>()).collect();
            let tokens = present
                .iter()
                .enumerate()
                .filter(|(_, &p)| p)
                .map(|(i, _)| format!("t{i}"))
                .collect();
            (tokens, u8::from(present[0]))
        })
        .collect()
}

/// A reducible chain: hidden state flips with `flip_prob` between steps,
/// every state is emitted as a token, y is the final state.
pub fn markov_chain_corpus(
    len: usize,
    n: usize,
    flip_prob: f64,
    seed: u64,
) -> Vec<(Vec<String>, u8)> {
    let mut rng = substream(seed, "markov-chain");
    (0..n)
        .map(|_| {
            let mut state = rng.random::<bool>();
            let mut tokens = Vec::with_capacity(len);
            for i in 0..len {
                tokens.push(format!("s{}={}", i, if state { "T" } else { "F" }));
                if i + 1 < len && rng.random::<f64>() < flip_prob {
                    state = !state;
                }
            }
            (tokens, u8::from(state))
        })
        .collect()
}

// ── Exhaustive-enumeration oracle ─────────────────────────────────────────

/// An exactly specified joint distribution over ≤ 16 binary token-presence
/// variables and a binary label: the independent reference the plug-in
/// estimators are checked against. Probabilities are indexed by
/// `pattern | (y << n_tokens)`.
pub mod oracle {
    use super::*;

    #[derive(Debug, Clone)]
    pub struct ExactDistribution {
        pub n_tokens: usize,
        pub probs: Vec<f64>,
    }

    impl ExactDistribution {
        /// The planted order-k parity distribution over `n_tokens` i.i.d.
        /// presence bits.
        pub fn planted_parity(k: usize, n_tokens: usize) -> Self {
            let states = 1usize << n_tokens;
            let mut probs = vec![0.0; states << 1];
            let p_pattern = 1.0 / states as f64;
            for pattern in 0..states {
                let parity = (pattern & ((1 << k) - 1)).count_ones() % 2 == 1;
                probs[pattern | (usize::from(parity) << n_tokens)] = p_pattern;
            }
            ExactDistribution { n_tokens, probs }
        }

        fn mass(&self, keep: impl Fn(usize, bool) -> bool) -> f64 {
            let states = 1usize << self.n_tokens;
            let mut acc = 0.0;
            for idx in 0..self.probs.len() {
                let pattern = idx & (states - 1);
                let y = idx >> self.n_tokens == 1;
                if keep(pattern, y) {
                    acc += self.probs[idx];
                }
            }
            acc
        }

        /// Population PMI of "subset co-present" against label value y.
        pub fn exact_pmi(&self, subset: &[usize], y: bool) -> f64 {
            let mask: usize = subset.iter().map(|&t| 1usize << t).sum();
            let p_joint = self.mass(|p, yy| p & mask == mask && yy == y);
            let p_s = self.mass(|p, _| p & mask == mask);
            let p_y = self.mass(|_, yy| yy == y);
            (p_joint / (p_s * p_y)).ln()
        }

        /// Population synergy of the subset against label value y.
        pub fn exact_synergy(&self, subset: &[usize], y: bool) -> f64 {
            let full = self.exact_pmi(subset, y);
            let best_sub = (0..subset.len())
                .map(|skip| {
                    let sub: Vec<usize> = subset
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| *i != skip)
                        .map(|(_, &t)| t)
                        .collect();
                    self.exact_pmi(&sub, y)
                })
                .fold(f64::NEG_INFINITY, f64::max);
            full - best_sub
        }

        /// Draw n samples; tokens are named "t{i}" to match the synthetic
        /// corpus generators.
        pub fn sample(&self, n: usize, seed: u64) -> Vec<(Vec<String>, u8)> {
            let mut rng = substream(seed, "exact-dist-sample");
            let mut cdf = Vec::with_capacity(self.probs.len());
            let mut acc = 0.0;
            for p in &self.probs {
                acc += p;
                cdf.push(acc);
            }
            let states = 1usize << self.n_tokens;
            (0..n)
                .map(|_| {
                    let roll: f64 = rng.random_range(0.0..1.0);
                    let idx = cdf.partition_point(|&c| c < roll).min(self.probs.len() - 1);
                    let pattern = idx & (states - 1);
                    let y = idx >> self.n_tokens == 1;
                    let tokens = (0..self.n_tokens)
                        .filter(|t| pattern >> t & 1 == 1)
                        .map(|t| format!("t{t}"))
                        .collect();
                    (tokens, u8::from(y))
                })
                .collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(corpus: &TokenizedCorpus, names: &[&str]) -> Vec<u32> {
        names.iter().map(|n| corpus.token_id(n).unwrap()).collect()
    }

    #[test]
    fn pmi_hand_computed_counts() {
        // 8 samples, token "a" present in 4, y = presence of "a"
        let samples: Vec<(Vec<String>, u8)> = (0..8)
            .map(|i| {
                let present = i % 2 == 0;
                let tokens = if present { vec!["a".to_string()] } else { vec![] };
                (tokens, u8::from(present))
            })
            .collect();
        let corpus = TokenizedCorpus::from_samples(&samples).unwrap();
        let cfg = ProbeConfig { min_joint: 1, smoothing: 0.5, ..Default::default() };
        let a = ids(&corpus, &["a"]);
        // counts: joint = 4, present = 4, y = 4, N = 8, α = 0.5
        let p_joint: f64 = 4.5 / 9.0;
        let p_s: f64 = 4.5 / 9.0;
        let p_y: f64 = 4.5 / 9.0;
        let expect = (p_joint / (p_s * p_y)).ln();
        match pmi(&corpus, &a, true, &cfg).unwrap() {
            PmiOutcome::Value(v) => assert!((v - expect).abs() < 1e-12),
            PmiOutcome::Skipped => panic!("should be defined"),
        }
    }

    #[test]
    fn pmi_perfect_correlation_approaches_ln2() {
        let samples = single_token_corpus(4, 50_000, 3);
        let corpus = TokenizedCorpus::from_samples(&samples).unwrap();
        let cfg = ProbeConfig::default();
        let t0 = ids(&corpus, &["t0"]);
        let v = pmi(&corpus, &t0, true, &cfg).unwrap().value().unwrap();
        assert!((v - (2.0f64).ln()).abs() < 0.02, "got {v}");
        // independent token: PMI near zero
        let t1 = ids(&corpus, &["t1"]);
        let v = pmi(&corpus, &t1, true, &cfg).unwrap().value().unwrap();
        assert!(v.abs() < 0.02, "got {v}");
    }

    #[test]
    fn undefined_pmi_is_skipped_not_zero() {
        let samples: Vec<(Vec<String>, u8)> = (0..20)
            .map(|i| (vec![format!("common")], u8::from(i % 2 == 0)))
            .collect();
        let mut samples = samples;
        samples.push((vec!["rare".to_string()], 1));
        let corpus = TokenizedCorpus::from_samples(&samples).unwrap();
        let cfg = ProbeConfig::default(); // min_joint = 5
        let rare = ids(&corpus, &["rare"]);
        assert_eq!(pmi(&corpus, &rare, true, &cfg).unwrap(), PmiOutcome::Skipped);
    }

    #[test]
    fn xor_pair_has_positive_synergy_and_flat_singletons() {
        let samples = planted_parity_corpus(2, 6, 60_000, 5);
        let corpus = TokenizedCorpus::from_samples(&samples).unwrap();
        let cfg = ProbeConfig::default();
        let pair = ids(&corpus, &["t0", "t1"]);
        // both planted tokens present -> presence count 2 (even) -> y = 0
        let sigma = synergy(&corpus, &pair, false, &cfg).unwrap().unwrap();
        assert!(sigma > 0.2, "sigma {sigma}");
        for single in ["t0", "t1"] {
            let v = pmi(&corpus, &ids(&corpus, &[single]), true, &cfg).unwrap().value().unwrap();
            assert!(v.abs() < 0.03, "{single}: {v}");
        }
    }

    #[test]
    fn reducible_label_gives_nonpositive_synergy() {
        let samples = single_token_corpus(6, 60_000, 7);
        let corpus = TokenizedCorpus::from_samples(&samples).unwrap();
        let cfg = ProbeConfig::default();
        for other in ["t1", "t2", "t3"] {
            let pair = ids(&corpus, &["t0", other]);
            let sigma = synergy(&corpus, &pair, true, &cfg).unwrap().unwrap();
            assert!(sigma <= 0.02, "{other}: sigma {sigma}");
        }
    }

    #[test]
    fn duplicate_tokens_rejected() {
        let samples = single_token_corpus(3, 100, 1);
        let corpus = TokenizedCorpus::from_samples(&samples).unwrap();
        let t0 = corpus.token_id("t0").unwrap();
        assert!(synergy(&corpus, &[t0, t0], true, &ProbeConfig::default()).is_err());
    }

    #[test]
    fn plugin_matches_exact_oracle() {
        let dist = oracle::ExactDistribution::planted_parity(2, 6);
        let samples = dist.sample(100_000, 11);
        let corpus = TokenizedCorpus::from_samples(&samples).unwrap();
        let cfg = ProbeConfig::default();
        let pair_ids = ids(&corpus, &["t0", "t1"]);
        let exact = dist.exact_pmi(&[0, 1], false);
        let plug = pmi(&corpus, &pair_ids, false, &cfg).unwrap().value().unwrap();
        assert!((plug - exact).abs() < 0.02, "plug {plug} exact {exact}");
        let exact_s = dist.exact_synergy(&[0, 1], false);
        let plug_s = synergy(&corpus, &pair_ids, false, &cfg).unwrap().unwrap();
        assert!((plug_s - exact_s).abs() < 0.02, "plug {plug_s} exact {exact_s}");
    }

    #[test]
    fn density_exhaustive_when_budget_covers_space() {
        let samples = planted_parity_corpus(2, 5, 20_000, 13);
        let corpus = TokenizedCorpus::from_samples(&samples).unwrap();
        let cfg = ProbeConfig { base_budget: 1000, ..Default::default() };
        let rep = density_quality(&corpus, 2, &cfg, 0).unwrap();
        // the planted pair passes in samples containing it; with 5 tokens at
        // p=1/2 presence the pair co-occurs in 1/4 of samples
        assert!(rep.rho > 0.0);
        assert!(rep.phi.is_some());
    }

    #[test]
    fn density_budget_unbiasedness() {
        let samples = planted_parity_corpus(2, 8, 8_000, 17);
        let corpus = TokenizedCorpus::from_samples(&samples).unwrap();
        let exhaustive = ProbeConfig { base_budget: 10_000, ..Default::default() };
        let full = density_quality(&corpus, 2, &exhaustive, 0).unwrap();
        let tight = ProbeConfig { base_budget: 6, min_budget: 6, ..Default::default() };
        let mut acc = 0.0;
        let reps = 40;
        for s in 0..reps {
            acc += density_quality(&corpus, 2, &tight, s as u64).unwrap().rho;
        }
        let mean = acc / reps as f64;
        let rel = (mean - full.rho).abs() / full.rho.max(1e-9);
        assert!(rel < 0.15, "budgeted mean {mean} vs exhaustive {full:?}");
    }

    #[test]
    fn landscape_rows_cover_variants_and_orders() {
        let a = TokenizedCorpus::from_samples(&planted_parity_corpus(2, 6, 5_000, 19)).unwrap();
        let b = TokenizedCorpus::from_samples(&planted_parity_corpus(3, 6, 5_000, 23)).unwrap();
        let rows =
            interaction_landscape(&[("a", &a), ("b", &b)], 2..=3, &ProbeConfig::default(), 0)
                .unwrap();
        assert_eq!(rows.len(), 4);
        assert!(rows.iter().any(|r| r.variant == "a" && r.order == 2));
    }
}
