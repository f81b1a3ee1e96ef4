//! SGD harness for the CoT training regimes.
//!
//! Five objectives share one loop: explicit step supervision, the two
//! implicit baselines (static learnable latent, dynamic hidden-state
//! latent), and the two alignment-augmented variants (classifier head on
//! the post-latent hidden state, cosine pull of the latent toward the
//! explicit step representation). Trainable parameters are the attention
//! logits, the static latent vector and the alignment head; embeddings and
//! the FFN stay frozen.
//!
//! All randomness is split by component (`init`, `train-batches`,
//! `eval-batch`, `latent-init`, `head-init`, `spot-checks`), so runs are
//! reproducible and the λ = 0 degeneracy (alignment off ≡ static-latent
//! baseline, bit for bit) holds by construction.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::{accumulate_task_grad, fd_grad_latent, fd_grad_w};
use crate::model::{
    batch_loss, forward_into, sequence_loss, sigmoid, EmbeddingBasis, EncodedSeq, FfnPoly,
    ForwardMode, ForwardState, LatentToken, ModelParams,
};
use crate::parity::{build_cot_trace, encode_explicit, encode_implicit, sample_instance, CoTTrace, ParityInstance};
use crate::seeding::substream;

// ── Configuration ─────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Explicit,
    ImpBase1,
    ImpBase2,
    AlicotClassifier,
    AlicotCosine,
}

impl Mode {
    pub fn uses_static_latent(self) -> bool {
        matches!(self, Mode::ImpBase1 | Mode::AlicotClassifier | Mode::AlicotCosine)
    }
    pub fn label(self) -> &'static str {
        match self {
            Mode::Explicit => "explicit",
            Mode::ImpBase1 => "impbase1",
            Mode::ImpBase2 => "impbase2",
            Mode::AlicotClassifier => "alicot-classifier",
            Mode::AlicotCosine => "alicot-cosine",
        }
    }
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "explicit" => Ok(Mode::Explicit),
            "impbase1" => Ok(Mode::ImpBase1),
            "impbase2" => Ok(Mode::ImpBase2),
            "alicot-classifier" | "alicot" => Ok(Mode::AlicotClassifier),
            "alicot-cosine" => Ok(Mode::AlicotCosine),
            other => Err(Error::invalid(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FfnPreset {
    PaperDefault,
    ParityExact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: Mode,
    pub d: usize,
    pub k: usize,
    /// Logit-table capacity; defaults to the longest encoding in use.
    pub m: Option<usize>,
    /// Concealed step s; 0 trains on explicit encodings in every mode.
    pub concealed: usize,
    pub lr_logits: f64,
    pub lr_latent: f64,
    pub lr_head: f64,
    pub batch: usize,
    pub max_steps: u64,
    pub eval_interval: u64,
    pub eval_batch: usize,
    /// Alignment weight λ; ignored outside the alignment modes.
    pub lambda: f64,
    pub seed: u64,
    pub d_model: usize,
    pub ffn: FfnPreset,
    pub ffn_c: f64,
    /// Σu of the nonnegative output base (controls the logit scale).
    pub u_sum: f64,

    /// Use a factored alignment head (τ binary heads) instead of the joint
    /// 2^τ-way head.
    pub factored_head: bool,
    /// Stop early when neither eval accuracy nor train loss improved within
    /// this many steps.
    pub plateau_window: Option<u64>,
    /// Validate analytic gradients against finite differences at 10
    /// pseudo-random steps of the run.
    pub spot_check: bool,
}

impl TrainConfig {
    pub fn new(mode: Mode, d: usize, k: usize, concealed: usize, seed: u64) -> Self {
        TrainConfig {
            mode,
            d,
            k,
            m: None,
            concealed,
            lr_logits: 0.5,
            lr_latent: 0.05,
            lr_head: 0.05,
            batch: 32,
            max_steps: 500_000,
            eval_interval: 250,
            eval_batch: 512,
            lambda: 0.5,
            seed,
            d_model: 64,
            ffn: FfnPreset::ParityExact,
            ffn_c: -1.0,
            u_sum: 4.0,
            factored_head: true,
            plateau_window: None,
            spot_check: false,
        }
    }

    pub fn ffn_poly(&self) -> FfnPoly {
        match self.ffn {
            FfnPreset::PaperDefault => FfnPoly::paper_default(self.ffn_c),
            FfnPreset::ParityExact => FfnPoly::parity_exact(self.ffn_c),
        }
    }

    /// Evenly spaced support: k=8 on d=16 selects the even positions.
    pub fn support(&self) -> Vec<usize> {
        (1..=self.k).map(|i| (i * self.d).div_ceil(self.k)).collect()
    }

    fn effective_concealed(&self) -> usize {
        if self.mode == Mode::Explicit {
            0
        } else {
            self.concealed
        }
    }
}

// ── Alignment head ────────────────────────────────────────────────────────

/// Linear readout from the post-latent hidden state onto the concealed
/// step values: either τ independent binary heads or one 2^τ-way softmax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignHead {
    pub tau: usize,
    pub d_model: usize,
    pub factored: bool,
    /// Row-major weights: τ × d_model (factored) or 2^τ × d_model (joint).
    pub weights: Vec<f64>,
}

impl AlignHead {
    pub fn zeros(tau: usize, d_model: usize, factored: bool) -> Result<Self> {
        if !factored && tau > 8 {
            return Err(Error::config(format!(
                "joint alignment head limited to tau <= 8, got {tau}"
            )));
        }
        let rows = if factored { tau } else { 1usize << tau };
        Ok(AlignHead { tau, d_model, factored, weights: vec![0.0; rows * d_model] })
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.weights[i * self.d_model..(i + 1) * self.d_model]
    }

    /// −Σ_i log P(z_i | g(h)); also accumulates ∂/∂h and ∂/∂weights when
    /// buffers are supplied.
    pub fn loss_and_grads(
        &self,
        h: &[f64],
        targets: &[i8],
        mut grad_h: Option<&mut [f64]>,
        mut grad_w: Option<&mut [f64]>,
    ) -> Result<f64> {
        if targets.len() != self.tau {
            return Err(Error::config(format!(
                "alignment head expects {} targets, got {}",
                self.tau,
                targets.len()
            )));
        }
        if self.factored {
            let mut loss = 0.0;
            for (i, &z) in targets.iter().enumerate() {
                let w = self.row(i);
                let a: f64 = w.iter().zip(h).map(|(wi, hi)| wi * hi).sum();
                let p_plus = sigmoid(2.0 * a);
                let p_t = if z > 0 { p_plus } else { 1.0 - p_plus };
                loss += -(p_t.max(crate::model::EPS_FLOOR)).ln();
                let da = 2.0 * (p_plus - f64::from(u8::from(z > 0)));
                if let Some(gh) = grad_h.as_deref_mut() {
                    for (g, wi) in gh.iter_mut().zip(w) {
                        *g += da * wi;
                    }
                }
                if let Some(gw) = grad_w.as_deref_mut() {
                    for (c, hi) in h.iter().enumerate() {
                        gw[i * self.d_model + c] += da * hi;
                    }
                }
            }
            Ok(loss)
        } else {
            let rows = 1usize << self.tau;
            let class: usize = targets
                .iter()
                .enumerate()
                .map(|(i, &z)| usize::from(z > 0) << i)
                .sum();
            let logits: Vec<f64> = (0..rows)
                .map(|r| self.row(r).iter().zip(h).map(|(wi, hi)| wi * hi).sum())
                .collect();
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let z_sum: f64 = exps.iter().sum();
            let p_t = exps[class] / z_sum;
            let loss = -(p_t.max(crate::model::EPS_FLOOR)).ln();
            for r in 0..rows {
                let d_logit = exps[r] / z_sum - f64::from(u8::from(r == class));
                if let Some(gh) = grad_h.as_deref_mut() {
                    for (g, wi) in gh.iter_mut().zip(self.row(r)) {
                        *g += d_logit * wi;
                    }
                }
                if let Some(gw) = grad_w.as_deref_mut() {
                    for (c, hi) in h.iter().enumerate() {
                        gw[r * self.d_model + c] += d_logit * hi;
                    }
                }
            }
            Ok(loss)
        }
    }
}

// ── Loss surfaces (public operations) ─────────────────────────────────────

/// Mean explicit-CoT loss: per-step CE over every intermediate token,
/// teacher-forced.
pub fn loss_explicit(params: &ModelParams, batch: &[EncodedSeq]) -> Result<f64> {
    batch_loss(params, batch)
}

/// Mean implicit-CoT loss: CE over the surviving explicit steps (the root
/// always supervised), conditioned on inputs, the latent token and the
/// later explicit history.
pub fn loss_implicit(params: &ModelParams, batch: &[EncodedSeq]) -> Result<f64> {
    batch_loss(params, batch)
}

/// Classifier alignment term: mean −Σ_i log P(z_i | g(h_latent)) over
/// (hidden state, concealed values) pairs.
pub fn loss_align_classifier(
    head: &AlignHead,
    hidden_and_targets: &[(Vec<f64>, Vec<i8>)],
) -> Result<f64> {
    let mut total = 0.0;
    for (h, z) in hidden_and_targets {
        total += head.loss_and_grads(h, z, None, None)?;
    }
    Ok(total / hidden_and_targets.len().max(1) as f64)
}

/// Cosine alignment term 1 − cos(c_s, t_s) ∈ [0, 2]; gradient flows only
/// into c_s (t_s is stop-gradient). Zero-norm vectors are defined as loss 1
/// (the orthogonal convention) and flagged.
pub fn loss_align_cosine(c_s: &[f64], t_s: &[f64]) -> (f64, bool) {
    let nc: f64 = c_s.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nt: f64 = t_s.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nc == 0.0 || nt == 0.0 {
        return (1.0, true);
    }
    let dot: f64 = c_s.iter().zip(t_s).map(|(a, b)| a * b).sum();
    (1.0 - dot / (nc * nt), false)
}

/// ∂/∂c_s of `loss_align_cosine`, accumulated into `grad`.
fn cosine_grad_into(c_s: &[f64], t_s: &[f64], scale: f64, grad: &mut [f64]) {
    let nc: f64 = c_s.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nt: f64 = t_s.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nc == 0.0 || nt == 0.0 {
        return;
    }
    let dot: f64 = c_s.iter().zip(t_s).map(|(a, b)| a * b).sum();
    for i in 0..c_s.len() {
        let d_cos = t_s[i] / (nc * nt) - dot * c_s[i] / (nc * nc * nc * nt);
        grad[i] += scale * (-d_cos);
    }
}

// ── Training state and records ────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    Converged,
    StepCap,
    Plateau,
    Diverged,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: u64,
    pub train_loss: f64,
    pub align_loss: f64,
    pub eval_acc: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceRecord {
    pub mode: Mode,
    pub concealed: usize,
    pub seed: u64,
    /// First eval step with every supervised position of the held-out batch
    /// correct; None means did not converge within the run.
    pub steps_to_full_accuracy: Option<u64>,
    pub stop: StopReason,
    pub steps_run: u64,
    pub final_train_loss: f64,
    pub final_align_loss: f64,
    pub final_eval_acc: f64,
    pub curve: Vec<CurvePoint>,
    /// Worst analytic-vs-finite-difference relative error seen by the
    /// spot checker (when enabled).
    pub spot_check_max_rel_err: Option<f64>,
}

struct EncodedInstance {
    seq: EncodedSeq,
    /// Concealed node values in token-index order (alignment targets).
    concealed_values: Vec<i8>,
    /// Explicit-encoding position of the last concealed token (cosine
    /// target extraction).
    cosine_pos: Option<usize>,
    explicit_seq: Option<EncodedSeq>,
}

fn encode_for_mode(
    inst: &ParityInstance,
    trace: &CoTTrace,
    mode: Mode,
    s: usize,
) -> Result<EncodedInstance> {
    if s == 0 || mode == Mode::Explicit {
        let seq = EncodedSeq::from_encoding(&encode_explicit(inst, trace));
        return Ok(EncodedInstance {
            seq,
            concealed_values: Vec::new(),
            cosine_pos: None,
            explicit_seq: None,
        });
    }
    let enc = encode_implicit(inst, trace, s)?;
    let seq = EncodedSeq::from_encoding(&enc);
    let d = inst.d();
    let root_index = d + trace.node_count();
    let mut concealed_values = Vec::new();
    let mut last_concealed_index = 0usize;
    for (layer_idx, layer) in trace.layers.iter().enumerate() {
        if layer_idx + 1 > s {
            break;
        }
        for node in layer {
            if node.index != root_index {
                concealed_values.push(node.value);
                last_concealed_index = node.index;
            }
        }
    }
    let needs_explicit = matches!(mode, Mode::AlicotCosine);
    Ok(EncodedInstance {
        seq,
        concealed_values,
        cosine_pos: (last_concealed_index > 0).then_some(last_concealed_index),
        explicit_seq: needs_explicit
            .then(|| EncodedSeq::from_encoding(&encode_explicit(inst, trace))),
    })
}

fn init_params(cfg: &TrainConfig, capacity: usize) -> ModelParams {
    let mut rng = substream(cfg.seed, "init");
    let basis = EmbeddingBasis::sample_trainable(cfg.d_model, cfg.u_sum, &mut rng);
    let mut params = ModelParams::new(basis, cfg.ffn_poly(), capacity);
    if cfg.mode.uses_static_latent() && cfg.effective_concealed() > 0 {
        let mut lrng = substream(cfg.seed, "latent-init");
        params.latent = Some(LatentToken::static_uniform(cfg.d_model, &mut lrng));
    } else if cfg.mode == Mode::ImpBase2 && cfg.effective_concealed() > 0 {
        params.latent = Some(LatentToken::DynamicHidden);
    }
    params
}

fn sample_batch(
    cfg: &TrainConfig,
    support: &[usize],
    n: usize,
    rng: &mut impl Rng,
) -> Result<Vec<EncodedInstance>> {
    (0..n)
        .map(|_| {
            let inst = sample_instance(cfg.d, support, rng)?;
            let trace = build_cot_trace(&inst)?;
            encode_for_mode(&inst, &trace, cfg.mode, cfg.effective_concealed())
        })
        .collect()
}

/// Teacher-forced per-position accuracy; `all_correct` is the convergence
/// criterion (every supervised position of every sample).
fn evaluate(
    params: &ModelParams,
    eval_set: &[EncodedInstance],
    state: &mut ForwardState,
) -> Result<(f64, bool)> {
    let mut correct = 0usize;
    let mut total = 0usize;
    let mut all_correct = true;
    for item in eval_set {
        forward_into(params, &item.seq, ForwardMode::TeacherForced, state)?;
        for (m, target) in item.seq.supervised_positions() {
            let predicted: i8 = if state.p_plus(m) > 0.5 { 1 } else { -1 };
            total += 1;
            if predicted == target {
                correct += 1;
            } else {
                all_correct = false;
            }
        }
    }
    Ok((correct as f64 / total.max(1) as f64, all_correct && total > 0))
}

// ── The training loop ─────────────────────────────────────────────────────

pub struct TrainOutput {
    pub record: ConvergenceRecord,
    pub params: ModelParams,
    pub head: Option<AlignHead>,
}

pub fn train(cfg: &TrainConfig) -> Result<TrainOutput> {
    let support = cfg.support();
    let s = cfg.effective_concealed();
    // capacity: explicit length and (when concealing) implicit length
    let explicit_len = cfg.d + cfg.k - 1;
    let mut capacity = explicit_len;
    if s > 0 && cfg.mode != Mode::Explicit {
        let mut probe_rng = substream(cfg.seed, "capacity-probe");
        let inst = sample_instance(cfg.d, &support, &mut probe_rng)?;
        let trace = build_cot_trace(&inst)?;
        if s > trace.height {
            return Err(Error::invalid(format!(
                "concealed step {s} exceeds trace height {}",
                trace.height
            )));
        }
        capacity = capacity.max(encode_implicit(&inst, &trace, s)?.tokens.len());
    }
    let capacity = cfg.m.unwrap_or(capacity).max(capacity);

    let mut params = init_params(cfg, capacity);
    let needs_align_classifier = cfg.mode == Mode::AlicotClassifier && s > 0;
    let needs_align_cosine = cfg.mode == Mode::AlicotCosine && s > 0;
    let mut head = if needs_align_classifier {
        // zero-initialized head predicts uniformly; probe an instance for τ
        let mut probe_rng = substream(cfg.seed, "head-probe");
        let inst = sample_instance(cfg.d, &support, &mut probe_rng)?;
        let trace = build_cot_trace(&inst)?;
        let enc = encode_for_mode(&inst, &trace, cfg.mode, s)?;
        Some(AlignHead::zeros(enc.concealed_values.len(), cfg.d_model, cfg.factored_head)?)
    } else {
        None
    };

    let mut batch_rng = substream(cfg.seed, "train-batches");
    let mut eval_rng = substream(cfg.seed, "eval-batch");
    let eval_set = sample_batch(cfg, &support, cfg.eval_batch, &mut eval_rng)?;

    let spot_steps: Vec<u64> = if cfg.spot_check {
        let mut srng = substream(cfg.seed, "spot-checks");
        (0..10).map(|_| srng.random_range(0..cfg.max_steps.max(1))).collect()
    } else {
        Vec::new()
    };
    let mut spot_worst: Option<f64> = None;

    let mut state = ForwardState::new();
    let mut gw = vec![0.0; params.logits.entries().len()];
    let mut gc = vec![0.0; cfg.d_model];
    let mut ghead = head.as_ref().map(|h| vec![0.0; h.weights.len()]);
    let mut gh_buf = vec![0.0; cfg.d_model];

    let mut curve = Vec::new();
    let mut steps_to_full = None;
    let mut stop = StopReason::StepCap;
    let mut best_acc = -1.0f64;
    let mut best_loss = f64::INFINITY;
    let mut last_improvement = 0u64;
    let mut final_train_loss = f64::NAN;
    let mut final_align_loss = 0.0;
    let mut final_eval_acc = 0.0;
    let mut steps_run = 0u64;

    'outer: for step in 0..cfg.max_steps {
        steps_run = step + 1;
        let batch = sample_batch(cfg, &support, cfg.batch, &mut batch_rng)?;

        gw.fill(0.0);
        gc.fill(0.0);
        if let Some(g) = ghead.as_deref_mut() {
            g.fill(0.0);
        }
        let mut task_loss = 0.0;
        let mut align_loss = 0.0;
        let use_align = (needs_align_classifier || needs_align_cosine) && cfg.lambda != 0.0;

        for item in &batch {
            forward_into(&params, &item.seq, ForwardMode::TeacherForced, &mut state)?;
            task_loss += sequence_loss(&item.seq, &mut state);
            accumulate_task_grad(&params, &item.seq, &state, &mut gw, Some(&mut gc));

            if use_align && needs_align_classifier {
                let eot = item
                    .seq
                    .eot_pos()
                    .ok_or_else(|| Error::config("alignment needs an <eot> marker".to_string()))?;
                let h_latent = state.hidden(eot).to_vec();
                gh_buf.fill(0.0);
                let head_ref = head.as_ref().expect("head configured");
                let l = head_ref.loss_and_grads(
                    &h_latent,
                    &item.concealed_values,
                    Some(&mut gh_buf),
                    ghead.as_deref_mut(),
                )?;
                align_loss += l;
                // route λ·∂L/∂h_eot through φ' into the eot column and the
                // latent slot embedding
                let lambda = cfg.lambda;
                let z_eot = state.z_hat(eot).to_vec();
                let gz: Vec<f64> = gh_buf
                    .iter()
                    .zip(&z_eot)
                    .map(|(g, z)| lambda * g * params.ffn.deriv(*z))
                    .collect();
                let gz_dot_z: f64 = gz.iter().zip(&z_eot).map(|(a, b)| a * b).sum();
                let sigma = state.sigma(eot).to_vec();
                let off = (eot - 1) * (eot - 2) / 2;
                for j in 1..eot {
                    let e_j = state.emb(j);
                    let gz_dot_e: f64 = gz.iter().zip(e_j).map(|(a, b)| a * b).sum();
                    gw[off + j - 1] += sigma[j - 1] * (gz_dot_e - gz_dot_z);
                }
                if let Some(q) = item.seq.latent_slot() {
                    if q < eot {
                        for i in 0..cfg.d_model {
                            gc[i] += sigma[q - 1] * gz[i];
                        }
                    }
                }
            }

            if use_align && needs_align_cosine {
                let explicit_seq = item.explicit_seq.as_ref().expect("cosine needs explicit pass");
                let pos = item.cosine_pos.expect("cosine target position");
                let mut t_state = ForwardState::new();
                forward_into(&params, explicit_seq, ForwardMode::TeacherForced, &mut t_state)?;
                let t_s = t_state.hidden(pos).to_vec(); // stop-gradient
                if let Some(LatentToken::StaticParam(c_s)) = &params.latent {
                    let (l, _flag) = loss_align_cosine(c_s, &t_s);
                    align_loss += l;
                    cosine_grad_into(c_s, &t_s, cfg.lambda, &mut gc);
                }
            }
        }

        let n = cfg.batch as f64;
        task_loss /= n;
        align_loss /= n;
        let total_loss = task_loss + if use_align { cfg.lambda * align_loss } else { 0.0 };
        final_train_loss = task_loss;
        final_align_loss = align_loss;
        if !total_loss.is_finite() {
            stop = StopReason::Diverged;
            break 'outer;
        }

        if cfg.spot_check && spot_steps.contains(&step) {
            let err = spot_check_gradients(cfg, &params, head.as_ref(), &batch, &gw, &gc, n)?;
            spot_worst = Some(spot_worst.map_or(err, |w: f64| w.max(err)));
        }

        // SGD step (task gradients are sums; normalize by batch here)
        for (w, g) in params.logits.entries_mut().iter_mut().zip(&gw) {
            *w -= cfg.lr_logits * g / n;
        }
        if let Some(LatentToken::StaticParam(c)) = params.latent.as_mut() {
            for (ci, g) in c.iter_mut().zip(&gc) {
                *ci -= cfg.lr_latent * g / n;
            }
        }
        if let (Some(head), Some(gh)) = (head.as_mut(), ghead.as_deref()) {
            if use_align {
                for (w, g) in head.weights.iter_mut().zip(gh) {
                    *w -= cfg.lr_head * cfg.lambda * g / n;
                }
            }
        }

        if step % cfg.eval_interval == 0 || step + 1 == cfg.max_steps {
            let (acc, all_correct) = evaluate(&params, &eval_set, &mut state)?;
            final_eval_acc = acc;
            curve.push(CurvePoint { step, train_loss: task_loss, align_loss, eval_acc: acc });
            if all_correct {
                steps_to_full = Some(step);
                stop = StopReason::Converged;
                break 'outer;
            }
            if acc > best_acc + 1e-9 || task_loss < best_loss - 1e-9 {
                best_acc = best_acc.max(acc);
                best_loss = best_loss.min(task_loss);
                last_improvement = step;
            } else if let Some(window) = cfg.plateau_window {
                if step - last_improvement >= window {
                    stop = StopReason::Plateau;
                    break 'outer;
                }
            }
        }
    }

    Ok(TrainOutput {
        record: ConvergenceRecord {
            mode: cfg.mode,
            concealed: cfg.concealed,
            seed: cfg.seed,
            steps_to_full_accuracy: steps_to_full,
            stop,
            steps_run,
            final_train_loss,
            final_align_loss,
            final_eval_acc,
            curve,
            spot_check_max_rel_err: spot_worst,
        },
        params,
        head,
    })
}

/// Compare the assembled analytic gradients (task + λ·alignment) against
/// central differences of the same objective on the same batch.
fn spot_check_gradients(
    cfg: &TrainConfig,
    params: &ModelParams,
    head: Option<&AlignHead>,
    batch: &[EncodedInstance],
    gw: &[f64],
    gc: &[f64],
    n: f64,
) -> Result<f64> {
    let objective = |p: &ModelParams| -> Result<f64> {
        let mut state = ForwardState::new();
        let mut total = 0.0;
        for item in batch {
            forward_into(p, &item.seq, ForwardMode::TeacherForced, &mut state)?;
            total += sequence_loss(&item.seq, &mut state);
            if cfg.lambda != 0.0 {
                if let Some(head) = head {
                    let eot = item.seq.eot_pos().expect("eot");
                    total += cfg.lambda
                        * head.loss_and_grads(state.hidden(eot), &item.concealed_values, None, None)?;
                }
                if cfg.mode == Mode::AlicotCosine {
                    if let (Some(explicit_seq), Some(pos)) =
                        (item.explicit_seq.as_ref(), item.cosine_pos)
                    {
                        let mut t_state = ForwardState::new();
                        forward_into(p, explicit_seq, ForwardMode::TeacherForced, &mut t_state)?;
                        // stop-gradient: t_s recomputed from the frozen base
                        // params, not the perturbed copy
                        let mut base_state = ForwardState::new();
                        forward_into(
                            params,
                            explicit_seq,
                            ForwardMode::TeacherForced,
                            &mut base_state,
                        )?;
                        let t_s = base_state.hidden(pos);
                        if let Some(LatentToken::StaticParam(c_s)) = &p.latent {
                            total += cfg.lambda * loss_align_cosine(c_s, t_s).0;
                        }
                    }
                }
            }
        }
        Ok(total / n)
    };
    // Scale-aware comparison: tiny entries are measured against the table
    // scale, since central differences carry O(ε²) truncation noise that no
    // entry below it can beat in purely relative terms.
    let fd_w = fd_grad_w(params, 1e-4, objective)?;
    let scale_w = gw
        .iter()
        .map(|a| (a / n).abs())
        .chain(fd_w.grad.iter().map(|f| f.abs()))
        .fold(1e-7f64, f64::max);
    let mut worst: f64 = 0.0;
    for (a, f) in gw.iter().zip(&fd_w.grad) {
        let a = a / n;
        let denom = a.abs().max(f.abs()).max(1e-3 * scale_w);
        worst = worst.max((a - f).abs() / denom);
    }
    if matches!(params.latent, Some(LatentToken::StaticParam(_))) {
        let fd_c = fd_grad_latent(params, 1e-4, objective)?;
        let scale_c = gc
            .iter()
            .map(|a| (a / n).abs())
            .chain(fd_c.grad.iter().map(|f| f.abs()))
            .fold(1e-7f64, f64::max);
        for (a, f) in gc.iter().zip(&fd_c.grad) {
            let a = a / n;
            let denom = a.abs().max(f.abs()).max(1e-3 * scale_c);
            worst = worst.max((a - f).abs() / denom);
        }
    }
    Ok(worst)
}

// ── Concealment sweep ─────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize)]
pub struct SweepCell {
    pub mode: Mode,
    pub concealed: usize,
    pub seed: u64,
    pub record: ConvergenceRecord,
}

/// Train every (mode, s, seed) combination in parallel with isolated
/// parameter sets and derived seeds.
pub fn sweep_concealed_steps(
    base: &TrainConfig,
    modes: &[Mode],
    s_range: &[usize],
    seeds: &[u64],
) -> Result<Vec<SweepCell>> {
    let mut jobs = Vec::new();
    for &mode in modes {
        for &s in s_range {
            for &seed in seeds {
                let mut cfg = base.clone();
                cfg.mode = mode;
                cfg.concealed = s;
                cfg.seed = seed;
                jobs.push(cfg);
            }
        }
    }
    jobs.into_par_iter()
        .map(|cfg| {
            let out = train(&cfg)?;
            Ok(SweepCell {
                mode: cfg.mode,
                concealed: cfg.concealed,
                seed: cfg.seed,
                record: out.record,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepSummary {
    /// Median steps-to-convergence per (mode, s); None = no seed converged.
    pub median_steps: Vec<(Mode, usize, Option<u64>)>,
    /// alicot ≤ impbase1 at every s ≥ 2 where both converged.
    pub alicot_not_slower: bool,
    /// impbase1 median steps non-decreasing over the s where it converged.
    pub impbase1_nondecreasing: bool,
}

pub fn summarize_sweep(cells: &[SweepCell]) -> SweepSummary {
    let mut keys: Vec<(Mode, usize)> = cells.iter().map(|c| (c.mode, c.concealed)).collect();
    keys.sort_by_key(|(m, s)| (m.label(), *s));
    keys.dedup();
    let median = |mode: Mode, s: usize| -> Option<u64> {
        let mut vals: Vec<u64> = cells
            .iter()
            .filter(|c| c.mode == mode && c.concealed == s)
            .filter_map(|c| c.record.steps_to_full_accuracy)
            .collect();
        if vals.is_empty() {
            return None;
        }
        vals.sort_unstable();
        Some(vals[vals.len() / 2])
    };
    let median_steps: Vec<(Mode, usize, Option<u64>)> =
        keys.iter().map(|&(m, s)| (m, s, median(m, s))).collect();

    let mut alicot_not_slower = true;
    let mut s_values: Vec<usize> = cells.iter().map(|c| c.concealed).collect();
    s_values.sort_unstable();
    s_values.dedup();
    for &s in &s_values {
        if s < 2 {
            continue;
        }
        if let (Some(a), Some(b)) = (median(Mode::AlicotClassifier, s), median(Mode::ImpBase1, s)) {
            if a > b {
                alicot_not_slower = false;
            }
        }
    }
    let mut impbase1_nondecreasing = true;
    let mut prev: Option<u64> = None;
    for &s in &s_values {
        if let Some(steps) = median(Mode::ImpBase1, s) {
            if let Some(p) = prev {
                if steps < p {
                    impbase1_nondecreasing = false;
                }
            }
            prev = Some(steps);
        }
    }
    SweepSummary { median_steps, alicot_not_slower, impbase1_nondecreasing }
}

// ── CSV / artifact helpers ────────────────────────────────────────────────

/// curve.csv rows: step, mode, s, train_loss, align_loss, eval_acc.
pub fn curve_csv(mode: Mode, s: usize, curve: &[CurvePoint]) -> String {
    let mut out = String::from("step,mode,s,train_loss,align_loss,eval_acc\n");
    for p in curve {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            p.step,
            mode.label(),
            s,
            p.train_loss,
            p.align_loss,
            p.eval_acc
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::EmbeddingBasis;

    fn tiny_cfg(mode: Mode, s: usize, seed: u64) -> TrainConfig {
        let mut cfg = TrainConfig::new(mode, 8, 4, s, seed);
        cfg.batch = 8;
        cfg.max_steps = 40;
        cfg.eval_interval = 10;
        cfg.eval_batch = 16;
        cfg.d_model = 16;
        cfg
    }

    #[test]
    fn support_layout_is_evenly_spaced() {
        let cfg = TrainConfig::new(Mode::Explicit, 16, 8, 0, 0);
        assert_eq!(cfg.support(), vec![2, 4, 6, 8, 10, 12, 14, 16]);
        let cfg = TrainConfig::new(Mode::Explicit, 16, 16, 0, 0);
        assert_eq!(cfg.support(), (1..=16).collect::<Vec<_>>());
    }

    #[test]
    fn loss_surfaces_reference_values() {
        // uniform predictor: u = 0 -> every probability 1/2
        let mut rng = substream(61, "train-test");
        let support = [2usize, 4, 6, 8];
        let inst = sample_instance(8, &support, &mut rng).unwrap();
        let trace = build_cot_trace(&inst).unwrap();
        let k = inst.k();
        let explicit = EncodedSeq::from_encoding(&encode_explicit(&inst, &trace));
        let params = ModelParams::new(
            EmbeddingBasis { v: vec![1.0; 8], u: vec![0.0; 8] },
            FfnPoly::paper_default(2.0),
            explicit.len(),
        );
        let l = loss_explicit(&params, &[explicit.clone()]).unwrap();
        assert!((l - (k - 1) as f64 * (2.0f64).ln()).abs() < 1e-12);

        // implicit at s=1: (k-1-τ)·ln 2 supervised positions
        let enc = encode_implicit(&inst, &trace, 1).unwrap();
        let tau = enc.tau;
        let seq = EncodedSeq::from_encoding(&enc);
        let mut params = ModelParams::new(
            EmbeddingBasis { v: vec![1.0; 8], u: vec![0.0; 8] },
            FfnPoly::paper_default(2.0),
            seq.len(),
        );
        params.latent = Some(LatentToken::StaticParam(vec![0.0; 8]));
        let l = loss_implicit(&params, &[seq]).unwrap();
        assert!((l - (k - 1 - tau) as f64 * (2.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn align_head_uniform_and_perfect() {
        let head = AlignHead::zeros(4, 8, true).unwrap();
        let h = vec![0.3; 8];
        let l = head.loss_and_grads(&h, &[1, -1, 1, -1], None, None).unwrap();
        assert!((l - 4.0 * (2.0f64).ln()).abs() < 1e-12);

        // a strongly aligned head drives the loss toward zero
        let mut head = AlignHead::zeros(1, 2, true).unwrap();
        head.weights = vec![50.0, 0.0];
        let l = head.loss_and_grads(&[1.0, 0.0], &[1], None, None).unwrap();
        assert!(l < 1e-8);

        // joint head caps tau
        assert!(AlignHead::zeros(9, 4, false).is_err());
        let joint = AlignHead::zeros(2, 4, false).unwrap();
        let l = joint.loss_and_grads(&[0.0; 4], &[1, 1], None, None).unwrap();
        assert!((l - (4.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn cosine_loss_reference_points() {
        let t = vec![1.0, 2.0, -1.0];
        assert!((loss_align_cosine(&t, &t).0 - 0.0).abs() < 1e-12);
        let neg: Vec<f64> = t.iter().map(|x| -x).collect();
        assert!((loss_align_cosine(&neg, &t).0 - 2.0).abs() < 1e-12);
        let orth = vec![2.0, -1.0, 0.0];
        assert!((loss_align_cosine(&orth, &t).0 - 1.0).abs() < 1e-12);
        let (l, flagged) = loss_align_cosine(&[0.0, 0.0, 0.0], &t);
        assert_eq!((l, flagged), (1.0, true));
    }

    #[test]
    fn lambda_zero_matches_impbase1_bitwise() {
        let mut a = tiny_cfg(Mode::AlicotClassifier, 1, 7);
        a.lambda = 0.0;
        let b = tiny_cfg(Mode::ImpBase1, 1, 7);
        let out_a = train(&a).unwrap();
        let out_b = train(&b).unwrap();
        assert_eq!(out_a.params.logits.entries(), out_b.params.logits.entries());
        assert_eq!(out_a.params.latent, out_b.params.latent);
        let acc_a: Vec<u64> = out_a.record.curve.iter().map(|p| p.eval_acc.to_bits()).collect();
        let acc_b: Vec<u64> = out_b.record.curve.iter().map(|p| p.eval_acc.to_bits()).collect();
        assert_eq!(acc_a, acc_b);
    }

    #[test]
    fn s_zero_reduces_every_mode_to_explicit() {
        let reference = train(&tiny_cfg(Mode::Explicit, 0, 9)).unwrap();
        for mode in [Mode::ImpBase1, Mode::ImpBase2, Mode::AlicotClassifier, Mode::AlicotCosine] {
            let out = train(&tiny_cfg(mode, 0, 9)).unwrap();
            assert_eq!(
                out.params.logits.entries(),
                reference.params.logits.entries(),
                "{mode:?}"
            );
        }
    }

    #[test]
    fn reruns_are_deterministic() {
        let cfg = tiny_cfg(Mode::ImpBase1, 1, 11);
        let a = train(&cfg).unwrap();
        let b = train(&cfg).unwrap();
        assert_eq!(a.params.logits.entries(), b.params.logits.entries());
        assert_eq!(
            serde_json::to_string(&a.record).unwrap(),
            serde_json::to_string(&b.record).unwrap()
        );
    }

    #[test]
    fn spot_checks_pass_on_all_alignment_paths() {
        for (mode, s, lambda) in [
            (Mode::Explicit, 0usize, 0.0),
            (Mode::ImpBase1, 1, 0.0),
            (Mode::ImpBase2, 1, 0.0),
            (Mode::AlicotClassifier, 1, 0.5),
            (Mode::AlicotCosine, 1, 0.5),
        ] {
            let mut cfg = tiny_cfg(mode, s, 13);
            cfg.lambda = lambda;
            cfg.spot_check = true;
            cfg.max_steps = 12;
            let out = train(&cfg).unwrap();
            let worst = out.record.spot_check_max_rel_err.unwrap_or(0.0);
            assert!(worst <= 1e-5, "{mode:?}: max rel err {worst}");
        }
    }

    #[test]
    fn cosine_alignment_sends_no_gradient_into_target_path() {
        // alignment-only objective with frozen t_s must have zero gradient
        // on the attention logits
        let mut rng = substream(62, "train-test");
        let support = [2usize, 4, 6, 8];
        let inst = sample_instance(8, &support, &mut rng).unwrap();
        let trace = build_cot_trace(&inst).unwrap();
        let item = encode_for_mode(&inst, &trace, Mode::AlicotCosine, 1).unwrap();
        let mut params = ModelParams::new(
            EmbeddingBasis::sample_uniform(8, &mut rng),
            FfnPoly::paper_default(2.0),
            item.explicit_seq.as_ref().unwrap().len().max(item.seq.len()),
        );
        for w in params.logits.entries_mut() {
            *w = rng.random_range(-0.5..0.5);
        }
        params.latent = Some(LatentToken::static_uniform(8, &mut rng));

        // cache t_s once from the unperturbed parameters
        let mut t_state = ForwardState::new();
        forward_into(
            &params,
            item.explicit_seq.as_ref().unwrap(),
            ForwardMode::TeacherForced,
            &mut t_state,
        )
        .unwrap();
        let t_s = t_state.hidden(item.cosine_pos.unwrap()).to_vec();
        let fd = fd_grad_w(&params, 1e-4, |p| {
            if let Some(LatentToken::StaticParam(c_s)) = &p.latent {
                Ok(loss_align_cosine(c_s, &t_s).0)
            } else {
                unreachable!()
            }
        })
        .unwrap();
        assert!(fd.grad.iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn sweep_cells_and_summary() {
        let mut base = tiny_cfg(Mode::Explicit, 0, 3);
        base.max_steps = 15;
        base.eval_interval = 5;
        let cells = sweep_concealed_steps(
            &base,
            &[Mode::ImpBase1, Mode::AlicotClassifier],
            &[1, 2],
            &[3, 4],
        )
        .unwrap();
        assert_eq!(cells.len(), 8);
        let summary = summarize_sweep(&cells);
        assert_eq!(summary.median_steps.len(), 4);
    }

    use crate::seeding::substream;
}
