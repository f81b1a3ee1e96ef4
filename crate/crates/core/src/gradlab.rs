//! Gradient signal/noise experiments on direct parity prediction.
//!
//! The lab works in the setting of the theory: a context of m−1 i.i.d. ±1
//! bits, a target equal to the parity over a hidden support R, and the
//! model at uniform attention (all logits zero). It measures order-r
//! contraction statistics, Hoeffding noise floors, the Θ(m⁻ʳ) decay of the
//! per-index gradient signal, empirical sample-complexity thresholds, and
//! the noise behavior of the two latent-token mechanisms.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{sigmoid, EmbeddingBasis, FfnPoly};
use crate::seeding::substream;

// ── Compensated accumulation ──────────────────────────────────────────────

/// Kahan compensated sum; keeps order-4 contraction sums stable at
/// d_model = 64.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    carry: f64,
}

impl KahanSum {
    pub fn add(&mut self, x: f64) {
        let y = x - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }
    pub fn value(&self) -> f64 {
        self.sum
    }
}

/// Multi-linear inner product ⟨z₁,…,z_r⟩ = Σ_i Π_k z_{k,i}.
pub fn contraction(vectors: &[&[f64]]) -> Result<f64> {
    if vectors.is_empty() {
        return Err(Error::invalid("contraction needs at least one vector".to_string()));
    }
    let n = vectors[0].len();
    if vectors.iter().any(|v| v.len() != n) {
        return Err(Error::invalid("contraction arguments must share a length".to_string()));
    }
    let mut acc = KahanSum::default();
    for i in 0..n {
        let mut prod = 1.0;
        for v in vectors {
            prod *= v[i];
        }
        acc.add(prod);
    }
    Ok(acc.value())
}

/// C_signal^{(r)} = ⟨u, v, …, v⟩ with r copies of v.
pub fn c_signal(basis: &EmbeddingBasis, r: usize) -> f64 {
    let mut acc = KahanSum::default();
    for (ui, vi) in basis.u.iter().zip(&basis.v) {
        acc.add(ui * vi.powi(r as i32));
    }
    acc.value()
}

// ── Tuple classification ──────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Membership {
    Relevant,
    Irrelevant,
}

/// A tuple J is relevant iff y·Π_{j∈J} x_j ≡ 1 over all inputs, which holds
/// structurally iff every support index appears an odd number of times in J
/// and every other index an even number of times.
pub fn classify_tuple(tuple: &[usize], support: &[usize]) -> Membership {
    let mut counts: std::collections::BTreeMap<usize, usize> = std::collections::BTreeMap::new();
    for &j in tuple {
        *counts.entry(j).or_insert(0) += 1;
    }
    for (&j, &count) in &counts {
        let want_odd = support.contains(&j);
        if (count % 2 == 1) != want_odd {
            return Membership::Irrelevant;
        }
    }
    // support indices absent from the tuple have even count 0
    for s in support {
        if !counts.contains_key(s) {
            return Membership::Irrelevant;
        }
    }
    Membership::Relevant
}

/// Exhaustive oracle for `classify_tuple`: evaluates y·Πx over all 2^d sign
/// assignments.
pub fn classify_tuple_bruteforce(tuple: &[usize], support: &[usize], d: usize) -> Membership {
    for mask in 0u64..(1u64 << d) {
        let bit = |j: usize| -> i64 {
            if mask >> (j - 1) & 1 == 1 {
                -1
            } else {
                1
            }
        };
        let y: i64 = support.iter().map(|&j| bit(j)).product();
        let px: i64 = tuple.iter().map(|&j| bit(j)).product();
        if y * px != 1 {
            return Membership::Irrelevant;
        }
    }
    Membership::Relevant
}

/// u ⊙ v^{⊙r}: the invariant direction shared by every sign assignment
/// consistent with the parity constraint.
pub fn parity_invariant_vector(u: &[f64], v: &[f64], r: usize) -> Result<Vec<f64>> {
    if u.len() != v.len() {
        return Err(Error::invalid("length mismatch".to_string()));
    }
    Ok(u.iter()
        .zip(v)
        .map(|(&ui, &vi)| {
            let mut x = ui;
            for _ in 0..r {
                x *= vi;
            }
            x
        })
        .collect())
}

// ── Hoeffding bound ───────────────────────────────────────────────────────

/// κ = C·sqrt((2/n)·ln(2|I|/p)): the high-probability noise floor for the
/// n-averaged contraction, uniformly over a set of |I| zero-mean tuples.
pub fn hoeffding_kappa(n: usize, set_size: usize, p: f64, c: f64) -> f64 {
    if n == 0 || set_size == 0 {
        return 0.0;
    }
    c.abs() * ((2.0 / n as f64) * (2.0 * set_size as f64 / p).ln()).sqrt()
}

// ── Lab batches ───────────────────────────────────────────────────────────

/// n direct-prediction samples at context length m: m−1 i.i.d. bits plus
/// the parity label over `support`.
#[derive(Debug, Clone)]
pub struct LabBatch {
    pub m: usize,
    pub support: Vec<usize>,
    /// Row-major bits, n rows of m−1 entries.
    pub bits: Vec<i8>,
    pub labels: Vec<i8>,
}

impl LabBatch {
    pub fn n(&self) -> usize {
        self.labels.len()
    }
    pub fn row(&self, i: usize) -> &[i8] {
        let w = self.m - 1;
        &self.bits[i * w..(i + 1) * w]
    }
}

pub fn sample_lab_batch(
    m: usize,
    support: &[usize],
    n: usize,
    rng: &mut impl Rng,
) -> Result<LabBatch> {
    if m < 2 {
        return Err(Error::invalid("context length m must be at least 2".to_string()));
    }
    if support.iter().any(|&j| j == 0 || j >= m) {
        return Err(Error::invalid("support must lie within [1, m-1]".to_string()));
    }
    let width = m - 1;
    let mut bits = Vec::with_capacity(n * width);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let start = bits.len();
        for _ in 0..width {
            bits.push(if rng.random::<bool>() { 1i8 } else { -1i8 });
        }
        let label: i8 = support.iter().map(|&j| bits[start + j - 1]).product();
        labels.push(label);
    }
    Ok(LabBatch { m, support: support.to_vec(), bits, labels })
}

// ── Signal estimation ─────────────────────────────────────────────────────

/// One probed index of a signal report.
#[derive(Debug, Clone, Serialize)]
pub struct SignalEntry {
    pub j: usize,
    pub r: usize,
    pub relevant: bool,
    /// (1/n) Σ_i y x_j S^{r−1} · C^{(r)}: the inner contraction sum of the
    /// order-r gradient term with index j held fixed.
    pub estimate: f64,
    /// Same average with the per-sample uncertainty weight 2(1−p_t).
    pub weighted_estimate: f64,
    pub c_signal: f64,
    /// Number of relevant completions of j: (r−1)! when |support| = r.
    pub relevant_completions: usize,
    /// Single-tuple Hoeffding floor at the given confidence.
    pub kappa: f64,
    /// Count of noise tuples in the inner sum.
    pub noise_terms: usize,
}

/// Estimate the fixed-j inner contraction sum of the order-r gradient term
/// over a lab batch, next to its theoretical constants.
pub fn estimate_signal(
    batch: &LabBatch,
    r: usize,
    j: usize,
    basis: &EmbeddingBasis,
    ffn: &FfnPoly,
    p_conf: f64,
) -> Result<SignalEntry> {
    if batch.n() == 0 {
        return Err(Error::invalid("empty batch".to_string()));
    }
    if r < 1 {
        return Err(Error::invalid("order r must be at least 1".to_string()));
    }
    let m = batch.m;
    if j == 0 || j >= m {
        return Err(Error::invalid("probe index outside context".to_string()));
    }
    let c_r = c_signal(basis, r);
    let mut acc = KahanSum::default();
    let mut wacc = KahanSum::default();
    for i in 0..batch.n() {
        let row = batch.row(i);
        let y = batch.labels[i] as f64;
        let s: f64 = row.iter().map(|&b| b as f64).sum();
        let xj = row[j - 1] as f64;
        let val = y * xj * s.powi(r as i32 - 1);
        acc.add(val);
        // uncertainty weight from the uniform-attention forward
        let mean = s / (m - 1) as f64;
        let logit: f64 = basis
            .u
            .iter()
            .zip(&basis.v)
            .map(|(ui, vi)| ui * ffn.eval(mean * vi))
            .sum();
        let p_t = sigmoid(2.0 * y * logit);
        wacc.add(2.0 * (1.0 - p_t) * val);
    }
    let n = batch.n() as f64;
    let estimate = c_r * acc.value() / n;
    let weighted = c_r * wacc.value() / n;
    let relevant = batch.support.contains(&j);
    let completions = if relevant && batch.support.len() == r {
        (1..r).product::<usize>()
    } else {
        0
    };
    let inner_terms = (m - 1).pow(r as u32 - 1);
    let set_size = inner_terms.saturating_sub(completions).max(1);
    Ok(SignalEntry {
        j,
        r,
        relevant,
        estimate,
        weighted_estimate: weighted,
        c_signal: c_r,
        relevant_completions: completions,
        kappa: hoeffding_kappa(batch.n(), set_size, p_conf, c_r),
        noise_terms: inner_terms - completions,
    })
}

// ── Exact attention gradient at uniform initialization ────────────────────

/// Per-index gradient ∂L/∂w_{j,m} of the direct-prediction CE loss at zero
/// logits, averaged over the batch. Algebraically identical to
/// `grad::analytic_grad_attention` on the same data (a test pins this), but
/// specialized to e_j = x_j v so each sample costs O(m + d_model).
pub fn uniform_grad_signal(batch: &LabBatch, basis: &EmbeddingBasis, ffn: &FfnPoly) -> Vec<f64> {
    let m = batch.m;
    let width = m - 1;
    let sigma = 1.0 / width as f64;
    let mut grad = vec![KahanSum::default(); width];
    for i in 0..batch.n() {
        let row = batch.row(i);
        let y = batch.labels[i] as f64;
        let s_sum: f64 = row.iter().map(|&b| b as f64).sum();
        let s = s_sum * sigma; // ẑ = s·v
        // T(s) = ⟨u ⊙ φ'(s v), v⟩ and p_t from the same forward
        let mut t_acc = KahanSum::default();
        let mut logit_acc = KahanSum::default();
        for (ui, vi) in basis.u.iter().zip(&basis.v) {
            t_acc.add(ui * ffn.deriv(s * vi) * vi);
            logit_acc.add(ui * ffn.eval(s * vi));
        }
        let p_t = sigmoid(2.0 * y * logit_acc.value());
        let dfac = -2.0 * (1.0 - p_t) * y * t_acc.value();
        for (jm1, g) in grad.iter_mut().enumerate() {
            let xj = row[jm1] as f64;
            g.add(sigma * (xj - s) * dfac);
        }
    }
    let n = batch.n() as f64;
    grad.into_iter().map(|g| g.value() / n).collect()
}

// ── Concentration experiment ──────────────────────────────────────────────

#[derive(Debug, Clone, Serialize)]
pub struct ConcentrationReport {
    pub trials: usize,
    pub violations: usize,
    pub violation_frequency: f64,
    pub kappa: f64,
    pub set_size: usize,
}

/// Enumerate all ordered r-tuples over [width] in odometer order.
fn enumerate_tuples(width: usize, r: usize) -> Vec<Vec<usize>> {
    let mut tuples = Vec::with_capacity(width.pow(r as u32));
    let mut idx = vec![1usize; r];
    loop {
        tuples.push(idx.clone());
        let mut pos = r;
        loop {
            if pos == 0 {
                return tuples;
            }
            idx[pos - 1] += 1;
            if idx[pos - 1] <= width {
                break;
            }
            idx[pos - 1] = 1;
            pos -= 1;
        }
    }
}

/// Monte-Carlo check of the concentration lemma: over `trials` fresh
/// batches, how often does the worst irrelevant-tuple average exceed κ?
pub fn empirical_concentration(
    trials: usize,
    n: usize,
    m: usize,
    r: usize,
    p: f64,
    seed: u64,
) -> Result<ConcentrationReport> {
    if trials < 1 {
        return Err(Error::invalid("need at least one trial".to_string()));
    }
    let mut basis_rng = substream(seed, "concentration-basis");
    let basis = EmbeddingBasis::sample_uniform(64, &mut basis_rng);
    let support: Vec<usize> = (1..=r).collect();
    let c = c_signal(&basis, r);

    let tuples: Vec<Vec<usize>> = enumerate_tuples(m - 1, r)
        .into_iter()
        .filter(|t| classify_tuple(t, &support) == Membership::Irrelevant)
        .collect();
    let set_size = tuples.len();
    let kappa = hoeffding_kappa(n, set_size, p, c);

    let violations: usize = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = substream(seed, &format!("concentration-trial-{t}"));
            let batch = sample_lab_batch(m, &support, n, &mut rng).expect("valid batch");
            let mut worst: f64 = 0.0;
            for tuple in &tuples {
                let mut acc = 0.0f64;
                for i in 0..n {
                    let row = batch.row(i);
                    let mut prod = batch.labels[i] as f64;
                    for &j in tuple {
                        prod *= row[j - 1] as f64;
                    }
                    acc += prod;
                }
                worst = worst.max((c * acc / n as f64).abs());
            }
            usize::from(worst > kappa)
        })
        .sum();

    Ok(ConcentrationReport {
        trials,
        violations,
        violation_frequency: violations as f64 / trials as f64,
        kappa,
        set_size,
    })
}

// ── Scaling-law fits ──────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize)]
pub struct ScalingPoint {
    pub m: usize,
    pub n: usize,
    /// Mean |gradient| over support indices, averaged over seeds.
    pub signal: f64,
    /// Max |gradient| over non-support indices, averaged over seeds.
    pub noise: f64,
    pub undersampled: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalingFit {
    pub r: usize,
    pub points: Vec<ScalingPoint>,
    /// Least-squares slope of log|signal| against log m.
    pub slope: f64,
    /// Half-width of a ~95% confidence interval on the slope.
    pub slope_ci: f64,
    pub excluded: Vec<usize>,
}

/// Fit log-log decay of the relevant-index gradient magnitude against m.
/// `n_of_m` sizes the batch per grid point; grid points where the measured
/// signal fails to clear the measured noise floor are flagged and excluded.
pub fn scaling_experiment(
    m_grid: &[usize],
    r: usize,
    n_of_m: impl Fn(usize) -> usize + Sync,
    seeds: usize,
    d_model: usize,
    ffn: &FfnPoly,
    seed: u64,
) -> Result<ScalingFit> {
    if m_grid.len() < 4 {
        return Err(Error::invalid("scaling fits need at least 4 grid points".to_string()));
    }
    let points: Vec<ScalingPoint> = m_grid
        .par_iter()
        .map(|&m| {
            let n = n_of_m(m);
            let support: Vec<usize> = (1..=r).collect();
            let (sig_acc, noise_acc) = (0..seeds)
                .into_par_iter()
                .map(|sd| {
                    let mut rng = substream(seed, &format!("scaling-r{r}-m{m}-s{sd}"));
                    let basis = EmbeddingBasis::sample_uniform(d_model, &mut rng);
                    let batch = sample_lab_batch(m, &support, n, &mut rng).expect("valid batch");
                    let grad = uniform_grad_signal(&batch, &basis, ffn);
                    let sig: f64 =
                        support.iter().map(|&j| grad[j - 1].abs()).sum::<f64>() / r as f64;
                    let noise: f64 = grad
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| !support.contains(&(i + 1)))
                        .map(|(_, g)| g.abs())
                        .fold(0.0, f64::max);
                    (sig, noise)
                })
                .reduce(|| (0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
            let signal = sig_acc / seeds as f64;
            let noise = noise_acc / seeds as f64;
            ScalingPoint { m, n, signal, noise, undersampled: signal <= noise }
        })
        .collect();

    let included: Vec<&ScalingPoint> = points.iter().filter(|p| !p.undersampled).collect();
    if included.len() < 4 {
        return Err(Error::structural(format!(
            "only {} usable grid points after undersampling exclusion; need 4",
            included.len()
        )));
    }
    let xs: Vec<f64> = included.iter().map(|p| (p.m as f64).ln()).collect();
    let ys: Vec<f64> = included.iter().map(|p| p.signal.ln()).collect();
    let (slope, ci) = least_squares_slope(&xs, &ys);
    let excluded = points
        .iter()
        .enumerate()
        .filter(|(_, p)| p.undersampled)
        .map(|(i, _)| i)
        .collect();
    Ok(ScalingFit { r, points, slope, slope_ci: ci, excluded })
}

/// Slope and ~95% half-width of the simple linear regression y = a + b·x.
pub fn least_squares_slope(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let dof = (xs.len().max(3) - 2) as f64;
    let resid: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let pred = my + slope * (x - mx);
            (y - pred) * (y - pred)
        })
        .sum();
    let se = (resid / dof / sxx).sqrt();
    // two-sided 97.5% t quantiles for small sample counts
    let t = match xs.len() {
        0..=3 => 12.71,
        4 => 4.30,
        5 => 3.18,
        6 => 2.78,
        7 => 2.57,
        _ => 2.26,
    };
    (slope, t * se)
}

// ── Sample-complexity probe ───────────────────────────────────────────────

#[derive(Debug, Clone, Serialize)]
pub struct ComplexityProbe {
    pub r: usize,
    pub m: usize,
    /// Smallest probed n with relevant/irrelevant separation in ≥95% of
    /// seeds; None if the search cap was hit.
    pub n_star: Option<usize>,
    /// Reference law m^{2(r−1)}·ln(m/p).
    pub n_theory: f64,
    pub seeds: usize,
}

/// Doubling search for the smallest batch size at which the minimum
/// relevant-index gradient magnitude exceeds the maximum irrelevant one in
/// at least 95% of seeds.
pub fn sample_complexity_probe(
    r: usize,
    m: usize,
    p: f64,
    seeds: usize,
    d_model: usize,
    ffn: &FfnPoly,
    seed: u64,
    n_cap: usize,
) -> Result<ComplexityProbe> {
    let support: Vec<usize> = (1..=r).collect();
    let n_theory = (m as f64).powi(2 * (r as i32 - 1)) * (m as f64 / p).ln();
    let mut n = 4usize;
    let mut n_star = None;
    while n <= n_cap {
        let separated: usize = (0..seeds)
            .into_par_iter()
            .map(|sd| {
                let mut rng = substream(seed, &format!("complexity-r{r}-m{m}-n{n}-s{sd}"));
                let basis = EmbeddingBasis::sample_uniform(d_model, &mut rng);
                let batch = sample_lab_batch(m, &support, n, &mut rng).expect("valid batch");
                let grad = uniform_grad_signal(&batch, &basis, ffn);
                let min_rel = support
                    .iter()
                    .map(|&j| grad[j - 1].abs())
                    .fold(f64::INFINITY, f64::min);
                let max_irr = grad
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| !support.contains(&(i + 1)))
                    .map(|(_, g)| g.abs())
                    .fold(0.0, f64::max);
                usize::from(min_rel > max_irr)
            })
            .sum();
        if separated as f64 >= 0.95 * seeds as f64 {
            n_star = Some(n);
            break;
        }
        n *= 2;
    }
    Ok(ComplexityProbe { r, m, n_star, n_theory, seeds })
}

// ── Latent-token probes ───────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize)]
pub struct StaticLatentReport {
    pub c_c: f64,
    pub n: usize,
    pub trials: usize,
    /// Sample std of the n-averaged contraction across trials.
    pub std_of_average: f64,
    /// |C_c|/√n.
    pub theory_std: f64,
    pub mean_of_average: f64,
    /// Fraction of trials whose worst tuple average exceeded κ_s.
    pub kappa_violation_frequency: f64,
    pub kappa_s: f64,
}

/// Behavior of contractions with an input-independent latent vector: the
/// single-sample magnitude is exactly |C_c|, the n-average concentrates at
/// rate n^{−1/2}, and the worst tuple stays under κ_s with high
/// probability.
pub fn static_latent_probe(
    n: usize,
    r: usize,
    m: usize,
    trials: usize,
    p: f64,
    d_model: usize,
    seed: u64,
) -> Result<StaticLatentReport> {
    if trials < 2 {
        return Err(Error::invalid("need at least two trials".to_string()));
    }
    let width = m - 1;
    if r > width {
        return Err(Error::invalid("tuple order exceeds context width".to_string()));
    }
    let mut rng = substream(seed, "static-latent-setup");
    let v: Vec<f64> = (0..d_model).map(|_| rng.random_range(-1.0..1.0)).collect();
    let c_s: Vec<f64> = (0..d_model).map(|_| rng.random_range(-1.0..1.0)).collect();
    // C_c = ⟨v, …, v, c_s⟩ with r copies of v
    let mut acc = KahanSum::default();
    for i in 0..d_model {
        acc.add(v[i].powi(r as i32) * c_s[i]);
    }
    let c_c = acc.value();

    let tuples = enumerate_tuples(width, r);
    let kappa_s = hoeffding_kappa(n, tuples.len(), p, c_c);

    let results: Vec<(f64, bool)> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut trng = substream(seed, &format!("static-latent-trial-{t}"));
            let support: Vec<usize> = (1..=r).collect();
            let batch = sample_lab_batch(m, &support, n, &mut trng).expect("valid batch");
            // tracked tuple: the first r distinct indices
            let mut avg = 0.0f64;
            for i in 0..n {
                let row = batch.row(i);
                let chi: f64 = (0..r).map(|k| row[k] as f64).product();
                avg += chi * c_c;
            }
            avg /= n as f64;
            let mut worst: f64 = 0.0;
            for tuple in &tuples {
                let mut acc = 0.0f64;
                for i in 0..n {
                    let row = batch.row(i);
                    let mut prod = 1.0f64;
                    for &j in tuple {
                        prod *= row[j - 1] as f64;
                    }
                    acc += prod;
                }
                worst = worst.max((c_c * acc / n as f64).abs());
            }
            (avg, worst > kappa_s)
        })
        .collect();

    let averages: Vec<f64> = results.iter().map(|(a, _)| *a).collect();
    let mean = averages.iter().sum::<f64>() / trials as f64;
    let var = averages.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / (trials - 1) as f64;
    let violations = results.iter().filter(|(_, v)| *v).count();
    Ok(StaticLatentReport {
        c_c,
        n,
        trials,
        std_of_average: var.sqrt(),
        theory_std: c_c.abs() / (n as f64).sqrt(),
        mean_of_average: mean,
        kappa_violation_frequency: violations as f64 / trials as f64,
        kappa_s,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct TaylorComponent {
    pub ell: usize,
    pub coeff: f64,
    pub mean: f64,
    pub std: f64,
    /// Whether the per-sample value is constant across the batch.
    pub sample_stable: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct DynamicLatentReport {
    pub r: usize,
    pub m: usize,
    pub n: usize,
    pub components: Vec<TaylorComponent>,
    /// Per-sample variance of the full joint contraction Ψ_R.
    pub dynamic_variance: f64,
    /// Per-sample variance of the matched static-latent contraction
    /// ⟨x_{j1}v, …, x_{jr}v, c_s, y·u⟩ on the same data (identically zero
    /// on the target tuple: the parity constraint freezes it).
    pub static_variance: f64,
    pub dynamic_mean: f64,
    pub static_value: f64,
}

/// Decompose the joint interaction Ψ_R = ⟨x_{j1}v,…,x_{jr}v, h_m, y·u⟩ by
/// the Taylor order ℓ of h_m = φ(ẑ_m) at uniform attention, and compare its
/// sample variance with the matched static-latent probe.
pub fn dynamic_latent_probe(
    n: usize,
    m: usize,
    r: usize,
    d_model: usize,
    ffn: &FfnPoly,
    seed: u64,
) -> Result<DynamicLatentReport> {
    if n < 2 {
        return Err(Error::invalid("need at least two samples".to_string()));
    }
    let mut rng = substream(seed, "dynamic-latent-setup");
    let basis = EmbeddingBasis::sample_uniform(d_model, &mut rng);
    let c_s: Vec<f64> = (0..d_model).map(|_| rng.random_range(-1.0..1.0)).collect();
    let support: Vec<usize> = (1..=r).collect();
    let mut brng = substream(seed, "dynamic-latent-batch");
    let batch = sample_lab_batch(m, &support, n, &mut brng)?;

    let coeffs = [(0usize, ffn.a0), (2, ffn.a2), (4, ffn.a4)];
    // ⟨u, v^{⊙(r+ℓ)}⟩ per component and the static constant ⟨u, v^{⊙r}⊙c_s⟩
    let c_per_ell: Vec<f64> = coeffs.iter().map(|(ell, _)| c_signal(&basis, r + ell)).collect();
    let c_static = {
        let mut acc = KahanSum::default();
        for i in 0..d_model {
            acc.add(basis.u[i] * basis.v[i].powi(r as i32) * c_s[i]);
        }
        acc.value()
    };

    let width = (m - 1) as f64;
    let mut comp_vals: Vec<Vec<f64>> = vec![Vec::with_capacity(n); coeffs.len()];
    let mut totals: Vec<f64> = Vec::with_capacity(n);
    let mut statics: Vec<f64> = Vec::with_capacity(n);
    for i in 0..n {
        let row = batch.row(i);
        let y = batch.labels[i] as f64;
        let chi: f64 = support.iter().map(|&j| row[j - 1] as f64).product();
        let s = row.iter().map(|&b| b as f64).sum::<f64>() / width;
        let mut total = 0.0;
        for (slot, (ell, a)) in coeffs.iter().enumerate() {
            // ψ_ℓ = a·s^ℓ·χ_R·y·⟨u, v^{⊙(r+ℓ)}⟩
            let val = a * s.powi(*ell as i32) * chi * y * c_per_ell[slot];
            comp_vals[slot].push(val);
            total += val;
        }
        totals.push(total);
        statics.push(chi * y * c_static);
    }

    let stats = |vals: &[f64]| -> (f64, f64) {
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / (vals.len() - 1).max(1) as f64;
        (mean, var)
    };
    let components = coeffs
        .iter()
        .zip(&comp_vals)
        .map(|((ell, a), vals)| {
            let (mean, var) = stats(vals);
            let first = vals[0];
            TaylorComponent {
                ell: *ell,
                coeff: *a,
                mean,
                std: var.sqrt(),
                sample_stable: vals.iter().all(|v| *v == first),
            }
        })
        .collect();
    let (dmean, dvar) = stats(&totals);
    let (_, svar) = stats(&statics);
    Ok(DynamicLatentReport {
        r,
        m,
        n,
        components,
        dynamic_variance: dvar,
        static_variance: svar,
        dynamic_mean: dmean,
        static_value: statics[0],
    })
}

/// Interaction coefficients γ_r of the quartic family.
pub fn taylor_coeffs(poly: &FfnPoly) -> [f64; 4] {
    poly.taylor_coeffs()
}
