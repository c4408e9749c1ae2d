//! Effect estimation (Yates, contrasts) and Mann-Whitney significance.

use std::cmp::Ordering;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::design::{term_label, DesignMatrix};

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("expected {expected} responses for k = {k}, got {got}")]
    YatesLength { k: usize, expected: usize, got: usize },
    #[error("column has {column} entries but there are {responses} responses")]
    LengthMismatch { column: usize, responses: usize },
    #[error("column is not balanced ({plus} high vs {minus} low)")]
    Unbalanced { plus: usize, minus: usize },
    #[error("column entries must be -1 or +1")]
    NotTwoLevel,
    #[error("interaction term is empty")]
    EmptyTerm,
    #[error("factor index {0} out of range")]
    FactorIndex(usize),
    #[error("sample is empty")]
    EmptySample,
    #[error("non-finite value in sample")]
    NonFinite,
    #[error("alpha must lie strictly between 0 and 1, got {0}")]
    Alpha(f64),
    #[error("response set has {responses} runs but the design has {runs}")]
    Alignment { runs: usize, responses: usize },
    #[error("run {0} has no replicates")]
    EmptyRun(usize),
    #[error("factor {0} has no available runs at one of its levels")]
    LevelUnavailable(String),
    #[error("{0}")]
    Csv(String),
}

/// Which quantity a response set measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Energy,
    Time,
    Power,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Energy, Metric::Time, Metric::Power];

    pub fn unit(self) -> &'static str {
        match self {
            Metric::Energy => "J",
            Metric::Time => "s",
            Metric::Power => "W",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Energy => "energy",
            Metric::Time => "time",
            Metric::Power => "power",
        })
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "energy" => Ok(Metric::Energy),
            "time" => Ok(Metric::Time),
            "power" => Ok(Metric::Power),
            other => Err(format!("unknown metric {other:?} (expected energy, time or power)")),
        }
    }
}

/// A set of factor indices; empty is the grand-mean (identity) term.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Term(Vec<usize>);

impl Term {
    pub fn new(mut factors: Vec<usize>) -> Self {
        factors.sort_unstable();
        factors.dedup();
        Term(factors)
    }

    pub fn main(factor: usize) -> Self {
        Term(vec![factor])
    }

    pub fn factors(&self) -> &[usize] {
        &self.0
    }

    pub fn is_identity(&self) -> bool {
        self.0.is_empty()
    }

    pub fn order(&self) -> usize {
        self.0.len()
    }

    /// Term for position `index` of a standard-order listing (bit j = factor j).
    pub fn from_standard_index(index: usize) -> Self {
        Term((0..usize::BITS as usize).filter(|j| index >> j & 1 == 1).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestConfig {
    pub alpha: f64,
    /// Use the exact null distribution when `n1 + n2` is at most this and there are no ties.
    pub exact_threshold: usize,
}

impl Default for TestConfig {
    fn default() -> Self {
        TestConfig {
            alpha: 0.05,
            exact_threshold: 20,
        }
    }
}

impl TestConfig {
    pub fn with_alpha(alpha: f64) -> Result<Self, StatsError> {
        let cfg = TestConfig {
            alpha,
            ..TestConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), StatsError> {
        if self.alpha > 0.0 && self.alpha < 1.0 {
            Ok(())
        } else {
            Err(StatsError::Alpha(self.alpha))
        }
    }
}

/// Yates's algorithm over `2^k` responses in standard order.
///
/// Returns `2^k` entries: the grand mean first, then effects for `A`, `B`,
/// `AB`, `C`, ... (the term at position `i` holds the factors whose bits are
/// set in `i`).
pub fn yates_effects(responses: &[f64], k: usize) -> Result<Vec<(Term, f64)>, StatsError> {
    let expected = 1usize.checked_shl(k as u32).filter(|_| k < usize::BITS as usize);
    if expected != Some(responses.len()) {
        return Err(StatsError::YatesLength {
            k,
            expected: expected.unwrap_or(0),
            got: responses.len(),
        });
    }
    let n = responses.len();
    let half = n / 2;
    let mut col = responses.to_vec();
    let mut next = vec![0.0; n];
    for _ in 0..k {
        for i in 0..half {
            next[i] = col[2 * i] + col[2 * i + 1];
            next[half + i] = col[2 * i + 1] - col[2 * i];
        }
        std::mem::swap(&mut col, &mut next);
    }
    let divisor = if k == 0 { 1.0 } else { (half) as f64 };
    Ok(col
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            let scaled = if i == 0 { v / n as f64 } else { v / divisor };
            (Term::from_standard_index(i), scaled)
        })
        .collect())
}

/// Mean response where `column` is +1 minus mean where it is -1.
pub fn contrast_effect(column: &[i8], responses: &[f64]) -> Result<f64, StatsError> {
    if column.len() != responses.len() {
        return Err(StatsError::LengthMismatch {
            column: column.len(),
            responses: responses.len(),
        });
    }
    let (mut plus, mut minus) = (0usize, 0usize);
    let (mut sum_plus, mut sum_minus) = (0.0, 0.0);
    for (&s, &y) in column.iter().zip(responses) {
        match s {
            1 => {
                plus += 1;
                sum_plus += y;
            }
            -1 => {
                minus += 1;
                sum_minus += y;
            }
            _ => return Err(StatsError::NotTwoLevel),
        }
    }
    if plus != minus || plus == 0 {
        return Err(StatsError::Unbalanced { plus, minus });
    }
    Ok(sum_plus / plus as f64 - sum_minus / minus as f64)
}

/// Contrast on the elementwise product of the term's columns.
pub fn interaction_effect(d: &DesignMatrix, term: &Term, responses: &[f64]) -> Result<f64, StatsError> {
    if term.is_identity() {
        return Err(StatsError::EmptyTerm);
    }
    if let Some(&f) = term.factors().iter().find(|&&f| f >= d.n_factors()) {
        return Err(StatsError::FactorIndex(f));
    }
    contrast_effect(&d.product_column(term.factors()), responses)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MannWhitney {
    /// `min(U_a, U_b)`.
    pub u: f64,
    /// U for the first sample: its rank sum minus `n1(n1+1)/2`.
    pub u_a: f64,
    pub p_value: f64,
    pub exact: bool,
}

/// Midranks (1-based) of `values` and the tie correction sum `Σ(t³ - t)`.
pub(crate) fn midranks(values: &[f64]) -> (Vec<f64>, f64) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap_or(Ordering::Equal));
    let mut ranks = vec![0.0; values.len()];
    let mut tie_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j + 1) as f64 / 2.0;
        for &idx in &order[i..j] {
            ranks[idx] = rank;
        }
        let t = (j - i) as f64;
        tie_sum += t * t * t - t;
        i = j;
    }
    (ranks, tie_sum)
}

/// Number of arrangements giving each value of U, for `n1` and `n2`
/// tie-free observations. Index `u` holds the count; the sum is `C(n1+n2, n1)`.
pub(crate) fn exact_u_counts(n1: usize, n2: usize) -> Vec<u128> {
    // counts[a][b] is the distribution for sizes (a, b); built with the
    // recurrence f(a, b, u) = f(a-1, b, u-b) + f(a, b-1, u).
    let mut prev: Vec<Vec<u128>> = (0..=n2).map(|_| vec![1]).collect();
    for a in 1..=n1 {
        let mut cur: Vec<Vec<u128>> = Vec::with_capacity(n2 + 1);
        cur.push(vec![1]);
        for b in 1..=n2 {
            let mut dist = vec![0u128; a * b + 1];
            for (u, &c) in prev[b].iter().enumerate() {
                dist[u + b] += c;
            }
            for (u, &c) in cur[b - 1].iter().enumerate() {
                dist[u] += c;
            }
            cur.push(dist);
        }
        prev = cur;
    }
    prev.swap_remove(n2)
}

fn normal_two_sided(u: f64, n1: f64, n2: f64, tie_sum: f64) -> f64 {
    let n = n1 + n2;
    let mean = n1 * n2 / 2.0;
    let var = n1 * n2 / 12.0 * ((n + 1.0) - tie_sum / (n * (n - 1.0)));
    if var <= 0.0 || !var.is_finite() {
        return 1.0;
    }
    let z = ((u - mean).abs() - 0.5).max(0.0) / var.sqrt();
    libm::erfc(z / std::f64::consts::SQRT_2)
}

/// Core of the U test once ranks are known.
pub(crate) fn u_test_from_ranks(
    rank_sum_a: f64,
    n1: usize,
    n2: usize,
    tie_sum: f64,
    cfg: &TestConfig,
) -> MannWhitney {
    let (f1, f2) = (n1 as f64, n2 as f64);
    let u_a = rank_sum_a - f1 * (f1 + 1.0) / 2.0;
    let u = u_a.min(f1 * f2 - u_a);
    let exact = tie_sum == 0.0 && n1 + n2 <= cfg.exact_threshold;
    let p = if exact {
        let counts = exact_u_counts(n1, n2);
        let total: u128 = counts.iter().sum();
        // tie-free, so U is an integer
        let cut = u.round() as usize;
        let tail: u128 = counts[..=cut].iter().sum();
        (2 * tail) as f64 / total as f64
    } else {
        normal_two_sided(u, f1, f2, tie_sum)
    };
    MannWhitney {
        u,
        u_a,
        p_value: p.clamp(f64::MIN_POSITIVE, 1.0),
        exact,
    }
}

/// Two-sided Mann-Whitney U test with midranks for ties.
///
/// Small tie-free samples (`n1 + n2 <= cfg.exact_threshold`) use the exact
/// null distribution; otherwise the normal approximation with tie-corrected
/// variance and a 0.5 continuity correction.
pub fn mann_whitney(a: &[f64], b: &[f64], cfg: &TestConfig) -> Result<MannWhitney, StatsError> {
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::EmptySample);
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (ranks, tie_sum) = midranks(&pooled);
    let rank_sum_a: f64 = ranks[..a.len()].iter().sum();
    Ok(u_test_from_ranks(rank_sum_a, a.len(), b.len(), tie_sum, cfg))
}

/// Replicate measurements per design run. `None` marks an unavailable run.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseSet {
    pub metric: Metric,
    pub runs: Vec<Option<Vec<f64>>>,
}

impl ResponseSet {
    pub fn new(metric: Metric, runs: Vec<Option<Vec<f64>>>) -> Result<Self, StatsError> {
        for (i, run) in runs.iter().enumerate() {
            if let Some(values) = run {
                if values.is_empty() {
                    return Err(StatsError::EmptyRun(i));
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(StatsError::NonFinite);
                }
            }
        }
        Ok(ResponseSet { metric, runs })
    }

    /// Every run available with the given replicates.
    pub fn complete(metric: Metric, runs: Vec<Vec<f64>>) -> Result<Self, StatsError> {
        Self::new(metric, runs.into_iter().map(Some).collect())
    }

    pub fn run_means(&self) -> Vec<Option<f64>> {
        self.runs
            .iter()
            .map(|r| r.as_ref().map(|v| v.iter().sum::<f64>() / v.len() as f64))
            .collect()
    }

    pub fn unavailable_runs(&self) -> Vec<usize> {
        self.runs.iter().enumerate().filter(|(_, r)| r.is_none()).map(|(i, _)| i).collect()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        ResponseSet {
            metric: self.metric,
            runs: self
                .runs
                .iter()
                .map(|r| r.as_ref().map(|v| v.iter().map(|x| x * factor).collect()))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EffectEstimate {
    pub term: Term,
    pub label: String,
    /// Mean at +1 minus mean at -1, in response units.
    pub effect: f64,
    /// `100 * effect / grand_mean`; 0 when the grand mean is 0.
    pub percent_effect: f64,
    pub u_statistic: f64,
    pub p_value: f64,
    pub significant: bool,
}

/// Per-factor effects and significance for a design and its responses.
#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub metric: Metric,
    pub grand_mean: f64,
    pub estimates: Vec<EffectEstimate>,
    /// Runs left out because they were unavailable.
    pub excluded_runs: Vec<usize>,
    /// Human-readable notes, e.g. which contrasts lost balance.
    pub notes: Vec<String>,
    pub alpha: f64,
}

/// Main-effect estimates for every factor of `d`.
///
/// The effect is the contrast on run means; significance compares all
/// replicates taken at +1 against all taken at -1. Unavailable runs are
/// dropped from both; any factor whose levels then hold unequal run counts
/// is named in [`Analysis::notes`].
pub fn analyze_design(d: &DesignMatrix, r: &ResponseSet, cfg: &TestConfig) -> Result<Analysis, StatsError> {
    cfg.validate()?;
    if r.runs.len() != d.n_runs() {
        return Err(StatsError::Alignment {
            runs: d.n_runs(),
            responses: r.runs.len(),
        });
    }
    let means = r.run_means();
    let excluded = r.unavailable_runs();

    // Pool every available sample once; the +1/-1 split changes per factor
    // but the pooled ranks do not.
    let mut pooled = Vec::new();
    let mut owner = Vec::new();
    for (run, values) in r.runs.iter().enumerate() {
        if let Some(values) = values {
            pooled.extend_from_slice(values);
            owner.extend(std::iter::repeat_n(run, values.len()));
        }
    }
    if pooled.is_empty() {
        return Err(StatsError::EmptySample);
    }
    let grand_mean = pooled.iter().sum::<f64>() / pooled.len() as f64;
    let (ranks, tie_sum) = midranks(&pooled);

    let mut notes = Vec::new();
    if !excluded.is_empty() {
        notes.push(format!(
            "{} unavailable run(s) excluded: {:?}",
            excluded.len(),
            excluded
        ));
    }
    let mut estimates = Vec::with_capacity(d.n_factors());
    for f in 0..d.n_factors() {
        let label = d.names()[f].clone();
        let (mut sum_hi, mut n_hi, mut sum_lo, mut n_lo) = (0.0, 0usize, 0.0, 0usize);
        for (run, mean) in means.iter().enumerate() {
            if let Some(m) = mean {
                if d.sign(run, f) > 0 {
                    sum_hi += m;
                    n_hi += 1;
                } else {
                    sum_lo += m;
                    n_lo += 1;
                }
            }
        }
        if n_hi == 0 || n_lo == 0 {
            return Err(StatsError::LevelUnavailable(label));
        }
        if n_hi != n_lo {
            notes.push(format!(
                "{label}: contrast unbalanced after exclusions ({n_hi} high / {n_lo} low runs); aliasing is no longer exact"
            ));
        }
        let effect = sum_hi / n_hi as f64 - sum_lo / n_lo as f64;

        let (mut rank_sum_hi, mut samples_hi) = (0.0, 0usize);
        for (i, &run) in owner.iter().enumerate() {
            if d.sign(run, f) > 0 {
                rank_sum_hi += ranks[i];
                samples_hi += 1;
            }
        }
        let test = u_test_from_ranks(rank_sum_hi, samples_hi, pooled.len() - samples_hi, tie_sum, cfg);
        let percent_effect = if grand_mean != 0.0 {
            100.0 * effect / grand_mean
        } else {
            0.0
        };
        estimates.push(EffectEstimate {
            term: Term::main(f),
            label,
            effect,
            percent_effect,
            u_statistic: test.u,
            p_value: test.p_value,
            significant: test.p_value < cfg.alpha,
        });
    }
    Ok(Analysis {
        metric: r.metric,
        grand_mean,
        estimates,
        excluded_runs: excluded,
        notes,
        alpha: cfg.alpha,
    })
}

/// Effect of an arbitrary term on the run means of a complete response set,
/// labelled for reports. Shares the contrast path with [`analyze_design`].
pub fn term_estimate(d: &DesignMatrix, term: &Term, r: &ResponseSet) -> Result<(String, f64), StatsError> {
    let means: Option<Vec<f64>> = r.run_means().into_iter().collect();
    let means = means.ok_or(StatsError::EmptySample)?;
    let effect = interaction_effect(d, term, &means)?;
    Ok((term_label(d.names(), term.factors()), effect))
}

/// Up to `k` significant estimates, largest `|percent_effect|` first, ties by label.
pub fn rank_top_flags(estimates: &[EffectEstimate], k: usize) -> Vec<EffectEstimate> {
    let mut sig: Vec<&EffectEstimate> = estimates.iter().filter(|e| e.significant).collect();
    sig.sort_by(|a, b| {
        b.percent_effect
            .abs()
            .partial_cmp(&a.percent_effect.abs())
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.label.cmp(&b.label))
    });
    sig.into_iter().take(k).cloned().collect()
}

/// CSV with columns `term,effect,percent_effect,u,p,significant`.
pub fn write_effects_csv<W: Write>(estimates: &[EffectEstimate], out: W) -> Result<(), StatsError> {
    let err = |e: csv::Error| StatsError::Csv(e.to_string());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["term", "effect", "percent_effect", "u", "p", "significant"])
        .map_err(err)?;
    for e in estimates {
        w.write_record([
            e.label.clone(),
            e.effect.to_string(),
            e.percent_effect.to_string(),
            e.u_statistic.to_string(),
            e.p_value.to_string(),
            e.significant.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| StatsError::Csv(e.to_string()))
}
