//! Response-pair selection methods.
//!
//! Every method maps one prompt's candidate set (plus reward estimates or
//! judge access, depending on the method) to an ordered pair of candidate
//! ids. Deterministic scans break ties towards the lowest index;
//! MaxMinLCB breaks epsilon-ties at random.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Draws;
use crate::types::{CandidateSet, RewardEstimate, lcb_pref_prob, pair_width, ucb_pref_prob};

pub const DEFAULT_EPSILON: f64 = 1e-9;
pub const DEFAULT_MAXITER: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Random,
    MaxMin,
    UltraFeedback,
    DeltaQwen,
    InfoMax,
    Dts,
    MaxMinLcb,
    Drts,
    DeltaUcb,
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::Random,
        Method::MaxMin,
        Method::UltraFeedback,
        Method::DeltaQwen,
        Method::InfoMax,
        Method::Dts,
        Method::MaxMinLcb,
        Method::Drts,
        Method::DeltaUcb,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Random => "random",
            Method::MaxMin => "maxmin",
            Method::UltraFeedback => "ultrafeedback",
            Method::DeltaQwen => "deltaqwen",
            Method::InfoMax => "infomax",
            Method::Dts => "dts",
            Method::MaxMinLcb => "maxminlcb",
            Method::Drts => "drts",
            Method::DeltaUcb => "deltaucb",
        }
    }

    /// Whether the method reads ENN reward estimates.
    pub fn uses_estimates(self) -> bool {
        matches!(
            self,
            Method::InfoMax | Method::Dts | Method::MaxMinLcb | Method::Drts | Method::DeltaUcb
        )
    }

    /// Whether the method queries the judge during selection.
    pub fn uses_judge(self) -> bool {
        matches!(self, Method::MaxMin | Method::UltraFeedback)
    }

    pub fn valid_names() -> String {
        Method::ALL.iter().map(|m| m.name()).collect::<Vec<_>>().join(", ")
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown method '{s}'; valid methods: {}",
                    Method::valid_names()
                ))
            })
    }
}

/// Judge capability handed to the judge-based heuristics.
pub trait JudgeAccess {
    /// Overall score in [1, 5] for the candidate at `index`.
    fn overall_score(&mut self, index: usize) -> Result<f64>;
}

/// A judge backed by a fixed score table.
#[derive(Debug, Clone)]
pub struct FixedScores {
    scores: Vec<f64>,
    pub queries: usize,
}

impl FixedScores {
    pub fn new(scores: Vec<f64>) -> Self {
        Self { scores, queries: 0 }
    }
}

impl JudgeAccess for FixedScores {
    fn overall_score(&mut self, index: usize) -> Result<f64> {
        self.queries += 1;
        self.scores
            .get(index)
            .copied()
            .ok_or_else(|| Error::Selection(format!("no score for candidate {index}")))
    }
}

/// Strong/weak generator ids for DeltaQwen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorPair {
    pub strong: usize,
    pub weak: usize,
}

pub struct SelectionContext<'a> {
    pub candidates: &'a CandidateSet,
    pub estimates: Option<&'a [RewardEstimate]>,
    pub judge: Option<&'a mut dyn JudgeAccess>,
    pub rng: &'a mut dyn Draws,
    pub epsilon: f64,
    pub maxiter: usize,
}

impl<'a> SelectionContext<'a> {
    pub fn new(candidates: &'a CandidateSet, rng: &'a mut dyn Draws) -> Self {
        Self {
            candidates,
            estimates: None,
            judge: None,
            rng,
            epsilon: DEFAULT_EPSILON,
            maxiter: DEFAULT_MAXITER,
        }
    }

    pub fn with_estimates(mut self, estimates: &'a [RewardEstimate]) -> Self {
        self.estimates = Some(estimates);
        self
    }

    pub fn with_judge(mut self, judge: &'a mut dyn JudgeAccess) -> Self {
        self.judge = Some(judge);
        self
    }

    fn size(&self) -> Result<usize> {
        let m = self.candidates.len();
        if m < 2 {
            return Err(Error::Selection(format!("need at least 2 candidates, got {m}")));
        }
        Ok(m)
    }

    fn estimates(&self) -> Result<&'a [RewardEstimate]> {
        let est = self
            .estimates
            .ok_or_else(|| Error::Selection("method requires reward estimates".into()))?;
        if est.len() != self.candidates.len() {
            return Err(Error::Selection(format!(
                "{} estimates for {} candidates",
                est.len(),
                self.candidates.len()
            )));
        }
        Ok(est)
    }

    fn id(&self, index: usize) -> usize {
        self.candidates.candidates[index].candidate_id
    }

    fn pair(&self, first: usize, second: usize, annotations_spent: usize, fallback_used: bool) -> SelectedPair {
        SelectedPair {
            first_id: self.id(first),
            second_id: self.id(second),
            annotations_spent,
            fallback_used,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectedPair {
    pub first_id: usize,
    pub second_id: usize,
    /// Judge queries consumed by the method itself.
    pub annotations_spent: usize,
    pub fallback_used: bool,
}

/// Dispatch by registry entry. DeltaQwen needs `generators`.
pub fn select(
    method: Method,
    ctx: &mut SelectionContext<'_>,
    generators: Option<GeneratorPair>,
) -> Result<SelectedPair> {
    match method {
        Method::Random => select_random(ctx),
        Method::MaxMin => select_maxmin(ctx),
        Method::UltraFeedback => select_ultrafeedback(ctx),
        Method::DeltaQwen => {
            let g = generators.ok_or_else(|| {
                Error::Config("deltaqwen requires strong and weak generator ids".into())
            })?;
            select_deltaqwen(ctx, g.strong, g.weak)
        }
        Method::InfoMax => select_infomax(ctx),
        Method::Dts => select_dts(ctx),
        Method::MaxMinLcb => select_maxminlcb(ctx),
        Method::Drts => select_drts(ctx),
        Method::DeltaUcb => select_deltaucb(ctx),
    }
}

/// Uniform index in `0..m` excluding `skip`.
fn uniform_other(rng: &mut dyn Draws, m: usize, skip: usize) -> usize {
    let k = rng.index(m - 1);
    if k >= skip { k + 1 } else { k }
}

pub fn select_random(ctx: &mut SelectionContext<'_>) -> Result<SelectedPair> {
    let m = ctx.size()?;
    let first = ctx.rng.index(m);
    let second = uniform_other(ctx.rng, m, first);
    Ok(ctx.pair(first, second, 0, false))
}

pub fn select_maxmin(ctx: &mut SelectionContext<'_>) -> Result<SelectedPair> {
    let m = ctx.size()?;
    let judge = ctx
        .judge
        .as_deref_mut()
        .ok_or_else(|| Error::Selection("maxmin requires judge access".into()))?;
    let scores = (0..m)
        .map(|j| judge.overall_score(j))
        .collect::<Result<Vec<f64>>>()?;
    let mut best = 0;
    for j in 1..m {
        if scores[j] > scores[best] {
            best = j;
        }
    }
    let mut worst = if best == 0 { 1 } else { 0 };
    for j in 0..m {
        if j != best && scores[j] < scores[worst] {
            worst = j;
        }
    }
    Ok(ctx.pair(best, worst, m, false))
}

pub fn select_ultrafeedback(ctx: &mut SelectionContext<'_>) -> Result<SelectedPair> {
    let m = ctx.size()?;
    if m < 4 {
        return Err(Error::Selection(format!("ultrafeedback needs at least 4 candidates, got {m}")));
    }
    let mut pool: Vec<usize> = (0..m).collect();
    for i in 0..4 {
        let k = i + ctx.rng.index(m - i);
        pool.swap(i, k);
    }
    let sample = &pool[..4];
    let judge = ctx
        .judge
        .as_deref_mut()
        .ok_or_else(|| Error::Selection("ultrafeedback requires judge access".into()))?;
    let scores = sample
        .iter()
        .map(|&j| judge.overall_score(j))
        .collect::<Result<Vec<f64>>>()?;
    let mut best = 0;
    for i in 1..4 {
        if scores[i] > scores[best] || (scores[i] == scores[best] && sample[i] < sample[best]) {
            best = i;
        }
    }
    let rest: Vec<usize> = (0..4).filter(|&i| i != best).map(|i| sample[i]).collect();
    let second = rest[ctx.rng.index(3)];
    Ok(ctx.pair(sample[best], second, 4, false))
}

pub fn select_deltaqwen(
    ctx: &mut SelectionContext<'_>,
    strong_generator: usize,
    weak_generator: usize,
) -> Result<SelectedPair> {
    ctx.size()?;
    let find = |g: usize| -> Result<usize> {
        let hits: Vec<usize> = ctx
            .candidates
            .candidates
            .iter()
            .enumerate()
            .filter(|(_, c)| c.generator_id == g)
            .map(|(i, _)| i)
            .collect();
        match hits.as_slice() {
            [i] => Ok(*i),
            [] => Err(Error::Selection(format!("no candidate from generator {g}"))),
            _ => Err(Error::Selection(format!(
                "{} candidates from generator {g}, expected exactly one",
                hits.len()
            ))),
        }
    };
    let strong = find(strong_generator)?;
    let weak = find(weak_generator)?;
    if strong == weak {
        return Err(Error::Selection("strong and weak generator coincide".into()));
    }
    Ok(ctx.pair(strong, weak, 0, false))
}

/// Lexicographically first ordered pair `(j, k)`, `j != k`, maximising `score`.
fn argmax_ordered_pair(
    m: usize,
    mut score: impl FnMut(usize, usize) -> Result<f64>,
) -> Result<(usize, usize)> {
    let mut best = (0, 1);
    let mut best_val = f64::NEG_INFINITY;
    for j in 0..m {
        for k in 0..m {
            if j == k {
                continue;
            }
            let v = score(j, k)?;
            if v > best_val {
                best_val = v;
                best = (j, k);
            }
        }
    }
    Ok(best)
}

pub fn select_infomax(ctx: &mut SelectionContext<'_>) -> Result<SelectedPair> {
    let m = ctx.size()?;
    let est = ctx.estimates()?;
    let (j, k) = argmax_ordered_pair(m, |j, k| pair_width(&est[j], &est[k]))?;
    Ok(ctx.pair(j, k, 0, false))
}

pub fn select_deltaucb(ctx: &mut SelectionContext<'_>) -> Result<SelectedPair> {
    let m = ctx.size()?;
    let est = ctx.estimates()?;
    let (j, k) = argmax_ordered_pair(m, |j, k| ucb_pref_prob(&est[j], &est[k]))?;
    Ok(ctx.pair(j, k, 0, false))
}

/// Draw `u_j ~ U[lower_j, upper_j]` for each candidate (one uniform each, in
/// index order) and return the first index of the maximum.
pub fn thompson_draw(lower: &[f64], upper: &[f64], rng: &mut dyn Draws) -> usize {
    debug_assert_eq!(lower.len(), upper.len());
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (j, (&lo, &hi)) in lower.iter().zip(upper).enumerate() {
        let u = lo + (hi - lo) * rng.uniform();
        if u > best_val {
            best_val = u;
            best = j;
        }
    }
    best
}

fn bounds(est: &[RewardEstimate]) -> (Vec<f64>, Vec<f64>) {
    est.iter().map(|e| (e.lower(), e.upper())).unzip()
}

/// Shared resampling loop: `second` is redrawn up to `maxiter` times until it
/// differs from `first`, then falls back to a uniform pick among the rest.
fn resample_distinct(
    ctx: &mut SelectionContext<'_>,
    m: usize,
    first: usize,
    second_lower: &[f64],
    second_upper: &[f64],
) -> SelectedPair {
    for _ in 0..ctx.maxiter {
        let j = thompson_draw(second_lower, second_upper, ctx.rng);
        if j != first {
            return ctx.pair(first, j, 0, false);
        }
    }
    let j = uniform_other(ctx.rng, m, first);
    ctx.pair(first, j, 0, true)
}

pub fn select_dts(ctx: &mut SelectionContext<'_>) -> Result<SelectedPair> {
    let m = ctx.size()?;
    let (lower, upper) = bounds(ctx.estimates()?);
    let first = thompson_draw(&lower, &upper, ctx.rng);
    Ok(resample_distinct(ctx, m, first, &lower, &upper))
}

pub fn select_drts(ctx: &mut SelectionContext<'_>) -> Result<SelectedPair> {
    let m = ctx.size()?;
    let (lower, upper) = bounds(ctx.estimates()?);
    let first = thompson_draw(&lower, &upper, ctx.rng);
    let rev_lower: Vec<f64> = upper.iter().map(|u| -u).collect();
    let rev_upper: Vec<f64> = lower.iter().map(|l| -l).collect();
    Ok(resample_distinct(ctx, m, first, &rev_lower, &rev_upper))
}

/// Uniform pick from a non-empty tie set; always consumes one draw.
fn random_tie_break(ties: &[usize], rng: &mut dyn Draws) -> usize {
    ties[rng.index(ties.len())]
}

fn within(value: f64, target: f64, epsilon: f64) -> bool {
    value == target || (value - target).abs() < epsilon
}

pub fn select_maxminlcb(ctx: &mut SelectionContext<'_>) -> Result<SelectedPair> {
    let m = ctx.size()?;
    if ctx.epsilon.is_nan() || ctx.epsilon < 0.0 {
        return Err(Error::Config(format!("epsilon must be >= 0, got {}", ctx.epsilon)));
    }
    let est = ctx.estimates()?;
    let mut lcb = vec![f64::NEG_INFINITY; m * m];
    for j in 0..m {
        for k in 0..m {
            if j != k {
                lcb[j * m + k] = lcb_pref_prob(&est[j], &est[k])?;
            }
        }
    }
    let worst_case: Vec<f64> = (0..m)
        .map(|j| {
            (0..m)
                .filter(|&k| k != j)
                .map(|k| lcb[j * m + k])
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let top = worst_case.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let first_ties: Vec<usize> = (0..m)
        .filter(|&j| within(worst_case[j], top, ctx.epsilon))
        .collect();
    let first = random_tie_break(&first_ties, ctx.rng);

    let row = &lcb[first * m..(first + 1) * m];
    let weakest = (0..m)
        .filter(|&k| k != first)
        .map(|k| row[k])
        .fold(f64::INFINITY, f64::min);
    let second_ties: Vec<usize> = (0..m)
        .filter(|&k| k != first && within(row[k], weakest, ctx.epsilon))
        .collect();
    let second = random_tie_break(&second_ties, ctx.rng);
    Ok(ctx.pair(first, second, 0, false))
}
