//! Independent reference implementations shared by the integration suites.
#![allow(dead_code)]

use activeduel::oracle::candidate_with_utility;
use activeduel::{CandidateSet, RewardEstimate};
use rand::Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

pub fn plain_sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn candidates(m: usize) -> CandidateSet {
    CandidateSet {
        prompt_id: 0,
        candidates: (0..m).map(|j| candidate_with_utility(j, j, vec![], 0.0)).collect(),
    }
}

/// Continuous random estimates; ties have probability zero.
pub fn random_estimates<R: Rng>(rng: &mut R, m: usize, beta: f64) -> Vec<RewardEstimate> {
    (0..m)
        .map(|_| {
            RewardEstimate::new(rng.random_range(-2.0..2.0), rng.random_range(0.0..1.0), beta).unwrap()
        })
        .collect()
}

fn ucb(a: &RewardEstimate, b: &RewardEstimate) -> f64 {
    plain_sigmoid((a.mean() + a.beta() * a.std()) - (b.mean() - b.beta() * b.std()))
}

fn lcb(a: &RewardEstimate, b: &RewardEstimate) -> f64 {
    plain_sigmoid((a.mean() - a.beta() * a.std()) - (b.mean() + b.beta() * b.std()))
}

/// Scan every ordered pair, keeping the first strict improvement.
fn scan_pairs(m: usize, f: impl Fn(usize, usize) -> f64) -> (usize, usize) {
    let mut best = (usize::MAX, usize::MAX);
    let mut best_val = f64::NEG_INFINITY;
    for j in 0..m {
        for k in 0..m {
            if j == k {
                continue;
            }
            let v = f(j, k);
            if best.0 == usize::MAX || v > best_val {
                best = (j, k);
                best_val = v;
            }
        }
    }
    best
}

/// The width is symmetric, so each unordered pair ties with its mirror and
/// the lexicographic rule keeps `j < k`; only those pairs are scanned.
pub fn brute_infomax(est: &[RewardEstimate]) -> (usize, usize) {
    let m = est.len();
    let mut best = (0, 1);
    let mut best_val = f64::NEG_INFINITY;
    for j in 0..m {
        for k in j + 1..m {
            let v = ucb(&est[j], &est[k]) - lcb(&est[j], &est[k]);
            if v > best_val {
                best = (j, k);
                best_val = v;
            }
        }
    }
    best
}

pub fn brute_deltaucb(est: &[RewardEstimate]) -> (usize, usize) {
    scan_pairs(est.len(), |j, k| ucb(&est[j], &est[k]))
}

pub fn brute_maxmin(scores: &[f64]) -> (usize, usize) {
    let mut hi = 0;
    for j in 1..scores.len() {
        if scores[j] > scores[hi] {
            hi = j;
        }
    }
    let mut lo = usize::MAX;
    for j in 0..scores.len() {
        if j != hi && (lo == usize::MAX || scores[j] < scores[lo]) {
            lo = j;
        }
    }
    (hi, lo)
}

/// MaxMinLCB with no ties: the candidate whose worst-case LCB is highest,
/// paired with the opponent it is least sure to beat.
pub fn brute_maxminlcb(est: &[RewardEstimate]) -> (usize, usize) {
    let m = est.len();
    let worst = |j: usize| {
        (0..m).filter(|&k| k != j).map(|k| lcb(&est[j], &est[k])).fold(f64::INFINITY, f64::min)
    };
    let mut first = 0;
    for j in 1..m {
        if worst(j) > worst(first) {
            first = j;
        }
    }
    let mut second = usize::MAX;
    for k in 0..m {
        if k != first && (second == usize::MAX || lcb(&est[first], &est[k]) < lcb(&est[first], &est[second])) {
            second = k;
        }
    }
    (first, second)
}

/// Pearson chi-square goodness of fit. Cells with zero expected probability
/// must be empty; they are dropped from the statistic.
pub fn chi_square_p(observed: &[u64], probs: &[f64]) -> f64 {
    assert_eq!(observed.len(), probs.len());
    let n: u64 = observed.iter().sum();
    let mut stat = 0.0;
    let mut cells = 0;
    for (&o, &p) in observed.iter().zip(probs) {
        if p == 0.0 {
            assert_eq!(o, 0, "observation in a zero-probability cell");
            continue;
        }
        let e = p * n as f64;
        stat += (o as f64 - e).powi(2) / e;
        cells += 1;
    }
    let dist = ChiSquared::new((cells - 1) as f64).unwrap();
    1.0 - dist.cdf(stat)
}

/// Exact law of UltraFeedback's second pick: average over all 4-subsets of a
/// uniform pick among the three non-best members.
pub fn ultrafeedback_second_law(scores: &[f64]) -> Vec<f64> {
    let m = scores.len();
    let mut probs = vec![0.0; m];
    let mut subsets = 0.0;
    for a in 0..m {
        for b in a + 1..m {
            for c in b + 1..m {
                for d in c + 1..m {
                    let s = [a, b, c, d];
                    let best = *s.iter().max_by(|x, y| scores[**x].total_cmp(&scores[**y])).unwrap();
                    for &k in &s {
                        if k != best {
                            probs[k] += 1.0 / 3.0;
                        }
                    }
                    subsets += 1.0;
                }
            }
        }
    }
    probs.iter().map(|p| p / subsets).collect()
}

/// Probability that each uniform `U[lower_j, upper_j]` is the maximum, by
/// midpoint integration of `f_j(x) * prod_{k != j} F_k(x)`.
pub fn thompson_probs(lower: &[f64], upper: &[f64], steps: usize) -> Vec<f64> {
    let lo = lower.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = upper.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let h = (hi - lo) / steps as f64;
    let cdf = |k: usize, x: f64| ((x - lower[k]) / (upper[k] - lower[k])).clamp(0.0, 1.0);
    (0..lower.len())
        .map(|j| {
            (0..steps)
                .map(|i| {
                    let x = lo + (i as f64 + 0.5) * h;
                    if x < lower[j] || x > upper[j] {
                        return 0.0;
                    }
                    let density = 1.0 / (upper[j] - lower[j]);
                    density * (0..lower.len()).filter(|&k| k != j).map(|k| cdf(k, x)).product::<f64>()
                })
                .sum::<f64>()
                * h
        })
        .collect()
}

/// Replays a uniform tape through a step-by-step DTS/DRTS reference.
pub struct Tape<'a> {
    pub u: &'a [f64],
    pub pos: usize,
}

impl Tape<'_> {
    fn next(&mut self) -> f64 {
        let u = self.u[self.pos];
        self.pos += 1;
        u
    }

    fn sample(&mut self, lower: &[f64], upper: &[f64]) -> usize {
        let mut arg = 0;
        let mut val = f64::NEG_INFINITY;
        for j in 0..lower.len() {
            let r = lower[j] + (upper[j] - lower[j]) * self.next();
            if r > val {
                val = r;
                arg = j;
            }
        }
        arg
    }
}

/// DTS (or DRTS when `reverse`) step-through. Returns
/// `(first, second, fallback, uniforms consumed)`.
pub fn step_through(
    est: &[RewardEstimate],
    u: &[f64],
    maxiter: usize,
    reverse: bool,
) -> (usize, usize, bool, usize) {
    let lower: Vec<f64> = est.iter().map(|e| e.lower()).collect();
    let upper: Vec<f64> = est.iter().map(|e| e.upper()).collect();
    let mut tape = Tape { u, pos: 0 };
    let j = tape.sample(&lower, &upper);
    let (l2, u2): (Vec<f64>, Vec<f64>) = if reverse {
        (upper.iter().map(|x| -x).collect(), lower.iter().map(|x| -x).collect())
    } else {
        (lower.clone(), upper.clone())
    };
    for _ in 0..maxiter {
        let k = tape.sample(&l2, &u2);
        if k != j {
            return (j, k, false, tape.pos);
        }
    }
    // Uniform over the m - 1 others, in index order with j removed.
    let m = est.len();
    let r = ((tape.next() * (m - 1) as f64) as usize).min(m - 2);
    let k = if r >= j { r + 1 } else { r };
    (j, k, true, tape.pos)
}
