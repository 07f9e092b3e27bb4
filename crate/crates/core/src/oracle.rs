//! Simulated environment: synthetic generators with latent skill, candidate
//! feature construction, and a Likert-scoring judge.
//!
//! Everything here that touches true utilities is oracle-side. The selection
//! and ENN modules only ever see feature vectors, reward estimates, and judge
//! scores.

use rand::Rng;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{domain, stream};
use crate::selection::JudgeAccess;
use crate::types::{
    Candidate, CandidateSet, PreferenceTriplet, PromptContext, SCORE_MAX, SCORE_MIN,
    TIE_TOLERANCE, sigmoid_unchecked,
};

/// Width of the per-generator style embedding mixed into candidate features.
const GENERATOR_EMBED_DIM: usize = 4;

/// Oracle-private scalar. Its value can only be read through this module.
#[derive(Clone, Copy, PartialEq)]
pub struct Hidden(f64);

impl Hidden {
    pub(crate) fn unknown() -> Self {
        Hidden(f64::NAN)
    }
}

impl std::fmt::Debug for Hidden {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("Hidden(..)")
    }
}

impl Candidate {
    /// A candidate with no oracle-side utility attached.
    pub fn new(candidate_id: usize, generator_id: usize, feature_vec: Vec<f64>) -> Self {
        Self {
            candidate_id,
            generator_id,
            feature_vec,
            true_utility: Hidden::unknown(),
        }
    }
}

/// Oracle-side constructor with an explicit true utility.
pub fn candidate_with_utility(
    candidate_id: usize,
    generator_id: usize,
    feature_vec: Vec<f64>,
    true_utility: f64,
) -> Candidate {
    Candidate {
        candidate_id,
        generator_id,
        feature_vec,
        true_utility: Hidden(true_utility),
    }
}

/// Oracle-side read of a candidate's true utility (analytics only).
pub fn true_utility(candidate: &Candidate) -> f64 {
    candidate.true_utility.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub num_generators: usize,
    pub feature_dim: usize,
    pub context_dim: usize,
    pub quality_noise_std: f64,
    pub aspect_noise_std: f64,
    pub logit_sharpness: f64,
    pub skill_spread: f64,
    pub seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            num_generators: 30,
            feature_dim: 16,
            context_dim: 6,
            quality_noise_std: 0.05,
            aspect_noise_std: 0.1,
            logit_sharpness: 2.0,
            skill_spread: 1.0,
            seed: 0,
        }
    }
}

impl EnvConfig {
    /// Field-level problems, empty when valid.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.num_generators < 2 {
            out.push(format!("env.num_generators: must be >= 2, got {}", self.num_generators));
        }
        if self.feature_dim == 0 {
            out.push("env.feature_dim: must be positive".into());
        }
        if self.context_dim == 0 {
            out.push("env.context_dim: must be positive".into());
        }
        if !(self.quality_noise_std >= 0.0 && self.quality_noise_std.is_finite()) {
            out.push(format!("env.quality_noise_std: must be >= 0, got {}", self.quality_noise_std));
        }
        if !(self.aspect_noise_std >= 0.0 && self.aspect_noise_std.is_finite()) {
            out.push(format!("env.aspect_noise_std: must be >= 0, got {}", self.aspect_noise_std));
        }
        if !(self.logit_sharpness > 0.0 && self.logit_sharpness.is_finite()) {
            out.push(format!("env.logit_sharpness: must be > 0, got {}", self.logit_sharpness));
        }
        if !(self.skill_spread > 0.0 && self.skill_spread.is_finite()) {
            out.push(format!("env.skill_spread: must be > 0, got {}", self.skill_spread));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() { Ok(()) } else { Err(Error::Config(p.join("; "))) }
    }
}

/// Latent description of one synthetic generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorProfile {
    pub generator_id: usize,
    pub base_quality: f64,
    pub skill_vec: Vec<f64>,
    pub style_vec: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aspect {
    Helpfulness,
    Truthfulness,
    Honesty,
    InstructionFollowing,
}

impl Aspect {
    pub const ALL: [Aspect; 4] = [
        Aspect::Helpfulness,
        Aspect::Truthfulness,
        Aspect::Honesty,
        Aspect::InstructionFollowing,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AspectScores {
    /// In [`Aspect::ALL`] order.
    pub aspects: [f64; 4],
    pub overall: f64,
}

impl AspectScores {
    pub fn from_aspects(aspects: [f64; 4]) -> Self {
        let overall = aspects.iter().sum::<f64>() / 4.0;
        Self { aspects, overall }
    }

    pub fn get(&self, aspect: Aspect) -> f64 {
        self.aspects[aspect as usize]
    }
}

/// The synthetic world: generator pool, prompt contexts and feature map.
#[derive(Debug, Clone)]
pub struct Environment {
    config: EnvConfig,
    generators: Vec<GeneratorProfile>,
    /// `feature_dim x latent_dim`, row-major.
    feature_map: Vec<f64>,
}

/// Serialized oracle-side environment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvDump {
    pub oracle_side: bool,
    pub config: EnvConfig,
    pub generators: Vec<GeneratorProfile>,
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

impl Environment {
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        let m = config.num_generators;
        let mut rng = stream(config.seed, domain::GENERATOR, &[]);

        // Evenly spaced base qualities over +-3 skill spreads, assigned to
        // generators in a random order.
        let mut ranks: Vec<usize> = (0..m).collect();
        ranks.shuffle(&mut rng);
        let generators = ranks
            .iter()
            .enumerate()
            .map(|(g, &rank)| {
                let frac = 2.0 * rank as f64 / (m - 1) as f64 - 1.0;
                let skill_vec = (0..config.context_dim)
                    .map(|_| 0.05 * config.skill_spread * normal(&mut rng))
                    .collect();
                let style_vec = (0..GENERATOR_EMBED_DIM).map(|_| normal(&mut rng)).collect();
                GeneratorProfile {
                    generator_id: g,
                    base_quality: 3.0 * config.skill_spread * frac,
                    skill_vec,
                    style_vec,
                }
            })
            .collect();

        let latent = config.context_dim + GENERATOR_EMBED_DIM + 1;
        let mut map_rng = stream(config.seed, domain::FEATURE_MAP, &[]);
        let scale = 1.0 / (latent as f64).sqrt();
        let feature_map = (0..config.feature_dim * latent)
            .map(|_| scale * normal(&mut map_rng))
            .collect();

        Ok(Self { config, generators, feature_map })
    }

    /// Rebuild from a dump, checking that the profiles match the config.
    pub fn from_dump(dump: &EnvDump) -> Result<Self> {
        let env = Self::new(dump.config.clone())?;
        if env.generators != dump.generators {
            return Err(Error::Invalid(
                "environment dump profiles do not match its config".into(),
            ));
        }
        Ok(env)
    }

    pub fn dump(&self) -> EnvDump {
        EnvDump {
            oracle_side: true,
            config: self.config.clone(),
            generators: self.generators.clone(),
        }
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn generators(&self) -> &[GeneratorProfile] {
        &self.generators
    }

    pub fn num_generators(&self) -> usize {
        self.generators.len()
    }

    /// Generator with the highest base quality.
    pub fn strongest_generator(&self) -> usize {
        self.generators
            .iter()
            .max_by(|a, b| a.base_quality.total_cmp(&b.base_quality))
            .map(|g| g.generator_id)
            .unwrap()
    }

    /// Generator with the lowest base quality.
    pub fn weakest_generator(&self) -> usize {
        self.generators
            .iter()
            .min_by(|a, b| a.base_quality.total_cmp(&b.base_quality))
            .map(|g| g.generator_id)
            .unwrap()
    }

    pub fn prompt(&self, prompt_id: usize) -> PromptContext {
        let mut rng = stream(self.config.seed, domain::CONTEXT, &[prompt_id as u64]);
        let context_vec = (0..self.config.context_dim).map(|_| normal(&mut rng)).collect();
        PromptContext { prompt_id, context_vec }
    }

    fn features(&self, context: &[f64], style: &[f64], utility: f64) -> Vec<f64> {
        let latent: Vec<f64> = context
            .iter()
            .chain(style)
            .copied()
            .chain(std::iter::once(utility))
            .collect();
        self.feature_map
            .chunks_exact(latent.len())
            .map(|row| row.iter().zip(&latent).map(|(w, z)| w * z).sum())
            .collect()
    }

    /// Judge target score in [1, 5] for a (noisy) utility.
    fn target_score(&self, utility: f64) -> f64 {
        (SCORE_MIN + 4.0 * sigmoid_unchecked(utility / self.config.skill_spread))
            .clamp(SCORE_MIN, SCORE_MAX)
    }
}

/// One candidate per generator, in a random order. Candidate ids are
/// positions in the returned set.
pub fn env_generate<R: Rng + ?Sized>(
    env: &Environment,
    prompt: &PromptContext,
    rng: &mut R,
) -> Result<CandidateSet> {
    if prompt.context_vec.len() != env.config.context_dim {
        return Err(Error::Dimension {
            expected: env.config.context_dim,
            got: prompt.context_vec.len(),
        });
    }
    let mut order: Vec<usize> = (0..env.generators.len()).collect();
    order.shuffle(rng);
    let candidates = order
        .into_iter()
        .enumerate()
        .map(|(candidate_id, g)| {
            let profile = &env.generators[g];
            let skill: f64 = profile
                .skill_vec
                .iter()
                .zip(&prompt.context_vec)
                .map(|(s, x)| s * x)
                .sum();
            let utility =
                profile.base_quality + skill + env.config.quality_noise_std * normal(rng);
            let feature_vec = env.features(&prompt.context_vec, &profile.style_vec, utility);
            candidate_with_utility(candidate_id, g, feature_vec, utility)
        })
        .collect();
    Ok(CandidateSet { prompt_id: prompt.prompt_id, candidates })
}

/// Judge logits over the scores 1..=5: a quadratic bowl around the target.
pub fn judge_logits<R: Rng + ?Sized>(
    env: &Environment,
    candidate: &Candidate,
    _aspect: Aspect,
    rng: &mut R,
) -> [f64; 5] {
    let noisy = true_utility(candidate) + env.config.aspect_noise_std * normal(rng);
    logits_for_target(env.target_score(noisy), env.config.logit_sharpness)
}

pub(crate) fn logits_for_target(target: f64, sharpness: f64) -> [f64; 5] {
    std::array::from_fn(|i| {
        let k = (i + 1) as f64;
        -sharpness * (k - target).powi(2)
    })
}

/// Expected score `sum_k k * softmax(logits)_k`.
pub fn likert_expected_score(logits: &[f64; 5]) -> Result<f64> {
    if logits.iter().any(|l| l.is_nan()) {
        return Err(Error::InvalidArithmetic("NaN judge logit".into()));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::InvalidArithmetic("judge logits not finite".into()));
    }
    let weights: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let expected = weights
        .iter()
        .enumerate()
        .map(|(i, w)| (i + 1) as f64 * w)
        .sum::<f64>()
        / total;
    Ok(expected.clamp(SCORE_MIN, SCORE_MAX))
}

pub fn judge_score<R: Rng + ?Sized>(
    env: &Environment,
    candidate: &Candidate,
    rng: &mut R,
) -> Result<AspectScores> {
    let mut aspects = [0.0; 4];
    for (slot, aspect) in aspects.iter_mut().zip(Aspect::ALL) {
        *slot = likert_expected_score(&judge_logits(env, candidate, aspect, rng))?;
    }
    Ok(AspectScores::from_aspects(aspects))
}

/// Order two judged candidates into a triplet. Ties within
/// [`TIE_TOLERANCE`] are broken by a fair coin and flagged.
pub(crate) fn order_judged<R: Rng + ?Sized>(
    prompt_id: usize,
    a: &Candidate,
    score_a: f64,
    b: &Candidate,
    score_b: f64,
    rng: &mut R,
) -> PreferenceTriplet {
    let tie = (score_a - score_b).abs() < TIE_TOLERANCE;
    let a_wins = if tie { rng.random::<bool>() } else { score_a > score_b };
    let ((c, cs), (r, rs)) = if a_wins {
        ((a, score_a), (b, score_b))
    } else {
        ((b, score_b), (a, score_a))
    };
    PreferenceTriplet {
        prompt_id,
        chosen_id: c.candidate_id,
        chosen_generator: c.generator_id,
        rejected_id: r.candidate_id,
        rejected_generator: r.generator_id,
        chosen_score: cs,
        rejected_score: rs,
        tie,
        iteration: 0,
        method: String::new(),
        metrics_only: false,
    }
}

/// Judge both candidates and keep the higher overall score as chosen.
/// The caller fills in `iteration` and `method`.
pub fn annotate_pair<R: Rng + ?Sized>(
    env: &Environment,
    prompt_id: usize,
    a: &Candidate,
    b: &Candidate,
    rng: &mut R,
) -> Result<PreferenceTriplet> {
    if a.candidate_id == b.candidate_id {
        return Err(Error::Invalid(format!(
            "prompt {prompt_id}: cannot annotate candidate {} against itself",
            a.candidate_id
        )));
    }
    let sa = judge_score(env, a, rng)?.overall;
    let sb = judge_score(env, b, rng)?.overall;
    Ok(order_judged(prompt_id, a, sa, b, sb, rng))
}

/// Pure Bradley-Terry annotator: `a` wins with probability
/// `s(u_a - u_b)`. Binary feedback is recorded as scores 5 (chosen) and 1.
pub fn annotate_bernoulli<R: Rng + ?Sized>(
    prompt_id: usize,
    a: &Candidate,
    b: &Candidate,
    rng: &mut R,
) -> Result<PreferenceTriplet> {
    if a.candidate_id == b.candidate_id {
        return Err(Error::Invalid(format!(
            "prompt {prompt_id}: cannot annotate candidate {} against itself",
            a.candidate_id
        )));
    }
    let p = sigmoid_unchecked(true_utility(a) - true_utility(b));
    let a_wins = rng.random::<f64>() < p;
    let (c, r) = if a_wins { (a, b) } else { (b, a) };
    Ok(PreferenceTriplet {
        prompt_id,
        chosen_id: c.candidate_id,
        chosen_generator: c.generator_id,
        rejected_id: r.candidate_id,
        rejected_generator: r.generator_id,
        chosen_score: SCORE_MAX,
        rejected_score: SCORE_MIN,
        tie: false,
        iteration: 0,
        method: String::new(),
        metrics_only: false,
    })
}

/// Per-prompt judge with a score cache. Each candidate is judged from its
/// own stream, so a candidate's score does not depend on query order and
/// re-judging reproduces it exactly.
pub struct JudgeSession<'a> {
    env: &'a Environment,
    set: &'a CandidateSet,
    seed: u64,
    cache: Vec<Option<AspectScores>>,
    queries: usize,
}

impl<'a> JudgeSession<'a> {
    pub fn new(env: &'a Environment, set: &'a CandidateSet, seed: u64) -> Self {
        Self {
            env,
            set,
            seed,
            cache: vec![None; set.len()],
            queries: 0,
        }
    }

    /// Judge requests served, including cache hits.
    pub fn queries(&self) -> usize {
        self.queries
    }

    /// Distinct candidates judged so far.
    pub fn judged(&self) -> usize {
        self.cache.iter().filter(|c| c.is_some()).count()
    }

    pub fn scores(&mut self, index: usize) -> Result<AspectScores> {
        let candidate = self.set.candidates.get(index).ok_or_else(|| {
            Error::Invalid(format!("candidate index {index} out of range"))
        })?;
        self.queries += 1;
        if let Some(s) = self.cache[index] {
            return Ok(s);
        }
        let mut rng = stream(
            self.seed,
            domain::JUDGE,
            &[self.set.prompt_id as u64, candidate.candidate_id as u64],
        );
        let s = judge_score(self.env, candidate, &mut rng)?;
        self.cache[index] = Some(s);
        Ok(s)
    }

    /// Annotate the pair `(a, b)` from cached or fresh scores.
    pub fn annotate(&mut self, a: usize, b: usize) -> Result<PreferenceTriplet> {
        if a == b {
            return Err(Error::Invalid(format!(
                "prompt {}: cannot annotate candidate {a} against itself",
                self.set.prompt_id
            )));
        }
        let sa = self.scores(a)?.overall;
        let sb = self.scores(b)?.overall;
        let mut rng = stream(self.seed, domain::TIE_BREAK, &[self.set.prompt_id as u64]);
        Ok(order_judged(
            self.set.prompt_id,
            &self.set.candidates[a],
            sa,
            &self.set.candidates[b],
            sb,
            &mut rng,
        ))
    }
}

impl JudgeAccess for JudgeSession<'_> {
    fn overall_score(&mut self, index: usize) -> Result<f64> {
        Ok(self.scores(index)?.overall)
    }
}
