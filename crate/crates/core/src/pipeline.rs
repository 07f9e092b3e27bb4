//! The batched collection loop: generate, predict, select, annotate, retrain.
//!
//! Prompts are visited in a seeded shuffle and processed `batch_size` at a
//! time. Within a batch every prompt is handled independently from its own
//! random streams; the model is retrained once per batch.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::enn::{EnnConfig, EnnModel, ReplayBuffer, ReplayEntry, TrainReport, enn_init, enn_train, feature_matrix};
use crate::error::{Error, Result};
use crate::oracle::{
    EnvConfig, Environment, JudgeSession, annotate_bernoulli, env_generate, true_utility,
};
use crate::rng::{domain, stream};
use crate::selection::{
    DEFAULT_EPSILON, DEFAULT_MAXITER, GeneratorPair, Method, SelectedPair, SelectionContext, select,
};
use crate::types::{CandidateSet, PreferenceTriplet, RewardEstimate, pair_width};

/// Checkpoint format version.
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OracleKind {
    /// Aspect-wise Likert judge.
    #[default]
    Likert,
    /// Bradley-Terry coin flips on the true utilities.
    Bernoulli,
}

impl std::str::FromStr for OracleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "likert" => Ok(OracleKind::Likert),
            "bernoulli" => Ok(OracleKind::Bernoulli),
            _ => Err(Error::Config(format!(
                "unknown oracle '{s}'; valid oracles: likert, bernoulli"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub env: EnvConfig,
    pub enn: EnnConfig,
    pub method: Method,
    pub epsilon: f64,
    pub maxiter: usize,
    /// DeltaQwen's strong/weak generators. Defaults to the highest and lowest
    /// base-quality generators.
    pub deltaqwen_generators: Option<GeneratorPair>,
    pub num_prompts: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub oracle: OracleKind,
    pub out_dir: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            env: EnvConfig::default(),
            enn: EnnConfig::default(),
            method: Method::Random,
            epsilon: DEFAULT_EPSILON,
            maxiter: DEFAULT_MAXITER,
            deltaqwen_generators: None,
            num_prompts: 1024,
            batch_size: 64,
            seed: 0,
            oracle: OracleKind::Likert,
            out_dir: None,
        }
    }
}

impl RunConfig {
    /// Field-level problems, empty when the config is valid.
    pub fn problems(&self) -> Vec<String> {
        let mut out = self.env.problems();
        out.extend(self.enn.problems());
        if self.batch_size == 0 {
            out.push("batch_size: must be >= 1".into());
        }
        if self.num_prompts < self.batch_size {
            out.push(format!(
                "num_prompts: must be >= batch_size ({}), got {}",
                self.batch_size, self.num_prompts
            ));
        }
        if self.enn.feature_dim != self.env.feature_dim {
            out.push(format!(
                "enn.feature_dim: must equal env.feature_dim ({}), got {}",
                self.env.feature_dim, self.enn.feature_dim
            ));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            out.push(format!("epsilon: must be >= 0, got {}", self.epsilon));
        }
        if self.maxiter == 0 {
            out.push("maxiter: must be >= 1".into());
        }
        if self.method == Method::UltraFeedback && self.env.num_generators < 4 {
            out.push("method: ultrafeedback needs env.num_generators >= 4".into());
        }
        if let Some(g) = self.deltaqwen_generators {
            let m = self.env.num_generators;
            if g.strong >= m || g.weak >= m || g.strong == g.weak {
                out.push(format!(
                    "deltaqwen_generators: need two distinct ids below {m}, got {} and {}",
                    g.strong, g.weak
                ));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() { Ok(()) } else { Err(Error::Config(p.join("; "))) }
    }

    pub fn num_iterations(&self) -> usize {
        self.num_prompts.div_ceil(self.batch_size)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub prompts: usize,
    /// Distinct candidate judgements spent on dataset construction so far.
    pub cumulative_annotations: usize,
    /// Judge requests made by selection methods so far.
    pub cumulative_selection_queries: usize,
    /// Judge requests made to annotate selected pairs so far.
    pub cumulative_pair_queries: usize,
    /// Judge requests made only to score pairs for metrics so far.
    pub cumulative_metric_queries: usize,
    pub mean_chosen_score: f64,
    pub mean_rejected_score: f64,
    pub mean_delta: f64,
    pub dueling_regret: f64,
    pub cumulative_dueling_regret: f64,
    pub mean_ensemble_std: f64,
    /// Mean `pair_width` of the selected pairs.
    pub mean_selected_width: f64,
    /// Mean `pair_width` over all ordered candidate pairs (the expectation
    /// for a uniformly random pair).
    pub mean_pair_width: f64,
    pub fallback_rate: f64,
    pub tie_rate: f64,
    /// Anchor weight used when training at the end of this iteration.
    pub anchor_weight: f64,
    pub train_loss_first: f64,
    pub train_loss_last: f64,
    pub chosen_counts: Vec<usize>,
    pub rejected_counts: Vec<usize>,
}

/// Everything known about one prompt after selection and annotation.
#[derive(Debug, Clone)]
pub struct PromptRecord {
    pub candidates: CandidateSet,
    pub estimates: Vec<RewardEstimate>,
    pub pair: SelectedPair,
    pub triplet: PreferenceTriplet,
    /// Distinct judgements that fed dataset construction.
    pub annotations: usize,
    pub pair_queries: usize,
    pub metric_queries: usize,
}

/// Sum over prompts of `max_j u_j - (u_first + u_second) / 2`, each term
/// clamped at zero.
pub fn dueling_regret<'a>(batch: impl IntoIterator<Item = (&'a [f64], usize, usize)>) -> f64 {
    batch
        .into_iter()
        .map(|(u, first, second)| {
            let best = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (best - (u[first] + u[second]) / 2.0).max(0.0)
        })
        .sum()
}

fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 { 0.0 } else { sum / n as f64 }
}

/// Fill an iteration's metrics from its prompt records. Cumulative fields
/// continue from `previous`. Training fields are left at zero for the caller.
pub fn compute_metrics(
    iteration: usize,
    records: &[PromptRecord],
    num_generators: usize,
    previous: Option<&IterationMetrics>,
) -> Result<IterationMetrics> {
    if records.is_empty() {
        return Err(Error::Invalid(format!("iteration {iteration} has no prompts")));
    }
    let n = records.len() as f64;
    let mut chosen_counts = vec![0; num_generators];
    let mut rejected_counts = vec![0; num_generators];
    for r in records {
        let t = &r.triplet;
        for (counts, g) in [(&mut chosen_counts, t.chosen_generator), (&mut rejected_counts, t.rejected_generator)] {
            *counts.get_mut(g).ok_or_else(|| {
                Error::Invalid(format!("generator {g} outside pool of {num_generators}"))
            })? += 1;
        }
    }

    let utilities: Vec<Vec<f64>> = records
        .iter()
        .map(|r| r.candidates.candidates.iter().map(true_utility).collect())
        .collect();
    let regret = dueling_regret(
        records
            .iter()
            .zip(&utilities)
            .map(|(r, u)| (u.as_slice(), r.pair.first_id, r.pair.second_id)),
    );

    let mut selected_width = Vec::with_capacity(records.len());
    let mut all_width = Vec::with_capacity(records.len());
    for r in records {
        let e = &r.estimates;
        selected_width.push(pair_width(&e[r.pair.first_id], &e[r.pair.second_id])?);
        let mut sum = 0.0;
        let mut count = 0usize;
        for j in 0..e.len() {
            for k in 0..e.len() {
                if j != k {
                    sum += pair_width(&e[j], &e[k])?;
                    count += 1;
                }
            }
        }
        all_width.push(sum / count as f64);
    }

    let prev = |f: fn(&IterationMetrics) -> usize| previous.map(f).unwrap_or(0);
    Ok(IterationMetrics {
        iteration,
        prompts: records.len(),
        cumulative_annotations: prev(|m| m.cumulative_annotations)
            + records.iter().map(|r| r.annotations).sum::<usize>(),
        cumulative_selection_queries: prev(|m| m.cumulative_selection_queries)
            + records.iter().map(|r| r.pair.annotations_spent).sum::<usize>(),
        cumulative_pair_queries: prev(|m| m.cumulative_pair_queries)
            + records.iter().map(|r| r.pair_queries).sum::<usize>(),
        cumulative_metric_queries: prev(|m| m.cumulative_metric_queries)
            + records.iter().map(|r| r.metric_queries).sum::<usize>(),
        mean_chosen_score: mean(records.iter().map(|r| r.triplet.chosen_score)),
        mean_rejected_score: mean(records.iter().map(|r| r.triplet.rejected_score)),
        mean_delta: mean(
            records
                .iter()
                .map(|r| r.triplet.chosen_score - r.triplet.rejected_score),
        ),
        dueling_regret: regret,
        cumulative_dueling_regret: previous.map_or(0.0, |m| m.cumulative_dueling_regret) + regret,
        mean_ensemble_std: mean(records.iter().flat_map(|r| r.estimates.iter().map(|e| e.std()))),
        mean_selected_width: mean(selected_width),
        mean_pair_width: mean(all_width),
        fallback_rate: records.iter().filter(|r| r.pair.fallback_used).count() as f64 / n,
        tie_rate: records.iter().filter(|r| r.triplet.tie).count() as f64 / n,
        anchor_weight: 0.0,
        train_loss_first: 0.0,
        train_loss_last: 0.0,
        chosen_counts,
        rejected_counts,
    })
}

/// The candidate set a run sees for `prompt_id`. Depends on the environment
/// alone, so analysis can regenerate it from an environment dump.
pub fn prompt_candidates(env: &Environment, prompt_id: usize) -> Result<CandidateSet> {
    let mut rng = stream(env.config().seed, domain::CANDIDATES, &[prompt_id as u64]);
    env_generate(env, &env.prompt(prompt_id), &mut rng)
}

/// Resumable pipeline state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: RunConfig,
    pub model: EnnModel,
    pub buffer: ReplayBuffer,
    pub metrics: Vec<IterationMetrics>,
    pub next_iteration: usize,
}

pub struct Pipeline {
    config: RunConfig,
    env: Environment,
    generators: GeneratorPair,
    model: EnnModel,
    buffer: ReplayBuffer,
    metrics: Vec<IterationMetrics>,
    train_reports: Vec<TrainReport>,
    prompt_order: Vec<usize>,
    next_iteration: usize,
}

impl Pipeline {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let model = enn_init(config.enn.clone(), config.seed)?;
        Self::assemble(config, model, ReplayBuffer::new(), Vec::new(), 0)
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Invalid(format!(
                "checkpoint version {} unsupported (expected {CHECKPOINT_VERSION})",
                ckpt.version
            )));
        }
        ckpt.config.validate()?;
        if ckpt.model.iteration_count() != ckpt.next_iteration
            || ckpt.metrics.len() != ckpt.next_iteration
        {
            return Err(Error::Invalid("checkpoint iteration counters disagree".into()));
        }
        Self::assemble(ckpt.config, ckpt.model, ckpt.buffer, ckpt.metrics, ckpt.next_iteration)
    }

    fn assemble(
        config: RunConfig,
        model: EnnModel,
        buffer: ReplayBuffer,
        metrics: Vec<IterationMetrics>,
        next_iteration: usize,
    ) -> Result<Self> {
        let env = Environment::new(config.env.clone())?;
        let generators = config.deltaqwen_generators.unwrap_or(GeneratorPair {
            strong: env.strongest_generator(),
            weak: env.weakest_generator(),
        });
        let mut prompt_order: Vec<usize> = (0..config.num_prompts).collect();
        prompt_order.shuffle(&mut stream(config.seed, domain::PROMPT_ORDER, &[]));
        Ok(Self {
            config,
            env,
            generators,
            model,
            buffer,
            metrics,
            train_reports: Vec::new(),
            prompt_order,
            next_iteration,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            model: self.model.clone(),
            buffer: self.buffer.clone(),
            metrics: self.metrics.clone(),
            next_iteration: self.next_iteration,
        }
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn environment(&self) -> &Environment {
        &self.env
    }

    pub fn model(&self) -> &EnnModel {
        &self.model
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn metrics(&self) -> &[IterationMetrics] {
        &self.metrics
    }

    /// Training reports from iterations run by this instance.
    pub fn train_reports(&self) -> &[TrainReport] {
        &self.train_reports
    }

    pub fn deltaqwen_generators(&self) -> GeneratorPair {
        self.generators
    }

    pub fn next_iteration(&self) -> usize {
        self.next_iteration
    }

    pub fn is_done(&self) -> bool {
        self.next_iteration >= self.config.num_iterations()
    }

    /// Collected triplets in (iteration, prompt) order.
    pub fn dataset(&self) -> Vec<PreferenceTriplet> {
        self.buffer.entries().iter().map(|e| e.triplet.clone()).collect()
    }

    fn batch_prompts(&self, iteration: usize) -> Vec<usize> {
        let b = self.config.batch_size;
        let start = iteration * b;
        let end = (start + b).min(self.config.num_prompts);
        let mut batch = self.prompt_order[start..end].to_vec();
        batch.sort_unstable();
        batch
    }

    fn process_prompt(
        &self,
        iteration: usize,
        candidates: CandidateSet,
        estimates: Vec<RewardEstimate>,
    ) -> Result<PromptRecord> {
        let cfg = &self.config;
        let prompt_id = candidates.prompt_id;
        let method = cfg.method;
        let mut judge = JudgeSession::new(&self.env, &candidates, cfg.seed);
        let mut rng = stream(cfg.seed, domain::SELECTION, &[prompt_id as u64]);

        let pair = {
            let mut ctx = SelectionContext::new(&candidates, &mut rng);
            ctx.epsilon = cfg.epsilon;
            ctx.maxiter = cfg.maxiter;
            if method.uses_estimates() {
                ctx = ctx.with_estimates(&estimates);
            }
            if method.uses_judge() {
                ctx = ctx.with_judge(&mut judge);
            }
            select(method, &mut ctx, Some(self.generators))?
        };
        let (first, second) = (pair.first_id, pair.second_id);

        let (mut triplet, annotations, pair_queries, metric_queries) = if method == Method::DeltaQwen {
            // Structural preference: scored for analytics, never annotated.
            let mut metrics_judge = JudgeSession::new(&self.env, &candidates, cfg.seed);
            let cs = metrics_judge.scores(first)?.overall;
            let rs = metrics_judge.scores(second)?.overall;
            let (c, r) = (&candidates.candidates[first], &candidates.candidates[second]);
            let t = PreferenceTriplet {
                prompt_id,
                chosen_id: c.candidate_id,
                chosen_generator: c.generator_id,
                rejected_id: r.candidate_id,
                rejected_generator: r.generator_id,
                chosen_score: cs,
                rejected_score: rs,
                tie: false,
                iteration,
                method: String::new(),
                metrics_only: true,
            };
            (t, 0, 0, 2)
        } else {
            match cfg.oracle {
                OracleKind::Likert => {
                    let t = judge.annotate(first, second)?;
                    (t, judge.judged(), 2, 0)
                }
                OracleKind::Bernoulli => {
                    let mut rng = stream(cfg.seed, domain::JUDGE, &[prompt_id as u64, u64::MAX]);
                    let t = annotate_bernoulli(
                        prompt_id,
                        &candidates.candidates[first],
                        &candidates.candidates[second],
                        &mut rng,
                    )?;
                    (t, judge.judged() + 2, 2, 0)
                }
            }
        };
        triplet.iteration = iteration;
        triplet.method = method.name().to_string();
        triplet.validate()?;
        Ok(PromptRecord {
            candidates,
            estimates,
            pair,
            triplet,
            annotations,
            pair_queries,
            metric_queries,
        })
    }

    /// Run one batch. Returns `None` once every prompt has been processed.
    pub fn step(&mut self) -> Result<Option<&IterationMetrics>> {
        if self.is_done() {
            return Ok(None);
        }
        let iteration = self.next_iteration;
        let wrap = |prompt_id: usize| {
            move |e: Error| Error::Pipeline { iteration, prompt_id, source: Box::new(e) }
        };
        let prompts = self.batch_prompts(iteration);

        let sets = prompts
            .iter()
            .map(|&pid| {
                prompt_candidates(&self.env, pid).map_err(wrap(pid))
            })
            .collect::<Result<Vec<CandidateSet>>>()?;

        // Predict with the model trained through the previous iteration.
        let d = self.config.enn.feature_dim;
        let x = feature_matrix(sets.iter().flat_map(|s| s.features()), d)
            .map_err(wrap(prompts[0]))?;
        let mut all = self.model.predict_batch(x.view()).map_err(wrap(prompts[0]))?.into_iter();

        let mut records = Vec::with_capacity(sets.len());
        for set in sets {
            let pid = set.prompt_id;
            let estimates: Vec<RewardEstimate> = all.by_ref().take(set.len()).collect();
            records.push(self.process_prompt(iteration, set, estimates).map_err(wrap(pid))?);
        }

        for r in &records {
            let c = &r.candidates.candidates;
            self.buffer.push(ReplayEntry {
                chosen: c[r.triplet.chosen_id].feature_vec.clone(),
                rejected: c[r.triplet.rejected_id].feature_vec.clone(),
                triplet: r.triplet.clone(),
            });
        }

        let mut metrics = compute_metrics(iteration, &records, self.env.num_generators(), self.metrics.last())
            .map_err(wrap(prompts[0]))?;

        let mut rng = stream(self.config.seed, domain::ENN_TRAIN, &[iteration as u64]);
        let report = enn_train(&mut self.model, &self.buffer, self.config.batch_size, &mut rng)
            .map_err(wrap(prompts[0]))?;
        metrics.anchor_weight = report.zeta;
        metrics.train_loss_first = report.losses.first().copied().unwrap_or(f64::NAN);
        metrics.train_loss_last = report.losses.last().copied().unwrap_or(f64::NAN);

        self.train_reports.push(report);
        self.metrics.push(metrics);
        self.next_iteration += 1;
        Ok(self.metrics.last())
    }

    pub fn run_to_end(&mut self) -> Result<()> {
        while self.step()?.is_some() {}
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub dataset: Vec<PreferenceTriplet>,
    pub metrics: Vec<IterationMetrics>,
    pub checkpoint: Checkpoint,
}

pub fn run_pipeline(config: RunConfig) -> Result<RunOutput> {
    let mut p = Pipeline::new(config)?;
    p.run_to_end()?;
    Ok(RunOutput {
        dataset: p.dataset(),
        metrics: p.metrics().to_vec(),
        checkpoint: p.checkpoint(),
    })
}
