//! Dataset analytics: score summaries, generator distributions, prefix curves.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::oracle::{Environment, true_utility};
use crate::pipeline::{dueling_regret, prompt_candidates};
use crate::types::PreferenceTriplet;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: String,
    pub triplets: usize,
    pub mean_chosen: f64,
    pub mean_rejected: f64,
    /// Mean over both responses of every pair.
    pub mean_overall: f64,
    pub mean_delta: f64,
    pub tie_rate: f64,
    /// Total and per-prompt dueling regret, present when an environment was given.
    pub regret_total: Option<f64>,
    pub regret_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeneratorCounts {
    pub generator_id: usize,
    pub chosen: usize,
    pub rejected: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisReport {
    pub triplets: usize,
    pub tie_rate: f64,
    pub methods: Vec<MethodSummary>,
    pub generators: Vec<GeneratorCounts>,
}

#[derive(Default)]
struct Acc {
    n: usize,
    chosen: f64,
    rejected: f64,
    ties: usize,
    regret: f64,
}

impl Acc {
    fn add(&mut self, t: &PreferenceTriplet) {
        self.n += 1;
        self.chosen += t.chosen_score;
        self.rejected += t.rejected_score;
        self.ties += usize::from(t.tie);
    }
}

/// Regret of one stored triplet, regenerating its candidate set from `env`.
fn triplet_regret(env: &Environment, t: &PreferenceTriplet) -> Result<f64> {
    let set = prompt_candidates(env, t.prompt_id)?;
    let mismatch = || {
        Error::Invalid(format!(
            "prompt {}: environment does not reproduce the recorded candidates",
            t.prompt_id
        ))
    };
    let c = set.candidates.get(t.chosen_id).ok_or_else(mismatch)?;
    let r = set.candidates.get(t.rejected_id).ok_or_else(mismatch)?;
    if c.generator_id != t.chosen_generator || r.generator_id != t.rejected_generator {
        return Err(mismatch());
    }
    let u: Vec<f64> = set.candidates.iter().map(true_utility).collect();
    Ok(dueling_regret([(u.as_slice(), t.chosen_id, t.rejected_id)]))
}

pub fn analyze(dataset: &[PreferenceTriplet], env: Option<&Environment>) -> Result<AnalysisReport> {
    let mut by_method: BTreeMap<&str, Acc> = BTreeMap::new();
    let mut gens: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for t in dataset {
        let acc = by_method.entry(t.method.as_str()).or_default();
        acc.add(t);
        if let Some(env) = env {
            acc.regret += triplet_regret(env, t)?;
        }
        gens.entry(t.chosen_generator).or_default().0 += 1;
        gens.entry(t.rejected_generator).or_default().1 += 1;
    }
    if let Some(env) = env {
        for g in 0..env.num_generators() {
            gens.entry(g).or_default();
        }
    }
    let methods = by_method
        .into_iter()
        .map(|(method, a)| {
            let n = a.n as f64;
            MethodSummary {
                method: method.to_string(),
                triplets: a.n,
                mean_chosen: a.chosen / n,
                mean_rejected: a.rejected / n,
                mean_overall: (a.chosen + a.rejected) / (2.0 * n),
                mean_delta: (a.chosen - a.rejected) / n,
                tie_rate: a.ties as f64 / n,
                regret_total: env.map(|_| a.regret),
                regret_mean: env.map(|_| a.regret / n),
            }
        })
        .collect();
    let ties = dataset.iter().filter(|t| t.tie).count();
    Ok(AnalysisReport {
        triplets: dataset.len(),
        tie_rate: if dataset.is_empty() { 0.0 } else { ties as f64 / dataset.len() as f64 },
        methods,
        generators: gens
            .into_iter()
            .map(|(generator_id, (chosen, rejected))| GeneratorCounts { generator_id, chosen, rejected })
            .collect(),
    })
}

impl AnalysisReport {
    /// Plain-text report: a method table and a generator table, both CSV.
    pub fn render(&self) -> String {
        if self.triplets == 0 {
            return "no data: dataset contains no triplets\n".into();
        }
        let with_regret = self.methods.iter().any(|m| m.regret_total.is_some());
        let mut s = format!("triplets,{}\ntie_rate,{}\n\n", self.triplets, self.tie_rate);
        s.push_str("method,triplets,mean_chosen,mean_rejected,mean_overall,mean_delta,tie_rate");
        if with_regret {
            s.push_str(",regret_total,regret_mean");
        }
        s.push('\n');
        for m in &self.methods {
            let _ = write!(
                s,
                "{},{},{},{},{},{},{}",
                m.method, m.triplets, m.mean_chosen, m.mean_rejected, m.mean_overall, m.mean_delta, m.tie_rate
            );
            if let (Some(t), Some(r)) = (m.regret_total, m.regret_mean) {
                let _ = write!(s, ",{t},{r}");
            }
            s.push('\n');
        }
        s.push_str("\ngenerator_id,chosen,rejected\n");
        for g in &self.generators {
            let _ = writeln!(s, "{},{},{}", g.generator_id, g.chosen, g.rejected);
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrefixRow {
    pub prefix: usize,
    pub mean_chosen: f64,
    pub std_chosen: f64,
    pub min_chosen: f64,
    pub max_chosen: f64,
    pub mean_rejected: f64,
    pub mean_delta: f64,
}

/// Statistics over the first `k` triplets for each requested `k`.
pub fn prefix_eval(dataset: &[PreferenceTriplet], sizes: &[usize]) -> Result<Vec<PrefixRow>> {
    sizes
        .iter()
        .map(|&k| {
            if k == 0 || k > dataset.len() {
                return Err(Error::Config(format!(
                    "prefix size {k} outside 1..={}",
                    dataset.len()
                )));
            }
            let head = &dataset[..k];
            let n = k as f64;
            let (mut chosen, mut rejected) = (0.0, 0.0);
            for t in head {
                chosen += t.chosen_score;
                rejected += t.rejected_score;
            }
            let mean_chosen = chosen / n;
            let var = head.iter().map(|t| (t.chosen_score - mean_chosen).powi(2)).sum::<f64>() / n;
            Ok(PrefixRow {
                prefix: k,
                mean_chosen,
                std_chosen: var.sqrt(),
                min_chosen: head.iter().map(|t| t.chosen_score).fold(f64::INFINITY, f64::min),
                max_chosen: head.iter().map(|t| t.chosen_score).fold(f64::NEG_INFINITY, f64::max),
                mean_rejected: rejected / n,
                mean_delta: (chosen - rejected) / n,
            })
        })
        .collect()
}

pub fn write_prefix_csv<W: Write>(w: W, rows: &[PrefixRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(method: &str, chosen: f64, rejected: f64, cg: usize, rg: usize) -> PreferenceTriplet {
        PreferenceTriplet {
            prompt_id: 0,
            chosen_id: 0,
            chosen_generator: cg,
            rejected_id: 1,
            rejected_generator: rg,
            chosen_score: chosen,
            rejected_score: rejected,
            tie: chosen == rejected,
            iteration: 0,
            method: method.into(),
            metrics_only: false,
        }
    }

    #[test]
    fn two_triplet_means() {
        let d = [t("dts", 4.0, 1.0, 0, 1), t("dts", 5.0, 3.0, 0, 2)];
        let r = analyze(&d, None).unwrap();
        let m = &r.methods[0];
        assert_eq!((m.mean_chosen, m.mean_rejected, m.mean_overall), (4.5, 2.0, 3.25));
        assert_eq!(m.mean_delta, 2.5);
        assert!(m.regret_total.is_none());
        assert_eq!(r.generators[0], GeneratorCounts { generator_id: 0, chosen: 2, rejected: 0 });
    }

    #[test]
    fn empty_dataset_reports_no_data() {
        let r = analyze(&[], None).unwrap();
        assert_eq!(r.triplets, 0);
        assert!(r.render().starts_with("no data"));
    }

    #[test]
    fn prefixes_are_cumulative() {
        let d: Vec<_> = (0..128).map(|i| t("random", 2.0 + (i % 3) as f64, 1.0, 0, 1)).collect();
        let rows = prefix_eval(&d, &[64, 128]).unwrap();
        assert_eq!(rows.len(), 2);
        let full = analyze(&d, None).unwrap();
        assert_eq!(rows[1].mean_chosen, full.methods[0].mean_chosen);
        assert_eq!(rows[1].mean_delta, full.methods[0].mean_delta);
        assert!(prefix_eval(&d, &[129]).is_err());
        assert!(prefix_eval(&d, &[0]).is_err());
    }

    #[test]
    fn ties_counted() {
        let d = [t("maxmin", 3.0, 3.0, 0, 1), t("maxmin", 4.0, 3.0, 0, 1)];
        assert_eq!(analyze(&d, None).unwrap().tie_rate, 0.5);
    }
}
