//! On-disk forms: triplet JSONL, metrics CSV, checkpoints and run manifests.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::pipeline::{Checkpoint, IterationMetrics, RunConfig};
use crate::selection::Method;
use crate::types::PreferenceTriplet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportSide {
    pub candidate_id: usize,
    pub generator_id: usize,
    pub score: f64,
}

/// One JSONL line. Field order is the serialization order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportTriplet {
    pub prompt_id: usize,
    pub iteration: usize,
    pub method: String,
    pub chosen: ExportSide,
    pub rejected: ExportSide,
    pub tie: bool,
}

impl From<&PreferenceTriplet> for ExportTriplet {
    fn from(t: &PreferenceTriplet) -> Self {
        Self {
            prompt_id: t.prompt_id,
            iteration: t.iteration,
            method: t.method.clone(),
            chosen: ExportSide {
                candidate_id: t.chosen_id,
                generator_id: t.chosen_generator,
                score: t.chosen_score,
            },
            rejected: ExportSide {
                candidate_id: t.rejected_id,
                generator_id: t.rejected_generator,
                score: t.rejected_score,
            },
            tie: t.tie,
        }
    }
}

impl ExportTriplet {
    /// Back to the in-memory form. DeltaQwen lines are metrics-only.
    pub fn into_triplet(self) -> PreferenceTriplet {
        let metrics_only = self.method == Method::DeltaQwen.name();
        PreferenceTriplet {
            prompt_id: self.prompt_id,
            chosen_id: self.chosen.candidate_id,
            chosen_generator: self.chosen.generator_id,
            rejected_id: self.rejected.candidate_id,
            rejected_generator: self.rejected.generator_id,
            chosen_score: self.chosen.score,
            rejected_score: self.rejected.score,
            tie: self.tie,
            iteration: self.iteration,
            method: self.method,
            metrics_only,
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn write_jsonl<W: Write>(mut w: W, dataset: &[PreferenceTriplet]) -> Result<()> {
    for t in dataset {
        serde_json::to_writer(&mut w, &ExportTriplet::from(t))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn jsonl_string(dataset: &[PreferenceTriplet]) -> Result<String> {
    let mut buf = Vec::new();
    write_jsonl(&mut buf, dataset)?;
    Ok(String::from_utf8(buf).expect("serde_json writes UTF-8"))
}

/// Parse JSONL, skipping blank lines. Errors carry the 1-based line number.
pub fn read_jsonl<R: Read>(r: R) -> Result<Vec<PreferenceTriplet>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(r).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse = |detail: String| Error::Parse { line: i + 1, detail };
        let t = serde_json::from_str::<ExportTriplet>(&line)
            .map_err(|e| parse(e.to_string()))?
            .into_triplet();
        t.validate().map_err(|e| parse(e.to_string()))?;
        out.push(t);
    }
    Ok(out)
}

pub fn save_jsonl(path: &Path, dataset: &[PreferenceTriplet]) -> Result<()> {
    write_jsonl(BufWriter::new(File::create(path)?), dataset)
}

pub fn load_jsonl(path: &Path) -> Result<Vec<PreferenceTriplet>> {
    read_jsonl(File::open(path)?)
}

/// Metrics CSV header. Per-generator counts are `;`-joined lists.
pub const METRICS_COLUMNS: [&str; 22] = [
    "iteration",
    "prompts",
    "cumulative_annotations",
    "cumulative_selection_queries",
    "cumulative_pair_queries",
    "cumulative_metric_queries",
    "mean_chosen_score",
    "mean_rejected_score",
    "mean_delta",
    "dueling_regret",
    "cumulative_dueling_regret",
    "mean_ensemble_std",
    "mean_selected_width",
    "mean_pair_width",
    "fallback_rate",
    "tie_rate",
    "anchor_weight",
    "train_loss_first",
    "train_loss_last",
    "chosen_counts",
    "rejected_counts",
    "num_generators",
];

fn join_counts(c: &[usize]) -> String {
    c.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";")
}

pub fn write_metrics_csv<W: Write>(w: W, metrics: &[IterationMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(METRICS_COLUMNS)?;
    for m in metrics {
        let f = |v: f64| v.to_string();
        w.write_record([
            m.iteration.to_string(),
            m.prompts.to_string(),
            m.cumulative_annotations.to_string(),
            m.cumulative_selection_queries.to_string(),
            m.cumulative_pair_queries.to_string(),
            m.cumulative_metric_queries.to_string(),
            f(m.mean_chosen_score),
            f(m.mean_rejected_score),
            f(m.mean_delta),
            f(m.dueling_regret),
            f(m.cumulative_dueling_regret),
            f(m.mean_ensemble_std),
            f(m.mean_selected_width),
            f(m.mean_pair_width),
            f(m.fallback_rate),
            f(m.tie_rate),
            f(m.anchor_weight),
            f(m.train_loss_first),
            f(m.train_loss_last),
            join_counts(&m.chosen_counts),
            join_counts(&m.rejected_counts),
            m.chosen_counts.len().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv<R: Read>(r: R) -> Result<Vec<IterationMetrics>> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers()?.clone();
    if let Some(bad) = header.iter().find(|h| !METRICS_COLUMNS.contains(h)) {
        return Err(Error::Parse { line: 1, detail: format!("unknown column '{bad}'") });
    }
    if header.iter().ne(METRICS_COLUMNS) {
        return Err(Error::Parse {
            line: 1,
            detail: format!("expected columns {}", METRICS_COLUMNS.join(",")),
        });
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec?;
        let err = |col: &str, v: &str| Error::Parse { line, detail: format!("{col}: cannot parse '{v}'") };
        let get = |k: usize| rec.get(k).unwrap_or("");
        let u = |k: usize| get(k).parse::<usize>().map_err(|_| err(METRICS_COLUMNS[k], get(k)));
        let f = |k: usize| get(k).parse::<f64>().map_err(|_| err(METRICS_COLUMNS[k], get(k)));
        let counts = |k: usize| -> Result<Vec<usize>> {
            if get(k).is_empty() {
                return Ok(Vec::new());
            }
            get(k)
                .split(';')
                .map(|v| v.parse().map_err(|_| err(METRICS_COLUMNS[k], get(k))))
                .collect()
        };
        let m = IterationMetrics {
            iteration: u(0)?,
            prompts: u(1)?,
            cumulative_annotations: u(2)?,
            cumulative_selection_queries: u(3)?,
            cumulative_pair_queries: u(4)?,
            cumulative_metric_queries: u(5)?,
            mean_chosen_score: f(6)?,
            mean_rejected_score: f(7)?,
            mean_delta: f(8)?,
            dueling_regret: f(9)?,
            cumulative_dueling_regret: f(10)?,
            mean_ensemble_std: f(11)?,
            mean_selected_width: f(12)?,
            mean_pair_width: f(13)?,
            fallback_rate: f(14)?,
            tie_rate: f(15)?,
            anchor_weight: f(16)?,
            train_loss_first: f(17)?,
            train_loss_last: f(18)?,
            chosen_counts: counts(19)?,
            rejected_counts: counts(20)?,
        };
        let g = u(21)?;
        if m.chosen_counts.len() != g || m.rejected_counts.len() != g {
            return Err(Error::Parse { line, detail: format!("expected {g} per-generator counts") });
        }
        out.push(m);
    }
    Ok(out)
}

pub fn save_metrics_csv(path: &Path, metrics: &[IterationMetrics]) -> Result<()> {
    write_metrics_csv(BufWriter::new(File::create(path)?), metrics)
}

pub fn load_metrics_csv(path: &Path) -> Result<Vec<IterationMetrics>> {
    read_metrics_csv(File::open(path)?)
}

pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    save_json(path, ckpt)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    load_json(path)
}

/// Hash of the canonical JSON form of a config.
pub fn config_hash(config: &RunConfig) -> Result<String> {
    Ok(sha256_hex(&serde_json::to_vec(config)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub seed: u64,
    pub method: String,
    pub iterations: usize,
    pub triplets: usize,
    pub dataset_sha256: String,
    pub files: ManifestFiles,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestFiles {
    pub dataset: String,
    pub metrics: String,
    pub checkpoint: String,
}

impl Default for ManifestFiles {
    fn default() -> Self {
        Self {
            dataset: "triplets.jsonl".into(),
            metrics: "metrics.csv".into(),
            checkpoint: "checkpoint.json".into(),
        }
    }
}

impl RunManifest {
    pub fn new(config: &RunConfig, dataset: &[PreferenceTriplet], iterations: usize) -> Result<Self> {
        Ok(Self {
            config_hash: config_hash(config)?,
            seed: config.seed,
            method: config.method.name().into(),
            iterations,
            triplets: dataset.len(),
            dataset_sha256: sha256_hex(jsonl_string(dataset)?.as_bytes()),
            files: ManifestFiles::default(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triplet(prompt_id: usize, method: &str) -> PreferenceTriplet {
        PreferenceTriplet {
            prompt_id,
            chosen_id: 3,
            chosen_generator: 7,
            rejected_id: 0,
            rejected_generator: 2,
            chosen_score: 4.123456789012345,
            rejected_score: 1.5,
            tie: false,
            iteration: 2,
            method: method.into(),
            metrics_only: method == "deltaqwen",
        }
    }

    #[test]
    fn jsonl_field_order_is_fixed() {
        let s = jsonl_string(&[triplet(5, "dts")]).unwrap();
        assert_eq!(
            s,
            "{\"prompt_id\":5,\"iteration\":2,\"method\":\"dts\",\
             \"chosen\":{\"candidate_id\":3,\"generator_id\":7,\"score\":4.123456789012345},\
             \"rejected\":{\"candidate_id\":0,\"generator_id\":2,\"score\":1.5},\"tie\":false}\n"
        );
    }

    #[test]
    fn jsonl_round_trip_keeps_metrics_only() {
        let d = vec![triplet(0, "dts"), triplet(1, "deltaqwen")];
        let back = read_jsonl(jsonl_string(&d).unwrap().as_bytes()).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let mut s = jsonl_string(&[triplet(0, "random")]).unwrap();
        s.push_str("\n{\"prompt_id\": 1}\n");
        match read_jsonl(s.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let mut bad = triplet(0, "random");
        bad.chosen_score = 7.0;
        let s = jsonl_string(&[bad]).unwrap();
        assert!(matches!(read_jsonl(s.as_bytes()), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn csv_rejects_unknown_columns() {
        let csv = "iteration,prompts,surprise\n0,1,2\n";
        match read_metrics_csv(csv.as_bytes()) {
            Err(Error::Parse { detail, .. }) => assert!(detail.contains("surprise")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_metrics_csv_has_header_only() {
        let mut buf = Vec::new();
        write_metrics_csv(&mut buf, &[]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), format!("{}\n", METRICS_COLUMNS.join(",")));
    }

    #[test]
    fn sha256_known_value() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
