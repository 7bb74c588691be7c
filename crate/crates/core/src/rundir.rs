//! Run directory layout and the pipeline stages that fill it.
//!
//! ```text
//! <run>/config.json                 resolved search config
//! <run>/dataset.snapshot            split used by the run
//! <run>/baseline_eval.cache         full-size reference quality
//! <run>/rl_trace.jsonl              one TraceRecord per iteration
//! <run>/candidates/<c>/rank<k>.mask stored assignments, best first
//! <run>/candidates/<c>/index.json   their search-time quality
//! <run>/final/<c>/model.ckpt        retrained winner
//! <run>/final/<c>/metrics.json      its test metrics
//! <run>/manifest.json               stage log and artifact list
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::corpus::InteractionDataset;
use crate::embedding::{sparsity_of, MaskFile};
use crate::error::{Error, Result};
use crate::metrics::MetricSummary;
use crate::recommender::BackboneKind;
use crate::rng::SeedTree;
use crate::search::{
    dataset_fingerprint, load_or_build_baseline, run_baseline, run_search, selective_retrain,
    sparsity_label, BaselineKind, Candidate, CandidateMaskSet, SearchConfig, SearchOutcome,
};
use crate::td3::TraceRecord;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config_path(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn snapshot_path(&self) -> PathBuf {
        self.root.join("dataset.snapshot")
    }

    pub fn baseline_cache_path(&self) -> PathBuf {
        self.root.join("baseline_eval.cache")
    }

    pub fn trace_path(&self) -> PathBuf {
        self.root.join("rl_trace.jsonl")
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn candidate_dir(&self, c: f64) -> PathBuf {
        self.root.join("candidates").join(sparsity_label(c))
    }

    pub fn candidate_path(&self, c: f64, rank: usize) -> PathBuf {
        self.candidate_dir(c).join(format!("rank{rank}.mask"))
    }

    pub fn final_dir(&self, c: f64) -> PathBuf {
        self.root.join("final").join(sparsity_label(c))
    }

    pub fn model_path(&self, c: f64) -> PathBuf {
        self.final_dir(c).join("model.ckpt")
    }

    pub fn metrics_path(&self, c: f64) -> PathBuf {
        self.final_dir(c).join("metrics.json")
    }

    fn relative(&self, path: &Path) -> String {
        path.strip_prefix(&self.root)
            .unwrap_or(path)
            .to_string_lossy()
            .replace('\\', "/")
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Test metrics of one final model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalMetrics {
    pub method: String,
    pub backbone: BackboneKind,
    pub sparsity_target: f64,
    pub sparsity_achieved: f64,
    #[serde(flatten)]
    pub test: MetricSummary,
    pub wall_seconds: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidate_rank: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uniform_dim: Option<usize>,
    pub val_mean_q: f64,
    pub epochs_trained: usize,
}

impl FinalMetrics {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        read_json(path.as_ref())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub status: String,
    pub finished_unix: u64,
}

/// Index of a run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: u32,
    pub run_id: String,
    pub created_unix: u64,
    pub updated_unix: u64,
    pub seed: u64,
    pub config: SearchConfig,
    pub stages: BTreeMap<String, StageRecord>,
    /// Paths relative to the run root.
    pub artifacts: Vec<String>,
}

impl RunManifest {
    pub const VERSION: u32 = 1;

    fn new(config: &SearchConfig, dataset: &InteractionDataset) -> Result<Self> {
        let text = serde_json::to_string(config)? + &dataset_fingerprint(dataset);
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in text.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        let now = unix_now();
        Ok(Self {
            version: Self::VERSION,
            run_id: format!("{h:016x}")[..12].to_string(),
            created_unix: now,
            updated_unix: now,
            seed: config.seed,
            config: config.clone(),
            stages: BTreeMap::new(),
            artifacts: Vec::new(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        read_json(path.as_ref())
    }

    fn record(&mut self, run: &RunDir, stage: &str, artifacts: &[PathBuf]) -> Result<()> {
        let now = unix_now();
        self.updated_unix = now;
        self.stages.insert(
            stage.to_string(),
            StageRecord {
                status: "done".into(),
                finished_unix: now,
            },
        );
        for a in artifacts {
            let rel = run.relative(a);
            if !self.artifacts.contains(&rel) {
                self.artifacts.push(rel);
            }
        }
        self.artifacts.sort();
        write_json(&run.manifest_path(), self)
    }
}

/// Search-time quality of the stored candidates of one target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateIndex {
    pub target: f64,
    pub entries: Vec<CandidateIndexEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateIndexEntry {
    pub rank: usize,
    pub mean_q: f64,
    pub sparsity: f64,
    pub episode: usize,
    pub iter: usize,
}

/// Writes every candidate set; returns the files written.
pub fn write_candidates(run: &RunDir, sets: &[CandidateMaskSet], dataset: &InteractionDataset, d_max: usize) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for set in sets {
        let dir = run.candidate_dir(set.target);
        create_dir(&dir)?;
        let mut entries = Vec::new();
        for (k, cand) in set.entries.iter().enumerate() {
            let path = run.candidate_path(set.target, k + 1);
            MaskFile::new(d_max, dataset.num_users(), dataset.num_items(), cand.dims.clone())?.save(&path)?;
            written.push(path);
            entries.push(CandidateIndexEntry {
                rank: k + 1,
                mean_q: cand.mean_q,
                sparsity: cand.sparsity,
                episode: cand.episode,
                iter: cand.iter,
            });
        }
        let index = dir.join("index.json");
        write_json(&index, &CandidateIndex { target: set.target, entries })?;
        written.push(index);
    }
    Ok(written)
}

/// Reads back the candidate set stored for target `c`.
pub fn load_candidates(run: &RunDir, c: f64, capacity: usize) -> Result<CandidateMaskSet> {
    let index_path = run.candidate_dir(c).join("index.json");
    if !index_path.exists() {
        return Err(Error::NoCandidates(c));
    }
    let index: CandidateIndex = read_json(&index_path)?;
    let mut set = CandidateMaskSet::new(c, capacity.max(index.entries.len()));
    for e in &index.entries {
        let mask = MaskFile::load(run.candidate_path(c, e.rank))?;
        let sparsity = sparsity_of(&mask.dims, mask.d_max);
        if sparsity < c {
            return Err(Error::Invalid(format!(
                "stored candidate rank {} has sparsity {sparsity} < {c}",
                e.rank
            )));
        }
        set.entries.push(Candidate {
            dims: mask.dims,
            mean_q: e.mean_q,
            sparsity,
            episode: e.episode,
            iter: e.iter,
        });
    }
    Ok(set)
}

/// Runs the search into `run`, writing every search artifact.
pub fn search_into(
    run: &RunDir,
    dataset: &InteractionDataset,
    config: &SearchConfig,
    mut progress: impl FnMut(&TraceRecord),
) -> Result<SearchOutcome> {
    config.validate()?;
    create_dir(run.root())?;
    let mut manifest = RunManifest::new(config, dataset)?;
    write_json(&run.config_path(), config)?;
    dataset.save(run.snapshot_path())?;
    manifest.record(run, "prepare", &[run.config_path(), run.snapshot_path()])?;

    let baseline = load_or_build_baseline(run.baseline_cache_path(), dataset, config)?;
    manifest.record(run, "baseline", &[run.baseline_cache_path()])?;

    let trace_path = run.trace_path();
    let file = fs::File::create(&trace_path).map_err(|e| Error::io(&trace_path, e))?;
    let mut trace = BufWriter::new(file);
    let outcome = run_search(dataset, config, &baseline, |record| {
        serde_json::to_writer(&mut trace, record)?;
        trace
            .write_all(b"\n")
            .and_then(|_| trace.flush())
            .map_err(|e| Error::io(&trace_path, e))?;
        progress(record);
        Ok(())
    })?;
    drop(trace);

    let mut artifacts = vec![trace_path];
    artifacts.extend(write_candidates(run, &outcome.candidates, dataset, config.recommender.d_max)?);
    manifest.record(run, "search", &artifacts)?;
    Ok(outcome)
}

/// Selective retraining for target `c` of an existing run.
pub fn retrain_into(run: &RunDir, c: f64) -> Result<FinalMetrics> {
    let started = Instant::now();
    let config: SearchConfig = read_json(&run.config_path())?;
    let dataset = InteractionDataset::load(run.snapshot_path())?;
    let set = load_candidates(run, c, config.top_l)?;
    if set.is_empty() {
        return Err(Error::NoCandidates(c));
    }
    let baseline = load_or_build_baseline(run.baseline_cache_path(), &dataset, &config)?;
    let seeds = SeedTree::new(config.seed);
    let out = selective_retrain(&dataset, &config.recommender, &set, config.fit, &baseline, &seeds)?;
    let metrics = FinalMetrics {
        method: "ciess".into(),
        backbone: config.recommender.backbone,
        sparsity_target: c,
        sparsity_achieved: out.retrained.model.table().sparsity(),
        test: out.retrained.test,
        wall_seconds: started.elapsed().as_secs_f64(),
        candidate_rank: Some(out.rank),
        uniform_dim: None,
        val_mean_q: out.retrained.val_mean_q,
        epochs_trained: out.retrained.epochs_trained,
    };
    let dir = run.final_dir(c);
    create_dir(&dir)?;
    out.retrained.model.checkpoint().save(run.model_path(c))?;
    write_json(&run.metrics_path(c), &metrics)?;
    let mut manifest = RunManifest::load(run.manifest_path())
        .or_else(|_| RunManifest::new(&config, &dataset))?;
    manifest.record(
        run,
        &format!("retrain-{}", sparsity_label(c)),
        &[run.model_path(c), run.metrics_path(c)],
    )?;
    Ok(metrics)
}

/// Fixed-size baseline written to `out/metrics.json` and `out/model.ckpt`.
pub fn baseline_into(
    out: &Path,
    dataset: &InteractionDataset,
    kind: BaselineKind,
    c: f64,
    config: &SearchConfig,
) -> Result<FinalMetrics> {
    let started = Instant::now();
    config.validate()?;
    create_dir(out)?;
    let baseline = load_or_build_baseline(out.join("baseline_eval.cache"), dataset, config)?;
    let res = run_baseline(dataset, kind, c, config, &baseline)?;
    let metrics = FinalMetrics {
        method: match kind {
            BaselineKind::Es => "es".into(),
            BaselineKind::Mr => "mr".into(),
        },
        backbone: config.recommender.backbone,
        sparsity_target: c,
        sparsity_achieved: res.sparsity,
        test: res.retrained.test,
        wall_seconds: started.elapsed().as_secs_f64(),
        candidate_rank: None,
        uniform_dim: (kind == BaselineKind::Es).then(|| res.dims[0]),
        val_mean_q: res.retrained.val_mean_q,
        epochs_trained: res.retrained.epochs_trained,
    };
    res.retrained.model.checkpoint().save(out.join("model.ckpt"))?;
    write_json(&out.join("metrics.json"), &metrics)?;
    Ok(metrics)
}
