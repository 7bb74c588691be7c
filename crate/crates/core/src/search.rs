//! Search driver: episodes of size proposals, short recommender training
//! and TD3 updates, followed by selective retraining of the best masks.

use std::path::Path;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::InteractionDataset;
use crate::embedding::sparsity_of;
use crate::error::{Error, Result};
use crate::explore::{random_walk, round_action, select_actions, WalkConfig};
use crate::metrics::{FullEvalBaseline, MetricSummary, QualitySnapshot};
use crate::recommender::{EvalSplit, FitOptions, Recommender, RecommenderConfig};
use crate::rng::SeedTree;
use crate::td3::{
    compute_reward, compute_state, raw_action, NoiseConfig, NoiseProcess, PolicyEnsemble,
    PopularityRange, SearchState, Side, Td3Config, TraceRecord, Transition,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchConfig {
    pub version: u32,
    pub seed: u64,
    pub episodes: usize,
    pub iterations_per_episode: usize,
    pub lambda: f64,
    pub noise: NoiseConfig,
    /// When off, the rounded noisy actor proposal is used directly.
    pub random_walk: bool,
    pub walk_threshold: usize,
    pub walk_length: usize,
    pub epochs_per_iteration: usize,
    pub top_l: usize,
    pub target_sparsities: Vec<f64>,
    /// Keep training one recommender across iterations instead of drawing
    /// a fresh one each time.
    pub warm_start: bool,
    pub recommender: RecommenderConfig,
    pub td3: Td3Config,
    /// Early stopping for the full-size reference model and retraining.
    pub fit: FitOptions,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            version: Self::VERSION,
            seed: 0,
            episodes: 30,
            iterations_per_episode: 10,
            lambda: 0.4,
            noise: NoiseConfig::default(),
            random_walk: true,
            walk_threshold: 5,
            walk_length: 5,
            epochs_per_iteration: 5,
            top_l: 5,
            target_sparsities: vec![0.80, 0.90, 0.95],
            warm_start: false,
            recommender: RecommenderConfig::default(),
            td3: Td3Config::default(),
            fit: FitOptions::default(),
        }
    }
}

impl SearchConfig {
    pub const VERSION: u32 = 1;

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn walk(&self) -> WalkConfig {
        WalkConfig {
            threshold: self.walk_threshold,
            walk_length: self.walk_length,
            d_max: self.recommender.d_max,
        }
    }

    /// Every violated constraint, in field order.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.version != Self::VERSION {
            out.push(format!("version must be {} (got {})", Self::VERSION, self.version));
        }
        if self.episodes < 1 {
            out.push("episodes must be >= 1".into());
        }
        if self.iterations_per_episode < 1 {
            out.push("iterations_per_episode must be >= 1".into());
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            out.push(format!("lambda must be >= 0 (got {})", self.lambda));
        }
        if !(self.noise.sigma >= 0.0 && self.noise.sigma.is_finite()) {
            out.push(format!("noise.sigma must be >= 0 (got {})", self.noise.sigma));
        }
        if self.walk_threshold < 1 {
            out.push("walk_threshold must be >= 1".into());
        }
        if self.walk_length < 1 {
            out.push("walk_length must be >= 1".into());
        }
        if self.epochs_per_iteration < 1 {
            out.push("epochs_per_iteration must be >= 1".into());
        }
        if self.top_l < 1 {
            out.push("top_l must be >= 1".into());
        }
        if self.target_sparsities.is_empty() {
            out.push("target_sparsities must not be empty".into());
        }
        for &c in &self.target_sparsities {
            if !(c > 0.0 && c < 1.0) {
                out.push(format!("target sparsity {c} must lie in (0, 1)"));
            }
        }
        if self.recommender.d_max < 2 {
            out.push("recommender.d_max must be >= 2".into());
        }
        if let Err(Error::Invalid(msg)) = self.recommender.validate() {
            out.extend(msg.split("; ").map(|m| format!("recommender.{m}")));
        }
        if let Err(Error::Invalid(msg)) = self.td3.validate() {
            out.extend(msg.split("; ").map(|m| format!("td3.{m}")));
        }
        if self.fit.max_epochs < 1 || self.fit.patience < 1 {
            out.push("fit.max_epochs and fit.patience must be >= 1".into());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Invalid(problems.join("; ")))
        }
    }
}

/// One stored assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub dims: Vec<usize>,
    pub mean_q: f64,
    pub sparsity: f64,
    pub episode: usize,
    pub iter: usize,
}

/// The best `capacity` assignments seen under one sparsity target, by
/// descending mean quality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateMaskSet {
    pub target: f64,
    pub capacity: usize,
    pub entries: Vec<Candidate>,
}

impl CandidateMaskSet {
    pub fn new(target: f64, capacity: usize) -> Self {
        Self {
            target,
            capacity,
            entries: Vec::new(),
        }
    }

    /// Admits `cand` when it meets the target and ranks among the best.
    /// An identical assignment is kept once, with its higher quality.
    pub fn offer(&mut self, cand: &Candidate) -> bool {
        if cand.sparsity < self.target || !cand.mean_q.is_finite() {
            return false;
        }
        if let Some(i) = self.entries.iter().position(|e| e.dims == cand.dims) {
            if self.entries[i].mean_q >= cand.mean_q {
                return false;
            }
            self.entries.remove(i);
        }
        let pos = self.entries.partition_point(|e| e.mean_q >= cand.mean_q);
        if pos >= self.capacity {
            return false;
        }
        self.entries.insert(pos, cand.clone());
        self.entries.truncate(self.capacity);
        assert!(
            self.entries.iter().all(|e| e.sparsity >= self.target),
            "candidate below its sparsity target"
        );
        true
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }
}

/// Trains a full-size recommender to convergence and takes its per-entity
/// validation quality as the reference for the quality indicator.
pub fn build_full_eval_baseline(
    dataset: &InteractionDataset,
    rec: &RecommenderConfig,
    fit: FitOptions,
    seeds: &SeedTree,
) -> Result<FullEvalBaseline> {
    let seeds = seeds.child("full-eval-baseline");
    let mut model = Recommender::new(dataset, RecommenderConfig { seed: seeds.seed("init"), ..rec.clone() })?;
    let report = model.fit(dataset, fit, &mut seeds.stream("train"))?;
    let val = model.evaluate(dataset, EvalSplit::Validation)?;
    let mut baseline = FullEvalBaseline::from_user_eval(dataset, &val.user_eval())?;
    baseline.val_ndcg_20 = report.best_val_ndcg_20;
    baseline.epochs_trained = report.epochs_run;
    Ok(baseline)
}

/// Cached [`FullEvalBaseline`], keyed on what it was computed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineCache {
    pub version: u32,
    pub dataset_fingerprint: String,
    pub recommender: RecommenderConfig,
    pub fit: FitOptions,
    pub seed: u64,
    pub baseline: FullEvalBaseline,
}

impl BaselineCache {
    pub const VERSION: u32 = 1;

    pub fn matches(&self, dataset: &InteractionDataset, config: &SearchConfig) -> bool {
        self.version == Self::VERSION
            && self.dataset_fingerprint == dataset_fingerprint(dataset)
            && self.recommender == config.recommender
            && self.fit == config.fit
            && self.seed == config.seed
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_vec(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

/// Loads the cached baseline at `path` if it matches, else builds and
/// stores a new one.
pub fn load_or_build_baseline(
    path: impl AsRef<Path>,
    dataset: &InteractionDataset,
    config: &SearchConfig,
) -> Result<FullEvalBaseline> {
    let path = path.as_ref();
    if path.exists() {
        if let Ok(cache) = BaselineCache::load(path) {
            if cache.matches(dataset, config) {
                return Ok(cache.baseline);
            }
        }
    }
    let baseline = build_full_eval_baseline(dataset, &config.recommender, config.fit, &SeedTree::new(config.seed))?;
    BaselineCache {
        version: BaselineCache::VERSION,
        dataset_fingerprint: dataset_fingerprint(dataset),
        recommender: config.recommender.clone(),
        fit: config.fit,
        seed: config.seed,
        baseline: baseline.clone(),
    }
    .save(path)?;
    Ok(baseline)
}

/// FNV-1a over the split contents, as 16 hex digits.
pub fn dataset_fingerprint(dataset: &InteractionDataset) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut feed = |x: u64| {
        for b in x.to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    feed(dataset.num_users() as u64);
    feed(dataset.num_items() as u64);
    for (tag, split) in [(1u64, dataset.train()), (2, dataset.val()), (3, dataset.test())] {
        feed(tag);
        for x in split {
            feed((u64::from(x.user) << 32) | u64::from(x.item));
        }
    }
    format!("{h:016x}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub candidates: Vec<CandidateMaskSet>,
    pub trace: Vec<TraceRecord>,
}

fn mean(xs: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = xs.len();
    if n == 0 {
        0.0
    } else {
        xs.sum::<f64>() / n as f64
    }
}

/// Runs the full search. `on_iteration` sees every trace record as soon as
/// it is produced.
pub fn run_search(
    dataset: &InteractionDataset,
    config: &SearchConfig,
    baseline: &FullEvalBaseline,
    mut on_iteration: impl FnMut(&TraceRecord) -> Result<()>,
) -> Result<SearchOutcome> {
    config.validate()?;
    let seeds = SeedTree::new(config.seed);
    let d_max = config.recommender.d_max;
    let walk = config.walk();
    let nu = dataset.num_users();
    let n = dataset.num_entities();
    let ranges = [
        PopularityRange::of(dataset.user_popularity()),
        PopularityRange::of(dataset.item_popularity()),
    ];
    let side_of = |e: usize| if e < nu { 0 } else { 1 };
    let popularity = dataset.popularity();

    let mut policy = PolicyEnsemble::new(&config.td3, &seeds.child("agents"))?;
    let mut noise = [
        NoiseProcess::new(config.noise, nu),
        NoiseProcess::new(config.noise, dataset.num_items()),
    ];
    let mut model = Recommender::new(
        dataset,
        RecommenderConfig {
            seed: seeds.seed("recommender"),
            ..config.recommender.clone()
        },
    )?;
    let mut candidates: Vec<CandidateMaskSet> = config
        .target_sparsities
        .iter()
        .map(|&c| CandidateMaskSet::new(c, config.top_l))
        .collect();
    let mut trace = Vec::new();

    for episode in 0..config.episodes {
        let mut dims = vec![d_max; n];
        let mut states: Vec<SearchState> = (0..n)
            .map(|e| compute_state(popularity[e], &ranges[side_of(e)], d_max, d_max, 1.0))
            .collect();
        for p in &mut noise {
            p.reset();
        }

        for iter in 0..config.iterations_per_episode {
            let it_seeds = seeds.child(&format!("episode-{episode}/iter-{iter}"));
            let mut noise_rng = it_seeds.stream("noise");
            let mut walk_rng = it_seeds.stream("walk");

            // Propose sizes for both sides.
            let mut proposal = Vec::with_capacity(n);
            for (s, side) in Side::BOTH.into_iter().enumerate() {
                let range = if s == 0 { 0..nu } else { nu..n };
                let side_states = &states[range];
                let agent = policy.agent(side);
                let outputs = agent.act(side_states)?;
                let eps = noise[s].sample(&mut noise_rng);
                let d_hat: Vec<f64> = outputs
                    .iter()
                    .zip(&eps)
                    .map(|(&o, &e)| raw_action(o, e, d_max))
                    .collect();
                if config.random_walk {
                    let zs = d_hat
                        .iter()
                        .map(|&d| random_walk(d, &walk, &mut walk_rng))
                        .collect::<Result<Vec<_>>>()?;
                    proposal.extend(select_actions(&agent.critics[0], side_states, &zs, d_max)?);
                } else {
                    proposal.extend(d_hat.iter().map(|&d| round_action(d, d_max)));
                }
            }

            if !config.warm_start || (episode == 0 && iter == 0) {
                model.reinit(it_seeds.seed("recommender"))?;
            }
            model.set_dims(&proposal)?;
            let trained = model.train_epochs(dataset, config.epochs_per_iteration, &mut it_seeds.stream("train"));
            let quality = match trained {
                Ok(_) => {
                    let val = model.evaluate(dataset, EvalSplit::Validation)?;
                    Some(QualitySnapshot::compute(dataset, &val.user_eval(), baseline)?)
                }
                Err(Error::NonFinite(msg)) => {
                    eprintln!("episode {episode} iteration {iter} aborted: {msg}");
                    None
                }
                Err(e) => return Err(e),
            };
            let Some(quality) = quality else {
                model.set_dims(&dims)?;
                let record = TraceRecord {
                    episode,
                    iter,
                    mean_action_users: mean(dims[..nu].iter().map(|&d| d as f64)),
                    mean_action_items: mean(dims[nu..].iter().map(|&d| d as f64)),
                    mean_reward: None,
                    critic_loss: None,
                    actor_loss: None,
                    buffer_len: policy.users.buffer.len() + policy.items.buffer.len(),
                    sparsity: sparsity_of(&dims, d_max),
                    mean_q: None,
                    aborted: true,
                };
                on_iteration(&record)?;
                trace.push(record);
                continue;
            };
            dims = proposal;

            let rewards: Vec<f64> = (0..n)
                .map(|e| compute_reward(quality.q[e], dims[e], config.lambda, d_max))
                .collect();
            let next: Vec<SearchState> = (0..n)
                .map(|e| compute_state(popularity[e], &ranges[side_of(e)], dims[e], d_max, quality.q[e]))
                .collect();
            for e in 0..n {
                let side = if e < nu { Side::User } else { Side::Item };
                policy.agent_mut(side).buffer.push(Transition {
                    state: states[e],
                    action: dims[e],
                    reward: rewards[e],
                    next_state: next[e],
                });
            }
            states = next;

            let mut td3_rng = it_seeds.stream("td3");
            let mut critic_losses = Vec::new();
            let mut actor_losses = Vec::new();
            for _ in 0..config.td3.updates_for(n) {
                for side in Side::BOTH {
                    if let Some(stats) = policy.agent_mut(side).update(&config.td3, d_max, &mut td3_rng)? {
                        critic_losses.push(stats.critic_loss);
                        actor_losses.extend(stats.actor_loss);
                    }
                }
            }

            let sparsity = sparsity_of(&dims, d_max);
            let cand = Candidate {
                dims: dims.clone(),
                mean_q: quality.mean_q,
                sparsity,
                episode,
                iter,
            };
            for set in &mut candidates {
                set.offer(&cand);
            }

            let record = TraceRecord {
                episode,
                iter,
                mean_action_users: mean(dims[..nu].iter().map(|&d| d as f64)),
                mean_action_items: mean(dims[nu..].iter().map(|&d| d as f64)),
                mean_reward: Some(mean(rewards.iter().copied())),
                critic_loss: (!critic_losses.is_empty()).then(|| mean(critic_losses.iter().copied())),
                actor_loss: (!actor_losses.is_empty()).then(|| mean(actor_losses.iter().copied())),
                buffer_len: policy.users.buffer.len() + policy.items.buffer.len(),
                sparsity,
                mean_q: Some(quality.mean_q),
                aborted: false,
            };
            on_iteration(&record)?;
            trace.push(record);
        }
    }
    Ok(SearchOutcome { candidates, trace })
}

/// A retrained model under a fixed assignment.
#[derive(Debug, Clone)]
pub struct Retrained {
    pub model: Recommender,
    pub val_mean_q: f64,
    pub test: MetricSummary,
    pub epochs_trained: usize,
}

/// Trains a fresh recommender under `dims` to convergence.
pub fn retrain_assignment(
    dataset: &InteractionDataset,
    rec: &RecommenderConfig,
    dims: &[usize],
    fit: FitOptions,
    baseline: &FullEvalBaseline,
    seeds: &SeedTree,
) -> Result<Retrained> {
    let mut model = Recommender::new(dataset, RecommenderConfig { seed: seeds.seed("init"), ..rec.clone() })?;
    model.set_dims(dims)?;
    let report = model.fit(dataset, fit, &mut seeds.stream("train"))?;
    let val = model.evaluate(dataset, EvalSplit::Validation)?;
    let val_mean_q = QualitySnapshot::compute(dataset, &val.user_eval(), baseline)?.mean_q;
    let test = model.evaluate(dataset, EvalSplit::Test)?.summary();
    Ok(Retrained {
        model,
        val_mean_q,
        test,
        epochs_trained: report.epochs_run,
    })
}

#[derive(Debug, Clone)]
pub struct SelectionOutcome {
    /// 1-based rank of the chosen candidate in its set.
    pub rank: usize,
    pub dims: Vec<usize>,
    pub sparsity: f64,
    pub retrained: Retrained,
    /// Validation mean quality of every retrained candidate, by rank.
    pub val_mean_q: Vec<f64>,
}

/// Retrains every candidate of `set` and keeps the one with the highest
/// validation mean quality (ties to the better search rank).
pub fn selective_retrain(
    dataset: &InteractionDataset,
    rec: &RecommenderConfig,
    set: &CandidateMaskSet,
    fit: FitOptions,
    baseline: &FullEvalBaseline,
    seeds: &SeedTree,
) -> Result<SelectionOutcome> {
    if set.is_empty() {
        return Err(Error::NoCandidates(set.target));
    }
    let label = sparsity_label(set.target);
    let runs = set
        .entries
        .par_iter()
        .enumerate()
        .map(|(k, cand)| {
            let s = seeds.child(&format!("retrain/{label}/rank-{}", k + 1));
            retrain_assignment(dataset, rec, &cand.dims, fit, baseline, &s)
        })
        .collect::<Result<Vec<_>>>()?;
    let val_mean_q: Vec<f64> = runs.iter().map(|r| r.val_mean_q).collect();
    let mut best = 0;
    for k in 1..runs.len() {
        if val_mean_q[k] > val_mean_q[best] {
            best = k;
        }
    }
    let cand = &set.entries[best];
    let retrained = runs.into_iter().nth(best).expect("index in range");
    Ok(SelectionOutcome {
        rank: best + 1,
        dims: cand.dims.clone(),
        sparsity: cand.sparsity,
        retrained,
        val_mean_q,
    })
}

/// Directory-friendly label of a sparsity target, e.g. `0.90`.
pub fn sparsity_label(c: f64) -> String {
    format!("{c:.2}")
}

/// Uniform size `⌊(1 - c)·d_max⌋`, at least 1.
pub fn equal_size(c: f64, d_max: usize) -> usize {
    (((1.0 - c) * d_max as f64).floor() as usize).clamp(1, d_max)
}

pub fn equal_sizes(c: f64, d_max: usize, entities: usize) -> Vec<usize> {
    vec![equal_size(c, d_max); entities]
}

/// Sizes drawn from `U[1, 2⌊(1 - c)·d_max⌋]` before adjustment.
pub fn draw_mixed_random(c: f64, d_max: usize, entities: usize, seeds: &SeedTree) -> Vec<usize> {
    let hi = (2 * equal_size(c, d_max)).clamp(1, d_max);
    let mut rng = seeds.stream("mixed-random");
    (0..entities).map(|_| rng.random_range(1..=hi)).collect()
}

/// Mixed random sizes scaled down (never below 1) until the assignment
/// meets sparsity `c`.
pub fn mixed_random_sizes(c: f64, d_max: usize, entities: usize, seeds: &SeedTree) -> Vec<usize> {
    let mut dims = draw_mixed_random(c, d_max, entities, seeds);
    let budget = (1.0 - c) * (entities * d_max) as f64;
    let total: usize = dims.iter().sum();
    if total as f64 > budget {
        let scale = budget / total as f64;
        for d in &mut dims {
            *d = ((*d as f64 * scale).floor() as usize).max(1);
        }
    }
    // Floors can leave the rounding slack on the wrong side of the budget.
    while sparsity_of(&dims, d_max) < c {
        let i = (0..dims.len())
            .max_by_key(|&i| (dims[i], std::cmp::Reverse(i)))
            .expect("entities");
        if dims[i] == 1 {
            break;
        }
        dims[i] -= 1;
    }
    dims
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    Es,
    Mr,
}

impl std::str::FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "es" => Ok(BaselineKind::Es),
            "mr" => Ok(BaselineKind::Mr),
            other => Err(Error::Invalid(format!("unknown baseline '{other}' (expected es or mr)"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BaselineOutcome {
    pub kind: BaselineKind,
    pub dims: Vec<usize>,
    pub sparsity: f64,
    pub retrained: Retrained,
}

/// Fixed-size baseline under target sparsity `c`, retrained to convergence.
pub fn run_baseline(
    dataset: &InteractionDataset,
    kind: BaselineKind,
    c: f64,
    config: &SearchConfig,
    baseline: &FullEvalBaseline,
) -> Result<BaselineOutcome> {
    if !(c > 0.0 && c < 1.0) {
        return Err(Error::Invalid(format!("sparsity {c} must lie in (0, 1)")));
    }
    let d_max = config.recommender.d_max;
    let n = dataset.num_entities();
    let label = sparsity_label(c);
    let seeds = SeedTree::new(config.seed).child(&format!("baseline-{kind:?}/{label}"));
    let dims = match kind {
        BaselineKind::Es => equal_sizes(c, d_max, n),
        BaselineKind::Mr => mixed_random_sizes(c, d_max, n, &seeds),
    };
    let sparsity = sparsity_of(&dims, d_max);
    let retrained = retrain_assignment(dataset, &config.recommender, &dims, config.fit, baseline, &seeds)?;
    Ok(BaselineOutcome {
        kind,
        dims,
        sparsity,
        retrained,
    })
}
