//! Base recommenders scoring user–item affinity from masked embeddings.
//!
//! Both backbones score `z_u · z_v` where `Z = P(E ⊙ M)` for a linear
//! propagation `P`: the identity for `mf-dot`, the layer mean of symmetric
//! normalized neighbour aggregation for `lightgcn-lite`. Training minimizes
//! the BPR loss with L2 on the (masked) embeddings of each batch, using Adam
//! restricted to unmasked coordinates, so masked values never move.

use std::path::Path;

use ndarray::{s, Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::InteractionDataset;
use crate::embedding::MaskedEmbeddingTable;
use crate::error::{Error, Result};
use crate::metrics::{RankingReport, K_SET};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackboneKind {
    MfDot,
    LightgcnLite,
}

impl std::fmt::Display for BackboneKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BackboneKind::MfDot => "mf-dot",
            BackboneKind::LightgcnLite => "lightgcn-lite",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RecommenderConfig {
    pub backbone: BackboneKind,
    pub d_max: usize,
    pub learning_rate: f64,
    /// Weight of the L2 penalty on batch embeddings.
    pub l2_weight: f64,
    /// Propagation depth; lightgcn-lite only.
    pub num_layers: usize,
    pub batch_size: usize,
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for RecommenderConfig {
    fn default() -> Self {
        Self::mf_dot()
    }
}

impl RecommenderConfig {
    pub fn mf_dot() -> Self {
        Self {
            backbone: BackboneKind::MfDot,
            d_max: 128,
            learning_rate: 1e-2,
            l2_weight: 1e-4,
            num_layers: 0,
            batch_size: 256,
            init_scale: 0.1,
            seed: 0,
        }
    }

    pub fn lightgcn_lite() -> Self {
        Self {
            backbone: BackboneKind::LightgcnLite,
            learning_rate: 5e-3,
            num_layers: 3,
            batch_size: 2048,
            ..Self::mf_dot()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            problems.push(format!("learning_rate must be > 0 (got {})", self.learning_rate));
        }
        if !(self.l2_weight >= 0.0 && self.l2_weight.is_finite()) {
            problems.push(format!("l2_weight must be >= 0 (got {})", self.l2_weight));
        }
        if self.backbone == BackboneKind::LightgcnLite && !(1..=3).contains(&self.num_layers) {
            problems.push(format!("num_layers must be in [1, 3] (got {})", self.num_layers));
        }
        if self.d_max == 0 {
            problems.push("d_max must be >= 1".into());
        }
        if self.batch_size == 0 {
            problems.push("batch_size must be >= 1".into());
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            problems.push(format!("init_scale must be >= 0 (got {})", self.init_scale));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Invalid(problems.join("; ")))
        }
    }
}

/// Symmetric-normalized user–item bipartite adjacency, in CSR over the
/// concatenated entity numbering.
#[derive(Debug, Clone)]
pub struct NormalizedGraph {
    offsets: Vec<usize>,
    neighbors: Vec<u32>,
    weights: Vec<f64>,
}

impl NormalizedGraph {
    pub fn from_train(dataset: &InteractionDataset) -> Self {
        let n = dataset.num_entities();
        let nu = dataset.num_users();
        let mut adj: Vec<Vec<u32>> = vec![Vec::new(); n];
        for x in dataset.train() {
            let v = nu + x.item as usize;
            adj[x.user as usize].push(v as u32);
            adj[v].push(x.user);
        }
        let deg: Vec<f64> = adj.iter().map(|a| a.len() as f64).collect();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut neighbors = Vec::new();
        let mut weights = Vec::new();
        offsets.push(0);
        for (i, nbrs) in adj.iter().enumerate() {
            for &j in nbrs {
                neighbors.push(j);
                weights.push(1.0 / (deg[i] * deg[j as usize]).sqrt());
            }
            offsets.push(neighbors.len());
        }
        Self {
            offsets,
            neighbors,
            weights,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    /// `Â · x`
    pub fn multiply(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let d = x.ncols();
        let x = x.as_standard_layout();
        let src = x.as_slice().expect("standard layout");
        let mut out = Array2::<f64>::zeros((self.num_nodes(), d));
        let dst = out.as_slice_mut().unwrap();
        for i in 0..self.num_nodes() {
            let row = &mut dst[i * d..(i + 1) * d];
            for e in self.offsets[i]..self.offsets[i + 1] {
                let j = self.neighbors[e] as usize;
                let w = self.weights[e];
                for (o, &v) in row.iter_mut().zip(&src[j * d..(j + 1) * d]) {
                    *o += w * v;
                }
            }
        }
        out
    }

    /// Layer mean `(x + Âx + … + Â^L x) / (L + 1)`. `Â` is symmetric, so the
    /// same map also carries gradients back to the layer-0 embeddings.
    pub fn layer_mean(&self, x: ArrayView2<'_, f64>, layers: usize) -> Array2<f64> {
        let mut acc = x.to_owned();
        let mut cur = x.to_owned();
        for _ in 0..layers {
            cur = self.multiply(cur.view());
            acc += &cur;
        }
        acc /= (layers + 1) as f64;
        acc
    }
}

/// Which interactions a ranking excludes and which it is scored against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalSplit {
    /// Validation items; train items excluded.
    Validation,
    /// Test items; train and validation items excluded.
    Test,
}

/// Adam over the embedding table, applied row by row and only to each row's
/// unmasked prefix.
#[derive(Debug, Clone)]
struct TableAdam {
    m: Array2<f64>,
    v: Array2<f64>,
    step: i32,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl TableAdam {
    fn new(rows: usize, cols: usize) -> Self {
        Self {
            m: Array2::zeros((rows, cols)),
            v: Array2::zeros((rows, cols)),
            step: 0,
        }
    }

    fn apply(&mut self, table: &mut MaskedEmbeddingTable, grad: &Array2<f64>, rows: &[usize], lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.step);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.step);
        let dims = table.dims().to_vec();
        let values = table.values_mut();
        for &n in rows {
            for s in 0..dims[n] {
                let g = grad[[n, s]];
                let m = &mut self.m[[n, s]];
                *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                let v = &mut self.v[[n, s]];
                *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                values[[n, s]] -= lr * (self.m[[n, s]] / bc1) / ((self.v[[n, s]] / bc2).sqrt() + ADAM_EPS);
            }
        }
    }
}

pub type Triple = (u32, u32, u32);

/// Numerically stable `-ln σ(x)`.
pub fn neg_log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

#[derive(Debug, Clone)]
pub struct Recommender {
    config: RecommenderConfig,
    table: MaskedEmbeddingTable,
    graph: Option<NormalizedGraph>,
    adam: TableAdam,
}

impl Recommender {
    /// Fresh recommender with every entity at `d_max`.
    pub fn new(dataset: &InteractionDataset, config: RecommenderConfig) -> Result<Self> {
        config.validate()?;
        let mut table = MaskedEmbeddingTable::new(dataset.num_users(), dataset.num_items(), config.d_max)?;
        table.init_values(config.seed, config.init_scale)?;
        let graph = match config.backbone {
            BackboneKind::MfDot => None,
            BackboneKind::LightgcnLite => Some(NormalizedGraph::from_train(dataset)),
        };
        let adam = TableAdam::new(table.num_entities(), config.d_max);
        Ok(Self {
            config,
            table,
            graph,
            adam,
        })
    }

    /// Assembles a recommender around an existing table. `num_layers = 0`
    /// is accepted here and reduces lightgcn-lite to plain inner products.
    pub fn from_table(
        dataset: &InteractionDataset,
        config: RecommenderConfig,
        table: MaskedEmbeddingTable,
    ) -> Result<Self> {
        if table.num_users() != dataset.num_users() || table.num_items() != dataset.num_items() {
            return Err(Error::Shape {
                expected: format!("{}+{} rows", dataset.num_users(), dataset.num_items()),
                actual: format!("{}+{} rows", table.num_users(), table.num_items()),
            });
        }
        let graph = match config.backbone {
            BackboneKind::MfDot => None,
            BackboneKind::LightgcnLite => Some(NormalizedGraph::from_train(dataset)),
        };
        let adam = TableAdam::new(table.num_entities(), table.d_max());
        Ok(Self {
            config,
            table,
            graph,
            adam,
        })
    }

    pub fn config(&self) -> &RecommenderConfig {
        &self.config
    }

    pub fn table(&self) -> &MaskedEmbeddingTable {
        &self.table
    }

    pub fn table_mut(&mut self) -> &mut MaskedEmbeddingTable {
        &mut self.table
    }

    pub fn set_dims(&mut self, dims: &[usize]) -> Result<()> {
        self.table.set_dims(dims)
    }

    /// New parameter draw and optimizer state; dims are kept.
    pub fn reinit(&mut self, seed: u64) -> Result<()> {
        self.config.seed = seed;
        self.table.init_values(seed, self.config.init_scale)?;
        self.adam = TableAdam::new(self.table.num_entities(), self.table.d_max());
        Ok(())
    }

    /// Final representations `Z`, one row per entity.
    pub fn final_embeddings(&self) -> Array2<f64> {
        let masked = self.table.masked_values();
        match &self.graph {
            None => masked,
            Some(g) => g.layer_mean(masked.view(), self.config.num_layers),
        }
    }

    fn check_ids(&self, user: u32, item: u32) -> Result<()> {
        if user as usize >= self.table.num_users() {
            return Err(Error::Index {
                index: user as usize,
                len: self.table.num_users(),
            });
        }
        if item as usize >= self.table.num_items() {
            return Err(Error::Index {
                index: item as usize,
                len: self.table.num_items(),
            });
        }
        Ok(())
    }

    pub fn score(&self, user: u32, item: u32) -> Result<f64> {
        self.check_ids(user, item)?;
        let v = self.table.num_users() + item as usize;
        match &self.graph {
            None => {
                let d = self.table.dim(user as usize).min(self.table.dim(v));
                let vals = self.table.values();
                Ok(vals.slice(s![user as usize, ..d]).dot(&vals.slice(s![v, ..d])))
            }
            Some(_) => {
                let z = self.final_embeddings();
                Ok(z.row(user as usize).dot(&z.row(v)))
            }
        }
    }

    /// All user × item scores.
    pub fn score_matrix(&self) -> Array2<f64> {
        let z = self.final_embeddings();
        let nu = self.table.num_users();
        let users = z.slice(s![..nu, ..]);
        let items = z.slice(s![nu.., ..]);
        users.dot(&items.t())
    }

    /// Top-`k` items for `user`, excluding its train items; ties go to the
    /// smaller item id.
    pub fn rank_items(&self, dataset: &InteractionDataset, user: u32, k: usize) -> Result<Vec<u32>> {
        self.check_ids(user, 0)?;
        let z = self.final_embeddings();
        let nu = self.table.num_users();
        let scores = z.slice(s![nu.., ..]).dot(&z.row(user as usize));
        Ok(top_k(scores.as_slice().unwrap(), &[dataset.train_items(user)], k))
    }

    /// Top-`k` rankings for every user under the exclusion rule of `split`.
    pub fn rank_all(&self, dataset: &InteractionDataset, k: usize, split: EvalSplit) -> Vec<Vec<u32>> {
        let scores = self.score_matrix();
        (0..dataset.num_users() as u32)
            .into_par_iter()
            .map(|u| {
                let row = scores.row(u as usize);
                let row = row.as_slice().expect("row-major scores");
                match split {
                    EvalSplit::Validation => top_k(row, &[dataset.train_items(u)], k),
                    EvalSplit::Test => top_k(row, &[dataset.train_items(u), dataset.val_items(u)], k),
                }
            })
            .collect()
    }

    /// Per-user Recall/NDCG at every cutoff of [`K_SET`].
    pub fn evaluate(&self, dataset: &InteractionDataset, split: EvalSplit) -> Result<RankingReport> {
        let k = *K_SET.iter().max().unwrap();
        let rankings = self.rank_all(dataset, k, split);
        match split {
            EvalSplit::Validation => RankingReport::from_rankings(&rankings, |u| dataset.val_items(u)),
            EvalSplit::Test => RankingReport::from_rankings(&rankings, |u| dataset.test_items(u)),
        }
    }

    /// Mean BPR + L2 loss of a batch and its gradient with respect to the
    /// raw table values. Masked coordinates get exactly zero gradient.
    pub fn batch_loss_and_gradient(&self, triples: &[Triple]) -> (f64, Array2<f64>) {
        let mut grad = Array2::zeros(self.table.values().raw_dim());
        let loss = self.accumulate_batch(triples, &mut grad, &mut Vec::new());
        (loss, grad)
    }

    fn accumulate_batch(&self, triples: &[Triple], grad: &mut Array2<f64>, touched: &mut Vec<usize>) -> f64 {
        let nu = self.table.num_users();
        let b = triples.len() as f64;
        let gamma = self.config.l2_weight;
        let dims = self.table.dims();
        let vals = self.table.values();
        let mut loss = 0.0;

        let add_reg = |grad: &mut Array2<f64>, n: usize, loss: &mut f64| {
            let row = vals.slice(s![n, ..dims[n]]);
            *loss += gamma * row.dot(&row) / b;
            grad.slice_mut(s![n, ..dims[n]])
                .scaled_add(2.0 * gamma / b, &row);
        };

        match &self.graph {
            None => {
                for &(u, vp, vn) in triples {
                    let (u, vp, vn) = (u as usize, nu + vp as usize, nu + vn as usize);
                    let (du, dp, dn) = (dims[u], dims[vp], dims[vn]);
                    let eu = vals.slice(s![u, ..du]);
                    let ep = vals.slice(s![vp, ..dp]);
                    let en = vals.slice(s![vn, ..dn]);
                    let x = eu.slice(s![..du.min(dp)]).dot(&ep.slice(s![..du.min(dp)]))
                        - eu.slice(s![..du.min(dn)]).dot(&en.slice(s![..du.min(dn)]));
                    loss += neg_log_sigmoid(x) / b;
                    // d(-ln σ(x))/dx = -σ(-x)
                    let coef = -crate::nn::sigmoid(-x) / b;
                    {
                        let mut gu = grad.slice_mut(s![u, ..du]);
                        gu.slice_mut(s![..du.min(dp)])
                            .scaled_add(coef, &ep.slice(s![..du.min(dp)]));
                        gu.slice_mut(s![..du.min(dn)])
                            .scaled_add(-coef, &en.slice(s![..du.min(dn)]));
                    }
                    grad.slice_mut(s![vp, ..du.min(dp)])
                        .scaled_add(coef, &eu.slice(s![..du.min(dp)]));
                    grad.slice_mut(s![vn, ..du.min(dn)])
                        .scaled_add(-coef, &eu.slice(s![..du.min(dn)]));
                    for n in [u, vp, vn] {
                        add_reg(grad, n, &mut loss);
                        touched.push(n);
                    }
                }
            }
            Some(graph) => {
                let z = self.final_embeddings();
                let mut gz = Array2::<f64>::zeros(z.raw_dim());
                for &(u, vp, vn) in triples {
                    let (u, vp, vn) = (u as usize, nu + vp as usize, nu + vn as usize);
                    let x = z.row(u).dot(&z.row(vp)) - z.row(u).dot(&z.row(vn));
                    loss += neg_log_sigmoid(x) / b;
                    let coef = -crate::nn::sigmoid(-x) / b;
                    let diff = &z.row(vp) - &z.row(vn);
                    gz.row_mut(u).scaled_add(coef, &diff);
                    gz.row_mut(vp).scaled_add(coef, &z.row(u));
                    gz.row_mut(vn).scaled_add(-coef, &z.row(u));
                }
                let mut back = graph.layer_mean(gz.view(), self.config.num_layers);
                for (n, mut row) in back.axis_iter_mut(Axis(0)).enumerate() {
                    row.slice_mut(s![dims[n]..]).fill(0.0);
                }
                *grad += &back;
                for &(u, vp, vn) in triples {
                    for n in [u as usize, nu + vp as usize, nu + vn as usize] {
                        add_reg(grad, n, &mut loss);
                    }
                }
                touched.extend(0..self.table.num_entities());
            }
        }
        loss
    }

    /// Runs `epochs` passes of `|train|` sampled triples each and returns
    /// the mean loss of every epoch.
    pub fn train_epochs(&mut self, dataset: &InteractionDataset, epochs: usize, rng: &mut Rng) -> Result<Vec<f64>> {
        let per_epoch = dataset.train().len();
        let batch = self.config.batch_size;
        let mut grad = Array2::<f64>::zeros(self.table.values().raw_dim());
        let mut touched = Vec::with_capacity(3 * batch);
        let mut triples = Vec::with_capacity(batch);
        let mut trace = Vec::with_capacity(epochs);
        for epoch in 0..epochs {
            let mut remaining = per_epoch;
            let mut total = 0.0;
            while remaining > 0 {
                let size = remaining.min(batch);
                remaining -= size;
                triples.clear();
                for _ in 0..size {
                    triples.push(dataset.sample_bpr_triple(rng)?);
                }
                touched.clear();
                let loss = self.accumulate_batch(&triples, &mut grad, &mut touched);
                if !loss.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "BPR loss {loss} in epoch {epoch} ({} entities, sparsity {:.4})",
                        self.table.num_entities(),
                        self.table.sparsity()
                    )));
                }
                total += loss * size as f64;
                touched.sort_unstable();
                touched.dedup();
                self.adam.apply(&mut self.table, &grad, &touched, self.config.learning_rate);
                for &n in &touched {
                    grad.row_mut(n).fill(0.0);
                }
            }
            trace.push(total / per_epoch as f64);
        }
        Ok(trace)
    }

    /// Trains until validation NDCG@20 has not improved for `patience`
    /// epochs (or `max_epochs` is reached) and restores the best epoch.
    pub fn fit(&mut self, dataset: &InteractionDataset, opts: FitOptions, rng: &mut Rng) -> Result<FitReport> {
        let mut best = self.evaluate(dataset, EvalSplit::Validation)?.mean_ndcg(20);
        let mut best_values = self.table.values().clone();
        let mut best_epoch = 0;
        let mut losses = Vec::new();
        let mut epoch = 0;
        while epoch < opts.max_epochs && epoch - best_epoch < opts.patience {
            epoch += 1;
            losses.extend(self.train_epochs(dataset, 1, rng)?);
            let ndcg = self.evaluate(dataset, EvalSplit::Validation)?.mean_ndcg(20);
            if ndcg > best {
                best = ndcg;
                best_epoch = epoch;
                best_values.assign(self.table.values());
            }
        }
        self.table.values_mut().assign(&best_values);
        Ok(FitReport {
            epochs_run: epoch,
            best_epoch,
            best_val_ndcg_20: best,
            losses,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: Checkpoint::VERSION,
            config: self.config.clone(),
            num_users: self.table.num_users(),
            num_items: self.table.num_items(),
            dims: self.table.dims().to_vec(),
            values: self.table.values().iter().copied().collect(),
        }
    }

    pub fn from_checkpoint(dataset: &InteractionDataset, ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.version != Checkpoint::VERSION {
            return Err(Error::Invalid(format!("unsupported checkpoint version {}", ckpt.version)));
        }
        let rows = ckpt.num_users + ckpt.num_items;
        let values = Array2::from_shape_vec((rows, ckpt.config.d_max), ckpt.values.clone())
            .map_err(|e| Error::Invalid(e.to_string()))?;
        let mut table = MaskedEmbeddingTable::from_values(values, ckpt.num_users)?;
        table.set_dims(&ckpt.dims)?;
        Self::from_table(dataset, ckpt.config.clone(), table)
    }
}

/// Indices of the `k` largest scores outside `exclude` (each a sorted id
/// list), ordered by descending score then ascending id.
pub fn top_k(scores: &[f64], exclude: &[&[u32]], k: usize) -> Vec<u32> {
    let excluded = |v: u32| exclude.iter().any(|list| list.binary_search(&v).is_ok());
    let mut cand: Vec<(f64, u32)> = scores
        .iter()
        .enumerate()
        .filter(|&(v, _)| !excluded(v as u32))
        .map(|(v, &sc)| (sc, v as u32))
        .collect();
    let order = |a: &(f64, u32), b: &(f64, u32)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
    if cand.len() > k && k > 0 {
        cand.select_nth_unstable_by(k - 1, order);
        cand.truncate(k);
    }
    cand.truncate(k);
    cand.sort_unstable_by(order);
    cand.into_iter().map(|(_, v)| v).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitOptions {
    pub max_epochs: usize,
    pub patience: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_epochs: 300,
            patience: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_ndcg_20: f64,
    pub losses: Vec<f64>,
}

/// Serialized recommender: config, dims and the raw value matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub config: RecommenderConfig,
    pub num_users: usize,
    pub num_items: usize,
    pub dims: Vec<usize>,
    pub values: Vec<f64>,
}

impl Checkpoint {
    pub const VERSION: u32 = 1;

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
