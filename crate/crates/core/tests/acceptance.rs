//! Acceptance suite: one line per criterion, `PASS` or `FAIL`, with the
//! measured quantity next to its pinned tolerance. Exits non-zero if any
//! criterion fails.
//!
//! Criteria 6 to 9 need MovieLens-100K in RecBole `.inter` form, read from
//! `$CIESS_ML100K` or `data/ml-100k/ml-100k.inter` at the workspace root
//! (`scripts/fetch_ml100k.sh` downloads it there).

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use ciess_core::corpus::{load_interactions, split, Format, Interaction, InteractionDataset, SplitOptions};
use ciess_core::embedding::{sparsity_of, MaskedEmbeddingTable};
use ciess_core::explore::{step, step_distribution, WalkConfig};
use ciess_core::metrics::{eval_ensemble, group_mean, ndcg_at_k, recall_at_k};
use ciess_core::nn::{DenseNet, OutputActivation};
use ciess_core::recommender::{Recommender, RecommenderConfig, Triple};
use ciess_core::rng::{Rng, SeedTree};
use ciess_core::rundir::{baseline_into, load_candidates, retrain_into, search_into, FinalMetrics, RunDir};
use ciess_core::search::{BaselineKind, SearchConfig};
use ciess_core::td3::{
    critic_input, denormalize_action, random_state, raw_action, state_matrix, NoiseConfig, NoiseProcess,
    SearchState, Td3Agent, Td3Config, TraceRecord, Transition,
};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use statrs::distribution::{ChiSquared, ContinuousCDF};

// Tolerances and budgets.
const MASK_CONFIGS: usize = 1_000;
const WALK_TRIPLES: usize = 50;
const WALK_DRAWS: usize = 100_000;
const WALK_MIN_P: f64 = 0.01;
const PMF_SUM_TOL: f64 = 1e-12;
const METRIC_INSTANCES: usize = 1_000;
const METRIC_TOL: f64 = 1e-12;
const GRAD_PROBES: usize = 100;
const GRAD_TOL: f64 = 1e-4;
const GRAD_STEP: f64 = 1e-6;
/// Relative errors use `max(|analytic|, |numeric|, GRAD_FLOOR)` as denominator.
const GRAD_FLOOR: f64 = 1e-8;
const BANDIT_OPTIMUM: f64 = 80.0;
const BANDIT_BAND: (f64, f64) = (72.0, 88.0);
const BANDIT_SHARE: f64 = 0.90;
const BANDIT_MAX_UPDATES: usize = 2_000;
const E2E_SPARSITY: f64 = 0.90;
const E2E_EPISODES: usize = 15;
const E2E_ITERATIONS: usize = 10;
const E2E_SEED: u64 = 1;
const DATA_SPLIT_SEED: u64 = 7;
const LAST_EPISODES: usize = 5;

struct Line {
    id: u8,
    name: &'static str,
    pass: bool,
    detail: String,
    elapsed: Duration,
}

fn timed(id: u8, name: &'static str, limit: Duration, f: impl FnOnce() -> (bool, String)) -> Line {
    let started = Instant::now();
    let (ok, mut detail) = f();
    let elapsed = started.elapsed();
    let in_time = elapsed <= limit;
    if !in_time {
        detail.push_str(&format!("; over the {:.0} s budget", limit.as_secs_f64()));
    }
    Line {
        id,
        name,
        pass: ok && in_time,
        detail,
        elapsed,
    }
}

fn report(line: Line) -> Line {
    print_line(&line);
    line
}

fn print_line(l: &Line) {
    println!(
        "criterion {} {:<28} {}  ({:.1} s) {}",
        l.id,
        l.name,
        if l.pass { "PASS" } else { "FAIL" },
        l.elapsed.as_secs_f64(),
        l.detail
    );
}

fn main() {
    let mut lines = vec![
        report(timed(1, "mask semantics", Duration::from_secs(10), mask_semantics)),
        report(timed(2, "walk distribution", Duration::from_secs(30), walk_distribution)),
        report(timed(3, "metric oracles", Duration::from_secs(10), metric_oracles)),
        report(timed(4, "gradient checks", Duration::from_secs(60), gradient_checks)),
        report(timed(5, "td3 bandit", Duration::from_secs(300), td3_bandit)),
    ];
    lines.extend(end_to_end());

    let failed: Vec<u8> = lines.iter().filter(|l| !l.pass).map(|l| l.id).collect();
    println!(
        "acceptance: {}/{} criteria passed",
        lines.len() - failed.len(),
        lines.len()
    );
    if !failed.is_empty() {
        println!("failed: {failed:?}");
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------- 1

fn mask_semantics() -> (bool, String) {
    let mut rng = Rng::seed_from_u64(11);
    let mut bad = Vec::new();
    let mut lookups = 0usize;
    for cfg in 0..MASK_CONFIGS {
        let d_max = rng.random_range(1..=256usize);
        let users = rng.random_range(1..=20usize);
        let items = rng.random_range(1..=20usize);
        let n = users + items;
        let dims: Vec<usize> = (0..n).map(|_| rng.random_range(1..=d_max)).collect();
        let mut table = MaskedEmbeddingTable::new(users, items, d_max).unwrap();
        table.init_values(cfg as u64, 1.0).unwrap();
        table.set_dims(&dims).unwrap();

        // Materialized 0/1 mask, counted cell by cell.
        let mut zeros = 0usize;
        for (e, &d) in dims.iter().enumerate() {
            let row = table.lookup(e).unwrap();
            lookups += 1;
            for j in 0..d_max {
                let keep = j < d;
                if !keep {
                    zeros += 1;
                }
                let expect = if keep { table.values()[[e, j]] } else { 0.0 };
                if row[j].to_bits() != expect.to_bits() {
                    bad.push(format!("config {cfg} entity {e} column {j}"));
                }
            }
        }
        let oracle = zeros as f64 / (n * d_max) as f64;
        if table.sparsity() != oracle || sparsity_of(&dims, d_max) != oracle {
            bad.push(format!("config {cfg}: sparsity {} vs oracle {oracle}", table.sparsity()));
        }
    }
    (
        bad.is_empty(),
        format!("{MASK_CONFIGS} configs, {lookups} lookups, {} mismatches", bad.len()),
    )
}

// ---------------------------------------------------------------- 2

fn walk_distribution() -> (bool, String) {
    let mut rng = Rng::seed_from_u64(22);
    let mut min_p = f64::INFINITY;
    let mut max_sum_err: f64 = 0.0;
    let mut failures = 0;
    for _ in 0..WALK_TRIPLES {
        let d_max = rng.random_range(2..=256usize);
        let t = rng.random_range(1..=20usize);
        let d = rng.random_range(1..=d_max);
        let cfg = WalkConfig { threshold: t, walk_length: 1, d_max };
        let pmf = step_distribution(d, &cfg).unwrap();
        max_sum_err = max_sum_err.max((pmf.iter().map(|x| x.1).sum::<f64>() - 1.0).abs());

        let mut counts = vec![0u64; pmf.len()];
        for _ in 0..WALK_DRAWS {
            let next = step(d, &cfg, &mut rng).unwrap();
            let slot = pmf.iter().position(|&(x, _)| x == next).expect("step left the neighbourhood");
            counts[slot] += 1;
        }
        let stat: f64 = pmf
            .iter()
            .zip(&counts)
            .map(|(&(_, p), &o)| {
                let e = p * WALK_DRAWS as f64;
                (o as f64 - e).powi(2) / e
            })
            .sum();
        let p_value = if pmf.len() > 1 {
            1.0 - ChiSquared::new((pmf.len() - 1) as f64).unwrap().cdf(stat)
        } else {
            // A single neighbour: every draw must land on it.
            if counts[0] == WALK_DRAWS as u64 { 1.0 } else { 0.0 }
        };
        min_p = min_p.min(p_value);
        if p_value <= WALK_MIN_P {
            failures += 1;
        }
    }
    (
        failures == 0 && max_sum_err <= PMF_SUM_TOL,
        format!(
            "{WALK_TRIPLES} triples x {WALK_DRAWS} draws: min p = {min_p:.4} (need > {WALK_MIN_P}), {failures} below; max |sum pmf - 1| = {max_sum_err:.1e}"
        ),
    )
}

// ---------------------------------------------------------------- 3

fn brute_recall(ranked: &[u32], relevant: &HashSet<u32>, k: usize) -> f64 {
    let top: HashSet<u32> = ranked.iter().take(k).copied().collect();
    top.intersection(relevant).count() as f64 / relevant.len() as f64
}

fn brute_ndcg(ranked: &[u32], relevant: &HashSet<u32>, k: usize) -> f64 {
    let gains: Vec<f64> = ranked.iter().map(|v| if relevant.contains(v) { 1.0 } else { 0.0 }).collect();
    let dcg = |g: &[f64]| -> f64 {
        g.iter()
            .take(k)
            .enumerate()
            .map(|(i, &x)| (2f64.powf(x) - 1.0) / (i as f64 + 2.0).ln() * 2f64.ln())
            .sum()
    };
    let mut ideal = gains.clone();
    ideal.sort_by(|a, b| b.partial_cmp(a).unwrap());
    dcg(&gains) / dcg(&ideal)
}

fn metric_oracles() -> (bool, String) {
    let mut rng = Rng::seed_from_u64(33);
    let mut worst: f64 = 0.0;
    for _ in 0..METRIC_INSTANCES {
        let n = rng.random_range(1..=20u32);
        let mut ranked: Vec<u32> = (0..n).collect();
        ranked.shuffle(&mut rng);
        let mut relevant: Vec<u32> = (0..n).filter(|_| rng.random_bool(0.3)).collect();
        if relevant.is_empty() {
            relevant.push(rng.random_range(0..n));
        }
        let set: HashSet<u32> = relevant.iter().copied().collect();
        let k = rng.random_range(1..=20usize);
        let r = recall_at_k(&ranked, &relevant, k).unwrap();
        let g = ndcg_at_k(&ranked, &relevant, k).unwrap();
        worst = worst
            .max((r - brute_recall(&ranked, &set, k)).abs())
            .max((g - brute_ndcg(&ranked, &set, k)).abs());
    }

    // Fixtures computed by hand.
    let ensemble = eval_ensemble(&[0.2, 0.4, 0.6], &[0.1, 0.3, 0.5]);
    let group = group_mean(&[0.9, 0.1, 0.4, 0.7], &[0, 2, 3]).unwrap();
    let single = group_mean(&[0.25, 0.5], &[1]).unwrap();
    let fixture_err = (ensemble - 0.35).abs().max((group - 2.0 / 3.0).abs()).max((single - 0.5).abs());
    (
        worst <= METRIC_TOL && fixture_err <= METRIC_TOL,
        format!(
            "{METRIC_INSTANCES} instances: max error {worst:.1e}; fixtures (ensemble {ensemble:.12}, group mean {group:.12}) error {fixture_err:.1e}; tolerance {METRIC_TOL:.0e}"
        ),
    )
}

// ---------------------------------------------------------------- 4

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR)
}

/// Largest relative error over `GRAD_PROBES` random parameters of `net`.
fn probe_net(net: &DenseNet, grad: &[f64], loss: impl Fn(&DenseNet) -> f64, rng: &mut Rng) -> f64 {
    let base = net.params_flat();
    let mut worst: f64 = 0.0;
    let mut probe = net.clone();
    for _ in 0..GRAD_PROBES {
        let i = rng.random_range(0..base.len());
        let mut p = base.clone();
        p[i] = base[i] + GRAD_STEP;
        probe.set_params_flat(&p).unwrap();
        let up = loss(&probe);
        p[i] = base[i] - GRAD_STEP;
        probe.set_params_flat(&p).unwrap();
        let down = loss(&probe);
        worst = worst.max(rel_err(grad[i], (up - down) / (2.0 * GRAD_STEP)));
    }
    worst
}

fn gradient_checks() -> (bool, String) {
    let mut rng = Rng::seed_from_u64(44);
    let batch = 16;
    let states: Vec<SearchState> = (0..batch).map(|_| random_state(&mut rng)).collect();
    let actor = DenseNet::new(&[3, 64, 64, 1], OutputActivation::Sigmoid, &mut rng).unwrap();
    let critic = DenseNet::new(&[4, 64, 64, 1], OutputActivation::Identity, &mut rng).unwrap();

    // Critic: squared error to fixed targets at fixed actions.
    let actions: Vec<f64> = (0..batch).map(|_| rng.random()).collect();
    let targets: Vec<f64> = (0..batch).map(|_| rng.random_range(-1.0..1.0)).collect();
    let input = critic_input(&states, &actions);
    let critic_loss = |net: &DenseNet| -> f64 {
        let q = net.predict(input.view()).unwrap();
        (0..batch).map(|i| (q[[i, 0]] - targets[i]).powi(2)).sum::<f64>() / batch as f64
    };
    let cache = critic.forward(input.view()).unwrap();
    let mut g = Array2::zeros((batch, 1));
    for i in 0..batch {
        g[[i, 0]] = 2.0 * (cache.output()[[i, 0]] - targets[i]) / batch as f64;
    }
    let (cg, _) = critic.backward(&cache, g.view()).unwrap();
    let critic_err = probe_net(&critic, &cg.flatten(), critic_loss, &mut rng);

    // Actor: -mean Q(s, mu(s)), chained through the critic's action input.
    let actor_loss = |net: &DenseNet| -> f64 {
        let a: Vec<f64> = net.predict(state_matrix(&states).view()).unwrap().iter().copied().collect();
        -critic.predict(critic_input(&states, &a).view()).unwrap().mean().unwrap()
    };
    let smat = state_matrix(&states);
    let acache = actor.forward(smat.view()).unwrap();
    let a: Vec<f64> = acache.output().iter().copied().collect();
    let qin = critic_input(&states, &a);
    let qcache = critic.forward(qin.view()).unwrap();
    let (_, dx) = critic
        .backward(&qcache, Array2::from_elem((batch, 1), -1.0 / batch as f64).view())
        .unwrap();
    let grad_a = dx.slice(ndarray::s![.., 3..4]).to_owned();
    let (ag, _) = actor.backward(&acache, grad_a.view()).unwrap();
    let actor_err = probe_net(&actor, &ag.flatten(), actor_loss, &mut rng);

    // BPR on both backbones, probing unmasked coordinates of the batch's entities.
    let ds = synthetic_dataset(60, 40, 8, 5);
    let mut bpr_err: f64 = 0.0;
    for cfg in [
        RecommenderConfig { d_max: 16, l2_weight: 1e-2, ..RecommenderConfig::mf_dot() },
        RecommenderConfig { d_max: 16, l2_weight: 1e-2, ..RecommenderConfig::lightgcn_lite() },
    ] {
        let mut rec = Recommender::new(&ds, cfg).unwrap();
        rec.reinit(3).unwrap();
        rec.table_mut().values_mut().mapv_inplace(|x| x * 5.0);
        let dims: Vec<usize> = (0..ds.num_entities()).map(|_| rng.random_range(1..=16)).collect();
        rec.set_dims(&dims).unwrap();
        let triples: Vec<Triple> = (0..32).map(|_| ds.sample_bpr_triple(&mut rng).unwrap()).collect();
        let (_, grad) = rec.batch_loss_and_gradient(&triples);
        let coords: Vec<(usize, usize)> = grad
            .indexed_iter()
            .filter(|&((n, c), _)| c < dims[n])
            .filter(|&(_, &g)| g != 0.0)
            .map(|(ix, _)| ix)
            .collect();
        let base = rec.table().values().clone();
        for _ in 0..GRAD_PROBES {
            let (n, c) = coords[rng.random_range(0..coords.len())];
            rec.table_mut().values_mut()[[n, c]] = base[[n, c]] + GRAD_STEP;
            let up = rec.batch_loss_and_gradient(&triples).0;
            rec.table_mut().values_mut()[[n, c]] = base[[n, c]] - GRAD_STEP;
            let down = rec.batch_loss_and_gradient(&triples).0;
            rec.table_mut().values_mut()[[n, c]] = base[[n, c]];
            bpr_err = bpr_err.max(rel_err(grad[[n, c]], (up - down) / (2.0 * GRAD_STEP)));
        }
    }
    let worst = critic_err.max(actor_err).max(bpr_err);
    (
        worst < GRAD_TOL,
        format!(
            "max relative error: actor {actor_err:.1e}, critic {critic_err:.1e}, bpr {bpr_err:.1e} ({GRAD_PROBES} probes each, need < {GRAD_TOL:.0e})"
        ),
    )
}

/// Random bipartite data where every user has `per_user` interactions.
fn synthetic_dataset(users: u32, items: u32, per_user: usize, seed: u64) -> InteractionDataset {
    let mut rng = Rng::seed_from_u64(seed);
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for u in 0..users {
        let mut all: Vec<u32> = (0..items).collect();
        all.shuffle(&mut rng);
        for (j, &item) in all.iter().take(per_user).enumerate() {
            let x = Interaction { user: u, item };
            match j % 4 {
                0 | 1 => train.push(x),
                2 => val.push(x),
                _ => test.push(x),
            }
        }
    }
    InteractionDataset::from_parts(
        (0..users).map(|u| format!("u{u}")).collect(),
        (0..items).map(|v| format!("i{v}")).collect(),
        train,
        val,
        test,
    )
    .unwrap()
}

// ---------------------------------------------------------------- 5

fn td3_bandit() -> (bool, String) {
    let d_max = 128;
    let entities = 256;
    let seeds = SeedTree::new(55);
    let mut rng = seeds.stream("bandit");
    let config = Td3Config { gamma: 0.0, ..Td3Config::default() };
    let mut agent = Td3Agent::new(&config, &mut seeds.stream("agent")).unwrap();
    let mut noise = NoiseProcess::new(NoiseConfig::default(), entities);
    let states: Vec<SearchState> = (0..entities).map(|_| random_state(&mut rng)).collect();

    let mut updates = 0;
    while updates < BANDIT_MAX_UPDATES {
        let out = agent.act(&states).unwrap();
        let eps = noise.sample(&mut rng);
        for ((s, a), e) in states.iter().zip(&out).zip(&eps) {
            let d = raw_action(*a, *e, d_max).round() as usize;
            let reward = -((d as f64 - BANDIT_OPTIMUM) / d_max as f64).powi(2);
            agent.buffer.push(Transition { state: *s, action: d, reward, next_state: *s });
        }
        for _ in 0..config.updates_for(entities).min(BANDIT_MAX_UPDATES - updates) {
            agent.update(&config, d_max, &mut rng).unwrap();
            updates += 1;
        }
    }
    let emitted: Vec<f64> = agent
        .act(&states)
        .unwrap()
        .into_iter()
        .map(|a| denormalize_action(a, d_max))
        .collect();
    let inside = emitted.iter().filter(|&&d| (BANDIT_BAND.0..=BANDIT_BAND.1).contains(&d)).count();
    let share = inside as f64 / entities as f64;
    let mean = emitted.iter().sum::<f64>() / entities as f64;
    (
        share >= BANDIT_SHARE,
        format!(
            "{:.1}% of {entities} entities in [{}, {}] after {updates} updates (need >= {:.0}%), mean action {mean:.1}",
            100.0 * share,
            BANDIT_BAND.0,
            BANDIT_BAND.1,
            100.0 * BANDIT_SHARE
        ),
    )
}

// ---------------------------------------------------------------- 6 to 9

fn ml100k_path() -> PathBuf {
    std::env::var_os("CIESS_ML100K").map(PathBuf::from).unwrap_or_else(|| {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/ml-100k/ml-100k.inter")
    })
}

fn e2e_config(random_walk: bool) -> SearchConfig {
    SearchConfig {
        seed: E2E_SEED,
        episodes: E2E_EPISODES,
        iterations_per_episode: E2E_ITERATIONS,
        random_walk,
        ..SearchConfig::default()
    }
}

fn read_trace(run: &RunDir) -> Vec<TraceRecord> {
    std::fs::read_to_string(run.trace_path())
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

/// Mean of the per-iteration mean rewards over the last episodes.
fn final_reward(trace: &[TraceRecord], episodes: usize) -> f64 {
    let from = episodes.saturating_sub(LAST_EPISODES);
    let r: Vec<f64> = trace
        .iter()
        .filter(|t| t.episode >= from)
        .filter_map(|t| t.mean_reward)
        .collect();
    r.iter().sum::<f64>() / r.len().max(1) as f64
}

/// Smallest margin `sparsity - c` over every stored candidate of a run.
fn candidate_margin(run: &RunDir, config: &SearchConfig) -> (f64, usize) {
    let mut margin = f64::INFINITY;
    let mut count = 0;
    for &c in &config.target_sparsities {
        let set = load_candidates(run, c, config.top_l).unwrap();
        for cand in &set.entries {
            margin = margin.min(cand.sparsity - c);
            count += 1;
        }
    }
    (margin, count)
}

/// A metrics.json file as parsed JSON, minus the wall-clock field.
fn metrics_without_wall_clock(path: &Path) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    v.as_object_mut().unwrap().remove("wall_seconds");
    v
}

fn end_to_end() -> Vec<Line> {
    let path = ml100k_path();
    let ids: [(u8, &'static str); 4] = [
        (6, "end-to-end vs ES"),
        (7, "random-walk ablation"),
        (8, "constraint compliance"),
        (9, "reproducibility"),
    ];
    if !path.exists() {
        return ids
            .iter()
            .map(|&(id, name)| {
                report(Line {
                    id,
                    name,
                    pass: false,
                    detail: format!(
                        "MovieLens-100K not found at {}; run scripts/fetch_ml100k.sh or set CIESS_ML100K",
                        path.display()
                    ),
                    elapsed: Duration::ZERO,
                })
            })
            .collect();
    }

    let pairs = load_interactions(&path, Format::Tsv).unwrap();
    let dataset = split(
        &pairs,
        &SplitOptions { seed: DATA_SPLIT_SEED, ..SplitOptions::default() },
    )
    .unwrap();
    let root = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let _ = std::fs::remove_dir_all(&root);
    let c = E2E_SPARSITY;
    let mut lines = Vec::new();

    // 6: search, selective retraining, and the equal-size baseline.
    let with_rw = e2e_config(true);
    let run_a = RunDir::new(root.join("rw-a"));
    let mut ciess = None;
    lines.push(report(timed(6, ids[0].1, Duration::from_secs(2 * 3600), || {
        search_into(&run_a, &dataset, &with_rw, |_| {}).unwrap();
        let m = match retrain_into(&run_a, c) {
            Ok(m) => m,
            Err(e) => return (false, format!("no final model at c = {c}: {e}")),
        };
        let es = baseline_into(&root.join("es"), &dataset, BaselineKind::Es, c, &with_rw).unwrap();
        let ok = m.test.ndcg_20 >= es.test.ndcg_20 && m.sparsity_achieved >= c;
        let detail = format!(
            "{} users x {} items, M={E2E_EPISODES} T={E2E_ITERATIONS}: NDCG@20 ciess {:.4} vs es {:.4} (need >=), sparsity {:.4} (need >= {c}), es uniform size {}",
            dataset.num_users(),
            dataset.num_items(),
            m.test.ndcg_20,
            es.test.ndcg_20,
            m.sparsity_achieved,
            es.uniform_dim.unwrap_or(0)
        );
        ciess = Some(m);
        (ok, detail)
    })));

    // 7: same setup with the random walk off.
    let no_rw = e2e_config(false);
    let run_c = RunDir::new(root.join("no-rw"));
    let mut no_rw_final = None;
    lines.push(report(timed(7, ids[1].1, Duration::from_secs(4 * 3600), || {
        search_into(&run_c, &dataset, &no_rw, |_| {}).unwrap();
        no_rw_final = retrain_into(&run_c, c).ok();
        let on = final_reward(&read_trace(&run_a), E2E_EPISODES);
        let off = final_reward(&read_trace(&run_c), E2E_EPISODES);
        (
            on >= off,
            format!("last-{LAST_EPISODES}-episode mean reward: walk on {on:.4} vs off {off:.4} (need >=)"),
        )
    })));

    // 9 runs before 8 so compliance also covers the repeated run.
    let run_b = RunDir::new(root.join("rw-b"));
    let mut repeat = None;
    let line9 = timed(9, ids[3].1, Duration::from_secs(4 * 3600), || {
        search_into(&run_b, &dataset, &with_rw, |_| {}).unwrap();
        let trace_a = std::fs::read(run_a.trace_path()).unwrap();
        let trace_b = std::fs::read(run_b.trace_path()).unwrap();
        repeat = retrain_into(&run_b, c).ok();
        let same_metrics = match (&ciess, &repeat) {
            (Some(_), Some(_)) => {
                metrics_without_wall_clock(&run_a.metrics_path(c)) == metrics_without_wall_clock(&run_b.metrics_path(c))
            }
            (None, None) => true,
            _ => false,
        };
        (
            trace_a == trace_b && same_metrics,
            format!(
                "rl_trace.jsonl {} ({} bytes); metrics.json {} (wall_seconds excluded)",
                if trace_a == trace_b { "identical" } else { "differs" },
                trace_a.len(),
                if same_metrics { "identical" } else { "differs" }
            ),
        )
    });

    lines.push(report(timed(8, ids[2].1, Duration::from_secs(60), || {
        let mut margin = f64::INFINITY;
        let mut count = 0;
        for (run, cfg) in [(&run_a, &with_rw), (&run_b, &with_rw), (&run_c, &no_rw)] {
            let (m, n) = candidate_margin(run, cfg);
            margin = margin.min(m);
            count += n;
        }
        let finals: Vec<&FinalMetrics> = [&ciess, &repeat, &no_rw_final].into_iter().flatten().collect();
        for m in &finals {
            margin = margin.min(m.sparsity_achieved - m.sparsity_target);
        }
        (
            margin >= 0.0,
            format!(
                "{count} candidates and {} final models over 3 runs; min(sparsity - c) = {margin:.4}",
                finals.len()
            ),
        )
    })));
    lines.push(report(line9));
    lines
}
