//! TD3 search policy over embedding sizes.
//!
//! Users and items each get their own actor, twin critics, target copies and
//! replay buffer. States are `(popularity, size, quality)` normalized to
//! `[0, 1]`; actions are sizes in `[1, d_max]`, fed to the critics rescaled
//! to `[0, 1]` so they live on the same scale as the actor's sigmoid head.

use std::collections::VecDeque;

use ndarray::{Array2, Axis};
use rand::seq::index;
use rand::Rng as _;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{AdamConfig, AdamState, DenseNet, OutputActivation};
use crate::rng::{Rng, SeedTree};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    User,
    Item,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::User, Side::Item];

    pub fn name(self) -> &'static str {
        match self {
            Side::User => "user",
            Side::Item => "item",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchState {
    pub pop_norm: f64,
    pub dim_norm: f64,
    pub q: f64,
}

impl SearchState {
    pub fn to_array(&self) -> [f64; 3] {
        [self.pop_norm, self.dim_norm, self.q]
    }
}

/// Popularity range of one side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PopularityRange {
    pub min: u32,
    pub max: u32,
}

impl PopularityRange {
    pub fn of(popularity: &[u32]) -> Self {
        Self {
            min: popularity.iter().copied().min().unwrap_or(0),
            max: popularity.iter().copied().max().unwrap_or(0),
        }
    }

    /// Min–max normalized popularity; 0.5 when the side is degenerate.
    pub fn normalize(&self, f: u32) -> f64 {
        if self.max == self.min {
            0.5
        } else {
            (f.saturating_sub(self.min)) as f64 / (self.max - self.min) as f64
        }
    }
}

/// `(d - 1) / (d_max - 1)`, the size mapped onto `[0, 1]`.
pub fn normalize_action(d: f64, d_max: usize) -> f64 {
    if d_max <= 1 {
        0.0
    } else {
        (d - 1.0) / (d_max - 1) as f64
    }
}

/// Inverse of [`normalize_action`].
pub fn denormalize_action(a: f64, d_max: usize) -> f64 {
    1.0 + a * (d_max.max(1) - 1) as f64
}

pub fn compute_state(f: u32, range: &PopularityRange, d: usize, d_max: usize, q: f64) -> SearchState {
    SearchState {
        pop_norm: range.normalize(f),
        dim_norm: normalize_action(d as f64, d_max),
        q,
    }
}

/// `q - λ (d / d_max)²`
pub fn compute_reward(q: f64, d: usize, lambda: f64, d_max: usize) -> f64 {
    let ratio = d as f64 / d_max as f64;
    q - lambda * ratio * ratio
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    Gaussian,
    Uniform,
    Ou,
}

impl std::str::FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(NoiseKind::Gaussian),
            "uniform" => Ok(NoiseKind::Uniform),
            "ou" => Ok(NoiseKind::Ou),
            other => Err(Error::Invalid(format!(
                "unknown noise '{other}' (expected gaussian, uniform or ou)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub kind: NoiseKind,
    /// Standard deviation in size units. Uniform noise is drawn from
    /// `[-σ√3, σ√3]`, which has the same standard deviation.
    pub sigma: f64,
    pub ou_theta: f64,
    pub ou_mu: f64,
    pub ou_dt: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            kind: NoiseKind::Gaussian,
            sigma: 6.0,
            ou_theta: 0.15,
            ou_mu: 0.0,
            ou_dt: 1.0,
        }
    }
}

/// Exploration noise for one side. The Ornstein–Uhlenbeck variant keeps one
/// state per entity, advanced once per iteration, so an entity's noise is
/// correlated across the iterations of an episode.
#[derive(Debug, Clone)]
pub struct NoiseProcess {
    config: NoiseConfig,
    ou_state: Vec<f64>,
}

impl NoiseProcess {
    pub fn new(config: NoiseConfig, entities: usize) -> Self {
        Self {
            config,
            ou_state: vec![config.ou_mu; entities],
        }
    }

    pub fn reset(&mut self) {
        self.ou_state.fill(self.config.ou_mu);
    }

    /// One draw per entity.
    pub fn sample(&mut self, rng: &mut Rng) -> Vec<f64> {
        let c = self.config;
        let n = self.ou_state.len();
        if c.sigma == 0.0 {
            return vec![0.0; n];
        }
        match c.kind {
            NoiseKind::Gaussian => {
                let normal = Normal::new(0.0, c.sigma).expect("finite sigma");
                (0..n).map(|_| normal.sample(rng)).collect()
            }
            NoiseKind::Uniform => {
                let half = c.sigma * 3f64.sqrt();
                let uniform = Uniform::new_inclusive(-half, half).expect("finite sigma");
                (0..n).map(|_| uniform.sample(rng)).collect()
            }
            NoiseKind::Ou => {
                let normal = Normal::new(0.0, 1.0).unwrap();
                for x in &mut self.ou_state {
                    let w: f64 = normal.sample(rng);
                    *x += c.ou_theta * (c.ou_mu - *x) * c.ou_dt + c.sigma * c.ou_dt.sqrt() * w;
                }
                self.ou_state.clone()
            }
        }
    }
}

/// Actor output in `(0, 1)` mapped to `[1, d_max]`, plus noise, clipped.
pub fn raw_action(actor_output: f64, noise: f64, d_max: usize) -> f64 {
    (denormalize_action(actor_output, d_max) + noise).clamp(1.0, d_max as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: SearchState,
    pub action: usize,
    pub reward: f64,
    pub next_state: SearchState,
}

/// Bounded FIFO of transitions.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    items: VecDeque<Transition>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
            capacity: capacity.max(1),
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.items.get(i)
    }

    /// `batch` distinct transitions, uniformly.
    pub fn sample(&self, batch: usize, rng: &mut Rng) -> Result<Vec<Transition>> {
        if batch > self.items.len() {
            return Err(Error::Sampling(format!(
                "batch of {batch} from a buffer of {}",
                self.items.len()
            )));
        }
        Ok(index::sample(rng, self.items.len(), batch)
            .into_iter()
            .map(|i| self.items[i])
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Td3Config {
    pub gamma: f64,
    pub tau: f64,
    pub policy_delay: u64,
    /// Target smoothing noise std and clip, in size units.
    pub target_noise_std: f64,
    pub target_noise_clip: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub max_updates_per_iteration: usize,
    pub hidden: Vec<usize>,
    pub actor_adam: AdamConfig,
    pub critic_adam: AdamConfig,
}

impl Default for Td3Config {
    fn default() -> Self {
        Self {
            gamma: 0.9,
            tau: 0.005,
            policy_delay: 2,
            target_noise_std: 2.0,
            target_noise_clip: 5.0,
            batch_size: 64,
            buffer_capacity: 200_000,
            max_updates_per_iteration: 200,
            hidden: vec![64, 64],
            actor_adam: AdamConfig::default(),
            critic_adam: AdamConfig::default(),
        }
    }
}

impl Td3Config {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(0.0..=1.0).contains(&self.gamma) {
            problems.push(format!("gamma must be in [0, 1] (got {})", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            problems.push(format!("tau must be in [0, 1] (got {})", self.tau));
        }
        if self.policy_delay == 0 {
            problems.push("policy_delay must be >= 1".into());
        }
        if self.batch_size == 0 || self.buffer_capacity < self.batch_size {
            problems.push("need 1 <= batch_size <= buffer_capacity".into());
        }
        if self.target_noise_std < 0.0 || self.target_noise_clip < 0.0 {
            problems.push("target noise std and clip must be >= 0".into());
        }
        if self.hidden.contains(&0) {
            problems.push("hidden widths must be >= 1".into());
        }
        for (name, a) in [("actor_adam", &self.actor_adam), ("critic_adam", &self.critic_adam)] {
            if !(a.lr > 0.0) {
                problems.push(format!("{name}.lr must be > 0"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Invalid(problems.join("; ")))
        }
    }

    /// Updates to run after an iteration that produced `transitions` new
    /// transitions.
    pub fn updates_for(&self, transitions: usize) -> usize {
        transitions.div_ceil(self.batch_size).min(self.max_updates_per_iteration)
    }
}

/// Loss diagnostics of one TD3 step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub actor_loss: Option<f64>,
}

/// Actor, twin critics, targets, optimizers and replay buffer for one side.
#[derive(Debug, Clone)]
pub struct Td3Agent {
    pub actor: DenseNet,
    pub critics: [DenseNet; 2],
    pub actor_target: DenseNet,
    pub critic_targets: [DenseNet; 2],
    actor_opt: AdamState,
    critic_opts: [AdamState; 2],
    pub buffer: ReplayBuffer,
    updates: u64,
}

impl Td3Agent {
    pub fn new(config: &Td3Config, rng: &mut Rng) -> Result<Self> {
        let widths = |input: usize| {
            let mut w = vec![input];
            w.extend(&config.hidden);
            w.push(1);
            w
        };
        let actor = DenseNet::new(&widths(3), OutputActivation::Sigmoid, rng)?;
        let critics = [
            DenseNet::new(&widths(4), OutputActivation::Identity, rng)?,
            DenseNet::new(&widths(4), OutputActivation::Identity, rng)?,
        ];
        Ok(Self {
            actor_target: actor.clone(),
            critic_targets: critics.clone(),
            actor_opt: AdamState::new(&actor, config.actor_adam),
            critic_opts: [
                AdamState::new(&critics[0], config.critic_adam),
                AdamState::new(&critics[1], config.critic_adam),
            ],
            actor,
            critics,
            buffer: ReplayBuffer::new(config.buffer_capacity),
            updates: 0,
        })
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Actor outputs in `(0, 1)` for a batch of states.
    pub fn act(&self, states: &[SearchState]) -> Result<Vec<f64>> {
        let out = self.actor.predict(state_matrix(states).view())?;
        Ok(out.into_raw_vec_and_offset().0)
    }

    /// One TD3 step on a sampled batch. Returns `None` while the buffer
    /// holds fewer than `batch_size` transitions.
    pub fn update(&mut self, config: &Td3Config, d_max: usize, rng: &mut Rng) -> Result<Option<UpdateStats>> {
        if self.buffer.len() < config.batch_size {
            return Ok(None);
        }
        let batch = self.buffer.sample(config.batch_size, rng)?;
        let b = batch.len();
        let states: Vec<SearchState> = batch.iter().map(|t| t.state).collect();
        let next: Vec<SearchState> = batch.iter().map(|t| t.next_state).collect();

        // Target: r + γ min(Q'_1, Q'_2)(s', μ'(s') + clipped noise).
        let smoothing = Normal::new(0.0, config.target_noise_std.max(f64::MIN_POSITIVE)).unwrap();
        let next_actions = self.actor_target.predict(state_matrix(&next).view())?;
        let next_actions: Vec<f64> = next_actions
            .iter()
            .map(|&a| {
                let eps = if config.target_noise_std > 0.0 {
                    smoothing
                        .sample(rng)
                        .clamp(-config.target_noise_clip, config.target_noise_clip)
                } else {
                    0.0
                };
                let d = (denormalize_action(a, d_max) + eps).clamp(1.0, d_max as f64);
                normalize_action(d, d_max)
            })
            .collect();
        let next_input = critic_input(&next, &next_actions);
        let q1 = self.critic_targets[0].predict(next_input.view())?;
        let q2 = self.critic_targets[1].predict(next_input.view())?;
        let target: Vec<f64> = (0..b)
            .map(|i| batch[i].reward + config.gamma * q1[[i, 0]].min(q2[[i, 0]]))
            .collect();

        let actions: Vec<f64> = batch
            .iter()
            .map(|t| normalize_action(t.action as f64, d_max))
            .collect();
        let input = critic_input(&states, &actions);
        let mut critic_loss = 0.0;
        for (critic, opt) in self.critics.iter_mut().zip(&mut self.critic_opts) {
            let cache = critic.forward(input.view())?;
            let q = cache.output();
            let mut grad = Array2::zeros((b, 1));
            for i in 0..b {
                let diff = q[[i, 0]] - target[i];
                critic_loss += diff * diff / b as f64 / 2.0;
                grad[[i, 0]] = 2.0 * diff / b as f64;
            }
            let (g, _) = critic.backward(&cache, grad.view())?;
            opt.step(critic, &g)?;
        }

        self.updates += 1;
        let mut actor_loss = None;
        if self.updates % config.policy_delay == 0 {
            let smat = state_matrix(&states);
            let actor_cache = self.actor.forward(smat.view())?;
            let a: Vec<f64> = actor_cache.output().iter().copied().collect();
            let input = critic_input(&states, &a);
            let critic_cache = self.critics[0].forward(input.view())?;
            actor_loss = Some(-critic_cache.output().mean().unwrap_or(0.0));
            let grad_q = Array2::from_elem((b, 1), -1.0 / b as f64);
            let (_, dx) = self.critics[0].backward(&critic_cache, grad_q.view())?;
            let grad_a = dx.slice(ndarray::s![.., 3..4]).to_owned();
            let (g, _) = self.actor.backward(&actor_cache, grad_a.view())?;
            self.actor_opt.step(&mut self.actor, &g)?;

            self.actor_target.soft_update(&self.actor, config.tau)?;
            for (t, c) in self.critic_targets.iter_mut().zip(&self.critics) {
                t.soft_update(c, config.tau)?;
            }
        }
        Ok(Some(UpdateStats {
            critic_loss,
            actor_loss,
        }))
    }
}

pub fn state_matrix(states: &[SearchState]) -> Array2<f64> {
    let mut m = Array2::zeros((states.len(), 3));
    for (mut row, s) in m.axis_iter_mut(Axis(0)).zip(states) {
        row.assign(&ndarray::arr1(&s.to_array()));
    }
    m
}

/// `[state | normalized action]` rows.
pub fn critic_input(states: &[SearchState], actions: &[f64]) -> Array2<f64> {
    let mut m = Array2::zeros((states.len(), 4));
    for (i, (s, &a)) in states.iter().zip(actions).enumerate() {
        let [p, d, q] = s.to_array();
        m[[i, 0]] = p;
        m[[i, 1]] = d;
        m[[i, 2]] = q;
        m[[i, 3]] = a;
    }
    m
}

/// The user and item agents.
#[derive(Debug, Clone)]
pub struct PolicyEnsemble {
    pub users: Td3Agent,
    pub items: Td3Agent,
}

impl PolicyEnsemble {
    pub fn new(config: &Td3Config, seeds: &SeedTree) -> Result<Self> {
        Ok(Self {
            users: Td3Agent::new(config, &mut seeds.stream("agent-user"))?,
            items: Td3Agent::new(config, &mut seeds.stream("agent-item"))?,
        })
    }

    pub fn agent(&self, side: Side) -> &Td3Agent {
        match side {
            Side::User => &self.users,
            Side::Item => &self.items,
        }
    }

    pub fn agent_mut(&mut self, side: Side) -> &mut Td3Agent {
        match side {
            Side::User => &mut self.users,
            Side::Item => &mut self.items,
        }
    }
}

/// One line of the RL trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub episode: usize,
    pub iter: usize,
    pub mean_action_users: f64,
    pub mean_action_items: f64,
    /// `None` when the iteration was aborted.
    pub mean_reward: Option<f64>,
    pub critic_loss: Option<f64>,
    pub actor_loss: Option<f64>,
    pub buffer_len: usize,
    pub sparsity: f64,
    pub mean_q: Option<f64>,
    pub aborted: bool,
}

/// Draws a uniformly random state, for synthetic experiments.
pub fn random_state(rng: &mut Rng) -> SearchState {
    SearchState {
        pop_norm: rng.random(),
        dim_norm: rng.random(),
        q: rng.random(),
    }
}
