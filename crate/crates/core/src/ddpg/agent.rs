use std::path::Path;

use ndarray::{concatenate, s, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::mlp::{MlpNet, Mode, OutputActivation};
use super::noise::OuNoise;
use super::replay::{Experience, ReplayBuffer};
use crate::envs::{Environment, SlotRecord};
use crate::error::{Error, Result};
use crate::exec::Exec;

const CHECKPOINT_FORMAT: &str = "cohvac-ddpg-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

/// Per-dimension action box. The actor works in normalized coordinates
/// `[-1, 1]`, mapped affinely onto `[low, high]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionBounds {
    low: Vec<f64>,
    high: Vec<f64>,
}

impl ActionBounds {
    pub fn new(low: Vec<f64>, high: Vec<f64>) -> Result<Self> {
        if low.is_empty() || low.len() != high.len() {
            return Err(Error::input("action bounds must be non-empty and of equal length"));
        }
        if low.iter().zip(&high).any(|(l, h)| !(l < h) || !l.is_finite() || !h.is_finite()) {
            return Err(Error::input(format!("invalid action box {low:?} .. {high:?}")));
        }
        Ok(Self { low, high })
    }

    pub fn dim(&self) -> usize {
        self.low.len()
    }

    pub fn low(&self) -> &[f64] {
        &self.low
    }

    pub fn high(&self) -> &[f64] {
        &self.high
    }

    pub fn clip(&self, a: &[f64]) -> Vec<f64> {
        a.iter()
            .zip(self.low.iter().zip(&self.high))
            .map(|(v, (l, h))| v.clamp(*l, *h))
            .collect()
    }

    pub fn from_normalized(&self, n: &[f64]) -> Vec<f64> {
        n.iter()
            .zip(self.low.iter().zip(&self.high))
            .map(|(v, (l, h))| (l + (v.clamp(-1.0, 1.0) + 1.0) * 0.5 * (h - l)).clamp(*l, *h))
            .collect()
    }

    pub fn to_normalized(&self, a: &[f64]) -> Vec<f64> {
        a.iter()
            .zip(self.low.iter().zip(&self.high))
            .map(|(v, (l, h))| (2.0 * (v - l) / (h - l) - 1.0).clamp(-1.0, 1.0))
            .collect()
    }

    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.low.iter().zip(&self.high).map(|(l, h)| rng.random_range(*l..=*h)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub hidden: Vec<usize>,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub discount: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub bn_momentum: f64,
    /// Uniform init range of the output layers.
    pub final_init: f64,
    pub noise_theta: f64,
    pub noise_sigma: f64,
    /// Exploration scale at the first episode, decayed linearly to
    /// `noise_scale_end` at the last.
    pub noise_scale_start: f64,
    pub noise_scale_end: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128, 128],
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            discount: 0.99,
            tau: 0.001,
            batch_size: 128,
            buffer_capacity: 100_000,
            bn_momentum: 0.1,
            final_init: 3e-3,
            noise_theta: 0.15,
            noise_sigma: 0.2,
            noise_scale_start: 0.35,
            noise_scale_end: 0.05,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("agent: {m}")));
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden layer sizes must be positive");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must lie in (0, 1]");
        }
        if !(0.0..1.0).contains(&self.discount) {
            return bad("discount must lie in [0, 1)");
        }
        if self.batch_size < 2 {
            return bad("batch size must be at least 2");
        }
        if self.buffer_capacity < self.batch_size {
            return bad("buffer capacity must be at least the batch size");
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(self.noise_scale_start >= 0.0 && self.noise_scale_end >= 0.0) {
            return bad("noise scales must be non-negative");
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0) {
            return bad("batch-norm momentum must lie in (0, 1]");
        }
        Ok(())
    }

    /// Exploration scale for `episode` of `episodes`.
    pub fn noise_scale(&self, episode: usize, episodes: usize) -> f64 {
        if episodes <= 1 {
            return self.noise_scale_start;
        }
        let f = episode as f64 / (episodes - 1) as f64;
        self.noise_scale_start + f * (self.noise_scale_end - self.noise_scale_start)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: usize,
    pub day: usize,
    pub episode_return: f64,
    pub noise_scale: f64,
    pub updates: usize,
    /// Mean pre-step critic loss over the episode's updates (NaN if none).
    pub mean_critic_loss: f64,
    pub mean_actor_grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingLog {
    pub episodes: Vec<EpisodeLog>,
}

impl TrainingLog {
    pub fn returns(&self) -> Vec<f64> {
        self.episodes.iter().map(|e| e.episode_return).collect()
    }

    /// Mean return over the last `k` episodes.
    pub fn tail_mean(&self, k: usize) -> f64 {
        let r = self.returns();
        let tail = &r[r.len().saturating_sub(k)..];
        tail.iter().sum::<f64>() / tail.len().max(1) as f64
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for e in &self.episodes {
            w.serialize(e)?;
        }
        w.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }
}

/// Actor–critic agent with target networks, replay, and OU exploration.
#[derive(Debug, Clone)]
pub struct DdpgAgent {
    config: AgentConfig,
    bounds: ActionBounds,
    state_dim: usize,
    actor: MlpNet,
    critic: MlpNet,
    target_actor: MlpNet,
    target_critic: MlpNet,
    actor_adam: AdamState,
    critic_adam: AdamState,
    buffer: ReplayBuffer,
    noise: OuNoise,
    rng: ChaCha8Rng,
    trained: bool,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    config: AgentConfig,
    bounds: ActionBounds,
    state_dim: usize,
    actor: MlpNet,
    critic: MlpNet,
    target_actor: MlpNet,
    target_critic: MlpNet,
    actor_adam: AdamState,
    critic_adam: AdamState,
    noise: OuNoise,
    rng: ChaCha8Rng,
    trained: bool,
}

fn rows_to_matrix<'a>(rows: impl ExactSizeIterator<Item = &'a [f64]>, width: usize) -> Result<Array2<f64>> {
    let n = rows.len();
    let mut flat = Vec::with_capacity(n * width);
    for r in rows {
        if r.len() != width {
            return Err(Error::input(format!("expected vectors of length {width}, got {}", r.len())));
        }
        flat.extend_from_slice(r);
    }
    Array2::from_shape_vec((n, width), flat).map_err(|e| Error::Invariant(e.to_string()))
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

impl DdpgAgent {
    pub fn new(state_dim: usize, bounds: ActionBounds, config: AgentConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        if state_dim == 0 {
            return Err(Error::input("state dimension must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a_dim = bounds.dim();
        let mut actor_sizes = vec![state_dim];
        actor_sizes.extend(&config.hidden);
        actor_sizes.push(a_dim);
        let mut critic_sizes = vec![state_dim + a_dim];
        critic_sizes.extend(&config.hidden);
        critic_sizes.push(1);
        let actor = MlpNet::new(&actor_sizes, OutputActivation::Tanh, config.final_init, config.bn_momentum, &mut rng)?;
        let critic = MlpNet::new(&critic_sizes, OutputActivation::Identity, config.final_init, config.bn_momentum, &mut rng)?;
        Ok(Self {
            actor_adam: AdamState::with_defaults(actor.num_params(), config.actor_lr),
            critic_adam: AdamState::with_defaults(critic.num_params(), config.critic_lr),
            target_actor: actor.clone(),
            target_critic: critic.clone(),
            actor,
            critic,
            buffer: ReplayBuffer::new(config.buffer_capacity)?,
            noise: OuNoise::new(a_dim, 0.0, config.noise_theta, config.noise_sigma, config.noise_scale_start)?,
            rng,
            state_dim,
            bounds,
            config,
            trained: false,
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn bounds(&self) -> &ActionBounds {
        &self.bounds
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.bounds.dim()
    }

    pub fn actor(&self) -> &MlpNet {
        &self.actor
    }

    pub fn critic(&self) -> &MlpNet {
        &self.critic
    }

    pub fn target_actor(&self) -> &MlpNet {
        &self.target_actor
    }

    pub fn target_critic(&self) -> &MlpNet {
        &self.target_critic
    }

    pub fn actor_mut(&mut self) -> &mut MlpNet {
        &mut self.actor
    }

    pub fn critic_mut(&mut self) -> &mut MlpNet {
        &mut self.critic
    }

    pub fn target_actor_mut(&mut self) -> &mut MlpNet {
        &mut self.target_actor
    }

    pub fn target_critic_mut(&mut self) -> &mut MlpNet {
        &mut self.target_critic
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    /// Marks the policy as frozen and deployable.
    pub fn freeze(&mut self) {
        self.trained = true;
    }

    pub fn set_noise_scale(&mut self, scale: f64) {
        self.noise.scale = scale.max(0.0);
    }

    pub fn noise_scale(&self) -> f64 {
        self.noise.scale
    }

    fn check_state(&self, state: &[f64]) -> Result<()> {
        if state.len() != self.state_dim {
            return Err(Error::input(format!(
                "agent expects a {}-dim state, got {}",
                self.state_dim,
                state.len()
            )));
        }
        Ok(())
    }

    /// Greedy action μ(s) in environment units; never mutates the agent.
    pub fn policy(&self, state: &[f64]) -> Result<Vec<f64>> {
        self.check_state(state)?;
        let x = Array2::from_shape_vec((1, self.state_dim), state.to_vec()).expect("shape checked");
        let out = self.actor.forward(&x, Mode::Eval)?;
        Ok(self.bounds.from_normalized(out.row(0).as_slice().expect("contiguous row")))
    }

    /// μ(s) plus scaled OU noise when exploring, clipped to the action box.
    pub fn act(&mut self, state: &[f64], explore: bool) -> Result<Vec<f64>> {
        self.check_state(state)?;
        if !explore {
            return self.policy(state);
        }
        let x = Array2::from_shape_vec((1, self.state_dim), state.to_vec()).expect("shape checked");
        let out = self.actor.forward(&x, Mode::Eval)?;
        let noise = self.noise.sample(1.0, &mut self.rng)?;
        let noisy: Vec<f64> = out.row(0).iter().zip(&noise).map(|(a, n)| (a + n).clamp(-1.0, 1.0)).collect();
        Ok(self.bounds.from_normalized(&noisy))
    }

    /// Stores a transition; `action` is in environment units.
    pub fn remember(&mut self, state: &[f64], action: &[f64], reward: f64, next_state: &[f64]) -> Result<()> {
        self.check_state(state)?;
        if action.len() != self.action_dim() {
            return Err(Error::input("action dimension mismatch"));
        }
        let exp = Experience::new(state.to_vec(), self.bounds.to_normalized(action), reward, next_state.to_vec())?;
        self.buffer.push(exp);
        Ok(())
    }

    fn batch_matrices(&self, batch: &[&Experience]) -> Result<(Array2<f64>, Array2<f64>, Vec<f64>, Array2<f64>)> {
        if batch.is_empty() {
            return Err(Error::input("empty batch"));
        }
        let s = rows_to_matrix(batch.iter().map(|e| e.state.as_slice()), self.state_dim)?;
        let a = rows_to_matrix(batch.iter().map(|e| e.action.as_slice()), self.action_dim())?;
        let s2 = rows_to_matrix(batch.iter().map(|e| e.next_state.as_slice()), self.state_dim)?;
        Ok((s, a, batch.iter().map(|e| e.reward).collect(), s2))
    }

    /// `y_i = r_i + Γ·Q′(s_{i+1}, μ′(s_{i+1}))` with both targets in eval mode.
    pub fn bellman_targets(&self, batch: &[&Experience]) -> Result<Vec<f64>> {
        let (_, _, r, s2) = self.batch_matrices(batch)?;
        let a2 = self.target_actor.forward(&s2, Mode::Eval)?;
        let x = concatenate(Axis(1), &[s2.view(), a2.view()]).map_err(|e| Error::Invariant(e.to_string()))?;
        let q = self.target_critic.forward(&x, Mode::Eval)?;
        Ok(r.iter().zip(q.column(0)).map(|(r, q)| r + self.config.discount * q).collect())
    }

    /// Critic loss `(1/N)Σ(y_i − Q(s_i,a_i))²` and its parameter gradient
    /// for explicit targets, with the critic in train mode.
    pub fn critic_loss_gradient(&self, batch: &[&Experience], targets: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (s, a, _, _) = self.batch_matrices(batch)?;
        let x = concatenate(Axis(1), &[s.view(), a.view()]).map_err(|e| Error::Invariant(e.to_string()))?;
        let cache = self.critic.forward_train(&x)?;
        let n = batch.len() as f64;
        let diff: Vec<f64> = cache.output().column(0).iter().zip(targets).map(|(q, y)| q - y).collect();
        let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
        let g = Array2::from_shape_fn((batch.len(), 1), |(i, _)| 2.0 * diff[i] / n);
        Ok((loss, self.critic.backward(&cache, &g)?.params))
    }

    /// One Adam step on the critic; returns the pre-step loss.
    pub fn critic_update(&mut self, batch: &[&Experience]) -> Result<f64> {
        if batch.len() < 2 {
            return Err(Error::input("critic update needs a batch of at least two"));
        }
        let y = self.bellman_targets(batch)?;
        let (s, a, _, _) = self.batch_matrices(batch)?;
        let x = concatenate(Axis(1), &[s.view(), a.view()]).map_err(|e| Error::Invariant(e.to_string()))?;
        let cache = self.critic.forward_train(&x)?;
        let n = batch.len() as f64;
        let diff: Vec<f64> = cache.output().column(0).iter().zip(&y).map(|(q, y)| q - y).collect();
        let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
        let g = Array2::from_shape_fn((batch.len(), 1), |(i, _)| 2.0 * diff[i] / n);
        let grads = self.critic.backward(&cache, &g)?;
        self.critic.update_running_stats(&cache);
        self.critic_adam.step(self.critic.params_mut(), &grads.params)?;
        Ok(loss)
    }

    /// Actor objective `J = −(1/N)Σ Q(s_i, μ(s_i))` (actor in train mode,
    /// critic frozen in eval mode) and its gradient w.r.t. actor parameters.
    pub fn actor_objective_gradient(&self, states: &Array2<f64>) -> Result<(f64, Vec<f64>)> {
        let (j, g, _) = self.actor_pass(states)?;
        Ok((j, g))
    }

    fn actor_pass(&self, states: &Array2<f64>) -> Result<(f64, Vec<f64>, super::mlp::ForwardCache)> {
        let n = states.nrows();
        let a_cache = self.actor.forward_train(states)?;
        let x = concatenate(Axis(1), &[states.view(), a_cache.output().view()]).map_err(|e| Error::Invariant(e.to_string()))?;
        let c_cache = self.critic.forward_eval_cached(&x)?;
        let j = -c_cache.output().sum() / n as f64;
        let g_out = Array2::from_elem((n, 1), -1.0 / n as f64);
        let gx = self.critic.backward(&c_cache, &g_out)?.input;
        let ga = gx.slice(s![.., self.state_dim..]).to_owned();
        let grads = self.actor.backward(&a_cache, &ga)?;
        Ok((j, grads.params, a_cache))
    }

    /// One Adam step ascending `Q(s, μ(s))`; returns the gradient norm.
    pub fn actor_update(&mut self, batch: &[&Experience]) -> Result<f64> {
        if batch.len() < 2 {
            return Err(Error::input("actor update needs a batch of at least two"));
        }
        let (s, _, _, _) = self.batch_matrices(batch)?;
        let (_, grads, cache) = self.actor_pass(&s)?;
        self.actor.update_running_stats(&cache);
        self.actor_adam.step(self.actor.params_mut(), &grads)?;
        Ok(l2(&grads))
    }

    pub fn soft_update(&mut self) -> Result<()> {
        self.target_actor.soft_update_from(&self.actor, self.config.tau)?;
        self.target_critic.soft_update_from(&self.critic, self.config.tau)
    }

    /// One replay step: sample, critic update, actor update, soft updates.
    /// Returns `None` while the buffer is still warming up.
    pub fn learn(&mut self) -> Result<Option<(f64, f64)>> {
        let k = self.config.batch_size;
        if self.buffer.len() < k {
            return Ok(None);
        }
        let idx = self.buffer.sample_indices(k, &mut self.rng)?;
        let batch: Vec<Experience> = idx.iter().map(|&i| self.buffer.get(i).expect("sampled index").clone()).collect();
        let refs: Vec<&Experience> = batch.iter().collect();
        let loss = self.critic_update(&refs)?;
        let gnorm = self.actor_update(&refs)?;
        self.soft_update()?;
        Ok(Some((loss, gnorm)))
    }

    /// Training loop: `episodes` episodes of `slots` steps, each on a day
    /// drawn uniformly from `days`.
    pub fn train<E: Environment>(&mut self, env: &mut E, episodes: usize, slots: usize, days: &[usize]) -> Result<TrainingLog> {
        if env.state_dim() != self.state_dim || env.action_bounds() != self.bounds {
            return Err(Error::input(format!(
                "environment ({}-dim state, {}-dim action) does not match agent ({}, {})",
                env.state_dim(),
                env.action_bounds().dim(),
                self.state_dim,
                self.action_dim()
            )));
        }
        if days.is_empty() {
            return Err(Error::input("no training days"));
        }
        let mut log = TrainingLog::default();
        for ep in 0..episodes {
            let day = days[self.rng.random_range(0..days.len())];
            let scale = self.config.noise_scale(ep, episodes);
            self.set_noise_scale(scale);
            self.noise.reset();
            let mut state = env.reset(day)?;
            let (mut ret, mut updates, mut loss_sum, mut grad_sum) = (0.0, 0, 0.0, 0.0);
            for _ in 0..slots.min(env.slots_per_episode()) {
                let action = self.act(&state, true)?;
                let step = env.step(&action)?;
                self.remember(&state, &action, step.reward, &step.state)?;
                ret += step.reward;
                if let Some((l, g)) = self.learn()? {
                    updates += 1;
                    loss_sum += l;
                    grad_sum += g;
                }
                state = step.state;
            }
            let mean = |s: f64| if updates > 0 { s / updates as f64 } else { f64::NAN };
            log.episodes.push(EpisodeLog {
                episode: ep,
                day,
                episode_return: ret,
                noise_scale: scale,
                updates,
                mean_critic_loss: mean(loss_sum),
                mean_actor_grad_norm: mean(grad_sum),
            });
        }
        self.trained = true;
        Ok(log)
    }

    /// Greedy rollout of each day with frozen weights. Days are independent
    /// and run on clones of `env`.
    pub fn deploy<E>(&self, env: &E, days: &[usize], exec: Exec) -> Result<Vec<Vec<SlotRecord>>>
    where
        E: Environment + Clone + Send + Sync,
    {
        if !self.trained {
            return Err(Error::State("agent has not been trained".into()));
        }
        exec.map(days, |&day| {
            let mut env = env.clone();
            let mut state = env.reset(day)?;
            let mut out = Vec::with_capacity(env.slots_per_episode());
            for _ in 0..env.slots_per_episode() {
                let step = env.step(&self.policy(&state)?)?;
                out.push(step.record);
                state = step.state;
            }
            Ok(out)
        })
        .into_iter()
        .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let ck = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            bounds: self.bounds.clone(),
            state_dim: self.state_dim,
            actor: self.actor.clone(),
            critic: self.critic.clone(),
            target_actor: self.target_actor.clone(),
            target_critic: self.target_critic.clone(),
            actor_adam: self.actor_adam.clone(),
            critic_adam: self.critic_adam.clone(),
            noise: self.noise.clone(),
            rng: self.rng.clone(),
            trained: self.trained,
        };
        let text = serde_json::to_string(&ck)?;
        std::fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    /// Restores everything but the replay buffer, which starts empty.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let ck: Checkpoint = serde_json::from_str(&text)?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::input(format!(
                "{}: unsupported checkpoint {} v{}",
                path.display(),
                ck.format,
                ck.version
            )));
        }
        ck.config.validate()?;
        let nets_ok = ck.actor.input_dim() == ck.state_dim
            && ck.actor.output_dim() == ck.bounds.dim()
            && ck.critic.input_dim() == ck.state_dim + ck.bounds.dim()
            && ck.actor.same_shape(&ck.target_actor)
            && ck.critic.same_shape(&ck.target_critic);
        if !nets_ok {
            return Err(Error::input(format!("{}: inconsistent network shapes", path.display())));
        }
        Ok(Self {
            buffer: ReplayBuffer::new(ck.config.buffer_capacity)?,
            config: ck.config,
            bounds: ck.bounds,
            state_dim: ck.state_dim,
            actor: ck.actor,
            critic: ck.critic,
            target_actor: ck.target_actor,
            target_critic: ck.target_critic,
            actor_adam: ck.actor_adam,
            critic_adam: ck.critic_adam,
            noise: ck.noise,
            rng: ck.rng,
            trained: ck.trained,
        })
    }
}
