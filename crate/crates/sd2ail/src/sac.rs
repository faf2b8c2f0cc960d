//! Soft actor-critic over the surrogate reward: tanh-squashed Gaussian
//! actor, twin critics with min-clipping, soft target updates, and a
//! temperature optimized in log space. Gradients are derived by hand
//! through the reparameterized sampler.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg::Matrix;
use crate::nn::{
    adam_step, parse_densenet_from, soft_update, Activation, AdamState, DenseNet, LineCursor,
};
use crate::{Error, Result};

const LOG_STD_MIN: f64 = -20.0;
const LOG_STD_MAX: f64 = 2.0;
const LN_2PI: f64 = 1.8378770664093453;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActMode {
    Stochastic,
    Deterministic,
}

#[derive(Debug, Clone)]
pub struct SacParams {
    pub hidden: Vec<usize>,
    pub gamma: f64,
    pub tau: f64,
    pub lr: f64,
    /// Zero freezes the temperature at `init_alpha`.
    pub lr_alpha: f64,
    pub init_alpha: f64,
    /// Defaults to `-action_dim`.
    pub target_entropy: Option<f64>,
}

impl Default for SacParams {
    fn default() -> Self {
        SacParams {
            hidden: vec![64, 64],
            gamma: 0.99,
            tau: 0.005,
            lr: 3e-4,
            lr_alpha: 3e-4,
            init_alpha: 0.2,
            target_entropy: None,
        }
    }
}

/// Off-policy store of (state, action, next_state) triples. True
/// environment rewards are deliberately not representable here; training
/// consumes surrogate rewards attached at sample time.
#[derive(Debug, Clone)]
pub struct AgentTransition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub next_state: Vec<f64>,
}

#[derive(Debug)]
pub struct AgentReplayBuffer {
    capacity: usize,
    data: Vec<AgentTransition>,
    next: usize,
}

impl AgentReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be positive".into()));
        }
        Ok(AgentReplayBuffer {
            capacity,
            data: Vec::new(),
            next: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn push(&mut self, t: AgentTransition) {
        if self.data.len() < self.capacity {
            self.data.push(t);
        } else {
            self.data[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Uniform sample with replacement.
    pub fn sample<R: Rng>(&self, n: usize, rng: &mut R) -> Result<Vec<&AgentTransition>> {
        if self.is_empty() {
            return Err(Error::Empty("agent replay buffer"));
        }
        Ok((0..n)
            .map(|_| &self.data[rng.random_range(0..self.data.len())])
            .collect())
    }
}

/// One SAC minibatch with surrogate rewards already attached.
#[derive(Debug, Clone)]
pub struct TransitionBatch {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub next_states: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy)]
pub struct SacReport {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub alpha: f64,
    /// Monte-Carlo entropy estimate, `-mean(log pi)`.
    pub entropy: f64,
}

/// Actor, twin critics with targets, and the entropy temperature.
#[derive(Debug)]
pub struct PolicyBundle {
    state_dim: usize,
    action_dim: usize,
    actor: DenseNet,
    q1: DenseNet,
    q2: DenseNet,
    q1_target: DenseNet,
    q2_target: DenseNet,
    log_alpha: f64,
    gamma: f64,
    tau: f64,
    target_entropy: f64,
    actor_opt: AdamState,
    q1_opt: AdamState,
    q2_opt: AdamState,
    alpha_opt: AdamState,
    lr_alpha: f64,
}

struct SampledRow {
    z: Vec<f64>,
    eps: Vec<f64>,
    action: Vec<f64>,
    std: Vec<f64>,
    log_prob: f64,
    /// Per-dimension indicator that the raw log-std was inside the
    /// clamp (gradient flows only there).
    std_grad_mask: Vec<f64>,
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `ln(1 - tanh(z)^2)` computed without cancellation.
fn log_one_minus_tanh_sq(z: f64) -> f64 {
    2.0 * (std::f64::consts::LN_2 - z - softplus(-2.0 * z))
}

impl PolicyBundle {
    pub fn new<R: Rng>(
        state_dim: usize,
        action_dim: usize,
        params: &SacParams,
        rng: &mut R,
    ) -> Result<Self> {
        if state_dim == 0 || action_dim == 0 {
            return Err(Error::Config("state/action dims must be positive".into()));
        }
        if !(params.gamma >= 0.0 && params.gamma < 1.0) {
            return Err(Error::Config("gamma must lie in [0, 1)".into()));
        }
        if !(params.tau > 0.0 && params.tau <= 1.0) {
            return Err(Error::Config("tau must lie in (0, 1]".into()));
        }
        if !(params.init_alpha > 0.0) {
            return Err(Error::Config("init_alpha must be positive".into()));
        }
        let mut actor_sizes = vec![state_dim];
        actor_sizes.extend_from_slice(&params.hidden);
        actor_sizes.push(2 * action_dim);
        let mut critic_sizes = vec![state_dim + action_dim];
        critic_sizes.extend_from_slice(&params.hidden);
        critic_sizes.push(1);

        let actor = DenseNet::new(&actor_sizes, Activation::Relu, rng)?;
        let q1 = DenseNet::new(&critic_sizes, Activation::Relu, rng)?;
        let q2 = DenseNet::new(&critic_sizes, Activation::Relu, rng)?;
        let q1_target = q1.clone();
        let q2_target = q2.clone();

        let actor_opt = AdamState::new(actor.param_count(), params.lr);
        let q1_opt = AdamState::new(q1.param_count(), params.lr);
        let q2_opt = AdamState::new(q2.param_count(), params.lr);
        let alpha_opt = AdamState::new(1, params.lr_alpha);

        Ok(PolicyBundle {
            state_dim,
            action_dim,
            actor,
            q1,
            q2,
            q1_target,
            q2_target,
            log_alpha: params.init_alpha.ln(),
            gamma: params.gamma,
            tau: params.tau,
            target_entropy: params
                .target_entropy
                .unwrap_or(-(action_dim as f64)),
            actor_opt,
            q1_opt,
            q2_opt,
            alpha_opt,
            lr_alpha: params.lr_alpha,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn target_entropy(&self) -> f64 {
        self.target_entropy
    }

    pub fn actor(&self) -> &DenseNet {
        &self.actor
    }

    pub fn actor_mut(&mut self) -> &mut DenseNet {
        &mut self.actor
    }

    pub fn critic(&self) -> &DenseNet {
        &self.q1
    }

    pub fn critic_target(&self) -> &DenseNet {
        &self.q1_target
    }

    pub fn second_critic(&self) -> &DenseNet {
        &self.q2
    }

    fn split_policy_out(&self, row: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let a = self.action_dim;
        let mean = row[..a].to_vec();
        let raw: Vec<f64> = row[a..2 * a].to_vec();
        let log_std: Vec<f64> = raw.iter().map(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX)).collect();
        let mask: Vec<f64> = raw
            .iter()
            .map(|v| {
                if *v > LOG_STD_MIN && *v < LOG_STD_MAX {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        (mean, log_std, mask)
    }

    fn sample_from_out<R: Rng>(&self, out_row: &[f64], rng: &mut R) -> SampledRow {
        let (mean, log_std, std_grad_mask) = self.split_policy_out(out_row);
        let std: Vec<f64> = log_std.iter().map(|l| l.exp()).collect();
        let eps: Vec<f64> = (0..self.action_dim)
            .map(|_| StandardNormal.sample(rng))
            .collect();
        let z: Vec<f64> = mean
            .iter()
            .zip(&std)
            .zip(&eps)
            .map(|((m, s), e)| m + s * e)
            .collect();
        let action: Vec<f64> = z.iter().map(|v| v.tanh()).collect();
        let mut log_prob = 0.0;
        for d in 0..self.action_dim {
            log_prob += -0.5 * eps[d] * eps[d] - log_std[d] - 0.5 * LN_2PI
                - log_one_minus_tanh_sq(z[d]);
        }
        SampledRow {
            z,
            eps,
            action,
            std,
            log_prob,
            std_grad_mask,
        }
    }

    /// Sample an action together with its log-probability.
    pub fn sample_action<R: Rng>(&self, state: &[f64], rng: &mut R) -> Result<(Vec<f64>, f64)> {
        let out = self.actor.forward(state)?;
        let row = self.sample_from_out(&out, rng);
        Ok((row.action, row.log_prob))
    }

    /// Log-probability recomputed for a given pre-squash `z` under the
    /// current policy at `state`; exposed for density cross-checks.
    pub fn log_prob_of_z(&self, state: &[f64], z: &[f64]) -> Result<f64> {
        let out = self.actor.forward(state)?;
        let (mean, log_std, _) = self.split_policy_out(&out);
        let mut lp = 0.0;
        for d in 0..self.action_dim {
            let std = log_std[d].exp();
            let e = (z[d] - mean[d]) / std;
            lp += -0.5 * e * e - log_std[d] - 0.5 * LN_2PI - log_one_minus_tanh_sq(z[d]);
        }
        Ok(lp)
    }

    pub fn act<R: Rng>(&self, state: &[f64], mode: ActMode, rng: &mut R) -> Result<Vec<f64>> {
        let out = self.actor.forward(state)?;
        match mode {
            ActMode::Deterministic => {
                let (mean, _, _) = self.split_policy_out(&out);
                Ok(mean.iter().map(|m| m.tanh()).collect())
            }
            ActMode::Stochastic => Ok(self.sample_from_out(&out, rng).action),
        }
    }

    fn critic_input(&self, state: &[f64], action: &[f64]) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.state_dim + self.action_dim);
        v.extend_from_slice(state);
        v.extend_from_slice(action);
        v
    }

    /// Bootstrap target for one transition:
    /// `r + gamma * (min Q_target(s', a') - alpha * log pi(a'|s'))`.
    pub fn compute_critic_target<R: Rng>(
        &self,
        reward: f64,
        next_state: &[f64],
        rng: &mut R,
    ) -> Result<f64> {
        let (a, logp) = self.sample_action(next_state, rng)?;
        let input = self.critic_input(next_state, &a);
        let q1 = self.q1_target.forward(&input)?[0];
        let q2 = self.q2_target.forward(&input)?[0];
        Ok(reward + self.gamma * (q1.min(q2) - self.alpha() * logp))
    }

    /// Actor loss `mean(alpha * log pi - min Q)` under fixed per-row
    /// standard-normal draws, together with its exact gradient w.r.t.
    /// the actor parameters. Shared by training and gradient tests.
    pub fn actor_loss_and_grad(
        &self,
        states: &[Vec<f64>],
        eps: &Matrix,
    ) -> Result<(f64, Vec<f64>)> {
        let n = states.len();
        if n == 0 {
            return Err(Error::Empty("actor batch"));
        }
        if eps.rows() != n || eps.cols() != self.action_dim {
            return Err(Error::Dim {
                what: "actor noise rows",
                expected: n * self.action_dim,
                got: eps.rows() * eps.cols(),
            });
        }
        let alpha = self.alpha();
        let states_m = Matrix::from_rows(states)?;
        let actor_acts = self.actor.forward_batch_cached(&states_m)?;
        let out = actor_acts.last().unwrap();

        // Reparameterized actions under the fixed draws.
        let mut critic_in = Matrix::zeros(n, self.state_dim + self.action_dim);
        let mut rows: Vec<SampledRow> = Vec::with_capacity(n);
        for i in 0..n {
            let (mean, log_std, std_grad_mask) = self.split_policy_out(out.row(i));
            let std: Vec<f64> = log_std.iter().map(|l| l.exp()).collect();
            let e = eps.row(i);
            let z: Vec<f64> = mean
                .iter()
                .zip(&std)
                .zip(e)
                .map(|((m, s), ei)| m + s * ei)
                .collect();
            let action: Vec<f64> = z.iter().map(|v| v.tanh()).collect();
            let mut log_prob = 0.0;
            for d in 0..self.action_dim {
                log_prob += -0.5 * e[d] * e[d] - log_std[d] - 0.5 * LN_2PI
                    - log_one_minus_tanh_sq(z[d]);
            }
            let ci = critic_in.row_mut(i);
            ci[..self.state_dim].copy_from_slice(&states[i]);
            ci[self.state_dim..].copy_from_slice(&action);
            rows.push(SampledRow {
                z,
                eps: e.to_vec(),
                action,
                std,
                log_prob,
                std_grad_mask,
            });
        }

        let q1_acts = self.q1.forward_batch_cached(&critic_in)?;
        let q2_acts = self.q2.forward_batch_cached(&critic_in)?;
        let q1_vals = q1_acts.last().unwrap();
        let q2_vals = q2_acts.last().unwrap();

        let mut loss = 0.0;
        let mut up1 = Matrix::zeros(n, 1);
        let mut up2 = Matrix::zeros(n, 1);
        for i in 0..n {
            let (v1, v2) = (q1_vals.get(i, 0), q2_vals.get(i, 0));
            loss += alpha * rows[i].log_prob - v1.min(v2);
            if v1 <= v2 {
                up1.set(i, 0, 1.0);
            } else {
                up2.set(i, 0, 1.0);
            }
        }
        loss /= n as f64;

        // dQmin/d(critic input), action block only; critics stay frozen.
        let g1 = self.q1.input_gradients(&critic_in, &q1_acts, &up1)?;
        let g2 = self.q2.input_gradients(&critic_in, &q2_acts, &up2)?;

        // Upstream into the actor outputs [d/dmean, d/dlog_std_raw].
        let mut upstream = Matrix::zeros(n, 2 * self.action_dim);
        let scale = 1.0 / n as f64;
        for i in 0..n {
            let row = &rows[i];
            let ur = upstream.row_mut(i);
            for d in 0..self.action_dim {
                let t = row.action[d];
                let dtanh = 1.0 - t * t;
                let gq = g1.get(i, self.state_dim + d) + g2.get(i, self.state_dim + d);
                // d log_prob / d mean = 2 tanh(z); the Gaussian part
                // cancels under reparameterization.
                let dlogp_dmean = 2.0 * t;
                ur[d] = scale * (alpha * dlogp_dmean - gq * dtanh);
                // d log_prob / d log_std = 2 std eps tanh(z) - 1
                let dlogp_dls = 2.0 * row.std[d] * row.eps[d] * t - 1.0;
                let da_dls = dtanh * row.std[d] * row.eps[d];
                ur[self.action_dim + d] =
                    scale * (alpha * dlogp_dls - gq * da_dls) * row.std_grad_mask[d];
            }
        }

        let (grads, _) = self.actor.backward_batch(&states_m, &actor_acts, &upstream)?;
        Ok((loss, grads))
    }

    /// One MSE regression step of a critic toward the targets; returns
    /// the mean squared error before the step.
    fn critic_step(
        net: &mut DenseNet,
        opt: &mut AdamState,
        critic_in: &Matrix,
        targets: &[f64],
    ) -> Result<f64> {
        let n = targets.len();
        let acts = net.forward_batch_cached(critic_in)?;
        let vals = acts.last().unwrap();
        let mut up = Matrix::zeros(n, 1);
        let mut loss = 0.0;
        for i in 0..n {
            let d = vals.get(i, 0) - targets[i];
            loss += d * d;
            up.set(i, 0, 2.0 * d / n as f64);
        }
        let (grads, _) = net.backward_batch(critic_in, &acts, &up)?;
        adam_step(net, opt, &grads)?;
        Ok(loss / n as f64)
    }

    /// One full SAC update: critic regression to the bootstrap target,
    /// actor step, temperature step, soft target update.
    pub fn update<R: Rng>(&mut self, batch: &TransitionBatch, rng: &mut R) -> Result<SacReport> {
        let n = batch.states.len();
        if n == 0 {
            return Err(Error::Empty("sac batch"));
        }
        if batch.actions.len() != n || batch.rewards.len() != n || batch.next_states.len() != n {
            return Err(Error::InvalidBatch("ragged transition batch".into()));
        }
        if batch.rewards.iter().any(|r| !r.is_finite()) {
            return Err(Error::NonFinite("sac batch rewards".into()));
        }
        let alpha = self.alpha();

        // Targets from the frozen target critics.
        let next_m = Matrix::from_rows(&batch.next_states)?;
        let next_out = self.actor.forward_batch(&next_m)?;
        let mut next_in = Matrix::zeros(n, self.state_dim + self.action_dim);
        let mut next_logp = vec![0.0; n];
        for i in 0..n {
            let row = self.sample_from_out(next_out.row(i), rng);
            let ci = next_in.row_mut(i);
            ci[..self.state_dim].copy_from_slice(&batch.next_states[i]);
            ci[self.state_dim..].copy_from_slice(&row.action);
            next_logp[i] = row.log_prob;
        }
        let q1t = self.q1_target.forward_batch(&next_in)?;
        let q2t = self.q2_target.forward_batch(&next_in)?;
        let targets: Vec<f64> = (0..n)
            .map(|i| {
                batch.rewards[i]
                    + self.gamma * (q1t.get(i, 0).min(q2t.get(i, 0)) - alpha * next_logp[i])
            })
            .collect();

        // Critic regression.
        let mut critic_in = Matrix::zeros(n, self.state_dim + self.action_dim);
        for i in 0..n {
            if batch.states[i].len() != self.state_dim
                || batch.actions[i].len() != self.action_dim
            {
                return Err(Error::InvalidBatch("transition dims".into()));
            }
            let ci = critic_in.row_mut(i);
            ci[..self.state_dim].copy_from_slice(&batch.states[i]);
            ci[self.state_dim..].copy_from_slice(&batch.actions[i]);
        }
        let mut critic_loss = 0.0;
        critic_loss += Self::critic_step(&mut self.q1, &mut self.q1_opt, &critic_in, &targets)?;
        critic_loss += Self::critic_step(&mut self.q2, &mut self.q2_opt, &critic_in, &targets)?;
        if !critic_loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "critic loss (alpha {alpha}, first target {})",
                targets.first().copied().unwrap_or(f64::NAN)
            )));
        }

        // Actor step under fresh reparameterization noise.
        let mut eps = Matrix::zeros(n, self.action_dim);
        for v in eps.data_mut() {
            *v = StandardNormal.sample(rng);
        }
        let (actor_loss, actor_grads) = self.actor_loss_and_grad(&batch.states, &eps)?;
        if !actor_loss.is_finite() {
            return Err(Error::NonFinite("actor loss".into()));
        }
        adam_step(&mut self.actor, &mut self.actor_opt, &actor_grads)?;

        // Temperature step on the log scale; entropy estimated from the
        // actor-step samples.
        let states_m = Matrix::from_rows(&batch.states)?;
        let out = self.actor.forward_batch(&states_m)?;
        let mut mean_logp = 0.0;
        for i in 0..n {
            let (mean, log_std, _) = self.split_policy_out(out.row(i));
            let mut lp = 0.0;
            for d in 0..self.action_dim {
                let e = eps.get(i, d);
                let z = mean[d] + log_std[d].exp() * e;
                lp += -0.5 * e * e - log_std[d] - 0.5 * LN_2PI - log_one_minus_tanh_sq(z);
            }
            mean_logp += lp;
        }
        mean_logp /= n as f64;
        if self.lr_alpha > 0.0 {
            let grad = -self.alpha() * (mean_logp + self.target_entropy);
            let mut p = [self.log_alpha];
            self.alpha_opt.apply(&mut p, &[grad])?;
            self.log_alpha = p[0];
        }

        // Soft target updates.
        soft_update(&mut self.q1_target, &self.q1, self.tau)?;
        soft_update(&mut self.q2_target, &self.q2, self.tau)?;

        Ok(SacReport {
            critic_loss,
            actor_loss,
            alpha: self.alpha(),
            entropy: -mean_logp,
        })
    }

    pub fn write_checkpoint<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "sd2ail-policy 1")?;
        writeln!(w, "state_dim {}", self.state_dim)?;
        writeln!(w, "action_dim {}", self.action_dim)?;
        writeln!(w, "gamma {}", self.gamma)?;
        writeln!(w, "tau {}", self.tau)?;
        writeln!(w, "target_entropy {}", self.target_entropy)?;
        writeln!(w, "log_alpha {}", self.log_alpha)?;
        for (tag, net) in [
            ("actor", &self.actor),
            ("q1", &self.q1),
            ("q2", &self.q2),
            ("q1_target", &self.q1_target),
            ("q2_target", &self.q2_target),
        ] {
            writeln!(w, "{tag}")?;
            net.write_text(w)?;
        }
        Ok(())
    }
}

/// Parse a policy checkpoint produced by [`PolicyBundle::write_checkpoint`].
/// Optimizer state is not persisted; loading yields fresh Adam moments.
pub fn parse_policy_checkpoint(text: &str, params: &SacParams) -> Result<PolicyBundle> {
    let mut cursor = LineCursor::new(text);
    let (ln, header) = cursor.next_line("header")?;
    if header.trim() != "sd2ail-policy 1" {
        return Err(Error::parse(ln, "expected `sd2ail-policy 1` header"));
    }
    let mut scalar = |key: &str| -> Result<f64> {
        let (ln, rest) = cursor.expect_prefix(key)?;
        rest.trim()
            .parse::<f64>()
            .map_err(|e| Error::parse(ln, format!("bad {key}: {e}")))
    };
    let state_dim = scalar("state_dim")? as usize;
    let action_dim = scalar("action_dim")? as usize;
    let gamma = scalar("gamma")?;
    let tau = scalar("tau")?;
    let target_entropy = scalar("target_entropy")?;
    let log_alpha = scalar("log_alpha")?;
    if state_dim == 0 || action_dim == 0 || state_dim > 1_000_000 || action_dim > 1_000_000 {
        return Err(Error::parse(0, "invalid dimensions"));
    }

    let mut nets = Vec::with_capacity(5);
    for tag in ["actor", "q1", "q2", "q1_target", "q2_target"] {
        cursor.expect_exact(tag)?;
        nets.push(parse_densenet_from(&mut cursor)?);
    }
    cursor.expect_end()?;
    let q2_target = nets.pop().unwrap();
    let q1_target = nets.pop().unwrap();
    let q2 = nets.pop().unwrap();
    let q1 = nets.pop().unwrap();
    let actor = nets.pop().unwrap();

    if actor.input_dim() != state_dim || actor.output_dim() != 2 * action_dim {
        return Err(Error::parse(0, "actor dimensions inconsistent"));
    }
    for net in [&q1, &q2, &q1_target, &q2_target] {
        if net.input_dim() != state_dim + action_dim || net.output_dim() != 1 {
            return Err(Error::parse(0, "critic dimensions inconsistent"));
        }
    }
    if !(gamma >= 0.0 && gamma < 1.0) || !(tau > 0.0 && tau <= 1.0) || !log_alpha.is_finite() {
        return Err(Error::parse(0, "invalid scalar fields"));
    }

    let actor_opt = AdamState::new(actor.param_count(), params.lr);
    let q1_opt = AdamState::new(q1.param_count(), params.lr);
    let q2_opt = AdamState::new(q2.param_count(), params.lr);
    let alpha_opt = AdamState::new(1, params.lr_alpha);
    Ok(PolicyBundle {
        state_dim,
        action_dim,
        actor,
        q1,
        q2,
        q1_target,
        q2_target,
        log_alpha,
        gamma,
        tau,
        target_entropy,
        actor_opt,
        q1_opt,
        q2_opt,
        alpha_opt,
        lr_alpha: params.lr_alpha,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn bundle(seed: u64) -> PolicyBundle {
        let params = SacParams {
            hidden: vec![16, 16],
            ..Default::default()
        };
        PolicyBundle::new(3, 2, &params, &mut ChaCha12Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn deterministic_action_is_tanh_of_mean() {
        // Zero actor weights: mean = 0, so the deterministic action is 0.
        let params = SacParams {
            hidden: vec![8],
            ..Default::default()
        };
        let mut b = PolicyBundle::new(3, 2, &params, &mut ChaCha12Rng::seed_from_u64(0)).unwrap();
        let zeros = vec![0.0; b.actor.param_count()];
        b.actor_mut().set_params_flat(&zeros).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let a = b
            .act(&[0.5, -0.3, 0.2], ActMode::Deterministic, &mut rng)
            .unwrap();
        assert_eq!(a, vec![0.0, 0.0]);
    }

    #[test]
    fn sampled_actions_stay_in_bounds() {
        let b = bundle(3);
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        for _ in 0..10_000 {
            let a = b
                .act(&[0.1, 0.2, -0.5], ActMode::Stochastic, &mut rng)
                .unwrap();
            assert!(a.iter().all(|v| v.abs() <= 1.0));
        }
    }

    #[test]
    fn log_prob_matches_recomputation() {
        let b = bundle(5);
        let state = vec![0.4, -0.1, 0.9];
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let out = b.actor.forward(&state).unwrap();
        let row = b.sample_from_out(&out, &mut rng);
        let lp = b.log_prob_of_z(&state, &row.z).unwrap();
        assert!((lp - row.log_prob).abs() < 1e-10);
    }

    #[test]
    fn gamma_zero_target_is_reward() {
        let params = SacParams {
            hidden: vec![8],
            gamma: 0.0,
            ..Default::default()
        };
        let b = PolicyBundle::new(2, 1, &params, &mut ChaCha12Rng::seed_from_u64(1)).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let y = b.compute_critic_target(3.25, &[0.0, 0.0], &mut rng).unwrap();
        assert_eq!(y, 3.25);
    }

    #[test]
    fn tau_one_copies_critics_into_targets() {
        let params = SacParams {
            hidden: vec![8],
            tau: 1.0,
            ..Default::default()
        };
        let mut b = PolicyBundle::new(2, 1, &params, &mut ChaCha12Rng::seed_from_u64(4)).unwrap();
        let batch = TransitionBatch {
            states: vec![vec![0.1, 0.2]; 4],
            actions: vec![vec![0.3]; 4],
            rewards: vec![1.0; 4],
            next_states: vec![vec![0.0, 0.1]; 4],
        };
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        b.update(&batch, &mut rng).unwrap();
        assert_eq!(b.q1_target.params_flat(), b.q1.params_flat());
        assert_eq!(b.q2_target.params_flat(), b.q2.params_flat());
    }

    #[test]
    fn alpha_stays_positive_through_updates() {
        let mut b = bundle(8);
        let batch = TransitionBatch {
            states: vec![vec![0.0, 0.0, 0.0]; 8],
            actions: vec![vec![0.1, -0.1]; 8],
            rewards: vec![0.5; 8],
            next_states: vec![vec![0.0, 0.0, 0.1]; 8],
        };
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        for _ in 0..50 {
            b.update(&batch, &mut rng).unwrap();
            assert!(b.alpha() > 0.0);
        }
    }

    #[test]
    fn replay_buffer_is_a_ring() {
        let mut buf = AgentReplayBuffer::new(3).unwrap();
        for i in 0..5 {
            buf.push(AgentTransition {
                state: vec![i as f64],
                action: vec![0.0],
                next_state: vec![i as f64 + 1.0],
            });
        }
        assert_eq!(buf.len(), 3);
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let sample = buf.sample(10, &mut rng).unwrap();
        assert!(sample.iter().all(|t| t.state[0] >= 2.0));
    }

    #[test]
    fn rejects_non_finite_rewards() {
        let mut b = bundle(1);
        let batch = TransitionBatch {
            states: vec![vec![0.0; 3]],
            actions: vec![vec![0.0; 2]],
            rewards: vec![f64::INFINITY],
            next_states: vec![vec![0.0; 3]],
        };
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        assert!(b.update(&batch, &mut rng).is_err());
    }

    #[test]
    fn checkpoint_roundtrip() {
        let b = bundle(13);
        let mut buf = Vec::new();
        b.write_checkpoint(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let restored = parse_policy_checkpoint(&text, &SacParams::default()).unwrap();
        assert_eq!(restored.actor.params_flat(), b.actor.params_flat());
        assert_eq!(restored.q1.params_flat(), b.q1.params_flat());
        assert_eq!(restored.q2_target.params_flat(), b.q2_target.params_flat());
        assert_eq!(restored.log_alpha, b.log_alpha);
        assert!(parse_policy_checkpoint("nope", &SacParams::default()).is_err());
    }
}
