//! Diffusion-based discriminator: a state-action pair's confidence is
//! the average over steps of `exp(-loss)` for the denoising loss, the
//! surrogate reward is `-log(1 - D)`, and pseudo-expert candidates are
//! kept when their confidence clears a dynamic threshold. Training
//! minimizes the weighted three-term GAN loss with importance weights on
//! the (pseudo-)expert terms.

use std::io::Write;

use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};

use crate::diffusion::{
    forward_noise, reverse_sample, DiffusionSchedule, NoisePredictor, Normalizer,
};
use crate::linalg::Matrix;
use crate::nn::{parse_densenet_from, AdamState, LineCursor};
use crate::{Error, Result};

/// Mean of `exp(-loss)` over per-step losses, clamped away from 0 and 1.
pub fn confidence_from_losses(losses: &[f64], clamp_delta: f64) -> f64 {
    let mean: f64 = losses.iter().map(|l| (-l).exp()).sum::<f64>() / losses.len() as f64;
    mean.clamp(clamp_delta, 1.0 - clamp_delta)
}

/// Surrogate reward from a confidence value.
pub fn reward_from_confidence(confidence: f64) -> f64 {
    -(1.0 - confidence).ln()
}

/// Scores raw (state, action) pairs in environment coordinates.
pub trait ConfidenceScorer {
    fn score(&self, pair: &[f64], rng: &mut dyn RngCore) -> Result<f64>;
}

/// Mean confidence over a batch of expert pairs (the dynamic threshold).
pub fn dynamic_threshold<S: ConfidenceScorer + ?Sized>(
    scorer: &S,
    expert_pairs: &[Vec<f64>],
    rng: &mut dyn RngCore,
) -> Result<f64> {
    if expert_pairs.is_empty() {
        return Err(Error::Empty("expert batch for threshold"));
    }
    let mut acc = 0.0;
    for pair in expert_pairs {
        acc += scorer.score(pair, rng)?;
    }
    Ok(acc / expert_pairs.len() as f64)
}

/// Keep candidates whose confidence strictly exceeds `tau`, preserving
/// order.
pub fn filter_pseudo<S: ConfidenceScorer + ?Sized>(
    scorer: &S,
    candidates: &[Vec<f64>],
    tau: f64,
    rng: &mut dyn RngCore,
) -> Result<Vec<Vec<f64>>> {
    let mut kept = Vec::new();
    for c in candidates {
        if scorer.score(c, rng)? > tau {
            kept.push(c.clone());
        }
    }
    Ok(kept)
}

/// Per-group values of the discriminator loss. Positive groups are
/// weighted binary cross-entropy with target 1, the agent group has
/// target 0; each group is mean-reduced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupLosses {
    pub pseudo: f64,
    pub expert: f64,
    pub agent: f64,
}

impl GroupLosses {
    pub fn total(&self) -> f64 {
        self.pseudo + self.expert + self.agent
    }
}

pub fn weighted_bce_loss(
    d_pseudo: &[f64],
    w_pseudo: &[f64],
    d_expert: &[f64],
    w_expert: &[f64],
    d_agent: &[f64],
) -> GroupLosses {
    let positive = |d: &[f64], w: &[f64]| -> f64 {
        if d.is_empty() {
            return 0.0;
        }
        let sum: f64 = d.iter().zip(w).map(|(di, wi)| -wi * di.ln()).sum();
        sum / d.len() as f64
    };
    let agent = if d_agent.is_empty() {
        0.0
    } else {
        d_agent.iter().map(|dj| -(1.0 - dj).ln()).sum::<f64>() / d_agent.len() as f64
    };
    GroupLosses {
        pseudo: positive(d_pseudo, w_pseudo),
        expert: positive(d_expert, w_expert),
        agent,
    }
}

/// Batch for one discriminator update. Rows are normalized state-action
/// vectors; weights belong to the expert and pseudo-expert entries,
/// agent entries carry implicit weight 1.
#[derive(Debug, Clone, Default)]
pub struct LabeledBatch {
    pub expert: Vec<Vec<f64>>,
    pub expert_weights: Vec<f64>,
    pub pseudo: Vec<Vec<f64>>,
    pub pseudo_weights: Vec<f64>,
    pub agent: Vec<Vec<f64>>,
}

impl LabeledBatch {
    fn validate(&self, dim: usize) -> Result<()> {
        if self.agent.is_empty() {
            return Err(Error::InvalidBatch("no agent entries".into()));
        }
        if self.expert.is_empty() && self.pseudo.is_empty() {
            return Err(Error::InvalidBatch(
                "neither expert nor pseudo-expert entries".into(),
            ));
        }
        if self.expert.len() != self.expert_weights.len()
            || self.pseudo.len() != self.pseudo_weights.len()
        {
            return Err(Error::InvalidBatch("weights do not match entries".into()));
        }
        if self
            .expert_weights
            .iter()
            .chain(&self.pseudo_weights)
            .any(|w| !(w.is_finite() && *w > 0.0))
        {
            return Err(Error::InvalidBatch(
                "importance weights must be strictly positive".into(),
            ));
        }
        for row in self
            .pseudo
            .iter()
            .chain(&self.expert)
            .chain(&self.agent)
        {
            if row.len() != dim {
                return Err(Error::Dim {
                    what: "labeled batch row",
                    expected: dim,
                    got: row.len(),
                });
            }
        }
        Ok(())
    }
}

/// Outcome of one training step; confidences are reported per sample in
/// batch order so priorities can be refreshed from them.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub losses: GroupLosses,
    pub loss: f64,
    pub pseudo_confidence: Vec<f64>,
    pub expert_confidence: Vec<f64>,
    pub agent_confidence: Vec<f64>,
}

/// The diffusion discriminator: noise predictor, schedule, frozen
/// normalization statistics, and the confidence clamp.
#[derive(Debug, Clone)]
pub struct DiscriminatorModel {
    predictor: NoisePredictor,
    sched: DiffusionSchedule,
    norm: Normalizer,
    clamp_delta: f64,
    noise_draws: usize,
}

impl DiscriminatorModel {
    pub fn new(
        predictor: NoisePredictor,
        sched: DiffusionSchedule,
        norm: Normalizer,
        clamp_delta: f64,
        noise_draws: usize,
    ) -> Result<Self> {
        if predictor.t_steps() != sched.t_max() {
            return Err(Error::Config(format!(
                "predictor supports {} steps, schedule has {}",
                predictor.t_steps(),
                sched.t_max()
            )));
        }
        if norm.dim() != predictor.data_dim() {
            return Err(Error::Config(format!(
                "normalizer dim {} does not match data dim {}",
                norm.dim(),
                predictor.data_dim()
            )));
        }
        if !(clamp_delta > 0.0 && clamp_delta < 0.5) {
            return Err(Error::Config("clamp_delta must lie in (0, 0.5)".into()));
        }
        if noise_draws == 0 {
            return Err(Error::Config("noise_draws must be at least 1".into()));
        }
        Ok(DiscriminatorModel {
            predictor,
            sched,
            norm,
            clamp_delta,
            noise_draws,
        })
    }

    pub fn predictor(&self) -> &NoisePredictor {
        &self.predictor
    }

    pub fn schedule(&self) -> &DiffusionSchedule {
        &self.sched
    }

    pub fn normalizer(&self) -> &Normalizer {
        &self.norm
    }

    pub fn clamp_delta(&self) -> f64 {
        self.clamp_delta
    }

    pub fn noise_draws(&self) -> usize {
        self.noise_draws
    }

    pub fn data_dim(&self) -> usize {
        self.predictor.data_dim()
    }

    pub fn param_count(&self) -> usize {
        self.predictor.param_count()
    }

    /// Denoising losses for one normalized sample: steps in order
    /// `t = 1..=T`, with `noise_draws` fresh noise vectors per step.
    pub fn per_step_losses<R: Rng>(&self, x0_norm: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        let dim = self.data_dim();
        if x0_norm.len() != dim {
            return Err(Error::Dim {
                what: "normalized sample",
                expected: dim,
                got: x0_norm.len(),
            });
        }
        let t_max = self.sched.t_max();
        let mut losses = Vec::with_capacity(t_max * self.noise_draws);
        for t in 1..=t_max {
            for _ in 0..self.noise_draws {
                let eps: Vec<f64> = (0..dim)
                    .map(|_| StandardNormal.sample(rng))
                    .collect();
                let loss =
                    crate::diffusion::diffusion_loss(&self.predictor, x0_norm, t, &eps, &self.sched)?;
                if !loss.is_finite() {
                    return Err(Error::NonFinite("per-step loss".into()));
                }
                losses.push(loss);
            }
        }
        Ok(losses)
    }

    /// Confidence of a raw concatenated (state, action) pair.
    pub fn confidence_pair<R: Rng>(&self, pair: &[f64], rng: &mut R) -> Result<f64> {
        let x0 = self.norm.normalize(pair);
        let losses = self.per_step_losses(&x0, rng)?;
        Ok(confidence_from_losses(&losses, self.clamp_delta))
    }

    pub fn confidence<R: Rng>(&self, state: &[f64], action: &[f64], rng: &mut R) -> Result<f64> {
        let mut pair = Vec::with_capacity(state.len() + action.len());
        pair.extend_from_slice(state);
        pair.extend_from_slice(action);
        self.confidence_pair(&pair, rng)
    }

    /// `-log(1 - D)`; finite because of the clamp.
    pub fn surrogate_reward<R: Rng>(
        &self,
        state: &[f64],
        action: &[f64],
        rng: &mut R,
    ) -> Result<f64> {
        Ok(reward_from_confidence(self.confidence(state, action, rng)?))
    }

    pub fn surrogate_reward_pair<R: Rng>(&self, pair: &[f64], rng: &mut R) -> Result<f64> {
        Ok(reward_from_confidence(self.confidence_pair(pair, rng)?))
    }

    pub fn normalize_pairs(&self, raw: &[Vec<f64>]) -> Vec<Vec<f64>> {
        raw.iter().map(|p| self.norm.normalize(p)).collect()
    }

    /// Draw `n` samples from the reverse process and map them back to
    /// environment coordinates.
    pub fn generate<R: Rng>(&self, n: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
        let normalized = reverse_sample(&self.predictor, &self.sched, rng, n)?;
        Ok(normalized
            .iter()
            .map(|x| self.norm.denormalize(x))
            .collect())
    }

    /// One optimizer step on the weighted three-term loss. Noise is
    /// drawn per sample (groups in order pseudo, expert, agent), per
    /// step, per draw.
    pub fn train_step<R: Rng>(
        &mut self,
        batch: &LabeledBatch,
        opt: &mut AdamState,
        rng: &mut R,
    ) -> Result<TrainReport> {
        let dim = self.data_dim();
        batch.validate(dim)?;
        let t_max = self.sched.t_max();
        let m = self.noise_draws;
        let per_sample = t_max * m;

        let n_pe = batch.pseudo.len();
        let n_e = batch.expert.len();
        let n_a = batch.agent.len();
        let n = n_pe + n_e + n_a;

        let samples: Vec<&Vec<f64>> = batch
            .pseudo
            .iter()
            .chain(&batch.expert)
            .chain(&batch.agent)
            .collect();

        // Build the noised rows for every (sample, t, draw) triple.
        let total_rows = n * per_sample;
        let mut noised = Matrix::zeros(total_rows, dim);
        let mut eps_rows = Matrix::zeros(total_rows, dim);
        let mut ts = Vec::with_capacity(total_rows);
        {
            let mut row = 0;
            for x0 in &samples {
                for t in 1..=t_max {
                    for _ in 0..m {
                        let er = eps_rows.row_mut(row);
                        for e in er.iter_mut() {
                            *e = StandardNormal.sample(rng);
                        }
                        let xt = forward_noise(x0, t, eps_rows.row(row), &self.sched)?;
                        noised.row_mut(row).copy_from_slice(&xt);
                        ts.push(t);
                        row += 1;
                    }
                }
            }
        }

        let (preds, cache) = self.predictor.forward_rows(&noised, &ts)?;

        // Residuals and per-row losses.
        let mut residuals = preds;
        let mut row_losses = vec![0.0; total_rows];
        for i in 0..total_rows {
            let rr = residuals.row_mut(i);
            let er = eps_rows.row(i);
            let mut l = 0.0;
            for (r, e) in rr.iter_mut().zip(er) {
                *r -= e;
                l += *r * *r;
            }
            row_losses[i] = l;
        }

        // Per-sample confidence.
        let mut d = Vec::with_capacity(n);
        for i in 0..n {
            let ls = &row_losses[i * per_sample..(i + 1) * per_sample];
            d.push(confidence_from_losses(ls, self.clamp_delta));
        }
        let d_pseudo = &d[..n_pe];
        let d_expert = &d[n_pe..n_pe + n_e];
        let d_agent = &d[n_pe + n_e..];

        let losses = weighted_bce_loss(
            d_pseudo,
            &batch.pseudo_weights,
            d_expert,
            &batch.expert_weights,
            d_agent,
        );
        let total = losses.total();
        if !total.is_finite() {
            return Err(Error::NonFinite("discriminator loss".into()));
        }

        // dLoss/dD per sample; zero when the clamp is active.
        let lo = self.clamp_delta;
        let hi = 1.0 - self.clamp_delta;
        let mut coeff = vec![0.0; n];
        for i in 0..n {
            let di = d[i];
            if di <= lo || di >= hi {
                continue;
            }
            coeff[i] = if i < n_pe {
                -batch.pseudo_weights[i] / (n_pe as f64 * di)
            } else if i < n_pe + n_e {
                -batch.expert_weights[i - n_pe] / (n_e as f64 * di)
            } else {
                1.0 / (n_a as f64 * (1.0 - di))
            };
        }

        // Chain rule: dD/dL_row = -exp(-L)/per_sample, dL/dr = 2r.
        let mut upstream = residuals;
        for i in 0..n {
            let c = coeff[i];
            for k in 0..per_sample {
                let row = i * per_sample + k;
                let f = -c * (-row_losses[row]).exp() / per_sample as f64 * 2.0;
                for v in upstream.row_mut(row) {
                    *v *= f;
                }
            }
        }

        let grads = self.predictor.backward_rows(&cache, &upstream)?;
        let mut params = self.predictor.params_flat();
        opt.apply(&mut params, &grads)?;
        self.predictor.set_params_flat(&params)?;
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("discriminator parameters".into()));
        }

        Ok(TrainReport {
            losses,
            loss: total,
            pseudo_confidence: d_pseudo.to_vec(),
            expert_confidence: d_expert.to_vec(),
            agent_confidence: d_agent.to_vec(),
        })
    }

    pub fn write_checkpoint<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "sd2ail-discriminator 1")?;
        writeln!(w, "clamp_delta {}", self.clamp_delta)?;
        writeln!(w, "noise_draws {}", self.noise_draws)?;
        let betas: Vec<String> = self.sched.betas().iter().map(|b| format!("{b}")).collect();
        writeln!(w, "betas {}", betas.join(" "))?;
        let mean: Vec<String> = self.norm.mean().iter().map(|v| format!("{v}")).collect();
        writeln!(w, "norm_mean {}", mean.join(" "))?;
        let std: Vec<String> = self.norm.std().iter().map(|v| format!("{v}")).collect();
        writeln!(w, "norm_std {}", std.join(" "))?;
        let embed = self.predictor.t_embed();
        writeln!(w, "embed {} {}", embed.rows(), embed.cols())?;
        for chunk in embed.data().chunks(8) {
            let line: Vec<String> = chunk.iter().map(|v| format!("{v}")).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        writeln!(w, "net")?;
        self.predictor.net().write_text(w)?;
        Ok(())
    }
}

impl ConfidenceScorer for DiscriminatorModel {
    fn score(&self, pair: &[f64], rng: &mut dyn RngCore) -> Result<f64> {
        self.confidence_pair(pair, &mut &mut *rng)
    }
}

/// Parse a discriminator checkpoint produced by
/// [`DiscriminatorModel::write_checkpoint`].
pub fn parse_discriminator_checkpoint(text: &str) -> Result<DiscriminatorModel> {
    let mut cursor = LineCursor::new(text);
    let (ln, header) = cursor.next_line("header")?;
    if header.trim() != "sd2ail-discriminator 1" {
        return Err(Error::parse(ln, "expected `sd2ail-discriminator 1` header"));
    }
    let (ln, rest) = cursor.expect_prefix("clamp_delta")?;
    let clamp_delta: f64 = rest
        .trim()
        .parse()
        .map_err(|e| Error::parse(ln, format!("bad clamp_delta: {e}")))?;
    let (ln, rest) = cursor.expect_prefix("noise_draws")?;
    let noise_draws: usize = rest
        .trim()
        .parse()
        .map_err(|e| Error::parse(ln, format!("bad noise_draws: {e}")))?;

    let parse_floats = |ln: usize, rest: &str| -> Result<Vec<f64>> {
        rest.split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|e| Error::parse(ln, format!("bad float `{t}`: {e}")))
            })
            .collect()
    };
    let (ln, rest) = cursor.expect_prefix("betas")?;
    let betas = parse_floats(ln, rest)?;
    let (ln, rest) = cursor.expect_prefix("norm_mean")?;
    let mean = parse_floats(ln, rest)?;
    let (ln, rest) = cursor.expect_prefix("norm_std")?;
    let std = parse_floats(ln, rest)?;

    let (ln, rest) = cursor.expect_prefix("embed")?;
    let mut it = rest.split_whitespace();
    let rows: usize = it
        .next()
        .ok_or_else(|| Error::parse(ln, "missing embed rows"))?
        .parse()
        .map_err(|e| Error::parse(ln, format!("bad embed rows: {e}")))?;
    let cols: usize = it
        .next()
        .ok_or_else(|| Error::parse(ln, "missing embed cols"))?
        .parse()
        .map_err(|e| Error::parse(ln, format!("bad embed cols: {e}")))?;
    if rows == 0 || cols == 0 || rows.saturating_mul(cols) > 10_000_000 {
        return Err(Error::parse(ln, "invalid embed shape"));
    }
    let embed_data = cursor.read_floats(rows * cols)?;
    let embed = Matrix::from_vec(rows, cols, embed_data)?;

    cursor.expect_exact("net")?;
    let net = parse_densenet_from(&mut cursor)?;
    cursor.expect_end()?;

    let predictor = NoisePredictor::from_parts(net, embed)
        .map_err(|e| Error::parse(0, e.to_string()))?;
    let sched = DiffusionSchedule::from_betas(betas).map_err(|e| Error::parse(0, e.to_string()))?;
    let norm = Normalizer::from_parts(mean, std).map_err(|e| Error::parse(0, e.to_string()))?;
    if norm.dim() != predictor.data_dim() {
        return Err(Error::parse(0, "normalizer dim mismatch"));
    }
    DiscriminatorModel::new(predictor, sched, norm, clamp_delta, noise_draws)
        .map_err(|e| Error::parse(0, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::build_schedule;
    use crate::nn::Activation;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn model(seed: u64) -> DiscriminatorModel {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let sched = build_schedule(10, 0.05, 0.45).unwrap();
        let pred = NoisePredictor::new(4, 10, 3, &[16, 16], Activation::Tanh, &mut rng).unwrap();
        let norm = Normalizer::identity(4);
        DiscriminatorModel::new(pred, sched, norm, 1e-6, 1).unwrap()
    }

    struct FixedScorer(Vec<f64>, std::cell::Cell<usize>);

    impl ConfidenceScorer for FixedScorer {
        fn score(&self, _pair: &[f64], _rng: &mut dyn RngCore) -> Result<f64> {
            let i = self.1.get();
            self.1.set(i + 1);
            Ok(self.0[i % self.0.len()])
        }
    }

    #[test]
    fn zero_losses_clamp_to_upper_bound() {
        let d = confidence_from_losses(&[0.0; 10], 1e-6);
        assert_eq!(d, 1.0 - 1e-6);
    }

    #[test]
    fn ln2_losses_give_half_confidence() {
        let d = confidence_from_losses(&[std::f64::consts::LN_2; 10], 1e-6);
        assert_eq!(d, 0.5);
        assert_eq!(reward_from_confidence(d), std::f64::consts::LN_2);
    }

    #[test]
    fn reward_bounds_follow_the_clamp() {
        let delta = 1e-6;
        let lower = reward_from_confidence(delta);
        // first-order: -ln(1 - delta) is approximately delta
        assert!((lower - delta).abs() < 1e-11);
        let upper = reward_from_confidence(1.0 - delta);
        assert!((upper - (-(delta).ln())).abs() < 1e-9);
        assert!((upper - 13.8155).abs() < 1e-3);
    }

    #[test]
    fn increasing_losses_decreases_confidence() {
        let base: Vec<f64> = (0..10).map(|i| 0.4 + 0.05 * i as f64).collect();
        let bumped: Vec<f64> = base.iter().map(|l| l + 0.1).collect();
        let d1 = confidence_from_losses(&base, 1e-6);
        let d2 = confidence_from_losses(&bumped, 1e-6);
        assert!(d2 < d1);
    }

    #[test]
    fn threshold_is_the_mean_confidence() {
        let scorer = FixedScorer(vec![0.2, 0.4], std::cell::Cell::new(0));
        let pairs = vec![vec![0.0], vec![0.0]];
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let tau = dynamic_threshold(&scorer, &pairs, &mut rng).unwrap();
        assert!((tau - 0.3).abs() < 1e-15);

        let same = FixedScorer(vec![0.7], std::cell::Cell::new(0));
        let tau = dynamic_threshold(&same, &pairs, &mut rng).unwrap();
        assert!((tau - 0.7).abs() < 1e-15);

        let empty: Vec<Vec<f64>> = Vec::new();
        assert!(dynamic_threshold(&scorer, &empty, &mut rng).is_err());
    }

    #[test]
    fn filter_keeps_strictly_above_tau_in_order() {
        let scorer = FixedScorer(vec![0.9, 0.1, 0.5, 0.7], std::cell::Cell::new(0));
        let cands: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64]).collect();
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let kept = filter_pseudo(&scorer, &cands, 0.5, &mut rng).unwrap();
        assert_eq!(kept, vec![vec![0.0], vec![3.0]]);
    }

    #[test]
    fn filter_extreme_thresholds() {
        let m = model(1);
        let cands: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64 * 0.1; 4]).collect();
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        // tau at the clamp ceiling rejects everything
        let kept = filter_pseudo(&m, &cands, 1.0 - m.clamp_delta(), &mut rng).unwrap();
        assert!(kept.is_empty());
        // tau = 0 accepts everything (confidence >= clamp_delta > 0)
        let kept = filter_pseudo(&m, &cands, 0.0, &mut rng).unwrap();
        assert_eq!(kept.len(), 5);
    }

    #[test]
    fn confidence_is_deterministic_given_seed() {
        let m = model(7);
        let pair = vec![0.3, -0.2, 0.5, 0.9];
        let a = m
            .confidence_pair(&pair, &mut ChaCha12Rng::seed_from_u64(5))
            .unwrap();
        let b = m
            .confidence_pair(&pair, &mut ChaCha12Rng::seed_from_u64(5))
            .unwrap();
        assert_eq!(a, b);
        assert!(a > 0.0 && a < 1.0);
    }

    #[test]
    fn group_losses_at_half_confidence_are_ln2() {
        let d = [0.5, 0.5];
        let w = [1.0, 1.0];
        let g = weighted_bce_loss(&d, &w, &d, &w, &d);
        let ln2 = std::f64::consts::LN_2;
        assert!((g.pseudo - ln2).abs() < 1e-15);
        assert!((g.expert - ln2).abs() < 1e-15);
        assert!((g.agent - ln2).abs() < 1e-15);
    }

    #[test]
    fn doubling_weights_doubles_positive_terms() {
        let d_pos = [0.3, 0.6, 0.8];
        let w: Vec<f64> = vec![0.5, 1.0, 2.0];
        let w2: Vec<f64> = w.iter().map(|x| 2.0 * x).collect();
        let d_agent = [0.4, 0.2];
        let a = weighted_bce_loss(&d_pos, &w, &d_pos, &w, &d_agent);
        let b = weighted_bce_loss(&d_pos, &w2, &d_pos, &w2, &d_agent);
        assert!((b.pseudo - 2.0 * a.pseudo).abs() < 1e-12);
        assert!((b.expert - 2.0 * a.expert).abs() < 1e-12);
        assert_eq!(b.agent, a.agent);
    }

    #[test]
    fn train_step_rejects_degenerate_batches() {
        let mut m = model(3);
        let mut opt = AdamState::new(m.param_count(), 1e-3);
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let empty = LabeledBatch::default();
        assert!(m.train_step(&empty, &mut opt, &mut rng).is_err());

        // agent only
        let batch = LabeledBatch {
            agent: vec![vec![0.0; 4]],
            ..Default::default()
        };
        assert!(m.train_step(&batch, &mut opt, &mut rng).is_err());

        // non-positive weight
        let batch = LabeledBatch {
            expert: vec![vec![0.0; 4]],
            expert_weights: vec![0.0],
            agent: vec![vec![0.0; 4]],
            ..Default::default()
        };
        assert!(m.train_step(&batch, &mut opt, &mut rng).is_err());
    }

    #[test]
    fn checkpoint_roundtrip_preserves_everything() {
        let m = model(11);
        let mut buf = Vec::new();
        m.write_checkpoint(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let restored = parse_discriminator_checkpoint(&text).unwrap();
        assert_eq!(restored.clamp_delta(), m.clamp_delta());
        assert_eq!(restored.noise_draws(), m.noise_draws());
        assert_eq!(restored.schedule().betas(), m.schedule().betas());
        assert_eq!(restored.normalizer(), m.normalizer());
        assert_eq!(
            restored.predictor().params_flat(),
            m.predictor().params_flat()
        );
    }

    #[test]
    fn checkpoint_parse_rejects_garbage() {
        assert!(parse_discriminator_checkpoint("").is_err());
        assert!(parse_discriminator_checkpoint("sd2ail-discriminator 1\n").is_err());
        let m = model(2);
        let mut buf = Vec::new();
        m.write_checkpoint(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let truncated = &text[..text.len() / 2];
        assert!(parse_discriminator_checkpoint(truncated).is_err());
    }
}
