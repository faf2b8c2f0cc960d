//! Run configuration: TOML-backed, fully defaulted, validated against
//! documented ranges before a run starts. The resolved config is written
//! next to the run outputs so every metric can be recomputed offline.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Environment variables that override the corresponding fields.
pub const ENV_OUT_DIR: &str = "SD2AIL_OUT_DIR";
pub const ENV_SEED: &str = "SD2AIL_SEED";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffusionConfig {
    /// Denoising step count T.
    pub t_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    /// Learned per-step embedding width.
    pub embed_dim: usize,
    /// Hidden sizes of the noise-prediction net.
    pub hidden: Vec<usize>,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        DiffusionConfig {
            t_steps: 10,
            beta_start: 0.05,
            beta_end: 0.45,
            embed_dim: 8,
            hidden: vec![64, 64],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub lr: f64,
    pub clamp_delta: f64,
    /// Expert batch size k; the pseudo batch is `pseudo_ratio * k`.
    pub expert_batch: usize,
    pub pseudo_ratio: usize,
    pub agent_batch: usize,
    /// Fresh noise draws per step in the confidence sum.
    pub noise_draws: usize,
    /// Environment steps between discriminator updates.
    pub update_interval: u64,
    /// Recompute the threshold over the full expert dataset instead of
    /// the current minibatch.
    pub threshold_full_dataset: bool,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            lr: 3e-4,
            clamp_delta: 1e-6,
            expert_batch: 64,
            pseudo_ratio: 7,
            agent_batch: 256,
            noise_draws: 1,
            update_interval: 1,
            threshold_full_dataset: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PedrConfig {
    /// Prioritization exponent; 0 reduces PEDR to uniform replay.
    pub zeta: f64,
    pub eta_start: f64,
    /// Steps over which eta anneals to 1; defaults to `total_steps`.
    pub anneal_steps: Option<u64>,
    pub expert_capacity: usize,
    pub pseudo_capacity: usize,
}

impl Default for PedrConfig {
    fn default() -> Self {
        PedrConfig {
            zeta: 0.6,
            eta_start: 0.4,
            anneal_steps: None,
            expert_capacity: 1000,
            pseudo_capacity: 50_000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PseudoConfig {
    /// Master switch for synthetic demonstration generation.
    pub enabled: bool,
    /// Environment steps between generation events.
    pub interval: u64,
    /// Candidates per generation event.
    pub count: usize,
}

impl Default for PseudoConfig {
    fn default() -> Self {
        PseudoConfig {
            enabled: true,
            interval: 1000,
            count: 256,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SacConfig {
    pub hidden: Vec<usize>,
    pub gamma: f64,
    pub tau: f64,
    pub lr: f64,
    pub lr_alpha: f64,
    pub init_alpha: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    /// Environment steps between SAC updates.
    pub update_interval: u64,
}

impl Default for SacConfig {
    fn default() -> Self {
        SacConfig {
            hidden: vec![64, 64],
            gamma: 0.99,
            tau: 0.005,
            lr: 3e-4,
            lr_alpha: 3e-4,
            init_alpha: 0.2,
            batch_size: 256,
            replay_capacity: 200_000,
            update_interval: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub env: String,
    /// Path to the expert trajectory file.
    pub demos: String,
    pub seed: u64,
    pub out_dir: String,
    pub total_steps: u64,
    /// Random-action steps before any update.
    pub warmup_steps: u64,
    pub eval_interval: u64,
    pub eval_episodes: usize,
    /// Optional run directory to warm-start networks and buffers from.
    pub init_from: Option<String>,
    pub diffusion: DiffusionConfig,
    pub discriminator: DiscriminatorConfig,
    pub pedr: PedrConfig,
    pub pseudo: PseudoConfig,
    pub sac: SacConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            env: "pointmass2d".into(),
            demos: "demos.csv".into(),
            seed: 0,
            out_dir: "runs/default".into(),
            total_steps: 150_000,
            warmup_steps: 1000,
            eval_interval: 5000,
            eval_episodes: 10,
            init_from: None,
            diffusion: DiffusionConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            pedr: PedrConfig::default(),
            pseudo: PseudoConfig::default(),
            sac: SacConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        crate::envs::EnvKind::parse(&self.env)?;
        let check = |ok: bool, msg: &str| -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::Config(msg.into()))
            }
        };
        check(!self.demos.is_empty(), "demos path must be set")?;
        check(!self.out_dir.is_empty(), "out_dir must be set")?;
        check(self.eval_interval > 0, "eval_interval must be positive")?;
        check(self.eval_episodes > 0, "eval_episodes must be positive")?;

        let d = &self.diffusion;
        check(
            (1..=10_000).contains(&d.t_steps),
            "diffusion.t_steps must lie in 1..=10000",
        )?;
        check(
            0.0 < d.beta_start && d.beta_start <= d.beta_end && d.beta_end < 1.0,
            "diffusion betas must satisfy 0 < start <= end < 1",
        )?;
        check(d.embed_dim >= 1, "diffusion.embed_dim must be positive")?;
        check(
            d.hidden.iter().all(|&h| h >= 1),
            "diffusion.hidden sizes must be positive",
        )?;

        let dc = &self.discriminator;
        check(dc.lr > 0.0 && dc.lr < 1.0, "discriminator.lr must lie in (0, 1)")?;
        check(
            dc.clamp_delta > 0.0 && dc.clamp_delta < 0.5,
            "discriminator.clamp_delta must lie in (0, 0.5)",
        )?;
        check(dc.expert_batch >= 1, "discriminator.expert_batch must be positive")?;
        check(dc.agent_batch >= 1, "discriminator.agent_batch must be positive")?;
        check(dc.noise_draws >= 1, "discriminator.noise_draws must be positive")?;
        check(
            dc.update_interval >= 1,
            "discriminator.update_interval must be positive",
        )?;

        let p = &self.pedr;
        check(
            p.zeta.is_finite() && p.zeta >= 0.0,
            "pedr.zeta must be non-negative",
        )?;
        check(
            p.eta_start > 0.0 && p.eta_start <= 1.0,
            "pedr.eta_start must lie in (0, 1]",
        )?;
        check(p.expert_capacity >= 1, "pedr.expert_capacity must be positive")?;
        check(p.pseudo_capacity >= 1, "pedr.pseudo_capacity must be positive")?;

        let ps = &self.pseudo;
        check(ps.interval >= 1, "pseudo.interval must be positive")?;
        check(
            !ps.enabled || ps.count >= 1,
            "pseudo.count must be positive when generation is enabled",
        )?;

        let s = &self.sac;
        check(
            s.hidden.iter().all(|&h| h >= 1),
            "sac.hidden sizes must be positive",
        )?;
        check(s.gamma >= 0.0 && s.gamma < 1.0, "sac.gamma must lie in [0, 1)")?;
        check(s.tau > 0.0 && s.tau <= 1.0, "sac.tau must lie in (0, 1]")?;
        check(s.lr > 0.0 && s.lr < 1.0, "sac.lr must lie in (0, 1)")?;
        check(s.lr_alpha >= 0.0, "sac.lr_alpha must be non-negative")?;
        check(s.init_alpha > 0.0, "sac.init_alpha must be positive")?;
        check(s.batch_size >= 1, "sac.batch_size must be positive")?;
        check(s.replay_capacity >= 1, "sac.replay_capacity must be positive")?;
        check(s.update_interval >= 1, "sac.update_interval must be positive")?;
        Ok(())
    }

    pub fn parse_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config parse: {e}")))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_toml(&text)
    }

    /// Apply `SD2AIL_OUT_DIR` / `SD2AIL_SEED` overrides.
    pub fn apply_env_overrides(&mut self) -> Result<()> {
        if let Ok(dir) = std::env::var(ENV_OUT_DIR) {
            if !dir.is_empty() {
                self.out_dir = dir;
            }
        }
        if let Ok(seed) = std::env::var(ENV_SEED) {
            if !seed.is_empty() {
                self.seed = seed
                    .parse()
                    .map_err(|e| Error::Config(format!("bad {ENV_SEED}: {e}")))?;
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(format!("config encode: {e}")))
    }

    /// Steps over which the importance-weight exponent anneals.
    pub fn anneal_steps(&self) -> u64 {
        self.pedr.anneal_steps.unwrap_or(self.total_steps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn toml_roundtrip_preserves_fields() {
        let mut cfg = RunConfig::default();
        cfg.seed = 42;
        cfg.diffusion.t_steps = 7;
        cfg.pedr.anneal_steps = Some(1234);
        let text = cfg.to_toml().unwrap();
        let back = RunConfig::parse_toml(&text).unwrap();
        assert_eq!(back.seed, 42);
        assert_eq!(back.diffusion.t_steps, 7);
        assert_eq!(back.pedr.anneal_steps, Some(1234));
    }

    #[test]
    fn partial_toml_fills_defaults() {
        let cfg = RunConfig::parse_toml("seed = 9\n[diffusion]\nt_steps = 5\n").unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.diffusion.t_steps, 5);
        assert_eq!(cfg.diffusion.beta_start, 0.05);
        assert_eq!(cfg.sac.batch_size, 256);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(RunConfig::parse_toml("sede = 9\n").is_err());
        assert!(RunConfig::parse_toml("[diffusion]\nt_step = 5\n").is_err());
    }

    #[test]
    fn validation_catches_bad_ranges() {
        let mut cfg = RunConfig::default();
        cfg.env = "mujoco".into();
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        cfg.diffusion.beta_start = 0.9;
        cfg.diffusion.beta_end = 0.1;
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        cfg.discriminator.clamp_delta = 0.7;
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        cfg.pedr.eta_start = 0.0;
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        cfg.sac.gamma = 1.0;
        assert!(cfg.validate().is_err());
    }
}
