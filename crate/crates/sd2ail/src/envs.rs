//! Deterministic desk-scale control environments with closed-form
//! dynamics, scripted PD experts, demonstration collection, and the
//! trajectory file format.
//!
//! True environment rewards live on [`Transition`] records for
//! evaluation only; the training paths consume (state, action,
//! next_state) and never see them.

use std::io::Write;
use std::path::Path;

use rand::Rng;

use crate::nn::LineCursor;
use crate::{Error, Result};

pub const TRAJECTORY_FORMAT: &str = "sd2ail-trajectories";
pub const TRAJECTORY_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvKind {
    PointMass2d,
    DoubleIntegrator1d,
}

impl EnvKind {
    pub fn name(self) -> &'static str {
        match self {
            EnvKind::PointMass2d => "pointmass2d",
            EnvKind::DoubleIntegrator1d => "doubleintegrator1d",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "pointmass2d" => Ok(EnvKind::PointMass2d),
            "doubleintegrator1d" => Ok(EnvKind::DoubleIntegrator1d),
            other => Err(Error::Config(format!(
                "unknown environment `{other}` (expected pointmass2d or doubleintegrator1d)"
            ))),
        }
    }
}

/// Static description of an environment: dimensions, bounds, time step,
/// horizon, and the initial-state box.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub kind: EnvKind,
    pub state_dim: usize,
    pub action_dim: usize,
    pub action_low: f64,
    pub action_high: f64,
    pub dt: f64,
    pub horizon: usize,
    pub init_pos_range: f64,
    pub init_vel_range: f64,
}

impl EnvSpec {
    pub fn pointmass2d() -> Self {
        EnvSpec {
            kind: EnvKind::PointMass2d,
            state_dim: 4,
            action_dim: 2,
            action_low: -1.0,
            action_high: 1.0,
            dt: 0.05,
            horizon: 200,
            init_pos_range: 1.0,
            init_vel_range: 0.2,
        }
    }

    pub fn double_integrator1d() -> Self {
        EnvSpec {
            kind: EnvKind::DoubleIntegrator1d,
            state_dim: 2,
            action_dim: 1,
            action_low: -1.0,
            action_high: 1.0,
            dt: 0.05,
            horizon: 100,
            init_pos_range: 1.0,
            init_vel_range: 0.2,
        }
    }

    pub fn for_kind(kind: EnvKind) -> Self {
        match kind {
            EnvKind::PointMass2d => Self::pointmass2d(),
            EnvKind::DoubleIntegrator1d => Self::double_integrator1d(),
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        Ok(Self::for_kind(EnvKind::parse(name)?))
    }

    pub fn name(&self) -> &'static str {
        self.kind.name()
    }

    pub fn pair_dim(&self) -> usize {
        self.state_dim + self.action_dim
    }
}

/// Draw an initial state from the spec's bounded box: positions uniform
/// in `[-pos_range, pos_range]`, velocities in `[-vel_range, vel_range]`.
pub fn initial_state<R: Rng>(spec: &EnvSpec, rng: &mut R) -> Vec<f64> {
    let half = spec.state_dim / 2;
    (0..spec.state_dim)
        .map(|i| {
            let r = if i < half {
                spec.init_pos_range
            } else {
                spec.init_vel_range
            };
            rng.random_range(-r..=r)
        })
        .collect()
}

fn clip_action(spec: &EnvSpec, action: &[f64]) -> Vec<f64> {
    action
        .iter()
        .map(|a| a.clamp(spec.action_low, spec.action_high))
        .collect()
}

/// Pure one-step dynamics. The state layout is `(positions, velocities)`
/// with explicit-Euler updates `x' = x + v dt`, `v' = v + a dt`. The
/// reward penalizes the current state and clipped action:
/// `-(|pos|^2 + 0.1 |vel|^2 + 0.01 |a|^2)`. Episodes end at the horizon,
/// signaled through the step counter `t` (0-based).
pub fn step(
    spec: &EnvSpec,
    state: &[f64],
    action: &[f64],
    t: usize,
) -> Result<(Vec<f64>, f64, bool)> {
    if state.len() != spec.state_dim {
        return Err(Error::Dim {
            what: "env state",
            expected: spec.state_dim,
            got: state.len(),
        });
    }
    if action.len() != spec.action_dim {
        return Err(Error::Dim {
            what: "env action",
            expected: spec.action_dim,
            got: action.len(),
        });
    }
    if state.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("env state".into()));
    }
    let a = clip_action(spec, action);
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("env action".into()));
    }
    let half = spec.state_dim / 2;
    let (pos, vel) = state.split_at(half);
    let mut next = Vec::with_capacity(spec.state_dim);
    for i in 0..half {
        next.push(pos[i] + vel[i] * spec.dt);
    }
    for i in 0..half {
        next.push(vel[i] + a[i] * spec.dt);
    }
    let pos_sq: f64 = pos.iter().map(|v| v * v).sum();
    let vel_sq: f64 = vel.iter().map(|v| v * v).sum();
    let act_sq: f64 = a.iter().map(|v| v * v).sum();
    let reward = -(pos_sq + 0.1 * vel_sq + 0.01 * act_sq);
    let done = t + 1 >= spec.horizon;
    Ok((next, reward, done))
}

/// PD law `a = clip(-kp pos - kd vel)`.
pub fn scripted_expert_action(spec: &EnvSpec, state: &[f64], kp: f64, kd: f64) -> Vec<f64> {
    let half = spec.state_dim / 2;
    let (pos, vel) = state.split_at(half);
    let raw: Vec<f64> = pos
        .iter()
        .zip(vel)
        .map(|(p, v)| -kp * p - kd * v)
        .collect();
    clip_action(spec, &raw)
}

/// Something that maps states to actions during a rollout.
pub trait Controller {
    fn act(&mut self, spec: &EnvSpec, state: &[f64]) -> Vec<f64>;
    fn id(&self) -> String;
}

/// Scripted PD expert with fixed gains.
#[derive(Debug, Clone)]
pub struct ScriptedExpert {
    pub kp: f64,
    pub kd: f64,
}

impl Default for ScriptedExpert {
    fn default() -> Self {
        ScriptedExpert { kp: 1.2, kd: 1.8 }
    }
}

impl Controller for ScriptedExpert {
    fn act(&mut self, spec: &EnvSpec, state: &[f64]) -> Vec<f64> {
        scripted_expert_action(spec, state, self.kp, self.kd)
    }

    fn id(&self) -> String {
        "scripted-pd".into()
    }
}

/// Uniform random actions from a seeded stream.
pub struct RandomPolicy<R: Rng> {
    rng: R,
}

impl<R: Rng> RandomPolicy<R> {
    pub fn new(rng: R) -> Self {
        RandomPolicy { rng }
    }
}

impl<R: Rng> Controller for RandomPolicy<R> {
    fn act(&mut self, spec: &EnvSpec, _state: &[f64]) -> Vec<f64> {
        (0..spec.action_dim)
            .map(|_| self.rng.random_range(spec.action_low..=spec.action_high))
            .collect()
    }

    fn id(&self) -> String {
        "random".into()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryMeta {
    pub env: String,
    pub seed: u64,
    pub controller: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub transitions: Vec<Transition>,
    /// Sum of true per-step rewards.
    pub ret: f64,
    pub meta: TrajectoryMeta,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// Concatenated (state, action) rows.
    pub fn pairs(&self) -> Vec<Vec<f64>> {
        self.transitions
            .iter()
            .map(|t| {
                let mut p = t.state.clone();
                p.extend_from_slice(&t.action);
                p
            })
            .collect()
    }
}

/// One full-horizon episode from a sampled initial state.
pub fn rollout<R: Rng>(
    spec: &EnvSpec,
    controller: &mut dyn Controller,
    seed_meta: u64,
    rng: &mut R,
) -> Result<Trajectory> {
    let mut state = initial_state(spec, rng);
    let mut transitions = Vec::with_capacity(spec.horizon);
    let mut ret = 0.0;
    for t in 0..spec.horizon {
        let action = controller.act(spec, &state);
        if action.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("controller action at step {t}")));
        }
        let clipped = clip_action(spec, &action);
        let (next, reward, done) = step(spec, &state, &clipped, t)?;
        ret += reward;
        transitions.push(Transition {
            state: state.clone(),
            action: clipped,
            next_state: next.clone(),
            reward,
            done,
        });
        state = next;
    }
    Ok(Trajectory {
        transitions,
        ret,
        meta: TrajectoryMeta {
            env: spec.name().to_string(),
            seed: seed_meta,
            controller: controller.id(),
        },
    })
}

/// Collect `n` full-horizon episodes, deterministically seeded.
pub fn collect_trajectories(
    spec: &EnvSpec,
    controller: &mut dyn Controller,
    n: usize,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    use rand::SeedableRng;
    if n == 0 {
        return Err(Error::Config("need at least one trajectory".into()));
    }
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
    (0..n).map(|_| rollout(spec, controller, seed, &mut rng)).collect()
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Write trajectories in the exchange format: one header line
/// `sd2ail-trajectories,version,env,state_dim,action_dim,horizon,count`,
/// then per trajectory a `#traj,...` metadata line followed by one CSV
/// record per transition with columns
/// `state..., action..., next_state..., reward, done`. Floats carry 17
/// significant digits so parsing is bit-exact.
pub fn write_trajectories<W: Write>(
    w: &mut W,
    spec: &EnvSpec,
    trajectories: &[Trajectory],
) -> Result<()> {
    writeln!(
        w,
        "{},{},{},{},{},{},{}",
        TRAJECTORY_FORMAT,
        TRAJECTORY_VERSION,
        spec.name(),
        spec.state_dim,
        spec.action_dim,
        spec.horizon,
        trajectories.len()
    )?;
    for (idx, traj) in trajectories.iter().enumerate() {
        if traj.transitions.len() > spec.horizon {
            return Err(Error::Config(format!(
                "trajectory {idx} longer than the horizon"
            )));
        }
        writeln!(
            w,
            "#traj,{},{},{},{},{}",
            idx,
            traj.meta.seed,
            traj.meta.controller,
            traj.transitions.len(),
            fmt_f64(traj.ret)
        )?;
        for tr in &traj.transitions {
            let mut cols: Vec<String> = Vec::with_capacity(spec.pair_dim() + spec.state_dim + 2);
            cols.extend(tr.state.iter().map(|v| fmt_f64(*v)));
            cols.extend(tr.action.iter().map(|v| fmt_f64(*v)));
            cols.extend(tr.next_state.iter().map(|v| fmt_f64(*v)));
            cols.push(fmt_f64(tr.reward));
            cols.push(if tr.done { "1".into() } else { "0".into() });
            writeln!(w, "{}", cols.join(","))?;
        }
    }
    Ok(())
}

pub fn save_trajectories(
    path: &Path,
    spec: &EnvSpec,
    trajectories: &[Trajectory],
) -> Result<()> {
    let mut buf = Vec::new();
    write_trajectories(&mut buf, spec, trajectories)?;
    std::fs::write(path, buf)?;
    Ok(())
}

/// Parsed trajectory file: the environment header plus the trajectories.
#[derive(Debug, Clone)]
pub struct TrajectoryFile {
    pub env: String,
    pub state_dim: usize,
    pub action_dim: usize,
    pub horizon: usize,
    pub trajectories: Vec<Trajectory>,
}

pub fn parse_trajectories(text: &str) -> Result<TrajectoryFile> {
    let mut cursor = LineCursor::new(text);
    let (ln, header) = cursor.next_line("header")?;
    let fields: Vec<&str> = header.split(',').collect();
    if fields.len() != 7 || fields[0] != TRAJECTORY_FORMAT {
        return Err(Error::parse(ln, "expected trajectory header"));
    }
    let version: u32 = fields[1]
        .parse()
        .map_err(|e| Error::parse(ln, format!("bad version: {e}")))?;
    if version != TRAJECTORY_VERSION {
        return Err(Error::parse(ln, format!("unsupported version {version}")));
    }
    let env = fields[2].to_string();
    let parse_usize = |ln: usize, s: &str, what: &str| -> Result<usize> {
        s.parse()
            .map_err(|e| Error::parse(ln, format!("bad {what}: {e}")))
    };
    let state_dim = parse_usize(ln, fields[3], "state_dim")?;
    let action_dim = parse_usize(ln, fields[4], "action_dim")?;
    let horizon = parse_usize(ln, fields[5], "horizon")?;
    let count = parse_usize(ln, fields[6], "count")?;
    if state_dim == 0
        || action_dim == 0
        || state_dim > 100_000
        || action_dim > 100_000
        || horizon > 10_000_000
        || count > 1_000_000
    {
        return Err(Error::parse(ln, "implausible header dimensions"));
    }
    let row_cols = 2 * state_dim + action_dim + 2;

    let mut trajectories = Vec::with_capacity(count);
    for _ in 0..count {
        let (ln, meta_line) = cursor.next_line("#traj metadata")?;
        let m: Vec<&str> = meta_line.split(',').collect();
        if m.len() != 6 || m[0] != "#traj" {
            return Err(Error::parse(ln, "expected `#traj,...` metadata line"));
        }
        let seed: u64 = m[2]
            .parse()
            .map_err(|e| Error::parse(ln, format!("bad seed: {e}")))?;
        let controller = m[3].to_string();
        let len = parse_usize(ln, m[4], "trajectory length")?;
        if len > horizon {
            return Err(Error::parse(ln, "trajectory longer than horizon"));
        }
        let ret: f64 = m[5]
            .parse()
            .map_err(|e| Error::parse(ln, format!("bad return: {e}")))?;

        let mut transitions = Vec::with_capacity(len);
        for _ in 0..len {
            let (ln, line) = cursor.next_line("transition record")?;
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != row_cols {
                return Err(Error::parse(
                    ln,
                    format!("expected {row_cols} columns, got {}", cols.len()),
                ));
            }
            let mut values = Vec::with_capacity(row_cols - 1);
            for c in &cols[..row_cols - 1] {
                values.push(
                    c.parse::<f64>()
                        .map_err(|e| Error::parse(ln, format!("bad float `{c}`: {e}")))?,
                );
            }
            let done = match cols[row_cols - 1] {
                "0" => false,
                "1" => true,
                other => {
                    return Err(Error::parse(ln, format!("bad done flag `{other}`")));
                }
            };
            let state = values[..state_dim].to_vec();
            let action = values[state_dim..state_dim + action_dim].to_vec();
            let next_state =
                values[state_dim + action_dim..2 * state_dim + action_dim].to_vec();
            let reward = values[2 * state_dim + action_dim];
            transitions.push(Transition {
                state,
                action,
                next_state,
                reward,
                done,
            });
        }
        trajectories.push(Trajectory {
            transitions,
            ret,
            meta: TrajectoryMeta {
                env: env.clone(),
                seed,
                controller,
            },
        });
    }
    cursor.expect_end()?;
    Ok(TrajectoryFile {
        env,
        state_dim,
        action_dim,
        horizon,
        trajectories,
    })
}

pub fn load_trajectories(path: &Path) -> Result<TrajectoryFile> {
    let text = std::fs::read_to_string(path)?;
    parse_trajectories(&text)
}
