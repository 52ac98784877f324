//! Tabular Q-learning over the solver's precision choices.
//!
//! The state is a pair of bins: the iteration index divided evenly into
//! `b` bins over `T_max`, and `-log10 ρ` divided into `r` bins down to
//! `ε_min`. Each of the four controlled operations has its own Q-table
//! over `(state, precision)`; all four are updated with the shared reward.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use log::debug;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cgsolver::{CgConfig, CgState, PrecisionAction, PrecisionPolicy, StepOutcome};
use crate::precision::Precision;
use crate::precond::IlutFactors;
use crate::sparsela::CsrMatrix;

pub const NUM_OPS: usize = 4;
pub const OP_NAMES: [&str; NUM_OPS] = ["matvec", "precond", "dot_nu", "dot_sigma"];
pub const POLICY_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MdpConfig {
    /// Number of iteration bins.
    pub iter_bins: usize,
    /// Number of residual bins.
    pub residual_bins: usize,
    pub t_max: usize,
    pub eps_min: f64,
}

impl Default for MdpConfig {
    fn default() -> Self {
        Self { iter_bins: 10, residual_bins: 10, t_max: 1000, eps_min: 1e-16 }
    }
}

impl MdpConfig {
    pub fn num_states(&self) -> usize {
        self.iter_bins * self.residual_bins
    }

    /// Width of one residual bin in decades.
    pub fn delta(&self) -> f64 {
        -self.eps_min.log10() / self.residual_bins as f64
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.iter_bins == 0 || self.residual_bins == 0 || self.t_max == 0 {
            return Err("iter_bins, residual_bins and t_max must be positive".into());
        }
        if !(self.eps_min > 0.0 && self.eps_min < 1.0) {
            return Err(format!("eps_min must lie in (0, 1), got {}", self.eps_min));
        }
        Ok(())
    }
}

/// Map `(k, ρ)` to the flat state index `i·r + j`.
pub fn discretize(k: usize, rho: f64, mdp: &MdpConfig) -> usize {
    let width = mdp.t_max.div_ceil(mdp.iter_bins);
    let i = (k / width).min(mdp.iter_bins - 1);
    let decades = -rho.max(mdp.eps_min).log10();
    // ρ ≥ 1 gives a nonpositive decade count, which belongs to bin 0
    let j = ((decades / mdp.delta()).floor().max(0.0) as usize).min(mdp.residual_bins - 1);
    i * mdp.residual_bins + j
}

/// Cost per precision format.
pub type CostMap = BTreeMap<Precision, f64>;

/// `c(bf16)=0.6, c(fp16)=0.8, c(tf32)=0.8, c(fp32)=1.0, c(fp64)=2.0`.
pub fn cost_setting_c1() -> CostMap {
    CostMap::from([
        (Precision::Bf16, 0.6),
        (Precision::Fp16, 0.8),
        (Precision::Tf32, 0.8),
        (Precision::Fp32, 1.0),
        (Precision::Fp64, 2.0),
    ])
}

/// `c(bf16)=0.4, c(fp16)=0.5, c(tf32)=0.5, c(fp32)=1.5, c(fp64)=3.0`.
pub fn cost_setting_c2() -> CostMap {
    CostMap::from([
        (Precision::Bf16, 0.4),
        (Precision::Fp16, 0.5),
        (Precision::Tf32, 0.5),
        (Precision::Fp32, 1.5),
        (Precision::Fp64, 3.0),
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub tau: f64,
    pub eps_min: f64,
    pub cost: CostMap,
}

impl RewardConfig {
    pub fn with_costs(cost: CostMap) -> Self {
        Self { w1: 1.0, w2: 0.1, w3: 10.0, tau: 1e-6, eps_min: 1e-16, cost }
    }

    pub fn cost_of(&self, p: Precision) -> f64 {
        self.cost.get(&p).copied().unwrap_or(0.0)
    }

    pub fn validate(&self, set: &[Precision]) -> Result<(), String> {
        if self.w1 < 0.0 || self.w2 < 0.0 || self.w3 < 0.0 {
            return Err("reward weights must be nonnegative".into());
        }
        for p in set {
            match self.cost.get(p) {
                Some(&c) if c > 0.0 => {}
                _ => return Err(format!("no positive cost for {p}")),
            }
        }
        Ok(())
    }
}

/// `w1·min(-log10 max(ρ', ε_min), -log10 ε_min) - w2·Σ c(p_j) + w3·[ρ' < τ]`.
pub fn reward(rho_next: f64, action: &PrecisionAction, rcfg: &RewardConfig) -> f64 {
    let cap = -rcfg.eps_min.log10();
    let accuracy = (-rho_next.max(rcfg.eps_min).log10()).min(cap);
    let cost: f64 = action.as_array().iter().map(|&p| rcfg.cost_of(p)).sum();
    let bonus = if rho_next < rcfg.tau { 1.0 } else { 0.0 };
    rcfg.w1 * accuracy - rcfg.w2 * cost + rcfg.w3 * bonus
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Episodes per training problem.
    pub episodes: usize,
    pub learning_rate: f64,
    pub discount: f64,
    pub eps0: f64,
    pub eps_floor: f64,
    #[serde(skip)]
    pub seed: u64,
    /// Cycle through the problems each round instead of running all
    /// episodes of one problem before the next.
    #[serde(default)]
    pub interleave: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 200,
            learning_rate: 0.1,
            discount: 0.9,
            eps0: 1.0,
            eps_floor: 0.1,
            seed: 0,
            interleave: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err("learning_rate must lie in (0, 1]".into());
        }
        if !(self.discount >= 0.0 && self.discount < 1.0) {
            return Err("discount must lie in [0, 1)".into());
        }
        if !(self.eps0 > 0.0 && self.eps0 <= 1.0) {
            return Err("eps0 must lie in (0, 1]".into());
        }
        if !(self.eps_floor >= 0.0 && self.eps_floor <= self.eps0) {
            return Err("eps_floor must lie in [0, eps0]".into());
        }
        Ok(())
    }
}

/// `max(ε₀(1 - e/E), ε_floor)` where `E` is the total episode count.
pub fn epsilon_schedule(e: usize, total: usize, tcfg: &TrainConfig) -> f64 {
    let frac = if total == 0 { 1.0 } else { e as f64 / total as f64 };
    (tcfg.eps0 * (1.0 - frac)).max(tcfg.eps_floor)
}

/// Four Q-tables of shape `states × |P|`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct QPolicy {
    tables: [Vec<f64>; NUM_OPS],
    pub mdp: MdpConfig,
    pub precision_set: Vec<Precision>,
    pub trained_episodes: usize,
}

impl QPolicy {
    pub fn zeros(mdp: MdpConfig, precision_set: Vec<Precision>) -> Self {
        let len = mdp.num_states() * precision_set.len();
        Self {
            tables: std::array::from_fn(|_| vec![0.0; len]),
            mdp,
            precision_set,
            trained_episodes: 0,
        }
    }

    pub fn num_actions(&self) -> usize {
        self.precision_set.len()
    }

    pub fn q_row(&self, op: usize, s: usize) -> &[f64] {
        let na = self.num_actions();
        &self.tables[op][s * na..(s + 1) * na]
    }

    pub fn q_row_mut(&mut self, op: usize, s: usize) -> &mut [f64] {
        let na = self.num_actions();
        &mut self.tables[op][s * na..(s + 1) * na]
    }

    pub fn q(&self, op: usize, s: usize, p: Precision) -> f64 {
        self.q_row(op, s)[self.index_of(p)]
    }

    pub fn table(&self, op: usize) -> &[f64] {
        &self.tables[op]
    }

    pub fn index_of(&self, p: Precision) -> usize {
        self.precision_set
            .iter()
            .position(|&x| x == p)
            .unwrap_or_else(|| panic!("{p} is not in the precision set"))
    }

    /// Greedy precision for one operation: highest Q, ties broken by lowest
    /// cost, then lowest index in the precision set.
    pub fn argmax(&self, op: usize, s: usize, costs: &CostMap) -> Precision {
        let row = self.q_row(op, s);
        let cost = |p: Precision| costs.get(&p).copied().unwrap_or(0.0);
        let mut best = 0;
        for a in 1..row.len() {
            let better = row[a] > row[best]
                || (row[a] == row[best]
                    && cost(self.precision_set[a]) < cost(self.precision_set[best]));
            if better {
                best = a;
            }
        }
        self.precision_set[best]
    }

    pub fn greedy_action(&self, s: usize, costs: &CostMap) -> PrecisionAction {
        PrecisionAction::from_array(std::array::from_fn(|op| self.argmax(op, s, costs)))
    }

    /// Inference-time policy: greedy selection at the discretized state.
    pub fn greedy<'a>(&'a self, costs: &'a CostMap) -> GreedyPolicy<'a> {
        GreedyPolicy { q: self, costs }
    }

    pub fn max_abs(&self) -> f64 {
        self.tables.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    fn checksum(&self) -> String {
        let mut h = Sha256::new();
        h.update(POLICY_FORMAT_VERSION.to_le_bytes());
        for v in [self.mdp.iter_bins, self.mdp.residual_bins, self.mdp.t_max, self.trained_episodes] {
            h.update((v as u64).to_le_bytes());
        }
        h.update(self.mdp.eps_min.to_bits().to_le_bytes());
        for p in &self.precision_set {
            h.update(p.as_str().as_bytes());
            h.update([0u8]);
        }
        for t in &self.tables {
            for v in t {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub struct GreedyPolicy<'a> {
    q: &'a QPolicy,
    costs: &'a CostMap,
}

impl PrecisionPolicy for GreedyPolicy<'_> {
    fn select(&mut self, k: usize, rho: f64) -> PrecisionAction {
        self.q.greedy_action(discretize(k, rho, &self.q.mdp), self.costs)
    }
}

/// ε-greedy selection, independently per operation.
pub fn select_action<R: Rng>(
    s: usize,
    q: &QPolicy,
    epsilon: f64,
    costs: &CostMap,
    rng: &mut R,
) -> PrecisionAction {
    PrecisionAction::from_array(std::array::from_fn(|op| {
        if rng.random::<f64>() < epsilon {
            q.precision_set[rng.random_range(0..q.num_actions())]
        } else {
            q.argmax(op, s, costs)
        }
    }))
}

/// One Q-learning update of all four tables. `s_next = None` is terminal.
pub fn q_update(
    q: &mut QPolicy,
    s: usize,
    action: &PrecisionAction,
    r: f64,
    s_next: Option<usize>,
    alpha: f64,
    gamma: f64,
) {
    for (op, &p) in action.as_array().iter().enumerate() {
        let future = s_next.map_or(0.0, |sn| {
            gamma * q.q_row(op, sn).iter().copied().fold(f64::NEG_INFINITY, f64::max)
        });
        let a = q.index_of(p);
        let cell = &mut q.q_row_mut(op, s)[a];
        *cell += alpha * (r + future - *cell);
    }
}

/// What one environment step produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub reward: f64,
    /// `(k, ρ)` after the step.
    pub next: (usize, f64),
    pub terminal: bool,
}

/// Episodic environment the agent interacts with.
pub trait Environment {
    /// Start a new episode and return the initial `(k, ρ)`; `action0` is the
    /// action chosen at that initial state (CG uses its `p2` for `z₀`).
    fn reset(&mut self, action0: &PrecisionAction) -> Option<(usize, f64)>;
    fn step(&mut self, action: &PrecisionAction) -> Transition;
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeLog {
    pub episode: usize,
    pub problem: usize,
    pub epsilon: f64,
    pub iterations: usize,
    pub final_rho: f64,
    pub total_reward: f64,
    pub terminal: bool,
}

/// Run one ε-greedy episode of at most `t_max` steps, updating `q`.
#[allow(clippy::too_many_arguments)]
pub fn run_episode<E: Environment, R: Rng>(
    q: &mut QPolicy,
    env: &mut E,
    epsilon: f64,
    costs: &CostMap,
    alpha: f64,
    gamma: f64,
    rng: &mut R,
) -> (usize, f64, f64, bool) {
    let mdp = q.mdp;
    let s0 = discretize(0, 1.0, &mdp);
    let mut action = select_action(s0, q, epsilon, costs, rng);
    let Some(mut state) = env.reset(&action) else {
        return (0, f64::NAN, 0.0, true);
    };
    let mut total = 0.0;
    let mut steps = 0;
    let mut rho = state.1;
    while steps < mdp.t_max {
        let s = discretize(state.0, state.1, &mdp);
        if steps > 0 {
            action = select_action(s, q, epsilon, costs, rng);
        }
        let tr = env.step(&action);
        steps += 1;
        total += tr.reward;
        if tr.terminal {
            q_update(q, s, &action, tr.reward, None, alpha, gamma);
            return (steps, tr.next.1, total, true);
        }
        let s_next = discretize(tr.next.0, tr.next.1, &mdp);
        q_update(q, s, &action, tr.reward, Some(s_next), alpha, gamma);
        state = tr.next;
        rho = state.1;
    }
    (steps, rho, total, false)
}

/// A training system: matrix, right-hand side and its preconditioner.
pub struct TrainProblem<'a> {
    pub a: &'a CsrMatrix,
    pub b: &'a [f64],
    pub m: &'a IlutFactors,
}

/// CG as an environment. Converged and breakdown steps are terminal; a
/// breakdown step is rewarded at the last finite residual ratio.
pub struct CgEnvironment<'a> {
    problem: &'a TrainProblem<'a>,
    cg: &'a CgConfig,
    rcfg: &'a RewardConfig,
    state: Option<CgState<'a>>,
}

impl<'a> CgEnvironment<'a> {
    pub fn new(problem: &'a TrainProblem<'a>, cg: &'a CgConfig, rcfg: &'a RewardConfig) -> Self {
        Self { problem, cg, rcfg, state: None }
    }
}

impl Environment for CgEnvironment<'_> {
    fn reset(&mut self, action0: &PrecisionAction) -> Option<(usize, f64)> {
        let st = CgState::new(self.problem.a, self.problem.b, self.problem.m, action0.p2, self.cg);
        if st.is_broken() {
            self.state = None;
            return None;
        }
        let start = (st.k(), st.rho());
        self.state = Some(st);
        Some(start)
    }

    fn step(&mut self, action: &PrecisionAction) -> Transition {
        let st = self.state.as_mut().expect("step before reset");
        let prev_rho = st.rho();
        let rep = st.step(action);
        let k = st.k();
        match rep.outcome {
            StepOutcome::Continue => Transition {
                reward: reward(rep.record_rho_next, action, self.rcfg),
                next: (k, rep.record_rho_next),
                terminal: false,
            },
            StepOutcome::Converged => Transition {
                reward: reward(rep.record_rho_next, action, self.rcfg),
                next: (k, rep.record_rho_next),
                terminal: true,
            },
            StepOutcome::Breakdown => {
                let rho = if rep.record_rho_next.is_finite() { rep.record_rho_next } else { prev_rho };
                Transition { reward: reward(rho, action, self.rcfg), next: (k, rho), terminal: true }
            }
        }
    }
}

/// Generic tabular Q-learning over several environments.
///
/// Episodes run `tcfg.episodes` times per environment, either environment
/// by environment or interleaved; ε decays over the global episode counter.
pub fn train_environments<E: Environment>(
    envs: &mut [E],
    mdp: MdpConfig,
    precision_set: Vec<Precision>,
    costs: &CostMap,
    tcfg: &TrainConfig,
    mut on_episode: impl FnMut(&EpisodeLog),
) -> QPolicy {
    let mut q = QPolicy::zeros(mdp, precision_set);
    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    let total = envs.len() * tcfg.episodes;
    let schedule: Vec<usize> = if tcfg.interleave {
        (0..total).map(|e| e % envs.len()).collect()
    } else {
        (0..total).map(|e| e / tcfg.episodes.max(1)).collect()
    };
    for (e, &idx) in schedule.iter().enumerate() {
        let epsilon = epsilon_schedule(e, total, tcfg);
        let (iterations, final_rho, total_reward, terminal) = run_episode(
            &mut q,
            &mut envs[idx],
            epsilon,
            costs,
            tcfg.learning_rate,
            tcfg.discount,
            &mut rng,
        );
        q.trained_episodes += 1;
        let log = EpisodeLog { episode: e, problem: idx, epsilon, iterations, final_rho, total_reward, terminal };
        debug!("episode {e}: problem {idx}, {iterations} its, rho {final_rho:e}");
        on_episode(&log);
    }
    q
}

/// Train the four Q-tables on CG runs over `problems`.
pub fn train(
    problems: &[TrainProblem<'_>],
    mdp: &MdpConfig,
    rcfg: &RewardConfig,
    tcfg: &TrainConfig,
    cg: &CgConfig,
    on_episode: impl FnMut(&EpisodeLog),
) -> QPolicy {
    let cg = CgConfig { max_iters: mdp.t_max, ..cg.clone() };
    let rcfg = RewardConfig { tau: cg.tol, ..rcfg.clone() };
    let mut envs: Vec<CgEnvironment<'_>> =
        problems.iter().map(|p| CgEnvironment::new(p, &cg, &rcfg)).collect();
    train_environments(&mut envs, *mdp, cg.precision_set.clone(), &rcfg.cost, tcfg, on_episode)
}

#[derive(Debug, Error)]
pub enum PolicyFileError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("policy format mismatch: {0}")]
    FormatVersionMismatch(String),
    #[error("corrupt policy file: {0}")]
    CorruptFile(String),
}

#[derive(Serialize, Deserialize)]
struct PolicyFile {
    version: u32,
    mdp: MdpConfig,
    precision_set: Vec<Precision>,
    tables: BTreeMap<String, Vec<Vec<f64>>>,
    trained_episodes: usize,
    checksum: String,
}

pub fn policy_to_json(q: &QPolicy) -> String {
    let na = q.num_actions();
    let tables = OP_NAMES
        .iter()
        .enumerate()
        .map(|(op, name)| (name.to_string(), q.tables[op].chunks(na).map(<[f64]>::to_vec).collect()))
        .collect();
    let file = PolicyFile {
        version: POLICY_FORMAT_VERSION,
        mdp: q.mdp,
        precision_set: q.precision_set.clone(),
        tables,
        trained_episodes: q.trained_episodes,
        checksum: q.checksum(),
    };
    serde_json::to_string_pretty(&file).expect("policy serializes")
}

pub fn policy_from_json(text: &str) -> Result<QPolicy, PolicyFileError> {
    let file: PolicyFile =
        serde_json::from_str(text).map_err(|e| PolicyFileError::CorruptFile(e.to_string()))?;
    if file.version != POLICY_FORMAT_VERSION {
        return Err(PolicyFileError::FormatVersionMismatch(format!(
            "file version {}, expected {POLICY_FORMAT_VERSION}",
            file.version
        )));
    }
    let states = file.mdp.num_states();
    let na = file.precision_set.len();
    let mut q = QPolicy::zeros(file.mdp, file.precision_set);
    q.trained_episodes = file.trained_episodes;
    for (op, name) in OP_NAMES.iter().enumerate() {
        let rows = file
            .tables
            .get(*name)
            .ok_or_else(|| PolicyFileError::FormatVersionMismatch(format!("missing table `{name}`")))?;
        let cols = rows.first().map_or(0, Vec::len);
        if rows.len() != states || rows.iter().any(|r| r.len() != na) {
            return Err(PolicyFileError::FormatVersionMismatch(format!(
                "table `{name}` has shape {}x{cols}, config expects {states}x{na}",
                rows.len()
            )));
        }
        q.tables[op] = rows.concat();
    }
    if q.tables.iter().flatten().any(|v| !v.is_finite()) {
        return Err(PolicyFileError::CorruptFile("non-finite Q-value".into()));
    }
    if q.checksum() != file.checksum {
        return Err(PolicyFileError::CorruptFile("checksum mismatch".into()));
    }
    Ok(q)
}

impl QPolicy {
    /// Fails with `FormatVersionMismatch` unless the tables were built for
    /// exactly this MDP and precision set.
    pub fn expect_shape(&self, mdp: &MdpConfig, precision_set: &[Precision]) -> Result<(), PolicyFileError> {
        if self.mdp != *mdp || self.precision_set != precision_set {
            return Err(PolicyFileError::FormatVersionMismatch(format!(
                "policy has {}x{} tables over {:?}, expected {}x{} over {:?}",
                self.mdp.num_states(),
                self.num_actions(),
                self.precision_set,
                mdp.num_states(),
                precision_set.len(),
                precision_set
            )));
        }
        Ok(())
    }
}

/// Load a policy and check it against the expected shape.
pub fn load_policy_for(path: &Path, mdp: &MdpConfig, precision_set: &[Precision]) -> Result<QPolicy, PolicyFileError> {
    let q = load_policy(path)?;
    q.expect_shape(mdp, precision_set)?;
    Ok(q)
}

pub fn save_policy(q: &QPolicy, path: &Path) -> Result<(), PolicyFileError> {
    fs::write(path, policy_to_json(q))?;
    Ok(())
}

pub fn load_policy(path: &Path) -> Result<QPolicy, PolicyFileError> {
    policy_from_json(&fs::read_to_string(path)?)
}
