//! Experiment orchestration behind the `gen`, `train` and `bench` commands.
//!
//! A run is fully described by an [`ExperimentConfig`] (read from TOML) and
//! its seed: the train and test sets are regenerated deterministically from
//! the config whenever a command needs them.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cgsolver::{cg_solve, fixed_policy, write_trace_csv, CgConfig, IterationRecord, PrecisionPolicy};
use crate::precision::{EmulationMode, Precision};
use crate::precond::IlutParams;
use crate::problems::{make_problem_set, FamilyScale, ProblemFamily, ProblemInstance, Split};
use crate::report::{EmptyInput, ExperimentReport, MatrixRow};
use crate::rlagent::{
    cost_setting_c1, cost_setting_c2, load_policy_for, save_policy, train, CostMap, EpisodeLog, MdpConfig,
    PolicyFileError, QPolicy, RewardConfig, TrainConfig, TrainProblem,
};
use crate::sparsela::mmio::{save_matrix_market, save_vector, MmError};
use crate::sparsela::norm2_fp64;

pub const RL_SOLVER: &str = "RL";
pub const FP64_SOLVER: &str = "fp64";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("I/O error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Policy(#[from] PolicyFileError),
}

impl ExperimentError {
    /// 1 for configuration problems, 2 for I/O failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) => 1,
            ExperimentError::Io { .. } => 2,
            ExperimentError::Policy(PolicyFileError::Io(_)) => 2,
            ExperimentError::Policy(_) => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io { path: path.to_path_buf(), source }
}

fn mm_err(path: &Path, e: MmError) -> ExperimentError {
    match e {
        MmError::Io(source) => ExperimentError::Io { path: path.to_path_buf(), source },
        other => ExperimentError::Config(other.to_string()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CostSetting {
    C1,
    C2,
    Custom(CostMap),
}

impl CostSetting {
    pub fn costs(&self) -> CostMap {
        match self {
            CostSetting::C1 => cost_setting_c1(),
            CostSetting::C2 => cost_setting_c2(),
            CostSetting::Custom(m) => m.clone(),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            CostSetting::C1 => "C1",
            CostSetting::C2 => "C2",
            CostSetting::Custom(_) => "custom",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ScaleKind {
    #[default]
    Desk,
    Full,
}

impl std::str::FromStr for ScaleKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "desk" => Ok(ScaleKind::Desk),
            "full" => Ok(ScaleKind::Full),
            other => Err(format!("unknown scale `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardWeights {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self { w1: 1.0, w2: 0.1, w3: 10.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MdpSection {
    pub iter_bins: usize,
    pub residual_bins: usize,
    pub eps_min: f64,
}

impl Default for MdpSection {
    fn default() -> Self {
        let d = MdpConfig::default();
        Self { iter_bins: d.iter_bins, residual_bins: d.residual_bins, eps_min: d.eps_min }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchSection {
    /// Number of leading test matrices whose iteration traces are written.
    pub trace_matrices: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self { trace_matrices: 3 }
    }
}

/// Everything needed to reproduce one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub family: ProblemFamily,
    pub n_train: usize,
    pub n_test: usize,
    pub scale: ScaleKind,
    /// Explicit sizes; overrides `scale` when present.
    pub sizes: Option<FamilyScale>,
    pub seed: u64,
    pub cost_setting: CostSetting,
    pub reward: RewardWeights,
    pub cg: CgConfig,
    pub train: TrainConfig,
    pub mdp: MdpSection,
    pub ilut: IlutParams,
    pub bench: BenchSection,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            family: ProblemFamily::Poisson,
            n_train: 10,
            n_test: 100,
            scale: ScaleKind::Desk,
            sizes: None,
            seed: 0,
            cost_setting: CostSetting::C1,
            reward: RewardWeights::default(),
            cg: CgConfig::default(),
            train: TrainConfig::default(),
            mdp: MdpSection::default(),
            ilut: IlutParams::default(),
            bench: BenchSection::default(),
            out: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => {
                ExperimentError::Config(format!("config file {} not found", path.display()))
            }
            _ => ExperimentError::Io { path: path.to_path_buf(), source: e },
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Training settings with the experiment seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: self.seed, ..self.train.clone() }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let cfg_err = |e: String| ExperimentError::Config(e);
        self.cg.validate().map_err(cfg_err)?;
        self.mdp_config().validate().map_err(cfg_err)?;
        self.train_config().validate().map_err(cfg_err)?;
        self.reward_config().validate(&self.cg.precision_set).map_err(cfg_err)?;
        if self.n_train == 0 || self.n_test == 0 {
            return Err(cfg_err("n_train and n_test must be at least 1".into()));
        }
        Ok(())
    }

    pub fn family_scale(&self) -> FamilyScale {
        self.sizes.clone().unwrap_or_else(|| match self.scale {
            ScaleKind::Desk => FamilyScale::desk(),
            ScaleKind::Full => FamilyScale::full(),
        })
    }

    pub fn mdp_config(&self) -> MdpConfig {
        MdpConfig {
            iter_bins: self.mdp.iter_bins,
            residual_bins: self.mdp.residual_bins,
            t_max: self.cg.max_iters,
            eps_min: self.mdp.eps_min,
        }
    }

    pub fn reward_config(&self) -> RewardConfig {
        RewardConfig {
            w1: self.reward.w1,
            w2: self.reward.w2,
            w3: self.reward.w3,
            tau: self.cg.tol,
            eps_min: self.mdp.eps_min,
            cost: self.cost_setting.costs(),
        }
    }

    pub fn problem_set(&self, split: Split) -> Vec<ProblemInstance> {
        let count = match split {
            Split::Train => self.n_train,
            Split::Test => self.n_test,
        };
        make_problem_set(self.family, count, self.seed, split, &self.family_scale(), &self.ilut)
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    family: ProblemFamily,
    seed: u64,
    sizes: FamilyScale,
    ilut: IlutParams,
    instances: Vec<&'a crate::problems::InstanceManifest>,
}

fn create_dir(path: &Path) -> Result<(), ExperimentError> {
    fs::create_dir_all(path).map_err(io_err(path))
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>) -> Result<(), ExperimentError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).map_err(io_err(path))
}

/// Materialize the train and test sets under `out`: per split a directory
/// of `A_XXX.mtx`, `b_XXX.txt` and `xtrue_XXX.txt`, plus `manifest.json`.
pub fn cmd_gen(cfg: &ExperimentConfig, out: &Path) -> Result<PathBuf, ExperimentError> {
    create_dir(out)?;
    let train_set = cfg.problem_set(Split::Train);
    let test_set = cfg.problem_set(Split::Test);
    for (split, set) in [(Split::Train, &train_set), (Split::Test, &test_set)] {
        let dir = out.join(split.as_str());
        create_dir(&dir)?;
        for inst in set {
            let id = inst.manifest.id;
            let mpath = dir.join(format!("A_{id:03}.mtx"));
            save_matrix_market(&inst.a, &mpath).map_err(|e| mm_err(&mpath, e))?;
            let bpath = dir.join(format!("b_{id:03}.txt"));
            save_vector(&inst.b, &bpath).map_err(io_err(&bpath))?;
            let xpath = dir.join(format!("xtrue_{id:03}.txt"));
            save_vector(&inst.x_true, &xpath).map_err(io_err(&xpath))?;
        }
    }
    let manifest = Manifest {
        family: cfg.family,
        seed: cfg.seed,
        sizes: cfg.family_scale(),
        ilut: cfg.ilut,
        instances: train_set.iter().chain(&test_set).map(|i| &i.manifest).collect(),
    };
    let path = out.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(io_err(&path))?;
    Ok(path)
}

/// Train a policy on the configured training set.
pub fn run_training(
    cfg: &ExperimentConfig,
    train_set: &[ProblemInstance],
    on_episode: impl FnMut(&EpisodeLog),
) -> QPolicy {
    let problems: Vec<TrainProblem<'_>> =
        train_set.iter().map(|p| TrainProblem { a: &p.a, b: &p.b, m: &p.m }).collect();
    train(&problems, &cfg.mdp_config(), &cfg.reward_config(), &cfg.train_config(), &cfg.cg, on_episode)
}

/// Train and write the policy plus `training_log.csv`.
pub fn cmd_train(cfg: &ExperimentConfig, out: &Path, policy_path: &Path) -> Result<QPolicy, ExperimentError> {
    create_dir(out)?;
    let train_set = cfg.problem_set(Split::Train);
    if train_set.is_empty() {
        return Err(ExperimentError::Config("no training instance could be generated".into()));
    }
    let log_path = out.join("training_log.csv");
    let file = fs::File::create(&log_path).map_err(io_err(&log_path))?;
    let mut log = BufWriter::new(file);
    let mut io_failure = None;
    let _ = writeln!(log, "episode,problem,epsilon,iterations,final_rho,total_reward,terminal");
    let q = run_training(cfg, &train_set, |e| {
        if let Err(err) = writeln!(
            log,
            "{},{},{:e},{},{:e},{:e},{}",
            e.episode, e.problem, e.epsilon, e.iterations, e.final_rho, e.total_reward, e.terminal
        ) {
            io_failure.get_or_insert(err);
        }
    });
    if let Some(err) = io_failure {
        return Err(ExperimentError::Io { path: log_path, source: err });
    }
    log.flush().map_err(io_err(&log_path))?;
    if let Some(parent) = policy_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    save_policy(&q, policy_path)?;
    info!("trained {} episodes, policy written to {}", q.trained_episodes, policy_path.display());
    Ok(q)
}

pub fn relative_error(x: &[f64], x_true: &[f64]) -> f64 {
    let diff: Vec<f64> = x.iter().zip(x_true).map(|(a, b)| a - b).collect();
    let denom = norm2_fp64(x_true);
    if denom == 0.0 {
        norm2_fp64(&diff)
    } else {
        norm2_fp64(&diff) / denom
    }
}

/// Benchmark output: the report plus the traces of the first matrices.
pub struct BenchOutput {
    pub report: ExperimentReport,
    pub traces: Vec<(usize, String, Vec<IterationRecord>)>,
}

fn solve_row<P: PrecisionPolicy>(
    inst: &ProblemInstance,
    solver: &str,
    policy: P,
    cg: &CgConfig,
) -> (MatrixRow, Vec<IterationRecord>) {
    let res = cg_solve(&inst.a, &inst.b, &inst.m, policy, cg);
    let mut histogram = BTreeMap::new();
    for rec in &res.trace {
        for p in rec.action.as_array() {
            *histogram.entry(p).or_insert(0usize) += 1;
        }
    }
    let row = MatrixRow {
        matrix_id: inst.manifest.id,
        solver: solver.to_string(),
        rel_error: relative_error(&res.x, &inst.x_true),
        iterations: res.iterations,
        status: res.status,
        histogram,
    };
    (row, res.trace)
}

/// Check the policy was trained for the configured MDP and precision set.
pub fn check_policy_compat(cfg: &ExperimentConfig, q: &QPolicy) -> Result<(), ExperimentError> {
    Ok(q.expect_shape(&cfg.mdp_config(), &cfg.cg.precision_set)?)
}

/// Greedy RL-CG and the fp64-CG baseline on every test instance.
pub fn run_bench(
    cfg: &ExperimentConfig,
    q: &QPolicy,
    test_set: &[ProblemInstance],
) -> Result<BenchOutput, ExperimentError> {
    check_policy_compat(cfg, q)?;
    let costs = cfg.cost_setting.costs();
    let mut rows = Vec::with_capacity(2 * test_set.len());
    let mut traces = Vec::new();
    for (idx, inst) in test_set.iter().enumerate() {
        let (rl, rl_trace) = solve_row(inst, RL_SOLVER, q.greedy(&costs), &cfg.cg);
        let (base, base_trace) = solve_row(inst, FP64_SOLVER, fixed_policy(Precision::Fp64), &cfg.cg);
        if idx < cfg.bench.trace_matrices {
            traces.push((inst.manifest.id, RL_SOLVER.to_string(), rl_trace));
            traces.push((inst.manifest.id, FP64_SOLVER.to_string(), base_trace));
        }
        rows.push(rl);
        rows.push(base);
    }
    let label = cfg.cost_setting.label();
    let report = ExperimentReport::from_rows(label, rows)
        .map_err(|EmptyInput| ExperimentError::Config("empty test set".into()))?;
    Ok(BenchOutput { report, traces })
}

#[derive(Serialize)]
struct AggregateFile<'a> {
    setting: &'a str,
    family: ProblemFamily,
    emulation_mode: EmulationMode,
    n_test: usize,
    aggregates: &'a [crate::report::SolverAggregate],
}

/// Write `per_matrix.csv`, `aggregates.csv`, `aggregates.json`,
/// `precision_distribution.csv` and `traces/trace_<solver>_<id>.csv`.
pub fn write_bench_output(cfg: &ExperimentConfig, out: &Path, bench: &BenchOutput) -> Result<(), ExperimentError> {
    create_dir(out)?;
    let rep = &bench.report;
    write_file(&out.join("per_matrix.csv"), |w| rep.write_rows_csv(w))?;
    write_file(&out.join("aggregates.csv"), |w| rep.write_aggregates_csv(w))?;
    write_file(&out.join("precision_distribution.csv"), |w| rep.write_precision_csv(w))?;
    let agg = AggregateFile {
        setting: &rep.label,
        family: cfg.family,
        emulation_mode: cfg.cg.emulation_mode,
        n_test: rep.rows.len() / 2,
        aggregates: &rep.aggregates,
    };
    let path = out.join("aggregates.json");
    let text = serde_json::to_string_pretty(&agg).expect("aggregates serialize");
    fs::write(&path, text + "\n").map_err(io_err(&path))?;
    let tdir = out.join("traces");
    create_dir(&tdir)?;
    for (id, solver, trace) in &bench.traces {
        write_file(&tdir.join(format!("trace_{solver}_{id:03}.csv")), |w| write_trace_csv(trace, w))?;
    }
    Ok(())
}

pub fn cmd_bench(cfg: &ExperimentConfig, policy_path: &Path, out: &Path) -> Result<ExperimentReport, ExperimentError> {
    let q = load_policy_for(policy_path, &cfg.mdp_config(), &cfg.cg.precision_set)?;
    let test_set = cfg.problem_set(Split::Test);
    let bench = run_bench(cfg, &q, &test_set)?;
    write_bench_output(cfg, out, &bench)?;
    Ok(bench.report)
}
