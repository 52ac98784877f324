//! Browser demo: every export takes plain numbers/strings and returns a
//! JSON string, so the page needs no bindings beyond `wasm-bindgen`.

use mpcg::cgsolver::{cg_solve, fixed_policy, CgConfig};
use mpcg::experiment::relative_error;
use mpcg::precision::{EmulationMode, Precision};
use mpcg::precond::{build_preconditioner, IlutParams};
use mpcg::problems::{gen_poisson2d, PoissonSpec};
use mpcg::rlagent::{cost_setting_c1, cost_setting_c2, train, MdpConfig, RewardConfig, TrainConfig, TrainProblem};
use mpcg::sparsela::{direct_solve, CsrMatrix};
use serde::Serialize;
use wasm_bindgen::prelude::*;

const MAX_GRID: usize = 60;

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("demo payloads serialize")
}

fn error_json(msg: impl Into<String>) -> String {
    to_json(&serde_json::json!({ "error": msg.into() }))
}

#[derive(Serialize)]
struct Grid {
    format: Precision,
    u: f64,
    x_min: f64,
    x_max: f64,
    points: Vec<(f64, f64)>,
}

/// `fl(x)` sampled at `samples` evenly spaced points of `[lo, hi]`.
#[wasm_bindgen]
pub fn rounding_grid(format: &str, lo: f64, hi: f64, samples: usize) -> String {
    let Ok(p) = format.parse::<Precision>() else {
        return error_json(format!("unknown format `{format}`"));
    };
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return error_json("need finite lo < hi");
    }
    let f = p.format();
    let n = samples.clamp(2, 5000);
    let points = (0..n)
        .map(|i| {
            let x = lo + (hi - lo) * i as f64 / (n - 1) as f64;
            (x, f.round(x))
        })
        .collect();
    to_json(&Grid { format: p, u: f.unit_roundoff(), x_min: f.x_min(), x_max: f.x_max(), points })
}

struct Poisson {
    a: CsrMatrix,
    b: Vec<f64>,
    x_true: Vec<f64>,
}

fn poisson(nx: usize, seed: u64) -> Result<Poisson, String> {
    let nx = nx.clamp(2, MAX_GRID);
    let (a, b, _) = gen_poisson2d(&PoissonSpec { nx, ny: nx, seed, sampling: Default::default() });
    let x_true = direct_solve(&a, &b).map_err(|e| e.to_string())?;
    Ok(Poisson { a, b, x_true })
}

#[derive(Serialize)]
struct Curve {
    format: Precision,
    status: &'static str,
    rel_error: f64,
    rho: Vec<f64>,
}

/// Residual histories of fixed-precision CG for each experiment format.
#[wasm_bindgen]
pub fn residual_curves(nx: usize, seed: u64, mode: &str) -> String {
    let Ok(mode) = mode.parse::<EmulationMode>() else {
        return error_json(format!("unknown mode `{mode}`"));
    };
    let prob = match poisson(nx, seed) {
        Ok(p) => p,
        Err(e) => return error_json(e),
    };
    let Ok((m, _)) = build_preconditioner(&prob.a, &IlutParams::default()) else {
        return error_json("preconditioner failed");
    };
    let cfg = CgConfig { emulation_mode: mode, max_iters: 300, ..CgConfig::default() };
    let curves: Vec<Curve> = Precision::EXPERIMENT_SET
        .iter()
        .map(|&p| {
            let res = cg_solve(&prob.a, &prob.b, &m, fixed_policy(p), &cfg);
            let mut rho: Vec<f64> = res.trace.iter().map(|r| r.rho).collect();
            rho.push(res.final_rho);
            Curve { format: p, status: res.status.as_str(), rel_error: relative_error(&res.x, &prob.x_true), rho }
        })
        .collect();
    to_json(&curves)
}

#[derive(Serialize)]
struct Step {
    k: usize,
    rho: f64,
    action: [Precision; 4],
}

#[derive(Serialize)]
struct TrainedSolve {
    episodes: usize,
    status: &'static str,
    rel_error: f64,
    fp64_rel_error: f64,
    steps: Vec<Step>,
}

/// Train on one Poisson system, then solve a second one greedily.
#[wasm_bindgen]
pub fn train_and_solve(nx: usize, seed: u64, episodes: usize, cost_setting: &str) -> String {
    let costs = match cost_setting {
        "c1" | "C1" => cost_setting_c1(),
        "c2" | "C2" => cost_setting_c2(),
        other => return error_json(format!("unknown cost setting `{other}`")),
    };
    let (train_p, test_p) = match (poisson(nx, seed), poisson(nx, seed.wrapping_add(1))) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return error_json(e),
    };
    let params = IlutParams::default();
    let (Ok((m_train, _)), Ok((m_test, _))) =
        (build_preconditioner(&train_p.a, &params), build_preconditioner(&test_p.a, &params))
    else {
        return error_json("preconditioner failed");
    };
    let cg = CgConfig { max_iters: 300, ..CgConfig::default() };
    let mdp = MdpConfig { t_max: cg.max_iters, ..MdpConfig::default() };
    let tcfg = TrainConfig { episodes: episodes.clamp(1, 500), seed, ..TrainConfig::default() };
    let problems = [TrainProblem { a: &train_p.a, b: &train_p.b, m: &m_train }];
    let q = train(&problems, &mdp, &RewardConfig::with_costs(costs.clone()), &tcfg, &cg, |_| {});

    let res = cg_solve(&test_p.a, &test_p.b, &m_test, q.greedy(&costs), &cg);
    let base = cg_solve(&test_p.a, &test_p.b, &m_test, fixed_policy(Precision::Fp64), &cg);
    to_json(&TrainedSolve {
        episodes: q.trained_episodes,
        status: res.status.as_str(),
        rel_error: relative_error(&res.x, &test_p.x_true),
        fp64_rel_error: relative_error(&base.x, &test_p.x_true),
        steps: res.trace.iter().map(|r| Step { k: r.k, rho: r.rho, action: r.action.as_array() }).collect(),
    })
}
