use mpcg::cgsolver::PrecisionAction;
use mpcg::precision::{format_of, EmulationMode, Precision};
use mpcg::rlagent::{cost_setting_c1, cost_setting_c2, discretize, q_update, reward, MdpConfig, QPolicy, RewardConfig};
use mpcg::sparsela::{dot_emulated, dot_fp64};
use proptest::prelude::*;

const REDUCED: [Precision; 5] = [Precision::Q52, Precision::Bf16, Precision::Fp16, Precision::Tf32, Precision::Fp32];

fn any_precision() -> impl Strategy<Value = Precision> {
    prop::sample::select(Precision::ALL.to_vec())
}

fn experiment_precision() -> impl Strategy<Value = Precision> {
    prop::sample::select(Precision::EXPERIMENT_SET.to_vec())
}

/// Finite doubles spread over many binades, including the subnormal and
/// overflow regions of the reduced formats.
fn wide_double() -> impl Strategy<Value = f64> {
    (-1.0f64..1.0, -150i32..150).prop_map(|(m, e)| m * 2f64.powi(e))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn rounding_is_idempotent(x in wide_double(), p in any_precision()) {
        let f = format_of(p);
        let y = f.round(x);
        prop_assert_eq!(f.round(y).to_bits(), y.to_bits());
    }

    #[test]
    fn rounding_is_monotone(a in wide_double(), b in wide_double(), p in any_precision()) {
        let f = format_of(p);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(f.round(lo) <= f.round(hi));
    }

    #[test]
    fn rounding_is_sign_symmetric(x in wide_double(), p in any_precision()) {
        let f = format_of(p);
        prop_assert_eq!(f.round(-x).to_bits(), (-f.round(x)).to_bits());
    }

    #[test]
    fn relative_error_within_unit_roundoff(m in 1.0f64..2.0, s in any::<bool>(), p in any_precision(), e in 0i32..1000) {
        let f = format_of(p);
        // exponent inside the normal range of the format
        let e = f.e_min + e % (f.e_max - f.e_min);
        let x = if s { -m } else { m } * 2f64.powi(e);
        let y = f.round(x);
        if y.is_finite() {
            prop_assert!((y - x).abs() <= f.unit_roundoff() * x.abs());
        } else {
            prop_assert!(x.abs() > f.x_max());
        }
    }

    #[test]
    fn fp64_is_identity(bits in any::<u64>()) {
        let x = f64::from_bits(bits);
        prop_assume!(x.is_finite());
        prop_assert_eq!(format_of(Precision::Fp64).round(x).to_bits(), bits);
    }

    #[test]
    fn coarser_grids_are_subsets(x in wide_double()) {
        // each grid point of the coarser format is representable in the finer one
        let pairs = [
            (Precision::Q52, Precision::Fp16),
            (Precision::Fp16, Precision::Tf32),
            (Precision::Bf16, Precision::Fp32),
            (Precision::Tf32, Precision::Fp32),
            (Precision::Fp32, Precision::Fp64),
        ];
        for (coarse, fine) in pairs {
            let y = format_of(coarse).round(x);
            prop_assert_eq!(format_of(fine).round(y).to_bits(), y.to_bits(), "{} in {}", coarse, fine);
        }
    }

    #[test]
    fn strict_dot_error_is_bounded(
        pairs in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..60),
        p in prop::sample::select(REDUCED.to_vec()),
    ) {
        let f = format_of(p);
        let (u, v): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let n = u.len() as f64;
        let got = dot_emulated(&u, &v, &f, EmulationMode::Strict);
        let exact = dot_fp64(&u, &v);
        let abs_sum: f64 = u.iter().zip(&v).map(|(a, b)| (a * b).abs()).sum();
        let k = (n + 2.0) * f.unit_roundoff();
        prop_assume!(k < 0.5);
        // rounding of operands, products and partial sums, plus underflow
        let bound = k / (1.0 - k) * abs_sum + 2.0 * (n + 1.0) * f.x_min() + 1e-15;
        prop_assert!((got - exact).abs() <= bound, "{} vs {} bound {}", got, exact, bound);
    }

    #[test]
    fn discretize_stays_in_range(k in 0usize..5000, rho in prop_oneof![Just(0.0), Just(f64::MIN_POSITIVE), 0.0f64..10.0, 1e-30f64..1e-10]) {
        let mdp = MdpConfig::default();
        prop_assert!(discretize(k, rho, &mdp) < mdp.num_states());
    }

    #[test]
    fn reward_monotone_in_residual(r1 in 1e-20f64..1.0, r2 in 1e-20f64..1.0, p in experiment_precision()) {
        let rcfg = RewardConfig::with_costs(cost_setting_c1());
        let a = PrecisionAction::uniform(p);
        let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
        prop_assert!(reward(lo, &a, &rcfg) >= reward(hi, &a, &rcfg));
    }

    #[test]
    fn reward_monotone_in_cost(rho in 1e-12f64..1.0, p in experiment_precision(), bump in 0.0f64..2.0) {
        let a = PrecisionAction::uniform(p);
        let base = RewardConfig::with_costs(cost_setting_c2());
        let mut costly = base.clone();
        *costly.cost.get_mut(&p).unwrap() += bump;
        prop_assert!(reward(rho, &a, &costly) <= reward(rho, &a, &base));
    }

    #[test]
    fn argmax_invariant_under_affine_maps(
        row in prop::collection::vec(-10.0f64..10.0, 5),
        scale in 0.1f64..10.0,
        shift in -5.0f64..5.0,
    ) {
        let costs = cost_setting_c1();
        let mdp = MdpConfig::default();
        let set = Precision::EXPERIMENT_SET.to_vec();
        let mut a = QPolicy::zeros(mdp, set.clone());
        let mut b = QPolicy::zeros(mdp, set);
        a.q_row_mut(0, 3).copy_from_slice(&row);
        let mapped: Vec<f64> = row.iter().map(|v| v * scale + shift).collect();
        b.q_row_mut(0, 3).copy_from_slice(&mapped);
        // affine maps may break or create exact ties only through rounding
        let distinct = |r: &[f64]| r.iter().enumerate().all(|(i, x)| r.iter().skip(i + 1).all(|y| (x - y).abs() > 1e-9));
        prop_assume!(distinct(&row) && distinct(&mapped));
        prop_assert_eq!(a.argmax(0, 3, &costs), b.argmax(0, 3, &costs));
    }

    #[test]
    fn q_values_stay_within_reward_bound(
        steps in prop::collection::vec((0usize..100, prop::array::uniform4(0usize..5), 0.0f64..1.0, prop::option::of(0usize..100)), 1..300),
    ) {
        let mdp = MdpConfig::default();
        let set = Precision::EXPERIMENT_SET.to_vec();
        let rcfg = RewardConfig::with_costs(cost_setting_c2());
        let mut q = QPolicy::zeros(mdp, set.clone());
        let gamma = 0.9;
        let max_cost = rcfg.cost.values().copied().fold(0.0, f64::max);
        // with ρ ≤ 1 every reward lies in [-4 w2 c_max, w1·16 + w3]
        let r_max = (rcfg.w1 * 16.0 + rcfg.w3).max(4.0 * rcfg.w2 * max_cost);
        for (s, idx, rho, s_next) in steps {
            let a = PrecisionAction::from_array(idx.map(|i| set[i]));
            let r = reward(rho, &a, &rcfg);
            prop_assert!(r.abs() <= r_max + 1e-12);
            q_update(&mut q, s, &a, r, s_next, 0.1, gamma);
        }
        prop_assert!(q.max_abs() <= r_max / (1.0 - gamma) + 1e-9);
    }
}
