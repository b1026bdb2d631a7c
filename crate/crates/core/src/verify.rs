//! Finite-difference and golden-trace verification suites.
//!
//! Four suites back the `verify` command: `jacobian` (closed-form advantage
//! Jacobians against central differences), `gradients` (analytic objective
//! gradients against central differences for every objective family),
//! `dynamics` (the two-term rate decomposition against its probe, the
//! plateau witness, and the sensitivity-profile properties), and
//! `dca-golden` (hand-executed scheduler traces at the default
//! constants). Each check reports its measured error and tolerance; a suite
//! passes iff all of its checks do.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::dca::{Branch, CoefficientState, DcaConfig};
use crate::dynamics::{
    rate_decomposition, rate_decomposition_fd_probe, sensitivity_profile, SmoothScenario,
};
use crate::group_norm::{advantage_jacobian, normalize_group, GroupNormError, NormalizedGroup};
use crate::metrics::{MetricKind, MetricValue};
use crate::objectives::{
    gspo_sequence_ratio, objective_gradient, objective_value, Batch, FFamily, ObjectiveVariant,
};
use crate::reward::{RewardConfig, RewardMapping};
use crate::sim::env::GridSpan;
use crate::sim::{expected_capability, refresh_batch, sample_group, EnvKind, PolicyModel, TaskEnv};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub measured: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl CheckResult {
    fn within(name: impl Into<String>, measured: f64, tolerance: f64) -> Self {
        Self { name: name.into(), measured, tolerance, passed: measured <= tolerance }
    }

    fn exact(name: impl Into<String>, measured: f64) -> Self {
        Self { name: name.into(), measured, tolerance: 0.0, passed: measured == 0.0 }
    }

    fn boolean(name: impl Into<String>, passed: bool) -> Self {
        Self { name: name.into(), measured: if passed { 0.0 } else { 1.0 }, tolerance: 0.0, passed }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub passed: bool,
    pub checks: Vec<CheckResult>,
}

impl SuiteReport {
    fn new(suite: &str, checks: Vec<CheckResult>) -> Self {
        let passed = checks.iter().all(|c| c.passed);
        Self { suite: suite.into(), passed, checks }
    }

    pub fn failing(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub schema_version: u32,
    pub passed: bool,
    pub suites: Vec<SuiteReport>,
}

impl VerifyReport {
    pub fn from_suites(suites: Vec<SuiteReport>) -> Self {
        let passed = suites.iter().all(|s| s.passed);
        Self { schema_version: SCHEMA_VERSION, passed, suites }
    }
}

pub const SUITE_NAMES: [&str; 4] = ["jacobian", "gradients", "dynamics", "dca-golden"];

/// Runs one named suite. `None` for an unknown name.
pub fn run_suite(name: &str) -> Option<SuiteReport> {
    match name {
        "jacobian" => Some(jacobian_suite()),
        "gradients" => Some(gradients_suite()),
        "dynamics" => Some(dynamics_suite()),
        "dca-golden" => Some(dca_golden_suite()),
        _ => None,
    }
}

pub fn run_all() -> VerifyReport {
    VerifyReport::from_suites(SUITE_NAMES.iter().map(|n| run_suite(n).unwrap()).collect())
}

// ---------------------------------------------------------------------------
// jacobian suite
// ---------------------------------------------------------------------------

/// 50 random groups across G in {2, 4, 8, 16}: every closed-form entry vs a
/// central difference of the normalization, zero row sums, and annihilation
/// of the reward direction.
pub fn jacobian_suite() -> SuiteReport {
    jacobian_suite_with(advantage_jacobian)
}

/// Implementation-parameterized variant so a deliberately broken Jacobian
/// can be shown to fail (mutation check of the harness itself).
pub fn jacobian_suite_with<F>(jacobian: F) -> SuiteReport
where
    F: Fn(&NormalizedGroup) -> Result<Vec<Vec<f64>>, GroupNormError>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(0x4a43);
    let sizes = [2usize, 4, 8, 16];
    let mut checks = Vec::new();
    let h = 1e-6;
    for trial in 0..50 {
        let g = sizes[trial % sizes.len()];
        let rewards: Vec<f64> = loop {
            let cand: Vec<f64> = (0..g).map(|_| rng.gen_range(-1.0..2.0)).collect();
            if normalize_group(&cand).unwrap().sigma > 0.05 {
                break cand;
            }
        };
        let group = normalize_group(&rewards).unwrap();
        let jac = match jacobian(&group) {
            Ok(j) => j,
            Err(e) => {
                checks.push(CheckResult::boolean(format!("group_{trial:02}_G{g}_error_{e}"), false));
                continue;
            }
        };

        let mut max_rel = 0.0f64;
        for j in 0..g {
            let mut plus = rewards.clone();
            plus[j] += h;
            let mut minus = rewards.clone();
            minus[j] -= h;
            let gp = normalize_group(&plus).unwrap();
            let gm = normalize_group(&minus).unwrap();
            for i in 0..g {
                let fd = (gp.advantages[i] - gm.advantages[i]) / (2.0 * h);
                let rel = (jac[i][j] - fd).abs() / fd.abs().max(1e-3);
                max_rel = max_rel.max(rel);
            }
        }
        checks.push(CheckResult::within(format!("group_{trial:02}_G{g}_entries_vs_fd"), max_rel, 1e-5));

        let max_row_sum = jac
            .iter()
            .map(|row| row.iter().sum::<f64>().abs())
            .fold(0.0f64, f64::max);
        checks.push(CheckResult::within(format!("group_{trial:02}_G{g}_row_sums"), max_row_sum, 1e-10));

        let norm_a = rewards.iter().map(|a| a * a).sum::<f64>().sqrt();
        let max_ja = jac
            .iter()
            .map(|row| row.iter().zip(&rewards).map(|(j, a)| j * a).sum::<f64>().abs())
            .fold(0.0f64, f64::max);
        checks.push(CheckResult::within(
            format!("group_{trial:02}_G{g}_annihilates_rewards"),
            max_ja,
            1e-9 * norm_a.max(1.0),
        ));
    }
    SuiteReport::new("jacobian", checks)
}

// ---------------------------------------------------------------------------
// gradients suite
// ---------------------------------------------------------------------------

struct GradientTrial {
    policy: PolicyModel,
    batch: Batch,
    coefficients: Option<Vec<f64>>,
}

/// Builds a random two-task trial whose token and sequence ratios stay
/// clear of the clip boundaries, so finite differences are valid.
fn random_trial(rng: &mut ChaCha8Rng, variant: &ObjectiveVariant, weighted: bool) -> GradientTrial {
    let epsilon = match variant.family {
        FFamily::Grpo { epsilon } | FFamily::Gspo { epsilon } => Some(epsilon),
        FFamily::Sapo { .. } => None,
    };
    'outer: loop {
        let labels = rng.gen_range(2..=4);
        let resolution = rng.gen_range(5..=9);
        let envs = vec![
            TaskEnv::new(
                "cls",
                EnvKind::ClassificationBandit {
                    num_labels: labels,
                    targets: vec![rng.gen_range(0..labels)],
                },
            ),
            TaskEnv::new(
                "loc",
                EnvKind::IntervalGrid {
                    resolution,
                    max_len: 3,
                    targets: vec![GridSpan { start: rng.gen_range(0..resolution - 2), len: 2 }],
                },
            ),
        ];
        let mut policy = PolicyModel::new(&envs, rng.gen_range(0.7..1.3));
        for t in policy.theta.iter_mut() {
            *t = rng.gen_range(-0.8..0.8);
        }
        if variant.kl_beta > 0.0 {
            policy.freeze_reference();
        }
        policy.snapshot_old();
        for t in policy.theta.iter_mut() {
            *t += rng.gen_range(-0.15..0.15);
        }

        let mappings =
            [RewardMapping::Identity, RewardMapping::NormalizedExponential { alpha: 3.0 }];
        let group_size = if rng.gen_bool(0.5) { 4 } else { 8 };
        let mut groups = Vec::new();
        for (task, env) in envs.iter().enumerate() {
            let group = sample_group(
                &policy,
                env,
                task,
                &mappings[task],
                0,
                group_size,
                rng.gen(),
                &RewardConfig::default(),
            )
            .expect("trial groups sample");
            groups.push(group);
        }
        // boundary clearance for the clipping families
        if let Some(eps) = epsilon {
            for group in &groups {
                for resp in &group.responses {
                    for t in 0..resp.token_count() {
                        let r = resp.token_ratio(t);
                        if (r - (1.0 + eps)).abs() < 1e-3 || (r - (1.0 - eps)).abs() < 1e-3 {
                            continue 'outer;
                        }
                    }
                    let s = gspo_sequence_ratio(&resp.new_logps, &resp.old_logps).unwrap().value;
                    if (s - (1.0 + eps)).abs() < 1e-3 || (s - (1.0 - eps)).abs() < 1e-3 {
                        continue 'outer;
                    }
                }
            }
        }
        let batch = Batch::new(groups, vec![0.4, 0.6]).expect("trial batch");
        let coefficients = weighted.then(|| vec![rng.gen_range(1.0..4.0), rng.gen_range(1.0..4.0)]);
        return GradientTrial { policy, batch, coefficients };
    }
}

fn gradient_check(trial: &GradientTrial, variant: &ObjectiveVariant) -> f64 {
    let analytic =
        objective_gradient(&trial.batch, variant, trial.coefficients.as_deref(), &trial.policy)
            .expect("analytic gradient");
    let h = 1e-5;
    let mut probe = trial.policy.clone();
    let mut fd = vec![0.0; probe.param_count()];
    for k in 0..fd.len() {
        let base = trial.policy.theta[k];
        let mut eval = |theta_k: f64| {
            probe.theta[k] = theta_k;
            let mut batch = trial.batch.clone();
            refresh_batch(&mut batch, &probe);
            objective_value(&batch, variant, trial.coefficients.as_deref()).expect("objective value")
        };
        let plus = eval(base + h);
        let minus = eval(base - h);
        probe.theta[k] = base;
        fd[k] = (plus - minus) / (2.0 * h);
    }
    let scale = fd.iter().map(|g| g.abs()).fold(0.0f64, f64::max).max(1e-12);
    analytic
        .iter()
        .zip(&fd)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max)
        / scale
}

/// 20 random batches per objective family (plus the coefficient-weighted
/// forms, one with the KL term active): analytic gradient within relative
/// 1e-5 of central differences over every parameter.
pub fn gradients_suite() -> SuiteReport {
    let configs: Vec<(&str, ObjectiveVariant, bool)> = vec![
        ("grpo", ObjectiveVariant::grpo(0.2), false),
        ("gspo", ObjectiveVariant::gspo(0.2), false),
        ("sapo", ObjectiveVariant::sapo(1.0, 2.0), false),
        ("weighted_grpo_kl", ObjectiveVariant::grpo(0.2).with_kl(0.01), true),
        ("weighted_sapo", ObjectiveVariant::sapo(0.8, 1.6), true),
    ];
    let mut checks = Vec::new();
    for (name, variant, weighted) in configs {
        let mut rng = ChaCha8Rng::seed_from_u64(0x6772 ^ name.len() as u64);
        for trial_idx in 0..20 {
            let trial = random_trial(&mut rng, &variant, weighted);
            let rel = gradient_check(&trial, &variant);
            checks.push(CheckResult::within(format!("{name}_batch_{trial_idx:02}"), rel, 1e-5));
        }
    }
    SuiteReport::new("gradients", checks)
}

// ---------------------------------------------------------------------------
// dynamics suite
// ---------------------------------------------------------------------------

fn random_unit_direction(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    raw.into_iter().map(|x| x / norm).collect()
}

fn random_smooth_scenario(rng: &mut ChaCha8Rng) -> SmoothScenario {
    loop {
        let resolution = rng.gen_range(6..=10);
        let env = TaskEnv::new(
            "loc",
            EnvKind::IntervalGrid {
                resolution,
                max_len: 3,
                targets: vec![GridSpan { start: rng.gen_range(0..resolution - 2), len: 2 }],
            },
        );
        let mut policy = PolicyModel::new(&[env.clone()], rng.gen_range(0.8..1.2));
        for t in policy.theta.iter_mut() {
            *t = rng.gen_range(-0.6..0.6);
        }
        policy.snapshot_old();
        for t in policy.theta.iter_mut() {
            *t += rng.gen_range(-0.1..0.1);
        }
        let group_size = rng.gen_range(3..=6);
        let actions: Vec<Vec<usize>> = (0..group_size)
            .map(|_| vec![rng.gen_range(0..resolution), rng.gen_range(0..3)])
            .collect();
        let mapping = if rng.gen_bool(0.5) {
            RewardMapping::Exponential { a: 3.0 }
        } else {
            RewardMapping::NormalizedExponential { alpha: rng.gen_range(2.0..3.0) }
        };
        let scenario = SmoothScenario {
            env,
            policy,
            task: 0,
            context: 0,
            actions,
            mapping,
            tau_pos: rng.gen_range(0.8..1.4),
            tau_neg: rng.gen_range(0.8..1.4),
        };
        if scenario.mapped_group().is_ok() {
            return scenario;
        }
    }
}

/// The Matthew-effect witness: an easy two-arm task and a fine-grid
/// localization task whose policy holds negligible mass near the target, so
/// its capability surface is flat. Probed along the shared direction of
/// steepest combined capability ascent.
fn plateau_witness() -> (f64, f64) {
    let easy = TaskEnv::new("cls", EnvKind::ClassificationBandit { num_labels: 2, targets: vec![0] });
    let hard = TaskEnv::new(
        "loc",
        EnvKind::IntervalGrid { resolution: 64, max_len: 4, targets: vec![GridSpan { start: 30, len: 2 }] },
    );
    let mut policy = PolicyModel::new(&[easy.clone(), hard.clone()], 1.0);
    // easy task mid-learning: p(correct) ~ 0.6
    let block = policy.layout().block(0, 0, 0);
    policy.theta[block.start] = 0.2;
    policy.theta[block.start + 1] = -0.2;
    // hard task plateau: push mass away from every start cell overlapping
    // the target, so the expected metric barely moves with the parameters
    let start_block = policy.layout().block(1, 0, 0);
    for cell in 27..=33 {
        policy.theta[start_block.start + cell] = -20.0;
    }
    policy.snapshot_old();

    let (_, g_easy) = expected_capability(&policy, &easy, 0).unwrap();
    let (_, g_hard) = expected_capability(&policy, &hard, 1).unwrap();
    let combined: Vec<f64> = g_easy.iter().zip(&g_hard).map(|(a, b)| a + b).collect();
    let norm = combined.iter().map(|x| x * x).sum::<f64>().sqrt();
    let direction: Vec<f64> = combined.into_iter().map(|x| x / norm).collect();

    let mapping = RewardMapping::NormalizedExponential { alpha: 3.0 };
    let easy_scenario = SmoothScenario {
        env: easy,
        policy: policy.clone(),
        task: 0,
        context: 0,
        actions: vec![vec![0], vec![1], vec![0], vec![1]],
        mapping: mapping.clone(),
        tau_pos: 1.0,
        tau_neg: 1.0,
    };
    // a rare good response among misses: the group varies even though the
    // policy's capability gradient is flat
    let hard_scenario = SmoothScenario {
        env: hard,
        policy,
        task: 1,
        context: 0,
        actions: vec![vec![30, 1], vec![29, 1], vec![5, 0], vec![50, 2]],
        mapping,
        tau_pos: 1.0,
        tau_neg: 1.0,
    };
    let easy_term2 = rate_decomposition(&easy_scenario, &direction, 0, 0).unwrap().term_2;
    let hard_term2 = rate_decomposition(&hard_scenario, &direction, 0, 0).unwrap().term_2;
    (easy_term2, hard_term2)
}

/// Rate-decomposition agreement on random smooth configurations, the
/// plateau witness, and the sensitivity-profile shape properties.
pub fn dynamics_suite() -> SuiteReport {
    let mut checks = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0x6479);
    let mut trial = 0;
    while trial < 20 {
        let scenario = random_smooth_scenario(&mut rng);
        // the probed response's metric must sit inside the mapping domain
        // with room for the direct-path shift
        let interior: Vec<usize> = scenario
            .metrics()
            .iter()
            .enumerate()
            .filter(|(_, &x)| x > 1e-3 && x < 1.0 - 1e-3)
            .map(|(i, _)| i)
            .collect();
        let Some(&resp) = interior.get(rng.gen_range(0..interior.len().max(1))) else {
            continue;
        };
        let direction = random_unit_direction(&mut rng, scenario.policy.param_count());
        let tok = rng.gen_range(0..2);
        let closed = rate_decomposition(&scenario, &direction, resp, tok).unwrap();
        let fd = rate_decomposition_fd_probe(&scenario, &direction, resp, tok, 1e-4).unwrap();
        let tol = (1e-3 * closed.total.abs()).max(1e-4);
        checks.push(CheckResult::within(
            format!("rate_decomposition_{trial:02}"),
            (closed.total - fd).abs(),
            tol,
        ));
        trial += 1;
    }

    let (easy_term2, hard_term2) = plateau_witness();
    checks.push(CheckResult::within("plateau_hard_term2_below_1e-6", hard_term2.abs(), 1e-6));
    checks.push(CheckResult::boolean(
        "plateau_easy_term2_above_1e-2",
        easy_term2.abs() > 1e-2,
    ));

    // linear mapping: uniform sensitivity, max/mean exactly 1
    let mut uniform_failures = 0usize;
    for _ in 0..100 {
        let metrics: Vec<MetricValue> = loop {
            let cand: Vec<MetricValue> = (0..8)
                .map(|_| MetricValue::new(rng.gen_range(0.0..1.0), MetricKind::Iou).unwrap())
                .collect();
            let values: Vec<f64> = cand.iter().map(|m| m.value).collect();
            if normalize_group(&values).unwrap().sigma > 1e-3 {
                break cand;
            }
        };
        let profile = sensitivity_profile(&metrics, &RewardMapping::Identity).unwrap();
        if profile.max_over_mean() != 1.0 {
            uniform_failures += 1;
        }
    }
    checks.push(CheckResult::exact("identity_profile_max_over_mean", uniform_failures as f64));

    // convex mapping: the unique best metric holds the strict maximum entry
    let mapping = RewardMapping::NormalizedExponential { alpha: 3.0 };
    let mut argmax_failures = 0usize;
    for _ in 0..100 {
        let metrics: Vec<MetricValue> = loop {
            let cand: Vec<f64> = (0..8).map(|_| rng.gen_range(0.0..1.0)).collect();
            let best = cand.iter().cloned().fold(f64::MIN, f64::max);
            if cand.iter().filter(|&&v| v == best).count() == 1
                && normalize_group(&cand).unwrap().sigma > 1e-3
            {
                break cand
                    .into_iter()
                    .map(|v| MetricValue::new(v, MetricKind::Iou).unwrap())
                    .collect();
            }
        };
        let best_metric = metrics
            .iter()
            .enumerate()
            .max_by(|(_, a), (_, b)| a.value.partial_cmp(&b.value).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        let profile = sensitivity_profile(&metrics, &mapping).unwrap();
        let best_entry = profile.argmax();
        let strict = profile
            .values
            .iter()
            .enumerate()
            .all(|(i, &v)| i == best_entry || v < profile.values[best_entry]);
        if best_entry != best_metric || !strict {
            argmax_failures += 1;
        }
    }
    checks.push(CheckResult::exact("convex_profile_argmax", argmax_failures as f64));

    SuiteReport::new("dynamics", checks)
}

// ---------------------------------------------------------------------------
// dca-golden suite
// ---------------------------------------------------------------------------

fn feed(state: &mut CoefficientState, samples: &[f64], times: u64) {
    for _ in 0..times {
        state.record_metrics(samples).expect("sample count matches task count");
    }
}

/// Hand-executed scheduler traces at the default constants
/// (T_warm = 800, T = 100, boost 1.1, decay 0.9, eps 0.02 / 0.10,
/// tau_high 0.10 / 0.50 / 0.60): the two-task worked example, an
/// all-branches trace, and the clamp and rescale identities.
pub fn dca_golden_suite() -> SuiteReport {
    let mut checks = Vec::new();

    // worked example: classification momentum-protected, localization
    // becomes the laggard
    {
        let config = DcaConfig::with_tau_high(vec![0.10, 0.50]);
        let mut state = CoefficientState::new(config).expect("valid config");
        feed(&mut state, &[0.5, 0.2], 799); // warm-up baselines 0.5 / 0.2
        feed(&mut state, &[0.5, 0.2], 1); // step 800 freezes
        feed(&mut state, &[0.55, 0.21], 200); // past window (800, 1000]
        feed(&mut state, &[0.62, 0.19], 100); // current window (1000, 1100]
        let report = state.adjust().expect("scheduled adjustment");
        checks.push(CheckResult::boolean(
            "worked_example_branches",
            report[0].branch == Branch::Momentum && report[1].branch == Branch::Laggard,
        ));
        checks.push(CheckResult::exact(
            "worked_example_cls_coefficient",
            (state.coefficients()[0] - 1.0).abs(),
        ));
        checks.push(CheckResult::exact(
            "worked_example_loc_coefficient",
            (state.coefficients()[1] - 1.1f64).abs(),
        ));
        let delta_err =
            (report[0].delta_total - 0.24).abs().max((report[1].delta_total + 0.05).abs());
        checks.push(CheckResult::within("worked_example_delta_totals", delta_err, 1e-12));
    }

    // every branch fires once in a single adjustment
    {
        let config = DcaConfig::with_tau_high(vec![0.50, 0.50, 0.10, 0.50]);
        let mut state = CoefficientState::new(config).expect("valid config");
        feed(&mut state, &[0.5, 0.5, 0.5, 0.5], 800);
        feed(&mut state, &[0.50, 0.70, 0.60, 0.48], 200);
        feed(&mut state, &[0.56, 0.55, 0.60, 0.47], 100);
        let report = state.adjust().expect("scheduled adjustment");
        let branches: Vec<Branch> = report.iter().map(|r| r.branch).collect();
        checks.push(CheckResult::boolean(
            "all_branches_once",
            branches == vec![Branch::Momentum, Branch::Rescue, Branch::Decay, Branch::Laggard],
        ));
        let min = state.coefficients().iter().cloned().fold(f64::INFINITY, f64::min);
        checks.push(CheckResult::exact("post_adjust_min_is_one", (min - 1.0).abs()));
        checks.push(CheckResult::boolean(
            "rescue_coefficient_boosted",
            (state.coefficients()[1] - 1.1f64).abs() == 0.0,
        ));
    }

    // decay clamps at 1: a mastered task at coefficient 1 stays at 1
    {
        let config = DcaConfig::with_tau_high(vec![0.10, 5.0]);
        let mut state = CoefficientState::new(config).expect("valid config");
        feed(&mut state, &[0.5, 0.5], 800);
        feed(&mut state, &[0.58, 0.5], 200);
        feed(&mut state, &[0.575, 0.5], 100); // recent dip, total gain 0.15
        let report = state.adjust().expect("scheduled adjustment");
        checks.push(CheckResult::boolean("decay_branch_fires", report[0].branch == Branch::Decay));
        checks.push(CheckResult::exact("decay_clamped_at_one", (state.coefficients()[0] - 1.0).abs()));
    }

    // rescue outranks the laggard branch
    {
        let config = DcaConfig::with_tau_high(vec![0.10]);
        let mut state = CoefficientState::new(config).expect("valid config");
        feed(&mut state, &[0.5], 800);
        feed(&mut state, &[0.6], 200);
        feed(&mut state, &[0.45], 100); // recent trend -0.15 < -0.10
        let report = state.adjust().expect("scheduled adjustment");
        checks.push(CheckResult::boolean("rescue_before_laggard", report[0].branch == Branch::Rescue));
    }

    // rescale identities
    {
        let mut c = vec![2.0, 1.5, 3.0];
        crate::dca::rescale(&mut c);
        let ok1 = c == vec![2.0 / 1.5, 1.0, 2.0];
        let mut c = vec![0.9, 1.8];
        crate::dca::rescale(&mut c);
        let ok2 = c == vec![1.0, 2.0];
        checks.push(CheckResult::boolean("rescale_identities", ok1 && ok2));
    }

    SuiteReport::new("dca-golden", checks)
}

/// Determinism check used by the run command's self-test: two runs of the
/// same experiment produce identical traces.
pub fn determinism_check(config: &ExperimentConfig) -> Result<bool, crate::sim::SimError> {
    let setup = config.resolve().map_err(|e| crate::sim::SimError::InvalidEnv {
        env: "config".into(),
        reason: e.to_string(),
    })?;
    let seed = setup.seeds[0];
    let a = crate::sim::train(&setup, seed)?;
    let b = crate::sim::train(&setup, seed)?;
    Ok(a == b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jacobian_suite_passes() {
        let report = jacobian_suite();
        assert!(report.passed, "failures: {:?}", report.failing().collect::<Vec<_>>());
    }

    #[test]
    fn mutated_jacobian_fails_and_names_the_entry() {
        // break the diagonal: (G) instead of (G - 1)
        let report = jacobian_suite_with(|group| {
            let g = group.group_size() as f64;
            let scale = 1.0 / (g * group.sigma);
            let adv = &group.advantages;
            Ok(adv
                .iter()
                .enumerate()
                .map(|(i, &ai)| {
                    adv.iter()
                        .enumerate()
                        .map(|(j, &aj)| {
                            if i == j {
                                scale * (g - ai * ai)
                            } else {
                                -scale * (1.0 + ai * aj)
                            }
                        })
                        .collect()
                })
                .collect())
        });
        assert!(!report.passed);
        let failing: Vec<_> = report.failing().collect();
        assert!(!failing.is_empty());
        assert!(failing.iter().any(|c| c.name.contains("entries_vs_fd")));
    }

    #[test]
    fn dca_golden_suite_passes() {
        let report = dca_golden_suite();
        assert!(report.passed, "failures: {:?}", report.failing().collect::<Vec<_>>());
    }

    #[test]
    fn unknown_suite_is_none() {
        assert!(run_suite("nope").is_none());
    }
}
