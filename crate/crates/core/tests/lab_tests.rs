mod common;

use std::collections::BTreeMap;

use common::*;
use dts_core::lab::bounds::{
    self, check_confidence_set, check_episode_bounds, check_epsilon_policy, check_martingale,
    check_per_epoch_regret, fit_regret_slope,
};
use dts_core::lab::trace::{compute_decomposition, write_trace_csv, EpochSummary};
use dts_core::lab::{execute_run, run_experiment, AgentKind, EnvSpec, ExperimentConfig, RunSpec};
use dts_core::lab::runner::StepRecord;
use dts_core::mdp::StochasticPolicy;

fn spec(agent: AgentKind, horizon: u64, seed: u64) -> RunSpec {
    RunSpec {
        agent,
        env: EnvSpec::RiverSwim(6),
        horizon,
        seed,
        gamma: 0.99,
        epsilon: 1e-3,
        kl_tolerance: 1e-6,
        r_min: 1e-3,
        alpha0: 1.0,
        ppi_max_iterations: 200,
        strict_per_step: false,
    }
}

#[test]
fn oracle_regret_is_sublinear_with_vanishing_reg3() {
    let record = execute_run(&spec(AgentKind::Oracle, 100_000, 3)).unwrap();
    let t = record.trace.reg_total.len();
    let final_total = record.trace.reg_total[t - 1];
    // Sublinear: far below any linear trend.
    assert!(final_total.abs() < 0.05 * t as f64, "reg_total {final_total}");
    let per_step = final_total / t as f64;
    assert!(per_step.abs() < 0.01, "per-step regret {per_step}");
    let reg3_mean = record.trace.reg3[t - 1] / t as f64;
    assert!(reg3_mean.abs() < 0.01, "reg3 mean {reg3_mean}");
}

#[test]
fn perfect_knowledge_zeroes_the_decomposition() {
    // Single epoch, sampled model = truth, policy = onehot(optimal):
    // reg1 = reg2 = 0 exactly; reg3 is pure realization noise.
    let env0 = dts_core::envs::make_riverswim(6, 1e-3, 0.99, 5).unwrap();
    let truth = env0.mdp().clone();
    let det = dts_core::ppi::solve_optimal_policy(&truth).unwrap();
    let onehot = StochasticPolicy::from_deterministic(&det, 2);

    let mut env = dts_core::envs::make_riverswim(6, 1e-3, 0.99, 5).unwrap();
    env.reseed(77);
    let horizon = 20_000u64;
    let mut steps = Vec::new();
    for t in 0..horizon {
        let s = env.state();
        let a = det.action(s);
        let (s_next, r) = env.step(a).unwrap();
        steps.push(StepRecord {
            t,
            epoch: 1,
            s,
            a,
            r,
            s_next,
            w: 1.0,
            policy_version: 0,
        });
    }
    let mut policies = BTreeMap::new();
    policies.insert(0u64, onehot.clone());
    let mut epoch_models = BTreeMap::new();
    epoch_models.insert(1u64, truth.clone());
    let trace = compute_decomposition(
        &truth,
        &steps,
        &policies,
        &epoch_models,
        &truth,
        &onehot,
        vec![],
    )
    .unwrap();
    let last = steps.len() - 1;
    assert!(trace.reg1[last].abs() < 1e-6);
    assert!(trace.reg2[last].abs() < 1e-6);
    assert!(trace.terminal_gap.abs() < 1e-12);
    // reg3 is a mean-zero random walk: allow a generous multiple of sqrt(T).
    let noise_scale = (horizon as f64).sqrt();
    assert!(
        trace.reg3[last].abs() < 10.0 * noise_scale,
        "reg3 {} vs noise scale {}",
        trace.reg3[last],
        noise_scale
    );
    assert!(trace.max_identity_violation() <= 0.0);
}

#[test]
fn decomposition_identity_vs_straight_line_evaluator() {
    let record = execute_run(&spec(AgentKind::Dts, 2048, 7)).unwrap();
    let trace = &record.trace;
    let t = trace.reg_total.len();
    assert!(trace.max_identity_violation() <= 0.0);

    // Independent check of reg_total's anchor using the power-iteration
    // stationary distribution instead of the linear solver.
    let det = dts_core::ppi::solve_optimal_policy(&record.true_mdp).unwrap();
    let pi_star = StochasticPolicy::from_deterministic(&det, 2);
    let d = power_iterate_stationary(&record.true_mdp, &pi_star, 20_000);
    let r = record.true_mdp.induced_reward(&pi_star).unwrap();
    let j_star_oracle: f64 = 0.99 * d.iter().zip(&r).map(|(x, y)| x * y).sum::<f64>();
    assert!((j_star_oracle - trace.j_star_true).abs() < 1e-9);
    let gamma_sum: f64 = 0.99 * trace.rewards.iter().sum::<f64>();
    let direct = t as f64 * j_star_oracle - gamma_sum;
    assert!((direct - trace.reg_total[t - 1]).abs() < 1e-6 * t as f64);
}

#[test]
fn trace_csv_layout_and_determinism() {
    let record = execute_run(&spec(AgentKind::Dts, 256, 11)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p1 = dir.path().join("a.csv");
    let p2 = dir.path().join("b.csv");
    write_trace_csv(&p1, &record.steps, &record.trace).unwrap();
    write_trace_csv(&p2, &record.steps, &record.trace).unwrap();
    let a = std::fs::read(&p1).unwrap();
    let b = std::fs::read(&p2).unwrap();
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "t,epoch,s,a,r,s_next,w,reg_total,reg1,reg2,reg3"
    );
    assert_eq!(text.lines().count(), 257);
    let first: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(first.len(), 11);
    assert_eq!(first[0], "0");
    assert_eq!(first[1], "1"); // first epoch
}

#[test]
fn episode_bounds_trivial_horizon() {
    let record = execute_run(&spec(AgentKind::Dts, 8, 13)).unwrap();
    let check = check_episode_bounds(&record);
    // T < S A: the macro bound is out of regime, flagged and vacuous.
    assert!(check.clamped);
    assert!((check.k_observed as f64) <= check.k_bound);
    assert!(check.ok(), "{check:?}");
}

#[test]
fn episode_bounds_synthetic_doubling_trace() {
    // One pair visited continuously: doubling epochs at N = 1, 2, 4, ...,
    // giving M = floor(log2 N) + 1.
    let mut record = execute_run(&spec(AgentKind::Dts, 64, 15)).unwrap();
    record.horizon = 1 << 12;
    let n = record.horizon;
    let mut epochs = Vec::new();
    let mut k = 1u64;
    let mut t_start = 0u64;
    while t_start < n {
        epochs.push(EpochSummary {
            k,
            t_start,
            doubling_triggered: k > 1,
            w_at_start: 1.0,
            ppi_iterations: 1,
            kl_at_stop: 0.0,
            ppi_converged: true,
        });
        t_start = if t_start == 0 { 1 } else { t_start * 2 };
        k += 1;
    }
    record.trace.epochs = epochs;
    let check = check_episode_bounds(&record);
    let expected_m = (n as f64).log2().floor() as u64 + 1;
    assert_eq!(check.m_observed, expected_m);
    assert!(check.ok(), "{check:?}");
}

#[test]
fn episode_bounds_hold_on_real_runs() {
    for seed in 0..5u64 {
        let record = execute_run(&spec(AgentKind::Dts, 4096, 100 + seed)).unwrap();
        let check = check_episode_bounds(&record);
        assert!(check.ok(), "seed {seed}: {check:?}");
    }
}

#[test]
fn confidence_set_rarely_violated() {
    let record = execute_run(&spec(AgentKind::Dts, 10_000, 19)).unwrap();
    let check = check_confidence_set(&record, 0.05);
    assert!(
        check.violation_frac <= 0.05,
        "violation fraction {}",
        check.violation_frac
    );
    assert_eq!(check.triples, 10_000 * 12);
}

#[test]
fn confidence_radius_with_zero_counts_never_violates() {
    // max{1, N} keeps the radius above 2 for small S, and L1 <= 2 always.
    let r = bounds::confidence_radius(6, 2, 1, 1024, 0);
    assert!(r > 2.0, "radius {r}");
}

#[test]
fn martingale_zero_on_deterministic_env() {
    let mut s = spec(AgentKind::Dts, 512, 23);
    s.env = EnvSpec::Chain(4);
    let record = execute_run(&s).unwrap();
    let stats = check_martingale(&record, 0.05).unwrap();
    assert_eq!(stats.sum_y, 0.0);
    assert_eq!(stats.mean, 0.0);
    assert!(stats.within_azuma);
}

#[test]
fn martingale_mean_ci_contains_zero() {
    let record = execute_run(&spec(AgentKind::Dts, 100_000, 27)).unwrap();
    let stats = check_martingale(&record, 0.05).unwrap();
    assert!(
        stats.ci_low <= 0.0 && 0.0 <= stats.ci_high,
        "CI [{}, {}]",
        stats.ci_low,
        stats.ci_high
    );
    assert!(stats.within_azuma, "{stats:?}");
}

#[test]
fn per_epoch_and_epsilon_policy_diagnostics() {
    let record = execute_run(&spec(AgentKind::Dts, 8192, 31)).unwrap();
    let per_epoch = check_per_epoch_regret(&record, 0.05);
    assert!(per_epoch.ok, "{per_epoch:?}");
    let eps = check_epsilon_policy(&record, 1e-3).unwrap();
    assert!(eps.ok, "{eps:?}");
}

#[test]
fn slope_fit_recovers_exact_power_laws() {
    let sqrt_points: Vec<(f64, f64)> = (10..18).map(|i| {
        let t = (1u64 << i) as f64;
        (t, t.sqrt())
    }).collect();
    let (slope, stderr) = fit_regret_slope(&sqrt_points).unwrap();
    assert!((slope - 0.5).abs() < 1e-6, "slope {slope}");
    assert!(stderr < 1e-6);

    let linear: Vec<(f64, f64)> = (10..14).map(|i| {
        let t = (1u64 << i) as f64;
        (t, 3.0 * t)
    }).collect();
    let (slope, _) = fit_regret_slope(&linear).unwrap();
    assert!((slope - 1.0).abs() < 1e-9);

    assert!(fit_regret_slope(&sqrt_points[..3]).is_err());
}

#[test]
fn config_parsing_defaults_and_validation() {
    let cfg = ExperimentConfig::from_toml_str(
        r#"
            agents = ["dts", "oracle"]
            horizons = [256]
            seeds = 2
        "#,
    )
    .unwrap();
    assert_eq!(cfg.env, "riverswim6");
    assert_eq!(cfg.gamma, 0.99);
    assert_eq!(cfg.delta, 0.05);
    assert_eq!(cfg.alpha0, 1.0);
    assert!(!cfg.strict_per_step);
    assert_eq!(cfg.agent_kinds().unwrap(), vec![AgentKind::Dts, AgentKind::Oracle]);

    // Empty agent list rejected.
    assert!(ExperimentConfig::from_toml_str("agents = []\nhorizons = [8]\nseeds = 1").is_err());
    // Unknown agent rejected.
    assert!(ExperimentConfig::from_toml_str(
        "agents = [\"ucrl\"]\nhorizons = [8]\nseeds = 1"
    )
    .is_err());
    // Unknown env rejected.
    assert!(ExperimentConfig::from_toml_str(
        "agents = [\"dts\"]\nhorizons = [8]\nseeds = 1\nenv = \"gridworld\""
    )
    .is_err());
    // Unknown key rejected (human-editable config should fail loudly).
    assert!(ExperimentConfig::from_toml_str(
        "agents = [\"dts\"]\nhorizons = [8]\nseeds = 1\nhorizzon = 3"
    )
    .is_err());
}

#[test]
fn experiment_outputs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mk = |sub: &str| {
        let mut cfg = ExperimentConfig::from_toml_str(
            r#"
                agents = ["dts", "egreedy"]
                horizons = [128, 256]
                seeds = 2
                workers = 2
            "#,
        )
        .unwrap();
        cfg.out_dir = dir.path().join(sub);
        cfg
    };
    run_experiment(&mk("one")).unwrap();
    run_experiment(&mk("two")).unwrap();
    let mut names: Vec<_> = std::fs::read_dir(dir.path().join("one"))
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert!(names.iter().any(|n| n.to_string_lossy().ends_with(".csv")));
    for name in names {
        let a = std::fs::read(dir.path().join("one").join(&name)).unwrap();
        let b = std::fs::read(dir.path().join("two").join(&name)).unwrap();
        assert_eq!(a, b, "{name:?} differs between runs");
    }
}

#[test]
fn saved_run_record_roundtrips_through_check_bounds() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::from_toml_str(
        r#"
            agents = ["dts"]
            horizons = [256]
            seeds = 1
            save_runs = true
            workers = 1
        "#,
    )
    .unwrap();
    cfg.out_dir = dir.path().to_path_buf();
    run_experiment(&cfg).unwrap();
    let json = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|e| e == "json") && p.file_name().unwrap() != "aggregate.json")
        .expect("run record written");
    let (summary, stats) = dts_core::lab::runner::check_bounds_file(&json, 0.05).unwrap();
    assert_eq!(summary.agent, "dts");
    assert!(summary.episode_bounds.unwrap().ok());
    assert!(stats.is_some());
}

#[test]
fn svg_plot_renders() {
    let mut curves = BTreeMap::new();
    curves.insert(
        "dts".to_string(),
        vec![(1024u64, 80.0, 8.0), (4096, 95.0, 9.0), (16384, 110.0, 12.0)],
    );
    curves.insert(
        "egreedy".to_string(),
        vec![(1024u64, 420.0, 2.0), (4096, 1700.0, 4.0), (16384, 6800.0, 9.0)],
    );
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("regret.svg");
    dts_core::lab::plot::render_regret_svg(&curves, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("<svg"));
    assert!(text.contains("polyline"));
    assert!(text.contains("egreedy"));
    assert!(text.trim_end().ends_with("</svg>"));
}
