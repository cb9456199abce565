use std::collections::BTreeMap;

use serde_json::{json, Value};

use super::{CliError, Experiment, ExperimentConfig, ParamKind, ParamSpec};
use crate::ensemble::{
    average_operator_residual, average_spin_commutator, brute_force_spin_commutator, fluctuation_robustness,
    loglog_slope, EnsembleSpec, SPIN_ORACLE_MAX,
};
use crate::hilbert::{HermitianOperator, StateVector};
use crate::measurement::{weak_value, StrongMeasurement, TwoState, WeakEstimate, WeakMeasurement};
use crate::rng::SeedStream;
use crate::twotime::{
    brute_force_ratio, classical_threshold, core_decay, log_robustness_ratio, simulate_universes, BranchLabel,
    Gammas, RatioForm, RobustnessModel, DEFAULT_CLASSICAL_THRESHOLD,
};

/// Rows and summary produced by one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub summary: BTreeMap<String, Value>,
}

impl ExperimentOutput {
    fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
            summary: BTreeMap::new(),
        }
    }

    fn row(&mut self, cells: Vec<String>) {
        self.rows.push(cells);
    }

    fn put(&mut self, key: &str, v: Value) {
        self.summary.insert(key.to_string(), v);
    }
}

const FORMS: &[&str] = &["squared", "literal"];

const BORN: &[ParamSpec] = &[
    ParamSpec { name: "alpha2", kind: ParamKind::Float, default: "0.36", help: "weight of |0> (branch I)" },
    ParamSpec { name: "trials", kind: ParamKind::UInt, default: "100000", help: "measurements or universes" },
    ParamSpec {
        name: "source",
        kind: ParamKind::Choice(&["strong", "final-boundary"]),
        default: "strong",
        help: "projective sigma_z, or sampled final boundaries",
    },
    ParamSpec { name: "env_n", kind: ParamKind::UInt, default: "20", help: "environment size (final-boundary)" },
    ParamSpec { name: "c", kind: ParamKind::Float, default: "0.9", help: "per-particle overlap (final-boundary)" },
];

const WEAKVALUE: &[ParamSpec] = &[
    ParamSpec { name: "g_over_sigma", kind: ParamKind::Float, default: "0.01", help: "coupling over pointer width" },
    ParamSpec { name: "accepted", kind: ParamKind::UInt, default: "100000", help: "post-selected trials to collect" },
    ParamSpec {
        name: "post_angle",
        kind: ParamKind::Float,
        default: "0.39269908169872414",
        help: "post-selection cos(t)|0> - sin(t)|1>",
    },
];

const CONVERGENCE: &[ParamSpec] = &[
    ParamSpec { name: "Ns", kind: ParamKind::UIntList, default: "100,1000,10000,100000", help: "ensemble sizes" },
    ParamSpec { name: "noise", kind: ParamKind::Float, default: "0", help: "per-copy amplitude noise scale" },
    ParamSpec { name: "trials", kind: ParamKind::UInt, default: "1", help: "noise realisations per size" },
];

const COMMUTATOR: &[ParamSpec] = &[
    ParamSpec { name: "Nmax", kind: ParamKind::UInt, default: "10", help: "largest brute-force particle count" },
    ParamSpec {
        name: "Nlarge",
        kind: ParamKind::UIntList,
        default: "100,10000,1000000",
        help: "closed-form particle counts",
    },
];

const ROBUSTNESS: &[ParamSpec] = &[
    ParamSpec { name: "c", kind: ParamKind::Float, default: "0.9", help: "per-particle overlap" },
    ParamSpec { name: "N", kind: ParamKind::UInt, default: "20", help: "largest environment size" },
    ParamSpec { name: "n", kind: ParamKind::UInt, default: "5", help: "collapsed particles" },
    ParamSpec { name: "gamma1", kind: ParamKind::Float, default: "0.8", help: "collapse overlap, branch I" },
    ParamSpec { name: "gamma2", kind: ParamKind::Float, default: "0.8", help: "collapse overlap, branch II" },
    ParamSpec { name: "form", kind: ParamKind::Choice(FORMS), default: "squared", help: "ratio form" },
];

const THRESHOLD: &[ParamSpec] = &[
    ParamSpec { name: "c", kind: ParamKind::Float, default: "0.9", help: "per-particle overlap" },
    ParamSpec { name: "n", kind: ParamKind::UInt, default: "0", help: "collapsed particles" },
    ParamSpec { name: "targets", kind: ParamKind::FloatList, default: "1000000", help: "ratio targets" },
    ParamSpec { name: "gamma1", kind: ParamKind::Float, default: "1", help: "collapse overlap, branch I" },
    ParamSpec { name: "gamma2", kind: ParamKind::Float, default: "1", help: "collapse overlap, branch II" },
    ParamSpec { name: "form", kind: ParamKind::Choice(FORMS), default: "squared", help: "ratio form" },
];

const DECAY: &[ParamSpec] = &[
    ParamSpec { name: "N0", kind: ParamKind::UInt, default: "1000000", help: "initial core size" },
    ParamSpec { name: "T", kind: ParamKind::Float, default: "1", help: "core lifetime" },
    ParamSpec { name: "t_max", kind: ParamKind::Float, default: "5", help: "last time point" },
    ParamSpec { name: "steps", kind: ParamKind::UInt, default: "50", help: "time intervals" },
    ParamSpec { name: "c", kind: ParamKind::Float, default: "0.9", help: "per-particle overlap" },
];

pub(super) fn schema(e: Experiment) -> &'static [ParamSpec] {
    match e {
        Experiment::Born => BORN,
        Experiment::WeakValue => WEAKVALUE,
        Experiment::Convergence => CONVERGENCE,
        Experiment::Commutator => COMMUTATOR,
        Experiment::Robustness => ROBUSTNESS,
        Experiment::Threshold => THRESHOLD,
        Experiment::Decay => DECAY,
    }
}

pub(super) fn execute(cfg: &ExperimentConfig) -> Result<ExperimentOutput, CliError> {
    match cfg.experiment {
        Experiment::Born => born(cfg),
        Experiment::WeakValue => weakvalue(cfg),
        Experiment::Convergence => convergence(cfg),
        Experiment::Commutator => commutator(cfg),
        Experiment::Robustness => robustness(cfg),
        Experiment::Threshold => threshold(cfg),
        Experiment::Decay => decay(cfg),
    }
}

fn cell<T: ToString>(x: T) -> String {
    x.to_string()
}

/// JSON number, or a string for non-finite values.
fn num(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        json!(x.to_string())
    }
}

fn form(cfg: &ExperimentConfig) -> RatioForm {
    match cfg.choice("form") {
        "literal" => RatioForm::Literal,
        _ => RatioForm::Squared,
    }
}

fn born(cfg: &ExperimentConfig) -> Result<ExperimentOutput, CliError> {
    let p = cfg.float("alpha2");
    let trials = cfg.uint("trials");
    if !(0.0..=1.0).contains(&p) {
        return Err(CliError::Config(format!("parameter 'alpha2': {p} outside [0, 1]")));
    }
    if trials == 0 {
        return Err(CliError::Config("parameter 'trials': must be >= 1".into()));
    }
    let mut out = ExperimentOutput::new(&["trial", "outcome"]);
    let outcomes: Vec<i8> = match cfg.choice("source") {
        "final-boundary" => {
            let model = RobustnessModel::with_branch_probability(p, cfg.uint("env_n"), cfg.float("c"))?;
            simulate_universes(&model, trials, cfg.seed)?
                .readings
                .into_iter()
                .map(|r| if r == BranchLabel::I { 1 } else { -1 })
                .collect()
        }
        _ => {
            let psi = StateVector::from_real(&[p.sqrt(), (1.0 - p).sqrt()])?;
            let m = StrongMeasurement::new(&psi, &HermitianOperator::pauli_z())?;
            let streams = SeedStream::new(cfg.seed);
            (0..trials)
                .map(|t| if m.measure(&mut streams.trial(t)).outcome > 0.0 { 1 } else { -1 })
                .collect()
        }
    };
    let plus = outcomes.iter().filter(|&&o| o == 1).count();
    for (t, o) in outcomes.iter().enumerate() {
        out.row(vec![cell(t), cell(o)]);
    }
    let freq = plus as f64 / trials as f64;
    let band = 3.0 * (p * (1.0 - p) / trials as f64).sqrt();
    out.put("trials", json!(trials));
    out.put("count_plus", json!(plus));
    out.put("frequency_plus", num(freq));
    out.put("expected", num(p));
    out.put("band_3sigma", num(band));
    out.put("within_band", json!((freq - p).abs() <= band));
    Ok(out)
}

fn weakvalue(cfg: &ExperimentConfig) -> Result<ExperimentOutput, CliError> {
    let g = cfg.float("g_over_sigma");
    let accepted = cfg.uint("accepted");
    let theta = cfg.float("post_angle");
    if accepted == 0 {
        return Err(CliError::Config("parameter 'accepted': must be >= 1".into()));
    }
    let post = StateVector::from_real(&[theta.cos(), -theta.sin()])?;
    let ts = TwoState::new(&StateVector::plus(), &post)?;
    let a = HermitianOperator::pauli_z();
    let wv = weak_value(&ts, &a)?;
    let wm = WeakMeasurement::prepare(&ts, &a, g, 1.0)?;
    let max_trials = ((accepted as f64 / wm.acceptance_probability()) * 4.0 + 1e6).min(u64::MAX as f64) as u64;
    let (readings, used) = wm.run_until_accepted(&SeedStream::new(cfg.seed), accepted as usize, max_trials);
    let est = WeakEstimate::from_readings(&readings, used)?;

    let mut out = ExperimentOutput::new(&["trial", "q_over_g"]);
    for (t, q) in &readings {
        out.row(vec![cell(t), cell(q / g)]);
    }
    let (mean, stderr) = (est.mean / g, est.stderr / g);
    out.put("weak_value_re", num(wv.re));
    out.put("weak_value_im", num(wv.im));
    out.put("mean_q_over_g", num(mean));
    out.put("stderr", num(stderr));
    out.put("z_score", num((mean - wv.re) / stderr));
    out.put("analytic_mean_q_over_g", num(wm.expected_shift() / g));
    out.put("acceptance_rate", num(est.acceptance_rate));
    out.put("acceptance_probability", num(wm.acceptance_probability()));
    out.put("trials", json!(est.trials));
    out.put("accepted", json!(est.accepted));
    out.put("anomalous", json!(mean.abs() > 1.0));
    Ok(out)
}

fn convergence(cfg: &ExperimentConfig) -> Result<ExperimentOutput, CliError> {
    let ns = cfg.uint_list("Ns");
    let noise = cfg.float("noise");
    let trials = cfg.uint("trials");
    if ns.contains(&0) {
        return Err(CliError::Config("parameter 'Ns': sizes must be >= 1".into()));
    }
    let a = HermitianOperator::pauli_z();
    let psi = StateVector::plus();
    let mut out = ExperimentOutput::new(&["N", "abar", "residual"]);
    let mut residuals = Vec::with_capacity(ns.len());
    for &n in ns {
        let (abar, residual) = if noise == 0.0 {
            let r = average_operator_residual(&a, &EnsembleSpec::identical(&psi, n)?)?;
            (r.abar, r.residual)
        } else {
            let r = fluctuation_robustness(&a, &psi, noise, n, trials, cfg.seed ^ n)?;
            (r.abar, r.residual)
        };
        residuals.push(residual);
        out.row(vec![cell(n), cell(abar), cell(residual)]);
    }
    if ns.len() >= 2 {
        let xs: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
        out.put("slope", num(loglog_slope(&xs, &residuals)));
    }
    out.put("expected_slope", num(-0.5));
    Ok(out)
}

fn commutator(cfg: &ExperimentConfig) -> Result<ExperimentOutput, CliError> {
    let nmax = cfg.uint("Nmax");
    if nmax == 0 || nmax > SPIN_ORACLE_MAX as u64 {
        return Err(CliError::Config(format!(
            "parameter 'Nmax': must lie in 1..={SPIN_ORACLE_MAX}, got {nmax}"
        )));
    }
    let large = cfg.uint_list("Nlarge");
    if large.contains(&0) {
        return Err(CliError::Config("parameter 'Nlarge': sizes must be >= 1".into()));
    }
    let mut out = ExperimentOutput::new(&["N", "scale", "brute_scale", "max_defect"]);
    let mut worst: f64 = 0.0;
    for n in 1..=nmax {
        let check = brute_force_spin_commutator(n as usize)?;
        worst = worst.max(check.max_defect);
        out.row(vec![
            cell(n),
            cell(average_spin_commutator(n)),
            cell(check.scale),
            cell(check.max_defect),
        ]);
    }
    for &n in large {
        out.row(vec![cell(n), cell(average_spin_commutator(n)), String::new(), String::new()]);
    }
    out.put("max_defect", num(worst));
    Ok(out)
}

fn robustness(cfg: &ExperimentConfig) -> Result<ExperimentOutput, CliError> {
    let c = cfg.float("c");
    let env_max = cfg.uint("N");
    let n = cfg.uint("n");
    let (g1, g2) = (cfg.float("gamma1"), cfg.float("gamma2"));
    if env_max <= n {
        return Err(CliError::Config(format!("parameter 'N': must exceed n = {n}")));
    }
    let mut out = ExperimentOutput::new(&["N", "core", "log_ratio", "ratio", "brute_ratio"]);
    let mut last = None;
    for env_n in n + 1..=env_max {
        let model = RobustnessModel::with_branch_probability(0.5, env_n, c)?
            .with_collapse(n, Gammas::Uniform(g1), Gammas::Uniform(g2))?
            .with_form(form(cfg));
        let lr = log_robustness_ratio(&model)?;
        let brute = match brute_force_ratio(&model) {
            Ok(r) => cell(r),
            Err(crate::Error::TooLargeForOracle { .. }) => String::new(),
            Err(e) => return Err(e.into()),
        };
        out.row(vec![cell(env_n), cell(env_n - n), cell(lr), cell(lr.exp()), brute]);
        last = Some(lr);
    }
    let lr = last.expect("at least one row");
    out.put("log_ratio", num(lr));
    out.put("ratio", num(lr.exp()));
    out.put("slope_expected", num(-2.0 * c.ln()));
    out.put("classical", json!(lr >= DEFAULT_CLASSICAL_THRESHOLD.ln()));
    Ok(out)
}

fn threshold(cfg: &ExperimentConfig) -> Result<ExperimentOutput, CliError> {
    let c = cfg.float("c");
    let n = cfg.uint("n");
    let g1 = Gammas::Uniform(cfg.float("gamma1"));
    let g2 = Gammas::Uniform(cfg.float("gamma2"));
    let f = form(cfg);
    let mut out = ExperimentOutput::new(&["target", "N", "log_ratio_at_N", "log_ratio_below"]);
    let mut results = Vec::new();
    for &target in cfg.float_list("targets") {
        let env_n = classical_threshold(n, c, &g1, &g2, target, f)?;
        let at = |k: u64| -> Result<f64, CliError> {
            let m = RobustnessModel::with_branch_probability(0.5, k, c)?
                .with_collapse(n, g1.clone(), g2.clone())?
                .with_form(f);
            Ok(log_robustness_ratio(&m)?)
        };
        let here = at(env_n)?;
        let below = if env_n > n + 1 { cell(at(env_n - 1)?) } else { String::new() };
        out.row(vec![cell(target), cell(env_n), cell(here), below]);
        results.push(json!({ "target": target, "N": env_n }));
    }
    out.put("thresholds", Value::Array(results));
    Ok(out)
}

fn decay(cfg: &ExperimentConfig) -> Result<ExperimentOutput, CliError> {
    let n0 = cfg.uint("N0");
    let lifetime = cfg.float("T");
    let t_max = cfg.float("t_max");
    let steps = cfg.uint("steps");
    let c = cfg.float("c");
    if steps == 0 || !(t_max > 0.0) {
        return Err(CliError::Config("parameters 'steps' and 't_max' must be positive".into()));
    }
    if !(c > 0.0 && c < 1.0) {
        return Err(CliError::Config(format!("parameter 'c': must lie in (0, 1), got {c}")));
    }
    let mut out = ExperimentOutput::new(&["t", "core", "log_ratio"]);
    let mut crossing = None;
    for k in 0..=steps {
        let t = t_max * k as f64 / steps as f64;
        let core = core_decay(n0, lifetime, t)?;
        let lr = -2.0 * c.ln() * core;
        if crossing.is_none() && lr < DEFAULT_CLASSICAL_THRESHOLD.ln() {
            crossing = Some(t);
        }
        out.row(vec![cell(t), cell(core), cell(lr)]);
    }
    out.put("core_final", num(core_decay(n0, lifetime, t_max)?));
    out.put("first_t_below_classical", crossing.map(num).unwrap_or(Value::Null));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(e: Experiment, params: &[(&str, &str)]) -> ExperimentOutput {
        let mut cfg = ExperimentConfig::with_defaults(e, 7);
        for (k, v) in params {
            cfg.set(k, v).unwrap();
        }
        execute(&cfg).unwrap()
    }

    #[test]
    fn born_summary_within_band() {
        let out = run(Experiment::Born, &[("trials", "20000")]);
        assert_eq!(out.rows.len(), 20000);
        assert_eq!(out.summary["within_band"], json!(true));
        let fb = run(Experiment::Born, &[("trials", "20000"), ("source", "final-boundary")]);
        assert_eq!(fb.summary["within_band"], json!(true));
    }

    #[test]
    fn convergence_slope() {
        let out = run(Experiment::Convergence, &[]);
        let slope = out.summary["slope"].as_f64().unwrap();
        assert!((slope + 0.5).abs() < 0.01);
    }

    #[test]
    fn robustness_has_brute_column_when_small() {
        let out = run(Experiment::Robustness, &[("N", "12"), ("n", "2")]);
        assert!(out.rows.iter().all(|r| !r[4].is_empty()));
        let out = run(Experiment::Robustness, &[]);
        assert!(out.rows.last().unwrap()[4].is_empty());
        let ratio = out.summary["ratio"].as_f64().unwrap();
        assert!((ratio - 23.59).abs() < 0.01);
    }

    #[test]
    fn threshold_default_is_66() {
        let out = run(Experiment::Threshold, &[]);
        assert_eq!(out.rows[0][1], "66");
    }

    #[test]
    fn small_experiments_run() {
        let out = run(Experiment::Commutator, &[("Nmax", "6")]);
        assert!(out.summary["max_defect"].as_f64().unwrap() < 1e-12);
        let out = run(Experiment::Decay, &[("steps", "10")]);
        assert_eq!(out.rows.len(), 11);
        let out = run(Experiment::WeakValue, &[("accepted", "2000"), ("g_over_sigma", "0.1")]);
        assert_eq!(out.rows.len(), 2000);
    }
}
