//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::f64::consts::PI;
use std::process::Command;
use std::time::{Duration, Instant};

use tsvf_sim::ensemble::{
    average_operator_residual, average_spin_commutator, brute_force_average, brute_force_spin_commutator,
    commute_on_state, deterministic_basis, loglog_slope, EnsembleSpec,
};
use tsvf_sim::measurement::{weak_estimate_accepted, weak_value, StrongMeasurement, TwoState};
use tsvf_sim::pointer::{couple, readout_density};
use tsvf_sim::twotime::{
    brute_force_ratio, classical_threshold, log_robustness_ratio, robustness_ratio, select_by_final,
    simulate_universes, BranchLabel, FinalBoundary, Gammas, RatioForm, RobustnessModel,
};
use tsvf_sim::{HermitianOperator, SeedStream, StateVector};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg)
    }
}

fn e<E: std::fmt::Display>(err: E) -> String {
    err.to_string()
}

fn anomalous_pair() -> TwoState {
    let post = StateVector::from_real(&[(PI / 8.0).cos(), -(PI / 8.0).sin()]).unwrap();
    TwoState::new(&StateVector::plus(), &post).unwrap()
}

fn born_statistics() -> Check {
    let psi = StateVector::from_real(&[0.6, 0.8]).map_err(e)?;
    let m = StrongMeasurement::new(&psi, &HermitianOperator::pauli_z()).map_err(e)?;
    let streams = SeedStream::new(20_240_601);
    let trials = 100_000u64;
    let plus = (0..trials)
        .filter(|&t| m.measure(&mut streams.trial(t)).outcome > 0.0)
        .count();
    let f = plus as f64 / trials as f64;
    let band = 3.0 * (0.36f64 * 0.64 / trials as f64).sqrt();
    ensure((f - 0.36).abs() <= band, format!("frequency {f} outside 0.36 ± {band:.4}"))?;
    Ok(format!("frequency {f:.5}, band ±{band:.4}"))
}

fn weak_value_shift() -> Check {
    let ts = anomalous_pair();
    let a = HermitianOperator::pauli_z();
    let wv = weak_value(&ts, &a).map_err(e)?.re;
    let g = 0.01;
    let est = weak_estimate_accepted(&ts, &a, g, 1.0, 1_000_000, 7).map_err(e)?;
    let (mean, stderr) = (est.mean / g, est.stderr / g);
    ensure((wv - 2.414_213_562_373_095).abs() < 1e-12, format!("weak value {wv}"))?;
    ensure(
        (mean - wv).abs() <= 4.0 * stderr,
        format!("mean q/g {mean} vs {wv}, stderr {stderr}"),
    )?;
    ensure(mean > 1.0, format!("mean q/g {mean} not outside [-1, 1]"))?;
    Ok(format!(
        "mean q/g {mean:.4} ± {stderr:.4} (weak value {wv:.4}), acceptance {:.4}",
        est.acceptance_rate
    ))
}

fn first_order_convergence() -> Check {
    let ts = anomalous_pair();
    let a = HermitianOperator::pauli_z();
    let wv = weak_value(&ts, &a).map_err(e)?.re;
    let bias = |g: f64| -> Result<f64, String> {
        let j = couple(ts.forward(), &a, g, 1.0).map_err(e)?;
        let d = readout_density(&j, Some(ts.backward())).map_err(e)?;
        Ok((d.mean() / g - wv).abs())
    };
    let (coarse, fine) = (bias(0.1)?, bias(0.01)?);
    let ratio = coarse / fine;
    ensure(
        (100.0 / 3.0..=300.0).contains(&ratio),
        format!("bias ratio {ratio} not within a factor 3 of 100"),
    )?;
    Ok(format!("bias {coarse:.3e} -> {fine:.3e}, ratio {ratio:.1}"))
}

fn average_operator_scaling() -> Check {
    let a = HermitianOperator::pauli_z();
    let plus = StateVector::plus();
    let ns = [100u64, 1_000, 10_000, 100_000];
    let mut res = Vec::new();
    for &n in &ns {
        res.push(average_operator_residual(&a, &EnsembleSpec::identical(&plus, n).map_err(e)?).map_err(e)?.residual);
    }
    let xs: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
    let slope = loglog_slope(&xs, &res);
    ensure((slope + 0.5).abs() <= 0.01, format!("slope {slope}"))?;
    let spec = EnsembleSpec::identical(&plus, 4).map_err(e)?;
    let brute = brute_force_average(&a, &spec).map_err(e)?;
    let closed = average_operator_residual(&a, &spec).map_err(e)?;
    ensure(
        (brute.residual - closed.residual).abs() <= 1e-10 && (brute.residual - 0.5).abs() <= 1e-10,
        format!("N=4 residual brute {} closed {}", brute.residual, closed.residual),
    )?;
    Ok(format!("slope {slope:.6}, N=4 residual {:.12}", brute.residual))
}

fn deterministic_operator_count() -> Check {
    let mut rng = tsvf_sim::rng::seeded(99);
    let mut sizes = Vec::new();
    let mut worst: f64 = 0.0;
    for (d, want) in [(2usize, 2usize), (3, 5), (4, 10)] {
        let psi = StateVector::random(d, &mut rng);
        let basis = deterministic_basis(&psi).map_err(e)?;
        ensure(basis.len() == want, format!("d={d}: {} operators, expected {want}", basis.len()))?;
        for x in &basis {
            for y in &basis {
                worst = worst.max(commute_on_state(x, y, &psi).map_err(e)?);
            }
        }
        sizes.push(basis.len());
    }
    ensure(worst <= 1e-10, format!("max ‖[A_i,A_j]ψ‖ = {worst:e}"))?;
    Ok(format!("sizes {sizes:?}, max commutator on state {worst:.2e}"))
}

fn commutator_identity() -> Check {
    let mut worst: f64 = 0.0;
    for n in 1..=10usize {
        let check = brute_force_spin_commutator(n).map_err(e)?;
        ensure(
            (check.scale - average_spin_commutator(n as u64)).abs() <= 1e-12,
            format!("N={n}: scale {} vs {}", check.scale, average_spin_commutator(n as u64)),
        )?;
        worst = worst.max(check.max_defect);
    }
    ensure(worst <= 1e-12, format!("max entrywise defect {worst:e}"))?;
    let mut prev = f64::INFINITY;
    for k in 0..=6 {
        let s = average_spin_commutator(10u64.pow(k));
        ensure(s < prev, "closed-form scale not decreasing".into())?;
        prev = s;
    }
    ensure(prev < 1e-6, format!("scale at N=1e6 is {prev:e}"))?;
    Ok(format!("max defect {worst:.2e}, scale(1e6) {prev:.1e}"))
}

fn robustness() -> Check {
    let g = || Gammas::Uniform(0.8);
    let model = |c: f64, env_n: u64, n: u64| {
        RobustnessModel::with_branch_probability(0.5, env_n, c)
            .and_then(|m| m.with_collapse(n, g(), g()))
            .map_err(e)
    };
    let r = robustness_ratio(&model(0.9, 20, 5)?).map_err(e)?;
    ensure((r - 23.59).abs() <= 0.01, format!("ratio {r}"))?;
    let small = model(0.9, 8, 2)?;
    let (closed, brute) = (
        robustness_ratio(&small).map_err(e)?,
        brute_force_ratio(&small).map_err(e)?,
    );
    ensure((brute / closed - 1.0).abs() <= 1e-9, format!("brute {brute} vs closed {closed}"))?;
    let c: f64 = 0.9;
    let n = 5;
    let xs: Vec<f64> = (n + 1..=n + 40).map(|k| (k - n) as f64).collect();
    let ys: Vec<f64> = (n + 1..=n + 40)
        .map(|k| model(c, k, n).and_then(|m| log_robustness_ratio(&m).map_err(e)))
        .collect::<Result<_, _>>()?;
    let mx = xs.iter().sum::<f64>() / xs.len() as f64;
    let my = ys.iter().sum::<f64>() / ys.len() as f64;
    let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / xs.iter().map(|x| (x - mx) * (x - mx)).sum::<f64>();
    let max_dev = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (my + slope * (x - mx) - y).abs())
        .fold(0.0, f64::max);
    ensure(
        (slope + 2.0 * c.ln()).abs() <= 1e-9 && max_dev <= 1e-9,
        format!("slope {slope} vs {}, deviation {max_dev:e}", -2.0 * c.ln()),
    )?;
    Ok(format!("ratio {r:.4}, brute/closed − 1 = {:.1e}, slope {slope:.6}", brute / closed - 1.0))
}

fn two_time_selection() -> Check {
    let model = RobustnessModel::with_branch_probability(0.36, 40, 0.9).map_err(e)?;
    for label in [BranchLabel::I, BranchLabel::II] {
        let sel = select_by_final(&model, &FinalBoundary::for_branch(label)).map_err(e)?;
        ensure(sel.p_wrong == 0.0, format!("p_wrong {} for {label:?}", sel.p_wrong))?;
    }
    let universes = 100_000u64;
    let run = simulate_universes(&model, universes, 11).map_err(e)?;
    let f = run.frequency(BranchLabel::I);
    let band = 3.0 * (0.36f64 * 0.64 / universes as f64).sqrt();
    ensure((f - 0.36).abs() <= band, format!("branch-I frequency {f} outside 0.36 ± {band:.4}"))?;
    Ok(format!("p_wrong = 0, branch-I frequency {f:.5}"))
}

fn threshold() -> Check {
    let u = Gammas::Uniform(1.0);
    let n = classical_threshold(0, 0.9, &u, &u, 1e6, RatioForm::Squared).map_err(e)?;
    ensure(n == 66, format!("threshold {n}"))?;
    let ratio = |env_n| {
        RobustnessModel::with_branch_probability(0.5, env_n, 0.9)
            .and_then(|m| robustness_ratio(&m))
            .map_err(e)
    };
    let (below, at) = (ratio(65)?, ratio(66)?);
    ensure(below < 1e6 && 1e6 <= at, format!("ratio(65) {below}, ratio(66) {at}"))?;
    Ok(format!("N = {n}, ratio(65) {below:.4e}, ratio(66) {at:.4e}"))
}

fn reproducibility() -> Check {
    let bin = env!("CARGO_BIN_EXE_tsvf-sim");
    let dir = tempfile::tempdir().map_err(e)?;
    let runs: [(&str, &[&str]); 7] = [
        ("born", &["trials=20000"]),
        ("weakvalue", &["accepted=5000", "g_over_sigma=0.1"]),
        ("convergence", &["noise=0.05", "trials=4", "Ns=10,100"]),
        ("commutator", &["Nmax=6"]),
        ("robustness", &["N=12", "n=2"]),
        ("threshold", &["targets=10,1000000"]),
        ("decay", &[]),
    ];
    for (exp, params) in runs {
        let mut outputs = Vec::new();
        for attempt in 0..2 {
            let path = dir.path().join(format!("{exp}-{attempt}.csv"));
            let mut cmd = Command::new(bin);
            cmd.args(["run", "--experiment", exp, "--seed", "42", "--out"]).arg(&path);
            for p in params {
                cmd.args(["--param", p]);
            }
            // thread count must not change the bytes
            cmd.env("TSVF_SIM_THREADS", if attempt == 0 { "1" } else { "0" });
            let status = cmd.status().map_err(e)?;
            ensure(status.success(), format!("{exp}: exit {status}"))?;
            outputs.push(std::fs::read(&path).map_err(e)?);
        }
        ensure(outputs[0] == outputs[1], format!("{exp}: CSV bytes differ between runs"))?;
    }
    Ok("7 experiments byte-identical across runs and thread counts".into())
}

fn main() {
    let criteria: [(&str, fn() -> Check, Duration); 10] = [
        ("born statistics", born_statistics, Duration::from_secs(5)),
        ("weak value pointer shift", weak_value_shift, Duration::from_secs(60)),
        ("first-order convergence", first_order_convergence, Duration::from_secs(1)),
        ("average-operator scaling", average_operator_scaling, Duration::from_secs(10)),
        ("deterministic-operator count", deterministic_operator_count, Duration::from_secs(1)),
        ("commutator identity", commutator_identity, Duration::from_secs(30)),
        ("robustness ratio", robustness, Duration::from_secs(10)),
        ("two-time selection", two_time_selection, Duration::from_secs(10)),
        ("classical threshold", threshold, Duration::from_secs(1)),
        ("reproducibility", reproducibility, Duration::from_secs(120)),
    ];
    let mut failed = 0;
    for (i, (name, check, budget)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = check();
        let elapsed = start.elapsed();
        let outcome = match result {
            Ok(detail) if elapsed <= *budget => Ok(detail),
            Ok(detail) => Err(format!("{detail}; took {elapsed:.2?} over budget {budget:?}")),
            Err(msg) => Err(msg),
        };
        match outcome {
            Ok(detail) => println!("PASS  {:>2}  {name}: {detail} [{elapsed:.2?}]", i + 1),
            Err(msg) => {
                failed += 1;
                println!("FAIL  {:>2}  {name}: {msg} [{elapsed:.2?}]", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
