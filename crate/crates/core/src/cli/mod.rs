//! Experiment runner behind the `tsvf-sim` binary.
//!
//! A run is fully described by an [`ExperimentConfig`]; identical configs
//! produce identical CSV bytes. Output files carry `#` meta lines with the
//! resolved config followed by a one-line header.

mod experiments;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

pub use experiments::ExperimentOutput;

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("runtime error: {0}")]
    Runtime(String),
    #[error("io error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Runtime(_) | CliError::Io(_) => EXIT_RUNTIME,
        }
    }
}

impl From<crate::Error> for CliError {
    fn from(e: crate::Error) -> Self {
        match e {
            crate::Error::InvalidParameter(_) => CliError::Config(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Experiment {
    Born,
    WeakValue,
    Convergence,
    Commutator,
    Robustness,
    Threshold,
    Decay,
}

impl Experiment {
    pub const ALL: [Experiment; 7] = [
        Experiment::Born,
        Experiment::WeakValue,
        Experiment::Convergence,
        Experiment::Commutator,
        Experiment::Robustness,
        Experiment::Threshold,
        Experiment::Decay,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Born => "born",
            Experiment::WeakValue => "weakvalue",
            Experiment::Convergence => "convergence",
            Experiment::Commutator => "commutator",
            Experiment::Robustness => "robustness",
            Experiment::Threshold => "threshold",
            Experiment::Decay => "decay",
        }
    }

    pub fn parse(name: &str) -> Result<Self, CliError> {
        Self::ALL.into_iter().find(|e| e.name() == name).ok_or_else(|| {
            let known: Vec<_> = Self::ALL.iter().map(|e| e.name()).collect();
            CliError::Config(format!("unknown experiment '{name}' (expected one of {})", known.join(", ")))
        })
    }

    pub fn description(self) -> &'static str {
        match self {
            Experiment::Born => "strong sigma_z measurements, or Born-weighted final boundaries",
            Experiment::WeakValue => "weak sigma_z readings on the anomalous pre/post-selected pair",
            Experiment::Convergence => "ensemble-average residual against the number of copies",
            Experiment::Commutator => "commutator of average spin components against N",
            Experiment::Robustness => "robustness ratio against environment size",
            Experiment::Threshold => "smallest environment size reaching a ratio target",
            Experiment::Decay => "exponential decay of the uncollapsed core and its log ratio",
        }
    }

    pub fn params(self) -> &'static [ParamSpec] {
        experiments::schema(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    UInt,
    Float,
    UIntList,
    FloatList,
    Choice(&'static [&'static str]),
}

impl ParamKind {
    fn describe(self) -> String {
        match self {
            ParamKind::UInt => "uint".into(),
            ParamKind::Float => "float".into(),
            ParamKind::UIntList => "uint list".into(),
            ParamKind::FloatList => "float list".into(),
            ParamKind::Choice(opts) => opts.join("|"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: &'static str,
    pub kind: ParamKind,
    pub default: &'static str,
    pub help: &'static str,
}

/// A typed parameter value.
#[derive(Debug, Clone, PartialEq)]
pub enum ParamValue {
    UInt(u64),
    Float(f64),
    UIntList(Vec<u64>),
    FloatList(Vec<f64>),
    Choice(String),
}

impl ParamValue {
    fn parse(spec: &ParamSpec, raw: &str) -> Result<Self, CliError> {
        let bad = |what: &str| {
            CliError::Config(format!("parameter '{}': expected {what}, got '{raw}'", spec.name))
        };
        let uint = |s: &str| s.trim().parse::<u64>().map_err(|_| bad("an unsigned integer"));
        let float = |s: &str| match s.trim().parse::<f64>() {
            Ok(x) if x.is_finite() => Ok(x),
            _ => Err(bad("a finite number")),
        };
        let list = |s: &str| -> Vec<String> {
            s.trim_matches(|ch| ch == '[' || ch == ']')
                .split(',')
                .map(|p| p.trim().to_string())
                .filter(|p| !p.is_empty())
                .collect()
        };
        Ok(match spec.kind {
            ParamKind::UInt => ParamValue::UInt(uint(raw)?),
            ParamKind::Float => ParamValue::Float(float(raw)?),
            ParamKind::UIntList => {
                let v = list(raw).iter().map(|s| uint(s)).collect::<Result<Vec<_>, _>>()?;
                if v.is_empty() {
                    return Err(bad("a non-empty list"));
                }
                ParamValue::UIntList(v)
            }
            ParamKind::FloatList => {
                let v = list(raw).iter().map(|s| float(s)).collect::<Result<Vec<_>, _>>()?;
                if v.is_empty() {
                    return Err(bad("a non-empty list"));
                }
                ParamValue::FloatList(v)
            }
            ParamKind::Choice(opts) => {
                let s = raw.trim();
                if !opts.contains(&s) {
                    return Err(bad(&format!("one of {}", opts.join("|"))));
                }
                ParamValue::Choice(s.to_string())
            }
        })
    }

    fn to_json(&self) -> Value {
        match self {
            ParamValue::UInt(u) => json!(u),
            ParamValue::Float(x) => json!(x),
            ParamValue::UIntList(v) => json!(v),
            ParamValue::FloatList(v) => json!(v),
            ParamValue::Choice(s) => json!(s),
        }
    }
}

/// Fully resolved run description.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub seed: u64,
    /// Every schema parameter, defaults filled in.
    pub params: BTreeMap<String, ParamValue>,
    /// CSV destination; standard output when absent.
    pub output_path: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Config with every parameter at its default.
    pub fn with_defaults(experiment: Experiment, seed: u64) -> Self {
        let params = experiment
            .params()
            .iter()
            .map(|p| {
                let v = ParamValue::parse(p, p.default).expect("schema default parses");
                (p.name.to_string(), v)
            })
            .collect();
        Self {
            experiment,
            seed,
            params,
            output_path: None,
        }
    }

    /// Parses and sets one parameter, rejecting unknown keys.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<(), CliError> {
        let spec = self.experiment.params().iter().find(|p| p.name == key).ok_or_else(|| {
            CliError::Config(format!(
                "unknown parameter '{key}' for experiment '{}'",
                self.experiment.name()
            ))
        })?;
        let v = ParamValue::parse(spec, raw)?;
        self.params.insert(key.to_string(), v);
        Ok(())
    }

    /// Resolved config as JSON; the output path is not part of it.
    pub fn to_json(&self) -> Value {
        let params: serde_json::Map<String, Value> =
            self.params.iter().map(|(k, v)| (k.clone(), v.to_json())).collect();
        json!({
            "experiment": self.experiment.name(),
            "seed": self.seed,
            "params": params,
        })
    }

    pub(crate) fn uint(&self, key: &str) -> u64 {
        match self.params.get(key) {
            Some(ParamValue::UInt(u)) => *u,
            other => panic!("parameter {key} is not an unsigned integer: {other:?}"),
        }
    }

    pub(crate) fn float(&self, key: &str) -> f64 {
        match self.params.get(key) {
            Some(ParamValue::Float(x)) => *x,
            other => panic!("parameter {key} is not a number: {other:?}"),
        }
    }

    pub(crate) fn uint_list(&self, key: &str) -> &[u64] {
        match self.params.get(key) {
            Some(ParamValue::UIntList(v)) => v,
            other => panic!("parameter {key} is not an integer list: {other:?}"),
        }
    }

    pub(crate) fn float_list(&self, key: &str) -> &[f64] {
        match self.params.get(key) {
            Some(ParamValue::FloatList(v)) => v,
            other => panic!("parameter {key} is not a number list: {other:?}"),
        }
    }

    pub(crate) fn choice(&self, key: &str) -> &str {
        match self.params.get(key) {
            Some(ParamValue::Choice(s)) => s,
            other => panic!("parameter {key} is not a choice: {other:?}"),
        }
    }
}

/// Raw command-line inputs before resolution.
#[derive(Debug, Clone, Default)]
pub struct RunArgs {
    pub experiment: Option<String>,
    pub seed: Option<u64>,
    pub params: Vec<String>,
    pub config: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

/// Merges an optional TOML file with command-line flags; flags win.
///
/// File layout:
///
/// ```toml
/// experiment = "born"
/// seed = 7
/// out = "born.csv"
///
/// [params]
/// alpha2 = 0.36
/// trials = 100000
/// ```
pub fn resolve(args: &RunArgs) -> Result<ExperimentConfig, CliError> {
    let file = match &args.config {
        Some(path) => Some(read_config_file(path)?),
        None => None,
    };
    let file_ref = file.as_ref();

    let name = match (&args.experiment, file_ref.and_then(|f| f.experiment.clone())) {
        (Some(n), _) => n.clone(),
        (None, Some(n)) => n,
        (None, None) => return Err(CliError::Config("no experiment given (use --experiment)".into())),
    };
    let experiment = Experiment::parse(&name)?;
    let seed = args
        .seed
        .or(file_ref.and_then(|f| f.seed))
        .ok_or_else(|| CliError::Config("no seed given (use --seed)".into()))?;

    let mut cfg = ExperimentConfig::with_defaults(experiment, seed);
    if let Some(f) = file_ref {
        for (k, v) in &f.params {
            cfg.set(k, v)?;
        }
    }
    for p in &args.params {
        let (k, v) = p
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("parameter '{p}' is not of the form key=value")))?;
        cfg.set(k.trim(), v)?;
    }
    cfg.output_path = args.out.clone().or(file_ref.and_then(|f| f.out.clone()));
    Ok(cfg)
}

struct ConfigFile {
    experiment: Option<String>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    params: Vec<(String, String)>,
}

fn read_config_file(path: &Path) -> Result<ConfigFile, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config file {}: {e}", path.display())))?;
    let table: toml::Table = text
        .parse()
        .map_err(|e| CliError::Config(format!("config file {}: {e}", path.display())))?;
    let mut out = ConfigFile {
        experiment: None,
        seed: None,
        out: None,
        params: Vec::new(),
    };
    for (key, value) in &table {
        match (key.as_str(), value) {
            ("experiment", toml::Value::String(s)) => out.experiment = Some(s.clone()),
            ("seed", toml::Value::Integer(i)) if *i >= 0 => out.seed = Some(*i as u64),
            ("out", toml::Value::String(s)) => out.out = Some(PathBuf::from(s)),
            ("params", toml::Value::Table(t)) => {
                for (k, v) in t {
                    out.params.push((k.clone(), toml_scalar(k, v)?));
                }
            }
            _ => {
                return Err(CliError::Config(format!(
                    "config file {}: unexpected key '{key}'",
                    path.display()
                )))
            }
        }
    }
    Ok(out)
}

fn toml_scalar(key: &str, v: &toml::Value) -> Result<String, CliError> {
    Ok(match v {
        toml::Value::Integer(i) => i.to_string(),
        toml::Value::Float(x) => x.to_string(),
        toml::Value::String(s) => s.clone(),
        toml::Value::Array(items) => items
            .iter()
            .map(|item| toml_scalar(key, item))
            .collect::<Result<Vec<_>, _>>()?
            .join(","),
        _ => return Err(CliError::Config(format!("parameter '{key}': unsupported value type"))),
    })
}

/// Renders the CSV: meta lines, header, rows.
pub fn render_csv(cfg: &ExperimentConfig, out: &ExperimentOutput) -> String {
    let mut s = String::new();
    writeln!(s, "# tsvf-sim {}", env!("CARGO_PKG_VERSION")).unwrap();
    writeln!(s, "# config {}", cfg.to_json()).unwrap();
    writeln!(s, "{}", out.header.join(",")).unwrap();
    for row in &out.rows {
        writeln!(s, "{}", row.join(",")).unwrap();
    }
    s
}

/// Summary record written next to the CSV.
pub fn render_summary(cfg: &ExperimentConfig, out: &ExperimentOutput) -> String {
    let summary: serde_json::Map<String, Value> = out.summary.clone().into_iter().collect();
    let doc = json!({ "config": cfg.to_json(), "summary": summary });
    let mut s = serde_json::to_string_pretty(&doc).expect("summary serializes");
    s.push('\n');
    s
}

/// Path of the summary sidecar for a CSV path.
pub fn summary_path(csv: &Path) -> PathBuf {
    let mut name = csv.as_os_str().to_owned();
    name.push(".summary.json");
    PathBuf::from(name)
}

/// Computes the experiment without touching the filesystem.
pub fn execute(cfg: &ExperimentConfig) -> Result<ExperimentOutput, CliError> {
    experiments::execute(cfg)
}

/// Runs the experiment and writes its files. Without an output path the CSV
/// goes to standard output and the summary to standard error.
pub fn run(cfg: &ExperimentConfig) -> Result<ExperimentOutput, CliError> {
    let out = execute(cfg)?;
    let csv = render_csv(cfg, &out);
    let summary = render_summary(cfg, &out);
    match &cfg.output_path {
        Some(path) => {
            let io = |p: &Path, e: std::io::Error| CliError::Io(format!("cannot write {}: {e}", p.display()));
            std::fs::write(path, csv).map_err(|e| io(path, e))?;
            let sp = summary_path(path);
            std::fs::write(&sp, summary).map_err(|e| io(&sp, e))?;
        }
        None => {
            print!("{csv}");
            eprint!("{summary}");
        }
    }
    Ok(out)
}

/// Text printed by `tsvf-sim list`.
pub fn list_text() -> String {
    let mut s = String::new();
    for e in Experiment::ALL {
        writeln!(s, "{}: {}", e.name(), e.description()).unwrap();
        for p in e.params() {
            writeln!(
                s,
                "    {:<14} {:<22} default {:<24} {}",
                p.name,
                p.kind.describe(),
                p.default,
                p.help
            )
            .unwrap();
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(exp: &str, params: &[&str]) -> RunArgs {
        RunArgs {
            experiment: Some(exp.into()),
            seed: Some(1),
            params: params.iter().map(|s| s.to_string()).collect(),
            ..RunArgs::default()
        }
    }

    #[test]
    fn defaults_parse_for_every_experiment() {
        for e in Experiment::ALL {
            let cfg = ExperimentConfig::with_defaults(e, 0);
            assert_eq!(cfg.params.len(), e.params().len());
        }
    }

    #[test]
    fn unknown_names_are_config_errors() {
        let err = resolve(&args("nope", &[])).unwrap_err();
        assert_eq!(err.exit_code(), EXIT_CONFIG);
        let err = resolve(&args("born", &["bogus=1"])).unwrap_err();
        assert!(err.to_string().contains("bogus"));
        let err = resolve(&args("born", &["trials=abc"])).unwrap_err();
        assert!(err.to_string().contains("trials"));
        let err = resolve(&args("born", &["trials"])).unwrap_err();
        assert!(err.to_string().contains("trials"));
        let err = resolve(&args("born", &["source=weird"])).unwrap_err();
        assert!(err.to_string().contains("source"));
    }

    #[test]
    fn list_values_parse() {
        let cfg = resolve(&args("convergence", &["Ns=10, 20,30"])).unwrap();
        assert_eq!(cfg.uint_list("Ns"), &[10, 20, 30]);
        assert!(resolve(&args("convergence", &["Ns="])).is_err());
    }

    #[test]
    fn meta_line_excludes_output_path() {
        let mut a = args("decay", &[]);
        a.out = Some("somewhere.csv".into());
        let cfg = resolve(&a).unwrap();
        let meta = cfg.to_json().to_string();
        assert!(!meta.contains("somewhere"));
        assert!(meta.contains("\"experiment\":\"decay\""));
    }

    #[test]
    fn summary_path_appends_suffix() {
        assert_eq!(summary_path(Path::new("a/b.csv")), PathBuf::from("a/b.csv.summary.json"));
    }

    #[test]
    fn list_mentions_every_parameter() {
        let text = list_text();
        for e in Experiment::ALL {
            assert!(text.contains(e.name()));
            for p in e.params() {
                assert!(text.contains(p.name));
            }
        }
    }
}
