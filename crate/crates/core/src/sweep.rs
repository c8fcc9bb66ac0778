//! Parameter sweeps over scenarios, written as CSV.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::build_markov_chain;
use crate::confusion::{cm1, from_precision_recall, ConfusionMatrix, SCENARIO_LABELS};
use crate::engine::{check, EngineConfig, EngineKind};
use crate::io::{format_sig, load_confusion, ConfigError};
use crate::logic::{parse, resolve_formula};
use crate::scenario::{make_controller, AgentState, EnvClass, ScenarioParams, StopSemantics};

/// Precision/recall pairs ordered by increasing recall (and falling precision).
pub const DEFAULT_PR_PAIRS: [(f64, f64); 6] = [(0.95, 0.5), (0.9, 0.6), (0.85, 0.7), (0.8, 0.8), (0.7, 0.9), (0.6, 0.95)];

pub const CSV_HEADER: [&str; 13] = [
    "env",
    "v0",
    "v_max",
    "p",
    "r",
    "cm",
    "formula",
    "probability",
    "engine",
    "residual",
    "chain_states",
    "wall_time_ms",
    "error",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FormulaSpec {
    One(String),
    PerEnv(BTreeMap<EnvClass, String>),
}

impl FormulaSpec {
    pub fn for_env(&self, env: EnvClass) -> Option<&str> {
        match self {
            FormulaSpec::One(f) => Some(f),
            FormulaSpec::PerEnv(m) => m.get(&env).map(String::as_str),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PairSpec {
    /// `"default"` selects [`DEFAULT_PR_PAIRS`].
    Named(String),
    Pairs(Vec<(f64, f64)>),
}

/// A sweep description. Exactly one of `cm` and `pr` may be set; neither
/// means CM1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(rename = "N", default = "default_road")]
    pub road_length: u32,
    #[serde(default = "default_sidewalk")]
    pub k: u32,
    pub v0: Vec<u32>,
    pub v_max: Vec<u32>,
    pub env: Vec<EnvClass>,
    /// `"cm1"`, `"identity"` or a path to a confusion-matrix JSON file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cm: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pr: Option<PairSpec>,
    pub formula: FormulaSpec,
    #[serde(default)]
    pub semantics: StopSemantics,
    #[serde(default = "default_engine")]
    pub engine: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    /// One CSV per environment class, named `<stem>_<env>.csv`.
    #[serde(default)]
    pub split_by_env: bool,
    /// Fill `wall_time_ms`; off by default so reruns are byte-identical.
    #[serde(default)]
    pub timing: bool,
}

fn default_road() -> u32 {
    65
}

fn default_sidewalk() -> u32 {
    57
}

fn default_engine() -> String {
    "linear".into()
}

impl SweepSpec {
    /// Fig. 3: every env, `v_max` 1..10, `v0` 1..`v_max`, CM1.
    pub fn fig3() -> Self {
        Self {
            road_length: 65,
            k: 57,
            v0: (1..=10).collect(),
            v_max: (1..=10).collect(),
            env: EnvClass::ALL.to_vec(),
            cm: Some("cm1".into()),
            pr: None,
            formula: default_formulas(),
            semantics: StopSemantics::Absorb,
            engine: default_engine(),
            output: Some("fig3.csv".into()),
            split_by_env: true,
            timing: false,
        }
    }

    /// Fig. 4: `v_max` 5, `v0` 1..5, the default precision/recall pairs.
    pub fn fig4() -> Self {
        Self {
            v0: (1..=5).collect(),
            v_max: vec![5],
            cm: None,
            pr: Some(PairSpec::Named("default".into())),
            output: Some("fig4.csv".into()),
            ..Self::fig3()
        }
    }

    pub fn load(file: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(file).map_err(|e| {
            ConfigError::Format(match e.kind() {
                std::io::ErrorKind::NotFound => crate::io::FormatError::Missing { file: file.to_path_buf() },
                _ => crate::io::FormatError::Io {
                    file: file.to_path_buf(),
                    source: e,
                },
            })
        })?;
        let mut spec: Self = serde_json::from_str(&text).map_err(|source| ConfigError::Json {
            file: file.to_path_buf(),
            source,
        })?;
        // Relative paths inside the spec are relative to the spec itself.
        let base = file.parent().unwrap_or(Path::new(""));
        if let Some(cm) = &spec.cm {
            if !matches!(cm.as_str(), "cm1" | "identity") && Path::new(cm).is_relative() {
                spec.cm = Some(base.join(cm).to_string_lossy().into_owned());
            }
        }
        if let Some(out) = &spec.output {
            if out.is_relative() {
                spec.output = Some(base.join(out));
            }
        }
        Ok(spec)
    }
}

/// φ2 for a pedestrian ("stops"), φ1 otherwise ("does not stop").
pub fn default_formulas() -> FormulaSpec {
    FormulaSpec::PerEnv(BTreeMap::from([
        (EnvClass::Ped, "phi2".into()),
        (EnvClass::Obj, "phi1".into()),
        (EnvClass::Empty, "phi1".into()),
    ]))
}

#[derive(Debug, Clone)]
struct Perception {
    cm: ConfusionMatrix,
    id: String,
    pr: Option<(f64, f64)>,
}

fn perceptions(spec: &SweepSpec) -> Result<Vec<Perception>, ConfigError> {
    match (&spec.cm, &spec.pr) {
        (Some(_), Some(_)) => Err(ConfigError::Invalid("set either `cm` or `pr`, not both".into())),
        (None, Some(pairs)) => {
            let pairs: Vec<(f64, f64)> = match pairs {
                PairSpec::Named(n) if n == "default" => DEFAULT_PR_PAIRS.to_vec(),
                PairSpec::Named(n) => return Err(ConfigError::Invalid(format!("unknown pair list `{n}`"))),
                PairSpec::Pairs(p) => p.clone(),
            };
            if pairs.is_empty() {
                return Err(ConfigError::Invalid("`pr` is empty".into()));
            }
            pairs
                .into_iter()
                .map(|(p, r)| {
                    Ok(Perception {
                        cm: from_precision_recall(p, r)?,
                        id: "pr".into(),
                        pr: Some((p, r)),
                    })
                })
                .collect()
        }
        (cm, None) => {
            let id = cm.clone().unwrap_or_else(|| "cm1".into());
            let matrix = match id.as_str() {
                "cm1" => cm1(),
                "identity" => ConfusionMatrix::identity(&SCENARIO_LABELS),
                path => load_confusion(Path::new(path))?,
            };
            Ok(vec![Perception { cm: matrix, id, pr: None }])
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub env: EnvClass,
    pub v0: u32,
    pub v_max: u32,
    pub p: Option<f64>,
    pub r: Option<f64>,
    pub cm: String,
    pub formula: String,
    pub probability: Option<f64>,
    pub engine: EngineKind,
    pub residual: Option<f64>,
    pub chain_states: Option<usize>,
    pub wall_time_ms: Option<f64>,
    pub error: Option<String>,
}

impl ResultRow {
    pub fn record(&self) -> [String; 13] {
        let num = |x: Option<f64>| x.map(|v| format_sig(v, 12)).unwrap_or_default();
        [
            self.env.to_string(),
            self.v0.to_string(),
            self.v_max.to_string(),
            num(self.p),
            num(self.r),
            self.cm.clone(),
            self.formula.clone(),
            num(self.probability),
            self.engine.to_string(),
            num(self.residual),
            self.chain_states.map(|n| n.to_string()).unwrap_or_default(),
            self.wall_time_ms.map(|t| format!("{t:.3}")).unwrap_or_default(),
            self.error.clone().unwrap_or_default(),
        ]
    }
}

struct Point<'a> {
    env: EnvClass,
    v_max: u32,
    v0: u32,
    perception: &'a Perception,
    formula: &'a str,
}

/// Evaluates every grid point, in parallel, returning rows in declared order:
/// env, then `v_max`, then perception, then `v0`. Points with `v0 > v_max`
/// are skipped; per-point failures land in the `error` column.
pub fn run_sweep(spec: &SweepSpec, base: &EngineConfig) -> Result<Vec<ResultRow>, ConfigError> {
    for (name, empty) in [("v0", spec.v0.is_empty()), ("v_max", spec.v_max.is_empty()), ("env", spec.env.is_empty())] {
        if empty {
            return Err(ConfigError::Invalid(format!("`{name}` range is empty")));
        }
    }
    let engine: EngineKind = spec.engine.parse().map_err(|e: crate::engine::EngineError| ConfigError::Invalid(e.to_string()))?;
    let cfg = EngineConfig { engine, ..base.clone() };
    cfg.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
    let perceptions = perceptions(spec)?;
    for &env in &spec.env {
        let f = spec
            .formula
            .for_env(env)
            .ok_or_else(|| ConfigError::Invalid(format!("no formula for env `{env}`")))?;
        if !matches!(f.trim(), "phi1" | "phi2" | "phi3") {
            parse(f).map_err(|e| ConfigError::Invalid(format!("formula `{f}`: {e}")))?;
        }
    }

    let params: HashMap<u32, Result<ScenarioParams, String>> = spec
        .v_max
        .iter()
        .map(|&vm| {
            let p = ScenarioParams::new(spec.road_length, spec.k, vm, spec.semantics).map_err(|e| e.to_string());
            (vm, p)
        })
        .collect();

    let mut points = Vec::new();
    for &env in &spec.env {
        let formula = spec.formula.for_env(env).expect("checked above");
        for &v_max in &spec.v_max {
            for perception in &perceptions {
                for &v0 in spec.v0.iter().filter(|&&v0| v0 <= v_max) {
                    points.push(Point {
                        env,
                        v_max,
                        v0,
                        perception,
                        formula,
                    });
                }
            }
        }
    }

    Ok(points
        .par_iter()
        .map(|pt| {
            let mut row = ResultRow {
                env: pt.env,
                v0: pt.v0,
                v_max: pt.v_max,
                p: pt.perception.pr.map(|x| x.0),
                r: pt.perception.pr.map(|x| x.1),
                cm: pt.perception.id.clone(),
                formula: pt.formula.to_string(),
                probability: None,
                engine: cfg.engine,
                residual: None,
                chain_states: None,
                wall_time_ms: None,
                error: None,
            };
            let start = Instant::now();
            let outcome = (|| -> Result<(f64, f64, usize), String> {
                let params = params[&pt.v_max].as_ref().map_err(Clone::clone)?;
                let k = make_controller(params);
                let f = resolve_formula(pt.formula, params).map_err(|e| e.to_string())?;
                let chain = build_markov_chain(params, &k, &pt.perception.cm, pt.env, AgentState::new(1, pt.v0))
                    .map_err(|e| e.to_string())?;
                let r = check(&chain, &f, 0, &cfg).map_err(|e| e.to_string())?;
                Ok((r.probability, r.residual, chain.len()))
            })();
            match outcome {
                Ok((p, res, n)) => {
                    row.probability = Some(p);
                    row.residual = Some(res);
                    row.chain_states = Some(n);
                }
                Err(e) => row.error = Some(e),
            }
            if spec.timing {
                row.wall_time_ms = Some(start.elapsed().as_secs_f64() * 1e3);
            }
            row
        })
        .collect())
}

pub fn write_csv<W: Write>(rows: &[ResultRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for row in rows {
        w.write_record(row.record())?;
    }
    w.flush()?;
    Ok(())
}

pub fn csv_string(rows: &[ResultRow]) -> String {
    let mut buf = Vec::new();
    write_csv(rows, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("CSV is UTF-8")
}

/// Output files and their contents: one file, or one per env class.
pub fn render_outputs(spec: &SweepSpec, rows: &[ResultRow], fallback: &Path) -> Vec<(PathBuf, String)> {
    let out = spec.output.clone().unwrap_or_else(|| fallback.to_path_buf());
    if !spec.split_by_env {
        return vec![(out, csv_string(rows))];
    }
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "sweep".into());
    let dir = out.parent().unwrap_or(Path::new(""));
    spec.env
        .iter()
        .map(|&env| {
            let part: Vec<ResultRow> = rows.iter().filter(|r| r.env == env).cloned().collect();
            (dir.join(format!("{stem}_{env}.csv")), csv_string(&part))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> SweepSpec {
        SweepSpec {
            road_length: 8,
            k: 6,
            v0: vec![1, 2],
            v_max: vec![1, 2],
            ..SweepSpec::fig3()
        }
    }

    #[test]
    fn row_order_and_skipping() {
        let rows = run_sweep(&tiny(), &EngineConfig::default()).unwrap();
        let keys: Vec<(EnvClass, u32, u32)> = rows.iter().map(|r| (r.env, r.v_max, r.v0)).collect();
        let mut want = Vec::new();
        for env in EnvClass::ALL {
            want.extend([(env, 1, 1), (env, 2, 1), (env, 2, 2)]);
        }
        assert_eq!(keys, want);
        assert!(rows.iter().all(|r| r.error.is_none() && r.wall_time_ms.is_none()));
    }

    #[test]
    fn reruns_are_identical() {
        let a = csv_string(&run_sweep(&tiny(), &EngineConfig::default()).unwrap());
        let b = csv_string(&run_sweep(&tiny(), &EngineConfig::default()).unwrap());
        assert_eq!(a, b);
        assert!(a.starts_with("env,v0,v_max,p,r,cm,formula,probability,engine,residual,chain_states,wall_time_ms,error\n"));
    }

    #[test]
    fn config_errors() {
        let mut s = tiny();
        s.v0.clear();
        assert!(matches!(run_sweep(&s, &EngineConfig::default()), Err(ConfigError::Invalid(_))));
        let s = SweepSpec { cm: None, pr: Some(PairSpec::Pairs(vec![(0.2, 0.9)])), ..tiny() };
        assert!(matches!(run_sweep(&s, &EngineConfig::default()), Err(ConfigError::Confusion(_))));
        let s = SweepSpec { formula: FormulaSpec::One("G(".into()), ..tiny() };
        assert!(run_sweep(&s, &EngineConfig::default()).is_err());
    }

    #[test]
    fn infeasible_points_are_recorded() {
        let s = SweepSpec { v_max: vec![1, 9], v0: vec![1], ..tiny() };
        let rows = run_sweep(&s, &EngineConfig::default()).unwrap();
        assert!(rows.iter().any(|r| r.v_max == 9 && r.error.is_some() && r.probability.is_none()));
        assert!(rows.iter().any(|r| r.v_max == 1 && r.probability.is_some()));
    }

    #[test]
    fn spec_json_round_trip() {
        let text = r#"{"v0": [1], "v_max": [1], "env": ["obj"], "formula": "phi1"}"#;
        let s: SweepSpec = serde_json::from_str(text).unwrap();
        assert_eq!((s.road_length, s.k, s.engine.as_str()), (65, 57, "linear"));
        let rows = run_sweep(&s, &EngineConfig::default()).unwrap();
        assert!((rows[0].probability.unwrap() - 13.0 / 15.0).abs() < 1e-12);
        let back: SweepSpec = serde_json::from_str(&serde_json::to_string(&SweepSpec::fig4()).unwrap()).unwrap();
        assert_eq!(back, SweepSpec::fig4());
    }

    #[test]
    fn split_outputs() {
        let rows = run_sweep(&tiny(), &EngineConfig::default()).unwrap();
        let spec = SweepSpec { output: Some("out/fig.csv".into()), ..tiny() };
        let files = render_outputs(&spec, &rows, Path::new("x.csv"));
        let names: Vec<String> = files.iter().map(|f| f.0.display().to_string()).collect();
        assert_eq!(names, ["out/fig_ped.csv", "out/fig_obj.csv", "out/fig_empty.csv"]);
        assert_eq!(files[0].1.lines().count(), 4);
    }
}
