//! File formats: scenario and confusion-matrix JSON, explicit-state
//! `.tra`/`.lab`/`.sta` triples, a PRISM DTMC model and Graphviz DOT.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{validate_stochastic, MarkovChain};
use crate::confusion::{ConfusionError, ConfusionFile, ConfusionMatrix};
use crate::scenario::{AgentState, EnvClass, ScenarioError, ScenarioParams, StopSemantics, SystemState};

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{}: file not found", file.display())]
    Missing { file: PathBuf },
    #[error("{}:{line}: {message}", file.display())]
    Syntax { file: PathBuf, line: usize, message: String },
    #[error("{}: {message}", file.display())]
    Invalid { file: PathBuf, message: String },
    #[error("{}: {source}", file.display())]
    Io { file: PathBuf, source: std::io::Error },
}

impl FormatError {
    fn syntax(file: &Path, line: usize, message: impl Into<String>) -> Self {
        FormatError::Syntax {
            file: file.to_path_buf(),
            line,
            message: message.into(),
        }
    }

    fn invalid(file: &Path, message: impl Into<String>) -> Self {
        FormatError::Invalid {
            file: file.to_path_buf(),
            message: message.into(),
        }
    }
}

fn read(file: &Path) -> Result<String, FormatError> {
    fs::read_to_string(file).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => FormatError::Missing { file: file.to_path_buf() },
        _ => FormatError::Io {
            file: file.to_path_buf(),
            source: e,
        },
    })
}

fn write(file: &Path, text: &str) -> Result<(), FormatError> {
    fs::write(file, text).map_err(|e| FormatError::Io {
        file: file.to_path_buf(),
        source: e,
    })
}

/// `x` with `digits` significant digits, positional unless very small.
pub fn format_sig(x: f64, digits: usize) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    // The exponent after rounding to `digits` places decides the layout.
    let sci = format!("{:.*e}", digits - 1, x);
    let exp: i32 = sci[sci.find('e').expect("exponent") + 1..].parse().expect("integer exponent");
    if exp < -5 {
        return sci;
    }
    let decimals = (digits as i32 - 1 - exp).max(0) as usize;
    format!("{x:.decimals$}")
}

/// Scenario JSON: `{"N": 65, "k": 57, "v_max": 1, "v0": 1, "env": "obj"}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(rename = "N")]
    pub road_length: u32,
    pub k: u32,
    pub v_max: u32,
    pub v0: u32,
    pub env: EnvClass,
    #[serde(default)]
    pub stop_semantics: StopSemantics,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("{}: {source}", file.display())]
    Json { file: PathBuf, source: serde_json::Error },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Confusion(#[from] ConfusionError),
    #[error("{0}")]
    Invalid(String),
}

fn read_json<T: for<'de> Deserialize<'de>>(file: &Path) -> Result<T, ConfigError> {
    let text = read(file)?;
    serde_json::from_str(&text).map_err(|source| ConfigError::Json {
        file: file.to_path_buf(),
        source,
    })
}

impl ScenarioFile {
    pub fn load(file: &Path) -> Result<Self, ConfigError> {
        read_json(file)
    }

    /// Scenario parameters, optionally overriding the file's stop semantics.
    pub fn params(&self, semantics: Option<StopSemantics>) -> Result<ScenarioParams, ScenarioError> {
        ScenarioParams::new(
            self.road_length,
            self.k,
            self.v_max,
            semantics.unwrap_or(self.stop_semantics),
        )
    }

    pub fn init(&self) -> AgentState {
        AgentState::new(1, self.v0)
    }
}

pub fn load_confusion(file: &Path) -> Result<ConfusionMatrix, ConfigError> {
    Ok(read_json::<ConfusionFile>(file)?.into_matrix()?)
}

/// Label names in output order: `init` first, then lexicographic.
fn label_order(chain: &MarkovChain) -> Vec<&str> {
    let mut names: Vec<&str> = chain.labels().keys().map(String::as_str).collect();
    names.sort_by_key(|&n| (n != "init", n));
    names
}

pub fn tra_string(chain: &MarkovChain) -> String {
    let mut out = format!("STATES {} TRANSITIONS {}\n", chain.len(), chain.transition_count());
    for (i, row) in chain.rows().iter().enumerate() {
        for &(j, p) in row {
            let _ = writeln!(out, "{i} {j} {}", format_sig(p, 17));
        }
    }
    out
}

pub fn lab_string(chain: &MarkovChain) -> String {
    let names = label_order(chain);
    let header: Vec<String> = names.iter().enumerate().map(|(i, n)| format!("{i}=\"{n}\"")).collect();
    let mut per_state: Vec<Vec<usize>> = vec![Vec::new(); chain.len()];
    for (li, name) in names.iter().enumerate() {
        for &s in chain.label(name).unwrap_or(&[]) {
            per_state[s].push(li);
        }
    }
    let mut out = header.join(" ");
    out.push('\n');
    for (s, ls) in per_state.iter().enumerate() {
        if !ls.is_empty() {
            let ids: Vec<String> = ls.iter().map(usize::to_string).collect();
            let _ = writeln!(out, "{s}: {}", ids.join(" "));
        }
    }
    out
}

pub fn sta_string(chain: &MarkovChain) -> String {
    let mut out = String::from("(cell,speed)\n");
    for (i, s) in chain.states().iter().enumerate() {
        let _ = writeln!(out, "{i}:({},{})", s.agent.cell, s.agent.speed);
    }
    out
}

fn with_ext(prefix: &Path, ext: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

/// Writes `<prefix>.tra`, `<prefix>.lab` and `<prefix>.sta`.
pub fn write_explicit(chain: &MarkovChain, prefix: &Path) -> Result<Vec<PathBuf>, FormatError> {
    let files = vec![with_ext(prefix, "tra"), with_ext(prefix, "lab"), with_ext(prefix, "sta")];
    write(&files[0], &tra_string(chain))?;
    write(&files[1], &lab_string(chain))?;
    write(&files[2], &sta_string(chain))?;
    Ok(files)
}

fn parse_sta(file: &Path, text: &str) -> Result<Vec<AgentState>, FormatError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == "(cell,speed)" => {}
        Some((i, h)) => return Err(FormatError::syntax(file, i + 1, format!("expected header `(cell,speed)`, found `{h}`"))),
        None => return Err(FormatError::invalid(file, "empty file")),
    }
    let mut states = Vec::new();
    for (i, line) in lines {
        let bad = || FormatError::syntax(file, i + 1, format!("expected `index:(cell,speed)`, found `{line}`"));
        let (idx, tuple) = line.split_once(':').ok_or_else(bad)?;
        let idx: usize = idx.trim().parse().map_err(|_| bad())?;
        if idx != states.len() {
            return Err(FormatError::syntax(file, i + 1, format!("expected state {}, found {idx}", states.len())));
        }
        let inner = tuple.trim().strip_prefix('(').and_then(|t| t.strip_suffix(')')).ok_or_else(bad)?;
        let (c, v) = inner.split_once(',').ok_or_else(bad)?;
        let cell = c.trim().parse().map_err(|_| bad())?;
        let speed = v.trim().parse().map_err(|_| bad())?;
        states.push(AgentState::new(cell, speed));
    }
    Ok(states)
}

fn parse_tra(file: &Path, text: &str, n: usize) -> Result<Vec<Vec<(usize, f64)>>, FormatError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (hi, header) = lines.next().ok_or_else(|| FormatError::invalid(file, "empty file"))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    let (states, count) = match fields.as_slice() {
        ["STATES", s, "TRANSITIONS", m] => (
            s.parse::<usize>().map_err(|_| FormatError::syntax(file, hi + 1, "bad state count"))?,
            m.parse::<usize>().map_err(|_| FormatError::syntax(file, hi + 1, "bad transition count"))?,
        ),
        _ => {
            return Err(FormatError::syntax(
                file,
                hi + 1,
                format!("expected `STATES n TRANSITIONS m`, found `{header}`"),
            ))
        }
    };
    if states != n {
        return Err(FormatError::syntax(file, hi + 1, format!("{states} states, but the .sta file lists {n}")));
    }
    let mut rows = vec![Vec::new(); n];
    let mut seen = 0;
    for (i, line) in lines {
        let line_no = i + 1;
        let f: Vec<&str> = line.split_whitespace().collect();
        let [src, dst, prob] = f.as_slice() else {
            return Err(FormatError::syntax(file, line_no, format!("expected `src dst prob`, found `{line}`")));
        };
        let index = |t: &str| -> Result<usize, FormatError> {
            let v: usize = t
                .parse()
                .map_err(|_| FormatError::syntax(file, line_no, format!("bad state index `{t}`")))?;
            if v >= n {
                return Err(FormatError::syntax(file, line_no, format!("state {v} out of range")));
            }
            Ok(v)
        };
        let (s, d) = (index(src)?, index(dst)?);
        let p: f64 = prob
            .parse()
            .map_err(|_| FormatError::syntax(file, line_no, format!("bad probability `{prob}`")))?;
        if !(p > 0.0 && p <= 1.0) {
            return Err(FormatError::syntax(file, line_no, format!("probability {prob} outside (0, 1]")));
        }
        if rows[s].iter().any(|&(t, _)| t == d) {
            return Err(FormatError::syntax(file, line_no, format!("duplicate transition {s} -> {d}")));
        }
        rows[s].push((d, p));
        seen += 1;
    }
    if seen != count {
        return Err(FormatError::syntax(file, hi + 1, format!("header announces {count} transitions, found {seen}")));
    }
    Ok(rows)
}

fn parse_lab(file: &Path, text: &str, n: usize) -> Result<BTreeMap<String, Vec<usize>>, FormatError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (hi, header) = lines.next().ok_or_else(|| FormatError::invalid(file, "empty file"))?;
    let mut names: BTreeMap<usize, String> = BTreeMap::new();
    for tok in header.split_whitespace() {
        let parsed = tok
            .split_once('=')
            .and_then(|(i, q)| Some((i.parse::<usize>().ok()?, q.strip_prefix('"')?.strip_suffix('"')?)));
        let Some((i, name)) = parsed else {
            return Err(FormatError::syntax(file, hi + 1, format!("expected `index=\"name\"`, found `{tok}`")));
        };
        names.insert(i, name.to_string());
    }
    let mut labels: BTreeMap<String, Vec<usize>> = names.values().map(|n| (n.clone(), Vec::new())).collect();
    for (i, line) in lines {
        let bad = |m: String| FormatError::syntax(file, i + 1, m);
        let (s, ids) = line.split_once(':').ok_or_else(|| bad(format!("expected `state: labels`, found `{line}`")))?;
        let s: usize = s.trim().parse().map_err(|_| bad(format!("bad state index `{s}`")))?;
        if s >= n {
            return Err(bad(format!("state {s} out of range")));
        }
        for id in ids.split_whitespace() {
            let id: usize = id.parse().map_err(|_| bad(format!("bad label index `{id}`")))?;
            let name = names.get(&id).ok_or_else(|| bad(format!("undeclared label {id}")))?;
            labels.get_mut(name).expect("declared").push(s);
        }
    }
    Ok(labels)
}

/// Reads an explicit triple; the environment comes from the `env_<class>` label.
pub fn read_explicit(prefix: &Path) -> Result<MarkovChain, FormatError> {
    let (tra, lab, sta) = (with_ext(prefix, "tra"), with_ext(prefix, "lab"), with_ext(prefix, "sta"));
    let (tra_text, lab_text, sta_text) = (read(&tra)?, read(&lab)?, read(&sta)?);
    let agents = parse_sta(&sta, &sta_text)?;
    let rows = parse_tra(&tra, &tra_text, agents.len())?;
    let labels = parse_lab(&lab, &lab_text, agents.len())?;

    let envs: Vec<EnvClass> = EnvClass::ALL
        .into_iter()
        .filter(|e| labels.get(&format!("env_{e}")).is_some_and(|s| !s.is_empty()))
        .collect();
    let env = match envs.as_slice() {
        [e] => *e,
        [] => return Err(FormatError::invalid(&lab, "no env_<class> label")),
        _ => return Err(FormatError::invalid(&lab, "states from more than one environment")),
    };
    if labels[&format!("env_{env}")].len() != agents.len() {
        return Err(FormatError::invalid(&lab, format!("env_{env} does not cover every state")));
    }
    let states = agents.into_iter().map(|a| SystemState::new(a, env)).collect();
    let chain = MarkovChain::from_parts(states, rows, labels, env).map_err(|e| FormatError::invalid(&tra, e.to_string()))?;
    let report = validate_stochastic(&chain);
    if !report.passed {
        let row = report.worst_row.unwrap_or(0);
        return Err(FormatError::invalid(
            &tra,
            format!("row {row} sums to {}", format_sig(report.row_sums[row], 17)),
        ));
    }
    Ok(chain)
}

/// The initial state: the one labeled `init`, else index 0.
pub fn initial_index(chain: &MarkovChain) -> usize {
    chain.label("init").and_then(|s| s.first().copied()).unwrap_or(0)
}

/// PRISM DTMC with one index variable `s` and one command per state.
pub fn prism_string(chain: &MarkovChain) -> String {
    let n = chain.len();
    let mut out = String::from("dtmc\n\nmodule chain\n");
    let _ = writeln!(out, "  s : [0..{}] init {};", n.saturating_sub(1), initial_index(chain));
    for (i, row) in chain.rows().iter().enumerate() {
        let st = chain.state(i);
        let updates: Vec<String> = row
            .iter()
            .map(|&(j, p)| format!("{}:(s'={j})", format_sig(p, 17)))
            .collect();
        let _ = writeln!(out, "  [] s={i} -> {}; // {}", updates.join(" + "), st.agent);
    }
    out.push_str("endmodule\n\n");
    for name in label_order(chain) {
        if name == "init" {
            continue;
        }
        let set = chain.label(name).unwrap_or(&[]);
        let guard = if set.is_empty() {
            "false".to_string()
        } else {
            set.iter().map(|s| format!("s={s}")).collect::<Vec<_>>().join(" | ")
        };
        let _ = writeln!(out, "label \"{name}\" = {guard};");
    }
    out
}

pub fn dot_string(chain: &MarkovChain) -> String {
    let init = initial_index(chain);
    let mut out = String::from("digraph chain {\n  rankdir=LR;\n");
    for (i, s) in chain.states().iter().enumerate() {
        let shape = if chain.is_absorbing(i) { "doublecircle" } else { "circle" };
        let style = if i == init { ", style=bold" } else { "" };
        let _ = writeln!(out, "  {i} [label=\"{}\", shape={shape}{style}];", s.agent);
    }
    for (i, row) in chain.rows().iter().enumerate() {
        for &(j, p) in row {
            let _ = writeln!(out, "  {i} -> {j} [label=\"{}\"];", format_sig(p, 6));
        }
    }
    out.push_str("}\n");
    out
}
