//! On-disk formats.
//!
//! | format            | content                                            |
//! |-------------------|----------------------------------------------------|
//! | `anm-instance/1`  | network in physical units, devices, price profile  |
//! | `anm-gmm/1`       | one fitted mixture model and its fit log           |
//! | `anm-report/1`    | aggregate of one policy over an experiment         |
//! | `anm-run/1`       | summary of a single simulated run                  |
//! | `anm-tree/1`      | scenario tree of one planning step                 |
//! | `anm-solution/1`  | planner solution of one step                       |
//!
//! All JSON outputs are pretty-printed with a trailing newline. Floats use
//! the shortest representation that round-trips, so identical values give
//! identical bytes. Wall-clock measurements never enter these files; they go
//! to a separate `timing.json`.

use std::fs;
use std::path::{Path, PathBuf};

use anm_core::devices::Device;
use anm_core::grid::{Bus, BusKind, Link, NetworkModel};
use anm_core::mdp::{Instance, InstanceData, PriceProfile, SystemState};
use anm_core::planner::PlannerSolution;
use anm_core::scenario::ScenarioTree;
use anm_core::stochastic::{FitReport, GmmMarkovModel, GmmParams, ModelSet, ProcessKind};
use anm_core::{Complex64, QUARTERS_PER_DAY};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{ExperimentConfig, PolicyKind, RunReport, RunSummary, StepRecord};

pub const INSTANCE_FORMAT: &str = "anm-instance/1";
pub const GMM_FORMAT: &str = "anm-gmm/1";
pub const RUN_FORMAT: &str = "anm-run/1";
pub const TREE_FORMAT: &str = "anm-tree/1";
pub const SOLUTION_FORMAT: &str = "anm-solution/1";

fn one() -> (f64, f64) {
    (1.0, 0.0)
}

fn is_one(r: &(f64, f64)) -> bool {
    *r == (1.0, 0.0)
}

fn is_zero(v: &f64) -> bool {
    *v == 0.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusRecord {
    pub id: usize,
    pub kind: BusKind,
    pub v_min: f64,
    pub v_max: f64,
}

/// A π-model link. Impedances in ohms, shunt admittances in microsiemens,
/// ratios as `(re, im)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkRecord {
    pub from: usize,
    pub to: usize,
    pub r_ohm: f64,
    pub x_ohm: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub g_from_us: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub b_from_us: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub g_to_us: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub b_to_us: f64,
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub ratio_from: (f64, f64),
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub ratio_to: (f64, f64),
    pub i_max_amps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceFile {
    pub format: String,
    pub base_mva: f64,
    pub base_kv: f64,
    /// Slack voltage magnitude (per-unit) and angle (degrees).
    pub slack_voltage: (f64, f64),
    pub buses: Vec<BusRecord>,
    pub links: Vec<LinkRecord>,
    pub devices: Vec<Device>,
    /// Curtailment price per MWh for quarters 1..=96.
    pub prices: Vec<f64>,
}

impl InstanceFile {
    pub fn from_instance(inst: &Instance) -> Self {
        let net = inst.network();
        let zb = net.z_base();
        let ib = net.i_base_amps();
        let us = |y: Complex64| (y.re / zb * 1e6, y.im / zb * 1e6);
        let links = net
            .links
            .iter()
            .map(|l| {
                let z = l.y_branch.inv() * zb;
                let (g_from_us, b_from_us) = us(l.y_shunt_from);
                let (g_to_us, b_to_us) = us(l.y_shunt_to);
                LinkRecord {
                    from: l.from_bus,
                    to: l.to_bus,
                    r_ohm: z.re,
                    x_ohm: z.im,
                    g_from_us,
                    b_from_us,
                    g_to_us,
                    b_to_us,
                    ratio_from: (l.t_from.re, l.t_from.im),
                    ratio_to: (l.t_to.re, l.t_to.im),
                    i_max_amps: l.i_max * ib,
                }
            })
            .collect();
        let sv = inst.slack_voltage();
        InstanceFile {
            format: INSTANCE_FORMAT.into(),
            base_mva: net.base_mva,
            base_kv: net.base_kv,
            slack_voltage: (sv.norm(), sv.arg().to_degrees()),
            buses: net.buses.iter().map(|b| BusRecord { id: b.id, kind: b.kind, v_min: b.v_min, v_max: b.v_max }).collect(),
            links,
            devices: inst.devices().to_vec(),
            prices: inst.prices().curtailment.clone(),
        }
    }

    pub fn to_instance(&self) -> Result<Instance> {
        let bad = |m: String| Error::input("instance", m);
        if self.format != INSTANCE_FORMAT {
            return Err(bad(format!("format `{}`, expected `{INSTANCE_FORMAT}`", self.format)));
        }
        if !(self.base_mva > 0.0 && self.base_kv > 0.0) {
            return Err(bad("bases must be positive".into()));
        }
        if self.prices.len() != QUARTERS_PER_DAY {
            return Err(bad(format!("{} prices, expected {QUARTERS_PER_DAY}", self.prices.len())));
        }
        let zb = self.base_kv * self.base_kv / self.base_mva;
        let ib = self.base_mva * 1e3 / (3f64.sqrt() * self.base_kv);
        let mut buses: Vec<Bus> = self
            .buses
            .iter()
            .map(|b| Bus { id: b.id, kind: b.kind, v_min: b.v_min, v_max: b.v_max, attached_devices: Vec::new() })
            .collect();
        for d in &self.devices {
            let bus = buses.get_mut(d.bus).ok_or_else(|| bad(format!("device {} attached to unknown bus {}", d.id, d.bus)))?;
            bus.attached_devices.push(d.id);
        }
        let mut links = Vec::with_capacity(self.links.len());
        for (k, l) in self.links.iter().enumerate() {
            let n = self.buses.len();
            if l.from >= n || l.to >= n || l.from == l.to {
                return Err(bad(format!("link {k} joins buses {} and {}", l.from, l.to)));
            }
            let z = Complex64::new(l.r_ohm, l.x_ohm) / zb;
            if z.norm() == 0.0 || !z.is_finite() {
                return Err(bad(format!("link {k} has zero or non-finite impedance")));
            }
            let y = |g: f64, b: f64| Complex64::new(g, b) * zb * 1e-6;
            links.push(Link {
                from_bus: l.from,
                to_bus: l.to,
                t_from: Complex64::new(l.ratio_from.0, l.ratio_from.1),
                t_to: Complex64::new(l.ratio_to.0, l.ratio_to.1),
                y_branch: z.inv(),
                y_shunt_from: y(l.g_from_us, l.b_from_us),
                y_shunt_to: y(l.g_to_us, l.b_to_us),
                i_max: l.i_max_amps / ib,
            });
        }
        let network = NetworkModel::new(buses, links, self.base_mva, self.base_kv)?;
        let (m, deg) = self.slack_voltage;
        let data = InstanceData {
            network,
            devices: self.devices.clone(),
            prices: PriceProfile { curtailment: self.prices.clone() },
            slack_voltage: Complex64::from_polar(m, deg.to_radians()),
        };
        Ok(Instance::new(data)?)
    }
}

/// A fitted model with the order and seed it was fitted with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmFile {
    pub format: String,
    pub kind: ProcessKind,
    /// History length `N` and component count `n`.
    pub order: (usize, usize),
    pub seed: u64,
    pub model: GmmParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFile {
    pub format: String,
    pub policy: PolicyKind,
    pub config: ExperimentConfig,
    pub summary: RunSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeFile {
    pub format: String,
    pub quarter: u8,
    pub tree: ScenarioTree,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionFile {
    pub format: String,
    pub policy: PolicyKind,
    pub solution: PlannerSolution,
}

/// Writes `bytes` to `path` through a temporary sibling and a rename, so a
/// failed write never leaves a truncated file behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, to_json(value).as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::input(path, format!("line {}, column {}: {e}", e.line(), e.column())))
}

pub fn write_instance(path: &Path, inst: &Instance) -> Result<()> {
    write_json(path, &InstanceFile::from_instance(inst))
}

pub fn read_instance(path: &Path) -> Result<Instance> {
    let file: InstanceFile = read_json(path)?;
    file.to_instance().map_err(|e| match e {
        Error::Input { message, .. } => Error::input(path, message),
        Error::Core(c) => Error::input(path, c.to_string()),
        other => other,
    })
}

pub fn model_path(dir: &Path, kind: ProcessKind) -> PathBuf {
    dir.join(format!("{}.json", kind.name()))
}

pub fn read_model(path: &Path, expected: ProcessKind) -> Result<GmmFile> {
    let file: GmmFile = read_json(path)?;
    if file.format != GMM_FORMAT {
        return Err(Error::input(path, format!("format `{}`, expected `{GMM_FORMAT}`", file.format)));
    }
    if file.kind != expected {
        return Err(Error::input(path, format!("holds a {} model, expected {}", file.kind.name(), expected.name())));
    }
    GmmMarkovModel::new(file.model.clone()).map_err(|e| Error::input(path, e.to_string()))?;
    Ok(file)
}

/// Loads `load.json`, `wind.json` and `irradiance.json` from `dir`.
pub fn read_models(dir: &Path) -> Result<ModelSet> {
    let get = |k| -> Result<GmmMarkovModel> {
        let f = read_model(&model_path(dir, k), k)?;
        Ok(GmmMarkovModel::new(f.model).expect("validated"))
    };
    Ok(ModelSet { load: get(ProcessKind::Load)?, wind: get(ProcessKind::Wind)?, irradiance: get(ProcessKind::Irradiance)? })
}

/// A 15-minute series read from CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub first_quarter: u8,
    pub values: Vec<f64>,
}

/// Reads a CSV with a header containing a `value` column and optionally a
/// `quarter` column. Without `quarter` the series starts at quarter 1;
/// with it, consecutive rows must advance by one quarter.
pub fn read_corpus(path: &Path) -> Result<Corpus> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&text).map_err(|m| Error::input(path, m))
}

pub fn parse_corpus(text: &str) -> std::result::Result<Corpus, String> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| format!("header: {e}"))?.clone();
    let col = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let value_col = col("value").ok_or("line 1: no `value` column in header")?;
    let quarter_col = col("quarter");
    let mut values = Vec::new();
    let mut first_quarter = 1u8;
    let mut last_q: Option<u8> = None;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| match e.position() {
            Some(p) => format!("line {}: {e}", p.line()),
            None => e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = rec.get(value_col).ok_or_else(|| format!("line {line}: missing value"))?;
        let v: f64 = field.parse().map_err(|_| format!("line {line}: `{field}` is not a number"))?;
        if !v.is_finite() {
            return Err(format!("line {line}: non-finite value"));
        }
        if let Some(qc) = quarter_col {
            let f = rec.get(qc).ok_or_else(|| format!("line {line}: missing quarter"))?;
            let q: u8 = f.parse().ok().filter(|q| (1..=QUARTERS_PER_DAY as u8).contains(q)).ok_or_else(|| format!("line {line}: quarter `{f}` not in 1..=96"))?;
            match last_q {
                None => first_quarter = q,
                Some(p) if anm_core::next_quarter(p) != q => {
                    return Err(format!("line {line}: quarter {q} does not follow {p}"));
                }
                _ => {}
            }
            last_q = Some(q);
        }
        values.push(v);
    }
    if values.is_empty() {
        return Err("no data rows".into());
    }
    Ok(Corpus { first_quarter, values })
}

pub fn write_corpus(path: &Path, corpus: &Corpus) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["quarter", "value"]).expect("in memory");
    let mut q = corpus.first_quarter;
    for v in &corpus.values {
        w.write_record([q.to_string(), v.to_string()]).expect("in memory");
        q = anm_core::next_quarter(q);
    }
    write_atomic(path, &w.into_inner().expect("in memory"))
}

pub fn trace_csv(records: &[StepRecord]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(r).expect("in memory");
    }
    if records.is_empty() {
        w.write_record(TRACE_COLUMNS).expect("in memory");
    }
    w.into_inner().expect("in memory")
}

pub const TRACE_COLUMNS: [&str; 26] = [
    "step",
    "quarter",
    "load_mw",
    "wind_speed",
    "irradiance",
    "potential_mw",
    "generation_mw",
    "caps_set",
    "activations",
    "active_flex",
    "reward",
    "cost_curtailment",
    "cost_flexibility",
    "cost_barrier",
    "violations",
    "v_min",
    "v_max",
    "max_loading",
    "converged",
    "status",
    "fallback",
    "degraded",
    "nodes",
    "evaluations",
    "first_stage_shared",
    "injection_gap",
];

pub fn read_trace(path: &Path) -> Result<Vec<StepRecord>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::input(path, e.to_string()))?;
    rdr.deserialize()
        .map(|r| r.map_err(|e: csv::Error| Error::input(path, e.to_string())))
        .collect()
}

pub fn read_report(path: &Path) -> Result<RunReport> {
    let r: RunReport = read_json(path)?;
    if r.format != crate::harness::REPORT_FORMAT {
        return Err(Error::input(path, format!("format `{}`, expected `{}`", r.format, crate::harness::REPORT_FORMAT)));
    }
    Ok(r)
}

pub fn read_state(path: &Path, inst: &Instance) -> Result<SystemState> {
    let s: SystemState = read_json(path)?;
    s.check_shape(inst).map_err(|e| Error::input(path, e.to_string()))?;
    Ok(s)
}
