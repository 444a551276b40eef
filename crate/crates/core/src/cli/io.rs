//! On-disk formats: run configuration, checkpoints, metric and matrix
//! tables. Every file is written through a temporary file in the target
//! directory and renamed into place.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::GridWorldSpec;
use crate::policy::{Population, SoftmaxPolicy};
use crate::trainer::{MetricRecord, TrainConfig};

pub const CHECKPOINT_VERSION: u32 = 1;

pub const METRICS_HEADER: [&str; 5] = ["iteration", "trace", "det_or_jsd", "objective", "elapsed_seconds"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckSettings {
    pub trials: usize,
}

impl Default for GradcheckSettings {
    fn default() -> Self {
        GradcheckSettings { trials: 10 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSettings {
    pub seeds: Vec<u64>,
    /// Also train and score a learner against every generated population.
    pub learner: bool,
}

impl Default for SweepSettings {
    fn default() -> Self {
        SweepSettings {
            seeds: (0..10).collect(),
            learner: false,
        }
    }
}

/// Everything a run reads from its configuration file. The echoed copy in
/// each run directory has every default filled in.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub gradcheck: GradcheckSettings,
    pub sweep: SweepSettings,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate().map_err(|e| match e {
            Error::InvalidConfig { key, reason } => Error::InvalidConfig {
                key: format!("train.{key}"),
                reason,
            },
            other => other,
        })?;
        if self.gradcheck.trials == 0 {
            return Err(Error::config("gradcheck.trials", "must be at least 1"));
        }
        if self.sweep.seeds.is_empty() {
            return Err(Error::config("sweep.seeds", "must list at least one seed"));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cfg: RunConfig = read_toml(path)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemberRecord {
    pub teammate_logits: Vec<Vec<f64>>,
    pub br_logits: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub env: GridWorldSpec,
    pub horizon: usize,
    pub discount: f64,
    pub population: Vec<MemberRecord>,
}

impl Checkpoint {
    pub fn new(cfg: &TrainConfig, pop: &Population) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            env: cfg.env.clone(),
            horizon: cfg.horizon,
            discount: cfg.discount,
            population: pop
                .teammates
                .iter()
                .zip(&pop.best_responses)
                .map(|(t, b)| MemberRecord {
                    teammate_logits: t.to_rows(),
                    br_logits: b.to_rows(),
                })
                .collect(),
        }
    }

    pub fn to_population(&self) -> Result<Population> {
        let mut teammates = Vec::with_capacity(self.population.len());
        let mut brs = Vec::with_capacity(self.population.len());
        for m in &self.population {
            teammates.push(SoftmaxPolicy::from_rows(&m.teammate_logits)?);
            brs.push(SoftmaxPolicy::from_rows(&m.br_logits)?);
        }
        Population::new(teammates, brs)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ckpt: Checkpoint = read_toml(path)?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Parse {
                path: path.into(),
                message: format!("unsupported checkpoint version {}", ckpt.version),
            });
        }
        Ok(ckpt)
    }
}

/// A single trained learner (agent-1 policy) and the game it was trained on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerCheckpoint {
    pub version: u32,
    pub env: GridWorldSpec,
    pub horizon: usize,
    pub discount: f64,
    pub learner_logits: Vec<Vec<f64>>,
}

pub fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::Parse {
        path: path.into(),
        message: e.to_string(),
    })
}

pub fn to_toml<T: Serialize>(value: &T) -> Result<String> {
    toml::to_string(value).map_err(|e| Error::Parse {
        path: "<serialize>".into(),
        message: e.to_string(),
    })
}

/// Writes `bytes` to `path` via a temporary sibling and an atomic rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn write_toml<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, to_toml(value)?.as_bytes())
}

fn csv_bytes(rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.write_record(&row).map_err(|e| Error::Parse {
            path: "<csv>".into(),
            message: e.to_string(),
        })?;
    }
    w.into_inner().map_err(|e| Error::Parse {
        path: "<csv>".into(),
        message: e.to_string(),
    })
}

pub fn write_metrics(path: &Path, metrics: &[MetricRecord]) -> Result<()> {
    let header = METRICS_HEADER.iter().map(|s| s.to_string()).collect();
    let rows = metrics.iter().map(|m| {
        vec![
            m.iteration.to_string(),
            m.trace.to_string(),
            m.diversity.to_string(),
            m.objective.to_string(),
            m.elapsed_seconds.to_string(),
        ]
    });
    write_atomic(path, &csv_bytes(std::iter::once(header).chain(rows))?)
}

fn parse_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.into(),
        message: message.into(),
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| parse_err(path, e.to_string()))?;
    let header = r.headers().map_err(|e| parse_err(path, e.to_string()))?;
    if header.iter().ne(METRICS_HEADER.iter().copied()) {
        return Err(parse_err(path, "unexpected metrics header"));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| parse_err(path, e.to_string()))?;
        let f = |i: usize| -> Result<f64> {
            rec[i].parse().map_err(|_| parse_err(path, format!("bad number {:?}", &rec[i])))
        };
        out.push(MetricRecord {
            iteration: rec[0].parse().map_err(|_| parse_err(path, "bad iteration"))?,
            trace: f(1)?,
            diversity: f(2)?,
            objective: f(3)?,
            elapsed_seconds: f(4)?,
        });
    }
    Ok(out)
}

pub fn write_cross_play(path: &Path, values: &[Vec<f64>]) -> Result<()> {
    let k = values.len();
    let header = std::iter::once("br".to_string())
        .chain((0..k).map(|j| format!("teammate_{j}")))
        .collect();
    let rows = values.iter().enumerate().map(|(i, row)| {
        std::iter::once(format!("br_{i}"))
            .chain(row.iter().map(f64::to_string))
            .collect()
    });
    write_atomic(path, &csv_bytes(std::iter::once(header).chain(rows))?)
}

pub fn read_cross_play(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| parse_err(path, e.to_string()))?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| parse_err(path, e.to_string()))?;
        let row: Result<Vec<f64>> = rec
            .iter()
            .skip(1)
            .map(|x| x.parse().map_err(|_| parse_err(path, format!("bad number {x:?}"))))
            .collect();
        out.push(row?);
    }
    Ok(out)
}
