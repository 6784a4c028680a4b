//! Training curves as CSV and communication logs as JSON lines.

use std::io::Write;
use std::path::Path;

use dmac_core::adversary::AdversaryCurvePoint;
use dmac_core::attack::AttackCurvePoint;
use dmac_core::comm::CommLog;
use dmac_core::eval::TraceStep;
use dmac_core::retrain::{CpCurvePoint, RoundMetrics};
use dmac_core::team::TeamCurvePoint;
use serde::{Deserialize, Serialize};

use crate::error::LabError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeamRow {
    pub episode: usize,
    pub team_return: f64,
    pub win: bool,
    pub loss: f64,
    pub messages: usize,
}

impl From<&TeamCurvePoint> for TeamRow {
    fn from(p: &TeamCurvePoint) -> Self {
        Self {
            episode: p.episode,
            team_return: p.team_return,
            win: p.win,
            loss: p.loss,
            messages: p.messages,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversaryRow {
    pub episode: usize,
    pub mean_reward: f64,
    pub loss: f64,
    pub mean_masks: f64,
    pub win: bool,
}

impl From<&AdversaryCurvePoint> for AdversaryRow {
    fn from(p: &AdversaryCurvePoint) -> Self {
        Self {
            episode: p.episode,
            mean_reward: p.mean_reward,
            loss: p.loss,
            mean_masks: p.mean_masks,
            win: p.win,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpRow {
    pub episode: usize,
    pub team_return: f64,
    pub win: bool,
    pub messages: usize,
    pub masked_steps: usize,
}

impl From<&CpCurvePoint> for CpRow {
    fn from(p: &CpCurvePoint) -> Self {
        Self {
            episode: p.episode,
            team_return: p.team_return,
            win: p.win,
            messages: p.messages,
            masked_steps: p.masked_steps,
        }
    }
}

/// Per-round retraining metrics; empty cells when the round skipped
/// evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRow {
    pub round: usize,
    pub clean_win_rate: Option<f64>,
    pub masked_win_rate: Option<f64>,
    pub frequency_sd: Option<f64>,
    pub mean_masked_steps: Option<f64>,
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

impl From<&RoundMetrics> for RoundRow {
    fn from(m: &RoundMetrics) -> Self {
        Self {
            round: m.round,
            clean_win_rate: finite(m.clean_win_rate),
            masked_win_rate: finite(m.masked_win_rate),
            frequency_sd: finite(m.frequency_sd),
            mean_masked_steps: finite(m.mean_masked_steps),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackRow {
    pub episode: usize,
    pub attacker_return: f64,
    pub loss: f64,
    pub victim_win: bool,
}

impl From<&AttackCurvePoint> for AttackRow {
    fn from(p: &AttackCurvePoint) -> Self {
        Self {
            episode: p.episode,
            attacker_return: p.attacker_return,
            loss: p.loss,
            victim_win: p.victim_win,
        }
    }
}

pub fn write_csv<R: Serialize>(path: &Path, rows: &[R]) -> Result<(), LabError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| LabError::io(path, e))
}

pub fn read_csv<R: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<R>, LabError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize().collect::<Result<Vec<R>, _>>().map_err(|e| csv_err(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> LabError {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => LabError::io(path, io),
            _ => unreachable!(),
        }
    } else {
        LabError::Artifact {
            path: path.to_path_buf(),
            detail: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommEvent {
    pub episode: u64,
    pub t: usize,
    pub i: usize,
    pub j: usize,
    pub opened: bool,
    pub masked: bool,
}

/// One JSON object per channel event.
pub fn write_comm_log(path: &Path, log: &CommLog) -> Result<(), LabError> {
    write_lines(
        path,
        log.records.iter().map(|r| CommEvent {
            episode: r.episode,
            t: r.t,
            i: r.channel.i,
            j: r.channel.j,
            opened: r.opened,
            masked: r.masked,
        }),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub episode: usize,
    pub t: usize,
    pub positions: Vec<(i64, i64)>,
    pub actions: Vec<usize>,
    pub reward: f64,
    pub masks: Vec<(usize, usize)>,
}

/// One JSON object per evaluation step.
pub fn write_trace(path: &Path, trace: &[TraceStep]) -> Result<(), LabError> {
    let events = trace.iter().map(|s| TraceEvent {
        episode: s.episode,
        t: s.t,
        positions: s.positions.clone(),
        actions: s.actions.clone(),
        reward: s.team_reward,
        masks: s.masked.iter().map(|c| (c.i, c.j)).collect(),
    });
    write_lines(path, events)
}

fn write_lines<T: Serialize>(path: &Path, items: impl Iterator<Item = T>) -> Result<(), LabError> {
    let file = std::fs::File::create(path).map_err(|e| LabError::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, &item).expect("record serializes");
        w.write_all(b"\n").map_err(|e| LabError::io(path, e))?;
    }
    w.flush().map_err(|e| LabError::io(path, e))
}

pub fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, LabError> {
    let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    text.lines()
        .filter(|l| !l.is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|e| LabError::Artifact {
                path: path.to_path_buf(),
                detail: e.to_string(),
            })
        })
        .collect()
}

pub fn read_comm_log(path: &Path) -> Result<Vec<CommEvent>, LabError> {
    read_lines(path)
}
