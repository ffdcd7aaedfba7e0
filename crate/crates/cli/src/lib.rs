//! Scenario runner: single-sensor, centralized and decentralized (CI) tracking
//! on simulated lidar scans, with metrics and plot export.

// Validation writes `!(x > 0)` so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod plot;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use splinefuse::ekf::{predict, EkfError, GaussianEstimate, TrackStatus, Tracker};
use splinefuse::evalkit::{self, frame_metrics, EvalError, MetricsRow, SummaryRow};
use splinefuse::fusion::{fuse_ci_with, gate_fusion, FusionError};
use splinefuse::shape3d::{ObjectState, Polygon};
use splinefuse::simkit::{write_frame_csv, Frame, Scenario, SimError};
use thiserror::Error;

pub use config::{Mode, RunConfig};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no sensor with id {0} in the scenario")]
    UnknownSensor(u32),
    #[error("decentralized mode needs at least two sensors")]
    TooFewSensors,
    #[error("track `{variant}` diverged at t = {t:.2} s: position error {error:.3} m exceeds {bound} m")]
    Divergence { variant: String, t: f64, error: f64, bound: f64 },
    #[error("simulation: {0}")]
    Sim(#[from] SimError),
    #[error("tracker: {0}")]
    Tracker(#[from] EkfError),
    #[error("fusion: {0}")]
    Fusion(#[from] FusionError),
    #[error("evaluation: {0}")]
    Eval(#[from] EvalError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl RunError {
    /// Process exit status: 3 for divergence, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Divergence { .. } => 3,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io { path: path.to_owned(), source }
}

/// Per-frame estimate written to `estimates.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRow {
    pub t: f64,
    pub variant: String,
    /// `initialized`, `updated`, `coasted`, `fused` or `carried`.
    pub status: String,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
    pub speed: f64,
    pub turn_rate: f64,
    pub width: f64,
    /// Points applied this frame; for fused rows the smallest local support.
    pub support: usize,
    /// CI weight of the first track in a fused row.
    pub weight: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    pub metrics: Vec<MetricsRow>,
    pub estimates: Vec<EstimateRow>,
}

impl RunOutput {
    pub fn summary(&self) -> Result<Vec<SummaryRow>, RunError> {
        Ok(evalkit::summarize(&self.metrics)?)
    }

    /// Metrics rows of one variant.
    pub fn variant(&self, name: &str) -> Vec<&MetricsRow> {
        self.metrics.iter().filter(|r| r.variant == name).collect()
    }
}

fn status_name(s: TrackStatus) -> &'static str {
    match s {
        TrackStatus::Pending => "pending",
        TrackStatus::Initialized => "initialized",
        TrackStatus::Updated => "updated",
        TrackStatus::Coasted => "coasted",
    }
}

struct Recorder<'a> {
    cfg: &'a RunConfig,
    scenario: &'a Scenario,
    truth_profile: Polygon,
    out: RunOutput,
}

impl Recorder<'_> {
    fn record(
        &mut self,
        variant: &str,
        status: &str,
        est: &GaussianEstimate,
        frame: &Frame,
        support: usize,
        weight: Option<f64>,
    ) -> Result<(), RunError> {
        let m = frame_metrics(
            est,
            &frame.ground_truth,
            &self.truth_profile,
            frame.timestamp,
            &self.scenario.model,
            &self.cfg.eval.metrics,
        )?;
        let bound = self.cfg.eval.abort_position_error;
        if !(m.position_error <= bound) {
            return Err(RunError::Divergence { variant: variant.into(), t: frame.timestamp, error: m.position_error, bound });
        }
        self.out.metrics.push(MetricsRow::new(variant, &m));
        let s: &ObjectState = &est.mean;
        let p = s.position();
        self.out.estimates.push(EstimateRow {
            t: frame.timestamp,
            variant: variant.into(),
            status: status.into(),
            x: p.x,
            y: p.y,
            z: p.z,
            yaw: s.yaw(),
            speed: s.speed(),
            turn_rate: s.turn_rate(),
            width: s.width(),
            support,
            weight,
        });
        Ok(())
    }
}

fn new_tracker(cfg: &RunConfig, scenario: &Scenario) -> Tracker {
    let t = &cfg.tracker;
    Tracker::new(scenario.model.clone(), t.process.clone(), t.update.clone(), t.init.clone())
}

/// Local track variant name in decentralized mode.
pub fn local_variant(id: u32) -> String {
    format!("local_{id}")
}

/// Variant name of the track a mode is judged by.
pub fn primary_variant(mode: Mode) -> String {
    match mode {
        Mode::Single(id) => format!("single_{id}"),
        Mode::Centralized => "centralized".into(),
        Mode::Decentralized => "fused".into(),
    }
}

/// Runs one pipeline over the scenario. `on_frame` sees every simulated
/// frame before tracking, e.g. to export point clouds.
pub fn run_with(
    cfg: &RunConfig,
    mode: Mode,
    max_frames: Option<usize>,
    mut on_frame: impl FnMut(&Frame) -> Result<(), RunError>,
) -> Result<RunOutput, RunError> {
    cfg.validate()?;
    let scenario = Scenario::new(cfg.scenario.clone())?;
    let mut ids: Vec<u32> = cfg.scenario.sensors.iter().map(|s| s.id).collect();
    ids.sort_unstable();
    match mode {
        Mode::Single(id) if !ids.contains(&id) => return Err(RunError::UnknownSensor(id)),
        Mode::Decentralized if ids.len() < 2 => return Err(RunError::TooFewSensors),
        _ => {}
    }
    let truth_profile = scenario
        .model
        .side_view_polygon(&scenario.truth_at(0.0)?, cfg.eval.metrics.samples_per_span)
        .map_err(SimError::from)?;
    let mut rec = Recorder { cfg, scenario: &scenario, truth_profile, out: RunOutput::default() };
    let frames = max_frames.map_or(scenario.frame_count(), |n| n.min(scenario.frame_count()));
    let primary = primary_variant(mode);

    let mut trackers: Vec<(u32, Tracker)> = match mode {
        Mode::Single(id) => vec![(id, new_tracker(cfg, &scenario))],
        Mode::Centralized => vec![(0, new_tracker(cfg, &scenario))],
        Mode::Decentralized => ids.iter().map(|&id| (id, new_tracker(cfg, &scenario))).collect(),
    };
    let mut fused: Option<GaussianEstimate> = None;

    for k in 0..frames {
        let frame = scenario.frame(k)?;
        on_frame(&frame)?;
        let t = frame.timestamp;
        let scan = |id: u32| frame.scan(id).map_or(&[][..], |s| s.points.as_slice());
        match mode {
            Mode::Single(id) => {
                let tracker = &mut trackers[0].1;
                let status = tracker.step(t, scan(id))?;
                if let Some(est) = tracker.estimate() {
                    rec.record(&primary, status_name(status), est, &frame, tracker.support(), None)?;
                }
            }
            Mode::Centralized => {
                let batches: Vec<&[_]> = ids.iter().map(|&id| scan(id)).collect();
                let tracker = &mut trackers[0].1;
                let status = tracker.step_batches(t, &batches)?;
                if let Some(est) = tracker.estimate() {
                    rec.record(&primary, status_name(status), est, &frame, tracker.support(), None)?;
                }
            }
            Mode::Decentralized => {
                // Local trackers are independent within a frame.
                let statuses: Vec<Result<TrackStatus, EkfError>> = std::thread::scope(|s| {
                    let handles: Vec<_> = trackers
                        .iter_mut()
                        .map(|(id, tr)| {
                            let points = scan(*id);
                            s.spawn(move || tr.step(t, points))
                        })
                        .collect();
                    handles.into_iter().map(|h| h.join().expect("tracker thread panicked")).collect()
                });
                for ((id, tr), status) in trackers.iter().zip(statuses) {
                    let status = status?;
                    if let Some(est) = tr.estimate() {
                        rec.record(&local_variant(*id), status_name(status), est, &frame, tr.support(), None)?;
                    }
                }
                // Tracks with enough support are fused in id order; for two
                // sensors this is exactly the pairwise fusion gate.
                let ready: Vec<&Tracker> = trackers
                    .iter()
                    .map(|(_, tr)| tr)
                    .filter(|tr| tr.estimate().is_some())
                    .collect();
                let gated: Vec<&Tracker> = match ready.as_slice() {
                    [a, b] if gate_fusion(a.support(), b.support(), cfg.fusion.min_points) => ready.clone(),
                    [_, _] => Vec::new(),
                    _ => ready.into_iter().filter(|tr| tr.support() >= cfg.fusion.min_points).collect(),
                };
                let ready = gated;
                if ready.len() >= 2 {
                    let mut acc = ready[0].estimate().cloned().expect("ready track has an estimate");
                    let mut weight = None;
                    for tr in &ready[1..] {
                        let report = fuse_ci_with(&acc, tr.estimate().expect("ready track"), cfg.fusion.cost)?;
                        weight.get_or_insert(report.weight.value());
                        acc = report.fused;
                    }
                    let support = ready.iter().map(|tr| tr.support()).min().unwrap_or(0);
                    rec.record(&primary, "fused", &acc, &frame, support, weight)?;
                    if cfg.fusion.feedback {
                        for (_, tr) in trackers.iter_mut().filter(|(_, tr)| tr.estimate().is_some()) {
                            tr.set_estimate(acc.clone());
                        }
                    }
                    fused = Some(acc);
                } else if let Some(prev) = fused.take() {
                    let dt = t - prev.timestamp;
                    let carried = if dt > 0.0 { predict(&prev, dt, &cfg.tracker.process)? } else { prev };
                    rec.record(&primary, "carried", &carried, &frame, 0, None)?;
                    fused = Some(carried);
                }
            }
        }
    }
    Ok(rec.out)
}

pub fn run(cfg: &RunConfig, mode: Mode, max_frames: Option<usize>) -> Result<RunOutput, RunError> {
    run_with(cfg, mode, max_frames, |_| Ok(()))
}

fn write_csv<R: Serialize>(path: &Path, rows: &[R]) -> Result<(), RunError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    for r in rows {
        w.serialize(r).map_err(|e| RunError::Eval(e.into()))?;
    }
    w.flush().map_err(io_err(path))
}

pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const ESTIMATES_FILE: &str = "estimates.csv";

/// Writes metrics, summary and estimate CSVs into `out_dir`.
pub fn write_outputs(out: &RunOutput, out_dir: &Path) -> Result<Vec<SummaryRow>, RunError> {
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let summary = out.summary()?;
    write_csv(&out_dir.join(METRICS_FILE), &out.metrics)?;
    write_csv(&out_dir.join(SUMMARY_FILE), &summary)?;
    write_csv(&out_dir.join(ESTIMATES_FILE), &out.estimates)?;
    Ok(summary)
}

/// Runs a pipeline and writes its artifacts. With `points`, each frame's
/// measurements go to `out_dir/points/frame_NNNN.csv`.
pub fn run_to_dir(
    cfg: &RunConfig,
    mode: Mode,
    max_frames: Option<usize>,
    out_dir: &Path,
    points: bool,
) -> Result<Vec<SummaryRow>, RunError> {
    let points_dir = out_dir.join("points");
    if points {
        std::fs::create_dir_all(&points_dir).map_err(io_err(&points_dir))?;
    }
    let out = run_with(cfg, mode, max_frames, |frame| {
        if !points {
            return Ok(());
        }
        let path = points_dir.join(format!("frame_{:04}.csv", frame.index));
        let file = File::create(&path).map_err(io_err(&path))?;
        Ok(write_frame_csv(frame, BufWriter::new(file))?)
    })?;
    write_outputs(&out, out_dir)
}

/// Fixed-width table of per-variant aggregates.
pub fn format_summary(rows: &[SummaryRow]) -> String {
    let mut s = format!(
        "{:<14} {:>6} {:>9} {:>9} {:>9} {:>9} {:>8}\n",
        "variant", "frames", "pos_rmse", "z_rmse", "z_max", "psi_rmse", "iou"
    );
    for r in rows {
        s += &format!(
            "{:<14} {:>6} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>8.4}\n",
            r.variant, r.frames, r.pos_rmse, r.z_rmse, r.z_max_abs, r.psi_rmse, r.iou_mean
        );
    }
    s
}

pub fn print_summary(rows: &[SummaryRow], mut w: impl Write) -> std::io::Result<()> {
    w.write_all(format_summary(rows).as_bytes())
}
