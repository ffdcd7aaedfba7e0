//! Tracking quality metrics: pose errors, RMSE and side-view IoU.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use geo::{Area, BooleanOps, Coord, LineString};
use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ekf::GaussianEstimate;
use crate::scalar::{wrap_angle, Scalar};
use crate::shape3d::{ObjectState, Polygon, ShapeError, ShapeModel};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("polygon is degenerate or self-intersecting")]
    DegeneratePolygon,
    #[error("empty series")]
    EmptySeries,
    #[error("timestamps differ: estimate {0}, truth {1}")]
    TimestampMismatch(f64, f64),
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("metrics file has no rows")]
    NoRows,
    #[error("invalid metrics row {row}: {reason}")]
    InvalidRow { row: usize, reason: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// How the side-view polygons are placed before intersecting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IouMode {
    /// Body-frame profiles translated so their reference points coincide.
    #[default]
    ShapeOnly,
    /// Both profiles placed in the truth's longitudinal x-z slice, so
    /// position errors along the heading and in height reduce the overlap.
    PoseIncluded,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricOptions {
    /// Fold the orientation error modulo pi (front/back symmetric objects).
    pub fold_orientation: bool,
    pub iou_mode: IouMode,
    pub samples_per_span: usize,
    /// Tolerated timestamp difference between estimate and truth.
    pub time_tolerance: f64,
    /// Score a degenerate estimated profile as IoU 0 instead of failing.
    /// Its reference point is then the control-point bounding box center.
    pub degenerate_as_zero: bool,
}

impl Default for MetricOptions {
    fn default() -> Self {
        Self { fold_orientation: false, iou_mode: IouMode::ShapeOnly, samples_per_span: 16, time_tolerance: 1e-6, degenerate_as_zero: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameMetrics<T: Scalar = f64> {
    pub timestamp: T,
    /// Planar distance between reference points.
    pub position_error: T,
    /// Signed height difference, estimate minus truth.
    pub z_error: T,
    pub orientation_error: T,
    pub side_iou: T,
}

/// Maps into a frame centered on `center` with unit extent, since the
/// clipper snaps coordinates to a fixed grid.
fn to_geo<T: Scalar>(p: &Polygon<T>, center: Vector2<f64>, extent: f64) -> geo::Polygon<f64> {
    let ring: Vec<Coord<f64>> = p
        .vertices()
        .iter()
        .map(|v| Coord { x: (v.x.as_f64() - center.x) / extent, y: (v.y.as_f64() - center.y) / extent })
        .collect();
    geo::Polygon::new(LineString::new(ring), Vec::new())
}

/// Intersection over union of two simple polygons.
pub fn iou<T: Scalar>(a: &Polygon<T>, b: &Polygon<T>) -> Result<T, EvalError> {
    if !a.is_simple() || !b.is_simple() {
        return Err(EvalError::DegeneratePolygon);
    }
    let (alo, ahi) = a.bounds();
    let (blo, bhi) = b.bounds();
    let (lo, hi) = (alo.inf(&blo).map(|v| v.as_f64()), ahi.sup(&bhi).map(|v| v.as_f64()));
    let center = (lo + hi) * 0.5;
    let extent = (hi - lo).amax();
    let (ga, gb) = (to_geo(a, center, extent), to_geo(b, center, extent));
    let inter = ga.intersection(&gb).unsigned_area();
    let union = ga.union(&gb).unsigned_area();
    if union <= 0.0 {
        return Err(EvalError::DegeneratePolygon);
    }
    Ok(T::lit((inter / union).clamp(0.0, 1.0)))
}

pub fn rmse<T: Scalar>(series: &[T]) -> Result<T, EvalError> {
    if series.is_empty() {
        return Err(EvalError::EmptySeries);
    }
    let sum = series.iter().fold(T::zero(), |acc, &e| acc + e * e);
    Ok((sum / T::from_usize_lossy(series.len())).sqrt())
}

/// Orientation error in `(-pi, pi]`, or in `(-pi/2, pi/2]` when folded.
pub fn orientation_error<T: Scalar>(estimate: T, truth: T, fold: bool) -> T {
    let e = wrap_angle(estimate - truth);
    if !fold {
        return e;
    }
    let half = T::frac_pi_2();
    if e > half {
        e - T::pi()
    } else if e <= -half {
        e + T::pi()
    } else {
        e
    }
}

/// Center of the polygon's bounding box.
pub fn reference_point<T: Scalar>(profile: &Polygon<T>) -> Vector2<T> {
    let (lo, hi) = profile.bounds();
    (lo + hi) * T::lit(0.5)
}

/// Global position of the side-view reference point.
///
/// Pose and control points can trade a common offset without changing the
/// surface, so errors are measured here rather than at the state origin.
pub fn reference_position<T: Scalar>(state: &ObjectState<T>, profile: &Polygon<T>) -> Vector3<T> {
    let r = reference_point(profile);
    state.to_global(&Vector3::new(r.x, T::zero(), r.y))
}

pub fn frame_metrics<T: Scalar>(
    est: &GaussianEstimate<T>,
    truth: &ObjectState<T>,
    truth_profile: &Polygon<T>,
    truth_time: T,
    model: &ShapeModel<T>,
    options: &MetricOptions,
) -> Result<FrameMetrics<T>, EvalError> {
    if (est.timestamp - truth_time).abs().as_f64() > options.time_tolerance {
        return Err(EvalError::TimestampMismatch(est.timestamp.as_f64(), truth_time.as_f64()));
    }
    if !truth_profile.is_simple() {
        return Err(EvalError::DegeneratePolygon);
    }
    let est_profile = match model.side_view_polygon(&est.mean, options.samples_per_span) {
        Ok(p) => Some(p),
        Err(ShapeError::DegenerateProfile) if options.degenerate_as_zero => None,
        Err(ShapeError::DegenerateProfile) => return Err(EvalError::DegeneratePolygon),
        Err(e) => return Err(e.into()),
    };
    let pe = match &est_profile {
        Some(p) => reference_position(&est.mean, p),
        None => reference_position(&est.mean, &Polygon::new(est.mean.control_points())),
    };
    let pt = reference_position(truth, truth_profile);
    let d = pe - pt;
    let position_error = (d.x * d.x + d.y * d.y).sqrt();
    let side_iou = match (&est_profile, options.iou_mode) {
        (None, _) => T::zero(),
        (Some(est_profile), IouMode::ShapeOnly) => {
            let (re, rt) = (reference_point(est_profile), reference_point(truth_profile));
            iou(&est_profile.map(|v| v - re), &truth_profile.map(|v| v - rt))?
        }
        (Some(est_profile), IouMode::PoseIncluded) => {
            // Estimated body origin expressed along the truth's heading.
            let offset = est.mean.position() - truth.position();
            let along = offset.x * truth.yaw().cos() + offset.y * truth.yaw().sin();
            let shift = Vector2::new(along, offset.z);
            iou(&est_profile.map(|v| v + shift), truth_profile)?
        }
    };
    Ok(FrameMetrics {
        timestamp: est.timestamp,
        position_error,
        z_error: d.z,
        orientation_error: orientation_error(est.mean.yaw(), truth.yaw(), options.fold_orientation),
        side_iou,
    })
}

/// One row of the metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub t: f64,
    pub variant: String,
    pub pos_err: f64,
    pub z_err: f64,
    pub psi_err: f64,
    pub iou: f64,
}

impl MetricsRow {
    pub fn new<T: Scalar>(variant: &str, m: &FrameMetrics<T>) -> Self {
        Self {
            t: m.timestamp.as_f64(),
            variant: variant.to_owned(),
            pos_err: m.position_error.as_f64(),
            z_err: m.z_error.as_f64(),
            psi_err: m.orientation_error.as_f64(),
            iou: m.side_iou.as_f64(),
        }
    }

    fn check(&self, row: usize) -> Result<(), EvalError> {
        let bad = |reason: &str| Err(EvalError::InvalidRow { row, reason: reason.to_owned() });
        if self.variant.trim().is_empty() {
            return bad("empty variant");
        }
        if ![self.t, self.pos_err, self.z_err, self.psi_err, self.iou].iter().all(|v| v.is_finite()) {
            return bad("non-finite value");
        }
        if !(0.0..=1.0).contains(&self.iou) {
            return bad("iou outside [0, 1]");
        }
        Ok(())
    }
}

/// Per-variant aggregates written to the summary CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub variant: String,
    pub frames: usize,
    pub pos_rmse: f64,
    pub z_rmse: f64,
    pub z_max_abs: f64,
    pub psi_rmse: f64,
    pub iou_mean: f64,
}

/// Summaries keyed by variant, in order of first appearance.
pub fn summarize(rows: &[MetricsRow]) -> Result<Vec<SummaryRow>, EvalError> {
    if rows.is_empty() {
        return Err(EvalError::NoRows);
    }
    let mut order: Vec<&str> = Vec::new();
    let mut groups: BTreeMap<&str, Vec<&MetricsRow>> = BTreeMap::new();
    for r in rows {
        if !groups.contains_key(r.variant.as_str()) {
            order.push(&r.variant);
        }
        groups.entry(&r.variant).or_default().push(r);
    }
    order
        .into_iter()
        .map(|v| {
            let g = &groups[v];
            let col = |f: fn(&MetricsRow) -> f64| g.iter().map(|r| f(r)).collect::<Vec<_>>();
            let z = col(|r| r.z_err);
            let ious = col(|r| r.iou);
            Ok(SummaryRow {
                variant: v.to_owned(),
                frames: g.len(),
                pos_rmse: rmse(&col(|r| r.pos_err))?,
                z_rmse: rmse(&z)?,
                z_max_abs: z.iter().fold(0.0f64, |m, e| m.max(e.abs())),
                psi_rmse: rmse(&col(|r| r.psi_err))?,
                iou_mean: ious.iter().sum::<f64>() / ious.len() as f64,
            })
        })
        .collect()
}

pub fn write_metrics_csv<W: Write>(rows: &[MetricsRow], writer: W) -> Result<(), EvalError> {
    write_rows(rows, writer)
}

pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], writer: W) -> Result<(), EvalError> {
    write_rows(rows, writer)
}

fn write_rows<R: Serialize, W: Write>(rows: &[R], writer: W) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Reads and validates a metrics CSV. An empty file is an error.
pub fn read_metrics_csv<R: Read>(reader: R) -> Result<Vec<MetricsRow>, EvalError> {
    let mut r = csv::Reader::from_reader(reader);
    let mut rows = Vec::new();
    for (i, rec) in r.deserialize::<MetricsRow>().enumerate() {
        let row: MetricsRow = rec?;
        row.check(i + 1)?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(EvalError::NoRows);
    }
    Ok(rows)
}

pub fn read_summary_csv<R: Read>(reader: R) -> Result<Vec<SummaryRow>, EvalError> {
    let mut r = csv::Reader::from_reader(reader);
    let rows = r.deserialize().collect::<Result<Vec<SummaryRow>, _>>()?;
    if rows.is_empty() {
        return Err(EvalError::NoRows);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Polygon {
        Polygon::new(vec![
            Vector2::new(x0, y0),
            Vector2::new(x1, y0),
            Vector2::new(x1, y1),
            Vector2::new(x0, y1),
        ])
    }

    #[test]
    fn analytic_iou_cases() {
        // The clipper works on a snapped grid, so exact ratios hold to ~1e-9.
        let unit = rect(0.0, 0.0, 1.0, 1.0);
        assert!((iou(&unit, &unit).unwrap() - 1.0).abs() < 1e-9);
        assert_eq!(iou(&unit, &rect(2.0, 0.0, 3.0, 1.0)).unwrap(), 0.0);
        assert!((iou(&unit, &rect(0.5, 0.0, 1.5, 1.0)).unwrap() - 1.0 / 3.0).abs() < 1e-9);
        assert!((iou(&rect(0.5, 0.5, 1.5, 1.5), &rect(0.0, 0.0, 2.0, 2.0)).unwrap() - 0.25).abs() < 1e-9);
    }

    #[test]
    fn bowtie_is_rejected() {
        let bowtie = Polygon::new(vec![
            Vector2::new(0.0, 0.0),
            Vector2::new(1.0, 1.0),
            Vector2::new(1.0, 0.0),
            Vector2::new(0.0, 1.0),
        ]);
        assert!(matches!(iou(&bowtie, &rect(0.0, 0.0, 1.0, 1.0)), Err(EvalError::DegeneratePolygon)));
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[0.0, 0.0, 0.0]).unwrap(), 0.0);
        assert!((rmse(&[3.0, 4.0]).unwrap() - 12.5f64.sqrt()).abs() < 1e-12);
        assert!((rmse(&[-2.5f64; 7]).unwrap() - 2.5).abs() < 1e-12);
        assert!(matches!(rmse::<f64>(&[]), Err(EvalError::EmptySeries)));
    }

    #[test]
    fn orientation_error_wraps_and_folds() {
        use std::f64::consts::PI;
        assert!((orientation_error(PI - 0.1, -PI + 0.1, false) + 0.2).abs() < 1e-12);
        assert!((orientation_error(PI - 0.05, 0.0, true) + 0.05).abs() < 1e-12);
        assert!((orientation_error(0.3f64, 0.0, true) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn csv_round_trip_and_summary() {
        let rows = vec![
            MetricsRow { t: 0.0, variant: "a".into(), pos_err: 3.0, z_err: -0.1, psi_err: 0.0, iou: 0.5 },
            MetricsRow { t: 0.1, variant: "a".into(), pos_err: 4.0, z_err: 0.2, psi_err: 0.0, iou: 1.0 },
            MetricsRow { t: 0.0, variant: "b".into(), pos_err: 1.0, z_err: 0.0, psi_err: 0.1, iou: 0.9 },
        ];
        let mut buf = Vec::new();
        write_metrics_csv(&rows, &mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("t,variant,pos_err,z_err,psi_err,iou\n"));
        assert_eq!(read_metrics_csv(buf.as_slice()).unwrap(), rows);
        let s = summarize(&rows).unwrap();
        assert_eq!(s.iter().map(|r| r.variant.as_str()).collect::<Vec<_>>(), ["a", "b"]);
        assert!((s[0].pos_rmse - 12.5f64.sqrt()).abs() < 1e-12);
        assert!((s[0].z_max_abs - 0.2).abs() < 1e-12);
        assert!((s[0].iou_mean - 0.75).abs() < 1e-12);
        let mut sbuf = Vec::new();
        write_summary_csv(&s, &mut sbuf).unwrap();
        assert_eq!(read_summary_csv(sbuf.as_slice()).unwrap(), s);
    }

    #[test]
    fn malformed_metrics_are_rejected() {
        assert!(matches!(read_metrics_csv("t,variant,pos_err,z_err,psi_err,iou\n".as_bytes()), Err(EvalError::NoRows)));
        let blank = "t,variant,pos_err,z_err,psi_err,iou\n0,,1,0,0,0.5\n";
        assert!(matches!(read_metrics_csv(blank.as_bytes()), Err(EvalError::InvalidRow { row: 1, .. })));
        assert!(read_metrics_csv("t,variant\n0,a\n".as_bytes()).is_err());
    }
}
