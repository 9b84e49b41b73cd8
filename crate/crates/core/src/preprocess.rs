//! Scene stack + field mask → clean per-field band time series.
//!
//! Per field and per reflectance band the pipeline is:
//! 1. drop pixels whose cloud probability exceeds the threshold,
//! 2. take the median of the remaining field pixels at each date,
//! 3. drop dates whose median falls outside the low/high percentiles of the
//!    field's own series,
//! 4. fill the gaps and smooth with a Savitzky–Golay filter.

use std::collections::BTreeMap;
use std::fmt;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundle::{BandId, FieldTable, Scene, SceneStack};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PreprocessError {
    #[error("field {0} is not in the field table")]
    UnknownField(i32),
    #[error("band {0} is not in the scene")]
    UnknownBand(String),
    #[error("no valid entries to compute percentiles from")]
    AllMissing,
    #[error("{valid} valid entries, need at least {needed}")]
    TooFewPoints { valid: usize, needed: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Population over which the percentile bounds of step 3 are computed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PercentileScope {
    /// Each field's own T medians, per band.
    #[default]
    Field,
    /// All fields' medians in the region, per band.
    Region,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub cloud_prob_threshold: f64,
    pub pct_low: f64,
    pub pct_high: f64,
    pub sg_window: usize,
    pub sg_polyorder: usize,
    pub min_valid_pixels: usize,
    pub percentile_scope: PercentileScope,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            cloud_prob_threshold: 0.0,
            pct_low: 5.0,
            pct_high: 95.0,
            sg_window: 5,
            sg_polyorder: 2,
            min_valid_pixels: 1,
            percentile_scope: PercentileScope::Field,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<(), PreprocessError> {
        let bad = |m: String| Err(PreprocessError::Config(m));
        if !(self.cloud_prob_threshold.is_finite() && self.cloud_prob_threshold >= 0.0) {
            return bad(format!(
                "cloud threshold {} must be >= 0",
                self.cloud_prob_threshold
            ));
        }
        if !(0.0 <= self.pct_low && self.pct_low < self.pct_high && self.pct_high <= 100.0) {
            return bad(format!(
                "percentiles must satisfy 0 <= low < high <= 100, got {} / {}",
                self.pct_low, self.pct_high
            ));
        }
        if self.sg_window < 3 || self.sg_window.is_multiple_of(2) {
            return bad(format!("sg_window {} must be odd and >= 3", self.sg_window));
        }
        if self.sg_polyorder < 1 || self.sg_polyorder >= self.sg_window {
            return bad(format!(
                "sg_polyorder {} must be in [1, sg_window)",
                self.sg_polyorder
            ));
        }
        if self.min_valid_pixels < 1 {
            return bad("min_valid_pixels must be >= 1".into());
        }
        Ok(())
    }
}

/// Gap-filled band series of one field over the stack's dates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldSeries {
    pub field_id: i32,
    pub dates: Vec<NaiveDate>,
    pub band_series: BTreeMap<BandId, Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SkipReason {
    NoValidMedians {
        band: BandId,
    },
    PercentileMaskedAll {
        band: BandId,
    },
    TooFewPoints {
        band: BandId,
        valid: usize,
        needed: usize,
    },
}

impl fmt::Display for SkipReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SkipReason::NoValidMedians { band } => {
                write!(f, "{band}: no date with enough cloud-free pixels")
            }
            SkipReason::PercentileMaskedAll { band } => {
                write!(f, "{band}: no entries left after percentile masking")
            }
            SkipReason::TooFewPoints {
                band,
                valid,
                needed,
            } => {
                write!(f, "{band}: {valid} valid dates, smoothing needs {needed}")
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skipped {
    pub field_id: i32,
    pub reason: SkipReason,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Median,
    Percentile,
    Filled,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Median, Stage::Percentile, Stage::Filled];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Median => "median",
            Stage::Percentile => "percentile",
            Stage::Filled => "filled",
        }
    }
}

/// One field/band series at some stage: `(field_id, band, values)`.
pub type StageRow = (i32, BandId, Vec<Option<f64>>);

/// Intermediate values of every field/band after each stage.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StageTrace {
    pub rows: BTreeMap<Stage, Vec<StageRow>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Extraction {
    pub series: Vec<FieldSeries>,
    pub skipped: Vec<Skipped>,
    pub trace: Option<StageTrace>,
}

/// Sets every band pixel to NaN where cloud probability exceeds `threshold`
/// or is itself missing.
pub fn cloud_mask(scene: &Scene, threshold: f64) -> Scene {
    let cloudy: Vec<bool> = scene
        .cloud_prob
        .as_slice()
        .iter()
        .map(|&p| p.is_nan() || f64::from(p) > threshold)
        .collect();
    let mut out = scene.clone();
    for grid in out.bands.values_mut() {
        for (v, &c) in grid.as_mut_slice().iter_mut().zip(&cloudy) {
            if c {
                *v = f32::NAN;
            }
        }
    }
    out
}

fn median_in_place(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    })
}

fn median_at(grid: &[f32], pixels: &[usize], min_valid: usize, buf: &mut Vec<f64>) -> Option<f64> {
    buf.clear();
    buf.extend(
        pixels
            .iter()
            .map(|&i| grid[i])
            .filter(|v| !v.is_nan())
            .map(f64::from),
    );
    if buf.len() < min_valid.max(1) {
        return None;
    }
    median_in_place(buf)
}

/// Median of the non-missing `band` pixels inside field `field_id`, or
/// `None` when fewer than `min_valid_pixels` are valid.
pub fn field_median(
    scene: &Scene,
    fields: &FieldTable,
    field_id: i32,
    band: &BandId,
    min_valid_pixels: usize,
) -> Result<Option<f64>, PreprocessError> {
    if !fields.labels.contains_key(&field_id) {
        return Err(PreprocessError::UnknownField(field_id));
    }
    let grid = scene
        .bands
        .get(band)
        .ok_or_else(|| PreprocessError::UnknownBand(band.to_string()))?;
    let pixels: Vec<usize> = fields
        .field_mask
        .as_slice()
        .iter()
        .enumerate()
        .filter(|(_, &id)| id == field_id)
        .map(|(i, _)| i)
        .collect();
    Ok(median_at(
        grid.as_slice(),
        &pixels,
        min_valid_pixels,
        &mut Vec::new(),
    ))
}

/// Linear-interpolation percentile of an ascending slice (`p` in [0, 100]).
pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    let rank = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

fn percentile_bounds(values: impl Iterator<Item = f64>, low: f64, high: f64) -> Option<(f64, f64)> {
    let mut sorted: Vec<f64> = values.collect();
    if sorted.is_empty() {
        return None;
    }
    sorted.sort_by(f64::total_cmp);
    Some((
        percentile_sorted(&sorted, low),
        percentile_sorted(&sorted, high),
    ))
}

fn mask_outside(series: &[Option<f64>], lo: f64, hi: f64) -> Vec<Option<f64>> {
    series
        .iter()
        .map(|v| v.filter(|x| *x >= lo && *x <= hi))
        .collect()
}

/// Drops entries strictly outside the `[pct_low, pct_high]` percentile band
/// of the series' own valid entries. Entries equal to a bound are kept.
pub fn percentile_mask(
    series: &[Option<f64>],
    pct_low: f64,
    pct_high: f64,
) -> Result<Vec<Option<f64>>, PreprocessError> {
    if !(0.0 <= pct_low && pct_low <= pct_high && pct_high <= 100.0) {
        return Err(PreprocessError::Config(format!(
            "bad percentiles {pct_low} / {pct_high}"
        )));
    }
    let (lo, hi) = percentile_bounds(series.iter().flatten().copied(), pct_low, pct_high)
        .ok_or(PreprocessError::AllMissing)?;
    Ok(mask_outside(series, lo, hi))
}

fn linear_fill(series: &[Option<f64>]) -> Vec<f64> {
    let valid: Vec<(usize, f64)> = series
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|x| (i, x)))
        .collect();
    let mut out = Vec::with_capacity(series.len());
    let mut next = 0;
    for i in 0..series.len() {
        while next < valid.len() && valid[next].0 < i {
            next += 1;
        }
        let v = match (next.checked_sub(1).map(|p| valid[p]), valid.get(next)) {
            (_, Some(&(j, x))) if j == i => x,
            (Some((p, a)), Some(&(q, b))) => a + (b - a) * (i - p) as f64 / (q - p) as f64,
            (Some((_, a)), None) => a,
            (None, Some(&(_, b))) => b,
            (None, None) => unreachable!("caller guarantees a valid entry"),
        };
        out.push(v);
    }
    out
}

/// Value at `x = 0` of the least-squares polynomial of `degree` through
/// `(xs, ys)`, solved by Householder QR.
fn fit_at_origin(xs: &[f64], ys: &[f64], degree: usize) -> f64 {
    let m = xs.len();
    let p = degree + 1;
    debug_assert!(m >= p);
    // column-major Vandermonde
    let mut a = vec![0.0; m * p];
    for (r, &x) in xs.iter().enumerate() {
        let mut pow = 1.0;
        for c in 0..p {
            a[c * m + r] = pow;
            pow *= x;
        }
    }
    let mut b = ys.to_vec();
    for k in 0..p {
        let norm = (k..m).map(|r| a[k * m + r].powi(2)).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let alpha = if a[k * m + k] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = (k..m).map(|r| a[k * m + r]).collect();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        for c in k..p {
            let dot: f64 = (k..m).map(|r| v[r - k] * a[c * m + r]).sum();
            let f = 2.0 * dot / vnorm2;
            for r in k..m {
                a[c * m + r] -= f * v[r - k];
            }
        }
        let dot: f64 = (k..m).map(|r| v[r - k] * b[r]).sum();
        let f = 2.0 * dot / vnorm2;
        for r in k..m {
            b[r] -= f * v[r - k];
        }
    }
    let mut coef = vec![0.0; p];
    for k in (0..p).rev() {
        let s: f64 = (k + 1..p).map(|c| a[c * m + k] * coef[c]).sum();
        coef[k] = (b[k] - s) / a[k * m + k];
    }
    coef[0]
}

/// Fills gaps by linear interpolation (edge gaps take the nearest valid value)
/// and then applies Savitzky–Golay smoothing. Near the ends the window is
/// truncated to the available points and the polynomial refit there.
pub fn savgol_fill(
    series: &[Option<f64>],
    window: usize,
    polyorder: usize,
) -> Result<Vec<f64>, PreprocessError> {
    if window.is_multiple_of(2) || polyorder >= window {
        return Err(PreprocessError::Config(format!(
            "window {window} must be odd and exceed polyorder {polyorder}"
        )));
    }
    let valid = series.iter().flatten().count();
    if valid < polyorder + 1 {
        return Err(PreprocessError::TooFewPoints {
            valid,
            needed: polyorder + 1,
        });
    }
    let filled = linear_fill(series);
    let n = filled.len();
    let half = window / 2;
    let scale = half.max(1) as f64;
    let out = (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(n - 1);
            let xs: Vec<f64> = (lo..=hi).map(|j| (j as f64 - i as f64) / scale).collect();
            let degree = polyorder.min(xs.len() - 1);
            fit_at_origin(&xs, &filled[lo..=hi], degree)
        })
        .collect();
    Ok(out)
}

struct Medians {
    field_id: i32,
    by_band: Vec<Vec<Option<f64>>>,
}

/// Runs the full per-field pipeline over every labeled field. Fields that
/// cannot be gap-filled in some band are left out and listed in `skipped`.
/// Output is in ascending field id order regardless of thread count.
pub fn extract_field_series(
    stack: &SceneStack,
    fields: &FieldTable,
    cfg: &PreprocessConfig,
) -> Result<Extraction, PreprocessError> {
    run_extraction(stack, fields, cfg, false)
}

/// As [`extract_field_series`], also recording the values after each stage.
pub fn extract_field_series_traced(
    stack: &SceneStack,
    fields: &FieldTable,
    cfg: &PreprocessConfig,
) -> Result<Extraction, PreprocessError> {
    run_extraction(stack, fields, cfg, true)
}

fn run_extraction(
    stack: &SceneStack,
    fields: &FieldTable,
    cfg: &PreprocessConfig,
    trace: bool,
) -> Result<Extraction, PreprocessError> {
    cfg.validate()?;
    let bands = stack.band_ids();
    let dates = stack.dates();
    let masked: Vec<Scene> = stack
        .scenes
        .par_iter()
        .map(|s| cloud_mask(s, cfg.cloud_prob_threshold))
        .collect();
    let pixel_index: Vec<(i32, Vec<usize>)> = fields
        .pixel_index()
        .into_iter()
        .filter(|(id, _)| fields.labels.contains_key(id))
        .collect();

    let medians: Vec<Medians> = pixel_index
        .par_iter()
        .map(|(field_id, pixels)| {
            let mut buf = Vec::new();
            let by_band = bands
                .iter()
                .map(|band| {
                    masked
                        .iter()
                        .map(|scene| {
                            median_at(
                                scene.bands[band].as_slice(),
                                pixels,
                                cfg.min_valid_pixels,
                                &mut buf,
                            )
                        })
                        .collect()
                })
                .collect();
            Medians {
                field_id: *field_id,
                by_band,
            }
        })
        .collect();

    let region_bounds: Option<Vec<Option<(f64, f64)>>> =
        (cfg.percentile_scope == PercentileScope::Region).then(|| {
            (0..bands.len())
                .map(|b| {
                    percentile_bounds(
                        medians
                            .iter()
                            .flat_map(|m| m.by_band[b].iter().flatten().copied()),
                        cfg.pct_low,
                        cfg.pct_high,
                    )
                })
                .collect()
        });

    type FieldOutcome = (
        Result<FieldSeries, Skipped>,
        Vec<(Stage, BandId, Vec<Option<f64>>)>,
    );
    let outcomes: Vec<FieldOutcome> = medians
        .par_iter()
        .map(|m| {
            let mut stages = Vec::new();
            let mut band_series = BTreeMap::new();
            let skip = |reason| Skipped {
                field_id: m.field_id,
                reason,
            };
            for (b, band) in bands.iter().enumerate() {
                let raw = &m.by_band[b];
                if trace {
                    stages.push((Stage::Median, band.clone(), raw.clone()));
                }
                if raw.iter().all(Option::is_none) {
                    return (
                        Err(skip(SkipReason::NoValidMedians { band: band.clone() })),
                        stages,
                    );
                }
                let kept = match &region_bounds {
                    Some(bounds) => {
                        let (lo, hi) = bounds[b].expect("band has valid medians");
                        mask_outside(raw, lo, hi)
                    }
                    None => percentile_mask(raw, cfg.pct_low, cfg.pct_high)
                        .expect("series has valid entries"),
                };
                if trace {
                    stages.push((Stage::Percentile, band.clone(), kept.clone()));
                }
                if kept.iter().all(Option::is_none) {
                    return (
                        Err(skip(SkipReason::PercentileMaskedAll { band: band.clone() })),
                        stages,
                    );
                }
                match savgol_fill(&kept, cfg.sg_window, cfg.sg_polyorder) {
                    Ok(filled) => {
                        if trace {
                            stages.push((
                                Stage::Filled,
                                band.clone(),
                                filled.iter().copied().map(Some).collect(),
                            ));
                        }
                        band_series.insert(band.clone(), filled);
                    }
                    Err(PreprocessError::TooFewPoints { valid, needed }) => {
                        return (
                            Err(skip(SkipReason::TooFewPoints {
                                band: band.clone(),
                                valid,
                                needed,
                            })),
                            stages,
                        );
                    }
                    Err(e) => unreachable!("config validated: {e}"),
                }
            }
            (
                Ok(FieldSeries {
                    field_id: m.field_id,
                    dates: dates.clone(),
                    band_series,
                }),
                stages,
            )
        })
        .collect();

    let mut series = Vec::new();
    let mut skipped = Vec::new();
    let mut stage_trace = StageTrace::default();
    for ((outcome, stages), m) in outcomes.into_iter().zip(&medians) {
        match outcome {
            Ok(s) => series.push(s),
            Err(s) => skipped.push(s),
        }
        for (stage, band, values) in stages {
            stage_trace
                .rows
                .entry(stage)
                .or_default()
                .push((m.field_id, band, values));
        }
    }
    Ok(Extraction {
        series,
        skipped,
        trace: trace.then_some(stage_trace),
    })
}
