//! Synthetic grid bundles with class-specific NDVI phenology.
//!
//! Each class follows a parameterized curve over the season: a Gaussian
//! green-up peak on a baseline, plus an optional late second peak for the
//! maize-like classes. Cassava-like classes have a high baseline and a small
//! amplitude. Fields are square pixel blocks separated by background.

use std::collections::BTreeMap;

use chrono::{Days, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::bundle::{BandId, FieldTable, Scene, SceneStack};
use crate::class::CropClass;
use crate::grid::Grid;
use crate::indices::{FeatureDataset, FeatureVector, IndexBands};
use crate::rng::{Purpose, SplitMix64};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid synth parameters: {0}")]
pub struct SynthError(pub String);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub class_counts: Vec<(CropClass, usize)>,
    /// Side length of each square field, in pixels.
    pub field_size: usize,
    pub dates: usize,
    /// Standard deviation of per-field curve jitter and per-pixel NDVI noise.
    pub noise: f64,
    /// Probability that a field is fully clouded on a given date.
    pub cloud_fraction: f64,
    /// Give every class the same curve (a chance-level benchmark).
    pub identical_curves: bool,
    pub seed: u64,
    pub region_id: String,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            class_counts: vec![(CropClass::Maize, 50), (CropClass::Cassava, 50)],
            field_size: 3,
            dates: 13,
            noise: 0.02,
            cloud_fraction: 0.1,
            identical_curves: false,
            seed: 0,
            region_id: "synthetic".into(),
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError(m.to_string()));
        if self.class_counts.is_empty() || self.class_counts.iter().all(|(_, n)| *n == 0) {
            return bad("no fields requested");
        }
        let mut seen = std::collections::BTreeSet::new();
        if !self.class_counts.iter().all(|(c, _)| seen.insert(*c)) {
            return bad("duplicate class");
        }
        if self.field_size == 0 {
            return bad("field_size must be positive");
        }
        if self.dates < 2 {
            return bad("need at least 2 dates");
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return bad("noise must be finite and >= 0");
        }
        if !(0.0..=1.0).contains(&self.cloud_fraction) {
            return bad("cloud_fraction must be in [0, 1]");
        }
        if self.region_id.is_empty() {
            return bad("empty region id");
        }
        Ok(())
    }

    pub fn total_fields(&self) -> usize {
        self.class_counts.iter().map(|(_, n)| n).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Curve {
    base: f64,
    amp: f64,
    peak: f64,
    width: f64,
    amp2: f64,
    peak2: f64,
}

fn curve_for(class: CropClass) -> Curve {
    let c = |base, amp, peak, width, amp2, peak2| Curve {
        base,
        amp,
        peak,
        width,
        amp2,
        peak2,
    };
    match class {
        CropClass::Maize => c(0.30, 0.45, 0.12, 0.16, 0.25, 0.88),
        CropClass::Cassava => c(0.52, 0.14, 0.55, 0.40, 0.0, 0.0),
        CropClass::MaizeCommonBean => c(0.28, 0.40, 0.22, 0.14, 0.12, 0.80),
        CropClass::MaizeCassava => c(0.42, 0.30, 0.30, 0.25, 0.10, 0.90),
        CropClass::MaizeSoybean => c(0.26, 0.48, 0.38, 0.14, 0.0, 0.0),
        CropClass::CommonBean => c(0.24, 0.42, 0.02, 0.12, 0.18, 0.65),
        CropClass::CassavaCommonBean => c(0.46, 0.22, 0.10, 0.30, 0.10, 0.70),
    }
}

impl Curve {
    fn jittered(self, rng: &mut SplitMix64, noise: f64) -> Curve {
        if noise == 0.0 {
            return self;
        }
        let mut g = || rng.next_gaussian() * noise;
        Curve {
            base: self.base + g(),
            amp: self.amp * (1.0 + 2.0 * g()),
            peak: self.peak + 2.0 * g(),
            width: (self.width * (1.0 + 2.0 * g())).max(0.03),
            amp2: self.amp2 * (1.0 + 2.0 * g()),
            peak2: self.peak2 + 2.0 * g(),
        }
    }

    fn at(&self, s: f64) -> f64 {
        let bump = |p: f64, w: f64| (-((s - p) / w).powi(2)).exp();
        self.base + self.amp * bump(self.peak, self.width) + self.amp2 * bump(self.peak2, 0.12)
    }
}

const SEASON_START: (i32, u32, u32) = (2019, 6, 6);
const SEASON_DAYS: u64 = 150;

/// `n` dates spread over the June–November season.
pub fn season_dates(n: usize) -> Vec<NaiveDate> {
    let (y, m, d) = SEASON_START;
    let start = NaiveDate::from_ymd_opt(y, m, d).expect("valid date");
    (0..n)
        .map(|i| {
            let off = if n > 1 {
                (i as u64 * SEASON_DAYS + (n as u64 - 1) / 2) / (n as u64 - 1)
            } else {
                0
            };
            start + Days::new(off)
        })
        .collect()
}

fn season_position(i: usize, n: usize) -> f64 {
    i as f64 / (n - 1) as f64
}

/// Reflectances that reproduce a target NDVI.
fn reflectances(ndvi: f64) -> [(&'static str, f32); 6] {
    let ndvi = ndvi.clamp(-0.5, 0.95);
    let red = 0.12 - 0.08 * ndvi;
    let nir = red * (1.0 + ndvi) / (1.0 - ndvi);
    let green = 0.07 + 0.02 * (1.0 - ndvi);
    [
        ("B03", green as f32),
        ("B04", red as f32),
        ("B08", nir as f32),
        ("B8A", (nir * 1.02) as f32),
        ("B11", (0.26 - 0.10 * ndvi) as f32),
        ("B12", (0.19 - 0.11 * ndvi) as f32),
    ]
}

fn labels_in_field_order(params: &SynthParams) -> Vec<CropClass> {
    let mut labels: Vec<CropClass> = params
        .class_counts
        .iter()
        .flat_map(|&(c, n)| std::iter::repeat_n(c, n))
        .collect();
    SplitMix64::derive(params.seed, Purpose::Synth, u64::MAX, 0).shuffle(&mut labels);
    labels
}

fn field_curve(params: &SynthParams, class: CropClass, rng: &mut SplitMix64) -> Curve {
    let base = if params.identical_curves {
        curve_for(CropClass::Maize)
    } else {
        curve_for(class)
    };
    base.jittered(rng, params.noise)
}

/// Writes a scene stack and field table following the class curves.
pub fn synth_bundle(params: &SynthParams) -> Result<(SceneStack, FieldTable), SynthError> {
    params.validate()?;
    let labels = labels_in_field_order(params);
    let n = labels.len();
    let t = params.dates;
    let fs = params.field_size;
    let cols = (n as f64).sqrt().ceil() as usize;
    let rows = n.div_ceil(cols);
    let width = cols * (fs + 1) + 1;
    let height = rows * (fs + 1) + 1;
    let dates = season_dates(t);
    let band_names: Vec<&str> = reflectances(0.0).iter().map(|(b, _)| *b).collect();

    let background = reflectances(0.15);
    let mut band_grids: Vec<Vec<Grid<f32>>> = (0..t)
        .map(|_| {
            background
                .iter()
                .map(|(_, v)| Grid::filled(width, height, *v))
                .collect()
        })
        .collect();
    let mut clouds: Vec<Grid<f32>> = (0..t).map(|_| Grid::filled(width, height, 0.0)).collect();
    let mut mask = Grid::filled(width, height, 0i32);
    let mut table = BTreeMap::new();

    for (i, &class) in labels.iter().enumerate() {
        let field_id = i as i32 + 1;
        table.insert(field_id, class);
        let mut rng = SplitMix64::derive(params.seed, Purpose::Synth, field_id as u64, 0);
        let curve = field_curve(params, class, &mut rng);
        let (r0, c0) = ((i / cols) * (fs + 1) + 1, (i % cols) * (fs + 1) + 1);
        for r in r0..r0 + fs {
            for c in c0..c0 + fs {
                mask.set(r, c, field_id);
            }
        }
        for (ti, grids) in band_grids.iter_mut().enumerate() {
            if params.cloud_fraction > 0.0 && rng.next_f64() < params.cloud_fraction {
                for r in r0..r0 + fs {
                    for c in c0..c0 + fs {
                        clouds[ti].set(r, c, 80.0);
                    }
                }
            }
            let clean = curve.at(season_position(ti, t));
            for r in r0..r0 + fs {
                for c in c0..c0 + fs {
                    let v = if params.noise > 0.0 {
                        clean + rng.next_gaussian() * params.noise
                    } else {
                        clean
                    };
                    for (g, (_, refl)) in grids.iter_mut().zip(reflectances(v)) {
                        g.set(r, c, refl);
                    }
                }
            }
        }
    }

    let scenes = dates
        .iter()
        .zip(band_grids)
        .zip(clouds)
        .map(|((&date, grids), cloud_prob)| Scene {
            date,
            bands: band_names
                .iter()
                .map(|b| BandId::new(*b).expect("static band name"))
                .zip(grids)
                .collect(),
            cloud_prob,
        })
        .collect();
    Ok((
        SceneStack {
            region_id: params.region_id.clone(),
            pixel_size_m: 10.0,
            scenes,
            index_bands: IndexBands::default(),
        },
        FieldTable {
            field_mask: mask,
            labels: table,
        },
    ))
}

/// NDVI feature vectors drawn from the same curves, skipping the rasters.
/// Useful when only the classifier side is under test.
pub fn synth_features(params: &SynthParams) -> Result<FeatureDataset, SynthError> {
    params.validate()?;
    let labels = labels_in_field_order(params);
    let t = params.dates;
    let features = labels
        .iter()
        .enumerate()
        .map(|(i, &class)| {
            let field_id = i as i32 + 1;
            let mut rng = SplitMix64::derive(params.seed, Purpose::Synth, field_id as u64, 1);
            let curve = field_curve(params, class, &mut rng);
            let values = (0..t)
                .map(|ti| {
                    let v = curve.at(season_position(ti, t));
                    if params.noise > 0.0 {
                        v + rng.next_gaussian() * params.noise
                    } else {
                        v
                    }
                })
                .collect();
            FeatureVector {
                field_id,
                values,
                label: class,
            }
        })
        .collect();
    FeatureDataset::new(features, season_dates(t)).map_err(|e| SynthError(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::indices::ndvi;

    #[test]
    fn dates_span_the_season() {
        let d = season_dates(13);
        assert_eq!(d[0].to_string(), "2019-06-06");
        assert_eq!(d[12].to_string(), "2019-11-03");
        assert!(d.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn reflectances_reproduce_ndvi() {
        for target in [0.1, 0.4, 0.8] {
            let r = reflectances(target);
            let got = ndvi(f64::from(r[2].1), f64::from(r[1].1)).unwrap();
            assert!((got - target).abs() < 1e-6);
        }
    }

    #[test]
    fn bundle_is_valid_and_deterministic() {
        let p = SynthParams {
            class_counts: vec![(CropClass::Maize, 7), (CropClass::CommonBean, 4)],
            seed: 3,
            ..Default::default()
        };
        let (stack, fields) = synth_bundle(&p).unwrap();
        stack.validate().unwrap();
        fields.validate(stack.dims().unwrap()).unwrap();
        assert_eq!(fields.labels.len(), 11);
        assert_eq!(stack.len(), 13);
        assert_eq!(synth_bundle(&p).unwrap(), (stack, fields));
    }

    #[test]
    fn parameter_validation() {
        let ok = SynthParams::default();
        for bad in [
            SynthParams {
                dates: 1,
                ..ok.clone()
            },
            SynthParams {
                field_size: 0,
                ..ok.clone()
            },
            SynthParams {
                cloud_fraction: 1.5,
                ..ok.clone()
            },
            SynthParams {
                noise: -0.1,
                ..ok.clone()
            },
            SynthParams {
                class_counts: vec![],
                ..ok.clone()
            },
            SynthParams {
                class_counts: vec![(CropClass::Maize, 1), (CropClass::Maize, 2)],
                ..ok.clone()
            },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }
}
