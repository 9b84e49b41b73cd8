//! Vegetation indices and per-field feature vectors.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::bundle::BandId;
use crate::class::CropClass;
use crate::preprocess::FieldSeries;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum IndexError {
    #[error("denominator is zero")]
    DegenerateDenominator,
    #[error("field {field_id} on {date}: index denominator is zero")]
    DegenerateAt { field_id: i32, date: NaiveDate },
    #[error("field {field_id} has no band {band}")]
    MissingBand { field_id: i32, band: String },
    #[error("field {field_id}: non-finite feature value on {date}")]
    NonFinite { field_id: i32, date: NaiveDate },
    #[error("field {field_id}: {found} values, expected {expected}")]
    LengthMismatch {
        field_id: i32,
        expected: usize,
        found: usize,
    },
    #[error("duplicate field id {0}")]
    DuplicateField(i32),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("class {0} has no examples")]
    EmptyClass(CropClass),
    #[error("unknown index {0:?}")]
    UnknownIndex(String),
}

/// Band names feeding each index. Defaults follow Sentinel-2 naming.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexBands {
    pub ndvi_nir: BandId,
    pub ndvi_red: BandId,
    pub gcvi_nir: BandId,
    pub gcvi_green: BandId,
}

impl Default for IndexBands {
    fn default() -> Self {
        let b = |s: &str| BandId::new(s).expect("static band name");
        Self {
            ndvi_nir: b("B08"),
            ndvi_red: b("B04"),
            gcvi_nir: b("B08"),
            gcvi_green: b("B03"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum IndexKind {
    Ndvi,
    Gcvi,
    Band(BandId),
}

impl IndexKind {
    pub fn required_bands(&self, map: &IndexBands) -> Vec<BandId> {
        match self {
            IndexKind::Ndvi => vec![map.ndvi_nir.clone(), map.ndvi_red.clone()],
            IndexKind::Gcvi => vec![map.gcvi_nir.clone(), map.gcvi_green.clone()],
            IndexKind::Band(b) => vec![b.clone()],
        }
    }
}

impl fmt::Display for IndexKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IndexKind::Ndvi => f.write_str("ndvi"),
            IndexKind::Gcvi => f.write_str("gcvi"),
            IndexKind::Band(b) => write!(f, "{b}"),
        }
    }
}

impl FromStr for IndexKind {
    type Err = IndexError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ndvi" => Ok(IndexKind::Ndvi),
            "gcvi" => Ok(IndexKind::Gcvi),
            _ => BandId::new(s)
                .map(IndexKind::Band)
                .map_err(|_| IndexError::UnknownIndex(s.to_string())),
        }
    }
}

/// (NIR − Red) / (NIR + Red)
pub fn ndvi(nir: f64, red: f64) -> Result<f64, IndexError> {
    let den = nir + red;
    if den == 0.0 {
        return Err(IndexError::DegenerateDenominator);
    }
    Ok((nir - red) / den)
}

/// NIR / Green − 1
pub fn gcvi(nir: f64, green: f64) -> Result<f64, IndexError> {
    if green == 0.0 {
        return Err(IndexError::DegenerateDenominator);
    }
    Ok(nir / green - 1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub field_id: i32,
    pub values: Vec<f64>,
    pub label: CropClass,
}

/// Labeled feature vectors sharing one date axis, kept sorted by field id.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureDataset {
    features: Vec<FeatureVector>,
    dates: Vec<NaiveDate>,
    class_counts: BTreeMap<CropClass, usize>,
}

impl FeatureDataset {
    pub fn new(
        mut features: Vec<FeatureVector>,
        dates: Vec<NaiveDate>,
    ) -> Result<Self, IndexError> {
        features.sort_by_key(|f| f.field_id);
        let mut class_counts = BTreeMap::new();
        for (i, f) in features.iter().enumerate() {
            if i > 0 && features[i - 1].field_id == f.field_id {
                return Err(IndexError::DuplicateField(f.field_id));
            }
            if f.values.len() != dates.len() {
                return Err(IndexError::LengthMismatch {
                    field_id: f.field_id,
                    expected: dates.len(),
                    found: f.values.len(),
                });
            }
            if let Some(t) = f.values.iter().position(|v| !v.is_finite()) {
                return Err(IndexError::NonFinite {
                    field_id: f.field_id,
                    date: dates[t],
                });
            }
            *class_counts.entry(f.label).or_insert(0) += 1;
        }
        Ok(Self {
            features,
            dates,
            class_counts,
        })
    }

    pub fn features(&self) -> &[FeatureVector] {
        &self.features
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    /// Series length T.
    pub fn series_len(&self) -> usize {
        self.dates.len()
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn class_counts(&self) -> &BTreeMap<CropClass, usize> {
        &self.class_counts
    }

    pub fn count(&self, class: CropClass) -> usize {
        self.class_counts.get(&class).copied().unwrap_or(0)
    }

    /// Subset keeping the features for which `keep` returns true.
    pub fn filter(&self, mut keep: impl FnMut(&FeatureVector) -> bool) -> Self {
        let features: Vec<FeatureVector> =
            self.features.iter().filter(|f| keep(f)).cloned().collect();
        let mut class_counts = BTreeMap::new();
        for f in &features {
            *class_counts.entry(f.label).or_insert(0) += 1;
        }
        Self {
            features,
            dates: self.dates.clone(),
            class_counts,
        }
    }

    pub fn into_features(self) -> Vec<FeatureVector> {
        self.features
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Excluded {
    pub field_id: i32,
    pub reason: String,
}

/// One feature vector per labeled series: `index` evaluated per date on the
/// gap-filled band values. Series without a label are excluded and reported.
pub fn build_features(
    series: &[FieldSeries],
    labels: &BTreeMap<i32, CropClass>,
    index: &IndexKind,
    bands: &IndexBands,
) -> Result<(FeatureDataset, Vec<Excluded>), IndexError> {
    let dates = series.first().map(|s| s.dates.clone()).unwrap_or_default();
    let mut features = Vec::with_capacity(series.len());
    let mut excluded = Vec::new();
    for s in series {
        let Some(&label) = labels.get(&s.field_id) else {
            excluded.push(Excluded {
                field_id: s.field_id,
                reason: "no label".into(),
            });
            continue;
        };
        let band = |b: &BandId| {
            s.band_series.get(b).ok_or_else(|| IndexError::MissingBand {
                field_id: s.field_id,
                band: b.to_string(),
            })
        };
        let at = |t: usize| IndexError::DegenerateAt {
            field_id: s.field_id,
            date: s.dates[t],
        };
        let values: Vec<f64> = match index {
            IndexKind::Ndvi => {
                let (nir, red) = (band(&bands.ndvi_nir)?, band(&bands.ndvi_red)?);
                (0..s.dates.len())
                    .map(|t| ndvi(nir[t], red[t]).map_err(|_| at(t)))
                    .collect::<Result<_, _>>()?
            }
            IndexKind::Gcvi => {
                let (nir, green) = (band(&bands.gcvi_nir)?, band(&bands.gcvi_green)?);
                (0..s.dates.len())
                    .map(|t| gcvi(nir[t], green[t]).map_err(|_| at(t)))
                    .collect::<Result<_, _>>()?
            }
            IndexKind::Band(b) => band(b)?.clone(),
        };
        features.push(FeatureVector {
            field_id: s.field_id,
            values,
            label,
        });
    }
    Ok((FeatureDataset::new(features, dates)?, excluded))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparabilityRow {
    pub index: String,
    pub class: CropClass,
    pub date: NaiveDate,
    pub mean: f64,
    pub std: f64,
}

/// Per-date mean and population standard deviation of each requested class.
pub fn class_separability_report(
    ds: &FeatureDataset,
    index_name: &str,
    classes: &[CropClass],
) -> Result<Vec<SeparabilityRow>, IndexError> {
    if ds.is_empty() {
        return Err(IndexError::EmptyDataset);
    }
    let mut rows = Vec::new();
    let requested: BTreeSet<CropClass> = classes.iter().copied().collect();
    for class in requested {
        let members: Vec<&FeatureVector> =
            ds.features.iter().filter(|f| f.label == class).collect();
        if members.is_empty() {
            return Err(IndexError::EmptyClass(class));
        }
        for (t, &date) in ds.dates.iter().enumerate() {
            // Welford
            let (mut mean, mut m2) = (0.0, 0.0);
            for (i, f) in members.iter().enumerate() {
                let x = f.values[t];
                let delta = x - mean;
                mean += delta / (i + 1) as f64;
                m2 += delta * (x - mean);
            }
            let std = (m2 / members.len() as f64).max(0.0).sqrt();
            rows.push(SeparabilityRow {
                index: index_name.to_string(),
                class,
                date,
                mean,
                std,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dates(n: usize) -> Vec<NaiveDate> {
        let start: NaiveDate = "2019-06-06".parse().unwrap();
        (0..n)
            .map(|i| start + chrono::Days::new(i as u64 * 12))
            .collect()
    }

    #[test]
    fn ndvi_examples() {
        assert_eq!(ndvi(0.5, 0.5).unwrap(), 0.0);
        assert_eq!(ndvi(0.5, 0.0).unwrap(), 1.0);
        assert!((ndvi(0.42, 0.18).unwrap() - 0.4).abs() < 1e-15);
        assert_eq!(ndvi(0.0, 0.0), Err(IndexError::DegenerateDenominator));
        assert_eq!(ndvi(0.3, -0.3), Err(IndexError::DegenerateDenominator));
    }

    #[test]
    fn gcvi_examples() {
        assert_eq!(gcvi(0.3, 0.3).unwrap(), 0.0);
        assert!((gcvi(0.6, 0.2).unwrap() - 2.0).abs() < 1e-15);
        assert_eq!(gcvi(0.6, 0.0), Err(IndexError::DegenerateDenominator));
    }

    proptest! {
        #[test]
        fn ndvi_is_antisymmetric(a in 0.0f64..1.0, b in 0.0f64..1.0) {
            prop_assume!(a + b > 0.0);
            prop_assert_eq!(ndvi(a, b).unwrap(), -ndvi(b, a).unwrap());
        }

        #[test]
        fn ndvi_is_scale_invariant(a in 1e-3f64..1.0, b in 1e-3f64..1.0, c in 1e-3f64..1e3) {
            let d = (ndvi(c * a, c * b).unwrap() - ndvi(a, b).unwrap()).abs();
            prop_assert!(d <= 1e-12, "diff {}", d);
        }

        #[test]
        fn ndvi_in_unit_range(a in 0.0f64..1.0, b in 0.0f64..1.0) {
            prop_assume!(a + b > 0.0);
            let v = ndvi(a, b).unwrap();
            prop_assert!((-1.0..=1.0).contains(&v));
        }
    }

    fn series(id: i32, bands: &[(&str, f64)], t: usize) -> FieldSeries {
        FieldSeries {
            field_id: id,
            dates: dates(t),
            band_series: bands
                .iter()
                .map(|(b, v)| (BandId::new(*b).unwrap(), vec![*v; t]))
                .collect(),
        }
    }

    fn table(labels: &[(i32, CropClass)]) -> BTreeMap<i32, CropClass> {
        labels.iter().copied().collect()
    }

    #[test]
    fn constant_bands_give_constant_ndvi() {
        let s = vec![series(1, &[("B08", 0.5), ("B04", 0.1)], 13)];
        let (ds, ex) = build_features(
            &s,
            &table(&[(1, CropClass::Maize)]),
            &IndexKind::Ndvi,
            &IndexBands::default(),
        )
        .unwrap();
        assert!(ex.is_empty());
        assert_eq!(ds.series_len(), 13);
        for v in &ds.features()[0].values {
            assert!((v - 2.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn raw_band_passes_through() {
        let mut s = series(4, &[("B08", 0.5), ("B04", 0.1)], 5);
        s.band_series
            .insert(BandId::new("B08").unwrap(), vec![0.1, 0.25, 0.3, 0.2, 0.15]);
        let (ds, _) = build_features(
            &[s.clone()],
            &table(&[(4, CropClass::Cassava)]),
            &"B08".parse().unwrap(),
            &IndexBands::default(),
        )
        .unwrap();
        assert_eq!(
            ds.features()[0].values,
            s.band_series[&BandId::new("B08").unwrap()]
        );
        assert_eq!(ds.features()[0].label, CropClass::Cassava);
    }

    #[test]
    fn unlabeled_series_excluded() {
        let s = vec![
            series(1, &[("B08", 0.5), ("B04", 0.1)], 3),
            series(2, &[("B08", 0.5), ("B04", 0.1)], 3),
        ];
        let (ds, ex) = build_features(
            &s,
            &table(&[(2, CropClass::Maize)]),
            &IndexKind::Ndvi,
            &IndexBands::default(),
        )
        .unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(
            ex,
            vec![Excluded {
                field_id: 1,
                reason: "no label".into()
            }]
        );
        assert_eq!(ds.len() + ex.len(), s.len());
    }

    #[test]
    fn missing_band_and_zero_denominator() {
        let s = vec![series(1, &[("B08", 0.5)], 3)];
        let t = table(&[(1, CropClass::Maize)]);
        assert!(matches!(
            build_features(&s, &t, &IndexKind::Ndvi, &IndexBands::default()),
            Err(IndexError::MissingBand { field_id: 1, .. })
        ));
        let s = vec![series(1, &[("B08", 0.0), ("B04", 0.0), ("B03", 0.2)], 3)];
        assert!(matches!(
            build_features(&s, &t, &IndexKind::Ndvi, &IndexBands::default()),
            Err(IndexError::DegenerateAt { field_id: 1, .. })
        ));
        let s = vec![series(1, &[("B08", 0.3), ("B03", 0.0)], 3)];
        assert!(matches!(
            build_features(&s, &t, &IndexKind::Gcvi, &IndexBands::default()),
            Err(IndexError::DegenerateAt { field_id: 1, .. })
        ));
    }

    #[test]
    fn dataset_rejects_bad_vectors() {
        let fv = |id, values: Vec<f64>| FeatureVector {
            field_id: id,
            values,
            label: CropClass::Maize,
        };
        assert!(matches!(
            FeatureDataset::new(vec![fv(1, vec![0.1, 0.2]), fv(1, vec![0.1, 0.2])], dates(2)),
            Err(IndexError::DuplicateField(1))
        ));
        assert!(matches!(
            FeatureDataset::new(vec![fv(1, vec![0.1])], dates(2)),
            Err(IndexError::LengthMismatch { .. })
        ));
        assert!(matches!(
            FeatureDataset::new(vec![fv(1, vec![0.1, f64::NAN])], dates(2)),
            Err(IndexError::NonFinite { .. })
        ));
        let ds = FeatureDataset::new(vec![fv(3, vec![0.1, 0.2]), fv(1, vec![0.3, 0.2])], dates(2))
            .unwrap();
        assert_eq!(ds.features()[0].field_id, 1);
        assert_eq!(ds.count(CropClass::Maize), 2);
    }

    fn ds_of(rows: &[(i32, CropClass, Vec<f64>)]) -> FeatureDataset {
        let t = rows[0].2.len();
        FeatureDataset::new(
            rows.iter()
                .map(|(id, c, v)| FeatureVector {
                    field_id: *id,
                    values: v.clone(),
                    label: *c,
                })
                .collect(),
            dates(t),
        )
        .unwrap()
    }

    #[test]
    fn single_example_has_zero_std() {
        let ds = ds_of(&[(1, CropClass::Maize, vec![0.2, 0.5, 0.7])]);
        let rows = class_separability_report(&ds, "ndvi", &[CropClass::Maize]).unwrap();
        assert_eq!(rows.len(), 3);
        for (r, v) in rows.iter().zip([0.2, 0.5, 0.7]) {
            assert_eq!(r.mean, v);
            assert_eq!(r.std, 0.0);
        }
    }

    #[test]
    fn identical_examples_have_zero_std() {
        let ds = ds_of(&[
            (1, CropClass::Maize, vec![0.3, 0.6]),
            (2, CropClass::Maize, vec![0.3, 0.6]),
            (3, CropClass::Cassava, vec![0.1, 0.9]),
            (4, CropClass::Cassava, vec![0.1, 0.9]),
        ]);
        let rows = class_separability_report(&ds, "ndvi", &[CropClass::Maize, CropClass::Cassava])
            .unwrap();
        assert!(rows.iter().all(|r| r.std.abs() < 1e-15));
    }

    #[test]
    fn empty_class_and_dataset() {
        let ds = ds_of(&[(1, CropClass::Maize, vec![0.3, 0.6])]);
        assert_eq!(
            class_separability_report(&ds, "ndvi", &CropClass::PURE),
            Err(IndexError::EmptyClass(CropClass::Cassava))
        );
        let empty = FeatureDataset::new(vec![], dates(2)).unwrap();
        assert_eq!(
            class_separability_report(&empty, "ndvi", &CropClass::PURE),
            Err(IndexError::EmptyDataset)
        );
    }
}
