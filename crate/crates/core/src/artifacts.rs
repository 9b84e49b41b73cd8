//! CSV artifacts exchanged between pipeline stages and with plotting tools.
//!
//! Floats are written with Rust's shortest round-trip formatting, so reading
//! an artifact back reproduces every value bit for bit.

use std::collections::BTreeMap;

use chrono::NaiveDate;

use crate::bundle::BandId;
use crate::class::CropClass;
use crate::experiments::{ConfusionMatrix, ExperimentReport};
use crate::indices::SeparabilityRow;
use crate::preprocess::{FieldSeries, Skipped, StageTrace};

#[derive(Debug, thiserror::Error)]
pub enum ArtifactError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("line {line}: {msg}")]
    Parse { line: u64, msg: String },
    #[error("field {0} has no label")]
    Unlabeled(i32),
}

fn writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new())
}

fn finish(w: csv::Writer<Vec<u8>>) -> String {
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8 csv")
}

pub const SERIES_HEADER: [&str; 5] = ["field_id", "crop", "band", "date", "value"];

/// Long-format gap-filled series: `field_id,crop,band,date,value`.
pub fn series_csv(
    series: &[FieldSeries],
    labels: &BTreeMap<i32, CropClass>,
) -> Result<String, ArtifactError> {
    let mut w = writer();
    w.write_record(SERIES_HEADER)?;
    for s in series {
        let crop = labels
            .get(&s.field_id)
            .ok_or(ArtifactError::Unlabeled(s.field_id))?;
        for (band, values) in &s.band_series {
            for (date, v) in s.dates.iter().zip(values) {
                w.write_record([
                    s.field_id.to_string(),
                    crop.to_string(),
                    band.to_string(),
                    date.to_string(),
                    v.to_string(),
                ])?;
            }
        }
    }
    Ok(finish(w))
}

pub type LabeledSeries = (Vec<FieldSeries>, BTreeMap<i32, CropClass>);

/// Parses [`series_csv`] output back into series and labels.
pub fn parse_series_csv(text: &str) -> Result<LabeledSeries, ArtifactError> {
    let mut r = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != SERIES_HEADER {
        return Err(ArtifactError::Parse {
            line: 1,
            msg: format!("expected header {}", SERIES_HEADER.join(",")),
        });
    }
    // field -> (label, band -> [(date, value)])
    type Acc = BTreeMap<i32, (CropClass, BTreeMap<BandId, Vec<(NaiveDate, f64)>>)>;
    let mut acc: Acc = BTreeMap::new();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let err = |msg: String| ArtifactError::Parse { line, msg };
        let id: i32 = rec[0]
            .parse()
            .map_err(|_| err(format!("bad field id {:?}", &rec[0])))?;
        let crop: CropClass = rec[1].parse().map_err(|e| err(format!("{e}")))?;
        let band = BandId::new(&rec[2]).map_err(|e| err(e.to_string()))?;
        let date = NaiveDate::parse_from_str(&rec[3], "%Y-%m-%d")
            .map_err(|_| err(format!("bad date {:?}", &rec[3])))?;
        let value: f64 = rec[4]
            .parse()
            .map_err(|_| err(format!("bad value {:?}", &rec[4])))?;
        let entry = acc.entry(id).or_insert_with(|| (crop, BTreeMap::new()));
        if entry.0 != crop {
            return Err(err(format!("field {id} has two labels")));
        }
        entry.1.entry(band).or_default().push((date, value));
    }
    let mut series = Vec::new();
    let mut labels = BTreeMap::new();
    let mut axis: Option<Vec<NaiveDate>> = None;
    for (id, (crop, bands)) in acc {
        let mut band_series = BTreeMap::new();
        let mut dates_here: Option<Vec<NaiveDate>> = None;
        for (band, mut points) in bands {
            points.sort_by_key(|p| p.0);
            let dates: Vec<NaiveDate> = points.iter().map(|p| p.0).collect();
            if dates.windows(2).any(|w| w[0] == w[1]) {
                return Err(ArtifactError::Parse {
                    line: 0,
                    msg: format!("field {id} band {band} repeats a date"),
                });
            }
            match &dates_here {
                Some(d) if *d != dates => {
                    return Err(ArtifactError::Parse {
                        line: 0,
                        msg: format!("field {id}: bands disagree on dates"),
                    })
                }
                _ => dates_here = Some(dates),
            }
            band_series.insert(band, points.into_iter().map(|p| p.1).collect());
        }
        let dates = dates_here.unwrap_or_default();
        match &axis {
            Some(a) if *a != dates => {
                return Err(ArtifactError::Parse {
                    line: 0,
                    msg: format!("field {id}: dates differ from other fields"),
                })
            }
            _ => axis = Some(dates.clone()),
        }
        labels.insert(id, crop);
        series.push(FieldSeries {
            field_id: id,
            dates,
            band_series,
        });
    }
    Ok((series, labels))
}

/// `field_id,reason`
pub fn skip_report_csv(skipped: &[Skipped]) -> Result<String, ArtifactError> {
    let mut w = writer();
    w.write_record(["field_id", "reason"])?;
    for s in skipped {
        w.write_record([s.field_id.to_string(), s.reason.to_string()])?;
    }
    Ok(finish(w))
}

/// One `field_id,band,date,value` table per stage; missing values are empty.
pub fn stage_dump_csvs(
    trace: &StageTrace,
    dates: &[NaiveDate],
) -> Result<Vec<(&'static str, String)>, ArtifactError> {
    let mut out = Vec::new();
    for (stage, rows) in &trace.rows {
        let mut w = writer();
        w.write_record(["field_id", "band", "date", "value"])?;
        for (id, band, values) in rows {
            for (d, v) in dates.iter().zip(values) {
                w.write_record([
                    id.to_string(),
                    band.to_string(),
                    d.to_string(),
                    v.map(|x| x.to_string()).unwrap_or_default(),
                ])?;
            }
        }
        out.push((stage.name(), finish(w)));
    }
    Ok(out)
}

/// `index,class,date,mean,std`
pub fn separability_csv(rows: &[SeparabilityRow]) -> Result<String, ArtifactError> {
    let mut w = writer();
    w.write_record(["index", "class", "date", "mean", "std"])?;
    for r in rows {
        w.write_record([
            r.index.clone(),
            r.class.to_string(),
            r.date.to_string(),
            r.mean.to_string(),
            r.std.to_string(),
        ])?;
    }
    Ok(finish(w))
}

/// Table-shaped summary: `experiment,m,k,OA,acc_<class>...` over all seven
/// classes; classes outside an experiment are left empty.
pub fn summary_csv(reports: &[ExperimentReport]) -> Result<String, ArtifactError> {
    let mut w = writer();
    let mut header = vec![
        "experiment".to_string(),
        "m".into(),
        "k".into(),
        "OA".into(),
    ];
    header.extend(CropClass::ALL.iter().map(|c| format!("acc_{c}")));
    w.write_record(&header)?;
    for r in reports {
        let mut row = vec![
            r.spec.included_classes.len().to_string(),
            r.m.to_string(),
            r.selected_k.to_string(),
            r.overall_accuracy.to_string(),
        ];
        row.extend(CropClass::ALL.iter().map(|c| {
            r.per_class_accuracy
                .get(c)
                .map(|a| a.to_string())
                .unwrap_or_default()
        }));
        w.write_record(&row)?;
    }
    Ok(finish(w))
}

/// Square count table: header `true_class,<predicted classes...>`.
pub fn confusion_csv(cm: &ConfusionMatrix) -> Result<String, ArtifactError> {
    let mut w = writer();
    let mut header = vec!["true_class".to_string()];
    header.extend(cm.classes.iter().map(|c| c.to_string()));
    w.write_record(&header)?;
    for (c, row) in cm.classes.iter().zip(&cm.counts) {
        let mut rec = vec![c.to_string()];
        rec.extend(row.iter().map(|n| n.to_string()));
        w.write_record(&rec)?;
    }
    Ok(finish(w))
}

/// `field_id,true_class,predicted_class,neighbor_ids,neighbor_distances`,
/// with the neighbor lists joined by `|`.
pub fn predictions_csv<'a>(
    rows: impl IntoIterator<Item = (i32, Option<CropClass>, &'a crate::knn::NeighborResult)>,
) -> Result<String, ArtifactError> {
    let mut w = writer();
    w.write_record([
        "field_id",
        "true_class",
        "predicted_class",
        "neighbor_ids",
        "neighbor_distances",
    ])?;
    for (id, truth, r) in rows {
        let ids: Vec<String> = r.neighbor_ids.iter().map(|i| i.to_string()).collect();
        let ds: Vec<String> = r.distances.iter().map(|d| d.to_string()).collect();
        w.write_record([
            id.to_string(),
            truth.map(|c| c.to_string()).unwrap_or_default(),
            r.predicted.to_string(),
            ids.join("|"),
            ds.join("|"),
        ])?;
    }
    Ok(finish(w))
}
