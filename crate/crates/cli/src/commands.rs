use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use cropknn::artifacts::{self, LabeledSeries};
use cropknn::experiments::{run_suite, SuiteSpec, DEFAULT_FOLDS, DEFAULT_K_CANDIDATES};
use cropknn::fsutil::write_atomic;
use cropknn::indices::Excluded;
use cropknn::preprocess::{extract_field_series, extract_field_series_traced, PercentileScope};
use cropknn::synth::{synth_bundle, SynthParams};
use cropknn::{
    build_features, class_separability_report, read_bundle, write_bundle, CropClass,
    FeatureDataset, IndexBands, IndexKind, KnnModel, PreprocessConfig,
};

use crate::config::{parse_list, ConfigFile};
use crate::error::CliError;
use crate::{BandsArgs, Cli, Command, ExperimentArgs, PredictArgs, PreprocessFlags, SynthArgs};

const KNOWN_KEYS: &[&str] = &[
    "seed",
    "out",
    "threads",
    "debug_dump",
    "bundle",
    "cloud_threshold",
    "pct_low",
    "pct_high",
    "sg_window",
    "sg_polyorder",
    "min_valid_pixels",
    "percentile_scope",
    "series",
    "indices",
    "classes",
    "index",
    "folds",
    "k_candidates",
    "counts",
    "survey_profile",
    "field_size",
    "dates",
    "noise",
    "cloud_fraction",
    "identical_curves",
    "region_id",
    "train",
    "query",
    "k",
];

/// Class counts of the Kenya field survey, in frequency order.
pub const SURVEY_COUNTS: [(CropClass, usize); 7] = [
    (CropClass::Maize, 1462),
    (CropClass::Cassava, 829),
    (CropClass::MaizeCommonBean, 487),
    (CropClass::MaizeCassava, 172),
    (CropClass::MaizeSoybean, 160),
    (CropClass::CommonBean, 98),
    (CropClass::CassavaCommonBean, 78),
];

struct Ctx<'a> {
    cfg: &'a ConfigFile,
    seed: u64,
    out: PathBuf,
    debug_dump: bool,
}

impl Ctx<'_> {
    fn write(&self, rel: impl AsRef<Path>, contents: &str) -> Result<PathBuf, CliError> {
        let path = self.out.join(rel);
        write_atomic(&path, contents.as_bytes())
            .map_err(|e| CliError::Internal(format!("writing {}: {e}", path.display())))?;
        Ok(path)
    }
}

pub fn dispatch(cli: &Cli, cfg: &ConfigFile) -> Result<(), CliError> {
    cfg.check_keys(KNOWN_KEYS)?;
    let out: PathBuf = cfg
        .pick(cli.out.clone(), "out")?
        .unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&out)
        .map_err(|e| CliError::Validation(format!("output directory {}: {e}", out.display())))?;
    let ctx = Ctx {
        cfg,
        seed: cfg.pick(cli.seed, "seed")?.unwrap_or(0),
        out,
        debug_dump: cfg.flag(cli.debug_dump, "debug_dump")?,
    };
    match &cli.command {
        Command::Preprocess(a) => cmd_preprocess(&ctx, &a.pre),
        Command::Bands(a) => cmd_bands(&ctx, a),
        Command::Experiment(a) => cmd_experiment(&ctx, a),
        Command::Synth(a) => cmd_synth(&ctx, a),
        Command::Predict(a) => cmd_predict(&ctx, a),
    }
}

fn preprocess_config(cfg: &ConfigFile, f: &PreprocessFlags) -> Result<PreprocessConfig, CliError> {
    let d = PreprocessConfig::default();
    let scope = match cfg
        .pick(f.percentile_scope.clone(), "percentile_scope")?
        .as_deref()
    {
        None | Some("field") => PercentileScope::Field,
        Some("region") => PercentileScope::Region,
        Some(other) => {
            return Err(CliError::Validation(format!(
                "percentile_scope must be field or region, got {other:?}"
            )))
        }
    };
    let pc = PreprocessConfig {
        cloud_prob_threshold: cfg
            .pick(f.cloud_threshold, "cloud_threshold")?
            .unwrap_or(d.cloud_prob_threshold),
        pct_low: cfg.pick(f.pct_low, "pct_low")?.unwrap_or(d.pct_low),
        pct_high: cfg.pick(f.pct_high, "pct_high")?.unwrap_or(d.pct_high),
        sg_window: cfg.pick(f.sg_window, "sg_window")?.unwrap_or(d.sg_window),
        sg_polyorder: cfg
            .pick(f.sg_polyorder, "sg_polyorder")?
            .unwrap_or(d.sg_polyorder),
        min_valid_pixels: cfg
            .pick(f.min_valid_pixels, "min_valid_pixels")?
            .unwrap_or(d.min_valid_pixels),
        percentile_scope: scope,
    };
    pc.validate()?;
    Ok(pc)
}

fn bundle_path(ctx: &Ctx, f: &PreprocessFlags) -> Result<Option<PathBuf>, CliError> {
    ctx.cfg.pick(f.bundle.clone(), "bundle")
}

/// Gap-filled series plus labels and the band map, from a bundle.
fn series_from_bundle(
    ctx: &Ctx,
    path: &Path,
    f: &PreprocessFlags,
) -> Result<(LabeledSeries, IndexBands), CliError> {
    let pc = preprocess_config(ctx.cfg, f)?;
    let (stack, fields) = read_bundle(path)?;
    let extraction = if ctx.debug_dump {
        extract_field_series_traced(&stack, &fields, &pc)?
    } else {
        extract_field_series(&stack, &fields, &pc)?
    };
    ctx.write(
        "skipped.csv",
        &artifacts::skip_report_csv(&extraction.skipped)?,
    )?;
    if let Some(trace) = &extraction.trace {
        for (stage, text) in artifacts::stage_dump_csvs(trace, &stack.dates())? {
            ctx.write(Path::new("debug").join(format!("{stage}.csv")), &text)?;
        }
    }
    eprintln!(
        "preprocessed {} fields, skipped {}",
        extraction.series.len(),
        extraction.skipped.len()
    );
    Ok(((extraction.series, fields.labels), stack.index_bands))
}

fn read_series_artifact(path: &Path) -> Result<LabeledSeries, CliError> {
    let text =
        fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(artifacts::parse_series_csv(&text)?)
}

fn load_series(
    ctx: &Ctx,
    f: &PreprocessFlags,
    series: Option<PathBuf>,
) -> Result<(LabeledSeries, IndexBands), CliError> {
    let series = ctx.cfg.pick(series, "series")?;
    match (bundle_path(ctx, f)?, series) {
        (Some(_), Some(_)) => Err(CliError::Validation(
            "give either --bundle or --series, not both".into(),
        )),
        (Some(b), None) => series_from_bundle(ctx, &b, f),
        (None, Some(s)) => Ok((read_series_artifact(&s)?, IndexBands::default())),
        (None, None) => Err(CliError::Validation(
            "--bundle or --series is required".into(),
        )),
    }
}

fn report_exclusions(excluded: &[Excluded]) {
    for e in excluded {
        eprintln!("excluded field {}: {}", e.field_id, e.reason);
    }
}

fn cmd_preprocess(ctx: &Ctx, f: &PreprocessFlags) -> Result<(), CliError> {
    let path =
        bundle_path(ctx, f)?.ok_or_else(|| CliError::Validation("--bundle is required".into()))?;
    let ((series, labels), _) = series_from_bundle(ctx, &path, f)?;
    let p = ctx.write("series.csv", &artifacts::series_csv(&series, &labels)?)?;
    println!("{}", p.display());
    Ok(())
}

fn cmd_bands(ctx: &Ctx, a: &BandsArgs) -> Result<(), CliError> {
    let ((series, labels), bands) = load_series(ctx, &a.pre, a.series.clone())?;
    let indices: Vec<IndexKind> = match ctx.cfg.pick(a.indices.clone(), "indices")? {
        Some(list) => parse_list(&list, "index")?,
        None => {
            let present: Vec<String> = series
                .first()
                .map(|s| s.band_series.keys().map(|b| b.to_string()).collect())
                .unwrap_or_default();
            let mut v = vec![IndexKind::Ndvi, IndexKind::Gcvi];
            for b in ["B08", "B8A", "B11", "B12"] {
                if present.iter().any(|p| p == b) {
                    v.push(b.parse()?);
                }
            }
            v
        }
    };
    let classes: Vec<CropClass> = match ctx.cfg.pick(a.classes.clone(), "classes")? {
        Some(list) => parse_list(&list, "class")?,
        None => CropClass::PURE
            .into_iter()
            .filter(|c| labels.values().any(|l| l == c))
            .collect(),
    };
    if classes.is_empty() {
        return Err(CliError::Data("no pure-crop class present".into()));
    }
    let mut rows = Vec::new();
    for index in &indices {
        let (ds, excluded) = build_features(&series, &labels, index, &bands)?;
        report_exclusions(&excluded);
        rows.extend(class_separability_report(
            &ds,
            &index.to_string(),
            &classes,
        )?);
    }
    let p = ctx.write("separability.csv", &artifacts::separability_csv(&rows)?)?;
    println!("{}", p.display());
    Ok(())
}

fn features(
    series: &[cropknn::FieldSeries],
    labels: &BTreeMap<i32, CropClass>,
    index: &IndexKind,
    bands: &IndexBands,
) -> Result<FeatureDataset, CliError> {
    let (ds, excluded) = build_features(series, labels, index, bands)?;
    report_exclusions(&excluded);
    Ok(ds)
}

fn index_choice(ctx: &Ctx, flag: Option<String>) -> Result<IndexKind, CliError> {
    Ok(ctx
        .cfg
        .pick(flag, "index")?
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(IndexKind::Ndvi))
}

fn cmd_experiment(ctx: &Ctx, a: &ExperimentArgs) -> Result<(), CliError> {
    let folds = ctx.cfg.pick(a.folds, "folds")?.unwrap_or(DEFAULT_FOLDS);
    let k_candidates = match ctx.cfg.pick(a.k_candidates.clone(), "k_candidates")? {
        Some(list) => parse_list(&list, "k")?,
        None => DEFAULT_K_CANDIDATES.to_vec(),
    };
    if let Some(k) = k_candidates.iter().find(|k| **k == 0 || *k % 2 == 0) {
        return Err(CliError::Validation(format!(
            "k candidate {k} must be odd and positive"
        )));
    }
    let max_classes = ctx.cfg.pick(a.classes, "classes")?;
    if max_classes.is_some_and(|n| n < 2) {
        return Err(CliError::Validation("--classes must be at least 2".into()));
    }
    let index = index_choice(ctx, a.index.clone())?;

    let ((series, labels), bands) = load_series(ctx, &a.pre, a.series.clone())?;
    let ds = features(&series, &labels, &index, &bands)?;
    let mut classes: Vec<CropClass> = CropClass::ALL
        .into_iter()
        .filter(|c| ds.count(*c) > 0)
        .collect();
    if let Some(n) = max_classes {
        if n > classes.len() {
            return Err(CliError::Data(format!(
                "asked for {n} classes, dataset has {}",
                classes.len()
            )));
        }
        classes.truncate(n);
    }
    let suite = SuiteSpec {
        classes,
        folds,
        k_candidates,
        seed: ctx.seed,
    };
    let reports = run_suite(&ds, &suite)?;

    ctx.write("summary.csv", &artifacts::summary_csv(&reports)?)?;
    for r in &reports {
        let name = format!("exp_{}", r.spec.included_classes.len());
        let json =
            serde_json::to_string_pretty(r).map_err(|e| CliError::Internal(e.to_string()))?;
        ctx.write(format!("reports/{name}.json"), &format!("{json}\n"))?;
        ctx.write(
            format!("confusion/{name}.csv"),
            &artifacts::confusion_csv(&r.confusion)?,
        )?;
        let rows = r
            .predictions
            .iter()
            .map(|p| (p.field_id, Some(p.true_class), &p.result));
        ctx.write(
            format!("predictions/{name}.csv"),
            &artifacts::predictions_csv(rows)?,
        )?;
    }
    println!("classes\tm\tk\tOA");
    for r in &reports {
        println!(
            "{}\t{}\t{}\t{:.1}",
            r.spec.included_classes.len(),
            r.m,
            r.selected_k,
            100.0 * r.overall_accuracy
        );
    }
    Ok(())
}

fn parse_counts(list: &str) -> Result<Vec<(CropClass, usize)>, CliError> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|pair| {
            let (c, n) = pair.split_once('=').ok_or_else(|| {
                CliError::Validation(format!("expected class=count, got {pair:?}"))
            })?;
            let class = c
                .trim()
                .parse()
                .map_err(|e| CliError::Validation(format!("{e}")))?;
            let n = n
                .trim()
                .parse()
                .map_err(|_| CliError::Validation(format!("bad count in {pair:?}")))?;
            Ok((class, n))
        })
        .collect()
}

fn cmd_synth(ctx: &Ctx, a: &SynthArgs) -> Result<(), CliError> {
    let cfg = ctx.cfg;
    let d = SynthParams::default();
    let survey = cfg.flag(a.survey_profile, "survey_profile")?;
    let counts = match cfg.pick(a.counts.clone(), "counts")? {
        Some(_) if survey => {
            return Err(CliError::Validation(
                "--counts and --survey-profile are exclusive".into(),
            ))
        }
        Some(list) => parse_counts(&list)?,
        None if survey => SURVEY_COUNTS.to_vec(),
        None => vec![(CropClass::Maize, 100), (CropClass::Cassava, 100)],
    };
    let params = SynthParams {
        class_counts: counts,
        field_size: cfg
            .pick(a.field_size, "field_size")?
            .unwrap_or(d.field_size),
        dates: cfg.pick(a.dates, "dates")?.unwrap_or(d.dates),
        noise: cfg.pick(a.noise, "noise")?.unwrap_or(d.noise),
        cloud_fraction: cfg
            .pick(a.cloud_fraction, "cloud_fraction")?
            .unwrap_or(d.cloud_fraction),
        identical_curves: cfg.flag(a.identical_curves, "identical_curves")?,
        seed: ctx.seed,
        region_id: cfg
            .pick(a.region_id.clone(), "region_id")?
            .unwrap_or(d.region_id),
    };
    let (stack, fields) = synth_bundle(&params)?;
    write_bundle(&stack, &fields, &ctx.out)?;
    eprintln!(
        "wrote {} fields over {} dates to {}",
        fields.labels.len(),
        stack.len(),
        ctx.out.display()
    );
    Ok(())
}

fn cmd_predict(ctx: &Ctx, a: &PredictArgs) -> Result<(), CliError> {
    let cfg = ctx.cfg;
    let train = cfg
        .pick(a.train.clone(), "train")?
        .ok_or_else(|| CliError::Validation("--train is required".into()))?;
    let query = cfg
        .pick(a.query.clone(), "query")?
        .ok_or_else(|| CliError::Validation("--query is required".into()))?;
    let k = cfg
        .pick(a.k, "k")?
        .ok_or_else(|| CliError::Validation("--k is required".into()))?;
    if k == 0 {
        return Err(CliError::Validation("k must be positive".into()));
    }
    let index = index_choice(ctx, a.index.clone())?;
    let bands = IndexBands::default();

    let (train_series, train_labels) = read_series_artifact(&train)?;
    let reference = features(&train_series, &train_labels, &index, &bands)?;
    let (query_series, query_labels) = read_series_artifact(&query)?;
    let queries = features(&query_series, &query_labels, &index, &bands)?;
    if queries.series_len() != reference.series_len() && !queries.is_empty() {
        return Err(CliError::Data(format!(
            "query series have {} dates, reference {}",
            queries.series_len(),
            reference.series_len()
        )));
    }
    let model = KnnModel::new(&reference, k)?;
    let results = model.predict_batch(queries.features())?;
    let rows = queries
        .features()
        .iter()
        .zip(&results)
        .map(|(q, r)| (q.field_id, Some(q.label), r));
    let p = ctx.write("predictions.csv", &artifacts::predictions_csv(rows)?)?;
    println!("{}", p.display());
    Ok(())
}
