//! Field-level crop-type classification from multi-date satellite scenes.
//!
//! The pipeline reads a grid bundle ([`bundle`]), reduces it to gap-filled
//! per-field band series ([`preprocess`]), turns those into NDVI feature
//! vectors ([`indices`]) and evaluates a cosine-distance kNN classifier
//! ([`knn`]) with balanced, stratified cross-validation ([`experiments`]).

pub mod artifacts;
pub mod bundle;
pub mod class;
pub mod experiments;
pub mod fsutil;
pub mod grid;
pub mod indices;
pub mod knn;
pub mod preprocess;
pub mod rng;
pub mod synth;

pub use bundle::{read_bundle, write_bundle, BandId, BundleError, FieldTable, Scene, SceneStack};
pub use class::CropClass;
pub use experiments::{
    cross_validate, run_experiment, run_suite, select_k, stratified_folds, undersample,
    ConfusionMatrix, ExperimentError, ExperimentReport, ExperimentSpec, FoldAssignment, SuiteSpec,
};
pub use grid::Grid;
pub use indices::{
    build_features, class_separability_report, gcvi, ndvi, FeatureDataset, FeatureVector,
    IndexBands, IndexError, IndexKind,
};
pub use knn::{cosine_distance, KnnError, KnnModel, NeighborResult};
pub use preprocess::{
    cloud_mask, extract_field_series, field_median, percentile_mask, savgol_fill, FieldSeries,
    PreprocessConfig, PreprocessError,
};
