//! The on-disk grid bundle: one directory holding every scene, the field
//! mask and the crop labels of a region.
//!
//! ```text
//! <bundle>/manifest.txt          key = value lines
//! <bundle>/labels.csv            field_id,crop_name
//! <bundle>/mask.i32              row-major little-endian i32, 0 = no field
//! <bundle>/scenes/<date>/<band>.f32   row-major little-endian f32, NaN = missing
//! ```
//!
//! The cloud-probability layer is stored as the band `CLD`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::class::CropClass;
use crate::fsutil::write_atomic;
use crate::grid::{Cell, Grid};
use crate::indices::IndexBands;

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const LABELS_FILE: &str = "labels.csv";
pub const MASK_FILE: &str = "mask.i32";
pub const SCENES_DIR: &str = "scenes";
pub const CLOUD_BAND: &str = "CLD";
const FORMAT_TAG: &str = "cropknn-bundle/1";

#[derive(Debug, thiserror::Error)]
pub enum BundleError {
    #[error("no manifest at {0}")]
    MissingManifest(PathBuf),
    #[error("manifest line {line}: {msg}")]
    Manifest { line: usize, msg: String },
    #[error("{what}: expected {expected:?} (width, height), found {found:?}")]
    DimensionMismatch {
        what: String,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("field id {0} appears in the mask but has no label")]
    UnlabeledField(i32),
    #[error("bad date: {0}")]
    BadDate(String),
    #[error("corrupt grid {path}: expected {expected} bytes, found {found}")]
    CorruptGrid {
        path: PathBuf,
        expected: usize,
        found: usize,
    },
    #[error("invalid bundle: {0}")]
    Invalid(String),
    #[error("labels: {0}")]
    Labels(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> BundleError + '_ {
    move |source| BundleError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Short band name such as `B04` or `CLD`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BandId(String);

impl BandId {
    pub fn new(name: impl Into<String>) -> Result<Self, BundleError> {
        let name = name.into();
        let ok = !name.is_empty()
            && name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
        if ok {
            Ok(BandId(name))
        } else {
            Err(BundleError::Invalid(format!("bad band name {name:?}")))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for BandId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// One acquisition date: reflectance bands plus cloud probability.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub date: NaiveDate,
    pub bands: BTreeMap<BandId, Grid<f32>>,
    pub cloud_prob: Grid<f32>,
}

impl Scene {
    pub fn dims(&self) -> (usize, usize) {
        self.cloud_prob.dims()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneStack {
    pub region_id: String,
    pub pixel_size_m: f64,
    pub scenes: Vec<Scene>,
    pub index_bands: IndexBands,
}

impl SceneStack {
    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }

    pub fn dates(&self) -> Vec<NaiveDate> {
        self.scenes.iter().map(|s| s.date).collect()
    }

    pub fn dims(&self) -> Option<(usize, usize)> {
        self.scenes.first().map(Scene::dims)
    }

    /// Reflectance band names, taken from the first scene.
    pub fn band_ids(&self) -> Vec<BandId> {
        self.scenes
            .first()
            .map(|s| s.bands.keys().cloned().collect())
            .unwrap_or_default()
    }

    pub fn validate(&self) -> Result<(), BundleError> {
        if self.scenes.len() < 2 {
            return Err(BundleError::Invalid(format!(
                "need at least 2 scenes, found {}",
                self.scenes.len()
            )));
        }
        if self.region_id.is_empty() || self.region_id.contains(['\n', '\r']) {
            return Err(BundleError::Invalid("bad region_id".into()));
        }
        if !(self.pixel_size_m.is_finite() && self.pixel_size_m > 0.0) {
            return Err(BundleError::Invalid("pixel_size_m must be positive".into()));
        }
        for pair in self.scenes.windows(2) {
            if pair[1].date <= pair[0].date {
                return Err(BundleError::BadDate(format!(
                    "dates not strictly increasing: {} then {}",
                    pair[0].date, pair[1].date
                )));
            }
        }
        let dims = self.scenes[0].dims();
        let bands: Vec<&BandId> = self.scenes[0].bands.keys().collect();
        if bands.is_empty() {
            return Err(BundleError::Invalid("no reflectance bands".into()));
        }
        for scene in &self.scenes {
            let names: Vec<&BandId> = scene.bands.keys().collect();
            if names != bands {
                return Err(BundleError::Invalid(format!(
                    "scene {} has bands {names:?}, expected {bands:?}",
                    scene.date
                )));
            }
            if scene.bands.contains_key(CLOUD_BAND) {
                return Err(BundleError::Invalid(format!(
                    "{CLOUD_BAND} is reserved for cloud probability"
                )));
            }
            for (band, grid) in scene.bands.iter().chain([(&cloud_id(), &scene.cloud_prob)]) {
                if grid.dims() != dims {
                    return Err(BundleError::DimensionMismatch {
                        what: format!("{}/{}", scene.date, band),
                        expected: dims,
                        found: grid.dims(),
                    });
                }
            }
            if let Some(bad) = scene
                .cloud_prob
                .as_slice()
                .iter()
                .find(|v| !v.is_nan() && !(0.0..=100.0).contains(*v))
            {
                return Err(BundleError::Invalid(format!(
                    "cloud probability {bad} outside [0, 100] on {}",
                    scene.date
                )));
            }
        }
        Ok(())
    }
}

impl std::borrow::Borrow<str> for BandId {
    fn borrow(&self) -> &str {
        &self.0
    }
}

fn cloud_id() -> BandId {
    BandId(CLOUD_BAND.to_string())
}

#[derive(Clone, Debug, PartialEq)]
pub struct FieldTable {
    pub field_mask: Grid<i32>,
    pub labels: BTreeMap<i32, CropClass>,
}

impl FieldTable {
    /// Checks the table on its own and against the scene dimensions.
    pub fn validate(&self, dims: (usize, usize)) -> Result<(), BundleError> {
        if self.field_mask.dims() != dims {
            return Err(BundleError::DimensionMismatch {
                what: MASK_FILE.into(),
                expected: dims,
                found: self.field_mask.dims(),
            });
        }
        if let Some(id) = self.labels.keys().find(|id| **id <= 0) {
            return Err(BundleError::Invalid(format!(
                "field id {id} is not positive"
            )));
        }
        let mut seen = BTreeSet::new();
        for &id in self.field_mask.as_slice() {
            if id < 0 {
                return Err(BundleError::Invalid(format!(
                    "negative field id {id} in mask"
                )));
            }
            if id > 0 && seen.insert(id) && !self.labels.contains_key(&id) {
                return Err(BundleError::UnlabeledField(id));
            }
        }
        if let Some(id) = self.labels.keys().find(|id| !seen.contains(*id)) {
            return Err(BundleError::Invalid(format!(
                "labeled field {id} covers no pixels"
            )));
        }
        Ok(())
    }

    /// Pixel indices of each labeled field, keyed by ascending field id.
    pub fn pixel_index(&self) -> BTreeMap<i32, Vec<usize>> {
        let mut out: BTreeMap<i32, Vec<usize>> = BTreeMap::new();
        for (i, &id) in self.field_mask.as_slice().iter().enumerate() {
            if id > 0 {
                out.entry(id).or_default().push(i);
            }
        }
        out
    }
}

fn manifest_text(stack: &SceneStack) -> String {
    let (w, h) = stack.dims().unwrap_or((0, 0));
    let bands: Vec<String> = stack
        .band_ids()
        .iter()
        .map(|b| b.to_string())
        .chain([CLOUD_BAND.to_string()])
        .collect();
    let dates: Vec<String> = stack.dates().iter().map(|d| d.to_string()).collect();
    let ib = &stack.index_bands;
    format!(
        "format = {FORMAT_TAG}\nregion_id = {}\nwidth = {w}\nheight = {h}\npixel_size_m = {}\n\
         bands = {}\ndates = {}\nndvi_nir = {}\nndvi_red = {}\ngcvi_nir = {}\ngcvi_green = {}\n",
        stack.region_id,
        stack.pixel_size_m,
        bands.join(","),
        dates.join(","),
        ib.ndvi_nir,
        ib.ndvi_red,
        ib.gcvi_nir,
        ib.gcvi_green,
    )
}

fn grid_path(root: &Path, date: NaiveDate, band: &str) -> PathBuf {
    root.join(SCENES_DIR)
        .join(date.to_string())
        .join(format!("{band}.f32"))
}

/// Writes a validated bundle. Every file goes through a temp-file rename.
pub fn write_bundle(
    stack: &SceneStack,
    fields: &FieldTable,
    path: &Path,
) -> Result<(), BundleError> {
    stack.validate()?;
    let dims = stack.dims().expect("validated stack has scenes");
    fields.validate(dims)?;

    fs::create_dir_all(path).map_err(io_err(path))?;
    for scene in &stack.scenes {
        for (band, grid) in &scene.bands {
            let p = grid_path(path, scene.date, band.as_str());
            write_atomic(&p, &grid.to_le_bytes()).map_err(io_err(&p))?;
        }
        let p = grid_path(path, scene.date, CLOUD_BAND);
        write_atomic(&p, &scene.cloud_prob.to_le_bytes()).map_err(io_err(&p))?;
    }

    let p = path.join(MASK_FILE);
    write_atomic(&p, &fields.field_mask.to_le_bytes()).map_err(io_err(&p))?;

    let mut labels = String::from("field_id,crop_name\n");
    for (id, class) in &fields.labels {
        labels.push_str(&format!("{id},{class}\n"));
    }
    let p = path.join(LABELS_FILE);
    write_atomic(&p, labels.as_bytes()).map_err(io_err(&p))?;

    // Manifest last: a bundle without one is never mistaken for a complete one.
    let p = path.join(MANIFEST_FILE);
    write_atomic(&p, manifest_text(stack).as_bytes()).map_err(io_err(&p))?;
    Ok(())
}

struct Manifest {
    region_id: String,
    width: usize,
    height: usize,
    pixel_size_m: f64,
    bands: Vec<BandId>,
    dates: Vec<NaiveDate>,
    index_bands: IndexBands,
}

fn parse_manifest(text: &str) -> Result<Manifest, BundleError> {
    let mut kv: BTreeMap<String, (usize, String)> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| BundleError::Manifest {
            line: i + 1,
            msg: format!("expected key = value, got {line:?}"),
        })?;
        let k = k.trim().to_string();
        if kv
            .insert(k.clone(), (i + 1, v.trim().to_string()))
            .is_some()
        {
            return Err(BundleError::Manifest {
                line: i + 1,
                msg: format!("duplicate key {k}"),
            });
        }
    }
    let take = |key: &str| -> Result<(usize, String), BundleError> {
        kv.get(key).cloned().ok_or_else(|| BundleError::Manifest {
            line: 0,
            msg: format!("missing key {key}"),
        })
    };
    let number = |key: &str| -> Result<usize, BundleError> {
        let (line, v) = take(key)?;
        v.parse().map_err(|_| BundleError::Manifest {
            line,
            msg: format!("{key} is not a non-negative integer: {v:?}"),
        })
    };

    if let Some((line, tag)) = kv.get("format") {
        if tag != FORMAT_TAG {
            return Err(BundleError::Manifest {
                line: *line,
                msg: format!("unsupported format {tag:?}"),
            });
        }
    }

    let (_, region_id) = take("region_id")?;
    let width = number("width")?;
    let height = number("height")?;
    let (line, px) = take("pixel_size_m")?;
    let pixel_size_m: f64 = px.parse().map_err(|_| BundleError::Manifest {
        line,
        msg: format!("bad pixel_size_m {px:?}"),
    })?;

    let (_, band_list) = take("bands")?;
    let mut bands = Vec::new();
    let mut seen = BTreeSet::new();
    for name in band_list.split(',').map(str::trim) {
        let id = BandId::new(name)?;
        if !seen.insert(id.clone()) {
            return Err(BundleError::Invalid(format!("duplicate band {id}")));
        }
        bands.push(id);
    }
    if !seen.contains(CLOUD_BAND) {
        return Err(BundleError::Invalid(format!(
            "band list lacks {CLOUD_BAND}"
        )));
    }

    let (_, date_list) = take("dates")?;
    let mut dates = Vec::new();
    for s in date_list.split(',').map(str::trim) {
        let d = NaiveDate::parse_from_str(s, "%Y-%m-%d")
            .map_err(|_| BundleError::BadDate(format!("{s:?} is not YYYY-MM-DD")))?;
        if dates.last().is_some_and(|prev| *prev >= d) {
            return Err(BundleError::BadDate(format!(
                "{s} does not follow the previous date"
            )));
        }
        dates.push(d);
    }

    let mut index_bands = IndexBands::default();
    for (key, slot) in [
        ("ndvi_nir", &mut index_bands.ndvi_nir),
        ("ndvi_red", &mut index_bands.ndvi_red),
        ("gcvi_nir", &mut index_bands.gcvi_nir),
        ("gcvi_green", &mut index_bands.gcvi_green),
    ] {
        if let Some((_, v)) = kv.get(key) {
            *slot = BandId::new(v.clone())?;
        }
    }

    Ok(Manifest {
        region_id,
        width,
        height,
        pixel_size_m,
        bands,
        dates,
        index_bands,
    })
}

fn read_grid<T: Cell>(path: &Path, width: usize, height: usize) -> Result<Grid<T>, BundleError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Grid::from_le_bytes(width, height, &bytes).ok_or(BundleError::CorruptGrid {
        path: path.to_path_buf(),
        expected: width * height * T::BYTES,
        found: bytes.len(),
    })
}

fn read_labels(path: &Path) -> Result<BTreeMap<i32, CropClass>, BundleError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| BundleError::Labels(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| BundleError::Labels(e.to_string()))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != ["field_id", "crop_name"] {
        return Err(BundleError::Labels(format!(
            "expected header field_id,crop_name, found {:?}",
            headers
        )));
    }
    let mut labels = BTreeMap::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| BundleError::Labels(e.to_string()))?;
        let id: i32 = rec[0]
            .parse()
            .map_err(|_| BundleError::Labels(format!("bad field id {:?}", &rec[0])))?;
        let class: CropClass = rec[1]
            .parse()
            .map_err(|e| BundleError::Labels(format!("field {id}: {e}")))?;
        if labels.insert(id, class).is_some() {
            return Err(BundleError::Labels(format!("duplicate field id {id}")));
        }
    }
    Ok(labels)
}

/// Reads and fully validates a bundle directory.
pub fn read_bundle(path: &Path) -> Result<(SceneStack, FieldTable), BundleError> {
    let manifest_path = path.join(MANIFEST_FILE);
    let text = match fs::read_to_string(&manifest_path) {
        Ok(t) => t,
        Err(e) if e.kind() == io::ErrorKind::NotFound => {
            return Err(BundleError::MissingManifest(manifest_path))
        }
        Err(e) => return Err(io_err(&manifest_path)(e)),
    };
    let m = parse_manifest(&text)?;
    let (w, h) = (m.width, m.height);

    let mut scenes = Vec::with_capacity(m.dates.len());
    for &date in &m.dates {
        let mut bands = BTreeMap::new();
        for band in m.bands.iter().filter(|b| b.as_str() != CLOUD_BAND) {
            let grid = read_grid(&grid_path(path, date, band.as_str()), w, h)?;
            bands.insert(band.clone(), grid);
        }
        let cloud_prob = read_grid(&grid_path(path, date, CLOUD_BAND), w, h)?;
        scenes.push(Scene {
            date,
            bands,
            cloud_prob,
        });
    }
    let stack = SceneStack {
        region_id: m.region_id,
        pixel_size_m: m.pixel_size_m,
        scenes,
        index_bands: m.index_bands,
    };
    stack.validate()?;

    let field_mask = read_grid(&path.join(MASK_FILE), w, h)?;
    let labels = read_labels(&path.join(LABELS_FILE))?;
    let fields = FieldTable { field_mask, labels };
    fields.validate((w, h))?;
    Ok((stack, fields))
}
