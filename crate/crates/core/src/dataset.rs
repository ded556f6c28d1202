//! Row-feature sequences, on-disk feature sets, identity splits and the
//! synthetic generator.
//!
//! On disk a dataset is a JSON manifest plus one binary file per feature
//! channel. The manifest lists items once; every feature file stores the items
//! in manifest order:
//!
//! ```text
//! "SFEAT001" | count u32 | R u32 | d u32 | count·R·d × f32   (all little-endian)
//! ```

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io_util::{expect_eof, read_f32s, read_magic, read_u32, write_f32s};
use crate::numerics::{Matrix, SeededRng};

pub const FEATURE_MAGIC: &[u8; 8] = b"SFEAT001";

/// One image as `R` ordered row vectors of width `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct RowSequence {
    rows: Matrix,
}

impl RowSequence {
    pub fn from_matrix(rows: Matrix) -> Result<Self> {
        if rows.rows() == 0 {
            return Err(Error::EmptySequence);
        }
        if rows.cols() == 0 {
            return Err(Error::InvalidArgument("row dimension must be nonzero".into()));
        }
        if !rows.is_finite() {
            return Err(Error::Numerical("non-finite feature value".into()));
        }
        Ok(RowSequence { rows })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        RowSequence::from_matrix(Matrix::from_rows(rows)?)
    }

    pub fn from_flat(num_rows: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        RowSequence::from_matrix(Matrix::from_vec(num_rows, dim, data)?)
    }

    /// Number of rows `R`.
    pub fn len(&self) -> usize {
        self.rows.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row width `d`.
    pub fn dim(&self) -> usize {
        self.rows.cols()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        self.rows.row(r)
    }

    /// `[x_1; …; x_R]`; row-major storage already is the concatenation.
    pub fn concat(&self) -> &[f64] {
        self.rows.data()
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.rows
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Item {
    pub id: String,
    pub identity: u32,
    pub camera: u32,
    pub seq: RowSequence,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub name: String,
    rows: usize,
    dim: usize,
    items: Vec<Item>,
}

impl FeatureSet {
    pub fn new(name: impl Into<String>, rows: usize, dim: usize, items: Vec<Item>) -> Result<Self> {
        let mut seen = HashSet::new();
        for item in &items {
            if item.seq.len() != rows || item.seq.dim() != dim {
                return Err(Error::shape(
                    "FeatureSet item",
                    format!("{}: {}x{}", item.id, item.seq.len(), item.seq.dim()),
                    format!("{rows}x{dim}"),
                ));
            }
            if !seen.insert(item.id.as_str()) {
                return Err(Error::DuplicateId(item.id.clone()));
            }
        }
        Ok(FeatureSet {
            name: name.into(),
            rows,
            dim,
            items,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn find(&self, id: &str) -> Option<&Item> {
        self.items.iter().find(|it| it.id == id)
    }

    /// Sorted distinct identity labels.
    pub fn identities(&self) -> Vec<u32> {
        self.items
            .iter()
            .map(|it| it.identity)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn subset(&self, indices: &[usize]) -> FeatureSet {
        FeatureSet {
            name: self.name.clone(),
            rows: self.rows,
            dim: self.dim,
            items: indices.iter().map(|&i| self.items[i].clone()).collect(),
        }
    }

    fn item_records(&self) -> Vec<ItemRecord> {
        self.items
            .iter()
            .map(|it| ItemRecord {
                id: it.id.clone(),
                identity: it.identity,
                camera: it.camera,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSetEntry {
    pub name: String,
    #[serde(rename = "R")]
    pub rows: u32,
    pub d: u32,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ItemRecord {
    pub id: String,
    pub identity: u32,
    pub camera: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub feature_sets: Vec<FeatureSetEntry>,
    pub items: Vec<ItemRecord>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Manifest> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        let mut seen = HashSet::new();
        for item in &manifest.items {
            if !seen.insert(item.id.as_str()) {
                return Err(Error::DuplicateId(item.id.clone()));
            }
        }
        Ok(manifest)
    }
}

/// Loads one feature channel named in the manifest; fails without partial
/// results on any inconsistency.
pub fn load_feature_set(manifest_path: &Path, feature_name: &str) -> Result<FeatureSet> {
    let manifest = Manifest::read(manifest_path)?;
    let entry = manifest
        .feature_sets
        .iter()
        .find(|e| e.name == feature_name)
        .ok_or_else(|| Error::UnknownFeatureSet(feature_name.to_string()))?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let path = base.join(&entry.file);

    let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
    let mut reader = BufReader::new(file);
    read_magic(&mut reader, FEATURE_MAGIC, &path)?;
    let count = read_u32(&mut reader, &path, "item count")? as usize;
    let rows = read_u32(&mut reader, &path, "row count")? as usize;
    let dim = read_u32(&mut reader, &path, "row dimension")? as usize;

    let inconsistent = |detail: String| Error::Inconsistent {
        path: path.clone(),
        detail,
    };
    if count != manifest.items.len() {
        return Err(inconsistent(format!(
            "file holds {count} items, manifest lists {}",
            manifest.items.len()
        )));
    }
    if rows != entry.rows as usize || dim != entry.d as usize {
        return Err(inconsistent(format!(
            "file is R={rows}, d={dim}; manifest says R={}, d={}",
            entry.rows, entry.d
        )));
    }
    if rows == 0 || dim == 0 {
        return Err(inconsistent(format!("degenerate shape R={rows}, d={dim}")));
    }

    let values = read_f32s(&mut reader, count * rows * dim, &path, "feature values")?;
    expect_eof(&mut reader, &path)?;

    let per_item = rows * dim;
    let items = manifest
        .items
        .into_iter()
        .zip(values.chunks_exact(per_item.max(1)))
        .map(|(rec, chunk)| {
            let seq = RowSequence::from_flat(rows, dim, chunk.iter().map(|&v| v as f64).collect())?;
            Ok(Item {
                id: rec.id,
                identity: rec.identity,
                camera: rec.camera,
                seq,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    FeatureSet::new(feature_name, rows, dim, items)
}

pub fn write_feature_file(path: &Path, set: &FeatureSet) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let write = |out: &mut BufWriter<File>| -> std::io::Result<()> {
        out.write_all(FEATURE_MAGIC)?;
        out.write_all(&(set.len() as u32).to_le_bytes())?;
        out.write_all(&(set.rows as u32).to_le_bytes())?;
        out.write_all(&(set.dim as u32).to_le_bytes())?;
        for item in &set.items {
            write_f32s(out, item.seq.concat().iter().map(|&v| v as f32))?;
        }
        out.flush()
    };
    write(&mut out).map_err(|e| Error::io(path, e))
}

/// Writes the manifest plus one `<name>.feat` per set next to it.
///
/// All sets must describe the same items in the same order.
pub fn save_dataset(manifest_path: &Path, sets: &[FeatureSet]) -> Result<()> {
    let first = sets
        .first()
        .ok_or_else(|| Error::InvalidArgument("no feature sets to save".into()))?;
    let records = first.item_records();
    for set in &sets[1..] {
        if set.item_records() != records {
            return Err(Error::InvalidArgument(format!(
                "feature set {:?} lists different items than {:?}",
                set.name, first.name
            )));
        }
    }
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    if !dir.as_os_str().is_empty() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let mut entries = Vec::new();
    for set in sets {
        let file = format!("{}.feat", set.name);
        write_feature_file(&dir.join(&file), set)?;
        entries.push(FeatureSetEntry {
            name: set.name.clone(),
            rows: set.rows as u32,
            d: set.dim as u32,
            file,
        });
    }
    let manifest = Manifest {
        feature_sets: entries,
        items: records,
    };
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    fs::write(manifest_path, text).map_err(|e| Error::io(manifest_path, e))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    /// Fraction of all identities reserved for testing.
    pub test: f64,
    /// Fraction of the remaining (training) identities held out for validation.
    pub validation: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            test: 0.5,
            validation: 0.1,
        }
    }
}

/// Identity-disjoint partition of a feature set. Item lists hold indices into
/// the set the split was made from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitSpec {
    pub seed: u64,
    pub train_identities: Vec<u32>,
    pub validation_identities: Vec<u32>,
    pub test_identities: Vec<u32>,
    pub train_items: Vec<usize>,
    pub validation_items: Vec<usize>,
    /// Test items from each test identity's lowest-numbered camera.
    pub test_query: Vec<usize>,
    /// All other test items.
    pub test_gallery: Vec<usize>,
}

pub fn make_split(set: &FeatureSet, ratios: SplitRatios, seed: u64) -> Result<SplitSpec> {
    if !(0.0..1.0).contains(&ratios.test) || !(0.0..1.0).contains(&ratios.validation) {
        return Err(Error::InvalidArgument(format!(
            "split ratios must lie in [0, 1): {ratios:?}"
        )));
    }
    let mut ids = set.identities();
    let total = ids.len();
    let n_test = (total as f64 * ratios.test).round() as usize;
    let n_pool = total.saturating_sub(n_test);
    let n_val = (n_pool as f64 * ratios.validation).round() as usize;
    if n_test == 0 || n_pool <= n_val || (ratios.validation > 0.0 && n_val == 0) {
        return Err(Error::InvalidArgument(format!(
            "{total} identities cannot fill test={n_test}, validation={n_val} and a nonempty train partition"
        )));
    }

    let mut rng = SeededRng::new(seed);
    rng.shuffle(&mut ids);
    let mut test_ids = ids[..n_test].to_vec();
    let mut val_ids = ids[n_test..n_test + n_val].to_vec();
    let mut train_ids = ids[n_test + n_val..].to_vec();
    test_ids.sort_unstable();
    val_ids.sort_unstable();
    train_ids.sort_unstable();

    let test_set: BTreeSet<u32> = test_ids.iter().copied().collect();
    let val_set: BTreeSet<u32> = val_ids.iter().copied().collect();
    let mut query_camera: BTreeMap<u32, u32> = BTreeMap::new();
    for it in set.items.iter().filter(|it| test_set.contains(&it.identity)) {
        let cam = query_camera.entry(it.identity).or_insert(it.camera);
        *cam = (*cam).min(it.camera);
    }

    let mut spec = SplitSpec {
        seed,
        train_identities: train_ids,
        validation_identities: val_ids,
        test_identities: test_ids,
        train_items: Vec::new(),
        validation_items: Vec::new(),
        test_query: Vec::new(),
        test_gallery: Vec::new(),
    };
    for (idx, it) in set.items.iter().enumerate() {
        if let Some(&qcam) = query_camera.get(&it.identity) {
            if it.camera == qcam {
                spec.test_query.push(idx);
            } else {
                spec.test_gallery.push(idx);
            }
        } else if val_set.contains(&it.identity) {
            spec.validation_items.push(idx);
        } else {
            spec.train_items.push(idx);
        }
    }
    Ok(spec)
}

/// Per-position standardization (each of the `R·d` input positions to zero
/// mean, unit variance), fitted on one partition and applied to any other.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    mean: Vec<f64>,
    inv_std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(set: &FeatureSet) -> Result<Self> {
        if set.is_empty() {
            return Err(Error::InvalidArgument("cannot fit normalization on an empty set".into()));
        }
        let width = set.rows * set.dim;
        let count = set.len() as f64;
        let mut mean = vec![0.0; width];
        for item in &set.items {
            crate::numerics::axpy(1.0, item.seq.concat(), &mut mean);
        }
        mean.iter_mut().for_each(|m| *m /= count);
        let mut var = vec![0.0; width];
        for item in &set.items {
            for ((v, x), m) in var.iter_mut().zip(item.seq.concat()).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let inv_std = var
            .iter()
            .map(|v| {
                let sd = (v / count).sqrt();
                if sd > 1e-12 {
                    1.0 / sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Standardizer { mean, inv_std })
    }

    pub fn apply_seq(&self, seq: &RowSequence) -> Result<RowSequence> {
        if seq.concat().len() != self.mean.len() {
            return Err(Error::shape("Standardizer::apply", seq.concat().len(), self.mean.len()));
        }
        let data = seq
            .concat()
            .iter()
            .zip(&self.mean)
            .zip(&self.inv_std)
            .map(|((x, m), s)| (x - m) * s)
            .collect();
        RowSequence::from_flat(seq.len(), seq.dim(), data)
    }

    pub fn apply(&self, set: &FeatureSet) -> Result<FeatureSet> {
        let items = set
            .items
            .iter()
            .map(|it| {
                Ok(Item {
                    seq: self.apply_seq(&it.seq)?,
                    ..it.clone()
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FeatureSet {
            items,
            ..set.clone()
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub identities: usize,
    pub cameras: usize,
    pub images_per_camera: usize,
    #[serde(rename = "R")]
    pub rows: usize,
    pub d: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            identities: 100,
            cameras: 2,
            images_per_camera: 2,
            rows: 16,
            d: 32,
            noise: 0.1,
            seed: 1,
        }
    }
}

/// Number of shared part appearances each row can take.
const PALETTE_SIZE: usize = 4;
/// Amplitude of the identity-specific fine detail.
const DETAIL_SCALE: f64 = 0.3;
/// Amplitude of the per-camera row offset shared by everyone seen there.
const CAMERA_SCALE: f64 = 0.5;
/// Number of shared directions spanning per-view appearance change.
const VIEW_FACTORS: usize = 4;
/// Amplitude of each view factor's coefficient.
const VIEW_SCALE: f64 = 1.2;

/// Generates a desk-scale re-identification set.
///
/// Construction, for identity `k`, camera `c`, image `j`, row `r`:
///
/// * every row position owns a palette of `PALETTE_SIZE` shared appearance
///   vectors and identity `k` draws a part index `p[k][r]` for it, so a single
///   row is shared by roughly a quarter of all identities;
/// * even rows show `palette[r][p[k][r]]`; odd rows show
///   `palette[r][(p[k][r] + p[k][r-1]) mod PALETTE_SIZE]`, i.e. an odd row only
///   reveals its own part once the previous row is known;
/// * identity detail `DETAIL_SCALE · N(0,1)` is added per entry;
/// * a camera offset `CAMERA_SCALE · N(0,1)` per (camera, row, dim) is added;
/// * a view change `Σ_f a[k][c][f] · B_f` with `VIEW_FACTORS` shared random
///   directions `B_f` and coefficients `VIEW_SCALE · N(0,1)` per (identity,
///   camera) models pose and illumination;
/// * finally `noise · N(0,1)` per image entry.
///
/// Values are rounded to `f32` so a save/load round trip is exact.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<FeatureSet> {
    if spec.identities == 0 || spec.cameras == 0 || spec.images_per_camera == 0 || spec.rows == 0 || spec.d == 0 {
        return Err(Error::InvalidArgument(format!("degenerate synthetic spec: {spec:?}")));
    }
    if !(spec.noise >= 0.0 && spec.noise.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise must be finite and >= 0, got {}", spec.noise)));
    }
    let (rows, d) = (spec.rows, spec.d);
    let width = rows * d;
    let mut rng = SeededRng::new(spec.seed);
    let gaussian = |n: usize, scale: f64, rng: &mut SeededRng| -> Vec<f64> {
        (0..n).map(|_| scale * rng.normal()).collect()
    };

    // palette[r][p] is a length-d vector
    let palette: Vec<Vec<Vec<f64>>> = (0..rows)
        .map(|_| (0..PALETTE_SIZE).map(|_| gaussian(d, 1.0, &mut rng)).collect())
        .collect();
    let camera_offsets: Vec<Vec<f64>> = (0..spec.cameras).map(|_| gaussian(width, CAMERA_SCALE, &mut rng)).collect();
    let view_basis: Vec<Vec<f64>> = (0..VIEW_FACTORS)
        .map(|_| gaussian(width, 1.0 / (VIEW_FACTORS as f64).sqrt(), &mut rng))
        .collect();

    let mut items = Vec::with_capacity(spec.identities * spec.cameras * spec.images_per_camera);
    for k in 0..spec.identities {
        let parts: Vec<usize> = (0..rows).map(|_| rng.below(PALETTE_SIZE)).collect();
        let mut base = Vec::with_capacity(width);
        for r in 0..rows {
            let shown = if r % 2 == 1 {
                (parts[r] + parts[r - 1]) % PALETTE_SIZE
            } else {
                parts[r]
            };
            base.extend_from_slice(&palette[r][shown]);
        }
        let detail = gaussian(width, DETAIL_SCALE, &mut rng);
        crate::numerics::axpy(1.0, &detail, &mut base);

        for c in 0..spec.cameras {
            let mut view = base.clone();
            crate::numerics::axpy(1.0, &camera_offsets[c], &mut view);
            for b in &view_basis {
                let coeff = VIEW_SCALE * rng.normal();
                crate::numerics::axpy(coeff, b, &mut view);
            }
            for j in 0..spec.images_per_camera {
                let data: Vec<f64> = view
                    .iter()
                    .map(|&v| {
                        let noisy = if spec.noise > 0.0 { v + spec.noise * rng.normal() } else { v };
                        noisy as f32 as f64
                    })
                    .collect();
                items.push(Item {
                    id: format!("id{k:04}_c{c}_{j}"),
                    identity: k as u32,
                    camera: c as u32,
                    seq: RowSequence::from_flat(rows, d, data)?,
                });
            }
        }
    }
    FeatureSet::new("synthetic", rows, d, items)
}
