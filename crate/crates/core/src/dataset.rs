//! Augmented image datasets: every catalog structure is rendered at nine
//! scales, rotated to nine angles and shifted to nine offsets, and the
//! resulting PNGs are listed in a line-oriented manifest.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, CatalogEntry};
use crate::nn::Tensor4;
use crate::oracle::{binary_label, classify_stability};
use crate::raster::{RasterError, RgbImage, IMAGE_SIZE};
use crate::render::{render, RenderError, RenderStyle};

/// Rotation angles of the augmentation grid, in degrees.
pub const ROTATIONS_DEG: [f64; 9] = [0.0, 40.0, 80.0, 120.0, 160.0, 200.0, 240.0, 280.0, 320.0];

/// Name of the manifest file inside a dataset directory.
pub const MANIFEST_FILE: &str = "manifest.csv";

const MANIFEST_COLUMNS: &str = "path,label,structure_name,scale_idx,rot_idx,trans_idx,split";

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("rendering `{structure}`: {source}")]
    Render {
        structure: String,
        #[source]
        source: RenderError,
    },
    #[error("structure `{structure}`: catalog says label {intended}, oracle says {oracle}")]
    LabelMismatch { structure: String, intended: u8, oracle: u8 },
    #[error("{path}:{line}: {message}")]
    Manifest { path: PathBuf, line: usize, message: String },
    #[error("invalid augmentation grid: {0}")]
    Grid(String),
    #[error("structure name `{0}` cannot be used as a file name")]
    BadName(String),
    #[error("batch size must be at least 1")]
    BatchSize,
    #[error("duplicate structure name `{0}`")]
    DuplicateName(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// The 9 x 9 x 9 augmentation grid plus the subset of cells actually used.
/// Translation index `t` is `3 * iy + ix` over offsets `(-10, 0, +10)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationGrid {
    pub scales: Vec<f64>,
    pub rotations_deg: Vec<f64>,
    pub translations_px: Vec<(i32, i32)>,
    pub scale_indices: Vec<usize>,
    pub rotation_indices: Vec<usize>,
    pub translation_indices: Vec<usize>,
}

/// One augmentation cell, by index into the full grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GridCell {
    pub scale_idx: usize,
    pub rot_idx: usize,
    pub trans_idx: usize,
}

impl AugmentationGrid {
    /// All 729 cells. Scales run linearly from 1.00 down to 0.52.
    pub fn full() -> Self {
        let mut translations_px = Vec::with_capacity(9);
        for dy in [-10, 0, 10] {
            for dx in [-10, 0, 10] {
                translations_px.push((dx, dy));
            }
        }
        Self {
            scales: (0..9).map(|i| f64::from(100 - 6 * i) / 100.0).collect(),
            rotations_deg: ROTATIONS_DEG.to_vec(),
            translations_px,
            scale_indices: (0..9).collect(),
            rotation_indices: (0..9).collect(),
            translation_indices: (0..9).collect(),
        }
    }

    /// 27-cell subsample: scales 1.00/0.76/0.52, rotations 0/120/240,
    /// offsets (-10,-10)/(0,0)/(+10,+10).
    pub fn desk() -> Self {
        Self::full().subset(&[0, 4, 8], &[0, 3, 6], &[0, 4, 8])
    }

    pub fn subset(&self, scales: &[usize], rotations: &[usize], translations: &[usize]) -> Self {
        Self {
            scale_indices: scales.to_vec(),
            rotation_indices: rotations.to_vec(),
            translation_indices: translations.to_vec(),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |m: String| Err(DatasetError::Grid(m));
        if self.scales.len() != 9 || self.rotations_deg.len() != 9 || self.translations_px.len() != 9 {
            return bad("each axis needs exactly 9 values".into());
        }
        if self.rotations_deg != ROTATIONS_DEG {
            return bad(format!("rotations must be {ROTATIONS_DEG:?}"));
        }
        if let Some(s) = self.scales.iter().find(|s| !(**s > 0.0 && **s <= 1.0)) {
            return bad(format!("scale {s} outside (0, 1]"));
        }
        for (name, idx) in [
            ("scale", &self.scale_indices),
            ("rotation", &self.rotation_indices),
            ("translation", &self.translation_indices),
        ] {
            if idx.is_empty() {
                return bad(format!("no {name} cells selected"));
            }
            let mut sorted = idx.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != idx.len() || sorted.iter().any(|&i| i >= 9) {
                return bad(format!("{name} indices must be distinct values in 0..9"));
            }
        }
        Ok(())
    }

    /// Selected cells in (scale, rotation, translation) order.
    pub fn cells(&self) -> Vec<GridCell> {
        let mut out = Vec::new();
        for &scale_idx in &self.scale_indices {
            for &rot_idx in &self.rotation_indices {
                for &trans_idx in &self.translation_indices {
                    out.push(GridCell {
                        scale_idx,
                        rot_idx,
                        trans_idx,
                    });
                }
            }
        }
        out
    }

    pub fn cell_count(&self) -> usize {
        self.scale_indices.len() * self.rotation_indices.len() * self.translation_indices.len()
    }
}

/// Rotate counterclockwise (as displayed) about the image center with
/// bilinear interpolation; pixels sampled from outside the frame are white.
pub fn rotate(base: &RgbImage, deg: f64) -> RgbImage {
    if deg.rem_euclid(360.0) == 0.0 {
        return base.clone();
    }
    let (w, h) = (base.width(), base.height());
    let (sin, cos) = deg.to_radians().sin_cos();
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let src = base.as_bytes();
    let sample = |x: isize, y: isize, ch: usize| -> f64 {
        if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
            255.0
        } else {
            f64::from(src[(y as usize * w + x as usize) * 3 + ch])
        }
    };
    let mut out = vec![255u8; w * h * 3];
    for y in 0..h {
        let ry = y as f64 + 0.5 - cy;
        for x in 0..w {
            let rx = x as f64 + 0.5 - cx;
            // inverse map: output offset rotated clockwise (on screen) back to the source
            let sx = cx + rx * cos - ry * sin - 0.5;
            let sy = cy + rx * sin + ry * cos - 0.5;
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as isize, y0 as isize);
            for ch in 0..3 {
                let top = sample(x0, y0, ch) * (1.0 - fx) + sample(x0 + 1, y0, ch) * fx;
                let bottom = sample(x0, y0 + 1, ch) * (1.0 - fx) + sample(x0 + 1, y0 + 1, ch) * fx;
                let v = top * (1.0 - fy) + bottom * fy;
                out[(y * w + x) * 3 + ch] = (v + 0.5).floor().clamp(0.0, 255.0) as u8;
            }
        }
    }
    RgbImage::from_raw(w, h, out).expect("same dimensions")
}

/// Shift right by `dx` and down by `dy`; vacated pixels are white.
pub fn translate(base: &RgbImage, dx: i32, dy: i32) -> RgbImage {
    let (w, h) = (base.width(), base.height());
    let mut out = RgbImage::white(w, h);
    for y in 0..h {
        let sy = y as i64 - i64::from(dy);
        if sy < 0 || sy >= h as i64 {
            continue;
        }
        for x in 0..w {
            let sx = x as i64 - i64::from(dx);
            if sx >= 0 && sx < w as i64 {
                out.put(x, y, base.get(sx as usize, sy as usize));
            }
        }
    }
    out
}

/// Rotate, then translate.
pub fn augment(base: &RgbImage, rot_deg: f64, dx: i32, dy: i32) -> RgbImage {
    let rotated = rotate(base, rot_deg);
    if dx == 0 && dy == 0 {
        rotated
    } else {
        translate(&rotated, dx, dy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
    Holdout,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Holdout => "holdout",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            "holdout" => Some(Split::Holdout),
            _ => None,
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How training-catalog images are divided 50/25/25.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SplitMode {
    /// Shuffle all images; one structure may appear in every split.
    #[default]
    ByImage,
    /// Shuffle structures within each class; a structure's images share a split.
    ByStructure,
}

impl SplitMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitMode::ByImage => "by-image",
            SplitMode::ByStructure => "by-structure",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "by-image" => Some(SplitMode::ByImage),
            "by-structure" => Some(SplitMode::ByStructure),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageSample {
    /// Relative to the manifest's directory.
    pub path: PathBuf,
    pub label: u8,
    pub structure_name: String,
    pub cell: GridCell,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    /// Directory holding the manifest and images.
    pub root: PathBuf,
    pub seed: u64,
    pub split_mode: SplitMode,
    pub grid: AugmentationGrid,
    pub style: RenderStyle,
    pub samples: Vec<ImageSample>,
}

impl Manifest {
    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        (0..self.samples.len()).filter(|&i| self.samples[i].split == split).collect()
    }

    pub fn count(&self, split: Split) -> usize {
        self.samples.iter().filter(|s| s.split == split).count()
    }

    pub fn image_path(&self, sample: &ImageSample) -> PathBuf {
        self.root.join(&sample.path)
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join(MANIFEST_FILE)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# kinenet dataset manifest v1");
        let _ = writeln!(s, "# seed: {}", self.seed);
        let _ = writeln!(s, "# split_mode: {}", self.split_mode.as_str());
        let _ = writeln!(s, "# labels: 0 = stable, 1 = unstable");
        let _ = writeln!(s, "# grid: {}", serde_json::to_string(&self.grid).expect("grid serializes"));
        let _ = writeln!(s, "# style: {}", serde_json::to_string(&self.style).expect("style serializes"));
        let _ = writeln!(s, "{MANIFEST_COLUMNS}");
        for r in &self.samples {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                r.path.to_string_lossy(),
                r.label,
                r.structure_name,
                r.cell.scale_idx,
                r.cell.rot_idx,
                r.cell.trans_idx,
                r.split
            );
        }
        s
    }

    pub fn write(&self) -> Result<(), DatasetError> {
        let path = self.manifest_path();
        fs::write(&path, self.to_text()).map_err(io_err(&path))
    }

    /// Read `path`, either a manifest file or a dataset directory.
    pub fn read(path: &Path) -> Result<Self, DatasetError> {
        let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        let root = file.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf);
        let reader = BufReader::new(fs::File::open(&file).map_err(io_err(&file))?);
        let err = |line: usize, message: String| DatasetError::Manifest {
            path: file.clone(),
            line,
            message,
        };
        let (mut seed, mut split_mode, mut grid, mut style) = (None, None, None, None);
        let mut seen_columns = false;
        let mut samples = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let n = i + 1;
            let line = line.map_err(io_err(&file))?;
            if let Some(h) = line.strip_prefix('#') {
                let Some((key, value)) = h.trim().split_once(": ") else {
                    continue;
                };
                match key {
                    "seed" => seed = Some(value.parse::<u64>().map_err(|e| err(n, format!("seed: {e}")))?),
                    "split_mode" => {
                        split_mode = Some(SplitMode::parse(value).ok_or_else(|| err(n, format!("unknown split mode `{value}`")))?)
                    }
                    "grid" => grid = Some(serde_json::from_str(value).map_err(|e| err(n, format!("grid: {e}")))?),
                    "style" => style = Some(serde_json::from_str(value).map_err(|e| err(n, format!("style: {e}")))?),
                    _ => {}
                }
                continue;
            }
            if !seen_columns {
                if line != MANIFEST_COLUMNS {
                    return Err(err(n, format!("expected column header `{MANIFEST_COLUMNS}`")));
                }
                seen_columns = true;
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(err(n, format!("expected 7 fields, found {}", f.len())));
            }
            let idx = |k: usize, name: &str| -> Result<usize, DatasetError> {
                f[k].parse::<usize>()
                    .ok()
                    .filter(|&v| v < 9)
                    .ok_or_else(|| err(n, format!("{name} `{}` is not an index in 0..9", f[k])))
            };
            let label = match f[1] {
                "0" => 0,
                "1" => 1,
                other => return Err(err(n, format!("label `{other}` is not 0 or 1"))),
            };
            samples.push(ImageSample {
                path: PathBuf::from(f[0]),
                label,
                structure_name: f[2].to_owned(),
                cell: GridCell {
                    scale_idx: idx(3, "scale_idx")?,
                    rot_idx: idx(4, "rot_idx")?,
                    trans_idx: idx(5, "trans_idx")?,
                },
                split: Split::parse(f[6]).ok_or_else(|| err(n, format!("unknown split `{}`", f[6])))?,
            });
        }
        let missing = |what: &str| err(0, format!("header lacks `{what}`"));
        Ok(Self {
            root,
            seed: seed.ok_or_else(|| missing("seed"))?,
            split_mode: split_mode.ok_or_else(|| missing("split_mode"))?,
            grid: grid.ok_or_else(|| missing("grid"))?,
            style: style.ok_or_else(|| missing("style"))?,
            samples,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BuildOptions {
    pub split_mode: SplitMode,
    /// Worker threads for rendering; `None` uses the global pool.
    pub jobs: Option<usize>,
}

fn check_name(name: &str) -> Result<(), DatasetError> {
    let ok = !name.is_empty()
        && name != "."
        && name != ".."
        && name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'));
    if ok {
        Ok(())
    } else {
        Err(DatasetError::BadName(name.to_owned()))
    }
}

/// Oracle label of a catalog entry, checked against its intended label.
pub fn checked_label(entry: &CatalogEntry) -> Result<u8, DatasetError> {
    let oracle = binary_label(&classify_stability(&entry.structure));
    if oracle != entry.intended_label() {
        return Err(DatasetError::LabelMismatch {
            structure: entry.name().to_owned(),
            intended: entry.intended_label(),
            oracle,
        });
    }
    Ok(oracle)
}

/// 50/25/25 sizes (floor, floor, remainder).
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = n / 2;
    let val = n / 4;
    (train, val, n - train - val)
}

fn assign_splits(labels: &[u8], per_structure: usize, mode: SplitMode, seed: u64) -> Vec<Split> {
    let n = labels.len() * per_structure;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pick = |rank: usize, total: usize| {
        let (train, val, _) = split_sizes(total);
        if rank < train {
            Split::Train
        } else if rank < train + val {
            Split::Val
        } else {
            Split::Test
        }
    };
    let mut out = vec![Split::Train; n];
    match mode {
        SplitMode::ByImage => {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            for (rank, &i) in order.iter().enumerate() {
                out[i] = pick(rank, n);
            }
        }
        SplitMode::ByStructure => {
            for class in [0u8, 1] {
                let mut members: Vec<usize> = (0..labels.len()).filter(|&s| labels[s] == class).collect();
                members.shuffle(&mut rng);
                for (rank, &s) in members.iter().enumerate() {
                    let split = pick(rank, members.len());
                    out[s * per_structure..(s + 1) * per_structure].fill(split);
                }
            }
        }
    }
    out
}

/// Render and write every image of `catalog` under `out_dir`, then write the
/// manifest. Training entries are split 50/25/25; holdout entries are all
/// `Holdout`. Output bytes depend only on the arguments, not on `jobs`.
pub fn build_dataset(
    catalog: &Catalog,
    grid: &AugmentationGrid,
    style: &RenderStyle,
    seed: u64,
    out_dir: &Path,
    options: BuildOptions,
) -> Result<Manifest, DatasetError> {
    grid.validate()?;
    style.validate().map_err(|source| DatasetError::Render {
        structure: String::new(),
        source,
    })?;
    let entries: Vec<&CatalogEntry> = catalog.all().collect();
    let mut names: Vec<&str> = entries.iter().map(|e| e.name()).collect();
    for n in &names {
        check_name(n)?;
    }
    names.sort_unstable();
    if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
        return Err(DatasetError::DuplicateName(w[0].to_owned()));
    }
    let labels = entries.iter().map(|e| checked_label(e)).collect::<Result<Vec<_>, _>>()?;

    let cells = grid.cells();
    let per = cells.len();
    let n_train = catalog.training_examples.len();
    let mut splits = assign_splits(&labels[..n_train], per, options.split_mode, seed);
    splits.resize(entries.len() * per, Split::Holdout);

    let mut samples = Vec::with_capacity(entries.len() * per);
    for (s, entry) in entries.iter().enumerate() {
        for (k, cell) in cells.iter().enumerate() {
            let split = splits[s * per + k];
            samples.push(ImageSample {
                path: PathBuf::from(split.as_str())
                    .join(entry.name())
                    .join(format!("{}_{}_{}.png", cell.scale_idx, cell.rot_idx, cell.trans_idx)),
                label: labels[s],
                structure_name: entry.name().to_owned(),
                cell: *cell,
                split,
            });
        }
    }

    let mut dirs: Vec<PathBuf> = samples.iter().filter_map(|r| r.path.parent().map(|p| out_dir.join(p))).collect();
    dirs.sort();
    dirs.dedup();
    for d in &dirs {
        fs::create_dir_all(d).map_err(io_err(d))?;
    }

    // one unit per (structure, scale): render once, then rotate and shift
    let units: Vec<(usize, usize)> = (0..entries.len())
        .flat_map(|s| grid.scale_indices.iter().map(move |&si| (s, si)))
        .collect();
    let work = || {
        units.par_iter().try_for_each(|&(s, scale_idx)| -> Result<(), DatasetError> {
            let entry = entries[s];
            let base = render(&entry.structure, grid.scales[scale_idx], style).map_err(|source| DatasetError::Render {
                structure: entry.name().to_owned(),
                source,
            })?;
            for &rot_idx in &grid.rotation_indices {
                let rotated = rotate(&base, grid.rotations_deg[rot_idx]);
                for (k, cell) in cells.iter().enumerate() {
                    if cell.scale_idx != scale_idx || cell.rot_idx != rot_idx {
                        continue;
                    }
                    let (dx, dy) = grid.translations_px[cell.trans_idx];
                    let img = if (dx, dy) == (0, 0) { rotated.clone() } else { translate(&rotated, dx, dy) };
                    img.write_png(&out_dir.join(&samples[s * per + k].path))?;
                }
            }
            Ok(())
        })
    };
    match options.jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .expect("thread pool")
            .install(work)?,
        None => work()?,
    }

    let manifest = Manifest {
        root: out_dir.to_path_buf(),
        seed,
        split_mode: options.split_mode,
        grid: grid.clone(),
        style: *style,
        samples,
    };
    manifest.write()?;
    Ok(manifest)
}

/// Images decoded from the manifest, pixels scaled to `[0, 1]`.
#[derive(Debug, Clone)]
pub struct Batch {
    pub images: Tensor4<f32>,
    pub labels: Vec<f64>,
    /// Positions of the samples in `Manifest::samples`.
    pub indices: Vec<usize>,
}

/// Decode one sample into `[h][w][c]` floats in `[0, 1]`.
pub fn load_sample(manifest: &Manifest, index: usize) -> Result<Vec<f32>, DatasetError> {
    let path = manifest.image_path(&manifest.samples[index]);
    let img = RgbImage::read_png(&path)?;
    if img.width() != IMAGE_SIZE || img.height() != IMAGE_SIZE {
        return Err(DatasetError::Manifest {
            path,
            line: 0,
            message: format!("image is {}x{}, expected {IMAGE_SIZE}x{IMAGE_SIZE}", img.width(), img.height()),
        });
    }
    Ok(image_to_input(&img))
}

/// `u8 -> [0, 1]` by dividing by 255.
pub fn image_to_input(img: &RgbImage) -> Vec<f32> {
    img.as_bytes().iter().map(|&b| f32::from(b) / 255.0).collect()
}

/// Lazy batch iterator: holds one batch of decoded images at a time.
#[derive(Debug, Clone)]
pub struct BatchStream<'a> {
    manifest: &'a Manifest,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl BatchStream<'_> {
    /// Sample order of this epoch.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn batch_count(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }
}

impl Iterator for BatchStream<'_> {
    type Item = Result<Batch, DatasetError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let indices = self.order[self.pos..end].to_vec();
        self.pos = end;
        let images = indices
            .par_iter()
            .map(|&i| load_sample(self.manifest, i))
            .collect::<Result<Vec<_>, _>>();
        Some(images.map(|images| Batch {
            images: Tensor4::stack(IMAGE_SIZE, IMAGE_SIZE, 3, &images).expect("decoded images are 256x256x3"),
            labels: indices.iter().map(|&i| f64::from(self.manifest.samples[i].label)).collect(),
            indices,
        }))
    }
}

/// Every sample of `split` once, in an order fixed by `epoch_seed`
/// (`None` keeps manifest order).
pub fn stream_batches(
    manifest: &Manifest,
    split: Split,
    batch_size: usize,
    epoch_seed: Option<u64>,
) -> Result<BatchStream<'_>, DatasetError> {
    if batch_size == 0 {
        return Err(DatasetError::BatchSize);
    }
    let mut order = manifest.split_indices(split);
    if let Some(seed) = epoch_seed {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    Ok(BatchStream {
        manifest,
        order,
        batch_size,
        pos: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::builtin_catalog;

    fn stripes() -> RgbImage {
        let mut img = RgbImage::white(IMAGE_SIZE, IMAGE_SIZE);
        for y in 0..IMAGE_SIZE {
            for x in 0..IMAGE_SIZE {
                img.put(x, y, [(x % 251) as u8, (y % 241) as u8, ((x + y) % 7) as u8]);
            }
        }
        img
    }

    #[test]
    fn full_grid_shape() {
        let g = AugmentationGrid::full();
        g.validate().unwrap();
        assert_eq!(g.cell_count(), 729);
        assert_eq!(g.scales[0], 1.0);
        assert_eq!(g.scales[8], 0.52);
        assert_eq!(g.translations_px[4], (0, 0));
        assert_eq!(g.translations_px[1], (0, -10));
        assert_eq!(AugmentationGrid::desk().cell_count(), 27);
        let mut bad = g.clone();
        bad.rotations_deg[1] = 45.0;
        assert!(bad.validate().is_err());
        assert!(g.subset(&[0, 0], &[0], &[0]).validate().is_err());
    }

    #[test]
    fn identity_augmentation() {
        let img = stripes();
        assert_eq!(augment(&img, 0.0, 0, 0), img);
    }

    #[test]
    fn horizontal_shift() {
        let img = stripes();
        let out = augment(&img, 0.0, 10, 0);
        for y in 0..IMAGE_SIZE {
            for x in 0..IMAGE_SIZE {
                let want = if x >= 10 { img.get(x - 10, y) } else { [255; 3] };
                assert_eq!(out.get(x, y), want);
            }
        }
    }

    #[test]
    fn vertical_shift_up() {
        let img = stripes();
        let out = translate(&img, 0, -10);
        assert_eq!(out.get(5, 0), img.get(5, 10));
        assert_eq!(out.get(5, 250), [255; 3]);
    }

    #[test]
    fn white_is_rotation_invariant() {
        let white = RgbImage::white(IMAGE_SIZE, IMAGE_SIZE);
        assert_eq!(rotate(&rotate(&white, 160.0), 200.0), white);
    }

    #[test]
    fn rotation_is_counterclockwise() {
        let mut img = RgbImage::white(IMAGE_SIZE, IMAGE_SIZE);
        for x in 200..210 {
            for y in 124..132 {
                img.put(x, y, [0, 0, 0]);
            }
        }
        // a mark right of center moves above center
        let out = rotate(&img, 80.0);
        let dark: Vec<(usize, usize)> = (0..IMAGE_SIZE)
            .flat_map(|y| (0..IMAGE_SIZE).map(move |x| (x, y)))
            .filter(|&(x, y)| out.get(x, y)[0] < 128)
            .collect();
        assert!(!dark.is_empty());
        assert!(dark.iter().all(|&(_, y)| y < 100));
    }

    #[test]
    fn split_arithmetic() {
        assert_eq!(split_sizes(17_496), (8_748, 4_374, 4_374));
        assert_eq!(split_sizes(108), (54, 27, 27));
        let labels = [0, 0, 1, 1];
        let s = assign_splits(&labels, 27, SplitMode::ByImage, 3);
        assert_eq!(s.iter().filter(|&&x| x == Split::Train).count(), 54);
        assert_eq!(s, assign_splits(&labels, 27, SplitMode::ByImage, 3));
        let s = assign_splits(&labels, 27, SplitMode::ByStructure, 3);
        for chunk in s.chunks(27) {
            assert!(chunk.iter().all(|&x| x == chunk[0]));
        }
    }

    #[test]
    fn small_build_and_stream() {
        let full = builtin_catalog();
        let catalog = Catalog {
            training_examples: full.training_examples[..2].to_vec(),
            holdout_examples: full.holdout_examples[..1].to_vec(),
        };
        let grid = AugmentationGrid::full().subset(&[0], &[0, 1], &[4, 5]);
        let dir = tempfile::tempdir().unwrap();
        let m = build_dataset(&catalog, &grid, &RenderStyle::default(), 5, dir.path(), BuildOptions::default()).unwrap();
        assert_eq!(m.samples.len(), 12);
        assert_eq!((m.count(Split::Train), m.count(Split::Val), m.count(Split::Test)), (4, 2, 2));
        assert_eq!(m.count(Split::Holdout), 4);
        let back = Manifest::read(dir.path()).unwrap();
        assert_eq!(back, m);

        let plain = render(&catalog.training_examples[0].structure, 1.0, &RenderStyle::default()).unwrap();
        let cell = m
            .samples
            .iter()
            .find(|r| r.structure_name == catalog.training_examples[0].name() && r.cell.rot_idx == 0 && r.cell.trans_idx == 4)
            .unwrap();
        assert_eq!(RgbImage::read_png(&m.image_path(cell)).unwrap(), plain);

        let batches: Vec<Batch> = stream_batches(&m, Split::Holdout, 3, Some(1)).unwrap().map(Result::unwrap).collect();
        assert_eq!(batches.iter().map(|b| b.labels.len()).collect::<Vec<_>>(), vec![3, 1]);
        assert!(batches[0].images.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(stream_batches(&m, Split::Val, 0, None).is_err());

        let victim = &m.samples[m.split_indices(Split::Train)[0]];
        fs::write(m.image_path(victim), b"not a png").unwrap();
        let e = stream_batches(&m, Split::Train, 8, None)
            .unwrap()
            .find_map(Result::err)
            .expect("corrupt image reported");
        assert!(e.to_string().contains(&*victim.path.to_string_lossy()), "{e}");
    }
}
