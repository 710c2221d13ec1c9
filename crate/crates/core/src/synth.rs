//! Procedural paired SAR/EO scene generation.
//!
//! Scenes are layouts of ellipses and rectangles over a flat background.
//! The EO image is an anti-aliased color render with mild sensor noise;
//! the SAR image renders per-object radar reflectance (tied monotonically
//! to the EO luma so paired structure correlates), shifted by a small
//! misalignment, multiplied by gamma-distributed speckle, and
//! renormalized to [0, 1]. Temporal discrepancies inject 1-2 objects into
//! exactly one modality and are recorded in a ground-truth mask.
//!
//! Everything is a pure function of (spec, seed): sub-streams are derived
//! by purpose, so samples can be generated independently and re-rendered
//! with a different speckle draw only.

use crate::error::{Error, Result};
use crate::image_io;
use crate::rng::{derive_seed_at, rng_for, rng_for_at, Rng};
use crate::tensor::Tensor;
use crate::vae::{ImageSample, Modality};
use rand::Rng as _;
use std::fmt;
use std::path::{Path, PathBuf};

/// Train/test split labels; the split is fixed by seed 2025 on sorted ids.
pub const SPLIT_SEED: u64 = 2025;

const SUPERSAMPLE: usize = 4;
const EO_SENSOR_NOISE: f32 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Polarization {
    Single,
    Full,
}

impl Polarization {
    pub fn channels(self) -> usize {
        match self {
            Polarization::Single => 1,
            Polarization::Full => 4,
        }
    }
}

impl fmt::Display for Polarization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Polarization::Single => write!(f, "single"),
            Polarization::Full => write!(f, "full"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SceneSpec {
    pub image_size: usize,
    pub object_count_min: usize,
    pub object_count_max: usize,
    pub speckle_looks: f64,
    pub discrepancy_prob: f64,
    pub misalign_max: f64,
    pub polarization: Polarization,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            image_size: 64,
            object_count_min: 3,
            object_count_max: 12,
            speckle_looks: 4.0,
            discrepancy_prob: 0.3,
            misalign_max: 4.0,
            polarization: Polarization::Single,
            seed: 2025,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 || self.image_size % 8 != 0 {
            return Err(Error::invalid(
                "SceneSpec",
                format!("image_size {} must be a positive multiple of 8", self.image_size),
            ));
        }
        if self.object_count_min == 0 || self.object_count_min > self.object_count_max {
            return Err(Error::invalid("SceneSpec", "bad object_count range"));
        }
        if self.speckle_looks <= 0.0 {
            return Err(Error::invalid("SceneSpec", "speckle_looks must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.discrepancy_prob) {
            return Err(Error::invalid("SceneSpec", "discrepancy_prob must be in [0, 1]"));
        }
        if self.misalign_max < 0.0 || self.misalign_max >= self.image_size as f64 / 8.0 {
            return Err(Error::invalid(
                "SceneSpec",
                format!(
                    "misalign_max {} must stay below image_size/8 = {}",
                    self.misalign_max,
                    self.image_size as f64 / 8.0
                ),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ShapeKind {
    Ellipse,
    Rect,
}

#[derive(Debug, Clone)]
pub struct SceneObject {
    pub kind: ShapeKind,
    pub cx: f64,
    pub cy: f64,
    pub rx: f64,
    pub ry: f64,
    pub color: [f32; 3],
    pub reflectance: f32,
    /// Per-polarization reflectance factors (full-pol renders).
    pub pol_factors: [f32; 4],
}

/// Fraction of a pixel covered by the object, via subpixel sampling.
pub fn object_coverage(obj: &SceneObject, px: usize, py: usize) -> f32 {
    let mut hits = 0usize;
    for sy in 0..SUPERSAMPLE {
        let y = py as f64 + (sy as f64 + 0.5) / SUPERSAMPLE as f64;
        for sx in 0..SUPERSAMPLE {
            let x = px as f64 + (sx as f64 + 0.5) / SUPERSAMPLE as f64;
            let (dx, dy) = (x - obj.cx, y - obj.cy);
            let inside = match obj.kind {
                ShapeKind::Ellipse => {
                    let a = dx / obj.rx;
                    let b = dy / obj.ry;
                    a * a + b * b <= 1.0
                }
                ShapeKind::Rect => dx.abs() <= obj.rx && dy.abs() <= obj.ry,
            };
            if inside {
                hits += 1;
            }
        }
    }
    hits as f32 / (SUPERSAMPLE * SUPERSAMPLE) as f32
}

fn bbox(obj: &SceneObject, size: usize) -> (usize, usize, usize, usize) {
    let x0 = (obj.cx - obj.rx - 1.0).floor().max(0.0) as usize;
    let y0 = (obj.cy - obj.ry - 1.0).floor().max(0.0) as usize;
    let x1 = ((obj.cx + obj.rx + 1.0).ceil() as usize).min(size);
    let y1 = ((obj.cy + obj.ry + 1.0).ceil() as usize).min(size);
    (x0, y0, x1, y1)
}

/// Object lists behind a rendered pair; discrepancy objects live in
/// exactly one of the modality-specific lists.
#[derive(Debug, Clone)]
pub struct SceneLayout {
    pub shared: Vec<SceneObject>,
    pub eo_only: Vec<SceneObject>,
    pub sar_only: Vec<SceneObject>,
    pub background_color: [f32; 3],
    pub background_reflectance: f32,
}

#[derive(Clone)]
pub struct ScenePair {
    pub sar: ImageSample,
    pub eo: ImageSample,
    /// Binary (1, H, W) mask of pixels covered by single-modality objects.
    pub mask: Tensor,
    pub misalign: (f64, f64),
    pub seed: u64,
    pub has_discrepancy: bool,
}

fn luma(c: [f32; 3]) -> f32 {
    0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]
}

fn sample_object(rng: &mut Rng, size: f64, discrepancy: bool) -> SceneObject {
    let kind = if rng.gen_bool(0.5) {
        ShapeKind::Ellipse
    } else {
        ShapeKind::Rect
    };
    let cx = rng.gen_range(0.12 * size..0.88 * size);
    let cy = rng.gen_range(0.12 * size..0.88 * size);
    // Discrepancy objects stay >= 3x3 latent cells so they remain visible
    // at 1/8 resolution.
    let (lo, hi) = if discrepancy {
        (0.19 * size, 0.26 * size)
    } else {
        (0.07 * size, 0.20 * size)
    };
    let rx = rng.gen_range(lo..hi);
    let ry = rng.gen_range(lo..hi);
    let color = [
        rng.gen_range(0.15f32..0.95),
        rng.gen_range(0.15f32..0.95),
        rng.gen_range(0.15f32..0.95),
    ];
    let jitter: f32 = rng.gen_range(-0.05..0.05);
    let reflectance = (0.15 + 0.75 * luma(color) + jitter).clamp(0.05, 1.0);
    let mut pol_factors = [1.0f32; 4];
    for f in pol_factors.iter_mut() {
        *f = 1.0 + rng.gen_range(-0.2f32..0.2);
    }
    SceneObject {
        kind,
        cx,
        cy,
        rx,
        ry,
        color,
        reflectance,
        pol_factors,
    }
}

fn sample_layout(spec: &SceneSpec, seed: u64) -> (SceneLayout, bool) {
    let size = spec.image_size as f64;
    let mut rng = rng_for(seed, "layout");
    let count = rng.gen_range(spec.object_count_min..=spec.object_count_max);
    let shared: Vec<SceneObject> = (0..count).map(|_| sample_object(&mut rng, size, false)).collect();
    let bg = [
        rng.gen_range(0.05f32..0.35),
        rng.gen_range(0.05f32..0.35),
        rng.gen_range(0.05f32..0.35),
    ];
    let background_reflectance = (0.15 + 0.75 * luma(bg)).clamp(0.02, 1.0);

    let mut drng = rng_for(seed, "discrepancy");
    let mut eo_only = Vec::new();
    let mut sar_only = Vec::new();
    let mut has_discrepancy = false;
    if drng.gen_bool(spec.discrepancy_prob) {
        has_discrepancy = true;
        let n = drng.gen_range(1..=2usize);
        let to_eo = drng.gen_bool(0.5);
        for _ in 0..n {
            let obj = sample_object(&mut drng, size, true);
            if to_eo {
                eo_only.push(obj);
            } else {
                sar_only.push(obj);
            }
        }
    }
    (
        SceneLayout {
            shared,
            eo_only,
            sar_only,
            background_color: bg,
            background_reflectance,
        },
        has_discrepancy,
    )
}

fn composite(canvas: &mut [f32], size: usize, channels: usize, obj: &SceneObject, values: &[f32]) {
    let (x0, y0, x1, y1) = bbox(obj, size);
    for py in y0..y1 {
        for px in x0..x1 {
            let c = object_coverage(obj, px, py);
            if c > 0.0 {
                for ch in 0..channels {
                    let idx = ch * size * size + py * size + px;
                    canvas[idx] = canvas[idx] * (1.0 - c) + values[ch] * c;
                }
            }
        }
    }
}

fn shifted(obj: &SceneObject, dx: f64, dy: f64) -> SceneObject {
    let mut o = obj.clone();
    o.cx += dx;
    o.cy += dy;
    o
}

/// I.i.d. multiplicative gamma field with mean 1 and variance 1/looks.
pub fn speckle_field(shape: &[usize], looks: f64, rng: &mut Rng) -> Result<Tensor> {
    if looks <= 0.0 {
        return Err(Error::invalid("speckle_field", "looks must be > 0"));
    }
    let n: usize = shape.iter().product();
    let data: Vec<f32> = (0..n)
        .map(|_| crate::rng::gamma_draw(rng, looks, 1.0 / looks) as f32)
        .collect();
    Tensor::from_vec(shape, data)
}

/// Render a scene with the default speckle draw.
pub fn render_scene(spec: &SceneSpec, seed: u64) -> Result<ScenePair> {
    render_scene_speckle_variant(spec, seed, 0)
}

/// Render a scene plus its layout records (for mask verification).
pub fn render_scene_detailed(spec: &SceneSpec, seed: u64) -> Result<(ScenePair, SceneLayout)> {
    let (layout, has_discrepancy) = sample_layout(spec, seed);
    let pair = render_from_layout(spec, seed, &layout, has_discrepancy, 0)?;
    Ok((pair, layout))
}

/// Same scene, different speckle stream (used by despeckling probes).
pub fn render_scene_speckle_variant(
    spec: &SceneSpec,
    seed: u64,
    speckle_index: u64,
) -> Result<ScenePair> {
    let (layout, has_discrepancy) = sample_layout(spec, seed);
    render_from_layout(spec, seed, &layout, has_discrepancy, speckle_index)
}

fn render_from_layout(
    spec: &SceneSpec,
    seed: u64,
    layout: &SceneLayout,
    has_discrepancy: bool,
    speckle_index: u64,
) -> Result<ScenePair> {
    spec.validate()?;
    let size = spec.image_size;

    // EO: color compositing plus sensor noise.
    let mut eo = vec![0f32; 3 * size * size];
    for ch in 0..3 {
        eo[ch * size * size..(ch + 1) * size * size].fill(layout.background_color[ch]);
    }
    for obj in layout.shared.iter().chain(layout.eo_only.iter()) {
        composite(&mut eo, size, 3, obj, &obj.color);
    }
    let mut eo_rng = rng_for(seed, "eo-noise");
    for v in eo.iter_mut() {
        let noise: f32 = eo_rng.sample::<f32, _>(rand_distr::StandardNormal) * EO_SENSOR_NOISE;
        *v = (*v + noise).clamp(0.0, 1.0);
    }

    // SAR: reflectance compositing in translated coordinates, speckle,
    // renormalization.
    let mut mrng = rng_for(seed, "misalign");
    let m = spec.misalign_max;
    let (dx, dy) = if m > 0.0 {
        (mrng.gen_range(-m..=m), mrng.gen_range(-m..=m))
    } else {
        (0.0, 0.0)
    };
    let channels = spec.polarization.channels();
    let mut sar = vec![0f32; channels * size * size];
    for ch in 0..channels {
        let base = layout.background_reflectance;
        sar[ch * size * size..(ch + 1) * size * size].fill(base);
    }
    for obj in layout.shared.iter().chain(layout.sar_only.iter()) {
        let moved = shifted(obj, dx, dy);
        let values: Vec<f32> = match spec.polarization {
            Polarization::Single => vec![obj.reflectance],
            Polarization::Full => (0..4)
                .map(|c| (obj.reflectance * obj.pol_factors[c]).clamp(0.0, 1.2))
                .collect(),
        };
        composite(&mut sar, size, channels, &moved, &values);
    }
    let mut srng = rng_for_at(seed, "speckle", speckle_index);
    let field = speckle_field(&[channels, size, size], spec.speckle_looks, &mut srng)?;
    let fd = field.data();
    let mut maxv = 0f32;
    for (v, &f) in sar.iter_mut().zip(fd.iter()) {
        *v *= f;
        maxv = maxv.max(*v);
    }
    drop(fd);
    let scale = 1.0 / maxv.max(1.0);
    for v in sar.iter_mut() {
        *v = (*v * scale).clamp(0.0, 1.0);
    }

    // Mask: union of single-modality object support, in layout space.
    let mut mask = vec![0f32; size * size];
    for obj in layout.eo_only.iter().chain(layout.sar_only.iter()) {
        let (x0, y0, x1, y1) = bbox(obj, size);
        for py in y0..y1 {
            for px in x0..x1 {
                if object_coverage(obj, px, py) > 0.0 {
                    mask[py * size + px] = 1.0;
                }
            }
        }
    }

    Ok(ScenePair {
        sar: ImageSample::new(Tensor::from_vec(&[channels, size, size], sar)?, Modality::Sar)?,
        eo: ImageSample::new(Tensor::from_vec(&[3, size, size], eo)?, Modality::Eo)?,
        mask: Tensor::from_vec(&[1, size, size], mask)?,
        misalign: (dx, dy),
        seed,
        has_discrepancy,
    })
}

/// One of the 8 dihedral transforms of a square (C, H, W) tensor:
/// 0 identity, 1 rot90, 2 rot180, 3 rot270, 4 flip-h, 5 flip-v,
/// 6 transpose, 7 anti-transpose.
pub fn dihedral_transform(t: &Tensor, op: u8) -> Result<Tensor> {
    let s = t.shape();
    if s.len() != 3 || s[1] != s[2] {
        return Err(Error::invalid(
            "dihedral_transform",
            format!("expected square (C, N, N) input, got {s:?}"),
        ));
    }
    let (c, n) = (s[0], s[1]);
    let src = t.data();
    let mut out = vec![0f32; c * n * n];
    for ch in 0..c {
        let sp = &src[ch * n * n..(ch + 1) * n * n];
        let dp = &mut out[ch * n * n..(ch + 1) * n * n];
        for y in 0..n {
            for x in 0..n {
                let (sx, sy) = match op {
                    0 => (x, y),
                    1 => (y, n - 1 - x),             // rot90 ccw source
                    2 => (n - 1 - x, n - 1 - y),     // rot180
                    3 => (n - 1 - y, x),             // rot270
                    4 => (n - 1 - x, y),             // horizontal flip
                    5 => (x, n - 1 - y),             // vertical flip
                    6 => (y, x),                     // transpose
                    7 => (n - 1 - y, n - 1 - x),     // anti-transpose
                    _ => {
                        return Err(Error::invalid(
                            "dihedral_transform",
                            format!("op {op} out of range 0..8"),
                        ))
                    }
                };
                dp[y * n + x] = sp[sy * n + sx];
            }
        }
    }
    Tensor::from_vec(s, out)
}

/// Apply one uniformly drawn dihedral transform jointly to X, Y, and M.
pub fn augment(pair: &ScenePair, rng: &mut Rng) -> Result<ScenePair> {
    let op = rng.gen_range(0u8..8);
    augment_with(pair, op)
}

pub fn augment_with(pair: &ScenePair, op: u8) -> Result<ScenePair> {
    Ok(ScenePair {
        sar: ImageSample::new(dihedral_transform(&pair.sar.pixels, op)?, Modality::Sar)?,
        eo: ImageSample::new(dihedral_transform(&pair.eo.pixels, op)?, Modality::Eo)?,
        mask: dihedral_transform(&pair.mask, op)?,
        misalign: pair.misalign,
        seed: pair.seed,
        has_discrepancy: pair.has_discrepancy,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Test => write!(f, "test"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ManifestEntry {
    pub id: String,
    pub split: Split,
    pub sar_paths: Vec<PathBuf>,
    pub eo_path: PathBuf,
    pub mask_path: Option<PathBuf>,
    pub seed: u64,
    pub has_discrepancy: bool,
}

#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

/// Deterministic 80/20 assignment: shuffle sorted ids with seed 2025.
fn assign_splits(count: usize) -> Vec<Split> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..count).collect();
    let mut rng = rng_for(SPLIT_SEED, "train-test-split");
    order.shuffle(&mut rng);
    let train_count = (count * 8) / 10;
    let mut splits = vec![Split::Test; count];
    for &idx in order.iter().take(train_count) {
        splits[idx] = Split::Train;
    }
    splits
}

impl DatasetManifest {
    pub fn train_entries(&self) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(|e| e.split == Split::Train)
    }

    pub fn test_entries(&self) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(|e| e.split == Split::Test)
    }

    pub fn manifest_path(root: &Path) -> PathBuf {
        root.join("manifest.tsv")
    }

    pub fn write(&self) -> Result<PathBuf> {
        let path = Self::manifest_path(&self.root);
        let mut out = String::new();
        out.push_str("id\tsplit\tsar_path\teo_path\tmask_path\tseed\thas_discrepancy\n");
        for e in &self.entries {
            let sar = e
                .sar_paths
                .iter()
                .map(|p| p.to_string_lossy().into_owned())
                .collect::<Vec<_>>()
                .join(";");
            let mask = e
                .mask_path
                .as_ref()
                .map(|p| p.to_string_lossy().into_owned())
                .unwrap_or_else(|| "-".into());
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                e.id,
                e.split,
                sar,
                e.eo_path.to_string_lossy(),
                mask,
                e.seed,
                e.has_discrepancy as u8
            ));
        }
        std::fs::write(&path, out).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<DatasetManifest> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if i == 0 || line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 7 {
                return Err(Error::format(
                    path,
                    format!("line {}: expected 7 tab-separated fields", i + 1),
                ));
            }
            let split = match cols[1] {
                "train" => Split::Train,
                "test" => Split::Test,
                other => return Err(Error::format(path, format!("line {}: bad split '{other}'", i + 1))),
            };
            entries.push(ManifestEntry {
                id: cols[0].to_string(),
                split,
                sar_paths: cols[2].split(';').map(PathBuf::from).collect(),
                eo_path: PathBuf::from(cols[3]),
                mask_path: if cols[4] == "-" {
                    None
                } else {
                    Some(PathBuf::from(cols[4]))
                },
                seed: cols[5]
                    .parse()
                    .map_err(|_| Error::format(path, format!("line {}: bad seed", i + 1)))?,
                has_discrepancy: cols[6] == "1",
            });
        }
        Ok(DatasetManifest { root, entries })
    }

    /// Load one entry's images (and mask when present) from disk.
    pub fn load_pair(&self, e: &ManifestEntry) -> Result<(ImageSample, ImageSample, Option<Tensor>)> {
        let sar = if e.sar_paths.len() == 1 {
            image_io::read_image(&self.root.join(&e.sar_paths[0]))?
        } else {
            let planes: Result<Vec<Tensor>> = e
                .sar_paths
                .iter()
                .map(|p| image_io::read_image(&self.root.join(p)))
                .collect();
            let planes = planes?;
            let refs: Vec<&Tensor> = planes.iter().collect();
            crate::tensor::concat(None, &refs, 0)?
        };
        let eo = image_io::read_image(&self.root.join(&e.eo_path))?;
        let mask = match &e.mask_path {
            Some(p) => {
                let m = image_io::read_image(&self.root.join(p))?;
                // Stored as {0, 255}; binarize.
                let bin: Vec<f32> = m.data().iter().map(|&v| if v > 0.5 { 1.0 } else { 0.0 }).collect();
                Some(Tensor::from_vec(m.shape(), bin)?)
            }
            None => None,
        };
        Ok((
            ImageSample::new(sar, Modality::Sar)?,
            ImageSample::new(eo, Modality::Eo)?,
            mask,
        ))
    }
}

/// Generate `count` scenes, write images plus the manifest under `out_dir`.
pub fn write_dataset(spec: &SceneSpec, count: usize, out_dir: &Path) -> Result<DatasetManifest> {
    spec.validate()?;
    if count == 0 {
        return Err(Error::EmptyDataset);
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let splits = assign_splits(count);
    let mut entries = Vec::with_capacity(count);
    for i in 0..count {
        let scene_seed = derive_seed_at(spec.seed, "scene", i as u64);
        let pair = render_scene(spec, scene_seed)?;
        let id = format!("{i:05}");
        let eo_path = PathBuf::from(format!("{id}_eo.ppm"));
        image_io::write_ppm(&out_dir.join(&eo_path), &pair.eo.pixels)?;
        let sar_paths: Vec<PathBuf> = match spec.polarization {
            Polarization::Single => {
                let p = PathBuf::from(format!("{id}_sar.pgm"));
                image_io::write_pgm(&out_dir.join(&p), &pair.sar.pixels)?;
                vec![p]
            }
            Polarization::Full => {
                let names = ["hh", "hv", "vh", "vv"];
                let mut paths = Vec::with_capacity(4);
                for (c, name) in names.iter().enumerate() {
                    let plane = crate::tensor::narrow(None, &pair.sar.pixels, 0, c, 1)?;
                    let p = PathBuf::from(format!("{id}_sar_{name}.pgm"));
                    image_io::write_pgm(&out_dir.join(&p), &plane)?;
                    paths.push(p);
                }
                paths
            }
        };
        let mask_path = PathBuf::from(format!("{id}_mask.pgm"));
        image_io::write_pgm(&out_dir.join(&mask_path), &pair.mask)?;
        entries.push(ManifestEntry {
            id,
            split: splits[i],
            sar_paths,
            eo_path,
            mask_path: Some(mask_path),
            seed: scene_seed,
            has_discrepancy: pair.has_discrepancy,
        });
    }
    let manifest = DatasetManifest {
        root: out_dir.to_path_buf(),
        entries,
    };
    manifest.write()?;
    Ok(manifest)
}

/// Build a manifest from user-supplied paired directories. Pairing is by
/// file stem; both sides must match exactly.
pub fn ingest_paired_dir(sar_dir: &Path, eo_dir: &Path, out_dir: &Path) -> Result<DatasetManifest> {
    let list = |dir: &Path| -> Result<Vec<(String, PathBuf)>> {
        let mut out = Vec::new();
        let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        for entry in rd {
            let entry = entry.map_err(|e| Error::io(dir, e))?;
            let p = entry.path();
            let ext = p.extension().and_then(|e| e.to_str()).unwrap_or("");
            if matches!(ext, "ppm" | "pgm") {
                let stem = p
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .unwrap_or_default()
                    .to_string();
                out.push((stem, p));
            }
        }
        out.sort();
        Ok(out)
    };
    let sar = list(sar_dir)?;
    let eo = list(eo_dir)?;
    let sar_stems: std::collections::BTreeSet<&String> = sar.iter().map(|(s, _)| s).collect();
    let eo_stems: std::collections::BTreeSet<&String> = eo.iter().map(|(s, _)| s).collect();
    for s in sar_stems.symmetric_difference(&eo_stems) {
        return Err(Error::UnpairedFilename((*s).clone()));
    }
    if sar.is_empty() {
        return Err(Error::EmptyDataset);
    }
    // Validate images up front: readable, sane channels, size divisible by 8.
    for (_, p) in sar.iter().chain(eo.iter()) {
        let img = image_io::read_image(p)?;
        let s = img.shape();
        if s[1] % 8 != 0 || s[2] % 8 != 0 {
            return Err(Error::format(
                p,
                format!("size {}x{} not divisible by 8", s[1], s[2]),
            ));
        }
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let splits = assign_splits(sar.len());
    let entries = sar
        .iter()
        .zip(eo.iter())
        .enumerate()
        .map(|(i, ((stem, sp), (_, ep)))| ManifestEntry {
            id: stem.clone(),
            split: splits[i],
            sar_paths: vec![sp.clone()],
            eo_path: ep.clone(),
            mask_path: None,
            seed: 0,
            has_discrepancy: false,
        })
        .collect();
    let manifest = DatasetManifest {
        root: out_dir.to_path_buf(),
        entries,
    };
    manifest.write()?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;

    #[test]
    fn zero_discrepancy_prob_means_empty_mask() {
        let spec = SceneSpec {
            discrepancy_prob: 0.0,
            ..Default::default()
        };
        for seed in 0..5 {
            let pair = render_scene(&spec, seed).unwrap();
            assert!(!pair.has_discrepancy);
            assert!(pair.mask.to_vec().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn same_seed_bit_identical() {
        let spec = SceneSpec::default();
        let a = render_scene(&spec, 7).unwrap();
        let b = render_scene(&spec, 7).unwrap();
        assert_eq!(a.sar.pixels.to_vec(), b.sar.pixels.to_vec());
        assert_eq!(a.eo.pixels.to_vec(), b.eo.pixels.to_vec());
        assert_eq!(a.mask.to_vec(), b.mask.to_vec());
        assert_eq!(a.misalign, b.misalign);
    }

    #[test]
    fn discrepancy_rate_matches_binomial() {
        // 500 scenes at p_d = 0.5: fraction within 0.5 +/- 0.07 (3 sigma).
        let spec = SceneSpec {
            image_size: 32,
            discrepancy_prob: 0.5,
            misalign_max: 2.0,
            ..Default::default()
        };
        let mut hits = 0usize;
        for i in 0..500 {
            let seed = derive_seed_at(spec.seed, "scene", i);
            if render_scene(&spec, seed).unwrap().has_discrepancy {
                hits += 1;
            }
        }
        let frac = hits as f64 / 500.0;
        assert!((frac - 0.5).abs() < 0.07, "fraction {frac}");
    }

    #[test]
    fn mask_matches_layout_records_exactly() {
        let spec = SceneSpec {
            discrepancy_prob: 1.0,
            ..Default::default()
        };
        for seed in 0..8 {
            let (pair, layout) = render_scene_detailed(&spec, seed).unwrap();
            let size = spec.image_size;
            let mask = pair.mask.to_vec();
            for py in 0..size {
                for px in 0..size {
                    let covered = layout
                        .eo_only
                        .iter()
                        .chain(layout.sar_only.iter())
                        .any(|o| object_coverage(o, px, py) > 0.0);
                    let m = mask[py * size + px] > 0.5;
                    assert_eq!(m, covered, "seed {seed} pixel ({px},{py})");
                }
            }
            // Exactly one modality holds the discrepancy objects.
            assert!(layout.eo_only.is_empty() != layout.sar_only.is_empty());
        }
    }

    #[test]
    fn speckle_field_moments() {
        let mut rng = rng_from(41);
        let f = speckle_field(&[1_000_000], 4.0, &mut rng).unwrap();
        let d = f.to_vec();
        let mean: f64 = d.iter().map(|&v| v as f64).sum::<f64>() / d.len() as f64;
        let var: f64 =
            d.iter().map(|&v| (v as f64 - mean) * (v as f64 - mean)).sum::<f64>() / d.len() as f64;
        assert!((mean - 1.0).abs() < 0.005, "mean {mean}");
        assert!((var - 0.25).abs() < 0.01, "var {var}");
    }

    #[test]
    fn speckle_variance_vanishes_at_huge_looks() {
        let mut rng = rng_from(42);
        let f = speckle_field(&[10_000], 1e6, &mut rng).unwrap();
        let max_dev = f.to_vec().iter().map(|&v| (v - 1.0).abs()).fold(0f32, f32::max);
        assert!(max_dev < 0.02, "max deviation {max_dev}");
        assert!(speckle_field(&[4], 0.0, &mut rng).is_err());
    }

    #[test]
    fn dihedral_identity_and_involutions() {
        let mut rng = rng_from(43);
        let t = Tensor::rand_uniform(&mut rng, &[2, 6, 6], 0.0, 1.0);
        assert_eq!(dihedral_transform(&t, 0).unwrap().to_vec(), t.to_vec());
        for op in [2u8, 4, 5, 6, 7] {
            let twice = dihedral_transform(&dihedral_transform(&t, op).unwrap(), op).unwrap();
            assert_eq!(twice.to_vec(), t.to_vec(), "op {op} not an involution");
        }
        // rot90 four times is the identity.
        let mut r = t.clone();
        for _ in 0..4 {
            r = dihedral_transform(&r, 1).unwrap();
        }
        assert_eq!(r.to_vec(), t.to_vec());
        assert!(dihedral_transform(&Tensor::zeros(&[1, 2, 3]), 1).is_err());
    }

    #[test]
    fn augment_draw_is_uniform_over_the_group() {
        let mut rng = rng_from(44);
        let mut counts = [0usize; 8];
        for _ in 0..8000 {
            let op = rng.gen_range(0u8..8);
            counts[op as usize] += 1;
        }
        for (op, &c) in counts.iter().enumerate() {
            assert!((c as i64 - 1000).abs() <= 100, "op {op}: {c}");
        }
    }

    #[test]
    fn pairing_integrity_luma_correlation() {
        // p_d = 0, misalign 0: luma(EO) correlates with the despeckled
        // SAR mean over 16 speckle draws.
        let spec = SceneSpec {
            discrepancy_prob: 0.0,
            misalign_max: 0.0,
            ..Default::default()
        };
        let pair = render_scene(&spec, 99).unwrap();
        let size = spec.image_size;
        let eo = pair.eo.pixels.to_vec();
        let mut lum = vec![0f64; size * size];
        for p in 0..size * size {
            lum[p] = 0.299 * eo[p] as f64
                + 0.587 * eo[size * size + p] as f64
                + 0.114 * eo[2 * size * size + p] as f64;
        }
        let mut despeckled = vec![0f64; size * size];
        for k in 0..16 {
            let v = render_scene_speckle_variant(&spec, 99, k).unwrap();
            for (acc, &x) in despeckled.iter_mut().zip(v.sar.pixels.data().iter()) {
                *acc += x as f64 / 16.0;
            }
        }
        let n = lum.len() as f64;
        let (ml, md) = (
            lum.iter().sum::<f64>() / n,
            despeckled.iter().sum::<f64>() / n,
        );
        let (mut num, mut da, mut db) = (0f64, 0f64, 0f64);
        for i in 0..lum.len() {
            let (a, b) = (lum[i] - ml, despeckled[i] - md);
            num += a * b;
            da += a * a;
            db += b * b;
        }
        let corr = num / (da * db).sqrt();
        assert!(corr > 0.8, "pairing correlation {corr}");
    }

    #[test]
    fn full_polarization_renders_four_channels() {
        let spec = SceneSpec {
            polarization: Polarization::Full,
            ..Default::default()
        };
        let pair = render_scene(&spec, 3).unwrap();
        assert_eq!(pair.sar.pixels.shape(), &[4, 64, 64]);
    }

    #[test]
    fn write_dataset_split_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SceneSpec {
            image_size: 32,
            misalign_max: 2.0,
            ..Default::default()
        };
        let m = write_dataset(&spec, 100, dir.path()).unwrap();
        assert_eq!(m.train_entries().count(), 80);
        assert_eq!(m.test_entries().count(), 20);

        let dir2 = tempfile::tempdir().unwrap();
        let m2 = write_dataset(&spec, 100, dir2.path()).unwrap();
        for (a, b) in m.entries.iter().zip(m2.entries.iter()) {
            let fa = std::fs::read(dir.path().join(&a.eo_path)).unwrap();
            let fb = std::fs::read(dir2.path().join(&b.eo_path)).unwrap();
            assert_eq!(fa, fb, "eo bytes differ for {}", a.id);
            let sa = std::fs::read(dir.path().join(&a.sar_paths[0])).unwrap();
            let sb = std::fs::read(dir2.path().join(&b.sar_paths[0])).unwrap();
            assert_eq!(sa, sb, "sar bytes differ for {}", a.id);
        }
        // Manifest roundtrip.
        let loaded = DatasetManifest::read(&DatasetManifest::manifest_path(dir.path())).unwrap();
        assert_eq!(loaded.entries.len(), 100);
        let (sar, eo, mask) = loaded.load_pair(&loaded.entries[0]).unwrap();
        assert_eq!(sar.pixels.shape(), &[1, 32, 32]);
        assert_eq!(eo.pixels.shape(), &[3, 32, 32]);
        assert!(mask.is_some());
    }

    #[test]
    fn ingest_rejects_unpaired_filenames() {
        let dir = tempfile::tempdir().unwrap();
        let sar_dir = dir.path().join("sar");
        let eo_dir = dir.path().join("eo");
        std::fs::create_dir_all(&sar_dir).unwrap();
        std::fs::create_dir_all(&eo_dir).unwrap();
        let img1 = Tensor::full(&[1, 8, 8], 0.4);
        let img3 = Tensor::full(&[3, 8, 8], 0.6);
        image_io::write_pgm(&sar_dir.join("a.pgm"), &img1).unwrap();
        image_io::write_ppm(&eo_dir.join("b.ppm"), &img3).unwrap();
        let err = ingest_paired_dir(&sar_dir, &eo_dir, dir.path()).unwrap_err();
        assert!(matches!(err, Error::UnpairedFilename(_)), "{err}");

        image_io::write_ppm(&eo_dir.join("a.ppm"), &img3).unwrap();
        std::fs::remove_file(eo_dir.join("b.ppm")).unwrap();
        let m = ingest_paired_dir(&sar_dir, &eo_dir, dir.path()).unwrap();
        assert_eq!(m.entries.len(), 1);
        assert!(m.entries[0].mask_path.is_none());
    }
}
