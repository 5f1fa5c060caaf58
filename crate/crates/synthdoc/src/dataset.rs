//! Corpus assembly: seeding, the 80/15/5 split, PNG output, the manifest and
//! the corpus hash.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use sigseg_core::Tensor;

use crate::background::{gen_background, Background, Style};
use crate::error::{Result, SynthError};
use crate::raster::{Gray, Rgb};
use crate::sample::{compose, distort, DistortParams, DistortRanges, SampleMeta, SampleRecord};
use crate::seed::{self, derive};
use crate::signature::{gen_signature, BBox, MAX_MASK_FRACTION};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
const MAX_SAMPLE_ATTEMPTS: u64 = 32;

/// Ink colors: black, blue, dark blue, violet, red, green.
const PENS: [[u8; 3]; 6] = [
    [20, 20, 28],
    [30, 50, 170],
    [20, 30, 90],
    [80, 40, 140],
    [160, 30, 40],
    [30, 110, 60],
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(SynthError::Config(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitCounts {
    /// 80% train and 15% validation (both rounded down); the rest is test.
    pub fn for_total(n: usize) -> Self {
        let train = n * 80 / 100;
        let val = n * 15 / 100;
        SplitCounts {
            train,
            val,
            test: n - train - val,
        }
    }

    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }

    /// Samples are assigned to splits by index: train first, then val, then test.
    pub fn split_of(&self, index: usize) -> Split {
        if index < self.train {
            Split::Train
        } else if index < self.train + self.val {
            Split::Val
        } else {
            Split::Test
        }
    }

    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub global_seed: u64,
    pub count: usize,
    pub size: usize,
    pub background_pool: usize,
    pub distort_probability: f64,
    pub distort_ranges: DistortRanges,
}

impl GenConfig {
    pub fn new(global_seed: u64, count: usize, size: usize) -> Self {
        GenConfig {
            global_seed,
            count,
            size,
            background_pool: 200,
            distort_probability: 0.5,
            distort_ranges: DistortRanges::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(SynthError::Config("sample count must be positive".into()));
        }
        if self.size < crate::signature::MIN_CANVAS {
            return Err(SynthError::Config(format!(
                "image size {} is below the {}px minimum",
                self.size,
                crate::signature::MIN_CANVAS
            )));
        }
        if self.background_pool == 0 {
            return Err(SynthError::Config("background pool must be non-empty".into()));
        }
        if !(0.0..=1.0).contains(&self.distort_probability) {
            return Err(SynthError::Config("distort probability must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub index: usize,
    pub id: String,
    pub split: Split,
    pub image: String,
    pub mask: String,
    pub meta: SampleMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub image_size: usize,
    pub global_seed: u64,
    pub counts: SplitCounts,
    pub background_pool: usize,
    pub distort_probability: f64,
    pub distort_ranges: DistortRanges,
    pub samples: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn entries(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.samples.iter().filter(move |e| e.split == split)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Seed of sample `index`; distinct indices give distinct seeds.
pub fn sample_seed(global_seed: u64, index: usize) -> u64 {
    derive(global_seed, index as u64)
}

pub fn sample_id(index: usize) -> String {
    format!("{index:06}")
}

/// Index-level plan of a corpus: id, split and seed of every sample, without
/// rendering anything.
pub fn plan(global_seed: u64, count: usize) -> Vec<(String, Split, u64)> {
    let counts = SplitCounts::for_total(count);
    (0..count)
        .map(|i| (sample_id(i), counts.split_of(i), sample_seed(global_seed, i)))
        .collect()
}

/// Background `id` of the shared pool; styles cycle through [`Style::ALL`].
pub fn pool_background(global_seed: u64, id: usize, size: usize) -> Background {
    let style = Style::ALL[id % Style::ALL.len()];
    let s = derive(derive(global_seed, seed::STREAM_BACKGROUND_POOL), id as u64);
    gen_background(s, size, size, style)
}

fn pen_color(rng: &mut rand_chacha::ChaCha8Rng) -> [u8; 3] {
    let base = PENS[rng.gen_range(0..PENS.len())];
    base.map(|c| (c as i32 + rng.gen_range(-12..=12)).clamp(0, 255) as u8)
}

/// Renders sample `index`. A draft whose distorted mask is empty or above
/// the coverage limit is discarded and redrawn from the next sub-seed.
pub fn generate_sample(cfg: &GenConfig, index: usize, pool: &[Background]) -> Result<SampleRecord> {
    let size = cfg.size;
    let sample = sample_seed(cfg.global_seed, index);
    let limit = (MAX_MASK_FRACTION * (size * size) as f64) as usize;
    for attempt in 0..MAX_SAMPLE_ATTEMPTS {
        let sub = derive(sample, attempt);
        let sig_seed = derive(sub, seed::STREAM_SIGNATURE);
        let sig = gen_signature(sig_seed, size, size)?;
        let mut rng = seed::rng(derive(sub, seed::STREAM_LAYOUT));
        let background_id = rng.gen_range(0..pool.len());
        let bg = &pool[background_id];
        let pen = pen_color(&mut rng);
        let penf = pen.map(|c| c as f32 / 255.0);
        let mut image = compose(&sig.coverage, &bg.image, penf)?;
        let mut mask = sig.mask.clone();
        let mut distortion = None;
        if rng.gen_bool(cfg.distort_probability) {
            let mut drng = seed::rng(derive(sub, seed::STREAM_DISTORT));
            let params = DistortParams::sample(&mut drng, &cfg.distort_ranges, size, size);
            (image, mask) = distort(&image, &mask, &params)?;
            distortion = Some(params);
        }
        let set = mask.count_set();
        if set == 0 || set > limit {
            continue;
        }
        let bbox = BBox::of(&mask, |v| v > 0.5).expect("mask is nonempty");
        return Ok(SampleRecord {
            image,
            mask,
            meta: SampleMeta {
                seed: sample,
                signature_seed: sig_seed,
                attempt,
                background_id,
                background_style: bg.style,
                pen_color: pen,
                stroke_width: sig.stroke_width,
                strokes: sig.strokes,
                distortion,
                bbox,
            },
        });
    }
    Err(SynthError::Config(format!(
        "sample {index}: no valid draft in {MAX_SAMPLE_ATTEMPTS} attempts"
    )))
}

/// Worker count from `SIGSEG_THREADS`, default 1.
pub fn thread_count() -> usize {
    std::env::var("SIGSEG_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
}

#[derive(Debug, Clone)]
pub struct BuildOutput {
    pub manifest: Manifest,
    /// Hex SHA-256 over the manifest and every PNG, see [`corpus_hash`].
    pub corpus_hash: String,
}

/// Generates the full corpus into `out_dir` with [`thread_count`] workers.
pub fn build_dataset(cfg: &GenConfig, out_dir: &Path) -> Result<BuildOutput> {
    build_dataset_with_threads(cfg, out_dir, thread_count())
}

/// Generates the full corpus into `out_dir`. The output does not depend on
/// `threads`.
pub fn build_dataset_with_threads(cfg: &GenConfig, out_dir: &Path, threads: usize) -> Result<BuildOutput> {
    cfg.validate()?;
    let counts = SplitCounts::for_total(cfg.count);
    for split in Split::ALL {
        fs::create_dir_all(out_dir.join(split.as_str()))?;
    }
    let pool: Vec<Background> = (0..cfg.background_pool)
        .map(|id| pool_background(cfg.global_seed, id, cfg.size))
        .collect();

    let threads = threads.clamp(1, cfg.count);
    let render = |index: usize| -> Result<ManifestEntry> {
        let rec = generate_sample(cfg, index, &pool)?;
        let split = counts.split_of(index);
        let id = sample_id(index);
        let image = format!("{split}/{id}_image.png");
        let mask = format!("{split}/{id}_mask.png");
        rec.image.save_png(&out_dir.join(&image))?;
        rec.mask.save_png(&out_dir.join(&mask))?;
        Ok(ManifestEntry {
            index,
            id,
            split,
            image,
            mask,
            meta: rec.meta,
        })
    };
    let mut slots: Vec<Option<Result<ManifestEntry>>> = (0..cfg.count).map(|_| None).collect();
    if threads <= 1 {
        for (i, slot) in slots.iter_mut().enumerate() {
            *slot = Some(render(i));
        }
    } else {
        let results: Vec<Vec<(usize, Result<ManifestEntry>)>> = std::thread::scope(|s| {
            let handles: Vec<_> = (0..threads)
                .map(|t| {
                    let render = &render;
                    s.spawn(move || {
                        (t..cfg.count)
                            .step_by(threads)
                            .map(|i| (i, render(i)))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
        });
        for (i, r) in results.into_iter().flatten() {
            slots[i] = Some(r);
        }
    }
    let samples = slots
        .into_iter()
        .map(|s| s.expect("every index rendered"))
        .collect::<Result<Vec<_>>>()?;

    let manifest = Manifest {
        version: MANIFEST_VERSION,
        image_size: cfg.size,
        global_seed: cfg.global_seed,
        counts,
        background_pool: cfg.background_pool,
        distort_probability: cfg.distort_probability,
        distort_ranges: cfg.distort_ranges,
        samples,
    };
    fs::write(out_dir.join(MANIFEST_FILE), manifest.to_json()?)?;
    let corpus_hash = corpus_hash(out_dir)?;
    Ok(BuildOutput { manifest, corpus_hash })
}

/// SHA-256 over `manifest.json` followed by each sample's image and mask
/// bytes in manifest order, as lowercase hex.
pub fn corpus_hash(dir: &Path) -> Result<String> {
    let manifest_bytes = fs::read(dir.join(MANIFEST_FILE))?;
    let manifest: Manifest = serde_json::from_slice(&manifest_bytes)?;
    let mut h = Sha256::new();
    h.update(&manifest_bytes);
    for e in &manifest.samples {
        h.update(fs::read(dir.join(&e.image))?);
        h.update(fs::read(dir.join(&e.mask))?);
    }
    Ok(hex(&h.finalize()))
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// One decoded sample as network-ready tensors.
#[derive(Debug, Clone)]
pub struct LoadedSample {
    pub id: String,
    /// `1×3×H×W` in `[0, 1]`.
    pub image: Tensor,
    /// `1×1×H×W` in `{0, 1}`.
    pub mask: Tensor,
}

/// A generated corpus on disk.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub root: PathBuf,
    pub manifest: Manifest,
}

impl Corpus {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        let path = root.join(MANIFEST_FILE);
        let bytes = fs::read(&path).map_err(|e| {
            SynthError::Manifest(format!("cannot read {}: {e}", path.display()))
        })?;
        let manifest: Manifest = serde_json::from_slice(&bytes)?;
        if manifest.version != MANIFEST_VERSION {
            return Err(SynthError::Manifest(format!(
                "manifest version {} is not supported",
                manifest.version
            )));
        }
        if manifest.samples.len() != manifest.counts.total() {
            return Err(SynthError::Manifest(format!(
                "manifest lists {} samples but its counts add up to {}",
                manifest.samples.len(),
                manifest.counts.total()
            )));
        }
        Ok(Corpus { root, manifest })
    }

    pub fn load(&self, entry: &ManifestEntry) -> Result<LoadedSample> {
        let image = image::open(self.root.join(&entry.image))?.to_rgb8();
        let mask = image::open(self.root.join(&entry.mask))?.to_luma8();
        let size = self.manifest.image_size as u32;
        if image.dimensions() != (size, size) || mask.dimensions() != (size, size) {
            return Err(SynthError::Manifest(format!(
                "sample {} is not {size}x{size}",
                entry.id
            )));
        }
        let mut m = Gray::from_image(&mask);
        for v in m.data.iter_mut() {
            *v = if *v > 0.5 { 1.0 } else { 0.0 };
        }
        Ok(LoadedSample {
            id: entry.id.clone(),
            image: Rgb::from_image(&image).to_tensor(),
            mask: m.to_tensor(),
        })
    }

    pub fn load_split(&self, split: Split) -> Result<Vec<LoadedSample>> {
        self.manifest.entries(split).map(|e| self.load(e)).collect()
    }
}
