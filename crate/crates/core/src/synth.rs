//! Synthetic audio-visual scenes with exact ground-truth masks.
//!
//! Each category owns a latent signature `z`. A scene places one rectangular
//! object on an `H×W` grid: object cells carry `W_v·z + noise`, background
//! cells carry noise only, and the audio vector is `W_a·z + noise`. The
//! projections `W_v`, `W_a` are drawn once per dataset seed, which gives a
//! learnable audio-visual correspondence.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Result, XplError};
use crate::kv::KvMap;
use crate::rng::stream;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Labeled,
    Unlabeled,
    Test,
    OpensetTest,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Labeled, Split::Unlabeled, Split::Test, Split::OpensetTest];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Labeled => "labeled",
            Split::Unlabeled => "unlabeled",
            Split::Test => "test",
            Split::OpensetTest => "openset_test",
        }
    }

    pub fn has_mask(self) -> bool {
        self != Split::Unlabeled
    }
}

impl std::str::FromStr for Split {
    type Err = XplError;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|sp| sp.as_str() == s)
            .ok_or_else(|| XplError::InvalidConfig(format!("unknown split {s:?}")))
    }
}

/// Binary `H×W` mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub cells: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize, cells: Vec<bool>) -> Result<Self> {
        if cells.len() != height * width {
            return Err(XplError::ShapeMismatch {
                op: "mask",
                left: vec![height, width],
                right: vec![cells.len()],
            });
        }
        Ok(Self { height, width, cells })
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.cells.iter().map(|&c| if c { 1.0 } else { 0.0 }).collect()
    }

    fn encode(&self) -> String {
        self.cells.iter().map(|&c| if c { '1' } else { '0' }).collect()
    }
}

/// One audio-visual sample.
#[derive(Debug, Clone, PartialEq)]
pub struct AVPair {
    pub sample_id: usize,
    pub category: usize,
    pub height: usize,
    pub width: usize,
    /// `(H·W) × C_v`, one row per cell.
    pub visual: Tensor,
    /// Length `C_a`.
    pub audio: Tensor,
    pub gt_mask: Option<Mask>,
    pub split: Split,
}

impl AVPair {
    pub fn cells(&self) -> usize {
        self.height * self.width
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub height: usize,
    pub width: usize,
    pub visual_channels: usize,
    pub audio_channels: usize,
    pub latent_dim: usize,
    /// Total categories, including the held-out open-set ones.
    pub n_categories: usize,
    pub n_openset_categories: usize,
    pub n_labeled: usize,
    pub n_unlabeled: usize,
    pub n_test: usize,
    pub n_openset_test: usize,
    /// Rectangle side lengths, in cells.
    pub min_side: usize,
    pub max_side: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            height: 8,
            width: 8,
            visual_channels: 16,
            audio_channels: 16,
            latent_dim: 8,
            n_categories: 10,
            n_openset_categories: 2,
            n_labeled: 17,
            n_unlabeled: 1000,
            n_test: 200,
            n_openset_test: 100,
            min_side: 2,
            max_side: 5,
            noise_std: 0.5,
            seed: 0,
        }
    }
}

impl GenConfig {
    /// The reference benchmark: 10 categories, 50 labeled / 1000 unlabeled /
    /// 200 test on an 8×8 grid. Noisier than the default so that the
    /// labeled set alone does not saturate the metrics.
    pub fn benchmark(seed: u64) -> Self {
        Self {
            n_labeled: 50,
            noise_std: 0.75,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(XplError::InvalidConfig(m.to_string()));
        if self.height == 0 || self.width == 0 {
            return bad("grid dims must be positive");
        }
        if self.visual_channels == 0 || self.audio_channels == 0 || self.latent_dim == 0 {
            return bad("channel and latent dims must be positive");
        }
        if self.min_side == 0 || self.min_side > self.max_side {
            return bad("object sides must satisfy 1 <= min_side <= max_side");
        }
        if self.max_side > self.height.min(self.width) || self.max_side * self.max_side >= self.height * self.width {
            return bad("object larger than grid (background would be empty)");
        }
        if self.n_categories < 2 {
            return bad("need at least 2 categories");
        }
        if self.n_openset_categories >= self.n_categories {
            return bad("open-set categories must leave at least one training category");
        }
        if self.n_labeled == 0 || self.n_test == 0 {
            return bad("labeled and test counts must be >= 1");
        }
        if self.n_openset_test > 0 && self.n_openset_categories == 0 {
            return bad("open-set test samples need held-out categories");
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad("noise_std must be finite and >= 0");
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::new();
        kv.set("height", self.height);
        kv.set("width", self.width);
        kv.set("visual_channels", self.visual_channels);
        kv.set("audio_channels", self.audio_channels);
        kv.set("latent_dim", self.latent_dim);
        kv.set("n_categories", self.n_categories);
        kv.set("n_openset_categories", self.n_openset_categories);
        kv.set("n_labeled", self.n_labeled);
        kv.set("n_unlabeled", self.n_unlabeled);
        kv.set("n_test", self.n_test);
        kv.set("n_openset_test", self.n_openset_test);
        kv.set("min_side", self.min_side);
        kv.set("max_side", self.max_side);
        kv.set("noise_std", self.noise_std);
        kv.set("seed", self.seed);
        kv
    }

    /// Applies every recognised key in `kv` on top of `self`.
    pub fn apply_kv(&mut self, kv: &KvMap) -> Result<()> {
        for (key, value) in kv.iter() {
            match key {
                "height" => self.height = KvMap::parse(key, value)?,
                "width" => self.width = KvMap::parse(key, value)?,
                "visual_channels" => self.visual_channels = KvMap::parse(key, value)?,
                "audio_channels" => self.audio_channels = KvMap::parse(key, value)?,
                "latent_dim" => self.latent_dim = KvMap::parse(key, value)?,
                "n_categories" => self.n_categories = KvMap::parse(key, value)?,
                "n_openset_categories" => self.n_openset_categories = KvMap::parse(key, value)?,
                "n_labeled" => self.n_labeled = KvMap::parse(key, value)?,
                "n_unlabeled" => self.n_unlabeled = KvMap::parse(key, value)?,
                "n_test" => self.n_test = KvMap::parse(key, value)?,
                "n_openset_test" => self.n_openset_test = KvMap::parse(key, value)?,
                "min_side" => self.min_side = KvMap::parse(key, value)?,
                "max_side" => self.max_side = KvMap::parse(key, value)?,
                "noise_std" => self.noise_std = KvMap::parse(key, value)?,
                "seed" => self.seed = KvMap::parse(key, value)?,
                other => {
                    return Err(XplError::InvalidConfig(format!("unknown dataset key {other:?}")))
                }
            }
        }
        Ok(())
    }
}

/// Training vs held-out category ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoryPartition {
    pub train: Vec<usize>,
    pub openset: Vec<usize>,
}

/// Deterministic split of category ids into seen and held-out sets.
pub fn split_openset(cfg: &GenConfig) -> Result<CategoryPartition> {
    if cfg.n_categories < 2 {
        return Err(XplError::InvalidConfig("need at least 2 categories".into()));
    }
    if cfg.n_openset_categories >= cfg.n_categories {
        return Err(XplError::InvalidConfig("too many held-out categories".into()));
    }
    let mut ids: Vec<usize> = (0..cfg.n_categories).collect();
    ids.shuffle(&mut stream(&[cfg.seed, 0xCA7]));
    let (train, openset) = ids.split_at(cfg.n_categories - cfg.n_openset_categories);
    let mut train = train.to_vec();
    let mut openset = openset.to_vec();
    train.sort_unstable();
    openset.sort_unstable();
    Ok(CategoryPartition { train, openset })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: GenConfig,
    pub partition: CategoryPartition,
    pub pairs: Vec<AVPair>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> Vec<&AVPair> {
        self.pairs.iter().filter(|p| p.split == split).collect()
    }

    pub fn count(&self, split: Split) -> usize {
        self.pairs.iter().filter(|p| p.split == split).count()
    }

    pub fn get(&self, sample_id: usize) -> Option<&AVPair> {
        self.pairs.get(sample_id).filter(|p| p.sample_id == sample_id)
    }

    pub fn visual_channels(&self) -> usize {
        self.config.visual_channels
    }

    pub fn audio_channels(&self) -> usize {
        self.config.audio_channels
    }
}

fn gaussian_matrix(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Vec<f64> {
    (0..rows * cols)
        .map(|_| {
            let x: f64 = StandardNormal.sample(rng);
            scale * x
        })
        .collect()
}

fn project(mat: &[f64], rows: usize, cols: usize, z: &[f64]) -> Vec<f64> {
    (0..rows)
        .map(|r| mat[r * cols..(r + 1) * cols].iter().zip(z).map(|(a, b)| a * b).sum())
        .collect()
}

/// Noise-free features per category: `W_v·z` and `W_a·z`.
#[derive(Debug, Clone, PartialEq)]
pub struct Prototypes {
    pub visual: Vec<Vec<f64>>,
    pub audio: Vec<Vec<f64>>,
}

fn draw_prototypes(rng: &mut ChaCha8Rng, cfg: &GenConfig) -> Prototypes {
    let (cv, ca, dl) = (cfg.visual_channels, cfg.audio_channels, cfg.latent_dim);
    // Unit-variance signal per channel before noise.
    let proj_scale = 1.0 / (dl as f64).sqrt();
    let w_visual = gaussian_matrix(rng, cv, dl, proj_scale);
    let w_audio = gaussian_matrix(rng, ca, dl, proj_scale);
    let signatures: Vec<Vec<f64>> = (0..cfg.n_categories)
        .map(|_| gaussian_matrix(rng, 1, dl, 1.0))
        .collect();
    Prototypes {
        visual: signatures.iter().map(|z| project(&w_visual, cv, dl, z)).collect(),
        audio: signatures.iter().map(|z| project(&w_audio, ca, dl, z)).collect(),
    }
}

/// The category prototypes that [`generate_dataset`] uses for `cfg`.
pub fn prototypes(cfg: &GenConfig) -> Result<Prototypes> {
    cfg.validate()?;
    Ok(draw_prototypes(&mut stream(&[cfg.seed, 0xDA7A]), cfg))
}

/// Generates every split. Pure function of `cfg`.
pub fn generate_dataset(cfg: &GenConfig) -> Result<Dataset> {
    cfg.validate()?;
    let partition = split_openset(cfg)?;
    let cv = cfg.visual_channels;
    let mut rng = stream(&[cfg.seed, 0xDA7A]);
    let Prototypes {
        visual: visual_proto,
        audio: audio_proto,
    } = draw_prototypes(&mut rng, cfg);

    let plan = [
        (Split::Labeled, cfg.n_labeled, &partition.train),
        (Split::Unlabeled, cfg.n_unlabeled, &partition.train),
        (Split::Test, cfg.n_test, &partition.train),
        (Split::OpensetTest, cfg.n_openset_test, &partition.openset),
    ];
    let (h, w) = (cfg.height, cfg.width);
    let mut pairs = Vec::new();
    for (split, count, cats) in plan {
        for _ in 0..count {
            let category = cats[rng.gen_range(0..cats.len())];
            let rh = rng.gen_range(cfg.min_side..=cfg.max_side);
            let rw = rng.gen_range(cfg.min_side..=cfg.max_side);
            let top = rng.gen_range(0..=h - rh);
            let left = rng.gen_range(0..=w - rw);
            let cells: Vec<bool> = (0..h * w)
                .map(|i| {
                    let (r, c) = (i / w, i % w);
                    (top..top + rh).contains(&r) && (left..left + rw).contains(&c)
                })
                .collect();

            let mut visual = Vec::with_capacity(h * w * cv);
            for &on in &cells {
                for &proto in &visual_proto[category] {
                    let signal = if on { proto } else { 0.0 };
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    visual.push(signal + cfg.noise_std * noise);
                }
            }
            let audio: Vec<f64> = audio_proto[category]
                .iter()
                .map(|&s| {
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    s + cfg.noise_std * noise
                })
                .collect();

            let mask = Mask::new(h, w, cells)?;
            let sample_id = pairs.len();
            pairs.push(AVPair {
                sample_id,
                category,
                height: h,
                width: w,
                visual: Tensor::matrix(h * w, cv, visual)?,
                audio: Tensor::vector(audio)?,
                gt_mask: split.has_mask().then_some(mask),
                split,
            });
        }
    }
    Ok(Dataset {
        config: cfg.clone(),
        partition,
        pairs,
    })
}

/// Per-channel affine jitter drawn for one augmented view.
#[derive(Debug, Clone, PartialEq)]
pub struct Jitter {
    pub scales: Vec<f64>,
    pub shifts: Vec<f64>,
}

pub const JITTER_SCALE: (f64, f64) = (0.9, 1.1);
pub const JITTER_SHIFT: (f64, f64) = (-0.05, 0.05);
pub const AUGMENT_NOISE_STD: f64 = 0.02;

/// Feature-space augmentation of the visual grid: per-channel scale and
/// shift plus small Gaussian noise. Audio and mask pass through. The view is a
/// pure function of `(sample_id, pipeline_seed, step)`.
pub fn augment(pair: &AVPair, pipeline_seed: u64, step: u64) -> Result<AVPair> {
    let (jitter, mut rng) = draw_jitter(pair.sample_id as u64, pipeline_seed, step, pair.visual.shape()[1]);
    let channels = jitter.scales.len();
    let values: Vec<f64> = pair
        .visual
        .values()
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let ch = i % channels;
            let noise: f64 = StandardNormal.sample(&mut rng);
            jitter.scales[ch] * x + jitter.shifts[ch] + AUGMENT_NOISE_STD * noise
        })
        .collect();
    Ok(AVPair {
        visual: Tensor::new(pair.visual.shape().to_vec(), values)?,
        ..pair.clone()
    })
}

/// The jitter for one view, plus the generator positioned for the noise draws.
pub fn draw_jitter(
    sample_id: u64,
    pipeline_seed: u64,
    step: u64,
    channels: usize,
) -> (Jitter, rand_chacha::ChaCha8Rng) {
    let mut rng = stream(&[0xA06, sample_id, pipeline_seed, step]);
    let scales = (0..channels)
        .map(|_| rng.gen_range(JITTER_SCALE.0..=JITTER_SCALE.1))
        .collect();
    let shifts = (0..channels)
        .map(|_| rng.gen_range(JITTER_SHIFT.0..=JITTER_SHIFT.1))
        .collect();
    (Jitter { scales, shifts }, rng)
}

// ---------------------------------------------------------------------------
// Text format
//
//   xpl-dataset v1
//   config <key=value ...>             GenConfig echo
//   categories train=<ids> openset=<ids>
//   sample <id> <split> <category> <H> <W> <C_v> <C_a>
//   visual <H·W·C_v floats>
//   audio <C_a floats>
//   mask <H·W chars of 0/1, or ->
//
// Floats use Rust's shortest round-trip formatting, so parse(write(d)) == d.
// ---------------------------------------------------------------------------

const DATASET_MAGIC: &str = "xpl-dataset v1";

fn join_floats(out: &mut String, values: &[f64]) {
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        write!(out, "{v}").expect("write to String");
    }
}

fn join_ids(ids: &[usize]) -> String {
    ids.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(",")
}

pub fn write_dataset(ds: &Dataset) -> String {
    let mut out = String::new();
    out.push_str(DATASET_MAGIC);
    out.push('\n');
    out.push_str("config ");
    out.push_str(&ds.config.to_kv().to_inline());
    out.push('\n');
    writeln!(
        out,
        "categories train={} openset={}",
        join_ids(&ds.partition.train),
        join_ids(&ds.partition.openset)
    )
    .expect("write to String");
    for p in &ds.pairs {
        writeln!(
            out,
            "sample {} {} {} {} {} {} {}",
            p.sample_id,
            p.split.as_str(),
            p.category,
            p.height,
            p.width,
            p.visual.shape()[1],
            p.audio.numel()
        )
        .expect("write to String");
        out.push_str("visual ");
        join_floats(&mut out, p.visual.values());
        out.push_str("\naudio ");
        join_floats(&mut out, p.audio.values());
        out.push_str("\nmask ");
        match &p.gt_mask {
            Some(m) => out.push_str(&m.encode()),
            None => out.push('-'),
        }
        out.push('\n');
    }
    out
}

fn parse_floats(line_no: usize, s: &str) -> Result<Vec<f64>> {
    s.split_ascii_whitespace()
        .map(|t| t.parse::<f64>().map_err(|e| XplError::parse(line_no, format!("{t:?}: {e}"))))
        .collect()
}

fn parse_ids(line_no: usize, s: &str) -> Result<Vec<usize>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|t| t.parse::<usize>().map_err(|e| XplError::parse(line_no, format!("{t:?}: {e}"))))
        .collect()
}

fn expect_prefix<'a>(line_no: usize, line: Option<&'a str>, prefix: &str) -> Result<&'a str> {
    let line = line.ok_or_else(|| XplError::parse(line_no, format!("expected {prefix:?}, got EOF")))?;
    line.strip_prefix(prefix)
        .ok_or_else(|| XplError::parse(line_no, format!("expected {prefix:?}")))
}

pub fn read_dataset(text: &str) -> Result<Dataset> {
    let mut lines = text.lines();
    let mut n = 1;
    if lines.next() != Some(DATASET_MAGIC) {
        return Err(XplError::parse(n, "missing dataset header"));
    }
    n += 1;
    let cfg_line = expect_prefix(n, lines.next(), "config ")?;
    let mut config = GenConfig::default();
    config.apply_kv(&KvMap::from_inline(cfg_line).map_err(|e| XplError::parse(n, e.to_string()))?)?;
    n += 1;
    let cat_line = expect_prefix(n, lines.next(), "categories ")?;
    let (train, openset) = cat_line
        .split_once(' ')
        .and_then(|(a, b)| Some((a.strip_prefix("train=")?, b.strip_prefix("openset=")?)))
        .ok_or_else(|| XplError::parse(n, "bad categories line"))?;
    let partition = CategoryPartition {
        train: parse_ids(n, train)?,
        openset: parse_ids(n, openset)?,
    };

    let mut pairs = Vec::new();
    while let Some(line) = lines.next() {
        n += 1;
        let head = line
            .strip_prefix("sample ")
            .ok_or_else(|| XplError::parse(n, "expected sample record"))?;
        let f: Vec<&str> = head.split(' ').collect();
        if f.len() != 7 {
            return Err(XplError::parse(n, "sample record needs 7 fields"));
        }
        let num = |i: usize| f[i].parse::<usize>().map_err(|e| XplError::parse(n, e.to_string()));
        let (sample_id, split, category) = (num(0)?, f[1].parse::<Split>()?, num(2)?);
        let (h, w, cv, ca) = (num(3)?, num(4)?, num(5)?, num(6)?);
        n += 1;
        let visual = parse_floats(n, expect_prefix(n, lines.next(), "visual ")?)?;
        n += 1;
        let audio = parse_floats(n, expect_prefix(n, lines.next(), "audio ")?)?;
        n += 1;
        let mask_s = expect_prefix(n, lines.next(), "mask ")?;
        let gt_mask = if mask_s == "-" {
            None
        } else {
            let cells = mask_s
                .chars()
                .map(|c| match c {
                    '0' => Ok(false),
                    '1' => Ok(true),
                    _ => Err(XplError::parse(n, "mask chars must be 0/1")),
                })
                .collect::<Result<Vec<bool>>>()?;
            Some(Mask::new(h, w, cells)?)
        };
        if gt_mask.is_some() != split.has_mask() {
            return Err(XplError::parse(n, "mask presence does not match split"));
        }
        pairs.push(AVPair {
            sample_id,
            category,
            height: h,
            width: w,
            visual: Tensor::matrix(h * w, cv, visual)?,
            audio: Tensor::vector(audio)?,
            gt_mask,
            split,
        });
        if pairs.last().map(|p| p.audio.numel()) != Some(ca) {
            return Err(XplError::parse(n, "audio length disagrees with record"));
        }
    }
    if pairs.iter().enumerate().any(|(i, p)| p.sample_id != i) {
        return Err(XplError::parse(n, "sample ids must be 0..N in order"));
    }
    Ok(Dataset {
        config,
        partition,
        pairs,
    })
}
