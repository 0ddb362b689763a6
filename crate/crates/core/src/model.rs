//! Audio-visual encoder pairs and the per-cell cosine prediction map.
//!
//! The visual encoder is an MLP applied to every grid cell with shared
//! weights; the audio encoder is an MLP on the audio vector. A model's
//! prediction map is the cosine similarity between the audio embedding and
//! each cell embedding.

use std::fmt::{self, Write as _};

use rand::Rng;

use crate::autodiff::{Gradients, Graph, Var};
use crate::error::{Result, XplError};
use crate::rng::stream;
use crate::synth::AVPair;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelTag {
    A,
    B,
}

impl ModelTag {
    pub fn other(self) -> ModelTag {
        match self {
            ModelTag::A => ModelTag::B,
            ModelTag::B => ModelTag::A,
        }
    }

    pub fn index(self) -> usize {
        match self {
            ModelTag::A => 0,
            ModelTag::B => 1,
        }
    }
}

impl fmt::Display for ModelTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelTag::A => "A",
            ModelTag::B => "B",
        })
    }
}

impl std::str::FromStr for ModelTag {
    type Err = XplError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" => Ok(ModelTag::A),
            "B" => Ok(ModelTag::B),
            _ => Err(XplError::InvalidConfig(format!("unknown model tag {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackboneSpec {
    pub hidden_widths: Vec<usize>,
    pub embed_dim: usize,
    pub init_seed: u64,
}

impl BackboneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.hidden_widths.contains(&0) {
            return Err(XplError::InvalidConfig(format!("zero-width layer in {self:?}")));
        }
        Ok(())
    }

    /// Two specs count as distinct backbones when widths and seed both differ.
    pub fn is_distinct_from(&self, other: &BackboneSpec) -> bool {
        self.hidden_widths != other.hidden_widths && self.init_seed != other.init_seed
    }

    pub fn widths_string(&self) -> String {
        self.hidden_widths
            .iter()
            .map(|w| w.to_string())
            .collect::<Vec<_>>()
            .join(",")
    }

    pub fn parse_widths(s: &str) -> Result<Vec<usize>> {
        if s.is_empty() {
            return Ok(Vec::new());
        }
        s.split(',')
            .map(|w| {
                w.trim()
                    .parse::<usize>()
                    .map_err(|e| XplError::InvalidConfig(format!("width {w:?}: {e}")))
            })
            .collect()
    }
}

/// Weight `in×out` and bias `out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    /// Xavier-uniform weights in `±sqrt(6/(fan_in+fan_out))`, bias uniform in
    /// `±1/sqrt(fan_in)`. A nonzero bias keeps a cell whose hidden units are
    /// all inactive from mapping to the zero embedding.
    fn init(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Self {
        let s = xavier_bound(fan_in, fan_out);
        let w = (0..fan_in * fan_out).map(|_| rng.gen_range(-s..=s)).collect();
        let sb = bias_bound(fan_in);
        let b = (0..fan_out).map(|_| rng.gen_range(-sb..=sb)).collect();
        Self {
            weight: Tensor::from_parts(vec![fan_in, fan_out], w),
            bias: Tensor::from_parts(vec![fan_out], b),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn fan_out(&self) -> usize {
        self.weight.shape()[1]
    }
}

pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

pub fn bias_bound(fan_in: usize) -> f64 {
    1.0 / (fan_in as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub visual: Vec<Linear>,
    pub audio: Vec<Linear>,
}

fn mlp(rng: &mut impl Rng, input: usize, spec: &BackboneSpec) -> Vec<Linear> {
    let mut dims = vec![input];
    dims.extend(&spec.hidden_widths);
    dims.push(spec.embed_dim);
    dims.windows(2).map(|w| Linear::init(rng, w[0], w[1])).collect()
}

impl EncoderParams {
    /// Deterministic in `spec.init_seed`.
    pub fn init(spec: &BackboneSpec, visual_in: usize, audio_in: usize) -> Result<Self> {
        spec.validate()?;
        if visual_in == 0 || audio_in == 0 {
            return Err(XplError::InvalidConfig("zero input width".into()));
        }
        let mut rng = stream(&[0x1417, spec.init_seed]);
        let visual = mlp(&mut rng, visual_in, spec);
        let audio = mlp(&mut rng, audio_in, spec);
        Ok(Self { visual, audio })
    }

    pub fn visual_in(&self) -> usize {
        self.visual[0].fan_in()
    }

    pub fn audio_in(&self) -> usize {
        self.audio[0].fan_in()
    }

    pub fn embed_dim(&self) -> usize {
        self.visual.last().map(Linear::fan_out).unwrap_or(0)
    }

    /// Every tensor in a fixed order: visual layers then audio layers,
    /// weight before bias.
    pub fn tensors(&self) -> Vec<&Tensor> {
        self.visual
            .iter()
            .chain(&self.audio)
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    pub fn names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (branch, layers) in [("visual", &self.visual), ("audio", &self.audio)] {
            for i in 0..layers.len() {
                names.push(format!("{branch}.{i}.weight"));
                names.push(format!("{branch}.{i}.bias"));
            }
        }
        names
    }

    /// Replaces every tensor, in [`EncoderParams::tensors`] order.
    pub fn set_tensors(&mut self, tensors: Vec<Tensor>) -> Result<()> {
        let expected = self.tensors().len();
        if tensors.len() != expected {
            return Err(XplError::domain(
                "set_tensors",
                format!("expected {expected} tensors, got {}", tensors.len()),
            ));
        }
        let mut it = tensors.into_iter();
        for layer in self.visual.iter_mut().chain(self.audio.iter_mut()) {
            let (w, b) = (it.next().expect("counted"), it.next().expect("counted"));
            layer.weight.same_shape(&w, "set_tensors")?;
            layer.bias.same_shape(&b, "set_tensors")?;
            layer.weight = w;
            layer.bias = b;
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.numel()).sum()
    }

    pub fn flatten(&self) -> Tensor {
        let v: Vec<f64> = self.tensors().iter().flat_map(|t| t.values().iter().copied()).collect();
        Tensor::from_parts(vec![v.len()], v)
    }

    /// Inverse of [`EncoderParams::flatten`], using `self` for the shapes.
    pub fn unflatten(&self, flat: &Tensor) -> Result<Self> {
        if flat.numel() != self.num_params() {
            return Err(XplError::domain("unflatten", "length mismatch"));
        }
        let mut offset = 0;
        let mut tensors = Vec::new();
        for t in self.tensors() {
            let n = t.numel();
            tensors.push(Tensor::new(t.shape().to_vec(), flat.values()[offset..offset + n].to_vec())?);
            offset += n;
        }
        let mut out = self.clone();
        out.set_tensors(tensors)?;
        Ok(out)
    }

    /// Euclidean distance between two parameter sets of identical layout.
    pub fn distance(&self, other: &EncoderParams) -> Option<f64> {
        let (a, b) = (self.flatten(), other.flatten());
        (a.numel() == b.numel()).then(|| {
            a.values()
                .iter()
                .zip(b.values())
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt()
        })
    }

    /// Registers the parameters on a graph. With `trainable = false` they are
    /// constants and no gradient is tracked.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundParams {
        let mut leaf = |t: &Tensor| {
            if trainable {
                g.param(t.clone())
            } else {
                g.constant(t.clone())
            }
        };
        let visual = self.visual.iter().map(|l| (leaf(&l.weight), leaf(&l.bias))).collect();
        let audio = self.audio.iter().map(|l| (leaf(&l.weight), leaf(&l.bias))).collect();
        BoundParams { visual, audio }
    }
}

/// Graph handles for an [`EncoderParams`] set.
#[derive(Debug, Clone)]
pub struct BoundParams {
    visual: Vec<(Var, Var)>,
    audio: Vec<(Var, Var)>,
}

impl BoundParams {
    pub fn vars(&self) -> Vec<Var> {
        self.visual
            .iter()
            .chain(&self.audio)
            .flat_map(|&(w, b)| [w, b])
            .collect()
    }

    /// Gradients in [`EncoderParams::tensors`] order; zeros where the root
    /// does not depend on a parameter.
    pub fn collect_grads(&self, grads: &Gradients, params: &EncoderParams) -> Vec<Tensor> {
        self.vars()
            .into_iter()
            .zip(params.tensors())
            .map(|(v, t)| grads.get_or_zeros(v, t))
            .collect()
    }
}

fn run_mlp(g: &mut Graph, layers: &[(Var, Var)], mut x: Var) -> Result<Var> {
    for (i, &(w, b)) in layers.iter().enumerate() {
        x = g.matmul(x, w)?;
        x = g.add_bias(x, b)?;
        if i + 1 < layers.len() {
            x = g.relu(x);
        }
    }
    Ok(x)
}

/// Per-cell visual embeddings, `(H·W) × d`.
pub fn encode_visual(g: &mut Graph, p: &BoundParams, grid: Var) -> Result<Var> {
    run_mlp(g, &p.visual, grid)
}

/// Audio embedding, length `d`.
pub fn encode_audio(g: &mut Graph, p: &BoundParams, audio: Var) -> Result<Var> {
    let n = g.value(audio).numel();
    let row = g.reshape(audio, vec![1, n])?;
    let emb = run_mlp(g, &p.audio, row)?;
    let d = g.value(emb).numel();
    g.reshape(emb, vec![d])
}

/// Graph handles produced by one forward pass over a sample.
#[derive(Debug, Clone, Copy)]
pub struct Forward {
    /// Length `H·W` cosine map.
    pub map: Var,
    /// `(H·W) × d`.
    pub cells: Var,
    /// Length `d`.
    pub audio: Var,
}

/// Forward pass for one pair on an existing graph.
pub fn forward_pair(g: &mut Graph, p: &BoundParams, pair: &AVPair) -> Result<Forward> {
    let grid = g.constant(pair.visual.clone());
    let audio_in = g.constant(pair.audio.clone());
    let cells = encode_visual(g, p, grid)?;
    let audio = encode_audio(g, p, audio_in)?;
    let map = g.cosine_rows(cells, audio)?;
    Ok(Forward { map, cells, audio })
}

/// An `H×W` cosine-similarity map for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
    pub model_tag: ModelTag,
    pub sample_id: usize,
}

impl PredictionMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>, model_tag: ModelTag, sample_id: usize) -> Result<Self> {
        if values.len() != height * width {
            return Err(XplError::ShapeMismatch {
                op: "prediction_map",
                left: vec![height, width],
                right: vec![values.len()],
            });
        }
        if let Some(v) = values.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(XplError::domain("prediction_map", format!("value {v} outside [-1, 1]")));
        }
        Ok(Self {
            height,
            width,
            values,
            model_tag,
            sample_id,
        })
    }
}

/// A tagged model: backbone description plus its current parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub tag: ModelTag,
    pub spec: BackboneSpec,
    pub params: EncoderParams,
}

impl Model {
    pub fn new(tag: ModelTag, spec: BackboneSpec, visual_in: usize, audio_in: usize) -> Result<Self> {
        let params = EncoderParams::init(&spec, visual_in, audio_in)?;
        Ok(Self { tag, spec, params })
    }

    /// Inference-only map (no gradient tracking).
    pub fn prediction_map(&self, pair: &AVPair) -> Result<PredictionMap> {
        prediction_map(&self.params, self.tag, pair)
    }
}

pub fn prediction_map(params: &EncoderParams, tag: ModelTag, pair: &AVPair) -> Result<PredictionMap> {
    let mut g = Graph::new();
    let bound = params.bind(&mut g, false);
    let fwd = forward_pair(&mut g, &bound, pair)?;
    PredictionMap::new(
        pair.height,
        pair.width,
        g.value(fwd.map).values().to_vec(),
        tag,
        pair.sample_id,
    )
}

// ---------------------------------------------------------------------------
// Checkpoint format
//
//   xpl-checkpoint v1
//   model <tag> hidden=<w,w,..> embed=<d> seed=<s>
//   tensor <name> <rows> <cols|-> <values...>       (one line per tensor)
//   end
//
// Repeated once per model. Shortest round-trip float formatting.
// ---------------------------------------------------------------------------

const CKPT_MAGIC: &str = "xpl-checkpoint v1";

pub fn write_checkpoint(models: &[&Model]) -> String {
    let mut out = String::from(CKPT_MAGIC);
    out.push('\n');
    for m in models {
        writeln!(
            out,
            "model {} hidden={} embed={} seed={}",
            m.tag,
            m.spec.widths_string(),
            m.spec.embed_dim,
            m.spec.init_seed
        )
        .expect("write to String");
        for (name, t) in m.params.names().iter().zip(m.params.tensors()) {
            let dims = match t.shape() {
                [r, c] => format!("{r} {c}"),
                [n] => format!("{n} -"),
                _ => unreachable!("parameters are 1-D or 2-D"),
            };
            write!(out, "tensor {name} {dims}").expect("write to String");
            for v in t.values() {
                write!(out, " {v}").expect("write to String");
            }
            out.push('\n');
        }
        out.push_str("end\n");
    }
    out
}

pub fn read_checkpoint(text: &str) -> Result<Vec<Model>> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, CKPT_MAGIC)) => {}
        _ => return Err(XplError::parse(1, "missing checkpoint header")),
    }
    let mut models = Vec::new();
    while let Some((n, line)) = lines.next() {
        let head = line
            .strip_prefix("model ")
            .ok_or_else(|| XplError::parse(n, "expected model line"))?;
        let f: Vec<&str> = head.split(' ').collect();
        let field = |i: usize, key: &str| -> Result<&str> {
            f.get(i)
                .and_then(|s| s.strip_prefix(key))
                .ok_or_else(|| XplError::parse(n, format!("missing {key}")))
        };
        let tag: ModelTag = f.first().copied().unwrap_or("").parse()?;
        let spec = BackboneSpec {
            hidden_widths: BackboneSpec::parse_widths(field(1, "hidden=")?)?,
            embed_dim: field(2, "embed=")?
                .parse()
                .map_err(|e| XplError::parse(n, format!("embed: {e}")))?,
            init_seed: field(3, "seed=")?
                .parse()
                .map_err(|e| XplError::parse(n, format!("seed: {e}")))?,
        };
        let mut tensors = Vec::new();
        let mut names = Vec::new();
        loop {
            let (n, line) = lines
                .next()
                .ok_or_else(|| XplError::parse(n, "unterminated model block"))?;
            if line == "end" {
                break;
            }
            let rest = line
                .strip_prefix("tensor ")
                .ok_or_else(|| XplError::parse(n, "expected tensor line"))?;
            let mut tok = rest.split(' ');
            let name = tok.next().unwrap_or("").to_string();
            let rows: usize = tok
                .next()
                .unwrap_or("")
                .parse()
                .map_err(|e| XplError::parse(n, format!("rows: {e}")))?;
            let cols = tok.next().unwrap_or("");
            let values = tok
                .map(|t| t.parse::<f64>().map_err(|e| XplError::parse(n, format!("{t:?}: {e}"))))
                .collect::<Result<Vec<f64>>>()?;
            let shape = if cols == "-" {
                vec![rows]
            } else {
                vec![rows, cols.parse().map_err(|e| XplError::parse(n, format!("cols: {e}")))?]
            };
            names.push(name);
            tensors.push(Tensor::new(shape, values)?);
        }
        let visual_in = tensors.first().map(|t| t.shape()[0]).unwrap_or(0);
        let n_vis = 2 * (spec.hidden_widths.len() + 1);
        let audio_in = tensors.get(n_vis).map(|t| t.shape()[0]).unwrap_or(0);
        let mut params = EncoderParams::init(&spec, visual_in, audio_in)?;
        if params.names() != names {
            return Err(XplError::parse(n, "tensor names do not match the backbone layout"));
        }
        params.set_tensors(tensors)?;
        models.push(Model { tag, spec, params });
    }
    Ok(models)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::Split;

    fn spec(seed: u64) -> BackboneSpec {
        BackboneSpec {
            hidden_widths: vec![6, 5],
            embed_dim: 4,
            init_seed: seed,
        }
    }

    fn pair(h: usize, w: usize, cv: usize, ca: usize) -> AVPair {
        let visual = (0..h * w * cv).map(|i| ((i * 37 % 11) as f64 - 5.0) / 5.0).collect();
        let audio = (0..ca).map(|i| ((i * 13 % 7) as f64 - 3.0) / 3.0).collect();
        AVPair {
            sample_id: 0,
            category: 0,
            height: h,
            width: w,
            visual: Tensor::matrix(h * w, cv, visual).unwrap(),
            audio: Tensor::vector(audio).unwrap(),
            gt_mask: None,
            split: Split::Unlabeled,
        }
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = EncoderParams::init(&spec(1), 3, 2).unwrap();
        assert_eq!(a, EncoderParams::init(&spec(1), 3, 2).unwrap());
        assert_ne!(a, EncoderParams::init(&spec(2), 3, 2).unwrap());
        for layer in a.visual.iter().chain(&a.audio) {
            let s = xavier_bound(layer.fan_in(), layer.fan_out());
            assert!(layer.weight.values().iter().all(|w| w.abs() <= s));
            let sb = bias_bound(layer.fan_in());
            assert!(layer.bias.values().iter().all(|b| b.abs() <= sb));
        }
        // dims chain
        for layers in [&a.visual, &a.audio] {
            for pair in layers.windows(2) {
                assert_eq!(pair[0].fan_out(), pair[1].fan_in());
            }
        }
        let bad = BackboneSpec { hidden_widths: vec![4, 0], ..spec(1) };
        assert!(EncoderParams::init(&bad, 3, 2).is_err());
    }

    #[test]
    fn identical_cells_give_identical_embeddings() {
        let params = EncoderParams::init(&spec(3), 3, 2).unwrap();
        let mut g = Graph::new();
        let b = params.bind(&mut g, false);
        let grid = g.constant(Tensor::matrix(4, 3, [0.5, -1.0, 2.0].repeat(4)).unwrap());
        let emb = encode_visual(&mut g, &b, grid).unwrap();
        let v = g.value(emb).values();
        for row in v.chunks(4) {
            assert_eq!(row, &v[..4]);
        }
    }

    #[test]
    fn zero_weights_zero_embeddings() {
        let mut params = EncoderParams::init(&spec(3), 3, 2).unwrap();
        let zeros: Vec<Tensor> = params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        params.set_tensors(zeros).unwrap();
        let mut g = Graph::new();
        let b = params.bind(&mut g, false);
        let grid = g.constant(Tensor::filled(&[4, 3], 1.5));
        let emb = encode_visual(&mut g, &b, grid).unwrap();
        assert!(g.value(emb).values().iter().all(|&v| v == 0.0));
        // and a zero embedding is surfaced by the map, not silently zeroed
        assert!(matches!(
            prediction_map(&params, ModelTag::A, &pair(2, 2, 3, 2)),
            Err(XplError::ZeroNorm { .. })
        ));

        let mut fresh = EncoderParams::init(&spec(4), 3, 2).unwrap();
        for layer in fresh.visual.iter_mut().chain(fresh.audio.iter_mut()) {
            layer.bias = Tensor::zeros(layer.bias.shape());
        }
        let mut g = Graph::new();
        let b = fresh.bind(&mut g, false);
        let a = g.constant(Tensor::zeros(&[2]));
        let e = encode_audio(&mut g, &b, a).unwrap();
        assert!(g.value(e).values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn map_values_bounded_and_tagged() {
        let m = Model::new(ModelTag::B, spec(5), 3, 2).unwrap();
        let p = pair(3, 4, 3, 2);
        let map = m.prediction_map(&p).unwrap();
        assert_eq!(map.values.len(), 12);
        assert_eq!(map.model_tag, ModelTag::B);
        assert!(map.values.iter().all(|v| (-1.0..=1.0).contains(v)));
        assert_eq!(map, m.prediction_map(&p).unwrap());
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let m = Model::new(ModelTag::A, spec(5), 4, 2).unwrap();
        assert!(m.prediction_map(&pair(2, 2, 3, 2)).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let a = Model::new(ModelTag::A, spec(1), 3, 2).unwrap();
        let b = Model::new(
            ModelTag::B,
            BackboneSpec { hidden_widths: vec![7], embed_dim: 4, init_seed: 9 },
            3,
            2,
        )
        .unwrap();
        let text = write_checkpoint(&[&a, &b]);
        let back = read_checkpoint(&text).unwrap();
        assert_eq!(back, vec![a, b]);
        assert_eq!(write_checkpoint(&[&back[0], &back[1]]), text);
        assert!(read_checkpoint("garbage").is_err());
    }

    #[test]
    fn flatten_round_trip() {
        let p = EncoderParams::init(&spec(8), 3, 2).unwrap();
        assert_eq!(p.unflatten(&p.flatten()).unwrap(), p);
        assert_eq!(p.distance(&p), Some(0.0));
    }
}
