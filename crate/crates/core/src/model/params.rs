//! Model hyper-parameters, the flat parameter vector and its layout, and the
//! binary checkpoint.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seed::stage_rng;

/// Architecture hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub attention_hidden: usize,
    pub relation_hidden: usize,
    pub ensemble_hidden: usize,
    pub relation_grid: usize,
    pub kernel_size: usize,
    pub dilation: usize,
    pub channel_width: u32,
    pub channel_height: u32,
    pub leaky_slope: f64,
    pub norm_epsilon: f64,
    pub ensemble_dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 64,
            attention_hidden: 64,
            relation_hidden: 8,
            ensemble_hidden: 32,
            relation_grid: 32,
            kernel_size: 7,
            dilation: 2,
            channel_width: 64,
            channel_height: 64,
            leaky_slope: 0.01,
            norm_epsilon: 1e-5,
            ensemble_dropout: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("embed_dim", self.embed_dim),
            ("attention_hidden", self.attention_hidden),
            ("relation_hidden", self.relation_hidden),
            ("ensemble_hidden", self.ensemble_hidden),
            ("relation_grid", self.relation_grid),
            ("dilation", self.dilation),
            ("channel_width", self.channel_width as usize),
            ("channel_height", self.channel_height as usize),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("model: {name} must be positive")));
        }
        if self.kernel_size % 2 == 0 {
            return Err(Error::Config(format!(
                "model: kernel_size must be odd, got {}",
                self.kernel_size
            )));
        }
        if !(self.norm_epsilon > 0.0) {
            return Err(Error::Config("model: norm_epsilon must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.ensemble_dropout) {
            return Err(Error::Config("model: ensemble_dropout must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// Zero padding that keeps the relation grid size.
    pub fn padding(&self) -> usize {
        self.dilation * (self.kernel_size - 1) / 2
    }
}

/// Data-dependent sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub n_categories: usize,
    pub n_attributes: usize,
    /// Embedding rows, including the trailing unknown-word row.
    pub n_words: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpLayout {
    pub w1: Range<usize>,
    pub b1: Range<usize>,
    pub w2: Range<usize>,
    pub b2: Range<usize>,
    pub d_in: usize,
    pub hidden: usize,
    pub d_out: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvLayout {
    pub w1: Range<usize>,
    pub b1: Range<usize>,
    pub w2: Range<usize>,
    pub b2: Range<usize>,
    /// Input channels of the first layer: support map plus the embedding.
    pub c_in: usize,
    pub hidden: usize,
    pub k: usize,
}

/// Where each parameter group lives in the flat vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub embedding: Range<usize>,
    pub cat_gain: Range<usize>,
    pub cat_bias: Range<usize>,
    pub att_gain: Range<usize>,
    pub att_bias: Range<usize>,
    pub f_cat: MlpLayout,
    pub f_att: MlpLayout,
    /// `(a, b)` of `σ(a·S + b)`.
    pub cat_affine: Range<usize>,
    pub att_affine: Range<usize>,
    pub rel_affine: Range<usize>,
    pub relation: ConvLayout,
    pub ensemble: MlpLayout,
    pub total: usize,
}

pub const ENSEMBLE_CHANNELS: usize = 10;

struct Cursor(usize);

impl Cursor {
    fn take(&mut self, n: usize) -> Range<usize> {
        let r = self.0..self.0 + n;
        self.0 += n;
        r
    }

    fn mlp(&mut self, d_in: usize, hidden: usize, d_out: usize) -> MlpLayout {
        MlpLayout {
            w1: self.take(hidden * d_in),
            b1: self.take(hidden),
            w2: self.take(d_out * hidden),
            b2: self.take(d_out),
            d_in,
            hidden,
            d_out,
        }
    }
}

impl Layout {
    pub fn new(config: &ModelConfig, dims: &ModelDims) -> Self {
        let d = config.embed_dim;
        let k = config.kernel_size;
        let ch = config.relation_hidden;
        let mut c = Cursor(0);
        let embedding = c.take(dims.n_words * d);
        let cat_gain = c.take(dims.n_categories);
        let cat_bias = c.take(dims.n_categories);
        let att_gain = c.take(dims.n_attributes);
        let att_bias = c.take(dims.n_attributes);
        let f_cat = c.mlp(d, config.attention_hidden, dims.n_categories);
        let f_att = c.mlp(d, config.attention_hidden, dims.n_attributes);
        let cat_affine = c.take(2);
        let att_affine = c.take(2);
        let rel_affine = c.take(2);
        let relation = ConvLayout {
            w1: c.take(ch * (1 + d) * k * k),
            b1: c.take(ch),
            w2: c.take(ch * k * k),
            b2: c.take(1),
            c_in: 1 + d,
            hidden: ch,
            k,
        };
        let ensemble = c.mlp(3 * d, config.ensemble_hidden, ENSEMBLE_CHANNELS);
        Self {
            embedding,
            cat_gain,
            cat_bias,
            att_gain,
            att_bias,
            f_cat,
            f_att,
            cat_affine,
            att_affine,
            rel_affine,
            relation,
            ensemble,
            total: c.0,
        }
    }
}

/// Word list backing the embedding rows; the unknown-word row comes last.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct WordIndex {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl WordIndex {
    pub fn new(words: impl IntoIterator<Item = String>) -> Self {
        let mut out = Self::default();
        for w in words {
            if !out.index.contains_key(&w) {
                out.index.insert(w.clone(), out.words.len());
                out.words.push(w);
            }
        }
        out
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Number of embedding rows (words plus the unknown row).
    pub fn rows(&self) -> usize {
        self.words.len() + 1
    }

    pub fn unk(&self) -> usize {
        self.words.len()
    }

    pub fn row(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(self.unk())
    }
}

/// Everything needed to run the model: architecture, sizes, vocabulary,
/// decision threshold, and the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub config: ModelConfig,
    pub dims: ModelDims,
    pub layout: Layout,
    pub words: WordIndex,
    pub threshold: f64,
    pub values: Vec<T>,
}

impl<T: Scalar> ModelParams<T> {
    /// Seeded initialization: uniform `±√(1/fan_in)` for weight matrices and
    /// the embedding table, zero biases, unit gains and affine slopes.
    pub fn init(config: ModelConfig, n_categories: usize, n_attributes: usize, words: WordIndex, seed: u64) -> Result<Self> {
        config.validate()?;
        let dims = ModelDims {
            n_categories,
            n_attributes,
            n_words: words.rows(),
        };
        let layout = Layout::new(&config, &dims);
        let mut values = vec![T::zero(); layout.total];
        let mut fill = |range: &Range<usize>, fan_in: usize, name: &str| {
            let bound = (1.0 / fan_in.max(1) as f64).sqrt();
            let mut rng = stage_rng(seed, "init", name);
            for v in &mut values[range.clone()] {
                *v = T::of(rng.random_range(-bound..bound));
            }
        };
        let d = config.embed_dim;
        let kk = config.kernel_size * config.kernel_size;
        fill(&layout.embedding, 1, "embedding");
        fill(&layout.f_cat.w1, d, "f_cat.w1");
        fill(&layout.f_cat.w2, config.attention_hidden, "f_cat.w2");
        fill(&layout.f_att.w1, d, "f_att.w1");
        fill(&layout.f_att.w2, config.attention_hidden, "f_att.w2");
        fill(&layout.relation.w1, (1 + d) * kk, "relation.w1");
        fill(&layout.relation.w2, config.relation_hidden * kk, "relation.w2");
        fill(&layout.ensemble.w1, 3 * d, "ensemble.w1");
        fill(&layout.ensemble.w2, config.ensemble_hidden, "ensemble.w2");
        for r in [&layout.cat_gain, &layout.att_gain] {
            values[r.clone()].fill(T::one());
        }
        for r in [&layout.cat_affine, &layout.att_affine, &layout.rel_affine] {
            values[r.start] = T::one();
        }
        Ok(Self {
            config,
            dims,
            layout,
            words,
            threshold: 0.5,
            values,
        })
    }

    pub fn n_params(&self) -> usize {
        self.values.len()
    }

    pub fn embedding_row(&self, row: usize) -> &[T] {
        let d = self.config.embed_dim;
        &self.values[self.layout.embedding.start + row * d..][..d]
    }

    /// Overwrites rows of known words with vectors from a table.
    pub fn load_embeddings(&mut self, table: &[(String, Vec<f64>)]) -> Result<usize> {
        let d = self.config.embed_dim;
        let mut loaded = 0;
        for (word, v) in table {
            if v.len() != d {
                return Err(Error::Config(format!(
                    "embedding for {word:?} has dimension {}, model uses {d}",
                    v.len()
                )));
            }
            let row = self.words.row(word);
            if row == self.words.unk() {
                continue;
            }
            let start = self.layout.embedding.start + row * d;
            for (dst, &src) in self.values[start..start + d].iter_mut().zip(v) {
                *dst = T::of(src);
            }
            loaded += 1;
        }
        Ok(loaded)
    }
}

/// Reads `word v1 … vD` lines.
pub fn parse_embedding_table(text: &str) -> Result<Vec<(String, Vec<f64>)>> {
    let mut out = Vec::new();
    let mut dim = None;
    for (i, line) in text.lines().enumerate() {
        let mut parts = line.split_whitespace();
        let Some(word) = parts.next() else { continue };
        let v = parts
            .map(str::parse::<f64>)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse {
                line: i + 1,
                message: format!("embedding value: {e}"),
            })?;
        if v.is_empty() || v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Parse {
                line: i + 1,
                message: "embedding needs finite values".into(),
            });
        }
        if *dim.get_or_insert(v.len()) != v.len() {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("dimension {} differs from {}", v.len(), dim.unwrap()),
            });
        }
        out.push((word.to_lowercase(), v));
    }
    Ok(out)
}

pub fn load_embedding_table(path: &Path) -> Result<Vec<(String, Vec<f64>)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_embedding_table(&text)
}

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"FRGCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointHeader {
    config: ModelConfig,
    dims: ModelDims,
    words: Vec<String>,
    threshold: f64,
}

impl<T: Scalar> ModelParams<T> {
    /// Magic, `u32` version, `u64` header length, JSON header, `u64` count,
    /// then the values as `f64`; all little-endian.
    pub fn write_checkpoint(&self, mut w: impl Write) -> Result<()> {
        let header = serde_json::to_vec(&CheckpointHeader {
            config: self.config.clone(),
            dims: self.dims,
            words: self.words.words().to_vec(),
            threshold: self.threshold,
        })?;
        let io = |e: std::io::Error| Error::Checkpoint(e.to_string());
        w.write_all(&CHECKPOINT_MAGIC).map_err(io)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes()).map_err(io)?;
        w.write_all(&(header.len() as u64).to_le_bytes()).map_err(io)?;
        w.write_all(&header).map_err(io)?;
        w.write_all(&(self.values.len() as u64).to_le_bytes()).map_err(io)?;
        let mut buf = Vec::with_capacity(self.values.len() * 8);
        for v in &self.values {
            buf.extend_from_slice(&v.as_f64().to_le_bytes());
        }
        w.write_all(&buf).map_err(io)?;
        Ok(())
    }

    pub fn read_checkpoint(mut r: impl Read) -> Result<Self> {
        let io = |e: std::io::Error| Error::Checkpoint(format!("truncated or unreadable: {e}"));
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(io)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic header".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4).map_err(io)?;
        let version = u32::from_le_bytes(b4);
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8).map_err(io)?;
        let mut header = vec![0u8; u64::from_le_bytes(b8) as usize];
        r.read_exact(&mut header).map_err(io)?;
        let header: CheckpointHeader =
            serde_json::from_slice(&header).map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
        header.config.validate()?;
        r.read_exact(&mut b8).map_err(io)?;
        let n = u64::from_le_bytes(b8) as usize;
        let layout = Layout::new(&header.config, &header.dims);
        if n != layout.total {
            return Err(Error::Checkpoint(format!(
                "{n} values stored, architecture needs {}",
                layout.total
            )));
        }
        let words = WordIndex::new(header.words);
        if words.rows() != header.dims.n_words {
            return Err(Error::Checkpoint("word list disagrees with embedding rows".into()));
        }
        let mut raw = vec![0u8; n * 8];
        r.read_exact(&mut raw).map_err(io)?;
        let values = raw
            .chunks_exact(8)
            .map(|c| T::of(f64::from_le_bytes(c.try_into().expect("8-byte chunk"))))
            .collect();
        Ok(Self {
            config: header.config,
            dims: header.dims,
            layout,
            words,
            threshold: header.threshold,
            values,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_checkpoint(&mut buf)?;
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::read_checkpoint(bytes.as_slice())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelParams<f64> {
        let cfg = ModelConfig {
            embed_dim: 4,
            attention_hidden: 3,
            relation_hidden: 2,
            ensemble_hidden: 3,
            relation_grid: 8,
            ..Default::default()
        };
        ModelParams::init(cfg, 3, 2, WordIndex::new(["red".to_string(), "cup".to_string()]), 7).unwrap()
    }

    #[test]
    fn layout_is_contiguous() {
        let p = small();
        let l = &p.layout;
        assert_eq!(l.embedding, 0..12);
        assert_eq!(l.ensemble.b2.end, l.total);
        assert_eq!(p.n_params(), l.total);
        assert_eq!(l.relation.w1.len(), 2 * 5 * 49);
    }

    #[test]
    fn init_is_seeded() {
        assert_eq!(small(), small());
        let p = small();
        assert_eq!(p.values[p.layout.cat_affine.clone()], [1.0, 0.0]);
        assert!(p.values[p.layout.cat_gain.clone()].iter().all(|&g| g == 1.0));
    }

    #[test]
    fn words_and_unknown_row() {
        let w = WordIndex::new(["a".to_string(), "b".to_string(), "a".to_string()]);
        assert_eq!(w.rows(), 3);
        assert_eq!(w.row("b"), 1);
        assert_eq!(w.row("zzz"), 2);
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut p = small();
        p.threshold = 0.35;
        let mut buf = Vec::new();
        p.write_checkpoint(&mut buf).unwrap();
        assert_eq!(&buf[..8], b"FRGCKPT\0");
        assert_eq!(ModelParams::<f64>::read_checkpoint(buf.as_slice()).unwrap(), p);
        let f32p = ModelParams::<f32>::read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(f32p.n_params(), p.n_params());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(ModelParams::<f64>::read_checkpoint(bad.as_slice()).is_err());
        buf.truncate(buf.len() - 3);
        assert!(ModelParams::<f64>::read_checkpoint(buf.as_slice()).is_err());
    }

    #[test]
    fn embedding_table_text() {
        let t = parse_embedding_table("red 1 2 3 4\ncup 0 0 0 1\n\n").unwrap();
        assert_eq!(t.len(), 2);
        let mut p = small();
        assert_eq!(p.load_embeddings(&t).unwrap(), 2);
        assert_eq!(p.embedding_row(0), &[1.0, 2.0, 3.0, 4.0]);
        assert!(parse_embedding_table("a 1 2\nb 1\n").is_err());
        assert!(parse_embedding_table("a 1 x\n").is_err());
    }
}
