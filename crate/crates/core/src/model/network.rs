//! Phrase embedding and the full per-task forward/backward pass.

use std::sync::Arc;

use super::layers::{
    attend_normalized, attend_normalized_backward, bce, ensemble_weights, features, mlp_backward,
    mlp_forward, positive_weight, present_channels, relation_net, sigmoid, MlpTape, RelationTape,
    Resample,
};
use super::params::{ModelParams, WordIndex, ENSEMBLE_CHANNELS};
use super::tensor::{ChannelStack, HeatMap};
use crate::dataset::PhraseStructure;
use crate::error::{Error, Result};
use crate::geometry::RleMask;
use crate::scalar::Scalar;

/// Embedding rows making up each phrase slot; empty means the slot is absent.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PhraseWords {
    pub category: Vec<usize>,
    pub attribute: Vec<usize>,
    pub relation: Vec<usize>,
    /// The relationship's supporting category.
    pub support: Vec<usize>,
}

impl PhraseWords {
    /// Attribute slot pools every attribute; the relation slots use the first
    /// relationship.
    pub fn from_structure(s: &PhraseStructure, words: &WordIndex) -> Self {
        let rows = |text: &str| text.split_whitespace().map(|w| words.row(w)).collect::<Vec<_>>();
        let attribute = s.attributes.iter().flat_map(|a| rows(a)).collect();
        let (relation, support) = match s.relationships.first() {
            Some(r) => (rows(&r.predicate), rows(&r.supporting_category)),
            None => (Vec::new(), Vec::new()),
        };
        Self {
            category: rows(&s.category),
            attribute,
            relation,
            support,
        }
    }

    pub fn has_attribute(&self) -> bool {
        !self.attribute.is_empty()
    }

    pub fn has_relationship(&self) -> bool {
        !self.relation.is_empty() && !self.support.is_empty()
    }
}

/// Mean-pooled slot embeddings; absent slots are zero vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct PhraseEmbedding<T> {
    pub e_cat: Vec<T>,
    pub e_att: Vec<T>,
    pub e_rel: Vec<T>,
    pub e_support: Vec<T>,
    pub has_attribute: bool,
    pub has_relationship: bool,
}

fn mean_rows<T: Scalar>(params: &ModelParams<T>, rows: &[usize]) -> Vec<T> {
    let d = params.config.embed_dim;
    let mut out = vec![T::zero(); d];
    if rows.is_empty() {
        return out;
    }
    for &r in rows {
        for (o, &v) in out.iter_mut().zip(params.embedding_row(r)) {
            *o += v;
        }
    }
    let n = T::of(rows.len() as f64);
    for o in &mut out {
        *o /= n;
    }
    out
}

pub fn embed_words<T: Scalar>(params: &ModelParams<T>, w: &PhraseWords) -> PhraseEmbedding<T> {
    let has_relationship = w.has_relationship();
    PhraseEmbedding {
        e_cat: mean_rows(params, &w.category),
        e_att: mean_rows(params, &w.attribute),
        e_rel: if has_relationship { mean_rows(params, &w.relation) } else { mean_rows(params, &[]) },
        e_support: if has_relationship { mean_rows(params, &w.support) } else { mean_rows(params, &[]) },
        has_attribute: w.has_attribute(),
        has_relationship,
    }
}

pub fn embed_phrase<T: Scalar>(structure: &PhraseStructure, params: &ModelParams<T>) -> PhraseEmbedding<T> {
    embed_words(params, &PhraseWords::from_structure(structure, &params.words))
}

/// Adds `d_e / n` to each row of a slot.
fn scatter_rows<T: Scalar>(params: &ModelParams<T>, rows: &[usize], d_e: &[T], grad: &mut [T]) {
    if rows.is_empty() {
        return;
    }
    let d = params.config.embed_dim;
    let n = T::of(rows.len() as f64);
    for &r in rows {
        let g = &mut grad[params.layout.embedding.start + r * d..][..d];
        for (gv, &dv) in g.iter_mut().zip(d_e) {
            *gv += dv / n;
        }
    }
}

/// Standardized detection channels for one image, shared by its tasks.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageChannels<T> {
    pub categories: ChannelStack<T>,
    pub attributes: ChannelStack<T>,
}

impl<T: Scalar> ImageChannels<T> {
    pub fn new(categories: &ChannelStack<T>, attributes: &ChannelStack<T>, epsilon: f64) -> Self {
        Self {
            categories: super::layers::standardize(categories, T::of(epsilon)),
            attributes: super::layers::standardize(attributes, T::of(epsilon)),
        }
    }
}

/// One phrase–image pair ready for the network.
#[derive(Debug, Clone)]
pub struct Sample<T> {
    pub task_id: String,
    pub channels: Arc<ImageChannels<T>>,
    pub words: PhraseWords,
    /// Ground truth at channel resolution (0/1), row-major.
    pub gt: Vec<T>,
    pub lambda: T,
}

impl<T: Scalar> Sample<T> {
    pub fn new(
        task_id: String,
        channels: Arc<ImageChannels<T>>,
        words: PhraseWords,
        truth: &RleMask,
        positive_weight_cap: f64,
    ) -> Self {
        let (w, h) = (channels.categories.width(), channels.categories.height());
        let gt = HeatMap::<T>::from_mask_resampled(truth, w, h).into_values();
        let lambda = positive_weight(&gt, positive_weight_cap);
        Self {
            task_id,
            channels,
            words,
            gt,
            lambda,
        }
    }
}

/// Which outputs a pass computes and supervises.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// Category and attribute modules only.
    Modules,
    /// Every module plus the ensemble.
    Joint,
}

#[derive(Debug, Clone)]
struct ModuleTape<T> {
    mlp: MlpTape<T>,
    attention: Vec<T>,
    s: Vec<T>,
    p: Vec<T>,
}

#[derive(Debug, Clone)]
struct RelationPass<T> {
    support: ModuleTape<T>,
    grid_in: Vec<T>,
    tape: RelationTape<T>,
    p: Vec<T>,
}

#[derive(Debug, Clone)]
struct EnsemblePass<T> {
    x: Vec<T>,
    mlp: MlpTape<T>,
    w: [T; ENSEMBLE_CHANNELS],
    present: [bool; ENSEMBLE_CHANNELS],
    o: Vec<T>,
}

/// Everything the backward pass needs.
#[derive(Debug, Clone)]
pub struct Forward<T> {
    emb: PhraseEmbedding<T>,
    cat: ModuleTape<T>,
    att: Option<ModuleTape<T>>,
    rel: Option<RelationPass<T>>,
    ens: Option<EnsemblePass<T>>,
    dropout: Option<Vec<T>>,
}

impl<T: Scalar> Forward<T> {
    pub fn category_map(&self) -> &[T] {
        &self.cat.p
    }

    pub fn attribute_map(&self) -> Option<&[T]> {
        self.att.as_ref().map(|m| m.p.as_slice())
    }

    pub fn relation_map(&self) -> Option<&[T]> {
        self.rel.as_ref().map(|r| r.p.as_slice())
    }

    /// The combined prediction (joint stage only).
    pub fn output(&self) -> Option<&[T]> {
        self.ens.as_ref().map(|e| e.o.as_slice())
    }

    pub fn ensemble_weights(&self) -> Option<&[T; ENSEMBLE_CHANNELS]> {
        self.ens.as_ref().map(|e| &e.w)
    }
}

struct Module<'a> {
    net: &'a super::params::MlpLayout,
    gain: &'a std::ops::Range<usize>,
    bias: &'a std::ops::Range<usize>,
    affine: &'a std::ops::Range<usize>,
}

fn category_module<T>(p: &ModelParams<T>) -> Module<'_> {
    Module {
        net: &p.layout.f_cat,
        gain: &p.layout.cat_gain,
        bias: &p.layout.cat_bias,
        affine: &p.layout.cat_affine,
    }
}

fn attribute_module<T>(p: &ModelParams<T>) -> Module<'_> {
    Module {
        net: &p.layout.f_att,
        gain: &p.layout.att_gain,
        bias: &p.layout.att_bias,
        affine: &p.layout.att_affine,
    }
}

fn module_forward<T: Scalar>(params: &ModelParams<T>, m: &Module, z: &ChannelStack<T>, e: &[T]) -> Result<ModuleTape<T>> {
    let v = &params.values;
    let slope = T::of(params.config.leaky_slope);
    let mlp = mlp_forward(v, m.net, e, slope, None)?;
    let attention: Vec<T> = mlp.out.iter().map(|&o| sigmoid(o)).collect();
    if attention.len() != z.n_channels() {
        return Err(Error::Model(format!(
            "{} attention weights for {} channels",
            attention.len(),
            z.n_channels()
        )));
    }
    let s = attend_normalized(z, &attention, &v[m.gain.clone()], &v[m.bias.clone()]);
    let (a, b) = (v[m.affine.start], v[m.affine.start + 1]);
    let p = s.iter().map(|&x| sigmoid(a * x + b)).collect();
    Ok(ModuleTape { mlp, attention, s, p })
}

/// Backward of a module from `d_p`; adds the embedding gradient into `d_e`.
fn module_backward<T: Scalar>(
    params: &ModelParams<T>,
    m: &Module,
    z: &ChannelStack<T>,
    e: &[T],
    tape: &ModuleTape<T>,
    d_p: &[T],
    grad: &mut [T],
    d_e: &mut [T],
) {
    let v = &params.values;
    let a = v[m.affine.start];
    let mut ds = vec![T::zero(); d_p.len()];
    let (mut da, mut db) = (T::zero(), T::zero());
    for i in 0..d_p.len() {
        let p = tape.p[i];
        let dz = d_p[i] * p * (T::one() - p);
        da += dz * tape.s[i];
        db += dz;
        ds[i] = dz * a;
    }
    grad[m.affine.start] += da;
    grad[m.affine.start + 1] += db;
    let (mut d_gain, mut d_bias) = (vec![T::zero(); m.gain.len()], vec![T::zero(); m.bias.len()]);
    let d_att = attend_normalized_backward(
        z,
        &tape.attention,
        &v[m.gain.clone()],
        &v[m.bias.clone()],
        &ds,
        &mut d_gain,
        &mut d_bias,
    );
    for (g, d) in grad[m.gain.clone()].iter_mut().zip(&d_gain) {
        *g += *d;
    }
    for (g, d) in grad[m.bias.clone()].iter_mut().zip(&d_bias) {
        *g += *d;
    }
    let d_logits: Vec<T> = d_att
        .iter()
        .zip(&tape.attention)
        .map(|(&g, &a)| g * a * (T::one() - a))
        .collect();
    let slope = T::of(params.config.leaky_slope);
    mlp_backward(v, m.net, e, &tape.mlp, &d_logits, slope, None, grad, d_e);
}

fn resamplers<T>(params: &ModelParams<T>) -> (Resample, Resample) {
    let (w, h) = (params.config.channel_width as usize, params.config.channel_height as usize);
    let g = params.config.relation_grid;
    (Resample::new(w, h, g, g), Resample::new(g, g, w, h))
}

/// Runs the network on one pair. `dropout` is the ensemble hidden-layer mask
/// (already scaled), used only in the joint stage.
pub fn forward<T: Scalar>(
    params: &ModelParams<T>,
    channels: &ImageChannels<T>,
    words: &PhraseWords,
    stage: Stage,
    dropout: Option<Vec<T>>,
) -> Result<Forward<T>> {
    let cfg = &params.config;
    let z = &channels.categories;
    if (z.width(), z.height()) != (cfg.channel_width, cfg.channel_height) {
        return Err(Error::Model(format!(
            "channels are {}x{}, model expects {}x{}",
            z.width(),
            z.height(),
            cfg.channel_width,
            cfg.channel_height
        )));
    }
    let emb = embed_words(params, words);
    let cat = module_forward(params, &category_module(params), z, &emb.e_cat)?;
    let att = if emb.has_attribute {
        Some(module_forward(params, &attribute_module(params), &channels.attributes, &emb.e_att)?)
    } else {
        None
    };
    if stage == Stage::Modules {
        return Ok(Forward {
            emb,
            cat,
            att,
            rel: None,
            ens: None,
            dropout: None,
        });
    }

    let rel = if emb.has_relationship {
        let support = module_forward(params, &category_module(params), z, &emb.e_support)?;
        let (down, up) = resamplers(params);
        let grid_in = down.apply(&support.p);
        let tape = relation_net(params).forward(&grid_in, &emb.e_rel);
        let p = up.apply(&tape.out);
        Some(RelationPass {
            support,
            grid_in,
            tape,
            p,
        })
    } else {
        None
    };

    let d = cfg.embed_dim;
    let mut x = Vec::with_capacity(3 * d);
    x.extend_from_slice(&emb.e_cat);
    x.extend_from_slice(&emb.e_att);
    x.extend_from_slice(&emb.e_rel);
    let slope = T::of(cfg.leaky_slope);
    let mlp = mlp_forward(&params.values, &params.layout.ensemble, &x, slope, dropout.as_deref())?;
    let present = present_channels(att.is_some(), rel.is_some());
    let w = ensemble_weights(&mlp.out, &present)?;
    let pa = att.as_ref().map(|m| m.p.as_slice());
    let pr = rel.as_ref().map(|r| r.p.as_slice());
    let o = (0..cat.p.len())
        .map(|i| {
            let f = features(cat.p[i], pa.map_or(T::zero(), |v| v[i]), pr.map_or(T::zero(), |v| v[i]));
            f.iter().zip(&w).map(|(&f, &w)| f * w).sum()
        })
        .collect();
    Ok(Forward {
        emb,
        cat,
        att,
        rel,
        ens: Some(EnsemblePass {
            x,
            mlp,
            w,
            present,
            o,
        }),
        dropout,
    })
}

/// Total loss of a pass: each computed module map plus the combined output,
/// all against the same ground truth.
pub fn pass_loss<T: Scalar>(f: &Forward<T>, gt: &[T], lambda: T) -> T {
    let mut total = bce(&f.cat.p, gt, lambda, None);
    if let Some(m) = &f.att {
        total += bce(&m.p, gt, lambda, None);
    }
    if let Some(r) = &f.rel {
        total += bce(&r.p, gt, lambda, None);
    }
    if let Some(e) = &f.ens {
        total += bce(&e.o, gt, lambda, None);
    }
    total
}

/// Loss and full parameter gradient for one pair.
pub fn loss_and_grad<T: Scalar>(
    params: &ModelParams<T>,
    sample: &Sample<T>,
    stage: Stage,
    dropout: Option<Vec<T>>,
) -> Result<(T, Vec<T>)> {
    let f = forward(params, &sample.channels, &sample.words, stage, dropout)?;
    let n = sample.gt.len();
    let (gt, lambda) = (&sample.gt, sample.lambda);
    let mut grad = vec![T::zero(); params.n_params()];
    let d = params.config.embed_dim;
    let slope = T::of(params.config.leaky_slope);

    let mut d_pc = vec![T::zero(); n];
    let mut loss = bce(&f.cat.p, gt, lambda, Some(&mut d_pc));
    let mut d_pa = vec![T::zero(); n];
    if let Some(m) = &f.att {
        loss += bce(&m.p, gt, lambda, Some(&mut d_pa));
    }
    let mut d_pr = vec![T::zero(); n];
    if let Some(r) = &f.rel {
        loss += bce(&r.p, gt, lambda, Some(&mut d_pr));
    }

    let mut d_ecat = vec![T::zero(); d];
    let mut d_eatt = vec![T::zero(); d];
    let mut d_erel = vec![T::zero(); d];
    let mut d_esup = vec![T::zero(); d];

    if let Some(e) = &f.ens {
        let mut d_o = vec![T::zero(); n];
        loss += bce(&e.o, gt, lambda, Some(&mut d_o));
        let pa = f.att.as_ref().map(|m| m.p.as_slice());
        let pr = f.rel.as_ref().map(|r| r.p.as_slice());
        let w = &e.w;
        let two = T::of(2.0);
        let mut d_w = [T::zero(); ENSEMBLE_CHANNELS];
        for i in 0..n {
            let g = d_o[i];
            let (c, a, r) = (f.cat.p[i], pa.map_or(T::zero(), |v| v[i]), pr.map_or(T::zero(), |v| v[i]));
            let feats = features(c, a, r);
            for t in 0..ENSEMBLE_CHANNELS {
                d_w[t] += g * feats[t];
            }
            d_pc[i] += g * (w[0] + two * w[3] * c + w[4] * a + w[5] * r);
            d_pa[i] += g * (w[1] + w[4] * c + two * w[6] * a + w[7] * r);
            d_pr[i] += g * (w[2] + w[5] * c + w[7] * a + two * w[8] * r);
        }
        // masked softmax: dz_t = w_t (dw_t − Σ_s w_s dw_s)
        let dot: T = (0..ENSEMBLE_CHANNELS).map(|t| w[t] * d_w[t]).sum();
        let d_logits: Vec<T> = (0..ENSEMBLE_CHANNELS)
            .map(|t| if e.present[t] { w[t] * (d_w[t] - dot) } else { T::zero() })
            .collect();
        let mut d_x = vec![T::zero(); 3 * d];
        mlp_backward(
            &params.values,
            &params.layout.ensemble,
            &e.x,
            &e.mlp,
            &d_logits,
            slope,
            f.dropout.as_deref(),
            &mut grad,
            &mut d_x,
        );
        for i in 0..d {
            d_ecat[i] += d_x[i];
            d_eatt[i] += d_x[d + i];
            d_erel[i] += d_x[2 * d + i];
        }
    }

    let z = &sample.channels.categories;
    if let Some(r) = &f.rel {
        let (down, up) = resamplers(params);
        let g = params.config.relation_grid;
        let mut d_grid_out = vec![T::zero(); g * g];
        up.apply_transpose(&d_pr, &mut d_grid_out);
        let mut d_grid_in = vec![T::zero(); g * g];
        relation_net(params).backward(
            &r.grid_in,
            &f.emb.e_rel,
            &r.tape,
            &d_grid_out,
            &mut grad,
            &mut d_grid_in,
            &mut d_erel,
        );
        let mut d_sup = vec![T::zero(); n];
        down.apply_transpose(&d_grid_in, &mut d_sup);
        module_backward(
            params,
            &category_module(params),
            z,
            &f.emb.e_support,
            &r.support,
            &d_sup,
            &mut grad,
            &mut d_esup,
        );
    }
    if let Some(m) = &f.att {
        module_backward(
            params,
            &attribute_module(params),
            &sample.channels.attributes,
            &f.emb.e_att,
            m,
            &d_pa,
            &mut grad,
            &mut d_eatt,
        );
    }
    module_backward(params, &category_module(params), z, &f.emb.e_cat, &f.cat, &d_pc, &mut grad, &mut d_ecat);

    let w = &sample.words;
    scatter_rows(params, &w.category, &d_ecat, &mut grad);
    scatter_rows(params, &w.attribute, &d_eatt, &mut grad);
    if f.emb.has_relationship {
        scatter_rows(params, &w.relation, &d_erel, &mut grad);
        scatter_rows(params, &w.support, &d_esup, &mut grad);
    }
    Ok((loss, grad))
}
