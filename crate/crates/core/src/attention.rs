//! Full, reference and object attention over a [`StreamBundle`], and the
//! block that stacks them.
//!
//! Routing (Q ← KV):
//!
//! | output   | queries          | keys / values                       |
//! |----------|------------------|-------------------------------------|
//! | full     | vid ∪ ref ∪ txt  | vid ∪ ref ∪ txt                     |
//! | ref: vid | frame i of vid   | frame i ∪ ref ∪ txt                 |
//! | ref: ref | ref              | ref ∪ txt                           |
//! | ref: txt | txt              | all vid frames ∪ txt                |
//! | object   | frame i of vid   | frame i ∪ obj (vid outputs only)    |
//!
//! Everything is computed on a [`Tape`]; the untaped entry points run a
//! throwaway tape so both paths share one implementation.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::rng::{self, DetRng};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const LN_EPS: f64 = 1e-6;

/// Token streams. `obj` is never written by any operation here.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamBundle {
    /// `[t × hw × c]`
    pub vid: Tensor,
    /// `[1 × hw × c]`
    pub reference: Tensor,
    /// `[1 × l × c]`
    pub txt: Tensor,
    /// `[1 × hw × c]`
    pub obj: Tensor,
    /// `[t × hw]`, values in `[0, 1]`
    pub mask: Tensor,
}

/// Token-grid sizes of a validated bundle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub t: usize,
    pub hw: usize,
    pub l: usize,
    pub c: usize,
}

impl StreamBundle {
    pub fn dims(&self) -> Result<Dims> {
        let bad = |what: &str| Err(Error::shape("StreamBundle", String::from(what)));
        let vs = self.vid.shape();
        if vs.len() != 3 {
            return bad(&format!("vid {vs:?} is not [t×hw×c]"));
        }
        let d = Dims {
            t: vs[0],
            hw: vs[1],
            l: *self.txt.shape().get(1).unwrap_or(&0),
            c: vs[2],
        };
        if self.reference.shape() != [1, d.hw, d.c] {
            return bad(&format!("reference {:?} vs vid {vs:?}", self.reference.shape()));
        }
        if self.obj.shape() != [1, d.hw, d.c] {
            return bad(&format!("obj {:?} vs vid {vs:?}", self.obj.shape()));
        }
        if self.txt.shape() != [1, d.l, d.c] {
            return bad(&format!("txt {:?} vs c = {}", self.txt.shape(), d.c));
        }
        if self.mask.shape() != [d.t, d.hw] {
            return bad(&format!("mask {:?} vs [{}×{}]", self.mask.shape(), d.t, d.hw));
        }
        if self.mask.data().iter().any(|&m| !(0.0..=1.0).contains(&m)) {
            return Err(Error::InvalidArgument("mask values must lie in [0, 1]".into()));
        }
        Ok(d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockConfig {
    pub c: usize,
    pub heads: usize,
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub l: usize,
    /// Object attention can be switched off per block.
    pub object_attention: bool,
}

impl BlockConfig {
    pub fn validate(&self) -> Result<()> {
        if [self.c, self.heads, self.t, self.h, self.w, self.l].contains(&0) {
            return Err(Error::InvalidArgument(format!("zero dimension in {self:?}")));
        }
        if !self.c.is_multiple_of(self.heads) {
            return Err(Error::InvalidArgument(format!(
                "c = {} not divisible by heads = {}",
                self.c, self.heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.c / self.heads
    }

    fn check(&self, d: &Dims) -> Result<()> {
        self.validate()?;
        if d.t != self.t || d.hw != self.h * self.w || d.l != self.l || d.c != self.c {
            return Err(Error::shape("dit_block", format!("bundle {d:?} vs config {self:?}")));
        }
        Ok(())
    }
}

/// Projections of one attention sub-layer. Matrices are `[c × c]`, applied
/// as `x · W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttnWeights {
    pub wq: Tensor,
    pub bq: Tensor,
    pub wk: Tensor,
    pub bk: Tensor,
    pub wv: Tensor,
    pub bv: Tensor,
    pub wo: Tensor,
    pub bo: Tensor,
}

impl AttnWeights {
    pub const NAMES: [&'static str; 8] = ["wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo"];

    pub fn zeros(c: usize) -> Self {
        let m = Tensor::zeros(&[c, c]);
        let b = Tensor::zeros(&[c]);
        AttnWeights {
            wq: m.clone(),
            bq: b.clone(),
            wk: m.clone(),
            bk: b.clone(),
            wv: m.clone(),
            bv: b.clone(),
            wo: m,
            bo: b,
        }
    }

    /// Identity projections, zero biases.
    pub fn identity(c: usize) -> Self {
        let mut w = Self::zeros(c);
        for m in [&mut w.wq, &mut w.wk, &mut w.wv, &mut w.wo] {
            *m = Tensor::identity(c);
        }
        w
    }

    /// Matrices ~ N(0, σ²) with σ = 1/√c, biases ~ N(0, 0.01²).
    pub fn init(r: &mut DetRng, c: usize) -> Self {
        let sigma = 1.0 / math::sqrt(c as f64);
        let mut m = || Tensor::from_parts(vec![c, c], rng::normal_vec(r, c * c, sigma));
        let (wq, wk, wv, wo) = (m(), m(), m(), m());
        let mut b = || Tensor::from_parts(vec![c], rng::normal_vec(r, c, 0.01));
        AttnWeights {
            wq,
            bq: b(),
            wk,
            bk: b(),
            wv,
            bv: b(),
            wo,
            bo: b(),
        }
    }

    pub fn params(&self) -> [&Tensor; 8] {
        [&self.wq, &self.bq, &self.wk, &self.bk, &self.wv, &self.bv, &self.wo, &self.bo]
    }

    pub fn params_mut(&mut self) -> [&mut Tensor; 8] {
        [
            &mut self.wq,
            &mut self.bq,
            &mut self.wk,
            &mut self.bk,
            &mut self.wv,
            &mut self.bv,
            &mut self.wo,
            &mut self.bo,
        ]
    }

    pub fn validate(&self, c: usize) -> Result<()> {
        for (i, p) in self.params().iter().enumerate() {
            let ok = if i % 2 == 0 { p.shape() == [c, c] } else { p.len() == c };
            if !ok {
                return Err(Error::shape(
                    "AttnWeights",
                    format!("{} has shape {:?}, c = {c}", Self::NAMES[i], p.shape()),
                ));
            }
        }
        Ok(())
    }

    pub fn on_tape(&self, tape: &mut Tape) -> AttnVars {
        let [wq, bq, wk, bk, wv, bv, wo, bo] = self.params().map(|p| tape.leaf(p.clone()));
        AttnVars {
            wq,
            bq,
            wk,
            bk,
            wv,
            bv,
            wo,
            bo,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttnVars {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
}

impl AttnVars {
    pub fn all(&self) -> [Var; 8] {
        [self.wq, self.bq, self.wk, self.bk, self.wv, self.bv, self.wo, self.bo]
    }
}

/// Weights of one block: one set per sub-layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockWeights {
    pub full: AttnWeights,
    pub reference: AttnWeights,
    pub object: AttnWeights,
}

impl BlockWeights {
    pub const SUBLAYERS: [&'static str; 3] = ["full", "reference", "object"];

    pub fn zeros(c: usize) -> Self {
        BlockWeights {
            full: AttnWeights::zeros(c),
            reference: AttnWeights::zeros(c),
            object: AttnWeights::zeros(c),
        }
    }

    pub fn init(r: &mut DetRng, c: usize) -> Self {
        BlockWeights {
            full: AttnWeights::init(r, c),
            reference: AttnWeights::init(r, c),
            object: AttnWeights::init(r, c),
        }
    }

    pub fn sublayers(&self) -> [&AttnWeights; 3] {
        [&self.full, &self.reference, &self.object]
    }

    pub fn sublayers_mut(&mut self) -> [&mut AttnWeights; 3] {
        [&mut self.full, &mut self.reference, &mut self.object]
    }

    pub fn on_tape(&self, tape: &mut Tape) -> BlockVars {
        BlockVars {
            full: self.full.on_tape(tape),
            reference: self.reference.on_tape(tape),
            object: self.object.on_tape(tape),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockVars {
    pub full: AttnVars,
    pub reference: AttnVars,
    pub object: AttnVars,
}

/// Bundle whose streams live on a tape as 2-D token matrices.
#[derive(Debug, Clone)]
pub struct TapedBundle {
    /// `[t·hw × c]`, frame-major.
    pub vid: Var,
    /// `[hw × c]`
    pub reference: Var,
    /// `[l × c]`
    pub txt: Var,
    /// `[hw × c]`
    pub obj: Var,
    /// `[t × hw]`
    pub mask: Tensor,
    pub dims: Dims,
}

impl TapedBundle {
    pub fn from_bundle(tape: &mut Tape, b: &StreamBundle) -> Result<Self> {
        let d = b.dims()?;
        Ok(TapedBundle {
            vid: tape.leaf(b.vid.reshape(&[d.t * d.hw, d.c])?),
            reference: tape.leaf(b.reference.reshape(&[d.hw, d.c])?),
            txt: tape.leaf(b.txt.reshape(&[d.l, d.c])?),
            obj: tape.leaf(b.obj.reshape(&[d.hw, d.c])?),
            mask: b.mask.clone(),
            dims: d,
        })
    }

    pub fn to_bundle(&self, tape: &Tape) -> Result<StreamBundle> {
        let d = self.dims;
        Ok(StreamBundle {
            vid: tape.value(self.vid).reshape(&[d.t, d.hw, d.c])?,
            reference: tape.value(self.reference).reshape(&[1, d.hw, d.c])?,
            txt: tape.value(self.txt).reshape(&[1, d.l, d.c])?,
            obj: tape.value(self.obj).reshape(&[1, d.hw, d.c])?,
            mask: self.mask.clone(),
        })
    }

    fn frame(&self, tape: &mut Tape, i: usize) -> Result<Var> {
        let hw = self.dims.hw;
        tape.slice_rows(self.vid, i * hw, (i + 1) * hw)
    }
}

/// Multi-head attention of `q_in` tokens over `kv_in` tokens, scale
/// 1/√(c/heads), no positional terms.
pub fn mha(tape: &mut Tape, q_in: Var, kv_in: Var, w: &AttnVars, heads: usize) -> Result<Var> {
    let c = tape.value(q_in).rows_cols().1;
    if heads == 0 || !c.is_multiple_of(heads) {
        return Err(Error::InvalidArgument(format!("c = {c} not divisible by heads = {heads}")));
    }
    let dh = c / heads;
    let scale = 1.0 / math::sqrt(dh as f64);
    let q = tape.linear(q_in, w.wq, w.bq)?;
    let k = tape.linear(kv_in, w.wk, w.bk)?;
    let v = tape.linear(kv_in, w.wv, w.bv)?;
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (s, e) = (h * dh, (h + 1) * dh);
        let qh = tape.slice_cols(q, s, e)?;
        let kh = tape.slice_cols(k, s, e)?;
        let vh = tape.slice_cols(v, s, e)?;
        let kt = tape.transpose(kh)?;
        let scores = tape.matmul(qh, kt)?;
        let p = tape.softmax_rows(scores, scale)?;
        outs.push(tape.matmul(p, vh)?);
    }
    let o = if heads == 1 { outs[0] } else { tape.concat_cols(&outs)? };
    tape.linear(o, w.wo, w.bo)
}

/// Attention outputs for (vid, ref, txt); no residual.
pub fn full_attention_taped(
    tape: &mut Tape,
    b: &TapedBundle,
    w: &AttnVars,
    heads: usize,
) -> Result<(Var, Var, Var)> {
    let d = b.dims;
    let x = tape.concat_rows(&[b.vid, b.reference, b.txt])?;
    let y = mha(tape, x, x, w, heads)?;
    let nv = d.t * d.hw;
    Ok((
        tape.slice_rows(y, 0, nv)?,
        tape.slice_rows(y, nv, nv + d.hw)?,
        tape.slice_rows(y, nv + d.hw, nv + d.hw + d.l)?,
    ))
}

/// Attention outputs for (vid, ref, txt) under the reference routing; no residual.
pub fn reference_attention_taped(
    tape: &mut Tape,
    b: &TapedBundle,
    w: &AttnVars,
    heads: usize,
) -> Result<(Var, Var, Var)> {
    let mut frames = Vec::with_capacity(b.dims.t);
    for i in 0..b.dims.t {
        let fi = b.frame(tape, i)?;
        let kv = tape.concat_rows(&[fi, b.reference, b.txt])?;
        frames.push(mha(tape, fi, kv, w, heads)?);
    }
    let vid = if frames.len() == 1 { frames[0] } else { tape.concat_rows(&frames)? };
    let ref_kv = tape.concat_rows(&[b.reference, b.txt])?;
    let reference = mha(tape, b.reference, ref_kv, w, heads)?;
    let txt_kv = tape.concat_rows(&[b.vid, b.txt])?;
    let txt = mha(tape, b.txt, txt_kv, w, heads)?;
    Ok((vid, reference, txt))
}

/// Per-frame self-attention over frame tokens ∪ obj tokens, vid outputs
/// only: `U` as `[t·hw × c]`.
pub fn object_update_taped(
    tape: &mut Tape,
    vid: Var,
    obj: Var,
    d: Dims,
    w: &AttnVars,
    heads: usize,
) -> Result<Var> {
    let mut frames = Vec::with_capacity(d.t);
    for i in 0..d.t {
        let fi = tape.slice_rows(vid, i * d.hw, (i + 1) * d.hw)?;
        let x = tape.concat_rows(&[fi, obj])?;
        let y = mha(tape, x, x, w, heads)?;
        frames.push(tape.slice_rows(y, 0, d.hw)?);
    }
    if frames.len() == 1 {
        Ok(frames[0])
    } else {
        tape.concat_rows(&frames)
    }
}

/// Repeats each mask value across `c` channels: `[t·hw × c]`.
pub fn expand_mask(mask: &Tensor, c: usize) -> Tensor {
    let data: Vec<f64> = mask.data().iter().flat_map(|&m| core::iter::repeat_n(m, c)).collect();
    Tensor::from_parts(vec![mask.len(), c], data)
}

/// `base + mask ⊙ U`.
pub fn masked_residual(tape: &mut Tape, base: Var, update: Var, mask: &Tensor) -> Result<Var> {
    let c = tape.value(update).rows_cols().1;
    let scaled = tape.mul_const(update, expand_mask(mask, c))?;
    tape.add(base, scaled)
}

/// New vid stream `F_vid + mask ⊙ U(F_vid, F_obj)`.
pub fn object_attention_taped(tape: &mut Tape, b: &TapedBundle, w: &AttnVars, heads: usize) -> Result<Var> {
    let u = object_update_taped(tape, b.vid, b.obj, b.dims, w, heads)?;
    masked_residual(tape, b.vid, u, &b.mask)
}

/// Pre-norm residual block: full → reference → object.
pub fn dit_block_taped(tape: &mut Tape, b: &TapedBundle, w: &BlockVars, cfg: &BlockConfig) -> Result<TapedBundle> {
    cfg.check(&b.dims)?;
    let heads = cfg.heads;
    let mut cur = b.clone();

    for (routing, wv) in [(0, &w.full), (1, &w.reference)] {
        let normed = TapedBundle {
            vid: tape.layer_norm(cur.vid, LN_EPS)?,
            reference: tape.layer_norm(cur.reference, LN_EPS)?,
            txt: tape.layer_norm(cur.txt, LN_EPS)?,
            ..cur.clone()
        };
        let (dv, dr, dt) = if routing == 0 {
            full_attention_taped(tape, &normed, wv, heads)?
        } else {
            reference_attention_taped(tape, &normed, wv, heads)?
        };
        cur.vid = tape.add(cur.vid, dv)?;
        cur.reference = tape.add(cur.reference, dr)?;
        cur.txt = tape.add(cur.txt, dt)?;
    }

    if cfg.object_attention {
        let nv = tape.layer_norm(cur.vid, LN_EPS)?;
        let no = tape.layer_norm(cur.obj, LN_EPS)?;
        let u = object_update_taped(tape, nv, no, cur.dims, &w.object, heads)?;
        cur.vid = masked_residual(tape, cur.vid, u, &cur.mask)?;
    }
    Ok(cur)
}

fn check_weights(b: &StreamBundle, w: &AttnWeights, heads: usize) -> Result<Dims> {
    let d = b.dims()?;
    w.validate(d.c)?;
    if heads == 0 || d.c % heads != 0 {
        return Err(Error::InvalidArgument(format!("c = {} not divisible by heads = {heads}", d.c)));
    }
    Ok(d)
}

/// Replaces vid/ref/txt with the full-attention outputs.
pub fn full_attention(b: &StreamBundle, w: &AttnWeights, heads: usize) -> Result<StreamBundle> {
    check_weights(b, w, heads)?;
    let mut tape = Tape::new();
    let tb = TapedBundle::from_bundle(&mut tape, b)?;
    let wv = w.on_tape(&mut tape);
    let (v, r, t) = full_attention_taped(&mut tape, &tb, &wv, heads)?;
    TapedBundle {
        vid: v,
        reference: r,
        txt: t,
        ..tb
    }
    .to_bundle(&tape)
}

/// Replaces vid/ref/txt with the reference-attention outputs.
pub fn reference_attention(b: &StreamBundle, w: &AttnWeights, heads: usize) -> Result<StreamBundle> {
    check_weights(b, w, heads)?;
    let mut tape = Tape::new();
    let tb = TapedBundle::from_bundle(&mut tape, b)?;
    let wv = w.on_tape(&mut tape);
    let (v, r, t) = reference_attention_taped(&mut tape, &tb, &wv, heads)?;
    TapedBundle {
        vid: v,
        reference: r,
        txt: t,
        ..tb
    }
    .to_bundle(&tape)
}

/// Masked residual object attention; only vid changes.
pub fn object_attention(b: &StreamBundle, w: &AttnWeights, heads: usize) -> Result<StreamBundle> {
    let d = check_weights(b, w, heads)?;
    let mut tape = Tape::new();
    let tb = TapedBundle::from_bundle(&mut tape, b)?;
    let wv = w.on_tape(&mut tape);
    let v = object_attention_taped(&mut tape, &tb, &wv, heads)?;
    Ok(StreamBundle {
        vid: tape.value(v).reshape(&[d.t, d.hw, d.c])?,
        ..b.clone()
    })
}

pub fn dit_block(b: &StreamBundle, w: &BlockWeights, cfg: &BlockConfig) -> Result<StreamBundle> {
    for s in w.sublayers() {
        s.validate(cfg.c)?;
    }
    let mut tape = Tape::new();
    let tb = TapedBundle::from_bundle(&mut tape, b)?;
    let wv = w.on_tape(&mut tape);
    let out = dit_block_taped(&mut tape, &tb, &wv, cfg)?;
    let mut res = out.to_bundle(&tape)?;
    // the tape copy of obj is never written; hand back the caller's tensor
    res.obj = b.obj.clone();
    Ok(res)
}
