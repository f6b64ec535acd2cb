//! Toy conditioned velocity model: pose encoder → token projection →
//! DiT blocks → per-token velocity head.
//!
//! Video tokens are `x_t ‖ pose features ‖ t` per latent cell, projected to
//! `c` channels. The reference and product latents are embedded by their own
//! linear maps; the text stream enters as produced by the caption encoder.
//! The unconditional branch zeroes the reference, text and product streams;
//! pose guidance feeds both branches.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::attention::{BlockConfig, BlockVars, BlockWeights, TapedBundle, LN_EPS};
use crate::error::{Error, Result};
use crate::flow::{self, FlowSample, RegionWeights};
use crate::math;
use crate::raster::{self, PoseEncoderVars, PoseEncoderWeights, POSE_FEATURES};
use crate::rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::vae::LATENT_CHANNELS;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ToyDitConfig {
    pub c: usize,
    pub heads: usize,
    pub blocks: usize,
    pub object_attention: bool,
}

impl Default for ToyDitConfig {
    fn default() -> Self {
        ToyDitConfig {
            c: 16,
            heads: 2,
            blocks: 1,
            object_attention: true,
        }
    }
}

impl ToyDitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.c == 0 || self.heads == 0 || !self.c.is_multiple_of(self.heads) || self.blocks == 0 {
            return Err(Error::InvalidArgument(format!("invalid model config {self:?}")));
        }
        Ok(())
    }

    fn token_in(&self) -> usize {
        LATENT_CHANNELS + POSE_FEATURES + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyDitWeights {
    pub pose: PoseEncoderWeights,
    pub w_in: Tensor,
    pub b_in: Tensor,
    pub w_ref: Tensor,
    pub b_ref: Tensor,
    pub w_obj: Tensor,
    pub b_obj: Tensor,
    pub blocks: Vec<BlockWeights>,
    pub w_out: Tensor,
    pub b_out: Tensor,
}

fn normal(r: &mut rng::DetRng, shape: &[usize], sigma: f64) -> Tensor {
    Tensor::new(shape, rng::normal_vec(r, shape.iter().product(), sigma)).expect("finite init")
}

impl ToyDitWeights {
    pub fn init(cfg: &ToyDitConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.c;
        let mut r = rng::derived(seed, 1);
        let xavier = |n_in: usize| 1.0 / math::sqrt(n_in as f64);
        Ok(ToyDitWeights {
            pose: PoseEncoderWeights::init(seed),
            w_in: normal(&mut r, &[cfg.token_in(), c], xavier(cfg.token_in())),
            b_in: Tensor::zeros(&[c]),
            w_ref: normal(&mut r, &[LATENT_CHANNELS, c], xavier(LATENT_CHANNELS)),
            b_ref: Tensor::zeros(&[c]),
            w_obj: normal(&mut r, &[LATENT_CHANNELS, c], xavier(LATENT_CHANNELS)),
            b_obj: Tensor::zeros(&[c]),
            blocks: (0..cfg.blocks).map(|_| BlockWeights::init(&mut r, c)).collect(),
            w_out: normal(&mut r, &[c, LATENT_CHANNELS], xavier(c)),
            b_out: Tensor::zeros(&[LATENT_CHANNELS]),
        })
    }

    /// Every parameter with a stable dotted name, in a fixed order.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = Vec::new();
        for (n, t) in self.pose.params() {
            out.push((format!("pose.{n}"), t));
        }
        for (n, t) in [
            ("in.w", &self.w_in),
            ("in.b", &self.b_in),
            ("ref.w", &self.w_ref),
            ("ref.b", &self.b_ref),
            ("obj.w", &self.w_obj),
            ("obj.b", &self.b_obj),
        ] {
            out.push((String::from(n), t));
        }
        for (i, b) in self.blocks.iter().enumerate() {
            for (s, w) in BlockWeights::SUBLAYERS.iter().zip(b.sublayers()) {
                for (n, t) in crate::attention::AttnWeights::NAMES.iter().zip(w.params()) {
                    out.push((format!("block{i}.{s}.{n}"), t));
                }
            }
        }
        out.push((String::from("out.w"), &self.w_out));
        out.push((String::from("out.b"), &self.b_out));
        out
    }

    /// Mutable parameters in [`named_params`](Self::named_params) order.
    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        out.extend(self.pose.params_mut());
        out.extend([
            &mut self.w_in,
            &mut self.b_in,
            &mut self.w_ref,
            &mut self.b_ref,
            &mut self.w_obj,
            &mut self.b_obj,
        ]);
        for b in &mut self.blocks {
            for w in b.sublayers_mut() {
                out.extend(w.params_mut());
            }
        }
        out.push(&mut self.w_out);
        out.push(&mut self.b_out);
        out
    }

    /// Rebuilds weights from named tensors (e.g. loaded from disk).
    pub fn from_named(cfg: &ToyDitConfig, mut get: impl FnMut(&str) -> Option<Tensor>) -> Result<Self> {
        let mut w = Self::init(cfg, 0)?;
        let names: Vec<String> = w.named_params().into_iter().map(|(n, _)| n).collect();
        for (name, slot) in names.iter().zip(w.params_mut()) {
            let t = get(name).ok_or_else(|| Error::InvalidArgument(format!("missing weight {name}")))?;
            if t.shape() != slot.shape() {
                return Err(Error::shape(
                    "ToyDitWeights",
                    format!("{name}: {:?}, expected {:?}", t.shape(), slot.shape()),
                ));
            }
            *slot = t;
        }
        Ok(w)
    }

    pub fn on_tape(&self, tape: &mut Tape) -> ToyDitVars {
        ToyDitVars {
            pose: self.pose.on_tape(tape),
            w_in: tape.leaf(self.w_in.clone()),
            b_in: tape.leaf(self.b_in.clone()),
            w_ref: tape.leaf(self.w_ref.clone()),
            b_ref: tape.leaf(self.b_ref.clone()),
            w_obj: tape.leaf(self.w_obj.clone()),
            b_obj: tape.leaf(self.b_obj.clone()),
            blocks: self.blocks.iter().map(|b| b.on_tape(tape)).collect(),
            w_out: tape.leaf(self.w_out.clone()),
            b_out: tape.leaf(self.b_out.clone()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToyDitVars {
    pub pose: PoseEncoderVars,
    pub w_in: Var,
    pub b_in: Var,
    pub w_ref: Var,
    pub b_ref: Var,
    pub w_obj: Var,
    pub b_obj: Var,
    pub blocks: Vec<BlockVars>,
    pub w_out: Var,
    pub b_out: Var,
}

impl ToyDitVars {
    /// Parameter vars in [`ToyDitWeights::named_params`] order.
    pub fn all_mut(&mut self) -> Vec<&mut Var> {
        let mut out: Vec<&mut Var> = vec![
            &mut self.pose.w1,
            &mut self.pose.b1,
            &mut self.pose.w2,
            &mut self.pose.b2,
            &mut self.w_in,
            &mut self.b_in,
            &mut self.w_ref,
            &mut self.b_ref,
            &mut self.w_obj,
            &mut self.b_obj,
        ];
        for b in &mut self.blocks {
            for s in [&mut b.full, &mut b.reference, &mut b.object] {
                out.extend([
                    &mut s.wq, &mut s.bq, &mut s.wk, &mut s.bk, &mut s.wv, &mut s.bv, &mut s.wo, &mut s.bo,
                ]);
            }
        }
        out.push(&mut self.w_out);
        out.push(&mut self.b_out);
        out
    }

    pub fn all(&self) -> Vec<Var> {
        self.clone().all_mut().into_iter().map(|v| *v).collect()
    }
}

/// Everything the model conditions on for one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct Conditioning {
    /// `[T × 4 × H × W]` guidance frames.
    pub guidance: Tensor,
    /// `[1 × 4 × h × w]` reference-image latent.
    pub reference: Tensor,
    /// `[1 × 4 × h × w]` product latent.
    pub obj: Tensor,
    /// `[1 × l × c]` text stream.
    pub txt: Tensor,
    /// `[T × h·w]` product-region mask on the latent grid.
    pub mask: Tensor,
}

impl Conditioning {
    /// `(T, h, w)` of the latent grid.
    pub fn grid(&self) -> Result<(usize, usize, usize)> {
        let g = self.guidance.shape();
        if g.len() != 4 {
            return Err(Error::shape("Conditioning", format!("guidance {g:?}")));
        }
        let (t, h, w) = (g[0], g[2] / raster::DOWNSAMPLE, g[3] / raster::DOWNSAMPLE);
        let lat = [1, LATENT_CHANNELS, h, w];
        if self.reference.shape() != lat || self.obj.shape() != lat {
            return Err(Error::shape(
                "Conditioning",
                format!("reference {:?} / obj {:?}, expected {lat:?}", self.reference.shape(), self.obj.shape()),
            ));
        }
        if self.mask.shape() != [t, h * w] {
            return Err(Error::shape("Conditioning", format!("mask {:?}", self.mask.shape())));
        }
        Ok((t, h, w))
    }
}

/// `[1 × 4 × h × w]` latent as `[h·w × 4]` tokens.
fn latent_tokens(x: &Tensor) -> Result<Tensor> {
    let s = x.shape();
    crate::tape::permute(x, &[0, 2, 3, 1])?.reshape(&[s[0] * s[2] * s[3], s[1]])
}

/// Velocity prediction `[T × 4 × h × w]` for `x_t` at flow time `t`.
pub fn forward_taped(
    tape: &mut Tape,
    vars: &ToyDitVars,
    cfg: &ToyDitConfig,
    cond: &Conditioning,
    x_t: Var,
    t: f64,
    conditioned: bool,
) -> Result<Var> {
    cfg.validate()?;
    let (frames, h, w) = cond.grid()?;
    let hw = h * w;
    let n = frames * hw;
    let c = cfg.c;
    if tape.value(x_t).shape() != [frames, LATENT_CHANNELS, h, w] {
        return Err(Error::shape(
            "forward",
            format!("x_t {:?} vs grid {frames}×{h}×{w}", tape.value(x_t).shape()),
        ));
    }
    let l = cond.txt.shape()[1];
    if cond.txt.shape() != [1, l, c] {
        return Err(Error::shape("forward", format!("txt {:?} for c = {c}", cond.txt.shape())));
    }

    let g = tape.leaf(cond.guidance.clone());
    let pose = raster::pose_encode_taped(tape, g, &vars.pose)?;
    let pose = tape.permute(pose, &[0, 2, 3, 1])?;
    let pose = tape.reshape(pose, &[n, POSE_FEATURES])?;
    let x = tape.permute(x_t, &[0, 2, 3, 1])?;
    let x = tape.reshape(x, &[n, LATENT_CHANNELS])?;
    let tcol = tape.leaf(Tensor::full(&[n, 1], t));
    let tokens = tape.concat_cols(&[x, pose, tcol])?;
    let vid = tape.linear(tokens, vars.w_in, vars.b_in)?;

    let (reference, txt, obj) = if conditioned {
        let rt = tape.leaf(latent_tokens(&cond.reference)?);
        let ot = tape.leaf(latent_tokens(&cond.obj)?);
        (
            tape.linear(rt, vars.w_ref, vars.b_ref)?,
            tape.leaf(cond.txt.reshape(&[l, c])?),
            tape.linear(ot, vars.w_obj, vars.b_obj)?,
        )
    } else {
        (
            tape.leaf(Tensor::zeros(&[hw, c])),
            tape.leaf(Tensor::zeros(&[l, c])),
            tape.leaf(Tensor::zeros(&[hw, c])),
        )
    };

    let mut bundle = TapedBundle {
        vid,
        reference,
        txt,
        obj,
        mask: cond.mask.clone(),
        dims: crate::attention::Dims { t: frames, hw, l, c },
    };
    let bcfg = BlockConfig {
        c,
        heads: cfg.heads,
        t: frames,
        h,
        w,
        l,
        object_attention: cfg.object_attention,
    };
    for b in &vars.blocks {
        bundle = crate::attention::dit_block_taped(tape, &bundle, b, &bcfg)?;
    }
    let out = tape.layer_norm(bundle.vid, LN_EPS)?;
    let out = tape.linear(out, vars.w_out, vars.b_out)?;
    let out = tape.reshape(out, &[frames, h, w, LATENT_CHANNELS])?;
    tape.permute(out, &[0, 3, 1, 2])
}

/// Untaped velocity prediction.
pub fn velocity(
    weights: &ToyDitWeights,
    cfg: &ToyDitConfig,
    cond: &Conditioning,
    x_t: &Tensor,
    t: f64,
    conditioned: bool,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let vars = weights.on_tape(&mut tape);
    let x = tape.leaf(x_t.clone());
    let v = forward_taped(&mut tape, &vars, cfg, cond, x, t, conditioned)?;
    Ok(tape.value(v).clone())
}

/// Records the region-weighted flow loss for one sample; returns
/// `(loss node, parameter vars)`.
pub fn loss_taped(
    tape: &mut Tape,
    weights: &ToyDitWeights,
    cfg: &ToyDitConfig,
    cond: &Conditioning,
    sample: &FlowSample,
    rw: &RegionWeights,
    conditioned: bool,
) -> Result<(Var, ToyDitVars)> {
    let vars = weights.on_tape(tape);
    let loss = loss_with_vars(tape, &vars, cfg, cond, sample, rw, conditioned)?;
    Ok((loss, vars))
}

pub fn loss_with_vars(
    tape: &mut Tape,
    vars: &ToyDitVars,
    cfg: &ToyDitConfig,
    cond: &Conditioning,
    sample: &FlowSample,
    rw: &RegionWeights,
    conditioned: bool,
) -> Result<Var> {
    let x = tape.leaf(sample.x_t.clone());
    let v = forward_taped(tape, vars, cfg, cond, x, sample.t, conditioned)?;
    flow::weighted_fm_loss_taped(tape, v, sample, rw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::grad_check;

    fn small_cond(seed: u64, c: usize) -> Conditioning {
        let mut r = rng::seeded(seed);
        let t = 2;
        Conditioning {
            guidance: Tensor::new(&[t, 4, 8, 8], (0..t * 256).map(|_| rng::uniform(&mut r, 0.0, 1.0)).collect()).unwrap(),
            reference: normal(&mut r, &[1, 4, 2, 2], 1.0),
            obj: normal(&mut r, &[1, 4, 2, 2], 1.0),
            txt: crate::caption::encode_text("red cup", c, 8).unwrap(),
            mask: Tensor::new(&[t, 4], alloc::vec![1.0, 0.5, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0]).unwrap(),
        }
    }

    #[test]
    fn forward_shapes_and_branches() {
        let cfg = ToyDitConfig {
            c: 4,
            heads: 2,
            blocks: 1,
            object_attention: true,
        };
        let w = ToyDitWeights::init(&cfg, 3).unwrap();
        let cond = small_cond(1, 4);
        let x = Tensor::zeros(&[2, 4, 2, 2]);
        let vc = velocity(&w, &cfg, &cond, &x, 0.3, true).unwrap();
        let vu = velocity(&w, &cfg, &cond, &x, 0.3, false).unwrap();
        assert_eq!(vc.shape(), &[2, 4, 2, 2]);
        assert_ne!(vc, vu);
        assert!(velocity(&w, &cfg, &cond, &Tensor::zeros(&[2, 4, 2, 3]), 0.3, true).is_err());
    }

    #[test]
    fn named_params_round_trip() {
        let cfg = ToyDitConfig::default();
        let w = ToyDitWeights::init(&cfg, 9).unwrap();
        let named: Vec<(String, Tensor)> = w.named_params().into_iter().map(|(n, t)| (n, t.clone())).collect();
        let mut names: Vec<&String> = named.iter().map(|(n, _)| n).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), named.len());
        let back = ToyDitWeights::from_named(&cfg, |n| named.iter().find(|(k, _)| k == n).map(|(_, t)| t.clone())).unwrap();
        assert_eq!(back, w);
        let mut tape = Tape::new();
        assert_eq!(w.on_tape(&mut tape).all().len(), named.len());
    }

    #[test]
    fn loss_gradient_matches_differences() {
        let cfg = ToyDitConfig {
            c: 4,
            heads: 2,
            blocks: 1,
            object_attention: true,
        };
        let w = ToyDitWeights::init(&cfg, 4).unwrap();
        let cond = small_cond(2, 4);
        let mut r = rng::seeded(5);
        let s = flow::make_flow_sample(&normal(&mut r, &[2, 4, 2, 2], 1.0), &normal(&mut r, &[2, 4, 2, 2], 1.0), 0.4).unwrap();
        let mut rw = RegionWeights::uniform(&[2, 2, 2]);
        rw.map.data_mut()[0] = 3.0;
        rw.product = 3.0;
        // pose.w2 and block0.object.wq
        for idx in [2, 10 + 16] {
            let (w2, cond2, s2, rw2) = (w.clone(), cond.clone(), s.clone(), rw.clone());
            let f = move |tape: &mut Tape, p: Var| {
                let mut vars = w2.on_tape(tape);
                *vars.all_mut()[idx] = p;
                loss_with_vars(tape, &vars, &cfg, &cond2, &s2, &rw2, true)
            };
            let x = w.named_params()[idx].1.clone();
            let err = grad_check(f, &x, 1e-6).unwrap();
            assert!(err < 1e-4, "param {}: {err}", w.named_params()[idx].0);
        }
    }
}
