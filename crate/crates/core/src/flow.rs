//! Linear-path flow matching: samples, region-weighted loss, CFG, Euler
//! integration and sequential clip chaining.
//!
//! Path: `x_t = (1 − t)·x0 + t·x1`, target velocity `x1 − x0`.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const DEFAULT_CFG_SCALE: f64 = 2.5;
pub const DEFAULT_CLIP_FRAMES: usize = 65;

#[derive(Debug, Clone, PartialEq)]
pub struct FlowSample {
    pub x0: Tensor,
    pub x1: Tensor,
    pub t: f64,
    pub x_t: Tensor,
    pub v_target: Tensor,
}

pub fn make_flow_sample(x0: &Tensor, x1: &Tensor, t: f64) -> Result<FlowSample> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidArgument(format!("flow time {t} outside [0, 1]")));
    }
    let x_t = x0.zip_map(x1, "make_flow_sample", |a, b| (1.0 - t) * a + t * b)?;
    let v_target = x1.sub(x0)?;
    Ok(FlowSample {
        x0: x0.clone(),
        x1: x1.clone(),
        t,
        x_t,
        v_target,
    })
}

/// Region labels stored in [`RegionWeights::map`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Default = 0,
    Face = 1,
    Hands = 2,
    Product = 3,
}

impl Region {
    pub fn label(self) -> f64 {
        self as u8 as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionWeights {
    pub face: f64,
    pub hands: f64,
    pub product: f64,
    pub default: f64,
    /// Labels per latent cell: either the full latent shape, or
    /// `[T × H × W]` for `[T × C × H × W]` latents (broadcast over channels).
    pub map: Tensor,
}

impl RegionWeights {
    pub fn uniform(map_shape: &[usize]) -> Self {
        RegionWeights {
            face: 1.0,
            hands: 1.0,
            product: 1.0,
            default: 1.0,
            map: Tensor::zeros(map_shape),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (n, w) in [("face", self.face), ("hands", self.hands), ("product", self.product), ("default", self.default)] {
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::InvalidArgument(format!("region weight {n} = {w} must be > 0")));
            }
        }
        if self.map.data().iter().any(|&l| !matches!(l as i64, 0..=3) || l != (l as i64) as f64) {
            return Err(Error::InvalidArgument("region labels must be 0..=3".into()));
        }
        Ok(())
    }

    fn weight_of(&self, label: f64) -> f64 {
        match label as u8 {
            1 => self.face,
            2 => self.hands,
            3 => self.product,
            _ => self.default,
        }
    }

    /// Per-element weights for a tensor of `shape`.
    pub fn weights_for(&self, shape: &[usize]) -> Result<Tensor> {
        self.validate()?;
        let ms = self.map.shape();
        if ms == shape {
            return Ok(self.map.map(|l| self.weight_of(l)));
        }
        if shape.len() == 4 && ms == [shape[0], shape[2], shape[3]] {
            let plane = shape[2] * shape[3];
            let mut data = Vec::with_capacity(shape.iter().product());
            for f in 0..shape[0] {
                let labels = &self.map.data()[f * plane..(f + 1) * plane];
                for _ in 0..shape[1] {
                    data.extend(labels.iter().map(|&l| self.weight_of(l)));
                }
            }
            return Tensor::new(shape, data);
        }
        Err(Error::shape("RegionWeights", format!("map {ms:?} for latent {shape:?}")))
    }
}

/// `Σ w·(v_pred − v_target)² / Σ w`.
pub fn weighted_fm_loss(v_pred: &Tensor, sample: &FlowSample, rw: &RegionWeights) -> Result<f64> {
    if v_pred.shape() != sample.v_target.shape() {
        return Err(Error::shape(
            "weighted_fm_loss",
            format!("{:?} vs {:?}", v_pred.shape(), sample.v_target.shape()),
        ));
    }
    let w = rw.weights_for(v_pred.shape())?;
    let mut num = 0.0;
    let mut den = 0.0;
    for ((&p, &t), &wi) in v_pred.data().iter().zip(sample.v_target.data()).zip(w.data()) {
        num += wi * (p - t) * (p - t);
        den += wi;
    }
    Ok(num / den)
}

/// Taped loss; `v_pred` must already have the target's shape.
pub fn weighted_fm_loss_taped(tape: &mut Tape, v_pred: Var, sample: &FlowSample, rw: &RegionWeights) -> Result<Var> {
    let shape = sample.v_target.shape().to_vec();
    let w = rw.weights_for(&shape)?;
    tape.weighted_sq_err(v_pred, sample.v_target.clone(), w)
}

/// `v_uncond + s·(v_cond − v_uncond)`.
pub fn cfg_combine(v_cond: &Tensor, v_uncond: &Tensor, s: f64) -> Result<Tensor> {
    v_cond.zip_map(v_uncond, "cfg_combine", |c, u| u + s * (c - u))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig {
    pub steps: usize,
    pub cfg_scale: f64,
    pub clip_frames: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            steps: 8,
            cfg_scale: DEFAULT_CFG_SCALE,
            clip_frames: DEFAULT_CLIP_FRAMES,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidArgument("sampler needs steps >= 1".into()));
        }
        if !self.cfg_scale.is_finite() {
            return Err(Error::NonFinite("cfg_scale"));
        }
        if self.clip_frames < 2 {
            return Err(Error::InvalidArgument("clip_frames must be >= 2".into()));
        }
        Ok(())
    }
}

/// Euler integration from t = 0 to 1. `velocity(x, t, conditioned)`.
///
/// At `cfg_scale == 1` the unconditional branch is not evaluated.
pub fn euler_sample<F>(mut velocity: F, x0: &Tensor, cfg: &SamplerConfig) -> Result<Tensor>
where
    F: FnMut(&Tensor, f64, bool) -> Result<Tensor>,
{
    euler_sample_pinned(&mut velocity, x0, cfg, None)
}

/// Euler integration keeping the leading slice equal to `pinned` throughout.
fn euler_sample_pinned<F>(velocity: &mut F, x0: &Tensor, cfg: &SamplerConfig, pinned: Option<&Tensor>) -> Result<Tensor>
where
    F: FnMut(&Tensor, f64, bool) -> Result<Tensor>,
{
    cfg.validate()?;
    let dt = 1.0 / cfg.steps as f64;
    let mut x = x0.clone();
    for k in 0..cfg.steps {
        let t = k as f64 / cfg.steps as f64;
        let vc = velocity(&x, t, true)?;
        let v = if cfg.cfg_scale == 1.0 {
            vc
        } else {
            let vu = velocity(&x, t, false)?;
            cfg_combine(&vc, &vu, cfg.cfg_scale)?
        };
        if v.shape() != x.shape() {
            return Err(Error::shape("euler_sample", format!("velocity {:?} for x {:?}", v.shape(), x.shape())));
        }
        if !v.all_finite() {
            return Err(Error::NonFinite("euler_sample velocity"));
        }
        let data = x.data_mut();
        for (xi, vi) in data.iter_mut().zip(v.data()) {
            *xi += dt * vi;
        }
        if let Some(p) = pinned {
            data[..p.len()].copy_from_slice(p.data());
        }
    }
    Ok(x)
}

/// Position of one clip in a chained sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClipWindow {
    pub index: usize,
    /// First global frame; consecutive clips share one boundary frame.
    pub start_frame: usize,
    pub frames: usize,
}

/// Velocity model driven clip by clip.
pub trait ClipModel {
    /// Latent shape of one clip; the leading axis is time.
    fn clip_shape(&self) -> Vec<usize>;

    fn velocity(&mut self, clip: ClipWindow, x: &Tensor, t: f64, conditioned: bool) -> Result<Tensor>;
}

/// Samples `n_clips` clips; clip k > 0 starts from clip k − 1's last
/// temporal slice (verbatim) followed by fresh noise.
pub fn chain_clips<M: ClipModel>(model: &mut M, cfg: &SamplerConfig, n_clips: usize) -> Result<Vec<Tensor>> {
    if n_clips == 0 {
        return Err(Error::InvalidArgument("n_clips must be >= 1".into()));
    }
    cfg.validate()?;
    let shape = model.clip_shape();
    if shape.is_empty() || shape[0] != cfg.clip_frames {
        return Err(Error::shape(
            "chain_clips",
            format!("model clip shape {shape:?} vs clip_frames {}", cfg.clip_frames),
        ));
    }
    let n: usize = shape.iter().product();
    let slice = n / shape[0];
    let mut clips: Vec<Tensor> = Vec::with_capacity(n_clips);
    for index in 0..n_clips {
        let window = ClipWindow {
            index,
            start_frame: index * (cfg.clip_frames - 1),
            frames: cfg.clip_frames,
        };
        let mut r = rng::derived(cfg.seed, index as u64);
        let mut noise = Tensor::new(&shape, rng::normal_vec(&mut r, n, 1.0))?;
        let pinned = match clips.last() {
            Some(prev) => {
                let last = prev.slice_outer(shape[0] - 1, shape[0])?;
                noise.data_mut()[..slice].copy_from_slice(last.data());
                Some(last)
            }
            None => None,
        };
        let mut vel = |x: &Tensor, t: f64, c: bool| model.velocity(window, x, t, c);
        clips.push(euler_sample_pinned(&mut vel, &noise, cfg, pinned.as_ref())?);
    }
    Ok(clips)
}

/// Concatenates chained clips, counting each shared boundary slice once.
pub fn join_clips(clips: &[Tensor]) -> Result<Tensor> {
    let first = clips.first().ok_or(Error::EmptyInput("join_clips"))?;
    let mut parts: Vec<Tensor> = Vec::with_capacity(clips.len());
    parts.push(first.clone());
    for c in &clips[1..] {
        parts.push(c.slice_outer(1, c.shape()[0])?);
    }
    let refs: Vec<&Tensor> = parts.iter().collect();
    Tensor::concat_outer(&refs)
}
