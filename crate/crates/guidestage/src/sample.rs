//! Chained-clip sampling from trained toy weights and compiled guidance.

use std::collections::BTreeMap;

use guidestage_core::flow::{chain_clips, ClipModel, ClipWindow, SamplerConfig};
use guidestage_core::model::{self, Conditioning, ToyDitConfig, ToyDitWeights};
use guidestage_core::raster::{self, GUIDANCE_CHANNELS};
use guidestage_core::vae::LATENT_CHANNELS;
use guidestage_core::{Result, Tensor};

use crate::error::{CliError, CliResult};

/// `[T × C × H × W]` → `[T × C × size × size]` by block averaging; the
/// frame must be square with a side divisible by `size`.
pub fn resample_frames(frames: &Tensor, size: usize) -> CliResult<Tensor> {
    let s = frames.shape();
    if s.len() != 4 || s[1] != GUIDANCE_CHANNELS || s[2] != s[3] || size == 0 || !s[2].is_multiple_of(size) {
        return Err(CliError::Shape(format!("guidance {s:?} cannot be resampled to {size}×{size}")));
    }
    let (t, c, n) = (s[0], s[1], s[2]);
    let f = n / size;
    if f == 1 {
        return Ok(frames.clone());
    }
    let d = frames.data();
    let mut out = Vec::with_capacity(t * c * size * size);
    for plane in 0..t * c {
        let base = plane * n * n;
        for i in 0..size {
            for j in 0..size {
                let mut acc = 0.0;
                for di in 0..f {
                    for dj in 0..f {
                        acc += d[base + (i * f + di) * n + j * f + dj];
                    }
                }
                out.push(acc / (f * f) as f64);
            }
        }
    }
    Ok(Tensor::new(&[t, c, size, size], out)?)
}

/// Toy DiT driven clip by clip: clip `k` sees plan frames starting at its
/// window's first frame, wrapping around the plan.
pub struct ToyClipModel<'a> {
    pub weights: &'a ToyDitWeights,
    pub cfg: ToyDitConfig,
    /// `[P × 4 × S × S]` guidance at the model's frame size.
    pub guidance: Tensor,
    /// Reference, product and text streams shared by every clip.
    pub base: Conditioning,
    pub clip_frames: usize,
    cache: BTreeMap<usize, Conditioning>,
}

impl<'a> ToyClipModel<'a> {
    pub fn new(
        weights: &'a ToyDitWeights,
        cfg: ToyDitConfig,
        guidance: Tensor,
        base: Conditioning,
        clip_frames: usize,
    ) -> Self {
        ToyClipModel {
            weights,
            cfg,
            guidance,
            base,
            clip_frames,
            cache: BTreeMap::new(),
        }
    }

    fn cond(&mut self, w: ClipWindow) -> Result<&Conditioning> {
        if !self.cache.contains_key(&w.index) {
            let p = self.guidance.shape()[0];
            let frames: Vec<Tensor> = (0..w.frames)
                .map(|k| self.guidance.slice_outer((w.start_frame + k) % p, (w.start_frame + k) % p + 1))
                .collect::<Result<_>>()?;
            let refs: Vec<&Tensor> = frames.iter().collect();
            let guidance = Tensor::concat_outer(&refs)?;
            let cond = Conditioning {
                mask: raster::box_token_mask(&guidance)?,
                guidance,
                ..self.base.clone()
            };
            cond.grid()?;
            self.cache.insert(w.index, cond);
        }
        Ok(&self.cache[&w.index])
    }
}

impl ClipModel for ToyClipModel<'_> {
    fn clip_shape(&self) -> Vec<usize> {
        let s = self.guidance.shape();
        vec![self.clip_frames, LATENT_CHANNELS, s[2] / raster::DOWNSAMPLE, s[3] / raster::DOWNSAMPLE]
    }

    fn velocity(&mut self, clip: ClipWindow, x: &Tensor, t: f64, conditioned: bool) -> Result<Tensor> {
        let (weights, cfg) = (self.weights, self.cfg);
        let cond = self.cond(clip)?;
        model::velocity(weights, &cfg, cond, x, t, conditioned)
    }
}

/// Samples `n_clips` chained clips.
pub fn sample_clips(model: &mut ToyClipModel<'_>, scfg: &SamplerConfig, n_clips: usize) -> CliResult<Vec<Tensor>> {
    Ok(chain_clips(model, scfg, n_clips)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resample_block_means() {
        let t = Tensor::new(&[1, 4, 2, 2], (0..16).map(|v| v as f64).collect()).unwrap();
        let r = resample_frames(&t, 1).unwrap();
        assert_eq!(r.data(), &[1.5, 5.5, 9.5, 13.5]);
        assert!(resample_frames(&t, 3).is_err());
        assert!(matches!(resample_frames(&Tensor::zeros(&[1, 3, 4, 4]), 2), Err(CliError::Shape(_))));
    }
}
