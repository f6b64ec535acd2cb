//! Stand-in latent codec: 4×4 patch average, then a fixed seeded 3→4
//! channel mix. Decoding applies the mix's pseudo-inverse and expands each
//! cell to a 4×4 block. Not invertible in general.

use alloc::format;
use alloc::vec;

use crate::error::{Error, Result};
use crate::raster::DOWNSAMPLE;
use crate::rng;
use crate::tensor::Tensor;

pub const LATENT_CHANNELS: usize = 4;
pub const IMAGE_CHANNELS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct PatchVae {
    /// `mix[o][i]`: latent channel `o` from color channel `i`.
    pub mix: [[f64; IMAGE_CHANNELS]; LATENT_CHANNELS],
    pinv: [[f64; LATENT_CHANNELS]; IMAGE_CHANNELS],
}

impl PatchVae {
    /// Identity on the first three channels plus a seeded perturbation, so
    /// the mix stays well conditioned.
    pub fn new(seed: u64) -> Self {
        let mut r = rng::seeded(seed);
        let noise = rng::normal_vec(&mut r, LATENT_CHANNELS * IMAGE_CHANNELS, 0.3);
        let mut mix = [[0.0; IMAGE_CHANNELS]; LATENT_CHANNELS];
        for (o, row) in mix.iter_mut().enumerate() {
            for (i, m) in row.iter_mut().enumerate() {
                *m = noise[o * IMAGE_CHANNELS + i] + if o == i { 1.0 } else { 0.0 };
            }
        }
        let pinv = pseudo_inverse(&mix).expect("perturbed identity mix has full column rank");
        PatchVae { mix, pinv }
    }

    /// `[T × 3 × H × W]` image in `[0, 1]` → `[T × 4 × H/4 × W/4]`.
    pub fn encode(&self, image: &Tensor) -> Result<Tensor> {
        let s = image.shape();
        if s.len() != 4 || s[1] != IMAGE_CHANNELS || !s[2].is_multiple_of(DOWNSAMPLE) || !s[3].is_multiple_of(DOWNSAMPLE) {
            return Err(Error::shape("PatchVae::encode", format!("image {s:?}")));
        }
        let (t, h, w) = (s[0], s[2], s[3]);
        let (gh, gw) = (h / DOWNSAMPLE, w / DOWNSAMPLE);
        let d = image.data();
        let mut out = vec![0.0; t * LATENT_CHANNELS * gh * gw];
        let norm = (DOWNSAMPLE * DOWNSAMPLE) as f64;
        for f in 0..t {
            for gi in 0..gh {
                for gj in 0..gw {
                    let mut avg = [0.0; IMAGE_CHANNELS];
                    for (c, a) in avg.iter_mut().enumerate() {
                        let base = (f * IMAGE_CHANNELS + c) * h * w;
                        for di in 0..DOWNSAMPLE {
                            for dj in 0..DOWNSAMPLE {
                                *a += d[base + (gi * DOWNSAMPLE + di) * w + gj * DOWNSAMPLE + dj];
                            }
                        }
                        *a /= norm;
                    }
                    for (o, row) in self.mix.iter().enumerate() {
                        let v: f64 = row.iter().zip(&avg).map(|(m, a)| m * a).sum();
                        out[((f * LATENT_CHANNELS + o) * gh + gi) * gw + gj] = v;
                    }
                }
            }
        }
        Tensor::new(&[t, LATENT_CHANNELS, gh, gw], out)
    }

    /// `[T × 4 × h × w]` → `[T × 3 × 4h × 4w]`, nearest-neighbor expansion.
    pub fn decode(&self, latent: &Tensor) -> Result<Tensor> {
        let s = latent.shape();
        if s.len() != 4 || s[1] != LATENT_CHANNELS {
            return Err(Error::shape("PatchVae::decode", format!("latent {s:?}")));
        }
        let (t, gh, gw) = (s[0], s[2], s[3]);
        let (h, w) = (gh * DOWNSAMPLE, gw * DOWNSAMPLE);
        let d = latent.data();
        let mut out = vec![0.0; t * IMAGE_CHANNELS * h * w];
        for f in 0..t {
            for gi in 0..gh {
                for gj in 0..gw {
                    for (c, row) in self.pinv.iter().enumerate() {
                        let v: f64 = row
                            .iter()
                            .enumerate()
                            .map(|(o, p)| p * d[((f * LATENT_CHANNELS + o) * gh + gi) * gw + gj])
                            .sum();
                        let base = (f * IMAGE_CHANNELS + c) * h * w;
                        for di in 0..DOWNSAMPLE {
                            for dj in 0..DOWNSAMPLE {
                                out[base + (gi * DOWNSAMPLE + di) * w + gj * DOWNSAMPLE + dj] = v;
                            }
                        }
                    }
                }
            }
        }
        Tensor::new(&[t, IMAGE_CHANNELS, h, w], out)
    }
}

/// `(MᵀM)⁻¹Mᵀ` for a 4×3 matrix of full column rank.
fn pseudo_inverse(m: &[[f64; 3]; 4]) -> Option<[[f64; 4]; 3]> {
    let mut g = [[0.0; 3]; 3];
    for (i, gi) in g.iter_mut().enumerate() {
        for (j, gij) in gi.iter_mut().enumerate() {
            *gij = (0..4).map(|k| m[k][i] * m[k][j]).sum();
        }
    }
    let det = g[0][0] * (g[1][1] * g[2][2] - g[1][2] * g[2][1])
        - g[0][1] * (g[1][0] * g[2][2] - g[1][2] * g[2][0])
        + g[0][2] * (g[1][0] * g[2][1] - g[1][1] * g[2][0]);
    if libm::fabs(det) < 1e-12 {
        return None;
    }
    let mut inv = [[0.0; 3]; 3];
    for (i, row) in inv.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            // cofactor of g[j][i]
            let (r0, r1) = ((j + 1) % 3, (j + 2) % 3);
            let (c0, c1) = ((i + 1) % 3, (i + 2) % 3);
            *v = (g[r0][c0] * g[r1][c1] - g[r0][c1] * g[r1][c0]) / det;
        }
    }
    let mut p = [[0.0; 4]; 3];
    for (i, row) in p.iter_mut().enumerate() {
        for (k, v) in row.iter_mut().enumerate() {
            *v = (0..3).map(|j| inv[i][j] * m[k][j]).sum();
        }
    }
    Some(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pinv_is_left_inverse() {
        let vae = PatchVae::new(7);
        for i in 0..3 {
            for j in 0..3 {
                let v: f64 = (0..4).map(|k| vae.pinv[i][k] * vae.mix[k][j]).sum();
                assert!((v - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn block_constant_images_round_trip() {
        let vae = PatchVae::new(3);
        let mut r = rng::seeded(1);
        let cells = rng::normal_vec(&mut r, 2 * 3 * 2 * 4, 1.0);
        let mut img = vec![0.0; 2 * 3 * 8 * 16];
        for f in 0..2 {
            for c in 0..3 {
                for i in 0..8 {
                    for j in 0..16 {
                        img[((f * 3 + c) * 8 + i) * 16 + j] = cells[((f * 3 + c) * 2 + i / 4) * 4 + j / 4];
                    }
                }
            }
        }
        let img = Tensor::new(&[2, 3, 8, 16], img).unwrap();
        let lat = vae.encode(&img).unwrap();
        assert_eq!(lat.shape(), &[2, 4, 2, 4]);
        assert!(vae.decode(&lat).unwrap().max_abs_diff(&img) < 1e-12);
    }

    #[test]
    fn rejects_bad_shapes() {
        let vae = PatchVae::new(0);
        assert!(vae.encode(&Tensor::zeros(&[1, 3, 6, 8])).is_err());
        assert!(vae.decode(&Tensor::zeros(&[1, 3, 2, 2])).is_err());
    }
}
