//! Guidance rasterization (colored skeleton + product box) and the
//! two-layer pose encoder that brings guidance down to the latent grid.
//!
//! Frame batches are laid out `[T × C × H × W]`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::body::{forward_kinematics, Camera, Joints2D, BONES};
use crate::error::{Error, Result};
use crate::geometry::{Point, RotatedRect};
use crate::rng;
use crate::tape::{self, Tape, Var};
use crate::template::GuidancePlan;
use crate::tensor::Tensor;

/// Guidance channels: RGB skeleton plus box occupancy.
pub const GUIDANCE_CHANNELS: usize = 4;
pub const POSE_FEATURES: usize = 16;
pub const HIDDEN_CHANNELS: usize = 8;
/// Spatial reduction of the encoder (two stride-2 convs).
pub const DOWNSAMPLE: usize = 4;

/// Half-width of a drawn bone; pixels whose centers lie within this
/// distance of the segment are painted.
pub const BONE_RADIUS: f64 = 1.5;

/// One color per bone in [`BONES`] order.
pub const PALETTE: [[f64; 3]; 14] = [
    [1.0, 1.0, 1.0],
    [1.0, 0.85, 0.0],
    [1.0, 0.0, 0.0],
    [0.0, 0.0, 1.0],
    [1.0, 0.5, 0.0],
    [1.0, 0.0, 1.0],
    [0.0, 0.6, 1.0],
    [0.0, 1.0, 1.0],
    [0.5, 0.0, 0.0],
    [0.0, 0.0, 0.5],
    [0.0, 1.0, 0.0],
    [0.5, 1.0, 0.5],
    [0.0, 0.5, 0.0],
    [0.6, 0.4, 1.0],
];

/// Euclidean distance from `p` to the closed segment `ab`.
pub fn dist_to_segment(p: Point, a: Point, b: Point) -> f64 {
    let ab = b.sub(a);
    let len2 = ab.dot(ab);
    let t = if len2 > 0.0 {
        (p.sub(a).dot(ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    p.dist(a.add(ab.scale(t)))
}

fn pixel_center(row: usize, col: usize) -> Point {
    Point::new(col as f64 + 0.5, row as f64 + 0.5)
}

/// Clamped pixel index range whose centers may fall within `[lo, hi]`.
fn span(lo: f64, hi: f64, n: usize) -> core::ops::Range<usize> {
    let a = lo - 0.5;
    let b = hi - 0.5;
    if b < 0.0 || a > n as f64 - 1.0 || !a.is_finite() || !b.is_finite() {
        return 0..0;
    }
    let start = if a <= 0.0 { 0 } else { libm::ceil(a) as usize };
    let end = (libm::floor(b) as usize + 1).min(n);
    start..end
}

/// `[3 × H × W]` skeleton image; bones with an invisible endpoint are skipped.
pub fn rasterize_skeleton(joints: &Joints2D, width: usize, height: usize) -> Tensor {
    let mut data = vec![0.0; 3 * width * height];
    let plane = width * height;
    for (k, &(ja, jb)) in BONES.iter().enumerate() {
        let (Some(a), Some(b)) = (joints.get(ja), joints.get(jb)) else {
            continue;
        };
        let rows = span(a.y.min(b.y) - BONE_RADIUS, a.y.max(b.y) + BONE_RADIUS, height);
        let cols = span(a.x.min(b.x) - BONE_RADIUS, a.x.max(b.x) + BONE_RADIUS, width);
        for i in rows {
            for j in cols.clone() {
                if dist_to_segment(pixel_center(i, j), a, b) <= BONE_RADIUS {
                    for (c, &v) in PALETTE[k].iter().enumerate() {
                        data[c * plane + i * width + j] = v;
                    }
                }
            }
        }
    }
    Tensor::from_parts(vec![3, height, width], data)
}

/// `[1 × H × W]` occupancy: 1 where the pixel center is inside or on the rect.
pub fn rasterize_box(rect: &RotatedRect, width: usize, height: usize) -> Tensor {
    let mut data = vec![0.0; width * height];
    for i in 0..height {
        for j in 0..width {
            if rect.contains(pixel_center(i, j), 0.0) {
                data[i * width + j] = 1.0;
            }
        }
    }
    Tensor::from_parts(vec![1, height, width], data)
}

/// One `[4 × H × W]` guidance frame.
pub fn guidance_frame(joints: &Joints2D, rect: Option<&RotatedRect>, width: usize, height: usize) -> Tensor {
    let mut data = rasterize_skeleton(joints, width, height).into_data();
    match rect {
        Some(r) => data.extend(rasterize_box(r, width, height).into_data()),
        None => data.extend(core::iter::repeat_n(0.0, width * height)),
    }
    Tensor::from_parts(vec![GUIDANCE_CHANNELS, height, width], data)
}

/// Renders every plan frame at the camera's resolution: `[T × 4 × H × W]`.
pub fn render_plan(plan: &GuidancePlan, cam: &Camera) -> Result<Tensor> {
    if plan.poses.len() != plan.boxes.len() || plan.poses.is_empty() {
        return Err(Error::shape(
            "render_plan",
            format!("{} poses, {} boxes", plan.poses.len(), plan.boxes.len()),
        ));
    }
    let frames: Vec<Tensor> = plan
        .poses
        .iter()
        .zip(&plan.boxes)
        .map(|(p, b)| guidance_frame(&forward_kinematics(p, cam), Some(b), cam.width, cam.height))
        .collect();
    stack(&frames)
}

/// Stacks equally shaped tensors along a new leading axis.
pub fn stack(parts: &[Tensor]) -> Result<Tensor> {
    let first = parts.first().ok_or(Error::EmptyInput("stack"))?;
    let mut shape = vec![parts.len()];
    shape.extend_from_slice(first.shape());
    let mut data = Vec::with_capacity(first.len() * parts.len());
    for p in parts {
        if p.shape() != first.shape() {
            return Err(Error::shape("stack", format!("{:?} vs {:?}", p.shape(), first.shape())));
        }
        data.extend_from_slice(p.data());
    }
    Ok(Tensor::from_parts(shape, data))
}

/// Mean of channel 3 over each `DOWNSAMPLE`² cell: `[T × (H/4)·(W/4)]`.
pub fn box_token_mask(frames: &Tensor) -> Result<Tensor> {
    let (t, h, w) = guidance_dims(frames)?;
    let (gh, gw) = (h / DOWNSAMPLE, w / DOWNSAMPLE);
    let plane = h * w;
    let d = frames.data();
    let mut out = vec![0.0; t * gh * gw];
    let norm = (DOWNSAMPLE * DOWNSAMPLE) as f64;
    for f in 0..t {
        let base = (f * GUIDANCE_CHANNELS + 3) * plane;
        for gi in 0..gh {
            for gj in 0..gw {
                let mut acc = 0.0;
                for di in 0..DOWNSAMPLE {
                    for dj in 0..DOWNSAMPLE {
                        acc += d[base + (gi * DOWNSAMPLE + di) * w + gj * DOWNSAMPLE + dj];
                    }
                }
                out[(f * gh + gi) * gw + gj] = acc / norm;
            }
        }
    }
    Ok(Tensor::from_parts(vec![t, gh * gw], out))
}

fn guidance_dims(frames: &Tensor) -> Result<(usize, usize, usize)> {
    let s = frames.shape();
    if s.len() != 4 || s[1] != GUIDANCE_CHANNELS {
        return Err(Error::shape("guidance", format!("expected [T×4×H×W], got {s:?}")));
    }
    if !s[2].is_multiple_of(DOWNSAMPLE) || !s[3].is_multiple_of(DOWNSAMPLE) {
        return Err(Error::shape(
            "guidance",
            format!("H×W = {}×{} not divisible by {DOWNSAMPLE}", s[2], s[3]),
        ));
    }
    Ok((s[0], s[2], s[3]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseEncoderWeights {
    /// `[8 × 4 × 3 × 3]`
    pub w1: Tensor,
    pub b1: Tensor,
    /// `[16 × 8 × 3 × 3]`
    pub w2: Tensor,
    pub b2: Tensor,
}

/// Pose-encoder parameters recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct PoseEncoderVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

pub const INIT_SIGMA: f64 = 0.05;

impl PoseEncoderWeights {
    /// Conv kernels ~ N(0, 0.05²), zero biases.
    pub fn init(seed: u64) -> Self {
        let mut r = rng::seeded(seed);
        let n1 = HIDDEN_CHANNELS * GUIDANCE_CHANNELS * 9;
        let n2 = POSE_FEATURES * HIDDEN_CHANNELS * 9;
        PoseEncoderWeights {
            w1: Tensor::from_parts(
                vec![HIDDEN_CHANNELS, GUIDANCE_CHANNELS, 3, 3],
                rng::normal_vec(&mut r, n1, INIT_SIGMA),
            ),
            b1: Tensor::zeros(&[HIDDEN_CHANNELS]),
            w2: Tensor::from_parts(
                vec![POSE_FEATURES, HIDDEN_CHANNELS, 3, 3],
                rng::normal_vec(&mut r, n2, INIT_SIGMA),
            ),
            b2: Tensor::zeros(&[POSE_FEATURES]),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.w1.shape() == [HIDDEN_CHANNELS, GUIDANCE_CHANNELS, 3, 3]
            && self.b1.len() == HIDDEN_CHANNELS
            && self.w2.shape() == [POSE_FEATURES, HIDDEN_CHANNELS, 3, 3]
            && self.b2.len() == POSE_FEATURES;
        if !ok {
            return Err(Error::shape("PoseEncoderWeights", "unexpected parameter shapes"));
        }
        Ok(())
    }

    pub fn on_tape(&self, tape: &mut Tape) -> PoseEncoderVars {
        PoseEncoderVars {
            w1: tape.leaf(self.w1.clone()),
            b1: tape.leaf(self.b1.clone()),
            w2: tape.leaf(self.w2.clone()),
            b2: tape.leaf(self.b2.clone()),
        }
    }

    pub fn params(&self) -> [(&'static str, &Tensor); 4] {
        [("w1", &self.w1), ("b1", &self.b1), ("w2", &self.w2), ("b2", &self.b2)]
    }

    pub fn params_mut(&mut self) -> [&mut Tensor; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }
}

/// conv(3×3, s2, p1) → ReLU → conv(3×3, s2, p1): `[T × 16 × H/4 × W/4]`.
pub fn pose_encode(frames: &Tensor, w: &PoseEncoderWeights) -> Result<Tensor> {
    guidance_dims(frames)?;
    w.validate()?;
    let h = tape::conv2d(frames, &w.w1, &w.b1, 2, 1)?;
    let h = h.map(|a| if a > 0.0 { a } else { 0.0 });
    tape::conv2d(&h, &w.w2, &w.b2, 2, 1)
}

/// Taped twin of [`pose_encode`].
pub fn pose_encode_taped(tape: &mut Tape, frames: Var, w: &PoseEncoderVars) -> Result<Var> {
    guidance_dims(tape.value(frames))?;
    let h = tape.conv2d(frames, w.w1, w.b1, 2, 1)?;
    let h = tape.relu(h)?;
    tape.conv2d(h, w.w2, w.b2, 2, 1)
}

/// Channel concatenation, noise channels first.
pub fn concat_with_noise(noise: &Tensor, pose_feat: &Tensor) -> Result<Tensor> {
    let (ns, ps) = (noise.shape(), pose_feat.shape());
    if ns.len() != 4 || ps.len() != 4 || ns[0] != ps[0] || ns[2..] != ps[2..] {
        return Err(Error::shape("concat_with_noise", format!("{ns:?} + {ps:?}")));
    }
    let plane = ns[2] * ns[3];
    let (cn, cp) = (ns[1], ps[1]);
    let mut data = Vec::with_capacity(noise.len() + pose_feat.len());
    for f in 0..ns[0] {
        data.extend_from_slice(&noise.data()[f * cn * plane..(f + 1) * cn * plane]);
        data.extend_from_slice(&pose_feat.data()[f * cp * plane..(f + 1) * cp * plane]);
    }
    Ok(Tensor::from_parts(vec![ns[0], cn + cp, ns[2], ns[3]], data))
}

/// Extracts channels `[start, end)` of a `[T × C × H × W]` tensor.
pub fn slice_channels(x: &Tensor, start: usize, end: usize) -> Result<Tensor> {
    let s = x.shape();
    if s.len() != 4 || start >= end || end > s[1] {
        return Err(Error::shape("slice_channels", format!("[{start},{end}) of {s:?}")));
    }
    let plane = s[2] * s[3];
    let mut data = Vec::with_capacity(s[0] * (end - start) * plane);
    for f in 0..s[0] {
        let base = f * s[1] * plane;
        data.extend_from_slice(&x.data()[base + start * plane..base + end * plane]);
    }
    Ok(Tensor::from_parts(vec![s[0], end - start, s[2], s[3]], data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::{BodyPose, Joint, NUM_JOINTS};
    use crate::tape::grad_check;

    fn no_joints() -> Joints2D {
        Joints2D {
            points: [Point::new(0.0, 0.0); NUM_JOINTS],
            visible: [false; NUM_JOINTS],
        }
    }

    #[test]
    fn invisible_joints_draw_nothing() {
        let r = rasterize_skeleton(&no_joints(), 16, 12);
        assert_eq!(r.shape(), &[3, 12, 16]);
        assert!(r.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn horizontal_bone_pixels() {
        let mut j = no_joints();
        j.points[Joint::Pelvis.index()] = Point::new(10.0, 20.0);
        j.points[Joint::Neck.index()] = Point::new(30.0, 20.0);
        j.visible[Joint::Pelvis.index()] = true;
        j.visible[Joint::Neck.index()] = true;
        let (w, h) = (40, 40);
        let r = rasterize_skeleton(&j, w, h);
        let mut painted = 0;
        for i in 0..h {
            for jx in 0..w {
                let (px, py) = (jx as f64 + 0.5, i as f64 + 0.5);
                // closest point on the horizontal segment
                let cx = px.clamp(10.0, 30.0);
                let d = libm::hypot(px - cx, py - 20.0);
                let on = d <= 1.5;
                painted += on as usize;
                for (c, &color) in PALETTE[0].iter().enumerate() {
                    let expect = if on { color } else { 0.0 };
                    assert_eq!(r.data()[c * w * h + i * w + jx], expect, "pixel ({i},{jx})");
                }
            }
        }
        assert!(painted > 40);
    }

    #[test]
    fn rest_pose_uses_all_colors() {
        let cam = Camera::new(100.0, 32.0, 32.0, 64, 64).unwrap();
        let j = forward_kinematics(&BodyPose::rest([0.0, 0.0, 3.0], 0.0, 1.0), &cam);
        let r = rasterize_skeleton(&j, 64, 64);
        let plane = 64 * 64;
        let mut colors: Vec<[u32; 3]> = (0..plane)
            .map(|p| core::array::from_fn(|c| (r.data()[c * plane + p] * 1000.0) as u32))
            .filter(|c: &[u32; 3]| c.iter().any(|&v| v > 0))
            .collect();
        colors.sort_unstable();
        colors.dedup();
        assert_eq!(colors.len(), 14);
    }

    #[test]
    fn box_counts() {
        let full = RotatedRect::new(8.0, 6.0, 16.0, 12.0, 0.0).unwrap();
        assert!(rasterize_box(&full, 16, 12).data().iter().all(|&v| v == 1.0));
        let r = RotatedRect::new(10.0, 10.0, 10.0, 6.0, 0.0).unwrap();
        assert_eq!(rasterize_box(&r, 32, 32).sum(), 60.0);
        assert!(RotatedRect::new(1.0, 1.0, 0.0, 3.0, 0.0).is_err());
    }

    #[test]
    fn box_resolution_covariance() {
        let mut r = crate::rng::seeded(4);
        for _ in 0..20 {
            let rect = RotatedRect::new(
                crate::rng::uniform(&mut r, 8.0, 24.0),
                crate::rng::uniform(&mut r, 8.0, 24.0),
                crate::rng::uniform(&mut r, 3.0, 12.0),
                crate::rng::uniform(&mut r, 3.0, 12.0),
                crate::rng::uniform(&mut r, -3.0, 3.0),
            )
            .unwrap();
            let big = RotatedRect::new(rect.cx * 2.0, rect.cy * 2.0, rect.width * 2.0, rect.height * 2.0, rect.angle).unwrap();
            let a = rasterize_box(&rect, 32, 32);
            let b = rasterize_box(&big, 64, 64);
            let mut worst_mean = 0.0;
            for i in 0..32 {
                for j in 0..32 {
                    let m = (0..4)
                        .map(|k| b.data()[(2 * i + k / 2) * 64 + 2 * j + k % 2])
                        .sum::<f64>()
                        / 4.0;
                    let one = a.data()[i * 32 + j];
                    // unset pixels: the 4 sub-centers surround the 1× center, so by
                    // convexity at most 2 can be inside. Set pixels near a corner can
                    // keep a single sub-center.
                    let bound = if one == 0.0 { 0.5 } else { 0.75 };
                    assert!((m - one).abs() <= bound, "({i},{j})");
                    worst_mean += (m - one).abs();
                }
            }
            assert!(worst_mean / 1024.0 < 0.05);
        }
    }

    #[test]
    fn encoder_shapes_and_zero() {
        let mut w = PoseEncoderWeights::init(3);
        let x = Tensor::zeros(&[5, 4, 32, 32]);
        assert_eq!(pose_encode(&x, &w).unwrap().shape(), &[5, 16, 8, 8]);
        assert!(pose_encode(&x, &w).unwrap().data().iter().all(|&v| v == 0.0));
        w.b2 = Tensor::full(&[16], 1.0);
        assert!(pose_encode(&x, &w).unwrap().data().iter().all(|&v| v == 1.0));
        assert!(pose_encode(&Tensor::zeros(&[1, 4, 30, 32]), &w).is_err());
    }

    #[test]
    fn encoder_translation_covariance() {
        let w = PoseEncoderWeights::init(5);
        let mut r = crate::rng::seeded(6);
        let n = 4 * 32 * 32;
        let x = Tensor::new(&[1, 4, 32, 32], crate::rng::normal_vec(&mut r, n, 1.0)).unwrap();
        // shift right by 4 px, zero fill
        let mut shifted = vec![0.0; n];
        for c in 0..4 {
            for i in 0..32 {
                for j in 4..32 {
                    shifted[(c * 32 + i) * 32 + j] = x.data()[(c * 32 + i) * 32 + j - 4];
                }
            }
        }
        let shifted = Tensor::new(&[1, 4, 32, 32], shifted).unwrap();
        let (a, b) = (pose_encode(&x, &w).unwrap(), pose_encode(&shifted, &w).unwrap());
        for c in 0..16 {
            for i in 1..7 {
                for j in 2..7 {
                    let va = a.data()[(c * 8 + i) * 8 + j - 1];
                    let vb = b.data()[(c * 8 + i) * 8 + j];
                    assert!((va - vb).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn encoder_weight_gradients() {
        let w = PoseEncoderWeights::init(9);
        let mut r = crate::rng::seeded(10);
        let x = Tensor::new(&[2, 4, 8, 8], crate::rng::normal_vec(&mut r, 2 * 4 * 64, 1.0)).unwrap();
        for which in 0..4 {
            let wc = w.clone();
            let xc = x.clone();
            let f = move |tape: &mut Tape, p: Var| {
                let mut vars = wc.on_tape(tape);
                match which {
                    0 => vars.w1 = p,
                    1 => vars.b1 = p,
                    2 => vars.w2 = p,
                    _ => vars.b2 = p,
                }
                let xv = tape.leaf(xc.clone());
                let y = pose_encode_taped(tape, xv, &vars)?;
                tape.sum(y)
            };
            let err = grad_check(f, w.params()[which].1, 1e-6).unwrap();
            assert!(err < 1e-4, "param {which}: {err}");
        }
    }

    #[test]
    fn taped_matches_plain() {
        let w = PoseEncoderWeights::init(2);
        let x = Tensor::full(&[1, 4, 8, 8], 0.3);
        let mut t = Tape::new();
        let vars = w.on_tape(&mut t);
        let xv = t.leaf(x.clone());
        let y = pose_encode_taped(&mut t, xv, &vars).unwrap();
        assert_eq!(t.value(y), &pose_encode(&x, &w).unwrap());
    }

    #[test]
    fn concat_and_slice() {
        let mut r = crate::rng::seeded(1);
        let noise = Tensor::new(&[3, 4, 2, 2], crate::rng::normal_vec(&mut r, 48, 1.0)).unwrap();
        let pose = Tensor::new(&[3, 16, 2, 2], crate::rng::normal_vec(&mut r, 192, 1.0)).unwrap();
        let c = concat_with_noise(&noise, &pose).unwrap();
        assert_eq!(c.shape(), &[3, 20, 2, 2]);
        assert_eq!(slice_channels(&c, 0, 4).unwrap(), noise);
        assert_eq!(slice_channels(&c, 4, 20).unwrap(), pose);
        assert!(concat_with_noise(&noise, &Tensor::zeros(&[2, 16, 2, 2])).is_err());
    }

    #[test]
    fn token_mask_means() {
        let mut f = Tensor::zeros(&[1, 4, 8, 8]);
        // box channel ones in the top-left 4×4 cell and half of the next
        for i in 0..4 {
            for j in 0..6 {
                f.data_mut()[3 * 64 + i * 8 + j] = 1.0;
            }
        }
        let m = box_token_mask(&f).unwrap();
        assert_eq!(m.data(), &[1.0, 0.5, 0.0, 0.0]);
    }
}
