//! The bundled synthetic task: a stick-figure person holding a colored box
//! that moves with the hand, rendered through the stand-in latent codec.
//!
//! Product color is drawn per scene and reaches the model only through the
//! product stream, so masked reconstruction measures the object pathway.
//! The person's color lives in the reference image.

use guidestage_core::body::{forward_kinematics, hand_anchor, BodyPose, Camera, Joint, Side};
use guidestage_core::caption::{encode_text, serialize_caption, HumanCaption, ProductCaption, DEFAULT_L_MAX};
use guidestage_core::flow::Region;
use guidestage_core::geometry::RotatedRect;
use guidestage_core::model::Conditioning;
use guidestage_core::raster::{self, DOWNSAMPLE};
use guidestage_core::rng::{self, DetRng};
use guidestage_core::vae::PatchVae;
use guidestage_core::{Result, Tensor};

use crate::fixtures::single_hold;

pub const BACKGROUND: [f64; 3] = [0.1, 0.1, 0.1];
/// Seed of the fixed stand-in codec shared by training and sampling.
pub const VAE_SEED: u64 = 0x05EE_D0AE;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyScene {
    pub cond: Conditioning,
    /// `[T × 4 × h × w]` target latent.
    pub x1: Tensor,
    /// `[T × h × w]` region labels.
    pub regions: Tensor,
    pub product_color: [f64; 3],
}

/// The fixture camera scaled to a `size × size` frame.
pub fn camera(size: usize) -> Camera {
    let s = size as f64 / 64.0;
    Camera::new(70.0 * s, 32.0 * s, 32.0 * s, size, size).expect("positive frame size")
}

/// The generic caption every toy scene shares; it never names the color.
pub fn caption() -> String {
    serialize_caption(
        &ProductCaption {
            category: "box".into(),
            size_cm: Some(10.0),
            color: "colored".into(),
            material: "cardboard".into(),
            text_on_product: None,
        },
        &HumanCaption {
            person: "stick figure".into(),
            environment: "plain backdrop".into(),
            lighting: "flat".into(),
        },
    )
}

fn color(r: &mut DetRng, lo: f64, hi: f64) -> [f64; 3] {
    [rng::uniform(r, lo, hi), rng::uniform(r, lo, hi), rng::uniform(r, lo, hi)]
}

/// Paints one `[3 × S × S]` frame from its guidance frame.
fn paint(guide: &Tensor, person: [f64; 3], product: Option<[f64; 3]>) -> Vec<f64> {
    let s = guide.shape()[1];
    let plane = s * s;
    let g = guide.data();
    let mut out = vec![0.0; 3 * plane];
    for p in 0..plane {
        let on_body = (0..3).any(|c| g[c * plane + p] > 0.0);
        let rgb = match product {
            Some(col) if g[3 * plane + p] > 0.5 => col,
            _ if on_body => person,
            _ => BACKGROUND,
        };
        for c in 0..3 {
            out[c * plane + p] = rgb[c];
        }
    }
    out
}

fn cell_of(p: guidestage_core::geometry::Point, size: usize) -> Option<(usize, usize)> {
    let g = size / DOWNSAMPLE;
    let (i, j) = (p.y / DOWNSAMPLE as f64, p.x / DOWNSAMPLE as f64);
    (i >= 0.0 && j >= 0.0 && (i as usize) < g && (j as usize) < g).then_some((i as usize, j as usize))
}

/// Draws one scene of `frames` frames at `size × size` pixels.
pub fn make_scene(r: &mut DetRng, frames: usize, size: usize, c: usize, vae: &PatchVae) -> Result<ToyScene> {
    let cam = camera(size);
    let side = if rng::uniform(r, 0.0, 1.0) < 0.5 { Side::Left } else { Side::Right };
    let lift = rng::uniform(r, 0.2, 0.8);
    let yaw = rng::uniform(r, -0.3, 0.3);
    let root = [rng::uniform(r, -0.3, 0.3), rng::uniform(r, -0.1, 0.1), 3.0];
    let scale = rng::uniform(r, 0.9, 1.1);
    let bw = size as f64 * rng::uniform(r, 0.25, 0.4);
    let bh = bw * rng::uniform(r, 1.1, 1.8);
    let tilt = rng::uniform(r, -0.3, 0.3);
    let person = color(r, 0.3, 0.9);
    let product = color(r, 0.0, 1.0);

    let pose_at = single_hold(side, lift, yaw);
    let poses: Vec<BodyPose> = (0..frames)
        .map(|k| {
            let mut p = pose_at(k as f64 / (frames - 1).max(1) as f64);
            p.root = root;
            p.shape_scale = scale;
            p
        })
        .collect();

    let g = size / DOWNSAMPLE;
    let mut guides = Vec::with_capacity(frames);
    let mut video = Vec::with_capacity(frames * 3 * size * size);
    let mut regions = vec![Region::Default.label(); frames * g * g];
    for (k, p) in poses.iter().enumerate() {
        let a = hand_anchor(p, side, &cam)?;
        let rect = RotatedRect::new(a.x, a.y - 0.4 * bh, bw, bh, tilt + 0.03 * k as f64)?;
        let joints = forward_kinematics(p, &cam);
        let guide = raster::guidance_frame(&joints, Some(&rect), size, size);
        video.extend(paint(&guide, person, Some(product)));
        let label = &mut regions[k * g * g..(k + 1) * g * g];
        if let Some((i, j)) = joints.get(Joint::Head).and_then(|h| cell_of(h, size)) {
            label[i * g + j] = Region::Face.label();
        }
        for s in [Side::Left, Side::Right] {
            if let Some((i, j)) = hand_anchor(p, s, &cam).ok().and_then(|h| cell_of(h, size)) {
                label[i * g + j] = Region::Hands.label();
            }
        }
        guides.push(guide);
    }
    let guidance = raster::stack(&guides)?;
    let mask = raster::box_token_mask(&guidance)?;
    for (l, &m) in regions.iter_mut().zip(mask.data()) {
        if m > 0.5 {
            *l = Region::Product.label();
        }
    }

    let reference = Tensor::new(&[1, 3, size, size], paint(&guides[0], person, None))?;
    let product_img: Vec<f64> = product.iter().flat_map(|&v| std::iter::repeat_n(v, size * size)).collect();
    let cond = Conditioning {
        reference: vae.encode(&reference)?,
        obj: vae.encode(&Tensor::new(&[1, 3, size, size], product_img)?)?,
        txt: encode_text(&caption(), c, DEFAULT_L_MAX)?,
        mask,
        guidance,
    };
    Ok(ToyScene {
        x1: vae.encode(&Tensor::new(&[frames, 3, size, size], video)?)?,
        regions: Tensor::new(&[frames, g, g], regions)?,
        cond,
        product_color: product,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scene_shapes_and_product_region() {
        let vae = PatchVae::new(VAE_SEED);
        let mut r = rng::seeded(3);
        let s = make_scene(&mut r, 4, 32, 8, &vae).unwrap();
        assert_eq!(s.x1.shape(), &[4, 4, 8, 8]);
        assert_eq!(s.cond.guidance.shape(), &[4, 4, 32, 32]);
        assert_eq!(s.cond.grid().unwrap(), (4, 8, 8));
        assert_eq!(s.cond.txt.shape()[2], 8);
        let product_cells = s.regions.data().iter().filter(|&&l| l == Region::Product.label()).count();
        assert!(product_cells > 0);
        let masked = s.cond.mask.data().iter().filter(|&&m| m > 0.5).count();
        assert_eq!(product_cells, masked);
    }

    #[test]
    fn scenes_are_deterministic_per_stream() {
        let vae = PatchVae::new(VAE_SEED);
        let a = make_scene(&mut rng::seeded(9), 3, 16, 4, &vae).unwrap();
        let b = make_scene(&mut rng::seeded(9), 3, 16, 4, &vae).unwrap();
        assert_eq!(a, b);
    }
}
