//! Property tests over the public API.

use core::f64::consts::PI;

use proptest::prelude::*;

use guidestage_core::attention::{object_attention, AttnWeights, StreamBundle};
use guidestage_core::body::{forward_kinematics, orientation_class, orientation_of_yaw, retarget, BodyPose, Camera, Identity};
use guidestage_core::caption::{encode_text, parse_caption, serialize_caption, HumanCaption, ProductCaption};
use guidestage_core::flow::{chain_clips, euler_sample, join_clips, make_flow_sample, weighted_fm_loss, ClipModel, ClipWindow, RegionWeights, SamplerConfig};
use guidestage_core::geometry::{min_rotated_rect, rect_iou, resize_with_fixed_dim, Expansion, Mask, Point, RotatedRect};
use guidestage_core::rng::{self, DetRng};
use guidestage_core::tensor::{matmul, softmax_rows};
use guidestage_core::Tensor;

fn randn(r: &mut DetRng, shape: &[usize], sigma: f64) -> Tensor {
    Tensor::new(shape, rng::normal_vec(r, shape.iter().product(), sigma)).unwrap()
}

fn rect() -> impl Strategy<Value = RotatedRect> {
    (-5.0..5.0f64, -5.0..5.0f64, 0.2..6.0f64, 0.2..6.0f64, -PI..PI)
        .prop_map(|(cx, cy, w, h, a)| RotatedRect::new(cx, cy, w, h, a).unwrap())
}

fn pose(r: &mut DetRng) -> BodyPose {
    let mut p = BodyPose::rest(
        [rng::uniform(r, -0.5, 0.5), rng::uniform(r, -0.2, 0.2), rng::uniform(r, 2.5, 4.5)],
        rng::uniform(r, -PI, PI),
        rng::uniform(r, 0.7, 1.4),
    );
    for j in p.joints.iter_mut().skip(1) {
        for a in j.iter_mut() {
            *a = rng::uniform(r, -0.6, 0.6);
        }
    }
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matmul_is_associative(seed in any::<u64>(), m in 1usize..6, k in 1usize..6, n in 1usize..6, p in 1usize..6) {
        let mut r = rng::seeded(seed);
        let (a, b, c) = (randn(&mut r, &[m, k], 1.0), randn(&mut r, &[k, n], 1.0), randn(&mut r, &[n, p], 1.0));
        let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
        let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
        prop_assert!(left.max_abs_diff(&right) < 1e-9);
    }

    #[test]
    fn softmax_rows_sum_to_one(seed in any::<u64>(), rows in 1usize..5, cols in 1usize..9, mag in 0.0..1e4f64) {
        let mut r = rng::seeded(seed);
        let x = Tensor::new(&[rows, cols], (0..rows * cols).map(|_| rng::uniform(&mut r, -mag, mag)).collect()).unwrap();
        let s = softmax_rows(&x, 1.0);
        for row in s.data().chunks(cols) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn iou_is_symmetric_and_reflexive(a in rect(), b in rect()) {
        prop_assert!((rect_iou(&a, &b) - rect_iou(&b, &a)).abs() < 1e-12);
        prop_assert!((rect_iou(&a, &a) - 1.0).abs() < 1e-9);
        let v = rect_iou(&a, &b);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
    }

    #[test]
    fn resize_is_idempotent(a in rect(), aspect in 0.2..5.0f64, up in any::<bool>()) {
        let dir = if up { Expansion::Up } else { Expansion::LeftRight };
        let once = resize_with_fixed_dim(&a, dir, aspect).unwrap();
        let twice = resize_with_fixed_dim(&once, dir, aspect).unwrap();
        prop_assert!((once.cx - twice.cx).abs() < 1e-9 && (once.cy - twice.cy).abs() < 1e-9);
        prop_assert!((once.width - twice.width).abs() < 1e-9 && (once.height - twice.height).abs() < 1e-9);
        prop_assert!((once.height / once.width - aspect).abs() < 1e-9);
    }

    #[test]
    fn min_rect_contains_pixels_and_beats_axis_box(seed in any::<u64>(), n in 2usize..40) {
        let mut r = rng::seeded(seed);
        let size = 20;
        let mut bits = vec![false; size * size];
        // a random blob grown from one seed pixel keeps a single component
        let mut cur = (size / 2, size / 2);
        for _ in 0..n {
            bits[cur.0 * size + cur.1] = true;
            let d = (rng::uniform(&mut r, 0.0, 4.0) as usize).min(3);
            cur = match d {
                0 => (cur.0.saturating_sub(1), cur.1),
                1 => ((cur.0 + 1).min(size - 1), cur.1),
                2 => (cur.0, cur.1.saturating_sub(1)),
                _ => (cur.0, (cur.1 + 1).min(size - 1)),
            };
        }
        let mask = Mask::new(size, size, bits.clone()).unwrap();
        let centers: Vec<Point> = (0..size * size)
            .filter(|&i| bits[i])
            .map(|i| Point::new((i % size) as f64 + 0.5, (i / size) as f64 + 0.5))
            .collect();
        let Ok(rect) = min_rotated_rect(&mask) else {
            // only collinear blobs are degenerate
            let (x0, y0) = (centers[0].x, centers[0].y);
            prop_assert!(centers.iter().all(|p| p.x == x0) || centers.iter().all(|p| p.y == y0));
            return Ok(());
        };
        for p in &centers {
            prop_assert!(rect.contains(*p, 1e-9));
        }
        let xs = centers.iter().map(|p| p.x);
        let ys = centers.iter().map(|p| p.y);
        let w = xs.clone().fold(f64::MIN, f64::max) - xs.fold(f64::MAX, f64::min);
        let h = ys.clone().fold(f64::MIN, f64::max) - ys.fold(f64::MAX, f64::min);
        prop_assert!(rect.area() <= w * h + 1e-9);
    }

    #[test]
    fn retarget_composes(seed in any::<u64>()) {
        let mut r = rng::seeded(seed);
        let seq: Vec<BodyPose> = (0..5).map(|_| pose(&mut r)).collect();
        let mut ident = || Identity {
            root: [rng::uniform(&mut r, -1.0, 1.0), 0.0, rng::uniform(&mut r, 2.0, 5.0)],
            yaw: rng::uniform(&mut r, -PI, PI),
            shape_scale: rng::uniform(&mut r, 0.6, 1.5),
        };
        let (a, b) = (ident(), ident());
        let twice = retarget(&retarget(&seq, &a).unwrap(), &b).unwrap();
        let once = retarget(&seq, &b).unwrap();
        for (x, y) in twice.iter().zip(&once) {
            for k in 0..3 {
                prop_assert!((x.root[k] - y.root[k]).abs() < 1e-9);
            }
            prop_assert!((x.yaw - y.yaw).abs() < 1e-9);
            prop_assert_eq!(x.joints, y.joints);
            prop_assert_eq!(x.shape_scale, y.shape_scale);
        }
    }

    #[test]
    fn orientation_depends_on_yaw_only(seed in any::<u64>()) {
        let mut r = rng::seeded(seed);
        let p = pose(&mut r);
        let mut q = pose(&mut r);
        q.yaw = p.yaw;
        prop_assert_eq!(orientation_class(&p), orientation_class(&q));
        prop_assert_eq!(orientation_class(&p), orientation_of_yaw(p.yaw + 2.0 * PI));
    }

    #[test]
    fn projection_is_deterministic(seed in any::<u64>()) {
        let mut r = rng::seeded(seed);
        let cam = Camera::new(70.0, 32.0, 32.0, 64, 64).unwrap();
        let p = pose(&mut r);
        prop_assert_eq!(forward_kinematics(&p, &cam), forward_kinematics(&p.clone(), &cam));
    }

    #[test]
    fn caption_round_trips(size in proptest::option::of(0.5..200.0f64), cat in "[a-z]{1,8}", color in "[a-z ]{0,8}", text in proptest::option::of("[A-Za-z0-9 \"\\\\]{0,10}"), person in "[a-z, ]{0,12}") {
        let p = ProductCaption { category: cat, size_cm: size, color, material: "plastic".into(), text_on_product: text };
        let h = HumanCaption { person, environment: "studio".into(), lighting: String::new() };
        let s = serialize_caption(&p, &h);
        let (p2, h2) = parse_caption(&s).unwrap();
        prop_assert_eq!(&p2, &p);
        prop_assert_eq!(&h2, &h);
        prop_assert_eq!(serialize_caption(&p2, &h2), s);
    }

    #[test]
    fn text_rows_are_unit_or_pad(words in proptest::collection::vec("[a-z]{1,6}", 0..40), c in 2usize..12) {
        let s = words.join(" ");
        let e = encode_text(&s, c, 32).unwrap();
        for row in e.data().chunks(c) {
            let n: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!(n == 0.0 || (n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn weighted_loss_nonnegative_and_scale_free(seed in any::<u64>(), scale in 0.1..10.0f64) {
        let mut r = rng::seeded(seed);
        let shape = [2, 4, 2, 3];
        let s = make_flow_sample(&randn(&mut r, &shape, 1.0), &randn(&mut r, &shape, 1.0), rng::uniform(&mut r, 0.0, 1.0)).unwrap();
        let map = Tensor::new(&[2, 2, 3], (0..12).map(|_| (rng::uniform(&mut r, 0.0, 4.0) as usize).min(3) as f64).collect()).unwrap();
        let rw = RegionWeights { face: 2.0, hands: 1.5, product: 3.0, default: 1.0, map };
        let scaled = RegionWeights { face: 2.0 * scale, hands: 1.5 * scale, product: 3.0 * scale, default: scale, ..rw.clone() };
        let v = randn(&mut r, &shape, 1.0);
        let l = weighted_fm_loss(&v, &s, &rw).unwrap();
        prop_assert!(l >= 0.0);
        prop_assert!((weighted_fm_loss(&v, &s, &scaled).unwrap() - l).abs() <= 1e-12 * (1.0 + l));
        prop_assert_eq!(weighted_fm_loss(&s.v_target, &s, &rw).unwrap(), 0.0);
    }

    #[test]
    fn euler_follows_linear_paths(seed in any::<u64>(), steps in 1usize..80, cfg in 0.0..4.0f64) {
        let mut r = rng::seeded(seed);
        let (x0, x1) = (randn(&mut r, &[3, 4], 1.0), randn(&mut r, &[3, 4], 1.0));
        let v = x1.sub(&x0).unwrap();
        let c = SamplerConfig { steps, cfg_scale: cfg, ..SamplerConfig::default() };
        let out = euler_sample(|_, _, _| Ok(v.clone()), &x0, &c).unwrap();
        prop_assert!(out.max_abs_diff(&x1) <= 1e-12);
    }

    #[test]
    fn object_update_grows_with_the_mask(seed in any::<u64>()) {
        let mut r = rng::seeded(seed);
        let (t, hw, c) = (2, 4, 4);
        let m2: Vec<f64> = (0..t * hw).map(|_| rng::uniform(&mut r, 0.0, 1.0)).collect();
        let m1: Vec<f64> = m2.iter().map(|&m| m * rng::uniform(&mut r, 0.0, 1.0)).collect();
        let b = StreamBundle {
            vid: randn(&mut r, &[t, hw, c], 1.0),
            reference: randn(&mut r, &[1, hw, c], 1.0),
            txt: randn(&mut r, &[1, 3, c], 1.0),
            obj: randn(&mut r, &[1, hw, c], 1.0),
            mask: Tensor::new(&[t, hw], m2).unwrap(),
        };
        let w = AttnWeights::init(&mut r, c);
        let small = StreamBundle { mask: Tensor::new(&[t, hw], m1).unwrap(), ..b.clone() };
        let delta = |x: &StreamBundle| {
            let o = object_attention(x, &w, 2).unwrap();
            o.vid.sub(&x.vid).unwrap().data().iter().map(|v| v * v).sum::<f64>()
        };
        prop_assert!(delta(&small) <= delta(&b) + 1e-12);
    }
}

struct Drift;

impl ClipModel for Drift {
    fn clip_shape(&self) -> Vec<usize> {
        vec![4, 1, 1, 2]
    }

    fn velocity(&mut self, clip: ClipWindow, x: &Tensor, t: f64, _: bool) -> guidestage_core::Result<Tensor> {
        Ok(x.map(|v| (clip.index as f64 + 1.0) * 0.1 * v + t))
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn chained_length(n in 1usize..6, seed in any::<u64>()) {
        let cfg = SamplerConfig { steps: 3, cfg_scale: 2.5, clip_frames: 4, seed };
        let clips = chain_clips(&mut Drift, &cfg, n).unwrap();
        prop_assert_eq!(clips.len(), n);
        prop_assert_eq!(join_clips(&clips).unwrap().shape()[0], n * 4 - (n - 1));
    }
}
