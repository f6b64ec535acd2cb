//! Invariant checks shared by `selfcheck` and the acceptance suite. Each
//! check compares a core kernel against an oracle or a closed form and
//! reports a one-line summary, or the first violation.

use std::f64::consts::PI;

use guidestage_core::attention::{self, AttnWeights, BlockConfig, BlockWeights, StreamBundle, TapedBundle};
use guidestage_core::body::{hand_anchor, Orientation, Side};
use guidestage_core::flow::{self, cfg_combine, euler_sample, RegionWeights, SamplerConfig};
use guidestage_core::geometry::{self, convex_hull, Mask, Point, RotatedRect};
use guidestage_core::model::{self, Conditioning, ToyDitConfig, ToyDitWeights};
use guidestage_core::rng::{self, DetRng};
use guidestage_core::template::{
    self, Action, ExpandDir, FixedDim, HoldingHand, HumanInput, MotionTemplate, ProductSpec,
};
use guidestage_core::{grad_check, Tape, Tensor};

use crate::{fixtures, oracle};

pub type CheckResult = Result<String, String>;

/// Deliberate defects for exercising the self-check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fault {
    #[default]
    None,
    /// Object attention sees `1 − mask`.
    InvertObjectMask,
}

fn tensor(r: &mut DetRng, shape: &[usize], sigma: f64) -> Tensor {
    Tensor::new(shape, rng::normal_vec(r, shape.iter().product(), sigma)).expect("finite draws")
}

fn pick(r: &mut DetRng, n: usize) -> usize {
    (rng::uniform(r, 0.0, n as f64) as usize).min(n - 1)
}

/// Random bundle with `t ≤ 3`, `h·w ≤ 16`, `l ≤ 8`, `c ≤ 8`; returns the
/// bundle and a head count dividing `c`.
pub fn random_bundle(r: &mut DetRng) -> (StreamBundle, usize) {
    let t = 1 + pick(r, 3);
    let (h, w) = (1 + pick(r, 4), 1 + pick(r, 4));
    let l = 1 + pick(r, 8);
    let c = [2, 4, 6, 8][pick(r, 4)];
    let divisors: Vec<usize> = (1..=c).filter(|d| c % d == 0).collect();
    let heads = divisors[pick(r, divisors.len())];
    let hw = h * w;
    let mask = Tensor::new(&[t, hw], (0..t * hw).map(|_| rng::uniform(r, 0.0, 1.0)).collect()).expect("finite");
    let b = StreamBundle {
        vid: tensor(r, &[t, hw, c], 1.0),
        reference: tensor(r, &[1, hw, c], 1.0),
        txt: tensor(r, &[1, l, c], 1.0),
        obj: tensor(r, &[1, hw, c], 1.0),
        mask,
    };
    (b, heads)
}

fn core_object(b: &StreamBundle, w: &AttnWeights, heads: usize, fault: Fault) -> StreamBundle {
    let run = |b: &StreamBundle| attention::object_attention(b, w, heads).expect("valid bundle");
    match fault {
        Fault::None => run(b),
        Fault::InvertObjectMask => {
            let inv = StreamBundle {
                mask: b.mask.map(|m| 1.0 - m),
                ..b.clone()
            };
            StreamBundle { mask: b.mask.clone(), ..run(&inv) }
        }
    }
}

fn bundle_diff(a: &StreamBundle, b: &StreamBundle) -> f64 {
    [
        a.vid.max_abs_diff(&b.vid),
        a.reference.max_abs_diff(&b.reference),
        a.txt.max_abs_diff(&b.txt),
        a.obj.max_abs_diff(&b.obj),
        a.mask.max_abs_diff(&b.mask),
    ]
    .into_iter()
    .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Full,
    Reference,
    Object,
}

/// Core attention vs the dense oracle on `trials` random bundles.
pub fn attention_oracle(variant: Variant, trials: usize, seed: u64, fault: Fault) -> CheckResult {
    let mut r = rng::derived(seed, 10 + variant as u64);
    let mut worst: f64 = 0.0;
    for k in 0..trials {
        let (b, heads) = random_bundle(&mut r);
        let c = b.vid.shape()[2];
        let w = AttnWeights::init(&mut r, c);
        let (got, want) = match variant {
            Variant::Full => (attention::full_attention(&b, &w, heads), Ok(oracle::full_attention(&b, &w, heads))),
            Variant::Reference => {
                (attention::reference_attention(&b, &w, heads), Ok(oracle::reference_attention(&b, &w, heads)))
            }
            Variant::Object => (Ok(core_object(&b, &w, heads, fault)), Ok::<_, ()>(oracle::object_attention(&b, &w, heads))),
        };
        let got = got.map_err(|e| format!("trial {k}: {e}"))?;
        let d = bundle_diff(&got, &want.expect("oracle is total"));
        if !(d < 1e-9) {
            return Err(format!("trial {k}: max abs diff {d:.3e} ≥ 1e-9"));
        }
        worst = worst.max(d);
    }
    Ok(format!("{trials} bundles, max abs diff {worst:.2e}"))
}

/// Reference attention's ref output ignores the video stream entirely.
pub fn routing_isolation(trials: usize, seed: u64) -> CheckResult {
    let mut r = rng::derived(seed, 20);
    for k in 0..trials {
        let (b, heads) = random_bundle(&mut r);
        let w = AttnWeights::init(&mut r, b.vid.shape()[2]);
        let shape = b.vid.shape().to_vec();
        let perturbed = StreamBundle {
            vid: tensor(&mut r, &shape, 10.0),
            ..b.clone()
        };
        let a = attention::reference_attention(&b, &w, heads).map_err(|e| e.to_string())?;
        let p = attention::reference_attention(&perturbed, &w, heads).map_err(|e| e.to_string())?;
        let same = a.reference.data().iter().zip(p.reference.data()).all(|(x, y)| x.to_bits() == y.to_bits());
        if !same {
            return Err(format!("trial {k}: F'_ref changed when F_vid was perturbed"));
        }
        if a.vid.max_abs_diff(&p.vid) == 0.0 {
            return Err(format!("trial {k}: F'_vid did not react to F_vid"));
        }
    }
    Ok(format!("{trials} perturbations, F'_ref bit-identical"))
}

/// Zero mask is an exact identity on F_vid, and F_obj survives 10 stacked
/// blocks bit for bit.
pub fn object_contract(trials: usize, seed: u64, fault: Fault) -> CheckResult {
    let mut r = rng::derived(seed, 30);
    for k in 0..trials {
        let (mut b, heads) = random_bundle(&mut r);
        let c = b.vid.shape()[2];
        b.mask = Tensor::zeros(b.mask.shape());
        let w = AttnWeights::init(&mut r, c);
        let out = core_object(&b, &w, heads, fault);
        if !out.vid.data().iter().zip(b.vid.data()).all(|(x, y)| x.to_bits() == y.to_bits()) {
            return Err(format!("trial {k}: zero mask changed F_vid"));
        }

        let (b, heads) = random_bundle(&mut r);
        let s = b.vid.shape();
        let cfg = BlockConfig {
            c: s[2],
            heads,
            t: s[0],
            h: s[1],
            w: 1,
            l: b.txt.shape()[1],
            object_attention: true,
        };
        let mut tape = Tape::new();
        let mut cur = TapedBundle::from_bundle(&mut tape, &b).map_err(|e| e.to_string())?;
        let obj_var = cur.obj;
        for _ in 0..10 {
            let wb = BlockWeights::init(&mut r, cfg.c);
            let vars = wb.on_tape(&mut tape);
            cur = attention::dit_block_taped(&mut tape, &cur, &vars, &cfg).map_err(|e| e.to_string())?;
        }
        let after = tape.value(cur.obj).reshape(b.obj.shape()).map_err(|e| e.to_string())?;
        if cur.obj != obj_var || !after.data().iter().zip(b.obj.data()).all(|(x, y)| x.to_bits() == y.to_bits()) {
            return Err(format!("trial {k}: F_obj changed across 10 blocks"));
        }
    }
    Ok(format!("{trials} trials, zero-mask identity and F_obj fixed over 10 blocks"))
}

/// Gradient of the region-weighted flow loss through pose encoding and
/// one block, against central differences, for several parameter groups.
pub fn fm_loss_gradients(configs: usize, seed: u64) -> CheckResult {
    const PARAMS: [&str; 6] = [
        "pose.w1",
        "pose.w2",
        "block0.full.wq",
        "block0.reference.wk",
        "block0.object.wv",
        "in.w",
    ];
    let mut worst: f64 = 0.0;
    for k in 0..configs {
        let mut r = rng::derived(seed, 40 + k as u64);
        let c = [4, 6][k % 2];
        let cfg = ToyDitConfig {
            c,
            heads: 2,
            blocks: 1,
            object_attention: true,
        };
        let w = ToyDitWeights::init(&cfg, seed.wrapping_add(k as u64)).map_err(|e| e.to_string())?;
        let t = 2;
        let (h, wd) = (2, 2);
        let g: Vec<f64> = (0..t * 4 * 64).map(|_| rng::uniform(&mut r, 0.0, 1.0)).collect();
        let cond = Conditioning {
            guidance: Tensor::new(&[t, 4, 8, 8], g).expect("finite"),
            reference: tensor(&mut r, &[1, 4, h, wd], 1.0),
            obj: tensor(&mut r, &[1, 4, h, wd], 1.0),
            txt: tensor(&mut r, &[1, 3, c], 1.0),
            mask: Tensor::new(&[t, h * wd], (0..t * h * wd).map(|_| rng::uniform(&mut r, 0.0, 1.0)).collect())
                .expect("finite"),
        };
        let shape = [t, 4, h, wd];
        let sample = flow::make_flow_sample(&tensor(&mut r, &shape, 1.0), &tensor(&mut r, &shape, 1.0), rng::uniform(&mut r, 0.05, 0.95))
            .map_err(|e| e.to_string())?;
        let labels: Vec<f64> = (0..t * h * wd).map(|_| pick(&mut r, 4) as f64).collect();
        let rw = RegionWeights {
            face: 2.0,
            hands: 2.0,
            product: 3.0,
            default: 1.0,
            map: Tensor::new(&[t, h, wd], labels).expect("finite"),
        };
        let names: Vec<String> = w.named_params().into_iter().map(|(n, _)| n).collect();
        for p in PARAMS {
            let idx = names.iter().position(|n| n == p).expect("known parameter");
            let (w2, cond2, s2, rw2) = (w.clone(), cond.clone(), sample.clone(), rw.clone());
            let f = move |tape: &mut Tape, x| {
                let mut vars = w2.on_tape(tape);
                *vars.all_mut()[idx] = x;
                model::loss_with_vars(tape, &vars, &cfg, &cond2, &s2, &rw2, true)
            };
            let x = w.named_params()[idx].1.clone();
            let err = grad_check(f, &x, 1e-6).map_err(|e| e.to_string())?;
            if !(err < 1e-4) {
                return Err(format!("config {k}, {p}: rel error {err:.2e} ≥ 1e-4"));
            }
            worst = worst.max(err);
        }
    }
    Ok(format!("{configs} configs × {} parameter groups, max rel error {worst:.2e}", PARAMS.len()))
}

/// Convex mask: pixels whose centers fall inside the hull of a few random
/// points on a `size × size` canvas.
pub fn random_convex_mask(r: &mut DetRng, size: usize) -> Mask {
    loop {
        let n = 3 + pick(r, 6);
        let s = size as f64;
        let pts: Vec<Point> = (0..n)
            .map(|_| Point::new(rng::uniform(r, 0.1 * s, 0.9 * s), rng::uniform(r, 0.1 * s, 0.9 * s)))
            .collect();
        let Ok(hull) = convex_hull(&pts) else { continue };
        if hull.len() < 3 {
            continue;
        }
        let inside = |p: Point| {
            (0..hull.len()).all(|i| {
                let (a, b) = (hull[i], hull[(i + 1) % hull.len()]);
                b.sub(a).cross(p.sub(a)) >= 0.0
            })
        };
        let m = Mask::from_fn(size, size, |row, col| inside(Point::new(col as f64 + 0.5, row as f64 + 0.5)))
            .expect("sized canvas");
        if geometry::min_rotated_rect(&m).is_ok() {
            return m;
        }
    }
}

/// `min_rotated_rect` within 1 % of the 0.1° sweep and containing every
/// set pixel center.
pub fn min_rect_sweep(trials: usize, seed: u64) -> CheckResult {
    let mut r = rng::derived(seed, 50);
    let mut worst: f64 = 0.0;
    for k in 0..trials {
        let size = 24 + pick(&mut r, 24);
        let m = random_convex_mask(&mut r, size);
        let rect = geometry::min_rotated_rect(&m).map_err(|e| e.to_string())?;
        let mut centers = Vec::new();
        for row in 0..m.height() {
            for col in 0..m.width() {
                if m.get(row, col) {
                    centers.push(Point::new(col as f64 + 0.5, row as f64 + 0.5));
                }
            }
        }
        if let Some(p) = centers.iter().find(|p| !rect.contains(**p, 1e-9)) {
            return Err(format!("trial {k}: pixel center ({}, {}) outside", p.x, p.y));
        }
        let sweep = oracle::sweep_min_area(&centers, 0.1);
        let rel = (rect.area() - sweep).abs() / sweep;
        if !(rel <= 0.01) {
            return Err(format!("trial {k}: area {} vs sweep {sweep}, rel {rel:.3e}", rect.area()));
        }
        worst = worst.max(rel);
    }
    Ok(format!("{trials} convex masks, max rel area gap {worst:.2e}"))
}

/// `rect_iou` against a 400×400 sample-grid estimate.
pub fn iou_sampled(trials: usize, seed: u64) -> CheckResult {
    let mut r = rng::derived(seed, 60);
    let mut worst: f64 = 0.0;
    for k in 0..trials {
        let mut rect = || {
            RotatedRect::new(
                rng::uniform(&mut r, -2.0, 2.0),
                rng::uniform(&mut r, -2.0, 2.0),
                rng::uniform(&mut r, 0.5, 4.0),
                rng::uniform(&mut r, 0.5, 4.0),
                rng::uniform(&mut r, -PI, PI),
            )
            .expect("positive")
        };
        let (a, b) = (rect(), rect());
        let d = (geometry::rect_iou(&a, &b) - oracle::sampled_iou(&a, &b, 400)).abs();
        if !(d < 0.01) {
            return Err(format!("trial {k}: iou differs from sampled estimate by {d:.3e}"));
        }
        worst = worst.max(d);
    }
    Ok(format!("{trials} pairs, max gap to sampled IoU {worst:.2e}"))
}

const ORIENTS: [Orientation; 4] = [Orientation::Frontal, Orientation::Left, Orientation::Right, Orientation::Back];

/// Random valid pool of 1–12 templates with coarse ranges so ties occur.
pub fn random_pool(r: &mut DetRng) -> Vec<MotionTemplate> {
    let n = 1 + pick(r, 12);
    (0..n)
        .map(|i| {
            let hand = [HoldingHand::Left, HoldingHand::Right, HoldingHand::Both, HoldingHand::None][pick(r, 4)];
            let lo = (1 + 5 * pick(r, 7)) as f64;
            let hi = (lo + (5 * pick(r, 5)) as f64).min(40.0);
            let expand = match hand {
                HoldingHand::Both => [ExpandDir::Up, ExpandDir::Free][pick(r, 2)],
                _ => [ExpandDir::Up, ExpandDir::LeftRight, ExpandDir::Free][pick(r, 3)],
            };
            let frames = vec![guidestage_core::body::BodyPose::rest([0.0, 0.0, 3.0], 0.0, 1.0)];
            let boxes = if hand == HoldingHand::None {
                vec![]
            } else {
                vec![Some(RotatedRect::new(32.0, 32.0, 4.0, 6.0, 0.0).expect("positive"))]
            };
            MotionTemplate {
                id: format!("t{:02}", pick(r, 40) * 100 + i),
                action: if hand == HoldingHand::None { Action::HeadTalk } else { Action::SingleGrasp },
                frames,
                box_track: boxes,
                expand_dir: expand,
                fixed_dim: if expand == ExpandDir::LeftRight { FixedDim::Height } else { FixedDim::Width },
                size_range_cm: [lo, hi],
                orientation: ORIENTS[pick(r, 4)],
                requires_table: pick(r, 2) == 1,
                holding_hand: hand,
            }
        })
        .collect()
}

/// `match_template` agrees with the exhaustive scorer on random pools.
pub fn match_brute_force(pools: usize, seed: u64) -> CheckResult {
    let mut r = rng::derived(seed, 70);
    let mut queries = 0;
    let mut hits = 0;
    for k in 0..pools {
        let pool = random_pool(&mut r);
        for _ in 0..10 {
            let size = (pick(&mut r, 90) as f64) * 0.5;
            let orient = ORIENTS[pick(&mut r, 4)];
            let table = pick(&mut r, 2) == 1;
            let got = template::match_template(&pool, size, orient, table).ok().map(|t| t.id.clone());
            let want = oracle::brute_force_match(&pool, size, orient, table);
            if got != want {
                return Err(format!("pool {k}: size {size} {orient:?} table={table}: {got:?} vs {want:?}"));
            }
            queries += 1;
            hits += got.is_some() as usize;
        }
    }
    Ok(format!("{pools} pools, {queries} queries ({hits} matched), all agree"))
}

/// Compiles random requests against the bundled pool and checks aspect
/// propagation and the two-hand width rule on every frame.
pub fn plan_properties(trials: usize, seed: u64) -> CheckResult {
    let mut r = rng::derived(seed, 80);
    let pool = fixtures::pool();
    let cam = fixtures::camera();
    let (mut aspect_frames, mut two_hand_frames) = (0, 0);
    for k in 0..trials {
        let human = HumanInput {
            root: [rng::uniform(&mut r, -0.3, 0.3), rng::uniform(&mut r, -0.1, 0.1), rng::uniform(&mut r, 2.8, 3.4)],
            yaw: rng::uniform(&mut r, -0.5, 0.5),
            shape_scale: rng::uniform(&mut r, 0.8, 1.3),
            has_table: false,
        };
        // cycle through the size bands of the bundled pool
        let size = [rng::uniform(&mut r, 1.0, 8.0), rng::uniform(&mut r, 10.0, 20.0), rng::uniform(&mut r, 21.0, 30.0), rng::uniform(&mut r, 30.5, 40.0)][k % 4];
        let mask = random_convex_mask(&mut r, 40);
        let spec = ProductSpec::new(size, mask, None).map_err(|e| format!("trial {k}: {e}"))?;
        let plan = template::compile_guidance(&human, &spec, &pool, &cam).map_err(|e| format!("trial {k}: {e}"))?;
        let aspect = template::mask_aspect(&spec.mask).map_err(|e| e.to_string())?;
        for (f, (b, pose)) in plan.boxes.iter().zip(&plan.poses).enumerate() {
            if matches!(plan.expand_dir, ExpandDir::Up | ExpandDir::LeftRight) {
                let d = (b.height / b.width - aspect).abs();
                if !(d < 1e-9) {
                    return Err(format!("trial {k} frame {f}: box h/w off mask aspect by {d:.3e}"));
                }
                aspect_frames += 1;
            }
            if plan.holding_hand == HoldingHand::Both {
                let l = hand_anchor(pose, Side::Left, &cam).map_err(|e| e.to_string())?;
                let rr = hand_anchor(pose, Side::Right, &cam).map_err(|e| e.to_string())?;
                if b.width != l.dist(rr) {
                    return Err(format!("trial {k} frame {f}: width {} vs anchor distance {}", b.width, l.dist(rr)));
                }
                two_hand_frames += 1;
            }
        }
    }
    if two_hand_frames == 0 || aspect_frames == 0 {
        return Err("random requests never reached a two-hand or fixed-dimension template".into());
    }
    Ok(format!("{trials} plans: {aspect_frames} aspect frames, {two_hand_frames} two-hand frames"))
}

/// Euler exactness on constant fields, first-order convergence on
/// `v = −x`, and the CFG combination at 2.5.
pub fn sampler(seed: u64) -> CheckResult {
    let mut r = rng::derived(seed, 90);
    let x0 = tensor(&mut r, &[3, 2, 2], 1.0);
    let x1 = tensor(&mut r, &[3, 2, 2], 1.0);
    let v = x1.sub(&x0).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for steps in [1, 2, 3, 5, 10, 17, 64] {
        let cfg = SamplerConfig {
            steps,
            ..SamplerConfig::default()
        };
        let out = euler_sample(|_, _, _| Ok(v.clone()), &x0, &cfg).map_err(|e| e.to_string())?;
        let d = out.max_abs_diff(&x1);
        if !(d <= 1e-12) {
            return Err(format!("constant field, {steps} steps: error {d:.3e}"));
        }
        worst = worst.max(d);
    }
    let exact = x0.scale((-1.0f64).exp());
    let err = |steps| -> Result<f64, String> {
        let cfg = SamplerConfig {
            steps,
            cfg_scale: 1.0,
            ..SamplerConfig::default()
        };
        let out = euler_sample(|x, _, _| Ok(x.scale(-1.0)), &x0, &cfg).map_err(|e| e.to_string())?;
        Ok(out.max_abs_diff(&exact))
    };
    let mut ratios = Vec::new();
    for steps in [8, 16, 32, 64] {
        let ratio = err(steps)? / err(2 * steps)?;
        if !(1.8..=2.2).contains(&ratio) {
            return Err(format!("v = −x: error ratio {ratio:.3} between {steps} and {} steps", 2 * steps));
        }
        ratios.push(format!("{ratio:.3}"));
    }
    let ones = Tensor::full(&[4], 1.0);
    let zeros = Tensor::zeros(&[4]);
    let s = flow::DEFAULT_CFG_SCALE;
    let c = cfg_combine(&ones, &zeros, s).map_err(|e| e.to_string())?;
    if s != 2.5 || c.data().iter().any(|&v| v != 2.5) {
        return Err(format!("cfg_combine(1, 0, {s}) = {:?}", c.data()));
    }
    let (vc, vu) = (tensor(&mut r, &[6], 1.0), tensor(&mut r, &[6], 1.0));
    let got = cfg_combine(&vc, &vu, 2.5).map_err(|e| e.to_string())?;
    for i in 0..6 {
        let hand = vu.data()[i] + 2.5 * (vc.data()[i] - vu.data()[i]);
        if got.data()[i] != hand {
            return Err(format!("cfg_combine element {i}: {} vs {hand}", got.data()[i]));
        }
    }
    Ok(format!("constant-field error {worst:.1e}; halving ratios {}; cfg 2.5 exact", ratios.join("/")))
}

/// Three chained clips of the toy model share bit-identical boundary slices.
pub fn clip_chaining(seed: u64) -> CheckResult {
    let cfg = ToyDitConfig::default();
    let weights = ToyDitWeights::init(&cfg, seed).map_err(|e| e.to_string())?;
    let frames = 4;
    let tcfg = crate::train::TrainConfig {
        seed,
        frame_size: 16,
        clip_frames: frames,
        ..Default::default()
    };
    let vae = guidestage_core::vae::PatchVae::new(crate::toy::VAE_SEED);
    let scene = crate::train::heldout_scene(&tcfg, &vae).map_err(|e| e.to_string())?;
    let mut m = crate::sample::ToyClipModel::new(&weights, cfg, scene.cond.guidance.clone(), scene.cond.clone(), frames);
    let scfg = SamplerConfig {
        steps: 4,
        cfg_scale: 2.5,
        clip_frames: frames,
        seed,
    };
    let clips = flow::chain_clips(&mut m, &scfg, 3).map_err(|e| e.to_string())?;
    for k in 1..clips.len() {
        let last = clips[k - 1].slice_outer(frames - 1, frames).map_err(|e| e.to_string())?;
        let first = clips[k].slice_outer(0, 1).map_err(|e| e.to_string())?;
        if !last.data().iter().zip(first.data()).all(|(a, b)| a.to_bits() == b.to_bits()) {
            return Err(format!("boundary between clips {} and {k} differs", k - 1));
        }
    }
    let joined = flow::join_clips(&clips).map_err(|e| e.to_string())?;
    if joined.shape()[0] != 3 * frames - 2 {
        return Err(format!("joined length {} ≠ {}", joined.shape()[0], 3 * frames - 2));
    }
    Ok(format!("3 clips × {frames} frames, 2 boundaries bit-equal, {} joined slices", joined.shape()[0]))
}
