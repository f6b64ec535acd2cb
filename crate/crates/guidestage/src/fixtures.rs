//! Builders for the bundled example inputs: an 8-template pool, a target
//! human, a product mask and a caption. The files under `fixtures/` are
//! these builders' output; a test keeps them in sync.

use std::f64::consts::TAU;

use guidestage_core::body::{hand_anchor, BodyPose, Camera, HandState, Joint, Orientation, Side};
use guidestage_core::caption::{serialize_caption, HumanCaption, ProductCaption};
use guidestage_core::geometry::{Mask, Point, RotatedRect};
use guidestage_core::template::{Action, ExpandDir, FixedDim, HoldingHand, MotionTemplate};

use crate::dto::{GraspDto, HumanFile, PoolFile};

pub fn camera() -> Camera {
    Camera::new(70.0, 32.0, 32.0, 64, 64).expect("valid fixture camera")
}

fn base() -> BodyPose {
    BodyPose::rest([0.0, 0.0, 3.0], 0.0, 1.0)
}

fn set(p: &mut BodyPose, j: Joint, a: [f64; 3]) {
    p.joints[j.index()] = a;
}

/// `n` frames of `f(u)` for `u` evenly spaced in `[0, 1]`.
fn frames(n: usize, f: impl Fn(f64) -> BodyPose) -> Vec<BodyPose> {
    (0..n).map(|k| f(k as f64 / (n - 1).max(1) as f64)).collect()
}

/// One-hand hold: the arm raises forward by `lift` rad over the clip.
pub(crate) fn single_hold(side: Side, lift: f64, yaw: f64) -> impl Fn(f64) -> BodyPose {
    move |u| {
        let mut p = base();
        p.yaw = yaw;
        let [sh, el, _] = Joint::arm(side);
        let inward = if side == Side::Right { 0.15 } else { -0.15 };
        set(&mut p, sh, [inward, -0.5 - lift * u, 0.0]);
        set(&mut p, el, [0.0, -0.8 + 0.2 * u, 0.0]);
        p.grasp.set(side, HandState::SingleGrasp);
        p
    }
}

fn two_hand(u: f64) -> BodyPose {
    let mut p = base();
    set(&mut p, Joint::LShoulder, [0.35, -0.7 - 0.3 * u, 0.0]);
    set(&mut p, Joint::RShoulder, [-0.35, -0.7 - 0.3 * u, 0.0]);
    set(&mut p, Joint::LElbow, [0.2, -0.6, 0.0]);
    set(&mut p, Joint::RElbow, [-0.2, -0.6, 0.0]);
    p.grasp.left = HandState::TwoHandHold;
    p.grasp.right = HandState::TwoHandHold;
    p
}

fn head_talk(u: f64) -> BodyPose {
    let mut p = base();
    let s = (TAU * u).sin();
    set(&mut p, Joint::Pelvis, [0.03 * s, 0.0, 0.0]);
    set(&mut p, Joint::Neck, [0.06 * s, 0.05, 0.1 * s]);
    set(&mut p, Joint::Head, [0.0, 0.1 * s, 0.0]);
    p
}

fn hand_demo(u: f64) -> BodyPose {
    let mut p = base();
    let s = (TAU * u).sin();
    set(&mut p, Joint::LShoulder, [-0.3 - 0.3 * s, -0.4, 0.0]);
    set(&mut p, Joint::LElbow, [0.0, -0.6 - 0.2 * s, 0.0]);
    set(&mut p, Joint::RShoulder, [0.3 + 0.3 * s, -0.4, 0.0]);
    set(&mut p, Joint::RElbow, [0.0, -0.6 - 0.2 * s, 0.0]);
    p
}

/// Upright box resting on the palm, with a slow template-authored tilt.
fn single_track(poses: &[BodyPose], side: Side, w: f64, h: f64) -> Vec<Option<RotatedRect>> {
    let cam = camera();
    poses
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let a = hand_anchor(p, side, &cam).expect("fixture hands are visible");
            Some(RotatedRect::new(a.x, a.y - 0.4 * h, w, h, 0.02 * k as f64).expect("positive box"))
        })
        .collect()
}

fn two_hand_track(poses: &[BodyPose], h: f64) -> Vec<Option<RotatedRect>> {
    let cam = camera();
    poses
        .iter()
        .map(|p| {
            let l = hand_anchor(p, Side::Left, &cam).expect("visible");
            let r = hand_anchor(p, Side::Right, &cam).expect("visible");
            let mid = l.add(r).scale(0.5);
            let d = l.sub(r);
            Some(RotatedRect::new(mid.x, mid.y, d.norm(), h, d.y.atan2(d.x)).expect("distinct anchors"))
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn template(
    id: &str,
    action: Action,
    hand: HoldingHand,
    range: [f64; 2],
    expand: ExpandDir,
    orientation: Orientation,
    table: bool,
    frames: Vec<BodyPose>,
    box_track: Vec<Option<RotatedRect>>,
) -> MotionTemplate {
    MotionTemplate {
        id: id.to_string(),
        action,
        frames,
        box_track,
        expand_dir: expand,
        fixed_dim: if expand == ExpandDir::LeftRight { FixedDim::Height } else { FixedDim::Width },
        size_range_cm: range,
        orientation,
        requires_table: table,
        holding_hand: hand,
    }
}

/// The bundled pool, sorted by id.
pub fn pool() -> Vec<MotionTemplate> {
    use Action::*;
    use Orientation::Frontal;
    let hold = |id, action, side: Side, range, expand, orient, table, lift, yaw| {
        let f = frames(8, single_hold(side, lift, yaw));
        let track = single_track(&f, side, 6.0, 10.0);
        let hand = if side == Side::Left { HoldingHand::Left } else { HoldingHand::Right };
        template(id, action, hand, range, expand, orient, table, f, track)
    };
    let two = frames(8, two_hand);
    let two_track = two_hand_track(&two, 8.0);
    let mut out = vec![
        hold("hold-left-medium", Lift, Side::Left, [8.0, 20.0], ExpandDir::Up, Frontal, false, 0.5, 0.0),
        hold("hold-right-small", SingleGrasp, Side::Right, [1.0, 10.0], ExpandDir::Up, Frontal, false, 0.3, 0.0),
        hold("pickup-right-large", PickUp, Side::Right, [15.0, 30.0], ExpandDir::LeftRight, Frontal, false, 0.6, 0.0),
        hold("raise-right-side", Raise, Side::Right, [1.0, 30.0], ExpandDir::Up, Orientation::Right, false, 0.8, 1.2),
        hold("table-grab-right", TableGrab, Side::Right, [1.0, 25.0], ExpandDir::Free, Frontal, true, 0.2, 0.0),
        template("two-hand-hold", TwoHandHold, HoldingHand::Both, [20.0, 40.0], ExpandDir::Up, Frontal, false, two, two_track),
        template("head-talk-frontal", HeadTalk, HoldingHand::None, [1.0, 40.0], ExpandDir::Free, Frontal, false, frames(6, head_talk), vec![]),
        template("hand-demo-frontal", HandDemo, HoldingHand::None, [1.0, 40.0], ExpandDir::Free, Frontal, false, frames(5, hand_demo), vec![]),
    ];
    out.sort_by(|a, b| a.id.cmp(&b.id));
    out
}

pub fn pool_file() -> PoolFile {
    PoolFile::new(&camera(), &pool())
}

pub fn human() -> HumanFile {
    HumanFile {
        root: [0.15, 0.05, 3.2],
        yaw: 0.1,
        shape_scale: 1.1,
        joints: Default::default(),
        grasp: GraspDto::default(),
        has_table: false,
    }
}

/// A bottle-like product tilted by 20°: 9 × 22 px on a 48 × 48 canvas.
pub fn product_mask() -> Mask {
    let rect = RotatedRect::new(24.0, 24.0, 9.0, 22.0, 20f64.to_radians()).expect("positive");
    Mask::from_fn(48, 48, |r, c| rect.contains(Point::new(c as f64 + 0.5, r as f64 + 0.5), 0.0)).expect("nonempty")
}

pub fn product_caption(size_cm: f64) -> ProductCaption {
    ProductCaption {
        category: "water bottle".into(),
        size_cm: Some(size_cm),
        color: "teal".into(),
        material: "brushed steel".into(),
        text_on_product: Some("HYDRA 750".into()),
    }
}

pub fn human_caption() -> HumanCaption {
    HumanCaption {
        person: "adult presenter in a grey sweater".into(),
        environment: "bright studio".into(),
        lighting: "soft frontal key light".into(),
    }
}

/// Canonical caption line for a product of `size_cm`, newline terminated.
pub fn caption_text(size_cm: f64) -> String {
    format!("{}\n", serialize_caption(&product_caption(size_cm), &human_caption()))
}

pub const FIXTURE_SIZE_CM: f64 = 12.0;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pool_templates_validate() {
        let p = pool();
        assert_eq!(p.len(), 8);
        for t in &p {
            t.validate().unwrap();
        }
        let ids: Vec<_> = p.iter().map(|t| t.id.as_str()).collect();
        let mut sorted = ids.clone();
        sorted.sort();
        assert_eq!(ids, sorted);
    }

    #[test]
    fn mask_is_tilted_and_tall() {
        let m = product_mask();
        let a = guidestage_core::template::mask_aspect(&m).unwrap();
        assert!(a > 2.0 && a < 3.0, "aspect {a}");
    }
}
