//! Motion-template pool, matching, sequence composition and product-box
//! retargeting.
//!
//! Matching rules:
//!
//! - hold templates: `holding_hand != None`, size range containing the
//!   product size (max physical side, cm), matching orientation and table
//!   requirement; smallest range wins, ties by id.
//! - head templates: action `HeadTalk`, matching orientation; smallest id.
//! - other-hand templates: action `HandDemo`, matching orientation;
//!   smallest id. Only used when the hold is single-handed.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::body::{
    self, anchor_from_joints, forearm_px, forward_kinematics, BodyPose, Camera, Identity, Joint,
    Orientation, Side,
};
use crate::caption::ProductCaption;
use crate::error::{Error, Result};
use crate::geometry::{self, Expansion, Mask, RotatedRect};
use crate::math;

/// Two-hand boxes span exactly the inter-anchor distance.
pub const TWO_HAND_WIDTH_FACTOR: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    SingleGrasp,
    Lift,
    PickUp,
    Raise,
    TwoHandHold,
    TableGrab,
    HeadTalk,
    HandDemo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExpandDir {
    Up,
    LeftRight,
    Free,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FixedDim {
    Width,
    Height,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HoldingHand {
    Left,
    Right,
    Both,
    None,
}

impl HoldingHand {
    pub fn single_side(self) -> Option<Side> {
        match self {
            HoldingHand::Left => Some(Side::Left),
            HoldingHand::Right => Some(Side::Right),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionTemplate {
    pub id: String,
    pub action: Action,
    pub frames: Vec<BodyPose>,
    /// Box per frame, in the template camera's pixel space. Oriented form:
    /// the height axis is the expansion axis.
    pub box_track: Vec<Option<RotatedRect>>,
    pub expand_dir: ExpandDir,
    pub fixed_dim: FixedDim,
    pub size_range_cm: [f64; 2],
    pub orientation: Orientation,
    pub requires_table: bool,
    pub holding_hand: HoldingHand,
}

impl MotionTemplate {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(format!("template {}: {msg}", self.id)));
        if self.frames.is_empty() {
            return bad("no frames".into());
        }
        for f in &self.frames {
            f.validate()?;
        }
        if self.holding_hand != HoldingHand::None
            && (self.box_track.len() != self.frames.len() || self.box_track.iter().any(Option::is_none))
        {
            return bad("holding templates need one box per frame".into());
        }
        let [lo, hi] = self.size_range_cm;
        if !(1.0 <= lo && lo <= hi && hi <= 40.0) {
            return bad(format!("size range [{lo}, {hi}] outside 1..=40 cm"));
        }
        match (self.expand_dir, self.fixed_dim) {
            (ExpandDir::Up, FixedDim::Height) | (ExpandDir::LeftRight, FixedDim::Width) => {
                return bad("fixed dimension inconsistent with expansion direction".into())
            }
            _ => {}
        }
        if self.holding_hand == HoldingHand::Both && self.expand_dir == ExpandDir::LeftRight {
            return bad("two-hand holds fix the width and cannot expand left/right".into());
        }
        Ok(())
    }

    fn range_width(&self) -> f64 {
        self.size_range_cm[1] - self.size_range_cm[0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProductSpec {
    pub size_cm: f64,
    pub aspect_hw: f64,
    pub caption: Option<ProductCaption>,
    pub mask: Mask,
}

impl ProductSpec {
    /// Builds a spec, deriving the aspect from the mask's largest component.
    pub fn new(size_cm: f64, mask: Mask, caption: Option<ProductCaption>) -> Result<Self> {
        if !(size_cm > 0.0 && size_cm <= 100.0) {
            return Err(Error::InvalidArgument(format!("product size {size_cm} cm outside (0, 100]")));
        }
        let aspect_hw = mask_aspect(&mask)?;
        Ok(ProductSpec {
            size_cm,
            aspect_hw,
            caption,
            mask,
        })
    }
}

/// Upright height/width of the mask's minimum rotated rectangle.
pub fn mask_aspect(mask: &Mask) -> Result<f64> {
    let rect = geometry::min_rotated_rect(&mask.largest_component())?;
    Ok(rect.upright_aspect())
}

/// Identity and scene facts about the target human.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HumanInput {
    pub root: [f64; 3],
    pub yaw: f64,
    pub shape_scale: f64,
    pub has_table: bool,
}

impl HumanInput {
    pub fn identity(&self) -> Identity {
        Identity {
            root: self.root,
            yaw: self.yaw,
            shape_scale: self.shape_scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuidancePlan {
    pub hold_id: String,
    pub head_id: String,
    pub other_hand_id: Option<String>,
    pub holding_hand: HoldingHand,
    pub expand_dir: ExpandDir,
    pub product_aspect_hw: f64,
    pub poses: Vec<BodyPose>,
    pub boxes: Vec<RotatedRect>,
}

impl GuidancePlan {
    pub fn frame_count(&self) -> usize {
        self.poses.len()
    }
}

/// Picks the hold template for a product size, orientation and table flag.
pub fn match_template(
    pool: &[MotionTemplate],
    size_cm: f64,
    orient: Orientation,
    needs_table: bool,
) -> Result<&MotionTemplate> {
    if pool.is_empty() {
        return Err(Error::EmptyInput("match_template"));
    }
    pool.iter()
        .filter(|t| {
            t.holding_hand != HoldingHand::None
                && t.size_range_cm[0] <= size_cm
                && size_cm <= t.size_range_cm[1]
                && t.orientation == orient
                && t.requires_table == needs_table
        })
        .min_by(|a, b| a.range_width().total_cmp(&b.range_width()).then_with(|| a.id.cmp(&b.id)))
        .ok_or_else(|| {
            Error::NoTemplate(format!(
                "hold for {size_cm} cm, {orient:?}, table={needs_table}"
            ))
        })
}

fn match_by_action(
    pool: &[MotionTemplate],
    action: Action,
    orient: Orientation,
) -> Result<&MotionTemplate> {
    pool.iter()
        .filter(|t| t.action == action && t.orientation == orient)
        .min_by(|a, b| a.id.cmp(&b.id))
        .ok_or_else(|| Error::NoTemplate(format!("{action:?} template for {orient:?}")))
}

pub fn match_head(pool: &[MotionTemplate], orient: Orientation) -> Result<&MotionTemplate> {
    match_by_action(pool, Action::HeadTalk, orient)
}

pub fn match_other_hand(pool: &[MotionTemplate], orient: Orientation) -> Result<&MotionTemplate> {
    match_by_action(pool, Action::HandDemo, orient)
}

/// Which template each joint of a composed frame comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JointSource {
    Hold,
    Head,
    OtherHand,
}

/// Source template for `joint` given the hold's holding hand.
pub fn joint_source(joint: Joint, holding: HoldingHand) -> JointSource {
    match joint {
        Joint::Pelvis | Joint::Neck | Joint::Head => JointSource::Head,
        _ => match holding.single_side() {
            Some(side) if Joint::arm(side.other()).contains(&joint) => JointSource::OtherHand,
            _ => JointSource::Hold,
        },
    }
}

/// Merges hold, head and other-hand templates frame by frame. The output
/// has the hold template's length; shorter sources loop.
pub fn compose_sequence(
    hold: &MotionTemplate,
    head: &MotionTemplate,
    other_hand: Option<&MotionTemplate>,
) -> Result<Vec<BodyPose>> {
    if hold.frames.is_empty() || head.frames.is_empty() {
        return Err(Error::EmptyInput("compose_sequence"));
    }
    if head.orientation != hold.orientation {
        return Err(Error::OrientationMismatch(format!(
            "head {} is {:?}, hold {} is {:?}",
            head.id, head.orientation, hold.id, hold.orientation
        )));
    }
    let free_side = hold.holding_hand.single_side().map(Side::other);
    let other = match (free_side, other_hand) {
        (Some(_), None) => return Err(Error::MissingOtherHand(hold.id.clone())),
        (None, Some(o)) => {
            return Err(Error::InvalidArgument(format!(
                "hold {} is not single-handed; other-hand template {} not allowed",
                hold.id, o.id
            )))
        }
        (Some(_), Some(o)) => {
            if o.frames.is_empty() {
                return Err(Error::EmptyInput("compose_sequence"));
            }
            if o.orientation != hold.orientation {
                return Err(Error::OrientationMismatch(format!(
                    "other-hand {} is {:?}, hold {} is {:?}",
                    o.id, o.orientation, hold.id, hold.orientation
                )));
            }
            Some(o)
        }
        (None, None) => None,
    };

    Ok(hold
        .frames
        .iter()
        .enumerate()
        .map(|(k, base)| {
            let mut frame = base.clone();
            let h = &head.frames[k % head.frames.len()];
            let o = other.map(|o| &o.frames[k % o.frames.len()]);
            for j in Joint::ALL {
                let src = match joint_source(j, hold.holding_hand) {
                    JointSource::Hold => continue,
                    JointSource::Head => h,
                    JointSource::OtherHand => o.expect("other-hand source present"),
                };
                frame.joints[j.index()] = src.joints[j.index()];
            }
            if let (Some(side), Some(o)) = (free_side, o) {
                frame.grasp.set(side, o.grasp.get(side));
            }
            frame
        })
        .collect())
}

fn with_frame(e: Error, frame: usize) -> Error {
    match e {
        Error::HandInvisible { .. } => Error::HandInvisible { frame },
        other => other,
    }
}

/// Moves the hold template's box track onto the retargeted poses and fits
/// it to the product aspect along the template's expansion direction.
pub fn retarget_box_track(
    hold: &MotionTemplate,
    retargeted: &[BodyPose],
    spec: &ProductSpec,
    cam: &Camera,
) -> Result<Vec<RotatedRect>> {
    if retargeted.len() != hold.frames.len() || hold.box_track.len() != hold.frames.len() {
        return Err(Error::shape(
            "retarget_box_track",
            format!(
                "{} template frames, {} boxes, {} retargeted",
                hold.frames.len(),
                hold.box_track.len(),
                retargeted.len()
            ),
        ));
    }
    let mut out = Vec::with_capacity(retargeted.len());
    for (k, (tpose, rpose)) in hold.frames.iter().zip(retargeted).enumerate() {
        let tbox = hold.box_track[k].ok_or_else(|| {
            Error::InvalidArgument(format!("template {} has no box at frame {k}", hold.id))
        })?;
        let tj = forward_kinematics(tpose, cam);
        let rj = forward_kinematics(rpose, cam);
        let moved = match hold.holding_hand {
            HoldingHand::Left | HoldingHand::Right => {
                let side = hold.holding_hand.single_side().unwrap();
                single_hand_box(&tbox, &tj, &rj, side).map_err(|e| with_frame(e, k))?
            }
            HoldingHand::Both => two_hand_box(&tbox, &tj, &rj).map_err(|e| with_frame(e, k))?,
            HoldingHand::None => {
                return Err(Error::InvalidArgument(format!(
                    "template {} holds nothing",
                    hold.id
                )))
            }
        };
        let fitted = match hold.expand_dir {
            ExpandDir::Up => geometry::resize_with_fixed_dim(&moved, Expansion::Up, spec.aspect_hw)?,
            ExpandDir::LeftRight => {
                geometry::resize_with_fixed_dim(&moved, Expansion::LeftRight, spec.aspect_hw)?
            }
            ExpandDir::Free => moved,
        };
        out.push(fitted);
    }
    Ok(out)
}

fn single_hand_box(
    tbox: &RotatedRect,
    tj: &body::Joints2D,
    rj: &body::Joints2D,
    side: Side,
) -> Result<RotatedRect> {
    let ta = anchor_from_joints(tj, side)?;
    let ra = anchor_from_joints(rj, side)?;
    let tlen = forearm_px(tj, side)?;
    let rlen = forearm_px(rj, side)?;
    if tlen <= 0.0 {
        return Err(Error::InvalidArgument("template forearm projects to a point".into()));
    }
    let ratio = rlen / tlen;
    let c = ra.add(tbox.center().sub(ta).scale(ratio));
    RotatedRect::new(c.x, c.y, tbox.width * ratio, tbox.height * ratio, tbox.angle)
}

fn two_hand_box(tbox: &RotatedRect, tj: &body::Joints2D, rj: &body::Joints2D) -> Result<RotatedRect> {
    let (tl, tr) = (anchor_from_joints(tj, Side::Left)?, anchor_from_joints(tj, Side::Right)?);
    let (rl, rr) = (anchor_from_joints(rj, Side::Left)?, anchor_from_joints(rj, Side::Right)?);
    let span = rl.dist(rr);
    let tspan = tl.dist(tr);
    if span <= 0.0 || tspan <= 0.0 {
        return Err(Error::InvalidArgument("hand anchors coincide".into()));
    }
    let mid = rl.add(rr).scale(0.5);
    let dir = rl.sub(rr);
    let width = span * TWO_HAND_WIDTH_FACTOR;
    RotatedRect::new(
        mid.x,
        mid.y,
        width,
        tbox.height * span / tspan,
        math::atan2(dir.y, dir.x),
    )
}

/// Full inference-time guidance compilation.
pub fn compile_guidance(
    human: &HumanInput,
    spec: &ProductSpec,
    pool: &[MotionTemplate],
    cam: &Camera,
) -> Result<GuidancePlan> {
    for t in pool {
        t.validate()?;
    }
    let spec = ProductSpec {
        aspect_hw: mask_aspect(&spec.mask)?,
        ..spec.clone()
    };
    let orient = body::orientation_of_yaw(human.yaw);
    let hold = match_template(pool, spec.size_cm, orient, human.has_table)?;
    let head = match_head(pool, orient)?;
    let other = match hold.holding_hand.single_side() {
        Some(_) => Some(match_other_hand(pool, orient)?),
        None => None,
    };
    let composed = compose_sequence(hold, head, other)?;
    let poses = body::retarget(&composed, &human.identity())?;
    let boxes = retarget_box_track(hold, &poses, &spec, cam)?;
    Ok(GuidancePlan {
        hold_id: hold.id.clone(),
        head_id: head.id.clone(),
        other_hand_id: other.map(|o| o.id.clone()),
        holding_hand: hold.holding_hand,
        expand_dir: hold.expand_dir,
        product_aspect_hw: spec.aspect_hw,
        poses,
        boxes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use alloc::string::ToString;
    use alloc::vec;

    fn cam() -> Camera {
        Camera::new(100.0, 32.0, 32.0, 64, 64).unwrap()
    }

    fn template(id: &str, hand: HoldingHand, range: [f64; 2], orient: Orientation, table: bool) -> MotionTemplate {
        let frames = vec![BodyPose::rest([0.0, 0.0, 3.0], 0.0, 1.0); 3];
        let boxes = if hand == HoldingHand::None {
            vec![]
        } else {
            vec![Some(RotatedRect::new(40.0, 40.0, 4.0, 8.0, 0.0).unwrap()); 3]
        };
        MotionTemplate {
            id: id.to_string(),
            action: match hand {
                HoldingHand::None => Action::HeadTalk,
                HoldingHand::Both => Action::TwoHandHold,
                _ => Action::SingleGrasp,
            },
            frames,
            box_track: boxes,
            expand_dir: ExpandDir::Up,
            fixed_dim: FixedDim::Width,
            size_range_cm: range,
            orientation: orient,
            requires_table: table,
            holding_hand: hand,
        }
    }

    #[test]
    fn single_candidate_is_chosen() {
        let pool = vec![
            template("a", HoldingHand::Right, [1.0, 10.0], Orientation::Frontal, false),
            template("b", HoldingHand::None, [1.0, 40.0], Orientation::Frontal, false),
        ];
        assert_eq!(match_template(&pool, 5.0, Orientation::Frontal, false).unwrap().id, "a");
    }

    #[test]
    fn oversized_product_has_no_template() {
        let pool = vec![template("a", HoldingHand::Right, [1.0, 40.0], Orientation::Frontal, false)];
        assert!(matches!(
            match_template(&pool, 50.0, Orientation::Frontal, false),
            Err(Error::NoTemplate(_))
        ));
    }

    #[test]
    fn smallest_range_then_id() {
        let pool = vec![
            template("z", HoldingHand::Right, [1.0, 30.0], Orientation::Frontal, false),
            template("m", HoldingHand::Left, [5.0, 15.0], Orientation::Frontal, false),
            template("c", HoldingHand::Both, [10.0, 20.0], Orientation::Frontal, false),
            template("t", HoldingHand::Right, [1.0, 12.0], Orientation::Frontal, true),
        ];
        assert_eq!(match_template(&pool, 12.0, Orientation::Frontal, false).unwrap().id, "c");
        assert_eq!(match_template(&pool, 12.0, Orientation::Frontal, true).unwrap().id, "t");
    }

    #[test]
    fn brute_force_agreement() {
        let mut r = rng::seeded(77);
        let orients = [Orientation::Frontal, Orientation::Left, Orientation::Right, Orientation::Back];
        let hands = [HoldingHand::Left, HoldingHand::Right, HoldingHand::Both, HoldingHand::None];
        for _ in 0..200 {
            let n = 1 + (rng::uniform(&mut r, 0.0, 12.0) as usize);
            let pool: Vec<MotionTemplate> = (0..n)
                .map(|i| {
                    let lo = (rng::uniform(&mut r, 1.0, 40.0) as i64) as f64;
                    let hi = (rng::uniform(&mut r, lo, 40.0) as i64).max(lo as i64) as f64;
                    let mut t = template(
                        &format!("t{}", (rng::uniform(&mut r, 0.0, 6.0) as usize) * 10 + i % 3),
                        hands[rng::uniform(&mut r, 0.0, 4.0) as usize],
                        [lo, hi],
                        orients[rng::uniform(&mut r, 0.0, 4.0) as usize],
                        rng::uniform(&mut r, 0.0, 1.0) < 0.3,
                    );
                    t.id = format!("{}-{i}", t.id);
                    t
                })
                .collect();
            let size = (rng::uniform(&mut r, 0.0, 45.0) as i64) as f64 + 0.5;
            let orient = orients[rng::uniform(&mut r, 0.0, 4.0) as usize];
            let table = rng::uniform(&mut r, 0.0, 1.0) < 0.3;

            // exhaustive: score every template, sort all, take the best feasible
            let mut scored: Vec<(bool, f64, String)> = pool
                .iter()
                .map(|t| {
                    let feasible = t.holding_hand != HoldingHand::None
                        && size >= t.size_range_cm[0]
                        && size <= t.size_range_cm[1]
                        && t.orientation == orient
                        && t.requires_table == table;
                    (!feasible, t.size_range_cm[1] - t.size_range_cm[0], t.id.clone())
                })
                .collect();
            scored.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)));
            let expect = scored.first().filter(|s| !s.0).map(|s| s.2.clone());
            let got = match_template(&pool, size, orient, table).ok().map(|t| t.id.clone());
            assert_eq!(got, expect);
        }
    }

    fn random_template(r: &mut rng::DetRng, id: &str, hand: HoldingHand, n: usize) -> MotionTemplate {
        let mut t = template(id, hand, [1.0, 40.0], Orientation::Frontal, false);
        t.frames = (0..n)
            .map(|_| {
                let mut p = BodyPose::rest([0.0, 0.0, 3.0], 0.1, 1.0);
                for a in p.joints.iter_mut().flatten() {
                    *a = rng::uniform(r, -0.5, 0.5);
                }
                p
            })
            .collect();
        if hand != HoldingHand::None {
            t.box_track = vec![Some(RotatedRect::new(40.0, 40.0, 4.0, 8.0, 0.0).unwrap()); n];
        }
        t
    }

    #[test]
    fn compose_two_hand_without_other() {
        let hold = template("h", HoldingHand::Both, [1.0, 40.0], Orientation::Frontal, false);
        let head = template("d", HoldingHand::None, [1.0, 40.0], Orientation::Frontal, false);
        let seq = compose_sequence(&hold, &head, None).unwrap();
        assert_eq!(seq, hold.frames);
    }

    #[test]
    fn compose_rejects_bad_inputs() {
        let hold = template("h", HoldingHand::Right, [1.0, 40.0], Orientation::Frontal, false);
        let head = template("d", HoldingHand::None, [1.0, 40.0], Orientation::Frontal, false);
        assert!(matches!(compose_sequence(&hold, &head, None), Err(Error::MissingOtherHand(_))));
        let side_head = template("d", HoldingHand::None, [1.0, 40.0], Orientation::Left, false);
        assert!(matches!(
            compose_sequence(&hold, &side_head, Some(&head)),
            Err(Error::OrientationMismatch(_))
        ));
    }

    #[test]
    fn compose_provenance() {
        let mut r = rng::seeded(21);
        for hand in [HoldingHand::Left, HoldingHand::Right, HoldingHand::Both] {
            let hold = random_template(&mut r, "hold", hand, 7);
            let head = random_template(&mut r, "head", HoldingHand::None, 3);
            let other = random_template(&mut r, "demo", HoldingHand::None, 4);
            let other_ref = hand.single_side().map(|_| &other);
            let seq = compose_sequence(&hold, &head, other_ref).unwrap();
            assert_eq!(seq.len(), 7);
            for (k, f) in seq.iter().enumerate() {
                for j in Joint::ALL {
                    let src = match joint_source(j, hand) {
                        JointSource::Hold => &hold.frames[k],
                        JointSource::Head => &head.frames[k % 3],
                        JointSource::OtherHand => &other.frames[k % 4],
                    };
                    assert_eq!(f.joints[j.index()], src.joints[j.index()]);
                }
                assert_eq!(f.root, hold.frames[k].root);
            }
        }
    }

    fn spec_with_aspect(aspect: f64) -> ProductSpec {
        ProductSpec {
            size_cm: 10.0,
            aspect_hw: aspect,
            caption: None,
            mask: Mask::from_fn(4, 4, |_, _| true).unwrap(),
        }
    }

    #[test]
    fn box_track_identity() {
        let mut r = rng::seeded(31);
        let mut hold = random_template(&mut r, "hold", HoldingHand::Right, 5);
        // put each box near the hand
        for (k, f) in hold.frames.iter().enumerate() {
            let a = body::hand_anchor(f, Side::Right, &cam()).unwrap();
            hold.box_track[k] = Some(RotatedRect::new(a.x + 1.0, a.y - 3.0, 3.0, 6.0, 0.2).unwrap());
        }
        let out = retarget_box_track(&hold, &hold.frames, &spec_with_aspect(2.0), &cam()).unwrap();
        for (o, t) in out.iter().zip(&hold.box_track) {
            let t = t.unwrap();
            for (a, b) in [(o.cx, t.cx), (o.cy, t.cy), (o.width, t.width), (o.height, t.height), (o.angle, t.angle)] {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn two_hand_width_is_anchor_distance() {
        let mut hold = template("h", HoldingHand::Both, [1.0, 40.0], Orientation::Frontal, false);
        let mut pose = BodyPose::rest([0.0, 0.0, 3.0], 0.0, 1.0);
        // raise the forearms so the anchors sit in front of the chest
        pose.joints[Joint::LElbow.index()] = [0.9, 0.0, 0.0];
        pose.joints[Joint::RElbow.index()] = [-0.9, 0.0, 0.0];
        hold.frames = vec![pose.clone(); 3];
        let out = retarget_box_track(&hold, &hold.frames, &spec_with_aspect(1.5), &cam()).unwrap();
        let j = forward_kinematics(&pose, &cam());
        let (l, rr) = (anchor_from_joints(&j, Side::Left).unwrap(), anchor_from_joints(&j, Side::Right).unwrap());
        for b in out {
            assert_eq!(b.width, l.dist(rr));
            assert_eq!(b.height, b.width * 1.5);
        }
    }

    #[test]
    fn two_hand_rule_arithmetic() {
        // anchors exactly 120 px apart on a horizontal line
        let tbox = RotatedRect::new(0.0, 0.0, 10.0, 5.0, 0.0).unwrap();
        let mut tj = forward_kinematics(&BodyPose::rest([0.0, 0.0, 3.0], 0.0, 1.0), &cam());
        let mut rj = tj;
        for (j, x) in [(Joint::RElbow, 90.0), (Joint::RWrist, 100.0), (Joint::LElbow, 240.0), (Joint::LWrist, 230.0)] {
            rj.points[j.index()] = geometry::Point::new(x, 50.0);
            tj.points[j.index()] = geometry::Point::new(x / 2.0, 50.0);
        }
        let b = two_hand_box(&tbox, &tj, &rj).unwrap();
        assert_eq!(b.width, 120.0);
        assert_eq!((b.cx, b.cy, b.angle), (165.0, 50.0, 0.0));
    }

    #[test]
    fn template_validation() {
        let mut t = template("x", HoldingHand::Both, [1.0, 40.0], Orientation::Frontal, false);
        assert!(t.validate().is_ok());
        t.expand_dir = ExpandDir::LeftRight;
        t.fixed_dim = FixedDim::Height;
        assert!(t.validate().is_err());
        t.holding_hand = HoldingHand::Left;
        assert!(t.validate().is_ok());
        t.fixed_dim = FixedDim::Width;
        assert!(t.validate().is_err());
        t.fixed_dim = FixedDim::Height;
        t.size_range_cm = [0.5, 10.0];
        assert!(t.validate().is_err());
        t.size_range_cm = [1.0, 10.0];
        t.box_track.pop();
        assert!(t.validate().is_err());
    }
}
