//! JSON schemas for poses, rectangles, template pools, human inputs and
//! compiled plans, with conversions to and from the core types.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use guidestage_core::body::{BodyPose, Camera, Grasp, HandState, Joint, Orientation, NUM_JOINTS};
use guidestage_core::geometry::RotatedRect;
use guidestage_core::template::{
    Action, ExpandDir, FixedDim, GuidancePlan, HoldingHand, HumanInput, MotionTemplate,
};

use crate::error::{CliError, CliResult};

pub const POOL_VERSION: u32 = 1;

/// Mirrors a fieldless core enum as a snake_case JSON string.
macro_rules! mirror_enum {
    ($dto:ident, $core:ty, { $($v:ident),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
        #[serde(rename_all = "snake_case")]
        pub enum $dto { $($v),+ }

        impl From<$dto> for $core {
            fn from(d: $dto) -> Self {
                match d { $($dto::$v => <$core>::$v),+ }
            }
        }

        impl From<$core> for $dto {
            fn from(c: $core) -> Self {
                match c { $(<$core>::$v => $dto::$v),+ }
            }
        }
    };
}

mirror_enum!(HandStateDto, HandState, { Open, SingleGrasp, TwoHandHold });
mirror_enum!(ActionDto, Action, { SingleGrasp, Lift, PickUp, Raise, TwoHandHold, TableGrab, HeadTalk, HandDemo });
mirror_enum!(ExpandDirDto, ExpandDir, { Up, LeftRight, Free });
mirror_enum!(FixedDimDto, FixedDim, { Width, Height });
mirror_enum!(HoldingHandDto, HoldingHand, { Left, Right, Both, None });
mirror_enum!(OrientationDto, Orientation, { Frontal, Left, Right, Back });

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RectDto {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub angle_deg: f64,
}

impl From<&RotatedRect> for RectDto {
    fn from(r: &RotatedRect) -> Self {
        RectDto {
            cx: r.cx,
            cy: r.cy,
            w: r.width,
            h: r.height,
            angle_deg: r.angle.to_degrees(),
        }
    }
}

impl RectDto {
    pub fn to_core(&self) -> CliResult<RotatedRect> {
        Ok(RotatedRect::new(self.cx, self.cy, self.w, self.h, self.angle_deg.to_radians())?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraspDto {
    pub left: HandStateDto,
    pub right: HandStateDto,
}

impl Default for GraspDto {
    fn default() -> Self {
        GraspDto {
            left: HandStateDto::Open,
            right: HandStateDto::Open,
        }
    }
}

/// `{root, yaw, shape_scale, joints: {name: [z, x, y]}, grasp}`. Joints
/// left out of the map are at rest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseDto {
    pub root: [f64; 3],
    pub yaw: f64,
    pub shape_scale: f64,
    #[serde(default)]
    pub joints: BTreeMap<String, [f64; 3]>,
    #[serde(default)]
    pub grasp: GraspDto,
}

impl From<&BodyPose> for PoseDto {
    fn from(p: &BodyPose) -> Self {
        PoseDto {
            root: p.root,
            yaw: p.yaw,
            shape_scale: p.shape_scale,
            joints: Joint::ALL
                .iter()
                .filter(|j| p.angles(**j) != [0.0; 3])
                .map(|j| (j.name().to_string(), p.angles(*j)))
                .collect(),
            grasp: GraspDto {
                left: p.grasp.left.into(),
                right: p.grasp.right.into(),
            },
        }
    }
}

impl PoseDto {
    pub fn to_core(&self) -> CliResult<BodyPose> {
        let mut joints = [[0.0; 3]; NUM_JOINTS];
        for (name, a) in &self.joints {
            let j = Joint::from_name(name).ok_or_else(|| CliError::Parse(format!("unknown joint {name:?}")))?;
            joints[j.index()] = *a;
        }
        let pose = BodyPose {
            root: self.root,
            yaw: self.yaw,
            shape_scale: self.shape_scale,
            joints,
            grasp: Grasp {
                left: self.grasp.left.into(),
                right: self.grasp.right.into(),
            },
        };
        pose.validate()?;
        Ok(pose)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraDto {
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl From<&Camera> for CameraDto {
    fn from(c: &Camera) -> Self {
        CameraDto {
            focal: c.focal,
            cx: c.cx,
            cy: c.cy,
            width: c.width,
            height: c.height,
        }
    }
}

impl CameraDto {
    pub fn to_core(&self) -> CliResult<Camera> {
        Ok(Camera::new(self.focal, self.cx, self.cy, self.width, self.height)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateDto {
    pub id: String,
    pub action: ActionDto,
    pub frames: Vec<PoseDto>,
    #[serde(default)]
    pub box_track: Vec<Option<RectDto>>,
    pub expand_dir: ExpandDirDto,
    pub fixed_dim: FixedDimDto,
    pub size_range_cm: [f64; 2],
    pub orientation: OrientationDto,
    pub requires_table: bool,
    pub holding_hand: HoldingHandDto,
}

impl From<&MotionTemplate> for TemplateDto {
    fn from(t: &MotionTemplate) -> Self {
        TemplateDto {
            id: t.id.clone(),
            action: t.action.into(),
            frames: t.frames.iter().map(PoseDto::from).collect(),
            box_track: t.box_track.iter().map(|b| b.as_ref().map(RectDto::from)).collect(),
            expand_dir: t.expand_dir.into(),
            fixed_dim: t.fixed_dim.into(),
            size_range_cm: t.size_range_cm,
            orientation: t.orientation.into(),
            requires_table: t.requires_table,
            holding_hand: t.holding_hand.into(),
        }
    }
}

impl TemplateDto {
    pub fn to_core(&self) -> CliResult<MotionTemplate> {
        let t = MotionTemplate {
            id: self.id.clone(),
            action: self.action.into(),
            frames: self.frames.iter().map(PoseDto::to_core).collect::<CliResult<_>>()?,
            box_track: self
                .box_track
                .iter()
                .map(|b| b.as_ref().map(RectDto::to_core).transpose())
                .collect::<CliResult<_>>()?,
            expand_dir: self.expand_dir.into(),
            fixed_dim: self.fixed_dim.into(),
            size_range_cm: self.size_range_cm,
            orientation: self.orientation.into(),
            requires_table: self.requires_table,
            holding_hand: self.holding_hand.into(),
        };
        t.validate()?;
        Ok(t)
    }
}

/// Template pool file. Template boxes live in `camera`'s pixel space,
/// which is also the render camera for compiled plans.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolFile {
    pub pool_version: u32,
    pub camera: CameraDto,
    pub templates: Vec<TemplateDto>,
}

impl PoolFile {
    pub fn new(camera: &Camera, templates: &[MotionTemplate]) -> Self {
        PoolFile {
            pool_version: POOL_VERSION,
            camera: camera.into(),
            templates: templates.iter().map(TemplateDto::from).collect(),
        }
    }

    pub fn to_core(&self) -> CliResult<(Camera, Vec<MotionTemplate>)> {
        if self.pool_version != POOL_VERSION {
            return Err(CliError::Parse(format!(
                "pool_version {} unsupported (expected {POOL_VERSION})",
                self.pool_version
            )));
        }
        let templates = self.templates.iter().map(TemplateDto::to_core).collect::<CliResult<_>>()?;
        Ok((self.camera.to_core()?, templates))
    }
}

/// Target human: a pose in the body schema (only root, yaw and shape are
/// used) plus whether a table is in the scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HumanFile {
    pub root: [f64; 3],
    pub yaw: f64,
    pub shape_scale: f64,
    #[serde(default)]
    pub joints: BTreeMap<String, [f64; 3]>,
    #[serde(default)]
    pub grasp: GraspDto,
    #[serde(default)]
    pub has_table: bool,
}

impl HumanFile {
    pub fn to_core(&self) -> CliResult<HumanInput> {
        PoseDto {
            root: self.root,
            yaw: self.yaw,
            shape_scale: self.shape_scale,
            joints: self.joints.clone(),
            grasp: self.grasp,
        }
        .to_core()?;
        Ok(HumanInput {
            root: self.root,
            yaw: self.yaw,
            shape_scale: self.shape_scale,
            has_table: self.has_table,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanFile {
    pub hold_id: String,
    pub head_id: String,
    pub other_hand_id: Option<String>,
    pub holding_hand: HoldingHandDto,
    pub expand_dir: ExpandDirDto,
    pub product_aspect_hw: f64,
    pub camera: CameraDto,
    pub frames: Vec<PoseDto>,
    pub boxes: Vec<RectDto>,
}

impl PlanFile {
    pub fn new(plan: &GuidancePlan, cam: &Camera) -> Self {
        PlanFile {
            hold_id: plan.hold_id.clone(),
            head_id: plan.head_id.clone(),
            other_hand_id: plan.other_hand_id.clone(),
            holding_hand: plan.holding_hand.into(),
            expand_dir: plan.expand_dir.into(),
            product_aspect_hw: plan.product_aspect_hw,
            camera: cam.into(),
            frames: plan.poses.iter().map(PoseDto::from).collect(),
            boxes: plan.boxes.iter().map(RectDto::from).collect(),
        }
    }

    pub fn to_core(&self) -> CliResult<(GuidancePlan, Camera)> {
        let plan = GuidancePlan {
            hold_id: self.hold_id.clone(),
            head_id: self.head_id.clone(),
            other_hand_id: self.other_hand_id.clone(),
            holding_hand: self.holding_hand.into(),
            expand_dir: self.expand_dir.into(),
            product_aspect_hw: self.product_aspect_hw,
            poses: self.frames.iter().map(PoseDto::to_core).collect::<CliResult<_>>()?,
            boxes: self.boxes.iter().map(RectDto::to_core).collect::<CliResult<_>>()?,
        };
        Ok((plan, self.camera.to_core()?))
    }
}

pub fn from_json<T: for<'de> Deserialize<'de>>(bytes: &[u8], what: &str) -> CliResult<T> {
    serde_json::from_slice(bytes).map_err(|e| CliError::Parse(format!("{what}: {e}")))
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(v: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(v).expect("DTOs serialize infallibly");
    out.push(b'\n');
    out
}
