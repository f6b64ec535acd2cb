//! Simplified parametric body: a 15-joint rigid skeleton with uniform
//! shape scale, pinhole projection, orientation buckets and retargeting.
//!
//! World frame: x right, y down, z away from the camera (which sits at
//! the origin looking down +z). At yaw 0 the body faces the camera, so the
//! body's left side appears on the image right.
//!
//! Each joint `j` has a parent (where its offset starts) and a frame
//! joint (whose orientation rotates the offset). With `G` the global
//! orientation,
//!
//! ```text
//! G_j   = G_frame(j) · R(angles_j)
//! pos_j = pos_parent(j) + G_frame(j) · (shape_scale · rest_offset_j)
//! ```
//!
//! and the pelvis sits at `root` with `G_frame = Ry(yaw)`. Joint angles
//! are `[z, x, y]` Euler angles applied as `R = Rz · Rx · Ry`.
//!
//! Rest table (meters, parent-relative):
//!
//! | joint      | parent     | frame      | offset              |
//! |------------|------------|------------|---------------------|
//! | pelvis     | (root)     | yaw        | (0, 0, 0)           |
//! | neck       | pelvis     | pelvis     | (0, −0.50, 0)       |
//! | head       | neck       | neck       | (0, −0.22, 0)       |
//! | l_shoulder | neck       | pelvis     | (±0.18, 0.02, 0)    |
//! | l_elbow    | l_shoulder | l_shoulder | (±0.04, 0.28, 0)    |
//! | l_wrist    | l_elbow    | l_elbow    | (±0.02, 0.25, 0)    |
//! | l_hip      | pelvis     | yaw        | (±0.10, 0.05, 0)    |
//! | l_knee     | l_hip      | l_hip      | (0, 0.42, 0)        |
//! | l_ankle    | l_knee     | l_knee     | (0, 0.40, 0)        |
//!
//! Left joints take the `+` sign, right joints `−`. The rest skeleton is
//! planar (z = 0) and mirror symmetric. Head, wrist and ankle angles are
//! carried but do not move any joint position.

use alloc::vec::Vec;
use core::f64::consts::{FRAC_PI_4, PI};

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::math;

pub const NUM_JOINTS: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Joint {
    Pelvis,
    Neck,
    Head,
    LShoulder,
    RShoulder,
    LElbow,
    RElbow,
    LWrist,
    RWrist,
    LHip,
    RHip,
    LKnee,
    RKnee,
    LAnkle,
    RAnkle,
}

impl Joint {
    pub const ALL: [Joint; NUM_JOINTS] = [
        Joint::Pelvis,
        Joint::Neck,
        Joint::Head,
        Joint::LShoulder,
        Joint::RShoulder,
        Joint::LElbow,
        Joint::RElbow,
        Joint::LWrist,
        Joint::RWrist,
        Joint::LHip,
        Joint::RHip,
        Joint::LKnee,
        Joint::RKnee,
        Joint::LAnkle,
        Joint::RAnkle,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Joint::Pelvis => "pelvis",
            Joint::Neck => "neck",
            Joint::Head => "head",
            Joint::LShoulder => "l_shoulder",
            Joint::RShoulder => "r_shoulder",
            Joint::LElbow => "l_elbow",
            Joint::RElbow => "r_elbow",
            Joint::LWrist => "l_wrist",
            Joint::RWrist => "r_wrist",
            Joint::LHip => "l_hip",
            Joint::RHip => "r_hip",
            Joint::LKnee => "l_knee",
            Joint::RKnee => "r_knee",
            Joint::LAnkle => "l_ankle",
            Joint::RAnkle => "r_ankle",
        }
    }

    pub fn from_name(name: &str) -> Option<Joint> {
        Joint::ALL.iter().copied().find(|j| j.name() == name)
    }

    /// Arm chain (shoulder, elbow, wrist) for one side.
    pub fn arm(side: Side) -> [Joint; 3] {
        match side {
            Side::Left => [Joint::LShoulder, Joint::LElbow, Joint::LWrist],
            Side::Right => [Joint::RShoulder, Joint::RElbow, Joint::RWrist],
        }
    }
}

/// Skeleton bones as (parent, child) joint pairs, in draw order.
pub const BONES: [(Joint, Joint); 14] = [
    (Joint::Pelvis, Joint::Neck),
    (Joint::Neck, Joint::Head),
    (Joint::Neck, Joint::LShoulder),
    (Joint::Neck, Joint::RShoulder),
    (Joint::LShoulder, Joint::LElbow),
    (Joint::LElbow, Joint::LWrist),
    (Joint::RShoulder, Joint::RElbow),
    (Joint::RElbow, Joint::RWrist),
    (Joint::Pelvis, Joint::LHip),
    (Joint::Pelvis, Joint::RHip),
    (Joint::LHip, Joint::LKnee),
    (Joint::LKnee, Joint::LAnkle),
    (Joint::RHip, Joint::RKnee),
    (Joint::RKnee, Joint::RAnkle),
];

struct RestEntry {
    parent: Option<Joint>,
    frame: Option<Joint>,
    offset: [f64; 3],
}

const fn entry(parent: Option<Joint>, frame: Option<Joint>, offset: [f64; 3]) -> RestEntry {
    RestEntry {
        parent,
        frame,
        offset,
    }
}

// Indexed by Joint; parents precede children.
const REST: [RestEntry; NUM_JOINTS] = {
    use Joint::*;
    [
        entry(None, None, [0.0, 0.0, 0.0]),
        entry(Some(Pelvis), Some(Pelvis), [0.0, -0.50, 0.0]),
        entry(Some(Neck), Some(Neck), [0.0, -0.22, 0.0]),
        entry(Some(Neck), Some(Pelvis), [0.18, 0.02, 0.0]),
        entry(Some(Neck), Some(Pelvis), [-0.18, 0.02, 0.0]),
        entry(Some(LShoulder), Some(LShoulder), [0.04, 0.28, 0.0]),
        entry(Some(RShoulder), Some(RShoulder), [-0.04, 0.28, 0.0]),
        entry(Some(LElbow), Some(LElbow), [0.02, 0.25, 0.0]),
        entry(Some(RElbow), Some(RElbow), [-0.02, 0.25, 0.0]),
        entry(Some(Pelvis), None, [0.10, 0.05, 0.0]),
        entry(Some(Pelvis), None, [-0.10, 0.05, 0.0]),
        entry(Some(LHip), Some(LHip), [0.0, 0.42, 0.0]),
        entry(Some(RHip), Some(RHip), [0.0, 0.42, 0.0]),
        entry(Some(LKnee), Some(LKnee), [0.0, 0.40, 0.0]),
        entry(Some(RKnee), Some(RKnee), [0.0, 0.40, 0.0]),
    ]
};

/// Parent-relative rest offset of a joint (meters, before shape scaling).
pub fn rest_offset(j: Joint) -> [f64; 3] {
    REST[j.index()].offset
}

pub fn parent(j: Joint) -> Option<Joint> {
    REST[j.index()].parent
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum HandState {
    #[default]
    Open,
    SingleGrasp,
    TwoHandHold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Grasp {
    pub left: HandState,
    pub right: HandState,
}

impl Grasp {
    pub fn get(&self, side: Side) -> HandState {
        match side {
            Side::Left => self.left,
            Side::Right => self.right,
        }
    }
    pub fn set(&mut self, side: Side, s: HandState) {
        match side {
            Side::Left => self.left = s,
            Side::Right => self.right = s,
        }
    }
}

/// Pose of the parametric body for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct BodyPose {
    pub root: [f64; 3],
    pub yaw: f64,
    pub shape_scale: f64,
    pub joints: [[f64; 3]; NUM_JOINTS],
    pub grasp: Grasp,
}

/// The identity a template is retargeted onto.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Identity {
    pub root: [f64; 3],
    pub yaw: f64,
    pub shape_scale: f64,
}

impl BodyPose {
    pub fn rest(root: [f64; 3], yaw: f64, shape_scale: f64) -> Self {
        BodyPose {
            root,
            yaw,
            shape_scale,
            joints: [[0.0; 3]; NUM_JOINTS],
            grasp: Grasp::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.root.iter().all(|v| v.is_finite())
            && self.yaw.is_finite()
            && self.joints.iter().flatten().all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite("BodyPose"));
        }
        if !(self.shape_scale > 0.5 && self.shape_scale < 2.0) {
            return Err(Error::InvalidArgument(alloc::format!(
                "shape_scale {} outside (0.5, 2.0)",
                self.shape_scale
            )));
        }
        Ok(())
    }

    pub fn angles(&self, j: Joint) -> [f64; 3] {
        self.joints[j.index()]
    }

    pub fn identity(&self) -> Identity {
        Identity {
            root: self.root,
            yaw: self.yaw,
            shape_scale: self.shape_scale,
        }
    }
}

/// Pinhole camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    pub fn new(focal: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        if !(focal > 0.0) || width == 0 || height == 0 {
            return Err(Error::InvalidArgument(alloc::format!(
                "camera focal {focal}, size {width}x{height}"
            )));
        }
        Ok(Camera {
            focal,
            cx,
            cy,
            width,
            height,
        })
    }

    /// Projects a camera-space point; `None` at or behind the near plane.
    pub fn project(&self, p: [f64; 3]) -> Option<Point> {
        if p[2] <= 1e-6 {
            return None;
        }
        Some(Point::new(
            self.focal * p[0] / p[2] + self.cx,
            self.focal * p[1] / p[2] + self.cy,
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Joints2D {
    pub points: [Point; NUM_JOINTS],
    pub visible: [bool; NUM_JOINTS],
}

impl Joints2D {
    pub fn get(&self, j: Joint) -> Option<Point> {
        self.visible[j.index()].then(|| self.points[j.index()])
    }
}

type Mat3 = [[f64; 3]; 3];

const IDENTITY3: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn mat_vec(a: &Mat3, v: [f64; 3]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (i, o) in out.iter_mut().enumerate() {
        *o = a[i][0] * v[0] + a[i][1] * v[1] + a[i][2] * v[2];
    }
    out
}

fn rot_x(a: f64) -> Mat3 {
    let (s, c) = (math::sin(a), math::cos(a));
    [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]]
}

/// Rotation about the vertical (y) axis.
pub fn rot_y(a: f64) -> [[f64; 3]; 3] {
    let (s, c) = (math::sin(a), math::cos(a));
    [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]]
}

fn rot_z(a: f64) -> Mat3 {
    let (s, c) = (math::sin(a), math::cos(a));
    [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
}

fn euler_zxy(a: [f64; 3]) -> Mat3 {
    mat_mul(&mat_mul(&rot_z(a[0]), &rot_x(a[1])), &rot_y(a[2]))
}

/// Rotates `v` about the vertical axis by `angle`.
pub fn rotate_vertical(v: [f64; 3], angle: f64) -> [f64; 3] {
    mat_vec(&rot_y(angle), v)
}

/// World-space joint positions.
pub fn joint_positions(pose: &BodyPose) -> [[f64; 3]; NUM_JOINTS] {
    let yaw_frame = rot_y(pose.yaw);
    let mut global = [IDENTITY3; NUM_JOINTS];
    let mut pos = [[0.0; 3]; NUM_JOINTS];
    for j in Joint::ALL {
        let e = &REST[j.index()];
        let frame = e.frame.map_or(yaw_frame, |f| global[f.index()]);
        global[j.index()] = mat_mul(&frame, &euler_zxy(pose.angles(j)));
        pos[j.index()] = match e.parent {
            None => pose.root,
            Some(p) => {
                let off = e.offset.map(|v| v * pose.shape_scale);
                let d = mat_vec(&frame, off);
                let base = pos[p.index()];
                [base[0] + d[0], base[1] + d[1], base[2] + d[2]]
            }
        };
    }
    pos
}

/// Poses the skeleton and projects every joint through `cam`.
pub fn forward_kinematics(pose: &BodyPose, cam: &Camera) -> Joints2D {
    let pos = joint_positions(pose);
    let mut points = [Point::default(); NUM_JOINTS];
    let mut visible = [false; NUM_JOINTS];
    for (i, p) in pos.iter().enumerate() {
        if let Some(q) = cam.project(*p) {
            points[i] = q;
            visible[i] = true;
        }
    }
    Joints2D { points, visible }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Orientation {
    Frontal,
    Left,
    Right,
    Back,
}

/// Buckets global yaw: Frontal `|yaw| < π/4`, Right `[π/4, 3π/4)`,
/// Left `(−3π/4, −π/4]`, Back otherwise.
pub fn orientation_class(pose: &BodyPose) -> Orientation {
    orientation_of_yaw(pose.yaw)
}

pub fn orientation_of_yaw(yaw: f64) -> Orientation {
    let y = math::wrap_pi(yaw);
    let q = 3.0 * FRAC_PI_4;
    if math::abs(y) < FRAC_PI_4 {
        Orientation::Frontal
    } else if (FRAC_PI_4..q).contains(&y) {
        Orientation::Right
    } else if y > -q && y <= -FRAC_PI_4 {
        Orientation::Left
    } else {
        debug_assert!(math::abs(y) >= q && math::abs(y) <= PI);
        Orientation::Back
    }
}

/// Moves a template sequence onto `target`, keeping template joint
/// angles, grasp and frame-relative root/yaw motion.
pub fn retarget(template: &[BodyPose], target: &Identity) -> Result<Vec<BodyPose>> {
    let first = template.first().ok_or(Error::EmptyInput("retarget"))?;
    let turn = target.yaw - first.yaw;
    let turn_m = rot_y(turn);
    // root_k' = R·root_k + (target.root − R·root_0); exact when R = I and
    // the target sits on frame 0
    let r0 = mat_vec(&turn_m, first.root);
    let shift = [target.root[0] - r0[0], target.root[1] - r0[1], target.root[2] - r0[2]];
    Ok(template
        .iter()
        .map(|f| {
            let r = mat_vec(&turn_m, f.root);
            BodyPose {
                root: [r[0] + shift[0], r[1] + shift[1], r[2] + shift[2]],
                yaw: f.yaw + turn,
                shape_scale: target.shape_scale,
                joints: f.joints,
                grasp: f.grasp,
            }
        })
        .collect())
}

fn wrist_elbow(side: Side) -> (Joint, Joint) {
    match side {
        Side::Left => (Joint::LWrist, Joint::LElbow),
        Side::Right => (Joint::RWrist, Joint::RElbow),
    }
}

/// Palm-center proxy: the projected wrist pushed half a (projected)
/// forearm further along the elbow→wrist direction.
pub fn hand_anchor(pose: &BodyPose, side: Side, cam: &Camera) -> Result<Point> {
    let j = forward_kinematics(pose, cam);
    anchor_from_joints(&j, side)
}

pub fn anchor_from_joints(j: &Joints2D, side: Side) -> Result<Point> {
    let (w, e) = wrist_elbow(side);
    match (j.get(w), j.get(e)) {
        (Some(wp), Some(ep)) => Ok(wp.add(wp.sub(ep).scale(0.5))),
        _ => Err(Error::HandInvisible { frame: 0 }),
    }
}

/// Projected elbow→wrist length in pixels.
pub fn forearm_px(j: &Joints2D, side: Side) -> Result<f64> {
    let (w, e) = wrist_elbow(side);
    match (j.get(w), j.get(e)) {
        (Some(wp), Some(ep)) => Ok(wp.dist(ep)),
        _ => Err(Error::HandInvisible { frame: 0 }),
    }
}
