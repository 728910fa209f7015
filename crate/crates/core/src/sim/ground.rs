//! Ground geometry and time-of-impact contact resolution.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::lattice::Vec2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroundKind {
    Flat,
    Incline,
}

/// Flat ground at `height`; for `Incline`, points right of `pivot.x` sit on
/// a slope of `angle_deg` rising from `pivot`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundModel {
    pub kind: GroundKind,
    pub height: f64,
    pub angle_deg: f64,
    pub pivot: Vec2,
}

impl Default for GroundModel {
    fn default() -> Self {
        Self::flat(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum Friction {
    Infinite,
    Coulomb { mu: f64 },
}

/// A ground segment: signed distance is `normal . p - offset`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    pub normal: Vec2,
    pub tangent: Vec2,
    pub offset: f64,
}

impl Plane {
    pub fn distance(&self, p: &Vec2) -> f64 {
        self.normal.dot(p) - self.offset
    }
}

impl GroundModel {
    pub fn flat(height: f64) -> Self {
        Self { kind: GroundKind::Flat, height, angle_deg: 0.0, pivot: Vec2::new(0.0, height) }
    }

    pub fn incline(height: f64, angle_deg: f64, pivot_x: f64) -> Self {
        Self { kind: GroundKind::Incline, height, angle_deg, pivot: Vec2::new(pivot_x, height) }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=45.0).contains(&self.angle_deg) {
            return invalid(format!("incline angle must lie in [0, 45] degrees, got {}", self.angle_deg));
        }
        if !self.height.is_finite() || !self.pivot.iter().all(|v| v.is_finite()) {
            return invalid("ground geometry must be finite");
        }
        Ok(())
    }

    /// Segment beneath `p`, chosen by its x-coordinate.
    pub fn plane_at(&self, p: &Vec2) -> Plane {
        match self.kind {
            GroundKind::Incline if p.x > self.pivot.x => {
                let a = self.angle_deg.to_radians();
                let tangent = Vec2::new(a.cos(), a.sin());
                let normal = Vec2::new(-a.sin(), a.cos());
                Plane { normal, tangent, offset: normal.dot(&self.pivot) }
            }
            _ => Plane { normal: Vec2::new(0.0, 1.0), tangent: Vec2::new(1.0, 0.0), offset: self.height },
        }
    }

    pub fn signed_distance(&self, p: &Vec2) -> f64 {
        self.plane_at(p).distance(p)
    }

    /// Surface height at horizontal coordinate `x`.
    pub fn surface_y(&self, x: f64) -> f64 {
        match self.kind {
            GroundKind::Incline if x > self.pivot.x => {
                self.pivot.y + (x - self.pivot.x) * self.angle_deg.to_radians().tan()
            }
            _ => self.height,
        }
    }
}

/// Result of advancing one node through a step with contact handling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactOutcome {
    pub hit: bool,
    /// Time of impact within the step (`dt` when there is no contact).
    pub tau: f64,
    pub x_toi: Vec2,
    pub v_post: Vec2,
    /// Position at the end of the step.
    pub x_next: Vec2,
}

/// What the adjoint needs to replay a node's contact branch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct ContactTrace {
    pub hit: bool,
    pub plane: Plane,
    pub tau: f64,
    /// tau depends on the state (approach from above, moving into the ground)
    pub tau_active: bool,
    /// Coulomb branch with tangential velocity surviving the friction loss
    pub sliding: bool,
    /// Ground plane the end position was projected onto, if it still penetrated
    pub projected: Option<Plane>,
}

impl Default for ContactTrace {
    fn default() -> Self {
        Self {
            hit: false,
            plane: GroundModel::flat(0.0).plane_at(&Vec2::zeros()),
            tau: 0.0,
            tau_active: false,
            sliding: false,
            projected: None,
        }
    }
}

fn friction_tangential(vt: f64, vn: f64, friction: &Friction) -> (f64, bool) {
    match *friction {
        Friction::Infinite => (0.0, false),
        Friction::Coulomb { mu } => {
            let reduced = vt.abs() - mu * vn.abs();
            if reduced > 0.0 {
                (vt.signum() * reduced, true)
            } else {
                (0.0, false)
            }
        }
    }
}

pub(crate) fn contact_forward(
    x: &Vec2,
    vstar: &Vec2,
    dt: f64,
    ground: &GroundModel,
    friction: &Friction,
) -> (ContactOutcome, ContactTrace) {
    let tentative = x + vstar * dt;
    let plane = ground.plane_at(&tentative);
    let d_tent = plane.distance(&tentative);
    if !(d_tent < 0.0) {
        let out = ContactOutcome { hit: false, tau: dt, x_toi: tentative, v_post: *vstar, x_next: tentative };
        return (out, ContactTrace { plane, ..ContactTrace::default() });
    }
    let d_prev = plane.distance(x);
    let wn = plane.normal.dot(vstar);
    let (tau, tau_active) = if d_prev > 0.0 && wn < 0.0 { ((-d_prev / wn).min(dt), true) } else { (0.0, false) };
    let x_toi = x + vstar * tau;
    let vt = plane.tangent.dot(vstar);
    let (vt_post, sliding) = friction_tangential(vt, wn, friction);
    let v_post = plane.tangent * vt_post;
    let mut x_next = x_toi + v_post * (dt - tau);
    let mut projected = None;
    let end_plane = ground.plane_at(&x_next);
    let d_end = end_plane.distance(&x_next);
    if d_end < 0.0 {
        x_next -= end_plane.normal * d_end;
        projected = Some(end_plane);
    }
    let out = ContactOutcome { hit: true, tau, x_toi, v_post, x_next };
    (out, ContactTrace { hit: true, plane, tau, tau_active, sliding, projected })
}

/// Reverse of [`contact_forward`]: returns `(x_bar, vstar_bar)`.
pub(crate) fn contact_backward(
    vstar: &Vec2,
    v_post: &Vec2,
    trace: &ContactTrace,
    dt: f64,
    friction: &Friction,
    x_next_bar: &Vec2,
    v_next_bar: &Vec2,
) -> (Vec2, Vec2) {
    if !trace.hit {
        return (*x_next_bar, v_next_bar + x_next_bar * dt);
    }
    let mut xn_bar = *x_next_bar;
    if let Some(p) = trace.projected {
        xn_bar -= p.normal * p.normal.dot(&xn_bar);
    }
    let plane = &trace.plane;
    let tau = trace.tau;
    let vpost_bar = v_next_bar + xn_bar * (dt - tau);
    let mut tau_bar = vstar.dot(&xn_bar) - v_post.dot(&xn_bar);
    let mut x_bar = xn_bar;
    let mut w_bar = xn_bar * tau;

    if trace.sliding {
        if let Friction::Coulomb { mu } = *friction {
            let vt = plane.tangent.dot(vstar);
            let wn = plane.normal.dot(vstar);
            let vt_post_bar = plane.tangent.dot(&vpost_bar);
            w_bar += plane.tangent * vt_post_bar;
            w_bar -= plane.normal * (vt_post_bar * mu * wn.signum() * vt.signum());
        }
    }
    if trace.tau_active {
        let wn = plane.normal.dot(vstar);
        let d_prev = -tau * wn;
        let dprev_bar = -tau_bar / wn;
        let wn_bar = tau_bar * d_prev / (wn * wn);
        x_bar += plane.normal * dprev_bar;
        w_bar += plane.normal * wn_bar;
        tau_bar = 0.0;
    }
    let _ = tau_bar;
    (x_bar, w_bar)
}

/// Advances one node from `x_prev` with pre-contact velocity `v_pre`,
/// splitting the step at the time of impact when it would enter the ground.
pub fn resolve_contact_on(
    x_prev: &Vec2,
    v_pre: &Vec2,
    dt: f64,
    ground: &GroundModel,
    friction: &Friction,
) -> ContactOutcome {
    contact_forward(x_prev, v_pre, dt, ground, friction).0
}
