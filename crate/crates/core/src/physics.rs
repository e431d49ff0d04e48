//! Planar pushing world.
//!
//! A kinematic disc-shaped effector moves through a bounded table and shoves
//! disc-shaped blocks out of its way. Contacts are resolved by projecting
//! blocks out of overlap (quasi-static pushing), so there is no contact
//! solver, friction model or stacking. The effector has a small vertical
//! range and can lift over blocks; blocks always rest on the table plane.
//!
//! Everything here is a pure function of its inputs: the same state, action
//! and parameters always produce a bit-identical next state.

use std::f64::consts::PI;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::task::Color;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Length of the horizontal (x, y) component.
    pub fn norm_xy(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn xy(self) -> Vec3 {
        Vec3::new(self.x, self.y, 0.0)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockBody {
    pub id: usize,
    pub color: Color,
    pub radius: f64,
    pub pos: Vec3,
    pub yaw: f64,
    pub lin_vel: Vec3,
    pub ang_vel: f64,
    pub on_table: bool,
}

impl BlockBody {
    /// A block at rest on the table plane.
    pub fn resting(id: usize, color: Color, radius: f64, pos: Vec3) -> Self {
        BlockBody {
            id,
            color,
            radius,
            pos,
            yaw: 0.0,
            lin_vel: Vec3::ZERO,
            ang_vel: 0.0,
            on_table: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectorState {
    pub pos: Vec3,
    pub vel: Vec3,
    pub radius: f64,
    /// Finger positions. The gripper is locked, so these never change.
    pub gripper: [f64; 2],
}

impl EffectorState {
    pub fn at(pos: Vec3, radius: f64) -> Self {
        EffectorState { pos, vel: Vec3::ZERO, radius, gripper: [0.0, 0.0] }
    }
}

/// Axis-aligned table top. `center.z` is the height of the surface that
/// block centers rest on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub center: Vec3,
    pub half_x: f64,
    pub half_y: f64,
}

impl Table {
    pub fn contains_xy(&self, p: Vec3) -> bool {
        (p.x - self.center.x).abs() <= self.half_x && (p.y - self.center.y).abs() <= self.half_y
    }

    pub fn height(&self) -> f64 {
        self.center.z
    }

    /// Half of the table diagonal: the radius of the smallest disc around the
    /// table center that covers the whole top.
    pub fn half_diagonal(&self) -> f64 {
        self.half_x.hypot(self.half_y)
    }
}

impl Default for Table {
    fn default() -> Self {
        Table { center: Vec3::new(0.0, 0.0, 0.0), half_x: 0.25, half_y: 0.35 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub effector: EffectorState,
    pub blocks: Vec<BlockBody>,
    pub table: Table,
    pub step_count: u32,
}

impl WorldState {
    pub fn block(&self, id: usize) -> Option<&BlockBody> {
        self.blocks.iter().find(|b| b.id == id)
    }

    pub fn block_by_color(&self, color: Color) -> Option<&BlockBody> {
        self.blocks.iter().find(|b| b.color == color)
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.effector;
        if !(e.pos.is_finite() && e.vel.is_finite() && e.radius.is_finite() && e.radius > 0.0) {
            return Err(Error::domain("effector state is not finite"));
        }
        for (i, b) in self.blocks.iter().enumerate() {
            if !(b.pos.is_finite()
                && b.lin_vel.is_finite()
                && b.yaw.is_finite()
                && b.ang_vel.is_finite()
                && b.radius.is_finite())
            {
                return Err(Error::domain(format!("block {} state is not finite", b.id)));
            }
            if b.radius <= 0.0 {
                return Err(Error::domain(format!("block {} has non-positive radius", b.id)));
            }
            if self.blocks[..i].iter().any(|o| o.id == b.id) {
                return Err(Error::domain(format!("duplicate block id {}", b.id)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicsParams {
    pub dt: f64,
    /// Effector speed at full action.
    pub v_max: f64,
    /// Fraction of block velocity removed each step; 1 stops blocks at once.
    pub block_damping: f64,
    pub contact_margin: f64,
    /// How far past the table edge the effector may travel.
    pub workspace_margin: f64,
    /// Height above the table surface the effector can be raised to.
    pub lift_height: f64,
    /// Longest effector move resolved in one collision pass.
    pub max_substep: f64,
}

impl Default for PhysicsParams {
    fn default() -> Self {
        PhysicsParams {
            dt: 0.04,
            v_max: 1.0,
            block_damping: 0.8,
            contact_margin: 0.002,
            workspace_margin: 0.05,
            lift_height: 0.08,
            max_substep: 0.01,
        }
    }
}

impl PhysicsParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.dt.is_finite()
            && self.dt > 0.0
            && self.v_max.is_finite()
            && self.v_max > 0.0
            && (0.0..=1.0).contains(&self.block_damping)
            && self.contact_margin >= 0.0
            && self.workspace_margin >= 0.0
            && self.lift_height >= 0.0
            && self.max_substep > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("invalid physics parameters: {self:?}")))
        }
    }

    /// Distance the effector covers in one step at full action.
    pub fn step_length(&self) -> f64 {
        self.v_max * self.dt
    }

    pub fn workspace(&self, table: &Table) -> Workspace {
        let m = self.workspace_margin;
        Workspace {
            min: Vec3::new(
                table.center.x - table.half_x - m,
                table.center.y - table.half_y - m,
                table.height(),
            ),
            max: Vec3::new(
                table.center.x + table.half_x + m,
                table.center.y + table.half_y + m,
                table.height() + self.lift_height,
            ),
        }
    }
}

/// Box the effector center is confined to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Workspace {
    pub min: Vec3,
    pub max: Vec3,
}

impl Workspace {
    pub fn clamp(&self, p: Vec3) -> Vec3 {
        Vec3::new(
            p.x.clamp(self.min.x, self.max.x),
            p.y.clamp(self.min.y, self.max.y),
            p.z.clamp(self.min.z, self.max.z),
        )
    }

    pub fn contains(&self, p: Vec3) -> bool {
        (self.min.x..=self.max.x).contains(&p.x)
            && (self.min.y..=self.max.y).contains(&p.y)
            && (self.min.z..=self.max.z).contains(&p.z)
    }
}

/// Four-dimensional command: effector velocity in x, y, z plus the locked gripper.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Action(pub [f64; 4]);

impl Action {
    pub const DIM: usize = 4;

    /// Clips every component into [-1, 1].
    pub fn clipped(values: [f64; 4]) -> Self {
        Action(values.map(|v| v.clamp(-1.0, 1.0)))
    }

    /// Like [`Action::clipped`] but rejects non-finite components.
    pub fn try_new(values: [f64; 4]) -> Result<Self> {
        if values.iter().all(|v| v.is_finite()) {
            Ok(Action::clipped(values))
        } else {
            Err(Error::domain(format!("non-finite action {values:?}")))
        }
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        let arr: [f64; 4] = values
            .try_into()
            .map_err(|_| Error::domain(format!("action needs 4 values, got {}", values.len())))?;
        Action::try_new(arr)
    }

    pub fn values(&self) -> &[f64; 4] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Entity {
    Effector,
    Block(usize),
}

/// Unordered contact between two entities, stored in canonical order (`a < b`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Contact {
    pub a: Entity,
    pub b: Entity,
}

impl Contact {
    pub fn new(x: Entity, y: Entity) -> Self {
        if x <= y {
            Contact { a: x, b: y }
        } else {
            Contact { a: y, b: x }
        }
    }

    pub fn involves(&self, e: Entity) -> bool {
        self.a == e || self.b == e
    }

    /// Both block ids, if neither side is the effector.
    pub fn blocks(&self) -> Option<(usize, usize)> {
        match (self.a, self.b) {
            (Entity::Block(i), Entity::Block(j)) => Some((i, j)),
            _ => None,
        }
    }
}

pub fn contains_contact(contacts: &[Contact], x: Entity, y: Entity) -> bool {
    let c = Contact::new(x, y);
    contacts.contains(&c)
}

/// All touching pairs. Two discs touch when their center distance is at most
/// the sum of radii plus `margin` (boundary inclusive). Blocks that fell off
/// the table never touch anything.
pub fn detect_contacts(state: &WorldState, margin: f64) -> Vec<Contact> {
    let mut out = Vec::new();
    let e = &state.effector;
    let live: Vec<&BlockBody> = state.blocks.iter().filter(|b| b.on_table).collect();
    for b in &live {
        if (b.pos - e.pos).norm() <= b.radius + e.radius + margin {
            out.push(Contact::new(Entity::Effector, Entity::Block(b.id)));
        }
    }
    for (i, bi) in live.iter().enumerate() {
        for bj in &live[i + 1..] {
            if (bi.pos - bj.pos).norm() <= bi.radius + bj.radius + margin {
                out.push(Contact::new(Entity::Block(bi.id), Entity::Block(bj.id)));
            }
        }
    }
    out.sort();
    out
}

/// Horizontal unit vector used when two centers coincide in the plane.
fn tie_break_direction(hint: Vec3) -> Vec3 {
    let h = hint.xy();
    let n = h.norm();
    if n > 0.0 && n.is_finite() {
        h * (1.0 / n)
    } else {
        Vec3::new(1.0, 0.0, 0.0)
    }
}

/// Horizontal displacement that moves `block` out of overlap with `effector`,
/// or `None` when they do not overlap.
fn push_displacement(effector: &EffectorState, block: &BlockBody) -> Option<Vec3> {
    let reach = effector.radius + block.radius;
    let d = block.pos - effector.pos;
    if d.norm() >= reach {
        return None;
    }
    let dz = d.z;
    // The block stays on its plane, so only the horizontal separation can grow.
    let needed = (reach * reach - dz * dz).max(0.0).sqrt();
    let horiz = d.norm_xy();
    let dir = if horiz > 0.0 { d.xy() * (1.0 / horiz) } else { tie_break_direction(effector.vel) };
    let target = effector.pos.xy() + dir * needed;
    let new_pos = Vec3::new(target.x, target.y, block.pos.z);
    Some(new_pos - block.pos)
}

/// Pushes `block` along the line from the effector center to the block center
/// just far enough to remove overlap, and gives it the matching velocity.
/// Coincident centers push along the effector velocity, or +x when the
/// effector is still.
pub fn resolve_push(effector: &EffectorState, block: &BlockBody, params: &PhysicsParams) -> BlockBody {
    let mut out = block.clone();
    if !block.on_table {
        return out;
    }
    if let Some(disp) = push_displacement(effector, block) {
        out.pos += disp;
        out.lin_vel = disp * (1.0 / params.dt);
    }
    out
}

fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut w = (a + PI).rem_euclid(two_pi) - PI;
    if w >= PI {
        w -= two_pi;
    }
    w
}

const BLOCK_PASSES: usize = 8;
const UNDRIVEN: u32 = u32::MAX;

/// Advances the world by one control step.
pub fn step_world(state: &WorldState, action: &Action, params: &PhysicsParams) -> Result<WorldState> {
    params.validate()?;
    state.validate()?;
    if !action.0.iter().all(|v| v.is_finite()) {
        return Err(Error::domain(format!("non-finite action {:?}", action.0)));
    }
    let action = Action::clipped(action.0);
    let dt = params.dt;
    let keep = 1.0 - params.block_damping;
    let workspace = params.workspace(&state.table);

    let mut next = state.clone();
    let n = next.blocks.len();

    // Coast.
    for b in next.blocks.iter_mut().filter(|b| b.on_table) {
        b.lin_vel = b.lin_vel * keep;
        b.ang_vel *= keep;
        b.pos += b.lin_vel.xy() * dt;
        b.yaw = wrap_angle(b.yaw + b.ang_vel * dt);
    }

    let start = workspace.clamp(next.effector.pos);
    let target = workspace.clamp(start + Vec3::new(action.0[0], action.0[1], action.0[2]) * params.step_length());
    let travel = target - start;
    let moving = travel.norm() > 0.0;
    next.effector.vel = travel * (1.0 / dt);

    let substeps = ((travel.norm() / params.max_substep).ceil() as usize).max(1);
    let mut depth = vec![UNDRIVEN; n];
    let mut contact_disp = vec![Vec3::ZERO; n];
    let mut spin = vec![0.0f64; n];

    for k in 1..=substeps {
        next.effector.pos = if k == substeps { target } else { start + travel * (k as f64 / substeps as f64) };
        effector_pass(&mut next, moving, &mut depth, &mut contact_disp, &mut spin);
        for _ in 0..BLOCK_PASSES {
            if !block_pass(&mut next, &mut depth, &mut contact_disp) {
                break;
            }
            effector_pass(&mut next, moving, &mut depth, &mut contact_disp, &mut spin);
        }
    }
    // The effector is kinematic: it always wins the last word on overlap.
    effector_pass(&mut next, moving, &mut depth, &mut contact_disp, &mut spin);

    for (i, b) in next.blocks.iter_mut().enumerate() {
        if !b.on_table {
            continue;
        }
        if depth[i] != UNDRIVEN {
            b.lin_vel = contact_disp[i] * (1.0 / dt);
            b.ang_vel = spin[i];
        }
        if !state.table.contains_xy(b.pos) {
            b.on_table = false;
            b.lin_vel = Vec3::ZERO;
            b.ang_vel = 0.0;
        }
    }
    next.step_count += 1;
    Ok(next)
}

fn effector_pass(
    world: &mut WorldState,
    moving: bool,
    depth: &mut [u32],
    contact_disp: &mut [Vec3],
    spin: &mut [f64],
) {
    let eff = world.effector.clone();
    for (i, b) in world.blocks.iter_mut().enumerate() {
        if !b.on_table {
            continue;
        }
        if let Some(disp) = push_displacement(&eff, b) {
            b.pos += disp;
            if moving {
                depth[i] = 1;
                contact_disp[i] += disp;
                let r = (b.pos - eff.pos).xy();
                let rn = r.norm();
                if rn > 0.0 {
                    // Tangential part of the effector motion turns the block.
                    spin[i] = (r.x * eff.vel.y - r.y * eff.vel.x) / (rn * b.radius) * 0.5;
                }
            }
        }
    }
}

/// One sweep of block-block overlap removal. `depth` is a block's distance
/// from the moving effector along the chain of pushes this step. The block
/// nearer the effector shoves the other the full overlap; equals (including
/// two passive blocks) give way equally. Returns whether any overlap was found.
fn block_pass(world: &mut WorldState, depth: &mut [u32], contact_disp: &mut [Vec3]) -> bool {
    let mut any = false;
    let n = world.blocks.len();
    for i in 0..n {
        for j in i + 1..n {
            let (bi, bj) = (&world.blocks[i], &world.blocks[j]);
            if !(bi.on_table && bj.on_table) {
                continue;
            }
            let reach = bi.radius + bj.radius;
            let d = (bj.pos - bi.pos).xy();
            let dist = d.norm();
            if dist >= reach {
                continue;
            }
            any = true;
            let dir = if dist > 0.0 { d * (1.0 / dist) } else { Vec3::new(1.0, 0.0, 0.0) };
            let overlap = reach - dist;
            let (share_i, share_j) = match depth[i].cmp(&depth[j]) {
                std::cmp::Ordering::Less => (0.0, 1.0),
                std::cmp::Ordering::Greater => (1.0, 0.0),
                std::cmp::Ordering::Equal => (0.5, 0.5),
            };
            let di = -dir * (overlap * share_i);
            let dj = dir * (overlap * share_j);
            world.blocks[i].pos += di;
            world.blocks[j].pos += dj;
            let pusher = depth[i].min(depth[j]);
            if pusher != UNDRIVEN {
                if share_i > 0.0 {
                    depth[i] = depth[i].min(pusher + 1);
                    contact_disp[i] += di;
                }
                if share_j > 0.0 {
                    depth[j] = depth[j].min(pusher + 1);
                    contact_disp[j] += dj;
                }
            }
        }
    }
    any
}
