//! Color rules, sparse reward and the observation vector.
//!
//! Blue blocks must touch a green block; red-blue contact fails the task;
//! grey blocks are neutral. Observations concatenate the robot state and one
//! fixed-width segment per block, with the grey block always last so it can
//! be cut off for policies trained without it.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::{detect_contacts, Contact, Entity, EffectorState, Vec3, WorldState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Color {
    Red,
    Blue,
    Green,
    Grey,
}

impl Color {
    pub const ALL: [Color; 4] = [Color::Red, Color::Blue, Color::Green, Color::Grey];

    pub fn one_hot(self) -> [f64; 4] {
        let mut v = [0.0; 4];
        v[self as usize] = 1.0;
        v
    }

    fn from_one_hot(v: &[f64]) -> Option<Color> {
        let idx = v.iter().position(|&x| x == 1.0)?;
        Color::ALL.get(idx).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Ongoing,
    Success,
    Failure,
}

impl Status {
    pub fn is_terminal(self) -> bool {
        self != Status::Ongoing
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskProgress {
    /// Whether each blue block has touched a green block at some point.
    pub touched_green: BTreeMap<usize, bool>,
    pub status: Status,
}

impl TaskProgress {
    pub fn new(colors: &BTreeMap<usize, Color>) -> Self {
        let touched_green = colors
            .iter()
            .filter(|(_, c)| **c == Color::Blue)
            .map(|(id, _)| (*id, false))
            .collect();
        TaskProgress { touched_green, status: Status::Ongoing }
    }

    pub fn for_state(state: &WorldState) -> Self {
        TaskProgress::new(&block_colors(state))
    }
}

pub fn block_colors(state: &WorldState) -> BTreeMap<usize, Color> {
    state.blocks.iter().map(|b| (b.id, b.color)).collect()
}

/// Applies one step's contacts to the task progress. Success and failure are
/// absorbing; grey contacts and red-green contacts change nothing.
pub fn evaluate_status(
    progress: &TaskProgress,
    contacts: &[Contact],
    colors: &BTreeMap<usize, Color>,
) -> Result<TaskProgress> {
    let lookup = |id: usize| {
        colors
            .get(&id)
            .copied()
            .ok_or_else(|| Error::domain(format!("contact refers to unknown block {id}")))
    };
    let mut pairs = Vec::with_capacity(contacts.len());
    for c in contacts {
        if let Some((i, j)) = c.blocks() {
            pairs.push(((i, lookup(i)?), (j, lookup(j)?)));
        } else {
            for e in [c.a, c.b] {
                if let Entity::Block(id) = e {
                    lookup(id)?;
                }
            }
        }
    }

    let mut next = progress.clone();
    if next.status.is_terminal() {
        return Ok(next);
    }
    let red_blue = pairs.iter().any(|&((_, ci), (_, cj))| {
        matches!((ci, cj), (Color::Red, Color::Blue) | (Color::Blue, Color::Red))
    });
    if red_blue {
        next.status = Status::Failure;
        return Ok(next);
    }
    for &((i, ci), (j, cj)) in &pairs {
        match (ci, cj) {
            (Color::Blue, Color::Green) => {
                next.touched_green.insert(i, true);
            }
            (Color::Green, Color::Blue) => {
                next.touched_green.insert(j, true);
            }
            _ => {}
        }
    }
    if !next.touched_green.is_empty() && next.touched_green.values().all(|&t| t) {
        next.status = Status::Success;
    }
    Ok(next)
}

/// Full per-step status update: contact rules, then a blue or green block
/// leaving the table fails an episode that has not already succeeded.
pub fn update_progress(progress: &TaskProgress, state: &WorldState, margin: f64) -> Result<TaskProgress> {
    let contacts = detect_contacts(state, margin);
    let mut next = evaluate_status(progress, &contacts, &block_colors(state))?;
    if next.status == Status::Ongoing
        && state
            .blocks
            .iter()
            .any(|b| !b.on_table && matches!(b.color, Color::Blue | Color::Green))
    {
        next.status = Status::Failure;
    }
    Ok(next)
}

/// Sparse reward: +1 entering success, -1 entering failure, 0 otherwise.
pub fn compute_reward(prev: &TaskProgress, next: &TaskProgress) -> f64 {
    match (prev.status, next.status) {
        (Status::Ongoing, Status::Success) => 1.0,
        (Status::Ongoing, Status::Failure) => -1.0,
        _ => 0.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EnvKind {
    BlocksTouch,
    BlocksChoose,
}

impl EnvKind {
    /// Block colors in observation order. Block ids are the positions in this list.
    pub fn colors(self) -> &'static [Color] {
        match self {
            EnvKind::BlocksTouch => &[Color::Green, Color::Blue],
            EnvKind::BlocksChoose => &[Color::Green, Color::Blue, Color::Grey],
        }
    }

    pub fn layout(self) -> Layout {
        Layout::new(self.colors().to_vec())
    }

    pub fn obs_dim(self) -> usize {
        self.layout().len()
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EnvKind::BlocksTouch => "blocks-touch",
            EnvKind::BlocksChoose => "blocks-choose",
        })
    }
}

impl FromStr for EnvKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blocks-touch" | "BlocksTouch" | "BlocksTouch-v0" => Ok(EnvKind::BlocksTouch),
            "blocks-choose" | "BlocksChoose" | "BlocksChoose-v0" => Ok(EnvKind::BlocksChoose),
            other => Err(Error::config(format!("unknown environment `{other}`"))),
        }
    }
}

pub const ROBOT_LEN: usize = 8;
pub const BLOCK_LEN: usize = 12;

/// Shape of an observation vector: robot segment, then one segment per block
/// in the listed color order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub robot_len: usize,
    pub block_len: usize,
    pub blocks: Vec<Color>,
}

impl Layout {
    pub fn new(blocks: Vec<Color>) -> Self {
        Layout { robot_len: ROBOT_LEN, block_len: BLOCK_LEN, blocks }
    }

    pub fn len(&self) -> usize {
        self.robot_len + self.block_len * self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn block_range(&self, slot: usize) -> std::ops::Range<usize> {
        let start = self.robot_len + slot * self.block_len;
        start..start + self.block_len
    }

    /// Index range of the grey segment, which is always the last one.
    pub fn grey_range(&self) -> Option<std::ops::Range<usize>> {
        match self.blocks.last() {
            Some(Color::Grey) => Some(self.block_range(self.blocks.len() - 1)),
            _ => None,
        }
    }

    pub fn without_grey(&self) -> Layout {
        let mut blocks = self.blocks.clone();
        if self.grey_range().is_some() {
            blocks.pop();
        }
        Layout { blocks, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let greys = self.blocks.iter().filter(|c| **c == Color::Grey).count();
        if self.robot_len != ROBOT_LEN || self.block_len != BLOCK_LEN {
            return Err(Error::domain("unsupported observation segment widths"));
        }
        if greys > 1 || (greys == 1 && self.grey_range().is_none()) {
            return Err(Error::domain("grey block must be the single last segment"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub values: Vec<f64>,
    pub layout: Layout,
}

impl Observation {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Encodes the world as `effector pos(3) vel(3) gripper(2)` followed by
/// `pos(3) yaw(1) lin_vel(3) ang_vel(1) color one-hot(4)` per block.
pub fn encode_observation(state: &WorldState, kind: EnvKind) -> Result<Observation> {
    let layout = kind.layout();
    if state.blocks.len() != layout.blocks.len() {
        return Err(Error::domain(format!(
            "{kind} expects {} blocks, state has {}",
            layout.blocks.len(),
            state.blocks.len()
        )));
    }
    let mut values = Vec::with_capacity(layout.len());
    let e = &state.effector;
    values.extend_from_slice(&e.pos.to_array());
    values.extend_from_slice(&e.vel.to_array());
    values.extend_from_slice(&e.gripper);

    let mut used = vec![false; state.blocks.len()];
    for &color in &layout.blocks {
        let idx = state
            .blocks
            .iter()
            .enumerate()
            .position(|(i, b)| !used[i] && b.color == color)
            .ok_or_else(|| Error::domain(format!("{kind} state is missing a {color:?} block")))?;
        used[idx] = true;
        let b = &state.blocks[idx];
        values.extend_from_slice(&b.pos.to_array());
        values.push(b.yaw);
        values.extend_from_slice(&b.lin_vel.to_array());
        values.push(b.ang_vel);
        values.extend_from_slice(&color.one_hot());
    }
    Ok(Observation { values, layout })
}

/// Drops the grey segment, leaving a grey-free observation. Identity when
/// there is no grey block.
pub fn filter_grey(obs: &Observation) -> Observation {
    match obs.layout.grey_range() {
        Some(range) => {
            let mut values = obs.values.clone();
            values.drain(range);
            Observation { values, layout: obs.layout.without_grey() }
        }
        None => obs.clone(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodedBlock {
    pub color: Color,
    pub pos: Vec3,
    pub yaw: f64,
    pub lin_vel: Vec3,
    pub ang_vel: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodedObservation {
    pub effector: EffectorState,
    pub blocks: Vec<DecodedBlock>,
}

impl DecodedObservation {
    pub fn block(&self, color: Color) -> Option<&DecodedBlock> {
        self.blocks.iter().find(|b| b.color == color)
    }
}

fn vec3(s: &[f64]) -> Vec3 {
    Vec3::new(s[0], s[1], s[2])
}

/// Inverse of [`encode_observation`]. The effector radius is not part of the
/// observation and is left at zero.
pub fn decode_observation(obs: &Observation) -> Result<DecodedObservation> {
    let layout = &obs.layout;
    if obs.values.len() != layout.len() {
        return Err(Error::domain(format!(
            "observation has {} values, layout needs {}",
            obs.values.len(),
            layout.len()
        )));
    }
    let v = &obs.values;
    let effector = EffectorState {
        pos: vec3(&v[0..3]),
        vel: vec3(&v[3..6]),
        radius: 0.0,
        gripper: [v[6], v[7]],
    };
    let mut blocks = Vec::with_capacity(layout.blocks.len());
    for (slot, &color) in layout.blocks.iter().enumerate() {
        let s = &v[layout.block_range(slot)];
        if Color::from_one_hot(&s[8..12]) != Some(color) {
            return Err(Error::domain(format!("segment {slot} does not encode {color:?}")));
        }
        blocks.push(DecodedBlock {
            color,
            pos: vec3(&s[0..3]),
            yaw: s[3],
            lin_vel: vec3(&s[4..7]),
            ang_vel: s[7],
        });
    }
    Ok(DecodedObservation { effector, blocks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::{BlockBody, Table};

    fn colors(list: &[(usize, Color)]) -> BTreeMap<usize, Color> {
        list.iter().copied().collect()
    }

    fn bb(i: usize, j: usize) -> Contact {
        Contact::new(Entity::Block(i), Entity::Block(j))
    }

    fn three_block_state() -> WorldState {
        let mk = |id, color, x: f64, y: f64| BlockBody {
            yaw: 0.3 * id as f64,
            lin_vel: Vec3::new(0.01 * x, -0.02, 0.0),
            ang_vel: 0.5,
            ..BlockBody::resting(id, color, 0.025, Vec3::new(x, y, 0.0))
        };
        WorldState {
            effector: EffectorState {
                pos: Vec3::new(0.01, -0.02, 0.03),
                vel: Vec3::new(0.1, 0.2, -0.3),
                radius: 0.01,
                gripper: [0.02, 0.02],
            },
            // Deliberately not in observation order.
            blocks: vec![mk(2, Color::Grey, -0.1, 0.2), mk(0, Color::Green, 0.1, 0.0), mk(1, Color::Blue, 0.0, 0.1)],
            table: Table::default(),
            step_count: 3,
        }
    }

    #[test]
    fn blue_touching_green_succeeds() {
        let c = colors(&[(0, Color::Green), (1, Color::Blue)]);
        let p = TaskProgress::new(&c);
        let next = evaluate_status(&p, &[bb(0, 1)], &c).unwrap();
        assert_eq!(next.status, Status::Success);
        assert_eq!(compute_reward(&p, &next), 1.0);
    }

    #[test]
    fn grey_touching_blue_is_neutral() {
        let c = colors(&[(0, Color::Green), (1, Color::Blue), (2, Color::Grey)]);
        let p = TaskProgress::new(&c);
        let next = evaluate_status(&p, &[bb(1, 2)], &c).unwrap();
        assert_eq!(next.status, Status::Ongoing);
        assert_eq!(compute_reward(&p, &next), 0.0);
    }

    #[test]
    fn red_touching_blue_fails() {
        let c = colors(&[(0, Color::Red), (1, Color::Blue), (2, Color::Green)]);
        let p = TaskProgress::new(&c);
        let next = evaluate_status(&p, &[bb(0, 1), bb(1, 2)], &c).unwrap();
        assert_eq!(next.status, Status::Failure);
        assert_eq!(compute_reward(&p, &next), -1.0);
    }

    #[test]
    fn red_green_contact_changes_nothing() {
        let c = colors(&[(0, Color::Red), (1, Color::Blue), (2, Color::Green)]);
        let p = TaskProgress::new(&c);
        assert_eq!(evaluate_status(&p, &[bb(0, 2)], &c).unwrap(), p);
    }

    #[test]
    fn every_blue_must_touch_green_at_some_point() {
        let c = colors(&[(0, Color::Green), (1, Color::Blue), (2, Color::Blue)]);
        let p = TaskProgress::new(&c);
        let a = evaluate_status(&p, &[bb(0, 1)], &c).unwrap();
        assert_eq!(a.status, Status::Ongoing);
        assert!(a.touched_green[&1]);
        // Block 1 no longer touching: its flag is latched.
        let b = evaluate_status(&a, &[bb(0, 2)], &c).unwrap();
        assert_eq!(b.status, Status::Success);
    }

    #[test]
    fn unknown_ids_are_rejected() {
        let c = colors(&[(0, Color::Green), (1, Color::Blue)]);
        let p = TaskProgress::new(&c);
        assert!(evaluate_status(&p, &[bb(0, 7)], &c).is_err());
        let eff = Contact::new(Entity::Effector, Entity::Block(9));
        assert!(evaluate_status(&p, &[eff], &c).is_err());
    }

    #[test]
    fn terminal_statuses_are_absorbing_and_pay_once() {
        let c = colors(&[(0, Color::Red), (1, Color::Blue), (2, Color::Green)]);
        let mut p = TaskProgress::new(&c);
        p.status = Status::Success;
        let next = evaluate_status(&p, &[bb(0, 1)], &c).unwrap();
        assert_eq!(next.status, Status::Success);
        assert_eq!(compute_reward(&p, &next), 0.0);
        p.status = Status::Failure;
        let next = evaluate_status(&p, &[bb(1, 2)], &c).unwrap();
        assert_eq!(next.status, Status::Failure);
        assert_eq!(compute_reward(&p, &next), 0.0);
    }

    #[test]
    fn ongoing_to_ongoing_pays_nothing() {
        let c = colors(&[(0, Color::Green), (1, Color::Blue)]);
        let p = TaskProgress::new(&c);
        let next = evaluate_status(&p, &[], &c).unwrap();
        assert_eq!(compute_reward(&p, &next), 0.0);
    }

    #[test]
    fn colored_block_leaving_table_fails() {
        let mut s = three_block_state();
        let p = TaskProgress::for_state(&s);
        s.blocks[0].on_table = false; // grey
        assert_eq!(update_progress(&p, &s, 0.0).unwrap().status, Status::Ongoing);
        s.blocks[1].on_table = false; // green
        assert_eq!(update_progress(&p, &s, 0.0).unwrap().status, Status::Failure);
    }

    #[test]
    fn observation_lengths() {
        let s = three_block_state();
        let obs = encode_observation(&s, EnvKind::BlocksChoose).unwrap();
        assert_eq!(obs.len(), 44);
        assert_eq!(obs.layout.grey_range(), Some(32..44));
        assert_eq!(&obs.values[40..44], &Color::Grey.one_hot());

        let mut two = s.clone();
        two.blocks.remove(0);
        assert_eq!(encode_observation(&two, EnvKind::BlocksTouch).unwrap().len(), 32);
        assert!(encode_observation(&two, EnvKind::BlocksChoose).is_err());
        assert!(encode_observation(&s, EnvKind::BlocksTouch).is_err());
    }

    #[test]
    fn zero_state_encodes_only_colors() {
        let mut s = three_block_state();
        s.effector = EffectorState::at(Vec3::ZERO, 0.01);
        for b in &mut s.blocks {
            *b = BlockBody::resting(b.id, b.color, b.radius, Vec3::ZERO);
        }
        let obs = encode_observation(&s, EnvKind::BlocksChoose).unwrap();
        for (slot, color) in [Color::Green, Color::Blue, Color::Grey].into_iter().enumerate() {
            let r = obs.layout.block_range(slot);
            assert!(obs.values[r.start..r.start + 8].iter().all(|&v| v == 0.0));
            assert_eq!(&obs.values[r.start + 8..r.end], &color.one_hot());
        }
        assert!(obs.values[..8].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn decode_recovers_block_state() {
        let s = three_block_state();
        let obs = encode_observation(&s, EnvKind::BlocksChoose).unwrap();
        let d = decode_observation(&obs).unwrap();
        assert_eq!(d.effector.pos, s.effector.pos);
        assert_eq!(d.effector.vel, s.effector.vel);
        for b in &s.blocks {
            let got = d.block(b.color).unwrap();
            assert_eq!((got.pos, got.yaw, got.lin_vel, got.ang_vel), (b.pos, b.yaw, b.lin_vel, b.ang_vel));
        }
    }

    #[test]
    fn filter_grey_cuts_the_tail() {
        let s = three_block_state();
        let obs = encode_observation(&s, EnvKind::BlocksChoose).unwrap();
        let f = filter_grey(&obs);
        assert_eq!(f.len(), 32);
        assert_eq!(&f.values[..], &obs.values[..32]);
        assert_eq!(f.layout, EnvKind::BlocksTouch.layout());
        assert_eq!(filter_grey(&f), f);

        let mut two = s.clone();
        two.blocks.remove(0);
        let two_obs = encode_observation(&two, EnvKind::BlocksTouch).unwrap();
        assert_eq!(f, two_obs);
    }

    #[test]
    fn env_kind_parses() {
        assert_eq!("blocks-touch".parse::<EnvKind>().unwrap(), EnvKind::BlocksTouch);
        assert_eq!("BlocksChoose-v0".parse::<EnvKind>().unwrap(), EnvKind::BlocksChoose);
        assert!("blocks".parse::<EnvKind>().is_err());
    }
}
