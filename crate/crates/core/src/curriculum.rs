//! Start-state schedule: radius-based block spawning, the grey exclusion
//! radius, threshold-based level advancement and the challenge scenes.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::physics::{BlockBody, EffectorState, Table, Vec3, WorldState};
use crate::task::{Color, EnvKind};

/// Maximum number of position draws spent on one scene.
pub const REJECTION_CAP: usize = 10_000;

/// Minimum spacing of the colored blocks in a challenge scene.
pub const CHALLENGE_SEPARATION: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurriculumLevel {
    pub index: usize,
    /// Spawn radius: block one within this of the arm, block two within this of block one.
    pub radius: f64,
    /// The grey block never spawns closer than this to the colored blocks' midpoint.
    pub min_radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumSchedule {
    pub levels: Vec<CurriculumLevel>,
    /// Success rate needed to move to the next level.
    pub threshold: f64,
}

impl CurriculumSchedule {
    /// `count` levels with both radii interpolated linearly between the endpoints.
    pub fn linear(count: usize, radius: (f64, f64), min_radius: (f64, f64), threshold: f64) -> Result<Self> {
        if count == 0 {
            return Err(Error::config("curriculum needs at least one level"));
        }
        let lerp = |(a, b): (f64, f64), i: usize| {
            if i + 1 == count {
                b
            } else {
                a + (b - a) * i as f64 / (count - 1) as f64
            }
        };
        let levels = (0..count)
            .map(|i| CurriculumLevel { index: i, radius: lerp(radius, i), min_radius: lerp(min_radius, i) })
            .collect();
        let schedule = CurriculumSchedule { levels, threshold };
        schedule.validate()?;
        Ok(schedule)
    }

    pub fn default_for(table: &Table) -> Self {
        CurriculumSchedule::linear(8, (0.10, table.half_diagonal() + 0.02), (0.10, 0.0), 0.7)
            .expect("default schedule is valid")
    }

    pub fn first(&self) -> CurriculumLevel {
        self.levels[0]
    }

    pub fn last(&self) -> CurriculumLevel {
        *self.levels.last().expect("schedule is never empty")
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Err(Error::config("curriculum needs at least one level"));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::config(format!("threshold {} outside (0, 1)", self.threshold)));
        }
        for (i, l) in self.levels.iter().enumerate() {
            if l.index != i {
                return Err(Error::config("curriculum level indices must count up from 0"));
            }
            if !(l.radius > 0.0 && l.min_radius >= 0.0) {
                return Err(Error::config(format!("level {i} has invalid radii")));
            }
        }
        for w in self.levels.windows(2) {
            if w[1].radius < w[0].radius || w[1].min_radius > w[0].min_radius {
                return Err(Error::config("curriculum difficulty must be monotone"));
            }
        }
        if self.last().min_radius != 0.0 {
            return Err(Error::config("the final level must not exclude the grey block"));
        }
        Ok(())
    }

    /// Checks that the hardest level can place a block anywhere on the table.
    pub fn validate_coverage(&self, table: &Table, arm: Vec3) -> Result<()> {
        let far = [(-1.0, -1.0), (-1.0, 1.0), (1.0, -1.0), (1.0, 1.0)]
            .iter()
            .map(|(sx, sy)| {
                let corner = Vec3::new(table.center.x + sx * table.half_x, table.center.y + sy * table.half_y, 0.0);
                (corner - arm.xy()).norm_xy()
            })
            .fold(0.0, f64::max);
        if self.last().radius < far {
            return Err(Error::config(format!(
                "final spawn radius {} does not cover the table (needs {far})",
                self.last().radius
            )));
        }
        Ok(())
    }
}

/// Moves to the next level when `success_rate` reaches the threshold and a
/// next level exists.
pub fn advance(current: CurriculumLevel, schedule: &CurriculumSchedule, success_rate: f64) -> CurriculumLevel {
    if success_rate >= schedule.threshold {
        if let Some(next) = schedule.levels.get(current.index + 1) {
            return *next;
        }
    }
    current
}

/// Everything fixed about how scenes are laid out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpawnSpec {
    pub kind: EnvKind,
    pub arm_start: Vec3,
    pub table: Table,
    pub effector_radius: f64,
    pub block_radius: f64,
    /// Spawned bodies are kept further apart than this beyond touching.
    pub contact_margin: f64,
}

impl SpawnSpec {
    pub fn from_env(cfg: &EnvConfig) -> Self {
        SpawnSpec {
            kind: cfg.kind,
            arm_start: cfg.arm_start,
            table: cfg.table,
            effector_radius: cfg.effector_radius,
            block_radius: cfg.block_radius,
            contact_margin: cfg.physics.contact_margin,
        }
    }

    /// Whole block disc lies on the table.
    pub fn fits_on_table(&self, p: Vec3) -> bool {
        let t = &self.table;
        (p.x - t.center.x).abs() <= t.half_x - self.block_radius
            && (p.y - t.center.y).abs() <= t.half_y - self.block_radius
    }

    fn clear_of_effector(&self, p: Vec3) -> bool {
        (p - self.arm_start).norm() > self.block_radius + self.effector_radius + self.contact_margin
    }

    fn clear_of_block(&self, p: Vec3, q: Vec3) -> bool {
        (p - q).norm() > 2.0 * self.block_radius + self.contact_margin
    }

    fn on_plane(&self, x: f64, y: f64) -> Vec3 {
        Vec3::new(x, y, self.table.height())
    }

    fn uniform_in_disc<R: Rng + ?Sized>(&self, center: Vec3, radius: f64, rng: &mut R) -> Vec3 {
        let r = radius * rng.gen::<f64>().sqrt();
        let theta = 2.0 * PI * rng.gen::<f64>();
        self.on_plane(center.x + r * theta.cos(), center.y + r * theta.sin())
    }

    fn uniform_on_table<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec3 {
        let t = &self.table;
        let hx = t.half_x - self.block_radius;
        let hy = t.half_y - self.block_radius;
        self.on_plane(t.center.x + rng.gen_range(-hx..=hx), t.center.y + rng.gen_range(-hy..=hy))
    }

    fn world(&self, positions: &[Vec3]) -> WorldState {
        let colors = self.kind.colors();
        let blocks = colors
            .iter()
            .zip(positions)
            .enumerate()
            .map(|(id, (&c, &p))| BlockBody::resting(id, c, self.block_radius, p))
            .collect();
        WorldState {
            effector: EffectorState::at(self.arm_start, self.effector_radius),
            blocks,
            table: self.table,
            step_count: 0,
        }
    }
}

struct Budget(usize);

impl Budget {
    fn draw(&mut self) -> Result<()> {
        if self.0 == 0 {
            return Err(Error::config(format!("scene sampler exceeded {REJECTION_CAP} draws; level is infeasible")));
        }
        self.0 -= 1;
        Ok(())
    }
}

const INNER_TRIES: usize = 64;

/// Samples the colored pair: the first within `radius` of the arm, the second
/// within `radius` of the first. `accept_pair` adds extra conditions.
fn sample_colored<R: Rng + ?Sized>(
    spec: &SpawnSpec,
    radius: f64,
    rng: &mut R,
    budget: &mut Budget,
    accept_pair: impl Fn(Vec3, Vec3) -> bool,
) -> Result<(Vec3, Vec3)> {
    let arm = spec.on_plane(spec.arm_start.x, spec.arm_start.y);
    loop {
        budget.draw()?;
        let first = spec.uniform_in_disc(arm, radius, rng);
        if !(spec.fits_on_table(first) && spec.clear_of_effector(first)) {
            continue;
        }
        for _ in 0..INNER_TRIES {
            budget.draw()?;
            let second = spec.uniform_in_disc(first, radius, rng);
            if spec.fits_on_table(second)
                && spec.clear_of_effector(second)
                && spec.clear_of_block(first, second)
                && accept_pair(first, second)
            {
                return Ok((first, second));
            }
        }
    }
}

/// Draws a start scene for `level`. Blocks never start touching anything;
/// the grey block (when present) is placed uniformly on the table outside
/// the exclusion disc around the colored blocks' midpoint.
pub fn sample_scene<R: Rng + ?Sized>(level: &CurriculumLevel, spec: &SpawnSpec, rng: &mut R) -> Result<WorldState> {
    let mut budget = Budget(REJECTION_CAP);
    'scene: loop {
        let (first, second) = sample_colored(spec, level.radius, rng, &mut budget, |_, _| true)?;
        let mut positions = vec![first, second];
        if spec.kind == EnvKind::BlocksChoose {
            let mid = (first + second) * 0.5;
            let mut placed = false;
            for _ in 0..INNER_TRIES {
                budget.draw()?;
                let grey = spec.uniform_on_table(rng);
                if (grey - mid).norm_xy() >= level.min_radius
                    && spec.clear_of_effector(grey)
                    && spec.clear_of_block(grey, first)
                    && spec.clear_of_block(grey, second)
                {
                    positions.push(grey);
                    placed = true;
                    break;
                }
            }
            if !placed {
                continue 'scene;
            }
        }
        return Ok(spec.world(&positions));
    }
}

/// Challenge scene: the colored blocks at least [`CHALLENGE_SEPARATION`]
/// apart (each drawn as in `level`), the grey block exactly at their midpoint.
pub fn challenge_scene<R: Rng + ?Sized>(spec: &SpawnSpec, level: &CurriculumLevel, rng: &mut R) -> Result<WorldState> {
    if spec.kind != EnvKind::BlocksChoose {
        return Err(Error::config("challenge scenes need the three-block environment"));
    }
    let mut budget = Budget(REJECTION_CAP);
    loop {
        let (first, second) = sample_colored(spec, level.radius, rng, &mut budget, |a, b| {
            (a - b).norm_xy() >= CHALLENGE_SEPARATION
        })?;
        let grey = midpoint(first, second);
        if spec.clear_of_effector(grey) {
            return Ok(spec.world(&[first, second, grey]));
        }
    }
}

pub fn midpoint(a: Vec3, b: Vec3) -> Vec3 {
    Vec3::new((a.x + b.x) * 0.5, (a.y + b.y) * 0.5, (a.z + b.z) * 0.5)
}

/// Whether a scene satisfies the constraints of `level`, re-checked from the
/// scene alone.
pub fn scene_satisfies(scene: &WorldState, level: &CurriculumLevel, spec: &SpawnSpec) -> bool {
    let green = scene.block_by_color(Color::Green).map(|b| b.pos);
    let blue = scene.block_by_color(Color::Blue).map(|b| b.pos);
    let (Some(first), Some(second)) = (green, blue) else {
        return false;
    };
    let tol = 1e-12;
    let arm = spec.on_plane(spec.arm_start.x, spec.arm_start.y);
    let mut ok = (first - arm).norm_xy() <= level.radius + tol
        && (second - first).norm_xy() <= level.radius + tol
        && scene.blocks.iter().all(|b| spec.fits_on_table(b.pos) && spec.clear_of_effector(b.pos));
    for (i, a) in scene.blocks.iter().enumerate() {
        for b in &scene.blocks[i + 1..] {
            ok &= spec.clear_of_block(a.pos, b.pos);
        }
    }
    if let Some(grey) = scene.block_by_color(Color::Grey) {
        ok &= (grey.pos - midpoint(first, second)).norm_xy() >= level.min_radius;
    }
    ok
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(kind: EnvKind) -> SpawnSpec {
        SpawnSpec::from_env(&EnvConfig::new(kind))
    }

    fn level(radius: f64, min_radius: f64) -> CurriculumLevel {
        CurriculumLevel { index: 0, radius, min_radius }
    }

    #[test]
    fn default_schedule_shape() {
        let table = Table::default();
        let s = CurriculumSchedule::default_for(&table);
        assert_eq!(s.levels.len(), 8);
        assert_eq!(s.threshold, 0.7);
        assert_eq!(s.first().min_radius, 0.10);
        assert_eq!(s.last().min_radius, 0.0);
        s.validate_coverage(&table, Vec3::ZERO).unwrap();
    }

    #[test]
    fn advance_rules() {
        let s = CurriculumSchedule::default_for(&Table::default());
        let l0 = s.first();
        assert_eq!(advance(l0, &s, 0.71).index, 1);
        assert_eq!(advance(l0, &s, 0.69), l0);
        assert_eq!(advance(l0, &s, 0.7).index, 1);
        assert_eq!(advance(s.last(), &s, 1.0), s.last());
    }

    #[test]
    fn non_monotone_schedules_are_rejected() {
        let bad = CurriculumSchedule {
            levels: vec![level(0.2, 0.0), CurriculumLevel { index: 1, radius: 0.1, min_radius: 0.0 }],
            threshold: 0.7,
        };
        assert!(bad.validate().is_err());
        assert!(CurriculumSchedule::linear(3, (0.1, 0.3), (0.1, 0.05), 0.7).is_err());
        assert!(CurriculumSchedule::linear(3, (0.1, 0.3), (0.1, 0.0), 1.0).is_err());
    }

    #[test]
    fn first_block_stays_within_spawn_radius() {
        let sp = spec(EnvKind::BlocksTouch);
        let lv = level(0.08, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let s = sample_scene(&lv, &sp, &mut rng).unwrap();
            assert!((s.blocks[0].pos - sp.arm_start).norm_xy() <= 0.08);
            assert!((s.blocks[1].pos - s.blocks[0].pos).norm_xy() <= 0.08);
            assert!(scene_satisfies(&s, &lv, &sp));
        }
    }

    #[test]
    fn two_blocks_cannot_spawn_apart_within_touching_distance() {
        // Within 0.05 of each other two 0.025 discs always touch.
        let sp = spec(EnvKind::BlocksTouch);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert!(matches!(sample_scene(&level(0.05, 0.0), &sp, &mut rng), Err(Error::Config(_))));
    }

    #[test]
    fn oversized_radius_still_lands_on_table() {
        let sp = spec(EnvKind::BlocksChoose);
        let lv = level(5.0, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..300 {
            let s = sample_scene(&lv, &sp, &mut rng).unwrap();
            assert!(s.blocks.iter().all(|b| sp.fits_on_table(b.pos)));
        }
    }

    #[test]
    fn grey_respects_exclusion_radius() {
        let sp = spec(EnvKind::BlocksChoose);
        let lv = level(0.15, 0.12);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..500 {
            let s = sample_scene(&lv, &sp, &mut rng).unwrap();
            let mid = midpoint(s.blocks[0].pos, s.blocks[1].pos);
            assert!((s.blocks[2].pos - mid).norm_xy() >= 0.12);
        }
    }

    #[test]
    fn zero_exclusion_lets_grey_land_near_midpoint() {
        let sp = spec(EnvKind::BlocksChoose);
        let lv = level(0.45, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let closest = (0..3000)
            .map(|_| {
                let s = sample_scene(&lv, &sp, &mut rng).unwrap();
                (s.blocks[2].pos - midpoint(s.blocks[0].pos, s.blocks[1].pos)).norm_xy()
            })
            .fold(f64::INFINITY, f64::min);
        assert!(closest < 0.06, "closest grey distance {closest}");
    }

    #[test]
    fn infeasible_exclusion_is_a_config_error() {
        let sp = spec(EnvKind::BlocksChoose);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        assert!(matches!(sample_scene(&level(0.1, 10.0), &sp, &mut rng), Err(Error::Config(_))));
    }

    #[test]
    fn same_seed_same_scenes() {
        let sp = spec(EnvKind::BlocksChoose);
        let lv = level(0.3, 0.05);
        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            assert_eq!(sample_scene(&lv, &sp, &mut a).unwrap(), sample_scene(&lv, &sp, &mut b).unwrap());
        }
    }

    #[test]
    fn challenge_grey_sits_at_midpoint() {
        let sp = spec(EnvKind::BlocksChoose);
        let last = CurriculumSchedule::default_for(&sp.table).last();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let s = challenge_scene(&sp, &last, &mut rng).unwrap();
            let (g, b, grey) = (s.blocks[0].pos, s.blocks[1].pos, s.blocks[2].pos);
            assert!((g - b).norm_xy() >= CHALLENGE_SEPARATION);
            assert_eq!(grey, midpoint(g, b));
        }
        assert_eq!(midpoint(Vec3::ZERO, Vec3::new(0.2, 0.0, 0.0)), Vec3::new(0.1, 0.0, 0.0));
    }

    #[test]
    fn challenge_requires_three_blocks() {
        let sp = spec(EnvKind::BlocksTouch);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        assert!(challenge_scene(&sp, &level(0.4, 0.0), &mut rng).is_err());
    }
}
