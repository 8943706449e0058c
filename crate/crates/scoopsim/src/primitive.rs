//! The three-phase bimanual scooping primitive.
//!
//! A rollout runs Pushing (3 s), Scooping (2 s) and Transfer (1 s) at a
//! 20 Hz control rate, each tick advancing the physics by twelve 1/240 s
//! substeps. The push distance is parameterized by `alpha` in [0, 1] — the
//! fraction of the full 0.13 m blade travel — quantized to the 1/60 tick
//! grid. A scheduler hook may stop the push early (closed-loop policies
//! watch the wrist camera and bail out before a fragile item breaks); the
//! fraction actually executed is reported as the realized alpha.
//!
//! Phase kinematics:
//! - Pushing: blade advances toward the food at travel/3 m/s. With
//!   adaptive cupping the spoon simultaneously creeps in from the other
//!   side (0.05 m/s combined closing, meeting at full travel); without
//!   it the tools move in sequence, so an early stop leaves the spoon
//!   where it started.
//! - Scooping: the spoon rotates up in place, pitch leveling from the
//!   45 degree approach to flat while the lip height follows the rolling
//!   tangency of the bowl shell so the shell never digs into the plate.
//!   With pinning the blade bottom rides the same height curve as the
//!   lip, sealing the mouth; without it the blade stays on the plate.
//! - Transfer: the spoon holds position and tips back 10 degrees to
//!   settle its load; the blade retreats.

use crate::geom::{vec2, Vec2};
use crate::physics::{self, MassAccount, PhysicsError, DT};
use crate::worldmodel::{Phase, StrategyToggles, ToolGeometry, WorldState};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::Path;

/// Control period, s (20 Hz).
pub const CONTROL_DT: f64 = 0.05;
/// Physics substeps per control tick.
pub const SUBSTEPS: u32 = 12;
pub const PUSH_TICKS: u32 = 60;
pub const SCOOP_TICKS: u32 = 40;
pub const TRANSFER_TICKS: u32 = 20;
/// Full blade travel during Pushing, m.
pub const PUSH_TRAVEL: f64 = 0.13;
/// Spoon approach during Pushing, m.
pub const SCOOP_APPROACH: f64 = 0.02;
/// Blade start, relative to the food center.
pub const PUSHER_START_OFFSET: f64 = -0.08;
/// Spoon lip start, relative to the food center.
pub const SCOOPER_START_OFFSET: f64 = 0.07;
/// Where a scoop-only plan parks the static blade, relative to the food
/// center: the meeting point's 0.05 m stand-off, mirrored to the blade's
/// side so the spoon can reach the face within the scoop phase.
pub const PARKED_BARRIER_OFFSET: f64 = -(PUSHER_START_OFFSET + PUSH_TRAVEL);
/// Alpha resolution: one Pushing tick of travel.
pub const ALPHA_STEP: f64 = 1.0 / 60.0;
/// Command limits.
pub const MAX_LINEAR_SPEED: f64 = 0.1;
pub const MAX_ANGULAR_SPEED: f64 = 1.5;
/// Blade speed during Pushing, m/s.
pub const PUSH_SPEED: f64 = PUSH_TRAVEL / 3.0;
/// Spoon approach speed during Pushing, m/s.
pub const APPROACH_SPEED: f64 = SCOOP_APPROACH / 3.0;
/// Blade retreat speed during Transfer, m/s.
pub const CLOSE_SPEED: f64 = 0.05;
/// Lip-to-blade standoff the spoon keeps when meeting a parked blade, m.
pub const FACE_STANDOFF: f64 = 0.002;
/// Peak height (m) the pinning blade leads above the lip mid-scoop. The
/// lead follows a half-sine with a fast square-root attack, so the blade
/// hoists gripped food over the advancing rim within the first ticks of
/// the phase, matches the lip's climb rate exactly at phase midpoint, and
/// settles back level by the end.
pub const PIN_LIFT: f64 = 0.005;
/// Scooper-only plans extend the pushing-phase spoon approach all the way
/// to the parked blade face (plus standoff) over the same 3 s.
pub const SINGLE_APPROACH_SPEED: f64 =
    (SCOOPER_START_OFFSET - PARKED_BARRIER_OFFSET - FACE_STANDOFF) / 3.0;

/// Snap to the 1/60 grid the push phase can actually realize.
pub fn quantize_alpha(alpha: f64) -> f64 {
    (alpha.clamp(0.0, 1.0) * PUSH_TICKS as f64).round() / PUSH_TICKS as f64
}

/// Where to push from and how far.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrimitivePlan {
    /// Estimated x of the food pile center.
    pub food_center_x: f64,
    /// Commanded push fraction, quantized to `ALPHA_STEP`.
    pub alpha: f64,
    /// Scoop-only baseline: the blade parks at its start pose.
    pub pusher_active: bool,
    pub toggles: StrategyToggles,
}

impl PrimitivePlan {
    pub fn new(food_center_x: f64, alpha: f64, toggles: StrategyToggles) -> Self {
        Self {
            food_center_x,
            alpha: quantize_alpha(alpha),
            pusher_active: true,
            toggles,
        }
    }

    pub fn scoop_only(food_center_x: f64, toggles: StrategyToggles) -> Self {
        Self {
            food_center_x,
            alpha: 1.0,
            pusher_active: false,
            toggles,
        }
    }

    pub fn pusher_start_x(&self) -> f64 {
        if self.pusher_active {
            self.food_center_x + PUSHER_START_OFFSET
        } else {
            self.food_center_x + PARKED_BARRIER_OFFSET
        }
    }

    pub fn scooper_start_x(&self) -> f64 {
        self.food_center_x + SCOOPER_START_OFFSET
    }

    /// Teleport both tools to their start poses and zero their motion.
    pub fn apply_start(&self, world: &mut WorldState) {
        let geom = world.tools.geometry;
        let tools = &mut world.tools;
        tools.pusher.position = vec2(self.pusher_start_x(), 0.0);
        tools.pusher.tilt = if self.toggles.angled_pushing {
            15f64.to_radians()
        } else {
            0.0
        };
        tools.pusher.velocity = Vec2::ZERO;
        tools.pusher.tilt_rate = 0.0;
        tools.scooper.position = vec2(
            self.scooper_start_x(),
            geom.tangent_lip_height(geom.mount_angle),
        );
        tools.scooper.pitch = geom.mount_angle;
        tools.scooper.velocity = Vec2::ZERO;
        tools.scooper.pitch_rate = 0.0;
    }
}

/// Velocity command for one control tick.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ToolCommand {
    pub pusher_velocity: Vec2,
    pub pusher_tilt_rate: f64,
    pub scooper_velocity: Vec2,
    pub scooper_pitch_rate: f64,
}

impl ToolCommand {
    /// Enforce actuator limits.
    pub fn clamped(mut self) -> Self {
        for v in [&mut self.pusher_velocity, &mut self.scooper_velocity] {
            let norm = v.norm();
            if norm > MAX_LINEAR_SPEED {
                *v = *v * (MAX_LINEAR_SPEED / norm);
            }
        }
        self.pusher_tilt_rate = self
            .pusher_tilt_rate
            .clamp(-MAX_ANGULAR_SPEED, MAX_ANGULAR_SPEED);
        self.scooper_pitch_rate = self
            .scooper_pitch_rate
            .clamp(-MAX_ANGULAR_SPEED, MAX_ANGULAR_SPEED);
        self
    }
}

/// Decides, at the start of each Pushing tick, whether to stop pushing.
/// `progress` is the travel fraction completed so far.
pub trait PushScheduler {
    fn stop_pushing(&mut self, world: &WorldState, progress: f64) -> bool;

    /// Called once per control tick in every phase, after physics.
    /// Closed-loop policies use this to keep their camera history warm.
    fn observe(&mut self, _world: &WorldState, _phase: Phase, _tick_in_phase: u32) {}
}

/// Open-loop schedule: stop once the commanded fraction is reached.
pub struct AlphaSchedule {
    pub alpha: f64,
}

impl AlphaSchedule {
    pub fn new(alpha: f64) -> Self {
        Self {
            alpha: quantize_alpha(alpha),
        }
    }
}

impl PushScheduler for AlphaSchedule {
    fn stop_pushing(&mut self, _world: &WorldState, progress: f64) -> bool {
        progress >= self.alpha - 1e-9
    }
}

/// Per-tick trace row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub tick: u32,
    pub time: f64,
    pub phase: Phase,
    /// Push-travel fraction completed.
    pub progress: f64,
    pub pusher_x: f64,
    pub pusher_z: f64,
    pub pusher_tilt: f64,
    pub scooper_x: f64,
    pub scooper_z: f64,
    pub scooper_pitch: f64,
    pub account: MassAccount,
    pub max_squeeze: f64,
    pub breaks: u32,
    pub pusher_force: Vec2,
    pub items: Vec<ItemSnapshot>,
}

/// Per-item pose snapshot embedded in each [`TickRecord`], enough to redraw
/// the scene without the live world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemSnapshot {
    pub id: u32,
    pub class: String,
    pub x: f64,
    pub z: f64,
    pub angle: f64,
    pub compression: f64,
    pub broken: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutResult {
    /// Push fraction actually executed; `None` for the scoop-only plan.
    pub realized_alpha: Option<f64>,
    pub ticks: Vec<TickRecord>,
    pub final_account: MassAccount,
    pub breaks: u32,
}

/// Execute the primitive to completion (or physics fault), mutating the
/// world in place.
pub fn run_rollout(
    world: &mut WorldState,
    plan: &PrimitivePlan,
    scheduler: &mut dyn PushScheduler,
) -> Result<RolloutResult, PhysicsError> {
    plan.apply_start(world);
    world.phase = Phase::Pushing;

    let mut ticks = Vec::new();
    let mut tick: u32 = 0;
    let mut tick_in_phase: u32 = 0;
    let mut realized_alpha: Option<f64> = None;

    loop {
        let progress = push_progress(world, plan);

        // Phase transitions are checked at tick start.
        match world.phase {
            Phase::Pushing => {
                let stop = tick_in_phase >= PUSH_TICKS
                    || (plan.pusher_active && scheduler.stop_pushing(world, progress));
                if stop {
                    if plan.pusher_active {
                        realized_alpha = Some(quantize_alpha(progress));
                    }
                    world.advance_phase();
                    tick_in_phase = 0;
                }
            }
            Phase::Scooping => {
                if tick_in_phase >= SCOOP_TICKS {
                    world.advance_phase();
                    tick_in_phase = 0;
                }
            }
            Phase::Transfer => {
                if tick_in_phase >= TRANSFER_TICKS {
                    world.advance_phase();
                    tick_in_phase = 0;
                }
            }
            Phase::Idle | Phase::Done => {}
        }
        if world.phase == Phase::Done {
            break;
        }

        let command = phase_command(world, plan).clamped();
        world.tools.pusher.velocity = command.pusher_velocity;
        world.tools.pusher.tilt_rate = command.pusher_tilt_rate;
        world.tools.scooper.velocity = command.scooper_velocity;
        world.tools.scooper.pitch_rate = command.scooper_pitch_rate;

        for _ in 0..SUBSTEPS {
            physics::step_in_place(world, DT)?;
        }

        let breaks = world.events.len() as u32;
        let max_squeeze = world
            .items
            .iter()
            .map(|i| physics::squeeze_force(world, i.id))
            .fold(0.0, f64::max);
        ticks.push(TickRecord {
            tick,
            time: world.time,
            phase: world.phase,
            progress: push_progress(world, plan),
            pusher_x: world.tools.pusher.position.x,
            pusher_z: world.tools.pusher.position.z,
            pusher_tilt: world.tools.pusher.tilt,
            scooper_x: world.tools.scooper.position.x,
            scooper_z: world.tools.scooper.position.z,
            scooper_pitch: world.tools.scooper.pitch,
            account: physics::mass_accounting(world),
            max_squeeze,
            breaks,
            pusher_force: physics::pusher_reaction(world),
            items: world
                .items
                .iter()
                .map(|i| ItemSnapshot {
                    id: i.id,
                    class: i.class.clone(),
                    x: i.pose.position.x,
                    z: i.pose.position.z,
                    angle: i.pose.angle,
                    compression: i.compression,
                    broken: i.broken,
                })
                .collect(),
        });
        scheduler.observe(world, world.phase, tick_in_phase);

        tick += 1;
        tick_in_phase += 1;
    }

    // Stop the tools.
    world.tools.pusher.velocity = Vec2::ZERO;
    world.tools.pusher.tilt_rate = 0.0;
    world.tools.scooper.velocity = Vec2::ZERO;
    world.tools.scooper.pitch_rate = 0.0;

    Ok(RolloutResult {
        realized_alpha,
        final_account: physics::mass_accounting(world),
        breaks: world.events.len() as u32,
        ticks,
    })
}

/// Fraction of the full push travel completed.
pub fn push_progress(world: &WorldState, plan: &PrimitivePlan) -> f64 {
    ((world.tools.pusher.position.x - plan.pusher_start_x()) / PUSH_TRAVEL).clamp(0.0, 1.0)
}

/// Mass-weighted mean item x: the ground-truth food center used by oracle
/// planners and tests. Perception-driven policies estimate this from the
/// overhead camera instead.
pub fn oracle_food_center(world: &WorldState) -> f64 {
    let total: f64 = world.items.iter().map(|i| i.current_mass).sum();
    if total <= 0.0 {
        return 0.0;
    }
    world
        .items
        .iter()
        .map(|i| i.pose.position.x * i.current_mass)
        .sum::<f64>()
        / total
}

fn phase_command(world: &WorldState, plan: &PrimitivePlan) -> ToolCommand {
    let geom: ToolGeometry = world.tools.geometry;
    match world.phase {
        Phase::Pushing => {
            // Adaptive cupping moves the tools simultaneously; without it
            // they move in sequence, and since the phase ends the moment
            // the blade finishes its travel, the spoon holds its start.
            // Scooper-only plans have no blade travel to wait for, so the
            // spoon approaches immediately, all the way to the parked
            // face.
            let scooper_vx = if !plan.pusher_active {
                -SINGLE_APPROACH_SPEED
            } else if plan.toggles.adaptive_cupping {
                -APPROACH_SPEED
            } else {
                0.0
            };
            ToolCommand {
                pusher_velocity: if plan.pusher_active {
                    vec2(PUSH_SPEED, 0.0)
                } else {
                    Vec2::ZERO
                },
                scooper_velocity: vec2(scooper_vx, 0.0),
                ..Default::default()
            }
        }
        Phase::Scooping => {
            // The spoon levels with its bowl planted on the plate: pitch
            // interpolates to horizontal while the lip height servos onto
            // the tangency curve and the body slides so the plate-contact
            // point stays fixed. The planted pivot sweeps the lip forward
            // and up, carrying the mouth over food parked in front of it.
            let duration = SCOOP_TICKS as f64 * CONTROL_DT;
            let pitch_rate = -geom.mount_angle / duration;
            let applied_rate = pitch_rate.clamp(-MAX_ANGULAR_SPEED, MAX_ANGULAR_SPEED);
            let pitch = world.tools.scooper.pitch;
            let next_pitch = (pitch + applied_rate * CONTROL_DT).max(0.0);
            let target_z = geom.tangent_lip_height(next_pitch);
            let scooper_vz = (target_z - world.tools.scooper.position.z) / CONTROL_DT;
            let sweep =
                geom.tangent_contact_offset(pitch) - geom.tangent_contact_offset(next_pitch);
            let scooper_vx = sweep / CONTROL_DT;
            // Pinning rides the blade bottom on the lip-height curve plus a
            // half-sine lead: the blade lifts gripped food clear of the rim
            // while the planted bowl sweeps underneath, then settles level.
            let pusher_velocity = if plan.pusher_active && plan.toggles.pinning {
                let level = (1.0 - next_pitch / geom.mount_angle).clamp(0.0, 1.0);
                let lead = PIN_LIFT * (std::f64::consts::PI * level.sqrt()).sin();
                vec2(
                    0.0,
                    (target_z + lead - world.tools.pusher.position.z) / CONTROL_DT,
                )
            } else {
                Vec2::ZERO
            };
            ToolCommand {
                pusher_velocity,
                scooper_velocity: vec2(scooper_vx, scooper_vz),
                scooper_pitch_rate: pitch_rate,
                ..Default::default()
            }
        }
        Phase::Transfer => ToolCommand {
            pusher_velocity: if plan.pusher_active {
                vec2(-CLOSE_SPEED, 0.0)
            } else {
                Vec2::ZERO
            },
            scooper_velocity: Vec2::ZERO,
            scooper_pitch_rate: -10f64.to_radians() / (TRANSFER_TICKS as f64 * CONTROL_DT),
            ..Default::default()
        },
        Phase::Idle | Phase::Done => ToolCommand::default(),
    }
}

/// Write one JSON object per line.
pub fn write_rollout_ndjson(path: &Path, ticks: &[TickRecord]) -> std::io::Result<()> {
    let file = std::fs::File::create(path)?;
    let mut out = std::io::BufWriter::new(file);
    for t in ticks {
        serde_json::to_writer(&mut out, t)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_rollout_ndjson(path: &Path) -> std::io::Result<Vec<TickRecord>> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut ticks = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        ticks.push(serde_json::from_str(&line).map_err(std::io::Error::other)?);
    }
    Ok(ticks)
}
