//! Experiment harness: outcome taxonomy, deterministic seeded batch runs
//! over (food setting × policy) grids, results tables with Student-t
//! confidence intervals, per-tick force traces, and SVG replay strips.
//!
//! A batch is described by an experiment file (JSON): named food settings,
//! a list of policies, a trial count, and a base seed. Trial `i` of every
//! cell uses seed `base_seed + i`, so policies face identical scenes and
//! comparisons are paired. Trials run on a thread pool (capped by the
//! `SCOOPSIM_THREADS` environment variable) and are re-sorted by
//! (setting, policy, seed) before aggregation, so two runs of the same
//! experiment emit byte-identical tables.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geom::Pose;
use crate::physics;
use crate::policy::{run_policy, Controller, PolicyError, PolicyRollout, RiskVerdict};
use crate::primitive::{
    RolloutResult, TickRecord, PARKED_BARRIER_OFFSET, PUSHER_START_OFFSET, PUSH_TRAVEL,
};
use crate::worldmodel::{
    spawn_scenario, Catalog, ItemGroup, Phase, PolicySpec, PusherState, ScenarioConfig, Shape,
    SpawnError, StrategyToggles, ToolGeometry, WorldState,
};

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("invalid experiment config: {0}")]
    ConfigInvalid(String),
    #[error("rollout record incomplete: phase is {0:?}, not Done")]
    IncompleteRecord(Phase),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Spawn(#[from] SpawnError),
    #[error("experiment file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// How a completed rollout ended. Exactly one per rollout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    /// Enough mass captured, nothing broken.
    Success,
    /// Food never made it into the bowl (or a multi-item scene captured
    /// only some of its items).
    NotEnter,
    /// Food escaped past the tool meeting point and kept going.
    Roll,
    /// Food was in the bowl when the push ended but dropped out later.
    Fall,
    /// A squeeze exceeded the class break force.
    Break,
}

impl Outcome {
    pub fn label(self) -> &'static str {
        match self {
            Outcome::Success => "success",
            Outcome::NotEnter => "not_enter",
            Outcome::Roll => "roll",
            Outcome::Fall => "fall",
            Outcome::Break => "break",
        }
    }
}

/// Classification thresholds that are judgement calls rather than physics;
/// both are experiment-file fields with these defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomeParams {
    /// Fraction of the spawned mass that must sit in the spoon to count
    /// as a capture.
    pub success_mass_fraction: f64,
    /// How far (m) past the meeting point an uncaptured item must end up
    /// to be scored as having rolled away.
    pub roll_window: f64,
}

impl Default for OutcomeParams {
    fn default() -> OutcomeParams {
        OutcomeParams {
            success_mass_fraction: 0.9,
            roll_window: 0.06,
        }
    }
}

/// Score a finished rollout. Precedence when several conditions hold:
/// Break, then Fall, then Roll, then NotEnter; Success only if nothing
/// else claimed the rollout.
///
/// - Break: any break event fired.
/// - Fall: an item that sat inside the bowl when Pushing ended is outside
///   it at Done.
/// - Roll: an uncaptured item ended more than `roll_window` beyond the
///   tool meeting point, on the far side from the push.
/// - Success: at least `success_mass_fraction` of the spawned mass is in
///   the spoon and every item is inside (a 2-of-3 capture is a failure).
/// - NotEnter: everything else — food stayed near the mouth but outside.
pub fn classify_outcome(
    world: &WorldState,
    rollout: &PolicyRollout,
    params: &OutcomeParams,
) -> Result<Outcome, BenchError> {
    if world.phase != Phase::Done {
        return Err(BenchError::IncompleteRecord(world.phase));
    }
    if !world.events.is_empty() {
        return Ok(Outcome::Break);
    }

    let in_spoon = |item: &crate::worldmodel::FoodItem| {
        world
            .tools
            .scooper
            .contains(&world.tools.geometry, item.pose.position)
    };
    let members_now: BTreeSet<u32> = world
        .items
        .iter()
        .filter(|i| in_spoon(i))
        .map(|i| i.id)
        .collect();

    if rollout
        .spoon_members_end_pushing
        .iter()
        .any(|id| !members_now.contains(id))
    {
        return Ok(Outcome::Fall);
    }

    // Meeting point of the two tool faces for this plan. The scoop-only
    // baseline parks the blade on the near side, so its meeting point
    // mirrors across the food.
    let meeting_x = match rollout.result.realized_alpha {
        Some(_) => rollout.estimated_center + PUSHER_START_OFFSET + PUSH_TRAVEL,
        None => rollout.estimated_center + PARKED_BARRIER_OFFSET,
    };
    if world
        .items
        .iter()
        .any(|i| !in_spoon(i) && i.pose.position.x > meeting_x + params.roll_window)
    {
        return Ok(Outcome::Roll);
    }

    let account = physics::mass_accounting(world);
    let captured = account.in_spoon >= params.success_mass_fraction * world.initial_mass
        && world.items.iter().all(|i| in_spoon(i));
    if captured {
        Ok(Outcome::Success)
    } else {
        Ok(Outcome::NotEnter)
    }
}

/// Percent of the spawned mass that did not end up in the spoon.
pub fn weight_loss_pct(world: &WorldState) -> f64 {
    if world.initial_mass <= 0.0 {
        return 0.0;
    }
    100.0 * (1.0 - physics::in_spoon_mass(world) / world.initial_mass)
}

fn default_trials() -> u32 {
    20
}

fn default_jitter() -> f64 {
    0.008
}

fn default_success_mass_fraction() -> f64 {
    OutcomeParams::default().success_mass_fraction
}

fn default_roll_window() -> f64 {
    OutcomeParams::default().roll_window
}

/// One named food arrangement, optionally overriding the experiment-wide
/// strategy toggles (that is how ablation suites are written: same items,
/// several settings differing only in toggles).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SettingConfig {
    pub name: String,
    pub items: Vec<ItemGroup>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub toggles: Option<StrategyToggles>,
}

/// A full batch description, loadable from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    /// Trials per (setting, policy) cell; seeds are `base_seed + index`.
    #[serde(default = "default_trials")]
    pub trials: u32,
    #[serde(default)]
    pub base_seed: u64,
    /// Placement jitter half-width (m) passed to the spawner.
    #[serde(default = "default_jitter")]
    pub jitter: f64,
    /// Default strategy toggles; individual settings may override.
    #[serde(default)]
    pub toggles: StrategyToggles,
    pub settings: Vec<SettingConfig>,
    pub policies: Vec<PolicySpec>,
    /// Base directory for relative model paths; resolved by the caller
    /// relative to the experiment file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_dir: Option<String>,
    #[serde(default = "default_success_mass_fraction")]
    pub success_mass_fraction: f64,
    #[serde(default = "default_roll_window")]
    pub roll_window: f64,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<ExperimentConfig, BenchError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig, BenchError> {
        ExperimentConfig::from_json(&std::fs::read_to_string(path)?)
    }

    fn outcome_params(&self) -> OutcomeParams {
        OutcomeParams {
            success_mass_fraction: self.success_mass_fraction,
            roll_window: self.roll_window,
        }
    }
}

/// One finished trial, kept in full so callers can audit gating, dump
/// traces, or re-derive any table cell.
#[derive(Debug, Clone)]
pub struct TrialRecord {
    pub setting: String,
    pub policy: String,
    pub seed: u64,
    pub outcome: Outcome,
    pub weight_loss_pct: f64,
    pub realized_alpha: Option<f64>,
    pub verdict: Option<RiskVerdict>,
    pub breaks: u32,
    pub ticks: Vec<TickRecord>,
}

/// Outcome histogram for one table row. Counts always sum to the trial
/// count of the row.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeCounts {
    pub success: u32,
    pub not_enter: u32,
    pub roll: u32,
    pub fall: u32,
    pub breaks: u32,
}

impl OutcomeCounts {
    fn bump(&mut self, outcome: Outcome) {
        match outcome {
            Outcome::Success => self.success += 1,
            Outcome::NotEnter => self.not_enter += 1,
            Outcome::Roll => self.roll += 1,
            Outcome::Fall => self.fall += 1,
            Outcome::Break => self.breaks += 1,
        }
    }

    pub fn total(&self) -> u32 {
        self.success + self.not_enter + self.roll + self.fall + self.breaks
    }
}

/// Aggregated row for one (setting, policy) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub setting: String,
    pub policy: String,
    pub successes: u32,
    pub trials: u32,
    pub mean_weight_loss_pct: f64,
    /// Mean realized push fraction; `None` when the policy has no push
    /// (the scoop-only baseline).
    pub alpha_mean: Option<f64>,
    /// 95% confidence half-width over per-trial realized push fractions.
    pub alpha_ci95: Option<f64>,
    pub counts: OutcomeCounts,
}

/// Everything a batch produced: aggregate rows plus the raw trials,
/// both sorted by (setting, policy, seed).
#[derive(Debug, Clone)]
pub struct ResultsTable {
    pub rows: Vec<TableRow>,
    pub records: Vec<TrialRecord>,
}

/// Run the whole (setting × policy × trial) grid and aggregate.
///
/// `model_dir` anchors relative model paths in the policy specs. The grid
/// runs in parallel; determinism comes from per-trial seeding and from
/// sorting results before aggregation, not from execution order.
pub fn run_experiment(
    config: &ExperimentConfig,
    catalog: &Catalog,
    model_dir: &Path,
) -> Result<ResultsTable, BenchError> {
    validate(config, catalog)?;

    let controllers: Vec<Controller> = config
        .policies
        .iter()
        .map(|spec| Controller::from_spec(spec, model_dir))
        .collect::<Result<_, _>>()?;
    let names: Vec<String> = controllers.iter().map(|c| c.name()).collect();
    {
        let mut seen = BTreeSet::new();
        for name in &names {
            if !seen.insert(name.clone()) {
                return Err(BenchError::ConfigInvalid(format!(
                    "two policies share the table label `{name}`"
                )));
            }
        }
    }

    let params = config.outcome_params();
    let mut jobs = Vec::new();
    for si in 0..config.settings.len() {
        for pi in 0..controllers.len() {
            for trial in 0..config.trials {
                jobs.push((si, pi, config.base_seed + trial as u64));
            }
        }
    }

    let run_all = || -> Result<Vec<TrialRecord>, BenchError> {
        jobs.par_iter()
            .map(|&(si, pi, seed)| {
                run_trial(
                    config,
                    catalog,
                    &config.settings[si],
                    &controllers[pi],
                    &names[pi],
                    seed,
                    &params,
                )
            })
            .collect()
    };
    let mut records = match thread_pool() {
        Some(pool) => pool.install(run_all)?,
        None => run_all()?,
    };

    records.sort_by(|a, b| (&a.setting, &a.policy, a.seed).cmp(&(&b.setting, &b.policy, b.seed)));
    let rows = aggregate(&records);
    Ok(ResultsTable { rows, records })
}

fn validate(config: &ExperimentConfig, catalog: &Catalog) -> Result<(), BenchError> {
    let fail = |msg: String| Err(BenchError::ConfigInvalid(msg));
    if config.trials == 0 {
        return fail("trials must be at least 1".into());
    }
    if config.settings.is_empty() {
        return fail("no settings".into());
    }
    if config.policies.is_empty() {
        return fail("no policies".into());
    }
    if !(0.0..=1.0).contains(&config.success_mass_fraction) {
        return fail(format!(
            "success_mass_fraction {} outside [0,1]",
            config.success_mass_fraction
        ));
    }
    if config.roll_window < 0.0 {
        return fail(format!("roll_window {} is negative", config.roll_window));
    }
    let mut seen = BTreeSet::new();
    for setting in &config.settings {
        if !seen.insert(&setting.name) {
            return fail(format!("duplicate setting name `{}`", setting.name));
        }
        if setting.items.is_empty() {
            return fail(format!("setting `{}` has no items", setting.name));
        }
        for group in &setting.items {
            if catalog.class(&group.class).is_none() {
                return fail(format!(
                    "setting `{}` uses unknown food class `{}`",
                    setting.name, group.class
                ));
            }
        }
    }
    Ok(())
}

fn run_trial(
    config: &ExperimentConfig,
    catalog: &Catalog,
    setting: &SettingConfig,
    controller: &Controller,
    policy_name: &str,
    seed: u64,
    params: &OutcomeParams,
) -> Result<TrialRecord, BenchError> {
    let toggles = setting.toggles.unwrap_or(config.toggles);
    let scenario = ScenarioConfig {
        items: setting.items.clone(),
        jitter: config.jitter,
        seed,
        toggles,
        policy: PolicySpec::default(),
    };
    let mut world = spawn_scenario(&scenario, catalog)?;
    let rollout = run_policy(&mut world, controller, toggles)?;
    let outcome = classify_outcome(&world, &rollout, params)?;
    let loss = weight_loss_pct(&world);
    let RolloutResult {
        realized_alpha,
        ticks,
        breaks,
        ..
    } = rollout.result;
    Ok(TrialRecord {
        setting: setting.name.clone(),
        policy: policy_name.to_string(),
        seed,
        outcome,
        weight_loss_pct: loss,
        realized_alpha,
        verdict: rollout.verdict,
        breaks,
        ticks,
    })
}

fn aggregate(records: &[TrialRecord]) -> Vec<TableRow> {
    let mut rows: Vec<TableRow> = Vec::new();
    let mut start = 0;
    while start < records.len() {
        let key = (&records[start].setting, &records[start].policy);
        let mut end = start;
        while end < records.len() && (&records[end].setting, &records[end].policy) == key {
            end += 1;
        }
        let cell = &records[start..end];
        let mut counts = OutcomeCounts::default();
        let mut loss_sum = 0.0;
        let mut alphas = Vec::new();
        for record in cell {
            counts.bump(record.outcome);
            loss_sum += record.weight_loss_pct;
            if let Some(alpha) = record.realized_alpha {
                alphas.push(alpha);
            }
        }
        let (alpha_mean, alpha_ci95) = match mean_ci95(&alphas) {
            Some((mean, half)) => (Some(mean), Some(half)),
            None => (None, None),
        };
        rows.push(TableRow {
            setting: key.0.clone(),
            policy: key.1.clone(),
            successes: counts.success,
            trials: cell.len() as u32,
            mean_weight_loss_pct: loss_sum / cell.len() as f64,
            alpha_mean,
            alpha_ci95,
            counts,
        });
        start = end;
    }
    rows
}

fn thread_pool() -> Option<rayon::ThreadPool> {
    let n: usize = std::env::var("SCOOPSIM_THREADS").ok()?.parse().ok()?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n.max(1))
        .build()
        .ok()
}

/// Two-sided 97.5th-percentile Student-t quantile for the given degrees
/// of freedom (exact to three decimals through df 30, then anchored
/// steps down to the normal limit).
fn t_975(df: usize) -> f64 {
    const TABLE: [f64; 30] = [
        12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228, 2.201, 2.179, 2.160,
        2.145, 2.131, 2.120, 2.110, 2.101, 2.093, 2.086, 2.080, 2.074, 2.069, 2.064, 2.060, 2.056,
        2.052, 2.048, 2.045, 2.042,
    ];
    match df {
        0 => f64::INFINITY,
        d if d <= 30 => TABLE[d - 1],
        d if d <= 40 => 2.021,
        d if d <= 60 => 2.000,
        d if d <= 120 => 1.980,
        _ => 1.960,
    }
}

/// Sample mean and 95% confidence half-width (Student-t). `None` for an
/// empty sample; a single sample reports a zero half-width.
pub fn mean_ci95(samples: &[f64]) -> Option<(f64, f64)> {
    if samples.is_empty() {
        return None;
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() == 1 {
        return Some((mean, 0.0));
    }
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    Some((mean, t_975(samples.len() - 1) * var.sqrt() / n.sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Csv,
    Markdown,
}

const TABLE_COLUMNS: [&str; 10] = [
    "setting",
    "policy",
    "success",
    "weight_loss_pct",
    "alpha_mean",
    "alpha_ci95",
    "not_enter",
    "roll",
    "fall",
    "break",
];

/// Render the aggregate rows. Column order is fixed; the α columns are
/// blank for rows without push semantics. An empty table is just the
/// header.
pub fn emit_table(table: &ResultsTable, format: TableFormat) -> String {
    let cells: Vec<Vec<String>> = table.rows.iter().map(row_cells).collect();
    match format {
        TableFormat::Csv => {
            let mut out = TABLE_COLUMNS.join(",");
            out.push('\n');
            for row in &cells {
                out.push_str(&row.join(","));
                out.push('\n');
            }
            out
        }
        TableFormat::Markdown => {
            let mut out = format!("| {} |\n", TABLE_COLUMNS.join(" | "));
            out.push_str(&format!("|{}\n", " --- |".repeat(TABLE_COLUMNS.len())));
            for row in &cells {
                out.push_str(&format!("| {} |\n", row.join(" | ")));
            }
            out
        }
    }
}

fn row_cells(row: &TableRow) -> Vec<String> {
    let blank_or = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
    vec![
        row.setting.clone(),
        row.policy.clone(),
        format!("{}/{}", row.successes, row.trials),
        format!("{:.4}", row.mean_weight_loss_pct),
        blank_or(row.alpha_mean),
        blank_or(row.alpha_ci95),
        row.counts.not_enter.to_string(),
        row.counts.roll.to_string(),
        row.counts.fall.to_string(),
        row.counts.breaks.to_string(),
    ]
}

fn phase_name(phase: Phase) -> &'static str {
    match phase {
        Phase::Idle => "idle",
        Phase::Pushing => "pushing",
        Phase::Scooping => "scooping",
        Phase::Transfer => "transfer",
        Phase::Done => "done",
    }
}

/// Per-tick force trace as CSV: one row per control tick with the blade
/// contact reaction, the worst squeeze in the scene, and a flag on ticks
/// where the break count rose.
pub fn log_forces(ticks: &[TickRecord]) -> String {
    let mut out = String::from("time,phase,pusher_fx,pusher_fz,squeeze,break\n");
    let mut prior_breaks = 0;
    for tick in ticks {
        let broke = u32::from(tick.breaks > prior_breaks);
        prior_breaks = tick.breaks;
        writeln!(
            out,
            "{:.3},{},{:.6},{:.6},{:.6},{}",
            tick.time,
            phase_name(tick.phase),
            tick.pusher_force.x,
            tick.pusher_force.z,
            tick.max_squeeze,
            broke,
        )
        .expect("string write");
    }
    out
}

/// Keyframes drawn by [`replay_svg`].
pub const REPLAY_KEYFRAMES: usize = 8;

const SVG_SCALE: f64 = 700.0; // px per metre
const SVG_Z_MIN: f64 = -0.015;
const SVG_Z_MAX: f64 = 0.125;
const SVG_CAPTION_H: f64 = 30.0;
const SVG_GAP: f64 = 8.0;

/// Render a rollout record as a horizontal strip of keyframes: plate,
/// blade, spoon profile, and items, with time/phase/squeeze captions.
/// Tool geometry is the crate default (records carry poses, not shapes);
/// items whose class is not in the catalog (breakage fragments) draw as
/// small discs.
pub fn replay_svg(ticks: &[TickRecord], catalog: &Catalog) -> String {
    let geometry = ToolGeometry::default();
    if ticks.is_empty() {
        return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"200\" height=\"40\">\
                <text x=\"8\" y=\"24\" font-size=\"12\">empty rollout record</text></svg>\n"
            .to_string();
    }

    let mut x_min = f64::INFINITY;
    let mut x_max = f64::NEG_INFINITY;
    for tick in ticks {
        for x in [tick.pusher_x, tick.scooper_x] {
            x_min = x_min.min(x);
            x_max = x_max.max(x);
        }
        for item in &tick.items {
            x_min = x_min.min(item.x);
            x_max = x_max.max(item.x);
        }
    }
    x_min -= 0.06;
    x_max += 0.06;

    let frame_w = (x_max - x_min) * SVG_SCALE;
    let frame_h = (SVG_Z_MAX - SVG_Z_MIN) * SVG_SCALE + SVG_CAPTION_H;
    let n_frames = REPLAY_KEYFRAMES.min(ticks.len());
    let total_w = frame_w * n_frames as f64 + SVG_GAP * (n_frames as f64 - 1.0);

    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{:.0}\" height=\"{:.0}\" \
         font-family=\"monospace\">\n",
        total_w, frame_h
    );
    for frame in 0..n_frames {
        let index = if n_frames == 1 {
            0
        } else {
            (frame * (ticks.len() - 1)) / (n_frames - 1)
        };
        let tick = &ticks[index];
        let x0 = frame as f64 * (frame_w + SVG_GAP);
        let px = |x: f64| x0 + (x - x_min) * SVG_SCALE;
        let py = |z: f64| (SVG_Z_MAX - z) * SVG_SCALE;

        writeln!(svg, "  <g class=\"frame\">").expect("string write");
        writeln!(
            svg,
            "    <rect x=\"{:.1}\" y=\"0\" width=\"{:.1}\" height=\"{:.1}\" fill=\"#fbfbf8\"/>",
            x0,
            frame_w,
            frame_h - SVG_CAPTION_H
        )
        .expect("string write");
        // Plate.
        writeln!(
            svg,
            "    <line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" \
             stroke=\"#888\" stroke-width=\"2\"/>",
            px(x_min),
            py(0.0),
            px(x_max),
            py(0.0)
        )
        .expect("string write");
        // Blade.
        let pusher = PusherState {
            position: crate::geom::vec2(tick.pusher_x, tick.pusher_z),
            tilt: tick.pusher_tilt,
            velocity: crate::geom::Vec2::ZERO,
            tilt_rate: 0.0,
        };
        let (bottom, top) = pusher.face_segment(&geometry);
        writeln!(
            svg,
            "    <line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" \
             stroke=\"#444\" stroke-width=\"3\"/>",
            px(bottom.x),
            py(bottom.z),
            px(top.x),
            py(top.z)
        )
        .expect("string write");
        // Spoon profile.
        let pose = Pose::new(
            crate::geom::vec2(tick.scooper_x, tick.scooper_z),
            tick.scooper_pitch,
        );
        let profile: Vec<String> = geometry
            .spoon_profile()
            .iter()
            .map(|p| {
                let w = pose.transform(*p);
                format!("{:.1},{:.1}", px(w.x), py(w.z))
            })
            .collect();
        writeln!(
            svg,
            "    <polyline points=\"{}\" fill=\"none\" stroke=\"#666\" stroke-width=\"3\"/>",
            profile.join(" ")
        )
        .expect("string write");
        // Items.
        for item in &tick.items {
            let fill = if item.broken {
                "#c0392b"
            } else {
                match catalog.class(&item.class) {
                    Some(class) if class.is_fragile() => "#e2a14d",
                    Some(_) => "#4a90d9",
                    None => "#c0392b",
                }
            };
            match catalog.class(&item.class).map(|c| &c.shape) {
                Some(Shape::Disc { radius }) => {
                    writeln!(
                        svg,
                        "    <circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"{:.1}\" fill=\"{}\"/>",
                        px(item.x),
                        py(item.z),
                        radius * SVG_SCALE,
                        fill
                    )
                    .expect("string write");
                }
                Some(shape) => {
                    let pose = Pose::new(crate::geom::vec2(item.x, item.z), item.angle);
                    let points: Vec<String> = shape
                        .local_polygon()
                        .expect("non-disc shape has a polygon")
                        .iter()
                        .map(|v| {
                            let w = pose.transform(*v);
                            format!("{:.1},{:.1}", px(w.x), py(w.z))
                        })
                        .collect();
                    writeln!(
                        svg,
                        "    <polygon points=\"{}\" fill=\"{}\"/>",
                        points.join(" "),
                        fill
                    )
                    .expect("string write");
                }
                None => {
                    // Breakage fragments carry a synthesized class name.
                    writeln!(
                        svg,
                        "    <circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"{:.1}\" fill=\"{}\"/>",
                        px(item.x),
                        py(item.z),
                        0.004 * SVG_SCALE,
                        fill
                    )
                    .expect("string write");
                }
            }
        }
        // Caption.
        let squeeze = if tick.max_squeeze > 0.005 {
            format!("  squeeze {:.2}N", tick.max_squeeze)
        } else {
            String::new()
        };
        writeln!(
            svg,
            "    <text x=\"{:.1}\" y=\"{:.1}\" font-size=\"11\">t={:.2}s {}{}</text>",
            x0 + 4.0,
            frame_h - 10.0,
            tick.time,
            phase_name(tick.phase),
            squeeze
        )
        .expect("string write");
        writeln!(svg, "  </g>").expect("string write");
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::Controller;
    use proptest::prelude::*;

    fn catalog() -> Catalog {
        Catalog::shipped()
    }

    fn finished(class: &str, count: u32, seed: u64, alpha: f64) -> (WorldState, PolicyRollout) {
        let scenario = ScenarioConfig {
            items: vec![ItemGroup {
                class: class.to_string(),
                count,
            }],
            jitter: 0.0,
            seed,
            toggles: StrategyToggles::default(),
            policy: PolicySpec::default(),
        };
        let mut world = spawn_scenario(&scenario, &catalog()).unwrap();
        let controller = Controller::fixed_alpha(alpha).unwrap();
        let rollout = run_policy(&mut world, &controller, StrategyToggles::default()).unwrap();
        (world, rollout)
    }

    /// Drop an item's centroid at the spoon bowl centre so membership
    /// tests see it captured.
    fn teleport_into_spoon(world: &mut WorldState, index: usize) {
        let geometry = world.tools.geometry;
        let pose = world.tools.scooper.pose();
        let bowl = geometry.bowl_polygon();
        let n = bowl.len() as f64;
        let centre = bowl.iter().fold(crate::geom::Vec2::ZERO, |a, b| a + *b) * (1.0 / n);
        world.items[index].pose.position = pose.transform(centre);
    }

    #[test]
    fn break_takes_priority_over_everything() {
        let (mut world, rollout) = finished("tofu", 1, 9, 1.0);
        assert!(!world.events.is_empty(), "tofu at full travel should break");
        // Stage a fall and a roll too; the break must still win.
        teleport_into_spoon(&mut world, 0);
        let mut rollout = rollout;
        rollout.spoon_members_end_pushing = vec![999];
        assert_eq!(
            classify_outcome(&world, &rollout, &OutcomeParams::default()).unwrap(),
            Outcome::Break
        );
    }

    #[test]
    fn grape_far_past_the_meeting_point_is_a_roll() {
        let (mut world, mut rollout) = finished("grape", 1, 3, 1.0);
        world.events.clear();
        rollout.spoon_members_end_pushing.clear();
        let meeting = rollout.estimated_center + PUSHER_START_OFFSET + PUSH_TRAVEL;
        let radius = match world.class_of(&world.items[0]).shape {
            Shape::Disc { radius } => radius,
            _ => panic!("grape is a disc"),
        };
        world.items[0].pose.position = crate::geom::vec2(meeting + 0.08, radius);
        assert_eq!(
            classify_outcome(&world, &rollout, &OutcomeParams::default()).unwrap(),
            Outcome::Roll
        );
        // Just inside the window it is merely a failure to enter.
        world.items[0].pose.position.x = meeting + 0.05;
        assert_eq!(
            classify_outcome(&world, &rollout, &OutcomeParams::default()).unwrap(),
            Outcome::NotEnter
        );
    }

    #[test]
    fn member_lost_after_the_push_is_a_fall() {
        let (mut world, mut rollout) = finished("grape", 1, 3, 1.0);
        world.events.clear();
        let id = world.items[0].id;
        rollout.spoon_members_end_pushing = vec![id];
        let radius = match world.class_of(&world.items[0]).shape {
            Shape::Disc { radius } => radius,
            _ => panic!("grape is a disc"),
        };
        // On the plate near the mouth: would otherwise be NotEnter.
        world.items[0].pose.position = crate::geom::vec2(rollout.estimated_center, radius);
        assert_eq!(
            classify_outcome(&world, &rollout, &OutcomeParams::default()).unwrap(),
            Outcome::Fall
        );
    }

    #[test]
    fn full_capture_is_a_success() {
        let (mut world, mut rollout) = finished("grape", 1, 3, 1.0);
        world.events.clear();
        rollout.spoon_members_end_pushing.clear();
        teleport_into_spoon(&mut world, 0);
        assert_eq!(
            classify_outcome(&world, &rollout, &OutcomeParams::default()).unwrap(),
            Outcome::Success
        );
    }

    #[test]
    fn partial_multi_item_capture_is_not_a_success() {
        let (mut world, mut rollout) = finished("pea", 3, 5, 1.0);
        world.events.clear();
        rollout.spoon_members_end_pushing.clear();
        teleport_into_spoon(&mut world, 0);
        teleport_into_spoon(&mut world, 1);
        // Last pea sits on the plate at the mouth with almost no mass, so
        // the mass fraction alone would pass; the joint rule must fail it.
        world.items[2].pose.position = crate::geom::vec2(rollout.estimated_center, 0.005);
        world.items[2].current_mass = 1e-6;
        world.initial_mass = world.items.iter().map(|i| i.current_mass).sum();
        let account = physics::mass_accounting(&world);
        assert!(account.in_spoon >= 0.9 * world.initial_mass);
        assert_eq!(
            classify_outcome(&world, &rollout, &OutcomeParams::default()).unwrap(),
            Outcome::NotEnter
        );
    }

    #[test]
    fn unfinished_rollout_is_rejected() {
        let scenario = ScenarioConfig {
            items: vec![ItemGroup {
                class: "grape".to_string(),
                count: 1,
            }],
            jitter: 0.0,
            seed: 1,
            toggles: StrategyToggles::default(),
            policy: PolicySpec::default(),
        };
        let world = spawn_scenario(&scenario, &catalog()).unwrap();
        let (done_world, rollout) = finished("grape", 1, 1, 1.0);
        drop(done_world);
        let err = classify_outcome(&world, &rollout, &OutcomeParams::default()).unwrap_err();
        assert!(matches!(err, BenchError::IncompleteRecord(Phase::Idle)));
    }

    #[test]
    fn weight_loss_matches_the_mass_ledger() {
        let (world, _) = finished("cheesecake", 1, 4, 1.0);
        let account = physics::mass_accounting(&world);
        let expected = 100.0 * (1.0 - account.in_spoon / world.initial_mass);
        assert!((weight_loss_pct(&world) - expected).abs() < 1e-6);
        assert!((0.0..=100.0).contains(&weight_loss_pct(&world)));
    }

    fn tiny_experiment() -> ExperimentConfig {
        ExperimentConfig::from_json(
            r#"{
                "name": "tiny",
                "trials": 3,
                "base_seed": 11,
                "jitter": 0.004,
                "settings": [
                    {"name": "grape", "items": [{"class": "grape", "count": 1}]}
                ],
                "policies": [
                    {"kind": "fixed_alpha", "alpha": 1.0},
                    {"kind": "single"}
                ]
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn experiment_is_deterministic_and_counts_add_up() {
        let catalog = catalog();
        let config = tiny_experiment();
        let first = run_experiment(&config, &catalog, Path::new(".")).unwrap();
        let second = run_experiment(&config, &catalog, Path::new(".")).unwrap();
        assert_eq!(
            emit_table(&first, TableFormat::Csv),
            emit_table(&second, TableFormat::Csv)
        );
        assert_eq!(first.rows.len(), 2);
        assert_eq!(first.records.len(), 6);
        for row in &first.rows {
            assert_eq!(row.trials, 3);
            assert_eq!(row.counts.total(), row.trials);
            assert_eq!(row.successes, row.counts.success);
        }
        // Sorted aggregation: policy names in order within the setting.
        assert!(first.rows[0].policy < first.rows[1].policy);
        // Per-trial seeds are base_seed + index.
        let seeds: Vec<u64> = first.records[..3].iter().map(|r| r.seed).collect();
        assert_eq!(seeds, vec![11, 12, 13]);
    }

    #[test]
    fn alpha_columns_are_blank_for_the_scoop_only_baseline() {
        let catalog = catalog();
        let table = run_experiment(&tiny_experiment(), &catalog, Path::new(".")).unwrap();
        let csv = emit_table(&table, TableFormat::Csv);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), TABLE_COLUMNS.join(","));
        for line in lines {
            let fields: Vec<&str> = line.split(',').collect();
            assert_eq!(fields.len(), TABLE_COLUMNS.len());
            if fields[1] == "single" {
                assert_eq!(fields[4], "");
                assert_eq!(fields[5], "");
            } else {
                assert!(fields[4].parse::<f64>().is_ok());
                assert!(fields[5].parse::<f64>().is_ok());
            }
        }
    }

    #[test]
    fn table_rows_round_trip_through_csv() {
        let catalog = catalog();
        let table = run_experiment(&tiny_experiment(), &catalog, Path::new(".")).unwrap();
        let csv = emit_table(&table, TableFormat::Csv);
        for (line, row) in csv.lines().skip(1).zip(&table.rows) {
            let fields: Vec<&str> = line.split(',').collect();
            assert_eq!(fields[0], row.setting);
            assert_eq!(fields[1], row.policy);
            assert_eq!(fields[2], format!("{}/{}", row.successes, row.trials));
            let loss: f64 = fields[3].parse().unwrap();
            assert!((loss - row.mean_weight_loss_pct).abs() < 5e-5);
            assert_eq!(fields[6].parse::<u32>().unwrap(), row.counts.not_enter);
            assert_eq!(fields[9].parse::<u32>().unwrap(), row.counts.breaks);
        }
        let markdown = emit_table(&table, TableFormat::Markdown);
        assert!(markdown.starts_with("| setting | policy |"));
        assert_eq!(markdown.lines().count(), table.rows.len() + 2);
    }

    #[test]
    fn empty_rows_emit_just_the_header() {
        let table = ResultsTable {
            rows: Vec::new(),
            records: Vec::new(),
        };
        assert_eq!(
            emit_table(&table, TableFormat::Csv),
            format!("{}\n", TABLE_COLUMNS.join(","))
        );
    }

    #[test]
    fn bad_experiment_configs_are_rejected() {
        let catalog = catalog();
        let mut config = tiny_experiment();
        config.trials = 0;
        assert!(matches!(
            run_experiment(&config, &catalog, Path::new(".")),
            Err(BenchError::ConfigInvalid(_))
        ));
        let mut config = tiny_experiment();
        config.settings.clear();
        assert!(matches!(
            run_experiment(&config, &catalog, Path::new(".")),
            Err(BenchError::ConfigInvalid(_))
        ));
        let mut config = tiny_experiment();
        config.policies.clear();
        assert!(matches!(
            run_experiment(&config, &catalog, Path::new(".")),
            Err(BenchError::ConfigInvalid(_))
        ));
        let mut config = tiny_experiment();
        config.settings[0].items[0].class = "granite".to_string();
        assert!(matches!(
            run_experiment(&config, &catalog, Path::new(".")),
            Err(BenchError::ConfigInvalid(_))
        ));
        let mut config = tiny_experiment();
        config.policies = vec![PolicySpec::Single, PolicySpec::Single];
        assert!(matches!(
            run_experiment(&config, &catalog, Path::new(".")),
            Err(BenchError::ConfigInvalid(_))
        ));
        assert!(ExperimentConfig::from_json(r#"{"name": "x", "bogus": 1}"#).is_err());
    }

    #[test]
    fn student_t_quantiles_match_the_table() {
        assert_eq!(t_975(19), 2.093);
        assert_eq!(t_975(1), 12.706);
        assert_eq!(t_975(200), 1.960);
        let (mean, half) = mean_ci95(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!((mean - 2.5).abs() < 1e-12);
        let s = (5.0f64 / 3.0).sqrt();
        assert!((half - 3.182 * s / 2.0).abs() < 1e-9);
        assert_eq!(mean_ci95(&[]), None);
        assert_eq!(mean_ci95(&[0.7]), Some((0.7, 0.0)));
    }

    #[test]
    fn force_log_has_one_row_per_tick_and_flags_breaks() {
        let (_, rollout) = finished("tofu", 1, 9, 1.0);
        assert!(rollout.result.breaks > 0);
        let log = log_forces(&rollout.result.ticks);
        let lines: Vec<&str> = log.lines().collect();
        assert_eq!(lines[0], "time,phase,pusher_fx,pusher_fz,squeeze,break");
        assert_eq!(lines.len(), rollout.result.ticks.len() + 1);
        let flagged: Vec<&&str> = lines[1..].iter().filter(|l| l.ends_with(",1")).collect();
        assert!(!flagged.is_empty());
        for line in &flagged {
            let squeeze: f64 = line.split(',').nth(4).unwrap().parse().unwrap();
            assert!(squeeze > 0.0);
        }
    }

    #[test]
    fn contact_free_rollout_logs_zero_forces() {
        // A short push that never reaches the food, with the spoon parked:
        // nothing touches anything.
        let scenario = ScenarioConfig {
            items: vec![ItemGroup {
                class: "grape".to_string(),
                count: 1,
            }],
            jitter: 0.0,
            seed: 2,
            toggles: StrategyToggles {
                angled_pushing: false,
                adaptive_cupping: false,
                pinning: false,
            },
            policy: PolicySpec::default(),
        };
        let mut world = spawn_scenario(&scenario, &catalog()).unwrap();
        let controller = Controller::fixed_alpha(0.1).unwrap();
        let rollout = run_policy(&mut world, &controller, scenario.toggles).unwrap();
        let log = log_forces(&rollout.result.ticks);
        for line in log.lines().skip(1) {
            let fields: Vec<&str> = line.split(',').collect();
            assert_eq!(fields[2].parse::<f64>().unwrap(), 0.0);
            assert_eq!(fields[3].parse::<f64>().unwrap(), 0.0);
            assert_eq!(fields[5], "0");
        }
    }

    #[test]
    fn replay_strip_draws_every_keyframe() {
        let (_, rollout) = finished("grape", 1, 3, 1.0);
        let svg = replay_svg(&rollout.result.ticks, &catalog());
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("<g class=\"frame\">").count(), REPLAY_KEYFRAMES);
        assert_eq!(svg.matches("<polyline").count(), REPLAY_KEYFRAMES);
        assert!(svg.matches("<circle").count() >= REPLAY_KEYFRAMES);
        assert!(svg.contains("pushing"));
        assert!(svg.contains("transfer"));
        assert!(replay_svg(&[], &catalog()).contains("empty rollout record"));
    }

    /// The spoon lip ends level with the plate, so membership right at the
    /// mouth stays well defined and every classified world gets exactly
    /// one outcome.
    #[test]
    fn classification_is_total_over_teleported_scenes() {
        let (world, rollout) = finished("grape", 1, 3, 1.0);
        let base_x = rollout.estimated_center;
        proptest!(ProptestConfig::with_cases(64), |(
            dx in -0.15f64..0.15,
            z in 0.0f64..0.08,
            members in prop::bool::ANY,
        )| {
            let mut world = world.clone();
            let mut rollout = rollout.clone();
            world.events.clear();
            world.items[0].pose.position = crate::geom::vec2(base_x + dx, z);
            rollout.spoon_members_end_pushing =
                if members { vec![world.items[0].id] } else { Vec::new() };
            let outcome = classify_outcome(&world, &rollout, &OutcomeParams::default());
            prop_assert!(outcome.is_ok());
        });
    }
}
