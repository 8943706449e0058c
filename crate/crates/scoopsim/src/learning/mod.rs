//! Datasets and trained models for the two scene classifiers.
//!
//! The risk classifier looks at the initial overhead observation and says
//! whether the food is fragile; the failure classifier watches side
//! frames during pushing and says whether a break is imminent. Both are
//! tiny from-scratch networks fed by pooled pixels. Labels come straight
//! from the simulator — the catalog's deformability for risk, the logged
//! break events for failure — so every dataset is exactly reproducible
//! from its seed.

mod model;

pub use model::{
    evaluate, predict, predict_frame, train, BinaryClassifier, Metrics, ModelKind, TrainConfig,
    Trained, HIDDEN_UNITS,
};

use crate::perception::{
    render_overhead, render_side, OverheadGrid, SideGrid, OVERHEAD_CELLS, OVERHEAD_NOISE_SIGMA,
    SIDE_COLS, SIDE_ROWS,
};
use crate::primitive::{run_rollout, AlphaSchedule, PrimitivePlan, PushScheduler, PUSH_TICKS};
use crate::rng::RngHub;
use crate::worldmodel::{
    spawn_scenario, Catalog, ItemGroup, Phase, PolicySpec, ScenarioConfig, StrategyToggles,
    WorldState,
};
use rayon::prelude::*;
use std::io::Write as _;
use std::path::Path;

/// Frames with binary labels and the seed each sample came from.
///
/// Label semantics are task-specific: risk uses 1 = fragile food, and
/// failure uses 1 = stop (breakage imminent).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub frames: Vec<SideGrid>,
    pub labels: Vec<bool>,
    pub provenance: Vec<u64>,
}

impl LabeledSet {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|l| **l).count()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LearnError {
    #[error("catalog has no trainable classes")]
    EmptyCatalog,
    #[error("no breakage observed in any rollout; nothing to label as imminent")]
    NoBreakObserved,
    #[error("training loss diverged (NaN or infinite)")]
    DivergedLoss,
    #[error("feature vector has length {got}, model expects {expected}")]
    ShapeMismatch { got: usize, expected: usize },
    #[error("evaluation set is empty")]
    EmptySet,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad dataset or model file: {0}")]
    BadFile(String),
}

/// Default number of samples rendered per class for the risk dataset.
pub const FRAGILITY_PER_CLASS: usize = 43;
/// Default rollout count for the failure dataset.
pub const BREAKAGE_ROLLOUTS: usize = 30;
/// Default imminence window: side frames this many ticks before a logged
/// break are labeled "stop".
pub const IMMINENCE_WINDOW: u32 = 6;
/// Fragile class the failure classifier trains on.
pub const BREAKAGE_TRAIN_CLASS: &str = "tofu";
/// Spread of the break-force randomization across breakage rollouts.
pub const BREAK_FORCE_SPREAD: f64 = 0.3;

// The pair-averaging below relies on the strip being exactly twice as
// wide as a side frame.
const _: () = assert!(OVERHEAD_CELLS == 2 * SIDE_COLS);

/// Render one overhead observation per spawn and tile it into the side
/// camera's shape so both classifiers share one input pipeline: the
/// 128-cell strip is pair-averaged down to 64 columns, repeated over all
/// 48 rows, and re-noised per pixel.
fn tile_overhead(grid: &OverheadGrid, noise: &mut crate::rng::Stream<'_>) -> SideGrid {
    let mut halved = [0.0; SIDE_COLS];
    for (i, cell) in halved.iter_mut().enumerate() {
        *cell = (grid.cells[2 * i] + grid.cells[2 * i + 1]) / 2.0;
    }
    let mut pixels = Vec::with_capacity(SIDE_ROWS * SIDE_COLS);
    for _ in 0..SIDE_ROWS {
        for cell in halved {
            pixels.push((cell + noise.normal(OVERHEAD_NOISE_SIGMA)).clamp(0.0, 1.0));
        }
    }
    SideGrid { pixels }
}

/// Tile an already-rendered overhead strip into the risk classifier's
/// input shape, drawing tiling noise from the world's own perception
/// stream. Use this when the same strip also feeds segmentation.
pub fn tile_for_risk(grid: &OverheadGrid, world: &mut WorldState) -> SideGrid {
    tile_overhead(grid, &mut world.rng.stream("perception"))
}

/// Render the risk classifier's live input for the current scene: one
/// overhead strip, tiled. Matches the training-time pipeline exactly.
pub fn risk_observation(world: &mut WorldState) -> SideGrid {
    let grid = render_overhead(world);
    tile_for_risk(&grid, world)
}

/// Spawn-and-render fragility samples for every catalog class not in the
/// holdout list, labeled by the class's own deformability.
pub fn generate_fragility_dataset(
    catalog: &Catalog,
    n_per_class: usize,
    holdout: &[&str],
    seed: u64,
) -> Result<LabeledSet, LearnError> {
    let classes: Vec<_> = catalog
        .classes
        .iter()
        .filter(|c| !holdout.contains(&c.name.as_str()))
        .collect();
    if classes.is_empty() {
        return Err(LearnError::EmptyCatalog);
    }
    let mut hub = RngHub::new(seed);
    let mut jobs = Vec::new();
    {
        let mut stream = hub.stream("fragility");
        for class in &classes {
            for _ in 0..n_per_class {
                jobs.push((class.name.clone(), class.is_fragile(), stream.next_u64()));
            }
        }
    }
    let samples: Vec<(SideGrid, bool, u64)> = jobs
        .par_iter()
        .map(|(name, fragile, sample_seed)| {
            let config = ScenarioConfig {
                items: vec![ItemGroup {
                    class: name.clone(),
                    count: 1,
                }],
                jitter: 0.03,
                seed: *sample_seed,
                toggles: StrategyToggles::default(),
                policy: PolicySpec::default(),
            };
            let mut world =
                spawn_scenario(&config, catalog).expect("catalog classes spawn cleanly");
            let grid = render_overhead(&mut world);
            let frame = tile_overhead(&grid, &mut world.rng.stream("perception"));
            (frame, *fragile, *sample_seed)
        })
        .collect();
    let mut set = LabeledSet {
        frames: Vec::with_capacity(samples.len()),
        labels: Vec::with_capacity(samples.len()),
        provenance: Vec::with_capacity(samples.len()),
    };
    for (frame, label, sample_seed) in samples {
        set.frames.push(frame);
        set.labels.push(label);
        set.provenance.push(sample_seed);
    }
    Ok(set)
}

/// Scheduler wrapper that keeps the open-loop schedule but captures a
/// side frame per pushing tick and notes the ticks where break events
/// landed.
struct CapturePushing {
    inner: AlphaSchedule,
    frames: Vec<SideGrid>,
    break_ticks: Vec<u32>,
    seen_events: usize,
    tick: u32,
}

impl CapturePushing {
    fn new() -> CapturePushing {
        CapturePushing {
            inner: AlphaSchedule::new(1.0),
            frames: Vec::new(),
            break_ticks: Vec::new(),
            seen_events: 0,
            tick: 0,
        }
    }
}

impl PushScheduler for CapturePushing {
    fn stop_pushing(&mut self, world: &WorldState, progress: f64) -> bool {
        self.inner.stop_pushing(world, progress)
    }

    fn observe(&mut self, world: &WorldState, phase: Phase, _tick_in_phase: u32) {
        if phase == Phase::Pushing {
            self.frames.push(render_side(world));
        }
        if world.events.len() > self.seen_events {
            self.break_ticks.push(self.tick);
            self.seen_events = world.events.len();
        }
        self.tick += 1;
    }
}

/// Run full-travel pushing rollouts on the training fragile class with
/// randomized break force and placement; label each pushing frame by
/// whether a logged break is at most `window` ticks ahead of it.
pub fn generate_breakage_dataset(
    catalog: &Catalog,
    n_rollouts: usize,
    window: u32,
    seed: u64,
) -> Result<LabeledSet, LearnError> {
    let mut hub = RngHub::new(seed);
    let mut jobs = Vec::new();
    {
        let mut stream = hub.stream("breakage");
        for _ in 0..n_rollouts {
            let world_seed = stream.next_u64();
            let force_scale = 1.0 + stream.jitter(BREAK_FORCE_SPREAD);
            jobs.push((world_seed, force_scale));
        }
    }
    let rollouts: Vec<(Vec<SideGrid>, Vec<u32>, u64)> = jobs
        .par_iter()
        .map(|(world_seed, force_scale)| {
            let config = ScenarioConfig {
                items: vec![ItemGroup {
                    class: BREAKAGE_TRAIN_CLASS.to_string(),
                    count: 1,
                }],
                jitter: 0.02,
                seed: *world_seed,
                toggles: StrategyToggles::default(),
                policy: PolicySpec::default(),
            };
            let mut world =
                spawn_scenario(&config, catalog).expect("training class spawns cleanly");
            let class = world
                .classes
                .get_mut(BREAKAGE_TRAIN_CLASS)
                .expect("training class present");
            class.break_force *= force_scale;
            let center = crate::primitive::oracle_food_center(&world);
            let plan = PrimitivePlan::new(center, 1.0, StrategyToggles::default());
            let mut capture = CapturePushing::new();
            run_rollout(&mut world, &plan, &mut capture).expect("rollout completes");
            (capture.frames, capture.break_ticks, *world_seed)
        })
        .collect();

    let mut set = LabeledSet {
        frames: Vec::new(),
        labels: Vec::new(),
        provenance: Vec::new(),
    };
    for (frames, break_ticks, world_seed) in rollouts {
        debug_assert_eq!(frames.len(), PUSH_TICKS as usize);
        for (tick, frame) in frames.into_iter().enumerate() {
            let tick = tick as u32;
            let imminent = break_ticks
                .iter()
                .any(|t_b| tick + window >= *t_b && tick < *t_b);
            set.frames.push(frame);
            set.labels.push(imminent);
            set.provenance.push(world_seed);
        }
    }
    if set.positives() == 0 {
        return Err(LearnError::NoBreakObserved);
    }
    Ok(set)
}

/// Expand a set by `factor` with label-preserving photometric jitter:
/// contrast, brightness offset, gamma, box blur, intensity scale,
/// Gaussian pixel noise, and a coin-flip vertical flip. Originals are
/// kept; `factor` 1 returns the set unchanged.
pub fn augment(set: &LabeledSet, factor: usize, seed: u64) -> LabeledSet {
    if factor <= 1 {
        return set.clone();
    }
    let mut hub = RngHub::new(seed);
    let mut stream = hub.stream("augmentation");
    let mut out = LabeledSet {
        frames: Vec::with_capacity(set.len() * factor),
        labels: Vec::with_capacity(set.len() * factor),
        provenance: Vec::with_capacity(set.len() * factor),
    };
    for i in 0..set.len() {
        out.frames.push(set.frames[i].clone());
        out.labels.push(set.labels[i]);
        out.provenance.push(set.provenance[i]);
        for _ in 1..factor {
            out.frames.push(jitter_frame(&set.frames[i], &mut stream));
            out.labels.push(set.labels[i]);
            out.provenance.push(set.provenance[i]);
        }
    }
    out
}

fn jitter_frame(frame: &SideGrid, stream: &mut crate::rng::Stream<'_>) -> SideGrid {
    let contrast = stream.uniform(0.95, 1.05);
    let offset = stream.uniform(-10.0, 10.0) / 255.0;
    let gamma = stream.uniform(0.95, 1.05);
    let blur_radius = stream.uniform(0.0, 0.6);
    let scale = stream.uniform(0.95, 1.05);
    let mut pixels: Vec<f64> = frame
        .pixels
        .iter()
        .map(|p| {
            let v = ((p - 0.5) * contrast + 0.5 + offset).clamp(0.0, 1.0);
            (v.powf(gamma) * scale).clamp(0.0, 1.0)
        })
        .collect();
    pixels = box_blur(&pixels, blur_radius);
    for p in &mut pixels {
        *p = (*p + stream.normal(3.1875 / 255.0)).clamp(0.0, 1.0);
    }
    let grid = SideGrid { pixels };
    if stream.gen_bool(0.5) {
        grid.vflip()
    } else {
        grid
    }
}

/// Separable box blur with a continuous radius in cells: each output is
/// the mean of the boxcar of half-width `radius` centered on the pixel,
/// with clamped borders. Radii at or below half a cell are the identity.
fn box_blur(pixels: &[f64], radius: f64) -> Vec<f64> {
    if radius <= 0.5 {
        return pixels.to_vec();
    }
    let reach = (radius - 0.5).ceil() as i64;
    let mut kernel = Vec::with_capacity(2 * reach as usize + 1);
    for j in -reach..=reach {
        let lo = (j as f64 - 0.5).max(-radius);
        let hi = (j as f64 + 0.5).min(radius);
        kernel.push(((hi - lo) / (2.0 * radius)).max(0.0));
    }
    fn idx(line: usize, i: i64, stride: usize, len: i64) -> usize {
        if stride == 1 {
            line * len as usize + i as usize
        } else {
            i as usize * stride + line
        }
    }
    let pass = |src: &[f64], len: i64, stride: usize, count: usize| -> Vec<f64> {
        let mut dst = vec![0.0; src.len()];
        for line in 0..count {
            for i in 0..len {
                let mut acc = 0.0;
                for (k, w) in kernel.iter().enumerate() {
                    let j = (i + k as i64 - reach).clamp(0, len - 1);
                    acc += w * src[idx(line, j, stride, len)];
                }
                dst[idx(line, i, stride, len)] = acc;
            }
        }
        dst
    };
    // Horizontal then vertical.
    let horizontal = pass(pixels, SIDE_COLS as i64, 1, SIDE_ROWS);
    pass(&horizontal, SIDE_ROWS as i64, SIDE_COLS, SIDE_COLS)
}

/// Persist a dataset as PGM frames plus a CSV manifest.
pub fn save_labeled_set(set: &LabeledSet, dir: &Path) -> Result<(), LearnError> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = Vec::new();
    writeln!(manifest, "path,label,seed")?;
    for i in 0..set.len() {
        let name = format!("frame_{i:05}.pgm");
        set.frames[i].write_pgm(&dir.join(&name))?;
        writeln!(
            manifest,
            "{name},{},{}",
            u8::from(set.labels[i]),
            set.provenance[i]
        )?;
    }
    std::fs::write(dir.join("manifest.csv"), manifest)?;
    Ok(())
}

/// Load a dataset saved by [`save_labeled_set`]. Frames come back
/// quantized to the 8-bit PGM grid.
pub fn load_labeled_set(dir: &Path) -> Result<LabeledSet, LearnError> {
    let manifest = std::fs::read_to_string(dir.join("manifest.csv"))?;
    let mut set = LabeledSet {
        frames: Vec::new(),
        labels: Vec::new(),
        provenance: Vec::new(),
    };
    for (line_no, line) in manifest.lines().enumerate() {
        if line_no == 0 || line.is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let (path, label, seed) = (
            parts.next().ok_or_else(|| bad_line(line_no))?,
            parts.next().ok_or_else(|| bad_line(line_no))?,
            parts.next().ok_or_else(|| bad_line(line_no))?,
        );
        set.frames.push(SideGrid::read_pgm(&dir.join(path))?);
        set.labels.push(label == "1");
        set.provenance
            .push(seed.parse().map_err(|_| bad_line(line_no))?);
    }
    if set.is_empty() {
        return Err(LearnError::EmptySet);
    }
    Ok(set)
}

fn bad_line(line_no: usize) -> LearnError {
    LearnError::BadFile(format!("manifest line {line_no} is malformed"))
}
