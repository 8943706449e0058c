//! Controllers that decide how deep to push.
//!
//! The closed-loop controller gates on a risk verdict from the initial
//! overhead observation: robust scenes run the primitive open-loop at
//! full travel, fragile scenes arm a 20 Hz watcher that terminates the
//! push the moment the failure classifier sees a break coming. Everything
//! else here is a baseline for comparison: a fixed push fraction, a
//! scooper-only strategy with the blade parked as a static barrier, and a
//! ground-truth servo that reads the simulator's own squeeze forces.

use crate::learning::{predict_frame, tile_for_risk, BinaryClassifier, LearnError};
use crate::perception::{render_overhead, render_side, segment_center, SideGrid};
use crate::physics::{squeeze_force, PhysicsError};
use crate::primitive::{
    run_rollout, AlphaSchedule, PrimitivePlan, PushScheduler, RolloutResult, APPROACH_SPEED,
    CONTROL_DT, PUSH_SPEED,
};
use crate::worldmodel::{Phase, PolicySpec, StrategyToggles, WorldState};
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum PolicyError {
    #[error("model at `{path}` missing or unreadable: {reason}")]
    ModelMissing { path: String, reason: String },
    #[error("fixed alpha {0} is outside [0, 1]")]
    InvalidAlpha(f64),
    #[error("no food detected in the overhead strip")]
    NoFood,
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error(transparent)]
    Physics(#[from] PhysicsError),
}

/// Verdict on the initial observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RiskVerdict {
    Robust,
    Fragile,
}

/// One watcher decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Continue,
    TerminatePushing,
}

/// A rollout-driving strategy. Model-based variants hold their loaded
/// classifiers; per-rollout state lives in the scheduler each run builds,
/// so one controller value can drive any number of rollouts.
#[derive(Debug, Clone)]
pub enum Controller {
    /// Risk-gated closed loop: full push for robust verdicts, learned
    /// early termination for fragile ones.
    Carbs {
        risk: BinaryClassifier,
        failure: BinaryClassifier,
    },
    /// Scooper-only: the blade parks as a static barrier and every
    /// stabilizing strategy is disabled.
    Single,
    /// Open-loop push to a fixed fraction of full travel.
    FixedAlpha(f64),
    /// Ground-truth servo on the simulator's squeeze forces. `None`
    /// margin resolves per scene via [`default_oracle_margin`].
    OracleServo { margin: Option<f64> },
}

impl Controller {
    pub fn fixed_alpha(alpha: f64) -> Result<Controller, PolicyError> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(PolicyError::InvalidAlpha(alpha));
        }
        Ok(Controller::FixedAlpha(alpha))
    }

    pub fn carbs(
        risk: BinaryClassifier,
        failure: BinaryClassifier,
    ) -> Result<Controller, PolicyError> {
        for (name, model) in [("risk", &risk), ("failure", &failure)] {
            if !model.norm.is_fitted() {
                return Err(PolicyError::ModelMissing {
                    path: format!("<in-memory {name} model>"),
                    reason: "feature normalization not fitted".into(),
                });
            }
        }
        Ok(Controller::Carbs { risk, failure })
    }

    /// Build from a config entry, loading any referenced model files.
    /// Relative paths resolve against `model_dir`.
    pub fn from_spec(spec: &PolicySpec, model_dir: &Path) -> Result<Controller, PolicyError> {
        match spec {
            PolicySpec::Carbs {
                risk_model,
                failure_model,
            } => Controller::carbs(
                load_model(model_dir, risk_model)?,
                load_model(model_dir, failure_model)?,
            ),
            PolicySpec::Single => Ok(Controller::Single),
            PolicySpec::FixedAlpha { alpha } => Controller::fixed_alpha(*alpha),
            PolicySpec::OracleServo { margin } => Ok(Controller::OracleServo { margin: *margin }),
        }
    }

    /// Stable label for results tables.
    pub fn name(&self) -> String {
        match self {
            Controller::Carbs { .. } => "carbs".into(),
            Controller::Single => "single".into(),
            Controller::FixedAlpha(v) => format!("fixed_alpha({v:.2})"),
            Controller::OracleServo { .. } => "oracle_servo".into(),
        }
    }
}

fn load_model(dir: &Path, name: &str) -> Result<BinaryClassifier, PolicyError> {
    let path = if Path::new(name).is_absolute() {
        PathBuf::from(name)
    } else {
        dir.join(name)
    };
    let model = BinaryClassifier::load(&path).map_err(|e| PolicyError::ModelMissing {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    if !model.norm.is_fitted() {
        return Err(PolicyError::ModelMissing {
            path: path.display().to_string(),
            reason: "feature normalization not fitted".into(),
        });
    }
    Ok(model)
}

/// Classify the initial observation. Fragile exactly when the model's
/// probability reaches its threshold (ties count as fragile).
pub fn classify_risk(
    model: &BinaryClassifier,
    observation: &SideGrid,
) -> Result<RiskVerdict, PolicyError> {
    let p = predict_frame(model, observation)?;
    Ok(if p >= model.threshold {
        RiskVerdict::Fragile
    } else {
        RiskVerdict::Robust
    })
}

/// The 20 Hz breakage watcher. Once armed it examines every pushing
/// frame; the first frame at or over the failure threshold latches a
/// terminate decision, picked up at the next tick boundary.
pub struct CarbsServo<'m> {
    failure: &'m BinaryClassifier,
    fire: bool,
    /// Pushing tick whose frame crossed the threshold, if any.
    pub fired_at: Option<u32>,
}

impl<'m> CarbsServo<'m> {
    pub fn new(failure: &'m BinaryClassifier) -> CarbsServo<'m> {
        CarbsServo {
            failure,
            fire: false,
            fired_at: None,
        }
    }

    /// One watcher decision for one frame. Quiet outside Pushing.
    pub fn tick(&mut self, frame: &SideGrid, phase: Phase, tick_in_phase: u32) -> Decision {
        if phase != Phase::Pushing {
            return Decision::Continue;
        }
        if !self.fire {
            let p = predict_frame(self.failure, frame)
                .expect("failure model norm validated at controller build");
            if p >= self.failure.threshold {
                self.fire = true;
                self.fired_at = Some(tick_in_phase);
            }
        }
        if self.fire {
            Decision::TerminatePushing
        } else {
            Decision::Continue
        }
    }
}

impl PushScheduler for CarbsServo<'_> {
    fn stop_pushing(&mut self, _world: &WorldState, progress: f64) -> bool {
        self.fire || progress >= 1.0 - 1e-9
    }

    fn observe(&mut self, world: &WorldState, phase: Phase, tick_in_phase: u32) {
        if phase == Phase::Pushing && !self.fire {
            let frame = render_side(world);
            self.tick(&frame, phase, tick_in_phase);
        }
    }
}

/// True when any fragile item is squeezed to within `margin` newtons of
/// its break force. No two-sided contact means no squeeze, hence false.
pub fn oracle_failure_detector(world: &WorldState, margin: f64) -> bool {
    world.items.iter().any(|item| {
        let class = world.class_of(item);
        class.is_fragile() && squeeze_force(world, item.id) >= class.break_force - margin
    })
}

/// Default ground-truth margin: 1.2x the largest squeeze-force increase
/// one control tick can produce on any fragile item in the scene, so a
/// one-tick reaction delay cannot cross the break threshold.
pub fn default_oracle_margin(world: &WorldState) -> f64 {
    let closing_per_tick = (PUSH_SPEED + APPROACH_SPEED) * CONTROL_DT;
    let k_max = world
        .items
        .iter()
        .map(|item| world.class_of(item))
        .filter(|class| class.is_fragile())
        .filter_map(|class| class.compression_stiffness)
        .fold(0.0, f64::max);
    1.2 * k_max * closing_per_tick
}

/// Scheduler for the ground-truth servo.
pub struct OracleSchedule {
    pub margin: f64,
    fire: bool,
    pub fired_at: Option<u32>,
}

impl OracleSchedule {
    pub fn new(margin: f64) -> OracleSchedule {
        OracleSchedule {
            margin,
            fire: false,
            fired_at: None,
        }
    }
}

impl PushScheduler for OracleSchedule {
    fn stop_pushing(&mut self, _world: &WorldState, progress: f64) -> bool {
        self.fire || progress >= 1.0 - 1e-9
    }

    fn observe(&mut self, world: &WorldState, phase: Phase, tick_in_phase: u32) {
        if phase == Phase::Pushing && !self.fire && oracle_failure_detector(world, self.margin) {
            self.fire = true;
            self.fired_at = Some(tick_in_phase);
        }
    }
}

/// Everything one controlled rollout produced.
#[derive(Debug, Clone)]
pub struct PolicyRollout {
    /// Food center estimated from the overhead strip (m).
    pub estimated_center: f64,
    /// Risk verdict; only the closed-loop controller makes one.
    pub verdict: Option<RiskVerdict>,
    /// Resolved margin, for ground-truth servo runs.
    pub servo_margin: Option<f64>,
    /// Pushing tick whose observation triggered early termination.
    pub terminated_tick: Option<u32>,
    /// Ids of items sitting inside the spoon bowl as the push ended.
    /// Losing one of these later is what distinguishes a drop from food
    /// that never made it in.
    pub spoon_members_end_pushing: Vec<u32>,
    pub result: RolloutResult,
}

/// Forwards to an inner scheduler while keeping a running census of which
/// items are inside the spoon bowl; after the rollout it holds the
/// membership as of the final Pushing tick.
struct SpoonCensus<S> {
    inner: S,
    members: Vec<u32>,
}

impl<S> SpoonCensus<S> {
    fn new(inner: S) -> Self {
        Self {
            inner,
            members: Vec::new(),
        }
    }
}

impl<S: PushScheduler> PushScheduler for SpoonCensus<S> {
    fn stop_pushing(&mut self, world: &WorldState, progress: f64) -> bool {
        self.inner.stop_pushing(world, progress)
    }

    fn observe(&mut self, world: &WorldState, phase: Phase, tick_in_phase: u32) {
        self.inner.observe(world, phase, tick_in_phase);
        if phase == Phase::Pushing {
            self.members = world
                .items
                .iter()
                .filter(|i| {
                    world
                        .tools
                        .scooper
                        .contains(&world.tools.geometry, i.pose.position)
                })
                .map(|i| i.id)
                .collect();
        }
    }
}

/// Drive one rollout under a controller. The food center comes from the
/// overhead camera, not ground truth; `toggles` configure the primitive
/// except for the scooper-only baseline, which always runs bare.
pub fn run_policy(
    world: &mut WorldState,
    controller: &Controller,
    toggles: StrategyToggles,
) -> Result<PolicyRollout, PolicyError> {
    let grid = render_overhead(world);
    let segmentation = segment_center(&grid).map_err(|_| PolicyError::NoFood)?;
    let x_f = segmentation.center_x;

    match controller {
        Controller::Carbs { risk, failure } => {
            let observation = tile_for_risk(&grid, world);
            let verdict = classify_risk(risk, &observation)?;
            let plan = PrimitivePlan::new(x_f, 1.0, toggles);
            match verdict {
                RiskVerdict::Robust => {
                    let mut schedule = SpoonCensus::new(AlphaSchedule::new(1.0));
                    let result = run_rollout(world, &plan, &mut schedule)?;
                    Ok(PolicyRollout {
                        estimated_center: x_f,
                        verdict: Some(RiskVerdict::Robust),
                        servo_margin: None,
                        terminated_tick: None,
                        spoon_members_end_pushing: schedule.members,
                        result,
                    })
                }
                RiskVerdict::Fragile => {
                    let mut servo = SpoonCensus::new(CarbsServo::new(failure));
                    let result = run_rollout(world, &plan, &mut servo)?;
                    Ok(PolicyRollout {
                        estimated_center: x_f,
                        verdict: Some(RiskVerdict::Fragile),
                        servo_margin: None,
                        terminated_tick: servo.inner.fired_at,
                        spoon_members_end_pushing: servo.members,
                        result,
                    })
                }
            }
        }
        Controller::Single => {
            let bare = StrategyToggles {
                angled_pushing: false,
                adaptive_cupping: false,
                pinning: false,
            };
            let plan = PrimitivePlan::scoop_only(x_f, bare);
            let mut schedule = SpoonCensus::new(AlphaSchedule::new(1.0));
            let result = run_rollout(world, &plan, &mut schedule)?;
            Ok(PolicyRollout {
                estimated_center: x_f,
                verdict: None,
                servo_margin: None,
                terminated_tick: None,
                spoon_members_end_pushing: schedule.members,
                result,
            })
        }
        Controller::FixedAlpha(alpha) => {
            if !(0.0..=1.0).contains(alpha) {
                return Err(PolicyError::InvalidAlpha(*alpha));
            }
            let plan = PrimitivePlan::new(x_f, *alpha, toggles);
            let mut schedule = SpoonCensus::new(AlphaSchedule::new(*alpha));
            let result = run_rollout(world, &plan, &mut schedule)?;
            Ok(PolicyRollout {
                estimated_center: x_f,
                verdict: None,
                servo_margin: None,
                terminated_tick: None,
                spoon_members_end_pushing: schedule.members,
                result,
            })
        }
        Controller::OracleServo { margin } => {
            let margin = margin.unwrap_or_else(|| default_oracle_margin(world));
            let plan = PrimitivePlan::new(x_f, 1.0, toggles);
            let mut schedule = SpoonCensus::new(OracleSchedule::new(margin));
            let result = run_rollout(world, &plan, &mut schedule)?;
            Ok(PolicyRollout {
                estimated_center: x_f,
                verdict: None,
                servo_margin: Some(margin),
                terminated_tick: schedule.inner.fired_at,
                spoon_members_end_pushing: schedule.members,
                result,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perception::{FeatureNorm, FEATURE_LEN, SIDE_COLS, SIDE_ROWS};
    use crate::primitive::{
        oracle_food_center, FACE_STANDOFF, PARKED_BARRIER_OFFSET, PUSHER_START_OFFSET, PUSH_TRAVEL,
    };
    use crate::worldmodel::{spawn_scenario, Catalog, ItemGroup, ScenarioConfig};

    fn scene(class: &str, count: u32, seed: u64) -> WorldState {
        let config = ScenarioConfig {
            items: vec![ItemGroup {
                class: class.to_string(),
                count,
            }],
            jitter: 0.0,
            seed,
            toggles: StrategyToggles::default(),
            policy: PolicySpec::default(),
        };
        spawn_scenario(&config, &Catalog::shipped()).unwrap()
    }

    /// A linear model that always outputs sigmoid(bias), with a fitted
    /// norm so it can run in the live pipeline.
    fn bias_model(bias: f64, threshold: f64) -> BinaryClassifier {
        let mut weights = vec![0.0; FEATURE_LEN + 1];
        weights[FEATURE_LEN] = bias;
        BinaryClassifier {
            kind: crate::learning::ModelKind::Linear,
            input_dim: FEATURE_LEN,
            weights,
            norm: FeatureNorm::fit(&[vec![0.5; FEATURE_LEN]]),
            threshold,
        }
    }

    fn flat_frame(value: f64) -> SideGrid {
        SideGrid {
            pixels: vec![value; SIDE_ROWS * SIDE_COLS],
        }
    }

    #[test]
    fn fixed_alpha_rejects_out_of_range() {
        assert!(matches!(
            Controller::fixed_alpha(1.5),
            Err(PolicyError::InvalidAlpha(_))
        ));
        assert!(matches!(
            Controller::fixed_alpha(-0.1),
            Err(PolicyError::InvalidAlpha(_))
        ));
        assert!(Controller::fixed_alpha(0.93).is_ok());
    }

    #[test]
    fn open_loop_alpha_is_realized_exactly() {
        let mut world = scene("grape", 1, 11);
        let controller = Controller::fixed_alpha(0.65).unwrap();
        let rollout = run_policy(&mut world, &controller, StrategyToggles::default()).unwrap();
        assert_eq!(rollout.result.realized_alpha, Some(0.65));
        let pushing_end = rollout
            .ticks_in(Phase::Pushing)
            .last()
            .map(|t| t.pusher_x)
            .unwrap();
        let start = rollout.estimated_center + PUSHER_START_OFFSET;
        assert!((pushing_end - start - 0.65 * PUSH_TRAVEL).abs() < 1e-6);
    }

    #[test]
    fn single_baseline_blade_never_moves_and_lip_reaches_it() {
        let mut world = scene("grape", 1, 3);
        let rollout =
            run_policy(&mut world, &Controller::Single, StrategyToggles::default()).unwrap();
        assert_eq!(rollout.result.realized_alpha, None);
        let park = rollout.estimated_center + PARKED_BARRIER_OFFSET;
        for t in &rollout.result.ticks {
            assert!(
                (t.pusher_x - park).abs() < 1e-9,
                "blade drifted to {}",
                t.pusher_x
            );
        }
        let lip_end = rollout
            .ticks_in(Phase::Scooping)
            .last()
            .map(|t| t.scooper_x)
            .unwrap();
        assert!(
            (lip_end - (park + FACE_STANDOFF)).abs() < 4e-3,
            "lip ended at {lip_end}, face at {park}"
        );
    }

    #[test]
    fn estimated_center_tracks_ground_truth() {
        let mut world = scene("pea", 3, 8);
        let truth = oracle_food_center(&world);
        let controller = Controller::fixed_alpha(1.0).unwrap();
        let rollout = run_policy(&mut world, &controller, StrategyToggles::default()).unwrap();
        assert!(
            (rollout.estimated_center - truth).abs() < 3e-3,
            "estimate {} vs truth {truth}",
            rollout.estimated_center
        );
    }

    #[test]
    fn threshold_tie_counts_as_fragile() {
        // Zero bias puts the probability at exactly 0.5.
        let model = bias_model(0.0, 0.5);
        let frame = flat_frame(0.4);
        assert_eq!(classify_risk(&model, &frame).unwrap(), RiskVerdict::Fragile);
        let mut stricter = model.clone();
        stricter.threshold = 0.5 + 1e-9;
        assert_eq!(
            classify_risk(&stricter, &frame).unwrap(),
            RiskVerdict::Robust
        );
    }

    #[test]
    fn watcher_is_quiet_outside_pushing() {
        let always_fire = bias_model(50.0, 0.98);
        let mut servo = CarbsServo::new(&always_fire);
        let frame = flat_frame(0.2);
        assert_eq!(servo.tick(&frame, Phase::Scooping, 0), Decision::Continue);
        assert_eq!(servo.tick(&frame, Phase::Transfer, 0), Decision::Continue);
        assert_eq!(
            servo.tick(&frame, Phase::Pushing, 0),
            Decision::TerminatePushing
        );
        assert_eq!(servo.fired_at, Some(0));
    }

    #[test]
    fn trigger_happy_watcher_stops_after_one_tick() {
        let mut world = scene("grape", 1, 6);
        let controller = Controller::carbs(bias_model(50.0, 0.6), bias_model(50.0, 0.98)).unwrap();
        let rollout = run_policy(&mut world, &controller, StrategyToggles::default()).unwrap();
        assert_eq!(rollout.verdict, Some(RiskVerdict::Fragile));
        assert_eq!(rollout.terminated_tick, Some(0));
        // The tick-0 frame fires; the stop lands at the next boundary, so
        // exactly one tick of travel was executed.
        assert_eq!(rollout.result.realized_alpha, Some(1.0 / 60.0));
    }

    #[test]
    fn robust_verdict_never_terminates_early() {
        // Risk says robust; the watcher would fire instantly if consulted.
        let mut world = scene("grape", 1, 6);
        let controller = Controller::carbs(bias_model(-50.0, 0.6), bias_model(50.0, 0.98)).unwrap();
        let rollout = run_policy(&mut world, &controller, StrategyToggles::default()).unwrap();
        assert_eq!(rollout.verdict, Some(RiskVerdict::Robust));
        assert_eq!(rollout.terminated_tick, None);
        assert_eq!(rollout.result.realized_alpha, Some(1.0));
    }

    #[test]
    fn oracle_servo_prevents_the_open_loop_break() {
        let open_loop = {
            let mut world = scene("tofu", 1, 9);
            let controller = Controller::fixed_alpha(1.0).unwrap();
            run_policy(&mut world, &controller, StrategyToggles::default()).unwrap()
        };
        assert!(
            open_loop.result.breaks > 0,
            "full push should break the block"
        );

        let servoed = {
            let mut world = scene("tofu", 1, 9);
            let controller = Controller::OracleServo { margin: None };
            run_policy(&mut world, &controller, StrategyToggles::default()).unwrap()
        };
        assert_eq!(servoed.result.breaks, 0, "servo must stop short");
        let alpha = servoed.result.realized_alpha.unwrap();
        assert!(alpha < 1.0, "servo did not terminate early (alpha {alpha})");
        assert!(servoed.terminated_tick.is_some());
        assert!(servoed.servo_margin.unwrap() > 0.0);
    }

    #[test]
    fn zero_margin_fires_too_late_by_design() {
        // With no margin the detector only reacts at the threshold itself,
        // which is the same substep the physics applies the break.
        let mut world = scene("tofu", 1, 9);
        let controller = Controller::OracleServo { margin: Some(0.0) };
        let rollout = run_policy(&mut world, &controller, StrategyToggles::default()).unwrap();
        assert!(rollout.result.breaks > 0);
    }

    #[test]
    fn default_margin_scales_with_scene_stiffness() {
        let tofu = scene("tofu", 1, 1);
        let margin = default_oracle_margin(&tofu);
        let per_tick = 600.0 * (PUSH_SPEED + APPROACH_SPEED) * CONTROL_DT;
        assert!((margin - 1.2 * per_tick).abs() < 1e-12);
        // A robust-only scene has nothing to protect.
        assert_eq!(default_oracle_margin(&scene("grape", 1, 1)), 0.0);
    }

    #[test]
    fn specs_load_models_from_disk() {
        use crate::learning::{train, LabeledSet, TrainConfig};
        let dir = tempfile::tempdir().unwrap();
        let set = LabeledSet {
            frames: vec![flat_frame(0.2), flat_frame(0.8)],
            labels: vec![false, true],
            provenance: vec![0, 1],
        };
        let risk = train(&set, &TrainConfig::risk_default(1)).unwrap().model;
        let failure = train(&set, &TrainConfig::failure_default(1)).unwrap().model;
        risk.save(&dir.path().join("risk.model")).unwrap();
        failure.save(&dir.path().join("failure.model")).unwrap();

        let spec = PolicySpec::Carbs {
            risk_model: "risk.model".into(),
            failure_model: "failure.model".into(),
        };
        let controller = Controller::from_spec(&spec, dir.path()).unwrap();
        assert_eq!(controller.name(), "carbs");

        let missing = PolicySpec::Carbs {
            risk_model: "nope.model".into(),
            failure_model: "failure.model".into(),
        };
        assert!(matches!(
            Controller::from_spec(&missing, dir.path()),
            Err(PolicyError::ModelMissing { .. })
        ));
    }

    #[test]
    fn controller_names_are_stable() {
        assert_eq!(Controller::Single.name(), "single");
        assert_eq!(
            Controller::fixed_alpha(0.93).unwrap().name(),
            "fixed_alpha(0.93)"
        );
        assert_eq!(
            Controller::OracleServo { margin: None }.name(),
            "oracle_servo"
        );
    }

    impl PolicyRollout {
        fn ticks_in(&self, phase: Phase) -> impl Iterator<Item = &crate::primitive::TickRecord> {
            self.result.ticks.iter().filter(move |t| t.phase == phase)
        }
    }
}
