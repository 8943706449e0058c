//! World model: the food class catalog, tool geometry, scene state, and
//! seeded scenario spawning.
//!
//! The world lives in a vertical x–z plane over a plate whose surface is
//! `z = 0` and whose nominal food center is `x = 0`. Two kinematic tools
//! operate on it: a pusher (a flat face that slides along the plate) and a
//! scooper (a 16-segment spoon profile: circular bowl arc closed by a mouth
//! chord). Food items are rigid discs, boxes, or convex polygons drawn from
//! a data-driven catalog; fragile classes additionally carry a compression
//! stiffness and a finite break force.
//!
//! Everything in a [`WorldState`] is a value: cloning it forks the
//! simulation, and serializing it (including its RNG stream positions)
//! captures it exactly.

use crate::geom::{
    is_ccw_convex, polygon_area, polygon_centroid, polygon_unit_inertia, vec2, Pose, Vec2,
};
use crate::rng::RngHub;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

/// Whether a class deforms under tool pressure before breaking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Deformability {
    Robust,
    Fragile,
}

/// Whether a class shatters under blunt force (dry, crunchy foods).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Brittleness {
    Compliant,
    Brittle,
}

/// Planar collision shape. Polygons are counterclockwise and convex; the
/// loader re-centers them on their area centroid so poses refer to the
/// centroid for every shape kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Shape {
    Disc { radius: f64 },
    Box { width: f64, height: f64 },
    Polygon { vertices: Vec<[f64; 2]> },
}

impl Shape {
    /// Outline as a local-frame polygon; `None` for discs.
    pub fn local_polygon(&self) -> Option<Vec<Vec2>> {
        match self {
            Shape::Disc { .. } => None,
            Shape::Box { width, height } => {
                let (hw, hh) = (width / 2.0, height / 2.0);
                Some(vec![
                    vec2(-hw, -hh),
                    vec2(hw, -hh),
                    vec2(hw, hh),
                    vec2(-hw, hh),
                ])
            }
            Shape::Polygon { vertices } => {
                Some(vertices.iter().map(|v| vec2(v[0], v[1])).collect())
            }
        }
    }

    /// Half-extent along x at spawn orientation (used for touching layouts).
    pub fn half_width(&self) -> f64 {
        match self {
            Shape::Disc { radius } => *radius,
            Shape::Box { width, .. } => width / 2.0,
            Shape::Polygon { vertices } => vertices.iter().map(|v| v[0].abs()).fold(0.0, f64::max),
        }
    }

    /// Centroid height above the plate when resting at orientation zero.
    pub fn resting_height(&self) -> f64 {
        match self {
            Shape::Disc { radius } => *radius,
            Shape::Box { height, .. } => height / 2.0,
            Shape::Polygon { vertices } => {
                -vertices.iter().map(|v| v[1]).fold(f64::INFINITY, f64::min)
            }
        }
    }

    pub fn bounding_radius(&self) -> f64 {
        match self {
            Shape::Disc { radius } => *radius,
            Shape::Box { width, height } => (width * width + height * height).sqrt() / 2.0,
            Shape::Polygon { vertices } => vertices
                .iter()
                .map(|v| (v[0] * v[0] + v[1] * v[1]).sqrt())
                .fold(0.0, f64::max),
        }
    }

    pub fn area(&self) -> f64 {
        match self {
            Shape::Disc { radius } => std::f64::consts::PI * radius * radius,
            Shape::Box { width, height } => width * height,
            Shape::Polygon { vertices } => {
                let v: Vec<Vec2> = vertices.iter().map(|v| vec2(v[0], v[1])).collect();
                polygon_area(&v)
            }
        }
    }

    /// Moment of inertia per unit mass about the centroid.
    pub fn unit_inertia(&self) -> f64 {
        match self {
            Shape::Disc { radius } => radius * radius / 2.0,
            other => {
                let poly = other.local_polygon().expect("non-disc has a polygon");
                polygon_unit_inertia(&poly)
            }
        }
    }
}

/// One catalog entry. Calibration lives in the shipped `data/catalog.json`,
/// not in code; edit that file to retune a food.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FoodClassSpec {
    pub name: String,
    pub deformability: Deformability,
    pub brittleness: Brittleness,
    pub shape: Shape,
    /// kg
    pub mass: f64,
    pub friction_mu: f64,
    /// Squeeze force (N) beyond which the item breaks. Robust compliant
    /// classes carry an unreachable sentinel value.
    pub break_force: f64,
    /// N/m; present only for fragile classes, which act as a spring between
    /// the two tools when squeezed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compression_stiffness: Option<f64>,
    /// Mass fraction shed as residue when detaching from a tool after firm
    /// contact. 0 for non-sticky foods.
    #[serde(default)]
    pub stickiness: f64,
    /// Overhead reflectance in (0.3, 1.0].
    pub albedo: f64,
}

impl FoodClassSpec {
    pub fn is_fragile(&self) -> bool {
        self.deformability == Deformability::Fragile
    }
}

/// Errors from loading or validating a catalog file.
#[derive(Debug, thiserror::Error)]
pub enum CatalogError {
    #[error("catalog file not found: {0}")]
    MissingFile(String),
    #[error("catalog schema violation in class `{class}`, field `{field}`")]
    SchemaViolation { class: String, field: String },
    #[error("polygon for class `{0}` is not counterclockwise convex")]
    NonConvexPolygon(String),
}

/// The food class catalog: a validated list of [`FoodClassSpec`]s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Catalog {
    pub classes: Vec<FoodClassSpec>,
}

/// The catalog shipped with the crate (also present on disk at
/// `data/catalog.json` for editing).
pub const DEFAULT_CATALOG_JSON: &str = include_str!("../data/catalog.json");

impl Catalog {
    /// Parse and validate catalog JSON. Polygon shapes are re-centered on
    /// their area centroid.
    pub fn from_json(text: &str) -> Result<Catalog, CatalogError> {
        let mut catalog: Catalog =
            serde_json::from_str(text).map_err(|e| CatalogError::SchemaViolation {
                class: "<root>".to_string(),
                field: e.to_string(),
            })?;
        catalog.validate()?;
        for class in &mut catalog.classes {
            if let Shape::Polygon { vertices } = &mut class.shape {
                let pts: Vec<Vec2> = vertices.iter().map(|v| vec2(v[0], v[1])).collect();
                let c = polygon_centroid(&pts);
                for v in vertices.iter_mut() {
                    v[0] -= c.x;
                    v[1] -= c.z;
                }
            }
        }
        Ok(catalog)
    }

    /// The built-in default catalog.
    pub fn shipped() -> Catalog {
        Catalog::from_json(DEFAULT_CATALOG_JSON).expect("shipped catalog is valid")
    }

    pub fn class(&self, name: &str) -> Option<&FoodClassSpec> {
        self.classes.iter().find(|c| c.name == name)
    }

    pub fn validate(&self) -> Result<(), CatalogError> {
        let mut seen = std::collections::BTreeSet::new();
        for class in &self.classes {
            let fail = |field: &str| CatalogError::SchemaViolation {
                class: class.name.clone(),
                field: field.to_string(),
            };
            if class.name.is_empty() {
                return Err(fail("name"));
            }
            if !seen.insert(class.name.clone()) {
                return Err(fail("name"));
            }
            if !(class.mass.is_finite() && class.mass > 0.0) {
                return Err(fail("mass"));
            }
            if !(class.friction_mu.is_finite() && class.friction_mu >= 0.0) {
                return Err(fail("friction_mu"));
            }
            if !(class.break_force.is_finite() && class.break_force > 0.0) {
                return Err(fail("break_force"));
            }
            if !(class.stickiness.is_finite() && (0.0..=0.2).contains(&class.stickiness)) {
                return Err(fail("stickiness"));
            }
            if !(class.albedo.is_finite() && class.albedo > 0.3 && class.albedo <= 1.0) {
                return Err(fail("albedo"));
            }
            match (class.is_fragile(), class.compression_stiffness) {
                (true, Some(k)) if k.is_finite() && k > 0.0 => {}
                (false, None) => {}
                _ => return Err(fail("compression_stiffness")),
            }
            match &class.shape {
                Shape::Disc { radius } => {
                    if !(radius.is_finite() && *radius > 0.0) {
                        return Err(fail("shape.radius"));
                    }
                }
                Shape::Box { width, height } => {
                    if !(width.is_finite() && *width > 0.0 && height.is_finite() && *height > 0.0) {
                        return Err(fail("shape"));
                    }
                }
                Shape::Polygon { vertices } => {
                    if vertices.iter().flatten().any(|v| !v.is_finite()) {
                        return Err(fail("shape.vertices"));
                    }
                    let pts: Vec<Vec2> = vertices.iter().map(|v| vec2(v[0], v[1])).collect();
                    if !is_ccw_convex(&pts) {
                        return Err(CatalogError::NonConvexPolygon(class.name.clone()));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Load and validate a catalog from disk.
pub fn load_catalog(path: &Path) -> Result<Catalog, CatalogError> {
    let text = std::fs::read_to_string(path)
        .map_err(|_| CatalogError::MissingFile(path.display().to_string()))?;
    Catalog::from_json(&text)
}

/// Fixed tool dimensions, immutable for the duration of a rollout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToolGeometry {
    /// Spoon bowl arc radius (m).
    pub bowl_radius: f64,
    /// Spoon mouth chord length (m).
    pub mouth_chord: f64,
    /// Rendered/contact thickness of the spoon shell (m).
    pub lip_thickness: f64,
    /// Spoon mounting pitch (rad): the pitch held during pushing.
    pub mount_angle: f64,
    /// Height of the pusher blade (m).
    pub pusher_face_length: f64,
}

impl Default for ToolGeometry {
    fn default() -> ToolGeometry {
        ToolGeometry {
            bowl_radius: 0.025,
            mouth_chord: 0.045,
            lip_thickness: 0.003,
            mount_angle: std::f64::consts::FRAC_PI_4,
            pusher_face_length: 0.035,
        }
    }
}

pub const SPOON_SEGMENTS: usize = 16;

impl ToolGeometry {
    /// Spoon profile polyline in the scooper's local frame: 17 points from
    /// the lip (origin) along the sagging bowl arc to the heel at
    /// `(mouth_chord, 0)`. Local +x runs lip-to-heel, +z is the mouth
    /// normal side.
    pub fn spoon_profile(&self) -> Vec<Vec2> {
        let r = self.bowl_radius;
        let half = self.mouth_chord / 2.0;
        debug_assert!(half < r, "mouth chord must fit inside the bowl arc");
        let sag = (r * r - half * half).sqrt();
        let center = vec2(half, sag);
        let lip = vec2(0.0, 0.0) - center;
        let heel = vec2(self.mouth_chord, 0.0) - center;
        let a0 = lip.z.atan2(lip.x);
        let a1 = heel.z.atan2(heel.x);
        // Both angles sit below the center; sweep through the bottom.
        let (a0, a1) = if a0 > a1 {
            (a0 - std::f64::consts::TAU, a1)
        } else {
            (a0, a1)
        };
        (0..=SPOON_SEGMENTS)
            .map(|i| {
                let t = i as f64 / SPOON_SEGMENTS as f64;
                let a = a0 + (a1 - a0) * t;
                center + vec2(a.cos(), a.sin()) * r
            })
            .collect()
    }

    /// Closed bowl-interior region (arc plus mouth chord), local frame,
    /// counterclockwise. Useful as a drawing or targeting region; the
    /// capture test in [`ScooperState::contains`] extends above the chord.
    pub fn bowl_polygon(&self) -> Vec<Vec2> {
        // The profile runs lip -> bottom -> heel; closing heel -> lip along
        // the chord walks the top edge right-to-left, giving CCW order.
        self.spoon_profile()
    }

    /// Lip height that rests the profile exactly tangent to the plate at
    /// the given pitch (the lowest profile point touches `z = 0`).
    pub fn tangent_lip_height(&self, pitch: f64) -> f64 {
        let (s, c) = pitch.sin_cos();
        let lowest = self
            .spoon_profile()
            .iter()
            .map(|p| p.x * s + p.z * c)
            .fold(f64::INFINITY, f64::min);
        -lowest
    }

    /// Horizontal distance from the lip to the bowl arc's plate-contact
    /// point at the given pitch. Leveling a bowl that stays planted on
    /// this contact sweeps the lip forward by the growth of this offset.
    /// Computed on the continuous arc (not the sampled polyline) so the
    /// sweep velocity derived from it is smooth in pitch.
    pub fn tangent_contact_offset(&self, pitch: f64) -> f64 {
        let r = self.bowl_radius;
        let half = self.mouth_chord / 2.0;
        let center_z = (r * r - half * half).sqrt();
        let lip_angle = (-center_z).atan2(-half);
        let heel_angle = (-center_z).atan2(half);
        // Contact sits where the arc's outward radius points straight
        // down in the world, clamped to the arc's angular span.
        let contact = (-std::f64::consts::FRAC_PI_2 - pitch).clamp(lip_angle, heel_angle);
        let px = half + r * contact.cos();
        let pz = center_z + r * contact.sin();
        let (s, c) = pitch.sin_cos();
        px * c - pz * s
    }
}

/// Scooper pose and commanded motion. `position` is the lip point; local
/// +x runs toward the heel, rotated by `pitch` above horizontal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScooperState {
    pub position: Vec2,
    pub pitch: f64,
    pub velocity: Vec2,
    pub pitch_rate: f64,
}

impl ScooperState {
    pub fn pose(&self) -> Pose {
        Pose::new(self.position, self.pitch)
    }

    pub fn profile_world(&self, geometry: &ToolGeometry) -> Vec<Vec2> {
        let pose = self.pose();
        geometry
            .spoon_profile()
            .iter()
            .map(|p| pose.transform(*p))
            .collect()
    }

    /// Velocity of a world-frame surface point rigidly attached
    /// to the scooper.
    pub fn point_velocity(&self, world_point: Vec2) -> Vec2 {
        self.velocity + (world_point - self.position).perp() * self.pitch_rate
    }

    /// Is this world point inside the bowl capture region? The region
    /// spans the mouth chord, floored by the bowl arc and capped one rim
    /// thickness above the chord plane, so food resting in the bowl with
    /// its bulk standing proud of the rim still counts as held.
    pub fn contains(&self, geometry: &ToolGeometry, world_point: Vec2) -> bool {
        let local = self.pose().inverse_transform(world_point);
        if local.x < 0.0 || local.x > geometry.mouth_chord {
            return false;
        }
        let r = geometry.bowl_radius;
        let half = geometry.mouth_chord / 2.0;
        let center_z = (r * r - half * half).sqrt();
        let dx = local.x - half;
        let floor = center_z - (r * r - dx * dx).sqrt();
        let ceiling = (r - center_z) + geometry.lip_thickness;
        local.z >= floor && local.z <= ceiling
    }
}

/// Pusher pose and commanded motion. `position` is the bottom edge of the
/// blade; the blade rises from there, leaned back from the food by `tilt`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PusherState {
    pub position: Vec2,
    /// Blade lean off vertical (rad), top tipped away from the food so the
    /// contact normal gains an upward component.
    pub tilt: f64,
    pub velocity: Vec2,
    pub tilt_rate: f64,
}

impl PusherState {
    /// World endpoints of the blade face, bottom then top.
    pub fn face_segment(&self, geometry: &ToolGeometry) -> (Vec2, Vec2) {
        let dir = vec2(-self.tilt.sin(), self.tilt.cos());
        (
            self.position,
            self.position + dir * geometry.pusher_face_length,
        )
    }

    pub fn point_velocity(&self, world_point: Vec2) -> Vec2 {
        self.velocity + (world_point - self.position).perp() * self.tilt_rate
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolState {
    pub scooper: ScooperState,
    pub pusher: PusherState,
    pub geometry: ToolGeometry,
}

impl ToolState {
    /// Parked poses used before a rollout teleports the tools to their
    /// planned start: both tools well outside the plate's food region.
    pub fn standoff(geometry: ToolGeometry, angled_pushing: bool) -> ToolState {
        ToolState {
            scooper: ScooperState {
                position: vec2(0.20, geometry.tangent_lip_height(geometry.mount_angle)),
                pitch: geometry.mount_angle,
                velocity: Vec2::ZERO,
                pitch_rate: 0.0,
            },
            pusher: PusherState {
                position: vec2(-0.20, 0.0),
                tilt: if angled_pushing {
                    15f64.to_radians()
                } else {
                    0.0
                },
                velocity: Vec2::ZERO,
                tilt_rate: 0.0,
            },
            geometry,
        }
    }
}

/// One food item instance in the scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoodItem {
    pub id: u32,
    /// Catalog class name.
    pub class: String,
    pub pose: Pose,
    pub velocity: Vec2,
    pub angular_velocity: f64,
    /// kg; decreases when fragments detach or residue is shed.
    pub current_mass: f64,
    /// Current squeeze shortening along the pusher–scooper axis (m);
    /// zero except while held in two-sided tool contact.
    pub compression: f64,
    /// How far the spoon rim's edge has bitten into this item (m). The
    /// thin rim can only indent locally before the material shears
    /// around it, so this saturates where blade-face compression
    /// does not.
    #[serde(default)]
    pub rim_bite: f64,
    /// Set once by the first over-force squeeze; never cleared.
    pub broken: bool,
    /// Parent item id if this item was spawned as a breakage fragment.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fragment_of: Option<u32>,
}

/// Rollout phase. Transitions only ever move forward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Idle,
    Pushing,
    Scooping,
    Transfer,
    Done,
}

impl Phase {
    pub fn next(self) -> Phase {
        match self {
            Phase::Idle => Phase::Pushing,
            Phase::Pushing => Phase::Scooping,
            Phase::Scooping => Phase::Transfer,
            Phase::Transfer => Phase::Done,
            Phase::Done => Phase::Done,
        }
    }
}

/// The three stabilizing strategies, individually toggleable for ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StrategyToggles {
    /// Lean the pusher blade 15 degrees so pushed items ride up and over
    /// the spoon lip instead of jamming against it.
    pub angled_pushing: bool,
    /// Move pusher and scooper simultaneously during pushing; disabled,
    /// they move in sequence (pusher finishes its travel first).
    pub adaptive_cupping: bool,
    /// Raise the pusher with the spoon lip during scooping so nothing
    /// slips out of the closing mouth.
    pub pinning: bool,
}

impl Default for StrategyToggles {
    fn default() -> StrategyToggles {
        StrategyToggles {
            angled_pushing: true,
            adaptive_cupping: true,
            pinning: true,
        }
    }
}

/// Which controller drives a rollout. Model-based kinds reference trained
/// model files by path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicySpec {
    /// Risk-gated bimanual controller: robust verdicts run open-loop at
    /// full travel, fragile verdicts arm the learned stop servo.
    Carbs {
        risk_model: String,
        failure_model: String,
    },
    /// Static pusher used as a backstop; only the scooper moves.
    Single,
    /// Open-loop pushing that stops at the given travel fraction.
    FixedAlpha { alpha: f64 },
    /// Ground-truth servo that stops just short of the break force.
    OracleServo {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        margin: Option<f64>,
    },
}

impl Default for PolicySpec {
    fn default() -> PolicySpec {
        PolicySpec::FixedAlpha { alpha: 1.0 }
    }
}

/// Recipe for one spawnable scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Class name and count per group; one to three items in total.
    pub items: Vec<ItemGroup>,
    /// Half-width (m) of the uniform jitter applied to the group center.
    #[serde(default)]
    pub jitter: f64,
    pub seed: u64,
    #[serde(default)]
    pub toggles: StrategyToggles,
    #[serde(default)]
    pub policy: PolicySpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ItemGroup {
    pub class: String,
    pub count: u32,
}

/// Tunable simulation parameters that are data rather than physics
/// constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimParams {
    /// Mass fraction that detaches as a fragment when an item breaks.
    pub fragment_fraction: f64,
}

impl Default for SimParams {
    fn default() -> SimParams {
        SimParams {
            fragment_fraction: 0.3,
        }
    }
}

/// A squeeze-induced break, recorded when it happens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BreakEvent {
    pub time: f64,
    pub item: u32,
    pub fragment: u32,
    /// Squeeze force at the moment of failure (N).
    pub squeeze: f64,
}

/// Tracks one contact episode between an item and a tool, for stickiness
/// residue: shedding happens at most once per episode, on separation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ContactEpisode {
    pub in_contact: bool,
    pub peak_force: f64,
}

/// Which tool an episode refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolKind {
    Pusher,
    Scooper,
}

/// JSON-friendly layout for the episode map: a sorted list of entries
/// (JSON object keys must be strings, tuples are not).
mod episode_entries {
    use super::{ContactEpisode, ToolKind};
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use std::collections::BTreeMap;

    #[derive(Serialize, Deserialize)]
    struct Entry {
        item: u32,
        tool: ToolKind,
        episode: ContactEpisode,
    }

    pub fn serialize<S: Serializer>(
        map: &BTreeMap<(u32, ToolKind), ContactEpisode>,
        ser: S,
    ) -> Result<S::Ok, S::Error> {
        let entries: Vec<Entry> = map
            .iter()
            .map(|(&(item, tool), &episode)| Entry {
                item,
                tool,
                episode,
            })
            .collect();
        entries.serialize(ser)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        de: D,
    ) -> Result<BTreeMap<(u32, ToolKind), ContactEpisode>, D::Error> {
        let entries = Vec::<Entry>::deserialize(de)?;
        Ok(entries
            .into_iter()
            .map(|e| ((e.item, e.tool), e.episode))
            .collect())
    }
}

/// Complete simulation state. A value type: clone to fork, serialize to
/// snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub items: Vec<FoodItem>,
    pub tools: ToolState,
    /// Simulated seconds since spawn.
    pub time: f64,
    pub phase: Phase,
    /// Mass stuck to tools/plate as sticky residue (kg).
    pub residue_mass: f64,
    pub rng: RngHub,
    pub params: SimParams,
    /// Catalog classes resolved for this scene, keyed by name.
    pub classes: BTreeMap<String, FoodClassSpec>,
    /// Break events so far, in time order.
    pub events: Vec<BreakEvent>,
    /// Item-tool contact episodes (stickiness bookkeeping).
    #[serde(with = "episode_entries")]
    pub episodes: BTreeMap<(u32, ToolKind), ContactEpisode>,
    /// Contacts resolved by the most recent physics step.
    pub contacts: Vec<crate::physics::Contact>,
    /// Total mass at spawn (kg); conserved as items + residue.
    pub initial_mass: f64,
    pub next_item_id: u32,
}

impl WorldState {
    pub fn class_of(&self, item: &FoodItem) -> &FoodClassSpec {
        self.classes
            .get(&item.class)
            .expect("item class always present in world catalog")
    }

    pub fn item(&self, id: u32) -> Option<&FoodItem> {
        self.items.iter().find(|i| i.id == id)
    }

    pub fn items_mass(&self) -> f64 {
        self.items.iter().map(|i| i.current_mass).sum()
    }

    /// Advance the rollout phase; transitions only move forward.
    pub fn advance_phase(&mut self) {
        self.phase = self.phase.next();
    }
}

/// Errors from scenario spawning.
#[derive(Debug, thiserror::Error)]
pub enum SpawnError {
    #[error("unknown food class `{0}`")]
    UnknownClass(String),
    #[error("could not resolve item overlaps within the iteration budget")]
    OverlapUnresolvable,
    #[error("invalid scenario config: {0}")]
    InvalidConfig(String),
}

/// Equilibrium contact sink under gravity for the plate spring, so spawned
/// items are force-balanced from the first step. The weight splits over
/// however many lowest points the shape rests on: one for a disc, two for
/// a flat-bottomed polygon.
fn plate_sink(class: &FoodClassSpec) -> f64 {
    let supports = match class.shape.local_polygon() {
        None => 1.0,
        Some(verts) => {
            let low = verts.iter().map(|v| v.z).fold(f64::INFINITY, f64::min);
            verts.iter().filter(|v| v.z - low < 1e-9).count().max(1) as f64
        }
    };
    class.mass * crate::physics::GRAVITY / (supports * crate::physics::CONTACT_STIFFNESS)
}

const RELAX_ITERATIONS: usize = 1000;

/// Build a resting, pregrouped scene from a config and catalog.
///
/// Items spawn touching each other (multi-item groups) around a jittered
/// group center at the plate's nominal food position, resting on the plate
/// with zero velocity, tools parked at standoff, phase `Idle`. The same
/// config and seed always produce a bit-identical world.
pub fn spawn_scenario(
    config: &ScenarioConfig,
    catalog: &Catalog,
) -> Result<WorldState, SpawnError> {
    let mut expanded: Vec<&FoodClassSpec> = Vec::new();
    for group in &config.items {
        let class = catalog
            .class(&group.class)
            .ok_or_else(|| SpawnError::UnknownClass(group.class.clone()))?;
        for _ in 0..group.count {
            expanded.push(class);
        }
    }
    if expanded.is_empty() || expanded.len() > 3 {
        return Err(SpawnError::InvalidConfig(format!(
            "scenario must contain 1 to 3 items, got {}",
            expanded.len()
        )));
    }
    if !(config.jitter.is_finite() && config.jitter >= 0.0) {
        return Err(SpawnError::InvalidConfig("jitter must be >= 0".into()));
    }

    let mut rng = RngHub::new(config.seed);
    let center = rng.stream("placement").jitter(config.jitter);

    // Lay the group out exactly touching. Three equal discs nest as a
    // triangle (all pairs in contact); anything else forms a row with
    // adjacent pairs in contact.
    let mut poses: Vec<Pose> = Vec::with_capacity(expanded.len());
    let all_equal_discs = expanded.len() == 3
        && expanded
            .iter()
            .all(|c| match (&c.shape, &expanded[0].shape) {
                (Shape::Disc { radius: a }, Shape::Disc { radius: b }) => a == b,
                _ => false,
            });
    if all_equal_discs {
        let r = match &expanded[0].shape {
            Shape::Disc { radius } => *radius,
            _ => unreachable!(),
        };
        let base_z = r - plate_sink(expanded[0]);
        poses.push(Pose::new(vec2(center - r, base_z), 0.0));
        poses.push(Pose::new(vec2(center + r, base_z), 0.0));
        // Nested on top of the pair: centers form an equilateral triangle.
        poses.push(Pose::new(vec2(center, base_z + 3f64.sqrt() * r), 0.0));
    } else {
        let total_width: f64 = expanded.iter().map(|c| 2.0 * c.shape.half_width()).sum();
        let mut cursor = center - total_width / 2.0;
        for class in &expanded {
            let hw = class.shape.half_width();
            let x = cursor + hw;
            let z = class.shape.resting_height() - plate_sink(class);
            poses.push(Pose::new(vec2(x, z), 0.0));
            cursor += 2.0 * hw;
        }
    }

    // Safety pass: nudge apart any residual overlap (cannot occur for the
    // exact layouts above, but keeps arbitrary future layouts honest).
    for _ in 0..RELAX_ITERATIONS {
        let mut worst: f64 = 0.0;
        for i in 0..poses.len() {
            for j in (i + 1)..poses.len() {
                let ri = expanded[i].shape.bounding_radius();
                let rj = expanded[j].shape.bounding_radius();
                // Only discs get exact separation; conservative otherwise.
                if let (Shape::Disc { radius: ra }, Shape::Disc { radius: rb }) =
                    (&expanded[i].shape, &expanded[j].shape)
                {
                    let d = poses[j].position - poses[i].position;
                    let dist = d.norm();
                    let overlap = (ra + rb) - dist;
                    if overlap > 1e-9 {
                        worst = worst.max(overlap);
                        let push = d.normalized() * (overlap / 2.0);
                        poses[i].position += -push;
                        poses[j].position += push;
                    }
                } else {
                    let dx = (poses[j].position.x - poses[i].position.x).abs();
                    let need = expanded[i].shape.half_width() + expanded[j].shape.half_width();
                    if dx + 1e-9 < need && ri + rj > 0.0 {
                        worst = worst.max(need - dx);
                        let dir = if poses[j].position.x >= poses[i].position.x {
                            1.0
                        } else {
                            -1.0
                        };
                        poses[i].position.x -= dir * (need - dx) / 2.0;
                        poses[j].position.x += dir * (need - dx) / 2.0;
                    }
                }
            }
        }
        if worst <= 1e-9 {
            break;
        }
    }
    // Verify resolution succeeded.
    for i in 0..poses.len() {
        for j in (i + 1)..poses.len() {
            if let (Shape::Disc { radius: ra }, Shape::Disc { radius: rb }) =
                (&expanded[i].shape, &expanded[j].shape)
            {
                let dist = (poses[j].position - poses[i].position).norm();
                if (ra + rb) - dist > 1e-7 {
                    return Err(SpawnError::OverlapUnresolvable);
                }
            }
        }
    }

    let items: Vec<FoodItem> = expanded
        .iter()
        .zip(poses)
        .enumerate()
        .map(|(idx, (class, pose))| FoodItem {
            id: idx as u32,
            class: class.name.clone(),
            pose,
            velocity: Vec2::ZERO,
            angular_velocity: 0.0,
            current_mass: class.mass,
            compression: 0.0,
            rim_bite: 0.0,
            broken: false,
            fragment_of: None,
        })
        .collect();

    let mut classes = BTreeMap::new();
    for class in &expanded {
        classes.insert(class.name.clone(), (*class).clone());
    }

    let initial_mass = items.iter().map(|i| i.current_mass).sum();
    let next_item_id = items.len() as u32;
    Ok(WorldState {
        items,
        tools: ToolState::standoff(ToolGeometry::default(), config.toggles.angled_pushing),
        time: 0.0,
        phase: Phase::Idle,
        residue_mass: 0.0,
        rng,
        params: SimParams::default(),
        classes,
        events: Vec::new(),
        episodes: BTreeMap::new(),
        contacts: Vec::new(),
        initial_mass,
        next_item_id,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::point_in_convex_polygon;

    fn scenario(class: &str, count: u32, jitter: f64, seed: u64) -> ScenarioConfig {
        ScenarioConfig {
            items: vec![ItemGroup {
                class: class.to_string(),
                count,
            }],
            jitter,
            seed,
            toggles: StrategyToggles::default(),
            policy: PolicySpec::default(),
        }
    }

    #[test]
    fn shipped_catalog_has_expected_classes() {
        let catalog = Catalog::shipped();
        assert_eq!(catalog.classes.len(), 15);
        for name in [
            "tofu",
            "grape",
            "cheesecake",
            "red_square_jello",
            "orange_triangle_jello",
        ] {
            assert!(catalog.class(name).is_some(), "missing class {name}");
        }
    }

    #[test]
    fn shipped_catalog_albedo_ranges_overlap() {
        // Neither cohort is identifiable from intensity alone.
        let catalog = Catalog::shipped();
        let (mut rob_min, mut rob_max) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut fra_min, mut fra_max) = (f64::INFINITY, f64::NEG_INFINITY);
        for c in &catalog.classes {
            if c.is_fragile() {
                fra_min = fra_min.min(c.albedo);
                fra_max = fra_max.max(c.albedo);
            } else {
                rob_min = rob_min.min(c.albedo);
                rob_max = rob_max.max(c.albedo);
            }
        }
        assert!(fra_max > rob_min && rob_max > fra_min);
    }

    #[test]
    fn shipped_fragile_break_forces_sit_below_brittle_sentinels() {
        let catalog = Catalog::shipped();
        let min_robust_break = catalog
            .classes
            .iter()
            .filter(|c| !c.is_fragile())
            .map(|c| c.break_force)
            .fold(f64::INFINITY, f64::min);
        for c in catalog.classes.iter().filter(|c| c.is_fragile()) {
            assert!(c.break_force < min_robust_break);
            assert!(c.break_force.is_finite());
            assert!(c.compression_stiffness.unwrap() > 0.0);
        }
    }

    #[test]
    fn malformed_entries_report_class_and_field() {
        let bad_mass = r#"{"classes":[{"name":"pebble","deformability":"robust",
            "brittleness":"compliant","shape":{"disc":{"radius":0.01}},
            "mass":-1.0,"friction_mu":0.4,"break_force":1e6,"albedo":0.5}]}"#;
        match Catalog::from_json(bad_mass) {
            Err(CatalogError::SchemaViolation { class, field }) => {
                assert_eq!(class, "pebble");
                assert_eq!(field, "mass");
            }
            other => panic!("expected schema violation, got {other:?}"),
        }
    }

    #[test]
    fn clockwise_polygon_is_rejected() {
        let cw = r#"{"classes":[{"name":"shard","deformability":"robust",
            "brittleness":"compliant",
            "shape":{"polygon":{"vertices":[[0,0],[0,0.01],[0.01,0]]}},
            "mass":0.01,"friction_mu":0.4,"break_force":1e6,"albedo":0.5}]}"#;
        match Catalog::from_json(cw) {
            Err(CatalogError::NonConvexPolygon(class)) => assert_eq!(class, "shard"),
            other => panic!("expected non-convex rejection, got {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_a_root_schema_violation() {
        match Catalog::from_json("") {
            Err(CatalogError::SchemaViolation { class, .. }) => assert_eq!(class, "<root>"),
            other => panic!("expected root schema violation, got {other:?}"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let extra = r#"{"classes":[],"flavor":"umami"}"#;
        assert!(matches!(
            Catalog::from_json(extra),
            Err(CatalogError::SchemaViolation { .. })
        ));
    }

    #[test]
    fn missing_file_is_reported() {
        let err = load_catalog(Path::new("/definitely/not/here.json")).unwrap_err();
        assert!(matches!(err, CatalogError::MissingFile(_)));
    }

    #[test]
    fn single_grape_spawns_at_nominal_center_resting() {
        let catalog = Catalog::shipped();
        let world = spawn_scenario(&scenario("grape", 1, 0.0, 7), &catalog).unwrap();
        assert_eq!(world.items.len(), 1);
        let item = &world.items[0];
        assert_eq!(item.pose.position.x, 0.0);
        let r = match catalog.class("grape").unwrap().shape {
            Shape::Disc { radius } => radius,
            _ => unreachable!(),
        };
        assert!((item.pose.position.z - r).abs() < 1e-4);
        assert_eq!(item.velocity, Vec2::ZERO);
        assert_eq!(world.phase, Phase::Idle);
    }

    #[test]
    fn three_peas_spawn_pairwise_touching() {
        let catalog = Catalog::shipped();
        let world = spawn_scenario(&scenario("pea", 3, 0.004, 1), &catalog).unwrap();
        assert_eq!(world.items.len(), 3);
        let r = match catalog.class("pea").unwrap().shape {
            Shape::Disc { radius } => radius,
            _ => unreachable!(),
        };
        for i in 0..3 {
            for j in (i + 1)..3 {
                let gap =
                    (world.items[i].pose.position - world.items[j].pose.position).norm() - 2.0 * r;
                assert!(
                    gap.abs() < 1e-6,
                    "items {i},{j} gap {gap} exceeds touching tolerance"
                );
            }
        }
    }

    #[test]
    fn seeds_differentiate_and_reproduce() {
        let catalog = Catalog::shipped();
        let w1 = spawn_scenario(&scenario("grape", 1, 0.01, 1), &catalog).unwrap();
        let w2 = spawn_scenario(&scenario("grape", 1, 0.01, 2), &catalog).unwrap();
        assert_ne!(w1.items[0].pose.position.x, w2.items[0].pose.position.x);
        let w1b = spawn_scenario(&scenario("grape", 1, 0.01, 1), &catalog).unwrap();
        assert_eq!(
            serde_json::to_string(&w1).unwrap(),
            serde_json::to_string(&w1b).unwrap()
        );
    }

    #[test]
    fn unknown_class_is_an_error() {
        let catalog = Catalog::shipped();
        match spawn_scenario(&scenario("ambrosia", 1, 0.0, 1), &catalog) {
            Err(SpawnError::UnknownClass(name)) => assert_eq!(name, "ambrosia"),
            other => panic!("expected unknown class, got {other:?}"),
        }
    }

    #[test]
    fn too_many_items_is_invalid() {
        let catalog = Catalog::shipped();
        assert!(matches!(
            spawn_scenario(&scenario("pea", 4, 0.0, 1), &catalog),
            Err(SpawnError::InvalidConfig(_))
        ));
    }

    #[test]
    fn spoon_profile_spans_lip_to_heel() {
        let geom = ToolGeometry::default();
        let profile = geom.spoon_profile();
        assert_eq!(profile.len(), SPOON_SEGMENTS + 1);
        assert!(profile[0].norm() < 1e-12);
        assert!((profile[SPOON_SEGMENTS] - vec2(geom.mouth_chord, 0.0)).norm() < 1e-12);
        // The arc sags below the chord in between.
        let bottom = profile.iter().map(|p| p.z).fold(f64::INFINITY, f64::min);
        let sagitta =
            geom.bowl_radius - (geom.bowl_radius.powi(2) - (geom.mouth_chord / 2.0).powi(2)).sqrt();
        assert!((bottom + sagitta).abs() < 1e-4);
    }

    #[test]
    fn tangent_lip_height_keeps_profile_above_plate() {
        let geom = ToolGeometry::default();
        for pitch_deg in [0.0, 15.0, 30.0, 45.0] {
            let pitch = (pitch_deg as f64).to_radians();
            let lip_z = geom.tangent_lip_height(pitch);
            let scooper = ScooperState {
                position: vec2(0.0, lip_z),
                pitch,
                velocity: Vec2::ZERO,
                pitch_rate: 0.0,
            };
            let min_z = scooper
                .profile_world(&geom)
                .iter()
                .map(|p| p.z)
                .fold(f64::INFINITY, f64::min);
            assert!(min_z.abs() < 1e-12, "pitch {pitch_deg}: min_z {min_z}");
        }
        // Lip rises as the spoon levels out.
        assert!(geom.tangent_lip_height(0.0) > geom.tangent_lip_height(geom.mount_angle));
    }

    #[test]
    fn bowl_polygon_is_ccw_convex_and_contains_bowl_points() {
        let geom = ToolGeometry::default();
        let poly = geom.bowl_polygon();
        assert!(crate::geom::is_ccw_convex(&poly));
        // A point just under the chord midpoint is inside the bowl.
        assert!(point_in_convex_polygon(
            &poly,
            vec2(geom.mouth_chord / 2.0, -0.005)
        ));
        // A point above the chord is not.
        assert!(!point_in_convex_polygon(
            &poly,
            vec2(geom.mouth_chord / 2.0, 0.004)
        ));
    }
}
