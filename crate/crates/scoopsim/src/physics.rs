//! Fixed-step planar contact dynamics.
//!
//! Food items are rigid bodies (discs and convex polygons) under gravity;
//! the plate and both tools are kinematic surfaces. Contacts use a
//! spring-damper penalty law — stiffness `CONTACT_STIFFNESS`, critical
//! damping — with Coulomb friction, solved implicitly at the velocity level
//! (sequential impulses) so the stiff springs stay stable at gram-scale
//! masses and the 1/240 s step. The implicit solve preserves the penalty
//! statics exactly: a resting item settles at penetration `m·g / k`.
//!
//! Fragile items squeezed between the two tools act as a series spring:
//! squeeze force is `compression_stiffness x total overlap` transmitted
//! through the item, the item's collision shape shortens by the overlap,
//! and exceeding the class break force splits off a fragment. Sticky items
//! shed a mass fraction into plate residue when they separate from a tool
//! after a firm contact episode.
//!
//! Determinism: contacts are generated and solved in a fixed order (item
//! index, then surface order), all state lives in ordered containers, and
//! stepping never consumes randomness.

use crate::geom::{closest_point_on_segment, vec2, Vec2};
use crate::worldmodel::{BreakEvent, ContactEpisode, FoodItem, Shape, ToolKind, WorldState};
use serde::{Deserialize, Serialize};

pub const GRAVITY: f64 = 9.81;
/// Contact spring stiffness, N/m.
pub const CONTACT_STIFFNESS: f64 = 5.0e3;
/// Contact damping ratio (critical).
pub const DAMPING_RATIO: f64 = 1.0;
/// Physics step, s (240 Hz; twelve substeps per 20 Hz control tick).
pub const DT: f64 = 1.0 / 240.0;
/// Any item moving faster than this trips a numerical fault.
pub const BLOWUP_SPEED: f64 = 10.0;
/// Residue is shed only after a contact episode peaking above this force.
pub const RESIDUE_FORCE_THRESHOLD: f64 = 0.1;

/// Penetrations beyond this are treated as a generation artifact (wrong
/// side of a thin surface) and ignored rather than resolved violently.
const MAX_PLAUSIBLE_PENETRATION: f64 = 0.02;
/// Contacts activate this far before touch, letting the damper catch an
/// approach softly; the spring only acts on true overlap.
const CONTACT_MARGIN: f64 = 1e-3;
const SOLVER_PASSES: usize = 10;
/// Minimum |x| component of a tool contact normal for that contact to
/// count as one jaw of an axial pinch. Below it the surface is pressing
/// the item up or down, not along the push axis.
const AXIAL_NORMAL_MIN: f64 = 0.2;
/// Relaxation time for compression once an item is no longer pinched.
const SQUEEZE_RELAX_TAU: f64 = 0.05;
/// How deep the spoon rim's thin edge can indent a fragile item before
/// the material shears around the edge instead of compressing further
/// (half the rim thickness).
const RIM_BITE: f64 = 0.0015;
/// Fraction of a contact's remaining overlap that one step may convert
/// into separation speed. Keeps stiff-spring impulses from flinging
/// fresh contacts while still letting deep penetrations relax quickly.
const PENETRATION_RELAX: f64 = 0.02;
/// Velocity bleed rates for cradled items (two or more loaded contacts),
/// standing in for the micro-slip losses that stop real food from
/// rattling or pendulum-rolling forever. Free-rolling single-contact
/// items are not damped.
const CRADLE_LINEAR_RATE: f64 = 2.0;
const CRADLE_ANGULAR_RATE: f64 = 5.0;

/// What an item is touching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Surface {
    Plate,
    PusherFace,
    SpoonLip,
    SpoonBowl,
    OtherItem(u32),
}

impl Surface {
    pub fn tool_kind(self) -> Option<ToolKind> {
        match self {
            Surface::PusherFace => Some(ToolKind::Pusher),
            Surface::SpoonLip | Surface::SpoonBowl => Some(ToolKind::Scooper),
            _ => None,
        }
    }
}

/// One resolved contact from the most recent step. `normal` points in the
/// direction that pushes the item off the surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Contact {
    pub item: u32,
    pub surface: Surface,
    pub point: Vec2,
    pub normal: Vec2,
    pub penetration: f64,
    /// N, non-negative.
    pub normal_force: f64,
    /// N, signed along the contact tangent.
    pub tangent_force: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum PhysicsError {
    #[error("numerical blowup: item {item} at {speed:.2} m/s")]
    NumericalBlowup { item: u32, speed: f64 },
}

/// Where the mass is. The four buckets partition the spawn-time total.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MassAccount {
    pub in_spoon: f64,
    pub on_plate: f64,
    pub residue: f64,
    pub airborne: f64,
}

impl MassAccount {
    pub fn total(&self) -> f64 {
        self.in_spoon + self.on_plate + self.residue + self.airborne
    }
}

/// World-frame collision shape, with fragile compression applied.
#[derive(Debug, Clone)]
pub enum Collider {
    Disc { center: Vec2, radius: f64 },
    Poly { verts: Vec<Vec2> },
}

impl Collider {
    fn lowest_z(&self) -> f64 {
        match self {
            Collider::Disc { center, radius } => center.z - radius,
            Collider::Poly { verts } => verts.iter().map(|v| v.z).fold(f64::INFINITY, f64::min),
        }
    }

    /// Point containment, used by the renderers.
    pub fn contains(&self, p: Vec2) -> bool {
        match self {
            Collider::Disc { center, radius } => (p - *center).norm() <= *radius,
            Collider::Poly { verts } => crate::geom::point_in_convex_polygon(verts, p),
        }
    }

    /// Highest surface z at world x, if the shape spans that x.
    pub fn top_z_at(&self, x: f64) -> Option<f64> {
        match self {
            Collider::Disc { center, radius } => {
                let dx = x - center.x;
                if dx.abs() > *radius {
                    None
                } else {
                    Some(center.z + (radius * radius - dx * dx).sqrt())
                }
            }
            Collider::Poly { verts } => {
                let n = verts.len();
                let mut top = f64::NEG_INFINITY;
                for i in 0..n {
                    let a = verts[i];
                    let b = verts[(i + 1) % n];
                    if (a.x - x).abs() <= 1e-12 {
                        top = top.max(a.z);
                    } else if (a.x - x) * (b.x - x) <= 0.0 && (a.x - b.x).abs() > 1e-12 {
                        let t = (x - a.x) / (b.x - a.x);
                        top = top.max(a.z + t * (b.z - a.z));
                    }
                }
                if top.is_finite() {
                    Some(top)
                } else {
                    None
                }
            }
        }
    }
}

/// The item's world shape with its current compression applied.
pub fn item_shape(world: &WorldState, item: &FoodItem) -> Collider {
    build_collider(world, item, item.compression)
}

fn build_collider(world: &WorldState, item: &FoodItem, compression: f64) -> Collider {
    let class = world.class_of(item);
    match &class.shape {
        Shape::Disc { radius } => {
            // No shipped fragile class is a disc; compression (if any)
            // shrinks the radius uniformly.
            let r = (radius - compression / 2.0).max(radius * 0.1);
            Collider::Disc {
                center: item.pose.position,
                radius: r,
            }
        }
        shape => {
            let local = shape.local_polygon().expect("non-disc shape");
            let mut verts: Vec<Vec2> = local.iter().map(|v| item.pose.transform(*v)).collect();
            if compression > 0.0 {
                // Shorten along the world x (pusher-to-scooper) axis about
                // the centroid.
                let c = item.pose.position;
                let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
                for v in &verts {
                    lo = lo.min(v.x);
                    hi = hi.max(v.x);
                }
                let width = (hi - lo).max(1e-6);
                let factor = (1.0 - compression / width).max(0.1);
                for v in &mut verts {
                    v.x = c.x + (v.x - c.x) * factor;
                }
            }
            Collider::Poly { verts }
        }
    }
}

/// Contact candidate before force resolution.
struct Candidate {
    item_index: usize,
    /// Index of the other item for item-item contacts.
    other_index: Option<usize>,
    surface: Surface,
    point: Vec2,
    normal: Vec2,
    penetration: f64,
    stiffness: f64,
    friction: f64,
    /// Minimum normal impulse honored by the friction clamp: a squeezed
    /// item grips with at least its squeeze force.
    grip_floor: f64,
}

struct BodyDyn {
    inv_m: f64,
    inv_i: f64,
    velocity: Vec2,
    angular: f64,
    position: Vec2,
}

/// Advance the world by one fixed step. Tools move kinematically by their
/// commanded velocities; items respond to gravity and contacts.
pub fn step(world: &WorldState, dt: f64) -> Result<WorldState, PhysicsError> {
    let mut next = world.clone();
    step_in_place(&mut next, dt)?;
    Ok(next)
}

/// In-place variant used by the rollout loop.
pub fn step_in_place(world: &mut WorldState, dt: f64) -> Result<(), PhysicsError> {
    debug_assert!((dt - DT).abs() < 1e-12, "step expects the fixed 1/240 s dt");

    // Kinematic tool integration.
    let tools = &mut world.tools;
    tools.scooper.position += tools.scooper.velocity * dt;
    tools.scooper.pitch += tools.scooper.pitch_rate * dt;
    tools.pusher.position += tools.pusher.velocity * dt;
    tools.pusher.tilt =
        (tools.pusher.tilt + tools.pusher.tilt_rate * dt).clamp(0.0, 30f64.to_radians());

    // Fragile squeeze state. While opposed tool contacts hold an item on
    // the push axis (blade pressing one way, rim pressing back),
    // compression integrates the closure of the two jaws -- but the jaws
    // are not alike. The blade meets food face-on, so its advance
    // compresses the whole body without limit. The spoon rim meets food
    // edge-on: a thin edge indents only `RIM_BITE` deep before the
    // material shears around it, so rim advance past that converts to
    // body motion (the topple over the lip) instead of compression. The
    // compressed shape is what the contact solver sees, so the squeeze
    // stays force-balanced. The jaws let go when either contact drops or
    // turns off-axis -- the rim poking an item's bottom face instead of
    // its side means the item is riding over the lip, not pinched against
    // it -- and the spring then relaxes over `SQUEEZE_RELAX_TAU`,
    // re-inflating the item against whatever now supports it.
    let n_items = world.items.len();
    let mut squeezes: Vec<f64> = vec![0.0; n_items];
    let blade_advance = tools.pusher.velocity.x;
    let rim_advance = (-tools.scooper.velocity.x).max(0.0);
    let rim_relief = tools.scooper.velocity.x.max(0.0);
    for idx in 0..n_items {
        let item = &world.items[idx];
        let class = world.class_of(item);
        if !class.is_fragile() {
            continue;
        }
        let width = 2.0 * class.shape.half_width();
        let stiffness = class.compression_stiffness.unwrap_or(CONTACT_STIFFNESS);
        let id = item.id;
        let mut blade_push = false;
        let mut rim_push = false;
        for c in &world.contacts {
            if c.item != id || c.penetration < -CONTACT_MARGIN {
                continue;
            }
            match c.surface.tool_kind() {
                Some(ToolKind::Pusher) if c.normal.x >= AXIAL_NORMAL_MIN => blade_push = true,
                Some(ToolKind::Scooper) if c.normal.x <= -AXIAL_NORMAL_MIN => rim_push = true,
                _ => {}
            }
        }
        let item = &mut world.items[idx];
        if blade_push && rim_push {
            let bite = (rim_advance * dt).min((RIM_BITE - item.rim_bite).max(0.0));
            item.rim_bite += bite;
            let grow = (blade_advance - rim_relief) * dt + bite;
            item.compression = (item.compression + grow).clamp(0.0, 0.9 * width);
            squeezes[idx] = stiffness * item.compression;
        } else {
            let relax = (-dt / SQUEEZE_RELAX_TAU).exp();
            item.compression *= relax;
            item.rim_bite *= relax;
            if item.compression < 1e-6 {
                item.compression = 0.0;
                item.rim_bite = 0.0;
            }
        }
    }

    // Gravity.
    for item in &mut world.items {
        item.velocity.z -= GRAVITY * dt;
    }

    let colliders: Vec<Collider> = world
        .items
        .iter()
        .map(|item| build_collider(world, item, item.compression))
        .collect();

    let mut candidates = generate_contacts(world, &colliders, &squeezes, dt);

    // Resolve impulses.
    let mut bodies: Vec<BodyDyn> = world
        .items
        .iter()
        .map(|item| {
            let class = world.class_of(item);
            let m = item.current_mass.max(1e-9);
            let inertia = m * class.shape.unit_inertia();
            BodyDyn {
                inv_m: 1.0 / m,
                inv_i: 1.0 / inertia.max(1e-12),
                velocity: item.velocity,
                angular: item.angular_velocity,
                position: item.pose.position,
            }
        })
        .collect();

    let mut lambda_n: Vec<f64> = vec![0.0; candidates.len()];
    let mut lambda_t: Vec<f64> = vec![0.0; candidates.len()];
    for _ in 0..SOLVER_PASSES {
        for (ci, c) in candidates.iter().enumerate() {
            solve_contact(
                world,
                &mut bodies,
                c,
                &mut lambda_n[ci],
                &mut lambda_t[ci],
                dt,
            );
        }
    }

    // Cradled items bleed velocity toward the average motion of their
    // supports (see `CRADLE_LINEAR_RATE`).
    let mut support_count = vec![0usize; n_items];
    let mut support_vel = vec![Vec2::ZERO; n_items];
    for (ci, c) in candidates.iter().enumerate() {
        if lambda_n[ci] <= 1e-12 {
            continue;
        }
        support_count[c.item_index] += 1;
        support_vel[c.item_index] += surface_velocity(world, c, &bodies);
        if let Some(j) = c.other_index {
            let bi = &bodies[c.item_index];
            support_count[j] += 1;
            support_vel[j] += bi.velocity + (c.point - bi.position).perp() * bi.angular;
        }
    }
    for idx in 0..n_items {
        if support_count[idx] >= 2 {
            let target = support_vel[idx] * (1.0 / support_count[idx] as f64);
            let b = &mut bodies[idx];
            b.velocity += (target - b.velocity) * (CRADLE_LINEAR_RATE * dt);
            b.angular *= 1.0 - CRADLE_ANGULAR_RATE * dt;
        }
    }

    // Integrate items.
    for (idx, body) in bodies.iter().enumerate() {
        let item = &mut world.items[idx];
        item.velocity = body.velocity;
        item.angular_velocity = body.angular;
        item.pose.position += body.velocity * dt;
        item.pose.angle += body.angular * dt;
    }

    // Publish the contact list with forces; squeezed items report the
    // transmitted squeeze force on their tool contacts.
    let mut contacts: Vec<Contact> = Vec::with_capacity(candidates.len());
    for (ci, c) in candidates.drain(..).enumerate() {
        let mut normal_force = (lambda_n[ci] / dt).max(0.0);
        if c.surface.tool_kind().is_some() && squeezes[c.item_index] > 0.0 {
            normal_force = normal_force.max(squeezes[c.item_index] * c.normal.x.abs());
        }
        contacts.push(Contact {
            item: world.items[c.item_index].id,
            surface: c.surface,
            point: c.point,
            normal: c.normal,
            penetration: c.penetration,
            normal_force,
            tangent_force: lambda_t[ci] / dt,
        });
    }
    world.contacts = contacts;

    apply_breakage(world, &squeezes);
    apply_residue(world);

    world.time += dt;

    for item in &world.items {
        let speed = item.velocity.norm();
        if !speed.is_finite() || speed > BLOWUP_SPEED {
            return Err(PhysicsError::NumericalBlowup {
                item: item.id,
                speed,
            });
        }
    }
    Ok(())
}

fn generate_contacts(
    world: &WorldState,
    colliders: &[Collider],
    squeezes: &[f64],
    dt: f64,
) -> Vec<Candidate> {
    let tools = &world.tools;
    let face = tools.pusher.face_segment(&tools.geometry);
    let profile = tools.scooper.profile_world(&tools.geometry);
    let mut out = Vec::new();

    for (idx, item) in world.items.iter().enumerate() {
        let class = world.class_of(item);
        let collider = &colliders[idx];
        let mu = class.friction_mu;
        let grip = squeezes[idx] * dt;

        // Plate, unless the item is captured in the bowl: the spoon shell
        // then sits between the item and the plate, shadowing it.
        let captured = tools.scooper.contains(&tools.geometry, item.pose.position);
        if !captured {
            plate_contacts(idx, collider, &mut out, mu);
        }

        // Pusher blade.
        segment_contacts(
            idx,
            collider,
            face.0,
            face.1,
            Surface::PusherFace,
            CONTACT_STIFFNESS,
            mu,
            grip,
            &mut out,
        );

        // Spoon profile: segment 0 is the lip, the rest the bowl shell.
        for (si, seg) in profile.windows(2).enumerate() {
            let surface = if si == 0 {
                Surface::SpoonLip
            } else {
                Surface::SpoonBowl
            };
            segment_contacts(
                idx,
                collider,
                seg[0],
                seg[1],
                surface,
                CONTACT_STIFFNESS,
                mu,
                grip,
                &mut out,
            );
        }
    }

    // Item-item pairs, ascending.
    for i in 0..world.items.len() {
        for j in (i + 1)..world.items.len() {
            let mu = (world.class_of(&world.items[i]).friction_mu
                * world.class_of(&world.items[j]).friction_mu)
                .sqrt();
            pair_contacts(world, i, j, &colliders[i], &colliders[j], mu, &mut out);
        }
    }
    out
}

fn plate_contacts(idx: usize, collider: &Collider, out: &mut Vec<Candidate>, mu: f64) {
    match collider {
        Collider::Disc { center, radius } => {
            let pen = radius - center.z;
            if pen > -CONTACT_MARGIN && pen <= MAX_PLAUSIBLE_PENETRATION {
                out.push(Candidate {
                    item_index: idx,
                    other_index: None,
                    surface: Surface::Plate,
                    point: vec2(center.x, 0.0),
                    normal: vec2(0.0, 1.0),
                    penetration: pen,
                    stiffness: CONTACT_STIFFNESS,
                    friction: mu,
                    grip_floor: 0.0,
                });
            }
        }
        Collider::Poly { verts } => {
            for v in verts {
                let pen = -v.z;
                if pen > -CONTACT_MARGIN && pen <= MAX_PLAUSIBLE_PENETRATION {
                    out.push(Candidate {
                        item_index: idx,
                        other_index: None,
                        surface: Surface::Plate,
                        point: vec2(v.x, 0.0),
                        normal: vec2(0.0, 1.0),
                        penetration: pen,
                        stiffness: CONTACT_STIFFNESS,
                        friction: mu,
                        grip_floor: 0.0,
                    });
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn segment_contacts(
    idx: usize,
    collider: &Collider,
    a: Vec2,
    b: Vec2,
    surface: Surface,
    stiffness: f64,
    mu: f64,
    grip_floor: f64,
    out: &mut Vec<Candidate>,
) {
    let seg = b - a;
    let len2 = seg.dot(seg);
    if len2 <= 0.0 {
        return;
    }
    match collider {
        Collider::Disc { center, radius } => {
            let q = closest_point_on_segment(a, b, *center);
            let d = *center - q;
            let dist = d.norm();
            let pen = radius - dist;
            if pen > -CONTACT_MARGIN && pen <= MAX_PLAUSIBLE_PENETRATION {
                let normal = if dist > 1e-9 {
                    d * (1.0 / dist)
                } else {
                    seg.perp().normalized()
                };
                out.push(Candidate {
                    item_index: idx,
                    other_index: None,
                    surface,
                    point: q,
                    normal,
                    penetration: pen,
                    stiffness,
                    friction: mu,
                    grip_floor,
                });
            }
        }
        Collider::Poly { verts } => {
            // Separating-axis gate: a vertex below a facet's infinite
            // plane is not a contact unless the segment and polygon
            // really overlap on every axis (the segment normal and each
            // polygon edge normal). Without this, corners near a slanted
            // facet would report phantom depth before touching.
            let n_seg = seg.perp().normalized();
            let centroid =
                verts.iter().fold(Vec2::ZERO, |acc, v| acc + *v) * (1.0 / verts.len() as f64);
            let side = if (centroid - a).dot(n_seg) >= 0.0 {
                1.0
            } else {
                -1.0
            };
            let normal = n_seg * side;
            let mut min_overlap = f64::INFINITY;
            let mut axes: Vec<Vec2> = Vec::with_capacity(verts.len() + 1);
            axes.push(normal);
            let n = verts.len();
            for i in 0..n {
                axes.push(-(verts[(i + 1) % n] - verts[i]).perp().normalized());
            }
            for axis in &axes {
                let (mut s_lo, mut s_hi) = (f64::INFINITY, f64::NEG_INFINITY);
                for p in [a, b] {
                    let d = p.dot(*axis);
                    s_lo = s_lo.min(d);
                    s_hi = s_hi.max(d);
                }
                let (mut p_lo, mut p_hi) = (f64::INFINITY, f64::NEG_INFINITY);
                for v in verts {
                    let d = v.dot(*axis);
                    p_lo = p_lo.min(d);
                    p_hi = p_hi.max(d);
                }
                let overlap = s_hi.min(p_hi) - s_lo.max(p_lo);
                if overlap < -CONTACT_MARGIN {
                    return;
                }
                min_overlap = min_overlap.min(overlap);
            }
            let pen_cap = (min_overlap + CONTACT_MARGIN).min(MAX_PLAUSIBLE_PENETRATION);
            for v in verts {
                let t = (*v - a).dot(seg) / len2;
                if !(0.0..=1.0).contains(&t) {
                    continue;
                }
                let pen = -(*v - a).dot(normal);
                if pen > -CONTACT_MARGIN && pen <= pen_cap {
                    out.push(Candidate {
                        item_index: idx,
                        other_index: None,
                        surface,
                        point: *v,
                        normal,
                        penetration: pen,
                        stiffness,
                        friction: mu,
                        grip_floor,
                    });
                }
            }
            // Segment endpoints poking into the polygon (lip tip, blade
            // corners).
            for endpoint in [a, b] {
                if let Some((pen, edge_normal)) = point_depth_in_poly(verts, endpoint) {
                    if pen > 0.0 && pen <= MAX_PLAUSIBLE_PENETRATION {
                        out.push(Candidate {
                            item_index: idx,
                            other_index: None,
                            surface,
                            point: endpoint,
                            // Push the item backward off the endpoint.
                            normal: -edge_normal,
                            penetration: pen,
                            stiffness,
                            friction: mu,
                            grip_floor,
                        });
                    }
                }
            }
        }
    }
}

/// Depth of `p` inside the convex polygon and the outward normal of the
/// nearest edge; `None` if outside.
fn point_depth_in_poly(verts: &[Vec2], p: Vec2) -> Option<(f64, Vec2)> {
    let n = verts.len();
    let mut best = f64::INFINITY;
    let mut best_normal = Vec2::ZERO;
    for i in 0..n {
        let a = verts[i];
        let b = verts[(i + 1) % n];
        let outward = -(b - a).perp().normalized();
        let depth = -(p - a).dot(outward);
        if depth < 0.0 {
            return None;
        }
        if depth < best {
            best = depth;
            best_normal = outward;
        }
    }
    Some((best, best_normal))
}

fn pair_contacts(
    world: &WorldState,
    i: usize,
    j: usize,
    ca: &Collider,
    cb: &Collider,
    mu: f64,
    out: &mut Vec<Candidate>,
) {
    let other_id = world.items[j].id;
    let surface = Surface::OtherItem(other_id);
    match (ca, cb) {
        (
            Collider::Disc {
                center: c1,
                radius: r1,
            },
            Collider::Disc {
                center: c2,
                radius: r2,
            },
        ) => {
            let d = *c1 - *c2;
            let dist = d.norm();
            let pen = r1 + r2 - dist;
            if pen > -CONTACT_MARGIN && pen <= MAX_PLAUSIBLE_PENETRATION {
                let normal = if dist > 1e-9 {
                    d * (1.0 / dist)
                } else {
                    vec2(0.0, 1.0)
                };
                out.push(Candidate {
                    item_index: i,
                    other_index: Some(j),
                    surface,
                    point: *c2 + normal * *r2,
                    normal,
                    penetration: pen,
                    stiffness: CONTACT_STIFFNESS,
                    friction: mu,
                    grip_floor: 0.0,
                });
            }
        }
        (Collider::Disc { center, radius }, Collider::Poly { verts }) => {
            if let Some(c) = disc_poly_contact(i, Some(j), surface, *center, *radius, verts, mu) {
                out.push(c);
            }
        }
        (Collider::Poly { verts }, Collider::Disc { center, radius }) => {
            // Generate from the disc's perspective, then flip roles.
            if let Some(mut c) = disc_poly_contact(j, Some(i), surface, *center, *radius, verts, mu)
            {
                c.item_index = i;
                c.other_index = Some(j);
                c.normal = -c.normal;
                out.push(c);
            }
        }
        (Collider::Poly { verts: va }, Collider::Poly { verts: vb }) => {
            // Shallow-contact approximation: vertices of each inside the
            // other.
            for v in va {
                if let Some((pen, edge_normal)) = point_depth_in_poly(vb, *v) {
                    if pen > 0.0 && pen <= MAX_PLAUSIBLE_PENETRATION {
                        out.push(Candidate {
                            item_index: i,
                            other_index: Some(j),
                            surface,
                            point: *v,
                            normal: edge_normal,
                            penetration: pen,
                            stiffness: CONTACT_STIFFNESS,
                            friction: mu,
                            grip_floor: 0.0,
                        });
                    }
                }
            }
            for v in vb {
                if let Some((pen, edge_normal)) = point_depth_in_poly(va, *v) {
                    if pen > 0.0 && pen <= MAX_PLAUSIBLE_PENETRATION {
                        out.push(Candidate {
                            item_index: i,
                            other_index: Some(j),
                            surface,
                            point: *v,
                            normal: -edge_normal,
                            penetration: pen,
                            stiffness: CONTACT_STIFFNESS,
                            friction: mu,
                            grip_floor: 0.0,
                        });
                    }
                }
            }
        }
    }
}

fn disc_poly_contact(
    disc_index: usize,
    other_index: Option<usize>,
    surface: Surface,
    center: Vec2,
    radius: f64,
    verts: &[Vec2],
    mu: f64,
) -> Option<Candidate> {
    // Closest boundary point to the disc center.
    let n = verts.len();
    let mut best_q = verts[0];
    let mut best_d2 = f64::INFINITY;
    for i in 0..n {
        let q = closest_point_on_segment(verts[i], verts[(i + 1) % n], center);
        let d2 = (center - q).dot(center - q);
        if d2 < best_d2 {
            best_d2 = d2;
            best_q = q;
        }
    }
    let inside = point_depth_in_poly(verts, center).is_some();
    let dist = best_d2.sqrt();
    let (pen, normal) = if inside {
        (radius + dist, (best_q - center).normalized())
    } else {
        (radius - dist, (center - best_q).normalized())
    };
    if pen > -CONTACT_MARGIN && pen <= MAX_PLAUSIBLE_PENETRATION && normal.norm() > 0.5 {
        Some(Candidate {
            item_index: disc_index,
            other_index,
            surface,
            point: best_q,
            normal,
            penetration: pen,
            stiffness: CONTACT_STIFFNESS,
            friction: mu,
            grip_floor: 0.0,
        })
    } else {
        None
    }
}

fn surface_velocity(world: &WorldState, c: &Candidate, bodies: &[BodyDyn]) -> Vec2 {
    match c.surface {
        Surface::Plate => Vec2::ZERO,
        Surface::PusherFace => world.tools.pusher.point_velocity(c.point),
        Surface::SpoonLip | Surface::SpoonBowl => world.tools.scooper.point_velocity(c.point),
        Surface::OtherItem(_) => {
            let j = c.other_index.expect("item contact carries other index");
            let b = &bodies[j];
            b.velocity + (c.point - b.position).perp() * b.angular
        }
    }
}

/// One Gauss-Seidel visit: implicit spring-damper along the normal, then
/// Coulomb-clamped tangential impulse.
fn solve_contact(
    world: &WorldState,
    bodies: &mut [BodyDyn],
    c: &Candidate,
    lambda_n: &mut f64,
    lambda_t: &mut f64,
    dt: f64,
) {
    let i = c.item_index;
    let n = c.normal;
    let t = n.perp();

    let (inv_m_i, inv_i_i, r_i) = {
        let b = &bodies[i];
        (b.inv_m, b.inv_i, c.point - b.position)
    };
    let (inv_m_j, inv_i_j, r_j) = match c.other_index {
        Some(j) => {
            let b = &bodies[j];
            (b.inv_m, b.inv_i, c.point - b.position)
        }
        None => (0.0, 0.0, Vec2::ZERO),
    };

    let w_n = inv_m_i + inv_i_i * r_i.cross(n).powi(2) + inv_m_j + inv_i_j * r_j.cross(n).powi(2);
    let w_t = inv_m_i + inv_i_i * r_i.cross(t).powi(2) + inv_m_j + inv_i_j * r_j.cross(t).powi(2);
    if w_n <= 0.0 {
        return;
    }

    let rel_at = |bodies: &[BodyDyn]| -> Vec2 {
        let bi = &bodies[i];
        let vi = bi.velocity + (c.point - bi.position).perp() * bi.angular;
        vi - surface_velocity(world, c, bodies)
    };

    // Normal: solve the implicit spring-damper for the total impulse.
    let vn = rel_at(bodies).dot(n);
    let m_eff = 1.0 / w_n;
    let damping = 2.0 * DAMPING_RATIO * (c.stiffness * m_eff).sqrt();
    let beta = dt * (c.stiffness * dt + damping);
    // Spring force needs true overlap; within the approach margin only
    // the damper acts.
    let overlap = c.penetration.max(0.0);
    // Backward-Euler impulse: its fixed point is the exact resting
    // equilibrium (penetration m*g/k under load), but it overshoots hard
    // on fresh transients because the stiff spring covers several
    // natural periods per step.
    let implicit =
        (dt * c.stiffness * overlap - beta * vn + beta * w_n * *lambda_n) / (1.0 + beta * w_n);
    // The stiff spring covers several natural periods per step, so the
    // raw impulse would fling fresh contacts apart. Cap the separation
    // speed it may impart: at most a fixed fraction of the remaining
    // overlap per step. Deep penetrations still relax (geometrically,
    // within a few dozen steps) while resting contacts are unaffected,
    // since their equilibrium impulse needs no separation speed at all.
    let v_out = PENETRATION_RELAX * overlap / dt;
    let cap = *lambda_n + (v_out - vn) / w_n;
    let total = implicit.min(cap).max(0.0);
    let delta_n = total - *lambda_n;
    *lambda_n = total;
    apply_impulse(bodies, i, c.other_index, n * delta_n, c.point);

    // Tangent: drive relative sliding to zero within the friction cone.
    if w_t <= 0.0 {
        return;
    }
    let vt = rel_at(bodies).dot(t);
    let target = *lambda_t - vt / w_t;
    let limit = c.friction * (*lambda_n).max(c.grip_floor);
    let clamped = target.clamp(-limit, limit);
    let delta_t = clamped - *lambda_t;
    *lambda_t = clamped;
    apply_impulse(bodies, i, c.other_index, t * delta_t, c.point);
}

fn apply_impulse(bodies: &mut [BodyDyn], i: usize, j: Option<usize>, impulse: Vec2, point: Vec2) {
    {
        let b = &mut bodies[i];
        b.velocity += impulse * b.inv_m;
        b.angular += (point - b.position).cross(impulse) * b.inv_i;
    }
    if let Some(j) = j {
        let b = &mut bodies[j];
        b.velocity += -impulse * b.inv_m;
        b.angular -= (point - b.position).cross(impulse) * b.inv_i;
    }
}

/// Break over-squeezed items: mark broken, split off a fragment.
fn apply_breakage(world: &mut WorldState, squeezes: &[f64]) {
    let n = world.items.len();
    for idx in 0..n {
        let item = &world.items[idx];
        if item.broken {
            continue;
        }
        let class = world.class_of(item).clone();
        let squeeze = if class.is_fragile() {
            squeezes[idx]
        } else {
            robust_squeeze(world, item.id)
        };
        if squeeze <= class.break_force {
            continue;
        }

        let fragment_id = world.next_item_id;
        world.next_item_id += 1;
        let parent = &mut world.items[idx];
        parent.broken = true;
        let fragment_mass = world.params.fragment_fraction * parent.current_mass;
        parent.current_mass -= fragment_mass;

        // The fragment lands on the plate just behind the pusher blade,
        // where the sweep has already cleared space; anywhere nearer would
        // overlap the parent still held in the wedge.
        let parent_class = class.name.clone();
        let frag_radius = (class.shape.area() * world.params.fragment_fraction
            / std::f64::consts::PI)
            .sqrt()
            .max(1e-4);
        let face_x = world.tools.pusher.position.x;
        let fragment = FoodItem {
            id: fragment_id,
            class: parent_class,
            pose: crate::geom::Pose::new(vec2(face_x - frag_radius - 0.001, frag_radius), 0.0),
            velocity: Vec2::ZERO,
            angular_velocity: 0.0,
            current_mass: fragment_mass,
            compression: 0.0,
            rim_bite: 0.0,
            broken: true,
            fragment_of: Some(world.items[idx].id),
        };
        // Fragments collide as discs of equivalent fractional area.
        let mut frag_class = class.clone();
        frag_class.shape = Shape::Disc {
            radius: frag_radius,
        };
        frag_class.name = format!("{}#fragment", class.name);
        let fragment = FoodItem {
            class: frag_class.name.clone(),
            ..fragment
        };
        world.classes.insert(frag_class.name.clone(), frag_class);

        let event = BreakEvent {
            time: world.time,
            item: world.items[idx].id,
            fragment: fragment_id,
            squeeze,
        };
        world.items.push(fragment);
        world.events.push(event);
    }
}

/// Update item-tool contact episodes and shed sticky residue on
/// separation after a firm episode.
fn apply_residue(world: &mut WorldState) {
    use std::collections::BTreeMap;
    let mut force_by_pair: BTreeMap<(u32, ToolKind), f64> = BTreeMap::new();
    for c in &world.contacts {
        // Proximity entries with no load do not open an episode.
        if c.normal_force <= 1e-9 {
            continue;
        }
        if let Some(kind) = c.surface.tool_kind() {
            *force_by_pair.entry((c.item, kind)).or_insert(0.0) += c.normal_force;
        }
    }
    let ids: Vec<u32> = world.items.iter().map(|i| i.id).collect();
    for id in ids {
        for kind in [ToolKind::Pusher, ToolKind::Scooper] {
            let force = force_by_pair.get(&(id, kind)).copied();
            let episode = world
                .episodes
                .entry((id, kind))
                .or_insert_with(ContactEpisode::default);
            match force {
                Some(f) => {
                    episode.in_contact = true;
                    episode.peak_force = episode.peak_force.max(f);
                }
                None => {
                    if episode.in_contact {
                        let fired = episode.peak_force > RESIDUE_FORCE_THRESHOLD;
                        *episode = ContactEpisode::default();
                        if fired {
                            let item = world
                                .items
                                .iter_mut()
                                .find(|i| i.id == id)
                                .expect("episode item exists");
                            let stickiness = world.classes[&item.class].stickiness;
                            if stickiness > 0.0 && item.current_mass > 0.0 {
                                let shed = stickiness * item.current_mass;
                                item.current_mass -= shed;
                                world.residue_mass += shed;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Squeeze force on an item (N): for fragile items the compression-spring
/// force; for robust items the weaker of the two opposing tool-side
/// contact forces projected on the pusher-to-scooper axis. Zero unless the
/// item touches both tools.
pub fn squeeze_force(world: &WorldState, item_id: u32) -> f64 {
    let Some(item) = world.item(item_id) else {
        return 0.0;
    };
    let class = world.class_of(item);
    if class.is_fragile() {
        return class.compression_stiffness.unwrap_or(CONTACT_STIFFNESS) * item.compression;
    }
    robust_squeeze(world, item_id)
}

fn robust_squeeze(world: &WorldState, item_id: u32) -> f64 {
    let mut pusher_side = 0.0;
    let mut spoon_side = 0.0;
    for c in &world.contacts {
        if c.item != item_id {
            continue;
        }
        match c.surface.tool_kind() {
            Some(ToolKind::Pusher) => pusher_side += c.normal_force * c.normal.x.abs(),
            Some(ToolKind::Scooper) => spoon_side += c.normal_force * c.normal.x.abs(),
            None => {}
        }
    }
    if pusher_side > 0.0 && spoon_side > 0.0 {
        pusher_side.min(spoon_side)
    } else {
        0.0
    }
}

/// Contacts resolved by the most recent step.
pub fn contact_set(world: &WorldState) -> &[Contact] {
    &world.contacts
}

/// Net contact reaction on the pusher blade (N).
pub fn pusher_reaction(world: &WorldState) -> Vec2 {
    let mut f = Vec2::ZERO;
    for c in &world.contacts {
        if c.surface == Surface::PusherFace {
            f += -(c.normal * c.normal_force + c.normal.perp() * c.tangent_force);
        }
    }
    f
}

/// Partition current mass into spoon / plate / residue / airborne buckets.
pub fn mass_accounting(world: &WorldState) -> MassAccount {
    let mut account = MassAccount {
        residue: world.residue_mass,
        ..Default::default()
    };
    for item in &world.items {
        let collider = build_collider(world, item, item.compression);
        if world
            .tools
            .scooper
            .contains(&world.tools.geometry, item.pose.position)
        {
            account.in_spoon += item.current_mass;
        } else if collider.lowest_z() <= 0.003 {
            account.on_plate += item.current_mass;
        } else {
            account.airborne += item.current_mass;
        }
    }
    account
}

/// Mass currently captured by the spoon (kg).
pub fn in_spoon_mass(world: &WorldState) -> f64 {
    mass_accounting(world).in_spoon
}
