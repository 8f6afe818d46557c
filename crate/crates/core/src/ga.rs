//! Image-source geometrical acoustics: mirror-image enumeration over face
//! planes, specular-path visibility validation, the low-order-reflection
//! (LoR) renderer, and a high-order rectangular-room reference simulator.
//!
//! All arrivals are encoded as first-order Ambisonics A-format with 1/r
//! spherical spreading and broadband amplitude equal to the arithmetic mean
//! of the per-band reflection gains (low-order paths touch at most a few
//! walls, so the band spread is small; per-arrival band filtering is
//! deliberately out of scope).

use crate::ambisonic::{encode_contribution, AmbisonicError, AmbisonicIR, SINC_HALF_WIDTH};
use crate::bands::N_BANDS;
use crate::geom::{mirror_point, ray_triangle, Vec3};
use crate::scene::{as_shoebox, PositionPair, SceneGraph};
use crate::SPEED_OF_SOUND;
use rayon::prelude::*;
use std::collections::HashMap;
use thiserror::Error;

/// Maximum reflection order supported by the general-mesh mirror enumerator.
/// Beyond this the candidate count (F^order) is intractable anyway; use
/// [`simulate_reference`] for high-order rectangular rooms.
pub const MAX_MIRROR_ORDER: usize = 8;

/// Maximum order accepted by [`simulate_reference`].
pub const MAX_REFERENCE_ORDER: usize = 40;

#[derive(Debug, Error)]
pub enum GaError {
    #[error("source position {0:?} is outside the scene bounding box")]
    SourceOutsideScene(Vec3),
    #[error("listener position {0:?} is outside the scene bounding box")]
    ListenerOutsideScene(Vec3),
    #[error("source and listener coincide")]
    CoincidentPair,
    #[error("mirror enumeration order {0} exceeds the supported maximum {MAX_MIRROR_ORDER}")]
    OrderTooHigh(usize),
    #[error("reference order {0} exceeds the supported maximum {MAX_REFERENCE_ORDER}")]
    ReferenceOrderTooHigh(usize),
    #[error("scene is not an axis-aligned 12-triangle shoebox")]
    NotAShoebox,
    #[error("impulse response length {got} too short: arrival at {needed:.2} samples")]
    LengthTooShort { needed: f64, got: usize },
    #[error(transparent)]
    Encode(#[from] AmbisonicError),
}

/// A virtual (mirror-image) source.
///
/// `face_path` holds one representative face index per reflecting plane, in
/// mirror order from the true source outward; `band_gains` is the product of
/// those faces' per-band reflectivities. Path validation may later replace
/// the representatives with the member faces actually hit.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSource {
    pub position: Vec3,
    pub order: usize,
    pub band_gains: [f64; N_BANDS],
    pub face_path: Vec<usize>,
}

/// Reflection order bound for LoR rendering (default 2).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LorOrder(pub usize);

impl Default for LorOrder {
    fn default() -> Self {
        LorOrder(2)
    }
}

/// A validated specular path.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedPath {
    /// Reflection points in source-to-listener order (empty for order 0).
    pub points: Vec<Vec3>,
    /// Face actually hit at each reflection point.
    pub faces_hit: Vec<usize>,
    /// Total propagation distance source → reflections → listener, meters.
    pub length: f64,
}

/// Maximal set of edge-connected, coplanar, same-orientation faces; the
/// mirror operation is identical for every member, so the group is the unit
/// of image enumeration. Disconnected coplanar panels stay distinct groups.
#[derive(Debug, Clone)]
pub struct PlaneGroup {
    pub normal: Vec3,
    /// A point on the plane (first vertex of the representative face; using
    /// an input vertex rather than a derived centroid keeps the mirror
    /// arithmetic free of extra rounding).
    pub point: Vec3,
    pub faces: Vec<usize>,
    /// Lowest member face index; stands in for the group in image paths.
    pub representative: usize,
}

/// Partition of scene faces into mirror plane groups.
#[derive(Debug, Clone)]
pub struct PlaneGroupSet {
    pub groups: Vec<PlaneGroup>,
    pub face_to_group: Vec<usize>,
}

/// Group faces into mirror planes: flood-fill the adjacency graph across
/// edges whose two faces are coplanar with matching orientation.
pub fn plane_groups(scene: &SceneGraph) -> PlaneGroupSet {
    let n = scene.n_faces();
    let scale = scene.bounding_box.diagonal().max(1e-12);
    let coplanar = |i: usize, j: usize| {
        let (fi, fj) = (&scene.faces[i], &scene.faces[j]);
        fi.normal.dot(fj.normal) > 1.0 - 1e-9
            && (fj.centroid - fi.centroid).dot(fi.normal).abs() < 1e-9 * scale
    };
    let mut group_of = vec![usize::MAX; n];
    let mut groups: Vec<PlaneGroup> = Vec::new();
    for start in 0..n {
        if group_of[start] != usize::MAX {
            continue;
        }
        let gid = groups.len();
        let mut members = vec![start];
        group_of[start] = gid;
        let mut stack = vec![start];
        while let Some(f) = stack.pop() {
            for j in 0..n {
                if scene.adjacent(f, j) && group_of[j] == usize::MAX && coplanar(f, j) {
                    group_of[j] = gid;
                    members.push(j);
                    stack.push(j);
                }
            }
        }
        members.sort_unstable();
        let rep = members[0];
        groups.push(PlaneGroup {
            normal: scene.faces[rep].normal,
            point: scene.faces[rep].vertices[0],
            faces: members,
            representative: rep,
        });
    }
    PlaneGroupSet { groups, face_to_group: group_of }
}

/// Quantized position key for image deduplication (nanometer resolution).
fn pos_key(p: Vec3) -> [i64; 3] {
    [(p.x * 1e9).round() as i64, (p.y * 1e9).round() as i64, (p.z * 1e9).round() as i64]
}

/// Enumerate mirror-image sources up to `max_order`.
///
/// Two candidates are the same image iff they share order, position, and
/// the *multiset* of reflecting planes (mirrors across mutually orthogonal
/// planes commute, and exactly one of the orderings can embody a physical
/// path for a given listener). Duplicate positions arising from genuinely
/// distinct plane sets — e.g. separate coplanar panels — are retained.
pub fn enumerate_image_sources(
    scene: &SceneGraph,
    source: Vec3,
    max_order: usize,
) -> Result<Vec<ImageSource>, GaError> {
    let groups = plane_groups(scene);
    enumerate_with_groups(scene, &groups, source, max_order)
}

pub(crate) fn enumerate_with_groups(
    scene: &SceneGraph,
    groups: &PlaneGroupSet,
    source: Vec3,
    max_order: usize,
) -> Result<Vec<ImageSource>, GaError> {
    if !scene.bounding_box.contains_with_margin(source, 0.0) {
        return Err(GaError::SourceOutsideScene(source));
    }
    if max_order > MAX_MIRROR_ORDER {
        return Err(GaError::OrderTooHigh(max_order));
    }

    // Image under construction: position + plane-group path (mirror order).
    struct Cand {
        position: Vec3,
        path: Vec<u32>,
    }

    let mut out: Vec<ImageSource> = vec![ImageSource {
        position: source,
        order: 0,
        band_gains: [1.0; N_BANDS],
        face_path: Vec::new(),
    }];
    let mut frontier = vec![Cand { position: source, path: Vec::new() }];
    let scale = scene.bounding_box.diagonal().max(1e-12);

    for _order in 1..=max_order {
        // Dedupe key: (sorted plane-group multiset, quantized position).
        let mut seen: HashMap<(Vec<u32>, [i64; 3]), ()> = HashMap::new();
        let mut next = Vec::new();
        for cand in &frontier {
            let last = cand.path.last().copied();
            for (gid, group) in groups.groups.iter().enumerate() {
                let gid = gid as u32;
                if last == Some(gid) {
                    continue; // consecutive mirrors across one plane cancel
                }
                // Only mirror images lying strictly on the reflective side.
                let side = (cand.position - group.point).dot(group.normal);
                if side <= 1e-12 * scale {
                    continue;
                }
                let pos = mirror_point(cand.position, group.point, group.normal);
                let mut multiset = cand.path.clone();
                multiset.push(gid);
                multiset.sort_unstable();
                if seen.insert((multiset, pos_key(pos)), ()).is_some() {
                    continue;
                }
                let mut path = cand.path.clone();
                path.push(gid);
                next.push(Cand { position: pos, path });
            }
        }
        for cand in &next {
            let mut gains = [1.0; N_BANDS];
            for &gid in &cand.path {
                let rep = groups.groups[gid as usize].representative;
                for b in 0..N_BANDS {
                    gains[b] *= scene.faces[rep].reflectivity[b];
                }
            }
            out.push(ImageSource {
                position: cand.position,
                order: cand.path.len(),
                band_gains: gains,
                face_path: cand.path.iter().map(|&g| groups.groups[g as usize].representative).collect(),
            });
        }
        frontier = next;
    }

    out.sort_by(|a, b| {
        (a.order, pos_key(a.position), &a.face_path).cmp(&(b.order, pos_key(b.position), &b.face_path))
    });
    Ok(out)
}

/// Test a segment for occlusion; `skip_groups` are the plane groups forming
/// the segment endpoints (a plane cannot re-intersect a segment that ends on
/// it).
fn segment_occluded(
    scene: &SceneGraph,
    groups: &PlaneGroupSet,
    from: Vec3,
    to: Vec3,
    skip_groups: [Option<usize>; 2],
) -> bool {
    let dir = to - from;
    for (f, face) in scene.faces.iter().enumerate() {
        let g = groups.face_to_group[f];
        if skip_groups.iter().flatten().any(|&s| s == g) {
            continue;
        }
        if let Some(t) = ray_triangle(from, dir, &face.vertices) {
            if t > 1e-7 && t < 1.0 - 1e-7 {
                return true;
            }
        }
    }
    false
}

/// Validate one image source against a listener: unfold the reflection path
/// backward from the listener, requiring each leg to hit a member face of
/// its mirror plane head-on and every leg to be unoccluded.
///
/// The stored mirror sequence fixes the plane *multiset* but (because
/// commuting mirrors collapse at enumeration) not necessarily the physical
/// reflection order, so every ordering of the sequence is tried; at most one
/// can unfold consistently. Rejection is a value, not an error.
pub fn check_visibility(
    scene: &SceneGraph,
    image: &ImageSource,
    listener: Vec3,
) -> Option<ValidatedPath> {
    let groups = plane_groups(scene);
    check_visibility_with_groups(scene, &groups, image, listener)
}

pub(crate) fn check_visibility_with_groups(
    scene: &SceneGraph,
    groups: &PlaneGroupSet,
    image: &ImageSource,
    listener: Vec3,
) -> Option<ValidatedPath> {
    if image.order == 0 {
        if segment_occluded(scene, groups, listener, image.position, [None, None]) {
            return None;
        }
        return Some(ValidatedPath {
            points: Vec::new(),
            faces_hit: Vec::new(),
            length: listener.dist(image.position),
        });
    }
    let path_groups: Vec<usize> =
        image.face_path.iter().map(|&f| groups.face_to_group[f]).collect();
    // Recover the true source by unmirroring through the stored sequence
    // (mirrors invert in reverse application order).
    let mut source = image.position;
    for &g in path_groups.iter().rev() {
        let gr = &groups.groups[g];
        source = mirror_point(source, gr.point, gr.normal);
    }
    let mut ordering: Vec<usize> = (0..path_groups.len()).collect();
    let mut found = None;
    permutations(&mut ordering, 0, &mut |perm| {
        if found.is_some() {
            return;
        }
        let seq: Vec<usize> = perm.iter().map(|&i| path_groups[i]).collect();
        if let Some(v) = try_unfold(scene, groups, &seq, source, image.position, listener) {
            found = Some(v);
        }
    });
    found
}

/// Attempt the backward unfolding for one concrete plane ordering
/// (source-side first). Returns the validated path on success.
fn try_unfold(
    scene: &SceneGraph,
    groups: &PlaneGroupSet,
    seq: &[usize],
    source: Vec3,
    image_position: Vec3,
    listener: Vec3,
) -> Option<ValidatedPath> {
    let k = seq.len();
    // Forward mirror images I_0..I_k of the true source under this trial
    // ordering. Orderings of non-commuting mirrors land elsewhere than the
    // enumerated image and are rejected outright.
    let mut images = Vec::with_capacity(k + 1);
    images.push(source);
    let mut p = source;
    for &g in seq {
        let gr = &groups.groups[g];
        p = mirror_point(p, gr.point, gr.normal);
        images.push(p);
    }
    if images[k].dist(image_position) > 1e-6 {
        return None;
    }

    let mut points_rev: Vec<Vec3> = Vec::with_capacity(k);
    let mut faces_rev: Vec<usize> = Vec::with_capacity(k);
    let mut cursor = listener;
    let mut cursor_group: Option<usize> = None;
    for i in (1..=k).rev() {
        let g = seq[i - 1];
        let group = &groups.groups[g];
        let target = images[i];
        let dir = target - cursor;
        // Approach the plane from its reflective (front) side.
        if dir.dot(group.normal) >= 0.0 {
            return None;
        }
        let mut hit: Option<(f64, usize)> = None;
        for &f in &group.faces {
            if let Some(t) = ray_triangle(cursor, dir, &scene.faces[f].vertices) {
                if t < 1.0 && hit.map_or(true, |(bt, _)| t < bt) {
                    hit = Some((t, f));
                }
            }
        }
        let (t, face) = hit?;
        let point = cursor + dir * t;
        if segment_occluded(scene, groups, cursor, point, [cursor_group, Some(g)]) {
            return None;
        }
        points_rev.push(point);
        faces_rev.push(face);
        cursor = point;
        cursor_group = Some(g);
    }
    if segment_occluded(scene, groups, cursor, images[0], [cursor_group, None]) {
        return None;
    }
    points_rev.reverse();
    faces_rev.reverse();
    Some(ValidatedPath {
        points: points_rev,
        faces_hit: faces_rev,
        length: listener.dist(image_position),
    })
}

/// Visit every permutation of `items[k..]` in place.
fn permutations<F: FnMut(&[usize])>(items: &mut Vec<usize>, k: usize, visit: &mut F) {
    let n = items.len();
    if k + 1 >= n {
        visit(items);
        return;
    }
    for i in k..n {
        items.swap(k, i);
        permutations(items, k + 1, visit);
        items.swap(k, i);
    }
}

/// One validated, renderable arrival.
#[derive(Debug, Clone)]
struct Arrival {
    order: usize,
    faces_hit: Vec<usize>,
    delay_samples: f64,
    amplitude: f64,
    direction: Vec3,
}

fn validate_pair(scene: &SceneGraph, pair: &PositionPair) -> Result<(), GaError> {
    if !scene.bounding_box.contains_with_margin(pair.source, 0.0) {
        return Err(GaError::SourceOutsideScene(pair.source));
    }
    if !scene.bounding_box.contains_with_margin(pair.listener, 0.0) {
        return Err(GaError::ListenerOutsideScene(pair.listener));
    }
    if pair.source.dist(pair.listener) < 1e-12 {
        return Err(GaError::CoincidentPair);
    }
    Ok(())
}

fn encode_arrivals(
    mut arrivals: Vec<Arrival>,
    sample_rate: u32,
    length: Option<usize>,
) -> Result<AmbisonicIR, GaError> {
    arrivals.sort_by(|a, b| {
        (a.order, &a.faces_hit, (a.delay_samples * 1e6).round() as i64).cmp(&(
            b.order,
            &b.faces_hit,
            (b.delay_samples * 1e6).round() as i64,
        ))
    });
    let max_delay = arrivals.iter().fold(0.0f64, |m, a| m.max(a.delay_samples));
    let len = match length {
        Some(l) => {
            if max_delay >= l as f64 {
                return Err(GaError::LengthTooShort { needed: max_delay, got: l });
            }
            l
        }
        None => max_delay.ceil() as usize + SINC_HALF_WIDTH + 1,
    };
    let mut ir = AmbisonicIR::new_a_format(len, sample_rate);
    for a in &arrivals {
        encode_contribution(&mut ir, a.direction, a.amplitude, a.delay_samples)?;
    }
    Ok(ir)
}

/// Render the low-order reflections (direct sound plus specular reflections
/// up to order `n_o.0`) of a scene as an A-format impulse response.
///
/// Every enumerated image is validated against the listener; band gains are
/// recomputed from the member faces actually hit. Arrival amplitude is
/// `mean(band_gains) / path_length`, delay is `path_length / c · fs`, and
/// the arrival direction is the unit vector from the listener toward the
/// image (collinear with the last reflection point). With `length = None`
/// the impulse response is sized to fit the latest arrival.
pub fn compute_lor(
    scene: &SceneGraph,
    pair: &PositionPair,
    n_o: LorOrder,
    sample_rate: u32,
    length: Option<usize>,
) -> Result<AmbisonicIR, GaError> {
    validate_pair(scene, pair)?;
    let groups = plane_groups(scene);
    let images = enumerate_with_groups(scene, &groups, pair.source, n_o.0)?;
    let fs = sample_rate as f64;
    let arrivals: Vec<Arrival> = images
        .par_iter()
        .filter_map(|img| {
            let v = check_visibility_with_groups(scene, &groups, img, pair.listener)?;
            let mut gains = [1.0; N_BANDS];
            for &f in &v.faces_hit {
                for b in 0..N_BANDS {
                    gains[b] *= scene.faces[f].reflectivity[b];
                }
            }
            let broadband = gains.iter().sum::<f64>() / N_BANDS as f64;
            let direction = (img.position - pair.listener).normalized()?;
            Some(Arrival {
                order: img.order,
                faces_hit: v.faces_hit,
                delay_samples: v.length / SPEED_OF_SOUND * fs,
                amplitude: broadband / v.length,
                direction,
            })
        })
        .collect();
    encode_arrivals(arrivals, sample_rate, length)
}

/// Full-order reference simulation for axis-aligned shoeboxes via the
/// rectangular-room image lattice (every lattice image of a rectangular
/// room is a valid specular path, so no visibility tests are needed).
///
/// Uses the same arrival encoding as [`compute_lor`]; per-wall reflectivity
/// is the area-weighted mean over the wall's member faces. Deterministic.
pub fn simulate_reference(
    scene: &SceneGraph,
    pair: &PositionPair,
    max_order: usize,
    sample_rate: u32,
) -> Result<AmbisonicIR, GaError> {
    let sb = as_shoebox(scene).ok_or(GaError::NotAShoebox)?;
    if max_order > MAX_REFERENCE_ORDER {
        return Err(GaError::ReferenceOrderTooHigh(max_order));
    }
    validate_pair(scene, pair)?;
    let fs = sample_rate as f64;
    let src = pair.source - sb.min;
    let lis = pair.listener - sb.min;

    // Wall order within an axis: (low wall, high wall); walls are indexed
    // (x0,x1,y0,y1,z0,z1) in `Shoebox::wall_reflectivity`.
    struct AxisImage {
        coord: f64,
        order: usize,
        gains: [f64; N_BANDS],
    }
    let axis_images = |s: f64, room: f64, rho_lo: &[f64; N_BANDS], rho_hi: &[f64; N_BANDS]| {
        let mut out = Vec::new();
        let half = (max_order as i64 + 1) / 2 + 1;
        for m in -half..=half {
            for p in [0i64, 1] {
                let (k_lo, k_hi) = if p == 0 {
                    (m.unsigned_abs() as usize, m.unsigned_abs() as usize)
                } else {
                    ((m - 1).unsigned_abs() as usize, m.unsigned_abs() as usize)
                };
                let order = k_lo + k_hi;
                if order > max_order {
                    continue;
                }
                let coord = (1 - 2 * p) as f64 * s + 2.0 * m as f64 * room;
                let mut gains = [0.0; N_BANDS];
                for b in 0..N_BANDS {
                    gains[b] = rho_lo[b].powi(k_lo as i32) * rho_hi[b].powi(k_hi as i32);
                }
                out.push(AxisImage { coord, order, gains });
            }
        }
        out
    };
    let xs = axis_images(src.x, sb.dims.x, &sb.wall_reflectivity[0], &sb.wall_reflectivity[1]);
    let ys = axis_images(src.y, sb.dims.y, &sb.wall_reflectivity[2], &sb.wall_reflectivity[3]);
    let zs = axis_images(src.z, sb.dims.z, &sb.wall_reflectivity[4], &sb.wall_reflectivity[5]);

    let mut arrivals = Vec::new();
    for xi in &xs {
        for yi in &ys {
            if xi.order + yi.order > max_order {
                continue;
            }
            for zi in &zs {
                let order = xi.order + yi.order + zi.order;
                if order > max_order {
                    continue;
                }
                let pos = Vec3::new(xi.coord, yi.coord, zi.coord);
                let r = pos.dist(lis);
                if r < 1e-9 {
                    continue;
                }
                let mut broadband = 0.0;
                for b in 0..N_BANDS {
                    broadband += xi.gains[b] * yi.gains[b] * zi.gains[b];
                }
                broadband /= N_BANDS as f64;
                let direction = match (pos - lis).normalized() {
                    Some(d) => d,
                    None => continue,
                };
                arrivals.push(Arrival {
                    order,
                    faces_hit: Vec::new(),
                    delay_samples: r / SPEED_OF_SOUND * fs,
                    amplitude: broadband / r,
                    direction,
                });
            }
        }
    }
    encode_arrivals(arrivals, sample_rate, None)
}
