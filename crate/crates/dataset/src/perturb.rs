//! Scene variation: per-face, per-band material redraws and rejection
//! sampling of valid source/listener pairs.

use crate::DatasetError;
use aurasim_core::bands::N_BANDS;
use aurasim_core::geom::Vec3;
use aurasim_core::rngutil::rng_from;
use aurasim_core::scene::{PositionPair, SceneGraph};
use rand::Rng;

/// Minimum source–listener separation in meters.
pub const MIN_PAIR_DISTANCE: f64 = 0.3;

/// Consecutive rejections before a scene is declared infeasible.
pub const MAX_REJECTIONS: usize = 100_000;

fn check_range(lo: f64, hi: f64) -> Result<(), DatasetError> {
    if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
        return Err(DatasetError::BadRange { lo, hi });
    }
    Ok(())
}

/// Redraw every face's per-band reflectivity and scattering uniformly in
/// the given ranges. Each (face, band) cell draws from its own stream, so
/// a draw for one cell never shifts another's; geometry is untouched.
pub fn perturb_materials(
    scene: &SceneGraph,
    refl_range: (f64, f64),
    scat_range: (f64, f64),
    seed: u64,
) -> Result<SceneGraph, DatasetError> {
    check_range(refl_range.0, refl_range.1)?;
    check_range(scat_range.0, scat_range.1)?;
    let mut faces = scene.faces.clone();
    for (f, face) in faces.iter_mut().enumerate() {
        for b in 0..N_BANDS {
            let mut rng = rng_from(seed, &[f as u64, b as u64]);
            face.reflectivity[b] = rng.gen_range(refl_range.0..=refl_range.1);
            face.scattering[b] = rng.gen_range(scat_range.0..=scat_range.1);
        }
    }
    Ok(SceneGraph::new(faces, scene.adjacency.clone())?)
}

fn clear_of_all_planes(scene: &SceneGraph, p: Vec3, clearance: f64) -> bool {
    scene
        .faces
        .iter()
        .all(|f| (p - f.vertices[0]).dot(f.normal).abs() >= clearance)
}

/// Draw `n` source/listener pairs uniformly inside the scene's bounding
/// box, keeping only pairs where both points sit at least `min_clearance_m`
/// from every face plane and at least [`MIN_PAIR_DISTANCE`] apart.
pub fn sample_positions(
    scene: &SceneGraph,
    n: usize,
    min_clearance_m: f64,
    seed: u64,
) -> Result<Vec<PositionPair>, DatasetError> {
    let bb = &scene.bounding_box;
    let mut rng = rng_from(seed, &[]);
    let mut out = Vec::with_capacity(n);
    let mut consecutive = 0usize;
    while out.len() < n {
        if consecutive >= MAX_REJECTIONS {
            return Err(DatasetError::InfeasibleScene(consecutive));
        }
        let mut draw = || {
            Vec3::new(
                rng.gen_range(bb.min.x..=bb.max.x),
                rng.gen_range(bb.min.y..=bb.max.y),
                rng.gen_range(bb.min.z..=bb.max.z),
            )
        };
        let source = draw();
        let listener = draw();
        let ok = clear_of_all_planes(scene, source, min_clearance_m)
            && clear_of_all_planes(scene, listener, min_clearance_m)
            && source.dist(listener) >= MIN_PAIR_DISTANCE;
        if ok {
            out.push(PositionPair { source, listener });
            consecutive = 0;
        } else {
            consecutive += 1;
        }
    }
    Ok(out)
}
