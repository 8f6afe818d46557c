//! Scene representation: triangle faces with per-band acoustic materials,
//! the shared-edge face adjacency graph, mesh/material loading, and the
//! normalized-adjacency operator consumed by graph convolutions.

use crate::bands::N_BANDS;
use crate::geom::{Aabb, Vec3};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("{path}:{line}: face with {n} vertices — only triangles are supported")]
    UnsupportedGeometry { path: String, line: usize, n: usize },
    #[error("unknown material id \"{0}\"")]
    UnknownMaterial(String),
    #[error("face {face}: {msg}")]
    InvalidFace { face: usize, msg: String },
    #[error("adjacency matrix invalid: {0}")]
    InvalidAdjacency(String),
    #[error("non-positive dimension {0}")]
    NonPositiveDimension(f64),
    #[error("vertex {0} has degree zero and self-loops are disabled")]
    DegreeZero(usize),
    #[error("scene has no faces")]
    EmptyScene,
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json error on {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

/// One triangular face with derived geometry and per-band acoustics.
///
/// `reflectivity` is an amplitude reflection coefficient per octave band
/// (energy coefficient = reflectivity²). `scattering` is carried through the
/// data model for dataset perturbation but is not used by the purely
/// specular image-source engine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Face {
    pub vertices: [Vec3; 3],
    pub centroid: Vec3,
    pub normal: Vec3,
    pub area: f64,
    pub reflectivity: [f64; N_BANDS],
    pub scattering: [f64; N_BANDS],
}

impl Face {
    /// Build a face from its corners; the normal follows the right-hand rule
    /// on the vertex winding.
    pub fn new(
        vertices: [Vec3; 3],
        reflectivity: [f64; N_BANDS],
        scattering: [f64; N_BANDS],
    ) -> Result<Face, SceneError> {
        let cross = (vertices[1] - vertices[0]).cross(vertices[2] - vertices[0]);
        let doubled = cross.norm();
        let normal = cross.normalized().ok_or(SceneError::InvalidFace {
            face: usize::MAX,
            msg: "degenerate (zero-area) triangle".into(),
        })?;
        let centroid = (vertices[0] + vertices[1] + vertices[2]) / 3.0;
        let face = Face { vertices, centroid, normal, area: doubled / 2.0, reflectivity, scattering };
        face.check(usize::MAX)?;
        Ok(face)
    }

    fn check(&self, index: usize) -> Result<(), SceneError> {
        let err = |msg: String| SceneError::InvalidFace { face: index, msg };
        if (self.normal.norm() - 1.0).abs() > 1e-9 {
            return Err(err(format!("normal not unit length: {}", self.normal.norm())));
        }
        let expect = 0.5 * (self.vertices[1] - self.vertices[0]).cross(self.vertices[2] - self.vertices[0]).norm();
        if self.area <= 0.0 || (self.area - expect).abs() > 1e-9 * expect.max(1e-300) {
            return Err(err(format!("area {} inconsistent with vertices ({expect})", self.area)));
        }
        for b in 0..N_BANDS {
            if !(0.0..=1.0).contains(&self.reflectivity[b]) {
                return Err(err(format!("reflectivity[{b}] = {} outside [0,1]", self.reflectivity[b])));
            }
            if !(0.0..=1.0).contains(&self.scattering[b]) {
                return Err(err(format!("scattering[{b}] = {} outside [0,1]", self.scattering[b])));
            }
        }
        Ok(())
    }
}

/// Source/listener coordinate pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionPair {
    pub source: Vec3,
    pub listener: Vec3,
}

/// Triangle-face graph: faces plus shared-edge adjacency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneGraph {
    pub faces: Vec<Face>,
    /// Dense symmetric 0/1 matrix (row per face); `adjacency[i][j] == 1` iff
    /// faces i and j share a mesh edge (≥ 2 mesh vertices).
    pub adjacency: Vec<Vec<u8>>,
    pub bounding_box: Aabb,
}

impl SceneGraph {
    /// Assemble and validate a scene from faces plus a prebuilt adjacency.
    pub fn new(faces: Vec<Face>, adjacency: Vec<Vec<u8>>) -> Result<SceneGraph, SceneError> {
        if faces.is_empty() {
            return Err(SceneError::EmptyScene);
        }
        let n = faces.len();
        for (i, f) in faces.iter().enumerate() {
            f.check(i)?;
        }
        if adjacency.len() != n || adjacency.iter().any(|r| r.len() != n) {
            return Err(SceneError::InvalidAdjacency(format!("matrix is not {n}×{n}")));
        }
        for i in 0..n {
            if adjacency[i][i] != 0 {
                return Err(SceneError::InvalidAdjacency(format!("nonzero diagonal at {i}")));
            }
            for j in 0..n {
                if adjacency[i][j] > 1 {
                    return Err(SceneError::InvalidAdjacency(format!("non-binary entry at ({i},{j})")));
                }
                if adjacency[i][j] != adjacency[j][i] {
                    return Err(SceneError::InvalidAdjacency(format!("asymmetry at ({i},{j})")));
                }
            }
        }
        let bounding_box =
            Aabb::from_points(faces.iter().flat_map(|f| f.vertices.iter().copied())).unwrap();
        Ok(SceneGraph { faces, adjacency, bounding_box })
    }

    pub fn n_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn adjacent(&self, i: usize, j: usize) -> bool {
        self.adjacency[i][j] != 0
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].iter().map(|&v| v as usize).sum()
    }

    /// Serialize the whole scene (faces + adjacency) to one JSON document.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<SceneGraph, serde_json::Error> {
        let raw: SceneGraph = serde_json::from_str(s)?;
        Ok(raw)
    }

    pub fn save_json(&self, path: &Path) -> Result<(), SceneError> {
        std::fs::write(path, self.to_json())
            .map_err(|e| SceneError::Io { path: path.display().to_string(), source: e })
    }

    pub fn load_json(path: &Path) -> Result<SceneGraph, SceneError> {
        let s = std::fs::read_to_string(path)
            .map_err(|e| SceneError::Io { path: path.display().to_string(), source: e })?;
        let g = SceneGraph::from_json(&s)
            .map_err(|e| SceneError::Json { path: path.display().to_string(), source: e })?;
        // Revalidate invariants on load.
        SceneGraph::new(g.faces, g.adjacency)
    }
}

/// Per-band material: either one scalar broadcast to all bands or an
/// explicit 8-entry array.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BandsOrScalar {
    Scalar(f64),
    Bands(Vec<f64>),
}

impl BandsOrScalar {
    fn resolve(&self, what: &str, id: &str) -> Result<[f64; N_BANDS], SceneError> {
        match self {
            BandsOrScalar::Scalar(v) => Ok([*v; N_BANDS]),
            BandsOrScalar::Bands(v) => {
                if v.len() != N_BANDS {
                    return Err(SceneError::InvalidAdjacency(format!(
                        "material \"{id}\": {what} has {} entries, expected {N_BANDS}",
                        v.len()
                    )));
                }
                let mut out = [0.0; N_BANDS];
                out.copy_from_slice(v);
                Ok(out)
            }
        }
    }
}

/// Entry in the materials sidecar: per-band reflectivity and scattering.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Material {
    pub reflectivity: BandsOrScalar,
    pub scattering: BandsOrScalar,
}

/// Load a triangle mesh (Wavefront-OBJ subset: `v`, `f`, `usemtl`, comments)
/// plus a JSON materials sidecar mapping material name → bands.
///
/// Face order in the result matches file order. Adjacency links faces that
/// share ≥ 2 mesh vertex indices.
pub fn load_scene(mesh_path: &Path, materials_path: &Path) -> Result<SceneGraph, SceneError> {
    let mat_text = std::fs::read_to_string(materials_path)
        .map_err(|e| SceneError::Io { path: materials_path.display().to_string(), source: e })?;
    let materials: HashMap<String, Material> = serde_json::from_str(&mat_text)
        .map_err(|e| SceneError::Json { path: materials_path.display().to_string(), source: e })?;

    let mesh_text = std::fs::read_to_string(mesh_path)
        .map_err(|e| SceneError::Io { path: mesh_path.display().to_string(), source: e })?;
    let path_str = mesh_path.display().to_string();
    let parse_err = |line: usize, msg: String| SceneError::Parse { path: path_str.clone(), line, msg };

    let mut vertices: Vec<Vec3> = Vec::new();
    let mut tris: Vec<([usize; 3], String)> = Vec::new();
    let mut current_mtl: Option<String> = None;
    for (lineno, raw) in mesh_text.lines().enumerate() {
        let line = lineno + 1;
        let text = raw.split('#').next().unwrap_or("").trim();
        if text.is_empty() {
            continue;
        }
        let mut parts = text.split_whitespace();
        match parts.next().unwrap() {
            "v" => {
                let coords: Vec<f64> = parts
                    .map(|p| p.parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|e| parse_err(line, format!("bad vertex coordinate: {e}")))?;
                if coords.len() != 3 {
                    return Err(parse_err(line, format!("vertex needs 3 coordinates, got {}", coords.len())));
                }
                vertices.push(Vec3::new(coords[0], coords[1], coords[2]));
            }
            "usemtl" => {
                let name = parts.next().ok_or_else(|| parse_err(line, "usemtl without a name".into()))?;
                current_mtl = Some(name.to_string());
            }
            "f" => {
                let idx: Vec<usize> = parts
                    .map(|p| {
                        // Accept `i`, `i/t`, `i/t/n`, `i//n`; only the vertex index matters.
                        let first = p.split('/').next().unwrap_or("");
                        first
                            .parse::<usize>()
                            .map_err(|e| parse_err(line, format!("bad face index \"{p}\": {e}")))
                    })
                    .collect::<Result<_, _>>()?;
                if idx.len() != 3 {
                    return Err(SceneError::UnsupportedGeometry { path: path_str.clone(), line, n: idx.len() });
                }
                for &i in &idx {
                    if i == 0 || i > vertices.len() {
                        return Err(parse_err(line, format!("face index {i} out of range (1..={})", vertices.len())));
                    }
                }
                let mtl = current_mtl
                    .clone()
                    .ok_or_else(|| parse_err(line, "face before any usemtl".into()))?;
                tris.push(([idx[0] - 1, idx[1] - 1, idx[2] - 1], mtl));
            }
            // Harmless OBJ records we ignore.
            "vn" | "vt" | "o" | "g" | "s" | "mtllib" => {}
            other => return Err(parse_err(line, format!("unsupported record \"{other}\""))),
        }
    }
    if tris.is_empty() {
        return Err(SceneError::EmptyScene);
    }

    let mut faces = Vec::with_capacity(tris.len());
    for (idx, mtl) in &tris {
        let m = materials.get(mtl).ok_or_else(|| SceneError::UnknownMaterial(mtl.clone()))?;
        let refl = m.reflectivity.resolve("reflectivity", mtl)?;
        let scat = m.scattering.resolve("scattering", mtl)?;
        faces.push(Face::new([vertices[idx[0]], vertices[idx[1]], vertices[idx[2]]], refl, scat)?);
    }
    let adjacency = adjacency_from_indices(&tris.iter().map(|(i, _)| *i).collect::<Vec<_>>());
    SceneGraph::new(faces, adjacency)
}

/// Shared-edge adjacency from per-face vertex index triples.
pub fn adjacency_from_indices(tri_indices: &[[usize; 3]]) -> Vec<Vec<u8>> {
    let n = tri_indices.len();
    let mut adj = vec![vec![0u8; n]; n];
    // Index faces by their (sorted) edges; two faces sharing an edge share
    // ≥ 2 vertices.
    let mut edge_map: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
    for (f, idx) in tri_indices.iter().enumerate() {
        for (a, b) in [(idx[0], idx[1]), (idx[1], idx[2]), (idx[2], idx[0])] {
            let key = (a.min(b), a.max(b));
            edge_map.entry(key).or_default().push(f);
        }
    }
    for owners in edge_map.values() {
        for (k, &i) in owners.iter().enumerate() {
            for &j in owners.iter().skip(k + 1) {
                if i != j {
                    adj[i][j] = 1;
                    adj[j][i] = 1;
                }
            }
        }
    }
    adj
}

/// Axis-aligned 12-triangle shoebox `[0,w]×[0,d]×[0,h]`, all normals
/// pointing inward, a single material on every face.
///
/// Faces are ordered wall by wall (x=0, x=w, y=0, y=d, z=0, z=h), two
/// triangles per wall.
pub fn make_shoebox(
    dims: [f64; 3],
    reflectivity: [f64; N_BANDS],
    scattering: [f64; N_BANDS],
) -> Result<SceneGraph, SceneError> {
    for &d in &dims {
        if !(d > 0.0) {
            return Err(SceneError::NonPositiveDimension(d));
        }
    }
    let [w, d, h] = dims;
    // Corner index bit layout: bit0 → x=w, bit1 → y=d, bit2 → z=h.
    let corner = |i: usize| {
        Vec3::new(
            if i & 1 != 0 { w } else { 0.0 },
            if i & 2 != 0 { d } else { 0.0 },
            if i & 4 != 0 { h } else { 0.0 },
        )
    };
    // Quads wound so the right-hand-rule normal points inward.
    let quads: [[usize; 4]; 6] = [
        [0, 2, 6, 4], // x = 0, normal +x
        [1, 5, 7, 3], // x = w, normal −x
        [0, 4, 5, 1], // y = 0, normal +y
        [2, 3, 7, 6], // y = d, normal −y
        [0, 1, 3, 2], // z = 0, normal +z
        [4, 6, 7, 5], // z = h, normal −z
    ];
    let mut tri_indices = Vec::with_capacity(12);
    for q in quads {
        tri_indices.push([q[0], q[1], q[2]]);
        tri_indices.push([q[0], q[2], q[3]]);
    }
    let faces = tri_indices
        .iter()
        .map(|idx| Face::new([corner(idx[0]), corner(idx[1]), corner(idx[2])], reflectivity, scattering))
        .collect::<Result<Vec<_>, _>>()?;
    let adjacency = adjacency_from_indices(&tri_indices);
    SceneGraph::new(faces, adjacency)
}

/// Symmetrically normalized adjacency D̂^{-1/2} Â D̂^{-1/2}, where
/// Â = A + I when `add_self_loops` and D̂ is the diagonal degree matrix of Â.
pub fn normalize_adjacency(
    graph: &SceneGraph,
    add_self_loops: bool,
) -> Result<Vec<Vec<f64>>, SceneError> {
    normalize_adjacency_matrix(&graph.adjacency, add_self_loops)
}

/// [`normalize_adjacency`] on a bare 0/1 matrix, for graphs that exist only
/// as induced subgraphs (e.g. after pooling) rather than full scenes.
pub fn normalize_adjacency_matrix(
    adjacency: &[Vec<u8>],
    add_self_loops: bool,
) -> Result<Vec<Vec<f64>>, SceneError> {
    let n = adjacency.len();
    if n == 0 {
        return Err(SceneError::EmptyScene);
    }
    let a_hat = |i: usize, j: usize| {
        adjacency[i][j] as f64 + if add_self_loops && i == j { 1.0 } else { 0.0 }
    };
    let mut deg = vec![0.0; n];
    for (i, d) in deg.iter_mut().enumerate() {
        *d = (0..n).map(|j| a_hat(i, j)).sum();
        if *d == 0.0 {
            return Err(SceneError::DegreeZero(i));
        }
    }
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            out[i][j] = a_hat(i, j) / (deg[i] * deg[j]).sqrt();
        }
    }
    Ok(out)
}

/// Description of a recognized axis-aligned box scene.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Shoebox {
    pub min: Vec3,
    pub dims: Vec3,
    /// Area-weighted mean reflectivity per wall, ordered
    /// (x-min, x-max, y-min, y-max, z-min, z-max).
    pub wall_reflectivity: [[f64; N_BANDS]; 6],
}

/// Recognize an axis-aligned 12-triangle box with inward normals, and
/// compute per-wall mean materials for the rectangular-lattice simulator.
pub fn as_shoebox(scene: &SceneGraph) -> Option<Shoebox> {
    if scene.n_faces() != 12 {
        return None;
    }
    let bb = scene.bounding_box;
    let size = bb.size();
    if size.x <= 0.0 || size.y <= 0.0 || size.z <= 0.0 {
        return None;
    }
    let eps = 1e-9 * bb.diagonal().max(1.0);
    // Wall index per face: 0/1 → x-min/x-max, 2/3 → y, 4/5 → z.
    let mut wall_area = [0.0; 6];
    let mut wall_refl = [[0.0; N_BANDS]; 6];
    for face in &scene.faces {
        let n = face.normal;
        let wall = if (n.x - 1.0).abs() < 1e-9 && n.y.abs() < 1e-9 && n.z.abs() < 1e-9 {
            0
        } else if (n.x + 1.0).abs() < 1e-9 && n.y.abs() < 1e-9 && n.z.abs() < 1e-9 {
            1
        } else if (n.y - 1.0).abs() < 1e-9 && n.x.abs() < 1e-9 && n.z.abs() < 1e-9 {
            2
        } else if (n.y + 1.0).abs() < 1e-9 && n.x.abs() < 1e-9 && n.z.abs() < 1e-9 {
            3
        } else if (n.z - 1.0).abs() < 1e-9 && n.x.abs() < 1e-9 && n.y.abs() < 1e-9 {
            4
        } else if (n.z + 1.0).abs() < 1e-9 && n.x.abs() < 1e-9 && n.y.abs() < 1e-9 {
            5
        } else {
            return None;
        };
        // The face must lie on the matching bounding-box plane (inward
        // normal on the min plane points +, on the max plane points −).
        let plane = match wall {
            0 => bb.min.x,
            1 => bb.max.x,
            2 => bb.min.y,
            3 => bb.max.y,
            4 => bb.min.z,
            _ => bb.max.z,
        };
        for v in &face.vertices {
            let coord = match wall {
                0 | 1 => v.x,
                2 | 3 => v.y,
                _ => v.z,
            };
            if (coord - plane).abs() > eps {
                return None;
            }
        }
        wall_area[wall] += face.area;
        for b in 0..N_BANDS {
            wall_refl[wall][b] += face.area * face.reflectivity[b];
        }
    }
    // Every wall must be fully tiled.
    let expect = [
        size.y * size.z,
        size.y * size.z,
        size.x * size.z,
        size.x * size.z,
        size.x * size.y,
        size.x * size.y,
    ];
    for w in 0..6 {
        if (wall_area[w] - expect[w]).abs() > 1e-9 * expect[w] {
            return None;
        }
        for b in 0..N_BANDS {
            wall_refl[w][b] /= wall_area[w];
        }
    }
    Some(Shoebox { min: bb.min, dims: size, wall_reflectivity: wall_refl })
}
