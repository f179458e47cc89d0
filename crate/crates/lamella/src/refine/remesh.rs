//! Incremental remeshing: edge splits, collapses, and flips toward a target
//! edge length and valence-6 connectivity.

use std::collections::{HashMap, HashSet};

use glam::DVec3;

use crate::error::{Error, Result};
use crate::mesh::TriMesh;

/// Split edges longer than this multiple of the target length.
const SPLIT_FACTOR: f64 = 1.5;
/// Collapse edges shorter than this multiple of the target length.
const COLLAPSE_FACTOR: f64 = 0.5;

/// Remesh output; `emptied` flags that the requested operation would have
/// removed every face, in which case the input is returned unchanged.
#[derive(Debug, Clone)]
pub struct RemeshOutcome {
    pub mesh: TriMesh,
    pub emptied: bool,
}

/// One remeshing cycle: repeated long-edge splits, one short-edge collapse
/// pass (skipping collapses that would flip face normals or break the local
/// manifold), and one valence-improving flip pass. Vertex colors are dropped.
pub fn remesh(mesh: &TriMesh, target_edge: f64) -> Result<RemeshOutcome> {
    if !(target_edge > 0.0) {
        return Err(Error::domain("target edge length must be > 0"));
    }
    mesh.validate()?;
    if mesh.faces.is_empty() {
        return Ok(RemeshOutcome {
            mesh: mesh.clone(),
            emptied: false,
        });
    }
    let mut work = Work {
        vertices: mesh.vertices.clone(),
        faces: mesh.faces.clone(),
    };

    for _ in 0..8 {
        if !split_pass(&mut work, target_edge * SPLIT_FACTOR) {
            break;
        }
    }
    collapse_pass(&mut work, target_edge * COLLAPSE_FACTOR);
    flip_pass(&mut work);

    let mut out = TriMesh::new(work.vertices, work.faces);
    out.semantics = mesh.semantics;
    out.compact();
    if out.faces.is_empty() {
        return Ok(RemeshOutcome {
            mesh: mesh.clone(),
            emptied: true,
        });
    }
    Ok(RemeshOutcome {
        mesh: out,
        emptied: false,
    })
}

struct Work {
    vertices: Vec<DVec3>,
    faces: Vec<[u32; 3]>,
}

impl Work {
    fn edge_len(&self, a: u32, b: u32) -> f64 {
        (self.vertices[a as usize] - self.vertices[b as usize]).length()
    }

    fn face_normal(&self, f: &[u32; 3]) -> DVec3 {
        let (a, b, c) = (
            self.vertices[f[0] as usize],
            self.vertices[f[1] as usize],
            self.vertices[f[2] as usize],
        );
        (b - a).cross(c - a)
    }
}

fn edge_key(a: u32, b: u32) -> (u32, u32) {
    (a.min(b), a.max(b))
}

/// Undirected edge → indices of incident faces.
fn edge_faces(faces: &[[u32; 3]]) -> HashMap<(u32, u32), Vec<usize>> {
    let mut map: HashMap<(u32, u32), Vec<usize>> = HashMap::new();
    for (fi, f) in faces.iter().enumerate() {
        for e in 0..3 {
            map.entry(edge_key(f[e], f[(e + 1) % 3]))
                .or_default()
                .push(fi);
        }
    }
    map
}

/// Splits every edge above the threshold at its midpoint. Returns whether
/// any split happened (new halves may still be long).
fn split_pass(work: &mut Work, threshold: f64) -> bool {
    let edges = edge_faces(&work.faces);
    let mut long: Vec<((u32, u32), f64)> = edges
        .keys()
        .map(|&e| (e, work.edge_len(e.0, e.1)))
        .filter(|&(_, len)| len > threshold)
        .collect();
    if long.is_empty() {
        return false;
    }
    // Longest first; ties resolve on the key for determinism.
    long.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

    let mut dirty_faces: HashSet<usize> = HashSet::new();
    let mut removed: Vec<usize> = Vec::new();
    let mut added: Vec<[u32; 3]> = Vec::new();
    let mut split_any = false;
    for ((a, b), _) in long {
        let incident = &edges[&edge_key(a, b)];
        if incident.iter().any(|fi| dirty_faces.contains(fi)) {
            continue;
        }
        let mid = (work.vertices[a as usize] + work.vertices[b as usize]) * 0.5;
        let m = work.vertices.len() as u32;
        work.vertices.push(mid);
        for &fi in incident {
            let f = work.faces[fi];
            // Rotate so the split edge is (f[0], f[1]).
            let rotated = (0..3)
                .map(|r| [f[r], f[(r + 1) % 3], f[(r + 2) % 3]])
                .find(|g| edge_key(g[0], g[1]) == edge_key(a, b))
                .expect("incident face contains the edge");
            added.push([rotated[0], m, rotated[2]]);
            added.push([m, rotated[1], rotated[2]]);
            removed.push(fi);
            dirty_faces.insert(fi);
        }
        split_any = true;
    }
    apply_face_edits(work, &removed, added);
    split_any
}

fn apply_face_edits(work: &mut Work, removed: &[usize], added: Vec<[u32; 3]>) {
    let removed: HashSet<usize> = removed.iter().copied().collect();
    let mut faces = Vec::with_capacity(work.faces.len() + added.len());
    for (fi, f) in work.faces.iter().enumerate() {
        if !removed.contains(&fi) {
            faces.push(*f);
        }
    }
    faces.extend(added);
    work.faces = faces;
}

/// Collapses edges below the threshold to their midpoint where the local
/// manifold and face orientations survive.
fn collapse_pass(work: &mut Work, threshold: f64) {
    let edges = edge_faces(&work.faces);
    let mut short: Vec<((u32, u32), f64)> = edges
        .keys()
        .map(|&e| (e, work.edge_len(e.0, e.1)))
        .filter(|&(_, len)| len < threshold)
        .collect();
    short.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    if short.is_empty() {
        return;
    }

    // Vertex one-rings.
    let mut vertex_faces: HashMap<u32, Vec<usize>> = HashMap::new();
    for (fi, f) in work.faces.iter().enumerate() {
        for &v in f {
            vertex_faces.entry(v).or_default().push(fi);
        }
    }
    let neighbors = |v: u32, faces: &[[u32; 3]], vf: &HashMap<u32, Vec<usize>>| -> HashSet<u32> {
        let mut out = HashSet::new();
        if let Some(fs) = vf.get(&v) {
            for &fi in fs {
                for &u in &faces[fi] {
                    if u != v {
                        out.insert(u);
                    }
                }
            }
        }
        out
    };

    let mut dirty: HashSet<u32> = HashSet::new();
    let mut removed_faces: Vec<usize> = Vec::new();
    let mut replace: HashMap<u32, u32> = HashMap::new();
    for ((a, b), _) in short {
        if dirty.contains(&a) || dirty.contains(&b) {
            continue;
        }
        let na = neighbors(a, &work.faces, &vertex_faces);
        let nb = neighbors(b, &work.faces, &vertex_faces);
        // Link condition: an interior edge's endpoints share exactly the two
        // opposite vertices; anything else would pinch the surface.
        let shared: Vec<u32> = na.intersection(&nb).copied().collect();
        let incident = &edges[&edge_key(a, b)];
        if incident.len() != 2 || shared.len() != 2 {
            continue;
        }
        let mid = (work.vertices[a as usize] + work.vertices[b as usize]) * 0.5;
        // Reject collapses that flip any surviving face's orientation.
        let mut ok = true;
        let mut touched: Vec<usize> = Vec::new();
        for &v in &[a, b] {
            for &fi in vertex_faces.get(&v).into_iter().flatten() {
                if incident.contains(&fi) || removed_faces.contains(&fi) {
                    continue;
                }
                touched.push(fi);
                let f = work.faces[fi];
                let before = work.face_normal(&f);
                let pos = |u: u32| -> DVec3 {
                    if u == a || u == b {
                        mid
                    } else {
                        work.vertices[u as usize]
                    }
                };
                let after =
                    (pos(f[1]) - pos(f[0])).cross(pos(f[2]) - pos(f[0]));
                if after.length() < 1e-14 || before.dot(after) <= 0.0 {
                    ok = false;
                    break;
                }
            }
            if !ok {
                break;
            }
        }
        if !ok {
            continue;
        }
        work.vertices[a as usize] = mid;
        replace.insert(b, a);
        removed_faces.extend(incident.iter().copied());
        dirty.insert(a);
        dirty.insert(b);
        for v in na.union(&nb) {
            dirty.insert(*v);
        }
        let _ = touched;
    }
    let removed: HashSet<usize> = removed_faces.into_iter().collect();
    let resolve = |v: u32| -> u32 { *replace.get(&v).unwrap_or(&v) };
    let mut faces = Vec::with_capacity(work.faces.len());
    for (fi, f) in work.faces.iter().enumerate() {
        if removed.contains(&fi) {
            continue;
        }
        let g = [resolve(f[0]), resolve(f[1]), resolve(f[2])];
        if g[0] != g[1] && g[1] != g[2] && g[0] != g[2] {
            faces.push(g);
        }
    }
    work.faces = faces;
}

/// Flips interior edges when doing so strictly reduces the squared valence
/// deviation from 6 and keeps the two new faces sane.
fn flip_pass(work: &mut Work) {
    let edges = edge_faces(&work.faces);
    let mut valence: HashMap<u32, i64> = HashMap::new();
    for key in edges.keys() {
        *valence.entry(key.0).or_insert(0) += 1;
        *valence.entry(key.1).or_insert(0) += 1;
    }
    let existing: HashSet<(u32, u32)> = edges.keys().copied().collect();
    let mut keys: Vec<(u32, u32)> = edges.keys().copied().collect();
    keys.sort_unstable();

    let mut dirty: HashSet<u32> = HashSet::new();
    for key in keys {
        let incident = &edges[&key];
        if incident.len() != 2 {
            continue;
        }
        let (a, b) = key;
        if dirty.contains(&a) || dirty.contains(&b) {
            continue;
        }
        let (f0, f1) = (incident[0], incident[1]);
        let c = opposite_vertex(&work.faces[f0], a, b);
        let d = opposite_vertex(&work.faces[f1], a, b);
        let (Some(c), Some(d)) = (c, d) else { continue };
        if c == d || existing.contains(&edge_key(c, d)) {
            continue;
        }
        if dirty.contains(&c) || dirty.contains(&d) {
            continue;
        }
        let val = |v: u32| *valence.get(&v).unwrap_or(&6);
        let dev = |v: i64| (v - 6) * (v - 6);
        let before = dev(val(a)) + dev(val(b)) + dev(val(c)) + dev(val(d));
        let after = dev(val(a) - 1) + dev(val(b) - 1) + dev(val(c) + 1) + dev(val(d) + 1);
        if after >= before {
            continue;
        }
        // Orient the new faces consistently with the old pair.
        let old_n = work.face_normal(&work.faces[f0]) + work.face_normal(&work.faces[f1]);
        let candidates = [[a, d, c], [c, d, b]];
        let new_n: DVec3 = candidates.iter().map(|f| work.face_normal(f)).sum();
        let (new0, new1) = if old_n.dot(new_n) >= 0.0 {
            ([a, d, c], [c, d, b])
        } else {
            ([a, c, d], [c, b, d])
        };
        if work.face_normal(&new0).length() < 1e-14
            || work.face_normal(&new1).length() < 1e-14
            || work.face_normal(&new0).dot(old_n) <= 0.0
            || work.face_normal(&new1).dot(old_n) <= 0.0
        {
            continue;
        }
        work.faces[f0] = new0;
        work.faces[f1] = new1;
        *valence.entry(a).or_insert(6) -= 1;
        *valence.entry(b).or_insert(6) -= 1;
        *valence.entry(c).or_insert(6) += 1;
        *valence.entry(d).or_insert(6) += 1;
        for v in [a, b, c, d] {
            dirty.insert(v);
        }
    }
}

fn opposite_vertex(face: &[u32; 3], a: u32, b: u32) -> Option<u32> {
    face.iter().find(|&&v| v != a && v != b).copied()
}
