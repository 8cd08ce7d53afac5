//! Procedural meshes and synthetic transforms for fixtures and experiments.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::mesh::{dot3, norm, TriangleMesh};
use crate::scalar::Real;

fn build<T: Real>(vertices: Vec<[f64; 3]>, faces: Vec<[usize; 3]>, name: &str) -> TriangleMesh<T> {
    let vertices = vertices.into_iter().map(|v| v.map(T::lit)).collect();
    TriangleMesh::new(vertices, faces, name).expect("procedural mesh is valid")
}

/// Regular octahedron with vertices at `±e_x, ±e_y, ±e_z` (in that order).
pub fn octahedron<T: Real>() -> TriangleMesh<T> {
    build(
        vec![
            [1.0, 0.0, 0.0],
            [-1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, -1.0, 0.0],
            [0.0, 0.0, 1.0],
            [0.0, 0.0, -1.0],
        ],
        vec![
            [0, 2, 4],
            [2, 1, 4],
            [1, 3, 4],
            [3, 0, 4],
            [2, 0, 5],
            [1, 2, 5],
            [3, 1, 5],
            [0, 3, 5],
        ],
        "octahedron",
    )
}

/// The upper four faces of [`octahedron`]; vertex `i` is octahedron vertex `i`.
pub fn half_octahedron<T: Real>() -> TriangleMesh<T> {
    let (m, kept) = octahedron::<T>().submesh(&[0, 1, 2, 3]).expect("valid");
    debug_assert_eq!(kept, vec![0, 1, 2, 3, 4]);
    m.with_name("half-octahedron")
}

/// Regular icosahedron inscribed in the unit sphere.
pub fn icosahedron<T: Real>() -> TriangleMesh<T> {
    let p = (1.0 + 5f64.sqrt()) / 2.0;
    let raw = [
        [-1.0, p, 0.0],
        [1.0, p, 0.0],
        [-1.0, -p, 0.0],
        [1.0, -p, 0.0],
        [0.0, -1.0, p],
        [0.0, 1.0, p],
        [0.0, -1.0, -p],
        [0.0, 1.0, -p],
        [p, 0.0, -1.0],
        [p, 0.0, 1.0],
        [-p, 0.0, -1.0],
        [-p, 0.0, 1.0],
    ];
    let vertices = raw.iter().map(|&v| normalized(v)).collect();
    let faces = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    build(vertices, faces, "icosahedron")
}

/// Unit icosphere after `level` rounds of 4-to-1 midpoint subdivision
/// (12, 42, 162, 642, 2562, ... vertices).
pub fn icosphere<T: Real>(level: usize) -> TriangleMesh<T> {
    let ico = icosahedron::<f64>();
    let mut vertices: Vec<[f64; 3]> = ico.vertices().to_vec();
    let mut faces: Vec<[usize; 3]> = ico.faces().to_vec();
    for _ in 0..level {
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        let mut mid = |a: usize, b: usize, vertices: &mut Vec<[f64; 3]>| -> usize {
            let key = (a.min(b), a.max(b));
            *midpoint.entry(key).or_insert_with(|| {
                let (va, vb) = (vertices[a], vertices[b]);
                vertices.push(normalized([
                    (va[0] + vb[0]) / 2.0,
                    (va[1] + vb[1]) / 2.0,
                    (va[2] + vb[2]) / 2.0,
                ]));
                vertices.len() - 1
            })
        };
        for &[a, b, c] in &faces {
            let ab = mid(a, b, &mut vertices);
            let bc = mid(b, c, &mut vertices);
            let ca = mid(c, a, &mut vertices);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    build(vertices, faces, &format!("icosphere{level}"))
}

/// Flat `nx × ny` vertex grid in the xy-plane with spacing `h`; vertex
/// `(col, row)` has index `row * nx + col` and each cell is split along the
/// diagonal from `(col, row)` to `(col + 1, row + 1)`.
pub fn grid<T: Real>(nx: usize, ny: usize, h: f64) -> TriangleMesh<T> {
    let mut vertices = Vec::with_capacity(nx * ny);
    for r in 0..ny {
        for c in 0..nx {
            vertices.push([c as f64 * h, r as f64 * h, 0.0]);
        }
    }
    let mut faces = Vec::new();
    for r in 0..ny - 1 {
        for c in 0..nx - 1 {
            let v00 = r * nx + c;
            let v10 = v00 + 1;
            let v01 = v00 + nx;
            let v11 = v01 + 1;
            faces.push([v00, v10, v11]);
            faces.push([v00, v11, v01]);
        }
    }
    build(vertices, faces, &format!("grid{nx}x{ny}"))
}

/// Displaces every vertex along its direction from the origin by a smooth
/// random field `amplitude * Σ exp(-|x̂ - c|² / w²)` over a handful of
/// random bump centres `c`. Used to break the symmetries of spheres.
pub fn radial_bumps<T: Real>(mesh: &TriangleMesh<T>, amplitude: f64, bumps: usize, seed: u64) -> TriangleMesh<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centres: Vec<([f64; 3], f64, f64)> = (0..bumps)
        .map(|_| {
            let c = random_unit(&mut rng);
            let width = rng.gen_range(0.35..0.9);
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            (c, width, sign * rng.gen_range(0.4..1.0))
        })
        .collect();
    let vertices = mesh
        .vertices()
        .iter()
        .map(|v| {
            let p = v.map(|x| x.to_f64_lossless());
            let u = normalized(p);
            let field: f64 = centres
                .iter()
                .map(|(c, w, s)| {
                    let d2 = (u[0] - c[0]).powi(2) + (u[1] - c[1]).powi(2) + (u[2] - c[2]).powi(2);
                    s * (-d2 / (w * w)).exp()
                })
                .sum();
            let scale = 1.0 + amplitude * field;
            p.map(|x| T::lit(x * scale))
        })
        .collect();
    TriangleMesh::new(vertices, mesh.faces().to_vec(), format!("{}-bumpy", mesh.name())).expect("bumped mesh is valid")
}

/// Uniformly random rotation matrix from a normalized random quaternion.
pub fn random_rotation<T: Real>(seed: u64) -> [[T; 3]; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q: [f64; 4] = loop {
        let q = [
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0f64),
        ];
        let n2: f64 = q.iter().map(|x| x * x).sum();
        if n2 > 1e-3 && n2 <= 1.0 {
            let n = n2.sqrt();
            break q.map(|x| x / n);
        }
    };
    let [w, x, y, z] = q;
    let r = [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ];
    r.map(|row| row.map(T::lit))
}

/// Random permutation `perm[old] = new`.
pub fn random_permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(&mut rng);
    p
}

fn random_unit(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v = [
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0f64),
        ];
        let n = norm(v);
        if n > 1e-3 && n <= 1.0 {
            return v.map(|x| x / n);
        }
    }
}

fn normalized(v: [f64; 3]) -> [f64; 3] {
    let n = dot3(v, v).sqrt();
    v.map(|x| x / n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn icosphere_counts() {
        for (level, n) in [(0, 12), (1, 42), (2, 162), (3, 642)] {
            let s = icosphere::<f64>(level);
            assert_eq!(s.num_vertices(), n);
            assert_eq!(s.num_faces(), 20 * 4usize.pow(level as u32));
        }
    }

    #[test]
    fn rotation_is_orthonormal() {
        let r = random_rotation::<f64>(3);
        for i in 0..3 {
            for j in 0..3 {
                let d: f64 = (0..3).map(|k| r[i][k] * r[j][k]).sum();
                assert!((d - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn consistent_outward_orientation() {
        for mesh in [octahedron::<f64>(), icosphere::<f64>(2)] {
            for f in mesh.faces() {
                let [a, b, c] = f.map(|i| mesh.vertices()[i]);
                let n = crate::mesh::cross(crate::mesh::sub(b, a), crate::mesh::sub(c, a));
                let centroid = [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0, (a[2] + b[2] + c[2]) / 3.0];
                assert!(dot3(n, centroid) > 0.0);
            }
        }
    }
}
