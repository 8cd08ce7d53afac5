//! Triangle meshes: ingestion, cotangent Laplacian assembly and graph
//! geodesics.

mod geodesic;
mod io;
mod laplacian;
pub mod primitives;

pub use geodesic::{geodesic_distances, EdgeGraph};
pub use io::{load_mesh, parse_mesh, write_off, MeshFormat};
pub use laplacian::{compute_laplacian, LaplacianPair, COTANGENT_CLAMP};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Real;

/// Faces with area below this fraction of the squared bounding-box diagonal
/// are rejected as degenerate.
pub const MIN_RELATIVE_FACE_AREA: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct TriangleMesh<T> {
    vertices: Vec<[T; 3]>,
    faces: Vec<[usize; 3]>,
    name: String,
}

impl<T: Real> TriangleMesh<T> {
    /// Validates indices, distinctness and face areas.
    pub fn new(vertices: Vec<[T; 3]>, faces: Vec<[usize; 3]>, name: impl Into<String>) -> Result<Self> {
        let n = vertices.len();
        for (fi, f) in faces.iter().enumerate() {
            for &v in f {
                if v >= n {
                    return Err(Error::IndexOutOfRange {
                        index: v,
                        len: n,
                        context: "face vertex",
                    });
                }
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::DegenerateFace {
                    face: fi,
                    reason: format!("repeated vertex index {:?}", f),
                });
            }
        }
        if vertices.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("vertex coordinates"));
        }
        let mesh = Self {
            vertices,
            faces,
            name: name.into(),
        };
        let diag = mesh.bounding_box_diagonal();
        let min_area = T::lit(MIN_RELATIVE_FACE_AREA) * diag * diag;
        for fi in 0..mesh.faces.len() {
            let a = mesh.face_area(fi);
            if !(a > min_area) {
                return Err(Error::DegenerateFace {
                    face: fi,
                    reason: format!("area {:e} below tolerance {:e}", a.to_f64_lossless(), min_area.to_f64_lossless()),
                });
            }
        }
        Ok(mesh)
    }

    pub fn vertices(&self) -> &[[T; 3]] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn bounding_box_diagonal(&self) -> T {
        if self.vertices.is_empty() {
            return T::zero();
        }
        let mut lo = self.vertices[0];
        let mut hi = self.vertices[0];
        for v in &self.vertices {
            for d in 0..3 {
                lo[d] = lo[d].min(v[d]);
                hi[d] = hi[d].max(v[d]);
            }
        }
        norm(sub(hi, lo))
    }

    pub fn face_area(&self, face: usize) -> T {
        let [a, b, c] = self.faces[face].map(|i| self.vertices[i]);
        norm(cross(sub(b, a), sub(c, a))) * T::lit(0.5)
    }

    pub fn total_area(&self) -> T {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Vertex positions as an `n × 3` matrix.
    pub fn positions(&self) -> Matrix<T> {
        Matrix::from_fn(self.vertices.len(), 3, |i, j| self.vertices[i][j])
    }

    /// Unique undirected edges `(i, j)` with `i < j`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut edges: Vec<(usize, usize)> = self
            .faces
            .iter()
            .flat_map(|f| [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])])
            .map(|(a, b)| if a < b { (a, b) } else { (b, a) })
            .collect();
        edges.sort_unstable();
        edges.dedup();
        edges
    }

    pub fn median_edge_length(&self) -> T {
        let mut lengths: Vec<T> = self
            .edges()
            .into_iter()
            .map(|(i, j)| norm(sub(self.vertices[i], self.vertices[j])))
            .collect();
        if lengths.is_empty() {
            return T::zero();
        }
        lengths.sort_by(|a, b| a.partial_cmp(b).unwrap());
        lengths[lengths.len() / 2]
    }

    /// Applies `x -> s * R x + t` to every vertex.
    pub fn transformed(&self, rotation: &[[T; 3]; 3], scale: T, translation: [T; 3]) -> Self {
        let vertices = self
            .vertices
            .iter()
            .map(|v| {
                let mut out = [T::zero(); 3];
                for (r, o) in out.iter_mut().enumerate() {
                    *o = scale * (rotation[r][0] * v[0] + rotation[r][1] * v[1] + rotation[r][2] * v[2]) + translation[r];
                }
                out
            })
            .collect();
        Self {
            vertices,
            faces: self.faces.clone(),
            name: self.name.clone(),
        }
    }

    /// Relabels vertices so that new vertex `perm[old]` is old vertex `old`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.vertices.len());
        let mut vertices = vec![[T::zero(); 3]; perm.len()];
        for (old, &new) in perm.iter().enumerate() {
            vertices[new] = self.vertices[old];
        }
        let faces = self.faces.iter().map(|f| f.map(|v| perm[v])).collect();
        Self {
            vertices,
            faces,
            name: self.name.clone(),
        }
    }

    /// Keeps only the listed faces, dropping unreferenced vertices. Returns
    /// the sub-mesh and, for each kept vertex, its index in `self`.
    pub fn submesh(&self, face_ids: &[usize]) -> Result<(Self, Vec<usize>)> {
        let mut remap = vec![usize::MAX; self.vertices.len()];
        let mut kept = Vec::new();
        for &f in face_ids {
            for &v in &self.faces[f] {
                if remap[v] == usize::MAX {
                    remap[v] = 0;
                }
            }
        }
        for (v, r) in remap.iter_mut().enumerate() {
            if *r != usize::MAX {
                *r = kept.len();
                kept.push(v);
            }
        }
        let vertices = kept.iter().map(|&v| self.vertices[v]).collect();
        let faces = face_ids.iter().map(|&f| self.faces[f].map(|v| remap[v])).collect();
        Ok((Self::new(vertices, faces, format!("{}-part", self.name))?, kept))
    }
}

#[inline]
pub(crate) fn sub<T: Real>(a: [T; 3], b: [T; 3]) -> [T; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub(crate) fn dot3<T: Real>(a: [T; 3], b: [T; 3]) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub(crate) fn cross<T: Real>(a: [T; 3], b: [T; 3]) -> [T; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub(crate) fn norm<T: Real>(a: [T; 3]) -> T {
    dot3(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_faces() {
        let v = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        assert!(matches!(
            TriangleMesh::new(v.clone(), vec![[0, 1, 5]], "t"),
            Err(Error::IndexOutOfRange { index: 5, .. })
        ));
        assert!(matches!(
            TriangleMesh::new(v.clone(), vec![[0, 1, 1]], "t"),
            Err(Error::DegenerateFace { .. })
        ));
        let collinear = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]];
        assert!(matches!(
            TriangleMesh::new(collinear, vec![[0, 1, 2]], "t"),
            Err(Error::DegenerateFace { .. })
        ));
        let m = TriangleMesh::new(v, vec![[0, 1, 2]], "t").unwrap();
        assert_eq!(m.total_area(), 0.5);
    }

    #[test]
    fn permutation_round_trip() {
        let m = primitives::octahedron::<f64>();
        let perm = vec![3, 5, 0, 1, 4, 2];
        let p = m.permuted(&perm);
        for (old, &new) in perm.iter().enumerate() {
            assert_eq!(p.vertices()[new], m.vertices()[old]);
        }
        assert_eq!(p.total_area(), m.total_area());
    }
}
