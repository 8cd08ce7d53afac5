use crate::error::{Error, Result};
use crate::linalg::CsrMatrix;
use crate::mesh::{cross, dot3, norm, sub, TriangleMesh};
use crate::scalar::Real;

/// Magnitude at which corner cotangents are clamped.
pub const COTANGENT_CLAMP: f64 = 1e8;

/// Largest fraction of clamped corner cotangents tolerated before assembly
/// fails.
const MAX_CLAMPED_FRACTION: f64 = 1e-3;

/// Cotangent stiffness and lumped mass of a triangle mesh.
///
/// `stiffness` is positive semi-definite: off-diagonal entries are the
/// negated cotangent weights `-½(cot α + cot β)` and each diagonal entry is
/// the sum of that vertex's weights, so every row sums to zero.
#[derive(Clone, Debug)]
pub struct LaplacianPair<T> {
    pub stiffness: CsrMatrix<T>,
    pub mass: Vec<T>,
    pub total_area: T,
}

impl<T: Real> LaplacianPair<T> {
    pub fn num_vertices(&self) -> usize {
        self.mass.len()
    }

    /// Cotangent weight `½(cot α_ij + cot β_ij)` of edge `(i, j)`; zero for
    /// non-adjacent vertices.
    pub fn cotangent_weight(&self, i: usize, j: usize) -> T {
        -self.stiffness.get(i, j)
    }
}

pub fn compute_laplacian<T: Real>(mesh: &TriangleMesh<T>) -> Result<LaplacianPair<T>> {
    let n = mesh.num_vertices();
    let verts = mesh.vertices();
    let clamp = T::lit(COTANGENT_CLAMP);
    let half = T::lit(0.5);
    let third = T::one() / T::lit(3.0);

    let mut triplets = Vec::with_capacity(mesh.num_faces() * 6 + n);
    let mut diag = vec![T::zero(); n];
    let mut mass = vec![T::zero(); n];
    let mut clamped = 0usize;

    for (fi, f) in mesh.faces().iter().enumerate() {
        for corner in 0..3 {
            let k = f[corner];
            let i = f[(corner + 1) % 3];
            let j = f[(corner + 2) % 3];
            let e1 = sub(verts[i], verts[k]);
            let e2 = sub(verts[j], verts[k]);
            let mut cot = dot3(e1, e2) / norm(cross(e1, e2));
            if !cot.is_finite() {
                return Err(Error::DegenerateFace {
                    face: fi,
                    reason: "non-finite cotangent".into(),
                });
            }
            if cot.abs() > clamp {
                clamped += 1;
                cot = cot.signum() * clamp;
            }
            let w = half * cot;
            triplets.push((i, j, -w));
            triplets.push((j, i, -w));
            diag[i] += w;
            diag[j] += w;
        }
        let a = mesh.face_area(fi) * third;
        for &v in f {
            mass[v] += a;
        }
    }

    let corners = 3 * mesh.num_faces();
    if clamped > 0 {
        let fraction = clamped as f64 / corners as f64;
        if fraction > MAX_CLAMPED_FRACTION {
            return Err(Error::DegenerateFace {
                face: usize::MAX,
                reason: format!("{clamped} of {corners} cotangents exceed {COTANGENT_CLAMP:e}"),
            });
        }
        log::warn!(
            "mesh '{}': clamped {clamped} near-degenerate cotangents to ±{COTANGENT_CLAMP:e}",
            mesh.name()
        );
    }
    if let Some(v) = mass.iter().position(|&m| !(m > T::zero())) {
        return Err(Error::InvalidInput(format!(
            "vertex {v} of mesh '{}' is not referenced by any face",
            mesh.name()
        )));
    }

    for (i, d) in diag.into_iter().enumerate() {
        triplets.push((i, i, d));
    }
    let stiffness = CsrMatrix::from_triplets(n, n, triplets);
    let total_area = mass.iter().copied().sum();
    Ok(LaplacianPair {
        stiffness,
        mass,
        total_area,
    })
}
