//! Per-mesh cache of the spectral preprocessing.
//!
//! Layout (little endian): the 7-byte magic `SMSPEC1`, `u32` format version,
//! `u64` FNV-1a hash of the mesh file bytes, `u64` requested `k`, the WKS
//! settings (`u64` energies, `f64` sigma factor, `u64` skip), `u64` vertex
//! count `n`, `u64` effective `k`, then `f64` arrays: `k` eigenvalues,
//! `n·k` eigenfunctions (row-major), `n` masses, `n·e` WKS entries.

use std::hash::Hasher;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use fnv::FnvHasher;

use crate::descriptors::{compute_wks, WksConfig};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::mesh::{compute_laplacian, load_mesh, TriangleMesh};
use crate::pipeline::Shape;
use crate::scalar::Real;
use crate::spectral::{eigendecompose, SpectralBasis};

pub const CACHE_MAGIC: &[u8; 7] = b"SMSPEC1";
pub const CACHE_FORMAT_VERSION: u32 = 1;
pub const CACHE_EXTENSION: &str = "smc";

/// 64-bit FNV-1a over the raw file bytes.
pub fn content_hash(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

/// Cache file for `mesh_path` inside `dir`: the mesh file stem with the
/// cache extension.
pub fn cache_path(dir: &Path, mesh_path: &Path) -> PathBuf {
    let stem = mesh_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "mesh".into());
    dir.join(format!("{stem}.{CACHE_EXTENSION}"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralCacheEntry {
    pub mesh_hash: u64,
    pub requested_k: usize,
    pub wks_config: WksConfig,
    pub eigenvalues: Vec<f64>,
    pub eigenfunctions: Matrix<f64>,
    pub mass: Vec<f64>,
    /// Raw WKS, before the per-channel standardization applied by [`Shape`].
    pub wks: Matrix<f64>,
}

impl SpectralCacheEntry {
    pub fn compute<T: Real>(mesh: &TriangleMesh<T>, mesh_hash: u64, k: usize, wks_config: &WksConfig) -> Result<Self> {
        let laplacian = compute_laplacian(mesh)?;
        let basis = eigendecompose(&laplacian, k)?;
        let wks = compute_wks(&basis, wks_config)?;
        let to64 = |m: &Matrix<T>| Matrix::from_fn(m.rows(), m.cols(), |i, j| m[(i, j)].to_f64_lossless());
        Ok(Self {
            mesh_hash,
            requested_k: k,
            wks_config: *wks_config,
            eigenvalues: basis.eigenvalues().iter().map(|x| x.to_f64_lossless()).collect(),
            eigenfunctions: to64(basis.eigenfunctions()),
            mass: basis.mass().iter().map(|x| x.to_f64_lossless()).collect(),
            wks: to64(&wks),
        })
    }

    pub fn k(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn num_vertices(&self) -> usize {
        self.mass.len()
    }

    /// Whether this entry answers a request for `k` pairs and `wks_config`
    /// on a mesh with hash `mesh_hash`.
    pub fn matches(&self, mesh_hash: u64, k: usize, wks_config: &WksConfig) -> bool {
        self.mesh_hash == mesh_hash && self.requested_k == k && self.wks_config == *wks_config
    }

    pub fn basis<T: Real>(&self) -> Result<SpectralBasis<T>> {
        let phi = Matrix::from_fn(self.eigenfunctions.rows(), self.eigenfunctions.cols(), |i, j| T::lit(self.eigenfunctions[(i, j)]));
        SpectralBasis::new(
            self.eigenvalues.iter().map(|&x| T::lit(x)).collect(),
            phi,
            self.mass.iter().map(|&x| T::lit(x)).collect(),
        )
    }

    pub fn into_shape<T: Real>(self, mesh: TriangleMesh<T>) -> Result<Shape<T>> {
        if mesh.num_vertices() != self.num_vertices() {
            return Err(Error::Cache(format!(
                "entry has {} vertices but mesh {} has {}",
                self.num_vertices(),
                mesh.name(),
                mesh.num_vertices()
            )));
        }
        let basis = self.basis()?;
        let wks = Matrix::from_fn(self.wks.rows(), self.wks.cols(), |i, j| T::lit(self.wks[(i, j)]));
        Shape::from_parts(mesh, basis, wks)
    }

    pub fn write(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(CACHE_MAGIC)?;
        w.write_all(&CACHE_FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&self.mesh_hash.to_le_bytes())?;
        for x in [self.requested_k, self.wks_config.num_energies] {
            w.write_all(&(x as u64).to_le_bytes())?;
        }
        w.write_all(&self.wks_config.sigma_factor.to_le_bytes())?;
        for x in [self.wks_config.skip_first, self.num_vertices(), self.k()] {
            w.write_all(&(x as u64).to_le_bytes())?;
        }
        let arrays = [
            self.eigenvalues.as_slice(),
            self.eigenfunctions.as_slice(),
            self.mass.as_slice(),
            self.wks.as_slice(),
        ];
        for x in arrays.into_iter().flatten() {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 7];
        read_exact(&mut r, &mut magic)?;
        if &magic != CACHE_MAGIC {
            return Err(Error::Cache("not a spectral cache file".into()));
        }
        let mut b4 = [0u8; 4];
        read_exact(&mut r, &mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != CACHE_FORMAT_VERSION {
            return Err(Error::Cache(format!("unsupported format version {version} (expected {CACHE_FORMAT_VERSION})")));
        }
        let mesh_hash = read_u64(&mut r)?;
        let requested_k = read_len(&mut r)?;
        let num_energies = read_len(&mut r)?;
        let sigma_factor = f64::from_bits(read_u64(&mut r)?);
        let skip_first = read_len(&mut r)?;
        let n = read_len(&mut r)?;
        let k = read_len(&mut r)?;
        if k > n || num_energies > 1 << 20 || n > 1 << 28 {
            return Err(Error::Cache(format!("implausible sizes n={n} k={k} energies={num_energies}")));
        }
        let eigenvalues = read_f64s(&mut r, k)?;
        let eigenfunctions = Matrix::from_vec(n, k, read_f64s(&mut r, n * k)?);
        let mass = read_f64s(&mut r, n)?;
        let wks = Matrix::from_vec(n, num_energies, read_f64s(&mut r, n * num_energies)?);
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Cache("trailing bytes after cache entry".into()));
        }
        Ok(Self {
            mesh_hash,
            requested_k,
            wks_config: WksConfig {
                num_energies,
                sigma_factor,
                skip_first,
            },
            eigenvalues,
            eigenfunctions,
            mass,
            wks,
        })
    }

    /// Writes to a temporary file in the same directory and renames it into
    /// place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        {
            let mut w = std::io::BufWriter::new(tmp.as_file_mut());
            self.write(&mut w)?;
            w.flush()?;
        }
        tmp.persist(path).map_err(|e| Error::Io(e.error))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read(std::io::BufReader::new(file)).map_err(|e| match e {
            Error::Cache(msg) => Error::Cache(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Cache("truncated cache entry".into()),
        _ => Error::Io(e),
    })
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_len(r: &mut impl Read) -> Result<usize> {
    let x = read_u64(r)?;
    usize::try_from(x).map_err(|_| Error::Cache(format!("length {x} does not fit in memory")))
}

fn read_f64s(r: &mut impl Read, count: usize) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; count * 8];
    read_exact(r, &mut bytes)?;
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

/// What [`preprocess_mesh`] did.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheStatus {
    Reused,
    Computed,
}

/// Ensures an up-to-date entry for `mesh_path` exists in `dir`. An existing
/// entry is left untouched when its hash, `k` and WKS settings match.
pub fn preprocess_mesh(mesh_path: &Path, dir: &Path, k: usize, wks_config: &WksConfig) -> Result<(PathBuf, CacheStatus)> {
    let bytes = std::fs::read(mesh_path)?;
    let hash = content_hash(&bytes);
    let out = cache_path(dir, mesh_path);
    if out.exists() {
        match SpectralCacheEntry::load(&out) {
            Ok(entry) if entry.matches(hash, k, wks_config) => return Ok((out, CacheStatus::Reused)),
            Ok(_) => log::info!("{} is stale, recomputing", out.display()),
            Err(e) => log::warn!("ignoring unreadable cache {}: {e}", out.display()),
        }
    }
    let mesh: TriangleMesh<f64> = load_mesh(mesh_path, None)?;
    let entry = SpectralCacheEntry::compute(&mesh, hash, k, wks_config)?;
    std::fs::create_dir_all(dir)?;
    entry.save(&out)?;
    Ok((out, CacheStatus::Computed))
}

/// Loads `mesh_path` and its cached spectral data, failing when the cache
/// is missing or was built from different bytes or settings.
pub fn load_cached_shape<T: Real>(mesh_path: &Path, dir: &Path, k: usize, wks_config: &WksConfig) -> Result<Shape<T>> {
    let bytes = std::fs::read(mesh_path)?;
    let path = cache_path(dir, mesh_path);
    if !path.exists() {
        return Err(Error::Cache(format!(
            "no cache for mesh {} (expected {}); run preprocess first",
            mesh_path.display(),
            path.display()
        )));
    }
    let entry = SpectralCacheEntry::load(&path)?;
    if !entry.matches(content_hash(&bytes), k, wks_config) {
        return Err(Error::Cache(format!(
            "cache {} does not match mesh {} or the requested k/WKS settings; rerun preprocess",
            path.display(),
            mesh_path.display()
        )));
    }
    let mesh = load_mesh(mesh_path, None)?;
    entry.into_shape(mesh)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::primitives;

    #[test]
    fn fnv1a_reference_values() {
        assert_eq!(content_hash(b""), 0xcbf29ce484222325);
        assert_eq!(content_hash(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(content_hash(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mesh = primitives::radial_bumps(&primitives::icosphere::<f64>(2), 0.1, 6, 7);
        let cfg = WksConfig {
            num_energies: 8,
            sigma_factor: 1.0,
            skip_first: 1,
        };
        let entry = SpectralCacheEntry::compute(&mesh, 42, 20, &cfg).unwrap();
        let mut buf = Vec::new();
        entry.write(&mut buf).unwrap();
        let back = SpectralCacheEntry::read(buf.as_slice()).unwrap();
        assert_eq!(back, entry);
        assert!(back.matches(42, 20, &cfg));
        assert!(!back.matches(43, 20, &cfg));

        buf.push(0);
        assert!(SpectralCacheEntry::read(buf.as_slice()).is_err());
        buf.truncate(buf.len() - 9);
        assert!(SpectralCacheEntry::read(buf.as_slice()).is_err());
    }

    #[test]
    fn k_too_large() {
        let mesh = primitives::octahedron::<f64>();
        assert!(matches!(
            SpectralCacheEntry::compute(&mesh, 0, 6, &WksConfig::default()),
            Err(Error::KTooLarge { k: 6, n: 6 })
        ));
    }
}
