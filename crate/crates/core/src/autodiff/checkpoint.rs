//! Binary parameter checkpoints.
//!
//! Layout (little endian): the 7-byte magic `SMNET01`, a length-prefixed
//! UTF-8 configuration echo, the network shape (`input_dim`, `width`,
//! `blocks` as `u32`, `leaky_slope` as `f64`), a `u32` tensor count, then per
//! tensor a length-prefixed name, `u64` rows, `u64` cols and row-major `f64`
//! values. A trailing `u8` flags an Adam state; when it is 1 it is followed by
//! the step count (`u64`), `beta1`, `beta2`, `eps` (`f64`) and the first and
//! second moments of every tensor, in tensor order, shaped like the tensor.

use std::io::{Read, Write};
use std::path::Path;

use super::{AdamState, FeatureNet, NetConfig, Parameter};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Real;

pub const CHECKPOINT_MAGIC: &[u8; 7] = b"SMNET01";

/// Decoded checkpoint contents.
#[derive(Debug, Clone)]
pub struct Checkpoint<T> {
    pub config_echo: String,
    pub net: FeatureNet<T>,
    /// Optimizer state at the end of training, if it was saved.
    pub optimizer: Option<AdamState<T>>,
}

fn put_u32(w: &mut impl Write, x: usize) -> Result<()> {
    let x = u32::try_from(x).map_err(|_| Error::InvalidInput(format!("{x} does not fit a checkpoint field")))?;
    w.write_all(&x.to_le_bytes())?;
    Ok(())
}

fn put_str(w: &mut impl Write, s: &str) -> Result<()> {
    put_u32(w, s.len())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn put_values<T: Real>(w: &mut impl Write, m: &Matrix<T>) -> Result<()> {
    for &x in m.as_slice() {
        w.write_all(&x.to_f64_lossless().to_le_bytes())?;
    }
    Ok(())
}

pub fn write_checkpoint<T: Real>(
    w: &mut impl Write,
    net: &FeatureNet<T>,
    optimizer: Option<&AdamState<T>>,
    config_echo: &str,
) -> Result<()> {
    if let Some(adam) = optimizer {
        adam.check_compatible(net.params())?;
    }
    w.write_all(CHECKPOINT_MAGIC)?;
    put_str(w, config_echo)?;
    let cfg = net.config();
    put_u32(w, cfg.input_dim)?;
    put_u32(w, cfg.width)?;
    put_u32(w, cfg.blocks)?;
    w.write_all(&cfg.leaky_slope.to_le_bytes())?;
    put_u32(w, net.params().len())?;
    for p in net.params() {
        put_str(w, &p.name)?;
        w.write_all(&(p.value.rows() as u64).to_le_bytes())?;
        w.write_all(&(p.value.cols() as u64).to_le_bytes())?;
        put_values(w, &p.value)?;
    }
    match optimizer {
        None => w.write_all(&[0])?,
        Some(adam) => {
            w.write_all(&[1])?;
            w.write_all(&adam.steps().to_le_bytes())?;
            for x in [adam.beta1, adam.beta2, adam.eps] {
                w.write_all(&x.to_le_bytes())?;
            }
            for m in adam.first_moments().iter().chain(adam.second_moments()) {
                put_values(w, m)?;
            }
        }
    }
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| Error::parse(None, format!("truncated checkpoint: {e}")))?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.bytes()?) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }

    fn matrix<T: Real>(&mut self, rows: usize, cols: usize) -> Result<Matrix<T>> {
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(T::lit(self.f64()?));
        }
        Ok(Matrix::from_vec(rows, cols, data))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()?;
        let mut buf = Vec::new();
        (&mut self.inner)
            .take(len as u64)
            .read_to_end(&mut buf)
            .map_err(|e| Error::parse(None, format!("truncated checkpoint: {e}")))?;
        if buf.len() != len {
            return Err(Error::parse(None, "truncated checkpoint string"));
        }
        String::from_utf8(buf).map_err(|_| Error::parse(None, "checkpoint string is not UTF-8"))
    }
}

pub fn read_checkpoint<T: Real>(r: impl Read) -> Result<Checkpoint<T>> {
    let mut r = Reader { inner: r };
    if &r.bytes::<7>()? != CHECKPOINT_MAGIC {
        return Err(Error::parse(None, "not a specmatch checkpoint (bad magic)"));
    }
    let config_echo = r.string()?;
    let config = NetConfig {
        input_dim: r.u32()?,
        width: r.u32()?,
        blocks: r.u32()?,
        leaky_slope: r.f64()?,
    };
    config.validate()?;
    let count = r.u32()?;
    if count != config.layout().len() {
        return Err(Error::parse(None, format!("checkpoint lists {count} tensors for a {}-block network", config.blocks)));
    }
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        let name = r.string()?;
        let rows = r.u64()? as usize;
        let cols = r.u64()? as usize;
        if rows.saturating_mul(cols) > 1 << 28 {
            return Err(Error::parse(None, format!("implausible tensor shape {rows}x{cols} for {name}")));
        }
        params.push(Parameter {
            name,
            value: r.matrix(rows, cols)?,
        });
    }
    let optimizer = match r.bytes::<1>()?[0] {
        0 => None,
        1 => {
            let step = r.u64()?;
            let (beta1, beta2, eps) = (r.f64()?, r.f64()?, r.f64()?);
            let mut moments = Vec::with_capacity(2 * params.len());
            for p in params.iter().chain(&params) {
                moments.push(r.matrix(p.value.rows(), p.value.cols())?);
            }
            let second = moments.split_off(params.len());
            let mut adam = AdamState::from_moments(step, moments, second)?;
            adam.beta1 = beta1;
            adam.beta2 = beta2;
            adam.eps = eps;
            Some(adam)
        }
        flag => return Err(Error::parse(None, format!("bad optimizer flag {flag}"))),
    };
    let mut rest = [0u8; 1];
    if r.inner.read(&mut rest)? != 0 {
        return Err(Error::parse(None, "trailing bytes after checkpoint"));
    }
    let net = FeatureNet::from_parameters(config, params)?;
    Ok(Checkpoint {
        config_echo,
        net,
        optimizer,
    })
}

/// Writes next to `path` and renames into place.
pub fn save_checkpoint<T: Real>(
    path: &Path,
    net: &FeatureNet<T>,
    optimizer: Option<&AdamState<T>>,
    config_echo: &str,
) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut w = std::io::BufWriter::new(tmp.as_file_mut());
        write_checkpoint(&mut w, net, optimizer, config_echo)?;
        w.flush()?;
    }
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<Checkpoint<T>> {
    let file = std::fs::File::open(path)?;
    read_checkpoint(std::io::BufReader::new(file)).map_err(|e| match e {
        Error::Parse { message, .. } => Error::parse(Some(path), message),
        other => other,
    })
}
