//! Binary file formats, all little-endian.
//!
//! | magic  | layout |
//! |--------|--------|
//! | `TBT1` | `u32 N`, `N × u64` dims, values first-index-fastest |
//! | `TTT1` | `u32 N`, `(N+1) × u64` ranks, `N × u64` dims, cores in order |
//! | `TTM1` | `u32 N`, `(N+1) × u64` ranks, `N × u64` row dims, `N × u64` column dims, cores `R×I×J×R'` |
//! | `TBM1` | `u8` kind (0 CP, 1 Tucker, 2 TT), `u32 N`, `N × u64` dims, kind data, `f64 σ²`, components, `u8` prior flag, priors |
//!
//! Kind data is `u64 R` and `R × f64` weights for CP, `N × u64` ranks and the
//! core values for Tucker, and the `(N+1) × u64` rank chain for TT. Each
//! component is its mean followed by its covariance, column-major.

use std::fmt::Write as _;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use nalgebra::{DMatrix, DVector};

use crate::als::{BayesTDModel, GaussianComponent, TDKind};
use crate::error::{Error, Result};
use crate::tensor::DenseTensor;
use crate::tt::{TTMatrix, TensorTrain};

pub const MAX_MODES: usize = 16;

/// Any of the supported binary objects.
#[derive(Clone, Debug)]
pub enum BinaryObject {
    Tensor(DenseTensor),
    Train(TensorTrain),
    Matrix(TTMatrix),
    Model(BayesTDModel),
}

impl BinaryObject {
    pub fn magic(&self) -> &'static [u8; 4] {
        match self {
            BinaryObject::Tensor(_) => b"TBT1",
            BinaryObject::Train(_) => b"TTT1",
            BinaryObject::Matrix(_) => b"TTM1",
            BinaryObject::Model(_) => b"TBM1",
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Vec::new();
        w.extend_from_slice(self.magic());
        match self {
            BinaryObject::Tensor(t) => {
                put_len(&mut w, t.order())?;
                put_u64s(&mut w, t.dims());
                put_f64s(&mut w, t.data());
            }
            BinaryObject::Train(tt) => {
                put_len(&mut w, tt.order())?;
                put_u64s(&mut w, &tt.ranks());
                put_u64s(&mut w, &tt.dims());
                for c in tt.cores() {
                    put_f64s(&mut w, c.data());
                }
            }
            BinaryObject::Matrix(m) => {
                put_len(&mut w, m.order())?;
                put_u64s(&mut w, &m.ranks());
                put_u64s(&mut w, &m.row_dims());
                put_u64s(&mut w, &m.col_dims());
                for c in m.cores() {
                    put_f64s(&mut w, c.data());
                }
            }
            BinaryObject::Model(model) => write_model(&mut w, model)?,
        }
        Ok(w)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { cur: Cursor::new(bytes) };
        let mut magic = [0u8; 4];
        r.cur.read_exact(&mut magic).map_err(|_| Error::Format("file shorter than its magic".into()))?;
        let obj = match &magic {
            b"TBT1" => {
                let n = r.order()?;
                let dims = r.u64s(n)?;
                let data = r.f64s(product(&dims)?)?;
                BinaryObject::Tensor(DenseTensor::new(dims, data)?)
            }
            b"TTT1" => {
                let n = r.order()?;
                let ranks = r.u64s(n + 1)?;
                let dims = r.u64s(n)?;
                let mut data = Vec::with_capacity(n);
                for k in 0..n {
                    data.push(r.f64s(product(&[ranks[k], dims[k], ranks[k + 1]])?)?);
                }
                BinaryObject::Train(TensorTrain::from_parts(&dims, &ranks, data)?)
            }
            b"TTM1" => {
                let n = r.order()?;
                let ranks = r.u64s(n + 1)?;
                let rows = r.u64s(n)?;
                let cols = r.u64s(n)?;
                let mut cores = Vec::with_capacity(n);
                for k in 0..n {
                    let dims = vec![ranks[k], rows[k], cols[k], ranks[k + 1]];
                    let data = r.f64s(product(&dims)?)?;
                    cores.push(DenseTensor::new(dims, data)?);
                }
                BinaryObject::Matrix(TTMatrix::new(cores)?)
            }
            b"TBM1" => BinaryObject::Model(read_model(&mut r)?),
            other => return Err(Error::Format(format!("unknown magic {:?}", String::from_utf8_lossy(other)))),
        };
        let rest = bytes.len() as u64 - r.cur.position();
        if rest != 0 {
            return Err(Error::Format(format!("{rest} trailing bytes")));
        }
        Ok(obj)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    /// One-paragraph human-readable summary.
    pub fn describe(&self) -> String {
        let mut s = String::new();
        match self {
            BinaryObject::Tensor(t) => {
                let _ = write!(s, "dense tensor (TBT1)\n  dims {:?}\n  elements {}\n  frobenius norm {:.6e}", t.dims(), t.len(), t.frobenius_norm());
            }
            BinaryObject::Train(tt) => {
                let _ = write!(
                    s,
                    "tensor train (TTT1)\n  dims {:?}\n  ranks {:?}\n  parameters {}\n  frobenius norm {:.6e}",
                    tt.dims(),
                    tt.ranks(),
                    tt.num_params(),
                    tt.frobenius_norm()
                );
            }
            BinaryObject::Matrix(m) => {
                let _ = write!(
                    s,
                    "TT-matrix (TTM1)\n  row dims {:?}\n  column dims {:?}\n  ranks {:?}\n  parameters {}\n  frobenius norm {:.6e}",
                    m.row_dims(),
                    m.col_dims(),
                    m.ranks(),
                    m.num_params(),
                    m.frobenius_norm()
                );
            }
            BinaryObject::Model(model) => {
                let _ = write!(s, "{} model (TBM1)\n  dims {:?}\n", model.kind.name(), model.dims);
                match &model.kind {
                    TDKind::CP { rank, lambda } => {
                        let _ = writeln!(s, "  rank {rank}\n  weights {lambda:?}");
                    }
                    TDKind::Tucker { ranks, .. } => {
                        let _ = writeln!(s, "  core dims {ranks:?}");
                    }
                    TDKind::TT { ranks } => {
                        let _ = writeln!(s, "  ranks {ranks:?}");
                    }
                }
                let _ = write!(s, "  noise variance {:e}\n  component sizes {:?}", model.noise_var, model.component_sizes());
                for (n, c) in model.components.iter().enumerate() {
                    if let Ok(tr) = c.cov_trace() {
                        let _ = write!(s, "\n  component {}: |mean| {:.6e}, tr(P) {:.6e}", n + 1, c.mean().norm(), tr);
                    }
                }
            }
        }
        s
    }
}

fn product(dims: &[usize]) -> Result<usize> {
    dims.iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| Error::Format(format!("dimensions {dims:?} overflow")))
}

fn put_len(w: &mut Vec<u8>, n: usize) -> Result<()> {
    if n == 0 || n > MAX_MODES {
        return Err(Error::Parameter(format!("{n} modes; supported are 1..={MAX_MODES}")));
    }
    w.write_u32::<LE>(n as u32).expect("vec write");
    Ok(())
}

fn put_u64s(w: &mut Vec<u8>, xs: &[usize]) {
    for &x in xs {
        w.write_u64::<LE>(x as u64).expect("vec write");
    }
}

fn put_f64s(w: &mut Vec<u8>, xs: &[f64]) {
    w.reserve(8 * xs.len());
    for &x in xs {
        w.write_f64::<LE>(x).expect("vec write");
    }
}

struct Reader<'a> {
    cur: Cursor<&'a [u8]>,
}

impl Reader<'_> {
    fn remaining(&self) -> u64 {
        self.cur.get_ref().len() as u64 - self.cur.position()
    }

    fn need(&self, bytes: u64) -> Result<()> {
        if self.remaining() < bytes {
            return Err(Error::Format(format!("truncated: need {bytes} bytes, {} left", self.remaining())));
        }
        Ok(())
    }

    fn u8(&mut self) -> Result<u8> {
        self.need(1)?;
        Ok(self.cur.read_u8().expect("checked length"))
    }

    fn order(&mut self) -> Result<usize> {
        self.need(4)?;
        let n = self.cur.read_u32::<LE>().expect("checked length") as usize;
        if n == 0 || n > MAX_MODES {
            return Err(Error::Format(format!("{n} modes; supported are 1..={MAX_MODES}")));
        }
        Ok(n)
    }

    fn u64s(&mut self, n: usize) -> Result<Vec<usize>> {
        self.need(8 * n as u64)?;
        (0..n)
            .map(|_| {
                let v = self.cur.read_u64::<LE>().expect("checked length");
                usize::try_from(v).map_err(|_| Error::Format(format!("size {v} does not fit in memory")))
            })
            .collect()
    }

    fn f64(&mut self) -> Result<f64> {
        self.need(8)?;
        Ok(self.cur.read_f64::<LE>().expect("checked length"))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = (n as u64).checked_mul(8).ok_or_else(|| Error::Format("size overflow".into()))?;
        self.need(bytes)?;
        let mut v = vec![0.0; n];
        self.cur.read_f64_into::<LE>(&mut v).expect("checked length");
        Ok(v)
    }

    fn component(&mut self, k: usize) -> Result<GaussianComponent> {
        let mean = DVector::from_vec(self.f64s(k)?);
        let cov = DMatrix::from_vec(k, k, self.f64s(product(&[k, k])?)?);
        GaussianComponent::new(mean, cov)
    }
}

fn write_components(w: &mut Vec<u8>, comps: &[GaussianComponent]) -> Result<()> {
    for c in comps {
        put_f64s(w, c.mean().as_slice());
        put_f64s(w, c.cov()?.as_slice());
    }
    Ok(())
}

fn write_model(w: &mut Vec<u8>, model: &BayesTDModel) -> Result<()> {
    let tag = match model.kind {
        TDKind::CP { .. } => 0u8,
        TDKind::Tucker { .. } => 1,
        TDKind::TT { .. } => 2,
    };
    w.push(tag);
    put_len(w, model.order())?;
    put_u64s(w, &model.dims);
    match &model.kind {
        TDKind::CP { rank, lambda } => {
            put_u64s(w, &[*rank]);
            put_f64s(w, lambda);
        }
        TDKind::Tucker { ranks, core } => {
            put_u64s(w, ranks);
            put_f64s(w, core.data());
        }
        TDKind::TT { ranks } => put_u64s(w, ranks),
    }
    put_f64s(w, &[model.noise_var]);
    write_components(w, &model.components)?;
    w.push(1);
    write_components(w, &model.priors)
}

fn read_model(r: &mut Reader) -> Result<BayesTDModel> {
    let tag = r.u8()?;
    let n = r.order()?;
    let dims = r.u64s(n)?;
    let kind = match tag {
        0 => {
            let rank = r.u64s(1)?[0];
            let lambda = r.f64s(rank)?;
            TDKind::CP { rank, lambda }
        }
        1 => {
            let ranks = r.u64s(n)?;
            let core = DenseTensor::new(ranks.clone(), r.f64s(product(&ranks)?)?)?;
            TDKind::Tucker { ranks, core }
        }
        2 => TDKind::TT { ranks: r.u64s(n + 1)? },
        t => return Err(Error::Format(format!("unknown model kind tag {t}"))),
    };
    let noise_var = r.f64()?;
    let sizes = sizes_for(&kind, &dims)?;
    let components = sizes.iter().map(|&k| r.component(k)).collect::<Result<Vec<_>>>()?;
    let priors = match r.u8()? {
        0 => components.clone(),
        1 => sizes.iter().map(|&k| r.component(k)).collect::<Result<Vec<_>>>()?,
        f => return Err(Error::Format(format!("unknown prior flag {f}"))),
    };
    let mut model = BayesTDModel::new(kind.clone(), dims, noise_var, priors)?;
    // `new` renormalizes CP weights; keep the stored state as written.
    model.kind = kind;
    model.components = components;
    Ok(model)
}

fn sizes_for(kind: &TDKind, dims: &[usize]) -> Result<Vec<usize>> {
    let n = dims.len();
    match kind {
        TDKind::CP { rank, .. } => dims.iter().map(|d| d.checked_mul(*rank).ok_or_else(|| Error::Format("size overflow".into()))).collect(),
        TDKind::Tucker { ranks, .. } => dims.iter().zip(ranks).map(|(d, r)| d.checked_mul(*r).ok_or_else(|| Error::Format("size overflow".into()))).collect(),
        TDKind::TT { ranks } => {
            if ranks.len() != n + 1 {
                return Err(Error::Format("rank chain length".into()));
            }
            (0..n).map(|k| product(&[ranks[k], dims[k], ranks[k + 1]])).collect()
        }
    }
}

/// Writes a vector as a one-column CSV with a header.
pub fn write_vector_csv(path: &Path, name: &str, v: &[f64]) -> Result<()> {
    let mut s = format!("index,{name}\n");
    for (i, x) in v.iter().enumerate() {
        let _ = writeln!(s, "{},{x:.17e}", i + 1);
    }
    std::fs::write(path, s)?;
    Ok(())
}
