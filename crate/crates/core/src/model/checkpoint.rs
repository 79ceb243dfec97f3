//! Binary checkpoint: `MMRMODEL`, format version, config fields as
//! little-endian u64, then every tensor in declaration order as
//! `rank, rows, cols` (u64) followed by row-major little-endian f64 data.

use ndarray::Array2;

use super::params::{ModelConfig, ModelParams};
use super::ModelError;

pub const MAGIC: &[u8; 8] = b"MMRMODEL";
pub const VERSION: u64 = 1;

pub fn save(params: &ModelParams) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + params.num_params() * 8);
    out.extend_from_slice(MAGIC);
    let put = |out: &mut Vec<u8>, v: u64| out.extend_from_slice(&v.to_le_bytes());
    put(&mut out, VERSION);
    put(&mut out, ModelConfig::FIELDS as u64);
    for f in params.config.to_fields() {
        put(&mut out, f);
    }
    let tensors = params.tensors();
    put(&mut out, tensors.len() as u64);
    for t in tensors {
        put(&mut out, 2);
        put(&mut out, t.nrows() as u64);
        put(&mut out, t.ncols() as u64);
        for v in t.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], ModelError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            ModelError::Checkpoint(format!("truncated at byte {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn load(bytes: &[u8]) -> Result<ModelParams, ModelError> {
    let bad = |m: String| ModelError::Checkpoint(m);
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(8)? != MAGIC {
        return Err(bad("not a model checkpoint".into()));
    }
    let version = c.u64()?;
    if version != VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let n_fields = c.u64()?;
    if n_fields != ModelConfig::FIELDS as u64 {
        return Err(bad(format!("expected {} config fields, found {n_fields}", ModelConfig::FIELDS)));
    }
    let mut fields = [0u64; ModelConfig::FIELDS];
    for f in &mut fields {
        *f = c.u64()?;
    }
    let config = ModelConfig::from_fields(&fields);
    config.validate()?;
    let mut params = ModelParams::zeros(&config);
    let n_tensors = c.u64()?;
    let names = params.tensor_info();
    let mut tensors = params.tensors_mut();
    if n_tensors != tensors.len() as u64 {
        return Err(bad(format!("expected {} tensors, found {n_tensors}", tensors.len())));
    }
    for (t, info) in tensors.iter_mut().zip(&names) {
        let (rank, rows, cols) = (c.u64()?, c.u64()?, c.u64()?);
        if rank != 2 || (rows as usize, cols as usize) != t.dim() {
            return Err(bad(format!(
                "tensor {} has shape {rows}x{cols} (rank {rank}), expected {:?}",
                info.name,
                t.dim()
            )));
        }
        let data = c.take(t.len() * 8)?;
        let values: Vec<f64> = data
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        **t = Array2::from_shape_vec(t.dim(), values).expect("length checked");
    }
    if c.pos != bytes.len() {
        return Err(bad(format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    Ok(params)
}
