//! `SPHM` model files: spec text, parameters and optional optimizer state.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "SPHM" | version u32 | spec_len u64 | spec (UTF-8 canonical text)
//! n_params u64 | n_params × f64
//! has_adam u8 | [t u64 | n_params × f64 (m) | n_params × f64 (v)]
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::adam::AdamState;
use super::spec::{count_parameters, ModelSpec};

const MAGIC: &[u8; 4] = b"SPHM";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelFile {
    pub spec: ModelSpec,
    pub params: Vec<f64>,
    pub adam: Option<AdamState>,
}

fn put_f64s(out: &mut Vec<u8>, v: &[f64]) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

impl ModelFile {
    pub fn to_bytes(&self) -> Vec<u8> {
        let text = self.spec.to_canonical_text();
        let mut out = Vec::with_capacity(32 + text.len() + 24 * self.params.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(text.len() as u64).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        put_f64s(&mut out, &self.params);
        match &self.adam {
            None => out.push(0),
            Some(s) => {
                out.push(1);
                out.extend_from_slice(&s.t.to_le_bytes());
                put_f64s(&mut out, &s.m);
                put_f64s(&mut out, &s.v);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a model file (bad magic)".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported model file version {version}")));
        }
        let len = read_u64(&mut r)? as usize;
        if len > r.len() {
            return Err(Error::Format("truncated model spec".into()));
        }
        let text = std::str::from_utf8(&r[..len]).map_err(|_| Error::Format("model spec is not UTF-8".into()))?;
        let spec = ModelSpec::from_canonical_text(text)?;
        r = &r[len..];
        let n = read_u64(&mut r)? as usize;
        if n != count_parameters(&spec) {
            return Err(Error::Format(format!("file holds {n} parameters, spec needs {}", count_parameters(&spec))));
        }
        let params = read_f64s(&mut r, n)?;
        let mut flag = [0u8; 1];
        read_exact(&mut r, &mut flag)?;
        let adam = match flag[0] {
            0 => None,
            1 => {
                let t = read_u64(&mut r)?;
                let m = read_f64s(&mut r, n)?;
                let v = read_f64s(&mut r, n)?;
                Some(AdamState { m, v, t })
            }
            f => return Err(Error::Format(format!("bad optimizer flag {f}"))),
        };
        if !r.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes after model data", r.len())));
        }
        Ok(ModelFile { spec, params, adam })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|_| Error::Format("unexpected end of file".into()))
}

pub(crate) fn read_u32(r: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64(r: &mut &[u8]) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64s(r: &mut &[u8], n: usize) -> Result<Vec<f64>> {
    if r.len() < n * 8 {
        return Err(Error::Format("unexpected end of file".into()));
    }
    let (head, tail) = r.split_at(n * 8);
    *r = tail;
    Ok(head.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::spec::{Head, LayerKind, LayerSpec, Nonlinearity};

    fn sample() -> ModelFile {
        let spec = ModelSpec::new(
            vec![
                LayerSpec::new(LayerKind::S2So3Conv, 1, 2, 4, 3, 0.5),
                LayerSpec::new(LayerKind::So3S2Conv, 2, 3, 3, 4, 0.7),
            ],
            Nonlinearity::Relu,
            Head::Segmentation,
        )
        .unwrap();
        let n = count_parameters(&spec);
        let params: Vec<f64> = (0..n).map(|i| (i as f64).sin() * 1e-3).collect();
        let mut adam = AdamState::new(n);
        adam.t = 17;
        adam.m[3] = f64::MIN_POSITIVE;
        adam.v[5] = 1.0 / 3.0;
        ModelFile { spec, params, adam: Some(adam) }
    }

    #[test]
    fn byte_exact_round_trip() {
        let m = sample();
        let bytes = m.to_bytes();
        let back = ModelFile::from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = sample().to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(ModelFile::from_bytes(&bad), Err(Error::Format(_))));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(ModelFile::from_bytes(&bad), Err(Error::Format(_))));
        assert!(matches!(ModelFile::from_bytes(&bytes[..bytes.len() - 3]), Err(Error::Format(_))));
    }
}
