//! Dataset generation and the `SPHD` file format.
//!
//! Layout, little-endian:
//!
//! ```text
//! "SPHD" | version u32 | L u32 | num_classes u32 | count u64
//! rotated u8 | projection_point u8 | threshold u8
//! per record: rotation 9 × f64 (row-major) | signal (2L)² × f32 | mask (2L)² × u8
//!             | n_sources u32 | n_sources × u64
//! ```

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Bandlimit, Rotation};
use crate::network::io::{read_u32, read_u64};
use crate::transforms::SphericalSignal;

use super::canvas::{paste_items, SourceImage, DIGIT_THRESHOLD};
use super::projection::{project_canvas_to_sphere, ProjectionPoint, DEFAULT_CAP_RADIUS};

const MAGIC: &[u8; 4] = b"SPHD";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataGenConfig {
    pub bandlimit: usize,
    pub items_per_sphere: usize,
    pub threshold: u8,
    #[serde(with = "projection_serde")]
    pub projection_point: ProjectionPoint,
    pub rotated: bool,
    pub seed: u64,
    pub num_classes: usize,
    /// Angular half-width of the canvas on the sphere, radians.
    pub cap_radius: f64,
}

mod projection_serde {
    use super::ProjectionPoint;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(p: &ProjectionPoint, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&p.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<ProjectionPoint, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

impl Default for DataGenConfig {
    fn default() -> Self {
        DataGenConfig {
            bandlimit: 50,
            items_per_sphere: 1,
            threshold: DIGIT_THRESHOLD,
            projection_point: ProjectionPoint::Pole,
            rotated: true,
            seed: 0,
            num_classes: 11,
            cap_radius: DEFAULT_CAP_RADIUS,
        }
    }
}

impl DataGenConfig {
    pub fn validate(&self) -> Result<()> {
        Bandlimit::new(self.bandlimit)?;
        if self.items_per_sphere == 0 {
            return Err(Error::Config("items_per_sphere must be at least 1".into()));
        }
        if self.num_classes < 2 || self.num_classes > 256 {
            return Err(Error::Config(format!("num_classes must lie in 2..=256, got {}", self.num_classes)));
        }
        if !(self.cap_radius > 0.0 && self.cap_radius < std::f64::consts::PI) {
            return Err(Error::Config(format!("cap_radius must lie in (0, π), got {}", self.cap_radius)));
        }
        Ok(())
    }

    pub fn header(&self, count: u64) -> DatasetHeader {
        DatasetHeader {
            bandlimit: self.bandlimit,
            num_classes: self.num_classes,
            count,
            rotated: self.rotated,
            projection_point: self.projection_point,
            threshold: self.threshold,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetRecord {
    pub signal: SphericalSignal,
    pub mask: Vec<u8>,
    pub rotation: Rotation,
    pub source_ids: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetHeader {
    pub bandlimit: usize,
    pub num_classes: usize,
    pub count: u64,
    pub rotated: bool,
    pub projection_point: ProjectionPoint,
    pub threshold: u8,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub records: Vec<DatasetRecord>,
}

/// Record `index` of the stream defined by `cfg`. Canvas composition and
/// rotation draw from separate ChaCha streams keyed by the index, so records
/// are order-independent and the canvas does not depend on `cfg.rotated`.
pub fn generate_record(cfg: &DataGenConfig, sources: &[SourceImage], index: u64) -> Result<DatasetRecord> {
    if sources.is_empty() {
        return Err(Error::Config("source image pool is empty".into()));
    }
    let mut canvas_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    canvas_rng.set_stream(2 * index);
    let mut rot_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rot_rng.set_stream(2 * index + 1);

    let ids: Vec<u64> = (0..cfg.items_per_sphere).map(|_| canvas_rng.gen_range(0..sources.len()) as u64).collect();
    let items: Vec<&SourceImage> = ids.iter().map(|&i| &sources[i as usize]).collect();
    if let Some(bad) = items.iter().find(|it| it.label as usize + 1 >= cfg.num_classes) {
        return Err(Error::Config(format!("label {} does not fit {} classes", bad.label, cfg.num_classes)));
    }
    let (canvas, _) = paste_items(&items, cfg.threshold, &mut canvas_rng);
    let rotation = if cfg.rotated { Rotation::random(&mut rot_rng) } else { Rotation::identity() };
    let l = Bandlimit::new(cfg.bandlimit)?;
    let (mut signal, mask) = project_canvas_to_sphere(&canvas, l, cfg.projection_point, &rotation, cfg.cap_radius);
    // stored as f32 on disk; keep memory and file identical
    signal.values.iter_mut().for_each(|v| *v = *v as f32 as f64);
    Ok(DatasetRecord { signal, mask, rotation, source_ids: ids })
}

pub fn generate_dataset(cfg: &DataGenConfig, sources: &[SourceImage], n: usize) -> Result<Dataset> {
    cfg.validate()?;
    let records = (0..n as u64)
        .into_par_iter()
        .map(|i| generate_record(cfg, sources, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { header: cfg.header(n as u64), records })
}

impl Dataset {
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let h = &self.header;
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(h.bandlimit as u32).to_le_bytes())?;
        w.write_all(&(h.num_classes as u32).to_le_bytes())?;
        w.write_all(&(self.records.len() as u64).to_le_bytes())?;
        w.write_all(&[u8::from(h.rotated), h.projection_point.code(), h.threshold])?;
        let pts = 4 * h.bandlimit * h.bandlimit;
        for r in &self.records {
            if r.signal.values.len() != pts || r.mask.len() != pts {
                return Err(Error::Shape("record does not match the dataset bandlimit".into()));
            }
            for row in r.rotation.matrix() {
                for v in row {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
            for v in &r.signal.values {
                w.write_all(&(*v as f32).to_le_bytes())?;
            }
            w.write_all(&r.mask)?;
            w.write_all(&(r.source_ids.len() as u32).to_le_bytes())?;
            for id in &r.source_ids {
                w.write_all(&id.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to memory cannot fail");
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        if r.len() < 4 || &r[..4] != MAGIC {
            return Err(Error::Format("not a dataset file (bad magic)".into()));
        }
        r = &r[4..];
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported dataset version {version}")));
        }
        let bandlimit = read_u32(&mut r)? as usize;
        let l = Bandlimit::new(bandlimit).map_err(|_| Error::Format("dataset bandlimit is zero".into()))?;
        let num_classes = read_u32(&mut r)? as usize;
        let count = read_u64(&mut r)?;
        let flags = take(&mut r, 3)?;
        let header = DatasetHeader {
            bandlimit,
            num_classes,
            count,
            rotated: flags[0] != 0,
            projection_point: ProjectionPoint::from_code(flags[1])?,
            threshold: flags[2],
        };
        let pts = 4 * bandlimit * bandlimit;
        let mut records = Vec::with_capacity(count.min(1 << 20) as usize);
        for _ in 0..count {
            let rot = take(&mut r, 72)?;
            let mut m = [[0.0; 3]; 3];
            for (k, c) in rot.chunks_exact(8).enumerate() {
                m[k / 3][k % 3] = f64::from_le_bytes(c.try_into().expect("8 bytes"));
            }
            let rotation = Rotation::from_matrix(m).map_err(|e| Error::Format(format!("bad rotation: {e}")))?;
            let sig = take(&mut r, 4 * pts)?;
            let values =
                sig.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64).collect();
            let mask = take(&mut r, pts)?.to_vec();
            if let Some(bad) = mask.iter().find(|&&c| c as usize >= num_classes) {
                return Err(Error::Format(format!("mask class {bad} exceeds {num_classes} classes")));
            }
            let n_ids = read_u32(&mut r)? as usize;
            let ids = take(&mut r, 8 * n_ids)?;
            let source_ids = ids.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            records.push(DatasetRecord {
                signal: SphericalSignal::new(l, 1, values)?,
                mask,
                rotation,
                source_ids,
            });
        }
        if !r.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes after dataset", r.len())));
        }
        Ok(Dataset { header, records })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn take<'a>(r: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if r.len() < n {
        return Err(Error::Format("unexpected end of file".into()));
    }
    let (head, tail) = r.split_at(n);
    *r = tail;
    Ok(head)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::sources::synthetic_digits;

    fn cfg(rotated: bool) -> DataGenConfig {
        DataGenConfig { bandlimit: 6, rotated, seed: 11, ..DataGenConfig::default() }
    }

    #[test]
    fn empty_dataset_has_valid_header() {
        let d = generate_dataset(&cfg(true), &synthetic_digits(5, 0), 0).unwrap();
        let back = Dataset::from_bytes(&d.to_bytes()).unwrap();
        assert_eq!(back.header.count, 0);
        assert!(back.records.is_empty());
    }

    #[test]
    fn file_round_trip_is_exact() {
        let d = generate_dataset(&cfg(true), &synthetic_digits(20, 0), 4).unwrap();
        let bytes = d.to_bytes();
        let back = Dataset::from_bytes(&bytes).unwrap();
        assert_eq!(back, d);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn unrotated_records_use_identity() {
        let d = generate_dataset(&cfg(false), &synthetic_digits(20, 0), 5).unwrap();
        assert!(d.records.iter().all(|r| r.rotation == Rotation::identity()));
    }

    #[test]
    fn canvas_choice_is_independent_of_rotation_flag() {
        let src = synthetic_digits(20, 0);
        let a = generate_record(&cfg(false), &src, 3).unwrap();
        let b = generate_record(&cfg(true), &src, 3).unwrap();
        assert_eq!(a.source_ids, b.source_ids);
        assert_ne!(a.rotation, b.rotation);
    }

    #[test]
    fn empty_pool_is_rejected() {
        assert!(generate_record(&cfg(false), &[], 0).is_err());
    }
}
