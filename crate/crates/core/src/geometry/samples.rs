use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{clamp_tsdf, Point3, ShapeSpec, DEFAULT_TRUNCATION};
use crate::error::{Error, Result};

const SAMPLES_MAGIC: &[u8; 4] = b"DITS";
const SAMPLES_VERSION: u32 = 1;

/// A point with its truncated signed distance. Both are exactly
/// representable as `f32`, which is how they are persisted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdfSample {
    pub point: Point3,
    pub sdf: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub shape_id: u32,
    pub samples: Vec<SdfSample>,
    pub n_surface: usize,
    pub n_uniform: usize,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn near_surface(&self) -> &[SdfSample] {
        &self.samples[..self.n_surface]
    }

    pub fn uniform(&self) -> &[SdfSample] {
        &self.samples[self.n_surface..]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingOptions {
    pub n_surface: usize,
    pub n_uniform: usize,
    /// Perturbation std of the first half of the near-surface budget; the
    /// second half uses a tenth of it.
    pub noise_sigma: f64,
    pub delta: f64,
}

impl Default for SamplingOptions {
    fn default() -> Self {
        Self {
            n_surface: 8000,
            n_uniform: 2000,
            noise_sigma: 0.0707,
            delta: DEFAULT_TRUNCATION,
        }
    }
}

/// Draws near-surface and uniform-in-ball SDF samples for one shape.
pub fn sample_sdf(
    shape_id: u32,
    spec: &ShapeSpec,
    opts: &SamplingOptions,
    seed: u64,
) -> Result<SampleSet> {
    spec.validate()?;
    if opts.n_surface == 0 || opts.n_uniform == 0 {
        return Err(Error::InvalidArgument(
            "sample counts must be positive".into(),
        ));
    }
    if !(opts.delta > 0.0) || !(opts.noise_sigma >= 0.0) {
        return Err(Error::InvalidArgument(
            "delta must be positive and noise_sigma non-negative".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(opts.n_surface + opts.n_uniform);
    let coarse = opts.n_surface.div_ceil(2);
    for i in 0..opts.n_surface {
        let sigma = if i < coarse {
            opts.noise_sigma
        } else {
            opts.noise_sigma * 0.1
        };
        let s = spec.sample_surface_point(&mut rng);
        let noise = Point3::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        samples.push(make_sample(spec, s + noise * sigma, opts.delta));
    }
    for _ in 0..opts.n_uniform {
        let p = loop {
            let p = Point3::new(
                rng.random_range(-1.0..=1.0),
                rng.random_range(-1.0..=1.0),
                rng.random_range(-1.0..=1.0),
            );
            if p.norm_squared() <= 1.0 {
                break p;
            }
        };
        samples.push(make_sample(spec, p, opts.delta));
    }
    Ok(SampleSet {
        shape_id,
        samples,
        n_surface: opts.n_surface,
        n_uniform: opts.n_uniform,
    })
}

fn make_sample(spec: &ShapeSpec, p: Point3, delta: f64) -> SdfSample {
    let point = p.quantize();
    let sdf = clamp_tsdf(spec.sdf(point), delta) as f32 as f64;
    SdfSample { point, sdf }
}

/// Writes sample sets in the `DITS` binary layout (little endian):
/// magic, version u32, set count u32, then per set id u32, surface count u32,
/// uniform count u32 and `(x, y, z, sdf)` f32 records.
pub fn write_sample_sets(path: impl AsRef<Path>, sets: &[SampleSet]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_sample_sets(sets)?).map_err(|e| Error::io(path, e))
}

pub fn encode_sample_sets(sets: &[SampleSet]) -> Result<Vec<u8>> {
    let total: usize = sets.iter().map(|s| s.samples.len()).sum();
    let mut buf = Vec::with_capacity(12 + sets.len() * 12 + total * 16);
    buf.extend_from_slice(SAMPLES_MAGIC);
    buf.extend_from_slice(&SAMPLES_VERSION.to_le_bytes());
    buf.extend_from_slice(&(sets.len() as u32).to_le_bytes());
    for set in sets {
        if set.n_surface + set.n_uniform != set.samples.len() {
            return Err(Error::InvalidArgument(format!(
                "shape {}: counts do not sum to sample count",
                set.shape_id
            )));
        }
        buf.extend_from_slice(&set.shape_id.to_le_bytes());
        buf.extend_from_slice(&(set.n_surface as u32).to_le_bytes());
        buf.extend_from_slice(&(set.n_uniform as u32).to_le_bytes());
        for s in &set.samples {
            for v in [s.point.x, s.point.y, s.point.z, s.sdf] {
                buf.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
    }
    Ok(buf)
}

pub fn read_sample_sets(path: impl AsRef<Path>) -> Result<Vec<SampleSet>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_sample_sets(&bytes).map_err(|msg| Error::format(path, msg))
}

pub fn decode_sample_sets(bytes: &[u8]) -> std::result::Result<Vec<SampleSet>, String> {
    let mut r = ByteReader { bytes, pos: 0 };
    if r.take(4)? != SAMPLES_MAGIC {
        return Err("bad magic, expected DITS".into());
    }
    let version = r.u32()?;
    if version != SAMPLES_VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let count = r.u32()? as usize;
    let mut sets = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let shape_id = r.u32()?;
        if sets.iter().any(|s: &SampleSet| s.shape_id == shape_id) {
            return Err(format!("duplicate shape id {shape_id}"));
        }
        let n_surface = r.u32()? as usize;
        let n_uniform = r.u32()? as usize;
        let n = n_surface + n_uniform;
        if r.remaining() < n * 16 {
            return Err(format!("shape {shape_id}: truncated records"));
        }
        let mut samples = Vec::with_capacity(n);
        for _ in 0..n {
            let x = r.f32()? as f64;
            let y = r.f32()? as f64;
            let z = r.f32()? as f64;
            let sdf = r.f32()? as f64;
            samples.push(SdfSample {
                point: Point3::new(x, y, z),
                sdf,
            });
        }
        sets.push(SampleSet {
            shape_id,
            samples,
            n_surface,
            n_uniform,
        });
    }
    if r.remaining() != 0 {
        return Err("trailing bytes after last sample set".into());
    }
    Ok(sets)
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        if self.remaining() < n {
            return Err("unexpected end of file".into());
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> std::result::Result<f32, String> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
