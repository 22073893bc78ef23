//! Binary checkpoint files.
//!
//! Layout (little endian): magic `DITC`, version u32, model config JSON and
//! training config echo (each u32 length + UTF-8 bytes), iteration u64,
//! parameter blocks (count u32; per block name length u32 + bytes, rank u32,
//! dims u32 each, f64 payload), latent table (count u32, dim u32, init std
//! f64; per code id u32 + f64 values), then an optimizer flag byte followed by
//! the optimizer state when present.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{LatentCode, Model, ModelConfig};
use crate::nn::{Adam, AdamConfig, Parameterized};
use crate::training::{CodeAdam, LatentTable, OptimizerState};

const MAGIC: &[u8; 4] = b"DITC";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub latents: LatentTable,
    pub iteration: u64,
    /// Training configuration the checkpoint was produced with, as JSON.
    pub config_echo: String,
    pub optimizer: Option<OptimizerState>,
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.encode()).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::decode(&bytes).map_err(|e| match e {
            DecodeError::Format(msg) => Error::format(path, msg),
            DecodeError::Mismatch(msg) => {
                Error::CheckpointMismatch(format!("{}: {msg}", path.display()))
            }
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Vec::new();
        w.extend_from_slice(MAGIC);
        put_u32(&mut w, VERSION);
        let model_json =
            serde_json::to_string(&self.model.config).expect("model config serializes");
        put_str(&mut w, &model_json);
        put_str(&mut w, &self.config_echo);
        w.extend_from_slice(&self.iteration.to_le_bytes());

        let blocks = self.model.param_blocks();
        put_u32(&mut w, blocks.len() as u32);
        for b in &blocks {
            put_str(&mut w, &b.name);
            put_u32(&mut w, b.shape.len() as u32);
            for d in &b.shape {
                put_u32(&mut w, *d as u32);
            }
            put_f64s(&mut w, &b.values);
        }

        let table = &self.latents;
        put_u32(&mut w, table.codes.len() as u32);
        put_u32(&mut w, table.dim() as u32);
        put_f64s(&mut w, &[table.init_std]);
        for c in &table.codes {
            put_u32(&mut w, c.shape_id);
            put_f64s(&mut w, &c.values);
        }

        match &self.optimizer {
            None => w.push(0),
            Some(opt) => {
                w.push(1);
                put_adam_config(&mut w, &opt.net.config);
                w.extend_from_slice(&opt.net.step.to_le_bytes());
                for (m, v) in opt.net.first_moment.iter().zip(&opt.net.second_moment) {
                    put_f64s(&mut w, m);
                    put_f64s(&mut w, v);
                }
                put_adam_config(&mut w, &opt.code_config);
                for c in &opt.codes {
                    w.extend_from_slice(&c.step.to_le_bytes());
                    put_f64s(&mut w, &c.first_moment);
                    put_f64s(&mut w, &c.second_moment);
                }
            }
        }
        w
    }

    pub fn decode(bytes: &[u8]) -> std::result::Result<Self, DecodeError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(DecodeError::Format("bad magic, expected DITC".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(DecodeError::Format(format!(
                "unsupported version {version}"
            )));
        }
        let model_json = r.string()?;
        let config: ModelConfig = serde_json::from_str(&model_json)
            .map_err(|e| DecodeError::Format(format!("model config: {e}")))?;
        config
            .validate()
            .map_err(|e| DecodeError::Mismatch(e.to_string()))?;
        let config_echo = r.string()?;
        let iteration = r.u64()?;

        let mut model = Model::new(config, 0).map_err(|e| DecodeError::Mismatch(e.to_string()))?;
        let n_blocks = r.u32()? as usize;
        {
            let mut blocks = model.param_blocks_mut();
            if n_blocks != blocks.len() {
                return Err(DecodeError::Mismatch(format!(
                    "{n_blocks} parameter blocks, model has {}",
                    blocks.len()
                )));
            }
            for block in blocks.iter_mut() {
                let name = r.string()?;
                if name != block.name {
                    return Err(DecodeError::Mismatch(format!(
                        "block {name:?} where {:?} was expected",
                        block.name
                    )));
                }
                let rank = r.u32()? as usize;
                let dims = (0..rank)
                    .map(|_| r.u32().map(|d| d as usize))
                    .collect::<std::result::Result<Vec<_>, _>>()?;
                if dims != block.shape {
                    return Err(DecodeError::Mismatch(format!(
                        "block {name} has shape {dims:?}, model expects {:?}",
                        block.shape
                    )));
                }
                block.values = r.f64s(block.len())?;
            }
        }

        let count = r.u32()? as usize;
        let dim = r.u32()? as usize;
        if count > 0 && dim != model.latent_dim() {
            return Err(DecodeError::Mismatch(format!(
                "latent dim {dim}, model expects {}",
                model.latent_dim()
            )));
        }
        let init_std = r.f64s(1)?[0];
        let mut codes = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let id = r.u32()?;
            codes.push(LatentCode::new(id, r.f64s(dim)?));
        }
        let latents = LatentTable::from_codes(codes, init_std)
            .map_err(|e| DecodeError::Format(e.to_string()))?;

        let optimizer = match r.take(1)?[0] {
            0 => None,
            1 => {
                let net_config = r.adam_config()?;
                let step = r.u64()?;
                let mut first_moment = Vec::new();
                let mut second_moment = Vec::new();
                for b in model.param_blocks() {
                    first_moment.push(r.f64s(b.len())?);
                    second_moment.push(r.f64s(b.len())?);
                }
                let code_config = r.adam_config()?;
                let mut code_states = Vec::with_capacity(latents.codes.len());
                for _ in 0..latents.codes.len() {
                    let step = r.u64()?;
                    code_states.push(CodeAdam {
                        step,
                        first_moment: r.f64s(dim)?,
                        second_moment: r.f64s(dim)?,
                    });
                }
                Some(OptimizerState {
                    net: Adam {
                        config: net_config,
                        step,
                        first_moment,
                        second_moment,
                    },
                    code_config,
                    codes: code_states,
                })
            }
            f => return Err(DecodeError::Format(format!("bad optimizer flag {f}"))),
        };
        if r.pos != bytes.len() {
            return Err(DecodeError::Format("trailing bytes".into()));
        }
        Ok(Checkpoint {
            model,
            latents,
            iteration,
            config_echo,
            optimizer,
        })
    }
}

#[derive(Debug)]
pub enum DecodeError {
    Format(String),
    Mismatch(String),
}

impl From<String> for DecodeError {
    fn from(s: String) -> Self {
        DecodeError::Format(s)
    }
}

fn put_u32(w: &mut Vec<u8>, v: u32) {
    w.extend_from_slice(&v.to_le_bytes());
}

fn put_str(w: &mut Vec<u8>, s: &str) {
    put_u32(w, s.len() as u32);
    w.extend_from_slice(s.as_bytes());
}

fn put_f64s(w: &mut Vec<u8>, vals: &[f64]) {
    for v in vals {
        w.extend_from_slice(&v.to_le_bytes());
    }
}

fn put_adam_config(w: &mut Vec<u8>, c: &AdamConfig) {
    put_f64s(w, &[c.lr, c.beta1, c.beta2, c.eps]);
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], DecodeError> {
        if self.bytes.len() - self.pos < n {
            return Err(DecodeError::Format("unexpected end of file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, DecodeError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, DecodeError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> std::result::Result<String, DecodeError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| DecodeError::Format("invalid UTF-8".into()))
    }

    fn f64s(&mut self, n: usize) -> std::result::Result<Vec<f64>, DecodeError> {
        let raw = self.take(
            n.checked_mul(8)
                .ok_or_else(|| DecodeError::Format("length overflow".into()))?,
        )?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn adam_config(&mut self) -> std::result::Result<AdamConfig, DecodeError> {
        let v = self.f64s(4)?;
        Ok(AdamConfig {
            lr: v[0],
            beta1: v[1],
            beta2: v[2],
            eps: v[3],
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_checkpoint(with_opt: bool) -> Checkpoint {
        let config = ModelConfig {
            latent_dim: 3,
            hidden: 5,
            steps: 4,
            template_widths: vec![6, 6],
            softplus_beta: 10.0,
            head_init_scale: 0.01,
        };
        let model = Model::new(config, 7).unwrap();
        let latents = LatentTable::init(&[4, 9, 2], 3, 0.1, 3).unwrap();
        let optimizer = with_opt.then(|| OptimizerState::new(&model, &latents, 1e-3, 2e-3));
        Checkpoint {
            model,
            latents,
            iteration: 17,
            config_echo: "{\"iterations\":3}".into(),
            optimizer,
        }
    }

    #[test]
    fn encode_decode_round_trip_is_byte_identical() {
        for with_opt in [false, true] {
            let ck = sample_checkpoint(with_opt);
            let bytes = ck.encode();
            let back = Checkpoint::decode(&bytes).unwrap();
            assert_eq!(back, ck);
            assert_eq!(back.encode(), bytes);
        }
    }

    #[test]
    fn truncated_and_corrupt_files_rejected() {
        let bytes = sample_checkpoint(true).encode();
        for cut in [3, 10, bytes.len() / 2, bytes.len() - 1] {
            assert!(Checkpoint::decode(&bytes[..cut]).is_err());
        }
        let mut bad = bytes.clone();
        bad[1] = b'x';
        assert!(matches!(
            Checkpoint::decode(&bad),
            Err(DecodeError::Format(_))
        ));
        let mut extra = bytes;
        extra.push(0);
        assert!(Checkpoint::decode(&extra).is_err());
    }

    #[test]
    fn renamed_block_is_a_mismatch() {
        let mut ck = sample_checkpoint(false);
        ck.model.template.layers[0].weight.name = "other.weight".into();
        assert!(matches!(
            Checkpoint::decode(&ck.encode()),
            Err(DecodeError::Mismatch(_))
        ));
    }
}
