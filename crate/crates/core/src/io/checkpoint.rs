//! The `FLOWGAN1` checkpoint format.
//!
//! All integers and reals are little-endian. Layout:
//!
//! ```text
//! magic "FLOWGAN1"
//! u64 iteration
//! str config echo                        (str = u32 length + UTF-8 bytes)
//! u32 block count, then per block:
//!     str name, u32 rank, u64 extent * rank, f64 value * product(extents)
//! u32 counter count, then per counter: str name, u64 value
//! u32 rng count, then per stream: str name, [u8; 32] seed, u64 stream, u128 word position
//! str metric log CSV
//! ```

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::nn::Parameterized;
use crate::rng::RngState;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"FLOWGAN1";

#[derive(Clone, Debug, PartialEq)]
pub struct ParamBlock {
    pub name: String,
    pub tensor: Tensor,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub iteration: u64,
    pub config_text: String,
    pub blocks: Vec<ParamBlock>,
    pub counters: Vec<(String, u64)>,
    pub rng_states: Vec<(String, RngState)>,
    pub log_csv: String,
}

impl Checkpoint {
    /// Appends every parameter of `model` as `prefix.name`.
    pub fn push_params(&mut self, prefix: &str, model: &dyn Parameterized) {
        for (name, t) in model.parameter_names().into_iter().zip(model.parameters()) {
            self.blocks.push(ParamBlock {
                name: format!("{prefix}.{name}"),
                tensor: t.clone(),
            });
        }
    }

    pub fn push_tensors(&mut self, prefix: &str, tensors: &[Tensor]) {
        for (i, t) in tensors.iter().enumerate() {
            self.blocks.push(ParamBlock {
                name: format!("{prefix}.{i}"),
                tensor: t.clone(),
            });
        }
    }

    pub fn block(&self, name: &str) -> Option<&Tensor> {
        self.blocks.iter().find(|b| b.name == name).map(|b| &b.tensor)
    }

    fn required_block(&self, name: &str, shape: &[usize]) -> Result<&Tensor> {
        let t = self
            .block(name)
            .ok_or_else(|| Error::Setup(format!("checkpoint has no block {name:?}")))?;
        if t.shape() != shape {
            return Err(Error::Setup(format!(
                "checkpoint block {name:?} has shape {:?}, model expects {shape:?}",
                t.shape()
            )));
        }
        Ok(t)
    }

    /// Overwrites the parameters of `model` from the `prefix.*` blocks,
    /// checking every shape against the model.
    pub fn load_params(&self, prefix: &str, model: &mut dyn Parameterized) -> Result<()> {
        let names = model.parameter_names();
        let mut loaded = Vec::with_capacity(names.len());
        for (name, t) in names.iter().zip(model.parameters()) {
            loaded.push(self.required_block(&format!("{prefix}.{name}"), t.shape())?.clone());
        }
        for (dst, src) in model.parameters_mut().into_iter().zip(loaded) {
            *dst = src;
        }
        Ok(())
    }

    /// Reads `prefix.0 .. prefix.{n-1}` with the given shapes.
    pub fn load_tensors(&self, prefix: &str, shapes: &[&[usize]]) -> Result<Vec<Tensor>> {
        shapes
            .iter()
            .enumerate()
            .map(|(i, s)| self.required_block(&format!("{prefix}.{i}"), s).cloned())
            .collect()
    }

    pub fn counter(&self, name: &str) -> Option<u64> {
        self.counters.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    pub fn rng(&self, name: &str) -> Option<&RngState> {
        self.rng_states.iter().find(|(n, _)| n == name).map(|(_, s)| s)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.iteration.to_le_bytes());
        put_str(&mut out, &self.config_text);
        put_u32(&mut out, self.blocks.len());
        for b in &self.blocks {
            put_str(&mut out, &b.name);
            put_u32(&mut out, b.tensor.rank());
            for &e in b.tensor.shape() {
                out.extend_from_slice(&(e as u64).to_le_bytes());
            }
            for v in b.tensor.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        put_u32(&mut out, self.counters.len());
        for (name, v) in &self.counters {
            put_str(&mut out, name);
            out.extend_from_slice(&v.to_le_bytes());
        }
        put_u32(&mut out, self.rng_states.len());
        for (name, s) in &self.rng_states {
            put_str(&mut out, name);
            out.extend_from_slice(&s.seed);
            out.extend_from_slice(&s.stream.to_le_bytes());
            out.extend_from_slice(&s.word_pos.to_le_bytes());
        }
        put_str(&mut out, &self.log_csv);
        out
    }

    /// Parses a checkpoint; `path` only labels error messages.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader {
            bytes,
            pos: 0,
            path: path.to_path_buf(),
        };
        let magic = r.take(8, "magic")?;
        if magic != MAGIC {
            return Err(r.error_at(
                0,
                format!("bad magic {:?}, expected \"FLOWGAN1\"", String::from_utf8_lossy(magic)),
            ));
        }
        let iteration = r.u64("iteration")?;
        let config_text = r.string("config echo")?;
        let n_blocks = r.u32("block count")?;
        let mut blocks = Vec::new();
        for _ in 0..n_blocks {
            let name = r.string("block name")?;
            let rank = r.u32("rank")? as usize;
            let start = r.pos;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64("extent")? as usize);
            }
            let count = shape
                .iter()
                .try_fold(1usize, |acc, &e| acc.checked_mul(e))
                .filter(|&c| c > 0 && c <= bytes.len() / 8)
                .ok_or_else(|| r.error_at(start, format!("implausible shape {shape:?} for block {name:?}")))?;
            let raw = r.take(8 * count, "block values")?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let tensor = Tensor::new(shape, data).map_err(|e| r.error_at(start, e.to_string()))?;
            blocks.push(ParamBlock { name, tensor });
        }
        let n_counters = r.u32("counter count")?;
        let mut counters = Vec::new();
        for _ in 0..n_counters {
            let name = r.string("counter name")?;
            counters.push((name, r.u64("counter")?));
        }
        let n_rng = r.u32("rng count")?;
        let mut rng_states = Vec::new();
        for _ in 0..n_rng {
            let name = r.string("rng name")?;
            let seed: [u8; 32] = r.take(32, "rng seed")?.try_into().unwrap();
            let stream = r.u64("rng stream")?;
            let word_pos = u128::from_le_bytes(r.take(16, "rng position")?.try_into().unwrap());
            rng_states.push((name, RngState { seed, stream, word_pos }));
        }
        let log_csv = r.string("metric log")?;
        if r.pos != bytes.len() {
            return Err(r.error_at(r.pos, format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint {
            iteration,
            config_text,
            blocks,
            counters,
            rng_states,
            log_csv,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?, path)
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: PathBuf,
}

impl<'a> Reader<'a> {
    fn error_at(&self, offset: usize, message: String) -> Error {
        Error::Format {
            path: self.path.clone(),
            offset: offset as u64,
            message,
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let available = self.bytes.len() - self.pos;
        if n > available {
            return Err(self.error_at(
                self.pos,
                format!("truncated {what}: expected {n} bytes, found {available}"),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)? as usize;
        let start = self.pos;
        let raw = self.take(n, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| self.error_at(start, format!("{what} is not UTF-8")))
    }
}
