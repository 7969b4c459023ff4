//! Bit-exact training checkpoints.
//!
//! Layout, all integers and floats little-endian, floats as raw IEEE-754
//! bits, vectors as a `u64` length followed by their elements:
//!
//! ```text
//! magic "SSLCKPT\0", u32 version (1)
//! config          u64 length + UTF-8 TOML
//! architecture    u64 input_dim, [u64] encoder, u64 classes, u8 activation
//! params          [f64]
//! velocity        [f64]
//! shadow          f64 decay, [f64]
//! thresholds      u64 classes, f64 lambda, f64 tau, u64 t, u64 window,
//!                 u64 batches then batches x classes u64 counts, [f64] sigma
//! rng             32-byte seed, u64 stream, u128 word position
//! iteration       u64
//! ```

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{Activation, Architecture};
use crate::satpl::ThresholdState;

const MAGIC: &[u8; 8] = b"SSLCKPT\0";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdSnapshot {
    pub classes: usize,
    pub lambda: f64,
    pub tau: f64,
    pub t: u64,
    pub window: usize,
    pub history: Vec<Vec<u64>>,
    pub sigma: Vec<f64>,
}

impl ThresholdSnapshot {
    pub fn of(state: &ThresholdState) -> Self {
        Self {
            classes: state.classes(),
            lambda: state.lambda(),
            tau: state.tau(),
            t: state.iteration(),
            window: state.window(),
            history: state.history().map(<[u64]>::to_vec).collect(),
            sigma: state.sigma().to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn of(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn to_rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// The run configuration as TOML.
    pub config: String,
    pub architecture: Architecture,
    pub params: Vec<f64>,
    pub velocity: Vec<f64>,
    pub shadow_decay: f64,
    pub shadow: Vec<f64>,
    pub thresholds: ThresholdSnapshot,
    pub rng: RngState,
    /// Iterations completed.
    pub iteration: u64,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.0.extend_from_slice(&VERSION.to_le_bytes());
        w.bytes(self.config.as_bytes());
        let a = &self.architecture;
        w.u64(a.input_dim as u64);
        w.u64(a.encoder.len() as u64);
        for &width in &a.encoder {
            w.u64(width as u64);
        }
        w.u64(a.classes as u64);
        w.0.push(a.activation.code());
        w.reals(&self.params);
        w.reals(&self.velocity);
        w.f64(self.shadow_decay);
        w.reals(&self.shadow);
        let th = &self.thresholds;
        w.u64(th.classes as u64);
        w.f64(th.lambda);
        w.f64(th.tau);
        w.u64(th.t);
        w.u64(th.window as u64);
        w.u64(th.history.len() as u64);
        for batch in &th.history {
            for &c in batch {
                w.u64(c);
            }
        }
        w.reals(&th.sigma);
        w.0.extend_from_slice(&self.rng.seed);
        w.u64(self.rng.stream);
        w.0.extend_from_slice(&self.rng.word_pos.to_le_bytes());
        w.u64(self.iteration);
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader(bytes);
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::format("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(r.array()?);
        if version != VERSION {
            return Err(Error::format(format!("unsupported checkpoint version {version}")));
        }
        let config = String::from_utf8(r.bytes()?.to_vec()).map_err(|_| Error::format("config is not UTF-8"))?;
        let input_dim = r.usize()?;
        let layers = r.len(8)?;
        let encoder = (0..layers).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
        let classes = r.usize()?;
        let activation = Activation::from_code(r.take(1)?[0])
            .ok_or_else(|| Error::format("unknown activation code"))?;
        let architecture =
            Architecture::new(input_dim, encoder, classes, activation).map_err(|e| Error::format(e.to_string()))?;
        let params = r.reals()?;
        let velocity = r.reals()?;
        if params.len() != architecture.param_count() || velocity.len() != params.len() {
            return Err(Error::format("parameter block does not match the architecture"));
        }
        let shadow_decay = r.f64()?;
        let shadow = r.reals()?;
        if shadow.len() != params.len() {
            return Err(Error::format("shadow block does not match the architecture"));
        }
        let th_classes = r.usize()?;
        let lambda = r.f64()?;
        let tau = r.f64()?;
        let t = r.u64()?;
        let window = r.usize()?;
        let batches = r.len(8 * th_classes.max(1))?;
        let mut history = Vec::with_capacity(batches);
        for _ in 0..batches {
            history.push((0..th_classes).map(|_| r.u64()).collect::<Result<Vec<_>>>()?);
        }
        let sigma = r.reals()?;
        let seed = r.array()?;
        let stream = r.u64()?;
        let word_pos = u128::from_le_bytes(r.array()?);
        let iteration = r.u64()?;
        if !r.0.is_empty() {
            return Err(Error::format("trailing bytes after checkpoint"));
        }
        Ok(Self {
            config,
            architecture,
            params,
            velocity,
            shadow_decay,
            shadow,
            thresholds: ThresholdSnapshot {
                classes: th_classes,
                lambda,
                tau,
                t,
                window,
                history,
                sigma,
            },
            rng: RngState { seed, stream, word_pos },
            iteration,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.u64(v.to_bits());
    }

    fn bytes(&mut self, b: &[u8]) {
        self.u64(b.len() as u64);
        self.0.extend_from_slice(b);
    }

    fn reals(&mut self, v: &[f64]) {
        self.u64(v.len() as u64);
        for &x in v {
            self.f64(x);
        }
    }
}

struct Reader<'a>(&'a [u8]);

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.0.len() < n {
            return Err(Error::format("checkpoint is truncated"));
        }
        let (head, rest) = self.0.split_at(n);
        self.0 = rest;
        Ok(head)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut out = [0u8; N];
        out.copy_from_slice(self.take(N)?);
        Ok(out)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::format("count exceeds the address space"))
    }

    /// A length prefix, bounded by the bytes left at `unit` bytes per item.
    fn len(&mut self, unit: usize) -> Result<usize> {
        let n = self.usize()?;
        if n.saturating_mul(unit) > self.0.len() {
            return Err(Error::format("checkpoint is truncated"));
        }
        Ok(n)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }

    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.len(1)?;
        self.take(n)
    }

    fn reals(&mut self) -> Result<Vec<f64>> {
        let n = self.len(8)?;
        (0..n).map(|_| self.f64()).collect()
    }
}
