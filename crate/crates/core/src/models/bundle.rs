//! Network parameters of the CNP / AdaCNP family and their checkpoint format.

use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numeric::checkpoint::{read_mlp, write_mlp, ByteReader};
use crate::numeric::{Activation, MlpNodes, MlpParams, Tape};

/// Lower bound added to every predicted variance (standardized units).
pub const VARIANCE_FLOOR: f64 = 1e-4;

pub const BUNDLE_MAGIC: &[u8; 4] = b"ACNP";
pub const BUNDLE_VERSION: u32 = 1;

/// Widths and knobs used to build a fresh [`ModelBundle`].
///
/// Hidden widths are not given by the method description; these defaults
/// train in minutes on one CPU core.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub embedding_dim: usize,
    pub representation_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub embedding_hidden: Vec<usize>,
    pub scorer_hidden: Vec<usize>,
    pub temperature: f64,
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embedding_dim: 32,
            representation_dim: 128,
            encoder_hidden: vec![128, 128],
            decoder_hidden: vec![128, 128],
            embedding_hidden: vec![64],
            scorer_hidden: vec![64],
            temperature: 1.0,
            activation: Activation::Relu,
        }
    }
}

/// Encoder `h`, embedding network `φ`, scorer `f`, decoder `g` and temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    encoder: MlpParams,
    embedding: MlpParams,
    scorer: MlpParams,
    decoder: MlpParams,
    temperature: f64,
    x_dim: usize,
    y_dim: usize,
}

fn sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut s = Vec::with_capacity(hidden.len() + 2);
    s.push(input);
    s.extend_from_slice(hidden);
    s.push(output);
    s
}

impl ModelBundle {
    pub fn new(
        encoder: MlpParams,
        embedding: MlpParams,
        scorer: MlpParams,
        decoder: MlpParams,
        temperature: f64,
    ) -> Result<Self> {
        check_temperature(temperature)?;
        let x_dim = embedding.input_dim();
        let d_e = embedding.output_dim();
        let d_r = encoder.output_dim();
        if encoder.input_dim() <= x_dim {
            return Err(Error::contract(format!(
                "encoder input {} must exceed the embedding input {x_dim}",
                encoder.input_dim()
            )));
        }
        let y_dim = encoder.input_dim() - x_dim;
        let checks = [
            ("scorer input", scorer.input_dim(), 2 * d_e),
            ("scorer output", scorer.output_dim(), 1),
            ("decoder input", decoder.input_dim(), x_dim + d_r),
            ("decoder output", decoder.output_dim(), 2 * y_dim),
        ];
        for (what, got, want) in checks {
            if got != want {
                return Err(Error::contract(format!("{what} is {got}, expected {want}")));
            }
        }
        Ok(Self {
            encoder,
            embedding,
            scorer,
            decoder,
            temperature,
            x_dim,
            y_dim,
        })
    }

    /// Fresh seeded parameters for `x_dim` inputs and `y_dim` outputs.
    pub fn init<R: Rng + ?Sized>(x_dim: usize, y_dim: usize, cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        if x_dim == 0 || y_dim == 0 {
            return Err(Error::contract("input and output dimensions must be positive"));
        }
        let (d_e, d_r) = (cfg.embedding_dim, cfg.representation_dim);
        let encoder = MlpParams::init(&sizes(x_dim + y_dim, &cfg.encoder_hidden, d_r), cfg.activation, rng)?;
        let embedding = MlpParams::init(&sizes(x_dim, &cfg.embedding_hidden, d_e), cfg.activation, rng)?;
        let scorer = MlpParams::init(&sizes(2 * d_e, &cfg.scorer_hidden, 1), cfg.activation, rng)?;
        let decoder = MlpParams::init(&sizes(x_dim + d_r, &cfg.decoder_hidden, 2 * y_dim), cfg.activation, rng)?;
        Self::new(encoder, embedding, scorer, decoder, cfg.temperature)
    }

    pub fn encoder(&self) -> &MlpParams {
        &self.encoder
    }

    pub fn embedding(&self) -> &MlpParams {
        &self.embedding
    }

    pub fn scorer(&self) -> &MlpParams {
        &self.scorer
    }

    pub fn decoder(&self) -> &MlpParams {
        &self.decoder
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn with_temperature(mut self, temperature: f64) -> Result<Self> {
        check_temperature(temperature)?;
        self.temperature = temperature;
        Ok(self)
    }

    pub fn x_dim(&self) -> usize {
        self.x_dim
    }

    pub fn y_dim(&self) -> usize {
        self.y_dim
    }

    pub fn embedding_dim(&self) -> usize {
        self.embedding.output_dim()
    }

    pub fn representation_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    pub fn activation(&self) -> Activation {
        self.encoder.activation()
    }

    pub fn num_params(&self) -> usize {
        self.networks().iter().map(|n| n.num_params()).sum()
    }

    fn networks(&self) -> [&MlpParams; 4] {
        [&self.encoder, &self.embedding, &self.scorer, &self.decoder]
    }

    /// All parameter buffers: encoder, embedding, scorer, decoder.
    pub fn buffers(&self) -> Vec<&[f64]> {
        self.networks().into_iter().flat_map(MlpParams::buffers).collect()
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = self.encoder.buffers_mut();
        out.extend(self.embedding.buffers_mut());
        out.extend(self.scorer.buffers_mut());
        out.extend(self.decoder.buffers_mut());
        out
    }

    pub fn register(&self, tape: &mut Tape) -> BundleNodes {
        BundleNodes {
            encoder: self.encoder.register(tape),
            embedding: self.embedding.register(tape),
            scorer: self.scorer.register(tape),
            decoder: self.decoder.register(tape),
        }
    }

    /// Serializes the bundle; `metadata` is an opaque UTF-8 block stored in the header.
    ///
    /// ```text
    /// magic "ACNP" | version u32 | d_x u32 | d_y u32 | d_e u32 | d_r u32 |
    /// temperature f64 | activation u8 | metadata_len u32 | metadata bytes |
    /// encoder, embedding, scorer, decoder as MLP blocks
    /// ```
    pub fn to_bytes(&self, metadata: &str) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + metadata.len() + 8 * self.num_params());
        out.extend_from_slice(BUNDLE_MAGIC);
        out.extend_from_slice(&BUNDLE_VERSION.to_le_bytes());
        for d in [self.x_dim, self.y_dim, self.embedding_dim(), self.representation_dim()] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.temperature.to_le_bytes());
        out.push(self.activation().tag());
        out.extend_from_slice(&(metadata.len() as u32).to_le_bytes());
        out.extend_from_slice(metadata.as_bytes());
        for net in self.networks() {
            write_mlp(&mut out, net);
        }
        out
    }

    /// Parses a checkpoint, returning the bundle and its metadata block.
    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, String)> {
        let mut r = ByteReader::new(bytes);
        let magic = r.take(4)?;
        if magic != BUNDLE_MAGIC {
            return Err(Error::Format("not a model checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != BUNDLE_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let header: Vec<usize> = (0..4).map(|_| r.u32().map(|v| v as usize)).collect::<Result<_>>()?;
        let temperature = r.f64()?;
        let activation = Activation::from_tag(r.u8()?)?;
        let meta_len = r.u32()? as usize;
        let metadata = String::from_utf8(r.take(meta_len)?.to_vec())
            .map_err(|_| Error::Format("metadata is not UTF-8".into()))?;
        let encoder = read_mlp(&mut r)?;
        let embedding = read_mlp(&mut r)?;
        let scorer = read_mlp(&mut r)?;
        let decoder = read_mlp(&mut r)?;
        if !r.is_at_end() {
            return Err(Error::Format("trailing bytes after checkpoint".into()));
        }
        let bundle = Self::new(encoder, embedding, scorer, decoder, temperature)?;
        let got = [bundle.x_dim, bundle.y_dim, bundle.embedding_dim(), bundle.representation_dim()];
        if got[..] != header[..] || bundle.activation() != activation {
            return Err(Error::Format(format!(
                "header dimensions {header:?} disagree with network shapes {got:?}"
            )));
        }
        Ok((bundle, metadata))
    }

    pub fn save(&self, path: &Path, metadata: &str) -> Result<()> {
        std::fs::write(path, self.to_bytes(metadata)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<(Self, String)> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn check_temperature(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::contract(format!("temperature must be positive, got {t}")))
    }
}

/// Tape handles for the four networks of a bundle.
#[derive(Debug, Clone)]
pub struct BundleNodes {
    pub encoder: MlpNodes,
    pub embedding: MlpNodes,
    pub scorer: MlpNodes,
    pub decoder: MlpNodes,
}

impl BundleNodes {
    /// Leaf ids in the same order as [`ModelBundle::buffers`].
    pub fn leaves(&self) -> Vec<crate::numeric::NodeId> {
        self.encoder
            .leaves()
            .chain(self.embedding.leaves())
            .chain(self.scorer.leaves())
            .chain(self.decoder.leaves())
            .collect()
    }
}
