use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    pub channels: usize,
    pub sa_enabled: bool,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            channels: 16,
            sa_enabled: true,
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 {
            return Err(Error::Config("channels must be >= 1".into()));
        }
        Ok(())
    }

    /// Width of the squeeze layer in each scale-attention branch.
    pub fn gate_hidden(&self) -> usize {
        (self.channels / 2).max(1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Param {
    fn zeros(name: &str, shape: &[usize]) -> Self {
        Self {
            name: name.to_string(),
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }
}

/// Fixed positions inside [`ModelParams::tensors`].
pub mod slot {
    pub const ENC1_W: usize = 0;
    pub const ENC1_B: usize = 1;
    pub const ENC2_W: usize = 2;
    pub const ENC2_B: usize = 3;
    pub const DEC1_W: usize = 4;
    pub const DEC1_B: usize = 5;
    pub const DEC2_W: usize = 6;
    pub const DEC2_B: usize = 7;
    pub const HEAD1_W: usize = 8;
    pub const HEAD1_B: usize = 9;
    pub const HEAD2_W: usize = 10;
    pub const HEAD2_B: usize = 11;
    pub const HEAD3_W: usize = 12;
    pub const HEAD3_B: usize = 13;
    /// First of four gate tensors (`w1, b1, w2, b2`) per branch; fine branch then coarse.
    pub const SA_BASE: usize = 14;
}

/// All trainable arrays of the segmenter, in a fixed order. The same type
/// carries gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub arch: ArchConfig,
    pub tensors: Vec<Param>,
}

impl ModelParams {
    pub fn zeros(arch: ArchConfig) -> Self {
        let c = arch.channels;
        let hd = arch.gate_hidden();
        let mut t = vec![
            Param::zeros("enc1.weight", &[c, 1, 3, 3]),
            Param::zeros("enc1.bias", &[c]),
            Param::zeros("enc2.weight", &[c, c, 3, 3]),
            Param::zeros("enc2.bias", &[c]),
            Param::zeros("dec1.weight", &[c, c + 1, 3, 3]),
            Param::zeros("dec1.bias", &[c]),
            Param::zeros("dec2.weight", &[c, c + 1, 3, 3]),
            Param::zeros("dec2.bias", &[c]),
            Param::zeros("head1.weight", &[c]),
            Param::zeros("head1.bias", &[1]),
            Param::zeros("head2.weight", &[c]),
            Param::zeros("head2.bias", &[1]),
            Param::zeros("head3.weight", &[c]),
            Param::zeros("head3.bias", &[1]),
        ];
        if arch.sa_enabled {
            for branch in ["fine", "coarse"] {
                t.push(Param::zeros(&format!("sa.{branch}.w1"), &[hd, c]));
                t.push(Param::zeros(&format!("sa.{branch}.b1"), &[hd]));
                t.push(Param::zeros(&format!("sa.{branch}.w2"), &[c, hd]));
                t.push(Param::zeros(&format!("sa.{branch}.b2"), &[c]));
            }
        }
        Self { arch, tensors: t }
    }

    #[inline]
    pub fn get(&self, slot: usize) -> &[f64] {
        &self.tensors[slot].data
    }

    #[inline]
    pub fn get_mut(&mut self, slot: usize) -> &mut [f64] {
        &mut self.tensors[slot].data
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|p| p.data.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|p| p.data.iter().copied()).collect()
    }

    pub fn unflatten(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_scalars());
        let mut off = 0;
        for p in &mut self.tensors {
            let n = p.data.len();
            p.data.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
    }

    /// `self += k * other`.
    pub fn axpy(&mut self, k: f64, other: &ModelParams) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += k * y;
            }
        }
    }

    pub fn scale(&mut self, k: f64) {
        for p in &mut self.tensors {
            p.data.iter_mut().for_each(|v| *v *= k);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|p| p.data.iter().all(|v| v.is_finite()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// One line of compact JSON (format, version, arch, manifest of names,
    /// shapes and element offsets), `\n`, then the little-endian `f64` payload.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut offset = 0;
        let manifest: Vec<ManifestEntry> = self
            .tensors
            .iter()
            .map(|p| {
                let e = ManifestEntry {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    offset,
                };
                offset += p.data.len();
                e
            })
            .collect();
        let header = Header {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            arch: self.arch,
            params: manifest,
            payload_len: offset,
        };
        let mut out = serde_json::to_vec(&header).expect("header serializes");
        out.push(b'\n');
        for p in &self.tensors {
            for v in &p.data {
                out.write_all(&v.to_le_bytes()).expect("vec write");
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::ModelFormat("missing header terminator".into()))?;
        let header: Header = serde_json::from_slice(&bytes[..nl])?;
        if header.format != MODEL_FORMAT || header.version != MODEL_VERSION {
            return Err(Error::ModelFormat(format!(
                "unsupported format {} v{}",
                header.format, header.version
            )));
        }
        header.arch.validate()?;
        let payload = &bytes[nl + 1..];
        if payload.len() != header.payload_len * 8 {
            return Err(Error::ModelFormat(format!(
                "payload is {} bytes, expected {}",
                payload.len(),
                header.payload_len * 8
            )));
        }
        let mut params = ModelParams::zeros(header.arch);
        if params.tensors.len() != header.params.len() {
            return Err(Error::ModelFormat("parameter count does not match arch".into()));
        }
        for (p, e) in params.tensors.iter_mut().zip(&header.params) {
            if p.name != e.name || p.shape != e.shape {
                return Err(Error::ModelFormat(format!("unexpected parameter {}", e.name)));
            }
            let n = p.data.len();
            if e.offset + n > header.payload_len {
                return Err(Error::ModelFormat(format!("{} overruns payload", e.name)));
            }
            for (k, v) in p.data.iter_mut().enumerate() {
                let at = (e.offset + k) * 8;
                *v = f64::from_le_bytes(payload[at..at + 8].try_into().expect("8 bytes"));
            }
        }
        Ok(params)
    }
}

const MODEL_FORMAT: &str = "weakseg-model";
const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    arch: ArchConfig,
    params: Vec<ManifestEntry>,
    payload_len: usize,
}

/// He-style uniform init (`±sqrt(6 / fan_in)`) for kernels and gates; biases
/// and the three prediction heads start at zero, so every head outputs 0.5.
pub fn init_params(seed: u64, arch: ArchConfig) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParams::zeros(arch);
    for p in &mut params.tensors {
        let is_kernel = p.name.ends_with(".weight") || p.name.ends_with(".w1") || p.name.ends_with(".w2");
        if !is_kernel || p.name.starts_with("head") {
            continue;
        }
        let fan_in: usize = p.shape[1..].iter().product();
        let bound = (6.0 / fan_in as f64).sqrt();
        p.data.iter_mut().for_each(|v| *v = rng.random_range(-bound..bound));
    }
    params
}
