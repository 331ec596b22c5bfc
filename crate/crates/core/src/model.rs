//! Featurizer and HIN parameters as one trainable model, plus the
//! checkpoint format.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Mat, Tape, Var};
use crate::featurize::{featurize, FeatureInputs, FeaturizerConfig, FeaturizerParams};
use crate::hin::{forward, HinConfig, HinError, HinParams, HinStructure, MixerLayer, NodeLayer};
use crate::io::{encode_f32_matrix, read_f32_matrix_from, read_u64};
use crate::params::{bind, join, named_leaves, Dropout, Init, Linear, Norm, ParamTree};

const MAGIC: &[u8; 8] = b"LKJNCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T = Mat> {
    pub featurizer: FeaturizerParams<T>,
    pub hin: HinParams<T>,
}

impl<T> ParamTree<T> for ModelParams<T> {
    type Mapped<U> = ModelParams<U>;

    fn map_params<U>(&self, prefix: &str, f: &mut dyn FnMut(&str, &T) -> U) -> ModelParams<U> {
        ModelParams {
            featurizer: self.featurizer.map_params(&join(prefix, "featurizer"), f),
            hin: self.hin.map_params(&join(prefix, "hin"), f),
        }
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut T)) {
        self.featurizer.visit_params_mut(&join(prefix, "featurizer"), f);
        self.hin.visit_params_mut(&join(prefix, "hin"), f);
    }
}

/// Which encoder produces the final embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Encoder {
    /// Featurizer followed by the HIN.
    Hin,
    /// Featurizer output, L2-normalized.
    FeaturesOnly,
}

impl ModelParams<Mat> {
    pub fn init(
        seed: u64,
        fcfg: &FeaturizerConfig,
        hcfg: &HinConfig,
        vocab_size: usize,
        word_dim: usize,
        num_tables: usize,
    ) -> Self {
        assert_eq!(fcfg.dim, hcfg.dim, "featurizer and HIN dimensions differ");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Init { rng: &mut rng };
        Self {
            featurizer: FeaturizerParams::init(&mut init, vocab_size, word_dim, fcfg.hidden_dim, fcfg.dim),
            hin: HinParams::init(&mut init, hcfg, num_tables),
        }
    }

    pub fn dim(&self) -> usize {
        self.hin.dim()
    }

    /// Embeddings in eval mode.
    pub fn embed(&self, inputs: &FeatureInputs, s: &HinStructure, encoder: Encoder) -> Result<Mat, HinError> {
        let mut tape = Tape::new();
        let p = bind(self, &mut tape);
        let out = embed(&mut tape, &p, inputs, s, encoder, &mut Dropout::eval())?;
        Ok(tape.value(out).clone())
    }

    fn skeleton(node_layers: usize, mixer_layers: usize, heads: usize) -> Self {
        let e = || Mat::zeros((0, 0));
        let lin = || Linear { w: e(), b: e() };
        let norm = || Norm { gain: e(), bias: e() };
        Self {
            featurizer: FeaturizerParams {
                token_emb: e(),
                hidden: lin(),
                out: lin(),
            },
            hin: HinParams {
                table_emb: e(),
                alpha: e(),
                beta: e(),
                pe_in: lin(),
                pe_out: lin(),
                node_layers: (0..node_layers).map(|_| NodeLayer { lin: lin(), norm: norm() }).collect(),
                w_inter: e(),
                w_intra: e(),
                mixers: (0..mixer_layers)
                    .map(|_| MixerLayer {
                        attn_norm: norm(),
                        w_q: e(),
                        w_k: e(),
                        w_v: e(),
                        w_o: e(),
                        mlp_norm: norm(),
                        w_1: e(),
                        w_2: e(),
                    })
                    .collect(),
                lambda_attn: e(),
                w_h2c: e(),
                out_norm: norm(),
                heads,
            },
        }
    }

    /// Shape consistency between all tensors.
    pub fn validate(&self) -> Result<(), String> {
        let d = self.hin.w_h2c.nrows();
        let f = &self.featurizer;
        let h = &self.hin;
        let k = h.pe_in.w.nrows();
        let hid = f.hidden.w.ncols();
        let mut checks: Vec<(&str, &Mat, (usize, usize))> = vec![
            ("featurizer.token_emb", &f.token_emb, (f.token_emb.nrows(), d)),
            ("featurizer.hidden.b", &f.hidden.b, (1, hid)),
            ("featurizer.out.w", &f.out.w, (hid, d)),
            ("featurizer.out.b", &f.out.b, (1, d)),
            ("hin.table_emb", &h.table_emb, (h.table_emb.nrows(), d)),
            ("hin.alpha", &h.alpha, (1, 1)),
            ("hin.beta", &h.beta, (1, 1)),
            ("hin.pe_in.w", &h.pe_in.w, (k, d)),
            ("hin.pe_in.b", &h.pe_in.b, (1, d)),
            ("hin.pe_out.w", &h.pe_out.w, (d, d)),
            ("hin.pe_out.b", &h.pe_out.b, (1, d)),
            ("hin.w_inter", &h.w_inter, (d, d)),
            ("hin.w_intra", &h.w_intra, (d, d)),
            ("hin.lambda_attn", &h.lambda_attn, (1, 1)),
            ("hin.w_h2c", &h.w_h2c, (d, d)),
            ("hin.out_norm.gain", &h.out_norm.gain, (1, d)),
            ("hin.out_norm.bias", &h.out_norm.bias, (1, d)),
        ];
        for l in &h.node_layers {
            checks.push(("node.lin.w", &l.lin.w, (d, d)));
            checks.push(("node.lin.b", &l.lin.b, (1, d)));
            checks.push(("node.norm.gain", &l.norm.gain, (1, d)));
            checks.push(("node.norm.bias", &l.norm.bias, (1, d)));
        }
        for m in &h.mixers {
            for w in [&m.w_q, &m.w_k, &m.w_v, &m.w_o] {
                checks.push(("mixer attention", w, (d, d)));
            }
            for n in [&m.attn_norm, &m.mlp_norm] {
                checks.push(("mixer norm gain", &n.gain, (1, d)));
                checks.push(("mixer norm bias", &n.bias, (1, d)));
            }
            checks.push(("mixer.w_1", &m.w_1, (d, 2 * d)));
            checks.push(("mixer.w_2", &m.w_2, (2 * d, d)));
        }
        for (name, m, want) in checks {
            if m.dim() != want {
                return Err(format!("{name} has shape {:?}, expected {want:?}", m.dim()));
            }
        }
        if h.heads == 0 || d % h.heads != 0 {
            return Err(format!("dimension {d} not divisible by {} heads", h.heads));
        }
        Ok(())
    }
}

/// Unit-norm column embeddings on the tape.
pub fn embed(
    tape: &mut Tape,
    p: &ModelParams<Var>,
    inputs: &FeatureInputs,
    s: &HinStructure,
    encoder: Encoder,
    dropout: &mut Dropout,
) -> Result<Var, HinError> {
    let x = featurize(tape, &p.featurizer, inputs, dropout);
    match encoder {
        Encoder::Hin => forward(tape, &p.hin, s, x, dropout),
        Encoder::FeaturesOnly => Ok(tape.l2_normalize_rows(x)),
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
}

/// Header values echoed into the checkpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckpointHeader {
    pub dim: usize,
    pub node_layers: usize,
    pub mixer_layers: usize,
    pub heads: usize,
    pub pe_dim: usize,
    pub alpha: f32,
    pub beta: f32,
    pub lambda_attn: f32,
}

impl CheckpointHeader {
    pub fn of(p: &ModelParams) -> Self {
        Self {
            dim: p.dim(),
            node_layers: p.hin.node_layers.len(),
            mixer_layers: p.hin.mixers.len(),
            heads: p.hin.heads,
            pe_dim: p.hin.pe_in.w.nrows(),
            alpha: p.hin.alpha[[0, 0]] as f32,
            beta: p.hin.beta[[0, 0]] as f32,
            lambda_attn: p.hin.lambda_attn[[0, 0]] as f32,
        }
    }
}

/// `magic, version, header, tensor count, (name, matrix)*`, little-endian
/// with f32 payloads.
pub fn encode_checkpoint(p: &ModelParams) -> Vec<u8> {
    let h = CheckpointHeader::of(p);
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for v in [h.dim, h.node_layers, h.mixer_layers, h.heads, h.pe_dim] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    for v in [h.alpha, h.beta, h.lambda_attn] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let leaves = named_leaves(p);
    out.extend_from_slice(&(leaves.len() as u64).to_le_bytes());
    for (name, m) in &leaves {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        encode_f32_matrix(m, &mut out);
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(CheckpointHeader, ModelParams), String> {
    let mut c = bytes;
    if c.len() < 12 || &c[..8] != MAGIC {
        return Err("not a checkpoint file".into());
    }
    let version = u32::from_le_bytes(c[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(format!("unsupported checkpoint version {version}"));
    }
    c = &c[12..];
    let mut u = [0usize; 5];
    for v in &mut u {
        *v = read_u64(&mut c)? as usize;
    }
    let mut f = [0f32; 3];
    for v in &mut f {
        if c.len() < 4 {
            return Err("truncated header".into());
        }
        *v = f32::from_le_bytes(c[..4].try_into().unwrap());
        c = &c[4..];
    }
    let header = CheckpointHeader {
        dim: u[0],
        node_layers: u[1],
        mixer_layers: u[2],
        heads: u[3],
        pe_dim: u[4],
        alpha: f[0],
        beta: f[1],
        lambda_attn: f[2],
    };
    let count = read_u64(&mut c)? as usize;
    let mut tensors = HashMap::new();
    for _ in 0..count {
        if c.len() < 4 {
            return Err("truncated tensor name".into());
        }
        let len = u32::from_le_bytes(c[..4].try_into().unwrap()) as usize;
        c = &c[4..];
        if c.len() < len {
            return Err("truncated tensor name".into());
        }
        let name = std::str::from_utf8(&c[..len]).map_err(|e| e.to_string())?.to_string();
        c = &c[len..];
        let m = read_f32_matrix_from(&mut c)?;
        tensors.insert(name, m);
    }
    if !c.is_empty() {
        return Err(format!("{} trailing bytes", c.len()));
    }
    let mut p = ModelParams::skeleton(header.node_layers, header.mixer_layers, header.heads);
    let mut missing = None;
    p.visit_params_mut("", &mut |name, m| match tensors.remove(name) {
        Some(t) => *m = t,
        None => missing = missing.take().or(Some(name.to_string())),
    });
    if let Some(name) = missing {
        return Err(format!("missing tensor {name}"));
    }
    if let Some(name) = tensors.keys().min() {
        return Err(format!("unexpected tensor {name}"));
    }
    p.validate()?;
    if header.dim != p.dim() || header.pe_dim != p.hin.pe_in.w.nrows() {
        return Err("header disagrees with tensor shapes".into());
    }
    Ok((header, p))
}

pub fn save_checkpoint(path: &Path, p: &ModelParams) -> Result<(), CheckpointError> {
    let io = |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    w.write_all(&encode_checkpoint(p)).map_err(io)?;
    w.flush().map_err(io)
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams, CheckpointError> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })?;
    decode_checkpoint(&bytes)
        .map(|(_, p)| p)
        .map_err(|reason| CheckpointError::Format {
            path: path.to_path_buf(),
            reason,
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelParams {
        let f = FeaturizerConfig {
            dim: 8,
            hidden_dim: 6,
            ..FeaturizerConfig::default()
        };
        let h = HinConfig {
            dim: 8,
            pe_dim: 4,
            ..HinConfig::default()
        };
        ModelParams::init(3, &f, &h, 10, 5, 3)
    }

    #[test]
    fn checkpoint_roundtrip_is_f32_exact() {
        let p = tiny();
        p.validate().unwrap();
        let bytes = encode_checkpoint(&p);
        let (header, q) = decode_checkpoint(&bytes).unwrap();
        assert_eq!(header.dim, 8);
        assert_eq!(header.heads, 4);
        assert_eq!(header.pe_dim, 4);
        assert_eq!(header.alpha, 1.0);
        for ((na, a), (nb, b)) in named_leaves(&p).iter().zip(named_leaves(&q).iter()) {
            assert_eq!(na, nb);
            assert!(a.iter().zip(b.iter()).all(|(x, y)| (*x as f32) as f64 == *y));
        }
        // a second roundtrip is bitwise stable
        assert_eq!(encode_checkpoint(&q), bytes);
    }

    #[test]
    fn corrupt_checkpoints_are_rejected() {
        let bytes = encode_checkpoint(&tiny());
        assert!(decode_checkpoint(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_checkpoint(&bad).is_err());
        let mut bad = bytes;
        bad[8] = 9;
        assert!(decode_checkpoint(&bad).unwrap_err().contains("version"));
    }
}
