//! On-disk formats: binary embedding and transformation checkpoints, the
//! model directory, and the run manifest.
//!
//! Both binary formats are little-endian. Embeddings: magic, `u64` node
//! count, `u64` dimension, then `f32` center rows followed by `f32` context
//! rows. Transformation: magic, `u32` d, d′, heads, d_ff, blocks and
//! activation code, `f64` dropout rate and layer-norm epsilon, then for each
//! block the tensors in declaration order (per head `W_Q`, `W_K`, `W_V`,
//! then `W_O`, `W_1`, `b_1`, `W_2`, `b_2`, layer-norm gains and biases) as
//! row-major `f32`.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::embed::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::graph::{IdMap, LabelSplit};
use crate::linalg::Mat;
use crate::train::Model;
use crate::transform::{Activation, AttentionBlock, TransformConfig, TransformParams};

pub const EMBEDDING_MAGIC: &[u8; 8] = b"FSGEMB01";
pub const TRANSFORM_MAGIC: &[u8; 8] = b"FSGTRF01";

pub const EMBEDDINGS_FILE: &str = "embeddings.bin";
pub const TRANSFORM_FILE: &str = "transform.bin";
pub const CONFIG_FILE: &str = "config.txt";
pub const SPLIT_FILE: &str = "split.txt";
pub const NODE_MAP_FILE: &str = "node_map.txt";
pub const MANIFEST_FILE: &str = "manifest.txt";

fn put_f32s(out: &mut Vec<u8>, xs: &[f64]) {
    for &x in xs {
        out.extend_from_slice(&(x as f32).to_le_bytes());
    }
}

pub fn encode_embeddings(emb: &EmbeddingMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + 8 * emb.center.as_slice().len());
    out.extend_from_slice(EMBEDDING_MAGIC);
    out.extend_from_slice(&(emb.node_count() as u64).to_le_bytes());
    out.extend_from_slice(&(emb.dim() as u64).to_le_bytes());
    put_f32s(&mut out, emb.center.as_slice());
    put_f32s(&mut out, emb.context.as_slice());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Checkpoint(format!("truncated while reading {what}")));
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

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let raw = self.take(n * 4, what)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect())
    }

    fn magic(&mut self, expected: &[u8; 8]) -> Result<()> {
        if self.take(8, "magic")? != expected {
            return Err(Error::Checkpoint(format!(
                "bad magic, expected {:?}",
                String::from_utf8_lossy(expected)
            )));
        }
        Ok(())
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

pub fn decode_embeddings(bytes: &[u8]) -> Result<EmbeddingMatrix> {
    let mut r = Reader { bytes, pos: 0 };
    r.magic(EMBEDDING_MAGIC)?;
    let n = r.u64("node count")? as usize;
    let d = r.u64("dimension")? as usize;
    let floats = r.remaining() / 4;
    if !r.remaining().is_multiple_of(4) || floats != 2 * n * d {
        return Err(Error::Checkpoint(format!(
            "field `dim`: header declares {n} nodes x {d} dims (center + context = {} floats) but payload holds {floats}",
            2 * n * d
        )));
    }
    let center = Mat::from_vec(n, d, r.f32s(n * d, "center rows")?);
    let context = Mat::from_vec(n, d, r.f32s(n * d, "context rows")?);
    Ok(EmbeddingMatrix { center, context })
}

fn head_rows(w: &Mat, h: usize, dh: usize) -> &[f64] {
    &w.as_slice()[h * dh * w.cols()..(h + 1) * dh * w.cols()]
}

pub fn encode_transform(params: &TransformParams) -> Vec<u8> {
    let c = params.config();
    let mut out = Vec::new();
    out.extend_from_slice(TRANSFORM_MAGIC);
    for v in [c.d, c.d_prime, c.heads, c.d_ff, c.blocks] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&c.activation.code().to_le_bytes());
    out.extend_from_slice(&c.p_drop.to_le_bytes());
    out.extend_from_slice(&c.ln_epsilon.to_le_bytes());
    let dh = c.d_head();
    for b in params.blocks() {
        for h in 0..c.heads {
            put_f32s(&mut out, head_rows(&b.wq, h, dh));
            put_f32s(&mut out, head_rows(&b.wk, h, dh));
            put_f32s(&mut out, head_rows(&b.wv, h, dh));
        }
        for t in [
            b.wo.as_slice(),
            b.w1.as_slice(),
            &b.b1,
            b.w2.as_slice(),
            &b.b2,
            &b.ln1_gain,
            &b.ln1_bias,
            &b.ln2_gain,
            &b.ln2_bias,
        ] {
            put_f32s(&mut out, t);
        }
    }
    out
}

pub fn decode_transform(bytes: &[u8]) -> Result<TransformParams> {
    let mut r = Reader { bytes, pos: 0 };
    r.magic(TRANSFORM_MAGIC)?;
    let mut dims = [0usize; 5];
    for (slot, name) in dims.iter_mut().zip(["d", "d_prime", "heads", "d_ff", "blocks"]) {
        *slot = r.u32(name)? as usize;
    }
    let [d, d_prime, heads, d_ff, blocks] = dims;
    let code = r.u32("activation")?;
    let activation = Activation::from_code(code)
        .ok_or_else(|| Error::Checkpoint(format!("field `activation`: unknown code {code}")))?;
    let config = TransformConfig {
        d,
        d_prime,
        heads,
        d_ff,
        blocks,
        activation,
        p_drop: r.f64("p_drop")?,
        ln_epsilon: r.f64("ln_epsilon")?,
    };
    config
        .validate()
        .map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
    let expected = config.parameter_count();
    if r.remaining() != expected * 4 {
        return Err(Error::Checkpoint(format!(
            "field `parameters`: header implies {expected} floats but payload holds {} bytes",
            r.remaining()
        )));
    }
    let dh = config.d_head();
    let mut out = Vec::with_capacity(blocks);
    for _ in 0..blocks {
        let (mut wq, mut wk, mut wv) = (Vec::new(), Vec::new(), Vec::new());
        for _ in 0..heads {
            wq.extend(r.f32s(dh * d, "wq")?);
            wk.extend(r.f32s(dh * d, "wk")?);
            wv.extend(r.f32s(dh * d, "wv")?);
        }
        out.push(AttentionBlock {
            wq: Mat::from_vec(d_prime, d, wq),
            wk: Mat::from_vec(d_prime, d, wk),
            wv: Mat::from_vec(d_prime, d, wv),
            wo: Mat::from_vec(d, d_prime, r.f32s(d * d_prime, "wo")?),
            w1: Mat::from_vec(d_ff, d, r.f32s(d_ff * d, "w1")?),
            b1: r.f32s(d_ff, "b1")?,
            w2: Mat::from_vec(d, d_ff, r.f32s(d * d_ff, "w2")?),
            b2: r.f32s(d, "b2")?,
            ln1_gain: r.f32s(d, "ln1_gain")?,
            ln1_bias: r.f32s(d, "ln1_bias")?,
            ln2_gain: r.f32s(d, "ln2_gain")?,
            ln2_bias: r.f32s(d, "ln2_bias")?,
        });
    }
    TransformParams::from_blocks(config, out)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn open_text(path: &Path) -> Result<BufReader<fs::File>> {
    fs::File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(read_file(path)?)))
}

/// Writes embeddings, transformation and config of `model` into `dir`.
/// Returns the written paths.
pub fn save_model(model: &Model, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = [
        (EMBEDDINGS_FILE, encode_embeddings(&model.embeddings)),
        (TRANSFORM_FILE, encode_transform(&model.transform)),
        (CONFIG_FILE, model.config.to_text().into_bytes()),
    ];
    let mut paths = Vec::new();
    for (name, bytes) in files {
        let p = dir.join(name);
        write_file(&p, &bytes)?;
        paths.push(p);
    }
    Ok(paths)
}

pub fn load_model(dir: &Path) -> Result<Model> {
    let mut config = RunConfig::default();
    config.apply_text(open_text(&dir.join(CONFIG_FILE))?)?;
    let embeddings = decode_embeddings(&read_file(&dir.join(EMBEDDINGS_FILE))?)?;
    let transform = decode_transform(&read_file(&dir.join(TRANSFORM_FILE))?)?;
    if transform.config().d != embeddings.dim() {
        return Err(Error::Shape {
            field: "d (transformation input vs embedding dimension)".into(),
            expected: embeddings.dim(),
            found: transform.config().d,
        });
    }
    if config.d != embeddings.dim() {
        return Err(Error::Shape {
            field: "d (config vs embedding dimension)".into(),
            expected: embeddings.dim(),
            found: config.d,
        });
    }
    Ok(Model {
        embeddings,
        transform,
        config,
    })
}

pub fn save_split(split: &LabelSplit, dir: &Path) -> Result<PathBuf> {
    let p = dir.join(SPLIT_FILE);
    let mut buf = Vec::new();
    split.write(&mut buf).map_err(|e| Error::io(&p, e))?;
    write_file(&p, &buf)?;
    Ok(p)
}

pub fn load_split(dir: &Path) -> Result<LabelSplit> {
    LabelSplit::read(open_text(&dir.join(SPLIT_FILE))?)
}

pub fn save_id_map(map: &IdMap, dir: &Path) -> Result<PathBuf> {
    let p = dir.join(NODE_MAP_FILE);
    let mut buf = Vec::new();
    map.write(&mut buf).map_err(|e| Error::io(&p, e))?;
    write_file(&p, &buf)?;
    Ok(p)
}

pub fn load_id_map(dir: &Path) -> Result<IdMap> {
    IdMap::read(open_text(&dir.join(NODE_MAP_FILE))?)
}

/// Run provenance: configuration, input digests, seed, produced files and
/// validation history.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunManifest {
    pub seed: u64,
    pub config: String,
    /// `(role, path, sha256)` for each dataset input.
    pub inputs: Vec<(String, PathBuf, String)>,
    /// `(path, sha256)` for each written artifact.
    pub outputs: Vec<(PathBuf, String)>,
    pub history: Vec<String>,
}

impl RunManifest {
    pub fn add_input(&mut self, role: &str, path: &Path) -> Result<()> {
        let digest = sha256_file(path)?;
        self.inputs.push((role.into(), path.to_path_buf(), digest));
        Ok(())
    }

    pub fn add_output(&mut self, path: &Path) -> Result<()> {
        let digest = sha256_file(path)?;
        self.outputs.push((path.to_path_buf(), digest));
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("seed = {}\n", self.seed);
        for (role, p, d) in &self.inputs {
            s += &format!("input {role} {} sha256={d}\n", p.display());
        }
        for (p, d) in &self.outputs {
            s += &format!("output {} sha256={d}\n", p.display());
        }
        for h in &self.history {
            s += &format!("history {h}\n");
        }
        for line in self.config.lines() {
            s += &format!("config {line}\n");
        }
        s
    }

    pub fn parse<R: BufRead>(source: R) -> Result<Self> {
        let mut m = RunManifest::default();
        for (i, line) in source.lines().enumerate() {
            let line = line.map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
            let bad = || Error::Parse {
                line: i + 1,
                msg: format!("unrecognised manifest line {line:?}"),
            };
            let (kind, rest) = line.split_once(' ').ok_or_else(bad)?;
            match kind {
                "seed" => {
                    m.seed = rest
                        .trim_start_matches("= ")
                        .trim()
                        .parse()
                        .map_err(|_| bad())?
                }
                "input" => {
                    let mut parts = rest.splitn(2, ' ');
                    let role = parts.next().ok_or_else(bad)?;
                    let (path, digest) = parts.next().ok_or_else(bad)?.rsplit_once(" sha256=").ok_or_else(bad)?;
                    m.inputs.push((role.into(), path.into(), digest.into()));
                }
                "output" => {
                    let (path, digest) = rest.rsplit_once(" sha256=").ok_or_else(bad)?;
                    m.outputs.push((path.into(), digest.into()));
                }
                "history" => m.history.push(rest.into()),
                "config" => {
                    m.config += rest;
                    m.config.push('\n');
                }
                _ => return Err(bad()),
            }
        }
        Ok(m)
    }

    /// Recomputes every recorded digest. Returns the first mismatch.
    pub fn verify(&self) -> Result<()> {
        let entries = self
            .inputs
            .iter()
            .map(|(_, p, d)| (p, d))
            .chain(self.outputs.iter().map(|(p, d)| (p, d)));
        for (path, digest) in entries {
            let actual = sha256_file(path)?;
            if &actual != digest {
                return Err(Error::Checkpoint(format!(
                    "digest mismatch for {}: manifest {digest}, disk {actual}",
                    path.display()
                )));
            }
        }
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let p = dir.join(MANIFEST_FILE);
        let mut f = fs::File::create(&p).map_err(|e| Error::io(&p, e))?;
        f.write_all(self.to_text().as_bytes())
            .map_err(|e| Error::io(&p, e))?;
        Ok(p)
    }
}
