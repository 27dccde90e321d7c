//! Versioned little-endian tensor container used for model checkpoints and
//! embedding exports.
//!
//! Layout: magic `LKLB`, `u32` format version, `u32` length + UTF-8
//! `key=value` lines, `u32` tensor count, then per tensor a `u32`-prefixed
//! name, `u64` rows, `u64` cols and `rows·cols` `f64` values row-major.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{LinkPredictor, ModelConfig};
use crate::nn::Tensor2;

pub const MAGIC: &[u8; 4] = b"LKLB";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TensorFile {
    pub meta: Vec<(String, String)>,
    pub tensors: Vec<(String, Tensor2)>,
}

impl TensorFile {
    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor2> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        let mut text = String::new();
        for (k, v) in &self.meta {
            if k.contains(['=', '\n']) || v.contains('\n') {
                return Err(Error::Checkpoint(format!("unencodable metadata '{k}'")));
            }
            text.push_str(k);
            text.push('=');
            text.push_str(v);
            text.push('\n');
        }
        write_u32(w, text.len())?;
        w.write_all(text.as_bytes())?;
        write_u32(w, self.tensors.len())?;
        for (name, t) in &self.tensors {
            write_u32(w, name.len())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.rows() as u64).to_le_bytes())?;
            w.write_all(&(t.cols() as u64).to_le_bytes())?;
            for x in t.as_slice() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic bytes".into()));
        }
        let version = read_u32(r)?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let text = read_string(r)?;
        let mut meta = Vec::new();
        for line in text.lines() {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Checkpoint(format!("bad metadata line '{line}'")))?;
            meta.push((k.to_string(), v.to_string()));
        }
        let count = read_u32(r)?;
        let mut tensors = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let name = read_string(r)?;
            let rows = read_u64(r)? as usize;
            let cols = read_u64(r)? as usize;
            let len = rows
                .checked_mul(cols)
                .filter(|&n| n <= 1 << 32)
                .ok_or_else(|| Error::Checkpoint(format!("tensor '{name}' too large")))?;
            let mut bytes = vec![0u8; len * 8];
            r.read_exact(&mut bytes)?;
            let data = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            tensors.push((name, Tensor2::from_vec(rows, cols, data)?));
        }
        Ok(Self { meta, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}

fn write_u32(w: &mut impl Write, n: usize) -> Result<()> {
    let n = u32::try_from(n).map_err(|_| Error::Checkpoint("length overflows u32".into()))?;
    w.write_all(&n.to_le_bytes())?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_string(r: &mut impl Read) -> Result<String> {
    let len = read_u32(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| Error::Checkpoint("non-UTF-8 string".into()))
}

fn model_meta(model: &LinkPredictor) -> Vec<(String, String)> {
    let c = &model.config;
    let dims: Vec<String> = c.hidden_dims.iter().map(usize::to_string).collect();
    [
        ("kind", "link-predictor".to_string()),
        ("encoder", c.encoder.to_string()),
        ("hidden_dims", dims.join(",")),
        ("decoder_hidden", c.decoder_hidden.to_string()),
        ("structural", c.structural.to_string()),
        ("use_batchnorm", c.use_batchnorm.to_string()),
        ("seed", c.seed.to_string()),
        ("input_dim", model.input_dim.to_string()),
        ("bn_momentum", format!("{:?}", model.bn.momentum)),
        ("bn_epsilon", format!("{:?}", model.bn.epsilon)),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

pub fn model_to_file(model: &LinkPredictor) -> TensorFile {
    TensorFile {
        meta: model_meta(model),
        tensors: model.named_tensors(),
    }
}

fn parse_meta<T: std::str::FromStr>(file: &TensorFile, key: &str) -> Result<T> {
    file.meta_value(key)
        .ok_or_else(|| Error::Checkpoint(format!("missing '{key}'")))?
        .parse()
        .map_err(|_| Error::Checkpoint(format!("bad value for '{key}'")))
}

pub fn model_from_file(file: &TensorFile) -> Result<LinkPredictor> {
    if file.meta_value("kind") != Some("link-predictor") {
        return Err(Error::Checkpoint("not a link-predictor checkpoint".into()));
    }
    let dims = file
        .meta_value("hidden_dims")
        .ok_or_else(|| Error::Checkpoint("missing 'hidden_dims'".into()))?
        .split(',')
        .map(|d| d.trim().parse::<usize>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| Error::Checkpoint("bad hidden_dims".into()))?;
    let config = ModelConfig {
        encoder: parse_meta(file, "encoder")?,
        hidden_dims: dims,
        decoder_hidden: parse_meta(file, "decoder_hidden")?,
        structural: parse_meta(file, "structural")?,
        use_batchnorm: parse_meta(file, "use_batchnorm")?,
        seed: parse_meta(file, "seed")?,
    };
    let mut model = LinkPredictor::new(config, parse_meta(file, "input_dim")?)?;
    model.bn.momentum = parse_meta(file, "bn_momentum")?;
    model.bn.epsilon = parse_meta(file, "bn_epsilon")?;

    let take = |name: &str, shape: (usize, usize)| -> Result<Tensor2> {
        let t = file
            .tensor(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor '{name}'")))?;
        if t.shape() != shape {
            return Err(Error::Checkpoint(format!(
                "tensor '{name}' has shape {:?}, expected {shape:?}",
                t.shape()
            )));
        }
        Ok(t.clone())
    };
    for i in 0..model.encoder.len() {
        let shape = model.encoder[i].shape();
        model.encoder[i].value = take(&format!("encoder.{i}.weight"), shape)?;
    }
    model.w1.value = take("decoder.w1", model.w1.shape())?;
    model.b1.value = take("decoder.b1", model.b1.shape())?;
    model.bn.gamma.value = take("bn.gamma", model.bn.gamma.shape())?;
    model.bn.beta.value = take("bn.beta", model.bn.beta.shape())?;
    let h = model.bn.width();
    model.bn.running_mean = take("bn.running_mean", (1, h))?.into_vec();
    model.bn.running_var = take("bn.running_var", (1, h))?.into_vec();
    model.w2.value = take("decoder.w2", model.w2.shape())?;
    model.b2.value = take("decoder.b2", model.b2.shape())?;
    Ok(model)
}

pub fn save_model(path: impl AsRef<Path>, model: &LinkPredictor) -> Result<()> {
    model_to_file(model).save(path)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<LinkPredictor> {
    model_from_file(&TensorFile::load(path)?)
}
