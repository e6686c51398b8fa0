//! Versioned binary storage for named parameter tensors.
//!
//! A container file starts with the magic `OTNN` and a little-endian `u32`
//! format version, followed by a JSON metadata blob and a list of named
//! blocks. Every number is little-endian and every tensor entry is an `f64`
//! bit pattern, so a write/read round trip reproduces parameters exactly.
//! [`save_mlp`] additionally drops a human-readable `<file>.json` sidecar
//! describing the stored network.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use serde_json::json;

use super::{LayerParams, MlpParams};
use crate::{Error, Result};

const MAGIC: [u8; 4] = *b"OTNN";
const FORMAT_VERSION: u32 = 1;
/// Upper bound on any length field, to fail fast on corrupted files instead
/// of attempting absurd allocations.
const MAX_LEN: u64 = 1 << 32;

/// One named tensor: `dims` describe the shape, `data` holds the entries in
/// row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBlock {
    pub name: String,
    pub dims: Vec<u64>,
    pub data: Vec<f64>,
}

impl ParamBlock {
    pub fn from_matrix(name: impl Into<String>, matrix: &Array2<f64>) -> Self {
        Self {
            name: name.into(),
            dims: vec![matrix.nrows() as u64, matrix.ncols() as u64],
            data: matrix.iter().copied().collect(),
        }
    }

    pub fn from_vector(name: impl Into<String>, vector: &Array1<f64>) -> Self {
        Self {
            name: name.into(),
            dims: vec![vector.len() as u64],
            data: vector.to_vec(),
        }
    }

    /// Reinterprets the block as a two-dimensional array.
    pub fn matrix(&self) -> Result<Array2<f64>> {
        if self.dims.len() != 2 {
            return Err(Error::shape(format!(
                "block '{}' has {} dims, expected 2",
                self.name,
                self.dims.len()
            )));
        }
        let (rows, cols) = (self.dims[0] as usize, self.dims[1] as usize);
        Array2::from_shape_vec((rows, cols), self.data.clone())
            .map_err(|e| Error::shape(format!("block '{}': {e}", self.name)))
    }

    /// Reinterprets the block as a one-dimensional array.
    pub fn vector(&self) -> Result<Array1<f64>> {
        if self.dims.len() != 1 {
            return Err(Error::shape(format!(
                "block '{}' has {} dims, expected 1",
                self.name,
                self.dims.len()
            )));
        }
        Ok(Array1::from_vec(self.data.clone()))
    }

    fn entry_count(&self) -> u64 {
        self.dims.iter().product()
    }
}

/// A metadata blob plus named tensors, the unit that gets written to disk.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamContainer {
    pub meta: serde_json::Value,
    pub blocks: Vec<ParamBlock>,
}

impl ParamContainer {
    /// Looks a block up by name.
    pub fn block(&self, name: &str) -> Result<&ParamBlock> {
        self.blocks
            .iter()
            .find(|b| b.name == name)
            .ok_or_else(|| Error::data(format!("container has no block named '{name}'")))
    }
}

/// Serializes a container to `path`.
pub fn write_container(path: &Path, container: &ParamContainer) -> Result<()> {
    for block in &container.blocks {
        if block.entry_count() != block.data.len() as u64 {
            return Err(Error::shape(format!(
                "block '{}': dims {:?} do not match {} stored entries",
                block.name,
                block.dims,
                block.data.len()
            )));
        }
    }
    let meta_bytes = serde_json::to_vec(&container.meta)
        .map_err(|e| Error::data(format!("metadata does not serialize: {e}")))?;

    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    write_u64(&mut w, meta_bytes.len() as u64)?;
    w.write_all(&meta_bytes)?;
    write_u64(&mut w, container.blocks.len() as u64)?;
    for block in &container.blocks {
        let name_bytes = block.name.as_bytes();
        write_u64(&mut w, name_bytes.len() as u64)?;
        w.write_all(name_bytes)?;
        write_u64(&mut w, block.dims.len() as u64)?;
        for &d in &block.dims {
            write_u64(&mut w, d)?;
        }
        write_u64(&mut w, block.data.len() as u64)?;
        for &value in &block.data {
            w.write_all(&value.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a container back; every length field is validated before use so
/// corrupted or truncated files fail with an error rather than a panic.
pub fn read_container(path: &Path) -> Result<ParamContainer> {
    let mut r = BufReader::new(File::open(path)?);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(Error::data(format!(
            "{} is not a parameter container (bad magic)",
            path.display()
        )));
    }
    let mut version_bytes = [0u8; 4];
    r.read_exact(&mut version_bytes)?;
    let version = u32::from_le_bytes(version_bytes);
    if version != FORMAT_VERSION {
        return Err(Error::data(format!(
            "unsupported container version {version}, this build reads version {FORMAT_VERSION}"
        )));
    }

    let meta_len = read_len(&mut r, "metadata length")?;
    let mut meta_bytes = vec![0u8; meta_len as usize];
    r.read_exact(&mut meta_bytes)?;
    let meta = serde_json::from_slice(&meta_bytes)
        .map_err(|e| Error::data(format!("metadata is not valid JSON: {e}")))?;

    let block_count = read_len(&mut r, "block count")?;
    let mut blocks = Vec::with_capacity(block_count.min(1024) as usize);
    for _ in 0..block_count {
        let name_len = read_len(&mut r, "block name length")?;
        let mut name_bytes = vec![0u8; name_len as usize];
        r.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| Error::data("block name is not valid UTF-8".to_string()))?;

        let ndims = read_len(&mut r, "dim count")?;
        let mut dims = Vec::with_capacity(ndims.min(64) as usize);
        for _ in 0..ndims {
            dims.push(read_u64(&mut r)?);
        }

        let data_len = read_len(&mut r, "data length")?;
        let expected: u64 = dims.iter().product();
        if data_len != expected {
            return Err(Error::data(format!(
                "block '{name}': dims {dims:?} imply {expected} entries, file stores {data_len}"
            )));
        }
        let mut data = Vec::with_capacity(data_len as usize);
        let mut buf = [0u8; 8];
        for _ in 0..data_len {
            r.read_exact(&mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        blocks.push(ParamBlock { name, dims, data });
    }
    Ok(ParamContainer { meta, blocks })
}

/// Appends one block per tensor of `params`, named
/// `<prefix>layer<i>.weight` / `<prefix>layer<i>.bias`.
pub(crate) fn push_mlp_blocks(blocks: &mut Vec<ParamBlock>, prefix: &str, params: &MlpParams) {
    for (idx, layer) in params.layers().iter().enumerate() {
        blocks.push(ParamBlock::from_matrix(
            format!("{prefix}layer{idx}.weight"),
            &layer.weight,
        ));
        blocks.push(ParamBlock::from_vector(
            format!("{prefix}layer{idx}.bias"),
            &layer.bias,
        ));
    }
}

/// Rebuilds a network from blocks written by [`push_mlp_blocks`].
pub(crate) fn mlp_from_container(
    container: &ParamContainer,
    prefix: &str,
    n_layers: usize,
) -> Result<MlpParams> {
    let mut layers = Vec::with_capacity(n_layers);
    for idx in 0..n_layers {
        let weight = container.block(&format!("{prefix}layer{idx}.weight"))?.matrix()?;
        let bias = container.block(&format!("{prefix}layer{idx}.bias"))?.vector()?;
        layers.push(LayerParams { weight, bias });
    }
    MlpParams::from_layers(layers)
}

/// Writes the human-readable JSON sidecar for a container.
pub(crate) fn write_sidecar(path: &Path, meta: &serde_json::Value) -> Result<()> {
    let pretty = serde_json::to_string_pretty(meta)
        .map_err(|e| Error::data(format!("metadata does not serialize: {e}")))?;
    std::fs::write(sidecar_path(path), pretty + "\n")?;
    Ok(())
}

/// Stores a network at `path` and writes a readable JSON description next
/// to it (same file name with `.json` appended). `extra_meta` is carried in
/// both files under the `extra` key.
pub fn save_mlp(path: &Path, params: &MlpParams, extra_meta: &serde_json::Value) -> Result<()> {
    let meta = json!({
        "kind": "mlp",
        "activation": "gelu",
        "layer_sizes": params.layer_sizes(),
        "parameter_count": params.parameter_count(),
        "extra": extra_meta,
    });
    let mut blocks = Vec::with_capacity(params.layers().len() * 2);
    push_mlp_blocks(&mut blocks, "", params);
    write_container(path, &ParamContainer { meta: meta.clone(), blocks })?;
    write_sidecar(path, &meta)
}

/// Loads a network stored by [`save_mlp`], returning the parameters and the
/// full metadata blob.
pub fn load_mlp(path: &Path) -> Result<(MlpParams, serde_json::Value)> {
    let container = read_container(path)?;
    if container.meta.get("kind").and_then(|v| v.as_str()) != Some("mlp") {
        return Err(Error::data(format!(
            "{} does not store a network (kind != mlp)",
            path.display()
        )));
    }
    let sizes = container
        .meta
        .get("layer_sizes")
        .and_then(|v| v.as_array())
        .ok_or_else(|| Error::data("network metadata lacks layer_sizes".to_string()))?;
    if sizes.len() < 2 {
        return Err(Error::data("layer_sizes must list at least two widths".to_string()));
    }
    let params = mlp_from_container(&container, "", sizes.len() - 1)?;
    Ok((params, container.meta))
}

/// `<file>.json`, next to the container.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".json");
    PathBuf::from(os)
}

fn write_u64<W: Write>(w: &mut W, value: u64) -> std::io::Result<()> {
    w.write_all(&value.to_le_bytes())
}

fn read_u64<R: Read>(r: &mut R) -> std::io::Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_len<R: Read>(r: &mut R, what: &str) -> Result<u64> {
    let value = read_u64(r)?;
    if value > MAX_LEN {
        return Err(Error::data(format!("{what} {value} is implausibly large")));
    }
    Ok(value)
}
