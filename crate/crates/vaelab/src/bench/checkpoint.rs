//! Binary checkpoint format for named `f64` arrays.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "VAEC" | u32 version = 1 | u32 array count |
//!   per array: u32 name length | UTF-8 name | u32 ndim | u64 dims... | f64 data...
//! ```
//!
//! Round trips are bitwise exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::models::GenerativeModel;
use crate::numkit::DenseMatrix;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"VAEC";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Named arrays with shapes; the unit of checkpoint I/O.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NamedArrays(pub Vec<(String, Vec<usize>, Vec<f64>)>);

impl NamedArrays {
    pub fn get(&self, name: &str) -> Option<(&[usize], &[f64])> {
        self.0
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, dims, data)| (dims.as_slice(), data.as_slice()))
    }

    pub fn push_matrix(&mut self, name: impl Into<String>, m: &DenseMatrix) {
        self.0.push((name.into(), vec![m.rows(), m.cols()], m.data().to_vec()));
    }

    pub fn matrix(&self, name: &str) -> Result<DenseMatrix> {
        let (dims, data) = self
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing array {name:?}")))?;
        if dims.len() != 2 {
            return Err(Error::Checkpoint(format!("array {name:?} is not a matrix: {dims:?}")));
        }
        DenseMatrix::from_vec(dims[0], dims[1], data.to_vec())
            .map_err(|e| Error::Checkpoint(format!("array {name:?}: {e}")))
    }
}

pub fn save_checkpoint(arrays: &NamedArrays, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(arrays.0.len() as u32).to_le_bytes())?;
    for (name, dims, data) in &arrays.0 {
        let expect: usize = dims.iter().product();
        if expect != data.len() {
            return Err(Error::Checkpoint(format!(
                "array {name:?}: {dims:?} holds {expect} values, buffer has {}",
                data.len()
            )));
        }
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(dims.len() as u32).to_le_bytes())?;
        for &d in dims {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        if self.offset + len > self.bytes.len() {
            return Err(Error::Checkpoint(format!(
                "truncated while reading {what} at byte {}",
                self.offset
            )));
        }
        let out = &self.bytes[self.offset..self.offset + len];
        self.offset += len;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<NamedArrays> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    let mut cur = Cursor { bytes: &bytes, offset: 0 };

    let magic = cur.take(4, "magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(format!("bad magic {magic:?}, expected \"VAEC\"")));
    }
    let version = cur.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version}, this build reads {CHECKPOINT_VERSION}"
        )));
    }
    let count = cur.u32("array count")? as usize;
    let mut arrays = Vec::with_capacity(count);
    for idx in 0..count {
        let name_len = cur.u32("name length")? as usize;
        let name = std::str::from_utf8(cur.take(name_len, "name")?)
            .map_err(|_| Error::Checkpoint(format!("array {idx}: name is not UTF-8")))?
            .to_string();
        let ndim = cur.u32("ndim")? as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(cur.u64("dim")? as usize);
        }
        let total: usize = dims.iter().product();
        let mut data = Vec::with_capacity(total);
        for _ in 0..total {
            data.push(f64::from_le_bytes(cur.take(8, "data")?.try_into().unwrap()));
        }
        arrays.push((name, dims, data));
    }
    Ok(NamedArrays(arrays))
}

/// Every parameter tensor of a model as named shaped arrays.
pub fn model_to_arrays(model: &GenerativeModel) -> NamedArrays {
    let mut flat = Vec::with_capacity(model.param_count());
    model.copy_params_into(&mut flat);
    let nets: Vec<(&str, &crate::diffnet::MlpNet)> = {
        let mut v = vec![("enc.trunk", &model.trunk), ("enc.mean", &model.mean_head)];
        if let Some(lv) = &model.logvar_head {
            v.push(("enc.logvar", lv));
        }
        v.push(("dec", &model.decoder));
        v
    };
    let mut arrays = NamedArrays::default();
    for (prefix, net) in nets {
        for (i, layer) in net.layers().iter().enumerate() {
            arrays.push_matrix(format!("{prefix}.l{i}.w"), &layer.weight);
            arrays.0.push((
                format!("{prefix}.l{i}.b"),
                vec![layer.bias.len()],
                layer.bias.clone(),
            ));
        }
    }
    arrays
}

/// Restore model parameters from [`model_to_arrays`] output; the model must
/// already have the matching architecture.
pub fn arrays_into_model(arrays: &NamedArrays, model: &mut GenerativeModel) -> Result<()> {
    let mut flat = Vec::with_capacity(model.param_count());
    model.copy_params_into(&mut flat);
    for (name, offset, len) in model.param_layout() {
        let (dims, data) = arrays
            .get(&name)
            .ok_or_else(|| Error::Checkpoint(format!("checkpoint lacks tensor {name:?}")))?;
        let total: usize = dims.iter().product();
        if total != len {
            return Err(Error::Checkpoint(format!(
                "tensor {name:?} has {total} values, model expects {len}"
            )));
        }
        flat[offset..offset + len].copy_from_slice(data);
    }
    model.set_params_from(&flat);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{GenerativeModel, ModelKind};
    use crate::numkit::{sample_gaussian, RngStream};

    #[test]
    fn roundtrip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let stream = RngStream::new(3, "ckpt");
        let model = GenerativeModel::new(5, &[7], 3, &[6], ModelKind::Vae, &stream);
        let arrays = model_to_arrays(&model);
        save_checkpoint(&arrays, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(arrays, loaded);

        let mut fresh = GenerativeModel::new(5, &[7], 3, &[6], ModelKind::Vae, &stream.child("f"));
        arrays_into_model(&loaded, &mut fresh).unwrap();
        let mut a = Vec::new();
        let mut b = Vec::new();
        model.copy_params_into(&mut a);
        fresh.copy_params_into(&mut b);
        assert_eq!(a, b, "all parameters bitwise equal after the round trip");
    }

    #[test]
    fn wrong_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"NOPE\x01\x00\x00\x00\x00\x00\x00\x00").unwrap();
        match load_checkpoint(&path) {
            Err(Error::Checkpoint(msg)) => assert!(msg.contains("magic"), "{msg}"),
            other => panic!("expected checkpoint error, got {other:?}"),
        }
    }

    #[test]
    fn empty_array_list_roundtrips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.ckpt");
        save_checkpoint(&NamedArrays::default(), &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert!(loaded.0.is_empty());
    }

    #[test]
    fn truncation_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trunc.ckpt");
        let mut arrays = NamedArrays::default();
        arrays.push_matrix("m", &sample_gaussian(&RngStream::new(1, "t"), 3, 3));
        save_checkpoint(&arrays, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        match load_checkpoint(&path) {
            Err(Error::Checkpoint(msg)) => assert!(msg.contains("truncated"), "{msg}"),
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn version_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v2.ckpt");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(CHECKPOINT_MAGIC);
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&0u32.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        match load_checkpoint(&path) {
            Err(Error::Checkpoint(msg)) => assert!(msg.contains("version"), "{msg}"),
            other => panic!("expected version error, got {other:?}"),
        }
    }
}
