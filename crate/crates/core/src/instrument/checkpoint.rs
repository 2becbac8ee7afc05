//! Binary container of named arrays, and model/optimizer checkpoints on top
//! of it.
//!
//! Layout (all integers little-endian `u32`):
//!
//! ```text
//! "BWHN" | version | array count
//! per array: name length | UTF-8 name | rank | dims… | dtype tag (u8) | payload
//! ```
//!
//! Payloads are raw little-endian IEEE-754 values of the tagged type.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::Model;
use crate::optim::{AdamConfig, AdamState, Moments};
use crate::scalar::{DType, Scalar};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"BWHN";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl ArrayData {
    pub fn dtype(&self) -> DType {
        match self {
            ArrayData::F32(_) => DType::F32,
            ArrayData::F64(_) => DType::F64,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ArrayData::F32(v) => v.len(),
            ArrayData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        match self {
            ArrayData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            ArrayData::F64(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: ArrayData,
}

impl NamedArray {
    /// Stores a tensor in its own precision.
    pub fn from_tensor<T: Scalar>(name: impl Into<String>, t: &Tensor<T>) -> Self {
        let data = match T::DTYPE {
            DType::F32 => ArrayData::F32(t.data().iter().map(|v| v.to_f64() as f32).collect()),
            DType::F64 => ArrayData::F64(t.to_f64_vec()),
        };
        NamedArray {
            name: name.into(),
            shape: t.shape().to_vec(),
            data,
        }
    }

    pub fn to_tensor<T: Scalar>(&self) -> Result<Tensor<T>> {
        Tensor::from_vec(
            &self.shape,
            self.data.to_f64_vec().into_iter().map(T::from_f64).collect(),
        )
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in 32 bits")))?;
    out.extend(v.to_le_bytes());
    Ok(())
}

pub fn encode(arrays: &[NamedArray]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend(MAGIC);
    out.extend(VERSION.to_le_bytes());
    put_u32(&mut out, arrays.len())?;
    for a in arrays {
        let expect: usize = a.shape.iter().product();
        if expect != a.data.len() {
            return Err(Error::shape(&a.shape, &[a.data.len()]));
        }
        put_u32(&mut out, a.name.len())?;
        out.extend(a.name.as_bytes());
        put_u32(&mut out, a.shape.len())?;
        for &d in &a.shape {
            put_u32(&mut out, d)?;
        }
        out.push(a.data.dtype() as u8);
        match &a.data {
            ArrayData::F32(v) => v.iter().for_each(|x| out.extend(x.to_le_bytes())),
            ArrayData::F64(v) => v.iter().for_each(|x| out.extend(x.to_le_bytes())),
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
    context: &'a str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.at < n {
            return Err(Error::Truncated {
                path: self.context.into(),
                detail: format!(
                    "need {n} bytes at offset {}, {} remain",
                    self.at,
                    self.bytes.len() - self.at
                ),
            });
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("four bytes")) as usize)
    }
}

pub fn decode(bytes: &[u8], context: &str) -> Result<Vec<NamedArray>> {
    let mut r = Reader { bytes, at: 0, context };
    let magic = r.take(4)?;
    if magic != MAGIC {
        return Err(Error::BadMagic {
            context: context.to_string(),
            expected: u32::from_be_bytes(MAGIC),
            found: u32::from_be_bytes(magic.try_into().expect("four bytes")),
        });
    }
    let version = r.u32()? as u32;
    if version != VERSION {
        return Err(Error::VersionMismatch {
            expected: VERSION,
            found: version,
        });
    }
    let count = r.u32()?;
    let mut arrays = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let name_len = r.u32()?;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|e| Error::Format(format!("{context}: array name is not UTF-8: {e}")))?
            .to_string();
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        let tag = r.take(1)?[0];
        let data = match DType::from_tag(tag) {
            Some(DType::F32) => ArrayData::F32(
                r.take(len * 4)?
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("four bytes")))
                    .collect(),
            ),
            Some(DType::F64) => ArrayData::F64(
                r.take(len * 8)?
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes")))
                    .collect(),
            ),
            None => return Err(Error::Format(format!("{context}: unknown dtype tag {tag} for {name}"))),
        };
        arrays.push(NamedArray { name, shape, data });
    }
    if r.at != bytes.len() {
        return Err(Error::Format(format!(
            "{context}: {} trailing bytes",
            bytes.len() - r.at
        )));
    }
    Ok(arrays)
}

pub fn write_arrays(path: &Path, arrays: &[NamedArray]) -> Result<()> {
    fs::write(path, encode(arrays)?).map_err(|e| Error::io(path, e))
}

pub fn read_arrays(path: &Path) -> Result<Vec<NamedArray>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, &path.display().to_string())
}

const ITERATION: &str = "meta.iteration";
const ADAM_STEP: &str = "adam.step";
const ADAM_CONFIG: &str = "adam.config";

fn meta(name: &str, values: &[f64]) -> NamedArray {
    NamedArray {
        name: name.into(),
        shape: vec![values.len()],
        data: ArrayData::F64(values.to_vec()),
    }
}

/// Parameters, Adam moments and the iteration counter.
pub fn checkpoint_arrays<T: Scalar>(model: &Model<T>, adam: &AdamState<T>, iteration: u64) -> Vec<NamedArray> {
    let mut out: Vec<NamedArray> = model
        .parameters()
        .into_iter()
        .map(|(n, t)| NamedArray::from_tensor(n, t))
        .collect();
    for m in &adam.moments {
        out.push(NamedArray::from_tensor(format!("adam.m.{}", m.name), &m.m));
        out.push(NamedArray::from_tensor(format!("adam.v.{}", m.name), &m.v));
    }
    let AdamConfig { beta1, beta2, eps } = adam.config;
    out.push(meta(ADAM_CONFIG, &[beta1, beta2, eps]));
    out.push(meta(ADAM_STEP, &[adam.step as f64]));
    out.push(meta(ITERATION, &[iteration as f64]));
    out
}

pub fn save_checkpoint<T: Scalar>(path: &Path, model: &Model<T>, adam: &AdamState<T>, iteration: u64) -> Result<()> {
    write_arrays(path, &checkpoint_arrays(model, adam, iteration))
}

fn find<'a>(arrays: &'a [NamedArray], name: &str) -> Result<&'a NamedArray> {
    arrays
        .iter()
        .find(|a| a.name == name)
        .ok_or_else(|| Error::CheckpointMismatch(format!("missing array {name}")))
}

fn checked_tensor<T: Scalar>(a: &NamedArray, expected: &[usize]) -> Result<Tensor<T>> {
    if a.shape != expected {
        return Err(Error::CheckpointMismatch(format!(
            "{}: stored shape {:?}, model expects {:?}",
            a.name, a.shape, expected
        )));
    }
    a.to_tensor()
}

fn scalar_meta(arrays: &[NamedArray], name: &str) -> Result<u64> {
    let v = find(arrays, name)?.data.to_f64_vec();
    match v.as_slice() {
        [x] if *x >= 0.0 && x.fract() == 0.0 => Ok(*x as u64),
        _ => Err(Error::Format(format!(
            "{name} must be one non-negative integer, got {v:?}"
        ))),
    }
}

/// Restored training state.
#[derive(Debug, Clone)]
pub struct Restored<T> {
    pub adam: Option<AdamState<T>>,
    pub iteration: u64,
}

/// Loads parameters into `model` (validating every name and shape before
/// any are written) and returns the optimizer state if one was stored.
pub fn restore<T: Scalar>(arrays: &[NamedArray], model: &mut Model<T>) -> Result<Restored<T>> {
    let mut params = Vec::new();
    for (name, t) in model.parameters() {
        params.push(checked_tensor::<T>(find(arrays, &name)?, t.shape())?);
    }
    let known: usize = params.len();
    let extra = arrays
        .iter()
        .filter(|a| !a.name.starts_with("adam.") && !a.name.starts_with("meta."))
        .count();
    if extra != known {
        return Err(Error::CheckpointMismatch(format!(
            "checkpoint holds {extra} parameter arrays, model has {known}"
        )));
    }

    let adam = if arrays.iter().any(|a| a.name == ADAM_STEP) {
        let cfg = find(arrays, ADAM_CONFIG)?.data.to_f64_vec();
        let [beta1, beta2, eps] = <[f64; 3]>::try_from(cfg.as_slice())
            .map_err(|_| Error::Format(format!("{ADAM_CONFIG} must hold 3 values")))?;
        let mut moments = Vec::new();
        for (name, t) in model.parameters() {
            moments.push(Moments {
                m: checked_tensor(find(arrays, &format!("adam.m.{name}"))?, t.shape())?,
                v: checked_tensor(find(arrays, &format!("adam.v.{name}"))?, t.shape())?,
                name,
            });
        }
        Some(AdamState {
            config: AdamConfig { beta1, beta2, eps },
            moments,
            step: scalar_meta(arrays, ADAM_STEP)?,
        })
    } else {
        None
    };
    let iteration = if arrays.iter().any(|a| a.name == ITERATION) {
        scalar_meta(arrays, ITERATION)?
    } else {
        0
    };

    for ((_, dst), src) in model.parameters_mut().into_iter().zip(params) {
        *dst = src;
    }
    Ok(Restored { adam, iteration })
}

pub fn load_checkpoint<T: Scalar>(path: &Path, model: &mut Model<T>) -> Result<Restored<T>> {
    restore(&read_arrays(path)?, model)
}
