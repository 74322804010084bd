//! Binary checkpoint container.
//!
//! Layout (little endian): magic `EISPCKPT`, `u32` version, `u64` entry
//! count, then per entry a `u32`-length UTF-8 key, a one-byte tag and the
//! payload. Floats are stored as raw bit patterns so round trips are exact.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::adam::{AdamConfig, AdamState};
use super::dense::{Activation, DenseNet};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"EISPCKPT";
const VERSION: u32 = 1;

const TAG_F64: u8 = 1;
const TAG_U64: u8 = 2;
const TAG_TEXT: u8 = 3;

#[derive(Debug, Clone, PartialEq)]
pub enum Entry {
    F64 { shape: Vec<usize>, data: Vec<f64> },
    U64(Vec<u64>),
    Text(String),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    entries: BTreeMap<String, Entry>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn get(&self, key: &str) -> Option<&Entry> {
        self.entries.get(key)
    }

    pub fn insert(&mut self, key: impl Into<String>, entry: Entry) {
        self.entries.insert(key.into(), entry);
    }

    pub fn put_array(&mut self, key: impl Into<String>, a: &Array2<f64>) {
        let (r, c) = a.dim();
        self.insert(
            key,
            Entry::F64 {
                shape: vec![r, c],
                data: a.iter().copied().collect(),
            },
        );
    }

    pub fn put_u64(&mut self, key: impl Into<String>, v: Vec<u64>) {
        self.insert(key, Entry::U64(v));
    }

    pub fn put_text(&mut self, key: impl Into<String>, s: impl Into<String>) {
        self.insert(key, Entry::Text(s.into()));
    }

    pub fn array(&self, key: &str) -> Result<Array2<f64>> {
        match self.entries.get(key) {
            Some(Entry::F64 { shape, data }) if shape.len() == 2 => {
                Array2::from_shape_vec((shape[0], shape[1]), data.clone())
                    .map_err(|e| Error::Format(format!("{key}: {e}")))
            }
            Some(_) => Err(Error::Format(format!("entry `{key}` is not a matrix"))),
            None => Err(Error::Format(format!("missing entry `{key}`"))),
        }
    }

    pub fn u64s(&self, key: &str) -> Result<&[u64]> {
        match self.entries.get(key) {
            Some(Entry::U64(v)) => Ok(v),
            Some(_) => Err(Error::Format(format!("entry `{key}` is not a u64 list"))),
            None => Err(Error::Format(format!("missing entry `{key}`"))),
        }
    }

    pub fn text(&self, key: &str) -> Result<&str> {
        match self.entries.get(key) {
            Some(Entry::Text(s)) => Ok(s),
            Some(_) => Err(Error::Format(format!("entry `{key}` is not text"))),
            None => Err(Error::Format(format!("missing entry `{key}`"))),
        }
    }

    pub fn put_net(&mut self, prefix: &str, net: &DenseNet) {
        self.put_u64(
            format!("{prefix}.sizes"),
            net.layer_sizes().iter().map(|&s| s as u64).collect(),
        );
        self.put_text(format!("{prefix}.activation"), net.activation().name());
        for (name, p) in net.param_names(prefix).into_iter().zip(net.params()) {
            self.put_array(name, p);
        }
    }

    pub fn net(&self, prefix: &str) -> Result<DenseNet> {
        let sizes: Vec<usize> = self
            .u64s(&format!("{prefix}.sizes"))?
            .iter()
            .map(|&s| s as usize)
            .collect();
        let activation = Activation::parse(self.text(&format!("{prefix}.activation"))?)?;
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for i in 0..sizes.len().saturating_sub(1) {
            weights.push(self.array(&format!("{prefix}.l{i}.weight"))?);
            biases.push(self.array(&format!("{prefix}.l{i}.bias"))?);
        }
        DenseNet::from_parts(&sizes, weights, biases, activation)
    }

    pub fn put_adam(&mut self, prefix: &str, st: &AdamState) {
        let c = st.config();
        self.put_u64(
            format!("{prefix}.meta"),
            vec![
                st.step_count(),
                st.first_moment().len() as u64,
                c.beta1.to_bits(),
                c.beta2.to_bits(),
                c.eps.to_bits(),
            ],
        );
        for (i, (m, v)) in st.first_moment().iter().zip(st.second_moment()).enumerate() {
            self.put_array(format!("{prefix}.m{i}"), m);
            self.put_array(format!("{prefix}.v{i}"), v);
        }
    }

    pub fn adam(&self, prefix: &str) -> Result<AdamState> {
        let meta = self.u64s(&format!("{prefix}.meta"))?;
        if meta.len() != 5 {
            return Err(Error::Format(format!("bad optimiser metadata for `{prefix}`")));
        }
        let config = AdamConfig {
            beta1: f64::from_bits(meta[2]),
            beta2: f64::from_bits(meta[3]),
            eps: f64::from_bits(meta[4]),
        };
        let mut m = Vec::new();
        let mut v = Vec::new();
        for i in 0..meta[1] as usize {
            m.push(self.array(&format!("{prefix}.m{i}"))?);
            v.push(self.array(&format!("{prefix}.v{i}"))?);
        }
        AdamState::from_parts(meta[0], m, v, config)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for (key, entry) in &self.entries {
            out.extend_from_slice(&(key.len() as u32).to_le_bytes());
            out.extend_from_slice(key.as_bytes());
            match entry {
                Entry::F64 { shape, data } => {
                    out.push(TAG_F64);
                    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
                    for &d in shape {
                        out.extend_from_slice(&(d as u64).to_le_bytes());
                    }
                    out.extend_from_slice(&(data.len() as u64).to_le_bytes());
                    for x in data {
                        out.extend_from_slice(&x.to_bits().to_le_bytes());
                    }
                }
                Entry::U64(v) => {
                    out.push(TAG_U64);
                    out.extend_from_slice(&(v.len() as u64).to_le_bytes());
                    for x in v {
                        out.extend_from_slice(&x.to_le_bytes());
                    }
                }
                Entry::Text(s) => {
                    out.push(TAG_TEXT);
                    out.extend_from_slice(&(s.len() as u64).to_le_bytes());
                    out.extend_from_slice(s.as_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Format("not a checkpoint file".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let count = r.u64()?;
        let mut entries = BTreeMap::new();
        for _ in 0..count {
            let klen = r.u32()? as usize;
            let key = String::from_utf8(r.take(klen)?.to_vec())
                .map_err(|_| Error::Format("non-UTF-8 key".into()))?;
            let entry = match r.u8()? {
                TAG_F64 => {
                    let ndim = r.u32()? as usize;
                    let shape = (0..ndim)
                        .map(|_| r.u64().map(|d| d as usize))
                        .collect::<Result<Vec<_>>>()?;
                    let n = r.u64()? as usize;
                    if shape.iter().product::<usize>() != n {
                        return Err(Error::Format(format!("`{key}`: shape does not match length")));
                    }
                    let data = (0..n)
                        .map(|_| r.u64().map(f64::from_bits))
                        .collect::<Result<Vec<_>>>()?;
                    Entry::F64 { shape, data }
                }
                TAG_U64 => {
                    let n = r.u64()? as usize;
                    Entry::U64((0..n).map(|_| r.u64()).collect::<Result<Vec<_>>>()?)
                }
                TAG_TEXT => {
                    let n = r.u64()? as usize;
                    Entry::Text(
                        String::from_utf8(r.take(n)?.to_vec())
                            .map_err(|_| Error::Format("non-UTF-8 text".into()))?,
                    )
                }
                tag => return Err(Error::Format(format!("unknown entry tag {tag}"))),
            };
            entries.insert(key, entry);
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after checkpoint".into()));
        }
        Ok(Self { entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut buf = Vec::new();
        fs::File::open(path)?.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }
}

pub(crate) struct Reader<'a> {
    pub(crate) buf: &'a [u8],
    pub(crate) pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format("unexpected end of file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        self.u64().map(f64::from_bits)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn net_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = DenseNet::new(&[3, 5, 2], Activation::Tanh, &mut rng).unwrap();
        let mut ck = Checkpoint::new();
        ck.put_net("actor", &net);
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back, ck);
        let restored = back.net("actor").unwrap();
        for (a, b) in net.params().iter().zip(restored.params()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn truncated_and_garbage_rejected() {
        let mut ck = Checkpoint::new();
        ck.put_text("k", "v");
        let bytes = ck.to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(Checkpoint::from_bytes(b"garbage!").is_err());
    }

    #[test]
    fn adam_round_trip() {
        let p = ndarray::array![[1.0, 2.0]];
        let mut st = AdamState::new([&p], AdamConfig::default());
        let mut q = p.clone();
        st.step(&mut [&mut q], &[ndarray::array![[0.3, -0.1]]], &["p".into()], 1e-3)
            .unwrap();
        let mut ck = Checkpoint::new();
        ck.put_adam("opt", &st);
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap().adam("opt").unwrap();
        assert_eq!(back, st);
    }
}
