//! Versioned binary checkpoint format for [`Mlp`] parameters.
//!
//! All integers are little-endian.
//!
//! ```text
//! offset  field
//! 0       magic            8 bytes  "FLSTNET\0"
//! 8       version          u32      currently 1
//! 12      layer count L    u32      number of entries in layer_sizes
//! 16      layer sizes      L × u32
//!         activation tags  (L-1) × u8   0=relu 1=tanh 2=softmax 3=linear
//!         metadata count M u32
//!         M × { key_len u32, key utf-8, value_len u32, value utf-8 }
//!         for each layer k: weights (rows×cols f64, row-major), biases (rows f64)
//!         checksum         u64      FNV-1a over every preceding byte
//! ```

use std::path::Path;

use super::{Activation, Matrix, Mlp};
use crate::error::{FlstError, Result};

pub const MAGIC: &[u8; 8] = b"FLSTNET\0";
pub const VERSION: u32 = 1;

/// A decoded checkpoint: the network plus free-form key/value metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub net: Mlp,
    pub metadata: Vec<(String, String)>,
}

impl Checkpoint {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

pub(crate) struct Fnv64(u64);

impl Fnv64 {
    pub(crate) fn new() -> Self {
        Fnv64(0xcbf2_9ce4_8422_2325)
    }

    pub(crate) fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    pub(crate) fn finish(&self) -> u64 {
        self.0
    }
}

pub fn encode(net: &Mlp, metadata: &[(String, String)]) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + net.param_count() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(net.layer_sizes().len() as u32).to_le_bytes());
    for &n in net.layer_sizes() {
        out.extend_from_slice(&(n as u32).to_le_bytes());
    }
    out.extend(net.activations().iter().map(|a| a.tag()));
    out.extend_from_slice(&(metadata.len() as u32).to_le_bytes());
    for (k, v) in metadata {
        for s in [k, v] {
            out.extend_from_slice(&(s.len() as u32).to_le_bytes());
            out.extend_from_slice(s.as_bytes());
        }
    }
    for block in net.slices() {
        for v in block {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut h = Fnv64::new();
    h.write(&out);
    out.extend_from_slice(&h.finish().to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    name: &'a str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(FlstError::decode(
                self.name,
                format!("truncated at byte {} (needed {} more)", self.pos, n),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec())
            .map_err(|_| FlstError::decode(self.name, "metadata is not utf-8"))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    decode_named(bytes, "checkpoint")
}

pub(crate) fn decode_named(bytes: &[u8], name: &str) -> Result<Checkpoint> {
    if bytes.len() < MAGIC.len() + 4 + 8 {
        return Err(FlstError::decode(name, "stream too short"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    let mut r = Reader {
        bytes: body,
        pos: 0,
        name,
    };
    if r.take(8)? != MAGIC {
        return Err(FlstError::decode(name, "bad magic"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(FlstError::decode(
            name,
            format!("unsupported version {} (expected {})", version, VERSION),
        ));
    }
    let mut h = Fnv64::new();
    h.write(body);
    if h.finish() != u64::from_le_bytes(tail.try_into().unwrap()) {
        return Err(FlstError::decode(
            name,
            "checksum mismatch (corrupt or truncated)",
        ));
    }
    let layers = r.u32()? as usize;
    if layers < 2 || layers > 1024 {
        return Err(FlstError::decode(
            name,
            format!("implausible layer count {}", layers),
        ));
    }
    let mut sizes = Vec::with_capacity(layers);
    for _ in 0..layers {
        sizes.push(r.u32()? as usize);
    }
    let mut acts = Vec::with_capacity(layers - 1);
    for &t in r.take(layers - 1)? {
        acts.push(
            Activation::from_tag(t)
                .ok_or_else(|| FlstError::decode(name, format!("unknown activation tag {}", t)))?,
        );
    }
    let meta_count = r.u32()? as usize;
    let mut metadata = Vec::new();
    for _ in 0..meta_count {
        let k = r.string()?;
        let v = r.string()?;
        metadata.push((k, v));
    }
    let mut weights = Vec::with_capacity(layers - 1);
    let mut biases = Vec::with_capacity(layers - 1);
    for pair in sizes.windows(2) {
        let (cols, rows) = (pair[0], pair[1]);
        let expected = rows
            .checked_mul(cols)
            .filter(|&n| n.saturating_mul(8) <= body.len())
            .ok_or_else(|| FlstError::decode(name, "layer sizes exceed stream length"))?;
        let mut w = Vec::with_capacity(expected);
        for _ in 0..expected {
            w.push(r.f64()?);
        }
        let mut b = Vec::with_capacity(rows);
        for _ in 0..rows {
            b.push(r.f64()?);
        }
        weights.push(Matrix::from_vec(rows, cols, w)?);
        biases.push(b);
    }
    if r.pos != body.len() {
        return Err(FlstError::decode(name, "trailing bytes after parameters"));
    }
    let net = Mlp::from_parts(sizes, weights, biases, acts)
        .map_err(|e| FlstError::decode(name, e.to_string()))?;
    Ok(Checkpoint { net, metadata })
}

/// Decodes and checks the architecture against `expected_sizes`.
pub fn decode_expecting(bytes: &[u8], expected_sizes: &[usize]) -> Result<Checkpoint> {
    let ckpt = decode(bytes)?;
    if ckpt.net.layer_sizes() != expected_sizes {
        return Err(FlstError::shape(format!(
            "checkpoint has layer sizes {:?}, expected {:?}",
            ckpt.net.layer_sizes(),
            expected_sizes
        )));
    }
    Ok(ckpt)
}

pub fn save(path: &Path, net: &Mlp, metadata: &[(String, String)]) -> Result<()> {
    std::fs::write(path, encode(net, metadata)).map_err(|e| FlstError::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| FlstError::io(path, e))?;
    decode_named(&bytes, &path.display().to_string())
}

impl Mlp {
    pub fn to_bytes(&self) -> Vec<u8> {
        encode(self, &[])
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Mlp> {
        decode(bytes).map(|c| c.net)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn net(sizes: &[usize], seed: u64) -> Mlp {
        let mut acts = vec![Activation::Relu; sizes.len() - 2];
        acts.push(Activation::Softmax);
        Mlp::new(sizes, &acts, seed).unwrap()
    }

    #[test]
    fn truncated_stream_is_a_decode_error() {
        let bytes = net(&[3, 4, 2], 1).to_bytes();
        for cut in [0, 5, 12, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(
                Mlp::from_bytes(&bytes[..cut]),
                Err(FlstError::Decode { .. })
            ));
        }
    }

    #[test]
    fn wrong_version_is_rejected() {
        let mut bytes = net(&[3, 2], 1).to_bytes();
        bytes[8] = 9;
        let err = Mlp::from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("version"));
    }

    #[test]
    fn flipped_payload_bit_is_detected() {
        let mut bytes = net(&[3, 2], 1).to_bytes();
        let i = bytes.len() - 12;
        bytes[i] ^= 0x10;
        assert!(Mlp::from_bytes(&bytes).is_err());
    }

    #[test]
    fn architecture_mismatch_is_a_shape_error() {
        let bytes = encode(&Mlp::new(&[2, 3], &[Activation::Linear], 0).unwrap(), &[]);
        assert!(matches!(
            decode_expecting(&bytes, &[2, 4]),
            Err(FlstError::Shape(_))
        ));
        assert!(decode_expecting(&bytes, &[2, 3]).is_ok());
    }

    #[test]
    fn metadata_survives() {
        let meta = vec![("gamma".to_string(), "0.95".to_string())];
        let c = decode(&encode(&net(&[2, 2], 3), &meta)).unwrap();
        assert_eq!(c.meta("gamma"), Some("0.95"));
    }

    proptest! {
        #[test]
        fn roundtrip_is_bitwise(sizes in proptest::collection::vec(1usize..7, 2..5), seed in any::<u64>()) {
            let n = net(&sizes, seed);
            let back = Mlp::from_bytes(&n.to_bytes()).unwrap();
            prop_assert_eq!(
                n.flat_params().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                back.flat_params().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
            prop_assert!(n.same_architecture(&back));
        }
    }
}
