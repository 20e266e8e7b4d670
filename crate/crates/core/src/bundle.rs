//! Binary weight bundles and feature/activation files.
//!
//! All integers and floats are little-endian. A weight bundle is laid out as
//!
//! ```text
//! "MLMW"              magic
//! u32                 version (1)
//! u32 x 9             input_dim seq_len num_classes pooling
//!                     d_model d_state d_conv expand dt_rank
//! u32                 entry count
//! per entry:          u32 name length, ASCII name, u32 rank,
//!                     u32 x rank dims, u64 payload offset
//! u64                 payload length
//! u32                 CRC-32 of every byte above
//! 0..3 zero bytes     pad to a 4-byte file offset
//! payload             fp32 arrays, concatenated in entry order
//! ```
//!
//! A feature file is
//!
//! ```text
//! "MLMF"  u32 count  u32 flags (bit 0: labels present)
//! per sample: u32 rows, u32 cols, fp32 x rows*cols, [u32 label]
//! ```
//!
//! Activation dumps use the feature layout with one sample per input.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::mamba::{check_stable, MambaBlockParams, MambaConfig};
use crate::model::{ClassifierConfig, ClassifierParams, Pooling};
use crate::tensor::{Tensor, MAX_RANK};

pub const BUNDLE_MAGIC: [u8; 4] = *b"MLMW";
pub const FEATURE_MAGIC: [u8; 4] = *b"MLMF";
pub const BUNDLE_VERSION: u32 = 1;

const MAX_ENTRIES: usize = 64;
const MAX_NAME: usize = 64;
const FLAG_LABELS: u32 = 1;

/// Entry names a classifier bundle must carry, in the order they are written.
pub const REQUIRED_ENTRIES: [&str; 13] = [
    "w_proj", "b_proj", "w_in", "conv_w", "conv_b", "w_xproj", "w_dt", "b_dt", "a", "d_skip",
    "w_out", "w_head", "b_head",
];

fn entries(p: &ClassifierParams) -> [(&'static str, &Tensor); 13] {
    let b = &p.block;
    [
        ("w_proj", &p.w_proj),
        ("b_proj", &p.b_proj),
        ("w_in", &b.w_in),
        ("conv_w", &b.conv_w),
        ("conv_b", &b.conv_b),
        ("w_xproj", &b.w_xproj),
        ("w_dt", &b.w_dt),
        ("b_dt", &b.b_dt),
        ("a", &b.a),
        ("d_skip", &b.d_skip),
        ("w_out", &b.w_out),
        ("w_head", &p.w_head),
        ("b_head", &p.b_head),
    ]
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Format(format!("{what} {v} does not fit in u32")))
}

fn config_words(cfg: &ClassifierConfig) -> Result<[u32; 9]> {
    let m = &cfg.mamba;
    let words = [
        cfg.input_dim,
        cfg.seq_len,
        cfg.num_classes,
        cfg.pooling.code() as usize,
        m.d_model,
        m.d_state,
        m.d_conv,
        m.expand,
        m.dt_rank,
    ];
    let mut out = [0u32; 9];
    for (slot, w) in out.iter_mut().zip(words) {
        *slot = to_u32(w, "config field")?;
    }
    Ok(out)
}

/// Serializes a classifier. Checks shapes but not the sign of `A`.
pub fn encode_bundle(cfg: &ClassifierConfig, params: &ClassifierParams) -> Result<Vec<u8>> {
    params.check_shapes(cfg)?;
    let list = entries(params);
    let mut out = Vec::new();
    out.extend_from_slice(&BUNDLE_MAGIC);
    out.extend_from_slice(&BUNDLE_VERSION.to_le_bytes());
    for w in config_words(cfg)? {
        out.extend_from_slice(&w.to_le_bytes());
    }
    out.extend_from_slice(&(list.len() as u32).to_le_bytes());
    let mut offset = 0u64;
    for (name, t) in &list {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&to_u32(d, "dimension")?.to_le_bytes());
        }
        out.extend_from_slice(&offset.to_le_bytes());
        offset += 4 * t.numel() as u64;
    }
    out.extend_from_slice(&offset.to_le_bytes());
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out.resize(out.len().next_multiple_of(4), 0);
    for (_, t) in &list {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("truncated while reading {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let bytes = self.take(n.saturating_mul(4), what)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

struct Entry {
    name: String,
    dims: Vec<usize>,
    offset: u64,
}

fn parse_config(words: &[u32; 9]) -> Result<ClassifierConfig> {
    let w = |i: usize| words[i] as usize;
    let pooling = Pooling::from_code(words[3])
        .ok_or_else(|| Error::Format(format!("unknown pooling code {}", words[3])))?;
    let cfg = ClassifierConfig {
        input_dim: w(0),
        seq_len: w(1),
        num_classes: w(2),
        pooling,
        mamba: MambaConfig {
            d_model: w(4),
            d_state: w(5),
            d_conv: w(6),
            expand: w(7),
            dt_rank: w(8),
        },
    };
    cfg.validate()
        .map_err(|e| Error::Format(format!("invalid config block: {e}")))?;
    Ok(cfg)
}

/// Parses and validates a bundle: header checksum, entry layout, shapes
/// against the config block, and strict negativity of `a`.
pub fn decode_bundle(bytes: &[u8]) -> Result<(ClassifierParams, ClassifierConfig)> {
    let mut r = Reader::new(bytes);
    if r.take(4, "magic")? != BUNDLE_MAGIC {
        return Err(Error::Format("bad magic, expected MLMW".into()));
    }
    let version = r.u32("version")?;
    if version != BUNDLE_VERSION {
        return Err(Error::Format(format!(
            "unsupported bundle version {version}"
        )));
    }
    let mut words = [0u32; 9];
    for w in &mut words {
        *w = r.u32("config block")?;
    }
    let count = r.u32("entry count")? as usize;
    if count > MAX_ENTRIES {
        return Err(Error::Format(format!(
            "entry count {count} exceeds {MAX_ENTRIES}"
        )));
    }
    let mut table = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u32("name length")? as usize;
        if len == 0 || len > MAX_NAME {
            return Err(Error::Format(format!(
                "entry name length {len} out of range"
            )));
        }
        let raw = r.take(len, "entry name")?;
        if !raw
            .iter()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || *b == b'_')
        {
            return Err(Error::Format("entry name is not lowercase ASCII".into()));
        }
        let name = String::from_utf8(raw.to_vec()).expect("checked ASCII");
        let rank = r.u32("rank")? as usize;
        if rank == 0 || rank > MAX_RANK {
            return Err(Error::Format(format!("entry `{name}` has rank {rank}")));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            let d = r.u32("dims")? as usize;
            if d == 0 {
                return Err(Error::Format(format!("entry `{name}` has a zero extent")));
            }
            dims.push(d);
        }
        let offset = r.u64("offset")?;
        table.push(Entry { name, dims, offset });
    }
    let payload_len = r.u64("payload length")?;
    let header_end = r.pos;
    let stored_crc = r.u32("header checksum")?;
    if crc32fast::hash(&bytes[..header_end]) != stored_crc {
        return Err(Error::Format("header checksum mismatch".into()));
    }
    let pad = r.pos.next_multiple_of(4) - r.pos;
    if r.take(pad, "padding")?.iter().any(|&b| b != 0) {
        return Err(Error::Format("non-zero header padding".into()));
    }
    if payload_len != r.remaining() as u64 {
        return Err(Error::Format(format!(
            "payload length {payload_len} but {} bytes follow the header",
            r.remaining()
        )));
    }

    let cfg = parse_config(&words)?;
    let mut expected_offset = 0u64;
    let mut tensors: HashMap<String, Tensor> = HashMap::new();
    for e in table {
        let numel = e
            .dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| (n as u64).saturating_mul(4) <= payload_len)
            .ok_or_else(|| Error::Format(format!("entry `{}` exceeds the payload", e.name)))?;
        if e.offset != expected_offset {
            return Err(Error::Format(format!(
                "entry `{}` at offset {} but entries must be contiguous (expected {expected_offset})",
                e.name, e.offset
            )));
        }
        expected_offset += 4 * numel as u64;
        if expected_offset > payload_len {
            return Err(Error::Format(format!(
                "entry `{}` exceeds the payload",
                e.name
            )));
        }
        let data = r.f32s(numel, "payload")?;
        if !REQUIRED_ENTRIES.contains(&e.name.as_str()) {
            log::warn!("ignoring unknown bundle entry `{}`", e.name);
            continue;
        }
        let t = Tensor::new(&e.dims, data)?;
        if tensors.insert(e.name.clone(), t).is_some() {
            return Err(Error::Format(format!("duplicate entry `{}`", e.name)));
        }
    }
    if expected_offset != payload_len {
        return Err(Error::Format("payload has trailing bytes".into()));
    }

    let mut take = |name: &str| {
        tensors
            .remove(name)
            .ok_or_else(|| Error::Consistency(format!("bundle lacks required entry `{name}`")))
    };
    let params = ClassifierParams {
        w_proj: take("w_proj")?,
        b_proj: take("b_proj")?,
        block: MambaBlockParams {
            w_in: take("w_in")?,
            conv_w: take("conv_w")?,
            conv_b: take("conv_b")?,
            w_xproj: take("w_xproj")?,
            w_dt: take("w_dt")?,
            b_dt: take("b_dt")?,
            a: take("a")?,
            d_skip: take("d_skip")?,
            w_out: take("w_out")?,
        },
        w_head: take("w_head")?,
        b_head: take("b_head")?,
    };
    params.check_shapes(&cfg).map_err(|e| match e {
        Error::Dimension { op, lhs, rhs } => Error::Consistency(format!(
            "{op}: config implies {lhs:?} but the bundle stores {rhs:?}"
        )),
        other => other,
    })?;
    check_stable(&params.block.a)?;
    Ok((params, cfg))
}

pub fn write_bundle(
    params: &ClassifierParams,
    cfg: &ClassifierConfig,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_bundle(cfg, params)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_bundle(path: impl AsRef<Path>) -> Result<(ClassifierParams, ClassifierConfig)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_bundle(&bytes)
}

/// Samples of a feature or activation-dump file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FeatureSet {
    /// Rank-2 `rows x cols` tensors.
    pub samples: Vec<Tensor>,
    pub labels: Option<Vec<u32>>,
}

impl FeatureSet {
    pub fn new(samples: Vec<Tensor>) -> Self {
        Self {
            samples,
            labels: None,
        }
    }

    pub fn with_labels(samples: Vec<Tensor>, labels: Vec<u32>) -> Result<Self> {
        if samples.len() != labels.len() {
            return Err(Error::Consistency(format!(
                "{} samples but {} labels",
                samples.len(),
                labels.len()
            )));
        }
        Ok(Self {
            samples,
            labels: Some(labels),
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        if let Some(labels) = &self.labels {
            if labels.len() != self.samples.len() {
                return Err(Error::Consistency(
                    "label count differs from sample count".into(),
                ));
            }
        }
        let mut out = Vec::new();
        out.extend_from_slice(&FEATURE_MAGIC);
        out.extend_from_slice(&to_u32(self.samples.len(), "sample count")?.to_le_bytes());
        let flags = if self.labels.is_some() {
            FLAG_LABELS
        } else {
            0
        };
        out.extend_from_slice(&flags.to_le_bytes());
        for (i, s) in self.samples.iter().enumerate() {
            if s.rank() != 2 {
                return Err(Error::dim("features.sample", &[0, 0], s.shape()));
            }
            out.extend_from_slice(&to_u32(s.rows(), "rows")?.to_le_bytes());
            out.extend_from_slice(&to_u32(s.cols(), "cols")?.to_le_bytes());
            for v in s.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
            if let Some(labels) = &self.labels {
                out.extend_from_slice(&labels[i].to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(4, "magic")? != FEATURE_MAGIC {
            return Err(Error::Format("bad magic, expected MLMF".into()));
        }
        let count = r.u32("sample count")? as usize;
        let flags = r.u32("flags")?;
        if flags & !FLAG_LABELS != 0 {
            return Err(Error::Format(format!("unknown feature flags {flags:#x}")));
        }
        let has_labels = flags & FLAG_LABELS != 0;
        // Each sample needs at least its two extents and one value.
        if count > r.remaining() / 12 {
            return Err(Error::Format(format!(
                "sample count {count} exceeds the file"
            )));
        }
        let mut samples = Vec::with_capacity(count);
        let mut labels = has_labels.then(|| Vec::with_capacity(count));
        for i in 0..count {
            let rows = r.u32("rows")? as usize;
            let cols = r.u32("cols")? as usize;
            let numel = rows
                .checked_mul(cols)
                .filter(|&n| n > 0)
                .ok_or_else(|| Error::Format(format!("sample {i} has shape {rows}x{cols}")))?;
            let data = r.f32s(numel, "sample data")?;
            samples.push(Tensor::new(&[rows, cols], data)?);
            if let Some(labels) = labels.as_mut() {
                labels.push(r.u32("label")?);
            }
        }
        if r.remaining() != 0 {
            return Err(Error::Format(format!(
                "{} trailing bytes after the last sample",
                r.remaining()
            )));
        }
        Ok(Self { samples, labels })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.encode()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}
