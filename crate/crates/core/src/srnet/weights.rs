//! Weight files: `PATW` magic, u32 version, a `key = value` text header
//! with the architecture constants, then named little-endian f64 records
//! (`u32` name length, name, `u32` ndim, `u64` dims, payload).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::layers::{BN_EPS, BN_MOMENTUM};
use super::{SRNetParams, EXTRACT_CHANNELS, FUSE_CHANNELS, HEAD_CHANNELS};
use crate::error::{Error, Result};
use crate::sim::parse_key_values;

pub const MAGIC: &[u8; 4] = b"PATW";
pub const VERSION: u32 = 1;
pub const MANIFEST: &str = "weights-manifest.txt";

/// One trained network per unrolled stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageWeights {
    pub stages: Vec<SRNetParams>,
    pub c_scale: f64,
}

impl StageWeights {
    pub fn new(c_scale: f64) -> Self {
        Self {
            stages: Vec::new(),
            c_scale,
        }
    }

    pub fn k_max(&self) -> usize {
        self.stages.len()
    }
}

fn header(params: &SRNetParams, c_scale: f64) -> String {
    let mut h = String::new();
    let _ = writeln!(h, "architecture = srnet");
    let _ = writeln!(h, "kernel = 3x3");
    let _ = writeln!(h, "extract_channels = {EXTRACT_CHANNELS}");
    let _ = writeln!(h, "fuse_channels = {},{}", FUSE_CHANNELS[0], FUSE_CHANNELS[1]);
    let _ = writeln!(h, "head_channels = {HEAD_CHANNELS}");
    let _ = writeln!(h, "bn_momentum = {}", params.fuse_bn.momentum);
    let _ = writeln!(h, "bn_eps = {:e}", params.fuse_bn.eps);
    let _ = writeln!(h, "c_scale = {c_scale}");
    h
}

pub fn encode_weights(params: &SRNetParams, c_scale: f64) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let h = header(params, c_scale);
    out.extend_from_slice(&(h.len() as u32).to_le_bytes());
    out.extend_from_slice(h.as_bytes());
    let tensors = params.tensors();
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, dims, values) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
        for d in dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(Error::Truncated {
            expected: self.pos + n,
            found: self.bytes.len(),
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Decode a weight file; returns the parameters and the header's
/// `c_scale`.
pub fn decode_weights(bytes: &[u8]) -> Result<(SRNetParams, f64)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::BadMagic { expected: "PATW" });
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let hlen = r.u32()? as usize;
    let text = std::str::from_utf8(r.take(hlen)?).map_err(|e| Error::Malformed(format!("weights header: {e}")))?;
    let map: BTreeMap<String, String> = parse_key_values(text)?;
    let expect = |k: &str, v: String| -> Result<()> {
        match map.get(k) {
            Some(found) if *found == v => Ok(()),
            found => Err(Error::Malformed(format!(
                "weights header `{k}` = {found:?}, this build expects {v}"
            ))),
        }
    };
    expect("architecture", "srnet".into())?;
    expect("extract_channels", EXTRACT_CHANNELS.to_string())?;
    expect("fuse_channels", format!("{},{}", FUSE_CHANNELS[0], FUSE_CHANNELS[1]))?;
    expect("head_channels", HEAD_CHANNELS.to_string())?;
    let num = |k: &str, default: f64| -> Result<f64> {
        map.get(k).map_or(Ok(default), |v| {
            v.parse().map_err(|e| Error::Malformed(format!("weights header `{k}`: {e}")))
        })
    };
    let momentum = num("bn_momentum", BN_MOMENTUM)?;
    let eps = num("bn_eps", BN_EPS)?;
    let c_scale = num("c_scale", 1.0)?;

    let mut params = SRNetParams::zeros();
    let [h0, h1] = &mut params.heads;
    for bn in [&mut params.fuse_bn, &mut h0.bn, &mut h1.bn] {
        bn.momentum = momentum;
        bn.eps = eps;
    }
    let expected: Vec<(String, Vec<usize>)> =
        params.tensors().into_iter().map(|(n, d, _)| (n, d)).collect();
    let count = r.u32()? as usize;
    if count != expected.len() {
        return Err(Error::Malformed(format!("{count} weight records, expected {}", expected.len())));
    }
    let mut slots = params.tensors_mut();
    for (k, (name, dims)) in expected.iter().enumerate() {
        let nlen = r.u32()? as usize;
        let got = std::str::from_utf8(r.take(nlen)?).map_err(|e| Error::Malformed(format!("record name: {e}")))?;
        if got != name {
            return Err(Error::Malformed(format!("record {k} is `{got}`, expected `{name}`")));
        }
        let ndim = r.u32()? as usize;
        let got_dims = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        if &got_dims != dims {
            return Err(Error::ShapeMismatch(format!("`{name}` has dims {got_dims:?}, expected {dims:?}")));
        }
        let n: usize = dims.iter().product();
        let payload = r.take(n * 8)?;
        let slot = &mut slots[k].0;
        for (i, chunk) in payload.chunks_exact(8).enumerate() {
            let v = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
            if !v.is_finite() {
                return Err(Error::NonFinite { index: i });
            }
            slot[i] = v;
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Malformed(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    drop(slots);
    Ok((params, c_scale))
}

pub fn write_weights(path: &Path, params: &SRNetParams, c_scale: f64) -> Result<()> {
    fs::write(path, encode_weights(params, c_scale)).map_err(|e| Error::io(path, e))
}

pub fn read_weights(path: &Path) -> Result<(SRNetParams, f64)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_weights(&bytes)
}

/// `stage_<k>.patw` per stage plus `weights-manifest.txt`.
pub fn write_stage_weights(dir: &Path, weights: &StageWeights) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = format!("k_max = {}\nc_scale = {}\n", weights.k_max(), weights.c_scale);
    for (k, p) in weights.stages.iter().enumerate() {
        let name = format!("stage_{k}.patw");
        write_weights(&dir.join(&name), p, weights.c_scale)?;
        let _ = writeln!(manifest, "stage_{k} = {name}");
    }
    let path = dir.join(MANIFEST);
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
}

pub fn read_stage_weights(dir: &Path) -> Result<StageWeights> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let map = parse_key_values(&text)?;
    let k_max: usize = map
        .get("k_max")
        .ok_or_else(|| Error::Malformed("weights manifest lacks k_max".into()))?
        .parse()
        .map_err(|e| Error::Malformed(format!("k_max: {e}")))?;
    let mut out = StageWeights::new(1.0);
    for k in 0..k_max {
        let file = map
            .get(&format!("stage_{k}"))
            .ok_or_else(|| Error::Malformed(format!("weights manifest lacks stage_{k}")))?;
        let (p, c_scale) = read_weights(&dir.join(file))?;
        out.c_scale = c_scale;
        out.stages.push(p);
    }
    Ok(out)
}
