//! Binary checkpoint format.
//!
//! ```text
//! "CSFFNET1"
//! u32 LE       descriptor length in bytes
//! UTF-8 text   descriptor: `input <extents>`, one `layer <spec>` per layer,
//!              then `meta <key> <value>` lines
//! u64 LE       number of parameter values
//! f64 LE ...   parameters in layer order, weights before bias
//! optional     "CENTERS", u32 LE K, u32 LE F, K*F f64 LE
//! ```

use std::path::Path;

use super::{LayerSpec, Network, ParamSet};
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"CSFFNET1";
pub const CENTERS_TAG: &[u8; 7] = b"CENTERS";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    pub meta: Vec<(String, String)>,
    pub params: ParamSet,
    pub centers: Option<Vec<Vec<f64>>>,
}

impl Checkpoint {
    pub fn from_network(net: &Network, meta: Vec<(String, String)>) -> Self {
        Checkpoint {
            input_shape: net.input_shape().to_vec(),
            layers: net.layers().to_vec(),
            meta,
            params: net.params.clone(),
            centers: None,
        }
    }

    pub fn network(&self) -> Result<Network> {
        let mut net = Network::zeros(self.input_shape.clone(), self.layers.clone())?;
        net.params.set_flat(&self.params.flat())?;
        Ok(net)
    }

    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    fn descriptor(&self) -> String {
        let mut text = String::from("input");
        for e in &self.input_shape {
            text.push_str(&format!(" {e}"));
        }
        text.push('\n');
        for l in &self.layers {
            text.push_str(&format!("layer {l}\n"));
        }
        for (k, v) in &self.meta {
            text.push_str(&format!("meta {k} {v}\n"));
        }
        text
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let desc = self.descriptor();
        let flat = self.params.flat();
        let mut out = Vec::with_capacity(24 + desc.len() + 8 * flat.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(desc.len() as u32).to_le_bytes());
        out.extend_from_slice(desc.as_bytes());
        out.extend_from_slice(&(flat.len() as u64).to_le_bytes());
        for v in flat {
            out.extend_from_slice(&v.to_le_bytes());
        }
        if let Some(centers) = &self.centers {
            let dim = centers.first().map_or(0, Vec::len);
            out.extend_from_slice(CENTERS_TAG);
            out.extend_from_slice(&(centers.len() as u32).to_le_bytes());
            out.extend_from_slice(&(dim as u32).to_le_bytes());
            for v in centers.iter().flatten() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Format("not a CSFFNET1 checkpoint".into()));
        }
        let desc_len = r.u32()? as usize;
        let desc =
            std::str::from_utf8(r.take(desc_len)?).map_err(|_| Error::Format("descriptor is not UTF-8".into()))?;
        let mut input_shape = None;
        let mut layers = Vec::new();
        let mut meta = Vec::new();
        for line in desc.lines() {
            let (kind, rest) = line.split_once(' ').unwrap_or((line, ""));
            match kind {
                "input" => {
                    let shape = rest
                        .split_whitespace()
                        .map(|s| s.parse::<usize>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|_| Error::Format(format!("bad input line `{line}`")))?;
                    input_shape = Some(shape);
                }
                "layer" => layers.push(rest.parse()?),
                "meta" => {
                    let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                    meta.push((k.to_string(), v.to_string()));
                }
                _ => return Err(Error::Format(format!("unknown descriptor line `{line}`"))),
            }
        }
        let input_shape = input_shape.ok_or_else(|| Error::Format("descriptor lacks an input line".into()))?;
        let mut params = Network::zeros(input_shape.clone(), layers.clone())?.params;
        let count = r.u64()? as usize;
        if count != params.num_values() {
            return Err(Error::Format(format!(
                "architecture needs {} parameters, file declares {count}",
                params.num_values()
            )));
        }
        let flat = r.f64s(count)?;
        params.set_flat(&flat)?;

        let mut centers = None;
        if r.remaining() > 0 {
            if r.take(CENTERS_TAG.len())? != CENTERS_TAG {
                return Err(Error::Format("unexpected trailing block".into()));
            }
            let k = r.u32()? as usize;
            let f = r.u32()? as usize;
            let values = r.f64s(k * f)?;
            centers = Some(values.chunks(f.max(1)).map(<[f64]>::to_vec).collect());
        }
        if r.remaining() > 0 {
            return Err(Error::Format("trailing bytes after checkpoint".into()));
        }
        Ok(Checkpoint {
            input_shape,
            layers,
            meta,
            params,
            centers,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("checkpoint truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("size overflow".into()))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::parse_chain;

    fn sample() -> Checkpoint {
        let mut rng = crate::rng::stage_rng(5, 0);
        let chain = parse_chain("conv 2 3 4, relu, maxpool, dense 3, softmax-xent").unwrap();
        let net = Network::new(vec![1, 2, 9], chain, &mut rng).unwrap();
        let mut ck = Checkpoint::from_network(&net, vec![("seed".into(), "5".into())]);
        ck.centers = Some(vec![vec![1.0, 2.0], vec![-3.5, 0.25], vec![0.0, 1e-300]]);
        ck
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = sample();
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.meta_value("seed"), Some("5"));
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let mut bytes = sample().to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Format(_))));
        bytes.truncate(bytes.len() - 3);
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Format(_))));
    }
}
