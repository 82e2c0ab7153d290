//! Self-describing binary model file. The byte layout is documented in
//! `docs/model-format.md`; every integer and float is little-endian so saved
//! models round-trip bit-exactly.

use std::io::{Read, Write};
use std::path::Path;

use crate::data::ScalerParams;
use crate::error::{Error, Result};
use crate::model::cell::CellKind;
use crate::model::network::Network;

pub const MAGIC: &[u8; 8] = b"LCASTMDL";
pub const FORMAT_VERSION: u32 = 1;

/// A network plus everything needed to use it on raw series data.
#[derive(Clone, Debug, PartialEq)]
pub struct ForecastModel {
    pub network: Network,
    pub feature_names: Vec<String>,
    /// Index into `feature_names` of the feature error reports target.
    pub target_feature: usize,
    pub interval_seconds: i64,
    pub scaler: Option<ScalerParams>,
}

impl ForecastModel {
    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        let n = self.network.features;
        if self.feature_names.len() != n {
            return Err(Error::Format(format!(
                "{} feature names for a {n}-feature network",
                self.feature_names.len()
            )));
        }
        if self.target_feature >= n {
            return Err(Error::Format("target feature index out of range".into()));
        }
        if let Some(s) = &self.scaler {
            if s.feature_count() != n {
                return Err(Error::Format(
                    "scaler feature count does not match network".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let net = &self.network;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, FORMAT_VERSION);
        out.push(match net.cell {
            CellKind::Gru => 0,
            CellKind::Lstm => 1,
        });
        put_u32(&mut out, net.features as u32);
        put_u32(&mut out, net.lookback as u32);
        put_u32(&mut out, net.layer_count() as u32);
        put_u32(&mut out, self.target_feature as u32);
        out.extend_from_slice(&self.interval_seconds.to_le_bytes());
        for h in net.hidden_sizes() {
            put_u32(&mut out, h as u32);
        }
        for name in &self.feature_names {
            put_u32(&mut out, name.len() as u32);
            out.extend_from_slice(name.as_bytes());
        }
        match &self.scaler {
            None => out.push(0),
            Some(s) => {
                out.push(1);
                s.min
                    .iter()
                    .chain(&s.max)
                    .for_each(|v| put_f64(&mut out, *v));
            }
        }
        out.extend_from_slice(&(net.param_count() as u64).to_le_bytes());
        for block in net.blocks() {
            block.iter().for_each(|v| put_f64(&mut out, *v));
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Format("not a model file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported model format version {version}"
            )));
        }
        let cell = match r.take(1)?[0] {
            0 => CellKind::Gru,
            1 => CellKind::Lstm,
            b => return Err(Error::Format(format!("unknown cell kind tag {b}"))),
        };
        let features = r.u32()? as usize;
        let lookback = r.u32()? as usize;
        let layers = r.u32()? as usize;
        let target_feature = r.u32()? as usize;
        let interval_seconds = i64::from_le_bytes(r.take(8)?.try_into().unwrap());
        let hidden = (0..layers)
            .map(|_| r.u32().map(|h| h as usize))
            .collect::<Result<Vec<_>>>()?;
        let feature_names = (0..features)
            .map(|_| {
                let len = r.u32()? as usize;
                String::from_utf8(r.take(len)?.to_vec())
                    .map_err(|_| Error::Format("feature name is not UTF-8".into()))
            })
            .collect::<Result<Vec<_>>>()?;
        let scaler = match r.take(1)?[0] {
            0 => None,
            1 => {
                let min = (0..features).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
                let max = (0..features).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
                Some(
                    ScalerParams::from_bounds(min, max)
                        .map_err(|e| Error::Format(e.to_string()))?,
                )
            }
            b => return Err(Error::Format(format!("bad scaler flag {b}"))),
        };
        let mut network = Network::zeros(cell, features, &hidden, lookback)
            .map_err(|e| Error::Format(e.to_string()))?;
        let count = u64::from_le_bytes(r.take(8)?.try_into().unwrap()) as usize;
        if count != network.param_count() {
            return Err(Error::Format(format!(
                "file declares {count} parameters, architecture needs {}",
                network.param_count()
            )));
        }
        for block in network.blocks_mut() {
            for v in block.iter_mut() {
                *v = r.f64()?;
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after parameters".into()));
        }
        let model = ForecastModel {
            network,
            feature_names,
            target_feature,
            interval_seconds,
            scaler,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }

    /// Writes to a temporary file next to `path` and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        crate::util::atomic_write(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("model file is truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(cell: CellKind) -> ForecastModel {
        ForecastModel {
            network: Network::new(cell, 2, 3, 2, 4, 11).unwrap(),
            feature_names: vec!["cpu_rate".into(), "memory".into()],
            target_feature: 0,
            interval_seconds: 300,
            scaler: Some(ScalerParams::from_bounds(vec![0.0, 1.0], vec![0.5, 1.0]).unwrap()),
        }
    }

    #[test]
    fn roundtrip_bit_exact() {
        for cell in [CellKind::Gru, CellKind::Lstm] {
            let m = sample(cell);
            let bytes = m.to_bytes().unwrap();
            let back = ForecastModel::from_bytes(&bytes).unwrap();
            assert_eq!(back, m);
            assert_eq!(back.to_bytes().unwrap(), bytes);
        }
    }

    #[test]
    fn rejects_corruption() {
        let bytes = sample(CellKind::Gru).to_bytes().unwrap();
        assert!(ForecastModel::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(ForecastModel::from_bytes(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(ForecastModel::from_bytes(&extra).is_err());
    }
}
