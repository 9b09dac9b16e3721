//! Binary weight-file container.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic        8 bytes   "V2XLSTM\0"
//! version      u32       currently 1
//! seed         u64       training seed
//! n_models     u32
//! per model:
//!   name_len   u16, then name_len bytes of UTF-8
//!   flags      u8        bit 0: untrained (consumers fall back to a baseline)
//!   inputs     u32
//!   n_dense    u32, then n_dense × u32 dense widths
//!   lstm       u32       LSTM width
//!   scaling    inputs × (lo f64, hi f64), then target (lo f64, hi f64)
//!   weights    only when bit 0 is clear: for each dense layer the
//!              out×in weight matrix then the bias; LSTM input matrix
//!              (4H×I), recurrent matrix (4H×H), bias (4H) with gate
//!              blocks ordered i, f, g, o; head weights (H) and bias (1).
//!              Matrices are row-major.
//! ```

use std::io::{Read, Write};

use crate::net::{Architecture, RecurrentNet};
use crate::scaling::MinMaxScaler;
use crate::NnError;

pub const MAGIC: &[u8; 8] = b"V2XLSTM\0";
pub const FORMAT_VERSION: u32 = 1;

const FLAG_UNTRAINED: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedModel {
    pub name: String,
    pub arch: Architecture,
    pub input_scaler: MinMaxScaler,
    /// Range of the regression target before scaling.
    pub target_range: (f64, f64),
    /// `None` marks an untrained slot.
    pub net: Option<RecurrentNet>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightFile {
    pub seed: u64,
    pub models: Vec<NamedModel>,
}

impl WeightFile {
    pub fn model(&self, name: &str) -> Option<&NamedModel> {
        self.models.iter().find(|m| m.name == name)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), NnError> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&(self.models.len() as u32).to_le_bytes())?;
        for m in &self.models {
            let name = m.name.as_bytes();
            let name_len = u16::try_from(name.len()).map_err(|_| NnError::Format("model name too long".into()))?;
            w.write_all(&name_len.to_le_bytes())?;
            w.write_all(name)?;
            w.write_all(&[if m.net.is_none() { FLAG_UNTRAINED } else { 0 }])?;
            w.write_all(&(m.arch.inputs as u32).to_le_bytes())?;
            w.write_all(&(m.arch.dense.len() as u32).to_le_bytes())?;
            for &d in &m.arch.dense {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            w.write_all(&(m.arch.lstm as u32).to_le_bytes())?;
            if m.input_scaler.width() != m.arch.inputs {
                return Err(NnError::Format(format!("scaler width mismatch in model {}", m.name)));
            }
            for k in 0..m.arch.inputs {
                w.write_all(&m.input_scaler.lo[k].to_le_bytes())?;
                w.write_all(&m.input_scaler.hi[k].to_le_bytes())?;
            }
            w.write_all(&m.target_range.0.to_le_bytes())?;
            w.write_all(&m.target_range.1.to_le_bytes())?;
            if let Some(net) = &m.net {
                if net.architecture() != &m.arch {
                    return Err(NnError::ArchitectureMismatch);
                }
                for v in net.flat_params() {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, NnError> {
        let mut out = Vec::new();
        self.write_to(&mut out)?;
        Ok(out)
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, NnError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(NnError::Format("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(NnError::UnsupportedVersion(version));
        }
        let seed = read_u64(&mut r)?;
        let n = read_u32(&mut r)? as usize;
        let mut models = Vec::with_capacity(n.min(64));
        for _ in 0..n {
            let mut len = [0u8; 2];
            r.read_exact(&mut len)?;
            let mut name = vec![0u8; u16::from_le_bytes(len) as usize];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|_| NnError::Format("model name is not UTF-8".into()))?;
            let mut flags = [0u8; 1];
            r.read_exact(&mut flags)?;
            let inputs = read_dim(&mut r)?;
            let n_dense = read_dim(&mut r)?;
            let dense = (0..n_dense).map(|_| read_dim(&mut r)).collect::<Result<Vec<_>, _>>()?;
            let lstm = read_dim(&mut r)?;
            let arch = Architecture { inputs, dense, lstm };
            let mut lo = Vec::with_capacity(inputs);
            let mut hi = Vec::with_capacity(inputs);
            for _ in 0..inputs {
                lo.push(read_f64(&mut r)?);
                hi.push(read_f64(&mut r)?);
            }
            let target_range = (read_f64(&mut r)?, read_f64(&mut r)?);
            let net = if flags[0] & FLAG_UNTRAINED == 0 {
                let mut net = RecurrentNet::zeros(arch.clone());
                let flat = (0..arch.param_count()).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>, _>>()?;
                net.set_flat_params(&flat)?;
                Some(net)
            } else {
                None
            };
            models.push(NamedModel { name, arch, input_scaler: MinMaxScaler::new(lo, hi), target_range, net });
        }
        Ok(Self { seed, models })
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, NnError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_dim<R: Read>(r: &mut R) -> Result<usize, NnError> {
    let v = read_u32(r)? as usize;
    if v > 1 << 16 {
        return Err(NnError::Format(format!("implausible layer width {v}")));
    }
    Ok(v)
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, NnError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64, NnError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> WeightFile {
        let arch = Architecture { inputs: 2, dense: vec![3, 2], lstm: 2 };
        let net = RecurrentNet::init(arch.clone(), &mut ChaCha8Rng::seed_from_u64(5));
        WeightFile {
            seed: 77,
            models: vec![
                NamedModel {
                    name: "cam".into(),
                    arch: arch.clone(),
                    input_scaler: MinMaxScaler::new(vec![0.0, -1.0], vec![1.0, 1.0]),
                    target_range: (0.09, 1.0),
                    net: Some(net),
                },
                NamedModel {
                    name: "cpm".into(),
                    arch: Architecture { inputs: 1, dense: vec![3, 2], lstm: 2 },
                    input_scaler: MinMaxScaler::new(vec![0.0], vec![0.0]),
                    target_range: (0.0, 0.0),
                    net: None,
                },
            ],
        }
    }

    #[test]
    fn round_trips_bit_exactly() {
        let file = sample();
        let bytes = file.to_bytes().unwrap();
        let back = WeightFile::read_from(bytes.as_slice()).unwrap();
        assert_eq!(back, file);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn header_layout() {
        let bytes = sample().to_bytes().unwrap();
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(bytes[12..20].try_into().unwrap()), 77);
        assert_eq!(u32::from_le_bytes(bytes[20..24].try_into().unwrap()), 2);
        assert_eq!(u16::from_le_bytes(bytes[24..26].try_into().unwrap()), 3);
        assert_eq!(&bytes[26..29], b"cam");
    }

    #[test]
    fn rejects_bad_magic_and_version() {
        let mut bytes = sample().to_bytes().unwrap();
        bytes[8] = 9;
        assert!(matches!(WeightFile::read_from(bytes.as_slice()), Err(NnError::UnsupportedVersion(9))));
        bytes[0] = b'X';
        assert!(matches!(WeightFile::read_from(bytes.as_slice()), Err(NnError::Format(_))));
    }

    #[test]
    fn truncated_file_is_an_io_error() {
        let bytes = sample().to_bytes().unwrap();
        assert!(matches!(WeightFile::read_from(&bytes[..bytes.len() - 3]), Err(NnError::Io(_))));
    }
}
