//! `.qsm` snapshot files.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! magic "QSMSNAP\0" | version u32 | n u32 | lmax u32 | stations u64 | flags u32
//! [potential: source u8 | outer radius f64]
//! radii | lapse | [lapse_r] | [V | V_r | [V_rr]]
//! SHA-256 of everything above
//! ```
//!
//! Field blocks hold `stations × mode_count` coefficients in station order.

use std::path::Path;

use sha2::{Digest, Sha256};

use qsm_core::metric::{PotentialField, PotentialSource, QuasiSphericalMetric};
use qsm_core::sphere::{mode_count, ModeCoeffs};

use crate::error::{CliError, CliResult};

const MAGIC: &[u8; 8] = b"QSMSNAP\0";
pub const VERSION: u32 = 1;

const HAS_LAPSE_R: u32 = 1;
const HAS_POTENTIAL: u32 = 2;
const HAS_POTENTIAL_RR: u32 = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub metric: QuasiSphericalMetric,
    pub potential: Option<PotentialField>,
}

fn source_tag(s: &PotentialSource) -> u8 {
    match s {
        PotentialSource::ClosedForm => 0,
        PotentialSource::Dirichlet => 1,
        PotentialSource::Neumann => 2,
        PotentialSource::RadialEquation => 3,
        PotentialSource::Symmetric => 4,
    }
}

fn source_of(tag: u8) -> CliResult<PotentialSource> {
    Ok(match tag {
        0 => PotentialSource::ClosedForm,
        1 => PotentialSource::Dirichlet,
        2 => PotentialSource::Neumann,
        3 => PotentialSource::RadialEquation,
        4 => PotentialSource::Symmetric,
        t => return Err(CliError::Format(format!("unknown potential source tag {t}"))),
    })
}

fn put_block(out: &mut Vec<u8>, block: &[ModeCoeffs]) {
    for c in block {
        for x in &c.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, k: usize) -> CliResult<&'a [u8]> {
        if self.at + k > self.bytes.len() {
            return Err(CliError::Format("unexpected end of data".into()));
        }
        let s = &self.bytes[self.at..self.at + k];
        self.at += k;
        Ok(s)
    }

    fn u32(&mut self) -> CliResult<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> CliResult<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> CliResult<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn block(&mut self, n: usize, lmax: usize, stations: usize) -> CliResult<Vec<ModeCoeffs>> {
        let m = mode_count(n, lmax);
        (0..stations)
            .map(|_| {
                let data = (0..m).map(|_| self.f64()).collect::<CliResult<Vec<f64>>>()?;
                Ok(ModeCoeffs { n, lmax, data })
            })
            .collect()
    }
}

impl Snapshot {
    pub fn to_bytes(&self) -> Vec<u8> {
        let g = &self.metric;
        let mut flags = 0;
        if g.lapse_r.is_some() {
            flags |= HAS_LAPSE_R;
        }
        if let Some(v) = &self.potential {
            flags |= HAS_POTENTIAL;
            if v.value_rr.is_some() {
                flags |= HAS_POTENTIAL_RR;
            }
        }
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(g.n as u32).to_le_bytes());
        out.extend_from_slice(&(g.lmax as u32).to_le_bytes());
        out.extend_from_slice(&(g.len() as u64).to_le_bytes());
        out.extend_from_slice(&flags.to_le_bytes());
        if let Some(v) = &self.potential {
            out.push(source_tag(&v.source));
            out.extend_from_slice(&v.outer_radius.to_le_bytes());
        }
        for r in &g.radii {
            out.extend_from_slice(&r.to_le_bytes());
        }
        put_block(&mut out, &g.lapse);
        if let Some(ur) = &g.lapse_r {
            put_block(&mut out, ur);
        }
        if let Some(v) = &self.potential {
            put_block(&mut out, &v.value);
            put_block(&mut out, &v.value_r);
            if let Some(vrr) = &v.value_rr {
                put_block(&mut out, vrr);
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> CliResult<Self> {
        if bytes.len() < 32 {
            return Err(CliError::Checksum);
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(CliError::Checksum);
        }
        let mut rd = Reader { bytes: body, at: 0 };
        if rd.take(8)? != MAGIC {
            return Err(CliError::Format("bad magic".into()));
        }
        let version = rd.u32()?;
        if version != VERSION {
            return Err(CliError::Format(format!("unsupported version {version}")));
        }
        let n = rd.u32()? as usize;
        let lmax = rd.u32()? as usize;
        let stations = rd.u64()? as usize;
        let flags = rd.u32()?;
        let expected = mode_count(n, lmax)
            .checked_mul(stations)
            .ok_or_else(|| CliError::Format("size overflow".into()))?;
        if expected > body.len() {
            return Err(CliError::Format("header sizes exceed file".into()));
        }
        let pot_meta = if flags & HAS_POTENTIAL != 0 {
            Some((source_of(rd.take(1)?[0])?, rd.f64()?))
        } else {
            None
        };
        let radii = (0..stations).map(|_| rd.f64()).collect::<CliResult<Vec<f64>>>()?;
        let lapse = rd.block(n, lmax, stations)?;
        let lapse_r = if flags & HAS_LAPSE_R != 0 {
            Some(rd.block(n, lmax, stations)?)
        } else {
            None
        };
        let potential = match pot_meta {
            Some((source, outer_radius)) => {
                let value = rd.block(n, lmax, stations)?;
                let value_r = rd.block(n, lmax, stations)?;
                let value_rr = if flags & HAS_POTENTIAL_RR != 0 {
                    Some(rd.block(n, lmax, stations)?)
                } else {
                    None
                };
                Some(PotentialField {
                    n,
                    lmax,
                    radii: radii.clone(),
                    value,
                    value_r,
                    value_rr,
                    source,
                    outer_radius,
                })
            }
            None => None,
        };
        if rd.at != body.len() {
            return Err(CliError::Format("trailing bytes".into()));
        }
        let metric = QuasiSphericalMetric::new(n, lmax, radii, lapse, lapse_r)?;
        Ok(Snapshot { metric, potential })
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| CliError::io(path, e))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use qsm_core::metric::schwarzschild;
    use qsm_core::sphere::make_grid;

    fn sample() -> Snapshot {
        let grid = make_grid(3, 4).unwrap();
        let (metric, v) = schwarzschild(&grid, 0.3, &[1.0, 1.5, 2.25]).unwrap();
        Snapshot {
            metric,
            potential: Some(v),
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let s = sample();
        let bytes = s.to_bytes();
        let back = Snapshot::from_bytes(&bytes).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn truncation_and_corruption_detected() {
        let bytes = sample().to_bytes();
        let e = Snapshot::from_bytes(&bytes[..bytes.len() - 9]).unwrap_err();
        assert_eq!(e.code(), "E_CHECKSUM");
        let mut flipped = bytes.clone();
        flipped[60] ^= 1;
        assert_eq!(Snapshot::from_bytes(&flipped).unwrap_err().code(), "E_CHECKSUM");
    }
}
