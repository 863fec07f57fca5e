//! Serialized forms: a binary dump of pilot observations and a JSON record
//! of estimation results.
//!
//! Observation layout, all integers and floats little-endian:
//!
//! ```text
//! b"MAPOBS"  u16 version
//! u32 I_x  u32 I_y  u32 J_x  u32 J_y
//! 2 × array: u8 ndim (= 2), u32 dims[ndim], f64 (re, im) pairs column-major
//! ```
//!
//! The arrays are `Y^t` (`N × I`) then `Ȳ^r` (`J × M`).

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::PathAngles;
use crate::error::{Error, Result};
use crate::estimate::{AngleEstimates, EstimationResult};
use crate::linalg::ComplexMatrix;
use crate::pilot::PilotObservation;

pub const OBS_MAGIC: &[u8; 6] = b"MAPOBS";
pub const OBS_VERSION: u16 = 1;

fn put_matrix(out: &mut Vec<u8>, m: &ComplexMatrix) {
    out.push(2);
    out.extend_from_slice(&(m.nrows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.ncols() as u32).to_le_bytes());
    for v in m.iter() {
        out.extend_from_slice(&v.re.to_le_bytes());
        out.extend_from_slice(&v.im.to_le_bytes());
    }
}

pub fn encode_observation(obs: &PilotObservation) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + 16 * (obs.y_t_matrix.len() + obs.y_r_matrix.len()));
    out.extend_from_slice(OBS_MAGIC);
    out.extend_from_slice(&OBS_VERSION.to_le_bytes());
    for v in obs.tx_area().into_iter().chain(obs.rx_area()) {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    put_matrix(&mut out, &obs.y_t_matrix);
    put_matrix(&mut out, &obs.y_r_matrix);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let Some(end) = end else {
            return Err(Error::Decode(format!("truncated input while reading {what} at byte {}", self.pos)));
        };
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn matrix(&mut self, name: &str) -> Result<ComplexMatrix> {
        let ndim = self.u8(name)?;
        if ndim != 2 {
            return Err(Error::Decode(format!("{name}: expected a 2-D array, found {ndim} dimensions")));
        }
        let rows = self.u32(name)? as usize;
        let cols = self.u32(name)? as usize;
        // Check the payload is present before allocating for it.
        let bytes = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(16))
            .filter(|&b| b <= self.remaining())
            .ok_or_else(|| Error::Decode(format!("{name}: {rows}x{cols} payload exceeds the {} bytes left", self.remaining())))?;
        let mut data = Vec::with_capacity(bytes / 16);
        for _ in 0..rows * cols {
            let re = self.f64(name)?;
            let im = self.f64(name)?;
            if !(re.is_finite() && im.is_finite()) {
                return Err(Error::Decode(format!("{name}: non-finite entry")));
            }
            data.push(Complex64::new(re, im));
        }
        Ok(ComplexMatrix::from_vec(rows, cols, data))
    }
}

pub fn decode_observation(bytes: &[u8]) -> Result<PilotObservation> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(OBS_MAGIC.len(), "magic")? != OBS_MAGIC {
        return Err(Error::Decode("not an observation dump (bad magic)".into()));
    }
    let version = r.u16("version")?;
    if version != OBS_VERSION {
        return Err(Error::Decode(format!("unsupported version {version}")));
    }
    let mut area = [0usize; 4];
    for a in &mut area {
        *a = r.u32("probe areas")? as usize;
    }
    let y_t = r.matrix("Y^t")?;
    let y_r = r.matrix("Y^r")?;
    if r.remaining() != 0 {
        return Err(Error::Decode(format!("{} trailing bytes", r.remaining())));
    }
    let obs = PilotObservation::from_matrices(y_t, y_r, [area[0], area[1]], [area[2], area[3]])
        .map_err(|e| Error::Decode(e.to_string()))?;
    obs.check_consistency().map_err(|e| Error::Decode(e.to_string()))?;
    Ok(obs)
}

/// Flat, self-describing form of an [`EstimationResult`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimationRecord {
    pub estimator: String,
    pub tx_theta: Vec<f64>,
    pub tx_phi: Vec<f64>,
    pub rx_theta: Vec<f64>,
    pub rx_phi: Vec<f64>,
    /// Σ̂ entries `[re, im]`, column-major, `rx_theta.len() × tx_theta.len()`.
    pub prm: Vec<[f64; 2]>,
    pub nmse: Option<f64>,
    pub iterations: usize,
    pub clipped: usize,
    /// Absent when the gain system was singular.
    pub gain_condition: Option<f64>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl EstimationRecord {
    pub fn from_result(estimator: &str, r: &EstimationResult) -> Self {
        Self {
            estimator: estimator.to_string(),
            tx_theta: r.angles.tx.theta.clone(),
            tx_phi: r.angles.tx.phi.clone(),
            rx_theta: r.angles.rx.theta.clone(),
            rx_phi: r.angles.rx.phi.clone(),
            prm: r.prm_hat.iter().map(|v| [v.re, v.im]).collect(),
            nmse: r.nmse,
            iterations: r.total_iterations(),
            clipped: r.angles.clipped,
            gain_condition: Some(r.gain_condition).filter(|c| c.is_finite()),
            warnings: r.warnings.clone(),
        }
    }

    pub fn angles(&self) -> AngleEstimates {
        AngleEstimates {
            tx: PathAngles::new(self.tx_theta.clone(), self.tx_phi.clone()),
            rx: PathAngles::new(self.rx_theta.clone(), self.rx_phi.clone()),
            clipped: self.clipped,
        }
    }

    pub fn prm_matrix(&self) -> ComplexMatrix {
        let data = self.prm.iter().map(|&[re, im]| Complex64::new(re, im)).collect();
        ComplexMatrix::from_vec(self.rx_theta.len(), self.tx_theta.len(), data)
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Decode(m));
        if self.tx_theta.len() != self.tx_phi.len() || self.rx_theta.len() != self.rx_phi.len() {
            return bad("angle lists of one side differ in length".into());
        }
        let expect = self.tx_theta.len() * self.rx_theta.len();
        if self.prm.len() != expect {
            return bad(format!("prm has {} entries, expected {expect}", self.prm.len()));
        }
        let angles = self.tx_theta.iter().chain(&self.tx_phi).chain(&self.rx_theta).chain(&self.rx_phi);
        if angles.clone().any(|a| !(-1.0..=1.0).contains(a)) {
            return bad("virtual angles must lie in [-1, 1]".into());
        }
        if self.prm.iter().flatten().any(|v| !v.is_finite()) {
            return bad("prm entries must be finite".into());
        }
        if let Some(n) = self.nmse {
            if !(n >= 0.0) {
                return bad(format!("nmse {n} is negative"));
            }
        }
        if let Some(c) = self.gain_condition {
            if !(c >= 1.0) {
                return bad(format!("condition number {c} below 1"));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("records contain only finite numbers")
    }
}

/// Parses and checks a JSON record.
pub fn parse_record(text: &str) -> Result<EstimationRecord> {
    let rec: EstimationRecord = serde_json::from_str(text).map_err(|e| Error::Decode(format!("record: {e}")))?;
    rec.validate()?;
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{generate_channel, ScenarioConfig};
    use crate::estimate::{run_algorithm1, EstimatorOptions};
    use crate::pilot::{build_pilot_plan, simulate};
    use crate::rng::stream;

    fn sample() -> (ScenarioConfig, PilotObservation) {
        let cfg = ScenarioConfig {
            tx_pilot_area: [4, 3],
            rx_pilot_area: [2, 4],
            ..ScenarioConfig::default()
        };
        let plan = build_pilot_plan(&cfg).unwrap();
        let mut rng = stream(5, &[]);
        let ch = generate_channel(&cfg, &mut rng).unwrap();
        (cfg.clone(), simulate(&plan, &ch, &cfg, &mut rng).unwrap())
    }

    #[test]
    fn observation_round_trip_is_exact() {
        let (_, obs) = sample();
        let bytes = encode_observation(&obs);
        assert_eq!(&bytes[..6], b"MAPOBS");
        assert_eq!(decode_observation(&bytes).unwrap(), obs);
    }

    #[test]
    fn decoder_rejects_damage() {
        let (_, obs) = sample();
        let bytes = encode_observation(&obs);
        for cut in [0, 5, 8, 20, 30, bytes.len() - 1] {
            assert!(decode_observation(&bytes[..cut]).is_err(), "cut at {cut}");
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_observation(&extra).is_err());

        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(decode_observation(&magic).is_err());

        let mut version = bytes.clone();
        version[6] = 9;
        assert!(decode_observation(&version).is_err());

        // Huge declared dimensions must fail without allocating.
        let mut huge = bytes.clone();
        huge[25..29].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(decode_observation(&huge).is_err());

        let mut nan = bytes.clone();
        nan[33..41].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(decode_observation(&nan).is_err());

        // Areas inconsistent with the matrix sizes.
        let mut area = bytes;
        area[8] = 7;
        assert!(decode_observation(&area).is_err());
    }

    #[test]
    fn record_round_trip() {
        let (cfg, obs) = sample();
        let plan = build_pilot_plan(&cfg).unwrap();
        let res = run_algorithm1(&obs, &plan, &cfg, &EstimatorOptions::default()).unwrap();
        let rec = EstimationRecord::from_result("tensor", &res);
        let back = parse_record(&rec.to_json()).unwrap();
        assert_eq!(back, rec);
        assert_eq!(back.prm_matrix(), res.prm_hat);
        assert_eq!(back.angles(), res.angles);
    }

    #[test]
    fn record_validation() {
        let ok = r#"{"estimator":"omp","tx_theta":[0.1],"tx_phi":[0.2],"rx_theta":[0.3],"rx_phi":[-0.4],
            "prm":[[1.0,0.5]],"nmse":0.01,"iterations":2,"clipped":0,"gain_condition":3.0}"#;
        assert!(parse_record(ok).is_ok());
        for bad in [
            ok.replace("\"prm\":[[1.0,0.5]]", "\"prm\":[]"),
            ok.replace("\"tx_phi\":[0.2]", "\"tx_phi\":[0.2,0.3]"),
            ok.replace("\"nmse\":0.01", "\"nmse\":-1"),
            ok.replace("\"rx_phi\":[-0.4]", "\"rx_phi\":[-1.5]"),
            ok.replace("\"gain_condition\":3.0", "\"gain_condition\":0.5"),
            ok.replace("\"clipped\":0", "\"clipped\":0,\"extra\":1"),
            "{".to_string(),
        ] {
            assert!(parse_record(&bad).is_err(), "{bad}");
        }
    }
}
