//! Binary blobs with a one-line JSON header, and the posterior sample archive.
//!
//! Layout: one UTF-8 line of JSON terminated by `\n`, then the payload as
//! consecutive little-endian IEEE-754 `f64` values.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hmc::{HmcConfig, PosteriorSamples};
use crate::mlp::MlpSpec;
use crate::physics::ProblemSpec;

const MAX_HEADER: usize = 1 << 20;

pub fn write_header_line<H: Serialize>(header: &H, mut w: impl Write) -> Result<()> {
    serde_json::to_writer(&mut w, header)?;
    w.write_all(b"\n")?;
    Ok(())
}

/// Reads up to and excluding the first `\n`, one byte at a time so the payload is untouched.
pub fn read_header_line(mut r: impl Read) -> Result<String> {
    let mut line = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        if r.read(&mut byte)? == 0 {
            return Err(Error::config("archive header is not newline-terminated"));
        }
        if byte[0] == b'\n' {
            break;
        }
        line.push(byte[0]);
        if line.len() > MAX_HEADER {
            return Err(Error::config("archive header is too long"));
        }
    }
    String::from_utf8(line).map_err(|_| Error::config("archive header is not UTF-8"))
}

pub fn write_f64s(mut w: impl Write, values: impl IntoIterator<Item = f64>) -> Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Reads exactly `n` values.
pub fn read_f64s(mut r: impl Read, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)
        .map_err(|e| Error::config(format!("archive payload truncated: {e}")))?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

const SAMPLES_FORMAT: &str = "mfbnn.samples";

/// Everything needed to rebuild predictions from a sample archive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleHeader {
    pub format: String,
    pub version: u32,
    pub problem: ProblemSpec,
    pub bnn_layer_widths: Vec<usize>,
    pub n_samples: usize,
    pub state_dim: usize,
    pub sigma: f64,
    pub acceptance_rate: f64,
    pub final_step: f64,
    pub divergences: usize,
    pub thinning: usize,
    pub hmc: HmcConfig,
}

pub fn write_samples(
    problem: &ProblemSpec,
    spec: &MlpSpec,
    sigma: f64,
    config: &HmcConfig,
    samples: &PosteriorSamples,
    mut w: impl Write,
) -> Result<()> {
    let header = SampleHeader {
        format: SAMPLES_FORMAT.into(),
        version: 1,
        problem: problem.clone(),
        bnn_layer_widths: spec.layer_widths().to_vec(),
        n_samples: samples.len(),
        state_dim: samples.state_dim(),
        sigma,
        acceptance_rate: samples.acceptance_rate,
        final_step: samples.final_step,
        divergences: samples.divergences,
        thinning: 1,
        hmc: config.clone(),
    };
    write_header_line(&header, &mut w)?;
    for s in &samples.states {
        write_f64s(&mut w, s.iter().copied())?;
    }
    Ok(())
}

pub fn read_samples(mut r: impl Read) -> Result<(SampleHeader, PosteriorSamples)> {
    let header: SampleHeader = serde_json::from_str(&read_header_line(&mut r)?)?;
    if header.format != SAMPLES_FORMAT {
        return Err(Error::config(format!("not a sample archive: '{}'", header.format)));
    }
    let spec = MlpSpec::new(header.bnn_layer_widths.clone())?;
    if header.state_dim != spec.param_count() + header.problem.n_unknowns() {
        return Err(Error::config("sample archive state size does not match its network"));
    }
    let flat = read_f64s(&mut r, header.n_samples * header.state_dim)?;
    let states = flat
        .chunks_exact(header.state_dim.max(1))
        .map(<[f64]>::to_vec)
        .collect();
    let samples = PosteriorSamples {
        states,
        n_lambda: header.problem.n_unknowns(),
        acceptance_rate: header.acceptance_rate,
        final_step: header.final_step,
        divergences: header.divergences,
    };
    Ok((header, samples))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn samples_round_trip() {
        let spec = MlpSpec::new(vec![1, 2, 1]).unwrap();
        let d = spec.param_count() + 1;
        let samples = PosteriorSamples {
            states: (0..3).map(|i| (0..d).map(|j| (i * d + j) as f64 * 0.1).collect()).collect(),
            n_lambda: 1,
            acceptance_rate: 0.8,
            final_step: 0.01,
            divergences: 0,
        };
        let mut buf = Vec::new();
        write_samples(&ProblemSpec::diffusion_reaction_1d(), &spec, 1.5, &HmcConfig::default(), &samples, &mut buf).unwrap();
        let (h, back) = read_samples(buf.as_slice()).unwrap();
        assert_eq!(back, samples);
        assert_eq!(h.sigma, 1.5);
        assert_eq!(h.thinning, 1);
    }

    #[test]
    fn truncated_payload_errors() {
        let spec = MlpSpec::new(vec![1, 1, 1]).unwrap();
        let samples = PosteriorSamples {
            states: vec![vec![0.0; 4]],
            n_lambda: 0,
            acceptance_rate: 1.0,
            final_step: 0.1,
            divergences: 0,
        };
        let mut buf = Vec::new();
        write_samples(&ProblemSpec::regression(vec![(0.0, 1.0)]), &spec, 1.0, &HmcConfig::default(), &samples, &mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(read_samples(buf.as_slice()).is_err());
    }
}
