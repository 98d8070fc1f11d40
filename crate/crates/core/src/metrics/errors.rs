use serde::Serialize;

use super::psd::PsdStats;
use crate::error::{Error, Result};

/// `(actual - desired) / desired * 100`, in percent.
pub fn percentage_error(actual: f64, desired: f64) -> Result<f64> {
    if desired == 0.0 {
        return Err(Error::InvalidInput(
            "percentage error against a desired value of 0".into(),
        ));
    }
    Ok((actual - desired) / desired * 100.0)
}

/// Mean absolute percentage error, in percent.
pub fn mape(errors: &[f64]) -> Result<f64> {
    if errors.is_empty() {
        return Err(Error::InvalidInput("mape of an empty error list".into()));
    }
    Ok(errors.iter().map(|e| e.abs()).sum::<f64>() / errors.len() as f64)
}

/// Percentage errors of one sample's size statistics against its reference.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleErrors {
    pub sample_id: String,
    pub d_g: f64,
    pub sigma_g: f64,
    pub n: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorReport {
    pub samples: Vec<SampleErrors>,
    pub mape_d_g: f64,
    pub mape_sigma_g: f64,
    pub mape_n: f64,
    /// Number of samples entering each MAPE.
    pub n: usize,
}

impl ErrorReport {
    /// `pairs` holds `(sample_id, measured, reference)`.
    pub fn from_stats(pairs: &[(String, PsdStats, PsdStats)]) -> Result<ErrorReport> {
        let samples = pairs
            .iter()
            .map(|(id, actual, desired)| {
                Ok(SampleErrors {
                    sample_id: id.clone(),
                    d_g: percentage_error(actual.d_g, desired.d_g)?,
                    sigma_g: percentage_error(actual.sigma_g, desired.sigma_g)?,
                    n: percentage_error(actual.n_particles as f64, desired.n_particles as f64)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let column = |f: fn(&SampleErrors) -> f64| mape(&samples.iter().map(f).collect::<Vec<_>>());
        Ok(ErrorReport {
            mape_d_g: column(|s| s.d_g)?,
            mape_sigma_g: column(|s| s.sigma_g)?,
            mape_n: column(|s| s.n)?,
            n: samples.len(),
            samples,
        })
    }
}
