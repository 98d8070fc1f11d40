use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Excluded probability mass above which a KL value is flagged.
pub const KL_EXCLUSION_WARNING: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsdStats {
    /// Geometric mean diameter, px.
    pub d_g: f64,
    /// Geometric standard deviation (population convention).
    pub sigma_g: f64,
    pub n_particles: u64,
}

/// `d_g = exp(mean ln d)`, `sigma_g = exp(population std of ln d)`.
pub fn psd_stats(diameters: &[f64]) -> Result<PsdStats> {
    if diameters.is_empty() {
        return Err(Error::InvalidInput(
            "psd_stats needs at least one diameter".into(),
        ));
    }
    if let Some(bad) = diameters.iter().find(|&&d| !(d > 0.0 && d.is_finite())) {
        return Err(Error::InvalidInput(format!(
            "diameters must be positive, got {bad}"
        )));
    }
    let n = diameters.len() as f64;
    let mean = diameters.iter().map(|d| d.ln()).sum::<f64>() / n;
    let var = diameters
        .iter()
        .map(|d| (d.ln() - mean).powi(2))
        .sum::<f64>()
        / n;
    Ok(PsdStats {
        d_g: mean.exp(),
        sigma_g: var.sqrt().exp(),
        n_particles: diameters.len() as u64,
    })
}

/// Discrete probability distribution over diameter bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_edges: Vec<f64>,
    pub probabilities: Vec<f64>,
}

impl Histogram {
    pub fn new(bin_edges: Vec<f64>, probabilities: Vec<f64>) -> Result<Histogram> {
        if bin_edges.len() < 2 || probabilities.len() != bin_edges.len() - 1 {
            return Err(Error::InvalidInput(format!(
                "histogram needs len(probabilities) = len(bin_edges) - 1 >= 1, got {} edges and {} probabilities",
                bin_edges.len(),
                probabilities.len()
            )));
        }
        if bin_edges.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidInput(
                "bin edges must be strictly ascending".into(),
            ));
        }
        if probabilities.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::InvalidInput(
                "probabilities must be nonnegative".into(),
            ));
        }
        let total: f64 = probabilities.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "probabilities sum to {total}, expected 1"
            )));
        }
        Ok(Histogram {
            bin_edges,
            probabilities,
        })
    }

    /// `bins` equal-width bins spanning `[lo, hi]`.
    pub fn uniform_edges(lo: f64, hi: f64, bins: usize) -> Vec<f64> {
        let step = (hi - lo) / bins as f64;
        (0..=bins)
            .map(|i| if i == bins { hi } else { lo + step * i as f64 })
            .collect()
    }

    /// Normalized counts of `samples` over `bin_edges`. Bins are half-open
    /// except the last, which includes its upper edge; samples outside the
    /// edges are not counted.
    pub fn from_samples(samples: &[f64], bin_edges: Vec<f64>) -> Result<Histogram> {
        let counts = Self::counts(samples, &bin_edges)?;
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(Error::InvalidInput(
                "no samples fall inside the bin edges".into(),
            ));
        }
        let probabilities = counts.iter().map(|&c| c as f64 / total as f64).collect();
        Histogram::new(bin_edges, probabilities)
    }

    pub fn counts(samples: &[f64], bin_edges: &[f64]) -> Result<Vec<u64>> {
        if bin_edges.len() < 2 || bin_edges.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidInput(
                "bin edges must be ascending with at least one bin".into(),
            ));
        }
        let last = bin_edges.len() - 2;
        let mut counts = vec![0u64; bin_edges.len() - 1];
        for &s in samples {
            if s < bin_edges[0] || s > bin_edges[last + 1] {
                continue;
            }
            let bin = bin_edges
                .partition_point(|&e| e <= s)
                .saturating_sub(1)
                .min(last);
            counts[bin] += 1;
        }
        Ok(counts)
    }
}

impl Histogram {
    /// CSV with columns `bin_lo,bin_hi,count,probability`; `counts` may be
    /// omitted, leaving that column empty.
    pub fn to_csv(&self, counts: Option<&[u64]>) -> String {
        let mut out = String::from("bin_lo,bin_hi,count,probability\n");
        for (i, p) in self.probabilities.iter().enumerate() {
            let count = counts.map_or(String::new(), |c| c[i].to_string());
            out.push_str(&format!(
                "{},{},{},{}\n",
                self.bin_edges[i],
                self.bin_edges[i + 1],
                count,
                p
            ));
        }
        out
    }

    /// Reads the layout written by [`Histogram::to_csv`]. Bins must be
    /// contiguous.
    pub fn from_csv_reader<R: std::io::Read>(reader: R) -> Result<Histogram> {
        #[derive(Deserialize)]
        struct Row {
            bin_lo: f64,
            bin_hi: f64,
            probability: f64,
        }
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut edges = Vec::new();
        let mut probabilities = Vec::new();
        for (i, row) in rdr.deserialize::<Row>().enumerate() {
            let row = row.map_err(|source| Error::Csv {
                path: "<histogram>".into(),
                source,
            })?;
            match edges.last() {
                None => edges.push(row.bin_lo),
                Some(&hi) if hi == row.bin_lo => {}
                Some(&hi) => {
                    return Err(Error::InvalidInput(format!(
                        "histogram row {}: bin starts at {} but previous bin ends at {hi}",
                        i + 1,
                        row.bin_lo
                    )))
                }
            }
            edges.push(row.bin_hi);
            probabilities.push(row.probability);
        }
        Histogram::new(edges, probabilities)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KlReport {
    pub value: f64,
    pub log_base: &'static str,
    /// Bins dropped because `p` or `q` is zero there.
    pub excluded_bins: usize,
    pub excluded_mass_p: f64,
    pub excluded_mass_q: f64,
    /// Excluded mass of either distribution exceeds [`KL_EXCLUSION_WARNING`].
    pub flagged: bool,
}

/// `sum p ln(p/q)` over bins where both masses are positive, without
/// renormalizing the remaining mass.
pub fn kl_report(p: &Histogram, q: &Histogram) -> Result<KlReport> {
    if p.bin_edges != q.bin_edges {
        return Err(Error::InvalidInput(
            "histograms have different bin edges".into(),
        ));
    }
    let mut value = 0.0;
    let (mut excluded_bins, mut mass_p, mut mass_q) = (0, 0.0, 0.0);
    for (&pi, &qi) in p.probabilities.iter().zip(&q.probabilities) {
        if pi > 0.0 && qi > 0.0 {
            value += pi * (pi / qi).ln();
        } else {
            excluded_bins += 1;
            mass_p += pi;
            mass_q += qi;
        }
    }
    Ok(KlReport {
        value,
        log_base: "e",
        excluded_bins,
        excluded_mass_p: mass_p,
        excluded_mass_q: mass_q,
        flagged: mass_p.max(mass_q) > KL_EXCLUSION_WARNING,
    })
}

pub fn kl_divergence(p: &Histogram, q: &Histogram) -> Result<f64> {
    kl_report(p, q).map(|r| r.value)
}
