//! Learning-rate range fitting, the triangular cyclical schedule and early
//! stopping.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Schedule and stopping values of the final training run.
pub mod final_training {
    pub const MIN_LR: f64 = 0.0005;
    pub const MAX_LR: f64 = 0.0037;
    pub const ITERATIONS_PER_EPOCH: u64 = 100;
    pub const CYCLE_EPOCHS: u64 = 4;
    pub const CYCLE_LENGTH: u64 = CYCLE_EPOCHS * ITERATIONS_PER_EPOCH;
    pub const EARLY_STOPPING_PATIENCE: u32 = 20;
    pub const TRAINING_SAMPLES: u32 = 400;
    pub const VALIDATION_SAMPLES: u32 = 100;
    pub const BATCH_SIZE: u32 = 4;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    #[default]
    Training,
    Validation,
}

/// Loss against learning rate, strictly increasing in the learning rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossCurve {
    pub points: Vec<(f64, f64)>,
    pub kind: LossKind,
}

impl LossCurve {
    pub fn new(points: Vec<(f64, f64)>, kind: LossKind) -> Result<LossCurve> {
        if let Some(&(a, l)) = points
            .iter()
            .find(|(a, l)| !(a.is_finite() && *a > 0.0 && l.is_finite()))
        {
            return Err(Error::InvalidInput(format!(
                "invalid curve point ({a}, {l})"
            )));
        }
        if points.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::InvalidInput(
                "learning rates must be strictly increasing".into(),
            ));
        }
        Ok(LossCurve { points, kind })
    }

    /// Parses two numeric columns `alpha, loss`. A non-numeric first row is
    /// taken as a header.
    pub fn from_csv_reader<R: Read>(reader: R, kind: LossKind) -> Result<LossCurve> {
        let csv_err = |source| Error::Csv {
            path: "<input>".into(),
            source,
        };
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut points = Vec::new();
        for (row, record) in rdr.records().enumerate() {
            let record = record.map_err(csv_err)?;
            if record.len() < 2 {
                return Err(Error::InvalidInput(format!(
                    "row {}: expected 2 columns",
                    row + 1
                )));
            }
            let parsed = (record[0].parse::<f64>(), record[1].parse::<f64>());
            match parsed {
                (Ok(a), Ok(l)) => points.push((a, l)),
                _ if row == 0 => continue,
                _ => {
                    return Err(Error::InvalidInput(format!(
                        "row {}: non-numeric value in {:?}",
                        row + 1,
                        record.iter().collect::<Vec<_>>()
                    )))
                }
            }
        }
        LossCurve::new(points, kind)
    }

    pub fn from_csv(path: &Path, kind: LossKind) -> Result<LossCurve> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_reader(file, kind).map_err(|e| match e {
            Error::Csv { source, .. } => Error::Csv {
                path: path.to_path_buf(),
                source,
            },
            Error::InvalidInput(m) => Error::InvalidInput(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

/// Median over a centered window of `window` points, truncated at the ends.
pub fn median_filter(values: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    (0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(values.len());
            let mut w = values[lo..hi].to_vec();
            w.sort_by(f64::total_cmp);
            let n = w.len();
            if n % 2 == 1 {
                w[n / 2]
            } else {
                0.5 * (w[n / 2 - 1] + w[n / 2])
            }
        })
        .collect()
}

/// Learning rate at the global maximum of the 5-point median-smoothed loss
/// (first occurrence).
pub fn detect_alpha_min(curve: &LossCurve) -> Result<f64> {
    if curve.points.is_empty() {
        return Err(Error::InvalidInput("empty loss curve".into()));
    }
    let smooth = median_filter(&curve.points.iter().map(|p| p.1).collect::<Vec<_>>(), 5);
    let mut best = 0;
    for (i, &v) in smooth.iter().enumerate() {
        if v > smooth[best] {
            best = i;
        }
    }
    Ok(curve.points[best].0)
}

/// Fit of `f(α) = max(mα + b, c)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrRangeFit {
    pub m: f64,
    pub b: f64,
    pub c: f64,
    pub alpha_min: f64,
    /// Crossover of the two segments, `(c - b) / m`.
    pub alpha_max: f64,
    /// Root-mean-square residual of `f` over the retained points.
    pub rms_residual: f64,
}

impl LrRangeFit {
    pub fn eval(&self, alpha: f64) -> f64 {
        (self.m * alpha + self.b).max(self.c)
    }
}

/// Least-squares line through `pts`: `(m, b, sse)`.
fn line_fit(pts: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let m = sxy / sxx;
    let b = my - m * mx;
    let sse = pts.iter().map(|p| (p.1 - (m * p.0 + b)).powi(2)).sum();
    (m, b, sse)
}

/// Fits `max(mα + b, c)` to the points with `α >= alpha_min` by scanning
/// every breakpoint: a least-squares line left of it (at least two points)
/// and a constant right of it (at least one point). The breakpoint with the
/// smallest total squared residual among those with `m < 0` wins; the first
/// one wins ties. Slopes within `1e-9 * max|L| / α-span` of zero count as
/// flat.
pub fn fit_lr_range(curve: &LossCurve, alpha_min: f64) -> Result<LrRangeFit> {
    let pts: Vec<(f64, f64)> = curve
        .points
        .iter()
        .copied()
        .filter(|p| p.0 >= alpha_min)
        .collect();
    if pts.len() < 4 {
        return Err(Error::InvalidInput(format!(
            "range fit needs >= 4 points with alpha >= {alpha_min}, got {}",
            pts.len()
        )));
    }
    // Slopes this close to zero are rounding noise on a flat segment.
    let loss_scale = pts.iter().map(|p| p.1.abs()).fold(0.0, f64::max);
    let min_descent = 1e-9 * loss_scale / (pts[pts.len() - 1].0 - pts[0].0);
    let mut best: Option<(f64, f64, f64, f64)> = None;
    for split in 2..pts.len() {
        let (m, b, sse_left) = line_fit(&pts[..split]);
        if !(m < -min_descent) {
            continue;
        }
        let right = &pts[split..];
        let c = right.iter().map(|p| p.1).sum::<f64>() / right.len() as f64;
        let sse = sse_left + right.iter().map(|p| (p.1 - c).powi(2)).sum::<f64>();
        if best.is_none_or(|(_, _, _, s)| sse < s) {
            best = Some((m, b, c, sse));
        }
    }
    let (m, b, c, _) = best.ok_or(Error::NoDescent)?;
    let mut fit = LrRangeFit {
        m,
        b,
        c,
        alpha_min,
        alpha_max: (c - b) / m,
        rms_residual: 0.0,
    };
    let sse: f64 = pts.iter().map(|p| (p.1 - fit.eval(p.0)).powi(2)).sum();
    fit.rms_residual = (sse / pts.len() as f64).sqrt();
    Ok(fit)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CyclicSchedule {
    pub alpha_min: f64,
    pub alpha_max: f64,
    /// Iterations per full cycle; even.
    pub cycle_length: u64,
}

impl CyclicSchedule {
    pub fn new(alpha_min: f64, alpha_max: f64, cycle_length: u64) -> Result<CyclicSchedule> {
        if !(alpha_min > 0.0 && alpha_min < alpha_max && alpha_max.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "need 0 < alpha_min < alpha_max, got {alpha_min}, {alpha_max}"
            )));
        }
        if cycle_length < 2 || !cycle_length.is_multiple_of(2) {
            return Err(Error::InvalidParams(format!(
                "cycle_length must be even and >= 2, got {cycle_length}"
            )));
        }
        Ok(CyclicSchedule {
            alpha_min,
            alpha_max,
            cycle_length,
        })
    }

    /// The final training schedule.
    pub fn final_training() -> CyclicSchedule {
        CyclicSchedule {
            alpha_min: final_training::MIN_LR,
            alpha_max: final_training::MAX_LR,
            cycle_length: final_training::CYCLE_LENGTH,
        }
    }
}

/// Triangle wave: `alpha_min` at multiples of the cycle, `alpha_max` at odd
/// multiples of the half cycle, linear in between.
pub fn triangular_lr(iteration: u64, schedule: &CyclicSchedule) -> f64 {
    let half = schedule.cycle_length / 2;
    let pos = iteration % schedule.cycle_length;
    let t = if pos <= half {
        pos as f64 / half as f64
    } else {
        (schedule.cycle_length - pos) as f64 / half as f64
    };
    schedule.alpha_min * (1.0 - t) + schedule.alpha_max * t
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopState {
    pub best_loss: f64,
    /// 1-based epoch of `best_loss`; 0 before the first epoch.
    pub best_epoch: u32,
    pub patience: u32,
    /// Number of epochs observed.
    pub epoch: u32,
}

impl EarlyStopState {
    pub fn new(patience: u32) -> Result<EarlyStopState> {
        if patience < 1 {
            return Err(Error::InvalidParams("patience must be >= 1".into()));
        }
        Ok(EarlyStopState {
            best_loss: f64::INFINITY,
            best_epoch: 0,
            patience,
            epoch: 0,
        })
    }
}

/// Records one validation loss and reports whether training should stop:
/// `epoch - best_epoch >= patience`. Only strict improvements move the best
/// epoch; NaN never does.
pub fn early_stop_check(state: &mut EarlyStopState, val_loss: f64) -> bool {
    state.epoch += 1;
    if val_loss < state.best_loss {
        state.best_loss = val_loss;
        state.best_epoch = state.epoch;
    }
    state.epoch - state.best_epoch >= state.patience
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EarlyStopOutcome {
    /// Epoch at which the rule fired, if it did.
    pub stopped_at: Option<u32>,
    pub best_epoch: u32,
    pub best_loss: f64,
}

/// Runs the stopping rule over a recorded validation-loss history.
pub fn replay_early_stopping(val_losses: &[f64], patience: u32) -> Result<EarlyStopOutcome> {
    let mut state = EarlyStopState::new(patience)?;
    let mut stopped_at = None;
    for &loss in val_losses {
        if early_stop_check(&mut state, loss) {
            stopped_at = Some(state.epoch);
            break;
        }
    }
    Ok(EarlyStopOutcome {
        stopped_at,
        best_epoch: state.best_epoch,
        best_loss: state.best_loss,
    })
}

/// One row of `loss_history.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossHistoryRow {
    pub epoch: u32,
    #[serde(rename = "L_tr")]
    pub train_loss: f64,
    #[serde(rename = "L_val")]
    pub val_loss: f64,
}

/// Reads `loss_history.csv` (header `epoch,L_tr,L_val`). Epochs must be
/// consecutive starting at 1.
pub fn read_loss_history(path: &Path) -> Result<Vec<LossHistoryRow>> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err)?;
    let rows = rdr
        .deserialize::<LossHistoryRow>()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(csv_err)?;
    if let Some((i, r)) = rows
        .iter()
        .enumerate()
        .find(|(i, r)| r.epoch != *i as u32 + 1)
    {
        return Err(Error::InvalidInput(format!(
            "{}: row {} has epoch {}, expected {}",
            path.display(),
            i + 1,
            r.epoch,
            i + 1
        )));
    }
    Ok(rows)
}

pub fn write_loss_history(path: &Path, rows: &[LossHistoryRow]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    for r in rows {
        wtr.serialize(r).map_err(|source| Error::Csv {
            path: path.to_path_buf(),
            source,
        })?;
    }
    let bytes = wtr
        .into_inner()
        .map_err(|e| Error::io(path, e.into_error()))?;
    crate::io::write_atomic(path, &bytes)
}
