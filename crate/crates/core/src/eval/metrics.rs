use serde::{Deserialize, Serialize};

use super::RunResult;
use crate::corpus::Task;
use crate::error::{Error, Result};

/// Correctly rounded floating-point sum (Shewchuk's algorithm with
/// round-half-even correction of the final partials). The result does not
/// depend on the order of `values`.
pub fn fsum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut partials: Vec<f64> = Vec::new();
    for mut x in values {
        let mut i = 0;
        for j in 0..partials.len() {
            let mut y = partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        partials.truncate(i);
        partials.push(x);
    }

    let Some(mut n) = partials.len().checked_sub(1) else {
        return 0.0;
    };
    let mut hi = partials[n];
    let mut lo = 0.0;
    while n > 0 {
        let x = hi;
        n -= 1;
        let y = partials[n];
        hi = x + y;
        lo = y - (hi - x);
        if lo != 0.0 {
            break;
        }
    }
    if n > 0 && ((lo < 0.0 && partials[n - 1] < 0.0) || (lo > 0.0 && partials[n - 1] > 0.0)) {
        let y = lo * 2.0;
        let x = hi + y;
        if y == x - hi {
            hi = x;
        }
    }
    hi
}

/// Rounds a non-negative value to one decimal place, halves away from zero,
/// judged on the exact binary value of `x`.
pub fn round_half_up_1dp(x: f64) -> f64 {
    if !x.is_finite() {
        return x;
    }
    let sign = x.signum();
    let x = x.abs();
    let mut tenths = (x * 10.0).floor();
    // The residual is a multiple of ulp(x) below 1, so fma computes it
    // exactly.
    let mut rest = x.mul_add(10.0, -tenths);
    if rest < 0.0 {
        tenths -= 1.0;
        rest += 1.0;
    } else if rest >= 1.0 {
        tenths += 1.0;
        rest -= 1.0;
    }
    if rest >= 0.5 {
        tenths += 1.0;
    }
    sign * tenths / 10.0
}

/// Gold × predicted counts. Failed extractions are kept in a separate
/// column so that the diagonal mass still equals the accuracy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    /// `cells[gold][predicted]`.
    pub cells: Vec<Vec<usize>>,
    /// Per gold label, items whose answer could not be extracted.
    pub unparsed: Vec<usize>,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.cells.iter().flatten().sum::<usize>() + self.unparsed.iter().sum::<usize>()
    }

    pub fn diagonal(&self) -> usize {
        (0..self.labels.len()).map(|i| self.cells[i][i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            n => self.diagonal() as f64 / n as f64,
        }
    }

    pub fn get(&self, gold: &str, predicted: &str) -> Option<usize> {
        let i = self.labels.iter().position(|l| l == gold)?;
        let j = self.labels.iter().position(|l| l == predicted)?;
        Some(self.cells[i][j])
    }
}

pub fn confusion(result: &RunResult) -> Result<ConfusionMatrix> {
    let labels: Vec<String> = result.task.labels().into_iter().map(String::from).collect();
    let k = labels.len();
    let mut cells = vec![vec![0usize; k]; k];
    let mut unparsed = vec![0usize; k];
    let index = |label: &str| labels.iter().position(|l| l == label);
    for p in &result.predictions {
        let gold = p
            .gold
            .as_deref()
            .ok_or_else(|| Error::Invalid(format!("prediction for `{}` has no gold label", p.query_id)))?;
        let g = index(gold).ok_or_else(|| Error::Invalid(format!("gold label `{gold}` is not in the label set")))?;
        if p.extraction_failed {
            unparsed[g] += 1;
            continue;
        }
        let q = index(&p.predicted)
            .ok_or_else(|| Error::Invalid(format!("predicted label `{}` is not in the label set", p.predicted)))?;
        cells[g][q] += 1;
    }
    Ok(ConfusionMatrix {
        labels,
        cells,
        unparsed,
    })
}

/// Accuracy range over a sweep, in percent rounded to one decimal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub task: Task,
    pub model_name: String,
    pub runs: usize,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    /// `max - min` of the rounded values.
    pub delta: f64,
}

/// Summarizes accuracies (fractions in `[0, 1]`).
///
/// The mean is the correctly rounded sum divided by the count, scaled to
/// percent, so permuting the inputs cannot change it.
pub fn summarize_accuracies(task: Task, model_name: &str, accuracies: &[f64]) -> Result<SweepSummary> {
    if accuracies.is_empty() {
        return Err(Error::Invalid("sweep summary needs at least one run".into()));
    }
    let min = accuracies.iter().copied().fold(f64::INFINITY, f64::min);
    let max = accuracies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = fsum(accuracies.iter().copied()) / accuracies.len() as f64;
    let min = round_half_up_1dp(min * 100.0);
    let max = round_half_up_1dp(max * 100.0);
    let delta = ((max * 10.0).round() - (min * 10.0).round()) / 10.0;
    Ok(SweepSummary {
        task,
        model_name: model_name.to_string(),
        runs: accuracies.len(),
        min,
        max,
        mean: round_half_up_1dp(mean * 100.0),
        delta,
    })
}

pub fn sweep_summary(results: &[RunResult]) -> Result<SweepSummary> {
    let first = results
        .first()
        .ok_or_else(|| Error::Invalid("sweep summary needs at least one run".into()))?;
    if let Some(other) = results
        .iter()
        .find(|r| r.task != first.task || r.model_name != first.model_name)
    {
        return Err(Error::Invalid(format!(
            "cannot summarize {} / {} together with {} / {}",
            first.model_name, first.task, other.model_name, other.task
        )));
    }
    let accuracies: Vec<f64> = results.iter().map(|r| r.accuracy).collect();
    summarize_accuracies(first.task, &first.model_name, &accuracies)
}

/// Ordinary least squares fit of accuracy on mean confidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFit {
    /// (mean confidence, accuracy) pairs.
    pub points: Vec<(f64, f64)>,
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

pub fn calibration_fit(points: &[(f64, f64)]) -> Result<CalibrationFit> {
    if points.len() < 2 {
        return Err(Error::Invalid("calibration fit needs at least two points".into()));
    }
    if points.iter().all(|&(x, _)| x == points[0].0) {
        return Err(Error::Invalid("degenerate regression: confidence has zero variance".into()));
    }
    let n = points.len() as f64;
    let mean_x = fsum(points.iter().map(|p| p.0)) / n;
    let mean_y = fsum(points.iter().map(|p| p.1)) / n;
    let sxx = fsum(points.iter().map(|p| (p.0 - mean_x) * (p.0 - mean_x)));
    let sxy = fsum(points.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)));
    let syy = fsum(points.iter().map(|p| (p.1 - mean_y) * (p.1 - mean_y)));
    if sxx.is_nan() || sxx <= 0.0 {
        return Err(Error::Invalid("degenerate regression: confidence has zero variance".into()));
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let ss_res = fsum(points.iter().map(|&(x, y)| {
        let r = y - (intercept + slope * x);
        r * r
    }));
    let r2 = if syy > 0.0 {
        (1.0 - ss_res / syy).clamp(0.0, 1.0)
    } else {
        1.0
    };
    Ok(CalibrationFit {
        points: points.to_vec(),
        slope,
        intercept,
        r2,
    })
}

/// Expected calibration error over `(confidence, correct)` pairs with
/// `bins` equal-width bins on `[0, 1]`. Confidence 1.0 falls in the last
/// bin.
pub fn expected_calibration_error(items: &[(f64, bool)], bins: usize) -> Result<f64> {
    if bins == 0 {
        return Err(Error::Invalid("ECE needs at least one bin".into()));
    }
    if items.is_empty() {
        return Ok(0.0);
    }
    let mut count = vec![0usize; bins];
    let mut conf = vec![Vec::new(); bins];
    let mut hits = vec![0usize; bins];
    for &(c, correct) in items {
        let b = ((c.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1);
        count[b] += 1;
        conf[b].push(c);
        hits[b] += correct as usize;
    }
    let total = items.len() as f64;
    let ece = fsum((0..bins).filter(|&b| count[b] > 0).map(|b| {
        let n = count[b] as f64;
        let acc = hits[b] as f64 / n;
        let mean_conf = fsum(conf[b].iter().copied()) / n;
        n / total * (acc - mean_conf).abs()
    }));
    Ok(ece.clamp(0.0, 1.0))
}

/// ECE over the gold-labeled predictions of a run.
pub fn ece(result: &RunResult, bins: usize) -> Result<f64> {
    let items: Vec<(f64, bool)> = result
        .predictions
        .iter()
        .filter_map(|p| p.is_correct().map(|c| (p.confidence, c)))
        .collect();
    expected_calibration_error(&items, bins)
}
