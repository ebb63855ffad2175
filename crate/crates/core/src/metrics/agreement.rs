//! Agreement between true and predicted ratings.

use super::MetricsError;

/// `n_cases x n_items` table of (true, predicted) rating pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ItemPairMatrix {
    n_items: usize,
    truth: Vec<u8>,
    pred: Vec<u8>,
}

impl ItemPairMatrix {
    /// Builds the matrix from per-case rating rows. Every row must have the
    /// same length and every rating must lie in 1..=7.
    pub fn from_rows<T, P>(rows: impl IntoIterator<Item = (T, P)>) -> Result<Self, MetricsError>
    where
        T: AsRef<[u8]>,
        P: AsRef<[u8]>,
    {
        let mut n_items = None;
        let mut truth = Vec::new();
        let mut pred = Vec::new();
        for (t, p) in rows {
            let (t, p) = (t.as_ref(), p.as_ref());
            let width = *n_items.get_or_insert(t.len());
            if t.len() != width || p.len() != width {
                return Err(MetricsError::LengthMismatch {
                    expected: width,
                    found: if t.len() != width { t.len() } else { p.len() },
                });
            }
            if let Some(bad) = t.iter().chain(p).find(|r| !(1..=7).contains(*r)) {
                return Err(MetricsError::InvalidRating(*bad));
            }
            truth.extend_from_slice(t);
            pred.extend_from_slice(p);
        }
        Ok(ItemPairMatrix {
            n_items: n_items.unwrap_or(0),
            truth,
            pred,
        })
    }

    pub fn n_cases(&self) -> usize {
        if self.n_items == 0 {
            0
        } else {
            self.truth.len() / self.n_items
        }
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    /// (true, predicted) pairs of one item across cases.
    pub fn column(&self, item: usize) -> impl Iterator<Item = (u8, u8)> + '_ {
        (0..self.n_cases()).map(move |case| {
            let at = case * self.n_items + item;
            (self.truth[at], self.pred[at])
        })
    }

    pub fn swapped(&self) -> ItemPairMatrix {
        ItemPairMatrix {
            n_items: self.n_items,
            truth: self.pred.clone(),
            pred: self.truth.clone(),
        }
    }
}

/// Fraction of cases per item whose ratings differ by at most one point.
pub fn concordance_per_item(m: &ItemPairMatrix) -> Result<Vec<f64>, MetricsError> {
    let n = m.n_cases();
    if n == 0 {
        return Err(MetricsError::EmptyInput);
    }
    Ok((0..m.n_items())
        .map(|j| {
            let close = m.column(j).filter(|(t, p)| t.abs_diff(*p) <= 1).count();
            close as f64 / n as f64
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConcordanceSummary {
    pub median: f64,
    pub n_below: usize,
}

/// Median of the per-item values and the count strictly below `threshold`.
pub fn concordance_summary(values: &[f64], threshold: f64) -> Result<ConcordanceSummary, MetricsError> {
    Ok(ConcordanceSummary {
        median: median(values)?,
        n_below: values.iter().filter(|v| **v < threshold).count(),
    })
}

/// Median; for an even count, the mean of the two central order statistics.
pub fn median(values: &[f64]) -> Result<f64, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    Ok(if sorted.len() % 2 == 0 {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    } else {
        sorted[mid]
    })
}

pub fn mean(values: &[f64]) -> Result<f64, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Sample Pearson correlation.
pub fn pearson(pairs: &[(f64, f64)]) -> Result<f64, MetricsError> {
    if pairs.len() < 2 {
        return Err(MetricsError::InsufficientData {
            needed: 2,
            found: pairs.len(),
        });
    }
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in pairs {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricsError::DegenerateVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// ICC(3,k): two-way mixed effects, consistency, average of k raters.
///
/// Rows are targets, columns are raters. Computed from the two-way ANOVA
/// mean squares as `(MS_rows - MS_error) / MS_rows`.
pub fn icc3k<R: AsRef<[f64]>>(table: &[R]) -> Result<f64, MetricsError> {
    let n = table.len();
    if n < 3 {
        return Err(MetricsError::InsufficientData { needed: 3, found: n });
    }
    let k = table[0].as_ref().len();
    if k < 2 {
        return Err(MetricsError::InsufficientData { needed: 2, found: k });
    }
    if let Some(row) = table.iter().find(|r| r.as_ref().len() != k) {
        return Err(MetricsError::LengthMismatch {
            expected: k,
            found: row.as_ref().len(),
        });
    }

    let (nf, kf) = (n as f64, k as f64);
    let grand = table.iter().flat_map(|r| r.as_ref()).sum::<f64>() / (nf * kf);
    let row_means: Vec<f64> = table
        .iter()
        .map(|r| r.as_ref().iter().sum::<f64>() / kf)
        .collect();
    let col_means: Vec<f64> = (0..k)
        .map(|j| table.iter().map(|r| r.as_ref()[j]).sum::<f64>() / nf)
        .collect();

    let ss_total: f64 = table
        .iter()
        .flat_map(|r| r.as_ref())
        .map(|x| (x - grand).powi(2))
        .sum();
    let ss_rows = kf * row_means.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let ss_cols = nf * col_means.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let ss_error = (ss_total - ss_rows - ss_cols).max(0.0);

    let ms_rows = ss_rows / (nf - 1.0);
    let ms_error = ss_error / ((nf - 1.0) * (kf - 1.0));
    if ss_rows <= 1e-14 * ss_total || ss_rows == 0.0 {
        return Err(MetricsError::Degenerate(
            "no between-target variance (MS_rows == 0)".into(),
        ));
    }
    Ok((ms_rows - ms_error) / ms_rows)
}

/// Root mean squared difference between the coordinates of each pair.
pub fn rmse(pairs: &[(f64, f64)]) -> Result<f64, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mse = pairs.iter().map(|(t, p)| (t - p).powi(2)).sum::<f64>() / pairs.len() as f64;
    Ok(mse.sqrt())
}
