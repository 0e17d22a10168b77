use ndarray::{Array2, ArrayView2};

use crate::error::{shape_err, GllError, Result};

/// Row-wise softmax with the usual max shift.
pub fn softmax(logits: ArrayView2<f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let mx = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - mx).exp());
        let z = row.sum();
        row /= z;
    }
    out
}

/// Mean softmax cross-entropy over `rows`, with its gradient with respect to
/// every logit (zero on rows not in `rows`).
pub fn cross_entropy(logits: ArrayView2<f64>, labels: &[usize], rows: &[usize]) -> Result<(f64, Array2<f64>)> {
    if labels.len() != logits.nrows() {
        return Err(shape_err(format!("{} labels", logits.nrows()), labels.len()));
    }
    let classes = logits.ncols();
    let mut grad = Array2::zeros(logits.dim());
    if rows.is_empty() {
        return Ok((0.0, grad));
    }
    let scale = 1.0 / rows.len() as f64;
    let mut loss = 0.0;
    for &r in rows {
        let y = labels[r];
        if y >= classes || r >= logits.nrows() {
            return Err(GllError::InvalidData(format!(
                "row {r} with label {y} invalid for {}x{classes} logits",
                logits.nrows()
            )));
        }
        let row = logits.row(r);
        let mx = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let z: f64 = row.iter().map(|v| (v - mx).exp()).sum();
        loss += z.ln() + mx - row[y];
        for c in 0..classes {
            grad[[r, c]] = scale * ((row[c] - mx).exp() / z - if c == y { 1.0 } else { 0.0 });
        }
    }
    Ok((loss * scale, grad))
}

/// Fraction of `rows` whose argmax matches the label.
pub fn accuracy(predictions: &[usize], labels: &[usize], rows: &[usize]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let hits = rows.iter().filter(|&&r| predictions[r] == labels[r]).count();
    hits as f64 / rows.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreKind {
    Entropy,
    L2,
}

/// Uncertainty of each row of `u`: entropy `-sum u log u` of the row
/// normalized onto the simplex, or `1 - |u|_2`. Larger means less certain.
pub fn base_scores(u: ArrayView2<f64>, kind: ScoreKind) -> Vec<f64> {
    u.rows()
        .into_iter()
        .map(|row| match kind {
            ScoreKind::Entropy => {
                let clamped: Vec<f64> = row.iter().map(|v| v.max(1e-12)).collect();
                let total: f64 = clamped.iter().sum();
                -clamped
                    .iter()
                    .map(|v| {
                        let p = v / total;
                        p * p.ln()
                    })
                    .sum::<f64>()
            }
            ScoreKind::L2 => 1.0 - row.iter().map(|v| v * v).sum::<f64>().sqrt(),
        })
        .collect()
}
