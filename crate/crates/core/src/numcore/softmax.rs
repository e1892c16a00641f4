use super::matrix::Matrix;

/// Row-wise softmax with max-shift; each output row sums to 1.
pub fn softmax_rows(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for i in 0..out.rows() {
        softmax_in_place(out.row_mut(i));
    }
    out
}

/// Row-wise log-softmax: `x - max - ln Σ exp(x - max)`.
pub fn log_softmax_rows(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for i in 0..out.rows() {
        log_softmax_in_place(out.row_mut(i));
    }
    out
}

/// Column-wise softmax (each column is a distribution).
pub fn softmax_cols(x: &Matrix) -> Matrix {
    softmax_rows(&x.transpose()).transpose()
}

pub fn log_softmax_cols(x: &Matrix) -> Matrix {
    log_softmax_rows(&x.transpose()).transpose()
}

pub fn softmax_in_place(row: &mut [f64]) {
    if row.is_empty() {
        return;
    }
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

pub fn log_softmax_in_place(row: &mut [f64]) {
    if row.is_empty() {
        return;
    }
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    for v in row.iter_mut() {
        *v = *v - max - lse;
    }
}

/// `ln Σ exp(x)` computed with a max-shift.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}
