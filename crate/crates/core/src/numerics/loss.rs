use crate::error::{ensure, Error, Result};
use crate::numerics::tensor::Tensor;

/// Row-wise softmax of an `[N, C]` buffer.
pub fn softmax_rows(logits: &[f64], classes: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks(classes) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        out.extend(e.into_iter().map(|v| v / s));
    }
    out
}

/// Mean negative log-likelihood of `labels` under softmax(`logits`).
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let &[n, c] = logits.shape() else {
        return Err(Error::shape("cross_entropy", format!("logits must be [N, C], got {:?}", logits.shape())));
    };
    ensure!(
        labels.len() == n,
        Error::shape("cross_entropy", format!("{} labels for logits {:?}", labels.len(), logits.shape()))
    );
    if let Some(bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::Contract(format!("label {bad} out of range for {c} classes")));
    }
    let probs = softmax_rows(&logits.data(), c);
    let mut total = 0.0;
    for (row, (lg, &y)) in logits.data().chunks(c).zip(labels).enumerate() {
        let m = lg.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + lg.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - lg[y];
        debug_assert!(probs[row * c + y] >= 0.0);
    }
    let labels = labels.to_vec();
    Ok(Tensor::from_op(
        "cross_entropy",
        vec![1],
        vec![total / n as f64],
        vec![logits.clone()],
        move |ctx| {
            let scale = ctx.grad_out[0] / n as f64;
            let mut g: Vec<f64> = probs.iter().map(|p| p * scale).collect();
            for (i, &y) in labels.iter().enumerate() {
                g[i * c + y] -= scale;
            }
            vec![Some(g)]
        },
    ))
}
