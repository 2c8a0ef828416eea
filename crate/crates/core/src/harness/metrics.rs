use crate::error::{ensure, Error, Result};

fn check_lengths(op: &str, a: usize, b: usize) -> Result<()> {
    ensure!(a > 0, Error::Contract(format!("{op}: empty input")));
    ensure!(a == b, Error::Contract(format!("{op}: {a} predictions vs {b} labels")));
    Ok(())
}

pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    check_lengths("accuracy", preds.len(), labels.len())?;
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Unweighted mean of per-class F1 over `0..classes`; an empty class
/// scores 0.
pub fn macro_f1(preds: &[usize], labels: &[usize], classes: usize) -> Result<f64> {
    check_lengths("macro_f1", preds.len(), labels.len())?;
    ensure!(classes > 0, Error::Contract("macro_f1: zero classes".into()));
    let mut total = 0.0;
    for c in 0..classes {
        let tp = preds.iter().zip(labels).filter(|&(&p, &l)| p == c && l == c).count();
        let fp = preds.iter().zip(labels).filter(|&(&p, &l)| p == c && l != c).count();
        let fn_ = preds.iter().zip(labels).filter(|&(&p, &l)| p != c && l == c).count();
        let denom = 2 * tp + fp + fn_;
        if denom > 0 {
            total += 2.0 * tp as f64 / denom as f64;
        }
    }
    Ok(total / classes as f64)
}

/// Mann–Whitney AUC of `scores` for the binary labels `positive`, with
/// tied scores sharing their mean rank. `None` if a class is absent.
pub fn binary_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let mean_rank = (i + j + 2) as f64 / 2.0;
        rank_sum += mean_rank * order[i..=j].iter().filter(|&&k| positive[k]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos * n_neg) as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AucReport {
    pub value: f64,
    /// Classes without both positives and negatives, left out of the mean.
    pub skipped: Vec<usize>,
}

/// One-vs-rest macro AUC. `scores` is row-major `[N, classes]`.
pub fn macro_auc(scores: &[f64], labels: &[usize], classes: usize) -> Result<AucReport> {
    ensure!(classes > 0, Error::Contract("macro_auc: zero classes".into()));
    check_lengths("macro_auc", scores.len() / classes, labels.len())?;
    ensure!(
        scores.len() == labels.len() * classes,
        Error::Contract(format!("macro_auc: {} scores for {} x {classes}", scores.len(), labels.len()))
    );
    let mut aucs = Vec::new();
    let mut skipped = Vec::new();
    for c in 0..classes {
        let col: Vec<f64> = scores.chunks(classes).map(|r| r[c]).collect();
        let pos: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        match binary_auc(&col, &pos) {
            Some(a) => aucs.push(a),
            None => skipped.push(c),
        }
    }
    ensure!(
        !aucs.is_empty(),
        Error::Contract("macro_auc: no class has both positives and negatives".into())
    );
    Ok(AucReport {
        value: aucs.iter().sum::<f64>() / aucs.len() as f64,
        skipped,
    })
}
