use super::Tensor;
use crate::error::{Error, Result};

fn check(logits: &Tensor, labels: &[usize]) -> Result<(usize, usize)> {
    let (b, k) = match logits.shape() {
        [b, k] => (*b, *k),
        s => return Err(Error::dim("logsoftmax_nll", format!("expected B×K logits, got {s:?}"))),
    };
    if labels.len() != b {
        return Err(Error::dim(
            "logsoftmax_nll",
            format!("{} labels for {b} rows", labels.len()),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Index {
            op: "logsoftmax_nll",
            index: bad,
            bound: k,
        });
    }
    Ok((b, k))
}

/// Max-shifted log-sum-exp of one row.
#[inline]
fn row_lse(row: &[f64]) -> (f64, f64) {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let sum: f64 = row.iter().map(|&x| (x - max).exp()).sum();
    (max, max + sum.ln())
}

/// Mean over rows of `−log softmax(logits)[label]`.
pub fn logsoftmax_nll(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let (b, k) = check(logits, labels)?;
    let mut total = 0.0;
    for (row, &label) in logits.data().chunks_exact(k).zip(labels) {
        let (_, lse) = row_lse(row);
        total += lse - row[label];
    }
    Ok(total / b as f64)
}

/// Same loss as [`logsoftmax_nll`], bit for bit, plus the row softmax
/// probabilities needed by both derivative rules.
pub fn logsoftmax_nll_with_probs(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (b, k) = check(logits, labels)?;
    let mut total = 0.0;
    let mut probs = Vec::with_capacity(b * k);
    for (row, &label) in logits.data().chunks_exact(k).zip(labels) {
        let (max, lse) = row_lse(row);
        total += lse - row[label];
        let shift = lse - max;
        probs.extend(row.iter().map(|&x| (x - max - shift).exp()));
    }
    Ok((total / b as f64, Tensor::from_parts(vec![b, k], probs)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngState;

    #[test]
    fn uniform_logits_give_ln_k() {
        let l = Tensor::full(&[3, 10], 0.7);
        let loss = logsoftmax_nll(&l, &[0, 4, 9]).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn saturated_logit_gives_zero() {
        let mut v = vec![0.0; 10];
        v[0] = 1000.0;
        let loss = logsoftmax_nll(&Tensor::new(&[1, 10], v).unwrap(), &[0]).unwrap();
        assert!(loss.abs() < 1e-300 || loss == 0.0);
        assert!(loss >= 0.0);
    }

    #[test]
    fn random_logits_match_naive_formula() {
        let mut rng = RngState::new(9);
        let l = Tensor::randn(&mut rng, &[4, 10]);
        let labels = [3, 0, 9, 5];
        let naive: f64 = l
            .data()
            .chunks_exact(10)
            .zip(labels)
            .map(|(row, y)| -(row[y].exp() / row.iter().map(|x| x.exp()).sum::<f64>()).ln())
            .sum::<f64>()
            / 4.0;
        let loss = logsoftmax_nll(&l, &labels).unwrap();
        assert!((loss - naive).abs() < 1e-12, "{loss} vs {naive}");
        let (again, p) = logsoftmax_nll_with_probs(&l, &labels).unwrap();
        assert_eq!(loss.to_bits(), again.to_bits());
        for row in p.data().chunks_exact(10) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn label_out_of_range() {
        let err = logsoftmax_nll(&Tensor::zeros(&[2, 3]), &[0, 3]).unwrap_err();
        assert!(matches!(err, Error::Index { index: 3, bound: 3, .. }));
    }
}
