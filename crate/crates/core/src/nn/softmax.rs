/// Softmax over `scores` restricted to `mask`, followed by one extra
/// sentinel entry for the dummy action. Masked entries are exactly 0. With
/// no unmasked entry the sentinel gets probability 1.
pub fn masked_softmax(scores: &[f64], mask: &[bool]) -> Vec<f64> {
    assert_eq!(scores.len(), mask.len(), "mask length must match scores");
    let mut out = vec![0.0; scores.len() + 1];
    let max = scores
        .iter()
        .zip(mask)
        .map(|(&s, &m)| if m { s } else { f64::NEG_INFINITY })
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        out[scores.len()] = 1.0;
        return out;
    }
    let mut total = 0.0;
    for ((o, &s), &m) in out.iter_mut().zip(scores).zip(mask) {
        let logit = if m { s } else { f64::NEG_INFINITY };
        *o = (logit - max).exp();
        total += *o;
    }
    out[..scores.len()].iter_mut().for_each(|o| *o /= total);
    out
}

/// Log-softmax over a dense list of candidate logits.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_unmasked_cell() {
        let p = masked_softmax(&[3.0, -1.0, 7.0], &[false, true, false]);
        assert_eq!(p, vec![0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn equal_scores_split_evenly() {
        let p = masked_softmax(&[2.0, 2.0, 100.0], &[true, true, false]);
        assert_eq!(p, vec![0.5, 0.5, 0.0, 0.0]);
    }

    #[test]
    fn all_masked_is_dummy() {
        let p = masked_softmax(&[1.0, 2.0], &[false, false]);
        assert_eq!(p, vec![0.0, 0.0, 1.0]);
        assert_eq!(masked_softmax(&[], &[]), vec![1.0]);
    }

    #[test]
    fn large_scores_stay_finite() {
        let p = masked_softmax(&[1000.0, 999.0, -1e9], &[true, true, true]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p[0] > p[1] && p[2] == 0.0);
    }

    #[test]
    fn log_softmax_normalizes() {
        let l = log_softmax(&[0.3, -2.0, 5.0]);
        let s: f64 = l.iter().map(|v| v.exp()).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }
}
