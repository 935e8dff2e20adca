//! Log-domain helpers shared by the lattice, decoder and objectives.

/// `log(exp(a) + exp(b))` without overflow; `-inf` is the additive identity.
#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    let sum: f64 = xs.iter().map(|x| (x - max).exp()).sum();
    max + sum.ln()
}

pub fn log_softmax(xs: &[f64]) -> Vec<f64> {
    let z = log_sum_exp(xs);
    xs.iter().map(|x| x - z).collect()
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let z = log_sum_exp(xs);
    xs.iter().map(|x| (x - z).exp()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn add_exp_matches_naive() {
        let (a, b) = (-1.25_f64, 0.5_f64);
        let naive = (a.exp() + b.exp()).ln();
        assert!((log_add_exp(a, b) - naive).abs() < 1e-15);
        assert_eq!(log_add_exp(f64::NEG_INFINITY, b), b);
    }

    #[test]
    fn sum_exp_survives_large_inputs() {
        let v = log_sum_exp(&[1000.0, 1000.0]);
        assert!((v - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
    }

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&[0.3, -2.0, 5.0, 1.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }
}
