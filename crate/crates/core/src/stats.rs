//! Small numeric helpers shared by several modules.

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance (n - 1 denominator).
pub fn sample_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Lower median: for even counts the smaller of the two middle values.
pub fn lower_median(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    Some(v[(v.len() - 1) / 2])
}

/// Trailing moving average with the given window (shorter at the start).
pub fn moving_average(xs: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    (0..xs.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(w);
            mean(&xs[lo..=i])
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variance_of_pair() {
        assert_eq!(sample_variance(&[0.0, 1.0]), 0.5);
        assert_eq!(sample_variance(&[3.0]), 0.0);
    }

    #[test]
    fn lower_median_rules() {
        assert_eq!(lower_median(&[1.7, 1.2, 1.6]), Some(1.6));
        assert_eq!(lower_median(&[2.0, 1.0]), Some(1.0));
        assert_eq!(lower_median(&[1.3]), Some(1.3));
        assert_eq!(lower_median(&[]), None);
    }

    #[test]
    fn moving_average_warms_up() {
        assert_eq!(moving_average(&[2.0, 4.0, 6.0], 2), vec![2.0, 3.0, 5.0]);
    }
}
