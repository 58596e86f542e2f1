//! Small distribution helpers shared by calibration and the experiments.

use statrs::function::gamma::gamma_ur;

/// Upper-tail probability `P(X >= stat)` for `X ~ chi-square(df)`.
pub fn chi_square_sf(stat: f64, df: usize) -> f64 {
    if df == 0 || !(stat > 0.0) {
        return 1.0;
    }
    if stat.is_infinite() {
        return 0.0;
    }
    gamma_ur(df as f64 / 2.0, stat / 2.0).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

/// One-sample Kolmogorov-Smirnov test against Uniform(0, 1), with the
/// asymptotic p-value under Stephens' small-sample correction.
pub fn ks_uniform(values: &[f64]) -> KsResult {
    let n = values.len();
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let nf = n as f64;
    let mut d = 0.0f64;
    for (i, &x) in v.iter().enumerate() {
        let f = x.clamp(0.0, 1.0);
        d = d.max((i + 1) as f64 / nf - f).max(f - i as f64 / nf);
    }
    let sq = nf.sqrt();
    let lambda = (sq + 0.12 + 0.11 / sq) * d;
    KsResult {
        statistic: d,
        p_value: kolmogorov_sf(lambda),
        n,
    }
}

/// `Q(lambda) = 2 sum_{k>=1} (-1)^(k-1) exp(-2 k^2 lambda^2)`.
fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let k = f64::from(k);
        let term = (-2.0 * k * k * lambda * lambda).exp();
        sum += if k as u32 % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Mean and sample standard deviation; the SD is 0 for fewer than two values.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chi_square_reference_values() {
        // 95th percentiles of chi-square with 1 and 3 degrees of freedom.
        assert!((chi_square_sf(3.841458820694124, 1) - 0.05).abs() < 1e-9);
        assert!((chi_square_sf(7.814727903251178, 3) - 0.05).abs() < 1e-9);
        // df = 2 is exponential with rate one half.
        assert!((chi_square_sf(5.0, 2) - (-2.5f64).exp()).abs() < 1e-14);
        assert_eq!(chi_square_sf(0.0, 2), 1.0);
        assert_eq!(chi_square_sf(3.0, 0), 1.0);
        assert!(chi_square_sf(2000.0, 1) < 1e-300);
    }

    #[test]
    fn ks_on_uniform_grid_passes() {
        let v: Vec<f64> = (0..500).map(|i| (f64::from(i) + 0.5) / 500.0).collect();
        let r = ks_uniform(&v);
        assert!(r.statistic <= 0.001 + 1e-12);
        assert!(r.p_value > 0.99);
    }

    #[test]
    fn ks_on_skewed_sample_fails() {
        let v: Vec<f64> = (0..500).map(|i| ((f64::from(i) + 0.5) / 500.0).powi(3)).collect();
        assert!(ks_uniform(&v).p_value < 1e-6);
    }

    #[test]
    fn kolmogorov_known_quantile() {
        // 1.358 is the asymptotic 5% critical value.
        assert!((kolmogorov_sf(1.3581) - 0.05).abs() < 1e-3);
    }

    #[test]
    fn summaries() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        let (m, s) = mean_sd(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-15);
    }
}
