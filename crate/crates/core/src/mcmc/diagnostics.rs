use crate::error::{Error, Result};
use crate::marginal::MarginalDensity;

/// Potential scale reduction factor `sqrt(1 + B / (n W))` for equal-length chains.
///
/// This is the large-sample form of the Gelman-Rubin statistic; it equals 1
/// exactly when the chains share their means.
pub fn gelman_rubin(chains: &[&[f64]]) -> Result<f64> {
    if chains.len() < 2 {
        return Err(Error::InvalidInput("potential scale reduction needs at least two chains".into()));
    }
    let n = chains.iter().map(|c| c.len()).min().unwrap_or(0);
    if n < 2 {
        return Err(Error::InvalidInput("chains need at least two draws".into()));
    }
    let m = chains.len() as f64;
    let nf = n as f64;
    let means: Vec<f64> = chains.iter().map(|c| c[..n].iter().sum::<f64>() / nf).collect();
    let grand = means.iter().sum::<f64>() / m;
    let b = nf / (m - 1.0) * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>();
    let w = chains
        .iter()
        .zip(&means)
        .map(|(c, mu)| c[..n].iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (nf - 1.0))
        .sum::<f64>()
        / m;
    if w == 0.0 {
        return Ok(if b == 0.0 { 1.0 } else { f64::INFINITY });
    }
    Ok((1.0 + b / (nf * w)).sqrt())
}

/// Effective sample size by Geyer's initial monotone positive sequence.
pub fn effective_sample_size(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 4 {
        return n as f64;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let c0 = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    if c0 == 0.0 {
        return n as f64;
    }
    let acov = |lag: usize| -> f64 {
        x[..n - lag].iter().zip(&x[lag..]).map(|(a, b)| (a - mean) * (b - mean)).sum::<f64>() / n as f64
    };
    // pair sums Gamma_k = rho_{2k} + rho_{2k+1}
    let mut total = 0.0;
    let mut prev = f64::INFINITY;
    let mut k = 0;
    while 2 * k + 1 < n {
        let g = (acov(2 * k) + acov(2 * k + 1)) / c0;
        if g <= 0.0 {
            break;
        }
        let g = g.min(prev);
        total += g;
        prev = g;
        k += 1;
    }
    let tau = (2.0 * total - 1.0).max(1e-8);
    (n as f64 / tau).min(n as f64 * (n as f64).log10().max(1.0))
}

/// Monte Carlo standard error of the mean of `x`.
pub fn mc_standard_error(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let sd = (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    sd / effective_sample_size(x).sqrt()
}

/// Fraction of samples in the closed interval `[lo, hi]`.
pub fn interval_containment(samples: &[f64], lo: f64, hi: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("no samples".into()));
    }
    if !(lo < hi) {
        return Err(Error::InvalidInput(format!("interval [{lo}, {hi}] is empty")));
    }
    Ok(samples.iter().filter(|&&v| v >= lo && v <= hi).count() as f64 / samples.len() as f64)
}

/// Mass a marginal density assigns to `[lo, hi]`.
pub fn probability_in_interval(m: &MarginalDensity, lo: f64, hi: f64) -> Result<f64> {
    m.probability_in_interval(lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn rhat_identical_and_shifted() {
        let a: Vec<f64> = (0..500).map(|i| ((i * 37) % 101) as f64 / 101.0).collect();
        assert_eq!(gelman_rubin(&[&a, &a, &a]).unwrap(), 1.0);
        let b: Vec<f64> = a.iter().map(|v| v + 1.0).collect();
        assert!(gelman_rubin(&[&a, &b]).unwrap() > 1.2);
        assert!(gelman_rubin(&[&a]).is_err());
    }

    #[test]
    fn ess_of_iid_and_ar1() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let nd = Normal::new(0.0, 1.0).unwrap();
        let iid: Vec<f64> = (0..20_000).map(|_| nd.sample(&mut rng)).collect();
        let e = effective_sample_size(&iid);
        assert!((e / 20_000.0 - 1.0).abs() < 0.1, "{e}");
        let mut ar = vec![0.0; 20_000];
        for i in 1..ar.len() {
            ar[i] = 0.9 * ar[i - 1] + nd.sample(&mut rng);
        }
        // integrated autocorrelation time (1 + 0.9) / (1 - 0.9) = 19
        let e = effective_sample_size(&ar);
        assert!((20_000.0 / e - 19.0).abs() < 4.0, "{e}");
    }

    #[test]
    fn containment() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(interval_containment(&s, 1.0, 4.0).unwrap(), 1.0);
        assert_eq!(interval_containment(&s, 1.5, 3.0).unwrap(), 0.5);
        assert!(interval_containment(&[], 0.0, 1.0).is_err());
        assert!(interval_containment(&s, 2.0, 2.0).is_err());
    }
}
