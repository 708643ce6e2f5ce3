//! Confidence intervals over per-seed results.

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Result, RlError};

/// Mean and Student-t confidence half-width at `level` (e.g. 0.99) with
/// `n - 1` degrees of freedom.
pub fn aggregate_ci(samples: &[f64], level: f64) -> Result<(f64, f64)> {
    if samples.len() < 2 {
        return Err(RlError::Run(format!(
            "a confidence interval needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    if !(0.0..1.0).contains(&level) {
        return Err(RlError::Run(format!("confidence level {level} is outside [0, 1)")));
    }
    if samples.iter().all(|x| *x == samples[0]) {
        return Ok((samples[0], 0.0));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if level == 0.0 {
        return Ok((mean, 0.0));
    }
    let t = StudentsT::new(0.0, 1.0, n - 1.0)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.5 + level / 2.0);
    Ok((mean, t * (var / n).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_sample_example() {
        let (mean, hw) = aggregate_ci(&[0.6, 0.8], 0.99).unwrap();
        assert!((mean - 0.7).abs() < 1e-12);
        // t(0.995, 1) = 63.6567, standard error 0.1
        assert!((hw - 6.366).abs() < 1e-3);
    }

    #[test]
    fn degenerate_cases() {
        assert_eq!(aggregate_ci(&[0.7; 10], 0.99).unwrap(), (0.7, 0.0));
        assert_eq!(aggregate_ci(&[0.2, 0.9], 0.0).unwrap().1, 0.0);
        assert!(aggregate_ci(&[0.5], 0.99).is_err());
        assert!(aggregate_ci(&[0.5, 0.4], 1.0).is_err());
    }

    #[test]
    fn matches_t_table() {
        // t(0.995, 9) = 3.2498
        let samples: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let (_, hw) = aggregate_ci(&samples, 0.99).unwrap();
        let se = (samples.iter().map(|x| (x - 4.5f64).powi(2)).sum::<f64>() / 9.0 / 10.0).sqrt();
        assert!((hw / se - 3.2498).abs() < 1e-3);
    }
}
