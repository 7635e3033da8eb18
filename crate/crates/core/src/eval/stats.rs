use statrs::distribution::{ContinuousCDF, StudentsT};

use super::EvalError;

/// Two-sided p-value of Student's paired t-test on `x − y`.
///
/// All-zero differences give 1. Constant nonzero differences have no
/// spread and give 0.
pub fn paired_t_test(x: &[f64], y: &[f64]) -> Result<f64, EvalError> {
    if x.len() != y.len() {
        return Err(EvalError::Mismatch(format!(
            "paired samples of lengths {} and {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len();
    if n < 2 {
        return Err(EvalError::TooFewSamples(n));
    }
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    if d.iter().all(|&v| v == 0.0) {
        return Ok(1.0);
    }
    let nf = n as f64;
    let mean = d.iter().sum::<f64>() / nf;
    let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (nf - 1.0);
    if var == 0.0 {
        return Ok(0.0);
    }
    let t = mean / (var.sqrt() / nf.sqrt());
    let dist = StudentsT::new(0.0, 1.0, nf - 1.0).expect("positive degrees of freedom");
    Ok((2.0 * dist.sf(t.abs())).min(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Closed-form two-sided tail for two degrees of freedom.
    fn p_two_dof(t: f64) -> f64 {
        1.0 - t.abs() / (2.0 + t * t).sqrt()
    }

    #[test]
    fn conventions() {
        assert_eq!(paired_t_test(&[0.3, 0.4, 0.5], &[0.3, 0.4, 0.5]).unwrap(), 1.0);
        assert_eq!(paired_t_test(&[2.0; 4], &[1.0; 4]).unwrap(), 0.0);
        assert!(matches!(paired_t_test(&[1.0], &[0.0]), Err(EvalError::TooFewSamples(1))));
        assert!(matches!(paired_t_test(&[1.0, 2.0], &[0.0]), Err(EvalError::Mismatch(_))));
    }

    #[test]
    fn matches_closed_form_for_two_dof() {
        let d = [0.2, 0.9, 0.4];
        let mean = 0.5;
        let sd = ((0.09 + 0.16 + 0.01) / 2.0f64).sqrt();
        let t = mean / (sd / 3f64.sqrt());
        let p = paired_t_test(&d, &[0.0; 3]).unwrap();
        assert!((p - p_two_dof(t)).abs() < 1e-12, "{p} vs {}", p_two_dof(t));
    }

    proptest! {
        #[test]
        fn symmetric(pairs in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0), 2..30)) {
            let x: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let y: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let a = paired_t_test(&x, &y).unwrap();
            prop_assert_eq!(a, paired_t_test(&y, &x).unwrap());
            prop_assert!((0.0..=1.0).contains(&a));
        }
    }
}
