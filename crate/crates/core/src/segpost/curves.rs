//! Acceptance-ratio curves over per-instance similarity scores.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AcceptanceCurve {
    /// `k / grid_size` for `k = 0..=grid_size`.
    pub thresholds: Vec<f64>,
    /// Fraction of instances whose similarity strictly exceeds each threshold.
    pub ratios: Vec<f64>,
    mean: f64,
}

impl AcceptanceCurve {
    /// Area under the curve, which for scores in `[0, 1]` equals their mean.
    pub fn auc(&self) -> f64 {
        self.mean
    }

    /// Left Riemann sum of the curve, an upper bound on the area that is at
    /// most one grid step away from it since the curve is nonincreasing.
    pub fn integrated_auc(&self) -> f64 {
        let n = self.thresholds.len() - 1;
        self.ratios[..n].iter().sum::<f64>() / n as f64
    }

    pub fn resolution(&self) -> f64 {
        1.0 / (self.thresholds.len() - 1) as f64
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("tau,ratio\n");
        for (t, r) in self.thresholds.iter().zip(&self.ratios) {
            s.push_str(&format!("{t},{r}\n"));
        }
        s
    }
}

pub fn acceptance_curve(sims: &[f64], grid_size: usize) -> Result<AcceptanceCurve> {
    if sims.is_empty() {
        return Err(Error::Empty("similarity set"));
    }
    if grid_size == 0 {
        return Err(Error::Config("grid size must be positive".into()));
    }
    if let Some(bad) = sims.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(Error::Config(format!("similarity {bad} outside [0, 1]")));
    }
    let mut sorted = sims.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let thresholds: Vec<f64> = (0..=grid_size).map(|k| k as f64 / grid_size as f64).collect();
    let ratios = thresholds
        .iter()
        .map(|&t| {
            let at_most = sorted.partition_point(|&s| s <= t);
            (sorted.len() - at_most) as f64 / n
        })
        .collect();
    let mean = sims.iter().sum::<f64>() / n;
    Ok(AcceptanceCurve {
        thresholds,
        ratios,
        mean,
    })
}

/// One value per line; blank lines and a non-numeric header are skipped.
pub fn parse_similarity_csv(text: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let field = line.split(',').next().unwrap_or("").trim();
        if field.is_empty() {
            continue;
        }
        match field.parse::<f64>() {
            Ok(v) => out.push(v),
            Err(_) if i == 0 => {}
            Err(_) => return Err(Error::Config(format!("line {}: not a number: {field}", i + 1))),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_perfect_instance() {
        let c = acceptance_curve(&[1.0], 10).unwrap();
        assert!(c.ratios[..10].iter().all(|&r| r == 1.0));
        assert_eq!(c.ratios[10], 0.0);
        assert_eq!(c.auc(), 1.0);
        assert_eq!(c.integrated_auc(), 1.0);
    }

    #[test]
    fn two_instances_mean() {
        let c = acceptance_curve(&[0.5, 1.0], 100).unwrap();
        assert_eq!(c.auc(), 0.75);
        assert!((c.integrated_auc() - 0.75).abs() <= c.resolution());
    }

    #[test]
    fn empty_and_invalid_inputs() {
        assert!(matches!(acceptance_curve(&[], 10), Err(Error::Empty(_))));
        assert!(acceptance_curve(&[1.2], 10).is_err());
        assert!(acceptance_curve(&[0.5], 0).is_err());
    }

    #[test]
    fn csv_parsing() {
        assert_eq!(parse_similarity_csv("sim\n0.5\n\n1.0\n").unwrap(), vec![0.5, 1.0]);
        assert!(parse_similarity_csv("0.5\nx\n").is_err());
    }

    proptest! {
        #[test]
        fn curve_is_nonincreasing_and_matches_mean(
            sims in prop::collection::vec(0.0f64..=1.0, 1..200),
            grid in 1usize..300,
        ) {
            let c = acceptance_curve(&sims, grid).unwrap();
            prop_assert!(c.ratios.windows(2).all(|w| w[0] >= w[1]));
            let zero_count = sims.iter().filter(|&&s| s > 0.0).count() as f64 / sims.len() as f64;
            prop_assert_eq!(c.ratios[0], zero_count);
            prop_assert!((c.integrated_auc() - c.auc()).abs() <= c.resolution() + 1e-12);
        }
    }
}
