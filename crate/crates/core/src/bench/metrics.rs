use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rla::constraint_penalty;

/// Which side of the target budget rate a campaign ended on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Over,
    Under,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Over => "over",
            Direction::Under => "under",
        }
    }
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Campaign totals over an episode.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EpisodeTotals {
    pub completions: f64,
    pub cost: f64,
    pub gmv: f64,
}

impl EpisodeTotals {
    pub fn cost_rate(&self) -> Result<f64> {
        if !(self.gmv > 0.0) {
            return Err(Error::UndefinedMetric("cost rate with zero GMV".into()));
        }
        Ok(self.cost / self.gmv)
    }

    /// Average selling price.
    pub fn asp(&self) -> Result<f64> {
        if !(self.completions > 0.0) {
            return Err(Error::UndefinedMetric("average price with no completions".into()));
        }
        Ok(self.gmv / self.completions)
    }
}

/// `|cost/gmv - CR*|`, flagged over when spend ran above target.
pub fn metric_cre(total_cost: f64, total_gmv: f64, cr_star: f64) -> Result<(f64, Direction)> {
    if !(total_gmv > 0.0) {
        return Err(Error::UndefinedMetric("CRE with zero GMV".into()));
    }
    let cr = total_cost / total_gmv;
    let dir = if cr > cr_star { Direction::Over } else { Direction::Under };
    Ok(((cr - cr_star).abs(), dir))
}

/// `(F - F0) / ((A0/A) C)`.
pub fn metric_froi(f: f64, f0: f64, c: f64, a: f64, a0: f64) -> Result<f64> {
    if !(c > 0.0) {
        return Err(Error::UndefinedMetric("FROI with zero coupon cost".into()));
    }
    if !(a > 0.0) {
        return Err(Error::UndefinedMetric("FROI with zero average price".into()));
    }
    Ok((f - f0) / (a0 / a * c))
}

/// `Σ r / R* - (e^{max(CR/CR* - 1, 0)} - 1)`.
pub fn metric_rlr(r_obs: &[f64], r_star: f64, cr: f64, cr_star: f64) -> Result<f64> {
    if !(r_star > 0.0) {
        return Err(Error::Argument(format!("R* must be positive, got {r_star}")));
    }
    Ok(r_obs.iter().sum::<f64>() / r_star - constraint_penalty(cr, cr_star))
}

/// FROI of `run` against the zero-coupon run of the same episode.
pub fn froi_against(run: &EpisodeTotals, zero: &EpisodeTotals) -> Result<f64> {
    metric_froi(run.completions, zero.completions, run.cost, run.asp()?, zero.asp()?)
}

/// Sample mean and standard deviation (zero for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cre_examples() {
        let (cre, dir) = metric_cre(5.0, 100.0, 0.04).unwrap();
        assert!((cre - 0.01).abs() < 1e-15);
        assert_eq!(dir, Direction::Over);
        assert_eq!(metric_cre(4.0, 100.0, 0.04).unwrap(), (0.0, Direction::Under));
        assert!(matches!(metric_cre(1.0, 0.0, 0.04), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn froi_examples() {
        assert_eq!(metric_froi(50.0, 50.0, 20.0, 9.0, 10.0).unwrap(), 0.0);
        assert!((metric_froi(60.0, 50.0, 20.0, 9.0, 10.0).unwrap() - 0.45).abs() < 1e-12);
        assert_eq!(metric_froi(60.0, 50.0, 20.0, 7.0, 7.0).unwrap(), 0.5);
        assert!(matches!(metric_froi(60.0, 50.0, 0.0, 7.0, 7.0), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn rlr_examples() {
        assert_eq!(metric_rlr(&[4.0, 6.0], 10.0, 0.04, 0.04).unwrap(), 1.0);
        assert_eq!(metric_rlr(&[3.0], 10.0, 0.01, 0.04).unwrap(), 0.3);
        let over = metric_rlr(&[10.0], 10.0, 0.08, 0.04).unwrap();
        assert!((over - (2.0 - std::f64::consts::E)).abs() < 1e-15);
    }

    #[test]
    fn mean_std_matches_hand_values() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }
}
