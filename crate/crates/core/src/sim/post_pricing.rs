//! Aggregator-side mechanics: ranking with top-K auto-selection, the
//! passenger's selection count, and dispatch among the selected RSPs.

use rand::Rng;

use crate::error::{Error, Result};

/// RSP indices ordered by ascending quote; equal quotes keep index order.
pub fn rank(quotes: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..quotes.len()).collect();
    idx.sort_by(|&a, &b| quotes[a].total_cmp(&quotes[b]).then(a.cmp(&b)));
    idx
}

/// Flags the `k` RSPs with the lowest quotes as in-range.
pub fn rank_and_autoselect(quotes: &[f64], k: usize) -> Result<Vec<bool>> {
    if k == 0 || k > quotes.len() {
        return Err(Error::Argument(format!("K = {k} outside 1..={}", quotes.len())));
    }
    if quotes.iter().any(|&q| !(q > 0.0)) {
        return Err(Error::Argument("quotes must be positive".into()));
    }
    let mut flags = vec![false; quotes.len()];
    for &i in rank(quotes).iter().take(k) {
        flags[i] = true;
    }
    Ok(flags)
}

/// Price-list density: `exp(-CV) - b^-K`, floored at zero. Concentrated
/// lists approach `1 - b^-K`, widely spread lists approach zero.
pub fn quote_density(quotes: &[f64], k: usize, base: f64) -> f64 {
    let (mean, std) = crate::stats::mean_std(quotes);
    let cv = if mean > 0.0 { std / mean } else { 0.0 };
    ((-cv).exp() - base.powi(-(k as i32))).max(0.0)
}

/// `K' = Clip(K + log_b(density + b^-K), 1, M)` rounded to the nearest integer.
pub fn passenger_select_count(density: f64, k: usize, base: f64, m: usize) -> usize {
    let raw = k as f64 + (density + base.powi(-(k as i32))).ln() / base.ln();
    raw.clamp(1.0, m as f64).round() as usize
}

/// Number of RSPs the passenger sends the order to, given the full quote list.
pub fn passenger_select(quotes: &[f64], k: usize, base: f64, m: usize) -> usize {
    passenger_select_count(quote_density(quotes, k, base), k, base, m)
}

/// Answering RSP for uniform draw `u`. Selected RSPs answer with probability
/// `s * tp_i / sum(tp_selected)`, laid out in the order given; the remaining
/// `1 - s` mass is "no answer".
pub fn dispatch_with_draw(selected: &[usize], supply: f64, tp: &[f64], u: f64) -> Option<usize> {
    let total: f64 = selected.iter().map(|&i| tp[i]).sum();
    if total <= 0.0 || supply <= 0.0 {
        return None;
    }
    let mut acc = 0.0;
    for &i in selected {
        acc += supply * tp[i] / total;
        if u < acc {
            return Some(i);
        }
    }
    None
}

pub fn dispatch<R: Rng + ?Sized>(selected: &[usize], supply: f64, tp: &[f64], rng: &mut R) -> Option<usize> {
    dispatch_with_draw(selected, supply, tp, rng.random::<f64>())
}

/// Closed-form answer probability of `rsp` among `selected`.
pub fn answer_probability(rsp: usize, selected: &[usize], supply: f64, tp: &[f64]) -> f64 {
    let total: f64 = selected.iter().map(|&i| tp[i]).sum();
    if total <= 0.0 || !selected.contains(&rsp) {
        return 0.0;
    }
    supply * tp[rsp] / total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};

    #[test]
    fn unique_minimum_is_selected() {
        assert_eq!(rank_and_autoselect(&[10.0, 8.0, 12.0], 1).unwrap(), vec![false, true, false]);
    }

    #[test]
    fn ties_go_to_the_lower_index() {
        assert_eq!(rank_and_autoselect(&[5.0, 5.0, 9.0], 1).unwrap(), vec![true, false, false]);
    }

    #[test]
    fn k_out_of_range_is_an_argument_error() {
        assert!(matches!(rank_and_autoselect(&[1.0, 2.0], 0), Err(Error::Argument(_))));
        assert!(matches!(rank_and_autoselect(&[1.0, 2.0], 3), Err(Error::Argument(_))));
    }

    #[test]
    fn zero_density_selects_one() {
        for k in 1..=4 {
            assert_eq!(passenger_select_count(0.0, k, 1.3, 5), 1);
        }
    }

    #[test]
    fn density_completing_one_keeps_k() {
        let b: f64 = 1.7;
        for k in 1..=5 {
            let density = 1.0 - b.powi(-(k as i32));
            assert_eq!(passenger_select_count(density, k, b, 5), k);
        }
    }

    #[test]
    fn identical_quotes_keep_the_default_count() {
        // Zero spread gives the largest density, 1 - b^-K, hence K' = K.
        for k in 1..=5 {
            assert_eq!(passenger_select(&[7.0; 5], k, 1.3, 5), k);
        }
        assert_eq!(passenger_select(&[7.0; 5], 5, 1.3, 5), 5);
    }

    #[test]
    fn spread_quotes_shrink_selection() {
        let wide = [4.0, 8.0, 12.0, 16.0, 20.0];
        assert!(passenger_select(&wide, 2, 1.3, 5) < 2);
    }

    #[test]
    fn zero_supply_never_answers() {
        let tp = [1.0, 1.0];
        for i in 0..100 {
            assert_eq!(dispatch_with_draw(&[0, 1], 0.0, &tp, i as f64 / 100.0), None);
        }
    }

    #[test]
    fn full_supply_single_rsp_always_answers() {
        let tp = [2.0, 1.0, 1.0];
        for i in 0..100 {
            assert_eq!(dispatch_with_draw(&[1], 1.0, &tp, i as f64 / 100.0), Some(1));
        }
    }

    #[test]
    fn dispatch_shares_match_closed_form() {
        let tp = [1.0, 1.0];
        let mut rng = stream(11, Purpose::Synthetic, &[]);
        let n = 100_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            match dispatch(&[0, 1], 0.5, &tp, &mut rng) {
                Some(i) => counts[i] += 1,
                None => counts[2] += 1,
            }
        }
        for (c, p) in counts.iter().zip([0.25, 0.25, 0.5]) {
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!((*c as f64 / n as f64 - p).abs() < 3.0 * se, "{counts:?}");
        }
    }
}
