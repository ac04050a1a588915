//! In-range rate tracking: feature clusters, per-(cluster, coupon) Beta
//! posteriors over a sliding window, and per-sample refinement.

use std::collections::VecDeque;
use std::io::Write;

use rand::Rng;
use rand_distr::{Beta, Distribution};

use crate::error::{Error, Result};
use crate::estimators::{BetaParamModel, Standardizer};
use crate::sim::SlotTallies;

/// Default number of clusters.
pub const DEFAULT_CLUSTERS: usize = 16;
/// Default window length in slots.
pub const DEFAULT_WINDOW: usize = 24;

const KMEANS_MAX_ITER: usize = 100;
const KMEANS_TOL: f64 = 1e-6;

/// Nearest-centroid assignment over standardized features.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub standardizer: Standardizer,
    pub centroids: Vec<Vec<f64>>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(centroids: &[Vec<f64>], p: &[f64]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(centroid, p);
        if d < best.1 {
            best = (c, d);
        }
    }
    best.0
}

impl ClusterModel {
    pub fn num_clusters(&self) -> usize {
        self.centroids.len()
    }

    pub fn assign(&self, x: &[f64]) -> Result<usize> {
        Ok(nearest(&self.centroids, &self.standardizer.apply(x)?))
    }

    pub fn assign_all<'a>(&self, xs: impl IntoIterator<Item = &'a [f64]>) -> Result<Vec<usize>> {
        xs.into_iter().map(|x| self.assign(x)).collect()
    }
}

/// Lloyd iterations from k-means++ seeding, on the points as given.
pub fn kmeans_fit<R: Rng + ?Sized>(points: &[Vec<f64>], s: usize, rng: &mut R) -> Result<ClusterModel> {
    let dim = points.first().map_or(0, Vec::len);
    let centroids = lloyd(points, s, rng)?;
    Ok(ClusterModel { standardizer: Standardizer::identity(dim), centroids })
}

/// Standardizes the points first and clusters in the standardized space.
pub fn kmeans_fit_standardized<R: Rng + ?Sized>(points: &[Vec<f64>], s: usize, rng: &mut R) -> Result<ClusterModel> {
    let standardizer = Standardizer::fit(points);
    let scaled: Vec<Vec<f64>> = points.iter().map(|p| standardizer.apply(p)).collect::<Result<_>>()?;
    let centroids = lloyd(&scaled, s, rng)?;
    Ok(ClusterModel { standardizer, centroids })
}

fn lloyd<R: Rng + ?Sized>(points: &[Vec<f64>], s: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
    if s == 0 {
        return Err(Error::Config("need at least one cluster".into()));
    }
    let mut distinct: Vec<&Vec<f64>> = points.iter().collect();
    distinct.sort_by(|a, b| {
        a.iter().zip(b.iter()).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
    });
    distinct.dedup();
    if distinct.len() < s {
        return Err(Error::Config(format!("{} distinct points for {s} clusters", distinct.len())));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::Argument("ragged points".into()));
    }

    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < s {
        let total: f64 = d2.iter().sum();
        let mut u = rng.random::<f64>() * total;
        let mut pick = None;
        for (i, &w) in d2.iter().enumerate() {
            if w > 0.0 {
                if u < w {
                    pick = Some(i);
                    break;
                }
                u -= w;
            }
        }
        // rounding can walk off the end; take the last point not yet chosen
        let pick = pick.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).expect("distinct points remain"));
        centroids.push(points[pick].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &centroids[centroids.len() - 1]));
        }
    }

    for _ in 0..KMEANS_MAX_ITER {
        let mut sums = vec![vec![0.0; dim]; s];
        let mut counts = vec![0usize; s];
        for p in points {
            let c = nearest(&centroids, p);
            counts[c] += 1;
            for (a, v) in sums[c].iter_mut().zip(p) {
                *a += v;
            }
        }
        let mut shift: f64 = 0.0;
        for c in 0..s {
            if counts[c] == 0 {
                continue;
            }
            let next: Vec<f64> = sums[c].iter().map(|v| v / counts[c] as f64).collect();
            shift = shift.max(sq_dist(&next, &centroids[c]).sqrt());
            centroids[c] = next;
        }
        if shift < KMEANS_TOL {
            break;
        }
    }
    Ok(centroids)
}

/// Per-(cluster, coupon) Beta parameters tracked over a sliding window of
/// observed slots on top of a fixed prior.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaTracker {
    prior_alpha: Vec<Vec<f64>>,
    prior_beta: Vec<Vec<f64>>,
    alpha: Vec<Vec<f64>>,
    beta: Vec<Vec<f64>>,
    window: usize,
    /// Tallies of the last `window` slots in which each cell had data.
    history: Vec<Vec<VecDeque<(u64, u64)>>>,
}

impl BetaTracker {
    pub fn new(prior_alpha: Vec<Vec<f64>>, prior_beta: Vec<Vec<f64>>, window: usize) -> Result<Self> {
        if window == 0 {
            return Err(Error::Config("window length must be positive".into()));
        }
        let s = prior_alpha.len();
        let h = prior_alpha.first().map_or(0, Vec::len);
        if s == 0 || h == 0 || prior_beta.len() != s {
            return Err(Error::Argument("empty or mismatched prior tables".into()));
        }
        for (ra, rb) in prior_alpha.iter().zip(&prior_beta) {
            if ra.len() != h || rb.len() != h {
                return Err(Error::Argument("ragged prior tables".into()));
            }
            if ra.iter().chain(rb).any(|&v| !(v > 0.0) || !v.is_finite()) {
                return Err(Error::Argument("Beta parameters must be positive".into()));
            }
        }
        Ok(Self {
            alpha: prior_alpha.clone(),
            beta: prior_beta.clone(),
            prior_alpha,
            prior_beta,
            window,
            history: vec![vec![VecDeque::new(); h]; s],
        })
    }

    /// Same `(alpha, beta)` in every cell.
    pub fn uniform(clusters: usize, coupons: usize, alpha: f64, beta: f64, window: usize) -> Result<Self> {
        Self::new(vec![vec![alpha; coupons]; clusters], vec![vec![beta; coupons]; clusters], window)
    }

    /// Fresh copy at the prior tables with window `l`.
    pub fn with_window(&self, window: usize) -> Result<Self> {
        Self::new(self.prior_alpha.clone(), self.prior_beta.clone(), window)
    }

    pub fn num_clusters(&self) -> usize {
        self.alpha.len()
    }

    pub fn num_coupons(&self) -> usize {
        self.alpha[0].len()
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn get(&self, c: usize, d: usize) -> (f64, f64) {
        (self.alpha[c][d], self.beta[c][d])
    }

    pub fn mean(&self, c: usize, d: usize) -> f64 {
        self.alpha[c][d] / (self.alpha[c][d] + self.beta[c][d])
    }

    /// Folds one slot's tallies in. Each observed cell becomes its prior plus
    /// the sums over its last `window` observed slots; cells without data keep
    /// their values.
    pub fn posterior_update(&mut self, tallies: &SlotTallies) -> Result<()> {
        let (s, h) = (self.num_clusters(), self.num_coupons());
        if tallies.n.len() != s
            || tallies.n_in.len() != s
            || tallies.n.iter().chain(&tallies.n_in).any(|r| r.len() != h)
        {
            return Err(Error::Argument("tally shape does not match the tracker".into()));
        }
        for c in 0..s {
            for d in 0..h {
                if tallies.n_in[c][d] > tallies.n[c][d] {
                    return Err(Error::Argument(format!(
                        "cell ({c}, {d}): {} in range out of {}",
                        tallies.n_in[c][d], tallies.n[c][d]
                    )));
                }
            }
        }
        for c in 0..s {
            for d in 0..h {
                let n = tallies.n[c][d];
                if n == 0 {
                    continue;
                }
                let hist = &mut self.history[c][d];
                hist.push_back((tallies.n_in[c][d], n));
                while hist.len() > self.window {
                    hist.pop_front();
                }
                let (sum_in, sum_n) = hist.iter().fold((0u64, 0u64), |a, &(i, n)| (a.0 + i, a.1 + n));
                self.alpha[c][d] = self.prior_alpha[c][d] + sum_in as f64;
                self.beta[c][d] = self.prior_beta[c][d] + (sum_n - sum_in) as f64;
            }
        }
        Ok(())
    }

    /// Sample-level parameters: the model's own `(alpha, beta)` plus the
    /// tracked cell.
    pub fn refine_w(&self, c: usize, d: usize, ori: (f64, f64)) -> Result<(f64, f64)> {
        if c >= self.num_clusters() || d >= self.num_coupons() {
            return Err(Error::Argument(format!("cell ({c}, {d}) outside the tracker")));
        }
        Ok((ori.0 + self.alpha[c][d], ori.1 + self.beta[c][d]))
    }

    /// Per coupon, the average `(alpha, beta)` across clusters.
    pub fn summarize_for_state(&self) -> Vec<(f64, f64)> {
        let s = self.num_clusters() as f64;
        (0..self.num_coupons())
            .map(|d| {
                let a: f64 = self.alpha.iter().map(|r| r[d]).sum();
                let b: f64 = self.beta.iter().map(|r| r[d]).sum();
                (a / s, b / s)
            })
            .collect()
    }

    pub fn snapshot(&self, slot: usize) -> Vec<SnapshotRow> {
        let mut rows = Vec::with_capacity(self.num_clusters() * self.num_coupons());
        for c in 0..self.num_clusters() {
            for d in 0..self.num_coupons() {
                rows.push(SnapshotRow { slot, cluster: c, coupon: d, alpha: self.alpha[c][d], beta: self.beta[c][d] });
            }
        }
        rows
    }
}

/// Beta draw; the caller owns the stream position.
pub fn sample_w<R: Rng + ?Sized>(alpha: f64, beta: f64, rng: &mut R) -> Result<f64> {
    let law = Beta::new(alpha, beta).map_err(|e| Error::Argument(format!("Beta({alpha}, {beta}): {e}")))?;
    Ok(law.sample(rng))
}

/// Prior tables from averaging the model's `(alpha, beta)` over the samples
/// of each cluster at every coupon level. Empty clusters take the global
/// average.
pub fn init_priors(
    clusters: &ClusterModel,
    model: &BetaParamModel,
    features: &[Vec<f64>],
    coupons: &[f64],
    window: usize,
) -> Result<BetaTracker> {
    let s = clusters.num_clusters();
    let h = coupons.len();
    if features.is_empty() {
        return Err(Error::Argument("no samples to initialize priors".into()));
    }
    let mut sa = vec![vec![0.0; h]; s];
    let mut sb = vec![vec![0.0; h]; s];
    let mut counts = vec![0usize; s];
    let mut ga = vec![0.0; h];
    let mut gb = vec![0.0; h];
    for x in features {
        let c = clusters.assign(x)?;
        counts[c] += 1;
        for (d, &coupon) in coupons.iter().enumerate() {
            let (a, b) = model.predict(x, coupon)?;
            sa[c][d] += a;
            sb[c][d] += b;
            ga[d] += a;
            gb[d] += b;
        }
    }
    let n = features.len() as f64;
    for c in 0..s {
        if counts[c] == 0 {
            log::info!("cluster {c} has no samples; using the global average prior");
            sa[c] = ga.iter().map(|v| v / n).collect();
            sb[c] = gb.iter().map(|v| v / n).collect();
        } else {
            let k = counts[c] as f64;
            sa[c].iter_mut().for_each(|v| *v /= k);
            sb[c].iter_mut().for_each(|v| *v /= k);
        }
    }
    BetaTracker::new(sa, sb, window)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnapshotRow {
    pub slot: usize,
    pub cluster: usize,
    pub coupon: usize,
    pub alpha: f64,
    pub beta: f64,
}

pub fn write_snapshot_csv<W: Write>(rows: &[SnapshotRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["slot", "cluster", "coupon", "alpha", "beta"])?;
    for r in rows {
        wr.write_record([
            r.slot.to_string(),
            r.cluster.to_string(),
            r.coupon.to_string(),
            format!("{:.6}", r.alpha),
            format!("{:.6}", r.beta),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};
    use rand_distr::{Binomial, Normal};

    fn one_cell(n_in: u64, n: u64) -> SlotTallies {
        SlotTallies { n_in: vec![vec![n_in]], n: vec![vec![n]] }
    }

    #[test]
    fn single_cluster_centroid_is_the_mean() {
        let pts = vec![vec![0.0, 1.0], vec![2.0, 3.0], vec![4.0, 8.0]];
        let m = kmeans_fit(&pts, 1, &mut stream(1, Purpose::Clustering, &[])).unwrap();
        assert!((m.centroids[0][0] - 2.0).abs() < 1e-12 && (m.centroids[0][1] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn separated_blobs_are_pure() {
        let mut rng = stream(2, Purpose::Synthetic, &[]);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let mut pts = Vec::new();
        for k in 0..2 {
            for _ in 0..200 {
                pts.push(vec![10.0 * k as f64 + noise.sample(&mut rng), noise.sample(&mut rng)]);
            }
        }
        let m = kmeans_fit(&pts, 2, &mut stream(3, Purpose::Clustering, &[])).unwrap();
        let labels = m.assign_all(pts.iter().map(Vec::as_slice)).unwrap();
        assert!(labels[..200].iter().all(|&l| l == labels[0]));
        assert!(labels[200..].iter().all(|&l| l == labels[200]));
        assert_ne!(labels[0], labels[200]);
    }

    #[test]
    fn refit_with_same_seed_is_identical() {
        let mut rng = stream(4, Purpose::Synthetic, &[]);
        let pts: Vec<Vec<f64>> = (0..300).map(|_| vec![rng.random(), rng.random(), rng.random()]).collect();
        let a = kmeans_fit_standardized(&pts, 5, &mut stream(5, Purpose::Clustering, &[])).unwrap();
        let b = kmeans_fit_standardized(&pts, 5, &mut stream(5, Purpose::Clustering, &[])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn too_few_distinct_points() {
        let pts = vec![vec![1.0], vec![1.0], vec![2.0]];
        assert!(matches!(kmeans_fit(&pts, 3, &mut stream(6, Purpose::Clustering, &[])), Err(Error::Config(_))));
    }

    #[test]
    fn conjugate_step() {
        let mut t = BetaTracker::uniform(1, 1, 2.0, 3.0, 1).unwrap();
        t.posterior_update(&one_cell(5, 10)).unwrap();
        assert_eq!(t.get(0, 0), (7.0, 8.0));
    }

    #[test]
    fn empty_slot_leaves_tracker_unchanged() {
        let mut t = BetaTracker::uniform(2, 3, 2.0, 3.0, 4).unwrap();
        t.posterior_update(&SlotTallies { n_in: vec![vec![1, 0, 0], vec![0; 3]], n: vec![vec![3, 0, 0], vec![0; 3]] })
            .unwrap();
        let before = t.clone();
        t.posterior_update(&SlotTallies::zeros(2, 3)).unwrap();
        assert_eq!(t, before);
    }

    #[test]
    fn bad_tallies_are_rejected() {
        let mut t = BetaTracker::uniform(1, 1, 1.0, 1.0, 1).unwrap();
        assert!(matches!(t.posterior_update(&one_cell(3, 2)), Err(Error::Argument(_))));
        assert!(matches!(t.posterior_update(&SlotTallies::zeros(2, 1)), Err(Error::Argument(_))));
    }

    #[test]
    fn window_drops_old_observations() {
        let mut t = BetaTracker::uniform(1, 1, 1.0, 1.0, 2).unwrap();
        t.posterior_update(&one_cell(10, 10)).unwrap();
        t.posterior_update(&one_cell(0, 10)).unwrap();
        assert_eq!(t.get(0, 0), (11.0, 11.0));
        t.posterior_update(&one_cell(0, 10)).unwrap();
        assert_eq!(t.get(0, 0), (1.0, 21.0));
    }

    #[test]
    fn bernoulli_stream_converges() {
        let mut rng = stream(7, Purpose::Synthetic, &[]);
        let mut t = BetaTracker::uniform(1, 1, 2.0, 3.0, DEFAULT_WINDOW).unwrap();
        let law = Binomial::new(40, 0.7).unwrap();
        for _ in 0..50 {
            let k = law.sample(&mut rng);
            t.posterior_update(&one_cell(k, 40)).unwrap();
        }
        assert!((t.mean(0, 0) - 0.7).abs() < 0.05);
    }

    #[test]
    fn refinement_examples() {
        let t = BetaTracker::uniform(1, 1, 1.0, 1.0, 1).unwrap();
        assert_eq!(t.refine_w(0, 0, (1.0, 1.0)).unwrap(), (2.0, 2.0));
        assert!(matches!(t.refine_w(1, 0, (1.0, 1.0)), Err(Error::Argument(_))));
        let t = BetaTracker::uniform(1, 1, 700.0, 300.0, 1).unwrap();
        let (a, b) = t.refine_w(0, 0, (1.0, 1.0)).unwrap();
        assert!((a / (a + b) - 0.7).abs() < 0.01);
    }

    #[test]
    fn refined_mean_is_a_convex_combination() {
        let mut rng = stream(8, Purpose::Synthetic, &[]);
        for _ in 0..1000 {
            let (ta, tb): (f64, f64) = (rng.random_range(0.1..50.0), rng.random_range(0.1..50.0));
            let (oa, ob): (f64, f64) = (rng.random_range(0.1..50.0), rng.random_range(0.1..50.0));
            let t = BetaTracker::uniform(1, 1, ta, tb, 1).unwrap();
            let (a, b) = t.refine_w(0, 0, (oa, ob)).unwrap();
            let m = a / (a + b);
            let (m1, m2) = (oa / (oa + ob), ta / (ta + tb));
            assert!(m >= m1.min(m2) - 1e-12 && m <= m1.max(m2) + 1e-12);
            let bigger = BetaTracker::uniform(1, 1, ta + 1.0, tb, 1).unwrap().refine_w(0, 0, (oa, ob)).unwrap();
            assert!(bigger.0 / (bigger.0 + bigger.1) > m);
        }
    }

    #[test]
    fn symmetric_samples_center_on_one_half() {
        let mut rng = stream(9, Purpose::Thompson, &[]);
        let n = 100_000;
        let mean: f64 = (0..n).map(|_| sample_w(3.0, 3.0, &mut rng).unwrap()).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.01);
    }

    #[test]
    fn uniform_beta_passes_ks() {
        let mut rng = stream(10, Purpose::Thompson, &[]);
        let xs: Vec<f64> = (0..5000).map(|_| sample_w(1.0, 1.0, &mut rng).unwrap()).collect();
        let d = crate::stats::ks_statistic(&xs, |x| x.clamp(0.0, 1.0));
        assert!(crate::stats::ks_p_value(d, xs.len()) > 0.01);
    }

    #[test]
    fn order_statistic_parameters_give_one_third() {
        let mut rng = stream(11, Purpose::Thompson, &[]);
        let n = 100_000;
        let mean: f64 = (0..n).map(|_| sample_w(2.0, 4.0, &mut rng).unwrap()).sum::<f64>() / n as f64;
        assert!((mean - 1.0 / 3.0).abs() < 0.01);
    }

    #[test]
    fn summary_examples() {
        let t = BetaTracker::uniform(1, 2, 2.0, 5.0, 1).unwrap();
        assert_eq!(t.summarize_for_state(), vec![(2.0, 5.0); 2]);
        let mut t = BetaTracker::uniform(4, 1, 2.0, 5.0, 3).unwrap();
        assert_eq!(t.summarize_for_state(), vec![(2.0, 5.0)]);
        let mut tallies = SlotTallies::zeros(4, 1);
        tallies.n_in[2][0] = 8;
        tallies.n[2][0] = 12;
        t.posterior_update(&tallies).unwrap();
        assert_eq!(t.summarize_for_state(), vec![(2.0 + 8.0 / 4.0, 5.0 + 4.0 / 4.0)]);
    }

    #[test]
    fn snapshot_csv_lists_every_cell() {
        let t = BetaTracker::uniform(2, 3, 1.0, 2.0, 1).unwrap();
        let mut buf = Vec::new();
        write_snapshot_csv(&t.snapshot(7), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 7);
        assert!(text.starts_with("slot,cluster,coupon,alpha,beta\n7,0,0,1.000000,2.000000\n"));
    }
}
