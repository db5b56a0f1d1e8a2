//! Zipf-skewed query workloads and the analytic cost model for choosing
//! the hot-index ratio.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::vectors::{brute_force_knn, ResultList, VectorDataset};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZipfParams {
    /// Skew exponent; 0 is uniform.
    pub beta: f64,
    /// Number of ranks.
    pub universe: usize,
    pub seed: u64,
}

impl Default for ZipfParams {
    fn default() -> Self {
        Self { beta: 1.2, universe: 1, seed: 0x21bf }
    }
}

/// Inverse-CDF sampler over ranks `1..=universe` with `P(r) ∝ r^-beta`.
#[derive(Debug, Clone)]
pub struct ZipfSampler {
    cdf: Vec<f64>,
    seed: u64,
}

impl ZipfSampler {
    pub fn new(params: &ZipfParams) -> Result<Self> {
        ensure!(
            params.beta.is_finite() && params.beta >= 0.0,
            "beta must be finite and nonnegative"
        );
        ensure!(params.universe >= 1, "universe must be positive");
        let mut cdf = Vec::with_capacity(params.universe);
        let mut acc = 0.0;
        for r in 1..=params.universe {
            acc += (r as f64).powf(-params.beta);
            cdf.push(acc);
        }
        let total = acc;
        cdf.iter_mut().for_each(|c| *c /= total);
        *cdf.last_mut().unwrap() = 1.0;
        Ok(Self { cdf, seed: params.seed })
    }

    pub fn universe(&self) -> usize {
        self.cdf.len()
    }

    /// Probability of rank `r` (1-based).
    pub fn probability(&self, r: usize) -> f64 {
        let hi = self.cdf[r - 1];
        if r == 1 {
            hi
        } else {
            hi - self.cdf[r - 2]
        }
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        let u: f64 = rng.random();
        let i = self.cdf.partition_point(|&c| c <= u);
        (i.min(self.cdf.len() - 1) + 1) as u32
    }

    /// `count` i.i.d. ranks from the sampler's own seed.
    pub fn sample(&self, count: usize) -> Vec<u32> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..count).map(|_| self.draw(&mut rng)).collect()
    }
}

/// `count` i.i.d. Zipf ranks in `[1, universe]`.
pub fn zipf_sample(params: &ZipfParams, count: usize) -> Result<Vec<u32>> {
    Ok(ZipfSampler::new(params)?.sample(count))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    /// Historical queries used to heat counters and train the tree.
    pub history_count: usize,
    pub eval_count: usize,
    /// Fraction of the corpus that is indexed; the rest supplies queries.
    pub split: f64,
    /// Ground-truth depth per evaluation query.
    pub truth_k: usize,
    /// Draw evaluation queries uniformly instead of by the Zipf law.
    pub uniform_eval: bool,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        Self { history_count: 10_000, eval_count: 1_000, split: 0.9, truth_k: 100, uniform_eval: false }
    }
}

/// Indexed base corpus, held-out query pool, and the query streams drawn from it.
#[derive(Debug, Clone, PartialEq)]
pub struct Workload {
    pub base: VectorDataset,
    pub test: VectorDataset,
    /// Original dataset row of each base row.
    pub base_rows: Vec<u32>,
    /// Original dataset row of each test row.
    pub test_rows: Vec<u32>,
    /// `rank_to_test[r - 1]` is the test row holding popularity rank `r`.
    pub rank_to_test: Vec<u32>,
    /// Test rows of the historical queries, in arrival order.
    pub history: Vec<u32>,
    /// Test rows of the evaluation queries.
    pub eval: Vec<u32>,
    /// Exact `truth_k` nearest base rows per evaluation query.
    pub ground_truth: Vec<ResultList>,
}

impl Workload {
    pub fn history_queries(&self) -> Vec<&[f32]> {
        self.history.iter().map(|&t| self.test.row(t as usize)).collect()
    }

    pub fn eval_queries(&self) -> Vec<&[f32]> {
        self.eval.iter().map(|&t| self.test.row(t as usize)).collect()
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Splits `dataset` into base and test pools, assigns Zipf popularity to a
/// random permutation of the test pool, and draws history and evaluation
/// streams. `zipf.universe` is replaced by the test-pool size.
pub fn build_workload(
    dataset: &VectorDataset,
    spec: &WorkloadSpec,
    zipf: &ZipfParams,
) -> Result<Workload> {
    ensure!(spec.split > 0.0 && spec.split < 1.0, "split {} outside (0, 1)", spec.split);
    let n = dataset.len();
    let n_base = (spec.split * n as f64).round() as usize;
    ensure!(
        n_base >= 1 && n_base < n,
        "a split of {} leaves an empty pool for {n} points",
        spec.split
    );
    ensure!(
        spec.truth_k >= 1 && spec.truth_k <= n_base,
        "truth_k = {} outside 1..={n_base}",
        spec.truth_k
    );

    let mut rows: Vec<u32> = (0..n as u32).collect();
    rows.shuffle(&mut stream_rng(zipf.seed, 1));
    let (base_rows, test_rows) = rows.split_at(n_base);
    let base = dataset.subset(base_rows)?;
    let test = dataset.subset(test_rows)?;
    let n_test = test_rows.len();

    let mut rank_to_test: Vec<u32> = (0..n_test as u32).collect();
    rank_to_test.shuffle(&mut stream_rng(zipf.seed, 2));

    let sampler = ZipfSampler::new(&ZipfParams { universe: n_test, ..zipf.clone() })?;
    let mut rng = stream_rng(zipf.seed, 3);
    let history: Vec<u32> = (0..spec.history_count)
        .map(|_| rank_to_test[sampler.draw(&mut rng) as usize - 1])
        .collect();
    let mut rng = stream_rng(zipf.seed, 4);
    let eval: Vec<u32> = (0..spec.eval_count)
        .map(|_| {
            if spec.uniform_eval {
                rng.random_range(0..n_test as u32)
            } else {
                rank_to_test[sampler.draw(&mut rng) as usize - 1]
            }
        })
        .collect();

    // One exact scan per distinct evaluation query.
    let mut cache: Vec<Option<ResultList>> = vec![None; n_test];
    let mut ground_truth = Vec::with_capacity(eval.len());
    for &t in &eval {
        let slot = &mut cache[t as usize];
        if slot.is_none() {
            *slot = Some(brute_force_knn(&base, test.row(t as usize), spec.truth_k)?);
        }
        ground_truth.push(slot.clone().unwrap());
    }

    Ok(Workload {
        base,
        test,
        base_rows: base_rows.to_vec(),
        test_rows: test_rows.to_vec(),
        rank_to_test,
        history,
        eval,
        ground_truth,
    })
}

fn check_model_args(ir: f64, n: f64, beta: f64) -> Result<()> {
    ensure!(beta.is_finite() && beta != 1.0, "beta must be finite and differ from 1");
    ensure!(n >= 2.0, "n must be at least 2");
    ensure!(ir > 0.0 && ir <= 1.0, "index ratio {ir} outside (0, 1]");
    ensure!(ir * n >= 1.0 - 1e-9, "index ratio {ir} selects fewer than one of {n} points");
    Ok(())
}

/// Probability that a query falls outside the hot index, using the integral
/// approximation `1 - (1 - (ir*n)^(1-β)) / (1 - n^(1-β))`.
pub fn p_miss(ir: f64, n: u64, beta: f64) -> Result<f64> {
    let n = n as f64;
    check_model_args(ir, n, beta)?;
    let e = 1.0 - beta;
    Ok(1.0 - (1.0 - (ir * n).powf(e)) / (1.0 - n.powf(e)))
}

/// Expected search cost `ln(ir*n) + p_miss * ln(n)`.
pub fn complexity(ir: f64, n: u64, beta: f64) -> Result<f64> {
    let p = p_miss(ir, n, beta)?;
    let nf = n as f64;
    Ok((ir * nf).ln() + p * nf.ln())
}

/// Analytic derivative of [`complexity`] with respect to the index ratio.
pub fn complexity_derivative(ir: f64, n: u64, beta: f64) -> Result<f64> {
    let nf = n as f64;
    check_model_args(ir, nf, beta)?;
    let e = 1.0 - beta;
    Ok(1.0 / ir + nf.ln() * e * nf * (ir * nf).powf(-beta) / (1.0 - nf.powf(e)))
}

/// Closed-form stationary point of [`complexity`]:
/// `((n^(1-β) - 1) / ((1-β) ln n · n^(1-β)))^(1/(1-β))`.
pub fn optimal_index_ratio(n: u64, beta: f64) -> Result<f64> {
    ensure!(beta.is_finite() && beta > 1.0, "optimal ratio needs beta > 1, got {beta}");
    ensure!(n >= 2, "n must be at least 2");
    let nf = n as f64;
    let e = 1.0 - beta;
    let inner = (nf.powf(e) - 1.0) / (e * nf.ln() * nf.powf(e));
    let ir = inner.powf(1.0 / e);
    ensure!(
        ir.is_finite() && ir > 0.0,
        "no stationary point for n = {n}, beta = {beta}"
    );
    Ok(ir)
}

/// `points` log-spaced index ratios from `1/n` to 1.
pub fn log_grid(n: u64, points: usize) -> Vec<f64> {
    let lo = (1.0 / n as f64).ln();
    let steps = points.max(2) - 1;
    (0..=steps)
        .map(|i| (lo + (0.0 - lo) * i as f64 / steps as f64).exp())
        .collect()
}

/// Index ratio with the lowest [`complexity`] on a `points`-point log grid.
pub fn grid_argmin(n: u64, beta: f64, points: usize) -> Result<f64> {
    let mut best = (f64::INFINITY, 1.0);
    for ir in log_grid(n, points) {
        let c = complexity(ir.max(1.0 / n as f64), n, beta)?;
        if c < best.0 {
            best = (c, ir);
        }
    }
    Ok(best.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::gaussian;

    #[test]
    fn universe_one_is_constant() {
        let r = zipf_sample(&ZipfParams { beta: 1.2, universe: 1, seed: 3 }, 1000).unwrap();
        assert!(r.iter().all(|&x| x == 1));
    }

    #[test]
    fn beta_zero_is_uniform_chi_square() {
        let draws = zipf_sample(&ZipfParams { beta: 0.0, universe: 100, seed: 5 }, 100_000).unwrap();
        let mut counts = [0f64; 100];
        draws.iter().for_each(|&r| counts[r as usize - 1] += 1.0);
        let expected = 1_000.0;
        let chi2: f64 = counts.iter().map(|c| (c - expected).powi(2) / expected).sum();
        // Upper 1% point of chi-square with 99 degrees of freedom.
        assert!(chi2 < 134.642, "chi2 = {chi2}");
    }

    #[test]
    fn log_log_slope_matches_beta() {
        let draws = zipf_sample(&ZipfParams { beta: 1.2, universe: 10_000, seed: 6 }, 1_000_000).unwrap();
        let mut counts = vec![0f64; 10_000];
        draws.iter().for_each(|&r| counts[r as usize - 1] += 1.0);
        let pts: Vec<(f64, f64)> = (0..100).map(|i| (((i + 1) as f64).ln(), counts[i].ln())).collect();
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / 100.0;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / 100.0;
        let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
            / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
        assert!((slope + 1.2).abs() <= 0.1, "slope {slope}");

    }

    #[test]
    fn frequencies_fall_with_rank() {
        let sampler = ZipfSampler::new(&ZipfParams { beta: 1.2, universe: 10_000, seed: 6 }).unwrap();
        assert!((1..10_000).all(|r| sampler.probability(r + 1) <= sampler.probability(r)));

        // Adjacent ranks near 50 differ by well under one standard deviation
        // at this sample size, so a few inversions are expected by chance.
        let draws = sampler.sample(1_000_000);
        let mut counts = vec![0f64; 10_000];
        draws.iter().for_each(|&r| counts[r as usize - 1] += 1.0);
        let n = 1_000_000.0;
        let normal_tail = |z: f64| 0.5 * erfc(z / std::f64::consts::SQRT_2);
        let expected: f64 = (1..50)
            .map(|r| {
                let (a, b) = (n * sampler.probability(r), n * sampler.probability(r + 1));
                normal_tail((a - b) / (a + b).sqrt())
            })
            .sum();
        let violations = (0..49).filter(|&i| counts[i + 1] > counts[i]).count() as f64;
        assert!(violations <= expected + 3.0 * expected.sqrt(), "{violations} vs {expected}");
    }

    // Abramowitz-Stegun 7.1.26, absolute error below 1.5e-7.
    fn erfc(x: f64) -> f64 {
        let t = 1.0 / (1.0 + 0.3275911 * x.abs());
        let poly = t * (0.254829592 + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
        let v = poly * (-x * x).exp();
        if x >= 0.0 { v } else { 2.0 - v }
    }

    #[test]
    fn sampler_is_deterministic() {
        let p = ZipfParams { beta: 0.8, universe: 50, seed: 1 };
        assert_eq!(zipf_sample(&p, 500).unwrap(), zipf_sample(&p, 500).unwrap());
        assert!(ZipfSampler::new(&ZipfParams { universe: 0, ..p.clone() }).is_err());
        assert!(ZipfSampler::new(&ZipfParams { beta: -1.0, ..p }).is_err());
    }

    #[test]
    fn workload_shape_and_mode() {
        let ds = gaussian(10_000, 4, 7);
        let spec = WorkloadSpec { history_count: 5_000, eval_count: 300, truth_k: 10, ..WorkloadSpec::default() };
        let w = build_workload(&ds, &spec, &ZipfParams { beta: 1.2, universe: 0, seed: 8 }).unwrap();
        assert_eq!((w.base.len(), w.test.len()), (9_000, 1_000));
        assert_eq!(w.history.len(), 5_000);
        assert_eq!(w.eval.len(), 300);

        let mut counts = vec![0usize; 1_000];
        w.history.iter().for_each(|&t| counts[t as usize] += 1);
        let top = (0..1_000).max_by_key(|&i| (counts[i], std::cmp::Reverse(i))).unwrap();
        assert_eq!(top as u32, w.rank_to_test[0]);

        // Independent scan over the original rows.
        for i in [0usize, 17, 42, 99, 150, 151, 200, 250, 298, 299] {
            let q = w.test.row(w.eval[i] as usize);
            let mut all: Vec<(f64, u32)> = w
                .base_rows
                .iter()
                .enumerate()
                .map(|(b, &orig)| {
                    let d: f64 = ds.row(orig as usize).iter().zip(q).map(|(x, y)| (*x as f64 - *y as f64).powi(2)).sum();
                    (d, b as u32)
                })
                .collect();
            all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let oracle: Vec<u32> = all[..10].iter().map(|p| p.1).collect();
            let got: Vec<u32> = w.ground_truth[i].iter().map(|n| n.id).collect();
            assert_eq!(got, oracle);
        }

        let again = build_workload(&ds, &spec, &ZipfParams { beta: 1.2, universe: 0, seed: 8 }).unwrap();
        assert_eq!(again, w);
    }

    #[test]
    fn workload_rejects_bad_split() {
        let ds = gaussian(10, 2, 1);
        let z = ZipfParams::default();
        assert!(build_workload(&ds, &WorkloadSpec { split: 1.0, ..WorkloadSpec::default() }, &z).is_err());
        assert!(build_workload(&ds, &WorkloadSpec { split: 0.01, ..WorkloadSpec::default() }, &z).is_err());
    }

    #[test]
    fn p_miss_boundaries() {
        assert!(p_miss(1.0, 1_000_000, 1.2).unwrap().abs() < 1e-12);
        assert!((p_miss(1e-6, 1_000_000, 1.2).unwrap() - 1.0).abs() < 1e-9);
        assert!(p_miss(0.5, 100, 1.0).is_err());
        assert!(p_miss(1e-7, 1_000_000, 1.2).is_err());
    }

    fn harmonic_p(ir: f64, n: u64, beta: f64) -> f64 {
        let m = (ir * n as f64).round() as u64;
        let mut head = 0.0;
        let mut all = 0.0;
        for i in 1..=n {
            let t = (i as f64).powf(-beta);
            all += t;
            if i <= m {
                head += t;
            }
        }
        1.0 - head / all
    }

    #[test]
    fn p_miss_close_to_harmonic_sum_at_0_002() {
        let approx = p_miss(0.002, 1_000_000, 1.2).unwrap();
        let exact = harmonic_p(0.002, 1_000_000, 1.2);
        assert!((approx - exact).abs() < 2e-2, "{approx} vs {exact}");
    }

    #[test]
    fn p_miss_non_increasing() {
        let grid = log_grid(1_000_000, 500);
        let ps: Vec<f64> = grid.iter().map(|&ir| p_miss(ir, 1_000_000, 1.2).unwrap()).collect();
        assert!(ps.windows(2).all(|w| w[1] <= w[0] + 1e-15));
    }

    #[test]
    fn complexity_boundary_and_domain() {
        let n = 1_000_000u64;
        assert!((complexity(1.0, n, 1.2).unwrap() - (n as f64).ln()).abs() < 1e-9);
        for ir in [0.001, 0.005, 0.01, 0.05, 0.1, 0.5] {
            let c = complexity(ir, n, 1.2).unwrap();
            assert!(c.is_finite() && c > 0.0);
        }
    }

    #[test]
    fn complexity_is_unimodal_on_log_grid() {
        let cs: Vec<f64> = log_grid(1_000_000, 2_000)
            .into_iter()
            .map(|ir| complexity(ir, 1_000_000, 1.2).unwrap())
            .collect();
        let signs: Vec<bool> = cs.windows(2).map(|w| w[1] > w[0]).collect();
        let changes = signs.windows(2).filter(|s| s[0] != s[1]).count();
        assert_eq!(changes, 1);
    }

    #[test]
    fn optimal_ratio_is_stationary_minimum() {
        let (n, beta) = (1_000_000u64, 1.2);
        let ir = optimal_index_ratio(n, beta).unwrap();
        // Direct evaluation of the closed form.
        assert!((ir - 2.2310463e-4).abs() < 1e-10, "{ir}");
        let c = complexity(ir, n, beta).unwrap();
        assert!(complexity(ir * 1.5, n, beta).unwrap() > c);
        assert!(complexity(ir / 1.5, n, beta).unwrap() > c);
        assert!(complexity_derivative(ir, n, beta).unwrap().abs() < 1e-6 / ir);
        let h = ir * 1e-4;
        let fd = (complexity(ir + h, n, beta).unwrap() - complexity(ir - h, n, beta).unwrap()) / (2.0 * h);
        assert!(fd.abs() < 1e-6 * c, "finite difference {fd}");

        let grid = log_grid(n, 10_000);
        let step = (grid[1] / grid[0]).ln();
        let g = grid_argmin(n, beta, 10_000).unwrap();
        assert!((g.ln() - ir.ln()).abs() <= step + 1e-12);

        assert!(optimal_index_ratio(n, 1.0).is_err());
        assert!(optimal_index_ratio(n, 0.8).is_err());
        assert!(optimal_index_ratio(1, 1.2).is_err());
    }
}
