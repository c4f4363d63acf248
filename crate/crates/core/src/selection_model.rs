//! Exponentially tilted selection of gene-sets.
//!
//! Gene `i` carries weight `w_i = exp(beta * s_i)` and an m-subset `S` is
//! selected with probability `prod_{i in S} w_i / e_m(w)`, where `e_m` is the
//! elementary symmetric polynomial of degree m. `beta = 0` is uniform random
//! selection; larger `beta` favours sets with larger scores. All
//! normalizers are kept in log space.
//!
//! The tilted-density view of the same family is not implemented separately;
//! [`TiltedModel::expected_subset_mean`] increasing in `beta` is its
//! operational counterpart.

use crate::error::{Error, Result};
use crate::numerics::RandomStream;
use rand::Rng;

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Selection law of m-subsets tilted by `beta` along the scores `s`.
#[derive(Clone, Debug)]
pub struct TiltedModel {
    s: Vec<f64>,
    beta: f64,
    m: usize,
    log_w: Vec<f64>,
    /// `suffix[i * (m + 1) + k] = log e_k(w_i, ..., w_{N-1})`.
    suffix: Vec<f64>,
}

impl TiltedModel {
    pub fn new(s: Vec<f64>, beta: f64, m: usize) -> Result<Self> {
        let n = s.len();
        if m > n {
            return Err(Error::SubsetTooLarge { m, n });
        }
        if !beta.is_finite() {
            return Err(Error::Domain {
                what: "beta",
                value: beta,
            });
        }
        let log_w: Vec<f64> = s.iter().map(|&si| beta * si).collect();
        if log_w.iter().any(|v| !v.is_finite()) {
            return Err(Error::WeightOverflow);
        }
        let width = m + 1;
        let mut suffix = vec![f64::NEG_INFINITY; (n + 1) * width];
        suffix[n * width] = 0.0;
        for i in (0..n).rev() {
            let (head, tail) = suffix.split_at_mut((i + 1) * width);
            let row = &mut head[i * width..];
            let next = &tail[..width];
            row[0] = 0.0;
            for k in 1..width {
                row[k] = log_add(next[k], log_w[i] + next[k - 1]);
            }
        }
        if !suffix[m].is_finite() {
            return Err(Error::WeightOverflow);
        }
        Ok(TiltedModel {
            s,
            beta,
            m,
            log_w,
            suffix,
        })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.s.len()
    }

    pub fn scores(&self) -> &[f64] {
        &self.s
    }

    fn log_e(&self, i: usize, k: usize) -> f64 {
        self.suffix[i * (self.m + 1) + k]
    }

    /// `log e_m(w)`, the log normalizer of the subset law.
    pub fn log_normalizer(&self) -> f64 {
        self.log_e(0, self.m)
    }

    /// Log probability of selecting exactly `subset`.
    pub fn subset_log_prob(&self, subset: &[usize]) -> Result<f64> {
        if subset.len() != self.m {
            return Err(Error::Invalid(format!(
                "subset has {} indices, the model selects {}",
                subset.len(),
                self.m
            )));
        }
        let mut seen = vec![false; self.n()];
        let mut total = 0.0;
        for &i in subset {
            if i >= self.n() {
                return Err(Error::Invalid(format!(
                    "index {i} out of range for {} genes",
                    self.n()
                )));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::Invalid(format!("duplicate index {i} in subset")));
            }
            total += self.log_w[i];
        }
        Ok(total - self.log_normalizer())
    }

    /// Exact draw of an m-subset, ascending indices.
    pub fn sample_subset(&self, stream: RandomStream) -> Vec<usize> {
        self.sample_with(&mut stream.rng())
    }

    /// As [`TiltedModel::sample_subset`] with a caller-held generator.
    pub fn sample_with<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<usize> {
        let n = self.n();
        let mut out = Vec::with_capacity(self.m);
        let mut remaining = self.m;
        for i in 0..n {
            if remaining == 0 {
                break;
            }
            if n - i == remaining {
                out.extend(i..n);
                break;
            }
            let take =
                (self.log_w[i] + self.log_e(i + 1, remaining - 1) - self.log_e(i, remaining)).exp();
            if rng.random::<f64>() < take {
                out.push(i);
                remaining -= 1;
            }
        }
        out
    }

    /// `E[mean of s over S]` under this model.
    pub fn expected_subset_mean(&self) -> f64 {
        expected_subset_mean(&self.s, self.beta, self.m)
    }
}

/// `log e_m` and its derivative in beta, divided by m, computed in one pass.
/// Scores are shifted to be nonnegative so the derivative recursion stays
/// in log space; the shift is added back.
fn expected_subset_mean(s: &[f64], beta: f64, m: usize) -> f64 {
    let shift = s.iter().copied().fold(f64::INFINITY, f64::min);
    let width = m + 1;
    // e[k] = log e_k, h[k] = log of d e_k / d beta (shifted scores)
    let mut e = vec![f64::NEG_INFINITY; width];
    let mut h = vec![f64::NEG_INFINITY; width];
    e[0] = 0.0;
    for &si in s {
        let lw = beta * si;
        let ds = si - shift;
        let lds = if ds > 0.0 { ds.ln() } else { f64::NEG_INFINITY };
        for k in (1..width).rev() {
            let via_value = lw + lds + e[k - 1];
            let via_deriv = lw + h[k - 1];
            h[k] = log_add(h[k], log_add(via_value, via_deriv));
            e[k] = log_add(e[k], lw + e[k - 1]);
        }
    }
    (h[m] - e[m]).exp() / m as f64 + shift
}

/// Poisson-form tilted mean `sum s e^{beta s} / sum e^{beta s}`.
pub fn tilted_mean(s: &[f64], beta: f64) -> f64 {
    let top = s
        .iter()
        .map(|&v| beta * v)
        .fold(f64::NEG_INFINITY, f64::max);
    let (mut num, mut den) = (0.0, 0.0);
    for &v in s {
        let w = (beta * v - top).exp();
        num += v * w;
        den += w;
    }
    num / den
}

fn check_subset(s: &[f64], subset: &[usize]) -> Result<f64> {
    if subset.is_empty() {
        return Err(Error::Invalid("observed subset is empty".into()));
    }
    let mut seen = vec![false; s.len()];
    for &i in subset {
        if i >= s.len() || std::mem::replace(&mut seen[i], true) {
            return Err(Error::Invalid(format!(
                "invalid or duplicate subset index {i}"
            )));
        }
    }
    let lo = s.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        return Err(Error::Degenerate(
            "scores are constant; beta is not identified".into(),
        ));
    }
    Ok(subset.iter().map(|&i| s[i]).sum::<f64>() / subset.len() as f64)
}

const RESIDUAL_TOL: f64 = 1e-10;

/// Root of the increasing function `f` with `f(0)` given, by bracketing
/// and bisection.
fn increasing_root(f: impl Fn(f64) -> f64) -> Result<f64> {
    let f0 = f(0.0);
    if f0.abs() <= RESIDUAL_TOL {
        return Ok(0.0);
    }
    let dir = if f0 < 0.0 { 1.0 } else { -1.0 };
    let (mut near, mut far) = (0.0, dir);
    while f(far) * f0 > 0.0 {
        near = far;
        far *= 2.0;
        if far.abs() > 1e8 {
            return Err(Error::NoRoot("tilt equation has no finite root".into()));
        }
    }
    let (mut lo, mut hi) = if dir > 0.0 { (near, far) } else { (far, near) };
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        let r = f(mid);
        if r.abs() <= RESIDUAL_TOL || mid == lo || mid == hi {
            return Ok(mid);
        }
        if r < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Maximum-likelihood tilt of the fixed-size subset law given one observed set.
///
/// Solves `E_beta[mean of s over S] = mean of s over the observed subset`.
/// The estimate exists only when the observed mean lies strictly between the
/// means of the m smallest and the m largest scores.
pub fn mle_beta(s: &[f64], observed_subset: &[usize]) -> Result<f64> {
    let target = check_subset(s, observed_subset)?;
    let m = observed_subset.len();
    let mut sorted = s.to_vec();
    sorted.sort_by(f64::total_cmp);
    let low = sorted[..m].iter().sum::<f64>() / m as f64;
    let high = sorted[s.len() - m..].iter().sum::<f64>() / m as f64;
    if target <= low || target >= high {
        return Err(Error::NoRoot(format!(
            "observed mean {target} is not strictly inside ({low}, {high}); the estimate does not exist"
        )));
    }
    if m == s.len() {
        return Err(Error::Degenerate(
            "subset is every gene; beta is not identified".into(),
        ));
    }
    increasing_root(|b| expected_subset_mean(s, b, m) - target)
}

/// Tilt solving the Poisson-form equation `tilted_mean(s, beta) = mean of s over S`.
///
/// Agrees with [`mle_beta`] when m is small relative to N.
pub fn tilted_mean_beta(s: &[f64], observed_subset: &[usize]) -> Result<f64> {
    let target = check_subset(s, observed_subset)?;
    let lo = s.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if target <= lo || target >= hi {
        return Err(Error::NoRoot(format!(
            "observed mean {target} is not strictly inside the score range"
        )));
    }
    increasing_root(|b| tilted_mean(s, b) - target)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::chi_square_sf;
    use rand_distr::{Distribution, StandardNormal};

    /// All m-subsets of 0..n, lexicographic.
    pub(crate) fn subsets(n: usize, m: usize) -> Vec<Vec<usize>> {
        fn rec(start: usize, n: usize, m: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            if cur.len() == m {
                out.push(cur.clone());
                return;
            }
            for i in start..n {
                cur.push(i);
                rec(i + 1, n, m, cur, out);
                cur.pop();
            }
        }
        let mut out = Vec::new();
        rec(0, n, m, &mut Vec::new(), &mut out);
        out
    }

    fn brute_probs(s: &[f64], beta: f64, m: usize) -> Vec<f64> {
        let all = subsets(s.len(), m);
        let w: Vec<f64> = all
            .iter()
            .map(|sub| sub.iter().map(|&i| (beta * s[i]).exp()).product())
            .collect();
        let total: f64 = w.iter().sum();
        w.iter().map(|x| x / total).collect()
    }

    #[test]
    fn uniform_when_untilted() {
        let model = TiltedModel::new(vec![0.3, -1.0, 2.0, 0.0, 5.0], 0.0, 2).unwrap();
        let lp = model.subset_log_prob(&[1, 4]).unwrap();
        assert!((lp - (0.1f64).ln()).abs() < 1e-14);
    }

    #[test]
    fn two_gene_example() {
        let model = TiltedModel::new(vec![0.0, 2f64.ln()], 1.0, 1).unwrap();
        assert!((model.subset_log_prob(&[0]).unwrap().exp() - 1.0 / 3.0).abs() < 1e-15);
        assert!((model.subset_log_prob(&[1]).unwrap().exp() - 2.0 / 3.0).abs() < 1e-15);
        let mut rng = RandomStream::new(4, 0).rng();
        let hits = (0..20_000)
            .filter(|_| model.sample_with(&mut rng) == vec![1])
            .count();
        assert!((hits as f64 / 20_000.0 - 2.0 / 3.0).abs() < 0.02);
    }

    #[test]
    fn probabilities_sum_to_one() {
        let s = [0.4, -1.2, 0.9, 2.2, -0.3, 1.1];
        let model = TiltedModel::new(s.to_vec(), 0.7, 3).unwrap();
        let total: f64 = subsets(6, 3)
            .iter()
            .map(|sub| model.subset_log_prob(sub).unwrap().exp())
            .sum();
        assert!((total - 1.0).abs() < 1e-12);
        for (sub, p) in subsets(6, 3).iter().zip(brute_probs(&s, 0.7, 3)) {
            assert!((model.subset_log_prob(sub).unwrap().exp() - p).abs() < 1e-13);
        }
    }

    #[test]
    fn bad_subsets() {
        let model = TiltedModel::new(vec![0.0, 1.0, 2.0], 1.0, 2).unwrap();
        assert!(model.subset_log_prob(&[1, 1]).is_err());
        assert!(model.subset_log_prob(&[1]).is_err());
        assert!(model.subset_log_prob(&[0, 3]).is_err());
        assert!(TiltedModel::new(vec![1e308, 0.0], 10.0, 1).is_err());
    }

    #[test]
    fn full_subset_is_forced() {
        let model = TiltedModel::new(vec![0.1, 3.0, -2.0], 2.0, 3).unwrap();
        assert_eq!(model.sample_subset(RandomStream::new(1, 1)), vec![0, 1, 2]);
    }

    #[test]
    fn uniform_sampler_chi_square() {
        let model = TiltedModel::new(vec![1.0, 2.0, 3.0, 4.0, 5.0], 0.0, 2).unwrap();
        let all = subsets(5, 2);
        let mut counts = vec![0usize; all.len()];
        let mut rng = RandomStream::new(5, 0).rng();
        let draws = 20_000;
        for _ in 0..draws {
            let s = model.sample_with(&mut rng);
            counts[all.iter().position(|a| *a == s).unwrap()] += 1;
        }
        let e = draws as f64 / all.len() as f64;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
        assert!(chi_square_sf(chi2, (all.len() - 1) as f64).unwrap() > 0.01);
    }

    #[test]
    fn expected_mean_matches_enumeration() {
        let s = [0.4, -1.2, 0.9, 2.2, -0.3, 1.1, 0.0];
        for beta in [-1.5, 0.0, 0.8] {
            for m in 1..=4 {
                let probs = brute_probs(&s, beta, m);
                let want: f64 = subsets(7, m)
                    .iter()
                    .zip(&probs)
                    .map(|(sub, p)| p * sub.iter().map(|&i| s[i]).sum::<f64>() / m as f64)
                    .sum();
                let got = TiltedModel::new(s.to_vec(), beta, m)
                    .unwrap()
                    .expected_subset_mean();
                assert!(
                    (got - want).abs() < 1e-12,
                    "beta {beta} m {m}: {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn tilt_raises_expected_mean() {
        let s = [0.4, -1.2, 0.9, 2.2, -0.3, 1.1, 0.0];
        let mut last = f64::NEG_INFINITY;
        for beta in [-2.0, -1.0, 0.0, 0.5, 1.0, 3.0] {
            let v = expected_subset_mean(&s, beta, 3);
            assert!(v > last);
            last = v;
        }
    }

    #[test]
    fn shift_invariance() {
        let s = [0.4, -1.2, 0.9, 2.2, -0.3];
        let shifted: Vec<f64> = s.iter().map(|v| v + 7.5).collect();
        let a = TiltedModel::new(s.to_vec(), 1.3, 2).unwrap();
        let b = TiltedModel::new(shifted.clone(), 1.3, 2).unwrap();
        for sub in subsets(5, 2) {
            let (pa, pb) = (
                a.subset_log_prob(&sub).unwrap(),
                b.subset_log_prob(&sub).unwrap(),
            );
            assert!((pa - pb).abs() < 1e-12);
        }
        let obs = [0, 3];
        let (ba, bb) = (
            mle_beta(&s, &obs).unwrap(),
            mle_beta(&shifted, &obs).unwrap(),
        );
        assert!((ba - bb).abs() < 1e-8);
    }

    #[test]
    fn mle_zero_at_untilted_mean() {
        // subset {0, 3} of s = (0, 1, 2, 3) has mean 1.5 = mean(s)
        let s = [0.0, 1.0, 2.0, 3.0];
        assert_eq!(mle_beta(&s, &[0, 3]).unwrap(), 0.0);
        assert_eq!(tilted_mean_beta(&s, &[0, 3]).unwrap(), 0.0);
    }

    #[test]
    fn mle_boundary_has_no_root() {
        assert!(matches!(mle_beta(&[0.0, 1.0], &[1]), Err(Error::NoRoot(_))));
        assert!(matches!(
            tilted_mean_beta(&[0.0, 1.0], &[1]),
            Err(Error::NoRoot(_))
        ));
        assert!(mle_beta(&[2.0; 4], &[1]).is_err());
    }

    #[test]
    fn mle_solves_its_equation() {
        let mut rng = RandomStream::new(12, 0).rng();
        let s: Vec<f64> = (0..300).map(|_| StandardNormal.sample(&mut rng)).collect();
        let obs: Vec<usize> = (0..300).filter(|&i| s[i] > 0.2).take(40).collect();
        let target = obs.iter().map(|&i| s[i]).sum::<f64>() / obs.len() as f64;
        let b = mle_beta(&s, &obs).unwrap();
        assert!((expected_subset_mean(&s, b, obs.len()) - target).abs() <= 1e-10);
        let t = tilted_mean_beta(&s, &obs).unwrap();
        assert!((tilted_mean(&s, t) - target).abs() <= 1e-10);
    }
}
