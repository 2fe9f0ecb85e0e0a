//! k-th-order uncorrelation of random families and the product-process
//! construction.
//!
//! Two families are k-th-order uncorrelated when every mixed moment built
//! from monomials of per-family total degree at most k factorizes between
//! the families. Replacing the doubly-indexed coefficients of a truncated
//! expansion by products Z_i Z'_j of two such families yields a field with
//! the same mean and covariance but a different distribution; the
//! diagnostics here exhibit both the match and the difference.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernel::{pt, SeparableKernel};
use crate::rng::stream;
use crate::spectral::{CoefficientLaw, ProductBasis, RandomField};

/// Default cap on the number of mixed monomials a single check may test.
pub const DEFAULT_MONOMIAL_BUDGET: usize = 100_000;

/// Default pass threshold, in jackknife standard errors.
pub const DEFAULT_MOMENT_TOL: f64 = 5.0;

/// Joint samples of a family of named random quantities; rows are draws.
#[derive(Debug, Clone)]
pub struct SampleFamily {
    labels: Vec<String>,
    draws: DMatrix<f64>,
}

impl SampleFamily {
    pub fn new(labels: Vec<String>, draws: DMatrix<f64>) -> Result<Self> {
        if draws.nrows() < 2 {
            return Err(Error::SampleSize(format!(
                "need at least 2 joint draws, got {}",
                draws.nrows()
            )));
        }
        if labels.len() != draws.ncols() {
            return Err(Error::Shape(format!(
                "{} labels for {} columns",
                labels.len(),
                draws.ncols()
            )));
        }
        if draws.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("draws must be finite".into()));
        }
        Ok(Self { labels, draws })
    }

    /// Single-quantity family.
    pub fn scalar(label: impl Into<String>, draws: Vec<f64>) -> Result<Self> {
        let n = draws.len();
        Self::new(vec![label.into()], DMatrix::from_vec(n, 1, draws))
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn n_draws(&self) -> usize {
        self.draws.nrows()
    }

    pub fn n_quantities(&self) -> usize {
        self.draws.ncols()
    }

    /// Per-draw values of the monomial prod_i Q_i^{a_i}.
    fn monomial_values(&self, exponents: &[u32]) -> Vec<f64> {
        let n = self.n_draws();
        let mut out = vec![1.0; n];
        for (col, &e) in exponents.iter().enumerate() {
            if e == 0 {
                continue;
            }
            for (row, value) in out.iter_mut().enumerate() {
                *value *= self.draws[(row, col)].powi(e as i32);
            }
        }
        out
    }
}

/// Size and location of the worst moment-factorization violation found.
#[derive(Debug, Clone, Serialize)]
pub struct UncorrelationReport {
    /// Highest order tested.
    pub order: usize,
    /// Largest standardized violation over all tested monomials.
    pub worst_violation: f64,
    /// Exponents of the worst monomial, one entry per quantity per family.
    pub monomial_a: Vec<u32>,
    pub monomial_b: Vec<u32>,
    /// `pass[j]` reports order j + 1: no monomial of per-family degree
    /// at most j + 1 exceeded the threshold.
    pub pass: Vec<bool>,
}

impl UncorrelationReport {
    pub fn passes_order(&self, k: usize) -> bool {
        k >= 1 && self.pass.get(k - 1).copied().unwrap_or(false)
    }
}

/// Raw and standardized size of one moment-factorization violation.
#[derive(Debug, Clone, Copy)]
pub struct MomentViolation {
    /// E(prod X^a prod Y^b) - E(prod X^a) E(prod Y^b), empirically.
    pub raw: f64,
    /// `raw` divided by its leave-one-out jackknife standard error.
    pub standardized: f64,
}

/// All exponent tuples of `len` non-negative integers with the given total,
/// in lexicographic order.
fn compositions(len: usize, total: u32) -> Vec<Vec<u32>> {
    fn recurse(len: usize, total: u32, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if len == 1 {
            prefix.push(total);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        // Descending leading exponent gives graded-lexicographic order.
        for first in (0..=total).rev() {
            prefix.push(first);
            recurse(len - 1, total - first, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    recurse(len, total, &mut Vec::new(), &mut out);
    out
}

/// Tuples of per-family degree 1..=k in graded lexicographic order.
fn graded_tuples(len: usize, k: usize) -> Vec<Vec<u32>> {
    (1..=k as u32)
        .flat_map(|total| compositions(len, total))
        .collect()
}

fn binomial(n: usize, k: usize) -> Option<usize> {
    let mut acc: u128 = 1;
    for i in 0..k.min(n - k) {
        acc = acc.checked_mul((n - i) as u128)?;
        acc /= (i + 1) as u128;
        if acc > usize::MAX as u128 {
            return None;
        }
    }
    Some(acc as usize)
}

/// Number of exponent tuples of length `len` with degree in 1..=k.
fn tuple_count(len: usize, k: usize) -> Option<usize> {
    binomial(len + k, len).map(|c| c - 1)
}

fn violation_from_products(p: &[f64], q: &[f64]) -> MomentViolation {
    let n = p.len();
    let nf = n as f64;
    let (mut s_p, mut s_q, mut s_pq) = (0.0, 0.0, 0.0);
    for i in 0..n {
        s_p += p[i];
        s_q += q[i];
        s_pq += p[i] * q[i];
    }
    let raw = s_pq / nf - (s_p / nf) * (s_q / nf);

    // Leave-one-out values of the same statistic, computed in O(n).
    let m = nf - 1.0;
    let mut jack = Vec::with_capacity(n);
    let mut jack_mean = 0.0;
    for i in 0..n {
        let t = (s_pq - p[i] * q[i]) / m - (s_p - p[i]) * (s_q - q[i]) / (m * m);
        jack.push(t);
        jack_mean += t / nf;
    }
    let var: f64 = jack
        .iter()
        .map(|t| (t - jack_mean) * (t - jack_mean))
        .sum::<f64>()
        * m
        / nf;
    let se = var.sqrt();
    let standardized = if se > 0.0 {
        raw.abs() / se
    } else if raw.abs() <= f64::EPSILON {
        0.0
    } else {
        f64::INFINITY
    };
    MomentViolation { raw, standardized }
}

/// Empirical factorization defect of a single mixed monomial.
pub fn monomial_violation(
    x: &SampleFamily,
    y: &SampleFamily,
    a: &[u32],
    b: &[u32],
) -> Result<MomentViolation> {
    if x.n_draws() != y.n_draws() {
        return Err(Error::Shape(format!(
            "families must be jointly sampled: {} vs {} draws",
            x.n_draws(),
            y.n_draws()
        )));
    }
    if a.len() != x.n_quantities() || b.len() != y.n_quantities() {
        return Err(Error::Shape(
            "exponent tuples must match family quantity counts".into(),
        ));
    }
    Ok(violation_from_products(
        &x.monomial_values(a),
        &y.monomial_values(b),
    ))
}

/// Tests whether two jointly sampled families are k-th-order uncorrelated.
///
/// Every pair of exponent tuples with per-family total degree between 1 and
/// `k` is checked: the empirical mixed moment must match the product of the
/// per-family moments to within `tol` jackknife standard errors. The report
/// carries a pass flag for each order up to `k` and the worst monomial.
pub fn check_uncorrelated(
    x: &SampleFamily,
    y: &SampleFamily,
    k: usize,
    tol: f64,
) -> Result<UncorrelationReport> {
    check_uncorrelated_with_budget(x, y, k, tol, DEFAULT_MONOMIAL_BUDGET)
}

pub fn check_uncorrelated_with_budget(
    x: &SampleFamily,
    y: &SampleFamily,
    k: usize,
    tol: f64,
    budget: usize,
) -> Result<UncorrelationReport> {
    if k < 1 {
        return Err(Error::Range("order k must be at least 1".into()));
    }
    if x.n_draws() != y.n_draws() {
        return Err(Error::Shape(format!(
            "families must be jointly sampled: {} vs {} draws",
            x.n_draws(),
            y.n_draws()
        )));
    }
    let count_a = tuple_count(x.n_quantities(), k);
    let count_b = tuple_count(y.n_quantities(), k);
    let total = count_a
        .zip(count_b)
        .and_then(|(a, b)| a.checked_mul(b))
        .ok_or_else(|| Error::Budget("monomial enumeration overflows".into()))?;
    if total > budget {
        return Err(Error::Budget(format!(
            "enumeration would test {total} monomials, budget is {budget}"
        )));
    }

    let tuples_a = graded_tuples(x.n_quantities(), k);
    let tuples_b = graded_tuples(y.n_quantities(), k);
    let products_a: Vec<Vec<f64>> = tuples_a
        .par_iter()
        .map(|a| x.monomial_values(a))
        .collect();
    let products_b: Vec<Vec<f64>> = tuples_b
        .par_iter()
        .map(|b| y.monomial_values(b))
        .collect();

    let degree = |t: &[u32]| t.iter().sum::<u32>() as usize;

    // (order, standardized, ia, ib) per monomial pair, in enumeration order.
    let evaluated: Vec<(usize, f64, usize, usize)> = (0..tuples_a.len())
        .into_par_iter()
        .flat_map_iter(|ia| {
            let products_a = &products_a;
            let products_b = &products_b;
            let tuples_a = &tuples_a;
            let tuples_b = &tuples_b;
            (0..tuples_b.len()).map(move |ib| {
                let v = violation_from_products(&products_a[ia], &products_b[ib]);
                let order = degree(&tuples_a[ia]).max(degree(&tuples_b[ib]));
                (order, v.standardized, ia, ib)
            })
        })
        .collect();

    let mut worst_per_order = vec![0.0_f64; k];
    let mut worst = f64::NEG_INFINITY;
    let mut worst_pair = (0, 0);
    for &(order, standardized, ia, ib) in &evaluated {
        let slot = &mut worst_per_order[order - 1];
        *slot = slot.max(standardized);
        if standardized > worst {
            worst = standardized;
            worst_pair = (ia, ib);
        }
    }
    // A monomial of order j participates in every order >= j.
    for j in 1..k {
        worst_per_order[j] = worst_per_order[j].max(worst_per_order[j - 1]);
    }
    let pass: Vec<bool> = worst_per_order.iter().map(|&w| w <= tol).collect();

    Ok(UncorrelationReport {
        order: k,
        worst_violation: worst.max(0.0),
        monomial_a: tuples_a[worst_pair.0].clone(),
        monomial_b: tuples_b[worst_pair.1].clone(),
        pass,
    })
}

/// A realization of the product process
/// F(x, y) = (sum_i Z_i g_i(x)) (sum_j Z'_j h_j(y)).
#[derive(Debug, Clone)]
pub struct ProductField {
    basis: Arc<ProductBasis>,
    coeffs_x: DVector<f64>,
    coeffs_y: DVector<f64>,
}

impl ProductField {
    pub fn new(
        basis: Arc<ProductBasis>,
        coeffs_x: DVector<f64>,
        coeffs_y: DVector<f64>,
    ) -> Result<Self> {
        let n = basis.truncation();
        if coeffs_x.len() != n || coeffs_y.len() != n {
            return Err(Error::Shape(format!(
                "coefficient lengths {} and {} do not match truncation {n}",
                coeffs_x.len(),
                coeffs_y.len()
            )));
        }
        Ok(Self {
            basis,
            coeffs_x,
            coeffs_y,
        })
    }

    pub fn basis(&self) -> &Arc<ProductBasis> {
        &self.basis
    }

    pub fn coefficients_x(&self) -> &DVector<f64> {
        &self.coeffs_x
    }

    pub fn coefficients_y(&self) -> &DVector<f64> {
        &self.coeffs_y
    }

    /// Evaluation with caller-precomputed basis vectors.
    pub fn eval_with_vectors(&self, g: &DVector<f64>, h: &DVector<f64>) -> f64 {
        g.dot(&self.coeffs_x) * h.dot(&self.coeffs_y)
    }
}

impl RandomField for ProductField {
    fn eval(&self, x: f64, y: f64) -> Result<f64> {
        let g = self.basis.g_at(x)?;
        let h = self.basis.h_at(y)?;
        Ok(self.eval_with_vectors(&g, &h))
    }
}

const PRODUCT_STREAM: u64 = 0x5052;

/// Samples product-process realizations: the two coefficient families are
/// i.i.d. unit-variance draws, mutually independent, so the field shares
/// the covariance of the KL sampler at the same truncation while following
/// a different law.
pub fn product_sample(basis: &Arc<ProductBasis>, seed: u64, count: usize) -> Vec<ProductField> {
    product_sample_with_law(basis, seed, count, CoefficientLaw::Gaussian)
}

pub fn product_sample_with_law(
    basis: &Arc<ProductBasis>,
    seed: u64,
    count: usize,
    law: CoefficientLaw,
) -> Vec<ProductField> {
    let n = basis.truncation();
    (0..count)
        .into_par_iter()
        .map(|replicate| {
            let mut rng = stream(seed, &[PRODUCT_STREAM, replicate as u64]);
            let coeffs_x = DVector::from_fn(n, |_, _| law.sample(&mut rng));
            let coeffs_y = DVector::from_fn(n, |_, _| law.sample(&mut rng));
            ProductField {
                basis: Arc::clone(basis),
                coeffs_x,
                coeffs_y,
            }
        })
        .collect()
}

/// Sample skewness and kurtosis of field values at a probe point.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DistributionDiagnostics {
    pub skewness: f64,
    pub kurtosis: f64,
}

/// Minimum field count for [`distribution_diagnostics`].
pub const MIN_DIAGNOSTIC_SAMPLES: usize = 1000;

pub fn distribution_diagnostics<F: RandomField>(
    fields: &[F],
    probe: (f64, f64),
) -> Result<DistributionDiagnostics> {
    if fields.len() < MIN_DIAGNOSTIC_SAMPLES {
        return Err(Error::SampleSize(format!(
            "diagnostics need at least {MIN_DIAGNOSTIC_SAMPLES} fields, got {}",
            fields.len()
        )));
    }
    let values = fields
        .iter()
        .map(|f| f.eval(probe.0, probe.1))
        .collect::<Result<Vec<f64>>>()?;
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let central =
        |p: i32| -> f64 { values.iter().map(|v| (v - mean).powi(p)).sum::<f64>() / n };
    let m2 = central(2);
    if m2 <= 0.0 {
        return Err(Error::numerical(
            "zero variance at probe point; diagnostics undefined",
        ));
    }
    Ok(DistributionDiagnostics {
        skewness: central(3) / m2.powf(1.5),
        kurtosis: central(4) / (m2 * m2),
    })
}

/// Empirical covariance of one sampler at one probe pair.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CovarianceEstimate {
    pub mean: f64,
    pub standard_error: f64,
}

fn covariance_estimate(products: &[f64]) -> CovarianceEstimate {
    let n = products.len() as f64;
    let mean = products.iter().sum::<f64>() / n;
    let var = products
        .iter()
        .map(|p| (p - mean) * (p - mean))
        .sum::<f64>()
        / (n - 1.0);
    CovarianceEstimate {
        mean,
        standard_error: (var / n).sqrt(),
    }
}

/// Comparison of the two samplers and the exact kernel at one probe pair.
#[derive(Debug, Clone, Serialize)]
pub struct ProbePairComparison {
    pub a: (f64, f64),
    pub b: (f64, f64),
    pub exact: f64,
    pub kl: CovarianceEstimate,
    pub product: CovarianceEstimate,
    /// |kl - product| within 5 combined standard errors.
    pub samplers_agree: bool,
    pub kl_matches_exact: bool,
    pub product_matches_exact: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SecondOrderReport {
    pub pairs: Vec<ProbePairComparison>,
    pub pass: bool,
}

/// Verifies that the KL sampler and the product-process sampler share the
/// separable covariance: at each probe pair both empirical covariances must
/// sit within 5 Monte Carlo standard errors of the exact kernel value and
/// of each other.
pub fn second_order_identical_check(
    basis: &Arc<ProductBasis>,
    n_samples: usize,
    probe_pairs: &[((f64, f64), (f64, f64))],
    seed: u64,
) -> Result<SecondOrderReport> {
    compare_sampler_covariances(basis, basis, n_samples, probe_pairs, seed)
}

/// The same comparison with independently truncated samplers; used to show
/// that mismatched truncations are detectable.
pub fn compare_sampler_covariances(
    kl_basis: &Arc<ProductBasis>,
    product_basis: &Arc<ProductBasis>,
    n_samples: usize,
    probe_pairs: &[((f64, f64), (f64, f64))],
    seed: u64,
) -> Result<SecondOrderReport> {
    let kernel = SeparableKernel::new(vec![
        kl_basis.basis_x().kernel().clone(),
        kl_basis.basis_y().kernel().clone(),
    ])?;
    let kl_fields = crate::spectral::kl_sample(kl_basis, seed, n_samples);
    let product_fields = product_sample(product_basis, seed.wrapping_add(1), n_samples);

    let mut pairs = Vec::with_capacity(probe_pairs.len());
    let mut pass = true;
    for &(a, b) in probe_pairs {
        let exact = kernel.eval(&pt(&[a.0, a.1]), &pt(&[b.0, b.1]))?;

        let (kga, kha) = (kl_basis.g_at(a.0)?, kl_basis.h_at(a.1)?);
        let (kgb, khb) = (kl_basis.g_at(b.0)?, kl_basis.h_at(b.1)?);
        let kl_products: Vec<f64> = kl_fields
            .iter()
            .map(|f| f.eval_with_vectors(&kga, &kha) * f.eval_with_vectors(&kgb, &khb))
            .collect();
        let kl = covariance_estimate(&kl_products);

        let (pga, pha) = (product_basis.g_at(a.0)?, product_basis.h_at(a.1)?);
        let (pgb, phb) = (product_basis.g_at(b.0)?, product_basis.h_at(b.1)?);
        let product_products: Vec<f64> = product_fields
            .iter()
            .map(|f| f.eval_with_vectors(&pga, &pha) * f.eval_with_vectors(&pgb, &phb))
            .collect();
        let product = covariance_estimate(&product_products);

        let combined = (kl.standard_error.powi(2) + product.standard_error.powi(2)).sqrt();
        let samplers_agree = (kl.mean - product.mean).abs() <= 5.0 * combined;
        let kl_matches_exact = (kl.mean - exact).abs() <= 5.0 * kl.standard_error;
        let product_matches_exact =
            (product.mean - exact).abs() <= 5.0 * product.standard_error;
        pass &= samplers_agree && kl_matches_exact && product_matches_exact;
        pairs.push(ProbePairComparison {
            a,
            b,
            exact,
            kl,
            product,
            samplers_agree,
            kl_matches_exact,
            product_matches_exact,
        });
    }
    Ok(SecondOrderReport { pairs, pass })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{Interval, Kernel1D};
    use crate::spectral::{kl_sample, kl_sample_with_law, SpectralBasis, DEFAULT_NODES};
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn gaussian_draws(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = stream(seed, &[0xabc]);
        (0..n)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    #[test]
    fn independent_gaussians_pass_fourth_order() {
        let n = 100_000;
        let x = SampleFamily::scalar("x", gaussian_draws(11, n)).unwrap();
        let y = SampleFamily::scalar("y", gaussian_draws(12, n)).unwrap();
        let report = check_uncorrelated(&x, &y, 4, DEFAULT_MOMENT_TOL).unwrap();
        assert!(report.pass.iter().all(|&p| p), "report {report:?}");
    }

    #[test]
    fn square_transform_fails_exactly_at_second_order() {
        let n = 100_000;
        let z = gaussian_draws(21, n);
        let y_draws: Vec<f64> = z.iter().map(|v| v * v - 1.0).collect();
        let x = SampleFamily::scalar("z", z).unwrap();
        let y = SampleFamily::scalar("z^2-1", y_draws).unwrap();
        let report = check_uncorrelated(&x, &y, 2, DEFAULT_MOMENT_TOL).unwrap();
        assert!(report.passes_order(1), "first order should pass: {report:?}");
        assert!(!report.passes_order(2), "second order should fail");

        // Gaussian moment oracle: E(X^2 Y) = E(Z^4) - E(Z^2) = 2.
        let violation = monomial_violation(&x, &y, &[2], &[1]).unwrap();
        assert_relative_eq!(violation.raw, 2.0, epsilon = 0.15);
        assert!(violation.standardized > DEFAULT_MOMENT_TOL);
    }

    #[test]
    fn identical_families_fail_via_the_linear_monomial() {
        let n = 20_000;
        let z = gaussian_draws(31, n);
        let x = SampleFamily::scalar("x", z.clone()).unwrap();
        let y = SampleFamily::scalar("y", z).unwrap();
        let report = check_uncorrelated(&x, &y, 2, DEFAULT_MOMENT_TOL).unwrap();
        assert!(!report.passes_order(2));
        assert_eq!(report.monomial_a, vec![1]);
        assert_eq!(report.monomial_b, vec![1]);
    }

    #[test]
    fn enumeration_budget_is_enforced() {
        let n = 16;
        let draws = DMatrix::from_fn(n, 6, |i, j| ((i * 7 + j) % 5) as f64 - 2.0);
        let x =
            SampleFamily::new((0..6).map(|i| format!("x{i}")).collect(), draws.clone()).unwrap();
        let y = SampleFamily::new((0..6).map(|i| format!("y{i}")).collect(), draws).unwrap();
        assert!(matches!(
            check_uncorrelated_with_budget(&x, &y, 8, 5.0, 1000),
            Err(Error::Budget(_))
        ));
    }

    #[test]
    fn report_serializes_with_contract_fields() {
        let n = 1000;
        let x = SampleFamily::scalar("x", gaussian_draws(1, n)).unwrap();
        let y = SampleFamily::scalar("y", gaussian_draws(2, n)).unwrap();
        let report = check_uncorrelated(&x, &y, 2, 5.0).unwrap();
        let json = serde_json::to_value(&report).unwrap();
        for field in ["order", "worst_violation", "monomial_a", "monomial_b", "pass"] {
            assert!(json.get(field).is_some(), "missing {field}");
        }
    }

    fn unit_sqexp_basis(theta: f64) -> SpectralBasis {
        let kernel = Kernel1D::squared_exponential(1.0, theta, Interval::unit()).unwrap();
        SpectralBasis::decompose(&kernel, DEFAULT_NODES, DEFAULT_NODES).unwrap()
    }

    fn default_basis(truncation: usize) -> Arc<ProductBasis> {
        Arc::new(
            ProductBasis::new(unit_sqexp_basis(1.0), unit_sqexp_basis(1.0), truncation).unwrap(),
        )
    }

    const PROBE_PAIRS: [((f64, f64), (f64, f64)); 6] = [
        ((0.1, 0.2), (0.1, 0.2)),
        ((0.1, 0.2), (0.8, 0.7)),
        ((0.5, 0.5), (0.5, 0.9)),
        ((0.0, 1.0), (1.0, 0.0)),
        ((0.3, 0.3), (0.4, 0.25)),
        ((0.9, 0.1), (0.85, 0.2)),
    ];

    #[test]
    fn product_sampler_matches_kernel_covariance() {
        let pb = default_basis(8);
        let report = second_order_identical_check(&pb, 4000, &PROBE_PAIRS, 777).unwrap();
        assert!(report.pass, "{report:?}");
    }

    #[test]
    fn rank_one_product_field_is_a_scaled_surface() {
        let pb = default_basis(1);
        let field = product_sample(&pb, 5, 1).remove(0);
        let z = field.coefficients_x()[0] * field.coefficients_y()[0];
        for (x, y) in [(0.2, 0.8), (0.6, 0.4)] {
            let g1 = pb.g_at(x).unwrap()[0];
            let h1 = pb.h_at(y).unwrap()[0];
            assert_relative_eq!(field.eval(x, y).unwrap(), z * g1 * h1, epsilon = 1e-12);
        }
    }

    #[test]
    fn product_sampler_is_centred() {
        let pb = default_basis(4);
        let fields = product_sample(&pb, 202, 4000);
        for (x, y) in [(0.25, 0.5), (0.9, 0.9)] {
            let g = pb.g_at(x).unwrap();
            let h = pb.h_at(y).unwrap();
            let values: Vec<f64> =
                fields.iter().map(|f| f.eval_with_vectors(&g, &h)).collect();
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let sd = (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                / (n - 1.0))
                .sqrt();
            assert!(mean.abs() <= 5.0 * sd / n.sqrt(), "mean {mean} sd {sd}");
        }
    }

    #[test]
    fn truncated_covariance_factorizes_exactly() {
        // Two algebraic routes to the sampler covariance must agree: dot
        // products of scaled eigenfunctions against the product of partial
        // Mercer sums.
        let pb = default_basis(5);
        for &(a, b) in &PROBE_PAIRS {
            let via_fields = pb.truncated_cov(a, b).unwrap();
            let n = pb.truncation().min(pb.basis_x().rank());
            let kx = pb.basis_x().reconstruct(a.0, b.0, n).unwrap();
            let ky = pb.basis_y().reconstruct(a.1, b.1, n).unwrap();
            assert_relative_eq!(via_fields, kx * ky, max_relative = 1e-12);
        }
    }

    #[test]
    fn constant_kernels_give_identical_theoretical_covariances() {
        let constant = Kernel1D::squared_exponential(2.0, 1e-12, Interval::unit()).unwrap();
        let basis = SpectralBasis::decompose(&constant, 16, 16).unwrap();
        let pb = Arc::new(ProductBasis::new(basis.clone(), basis, 1).unwrap());
        let kernel = SeparableKernel::new(vec![constant.clone(), constant]).unwrap();
        let cov = pb.truncated_cov((0.1, 0.9), (0.7, 0.3)).unwrap();
        let exact = kernel.eval(&pt(&[0.1, 0.9]), &pt(&[0.7, 0.3])).unwrap();
        assert_relative_eq!(cov, exact, epsilon = 1e-6);
    }

    #[test]
    fn mismatched_truncations_are_detected() {
        let kl_basis = default_basis(8);
        let product_basis = default_basis(1);
        let report =
            compare_sampler_covariances(&kl_basis, &product_basis, 4000, &PROBE_PAIRS, 13)
                .unwrap();
        assert!(
            report
                .pairs
                .iter()
                .any(|p| !p.samplers_agree || !p.product_matches_exact),
            "truncation gap should exceed the Monte Carlo band on some pair"
        );
    }

    #[test]
    fn gaussian_kl_field_at_a_point_is_gaussian() {
        let pb = default_basis(1);
        let fields = kl_sample(&pb, 4242, 100_000);
        let diag = distribution_diagnostics(&fields, (0.5, 0.5)).unwrap();
        assert!((diag.kurtosis - 3.0).abs() < 0.2, "kurtosis {}", diag.kurtosis);
        assert!(diag.skewness.abs() < 0.1, "skewness {}", diag.skewness);
    }

    #[test]
    fn gaussian_product_field_has_kurtosis_nine() {
        // E[(Z Z')^4] = E[Z^4] E[Z'^4] = 9 for independent standard normals.
        let pb = default_basis(1);
        let fields = product_sample(&pb, 4242, 100_000);
        let diag = distribution_diagnostics(&fields, (0.5, 0.5)).unwrap();
        assert!((diag.kurtosis - 9.0).abs() < 0.5, "kurtosis {}", diag.kurtosis);
    }

    #[test]
    fn rademacher_product_field_has_kurtosis_one() {
        // Z Z' takes values in {-1, +1}, so the fourth moment equals the
        // squared variance.
        let pb = default_basis(1);
        let fields = product_sample_with_law(&pb, 4242, 20_000, CoefficientLaw::Rademacher);
        let diag = distribution_diagnostics(&fields, (0.5, 0.5)).unwrap();
        assert!((diag.kurtosis - 1.0).abs() < 0.05, "kurtosis {}", diag.kurtosis);
    }

    #[test]
    fn kl_field_skewness_vanishes_and_product_excess_kurtosis_is_positive() {
        let pb = default_basis(3);
        let kl_fields = kl_sample_with_law(&pb, 808, 20_000, CoefficientLaw::Gaussian);
        let kl_diag = distribution_diagnostics(&kl_fields, (0.3, 0.7)).unwrap();
        assert!(kl_diag.skewness.abs() < 0.1);

        let product_fields = product_sample(&default_basis(1), 808, 20_000);
        let product_diag = distribution_diagnostics(&product_fields, (0.3, 0.7)).unwrap();
        assert!(product_diag.kurtosis > 3.0);
    }

    #[test]
    fn diagnostics_require_enough_fields() {
        let pb = default_basis(1);
        let fields = kl_sample(&pb, 1, 10);
        assert!(matches!(
            distribution_diagnostics(&fields, (0.5, 0.5)),
            Err(Error::SampleSize(_))
        ));
    }

    #[test]
    fn graded_enumeration_is_ordered() {
        let tuples = graded_tuples(2, 2);
        assert_eq!(
            tuples,
            vec![vec![1, 0], vec![0, 1], vec![2, 0], vec![1, 1], vec![0, 2]]
        );
    }
}
