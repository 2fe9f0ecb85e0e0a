//! Numerical Mercer decomposition and Karhunen-Loeve sampling.
//!
//! A 1-D kernel on a closed interval is decomposed with the Nystrom method
//! on Gauss-Legendre nodes: the weighted Gram matrix W^{1/2} K W^{1/2} is
//! eigendecomposed, retained eigenpairs approximate the integral-operator
//! spectrum, and eigenfunctions extend off the nodes through the kernel.
//! Two such bases combine into a product basis whose eigenvalues are the
//! pairwise products, and truncated fields are sampled as
//! F(x, y) = sum_ij Z_ij g_i(x) h_j(y) with g_i = sqrt(lambda_i) psi_i.

use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernel::Kernel1D;
use crate::quadrature::gauss_legendre;
use crate::rng::stream;

/// Relative eigenvalue cutoff: eigenpairs below `TOL_EIG * lambda_1` are
/// discarded as beyond double-precision resolving power.
pub const TOL_EIG: f64 = 1e-12;

/// Default Gauss-Legendre node count for decompositions.
pub const DEFAULT_NODES: usize = 64;

/// Minimum node count accepted by [`SpectralBasis::decompose`].
pub const MIN_NODES: usize = 4;

/// A sampled realization of a two-dimensional random field.
pub trait RandomField {
    fn eval(&self, x: f64, y: f64) -> Result<f64>;
}

/// Zero-mean unit-variance law for expansion coefficients.
///
/// Any of these yields the same covariance function; only the Gaussian law
/// makes the truncated field Gaussian.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoefficientLaw {
    Gaussian,
    Rademacher,
    Uniform,
}

impl CoefficientLaw {
    pub fn sample(self, rng: &mut impl Rng) -> f64 {
        match self {
            CoefficientLaw::Gaussian => {
                rng.sample::<f64, _>(rand_distr::StandardNormal)
            }
            CoefficientLaw::Rademacher => {
                if rng.gen::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            CoefficientLaw::Uniform => {
                let half_width = 3.0_f64.sqrt();
                rng.gen_range(-half_width..half_width)
            }
        }
    }
}

/// Nystrom-approximated Mercer eigenpairs of a 1-D kernel.
#[derive(Debug, Clone)]
pub struct SpectralBasis {
    kernel: Kernel1D,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    /// Strictly positive, descending.
    eigenvalues: Vec<f64>,
    /// Row i holds psi_i at the nodes; rows are L2-orthonormal under the
    /// quadrature weights.
    node_eigenfunctions: DMatrix<f64>,
}

impl SpectralBasis {
    /// Nystrom decomposition of `kernel` on `m` Gauss-Legendre nodes,
    /// keeping at most `rank_cap` eigenpairs above the relative cutoff.
    pub fn decompose(kernel: &Kernel1D, m: usize, rank_cap: usize) -> Result<Self> {
        if m < MIN_NODES {
            return Err(Error::Range(format!(
                "decomposition needs at least {MIN_NODES} nodes, got {m}"
            )));
        }
        if rank_cap > m {
            return Err(Error::Range(format!(
                "rank cutoff {rank_cap} exceeds node count {m}"
            )));
        }
        let domain = kernel.domain();
        let rule = gauss_legendre(m, domain.lo(), domain.hi())?;

        let sqrt_w: Vec<f64> = rule.weights.iter().map(|w| w.sqrt()).collect();
        let weighted_gram = DMatrix::from_fn(m, m, |i, j| {
            sqrt_w[i] * kernel.eval_unchecked(rule.nodes[i], rule.nodes[j]) * sqrt_w[j]
        });
        let eig = SymmetricEigen::new(weighted_gram);

        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());

        let lead = eig.eigenvalues[order[0]];
        if !(lead > 0.0) || !lead.is_finite() {
            return Err(Error::numerical(format!(
                "eigen-solve produced no positive leading eigenvalue (got {lead})"
            )));
        }

        let mut eigenvalues = Vec::new();
        let mut rows = Vec::new();
        for &idx in order.iter().take(rank_cap) {
            let lambda = eig.eigenvalues[idx];
            if lambda <= TOL_EIG * lead {
                break;
            }
            // psi_i(node_k) = u_i[k] / sqrt(w_k), with a canonical sign so
            // decomposition output is deterministic.
            let col = eig.eigenvectors.column(idx);
            let mut row: Vec<f64> = (0..m).map(|k| col[k] / sqrt_w[k]).collect();
            let extreme = row
                .iter()
                .cloned()
                .max_by(|a, b| a.abs().partial_cmp(&b.abs()).unwrap())
                .unwrap();
            if extreme < 0.0 {
                for v in &mut row {
                    *v = -*v;
                }
            }
            eigenvalues.push(lambda);
            rows.push(row);
        }

        let node_eigenfunctions =
            DMatrix::from_fn(rows.len(), m, |i, k| rows[i][k]);
        Ok(Self {
            kernel: kernel.clone(),
            nodes: rule.nodes,
            weights: rule.weights,
            eigenvalues,
            node_eigenfunctions,
        })
    }

    /// Assembles a basis from previously exported pieces, re-validating the
    /// spectral invariants.
    pub fn from_parts(
        kernel: Kernel1D,
        nodes: Vec<f64>,
        weights: Vec<f64>,
        eigenvalues: Vec<f64>,
        node_eigenfunctions: DMatrix<f64>,
    ) -> Result<Self> {
        let m = nodes.len();
        if weights.len() != m || node_eigenfunctions.ncols() != m {
            return Err(Error::Shape(format!(
                "inconsistent node count: {} nodes, {} weights, {} eigenfunction columns",
                m,
                weights.len(),
                node_eigenfunctions.ncols()
            )));
        }
        if node_eigenfunctions.nrows() != eigenvalues.len() {
            return Err(Error::Shape(format!(
                "{} eigenvalues but {} eigenfunction rows",
                eigenvalues.len(),
                node_eigenfunctions.nrows()
            )));
        }
        if weights.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::numerical("quadrature weights must be positive"));
        }
        for pair in eigenvalues.windows(2) {
            if !(pair[0] >= pair[1]) {
                return Err(Error::numerical("eigenvalues must be descending"));
            }
        }
        if eigenvalues.last().map_or(true, |&l| !(l > 0.0)) {
            return Err(Error::numerical("eigenvalues must be strictly positive"));
        }
        let basis = Self {
            kernel,
            nodes,
            weights,
            eigenvalues,
            node_eigenfunctions,
        };
        let worst = basis.worst_orthonormality_defect();
        if worst > 1e-8 {
            return Err(Error::numerical(format!(
                "eigenfunctions are not quadrature-orthonormal (defect {worst:.3e})"
            )));
        }
        Ok(basis)
    }

    pub fn kernel(&self) -> &Kernel1D {
        &self.kernel
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn rank(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn node_eigenfunctions(&self) -> &DMatrix<f64> {
        &self.node_eigenfunctions
    }

    /// max |<psi_i, psi_j>_quad - delta_ij| over retained pairs.
    pub fn worst_orthonormality_defect(&self) -> f64 {
        let r = self.rank();
        let mut worst: f64 = 0.0;
        for i in 0..r {
            for j in i..r {
                let inner: f64 = (0..self.nodes.len())
                    .map(|k| {
                        self.weights[k]
                            * self.node_eigenfunctions[(i, k)]
                            * self.node_eigenfunctions[(j, k)]
                    })
                    .sum();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((inner - target).abs());
            }
        }
        worst
    }

    /// Quadrature approximation of the kernel trace, integral of kappa(x, x).
    pub fn quadrature_trace(&self) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * self.kernel.eval_unchecked(x, x))
            .sum()
    }

    /// Nystrom extension of eigenfunction `i` to an arbitrary domain point:
    /// psi_i(x) = (1 / lambda_i) sum_k w_k kappa(x, node_k) psi_i(node_k).
    pub fn eval_eigenfunction(&self, i: usize, x: f64) -> Result<f64> {
        if i >= self.rank() {
            return Err(Error::Range(format!(
                "eigenfunction index {i} out of range for rank {}",
                self.rank()
            )));
        }
        if !self.kernel.domain().contains(x) {
            return Err(Error::Domain(format!(
                "point {x} outside basis domain [{}, {}]",
                self.kernel.domain().lo(),
                self.kernel.domain().hi()
            )));
        }
        let mut acc = 0.0;
        for k in 0..self.nodes.len() {
            acc += self.weights[k]
                * self.kernel.eval_unchecked(x, self.nodes[k])
                * self.node_eigenfunctions[(i, k)];
        }
        Ok(acc / self.eigenvalues[i])
    }

    /// All retained eigenfunctions at `x`, as a column vector.
    pub fn eigenfunctions_at(&self, x: f64) -> Result<DVector<f64>> {
        if !self.kernel.domain().contains(x) {
            return Err(Error::Domain(format!(
                "point {x} outside basis domain [{}, {}]",
                self.kernel.domain().lo(),
                self.kernel.domain().hi()
            )));
        }
        let kvec = DVector::from_fn(self.nodes.len(), |k, _| {
            self.weights[k] * self.kernel.eval_unchecked(x, self.nodes[k])
        });
        let mut values = &self.node_eigenfunctions * kvec;
        for i in 0..self.rank() {
            values[i] /= self.eigenvalues[i];
        }
        Ok(values)
    }

    /// KL-scaled eigenfunctions sqrt(lambda_i) psi_i(x) for i < n,
    /// zero-padded beyond the retained rank.
    pub fn scaled_eigenfunctions_at(&self, x: f64, n: usize) -> Result<DVector<f64>> {
        let values = self.eigenfunctions_at(x)?;
        Ok(DVector::from_fn(n, |i, _| {
            if i < self.rank() {
                self.eigenvalues[i].sqrt() * values[i]
            } else {
                0.0
            }
        }))
    }

    /// Partial Mercer sum sum_{i < n} lambda_i psi_i(x) psi_i(x').
    pub fn reconstruct(&self, x: f64, x_prime: f64, n: usize) -> Result<f64> {
        if n > self.rank() {
            return Err(Error::Range(format!(
                "truncation {n} exceeds retained rank {}",
                self.rank()
            )));
        }
        let px = self.eigenfunctions_at(x)?;
        let py = self.eigenfunctions_at(x_prime)?;
        Ok((0..n).map(|i| self.eigenvalues[i] * px[i] * py[i]).sum())
    }

    /// JSON export: eigenvalues, nodes, weights, and the row-major
    /// node-eigenvector matrix, all printed with 17 significant digits.
    pub fn to_json_string(&self) -> String {
        fn seq(values: impl Iterator<Item = f64>) -> String {
            let parts: Vec<String> = values.map(|v| format!("{v:.16e}")).collect();
            format!("[{}]", parts.join(","))
        }
        let rows: Vec<String> = (0..self.rank())
            .map(|i| seq((0..self.nodes.len()).map(|k| self.node_eigenfunctions[(i, k)])))
            .collect();
        format!(
            "{{\"eigenvalues\":{},\"nodes\":{},\"weights\":{},\"node_eigenvectors\":[{}]}}",
            seq(self.eigenvalues.iter().copied()),
            seq(self.nodes.iter().copied()),
            seq(self.weights.iter().copied()),
            rows.join(",")
        )
    }
}

/// One eigenpair of a separable product kernel: value lambda_i * gamma_j
/// with handles into the factor bases.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProductEigenpair {
    pub value: f64,
    pub index_x: usize,
    pub index_y: usize,
}

/// Tensor product of two spectral bases, truncated to `n x n` terms.
///
/// The truncation may exceed either factor rank; missing eigenpairs are
/// treated as zero functions so a single limit covers both indices.
#[derive(Debug, Clone)]
pub struct ProductBasis {
    basis_x: SpectralBasis,
    basis_y: SpectralBasis,
    truncation: usize,
}

impl ProductBasis {
    pub fn new(basis_x: SpectralBasis, basis_y: SpectralBasis, truncation: usize) -> Result<Self> {
        if truncation == 0 {
            return Err(Error::Range("truncation must be at least 1".into()));
        }
        Ok(Self {
            basis_x,
            basis_y,
            truncation,
        })
    }

    pub fn basis_x(&self) -> &SpectralBasis {
        &self.basis_x
    }

    pub fn basis_y(&self) -> &SpectralBasis {
        &self.basis_y
    }

    pub fn truncation(&self) -> usize {
        self.truncation
    }

    /// g_i(x) = sqrt(lambda_i) psi_i(x) for i < truncation, zero-padded
    /// beyond the retained rank.
    pub fn g_at(&self, x: f64) -> Result<DVector<f64>> {
        self.basis_x.scaled_eigenfunctions_at(x, self.truncation)
    }

    /// h_j(y) = sqrt(gamma_j) phi_j(y), zero-padded like [`Self::g_at`].
    pub fn h_at(&self, y: f64) -> Result<DVector<f64>> {
        self.basis_y.scaled_eigenfunctions_at(y, self.truncation)
    }

    /// The n^2 product eigenvalues lambda_i gamma_j, sorted descending.
    pub fn product_eigenpairs(&self) -> Vec<ProductEigenpair> {
        let lambda = |i: usize| {
            self.basis_x
                .eigenvalues()
                .get(i)
                .copied()
                .unwrap_or(0.0)
        };
        let gamma = |j: usize| {
            self.basis_y
                .eigenvalues()
                .get(j)
                .copied()
                .unwrap_or(0.0)
        };
        let mut pairs = Vec::with_capacity(self.truncation * self.truncation);
        for i in 0..self.truncation {
            for j in 0..self.truncation {
                pairs.push(ProductEigenpair {
                    value: lambda(i) * gamma(j),
                    index_x: i,
                    index_y: j,
                });
            }
        }
        pairs.sort_by(|a, b| {
            b.value
                .partial_cmp(&a.value)
                .unwrap()
                .then(a.index_x.cmp(&b.index_x))
                .then(a.index_y.cmp(&b.index_y))
        });
        pairs
    }

    /// Covariance implied by the truncated expansion:
    /// sum_i g_i(ax) g_i(bx) * sum_j h_j(ay) h_j(by).
    pub fn truncated_cov(&self, a: (f64, f64), b: (f64, f64)) -> Result<f64> {
        let gx = self.g_at(a.0)?;
        let gy = self.g_at(b.0)?;
        let hx = self.h_at(a.1)?;
        let hy = self.h_at(b.1)?;
        Ok(gx.dot(&gy) * hx.dot(&hy))
    }

    /// The tensor quadrature grid (x nodes, y nodes) fields project on.
    pub fn quadrature_grid(&self) -> (&[f64], &[f64]) {
        (self.basis_x.nodes(), self.basis_y.nodes())
    }

    /// Quadrature approximation of the KL coefficients
    /// Z'_ij = integral of F(x, y) psi_i(x) phi_j(y) over the domain,
    /// from field values on the tensor quadrature grid (x rows, y columns).
    ///
    /// A field sampled by [`kl_sample`] projects back to
    /// Z'_ij = sqrt(lambda_i gamma_j) Z_ij.
    pub fn project_grid(&self, values: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let (mx, my) = (self.basis_x.nodes().len(), self.basis_y.nodes().len());
        if values.nrows() != mx || values.ncols() != my {
            return Err(Error::Shape(format!(
                "field grid is {}x{}, quadrature grid is {mx}x{my}",
                values.nrows(),
                values.ncols()
            )));
        }
        let n = self.truncation;
        let px = Self::projection_matrix(&self.basis_x, n);
        let py = Self::projection_matrix(&self.basis_y, n);
        Ok(px * values * py.transpose())
    }

    /// Rows are w_k psi_i(node_k); zero rows beyond the retained rank.
    fn projection_matrix(basis: &SpectralBasis, n: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, basis.nodes().len(), |i, k| {
            if i < basis.rank() {
                basis.weights()[k] * basis.node_eigenfunctions()[(i, k)]
            } else {
                0.0
            }
        })
    }
}

/// A truncated Karhunen-Loeve field
/// F(x, y) = sum_ij Z_ij g_i(x) h_j(y) with standardized coefficients.
#[derive(Debug, Clone)]
pub struct KLField {
    basis: Arc<ProductBasis>,
    coefficients: DMatrix<f64>,
}

impl KLField {
    pub fn new(basis: Arc<ProductBasis>, coefficients: DMatrix<f64>) -> Result<Self> {
        let n = basis.truncation();
        if coefficients.nrows() != n || coefficients.ncols() != n {
            return Err(Error::Shape(format!(
                "coefficient matrix is {}x{}, truncation is {n}",
                coefficients.nrows(),
                coefficients.ncols()
            )));
        }
        Ok(Self {
            basis,
            coefficients,
        })
    }

    pub fn basis(&self) -> &Arc<ProductBasis> {
        &self.basis
    }

    pub fn coefficients(&self) -> &DMatrix<f64> {
        &self.coefficients
    }

    /// Evaluation with caller-precomputed basis vectors; used by the Monte
    /// Carlo checks to share g/h across many fields.
    pub fn eval_with_vectors(&self, g: &DVector<f64>, h: &DVector<f64>) -> f64 {
        (g.transpose() * &self.coefficients * h)[(0, 0)]
    }

    /// Field values on the basis quadrature grid, x nodes indexing rows.
    pub fn eval_on_quadrature_grid(&self) -> Result<DMatrix<f64>> {
        let (xs, ys) = {
            let (xs, ys) = self.basis.quadrature_grid();
            (xs.to_vec(), ys.to_vec())
        };
        let n = self.basis.truncation();
        let gx = DMatrix::from_fn(n, xs.len(), |i, k| {
            // column k is g(x_k)
            self.basis.g_at(xs[k]).expect("node inside domain")[i]
        });
        let hy = DMatrix::from_fn(n, ys.len(), |j, l| {
            self.basis.h_at(ys[l]).expect("node inside domain")[j]
        });
        Ok(gx.transpose() * &self.coefficients * hy)
    }
}

impl RandomField for KLField {
    fn eval(&self, x: f64, y: f64) -> Result<f64> {
        let g = self.basis.g_at(x)?;
        let h = self.basis.h_at(y)?;
        Ok(self.eval_with_vectors(&g, &h))
    }
}

/// Label mixed into KL sampling streams so different samplers sharing one
/// master seed stay independent.
const KL_STREAM: u64 = 0x4b4c;

/// Draws `count` truncated KL fields with i.i.d. standard Gaussian
/// coefficients. Deterministic in `(seed, replicate index)`; replicates are
/// generated in parallel.
pub fn kl_sample(basis: &Arc<ProductBasis>, seed: u64, count: usize) -> Vec<KLField> {
    kl_sample_with_law(basis, seed, count, CoefficientLaw::Gaussian)
}

/// [`kl_sample`] with a selectable zero-mean unit-variance coefficient law.
pub fn kl_sample_with_law(
    basis: &Arc<ProductBasis>,
    seed: u64,
    count: usize,
    law: CoefficientLaw,
) -> Vec<KLField> {
    let n = basis.truncation();
    (0..count)
        .into_par_iter()
        .map(|replicate| {
            let mut rng = stream(seed, &[KL_STREAM, replicate as u64]);
            let coefficients = DMatrix::from_fn(n, n, |_, _| law.sample(&mut rng));
            KLField {
                basis: Arc::clone(basis),
                coefficients,
            }
        })
        .collect()
}

/// Writes field values on a rectangular grid as CSV with header `x,y,value`.
pub fn write_field_csv<F: RandomField>(
    field: &F,
    xs: &[f64],
    ys: &[f64],
    out: &mut impl Write,
) -> Result<()> {
    writeln!(out, "x,y,value")?;
    for &x in xs {
        for &y in ys {
            writeln!(out, "{},{},{}", x, y, field.eval(x, y)?)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{pt, Interval, SeparableKernel};
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn unit_sqexp(variance: f64, theta: f64) -> Kernel1D {
        Kernel1D::squared_exponential(variance, theta, Interval::unit()).unwrap()
    }

    /// theta small enough that the kernel is constant to double precision.
    fn nearly_constant(variance: f64) -> Kernel1D {
        Kernel1D::squared_exponential(variance, 1e-12, Interval::unit()).unwrap()
    }

    #[test]
    fn trace_identity_on_unit_interval() {
        // Quadrature of the diagonal is the oracle for the eigenvalue sum.
        let basis = SpectralBasis::decompose(&unit_sqexp(1.0, 1.0), 40, 40).unwrap();
        let total: f64 = basis.eigenvalues().iter().sum();
        let trace = basis.quadrature_trace();
        assert_relative_eq!(trace, 1.0, epsilon = 1e-12);
        assert!((total - trace).abs() <= 1e-6 * trace);
        for pair in basis.eigenvalues().windows(2) {
            assert!(pair[0] > pair[1]);
        }
    }

    #[test]
    fn constant_kernel_has_single_flat_eigenpair() {
        let basis = SpectralBasis::decompose(&nearly_constant(2.5), 24, 24).unwrap();
        assert_eq!(basis.rank(), 1);
        assert_relative_eq!(basis.eigenvalues()[0], 2.5, epsilon = 1e-8);
        for x in [0.0, 0.31, 0.77, 1.0] {
            assert_relative_eq!(basis.eval_eigenfunction(0, x).unwrap(), 1.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn full_rank_reconstruction_matches_node_gram() {
        let kernel = unit_sqexp(1.3, 1.7);
        let basis = SpectralBasis::decompose(&kernel, 32, 32).unwrap();
        let r = basis.rank();
        for (a, &x) in basis.nodes().to_vec().iter().enumerate().step_by(5) {
            for (b, &y) in basis.nodes().to_vec().iter().enumerate().step_by(7) {
                let _ = (a, b);
                let rebuilt = basis.reconstruct(x, y, r).unwrap();
                let exact = kernel.eval(x, y).unwrap();
                assert_abs_diff_eq!(rebuilt, exact, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn eigenfunctions_are_quadrature_orthonormal() {
        let basis = SpectralBasis::decompose(&unit_sqexp(1.0, 2.0), 48, 48).unwrap();
        assert!(basis.worst_orthonormality_defect() <= 1e-8);
    }

    #[test]
    fn reconstruct_rejects_excess_truncation() {
        let basis = SpectralBasis::decompose(&unit_sqexp(1.0, 1.0), 16, 16).unwrap();
        assert!(matches!(
            basis.reconstruct(0.5, 0.5, basis.rank() + 1),
            Err(Error::Range(_))
        ));
    }

    #[test]
    fn decompose_enforces_preconditions() {
        assert!(matches!(
            SpectralBasis::decompose(&unit_sqexp(1.0, 1.0), 3, 3),
            Err(Error::Range(_))
        ));
        assert!(matches!(
            SpectralBasis::decompose(&unit_sqexp(1.0, 1.0), 8, 9),
            Err(Error::Range(_))
        ));
    }

    #[test]
    fn constant_kernel_partial_sum_is_exact_at_rank_one() {
        let basis = SpectralBasis::decompose(&nearly_constant(1.5), 16, 16).unwrap();
        let rebuilt = basis.reconstruct(0.2, 0.9, 1).unwrap();
        assert_relative_eq!(rebuilt, 1.5, epsilon = 1e-8);
    }

    #[test]
    fn probe_error_shrinks_with_truncation() {
        let kernel = unit_sqexp(1.0, 1.0);
        let basis = SpectralBasis::decompose(&kernel, 40, 40).unwrap();
        let probes = crate::linspace(0.0, 1.0, 21);
        let max_err = |n: usize| -> f64 {
            let mut worst: f64 = 0.0;
            for &x in &probes {
                for &y in &probes {
                    let err =
                        (basis.reconstruct(x, y, n).unwrap() - kernel.eval(x, y).unwrap()).abs();
                    worst = worst.max(err);
                }
            }
            worst
        };
        assert!(max_err(10.min(basis.rank())) < max_err(3));
    }

    #[test]
    fn monotone_probe_error_through_retained_spectrum() {
        let kernel = unit_sqexp(1.0, 1.0);
        let basis = SpectralBasis::decompose(&kernel, 64, 64).unwrap();
        let probes = crate::linspace(0.0, 1.0, 21);
        let mut previous = f64::INFINITY;
        for n in 1..=basis.rank() {
            let mut worst: f64 = 0.0;
            for &x in &probes {
                for &y in &probes {
                    let err =
                        (basis.reconstruct(x, y, n).unwrap() - kernel.eval(x, y).unwrap()).abs();
                    worst = worst.max(err);
                }
            }
            assert!(
                worst <= previous + 1e-12,
                "error rose from {previous:.3e} to {worst:.3e} at truncation {n}"
            );
            previous = worst;
        }
    }

    fn synthetic_basis(eigenvalues: Vec<f64>) -> SpectralBasis {
        // Two equal-weight nodes carry the orthonormal pair (1, 1), (1, -1).
        let kernel = unit_sqexp(1.0, 1.0);
        let rank = eigenvalues.len();
        let rows = DMatrix::from_fn(rank, 2, |i, k| {
            if i == 0 {
                1.0
            } else if k == 0 {
                1.0
            } else {
                -1.0
            }
        });
        SpectralBasis::from_parts(
            kernel,
            vec![0.25, 0.75],
            vec![0.5, 0.5],
            eigenvalues,
            rows,
        )
        .unwrap()
    }

    #[test]
    fn product_eigenpairs_sorted_descending() {
        let bx = synthetic_basis(vec![2.0, 1.0]);
        let by = synthetic_basis(vec![3.0, 1.0]);
        let pb = ProductBasis::new(bx, by, 2).unwrap();
        let values: Vec<f64> = pb.product_eigenpairs().iter().map(|p| p.value).collect();
        assert_eq!(values, vec![6.0, 3.0, 2.0, 1.0]);
    }

    #[test]
    fn rank_one_factor_scales_the_other_spectrum() {
        let bx = synthetic_basis(vec![2.0]);
        let by = synthetic_basis(vec![3.0, 1.0]);
        let pb = ProductBasis::new(bx, by, 2).unwrap();
        let values: Vec<f64> = pb.product_eigenpairs().iter().map(|p| p.value).collect();
        // Padded x-eigenpairs contribute zeros.
        assert_eq!(values, vec![6.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn full_product_reconstruction_matches_separable_kernel() {
        let kx = unit_sqexp(1.2, 1.0);
        let ky = unit_sqexp(0.8, 2.0);
        let kernel = SeparableKernel::new(vec![kx.clone(), ky.clone()]).unwrap();
        let bx = SpectralBasis::decompose(&kx, 48, 48).unwrap();
        let by = SpectralBasis::decompose(&ky, 48, 48).unwrap();
        let n = bx.rank().max(by.rank());
        let pb = ProductBasis::new(bx, by, n).unwrap();
        for &x in &[0.05, 0.4, 0.95] {
            for &y in &[0.1, 0.62] {
                for &x2 in &[0.3, 0.88] {
                    for &y2 in &[0.0, 0.5, 1.0] {
                        let truncated = pb.truncated_cov((x, y), (x2, y2)).unwrap();
                        let exact = kernel.eval(&pt(&[x, y]), &pt(&[x2, y2])).unwrap();
                        assert_abs_diff_eq!(truncated, exact, epsilon = 1e-6);
                    }
                }
            }
        }
    }

    fn default_product_basis(truncation: usize) -> Arc<ProductBasis> {
        let bx = SpectralBasis::decompose(&unit_sqexp(1.0, 1.0), DEFAULT_NODES, DEFAULT_NODES)
            .unwrap();
        let by = SpectralBasis::decompose(&unit_sqexp(1.0, 1.0), DEFAULT_NODES, DEFAULT_NODES)
            .unwrap();
        Arc::new(ProductBasis::new(bx, by, truncation).unwrap())
    }

    #[test]
    fn kl_sampling_is_deterministic() {
        let pb = default_product_basis(4);
        let a = kl_sample(&pb, 99, 3);
        let b = kl_sample(&pb, 99, 3);
        for (fa, fb) in a.iter().zip(&b) {
            assert_eq!(fa.coefficients(), fb.coefficients());
        }
    }

    #[test]
    fn kl_empirical_covariance_matches_kernel() {
        // Monte Carlo oracle: mean of F(a) F(b) against eval_separable.
        let pb = default_product_basis(8);
        let kernel = SeparableKernel::new(vec![
            pb.basis_x().kernel().clone(),
            pb.basis_y().kernel().clone(),
        ])
        .unwrap();
        let fields = kl_sample(&pb, 2024, 4000);
        let probes = [
            ((0.1, 0.2), (0.1, 0.2)),
            ((0.1, 0.2), (0.8, 0.7)),
            ((0.5, 0.5), (0.5, 0.9)),
            ((0.0, 1.0), (1.0, 0.0)),
            ((0.3, 0.3), (0.4, 0.25)),
            ((0.9, 0.1), (0.85, 0.2)),
        ];
        for (a, b) in probes {
            let ga = pb.g_at(a.0).unwrap();
            let ha = pb.h_at(a.1).unwrap();
            let gb = pb.g_at(b.0).unwrap();
            let hb = pb.h_at(b.1).unwrap();
            let products: Vec<f64> = fields
                .iter()
                .map(|f| f.eval_with_vectors(&ga, &ha) * f.eval_with_vectors(&gb, &hb))
                .collect();
            let n = products.len() as f64;
            let mean = products.iter().sum::<f64>() / n;
            let var = products.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / (n - 1.0);
            let se = (var / n).sqrt();
            let exact = kernel
                .eval(&pt(&[a.0, a.1]), &pt(&[b.0, b.1]))
                .unwrap();
            assert!(
                (mean - exact).abs() <= 5.0 * se,
                "probe {a:?},{b:?}: empirical {mean:.4} vs exact {exact:.4} (se {se:.4})"
            );
        }
    }

    #[test]
    fn rank_one_constant_field_is_a_random_scalar() {
        let bx = SpectralBasis::decompose(&nearly_constant(4.0), 16, 16).unwrap();
        let by = SpectralBasis::decompose(&nearly_constant(9.0), 16, 16).unwrap();
        let pb = Arc::new(ProductBasis::new(bx, by, 1).unwrap());
        let field = kl_sample(&pb, 7, 1).remove(0);
        let z = field.coefficients()[(0, 0)];
        let expected = z * 2.0 * 3.0;
        for (x, y) in [(0.0, 0.0), (0.3, 0.9), (1.0, 0.5)] {
            assert_relative_eq!(field.eval(x, y).unwrap(), expected, epsilon = 1e-6);
        }
    }

    #[test]
    fn projection_recovers_pure_mode() {
        let pb = default_product_basis(6);
        let mut coeffs = DMatrix::zeros(6, 6);
        coeffs[(0, 0)] = 1.0;
        let field = KLField::new(Arc::clone(&pb), coeffs).unwrap();
        let grid = field.eval_on_quadrature_grid().unwrap();
        let projected = pb.project_grid(&grid).unwrap();
        let scale =
            (pb.basis_x().eigenvalues()[0] * pb.basis_y().eigenvalues()[0]).sqrt();
        for i in 0..6 {
            for j in 0..6 {
                let expected = if i == 0 && j == 0 { scale } else { 0.0 };
                assert_abs_diff_eq!(projected[(i, j)], expected, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn projection_round_trips_sampled_fields() {
        let pb = default_product_basis(5);
        let field = kl_sample(&pb, 31, 1).remove(0);
        let grid = field.eval_on_quadrature_grid().unwrap();
        let projected = pb.project_grid(&grid).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let scale = (pb.basis_x().eigenvalues()[i] * pb.basis_y().eigenvalues()[j]).sqrt();
                assert_abs_diff_eq!(
                    projected[(i, j)],
                    scale * field.coefficients()[(i, j)],
                    epsilon = 1e-6
                );
            }
        }
    }

    #[test]
    fn projected_coefficient_covariance_is_diagonal() {
        // Monte Carlo oracle for E(Z'_ij Z'_kl) = lambda_i gamma_j delta.
        let pb = default_product_basis(3);
        let fields = kl_sample(&pb, 5150, 2000);
        let count = fields.len() as f64;
        let mut second_moments = DMatrix::<f64>::zeros(3, 3);
        let mut cross = 0.0;
        for field in &fields {
            let grid = field.eval_on_quadrature_grid().unwrap();
            let z = pb.project_grid(&grid).unwrap();
            for i in 0..3 {
                for j in 0..3 {
                    second_moments[(i, j)] += z[(i, j)] * z[(i, j)] / count;
                }
            }
            cross += z[(0, 0)] * z[(1, 1)] / count;
        }
        for i in 0..3 {
            for j in 0..3 {
                let expected = pb.basis_x().eigenvalues()[i] * pb.basis_y().eigenvalues()[j];
                // Var of Z'^2 is about 2 expected^2 for Gaussian draws.
                let tol = 5.0 * (2.0_f64).sqrt() * expected / count.sqrt();
                assert!(
                    (second_moments[(i, j)] - expected).abs() <= tol.max(1e-12),
                    "moment ({i},{j}) {:.4e} vs {expected:.4e}",
                    second_moments[(i, j)]
                );
            }
        }
        let scale = pb.basis_x().eigenvalues()[0] * pb.basis_y().eigenvalues()[1];
        assert!(cross.abs() <= 5.0 * scale / count.sqrt());
    }

    #[test]
    fn project_grid_rejects_wrong_shape() {
        let pb = default_product_basis(3);
        let bad = DMatrix::zeros(4, 4);
        assert!(matches!(pb.project_grid(&bad), Err(Error::Shape(_))));
    }

    #[test]
    fn basis_json_has_17_digit_numbers() {
        let basis = SpectralBasis::decompose(&unit_sqexp(1.0, 1.0), 8, 8).unwrap();
        let json = basis.to_json_string();
        let value: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert!(value["eigenvalues"].is_array());
        assert!(value["nodes"].is_array());
        assert!(value["weights"].is_array());
        assert!(value["node_eigenvectors"].is_array());
        let reparsed = value["eigenvalues"][0].as_f64().unwrap();
        assert_relative_eq!(reparsed, basis.eigenvalues()[0], epsilon = 1e-15);
        // 17 significant digits: mantissa with 16 decimal places.
        assert!(json.contains("e0") || json.contains("e-"));
    }

    #[test]
    fn field_csv_has_expected_header() {
        let pb = default_product_basis(2);
        let field = kl_sample(&pb, 3, 1).remove(0);
        let mut buffer = Vec::new();
        write_field_csv(&field, &[0.0, 1.0], &[0.5], &mut buffer).unwrap();
        let text = String::from_utf8(buffer).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("x,y,value"));
        assert_eq!(lines.count(), 2);
    }
}
