//! Gaussian-process emulation with a regression-plus-residual prior.
//!
//! The prior for a deterministic function is a sum of regression terms with
//! uncertain coefficients and a mean-zero residual process with a separable
//! covariance. Conditioning on an ensemble of runs is plain joint-Gaussian
//! algebra with the coefficients marginalized analytically. Grid designs
//! admit Kronecker-structured solves through per-axis eigendecompositions,
//! and the nearest-Kronecker rearrangement quantifies how far a covariance
//! matrix is from exact separability.

use std::io::{Read, Write};

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::kernel::{Interval, Kernel1D, Point, SeparableKernel, TOL_PSD};

/// Default relative diagonal jitter for conditioning on deterministic runs.
pub const DEFAULT_FIT_JITTER: f64 = 1e-10;

/// Design points closer than this in every coordinate are duplicates.
pub const DUPLICATE_TOL: f64 = 1e-12;

/// A regression term r_i(p) in the emulator mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regressor {
    Constant,
    /// The coordinate with the given index.
    Linear(usize),
    /// Product of two coordinates; the separability-breaking interaction.
    CrossProduct(usize, usize),
}

impl Regressor {
    pub fn eval(&self, p: &Point) -> f64 {
        match *self {
            Regressor::Constant => 1.0,
            Regressor::Linear(d) => p.coords[d],
            Regressor::CrossProduct(a, b) => p.coords[a] * p.coords[b],
        }
    }

    fn max_index(&self) -> Option<usize> {
        match *self {
            Regressor::Constant => None,
            Regressor::Linear(d) => Some(d),
            Regressor::CrossProduct(a, b) => Some(a.max(b)),
        }
    }
}

/// Uncertain regression coefficients: mean vector and PSD covariance.
#[derive(Debug, Clone)]
pub struct RegressionPrior {
    regressors: Vec<Regressor>,
    coef_mean: DVector<f64>,
    coef_cov: DMatrix<f64>,
}

impl RegressionPrior {
    pub fn new(
        regressors: Vec<Regressor>,
        coef_mean: DVector<f64>,
        coef_cov: DMatrix<f64>,
    ) -> Result<Self> {
        let k = regressors.len();
        if coef_mean.len() != k || coef_cov.nrows() != k || coef_cov.ncols() != k {
            return Err(Error::Shape(format!(
                "{k} regressors need a length-{k} mean and {k}x{k} covariance"
            )));
        }
        if k > 0 {
            let max_abs = coef_cov.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
            for i in 0..k {
                for j in 0..k {
                    if (coef_cov[(i, j)] - coef_cov[(j, i)]).abs() > 1e-12 * max_abs.max(1.0) {
                        return Err(Error::Shape("coefficient covariance must be symmetric".into()));
                    }
                }
            }
            let eig = SymmetricEigen::new(coef_cov.clone());
            if eig.eigenvalues.min() < -TOL_PSD * max_abs.max(1.0) {
                return Err(Error::numerical(format!(
                    "coefficient covariance is not PSD (min eigenvalue {:.3e})",
                    eig.eigenvalues.min()
                )));
            }
        }
        Ok(Self {
            regressors,
            coef_mean,
            coef_cov,
        })
    }

    /// No regression terms: a pure zero-mean residual prior.
    pub fn none() -> Self {
        Self {
            regressors: Vec::new(),
            coef_mean: DVector::zeros(0),
            coef_cov: DMatrix::zeros(0, 0),
        }
    }

    pub fn regressors(&self) -> &[Regressor] {
        &self.regressors
    }

    pub fn coef_mean(&self) -> &DVector<f64> {
        &self.coef_mean
    }

    pub fn coef_cov(&self) -> &DMatrix<f64> {
        &self.coef_cov
    }

    pub fn len(&self) -> usize {
        self.regressors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regressors.is_empty()
    }

    pub fn design_row(&self, p: &Point) -> DVector<f64> {
        DVector::from_fn(self.regressors.len(), |i, _| self.regressors[i].eval(p))
    }
}

/// Regression terms plus a separable residual process.
#[derive(Debug, Clone)]
pub struct EmulatorPrior {
    regression: RegressionPrior,
    residual: SeparableKernel,
}

impl EmulatorPrior {
    pub fn new(regression: RegressionPrior, residual: SeparableKernel) -> Result<Self> {
        let dim = residual.dim();
        for r in regression.regressors() {
            if let Some(idx) = r.max_index() {
                if idx >= dim {
                    return Err(Error::Shape(format!(
                        "regressor uses coordinate {idx}, kernel dimension is {dim}"
                    )));
                }
            }
        }
        Ok(Self {
            regression,
            residual,
        })
    }

    /// Zero-mean prior with no regression terms: covariance is exactly the
    /// separable kernel.
    pub fn separable(residual: SeparableKernel) -> Self {
        Self {
            regression: RegressionPrior::none(),
            residual,
        }
    }

    pub fn regression(&self) -> &RegressionPrior {
        &self.regression
    }

    pub fn residual(&self) -> &SeparableKernel {
        &self.residual
    }

    pub fn dim(&self) -> usize {
        self.residual.dim()
    }

    pub fn mean(&self, p: &Point) -> Result<f64> {
        if !self.residual.contains(p) {
            return Err(Error::Domain("point outside prior domain".into()));
        }
        Ok(self.regression.design_row(p).dot(&self.regression.coef_mean))
    }

    /// Prior covariance r(p)' C r(q) + kappa(p, q).
    pub fn cov(&self, p: &Point, q: &Point) -> Result<f64> {
        let residual = self.residual.eval(p, q)?;
        if self.regression.is_empty() {
            return Ok(residual);
        }
        let rp = self.regression.design_row(p);
        let rq = self.regression.design_row(q);
        Ok((rp.transpose() * &self.regression.coef_cov * rq)[(0, 0)] + residual)
    }

    pub fn mean_vector(&self, pts: &[Point]) -> Result<DVector<f64>> {
        pts.iter()
            .map(|p| self.mean(p))
            .collect::<Result<Vec<f64>>>()
            .map(DVector::from_vec)
    }

    pub fn cov_matrix(&self, pts: &[Point]) -> Result<DMatrix<f64>> {
        self.cov_between(pts, pts)
    }

    pub fn cov_between(&self, a: &[Point], b: &[Point]) -> Result<DMatrix<f64>> {
        let residual = if std::ptr::eq(a, b) {
            self.residual.gram(a)?
        } else {
            for p in a.iter().chain(b) {
                if !self.residual.contains(p) {
                    return Err(Error::Domain("point outside prior domain".into()));
                }
            }
            DMatrix::from_fn(a.len(), b.len(), |i, j| {
                self.residual.eval_unchecked(&a[i], &b[j])
            })
        };
        if self.regression.is_empty() {
            return Ok(residual);
        }
        let ra = DMatrix::from_fn(a.len(), self.regression.len(), |i, j| {
            self.regression.regressors()[j].eval(&a[i])
        });
        let rb = DMatrix::from_fn(b.len(), self.regression.len(), |i, j| {
            self.regression.regressors()[j].eval(&b[i])
        });
        Ok(&ra * &self.regression.coef_cov * rb.transpose() + residual)
    }
}

/// Observed runs of the deterministic function.
#[derive(Debug, Clone)]
pub struct RunEnsemble {
    design: Vec<Point>,
    values: DVector<f64>,
}

impl RunEnsemble {
    pub fn new(design: Vec<Point>, values: DVector<f64>) -> Result<Self> {
        if design.len() != values.len() {
            return Err(Error::Shape(format!(
                "{} design points but {} values",
                design.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("run values must be finite".into()));
        }
        let dim = design.first().map(Point::dim);
        for p in &design {
            if Some(p.dim()) != dim {
                return Err(Error::Shape("design points have mixed dimensions".into()));
            }
        }
        for i in 0..design.len() {
            for j in 0..i {
                let distinct = design[i]
                    .coords
                    .iter()
                    .zip(&design[j].coords)
                    .any(|(a, b)| (a - b).abs() > DUPLICATE_TOL);
                if !distinct {
                    return Err(Error::Domain(format!(
                        "design points {j} and {i} coincide within {DUPLICATE_TOL:e}"
                    )));
                }
            }
        }
        Ok(Self { design, values })
    }

    /// Empty ensemble; fitting it returns the prior unchanged.
    pub fn empty() -> Self {
        Self {
            design: Vec::new(),
            values: DVector::zeros(0),
        }
    }

    pub fn len(&self) -> usize {
        self.design.len()
    }

    pub fn is_empty(&self) -> bool {
        self.design.is_empty()
    }

    pub fn design(&self) -> &[Point] {
        &self.design
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    /// Reads an ensemble from CSV with columns `x1..xp` and `f`.
    pub fn from_csv(reader: impl Read) -> Result<Self> {
        let mut csv = csv::Reader::from_reader(reader);
        let headers = csv
            .headers()
            .map_err(|e| Error::Parse(format!("ensemble CSV: {e}")))?
            .clone();
        let mut coord_cols = Vec::new();
        let mut f_col = None;
        for (idx, name) in headers.iter().enumerate() {
            if name == "f" {
                f_col = Some(idx);
            } else if let Some(rest) = name.strip_prefix('x') {
                let axis: usize = rest.parse().map_err(|_| {
                    Error::Parse(format!("unexpected ensemble CSV column {name:?}"))
                })?;
                if axis == 0 {
                    return Err(Error::Parse("coordinate columns start at x1".into()));
                }
                coord_cols.push((axis - 1, idx));
            } else {
                return Err(Error::Parse(format!(
                    "unexpected ensemble CSV column {name:?}; expected x1..xp and f"
                )));
            }
        }
        let f_col =
            f_col.ok_or_else(|| Error::Parse("ensemble CSV is missing the f column".into()))?;
        coord_cols.sort_by_key(|&(axis, _)| axis);
        for (want, &(axis, _)) in coord_cols.iter().enumerate() {
            if axis != want {
                return Err(Error::Parse(format!(
                    "ensemble CSV coordinate columns must be contiguous x1..xp, missing x{}",
                    want + 1
                )));
            }
        }

        let mut design = Vec::new();
        let mut values = Vec::new();
        for (row_idx, record) in csv.records().enumerate() {
            let record = record.map_err(|e| Error::Parse(format!("ensemble CSV: {e}")))?;
            let parse = |idx: usize| -> Result<f64> {
                record
                    .get(idx)
                    .ok_or_else(|| {
                        Error::Parse(format!("ensemble CSV row {} is short", row_idx + 1))
                    })?
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| {
                        Error::Parse(format!("ensemble CSV row {}: {e}", row_idx + 1))
                    })
            };
            let coords = coord_cols
                .iter()
                .map(|&(_, idx)| parse(idx))
                .collect::<Result<Vec<f64>>>()?;
            design.push(Point::new(coords));
            values.push(parse(f_col)?);
        }
        Self::new(design, DVector::from_vec(values))
    }

    pub fn write_csv(&self, out: &mut impl Write) -> Result<()> {
        let p = self.design.first().map_or(0, Point::dim);
        let header: Vec<String> = (1..=p).map(|d| format!("x{d}")).collect();
        writeln!(out, "{},f", header.join(","))?;
        for (point, value) in self.design.iter().zip(self.values.iter()) {
            let coords: Vec<String> = point.coords.iter().map(|c| c.to_string()).collect();
            writeln!(out, "{},{}", coords.join(","), value)?;
        }
        Ok(())
    }
}

/// How the regression coefficients enter the posterior.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeanMode {
    /// Marginalize the coefficients analytically (their uncertainty stays in
    /// the posterior covariance).
    FullBayes,
    /// Estimate the coefficients by generalized least squares against the
    /// residual kernel, then treat them as known. This reproduces the
    /// "estimate the mean, then plug it in" practice and leaves a prior
    /// whose covariance is exactly the separable residual.
    PlugIn,
}

/// A fitted emulator: the prior conditioned on an ensemble of runs.
#[derive(Debug, Clone)]
pub struct EmulatorPosterior {
    prior: EmulatorPrior,
    ensemble: RunEnsemble,
    chol: Option<Cholesky<f64, nalgebra::Dyn>>,
    alpha: DVector<f64>,
    jitter: f64,
}

/// Posterior mean and covariance over a prediction set.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl Prediction {
    pub fn standard_deviations(&self) -> DVector<f64> {
        DVector::from_fn(self.mean.len(), |i, _| {
            self.covariance[(i, i)].max(0.0).sqrt()
        })
    }
}

/// Conditions the prior on the ensemble, marginalizing the coefficients.
pub fn fit(
    prior: &EmulatorPrior,
    ensemble: &RunEnsemble,
    jitter: Option<f64>,
) -> Result<EmulatorPosterior> {
    fit_with_mode(prior, ensemble, jitter, MeanMode::FullBayes)
}

pub fn fit_with_mode(
    prior: &EmulatorPrior,
    ensemble: &RunEnsemble,
    jitter: Option<f64>,
    mode: MeanMode,
) -> Result<EmulatorPosterior> {
    let prior = match mode {
        MeanMode::FullBayes => prior.clone(),
        MeanMode::PlugIn => plug_in_prior(prior, ensemble, jitter)?,
    };
    if ensemble.is_empty() {
        return Ok(EmulatorPosterior {
            prior,
            ensemble: ensemble.clone(),
            chol: None,
            alpha: DVector::zeros(0),
            jitter: 0.0,
        });
    }

    let gram = prior.cov_matrix(ensemble.design())?;
    let (chol, jitter) = factor_with_jitter(gram, jitter)?;
    let residuals = ensemble.values() - prior.mean_vector(ensemble.design())?;
    let alpha = chol.solve(&residuals);
    Ok(EmulatorPosterior {
        prior,
        ensemble: ensemble.clone(),
        chol: Some(chol),
        alpha,
        jitter,
    })
}

fn factor_with_jitter(
    gram: DMatrix<f64>,
    jitter: Option<f64>,
) -> Result<(Cholesky<f64, nalgebra::Dyn>, f64)> {
    let n = gram.nrows();
    let max_diag = (0..n).map(|i| gram[(i, i)]).fold(0.0_f64, f64::max);
    let jitter = jitter.unwrap_or(DEFAULT_FIT_JITTER * max_diag.max(1.0));
    let mut jittered = gram.clone();
    for i in 0..n {
        jittered[(i, i)] += jitter;
    }
    match Cholesky::new(jittered) {
        Some(chol) => Ok((chol, jitter)),
        None => {
            let eig = SymmetricEigen::new(gram);
            Err(Error::Numerical {
                message: format!(
                    "conditioning Gram is not positive definite after jitter {jitter:.3e}"
                ),
                jitter: Some(jitter),
                worst_eigenvalue: Some(eig.eigenvalues.min()),
            })
        }
    }
}

/// GLS coefficient estimate against the residual kernel, plugged in as a
/// known mean (coefficient covariance collapses to zero).
fn plug_in_prior(
    prior: &EmulatorPrior,
    ensemble: &RunEnsemble,
    jitter: Option<f64>,
) -> Result<EmulatorPrior> {
    let k = prior.regression().len();
    if k == 0 || ensemble.is_empty() {
        return Ok(EmulatorPrior::separable(prior.residual().clone()));
    }
    let gram = prior.residual().gram(ensemble.design())?;
    let (chol, _) = factor_with_jitter(gram, jitter)?;
    let design_matrix = DMatrix::from_fn(ensemble.len(), k, |i, j| {
        prior.regression().regressors()[j].eval(&ensemble.design()[i])
    });
    let kinv_r = chol.solve(&design_matrix);
    let normal = design_matrix.transpose() * &kinv_r;
    let rhs = kinv_r.transpose() * ensemble.values();
    let estimate = normal.clone().lu().solve(&rhs).ok_or_else(|| {
        Error::numerical("regression design is rank deficient on this ensemble")
    })?;
    let regression = RegressionPrior::new(
        prior.regression().regressors().to_vec(),
        estimate,
        DMatrix::zeros(k, k),
    )?;
    EmulatorPrior::new(regression, prior.residual().clone())
}

impl EmulatorPosterior {
    pub fn prior(&self) -> &EmulatorPrior {
        &self.prior
    }

    pub fn ensemble(&self) -> &RunEnsemble {
        &self.ensemble
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn predict(&self, pts: &[Point]) -> Result<Prediction> {
        let mean_prior = self.prior.mean_vector(pts)?;
        let cov_prior = self.prior.cov_matrix(pts)?;
        let Some(chol) = &self.chol else {
            return Ok(Prediction {
                mean: mean_prior,
                covariance: cov_prior,
            });
        };
        let cross = self.prior.cov_between(pts, self.ensemble.design())?;
        let mean = mean_prior + &cross * &self.alpha;
        let solved = chol.solve(&cross.transpose());
        let mut covariance = cov_prior - &cross * solved;
        // Symmetrize away the last round-off.
        let sym = (&covariance + covariance.transpose()) * 0.5;
        covariance = sym;
        Ok(Prediction { mean, covariance })
    }

    pub fn predict_mean(&self, pts: &[Point]) -> Result<DVector<f64>> {
        let mean_prior = self.prior.mean_vector(pts)?;
        let Some(_) = &self.chol else {
            return Ok(mean_prior);
        };
        let cross = self.prior.cov_between(pts, self.ensemble.design())?;
        Ok(mean_prior + &cross * &self.alpha)
    }

    /// Writes `x1..xp,mean,sd` rows for the prediction set.
    pub fn write_posterior_csv(&self, pts: &[Point], out: &mut impl Write) -> Result<()> {
        let prediction = self.predict(pts)?;
        let sd = prediction.standard_deviations();
        let p = pts.first().map_or(0, Point::dim);
        let header: Vec<String> = (1..=p).map(|d| format!("x{d}")).collect();
        writeln!(out, "{},mean,sd", header.join(","))?;
        for (i, point) in pts.iter().enumerate() {
            let coords: Vec<String> = point.coords.iter().map(|c| c.to_string()).collect();
            writeln!(out, "{},{},{}", coords.join(","), prediction.mean[i], sd[i])?;
        }
        Ok(())
    }
}

// --- Kronecker-structured grids -------------------------------------------

/// A full factorial grid given by per-axis sorted node vectors.
#[derive(Debug, Clone)]
pub struct GridDesign {
    axis_points: Vec<Vec<f64>>,
}

impl GridDesign {
    pub fn new(axis_points: Vec<Vec<f64>>) -> Result<Self> {
        if axis_points.is_empty() {
            return Err(Error::Shape("grid needs at least one axis".into()));
        }
        for (d, axis) in axis_points.iter().enumerate() {
            if axis.is_empty() {
                return Err(Error::Shape(format!("axis {d} has no points")));
            }
            if axis.iter().any(|v| !v.is_finite()) {
                return Err(Error::Domain(format!("axis {d} has non-finite points")));
            }
            if axis.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(Error::Domain(format!(
                    "axis {d} must be strictly ascending"
                )));
            }
        }
        Ok(Self { axis_points })
    }

    /// Evenly spaced nodes covering each factor domain of a kernel.
    pub fn regular(kernel: &SeparableKernel, per_axis: &[usize]) -> Result<Self> {
        if per_axis.len() != kernel.dim() {
            return Err(Error::Shape(format!(
                "{} axis sizes for kernel dimension {}",
                per_axis.len(),
                kernel.dim()
            )));
        }
        let axes = kernel
            .factors()
            .iter()
            .zip(per_axis)
            .map(|(f, &n)| {
                let d: Interval = f.domain();
                crate::linspace(d.lo(), d.hi(), n)
            })
            .collect();
        Self::new(axes)
    }

    pub fn dim(&self) -> usize {
        self.axis_points.len()
    }

    pub fn axis_points(&self) -> &[Vec<f64>] {
        &self.axis_points
    }

    pub fn len(&self) -> usize {
        self.axis_points.iter().map(Vec::len).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All grid points in row-major order: the last axis varies fastest, so
    /// the Gram over these points is the Kronecker product of the per-axis
    /// Grams taken in axis order.
    pub fn points(&self) -> Vec<Point> {
        let sizes: Vec<usize> = self.axis_points.iter().map(Vec::len).collect();
        let total = self.len();
        let mut out = Vec::with_capacity(total);
        for flat in 0..total {
            let mut rem = flat;
            let mut coords = vec![0.0; sizes.len()];
            for d in (0..sizes.len()).rev() {
                coords[d] = self.axis_points[d][rem % sizes[d]];
                rem /= sizes[d];
            }
            out.push(Point::new(coords));
        }
        out
    }
}

/// Dense Kronecker product, used by tests and the separability diagnostics.
pub fn kron_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    DMatrix::from_fn(ar * br, ac * bc, |i, j| {
        a[(i / br, j / bc)] * b[(i % br, j % bc)]
    })
}

/// Gram matrix of one kernel factor over one axis.
pub fn axis_gram(kernel: &Kernel1D, xs: &[f64]) -> Result<DMatrix<f64>> {
    for &x in xs {
        if !kernel.domain().contains(x) {
            return Err(Error::Domain(format!(
                "axis point {x} outside factor domain [{}, {}]",
                kernel.domain().lo(),
                kernel.domain().hi()
            )));
        }
    }
    let n = xs.len();
    Ok(DMatrix::from_fn(n, n, |i, j| {
        kernel.eval_unchecked(xs[i], xs[j])
    }))
}

/// Applies `matrices[d]` along axis `d` of the row-major tensor `v`.
fn apply_axiswise(v: &DVector<f64>, sizes: &[usize], matrices: &[DMatrix<f64>]) -> DVector<f64> {
    let total = v.len();
    let mut data = v.clone();
    for d in (0..sizes.len()).rev() {
        let s = sizes[d];
        let rows = total / s;
        let m = DMatrix::from_row_slice(rows, s, data.as_slice());
        let applied = m * matrices[d].transpose();
        // Column-major read of `applied` is the row-major layout of its
        // transpose, i.e. the tensor with axes rotated by one.
        data = DVector::from_column_slice(applied.as_slice());
    }
    data
}

/// Solves (K_1 x K_2 x ... x K_p) z = rhs for a separable kernel observed
/// on a grid, using one symmetric eigendecomposition per axis instead of a
/// dense factorization of the full system.
pub fn kron_solve(
    grid: &GridDesign,
    kernel: &SeparableKernel,
    rhs: &DVector<f64>,
) -> Result<DVector<f64>> {
    if grid.dim() != kernel.dim() {
        return Err(Error::Shape(format!(
            "grid dimension {} does not match kernel dimension {}",
            grid.dim(),
            kernel.dim()
        )));
    }
    if rhs.len() != grid.len() {
        return Err(Error::Shape(format!(
            "rhs length {} does not match grid size {}",
            rhs.len(),
            grid.len()
        )));
    }
    let sizes: Vec<usize> = grid.axis_points().iter().map(Vec::len).collect();

    let mut rotations = Vec::with_capacity(grid.dim());
    let mut spectra = Vec::with_capacity(grid.dim());
    for (factor, axis) in kernel.factors().iter().zip(grid.axis_points()) {
        let gram = axis_gram(factor, axis)?;
        let max_diag = (0..axis.len()).map(|i| gram[(i, i)]).fold(0.0_f64, f64::max);
        let eig = SymmetricEigen::new(gram);
        let mut values = eig.eigenvalues;
        if values.min() <= 0.0 {
            let jitter = DEFAULT_FIT_JITTER * max_diag.max(1.0);
            values.add_scalar_mut(jitter);
            if values.min() <= 0.0 {
                return Err(Error::Numerical {
                    message: "axis Gram is singular even after jitter".into(),
                    jitter: Some(jitter),
                    worst_eigenvalue: Some(values.min() - jitter),
                });
            }
        }
        rotations.push(eig.eigenvectors);
        spectra.push(values);
    }

    let transposed: Vec<DMatrix<f64>> = rotations.iter().map(|q| q.transpose()).collect();
    let mut coeffs = apply_axiswise(rhs, &sizes, &transposed);

    for flat in 0..coeffs.len() {
        let mut rem = flat;
        let mut scale = 1.0;
        for d in (0..sizes.len()).rev() {
            scale *= spectra[d][rem % sizes[d]];
            rem /= sizes[d];
        }
        coeffs[flat] /= scale;
    }

    Ok(apply_axiswise(&coeffs, &sizes, &rotations))
}

/// Distance of a covariance matrix from the nearest Kronecker product,
/// via the rearrangement singular values: 1 - sigma_1^2 / sum sigma_k^2.
///
/// Zero exactly when `cov` is a Kronecker product of an m x m and an
/// n x n matrix; the composite index must be row-major with the n-axis
/// fastest, as produced by [`GridDesign::points`].
pub fn separability_residual(cov: &DMatrix<f64>, m: usize, n: usize) -> Result<f64> {
    let size = m * n;
    if cov.nrows() != size || cov.ncols() != size {
        return Err(Error::Shape(format!(
            "covariance is {}x{}, expected {size}x{size} for an {m}x{n} grid",
            cov.nrows(),
            cov.ncols()
        )));
    }
    let max_abs = cov.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    if max_abs == 0.0 {
        return Err(Error::numerical("covariance matrix is identically zero"));
    }
    for i in 0..size {
        for j in 0..i {
            if (cov[(i, j)] - cov[(j, i)]).abs() > 1e-8 * max_abs {
                return Err(Error::Shape("covariance matrix must be symmetric".into()));
            }
        }
    }

    // Van Loan rearrangement: rows indexed by (i, i'), columns by (j, j'),
    // R[(i, i'), (j, j')] = cov[(i, j), (i', j')].
    let rearranged = DMatrix::from_fn(m * m, n * n, |row, col| {
        let (i, i_prime) = (row / m, row % m);
        let (j, j_prime) = (col / n, col % n);
        cov[(i * n + j, i_prime * n + j_prime)]
    });
    let frobenius_sq: f64 = rearranged.iter().map(|v| v * v).sum();
    let svd = rearranged.svd(false, false);
    let sigma1 = svd.singular_values[0];
    Ok((1.0 - sigma1 * sigma1 / frobenius_sq).clamp(0.0, 1.0))
}
