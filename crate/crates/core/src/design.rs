//! Experimental designs and the axis-versus-LHD accuracy comparison.
//!
//! Designs live on the unit cube [0, 1]^p, matching the unit-interval
//! kernels used by the experiment harness. The harness draws truth
//! functions from the toolkit's own samplers (deliberately mirroring the
//! methodology it re-examines, plus nonseparable regression-augmented
//! truths), fits a separable-prior emulator on each design, and scores
//! normalized RMSE on held-out Monte Carlo test points.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::emulator::{fit, EmulatorPrior, Regressor, RunEnsemble};
use crate::error::{Error, Result};
use crate::kernel::{Interval, Kernel1D, Point, SeparableKernel};
use crate::rng::stream;
use crate::spectral::SpectralBasis;

const DESIGN_STREAM: u64 = 0x4447;
const TRUTH_STREAM: u64 = 0x5452;
const TEST_STREAM: u64 = 0x5453;

/// Family of a point set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignKind {
    Lhd,
    AxisAligned,
    FullGrid,
    MonteCarlo,
}

impl fmt::Display for DesignKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            DesignKind::Lhd => "lhd",
            DesignKind::AxisAligned => "axis",
            DesignKind::FullGrid => "grid",
            DesignKind::MonteCarlo => "monte_carlo",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone)]
pub struct DesignMeta {
    pub n: usize,
    pub p: usize,
    pub seed: Option<u64>,
    pub base_point: Option<Point>,
}

/// A point set on the unit cube.
#[derive(Debug, Clone)]
pub struct Design {
    pub kind: DesignKind,
    pub points: Vec<Point>,
    pub meta: DesignMeta,
}

/// Latin hypercube design: each one-dimensional projection occupies each of
/// the `n` equal bins exactly once. Stratified permutation construction with
/// uniform jitter inside each bin; deterministic under the seed.
pub fn lhd(n: usize, p: usize, seed: u64) -> Design {
    lhd_candidate(n, p, seed, 0)
}

fn lhd_candidate(n: usize, p: usize, seed: u64, candidate: u64) -> Design {
    let mut rng = stream(seed, &[DESIGN_STREAM, 0, candidate]);
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(p);
    for _ in 0..p {
        let mut bins: Vec<usize> = (0..n).collect();
        bins.shuffle(&mut rng);
        let column: Vec<f64> = bins
            .into_iter()
            .map(|bin| (bin as f64 + rng.gen::<f64>()) / n as f64)
            .collect();
        columns.push(column);
    }
    let points = (0..n)
        .map(|i| Point::new((0..p).map(|d| columns[d][i]).collect()))
        .collect();
    Design {
        kind: DesignKind::Lhd,
        points,
        meta: DesignMeta {
            n,
            p,
            seed: Some(seed),
            base_point: None,
        },
    }
}

/// Best of `candidates` Latin hypercubes by minimum pairwise distance.
/// Candidate zero is the plain [`lhd`] for the same seed, so the result
/// never has a smaller separation than the plain design.
pub fn lhd_maximin(n: usize, p: usize, seed: u64, candidates: usize) -> Design {
    let mut best: Option<(f64, Design)> = None;
    for c in 0..candidates.max(1) as u64 {
        let candidate = lhd_candidate(n, p, seed, c);
        let score = min_pairwise_distance(&candidate.points);
        if best.as_ref().map_or(true, |(s, _)| score > *s) {
            best = Some((score, candidate));
        }
    }
    best.expect("at least one candidate").1
}

/// Smallest Euclidean distance between two design points; infinity for
/// fewer than two points.
pub fn min_pairwise_distance(points: &[Point]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..points.len() {
        for j in 0..i {
            let d2: f64 = points[i]
                .coords
                .iter()
                .zip(&points[j].coords)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            best = best.min(d2.sqrt());
        }
    }
    best
}

/// Axis-aligned design: the base point plus `n_per_axis` single-coordinate
/// sweeps per axis, p * n_per_axis + 1 points in total. Sweep values sit at
/// bin midpoints; a value colliding with the base coordinate is shifted a
/// quarter bin so the point count is exact.
pub fn axis_design(n_per_axis: usize, p: usize, base: &Point) -> Result<Design> {
    if n_per_axis < 2 {
        return Err(Error::Range(format!(
            "axis design needs at least 2 points per axis, got {n_per_axis}"
        )));
    }
    if base.dim() != p {
        return Err(Error::Shape(format!(
            "base point has dimension {}, expected {p}",
            base.dim()
        )));
    }
    if base.coords.iter().any(|&c| !(0.0..=1.0).contains(&c)) {
        return Err(Error::Domain(format!(
            "base point {:?} outside the unit cube",
            base.coords
        )));
    }
    let mut points = vec![base.clone()];
    let bin = 1.0 / n_per_axis as f64;
    for axis in 0..p {
        for k in 0..n_per_axis {
            let mut value = (k as f64 + 0.5) * bin;
            if (value - base.coords[axis]).abs() < 1e-9 {
                value += 0.25 * bin;
            }
            let mut coords = base.coords.clone();
            coords[axis] = value;
            points.push(Point::new(coords));
        }
    }
    Ok(Design {
        kind: DesignKind::AxisAligned,
        points,
        meta: DesignMeta {
            n: p * n_per_axis + 1,
            p,
            seed: None,
            base_point: Some(base.clone()),
        },
    })
}

/// Full factorial grid with `per_axis` levels at bin midpoints.
pub fn full_grid(per_axis: usize, p: usize) -> Design {
    let levels: Vec<f64> = (0..per_axis)
        .map(|k| (k as f64 + 0.5) / per_axis as f64)
        .collect();
    let total = per_axis.pow(p as u32);
    let mut points = Vec::with_capacity(total);
    for flat in 0..total {
        let mut rem = flat;
        let mut coords = vec![0.0; p];
        for d in (0..p).rev() {
            coords[d] = levels[rem % per_axis];
            rem /= per_axis;
        }
        points.push(Point::new(coords));
    }
    Design {
        kind: DesignKind::FullGrid,
        points,
        meta: DesignMeta {
            n: total,
            p,
            seed: None,
            base_point: None,
        },
    }
}

/// Uniform Monte Carlo points.
pub fn monte_carlo(n: usize, p: usize, seed: u64) -> Design {
    let mut rng = stream(seed, &[DESIGN_STREAM, 1]);
    let points = (0..n)
        .map(|_| Point::new((0..p).map(|_| rng.gen::<f64>()).collect()))
        .collect();
    Design {
        kind: DesignKind::MonteCarlo,
        points,
        meta: DesignMeta {
            n,
            p,
            seed: Some(seed),
            base_point: None,
        },
    }
}

/// Where the harness draws its truth functions from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruthSource {
    /// Truncated KL expansion with a full coefficient tensor: a (truncated)
    /// Gaussian process with separable covariance.
    SeparableKl,
    /// Product of p independent 1-D expansions: second-order identical to
    /// the KL truth, different distribution.
    ProductProcess,
    /// KL residual plus random regression terms (constant, linear, and
    /// pairwise interactions) with positive coefficient variance: a
    /// nonseparable truth.
    RegressionPlusResidual,
}

impl fmt::Display for TruthSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            TruthSource::SeparableKl => "separable_kl",
            TruthSource::ProductProcess => "product_process",
            TruthSource::RegressionPlusResidual => "regression_plus_residual",
        };
        f.write_str(name)
    }
}

/// Harness configuration; deserializes from the experiment JSON config.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub p: usize,
    /// Runs per design; 0 is allowed as the no-data baseline.
    pub n_runs: usize,
    pub truth_source: TruthSource,
    pub replicates: usize,
    pub master_seed: u64,
    pub test_set_size: usize,
    pub designs: Vec<DesignKind>,
    /// Per-dimension truncation of the truth expansions.
    pub truncation: usize,
    /// Quadrature nodes for the spectral bases.
    pub nodes: usize,
    /// Standard deviation of the random regression coefficients.
    pub regression_scale: f64,
    /// Rate of the squared-exponential kernel on each axis.
    pub length_scale: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        // The default rate puts the truth in the regime where the axis
        // design genuinely competes on product-form truths (a kriging mean
        // reconstructs cross data additively, so very smooth truths leave
        // the cross far behind any space-filling design) while the
        // regression-augmented truths still show clear LHD superiority.
        Self {
            p: 2,
            n_runs: 20,
            truth_source: TruthSource::SeparableKl,
            replicates: 30,
            master_seed: 42,
            test_set_size: 500,
            designs: vec![DesignKind::Lhd, DesignKind::AxisAligned],
            truncation: 8,
            nodes: 64,
            regression_scale: 3.0,
            length_scale: 4.0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.p < 1 {
            return Err(Error::Range("p must be at least 1".into()));
        }
        if self.n_runs != 0 && self.n_runs < self.p + 1 {
            return Err(Error::Range(format!(
                "n_runs must be 0 (baseline) or at least p + 1 = {}",
                self.p + 1
            )));
        }
        if self.replicates < 10 {
            return Err(Error::Range("need at least 10 replicates".into()));
        }
        if self.test_set_size < 2 {
            return Err(Error::Range("test set needs at least 2 points".into()));
        }
        if self.designs.is_empty() {
            return Err(Error::Range("need at least one design kind".into()));
        }
        if self.truncation < 1 {
            return Err(Error::Range("truncation must be at least 1".into()));
        }
        Ok(())
    }
}

/// One replicate's accuracy for one design.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentCell {
    pub truth: TruthSource,
    pub design: DesignKind,
    pub n: usize,
    pub p: usize,
    pub replicate: usize,
    pub nrmse: f64,
    /// Solver failure; the cell is excluded from aggregates.
    pub failed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct DesignAggregate {
    pub truth: TruthSource,
    pub design: DesignKind,
    pub median_nrmse: f64,
    pub iqr_nrmse: f64,
    pub n_ok: usize,
    pub n_failed: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub cells: Vec<ExperimentCell>,
    pub aggregates: Vec<DesignAggregate>,
}

impl ExperimentReport {
    /// Long-format CSV with header `truth,design,n,p,replicate,nrmse`.
    pub fn write_csv(&self, out: &mut impl Write) -> Result<()> {
        writeln!(out, "truth,design,n,p,replicate,nrmse")?;
        for cell in &self.cells {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                cell.truth, cell.design, cell.n, cell.p, cell.replicate, cell.nrmse
            )?;
        }
        Ok(())
    }

    pub fn median_nrmse(&self, design: DesignKind) -> Option<f64> {
        self.aggregates
            .iter()
            .find(|a| a.design == design)
            .map(|a| a.median_nrmse)
    }

    /// Paired per-replicate nRMSE values for two designs, skipping failures.
    pub fn paired_nrmse(&self, a: DesignKind, b: DesignKind) -> Vec<(f64, f64)> {
        let pick = |kind: DesignKind, replicate: usize| {
            self.cells
                .iter()
                .find(|c| c.design == kind && c.replicate == replicate && !c.failed)
                .map(|c| c.nrmse)
        };
        let replicates = self
            .cells
            .iter()
            .map(|c| c.replicate)
            .max()
            .map_or(0, |m| m + 1);
        (0..replicates)
            .filter_map(|r| pick(a, r).zip(pick(b, r)))
            .collect()
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn quartile_range(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n < 4 {
        return f64::NAN;
    }
    let q = |f: f64| -> f64 {
        let idx = f * (n - 1) as f64;
        let lo = idx.floor() as usize;
        let hi = idx.ceil() as usize;
        let w = idx - lo as f64;
        values[lo] * (1.0 - w) + values[hi] * w
    };
    q(0.75) - q(0.25)
}

/// A truth function drawn for one replicate: regression terms plus a full
/// tensor KL expansion, or a product of 1-D expansions.
enum TruthFn {
    TensorKl {
        coeffs: Vec<f64>,
        betas: Vec<f64>,
        regressors: Vec<Regressor>,
    },
    Product {
        coeffs: Vec<DVector<f64>>,
    },
}

struct TruthSampler {
    bases: Vec<Arc<SpectralBasis>>,
    truncation: usize,
}

impl TruthSampler {
    fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let kernel =
            Kernel1D::squared_exponential(1.0, cfg.length_scale, Interval::unit())?;
        let basis = Arc::new(SpectralBasis::decompose(&kernel, cfg.nodes, cfg.nodes)?);
        Ok(Self {
            bases: vec![basis; cfg.p],
            truncation: cfg.truncation,
        })
    }

    fn regressors(p: usize) -> Vec<Regressor> {
        let mut out = vec![Regressor::Constant];
        out.extend((0..p).map(Regressor::Linear));
        for a in 0..p {
            for b in (a + 1)..p {
                out.push(Regressor::CrossProduct(a, b));
            }
        }
        out
    }

    fn draw(&self, cfg: &ExperimentConfig, replicate: usize) -> TruthFn {
        let mut rng = stream(cfg.master_seed, &[TRUTH_STREAM, replicate as u64]);
        let n = self.truncation;
        let p = self.bases.len();
        match cfg.truth_source {
            TruthSource::ProductProcess => {
                let coeffs = (0..p)
                    .map(|_| {
                        DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
                    })
                    .collect();
                TruthFn::Product { coeffs }
            }
            TruthSource::SeparableKl | TruthSource::RegressionPlusResidual => {
                let coeffs = (0..n.pow(p as u32))
                    .map(|_| rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let (betas, regressors) =
                    if cfg.truth_source == TruthSource::RegressionPlusResidual {
                        let regressors = Self::regressors(p);
                        let betas = regressors
                            .iter()
                            .map(|_| {
                                cfg.regression_scale * rng.sample::<f64, _>(StandardNormal)
                            })
                            .collect();
                        (betas, regressors)
                    } else {
                        (Vec::new(), Vec::new())
                    };
                TruthFn::TensorKl {
                    coeffs,
                    betas,
                    regressors,
                }
            }
        }
    }

    fn eval(&self, truth: &TruthFn, point: &Point) -> f64 {
        let n = self.truncation;
        let p = self.bases.len();
        let scaled: Vec<DVector<f64>> = (0..p)
            .map(|d| {
                self.bases[d]
                    .scaled_eigenfunctions_at(point.coords[d], n)
                    .expect("experiment points stay inside the unit cube")
            })
            .collect();
        match truth {
            TruthFn::Product { coeffs } => (0..p)
                .map(|d| scaled[d].dot(&coeffs[d]))
                .product(),
            TruthFn::TensorKl {
                coeffs,
                betas,
                regressors,
            } => {
                let mut total = 0.0;
                for (flat, z) in coeffs.iter().enumerate() {
                    let mut rem = flat;
                    let mut term = *z;
                    for d in (0..p).rev() {
                        term *= scaled[d][rem % n];
                        rem /= n;
                    }
                    total += term;
                }
                for (beta, regressor) in betas.iter().zip(regressors) {
                    total += beta * regressor.eval(point);
                }
                total
            }
        }
    }
}

fn design_for(cfg: &ExperimentConfig, kind: DesignKind, replicate: usize) -> Result<Design> {
    if cfg.n_runs == 0 {
        return Ok(Design {
            kind,
            points: Vec::new(),
            meta: DesignMeta {
                n: 0,
                p: cfg.p,
                seed: Some(cfg.master_seed),
                base_point: None,
            },
        });
    }
    let kind_id = match kind {
        DesignKind::Lhd => 0u64,
        DesignKind::AxisAligned => 1,
        DesignKind::FullGrid => 2,
        DesignKind::MonteCarlo => 3,
    };
    let seed = crate::rng::derive_seed(
        cfg.master_seed,
        &[DESIGN_STREAM, replicate as u64, kind_id],
    );
    match kind {
        DesignKind::Lhd => Ok(lhd(cfg.n_runs, cfg.p, seed)),
        DesignKind::MonteCarlo => Ok(monte_carlo(cfg.n_runs, cfg.p, seed)),
        DesignKind::FullGrid => {
            let per_axis = (cfg.n_runs as f64)
                .powf(1.0 / cfg.p as f64)
                .round()
                .max(2.0) as usize;
            Ok(full_grid(per_axis, cfg.p))
        }
        DesignKind::AxisAligned => {
            // Round the sweep size up so the axis design is never starved
            // relative to the target run count.
            let n_per_axis = ((cfg.n_runs - 1) as f64 / cfg.p as f64).ceil().max(2.0) as usize;
            let base = Point::new(vec![0.5; cfg.p]);
            axis_design(n_per_axis, cfg.p, &base)
        }
    }
}

/// Runs the replicated comparison: draw a truth, evaluate it on each
/// design, fit a zero-mean separable-prior emulator, and score normalized
/// RMSE on a fresh Monte Carlo test set. Solver failures are recorded per
/// cell rather than aborting the experiment.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let sampler = TruthSampler::new(cfg)?;
    let prior_kernel = SeparableKernel::squared_exponential(
        1.0,
        &vec![cfg.length_scale; cfg.p],
        &vec![Interval::unit(); cfg.p],
    )?;
    let prior = EmulatorPrior::separable(prior_kernel);

    let replicate_cells: Vec<Vec<ExperimentCell>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|replicate| {
            let truth = sampler.draw(cfg, replicate);
            let mut test_rng = stream(cfg.master_seed, &[TEST_STREAM, replicate as u64]);
            let test_points: Vec<Point> = (0..cfg.test_set_size)
                .map(|_| Point::new((0..cfg.p).map(|_| test_rng.gen::<f64>()).collect()))
                .collect();
            let test_values: Vec<f64> = test_points
                .iter()
                .map(|point| sampler.eval(&truth, point))
                .collect();
            let mean = test_values.iter().sum::<f64>() / test_values.len() as f64;
            let sd = (test_values
                .iter()
                .map(|v| (v - mean) * (v - mean))
                .sum::<f64>()
                / (test_values.len() - 1) as f64)
                .sqrt();

            cfg.designs
                .iter()
                .map(|&kind| {
                    let cell = run_cell(
                        cfg, &sampler, &truth, &prior, kind, replicate, &test_points,
                        &test_values, sd,
                    );
                    cell.unwrap_or(ExperimentCell {
                        truth: cfg.truth_source,
                        design: kind,
                        n: cfg.n_runs,
                        p: cfg.p,
                        replicate,
                        nrmse: f64::NAN,
                        failed: true,
                    })
                })
                .collect()
        })
        .collect();

    let cells: Vec<ExperimentCell> = replicate_cells.into_iter().flatten().collect();
    let mut aggregates = Vec::new();
    for &kind in &cfg.designs {
        let mut ok: Vec<f64> = cells
            .iter()
            .filter(|c| c.design == kind && !c.failed)
            .map(|c| c.nrmse)
            .collect();
        let n_failed = cells.iter().filter(|c| c.design == kind && c.failed).count();
        aggregates.push(DesignAggregate {
            truth: cfg.truth_source,
            design: kind,
            median_nrmse: median(&mut ok),
            iqr_nrmse: quartile_range(&mut ok),
            n_ok: ok.len(),
            n_failed,
        });
    }
    Ok(ExperimentReport { cells, aggregates })
}

#[allow(clippy::too_many_arguments)]
fn run_cell(
    cfg: &ExperimentConfig,
    sampler: &TruthSampler,
    truth: &TruthFn,
    prior: &EmulatorPrior,
    kind: DesignKind,
    replicate: usize,
    test_points: &[Point],
    test_values: &[f64],
    truth_sd: f64,
) -> Result<ExperimentCell> {
    if truth_sd < 1e-12 {
        return Err(Error::numerical("degenerate truth draw"));
    }
    let design = design_for(cfg, kind, replicate)?;
    let run_values = DVector::from_vec(
        design
            .points
            .iter()
            .map(|point| sampler.eval(truth, point))
            .collect::<Vec<f64>>(),
    );
    let ensemble = RunEnsemble::new(design.points.clone(), run_values)?;
    let posterior = fit(prior, &ensemble, None)?;
    let predictions = posterior.predict_mean(test_points)?;
    let mse = test_values
        .iter()
        .enumerate()
        .map(|(i, &truth_value)| {
            let err = predictions[i] - truth_value;
            err * err
        })
        .sum::<f64>()
        / test_values.len() as f64;
    Ok(ExperimentCell {
        truth: cfg.truth_source,
        design: kind,
        n: design.points.len(),
        p: cfg.p,
        replicate,
        nrmse: mse.sqrt() / truth_sd,
        failed: false,
    })
}

/// One-sided sign test: p-value for the hypothesis that `a` tends to be
/// smaller than `b`, from the count of paired wins. Ties are dropped.
pub fn sign_test_less(pairs: &[(f64, f64)]) -> f64 {
    let mut n = 0usize;
    let mut wins = 0usize;
    for &(a, b) in pairs {
        if a < b {
            wins += 1;
            n += 1;
        } else if a > b {
            n += 1;
        }
    }
    if n == 0 {
        return 1.0;
    }
    // P[Bin(n, 1/2) >= wins]
    let mut log_binom = 0.0_f64;
    let ln2 = std::f64::consts::LN_2;
    let mut tail = 0.0;
    // Walk k = 0..=n accumulating C(n, k); sum the tail from `wins` up.
    for k in 0..=n {
        if k > 0 {
            log_binom += ((n - k + 1) as f64).ln() - (k as f64).ln();
        }
        if k >= wins {
            tail += (log_binom - n as f64 * ln2).exp();
        }
    }
    tail.min(1.0)
}

/// Rows of the n = 10p sweep: nRMSE against the run multiplier for both a
/// separable and a nonseparable truth source.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub truth: TruthSource,
    pub design: DesignKind,
    pub p: usize,
    pub multiplier: usize,
    pub n: usize,
    pub replicate: usize,
    pub nrmse: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn write_csv(&self, out: &mut impl Write) -> Result<()> {
        writeln!(out, "truth,design,p,multiplier,n,replicate,nrmse")?;
        for row in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                row.truth, row.design, row.p, row.multiplier, row.n, row.replicate, row.nrmse
            )?;
        }
        Ok(())
    }

    pub fn median_nrmse(
        &self,
        truth: TruthSource,
        design: DesignKind,
        p: usize,
        multiplier: usize,
    ) -> Option<f64> {
        let mut values: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| {
                r.truth == truth
                    && r.design == design
                    && r.p == p
                    && r.multiplier == multiplier
                    && r.nrmse.is_finite()
            })
            .map(|r| r.nrmse)
            .collect();
        if values.is_empty() {
            None
        } else {
            Some(median(&mut values))
        }
    }
}

/// Multipliers accepted by [`n10p_sweep`].
pub const ALLOWED_MULTIPLIERS: [usize; 4] = [2, 5, 10, 20];

/// Sweeps run count n = multiplier * p over the requested dimensions for
/// both truth regimes, reusing the base configuration for everything else.
pub fn n10p_sweep(
    p_values: &[usize],
    multipliers: &[usize],
    base: &ExperimentConfig,
) -> Result<SweepTable> {
    for &m in multipliers {
        if !ALLOWED_MULTIPLIERS.contains(&m) {
            return Err(Error::Range(format!(
                "multiplier {m} not in {ALLOWED_MULTIPLIERS:?}"
            )));
        }
    }
    let mut rows = Vec::new();
    for &p in p_values {
        for &multiplier in multipliers {
            for truth in [TruthSource::SeparableKl, TruthSource::RegressionPlusResidual] {
                let cfg = ExperimentConfig {
                    p,
                    n_runs: multiplier * p,
                    truth_source: truth,
                    ..base.clone()
                };
                let report = run_experiment(&cfg)?;
                rows.extend(report.cells.into_iter().map(|cell| SweepRow {
                    truth: cell.truth,
                    design: cell.design,
                    p: cell.p,
                    multiplier,
                    n: cell.n,
                    replicate: cell.replicate,
                    nrmse: cell.nrmse,
                }));
            }
        }
    }
    Ok(SweepTable { rows })
}
