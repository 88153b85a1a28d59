//! Probit maximum likelihood with separation handling.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::normal::{chi2_1_sf, inverse_mills, log_cdf};
use super::AnalysisError;

pub const MAX_ITERATIONS: usize = 100;
pub const GRADIENT_TOLERANCE: f64 = 1e-8;
/// Fitted probabilities closer than this to the observed outcome count as
/// perfectly predicted.
pub const PERFECT_PREDICTION_TOLERANCE: f64 = 1e-8;
/// Coefficients beyond this magnitude with a still-rising likelihood are
/// treated as diverging.
pub const DIVERGENCE_BOUND: f64 = 10.0;
const MAX_HALVINGS: usize = 50;
const COLLINEARITY_TOLERANCE: f64 = 1e-9;
/// Relative likelihood change below floating-point resolution; near the
/// optimum a Newton step may appear to lose this much to rounding alone.
pub const LL_ROUNDING: f64 = 1e-13;

/// A probit design: named regressors, one row per observation, binary outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub columns: Vec<String>,
    pub x: DMatrix<f64>,
    pub y: Vec<f64>,
}

impl Design {
    pub fn new(columns: Vec<String>, rows: &[Vec<f64>], y: Vec<f64>) -> Result<Self, AnalysisError> {
        if rows.len() != y.len() {
            return Err(AnalysisError::Input(format!(
                "{} design rows but {} outcomes",
                rows.len(),
                y.len()
            )));
        }
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != columns.len()) {
            return Err(AnalysisError::Input(format!(
                "row {i} has {} entries, expected {}",
                r.len(),
                columns.len()
            )));
        }
        let x = DMatrix::from_fn(rows.len(), columns.len(), |i, j| rows[i][j]);
        Ok(Self { columns, x, y })
    }

    pub fn nrows(&self) -> usize {
        self.x.nrows()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Keeps only the listed columns, in the given order.
    pub fn select_columns(&self, keep: &[usize]) -> Design {
        Design {
            columns: keep.iter().map(|&j| self.columns[j].clone()).collect(),
            x: self.x.select_columns(keep.iter()),
            y: self.y.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbitFit {
    pub columns: Vec<String>,
    /// `None` for coefficients that are not estimable (dropped because of
    /// separation or collinearity among the remaining observations).
    pub coefficients: Vec<Option<f64>>,
    pub standard_errors: Vec<Option<f64>>,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Gradient ∞-norm at the final estimate; `None` when nothing was fit.
    pub gradient_norm: Option<f64>,
    pub separation_detected: bool,
    /// Observations dropped as perfectly predicted.
    pub perfectly_predicted: usize,
    pub n_obs: usize,
    /// Inverse observed information over all columns; `None` where a
    /// column was dropped.
    pub covariance: Vec<Vec<Option<f64>>>,
}

impl ProbitFit {
    pub fn is_estimable(&self, index: usize) -> bool {
        self.converged && self.coefficients.get(index).copied().flatten().is_some()
    }

    pub fn dropped_columns(&self) -> Vec<&str> {
        self.columns
            .iter()
            .zip(&self.coefficients)
            .filter(|(_, c)| c.is_none())
            .map(|(n, _)| n.as_str())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaldTest {
    pub estimate: f64,
    pub standard_error: f64,
    pub z: f64,
    pub chi2: f64,
    pub p: f64,
}

/// Indices of columns that are linear combinations of earlier columns
/// (modified Gram-Schmidt; all-zero columns count as dependent).
pub fn collinear_columns(x: &DMatrix<f64>) -> Vec<usize> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut dependent = Vec::new();
    for j in 0..x.ncols() {
        let original = x.column(j).into_owned();
        let scale = original.norm();
        let mut v = original;
        for q in &basis {
            let proj = q.dot(&v);
            v.axpy(-proj, q, 1.0);
        }
        let norm = v.norm();
        if scale == 0.0 || norm <= COLLINEARITY_TOLERANCE * scale {
            dependent.push(j);
        } else {
            basis.push(v / norm);
        }
    }
    dependent
}

struct Evaluation {
    ll: f64,
    gradient: DVector<f64>,
    information: DMatrix<f64>,
}

fn log_likelihood(x: &DMatrix<f64>, y: &[f64], beta: &DVector<f64>) -> f64 {
    let eta = x * beta;
    eta.iter()
        .zip(y)
        .map(|(&e, &yi)| log_cdf(if yi > 0.5 { e } else { -e }))
        .sum()
}

fn evaluate(x: &DMatrix<f64>, y: &[f64], beta: &DVector<f64>) -> Evaluation {
    let k = x.ncols();
    let eta = x * beta;
    let mut ll = 0.0;
    let mut gradient = DVector::zeros(k);
    let mut information = DMatrix::zeros(k, k);
    for i in 0..x.nrows() {
        let q = if y[i] > 0.5 { 1.0 } else { -1.0 };
        let qe = q * eta[i];
        ll += log_cdf(qe);
        let lambda = q * inverse_mills(qe);
        let w = lambda * (lambda + eta[i]);
        let row = x.row(i);
        for a in 0..k {
            gradient[a] += lambda * row[a];
            let wa = w * row[a];
            if wa != 0.0 {
                for b in a..k {
                    information[(a, b)] += wa * row[b];
                }
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            information[(a, b)] = information[(b, a)];
        }
    }
    Evaluation { ll, gradient, information }
}

struct NewtonOutcome {
    beta: DVector<f64>,
    ll: f64,
    gradient_norm: f64,
    iterations: usize,
    converged: bool,
    /// Likelihood gain of the final accepted step.
    last_gain: f64,
    information: DMatrix<f64>,
}

fn newton(x: &DMatrix<f64>, y: &[f64]) -> NewtonOutcome {
    let k = x.ncols();
    let mut beta = DVector::zeros(k);
    let mut eval = evaluate(x, y, &beta);
    let mut iterations = 0;
    let mut converged = false;
    let mut last_gain = f64::INFINITY;
    loop {
        if eval.gradient.amax() < GRADIENT_TOLERANCE {
            converged = true;
            break;
        }
        if iterations >= MAX_ITERATIONS {
            break;
        }
        let Some(chol) = eval.information.clone().cholesky() else {
            break;
        };
        let step = chol.solve(&eval.gradient);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let candidate = &beta + &step * t;
            let ll = log_likelihood(x, y, &candidate);
            if ll.is_finite() && ll >= eval.ll - LL_ROUNDING * (1.0 + eval.ll.abs()) {
                accepted = Some(candidate);
                break;
            }
            t *= 0.5;
        }
        iterations += 1;
        let Some(next) = accepted else { break };
        let next_eval = evaluate(x, y, &next);
        last_gain = next_eval.ll - eval.ll;
        beta = next;
        eval = next_eval;
    }
    NewtonOutcome {
        gradient_norm: eval.gradient.amax(),
        beta,
        ll: eval.ll,
        iterations,
        converged,
        last_gain,
        information: eval.information,
    }
}

/// Rows whose fitted probability is within tolerance of the observed outcome.
fn perfectly_predicted(x: &DMatrix<f64>, y: &[f64], beta: &DVector<f64>) -> Vec<bool> {
    let eta = x * beta;
    eta.iter()
        .zip(y)
        .map(|(&e, &yi)| {
            let q = if yi > 0.5 { e } else { -e };
            // 1 - Φ(q·η) < tol
            super::normal::sf(q) < PERFECT_PREDICTION_TOLERANCE
        })
        .collect()
}

/// Fits `P(y = 1 | x) = Φ(xβ)` by Newton-Raphson with step halving.
///
/// Separation is detected either from perfectly predicted observations that
/// leave the remaining design rank deficient, or from coefficients that keep
/// growing past [`DIVERGENCE_BOUND`] while the likelihood still improves.
/// Perfectly predicted observations are then removed, the columns they
/// identified are marked non-estimable, and the model is refit on the rest.
pub fn probit_fit(design: &Design) -> Result<ProbitFit, AnalysisError> {
    let n = design.nrows();
    let k = design.columns.len();
    if n == 0 {
        return Err(AnalysisError::Input("probit needs at least one observation".into()));
    }
    if k == 0 {
        return Err(AnalysisError::Input("probit needs at least one regressor".into()));
    }
    if design.y.len() != n {
        return Err(AnalysisError::Input(format!("{n} design rows but {} outcomes", design.y.len())));
    }
    if let Some(i) = design.y.iter().position(|&v| v != 0.0 && v != 1.0) {
        return Err(AnalysisError::Input(format!("outcome {i} is {} (must be 0 or 1)", design.y[i])));
    }
    if let Some(i) = design.x.iter().position(|v| !v.is_finite()) {
        return Err(AnalysisError::Input(format!("design entry {i} is not finite")));
    }
    let dependent = collinear_columns(&design.x);
    if !dependent.is_empty() {
        let names: Vec<&str> = dependent.iter().map(|&j| design.columns[j].as_str()).collect();
        return Err(AnalysisError::RankDeficient(names.join(", ")));
    }

    let mut rows: Vec<usize> = (0..n).collect();
    let mut cols: Vec<usize> = (0..k).collect();
    let mut separation = false;
    let mut dropped_ll = 0.0;

    loop {
        if rows.is_empty() || cols.is_empty() {
            return Ok(non_estimable(design, separation, n - rows.len(), dropped_ll));
        }
        let x = design.x.select_rows(rows.iter()).select_columns(cols.iter());
        let y: Vec<f64> = rows.iter().map(|&i| design.y[i]).collect();
        let fit = newton(&x, &y);

        let perfect = perfectly_predicted(&x, &y, &fit.beta);
        let keep_rows: Vec<usize> = (0..rows.len()).filter(|&i| !perfect[i]).collect();
        let diverging = fit.beta.amax() > DIVERGENCE_BOUND && fit.last_gain > 0.0;

        if keep_rows.len() < rows.len() {
            let reduced = x.select_rows(keep_rows.iter());
            let lost = collinear_columns(&reduced);
            if !lost.is_empty() || keep_rows.is_empty() {
                separation = true;
                dropped_ll += (0..rows.len())
                    .filter(|&i| perfect[i])
                    .map(|i| log_cdf(if y[i] > 0.5 { 1.0 } else { -1.0 } * (x.row(i) * &fit.beta)[0]))
                    .sum::<f64>();
                rows = keep_rows.iter().map(|&i| rows[i]).collect();
                cols = (0..cols.len()).filter(|j| !lost.contains(j)).map(|j| cols[j]).collect();
                continue;
            }
        }
        if diverging {
            separation = true;
            let before = cols.len();
            cols = (0..cols.len())
                .filter(|&j| fit.beta[j].abs() <= DIVERGENCE_BOUND)
                .map(|j| cols[j])
                .collect();
            if cols.len() < before {
                continue;
            }
        }
        return Ok(assemble(design, &cols, &fit, separation, n - rows.len(), dropped_ll));
    }
}

fn non_estimable(design: &Design, separation: bool, dropped: usize, ll: f64) -> ProbitFit {
    let k = design.columns.len();
    ProbitFit {
        columns: design.columns.clone(),
        coefficients: vec![None; k],
        standard_errors: vec![None; k],
        log_likelihood: ll,
        iterations: 0,
        converged: false,
        gradient_norm: None,
        separation_detected: separation,
        perfectly_predicted: dropped,
        n_obs: design.nrows(),
        covariance: vec![vec![None; k]; k],
    }
}

fn assemble(
    design: &Design,
    cols: &[usize],
    fit: &NewtonOutcome,
    separation: bool,
    dropped: usize,
    dropped_ll: f64,
) -> ProbitFit {
    let k = design.columns.len();
    let mut coefficients = vec![None; k];
    let mut standard_errors = vec![None; k];
    let mut covariance = vec![vec![None; k]; k];
    let inverse = fit.information.clone().try_inverse();
    for (a, &ca) in cols.iter().enumerate() {
        coefficients[ca] = Some(fit.beta[a]);
        if let Some(inv) = &inverse {
            let var = inv[(a, a)];
            if var > 0.0 {
                standard_errors[ca] = Some(var.sqrt());
            }
            for (b, &cb) in cols.iter().enumerate() {
                covariance[ca][cb] = Some(0.5 * (inv[(a, b)] + inv[(b, a)]));
            }
        }
    }
    ProbitFit {
        columns: design.columns.clone(),
        coefficients,
        standard_errors,
        log_likelihood: fit.ll + dropped_ll,
        iterations: fit.iterations,
        converged: fit.converged && inverse.is_some(),
        gradient_norm: Some(fit.gradient_norm),
        separation_detected: separation,
        perfectly_predicted: dropped,
        n_obs: design.nrows(),
        covariance,
    }
}

/// Drops columns that are empty or collinear in the observed sample (for
/// example a wait-time cell nobody reached), fits the rest, and reports the
/// dropped columns as non-estimable.
pub fn probit_fit_pruned(design: &Design) -> Result<ProbitFit, AnalysisError> {
    let dependent = collinear_columns(&design.x);
    if dependent.is_empty() {
        return probit_fit(design);
    }
    let keep: Vec<usize> = (0..design.columns.len()).filter(|j| !dependent.contains(j)).collect();
    let k = design.columns.len();
    if keep.is_empty() {
        return Ok(non_estimable(design, false, 0, 0.0));
    }
    let inner = probit_fit(&design.select_columns(&keep))?;
    let mut coefficients = vec![None; k];
    let mut standard_errors = vec![None; k];
    let mut covariance = vec![vec![None; k]; k];
    for (a, &ca) in keep.iter().enumerate() {
        coefficients[ca] = inner.coefficients[a];
        standard_errors[ca] = inner.standard_errors[a];
        for (b, &cb) in keep.iter().enumerate() {
            covariance[ca][cb] = inner.covariance[a][b];
        }
    }
    Ok(ProbitFit {
        columns: design.columns.clone(),
        coefficients,
        standard_errors,
        covariance,
        ..inner
    })
}

/// Wald test of a single coefficient against zero.
pub fn wald_test(fit: &ProbitFit, index: usize) -> Result<WaldTest, AnalysisError> {
    let name = fit
        .columns
        .get(index)
        .ok_or_else(|| AnalysisError::Input(format!("no coefficient with index {index}")))?;
    let (Some(estimate), Some(standard_error)) = (fit.coefficients[index], fit.standard_errors[index]) else {
        return Err(AnalysisError::NotEstimable(format!(
            "`{name}` is not estimable (separation or collinearity)"
        )));
    };
    if !fit.converged {
        return Err(AnalysisError::NotEstimable(format!(
            "probit did not converge; `{name}` has no valid test"
        )));
    }
    let z = estimate / standard_error;
    let chi2 = z * z;
    Ok(WaldTest {
        estimate,
        standard_error,
        z,
        chi2,
        p: chi2_1_sf(chi2),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::normal;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn intercept_only(y: Vec<f64>) -> Design {
        let rows = vec![vec![1.0]; y.len()];
        Design::new(vec!["const".into()], &rows, y).unwrap()
    }

    #[test]
    fn intercept_only_recovers_quantile_of_mean() {
        let fit = probit_fit(&intercept_only(vec![0.0, 1.0, 1.0, 0.0])).unwrap();
        assert!(fit.converged);
        assert!(fit.coefficients[0].unwrap().abs() < 1e-8);

        let y: Vec<f64> = (0..10).map(|i| if i < 3 { 1.0 } else { 0.0 }).collect();
        let fit = probit_fit(&intercept_only(y)).unwrap();
        let want = normal::quantile(0.3).unwrap();
        assert!((fit.coefficients[0].unwrap() - want).abs() < 1e-8);
        assert!(fit.gradient_norm.unwrap() < GRADIENT_TOLERANCE);
    }

    #[test]
    fn all_ones_is_separated() {
        let fit = probit_fit(&intercept_only(vec![1.0; 20])).unwrap();
        assert!(fit.separation_detected);
        assert!(!fit.is_estimable(0));
        assert!(wald_test(&fit, 0).is_err());
    }

    #[test]
    fn rank_deficient_design_names_columns() {
        let rows = vec![vec![1.0, 2.0, 0.0], vec![1.0, 2.0, 1.0], vec![1.0, 2.0, 0.0]];
        let d = Design::new(vec!["a".into(), "b".into(), "c".into()], &rows, vec![0.0, 1.0, 1.0]).unwrap();
        match probit_fit(&d) {
            Err(AnalysisError::RankDeficient(names)) => assert_eq!(names, "b"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_non_binary_outcomes() {
        assert!(probit_fit(&intercept_only(vec![0.0, 0.5])).is_err());
        assert!(probit_fit(&intercept_only(vec![])).is_err());
    }

    fn synthetic(n: usize, seed: u64) -> Design {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let beta = [0.3, -0.5, 0.8];
        let mut rows = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let x1: f64 = rng.gen_range(-2.0..2.0);
            let x2: f64 = if rng.gen_bool(0.5) { 1.0 } else { 0.0 };
            let eta = beta[0] + beta[1] * x1 + beta[2] * x2;
            y.push(if rng.gen::<f64>() < normal::cdf(eta) { 1.0 } else { 0.0 });
            rows.push(vec![1.0, x1, x2]);
        }
        Design::new(vec!["const".into(), "x1".into(), "x2".into()], &rows, y).unwrap()
    }

    #[test]
    fn likelihood_never_decreases_and_wald_matches_z() {
        let d = synthetic(800, 3);
        let fit = probit_fit(&d).unwrap();
        assert!(fit.converged && !fit.separation_detected);
        let ll0 = log_likelihood(&d.x, &d.y, &DVector::zeros(3));
        assert!(fit.log_likelihood >= ll0);
        for j in 0..3 {
            let w = wald_test(&fit, j).unwrap();
            let z = fit.coefficients[j].unwrap() / fit.standard_errors[j].unwrap();
            assert!((w.chi2 - z * z).abs() < 1e-10);
        }
        let cov = &fit.covariance;
        for a in 0..3 {
            for b in 0..3 {
                assert_eq!(cov[a][b], cov[b][a]);
            }
        }
    }

    #[test]
    fn duplication_scales_standard_errors() {
        let d = synthetic(600, 9);
        let fit = probit_fit(&d).unwrap();
        let mut rows: Vec<Vec<f64>> = (0..d.nrows()).map(|i| d.x.row(i).iter().copied().collect()).collect();
        rows.extend(rows.clone());
        let mut y = d.y.clone();
        y.extend(d.y.clone());
        let doubled = probit_fit(&Design::new(d.columns.clone(), &rows, y).unwrap()).unwrap();
        for j in 0..3 {
            assert!((fit.coefficients[j].unwrap() - doubled.coefficients[j].unwrap()).abs() < 1e-6);
            let ratio = doubled.standard_errors[j].unwrap() / fit.standard_errors[j].unwrap();
            assert!((ratio - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-6);
        }
    }

    #[test]
    fn quasi_separated_cell_drops_only_its_column() {
        // group dummy g2 has only zeros: its coefficient diverges, the rest stay estimable
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for i in 0..600 {
            let g = i % 3;
            rows.push(vec![1.0, (g == 1) as u8 as f64, (g == 2) as u8 as f64]);
            let yi = match g {
                2 => 0.0,
                1 => rng.gen_bool(0.7) as u8 as f64,
                _ => rng.gen_bool(0.4) as u8 as f64,
            };
            y.push(yi);
        }
        let d = Design::new(vec!["const".into(), "g1".into(), "g2".into()], &rows, y).unwrap();
        let fit = probit_fit(&d).unwrap();
        assert!(fit.separation_detected);
        assert_eq!(fit.dropped_columns(), vec!["g2"]);
        assert!(fit.is_estimable(0) && fit.is_estimable(1), "{fit:#?}");
        assert_eq!(fit.perfectly_predicted, 200);
    }
}
