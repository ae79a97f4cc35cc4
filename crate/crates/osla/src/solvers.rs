//! Greedy sparse-recovery solvers and their stability diagnostics.
//!
//! Both solvers run a fixed iteration budget from `x0 = 0` and return a
//! K-sparse estimate: IHT alternates a gradient step with hard thresholding,
//! HTP selects a support from the gradient step and refits it by exact least
//! squares. The stability contract they are measured against is
//! `||u_hat - u|| <= 2^-tau ||u|| + kappa ||e||` on `b = phi u + e`.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{dot, norm_sq, DenseVector, MeasurementMatrix, SparseVector};
use crate::rng::{sample_gaussian_matrix, RngStream};

/// The greedy algorithms admissible as `ALG`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    Iht,
    Htp,
}

impl SolverKind {
    pub fn name(&self) -> &'static str {
        match self {
            SolverKind::Iht => "iht",
            SolverKind::Htp => "htp",
        }
    }
}

/// Step size for the gradient step inside IHT/HTP.
///
/// `Fixed(1.0)` is the textbook unit step and works when the restricted
/// spectrum of `phi` is close to 1. `Normalized` recomputes the step each
/// iteration as `||g_S||^2 / ||phi g_S||^2` with `S` the current support,
/// which keeps the iteration contractive on matrices whose restricted
/// eigenvalues stray far from 1 (the normalized-IHT step rule).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepRule {
    Fixed(f64),
    Normalized,
}

impl StepRule {
    fn validate(&self) -> Result<()> {
        match self {
            StepRule::Fixed(s) if !(*s > 0.0) || !s.is_finite() => Err(Error::InvalidArgument(
                format!("step must be positive and finite, got {s}"),
            )),
            _ => Ok(()),
        }
    }
}

/// Outcome of one solver invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverRun {
    pub estimate: SparseVector,
    /// Requested iteration budget. HTP may freeze its iterate early when the
    /// selected support repeats, but still reports the requested budget.
    pub iterations_used: u32,
    /// `||x_i - u||` after each iteration; populated only when ground truth
    /// was supplied.
    pub per_iteration_error: Option<Vec<f64>>,
}

/// Keeps the `k` entries of `coeffs` largest in absolute value, zeroing the
/// rest. Magnitude ties are broken by the smaller index.
pub fn hard_threshold(coeffs: &[f64], k: usize) -> Result<SparseVector> {
    let n = coeffs.len();
    if n == 0 {
        return Err(Error::EmptyInput("hard_threshold coefficients"));
    }
    if k > n {
        return Err(Error::InvalidArgument(format!("k = {k} exceeds dimension {n}")));
    }
    if !coeffs.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite { context: "hard_threshold" });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_unstable_by(|&a, &b| {
        coeffs[b].abs().total_cmp(&coeffs[a].abs()).then_with(|| a.cmp(&b))
    });
    let mut selected = idx[..k].to_vec();
    selected.sort_unstable();
    let values = selected.iter().map(|&i| coeffs[i]).collect();
    SparseVector::new(n, selected, values)
}

/// Indices of the `k` largest-magnitude entries, sorted ascending.
/// Ties broken by the smaller index, matching `hard_threshold`.
fn top_k_indices(coeffs: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..coeffs.len()).collect();
    idx.sort_unstable_by(|&a, &b| {
        coeffs[b].abs().total_cmp(&coeffs[a].abs()).then_with(|| a.cmp(&b))
    });
    let mut selected = idx[..k].to_vec();
    selected.sort_unstable();
    selected
}

struct SolverWorkspace {
    x_dense: Vec<f64>,
    residual: Vec<f64>,
    gradient: Vec<f64>,
    candidate: Vec<f64>,
    tmp_m: Vec<f64>,
}

impl SolverWorkspace {
    fn new(m: usize, n: usize) -> Self {
        Self {
            x_dense: vec![0.0; n],
            residual: vec![0.0; m],
            gradient: vec![0.0; n],
            candidate: vec![0.0; n],
            tmp_m: vec![0.0; m],
        }
    }
}

fn solver_preconditions(
    b: &DenseVector,
    k: usize,
    phi: &MeasurementMatrix,
    step: StepRule,
) -> Result<()> {
    check_dim("solver input", phi.rows(), b.dim())?;
    if k > phi.cols() {
        return Err(Error::InvalidArgument(format!(
            "sparsity k = {k} exceeds signal dimension {}",
            phi.cols()
        )));
    }
    step.validate()
}

fn residual_into(phi: &MeasurementMatrix, b: &[f64], x: &SparseVector, out: &mut [f64]) {
    phi.mul_sparse_into(x, out);
    for (o, bv) in out.iter_mut().zip(b) {
        *o = bv - *o;
    }
}

/// Step length for the current iteration. For `Normalized`, restricts the
/// gradient to `support` (falling back to its own top-k when the iterate is
/// still zero) and takes the exact minimizer along that direction.
fn step_length(
    rule: StepRule,
    phi: &MeasurementMatrix,
    gradient: &[f64],
    support: &[usize],
    k: usize,
    tmp_m: &mut [f64],
) -> f64 {
    match rule {
        StepRule::Fixed(s) => s,
        StepRule::Normalized => {
            let owned;
            let sup: &[usize] = if support.is_empty() {
                owned = top_k_indices(gradient, k.min(gradient.len()));
                &owned
            } else {
                support
            };
            let mut g_norm_sq = 0.0;
            tmp_m.fill(0.0);
            for &j in sup {
                let gj = gradient[j];
                if gj == 0.0 {
                    continue;
                }
                g_norm_sq += gj * gj;
                for (i, t) in tmp_m.iter_mut().enumerate() {
                    *t += gj * phi.entry(i, j);
                }
            }
            let denom = norm_sq(tmp_m);
            if denom > 0.0 && g_norm_sq > 0.0 {
                g_norm_sq / denom
            } else {
                1.0
            }
        }
    }
}

/// Iterative hard thresholding: `x <- H_k(x + step * phi^T (b - phi x))`,
/// started from zero and run for exactly `tau` iterations.
pub fn run_iht(
    b: &DenseVector,
    k: usize,
    phi: &MeasurementMatrix,
    tau: u32,
    step: StepRule,
) -> Result<SolverRun> {
    run_iht_traced(b, k, phi, tau, step, None)
}

/// As [`run_iht`], additionally recording `||x_i - u||` per iteration when
/// the ground truth `u` is supplied.
pub fn run_iht_traced(
    b: &DenseVector,
    k: usize,
    phi: &MeasurementMatrix,
    tau: u32,
    step: StepRule,
    truth: Option<&SparseVector>,
) -> Result<SolverRun> {
    solver_preconditions(b, k, phi, step)?;
    let (m, n) = (phi.rows(), phi.cols());
    let mut ws = SolverWorkspace::new(m, n);
    let mut x = SparseVector::zero(n);
    let mut errors = truth.map(|_| Vec::with_capacity(tau as usize));

    for _ in 0..tau {
        residual_into(phi, b.as_slice(), &x, &mut ws.residual);
        phi.tr_mul_into(&ws.residual, &mut ws.gradient);
        let mu = step_length(step, phi, &ws.gradient, x.support(), k, &mut ws.tmp_m);
        for j in 0..n {
            ws.candidate[j] = ws.x_dense[j] + mu * ws.gradient[j];
        }
        x = hard_threshold(&ws.candidate, k)?;
        ws.x_dense.fill(0.0);
        for (j, v) in x.iter() {
            ws.x_dense[j] = v;
        }
        if let (Some(errs), Some(u)) = (errors.as_mut(), truth) {
            errs.push(x.distance(u)?);
        }
    }
    Ok(SolverRun { estimate: x, iterations_used: tau, per_iteration_error: errors })
}

/// Hard thresholding pursuit: threshold the gradient step to pick a support,
/// then solve exact least squares on it. Freezes the iterate once the
/// selected support repeats (HTP is stationary from there on) while still
/// reporting the requested budget.
pub fn run_htp(
    b: &DenseVector,
    k: usize,
    phi: &MeasurementMatrix,
    tau: u32,
    step: StepRule,
) -> Result<SolverRun> {
    run_htp_traced(b, k, phi, tau, step, None)
}

pub fn run_htp_traced(
    b: &DenseVector,
    k: usize,
    phi: &MeasurementMatrix,
    tau: u32,
    step: StepRule,
    truth: Option<&SparseVector>,
) -> Result<SolverRun> {
    solver_preconditions(b, k, phi, step)?;
    let (m, n) = (phi.rows(), phi.cols());
    let mut ws = SolverWorkspace::new(m, n);
    let mut x = SparseVector::zero(n);
    let mut errors = truth.map(|_| Vec::with_capacity(tau as usize));
    let mut prev_support: Option<Vec<usize>> = None;

    for it in 0..tau {
        residual_into(phi, b.as_slice(), &x, &mut ws.residual);
        phi.tr_mul_into(&ws.residual, &mut ws.gradient);
        let mu = step_length(step, phi, &ws.gradient, x.support(), k, &mut ws.tmp_m);
        for j in 0..n {
            ws.candidate[j] = ws.x_dense[j] + mu * ws.gradient[j];
        }
        let support = top_k_indices(&ws.candidate, k);
        if prev_support.as_deref() == Some(&support) {
            // stationary: the least-squares refit would reproduce x
            if let (Some(errs), Some(u)) = (errors.as_mut(), truth) {
                let e = x.distance(u)?;
                errs.extend(std::iter::repeat(e).take((tau - it) as usize));
            }
            break;
        }
        let values = lstsq_values(phi, &support, b.as_slice())?;
        x = SparseVector::new(n, support.clone(), values)?;
        prev_support = Some(support);
        ws.x_dense.fill(0.0);
        for (j, v) in x.iter() {
            ws.x_dense[j] = v;
        }
        if let (Some(errs), Some(u)) = (errors.as_mut(), truth) {
            errs.push(x.distance(u)?);
        }
    }
    Ok(SolverRun { estimate: x, iterations_used: tau, per_iteration_error: errors })
}

/// Least-squares fit of `b` on the columns of `phi` named by `support`,
/// solved by Householder QR. The result is the minimizer of `||b - phi x||`
/// among vectors supported on `support`.
pub fn least_squares_on_support(
    phi: &MeasurementMatrix,
    support: &[usize],
    b: &DenseVector,
) -> Result<SparseVector> {
    check_dim("least_squares_on_support", phi.rows(), b.dim())?;
    for w in support.windows(2) {
        if w[0] >= w[1] {
            return Err(Error::InvalidArgument(
                "support must be strictly increasing".into(),
            ));
        }
    }
    if let Some(&last) = support.last() {
        if last >= phi.cols() {
            return Err(Error::InvalidArgument(format!(
                "support index {last} out of range [0, {})",
                phi.cols()
            )));
        }
    }
    if support.len() > phi.rows() {
        return Err(Error::InvalidArgument(format!(
            "support size {} exceeds measurement count {}",
            support.len(),
            phi.rows()
        )));
    }
    let values = lstsq_values(phi, support, b.as_slice())?;
    SparseVector::new(phi.cols(), support.to_vec(), values)
}

/// Householder-QR least squares on the gathered column submatrix.
pub(crate) fn lstsq_values(
    phi: &MeasurementMatrix,
    support: &[usize],
    b: &[f64],
) -> Result<Vec<f64>> {
    let m = phi.rows();
    let k = support.len();
    if k == 0 {
        return Ok(Vec::new());
    }
    // column-major scratch copy of the submatrix
    let mut a = vec![0.0; m * k];
    for (c, &j) in support.iter().enumerate() {
        for i in 0..m {
            a[c * m + i] = phi.entry(i, j);
        }
    }
    let mut rhs = b.to_vec();
    let scale = (0..k)
        .map(|c| norm_sq(&a[c * m..(c + 1) * m]).sqrt())
        .fold(0.0f64, f64::max);
    if scale == 0.0 {
        return Err(Error::RankDeficient { support: support.to_vec() });
    }
    let rank_tol = scale * 1e-12;

    for c in 0..k {
        let col_norm = norm_sq(&a[c * m + c..(c + 1) * m]).sqrt();
        if col_norm <= rank_tol {
            return Err(Error::RankDeficient { support: support.to_vec() });
        }
        let head = a[c * m + c];
        let alpha = if head >= 0.0 { -col_norm } else { col_norm };
        // Householder vector v lives in a[c*m+c ..], with v0 = head - alpha
        a[c * m + c] = head - alpha;
        let v_norm_sq = norm_sq(&a[c * m + c..(c + 1) * m]);
        for other in c + 1..k {
            let proj = dot(&a[c * m + c..(c + 1) * m], &a[other * m + c..(other + 1) * m]);
            let coef = 2.0 * proj / v_norm_sq;
            for i in c..m {
                a[other * m + i] -= coef * a[c * m + i];
            }
        }
        let proj = dot(&a[c * m + c..(c + 1) * m], &rhs[c..m]);
        let coef = 2.0 * proj / v_norm_sq;
        for i in c..m {
            rhs[i] -= coef * a[c * m + i];
        }
        a[c * m + c] = alpha;
    }

    let mut out = vec![0.0; k];
    for r in (0..k).rev() {
        let mut acc = rhs[r];
        for c in r + 1..k {
            acc -= a[c * m + r] * out[c];
        }
        let diag = a[r * m + r];
        if diag.abs() <= rank_tol {
            return Err(Error::RankDeficient { support: support.to_vec() });
        }
        out[r] = acc / diag;
    }
    Ok(out)
}

/// Uniform solver entry point used by the policies. IHT runs with the
/// normalized step rule, HTP with the unit step.
pub fn dispatch_alg(
    kind: SolverKind,
    b: &DenseVector,
    k: usize,
    phi: &MeasurementMatrix,
    tau: u32,
) -> Result<SparseVector> {
    dispatch_with_step(kind, b, k, phi, tau, default_step(kind))
}

pub fn default_step(kind: SolverKind) -> StepRule {
    match kind {
        SolverKind::Iht => StepRule::Normalized,
        SolverKind::Htp => StepRule::Fixed(1.0),
    }
}

pub fn dispatch_with_step(
    kind: SolverKind,
    b: &DenseVector,
    k: usize,
    phi: &MeasurementMatrix,
    tau: u32,
    step: StepRule,
) -> Result<SparseVector> {
    let run = match kind {
        SolverKind::Iht => run_iht(b, k, phi, tau, step)?,
        SolverKind::Htp => run_htp(b, k, phi, tau, step)?,
    };
    Ok(run.estimate)
}

/// Number of size-k subsets of [0, n), saturating to +inf on overflow.
pub fn binomial_count(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc = 1.0f64;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
        if !acc.is_finite() {
            return f64::INFINITY;
        }
    }
    acc
}

/// Result of an exhaustive search over all size-k supports.
#[derive(Debug, Clone)]
pub struct ExhaustiveFit {
    pub minimizer: SparseVector,
    /// `||target - phi x||^2` at the minimizer.
    pub residual_sq: f64,
    /// Supports skipped because their column submatrix was rank deficient.
    pub skipped_supports: usize,
}

/// Global minimizer of `||target - phi x||` over all vectors with support
/// size exactly k, by enumerating supports in lexicographic order (so ties
/// resolve to the lexicographically smallest support). Rank-deficient
/// submatrices are skipped with a warning and excluded from the argmin.
pub fn exhaustive_sparse_fit(
    phi: &MeasurementMatrix,
    target: &DenseVector,
    k: usize,
    guard_limit: f64,
) -> Result<ExhaustiveFit> {
    use itertools::Itertools;

    check_dim("exhaustive_sparse_fit", phi.rows(), target.dim())?;
    if k > phi.cols() {
        return Err(Error::InvalidArgument(format!(
            "sparsity k = {k} exceeds signal dimension {}",
            phi.cols()
        )));
    }
    let combos = binomial_count(phi.cols(), k);
    if combos > guard_limit {
        return Err(Error::CombinatorialGuard { combinations: combos, limit: guard_limit });
    }

    let mut best: Option<(f64, SparseVector)> = None;
    let mut skipped = 0usize;
    let mut fit = vec![0.0; phi.rows()];
    for support in (0..phi.cols()).combinations(k) {
        let values = match lstsq_values(phi, &support, target.as_slice()) {
            Ok(v) => v,
            Err(Error::RankDeficient { support }) => {
                log::warn!("skipping rank-deficient support {support:?}");
                skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let x = SparseVector::new(phi.cols(), support, values)?;
        phi.mul_sparse_into(&x, &mut fit);
        let residual_sq: f64 = target
            .as_slice()
            .iter()
            .zip(&fit)
            .map(|(t, f)| (t - f) * (t - f))
            .sum();
        if best.as_ref().map_or(true, |(r, _)| residual_sq < *r) {
            best = Some((residual_sq, x));
        }
    }
    match best {
        Some((residual_sq, minimizer)) => {
            Ok(ExhaustiveFit { minimizer, residual_sq, skipped_supports: skipped })
        }
        None => Err(Error::EmptyInput("exhaustive_sparse_fit: every support was rank deficient")),
    }
}

/// One measurement of the stability contract on a seeded instance.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct StabilitySample {
    pub tau: u32,
    pub noise_norm: f64,
    pub u_norm: f64,
    pub error: f64,
}

impl StabilitySample {
    /// Error in excess of the geometric term, clamped at zero.
    pub fn excess(&self) -> f64 {
        (self.error - 0.5f64.powi(self.tau as i32) * self.u_norm).max(0.0)
    }
}

/// Runs a solver over seeded Gaussian instances `b = phi u + e` and records
/// the recovery error for every `(tau, ||e||)` combination. Signals are
/// K-sparse with uniform nonzeros, rescaled to unit norm at most.
pub fn stability_samples(
    kind: SolverKind,
    m: usize,
    n: usize,
    k: usize,
    phi_scale: f64,
    taus: &[u32],
    noise_norms: &[f64],
    instances: usize,
    rng: &mut RngStream,
) -> Result<Vec<StabilitySample>> {
    let mut out = Vec::with_capacity(instances * taus.len() * noise_norms.len());
    for _ in 0..instances {
        let phi = sample_gaussian_matrix(m, n, phi_scale, rng)?;
        let support = rng.sample_support(n, k)?;
        let values: Vec<f64> = (0..k).map(|_| rng.uniform()).collect();
        let mut u = SparseVector::new(n, support, values)?;
        let u_norm = u.norm();
        if u_norm > 1.0 {
            u = u.scaled(1.0 / u_norm)?;
        }
        let u_norm = u.norm();
        let clean = crate::linalg::matvec(&phi, &u)?;
        for &noise_norm in noise_norms {
            let b = if noise_norm == 0.0 {
                clean.clone()
            } else {
                let mut e: Vec<f64> = (0..m).map(|_| rng.standard_normal()).collect();
                let en = norm_sq(&e).sqrt();
                e.iter_mut().for_each(|v| *v *= noise_norm / en);
                DenseVector::new(
                    clean.as_slice().iter().zip(&e).map(|(c, ei)| c + ei).collect(),
                )?
            };
            for &tau in taus {
                let run = match kind {
                    SolverKind::Iht => run_iht(&b, k, &phi, tau, default_step(kind))?,
                    SolverKind::Htp => run_htp(&b, k, &phi, tau, default_step(kind))?,
                };
                out.push(StabilitySample {
                    tau,
                    noise_norm,
                    u_norm,
                    error: run.estimate.distance(&u)?,
                });
            }
        }
    }
    Ok(out)
}

/// Smallest `kappa` covering the target fraction of noisy samples: the
/// empirical `q`-quantile of `excess / ||e||`. Samples with zero noise are
/// ignored.
pub fn kappa_envelope(samples: &[StabilitySample], q: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidArgument(format!("quantile must be in [0,1], got {q}")));
    }
    let mut ratios: Vec<f64> = samples
        .iter()
        .filter(|s| s.noise_norm > 0.0)
        .map(|s| s.excess() / s.noise_norm)
        .collect();
    if ratios.is_empty() {
        return Err(Error::EmptyInput("kappa_envelope noisy samples"));
    }
    ratios.sort_by(f64::total_cmp);
    let idx = ((q * ratios.len() as f64).ceil() as usize).clamp(1, ratios.len()) - 1;
    Ok(ratios[idx])
}

/// Through-origin regression of the excess error against the noise norm.
pub fn kappa_regression(samples: &[StabilitySample]) -> Result<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for s in samples.iter().filter(|s| s.noise_norm > 0.0) {
        num += (s.error - 0.5f64.powi(s.tau as i32) * s.u_norm) * s.noise_norm;
        den += s.noise_norm * s.noise_norm;
    }
    if den == 0.0 {
        return Err(Error::EmptyInput("kappa_regression noisy samples"));
    }
    Ok((num / den).max(0.0))
}
