//! Regret accounting, the regret decomposition identities, evaluable
//! theoretical bounds, restricted-isometry-constant estimation, and
//! Monte-Carlo concentration self-tests.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{residual_loss, DenseVector, MeasurementMatrix, SparseVector};
use crate::policies::FtaslVariant;
use crate::rng::RngStream;
use crate::solvers::{binomial_count, exhaustive_sparse_fit};

pub const EXACT_OPT_GUARD: f64 = 1e6;
pub const EXACT_RIC_GUARD: f64 = 1e5;
/// Constant printed in the fourth bound term; kept configurable.
pub const THEOREM1_FOURTH_TERM_COEFF: f64 = 12.0;

/// Per-round bookkeeping of one experiment run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretTrace {
    pub per_step_loss: Vec<f64>,
    pub cumulative_loss: Vec<f64>,
    /// Approximate regret at each prefix horizon `t`, against the prefix
    /// signal mean `z*_t`.
    pub approx_regret: Vec<f64>,
    pub alg_invocations: Vec<u64>,
    pub wall_time_ns: Vec<u64>,
}

impl RegretTrace {
    pub fn len(&self) -> usize {
        self.per_step_loss.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_step_loss.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.per_step_loss.len();
        for (name, len) in [
            ("cumulative_loss", self.cumulative_loss.len()),
            ("approx_regret", self.approx_regret.len()),
            ("alg_invocations", self.alg_invocations.len()),
            ("wall_time_ns", self.wall_time_ns.len()),
        ] {
            if len != n {
                return Err(Error::InvalidArgument(format!(
                    "trace field {name} has length {len}, expected {n}"
                )));
            }
        }
        let mut acc = 0.0;
        for (i, &l) in self.per_step_loss.iter().enumerate() {
            if l < 0.0 {
                return Err(Error::InvalidArgument(format!("negative loss at step {i}")));
            }
            acc += l;
            if !approx_rel(acc, self.cumulative_loss[i], 1e-9) {
                return Err(Error::InvalidArgument(format!(
                    "cumulative loss mismatch at step {i}"
                )));
            }
        }
        Ok(())
    }
}

/// Inputs to the regret-bound evaluators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    pub delta: f64,
    pub m: usize,
    pub delta_k: f64,
    pub kappa: f64,
    pub horizon: u64,
    /// The dyadic staleness sum: zero for the agile variant.
    pub big_delta: f64,
    /// `sum_t ||z*_T - z*_t||^2`.
    pub z_star_drift: f64,
    /// `sum_t ||z*_t - u_t||^2`.
    pub u_drift: f64,
}

impl BoundParams {
    fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "delta must be in (0,1), got {}",
                self.delta
            )));
        }
        // delta_K < 1 is the proven RIP regime; larger measured constants
        // still evaluate (the bound only grows with delta_K) but mean the
        // isometry hypothesis failed on this matrix.
        if !(self.delta_k >= 0.0) || !self.delta_k.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "delta_K must be a finite nonnegative real, got {}",
                self.delta_k
            )));
        }
        if !(self.kappa > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "kappa must be positive, got {}",
                self.kappa
            )));
        }
        if self.m == 0 || self.horizon == 0 {
            return Err(Error::InvalidArgument("m and horizon must be >= 1".into()));
        }
        for (name, v) in [
            ("big_delta", self.big_delta),
            ("z_star_drift", self.z_star_drift),
            ("u_drift", self.u_drift),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidArgument(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// The three-way regret split and its cross-checked totals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecompositionReport {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub r_t: f64,
    pub r_hat_t: f64,
}

impl DecompositionReport {
    /// Checks `A + B + C = R_T` and `B + C = R_hat_T` to the given relative
    /// tolerance.
    pub fn check_identities(&self, tol: f64) -> Result<()> {
        if !approx_rel(self.a + self.b + self.c, self.r_t, tol) {
            return Err(Error::InvalidArgument(format!(
                "A+B+C = {} differs from R_T = {}",
                self.a + self.b + self.c,
                self.r_t
            )));
        }
        if !approx_rel(self.b + self.c, self.r_hat_t, tol) {
            return Err(Error::InvalidArgument(format!(
                "B+C = {} differs from R_hat_T = {}",
                self.b + self.c,
                self.r_hat_t
            )));
        }
        Ok(())
    }
}

pub(crate) fn approx_rel(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

/// Approximate regret of a loss sequence against the fixed comparator
/// `z*_T`: cumulative loss minus the comparator's cumulative loss.
pub fn approx_regret(
    trace_losses: &[f64],
    ys: &[DenseVector],
    phi: &MeasurementMatrix,
    z_star_t: &SparseVector,
) -> Result<f64> {
    check_dim("approx_regret", trace_losses.len(), ys.len())?;
    let mut total = 0.0;
    for (loss, y) in trace_losses.iter().zip(ys) {
        total += loss - residual_loss(phi, z_star_t, y)?;
    }
    Ok(total)
}

/// Offline optimum: the best fixed k-sparse predictor in hindsight and its
/// cumulative loss. The argmin is found against the mean measurement
/// `Y_T / T` (the cumulative loss differs from `T/2 ||Y_T/T - phi x||^2`
/// only by an x-independent constant), while the returned value is the true
/// cumulative loss of the minimizer.
pub fn exact_opt(
    ys: &[DenseVector],
    phi: &MeasurementMatrix,
    k: usize,
) -> Result<(f64, SparseVector)> {
    if ys.is_empty() {
        return Err(Error::EmptyInput("exact_opt measurement sequence"));
    }
    let combos = binomial_count(phi.cols(), k);
    if combos > EXACT_OPT_GUARD {
        return Err(Error::CombinatorialGuard { combinations: combos, limit: EXACT_OPT_GUARD });
    }
    let mut mean = DenseVector::zeros(phi.rows());
    for y in ys {
        mean.add_assign(y)?;
    }
    let mean = mean.scaled(1.0 / ys.len() as f64);
    let fit = exhaustive_sparse_fit(phi, &mean, k, EXACT_OPT_GUARD)?;
    let mut opt = 0.0;
    for y in ys {
        opt += residual_loss(phi, &fit.minimizer, y)?;
    }
    Ok((opt, fit.minimizer))
}

/// Running prefix means `z*_t` of the true signal sequence, via the
/// incremental update `z += (u_t - z)/t`. A constant sequence therefore
/// yields bit-identical means at every round.
pub fn prefix_means(us: &[SparseVector]) -> Result<Vec<SparseVector>> {
    if us.is_empty() {
        return Err(Error::EmptyInput("prefix_means"));
    }
    let n = us[0].ambient_dim();
    let mut mean = vec![0.0; n];
    let mut u_dense = vec![0.0; n];
    let mut out = Vec::with_capacity(us.len());
    for (t, u) in us.iter().enumerate() {
        check_dim("prefix_means", n, u.ambient_dim())?;
        u_dense.fill(0.0);
        for (j, v) in u.iter() {
            u_dense[j] = v;
        }
        let rounds = (t + 1) as f64;
        for (m, uv) in mean.iter_mut().zip(&u_dense) {
            *m += (uv - *m) / rounds;
        }
        out.push(SparseVector::from_dense(&mean)?);
    }
    Ok(out)
}

/// `sum_t ||z*_T - z*_t||^2` over the whole horizon.
pub fn z_star_drift(z_stars: &[SparseVector]) -> Result<f64> {
    let last = z_stars.last().ok_or(Error::EmptyInput("z_star_drift"))?;
    let mut total = 0.0;
    for z in z_stars {
        let d = last.distance(z)?;
        total += d * d;
    }
    Ok(total)
}

/// `sum_t ||z*_t - u_t||^2`.
pub fn u_drift(us: &[SparseVector], z_stars: &[SparseVector]) -> Result<f64> {
    check_dim("u_drift", us.len(), z_stars.len())?;
    let mut total = 0.0;
    for (u, z) in us.iter().zip(z_stars) {
        let d = z.distance(u)?;
        total += d * d;
    }
    Ok(total)
}

/// Dyadic epoch starts `t_k = 2^k` covering rounds 1..=horizon, i.e. all
/// `k` with `2^k <= horizon`.
pub fn dyadic_epoch_starts(horizon: u64) -> Vec<u64> {
    let mut out = Vec::new();
    let mut t = 1u64;
    while t <= horizon {
        out.push(t);
        match t.checked_mul(2) {
            Some(next) => t = next,
            None => break,
        }
    }
    out
}

/// Staleness sum for the lazy variant over the dyadic grid:
/// `2 * sum_{k>=1} sum_{t=t_k}^{min(t_{k+1}-1, T)} ||z*_t - z*_{t_k - 1}||^2`.
///
/// The k = 0 epoch contributes nothing: its prediction is the zero vector,
/// which matches `z*_0 = 0` exactly, so only epochs with a data-driven
/// recompute enter the sum. For a constant signal the sum is identically
/// zero.
pub fn lazy_epoch_drift(z_stars: &[SparseVector]) -> Result<f64> {
    if z_stars.is_empty() {
        return Err(Error::EmptyInput("lazy_epoch_drift"));
    }
    let horizon = z_stars.len() as u64;
    let starts = dyadic_epoch_starts(horizon);
    let mut total = 0.0;
    for (k, &tk) in starts.iter().enumerate().skip(1) {
        let base = &z_stars[(tk - 2) as usize]; // z*_{t_k - 1}, 1-indexed
        let epoch_end = starts.get(k + 1).map_or(horizon, |&next| (next - 1).min(horizon));
        for t in tk..=epoch_end {
            let d = z_stars[(t - 1) as usize].distance(base)?;
            total += d * d;
        }
    }
    Ok(2.0 * total)
}

/// The staleness term entering `a_T(delta)`: zero for the agile variant,
/// the dyadic epoch drift for the lazy one.
pub fn big_delta(variant: FtaslVariant, z_stars: &[SparseVector]) -> Result<f64> {
    match variant {
        FtaslVariant::Agile => Ok(0.0),
        FtaslVariant::Lazy => lazy_epoch_drift(z_stars),
    }
}

/// Literal regret decomposition of one run from generator-side ground
/// truth: `A` compares the mean comparator to the offline optimum, `B` the
/// moving prefix comparator to the final one, `C` the policy to the moving
/// comparator.
pub fn regret_decomposition(
    us: &[SparseVector],
    ws: &[DenseVector],
    xs: &[SparseVector],
    phi: &MeasurementMatrix,
    opt: f64,
) -> Result<DecompositionReport> {
    check_dim("regret_decomposition us/ws", us.len(), ws.len())?;
    check_dim("regret_decomposition us/xs", us.len(), xs.len())?;
    if us.is_empty() {
        return Err(Error::EmptyInput("regret_decomposition"));
    }
    let z_stars = prefix_means(us)?;
    let z_final = z_stars.last().unwrap();

    let mut sum_policy = 0.0;
    let mut sum_prefix = 0.0;
    let mut sum_final = 0.0;
    for t in 0..us.len() {
        let mut y = crate::linalg::matvec(phi, &us[t])?;
        y.add_assign(&ws[t])?;
        sum_policy += residual_loss(phi, &xs[t], &y)?;
        sum_prefix += residual_loss(phi, &z_stars[t], &y)?;
        sum_final += residual_loss(phi, z_final, &y)?;
    }
    Ok(DecompositionReport {
        a: sum_final - opt,
        b: sum_prefix - sum_final,
        c: sum_policy - sum_prefix,
        r_t: sum_policy - opt,
        r_hat_t: sum_policy - sum_final,
    })
}

/// Concentration constant `b(delta) = (sqrt(M) + sqrt(ln(1/delta)))^2 + ln(1/delta)`.
pub fn b_delta(delta: f64, m: usize) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!("delta must be in (0,1), got {delta}")));
    }
    if m == 0 {
        return Err(Error::InvalidArgument("m must be >= 1".into()));
    }
    let l = (1.0 / delta).ln();
    let s = (m as f64).sqrt() + l.sqrt();
    Ok(s * s + l)
}

/// `a_T(delta) = 1 + 2 kappa^2 M b(delta) ln T + Delta`.
pub fn a_t_delta(params: &BoundParams) -> Result<f64> {
    params.validate()?;
    let b = b_delta(params.delta, params.m)?;
    let ln_t = (params.horizon as f64).ln();
    Ok(1.0 + 2.0 * params.kappa * params.kappa * params.m as f64 * b * ln_t + params.big_delta)
}

/// Full right-hand side of the high-probability regret bound, with the
/// printed constant in the fourth term.
pub fn theorem1_bound(params: &BoundParams) -> Result<f64> {
    theorem1_bound_with(params, THEOREM1_FOURTH_TERM_COEFF)
}

pub fn theorem1_bound_with(params: &BoundParams, fourth_term_coeff: f64) -> Result<f64> {
    params.validate()?;
    if !(fourth_term_coeff >= 0.0) || !fourth_term_coeff.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "fourth-term coefficient must be >= 0, got {fourth_term_coeff}"
        )));
    }
    let delta = params.delta;
    let one_plus_dk = 1.0 + params.delta_k;
    let m = params.m as f64;
    let kappa_sq = params.kappa * params.kappa;
    let ln_t = (params.horizon as f64).ln();
    let b3 = b_delta(delta / 3.0, params.m)?;
    let core = 1.0 + 2.0 * m * kappa_sq * b3 * ln_t + params.big_delta;

    let term1 = b3 / 2.0;
    let term2 = (2.0 * one_plus_dk * (3.0 / delta).ln() * params.z_star_drift).sqrt();
    let term3 = (2.0 * (6.0 / delta).ln() * one_plus_dk * core).sqrt();
    let term4 =
        one_plus_dk / 2.0 * (fourth_term_coeff * m * kappa_sq * b3 * ln_t + params.big_delta);
    let term5 = one_plus_dk * (core * params.u_drift).sqrt();
    Ok(term1 + term2 + term3 + term4 + term5)
}

/// How to estimate the restricted isometry constant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RicMode {
    Exact,
    MonteCarlo { samples: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RicEstimate {
    pub value: f64,
    /// Monte-Carlo estimates only see a subset of supports and are a lower
    /// bound on the true constant.
    pub lower_bound_only: bool,
    pub supports_evaluated: usize,
}

/// Restricted isometry constant of order k:
/// `max_S ||phi_S^T phi_S - I||` over size-k supports, exactly or by
/// uniform support sampling.
pub fn estimate_ric(phi: &MeasurementMatrix, k: usize, mode: RicMode) -> Result<RicEstimate> {
    if k == 0 || k > phi.cols() {
        return Err(Error::InvalidArgument(format!(
            "RIC order k must be in [1, {}], got {k}",
            phi.cols()
        )));
    }
    match mode {
        RicMode::Exact => {
            use itertools::Itertools;
            let combos = binomial_count(phi.cols(), k);
            if combos > EXACT_RIC_GUARD {
                return Err(Error::CombinatorialGuard {
                    combinations: combos,
                    limit: EXACT_RIC_GUARD,
                });
            }
            let mut value = 0.0f64;
            let mut evaluated = 0usize;
            for support in (0..phi.cols()).combinations(k) {
                value = value.max(gram_deviation_opnorm(phi, &support));
                evaluated += 1;
            }
            Ok(RicEstimate { value, lower_bound_only: false, supports_evaluated: evaluated })
        }
        RicMode::MonteCarlo { samples, seed } => {
            if samples == 0 {
                return Err(Error::InvalidArgument("MonteCarlo samples must be >= 1".into()));
            }
            let mut rng = RngStream::new(seed);
            let mut value = 0.0f64;
            for _ in 0..samples {
                let support = rng.sample_support(phi.cols(), k)?;
                value = value.max(gram_deviation_opnorm(phi, &support));
            }
            Ok(RicEstimate { value, lower_bound_only: true, supports_evaluated: samples })
        }
    }
}

/// `||phi_S^T phi_S - I||` for a small support, by symmetric eigen-decomposition.
fn gram_deviation_opnorm(phi: &MeasurementMatrix, support: &[usize]) -> f64 {
    let k = support.len();
    let m = phi.rows();
    let mut gram = vec![0.0; k * k];
    for a in 0..k {
        for b in a..k {
            let mut acc = 0.0;
            for i in 0..m {
                acc += phi.entry(i, support[a]) * phi.entry(i, support[b]);
            }
            if a == b {
                acc -= 1.0;
            }
            gram[a * k + b] = acc;
            gram[b * k + a] = acc;
        }
    }
    jacobi_eigenvalues(&mut gram, k).iter().fold(0.0f64, |acc, &e| acc.max(e.abs()))
}

/// Eigenvalues of a small symmetric matrix by the cyclic Jacobi method.
pub(crate) fn jacobi_eigenvalues(a: &mut [f64], n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), n * n);
    if n == 1 {
        return vec![a[0]];
    }
    let frob: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let tol = frob.max(f64::MIN_POSITIVE) * 1e-14;
    for _sweep in 0..60 {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += a[p * n + q] * a[p * n + q];
            }
        }
        if off.sqrt() <= tol {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() <= tol * 1e-2 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for i in 0..n {
                    let aip = a[i * n + p];
                    let aiq = a[i * n + q];
                    a[i * n + p] = c * aip - s * aiq;
                    a[i * n + q] = s * aip + c * aiq;
                }
                for i in 0..n {
                    let api = a[p * n + i];
                    let aqi = a[q * n + i];
                    a[p * n + i] = c * api - s * aqi;
                    a[q * n + i] = s * api + c * aqi;
                }
            }
        }
    }
    (0..n).map(|i| a[i * n + i]).collect()
}

/// Draws standard-normal m-vectors and reports how often the squared norm
/// exceeds `b(delta)`; the chi-square tail bound promises a rate <= delta.
pub fn chi_square_tail_selftest(
    m: usize,
    trials: usize,
    delta: f64,
    rng: &mut RngStream,
) -> Result<f64> {
    if trials < 1000 {
        return Err(Error::InvalidArgument(format!("trials must be >= 1000, got {trials}")));
    }
    let threshold = b_delta(delta, m)?;
    let mut exceed = 0usize;
    for _ in 0..trials {
        let mut sq = 0.0;
        for _ in 0..m {
            let x = rng.standard_normal();
            sq += x * x;
        }
        if sq > threshold {
            exceed += 1;
        }
    }
    Ok(exceed as f64 / trials as f64)
}

/// Monte-Carlo check of the PSD quadratic-form bound with the dyadic
/// construction behind the lazy analysis: for noise means
/// `nu_j = (w_1 + ... + w_j)/j` and epochs `t_k = 2^k`, the weighted sum
/// `sum_k s_k ||nu_{t_k - 1}||^2` stays below
/// `b(delta) * M * sum_k s_k/(t_k - 1)` with probability >= 1 - delta.
pub fn psd_tail_selftest(
    m: usize,
    horizon: u64,
    trials: usize,
    delta: f64,
    rng: &mut RngStream,
) -> Result<f64> {
    if trials < 1000 {
        return Err(Error::InvalidArgument(format!("trials must be >= 1000, got {trials}")));
    }
    if horizon < 2 {
        return Err(Error::InvalidArgument("horizon must be >= 2".into()));
    }
    let starts = dyadic_epoch_starts(horizon);
    if starts.len() < 2 {
        return Err(Error::InvalidArgument("horizon admits no dyadic epochs".into()));
    }
    // s_k = t_{k+1} - t_k, with the final epoch closed at 2 * t_{k'-1}
    let widths: Vec<u64> = (1..starts.len())
        .map(|k| starts.get(k + 1).copied().unwrap_or(2 * starts[k]) - starts[k])
        .collect();
    let t1 = (starts[starts.len() - 1] - 1) as usize;
    let coeff: f64 =
        (1..starts.len()).map(|k| widths[k - 1] as f64 / (starts[k] - 1) as f64).sum();
    let threshold = b_delta(delta, m)? * m as f64 * coeff;

    let mut exceed = 0usize;
    let mut acc = vec![0.0f64; m];
    for _ in 0..trials {
        acc.fill(0.0);
        let mut q = 0.0;
        let mut next_epoch = 1usize;
        for t in 1..=t1 {
            for a in acc.iter_mut() {
                *a += rng.standard_normal();
            }
            if next_epoch < starts.len() && t as u64 == starts[next_epoch] - 1 {
                let denom = t as f64;
                let nu_sq: f64 = acc.iter().map(|a| (a / denom) * (a / denom)).sum();
                q += widths[next_epoch - 1] as f64 * nu_sq;
                next_epoch += 1;
            }
        }
        if q > threshold {
            exceed += 1;
        }
    }
    Ok(exceed as f64 / trials as f64)
}
