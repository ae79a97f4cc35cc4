//! Online prediction policies.
//!
//! The FTASL meta-policy feeds the running measurement mean to a greedy
//! sparse solver under a logarithmic iteration schedule; the agile variant
//! recomputes every round, the lazy one only at rounds that are powers of
//! two. OIST is the soft-thresholding baseline, and an exhaustive FTL oracle
//! is available for instances small enough to enumerate supports.
//!
//! Causality is structural: `predict` never sees the current measurement,
//! which is only handed over through `update`.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{DenseVector, MeasurementMatrix, SparseVector};
use crate::solvers::{dispatch_with_step, exhaustive_sparse_fit, SolverKind, StepRule};

pub const EXACT_FTL_GUARD: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FtaslVariant {
    Agile,
    Lazy,
}

impl FtaslVariant {
    pub fn name(&self) -> &'static str {
        match self {
            FtaslVariant::Agile => "a-ftasl",
            FtaslVariant::Lazy => "l-ftasl",
        }
    }
}

/// Iteration budget schedule `tau_t`.
///
/// The base-2 schedule `ceil(log2(t+1))` makes the solver's `2^-tau`
/// contraction line up with the dyadic recompute grid (`tau_{t_k - 1} = k`).
/// The natural-log schedule is the one printed in the meta-policy listing
/// and is kept selectable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TauSchedule {
    #[default]
    Log2,
    Natural,
}

impl TauSchedule {
    pub fn budget(&self, t: u64) -> u32 {
        match self {
            TauSchedule::Log2 => ceil_log2(t + 1),
            TauSchedule::Natural => ((t + 1) as f64).ln().ceil() as u32,
        }
    }
}

fn ceil_log2(x: u64) -> u32 {
    if x <= 1 {
        0
    } else {
        64 - (x - 1).leading_zeros()
    }
}

/// Running state of the FTASL meta-policy.
#[derive(Debug, Clone)]
pub struct FtaslState {
    t: u64,
    y_sum: DenseVector,
    mean: DenseVector,
    x: SparseVector,
    tau: u32,
    alg_invocations: u64,
    variant: FtaslVariant,
    solver: SolverKind,
    step: StepRule,
    schedule: TauSchedule,
}

impl FtaslState {
    pub fn new(
        variant: FtaslVariant,
        solver: SolverKind,
        step: StepRule,
        schedule: TauSchedule,
        measurement_dim: usize,
        signal_dim: usize,
    ) -> Self {
        Self {
            t: 0,
            y_sum: DenseVector::zeros(measurement_dim),
            mean: DenseVector::zeros(measurement_dim),
            x: SparseVector::zero(signal_dim),
            tau: 0,
            alg_invocations: 0,
            variant,
            solver,
            step,
            schedule,
        }
    }

    pub fn round(&self) -> u64 {
        self.t
    }

    pub fn tau(&self) -> u32 {
        self.tau
    }

    pub fn mean(&self) -> &DenseVector {
        &self.mean
    }

    pub fn alg_invocations(&self) -> u64 {
        self.alg_invocations
    }

    pub fn variant(&self) -> FtaslVariant {
        self.variant
    }

    pub fn solver(&self) -> SolverKind {
        self.solver
    }

    /// Prediction for round `t+1`, made before the measurement is revealed.
    /// Agile reruns the solver every round; Lazy only when the 1-indexed
    /// round number is a power of two, otherwise the previous prediction is
    /// replayed.
    pub fn predict(&mut self, phi: &MeasurementMatrix, k: usize) -> Result<SparseVector> {
        check_dim("FtaslState::predict", phi.rows(), self.mean.dim())?;
        let round = self.t + 1;
        let recompute = match self.variant {
            FtaslVariant::Agile => true,
            FtaslVariant::Lazy => round.is_power_of_two(),
        };
        if recompute {
            self.x = dispatch_with_step(self.solver, &self.mean, k, phi, self.tau, self.step)?;
            self.alg_invocations += 1;
        }
        Ok(self.x.clone())
    }

    /// Absorbs the revealed measurement: accumulate, advance the round
    /// counter, refresh the running mean and the iteration budget.
    pub fn update(&mut self, y: &DenseVector) -> Result<()> {
        self.y_sum.add_assign(y)?;
        self.t += 1;
        self.mean = self.y_sum.scaled(1.0 / self.t as f64);
        self.tau = self.schedule.budget(self.t);
        Ok(())
    }
}

/// Online iterative soft thresholding baseline. The iterate stays dense;
/// loss accounting uses it as-is.
#[derive(Debug, Clone)]
pub struct OistState {
    x: Vec<f64>,
    step: f64,
    lambda: f64,
}

impl OistState {
    pub fn new(signal_dim: usize, step: f64, lambda: f64) -> Result<Self> {
        if !(step > 0.0) || !step.is_finite() {
            return Err(Error::InvalidArgument(format!("OIST step must be positive, got {step}")));
        }
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "OIST lambda must be nonnegative, got {lambda}"
            )));
        }
        Ok(Self { x: vec![0.0; signal_dim], step, lambda })
    }

    /// Step size `0.02 ||phi||^-2` from the benchmark configuration.
    pub fn paper_step(phi: &MeasurementMatrix) -> f64 {
        0.02 / (phi.spectral_norm() * phi.spectral_norm())
    }

    pub fn step_size(&self) -> f64 {
        self.step
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn iterate(&self) -> &[f64] {
        &self.x
    }

    /// Support size of the current iterate, recorded as a diagnostic.
    pub fn support_size(&self) -> usize {
        self.x.iter().filter(|v| **v != 0.0).count()
    }

    pub fn predict(&self) -> Result<DenseVector> {
        DenseVector::new(self.x.clone())
    }

    /// One soft-thresholded gradient step on the revealed measurement:
    /// `x <- S_{mu lambda}(x + mu phi^T (y - phi x))`.
    pub fn step(&mut self, phi: &MeasurementMatrix, y: &DenseVector) -> Result<()> {
        check_dim("OistState::step", phi.rows(), y.dim())?;
        check_dim("OistState::step", phi.cols(), self.x.len())?;
        let mut fx = vec![0.0; phi.rows()];
        phi.mul_dense_into(&self.x, &mut fx);
        for (f, yv) in fx.iter_mut().zip(y.as_slice()) {
            *f = yv - *f;
        }
        let mut grad = vec![0.0; phi.cols()];
        phi.tr_mul_into(&fx, &mut grad);
        let threshold = self.step * self.lambda;
        for (xj, gj) in self.x.iter_mut().zip(&grad) {
            let v = *xj + self.step * gj;
            *xj = soft_threshold(v, threshold);
        }
        Ok(())
    }
}

fn soft_threshold(v: f64, threshold: f64) -> f64 {
    if v > threshold {
        v - threshold
    } else if v < -threshold {
        v + threshold
    } else {
        0.0
    }
}

/// Exact follow-the-leader prediction: the global minimizer of
/// `||history_mean - phi x||` over all k-sparse vectors, found by exhaustive
/// support enumeration. Ties go to the lexicographically smallest support.
pub fn exact_ftl_predict(
    history_mean: &DenseVector,
    phi: &MeasurementMatrix,
    k: usize,
) -> Result<SparseVector> {
    let fit = exhaustive_sparse_fit(phi, history_mean, k, EXACT_FTL_GUARD)?;
    Ok(fit.minimizer)
}

/// Exact-FTL run as an online policy on small instances.
#[derive(Debug, Clone)]
pub struct ExactFtlState {
    t: u64,
    y_sum: DenseVector,
    mean: DenseVector,
    solves: u64,
}

impl ExactFtlState {
    pub fn new(measurement_dim: usize) -> Self {
        Self {
            t: 0,
            y_sum: DenseVector::zeros(measurement_dim),
            mean: DenseVector::zeros(measurement_dim),
            solves: 0,
        }
    }

    pub fn predict(&mut self, phi: &MeasurementMatrix, k: usize) -> Result<SparseVector> {
        if self.t == 0 {
            return Ok(SparseVector::zero(phi.cols()));
        }
        self.solves += 1;
        exact_ftl_predict(&self.mean, phi, k)
    }

    pub fn update(&mut self, y: &DenseVector) -> Result<()> {
        self.y_sum.add_assign(y)?;
        self.t += 1;
        self.mean = self.y_sum.scaled(1.0 / self.t as f64);
        Ok(())
    }

    pub fn solves(&self) -> u64 {
        self.solves
    }
}

/// A policy's per-round prediction: sparse for FTASL/FTL, dense for OIST.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicyOutput {
    Sparse(SparseVector),
    Dense(DenseVector),
}

impl PolicyOutput {
    /// `phi x` for the prediction `x`.
    pub fn predicted_measurement(&self, phi: &MeasurementMatrix) -> Result<DenseVector> {
        match self {
            PolicyOutput::Sparse(x) => crate::linalg::matvec(phi, x),
            PolicyOutput::Dense(x) => {
                check_dim("PolicyOutput::predicted_measurement", phi.cols(), x.dim())?;
                DenseVector::new(phi.mul_dense(x.as_slice())?)
            }
        }
    }

    pub fn support_size(&self) -> usize {
        match self {
            PolicyOutput::Sparse(x) => x.support_size(),
            PolicyOutput::Dense(x) => x.as_slice().iter().filter(|v| **v != 0.0).count(),
        }
    }

    pub fn as_sparse(&self) -> Option<&SparseVector> {
        match self {
            PolicyOutput::Sparse(x) => Some(x),
            PolicyOutput::Dense(_) => None,
        }
    }
}

/// Uniform driver over the concrete policies, used by the experiment loop.
#[derive(Debug, Clone)]
pub enum Policy {
    Ftasl(FtaslState),
    Oist(OistState),
    ExactFtl(ExactFtlState),
}

impl Policy {
    pub fn predict(&mut self, phi: &MeasurementMatrix, k: usize) -> Result<PolicyOutput> {
        match self {
            Policy::Ftasl(s) => Ok(PolicyOutput::Sparse(s.predict(phi, k)?)),
            Policy::Oist(s) => Ok(PolicyOutput::Dense(s.predict()?)),
            Policy::ExactFtl(s) => Ok(PolicyOutput::Sparse(s.predict(phi, k)?)),
        }
    }

    pub fn update(&mut self, phi: &MeasurementMatrix, y: &DenseVector) -> Result<()> {
        match self {
            Policy::Ftasl(s) => s.update(y),
            Policy::Oist(s) => s.step(phi, y),
            Policy::ExactFtl(s) => s.update(y),
        }
    }

    /// Solver invocations so far (exhaustive solves for the FTL oracle,
    /// zero for OIST).
    pub fn alg_invocations(&self) -> u64 {
        match self {
            Policy::Ftasl(s) => s.alg_invocations(),
            Policy::Oist(_) => 0,
            Policy::ExactFtl(s) => s.solves(),
        }
    }

    pub fn emits_sparse(&self) -> bool {
        !matches!(self, Policy::Oist(_))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::matvec;
    use crate::rng::{sample_gaussian_matrix, RngStream};
    use crate::solvers::default_step;

    fn rip_instance(seed: u64, m: usize, n: usize, k: usize) -> (MeasurementMatrix, SparseVector) {
        let mut rng = RngStream::new(seed);
        let phi = sample_gaussian_matrix(m, n, 1.0 / (m as f64).sqrt(), &mut rng).unwrap();
        let support = rng.sample_support(n, k).unwrap();
        let values: Vec<f64> = (0..k).map(|_| 0.25 + 0.75 * rng.uniform()).collect();
        let mut u = SparseVector::new(n, support, values).unwrap();
        if u.norm() > 1.0 {
            u = u.scaled(1.0 / u.norm()).unwrap();
        }
        (phi, u)
    }

    fn new_ftasl(variant: FtaslVariant, solver: SolverKind, m: usize, n: usize) -> FtaslState {
        FtaslState::new(variant, solver, default_step(solver), TauSchedule::Log2, m, n)
    }

    #[test]
    fn tau_schedule_values() {
        let s = TauSchedule::Log2;
        assert_eq!(s.budget(0), 0);
        assert_eq!(s.budget(1), 1);
        assert_eq!(s.budget(3), 2);
        assert_eq!(s.budget(7), 3); // ceil(log2 8) = 3
        assert_eq!(s.budget(8), 4);
        let n = TauSchedule::Natural;
        assert_eq!(n.budget(0), 0);
        assert_eq!(n.budget(1), 1);
        assert_eq!(n.budget(7), 3); // ceil(ln 8) = 3
    }

    #[test]
    fn first_round_prediction_is_zero_for_both_variants() {
        let (phi, _) = rip_instance(1, 8, 16, 3);
        for variant in [FtaslVariant::Agile, FtaslVariant::Lazy] {
            let mut st = new_ftasl(variant, SolverKind::Iht, 8, 16);
            let x = st.predict(&phi, 3).unwrap();
            assert_eq!(x, SparseVector::zero(16));
            assert_eq!(st.alg_invocations(), 1);
        }
    }

    #[test]
    fn update_first_round_mean_and_tau() {
        let (phi, _) = rip_instance(2, 2, 4, 1);
        let mut st = new_ftasl(FtaslVariant::Agile, SolverKind::Iht, 2, 4);
        let _ = st.predict(&phi, 1).unwrap();
        st.update(&DenseVector::new(vec![2.0, 4.0]).unwrap()).unwrap();
        assert_eq!(st.mean().as_slice(), &[2.0, 4.0]);
        assert_eq!(st.tau(), 1);
    }

    #[test]
    fn constant_stream_mean_is_exact() {
        let (phi, _) = rip_instance(3, 4, 8, 2);
        let mut st = new_ftasl(FtaslVariant::Agile, SolverKind::Htp, 4, 8);
        let y = DenseVector::new(vec![0.5, -1.0, 2.0, 0.0]).unwrap();
        for _ in 0..9 {
            let _ = st.predict(&phi, 2).unwrap();
            st.update(&y).unwrap();
        }
        assert_eq!(st.mean(), &y);
    }

    #[test]
    fn lazy_replays_prediction_between_powers_of_two() {
        let (phi, u) = rip_instance(4, 16, 32, 3);
        let y = matvec(&phi, &u).unwrap();
        let mut st = new_ftasl(FtaslVariant::Lazy, SolverKind::Htp, 16, 32);
        let mut xs = Vec::new();
        for _ in 1..=5 {
            xs.push(st.predict(&phi, 3).unwrap());
            st.update(&y).unwrap();
        }
        // rounds 1, 2, 4 recompute; rounds 3 and 5 replay
        assert_eq!(st.alg_invocations(), 3);
        assert_eq!(xs[2], xs[1]);
        assert_eq!(xs[4], xs[3]);
    }

    #[test]
    fn lazy_matches_agile_at_recompute_rounds() {
        let (phi, u) = rip_instance(5, 16, 32, 3);
        let mut rng = RngStream::new(99);
        let mut lazy = new_ftasl(FtaslVariant::Lazy, SolverKind::Htp, 16, 32);
        let mut agile = new_ftasl(FtaslVariant::Agile, SolverKind::Htp, 16, 32);
        for t in 1u64..=32 {
            let noise: Vec<f64> = (0..16).map(|_| 0.1 * rng.standard_normal()).collect();
            let y = DenseVector::new(
                matvec(&phi, &u).unwrap().as_slice().iter().zip(&noise).map(|(a, b)| a + b).collect(),
            )
            .unwrap();
            let xl = lazy.predict(&phi, 3).unwrap();
            let xa = agile.predict(&phi, 3).unwrap();
            if t.is_power_of_two() {
                assert_eq!(xl, xa, "diverged at recompute round {t}");
            }
            lazy.update(&y).unwrap();
            agile.update(&y).unwrap();
        }
    }

    #[test]
    fn invocation_counts_small_horizon() {
        let (phi, u) = rip_instance(6, 8, 16, 2);
        let y = matvec(&phi, &u).unwrap();
        let mut lazy = new_ftasl(FtaslVariant::Lazy, SolverKind::Iht, 8, 16);
        let mut agile = new_ftasl(FtaslVariant::Agile, SolverKind::Iht, 8, 16);
        for _ in 1..=64 {
            let _ = lazy.predict(&phi, 2).unwrap();
            let _ = agile.predict(&phi, 2).unwrap();
            lazy.update(&y).unwrap();
            agile.update(&y).unwrap();
        }
        assert_eq!(agile.alg_invocations(), 64);
        // recomputes at 1, 2, 4, 8, 16, 32, 64
        assert_eq!(lazy.alg_invocations(), 7);
    }

    #[test]
    fn agile_tracks_constant_signal() {
        // noiseless constant stream: b_63 = phi u exactly, so the round-64
        // prediction obeys the solver contraction at tau = ceil(log2 64) = 6
        let (phi, u) = rip_instance(7, 64, 128, 5);
        let y = matvec(&phi, &u).unwrap();
        let mut st = new_ftasl(FtaslVariant::Agile, SolverKind::Htp, 64, 128);
        let mut last = SparseVector::zero(128);
        for _ in 1..=64 {
            last = st.predict(&phi, 5).unwrap();
            st.update(&y).unwrap();
        }
        assert_eq!(st.tau(), TauSchedule::Log2.budget(64));
        let err = last.distance(&u).unwrap();
        assert!(err <= 0.5f64.powi(6) * u.norm() + 1e-8, "err {err}");
    }

    #[test]
    fn oist_fixed_point_and_plain_gradient_step() {
        let phi = MeasurementMatrix::identity(3);
        let mut st = OistState::new(3, 1.0, 0.0).unwrap();
        st.step(&phi, &DenseVector::zeros(3)).unwrap();
        assert_eq!(st.iterate(), &[0.0, 0.0, 0.0]);

        let v = DenseVector::new(vec![1.5, -2.0, 0.25]).unwrap();
        st.step(&phi, &v).unwrap();
        assert_eq!(st.iterate(), v.as_slice());
    }

    #[test]
    fn oist_soft_threshold_shrinks_and_zeroes() {
        let phi = MeasurementMatrix::identity(2);
        let mut st = OistState::new(2, 1.0, 0.5).unwrap();
        st.step(&phi, &DenseVector::new(vec![2.0, 0.3]).unwrap()).unwrap();
        // shrink by mu*lambda = 0.5; 0.3 falls below the threshold
        assert_eq!(st.iterate(), &[1.5, 0.0]);
    }

    #[test]
    fn oist_rejects_bad_parameters() {
        assert!(OistState::new(3, 0.0, 0.01).is_err());
        assert!(OistState::new(3, 1.0, -0.1).is_err());
    }

    #[test]
    fn oist_iterates_stay_bounded_on_synthetic_stream() {
        let (phi, u) = rip_instance(8, 32, 64, 4);
        let mut rng = RngStream::new(17);
        let mu = OistState::paper_step(&phi);
        let mut st = OistState::new(64, mu, 0.01).unwrap();
        let clean = matvec(&phi, &u).unwrap();
        let mut max_norm: f64 = 0.0;
        for _ in 0..4096 {
            let y = DenseVector::new(
                clean.as_slice().iter().map(|c| c + rng.standard_normal()).collect(),
            )
            .unwrap();
            st.step(&phi, &y).unwrap();
            let norm = st.iterate().iter().map(|v| v * v).sum::<f64>().sqrt();
            max_norm = max_norm.max(norm);
        }
        assert!(max_norm.is_finite() && max_norm < 100.0, "iterate grew to {max_norm}");
    }

    #[test]
    fn exact_ftl_identity_picks_largest_coordinate() {
        let phi = MeasurementMatrix::identity(4);
        let b = DenseVector::new(vec![0.0, 9.0, 0.0, 1.0]).unwrap();
        let x = exact_ftl_predict(&b, &phi, 1).unwrap();
        assert_eq!(x.support(), &[1]);
        assert_eq!(x.values(), &[9.0]);
    }

    #[test]
    fn exact_ftl_recovers_sparse_signal_exactly() {
        let (phi, u) = rip_instance(9, 8, 12, 2);
        let b = matvec(&phi, &u).unwrap();
        let x = exact_ftl_predict(&b, &phi, 2).unwrap();
        assert!(x.distance(&u).unwrap() <= 1e-10);
    }

    #[test]
    fn exact_ftl_guard_rejects_large_enumerations() {
        let (phi, _) = rip_instance(10, 8, 40, 2);
        let b = DenseVector::zeros(8);
        match exact_ftl_predict(&b, &phi, 8) {
            Err(Error::CombinatorialGuard { .. }) => {}
            other => panic!("expected guard error, got {other:?}"),
        }
    }

    #[test]
    fn exact_ftl_matches_independent_brute_force() {
        for seed in 0..10 {
            let (phi, _) = rip_instance(20 + seed, 8, 12, 2);
            let mut rng = RngStream::new(700 + seed);
            let b = DenseVector::new((0..8).map(|_| rng.standard_normal()).collect()).unwrap();
            let got = exact_ftl_predict(&b, &phi, 2).unwrap();

            // independent oracle: nalgebra SVD least squares over all supports
            let target = nalgebra::DVector::from_column_slice(b.as_slice());
            let mut best: Option<(f64, Vec<usize>, Vec<f64>)> = None;
            for i in 0..12usize {
                for j in i + 1..12 {
                    let sub = nalgebra::DMatrix::from_fn(8, 2, |r, c| {
                        phi.entry(r, if c == 0 { i } else { j })
                    });
                    let svd = sub.clone().svd(true, true);
                    let sol = svd.solve(&target, 1e-12).unwrap();
                    let res = (&target - sub * &sol).norm_squared();
                    if best.as_ref().map_or(true, |(r, _, _)| res < *r - 1e-12) {
                        best = Some((res, vec![i, j], vec![sol[0], sol[1]]));
                    }
                }
            }
            let (_, supp, vals) = best.unwrap();
            assert_eq!(got.support(), &supp[..]);
            for (g, w) in got.values().iter().zip(&vals) {
                assert!((g - w).abs() <= 1e-8, "{g} vs {w}");
            }
        }
    }

    #[test]
    fn exact_ftl_dominates_ftasl_in_hindsight_objective() {
        // the exact leader achieves a hindsight objective no worse than the
        // approximate leader's, at every round
        let (phi, u) = rip_instance(11, 8, 12, 2);
        let mut rng = RngStream::new(55);
        let clean = matvec(&phi, &u).unwrap();
        let mut ftasl = new_ftasl(FtaslVariant::Agile, SolverKind::Iht, 8, 12);
        let mut ftl = ExactFtlState::new(8);
        for _ in 1..=48 {
            let xf = ftl.predict(&phi, 2).unwrap();
            let xa = ftasl.predict(&phi, 2).unwrap();
            let mean = ftasl.mean().clone();
            let obj_ftl = crate::linalg::residual_loss(&phi, &xf, &mean).unwrap();
            let obj_ftasl = crate::linalg::residual_loss(&phi, &xa, &mean).unwrap();
            assert!(obj_ftl <= obj_ftasl + 1e-12, "{obj_ftl} > {obj_ftasl}");
            let y = DenseVector::new(
                clean.as_slice().iter().map(|c| c + rng.standard_normal()).collect(),
            )
            .unwrap();
            ftasl.update(&y).unwrap();
            ftl.update(&y).unwrap();
        }
    }

    #[test]
    fn predictions_stay_k_sparse() {
        let (phi, u) = rip_instance(12, 16, 32, 4);
        let mut rng = RngStream::new(13);
        let clean = matvec(&phi, &u).unwrap();
        for solver in [SolverKind::Iht, SolverKind::Htp] {
            let mut st = new_ftasl(FtaslVariant::Agile, solver, 16, 32);
            for _ in 1..=40 {
                let x = st.predict(&phi, 4).unwrap();
                assert!(x.support_size() <= 4);
                let y = DenseVector::new(
                    clean.as_slice().iter().map(|c| c + rng.standard_normal()).collect(),
                )
                .unwrap();
                st.update(&y).unwrap();
            }
        }
    }
}
