//! Kalman filtering over a linear-Gaussian state-space model.
//!
//! The model is
//!
//! `x_t = F x_{t-1} + w_t`,  `w_t ~ N(0, R_x)`
//! `y_t = H x_t + v_t`,      `v_t ~ N(0, R_y)`
//!
//! [`kalman_step`] advances the filtered state by one observation.
//! [`batch_map_oracle`] solves the same estimation problem as one dense joint
//! Gaussian system over the whole trajectory; because the joint posterior is
//! Gaussian, its last block must agree with the sequential filter, which makes
//! it an independent cross-check. [`step_cost`] evaluates the quadratic that a
//! single filter step minimizes, used to validate update optimality.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative tolerance for symmetry checks on covariance matrices.
const SYMMETRY_TOL: f64 = 1e-10;
/// Eigenvalues of a covariance may dip below zero by at most this fraction of
/// the trace before the matrix is rejected.
const PSD_TOL: f64 = 1e-10;

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    0.5 * (m + m.transpose())
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

fn check_symmetric(m: &DMatrix<f64>, name: &str) -> Result<()> {
    let scale = max_abs(m).max(1.0);
    let asym = (m - m.transpose()).iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::Input(format!(
            "{name} is not symmetric (max asymmetry {asym:.3e})"
        )));
    }
    Ok(())
}

fn check_finite(iter: impl Iterator<Item = f64>, name: &str) -> Result<()> {
    if iter.into_iter().any(|v| !v.is_finite()) {
        return Err(Error::Input(format!("{name} contains non-finite values")));
    }
    Ok(())
}

/// Time-invariant linear-Gaussian model: transition `F`, observation `H`,
/// state noise covariance `R_x` (PSD), observation noise covariance `R_y`
/// (positive definite).
#[derive(Debug, Clone)]
pub struct LinearModel {
    transition: DMatrix<f64>,
    observation: DMatrix<f64>,
    state_noise_cov: DMatrix<f64>,
    obs_noise_cov: DMatrix<f64>,
}

impl LinearModel {
    /// Validate dimensions, symmetry and definiteness, then build the model.
    pub fn new(
        transition: DMatrix<f64>,
        observation: DMatrix<f64>,
        state_noise_cov: DMatrix<f64>,
        obs_noise_cov: DMatrix<f64>,
    ) -> Result<Self> {
        let d = transition.nrows();
        if d == 0 || transition.ncols() != d {
            return Err(Error::Dimension(format!(
                "transition matrix must be square and non-empty, got {}x{}",
                transition.nrows(),
                transition.ncols()
            )));
        }
        let m = observation.nrows();
        if m == 0 || observation.ncols() != d {
            return Err(Error::Dimension(format!(
                "observation matrix must be Mx{d} with M >= 1, got {}x{}",
                observation.nrows(),
                observation.ncols()
            )));
        }
        if state_noise_cov.shape() != (d, d) {
            return Err(Error::Dimension(format!(
                "state noise covariance must be {d}x{d}, got {}x{}",
                state_noise_cov.nrows(),
                state_noise_cov.ncols()
            )));
        }
        if obs_noise_cov.shape() != (m, m) {
            return Err(Error::Dimension(format!(
                "observation noise covariance must be {m}x{m}, got {}x{}",
                obs_noise_cov.nrows(),
                obs_noise_cov.ncols()
            )));
        }
        for (mat, name) in [
            (&transition, "transition matrix"),
            (&observation, "observation matrix"),
            (&state_noise_cov, "state noise covariance"),
            (&obs_noise_cov, "observation noise covariance"),
        ] {
            check_finite(mat.iter().copied(), name)?;
        }
        check_symmetric(&state_noise_cov, "state noise covariance")?;
        check_symmetric(&obs_noise_cov, "observation noise covariance")?;

        let trace = state_noise_cov.trace().max(0.0);
        let min_eig = state_noise_cov
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .fold(f64::INFINITY, |a, &v| a.min(v));
        if min_eig < -PSD_TOL * trace.max(1.0) {
            return Err(Error::Input(format!(
                "state noise covariance is not positive semidefinite (min eigenvalue {min_eig:.3e})"
            )));
        }
        if obs_noise_cov.clone().cholesky().is_none() {
            return Err(Error::Input(
                "observation noise covariance is not positive definite".into(),
            ));
        }

        Ok(Self {
            transition,
            observation,
            state_noise_cov: symmetrize(&state_noise_cov),
            obs_noise_cov: symmetrize(&obs_noise_cov),
        })
    }

    /// State dimension `D`.
    pub fn state_dim(&self) -> usize {
        self.transition.nrows()
    }

    /// Observation dimension `M`.
    pub fn obs_dim(&self) -> usize {
        self.observation.nrows()
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.transition
    }

    pub fn observation(&self) -> &DMatrix<f64> {
        &self.observation
    }

    pub fn state_noise_cov(&self) -> &DMatrix<f64> {
        &self.state_noise_cov
    }

    pub fn obs_noise_cov(&self) -> &DMatrix<f64> {
        &self.obs_noise_cov
    }
}

/// Filtered state estimate and its error covariance.
///
/// The covariance is kept symmetric (re-symmetrized after every update) and
/// must stay positive semidefinite up to a small tolerance relative to its
/// trace.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    estimate: DVector<f64>,
    covariance: DMatrix<f64>,
}

impl FilterState {
    pub fn new(estimate: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let d = estimate.len();
        if covariance.shape() != (d, d) {
            return Err(Error::Dimension(format!(
                "covariance must be {d}x{d} to match a {d}-dimensional estimate, got {}x{}",
                covariance.nrows(),
                covariance.ncols()
            )));
        }
        check_finite(estimate.iter().copied(), "state estimate")?;
        check_finite(covariance.iter().copied(), "state covariance")?;
        check_symmetric(&covariance, "state covariance")?;
        let floor = -PSD_TOL * covariance.trace().abs().max(1.0);
        if covariance.diagonal().iter().any(|&v| v < floor) {
            return Err(Error::Input(
                "state covariance has a significantly negative diagonal entry".into(),
            ));
        }
        Ok(Self {
            covariance: symmetrize(&covariance),
            estimate,
        })
    }

    pub fn dim(&self) -> usize {
        self.estimate.len()
    }

    pub fn estimate(&self) -> &DVector<f64> {
        &self.estimate
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }
}

fn check_dims(state: &FilterState, observation: &DVector<f64>, model: &LinearModel) -> Result<()> {
    if state.dim() != model.state_dim() {
        return Err(Error::Dimension(format!(
            "state dimension {} does not match model state dimension {}",
            state.dim(),
            model.state_dim()
        )));
    }
    if observation.len() != model.obs_dim() {
        return Err(Error::Dimension(format!(
            "observation dimension {} does not match model observation dimension {}",
            observation.len(),
            model.obs_dim()
        )));
    }
    check_finite(observation.iter().copied(), "observation")
}

/// Predicted (a-priori) mean and covariance one step ahead of `state`.
fn predict(state: &FilterState, model: &LinearModel) -> (DVector<f64>, DMatrix<f64>) {
    let x_pred = model.transition() * state.estimate();
    let p_pred = model.transition() * state.covariance() * model.transition().transpose()
        + model.state_noise_cov();
    (x_pred, symmetrize(&p_pred))
}

/// Advance the filter by one observation.
///
/// Predicts through the transition, then corrects with the observation
/// residual. The Kalman gain is obtained from a Cholesky solve of the
/// innovation covariance `H P H^T + R_y` rather than an explicit inverse, and
/// the posterior covariance `(I - G H) P` is re-symmetrized before it is
/// returned.
pub fn kalman_step(
    state: &FilterState,
    observation: &DVector<f64>,
    model: &LinearModel,
) -> Result<FilterState> {
    check_dims(state, observation, model)?;
    let d = model.state_dim();

    let (x_pred, p_pred) = predict(state, model);

    let h = model.observation();
    let innovation_cov = h * &p_pred * h.transpose() + model.obs_noise_cov();
    if innovation_cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::Degenerate(
            "innovation covariance (H P H^T + R_y) has non-finite entries".into(),
        ));
    }
    let chol = innovation_cov.cholesky().ok_or_else(|| {
        Error::Degenerate("innovation covariance (H P H^T + R_y) is not positive definite".into())
    })?;

    // gain = P_pred H^T S^{-1}, via S X = (P_pred H^T)^T
    let ph_t = &p_pred * h.transpose();
    let gain = chol.solve(&ph_t.transpose()).transpose();

    let residual = observation - h * &x_pred;
    let estimate = &x_pred + &gain * residual;
    let covariance = symmetrize(&((DMatrix::identity(d, d) - &gain * h) * &p_pred));

    if estimate.iter().any(|v| !v.is_finite()) || covariance.iter().any(|v| !v.is_finite()) {
        return Err(Error::Degenerate(
            "filter state became non-finite after update".into(),
        ));
    }
    FilterState::new(estimate, covariance)
}

/// Upper bound on trajectory length accepted by [`batch_map_oracle`].
pub const BATCH_ORACLE_MAX_STEPS: usize = 50;
/// Upper bound on `state_dim * steps` accepted by [`batch_map_oracle`].
pub const BATCH_ORACLE_MAX_SIZE: usize = 500;

/// Jointly estimate a whole trajectory by one dense Gaussian solve.
///
/// The trajectory prior (initial state rolled forward through the possibly
/// time-varying transitions, with the full cross-time covariance) and all
/// observation likelihoods are stacked into a single joint Gaussian; the
/// returned vectors are the posterior mean of `(x_0, ..., x_T)`, which for a
/// Gaussian coincides with the MAP trajectory. `models[t]` supplies the
/// transition into step `t + 1` and the observation model for `observations[t]`.
///
/// The last component equals the sequential filter's final estimate, so this
/// serves as an implementation-independent reference for [`kalman_step`]. The
/// dense solve is limited to short trajectories (see
/// [`BATCH_ORACLE_MAX_STEPS`], [`BATCH_ORACLE_MAX_SIZE`]).
pub fn batch_map_oracle(
    models: &[LinearModel],
    observations: &[DVector<f64>],
    init: &FilterState,
) -> Result<Vec<DVector<f64>>> {
    let steps = observations.len();
    if steps == 0 {
        return Err(Error::Input("batch oracle needs at least one observation".into()));
    }
    if models.len() != steps {
        return Err(Error::Dimension(format!(
            "got {} models for {} observations",
            models.len(),
            steps
        )));
    }
    let d = init.dim();
    if steps > BATCH_ORACLE_MAX_STEPS || d * steps > BATCH_ORACLE_MAX_SIZE {
        return Err(Error::Input(format!(
            "batch oracle limited to {BATCH_ORACLE_MAX_STEPS} steps and state_dim*steps <= \
             {BATCH_ORACLE_MAX_SIZE}, got steps={steps}, state_dim={d}"
        )));
    }
    let mut obs_dims = Vec::with_capacity(steps);
    for (t, (model, obs)) in models.iter().zip(observations).enumerate() {
        if model.state_dim() != d {
            return Err(Error::Dimension(format!(
                "model {t} has state dimension {}, expected {d}",
                model.state_dim()
            )));
        }
        if obs.len() != model.obs_dim() {
            return Err(Error::Dimension(format!(
                "observation {t} has dimension {}, model expects {}",
                obs.len(),
                model.obs_dim()
            )));
        }
        check_finite(obs.iter().copied(), "observation")?;
        obs_dims.push(obs.len());
    }

    let blocks = steps + 1;
    let joint_dim = blocks * d;
    let obs_total: usize = obs_dims.iter().sum();

    // Prior mean of each state block: the init rolled forward with no noise.
    let mut mean = DVector::zeros(joint_dim);
    mean.rows_mut(0, d).copy_from(init.estimate());
    for t in 1..blocks {
        let prev = mean.rows((t - 1) * d, d).into_owned();
        mean.rows_mut(t * d, d).copy_from(&(models[t - 1].transition() * prev));
    }

    // Full joint prior covariance over (x_0, ..., x_T):
    //   cov(x_t, x_t) = F cov(x_{t-1}, x_{t-1}) F^T + R_x
    //   cov(x_t, x_s) = F cov(x_{t-1}, x_s)        for s < t
    let mut cov = DMatrix::zeros(joint_dim, joint_dim);
    cov.view_mut((0, 0), (d, d)).copy_from(init.covariance());
    for t in 1..blocks {
        let f = models[t - 1].transition();
        for s in 0..t {
            let prev = cov.view(((t - 1) * d, s * d), (d, d)).into_owned();
            let block = f * prev;
            cov.view_mut((t * d, s * d), (d, d)).copy_from(&block);
            cov.view_mut((s * d, t * d), (d, d)).copy_from(&block.transpose());
        }
        let prev_diag = cov.view(((t - 1) * d, (t - 1) * d), (d, d)).into_owned();
        let diag = symmetrize(&(f * prev_diag * f.transpose() + models[t - 1].state_noise_cov()));
        cov.view_mut((t * d, t * d), (d, d)).copy_from(&diag);
    }

    // Stacked observation operator: y_t measures state block t + 1.
    let mut h_big = DMatrix::zeros(obs_total, joint_dim);
    let mut r_big = DMatrix::zeros(obs_total, obs_total);
    let mut y_stack = DVector::zeros(obs_total);
    let mut row = 0;
    for (t, model) in models.iter().enumerate() {
        let m = obs_dims[t];
        h_big.view_mut((row, (t + 1) * d), (m, d)).copy_from(model.observation());
        r_big.view_mut((row, row), (m, m)).copy_from(model.obs_noise_cov());
        y_stack.rows_mut(row, m).copy_from(&observations[t]);
        row += m;
    }

    let cov_ht = &cov * h_big.transpose();
    let s_big = symmetrize(&(&h_big * &cov_ht + r_big));
    if s_big.iter().any(|v| !v.is_finite()) {
        return Err(Error::Degenerate(
            "joint innovation covariance has non-finite entries".into(),
        ));
    }
    let chol = s_big.cholesky().ok_or_else(|| {
        Error::Degenerate("joint innovation covariance is singular; joint system unsolvable".into())
    })?;

    let innovation = y_stack - &h_big * &mean;
    let posterior = mean + &cov_ht * chol.solve(&innovation);

    Ok((0..blocks).map(|t| posterior.rows(t * d, d).into_owned()).collect())
}

/// Quadratic objective that one filter step implicitly minimizes:
/// the observation misfit weighted by `R_y^{-1}` plus the deviation from the
/// a-priori prediction weighted by the a-priori covariance inverse.
///
/// `state` is the previous filtered state; the a-priori quantities are derived
/// from it. The a-priori covariance must be positive definite.
pub fn step_cost(
    candidate: &DVector<f64>,
    state: &FilterState,
    observation: &DVector<f64>,
    model: &LinearModel,
) -> Result<f64> {
    check_dims(state, observation, model)?;
    if candidate.len() != model.state_dim() {
        return Err(Error::Dimension(format!(
            "candidate dimension {} does not match model state dimension {}",
            candidate.len(),
            model.state_dim()
        )));
    }

    let (x_pred, p_pred) = predict(state, model);
    let chol_p = p_pred.cholesky().ok_or_else(|| {
        Error::Degenerate("a-priori covariance (F P F^T + R_x) is not positive definite".into())
    })?;
    let chol_r = model.obs_noise_cov().clone().cholesky().ok_or_else(|| {
        Error::Degenerate("observation noise covariance is not positive definite".into())
    })?;

    let obs_residual = observation - model.observation() * candidate;
    let prior_residual = candidate - x_pred;
    let obs_term = obs_residual.dot(&chol_r.solve(&obs_residual));
    let prior_term = prior_residual.dot(&chol_p.solve(&prior_residual));
    Ok(obs_term + prior_term)
}
