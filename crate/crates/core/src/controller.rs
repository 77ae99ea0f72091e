//! Executable controllers: the centralized single-estimator law and the
//! two-player dual-estimator law.

use crate::centralized::CentralizedSolution;
use crate::error::{Error, Result};
use crate::linalg::{Mat, Vector};
use crate::problem::{BlockDims, ProblemSpec};
use crate::synthesis::TwoPlayerGains;

/// Conditional-mean estimates carried between steps.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    pub t: usize,
    /// Player 2's (and the centralized) estimate of the state.
    pub z: Vector,
    /// Player 1's estimate of the state.
    pub zhat: Vector,
}

impl ControllerState {
    pub fn initial(mu_init: &Vector) -> Self {
        ControllerState { t: 0, z: mu_init.clone(), zhat: mu_init.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControllerKind {
    Centralized,
    TwoPlayer,
}

impl ControllerKind {
    pub fn label(self) -> &'static str {
        match self {
            ControllerKind::Centralized => "centralized",
            ControllerKind::TwoPlayer => "two-player",
        }
    }
}

/// A linear controller in the dual-estimator form with arbitrary gain
/// schedules. The centralized kind ignores `k_hat`, `l_hat` and `zhat`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearController {
    pub kind: ControllerKind,
    pub dims: BlockDims,
    pub k: Vec<Mat>,
    pub l: Vec<Mat>,
    pub k_hat: Vec<Mat>,
    pub l_hat: Vec<Mat>,
}

fn check_shapes(name: &str, seq: &[Mat], horizon: usize, shape: (usize, usize)) -> Result<()> {
    if seq.len() != horizon {
        return Err(Error::Dimension(format!("{name} has {} stages, expected {horizon}", seq.len())));
    }
    for (t, m) in seq.iter().enumerate() {
        if m.shape() != shape {
            return Err(Error::Dimension(format!(
                "{name}_{t} expected {}x{}, found {}x{}",
                shape.0,
                shape.1,
                m.nrows(),
                m.ncols()
            )));
        }
    }
    Ok(())
}

fn first_nonzero(m: &Mat, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> Option<(usize, usize, f64)> {
    for j in cols {
        for i in rows.clone() {
            if m[(i, j)] != 0.0 {
                return Some((i, j, m[(i, j)]));
            }
        }
    }
    None
}

/// Checks `L̂E₂ = 0` and `E₁ᵀK̂ = 0` exactly.
pub fn check_masks(dims: &BlockDims, k_hat: &[Mat], l_hat: &[Mat]) -> Result<()> {
    for (t, kh) in k_hat.iter().enumerate() {
        if let Some((i, j, v)) = first_nonzero(kh, dims.u1(), 0..kh.ncols()) {
            return Err(Error::Structure(format!("K_hat_{t} first block-row entry ({i},{j}) = {v:e}, must be 0")));
        }
    }
    for (t, lh) in l_hat.iter().enumerate() {
        if let Some((i, j, v)) = first_nonzero(lh, 0..lh.nrows(), dims.y2()) {
            return Err(Error::Structure(format!("L_hat_{t} second block-column entry ({i},{j}) = {v:e}, must be 0")));
        }
    }
    Ok(())
}

impl LinearController {
    pub fn centralized(dims: BlockDims, centralized: &CentralizedSolution) -> Self {
        LinearController {
            kind: ControllerKind::Centralized,
            dims,
            k: centralized.k.clone(),
            l: centralized.l.clone(),
            k_hat: centralized.k.clone(),
            l_hat: centralized.l.clone(),
        }
    }

    pub fn two_player(dims: BlockDims, centralized: &CentralizedSolution, gains: &TwoPlayerGains) -> Self {
        LinearController {
            kind: ControllerKind::TwoPlayer,
            dims,
            k: centralized.k.clone(),
            l: centralized.l.clone(),
            k_hat: gains.k_hat.clone(),
            l_hat: gains.l_hat.clone(),
        }
    }

    /// A two-player controller with arbitrary admissible gains.
    pub fn custom(dims: BlockDims, k: Vec<Mat>, l: Vec<Mat>, k_hat: Vec<Mat>, l_hat: Vec<Mat>) -> Result<Self> {
        let horizon = k.len();
        let (n, m, p) = (dims.n(), dims.m(), dims.p());
        check_shapes("K", &k, horizon, (m, n))?;
        check_shapes("L", &l, horizon, (n, p))?;
        check_shapes("K_hat", &k_hat, horizon, (m, n))?;
        check_shapes("L_hat", &l_hat, horizon, (n, p))?;
        check_masks(&dims, &k_hat, &l_hat)?;
        Ok(LinearController { kind: ControllerKind::TwoPlayer, dims, k, l, k_hat, l_hat })
    }

    pub fn horizon(&self) -> usize {
        self.k.len()
    }

    pub fn label(&self) -> &'static str {
        self.kind.label()
    }

    pub fn initial_state(&self, spec: &ProblemSpec) -> ControllerState {
        ControllerState::initial(&spec.plant.mu_init)
    }

    /// Control action at the current state; uses no measurement from time `t`.
    pub fn action(&self, state: &ControllerState) -> Vector {
        let t = state.t;
        match self.kind {
            ControllerKind::Centralized => &self.k[t] * &state.z,
            ControllerKind::TwoPlayer => &self.k[t] * &state.zhat + &self.k_hat[t] * (&state.z - &state.zhat),
        }
    }

    /// Reads `y_t`, computes `u_t` from the current estimates, then advances
    /// the estimates with `(y_t, u_t)`.
    pub fn step(&self, spec: &ProblemSpec, state: &ControllerState, y: &Vector) -> Result<(Vector, ControllerState)> {
        let t = state.t;
        if t >= self.horizon() || t >= spec.horizon() {
            return Err(Error::HorizonExceeded { t, horizon: self.horizon().min(spec.horizon()) });
        }
        if y.len() != self.dims.p() {
            return Err(Error::Dimension(format!("measurement y_{t} has length {}, expected {}", y.len(), self.dims.p())));
        }
        let dy = &spec.plant.dynamics[t];
        let u = self.action(state);
        let bu = &dy.b * &u;
        let z = &dy.a * &state.z + &bu - &self.l[t] * (y - &dy.c * &state.z);
        let zhat = match self.kind {
            ControllerKind::Centralized => z.clone(),
            ControllerKind::TwoPlayer => {
                debug_assert!(check_masks(&self.dims, &self.k_hat[t..=t], &self.l_hat[t..=t]).is_ok());
                let bu_hat = &dy.b * (&self.k[t] * &state.zhat);
                &dy.a * &state.zhat + bu_hat - &self.l_hat[t] * (y - &dy.c * &state.zhat)
            }
        };
        Ok((u, ControllerState { t: t + 1, z, zhat }))
    }
}

/// One step of the two-player dual-estimator law.
pub fn step_two_player(
    state: &ControllerState,
    y: &Vector,
    spec: &ProblemSpec,
    centralized: &CentralizedSolution,
    gains: &TwoPlayerGains,
) -> Result<(Vector, ControllerState)> {
    LinearController::two_player(spec.dims, centralized, gains).step(spec, state, y)
}

/// One step of the centralized law `u = Kz`.
pub fn step_centralized(
    state: &ControllerState,
    y: &Vector,
    spec: &ProblemSpec,
    centralized: &CentralizedSolution,
) -> Result<(Vector, ControllerState)> {
    LinearController::centralized(spec.dims, centralized).step(spec, state, y)
}
