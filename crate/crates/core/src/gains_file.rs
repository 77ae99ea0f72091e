//! JSON artifact holding synthesized gain and covariance schedules.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::controller::LinearController;
use crate::error::{Error, Result};
use crate::linalg::{serde_mats, Mat};
use crate::problem::{BlockDims, ProblemSpec};
use crate::synthesis::Synthesis;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainsFile {
    pub horizon: usize,
    pub dims: BlockDims,
    #[serde(rename = "L", with = "serde_mats")]
    pub l: Vec<Mat>,
    #[serde(rename = "K", with = "serde_mats")]
    pub k: Vec<Mat>,
    #[serde(rename = "L_hat", with = "serde_mats")]
    pub l_hat: Vec<Mat>,
    #[serde(rename = "K_hat", with = "serde_mats")]
    pub k_hat: Vec<Mat>,
    #[serde(rename = "Sigma", with = "serde_mats")]
    pub sigma: Vec<Mat>,
    #[serde(rename = "Sigma_hat", with = "serde_mats")]
    pub sigma_hat: Vec<Mat>,
    #[serde(rename = "P", with = "serde_mats")]
    pub p: Vec<Mat>,
    #[serde(rename = "P_hat", with = "serde_mats")]
    pub p_hat: Vec<Mat>,
    #[serde(rename = "J0")]
    pub j0: f64,
    #[serde(rename = "J_hat0")]
    pub j_hat0: f64,
}

impl GainsFile {
    pub fn from_synthesis(spec: &ProblemSpec, syn: &Synthesis) -> Self {
        let (c, g) = (&syn.centralized, &syn.gains);
        GainsFile {
            horizon: spec.horizon(),
            dims: spec.dims,
            l: c.l.clone(),
            k: c.k.clone(),
            l_hat: g.l_hat.clone(),
            k_hat: g.k_hat.clone(),
            sigma: c.sigma.clone(),
            sigma_hat: g.sigma_hat.clone(),
            p: c.p.clone(),
            p_hat: g.p_hat.clone(),
            j0: c.j0,
            j_hat0: g.j_hat0,
        }
    }

    /// Checks the echoed dims and horizon and every schedule's shape.
    pub fn check_against(&self, spec: &ProblemSpec) -> Result<()> {
        if self.dims != spec.dims {
            return Err(Error::Schema(format!("gains file dims {:?} do not match problem dims {:?}", self.dims, spec.dims)));
        }
        if self.horizon != spec.horizon() {
            return Err(Error::Schema(format!(
                "gains file horizon {} does not match problem horizon {}",
                self.horizon,
                spec.horizon()
            )));
        }
        let d = self.dims;
        let (n, m, p, t) = (d.n(), d.m(), d.p(), self.horizon);
        let checks: [(&str, &Vec<Mat>, usize, (usize, usize)); 8] = [
            ("L", &self.l, t, (n, p)),
            ("K", &self.k, t, (m, n)),
            ("L_hat", &self.l_hat, t, (n, p)),
            ("K_hat", &self.k_hat, t, (m, n)),
            ("Sigma", &self.sigma, t + 1, (n, n)),
            ("Sigma_hat", &self.sigma_hat, t + 1, (n, n)),
            ("P", &self.p, t + 1, (n, n)),
            ("P_hat", &self.p_hat, t + 1, (n, n)),
        ];
        for (name, seq, len, shape) in checks {
            if seq.len() != len {
                return Err(Error::Schema(format!("\"{name}\" has {} entries, expected {len}", seq.len())));
            }
            if let Some(i) = seq.iter().position(|x| x.shape() != shape) {
                return Err(Error::Schema(format!("\"{name}\"[{i}] is {:?}, expected {shape:?}", seq[i].shape())));
            }
        }
        Ok(())
    }

    /// The two-player controller realized with these gains.
    pub fn controller(&self) -> Result<LinearController> {
        LinearController::custom(self.dims, self.k.clone(), self.l.clone(), self.k_hat.clone(), self.l_hat.clone())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("gains serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| {
            if e.is_data() {
                Error::Schema(e.to_string())
            } else {
                Error::Parse(e.to_string())
            }
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(std::fs::write(path, self.to_json())?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
