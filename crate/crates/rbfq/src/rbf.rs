//! The radial-basis Q head: N state-dependent centroid locations in action
//! space with attached values, combined by a normalized RBF mixture.
//! The action maximum is approximated by searching the centroids themselves.

use crate::error::{Error, Result};
use crate::nn::{backward, forward, init_params, Activation, Gradient, MlpSpec, ParamStore};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Norm {
    L2,
    L1,
}

impl Norm {
    pub fn dist(self, a: &[f64], b: &[f64]) -> f64 {
        debug_assert_eq!(a.len(), b.len());
        match self {
            Norm::L2 => a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt(),
            Norm::L1 => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Normalized RBF mixture over explicit centroids, max-exponent subtracted.
///
/// This is Q(a) given locations and values already computed for a state;
/// the value lies in [min v_i, max v_i]. Computed anchored at values[0]
/// so a constant value vector gives exactly that constant for every a,
/// which keeps greedy tie-breaking deterministic.
pub fn rbf_mixture(locations: &[Vec<f64>], values: &[f64], beta: f64, norm: Norm, a: &[f64]) -> f64 {
    debug_assert_eq!(locations.len(), values.len());
    debug_assert!(!locations.is_empty());
    let exps: Vec<f64> = locations.iter().map(|c| -beta * norm.dist(a, c)).collect();
    let m = exps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let anchor = values[0];
    let mut num = 0.0;
    let mut den = 0.0;
    for (e, v) in exps.iter().zip(values) {
        let w = (e - m).exp();
        num += w * (v - anchor);
        den += w;
    }
    anchor + num / den
}

#[derive(Debug, Clone)]
pub struct RBFQNet {
    pub loc_spec: MlpSpec,
    pub val_spec: MlpSpec,
    pub loc_params: ParamStore,
    pub val_params: ParamStore,
    pub n_centroids: usize,
    pub beta: f64,
    pub norm: Norm,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
}

impl RBFQNet {
    /// Builds both heads with fresh parameters.
    ///
    /// The location head emits `N * action_dim` raw reals which are squashed
    /// into the action box; the value head emits `N` unconstrained reals.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        state_dim: usize,
        action_low: &[f64],
        action_high: &[f64],
        n_centroids: usize,
        beta: f64,
        norm: Norm,
        hidden: &[usize],
        hidden_activation: Activation,
        rng: &mut Rng,
    ) -> Result<Self> {
        if n_centroids == 0 {
            return Err(Error::Config("need at least one centroid".to_string()));
        }
        if !(beta > 0.0) {
            return Err(Error::Config(format!("beta must be positive, got {beta}")));
        }
        if action_low.len() != action_high.len() || action_low.is_empty() {
            return Err(Error::Shape(format!(
                "action box bounds disagree: {} vs {}",
                action_low.len(),
                action_high.len()
            )));
        }
        if action_low.iter().zip(action_high).any(|(l, h)| !(l < h)) {
            return Err(Error::Config("action box must have positive extent".to_string()));
        }
        let action_dim = action_low.len();
        let loc_spec = MlpSpec::new(
            state_dim,
            hidden,
            n_centroids * action_dim,
            hidden_activation,
            Activation::Identity,
        )?;
        let val_spec = MlpSpec::new(
            state_dim,
            hidden,
            n_centroids,
            hidden_activation,
            Activation::Identity,
        )?;
        let loc_params = init_params(&loc_spec, rng);
        let val_params = init_params(&val_spec, rng);
        Ok(RBFQNet {
            loc_spec,
            val_spec,
            loc_params,
            val_params,
            n_centroids,
            beta,
            norm,
            action_low: action_low.to_vec(),
            action_high: action_high.to_vec(),
        })
    }

    pub fn state_dim(&self) -> usize {
        self.loc_spec.input_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_low.len()
    }

    fn squash(&self, raw: f64, dim: usize) -> f64 {
        let (lo, hi) = (self.action_low[dim], self.action_high[dim]);
        lo + (hi - lo) * sigmoid(raw)
    }

    /// Raw location outputs plus squashed locations and values.
    fn heads(&self, s: &[f64]) -> Result<(Vec<f64>, Vec<Vec<f64>>, Vec<f64>)> {
        let raw = forward(&self.loc_spec, &self.loc_params, s)?;
        let values = forward(&self.val_spec, &self.val_params, s)?;
        if raw.iter().chain(&values).any(|v| !v.is_finite()) {
            return Err(Error::Numerical(
                "non-finite network output in centroid heads".to_string(),
            ));
        }
        let ad = self.action_dim();
        let locations = (0..self.n_centroids)
            .map(|i| (0..ad).map(|k| self.squash(raw[i * ad + k], k)).collect())
            .collect();
        Ok((raw, locations, values))
    }

    /// Centroid locations (inside the action box) and values for state `s`.
    pub fn centroids(&self, s: &[f64]) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
        let (_, locations, values) = self.heads(s)?;
        Ok((locations, values))
    }

    /// Eq. Q(s,a) as the normalized RBF mixture over this state's centroids.
    pub fn q_value(&self, s: &[f64], a: &[f64]) -> Result<f64> {
        if a.len() != self.action_dim() {
            return Err(Error::Shape(format!(
                "action has {} entries, box has {}",
                a.len(),
                self.action_dim()
            )));
        }
        if s.iter().chain(a).any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite state or action".to_string()));
        }
        let (locations, values) = self.centroids(s)?;
        Ok(rbf_mixture(&locations, &values, self.beta, self.norm, a))
    }

    /// Argmax over the N centroid locations; ties broken by lowest index.
    pub fn greedy_action(&self, s: &[f64]) -> Result<(Vec<f64>, f64)> {
        let (locations, values) = self.centroids(s)?;
        let mut best = 0;
        let mut best_q = f64::NEG_INFINITY;
        let mut qs = Vec::with_capacity(locations.len());
        for (i, loc) in locations.iter().enumerate() {
            let q = rbf_mixture(&locations, &values, self.beta, self.norm, loc);
            qs.push(q);
            if q > best_q {
                best_q = q;
                best = i;
            }
        }
        Ok((locations[best].clone(), qs[best]))
    }

    /// Gradient of `upstream * Q(s,a)` w.r.t. both parameter sets.
    pub fn q_gradient(&self, s: &[f64], a: &[f64], upstream: f64) -> Result<(Gradient, Gradient)> {
        if a.len() != self.action_dim() {
            return Err(Error::Shape(format!(
                "action has {} entries, box has {}",
                a.len(),
                self.action_dim()
            )));
        }
        let (raw, locations, values) = self.heads(s)?;
        let n = self.n_centroids;
        let ad = self.action_dim();

        // Mixture weights with the max exponent subtracted.
        let exps: Vec<f64> = locations
            .iter()
            .map(|c| -self.beta * self.norm.dist(a, c))
            .collect();
        let m = exps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let unnorm: Vec<f64> = exps.iter().map(|e| (e - m).exp()).collect();
        let den: f64 = unnorm.iter().sum();
        let w: Vec<f64> = unnorm.iter().map(|u| u / den).collect();
        let anchor = values[0];
        let q = anchor
            + unnorm
                .iter()
                .zip(&values)
                .map(|(u, v)| u * (v - anchor))
                .sum::<f64>()
                / den;
        if !q.is_finite() {
            return Err(Error::Numerical("non-finite mixture value".to_string()));
        }

        // dQ/dv_i = w_i; dQ/dd_i = -beta * w_i * (v_i - Q).
        let val_upstream: Vec<f64> = w.iter().map(|wi| upstream * wi).collect();
        let mut loc_upstream = vec![0.0; n * ad];
        for i in 0..n {
            let dq_ddi = -self.beta * w[i] * (values[i] - q);
            let d = self.norm.dist(a, &locations[i]);
            for k in 0..ad {
                let dd_dloc = match self.norm {
                    // Subgradient 0 at a == a_i.
                    Norm::L2 => {
                        if d < 1e-12 {
                            0.0
                        } else {
                            (locations[i][k] - a[k]) / d
                        }
                    }
                    Norm::L1 => {
                        let diff = locations[i][k] - a[k];
                        if diff > 0.0 {
                            1.0
                        } else if diff < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    }
                };
                let sg = sigmoid(raw[i * ad + k]);
                let dsquash = (self.action_high[k] - self.action_low[k]) * sg * (1.0 - sg);
                loc_upstream[i * ad + k] = upstream * dq_ddi * dd_dloc * dsquash;
            }
        }

        let (loc_grad, _) = backward(&self.loc_spec, &self.loc_params, s, &loc_upstream)?;
        let (val_grad, _) = backward(&self.val_spec, &self.val_params, s, &val_upstream)?;
        if !loc_grad.is_finite() || !val_grad.is_finite() {
            return Err(Error::Numerical("non-finite q gradient".to_string()));
        }
        Ok((loc_grad, val_grad))
    }
}
