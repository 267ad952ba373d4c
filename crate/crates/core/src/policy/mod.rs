//! Learned control laws: small tanh MLPs and a single-layer GRU over a flat
//! parameter vector, plus the cross-entropy-method trainer.
//!
//! Parameter layout (row-major, output-major weights):
//! - MLP: for each layer `W (out x in)` then `b (out)`; finally one global
//!   log-std.
//! - GRU: `W_z, U_z, b_z, W_r, U_r, b_r, W_h, U_h, b_h`, then the linear head
//!   `W_o (out x hidden), b_o`, then the log-std.

pub mod cem;
pub mod evaluate;
pub mod io;

use serde::{Deserialize, Serialize};

use crate::env::Observation;
use crate::error::{ConfigError, PolicyError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PolicyArch {
    Mlp { hidden: Vec<usize> },
    Gru { hidden: usize },
}

impl PolicyArch {
    pub fn mlp_3x3() -> Self {
        PolicyArch::Mlp { hidden: vec![3, 3] }
    }

    pub fn gru_5() -> Self {
        PolicyArch::Gru { hidden: 5 }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        match self {
            PolicyArch::Mlp { hidden } if hidden.contains(&0) => {
                Err(ConfigError::invalid("mlp hidden widths must be >= 1"))
            }
            PolicyArch::Gru { hidden: 0 } => Err(ConfigError::invalid("gru width must be >= 1")),
            _ => Ok(()),
        }
    }
}

/// How the environment observation is turned into per-AV network inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Featurizer {
    /// One 3-value local observation per AV; the network is shared.
    Partial,
    /// Centralised control from the full state: each AV's input is the whole
    /// fleet listed in id order starting from that AV, with positions taken
    /// relative to it (its own slot carries its absolute position). One
    /// network is evaluated in every AV's frame.
    EgoFull {
        vehicles: usize,
        per_vehicle: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySpec {
    pub arch: PolicyArch,
    pub input_dim: usize,
    /// Outputs per AV (acceleration, optionally a lane-change signal).
    pub output_dim: usize,
    pub featurizer: Featurizer,
}

impl PolicySpec {
    pub fn new(arch: PolicyArch, input_dim: usize, output_dim: usize, featurizer: Featurizer) -> Self {
        Self {
            arch,
            input_dim,
            output_dim,
            featurizer,
        }
    }

    /// Layer sizes `[input, hidden..., output]` for MLPs.
    pub fn mlp_sizes(&self) -> Vec<usize> {
        match &self.arch {
            PolicyArch::Mlp { hidden } => {
                let mut sizes = vec![self.input_dim];
                sizes.extend(hidden);
                sizes.push(self.output_dim);
                sizes
            }
            PolicyArch::Gru { .. } => Vec::new(),
        }
    }

    pub fn param_count(&self) -> usize {
        match &self.arch {
            PolicyArch::Mlp { .. } => {
                let sizes = self.mlp_sizes();
                sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum::<usize>() + 1
            }
            PolicyArch::Gru { hidden } => {
                let h = *hidden;
                3 * (h * self.input_dim + h * h + h) + self.output_dim * h + self.output_dim + 1
            }
        }
    }

    pub fn hidden_width(&self) -> usize {
        match &self.arch {
            PolicyArch::Mlp { .. } => 0,
            PolicyArch::Gru { hidden } => *hidden,
        }
    }

    /// `(name, [rows, cols], activation)` of every parameter block, in
    /// layout order.
    pub fn blocks(&self) -> Vec<(String, [usize; 2], &'static str)> {
        let mut out = Vec::new();
        match &self.arch {
            PolicyArch::Mlp { .. } => {
                let sizes = self.mlp_sizes();
                let last = sizes.len() - 2;
                for (k, w) in sizes.windows(2).enumerate() {
                    let act = if k == last { "linear" } else { "tanh" };
                    out.push((format!("dense{k}.weight"), [w[1], w[0]], act));
                    out.push((format!("dense{k}.bias"), [w[1], 1], act));
                }
            }
            PolicyArch::Gru { hidden } => {
                let h = *hidden;
                for (gate, act) in [("update", "sigmoid"), ("reset", "sigmoid"), ("candidate", "tanh")] {
                    out.push((format!("gru.{gate}.input_weight"), [h, self.input_dim], act));
                    out.push((format!("gru.{gate}.hidden_weight"), [h, h], act));
                    out.push((format!("gru.{gate}.bias"), [h, 1], act));
                }
                out.push(("head.weight".into(), [self.output_dim, h], "linear"));
                out.push(("head.bias".into(), [self.output_dim, 1], "linear"));
            }
        }
        out.push(("log_std".into(), [1, 1], "none"));
        out
    }

    pub fn check_params(&self, params: &[f64]) -> Result<(), PolicyError> {
        if params.len() != self.param_count() {
            return Err(PolicyError::Dimension {
                expected: self.param_count(),
                got: params.len(),
            });
        }
        Ok(())
    }
}

/// Feed-forward pass: tanh hidden layers, linear output.
pub fn mlp_forward(spec: &PolicySpec, params: &[f64], input: &[f64], out: &mut [f64]) -> Result<(), PolicyError> {
    spec.check_params(params)?;
    if input.len() != spec.input_dim {
        return Err(PolicyError::Dimension {
            expected: spec.input_dim,
            got: input.len(),
        });
    }
    if out.len() != spec.output_dim {
        return Err(PolicyError::Dimension {
            expected: spec.output_dim,
            got: out.len(),
        });
    }
    let sizes = spec.mlp_sizes();
    let mut act: Vec<f64> = input.to_vec();
    let mut next = Vec::new();
    let mut offset = 0;
    let layers = sizes.len() - 1;
    for (k, w) in sizes.windows(2).enumerate() {
        let (n_in, n_out) = (w[0], w[1]);
        let weights = &params[offset..offset + n_in * n_out];
        let bias = &params[offset + n_in * n_out..offset + n_in * n_out + n_out];
        offset += n_in * n_out + n_out;
        next.clear();
        for o in 0..n_out {
            let row = &weights[o * n_in..(o + 1) * n_in];
            let z = bias[o] + row.iter().zip(&act).map(|(a, b)| a * b).sum::<f64>();
            next.push(if k + 1 < layers { z.tanh() } else { z });
        }
        std::mem::swap(&mut act, &mut next);
    }
    out.copy_from_slice(&act);
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One GRU step followed by the linear head:
/// `z = σ(W_z x + U_z h + b_z)`, `r = σ(W_r x + U_r h + b_r)`,
/// `h̃ = tanh(W_h x + U_h (r ⊙ h) + b_h)`, `h' = (1 - z) ⊙ h + z ⊙ h̃`,
/// `y = W_o h' + b_o`.
pub fn gru_forward(
    spec: &PolicySpec,
    params: &[f64],
    input: &[f64],
    hidden: &mut [f64],
    out: &mut [f64],
) -> Result<(), PolicyError> {
    spec.check_params(params)?;
    let h = spec.hidden_width();
    let n_in = spec.input_dim;
    if input.len() != n_in {
        return Err(PolicyError::Dimension {
            expected: n_in,
            got: input.len(),
        });
    }
    if hidden.len() != h {
        return Err(PolicyError::Dimension {
            expected: h,
            got: hidden.len(),
        });
    }
    if out.len() != spec.output_dim {
        return Err(PolicyError::Dimension {
            expected: spec.output_dim,
            got: out.len(),
        });
    }
    let gate_len = h * n_in + h * h + h;
    let affine = |gate: usize, row: usize, state: &[f64]| -> f64 {
        let base = gate * gate_len;
        let w = &params[base + row * n_in..base + (row + 1) * n_in];
        let u = &params[base + h * n_in + row * h..base + h * n_in + (row + 1) * h];
        let b = params[base + h * n_in + h * h + row];
        b + w.iter().zip(input).map(|(a, x)| a * x).sum::<f64>() + u.iter().zip(state).map(|(a, s)| a * s).sum::<f64>()
    };
    let prev: Vec<f64> = hidden.to_vec();
    let z: Vec<f64> = (0..h).map(|j| sigmoid(affine(0, j, &prev))).collect();
    let r: Vec<f64> = (0..h).map(|j| sigmoid(affine(1, j, &prev))).collect();
    let gated: Vec<f64> = prev.iter().zip(&r).map(|(a, b)| a * b).collect();
    for j in 0..h {
        let cand = affine(2, j, &gated).tanh();
        hidden[j] = (1.0 - z[j]) * prev[j] + z[j] * cand;
    }
    let head = 3 * gate_len;
    for (o, y) in out.iter_mut().enumerate() {
        let w = &params[head + o * h..head + (o + 1) * h];
        let b = params[head + spec.output_dim * h + o];
        *y = b + w.iter().zip(hidden.iter()).map(|(a, s)| a * s).sum::<f64>();
    }
    Ok(())
}

/// A policy with its parameters and per-AV recurrent state, evaluated in
/// deterministic (mean) mode.
#[derive(Debug, Clone)]
pub struct PolicyRunner {
    spec: PolicySpec,
    params: Vec<f64>,
    hidden: Vec<Vec<f64>>,
    input: Vec<f64>,
}

impl PolicyRunner {
    pub fn new(spec: PolicySpec, params: Vec<f64>) -> Result<Self, PolicyError> {
        spec.check_params(&params)?;
        Ok(Self {
            spec,
            params,
            hidden: Vec::new(),
            input: Vec::new(),
        })
    }

    pub fn zeros(spec: PolicySpec) -> Self {
        let n = spec.param_count();
        Self::new(spec, vec![0.0; n]).expect("length matches by construction")
    }

    pub fn spec(&self) -> &PolicySpec {
        &self.spec
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn log_std(&self) -> f64 {
        *self.params.last().expect("at least the log-std")
    }

    /// Clears recurrent state at the start of an episode.
    pub fn reset(&mut self, agents: usize) {
        let h = self.spec.hidden_width();
        self.hidden = vec![vec![0.0; h]; agents];
    }

    /// Mean action for every AV, concatenated in AV order.
    pub fn act(&mut self, obs: &Observation, out: &mut Vec<f64>) -> Result<(), PolicyError> {
        let agents = obs.agents();
        if self.hidden.len() != agents {
            self.reset(agents);
        }
        let od = self.spec.output_dim;
        out.clear();
        out.resize(agents * od, 0.0);
        for a in 0..agents {
            self.input.clear();
            match (self.spec.featurizer, obs) {
                (Featurizer::Partial, Observation::Partial(locals)) => {
                    self.input.extend_from_slice(&locals[a].to_array());
                }
                (Featurizer::EgoFull { .. }, Observation::Full(full)) => full.ego_features(a, &mut self.input),
                _ => {
                    return Err(PolicyError::Format(
                        "observation mode does not match the policy featurizer".into(),
                    ))
                }
            }
            let slot = &mut out[a * od..(a + 1) * od];
            match self.spec.arch {
                PolicyArch::Mlp { .. } => mlp_forward(&self.spec, &self.params, &self.input, slot)?,
                PolicyArch::Gru { .. } => {
                    gru_forward(&self.spec, &self.params, &self.input, &mut self.hidden[a], slot)?
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mlp_spec() -> PolicySpec {
        PolicySpec::new(PolicyArch::mlp_3x3(), 3, 1, Featurizer::Partial)
    }

    fn gru_spec() -> PolicySpec {
        PolicySpec::new(PolicyArch::gru_5(), 3, 1, Featurizer::Partial)
    }

    /// Deterministic pseudo-random parameters, mirrored in the numpy
    /// reference that produced the golden values below.
    fn golden_params(n: usize) -> Vec<f64> {
        (0..n).map(|i| (i as f64 * 0.7 + 0.3).sin() * 0.8).collect()
    }

    #[test]
    fn parameter_counts() {
        assert_eq!(mlp_spec().param_count(), 29);
        assert_eq!(gru_spec().param_count(), 142);
        let total: usize = mlp_spec().blocks().iter().map(|b| b.1[0] * b.1[1]).sum();
        assert_eq!(total, 29);
        let total: usize = gru_spec().blocks().iter().map(|b| b.1[0] * b.1[1]).sum();
        assert_eq!(total, 142);
    }

    #[test]
    fn zero_weights_give_zero() {
        let spec = mlp_spec();
        let mut out = [1.0];
        mlp_forward(&spec, &[0.0; 29], &[4.0, -1.0, 12.0], &mut out).unwrap();
        assert_eq!(out[0], 0.0);

        let spec = gru_spec();
        let mut h = vec![0.0; 5];
        gru_forward(&spec, &[0.0; 142], &[4.0, -1.0, 12.0], &mut h, &mut out).unwrap();
        assert_eq!(out[0], 0.0);
        assert!(h.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn mlp_golden() {
        let spec = mlp_spec();
        let p = golden_params(29);
        let mut out = [0.0];
        mlp_forward(&spec, &p, &[4.2, -0.7, 9.5], &mut out).unwrap();
        assert!((out[0] - MLP_GOLDEN).abs() < 1e-12, "{:?}", out[0]);
    }

    #[test]
    fn mlp_saturated_limit() {
        let spec = mlp_spec();
        let p = golden_params(29);
        let obs = [4.2, -0.7, 9.5];
        let big: Vec<f64> = obs.iter().map(|x| x * 1e6).collect();
        let mut out = [0.0];
        mlp_forward(&spec, &p, &big, &mut out).unwrap();
        // first hidden layer saturates at sign(W x); continue by hand
        let w1 = &p[0..9];
        let h1: Vec<f64> = (0..3)
            .map(|o| (0..3).map(|i| w1[o * 3 + i] * obs[i]).sum::<f64>().signum())
            .collect();
        let (w2, b2) = (&p[12..21], &p[21..24]);
        let h2: Vec<f64> = (0..3)
            .map(|o| (b2[o] + (0..3).map(|i| w2[o * 3 + i] * h1[i]).sum::<f64>()).tanh())
            .collect();
        let (w3, b3) = (&p[24..27], p[27]);
        let expect = b3 + (0..3).map(|i| w3[i] * h2[i]).sum::<f64>();
        assert!((out[0] - expect).abs() < 1e-9);
    }

    #[test]
    fn gru_golden() {
        let spec = gru_spec();
        let p = golden_params(142);
        let mut h = vec![0.1, -0.2, 0.3, 0.0, 0.05];
        let mut out = [0.0];
        gru_forward(&spec, &p, &[4.2, -0.7, 9.5], &mut h, &mut out).unwrap();
        assert!((out[0] - GRU_GOLDEN_OUT).abs() < 1e-12, "{:?}", out[0]);
        for (a, b) in h.iter().zip(GRU_GOLDEN_HIDDEN) {
            assert!((a - b).abs() < 1e-12, "{h:?}");
        }
    }

    #[test]
    fn gru_reaches_fixed_point() {
        let spec = gru_spec();
        let p: Vec<f64> = golden_params(142).iter().map(|x| x * 0.3).collect();
        let mut h = vec![0.0; 5];
        let mut out = [0.0];
        let mut prev = h.clone();
        for _ in 0..1000 {
            prev.copy_from_slice(&h);
            gru_forward(&spec, &p, &[0.2, 0.0, 0.4], &mut h, &mut out).unwrap();
        }
        let delta: f64 = h.iter().zip(&prev).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(delta < 1e-12, "{delta}");
    }

    #[test]
    fn dimension_errors() {
        let spec = mlp_spec();
        let mut out = [0.0];
        assert!(matches!(
            mlp_forward(&spec, &[0.0; 29], &[1.0, 2.0], &mut out),
            Err(PolicyError::Dimension { expected: 3, got: 2 })
        ));
        assert!(mlp_forward(&spec, &[0.0; 28], &[1.0, 2.0, 3.0], &mut out).is_err());
        let spec = gru_spec();
        let mut h = vec![0.0; 4];
        assert!(gru_forward(&spec, &[0.0; 142], &[1.0, 2.0, 3.0], &mut h, &mut out).is_err());
    }

    // Computed with an independent numpy implementation of the same layout.
    const MLP_GOLDEN: f64 = -0.30031454094063403;
    const GRU_GOLDEN_OUT: f64 = 0.20699910126691923;
    const GRU_GOLDEN_HIDDEN: [f64; 5] = [
        0.9997120691458184,
        -0.2380185740736726,
        0.29765417944338096,
        0.99930502493265,
        -0.02029577673762431,
    ];
}
