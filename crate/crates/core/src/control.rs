//! Model-based AV controllers. Both laws emit a command velocity that
//! [`cmd_velocity_to_accel`] turns into an acceleration for the engine.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

/// Default acceleration bounds for velocity-command laws, m/s².
pub const MODEL_BASED_ACCEL_BOUNDS: [f64; 2] = [-4.5, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FollowerStopperParams {
    /// Base boundary gaps Δx₁⁰ < Δx₂⁰ < Δx₃⁰, m.
    pub dx0: [f64; 3],
    /// Boundary decelerations d₁ > d₂ > d₃ > 0, m/s².
    pub decel: [f64; 3],
    /// Desired velocity U, m/s.
    pub desired_velocity: f64,
}

impl Default for FollowerStopperParams {
    fn default() -> Self {
        Self {
            dx0: [4.5, 5.25, 6.0],
            decel: [1.5, 1.0, 0.5],
            desired_velocity: 4.15,
        }
    }
}

impl FollowerStopperParams {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let [x1, x2, x3] = self.dx0;
        let [d1, d2, d3] = self.decel;
        if !(x1 < x2 && x2 < x3) {
            return Err(ConfigError::invalid("follower-stopper dx0 must be strictly increasing"));
        }
        if !(d1 > d2 && d2 > d3 && d3 > 0.0) {
            return Err(ConfigError::invalid("follower-stopper decel must be strictly decreasing and positive"));
        }
        if !(self.desired_velocity >= 0.0) {
            return Err(ConfigError::invalid("follower-stopper desired velocity must be >= 0"));
        }
        Ok(())
    }
}

/// Region boundaries `Δx_k = Δx_k⁰ + (Δv⁻)² / (2 d_k)`.
pub fn follower_stopper_boundaries(dv_neg: f64, p: &FollowerStopperParams) -> [f64; 3] {
    let q = dv_neg * dv_neg;
    [0, 1, 2].map(|k| p.dx0[k] + q / (2.0 * p.decel[k]))
}

/// FollowerStopper command velocity for an AV at `v_av` with `gap` metres
/// to a leader moving at `v_lead`.
pub fn follower_stopper_cmd(v_av: f64, v_lead: f64, gap: f64, p: &FollowerStopperParams) -> f64 {
    let u = p.desired_velocity;
    let v = v_lead.max(0.0).min(u);
    let dv_neg = (v_lead - v_av).min(0.0);
    let [x1, x2, x3] = follower_stopper_boundaries(dv_neg, p);
    if gap <= x1 {
        0.0
    } else if gap <= x2 {
        v * (gap - x1) / (x2 - x1)
    } else if gap <= x3 {
        v + (u - v) * (gap - x2) / (x3 - x2)
    } else {
        u
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PiSaturationParams {
    /// Safe-gap offset δ, m.
    pub delta_s: f64,
    /// Lower gap threshold g_l, m.
    pub g_l: f64,
    /// Upper gap threshold g_u, m.
    pub g_u: f64,
    /// Catch-up speed, m/s.
    pub v_catch: f64,
    /// Length of the own-velocity averaging window, steps.
    pub window: usize,
    /// Gap span over which the target-tracking weight α rises 0 → 1, m.
    pub alpha_ramp: f64,
}

impl Default for PiSaturationParams {
    fn default() -> Self {
        Self {
            delta_s: 2.0,
            g_l: 7.0,
            g_u: 30.0,
            v_catch: 1.0,
            window: 600,
            alpha_ramp: 5.0,
        }
    }
}

impl PiSaturationParams {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.g_u > self.g_l) {
            return Err(ConfigError::invalid("pi-saturation requires g_u > g_l"));
        }
        if self.window == 0 {
            return Err(ConfigError::invalid("pi-saturation window must be >= 1"));
        }
        if !(self.alpha_ramp > 0.0) || !(self.v_catch >= 0.0) {
            return Err(ConfigError::invalid("pi-saturation alpha_ramp must be > 0 and v_catch >= 0"));
        }
        Ok(())
    }

    /// `U + v_catch · clamp((gap - g_l) / (g_u - g_l), 0, 1)`.
    pub fn target_velocity(&self, u_avg: f64, gap: f64) -> f64 {
        u_avg + self.v_catch * ((gap - self.g_l) / (self.g_u - self.g_l)).clamp(0.0, 1.0)
    }

    pub fn alpha(&self, gap: f64) -> f64 {
        ((gap - self.delta_s) / self.alpha_ramp).clamp(0.0, 1.0)
    }
}

/// Per-vehicle memory of the PI-with-saturation law.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PiSaturationState {
    history: VecDeque<f64>,
    prev_cmd: Option<f64>,
}

impl PiSaturationState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Mean of the stored own-velocity history, if any.
    pub fn average(&self) -> Option<f64> {
        if self.history.is_empty() {
            None
        } else {
            Some(self.history.iter().sum::<f64>() / self.history.len() as f64)
        }
    }

    pub fn history_len(&self) -> usize {
        self.history.len()
    }

    pub fn prev_cmd(&self) -> Option<f64> {
        self.prev_cmd
    }

    /// Records an own velocity without issuing a command (used while the
    /// vehicle is driven by another law) and resets the command filter so
    /// control starts from the vehicle's actual speed.
    pub fn observe(&mut self, v_av: f64, window: usize) {
        self.push(v_av, window);
        self.prev_cmd = None;
    }

    fn push(&mut self, v: f64, window: usize) {
        if self.history.len() == window {
            self.history.pop_front();
        }
        self.history.push_back(v);
    }
}

/// One PI-with-saturation update; returns the new command velocity and
/// advances `state`.
pub fn pi_saturation_cmd(
    state: &mut PiSaturationState,
    v_av: f64,
    v_lead: f64,
    gap: f64,
    p: &PiSaturationParams,
) -> f64 {
    let u_avg = state.average().unwrap_or(v_av);
    let v_target = p.target_velocity(u_avg, gap);
    let alpha = p.alpha(gap);
    let beta = 1.0 - 0.5 * alpha;
    let prev = state.prev_cmd.unwrap_or(v_av);
    let cmd = (beta * (alpha * v_target + (1.0 - alpha) * v_lead) + (1.0 - beta) * prev).max(0.0);
    state.push(v_av, p.window);
    state.prev_cmd = Some(cmd);
    cmd
}

/// `clip((v_cmd - v) / dt, bounds)`.
pub fn cmd_velocity_to_accel(v_cmd: f64, v: f64, dt: f64, bounds: [f64; 2]) -> f64 {
    ((v_cmd - v) / dt).clamp(bounds[0], bounds[1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn boundaries() {
        let p = FollowerStopperParams::default();
        assert_eq!(follower_stopper_boundaries(0.0, &p), [4.5, 5.25, 6.0]);
        let b = follower_stopper_boundaries(-3.0, &p);
        assert_abs_diff_eq!(b[0], 7.5, epsilon = 1e-12);
        assert_abs_diff_eq!(b[1], 9.75, epsilon = 1e-12);
        assert_abs_diff_eq!(b[2], 15.0, epsilon = 1e-12);
        let b = follower_stopper_boundaries(-1.0, &p);
        assert_abs_diff_eq!(b[0], 4.5 + 1.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(b[1], 5.75, epsilon = 1e-12);
        assert_abs_diff_eq!(b[2], 7.0, epsilon = 1e-12);
    }

    #[test]
    fn follower_stopper_regions() {
        let p = FollowerStopperParams::default();
        assert_eq!(follower_stopper_cmd(3.0, 3.0, 3.0, &p), 0.0);
        assert_abs_diff_eq!(follower_stopper_cmd(3.0, 3.0, 5.0, &p), 2.0, epsilon = 1e-12);
        assert_eq!(follower_stopper_cmd(6.0, 6.0, 20.0, &p), 4.15);
    }

    #[test]
    fn follower_stopper_continuous_at_boundaries() {
        let p = FollowerStopperParams::default();
        for &(v_av, v_lead) in &[(3.0, 3.0), (5.0, 2.0), (0.0, 6.0), (8.0, 1.0)] {
            let dv_neg = f64::min(v_lead - v_av, 0.0);
            for x in follower_stopper_boundaries(dv_neg, &p) {
                let below = follower_stopper_cmd(v_av, v_lead, x - 1e-9, &p);
                let above = follower_stopper_cmd(v_av, v_lead, x + 1e-9, &p);
                assert!((below - above).abs() < 1e-6, "jump at {x}: {below} vs {above}");
            }
            // dense grid: no jumps larger than the local slope allows
            let mut prev = follower_stopper_cmd(v_av, v_lead, 0.01, &p);
            let mut gap = 0.01;
            while gap < 40.0 {
                gap += 1e-3;
                let cur = follower_stopper_cmd(v_av, v_lead, gap, &p);
                assert!((cur - prev).abs() < 0.02);
                prev = cur;
            }
        }
    }

    #[test]
    fn pi_target_velocity() {
        let p = PiSaturationParams::default();
        assert_abs_diff_eq!(p.target_velocity(4.0, 18.5), 4.5, epsilon = 1e-12);
        assert_eq!(p.target_velocity(4.0, 5.0), 4.0);
        assert_eq!(p.target_velocity(4.0, 7.0), 4.0);
        assert_eq!(p.target_velocity(4.0, 30.0), 5.0);
        assert_eq!(p.target_velocity(4.0, 100.0), 5.0);
    }

    #[test]
    fn pi_cold_start_uses_own_velocity() {
        let p = PiSaturationParams::default();
        let mut st = PiSaturationState::new();
        // large gap: alpha = 1, beta = 1/2, target = v_av + v_catch
        let cmd = pi_saturation_cmd(&mut st, 3.0, 3.0, 40.0, &p);
        assert_abs_diff_eq!(cmd, 0.5 * 4.0 + 0.5 * 3.0, epsilon = 1e-12);
        assert_eq!(st.history_len(), 1);
        assert_eq!(st.average(), Some(3.0));
    }

    #[test]
    fn pi_small_gap_tracks_leader() {
        let p = PiSaturationParams::default();
        let mut st = PiSaturationState::new();
        // gap below delta_s: alpha = 0, beta = 1, command = v_lead
        let cmd = pi_saturation_cmd(&mut st, 5.0, 1.2, 1.5, &p);
        assert_eq!(cmd, 1.2);
    }

    #[test]
    fn pi_window_is_bounded() {
        let p = PiSaturationParams {
            window: 4,
            ..Default::default()
        };
        let mut st = PiSaturationState::new();
        for v in [1.0, 2.0, 3.0, 4.0, 5.0, 6.0] {
            pi_saturation_cmd(&mut st, v, v, 20.0, &p);
        }
        assert_eq!(st.history_len(), 4);
        assert_eq!(st.average(), Some(4.5));
    }

    #[test]
    fn pi_converges_under_constant_inputs() {
        let p = PiSaturationParams::default();
        let mut st = PiSaturationState::new();
        let mut last = 0.0;
        let mut delta = f64::INFINITY;
        for _ in 0..(3 * p.window) {
            let cmd = pi_saturation_cmd(&mut st, 4.0, 4.2, 12.0, &p);
            delta = (cmd - last).abs();
            last = cmd;
        }
        assert!(delta < 1e-12, "{delta}");
        // fixed point of cmd = beta*(alpha*target + (1-alpha)*lead) + (1-beta)*cmd
        let target = p.target_velocity(4.0, 12.0);
        assert_abs_diff_eq!(last, target, epsilon = 1e-9);
    }

    #[test]
    fn adapter() {
        assert_eq!(cmd_velocity_to_accel(3.0, 3.0, 0.1, [-1.0, 1.0]), 0.0);
        assert_abs_diff_eq!(cmd_velocity_to_accel(3.05, 3.0, 0.1, [-1.0, 1.0]), 0.5, epsilon = 1e-9);
        assert_eq!(cmd_velocity_to_accel(0.0, 10.0, 0.1, MODEL_BASED_ACCEL_BOUNDS), -4.5);
    }

    #[test]
    fn param_validation() {
        assert!(FollowerStopperParams::default().validate().is_ok());
        assert!(FollowerStopperParams {
            dx0: [5.0, 4.0, 6.0],
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(PiSaturationParams::default().validate().is_ok());
        assert!(PiSaturationParams {
            g_u: 3.0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    proptest! {
        #[test]
        fn follower_stopper_bounded(v_av in 0.0f64..30.0, v_lead in -1.0f64..30.0, gap in 0.001f64..200.0) {
            let p = FollowerStopperParams::default();
            let cmd = follower_stopper_cmd(v_av, v_lead, gap, &p);
            prop_assert!((0.0..=p.desired_velocity).contains(&cmd));
        }

        #[test]
        fn follower_stopper_monotone_in_gap(v_av in 0.0f64..30.0, v_lead in 0.0f64..30.0, gap in 0.001f64..100.0, dg in 0.0f64..10.0) {
            let p = FollowerStopperParams::default();
            prop_assert!(follower_stopper_cmd(v_av, v_lead, gap + dg, &p) >= follower_stopper_cmd(v_av, v_lead, gap, &p) - 1e-12);
        }

        #[test]
        fn boundaries_strictly_increasing(dv in -20.0f64..0.0) {
            let b = follower_stopper_boundaries(dv, &FollowerStopperParams::default());
            prop_assert!(b[0] < b[1] && b[1] < b[2]);
        }

        #[test]
        fn pi_target_within_catch_band(u in 0.0f64..30.0, gap in 0.0f64..100.0) {
            let p = PiSaturationParams::default();
            let t = p.target_velocity(u, gap);
            prop_assert!(t >= u && t <= u + p.v_catch);
        }
    }
}
