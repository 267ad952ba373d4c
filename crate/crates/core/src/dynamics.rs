//! Longitudinal vehicle dynamics: the Intelligent Driver Model, additive
//! acceleration noise and the braking-distance velocity cap used as a
//! fail-safe for controlled vehicles.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, DynamicsError};

/// Parameters of the Intelligent Driver Model plus the per-step
/// acceleration noise level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdmParams {
    /// Desired (free-flow) speed, m/s.
    pub v0: f64,
    /// Desired time headway, s.
    pub time_headway: f64,
    /// Maximum acceleration, m/s².
    pub max_accel: f64,
    /// Comfortable deceleration, m/s².
    pub comfort_decel: f64,
    /// Acceleration exponent.
    pub delta: f64,
    /// Minimum standstill gap, m.
    pub min_gap: f64,
    /// Standard deviation of the additive acceleration noise, m/s².
    pub noise_std: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        Self {
            v0: 30.0,
            time_headway: 1.0,
            max_accel: 1.0,
            comfort_decel: 1.5,
            delta: 4.0,
            min_gap: 2.0,
            noise_std: 0.2,
        }
    }
}

impl IdmParams {
    pub fn noiseless(self) -> Self {
        Self {
            noise_std: 0.0,
            ..self
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("v0", self.v0),
            ("time_headway", self.time_headway),
            ("max_accel", self.max_accel),
            ("comfort_decel", self.comfort_decel),
            ("min_gap", self.min_gap),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(ConfigError::invalid(format!("idm.{name} must be > 0, got {value}")));
            }
        }
        if !(self.delta >= 1.0 && self.delta.is_finite()) {
            return Err(ConfigError::invalid(format!("idm.delta must be >= 1, got {}", self.delta)));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(ConfigError::invalid(format!(
                "idm.noise_std must be >= 0, got {}",
                self.noise_std
            )));
        }
        Ok(())
    }
}

/// Kinematic inputs to a car-following model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KinematicInput {
    /// Bumper-to-bumper headway to the leader, m.
    pub headway: f64,
    /// Closing rate `v - v_lead`, positive when approaching, m/s.
    pub closing_speed: f64,
    /// Own velocity, m/s.
    pub velocity: f64,
}

impl KinematicInput {
    pub fn new(headway: f64, closing_speed: f64, velocity: f64) -> Self {
        Self {
            headway,
            closing_speed,
            velocity,
        }
    }
}

/// Dynamic desired gap `s0 + max(0, v T + v dv / (2 sqrt(a b)))`.
pub fn desired_headway(v: f64, closing_speed: f64, p: &IdmParams) -> f64 {
    let dynamic = v * p.time_headway + v * closing_speed / (2.0 * (p.max_accel * p.comfort_decel).sqrt());
    // keep NaN from bad parameters visible instead of clamping it away
    p.min_gap + if dynamic.is_nan() { dynamic } else { dynamic.max(0.0) }
}

/// IDM acceleration `a (1 - (v/v0)^δ - (s*/h)²)`.
pub fn idm_acceleration(k: KinematicInput, p: &IdmParams) -> Result<f64, DynamicsError> {
    if !(k.headway > 0.0) {
        return Err(DynamicsError::NonPositiveHeadway(k.headway));
    }
    let s_star = desired_headway(k.velocity, k.closing_speed, p);
    let accel = p.max_accel * (1.0 - (k.velocity / p.v0).powf(p.delta) - (s_star / k.headway).powi(2));
    if accel.is_finite() {
        Ok(accel)
    } else {
        Err(DynamicsError::NonFinite { input: k })
    }
}

/// Adds one `N(0, noise_std²)` draw from `rng` to `accel`. Zero noise
/// returns `accel` unchanged and consumes nothing from the stream.
pub fn apply_acceleration_noise<R: Rng + ?Sized>(accel: f64, rng: &mut R, noise_std: f64) -> f64 {
    if noise_std == 0.0 {
        return accel;
    }
    // noise_std > 0 is validated upstream, so construction cannot fail
    let normal = Normal::new(0.0, noise_std).expect("noise_std must be finite and non-negative");
    accel + normal.sample(rng)
}

/// Largest speed from which a follower, reacting after one `dt` and then
/// braking at `max_decel`, stops behind a leader that brakes to rest at
/// `max_decel` starting now.
///
/// Solves `v dt + v²/(2b) = h + v_lead²/(2b)` for `v`.
pub fn safe_velocity_cap(headway: f64, v_lead: f64, max_decel: f64, dt: f64) -> f64 {
    if headway.is_infinite() {
        return f64::INFINITY;
    }
    if headway <= 0.0 {
        return 0.0;
    }
    let b = max_decel;
    let disc = (b * dt).powi(2) + 2.0 * b * headway + v_lead * v_lead;
    (-b * dt + disc.sqrt()).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn table() -> IdmParams {
        IdmParams::default()
    }

    #[test]
    fn desired_headway_examples() {
        let p = table();
        assert_eq!(desired_headway(0.0, 0.0, &p), 2.0);
        assert_abs_diff_eq!(desired_headway(10.0, 2.0, &p), 20.164965809277263, epsilon = 1e-12);
        assert_eq!(desired_headway(5.0, -20.0, &p), 2.0);
    }

    #[test]
    fn idm_standstill_equilibrium() {
        let a = idm_acceleration(KinematicInput::new(2.0, 0.0, 0.0), &table()).unwrap();
        assert_eq!(a, 0.0);
    }

    #[test]
    fn idm_free_flow_at_desired_speed() {
        let a = idm_acceleration(KinematicInput::new(1e9, 0.0, 30.0), &table()).unwrap();
        assert!(a.abs() < 1e-6);
    }

    #[test]
    fn idm_at_260m_equilibrium() {
        // v* from an independent bisection in double precision
        let v_star = 4.815917477178446;
        let a = idm_acceleration(KinematicInput::new(260.0 / 22.0 - 5.0, 0.0, v_star), &table()).unwrap();
        assert!(a.abs() < 1e-6, "{a}");
    }

    #[test]
    fn idm_rejects_collision_and_bad_params() {
        assert!(matches!(
            idm_acceleration(KinematicInput::new(0.0, 0.0, 1.0), &table()),
            Err(DynamicsError::NonPositiveHeadway(_))
        ));
        let bad = IdmParams {
            comfort_decel: f64::NAN,
            ..table()
        };
        assert!(idm_acceleration(KinematicInput::new(10.0, 1.0, 1.0), &bad).is_err());
        assert!(bad.validate().is_err());
        assert!(IdmParams { delta: 0.5, ..table() }.validate().is_err());
        assert!(table().validate().is_ok());
    }

    #[test]
    fn noise_identity_when_disabled() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        assert_eq!(apply_acceleration_noise(0.5, &mut rng, 0.0), 0.5);
    }

    #[test]
    fn noise_golden_first_draw() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let x = apply_acceleration_noise(0.0, &mut rng, 0.2);
        assert_eq!(x.to_bits(), NOISE_GOLDEN_SEED42.to_bits(), "got {x:?}");
    }

    // First N(0, 0.2²) draw from ChaCha8 seeded with 42, frozen on first run.
    const NOISE_GOLDEN_SEED42: f64 = 0.09559624767020436;

    #[test]
    fn noise_mean_matches() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 1_000_000;
        let mean = (0..n).map(|_| apply_acceleration_noise(1.0, &mut rng, 0.2)).sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.001, "{mean}");
    }

    /// Brute-force oracle: simulate the two-vehicle braking profile on a fine
    /// clock and return the largest follower speed (0.001 m/s grid) that keeps
    /// the gap positive.
    fn brute_force_cap(h: f64, v_lead: f64, b: f64, dt: f64) -> f64 {
        let keeps_gap = |v: f64| {
            let tick = 1e-4;
            let (mut xf, mut vf, mut xl, mut vl) = (0.0, v, h, v_lead);
            let mut t = 0.0;
            while vf > 0.0 || vl > 0.0 {
                if t >= dt {
                    vf = (vf - b * tick).max(0.0);
                }
                vl = (vl - b * tick).max(0.0);
                xf += vf * tick;
                xl += vl * tick;
                t += tick;
                if xl - xf <= 0.0 {
                    return false;
                }
            }
            true
        };
        let mut best = 0.0;
        let mut v = 0.0;
        while v < 60.0 {
            if keeps_gap(v) {
                best = v;
            } else {
                break;
            }
            v += 0.001;
        }
        best
    }

    #[test]
    fn safe_cap_examples() {
        assert!(safe_velocity_cap(f64::INFINITY, 0.0, 1.5, 0.1).is_infinite());
        assert!(safe_velocity_cap(0.01, 0.0, 1.5, 0.1) < 0.1);
        assert_eq!(safe_velocity_cap(-1.0, 3.0, 1.5, 0.1), 0.0);
        let closed = safe_velocity_cap(10.0, 5.0, 1.5, 0.1);
        let oracle = brute_force_cap(10.0, 5.0, 1.5, 0.1);
        assert!((closed - oracle).abs() < 0.01, "closed {closed} oracle {oracle}");
        assert_abs_diff_eq!(closed, 7.267715281675349, epsilon = 1e-9);
    }

    #[test]
    fn safe_cap_matches_oracle_on_grid() {
        for &(h, vl) in &[(2.0, 0.0), (5.0, 2.0), (20.0, 10.0), (0.5, 8.0)] {
            let closed = safe_velocity_cap(h, vl, 4.5, 0.1);
            let oracle = brute_force_cap(h, vl, 4.5, 0.1);
            assert!((closed - oracle).abs() < 0.01, "h={h} vl={vl}: {closed} vs {oracle}");
        }
    }

    proptest! {
        #[test]
        fn idm_decreasing_in_velocity(h in 1.0f64..200.0, dv in -5.0f64..5.0, v in 0.01f64..29.0, dvel in 0.01f64..0.99) {
            let p = table();
            let v2 = v + dvel;
            prop_assume!(v2 < p.v0);
            let a1 = idm_acceleration(KinematicInput::new(h, dv, v), &p).unwrap();
            let a2 = idm_acceleration(KinematicInput::new(h, dv, v2), &p).unwrap();
            prop_assert!(a2 < a1);
        }

        #[test]
        fn idm_increasing_in_headway(h in 0.5f64..200.0, dh in 0.01f64..10.0, dv in -5.0f64..5.0, v in 0.0f64..29.0) {
            let p = table();
            let a1 = idm_acceleration(KinematicInput::new(h, dv, v), &p).unwrap();
            let a2 = idm_acceleration(KinematicInput::new(h + dh, dv, v), &p).unwrap();
            prop_assert!(a2 > a1);
        }

        #[test]
        fn idm_never_exceeds_max_accel(h in 0.1f64..1e6, dv in -30.0f64..30.0, v in 0.0f64..40.0) {
            let p = table();
            prop_assert!(idm_acceleration(KinematicInput::new(h, dv, v), &p).unwrap() <= p.max_accel);
        }

        #[test]
        fn desired_headway_at_least_min_gap(v in 0.0f64..40.0, dv in -40.0f64..40.0) {
            prop_assert!(desired_headway(v, dv, &table()) >= 2.0);
        }

        #[test]
        fn safe_cap_monotone_in_headway(h in 0.0f64..100.0, dh in 0.0f64..10.0, vl in 0.0f64..30.0) {
            prop_assert!(safe_velocity_cap(h + dh, vl, 4.5, 0.1) >= safe_velocity_cap(h, vl, 4.5, 0.1));
        }
    }
}
