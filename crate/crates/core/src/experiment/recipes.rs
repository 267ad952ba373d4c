//! Named scenarios, one per experiment row.

use crate::control::{FollowerStopperParams, PiSaturationParams};
use crate::engine::SimConfig;
use crate::policy::PolicyArch;
use crate::scenario::{
    AvConfig, AvControl, NetworkConfig, ObservationConfig, ObservationMode, Placement, ScenarioConfig,
};

#[derive(Debug, Clone, PartialEq)]
pub struct Recipe {
    pub name: &'static str,
    pub description: &'static str,
    pub scenario: ScenarioConfig,
}

/// Training protocol: 75 s warmup, 300 s controlled horizon.
fn training_sim() -> SimConfig {
    SimConfig::default()
}

/// Figure protocol: 300 s without automation, then 300 s controlled.
fn figure_sim() -> SimConfig {
    SimConfig {
        warmup: 300.0,
        horizon: 300.0,
        ..SimConfig::default()
    }
}

fn single_av(control: AvControl) -> AvConfig {
    AvConfig {
        count: 1,
        placement: Placement::Contiguous,
        control,
        lane: 0,
    }
}

fn learned(policy: PolicyArch) -> AvControl {
    AvControl::Learned {
        policy,
        lane_actions: false,
    }
}

fn full_obs() -> ObservationConfig {
    ObservationConfig {
        mode: ObservationMode::Full,
        normalize: true,
    }
}

fn ring_260_learned(name: &str, policy: PolicyArch) -> ScenarioConfig {
    let mut s = ScenarioConfig::ring(name, 260.0, 22);
    s.network = NetworkConfig::Ring {
        length: 260.0,
        lanes: 1,
        train_range: Some([220.0, 270.0]),
        test_range: Some([210.0, 290.0]),
    };
    s.avs = single_av(learned(policy));
    s.sim = training_sim();
    s
}

fn multi_av(name: &str, count: usize) -> ScenarioConfig {
    let mut s = ScenarioConfig::ring(name, 230.0, 22);
    s.avs = AvConfig {
        count,
        placement: Placement::Contiguous,
        control: learned(PolicyArch::mlp_3x3()),
        lane: 0,
    };
    s.observation = full_obs();
    s.sim = training_sim();
    s
}

fn figure_eight(name: &str, avs: usize) -> ScenarioConfig {
    let mut s = ScenarioConfig::ring(name, 402.0, 14);
    s.network = NetworkConfig::FigureEight {
        loop_radius: 30.0,
        total_length: 402.0,
        zone_length: 10.0,
    };
    s.avs = if avs == 0 {
        AvConfig::none()
    } else {
        AvConfig {
            count: avs,
            placement: Placement::Contiguous,
            control: learned(PolicyArch::mlp_3x3()),
            lane: 0,
        }
    };
    s.observation = full_obs();
    s.sim = training_sim();
    s
}

pub fn all() -> Vec<Recipe> {
    let mut sugiyama = ScenarioConfig::ring("sugiyama-230", 230.0, 22);
    sugiyama.sim = SimConfig {
        warmup: 0.0,
        horizon: 300.0,
        ..SimConfig::default()
    };

    let mut fs = ScenarioConfig::ring("ring-260-fs", 260.0, 22);
    fs.avs = single_av(AvControl::FollowerStopper {
        params: FollowerStopperParams::default(),
    });
    fs.sim = figure_sim();

    let mut pi = ScenarioConfig::ring("ring-260-pi", 260.0, 22);
    pi.avs = single_av(AvControl::PiSaturation {
        params: PiSaturationParams::default(),
    });
    pi.sim = figure_sim();

    let mut twolane = ScenarioConfig::ring("twolane-230-6av", 230.0, 44);
    twolane.network = NetworkConfig::Ring {
        length: 230.0,
        lanes: 2,
        train_range: None,
        test_range: None,
    };
    twolane.avs = AvConfig {
        count: 6,
        placement: Placement::Contiguous,
        control: AvControl::Learned {
            policy: PolicyArch::mlp_3x3(),
            lane_actions: true,
        },
        lane: 1,
    };
    twolane.observation = full_obs();
    twolane.sim = training_sim();

    vec![
        Recipe {
            name: "sugiyama-230",
            description: "22 human drivers on a 230 m ring; stop-and-go waves form",
            scenario: sugiyama,
        },
        Recipe {
            name: "ring-260-fs",
            description: "260 m ring, one FollowerStopper AV after 300 s of human driving",
            scenario: fs,
        },
        Recipe {
            name: "ring-260-pi",
            description: "260 m ring, one PI-with-saturation AV after 300 s of human driving",
            scenario: pi,
        },
        Recipe {
            name: "ring-260-mlp",
            description: "260 m ring, one learned MLP AV, trained on 220-270 m",
            scenario: ring_260_learned("ring-260-mlp", PolicyArch::mlp_3x3()),
        },
        Recipe {
            name: "ring-260-gru",
            description: "260 m ring, one learned GRU AV, trained on 220-270 m",
            scenario: ring_260_learned("ring-260-gru", PolicyArch::gru_5()),
        },
        Recipe {
            name: "ring-multiAV-3",
            description: "230 m ring, 3 consecutive AVs under one fully observed policy",
            scenario: multi_av("ring-multiAV-3", 3),
        },
        Recipe {
            name: "ring-multiAV-11",
            description: "230 m ring, 11 consecutive AVs under one fully observed policy",
            scenario: multi_av("ring-multiAV-11", 11),
        },
        Recipe {
            name: "twolane-230-6av",
            description: "two-lane 230 m ring, 44 vehicles, 6 AVs steering and changing lanes",
            scenario: twolane,
        },
        Recipe {
            name: "fig8-0av",
            description: "402 m figure-eight, 14 human drivers",
            scenario: figure_eight("fig8-0av", 0),
        },
        Recipe {
            name: "fig8-1av",
            description: "402 m figure-eight, one learned AV among 13 humans",
            scenario: figure_eight("fig8-1av", 1),
        },
        Recipe {
            name: "fig8-14av",
            description: "402 m figure-eight, all 14 vehicles learned",
            scenario: figure_eight("fig8-14av", 14),
        },
    ]
}

pub fn find(name: &str) -> Option<Recipe> {
    all().into_iter().find(|r| r.name == name)
}

pub fn names() -> Vec<&'static str> {
    all().iter().map(|r| r.name).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Env;
    use crate::scenario::LengthChoice;

    #[test]
    fn every_recipe_builds() {
        for r in all() {
            r.scenario.validate().unwrap_or_else(|e| panic!("{}: {e}", r.name));
            assert_eq!(r.name, r.scenario.name);
            let mut env = Env::new(r.scenario.clone()).unwrap();
            env.reset(0, LengthChoice::Nominal).unwrap();
            let n = vec![0.0; env.action_size()];
            env.step(&n).unwrap();
        }
    }

    #[test]
    fn expected_names() {
        assert_eq!(
            names(),
            [
                "sugiyama-230",
                "ring-260-fs",
                "ring-260-pi",
                "ring-260-mlp",
                "ring-260-gru",
                "ring-multiAV-3",
                "ring-multiAV-11",
                "twolane-230-6av",
                "fig8-0av",
                "fig8-1av",
                "fig8-14av"
            ]
        );
        assert!(find("nope").is_none());
    }
}
