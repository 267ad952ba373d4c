//! Space-time extraction from episode CSVs and a wave-speed estimate.

use std::collections::BTreeMap;

use crate::episode::EPISODE_CSV_HEADER;
use crate::error::ConfigError;
use crate::network::wrap;
use crate::output::fmt_float;

pub const SPACETIME_CSV_HEADER: &str = "time,vehicle_id,position,velocity";

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub step: usize,
    pub time: f64,
    /// `(vehicle_id, lane, position, velocity)`.
    pub vehicles: Vec<(usize, usize, f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedEpisode {
    /// Comment lines without their leading `# `.
    pub preamble: Vec<String>,
    pub snapshots: Vec<Snapshot>,
}

impl ParsedEpisode {
    /// Value of `key=...` in the preamble, if present.
    pub fn meta(&self, key: &str) -> Option<&str> {
        let prefix = format!("{key}=");
        self.preamble
            .iter()
            .flat_map(|l| l.split_whitespace())
            .find_map(|tok| tok.strip_prefix(prefix.as_str()))
    }
}

fn bad(line: usize, msg: &str) -> ConfigError {
    ConfigError::invalid(format!("episode csv line {line}: {msg}"))
}

pub fn parse_episode_csv(text: &str) -> Result<ParsedEpisode, ConfigError> {
    let mut preamble = Vec::new();
    let mut lines = text.lines().enumerate();
    let mut header_seen = false;
    for (i, line) in lines.by_ref() {
        if let Some(c) = line.strip_prefix('#') {
            preamble.push(c.trim_start().to_string());
            continue;
        }
        if line != EPISODE_CSV_HEADER {
            return Err(bad(i + 1, "expected the episode header"));
        }
        header_seen = true;
        break;
    }
    if !header_seen {
        return Err(ConfigError::invalid("episode csv has no header"));
    }
    let mut snapshots: Vec<Snapshot> = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(bad(i + 1, "expected 8 fields"));
        }
        let num = |k: usize| f[k].parse::<f64>().map_err(|_| bad(i + 1, "bad number"));
        let int = |k: usize| f[k].parse::<usize>().map_err(|_| bad(i + 1, "bad integer"));
        let step = int(0)?;
        let row = (int(2)?, int(3)?, num(4)?, num(5)?);
        match snapshots.last_mut() {
            Some(s) if s.step == step => s.vehicles.push(row),
            _ => snapshots.push(Snapshot {
                step,
                time: num(1)?,
                vehicles: vec![row],
            }),
        }
    }
    Ok(ParsedEpisode { preamble, snapshots })
}

/// Long-form `time,vehicle_id,position,velocity` rows for every `every`-th
/// step, preceded by the source preamble.
pub fn spacetime_csv(ep: &ParsedEpisode, every: usize) -> String {
    let every = every.max(1);
    let mut out = String::new();
    for line in &ep.preamble {
        out.push_str("# ");
        out.push_str(line);
        out.push('\n');
    }
    out.push_str(SPACETIME_CSV_HEADER);
    out.push('\n');
    for snap in ep.snapshots.iter().filter(|s| s.step % every == 0) {
        let t = fmt_float(snap.time);
        for &(id, _, pos, vel) in &snap.vehicles {
            out.push_str(&format!("{t},{id},{},{}\n", fmt_float(pos), fmt_float(vel)));
        }
    }
    out
}

/// Velocity as a function of route position on one lane, sampled on a
/// 1 m grid by linear interpolation between consecutive vehicles.
fn velocity_profile(vehicles: &[(usize, usize, f64, f64)], lane: usize, length: f64) -> Option<Vec<f64>> {
    let mut pts: Vec<(f64, f64)> = vehicles
        .iter()
        .filter(|v| v.1 == lane)
        .map(|v| (v.2, v.3))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let bins = length.floor() as usize;
    let mut prof = Vec::with_capacity(bins);
    let mut k = 0;
    for b in 0..bins {
        let x = b as f64;
        while k < pts.len() && pts[k].0 <= x {
            k += 1;
        }
        // bracketing vehicles, wrapping around the route
        let (p0, v0) = if k == 0 { (pts[pts.len() - 1].0 - length, pts[pts.len() - 1].1) } else { pts[k - 1] };
        let (p1, v1) = if k == pts.len() { (pts[0].0 + length, pts[0].1) } else { pts[k] };
        let w = if p1 > p0 { (x - p0) / (p1 - p0) } else { 0.0 };
        prof.push(v0 + w * (v1 - v0));
    }
    Some(prof)
}

/// Speed (m/s) at which the velocity pattern travels along the route,
/// from the shift that best aligns consecutive profiles. Negative means
/// upstream. `None` when the profile is flat (no waves).
pub fn estimate_wave_speed(ep: &ParsedEpisode, length: f64, lane: usize, from_time: f64) -> Option<f64> {
    let snaps: Vec<&Snapshot> = ep.snapshots.iter().filter(|s| s.time >= from_time).collect();
    let max_shift = 30i64;
    let mut shifts = Vec::new();
    let mut dts = Vec::new();
    let mut prev: Option<(f64, Vec<f64>)> = None;
    for snap in snaps {
        let Some(mut prof) = velocity_profile(&snap.vehicles, lane, length) else {
            continue;
        };
        let mean = prof.iter().sum::<f64>() / prof.len() as f64;
        prof.iter_mut().for_each(|v| *v -= mean);
        let energy: f64 = prof.iter().map(|v| v * v).sum();
        if energy / (prof.len() as f64) < 1e-6 {
            prev = None;
            continue;
        }
        if let Some((t0, p0)) = &prev {
            let n = prof.len() as i64;
            let best = (-max_shift..=max_shift)
                .map(|s| {
                    let c: f64 = (0..n)
                        .map(|x| p0[x as usize] * prof[(x + s).rem_euclid(n) as usize])
                        .sum();
                    (s, c)
                })
                .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.abs().cmp(&a.0.abs())))
                .map(|(s, _)| s)
                .unwrap_or(0);
            shifts.push(best as f64);
            dts.push(snap.time - t0);
        }
        prev = Some((snap.time, prof));
    }
    if shifts.is_empty() {
        return None;
    }
    let total_dt: f64 = dts.iter().sum();
    Some(shifts.iter().sum::<f64>() / total_dt)
}

/// Mean displacement per unit time of each vehicle between samples.
pub fn trace_slopes(ep: &ParsedEpisode, length: f64) -> BTreeMap<usize, f64> {
    let mut first: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
    let mut travelled: BTreeMap<usize, (f64, f64, f64)> = BTreeMap::new();
    for snap in &ep.snapshots {
        for &(id, _, pos, _) in &snap.vehicles {
            first.entry(id).or_insert((snap.time, pos));
            let e = travelled.entry(id).or_insert((0.0, pos, snap.time));
            e.0 += wrap(pos - e.1, length);
            e.1 = pos;
            e.2 = snap.time;
        }
    }
    travelled
        .into_iter()
        .map(|(id, (dist, _, t_end))| {
            let t0 = first[&id].0;
            (id, if t_end > t0 { dist / (t_end - t0) } else { 0.0 })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::episode::run_episode;
    use crate::equilibrium::uniform_flow_velocity;
    use crate::scenario::{LengthChoice, ScenarioConfig};

    fn csv_of(s: &ScenarioConfig, seed: u64, steps: Option<usize>) -> String {
        let log = run_episode(s, LengthChoice::Nominal, seed, None, steps).unwrap();
        let mut buf = Vec::new();
        log.write_csv(&mut buf, &["mixflow test".into(), "length=230".into()]).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn parse_and_downsample() {
        let s = ScenarioConfig::ring("t", 230.0, 22);
        let ep = parse_episode_csv(&csv_of(&s, 0, Some(25))).unwrap();
        assert_eq!(ep.snapshots.len(), 25);
        assert_eq!(ep.meta("length"), Some("230"));
        let out = spacetime_csv(&ep, 10);
        let body: Vec<&str> = out.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(body[0], SPACETIME_CSV_HEADER);
        assert_eq!(body.len(), 1 + 2 * 22);
        assert!(parse_episode_csv("garbage").is_err());
    }

    #[test]
    fn equilibrium_traces_are_parallel() {
        let mut s = ScenarioConfig::ring("eq", 230.0, 22);
        s.idm = s.idm.noiseless();
        s.sim.warmup = 0.0;
        s.sim.horizon = 600.0;
        let ep = parse_episode_csv(&csv_of(&s, 0, None)).unwrap();
        // drop the start-up transient
        let late = ParsedEpisode {
            preamble: ep.preamble.clone(),
            snapshots: ep.snapshots.into_iter().filter(|x| x.time > 400.0).collect(),
        };
        let v_star = uniform_flow_velocity(230.0, 22, 5.0, &s.idm).unwrap().v_star;
        for (_, slope) in trace_slopes(&late, 230.0) {
            assert!((slope - v_star).abs() < 1e-6, "{slope} vs {v_star}");
        }
        assert_eq!(estimate_wave_speed(&late, 230.0, 0, 0.0), None);
    }

    #[test]
    fn stop_and_go_waves_travel_upstream() {
        let mut s = ScenarioConfig::ring("sugiyama-230", 230.0, 22);
        s.sim.warmup = 0.0;
        s.sim.horizon = 300.0;
        let ep = parse_episode_csv(&csv_of(&s, 0, None)).unwrap();
        let c = estimate_wave_speed(&ep, 230.0, 0, 200.0).unwrap();
        assert!(c < -1.0, "{c}");
    }
}
