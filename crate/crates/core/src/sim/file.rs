//! Scenario files: `key = value` lines, `#` comments.
//!
//! ```text
//! route = 0, 1, 2
//! speed_mps = 10
//! vo_hz = 10
//! seed = 7
//! drift.lateral_m_per_m = 0.005
//! drift.yaw_deg_per_m = 0.02
//! drift.scale_error = 1.0
//! drift.step_pos_std_m = 0.01
//! drift.step_rot_std_deg = 0.01
//! gps.period_s = 1        # or "none"
//! gps.noise_std_m = 0.5
//! gps.dropout = 60-90     # repeatable
//! gps.warmup_s = 0
//! gps.warmup_period_s = 1
//! ```

use std::fmt::Write;

use super::{Scenario, SimError};

fn list<T: std::str::FromStr>(v: &str) -> Result<Vec<T>, String> {
    v.split(',')
        .map(|s| s.trim().parse::<T>().map_err(|_| format!("bad list item {:?}", s.trim())))
        .collect()
}

fn num(v: &str) -> Result<f64, String> {
    v.parse::<f64>().map_err(|_| format!("bad number {v:?}"))
}

pub fn parse_scenario(text: &str) -> Result<Scenario, SimError> {
    let mut s = Scenario::default();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| SimError::Parse { line: n + 1, message };
        let (key, value) = line
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| err("expected key = value".into()))?;
        let r: Result<(), String> = (|| {
            match key {
                "route" => s.route = list(value)?,
                "speed_mps" => s.speed_mps = list(value)?,
                "vo_hz" => s.vo_hz = num(value)?,
                "seed" => s.seed = value.parse().map_err(|_| format!("bad seed {value:?}"))?,
                "drift.lateral_m_per_m" => s.drift.lateral_m_per_m = num(value)?,
                "drift.yaw_deg_per_m" => s.drift.yaw_deg_per_m = num(value)?,
                "drift.scale_error" => s.drift.scale_error = num(value)?,
                "drift.step_pos_std_m" => s.drift.step_pos_std_m = num(value)?,
                "drift.step_rot_std_deg" => s.drift.step_rot_std_deg = num(value)?,
                "gps.period_s" => {
                    s.gps.period_s = if value.eq_ignore_ascii_case("none") { None } else { Some(num(value)?) }
                }
                "gps.noise_std_m" => s.gps.noise_std_m = num(value)?,
                "gps.dropout" => {
                    let (a, b) = value.split_once('-').ok_or_else(|| format!("dropout {value:?} is not start-end"))?;
                    s.gps.dropouts.push((num(a.trim())?, num(b.trim())?));
                }
                "gps.warmup_s" => s.gps.warmup_s = num(value)?,
                "gps.warmup_period_s" => s.gps.warmup_period_s = num(value)?,
                _ => return Err(format!("unknown key {key:?}")),
            }
            Ok(())
        })();
        r.map_err(err)?;
    }
    s.validate()?;
    Ok(s)
}

/// Writes `s` back in the file syntax; parsing the result gives `s`.
pub fn scenario_to_string(s: &Scenario) -> String {
    let join = |v: Vec<String>| v.join(", ");
    let mut out = String::new();
    let _ = writeln!(out, "route = {}", join(s.route.iter().map(|x| x.to_string()).collect()));
    let _ = writeln!(out, "speed_mps = {}", join(s.speed_mps.iter().map(|x| x.to_string()).collect()));
    let _ = writeln!(out, "vo_hz = {}", s.vo_hz);
    let _ = writeln!(out, "seed = {}", s.seed);
    let _ = writeln!(out, "drift.lateral_m_per_m = {}", s.drift.lateral_m_per_m);
    let _ = writeln!(out, "drift.yaw_deg_per_m = {}", s.drift.yaw_deg_per_m);
    let _ = writeln!(out, "drift.scale_error = {}", s.drift.scale_error);
    let _ = writeln!(out, "drift.step_pos_std_m = {}", s.drift.step_pos_std_m);
    let _ = writeln!(out, "drift.step_rot_std_deg = {}", s.drift.step_rot_std_deg);
    match s.gps.period_s {
        Some(p) => writeln!(out, "gps.period_s = {p}"),
        None => writeln!(out, "gps.period_s = none"),
    }
    .ok();
    let _ = writeln!(out, "gps.noise_std_m = {}", s.gps.noise_std_m);
    for (a, b) in &s.gps.dropouts {
        let _ = writeln!(out, "gps.dropout = {a}-{b}");
    }
    let _ = writeln!(out, "gps.warmup_s = {}", s.gps.warmup_s);
    let _ = writeln!(out, "gps.warmup_period_s = {}", s.gps.warmup_period_s);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{DriftSpec, GpsSpec};

    #[test]
    fn round_trip() {
        let s = Scenario {
            route: vec![3, 4],
            speed_mps: vec![8.0, 12.5],
            vo_hz: 20.0,
            drift: DriftSpec {
                lateral_m_per_m: 0.004,
                yaw_deg_per_m: -0.01,
                scale_error: 0.5,
                step_pos_std_m: 0.01,
                step_rot_std_deg: 0.02,
            },
            gps: GpsSpec {
                period_s: None,
                noise_std_m: 1.5,
                dropouts: vec![(10.0, 20.5), (30.0, 40.0)],
                warmup_s: 50.0,
                warmup_period_s: 0.5,
            },
            seed: 42,
        };
        assert_eq!(parse_scenario(&scenario_to_string(&s)).unwrap(), s);
    }

    #[test]
    fn comments_and_defaults() {
        let s = parse_scenario("# drive\nroute = 0 # first edge\n\nseed=3\n").unwrap();
        assert_eq!(s.seed, 3);
        assert_eq!(s.vo_hz, 10.0);
    }

    #[test]
    fn errors_carry_line_numbers() {
        match parse_scenario("route = 0\nspeed = 3\n") {
            Err(SimError::Parse { line: 2, message }) => assert!(message.contains("speed")),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_scenario("vo_hz = fast"), Err(SimError::Parse { line: 1, .. })));
        assert!(matches!(parse_scenario("just words"), Err(SimError::Parse { line: 1, .. })));
        assert!(matches!(parse_scenario("gps.dropout = 20-10"), Err(SimError::Invalid(_))));
    }
}
