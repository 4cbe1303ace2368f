//! Map documents (JSON) and trajectory CSV export.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::types::{Outcome, VesselState, WorldMap};

/// One trajectory sample: time (s), pose, speed, the reward that led to it
/// and the outcome reported by that step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    #[serde(rename = "psi")]
    pub heading: f64,
    pub v: f64,
    pub reward: f64,
    #[serde(with = "outcome_str")]
    pub outcome: Outcome,
}

impl TrajectoryRow {
    pub fn new(state: &VesselState, dt: f64, reward: f64, outcome: Outcome) -> Self {
        Self {
            t: state.step_count as f64 * dt,
            x: state.position.x,
            y: state.position.y,
            heading: state.heading,
            v: state.speed,
            reward,
            outcome,
        }
    }
}

mod outcome_str {
    use super::Outcome;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(o: &Outcome, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(o.as_str())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Outcome, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

pub fn write_trajectory_csv<W: Write>(rows: &[TrajectoryRow], out: W) -> csv::Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_trajectory_csv<R: Read>(input: R) -> csv::Result<Vec<TrajectoryRow>> {
    csv::Reader::from_reader(input).deserialize().collect()
}

impl WorldMap {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("map serializes")
    }

    /// Parses a map document, rejecting non-finite or degenerate geometry.
    pub fn from_json(doc: &str) -> Result<Self, String> {
        let map: WorldMap = serde_json::from_str(doc).map_err(|e| e.to_string())?;
        let finite = |v: &nalgebra::Vector2<f64>| v.x.is_finite() && v.y.is_finite();
        if !(finite(&map.bounds.min) && finite(&map.bounds.max))
            || map.bounds.width() <= 0.0
            || map.bounds.height() <= 0.0
        {
            return Err("bounds must be a finite, non-empty rectangle".into());
        }
        if !finite(&map.goal) || !finite(&map.start) {
            return Err("goal and start must be finite".into());
        }
        for (i, o) in map.obstacles.iter().enumerate() {
            if !finite(&o.center) || !(o.radius > 0.0 && o.radius.is_finite()) {
                return Err(format!("obstacle {i} is degenerate"));
            }
        }
        for (i, v) in map.vortices.iter().enumerate() {
            if !finite(&v.center) || !v.circulation.is_finite() || !(v.core_radius > 0.0) {
                return Err(format!("vortex {i} is degenerate"));
            }
        }
        Ok(map)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{canonical_map, Vec2};

    #[test]
    fn map_document_round_trip() {
        let map = canonical_map();
        let doc = map.to_json();
        assert!(doc.contains("\"obstacles\"") && doc.contains("\"vortices\""));
        assert_eq!(WorldMap::from_json(&doc).unwrap(), map);
    }

    #[test]
    fn degenerate_map_rejected() {
        let mut map = canonical_map();
        map.obstacles[2].radius = -1.0;
        assert!(WorldMap::from_json(&map.to_json()).unwrap_err().contains("obstacle 2"));
    }

    #[test]
    fn trajectory_csv_round_trip() {
        let state = VesselState {
            position: Vec2::new(1.0 / 3.0, 2.5),
            heading: -0.1,
            speed: 1.2,
            step_count: 7,
        };
        let rows = vec![
            TrajectoryRow::new(&state, 0.1, 0.0, Outcome::Running),
            TrajectoryRow::new(&state, 0.1, -0.812345678901234, Outcome::Collision),
        ];
        let mut buf = Vec::new();
        write_trajectory_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,x,y,psi,v,reward,outcome"));
        assert_eq!(read_trajectory_csv(&buf[..]).unwrap(), rows);
    }
}
