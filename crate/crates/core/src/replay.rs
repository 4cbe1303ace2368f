//! Experience storage partitioned by noise subgroup.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::world::{Observation, Vec2};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    /// Perturbed observation the action was chosen from.
    pub obs: Observation,
    pub action: usize,
    pub reward: f64,
    pub next_obs: Observation,
    /// True only for episodes ending in collision or at the goal.
    pub done: bool,
    pub subgroup_id: usize,
}

#[derive(Debug, Error, PartialEq)]
pub enum ReplayError {
    #[error("subgroup {id} is outside the catalog of {count}")]
    UnknownSubgroup { id: usize, count: usize },
    #[error("no subgroup holds {min_fill} transitions yet")]
    NotReady { min_fill: usize },
}

/// Transitions drawn from a single subgroup.
#[derive(Debug, Clone)]
pub struct SubgroupBatch<'a> {
    pub subgroup_id: usize,
    pub transitions: Vec<&'a Transition>,
}

/// One FIFO ring per subgroup.
#[derive(Debug, Clone)]
pub struct SubgroupBuffer {
    rings: Vec<VecDeque<Transition>>,
    capacity: usize,
    min_fill: usize,
    inserted: Vec<u64>,
}

impl SubgroupBuffer {
    /// `total_capacity` is split evenly across `subgroups`.
    pub fn new(subgroups: usize, total_capacity: usize, min_fill: usize) -> Self {
        let capacity = (total_capacity / subgroups.max(1)).max(1);
        Self {
            rings: (0..subgroups).map(|_| VecDeque::with_capacity(capacity.min(4096))).collect(),
            capacity,
            min_fill,
            inserted: vec![0; subgroups],
        }
    }

    pub fn subgroups(&self) -> usize {
        self.rings.len()
    }

    pub fn capacity_per_subgroup(&self) -> usize {
        self.capacity
    }

    pub fn len(&self, subgroup: usize) -> usize {
        self.rings[subgroup].len()
    }

    pub fn total_len(&self) -> usize {
        self.rings.iter().map(VecDeque::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total_len() == 0
    }

    /// Number of transitions ever pushed to `subgroup`.
    pub fn inserted(&self, subgroup: usize) -> u64 {
        self.inserted[subgroup]
    }

    /// Stored transitions of `subgroup`, oldest first.
    pub fn iter(&self, subgroup: usize) -> impl Iterator<Item = &Transition> {
        self.rings[subgroup].iter()
    }

    pub fn push(&mut self, t: Transition) -> Result<(), ReplayError> {
        let count = self.rings.len();
        let ring = self
            .rings
            .get_mut(t.subgroup_id)
            .ok_or(ReplayError::UnknownSubgroup { id: t.subgroup_id, count })?;
        if ring.len() == self.capacity {
            ring.pop_front();
        }
        self.inserted[t.subgroup_id] += 1;
        ring.push_back(t);
        Ok(())
    }

    /// `c` uniform draws with replacement from every subgroup holding at
    /// least `min_fill` transitions, in subgroup order.
    pub fn sample_per_subgroup<R: Rng + ?Sized>(&self, c: usize, rng: &mut R) -> Result<Vec<SubgroupBatch<'_>>, ReplayError> {
        let batches: Vec<SubgroupBatch> = self
            .rings
            .iter()
            .enumerate()
            .filter(|(_, ring)| !ring.is_empty() && ring.len() >= self.min_fill)
            .map(|(id, ring)| SubgroupBatch {
                subgroup_id: id,
                transitions: (0..c).map(|_| &ring[rng.random_range(0..ring.len())]).collect(),
            })
            .collect();
        if batches.is_empty() {
            return Err(ReplayError::NotReady { min_fill: self.min_fill });
        }
        Ok(batches)
    }

    /// Flattens the contents for persistence: per transition the fields
    /// `subgroup, action, reward, done, obs, next_obs`.
    pub fn to_flat(&self) -> (Vec<f64>, Vec<u64>) {
        let mut out = Vec::new();
        for ring in &self.rings {
            for t in ring {
                out.extend([t.subgroup_id as f64, t.action as f64, t.reward, if t.done { 1.0 } else { 0.0 }]);
                push_obs(&mut out, &t.obs);
                push_obs(&mut out, &t.next_obs);
            }
        }
        (out, self.inserted.clone())
    }

    /// Inverse of [`Self::to_flat`] for observations with `beams` LiDAR readings.
    pub fn from_flat(
        subgroups: usize,
        total_capacity: usize,
        min_fill: usize,
        beams: usize,
        flat: &[f64],
        inserted: Vec<u64>,
    ) -> Result<Self, String> {
        let obs_len = 4 + beams;
        let width = 4 + 2 * obs_len;
        if !flat.len().is_multiple_of(width) || inserted.len() != subgroups {
            return Err("replay block has an unexpected shape".into());
        }
        let mut buffer = Self::new(subgroups, total_capacity, min_fill);
        for row in flat.chunks_exact(width) {
            let t = Transition {
                subgroup_id: row[0] as usize,
                action: row[1] as usize,
                reward: row[2],
                done: row[3] != 0.0,
                obs: read_obs(&row[4..4 + obs_len]),
                next_obs: read_obs(&row[4 + obs_len..]),
            };
            buffer.push(t).map_err(|e| e.to_string())?;
        }
        buffer.inserted = inserted;
        Ok(buffer)
    }
}

fn push_obs(out: &mut Vec<f64>, o: &Observation) {
    out.extend([o.velocity.x, o.velocity.y, o.goal_rel.x, o.goal_rel.y]);
    out.extend(&o.lidar);
}

fn read_obs(v: &[f64]) -> Observation {
    Observation {
        velocity: Vec2::new(v[0], v[1]),
        goal_rel: Vec2::new(v[2], v[3]),
        lidar: v[4..].to_vec(),
    }
}
