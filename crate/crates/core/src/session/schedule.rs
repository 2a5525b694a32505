use super::event::ObjectKind;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

/// One synthetic object, timed relative to the start of its set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduledObject {
    pub object_id: u64,
    pub view: usize,
    pub kind: ObjectKind,
    pub spawn_ms: u64,
    pub expire_ms: u64,
}

/// Anomaly stream for every set of a session, drawn once up front.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalySchedule {
    /// Indexed by global set number, each sorted by spawn time then view.
    pub sets: Vec<Vec<ScheduledObject>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleParams {
    pub n_sets: usize,
    pub n_views: usize,
    pub set_duration_ms: u64,
    /// Objects per view per minute.
    pub abnormal_rate: f64,
    pub normal_rate: f64,
    pub dwell_ms: u64,
}

impl AnomalySchedule {
    /// Independent Poisson arrivals per view and kind, truncated at set end.
    pub fn draw(params: &ScheduleParams, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(3);
        let mut next_id = 0u64;
        let mut sets = Vec::with_capacity(params.n_sets);
        for _ in 0..params.n_sets {
            let mut objs = Vec::new();
            for view in 0..params.n_views {
                for (kind, rate) in [
                    (ObjectKind::Abnormal, params.abnormal_rate),
                    (ObjectKind::Normal, params.normal_rate),
                ] {
                    for spawn_ms in arrivals(rate, params.set_duration_ms, &mut rng) {
                        objs.push((spawn_ms, view, kind));
                    }
                }
            }
            objs.sort_by_key(|&(t, v, k)| (t, v, k == ObjectKind::Normal));
            sets.push(
                objs.into_iter()
                    .map(|(spawn_ms, view, kind)| {
                        let id = next_id;
                        next_id += 1;
                        ScheduledObject {
                            object_id: id,
                            view,
                            kind,
                            spawn_ms,
                            expire_ms: (spawn_ms + params.dwell_ms).min(params.set_duration_ms),
                        }
                    })
                    .collect(),
            );
        }
        Self { sets }
    }

    pub fn total_objects(&self) -> usize {
        self.sets.iter().map(Vec::len).sum()
    }

    pub fn count_kind(&self, kind: ObjectKind) -> usize {
        self.sets.iter().flatten().filter(|o| o.kind == kind).count()
    }
}

fn arrivals<R: Rng + ?Sized>(rate_per_min: f64, duration_ms: u64, rng: &mut R) -> Vec<u64> {
    let mut out = Vec::new();
    if rate_per_min <= 0.0 {
        return out;
    }
    let exp = Exp::new(rate_per_min / 60_000.0).expect("positive rate");
    let mut t = 0.0;
    loop {
        t += exp.sample(rng);
        if t >= duration_ms as f64 {
            return out;
        }
        out.push(t.floor() as u64);
    }
}
