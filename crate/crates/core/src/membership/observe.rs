//! Query the APIs for every target instance and group the answers by the
//! identity the attacker assigns to each instance.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::defenses::{counter_topk_rows, CounterStrategy, DefenseSpec};
use crate::error::{Error, Result};
use crate::par;
use crate::rng::derive_seed;
use crate::student::{Apis, StudentConfig, Surface};
use crate::world::{Extractor, World};

/// A world together with the APIs an attacker can query.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub world: Arc<World>,
    pub apis: Apis,
}

impl Scenario {
    /// Build the verification and recognition students on the world's public identities.
    pub fn new(world: World, students: &StudentConfig, seed: u64) -> Result<Self> {
        let apis = Apis::build(&world, students, seed)?;
        Ok(Scenario {
            world: Arc::new(world),
            apis,
        })
    }

    /// Feature surface only; cheaper when no student is needed.
    pub fn features_only(world: World) -> Result<Self> {
        let apis = Apis::features_only(Arc::new(world.extractor()?.clone()));
        Ok(Scenario {
            world: Arc::new(world),
            apis,
        })
    }

    pub fn with_filters(&self, filters: Vec<DefenseSpec>) -> Self {
        Scenario {
            world: self.world.clone(),
            apis: self.apis.with_filters(filters),
        }
    }
}

/// How the attacker labels target instances with identities.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LabelerSpec {
    /// True identity labels.
    #[default]
    Oracle,
    /// Nearest centroid over the clean feature space, with centroids from
    /// the first `exemplars` images of each target identity.
    NearestCentroid { exemplars: usize },
}

#[derive(Clone, Debug)]
pub enum Labeler {
    Oracle,
    NearestCentroid { ids: Vec<u32>, centroids: Vec<Vec<f64>> },
}

impl Labeler {
    pub fn fit(spec: LabelerSpec, world: &World, extractor: &Extractor) -> Result<Self> {
        match spec {
            LabelerSpec::Oracle => Ok(Labeler::Oracle),
            LabelerSpec::NearestCentroid { exemplars } => {
                if exemplars == 0 {
                    return Err(Error::config("labeler.exemplars", "must be at least 1"));
                }
                let mut sums: BTreeMap<u32, (Vec<f64>, usize)> = BTreeMap::new();
                for inst in &world.target {
                    let e = sums.entry(inst.y1).or_insert((vec![0.0; extractor.feature_dim()], 0));
                    if e.1 < exemplars {
                        let f = extractor.extract(&inst.x)?;
                        e.0.iter_mut().zip(&f).for_each(|(a, b)| *a += b);
                        e.1 += 1;
                    }
                }
                if sums.is_empty() {
                    return Err(Error::TooFewSamples("no exemplars".into()));
                }
                let (ids, centroids) = sums
                    .into_iter()
                    .map(|(id, (s, n))| (id, s.into_iter().map(|v| v / n as f64).collect()))
                    .unzip();
                Ok(Labeler::NearestCentroid { ids, centroids })
            }
        }
    }
}

/// Identity label for each instance given its clean feature vector.
pub fn assign_classes(labeler: &Labeler, true_ids: &[u32], features: &[Vec<f64>]) -> Result<Vec<u32>> {
    match labeler {
        Labeler::Oracle => Ok(true_ids.to_vec()),
        Labeler::NearestCentroid { ids, centroids } => {
            if centroids.is_empty() {
                return Err(Error::TooFewSamples("empty exemplar set".into()));
            }
            Ok(features
                .iter()
                .map(|f| {
                    let d = |c: &Vec<f64>| c.iter().zip(f).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
                    let best = (0..centroids.len()).fold(0, |b, j| if d(&centroids[j]) < d(&centroids[b]) { j } else { b });
                    ids[best]
                })
                .collect())
        }
    }
}

/// API observations of one assigned identity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Observation {
    /// Feature vectors or confidence rows, one per instance.
    Rows(Vec<Vec<f64>>),
    /// Distances of all instance pairs.
    Distances(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassGroup {
    pub y1: u32,
    pub observation: Observation,
}

impl ClassGroup {
    pub fn len(&self) -> usize {
        match &self.observation {
            Observation::Rows(r) => r.len(),
            Observation::Distances(d) => d.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Groups plus the hidden membership flag of each, kept apart so attacks
/// never see it.
#[derive(Clone, Debug)]
pub struct Observed {
    pub groups: Vec<ClassGroup>,
    pub membership: Vec<bool>,
    /// Share of instances labeled with their true identity.
    pub label_accuracy: f64,
}

pub(crate) fn query_id(surface: Surface, a: usize, b: usize) -> u64 {
    derive_seed(surface.tag(), &[a as u64, b as u64])
}

/// Query `surface` for every target instance and group the responses.
/// Identities left with fewer than two instances are dropped.
pub fn observe(scenario: &Scenario, surface: Surface, labeler: LabelerSpec, counter: CounterStrategy) -> Result<Observed> {
    let world = &scenario.world;
    let apis = &scenario.apis;
    let clean: Vec<Vec<f64>> = par::try_map_slice(&world.target, |i| apis.extractor.extract(&i.x))?;
    let true_ids: Vec<u32> = world.target.iter().map(|i| i.y1).collect();
    let fitted = Labeler::fit(labeler, world, &apis.extractor)?;
    let labels = assign_classes(&fitted, &true_ids, &clean)?;
    let label_accuracy = labels.iter().zip(&true_ids).filter(|(a, b)| a == b).count() as f64 / labels.len().max(1) as f64;

    let mut members: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        members.entry(l).or_default().push(i);
    }
    let membership_of: BTreeMap<u32, bool> = world.target_classes().into_iter().collect();
    let kept: Vec<(u32, Vec<usize>)> = members.into_iter().filter(|(_, idx)| idx.len() >= 2).collect();

    let groups = par::try_map_slice(&kept, |(y1, idx)| {
        let observation = match surface {
            Surface::Feature => Observation::Rows(
                idx.iter()
                    .map(|&i| apis.feature(&world.target[i].x, query_id(surface, i, usize::MAX)))
                    .collect::<Result<_>>()?,
            ),
            Surface::Verification => {
                if apis.verification.is_none() {
                    return Err(Error::Unsupported("no verification student attached".into()));
                }
                let mut d = Vec::with_capacity(idx.len() * (idx.len() - 1) / 2);
                for (a, &i) in idx.iter().enumerate() {
                    for &j in &idx[a + 1..] {
                        d.push(apis.distance_of_features(&clean[i], &clean[j], query_id(surface, i, j))?);
                    }
                }
                Observation::Distances(d)
            }
            Surface::Recognition => {
                let c = apis
                    .n_head_classes()
                    .ok_or_else(|| Error::Unsupported("no recognition student attached".into()))?;
                let responses = idx
                    .iter()
                    .map(|&i| apis.recognize_features(&clean[i], query_id(surface, i, usize::MAX)))
                    .collect::<Result<Vec<_>>>()?;
                Observation::Rows(counter_topk_rows(&responses, counter, c)?)
            }
        };
        Ok(ClassGroup { y1: *y1, observation })
    })?;
    let membership = kept
        .iter()
        .map(|(y1, _)| membership_of.get(y1).copied().unwrap_or(false))
        .collect();
    Ok(Observed {
        groups,
        membership,
        label_accuracy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{generate_oracle_features, WorldConfig};

    #[test]
    fn oracle_labels_are_exact() {
        let ids = [3, 1, 4, 1];
        assert_eq!(assign_classes(&Labeler::Oracle, &ids, &vec![Vec::new(); 4]).unwrap(), ids.to_vec());
    }

    #[test]
    fn nearest_centroid_on_tight_clusters() {
        let cfg = WorldConfig {
            class_spread: 0.05,
            center_spread: 1.0,
            concentration_gap: 1.0,
            seed: 4,
            ..WorldConfig::default()
        };
        let world = generate_oracle_features(&cfg).unwrap();
        let s = Scenario::features_only(world).unwrap();
        let o = observe(&s, Surface::Feature, LabelerSpec::NearestCentroid { exemplars: 1 }, CounterStrategy::default()).unwrap();
        assert!(o.label_accuracy >= 0.95, "{}", o.label_accuracy);
    }

    #[test]
    fn single_exemplar_maps_back_to_itself() {
        let labeler = Labeler::NearestCentroid {
            ids: vec![7, 9],
            centroids: vec![vec![0.0, 1.0], vec![5.0, 5.0]],
        };
        assert_eq!(assign_classes(&labeler, &[0, 0], &[vec![0.0, 1.0], vec![5.0, 5.0]]).unwrap(), vec![7, 9]);
    }

    #[test]
    fn group_shapes_follow_the_surface() {
        let cfg = WorldConfig {
            n_member_classes: 4,
            n_nonmember_classes: 4,
            images_per_class: 6,
            ..WorldConfig::default()
        };
        let s = Scenario::new(generate_oracle_features(&cfg).unwrap(), &StudentConfig::default(), 0).unwrap();
        let f = observe(&s, Surface::Feature, LabelerSpec::Oracle, CounterStrategy::default()).unwrap();
        assert_eq!(f.groups.len(), 8);
        assert_eq!(f.membership.iter().filter(|&&m| m).count(), 4);
        let v = observe(&s, Surface::Verification, LabelerSpec::Oracle, CounterStrategy::default()).unwrap();
        assert!(v.groups.iter().all(|g| matches!(&g.observation, Observation::Distances(d) if d.len() == 15)));
        let r = observe(&s, Surface::Recognition, LabelerSpec::Oracle, CounterStrategy::default()).unwrap();
        assert!(r.groups.iter().all(|g| matches!(&g.observation, Observation::Rows(rows) if rows.len() == 6 && rows[0].len() == 10)));
    }
}
