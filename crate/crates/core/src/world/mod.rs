//! Synthetic identity universe, the teacher feature extractor, and the
//! member / non-member / public splits.
//!
//! Every identity is an isotropic Gaussian cluster around its own center. The
//! sensitive attribute shifts the center along one fixed direction. In oracle
//! mode the clusters live directly in feature space and non-member
//! identities are `concentration_gap` times more spread than member ones; in
//! teacher mode they live in raw input space and the concentration difference
//! has to come out of training.

pub mod io;
pub mod teacher;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::rng::{rng_from, stream};

pub use teacher::{train_teacher, Teacher, TeacherConfig, TrainingLog};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    /// Raw input dimensionality (teacher mode).
    pub input_dim: usize,
    /// Teacher feature size `k`.
    pub feature_dim: usize,
    pub n_member_classes: usize,
    pub n_nonmember_classes: usize,
    /// Images per identity, `m`.
    pub images_per_class: usize,
    /// Within-identity standard deviation.
    pub class_spread: f64,
    /// Standard deviation of identity centers.
    pub center_spread: f64,
    /// Oracle mode: non-member spread over member spread, at least 1.
    pub concentration_gap: f64,
    /// Fraction of identities with `s = 1`.
    pub attribute_balance: f64,
    /// Length of the center shift applied to `s = 1` identities.
    pub attribute_shift: f64,
    /// Identities outside the target set, used for recognition heads and verification probes.
    pub n_public_classes: usize,
    pub public_images_per_class: usize,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            input_dim: 64,
            feature_dim: 32,
            n_member_classes: 40,
            n_nonmember_classes: 40,
            images_per_class: 30,
            class_spread: 0.35,
            center_spread: 1.0,
            concentration_gap: 2.0,
            attribute_balance: 0.5,
            attribute_shift: 2.5,
            n_public_classes: 20,
            public_images_per_class: 10,
            seed: 0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("input_dim", self.input_dim),
            ("feature_dim", self.feature_dim),
            ("n_member_classes", self.n_member_classes),
            ("n_nonmember_classes", self.n_nonmember_classes),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::config(field, "must be at least 1"));
            }
        }
        if self.images_per_class < 2 {
            return Err(Error::config("images_per_class", "must be at least 2 (covariance needs two samples)"));
        }
        if self.n_public_classes > 0 && self.public_images_per_class < 2 {
            return Err(Error::config("public_images_per_class", "must be at least 2"));
        }
        if !(self.class_spread > 0.0 && self.class_spread.is_finite()) {
            return Err(Error::config("class_spread", "must be a positive finite number"));
        }
        if !(self.center_spread >= 0.0 && self.center_spread.is_finite()) {
            return Err(Error::config("center_spread", "must be a non-negative finite number"));
        }
        if !(self.concentration_gap >= 1.0 && self.concentration_gap.is_finite()) {
            return Err(Error::config("concentration_gap", "must be a finite number >= 1"));
        }
        if !(0.0..=1.0).contains(&self.attribute_balance) {
            return Err(Error::config("attribute_balance", "must lie in [0, 1]"));
        }
        if !(self.attribute_shift >= 0.0 && self.attribute_shift.is_finite()) {
            return Err(Error::config("attribute_shift", "must be a non-negative finite number"));
        }
        Ok(())
    }

    pub fn n_target_classes(&self) -> usize {
        self.n_member_classes + self.n_nonmember_classes
    }
}

/// One sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    /// Raw input (teacher mode) or feature vector (oracle and imported worlds).
    pub x: Vec<f64>,
    /// Identity label.
    pub y1: u32,
    /// Membership in the teacher's training data.
    pub y2: bool,
    /// Sensitive attribute.
    pub s: bool,
}

/// Prefix marking instances of the public (non-target) identity pool.
pub const PUBLIC_ID_PREFIX: &str = "pub:";

/// How raw inputs map to the feature space the student APIs expose.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum Extractor {
    /// Inputs already are features of the given dimension.
    Identity { dim: usize },
    Teacher(Teacher),
}

impl Extractor {
    pub fn input_dim(&self) -> usize {
        match self {
            Extractor::Identity { dim } => *dim,
            Extractor::Teacher(t) => t.input_dim,
        }
    }

    pub fn feature_dim(&self) -> usize {
        match self {
            Extractor::Identity { dim } => *dim,
            Extractor::Teacher(t) => t.hidden_dim,
        }
    }

    pub fn extract(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            Extractor::Identity { dim } => {
                if x.len() != *dim {
                    return Err(Error::DimensionMismatch {
                        expected: *dim,
                        found: x.len(),
                    });
                }
                Ok(x.to_vec())
            }
            Extractor::Teacher(t) => t.features(x),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorldKind {
    /// Raw inputs; a teacher must be attached before querying.
    Raw,
    Oracle,
    Imported,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct World {
    pub config: WorldConfig,
    pub kind: WorldKind,
    /// `D_target`: member identities first, then non-member identities.
    pub target: Vec<Instance>,
    /// Identities disjoint from the target set.
    pub public: Vec<Instance>,
    pub extractor: Option<Extractor>,
}

impl World {
    pub fn members(&self) -> impl Iterator<Item = &Instance> {
        self.target.iter().filter(|i| i.y2)
    }

    pub fn nonmembers(&self) -> impl Iterator<Item = &Instance> {
        self.target.iter().filter(|i| !i.y2)
    }

    pub fn extractor(&self) -> Result<&Extractor> {
        self.extractor
            .as_ref()
            .ok_or_else(|| Error::Unsupported("world has no feature extractor; train and attach a teacher first".into()))
    }

    pub fn with_teacher(mut self, teacher: Teacher) -> Result<Self> {
        if teacher.input_dim != self.config.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.config.input_dim,
                found: teacher.input_dim,
            });
        }
        self.extractor = Some(Extractor::Teacher(teacher));
        Ok(self)
    }

    /// Distinct target identities, in ascending order, with their membership flag.
    pub fn target_classes(&self) -> Vec<(u32, bool)> {
        let mut map = BTreeMap::new();
        for i in &self.target {
            map.insert(i.y1, i.y2);
        }
        map.into_iter().collect()
    }

    pub fn public_classes(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.public.iter().map(|i| i.y1).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Attribute value per identity, across target and public pools.
    pub fn class_attributes(&self) -> BTreeMap<u32, bool> {
        self.target.iter().chain(&self.public).map(|i| (i.y1, i.s)).collect()
    }

    /// Check the structural invariants shared by generated and imported worlds.
    pub fn validate(&self) -> Result<()> {
        let mut per_class: BTreeMap<u32, (usize, bool, bool)> = BTreeMap::new();
        for inst in &self.target {
            let e = per_class.entry(inst.y1).or_insert((0, inst.y2, inst.s));
            e.0 += 1;
            if e.1 != inst.y2 {
                return Err(Error::config("target", format!("identity {} mixes member and non-member rows", inst.y1)));
            }
        }
        for (id, (count, _, _)) in &per_class {
            if *count < 2 {
                return Err(Error::config("target", format!("identity {id} has {count} instance(s); at least 2 required")));
            }
        }
        for p in &self.public {
            if per_class.contains_key(&p.y1) {
                return Err(Error::ClassOverlap(format!("identity {} is both public and target", p.y1)));
            }
        }
        Ok(())
    }
}

fn unit_direction(dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng_from(seed, &[stream::WORLD_DIRECTION]);
    let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    v.into_iter().map(|a| a / norm).collect()
}

/// Exactly `round(balance * n)` identities get `s = 1`, chosen by a seeded shuffle.
fn stratified_attributes(n: usize, balance: f64, seed: u64, pool: u64) -> Vec<bool> {
    let ones = (balance * n as f64).round() as usize;
    let mut attrs: Vec<bool> = (0..n).map(|i| i < ones).collect();
    attrs.shuffle(&mut rng_from(seed, &[stream::WORLD_ATTRS, pool]));
    attrs
}

struct ClassSpec {
    y1: u32,
    member: bool,
    public: bool,
    s: bool,
    spread: f64,
    images: usize,
}

fn draw_class(spec: &ClassSpec, dim: usize, cfg: &WorldConfig, direction: &[f64]) -> Vec<Instance> {
    let mut crng = rng_from(cfg.seed, &[stream::WORLD_CENTERS, spec.y1 as u64]);
    let shift = if spec.s { cfg.attribute_shift } else { 0.0 };
    let center: Vec<f64> = (0..dim)
        .map(|j| {
            let z: f64 = StandardNormal.sample(&mut crng);
            cfg.center_spread * z + shift * direction[j]
        })
        .collect();
    let mut srng = rng_from(cfg.seed, &[stream::WORLD_SAMPLES, spec.y1 as u64]);
    (0..spec.images)
        .map(|j| {
            let x = center
                .iter()
                .map(|c| {
                    let z: f64 = StandardNormal.sample(&mut srng);
                    c + spec.spread * z
                })
                .collect();
            let id = if spec.public {
                format!("{PUBLIC_ID_PREFIX}{}-{j}", spec.y1)
            } else {
                format!("{}-{j}", spec.y1)
            };
            Instance {
                id,
                x,
                y1: spec.y1,
                y2: spec.member,
                s: spec.s,
            }
        })
        .collect()
}

fn build(cfg: &WorldConfig, dim: usize, oracle: bool) -> Result<World> {
    cfg.validate()?;
    let n_target = cfg.n_target_classes();
    let target_attrs = stratified_attributes(n_target, cfg.attribute_balance, cfg.seed, 0);
    let public_attrs = stratified_attributes(cfg.n_public_classes, cfg.attribute_balance, cfg.seed, 1);
    let direction = unit_direction(dim, cfg.seed);
    let gap = if oracle { cfg.concentration_gap } else { 1.0 };

    let mut specs = Vec::with_capacity(n_target + cfg.n_public_classes);
    for c in 0..n_target {
        let member = c < cfg.n_member_classes;
        specs.push(ClassSpec {
            y1: c as u32,
            member,
            public: false,
            s: target_attrs[c],
            spread: if member { cfg.class_spread } else { gap * cfg.class_spread },
            images: cfg.images_per_class,
        });
    }
    for c in 0..cfg.n_public_classes {
        specs.push(ClassSpec {
            y1: (n_target + c) as u32,
            member: false,
            public: true,
            s: public_attrs[c],
            spread: gap * cfg.class_spread,
            images: cfg.public_images_per_class,
        });
    }
    let groups = par::map_slice(&specs, |spec| draw_class(spec, dim, cfg, &direction));
    let (mut target, mut public) = (Vec::new(), Vec::new());
    for (spec, rows) in specs.iter().zip(groups) {
        if spec.public {
            public.extend(rows);
        } else {
            target.extend(rows);
        }
    }
    Ok(World {
        config: cfg.clone(),
        kind: if oracle { WorldKind::Oracle } else { WorldKind::Raw },
        target,
        public,
        extractor: oracle.then_some(Extractor::Identity { dim }),
    })
}

/// Raw-input world; attach a teacher with [`World::with_teacher`] before querying.
pub fn generate_world(config: &WorldConfig) -> Result<World> {
    build(config, config.input_dim, false)
}

/// Feature-space world with a known member/non-member concentration gap.
pub fn generate_oracle_features(config: &WorldConfig) -> Result<World> {
    build(config, config.feature_dim, true)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> WorldConfig {
        WorldConfig {
            n_member_classes: 40,
            n_nonmember_classes: 40,
            images_per_class: 30,
            seed: 7,
            ..WorldConfig::default()
        }
    }

    #[test]
    fn counts_follow_config() {
        let w = generate_world(&small()).unwrap();
        assert_eq!(w.target_classes().len(), 80);
        assert_eq!(w.target.len(), 2400);
        assert_eq!(w.members().count(), 1200);
        assert!(w.target.iter().all(|i| i.x.len() == 64));
        assert_eq!(w.public_classes().len(), 20);
        w.validate().unwrap();
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_world(&small()).unwrap();
        let b = generate_world(&small()).unwrap();
        assert_eq!(a.target, b.target);
        assert_eq!(a.public, b.public);
        let c = generate_world(&WorldConfig { seed: 8, ..small() }).unwrap();
        assert_ne!(a.target, c.target);
    }

    #[test]
    fn attribute_balance_is_exact_and_constant_per_identity() {
        let w = generate_world(&small()).unwrap();
        let attrs = w.class_attributes();
        let target_ones = w.target_classes().iter().filter(|(c, _)| attrs[c]).count();
        assert_eq!(target_ones, 40);
        for inst in &w.target {
            assert_eq!(inst.s, attrs[&inst.y1]);
        }
    }

    #[test]
    fn member_and_nonmember_ids_are_disjoint() {
        let w = generate_world(&small()).unwrap();
        let members: std::collections::BTreeSet<u32> = w.members().map(|i| i.y1).collect();
        assert!(w.nonmembers().all(|i| !members.contains(&i.y1)));
        assert!(w.public.iter().all(|i| !members.contains(&i.y1) && i.id.starts_with(PUBLIC_ID_PREFIX)));
    }

    #[test]
    fn config_errors() {
        assert!(generate_world(&WorldConfig { images_per_class: 1, ..small() }).is_err());
        assert!(generate_world(&WorldConfig { attribute_balance: 1.5, ..small() }).is_err());
        assert!(generate_oracle_features(&WorldConfig { concentration_gap: 0.5, ..small() }).is_err());
    }

    fn per_class_variance(w: &World, class: u32) -> f64 {
        let rows: Vec<&Instance> = w.target.iter().filter(|i| i.y1 == class).collect();
        let k = rows[0].x.len();
        let m = rows.len() as f64;
        (0..k)
            .map(|j| {
                let mean = rows.iter().map(|r| r.x[j]).sum::<f64>() / m;
                rows.iter().map(|r| (r.x[j] - mean).powi(2)).sum::<f64>() / (m - 1.0)
            })
            .sum::<f64>()
            / k as f64
    }

    #[test]
    fn oracle_variance_ratio_scales_with_gap_squared() {
        let cfg = WorldConfig {
            feature_dim: 8,
            concentration_gap: 2.0,
            ..small()
        };
        let w = generate_oracle_features(&cfg).unwrap();
        let member_mean: f64 = (0..40).map(|c| per_class_variance(&w, c)).sum::<f64>() / 40.0;
        for c in 40..80u32 {
            let ratio = per_class_variance(&w, c) / member_mean;
            assert!((ratio / 4.0 - 1.0).abs() < 0.25, "class {c}: ratio {ratio}");
        }
        let nonmember_mean: f64 = (40..80).map(|c| per_class_variance(&w, c)).sum::<f64>() / 40.0;
        assert!((nonmember_mean / member_mean / 4.0 - 1.0).abs() < 0.1);
    }

    #[test]
    fn oracle_world_is_reproducible() {
        let a = generate_oracle_features(&small()).unwrap();
        let b = generate_oracle_features(&small()).unwrap();
        assert_eq!(a.target, b.target);
        assert_eq!(a.extractor().unwrap().feature_dim(), 32);
    }
}
