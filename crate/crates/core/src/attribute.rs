//! Attribute inference: learn the sensitive attribute from API responses of
//! a small labeled auxiliary set, then predict it for a fixed target set.
//!
//! Target and auxiliary instances come from disjoint target-pool identities.
//! Verification probes and recognition heads use public identities.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::defenses::{counter_topk_rows, CounterStrategy};
use crate::error::{Error, Result};
use crate::learners::{fit_classifier, predict_score, ClassifierKind, FittedModel, Hyper};
use crate::linalg::from_rows;
use crate::membership::Scenario;
use crate::metrics::{mean_sd, roc_curve};
use crate::par;
use crate::rng::{derive_seed, rng_from, stream};
use crate::student::{pick_public_classes, Apis, HeadConfig, RecognitionStudent, Surface};
use crate::world::Instance;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttributeConfig {
    pub surface: Surface,
    /// Labeled auxiliary instances per repetition.
    pub aux_size: usize,
    pub target_size: usize,
    /// Instances drawn from each identity.
    pub per_identity: usize,
    /// Public identities used as fixed verification partners.
    pub probe_count: usize,
    /// Images per probe identity; distances to them are averaged.
    pub probe_images: usize,
    /// Head identities of the recognition student.
    pub head_class_count: usize,
    pub classifier: ClassifierKind,
    /// Resampled auxiliary sets, each scored on the same target set.
    pub repeats: usize,
    pub head: HeadConfig,
    pub hyper: Hyper,
    pub seed: u64,
}

impl Default for AttributeConfig {
    fn default() -> Self {
        AttributeConfig {
            surface: Surface::Feature,
            aux_size: 30,
            target_size: 400,
            per_identity: 1,
            probe_count: 20,
            probe_images: 1,
            head_class_count: 10,
            classifier: ClassifierKind::Logistic,
            repeats: 5,
            head: HeadConfig::default(),
            hyper: Hyper::default(),
            seed: 0,
        }
    }
}

impl AttributeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.aux_size < 2 {
            return Err(Error::config("attribute.aux_size", "must be at least 2"));
        }
        if self.target_size < 2 {
            return Err(Error::config("attribute.target_size", "must be at least 2"));
        }
        if self.per_identity == 0 || self.repeats == 0 {
            return Err(Error::config("attribute.per_identity", "per_identity and repeats must be at least 1"));
        }
        if self.surface == Surface::Verification && (self.probe_count == 0 || self.probe_images == 0) {
            return Err(Error::config("attribute.probe_count", "verification needs at least one probe image"));
        }
        if self.surface == Surface::Recognition && self.head_class_count < 2 {
            return Err(Error::config("attribute.head_class_count", "must be at least 2"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVar {
    AuxSize,
    ProbeCount,
    HeadClassCount,
}

impl SweepVar {
    pub fn name(self) -> &'static str {
        match self {
            SweepVar::AuxSize => "aux_size",
            SweepVar::ProbeCount => "probe_count",
            SweepVar::HeadClassCount => "head_class_count",
        }
    }

    fn apply(self, cfg: &AttributeConfig, value: usize) -> AttributeConfig {
        let mut c = cfg.clone();
        match self {
            SweepVar::AuxSize => c.aux_size = value,
            SweepVar::ProbeCount => c.probe_count = value,
            SweepVar::HeadClassCount => c.head_class_count = value,
        }
        c
    }

    fn value(self, cfg: &AttributeConfig) -> usize {
        match self {
            SweepVar::AuxSize => cfg.aux_size,
            SweepVar::ProbeCount => cfg.probe_count,
            SweepVar::HeadClassCount => cfg.head_class_count,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeFold {
    pub fold: usize,
    pub accuracy: f64,
    pub auc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeReport {
    pub surface: Surface,
    pub sweep_var: SweepVar,
    pub value: usize,
    pub folds: Vec<AttributeFold>,
    pub accuracy: f64,
    pub accuracy_sd: f64,
    pub auc: f64,
    pub config: AttributeConfig,
}

/// Score above which a classifier predicts `s = 1`.
fn decision_threshold(model: &FittedModel) -> f64 {
    match model {
        FittedModel::Logistic(_) | FittedModel::RandomForest(_) => 0.5,
        _ => 0.0,
    }
}

/// Target and auxiliary pools: `per_identity` instances from each identity,
/// identities split by a seeded shuffle.
fn split_pools(scenario: &Scenario, cfg: &AttributeConfig) -> Result<(Vec<usize>, Vec<Vec<usize>>)> {
    let mut by_id: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, inst) in scenario.world.target.iter().enumerate() {
        by_id.entry(inst.y1).or_default().push(i);
    }
    let mut ids: Vec<Vec<usize>> = by_id
        .into_values()
        .filter(|v| v.len() >= cfg.per_identity)
        .map(|v| v[..cfg.per_identity].to_vec())
        .collect();
    ids.shuffle(&mut rng_from(cfg.seed, &[stream::ATTRIBUTE, 0]));
    let n_target_ids = cfg.target_size.div_ceil(cfg.per_identity);
    let n_aux_ids = cfg.aux_size.div_ceil(cfg.per_identity);
    if ids.len() < n_target_ids + n_aux_ids {
        return Err(Error::TooFewSamples(format!(
            "{} identities cannot supply {} target and {} auxiliary instances",
            ids.len(),
            cfg.target_size,
            cfg.aux_size
        )));
    }
    let aux_pool = ids.split_off(n_target_ids);
    let target: Vec<usize> = ids.into_iter().flatten().take(cfg.target_size).collect();
    Ok((target, aux_pool))
}

/// Auxiliary sample for one repetition, alternating attribute values so both
/// are present whenever the pool holds both.
fn sample_aux(scenario: &Scenario, pool: &[Vec<usize>], cfg: &AttributeConfig, rep: usize) -> Vec<usize> {
    let target = &scenario.world.target;
    let mut order: Vec<&Vec<usize>> = pool.iter().collect();
    order.shuffle(&mut rng_from(cfg.seed, &[stream::ATTRIBUTE, 1, rep as u64]));
    let (mut ones, mut zeros): (Vec<&Vec<usize>>, Vec<&Vec<usize>>) = order.into_iter().partition(|v| target[v[0]].s);
    ones.reverse();
    zeros.reverse();
    let mut out = Vec::with_capacity(cfg.aux_size);
    while out.len() < cfg.aux_size {
        let prefer_one = (out.len() / cfg.per_identity) % 2 == 1;
        let next = if prefer_one { ones.pop().or_else(|| zeros.pop()) } else { zeros.pop().or_else(|| ones.pop()) };
        match next {
            Some(v) => out.extend(v.iter().copied().take(cfg.aux_size - out.len())),
            None => break,
        }
    }
    out
}

/// Response vectors the attacker sees for each instance.
struct Responder<'a> {
    apis: Apis,
    surface: Surface,
    probes: Vec<Vec<Vec<f64>>>,
    scenario: &'a Scenario,
}

impl Responder<'_> {
    fn respond(&self, idx: usize) -> Result<Vec<f64>> {
        let inst: &Instance = &self.scenario.world.target[idx];
        let query = derive_seed(self.surface.tag(), &[idx as u64, stream::ATTRIBUTE]);
        match self.surface {
            Surface::Feature => self.apis.feature(&inst.x, query),
            Surface::Verification => {
                let f = self.apis.extractor.extract(&inst.x)?;
                self.probes
                    .iter()
                    .enumerate()
                    .map(|(p, images)| {
                        let mut sum = 0.0;
                        for (j, g) in images.iter().enumerate() {
                            sum += self.apis.distance_of_features(&f, g, derive_seed(query, &[p as u64, j as u64]))?;
                        }
                        Ok(sum / images.len() as f64)
                    })
                    .collect()
            }
            Surface::Recognition => {
                let c = self.apis.n_head_classes().unwrap_or(0);
                let r = self.apis.recognize(&inst.x, query)?;
                Ok(counter_topk_rows(&[r], CounterStrategy::ZerofillC, c)?.remove(0))
            }
        }
    }
}

fn recognition_head(scenario: &Scenario, cfg: &AttributeConfig) -> Result<RecognitionStudent> {
    if let Some(r) = &scenario.apis.recognition {
        if r.n_classes() == cfg.head_class_count {
            return Ok(r.clone());
        }
    }
    let head = HeadConfig {
        n_classes: cfg.head_class_count,
        ..cfg.head.clone()
    };
    Apis::head_for(&scenario.world, scenario.apis.extractor.clone(), &head, cfg.seed)
}

fn responder<'a>(scenario: &'a Scenario, cfg: &AttributeConfig) -> Result<Responder<'a>> {
    let mut apis = scenario.apis.clone();
    let mut probes = Vec::new();
    match cfg.surface {
        Surface::Feature => {}
        Surface::Verification => {
            let ids = pick_public_classes(&scenario.world, cfg.probe_count)?;
            for id in ids {
                let images: Vec<Vec<f64>> = scenario
                    .world
                    .public
                    .iter()
                    .filter(|i| i.y1 == id)
                    .take(cfg.probe_images)
                    .map(|i| apis.extractor.extract(&i.x))
                    .collect::<Result<_>>()?;
                probes.push(images);
            }
        }
        Surface::Recognition => apis.recognition = Some(recognition_head(scenario, cfg)?),
    }
    Ok(Responder {
        apis,
        surface: cfg.surface,
        probes,
        scenario,
    })
}

/// Train on resampled auxiliary sets and score the fixed target set.
pub fn attribute_attack(scenario: &Scenario, cfg: &AttributeConfig) -> Result<AttributeReport> {
    run(scenario, cfg, SweepVar::AuxSize)
}

fn run(scenario: &Scenario, cfg: &AttributeConfig, sweep_var: SweepVar) -> Result<AttributeReport> {
    cfg.validate()?;
    let (target, pool) = split_pools(scenario, cfg)?;
    let resp = responder(scenario, cfg)?;
    let target_x = from_rows(&par::try_map_slice(&target, |&i| resp.respond(i))?)?;
    let target_s: Vec<bool> = target.iter().map(|&i| scenario.world.target[i].s).collect();
    let folds = par::try_map_range(cfg.repeats, |rep| -> Result<AttributeFold> {
        let aux = sample_aux(scenario, &pool, cfg, rep);
        let x = from_rows(&aux.iter().map(|&i| resp.respond(i)).collect::<Result<Vec<_>>>()?)?;
        let y: Vec<bool> = aux.iter().map(|&i| scenario.world.target[i].s).collect();
        let model = fit_classifier(cfg.classifier, &x, &y, &cfg.hyper, derive_seed(cfg.seed, &[stream::ATTRIBUTE, 2, rep as u64]))?;
        let scores = predict_score(&model, &target_x)?;
        let t = decision_threshold(&model);
        let hits = scores.iter().zip(&target_s).filter(|(&sc, &s)| (sc > t) == s).count();
        Ok(AttributeFold {
            fold: rep,
            accuracy: hits as f64 / target_s.len() as f64,
            auc: roc_curve(&scores, &target_s)?.auc,
        })
    })?;
    let acc: Vec<f64> = folds.iter().map(|f| f.accuracy).collect();
    let (accuracy, accuracy_sd) = mean_sd(&acc);
    let auc = folds.iter().map(|f| f.auc).sum::<f64>() / folds.len() as f64;
    Ok(AttributeReport {
        surface: cfg.surface,
        sweep_var,
        value: sweep_var.value(cfg),
        folds,
        accuracy,
        accuracy_sd,
        auc,
        config: cfg.clone(),
    })
}

/// One report per value of the swept variable.
pub fn sweep_attribute_attack(scenario: &Scenario, base: &AttributeConfig, var: SweepVar, values: &[usize]) -> Result<Vec<AttributeReport>> {
    par::try_map_slice(values, |&v| run(scenario, &var.apply(base, v), var))
}

/// Rows `sweep_var,value,fold,accuracy,auc`, per repetition plus a `mean` row.
pub fn write_sweep_csv<W: Write>(reports: &[AttributeReport], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["sweep_var", "value", "fold", "accuracy", "auc"])?;
    for r in reports {
        for f in &r.folds {
            out.write_record([
                r.sweep_var.name().to_string(),
                r.value.to_string(),
                f.fold.to_string(),
                f.accuracy.to_string(),
                f.auc.to_string(),
            ])?;
        }
        out.write_record([
            r.sweep_var.name().to_string(),
            r.value.to_string(),
            "mean".to_string(),
            r.accuracy.to_string(),
            r.auc.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::student::StudentConfig;
    use crate::world::{generate_oracle_features, WorldConfig};

    fn scenario(shift: f64) -> Scenario {
        let cfg = WorldConfig {
            n_member_classes: 100,
            n_nonmember_classes: 100,
            images_per_class: 2,
            attribute_shift: shift,
            seed: 11,
            ..WorldConfig::default()
        };
        Scenario::new(generate_oracle_features(&cfg).unwrap(), &StudentConfig::default(), 0).unwrap()
    }

    fn small(surface: Surface) -> AttributeConfig {
        AttributeConfig {
            surface,
            aux_size: 40,
            target_size: 100,
            ..AttributeConfig::default()
        }
    }

    #[test]
    fn separable_attribute_is_recovered() {
        let s = scenario(12.0);
        let r = attribute_attack(&s, &small(Surface::Feature)).unwrap();
        assert!(r.accuracy >= 0.95, "{}", r.accuracy);
        assert_eq!(r.folds.len(), 5);
    }

    #[test]
    fn every_surface_runs() {
        let s = scenario(3.0);
        for surface in [Surface::Verification, Surface::Recognition] {
            let r = attribute_attack(&s, &small(surface)).unwrap();
            assert!(r.accuracy > 0.5, "{surface:?}: {}", r.accuracy);
        }
    }

    #[test]
    fn zero_probes_rejected() {
        let s = scenario(3.0);
        let cfg = AttributeConfig {
            probe_count: 0,
            ..small(Surface::Verification)
        };
        assert!(attribute_attack(&s, &cfg).is_err());
    }

    #[test]
    fn pools_are_disjoint_and_deterministic() {
        let s = scenario(3.0);
        let cfg = small(Surface::Feature);
        let (target, pool) = split_pools(&s, &cfg).unwrap();
        let aux = sample_aux(&s, &pool, &cfg, 0);
        let ids = |v: &[usize]| v.iter().map(|&i| s.world.target[i].y1).collect::<std::collections::BTreeSet<_>>();
        assert!(ids(&target).is_disjoint(&ids(&aux)));
        assert_eq!(aux.len(), 40);
        let ones = aux.iter().filter(|&&i| s.world.target[i].s).count();
        assert_eq!(ones, 20);
        assert_eq!(attribute_attack(&s, &cfg).unwrap(), attribute_attack(&s, &cfg).unwrap());
    }

    #[test]
    fn sweep_reports_each_value() {
        let s = scenario(3.0);
        let r = sweep_attribute_attack(&s, &small(Surface::Feature), SweepVar::AuxSize, &[10, 30]).unwrap();
        assert_eq!(r.iter().map(|r| r.value).collect::<Vec<_>>(), vec![10, 30]);
        let mut buf = Vec::new();
        write_sweep_csv(&r, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("sweep_var,value,fold,accuracy,auc\n"));
        assert_eq!(text.lines().count(), 1 + 2 * 6);
    }
}
