//! Config-driven experiment runner: world, student APIs, membership attacks
//! and defenses over a list of seeds, written out as CSV plus a manifest.

mod plot;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::defenses::DefenseSpec;
use crate::error::{Error, Result};
use crate::membership::{run_attack, AttackSpec, CovParams, FoldResult, Mode, Scenario};
use crate::metrics::{mean_sd, write_roc_csv, RocResult};
use crate::par;
use crate::student::{StudentConfig, Surface};
use crate::world::io::import_instances;
use crate::world::{generate_oracle_features, generate_world, train_teacher, TeacherConfig, World, WorldConfig};

pub use plot::roc_svg;

pub const SUMMARY_FILE: &str = "summary.csv";
pub const DEFENSE_FILE: &str = "defenses.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const ROC_DIR: &str = "roc";
pub const PLOT_DIR: &str = "plots";

/// Where the world comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WorldSource {
    /// Feature-space world with a known concentration gap.
    Oracle {
        #[serde(default)]
        config: WorldConfig,
    },
    /// Raw world with a trained teacher as the feature extractor.
    Teacher {
        #[serde(default)]
        config: WorldConfig,
        #[serde(default)]
        teacher: TeacherConfig,
    },
    /// Instance CSV; relative paths resolve against the config file.
    File { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Evaluation {
    /// Overrides every attack's fold count.
    pub folds: Option<usize>,
    /// One full run per seed; the seed drives world generation, students and attacks.
    pub seeds: Vec<u64>,
}

impl Default for Evaluation {
    fn default() -> Self {
        Evaluation { folds: None, seeds: vec![0] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub world: WorldSource,
    #[serde(default)]
    pub students: StudentConfig,
    pub attacks: Vec<AttackSpec>,
    /// Covariance-summary parameters to sweep; empty keeps each attack's own.
    #[serde(default)]
    pub cov_grid: Vec<CovParams>,
    /// Each entry is evaluated on its own against the undefended baseline.
    /// Top-k entries only apply to recognition-surface attacks.
    #[serde(default)]
    pub defenses: Vec<DefenseSpec>,
    #[serde(default)]
    pub evaluation: Evaluation,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Also write SVG ROC plots.
    #[serde(default)]
    pub plots: bool,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::config("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read and validate a config file, resolving a relative world path
    /// against the file's directory.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::config("config", format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        if let WorldSource::File { path: p } = &mut cfg.world {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        match &self.world {
            WorldSource::Oracle { config } | WorldSource::Teacher { config, .. } => config.validate()?,
            WorldSource::File { path } => {
                if path.as_os_str().is_empty() {
                    return Err(Error::config("world.path", "must not be empty"));
                }
            }
        }
        if self.evaluation.seeds.is_empty() {
            return Err(Error::config("evaluation.seeds", "must list at least one seed"));
        }
        if self.attacks.is_empty() {
            return Err(Error::config("attacks", "must list at least one attack"));
        }
        if let Some(f) = self.evaluation.folds {
            if f < 2 {
                return Err(Error::config("evaluation.folds", "must be at least 2"));
            }
        }
        for p in &self.cov_grid {
            p.validate()?;
        }
        for (i, a) in self.attacks.iter().enumerate() {
            a.validate().map_err(|e| Error::config(format!("attacks[{i}]"), e.to_string()))?;
        }
        for (i, d) in self.defenses.iter().enumerate() {
            d.validate().map_err(|e| Error::config(format!("defenses[{i}]"), e.to_string()))?;
        }
        Ok(())
    }

    /// Attack specs after orientation expansion, grid expansion and fold override.
    pub fn expanded_attacks(&self) -> Vec<AttackSpec> {
        let mut out = Vec::new();
        for a in &self.attacks {
            for mut spec in a.expand() {
                if let Some(f) = self.evaluation.folds {
                    spec.folds = f;
                }
                if self.cov_grid.is_empty() {
                    out.push(spec);
                } else {
                    for &params in &self.cov_grid {
                        out.push(AttackSpec { params, ..spec.clone() });
                    }
                }
            }
        }
        out
    }

    /// Defense column of the run: the undefended baseline first.
    pub fn defense_list(&self) -> Vec<DefenseSpec> {
        let mut out = vec![DefenseSpec::None];
        out.extend(self.defenses.iter().filter(|d| **d != DefenseSpec::None).cloned());
        out
    }
}

/// Build the world a seed runs on.
pub fn build_world(source: &WorldSource, seed: u64) -> Result<World> {
    match source {
        WorldSource::Oracle { config } => generate_oracle_features(&WorldConfig { seed, ..config.clone() }),
        WorldSource::Teacher { config, teacher } => {
            let world = generate_world(&WorldConfig { seed, ..config.clone() })?;
            let t = train_teacher(&world, &TeacherConfig { seed, ..teacher.clone() })?;
            world.with_teacher(t)
        }
        WorldSource::File { path } => import_instances(path),
    }
}

/// Result of one (seed, attack, defense) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub attack: String,
    pub surface: Surface,
    pub mode: Mode,
    pub defense: String,
    pub param: String,
    pub seed: u64,
    pub auc: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub folds: Vec<FoldResult>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub seconds: f64,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub toolkit_version: String,
    pub created_unix: u64,
    pub config: ExperimentConfig,
    pub stages: Vec<StageRecord>,
    pub results: Vec<CellResult>,
}

impl Manifest {
    pub fn errors(&self) -> impl Iterator<Item = &StageRecord> {
        self.stages.iter().filter(|s| s.error.is_some())
    }

    pub fn succeeded(&self) -> bool {
        self.errors().next().is_none()
    }
}

fn attack_name(spec: &AttackSpec, grid: bool) -> String {
    if grid {
        format!("{}[rho={},lambda={}]", spec.label(), spec.params.rho, spec.params.lambda)
    } else {
        spec.label()
    }
}

fn applies(defense: &DefenseSpec, spec: &AttackSpec) -> bool {
    !matches!(defense, DefenseSpec::Topk { .. }) || spec.surface == Surface::Recognition
}

fn timed<T>(f: impl FnOnce() -> Result<T>) -> (Result<T>, f64) {
    let t = Instant::now();
    let r = f();
    (r, t.elapsed().as_secs_f64())
}

/// Run every cell of the experiment. Stage failures are recorded in the
/// manifest and the remaining cells still run; nothing is written to disk.
pub fn execute(cfg: &ExperimentConfig) -> Result<Manifest> {
    cfg.validate()?;
    let attacks = cfg.expanded_attacks();
    let defenses = cfg.defense_list();
    let grid = !cfg.cov_grid.is_empty();

    let built = par::map_slice(&cfg.evaluation.seeds, |&seed| {
        let (world, t_world) = timed(|| build_world(&cfg.world, seed));
        let (scenario, t_students) = match world {
            Ok(w) => timed(|| Scenario::new(w, &cfg.students, seed)),
            Err(e) => (Err(e), 0.0),
        };
        (seed, scenario, t_world + t_students)
    });

    let mut stages = Vec::new();
    let mut scenarios = Vec::new();
    for (seed, scenario, secs) in built {
        let error = scenario.as_ref().err().map(|e| e.to_string());
        stages.push(StageRecord {
            name: format!("world+students/seed={seed}"),
            seconds: secs,
            error,
        });
        if let Ok(s) = scenario {
            scenarios.push((seed, s));
        }
    }

    let mut cells = Vec::new();
    for (si, _) in scenarios.iter().enumerate() {
        for (ai, a) in attacks.iter().enumerate() {
            for (di, d) in defenses.iter().enumerate() {
                if applies(d, a) {
                    cells.push((si, ai, di));
                }
            }
        }
    }
    let outcomes = par::map_slice(&cells, |&(si, ai, di)| {
        let (seed, base) = &scenarios[si];
        let spec = AttackSpec {
            seed: *seed,
            ..attacks[ai].clone()
        };
        let defense = &defenses[di];
        let scenario = base.with_filters(vec![defense.clone()]);
        let (report, secs) = timed(|| run_attack(&scenario, &spec));
        let name = format!(
            "attack/{}/{}/{}={}/seed={}",
            attack_name(&spec, grid),
            spec.surface.name(),
            defense.name(),
            defense.param(),
            seed
        );
        let result = report.map(|r| CellResult {
            attack: attack_name(&spec, grid),
            surface: spec.surface,
            mode: r.mode,
            defense: defense.name().to_string(),
            param: defense.param(),
            seed: *seed,
            auc: r.auc,
            precision: r.precision,
            recall: r.recall,
            f1: r.f1,
            folds: r.folds,
        });
        (name, secs, result)
    });

    let mut results = Vec::new();
    for (name, seconds, result) in outcomes {
        let error = result.as_ref().err().map(|e| e.to_string());
        stages.push(StageRecord { name, seconds, error });
        if let Ok(r) = result {
            results.push(r);
        }
    }
    Ok(Manifest {
        toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
        created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        config: cfg.clone(),
        stages,
        results,
    })
}

/// `execute`, then write every artifact into `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Manifest> {
    let manifest = execute(cfg)?;
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    render(&manifest, out_dir)?;
    Ok(manifest)
}

/// Read a manifest written by [`run_experiment`].
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// Summary table columns, in order.
pub const SUMMARY_HEADER: [&str; 11] = [
    "attack", "surface", "mode", "defense", "param", "fold", "auc", "precision", "recall", "f1", "seed",
];

/// Summary rows of one cell: a single `all` row for ranking attacks, one row
/// per fold plus a `mean` row for cross-validated ones.
pub fn summary_rows(cell: &CellResult) -> Vec<[String; 11]> {
    let row = |fold: String, auc: f64, p: f64, r: f64, f1: f64| {
        [
            cell.attack.clone(),
            cell.surface.name().to_string(),
            cell.mode.name().to_string(),
            cell.defense.clone(),
            cell.param.clone(),
            fold,
            auc.to_string(),
            p.to_string(),
            r.to_string(),
            f1.to_string(),
            cell.seed.to_string(),
        ]
    };
    let cv = cell.folds.iter().any(|f| f.fold.is_some());
    if !cv {
        return vec![row("all".into(), cell.auc, cell.precision, cell.recall, cell.f1)];
    }
    let mut out: Vec<[String; 11]> = cell
        .folds
        .iter()
        .map(|f| {
            let c = &f.roc.best_f1;
            row(f.fold.unwrap_or(0).to_string(), f.roc.auc, c.precision, c.recall, c.f1)
        })
        .collect();
    out.push(row("mean".into(), cell.auc, cell.precision, cell.recall, cell.f1));
    out
}

fn file_stem(cell: &CellResult, fold: Option<usize>) -> String {
    let raw = format!(
        "{}_{}_{}-{}_s{}_{}",
        cell.attack,
        cell.surface.name(),
        cell.defense,
        cell.param,
        cell.seed,
        fold.map_or("all".to_string(), |f| format!("f{f}"))
    );
    raw.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn write_csv_file(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

/// Defense table: mean and standard deviation of each cell's AUC across seeds.
pub fn defense_table(manifest: &Manifest) -> Vec<[String; 5]> {
    let mut keys: Vec<(String, String, String)> = Vec::new();
    for c in &manifest.results {
        let k = (c.defense.clone(), c.param.clone(), format!("{}/{}", c.attack, c.surface.name()));
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(d, p, a)| {
            let aucs: Vec<f64> = manifest
                .results
                .iter()
                .filter(|c| c.defense == d && c.param == p && format!("{}/{}", c.attack, c.surface.name()) == a)
                .map(|c| c.auc)
                .collect();
            let (m, sd) = mean_sd(&aucs);
            [d, p, a, m.to_string(), sd.to_string()]
        })
        .collect()
}

/// Write summary, defense table, ROC curves and (when configured) plots.
/// Output depends on the manifest's results only.
pub fn render(manifest: &Manifest, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir.join(ROC_DIR))?;
    write_csv_file(
        &out_dir.join(SUMMARY_FILE),
        &SUMMARY_HEADER,
        manifest.results.iter().flat_map(summary_rows).map(|r| r.to_vec()),
    )?;
    if !manifest.config.defenses.is_empty() {
        write_csv_file(
            &out_dir.join(DEFENSE_FILE),
            &["defense", "param", "attack", "auc_mean", "auc_sd"],
            defense_table(manifest).into_iter().map(|r| r.to_vec()),
        )?;
    }
    if manifest.config.plots {
        fs::create_dir_all(out_dir.join(PLOT_DIR))?;
    }
    for cell in &manifest.results {
        for f in &cell.folds {
            let stem = file_stem(cell, f.fold);
            write_roc_csv(&f.roc, fs::File::create(out_dir.join(ROC_DIR).join(format!("{stem}.csv")))?)?;
            if manifest.config.plots {
                let title = format!("{} on {} ({} {})", cell.attack, cell.surface.name(), cell.defense, cell.param);
                fs::write(out_dir.join(PLOT_DIR).join(format!("{stem}.svg")), roc_svg(&f.roc, &title))?;
            }
        }
    }
    Ok(())
}

/// Mean AUC of the cells matching `attack` and `defense`, across seeds.
pub fn mean_auc(manifest: &Manifest, attack: &str, defense: &str) -> Option<f64> {
    let v: Vec<f64> = manifest
        .results
        .iter()
        .filter(|c| c.attack == attack && c.defense == defense)
        .map(|c| c.auc)
        .collect();
    (!v.is_empty()).then(|| mean_sd(&v).0)
}

/// ROC curves of a cell, keyed the way they are written to disk.
pub fn roc_files(cell: &CellResult) -> Vec<(String, &RocResult)> {
    cell.folds.iter().map(|f| (format!("{}.csv", file_stem(cell, f.fold)), &f.roc)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::membership::Family;

    fn minimal() -> ExperimentConfig {
        ExperimentConfig::from_json(
            r#"{
                "world": {"kind": "oracle", "config": {"n_member_classes": 8, "n_nonmember_classes": 8, "images_per_class": 6}},
                "attacks": [{"family": "class_summary", "surface": "feature"}]
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn minimal_config_yields_one_summary_row() {
        let m = execute(&minimal()).unwrap();
        assert!(m.succeeded());
        let rows: Vec<_> = m.results.iter().flat_map(summary_rows).collect();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0][5], "all");
    }

    #[test]
    fn config_errors_name_the_field() {
        let bad = r#"{"world": {"kind": "oracle"}, "attacks": [{}], "evaluation": {"seeds": []}}"#;
        let e = ExperimentConfig::from_json(bad).unwrap_err().to_string();
        assert!(e.contains("evaluation.seeds"), "{e}");
        let unknown = r#"{"world": {"kind": "oracle"}, "attacks": [], "bogus": 1}"#;
        assert!(ExperimentConfig::from_json(unknown).is_err());
        let two_sources = r#"{"world": {"kind": "file", "path": "a.csv", "config": {}}, "attacks": [{}]}"#;
        assert!(ExperimentConfig::from_json(two_sources).is_err());
    }

    #[test]
    fn grid_and_orientation_expand() {
        let mut cfg = minimal();
        cfg.attacks[0].orientation = crate::membership::Orientation::Both;
        cfg.cov_grid = vec![CovParams { rho: 1.0, lambda: 0.0 }, CovParams { rho: 2.0, lambda: 1.0 }];
        cfg.evaluation.folds = Some(3);
        let a = cfg.expanded_attacks();
        assert_eq!(a.len(), 4);
        assert!(a.iter().all(|s| s.folds == 3 && s.family == Family::ClassSummary));
    }

    #[test]
    fn cross_validated_cells_get_fold_and_mean_rows() {
        let mut cfg = minimal();
        cfg.attacks[0].family = Family::ClassSupervised;
        cfg.attacks[0].folds = 4;
        let m = execute(&cfg).unwrap();
        let rows: Vec<_> = m.results.iter().flat_map(summary_rows).collect();
        let folds: Vec<&str> = rows.iter().map(|r| r[5].as_str()).collect();
        assert_eq!(folds, ["0", "1", "2", "3", "mean"]);
    }

    #[test]
    fn manifest_survives_json() {
        let m = execute(&minimal()).unwrap();
        let back: Manifest = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn failing_cells_are_recorded_not_fatal() {
        let mut cfg = minimal();
        cfg.world = WorldSource::File {
            path: PathBuf::from("/nonexistent/world.csv"),
        };
        let m = execute(&cfg).unwrap();
        assert!(!m.succeeded());
        assert!(m.results.is_empty());
    }
}
