//! Class-based versus per-instance membership inference on an oracle world.

use classleak::membership::{run_attack, AttackSpec, Family, Scenario};
use classleak::student::{StudentConfig, Surface};
use classleak::world::{generate_oracle_features, WorldConfig};

fn main() -> classleak::Result<()> {
    let world = generate_oracle_features(&WorldConfig::default())?;
    let scenario = Scenario::new(world, &StudentConfig::default(), 0)?;
    for surface in [Surface::Feature, Surface::Verification, Surface::Recognition] {
        for family in [Family::Firstcut, Family::ClassSummary] {
            let spec = AttackSpec {
                family,
                surface,
                ..AttackSpec::default()
            };
            let r = run_attack(&scenario, &spec)?;
            println!("{:<13} {:<24} AUC {:.3}", surface.name(), r.attack, r.auc);
        }
    }
    Ok(())
}
