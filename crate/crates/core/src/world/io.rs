//! Instance CSV: `id,class,member,attr,f0,...,f{k-1}`.
//!
//! Rows hold feature vectors, so a world exported from a teacher is
//! re-imported as a feature-space world. Public-pool identities are marked by
//! the `pub:` id prefix. Floats are written in shortest round-trip form.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use super::{Extractor, Instance, World, WorldConfig, WorldKind, PUBLIC_ID_PREFIX};
use crate::error::{Error, Result};

fn header(k: usize) -> Vec<String> {
    let mut h: Vec<String> = ["id", "class", "member", "attr"].iter().map(|s| s.to_string()).collect();
    h.extend((0..k).map(|j| format!("f{j}")));
    h
}

pub fn write_instances<W: Write>(world: &World, w: W) -> Result<()> {
    let extractor = world.extractor()?;
    let k = extractor.feature_dim();
    let mut out = csv::Writer::from_writer(w);
    out.write_record(header(k))?;
    for inst in world.target.iter().chain(&world.public) {
        let f = extractor.extract(&inst.x)?;
        let mut rec = vec![
            inst.id.clone(),
            inst.y1.to_string(),
            u8::from(inst.y2).to_string(),
            u8::from(inst.s).to_string(),
        ];
        rec.extend(f.iter().map(|v| v.to_string()));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

pub fn export_instances(world: &World, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_instances(world, std::io::BufWriter::new(file))
}

fn parse_flag(field: &str, line: usize, column: &str) -> Result<bool> {
    match field {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(Error::Schema {
            line,
            message: format!("column `{column}` must be 0 or 1, found `{other}`"),
        }),
    }
}

pub fn read_instances<R: Read>(r: R) -> Result<World> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let found: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let k = found.len().saturating_sub(4);
    let expected = header(k);
    if k == 0 || found != expected {
        return Err(Error::Schema {
            line: 1,
            message: format!("expected header `{}`, found `{}`", expected.join(","), found.join(",")),
        });
    }
    let mut target = Vec::new();
    let mut public = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec?;
        if rec.len() != 4 + k {
            return Err(Error::Schema {
                line,
                message: format!("expected {} fields, found {}", 4 + k, rec.len()),
            });
        }
        let y1: u32 = rec[1].parse().map_err(|_| Error::Schema {
            line,
            message: format!("column `class` must be a non-negative integer, found `{}`", &rec[1]),
        })?;
        let y2 = parse_flag(&rec[2], line, "member")?;
        let s = parse_flag(&rec[3], line, "attr")?;
        let mut x = Vec::with_capacity(k);
        for j in 0..k {
            let v: f64 = rec[4 + j].parse().map_err(|_| Error::Schema {
                line,
                message: format!("column `f{j}` is not a number: `{}`", &rec[4 + j]),
            })?;
            if !v.is_finite() {
                return Err(Error::Schema {
                    line,
                    message: format!("column `f{j}` is not finite"),
                });
            }
            x.push(v);
        }
        let inst = Instance {
            id: rec[0].to_string(),
            x,
            y1,
            y2,
            s,
        };
        if inst.id.starts_with(PUBLIC_ID_PREFIX) {
            public.push(inst);
        } else {
            target.push(inst);
        }
    }

    let mut per_class: BTreeMap<u32, (usize, bool)> = BTreeMap::new();
    for inst in target.iter().chain(&public) {
        per_class.entry(inst.y1).or_insert((0, inst.y2)).0 += 1;
    }
    if let Some((id, (count, _))) = per_class.iter().find(|(_, (c, _))| *c < 2) {
        return Err(Error::Schema {
            line: 0,
            message: format!("identity {id} has {count} instance; every identity needs at least 2"),
        });
    }
    let members = target.iter().filter(|i| i.y2).map(|i| i.y1).collect::<std::collections::BTreeSet<_>>();
    let nonmembers = target.iter().filter(|i| !i.y2).map(|i| i.y1).collect::<std::collections::BTreeSet<_>>();
    if let Some(id) = members.intersection(&nonmembers).next() {
        return Err(Error::Schema {
            line: 0,
            message: format!("identity {id} has both member and non-member rows"),
        });
    }
    let public_classes = public.iter().map(|i| i.y1).collect::<std::collections::BTreeSet<_>>();
    let m = per_class.values().map(|(c, _)| *c).min().unwrap_or(2);
    let config = WorldConfig {
        input_dim: k,
        feature_dim: k,
        n_member_classes: members.len(),
        n_nonmember_classes: nonmembers.len(),
        images_per_class: m,
        n_public_classes: public_classes.len(),
        ..WorldConfig::default()
    };
    let world = World {
        config,
        kind: WorldKind::Imported,
        target,
        public,
        extractor: Some(Extractor::Identity { dim: k }),
    };
    world.validate()?;
    Ok(world)
}

pub fn import_instances(path: &Path) -> Result<World> {
    let file = std::fs::File::open(path).map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
    read_instances(std::io::BufReader::new(file))
}
