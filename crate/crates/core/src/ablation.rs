//! Component ablations: decoder groups (PASPPM / DAM / EgFFM progressively
//! enabled) and the texture-path comparison (none / QCO only / full TaM).

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use candle_core::DType;
use serde::{Deserialize, Serialize};

use crate::complexity::count_params_flops;
use crate::config::RunConfig;
use crate::model::{Components, Teformer};
use crate::tam::TamVariant;
use crate::train::{evaluate, train, TrainSetup};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Component {
    Tam,
    QcoOnly,
    Pasppm,
    Dam,
    Egffm,
}

impl FromStr for Component {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "tam" => Ok(Component::Tam),
            "qco-only" | "qco_only" | "qco" => Ok(Component::QcoOnly),
            "pasppm" => Ok(Component::Pasppm),
            "dam" => Ok(Component::Dam),
            "egffm" => Ok(Component::Egffm),
            other => Err(Error::Config(format!(
                "unknown component `{other}` (expected tam, qco-only, pasppm, dam, egffm)"
            ))),
        }
    }
}

pub fn parse_components(list: &str) -> Result<Vec<Component>> {
    let mut v = list
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(Component::from_str)
        .collect::<Result<Vec<_>>>()?;
    v.sort();
    v.dedup();
    Ok(v)
}

/// One configuration of the study.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AblationRow {
    /// `1`–`5` for decoder groups, `none` / `qco_only` / `full` for texture rows.
    pub group: String,
    /// `decoder` or `texture`.
    pub table: &'static str,
    pub components: Components,
}

/// Decoder groups: (PASPPM, DAM, EgFFM).
pub const DECODER_GROUPS: [(bool, bool, bool); 5] = [
    (false, false, false),
    (true, false, false),
    (false, true, false),
    (true, true, false),
    (true, true, true),
];

/// Rows studied for the requested components. Decoder components that were
/// not requested stay on in every group, and groups that then coincide are
/// listed once under the first group number. Texture rows appear when `tam`
/// or `qco-only` is requested.
pub fn plan(components: &[Component]) -> Vec<AblationRow> {
    let has = |c| components.contains(&c);
    let mut rows: Vec<AblationRow> = Vec::new();
    if has(Component::Pasppm) || has(Component::Dam) || has(Component::Egffm) {
        for (i, &(pasppm, dam, egffm)) in DECODER_GROUPS.iter().enumerate() {
            let components = Components {
                tam: TamVariant::Full,
                pasppm: pasppm || !has(Component::Pasppm),
                dam: dam || !has(Component::Dam),
                egffm: egffm || !has(Component::Egffm),
            };
            if rows.iter().all(|r| r.components != components) {
                rows.push(AblationRow {
                    group: (i + 1).to_string(),
                    table: "decoder",
                    components,
                });
            }
        }
    }
    let mut texture = Vec::new();
    if has(Component::Tam) {
        texture.push(("none", TamVariant::None));
    }
    if has(Component::QcoOnly) {
        texture.push(("qco_only", TamVariant::QcoOnly));
    }
    if !texture.is_empty() {
        texture.push(("full", TamVariant::Full));
    }
    for (name, tam) in texture {
        rows.push(AblationRow {
            group: name.to_string(),
            table: "texture",
            components: Components {
                tam,
                ..Components::all_on()
            },
        });
    }
    rows
}

/// Medians over seeds for one row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub group: String,
    pub table: String,
    pub tam: String,
    pub pasppm: bool,
    pub dam: bool,
    pub egffm: bool,
    pub seeds: String,
    pub miou: f64,
    pub mf1: f64,
    pub pa: f64,
    pub boundary_f1: f64,
    pub params: u64,
    pub flops: u64,
    pub wall_time_s: f64,
    pub config_hash: String,
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

#[derive(Clone, Debug)]
struct RunMetrics {
    miou: f64,
    mf1: f64,
    pa: f64,
    boundary_f1: f64,
    wall: f64,
}

fn tam_name(t: TamVariant) -> &'static str {
    match t {
        TamVariant::Full => "full",
        TamVariant::QcoOnly => "qco_only",
        TamVariant::None => "none",
    }
}

/// Trains and evaluates every planned row for `seeds` seeds (offsets from the
/// base seed). Rows sharing a configuration are trained once.
pub fn run_ablation(base: &RunConfig, components: &[Component], seeds: usize) -> Result<Vec<AblationResult>> {
    if seeds == 0 {
        return Err(Error::Config("at least one seed is required".into()));
    }
    let rows = plan(components);
    if rows.is_empty() {
        return Err(Error::Config("no ablation rows for the requested components".into()));
    }
    let seed0 = base.model.seed;
    let mut cache: BTreeMap<String, (Vec<RunMetrics>, u64, u64)> = BTreeMap::new();
    let mut data = BTreeMap::new();
    let mut out = Vec::with_capacity(rows.len());
    for row in &rows {
        let mut cfg = base.clone();
        cfg.model.components = row.components;
        let hash = cfg.hash();
        if !cache.contains_key(&hash) {
            let mut runs = Vec::with_capacity(seeds);
            let probe = Teformer::new(&cfg.model, DType::F32)?;
            let c = count_params_flops(&probe, cfg.data.size, cfg.data.size)?;
            drop(probe);
            for s in 0..seeds as u64 {
                let mut run = cfg.clone();
                run.set_seed(seed0 + s);
                if !data.contains_key(&run.data.seed) {
                    data.insert(run.data.seed, run.load_data()?);
                }
                let (train_set, val_set) = &data[&run.data.seed];
                log::info!("ablation group {} seed {}", row.group, seed0 + s);
                let model = Teformer::new(&run.model, DType::F32)?;
                let setup = TrainSetup {
                    train: train_set,
                    val: &[],
                    ignore_index: run.data.palette.ignore_index,
                    exclude_classes: &run.metrics.exclude_classes,
                    out_dir: None,
                };
                let rep = train(&model, &setup, &run.train)?;
                let m = evaluate(
                    &model,
                    val_set,
                    run.data.palette.ignore_index,
                    &run.metrics.exclude_classes,
                    run.train.batch_size,
                )?;
                runs.push(RunMetrics {
                    miou: m.miou,
                    mf1: m.mf1,
                    pa: m.pa,
                    boundary_f1: m.boundary_f1.unwrap_or(0.0),
                    wall: rep.wall_time_s,
                });
            }
            cache.insert(hash.clone(), (runs, c.params, c.mult_accs));
        }
        let (runs, params, flops) = &cache[&hash];
        let col = |f: fn(&RunMetrics) -> f64| median(&runs.iter().map(f).collect::<Vec<_>>());
        out.push(AblationResult {
            group: row.group.clone(),
            table: row.table.to_string(),
            tam: tam_name(row.components.tam).to_string(),
            pasppm: row.components.pasppm,
            dam: row.components.dam,
            egffm: row.components.egffm,
            seeds: (0..seeds as u64).map(|s| (seed0 + s).to_string()).collect::<Vec<_>>().join(";"),
            miou: col(|r| r.miou),
            mf1: col(|r| r.mf1),
            pa: col(|r| r.pa),
            boundary_f1: col(|r| r.boundary_f1),
            params: *params,
            flops: *flops,
            wall_time_s: runs.iter().map(|r| r.wall).sum(),
            config_hash: hash,
        });
    }
    Ok(out)
}

pub fn write_csv(rows: &[AblationResult], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<AblationResult>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<Vec<_>, _>>()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_parse() {
        let all = parse_components("tam,qco-only,pasppm,dam,egffm").unwrap();
        assert_eq!(all.len(), 5);
        assert_eq!(parse_components("QCO_ONLY").unwrap(), vec![Component::QcoOnly]);
        assert!(parse_components("tam,crf").is_err());
    }

    #[test]
    fn full_plan_has_eight_rows() {
        let rows = plan(&parse_components("tam,qco-only,pasppm,dam,egffm").unwrap());
        assert_eq!(rows.len(), 8);
        assert_eq!(rows.iter().filter(|r| r.table == "decoder").count(), 5);
        // the last decoder group and the full texture row are the same model
        assert_eq!(rows[4].components, rows[7].components);
    }

    #[test]
    fn partial_plans() {
        let rows = plan(&[Component::Pasppm]);
        let groups: Vec<_> = rows.iter().map(|r| r.group.as_str()).collect();
        assert_eq!(groups, vec!["1", "2"]);
        assert!(rows[0].components.dam && rows[0].components.egffm && !rows[0].components.pasppm);
        let rows = plan(&[Component::Pasppm, Component::Dam]);
        let groups: Vec<_> = rows.iter().map(|r| r.group.as_str()).collect();
        assert_eq!(groups, vec!["1", "2", "3", "4"]);
        let rows = plan(&[Component::Pasppm, Component::Dam, Component::Egffm]);
        assert_eq!(rows.len(), 5);
        let rows = plan(&[Component::Tam]);
        let groups: Vec<_> = rows.iter().map(|r| r.group.as_str()).collect();
        assert_eq!(groups, vec!["none", "full"]);
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0]), 2.5);
    }
}
