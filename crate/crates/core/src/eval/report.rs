use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::metrics::EntityScores;
use super::stats::paired_t_test;
use super::EvalError;
use crate::ingest::Source;

pub const REPORT_FORMAT_VERSION: u32 = 1;
const BASELINES_JSON: &str = include_str!("../../data/baselines.json");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    F,
    Map,
}

impl Metric {
    pub const ALL: [Metric; 2] = [Metric::F, Metric::Map];

    pub fn title(self) -> &'static str {
        match self {
            Metric::F => "F-measure",
            Metric::Map => "MAP",
        }
    }
}

/// A column group of the results table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Half {
    DBpedia,
    LinkedMDB,
    All,
}

impl Half {
    pub const ALL: [Half; 3] = [Half::DBpedia, Half::LinkedMDB, Half::All];

    pub fn label(self) -> &'static str {
        match self {
            Half::DBpedia => "DBpedia",
            Half::LinkedMDB => "LinkedMDB",
            Half::All => "ALL",
        }
    }

    pub fn contains(self, source: Source) -> bool {
        match self {
            Half::DBpedia => source == Source::DBpedia,
            Half::LinkedMDB => source == Source::LinkedMDB,
            Half::All => true,
        }
    }
}

/// Values per half, indexed like the table's `ks`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cells {
    pub dbpedia: Vec<f64>,
    pub linkedmdb: Vec<f64>,
    pub all: Vec<f64>,
}

impl Cells {
    fn get(&self, half: Half, i: usize) -> Option<f64> {
        match half {
            Half::DBpedia => &self.dbpedia,
            Half::LinkedMDB => &self.linkedmdb,
            Half::All => &self.all,
        }
        .get(i)
        .copied()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowKind {
    Measured,
    Baseline,
    Published,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineRow {
    pub system: String,
    pub kind: RowKind,
    pub f: Option<Cells>,
    pub map: Option<Cells>,
}

/// Published reference numbers, shipped with the crate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineTable {
    pub version: u32,
    pub corpus: String,
    pub note: String,
    pub ks: Vec<usize>,
    pub rows: Vec<BaselineRow>,
}

impl BaselineTable {
    pub fn embedded() -> Self {
        serde_json::from_str(BASELINES_JSON).expect("embedded baseline table parses")
    }

    pub fn row(&self, system: &str) -> Option<&BaselineRow> {
        self.rows.iter().find(|r| r.system.eq_ignore_ascii_case(system))
    }

    pub fn value(&self, system: &str, metric: Metric, half: Half, k: usize) -> Option<f64> {
        let i = self.ks.iter().position(|&x| x == k)?;
        let row = self.row(system)?;
        match metric {
            Metric::F => row.f.as_ref(),
            Metric::Map => row.map.as_ref(),
        }?
        .get(half, i)
    }
}

/// Per-entity results of one evaluated system.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemRun {
    pub system: String,
    pub scores: Vec<EntityScores>,
}

impl SystemRun {
    fn entity_values(&self, metric: Metric, half: Half, k: usize) -> Vec<(&str, f64)> {
        self.scores
            .iter()
            .filter(|e| e.k == k && half.contains(e.source))
            .map(|e| {
                let v = match metric {
                    Metric::F => e.f(),
                    Metric::Map => e.ap(),
                };
                (e.entity_id.as_str(), v)
            })
            .collect()
    }

    /// Entity-weighted mean, or `None` when no entity falls in the cell.
    pub fn aggregate(&self, metric: Metric, half: Half, k: usize) -> Option<f64> {
        let v = self.entity_values(metric, half, k);
        (!v.is_empty()).then(|| v.iter().map(|p| p.1).sum::<f64>() / v.len() as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub half: Half,
    pub k: usize,
    pub value: Option<f64>,
    pub p_value: Option<f64>,
    /// `+` or `-` when the difference to the reference is significant.
    pub marker: Option<String>,
}

/// Relative improvement of the primary system over a row, in percent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub min: f64,
    pub max: f64,
    pub avg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub system: String,
    pub kind: RowKind,
    pub f: Vec<Cell>,
    pub map: Vec<Cell>,
    pub improvement_f: Option<Spread>,
    pub improvement_map: Option<Spread>,
}

impl ReportRow {
    pub fn cells(&self, metric: Metric) -> &[Cell] {
        match metric {
            Metric::F => &self.f,
            Metric::Map => &self.map,
        }
    }

    pub fn value(&self, metric: Metric, half: Half, k: usize) -> Option<f64> {
        self.cells(metric)
            .iter()
            .find(|c| c.half == half && c.k == k)
            .and_then(|c| c.value)
    }

    fn improvement(&self, metric: Metric) -> Option<&Spread> {
        match metric {
            Metric::F => self.improvement_f.as_ref(),
            Metric::Map => self.improvement_map.as_ref(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportOptions {
    pub ks: Vec<usize>,
    /// System that significance markers compare against.
    pub reference: Option<String>,
    pub include_baselines: bool,
    pub include_published: bool,
    pub alpha: f64,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            ks: vec![5, 10],
            reference: Some("ESA".into()),
            include_baselines: true,
            include_published: true,
            alpha: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub format_version: u32,
    pub ks: Vec<usize>,
    /// The system whose improvement over every other row is reported.
    pub primary: Option<String>,
    pub reference: Option<String>,
    /// Markers were computed against published constants, not per-entity
    /// scores of the reference.
    pub constants_only: bool,
    pub rows: Vec<ReportRow>,
    pub runs: Vec<SystemRun>,
    pub provenance: serde_json::Value,
}

enum Reference<'a> {
    None,
    Measured(&'a SystemRun),
    Constants(&'a str),
}

fn spread(primary: &ReportRow, other: &ReportRow, metric: Metric) -> Option<Spread> {
    let gains: Vec<f64> = primary
        .cells(metric)
        .iter()
        .filter_map(|c| {
            let p = c.value?;
            let o = other.value(metric, c.half, c.k)?;
            (o > 0.0).then(|| (p - o) / o * 100.0)
        })
        .collect();
    if gains.is_empty() {
        return None;
    }
    Some(Spread {
        min: gains.iter().copied().fold(f64::INFINITY, f64::min),
        max: gains.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        avg: gains.iter().sum::<f64>() / gains.len() as f64,
    })
}

/// Aggregates measured runs into the DBpedia / LinkedMDB / ALL × k grid,
/// adds the published rows, significance markers against the reference
/// and the primary system's relative improvements.
pub fn build_report(
    runs: Vec<SystemRun>,
    baselines: &BaselineTable,
    opts: &ReportOptions,
    provenance: serde_json::Value,
) -> Result<MetricsReport, EvalError> {
    let reference = match &opts.reference {
        None => Reference::None,
        Some(name) => match runs.iter().find(|r| r.system.eq_ignore_ascii_case(name)) {
            Some(run) => Reference::Measured(run),
            None if baselines.row(name).is_some() => Reference::Constants(name),
            None => return Err(EvalError::UnknownSystem(name.clone())),
        },
    };

    let mut rows = Vec::new();
    for b in &baselines.rows {
        let wanted = match b.kind {
            RowKind::Baseline => opts.include_baselines,
            RowKind::Published => opts.include_published,
            RowKind::Measured => false,
        };
        if !wanted {
            continue;
        }
        let cells = |metric| -> Vec<Cell> {
            cell_grid(&opts.ks, |half, k| Cell {
                half,
                k,
                value: baselines.value(&b.system, metric, half, k),
                p_value: None,
                marker: None,
            })
        };
        rows.push(ReportRow {
            system: match b.kind {
                RowKind::Published => format!("{} (published)", b.system),
                _ => b.system.clone(),
            },
            kind: b.kind,
            f: cells(Metric::F),
            map: cells(Metric::Map),
            improvement_f: None,
            improvement_map: None,
        });
    }

    for run in &runs {
        let is_reference = matches!(reference, Reference::Measured(r) if std::ptr::eq(r, run));
        let mut grids = Vec::with_capacity(2);
        for metric in Metric::ALL {
            let mut cells = Vec::new();
            for half in Half::ALL {
                for &k in &opts.ks {
                    let value = run.aggregate(metric, half, k);
                    let p_value = if is_reference || value.is_none() {
                        None
                    } else {
                        significance(run, &reference, baselines, metric, half, k)?
                    };
                    let marker = match (p_value, value) {
                        (Some(p), Some(v)) if p <= opts.alpha => {
                            let base = reference_mean(&reference, baselines, run, metric, half, k)?;
                            base.map(|b| if v > b { "+".to_string() } else { "-".to_string() })
                        }
                        _ => None,
                    };
                    cells.push(Cell {
                        half,
                        k,
                        value,
                        p_value,
                        marker,
                    });
                }
            }
            grids.push(cells);
        }
        let map = grids.pop().expect("two metrics");
        let f = grids.pop().expect("two metrics");
        rows.push(ReportRow {
            system: run.system.clone(),
            kind: RowKind::Measured,
            f,
            map,
            improvement_f: None,
            improvement_map: None,
        });
    }

    let primary = runs.first().map(|r| r.system.clone());
    if let Some(p) = rows.iter().position(|r| r.kind == RowKind::Measured) {
        let primary_row = rows[p].clone();
        for (i, row) in rows.iter_mut().enumerate() {
            if i != p {
                row.improvement_f = spread(&primary_row, row, Metric::F);
                row.improvement_map = spread(&primary_row, row, Metric::Map);
            }
        }
    }

    Ok(MetricsReport {
        format_version: REPORT_FORMAT_VERSION,
        ks: opts.ks.clone(),
        primary,
        reference: opts.reference.clone(),
        constants_only: matches!(reference, Reference::Constants(_)),
        rows,
        runs,
        provenance,
    })
}

fn cell_grid(ks: &[usize], mut f: impl FnMut(Half, usize) -> Cell) -> Vec<Cell> {
    Half::ALL
        .iter()
        .flat_map(|&h| ks.iter().map(move |&k| (h, k)))
        .map(|(h, k)| f(h, k))
        .collect()
}

/// Reference values paired with `run`'s entities for one cell.
fn paired_reference(
    reference: &Reference<'_>,
    baselines: &BaselineTable,
    run: &SystemRun,
    metric: Metric,
    half: Half,
    k: usize,
) -> Result<Option<(Vec<f64>, Vec<f64>)>, EvalError> {
    let ours = run.entity_values(metric, half, k);
    let x: Vec<f64> = ours.iter().map(|p| p.1).collect();
    match reference {
        Reference::None => Ok(None),
        Reference::Constants(name) => Ok(baselines
            .value(name, metric, half, k)
            .map(|c| (x.clone(), vec![c; x.len()]))),
        Reference::Measured(r) => {
            let theirs: HashMap<&str, f64> = r.entity_values(metric, half, k).into_iter().collect();
            let y = ours
                .iter()
                .map(|(id, _)| {
                    theirs.get(id).copied().ok_or_else(|| {
                        EvalError::Mismatch(format!("reference {} has no k={k} scores for entity {id}", r.system))
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(Some((x, y)))
        }
    }
}

fn significance(
    run: &SystemRun,
    reference: &Reference<'_>,
    baselines: &BaselineTable,
    metric: Metric,
    half: Half,
    k: usize,
) -> Result<Option<f64>, EvalError> {
    match paired_reference(reference, baselines, run, metric, half, k)? {
        Some((x, y)) if x.len() >= 2 => Ok(Some(paired_t_test(&x, &y)?)),
        _ => Ok(None),
    }
}

fn reference_mean(
    reference: &Reference<'_>,
    baselines: &BaselineTable,
    run: &SystemRun,
    metric: Metric,
    half: Half,
    k: usize,
) -> Result<Option<f64>, EvalError> {
    Ok(paired_reference(reference, baselines, run, metric, half, k)?
        .map(|(_, y)| y.iter().sum::<f64>() / y.len() as f64))
}

impl MetricsReport {
    pub fn row(&self, system: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.system.eq_ignore_ascii_case(system))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, EvalError> {
        serde_json::from_str(s).map_err(|e| EvalError::Mismatch(format!("malformed report: {e}")))
    }

    /// Aligned text tables, one per metric.
    pub fn render_text(&self) -> String {
        let name_w = self.rows.iter().map(|r| r.system.chars().count()).max().unwrap_or(6).max(6) + 2;
        let cw = 8;
        let mut out = String::new();
        for metric in Metric::ALL {
            let _ = writeln!(out, "{}", metric.title());
            let mut head1 = format!("{:name_w$}", "system");
            let mut head2 = format!("{:name_w$}", "");
            for half in Half::ALL {
                let span = cw * self.ks.len();
                let _ = write!(head1, "{:span$}", half.label());
                for k in &self.ks {
                    let _ = write!(head2, "{:cw$}", format!("k={k}"));
                }
            }
            let _ = write!(head1, "{}", "improvement %");
            let _ = write!(head2, "{:6}{:6}{:6}", "min", "max", "avg");
            let _ = writeln!(out, "{}", head1.trim_end());
            let _ = writeln!(out, "{}", head2.trim_end());
            for row in &self.rows {
                let mut line = format!("{:name_w$}", row.system);
                for c in row.cells(metric) {
                    let text = match c.value {
                        Some(v) => format!("{v:.3}{}", c.marker.as_deref().unwrap_or("")),
                        None => "-".into(),
                    };
                    let _ = write!(line, "{text:cw$}");
                }
                match row.improvement(metric) {
                    Some(s) => {
                        let _ = write!(line, "{:<6}{:<6}{:<6}", s.min.round(), s.max.round(), s.avg.round());
                    }
                    None => {
                        let _ = write!(line, "{:6}{:6}{:6}", "-", "-", "-");
                    }
                }
                let _ = writeln!(out, "{}", line.trim_end());
            }
            out.push('\n');
        }
        if let Some(r) = &self.reference {
            let how = if self.constants_only {
                "published constants only"
            } else {
                "paired per-entity scores"
            };
            let _ = writeln!(out, "+/-: significant difference from {r} (paired t-test, {how}), p <= 0.05");
        }
        if let Some(p) = &self.primary {
            let _ = writeln!(out, "improvement %: relative gain of {p} over each row");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scores(id: &str, source: Source, k: usize, f: f64, ap: f64) -> EntityScores {
        EntityScores {
            entity_id: id.into(),
            source,
            k,
            f_users: vec![f; 5],
            ap_users: vec![ap; 5],
        }
    }

    fn run(name: &str, shift: f64) -> SystemRun {
        let mut s = Vec::new();
        for i in 0..6 {
            let src = if i < 4 { Source::DBpedia } else { Source::LinkedMDB };
            let jitter = [0.01, -0.02, 0.03, 0.0, 0.02, -0.01][i];
            for k in [5, 10] {
                s.push(scores(&i.to_string(), src, k, 0.3 + shift + jitter, 0.4 + shift + jitter));
            }
        }
        SystemRun {
            system: name.into(),
            scores: s,
        }
    }

    #[test]
    fn embedded_constants() {
        let t = BaselineTable::embedded();
        assert_eq!(t.value("ESA", Metric::F, Half::All, 5), Some(0.312));
        assert_eq!(t.value("ESA", Metric::Map, Half::All, 10), Some(0.549));
        assert_eq!(t.value("ESA", Metric::Map, Half::All, 5), Some(0.386));
        assert_eq!(t.value("esa", Metric::F, Half::All, 10), Some(0.491));
        assert_eq!(t.value("full", Metric::F, Half::DBpedia, 5), Some(0.387));
        assert_eq!(t.value("CD", Metric::Map, Half::All, 5), None);
        assert_eq!(t.value("ESA", Metric::F, Half::All, 7), None);
        assert_eq!(t.rows.len(), 14);
    }

    #[test]
    fn constants_only_markers_and_improvements() {
        let report = build_report(vec![run("mine", 0.2)], &BaselineTable::embedded(), &ReportOptions::default(), serde_json::Value::Null).unwrap();
        assert!(report.constants_only);
        let mine = report.row("mine").unwrap();
        let all5 = mine.f.iter().find(|c| c.half == Half::All && c.k == 5).unwrap();
        assert_eq!(all5.marker.as_deref(), Some("+"));
        let esa = report.row("ESA").unwrap();
        let s = esa.improvement_f.as_ref().unwrap();
        assert!(s.min <= s.avg && s.avg <= s.max);
        assert!(mine.improvement_f.is_none());
        let cd = report.row("CD").unwrap();
        assert!(cd.improvement_map.is_none());
        let text = report.render_text();
        assert!(text.contains("F-measure") && text.contains("MAP") && text.contains("k=10"));
        assert!(text.contains("published constants only"));
    }

    #[test]
    fn measured_reference_pairs_by_entity() {
        let opts = ReportOptions {
            reference: Some("esa".into()),
            include_baselines: false,
            include_published: false,
            ..Default::default()
        };
        let report = build_report(vec![run("mine", 0.1), run("esa", 0.0)], &BaselineTable::embedded(), &opts, serde_json::Value::Null).unwrap();
        assert!(!report.constants_only);
        let mine = report.row("mine").unwrap();
        // same spread shifted by a constant: (near) zero variance
        assert!(mine.f.iter().all(|c| c.p_value.unwrap() < 1e-6 && c.marker.as_deref() == Some("+")));
        let esa = report.row("esa").unwrap();
        assert!(esa.f.iter().all(|c| c.p_value.is_none()));
        let imp = esa.improvement_f.as_ref().unwrap();
        assert!(imp.min > 0.0);

        let mut partial = run("esa", 0.0);
        partial.scores.retain(|e| e.entity_id != "3");
        let err = build_report(vec![run("mine", 0.1), partial], &BaselineTable::embedded(), &opts, serde_json::Value::Null);
        assert!(matches!(err, Err(EvalError::Mismatch(_))));
    }

    #[test]
    fn unknown_reference_is_an_error() {
        let opts = ReportOptions {
            reference: Some("nope".into()),
            ..Default::default()
        };
        assert!(matches!(
            build_report(vec![run("mine", 0.0)], &BaselineTable::embedded(), &opts, serde_json::Value::Null),
            Err(EvalError::UnknownSystem(_))
        ));
    }

    #[test]
    fn json_round_trip() {
        let report = build_report(vec![run("mine", 0.0)], &BaselineTable::embedded(), &ReportOptions::default(), serde_json::json!({"seed": 1})).unwrap();
        assert_eq!(MetricsReport::from_json(&report.to_json()).unwrap(), report);
    }

    proptest! {
        #[test]
        fn all_column_is_entity_weighted(
            db in proptest::collection::vec(0.0f64..1.0, 1..40),
            lm in proptest::collection::vec(0.0f64..1.0, 1..20),
        ) {
            let mut s = Vec::new();
            for (i, &v) in db.iter().enumerate() {
                s.push(scores(&format!("d{i}"), Source::DBpedia, 5, v, v));
            }
            for (i, &v) in lm.iter().enumerate() {
                s.push(scores(&format!("l{i}"), Source::LinkedMDB, 5, v, v));
            }
            let r = SystemRun { system: "x".into(), scores: s };
            let d = r.aggregate(Metric::F, Half::DBpedia, 5).unwrap();
            let l = r.aggregate(Metric::F, Half::LinkedMDB, 5).unwrap();
            let a = r.aggregate(Metric::F, Half::All, 5).unwrap();
            let (nd, nl) = (db.len() as f64, lm.len() as f64);
            prop_assert!((a - (nd * d + nl * l) / (nd + nl)).abs() < 1e-9);
            let mean_db = db.iter().sum::<f64>() / nd;
            prop_assert!((d - mean_db).abs() < 1e-12);
        }
    }
}
