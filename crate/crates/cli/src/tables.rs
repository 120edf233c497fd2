//! Comma-delimited arm and contrast tables.
//!
//! Arm table header: `study,treatment,events,total`.
//! Contrast table header: `study,baseline_treatment,treatment,y,se,se_baseline`.
//!
//! Component indices follow first appearance in the file. Readers accept a
//! seed dictionary so a table written from memory reads back with the same
//! indices.

use std::path::Path;

use cnma::network::{
    arm_to_contrast, format_treatment, parse_treatment, ArmRecord, ComponentDict, ContrastBlock, Study, Treatment,
    ZeroCellPolicy,
};

use crate::error::{CliError, Result};
use crate::output::write_atomic;

pub const ARM_HEADER: [&str; 4] = ["study", "treatment", "events", "total"];
pub const CONTRAST_HEADER: [&str; 6] = ["study", "baseline_treatment", "treatment", "y", "se", "se_baseline"];

#[derive(Debug, Clone, PartialEq)]
pub struct ArmTable {
    pub components: ComponentDict,
    pub studies: Vec<Study>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastTable {
    pub components: ComponentDict,
    /// Baseline arm first in every block.
    pub blocks: Vec<ContrastBlock>,
}

impl ContrastTable {
    /// Reorders each block so its baseline is the first arm; contrasts keep
    /// their order.
    pub fn new(components: ComponentDict, blocks: Vec<ContrastBlock>) -> Result<Self> {
        let blocks = blocks
            .into_iter()
            .map(|b| {
                if b.baseline_arm == 0 {
                    return Ok(b);
                }
                let mut treatments = vec![b.baseline_treatment().clone()];
                treatments.extend(b.contrast_treatments().cloned());
                Ok(ContrastBlock::new(b.study_id, 0, b.y_star, b.se, b.se_baseline, treatments)?)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { components, blocks })
    }
}

/// Which kind of table a file holds, judged from its header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableKind {
    Arm,
    Contrast,
}

pub fn detect_kind(path: &Path) -> Result<TableKind> {
    let mut rdr = reader(path)?;
    let header = headers(&mut rdr, path)?;
    if header == ARM_HEADER {
        Ok(TableKind::Arm)
    } else if header == CONTRAST_HEADER {
        Ok(TableKind::Contrast)
    } else {
        Err(CliError::BadHeader {
            path: path.to_path_buf(),
            expected: format!("{} or {}", ARM_HEADER.join(","), CONTRAST_HEADER.join(",")),
        })
    }
}

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|source| CliError::Csv {
            path: path.to_path_buf(),
            source,
        })
}

fn headers(rdr: &mut csv::Reader<std::fs::File>, path: &Path) -> Result<Vec<String>> {
    let h = rdr.headers().map_err(|source| CliError::Csv {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(h.iter().map(|s| s.trim_start_matches('\u{feff}').to_string()).collect())
}

/// Rows with their line numbers, after checking the header.
fn rows(path: &Path, expected: &[&str]) -> Result<Vec<(u64, csv::StringRecord)>> {
    let mut rdr = reader(path)?;
    if headers(&mut rdr, path)? != expected {
        return Err(CliError::BadHeader {
            path: path.to_path_buf(),
            expected: expected.join(","),
        });
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|source| match source.position() {
            Some(pos) => CliError::MalformedRow {
                path: path.to_path_buf(),
                line: pos.line(),
                message: source.to_string(),
            },
            None => CliError::Csv {
                path: path.to_path_buf(),
                source,
            },
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        out.push((line, rec));
    }
    if out.is_empty() {
        return Err(CliError::EmptyTable(path.to_path_buf()));
    }
    Ok(out)
}

fn malformed(path: &Path, line: u64, message: impl Into<String>) -> CliError {
    CliError::MalformedRow {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn parse_field<T: std::str::FromStr>(path: &Path, line: u64, name: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| malformed(path, line, format!("{name} '{value}' is not a valid number")))
}

fn parse_finite(path: &Path, line: u64, name: &str, value: &str) -> Result<f64> {
    let v: f64 = parse_field(path, line, name, value)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(malformed(path, line, format!("{name} must be finite")))
    }
}

fn nonempty<'a>(path: &Path, line: u64, name: &str, value: &'a str) -> Result<&'a str> {
    if value.is_empty() {
        Err(malformed(path, line, format!("{name} is empty")))
    } else {
        Ok(value)
    }
}

/// Groups rows by study id in order of first appearance.
fn group<T>(items: Vec<(String, T)>) -> Vec<(String, Vec<T>)> {
    let mut groups: Vec<(String, Vec<T>)> = Vec::new();
    for (id, item) in items {
        match groups.iter_mut().find(|(g, _)| *g == id) {
            Some((_, v)) => v.push(item),
            None => groups.push((id, vec![item])),
        }
    }
    groups
}

pub fn read_arm_table(path: &Path, separator: &str) -> Result<ArmTable> {
    read_arm_table_with(path, separator, ComponentDict::new())
}

/// Reads an arm table, registering components after those already in
/// `components`. Arm 1 of a study is its first row.
pub fn read_arm_table_with(path: &Path, separator: &str, mut components: ComponentDict) -> Result<ArmTable> {
    let mut items = Vec::new();
    for (line, rec) in rows(path, &ARM_HEADER)? {
        let study = nonempty(path, line, "study", &rec[0])?.to_string();
        let treatment = parse_treatment(&rec[1], separator, &mut components).map_err(|e| malformed(path, line, e.to_string()))?;
        let events: u64 = parse_field(path, line, "events", &rec[2])?;
        let total: u64 = parse_field(path, line, "total", &rec[3])?;
        if events > total {
            return Err(cnma::CnmaError::EventsExceedTotal { study, events, total }.into());
        }
        items.push((study, ArmRecord::new(treatment, events, total)));
    }
    let studies = group(items)
        .into_iter()
        .map(|(id, arms)| Study::new(id, arms))
        .collect::<cnma::Result<Vec<_>>>()?;
    Ok(ArmTable { components, studies })
}

fn label(t: &Treatment, components: &ComponentDict, separator: &str) -> Result<String> {
    Ok(format_treatment(t, components, separator)?)
}

fn finish(writer: csv::Writer<Vec<u8>>, path: &Path) -> Result<()> {
    let bytes = writer.into_inner().map_err(|e| CliError::io(path, e.into_error()))?;
    write_atomic(path, &bytes)
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |source| CliError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_arm_table(path: &Path, table: &ArmTable, separator: &str) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(ARM_HEADER).map_err(csv_err(path))?;
    for s in &table.studies {
        for arm in &s.arms {
            let t = label(&arm.treatment, &table.components, separator)?;
            w.write_record([s.id.as_str(), &t, &arm.events.to_string(), &arm.total.to_string()])
                .map_err(csv_err(path))?;
        }
    }
    finish(w, path)
}

struct ContrastRow {
    line: u64,
    baseline: Treatment,
    treatment: Treatment,
    y: f64,
    se: f64,
    se_baseline: Option<f64>,
}

pub fn read_contrast_table(path: &Path, separator: &str) -> Result<ContrastTable> {
    read_contrast_table_with(path, separator, ComponentDict::new())
}

/// Reads a contrast table. Rows of a study share one baseline and, when
/// there are two or more, one `se_baseline`; a single-row study may leave it
/// empty.
pub fn read_contrast_table_with(path: &Path, separator: &str, mut components: ComponentDict) -> Result<ContrastTable> {
    let mut items = Vec::new();
    for (line, rec) in rows(path, &CONTRAST_HEADER)? {
        let study = nonempty(path, line, "study", &rec[0])?.to_string();
        let baseline = parse_treatment(&rec[1], separator, &mut components).map_err(|e| malformed(path, line, e.to_string()))?;
        let treatment = parse_treatment(&rec[2], separator, &mut components).map_err(|e| malformed(path, line, e.to_string()))?;
        let y = parse_finite(path, line, "y", &rec[3])?;
        let se = parse_finite(path, line, "se", &rec[4])?;
        if se <= 0.0 {
            return Err(malformed(path, line, format!("se must be positive, got {se}")));
        }
        let se_baseline = match &rec[5] {
            "" => None,
            v => Some(parse_finite(path, line, "se_baseline", v)?),
        };
        items.push((
            study,
            ContrastRow {
                line,
                baseline,
                treatment,
                y,
                se,
                se_baseline,
            },
        ));
    }
    let mut blocks = Vec::new();
    for (id, rows) in group(items) {
        let first = &rows[0];
        if let Some(r) = rows.iter().find(|r| r.baseline != first.baseline) {
            return Err(CliError::MixedBaseline {
                study: id,
                first: first.baseline.label.clone(),
                second: r.baseline.label.clone(),
            });
        }
        let se_baseline = if rows.len() == 1 {
            first.se_baseline.unwrap_or(0.0)
        } else {
            let v = first.se_baseline.ok_or_else(|| CliError::MissingBaselineSe(id.clone()))?;
            if let Some(r) = rows.iter().find(|r| r.se_baseline != Some(v)) {
                return Err(match r.se_baseline {
                    None => CliError::MissingBaselineSe(id),
                    Some(_) => malformed(path, r.line, format!("se_baseline differs between rows of study '{id}'")),
                });
            }
            v
        };
        let mut treatments = vec![first.baseline.clone()];
        treatments.extend(rows.iter().map(|r| r.treatment.clone()));
        blocks.push(ContrastBlock::new(
            id,
            0,
            rows.iter().map(|r| r.y).collect(),
            rows.iter().map(|r| r.se).collect(),
            se_baseline,
            treatments,
        )?);
    }
    Ok(ContrastTable { components, blocks })
}

pub fn write_contrast_table(path: &Path, table: &ContrastTable, separator: &str) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CONTRAST_HEADER).map_err(csv_err(path))?;
    for b in &table.blocks {
        let base = label(b.baseline_treatment(), &table.components, separator)?;
        let se_baseline = if b.n_contrasts() == 1 && b.se_baseline == 0.0 {
            String::new()
        } else {
            b.se_baseline.to_string()
        };
        for (j, t) in b.contrast_treatments().enumerate() {
            let t = label(t, &table.components, separator)?;
            w.write_record([b.study_id.as_str(), &base, &t, &b.y_star[j].to_string(), &b.se[j].to_string(), &se_baseline])
                .map_err(csv_err(path))?;
        }
    }
    finish(w, path)
}

/// Log odds ratio contrasts of every study against its baseline arm: the arm
/// receiving `baseline` when given and present, else the first arm.
pub fn arm_to_contrast_table(table: &ArmTable, baseline: Option<&Treatment>, policy: ZeroCellPolicy) -> Result<ContrastTable> {
    let blocks = table
        .studies
        .iter()
        .map(|s| {
            let b = baseline.and_then(|t| s.arm_of(t)).unwrap_or(0);
            arm_to_contrast(s, b, policy)
        })
        .collect::<cnma::Result<Vec<_>>>()?;
    ContrastTable::new(table.components.clone(), blocks)
}

pub const CASE_STUDY_COMPONENTS: [&str; 6] = ["Usual", "Edu", "Beh", "Cog", "Rel", "Sup"];
pub const CASE_STUDY_TRIALS: usize = 36;

/// Differences between `table` and the expected shape of the psychological
/// interventions mortality dataset: 36 trials, components Usual, Edu, Beh,
/// Cog, Rel and Sup, and a usual-care arm in every trial. Empty when the
/// shape matches.
pub fn case_study_shape_issues(table: &ArmTable) -> Vec<String> {
    let mut issues = Vec::new();
    if table.studies.len() != CASE_STUDY_TRIALS {
        issues.push(format!("expected {CASE_STUDY_TRIALS} trials, found {}", table.studies.len()));
    }
    let mut names: Vec<&str> = table.components.names().iter().map(String::as_str).collect();
    names.sort_unstable();
    let mut expected = CASE_STUDY_COMPONENTS.to_vec();
    expected.sort_unstable();
    if names != expected {
        issues.push(format!("expected components {}, found {}", CASE_STUDY_COMPONENTS.join(","), names.join(",")));
    }
    if let Some(usual) = table.components.index_of("Usual") {
        for s in &table.studies {
            if !s.arms.iter().any(|a| a.treatment.components() == [usual]) {
                issues.push(format!("trial '{}' has no usual-care arm", s.id));
            }
        }
    }
    issues
}
