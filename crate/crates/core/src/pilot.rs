//! Pilot datasets and their delimiter-separated text format.
//!
//! Long layout, header mandatory:
//!
//! ```text
//! subject_id,group,q,m1,m2,m3
//! s001,1,2.31,1.90,2.05,
//! s002,1,1.77,,,
//! ```
//!
//! Empty replicate cells are missing measurements; a subject with at least one
//! replicate belongs to the calibration subsample of its group.

use std::collections::HashSet;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PilotRecord {
    pub subject_id: String,
    pub group: u8,
    /// Indirect measurement.
    pub q: f64,
    /// Direct measurements, in order; empty for indirect-only subjects.
    pub replicates: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PilotDataset {
    records: Vec<PilotRecord>,
}

/// One group's observations split into the values the estimators need.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroupObservations {
    /// Indirect measure of every subject in the group.
    pub q_all: Vec<f64>,
    /// Indirect measure of each calibration subject.
    pub q_calibration: Vec<f64>,
    /// Replicates of each calibration subject, aligned with `q_calibration`.
    pub replicates: Vec<Vec<f64>>,
}

impl GroupObservations {
    pub fn n_total(&self) -> usize {
        self.q_all.len()
    }

    pub fn n_direct(&self) -> usize {
        self.q_calibration.len()
    }

    pub fn max_replicates(&self) -> usize {
        self.replicates.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn replicate_means(&self) -> Vec<f64> {
        self.replicates
            .iter()
            .map(|r| r.iter().sum::<f64>() / r.len() as f64)
            .collect()
    }
}

impl PilotDataset {
    pub fn new(records: Vec<PilotRecord>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (i, r) in records.iter().enumerate() {
            // line numbers as they would appear in a file with a header row
            let line = i + 2;
            if !seen.insert(r.subject_id.as_str()) {
                return Err(Error::Pilot {
                    line,
                    reason: format!("duplicate subject_id {:?}", r.subject_id),
                });
            }
            check_record(r).map_err(|reason| Error::Pilot { line, reason })?;
        }
        Ok(Self { records })
    }

    pub fn records(&self) -> &[PilotRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Group ids present, ascending.
    pub fn groups(&self) -> Vec<u8> {
        let mut groups: Vec<u8> = self.records.iter().map(|r| r.group).collect();
        groups.sort_unstable();
        groups.dedup();
        groups
    }

    pub fn observations(&self, group: u8) -> GroupObservations {
        let mut obs = GroupObservations::default();
        for r in self.records.iter().filter(|r| r.group == group) {
            obs.q_all.push(r.q);
            if !r.replicates.is_empty() {
                obs.q_calibration.push(r.q);
                obs.replicates.push(r.replicates.clone());
            }
        }
        obs
    }

    /// Parses the pilot format. The delimiter is a tab when the header line
    /// contains tabs but no commas, otherwise a comma.
    pub fn from_reader<R: Read>(mut reader: R) -> Result<Self> {
        let mut text = String::new();
        reader.read_to_string(&mut text).map_err(|e| Error::Pilot {
            line: 0,
            reason: format!("read failed: {e}"),
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let header_line = text.lines().next().unwrap_or("");
        let delimiter = if header_line.contains('\t') && !header_line.contains(',') {
            b'\t'
        } else {
            b','
        };
        let mut reader = csv::ReaderBuilder::new()
            .delimiter(delimiter)
            .has_headers(true)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());

        let header = reader.headers().map_err(|e| Error::Pilot {
            line: 1,
            reason: e.to_string(),
        })?;
        let replicate_columns =
            check_header(header).map_err(|reason| Error::Pilot { line: 1, reason })?;

        let mut records = Vec::new();
        for row in reader.records() {
            let row = row.map_err(|e| Error::Pilot {
                line: e.position().map_or(0, |p| p.line() as usize),
                reason: e.to_string(),
            })?;
            let line = row.position().map_or(0, |p| p.line() as usize);
            if row.iter().all(str::is_empty) {
                continue;
            }
            let fail = |reason: String| Error::Pilot { line, reason };
            if row.len() > 3 + replicate_columns {
                return Err(fail(format!(
                    "{} fields but the header declares {}",
                    row.len(),
                    3 + replicate_columns
                )));
            }
            if row.len() < 3 {
                return Err(fail("expected subject_id, group and q".into()));
            }
            let subject_id = row[0].to_string();
            if subject_id.is_empty() {
                return Err(fail("empty subject_id".into()));
            }
            let group = row[1]
                .parse::<u8>()
                .map_err(|_| fail(format!("group {:?} is not 1 or 2", &row[1])))?;
            let q = parse_number(&row[2]).map_err(|r| fail(format!("q: {r}")))?;
            let mut replicates = Vec::new();
            for (j, cell) in row.iter().skip(3).enumerate() {
                if !cell.is_empty() {
                    replicates
                        .push(parse_number(cell).map_err(|r| fail(format!("m{}: {r}", j + 1)))?);
                }
            }
            records.push((
                line,
                PilotRecord {
                    subject_id,
                    group,
                    q,
                    replicates,
                },
            ));
        }

        let mut seen = HashSet::new();
        for (line, r) in &records {
            if !seen.insert(r.subject_id.clone()) {
                return Err(Error::Pilot {
                    line: *line,
                    reason: format!("duplicate subject_id {:?}", r.subject_id),
                });
            }
            check_record(r).map_err(|reason| Error::Pilot {
                line: *line,
                reason,
            })?;
        }
        Ok(Self {
            records: records.into_iter().map(|(_, r)| r).collect(),
        })
    }

    /// Writes the dataset with as many replicate columns as the widest record.
    pub fn write<W: Write>(&self, writer: W) -> Result<()> {
        let width = self
            .records
            .iter()
            .map(|r| r.replicates.len())
            .max()
            .unwrap_or(0);
        let mut out = csv::Writer::from_writer(writer);
        let io = |e: csv::Error| Error::Pilot {
            line: 0,
            reason: format!("write failed: {e}"),
        };
        let mut header = vec!["subject_id".to_string(), "group".into(), "q".into()];
        header.extend((1..=width).map(|k| format!("m{k}")));
        out.write_record(&header).map_err(io)?;
        for r in &self.records {
            let mut row = vec![r.subject_id.clone(), r.group.to_string(), r.q.to_string()];
            row.extend(r.replicates.iter().map(f64::to_string));
            row.resize(3 + width, String::new());
            out.write_record(&row).map_err(io)?;
        }
        out.flush().map_err(|e| Error::Pilot {
            line: 0,
            reason: format!("write failed: {e}"),
        })
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("csv output is utf-8")
    }
}

fn check_header(header: &csv::StringRecord) -> std::result::Result<usize, String> {
    let expected = ["subject_id", "group", "q"];
    if header.len() < 3 {
        return Err("header must start with subject_id,group,q".into());
    }
    for (i, name) in expected.iter().enumerate() {
        if !header[i].eq_ignore_ascii_case(name) {
            return Err(format!(
                "column {} must be {name:?}, found {:?}",
                i + 1,
                &header[i]
            ));
        }
    }
    for (j, name) in header.iter().skip(3).enumerate() {
        let want = format!("m{}", j + 1);
        if !name.eq_ignore_ascii_case(&want) {
            return Err(format!("column {} must be {want:?}, found {name:?}", j + 4));
        }
    }
    Ok(header.len() - 3)
}

fn parse_number(cell: &str) -> std::result::Result<f64, String> {
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(format!("{cell:?} is not a finite number")),
    }
}

fn check_record(r: &PilotRecord) -> std::result::Result<(), String> {
    if r.group != 1 && r.group != 2 {
        return Err(format!("group {} is not 1 or 2", r.group));
    }
    if !r.q.is_finite() {
        return Err("q must be finite".into());
    }
    if r.replicates.iter().any(|m| !m.is_finite()) {
        return Err("replicates must be finite".into());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "subject_id,group,q,m1,m2\n\
                          a,1,1.5,1.0,2.0\n\
                          b,1,2.5,,3.0\n\
                          c,1,0.5,,\n\
                          d,2,4.0,4.5,\n";

    #[test]
    fn parses_long_layout() {
        let data = PilotDataset::parse(SAMPLE).unwrap();
        assert_eq!(data.len(), 4);
        assert_eq!(data.groups(), vec![1, 2]);
        let g1 = data.observations(1);
        assert_eq!(g1.q_all, vec![1.5, 2.5, 0.5]);
        assert_eq!(g1.q_calibration, vec![1.5, 2.5]);
        assert_eq!(g1.replicates, vec![vec![1.0, 2.0], vec![3.0]]);
        assert_eq!(g1.max_replicates(), 2);
        assert_eq!(g1.replicate_means(), vec![1.5, 3.0]);
    }

    #[test]
    fn tab_delimited_accepted() {
        let tsv = SAMPLE.replace(',', "\t");
        assert_eq!(
            PilotDataset::parse(&tsv).unwrap(),
            PilotDataset::parse(SAMPLE).unwrap()
        );
    }

    #[test]
    fn round_trips_through_text() {
        let data = PilotDataset::parse(SAMPLE).unwrap();
        let again = PilotDataset::parse(&data.to_csv_string()).unwrap();
        assert_eq!(data, again);
    }

    #[test]
    fn rejects_bad_input() {
        let dup = "subject_id,group,q,m1\na,1,1,1\na,1,2,2\n";
        assert!(matches!(
            PilotDataset::parse(dup),
            Err(Error::Pilot { line: 3, .. })
        ));
        let group = "subject_id,group,q,m1\na,3,1,1\n";
        assert!(PilotDataset::parse(group)
            .unwrap_err()
            .to_string()
            .contains("group"));
        let header = "id,group,q\na,1,1\n";
        assert!(matches!(
            PilotDataset::parse(header),
            Err(Error::Pilot { line: 1, .. })
        ));
        let nan = "subject_id,group,q,m1\na,1,x,1\n";
        assert!(PilotDataset::parse(nan)
            .unwrap_err()
            .to_string()
            .contains("q"));
        let wide = "subject_id,group,q,m1\na,1,1,1,2\n";
        assert!(PilotDataset::parse(wide).is_err());
    }
}
