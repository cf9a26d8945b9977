use std::io::{Read, Write};
use std::path::Path;

use crate::group::Group;

use super::AuditError;

/// One individual's record: who they are and what each lender did.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub id: String,
    pub group: Group,
    pub label: bool,
    /// Whether each lender serves this individual at all.
    pub served: Vec<bool>,
    /// Probability that each lender offers (0 or 1 for deterministic
    /// classifiers, anything in between after randomized post-processing).
    pub offer_prob: Vec<f64>,
}

/// Per-individual predictions of `n` lenders.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionTable {
    n_lenders: usize,
    rows: Vec<PredictionRow>,
}

impl PredictionTable {
    pub fn new(n_lenders: usize, rows: Vec<PredictionRow>) -> Result<Self, AuditError> {
        if n_lenders == 0 {
            return Err(AuditError::InvalidTable(
                "a table needs at least one lender".into(),
            ));
        }
        for row in &rows {
            validate_row(n_lenders, row)?;
        }
        Ok(Self { n_lenders, rows })
    }

    pub fn n_lenders(&self) -> usize {
        self.n_lenders
    }

    pub fn rows(&self) -> &[PredictionRow] {
        &self.rows
    }

    pub fn into_rows(self) -> Vec<PredictionRow> {
        self.rows
    }

    /// Replaces lender `lender`'s offer probabilities using `f(row, old)`.
    /// Rows the lender does not serve are left untouched.
    pub fn map_lender(
        &self,
        lender: usize,
        mut f: impl FnMut(&PredictionRow, f64) -> f64,
    ) -> Result<Self, AuditError> {
        if lender >= self.n_lenders {
            return Err(AuditError::NoSuchLender {
                lender,
                n: self.n_lenders,
            });
        }
        let rows = self
            .rows
            .iter()
            .map(|row| {
                let mut out = row.clone();
                if row.served[lender] {
                    out.offer_prob[lender] = f(row, row.offer_prob[lender]);
                }
                out
            })
            .collect();
        Self::new(self.n_lenders, rows)
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self, AuditError> {
        let file = std::fs::File::open(path.as_ref()).map_err(|e| AuditError::Io(e.to_string()))?;
        Self::from_csv_reader(file)
    }

    /// Parses `id,group,label,served_1..served_n,p_1..p_n`.
    pub fn from_csv_reader(reader: impl Read) -> Result<Self, AuditError> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header = rdr.headers().map_err(csv_err)?.clone();
        let n = parse_header(&header)?;
        let mut rows = Vec::new();
        for (i, record) in rdr.records().enumerate() {
            let record = record.map_err(csv_err)?;
            let line = i + 2;
            let field = |j: usize| record.get(j).unwrap_or("");
            let bit = |j: usize| -> Result<bool, AuditError> {
                match field(j) {
                    "0" => Ok(false),
                    "1" => Ok(true),
                    other => Err(AuditError::Parse {
                        line,
                        column: header[j].to_string(),
                        value: other.to_string(),
                    }),
                }
            };
            if record.len() != 3 + 2 * n {
                return Err(AuditError::InvalidTable(format!(
                    "line {line}: expected {} fields, got {}",
                    3 + 2 * n,
                    record.len()
                )));
            }
            let group = if bit(1)? { Group::One } else { Group::Zero };
            let label = bit(2)?;
            let served = (0..n).map(|l| bit(3 + l)).collect::<Result<Vec<_>, _>>()?;
            let offer_prob = (0..n)
                .map(|l| {
                    let j = 3 + n + l;
                    field(j).parse::<f64>().map_err(|_| AuditError::Parse {
                        line,
                        column: header[j].to_string(),
                        value: field(j).to_string(),
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            let row = PredictionRow {
                id: field(0).to_string(),
                group,
                label,
                served,
                offer_prob,
            };
            validate_row(n, &row)
                .map_err(|e| AuditError::InvalidTable(format!("line {line}: {e}")))?;
            rows.push(row);
        }
        Self::new(n, rows)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), AuditError> {
        let file =
            std::fs::File::create(path.as_ref()).map_err(|e| AuditError::Io(e.to_string()))?;
        self.to_csv_writer(file)
    }

    /// Writes the CSV layout read by [`PredictionTable::from_csv_reader`].
    /// Probabilities use the shortest representation that parses back to
    /// the identical `f64`.
    pub fn to_csv_writer(&self, writer: impl Write) -> Result<(), AuditError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(header_fields(self.n_lenders))
            .map_err(csv_err)?;
        for row in &self.rows {
            let mut rec = Vec::with_capacity(3 + 2 * self.n_lenders);
            rec.push(row.id.clone());
            rec.push(row.group.to_string());
            rec.push(u8::from(row.label).to_string());
            rec.extend(row.served.iter().map(|&s| u8::from(s).to_string()));
            rec.extend(row.offer_prob.iter().map(|p| p.to_string()));
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush().map_err(|e| AuditError::Io(e.to_string()))
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.to_csv_writer(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }
}

fn validate_row(n: usize, row: &PredictionRow) -> Result<(), AuditError> {
    if row.served.len() != n || row.offer_prob.len() != n {
        return Err(AuditError::InvalidTable(format!(
            "row {:?} has {} served flags and {} probabilities for {n} lenders",
            row.id,
            row.served.len(),
            row.offer_prob.len()
        )));
    }
    for (l, (&s, &p)) in row.served.iter().zip(&row.offer_prob).enumerate() {
        if !(0.0..=1.0).contains(&p) {
            return Err(AuditError::InvalidTable(format!(
                "row {:?}: p_{} = {p} is not a probability",
                row.id,
                l + 1
            )));
        }
        if !s && p != 0.0 {
            return Err(AuditError::InvalidTable(format!(
                "row {:?}: lender {} does not serve this row but offers with probability {p}",
                row.id,
                l + 1
            )));
        }
    }
    Ok(())
}

fn header_fields(n: usize) -> Vec<String> {
    let mut h = vec!["id".to_string(), "group".to_string(), "label".to_string()];
    h.extend((1..=n).map(|l| format!("served_{l}")));
    h.extend((1..=n).map(|l| format!("p_{l}")));
    h
}

fn parse_header(header: &csv::StringRecord) -> Result<usize, AuditError> {
    let len = header.len();
    if len < 5 || !(len - 3).is_multiple_of(2) {
        return Err(AuditError::InvalidTable(format!(
            "header has {len} columns"
        )));
    }
    let n = (len - 3) / 2;
    let expected = header_fields(n);
    for (got, want) in header.iter().zip(&expected) {
        if got != want {
            return Err(AuditError::InvalidTable(format!(
                "expected column {want:?}, found {got:?}"
            )));
        }
    }
    Ok(n)
}

fn csv_err(e: csv::Error) -> AuditError {
    AuditError::Csv(e.to_string())
}
