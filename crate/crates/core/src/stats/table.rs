use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{summarize, Summary};
use crate::error::{Error, Result};

/// One patient row. `diff` and `percent` are the printed values when present.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedRow {
    pub patient: String,
    pub us: f64,
    pub mri_us: f64,
    pub diff: Option<f64>,
    pub percent: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, f64>,
}

impl PairedRow {
    /// `mri_us − us`.
    pub fn computed_diff(&self) -> f64 {
        self.mri_us - self.us
    }

    pub fn computed_percent(&self) -> f64 {
        100.0 * self.computed_diff() / self.us
    }

    fn value(&self, column: &str) -> Option<f64> {
        match column {
            "us" => Some(self.us),
            "mri_us" => Some(self.mri_us),
            "diff" => self.diff,
            "percent" => self.percent,
            c => self.extra.get(c).copied(),
        }
    }
}

/// Printed summary row (`mean` or `sd`), keyed by column.
pub type SummaryRow = BTreeMap<String, f64>;

/// Outcome of re-deriving one printed cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableCheck {
    pub row: String,
    pub column: String,
    pub printed: f64,
    pub computed: f64,
    pub ok: bool,
}

/// Paired per-patient table: `patient,us,mri_us[,diff][,percent][,...]`
/// with optional trailing `mean` and `sd` rows.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PairedTable {
    pub columns: Vec<String>,
    pub rows: Vec<PairedRow>,
    pub mean: Option<SummaryRow>,
    pub sd: Option<SummaryRow>,
}

fn parse_cell(s: &str, ctx: &str) -> Result<f64> {
    // decimal commas are accepted when the field is quoted
    s.trim()
        .replace(',', ".")
        .parse::<f64>()
        .map_err(|_| Error::Parse(format!("{ctx}: not a number: {s:?}")))
}

impl PairedTable {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(file, &path.display().to_string())
    }

    pub fn from_reader(reader: impl Read, context: &str) -> Result<Self> {
        let csv_err = |source| Error::Csv {
            context: context.to_string(),
            source,
        };
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let columns: Vec<String> = rdr
            .headers()
            .map_err(csv_err)?
            .iter()
            .map(str::to_string)
            .collect();
        let idx = |name: &str| columns.iter().position(|c| c == name);
        let (Some(ip), Some(iu), Some(im)) = (idx("patient"), idx("us"), idx("mri_us")) else {
            return Err(Error::Parse(format!(
                "{context}: header must contain patient, us and mri_us"
            )));
        };
        let mut table = PairedTable {
            columns: columns.clone(),
            ..Default::default()
        };
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            let ctx = format!("{context} row {}", line + 2);
            let label = rec.get(ip).unwrap_or("").to_string();
            let mut cells = BTreeMap::new();
            for (c, v) in columns.iter().zip(rec.iter()) {
                if c != "patient" && !v.is_empty() {
                    cells.insert(c.clone(), parse_cell(v, &ctx)?);
                }
            }
            match label.as_str() {
                "mean" => table.mean = Some(cells),
                "sd" => table.sd = Some(cells),
                _ => {
                    if table.mean.is_some() || table.sd.is_some() {
                        return Err(Error::Parse(format!(
                            "{ctx}: patient row after summary rows"
                        )));
                    }
                    let need = |i: usize| {
                        rec.get(i)
                            .filter(|v| !v.is_empty())
                            .ok_or_else(|| Error::Parse(format!("{ctx}: missing {}", columns[i])))
                            .and_then(|v| parse_cell(v, &ctx))
                    };
                    let us = need(iu)?;
                    let mri_us = need(im)?;
                    let diff = cells.remove("diff");
                    let percent = cells.remove("percent");
                    cells.remove("us");
                    cells.remove("mri_us");
                    table.rows.push(PairedRow {
                        patient: label,
                        us,
                        mri_us,
                        diff,
                        percent,
                        extra: cells,
                    });
                }
            }
        }
        if table.rows.is_empty() {
            return Err(Error::EmptyInput("paired table has no patient rows"));
        }
        Ok(table)
    }

    /// `(us, mri_us)` pairs in row order.
    pub fn pairs(&self) -> Vec<(f64, f64)> {
        self.rows.iter().map(|r| (r.us, r.mri_us)).collect()
    }

    /// Values of a column over the patient rows; `None` if any row lacks it.
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        self.rows.iter().map(|r| r.value(name)).collect()
    }

    /// Recomputed diff and percent against the printed values.
    pub fn check_rows(&self, tol: f64) -> Vec<TableCheck> {
        let mut out = Vec::new();
        for r in &self.rows {
            let mut push = |column: &str, printed: Option<f64>, computed: f64| {
                if let Some(printed) = printed {
                    out.push(TableCheck {
                        row: r.patient.clone(),
                        column: column.to_string(),
                        printed,
                        computed,
                        ok: (printed - computed).abs() <= tol,
                    });
                }
            };
            push("diff", r.diff, r.computed_diff());
            push("percent", r.percent, r.computed_percent());
        }
        out
    }

    /// Summary of a column over the patient rows.
    pub fn summary(&self, column: &str) -> Result<Summary> {
        let values = self
            .column(column)
            .ok_or_else(|| Error::InvalidParameter(format!("column {column} is incomplete")))?;
        summarize(&values)
    }

    /// Recomputed mean and sample sd against the printed summary rows.
    pub fn check_summary(&self, tol: f64) -> Vec<TableCheck> {
        let mut out = Vec::new();
        for (label, row) in [("mean", &self.mean), ("sd", &self.sd)] {
            let Some(row) = row else { continue };
            for (column, &printed) in row {
                let Ok(s) = self.summary(column) else {
                    continue;
                };
                let computed = if label == "mean" { s.mean } else { s.sd };
                out.push(TableCheck {
                    row: label.to_string(),
                    column: column.clone(),
                    printed,
                    computed,
                    ok: (printed - computed).abs() <= tol,
                });
            }
        }
        out
    }
}
