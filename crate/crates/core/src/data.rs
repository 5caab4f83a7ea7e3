//! Datasets and their CSV form.
//!
//! The header names the columns: `y`, `x1..xd`, and optionally `firm`,
//! `period` and `z1..zR`. Column order is free; the numbered families must be
//! contiguous from 1.

use std::io::Read;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontier::Observation;
use crate::samplers::ols;

/// Observations plus any contextual variables, row-aligned.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub observations: Vec<Observation>,
    /// One row of `z1..zR` per observation when present.
    pub context: Option<Vec<Vec<f64>>>,
}

/// Row filters applied while reading, never by default.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReadOptions {
    /// Skip rows whose output is zero or negative instead of failing.
    pub drop_nonpositive_y: bool,
}

/// What reading had to discard.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReadReport {
    /// File lines of rows skipped for a non-positive output.
    pub dropped_nonpositive_y: Vec<u64>,
}

struct Columns {
    y: usize,
    x: Vec<usize>,
    z: Vec<usize>,
    firm: Option<usize>,
    period: Option<usize>,
}

fn numbered(headers: &csv::StringRecord, prefix: char) -> Result<Vec<usize>> {
    let mut found: Vec<(usize, usize)> = Vec::new();
    for (col, name) in headers.iter().enumerate() {
        let name = name.trim();
        let Some(rest) = name.strip_prefix(prefix) else {
            continue;
        };
        if let Ok(j) = rest.parse::<usize>() {
            found.push((j, col));
        }
    }
    found.sort_unstable();
    for (pos, &(j, _)) in found.iter().enumerate() {
        if j != pos + 1 {
            return Err(Error::InvalidData {
                row: 1,
                msg: format!("columns {prefix}1..{prefix}{} must be numbered contiguously, missing {prefix}{}", found.len(), pos + 1),
            });
        }
    }
    Ok(found.into_iter().map(|(_, c)| c).collect())
}

fn locate(headers: &csv::StringRecord) -> Result<Columns> {
    let find = |name: &str| headers.iter().position(|h| h.trim().eq_ignore_ascii_case(name));
    let y = find("y").ok_or(Error::InvalidData { row: 1, msg: "missing output column `y`".into() })?;
    let x = numbered(headers, 'x')?;
    if x.is_empty() {
        return Err(Error::InvalidData { row: 1, msg: "missing input columns `x1..xd`".into() });
    }
    Ok(Columns {
        y,
        x,
        z: numbered(headers, 'z')?,
        firm: find("firm"),
        period: find("period"),
    })
}

fn field(rec: &csv::StringRecord, col: usize, line: u64) -> Result<&str> {
    rec.get(col).map(str::trim).ok_or_else(|| Error::InvalidData {
        row: line as usize,
        msg: format!("expected at least {} fields, found {}", col + 1, rec.len()),
    })
}

fn number(rec: &csv::StringRecord, col: usize, name: &str, line: u64) -> Result<f64> {
    let raw = field(rec, col, line)?;
    let v: f64 = raw.parse().map_err(|_| Error::InvalidData {
        row: line as usize,
        msg: format!("`{name}` is not a number: {raw:?}"),
    })?;
    if !v.is_finite() {
        return Err(Error::InvalidData { row: line as usize, msg: format!("`{name}` is not finite") });
    }
    Ok(v)
}

impl Dataset {
    pub fn new(observations: Vec<Observation>, context: Option<Vec<Vec<f64>>>) -> Result<Self> {
        let ds = Self { observations, context };
        ds.validate()?;
        Ok(ds)
    }

    /// Reads a headed CSV; error rows are reported by file line.
    pub fn from_csv<R: Read>(reader: R, opts: &ReadOptions) -> Result<(Self, ReadReport)> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let cols = locate(&headers)?;
        let mut observations = Vec::new();
        let mut context = Vec::new();
        let mut report = ReadReport::default();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            let y = number(&rec, cols.y, "y", line)?;
            if y <= 0.0 && opts.drop_nonpositive_y {
                report.dropped_nonpositive_y.push(line);
                continue;
            }
            let inputs = cols
                .x
                .iter()
                .enumerate()
                .map(|(j, &c)| number(&rec, c, &format!("x{}", j + 1), line))
                .collect::<Result<Vec<_>>>()?;
            let z = cols
                .z
                .iter()
                .enumerate()
                .map(|(j, &c)| number(&rec, c, &format!("z{}", j + 1), line))
                .collect::<Result<Vec<_>>>()?;
            let firm_id = match cols.firm {
                Some(c) => Some(field(&rec, c, line)?.to_string()),
                None => None,
            };
            let period = match cols.period {
                Some(c) => {
                    let raw = field(&rec, c, line)?;
                    Some(raw.parse::<i64>().map_err(|_| Error::InvalidData {
                        row: line as usize,
                        msg: format!("`period` is not an integer: {raw:?}"),
                    })?)
                }
                None => None,
            };
            let obs = Observation { inputs, output: y, firm_id, period };
            obs.validate(line as usize)?;
            observations.push(obs);
            context.push(z);
        }
        if observations.is_empty() {
            return Err(Error::InvalidData { row: 1, msg: "no data rows".into() });
        }
        let context = (!cols.z.is_empty()).then_some(context);
        Ok((Self::new(observations, context)?, report))
    }

    /// Writes the dataset back out in the same CSV layout.
    pub fn to_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let d = self.dim();
        let r = self.context.as_ref().map_or(0, |c| c[0].len());
        let has_firm = self.observations.iter().any(|o| o.firm_id.is_some());
        let has_period = self.observations.iter().any(|o| o.period.is_some());
        let mut head: Vec<String> = Vec::new();
        if has_firm {
            head.push("firm".into());
        }
        if has_period {
            head.push("period".into());
        }
        head.push("y".into());
        head.extend((1..=d).map(|j| format!("x{j}")));
        head.extend((1..=r).map(|j| format!("z{j}")));
        w.write_record(&head)?;
        for (i, o) in self.observations.iter().enumerate() {
            let mut row: Vec<String> = Vec::new();
            if has_firm {
                row.push(o.firm_id.clone().unwrap_or_default());
            }
            if has_period {
                row.push(o.period.map(|p| p.to_string()).unwrap_or_default());
            }
            row.push(o.output.to_string());
            row.extend(o.inputs.iter().map(|v| v.to_string()));
            if let Some(c) = &self.context {
                row.extend(c[i].iter().map(|v| v.to_string()));
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.observations.first() else {
            return Err(Error::InvalidData { row: 0, msg: "empty dataset".into() });
        };
        let d = first.inputs.len();
        for (i, o) in self.observations.iter().enumerate() {
            if o.inputs.len() != d {
                return Err(Error::InvalidData { row: i, msg: format!("expected {d} inputs, found {}", o.inputs.len()) });
            }
            o.validate(i)?;
        }
        if let Some(c) = &self.context {
            if c.len() != self.observations.len() {
                return Err(Error::LengthMismatch { expected: self.observations.len(), found: c.len() });
            }
            let r = c.first().map_or(0, Vec::len);
            if r == 0 || c.iter().any(|row| row.len() != r || row.iter().any(|v| !v.is_finite())) {
                return Err(Error::InvalidData { row: 0, msg: "contextual variables must be finite and equally long".into() });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.observations.first().map_or(0, |o| o.inputs.len())
    }

    pub fn inputs(&self) -> Vec<Vec<f64>> {
        self.observations.iter().map(|o| o.inputs.clone()).collect()
    }

    pub fn outputs(&self) -> Vec<f64> {
        self.observations.iter().map(|o| o.output).collect()
    }

    pub fn is_panel(&self) -> bool {
        self.observations.iter().all(|o| o.firm_id.is_some() && o.period.is_some())
    }

    fn retain(&mut self, keep: &[bool]) {
        let mut it = keep.iter();
        self.observations.retain(|_| *it.next().unwrap());
        if let Some(c) = &mut self.context {
            let mut it = keep.iter();
            c.retain(|_| *it.next().unwrap());
        }
    }

    /// Removes the given fraction of rows with the largest absolute residual
    /// from a log-log least-squares fit; returns the removed row indices.
    pub fn drop_top_residual_fraction(&mut self, fraction: f64) -> Result<Vec<usize>> {
        if !(0.0..1.0).contains(&fraction) {
            return Err(Error::Config(format!("residual fraction must lie in [0, 1), got {fraction}")));
        }
        let n = self.len();
        let drop = (fraction * n as f64).round() as usize;
        if drop == 0 {
            return Ok(Vec::new());
        }
        let d = self.dim();
        let design = DMatrix::from_fn(n, d + 1, |i, j| if j == 0 { 1.0 } else { self.observations[i].inputs[j - 1].ln() });
        let target = DVector::from_iterator(n, self.observations.iter().map(|o| o.output.ln()));
        let coef = ols(&design, &target)?;
        let resid = target - &design * coef;
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| resid[b].abs().total_cmp(&resid[a].abs()).then(a.cmp(&b)));
        let mut removed: Vec<usize> = order[..drop].to_vec();
        removed.sort_unstable();
        let mut keep = vec![true; n];
        for &i in &removed {
            keep[i] = false;
        }
        self.retain(&keep);
        Ok(removed)
    }
}
