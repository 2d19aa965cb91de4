//! Right-censored survival data and its delimited-text format.
//!
//! The text format has a header row `time,event[,covariate...]`; times are
//! in years and `event` is `0` (censored) or `1` (event).

use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("missing required column `{0}`")]
    MissingColumn(&'static str),
    #[error("row {row}: {message}")]
    Row { row: usize, message: String },
    #[error("covariate dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Right-censored observations with a uniform covariate dimension.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SurvivalDataset {
    covariate_names: Vec<String>,
    times: Vec<f64>,
    events: Vec<bool>,
    /// Row-major, `len() * covariate_names.len()` values.
    covariates: Vec<f64>,
}

impl SurvivalDataset {
    pub fn new(covariate_names: Vec<String>) -> Self {
        Self {
            covariate_names,
            ..Default::default()
        }
    }

    /// Appends a row, checking the time and covariate dimension.
    pub fn push(&mut self, time: f64, event: bool, covariates: &[f64]) -> Result<(), DataError> {
        if covariates.len() != self.covariate_names.len() {
            return Err(DataError::Dimension {
                expected: self.covariate_names.len(),
                got: covariates.len(),
            });
        }
        if !(time > 0.0 && time.is_finite()) {
            return Err(DataError::Row {
                row: self.len() + 1,
                message: format!("time must be positive and finite, got {time}"),
            });
        }
        self.times.push(time);
        self.events.push(event);
        self.covariates.extend_from_slice(covariates);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn n_covariates(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn events(&self) -> &[bool] {
        &self.events
    }

    pub fn covariates(&self, row: usize) -> &[f64] {
        let p = self.n_covariates();
        &self.covariates[row * p..(row + 1) * p]
    }

    pub fn n_events(&self) -> usize {
        self.events.iter().filter(|&&e| e).count()
    }

    pub fn event_times(&self) -> Vec<f64> {
        self.times
            .iter()
            .zip(&self.events)
            .filter(|(_, &e)| e)
            .map(|(&t, _)| t)
            .collect()
    }

    pub fn max_time(&self) -> f64 {
        self.times.iter().copied().fold(0.0, f64::max)
    }

    pub fn rows(&self) -> impl Iterator<Item = (f64, bool, &[f64])> + '_ {
        (0..self.len()).map(move |i| (self.times[i], self.events[i], self.covariates(i)))
    }

    /// Concatenates datasets with identical covariate names.
    pub fn concat(parts: &[SurvivalDataset]) -> Result<Self, DataError> {
        let names = parts
            .first()
            .map(|d| d.covariate_names.clone())
            .unwrap_or_default();
        let mut out = SurvivalDataset::new(names);
        for part in parts {
            for (t, e, x) in part.rows() {
                out.push(t, e, x)?;
            }
        }
        Ok(out)
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self, DataError> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr.headers()?.clone();
        let find = |name: &'static str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or(DataError::MissingColumn(name))
        };
        let time_col = find("time")?;
        let event_col = find("event")?;
        let cov_cols: Vec<usize> = (0..headers.len())
            .filter(|&c| c != time_col && c != event_col)
            .collect();
        let names = cov_cols.iter().map(|&c| headers[c].to_string()).collect();
        let mut data = SurvivalDataset::new(names);
        let mut x = vec![0.0; cov_cols.len()];
        for (i, record) in rdr.records().enumerate() {
            // Row numbers count the header as row 1.
            let row = i + 2;
            let record = record?;
            let field = |c: usize| -> Result<f64, DataError> {
                let raw = record.get(c).unwrap_or("");
                raw.parse::<f64>().map_err(|_| DataError::Row {
                    row,
                    message: format!("column `{}`: cannot parse `{raw}` as a number", &headers[c]),
                })
            };
            let time = field(time_col)?;
            let event = match record.get(event_col).unwrap_or("") {
                "1" => true,
                "0" => false,
                other => {
                    return Err(DataError::Row {
                        row,
                        message: format!("event must be 0 or 1, got `{other}`"),
                    })
                }
            };
            for (slot, &c) in x.iter_mut().zip(&cov_cols) {
                *slot = field(c)?;
            }
            data.push(time, event, &x).map_err(|e| match e {
                DataError::Row { message, .. } => DataError::Row { row, message },
                other => other,
            })?;
        }
        Ok(data)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), DataError> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["time".to_string(), "event".to_string()];
        header.extend(self.covariate_names.iter().cloned());
        w.write_record(&header)?;
        for (t, e, x) in self.rows() {
            let mut rec = vec![t.to_string(), if e { "1" } else { "0" }.to_string()];
            rec.extend(x.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_round_trips() {
        let text = "time,event,arm\n1.5,1,0\n5,0,1\n0.25,1,1\n";
        let d = SurvivalDataset::read_csv(text.as_bytes()).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.covariate_names(), &["arm".to_string()]);
        assert_eq!(d.n_events(), 2);
        assert_eq!(d.covariates(1), &[1.0]);
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        assert_eq!(SurvivalDataset::read_csv(buf.as_slice()).unwrap(), d);
    }

    #[test]
    fn missing_event_column_is_named() {
        let err = SurvivalDataset::read_csv("time,status\n1,1\n".as_bytes()).unwrap_err();
        assert!(matches!(err, DataError::MissingColumn("event")));
        assert!(err.to_string().contains("event"));
    }

    #[test]
    fn bad_rows_report_their_row_number() {
        let err = SurvivalDataset::read_csv("time,event\n1,1\n-2,0\n".as_bytes()).unwrap_err();
        match err {
            DataError::Row { row, .. } => assert_eq!(row, 3),
            other => panic!("unexpected {other:?}"),
        }
        let err = SurvivalDataset::read_csv("time,event\n1,2\n".as_bytes()).unwrap_err();
        assert!(matches!(err, DataError::Row { row: 2, .. }));
        let err = SurvivalDataset::read_csv("time,event\nabc,1\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("row 2"));
    }

    #[test]
    fn header_only_is_an_empty_dataset() {
        let d = SurvivalDataset::read_csv("time,event\n".as_bytes()).unwrap();
        assert!(d.is_empty());
    }
}
