use std::path::Path;

use crate::error::{Error, Result};

const STD_FLOOR: f64 = 1e-8;

/// Binary-labelled design matrix, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
}

impl LabeledDataset {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<u8>) -> Result<Self> {
        if features.is_empty() || features.len() != labels.len() {
            return Err(Error::InvalidConfig("dataset needs one label per non-empty row".into()));
        }
        let p = features[0].len();
        if features.iter().any(|r| r.len() != p) {
            return Err(Error::InvalidConfig("dataset rows differ in length".into()));
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(Error::InvalidConfig("labels must be 0 or 1".into()));
        }
        Ok(LabeledDataset { features, labels })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn p(&self) -> usize {
        self.features[0].len()
    }

    /// Deterministic hold-out: every fifth row (index 4, 9, ...) goes to the
    /// test split.
    pub fn split_train_test(&self) -> (LabeledDataset, LabeledDataset) {
        let mut train = (Vec::new(), Vec::new());
        let mut test = (Vec::new(), Vec::new());
        for (i, (x, &y)) in self.features.iter().zip(&self.labels).enumerate() {
            let dst = if i % 5 == 4 { &mut test } else { &mut train };
            dst.0.push(x.clone());
            dst.1.push(y);
        }
        (
            LabeledDataset {
                features: train.0,
                labels: train.1,
            },
            LabeledDataset {
                features: test.0,
                labels: test.1,
            },
        )
    }

    /// Z-scores every column; columns with spread below the floor become 0.
    pub fn standardize(&mut self) {
        let n = self.n() as f64;
        for j in 0..self.p() {
            let mean = self.features.iter().map(|r| r[j]).sum::<f64>() / n;
            let var = self.features.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            for r in self.features.iter_mut() {
                r[j] = if sd < STD_FLOOR { 0.0 } else { (r[j] - mean) / sd };
            }
        }
    }
}

fn parse_label(tok: &str) -> Option<u8> {
    match tok {
        "R" | "b" | "0" => Some(0),
        "M" | "g" | "1" => Some(1),
        _ => tok.parse::<f64>().ok().and_then(|v| {
            if v == 0.0 {
                Some(0)
            } else if v == 1.0 {
                Some(1)
            } else {
                None
            }
        }),
    }
}

/// Parses UCI-style comma-separated rows: numeric features then one label.
/// A first row whose feature fields are not all numeric is taken as a
/// header. Rows and columns in errors are 1-based.
pub fn parse_dataset(text: &str) -> Result<LabeledDataset> {
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut width: Option<usize> = None;
    let mut seen_first = false;
    for (idx, line) in text.lines().enumerate() {
        let row = idx + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if !seen_first {
            seen_first = true;
            let n = fields.len();
            if n >= 2 && fields[..n - 1].iter().any(|f| f.parse::<f64>().is_err()) {
                continue;
            }
        }
        match width {
            None => {
                if fields.len() < 2 {
                    return Err(Error::Ingestion {
                        row,
                        column: fields.len(),
                        message: "need at least one feature and a label".into(),
                    });
                }
                width = Some(fields.len());
            }
            Some(w) if w != fields.len() => {
                return Err(Error::Ingestion {
                    row,
                    column: fields.len().min(w) + 1,
                    message: format!("expected {w} columns, found {}", fields.len()),
                });
            }
            _ => {}
        }
        let (label_tok, feats) = fields.split_last().expect("non-empty row");
        let mut xs = Vec::with_capacity(feats.len());
        for (j, f) in feats.iter().enumerate() {
            let v: f64 = f.parse().map_err(|_| Error::Ingestion {
                row,
                column: j + 1,
                message: format!("'{f}' is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Ingestion {
                    row,
                    column: j + 1,
                    message: "missing or non-finite value".into(),
                });
            }
            xs.push(v);
        }
        let label = parse_label(label_tok).ok_or_else(|| Error::Ingestion {
            row,
            column: fields.len(),
            message: format!("unknown label '{label_tok}'"),
        })?;
        features.push(xs);
        labels.push(label);
    }
    if features.is_empty() {
        return Err(Error::Ingestion {
            row: 0,
            column: 0,
            message: "no data rows".into(),
        });
    }
    let mut data = LabeledDataset { features, labels };
    data.standardize();
    Ok(data)
}

pub fn load_dataset(path: &Path) -> Result<LabeledDataset> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_dataset(&text)
}
