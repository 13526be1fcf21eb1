//! Dataset ingestion and seeded train/validation/test splitting.
//!
//! Datasets arrive as headered CSV files. One column is the regression
//! target (the last one unless named); every other column becomes a
//! feature, addressed as `x_<j>` in header order. Cells must be numeric;
//! rows containing non-finite numbers are dropped and counted. A split
//! shuffles the row indices with a seeded generator and deals them out as
//! one half train, one quarter validation, and the remaining quarter test.

use crate::expr::FeatureMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("failed to read {path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("{path} has no usable data rows")]
    Empty { path: String },
    #[error("target column '{name}' not found; available columns: {available}")]
    MissingTarget { name: String, available: String },
    #[error("non-numeric value '{value}' at data row {row}, column '{column}'")]
    NonNumeric {
        value: String,
        row: usize,
        column: String,
    },
    #[error("dataset has a target column but no feature columns")]
    NoFeatures,
    #[error("dataset needs at least {needed} rows to split, found {found}")]
    TooSmall { found: usize, needed: usize },
}

/// A loaded dataset: finite feature columns plus a finite target vector.
#[derive(Debug, Clone)]
pub struct Dataset {
    feature_names: Vec<String>,
    target_name: String,
    columns: Vec<Vec<f64>>,
    y: Vec<f64>,
    rejected_rows: usize,
}

impl Dataset {
    /// Builds a dataset from already-parsed columns. All columns and the
    /// target must be equally long, non-empty, and finite.
    pub fn new(
        feature_names: Vec<String>,
        target_name: String,
        columns: Vec<Vec<f64>>,
        y: Vec<f64>,
    ) -> Dataset {
        assert_eq!(feature_names.len(), columns.len(), "one name per column");
        assert!(!columns.is_empty(), "at least one feature column");
        assert!(!y.is_empty(), "at least one row");
        for column in &columns {
            assert_eq!(column.len(), y.len(), "columns of equal length");
            assert!(column.iter().all(|v| v.is_finite()), "finite features");
        }
        assert!(y.iter().all(|v| v.is_finite()), "finite targets");
        Dataset {
            feature_names,
            target_name,
            columns,
            y,
            rejected_rows: 0,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn target_name(&self) -> &str {
        &self.target_name
    }

    /// Rows dropped during loading because a numeric cell was not finite.
    pub fn rejected_rows(&self) -> usize {
        self.rejected_rows
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    /// Features and targets of the given rows, in the given order.
    pub fn gather(&self, indices: &[usize]) -> (FeatureMatrix, Vec<f64>) {
        let columns = self
            .columns
            .iter()
            .map(|column| indices.iter().map(|&i| column[i]).collect())
            .collect();
        let y = indices.iter().map(|&i| self.y[i]).collect();
        (FeatureMatrix::from_columns(columns), y)
    }
}

/// Loads a headered CSV file. `target` names the target column; when
/// omitted the last column is the target.
pub fn load_csv(path: impl AsRef<Path>, target: Option<&str>) -> Result<Dataset, DataError> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let csv_err = |source| DataError::Csv {
        path: display.clone(),
        source,
    };
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(str::to_string)
        .collect();
    let target_index = match target {
        Some(name) => {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| DataError::MissingTarget {
                    name: name.to_string(),
                    available: headers.join(", "),
                })?
        }
        None => headers.len().saturating_sub(1),
    };
    if headers.len() < 2 {
        return Err(DataError::NoFeatures);
    }
    let feature_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != target_index)
        .map(|(_, h)| h.clone())
        .collect();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); feature_names.len()];
    let mut y = Vec::new();
    let mut rejected_rows = 0;
    for (row_index, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        let mut features = Vec::with_capacity(feature_names.len());
        let mut target_value = 0.0;
        for (cell_index, cell) in record.iter().enumerate() {
            let value: f64 = cell.trim().parse().map_err(|_| DataError::NonNumeric {
                value: cell.to_string(),
                row: row_index + 1,
                column: headers
                    .get(cell_index)
                    .cloned()
                    .unwrap_or_else(|| format!("#{cell_index}")),
            })?;
            if cell_index == target_index {
                target_value = value;
            } else {
                features.push(value);
            }
        }
        if features.iter().all(|v| v.is_finite()) && target_value.is_finite() {
            for (column, value) in columns.iter_mut().zip(features) {
                column.push(value);
            }
            y.push(target_value);
        } else {
            rejected_rows += 1;
        }
    }
    if y.is_empty() {
        return Err(DataError::Empty { path: display });
    }
    Ok(Dataset {
        feature_names,
        target_name: headers[target_index].clone(),
        columns,
        y,
        rejected_rows,
    })
}

/// Row indices of one train/validation/test partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffles the dataset's row indices with the seed and deals out
/// `n/2` train, `n/4` validation, and remaining test rows.
pub fn split(dataset: &Dataset, seed: u64) -> Result<Splits, DataError> {
    let n = dataset.n_rows();
    if n < 4 {
        return Err(DataError::TooSmall {
            found: n,
            needed: 4,
        });
    }
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    let n_train = n / 2;
    let n_val = n / 4;
    let validation = indices.split_off(n_train + n_val);
    // `indices` now holds train+validation; `validation` holds the tail,
    // which is the test partition.
    let test = validation;
    let val = indices.split_off(n_train);
    Ok(Splits {
        train: indices,
        validation: val,
        test,
    })
}

/// Materialized features and targets for each partition.
#[derive(Debug, Clone)]
pub struct SplitData {
    pub train_x: FeatureMatrix,
    pub train_y: Vec<f64>,
    pub validation_x: FeatureMatrix,
    pub validation_y: Vec<f64>,
    pub test_x: FeatureMatrix,
    pub test_y: Vec<f64>,
}

/// Splits and gathers in one step.
pub fn prepare(dataset: &Dataset, seed: u64) -> Result<SplitData, DataError> {
    let splits = split(dataset, seed)?;
    let (train_x, train_y) = dataset.gather(&splits.train);
    let (validation_x, validation_y) = dataset.gather(&splits.validation);
    let (test_x, test_y) = dataset.gather(&splits.test);
    Ok(SplitData {
        train_x,
        train_y,
        validation_x,
        validation_y,
        test_x,
        test_y,
    })
}
