use ndarray::Array2;

use super::{ColumnOrigin, Dataset, RawTable, RawValues};
use crate::error::Result;
use crate::scalar::Scalar;

/// One-hot encodes categorical columns and standardizes numeric ones.
///
/// Statistics are taken over the whole table. Numeric columns get mean 0 and
/// sample standard deviation 1; zero-variance columns become all zeros.
/// Categories are ordered by first appearance.
pub fn preprocess<F: Scalar>(raw: &RawTable) -> Result<Dataset<F>> {
    let n = raw.n_rows();
    let mut out_cols: Vec<Vec<f64>> = Vec::new();
    let mut meta = Vec::new();

    for col in &raw.columns {
        match &col.values {
            RawValues::Numeric(v) => {
                out_cols.push(standardize(v));
                meta.push(ColumnOrigin::NumericStandardized {
                    source: col.name.clone(),
                });
            }
            RawValues::Categorical(v) => {
                let mut categories: Vec<&str> = Vec::new();
                for s in v {
                    if !categories.contains(&s.as_str()) {
                        categories.push(s);
                    }
                }
                for cat in categories {
                    out_cols.push(
                        v.iter()
                            .map(|s| if s == cat { 1.0 } else { 0.0 })
                            .collect(),
                    );
                    meta.push(ColumnOrigin::OneHot {
                        source: col.name.clone(),
                        category: cat.to_owned(),
                    });
                }
            }
        }
    }

    let d = out_cols.len();
    let features = Array2::from_shape_fn((n, d), |(i, j)| F::lit(out_cols[j][i]));
    Dataset::new(features, raw.labels.clone(), raw.class_names.len(), meta)?
        .with_class_names(raw.class_names.clone())
}

fn standardize(v: &[f64]) -> Vec<f64> {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let std = var.sqrt();
    if std == 0.0 || !std.is_finite() {
        return vec![0.0; v.len()];
    }
    v.iter().map(|x| (x - mean) / std).collect()
}
