//! Dense row-major 2-D tensor of `f64`.

use super::NnError;
use ndarray::Array2;

/// A rows×cols matrix. All forward operations map finite inputs to finite
/// outputs; 64-bit precision throughout.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor2 {
    data: Array2<f64>,
}

impl Tensor2 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            data: Array2::zeros((rows, cols)),
        }
    }

    pub fn from_vec(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self, NnError> {
        if values.len() != rows * cols {
            return Err(NnError::ShapeMismatch {
                op: "from_vec",
                detail: format!("{rows}×{cols} needs {} values, got {}", rows * cols, values.len()),
            });
        }
        Ok(Self {
            data: Array2::from_shape_vec((rows, cols), values).expect("length checked"),
        })
    }

    /// Build from nested rows; rows must be equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, NnError> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(NnError::ShapeMismatch {
                op: "from_rows",
                detail: "ragged rows".to_string(),
            });
        }
        let mut values = Vec::with_capacity(r * c);
        for row in rows {
            values.extend_from_slice(row);
        }
        Self::from_vec(r, c, values)
    }

    /// A 1×n row vector.
    pub fn row(values: &[f64]) -> Self {
        Self {
            data: Array2::from_shape_vec((1, values.len()), values.to_vec()).expect("row"),
        }
    }

    /// An n×1 column vector.
    pub fn column(values: &[f64]) -> Self {
        Self {
            data: Array2::from_shape_vec((values.len(), 1), values.to_vec()).expect("column"),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            data: Array2::eye(n),
        }
    }

    pub(crate) fn from_array(data: Array2<f64>) -> Self {
        Self { data }
    }

    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn cols(&self) -> usize {
        self.data.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows(), self.cols())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[(r, c)]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[(r, c)] = v;
    }

    /// Row-major value slice.
    pub fn values(&self) -> &[f64] {
        self.data.as_slice().expect("standard layout")
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        self.data.as_slice_mut().expect("standard layout")
    }

    pub(crate) fn array(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn all_finite(&self) -> bool {
        self.values().iter().all(|v| v.is_finite())
    }

    /// Largest absolute elementwise difference; shapes must match.
    pub fn max_abs_diff(&self, other: &Tensor2) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.values()
            .iter()
            .zip(other.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl From<Array2<f64>> for Tensor2 {
    fn from(data: Array2<f64>) -> Self {
        Self { data }
    }
}
