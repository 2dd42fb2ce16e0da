use super::SubstrateError;

/// Dense row-major array of `f64` values.
///
/// A tensor is an immutable value as far as the tape is concerned; the only
/// sanctioned mutation is an in-place optimizer update through [`data_mut`].
///
/// [`data_mut`]: Tensor::data_mut
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, validating the element count and finiteness.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, SubstrateError> {
        if shape.contains(&0) {
            return Err(SubstrateError::invalid("tensor", "zero-sized dimension"));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(SubstrateError::shape(
                "tensor",
                format!("shape {:?} needs {} values, got {}", shape, expected, data.len()),
            ));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(SubstrateError::NumericFault { op: "tensor" });
        }
        Ok(Tensor { shape, data })
    }

    /// Rank-1 tensor from a plain vector.
    pub fn vector(data: Vec<f64>) -> Result<Self, SubstrateError> {
        let n = data.len();
        Tensor::new(vec![n], data)
    }

    /// Rank-2 tensor in row-major order.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, SubstrateError> {
        Tensor::new(vec![rows, cols], data)
    }

    /// Single-element tensor of shape `[1]`.
    pub fn scalar(value: f64) -> Result<Self, SubstrateError> {
        Tensor::new(vec![1], vec![value])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    /// Unchecked construction for internal use; callers guarantee the length
    /// invariant and validate finiteness themselves.
    pub(crate) fn from_raw(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// The sole element of a single-element tensor.
    ///
    /// Panics when the tensor holds more than one value; callers use it only
    /// on scalars produced by reductions.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Euclidean norm over all elements.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}
