use super::AutodiffError;

/// Dense `(batch, channel, time)` array stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3 {
    data: Vec<f64>,
    dims: [usize; 3],
}

impl Tensor3 {
    pub fn zeros(batch: usize, channels: usize, time: usize) -> Self {
        Self {
            data: vec![0.0; batch * channels * time],
            dims: [batch, channels, time],
        }
    }

    pub fn filled(batch: usize, channels: usize, time: usize, value: f64) -> Self {
        Self {
            data: vec![value; batch * channels * time],
            dims: [batch, channels, time],
        }
    }

    pub fn from_vec(dims: [usize; 3], data: Vec<f64>) -> Result<Self, AutodiffError> {
        let expected = dims[0] * dims[1] * dims[2];
        if data.len() != expected {
            return Err(AutodiffError::Dimension(format!(
                "tensor of dims {dims:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { data, dims })
    }

    /// Builds a single-batch tensor from channel rows of equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, AutodiffError> {
        let time = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != time) {
            return Err(AutodiffError::Dimension("ragged channel rows".into()));
        }
        let data = rows.iter().flatten().copied().collect();
        Self::from_vec([1, rows.len(), time], data)
    }

    #[inline]
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    #[inline]
    pub fn batch(&self) -> usize {
        self.dims[0]
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.dims[1]
    }

    #[inline]
    pub fn time(&self) -> usize {
        self.dims[2]
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    fn offset(&self, b: usize, c: usize, t: usize) -> usize {
        debug_assert!(b < self.dims[0] && c < self.dims[1] && t < self.dims[2]);
        (b * self.dims[1] + c) * self.dims[2] + t
    }

    #[inline]
    pub fn at(&self, b: usize, c: usize, t: usize) -> f64 {
        self.data[self.offset(b, c, t)]
    }

    #[inline]
    pub fn set(&mut self, b: usize, c: usize, t: usize, value: f64) {
        let i = self.offset(b, c, t);
        self.data[i] = value;
    }

    /// Contiguous time row for one `(batch, channel)` pair.
    pub fn row(&self, b: usize, c: usize) -> &[f64] {
        let start = self.offset(b, c, 0);
        &self.data[start..start + self.dims[2]]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            data: self.data.iter().map(|&v| f(v)).collect(),
            dims: self.dims,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.dims == other.dims
    }
}
