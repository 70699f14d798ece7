use super::matrix::C64;

/// Fixed-width complex state vectors stored contiguously, one per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSeries {
    width: usize,
    data: Vec<C64>,
}

impl StateSeries {
    pub fn with_capacity(width: usize, len: usize) -> Self {
        Self {
            width,
            data: Vec::with_capacity(width * len),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        if self.width == 0 {
            0
        } else {
            self.data.len() / self.width
        }
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn push(&mut self, state: &[C64]) {
        assert_eq!(state.len(), self.width);
        self.data.extend_from_slice(state);
    }

    pub fn get(&self, k: usize) -> &[C64] {
        &self.data[k * self.width..(k + 1) * self.width]
    }

    pub fn last(&self) -> &[C64] {
        self.get(self.len() - 1)
    }

    pub fn iter(&self) -> impl Iterator<Item = &[C64]> {
        self.data.chunks_exact(self.width)
    }

    /// Keeps every `stride`-th state starting at 0.
    pub fn strided(&self, stride: usize) -> Self {
        let mut out = Self::with_capacity(self.width, self.len() / stride + 1);
        for k in (0..self.len()).step_by(stride) {
            out.push(self.get(k));
        }
        out
    }

    /// Component `i` of every state.
    pub fn component(&self, i: usize) -> Vec<C64> {
        self.iter().map(|s| s[i]).collect()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.width, other.width);
        assert_eq!(self.data.len(), other.data.len());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}
