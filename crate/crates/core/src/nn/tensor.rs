use super::{NnError, Real};

/// Dense NHWC tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4<T> {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<T>,
}

impl<T: Real> Tensor4<T> {
    pub fn zeros(n: usize, h: usize, w: usize, c: usize) -> Self {
        Self {
            n,
            h,
            w,
            c,
            data: vec![T::zero(); n * h * w * c],
        }
    }

    pub fn from_vec(n: usize, h: usize, w: usize, c: usize, data: Vec<T>) -> Result<Self, NnError> {
        if data.len() != n * h * w * c {
            return Err(NnError::Shape(format!(
                "{} values for a {n}x{h}x{w}x{c} tensor",
                data.len()
            )));
        }
        Ok(Self { n, h, w, c, data })
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.n, self.h, self.w, self.c)
    }

    pub fn item_len(&self) -> usize {
        self.h * self.w * self.c
    }

    /// Values of sample `i`.
    pub fn item(&self, i: usize) -> &[T] {
        let len = self.item_len();
        &self.data[i * len..(i + 1) * len]
    }

    pub fn item_mut(&mut self, i: usize) -> &mut [T] {
        let len = self.item_len();
        &mut self.data[i * len..(i + 1) * len]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Stack equally shaped samples.
    pub fn stack(h: usize, w: usize, c: usize, items: &[Vec<T>]) -> Result<Self, NnError> {
        let mut data = Vec::with_capacity(items.len() * h * w * c);
        for it in items {
            if it.len() != h * w * c {
                return Err(NnError::Shape(format!(
                    "sample of {} values in a batch of {h}x{w}x{c}",
                    it.len()
                )));
            }
            data.extend_from_slice(it);
        }
        Self::from_vec(items.len(), h, w, c, data)
    }

    pub fn cast<U: Real>(&self) -> Tensor4<U> {
        Tensor4 {
            n: self.n,
            h: self.h,
            w: self.w,
            c: self.c,
            data: self.data.iter().map(|v| U::of(v.f64())).collect(),
        }
    }
}
