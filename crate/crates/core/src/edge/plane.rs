use super::EdgeError;

/// Single-channel float image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Plane {
    pub fn new(width: usize, height: usize, value: f64) -> Self {
        Self { width, height, data: vec![value; width * height] }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self, EdgeError> {
        if data.len() != width * height {
            return Err(EdgeError::BufferSize { expected: width * height, got: data.len() });
        }
        Ok(Self { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
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

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Plane {
        Plane { width: self.width, height: self.height, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Sum of absolute horizontal and vertical neighbor differences.
    pub fn total_variation(&self) -> f64 {
        let mut tv = 0.0;
        for y in 0..self.height {
            for x in 0..self.width {
                let v = self.get(x, y);
                if x + 1 < self.width {
                    tv += (self.get(x + 1, y) - v).abs();
                }
                if y + 1 < self.height {
                    tv += (self.get(x, y + 1) - v).abs();
                }
            }
        }
        tv
    }

    pub fn threshold(&self, t: f64) -> BinaryMask {
        BinaryMask { width: self.width, height: self.height, data: self.data.iter().map(|&v| v > t).collect() }
    }
}

/// Binary raster mask.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![false; width * height] }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<bool>) -> Result<Self, EdgeError> {
        if data.len() != width * height {
            return Err(EdgeError::BufferSize { expected: width * height, got: data.len() });
        }
        Ok(Self { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [bool] {
        &mut self.data
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn none(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    fn check_same(&self, other: &BinaryMask) -> Result<(), EdgeError> {
        if (self.width, self.height) != (other.width, other.height) {
            return Err(EdgeError::DimensionMismatch {
                expected: (self.width, self.height),
                got: (other.width, other.height),
            });
        }
        Ok(())
    }

    pub fn and(&self, other: &BinaryMask) -> Result<BinaryMask, EdgeError> {
        self.check_same(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| *a && *b).collect();
        Ok(BinaryMask { width: self.width, height: self.height, data })
    }

    pub fn or(&self, other: &BinaryMask) -> Result<BinaryMask, EdgeError> {
        self.check_same(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| *a || *b).collect();
        Ok(BinaryMask { width: self.width, height: self.height, data })
    }

    pub fn not(&self) -> BinaryMask {
        BinaryMask { width: self.width, height: self.height, data: self.data.iter().map(|b| !b).collect() }
    }

    /// `true` when every set pixel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.data.len() == other.data.len() && self.data.iter().zip(&other.data).all(|(a, b)| !*a || *b)
    }

    pub fn to_plane(&self) -> Plane {
        Plane { width: self.width, height: self.height, data: self.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect() }
    }
}
