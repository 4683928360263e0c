//! Binary and probability masks, row-major.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl BinaryMask {
    /// Any nonzero sample counts as blade.
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Config(format!(
                "mask data has {} samples, expected {height}x{width}",
                data.len()
            )));
        }
        let data = data.into_iter().map(|v| (v != 0) as u8).collect();
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: bool) -> Self {
        Self {
            height,
            width,
            data: vec![value as u8; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x) as u8);
            }
        }
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.width + x] = v as u8;
    }

    pub fn count(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.width, self.height, |y, x| self.get(x, y))
    }

    /// True when every blade pixel of `self` is blade in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.shape() == other.shape() && self.data.iter().zip(&other.data).all(|(&a, &b)| a <= b)
    }

    /// Pixels that differ between two equally shaped masks.
    pub fn difference_count(&self, other: &BinaryMask) -> usize {
        self.data.iter().zip(&other.data).filter(|(a, b)| a != b).count()
    }

    /// 0 / 255 samples for 8-bit image output.
    pub fn to_gray(&self) -> Vec<u8> {
        self.data.iter().map(|&v| v * 255).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMask {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ProbabilityMask {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Config(format!(
                "probability data has {} samples, expected {height}x{width}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Config(format!("probability {bad} outside [0, 1]")));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, p: f32) -> Result<Self> {
        Self::new(height, width, vec![p; height * width])
    }

    /// Decodes 16-bit samples as `v / 65535`.
    pub fn from_u16(height: usize, width: usize, samples: &[u16]) -> Result<Self> {
        Self::new(height, width, samples.iter().map(|&v| v as f32 / 65535.0).collect())
    }

    pub fn to_u16(&self) -> Vec<u16> {
        self.data.iter().map(|&p| (p * 65535.0).round() as u16).collect()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Blade where the probability strictly exceeds `tau`.
    pub fn threshold(&self, tau: f32) -> BinaryMask {
        BinaryMask {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&p| (p > tau) as u8).collect(),
        }
    }
}

impl From<&BinaryMask> for ProbabilityMask {
    fn from(m: &BinaryMask) -> Self {
        Self {
            height: m.height,
            width: m.width,
            data: m.data.iter().map(|&v| v as f32).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binarizes_and_validates() {
        let m = BinaryMask::new(1, 3, vec![0, 7, 255]).unwrap();
        assert_eq!(m.data(), &[0, 1, 1]);
        assert!(BinaryMask::new(2, 2, vec![0; 3]).is_err());
        assert!(ProbabilityMask::new(1, 1, vec![1.5]).is_err());
        assert!(ProbabilityMask::new(1, 1, vec![f32::NAN]).is_err());
    }

    #[test]
    fn threshold_is_strict() {
        let p = ProbabilityMask::new(1, 3, vec![0.2, 0.255, 0.3]).unwrap();
        assert_eq!(p.threshold(0.255).data(), &[0, 0, 1]);
    }

    #[test]
    fn u16_round_trip() {
        let samples = vec![0u16, 1, 32768, 65535];
        let p = ProbabilityMask::from_u16(2, 2, &samples).unwrap();
        assert_eq!(p.to_u16(), samples);
    }

    #[test]
    fn transpose_twice_is_identity() {
        let m = BinaryMask::from_fn(3, 5, |y, x| (y * 7 + x) % 3 == 0);
        assert_eq!(m.transpose().shape(), (5, 3));
        assert_eq!(m.transpose().transpose(), m);
    }
}
