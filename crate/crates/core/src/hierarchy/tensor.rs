use crate::error::{Error, Result};

/// Dense `(channels, height, width)` grid of `f32`, stored channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorMap {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl TensorMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Config(format!(
                "tensor data has {} values, shape {channels}x{height}x{width}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Model("non-finite tensor value".into()));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::filled(channels, height, width, 0.0)
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    /// Planar 8-bit samples, one plane per channel.
    pub fn from_u8(channels: usize, height: usize, width: usize, samples: &[u8]) -> Result<Self> {
        Self::new(channels, height, width, samples.iter().map(|&v| v as f32).collect())
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn index(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.index(c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        let i = self.index(c, y, x);
        self.data[i] = v;
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    /// Channels `range` as a new tensor.
    pub fn slice_channels(&self, range: std::ops::Range<usize>) -> Self {
        let n = self.height * self.width;
        Self {
            channels: range.len(),
            height: self.height,
            width: self.width,
            data: self.data[range.start * n..range.end * n].to_vec(),
        }
    }

    /// Values rounded and clipped to `0..=255`.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| v.round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `height x width` window at `(y0, x0)`; out-of-range rows and columns
    /// are mirrored back inside (reflection without repeating the edge).
    pub fn crop_mirrored(&self, y0: usize, x0: usize, height: usize, width: usize) -> Self {
        let mut out = Self::zeros(self.channels, height, width);
        for c in 0..self.channels {
            for y in 0..height {
                let sy = mirror(y0 + y, self.height);
                for x in 0..width {
                    let sx = mirror(x0 + x, self.width);
                    out.set(c, y, x, self.get(c, sy, sx));
                }
            }
        }
        out
    }

    /// Copies the part of `src` that fits into `self` at `(y0, x0)`.
    pub fn paste(&mut self, src: &TensorMap, y0: usize, x0: usize) {
        let h = src.height.min(self.height.saturating_sub(y0));
        let w = src.width.min(self.width.saturating_sub(x0));
        for c in 0..self.channels.min(src.channels) {
            for y in 0..h {
                for x in 0..w {
                    self.set(c, y0 + y, x0 + x, src.get(c, y, x));
                }
            }
        }
    }
}

/// Reflects index `i` into `0..n`: `n, n+1, ...` map to `n-2, n-3, ...`.
pub fn mirror(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let r = i % period;
    if r < n {
        r
    } else {
        period - r
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shape_and_nan() {
        assert!(TensorMap::new(1, 2, 2, vec![0.0; 3]).is_err());
        assert!(TensorMap::new(1, 1, 1, vec![f32::NAN]).is_err());
    }

    #[test]
    fn mirror_reflects() {
        let got: Vec<usize> = (0..9).map(|i| mirror(i, 4)).collect();
        assert_eq!(got, vec![0, 1, 2, 3, 2, 1, 0, 1, 2]);
        assert_eq!(mirror(5, 1), 0);
    }

    #[test]
    fn crop_and_paste() {
        let t = TensorMap::new(1, 2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let c = t.crop_mirrored(0, 1, 3, 3);
        assert_eq!(c.data(), &[2.0, 3.0, 2.0, 5.0, 6.0, 5.0, 2.0, 3.0, 2.0]);
        let mut back = TensorMap::zeros(1, 2, 3);
        back.paste(&t.crop_mirrored(0, 0, 4, 4), 0, 0);
        assert_eq!(back, t);
    }
}
