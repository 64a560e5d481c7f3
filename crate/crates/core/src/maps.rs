//! Binary and soft edge maps.

use crate::error::{shape_err, Result};
use crate::tensor::{Element, Tensor};

/// Binary edge map, row-major `height × width`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct EdgeMap {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl EdgeMap {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![false; width * height] }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(shape_err!(
                "{width}×{height} edge map needs {} values, got {}",
                width * height,
                data.len()
            ));
        }
        Ok(Self { width, height, data })
    }

    /// Builds a map with the listed `(row, col)` pixels set.
    pub fn from_points(width: usize, height: usize, points: &[(usize, usize)]) -> Result<Self> {
        let mut map = Self::new(width, height);
        for &(r, c) in points {
            if r >= height || c >= width {
                return Err(shape_err!("point ({r},{c}) outside {width}×{height} map"));
            }
            map.set(r, c, true);
        }
        Ok(map)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.data[row * self.width + col] = value;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    /// Positive pixels as `(row, col)` in row-major order.
    pub fn points(&self) -> Vec<(usize, usize)> {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &v)| v)
            .map(|(i, _)| (i / self.width, i % self.width))
            .collect()
    }

    /// The map as a `1×H×W` 0/1 tensor.
    pub fn to_tensor<T: Element>(&self) -> Tensor<T> {
        let data = self.data.iter().map(|&v| if v { T::one() } else { T::zero() }).collect();
        Tensor::from_vec(&[1, self.height, self.width], data).expect("non-empty map")
    }

    /// The map replicated into a `3×H×W` 0/1 image.
    pub fn to_rgb_tensor<T: Element>(&self) -> Tensor<T> {
        let plane: Vec<T> = self.data.iter().map(|&v| if v { T::one() } else { T::zero() }).collect();
        let mut data = Vec::with_capacity(plane.len() * 3);
        for _ in 0..3 {
            data.extend_from_slice(&plane);
        }
        Tensor::from_vec(&[3, self.height, self.width], data).expect("non-empty map")
    }
}

/// Per-pixel edge probabilities in [0, 1], row-major `height × width`.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftEdgeMap {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl SoftEdgeMap {
    pub fn from_vec(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(shape_err!(
                "{width}×{height} soft map needs {} values, got {}",
                width * height,
                data.len()
            ));
        }
        Ok(Self { width, height, data })
    }

    /// Reads a `1×H×W` tensor.
    pub fn from_tensor<T: Element>(t: &Tensor<T>) -> Result<Self> {
        let (c, h, w) = t.dims3()?;
        if c != 1 {
            return Err(shape_err!("soft edge map must have one channel, got {c}"));
        }
        Self::from_vec(w, h, t.data().iter().map(|v| v.as_f64() as f32).collect())
    }

    pub fn from_edge_map(map: &EdgeMap) -> Self {
        let data = map.data().iter().map(|&v| if v { 1.0 } else { 0.0 }).collect();
        Self { width: map.width(), height: map.height(), data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Pixels with probability `>= threshold`.
    pub fn binarize(&self, threshold: f64) -> EdgeMap {
        let data = self.data.iter().map(|&p| p as f64 >= threshold).collect();
        EdgeMap { width: self.width, height: self.height, data }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn points_round_trip() {
        let m = EdgeMap::from_points(4, 3, &[(0, 1), (2, 3)]).unwrap();
        assert_eq!(m.points(), vec![(0, 1), (2, 3)]);
        assert_eq!(m.count(), 2);
        assert!(EdgeMap::from_points(4, 3, &[(3, 0)]).is_err());
    }

    #[test]
    fn binarize_is_inclusive() {
        let s = SoftEdgeMap::from_vec(3, 1, vec![0.2, 0.5, 0.9]).unwrap();
        assert_eq!(s.binarize(0.5).data(), &[false, true, true]);
    }

    #[test]
    fn rgb_replication() {
        let m = EdgeMap::from_points(2, 2, &[(1, 0)]).unwrap();
        let t = m.to_rgb_tensor::<f32>();
        assert_eq!(t.shape(), &[3, 2, 2]);
        for c in 0..3 {
            assert_eq!(&t.data()[c * 4..c * 4 + 4], &[0.0, 0.0, 1.0, 0.0]);
        }
    }
}
