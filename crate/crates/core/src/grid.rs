//! Dense 2D scalar maps.
//!
//! [`Grid2D`] carries logits, probabilities, masks and gradients; [`MaskGrid`]
//! is the same storage restricted to `{0, 1}`. All reductions run in
//! row-major order so results are bit-reproducible.

use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result, Shape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGrid")]
pub struct Grid2D {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

#[derive(Deserialize)]
struct RawGrid {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl TryFrom<RawGrid> for Grid2D {
    type Error = Error;

    fn try_from(raw: RawGrid) -> Result<Self> {
        Grid2D::new(raw.height, raw.width, raw.data)
    }
}

impl Grid2D {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(param(format!(
                "grid dimensions must be positive, got {height}x{width}"
            )));
        }
        if data.len() != height * width {
            return Err(param(format!(
                "grid {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Self::filled(height, width, 0.0)
    }

    /// Builds a grid from equally sized rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != width) {
            return Err(param("ragged rows"));
        }
        Self::new(height, width, rows.concat())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> Shape {
        Shape(self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    /// Always false; grids hold at least one element.
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.width + col] = value;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Grid2D {
        Grid2D {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Elementwise combination of two grids of identical shape.
    pub fn zip_map(&self, other: &Grid2D, f: impl Fn(f64, f64) -> f64) -> Result<Grid2D> {
        check_shape(self.shape(), other.shape())?;
        Ok(Grid2D {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// Sequential row-major sum.
    pub fn reduce_sum(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, &x| acc + x)
    }

    pub fn sigmoid(&self) -> Grid2D {
        self.map(sigmoid)
    }

    /// Clamped inverse sigmoid, `ln(p / (1 - p))` with `p` clamped to `[eps, 1 - eps]`.
    pub fn logit(&self, eps: f64) -> Result<Grid2D> {
        if !(eps > 0.0 && eps < 0.5) {
            return Err(param(format!("logit eps must lie in (0, 0.5), got {eps}")));
        }
        Ok(self.map(|p| logit(p, eps)))
    }
}

pub(crate) fn check_shape(left: Shape, right: Shape) -> Result<()> {
    if left == right {
        Ok(())
    } else {
        Err(Error::Shape { left, right })
    }
}

/// Logistic function, branching on sign so neither tail overflows.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64, eps: f64) -> f64 {
    let p = p.clamp(eps, 1.0 - eps);
    (p / (1.0 - p)).ln()
}

/// Binary grid; every element is exactly 0 or 1.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct MaskGrid(Grid2D);

impl MaskGrid {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        Self::try_from(Grid2D::new(height, width, data)?)
    }

    pub fn from_bits(height: usize, width: usize, bits: &[bool]) -> Result<Self> {
        let data = bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        Ok(MaskGrid(Grid2D::new(height, width, data)?))
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Ok(MaskGrid(Grid2D::zeros(height, width)?))
    }

    pub fn ones(height: usize, width: usize) -> Result<Self> {
        Ok(MaskGrid(Grid2D::filled(height, width, 1.0)?))
    }

    pub fn as_grid(&self) -> &Grid2D {
        &self.0
    }

    pub fn into_grid(self) -> Grid2D {
        self.0
    }

    pub fn shape(&self) -> Shape {
        self.0.shape()
    }

    pub fn height(&self) -> usize {
        self.0.height
    }

    pub fn width(&self) -> usize {
        self.0.width
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn is_set(&self, idx: usize) -> bool {
        self.0.data[idx] == 1.0
    }

    pub fn count_ones(&self) -> usize {
        self.0.data.iter().filter(|&&v| v == 1.0).count()
    }

    pub fn foreground_ratio(&self) -> f64 {
        self.count_ones() as f64 / self.len() as f64
    }

    /// `1 - t` elementwise.
    pub fn inverted(&self) -> MaskGrid {
        MaskGrid(self.0.map(|v| 1.0 - v))
    }
}

impl TryFrom<Grid2D> for MaskGrid {
    type Error = Error;

    fn try_from(grid: Grid2D) -> Result<Self> {
        if let Some(pos) = grid.data.iter().position(|&v| v != 0.0 && v != 1.0) {
            return Err(param(format!(
                "mask value at index {pos} is {}, expected 0 or 1",
                grid.data[pos]
            )));
        }
        Ok(MaskGrid(grid))
    }
}

impl<'de> Deserialize<'de> for MaskGrid {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let grid = Grid2D::deserialize(d)?;
        MaskGrid::try_from(grid).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
// oracle values are quoted at full reference precision
#[allow(clippy::excessive_precision, clippy::approx_constant)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn g(rows: &[&[f64]]) -> Grid2D {
        Grid2D::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn zip_map_add() {
        let out = g(&[&[1.0, 2.0]]).zip_map(&g(&[&[3.0, 4.0]]), |a, b| a + b).unwrap();
        assert_eq!(out, g(&[&[4.0, 6.0]]));
    }

    #[test]
    fn zip_map_zero_annihilates() {
        let zeros = Grid2D::zeros(3, 3).unwrap();
        let b = Grid2D::new(3, 3, (0..9).map(|i| i as f64 - 4.5).collect()).unwrap();
        assert_eq!(zeros.zip_map(&b, |x, y| x * y).unwrap(), Grid2D::zeros(3, 3).unwrap());
    }

    #[test]
    fn zip_map_self_sub_is_zero() {
        let a = g(&[&[1.5, -2.0], &[0.25, 9.0]]);
        assert!(a.zip_map(&a, |x, y| x - y).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zip_map_shape_mismatch_names_both_shapes() {
        let err = Grid2D::zeros(2, 3)
            .unwrap()
            .zip_map(&Grid2D::zeros(3, 2).unwrap(), |a, _| a)
            .unwrap_err();
        assert_eq!(err.to_string(), "shape mismatch: 2x3 vs 3x2");
    }

    #[test]
    fn reduce_sum_examples() {
        assert_eq!(g(&[&[1.0, 2.0], &[3.0, 4.0]]).reduce_sum(), 10.0);
        assert_eq!(Grid2D::zeros(5, 7).unwrap().reduce_sum(), 0.0);
        assert_eq!(g(&[&[-3.25]]).reduce_sum(), -3.25);
    }

    #[test]
    fn sigmoid_values() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(40.0) - 1.0).abs() <= 1e-15);
        // mpmath: 1/(1+exp(0.5)) at 30 digits
        assert!((sigmoid(-0.5) - 0.377540668798145435361099434254).abs() < 1e-16);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
    }

    #[test]
    fn logit_values() {
        let half = g(&[&[0.5]]).logit(1e-7).unwrap();
        assert_eq!(half.data()[0], 0.0);
        // mpmath: ln(1e-7 / (1 - 1e-7))
        let low = g(&[&[0.0]]).logit(1e-7).unwrap();
        assert!((low.data()[0] - (-16.1180955509583148)).abs() < 1e-9);
    }

    #[test]
    fn logit_rejects_bad_eps() {
        let p = g(&[&[0.5]]);
        assert!(matches!(p.logit(0.0), Err(Error::Param(_))));
        assert!(matches!(p.logit(0.5), Err(Error::Param(_))));
    }

    #[test]
    fn construction_invariants() {
        assert!(Grid2D::new(0, 3, vec![]).is_err());
        assert!(Grid2D::new(2, 2, vec![0.0; 3]).is_err());
        assert!(MaskGrid::new(1, 2, vec![0.0, 0.5]).is_err());
        assert!(MaskGrid::new(1, 2, vec![0.0, 1.0]).is_ok());
    }

    proptest! {
        #[test]
        fn sum_is_linear(vals in prop::collection::vec(-1000i32..1000, 12), other in prop::collection::vec(-1000i32..1000, 12)) {
            // integer-valued entries keep every partial sum exact
            let a = Grid2D::new(3, 4, vals.into_iter().map(f64::from).collect()).unwrap();
            let b = Grid2D::new(3, 4, other.into_iter().map(f64::from).collect()).unwrap();
            let sum = a.zip_map(&b, |x, y| x + y).unwrap();
            prop_assert_eq!(sum.shape(), a.shape());
            prop_assert_eq!(sum.reduce_sum(), a.reduce_sum() + b.reduce_sum());
        }

        #[test]
        fn sigmoid_in_open_unit_interval(z in -30.0f64..30.0) {
            let p = sigmoid(z);
            prop_assert!(p > 0.0 && p < 1.0);
        }

        #[test]
        fn logit_inverts_sigmoid(z in -5.0f64..5.0) {
            prop_assert!((logit(sigmoid(z), 1e-7) - z).abs() < 1e-9);
        }
    }
}
