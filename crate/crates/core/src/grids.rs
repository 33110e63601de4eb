//! Angular, slab and radial grids, dense fields, and the two cut-off functions.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Midpoint grid on the circle of velocity angles.
#[derive(Debug, Clone, PartialEq)]
pub struct AngularGrid {
    count: usize,
    nodes: Vec<f64>,
    weight: f64,
}

impl AngularGrid {
    /// `count` midpoints `φ_j = −π + (j + 1/2)·2π/count`.
    pub fn new(count: usize) -> Result<Self> {
        if count == 0 {
            return Err(Error::Domain("angular grid needs at least one node".into()));
        }
        let weight = 2.0 * PI / count as f64;
        let nodes = (0..count)
            .map(|j| -PI + (j as f64 + 0.5) * weight)
            .collect();
        Ok(Self { count, nodes, weight })
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    /// Quadrature `Σ v_j · weight`.
    pub fn integrate(&self, values: &[f64]) -> Result<f64> {
        check_len(self.count, values.len())?;
        Ok(values.iter().sum::<f64>() * self.weight)
    }

    /// Index of the mirror direction `−φ_j`.
    pub fn reflect(&self, j: usize) -> usize {
        self.count - 1 - j
    }

    /// Interface angle `φ_{j+1/2} = −π + (j + 1)·weight`.
    pub fn interface(&self, j: usize) -> f64 {
        -PI + (j as f64 + 1.0) * self.weight
    }
}

/// `(1/2π) Σ v_j · weight` over the grid.
pub fn angular_mean(grid: &AngularGrid, values: &[f64]) -> Result<f64> {
    Ok(grid.integrate(values)? / (2.0 * PI))
}

/// Nodes of the truncated half-space `[0, L]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SlabGrid {
    nodes: Vec<f64>,
}

impl SlabGrid {
    /// `count` equally spaced nodes including both ends.
    pub fn uniform(length: f64, count: usize) -> Result<Self> {
        if !(length > 0.0) || count < 2 {
            return Err(Error::Domain(format!(
                "slab needs L > 0 and at least two nodes (L={length}, count={count})"
            )));
        }
        let h = length / (count - 1) as f64;
        let mut nodes: Vec<f64> = (0..count).map(|i| i as f64 * h).collect();
        nodes[count - 1] = length;
        Ok(Self { nodes })
    }

    /// Geometric spacing from `h_min` at `η = 0`, growing by `growth` per cell up to `h_max`.
    pub fn graded(length: f64, h_min: f64, growth: f64, h_max: f64) -> Result<Self> {
        Ok(Self {
            nodes: graded_nodes(0.0, length, h_min, growth, h_max)?,
        })
    }

    pub fn from_nodes(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 || nodes[0] != 0.0 {
            return Err(Error::Domain("slab nodes must start at exactly 0".into()));
        }
        check_increasing(&nodes)?;
        Ok(Self { nodes })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn length(&self) -> f64 {
        *self.nodes.last().unwrap()
    }
}

/// Radial nodes spanning `[r_minus, r_plus]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialGrid {
    r_minus: f64,
    r_plus: f64,
    nodes: Vec<f64>,
}

impl RadialGrid {
    pub fn uniform(r_minus: f64, r_plus: f64, count: usize) -> Result<Self> {
        check_radii(r_minus, r_plus)?;
        if count < 2 {
            return Err(Error::Domain("radial grid needs at least two nodes".into()));
        }
        let h = (r_plus - r_minus) / (count - 1) as f64;
        let mut nodes: Vec<f64> = (0..count).map(|i| r_minus + i as f64 * h).collect();
        nodes[count - 1] = r_plus;
        Ok(Self { r_minus, r_plus, nodes })
    }

    /// Fine spacing `h_min` at both walls, geometric growth toward the middle, capped at `h_max`.
    pub fn graded(r_minus: f64, r_plus: f64, h_min: f64, growth: f64, h_max: f64) -> Result<Self> {
        check_radii(r_minus, r_plus)?;
        let mid = 0.5 * (r_minus + r_plus);
        let lower = graded_nodes(r_minus, mid, h_min, growth, h_max)?;
        let upper = graded_nodes(0.0, r_plus - mid, h_min, growth, h_max)?;
        let mut nodes = lower;
        nodes.extend(upper.iter().rev().skip(1).map(|&x| r_plus - x));
        let n = nodes.len();
        nodes[0] = r_minus;
        nodes[n - 1] = r_plus;
        Ok(Self { r_minus, r_plus, nodes })
    }

    pub fn from_nodes(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::Domain("radial grid needs at least two nodes".into()));
        }
        check_increasing(&nodes)?;
        let r_minus = nodes[0];
        let r_plus = *nodes.last().unwrap();
        check_radii(r_minus, r_plus)?;
        Ok(Self { r_minus, r_plus, nodes })
    }

    pub fn r_minus(&self) -> f64 {
        self.r_minus
    }

    pub fn r_plus(&self) -> f64 {
        self.r_plus
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Dense row-major table over a (row grid × column grid) product.
#[derive(Debug, Clone, PartialEq)]
pub struct Field2D {
    rows: Vec<f64>,
    cols: Vec<f64>,
    values: Vec<f64>,
}

impl Field2D {
    pub fn zeros(rows: &[f64], cols: &[f64]) -> Self {
        Self {
            rows: rows.to_vec(),
            cols: cols.to_vec(),
            values: vec![0.0; rows.len() * cols.len()],
        }
    }

    pub fn from_fn(rows: &[f64], cols: &[f64], f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(rows.len() * cols.len());
        for &x in rows {
            for &y in cols {
                values.push(f(x, y));
            }
        }
        Self {
            rows: rows.to_vec(),
            cols: cols.to_vec(),
            values,
        }
    }

    pub fn from_values(rows: &[f64], cols: &[f64], values: Vec<f64>) -> Result<Self> {
        check_len(rows.len() * cols.len(), values.len())?;
        Ok(Self {
            rows: rows.to_vec(),
            cols: cols.to_vec(),
            values,
        })
    }

    pub fn rows(&self) -> &[f64] {
        &self.rows
    }

    pub fn cols(&self) -> &[f64] {
        &self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows.len(), self.cols.len())
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols.len() + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let n = self.cols.len();
        self.values[i * n + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.cols.len();
        &self.values[i * n..(i + 1) * n]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let n = self.cols.len();
        &mut self.values[i * n..(i + 1) * n]
    }

    /// Largest absolute entry.
    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `sup |self − other|`; the grids must have the same shape.
    pub fn sup_diff(&self, other: &Field2D) -> Result<f64> {
        check_len(self.values.len(), other.values.len())?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    /// Bilinear interpolation at `(x, y)` inside the bounding box.
    pub fn interpolate(&self, x: f64, y: f64) -> Result<f64> {
        let (i, tx) = locate(&self.rows, x)?;
        let (j, ty) = locate(&self.cols, y)?;
        let n = self.cols.len();
        let at = |a: usize, b: usize| self.values[a * n + b];
        let (i1, j1) = ((i + 1).min(self.rows.len() - 1), (j + 1).min(n - 1));
        Ok((1.0 - tx) * ((1.0 - ty) * at(i, j) + ty * at(i, j1))
            + tx * ((1.0 - ty) * at(i1, j) + ty * at(i1, j1)))
    }
}

/// Largest absolute entry of a field.
pub fn sup_norm(field: &Field2D) -> f64 {
    field.sup_norm()
}

/// Bilinear interpolation of a field at `point = (row coordinate, column coordinate)`.
pub fn interpolate(field: &Field2D, point: (f64, f64)) -> Result<f64> {
    field.interpolate(point.0, point.1)
}

/// Cell index `i` and fraction `t` with `x = (1−t)·nodes[i] + t·nodes[i+1]`.
///
/// A single-node axis returns `(0, 0)` when `x` equals that node.
pub fn locate(nodes: &[f64], x: f64) -> Result<(usize, f64)> {
    let n = nodes.len();
    if n == 0 || !(x >= nodes[0] && x <= nodes[n - 1]) {
        return Err(Error::Domain(format!(
            "point {x} outside [{}, {}]",
            nodes.first().copied().unwrap_or(f64::NAN),
            nodes.last().copied().unwrap_or(f64::NAN)
        )));
    }
    if n == 1 {
        return Ok((0, 0.0));
    }
    let i = match nodes.partition_point(|&v| v <= x) {
        0 => 0,
        k => (k - 1).min(n - 2),
    };
    Ok((i, (x - nodes[i]) / (nodes[i + 1] - nodes[i])))
}

/// Piecewise-linear interpolation, clamped to the end values outside the node range.
pub fn interp_linear(nodes: &[f64], values: &[f64], x: f64) -> f64 {
    let n = nodes.len();
    if x <= nodes[0] {
        return values[0];
    }
    if x >= nodes[n - 1] {
        return values[n - 1];
    }
    let k = nodes.partition_point(|&v| v <= x) - 1;
    let t = (x - nodes[k]) / (nodes[k + 1] - nodes[k]);
    values[k] + t * (values[k + 1] - values[k])
}

/// Linear interpolation in a periodic angle over a midpoint grid.
pub fn interp_periodic(grid: &AngularGrid, values: &[f64], phi: f64) -> f64 {
    let n = grid.count();
    let u = (phi + PI) / grid.weight() - 0.5;
    let k = u.floor();
    let t = u - k;
    let k = k as i64;
    let a = k.rem_euclid(n as i64) as usize;
    let b = (k + 1).rem_euclid(n as i64) as usize;
    (1.0 - t) * values[a] + t * values[b]
}

/// `∫_{x_i}^{x_last} y` for every node, from local cubic interpolants (fourth order on smooth data).
pub fn tail_integrals(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut out = vec![0.0; n];
    for i in (0..n.saturating_sub(1)).rev() {
        out[i] = out[i + 1] + interval_integral(x, y, i);
    }
    out
}

/// `∫_{x_i}^{x_{i+1}} y` using the cubic through the four nearest nodes (fewer near short grids).
fn interval_integral(x: &[f64], y: &[f64], i: usize) -> f64 {
    let n = x.len();
    let (lo, hi) = if n >= 4 {
        let lo = i.saturating_sub(1).min(n - 4);
        (lo, lo + 4)
    } else {
        (0, n)
    };
    let (a, b) = (x[i], x[i + 1]);
    let gl = crate::quad::gauss_legendre(4);
    let mut acc = 0.0;
    for (t, w) in gl.iter() {
        let s = 0.5 * (a + b) + 0.5 * (b - a) * t;
        let mut p = 0.0;
        for k in lo..hi {
            let mut l = 1.0;
            for m in lo..hi {
                if m != k {
                    l *= (s - x[m]) / (x[k] - x[m]);
                }
            }
            p += l * y[k];
        }
        acc += w * p;
    }
    0.5 * (b - a) * acc
}

/// C¹ ramp `1 − 3t² + 2t³` on `[0, 1]`, clamped outside.
fn smooth_ramp(t: f64) -> f64 {
    if t <= 0.0 {
        1.0
    } else if t >= 1.0 {
        0.0
    } else {
        1.0 - t * t * (3.0 - 2.0 * t)
    }
}

fn ramp_derivative(t: f64) -> f64 {
    if t <= 0.0 || t >= 1.0 {
        0.0
    } else {
        -6.0 * t * (1.0 - t)
    }
}

fn check_cutoff(mu: f64, d: f64) -> Result<()> {
    if !(mu >= 0.0) || !(d > 0.0) {
        return Err(Error::Domain(format!("cut-off needs mu >= 0 and d > 0 (mu={mu}, d={d})")));
    }
    Ok(())
}

/// Outer cut-off: 1 on `[0, d/2]`, 0 beyond `3d/4`.
pub fn cutoff_psi(mu: f64, d: f64) -> Result<f64> {
    check_cutoff(mu, d)?;
    Ok(smooth_ramp((mu - 0.5 * d) / (0.25 * d)))
}

/// Inner cut-off: 1 on `[0, d/4]`, 0 beyond `3d/8`.
pub fn cutoff_psi0(mu: f64, d: f64) -> Result<f64> {
    check_cutoff(mu, d)?;
    Ok(smooth_ramp((mu - 0.25 * d) / (0.125 * d)))
}

/// `dψ/dμ`.
pub fn cutoff_psi_derivative(mu: f64, d: f64) -> Result<f64> {
    check_cutoff(mu, d)?;
    Ok(ramp_derivative((mu - 0.5 * d) / (0.25 * d)) / (0.25 * d))
}

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension { expected, got });
    }
    Ok(())
}

fn check_radii(r_minus: f64, r_plus: f64) -> Result<()> {
    if !(r_minus > 0.0 && r_plus > r_minus) {
        return Err(Error::Domain(format!(
            "radii must satisfy 0 < r_minus < r_plus (got {r_minus}, {r_plus})"
        )));
    }
    Ok(())
}

fn check_increasing(nodes: &[f64]) -> Result<()> {
    if nodes.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Domain("grid nodes must be strictly increasing".into()));
    }
    Ok(())
}

fn graded_nodes(start: f64, end: f64, h_min: f64, growth: f64, h_max: f64) -> Result<Vec<f64>> {
    let length = end - start;
    if !(length > 0.0 && h_min > 0.0 && growth >= 1.0 && h_max >= h_min) {
        return Err(Error::Domain(format!(
            "graded grid needs length > 0, h_min > 0, growth >= 1, h_max >= h_min \
             (length={length}, h_min={h_min}, growth={growth}, h_max={h_max})"
        )));
    }
    let mut nodes = vec![start];
    let mut h = h_min;
    let mut x = start;
    loop {
        if x + h >= end - 0.5 * h {
            break;
        }
        x += h;
        nodes.push(x);
        h = (h * growth).min(h_max);
    }
    nodes.push(end);
    Ok(nodes)
}
