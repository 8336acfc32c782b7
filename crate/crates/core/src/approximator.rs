//! Q-function approximators: a two-layer ReLU network `f`, its local
//! linearization `f0` with activation patterns frozen at initialization, and a
//! plain linear model.
//!
//! The trainable parameter vector is the row-major flattening of the hidden
//! weights `W` (one row `w_r` per neuron). Output signs `b_r` are fixed.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::env::FeatureMap;
use crate::error::{Error, Result};

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_dim(expected: usize, phi: &[f64]) -> Result<()> {
    if phi.len() == expected {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "feature has dimension {}, expected {expected}",
            phi.len()
        )))
    }
}

/// `f(theta; phi) = m^{-1/2} sum_r b_r max(0, w_r . phi)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoLayerReluNet {
    width: usize,
    dim: usize,
    output_signs: Vec<f64>,
    weights: Vec<f64>,
    init_weights: Vec<f64>,
}

impl TwoLayerReluNet {
    /// Random initialization: `b_r` uniform on {-1, +1}, `w_r ~ N(0, I_d / d)`.
    pub fn init<R: Rng + ?Sized>(width: usize, dim: usize, rng: &mut R) -> Result<Self> {
        if width == 0 || dim == 0 {
            return Err(Error::InvalidInput(format!(
                "width and dimension must be positive (m={width}, d={dim})"
            )));
        }
        let output_signs = (0..width)
            .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
            .collect();
        let normal = Normal::new(0.0, (1.0 / dim as f64).sqrt()).expect("finite std");
        let weights: Vec<f64> = (0..width * dim).map(|_| normal.sample(rng)).collect();
        Ok(TwoLayerReluNet {
            width,
            dim,
            output_signs,
            init_weights: weights.clone(),
            weights,
        })
    }

    /// Builds a net from explicit parameters; `weights` becomes the frozen
    /// initialization as well.
    pub fn from_parts(output_signs: Vec<f64>, weights: Vec<f64>, dim: usize) -> Result<Self> {
        let width = output_signs.len();
        if output_signs.iter().any(|&b| b != 1.0 && b != -1.0) {
            return Err(Error::InvalidInput("output signs must be +1 or -1".into()));
        }
        if width == 0 || dim == 0 || weights.len() != width * dim {
            return Err(Error::InvalidInput(format!(
                "expected {}x{} weights, got {}",
                width,
                dim,
                weights.len()
            )));
        }
        Ok(TwoLayerReluNet {
            width,
            dim,
            output_signs,
            init_weights: weights.clone(),
            weights,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn output_signs(&self) -> &[f64] {
        &self.output_signs
    }

    /// Current flattened weights `theta`.
    pub fn theta(&self) -> &[f64] {
        &self.weights
    }

    /// Frozen initialization `theta_0`.
    pub fn theta0(&self) -> &[f64] {
        &self.init_weights
    }

    pub fn set_theta(&mut self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.weights.len() {
            return Err(Error::InvalidInput(format!(
                "theta has length {}, expected {}",
                theta.len(),
                self.weights.len()
            )));
        }
        self.weights.copy_from_slice(theta);
        Ok(())
    }

    /// Copy with the same signs and initialization but different weights.
    pub fn with_theta(&self, theta: &[f64]) -> Result<Self> {
        let mut net = self.clone();
        net.set_theta(theta)?;
        Ok(net)
    }

    fn scale(&self) -> f64 {
        1.0 / (self.width as f64).sqrt()
    }

    fn row<'a>(&self, w: &'a [f64], r: usize) -> &'a [f64] {
        &w[r * self.dim..(r + 1) * self.dim]
    }

    pub(crate) fn value_unchecked(&self, phi: &[f64]) -> f64 {
        let mut acc = 0.0;
        for r in 0..self.width {
            let pre = dot(self.row(&self.weights, r), phi);
            if pre > 0.0 {
                acc += self.output_signs[r] * pre;
            }
        }
        acc * self.scale()
    }

    pub(crate) fn value_linearized_unchecked(&self, phi: &[f64]) -> f64 {
        let mut acc = 0.0;
        for r in 0..self.width {
            if dot(self.row(&self.init_weights, r), phi) > 0.0 {
                acc += self.output_signs[r] * dot(self.row(&self.weights, r), phi);
            }
        }
        acc * self.scale()
    }

    pub fn forward(&self, phi: &[f64]) -> Result<f64> {
        check_dim(self.dim, phi)?;
        Ok(self.value_unchecked(phi))
    }

    /// `f0(theta; phi)`: indicators taken at `theta_0`, weights current.
    pub fn forward_linearized(&self, phi: &[f64]) -> Result<f64> {
        check_dim(self.dim, phi)?;
        Ok(self.value_linearized_unchecked(phi))
    }

    fn gradient(&self, phi: &[f64], gate: &[f64]) -> Vec<f64> {
        let c = self.scale();
        let mut g = vec![0.0; self.weights.len()];
        for r in 0..self.width {
            if dot(self.row(gate, r), phi) > 0.0 {
                let coef = c * self.output_signs[r];
                for (gi, p) in g[r * self.dim..(r + 1) * self.dim].iter_mut().zip(phi) {
                    *gi = coef * p;
                }
            }
        }
        g
    }

    /// Gradient of `f` with respect to the flattened weights. The ReLU
    /// indicator is strict, so the derivative at a kink is zero.
    pub fn grad(&self, phi: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, phi)?;
        Ok(self.gradient(phi, &self.weights))
    }

    /// Gradient of `f0`, constant in theta.
    pub fn grad_linearized(&self, phi: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, phi)?;
        Ok(self.gradient(phi, &self.init_weights))
    }

    /// `theta += scale * grad(theta; phi)` using the gradient at the current
    /// (pre-update) weights.
    pub(crate) fn add_scaled_grad(&mut self, phi: &[f64], scale: f64, linearized: bool) {
        let c = scale * self.scale();
        let d = self.dim;
        for r in 0..self.width {
            let gate = if linearized { &self.init_weights } else { &self.weights };
            if dot(&gate[r * d..(r + 1) * d], phi) > 0.0 {
                let coef = c * self.output_signs[r];
                for (w, p) in self.weights[r * d..(r + 1) * d].iter_mut().zip(phi) {
                    *w += coef * p;
                }
            }
        }
    }

    /// Writes the snapshot format: `m,d`, the sign row, `m` rows of `W`,
    /// then `m` rows of `W0`.
    pub fn write_snapshot<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "{},{}", self.width, self.dim)?;
        writeln!(out, "{}", join(&self.output_signs))?;
        for w in [&self.weights, &self.init_weights] {
            for r in 0..self.width {
                writeln!(out, "{}", join(self.row(w, r)))?;
            }
        }
        Ok(())
    }

    pub fn save_snapshot(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_snapshot(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn read_snapshot<R: BufRead>(input: R) -> Result<Self> {
        let bad = |msg: &str| Error::InvalidInput(format!("malformed net snapshot: {msg}"));
        let mut lines = input.lines();
        let mut next_row = || -> Result<Vec<f64>> {
            let line = lines.next().ok_or_else(|| bad("truncated"))??;
            line.split(',')
                .map(|t| t.trim().parse::<f64>().map_err(|_| bad(&format!("bad number {t:?}"))))
                .collect()
        };
        let header = next_row()?;
        if header.len() != 2 {
            return Err(bad("header must be m,d"));
        }
        let (width, dim) = (header[0] as usize, header[1] as usize);
        let signs = next_row()?;
        if signs.len() != width {
            return Err(bad("sign row length"));
        }
        let mut read_matrix = || -> Result<Vec<f64>> {
            let mut w = Vec::with_capacity(width * dim);
            for _ in 0..width {
                let row = next_row()?;
                if row.len() != dim {
                    return Err(bad("weight row length"));
                }
                w.extend(row);
            }
            Ok(w)
        };
        let weights = read_matrix()?;
        let init_weights = read_matrix()?;
        let mut net = TwoLayerReluNet::from_parts(signs, init_weights, dim)?;
        net.set_theta(&weights)?;
        Ok(net)
    }

    pub fn load_snapshot(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::read_snapshot(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

/// `I(theta) = (1/2S) sum_s [f(phi(s,0)) + f(phi(s,1))]`, or `I0` with `f0`.
pub fn mean_offset(net: &TwoLayerReluNet, features: &FeatureMap, linearized: bool) -> f64 {
    let total: f64 = features
        .table
        .iter()
        .map(|phi| {
            if linearized {
                net.value_linearized_unchecked(phi)
            } else {
                net.value_unchecked(phi)
            }
        })
        .sum();
    total / features.num_pairs() as f64
}

/// `theta . phi`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearApproximator {
    pub weights: Vec<f64>,
}

impl LinearApproximator {
    pub fn zeros(dim: usize) -> Self {
        LinearApproximator { weights: vec![0.0; dim] }
    }

    pub fn forward(&self, phi: &[f64]) -> Result<f64> {
        check_dim(self.weights.len(), phi)?;
        Ok(dot(&self.weights, phi))
    }

    pub fn grad(&self, phi: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.weights.len(), phi)?;
        Ok(phi.to_vec())
    }
}

/// Anything the TD learners can train.
pub trait QModel {
    fn value(&self, phi: &[f64]) -> f64;
    /// `theta += scale * grad(theta; phi)`.
    fn add_scaled_grad(&mut self, phi: &[f64], scale: f64);
    fn params(&self) -> &[f64];
}

/// The full network, trained as is.
#[derive(Debug, Clone)]
pub struct Neural(pub TwoLayerReluNet);

/// The network with activations frozen at initialization (`f0`).
#[derive(Debug, Clone)]
pub struct Linearized(pub TwoLayerReluNet);

impl QModel for Neural {
    fn value(&self, phi: &[f64]) -> f64 {
        self.0.value_unchecked(phi)
    }
    fn add_scaled_grad(&mut self, phi: &[f64], scale: f64) {
        self.0.add_scaled_grad(phi, scale, false)
    }
    fn params(&self) -> &[f64] {
        self.0.theta()
    }
}

impl QModel for Linearized {
    fn value(&self, phi: &[f64]) -> f64 {
        self.0.value_linearized_unchecked(phi)
    }
    fn add_scaled_grad(&mut self, phi: &[f64], scale: f64) {
        self.0.add_scaled_grad(phi, scale, true)
    }
    fn params(&self) -> &[f64] {
        self.0.theta()
    }
}

impl QModel for LinearApproximator {
    fn value(&self, phi: &[f64]) -> f64 {
        dot(&self.weights, phi)
    }
    fn add_scaled_grad(&mut self, phi: &[f64], scale: f64) {
        for (w, p) in self.weights.iter_mut().zip(phi) {
            *w += scale * p;
        }
    }
    fn params(&self) -> &[f64] {
        &self.weights
    }
}
