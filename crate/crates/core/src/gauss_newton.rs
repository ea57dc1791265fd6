//! Gauss-Newton estimate of the loss change caused by a morphism.
//!
//! Treating the loss of each sample as locally least-squares in the
//! downstream activation, the Hessian is approximated by `g gᵀ / (2L)`, so
//! for a mini-batch
//!
//! ```text
//! ΔL ≈ (1/S) Σ_s [ d_s + d_s² / (4 L̂) ],   d_s = ⟨Δz_s, g_s⟩
//! ```
//!
//! with the quadratic term taken per sample. `g_s` is the gradient of the
//! sample's own loss, so the linear term is the exact first-order change of
//! the mean loss.

use crate::error::{Error, Result};
use crate::morphism::{self, MorphismId, MorphismRef, SplitMorphism};
use crate::network::{NetworkGraph, Tape};
use crate::rng::SeededRng;
use crate::tensor::{self, Tensor};

fn check_loss(loss: f64) -> Result<()> {
    if !(loss > 0.0) || !loss.is_finite() {
        return Err(Error::Numeric(format!("batch loss must be positive and finite, got {loss}")));
    }
    Ok(())
}

/// Estimate from the per-sample inner products `d_s`.
pub fn gn_from_products(d: &[f64], loss: f64) -> Result<f64> {
    check_loss(loss)?;
    if d.is_empty() {
        return Err(Error::shape("empty batch"));
    }
    let sum: f64 = d.iter().map(|&x| x + x * x / (4.0 * loss)).sum();
    Ok(sum / d.len() as f64)
}

/// Estimate from per-sample `Δz_s` and `g_s`, both with the sample on axis 0.
pub fn gn_batch_estimate(delta_z: &Tensor, g: &Tensor, loss: f64) -> Result<f64> {
    if delta_z.shape() != g.shape() {
        return Err(Error::shape(format!(
            "Δz has shape {:?} but g has {:?}",
            delta_z.shape(),
            g.shape()
        )));
    }
    if delta_z.shape().is_empty() {
        return Err(Error::shape("Δz needs a sample axis"));
    }
    let n = delta_z.shape()[0];
    let d: Vec<f64> = (0..n).map(|s| tensor::dot(delta_z.outer(s), g.outer(s))).collect();
    gn_from_products(&d, loss)
}

/// Estimate for any candidate on a backpropagated eval tape.
pub fn gn_morphism_estimate(net: &NetworkGraph, tape: &Tape, m: MorphismRef<'_>) -> Result<f64> {
    let d = morphism::replay_inner_products(net, tape, m)?;
    gn_from_products(&d, tape.loss)
}

/// The estimate and its exact gradient with respect to θ:
/// `(1/S) Σ_s (1 + d_s/(2L̂)) ∂d_s/∂θ`.
pub fn gn_theta_gradient(net: &NetworkGraph, tape: &Tape, m: &SplitMorphism, loss: f64) -> Result<(f64, Tensor)> {
    check_loss(loss)?;
    let (d, grad) = morphism::split_inner_products_vjp(net, tape, m, |d| {
        let n = d.len() as f64;
        d.iter().map(|&x| (1.0 + x / (2.0 * loss)) / n).collect()
    })?;
    Ok((gn_from_products(&d, loss)?, grad))
}

/// Moving average of a candidate's batch estimates plus its resource delta.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimateRecord {
    pub id: MorphismId,
    pub ema_delta_loss: f64,
    pub momentum: f64,
    pub initialized: bool,
    pub resource_delta: i64,
    pub updates: u64,
}

impl EstimateRecord {
    pub fn new(id: MorphismId, momentum: f64, resource_delta: i64) -> Self {
        assert!(momentum > 0.0 && momentum < 1.0, "EMA momentum must lie in (0, 1), got {momentum}");
        EstimateRecord {
            id,
            ema_delta_loss: 0.0,
            momentum,
            initialized: false,
            resource_delta,
            updates: 0,
        }
    }

    pub fn update(&mut self, value: f64) {
        if self.initialized {
            self.ema_delta_loss = (1.0 - self.momentum) * self.ema_delta_loss + self.momentum * value;
        } else {
            self.ema_delta_loss = value;
            self.initialized = true;
        }
        self.updates += 1;
    }
}

pub fn ema_update(mut rec: EstimateRecord, value: f64) -> EstimateRecord {
    rec.update(value);
    rec
}

/// `min ½‖Az − b‖²` around a point `z`, the setting in which the
/// Gauss-Newton form is exact for rank-one `A`.
#[derive(Clone, Debug, PartialEq)]
pub struct LeastSquaresProblem {
    rows: usize,
    cols: usize,
    a: Vec<f64>,
    b: Vec<f64>,
    z: Vec<f64>,
}

impl LeastSquaresProblem {
    pub fn new(rows: usize, cols: usize, a: Vec<f64>, b: Vec<f64>, z: Vec<f64>) -> Result<Self> {
        if a.len() != rows * cols || b.len() != rows || z.len() != cols || rows == 0 || cols == 0 {
            return Err(Error::shape(format!(
                "least-squares sizes disagree: A {rows}×{cols} with {} entries, b {}, z {}",
                a.len(),
                b.len(),
                z.len()
            )));
        }
        Ok(LeastSquaresProblem { rows, cols, a, b, z })
    }

    pub fn random(rows: usize, cols: usize, rng: &mut SeededRng) -> Self {
        let a = (0..rows * cols).map(|_| rng.normal()).collect();
        let b = (0..rows).map(|_| rng.normal()).collect();
        let z = (0..cols).map(|_| rng.normal()).collect();
        LeastSquaresProblem { rows, cols, a, b, z }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|i| tensor::dot(&self.a[i * self.cols..(i + 1) * self.cols], v))
            .collect()
    }

    fn apply_t(&self, w: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (i, &wi) in w.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(&self.a[i * self.cols..(i + 1) * self.cols]) {
                *o += wi * a;
            }
        }
        out
    }

    /// `r = Az − b`
    pub fn residual(&self) -> Vec<f64> {
        self.apply(&self.z).iter().zip(&self.b).map(|(x, b)| x - b).collect()
    }

    /// `g = Aᵀr`
    pub fn gradient(&self) -> Vec<f64> {
        self.apply_t(&self.residual())
    }

    /// `H = AᵀA`, row-major.
    pub fn hessian(&self) -> Vec<f64> {
        let n = self.cols;
        let mut h = vec![0.0; n * n];
        for r in 0..self.rows {
            let row = &self.a[r * n..(r + 1) * n];
            for i in 0..n {
                for j in 0..n {
                    h[i * n + j] += row[i] * row[j];
                }
            }
        }
        h
    }

    pub fn loss(&self) -> f64 {
        0.5 * self.residual().iter().map(|r| r * r).sum::<f64>()
    }

    /// Exact loss change `L(z + Δz) − L(z)`.
    pub fn exact_change(&self, dz: &[f64]) -> f64 {
        let moved: Vec<f64> = self.z.iter().zip(dz).map(|(z, d)| z + d).collect();
        let r: Vec<f64> = self.apply(&moved).iter().zip(&self.b).map(|(x, b)| x - b).collect();
        0.5 * r.iter().map(|v| v * v).sum::<f64>() - self.loss()
    }

    /// Minimum-norm step reaching the exact solution, `A(z + Δz*) = b`.
    /// Requires `A` to have full row rank.
    pub fn solution_direction(&self) -> Result<Vec<f64>> {
        let m = self.rows;
        let mut gram = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..m {
                gram[i * m + j] = tensor::dot(
                    &self.a[i * self.cols..(i + 1) * self.cols],
                    &self.a[j * self.cols..(j + 1) * self.cols],
                );
            }
        }
        let neg_r: Vec<f64> = self.residual().iter().map(|v| -v).collect();
        let w = solve(m, gram, neg_r)?;
        Ok(self.apply_t(&w))
    }

    /// For a single-row problem, the multiple of `dz` that solves it:
    /// `((b − uᵀz) / (uᵀdz)) · dz`.
    pub fn rank_one_solution_along(&self, dz: &[f64]) -> Result<Vec<f64>> {
        if self.rows != 1 {
            return Err(Error::shape(format!("expected a single-row problem, got {} rows", self.rows)));
        }
        let u_dz = tensor::dot(&self.a, dz);
        if u_dz == 0.0 {
            return Err(Error::Numeric("direction is orthogonal to the row".into()));
        }
        let scale = (self.b[0] - tensor::dot(&self.a, &self.z)) / u_dz;
        Ok(dz.iter().map(|v| v * scale).collect())
    }
}

/// `(½ΔzᵀHΔz, ⟨Δz, g⟩²/(4L))`.
pub fn ls_quadratic_pair(p: &LeastSquaresProblem, dz: &[f64]) -> Result<(f64, f64)> {
    if dz.len() != p.cols {
        return Err(Error::shape(format!("Δz has length {}, problem has {} unknowns", dz.len(), p.cols)));
    }
    let loss = p.loss();
    if loss <= 0.0 {
        return Err(Error::Numeric("zero residual: the Gauss-Newton form is undefined".into()));
    }
    let adz = p.apply(dz);
    let true_q = 0.5 * adz.iter().map(|v| v * v).sum::<f64>();
    let gd = tensor::dot(dz, &p.gradient());
    Ok((true_q, gd * gd / (4.0 * loss)))
}

/// Mean relative Gauss-Newton error `|true − gn| / |true|` over random
/// `dim`-unknown problems of each Hessian rank and random directions.
pub fn rank_sweep(dim: usize, ranks: &[usize], problems: usize, directions: usize, rng: &mut SeededRng) -> Result<Vec<f64>> {
    ranks
        .iter()
        .map(|&rank| {
            if rank == 0 || rank > dim {
                return Err(Error::shape(format!("rank {rank} outside 1..={dim}")));
            }
            let mut total = 0.0;
            for _ in 0..problems {
                let p = LeastSquaresProblem::random(rank, dim, rng);
                for _ in 0..directions {
                    let dz: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
                    let (t, g) = ls_quadratic_pair(&p, &dz)?;
                    total += (t - g).abs() / t.abs();
                }
            }
            Ok(total / (problems * directions) as f64)
        })
        .collect()
}

/// Gaussian elimination with partial pivoting on a dense `n×n` system.
fn solve(n: usize, mut m: Vec<f64>, mut rhs: Vec<f64>) -> Result<Vec<f64>> {
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m[i * n + col].abs().total_cmp(&m[j * n + col].abs()))
            .expect("non-empty");
        if m[pivot * n + col].abs() < 1e-300 {
            return Err(Error::Numeric("singular system".into()));
        }
        if pivot != col {
            for k in 0..n {
                m.swap(pivot * n + k, col * n + k);
            }
            rhs.swap(pivot, col);
        }
        for row in col + 1..n {
            let f = m[row * n + col] / m[col * n + col];
            if f != 0.0 {
                for k in col..n {
                    m[row * n + k] -= f * m[col * n + k];
                }
                rhs[row] -= f * rhs[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| m[row * n + k] * x[k]).sum();
        x[row] = (rhs[row] - s) / m[row * n + row];
    }
    Ok(x)
}
