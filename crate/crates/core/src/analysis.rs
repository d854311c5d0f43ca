//! Measurements on gradient matrices: folded row-angle statistics, per-sample and
//! per-row proportionality scalars, numerical rank-1 checks and the analytic
//! rank-1 direction.
//!
//! For a two-logit softmax/NLL head every per-sample output gradient is
//! `c_i · (1, −1)`. Backpropagating it through the layers above `l` gives
//! `δ_{l,i} = c_i · v_l` with `v_l = (θ_L ⋯ θ_{l+1})ᵀ (1, −1)`, so
//! `∂θ_l = v_l · w_lᵀ` with `w_l = (1/b) Σ_i c_i a_{l−1,i}`: every layer's
//! gradient is exactly rank one with a column direction fixed by the weights.

use serde::Serialize;

use crate::error::{contract, Result};
use crate::model::{GradientSet, LinearNet};
use crate::numerics::{
    dot, folded_angle_unit, folded_angle_unit4, norm, normalized, projection_scalar,
    top_two_singular_values, Mat64, Vec64, DEGENERATE_NORM,
};

/// Row-pair tile edge for the pairwise sweeps; keeps both tiles cache-resident.
const PAIR_TILE: usize = 32;

/// Calls `f(i, j)` for every `i < j < n`, tile by tile, in a fixed order.
fn for_each_pair(n: usize, mut f: impl FnMut(usize, usize)) {
    for bi in (0..n).step_by(PAIR_TILE) {
        let ei = (bi + PAIR_TILE).min(n);
        for bj in (bi..n).step_by(PAIR_TILE) {
            let ej = (bj + PAIR_TILE).min(n);
            for i in bi..ei {
                let start = if bi == bj { i + 1 } else { bj };
                for j in start..ej {
                    f(i, j);
                }
            }
        }
    }
}

/// Like [`for_each_pair`], but hands over each row with its run of partners inside a tile.
fn for_each_row_block(n: usize, mut f: impl FnMut(usize, &[usize])) {
    let mut js = Vec::with_capacity(PAIR_TILE);
    for bi in (0..n).step_by(PAIR_TILE) {
        let ei = (bi + PAIR_TILE).min(n);
        for bj in (bi..n).step_by(PAIR_TILE) {
            let ej = (bj + PAIR_TILE).min(n);
            for i in bi..ei {
                let start = if bi == bj { i + 1 } else { bj };
                js.clear();
                js.extend(start..ej);
                if !js.is_empty() {
                    f(i, &js);
                }
            }
        }
    }
}

/// Folded pairwise angles between the rows of one matrix.
///
/// When fewer than two rows are usable the statistics are undefined: the
/// angle fields are NaN and `pair_count` is 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AngleStats {
    pub mean_deg: f64,
    pub max_deg: f64,
    pub min_deg: f64,
    pub pair_count: usize,
    /// Rows with norm below the degenerate threshold.
    pub skipped_rows: usize,
}

impl AngleStats {
    pub fn is_defined(&self) -> bool {
        self.pair_count > 0
    }
}

/// Folded angle statistics over all unordered pairs of usable rows.
pub fn pairwise_row_angle_stats(m: &Mat64) -> Result<AngleStats> {
    if m.rows() < 2 {
        contract!("angle statistics need at least two rows, got {}", m.rows());
    }
    let cols = m.cols();
    let mut unit = Vec::with_capacity(m.rows() * cols);
    let mut skipped_rows = 0;
    for row in m.row_iter() {
        match normalized(row) {
            Some(mut u) => {
                // The folded angle ignores sign; aligning rows with the first usable
                // one makes nearly proportional pairs acute, the cheap case.
                if unit.len() >= cols && dot(&unit[..cols], &u) < 0.0 {
                    u.iter_mut().for_each(|x| *x = -*x);
                }
                unit.extend_from_slice(&u);
            }
            None => skipped_rows += 1,
        }
    }
    let usable = unit.len() / cols;
    if usable < 2 {
        return Ok(AngleStats {
            mean_deg: f64::NAN,
            max_deg: f64::NAN,
            min_deg: f64::NAN,
            pair_count: 0,
            skipped_rows,
        });
    }
    let row = |i: usize| &unit[i * cols..(i + 1) * cols];
    let (mut sum, mut max, mut min) = (0.0, f64::NEG_INFINITY, f64::INFINITY);
    let mut pair_count = 0;
    let mut record = |a: f64| {
        sum += a;
        max = f64::max(max, a);
        min = f64::min(min, a);
        pair_count += 1;
    };
    for_each_row_block(usable, |i, js| {
        let mut quads = js.chunks_exact(4);
        for q in quads.by_ref() {
            let vs = [row(q[0]), row(q[1]), row(q[2]), row(q[3])];
            folded_angle_unit4(row(i), vs)
                .into_iter()
                .for_each(&mut record);
        }
        for &j in quads.remainder() {
            record(folded_angle_unit(row(i), row(j)));
        }
    });
    Ok(AngleStats {
        mean_deg: sum / pair_count as f64,
        max_deg: max,
        min_deg: min,
        pair_count,
        skipped_rows,
    })
}

/// Predicted column direction `v_l = (θ_L ⋯ θ_{l+1})ᵀ (1, −1)` of layer `l`'s gradient.
///
/// For the output layer this is `(1, −1)` itself.
pub fn analytic_direction(net: &LinearNet, l: usize) -> Result<Vec64> {
    if l >= net.depth() {
        contract!("layer {l} out of range for depth {}", net.depth());
    }
    let mut v = vec![1.0, -1.0];
    for m in (l + 1..net.depth()).rev() {
        v = net.layer(m).t_matvec(&v)?;
    }
    Ok(Vec64::from_raw(v))
}

/// Numerical and analytic rank-1 diagnostics of one layer's gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Rank1Report {
    pub sigma1: f64,
    pub sigma2: f64,
    /// `σ2 / σ1`; NaN for a degenerate gradient.
    pub ratio: f64,
    /// `‖∂θ_l − v_l ŵᵀ‖_F / ‖∂θ_l‖_F` with `ŵ = ∂θ_lᵀ v_l / ‖v_l‖²`; NaN when degenerate.
    pub oracle_residual: f64,
    pub direction: Vec64,
    /// Set when `‖∂θ_l‖_F` is below the degenerate threshold.
    pub degenerate: bool,
}

impl Rank1Report {
    /// True when both the singular-value ratio and the oracle residual are within `tol`.
    pub fn is_rank1(&self, tol: f64) -> bool {
        !self.degenerate && self.ratio <= tol && self.oracle_residual <= tol
    }
}

/// Residual of `m` after removing its projection onto the column direction `v`.
pub fn column_direction_residual(m: &Mat64, v: &[f64]) -> Result<f64> {
    if v.len() != m.rows() {
        contract!("direction of length {} for {} rows", v.len(), m.rows());
    }
    let vv = dot(v, v);
    let total = m.frobenius_norm();
    if vv.sqrt() < DEGENERATE_NORM || total < DEGENERATE_NORM {
        return Ok(f64::NAN);
    }
    let w: Vec<f64> = m.t_matvec(v)?.into_iter().map(|x| x / vv).collect();
    let mut sq = 0.0;
    for (row, &vi) in m.row_iter().zip(v) {
        for (x, wj) in row.iter().zip(&w) {
            let r = x - vi * wj;
            sq += r * r;
        }
    }
    Ok(sq.sqrt() / total)
}

pub fn rank1_report(grads: &GradientSet, net: &LinearNet, l: usize) -> Result<Rank1Report> {
    if l >= grads.len() || l >= net.depth() {
        contract!("layer {l} out of range");
    }
    let g = grads.layer(l);
    if g.shape() != net.layer(l).shape() {
        contract!(
            "gradient shape {:?} vs layer {:?}",
            g.shape(),
            net.layer(l).shape()
        );
    }
    let direction = analytic_direction(net, l)?;
    if g.frobenius_norm() < DEGENERATE_NORM {
        return Ok(Rank1Report {
            sigma1: 0.0,
            sigma2: 0.0,
            ratio: f64::NAN,
            oracle_residual: f64::NAN,
            direction,
            degenerate: true,
        });
    }
    let (sigma1, sigma2) = top_two_singular_values(g)?;
    let oracle_residual = column_direction_residual(g, &direction)?;
    Ok(Rank1Report {
        sigma1,
        sigma2,
        ratio: sigma2 / sigma1,
        oracle_residual,
        direction,
        degenerate: false,
    })
}

/// Scalars relating first-layer gradient rows to the samples that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct ProportionalityReport {
    /// `α_i` with per-sample `∂θ₁[0] ≈ α_i x_i`; 0 for an all-zero sample.
    pub alphas: Vec<f64>,
    /// `r_j` with batch `∂θ₁[j] ≈ r_j · reference`; NaN when the reference is degenerate.
    pub ratios: Vec<f64>,
    /// `(1/b) Σ α_i x_i`.
    pub reference: Vec<f64>,
    /// `‖∂θ₁[0] − reference‖`.
    pub abs_residual: f64,
    /// `abs_residual / ‖∂θ₁[0]‖` (equal to `abs_residual` when that row is zero).
    pub residual: f64,
    /// Samples whose norm is below the degenerate threshold.
    pub skipped_samples: usize,
    pub degenerate: bool,
}

/// Extracts `α_i`, the batch reference vector and the row ratios `r_j`.
///
/// `per_sample_row0[i]` is row 0 of the layer-1 gradient computed from sample
/// `i` alone; `batch_grad` is the layer-1 gradient of the whole batch at the
/// same weights; `inputs` holds the samples as rows.
pub fn extract_proportionality(
    per_sample_row0: &[Vec<f64>],
    batch_grad: &Mat64,
    inputs: &Mat64,
) -> Result<ProportionalityReport> {
    let b = inputs.rows();
    if per_sample_row0.len() != b || b == 0 {
        contract!(
            "{} per-sample rows for a batch of {b}",
            per_sample_row0.len()
        );
    }
    if batch_grad.cols() != inputs.cols()
        || per_sample_row0.iter().any(|r| r.len() != inputs.cols())
    {
        contract!("gradient rows and samples must share a width");
    }
    let mut alphas = Vec::with_capacity(b);
    let mut skipped_samples = 0;
    let mut reference = vec![0.0; inputs.cols()];
    for (g, x) in per_sample_row0.iter().zip(inputs.row_iter()) {
        let alpha = match projection_scalar(g, x)? {
            Some(a) => a,
            None => {
                skipped_samples += 1;
                0.0
            }
        };
        for (r, xv) in reference.iter_mut().zip(x) {
            *r += alpha * xv;
        }
        alphas.push(alpha);
    }
    for r in &mut reference {
        *r /= b as f64;
    }
    let row0 = batch_grad.row(0);
    let diff: Vec<f64> = row0.iter().zip(&reference).map(|(a, r)| a - r).collect();
    let abs_residual = norm(&diff);
    let row0_norm = norm(row0);
    let residual = if row0_norm < DEGENERATE_NORM {
        abs_residual
    } else {
        abs_residual / row0_norm
    };
    let mut degenerate = false;
    let ratios = batch_grad
        .row_iter()
        .map(|row| {
            projection_scalar(row, &reference).map(|r| {
                r.unwrap_or_else(|| {
                    degenerate = true;
                    f64::NAN
                })
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ProportionalityReport {
        alphas,
        ratios,
        reference,
        abs_residual,
        residual,
        skipped_samples,
        degenerate,
    })
}

/// Worst relative violation of `r_{j2} · m[j1] = r_{j1} · m[j2]` over all row pairs.
///
/// Each pair is normalized by `max(‖r_{j2} m[j1]‖, ‖r_{j1} m[j2]‖)`; pairs where
/// both sides vanish are skipped. Returns NaN when no pair can be measured.
pub fn cross_proportionality_residual(m: &Mat64, ratios: &[f64]) -> Result<f64> {
    if ratios.len() != m.rows() {
        contract!("{} ratios for {} rows", ratios.len(), m.rows());
    }
    if ratios.iter().any(|r| !r.is_finite()) {
        return Ok(f64::NAN);
    }
    let norms: Vec<f64> = m.row_iter().map(norm).collect();
    let mut worst = f64::NAN;
    for_each_pair(m.rows(), |i, j| {
        let (a, b) = (ratios[j], ratios[i]);
        let scale = (a.abs() * norms[i]).max(b.abs() * norms[j]);
        if scale < DEGENERATE_NORM {
            return;
        }
        let mut sq = 0.0;
        for (x, y) in m.row(i).iter().zip(m.row(j)) {
            let d = a * x - b * y;
            sq += d * d;
        }
        let r = sq.sqrt() / scale;
        worst = if worst.is_nan() { r } else { worst.max(r) };
    });
    Ok(worst)
}
