//! Global squared-range multilateration.
//!
//! The position minimizes `f(x) = sum_i (|x - a_i|^2 - d_i^2)^2`. Lifting to
//! `y = (x, |x|^2)` turns this into a linear least-squares problem with one
//! quadratic equality constraint. Its Lagrangian stationarity condition is a
//! rational function of the multiplier after one Cholesky factorization and
//! one symmetric eigendecomposition, and on the admissible interval that
//! function is strictly monotone. A bracketed one-dimensional root find then
//! yields the global minimizer without any starting point.

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ranging::RangeMeasurement;

/// Smallest admissible singular value of the centered anchor coordinates, meters.
pub const DEGENERACY_THRESHOLD: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Dimension {
    #[serde(rename = "2d")]
    Two,
    #[serde(rename = "3d")]
    Three,
}

impl Dimension {
    pub fn n(self) -> usize {
        match self {
            Dimension::Two => 2,
            Dimension::Three => 3,
        }
    }

    pub fn min_anchors(self) -> usize {
        self.n() + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet {
    positions: Vec<Vector3<f64>>,
    ids: Vec<usize>,
}

impl AnchorSet {
    pub fn new(positions: Vec<Vector3<f64>>) -> Self {
        let ids = (0..positions.len()).collect();
        Self { positions, ids }
    }

    pub fn with_ids(positions: Vec<Vector3<f64>>, ids: Vec<usize>) -> Result<Self> {
        if positions.len() != ids.len() {
            return Err(Error::invalid("anchor ids and positions differ in length"));
        }
        Ok(Self { positions, ids })
    }

    pub fn positions(&self) -> &[Vector3<f64>] {
        &self.positions
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Rejects collinear (2D) or coplanar (3D) layouts.
    pub fn check_geometry(&self, dim: Dimension) -> Result<()> {
        let d = dim.n();
        if self.len() < dim.min_anchors() {
            return Err(Error::InsufficientData {
                needed: dim.min_anchors(),
                got: self.len(),
            });
        }
        let sv = centered_singular_values(&self.positions, d);
        let weakest = sv[d - 1];
        if !(weakest >= DEGENERACY_THRESHOLD) {
            let what = if d == 2 { "collinear" } else { "coplanar" };
            return Err(Error::Geometry(format!(
                "anchors are {what} (singular value {weakest:.3e} m)"
            )));
        }
        Ok(())
    }

    fn subset(&self, keep: &[usize]) -> AnchorSet {
        AnchorSet {
            positions: keep.iter().map(|&i| self.positions[i]).collect(),
            ids: keep.iter().map(|&i| self.ids[i]).collect(),
        }
    }
}

fn centered_singular_values(points: &[Vector3<f64>], d: usize) -> Vec<f64> {
    let n = points.len();
    let mut mean = [0.0; 3];
    for p in points {
        for k in 0..d {
            mean[k] += p[k] / n as f64;
        }
    }
    let m = DMatrix::from_fn(n, d, |i, k| points[i][k] - mean[k]);
    let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv.resize(d, 0.0);
    sv
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionFix {
    /// Solved position; z is 0 for 2D fixes.
    pub position: Vector3<f64>,
    /// Squared-range cost at the solution (m^4).
    pub residual: f64,
    pub n_anchors_used: usize,
    pub dimension: Dimension,
    /// Two equally good minimizers existed; the one with the smaller last
    /// coordinate was returned.
    pub ambiguous: bool,
}

/// Squared-range cost of a candidate position using the first `d` coordinates.
pub fn squared_range_cost(anchors: &[Vector3<f64>], distances: &[f64], x: &Vector3<f64>, dim: Dimension) -> f64 {
    let d = dim.n();
    anchors
        .iter()
        .zip(distances)
        .map(|(a, r)| {
            let sq: f64 = (0..d).map(|k| (x[k] - a[k]).powi(2)).sum();
            (sq - r * r).powi(2)
        })
        .sum()
}

/// Global minimizer of the squared-range cost.
pub fn solve(anchors: &AnchorSet, distances: &[f64], dim: Dimension) -> Result<PositionFix> {
    let n = anchors.len();
    let d = dim.n();
    if distances.len() != n {
        return Err(Error::invalid(format!(
            "{} distances for {n} anchors",
            distances.len()
        )));
    }
    if n < dim.min_anchors() {
        return Err(Error::InsufficientData {
            needed: dim.min_anchors(),
            got: n,
        });
    }
    if distances.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
        return Err(Error::invalid("distances must be finite and non-negative"));
    }
    anchors.check_geometry(dim)?;

    // Center and scale for conditioning.
    let mut centroid: DVector<f64> = DVector::zeros(d);
    for a in anchors.positions() {
        for k in 0..d {
            centroid[k] += a[k] / n as f64;
        }
    }
    let scale = (anchors
        .positions()
        .iter()
        .map(|a| (0..d).map(|k| (a[k] - centroid[k]).powi(2)).sum::<f64>())
        .sum::<f64>()
        / n as f64)
        .sqrt();

    let q: Vec<DVector<f64>> = anchors
        .positions()
        .iter()
        .map(|a| DVector::from_fn(d, |k, _| (a[k] - centroid[k]) / scale))
        .collect();
    let r: Vec<f64> = distances.iter().map(|x| x / scale).collect();

    let candidates = solve_normalized(&q, &r, d)?;
    let mut best: Option<(Vector3<f64>, f64)> = None;
    for y in &candidates.points {
        let mut x = Vector3::zeros();
        for k in 0..d {
            x[k] = centroid[k] + scale * y[k];
        }
        let cost = squared_range_cost(anchors.positions(), distances, &x, dim);
        best = match best {
            None => Some((x, cost)),
            Some((bx, bc)) => {
                if prefer(&x, cost, &bx, bc, d) {
                    Some((x, cost))
                } else {
                    Some((bx, bc))
                }
            }
        };
    }
    let (position, residual) = best.expect("at least one candidate");
    Ok(PositionFix {
        position,
        residual,
        n_anchors_used: n,
        dimension: dim,
        ambiguous: candidates.ambiguous,
    })
}

/// Lower cost wins; near-equal costs fall back to the smaller last coordinate.
fn prefer(x: &Vector3<f64>, cost: f64, other: &Vector3<f64>, other_cost: f64, d: usize) -> bool {
    let tol = 1e-9 * cost.abs().max(other_cost.abs()).max(1e-12);
    if (cost - other_cost).abs() > tol {
        return cost < other_cost;
    }
    for k in (0..d).rev() {
        if x[k] != other[k] {
            return x[k] < other[k];
        }
    }
    false
}

struct Candidates {
    points: Vec<DVector<f64>>,
    ambiguous: bool,
}

/// Solves `min |A y - b|^2  s.t.  y_x' y_x - y_last = 0` on normalized data.
fn solve_normalized(q: &[DVector<f64>], r: &[f64], d: usize) -> Result<Candidates> {
    let n = q.len();
    let m = d + 1;
    let a = DMatrix::from_fn(n, m, |i, k| if k < d { -2.0 * q[i][k] } else { 1.0 });
    let b = DVector::from_fn(n, |i, _| r[i] * r[i] - q[i].norm_squared());

    let ata = a.transpose() * &a;
    let atb = a.transpose() * &b;
    let chol = ata
        .cholesky()
        .ok_or_else(|| Error::Geometry("normal matrix is not positive definite".into()))?;
    let l_inv = chol
        .l()
        .try_inverse()
        .ok_or_else(|| Error::Geometry("singular Cholesky factor".into()))?;

    let mut dmat = DMatrix::<f64>::identity(m, m);
    dmat[(d, d)] = 0.0;
    let mut f = DVector::zeros(m);
    f[d] = -0.5;

    let k_mat = &l_inv * &dmat * l_inv.transpose();
    let k_sym = (&k_mat + k_mat.transpose()) * 0.5;
    let eig = k_sym.symmetric_eigen();
    let lam = eig.eigenvalues.map(|x| x.max(0.0));
    let basis = eig.eigenvectors;

    let u = basis.transpose() * (&l_inv * &atb);
    let w = basis.transpose() * (&l_inv * &f);

    let lam_max = lam.max();
    let lambda_lo = -1.0 / lam_max;
    // Offsets `1 + lambda_lo * Lambda_k`; exactly zero on the top eigenspace.
    let top_tol = 1e-10;
    let base: Vec<f64> = lam
        .iter()
        .map(|&l| {
            let v = 1.0 + lambda_lo * l;
            if v < top_tol {
                0.0
            } else {
                v
            }
        })
        .collect();
    let numer = |s: f64| -> DVector<f64> { DVector::from_fn(m, |k, _| u[k] - (lambda_lo + s) * w[k]) };
    let wprime = |s: f64| -> DVector<f64> {
        let nu = numer(s);
        DVector::from_fn(m, |k, _| nu[k] / (base[k] + s * lam[k]))
    };
    let phi = |s: f64| -> f64 {
        let wp = wprime(s);
        (0..m).map(|k| lam[k] * wp[k] * wp[k] + 2.0 * w[k] * wp[k]).sum()
    };
    let to_y = |wp: &DVector<f64>| -> DVector<f64> { l_inv.transpose() * (&basis * wp) };

    let s_tiny = 1e-15 / lam_max;
    if phi(s_tiny) > 0.0 {
        let mut lo = s_tiny;
        let mut hi = 1.0 / lam_max;
        let mut guard = 0;
        while phi(hi) > 0.0 {
            lo = hi;
            hi *= 2.0;
            guard += 1;
            if guard > 2000 || !hi.is_finite() {
                return Err(Error::Geometry("multiplier bracket not found".into()));
            }
        }
        for _ in 0..400 {
            let mid = if hi > 4.0 * lo { (lo * hi).sqrt() } else { 0.5 * (lo + hi) };
            if mid <= lo || mid >= hi {
                break;
            }
            if phi(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let s = 0.5 * (lo + hi);
        return Ok(Candidates {
            points: vec![to_y(&wprime(s))],
            ambiguous: false,
        });
    }

    // Hard case: the multiplier sits on the interval boundary and the free
    // top-eigenspace component is set to satisfy the constraint.
    let top: Vec<usize> = (0..m).filter(|&k| base[k] == 0.0 && lam[k] > 0.0).collect();
    let nu0 = numer(0.0);
    let mut wp = DVector::zeros(m);
    for k in 0..m {
        if !top.contains(&k) {
            wp[k] = nu0[k] / base[k];
        }
    }
    let phi_rest: f64 = (0..m)
        .filter(|k| !top.contains(k))
        .map(|k| lam[k] * wp[k] * wp[k] + 2.0 * w[k] * wp[k])
        .sum();
    let k = top[0];
    let disc = (w[k] * w[k] - lam[k] * phi_rest).max(0.0).sqrt();
    let roots = [(-w[k] + disc) / lam[k], (-w[k] - disc) / lam[k]];
    let points = roots
        .iter()
        .map(|t| {
            let mut v = wp.clone();
            v[k] = *t;
            to_y(&v)
        })
        .collect();
    Ok(Candidates {
        points,
        ambiguous: disc > 0.0 || top.len() > 1,
    })
}

/// Reason a gated solve produced no position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NoFix {
    TooFewRanges { valid: usize, required: usize },
    Degenerate(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum FixOutcome {
    Fix(PositionFix),
    NoFix(NoFix),
}

impl FixOutcome {
    pub fn fix(&self) -> Option<&PositionFix> {
        match self {
            FixOutcome::Fix(f) => Some(f),
            FixOutcome::NoFix(_) => None,
        }
    }
}

/// Drops invalid ranges, then solves when enough remain.
///
/// `measurements[i].anchor_id` indexes into `anchors`.
pub fn gate_and_solve(measurements: &[RangeMeasurement], anchors: &AnchorSet, dim: Dimension) -> FixOutcome {
    let keep: Vec<&RangeMeasurement> = measurements
        .iter()
        .filter(|m| m.valid && m.anchor_id < anchors.len())
        .collect();
    if keep.len() < dim.min_anchors() {
        return FixOutcome::NoFix(NoFix::TooFewRanges {
            valid: keep.len(),
            required: dim.min_anchors(),
        });
    }
    let idx: Vec<usize> = keep.iter().map(|m| m.anchor_id).collect();
    let sub = anchors.subset(&idx);
    let dist: Vec<f64> = keep.iter().map(|m| m.distance).collect();
    match solve(&sub, &dist, dim) {
        Ok(fix) => FixOutcome::Fix(fix),
        Err(e) => FixOutcome::NoFix(NoFix::Degenerate(e.to_string())),
    }
}

/// Projects 3D slant ranges onto the horizontal plane at `height`.
///
/// Returns anchors with z = 0 and horizontal distances; ranges shorter than
/// the vertical offset collapse to 0.
pub fn project_to_plane(anchors: &AnchorSet, distances: &[f64], height: f64) -> (AnchorSet, Vec<f64>) {
    let positions = anchors
        .positions()
        .iter()
        .map(|a| Vector3::new(a.x, a.y, 0.0))
        .collect();
    let horiz = anchors
        .positions()
        .iter()
        .zip(distances)
        .map(|(a, r)| (r * r - (a.z - height).powi(2)).max(0.0).sqrt())
        .collect();
    (
        AnchorSet {
            positions,
            ids: anchors.ids.clone(),
        },
        horiz,
    )
}
