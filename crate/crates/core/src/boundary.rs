//! Decision boundaries of a linear head in feature space: classification,
//! closest flip points, margins and guaranteed-classification balls.
//!
//! A flip point between classes `i` and `j` is a nonnegative feature vector
//! `y` with `z_i(y) = z_j(y) ≥ z_k(y)` for every other class `k`, where
//! `z(y) = y W + b`. The closest one to a query solves a least-distance QP
//! with one equality, `n − 2` score inequalities and `f` sign constraints.

use rayon::prelude::*;
use serde::Serialize;

use crate::config::AuditConfig;
use crate::error::{Error, Result};
use crate::model::{FeatureDataset, LinearHead};
use crate::qp::{least_distance, LdpFailure, LinearConstraint};
use crate::tensor::{dist2, dot_unchecked, largest_singular_value, Vector};
use crate::tensor::{DEFAULT_SVD_MAX_ITER, DEFAULT_SVD_TOL};

/// All argmax indices of the scores; more than one only on exact ties.
pub fn classify(head: &LinearHead, x: &[f64]) -> Result<Vec<usize>> {
    let z = head.scores(x)?;
    Ok(argmax_set(&z))
}

pub(crate) fn argmax_set(z: &[f64]) -> Vec<usize> {
    let best = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    z.iter()
        .enumerate()
        .filter(|(_, &v)| v == best)
        .map(|(i, _)| i)
        .collect()
}

/// The single predicted class, or `None` on a tie.
pub fn predicted_class(head: &LinearHead, x: &[f64]) -> Result<Option<usize>> {
    let set = classify(head, x)?;
    Ok((set.len() == 1).then(|| set[0]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ActiveConstraint {
    /// `z_i ≥ z_k` holds with equality.
    ClassScore(usize),
    /// Feature `l` sits at zero.
    NonNegative(usize),
}

#[derive(Debug, Clone, Serialize)]
pub struct FlipPointResult {
    pub point: Vector,
    pub distance: f64,
    pub class_pair: (usize, usize),
    pub active_set: Vec<ActiveConstraint>,
    pub kkt_residual: f64,
    /// `|z_i − z_j|` at the point.
    pub equality_residual: f64,
    /// Largest amount by which some `z_k` exceeds `z_i` at the point.
    pub inequality_violation: f64,
    pub iterations: usize,
}

/// Constraint rows for the `(i, j)` flip problem: the tie first, then
/// `z_i ≥ z_k` for each remaining class in index order, then `y_l ≥ 0`.
fn flip_constraints(head: &LinearHead, i: usize, j: usize) -> (Vec<LinearConstraint>, Vec<usize>) {
    let w = head.weights();
    let b = head.bias();
    let f = head.features();
    let col_diff = |k: usize| -> Vec<f64> { (0..f).map(|r| w.get(r, i) - w.get(r, k)).collect() };
    let mut cons = Vec::with_capacity(head.classes() - 1 + f);
    let mut classes = Vec::new();
    cons.push(LinearConstraint {
        normal: col_diff(j),
        rhs: b[j] - b[i],
        equality: true,
    });
    for k in (0..head.classes()).filter(|&k| k != i && k != j) {
        cons.push(LinearConstraint {
            normal: col_diff(k),
            rhs: b[k] - b[i],
            equality: false,
        });
        classes.push(k);
    }
    for l in 0..f {
        let mut e = vec![0.0; f];
        e[l] = 1.0;
        cons.push(LinearConstraint {
            normal: e,
            rhs: 0.0,
            equality: false,
        });
    }
    (cons, classes)
}

/// Closest point to `x` on the decision boundary between classes `i` and
/// `j` within the nonnegative orthant.
///
/// `i` is normally the predicted class of `x`; the caller may assert a
/// different one. Fails with [`Error::Infeasible`] when classes `i` and `j`
/// share no boundary in the orthant.
pub fn closest_flip_point(
    head: &LinearHead,
    x: &[f64],
    i: usize,
    j: usize,
    cfg: &AuditConfig,
) -> Result<FlipPointResult> {
    head.check_query(x)?;
    let n = head.classes();
    let f = head.features();
    if i >= n || j >= n {
        return Err(Error::invalid(format!("class pair ({i}, {j}) out of range for {n} classes")));
    }
    if i == j {
        return Err(Error::invalid(format!("class pair ({i}, {j}) must differ")));
    }
    if let Some(l) = x.iter().position(|&v| v < -cfg.feasibility_tol) {
        return Err(Error::invalid(format!(
            "feature {l} of the query is negative ({}); feature space is the nonnegative orthant",
            x[l]
        )));
    }

    let (cons, other_classes) = flip_constraints(head, i, j);
    let scale = 1.0 + x.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let add_tol = 1e-13 * scale;
    let max_iter = 10 * (n + f);
    let sol = match least_distance(x, &cons, add_tol, max_iter) {
        Ok(s) => s,
        Err(LdpFailure::Infeasible { .. }) => {
            return Err(Error::Infeasible(format!(
                "no boundary between classes {i} and {j} reachable"
            )))
        }
        Err(LdpFailure::IterationLimit { point, iterations }) => {
            let residual = point.iter().zip(x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            return Err(Error::NonConvergence {
                solver: "flip-point active set",
                iterations,
                residual,
                last_iterate: point,
            });
        }
    };

    let mut point = sol.point;
    let mut active_set = Vec::with_capacity(sol.active.len());
    for &c in &sol.active {
        if c == 0 {
            continue;
        } else if c <= other_classes.len() {
            active_set.push(ActiveConstraint::ClassScore(other_classes[c - 1]));
        } else {
            let l = c - 1 - other_classes.len();
            point[l] = 0.0;
            active_set.push(ActiveConstraint::NonNegative(l));
        }
    }
    for v in point.iter_mut() {
        if *v < 0.0 && *v >= -cfg.feasibility_tol {
            *v = 0.0;
        }
    }

    let z = head.scores_unchecked(&point);
    let equality_residual = (z[i] - z[j]).abs();
    let inequality_violation = other_classes
        .iter()
        .map(|&k| z[k] - z[i])
        .fold(0.0_f64, f64::max);
    let kkt_residual = sol.kkt_residual / scale;
    if kkt_residual > cfg.optimality_tol || equality_residual > cfg.feasibility_tol * scale {
        return Err(Error::NonConvergence {
            solver: "flip-point active set",
            iterations: sol.iterations,
            residual: kkt_residual.max(equality_residual),
            last_iterate: point,
        });
    }
    Ok(FlipPointResult {
        distance: dist2(x, &point),
        point,
        class_pair: (i, j),
        active_set,
        kkt_residual,
        equality_residual,
        inequality_violation,
        iterations: sol.iterations,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct MarginProfile {
    pub predicted_class: usize,
    /// Distance to each competitor's boundary; `None` for the predicted
    /// class and for classes whose boundary is unreachable.
    pub per_class_distance: Vec<Option<f64>>,
    pub unreachable: Vec<usize>,
    /// Infinite when no competitor boundary is reachable.
    pub min_margin: f64,
    pub argmin_class: Option<usize>,
    #[serde(skip)]
    pub closest: Option<FlipPointResult>,
}

/// Distances from `x` to the boundary of every other class.
pub fn margin_profile(head: &LinearHead, x: &[f64], cfg: &AuditConfig) -> Result<MarginProfile> {
    let Some(i) = predicted_class(head, x)? else {
        return Err(Error::invalid("ambiguous predicted class; margin undefined"));
    };
    let n = head.classes();
    let mut per_class_distance = vec![None; n];
    let mut unreachable = Vec::new();
    let mut closest: Option<FlipPointResult> = None;
    for j in (0..n).filter(|&j| j != i) {
        match closest_flip_point(head, x, i, j, cfg) {
            Ok(res) => {
                per_class_distance[j] = Some(res.distance);
                if closest.as_ref().is_none_or(|c| res.distance < c.distance) {
                    closest = Some(res);
                }
            }
            Err(Error::Infeasible(_)) => unreachable.push(j),
            Err(e) => return Err(e),
        }
    }
    Ok(MarginProfile {
        predicted_class: i,
        per_class_distance,
        unreachable,
        min_margin: closest.as_ref().map_or(f64::INFINITY, |c| c.distance),
        argmin_class: closest.as_ref().map(|c| c.class_pair.1),
        closest,
    })
}

/// Margin profiles for every row, computed in parallel, in row order.
pub fn margin_profiles(
    head: &LinearHead,
    data: &FeatureDataset,
    cfg: &AuditConfig,
) -> Vec<Result<MarginProfile>> {
    (0..data.len())
        .into_par_iter()
        .map(|r| margin_profile(head, data.row(r), cfg))
        .collect()
}

/// Rows of `candidates` strictly inside the guaranteed-classification ball
/// around `center`.
pub fn ball_contains(
    head: &LinearHead,
    center: &[f64],
    candidates: &FeatureDataset,
    cfg: &AuditConfig,
) -> Result<Vec<usize>> {
    candidates.check_dim(head.features(), "candidate set")?;
    let profile = margin_profile(head, center, cfg)?;
    Ok(rows_within(center, profile.min_margin, candidates))
}

pub(crate) fn rows_within(center: &[f64], radius: f64, data: &FeatureDataset) -> Vec<usize> {
    (0..data.len())
        .filter(|&r| dist2(data.row(r), center) < radius)
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct LipschitzReport {
    pub sigma_max: f64,
    /// `‖Δz‖ / ‖Δx‖` per pair; `None` for pairs at zero distance.
    pub ratios: Vec<Option<f64>>,
    pub max_ratio: f64,
    pub skipped: Vec<usize>,
    pub violations: Vec<usize>,
}

impl LipschitzReport {
    pub fn holds(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks `‖z(x) − z(y)‖ ≤ σ_max(W)‖x − y‖` (with relative slack `1e-9`)
/// on each pair of pre-softmax feature vectors.
pub fn verify_lipschitz(head: &LinearHead, pairs: &[(Vector, Vector)]) -> Result<LipschitzReport> {
    let sigma_max = largest_singular_value(head.weights(), DEFAULT_SVD_TOL, DEFAULT_SVD_MAX_ITER)?;
    let bound = sigma_max * (1.0 + 1e-9);
    let mut ratios = Vec::with_capacity(pairs.len());
    let mut skipped = Vec::new();
    let mut violations = Vec::new();
    let mut max_ratio: f64 = 0.0;
    for (k, (a, b)) in pairs.iter().enumerate() {
        let za = head.scores(a)?;
        let zb = head.scores(b)?;
        let dx = dist2(a, b);
        if dx == 0.0 {
            skipped.push(k);
            ratios.push(None);
            continue;
        }
        let ratio = dist2(&za, &zb) / dx;
        if ratio > bound {
            violations.push(k);
        }
        max_ratio = max_ratio.max(ratio);
        ratios.push(Some(ratio));
    }
    Ok(LipschitzReport {
        sigma_max,
        ratios,
        max_ratio,
        skipped,
        violations,
    })
}

/// Score gap `z_i − z_j` at `x`; positive when `i` wins.
pub fn score_gap(head: &LinearHead, x: &[f64], i: usize, j: usize) -> f64 {
    let w = head.weights();
    let diff: Vec<f64> = (0..head.features()).map(|r| w.get(r, i) - w.get(r, j)).collect();
    dot_unchecked(x, &diff) + head.bias()[i] - head.bias()[j]
}

#[cfg(test)]
#[allow(clippy::approx_constant)]
mod tests {
    use super::*;
    use crate::tensor::Matrix;

    fn identity_head(n: usize) -> LinearHead {
        LinearHead::new(Matrix::identity(n), vec![0.0; n]).unwrap()
    }

    fn cfg() -> AuditConfig {
        AuditConfig::default()
    }

    #[test]
    fn classify_examples() {
        let h = identity_head(2);
        assert_eq!(classify(&h, &[2.0, 1.0]).unwrap(), vec![0]);
        assert_eq!(classify(&h, &[1.0, 1.0]).unwrap(), vec![0, 1]);
        let biased = LinearHead::new(Matrix::zeros(2, 2), vec![10.0, 0.0]).unwrap();
        assert_eq!(classify(&biased, &[5.0, 7.0]).unwrap(), vec![0]);
        assert!(classify(&h, &[1.0]).is_err());
    }

    #[test]
    fn flip_point_two_classes() {
        let r = closest_flip_point(&identity_head(2), &[2.0, 1.0], 0, 1, &cfg()).unwrap();
        assert!((r.point[0] - 1.5).abs() < 1e-12 && (r.point[1] - 1.5).abs() < 1e-12);
        assert!((r.distance - 0.5f64.sqrt()).abs() < 1e-12);
        assert!(r.active_set.is_empty());
    }

    #[test]
    fn flip_point_with_active_score_constraint() {
        let r = closest_flip_point(&identity_head(3), &[3.0, 2.0, 0.0], 0, 2, &cfg()).unwrap();
        for v in &r.point {
            assert!((v - 5.0 / 3.0).abs() < 1e-12, "{:?}", r.point);
        }
        assert!((r.distance - 2.160_246_899_5).abs() < 1e-9);
        assert_eq!(r.active_set, vec![ActiveConstraint::ClassScore(1)]);
    }

    #[test]
    fn query_on_boundary_is_its_own_flip_point() {
        let r = closest_flip_point(&identity_head(2), &[1.0, 1.0], 0, 1, &cfg()).unwrap();
        assert_eq!(r.point, vec![1.0, 1.0]);
        assert_eq!(r.distance, 0.0);
    }

    #[test]
    fn nonnegativity_becomes_active() {
        // z0 = y1, z1 = y0 − 2; the tie y0 − y1 = 2 projects to (1.75, −0.25)
        // without the sign constraint, to (2, 0) with it
        let w = Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap();
        let h = LinearHead::new(w, vec![0.0, -2.0]).unwrap();
        let r = closest_flip_point(&h, &[0.5, 1.0], 0, 1, &cfg()).unwrap();
        assert_eq!(r.point, vec![2.0, 0.0]);
        assert!((r.distance - 3.25f64.sqrt()).abs() < 1e-12);
        assert_eq!(r.active_set, vec![ActiveConstraint::NonNegative(1)]);
    }

    #[test]
    fn unreachable_boundary_is_infeasible() {
        // class 0 dominates class 1 on the whole orthant
        let w = Matrix::from_rows(&[[1.0, 0.0], [1.0, 0.0]]).unwrap();
        let h = LinearHead::new(w, vec![1.0, 0.0]).unwrap();
        let err = closest_flip_point(&h, &[1.0, 1.0], 0, 1, &cfg()).unwrap_err();
        assert!(matches!(err, Error::Infeasible(_)), "{err}");
        let p = margin_profile(&h, &[1.0, 1.0], &cfg()).unwrap();
        assert_eq!(p.unreachable, vec![1]);
        assert!(p.min_margin.is_infinite());
        assert_eq!(p.argmin_class, None);
    }

    #[test]
    fn flip_point_rejects_bad_pairs_and_negative_queries() {
        let h = identity_head(2);
        assert!(closest_flip_point(&h, &[2.0, 1.0], 0, 0, &cfg()).is_err());
        assert!(closest_flip_point(&h, &[2.0, 1.0], 0, 2, &cfg()).is_err());
        assert!(closest_flip_point(&h, &[2.0, -1.0], 0, 1, &cfg()).is_err());
    }

    #[test]
    fn margin_profile_examples() {
        let p = margin_profile(&identity_head(3), &[3.0, 2.0, 0.0], &cfg()).unwrap();
        assert_eq!(p.predicted_class, 0);
        assert_eq!(p.per_class_distance[0], None);
        assert!((p.per_class_distance[1].unwrap() - 0.707_106_78).abs() < 1e-6);
        assert!((p.per_class_distance[2].unwrap() - 2.160_25).abs() < 1e-5);
        assert!((p.min_margin - 0.707_106_78).abs() < 1e-6);
        assert_eq!(p.argmin_class, Some(1));

        let p = margin_profile(&identity_head(2), &[2.0, 1.0], &cfg()).unwrap();
        assert!((p.min_margin - 0.707_106_78).abs() < 1e-6);
        assert_eq!(p.argmin_class, Some(1));

        let err = margin_profile(&identity_head(2), &[1.0, 1.0], &cfg()).unwrap_err();
        assert!(err.to_string().contains("ambiguous predicted class"));
    }

    #[test]
    fn ball_membership_is_strict() {
        let h = identity_head(2);
        let center = [2.0, 1.0];
        let margin = 0.5f64.sqrt();
        // (2, 1) + 0.5·(1, 0) is at distance 0.5; the flip point is at the margin
        let flip = closest_flip_point(&h, &center, 0, 1, &cfg()).unwrap().point;
        let rows = Matrix::from_rows(&[vec![2.5, 1.0], flip.clone()]).unwrap();
        let cands = FeatureDataset::new(rows, vec![0, 0], 2).unwrap();
        let inside = ball_contains(&h, &center, &cands, &cfg()).unwrap();
        assert!((dist2(&flip, &center) - margin).abs() < 1e-12);
        assert_eq!(inside, vec![0]);
        let empty = FeatureDataset::new(Matrix::zeros(0, 2), vec![], 2).unwrap();
        assert!(ball_contains(&h, &center, &empty, &cfg()).unwrap().is_empty());
    }

    #[test]
    fn lipschitz_examples() {
        let h = identity_head(3);
        let pairs = vec![(vec![0.0, 1.0, 2.0], vec![1.0, 0.0, 2.0]), (vec![1.0; 3], vec![1.0; 3])];
        let rep = verify_lipschitz(&h, &pairs).unwrap();
        assert!(rep.holds());
        assert!(rep.max_ratio <= 1.0 + 1e-12);
        assert_eq!(rep.skipped, vec![1]);

        let h = LinearHead::new(Matrix::from_diag(&[3.0, 4.0]), vec![0.0, 0.0]).unwrap();
        let rep = verify_lipschitz(&h, &[(vec![0.0, 0.0], vec![0.0, 1.0])]).unwrap();
        assert!((rep.max_ratio - 4.0).abs() < 1e-12);
        assert!((rep.sigma_max - 4.0).abs() < 1e-9);
        assert!(rep.holds());
    }
}
