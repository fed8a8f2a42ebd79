//! Projection of feature vectors onto the convex hull of a training set.
//!
//! The projection minimizes `½‖αᵀD − q‖²` over the probability simplex with
//! away-step Frank-Wolfe. Iterates stay sparse: only vertices with positive
//! weight are tracked. Once the Frank-Wolfe gap is small, a corrective step
//! minimizes exactly over the affine hull of the active vertices (moving as
//! far toward that minimizer as the weights stay nonnegative), which drives
//! the gap to rounding level instead of stalling near the tolerance.

use rayon::prelude::*;
use serde::Serialize;

use crate::boundary::classify;
use crate::config::AuditConfig;
use crate::error::{Error, Result};
use crate::model::{FeatureDataset, LinearHead};
use crate::tensor::{cholesky_solve, dist2, dot_unchecked, Matrix, Vector};

#[derive(Debug, Clone, Serialize)]
pub struct HullProjection {
    pub projected: Vector,
    /// One weight per training row; zero outside the active set.
    #[serde(skip)]
    pub alpha: Vector,
    pub distance: f64,
    /// Rows with weight above the support cutoff, ascending.
    pub support: Vec<usize>,
    pub support_weights: Vec<f64>,
    pub duality_gap: f64,
    pub iterations: usize,
}

const POLISH_EVERY: usize = 50;

struct State<'a> {
    points: &'a Matrix,
    query: &'a [f64],
    alpha: Vec<f64>,
    active: Vec<usize>,
    projected: Vec<f64>,
}

impl State<'_> {
    fn recompute(&mut self) {
        self.active.retain(|&i| self.alpha[i] > 0.0);
        let total: f64 = self.active.iter().map(|&i| self.alpha[i]).sum();
        for &i in &self.active {
            self.alpha[i] /= total;
        }
        let f = self.points.cols();
        let mut p = vec![0.0; f];
        for &i in &self.active {
            let a = self.alpha[i];
            for (pk, dk) in p.iter_mut().zip(self.points.row(i)) {
                *pk += a * dk;
            }
        }
        self.projected = p;
    }

    fn objective(&self) -> f64 {
        0.5 * dist2(&self.projected, self.query).powi(2)
    }

    /// Minimizes over the affine hull of the active vertices, then moves
    /// toward that point as far as nonnegativity allows. Returns whether the
    /// objective improved.
    fn polish(&mut self) -> bool {
        let m = self.active.len();
        let f = self.points.cols();
        if m < 2 || m - 1 > f {
            return false;
        }
        let base = self.points.row(self.active[0]);
        let edges: Vec<Vec<f64>> = self.active[1..]
            .iter()
            .map(|&k| self.points.row(k).iter().zip(base).map(|(a, b)| a - b).collect())
            .collect();
        let rhs_vec: Vec<f64> = self.query.iter().zip(base).map(|(q, b)| q - b).collect();
        let mut gram = Matrix::zeros(m - 1, m - 1);
        for a in 0..m - 1 {
            for b in 0..=a {
                let v = dot_unchecked(&edges[a], &edges[b]);
                gram.set(a, b, v);
                gram.set(b, a, v);
            }
        }
        let rhs: Vec<f64> = edges.iter().map(|e| dot_unchecked(e, &rhs_vec)).collect();
        let Some(beta) = cholesky_solve(&gram, &rhs, 1e-13) else {
            return false;
        };
        let mut target = Vec::with_capacity(m);
        target.push(1.0 - beta.iter().sum::<f64>());
        target.extend_from_slice(&beta);

        let current: Vec<f64> = self.active.iter().map(|&i| self.alpha[i]).collect();
        let mut theta: f64 = 1.0;
        for (c, t) in current.iter().zip(&target) {
            if *t < 0.0 {
                theta = theta.min(c / (c - t));
            }
        }
        let before = self.objective();
        let saved = self.alpha.clone();
        for (pos, &i) in self.active.iter().enumerate() {
            let v = current[pos] + theta * (target[pos] - current[pos]);
            self.alpha[i] = if v <= 1e-15 { 0.0 } else { v };
        }
        let saved_active = self.active.clone();
        let saved_projected = self.projected.clone();
        self.recompute();
        if self.objective() <= before {
            true
        } else {
            self.alpha = saved;
            self.active = saved_active;
            self.projected = saved_projected;
            false
        }
    }
}

/// Projects `query` onto the convex hull of the rows of `points`.
pub fn project_onto_rows(points: &Matrix, query: &[f64], cfg: &AuditConfig) -> Result<HullProjection> {
    let n = points.rows();
    if n == 0 {
        return Err(Error::invalid("cannot project onto the hull of an empty set"));
    }
    if query.len() != points.cols() {
        return Err(Error::shape(format!(
            "query has {} features, training set has {}",
            query.len(),
            points.cols()
        )));
    }
    let q_norm2 = dot_unchecked(query, query);
    let gap_tol = cfg.gap_tol * (1.0 + q_norm2);

    let start = (0..n)
        .map(|i| (i, dist2(points.row(i), query)))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
        .0;
    let mut st = State {
        points,
        query,
        alpha: vec![0.0; n],
        active: vec![start],
        projected: points.row(start).to_vec(),
    };
    st.alpha[start] = 1.0;

    let mut polished = false;
    let mut gap = f64::INFINITY;
    for it in 0..cfg.hull_max_iter {
        let r: Vec<f64> = st.projected.iter().zip(query).map(|(p, q)| p - q).collect();
        let gp = dot_unchecked(&r, &st.projected);
        let grads: Vec<f64> = points.row_iter().map(|row| dot_unchecked(&r, row)).collect();
        let (fw, g_fw) = grads
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |b, (i, &g)| if g < b.1 { (i, g) } else { b });
        gap = gp - g_fw;
        if gap <= gap_tol {
            if !polished {
                polished = true;
                if st.polish() {
                    continue;
                }
            }
            return Ok(finish(st, gap, it, cfg));
        }
        if it > 0 && it % POLISH_EVERY == 0 && st.polish() {
            continue;
        }

        let (away, g_away) = st
            .active
            .iter()
            .map(|&i| (i, grads[i]))
            .fold((usize::MAX, f64::NEG_INFINITY), |b, c| if c.1 > b.1 { c } else { b });
        let away_gap = g_away - gp;

        let (dir, gamma_max, toward): (Vec<f64>, f64, bool) = if gap >= away_gap {
            let d = points.row(fw).iter().zip(&st.projected).map(|(a, p)| a - p).collect();
            (d, 1.0, true)
        } else {
            let a = st.alpha[away];
            let d = st.projected.iter().zip(points.row(away)).map(|(p, v)| p - v).collect();
            (d, a / (1.0 - a), false)
        };
        let dd = dot_unchecked(&dir, &dir);
        if dd == 0.0 {
            return Ok(finish(st, gap, it, cfg));
        }
        let gamma = (-dot_unchecked(&r, &dir) / dd).clamp(0.0, gamma_max);
        if toward {
            for &i in &st.active {
                st.alpha[i] *= 1.0 - gamma;
            }
            if st.alpha[fw] == 0.0 && gamma > 0.0 {
                st.active.push(fw);
                polished = false;
            }
            st.alpha[fw] += gamma;
        } else {
            for &i in &st.active {
                st.alpha[i] *= 1.0 + gamma;
            }
            st.alpha[away] -= gamma;
            if gamma >= gamma_max {
                st.alpha[away] = 0.0;
                polished = false;
            }
        }
        st.recompute();
    }
    Err(Error::NonConvergence {
        solver: "hull Frank-Wolfe",
        iterations: cfg.hull_max_iter,
        residual: gap,
        last_iterate: st.projected,
    })
}

fn finish(st: State<'_>, gap: f64, iterations: usize, cfg: &AuditConfig) -> HullProjection {
    let distance = dist2(&st.projected, st.query);
    let mut support: Vec<usize> = st
        .active
        .iter()
        .copied()
        .filter(|&i| st.alpha[i] > cfg.support_cutoff)
        .collect();
    support.sort_unstable();
    let support_weights = support.iter().map(|&i| st.alpha[i]).collect();
    HullProjection {
        projected: st.projected,
        alpha: st.alpha,
        distance,
        support,
        support_weights,
        duality_gap: gap.max(0.0),
        iterations,
    }
}

/// Nearest point to `query` in the convex hull of the training features.
pub fn project_to_hull(train: &FeatureDataset, query: &[f64], cfg: &AuditConfig) -> Result<HullProjection> {
    project_onto_rows(train.features(), query, cfg)
}

/// Projections of every query row, in parallel, in row order.
pub fn project_batch(
    train: &FeatureDataset,
    queries: &FeatureDataset,
    cfg: &AuditConfig,
) -> Vec<Result<HullProjection>> {
    (0..queries.len())
        .into_par_iter()
        .map(|r| project_to_hull(train, queries.row(r), cfg))
        .collect()
}

/// Hull distance of every query row.
pub fn hull_distance_batch(
    train: &FeatureDataset,
    queries: &FeatureDataset,
    cfg: &AuditConfig,
) -> Result<Vector> {
    queries.check_dim(train.dim(), "query set")?;
    project_batch(train, queries, cfg)
        .into_iter()
        .map(|r| r.map(|p| p.distance))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SupportLabelStats {
    /// Share of support rows carrying the query's label.
    pub by_count: f64,
    /// Share of support weight carried by rows with the query's label.
    pub by_mass: f64,
    pub support_size: usize,
}

pub fn support_label_stats(
    projection: &HullProjection,
    train_labels: &[usize],
    query_label: usize,
) -> Result<SupportLabelStats> {
    if projection.support.is_empty() {
        return Err(Error::invalid("hull projection has an empty support set"));
    }
    let mut matching = 0usize;
    let mut mass = 0.0;
    let mut total = 0.0;
    for &i in &projection.support {
        let label = *train_labels
            .get(i)
            .ok_or_else(|| Error::shape(format!("support row {i} has no label")))?;
        let a = projection.alpha[i];
        total += a;
        if label == query_label {
            matching += 1;
            mass += a;
        }
    }
    Ok(SupportLabelStats {
        by_count: matching as f64 / projection.support.len() as f64,
        by_mass: mass / total,
        support_size: projection.support.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProjectedAccuracy {
    /// `None` for an empty test set.
    pub accuracy_original: Option<f64>,
    pub accuracy_projected: Option<f64>,
    pub samples: usize,
}

/// Accuracy of the head on the test rows and on their hull projections.
/// Tied scores count as wrong.
pub fn projected_accuracy(
    train: &FeatureDataset,
    test: &FeatureDataset,
    head: &LinearHead,
    cfg: &AuditConfig,
) -> Result<ProjectedAccuracy> {
    train.check_dim(head.features(), "training set")?;
    test.check_dim(head.features(), "test set")?;
    let projections: Vec<HullProjection> = project_batch(train, test, cfg).into_iter().collect::<Result<_>>()?;
    accuracy_from_projections(test, head, &projections)
}

pub(crate) fn accuracy_from_projections(
    test: &FeatureDataset,
    head: &LinearHead,
    projections: &[HullProjection],
) -> Result<ProjectedAccuracy> {
    let correct = |x: &[f64], label: usize| -> Result<bool> { Ok(classify(head, x)? == [label]) };
    let mut orig = 0usize;
    let mut proj = 0usize;
    for (r, p) in projections.iter().enumerate() {
        orig += correct(test.row(r), test.label(r))? as usize;
        proj += correct(&p.projected, test.label(r))? as usize;
    }
    let n = projections.len();
    let frac = |c: usize| (n > 0).then(|| c as f64 / n as f64);
    Ok(ProjectedAccuracy {
        accuracy_original: frac(orig),
        accuracy_projected: frac(proj),
        samples: n,
    })
}

#[cfg(test)]
#[allow(clippy::approx_constant)]
mod tests {
    use super::*;

    fn triangle() -> FeatureDataset {
        let m = Matrix::from_rows(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]).unwrap();
        FeatureDataset::new(m, vec![0, 1, 1], 2).unwrap()
    }

    fn cfg() -> AuditConfig {
        AuditConfig::default()
    }

    #[test]
    fn exterior_query_projects_onto_edge() {
        let p = project_to_hull(&triangle(), &[1.0, 1.0], &cfg()).unwrap();
        assert!((p.projected[0] - 0.5).abs() < 1e-9 && (p.projected[1] - 0.5).abs() < 1e-9);
        assert!((p.distance - 0.5f64.sqrt()).abs() < 1e-9);
        assert!(p.alpha[0].abs() < 1e-9);
        assert!((p.alpha[1] - 0.5).abs() < 1e-9 && (p.alpha[2] - 0.5).abs() < 1e-9);
        assert_eq!(p.support, vec![1, 2]);
    }

    #[test]
    fn generator_and_interior_queries_have_zero_distance() {
        let t = triangle();
        let p = project_to_hull(&t, &[1.0, 0.0], &cfg()).unwrap();
        assert_eq!(p.distance, 0.0);
        assert_eq!(p.support, vec![1]);
        let p = project_to_hull(&t, &[0.2, 0.2], &cfg()).unwrap();
        assert!(p.distance < 1e-12, "{}", p.distance);
        let sum: f64 = p.alpha.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn batch_distances() {
        let t = triangle();
        assert_eq!(hull_distance_batch(&t, &t, &cfg()).unwrap(), vec![0.0; 3]);
        let q = FeatureDataset::new(Matrix::from_rows(&[[1.0, 1.0]]).unwrap(), vec![0], 2).unwrap();
        let d = hull_distance_batch(&t, &q, &cfg()).unwrap();
        assert!((d[0] - 0.707_11).abs() < 1e-5);
        let empty = FeatureDataset::new(Matrix::zeros(0, 2), vec![], 2).unwrap();
        assert!(hull_distance_batch(&t, &empty, &cfg()).unwrap().is_empty());
    }

    fn fake_projection(alpha: Vec<f64>) -> HullProjection {
        let support: Vec<usize> = (0..alpha.len()).filter(|&i| alpha[i] > 1e-6).collect();
        HullProjection {
            projected: vec![],
            support_weights: support.iter().map(|&i| alpha[i]).collect(),
            support,
            alpha,
            distance: 0.0,
            duality_gap: 0.0,
            iterations: 0,
        }
    }

    #[test]
    fn support_stats_examples() {
        let s = support_label_stats(&fake_projection(vec![0.0, 0.5, 0.5]), &[0, 1, 1], 1).unwrap();
        assert_eq!((s.by_count, s.by_mass), (1.0, 1.0));
        let s = support_label_stats(&fake_projection(vec![0.5, 0.5]), &[0, 1], 0).unwrap();
        assert_eq!((s.by_count, s.by_mass), (0.5, 0.5));
        let s = support_label_stats(&fake_projection(vec![0.9, 0.1]), &[0, 1], 0).unwrap();
        assert_eq!(s.by_count, 0.5);
        assert!((s.by_mass - 0.9).abs() < 1e-15);
        assert!(support_label_stats(&fake_projection(vec![0.0]), &[0], 0).is_err());
    }

    #[test]
    fn projected_accuracy_on_training_subset_is_unchanged() {
        let t = triangle();
        let head = LinearHead::new(Matrix::from_rows(&[[0.0, 1.0], [0.0, 1.0]]).unwrap(), vec![0.5, 0.0]).unwrap();
        let acc = projected_accuracy(&t, &t.subset(&[1, 2]), &head, &cfg()).unwrap();
        assert_eq!(acc.accuracy_original, acc.accuracy_projected);
        assert_eq!(acc.samples, 2);
        let empty = FeatureDataset::new(Matrix::zeros(0, 2), vec![], 2).unwrap();
        let acc = projected_accuracy(&t, &empty, &head, &cfg()).unwrap();
        assert_eq!(acc.accuracy_original, None);
    }

    #[test]
    fn empty_training_set_is_an_error() {
        let empty = FeatureDataset::new(Matrix::zeros(0, 2), vec![], 2).unwrap();
        assert!(project_to_hull(&empty, &[0.0, 0.0], &cfg()).is_err());
        assert!(project_to_hull(&triangle(), &[0.0], &cfg()).is_err());
    }
}
