//! Dataset-level analyses: ambiguity indicator, adversarial flags, union of
//! guaranteed-classification balls, and the consolidated audit report.

use rayon::prelude::*;
use serde::Serialize;

use crate::boundary::{margin_profile, margin_profiles, MarginProfile};
use crate::config::AuditConfig;
use crate::error::{Error, Result};
use crate::hull::{accuracy_from_projections, project_batch, support_label_stats, HullProjection, ProjectedAccuracy};
use crate::model::{FeatureDataset, LinearHead};
use crate::tensor::{dist2, Vector};

/// A per-sample failure recorded instead of aborting a scan.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleError {
    pub set: &'static str,
    pub index: usize,
    pub operation: &'static str,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AmbiguityRecord {
    pub index: usize,
    pub d_flip: f64,
    pub d_hull: f64,
    /// `d_flip - d_hull`; negative values mark ambiguous samples.
    pub indicator: f64,
}

impl AmbiguityRecord {
    pub fn new(index: usize, d_flip: f64, d_hull: f64) -> Self {
        AmbiguityRecord { index, d_flip, d_hull, indicator: d_flip - d_hull }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AmbiguityScan {
    /// Most ambiguous first.
    pub records: Vec<AmbiguityRecord>,
    pub errors: Vec<SampleError>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AdversarialFlag {
    pub index: usize,
    pub d_flip: f64,
    pub d_hull: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdversarialScan {
    pub threshold: f64,
    pub flags: Vec<AdversarialFlag>,
    pub errors: Vec<SampleError>,
}

/// Boundary and hull distance of every query row; failures become errors.
struct SampleDistances {
    profiles: Vec<Option<MarginProfile>>,
    hulls: Vec<Option<HullProjection>>,
    errors: Vec<SampleError>,
}

fn record_error(errors: &mut Vec<SampleError>, set: &'static str, index: usize, operation: &'static str, e: Error) {
    errors.push(SampleError { set, index, operation, message: e.to_string() });
}

fn sample_distances(
    train: &FeatureDataset,
    queries: &FeatureDataset,
    head: &LinearHead,
    set: &'static str,
    cfg: &AuditConfig,
) -> Result<SampleDistances> {
    train.check_dim(head.features(), "training set")?;
    queries.check_dim(head.features(), "query set")?;
    let mut errors = Vec::new();
    let profiles = margin_profiles(head, queries, cfg)
        .into_iter()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| record_error(&mut errors, set, i, "margin", e)).ok())
        .collect();
    let hulls = if train.is_empty() {
        (0..queries.len())
            .map(|i| {
                record_error(&mut errors, set, i, "hull", Error::invalid("training set is empty"));
                None
            })
            .collect()
    } else {
        project_batch(train, queries, cfg)
            .into_iter()
            .enumerate()
            .map(|(i, r)| r.map_err(|e| record_error(&mut errors, set, i, "hull", e)).ok())
            .collect()
    };
    errors.sort_by_key(|e| (e.index, e.operation));
    Ok(SampleDistances { profiles, hulls, errors })
}

impl SampleDistances {
    fn pairs(&self) -> impl Iterator<Item = (usize, f64, f64)> + '_ {
        self.profiles
            .iter()
            .zip(&self.hulls)
            .enumerate()
            .filter_map(|(i, (p, h))| Some((i, p.as_ref()?.min_margin, h.as_ref()?.distance)))
    }

    fn ambiguity(&self) -> Vec<AmbiguityRecord> {
        let mut records: Vec<AmbiguityRecord> = self.pairs().map(|(i, f, h)| AmbiguityRecord::new(i, f, h)).collect();
        records.sort_by(|a, b| a.indicator.total_cmp(&b.indicator).then(a.index.cmp(&b.index)));
        records
    }

    fn flags(&self, threshold: f64) -> Vec<AdversarialFlag> {
        self.pairs()
            .map(|(index, d_flip, d_hull)| AdversarialFlag { index, d_flip, d_hull, flagged: is_flagged(d_flip, threshold) })
            .collect()
    }
}

/// The adversarial rule: boundary distance at most the threshold.
pub fn is_flagged(d_flip: f64, threshold: f64) -> bool {
    d_flip <= threshold
}

/// Ambiguity indicator of every query, sorted ascending (most ambiguous
/// first). Samples whose distances cannot be computed are listed as errors.
pub fn ambiguity_scan(
    train: &FeatureDataset,
    queries: &FeatureDataset,
    head: &LinearHead,
    cfg: &AuditConfig,
) -> Result<AmbiguityScan> {
    let d = sample_distances(train, queries, head, "query", cfg)?;
    Ok(AmbiguityScan { records: d.ambiguity(), errors: d.errors })
}

/// Flags queries whose boundary distance is at most the configured
/// threshold (inclusive).
pub fn adversarial_flags(
    train: &FeatureDataset,
    queries: &FeatureDataset,
    head: &LinearHead,
    cfg: &AuditConfig,
) -> Result<AdversarialScan> {
    let d = sample_distances(train, queries, head, "query", cfg)?;
    Ok(AdversarialScan {
        threshold: cfg.adversarial_threshold,
        flags: d.flags(cfg.adversarial_threshold),
        errors: d.errors,
    })
}

/// Moves `x` the given fraction of the way to its closest flip point.
pub fn boundary_push(head: &LinearHead, x: &[f64], fraction: f64, cfg: &AuditConfig) -> Result<Vector> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::invalid(format!("push fraction must lie in [0, 1), got {fraction}")));
    }
    let profile = margin_profile(head, x, cfg)?;
    let Some(flip) = profile.closest else {
        return Err(Error::Infeasible("no decision boundary reachable from this point".into()));
    };
    Ok(x.iter().zip(&flip.point).map(|(a, p)| a + fraction * (p - a)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegionStats {
    /// Minimum margin of each training sample; `None` where it failed.
    pub radii: Vec<Option<f64>>,
    /// Points of train ∪ probe, other than the sample itself, strictly
    /// inside each training sample's ball (0 where the radius failed).
    pub contained_counts: Vec<usize>,
    /// Share of training samples whose ball contains another point.
    pub fraction_containing_other: f64,
    pub mean_contained: f64,
    pub max_contained: usize,
    /// Share of probe samples inside at least one training ball.
    pub probe_coverage: f64,
    pub probe_covered: usize,
    pub probe_size: usize,
    pub failed: usize,
    pub errors: Vec<SampleError>,
    pub notes: Vec<String>,
}

/// Containment statistics for the balls `B(x_i, margin_i)` around the
/// training samples.
pub fn union_region_stats(
    train: &FeatureDataset,
    probe: &FeatureDataset,
    head: &LinearHead,
    cfg: &AuditConfig,
) -> Result<RegionStats> {
    train.check_dim(head.features(), "training set")?;
    probe.check_dim(head.features(), "probe set")?;
    let mut errors = Vec::new();
    let radii: Vec<Option<f64>> = margin_profiles(head, train, cfg)
        .into_iter()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| record_error(&mut errors, "train", i, "margin", e)).ok().map(|p| p.min_margin))
        .collect();
    Ok(region_stats_from_radii(train, probe, radii, errors))
}

fn region_stats_from_radii(
    train: &FeatureDataset,
    probe: &FeatureDataset,
    radii: Vec<Option<f64>>,
    errors: Vec<SampleError>,
) -> RegionStats {
    let n = train.len();
    // Points of train ∪ probe sorted by their first coordinate; a point can
    // only be within r of a center if its first coordinate is.
    let point = |k: usize| if k < n { train.row(k) } else { probe.row(k - n) };
    let total = n + probe.len();
    let first = |k: usize| point(k).first().copied().unwrap_or(0.0);
    let mut order: Vec<usize> = (0..total).collect();
    order.sort_by(|&a, &b| first(a).total_cmp(&first(b)).then(a.cmp(&b)));
    let keys: Vec<f64> = order.iter().map(|&k| first(k)).collect();

    let inside: Vec<Vec<usize>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let Some(r) = radii[i] else { return Vec::new() };
            let c = train.row(i);
            let (lo, hi) = if r.is_finite() {
                let slack = r * 1e-12 + f64::MIN_POSITIVE;
                (first(i) - r - slack, first(i) + r + slack)
            } else {
                (f64::NEG_INFINITY, f64::INFINITY)
            };
            let start = keys.partition_point(|&v| v < lo);
            let end = keys.partition_point(|&v| v <= hi);
            let mut hits: Vec<usize> = order[start..end]
                .iter()
                .copied()
                .filter(|&k| k != i && dist2(point(k), c) < r)
                .collect();
            hits.sort_unstable();
            hits
        })
        .collect();

    let contained_counts: Vec<usize> = inside.iter().map(Vec::len).collect();
    let valid: Vec<usize> = (0..n).filter(|&i| radii[i].is_some()).collect();
    let failed = n - valid.len();
    let frac = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let containing = valid.iter().filter(|&&i| contained_counts[i] > 0).count();
    let mean_contained = frac(valid.iter().map(|&i| contained_counts[i]).sum(), valid.len());
    let max_contained = valid.iter().map(|&i| contained_counts[i]).max().unwrap_or(0);

    let mut covered = vec![false; probe.len()];
    for hits in &inside {
        for &k in hits.iter().filter(|&&k| k >= n) {
            covered[k - n] = true;
        }
    }
    let probe_covered = covered.iter().filter(|&&c| c).count();
    let mut notes = Vec::new();
    if probe.is_empty() {
        notes.push("probe set is empty; coverage reported as 0".to_string());
    }
    if failed > 0 {
        notes.push(format!("{failed} training samples without a radius are excluded from the aggregates"));
    }
    RegionStats {
        radii,
        contained_counts,
        fraction_containing_other: frac(containing, valid.len()),
        mean_contained,
        max_contained,
        probe_coverage: frac(probe_covered, probe.len()),
        probe_covered,
        probe_size: probe.len(),
        failed,
        errors,
        notes,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    /// `bins + 1` edges from 0 to the largest value; empty without data.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Equal-width histogram over `[0, max]`; the maximum falls in the last bin.
pub fn histogram(values: &[f64], bins: usize) -> Histogram {
    if values.is_empty() || bins == 0 {
        return Histogram { edges: Vec::new(), counts: Vec::new() };
    }
    let max = values.iter().copied().fold(0.0, f64::max);
    let upper = if max > 0.0 { max } else { 1.0 };
    let width = upper / bins as f64;
    let edges = (0..=bins).map(|k| if k == bins { upper } else { k as f64 * width }).collect();
    let mut counts = vec![0; bins];
    for &v in values {
        let k = ((v / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    Histogram { edges, counts }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Distribution {
    /// Per test sample; `None` where the computation failed.
    pub values: Vec<Option<f64>>,
    /// Samples with no reachable boundary, left out of the histogram.
    pub infinite: usize,
    pub histogram: Histogram,
}

fn distribution(values: Vec<Option<f64>>, bins: usize) -> Distribution {
    let finite: Vec<f64> = values.iter().flatten().copied().filter(|v| v.is_finite()).collect();
    let infinite = values.iter().flatten().filter(|v| v.is_infinite()).count();
    Distribution { histogram: histogram(&finite, bins), values, infinite }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AmbiguitySummary {
    pub count: usize,
    /// Samples with a negative indicator.
    pub ambiguous: usize,
    /// The most ambiguous samples, at most `ambiguity_top_k`.
    pub top: Vec<AmbiguityRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdversarialSummary {
    pub threshold: f64,
    pub count: usize,
    pub flagged: Vec<AdversarialFlag>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupportSummary {
    pub samples: usize,
    /// Mean share of support rows carrying the test sample's label.
    pub mean_by_count: Option<f64>,
    /// Mean share of hull weight carried by rows with the test label.
    pub mean_by_mass: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportSummary {
    pub train_size: usize,
    pub test_size: usize,
    pub features: usize,
    pub classes: usize,
    /// Test samples with both distances available.
    pub compared: usize,
    /// Share of compared test samples closer to the hull than to a boundary.
    pub hull_closer_fraction: Option<f64>,
    pub error_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub summary: ReportSummary,
    pub margins: Distribution,
    pub hull_distances: Distribution,
    pub ambiguity: AmbiguitySummary,
    pub adversarial: AdversarialSummary,
    pub union_regions: RegionStats,
    pub support_stats: SupportSummary,
    pub projected_accuracy: ProjectedAccuracy,
    pub errors: Vec<SampleError>,
}

impl AuditReport {
    pub fn is_partial(&self) -> bool {
        !self.errors.is_empty()
    }
}

/// Runs every analysis for the test set against the training set.
pub fn audit_report(
    train: &FeatureDataset,
    test: &FeatureDataset,
    head: &LinearHead,
    cfg: &AuditConfig,
) -> Result<AuditReport> {
    let d = sample_distances(train, test, head, "test", cfg)?;
    let union_regions = union_region_stats(train, test, head, cfg)?;

    let records = d.ambiguity();
    let pairs: Vec<(usize, f64, f64)> = d.pairs().collect();
    let closer = pairs.iter().filter(|(_, f, h)| h < f).count();

    let mut by_count = Vec::new();
    let mut by_mass = Vec::new();
    let mut errors = d.errors.clone();
    for (i, h) in d.hulls.iter().enumerate() {
        if let Some(h) = h {
            match support_label_stats(h, train.labels(), test.label(i)) {
                Ok(s) => {
                    by_count.push(s.by_count);
                    by_mass.push(s.by_mass);
                }
                Err(e) => record_error(&mut errors, "test", i, "support", e),
            }
        }
    }
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);

    let projected: Vec<usize> = (0..test.len()).filter(|&i| d.hulls[i].is_some()).collect();
    let projections: Vec<HullProjection> = projected.iter().map(|&i| d.hulls[i].clone().unwrap()).collect();
    let projected_accuracy = accuracy_from_projections(&test.subset(&projected), head, &projections)?;

    errors.extend(union_regions.errors.iter().cloned());
    let margins = distribution(d.profiles.iter().map(|p| p.as_ref().map(|p| p.min_margin)).collect(), cfg.histogram_bins);
    let hull_distances = distribution(d.hulls.iter().map(|h| h.as_ref().map(|h| h.distance)).collect(), cfg.histogram_bins);
    let flags = d.flags(cfg.adversarial_threshold);

    Ok(AuditReport {
        summary: ReportSummary {
            train_size: train.len(),
            test_size: test.len(),
            features: head.features(),
            classes: head.classes(),
            compared: pairs.len(),
            hull_closer_fraction: (!pairs.is_empty()).then(|| closer as f64 / pairs.len() as f64),
            error_count: errors.len(),
        },
        margins,
        hull_distances,
        ambiguity: AmbiguitySummary {
            count: records.len(),
            ambiguous: records.iter().filter(|r| r.indicator < 0.0).count(),
            top: records.iter().take(cfg.ambiguity_top_k).copied().collect(),
        },
        adversarial: AdversarialSummary {
            threshold: cfg.adversarial_threshold,
            count: flags.len(),
            flagged: flags.into_iter().filter(|f| f.flagged).collect(),
        },
        union_regions,
        support_stats: SupportSummary {
            samples: by_count.len(),
            mean_by_count: mean(&by_count),
            mean_by_mass: mean(&by_mass),
        },
        projected_accuracy,
        errors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Matrix;

    fn cfg() -> AuditConfig {
        AuditConfig::default()
    }

    fn identity_head() -> LinearHead {
        LinearHead::new(Matrix::identity(2), vec![0.0, 0.0]).unwrap()
    }

    fn data(rows: &[[f64; 2]], labels: Vec<usize>) -> FeatureDataset {
        FeatureDataset::new(Matrix::from_rows(rows).unwrap(), labels, 2).unwrap()
    }

    #[test]
    fn indicator_examples() {
        let r = AmbiguityRecord::new(0, 0.3745, 2.143);
        assert!((r.indicator + 1.7685).abs() < 1e-12);
        let r = AmbiguityRecord::new(0, 1.225, 0.605);
        assert!((r.indicator - 0.620).abs() < 1e-12);
        assert_eq!(AmbiguityRecord::new(0, 0.5, 0.5).indicator, 0.0);
    }

    #[test]
    fn flag_rule_is_inclusive() {
        assert!(is_flagged(0.0001, 0.01));
        assert!(!is_flagged(2.494, 0.01));
        assert!(is_flagged(0.01, 0.01));
    }

    #[test]
    fn scans_sort_and_record_errors() {
        let train = data(&[[0.0, 0.0], [2.0, 0.0], [0.0, 2.0]], vec![0, 0, 1]);
        // Row 1 is tied between the classes and cannot have a margin.
        let queries = data(&[[3.0, 1.0], [1.0, 1.0], [0.5, 0.2]], vec![0, 0, 0]);
        let scan = ambiguity_scan(&train, &queries, &identity_head(), &cfg()).unwrap();
        assert_eq!(scan.records.len(), 2);
        assert_eq!(scan.errors.len(), 1);
        assert_eq!(scan.errors[0].index, 1);
        assert!(scan.records[0].indicator <= scan.records[1].indicator);
        let first = scan.records.iter().find(|r| r.index == 0).unwrap();
        assert!((first.d_flip - 2f64.sqrt()).abs() < 1e-9);
        assert!((first.d_hull - 2f64.sqrt()).abs() < 1e-9);

        let flags = adversarial_flags(&train, &queries, &identity_head(), &cfg()).unwrap();
        assert_eq!(flags.flags.len(), 2);
        assert!(flags.flags.iter().all(|f| !f.flagged));
    }

    #[test]
    fn push_examples() {
        let head = identity_head();
        let x = [2.0, 1.0];
        assert_eq!(boundary_push(&head, &x, 0.0, &cfg()).unwrap(), x.to_vec());
        let mid = boundary_push(&head, &x, 0.5, &cfg()).unwrap();
        assert!((mid[0] - 1.75).abs() < 1e-12 && (mid[1] - 1.25).abs() < 1e-12);
        let m0 = margin_profile(&head, &x, &cfg()).unwrap().min_margin;
        let m1 = margin_profile(&head, &mid, &cfg()).unwrap().min_margin;
        assert!((m1 - 0.5 * m0).abs() < 1e-9);
        assert!(boundary_push(&head, &x, 1.0, &cfg()).is_err());
    }

    #[test]
    fn union_single_sample_and_pair() {
        let head = identity_head();
        let empty = FeatureDataset::new(Matrix::zeros(0, 2), vec![], 2).unwrap();
        let one = data(&[[2.0, 0.0]], vec![0]);
        let s = union_region_stats(&one, &empty, &head, &cfg()).unwrap();
        assert_eq!(s.fraction_containing_other, 0.0);
        assert_eq!(s.probe_coverage, 0.0);
        assert_eq!(s.notes.len(), 1);

        let two = data(&[[2.0, 0.0], [2.1, 0.1]], vec![0, 0]);
        let s = union_region_stats(&two, &empty, &head, &cfg()).unwrap();
        assert_eq!(s.contained_counts, vec![1, 1]);
        assert_eq!(s.fraction_containing_other, 1.0);
        assert_eq!(s.max_contained, 1);
    }

    #[test]
    fn union_coverage_counts_probe_points() {
        let head = identity_head();
        let train = data(&[[3.0, 0.0], [0.0, 3.0]], vec![0, 1]);
        let probe = data(&[[2.5, 0.5], [1.0, 1.1], [0.2, 2.0]], vec![0, 1, 1]);
        let s = union_region_stats(&train, &probe, &head, &cfg()).unwrap();
        assert_eq!(s.contained_counts, vec![1, 1]);
        assert_eq!(s.probe_covered, 2);
        assert!((s.probe_coverage - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn histogram_edges_and_counts() {
        let h = histogram(&[0.0, 0.5, 1.0], 2);
        assert_eq!(h.edges, vec![0.0, 0.5, 1.0]);
        assert_eq!(h.counts, vec![1, 2]);
        assert!(histogram(&[], 50).edges.is_empty());
        let h = histogram(&[0.0, 0.0], 4);
        assert_eq!(h.counts, vec![2, 0, 0, 0]);
    }

    #[test]
    fn report_on_training_set() {
        let head = identity_head();
        let train = data(&[[2.0, 0.5], [0.5, 2.0], [3.0, 1.0]], vec![0, 1, 0]);
        let r = audit_report(&train, &train, &head, &cfg()).unwrap();
        assert!(!r.is_partial());
        assert!(r.hull_distances.values.iter().all(|v| *v == Some(0.0)));
        assert_eq!(r.summary.hull_closer_fraction, Some(1.0));
        assert_eq!(r.projected_accuracy.accuracy_original, Some(1.0));
        assert_eq!(r.margins.histogram.counts.iter().sum::<usize>(), 3);
        assert_eq!(r.margins.histogram.edges.len(), 51);

        let empty = FeatureDataset::new(Matrix::zeros(0, 2), vec![], 2).unwrap();
        let r = audit_report(&train, &empty, &head, &cfg()).unwrap();
        assert!(!r.is_partial());
        assert!(r.margins.histogram.counts.is_empty());
        assert_eq!(r.summary.hull_closer_fraction, None);
    }
}
