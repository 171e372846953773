//! Accuracy summaries across seeds, neighbor-selection quality and
//! communication heatmaps.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::Rotation;
use crate::error::{Error, Result};

/// Normal-approximation multiplier for a two-sided 95% interval.
pub const Z_95: f64 = 1.96;

/// Added to the cross-block mean in [`block_mass_ratio`].
pub const BLOCK_RATIO_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// `None` with a single seed.
    pub ci_half_width: Option<f64>,
    pub num_seeds: usize,
}

impl Summary {
    /// Percentages with one decimal, e.g. `57.8 ± 0.4`.
    pub fn to_percent_string(&self) -> String {
        match self.ci_half_width {
            Some(ci) => format!("{:.1} ± {:.1}", 100.0 * self.mean, 100.0 * ci),
            None => format!("{:.1} ± n/a", 100.0 * self.mean),
        }
    }
}

/// Mean over seeds and `Z_95 * sample_std / sqrt(n)`.
pub fn mean_ci(values: &[f64]) -> Result<Summary> {
    if values.is_empty() {
        return Err(Error::Empty("seed results"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ci_half_width = (values.len() > 1).then(|| {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        Z_95 * var.sqrt() / n.sqrt()
    });
    Ok(Summary {
        mean,
        ci_half_width,
        num_seeds: values.len(),
    })
}

/// Per-seed client accuracies and the clients' ground-truth rotations.
#[derive(Debug, Clone, Copy)]
pub struct SeedAccuracies<'a> {
    pub accuracies: &'a [f64],
    pub rotations: &'a [Rotation],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracySummary {
    pub overall: Summary,
    pub per_rotation: BTreeMap<Rotation, Summary>,
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Clients weigh equally within a seed; the CI is taken across seeds.
pub fn accuracy_summary(seeds: &[SeedAccuracies<'_>]) -> Result<AccuracySummary> {
    if seeds.is_empty() {
        return Err(Error::Empty("seed results"));
    }
    let mut overall = Vec::with_capacity(seeds.len());
    let mut by_rotation: BTreeMap<Rotation, Vec<f64>> = BTreeMap::new();
    for s in seeds {
        if s.accuracies.len() != s.rotations.len() {
            return Err(Error::shape("rotations", s.accuracies.len(), s.rotations.len()));
        }
        overall.push(mean(s.accuracies.iter().copied()).ok_or(Error::Empty("client accuracies"))?);
        let mut groups: BTreeMap<Rotation, Vec<f64>> = BTreeMap::new();
        for (&a, &r) in s.accuracies.iter().zip(s.rotations) {
            groups.entry(r).or_default().push(a);
        }
        for (r, accs) in groups {
            by_rotation.entry(r).or_default().push(mean(accs).unwrap_or(0.0));
        }
    }
    let per_rotation = by_rotation
        .into_iter()
        .map(|(r, v)| Ok((r, mean_ci(&v)?)))
        .collect::<Result<_>>()?;
    Ok(AccuracySummary {
        overall: mean_ci(&overall)?,
        per_rotation,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRecall {
    /// Mean over clients with a non-empty neighbor list; `None` if every list is empty.
    pub precision: Option<f64>,
    /// Mean over all clients that have at least one same-rotation peer.
    pub recall: f64,
}

/// Neighbor-selection quality against the ground-truth rotations.
pub fn precision_recall(neighbor_lists: &[Vec<usize>], rotations: &[Rotation]) -> Result<PrecisionRecall> {
    if neighbor_lists.len() != rotations.len() {
        return Err(Error::shape("neighbor lists", rotations.len(), neighbor_lists.len()));
    }
    let mut precisions = Vec::new();
    let mut recalls = Vec::new();
    for (i, list) in neighbor_lists.iter().enumerate() {
        if let Some(&bad) = list.iter().find(|&&j| j == i || j >= rotations.len()) {
            return Err(Error::InvalidPeer { client: i, peer: bad });
        }
        let hits = list.iter().filter(|&&j| rotations[j] == rotations[i]).count();
        if !list.is_empty() {
            precisions.push(hits as f64 / list.len() as f64);
        }
        let group = rotations.iter().filter(|&&r| r == rotations[i]).count() - 1;
        if group > 0 {
            recalls.push(hits as f64 / group as f64);
        }
    }
    Ok(PrecisionRecall {
        precision: mean(precisions),
        recall: mean(recalls).unwrap_or(0.0),
    })
}

/// Client order for display: by rotation, then by id.
pub fn display_order(rotations: &[Rotation]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..rotations.len()).collect();
    order.sort_by_key(|&i| (rotations[i], i));
    order
}

/// Counts divided by the global maximum, rows and columns reordered by
/// [`display_order`]. An all-zero matrix maps to all zeros.
pub fn heatmap(counts: &[Vec<u64>], rotations: &[Rotation]) -> Result<Vec<Vec<f64>>> {
    let k = counts.len();
    if let Some(row) = counts.iter().find(|r| r.len() != k) {
        return Err(Error::shape("count matrix row", k, row.len()));
    }
    if rotations.len() != k {
        return Err(Error::shape("rotations", k, rotations.len()));
    }
    let max = counts.iter().flatten().copied().max().unwrap_or(0);
    let order = display_order(rotations);
    Ok(order
        .iter()
        .map(|&i| {
            order
                .iter()
                .map(|&j| if max == 0 { 0.0 } else { counts[i][j] as f64 / max as f64 })
                .collect()
        })
        .collect())
}

/// Mean within-rotation off-diagonal entry over mean cross-rotation entry
/// (plus [`BLOCK_RATIO_EPS`]). `matrix` is indexed by client id.
pub fn block_mass_ratio(matrix: &[Vec<f64>], rotations: &[Rotation]) -> Result<f64> {
    let k = rotations.len();
    if matrix.len() != k || matrix.iter().any(|r| r.len() != k) {
        return Err(Error::shape("matrix", k, matrix.len()));
    }
    let mut within = Vec::new();
    let mut cross = Vec::new();
    for i in 0..k {
        for j in 0..k {
            if i == j {
                continue;
            }
            if rotations[i] == rotations[j] {
                within.push(matrix[i][j]);
            } else {
                cross.push(matrix[i][j]);
            }
        }
    }
    let within = mean(within).unwrap_or(0.0);
    let cross = mean(cross).unwrap_or(0.0);
    Ok(within / (cross + BLOCK_RATIO_EPS))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const R0: Rotation = Rotation::R0;
    const R180: Rotation = Rotation::R180;

    #[test]
    fn ci_examples() {
        let s = mean_ci(&[0.5; 4]).unwrap();
        assert_eq!((s.mean, s.ci_half_width), (0.5, Some(0.0)));
        let s = mean_ci(&[0.4, 0.6]).unwrap();
        assert!((s.mean - 0.5).abs() < 1e-15);
        let expected = 1.96 * 0.02f64.sqrt() / 2f64.sqrt();
        assert!((s.ci_half_width.unwrap() - expected).abs() < 1e-12);
        assert!((s.ci_half_width.unwrap() - 0.196).abs() < 1e-3);
        assert_eq!(mean_ci(&[0.7]).unwrap().ci_half_width, None);
        assert!(mean_ci(&[]).is_err());
    }

    #[test]
    fn percent_formatting() {
        let s = Summary {
            mean: 0.578,
            ci_half_width: Some(0.004),
            num_seeds: 4,
        };
        assert_eq!(s.to_percent_string(), "57.8 ± 0.4");
    }

    #[test]
    fn summary_per_rotation() {
        let rot = [R0, R0, R180, R180];
        let a = [1.0, 0.8, 0.4, 0.2];
        let b = [0.8, 0.6, 0.6, 0.4];
        let s = accuracy_summary(&[
            SeedAccuracies { accuracies: &a, rotations: &rot },
            SeedAccuracies { accuracies: &b, rotations: &rot },
        ])
        .unwrap();
        assert!((s.overall.mean - 0.6).abs() < 1e-12);
        assert!((s.per_rotation[&R0].mean - 0.8).abs() < 1e-12);
        assert!((s.per_rotation[&R180].mean - 0.4).abs() < 1e-12);
        assert!(accuracy_summary(&[]).is_err());
    }

    #[test]
    fn precision_counting() {
        // client 0 (rotation 0) picks three rotation-0 peers and one rotation-180 peer
        let rot = [R0, R0, R0, R0, R180, R180];
        let lists = vec![vec![1, 2, 3, 4], vec![], vec![], vec![], vec![], vec![]];
        let pr = precision_recall(&lists, &rot).unwrap();
        assert_eq!(pr.precision, Some(0.75));
        // recall: client 0 -> 1.0, everyone else 0
        assert!((pr.recall - 1.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_selection() {
        let rot: Vec<_> = (0..100).map(|i| if i < 50 { R0 } else { R180 }).collect();
        let lists: Vec<Vec<usize>> = (0..100)
            .map(|i| (0..100).filter(|&j| j != i && rot[j] == rot[i]).collect())
            .collect();
        assert_eq!(lists[0].len(), 49);
        let pr = precision_recall(&lists, &rot).unwrap();
        assert_eq!((pr.precision, pr.recall), (Some(1.0), 1.0));
        assert!(precision_recall(&[vec![0]], &[R0]).is_err());
    }

    #[test]
    fn heatmap_scaling_and_degenerate() {
        let c = vec![vec![0, 8], vec![4, 0]];
        let h = heatmap(&c, &[R0, R0]).unwrap();
        assert_eq!(h, vec![vec![0.0, 1.0], vec![0.5, 0.0]]);
        let z = heatmap(&[vec![0, 0], vec![0, 0]], &[R0, R180]).unwrap();
        assert!(z.iter().flatten().all(|&v| v == 0.0));
        assert!(heatmap(&[vec![0, 1]], &[R0]).is_err());
    }

    #[test]
    fn heatmap_orders_by_rotation() {
        let c = vec![vec![0, 1, 2], vec![3, 0, 4], vec![5, 6, 0]];
        let h = heatmap(&c, &[R180, R0, R180]).unwrap();
        // order: client 1, then 0, then 2
        assert_eq!(h[0], vec![0.0, 3.0 / 6.0, 4.0 / 6.0]);
    }

    #[test]
    fn block_ratio() {
        let rot = [R0, R0, R180, R180];
        let oracle = vec![
            vec![0.0, 1.0, 0.0, 0.0],
            vec![1.0, 0.0, 0.0, 0.0],
            vec![0.0, 0.0, 0.0, 1.0],
            vec![0.0, 0.0, 1.0, 0.0],
        ];
        assert!(block_mass_ratio(&oracle, &rot).unwrap() > 1e11);
        let uniform: Vec<Vec<f64>> = (0..4).map(|i| (0..4).map(|j| if i == j { 0.0 } else { 1.0 }).collect()).collect();
        assert!((block_mass_ratio(&uniform, &rot).unwrap() - 1.0).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn summary_is_permutation_invariant(values in prop::collection::vec(0f64..1.0, 2..8)) {
            let a = mean_ci(&values).unwrap();
            let mut rev = values.clone();
            rev.reverse();
            let b = mean_ci(&rev).unwrap();
            prop_assert!((a.mean - b.mean).abs() < 1e-12);
            prop_assert!((a.ci_half_width.unwrap() - b.ci_half_width.unwrap()).abs() < 1e-12);
        }

        #[test]
        fn heatmap_is_scale_invariant(entries in prop::collection::vec(0u64..50, 9)) {
            let mut c: Vec<Vec<u64>> = entries.chunks(3).map(<[u64]>::to_vec).collect();
            for (i, row) in c.iter_mut().enumerate() {
                row[i] = 0;
            }
            let doubled: Vec<Vec<u64>> = c.iter().map(|r| r.iter().map(|v| 2 * v).collect()).collect();
            let rot = [R0, R180, R0];
            prop_assert_eq!(heatmap(&c, &rot).unwrap(), heatmap(&doubled, &rot).unwrap());
        }
    }
}
