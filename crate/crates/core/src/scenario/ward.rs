use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // shadowed by std's inherent methods when std is linked
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One agglomeration step: clusters `a < b` (indices into the working set
/// at that step, identified by their smallest member) merged at `cost`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    /// Increase of the within-cluster sum of squares, in standardized units.
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    /// Member indices of each cluster, sorted; clusters ordered by their
    /// smallest member.
    pub members: Vec<Vec<usize>>,
    /// Per-feature mean of each cluster in the original units.
    pub centroids: Vec<Vec<f64>>,
    pub merges: Vec<Merge>,
}

/// Standardizes each column to zero mean and unit variance; constant columns
/// are only centred.
fn standardize(points: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = points.len() as f64;
    let dim = points[0].len();
    let mut out: Vec<Vec<f64>> = points.to_vec();
    for j in 0..dim {
        let mean = points.iter().map(|p| p[j]).sum::<f64>() / n;
        let var = points.iter().map(|p| (p[j] - mean) * (p[j] - mean)).sum::<f64>() / n;
        let sd = var.sqrt();
        let scale = if sd > 1e-12 * (1.0 + mean.abs()) { sd } else { 1.0 };
        for p in out.iter_mut() {
            p[j] = (p[j] - mean) / scale;
        }
    }
    out
}

/// Agglomerative clustering with Ward's minimum-variance linkage down to
/// `w` clusters. Features are standardized per column before measuring
/// distances. Ties go to the lexicographically smallest pair.
pub fn ward_cluster(points: &[Vec<f64>], w: usize) -> Result<Clustering> {
    let n = points.len();
    if w == 0 {
        return Err(Error::InvalidArgument("number of clusters must be positive".into()));
    }
    if w > n {
        return Err(Error::InvalidArgument("more clusters than points".into()));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::InvalidArgument("points have different dimensions".into()));
    }
    let z = standardize(points);
    // Merge cost of two singletons: ½‖x − y‖².
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let s: f64 = z[i].iter().zip(&z[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            d[i * n + j] = 0.5 * s;
            d[j * n + i] = 0.5 * s;
        }
    }
    let mut size = vec![1usize; n];
    let mut alive = vec![true; n];
    let mut members: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut merges = Vec::with_capacity(n - w);
    for _ in 0..(n - w) {
        let mut best = (f64::INFINITY, 0, 0);
        for i in 0..n {
            if !alive[i] {
                continue;
            }
            for j in (i + 1)..n {
                if alive[j] && d[i * n + j] < best.0 {
                    best = (d[i * n + j], i, j);
                }
            }
        }
        let (cost, i, j) = best;
        merges.push(Merge { a: i, b: j, cost });
        let (ni, nj) = (size[i] as f64, size[j] as f64);
        for k in 0..n {
            if !alive[k] || k == i || k == j {
                continue;
            }
            let nk = size[k] as f64;
            let v = ((ni + nk) * d[k * n + i] + (nj + nk) * d[k * n + j] - nk * d[i * n + j]) / (ni + nj + nk);
            d[k * n + i] = v;
            d[i * n + k] = v;
        }
        alive[j] = false;
        size[i] += size[j];
        let moved = core::mem::take(&mut members[j]);
        members[i].extend(moved);
    }
    let mut clusters: Vec<Vec<usize>> = (0..n).filter(|&i| alive[i]).map(|i| {
        let mut m = members[i].clone();
        m.sort_unstable();
        m
    }).collect();
    clusters.sort_by_key(|m| m[0]);
    let centroids = clusters
        .iter()
        .map(|m| (0..dim).map(|f| m.iter().map(|&i| points[i][f]).sum::<f64>() / m.len() as f64).collect())
        .collect();
    Ok(Clustering { members: clusters, centroids, merges })
}

/// Total within-cluster sum of squares of a partition, in the given units.
pub fn within_sum_of_squares(points: &[Vec<f64>], members: &[Vec<usize>]) -> f64 {
    let dim = points[0].len();
    members
        .iter()
        .map(|m| {
            let c: Vec<f64> = (0..dim).map(|f| m.iter().map(|&i| points[i][f]).sum::<f64>() / m.len() as f64).collect();
            m.iter().map(|&i| points[i].iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()).sum::<f64>()
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pts(v: &[f64]) -> Vec<Vec<f64>> {
        v.iter().map(|&x| vec![x]).collect()
    }

    #[test]
    fn three_scalars_match_brute_force() {
        let p = pts(&[0.0, 0.1, 5.0]);
        let c = ward_cluster(&p, 2).unwrap();
        // Every 2-partition of three points isolates one of them.
        let mut best = (f64::INFINITY, 0);
        for lone in 0..3 {
            let rest: Vec<usize> = (0..3).filter(|&i| i != lone).collect();
            let wss = within_sum_of_squares(&p, &[vec![lone], rest]);
            if wss < best.0 {
                best = (wss, lone);
            }
        }
        assert_eq!(best.1, 2);
        assert_eq!(c.members, vec![vec![0, 1], vec![2]]);
    }

    #[test]
    fn singletons_when_w_equals_n() {
        let p = vec![vec![1.0, 2.0], vec![3.0, -1.0], vec![0.5, 0.5]];
        let c = ward_cluster(&p, 3).unwrap();
        assert_eq!(c.members, vec![vec![0], vec![1], vec![2]]);
        assert_eq!(c.centroids, p);
        assert!(ward_cluster(&p, 0).is_err());
        assert!(ward_cluster(&p, 4).is_err());
    }

    #[test]
    fn merge_costs_match_direct_ward_formula() {
        // 1-D points 0, 1, 4, 10. The standard deviation of the set is s; in
        // standardized units distances shrink by s, costs by s².
        let raw = [0.0, 1.0, 4.0, 10.0];
        let p = pts(&raw);
        let c = ward_cluster(&p, 1).unwrap();
        let mean = raw.iter().sum::<f64>() / 4.0;
        let s2 = raw.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 4.0;
        // Ward cost of merging clusters A and B: |A||B|/(|A|+|B|)·‖c_A − c_B‖².
        let ward = |a: &[f64], b: &[f64]| {
            let ca = a.iter().sum::<f64>() / a.len() as f64;
            let cb = b.iter().sum::<f64>() / b.len() as f64;
            let (na, nb) = (a.len() as f64, b.len() as f64);
            na * nb / (na + nb) * (ca - cb) * (ca - cb) / s2
        };
        // By hand: {0,1} costs 0.5; then {0,1}+{4} costs 2/3·3.5² = 8.1667
        // against {4}+{10} at 18; last {0,1,4}+{10} costs 3/4·(10−5/3)².
        assert_eq!((c.merges[0].a, c.merges[0].b), (0, 1));
        assert_abs_diff_eq!(c.merges[0].cost, ward(&[0.0], &[1.0]), epsilon = 1e-12);
        assert_eq!((c.merges[1].a, c.merges[1].b), (0, 2));
        assert_abs_diff_eq!(c.merges[1].cost, ward(&[0.0, 1.0], &[4.0]), epsilon = 1e-12);
        assert_abs_diff_eq!(c.merges[2].cost, ward(&[0.0, 1.0, 4.0], &[10.0]), epsilon = 1e-12);
    }

    #[test]
    fn centroids_are_member_means_and_beat_random_partitions() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p: Vec<Vec<f64>> = (0..60)
            .map(|i| {
                let c = (i % 3) as f64 * 4.0;
                vec![c + rng.gen::<f64>(), 10.0 * (c + rng.gen::<f64>()), 0.0]
            })
            .collect();
        let w = 3;
        let c = ward_cluster(&p, w).unwrap();
        for (m, cen) in c.members.iter().zip(&c.centroids) {
            for f in 0..3 {
                let mean = m.iter().map(|&i| p[i][f]).sum::<f64>() / m.len() as f64;
                assert_abs_diff_eq!(cen[f], mean, epsilon = 1e-12);
            }
        }
        let z = standardize(&p);
        let ours = within_sum_of_squares(&z, &c.members);
        for _ in 0..50 {
            let mut parts = vec![Vec::new(); w];
            for i in 0..p.len() {
                parts[if i < w { i } else { rng.gen_range(0..w) }].push(i);
            }
            assert!(ours <= within_sum_of_squares(&z, &parts) + 1e-9);
        }
    }
}
