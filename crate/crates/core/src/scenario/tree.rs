use alloc::vec::Vec;

#[allow(unused_imports)] // shadowed by std's inherent methods when std is linked
use num_traits::Float;
use serde::{Deserialize, Serialize};

use super::{Clustering, Trajectory};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub probability: f64,
    pub trajectory: Trajectory,
}

/// Weighted scenarios with their shared-history structure.
///
/// `groups[t][k]` identifies the scenarios whose trajectories agree on steps
/// `0..=t`; the identifier is the smallest scenario index of the group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioTree {
    pub scenarios: Vec<Scenario>,
    pub groups: Vec<Vec<usize>>,
}

impl ScenarioTree {
    /// A one-scenario tree, e.g. the realized future for perfect information.
    pub fn single(trajectory: Trajectory) -> Self {
        let t = trajectory.horizon();
        ScenarioTree { scenarios: alloc::vec![Scenario { probability: 1.0, trajectory }], groups: alloc::vec![alloc::vec![0]; t] }
    }

    pub fn horizon(&self) -> usize {
        self.scenarios[0].trajectory.horizon()
    }

    pub fn n_scenarios(&self) -> usize {
        self.scenarios.len()
    }

    /// Group of each scenario for the decision taken at lookahead stage
    /// `stage` (0 = the action applied now). Stage 0 is shared by all
    /// scenarios; a later stage may differ between scenarios that have
    /// already diverged on steps `0..stage`.
    pub fn decision_groups(&self, stage: usize) -> Vec<usize> {
        if stage == 0 {
            alloc::vec![0; self.n_scenarios()]
        } else {
            self.groups[stage - 1].clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scenarios.is_empty() {
            return Err(Error::InconsistentProblem("scenario tree is empty".into()));
        }
        let t = self.horizon();
        if self.scenarios.iter().any(|s| s.trajectory.horizon() != t) || self.groups.len() != t {
            return Err(Error::InconsistentProblem("scenarios have different horizons".into()));
        }
        let total: f64 = self.scenarios.iter().map(|s| s.probability).sum();
        if (total - 1.0).abs() > 1e-9 || self.scenarios.iter().any(|s| !(s.probability > 0.0)) {
            return Err(Error::InconsistentProblem("scenario probabilities must be positive and sum to 1".into()));
        }
        for (t, g) in self.groups.iter().enumerate() {
            if g.len() != self.n_scenarios() {
                return Err(Error::InconsistentProblem("group table has the wrong width".into()));
            }
            if t > 0 {
                let prev = &self.groups[t - 1];
                for a in 0..g.len() {
                    for b in 0..g.len() {
                        if g[a] == g[b] && prev[a] != prev[b] {
                            return Err(Error::InconsistentProblem("groups are not nested".into()));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Turns clusters of `trajectories` into scenarios weighted by cluster
/// size over `total_count`, with centroid trajectories. Scenarios share a
/// group through step `t` while their centroids agree on every feature of
/// steps `0..=t` within `branch_tolerance`.
pub fn build_tree(clusters: &Clustering, trajectories: &[Trajectory], total_count: usize, branch_tolerance: f64) -> Result<ScenarioTree> {
    if clusters.members.is_empty() || clusters.members.iter().any(|m| m.is_empty()) {
        return Err(Error::InvalidArgument("clusters must be non-empty".into()));
    }
    let scenarios: Vec<Scenario> = clusters
        .members
        .iter()
        .map(|m| Scenario {
            probability: m.len() as f64 / total_count as f64,
            trajectory: Trajectory::mean(m.iter().map(|&i| &trajectories[i])),
        })
        .collect();
    let w = scenarios.len();
    let horizon = scenarios[0].trajectory.horizon();
    let mut groups = Vec::with_capacity(horizon);
    let mut prev: Vec<usize> = alloc::vec![0; w];
    for t in 0..horizon {
        let mut g = alloc::vec![0; w];
        for k in 0..w {
            g[k] = (0..=k)
                .find(|&j| {
                    prev[j] == prev[k]
                        && scenarios[j]
                            .trajectory
                            .step_features(t)
                            .zip(scenarios[k].trajectory.step_features(t))
                            .all(|(a, b)| (a - b).abs() <= branch_tolerance)
                })
                .expect("k matches itself");
        }
        groups.push(g.clone());
        prev = g;
    }
    let tree = ScenarioTree { scenarios, groups };
    tree.validate()?;
    Ok(tree)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{ward_cluster, TrajectoryStep};
    use alloc::vec;
    use approx::assert_abs_diff_eq;

    fn traj(values: &[f64]) -> Trajectory {
        Trajectory {
            steps: values
                .iter()
                .map(|&v| TrajectoryStep { load_power: vec![-v], wind_speed: 0.0, irradiance: 0.0, potentials: vec![v] })
                .collect(),
        }
    }

    #[test]
    fn probabilities_from_cluster_sizes() {
        let mut trajs = Vec::new();
        for i in 0..100 {
            trajs.push(traj(&[if i < 67 { 1.0 } else { 5.0 }, i as f64 * 1e-3]));
        }
        let feats: Vec<Vec<f64>> = trajs.iter().map(|t| t.features()).collect();
        let c = ward_cluster(&feats, 2).unwrap();
        let tree = build_tree(&c, &trajs, 100, 0.0).unwrap();
        assert_abs_diff_eq!(tree.scenarios[0].probability, 0.67, epsilon = 1e-15);
        assert_abs_diff_eq!(tree.scenarios[1].probability, 0.33, epsilon = 1e-15);
        let total: f64 = tree.scenarios.iter().map(|s| s.probability).sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
        assert_eq!(tree.groups[0], vec![0, 1]);
        assert_eq!(tree.decision_groups(0), vec![0, 0]);
        assert_eq!(tree.decision_groups(1), vec![0, 1]);
    }

    #[test]
    fn single_cluster_has_no_branching() {
        let trajs = vec![traj(&[1.0, 2.0]), traj(&[1.5, 2.5])];
        let feats: Vec<Vec<f64>> = trajs.iter().map(|t| t.features()).collect();
        let tree = build_tree(&ward_cluster(&feats, 1).unwrap(), &trajs, 2, 0.0).unwrap();
        assert_eq!(tree.n_scenarios(), 1);
        assert_eq!(tree.scenarios[0].probability, 1.0);
        assert_eq!(tree.scenarios[0].trajectory.steps[0].potentials[0], 1.25);
    }

    #[test]
    fn shared_prefix_delays_branching() {
        let trajs = vec![traj(&[1.0, 2.0, 3.0]), traj(&[1.0, 2.0, 4.0]), traj(&[1.0, 7.0, 7.0])];
        let c = Clustering { members: vec![vec![0], vec![1], vec![2]], centroids: Vec::new(), merges: Vec::new() };
        let tree = build_tree(&c, &trajs, 3, 0.0).unwrap();
        assert_eq!(tree.groups, vec![vec![0, 0, 0], vec![0, 0, 2], vec![0, 1, 2]]);
        tree.validate().unwrap();
        let loose = build_tree(&c, &trajs, 3, 1.5).unwrap();
        assert_eq!(loose.groups[2], vec![0, 0, 2]);
    }
}
