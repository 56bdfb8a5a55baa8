//! Electrical networks on the tree: effective resistance, capacity,
//! cutset lower bounds and flow certificates.
//!
//! The network grounds the entire leaf level and injects current at the
//! root, so "effective resistance" always means root-to-leaves. Edges are
//! identified by their child vertex (edge `e_v` joins `parent(v)` to
//! `v`), matching the tree layout.
//!
//! The resistances relevant to the spatial-decay analysis grow like
//! `theta^(-2 level)`; at the critical point that is `b^level`, every
//! level cutset then has total conductance 1, and the effective
//! resistance of the depth-`m` tree is exactly `m` (capacity `1/m`).
//! These exact values anchor the unit tests, with an independent dense
//! Kirchhoff solve as the oracle for irregular resistances.

use crate::error::{Error, Result};
use crate::tree::{IsingParams, TreeShape};
use crate::util::{log_sum_exp, neumaier_sum, NeumaierSum};
use nalgebra::{DMatrix, DVector};

/// Largest vertex count handed to the dense Kirchhoff solver.
pub const KIRCHHOFF_LIMIT: usize = 4096;

/// Conservation / comparison tolerance for flows.
pub const FLOW_TOL: f64 = 1e-9;

/// A complete tree with a positive resistance on every edge.
#[derive(Debug, Clone)]
pub struct ResistorTree<'a> {
    shape: &'a TreeShape,
    resistance: Vec<f64>,
}

impl<'a> ResistorTree<'a> {
    /// Wraps per-edge resistances; `resistance[v]` is the resistance of
    /// the edge into `v`, and entry 0 (the root has no parent edge) must
    /// be 0.
    pub fn new(shape: &'a TreeShape, resistance: Vec<f64>) -> Result<Self> {
        if resistance.len() != shape.n() {
            return Err(Error::invalid(format!(
                "need one resistance per vertex ({}), got {}",
                shape.n(),
                resistance.len()
            )));
        }
        if resistance[0] != 0.0 {
            return Err(Error::invalid("entry 0 is the absent root edge; set it to 0"));
        }
        for (v, &r) in resistance.iter().enumerate().skip(1) {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::invalid(format!(
                    "edge into vertex {v} has non-positive or non-finite resistance {r}"
                )));
            }
        }
        Ok(Self { shape, resistance })
    }

    /// The network matching the pairwise-correlation decay: the edge into
    /// a level-`k` vertex gets resistance `theta^(-2k)`.
    pub fn correlation(shape: &'a TreeShape, params: &IsingParams) -> Result<Self> {
        let theta = params.theta();
        if theta <= 0.0 {
            return Err(Error::invalid(
                "correlation resistances need theta > 0 (positive coupling)",
            ));
        }
        let inv = theta.powi(-2);
        let resistance = (0..shape.n())
            .map(|v| {
                if v == 0 {
                    0.0
                } else {
                    inv.powi(shape.level_of(v) as i32)
                }
            })
            .collect();
        Self::new(shape, resistance)
    }

    #[inline]
    pub fn shape(&self) -> &TreeShape {
        self.shape
    }

    /// Resistance of the edge into `v` (`v >= 1`).
    #[inline]
    pub fn resistance(&self, v: usize) -> f64 {
        self.resistance[v]
    }

    /// Effective resistance from each vertex down to the grounded leaves
    /// of its own subtree (0 at the leaves), by the series-parallel
    /// recursion.
    pub fn subtree_resistance(&self) -> Vec<f64> {
        let n = self.shape.n();
        let mut r_down = vec![0.0f64; n];
        let first_leaf = self.shape.level(self.shape.h()).start;
        for v in (0..first_leaf).rev() {
            let mut conductance = NeumaierSum::new();
            for w in self.shape.children(v) {
                conductance.add(1.0 / (self.resistance[w] + r_down[w]));
            }
            r_down[v] = 1.0 / conductance.value();
        }
        r_down
    }

    /// Root-to-leaves effective resistance.
    pub fn effective_resistance(&self) -> f64 {
        self.subtree_resistance()[0]
    }

    /// Capacity between the root and the leaf level,
    /// `1 / effective_resistance`.
    pub fn capacity(&self) -> f64 {
        1.0 / self.effective_resistance()
    }

    /// The unit-strength harmonic (current) flow from the root to the
    /// leaves: at every branch the current splits proportionally to the
    /// downhill conductances.
    pub fn harmonic_flow(&self) -> TreeFlow {
        let n = self.shape.n();
        let r_down = self.subtree_resistance();
        let mut values = vec![0.0f64; n];
        let mut inflow = vec![0.0f64; n];
        inflow[0] = 1.0;
        let first_leaf = self.shape.level(self.shape.h()).start;
        for v in 0..first_leaf {
            let conductances: Vec<f64> = self
                .shape
                .children(v)
                .map(|w| 1.0 / (self.resistance[w] + r_down[w]))
                .collect();
            let total = neumaier_sum(conductances.iter().copied());
            for (w, c) in self.shape.children(v).zip(conductances) {
                values[w] = inflow[v] * c / total;
                inflow[w] = values[w];
            }
        }
        TreeFlow::new(self, values).expect("harmonic construction conserves current")
    }

    /// Nash–Williams lower bound on the effective resistance from
    /// pairwise edge-disjoint root/leaf cutsets:
    /// `Σ_j ( Σ_{e in Π_j} 1/R_e )^{-1}`.
    ///
    /// Each cutset is a list of edge ids (child vertices). The method
    /// verifies disjointness and that removing each cutset actually
    /// disconnects the root from every leaf.
    pub fn nash_williams_bound(&self, cutsets: &[Vec<usize>]) -> Result<f64> {
        let n = self.shape.n();
        let mut used = vec![false; n];
        for (j, cut) in cutsets.iter().enumerate() {
            if cut.is_empty() {
                return Err(Error::invalid(format!("cutset {j} is empty")));
            }
            let mut in_cut = vec![false; n];
            for &e in cut {
                if e == 0 || e >= n {
                    return Err(Error::invalid(format!(
                        "cutset {j}: {e} is not an edge id (child vertex)"
                    )));
                }
                if used[e] {
                    return Err(Error::invalid(format!(
                        "edge {e} appears in more than one cutset"
                    )));
                }
                used[e] = true;
                in_cut[e] = true;
            }
            // Walk down from the root avoiding the cut edges; reaching a
            // leaf means the set fails to separate.
            let mut stack = vec![0usize];
            while let Some(v) = stack.pop() {
                if self.shape.is_leaf(v) {
                    return Err(Error::invalid(format!(
                        "cutset {j} does not separate the root from the leaves"
                    )));
                }
                for w in self.shape.children(v) {
                    if !in_cut[w] {
                        stack.push(w);
                    }
                }
            }
        }
        let mut bound = NeumaierSum::new();
        for cut in cutsets {
            let conductance = neumaier_sum(cut.iter().map(|&e| 1.0 / self.resistance[e]));
            bound.add(1.0 / conductance);
        }
        Ok(bound.value())
    }

    /// The full family of level cutsets `Π_j = {edges into level j}`,
    /// `j = 1..=h`. These are disjoint and separating by construction,
    /// and for level-homogeneous resistances they attain the effective
    /// resistance exactly.
    pub fn level_cutsets(&self) -> Vec<Vec<usize>> {
        (1..=self.shape.h())
            .map(|k| self.shape.level(k).collect())
            .collect()
    }

    /// Independent dense oracle: solves the Kirchhoff system with the
    /// leaves grounded and unit current injected at the root, returning
    /// the root potential (= effective resistance).
    pub fn kirchhoff_effective_resistance(&self) -> Result<f64> {
        let n = self.shape.n();
        if n > KIRCHHOFF_LIMIT {
            return Err(Error::SizeGuard {
                what: "Kirchhoff solve vertices",
                size: n,
                limit: KIRCHHOFF_LIMIT,
            });
        }
        let m = self.shape.level(self.shape.h()).start;
        let mut lap = DMatrix::<f64>::zeros(m, m);
        for v in 1..n {
            let p = self.shape.parent(v).unwrap();
            let c = 1.0 / self.resistance[v];
            lap[(p, p)] += c;
            if v < m {
                lap[(v, v)] += c;
                lap[(p, v)] -= c;
                lap[(v, p)] -= c;
            }
        }
        let mut rhs = DVector::<f64>::zeros(m);
        rhs[0] = 1.0;
        let sol = lap
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Numerical("singular Kirchhoff system".into()))?;
        Ok(sol[0])
    }

    /// Node potentials of the grounded-leaves, unit-current harmonic
    /// problem (dense solve; potentials at leaves are 0).
    pub fn kirchhoff_potentials(&self) -> Result<Vec<f64>> {
        let n = self.shape.n();
        if n > KIRCHHOFF_LIMIT {
            return Err(Error::SizeGuard {
                what: "Kirchhoff solve vertices",
                size: n,
                limit: KIRCHHOFF_LIMIT,
            });
        }
        let m = self.shape.level(self.shape.h()).start;
        let mut lap = DMatrix::<f64>::zeros(m, m);
        for v in 1..n {
            let p = self.shape.parent(v).unwrap();
            let c = 1.0 / self.resistance[v];
            lap[(p, p)] += c;
            if v < m {
                lap[(v, v)] += c;
                lap[(p, v)] -= c;
                lap[(v, p)] -= c;
            }
        }
        let mut rhs = DVector::<f64>::zeros(m);
        rhs[0] = 1.0;
        let sol = lap
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Numerical("singular Kirchhoff system".into()))?;
        let mut out = vec![0.0; n];
        out[..m].copy_from_slice(sol.as_slice());
        Ok(out)
    }
}

/// A feasible flow from the root to the leaf level: `value(v)` is the
/// current on the edge into `v`, positive toward the leaves, and current
/// is conserved at every internal vertex.
#[derive(Debug, Clone)]
pub struct TreeFlow {
    values: Vec<f64>,
    strength: f64,
    voltage: f64,
    energy: f64,
    max_flow: f64,
}

impl TreeFlow {
    /// Validates conservation against `tree` and precomputes the flow's
    /// strength (current out of the root), voltage (largest root-to-leaf
    /// potential drop `Σ f R` along a path), energy `Σ f^2 R` and largest
    /// edge current.
    pub fn new(tree: &ResistorTree<'_>, values: Vec<f64>) -> Result<Self> {
        let shape = tree.shape();
        let n = shape.n();
        if values.len() != n {
            return Err(Error::invalid(format!(
                "need one flow value per vertex ({n}), got {}",
                values.len()
            )));
        }
        if values[0] != 0.0 {
            return Err(Error::invalid("entry 0 is the absent root edge; set it to 0"));
        }
        let first_leaf = shape.level(shape.h()).start;
        for v in 1..first_leaf {
            let out = neumaier_sum(shape.children(v).map(|w| values[w]));
            if (values[v] - out).abs() > FLOW_TOL * values[v].abs().max(1.0) {
                return Err(Error::invalid(format!(
                    "flow not conserved at vertex {v}: in {} vs out {out}",
                    values[v]
                )));
            }
        }
        let strength = neumaier_sum(shape.children(0).map(|w| values[w]));
        // Potential drop accumulated from the root, per vertex.
        let mut drop = vec![0.0f64; n];
        for v in 1..n {
            let p = shape.parent(v).unwrap();
            drop[v] = drop[p] + values[v] * tree.resistance(v);
        }
        let voltage = shape
            .leaves()
            .map(|v| drop[v])
            .fold(f64::NEG_INFINITY, f64::max);
        let energy = neumaier_sum((1..n).map(|v| values[v] * values[v] * tree.resistance(v)));
        let max_flow = values[1..]
            .iter()
            .fold(0.0f64, |acc, &f| acc.max(f.abs()));
        Ok(Self {
            values,
            strength,
            voltage,
            energy,
            max_flow,
        })
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Current on the edge into `v`.
    #[inline]
    pub fn value(&self, v: usize) -> f64 {
        self.values[v]
    }

    /// Total current leaving the root.
    #[inline]
    pub fn strength(&self) -> f64 {
        self.strength
    }

    /// Largest potential drop along a root-to-leaf path.
    #[inline]
    pub fn voltage(&self) -> f64 {
        self.voltage
    }

    /// Dissipated energy `Σ_e f_e^2 R_e`.
    #[inline]
    pub fn energy(&self) -> f64 {
        self.energy
    }

    /// Largest edge current in absolute value.
    #[inline]
    pub fn max_flow(&self) -> f64 {
        self.max_flow
    }

    /// The same flow rescaled by `c`.
    pub fn scaled(&self, tree: &ResistorTree<'_>, c: f64) -> Self {
        let values = self.values.iter().map(|&f| c * f).collect();
        Self::new(tree, values).expect("scaling preserves conservation")
    }
}

/// Effective resistance of the level-homogeneous network in closed form:
/// with `edge_resistances[k]` the per-edge resistance between levels `k`
/// and `k+1`, symmetry shorts each level into a single node and
///
/// ```text
/// R_eff = Σ_k edge_resistances[k] / b^(k+1).
/// ```
pub fn homogeneous_effective_resistance(b: u32, edge_resistances: &[f64]) -> Result<f64> {
    if b < 2 {
        return Err(Error::invalid(format!("branching factor must be >= 2, got {b}")));
    }
    if edge_resistances.is_empty() {
        return Err(Error::invalid("need at least one level of edges"));
    }
    for (k, &r) in edge_resistances.iter().enumerate() {
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::invalid(format!(
                "level {k} has non-positive or non-finite resistance {r}"
            )));
        }
    }
    let bf = f64::from(b);
    Ok(neumaier_sum(
        edge_resistances
            .iter()
            .enumerate()
            .map(|(k, &r)| r / bf.powi(k as i32 + 1)),
    ))
}

/// Log-domain form of [`homogeneous_effective_resistance`] for trees far
/// too deep for the resistances to fit in a float: takes `ln R` per level
/// and returns `ln R_eff`.
pub fn homogeneous_effective_resistance_log(b: u32, log_edge_resistances: &[f64]) -> Result<f64> {
    if b < 2 {
        return Err(Error::invalid(format!("branching factor must be >= 2, got {b}")));
    }
    if log_edge_resistances.is_empty() {
        return Err(Error::invalid("need at least one level of edges"));
    }
    if log_edge_resistances.iter().any(|r| !r.is_finite()) {
        return Err(Error::invalid("log-resistances must be finite"));
    }
    let log_b = f64::from(b).ln();
    let terms: Vec<f64> = log_edge_resistances
        .iter()
        .enumerate()
        .map(|(k, &lr)| lr - (k as f64 + 1.0) * log_b)
        .collect();
    Ok(log_sum_exp(&terms))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::replica_rng;
    use rand::Rng;

    fn critical_tree(b: u32, h: u32) -> (TreeShape, IsingParams) {
        (
            TreeShape::new(b, h).unwrap(),
            IsingParams::critical(b).unwrap(),
        )
    }

    fn random_resistances<R: Rng>(shape: &TreeShape, rng: &mut R) -> Vec<f64> {
        (0..shape.n())
            .map(|v| if v == 0 { 0.0 } else { 0.5 + 1.5 * rng.random::<f64>() })
            .collect()
    }

    #[test]
    fn correlation_resistances_are_b_to_the_level_at_criticality() {
        let (shape, params) = critical_tree(2, 3);
        let tree = ResistorTree::correlation(&shape, &params).unwrap();
        for v in 1..shape.n() {
            let want = 2f64.powi(shape.level_of(v) as i32);
            assert!(
                (tree.resistance(v) - want).abs() < 1e-12 * want,
                "vertex {v}: resistance {} should be {want}",
                tree.resistance(v)
            );
        }
    }

    #[test]
    fn critical_effective_resistance_equals_depth() {
        for b in [2u32, 3] {
            for m in 1..=10u32 {
                let (shape, params) = critical_tree(b, m);
                let tree = ResistorTree::correlation(&shape, &params).unwrap();
                let r = tree.effective_resistance();
                assert!(
                    (r - f64::from(m)).abs() < 1e-10,
                    "b = {b}, depth {m}: R_eff = {r}"
                );
                assert!((tree.capacity() - 1.0 / f64::from(m)).abs() < 1e-10);
            }
        }
        // Interior values of the recursion: a level-j vertex of the
        // depth-m critical tree sees resistance (m - j) b^j below it.
        let (shape, params) = critical_tree(2, 3);
        let tree = ResistorTree::correlation(&shape, &params).unwrap();
        let r_down = tree.subtree_resistance();
        for v in 0..shape.n() {
            let j = shape.level_of(v);
            let want = f64::from(3 - j) * 2f64.powi(j as i32);
            if shape.is_leaf(v) {
                assert_eq!(r_down[v], 0.0);
            } else {
                assert!((r_down[v] - want).abs() < 1e-12, "vertex {v}");
            }
        }
    }

    #[test]
    fn level_cutsets_attain_equality_for_level_homogeneous_resistances() {
        // Critical case: every level cutset has conductance exactly 1.
        let (shape, params) = critical_tree(2, 5);
        let tree = ResistorTree::correlation(&shape, &params).unwrap();
        let bound = tree.nash_williams_bound(&tree.level_cutsets()).unwrap();
        assert!((bound - tree.effective_resistance()).abs() < 1e-10);

        // Off-critical but still level-homogeneous: equality persists
        // because same-level vertices share the harmonic potential.
        let params = IsingParams::near_critical(2, 0.4).unwrap();
        let tree = ResistorTree::correlation(&shape, &params).unwrap();
        let bound = tree.nash_williams_bound(&tree.level_cutsets()).unwrap();
        let exact = tree.effective_resistance();
        assert!(
            (bound - exact).abs() < 1e-10 * exact,
            "bound {bound} vs exact {exact}"
        );
    }

    #[test]
    fn nash_williams_is_a_strict_lower_bound_for_irregular_resistances() {
        let shape = TreeShape::new(2, 4).unwrap();
        let mut rng = replica_rng(7, 0);
        for trial in 0..5 {
            let tree = ResistorTree::new(&shape, random_resistances(&shape, &mut rng)).unwrap();
            let bound = tree.nash_williams_bound(&tree.level_cutsets()).unwrap();
            let exact = tree.effective_resistance();
            assert!(
                bound <= exact + 1e-12,
                "trial {trial}: bound {bound} exceeds exact {exact}"
            );
        }
    }

    #[test]
    fn nash_williams_rejects_bad_cutsets() {
        let (shape, params) = critical_tree(2, 2);
        let tree = ResistorTree::correlation(&shape, &params).unwrap();
        // Missing one level-1 edge: the root still reaches a leaf.
        assert!(tree.nash_williams_bound(&[vec![1]]).is_err());
        // Overlap between cutsets.
        assert!(tree
            .nash_williams_bound(&[vec![1, 2], vec![2, 3, 4, 5, 6]])
            .is_err());
        // The root is not an edge id.
        assert!(tree.nash_williams_bound(&[vec![0, 1, 2]]).is_err());
        // Mixed-level cutsets that do separate are fine.
        let bound = tree.nash_williams_bound(&[vec![1, 5, 6]]).unwrap();
        assert!(bound > 0.0);
    }

    #[test]
    fn harmonic_flow_satisfies_thomson_and_capacity_bounds() {
        let (shape, params) = critical_tree(2, 4);
        let tree = ResistorTree::correlation(&shape, &params).unwrap();
        let flow = tree.harmonic_flow();
        let r_eff = tree.effective_resistance();
        assert!((flow.strength() - 1.0).abs() < 1e-12);
        // Thomson: the harmonic flow's energy is the effective resistance,
        // and with the leaves grounded every path drop equals it too.
        assert!((flow.energy() - r_eff).abs() < 1e-10);
        assert!((flow.voltage() - r_eff).abs() < 1e-10);
        // Unit-voltage rescaling: strength and edge currents are bounded
        // by the capacity.
        let unit_voltage = flow.scaled(&tree, 1.0 / r_eff);
        assert!((unit_voltage.strength() - tree.capacity()).abs() < 1e-12);
        assert!(unit_voltage.max_flow() <= tree.capacity() + 1e-12);
    }

    #[test]
    fn flow_validation_catches_conservation_violations() {
        let (shape, params) = critical_tree(2, 2);
        let tree = ResistorTree::correlation(&shape, &params).unwrap();
        let mut values = tree.harmonic_flow().values().to_vec();
        values[3] += 0.25;
        assert!(TreeFlow::new(&tree, values).is_err());
    }

    #[test]
    fn kirchhoff_oracle_agrees_with_series_parallel_recursion() {
        let shape = TreeShape::new(2, 4).unwrap();
        let mut rng = replica_rng(11, 0);
        for trial in 0..5 {
            let tree = ResistorTree::new(&shape, random_resistances(&shape, &mut rng)).unwrap();
            let direct = tree.effective_resistance();
            let dense = tree.kirchhoff_effective_resistance().unwrap();
            assert!(
                (direct - dense).abs() < 1e-9 * direct.max(1.0),
                "trial {trial}: recursion {direct} vs Kirchhoff {dense}"
            );
            // Node potentials from the dense solve match the drops of the
            // harmonic flow.
            let flow = tree.harmonic_flow();
            let potentials = tree.kirchhoff_potentials().unwrap();
            for v in 0..shape.n() {
                let mut drop = 0.0;
                let mut u = v;
                while let Some(p) = shape.parent(u) {
                    drop += flow.value(u) * tree.resistance(u);
                    u = p;
                }
                assert!(
                    (potentials[v] - (direct - drop)).abs() < 1e-9,
                    "trial {trial}, vertex {v}"
                );
            }
        }
    }

    #[test]
    fn homogeneous_closed_form_matches_recursion_and_scales_to_deep_trees() {
        let (shape, params) = critical_tree(2, 8);
        let tree = ResistorTree::correlation(&shape, &params).unwrap();
        let per_level: Vec<f64> = (1..=8).map(|k| 2f64.powi(k)).collect();
        let closed = homogeneous_effective_resistance(2, &per_level).unwrap();
        assert!((closed - tree.effective_resistance()).abs() < 1e-10);

        // Log-domain evaluation far past what direct floats could hold:
        // the critical depth-500 tree still has R_eff = 500 exactly.
        let m = 500usize;
        let log_r: Vec<f64> = (1..=m).map(|k| k as f64 * 2f64.ln()).collect();
        let log_reff = homogeneous_effective_resistance_log(2, &log_r).unwrap();
        assert!(
            (log_reff - (m as f64).ln()).abs() < 1e-9,
            "log R_eff = {log_reff}, want ln {m}"
        );
    }
}
