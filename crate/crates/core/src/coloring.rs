//! Greedy graph coloring for race-free parallel Gauss-Seidel sweeps.
//!
//! Two dual schemes are provided. Node coloring (used by the per-node
//! solver) assigns colors so that no two nodes of the same color touch a
//! common element or weak constraint; each element/constraint keeps the set
//! of colors its incident nodes already use, and a node takes the minimal
//! color absent from the union of those sets. Constraint coloring (used by
//! the per-constraint solvers) is the mirror image: constraints of one
//! color share no incident node.
//!
//! When collision constraints appear mid-simulation, only nodes incident
//! to the new constraints are recolored, trying their previous color first.

use crate::constraints::WeakConstraint;
use crate::mesh::SimMesh;

/// Growable bit set over small color ids.
#[derive(Debug, Clone, Default)]
struct ColorSet {
    words: Vec<u64>,
}

impl ColorSet {
    fn insert(&mut self, c: u32) {
        let w = (c / 64) as usize;
        if w >= self.words.len() {
            self.words.resize(w + 1, 0);
        }
        self.words[w] |= 1u64 << (c % 64);
    }

    fn union_into(&self, acc: &mut Vec<u64>) {
        if acc.len() < self.words.len() {
            acc.resize(self.words.len(), 0);
        }
        for (a, w) in acc.iter_mut().zip(&self.words) {
            *a |= w;
        }
    }
}

/// First color id absent from the accumulated mask.
fn minimal_free(acc: &[u64]) -> u32 {
    for (w, &word) in acc.iter().enumerate() {
        if word != u64::MAX {
            return w as u32 * 64 + (!word).trailing_zeros();
        }
    }
    acc.len() as u32 * 64
}

fn contains(acc: &[u64], c: u32) -> bool {
    let w = (c / 64) as usize;
    w < acc.len() && acc[w] & (1u64 << (c % 64)) != 0
}

/// An ordered partition of items (nodes or constraints) into conflict-free
/// color groups: groups are swept in order, items of one group in parallel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColorPartition {
    pub color_of: Vec<u32>,
    pub groups: Vec<Vec<u32>>,
}

impl ColorPartition {
    pub fn num_colors(&self) -> usize {
        self.groups.len()
    }

    pub fn num_items(&self) -> usize {
        self.color_of.len()
    }

    /// Rebuild the per-color item lists from `color_of`, dropping trailing
    /// empty colors. Items stay in ascending order within each group.
    pub fn rebuild_groups(&mut self) {
        let max = self.color_of.iter().copied().max().map_or(0, |c| c + 1);
        let mut groups = vec![Vec::new(); max as usize];
        for (i, &c) in self.color_of.iter().enumerate() {
            groups[c as usize].push(i as u32);
        }
        self.groups = groups;
    }

    /// Sizes of the color groups, for reporting.
    pub fn histogram(&self) -> Vec<usize> {
        self.groups.iter().map(|g| g.len()).collect()
    }
}

/// Color mesh nodes so same-colored nodes share no element and no weak
/// constraint. Greedy minimal-available-color in ascending node order.
pub fn color_nodes<const D: usize>(
    mesh: &SimMesh<D>,
    constraints: &[WeakConstraint<D>],
) -> ColorPartition {
    let n = mesh.num_vertices();
    let node_constraints = node_constraint_lists(n, constraints);
    let mut elem_used = vec![ColorSet::default(); mesh.num_elements()];
    let mut wc_used = vec![ColorSet::default(); constraints.len()];
    let mut color_of = vec![0u32; n];
    let mut mask: Vec<u64> = Vec::new();

    for i in 0..n {
        mask.clear();
        for &(e, _) in mesh.incident_elements(i) {
            elem_used[e as usize].union_into(&mut mask);
        }
        for &c in &node_constraints[i] {
            wc_used[c as usize].union_into(&mut mask);
        }
        let color = minimal_free(&mask);
        color_of[i] = color;
        for &(e, _) in mesh.incident_elements(i) {
            elem_used[e as usize].insert(color);
        }
        for &c in &node_constraints[i] {
            wc_used[c as usize].insert(color);
        }
    }

    let mut partition = ColorPartition {
        color_of,
        groups: Vec::new(),
    };
    partition.rebuild_groups();
    partition
}

/// Color constraints (given as incident-node lists) so same-colored
/// constraints share no node.
pub fn color_constraints(constraint_nodes: &[Vec<u32>]) -> ColorPartition {
    let n = constraint_nodes
        .iter()
        .flatten()
        .copied()
        .max()
        .map_or(0, |m| m as usize + 1);
    let mut node_used = vec![ColorSet::default(); n];
    let mut color_of = vec![0u32; constraint_nodes.len()];
    let mut mask: Vec<u64> = Vec::new();

    for (c, nodes) in constraint_nodes.iter().enumerate() {
        mask.clear();
        for &i in nodes {
            node_used[i as usize].union_into(&mut mask);
        }
        let color = minimal_free(&mask);
        color_of[c] = color;
        for &i in nodes {
            node_used[i as usize].insert(color);
        }
    }

    let mut partition = ColorPartition {
        color_of,
        groups: Vec::new(),
    };
    partition.rebuild_groups();
    partition
}

/// Recolor only the nodes incident to `constraints[new_from..]`, keeping
/// every other color fixed. Each affected node first tries its previous
/// color and otherwise takes the minimal free one. The partition must be
/// valid for `constraints[..new_from]` on entry.
pub fn incremental_recolor<const D: usize>(
    partition: &mut ColorPartition,
    mesh: &SimMesh<D>,
    constraints: &[WeakConstraint<D>],
    new_from: usize,
) {
    if new_from >= constraints.len() {
        return;
    }
    let n = mesh.num_vertices();
    let node_constraints = node_constraint_lists(n, constraints);

    let mut affected: Vec<u32> = constraints[new_from..]
        .iter()
        .flat_map(|wc| wc.nodes())
        .collect();
    affected.sort_unstable();
    affected.dedup();

    let mut mask: Vec<u64> = Vec::new();
    for &i in &affected {
        let i = i as usize;
        mask.clear();
        // Colors of every *other* node sharing a stencil with i.
        let mut acc = ColorSet::default();
        for &(e, _) in mesh.incident_elements(i) {
            for &j in mesh.element(e as usize) {
                if j as usize != i {
                    acc.insert(partition.color_of[j as usize]);
                }
            }
        }
        for &c in &node_constraints[i] {
            for j in constraints[c as usize].nodes() {
                if j as usize != i {
                    acc.insert(partition.color_of[j as usize]);
                }
            }
        }
        acc.union_into(&mut mask);
        let prev = partition.color_of[i];
        if !contains(&mask, prev) {
            continue;
        }
        partition.color_of[i] = minimal_free(&mask);
    }
    partition.rebuild_groups();
}

/// Stencils of the parallel work items a constraint-based solver sweeps:
/// one per element (its two scalar constraints share the stencil and are
/// projected back to back) plus one per weak constraint.
pub fn work_item_stencils<const D: usize>(
    mesh: &SimMesh<D>,
    constraints: &[WeakConstraint<D>],
) -> Vec<Vec<u32>> {
    let mut stencils: Vec<Vec<u32>> = (0..mesh.num_elements())
        .map(|e| mesh.element(e).to_vec())
        .collect();
    for wc in constraints {
        let mut nodes: Vec<u32> = wc.nodes().collect();
        nodes.sort_unstable();
        nodes.dedup();
        stencils.push(nodes);
    }
    stencils
}

fn node_constraint_lists<const D: usize>(
    num_nodes: usize,
    constraints: &[WeakConstraint<D>],
) -> Vec<Vec<u32>> {
    let mut lists = vec![Vec::new(); num_nodes];
    for (c, wc) in constraints.iter().enumerate() {
        let mut nodes: Vec<u32> = wc.nodes().collect();
        nodes.sort_unstable();
        nodes.dedup();
        for i in nodes {
            lists[i as usize].push(c as u32);
        }
    }
    lists
}

/// Validity check used by debug assertions: incident items of every
/// element/constraint have pairwise distinct colors.
pub fn node_coloring_is_valid<const D: usize>(
    partition: &ColorPartition,
    mesh: &SimMesh<D>,
    constraints: &[WeakConstraint<D>],
) -> bool {
    let distinct = |nodes: &mut dyn Iterator<Item = u32>| {
        let mut seen: Vec<u32> = nodes.map(|i| partition.color_of[i as usize]).collect();
        let len = seen.len();
        seen.sort_unstable();
        seen.dedup();
        seen.len() == len
    };
    for e in 0..mesh.num_elements() {
        if !distinct(&mut mesh.element(e).iter().copied()) {
            return false;
        }
    }
    for wc in constraints {
        let mut nodes: Vec<u32> = wc.nodes().collect();
        nodes.sort_unstable();
        nodes.dedup();
        if !distinct(&mut nodes.into_iter()) {
            return false;
        }
    }
    true
}
