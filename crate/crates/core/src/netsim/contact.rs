//! Unit-disk contact graphs and their partitions.

use std::collections::VecDeque;

use super::mobility::Position;

/// Undirected contact graph over node indices `0..n` at one tick.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ContactGraph {
    n: usize,
    /// Sorted, each edge once with `u < v`.
    edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
}

impl ContactGraph {
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut list: Vec<(usize, usize)> = edges
            .into_iter()
            .filter(|(u, v)| u != v)
            .map(|(u, v)| (u.min(v), u.max(v)))
            .collect();
        list.sort_unstable();
        list.dedup();
        let mut adjacency = vec![Vec::new(); n];
        for &(u, v) in &list {
            assert!(v < n, "edge ({u}, {v}) outside {n} nodes");
            adjacency[u].push(v);
            adjacency[v].push(u);
        }
        for a in &mut adjacency {
            a.sort_unstable();
        }
        ContactGraph {
            n,
            edges: list,
            adjacency,
        }
    }

    /// Edge iff distance <= min of the two radio ranges.
    pub fn unit_disk(positions: &[Position], ranges: &[f64]) -> Self {
        assert_eq!(positions.len(), ranges.len());
        let n = positions.len();
        let mut edges = Vec::new();
        for u in 0..n {
            for v in u + 1..n {
                if positions[u].distance(&positions[v]) <= ranges[u].min(ranges[v]) {
                    edges.push((u, v));
                }
            }
        }
        ContactGraph::new(n, edges)
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, u: usize) -> &[usize] {
        &self.adjacency[u]
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.adjacency[u].binary_search(&v).is_ok()
    }

    /// Connected components, members ascending, components ordered by
    /// their smallest member.
    pub fn partitions(&self) -> Vec<Vec<usize>> {
        partitions(self)
    }

    /// Hop distances from `src`; `None` where unreachable.
    pub fn hops_from(&self, src: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.n];
        dist[src] = Some(0);
        let mut queue = VecDeque::from([src]);
        while let Some(u) = queue.pop_front() {
            let d = dist[u].expect("queued nodes have a distance");
            for &v in &self.adjacency[u] {
                if dist[v].is_none() {
                    dist[v] = Some(d + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// Largest hop distance within any component.
    pub fn diameter(&self) -> usize {
        (0..self.n)
            .flat_map(|u| self.hops_from(u).into_iter().flatten())
            .max()
            .unwrap_or(0)
    }
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Connected components by union-find.
pub fn partitions(graph: &ContactGraph) -> Vec<Vec<usize>> {
    let mut parent: Vec<usize> = (0..graph.n).collect();
    for &(u, v) in &graph.edges {
        let (ru, rv) = (find(&mut parent, u), find(&mut parent, v));
        if ru != rv {
            parent[ru.max(rv)] = ru.min(rv);
        }
    }
    let mut by_root: Vec<Vec<usize>> = vec![Vec::new(); graph.n];
    for u in 0..graph.n {
        let r = find(&mut parent, u);
        by_root[r].push(u);
    }
    let mut parts: Vec<Vec<usize>> = by_root.into_iter().filter(|c| !c.is_empty()).collect();
    parts.sort_by_key(|c| c[0]);
    parts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_is_one_component() {
        let g = ContactGraph::new(3, [(0, 1), (1, 2)]);
        assert_eq!(g.partitions(), vec![vec![0, 1, 2]]);
        assert_eq!(g.diameter(), 2);
    }

    #[test]
    fn no_edges_gives_singletons() {
        let g = ContactGraph::new(4, []);
        assert_eq!(g.partitions(), vec![vec![0], vec![1], vec![2], vec![3]]);
    }

    #[test]
    fn unit_disk_uses_smaller_range_inclusive() {
        let pos = [Position::new(0.0, 0.0), Position::new(10.0, 0.0), Position::new(30.0, 0.0)];
        let g = ContactGraph::unit_disk(&pos, &[10.0, 50.0, 20.0]);
        assert!(g.has_edge(0, 1));
        assert!(!g.has_edge(0, 2));
        assert!(g.has_edge(1, 2));
        let g = ContactGraph::unit_disk(&pos, &[9.999, 50.0, 19.0]);
        assert_eq!(g.edges(), &[] as &[(usize, usize)]);
    }

    #[test]
    fn empty_graph() {
        let g = ContactGraph::new(0, []);
        assert!(g.partitions().is_empty());
        assert_eq!(g.diameter(), 0);
    }
}
