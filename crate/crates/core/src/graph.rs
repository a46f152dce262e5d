//! Streaming sensor network: period-stamped snapshots and the deltas between them.
//!
//! A long-horizon network is a sequence of snapshots where each snapshot is
//! obtained from its predecessor by applying one [`GraphDelta`]. Edges are
//! undirected and stored with their endpoints in ascending order.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Opaque sensor identifier, preserved verbatim from input files.
pub type NodeId = String;

/// Undirected edge with endpoints stored in ascending order.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edge(NodeId, NodeId);

impl Edge {
    /// Builds a normalized edge. Self-loops are rejected.
    pub fn new(a: impl Into<NodeId>, b: impl Into<NodeId>) -> Result<Self> {
        let (a, b) = (a.into(), b.into());
        match a.cmp(&b) {
            std::cmp::Ordering::Less => Ok(Edge(a, b)),
            std::cmp::Ordering::Greater => Ok(Edge(b, a)),
            std::cmp::Ordering::Equal => Err(Error::InvalidDelta(format!("self-loop on `{a}`"))),
        }
    }

    pub fn endpoints(&self) -> (&str, &str) {
        (&self.0, &self.1)
    }

    pub fn touches(&self, v: &str) -> bool {
        self.0 == v || self.1 == v
    }
}

impl fmt::Display for Edge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.0, self.1)
    }
}

/// One period of the sensor network. Immutable once built.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphSnapshot {
    period: i64,
    nodes: BTreeSet<NodeId>,
    edges: BTreeSet<Edge>,
    adjacency: BTreeMap<NodeId, BTreeSet<NodeId>>,
}

impl GraphSnapshot {
    pub fn new(
        period: i64,
        nodes: impl IntoIterator<Item = NodeId>,
        edges: impl IntoIterator<Item = Edge>,
    ) -> Result<Self> {
        let nodes: BTreeSet<NodeId> = nodes.into_iter().collect();
        let edges: BTreeSet<Edge> = edges.into_iter().collect();
        for e in &edges {
            let (a, b) = e.endpoints();
            for v in [a, b] {
                if !nodes.contains(v) {
                    return Err(Error::UnknownNode(v.to_string()));
                }
            }
        }
        Ok(Self::from_parts(period, nodes, edges))
    }

    fn from_parts(period: i64, nodes: BTreeSet<NodeId>, edges: BTreeSet<Edge>) -> Self {
        let mut adjacency: BTreeMap<NodeId, BTreeSet<NodeId>> =
            nodes.iter().map(|v| (v.clone(), BTreeSet::new())).collect();
        for e in &edges {
            let (a, b) = e.endpoints();
            adjacency
                .get_mut(a)
                .expect("endpoint")
                .insert(b.to_string());
            adjacency
                .get_mut(b)
                .expect("endpoint")
                .insert(a.to_string());
        }
        Self {
            period,
            nodes,
            edges,
            adjacency,
        }
    }

    pub fn period(&self) -> i64 {
        self.period
    }

    pub fn nodes(&self) -> &BTreeSet<NodeId> {
        &self.nodes
    }

    pub fn edges(&self) -> &BTreeSet<Edge> {
        &self.edges
    }

    pub fn contains(&self, v: &str) -> bool {
        self.nodes.contains(v)
    }

    pub fn with_period(&self, period: i64) -> Self {
        Self {
            period,
            ..self.clone()
        }
    }

    pub fn neighbors(&self, v: &str) -> Result<&BTreeSet<NodeId>> {
        self.adjacency
            .get(v)
            .ok_or_else(|| Error::UnknownNode(v.to_string()))
    }

    pub fn degree(&self, v: &str) -> Result<usize> {
        self.neighbors(v).map(BTreeSet::len)
    }

    pub fn max_degree(&self) -> usize {
        self.adjacency
            .values()
            .map(BTreeSet::len)
            .max()
            .unwrap_or(0)
    }

    /// Applies `delta` and returns the snapshot for the following period.
    ///
    /// Edge removals are applied first, then node removals (which drop any
    /// remaining incident edges), then node additions, then edge additions.
    pub fn apply_delta(&self, delta: &GraphDelta) -> Result<GraphSnapshot> {
        delta.validate()?;
        let mut nodes = self.nodes.clone();
        let mut edges = self.edges.clone();

        for e in &delta.removed_edges {
            if !edges.remove(e) {
                let (a, b) = e.endpoints();
                return Err(Error::UnknownEdge(a.to_string(), b.to_string()));
            }
        }
        for v in &delta.removed_nodes {
            if !nodes.remove(v) {
                return Err(Error::UnknownNode(v.clone()));
            }
        }
        if !delta.removed_nodes.is_empty() {
            edges.retain(|e| {
                let (a, b) = e.endpoints();
                !delta.removed_nodes.contains(a) && !delta.removed_nodes.contains(b)
            });
        }
        for v in &delta.added_nodes {
            if !nodes.insert(v.clone()) {
                return Err(Error::DuplicateNode(v.clone()));
            }
        }
        for e in &delta.added_edges {
            let (a, b) = e.endpoints();
            for v in [a, b] {
                if !nodes.contains(v) {
                    return Err(Error::UnknownNode(v.to_string()));
                }
            }
            if !edges.insert(e.clone()) {
                return Err(Error::DuplicateEdge(a.to_string(), b.to_string()));
            }
        }
        Ok(Self::from_parts(self.period + 1, nodes, edges))
    }

    /// Reads an adjacency CSV (`from,to`) plus an optional node roster (`node_id`).
    pub fn read_csv(period: i64, adjacency: &Path, roster: Option<&Path>) -> Result<Self> {
        let mut nodes = BTreeSet::new();
        let mut edges = BTreeSet::new();

        let mut rdr = csv::Reader::from_path(adjacency).map_err(|e| csv_error(adjacency, e))?;
        expect_header(adjacency, &mut rdr, &["from", "to"])?;
        for rec in rdr.records() {
            let rec = rec.map_err(|e| csv_error(adjacency, e))?;
            let line = rec.position().map_or(0, |p| p.line());
            let (a, b) = (rec[0].trim(), rec[1].trim());
            if a.is_empty() || b.is_empty() {
                return Err(Error::parse(adjacency, line, "empty node id"));
            }
            let e = Edge::new(a, b).map_err(|e| Error::parse(adjacency, line, e.to_string()))?;
            if !edges.insert(e) {
                return Err(Error::parse(
                    adjacency,
                    line,
                    format!("duplicate edge {a}-{b}"),
                ));
            }
            nodes.insert(a.to_string());
            nodes.insert(b.to_string());
        }

        if let Some(roster) = roster {
            let mut rdr = csv::Reader::from_path(roster).map_err(|e| csv_error(roster, e))?;
            expect_header(roster, &mut rdr, &["node_id"])?;
            for rec in rdr.records() {
                let rec = rec.map_err(|e| csv_error(roster, e))?;
                let id = rec[0].trim();
                if id.is_empty() {
                    let line = rec.position().map_or(0, |p| p.line());
                    return Err(Error::parse(roster, line, "empty node id"));
                }
                nodes.insert(id.to_string());
            }
        }
        Ok(Self::from_parts(period, nodes, edges))
    }

    /// Writes `adjacency.csv`-style edges and a full node roster.
    pub fn write_csv(&self, adjacency: &Path, roster: &Path) -> Result<()> {
        let mut out = String::from("from,to\n");
        for e in &self.edges {
            let (a, b) = e.endpoints();
            out.push_str(&format!("{a},{b}\n"));
        }
        fs::write(adjacency, out).map_err(|e| Error::io(adjacency, e))?;

        let mut out = String::from("node_id\n");
        for v in &self.nodes {
            out.push_str(v);
            out.push('\n');
        }
        fs::write(roster, out).map_err(|e| Error::io(roster, e))
    }
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::parse(path, line, format!("{other:?}")),
    }
}

pub(crate) fn expect_header<R: std::io::Read>(
    path: &Path,
    rdr: &mut csv::Reader<R>,
    expected: &[&str],
) -> Result<()> {
    let headers = rdr.headers().map_err(|e| csv_error(path, e))?;
    let got: Vec<&str> = headers.iter().map(str::trim).collect();
    if got != expected {
        return Err(Error::parse(
            path,
            1,
            format!(
                "expected header `{}`, found `{}`",
                expected.join(","),
                got.join(",")
            ),
        ));
    }
    Ok(())
}

/// Node and edge changes between two consecutive periods.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphDelta {
    pub added_nodes: BTreeSet<NodeId>,
    pub removed_nodes: BTreeSet<NodeId>,
    pub added_edges: BTreeSet<Edge>,
    pub removed_edges: BTreeSet<Edge>,
}

impl GraphDelta {
    pub fn is_empty(&self) -> bool {
        self.added_nodes.is_empty()
            && self.removed_nodes.is_empty()
            && self.added_edges.is_empty()
            && self.removed_edges.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(v) = self.added_nodes.intersection(&self.removed_nodes).next() {
            return Err(Error::InvalidDelta(format!(
                "node `{v}` is both added and removed"
            )));
        }
        if let Some(e) = self.added_edges.intersection(&self.removed_edges).next() {
            return Err(Error::InvalidDelta(format!(
                "edge `{e}` is both added and removed"
            )));
        }
        Ok(())
    }

    /// Swaps additions and removals.
    pub fn inverse(&self) -> GraphDelta {
        GraphDelta {
            added_nodes: self.removed_nodes.clone(),
            removed_nodes: self.added_nodes.clone(),
            added_edges: self.removed_edges.clone(),
            removed_edges: self.added_edges.clone(),
        }
    }

    /// The delta that turns `from` into `to` (ignoring period labels).
    pub fn between(from: &GraphSnapshot, to: &GraphSnapshot) -> GraphDelta {
        GraphDelta {
            added_nodes: to.nodes.difference(&from.nodes).cloned().collect(),
            removed_nodes: from.nodes.difference(&to.nodes).cloned().collect(),
            added_edges: to.edges.difference(&from.edges).cloned().collect(),
            removed_edges: from.edges.difference(&to.edges).cloned().collect(),
        }
    }
}

/// Partition of the nodes of two snapshots.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NodeDiff {
    pub new_nodes: BTreeSet<NodeId>,
    pub surviving_nodes: BTreeSet<NodeId>,
    pub removed_nodes: BTreeSet<NodeId>,
}

pub fn node_diff(prev: &GraphSnapshot, curr: &GraphSnapshot) -> NodeDiff {
    NodeDiff {
        new_nodes: curr.nodes.difference(&prev.nodes).cloned().collect(),
        surviving_nodes: curr.nodes.intersection(&prev.nodes).cloned().collect(),
        removed_nodes: prev.nodes.difference(&curr.nodes).cloned().collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::IndexedRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ids(xs: &[&str]) -> Vec<NodeId> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    fn edge(a: &str, b: &str) -> Edge {
        Edge::new(a, b).unwrap()
    }

    fn random_graph(rng: &mut ChaCha8Rng, n: usize, m: usize, prefix: &str) -> GraphSnapshot {
        let nodes: Vec<NodeId> = (0..n).map(|i| format!("{prefix}{i}")).collect();
        let mut edges = BTreeSet::new();
        while edges.len() < m {
            let a = nodes.choose(rng).unwrap();
            let b = nodes.choose(rng).unwrap();
            if a != b {
                edges.insert(edge(a, b));
            }
        }
        GraphSnapshot::new(2011, nodes, edges).unwrap()
    }

    #[test]
    fn edges_are_normalized() {
        assert_eq!(edge("b", "a"), edge("a", "b"));
        assert!(Edge::new("a", "a").is_err());
    }

    #[test]
    fn construction_rejects_dangling_edges() {
        let err = GraphSnapshot::new(1, ids(&["a"]), [edge("a", "b")]).unwrap_err();
        assert!(matches!(err, Error::UnknownNode(v) if v == "b"));
    }

    #[test]
    fn table_one_growth_2011_to_2012() {
        let mut rng = ChaCha8Rng::seed_from_u64(2011);
        let g = random_graph(&mut rng, 655, 1577, "n");
        let mut delta = GraphDelta::default();
        let new: Vec<NodeId> = (0..60).map(|i| format!("m{i}")).collect();
        delta.added_nodes = new.iter().cloned().collect();
        let all: Vec<NodeId> = g
            .nodes()
            .iter()
            .cloned()
            .chain(new.iter().cloned())
            .collect();
        while delta.added_edges.len() < 352 {
            let a = new.choose(&mut rng).unwrap();
            let b = all.choose(&mut rng).unwrap();
            if a != b {
                delta.added_edges.insert(edge(a, b));
            }
        }
        let next = g.apply_delta(&delta).unwrap();
        assert_eq!(next.period(), 2012);
        assert_eq!(next.nodes().len(), 715);
        assert_eq!(next.edges().len(), 1929);
    }

    #[test]
    fn empty_delta_only_advances_period() {
        let g = GraphSnapshot::new(5, ids(&["a", "b"]), [edge("a", "b")]).unwrap();
        let next = g.apply_delta(&GraphDelta::default()).unwrap();
        assert_eq!(next.period(), 6);
        assert_eq!(next.nodes(), g.nodes());
        assert_eq!(next.edges(), g.edges());
    }

    #[test]
    fn removing_a_node_matches_brute_force_filter() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let g = random_graph(&mut rng, 20, 45, "v");
            let v = format!("v{}", rng.random_range(0..20));
            let delta = GraphDelta {
                removed_nodes: [v.clone()].into(),
                ..Default::default()
            };
            let next = g.apply_delta(&delta).unwrap();
            let expected: BTreeSet<Edge> = g
                .edges()
                .iter()
                .filter(|e| {
                    let (a, b) = e.endpoints();
                    a != v && b != v
                })
                .cloned()
                .collect();
            assert_eq!(next.edges(), &expected);
            assert!(!next.contains(&v));
        }
    }

    #[test]
    fn delta_errors_name_the_offender() {
        let g = GraphSnapshot::new(1, ids(&["a", "b"]), [edge("a", "b")]).unwrap();
        let d = GraphDelta {
            removed_nodes: ["zz".to_string()].into(),
            ..Default::default()
        };
        assert!(g.apply_delta(&d).unwrap_err().to_string().contains("zz"));

        let d = GraphDelta {
            removed_edges: [edge("a", "q")].into(),
            ..Default::default()
        };
        assert!(g.apply_delta(&d).unwrap_err().to_string().contains("q"));

        let d = GraphDelta {
            added_edges: [edge("a", "c")].into(),
            ..Default::default()
        };
        assert!(g.apply_delta(&d).unwrap_err().to_string().contains("`c`"));

        let d = GraphDelta {
            added_nodes: ["a".to_string()].into(),
            removed_nodes: ["a".to_string()].into(),
            ..Default::default()
        };
        assert!(matches!(g.apply_delta(&d), Err(Error::InvalidDelta(_))));
    }

    #[test]
    fn neighbors_on_small_graphs() {
        let g = GraphSnapshot::new(
            1,
            ids(&["a", "b", "c", "d"]),
            [edge("a", "b"), edge("b", "c")],
        )
        .unwrap();
        assert_eq!(
            g.neighbors("b").unwrap(),
            &BTreeSet::from(["a".into(), "c".into()])
        );
        assert!(g.neighbors("d").unwrap().is_empty());
        let err = g.neighbors("x").unwrap_err();
        assert!(err.to_string().contains("x"));
        assert_eq!(g.max_degree(), 2);
    }

    #[test]
    fn neighbors_match_edge_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = random_graph(&mut rng, 30, 70, "n");
        for v in g.nodes() {
            let scan: BTreeSet<NodeId> = g
                .edges()
                .iter()
                .filter_map(|e| {
                    let (a, b) = e.endpoints();
                    if a == v {
                        Some(b.to_string())
                    } else if b == v {
                        Some(a.to_string())
                    } else {
                        None
                    }
                })
                .collect();
            let got = g.neighbors(v).unwrap();
            assert_eq!(got, &scan);
            assert!(!got.contains(v));
            for u in got {
                assert!(g.neighbors(u).unwrap().contains(v));
            }
        }
    }

    #[test]
    fn node_diff_degenerate_cases() {
        let g = GraphSnapshot::new(1, ids(&["a", "b"]), []).unwrap();
        let d = node_diff(&g, &g);
        assert!(d.new_nodes.is_empty() && d.removed_nodes.is_empty());
        assert_eq!(&d.surviving_nodes, g.nodes());

        let h = GraphSnapshot::new(2, ids(&["c"]), []).unwrap();
        let d = node_diff(&g, &h);
        assert_eq!(&d.new_nodes, h.nodes());
        assert!(d.surviving_nodes.is_empty());
        assert_eq!(&d.removed_nodes, g.nodes());
    }

    #[test]
    fn csv_round_trip_with_isolated_nodes() {
        let dir = tempfile::tempdir().unwrap();
        let g = GraphSnapshot::new(
            3,
            ids(&["a", "b", "c", "lonely"]),
            [edge("a", "b"), edge("c", "b")],
        )
        .unwrap();
        let (adj, roster) = (
            dir.path().join("adjacency.csv"),
            dir.path().join("nodes.csv"),
        );
        g.write_csv(&adj, &roster).unwrap();
        let back = GraphSnapshot::read_csv(3, &adj, Some(&roster)).unwrap();
        assert_eq!(back, g);
        let without_roster = GraphSnapshot::read_csv(3, &adj, None).unwrap();
        assert!(!without_roster.contains("lonely"));
    }

    #[test]
    fn csv_rejects_bad_header_and_self_loops() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("adj.csv");
        fs::write(&p, "src,dst\na,b\n").unwrap();
        assert!(matches!(
            GraphSnapshot::read_csv(1, &p, None),
            Err(Error::Parse { .. })
        ));
        fs::write(&p, "from,to\na,b\nc,c\n").unwrap();
        match GraphSnapshot::read_csv(1, &p, None) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::Rng;

        fn snapshot_and_delta() -> impl Strategy<Value = (GraphSnapshot, GraphDelta)> {
            (any::<u64>(), 2usize..25).prop_map(|(seed, n)| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let m = rng.random_range(0..=n * (n - 1) / 4);
                let g = random_graph(&mut rng, n, m, "n");
                let mut delta = GraphDelta::default();
                for v in g.nodes() {
                    if rng.random_bool(0.2) {
                        delta.removed_nodes.insert(v.clone());
                    }
                }
                // Spell out incident edges so the delta is exactly invertible.
                for e in g.edges() {
                    let (a, b) = e.endpoints();
                    if delta.removed_nodes.contains(a)
                        || delta.removed_nodes.contains(b)
                        || rng.random_bool(0.1)
                    {
                        delta.removed_edges.insert(e.clone());
                    }
                }
                let k = rng.random_range(0..5);
                delta.added_nodes = (0..k).map(|i| format!("new{i}")).collect();
                let after: Vec<NodeId> = g
                    .nodes()
                    .difference(&delta.removed_nodes)
                    .cloned()
                    .chain(delta.added_nodes.iter().cloned())
                    .collect();
                if after.len() >= 2 {
                    for _ in 0..rng.random_range(0..8) {
                        let a = after.choose(&mut rng).unwrap();
                        let b = after.choose(&mut rng).unwrap();
                        if a == b {
                            continue;
                        }
                        let e = edge(a, b);
                        if !g.edges().contains(&e) {
                            delta.added_edges.insert(e);
                        }
                    }
                }
                (g, delta)
            })
        }

        proptest! {
            #[test]
            fn inverse_delta_restores(( g, d) in snapshot_and_delta()) {
                let next = g.apply_delta(&d).unwrap();
                let back = next.apply_delta(&d.inverse()).unwrap();
                prop_assert_eq!(back.nodes(), g.nodes());
                prop_assert_eq!(back.edges(), g.edges());
            }

            #[test]
            fn counts_match_brute_force((g, d) in snapshot_and_delta()) {
                let next = g.apply_delta(&d).unwrap();
                let nodes: BTreeSet<NodeId> = g.nodes().iter()
                    .filter(|v| !d.removed_nodes.contains(*v))
                    .chain(d.added_nodes.iter())
                    .cloned().collect();
                let edges: BTreeSet<Edge> = g.edges().iter()
                    .filter(|e| !d.removed_edges.contains(*e))
                    .filter(|e| { let (a, b) = e.endpoints(); nodes.contains(a) && nodes.contains(b) })
                    .chain(d.added_edges.iter())
                    .cloned().collect();
                prop_assert_eq!(next.nodes().len(), nodes.len());
                prop_assert_eq!(next.edges().len(), edges.len());
                for e in next.edges() {
                    let (a, b) = e.endpoints();
                    prop_assert!(next.contains(a) && next.contains(b) && a != b);
                }
            }

            #[test]
            fn node_diff_partitions((g, d) in snapshot_and_delta()) {
                let next = g.apply_delta(&d).unwrap();
                let diff = node_diff(&g, &next);
                prop_assert!(diff.new_nodes.is_disjoint(&diff.surviving_nodes));
                prop_assert!(diff.new_nodes.is_disjoint(&diff.removed_nodes));
                prop_assert!(diff.surviving_nodes.is_disjoint(&diff.removed_nodes));
                let curr: BTreeSet<_> = diff.new_nodes.union(&diff.surviving_nodes).cloned().collect();
                let prev: BTreeSet<_> = diff.surviving_nodes.union(&diff.removed_nodes).cloned().collect();
                prop_assert_eq!(&curr, next.nodes());
                prop_assert_eq!(&prev, g.nodes());
                // set-algebra oracle
                let brute_new: BTreeSet<_> = next.nodes().iter().filter(|v| !g.contains(v)).cloned().collect();
                prop_assert_eq!(&diff.new_nodes, &brute_new);
            }
        }
    }
}
