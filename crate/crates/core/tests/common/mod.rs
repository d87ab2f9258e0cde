//! Helpers shared by the integration tests.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use carla::node::NodeState;
use carla::resource::{
    Annotation, AnnotationSymbol, ComponentDescriptor, Evaluation, Link, MaterialUnit, NodeId,
    Question, QuestionType, Resource, ResourceId, Store,
};
use rand::seq::SliceRandom;
use rand::Rng;

pub const TOPICS: [&str; 3] = ["t0", "t1", "t2"];

pub fn material(origin: &str, seq: u32, topic: &str, size: u32) -> Resource {
    Resource::Material(MaterialUnit {
        id: ResourceId::new(origin, seq),
        topics: [topic.to_owned()].into(),
        size,
        staff_origin: true,
    })
}

/// Ids a resource references, written out per variant.
pub fn refs(r: &Resource) -> Vec<ResourceId> {
    match r {
        Resource::Material(_) | Resource::Component(_) => vec![],
        Resource::Question(q) => q.anchors.iter().cloned().chain([q.component.clone()]).collect(),
        Resource::Annotation(a) => vec![a.target.clone()],
        Resource::Link(l) => vec![l.source.clone(), l.dest.clone()],
        Resource::Evaluation(e) => vec![e.target.clone()],
        Resource::Course(c) => c.members.clone(),
    }
}

/// Held resources that reference something the store lacks.
pub fn dangling(store: &Store) -> Vec<ResourceId> {
    store
        .iter()
        .filter(|r| refs(r).iter().any(|d| !store.contains(d)))
        .map(|r| r.id().clone())
        .collect()
}

/// Random content over `authors`, every item after its dependencies.
pub fn universe<R: Rng>(rng: &mut R, authors: &[NodeId]) -> Vec<Resource> {
    let mut out: Vec<Resource> = Vec::new();
    let mut seq = 0u32;
    let mut fresh = |origin: &str| {
        seq += 1;
        ResourceId::new(origin, seq)
    };
    let pick = |rng: &mut R, ids: &[ResourceId]| ids[rng.gen_range(0..ids.len())].clone();

    let components: Vec<ResourceId> = (0..2).map(|_| fresh("prof")).collect();
    for id in &components {
        out.push(Resource::Component(ComponentDescriptor {
            id: id.clone(),
            renders: QuestionType::new("mc"),
            size: 1,
        }));
    }
    let mut materials = Vec::new();
    for _ in 0..6 {
        let id = fresh("prof");
        materials.push(id.clone());
        out.push(Resource::Material(MaterialUnit {
            id,
            topics: [TOPICS.choose(rng).unwrap().to_string()].into(),
            size: rng.gen_range(1..=3),
            staff_origin: true,
        }));
    }
    let mut targets = materials.clone();
    let mut rated = Vec::new();
    for _ in 0..6 {
        let author = authors.choose(rng).unwrap().clone();
        let id = fresh(author.as_str());
        let anchors: BTreeSet<ResourceId> = (0..rng.gen_range(1..=2)).map(|_| pick(rng, &materials)).collect();
        out.push(Resource::Question(Question {
            id: id.clone(),
            qtype: QuestionType::new("mc"),
            anchors,
            component: pick(rng, &components),
            author,
        }));
        targets.push(id.clone());
        rated.push(id);
    }
    for _ in 0..4 {
        let author = authors.choose(rng).unwrap().clone();
        let id = fresh(author.as_str());
        out.push(Resource::Annotation(Annotation {
            id: id.clone(),
            target: pick(rng, &targets),
            symbol: AnnotationSymbol::Agreement,
            size: 1,
            author,
        }));
        targets.push(id.clone());
        rated.push(id);
    }
    for _ in 0..4 {
        let author = authors.choose(rng).unwrap().clone();
        let id = fresh(author.as_str());
        let source = pick(rng, &targets);
        let mut dest = pick(rng, &targets);
        while dest == source {
            dest = pick(rng, &targets);
        }
        out.push(Resource::Link(Link {
            id: id.clone(),
            source,
            dest,
            author,
        }));
        rated.push(id);
    }
    for _ in 0..4 {
        let evaluator = authors.choose(rng).unwrap().clone();
        out.push(Resource::Evaluation(Evaluation {
            id: fresh(evaluator.as_str()),
            target: pick(rng, &rated),
            score: rng.gen_range(0.0..=1.0),
            evaluator,
        }));
    }
    out
}

/// Gives `id` and everything it depends on to `node`.
pub fn give(node: &mut NodeState, id: &ResourceId, index: &BTreeMap<ResourceId, Resource>) {
    if node.holds(id) {
        return;
    }
    let r = &index[id];
    for d in refs(r) {
        give(node, &d, index);
    }
    node.receive(r.clone(), 0);
}

/// Hands each item of `items` to one random node.
pub fn scatter<R: Rng>(rng: &mut R, nodes: &mut [NodeState], items: &[Resource]) {
    let index: BTreeMap<ResourceId, Resource> = items.iter().map(|r| (r.id().clone(), r.clone())).collect();
    for r in items {
        let n = rng.gen_range(0..nodes.len());
        give(&mut nodes[n], r.id(), &index);
    }
}

/// Topics per resource: materials carry their own, everything else inherits
/// from what it references.
pub fn topics_of(items: &[Resource]) -> BTreeMap<ResourceId, BTreeSet<String>> {
    let mut out: BTreeMap<ResourceId, BTreeSet<String>> = BTreeMap::new();
    for r in items {
        let t = match r {
            Resource::Material(m) => m.topics.clone(),
            other => refs(other)
                .iter()
                .flat_map(|d| out.get(d).cloned().unwrap_or_default())
                .collect(),
        };
        out.insert(r.id().clone(), t);
    }
    out
}

/// Random connected graph: a random tree plus extra chords, shuffled.
pub fn connected_edges<R: Rng>(rng: &mut R, n: usize) -> Vec<(usize, usize)> {
    let mut edges: BTreeSet<(usize, usize)> = (1..n).map(|i| (rng.gen_range(0..i), i)).collect();
    for _ in 0..rng.gen_range(0..=n) {
        let (u, v) = (rng.gen_range(0..n), rng.gen_range(0..n));
        if u != v {
            edges.insert((u.min(v), u.max(v)));
        }
    }
    let mut edges: Vec<_> = edges.into_iter().collect();
    edges.shuffle(rng);
    edges
}

/// All-pairs hop distances by Floyd-Warshall; `usize::MAX` when unreachable.
pub fn hop_matrix(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let inf = usize::MAX;
    let mut d = vec![vec![inf; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = 0;
    }
    for &(u, v) in edges {
        d[u][v] = 1;
        d[v][u] = 1;
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if d[i][k] != inf && d[k][j] != inf && d[i][k] + d[k][j] < d[i][j] {
                    d[i][j] = d[i][k] + d[k][j];
                }
            }
        }
    }
    d
}
