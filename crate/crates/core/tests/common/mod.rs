#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use redistill::collectives::{apply_typed, lower_ops, CollectiveOp, Plan};
use redistill::normalizer::{Mode, TypedSequence};
use redistill::problem::{generate, Problem, SuiteConfig};
use redistill::semantics::DeviceMap;
use redistill::{Axis, DistDim, DistType, Mesh};

pub const SUITE_SEED: u64 = 20_240_611;

pub fn mesh(s: &str) -> Mesh {
    s.parse().unwrap()
}

pub fn ty(s: &str) -> DistType {
    s.parse().unwrap()
}

/// Lowers a hand-written op list from the identity device map. The target
/// is whatever type the ops end on.
pub fn plan_of(mesh: &Mesh, source: &DistType, ops: &[CollectiveOp]) -> Plan {
    let phi0 = DeviceMap::identity(mesh.device_count());
    let steps = lower_ops(mesh, source, phi0.clone(), ops).unwrap();
    let target = steps.last().map_or(source.clone(), |s| s.after_type.clone());
    Plan::new(mesh.clone(), source.clone(), target, phi0, steps)
}

/// The 200-problem desk suite shared by the soundness, optimality and cost checks.
pub fn soundness_suite() -> Vec<Problem> {
    generate(&SuiteConfig::desk(200, SUITE_SEED))
}

/// Offsets computed straight from coordinates, first mesh axis fastest.
pub fn brute_offsets(mesh: &Mesh, t: &DistType, point: usize) -> Vec<u64> {
    let mut coord = std::collections::HashMap::new();
    let mut rest = point as u64;
    for a in mesh.axes() {
        coord.insert(a.name.clone(), rest % a.size);
        rest /= a.size;
    }
    t.dims
        .iter()
        .map(|d| {
            let mut block = 0;
            for a in d.axes.iter().rev() {
                block = block * mesh.size_of(a).unwrap() + coord[a];
            }
            block * d.tile
        })
        .collect()
}

/// A mesh of 1..=4 axes with sizes drawn from `sizes`.
pub fn random_mesh(rng: &mut ChaCha8Rng, sizes: &[u64]) -> Mesh {
    let n = rng.gen_range(1..=4);
    let axes = ["p", "q", "r", "s"][..n]
        .iter()
        .map(|name| Axis::new(*name, *sizes.choose(rng).unwrap()))
        .collect();
    Mesh::new(axes).unwrap()
}

/// A well-formed type over `mesh`: axes go to random dimensions (or none)
/// in random order; every global extent is the axis product times a small extra.
pub fn random_type(rng: &mut ChaCha8Rng, mesh: &Mesh) -> DistType {
    let rank = rng.gen_range(1..=3);
    let mut layout = vec![Vec::new(); rank];
    for a in mesh.axes() {
        let k = rng.gen_range(0..=rank);
        if k < rank {
            layout[k].push(a.name.clone());
        }
    }
    DistType::new(
        layout
            .into_iter()
            .map(|mut axes| {
                axes.shuffle(rng);
                let n: u64 = axes.iter().map(|a| mesh.size_of(a).unwrap()).product();
                let tile = *[1u64, 1, 2, 3, 4, 6].choose(rng).unwrap();
                DistDim::new(tile, axes, tile * n)
            })
            .collect(),
    )
}

/// A type with the same local shape: axes are renamed within size classes
/// and reordered within dimensions.
pub fn random_relabel(rng: &mut ChaCha8Rng, mesh: &Mesh, t: &DistType) -> DistType {
    let mut rename: BTreeMap<String, String> = BTreeMap::new();
    let mut by_size: BTreeMap<u64, Vec<String>> = BTreeMap::new();
    for a in mesh.axes() {
        by_size.entry(a.size).or_default().push(a.name.clone());
    }
    for names in by_size.values() {
        let mut shuffled = names.clone();
        shuffled.shuffle(rng);
        for (a, b) in names.iter().zip(shuffled) {
            rename.insert(a.clone(), b);
        }
    }
    let mut out = t.clone();
    for d in &mut out.dims {
        d.axes = d.axes.iter().map(|a| rename[a].clone()).collect();
        d.axes.shuffle(rng);
    }
    out
}

fn random_op(rng: &mut ChaCha8Rng, mesh: &Mesh, t: &DistType, permutes: bool) -> Option<CollectiveOp> {
    let rank = t.rank();
    let size = |axes: &[String]| -> u64 { axes.iter().map(|a| mesh.size_of(a).unwrap()).product() };
    match rng.gen_range(0..if permutes { 4 } else { 3 }) {
        0 => {
            let i = rng.gen_range(0..rank);
            let have = &t.dims[i].axes;
            if have.is_empty() {
                return None;
            }
            let k = rng.gen_range(1..=have.len());
            Some(CollectiveOp::AllGather {
                dim: i,
                axes: have[..k].to_vec(),
            })
        }
        1 => {
            let i = rng.gen_range(0..rank);
            let mut free: Vec<String> = mesh
                .axes()
                .iter()
                .map(|a| a.name.clone())
                .filter(|a| !t.uses(a))
                .collect();
            if free.is_empty() {
                return None;
            }
            free.shuffle(rng);
            let k = rng.gen_range(1..=free.len());
            let axes = free[..k].to_vec();
            t.dims[i]
                .tile
                .is_multiple_of(size(&axes))
                .then_some(CollectiveOp::DynSlice { dim: i, axes })
        }
        2 => {
            if rank < 2 {
                return None;
            }
            let i = rng.gen_range(0..rank);
            let j = (i + rng.gen_range(1..rank)) % rank;
            let have = &t.dims[i].axes;
            if have.is_empty() {
                return None;
            }
            let k = rng.gen_range(1..=have.len());
            let axes = have[..k].to_vec();
            t.dims[j]
                .tile
                .is_multiple_of(size(&axes))
                .then_some(CollectiveOp::AllToAll { from: i, to: j, axes })
        }
        _ => Some(CollectiveOp::AllPermute {
            target: random_relabel(rng, mesh, t),
        }),
    }
}

/// A valid strong sequence of 1..=`max_len` ops over a random prime mesh.
pub fn random_strong_sequence(rng: &mut ChaCha8Rng, max_len: usize) -> TypedSequence {
    let mesh = random_mesh(rng, &[2, 2, 3, 5]);
    let start = random_type(rng, &mesh);
    let len = rng.gen_range(1..=max_len);
    let mut ops = Vec::new();
    let mut cur = start.clone();
    let mut attempts = 0;
    while ops.len() < len && attempts < 200 {
        attempts += 1;
        if let Some(op) = random_op(rng, &mesh, &cur, true) {
            if let Ok(next) = apply_typed(&mesh, &cur, &op) {
                ops.push(op);
                cur = next;
            }
        }
    }
    TypedSequence::strong(&mesh, &start, &ops).unwrap()
}

/// A valid weak sequence (no permutes) of 1..=`max_len` single-axis ops.
pub fn random_weak_sequence(rng: &mut ChaCha8Rng, max_len: usize) -> TypedSequence {
    let mesh = random_mesh(rng, &[2, 2, 3, 5]);
    let start = random_type(rng, &mesh);
    let len = rng.gen_range(1..=max_len);
    let mut ops = Vec::new();
    let mut cur = start.clone();
    let mut attempts = 0;
    while ops.len() < len && attempts < 200 {
        attempts += 1;
        if let Some(op) = random_op(rng, &mesh, &cur, false) {
            let single = match op {
                CollectiveOp::AllGather { dim, axes } => CollectiveOp::AllGather {
                    dim,
                    axes: axes[..1].to_vec(),
                },
                CollectiveOp::DynSlice { dim, axes } => CollectiveOp::DynSlice {
                    dim,
                    axes: axes[..1].to_vec(),
                },
                CollectiveOp::AllToAll { from, to, axes } => CollectiveOp::AllToAll {
                    from,
                    to,
                    axes: axes[..1].to_vec(),
                },
                other => other,
            };
            if let Ok(next) = apply_typed(&mesh, &cur, &single) {
                ops.push(single);
                cur = next;
            }
        }
    }
    let seq = TypedSequence::weak(&mesh, &start, &ops).unwrap();
    assert_eq!(seq.mode, Mode::Weak);
    seq
}

/// Exhaustive shortest paths over local shapes, built from pairwise
/// comparisons of all admissible shapes rather than from generated moves.
pub mod oracle {
    use std::collections::BTreeMap;

    fn factorize(mut n: u64) -> BTreeMap<u64, usize> {
        let mut out = BTreeMap::new();
        let mut p = 2;
        while p * p <= n {
            while n.is_multiple_of(p) {
                *out.entry(p).or_insert(0) += 1;
                n /= p;
            }
            p += 1;
        }
        if n > 1 {
            *out.entry(n).or_insert(0) += 1;
        }
        out
    }

    fn within(small: &BTreeMap<u64, usize>, big: &BTreeMap<u64, usize>) -> bool {
        small.iter().all(|(p, c)| big.get(p).copied().unwrap_or(0) >= *c)
    }

    fn add(a: &mut BTreeMap<u64, usize>, b: &BTreeMap<u64, usize>) {
        for (p, c) in b {
            *a.entry(*p).or_insert(0) += c;
        }
    }

    fn minus(a: &BTreeMap<u64, usize>, b: &BTreeMap<u64, usize>) -> BTreeMap<u64, usize> {
        a.iter()
            .map(|(p, c)| (*p, c - b.get(p).copied().unwrap_or(0)))
            .collect()
    }

    fn divisors(n: u64) -> Vec<u64> {
        (1..=n).filter(|d| n.is_multiple_of(*d)).collect()
    }

    pub struct Graph {
        pub nodes: Vec<Vec<u64>>,
        pub edges: Vec<(usize, usize, u64)>,
    }

    /// All admissible shapes, or `None` if there are more than `limit`.
    pub fn nodes(mesh_sizes: &[u64], global: &[u64], bound: u64, limit: usize) -> Option<Vec<Vec<u64>>> {
        let mut mesh = BTreeMap::new();
        for &s in mesh_sizes {
            add(&mut mesh, &factorize(s));
        }
        let mut partial: Vec<(Vec<u64>, BTreeMap<u64, usize>)> = vec![(vec![], BTreeMap::new())];
        for &g in global {
            let mut next = Vec::new();
            for (shape, used) in &partial {
                for t in divisors(g) {
                    let mut u = used.clone();
                    add(&mut u, &factorize(g / t));
                    let size: u64 = shape.iter().product::<u64>() * t;
                    if size <= bound && within(&u, &mesh) {
                        let mut s = shape.clone();
                        s.push(t);
                        next.push((s, u));
                    }
                }
            }
            if next.len() > limit * 64 {
                return None;
            }
            partial = next;
        }
        (partial.len() <= limit).then(|| partial.into_iter().map(|(s, _)| s).collect())
    }

    pub fn graph(mesh_sizes: &[u64], global: &[u64], nodes: Vec<Vec<u64>>) -> Graph {
        let mut mesh = BTreeMap::new();
        for &s in mesh_sizes {
            add(&mut mesh, &factorize(s));
        }
        let unused: Vec<BTreeMap<u64, usize>> = nodes
            .iter()
            .map(|n| {
                let mut used = BTreeMap::new();
                for (t, g) in n.iter().zip(global) {
                    add(&mut used, &factorize(g / t));
                }
                minus(&mesh, &used)
            })
            .collect();
        let mut edges = Vec::new();
        for (a, u) in nodes.iter().enumerate() {
            let su: u64 = u.iter().product();
            for (b, v) in nodes.iter().enumerate() {
                if a == b {
                    continue;
                }
                let diff: Vec<usize> = (0..u.len()).filter(|&k| u[k] != v[k]).collect();
                match diff[..] {
                    [i] if v[i] > u[i] && v[i] % u[i] == 0 => {
                        edges.push((a, b, v.iter().product()));
                    }
                    [i] if u[i] % v[i] == 0 && within(&factorize(u[i] / v[i]), &unused[a]) => {
                        edges.push((a, b, 0));
                    }
                    [i, j] => {
                        for (up, down) in [(i, j), (j, i)] {
                            if v[up] > u[up]
                                && v[up] % u[up] == 0
                                && u[down] % v[down] == 0
                                && v[up] / u[up] == u[down] / v[down]
                                && (global[up] / u[up]).is_multiple_of(v[up] / u[up])
                            {
                                edges.push((a, b, su));
                            }
                        }
                    }
                    _ => {}
                }
            }
        }
        Graph { nodes, edges }
    }

    /// Bellman-Ford distance between two shapes.
    pub fn distance(g: &Graph, from: &[u64], to: &[u64]) -> Option<u64> {
        let s = g.nodes.iter().position(|n| n == from)?;
        let t = g.nodes.iter().position(|n| n == to)?;
        let mut dist = vec![u64::MAX; g.nodes.len()];
        dist[s] = 0;
        loop {
            let mut changed = false;
            for &(a, b, w) in &g.edges {
                if dist[a] != u64::MAX && dist[a] + w < dist[b] {
                    dist[b] = dist[a] + w;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        (dist[t] != u64::MAX).then_some(dist[t])
    }
}

/// Hand-written reference programs with known costs and results.
pub mod examples {
    use redistill::collectives::CollectiveOp::{self, AllPermute};
    use redistill::{DistType, Mesh};

    use super::{mesh, ty};

    fn a2a(from: usize, to: usize, axes: &[&str]) -> CollectiveOp {
        CollectiveOp::all_to_all(from, to, axes)
    }

    fn permute(t: &str) -> CollectiveOp {
        AllPermute { target: ty(t) }
    }

    /// Two programs claimed to compute the same redistribution.
    pub struct Pair {
        pub name: &'static str,
        pub mesh: Mesh,
        pub source: DistType,
        pub left: Vec<CollectiveOp>,
        pub right: Vec<CollectiveOp>,
    }

    /// Reordered programs on a 4x4 mesh that agree.
    pub fn reorderings() -> Vec<Pair> {
        let m = mesh("{x:4, y:4}");
        vec![
            Pair {
                name: "permute then all-to-all",
                mesh: m.clone(),
                source: ty("[32{x,y}512, 128]"),
                left: vec![permute("[32{y,x}512, 128]"), a2a(0, 1, &["y"])],
                right: vec![a2a(0, 1, &["x"]), permute("[128{x}512, 32{y}128]")],
            },
            Pair {
                name: "two all-to-alls into one dimension",
                mesh: m.clone(),
                source: ty("[32{x}128, 512, 32{y}128]"),
                left: vec![a2a(0, 1, &["x"]), a2a(2, 1, &["y"])],
                right: vec![a2a(2, 1, &["y"]), a2a(0, 1, &["x"]), permute("[128, 32{y,x}512, 128]")],
            },
            Pair {
                name: "gather and all-to-all commute",
                mesh: m,
                source: ty("[32{x}128, 512, 32{y}128]"),
                left: vec![CollectiveOp::all_gather(0, &["x"]), a2a(2, 1, &["y"])],
                right: vec![a2a(2, 1, &["y"]), CollectiveOp::all_gather(0, &["x"])],
            },
        ]
    }

    /// The 4x2x4 problem where slicing an unused axis first pays off.
    pub fn over_partition() -> (Mesh, DistType, DistType, Vec<CollectiveOp>, Vec<CollectiveOp>) {
        (
            mesh("{x:4, y:2, z:4}"),
            ty("[1{y,x}8, 8, 8, 4]"),
            ty("[8, 4{y}8, 2{x}8, 4]"),
            vec![a2a(0, 1, &["y"]), a2a(0, 2, &["x"])],
            vec![
                CollectiveOp::dyn_slice(3, &["z"]),
                a2a(0, 1, &["y"]),
                a2a(0, 2, &["x"]),
                CollectiveOp::all_gather(3, &["z"]),
            ],
        )
    }

    /// Swapping two dimensions over a factored 4x6 mesh; needs permutes
    /// between the all-to-alls.
    pub fn factored_swap() -> (Mesh, DistType, DistType, Vec<CollectiveOp>) {
        (
            mesh("{x1:2, x2:2, y1:3, y2:2}"),
            ty("[3{x1,x2}12, 2{y1,y2}12]"),
            ty("[2{y1,y2}12, 3{x1,x2}12]"),
            vec![
                a2a(1, 0, &["y1"]),
                permute("[1{x1,y1,x2}12, 6{y2}12]"),
                a2a(0, 1, &["x1"]),
                permute("[2{y1,y2}12, 3{x1,x2}12]"),
            ],
        )
    }
}
