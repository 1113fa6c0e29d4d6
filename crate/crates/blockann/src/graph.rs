//! Flat directed graph construction (Vamana) with bounded out-degree, plus
//! the medoid entrypoint.
//!
//! The build makes two passes over a seeded random node order: for each node
//! it greedy-searches the current graph from the medoid with exact distances,
//! prunes the visited set into the node's adjacency, and inserts back-edges,
//! re-pruning any list that overflows. The first pass prunes with alpha = 1.0,
//! the second with the configured alpha. Construction is sequential and
//! deterministic: identical (dataset, params) yield identical graphs.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::{distance_unchecked, Dataset, VectorView};
use crate::error::{Error, Result};

/// Exact medoid computation is O(N^2); above this the total distance is taken
/// against a seeded sample instead.
const MEDOID_EXACT_LIMIT: usize = 20_000;
const MEDOID_SAMPLE: usize = 10_000;

/// A flat directed graph with out-degree at most `max_degree`.
#[derive(Debug, Clone, PartialEq)]
pub struct VamanaGraph {
    adjacency: Vec<Vec<u32>>,
    max_degree: usize,
    entrypoints: Vec<u32>,
}

impl VamanaGraph {
    /// Wrap raw adjacency lists, validating the graph invariants: no list
    /// longer than `max_degree`, no duplicates, no self-loops, all ids in
    /// range, and at least one entrypoint.
    pub fn from_parts(
        adjacency: Vec<Vec<u32>>,
        max_degree: usize,
        entrypoints: Vec<u32>,
    ) -> Result<Self> {
        let n = adjacency.len() as u32;
        if entrypoints.is_empty() {
            return Err(Error::InvalidParameter("graph needs >= 1 entrypoint".into()));
        }
        for &ep in &entrypoints {
            if ep >= n {
                return Err(Error::NodeOutOfRange { id: ep, n: n as u64 });
            }
        }
        for (i, list) in adjacency.iter().enumerate() {
            if list.len() > max_degree {
                return Err(Error::InvalidParameter(format!(
                    "node {i} has degree {} > {max_degree}",
                    list.len()
                )));
            }
            let mut seen = HashSet::with_capacity(list.len());
            for &id in list {
                if id >= n {
                    return Err(Error::NodeOutOfRange { id, n: n as u64 });
                }
                if id as usize == i {
                    return Err(Error::InvalidParameter(format!("node {i} has a self-loop")));
                }
                if !seen.insert(id) {
                    return Err(Error::InvalidParameter(format!(
                        "node {i} lists neighbor {id} twice"
                    )));
                }
            }
        }
        Ok(VamanaGraph {
            adjacency,
            max_degree,
            entrypoints,
        })
    }

    pub fn len(&self) -> usize {
        self.adjacency.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adjacency.is_empty()
    }

    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    pub fn neighbors(&self, id: u32) -> &[u32] {
        &self.adjacency[id as usize]
    }

    pub fn entrypoints(&self) -> &[u32] {
        &self.entrypoints
    }

    /// Number of nodes reachable from the entrypoints (BFS over out-edges).
    pub fn reachable_count(&self) -> usize {
        reachable(&self.adjacency, &self.entrypoints).iter().filter(|&&r| r).count()
    }
}

/// Construction parameters.
#[derive(Debug, Clone)]
pub struct BuildParams {
    /// Maximum out-degree R.
    pub max_degree: usize,
    /// Build-time candidate list size; must be >= max_degree.
    pub build_list_size: usize,
    /// Prune slack; >= 1.0.
    pub alpha: f64,
    pub seed: u64,
    /// Entrypoint count: the medoid plus (n - 1) seeded random nodes.
    pub num_entrypoints: usize,
}

impl Default for BuildParams {
    fn default() -> Self {
        BuildParams {
            max_degree: 32,
            build_list_size: 64,
            alpha: 1.2,
            seed: 0,
            num_entrypoints: 1,
        }
    }
}

impl BuildParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_degree == 0 {
            return Err(Error::InvalidParameter("max_degree must be >= 1".into()));
        }
        if self.build_list_size < self.max_degree {
            return Err(Error::InvalidParameter(format!(
                "build_list_size {} < max_degree {}",
                self.build_list_size, self.max_degree
            )));
        }
        if self.alpha < 1.0 {
            return Err(Error::InvalidParameter(format!("alpha {} < 1.0", self.alpha)));
        }
        if self.num_entrypoints == 0 {
            return Err(Error::InvalidParameter("num_entrypoints must be >= 1".into()));
        }
        Ok(())
    }
}

/// The id minimizing total distance to all other points; ties toward the
/// lowest id. Exact up to 20k points, then computed over a seeded
/// 10k-point sample.
pub fn medoid(dataset: &Dataset, seed: u64) -> Result<u32> {
    let n = dataset.len();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if n == 1 {
        return Ok(0);
    }
    let ids: Vec<u32> = if n <= MEDOID_EXACT_LIMIT {
        (0..n as u32).collect()
    } else {
        let mut all: Vec<u32> = (0..n as u32).collect();
        all.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut sample = all[..MEDOID_SAMPLE].to_vec();
        sample.sort_unstable();
        sample
    };
    let metric = dataset.metric();
    let totals: Vec<f64> = ids
        .par_iter()
        .map(|&i| {
            let vi = dataset.vector(i);
            let mut acc = 0.0f64;
            for &j in &ids {
                if i != j {
                    acc += distance_unchecked(vi, dataset.vector(j), metric);
                }
            }
            acc
        })
        .collect();
    let mut best = 0usize;
    for k in 1..ids.len() {
        if totals[k] < totals[best] {
            best = k;
        }
    }
    Ok(ids[best])
}

struct SearchScratch {
    /// Node id -> epoch at which it was last admitted to the pool.
    seen_epoch: Vec<u32>,
    epoch: u32,
}

impl SearchScratch {
    fn new(n: usize) -> Self {
        SearchScratch {
            seen_epoch: vec![0; n],
            epoch: 0,
        }
    }

    fn next_epoch(&mut self) {
        self.epoch += 1;
        if self.epoch == u32::MAX {
            self.seen_epoch.fill(0);
            self.epoch = 1;
        }
    }

    #[inline]
    fn admit(&mut self, id: u32) -> bool {
        let slot = &mut self.seen_epoch[id as usize];
        if *slot == self.epoch {
            false
        } else {
            *slot = self.epoch;
            true
        }
    }
}

#[derive(Clone, Copy)]
struct PoolEntry {
    key: f64,
    id: u32,
    expanded: bool,
}

/// Best-first expansion with exact distances over raw adjacency lists.
/// Returns (pool ids best-first, expansion order).
fn greedy_search_core(
    adjacency: &[Vec<u32>],
    dataset: &Dataset,
    query: VectorView<'_>,
    list_size: usize,
    starts: &[u32],
    scratch: &mut SearchScratch,
) -> (Vec<u32>, Vec<u32>) {
    let metric = dataset.metric();
    scratch.next_epoch();
    let mut pool: Vec<PoolEntry> = Vec::with_capacity(list_size + 1);
    for &s in starts {
        if scratch.admit(s) {
            let key = distance_unchecked(query, dataset.vector(s), metric);
            insert_sorted(&mut pool, PoolEntry { key, id: s, expanded: false }, list_size);
        }
    }
    let mut visited = Vec::new();
    loop {
        let Some(next) = pool.iter().position(|e| !e.expanded) else {
            break;
        };
        pool[next].expanded = true;
        let p = pool[next].id;
        visited.push(p);
        for &nbr in &adjacency[p as usize] {
            if scratch.admit(nbr) {
                let key = distance_unchecked(query, dataset.vector(nbr), metric);
                insert_sorted(&mut pool, PoolEntry { key, id: nbr, expanded: false }, list_size);
            }
        }
    }
    (pool.iter().map(|e| e.id).collect(), visited)
}

#[inline]
fn insert_sorted(pool: &mut Vec<PoolEntry>, e: PoolEntry, cap: usize) {
    let pos = pool.partition_point(|x| (x.key, x.id) < (e.key, e.id));
    if pos >= cap {
        return;
    }
    pool.insert(pos, e);
    pool.truncate(cap);
}

/// Build-time greedy search: best-first expansion from the graph entrypoints
/// maintaining a size-L pool of exact distances. Returns the final pool
/// (ascending by distance, ties by id) and every expanded node in expansion
/// order.
pub fn greedy_search_build(
    graph: &VamanaGraph,
    dataset: &Dataset,
    query: VectorView<'_>,
    list_size: usize,
) -> (Vec<u32>, Vec<u32>) {
    let mut scratch = SearchScratch::new(dataset.len());
    greedy_search_core(
        &graph.adjacency,
        dataset,
        query,
        list_size,
        &graph.entrypoints,
        &mut scratch,
    )
}

/// Degree-bounded pruning: repeatedly keep the closest remaining candidate
/// `c`, then discard every candidate `x` with `alpha * d(c, x) <= d(node, x)`.
/// Stops once `max_degree` neighbors are kept.
pub fn robust_prune(
    node: u32,
    candidates: &[u32],
    alpha: f64,
    max_degree: usize,
    dataset: &Dataset,
) -> Vec<u32> {
    let metric = dataset.metric();
    let vnode = dataset.vector(node);
    let mut pool: Vec<(f64, u32)> = Vec::with_capacity(candidates.len());
    let mut seen = HashSet::with_capacity(candidates.len());
    for &c in candidates {
        if c != node && seen.insert(c) {
            pool.push((distance_unchecked(vnode, dataset.vector(c), metric), c));
        }
    }
    pool.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut kept = Vec::with_capacity(max_degree);
    while !pool.is_empty() && kept.len() < max_degree {
        // Take the winner out explicitly: under squared Euclidean the rule
        // below always discards it (d(c,c) = 0), but under negated inner
        // product it might not, and a kept candidate must never recur.
        let (_, c) = pool.remove(0);
        kept.push(c);
        let vc = dataset.vector(c);
        pool.retain(|&(d_node_x, x)| {
            alpha * distance_unchecked(vc, dataset.vector(x), metric) > d_node_x
        });
    }
    kept
}

/// Two-pass Vamana construction. See the module docs for the procedure.
pub fn build_vamana(dataset: &Dataset, params: &BuildParams) -> Result<VamanaGraph> {
    params.validate()?;
    let n = dataset.len();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if n == 1 {
        return VamanaGraph::from_parts(vec![Vec::new()], params.max_degree, vec![0]);
    }

    let medoid_id = medoid(dataset, params.seed)?;
    let mut adjacency: Vec<Vec<u32>> = vec![Vec::new(); n];
    let mut scratch = SearchScratch::new(n);
    let starts = [medoid_id];

    for pass in 0..2u64 {
        let pass_alpha = if pass == 0 { 1.0 } else { params.alpha };
        let mut order: Vec<u32> = (0..n as u32).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(params.seed.wrapping_add(pass)));

        for &i in &order {
            let (_, visited) = greedy_search_core(
                &adjacency,
                dataset,
                dataset.vector(i),
                params.build_list_size,
                &starts,
                &mut scratch,
            );
            // Candidates: everything expanded plus the current adjacency, so a
            // second pass refines rather than forgets pass-one edges.
            let mut candidates = visited;
            candidates.extend_from_slice(&adjacency[i as usize]);
            let pruned = robust_prune(i, &candidates, pass_alpha, params.max_degree, dataset);
            adjacency[i as usize] = pruned.clone();

            for j in pruned {
                let list = &mut adjacency[j as usize];
                if list.contains(&i) {
                    continue;
                }
                list.push(i);
                if list.len() > params.max_degree {
                    let overfull = std::mem::take(&mut adjacency[j as usize]);
                    adjacency[j as usize] =
                        robust_prune(j, &overfull, pass_alpha, params.max_degree, dataset);
                }
            }
        }
    }

    let entrypoints = pick_entrypoints(n, medoid_id, params);
    repair_reachability(&mut adjacency, &entrypoints, params.max_degree, dataset);
    VamanaGraph::from_parts(adjacency, params.max_degree, entrypoints)
}

fn pick_entrypoints(n: usize, medoid_id: u32, params: &BuildParams) -> Vec<u32> {
    let mut eps = vec![medoid_id];
    if params.num_entrypoints > 1 {
        let mut others: Vec<u32> = (0..n as u32).filter(|&i| i != medoid_id).collect();
        others.shuffle(&mut ChaCha8Rng::seed_from_u64(params.seed ^ 0x9e37_79b9_7f4a_7c15));
        eps.extend(others.into_iter().take(params.num_entrypoints - 1));
    }
    eps
}

fn reachable(adjacency: &[Vec<u32>], entrypoints: &[u32]) -> Vec<bool> {
    let mut seen = vec![false; adjacency.len()];
    let mut stack: Vec<u32> = Vec::new();
    for &ep in entrypoints {
        if !seen[ep as usize] {
            seen[ep as usize] = true;
            stack.push(ep);
        }
    }
    while let Some(v) = stack.pop() {
        for &w in &adjacency[v as usize] {
            if !seen[w as usize] {
                seen[w as usize] = true;
                stack.push(w);
            }
        }
    }
    seen
}

/// Make every node reachable from the entrypoints. Unreachable nodes are
/// chained from the nearest reachable node; edges added here are protected
/// from later eviction so progress is monotone.
fn repair_reachability(
    adjacency: &mut [Vec<u32>],
    entrypoints: &[u32],
    max_degree: usize,
    dataset: &Dataset,
) {
    let metric = dataset.metric();
    let mut protected: HashSet<(u32, u32)> = HashSet::new();
    loop {
        let seen = reachable(adjacency, entrypoints);
        let orphans: Vec<u32> = (0..adjacency.len() as u32)
            .filter(|&i| !seen[i as usize])
            .collect();
        if orphans.is_empty() {
            return;
        }

        // Attach the first orphan to its nearest evictable reachable node,
        // then chain the remaining orphans behind it.
        let first = orphans[0];
        let vfirst = dataset.vector(first);
        let mut attach: Option<u32> = None;
        let mut attach_d = f64::INFINITY;
        for r in 0..adjacency.len() as u32 {
            if !seen[r as usize] {
                continue;
            }
            let list = &adjacency[r as usize];
            let evictable = list.len() < max_degree
                || list.iter().any(|&x| !protected.contains(&(r, x)));
            if !evictable {
                continue;
            }
            let d = distance_unchecked(vfirst, dataset.vector(r), metric);
            if d < attach_d {
                attach_d = d;
                attach = Some(r);
            }
        }
        let Some(mut attach) = attach else {
            // Every reachable slot is protected; cannot happen before the
            // protected edges alone span the graph.
            return;
        };

        for &u in &orphans {
            if u == attach {
                continue;
            }
            let list = &mut adjacency[attach as usize];
            if list.len() >= max_degree {
                // Evict the farthest unprotected neighbor.
                let va = dataset.vector(attach);
                let mut victim: Option<usize> = None;
                let mut victim_d = -1.0f64;
                for (idx, &x) in list.iter().enumerate() {
                    if protected.contains(&(attach, x)) {
                        continue;
                    }
                    let d = distance_unchecked(va, dataset.vector(x), metric);
                    if d > victim_d {
                        victim_d = d;
                        victim = Some(idx);
                    }
                }
                match victim {
                    Some(idx) => {
                        list.swap_remove(idx);
                    }
                    None => continue, // fully protected; skip this link this round
                }
            }
            if !list.contains(&u) {
                list.push(u);
            }
            protected.insert((attach, u));
            attach = u;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::DistanceMetric;
    use rand::Rng;

    fn ds(rows: &[&[f32]]) -> Dataset {
        let dim = rows[0].len();
        let flat: Vec<f32> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Dataset::from_f32(flat, dim, DistanceMetric::SquaredEuclidean).unwrap()
    }

    fn random_ds(n: usize, dim: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let flat: Vec<f32> = (0..n * dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        Dataset::from_f32(flat, dim, DistanceMetric::SquaredEuclidean).unwrap()
    }

    #[test]
    fn medoid_geometric_middle() {
        let d = ds(&[&[0.0, 0.0], &[10.0, 0.0], &[5.0, 0.0]]);
        assert_eq!(medoid(&d, 0).unwrap(), 2);
    }

    #[test]
    fn medoid_single_point() {
        let d = ds(&[&[1.0, 2.0]]);
        assert_eq!(medoid(&d, 0).unwrap(), 0);
    }

    #[test]
    fn medoid_matches_quadratic_scan() {
        let d = random_ds(500, 8, 42);
        let mut best = 0u32;
        let mut best_total = f64::INFINITY;
        for i in 0..500u32 {
            let mut total = 0.0;
            for j in 0..500u32 {
                if i != j {
                    let a = d.vector(i).to_f32();
                    let b = d.vector(j).to_f32();
                    let mut acc = 0.0f64;
                    for k in 0..8 {
                        let diff = a[k] as f64 - b[k] as f64;
                        acc += diff * diff;
                    }
                    total += acc;
                }
            }
            if total < best_total {
                best_total = total;
                best = i;
            }
        }
        assert_eq!(medoid(&d, 7).unwrap(), best);
    }

    #[test]
    fn greedy_search_fully_connected_reaches_nearest() {
        let d = ds(&[&[0.0], &[1.0], &[2.0], &[3.0], &[4.0]]);
        let adj: Vec<Vec<u32>> = (0..5u32)
            .map(|i| (0..5u32).filter(|&j| j != i).collect())
            .collect();
        let g = VamanaGraph::from_parts(adj, 4, vec![0]).unwrap();
        for (q, want) in [(3.1f32, 3u32), (0.2, 0), (4.9, 4)] {
            let (_, visited) = greedy_search_build(&g, &d, VectorView::F32(&[q]), 3);
            assert!(visited.contains(&want), "query {q} never expanded {want}");
        }
    }

    #[test]
    fn greedy_search_walks_a_path_monotonically() {
        // 0 - 1 - 2 - 3 - 4 on a line, query beyond the far end.
        let d = ds(&[&[0.0], &[1.0], &[2.0], &[3.0], &[4.0]]);
        let adj = vec![vec![1], vec![0, 2], vec![1, 3], vec![2, 4], vec![3]];
        let g = VamanaGraph::from_parts(adj, 2, vec![0]).unwrap();
        let (pool, visited) = greedy_search_build(&g, &d, VectorView::F32(&[10.0]), 1);
        assert_eq!(visited, vec![0, 1, 2, 3, 4]);
        assert_eq!(pool, vec![4]);
    }

    #[test]
    fn greedy_search_top1_matches_brute_force() {
        use crate::dataset::brute_force_knn;
        let d = random_ds(1000, 8, 3);
        let g = build_vamana(
            &d,
            &BuildParams {
                max_degree: 24,
                build_list_size: 64,
                alpha: 1.2,
                seed: 1,
                num_entrypoints: 1,
            },
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut hits = 0;
        for _ in 0..100 {
            let q: Vec<f32> = (0..8).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
            let (pool, _) = greedy_search_build(&g, &d, VectorView::F32(&q), 64);
            let truth = brute_force_knn(&d, VectorView::F32(&q), 1).unwrap();
            if pool[0] == truth[0].0 {
                hits += 1;
            }
        }
        assert!(hits >= 95, "only {hits}/100 top-1 hits");
    }

    #[test]
    fn robust_prune_collinear_keeps_only_nearest() {
        let d = ds(&[&[0.0], &[1.0], &[2.0], &[3.0]]);
        let kept = robust_prune(0, &[1, 2, 3], 1.0, 1, &d);
        assert_eq!(kept, vec![1]);
        // Even with room for more, the domination chain discards the rest.
        let kept = robust_prune(0, &[1, 2, 3], 1.0, 3, &d);
        assert_eq!(kept, vec![1]);
    }

    #[test]
    fn robust_prune_keeps_mutually_non_dominating() {
        // Points on a circle around the node: no candidate dominates another.
        let d = ds(&[&[0.0, 0.0], &[1.0, 0.0], &[0.0, 1.0], &[-1.0, 0.0], &[0.0, -1.0]]);
        let kept = robust_prune(0, &[1, 2, 3, 4], 1.0, 4, &d);
        assert_eq!(kept.len(), 4);
    }

    #[test]
    fn robust_prune_matches_independent_rule() {
        let d = random_ds(200, 4, 9);
        let candidates: Vec<u32> = (1..200).collect();
        let alpha = 1.2;
        let r = 16;
        let kept = robust_prune(0, &candidates, alpha, r, &d);

        // Direct re-implementation of the rule.
        let dist = |a: u32, b: u32| {
            let x = d.vector(a).to_f32();
            let y = d.vector(b).to_f32();
            let mut acc = 0.0f64;
            for k in 0..4 {
                let diff = x[k] as f64 - y[k] as f64;
                acc += diff * diff;
            }
            acc
        };
        let mut pool: Vec<u32> = candidates.clone();
        pool.sort_by(|&a, &b| dist(0, a).total_cmp(&dist(0, b)).then(a.cmp(&b)));
        let mut want = Vec::new();
        while !pool.is_empty() && want.len() < r {
            let c = pool.remove(0);
            want.push(c);
            pool.retain(|&x| alpha * dist(c, x) > dist(0, x));
        }
        assert_eq!(kept, want);
    }

    #[test]
    fn build_two_nodes_links_both_ways() {
        let d = ds(&[&[0.0], &[1.0]]);
        let g = build_vamana(&d, &BuildParams::default()).unwrap();
        assert_eq!(g.neighbors(0), &[1]);
        assert_eq!(g.neighbors(1), &[0]);
    }

    #[test]
    fn build_single_node() {
        let d = ds(&[&[0.0]]);
        let g = build_vamana(&d, &BuildParams::default()).unwrap();
        assert_eq!(g.len(), 1);
        assert!(g.neighbors(0).is_empty());
        assert_eq!(g.entrypoints(), &[0]);
    }

    #[test]
    fn build_invariants_hold_on_varied_inputs() {
        for seed in 0..4u64 {
            let n = 200 + 150 * seed as usize;
            let d = random_ds(n, 6, seed);
            let params = BuildParams {
                max_degree: 12,
                build_list_size: 24,
                alpha: 1.2,
                seed,
                num_entrypoints: 1 + (seed % 3) as usize,
            };
            let g = build_vamana(&d, &params).unwrap();
            assert_eq!(g.len(), n);
            for i in 0..n as u32 {
                let list = g.neighbors(i);
                assert!(list.len() <= 12);
                assert!(!list.contains(&i));
                let set: HashSet<u32> = list.iter().copied().collect();
                assert_eq!(set.len(), list.len());
            }
            assert_eq!(g.reachable_count(), n, "seed {seed}");
        }
    }

    #[test]
    fn build_handles_duplicate_points() {
        // All-identical points force the repair path.
        let flat = vec![0.5f32; 50 * 4];
        let d = Dataset::from_f32(flat, 4, DistanceMetric::SquaredEuclidean).unwrap();
        let params = BuildParams {
            max_degree: 4,
            build_list_size: 8,
            alpha: 1.2,
            seed: 3,
            num_entrypoints: 1,
        };
        let g = build_vamana(&d, &params).unwrap();
        assert_eq!(g.reachable_count(), 50);
    }

    #[test]
    fn build_is_deterministic() {
        let d = random_ds(300, 4, 21);
        let params = BuildParams {
            max_degree: 8,
            build_list_size: 16,
            alpha: 1.2,
            seed: 5,
            num_entrypoints: 1,
        };
        let a = build_vamana(&d, &params).unwrap();
        let b = build_vamana(&d, &params).unwrap();
        assert_eq!(a, b);
    }
}

