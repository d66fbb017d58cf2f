//! Slow, obviously-correct reference computations.
//!
//! Nothing here shares code with `airhold-core`; every routine works on plain
//! index/edge lists so tests can compare the optimized kernels against an
//! independent path.

/// Edge betweenness by enumerating every simple directed path.
///
/// `edges` holds `(src, dst, length)`. Returns one score per input edge, in
/// input order. Two path lengths are considered equal when they differ by at
/// most `1e-12 * max(1, len)`.
pub fn brute_force_edge_betweenness(n: usize, edges: &[(usize, usize, f64)]) -> Vec<f64> {
    let mut scores = vec![0.0; edges.len()];
    let mut out: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (k, &(u, _, _)) in edges.iter().enumerate() {
        out[u].push(k);
    }
    for s in 0..n {
        for t in 0..n {
            if s == t {
                continue;
            }
            let mut paths: Vec<(f64, Vec<usize>)> = Vec::new();
            let mut visited = vec![false; n];
            let mut stack_edges = Vec::new();
            visited[s] = true;
            enumerate_paths(s, t, 0.0, edges, &out, &mut visited, &mut stack_edges, &mut paths);
            if paths.is_empty() {
                continue;
            }
            let best = paths.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
            let tol = 1e-12 * best.max(1.0);
            let shortest: Vec<&Vec<usize>> = paths
                .iter()
                .filter(|p| p.0 - best <= tol)
                .map(|p| &p.1)
                .collect();
            let total = shortest.len() as f64;
            for path in shortest {
                for &k in path {
                    scores[k] += 1.0 / total;
                }
            }
        }
    }
    scores
}

#[allow(clippy::too_many_arguments)]
fn enumerate_paths(
    at: usize,
    target: usize,
    len: f64,
    edges: &[(usize, usize, f64)],
    out: &[Vec<usize>],
    visited: &mut [bool],
    path: &mut Vec<usize>,
    found: &mut Vec<(f64, Vec<usize>)>,
) {
    if at == target {
        found.push((len, path.clone()));
        return;
    }
    for &k in &out[at] {
        let (_, v, l) = edges[k];
        if visited[v] {
            continue;
        }
        visited[v] = true;
        path.push(k);
        enumerate_paths(v, target, len + l, edges, out, visited, path, found);
        path.pop();
        visited[v] = false;
    }
}

/// Minimum s-t cut capacity by enumerating every vertex bipartition.
pub fn brute_force_min_cut(n: usize, edges: &[(usize, usize, u64)], s: usize, t: usize) -> u64 {
    assert!(n <= 20 && s != t);
    let mut best = u64::MAX;
    for mask in 0u32..(1 << n) {
        let in_s = |v: usize| mask & (1 << v) != 0;
        if !in_s(s) || in_s(t) {
            continue;
        }
        let cap: u64 = edges
            .iter()
            .filter(|&&(u, v, _)| in_s(u) && !in_s(v))
            .map(|&(_, _, w)| w)
            .sum();
        best = best.min(cap);
    }
    best
}

/// Transitive closure check: does every vertex reach every other?
pub fn brute_force_strongly_connected(n: usize, edges: &[(usize, usize)]) -> bool {
    let mut reach = vec![vec![false; n]; n];
    for (i, row) in reach.iter_mut().enumerate() {
        row[i] = true;
    }
    for &(u, v) in edges {
        reach[u][v] = true;
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if reach[i][k] && reach[k][j] {
                    reach[i][j] = true;
                }
            }
        }
    }
    reach.iter().all(|row| row.iter().all(|&r| r))
}

/// Dense damped transition matrix built entry by entry.
pub fn dense_google_matrix(n: usize, edges: &[(usize, usize, u64)], damping: f64) -> Vec<Vec<f64>> {
    let mut adj = vec![vec![0.0; n]; n];
    for &(u, v, w) in edges {
        adj[u][v] += w as f64;
    }
    let mut g = vec![vec![0.0; n]; n];
    for u in 0..n {
        let out: f64 = adj[u].iter().sum();
        for v in 0..n {
            g[u][v] = if out > 0.0 {
                (1.0 - damping) / n as f64 + damping * adj[u][v] / out
            } else {
                1.0 / n as f64
            };
        }
    }
    g
}

/// `p · G` for a dense row-stochastic matrix.
pub fn left_multiply(p: &[f64], g: &[Vec<f64>]) -> Vec<f64> {
    let n = p.len();
    (0..n).map(|v| (0..n).map(|u| p[u] * g[u][v]).sum()).collect()
}

/// Histogram with `bins` equal-width bins over `[lo, hi]`, last bin closed.
/// Counts by scanning every bin for every value.
pub fn brute_force_histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<u64> {
    let edge = |k: usize| if k == bins { hi } else { lo + (hi - lo) * (k as f64) / (bins as f64) };
    let mut counts = vec![0u64; bins];
    for &x in values {
        for (k, c) in counts.iter_mut().enumerate() {
            let left = edge(k);
            let right = edge(k + 1);
            let last = k + 1 == bins;
            if x >= left && (x < right || (last && x <= right)) {
                *c += 1;
                break;
            }
        }
    }
    counts
}

/// Great-circle distance by the spherical law of cosines.
pub fn law_of_cosines_km(lat1: f64, lon1: f64, lat2: f64, lon2: f64, radius_km: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dl = (lon2 - lon1).to_radians();
    let c = p1.sin() * p2.sin() + p1.cos() * p2.cos() * dl.cos();
    radius_km * c.clamp(-1.0, 1.0).acos()
}

/// Best single threshold on 1-D data: returns the number of misclassified
/// points of the best rule `x > thr => positive` over all candidate cuts.
pub fn best_threshold_errors(xs: &[f64], ys: &[bool]) -> usize {
    let mut cands: Vec<f64> = xs.to_vec();
    cands.push(f64::NEG_INFINITY);
    cands
        .iter()
        .map(|&thr| {
            xs.iter()
                .zip(ys)
                .filter(|(&x, &y)| (x > thr) != y)
                .count()
        })
        .min()
        .unwrap_or(0)
}

/// Sum of squared errors of the best two-leaf (one split) piecewise-constant
/// fit, by trying every cut position.
pub fn best_two_leaf_sse(xs: &[f64], ys: &[f64]) -> f64 {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let sse = |part: &[usize]| {
        if part.is_empty() {
            return 0.0;
        }
        let m = part.iter().map(|&i| ys[i]).sum::<f64>() / part.len() as f64;
        part.iter().map(|&i| (ys[i] - m).powi(2)).sum::<f64>()
    };
    let mut best = sse(&idx);
    for cut in 1..idx.len() {
        if xs[idx[cut - 1]] == xs[idx[cut]] {
            continue;
        }
        best = best.min(sse(&idx[..cut]) + sse(&idx[cut..]));
    }
    best
}
