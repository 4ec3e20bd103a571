//! Independent ring-count oracle: enumerate every simple cycle of the graph
//! and take the rank of their edge-incidence vectors over GF(2).

/// `edges` are (u, v) pairs over vertices 0..n.
pub fn independent_cycles(n: usize, edges: &[(usize, usize)]) -> usize {
    let mut adj = vec![Vec::new(); n];
    for (i, &(u, v)) in edges.iter().enumerate() {
        adj[u].push((v, i));
        adj[v].push((u, i));
    }
    let words = edges.len().div_ceil(64).max(1);
    let mut cycles: Vec<Vec<u64>> = Vec::new();
    // Each cycle is found from its smallest vertex, in both directions.
    for start in 0..n {
        let mut on_path = vec![false; n];
        let mut path_edges = Vec::new();
        walk(start, start, &adj, &mut on_path, &mut path_edges, &mut cycles, words);
    }
    gf2_rank(cycles)
}

fn walk(
    start: usize,
    at: usize,
    adj: &[Vec<(usize, usize)>],
    on_path: &mut Vec<bool>,
    path_edges: &mut Vec<usize>,
    cycles: &mut Vec<Vec<u64>>,
    words: usize,
) {
    on_path[at] = true;
    for &(next, e) in &adj[at] {
        if next == start && path_edges.len() >= 2 && !path_edges.contains(&e) {
            let mut bits = vec![0u64; words];
            for &pe in path_edges.iter().chain(std::iter::once(&e)) {
                bits[pe / 64] |= 1 << (pe % 64);
            }
            cycles.push(bits);
        } else if next > start && !on_path[next] {
            path_edges.push(e);
            walk(start, next, adj, on_path, path_edges, cycles, words);
            path_edges.pop();
        }
    }
    on_path[at] = false;
}

fn gf2_rank(mut rows: Vec<Vec<u64>>) -> usize {
    let mut rank = 0;
    let bits = rows.first().map_or(0, |r| r.len() * 64);
    for bit in 0..bits {
        let (w, m) = (bit / 64, 1u64 << (bit % 64));
        let Some(pivot) = (rank..rows.len()).find(|&i| rows[i][w] & m != 0) else { continue };
        rows.swap(rank, pivot);
        for i in 0..rows.len() {
            if i != rank && rows[i][w] & m != 0 {
                let pivot_row = rows[rank].clone();
                for (a, b) in rows[i].iter_mut().zip(pivot_row) {
                    *a ^= b;
                }
            }
        }
        rank += 1;
    }
    rank
}
