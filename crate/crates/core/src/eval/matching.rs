//! Distance-tolerant one-to-one pixel correspondence.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::maps::EdgeMap;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MatchResult {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    /// Matched `(pred, gt)` pixel pairs as `(row, col)`.
    pub pairs: Vec<((usize, usize), (usize, usize))>,
}

/// Candidate edges: for every predicted pixel, the indices of ground-truth
/// pixels within `tol` (Euclidean).
struct Candidates {
    pred: Vec<(usize, usize)>,
    gt: Vec<(usize, usize)>,
    adj: Vec<Vec<usize>>,
}

fn candidates(pred: &EdgeMap, gt: &EdgeMap, tol: f64) -> Result<Candidates> {
    if pred.dims() != gt.dims() {
        return Err(Error::Shape(format!(
            "prediction is {:?} but ground truth is {:?}",
            pred.dims(),
            gt.dims()
        )));
    }
    if tol.is_nan() || tol < 0.0 {
        return Err(Error::Config(format!("tolerance must be non-negative, got {tol}")));
    }
    let (h, w) = gt.dims();
    let pred_pts = pred.points();
    let gt_pts = gt.points();
    let mut index = vec![usize::MAX; h * w];
    for (i, &(r, c)) in gt_pts.iter().enumerate() {
        index[r * w + c] = i;
    }
    let reach = tol.floor() as usize;
    let tol2 = tol * tol;
    let adj = pred_pts
        .iter()
        .map(|&(r, c)| {
            let mut out = Vec::new();
            for gr in r.saturating_sub(reach)..=(r + reach).min(h - 1) {
                for gc in c.saturating_sub(reach)..=(c + reach).min(w - 1) {
                    let j = index[gr * w + gc];
                    if j == usize::MAX {
                        continue;
                    }
                    let (dr, dc) = (gr.abs_diff(r) as f64, gc.abs_diff(c) as f64);
                    if dr * dr + dc * dc <= tol2 {
                        out.push(j);
                    }
                }
            }
            out
        })
        .collect();
    Ok(Candidates { pred: pred_pts, gt: gt_pts, adj })
}

impl Candidates {
    fn result(&self, match_l: &[Option<usize>]) -> MatchResult {
        let pairs: Vec<_> = match_l
            .iter()
            .enumerate()
            .filter_map(|(i, m)| m.map(|j| (self.pred[i], self.gt[j])))
            .collect();
        let tp = pairs.len();
        MatchResult { tp, fp: self.pred.len() - tp, fn_: self.gt.len() - tp, pairs }
    }
}

/// Maximum-cardinality matching (Hopcroft–Karp) between predicted and
/// ground-truth pixels no farther apart than `tol` pixels.
pub fn match_tolerance(pred: &EdgeMap, gt: &EdgeMap, tol: f64) -> Result<MatchResult> {
    let cand = candidates(pred, gt, tol)?;
    Ok(cand.result(&hopcroft_karp(&cand.adj, cand.gt.len())))
}

fn hopcroft_karp(adj: &[Vec<usize>], n_right: usize) -> Vec<Option<usize>> {
    const INF: usize = usize::MAX;
    let n_left = adj.len();
    let mut match_l: Vec<Option<usize>> = vec![None; n_left];
    let mut match_r: Vec<Option<usize>> = vec![None; n_right];

    // Greedy seed; the phases below fix any suboptimal choice.
    for u in 0..n_left {
        if let Some(&v) = adj[u].iter().find(|&&v| match_r[v].is_none()) {
            match_l[u] = Some(v);
            match_r[v] = Some(u);
        }
    }

    let mut dist = vec![INF; n_left];
    let mut next = vec![0usize; n_left];
    let mut queue = VecDeque::new();
    let mut stack = Vec::new();
    loop {
        queue.clear();
        for u in 0..n_left {
            if match_l[u].is_none() {
                dist[u] = 0;
                queue.push_back(u);
            } else {
                dist[u] = INF;
            }
        }
        let mut found = false;
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                match match_r[v] {
                    None => found = true,
                    Some(w) if dist[w] == INF => {
                        dist[w] = dist[u] + 1;
                        queue.push_back(w);
                    }
                    _ => {}
                }
            }
        }
        if !found {
            return match_l;
        }

        next.iter_mut().for_each(|n| *n = 0);
        for start in 0..n_left {
            if match_l[start].is_some() || dist[start] != 0 {
                continue;
            }
            // Iterative layered DFS; `next[u] - 1` is the edge taken from u.
            stack.clear();
            stack.push(start);
            while let Some(&u) = stack.last() {
                if next[u] == adj[u].len() {
                    dist[u] = INF;
                    stack.pop();
                    continue;
                }
                let v = adj[u][next[u]];
                next[u] += 1;
                match match_r[v] {
                    None => {
                        for &x in stack.iter() {
                            let y = adj[x][next[x] - 1];
                            match_l[x] = Some(y);
                            match_r[y] = Some(x);
                        }
                        break;
                    }
                    Some(w) if dist[w] != INF && dist[w] == dist[u] + 1 => stack.push(w),
                    _ => {}
                }
            }
        }
    }
}

/// Maximum-cardinality matching of least total Euclidean distance, by
/// successive shortest augmenting paths. Same `tp` as [`match_tolerance`];
/// slower, meant for inspecting which pixels pair up.
pub fn match_tolerance_min_cost(pred: &EdgeMap, gt: &EdgeMap, tol: f64) -> Result<MatchResult> {
    let cand = candidates(pred, gt, tol)?;
    let cost = |u: usize, v: usize| {
        let (a, b) = (cand.pred[u], cand.gt[v]);
        (a.0.abs_diff(b.0) as f64).hypot(a.1.abs_diff(b.1) as f64)
    };
    let n_left = cand.adj.len();
    let n_right = cand.gt.len();
    let mut match_l: Vec<Option<usize>> = vec![None; n_left];
    let mut match_r: Vec<Option<usize>> = vec![None; n_right];
    let eps = 1e-12;

    loop {
        // Bellman-Ford over left vertices: forward edges u->v cost +d, back
        // edges v->match_r[v] cost -d. Sources are all free left vertices.
        let mut dist_l = vec![f64::INFINITY; n_left];
        let mut dist_r = vec![f64::INFINITY; n_right];
        let mut parent_r = vec![usize::MAX; n_right];
        for u in 0..n_left {
            if match_l[u].is_none() {
                dist_l[u] = 0.0;
            }
        }
        for _ in 0..=n_left {
            let mut improved = false;
            for u in 0..n_left {
                if dist_l[u].is_infinite() {
                    continue;
                }
                for &v in &cand.adj[u] {
                    if match_l[u] == Some(v) {
                        continue;
                    }
                    let d = dist_l[u] + cost(u, v);
                    if d + eps < dist_r[v] {
                        dist_r[v] = d;
                        parent_r[v] = u;
                        improved = true;
                        if let Some(w) = match_r[v] {
                            let dw = d - cost(w, v);
                            if dw + eps < dist_l[w] {
                                dist_l[w] = dw;
                            }
                        }
                    }
                }
            }
            if !improved {
                break;
            }
        }
        let Some(end) = (0..n_right)
            .filter(|&v| match_r[v].is_none() && dist_r[v].is_finite())
            .min_by(|&a, &b| dist_r[a].total_cmp(&dist_r[b]))
        else {
            return Ok(cand.result(&match_l));
        };
        let mut v = end;
        loop {
            let u = parent_r[v];
            let prev = match_l[u];
            match_l[u] = Some(v);
            match_r[v] = Some(u);
            match prev {
                Some(pv) => v = pv,
                None => break,
            }
        }
    }
}
