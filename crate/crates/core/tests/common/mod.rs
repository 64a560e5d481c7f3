//! Helpers shared by the integration tests: synthetic data and independent
//! reference implementations.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sdped_core::io::ImageSample;
use sdped_core::maps::EdgeMap;
use sdped_core::tensor::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random map with exactly `k` distinct positives.
pub fn random_map(rng: &mut impl Rng, h: usize, w: usize, k: usize) -> EdgeMap {
    let mut m = EdgeMap::new(w, h);
    let mut placed = 0;
    while placed < k.min(h * w) {
        let (r, c) = (rng.random_range(0..h), rng.random_range(0..w));
        if !m.get(r, c) {
            m.set(r, c, true);
            placed += 1;
        }
    }
    m
}

/// Maximum matching size by exhaustive search over every injective
/// assignment of predicted pixels to ground-truth pixels or to nothing.
pub fn brute_force_max_matching(pred: &EdgeMap, gt: &EdgeMap, tol: f64) -> usize {
    let p = pred.points();
    let g = gt.points();
    let near = |a: (usize, usize), b: (usize, usize)| {
        let dr = a.0 as f64 - b.0 as f64;
        let dc = a.1 as f64 - b.1 as f64;
        (dr * dr + dc * dc).sqrt() <= tol
    };
    fn go(i: usize, p: &[(usize, usize)], g: &[(usize, usize)], used: &mut [bool], near: &dyn Fn((usize, usize), (usize, usize)) -> bool) -> usize {
        if i == p.len() {
            return 0;
        }
        let mut best = go(i + 1, p, g, used, near);
        for j in 0..g.len() {
            if !used[j] && near(p[i], g[j]) {
                used[j] = true;
                best = best.max(1 + go(i + 1, p, g, used, near));
                used[j] = false;
            }
        }
        best
    }
    go(0, &p, &g, &mut vec![false; g.len()], &near)
}

/// Least total distance over all maximum-cardinality matchings, by
/// exhaustive search.
pub fn brute_force_min_cost(pred: &EdgeMap, gt: &EdgeMap, tol: f64) -> (usize, f64) {
    let p = pred.points();
    let g = gt.points();
    let dist = |a: (usize, usize), b: (usize, usize)| {
        let dr = a.0 as f64 - b.0 as f64;
        let dc = a.1 as f64 - b.1 as f64;
        (dr * dr + dc * dc).sqrt()
    };
    fn go(
        i: usize,
        p: &[(usize, usize)],
        g: &[(usize, usize)],
        used: &mut [bool],
        tol: f64,
        dist: &dyn Fn((usize, usize), (usize, usize)) -> f64,
    ) -> (usize, f64) {
        if i == p.len() {
            return (0, 0.0);
        }
        let mut best = go(i + 1, p, g, used, tol, dist);
        for j in 0..g.len() {
            let d = dist(p[i], g[j]);
            if !used[j] && d <= tol {
                used[j] = true;
                let (n, c) = go(i + 1, p, g, used, tol, dist);
                used[j] = false;
                let cand = (n + 1, c + d);
                if cand.0 > best.0 || (cand.0 == best.0 && cand.1 < best.1) {
                    best = cand;
                }
            }
        }
        best
    }
    go(0, &p, &g, &mut vec![false; g.len()], tol, &dist)
}

/// Outlines of a few random axis-aligned rectangles and a straight line,
/// 1 pixel wide.
pub fn synthetic_edges(rng: &mut impl Rng, h: usize, w: usize) -> EdgeMap {
    let mut m = EdgeMap::new(w, h);
    for _ in 0..2 {
        let r0 = rng.random_range(1..h / 2);
        let c0 = rng.random_range(1..w / 2);
        let r1 = rng.random_range(r0 + 3..h - 1);
        let c1 = rng.random_range(c0 + 3..w - 1);
        for c in c0..=c1 {
            m.set(r0, c, true);
            m.set(r1, c, true);
        }
        for r in r0..=r1 {
            m.set(r, c0, true);
            m.set(r, c1, true);
        }
    }
    m
}

/// A piecewise-constant colour image whose region boundaries are the edge
/// pixels of the returned map: two filled rectangles over a background.
pub fn synthetic_scene(rng: &mut impl Rng, h: usize, w: usize) -> ImageSample {
    let mut region = vec![0u8; h * w];
    for id in 1..=2u8 {
        let r0 = rng.random_range(1..h / 2);
        let c0 = rng.random_range(1..w / 2);
        let r1 = rng.random_range(r0 + 3..h - 1);
        let c1 = rng.random_range(c0 + 3..w - 1);
        for r in r0..=r1 {
            for c in c0..=c1 {
                region[r * w + c] = id;
            }
        }
    }
    let colours: Vec<[f32; 3]> = (0..3).map(|_| std::array::from_fn(|_| rng.random_range(0.0..1.0))).collect();
    let mut data = vec![0.0f32; 3 * h * w];
    for i in 0..h * w {
        for ch in 0..3 {
            data[ch * h * w + i] = colours[region[i] as usize][ch];
        }
    }
    let mut edges = EdgeMap::new(w, h);
    for r in 0..h {
        for c in 0..w {
            let here = region[r * w + c];
            let differs = (r + 1 < h && region[(r + 1) * w + c] != here) || (c + 1 < w && region[r * w + c + 1] != here);
            if differs {
                edges.set(r, c, true);
            }
        }
    }
    let image = Tensor::from_vec(&[3, h, w], data).unwrap();
    ImageSample::new("scene", image, edges).unwrap()
}

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}
