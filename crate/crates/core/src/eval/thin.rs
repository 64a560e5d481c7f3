//! Topology-preserving thinning.
//!
//! Each pass visits the north, south, east and west borders in turn. A
//! sub-pass collects the border pixels that are 8-simple (removing one
//! changes neither the foreground 8-components nor the background
//! 4-components) and are not curve ends, then deletes them in raster order,
//! re-checking each against the current map. Deleting one simple point at a
//! time keeps the topology intact, and the loop stops after a pass that
//! deletes nothing, so the result is a fixed point.

use crate::maps::EdgeMap;

// Neighbour offsets in the order E, NE, N, NW, W, SW, S, SE.
const RING: [(isize, isize); 8] = [(0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1)];

// Index into RING of the 4-neighbour that must be background for a pixel to
// lie on the border being peeled: N, S, E, W.
const BORDERS: [usize; 4] = [2, 6, 0, 4];

pub fn thin(map: &EdgeMap) -> EdgeMap {
    let mut out = map.clone();
    let (h, w) = out.dims();
    let mut candidates = Vec::new();
    loop {
        let mut changed = false;
        for &border in &BORDERS {
            candidates.clear();
            for r in 0..h {
                for c in 0..w {
                    if out.get(r, c) && deletable(&out, r, c, border) {
                        candidates.push((r, c));
                    }
                }
            }
            for &(r, c) in &candidates {
                if deletable(&out, r, c, border) {
                    out.set(r, c, false);
                    changed = true;
                }
            }
        }
        if !changed {
            return out;
        }
    }
}

fn deletable(map: &EdgeMap, r: usize, c: usize, border: usize) -> bool {
    let ring = neighbours(map, r, c);
    !ring[border] && ring.iter().filter(|&&v| v).count() >= 2 && connectivity_number(&ring) == 1
}

fn neighbours(map: &EdgeMap, r: usize, c: usize) -> [bool; 8] {
    let (h, w) = map.dims();
    RING.map(|(dr, dc)| {
        let (nr, nc) = (r as isize + dr, c as isize + dc);
        nr >= 0 && nc >= 0 && (nr as usize) < h && (nc as usize) < w && map.get(nr as usize, nc as usize)
    })
}

/// Yokoi connectivity number for 8-connected foreground; a border pixel is
/// simple iff this is 1.
fn connectivity_number(ring: &[bool; 8]) -> u32 {
    let bg = |i: usize| !ring[i % 8] as u32;
    [0, 2, 4, 6].iter().map(|&k| bg(k) - bg(k) * bg(k + 1) * bg(k + 2)).sum()
}

/// Number of 8-connected foreground components.
pub fn count_components(map: &EdgeMap) -> usize {
    let (h, w) = map.dims();
    let mut seen = vec![false; h * w];
    let mut n = 0;
    let mut stack = Vec::new();
    for start in 0..h * w {
        if !map.data()[start] || seen[start] {
            continue;
        }
        n += 1;
        seen[start] = true;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (r, c) = (i / w, i % w);
            for (dr, dc) in RING {
                let (nr, nc) = (r as isize + dr, c as isize + dc);
                if nr < 0 || nc < 0 || nr as usize >= h || nc as usize >= w {
                    continue;
                }
                let j = nr as usize * w + nc as usize;
                if map.data()[j] && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
    }
    n
}
