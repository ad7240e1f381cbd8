use nalgebra::Point3;
use rustc_hash::FxHashMap;

/// Neighbour cell offsets that are lexicographically after the origin, so
/// each pair of distinct cells is visited once.
const HALF_SHELL: [[i64; 3]; 13] = [
    [0, 0, 1],
    [0, 1, -1],
    [0, 1, 0],
    [0, 1, 1],
    [1, -1, -1],
    [1, -1, 0],
    [1, -1, 1],
    [1, 0, -1],
    [1, 0, 0],
    [1, 0, 1],
    [1, 1, -1],
    [1, 1, 0],
    [1, 1, 1],
];

/// Unordered vertex pairs `(i, j)`, `i < j`, closer than `radius`.
///
/// Uses a uniform grid with cell size `radius`: vertices are sorted by cell
/// and a map points each occupied cell at its run. Pairs come out sorted.
pub fn close_pairs(points: &[Point3<f64>], radius: f64) -> Vec<[u32; 2]> {
    let inv = 1.0 / radius;
    let cell = |p: &Point3<f64>| [(p.x * inv).floor() as i64, (p.y * inv).floor() as i64, (p.z * inv).floor() as i64];
    let mut order: Vec<([i64; 3], u32)> = points.iter().enumerate().map(|(i, p)| (cell(p), i as u32)).collect();
    order.sort_unstable();
    let mut runs: FxHashMap<[i64; 3], (usize, usize)> = FxHashMap::default();
    runs.reserve(order.len());
    let mut start = 0;
    for k in 1..=order.len() {
        if k == order.len() || order[k].0 != order[start].0 {
            runs.insert(order[start].0, (start, k));
            start = k;
        }
    }

    let r2 = radius * radius;
    let mut pairs = Vec::new();
    let mut test = |i: u32, j: u32| {
        if (points[i as usize] - points[j as usize]).norm_squared() < r2 {
            pairs.push(if i < j { [i, j] } else { [j, i] });
        }
    };
    for (&c, &(lo, hi)) in &runs {
        let own = &order[lo..hi];
        for (k, &(_, i)) in own.iter().enumerate() {
            for &(_, j) in &own[k + 1..] {
                test(i, j);
            }
        }
        for d in HALF_SHELL {
            let Some(&(nlo, nhi)) = runs.get(&[c[0] + d[0], c[1] + d[1], c[2] + d[2]]) else { continue };
            for &(_, i) in own {
                for &(_, j) in &order[nlo..nhi] {
                    test(i, j);
                }
            }
        }
    }
    pairs.sort_unstable();
    pairs
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn matches_all_pairs_scan() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let pts: Vec<Point3<f64>> = (0..300)
            .map(|_| Point3::new(rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1), rng.gen_range(-0.02..0.02)))
            .collect();
        let r = 0.015;
        let mut brute = Vec::new();
        for i in 0..pts.len() {
            for j in i + 1..pts.len() {
                if (pts[i] - pts[j]).norm() < r {
                    brute.push([i as u32, j as u32]);
                }
            }
        }
        assert_eq!(close_pairs(&pts, r), brute);
    }
}
