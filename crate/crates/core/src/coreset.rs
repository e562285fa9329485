//! Greedy k-center selection in flattened pixel space.

/// Picks `k` distinct rows of `points` (each `dim` long). The first center
/// is the point nearest the mean; each next one is the point farthest from
/// its nearest chosen center. Ties go to the lowest index.
pub fn k_center(points: &[f32], dim: usize, k: usize) -> Vec<usize> {
    let n = if dim == 0 { 0 } else { points.len() / dim };
    let k = k.min(n);
    if k == 0 {
        return Vec::new();
    }
    let row = |i: usize| &points[i * dim..(i + 1) * dim];
    let sq_dist = |a: &[f32], b: &[f32]| -> f64 {
        a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum()
    };

    let mut mean = vec![0.0f64; dim];
    for i in 0..n {
        mean.iter_mut().zip(row(i)).for_each(|(m, &v)| *m += v as f64);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mean_f32: Vec<f32> = mean.iter().map(|&m| m as f32).collect();

    let first = argmin((0..n).map(|i| sq_dist(row(i), &mean_f32)));
    let mut chosen = vec![first];
    let mut taken = vec![false; n];
    taken[first] = true;
    let mut nearest: Vec<f64> = (0..n).map(|i| sq_dist(row(i), row(first))).collect();
    while chosen.len() < k {
        let mut best = None;
        for i in (0..n).filter(|&i| !taken[i]) {
            if best.is_none_or(|b: usize| nearest[i] > nearest[b]) {
                best = Some(i);
            }
        }
        let next = best.expect("k <= n leaves an untaken point");
        taken[next] = true;
        chosen.push(next);
        for i in 0..n {
            nearest[i] = nearest[i].min(sq_dist(row(i), row(next)));
        }
    }
    chosen
}

fn argmin(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, v) in values.enumerate() {
        if v < best.1 {
            best = (i, v);
        }
    }
    best.0
}
