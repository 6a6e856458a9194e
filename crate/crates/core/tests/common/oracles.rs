//! Brute-force references for the clustering and mixing metrics.

/// Every set partition of `n` points as a restricted growth string.
pub fn partitions(n: usize) -> Vec<Vec<u8>> {
    fn grow(prefix: &mut Vec<u8>, max: u8, n: usize, out: &mut Vec<Vec<u8>>) {
        if prefix.len() == n {
            out.push(prefix.clone());
            return;
        }
        for b in 0..=max + 1 {
            prefix.push(b);
            grow(prefix, max.max(b), n, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if n > 0 {
        grow(&mut vec![0], 0, n, &mut out);
    }
    out
}

/// ARI by walking every unordered pair of points.
pub fn ari_by_pairs(a: &[u8], b: &[u8]) -> f64 {
    let n = a.len();
    let (mut both, mut in_a, mut in_b, mut total) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..n {
        for j in i + 1..n {
            let sa = a[i] == a[j];
            let sb = b[i] == b[j];
            total += 1.0;
            in_a += f64::from(u8::from(sa));
            in_b += f64::from(u8::from(sb));
            both += f64::from(u8::from(sa && sb));
        }
    }
    let expected = if total > 0.0 { in_a * in_b / total } else { 0.0 };
    let max = 0.5 * (in_a + in_b);
    if max == expected {
        1.0
    } else {
        (both - expected) / (max - expected)
    }
}

/// Mixing entropy from full sorted distance lists, natural log converted
/// to bits.
pub fn entropy_brute_force(points: &[Vec<f64>], is_source: &[bool], k: usize) -> f64 {
    let n = points.len();
    let mut total = 0.0;
    for i in 0..n {
        let mut d: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| {
                let sq: f64 = points[i].iter().zip(&points[j]).map(|(a, b)| (a - b).powi(2)).sum();
                (sq.sqrt(), j)
            })
            .collect();
        d.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let hits = d[..k].iter().filter(|(_, j)| is_source[*j]).count();
        let p = hits as f64 / k as f64;
        let h = |q: f64| if q == 0.0 { 0.0 } else { -q * q.ln() / std::f64::consts::LN_2 };
        total += h(p) + h(1.0 - p);
    }
    total / n as f64
}
