/// Recursive pairwise summation with a fixed split point, so the result
/// depends only on the input order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const LEAF: usize = 8;
    if xs.len() <= LEAF {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Elementwise pairwise reduction of equally sized partial sums.
pub fn pairwise_sum_vectors(parts: &[Vec<f64>]) -> Vec<f64> {
    match parts.len() {
        0 => Vec::new(),
        1 => parts[0].clone(),
        len => {
            let mid = len / 2;
            let left = pairwise_sum_vectors(&parts[..mid]);
            let right = pairwise_sum_vectors(&parts[mid..]);
            left.iter().zip(&right).map(|(a, b)| a + b).collect()
        }
    }
}
