//! Small vector helpers shared across modules.

pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Dot product with f64 accumulation, for metric sums.
pub fn dot64(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum()
}

pub fn norm(a: &[f32]) -> f32 {
    dot(a, a).sqrt()
}

pub fn norm64(a: &[f32]) -> f64 {
    dot64(a, a).sqrt()
}

pub fn squared_distance(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

pub fn distance(a: &[f32], b: &[f32]) -> f32 {
    squared_distance(a, b).sqrt()
}

/// `y += alpha * x`
pub fn axpy(alpha: f32, x: &[f32], y: &mut [f32]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn scale(a: &mut [f32], alpha: f32) {
    for v in a.iter_mut() {
        *v *= alpha;
    }
}

/// Normalize to unit length in place; returns the prior norm.
pub fn normalize(a: &mut [f32]) -> f32 {
    let n = norm(a);
    if n > 0.0 {
        scale(a, 1.0 / n);
    }
    n
}

pub fn normalized(a: &[f32]) -> Vec<f32> {
    let mut v = a.to_vec();
    normalize(&mut v);
    v
}

/// Cosine similarity; zero when either vector is zero.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let na = norm64(a);
    let nb = norm64(b);
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot64(a, b) / (na * nb)
}

/// Elementwise mean of a set of equal-length vectors.
pub fn mean_vector(vs: &[Vec<f32>]) -> Vec<f32> {
    assert!(!vs.is_empty());
    let dim = vs[0].len();
    let mut acc = vec![0.0f64; dim];
    for v in vs {
        debug_assert_eq!(v.len(), dim);
        for (a, x) in acc.iter_mut().zip(v) {
            *a += *x as f64;
        }
    }
    let n = vs.len() as f64;
    acc.iter().map(|a| (a / n) as f32).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_unit_length() {
        let mut v = vec![3.0, 4.0];
        let n = normalize(&mut v);
        assert!((n - 5.0).abs() < 1e-6);
        assert!((norm(&v) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn cosine_of_opposites() {
        assert!((cosine(&[1.0, 0.0], &[-2.0, 0.0]) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn mean_vector_simple() {
        let m = mean_vector(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(m, vec![0.5, 0.5]);
    }
}
