//! Quadrature rules on triangles.
//!
//! Rules are stored in barycentric coordinates with weights normalized to sum
//! to one, so `∫_K g ≈ |K| Σ_q w_q g(x_q)`. Degrees 1, 2 and 4 use the
//! classical symmetric rules (centroid, 3-point, 6-point Dunavant); higher
//! degrees fall back to a collapsed Gauss-Legendre product rule.

/// A quadrature rule on the reference triangle.
#[derive(Clone, Debug)]
pub struct TriangleRule {
    degree: usize,
    points: Vec<[f64; 3]>,
    weights: Vec<f64>,
}

impl TriangleRule {
    /// Smallest built-in rule that integrates polynomials of total degree
    /// `degree` exactly.
    pub fn of_degree(degree: usize) -> Self {
        match degree {
            0 | 1 => Self {
                degree: 1,
                points: vec![[1.0 / 3.0; 3]],
                weights: vec![1.0],
            },
            2 => {
                let (a, b) = (2.0 / 3.0, 1.0 / 6.0);
                Self {
                    degree: 2,
                    points: vec![[a, b, b], [b, a, b], [b, b, a]],
                    weights: vec![1.0 / 3.0; 3],
                }
            }
            3 | 4 => {
                let (a1, b1, w1) = (0.108_103_018_168_070, 0.445_948_490_915_965, 0.223_381_589_678_011);
                let (a2, b2, w2) = (0.816_847_572_980_459, 0.091_576_213_509_771, 0.109_951_743_655_322);
                Self {
                    degree: 4,
                    points: vec![
                        [a1, b1, b1],
                        [b1, a1, b1],
                        [b1, b1, a1],
                        [a2, b2, b2],
                        [b2, a2, b2],
                        [b2, b2, a2],
                    ],
                    weights: vec![w1, w1, w1, w2, w2, w2],
                }
            }
            d => Self::collapsed_gauss(d),
        }
    }

    /// Duffy-collapsed tensor Gauss-Legendre rule exact for total degree `degree`.
    fn collapsed_gauss(degree: usize) -> Self {
        // The Jacobian (1 - u) raises the degree in u by one.
        let n = (degree + 2).div_ceil(2);
        let (nodes, gw) = gauss_legendre_unit(n);
        let mut points = Vec::with_capacity(n * n);
        let mut weights = Vec::with_capacity(n * n);
        for (&u, &wu) in nodes.iter().zip(&gw) {
            for (&v, &wv) in nodes.iter().zip(&gw) {
                let x = u;
                let y = v * (1.0 - u);
                points.push([1.0 - x - y, x, y]);
                // reference triangle area is 1/2; normalize to weights summing to 1
                weights.push(2.0 * wu * wv * (1.0 - u));
            }
        }
        Self {
            degree,
            points,
            weights,
        }
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Barycentric points paired with normalized weights.
    pub fn iter(&self) -> impl Iterator<Item = (&[f64; 3], f64)> + '_ {
        self.points.iter().zip(self.weights.iter().copied())
    }

    /// Integrate `g` over the triangle with vertices `v`.
    pub fn integrate(&self, v: &[[f64; 2]; 3], mut g: impl FnMut([f64; 2]) -> f64) -> f64 {
        let area = triangle_area(v);
        let mut sum = 0.0;
        for (lam, w) in self.iter() {
            sum += w * g(barycentric_to_cartesian(v, lam));
        }
        area * sum
    }
}

pub fn barycentric_to_cartesian(v: &[[f64; 2]; 3], lam: &[f64; 3]) -> [f64; 2] {
    [
        lam[0] * v[0][0] + lam[1] * v[1][0] + lam[2] * v[2][0],
        lam[0] * v[0][1] + lam[1] * v[1][1] + lam[2] * v[2][1],
    ]
}

/// Signed area, positive for counter-clockwise vertex order.
pub fn signed_area(v: &[[f64; 2]; 3]) -> f64 {
    0.5 * ((v[1][0] - v[0][0]) * (v[2][1] - v[0][1]) - (v[2][0] - v[0][0]) * (v[1][1] - v[0][1]))
}

pub fn triangle_area(v: &[[f64; 2]; 3]) -> f64 {
    signed_area(v).abs()
}

/// Gauss-Legendre nodes and weights on [0, 1].
pub fn gauss_legendre_unit(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        // Chebyshev-type initial guess, refined by Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        nodes[i] = 0.5 * (1.0 - x);
        weights[i] = 1.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}
