/// Nonconvex toy objective `sum_i s_i phi(x_i - c_i)` with the squashed
/// quadratic `phi(z) = z^2 / (1 + z^2)`.
///
/// `|phi''| <= 2`, so the loss is `2 max_i s_i`-smooth.
#[derive(Debug, Clone)]
pub struct SquashedQuadratic {
    centers: Vec<f64>,
    scales: Vec<f64>,
}

impl SquashedQuadratic {
    pub fn new(centers: Vec<f64>, scales: Vec<f64>) -> Self {
        assert_eq!(centers.len(), scales.len());
        Self { centers, scales }
    }

    pub fn dim(&self) -> usize {
        self.centers.len()
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.centers)
            .zip(&self.scales)
            .map(|((x, c), s)| {
                let z2 = (x - c) * (x - c);
                s * z2 / (1.0 + z2)
            })
            .sum()
    }

    pub fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        for (((o, x), c), s) in out.iter_mut().zip(x).zip(&self.centers).zip(&self.scales) {
            let z = x - c;
            let den = 1.0 + z * z;
            *o = s * 2.0 * z / (den * den);
        }
    }

    pub fn smoothness(&self) -> f64 {
        2.0 * self.scales.iter().fold(0.0f64, |a, &s| a.max(s))
    }
}
