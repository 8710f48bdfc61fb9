//! Axis-aligned lattices over boxes in ℝ^q, shared by the audit checkers and
//! the multistart optimizer.

/// A uniform lattice on the box ∏ [lo_i, hi_i] with `points_per_dim` nodes
/// per axis (endpoints included).
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub points_per_dim: usize,
}

impl GridSpec {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, points_per_dim: usize) -> Self {
        assert_eq!(lo.len(), hi.len());
        assert!(points_per_dim >= 2, "a grid needs at least two nodes per axis");
        assert!(lo.iter().zip(&hi).all(|(a, b)| a < b));
        Self { lo, hi, points_per_dim }
    }

    pub fn new_1d(lo: f64, hi: f64, points: usize) -> Self {
        Self::new(vec![lo], vec![hi], points)
    }

    /// 1-D grid with node spacing at most `mesh`.
    pub fn from_mesh_1d(lo: f64, hi: f64, mesh: f64) -> Self {
        assert!(mesh > 0.0 && hi > lo);
        let points = ((hi - lo) / mesh).ceil() as usize + 1;
        Self::new_1d(lo, hi, points.max(2))
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    /// Node spacing per axis.
    pub fn mesh(&self) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(a, b)| (b - a) / (self.points_per_dim - 1) as f64)
            .collect()
    }

    /// Largest spacing over all axes; the scalar "grid mesh" used in
    /// strictness exclusion balls.
    pub fn max_mesh(&self) -> f64 {
        self.mesh().into_iter().fold(0.0, f64::max)
    }

    pub fn len(&self) -> usize {
        self.points_per_dim.pow(self.dim() as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// All lattice nodes in odometer order (last axis fastest).
    pub fn nodes(&self) -> GridNodes<'_> {
        GridNodes { spec: self, idx: vec![0; self.dim()], done: false }
    }

    fn node_at(&self, idx: &[usize]) -> Vec<f64> {
        let mesh = self.mesh();
        idx.iter()
            .enumerate()
            .map(|(d, &i)| self.lo[d] + mesh[d] * i as f64)
            .collect()
    }
}

pub struct GridNodes<'a> {
    spec: &'a GridSpec,
    idx: Vec<usize>,
    done: bool,
}

impl Iterator for GridNodes<'_> {
    type Item = Vec<f64>;

    fn next(&mut self) -> Option<Vec<f64>> {
        if self.done {
            return None;
        }
        let node = self.spec.node_at(&self.idx);
        // odometer increment
        let mut d = self.spec.dim();
        loop {
            if d == 0 {
                self.done = true;
                break;
            }
            d -= 1;
            self.idx[d] += 1;
            if self.idx[d] < self.spec.points_per_dim {
                break;
            }
            self.idx[d] = 0;
        }
        Some(node)
    }
}

/// An axis-aligned box with nonempty interior, used as parameter space Θ.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxBounds {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxBounds {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        assert_eq!(lo.len(), hi.len());
        assert!(lo.iter().zip(&hi).all(|(a, b)| a < b), "box must have nonempty interior");
        Self { lo, hi }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p.len() == self.dim()
            && p.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(x, (a, b))| a <= x && x <= b)
    }

    pub fn strictly_contains(&self, p: &[f64]) -> bool {
        p.len() == self.dim()
            && p.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(x, (a, b))| a < x && x < b)
    }

    pub fn clamp(&self, p: &mut [f64]) {
        for (x, (a, b)) in p.iter_mut().zip(self.lo.iter().zip(&self.hi)) {
            *x = x.clamp(*a, *b);
        }
    }

    pub fn grid(&self, points_per_dim: usize) -> GridSpec {
        GridSpec::new(self.lo.clone(), self.hi.clone(), points_per_dim)
    }
}

/// ∞-norm distance between two points.
pub fn inf_norm_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
