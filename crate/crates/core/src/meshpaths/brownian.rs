use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::mesh::TimeMesh;

/// Word offset (in 32-bit ChaCha words) between the refinement blocks of
/// consecutive coarse cells. The coarse increments live in block 0.
const CELL_WORD_STRIDE: u128 = 1 << 32;

/// Multi-dimensional Brownian values on the fine nodes of a mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianPath {
    dim: usize,
    mesh: TimeMesh,
    values: Vec<f64>,
}

impl BrownianPath {
    /// Empty buffer for use with [`sample_brownian_into`].
    pub fn empty(mesh: TimeMesh, dim: usize) -> Self {
        Self {
            dim,
            mesh,
            values: Vec::new(),
        }
    }

    /// Wraps explicit fine-node values (`dim` per node, node 0 first).
    pub fn from_values(mesh: TimeMesh, dim: usize, values: Vec<f64>) -> crate::Result<Self> {
        if values.len() != dim * mesh.fine_nodes() {
            return Err(crate::Error::Dimension(format!(
                "expected {} values, got {}",
                dim * mesh.fine_nodes(),
                values.len()
            )));
        }
        Ok(Self { dim, mesh, values })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mesh(&self) -> &TimeMesh {
        &self.mesh
    }

    /// `B` at fine node `j`.
    pub fn value(&self, j: usize) -> &[f64] {
        &self.values[j * self.dim..(j + 1) * self.dim]
    }

    /// `B` at coarse node `k`.
    pub fn coarse_value(&self, k: usize) -> &[f64] {
        self.value(self.mesh.fine_index(k))
    }

    /// Increment of coordinate `i` over fine cell `j`.
    #[inline]
    pub fn increment(&self, j: usize, i: usize) -> f64 {
        self.values[(j + 1) * self.dim + i] - self.values[j * self.dim + i]
    }

    /// Increments over fine cell `j` written into `out`.
    #[inline]
    pub fn increment_into(&self, j: usize, out: &mut [f64]) {
        let (a, b) = (j * self.dim, (j + 1) * self.dim);
        for i in 0..self.dim {
            out[i] = self.values[b + i] - self.values[a + i];
        }
    }

    /// Raw node-major storage (`fine_nodes * dim`).
    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }
}

/// Samples the Brownian path keyed by `(seed, path_id)` on `mesh`.
pub fn sample_brownian(mesh: &TimeMesh, dim: usize, seed: u64, path_id: u64) -> BrownianPath {
    let mut path = BrownianPath::empty(*mesh, dim);
    sample_brownian_into(&mut path, mesh, dim, seed, path_id);
    path
}

/// Buffer-reusing variant of [`sample_brownian`].
///
/// Coarse increments `N(0, eps I)` are drawn first from stream `path_id` of
/// the generator keyed by `seed`. Each coarse cell is then refined level by
/// level from its own block of the stream, so the coarse values do not
/// depend on `m` and the nodes for `m` are a subset of those for `2m`.
pub fn sample_brownian_into(
    path: &mut BrownianPath,
    mesh: &TimeMesh,
    dim: usize,
    seed: u64,
    path_id: u64,
) {
    assert!(dim >= 1, "Brownian dimension must be >= 1");
    let m = mesh.refine();
    let cells = mesh.coarse_cells();
    path.dim = dim;
    path.mesh = *mesh;
    path.values.clear();
    path.values.resize(mesh.fine_nodes() * dim, 0.0);
    let values = &mut path.values;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path_id);
    rng.set_word_pos(0);

    let coarse_sd = mesh.eps().sqrt();
    for k in 0..cells {
        let (a, b) = (k * m * dim, (k + 1) * m * dim);
        for i in 0..dim {
            let z: f64 = rng.sample(StandardNormal);
            values[b + i] = values[a + i] + coarse_sd * z;
        }
    }

    if m == 1 {
        return;
    }
    let delta = mesh.delta();
    for k in 0..cells {
        rng.set_word_pos((k as u128 + 1) * CELL_WORD_STRIDE);
        let base = k * m;
        // `half` is the distance from an interval end to the new midpoint.
        let mut half = m / 2;
        while half >= 1 {
            // bridge variance at the midpoint of an interval of length 2*half*delta
            let sd = (0.5 * half as f64 * delta).sqrt();
            let mut left = 0;
            while left < m {
                let (l, mid, r) = (base + left, base + left + half, base + left + 2 * half);
                for i in 0..dim {
                    let z: f64 = rng.sample(StandardNormal);
                    values[mid * dim + i] =
                        0.5 * (values[l * dim + i] + values[r * dim + i]) + sd * z;
                }
                left += 2 * half;
            }
            half /= 2;
        }
    }
}
