//! Shared finite-difference stencil construction.
//!
//! One stencil builder serves the explicit update, the implicit system
//! assembly, and the drift diagnostics, so the residual `max_i mu_i = 0`
//! holds at the level of the discrete scheme itself.

use crate::grid::Grid;
use crate::models::AgentModel;
use crate::scalar::{half, lit, Real};

/// Linear combination of at most 9 nodes representing the discrete Bellman
/// generator `G v = b . grad v + 1/2 tr[a D^2 v]` at one node.
#[derive(Debug, Clone, Copy)]
pub struct Stencil<T> {
    pub len: usize,
    pub idx: [usize; 9],
    pub w: [T; 9],
}

impl<T: Real> Stencil<T> {
    pub fn empty() -> Self {
        Self {
            len: 0,
            idx: [0; 9],
            w: [T::zero(); 9],
        }
    }

    pub fn add(&mut self, idx: usize, w: T) {
        for i in 0..self.len {
            if self.idx[i] == idx {
                self.w[i] += w;
                return;
            }
        }
        self.idx[self.len] = idx;
        self.w[self.len] = w;
        self.len += 1;
    }

    #[inline]
    pub fn apply(&self, v: &[T]) -> T {
        let mut s = T::zero();
        for i in 0..self.len {
            s += self.w[i] * v[self.idx[i]];
        }
        s
    }

    pub fn weight_of(&self, idx: usize) -> T {
        for i in 0..self.len {
            if self.idx[i] == idx {
                return self.w[i];
            }
        }
        T::zero()
    }
}

/// Coefficients of one agent sampled on every node of a time layer.
pub struct LayerCoeffs<T> {
    /// Drift per node per axis, node-major.
    pub b: Vec<T>,
    /// Diagonal of `sigma sigma^T` per node per axis, node-major.
    pub a_diag: Vec<T>,
    /// Off-diagonal `a_01` per node; empty for d = 1.
    pub a_cross: Vec<T>,
}

impl<T: Real> LayerCoeffs<T> {
    pub fn sample(agent: &AgentModel<T>, grid: &Grid<T>, t: T) -> Self {
        let d = grid.dim();
        let nodes = grid.node_count();
        let mut b = vec![T::zero(); nodes * d];
        let mut a_diag = vec![T::zero(); nodes * d];
        let mut a_cross = if d == 2 {
            vec![T::zero(); nodes]
        } else {
            Vec::new()
        };
        for node in 0..nodes {
            let x = grid.node_coords(node);
            let drift = agent.coefficients.drift(t, &x);
            let a = agent.coefficients.diffusion_product(t, &x);
            for j in 0..d {
                b[node * d + j] = drift[j];
                a_diag[node * d + j] = a.get(j, j);
            }
            if d == 2 {
                a_cross[node] = a.get(0, 1);
            }
        }
        Self { b, a_diag, a_cross }
    }
}

/// Builds the generator stencil of one agent at one node.
///
/// Interior nodes use central second differences; the first derivative is
/// central when the cell is diffusion-dominated and first-order upwind
/// otherwise, which keeps the scheme monotone. Boundary nodes drop the
/// second derivative (linear extrapolation) and take the one-sided first
/// difference into the domain.
pub fn build_stencil<T: Real>(
    grid: &Grid<T>,
    node: usize,
    coeffs: &LayerCoeffs<T>,
) -> Stencil<T> {
    let d = grid.dim();
    let mi = grid.multi_index(node);
    let mut st = Stencil::empty();
    let two = lit::<T>(2.0);
    let mut interior = [false; 2];
    let mut strides = [0usize; 2];
    for j in 0..d {
        strides[j] = if j == 0 && d == 2 {
            grid.axes[1].nodes
        } else {
            1
        };
        interior[j] = mi[j] > 0 && mi[j] < grid.axes[j].nodes - 1;
    }
    for j in 0..d {
        let dx = grid.axes[j].spacing();
        let s = strides[j];
        let bj = coeffs.b[node * d + j];
        let aj = coeffs.a_diag[node * d + j];
        if interior[j] {
            let c2 = half::<T>() * aj / (dx * dx);
            st.add(node - s, c2);
            st.add(node + s, c2);
            st.add(node, -two * c2);
            let c1 = bj / (two * dx);
            if c2 >= c1.abs() {
                st.add(node + s, c1);
                st.add(node - s, -c1);
            } else if bj >= T::zero() {
                st.add(node + s, bj / dx);
                st.add(node, -bj / dx);
            } else {
                st.add(node, bj / dx);
                st.add(node - s, -bj / dx);
            }
        } else if mi[j] == 0 {
            st.add(node + s, bj / dx);
            st.add(node, -bj / dx);
        } else {
            st.add(node, bj / dx);
            st.add(node - s, -bj / dx);
        }
    }
    if d == 2 && interior[0] && interior[1] {
        let a01 = coeffs.a_cross[node];
        if a01 != T::zero() {
            let c = a01
                / (lit::<T>(4.0) * grid.axes[0].spacing() * grid.axes[1].spacing());
            let (s0, s1) = (strides[0], strides[1]);
            st.add(node + s0 + s1, c);
            st.add(node - s0 - s1, c);
            st.add(node + s0 - s1, -c);
            st.add(node - s0 + s1, -c);
        }
    }
    st
}

/// Per-node maximizer bitmask with relative tie tolerance.
pub fn tie_mask<T: Real>(generators: &[T], tie_rel: T) -> u32 {
    let gmax = generators
        .iter()
        .fold(T::neg_infinity(), |a, &b| a.max(b));
    let eps = tie_rel * (T::one() + gmax.abs());
    let mut mask = 0u32;
    for (i, &g) in generators.iter().enumerate() {
        if g >= gmax - eps {
            mask |= 1 << i;
        }
    }
    mask
}
