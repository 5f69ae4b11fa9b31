//! Gated recurrent layer with analytic backpropagation through time.
//!
//! Gate layout follows the "reset after" convention: rows of the input and
//! recurrent kernels are stacked as `[update z, reset r, candidate n]` and
//!
//! ```text
//! z  = σ(Wz·x + bz + Uz·h + rbz)
//! r  = σ(Wr·x + br + Ur·h + rbr)
//! n  = tanh(Wn·x + bn + r ⊙ (Un·h + rbn))
//! h' = z ⊙ h + (1 − z) ⊙ n
//! ```

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GruLayer {
    /// `[3H, input]`
    pub w: Array2<f64>,
    /// `[3H, H]`
    pub u: Array2<f64>,
    pub b: Array1<f64>,
    pub rb: Array1<f64>,
}

/// Per-step activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct StepCache {
    h_prev: Array1<f64>,
    z: Array1<f64>,
    r: Array1<f64>,
    n: Array1<f64>,
    /// `Un·h + rbn`
    cn: Array1<f64>,
}

fn glorot_uniform(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit).expect("valid range");
    Array2::from_shape_simple_fn((rows, cols), || dist.sample(rng))
}

/// Matrix with orthonormal columns (Gram–Schmidt on a Gaussian draw).
fn orthogonal(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    let (tall_rows, tall_cols) = (rows.max(cols), rows.min(cols));
    let mut m: Array2<f64> = Array2::from_shape_simple_fn((tall_rows, tall_cols), || StandardNormal.sample(rng));
    for j in 0..tall_cols {
        for k in 0..j {
            let proj: f64 = m.column(j).dot(&m.column(k));
            let prev = m.column(k).to_owned();
            m.column_mut(j).scaled_add(-proj, &prev);
        }
        let norm = m.column(j).dot(&m.column(j)).sqrt();
        m.column_mut(j).mapv_inplace(|v| v / norm);
    }
    if rows >= cols {
        m
    } else {
        m.reversed_axes()
    }
}

impl GruLayer {
    pub fn new(input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        GruLayer {
            w: glorot_uniform(3 * hidden, input, rng),
            u: orthogonal(3 * hidden, hidden, rng),
            b: Array1::zeros(3 * hidden),
            rb: Array1::zeros(3 * hidden),
        }
    }

    pub fn zeros_like(&self) -> Self {
        GruLayer {
            w: Array2::zeros(self.w.raw_dim()),
            u: Array2::zeros(self.u.raw_dim()),
            b: Array1::zeros(self.b.raw_dim()),
            rb: Array1::zeros(self.rb.raw_dim()),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn hidden(&self) -> usize {
        self.u.ncols()
    }

    fn step(&self, x: ArrayView1<'_, f64>, h: &Array1<f64>) -> (Array1<f64>, StepCache) {
        let hd = self.hidden();
        let a = self.w.dot(&x) + &self.b;
        let c = self.u.dot(h) + &self.rb;
        let z = (&a.slice(s![..hd]) + &c.slice(s![..hd])).mapv(sigmoid);
        let r = (&a.slice(s![hd..2 * hd]) + &c.slice(s![hd..2 * hd])).mapv(sigmoid);
        let cn = c.slice(s![2 * hd..]).to_owned();
        let n = (&a.slice(s![2 * hd..]) + &(&r * &cn)).mapv(f64::tanh);
        let h_new = &z * h + &(z.mapv(|v| 1.0 - v) * &n);
        let cache = StepCache {
            h_prev: h.clone(),
            z,
            r,
            n,
            cn,
        };
        (h_new, cache)
    }

    /// Run over every row of `xs` (`[T, input]`) from a zero state.
    /// Returns the hidden state after each step, `[T, H]`.
    pub fn forward(&self, xs: ArrayView2<'_, f64>) -> (Array2<f64>, Vec<StepCache>) {
        let mut h = Array1::zeros(self.hidden());
        let mut out = Array2::zeros((xs.nrows(), self.hidden()));
        let mut caches = Vec::with_capacity(xs.nrows());
        for (t, x) in xs.axis_iter(Axis(0)).enumerate() {
            let (h_new, cache) = self.step(x, &h);
            out.row_mut(t).assign(&h_new);
            caches.push(cache);
            h = h_new;
        }
        (out, caches)
    }

    /// Backpropagate `d_out` (`dL/dh_t` for every step, `[T, H]`).
    /// Accumulates parameter gradients into `grad` and returns `dL/dx`, `[T, input]`.
    pub fn backward(
        &self,
        xs: ArrayView2<'_, f64>,
        caches: &[StepCache],
        d_out: ArrayView2<'_, f64>,
        grad: &mut GruLayer,
    ) -> Array2<f64> {
        let hd = self.hidden();
        let mut dx = Array2::zeros(xs.raw_dim());
        let mut dh_next = Array1::<f64>::zeros(hd);
        for t in (0..caches.len()).rev() {
            let c = &caches[t];
            let dh = &d_out.row(t) + &dh_next;
            let dz = &dh * &(&c.h_prev - &c.n);
            let dn = &dh * &c.z.mapv(|v| 1.0 - v);
            let dn_pre = &dn * &c.n.mapv(|v| 1.0 - v * v);
            let dr = &dn_pre * &c.cn;
            let dz_pre = &dz * &c.z.mapv(|v| v * (1.0 - v));
            let dr_pre = &dr * &c.r.mapv(|v| v * (1.0 - v));

            let mut da = Array1::zeros(3 * hd);
            da.slice_mut(s![..hd]).assign(&dz_pre);
            da.slice_mut(s![hd..2 * hd]).assign(&dr_pre);
            da.slice_mut(s![2 * hd..]).assign(&dn_pre);
            let mut dc = da.clone();
            dc.slice_mut(s![2 * hd..]).assign(&(&dn_pre * &c.r));

            let x = xs.row(t);
            grad.w += &outer(&da, &x);
            grad.b += &da;
            grad.u += &outer(&dc, &c.h_prev.view());
            grad.rb += &dc;
            dx.row_mut(t).assign(&self.w.t().dot(&da));
            dh_next = &dh * &c.z + &self.u.t().dot(&dc);
        }
        dx
    }

    pub(crate) fn slices(&self) -> [&[f64]; 4] {
        [
            self.w.as_slice().expect("standard layout"),
            self.u.as_slice().expect("standard layout"),
            self.b.as_slice().expect("standard layout"),
            self.rb.as_slice().expect("standard layout"),
        ]
    }

    pub(crate) fn slices_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.w.as_slice_mut().expect("standard layout"),
            self.u.as_slice_mut().expect("standard layout"),
            self.b.as_slice_mut().expect("standard layout"),
            self.rb.as_slice_mut().expect("standard layout"),
        ]
    }
}

fn outer(a: &Array1<f64>, b: &ArrayView1<'_, f64>) -> Array2<f64> {
    let col = a.view().insert_axis(Axis(1));
    let row = b.view().insert_axis(Axis(0));
    col.dot(&row)
}
