//! Tensor-train (TT) matrices.
//!
//! A weight matrix `W` of shape `in_dim x out_dim` with `in_dim = prod(o_m)` and
//! `out_dim = prod(p_m)` is stored as `d` cores, core `m` shaped
//! `(r_m, o_m, p_m, r_{m+1})` with `r_0 = r_d = 1`. The entry at row
//! `(o_0, .., o_{d-1})` and column `(p_0, .., p_{d-1})` (mixed radix, most
//! significant factor first) is the product of the `r_m x r_{m+1}` slices
//! `A_m[:, o_m, p_m, :]`.
//!
//! The matrix product `X W` is evaluated core by core, left to right: before
//! step `m` each row of the working buffer is laid out as
//! `[o_m .. o_{d-1}, p_0 .. p_{m-1}, r_m]`; the `o_m` axis is rotated to the end
//! and a single GEMM against core `m` (viewed as `(r_m o_m) x (p_m r_{m+1})`)
//! replaces `(r_m, o_m)` by `(p_m, r_{m+1})`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::linalg::{batched_transpose, gemm, Op};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Smallest width that gets a TT layer; narrower layers stay dense.
pub const MIN_TT_DIM: usize = 16;
pub const MAX_TT_DIM: usize = 2048;

/// Factorization of a layer width into four factors.
pub fn plan_factorization(dim: usize) -> Result<Vec<usize>> {
    if !dim.is_power_of_two() || !(MIN_TT_DIM..=MAX_TT_DIM).contains(&dim) {
        return Err(Error::Unplannable(dim));
    }
    let table: &[usize] = match dim {
        1024 => &[8, 8, 4, 4],
        512 => &[8, 4, 4, 4],
        256 => &[4, 4, 4, 4],
        128 => &[4, 4, 4, 2],
        64 => &[4, 4, 2, 2],
        32 => &[4, 2, 2, 2],
        16 => &[2, 2, 2, 2],
        _ => &[],
    };
    if !table.is_empty() {
        return Ok(table.to_vec());
    }
    // Greedy: largest factor <= 8 that leaves a product the remaining slots can hold.
    let mut left = dim;
    let mut out = Vec::with_capacity(4);
    for slot in (0..4).rev() {
        let cap = 8usize.pow(slot as u32);
        let mut f = 8;
        while f > 1 && (left % f != 0 || left / f > cap) {
            f /= 2;
        }
        if slot == 0 {
            f = left;
        }
        out.push(f);
        left /= f;
    }
    debug_assert_eq!(out.iter().product::<usize>(), dim);
    Ok(out)
}

/// Paired input/output factors of a TT matrix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FactorPlan {
    pub o_factors: Vec<usize>,
    pub p_factors: Vec<usize>,
}

impl FactorPlan {
    pub fn new(o_factors: Vec<usize>, p_factors: Vec<usize>) -> Result<Self> {
        if o_factors.is_empty() || o_factors.len() != p_factors.len() {
            return Err(shape_err(format!(
                "factor lists must be non-empty and of equal length, got {:?} / {:?}",
                o_factors, p_factors
            )));
        }
        if o_factors.iter().chain(&p_factors).any(|&f| f == 0) {
            return Err(shape_err("factors must be positive"));
        }
        Ok(Self { o_factors, p_factors })
    }

    pub fn order(&self) -> usize {
        self.o_factors.len()
    }

    pub fn in_dim(&self) -> usize {
        self.o_factors.iter().product()
    }

    pub fn out_dim(&self) -> usize {
        self.p_factors.iter().product()
    }
}

/// Factorizes both widths; the shorter list is padded with trailing 1s.
pub fn make_plan(in_dim: usize, out_dim: usize) -> Result<FactorPlan> {
    let mut o = plan_factorization(in_dim)?;
    let mut p = plan_factorization(out_dim)?;
    let d = o.len().max(p.len());
    o.resize(d, 1);
    p.resize(d, 1);
    FactorPlan::new(o, p)
}

/// Plan plus bond dimensions `r_0 .. r_d`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TtShape {
    pub plan: FactorPlan,
    pub ranks: Vec<usize>,
}

impl TtShape {
    /// `r_0 = r_d = 1`, every interior rank equal to `rank`.
    pub fn uniform(plan: FactorPlan, rank: usize) -> Result<Self> {
        if rank == 0 {
            return Err(Error::Config("TT rank must be at least 1".into()));
        }
        let d = plan.order();
        let ranks = (0..=d).map(|i| if i == 0 || i == d { 1 } else { rank }).collect();
        Ok(Self { plan, ranks })
    }

    pub fn order(&self) -> usize {
        self.plan.order()
    }

    pub fn core_shape(&self, m: usize) -> [usize; 4] {
        [
            self.ranks[m],
            self.plan.o_factors[m],
            self.plan.p_factors[m],
            self.ranks[m + 1],
        ]
    }

    pub fn core_params(&self) -> usize {
        (0..self.order()).map(|m| self.core_shape(m).iter().product::<usize>()).sum()
    }

    /// Multiply-adds of the left-to-right schedule for `rows` input rows.
    pub fn forward_macs(&self, rows: usize) -> u64 {
        let d = self.order();
        let o = &self.plan.o_factors;
        let p = &self.plan.p_factors;
        (0..d)
            .map(|m| {
                let after: usize = o[m + 1..].iter().product();
                let before: usize = p[..m].iter().product();
                let [r0, om, pm, r1] = self.core_shape(m);
                rows as u64 * after as u64 * before as u64 * (r0 * om * pm * r1) as u64
            })
            .sum()
    }
}

/// A TT matrix: shape metadata plus one tensor per core.
#[derive(Clone, Debug, PartialEq)]
pub struct TtCores<T> {
    shape: TtShape,
    cores: Vec<Tensor<T>>,
}

impl<T: Real> TtCores<T> {
    pub fn new(shape: TtShape, cores: Vec<Tensor<T>>) -> Result<Self> {
        if cores.len() != shape.order() {
            return Err(shape_err(format!("expected {} cores, got {}", shape.order(), cores.len())));
        }
        for (m, c) in cores.iter().enumerate() {
            if c.shape() != shape.core_shape(m) {
                return Err(shape_err(format!(
                    "core {} has shape {:?}, expected {:?}",
                    m,
                    c.shape(),
                    shape.core_shape(m)
                )));
            }
        }
        if let Some((r0, rd)) = shape.ranks.first().zip(shape.ranks.last()) {
            if *r0 != 1 || *rd != 1 {
                return Err(shape_err("boundary ranks must be 1"));
            }
        }
        Ok(Self { shape, cores })
    }

    pub fn shape(&self) -> &TtShape {
        &self.shape
    }

    pub fn plan(&self) -> &FactorPlan {
        &self.shape.plan
    }

    pub fn ranks(&self) -> &[usize] {
        &self.shape.ranks
    }

    pub fn cores(&self) -> &[Tensor<T>] {
        &self.cores
    }

    pub fn cores_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.cores
    }

    pub fn in_dim(&self) -> usize {
        self.shape.plan.in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.shape.plan.out_dim()
    }

    pub fn is_finite(&self) -> bool {
        self.cores.iter().all(Tensor::is_finite)
    }
}

/// Gaussian cores whose reconstructed matrix has entry variance `2 / in_dim`.
pub fn init_cores<T: Real, R: Rng + ?Sized>(plan: FactorPlan, rank: usize, rng: &mut R) -> Result<TtCores<T>> {
    let shape = TtShape::uniform(plan, rank)?;
    let d = shape.order();
    let target_var = 2.0 / shape.plan.in_dim() as f64;
    let paths: f64 = shape.ranks[1..d].iter().map(|&r| r as f64).product();
    let std = libm::pow(target_var / paths, 1.0 / (2.0 * d as f64));
    let cores = (0..d).map(|m| Tensor::randn(&shape.core_shape(m), std, rng)).collect();
    TtCores::new(shape, cores)
}

/// Map from the interleaved `(o_0, p_0, o_1, p_1, ..)` ordering produced by the
/// core chain to the flat `row * out_dim + col` index of the dense matrix.
fn interleaved_to_dense(plan: &FactorPlan) -> Vec<usize> {
    let d = plan.order();
    let (o, p) = (&plan.o_factors, &plan.p_factors);
    let out_dim = plan.out_dim();
    let mut o_stride = vec![1; d];
    let mut p_stride = vec![1; d];
    for j in (0..d.saturating_sub(1)).rev() {
        o_stride[j] = o_stride[j + 1] * o[j + 1];
        p_stride[j] = p_stride[j + 1] * p[j + 1];
    }
    let total = plan.in_dim() * out_dim;
    (0..total)
        .map(|mut i| {
            let (mut row, mut col) = (0, 0);
            for j in (0..d).rev() {
                col += (i % p[j]) * p_stride[j];
                i /= p[j];
                row += (i % o[j]) * o_stride[j];
                i /= o[j];
            }
            row * out_dim + col
        })
        .collect()
}

/// Chain products `G_0 = [1]`, `G_{m+1} = G_m * A_m` (intermediate results kept).
fn chain_products<T: Real>(tt: &TtCores<T>) -> Vec<Vec<T>> {
    let mut chain = vec![vec![T::one()]];
    let mut lead = 1;
    for (m, core) in tt.cores.iter().enumerate() {
        let [r0, o, p, r1] = tt.shape.core_shape(m);
        let prev = &chain[m];
        let mut next = vec![T::zero(); lead * o * p * r1];
        gemm(lead, o * p * r1, r0, prev, Op::N, core.data(), Op::N, T::zero(), &mut next);
        chain.push(next);
        lead *= o * p;
    }
    chain
}

/// Materializes the `in_dim x out_dim` matrix.
pub fn reconstruct_dense<T: Real>(tt: &TtCores<T>) -> Tensor<T> {
    let chain = chain_products(tt);
    let full = &chain[tt.cores.len()];
    let map = interleaved_to_dense(tt.plan());
    let mut w = vec![T::zero(); full.len()];
    for (src, &dst) in map.iter().enumerate() {
        w[dst] = full[src];
    }
    Tensor::from_vec(&[tt.in_dim(), tt.out_dim()], w).expect("dense size matches plan")
}

/// Core gradients of `<dW, reconstruct_dense(tt)>`.
pub fn reconstruct_dense_backward<T: Real>(tt: &TtCores<T>, d_dense: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
    if d_dense.shape() != [tt.in_dim(), tt.out_dim()] {
        return Err(shape_err(format!(
            "dense gradient {:?} does not match {}x{}",
            d_dense.shape(),
            tt.in_dim(),
            tt.out_dim()
        )));
    }
    let chain = chain_products(tt);
    let map = interleaved_to_dense(tt.plan());
    let mut g: Vec<T> = map.iter().map(|&i| d_dense.data()[i]).collect();
    let d = tt.cores.len();
    let mut grads: Vec<Tensor<T>> = Vec::with_capacity(d);
    for m in (0..d).rev() {
        let [r0, o, p, r1] = tt.shape.core_shape(m);
        let lead = chain[m].len() / r0;
        let n = o * p * r1;
        let mut dcore = Tensor::zeros(&[r0, o, p, r1]);
        gemm(r0, n, lead, &chain[m], Op::T, &g, Op::N, T::zero(), dcore.data_mut());
        let mut prev = vec![T::zero(); lead * r0];
        gemm(lead, r0, n, &g, Op::N, tt.cores[m].data(), Op::T, T::zero(), &mut prev);
        grads.push(dcore);
        g = prev;
    }
    grads.reverse();
    Ok(grads)
}

/// Intermediate GEMM inputs of a forward pass, one per core.
#[derive(Clone, Debug)]
pub struct TtTrace<T> {
    rows: usize,
    inputs: Vec<Vec<T>>,
}

fn check_input<T: Real>(tt: &TtCores<T>, x: &Tensor<T>, bias: Option<&[T]>) -> Result<usize> {
    let (rows, cols) = x.rows_cols();
    if x.ndim() != 2 || cols != tt.in_dim() {
        return Err(shape_err(format!("TT input {:?} needs [rows, {}]", x.shape(), tt.in_dim())));
    }
    if let Some(b) = bias {
        if b.len() != tt.out_dim() {
            return Err(shape_err(format!("bias has {} entries, expected {}", b.len(), tt.out_dim())));
        }
    }
    Ok(rows)
}

/// `Y = X W + bias` without forming `W`, returning the trace needed for the
/// backward pass.
pub fn tt_forward_traced<T: Real>(tt: &TtCores<T>, x: &Tensor<T>, bias: &[T]) -> Result<(Tensor<T>, TtTrace<T>)> {
    let rows = check_input(tt, x, Some(bias))?;
    let mut state: Vec<T> = x.data().to_vec();
    let mut lead = tt.in_dim();
    let mut inputs = Vec::with_capacity(tt.cores.len());
    for (m, core) in tt.cores.iter().enumerate() {
        let [r0, o, p, r1] = tt.shape.core_shape(m);
        let rest = lead / o;
        let mut a = vec![T::zero(); rows * lead];
        batched_transpose(&state, &mut a, rows, o, rest);
        let mrows = rows * rest / r0;
        let mut out = vec![T::zero(); mrows * p * r1];
        gemm(mrows, p * r1, r0 * o, &a, Op::N, core.data(), Op::N, T::zero(), &mut out);
        inputs.push(a);
        state = out;
        lead = rest / r0 * p * r1;
    }
    let out_dim = tt.out_dim();
    for row in state.chunks_exact_mut(out_dim) {
        for (v, &b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
    let y = Tensor::from_vec(&[rows, out_dim], state)?;
    Ok((y, TtTrace { rows, inputs }))
}

/// `Y = X W + bias` evaluated core by core (left to right).
pub fn tt_forward<T: Real>(tt: &TtCores<T>, x: &Tensor<T>, bias: &[T]) -> Result<Tensor<T>> {
    tt_forward_traced(tt, x, bias).map(|(y, _)| y)
}

/// Gradients of a traced forward pass: `(dX, dCores, dBias)`.
pub fn tt_backward_traced<T: Real>(
    tt: &TtCores<T>,
    trace: &TtTrace<T>,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<Tensor<T>>, Vec<T>)> {
    let rows = trace.rows;
    let out_dim = tt.out_dim();
    if dy.shape() != [rows, out_dim] {
        return Err(shape_err(format!("dY {:?} does not match [{}, {}]", dy.shape(), rows, out_dim)));
    }
    let mut dbias = vec![T::zero(); out_dim];
    for row in dy.data().chunks_exact(out_dim) {
        for (acc, &v) in dbias.iter_mut().zip(row) {
            *acc += v;
        }
    }
    let d = tt.cores.len();
    let mut g: Vec<T> = dy.data().to_vec();
    let mut dcores = Vec::with_capacity(d);
    for m in (0..d).rev() {
        let [r0, o, p, r1] = tt.shape.core_shape(m);
        let a = &trace.inputs[m];
        let lead = a.len() / rows;
        let rest = lead / o;
        let mrows = rows * rest / r0;
        let (k, n) = (r0 * o, p * r1);
        let mut dcore = Tensor::zeros(&[r0, o, p, r1]);
        gemm(k, n, mrows, a, Op::T, &g, Op::N, T::zero(), dcore.data_mut());
        let mut da = vec![T::zero(); mrows * k];
        gemm(mrows, k, n, &g, Op::N, tt.cores[m].data(), Op::T, T::zero(), &mut da);
        let mut dstate = vec![T::zero(); rows * lead];
        batched_transpose(&da, &mut dstate, rows, rest, o);
        dcores.push(dcore);
        g = dstate;
    }
    dcores.reverse();
    let dx = Tensor::from_vec(&[rows, tt.in_dim()], g)?;
    Ok((dx, dcores, dbias))
}

/// Exact gradients of [`tt_forward`] with respect to input, cores and bias.
pub fn tt_backward<T: Real>(
    tt: &TtCores<T>,
    x: &Tensor<T>,
    bias: &[T],
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<Tensor<T>>, Vec<T>)> {
    let (_, trace) = tt_forward_traced(tt, x, bias)?;
    tt_backward_traced(tt, &trace, dy)
}

/// Sum of core sizes, plus `out_dim` when the bias is included.
pub fn count_params<T: Real>(tt: &TtCores<T>, with_bias: bool) -> usize {
    tt.shape.core_params() + if with_bias { tt.out_dim() } else { 0 }
}

/// FLOPs (2 per multiply-add) of the left-to-right schedule for `batch` rows.
pub fn count_flops_forward<T: Real>(tt: &TtCores<T>, batch: usize) -> u64 {
    2 * tt.shape.forward_macs(batch)
}
