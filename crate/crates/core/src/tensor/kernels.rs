//! Numeric kernels. Each public kernel is a pure function of its inputs and
//! charges its adds/mults to the active op counter (see [`crate::counter`]).
//!
//! Every output element of `matmul` is accumulated over the inner index in
//! ascending order starting from `0.0`, exactly like a textbook triple loop,
//! whether the sequential or the rayon path runs it.

use super::Tensor;
use crate::counter::{charge, TANH_ADDS, TANH_MULTS};
use crate::error::{dim_err, Error, Result};
#[cfg(feature = "parallel")]
use crate::exec::parallel_enabled;
#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Elementwise binary operation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EwOp {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
}

const MR: usize = 4;
const NR: usize = 16;
/// Inner-extent panel length in `gemm`.
const KC: usize = 256;
/// Rows per parallel task in `gemm`.
#[cfg(feature = "parallel")]
const PAR_ROWS: usize = 8 * MR;
/// Minimum element count before elementwise kernels fan out.
#[cfg(feature = "parallel")]
const PAR_ELEMS: usize = 1 << 15;

/// `[m,k] · [k,p] -> [m,p]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2()?;
    let (k2, p) = b.dims2()?;
    if k != k2 {
        return Err(dim_err!(
            "matmul inner extents differ: {:?} · {:?}",
            a.shape(),
            b.shape()
        ));
    }
    charge_matmul(m, k, p);
    Ok(Tensor::from_parts(vec![m, p], gemm(a.data(), b.data(), m, k, p)))
}

pub(crate) fn charge_matmul(m: usize, k: usize, p: usize) {
    let mp = (m * p) as u64;
    charge(mp * k.saturating_sub(1) as u64, mp * k as u64);
}

/// Uncounted row-major GEMM.
pub(crate) fn gemm(a: &[f64], b: &[f64], m: usize, k: usize, p: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * p];
    if m == 0 || p == 0 {
        return c;
    }
    #[cfg(feature = "parallel")]
    if parallel_enabled() && m > PAR_ROWS && m * k * p > 1 << 16 {
        c.par_chunks_mut(PAR_ROWS * p)
            .enumerate()
            .for_each(|(blk, cb)| gemm_rows(a, b, cb, blk * PAR_ROWS, k, p));
        return c;
    }
    gemm_rows(a, b, &mut c, 0, k, p);
    c
}

/// Fills `c` (whole rows of the output, starting at row `row0`). The inner
/// extent is walked in `KC` panels so a panel of `b` stays cache resident;
/// every output still accumulates in ascending `kk` order.
fn gemm_rows(a: &[f64], b: &[f64], c: &mut [f64], row0: usize, k: usize, p: usize) {
    let rows = c.len() / p;
    let full_cols = p - p % NR;
    for k0 in (0..k).step_by(KC) {
        let k1 = (k0 + KC).min(k);
        let mut r = 0;
        while r + MR <= rows {
            let i = row0 + r;
            for j0 in (0..full_cols).step_by(NR) {
                let mut acc = [[0.0f64; NR]; MR];
                for (q, accr) in acc.iter_mut().enumerate() {
                    accr.copy_from_slice(&c[(r + q) * p + j0..(r + q) * p + j0 + NR]);
                }
                for kk in k0..k1 {
                    let bv: &[f64; NR] = b[kk * p + j0..kk * p + j0 + NR].try_into().unwrap();
                    for (q, accr) in acc.iter_mut().enumerate() {
                        let av = a[(i + q) * k + kk];
                        for (x, &bb) in accr.iter_mut().zip(bv) {
                            *x += av * bb;
                        }
                    }
                }
                for (q, accr) in acc.iter().enumerate() {
                    c[(r + q) * p + j0..(r + q) * p + j0 + NR].copy_from_slice(accr);
                }
            }
            r += MR;
        }
        while r < rows {
            let i = row0 + r;
            let crow = &mut c[r * p..(r + 1) * p];
            for j0 in (0..full_cols).step_by(NR) {
                let mut acc: [f64; NR] = crow[j0..j0 + NR].try_into().unwrap();
                for kk in k0..k1 {
                    let av = a[i * k + kk];
                    let bv = &b[kk * p + j0..kk * p + j0 + NR];
                    for (x, &bb) in acc.iter_mut().zip(bv) {
                        *x += av * bb;
                    }
                }
                crow[j0..j0 + NR].copy_from_slice(&acc);
            }
            r += 1;
        }
    }
    if full_cols < p {
        for r in 0..rows {
            tail_cols(a, b, &mut c[r * p..(r + 1) * p], row0 + r, k, p, full_cols);
        }
    }
}

#[inline]
fn tail_cols(a: &[f64], b: &[f64], crow: &mut [f64], i: usize, k: usize, p: usize, from: usize) {
    let arow = &a[i * k..(i + 1) * k];
    for (j, out) in crow.iter_mut().enumerate().skip(from) {
        let mut s = 0.0;
        for (kk, &av) in arow.iter().enumerate() {
            s += av * b[kk * p + j];
        }
        *out = s;
    }
}

/// Matrix transpose (no ops charged).
pub fn transpose(a: &Tensor) -> Result<Tensor> {
    let (m, n) = a.dims2()?;
    Ok(Tensor::from_parts(vec![n, m], transpose_raw(a.data(), m, n)))
}

pub(crate) fn transpose_raw(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    const B: usize = 32;
    for i0 in (0..m).step_by(B) {
        for j0 in (0..n).step_by(B) {
            for i in i0..(i0 + B).min(m) {
                for j in j0..(j0 + B).min(n) {
                    out[j * m + i] = a[i * n + j];
                }
            }
        }
    }
    out
}

/// True when `b` can be added to `a` as a bias row: `b` has shape `[w]` or
/// `[1, w]` where `w` is `a`'s last extent, and `a` has more than one row.
pub(crate) fn is_row_broadcast(a: &[usize], b: &[usize]) -> bool {
    let Some(&w) = a.last() else { return false };
    let row = match b {
        [x] => *x == w,
        [1, x] => *x == w,
        _ => false,
    };
    row && a != b
}

/// Elementwise `a op b`. `b` either matches `a`'s shape or is a bias row
/// broadcast over `a`'s last axis.
pub fn ew(op: EwOp, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let f = match op {
        EwOp::Add => |x: f64, y: f64| x + y,
        EwOp::Sub => |x: f64, y: f64| x - y,
        EwOp::Mul => |x: f64, y: f64| x * y,
    };
    let n = a.len() as u64;
    let data = if a.shape() == b.shape() {
        zip_map(a.data(), b.data(), f)
    } else if is_row_broadcast(a.shape(), b.shape()) {
        let w = b.len();
        let bd = b.data();
        let mut out = a.data().to_vec();
        for row in out.chunks_mut(w) {
            for (x, &y) in row.iter_mut().zip(bd) {
                *x = f(*x, y);
            }
        }
        out
    } else {
        return Err(dim_err!(
            "shapes {:?} and {:?} are not elementwise-compatible",
            a.shape(),
            b.shape()
        ));
    };
    match op {
        EwOp::Mul => charge(0, n),
        _ => charge(n, 0),
    }
    Ok(Tensor::from_parts(a.shape().to_vec(), data))
}

fn zip_map(a: &[f64], b: &[f64], f: fn(f64, f64) -> f64) -> Vec<f64> {
    #[cfg(feature = "parallel")]
    if parallel_enabled() && a.len() >= PAR_ELEMS {
        return a.par_iter().zip(b.par_iter()).map(|(&x, &y)| f(x, y)).collect();
    }
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

pub(crate) fn map_raw(a: &[f64], f: impl Fn(f64) -> f64 + Sync + Send) -> Vec<f64> {
    #[cfg(feature = "parallel")]
    if parallel_enabled() && a.len() >= PAR_ELEMS {
        return a.par_iter().map(|&x| f(x)).collect();
    }
    a.iter().map(|&x| f(x)).collect()
}

/// `k`-th derivative of tanh, elementwise: k=0 tanh, k=1 `1-t²`,
/// k=2 `-2t(1-t²)`, k=3 `-2(1-t²)(1-3t²)`.
pub fn tanh_k(k: u8, a: &Tensor) -> Result<Tensor> {
    if k > 3 {
        return Err(Error::Usage(format!("tanh derivative order {k} > 3")));
    }
    let n = a.len() as u64;
    charge(n * TANH_ADDS, n * TANH_MULTS);
    Ok(Tensor::from_parts(a.shape().to_vec(), map_raw(a.data(), move |x| tanh_deriv(k, x))))
}

#[inline]
pub(crate) fn tanh_deriv(k: u8, x: f64) -> f64 {
    let t = x.tanh();
    let s = 1.0 - t * t;
    match k {
        0 => t,
        1 => s,
        2 => -2.0 * t * s,
        _ => -2.0 * s * (1.0 - 3.0 * t * t),
    }
}

pub fn scale(a: &Tensor, c: f64) -> Tensor {
    charge(0, a.len() as u64);
    Tensor::from_parts(a.shape().to_vec(), map_raw(a.data(), move |x| x * c))
}

pub fn square(a: &Tensor) -> Tensor {
    charge(0, a.len() as u64);
    Tensor::from_parts(a.shape().to_vec(), map_raw(a.data(), |x| x * x))
}

/// Sum or mean of all elements, in a fixed blocked order.
pub fn reduce(op: ReduceOp, a: &Tensor) -> Result<f64> {
    let n = a.len();
    if op == ReduceOp::Mean && n == 0 {
        return Err(Error::Domain("mean of an empty tensor".into()));
    }
    charge(n.saturating_sub(1) as u64, u64::from(op == ReduceOp::Mean));
    let s = sum_raw(a.data());
    Ok(match op {
        ReduceOp::Sum => s,
        ReduceOp::Mean => s / n as f64,
    })
}

/// Blocked sum: ascending within 256-element blocks, block partials summed
/// ascending. Independent of the execution mode.
pub(crate) fn sum_raw(a: &[f64]) -> f64 {
    const BLK: usize = 256;
    let block = |c: &[f64]| c.iter().fold(0.0, |s, &x| s + x);
    #[cfg(feature = "parallel")]
    if parallel_enabled() && a.len() >= PAR_ELEMS {
        let partials: Vec<f64> = a.par_chunks(BLK).map(block).collect();
        return partials.iter().fold(0.0, |s, &x| s + x);
    }
    a.chunks(BLK).map(block).fold(0.0, |s, x| s + x)
}

/// Sums a `[.., w]` tensor over every axis but the last (bias adjoint).
pub(crate) fn sum_to_row(a: &Tensor, row_shape: &[usize]) -> Tensor {
    let w = *a.shape().last().unwrap();
    let mut out = vec![0.0; w];
    for row in a.data().chunks(w) {
        for (o, &x) in out.iter_mut().zip(row) {
            *o += x;
        }
    }
    Tensor::from_parts(row_shape.to_vec(), out)
}

fn check_features(features: &[&Tensor]) -> Result<(Vec<usize>, usize)> {
    if features.len() < 2 {
        return Err(dim_err!("merge needs at least two feature matrices"));
    }
    let r = features[0].dims2()?.1;
    let mut ns = Vec::with_capacity(features.len());
    for (i, f) in features.iter().enumerate() {
        let (n, ri) = f.dims2()?;
        if ri != r {
            return Err(dim_err!(
                "feature {i} has rank extent {ri}, expected {r} (shape {:?})",
                f.shape()
            ));
        }
        ns.push(n);
    }
    Ok((ns, r))
}

/// Row-wise Khatri-Rao product: `out[a*nb + b, j] = q[a, j] * f[b, j]`.
fn khatri_rao(q: &[f64], na: usize, f: &[f64], nb: usize, r: usize) -> Vec<f64> {
    let mut out = vec![0.0; na * nb * r];
    for a in 0..na {
        let qa = &q[a * r..(a + 1) * r];
        for b in 0..nb {
            let fb = &f[b * r..(b + 1) * r];
            let o = &mut out[(a * nb + b) * r..(a * nb + b + 1) * r];
            for j in 0..r {
                o[j] = qa[j] * fb[j];
            }
        }
    }
    out
}

/// Partial products `Q_1 = F_1`, `Q_k = Q_{k-1} ⊙ F_k` for k < d.
fn partial_products(features: &[&Tensor], ns: &[usize], r: usize) -> Vec<Vec<f64>> {
    let d = features.len();
    let mut qs: Vec<Vec<f64>> = vec![features[0].data().to_vec()];
    let mut rows = ns[0];
    for k in 1..d - 1 {
        let next = khatri_rao(qs.last().unwrap(), rows, features[k].data(), ns[k], r);
        rows *= ns[k];
        qs.push(next);
    }
    qs
}

/// Rank-`r` outer-product merge of `d` feature matrices `F_i: [n_i, r]`:
/// `out[i_1..i_d] = Σ_j Π_k F_k[i_k, j]`, computed as Khatri-Rao products of
/// the leading factors followed by one GEMM against the last factor.
pub fn merge(features: &[&Tensor]) -> Result<Tensor> {
    let (ns, r) = check_features(features)?;
    let d = ns.len();
    let lead: usize = ns[..d - 1].iter().product();
    let last = ns[d - 1];
    let mut mults = 0u64;
    let mut rows = ns[0];
    for &n in &ns[1..d - 1] {
        rows *= n;
        mults += (rows * r) as u64;
    }
    mults += (lead * last * r) as u64;
    charge((lead * last * r.saturating_sub(1)) as u64, mults);

    let qs = partial_products(features, &ns, r);
    let ft = transpose_raw(features[d - 1].data(), last, r);
    let out = gemm(qs.last().unwrap(), &ft, lead, r, last);
    Ok(Tensor::from_parts(ns, out))
}

/// Adjoints of [`merge`] w.r.t. each factor given the upstream adjoint of the
/// merged grid. Factors with `needs[i] == false` yield `None`.
pub(crate) fn merge_backward(
    features: &[&Tensor],
    upstream: &Tensor,
    needs: &[bool],
) -> Result<Vec<Option<Tensor>>> {
    let (ns, r) = check_features(features)?;
    let d = ns.len();
    let lead: usize = ns[..d - 1].iter().product();
    let last = ns[d - 1];
    if upstream.shape() != ns.as_slice() {
        return Err(dim_err!(
            "merge adjoint shape {:?} != {:?}",
            upstream.shape(),
            ns
        ));
    }
    let mut grads: Vec<Option<Tensor>> = vec![None; d];
    let qs = partial_products(features, &ns, r);
    let abar = upstream.data();
    if needs[d - 1] {
        let at = transpose_raw(abar, lead, last);
        let g = gemm(&at, qs.last().unwrap(), last, lead, r);
        grads[d - 1] = Some(Tensor::from_parts(vec![last, r], g));
    }
    if !needs[..d - 1].iter().any(|&x| x) {
        return Ok(grads);
    }
    // qbar: adjoint of Q_{d-1}, [lead, r]
    let mut qbar = gemm(abar, features[d - 1].data(), lead, last, r);
    let mut rows = lead;
    for k in (1..d - 1).rev() {
        let nk = ns[k];
        let prev_rows = rows / nk;
        let fk = features[k].data();
        let qprev = &qs[k - 1];
        if needs[k] {
            let mut g = vec![0.0; nk * r];
            for a in 0..prev_rows {
                let qa = &qprev[a * r..(a + 1) * r];
                for b in 0..nk {
                    let qb = &qbar[(a * nk + b) * r..(a * nk + b + 1) * r];
                    let gb = &mut g[b * r..(b + 1) * r];
                    for j in 0..r {
                        gb[j] += qb[j] * qa[j];
                    }
                }
            }
            grads[k] = Some(Tensor::from_parts(vec![nk, r], g));
        }
        let mut next = vec![0.0; prev_rows * r];
        for a in 0..prev_rows {
            let na = &mut next[a * r..(a + 1) * r];
            for b in 0..nk {
                let qb = &qbar[(a * nk + b) * r..(a * nk + b + 1) * r];
                let fb = &fk[b * r..(b + 1) * r];
                for j in 0..r {
                    na[j] += qb[j] * fb[j];
                }
            }
        }
        qbar = next;
        rows = prev_rows;
    }
    if needs[0] {
        grads[0] = Some(Tensor::from_parts(vec![ns[0], r], qbar));
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn naive_matmul(a: &Tensor, b: &Tensor) -> Tensor {
        let (m, k) = a.dims2().unwrap();
        let p = b.dims2().unwrap().1;
        let mut out = vec![0.0; m * p];
        for i in 0..m {
            for j in 0..p {
                let mut s = 0.0;
                for kk in 0..k {
                    s += a.data()[i * k + kk] * b.data()[kk * p + j];
                }
                out[i * p + j] = s;
            }
        }
        Tensor::new(vec![m, p], out).unwrap()
    }

    #[test]
    fn matmul_identity_and_column() {
        let a = Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        let eye = Tensor::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]).unwrap();
        assert_eq!(matmul(&a, &eye).unwrap(), a);
        let v = Tensor::from_rows(&[&[5.0], &[7.0]]).unwrap();
        assert_eq!(matmul(&eye, &v).unwrap(), v);
    }

    #[test]
    fn matmul_matches_triple_loop_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(m, k, p) in &[(3, 4, 2), (9, 7, 33), (37, 50, 50), (130, 17, 5), (6, 600, 21), (1, 1, 1)] {
            let a = rand_tensor(&mut rng, &[m, k]);
            let b = rand_tensor(&mut rng, &[k, p]);
            let got = matmul(&a, &b).unwrap();
            let want = naive_matmul(&a, &b);
            assert_eq!(got.data(), want.data(), "{m}x{k}x{p}");
        }
    }

    #[test]
    fn matmul_rejects_mismatch() {
        let a = Tensor::zeros(&[2, 3]);
        assert!(matches!(matmul(&a, &a), Err(Error::Dimension(_))));
    }

    #[test]
    fn elementwise_and_bias() {
        let a = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::new(vec![2], vec![3.0, 4.0]).unwrap();
        assert_eq!(ew(EwOp::Add, &a, &b).unwrap().data(), &[4.0, 6.0]);
        let m = Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]).unwrap();
        let bias = Tensor::new(vec![2], vec![10.0, 20.0]).unwrap();
        assert_eq!(
            ew(EwOp::Add, &m, &bias).unwrap().data(),
            &[11.0, 22.0, 13.0, 24.0, 15.0, 26.0]
        );
        let bad = Tensor::zeros(&[3]);
        assert!(ew(EwOp::Sub, &m, &bad).is_err());
        assert!(ew(EwOp::Mul, &m, &Tensor::zeros(&[2, 3])).is_err());
    }

    #[test]
    fn tanh_derivatives_at_origin() {
        let z = Tensor::scalar(0.0);
        assert_eq!(tanh_k(0, &z).unwrap().item().unwrap(), 0.0);
        assert_eq!(tanh_k(1, &z).unwrap().item().unwrap(), 1.0);
        assert_eq!(tanh_k(2, &z).unwrap().item().unwrap(), 0.0);
        assert!(tanh_k(4, &z).is_err());
    }

    #[test]
    fn tanh_derivatives_match_central_differences() {
        let (x, h) = (0.7, 1e-5);
        for k in 1..=3u8 {
            let fd = (tanh_deriv(k - 1, x + h) - tanh_deriv(k - 1, x - h)) / (2.0 * h);
            let exact = tanh_deriv(k, x);
            assert!(((fd - exact) / exact).abs() < 1e-8, "k={k}: {fd} vs {exact}");
        }
    }

    #[test]
    fn reductions() {
        let a = Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(reduce(ReduceOp::Sum, &a).unwrap(), 6.0);
        let b = Tensor::new(vec![2], vec![3.0, -3.0]).unwrap();
        assert_eq!(reduce(ReduceOp::Mean, &square(&b)).unwrap(), 9.0);
        assert!(matches!(
            reduce(ReduceOp::Mean, &Tensor::zeros(&[0])),
            Err(Error::Domain(_))
        ));
    }

    /// Pairwise (cascade) summation as an independent reference.
    fn pairwise(x: &[f64]) -> f64 {
        if x.len() <= 2 {
            return x.iter().sum();
        }
        let (l, r) = x.split_at(x.len() / 2);
        pairwise(l) + pairwise(r)
    }

    #[test]
    fn sum_matches_pairwise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = rand_tensor(&mut rng, &[10, 10, 10]);
        let want = pairwise(t.data());
        let got = reduce(ReduceOp::Sum, &t).unwrap();
        assert!(((got - want) / want).abs() < 1e-10);
    }

    #[test]
    fn merge_small_cases() {
        let f1 = Tensor::from_rows(&[&[1.0, 2.0]]).unwrap();
        let f2 = Tensor::from_rows(&[&[3.0, 4.0]]).unwrap();
        let m = merge(&[&f1, &f2]).unwrap();
        assert_eq!(m.shape(), &[1, 1]);
        assert_eq!(m.data(), &[11.0]);
        let g = |v: f64| Tensor::from_rows(&[&[v]]).unwrap();
        let m3 = merge(&[&g(2.0), &g(3.0), &g(5.0)]).unwrap();
        assert_eq!(m3.shape(), &[1, 1, 1]);
        assert_eq!(m3.data(), &[30.0]);
        assert!(merge(&[&f1, &g(1.0)]).is_err());
        assert!(merge(&[&f1]).is_err());
    }

    #[test]
    fn merge_is_multilinear() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let fs: Vec<Tensor> = [3, 4, 2].iter().map(|&n| rand_tensor(&mut rng, &[n, 3])).collect();
        let base = merge(&fs.iter().collect::<Vec<_>>()).unwrap();
        let scaled1 = fs[1].map(|v| v * 4.0);
        let scaled = merge(&[&fs[0], &scaled1, &fs[2]]).unwrap();
        for (a, b) in base.data().iter().zip(scaled.data()) {
            assert_eq!(a * 4.0, *b);
        }
    }
}
