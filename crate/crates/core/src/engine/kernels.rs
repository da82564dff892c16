//! Numeric forward rules for every op.

use rayon::prelude::*;

use super::expr::Op;
use super::{EngineError, Real, Tensor};

/// Below this many multiply-adds a matmul stays on the calling thread.
const PAR_THRESHOLD: usize = 1 << 16;

pub(crate) fn eval_op<T: Real>(op: &Op<T>, args: &[&Tensor<T>], shape: &[usize]) -> Result<Tensor<T>, EngineError> {
    let out = match op {
        Op::Leaf(_) | Op::Constant(_) => unreachable!("leaves are bound, not computed"),
        Op::Add => zip(args[0], args[1], |a, b| a + b),
        Op::Sub => zip(args[0], args[1], |a, b| a - b),
        Op::Mul => zip(args[0], args[1], |a, b| a * b),
        Op::Neg => args[0].map(|a| -a),
        Op::Scale(c) => {
            let c = *c;
            args[0].map(|a| a * c)
        }
        Op::Offset(c) => {
            let c = *c;
            args[0].map(|a| a + c)
        }
        Op::Unary(f) => {
            let f = *f;
            args[0].map(|a| f.apply(a))
        }
        Op::Sum => Tensor::scalar(args[0].data().iter().copied().sum()),
        Op::Fill => Tensor::full(shape, args[0].item()),
        Op::MatMul => matmul(args[0], args[1]),
        Op::Transpose => transpose(args[0]),
        Op::BroadcastRows => {
            let v = args[0].data();
            let rows = shape[0];
            let mut data = Vec::with_capacity(rows * v.len());
            for _ in 0..rows {
                data.extend_from_slice(v);
            }
            Tensor::from_raw(shape.to_vec(), data)
        }
        Op::SumRows => {
            let (n, m) = (args[0].shape()[0], args[0].shape()[1]);
            let d = args[0].data();
            let mut out = vec![T::zero(); m];
            for r in 0..n {
                for (o, &v) in out.iter_mut().zip(&d[r * m..(r + 1) * m]) {
                    *o = *o + v;
                }
            }
            Tensor::from_raw(vec![m], out)
        }
        Op::BroadcastCols => {
            let cols = shape[1];
            let mut data = Vec::with_capacity(shape[0] * cols);
            for &v in args[0].data() {
                data.extend(std::iter::repeat_n(v, cols));
            }
            Tensor::from_raw(shape.to_vec(), data)
        }
        Op::SumCols => {
            let m = args[0].shape()[1];
            let sums = args[0]
                .data()
                .chunks(m.max(1))
                .map(|row| row.iter().copied().sum())
                .collect();
            Tensor::from_raw(shape.to_vec(), sums)
        }
        Op::Reshape => Tensor::from_raw(shape.to_vec(), args[0].data().to_vec()),
        Op::SliceCols(start) => {
            let m = args[0].shape()[1];
            let len = shape[1];
            let mut data = Vec::with_capacity(shape[0] * len);
            for row in args[0].data().chunks(m.max(1)).take(shape[0]) {
                data.extend_from_slice(&row[*start..start + len]);
            }
            Tensor::from_raw(shape.to_vec(), data)
        }
        Op::PadCols(start) => {
            let m = args[0].shape()[1];
            let total = shape[1];
            let mut data = vec![T::zero(); shape[0] * total];
            for (r, row) in args[0].data().chunks(m.max(1)).take(shape[0]).enumerate() {
                data[r * total + start..r * total + start + m].copy_from_slice(row);
            }
            Tensor::from_raw(shape.to_vec(), data)
        }
        Op::Concat => {
            let (a, b) = (args[0].shape()[1], args[1].shape()[1]);
            let mut data = Vec::with_capacity(shape[0] * (a + b));
            for r in 0..shape[0] {
                data.extend_from_slice(&args[0].data()[r * a..(r + 1) * a]);
                data.extend_from_slice(&args[1].data()[r * b..(r + 1) * b]);
            }
            Tensor::from_raw(shape.to_vec(), data)
        }
        Op::Gather(idx) => {
            let m = shape[1];
            let src = args[0].data();
            let mut data = Vec::with_capacity(idx.len() * m);
            for &i in idx.iter() {
                data.extend_from_slice(&src[i * m..(i + 1) * m]);
            }
            Tensor::from_raw(shape.to_vec(), data)
        }
        Op::Scatter(idx) => {
            let m = shape[1];
            let src = args[0].data();
            let mut data = vec![T::zero(); shape[0] * m];
            for (r, &i) in idx.iter().enumerate() {
                for c in 0..m {
                    data[i * m + c] = data[i * m + c] + src[r * m + c];
                }
            }
            Tensor::from_raw(shape.to_vec(), data)
        }
        Op::SpMM(sp) => sp.matrix().matmul_dense(args[0]),
        Op::Stack => {
            let (n, k, m) = (shape[0], shape[1], shape[2]);
            let mut data = Vec::with_capacity(n * k * m);
            for r in 0..n {
                for part in args {
                    data.extend_from_slice(&part.data()[r * m..(r + 1) * m]);
                }
            }
            Tensor::from_raw(shape.to_vec(), data)
        }
        Op::Select(k) => {
            let s = args[0].shape();
            let (n, kk, m) = (s[0], s[1], s[2]);
            let mut data = Vec::with_capacity(n * m);
            for r in 0..n {
                let base = (r * kk + k) * m;
                data.extend_from_slice(&args[0].data()[base..base + m]);
            }
            Tensor::from_raw(shape.to_vec(), data)
        }
        Op::Embed(k) => {
            let (n, kk, m) = (shape[0], shape[1], shape[2]);
            let mut data = vec![T::zero(); n * kk * m];
            for r in 0..n {
                let base = (r * kk + k) * m;
                data[base..base + m].copy_from_slice(&args[0].data()[r * m..(r + 1) * m]);
            }
            Tensor::from_raw(shape.to_vec(), data)
        }
        Op::BatchTranspose => {
            let s = args[0].shape();
            let (n, a, b) = (s[0], s[1], s[2]);
            let src = args[0].data();
            let mut data = vec![T::zero(); n * a * b];
            for r in 0..n {
                for i in 0..a {
                    for j in 0..b {
                        data[r * a * b + j * a + i] = src[r * a * b + i * b + j];
                    }
                }
            }
            Tensor::from_raw(shape.to_vec(), data)
        }
        Op::BatchMatVec => {
            let s = args[0].shape();
            let (n, a, b) = (s[0], s[1], s[2]);
            let (mat, v) = (args[0].data(), args[1].data());
            let mut data = vec![T::zero(); n * a];
            for r in 0..n {
                let vr = &v[r * b..(r + 1) * b];
                for i in 0..a {
                    let row = &mat[r * a * b + i * b..r * a * b + (i + 1) * b];
                    data[r * a + i] = row.iter().zip(vr).map(|(&x, &y)| x * y).sum();
                }
            }
            Tensor::from_raw(shape.to_vec(), data)
        }
        Op::BatchOuter => {
            let (n, a, b) = (shape[0], shape[1], shape[2]);
            let (u, v) = (args[0].data(), args[1].data());
            let mut data = Vec::with_capacity(n * a * b);
            for r in 0..n {
                for i in 0..a {
                    let ui = u[r * a + i];
                    data.extend(v[r * b..(r + 1) * b].iter().map(|&vj| ui * vj));
                }
            }
            Tensor::from_raw(shape.to_vec(), data)
        }
        Op::BatchSolve => batch_solve(args[0], args[1])?,
        Op::LogSumExpRows => {
            let m = args[0].shape()[1];
            let v = args[0]
                .data()
                .chunks(m.max(1))
                .map(|row| {
                    let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
                    mx + row.iter().map(|&x| (x - mx).exp()).sum::<T>().ln()
                })
                .collect();
            Tensor::from_raw(shape.to_vec(), v)
        }
        Op::SoftmaxRows => {
            let m = args[0].shape()[1];
            let mut data = Vec::with_capacity(args[0].len());
            for row in args[0].data().chunks(m.max(1)) {
                let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
                let start = data.len();
                data.extend(row.iter().map(|&x| (x - mx).exp()));
                let z: T = data[start..].iter().copied().sum();
                for v in &mut data[start..] {
                    *v = *v / z;
                }
            }
            Tensor::from_raw(shape.to_vec(), data)
        }
    };
    Ok(out)
}

fn zip<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_raw(a.shape().to_vec(), data)
}

pub(crate) fn matmul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let (n, k) = (a.shape()[0], a.shape()[1]);
    let m = b.shape()[1];
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![T::zero(); n * m];
    let row_kernel = |(r, row): (usize, &mut [T])| {
        for (p, &aval) in ad[r * k..(r + 1) * k].iter().enumerate() {
            if aval == T::zero() {
                continue;
            }
            for (o, &bv) in row.iter_mut().zip(&bd[p * m..(p + 1) * m]) {
                *o = *o + aval * bv;
            }
        }
    };
    if m == 0 {
        return Tensor::from_raw(vec![n, m], out);
    }
    if n * k * m >= PAR_THRESHOLD {
        out.par_chunks_mut(m).enumerate().for_each(row_kernel);
    } else {
        out.chunks_mut(m).enumerate().for_each(row_kernel);
    }
    Tensor::from_raw(vec![n, m], out)
}

fn transpose<T: Real>(a: &Tensor<T>) -> Tensor<T> {
    let (n, m) = (a.shape()[0], a.shape()[1]);
    let src = a.data();
    let mut data = vec![T::zero(); n * m];
    for i in 0..n {
        for j in 0..m {
            data[j * n + i] = src[i * m + j];
        }
    }
    Tensor::from_raw(vec![m, n], data)
}

/// LU with partial pivoting, one system per batch element.
fn batch_solve<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, EngineError> {
    let s = a.shape();
    let (n, m) = (s[0], s[1]);
    let mut out = Vec::with_capacity(n * m);
    for r in 0..n {
        let mut lu = a.data()[r * m * m..(r + 1) * m * m].to_vec();
        let mut x = b.data()[r * m..(r + 1) * m].to_vec();
        let scale = lu.iter().fold(T::zero(), |acc, v| acc.max(v.abs()));
        let tiny = scale * T::epsilon() * T::lit(m as f64);
        for col in 0..m {
            let (piv, pmax) =
                (col..m)
                    .map(|i| (i, lu[i * m + col].abs()))
                    .fold(
                        (col, T::neg_infinity()),
                        |best, cur| if cur.1 > best.1 { cur } else { best },
                    );
            if pmax <= tiny || pmax == T::zero() {
                return Err(EngineError::Singular { batch: r });
            }
            if piv != col {
                for j in 0..m {
                    lu.swap(col * m + j, piv * m + j);
                }
                x.swap(col, piv);
            }
            let d = lu[col * m + col];
            for i in col + 1..m {
                let f = lu[i * m + col] / d;
                if f == T::zero() {
                    continue;
                }
                for j in col..m {
                    lu[i * m + j] = lu[i * m + j] - f * lu[col * m + j];
                }
                x[i] = x[i] - f * x[col];
            }
        }
        for i in (0..m).rev() {
            let mut acc = x[i];
            for j in i + 1..m {
                acc = acc - lu[i * m + j] * x[j];
            }
            x[i] = acc / lu[i * m + i];
        }
        out.extend(x);
    }
    Ok(Tensor::from_raw(vec![n, m], out))
}
