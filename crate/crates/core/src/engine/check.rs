use super::{grad, Bindings, EngineError, Expr, Program, Real, Tensor};

/// Jacobian of a vector-valued `f` with respect to `x`, shape
/// `[len(f), len(x)]`, assembled one gradient row per output entry.
pub fn jacobian<T: Real>(f: &Expr<T>, x: &Expr<T>, bindings: &Bindings<T>) -> Result<Tensor<T>, EngineError> {
    let m: usize = f.shape().iter().product();
    let n: usize = x.shape().iter().product();
    let flat = f.reshape(&[1, m]);
    let rows = (0..m)
        .map(|i| grad(&flat.slice_cols(i, 1).sum(), x))
        .collect::<Result<Vec<_>, _>>()?;
    let values = Program::new(&rows).run(bindings)?;
    let mut data = Vec::with_capacity(m * n);
    for v in values {
        data.extend_from_slice(v.data());
    }
    Ok(Tensor::from_raw(vec![m, n], data))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub passed: bool,
}

/// `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Compares `grad(f, x)` with central differences of `f` in every
/// coordinate of the leaf `x`.
pub fn check_gradient<T: Real>(
    f: &Expr<T>,
    x: &Expr<T>,
    bindings: &Bindings<T>,
    fd_step: f64,
    tol: f64,
) -> Result<GradCheckReport, EngineError> {
    if fd_step.is_nan() || fd_step <= 0.0 {
        return Err(EngineError::NonPositiveStep);
    }
    if f.shape().iter().product::<usize>() != 1 {
        return Err(EngineError::NonScalar(f.shape().to_vec()));
    }
    let g = grad(f, x)?;
    let analytic = Program::new(&[g]).run(bindings)?.remove(0);
    let value = Program::new(std::slice::from_ref(f));
    let base = bindings
        .get(x)
        .ok_or_else(|| EngineError::Unbound(format!("{x:?}")))?
        .clone();
    let h = T::lit(fd_step);
    let mut worst = 0.0f64;
    for i in 0..base.len() {
        let probe = |delta: T| -> Result<f64, EngineError> {
            let mut shifted = base.clone();
            shifted.data_mut()[i] = shifted.data()[i] + delta;
            let mut b = bindings.clone();
            b.bind(x, shifted);
            Ok(value.run(&b)?[0].item().as_f64())
        };
        let plus = probe(h)?;
        let minus = probe(-h)?;
        let numeric = (plus - minus) / (2.0 * fd_step);
        worst = worst.max(relative_error(analytic.data()[i].as_f64(), numeric));
    }
    Ok(GradCheckReport {
        max_rel_error: worst,
        passed: worst <= tol,
    })
}
