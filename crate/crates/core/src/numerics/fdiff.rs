use crate::error::{Error, Result};
use crate::scalar::Real;

/// Central-difference gradient of `f` at `x` with step `h`.
pub fn finite_diff_grad<T: Real>(mut f: impl FnMut(&[T]) -> T, x: &[T], h: T) -> Result<Vec<T>> {
    let mut probe = x.to_vec();
    let two_h = h + h;
    (0..x.len())
        .map(|i| central_difference(&mut f, &mut probe, i, h).map(|d| d / two_h))
        .collect()
}

/// Central difference along selected coordinates only.
pub fn finite_diff_partial<T: Real>(
    mut f: impl FnMut(&[T]) -> T,
    x: &[T],
    coords: &[usize],
    h: T,
) -> Result<Vec<T>> {
    let mut probe = x.to_vec();
    let two_h = h + h;
    coords
        .iter()
        .map(|&i| central_difference(&mut f, &mut probe, i, h).map(|d| d / two_h))
        .collect()
}

fn central_difference<T: Real>(
    f: &mut impl FnMut(&[T]) -> T,
    probe: &mut [T],
    i: usize,
    h: T,
) -> Result<T> {
    let x0 = probe[i];
    probe[i] = x0 + h;
    let fp = f(probe);
    probe[i] = x0 - h;
    let fm = f(probe);
    probe[i] = x0;
    if !fp.is_finite() || !fm.is_finite() {
        return Err(Error::NonFiniteFunctionValue { index: i });
    }
    Ok(fp - fm)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic() {
        let g = finite_diff_grad(|x: &[f64]| x.iter().map(|v| v * v).sum(), &[1.0, 2.0], 1e-5)
            .unwrap();
        assert!((g[0] - 2.0).abs() < 1e-6 && (g[1] - 4.0).abs() < 1e-6);
    }

    #[test]
    fn constant_has_zero_gradient() {
        let g = finite_diff_grad(|_: &[f64]| 3.0, &[1.0, -1.0, 0.5], 1e-5).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn non_finite_is_reported() {
        let r = finite_diff_grad(|x: &[f64]| (x[0]).ln(), &[0.0], 1e-5);
        assert!(matches!(r, Err(Error::NonFiniteFunctionValue { index: 0 })));
    }
}
