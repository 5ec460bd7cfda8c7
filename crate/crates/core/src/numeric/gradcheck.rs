//! Central-difference verification of analytic gradients.

use super::{Graph, Parameters, Tensor, TensorError, Var};

/// Denominator floor of [`relative_error`]. Central differences with a step
/// of `1e-5` in double precision carry roughly `1e-11` of absolute rounding
/// noise, so gradients below this floor are compared on an absolute scale.
pub const GRAD_FLOOR: f64 = 1e-6;

/// `|a − n| / max(|a|, |n|, GRAD_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR)
}

fn scalar_value(g: &Graph, out: Var) -> Result<f64, TensorError> {
    g.value(out).item().ok_or_else(|| TensorError::NonScalarLoss {
        shape: g.value(out).shape().to_vec(),
    })
}

/// Compares backward gradients of `f` with respect to every input against
/// central differences with step `h`, returning the maximum relative error
/// over all coordinates of all inputs.
pub fn check_gradients<F>(f: F, inputs: &[Tensor], h: f64) -> Result<f64, TensorError>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, TensorError>,
{
    let eval = |xs: &[Tensor]| -> Result<f64, TensorError> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|x| g.constant(x.clone())).collect();
        let out = f(&mut g, &vars)?;
        scalar_value(&g, out)
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|x| g.leaf(x.clone())).collect();
    let out = f(&mut g, &vars)?;
    scalar_value(&g, out)?;
    g.backward(out)?;

    let mut worst: f64 = 0.0;
    let mut probe = inputs.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let analytic = g.grad(*var).unwrap_or_else(|| Tensor::zeros(inputs[k].shape()));
        for i in 0..inputs[k].len() {
            let orig = inputs[k].data()[i];
            probe[k].data_mut()[i] = orig + h;
            let plus = eval(&probe)?;
            probe[k].data_mut()[i] = orig - h;
            let minus = eval(&probe)?;
            probe[k].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            worst = worst.max(relative_error(analytic.data()[i], numeric));
        }
    }
    Ok(worst)
}

/// Single-input form of [`check_gradients`].
pub fn check_gradient<F>(f: F, x: &Tensor, h: f64) -> Result<f64, TensorError>
where
    F: Fn(&mut Graph, Var) -> Result<Var, TensorError>,
{
    check_gradients(|g, vs| f(g, vs[0]), std::slice::from_ref(x), h)
}

/// Like [`check_gradients`], but differentiates a loss built from a whole
/// parameter store. Every scalar of every parameter is probed.
pub fn check_param_gradients<F>(params: &Parameters, f: F, h: f64) -> Result<f64, TensorError>
where
    F: Fn(&mut Graph, &Parameters) -> Result<Var, TensorError>,
{
    let mut g = Graph::new();
    let out = f(&mut g, params)?;
    scalar_value(&g, out)?;
    g.backward(out)?;
    let grads = g.param_grads();

    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    for id in params.ids() {
        let analytic = grads
            .iter()
            .find(|(pid, _)| *pid == id)
            .map(|(_, t)| t.clone())
            .unwrap_or_else(|| Tensor::zeros(params.get(id).shape()));
        for i in 0..params.get(id).len() {
            let orig = params.get(id).data()[i];
            probe.get_mut(id).data_mut()[i] = orig + h;
            let mut gp = Graph::new();
            let out = f(&mut gp, &probe)?;
            let plus = scalar_value(&gp, out)?;
            probe.get_mut(id).data_mut()[i] = orig - h;
            let mut gm = Graph::new();
            let out = f(&mut gm, &probe)?;
            let minus = scalar_value(&gm, out)?;
            probe.get_mut(id).data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            worst = worst.max(relative_error(analytic.data()[i], numeric));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_is_exact_to_rounding() {
        let x = Tensor::vector(vec![0.3, -1.7, 2.5, 0.01]);
        let err = check_gradient(
            |g, x| {
                let sq = g.mul(x, x)?;
                g.sum(sq)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-7, "{err}");
    }

    #[test]
    fn softmin_dot_constant() {
        let x = Tensor::vector(vec![0.4, -0.2, 1.3]);
        let err = check_gradient(
            |g, x| {
                let s = g.softmin(x)?;
                let c = g.constant(Tensor::vector(vec![1.5, -2.0, 0.7]));
                let p = g.mul(s, c)?;
                g.sum(p)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn constant_function_has_zero_error() {
        let x = Tensor::vector(vec![1.0, 2.0]);
        let err = check_gradient(
            |g, x| {
                let z = g.scale(x, 0.0)?;
                g.sum(z)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn non_scalar_function_is_rejected() {
        let x = Tensor::vector(vec![1.0, 2.0]);
        let res = check_gradient(|g, x| g.scale(x, 2.0), &x, 1e-5);
        assert!(matches!(res, Err(TensorError::NonScalarLoss { .. })));
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
    }
}
