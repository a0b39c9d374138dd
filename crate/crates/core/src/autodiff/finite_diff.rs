//! Central finite-difference oracle for gradient checking.

/// Compares `analytic` against central differences of `f` at `point`,
/// returning max_i |analytic_i - fd_i| / (|analytic_i| + eps_floor).
///
/// `f` is evaluated at 2·n perturbed points; the probe point is restored
/// between evaluations.
pub fn finite_difference_check(
    f: &mut dyn FnMut(&[f64]) -> f64,
    point: &[f64],
    analytic: &[f64],
    eps: f64,
    eps_floor: f64,
) -> f64 {
    assert_eq!(point.len(), analytic.len());
    assert!(eps > 0.0 && eps <= 1e-2, "eps must be in (0, 1e-2]");
    let mut probe = point.to_vec();
    let mut worst = 0.0_f64;
    for i in 0..probe.len() {
        let orig = probe[i];
        probe[i] = orig + eps;
        let fp = f(&probe);
        probe[i] = orig - eps;
        let fm = f(&probe);
        probe[i] = orig;
        let fd = (fp - fm) / (2.0 * eps);
        let rel = (analytic[i] - fd).abs() / (analytic[i].abs() + eps_floor);
        if rel > worst {
            worst = rel;
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;

    #[test]
    fn quadratic_is_exact_up_to_rounding() {
        // f(x) = 3x0^2 + x0*x1 - 2x1^2; central differences are exact for
        // quadratics up to floating-point rounding.
        let point = [1.3, -0.4];
        let mut f = |p: &[f64]| 3.0 * p[0] * p[0] + p[0] * p[1] - 2.0 * p[1] * p[1];
        let analytic = [6.0 * point[0] + point[1], point[0] - 4.0 * point[1]];
        let err = finite_difference_check(&mut f, &point, &analytic, 1e-5, 1e-6);
        assert!(err <= 1e-9, "err={err}");
    }

    #[test]
    fn constant_function_has_zero_error() {
        let point = [0.2, 0.4, -1.0];
        let mut f = |_: &[f64]| 7.5;
        let analytic = [0.0; 3];
        let err = finite_difference_check(&mut f, &point, &analytic, 1e-5, 1e-6);
        assert_eq!(err, 0.0);
    }

    #[test]
    fn agrees_with_tape_backward_on_a_mixed_expression() {
        let point = [0.8, -0.6, 1.7];
        let build = |p: &[f64]| {
            let mut tape = Tape::new();
            let a = tape.param(p, 0);
            let b = tape.param(p, 1);
            let c = tape.param(p, 2);
            let s = tape.sin(a);
            let e = tape.exp(b);
            let m = tape.mul(s, e);
            let sp = tape.softplus(c);
            let sum = tape.add(m, sp);
            let sq = tape.mul(sum, sum);
            (tape, sq)
        };
        let (mut tape, root) = build(&point);
        let mut analytic = vec![0.0; 3];
        tape.backward(root, &point, &mut analytic);

        let mut f = |p: &[f64]| {
            let (tape, root) = build(p);
            tape.value(root)
        };
        let err = finite_difference_check(&mut f, &point, &analytic, 1e-5, 1e-6);
        assert!(err < 1e-7, "err={err}");
    }
}
