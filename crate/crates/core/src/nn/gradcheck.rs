use super::param::Parameterized;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Worst `|a - n| / max(|a|, |n|, 1e-8)` over all checked scalars.
    pub max_rel_error: f64,
    /// Block name and flat index of the worst scalar.
    pub worst: Option<(String, usize)>,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Compares analytic gradients against central differences.
///
/// `loss` evaluates the scalar objective and accumulates its gradient into
/// the model's parameter blocks. Gradients are zeroed before the analytic
/// pass and again before returning.
pub fn grad_check<M, F>(model: &mut M, epsilon: f64, mut loss: F) -> GradCheckReport
where
    M: Parameterized,
    F: FnMut(&mut M) -> f64,
{
    model.zero_grads();
    loss(model);
    let analytic: Vec<Vec<f64>> = model
        .param_blocks()
        .iter()
        .map(|b| b.grads.clone())
        .collect();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    for (bi, grads) in analytic.iter().enumerate() {
        for (i, &a) in grads.iter().enumerate() {
            let original = model.param_blocks()[bi].values[i];
            model.param_blocks_mut()[bi].values[i] = original + epsilon;
            let plus = loss(model);
            model.param_blocks_mut()[bi].values[i] = original - epsilon;
            let minus = loss(model);
            model.param_blocks_mut()[bi].values[i] = original;
            let n = (plus - minus) / (2.0 * epsilon);
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
            report.checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel;
                report.worst = Some((model.param_blocks()[bi].name.clone(), i));
                report.analytic = a;
                report.numeric = n;
            }
        }
    }
    model.zero_grads();
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamBlock;

    #[test]
    fn linear_regression_loss() {
        // L = 1/2 sum_i (w·x_i + b - y_i)^2
        let xs = [[0.5, -1.0], [1.5, 0.25], [-0.75, 2.0]];
        let ys = [0.3, -0.2, 1.1];
        let mut params = vec![
            ParamBlock::from_values("w", vec![2], vec![0.4, -0.6]).unwrap(),
            ParamBlock::from_values("b", vec![1], vec![0.1]).unwrap(),
        ];
        let report = grad_check(&mut params, 1e-6, |p: &mut Vec<ParamBlock>| {
            let mut loss = 0.0;
            for (x, y) in xs.iter().zip(ys) {
                let r = p[0].values[0] * x[0] + p[0].values[1] * x[1] + p[1].values[0] - y;
                loss += 0.5 * r * r;
                p[0].grads[0] += r * x[0];
                p[0].grads[1] += r * x[1];
                p[1].grads[0] += r;
            }
            loss
        });
        assert_eq!(report.checked, 3);
        assert!(report.max_rel_error < 1e-6, "{report:?}");
    }

    #[test]
    fn unused_parameter_has_zero_gradients() {
        let mut params = vec![
            ParamBlock::from_values("used", vec![1], vec![2.0]).unwrap(),
            ParamBlock::from_values("unused", vec![1], vec![5.0]).unwrap(),
        ];
        let report = grad_check(&mut params, 1e-6, |p: &mut Vec<ParamBlock>| {
            p[0].grads[0] += 2.0 * p[0].values[0];
            p[0].values[0].powi(2)
        });
        assert!(report.max_rel_error < 1e-6);
        assert_eq!(params[1].grads[0], 0.0);
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let mut params = vec![ParamBlock::from_values("w", vec![1], vec![1.0]).unwrap()];
        let report = grad_check(&mut params, 1e-6, |p: &mut Vec<ParamBlock>| {
            p[0].grads[0] += 3.0 * p[0].values[0];
            p[0].values[0].powi(2)
        });
        assert!(report.max_rel_error > 0.3);
        assert_eq!(report.worst, Some(("w".to_string(), 0)));
    }
}
