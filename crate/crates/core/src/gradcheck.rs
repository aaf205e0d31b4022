//! Central finite-difference gradient checking. Always run in f64; in f32
//! the difference quotient loses too many digits to be a usable oracle.

use crate::error::{Error, Result};

/// One parameter tensor under check.
#[derive(Debug, Clone)]
pub struct CheckedParam {
    pub name: String,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct GroupReport {
    pub name: String,
    pub max_rel_err: f64,
    pub worst_index: usize,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub groups: Vec<GroupReport>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_err).fold(0.0, f64::max)
    }

    pub fn worst_group(&self) -> Option<&GroupReport> {
        self.groups
            .iter()
            .max_by(|a, b| a.max_rel_err.partial_cmp(&b.max_rel_err).unwrap())
    }
}

/// rel_err(a, n) with an absolute floor so tiny true gradients compare on
/// absolute terms.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
}

/// Compares the tape gradient of `loss_fn` against central finite
/// differences, elementwise over every parameter. `loss_fn` receives the
/// current parameter values and returns (loss, gradient per parameter);
/// it must be deterministic (dropout off, fixed inputs), which is verified
/// by re-evaluation.
pub fn grad_check<F>(params: &mut [CheckedParam], epsilon: f64, mut loss_fn: F) -> Result<GradCheckReport>
where
    F: FnMut(&[CheckedParam]) -> Result<(f64, Vec<Vec<f64>>)>,
{
    let (base_loss, analytic) = loss_fn(params)?;
    let (recheck, _) = loss_fn(params)?;
    if base_loss != recheck {
        return Err(Error::Numeric(format!(
            "loss function is not deterministic: {base_loss} vs {recheck}"
        )));
    }
    if analytic.len() != params.len() {
        return Err(Error::Dimension {
            op: "grad_check",
            detail: format!("{} gradient groups for {} parameters", analytic.len(), params.len()),
        });
    }

    let mut groups = Vec::with_capacity(params.len());
    for pi in 0..params.len() {
        let mut worst = 0.0f64;
        let mut worst_index = 0usize;
        #[allow(clippy::needless_range_loop)] // ei indexes params and analytic in parallel
        for ei in 0..params[pi].data.len() {
            let orig = params[pi].data[ei];
            params[pi].data[ei] = orig + epsilon;
            let (plus, _) = loss_fn(params)?;
            params[pi].data[ei] = orig - epsilon;
            let (minus, _) = loss_fn(params)?;
            params[pi].data[ei] = orig;
            let numeric = (plus - minus) / (2.0 * epsilon);
            let err = relative_error(analytic[pi][ei], numeric);
            if err > worst {
                worst = err;
                worst_index = ei;
            }
        }
        groups.push(GroupReport {
            name: params[pi].name.clone(),
            max_rel_err: worst,
            worst_index,
        });
    }
    Ok(GradCheckReport { groups })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Graph;

    #[test]
    fn quadratic_scalar() {
        let mut params = vec![CheckedParam { name: "theta".into(), data: vec![3.0] }];
        let report = grad_check(&mut params, 1e-5, |ps| {
            let mut g: Graph<f64> = Graph::new();
            let x = g.leaf(ps[0].data.clone(), vec![1], true)?;
            let f = g.hadamard(x, x)?;
            g.backward(f)?;
            Ok((g.value(f)[0], vec![g.grad(x).unwrap().to_vec()]))
        })
        .unwrap();
        assert!(report.max_rel_err() < 1e-9, "{:?}", report);
    }

    #[test]
    fn nondeterministic_loss_detected() {
        let mut calls = 0u64;
        let mut params = vec![CheckedParam { name: "theta".into(), data: vec![1.0] }];
        let err = grad_check(&mut params, 1e-5, |_| {
            calls += 1;
            Ok((calls as f64, vec![vec![0.0]]))
        })
        .unwrap_err();
        assert!(err.to_string().contains("not deterministic"));
    }

    #[test]
    fn corrupted_backward_rule_flagged() {
        // Negative control: report the op as failing when the analytic
        // gradient is deliberately wrong.
        let mut params = vec![CheckedParam { name: "bad_op".into(), data: vec![2.0] }];
        let report = grad_check(&mut params, 1e-5, |ps| {
            let x = ps[0].data[0];
            Ok((x * x, vec![vec![3.0 * x]])) // true gradient is 2x
        })
        .unwrap();
        assert!(report.max_rel_err() > 1e-2);
        assert_eq!(report.worst_group().unwrap().name, "bad_op");
    }

    #[test]
    fn matmul_backward_matches_finite_differences() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let a: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut params = vec![
            CheckedParam { name: "a".into(), data: a },
            CheckedParam { name: "b".into(), data: b },
        ];
        let report = grad_check(&mut params, 1e-5, |ps| {
            let mut g: Graph<f64> = Graph::new();
            let a = g.leaf(ps[0].data.clone(), vec![3, 4], true)?;
            let b = g.leaf(ps[1].data.clone(), vec![4, 2], true)?;
            let c = g.matmul(a, b)?;
            // reduce to scalar: sum of tanh so the gradient is nontrivial
            let t = g.tanh_act(c);
            let ones = g.leaf(vec![1.0; 3], vec![1, 3], false)?;
            let onesc = g.leaf(vec![1.0; 2], vec![2, 1], false)?;
            let s1 = g.matmul(ones, t)?;
            let s = g.matmul(s1, onesc)?;
            g.backward(s)?;
            Ok((
                g.value(s)[0],
                vec![g.grad(a).unwrap().to_vec(), g.grad(b).unwrap().to_vec()],
            ))
        })
        .unwrap();
        assert!(report.max_rel_err() < 1e-6, "{:?}", report);
    }

    #[test]
    fn tanh_backward_matches_finite_differences() {
        let mut params = vec![CheckedParam {
            name: "x".into(),
            data: vec![-0.7, 0.3, 1.9, -2.4],
        }];
        let report = grad_check(&mut params, 1e-5, |ps| {
            let mut g: Graph<f64> = Graph::new();
            let x = g.leaf(ps[0].data.clone(), vec![4], true)?;
            let t = g.tanh_act(x);
            let sq = g.hadamard(t, t)?;
            let col = g.stack_cols(&[sq])?;
            let ones = g.leaf(vec![1.0; 4], vec![1, 4], false)?;
            let s = g.matmul(ones, col)?;
            g.backward(s)?;
            Ok((g.value(s)[0], vec![g.grad(x).unwrap().to_vec()]))
        })
        .unwrap();
        assert!(report.max_rel_err() < 1e-6, "{:?}", report);
    }

    #[test]
    fn softmax_ce_backward_matches_finite_differences() {
        let mut params = vec![CheckedParam {
            name: "logits".into(),
            data: vec![0.5, -1.2, 2.1],
        }];
        let report = grad_check(&mut params, 1e-5, |ps| {
            let mut g: Graph<f64> = Graph::new();
            let l = g.leaf(ps[0].data.clone(), vec![3], true)?;
            let loss = g.softmax_cross_entropy(l, 1)?;
            g.backward(loss)?;
            Ok((g.value(loss)[0], vec![g.grad(l).unwrap().to_vec()]))
        })
        .unwrap();
        assert!(report.max_rel_err() < 1e-6, "{:?}", report);
    }
}
