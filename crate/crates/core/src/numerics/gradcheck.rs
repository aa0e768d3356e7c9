//! Central-difference verification of tape gradients.

use super::tensor::{Graph, Parameterized, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    /// Half-width of the central difference.
    pub step: f64,
    /// Pass threshold on the max relative error.
    pub tol: f64,
    /// Denominator floor, so gradients near zero are compared absolutely.
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-5,
            tol: 1e-4,
            floor: 1e-5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BlockError {
    pub block: String,
    pub max_rel_error: f64,
    pub worst_index: usize,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_block: String,
    pub worst_index: usize,
    pub checked: usize,
    pub tol: f64,
    pub passed: bool,
    pub blocks: Vec<BlockError>,
}

impl GradCheckReport {
    /// Names of blocks whose error exceeds the tolerance.
    pub fn failing_blocks(&self) -> Vec<&str> {
        self.blocks
            .iter()
            .filter(|b| b.max_rel_error >= self.tol)
            .map(|b| b.block.as_str())
            .collect()
    }
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares the tape gradient of `f` w.r.t. every param element against
/// central differences.
pub fn grad_check<P, F>(params: &mut P, f: F, config: GradCheckConfig) -> Result<GradCheckReport>
where
    P: Parameterized<f64>,
    F: FnMut(&mut Graph<f64>, &P) -> Result<Var>,
{
    grad_check_with(params, f, config, |_, _| {})
}

/// As [`grad_check`], but `tamper` may rewrite each block's analytic
/// gradient before comparison. Exists to test the checker itself.
pub fn grad_check_with<P, F, H>(params: &mut P, mut f: F, config: GradCheckConfig, mut tamper: H) -> Result<GradCheckReport>
where
    P: Parameterized<f64>,
    F: FnMut(&mut Graph<f64>, &P) -> Result<Var>,
    H: FnMut(&str, &mut [f64]),
{
    let mut g = Graph::new();
    let loss = f(&mut g, params)?;
    let base = g.scalar(loss)?;
    if !base.is_finite() {
        return Err(Error::NonFinite {
            block: "<loss>".into(),
            index: 0,
        });
    }
    g.backward(loss)?;

    let meta: Vec<(String, usize, Vec<f64>)> = params
        .params()
        .iter()
        .map(|p| {
            let grad = g.param_grad(p.id()).unwrap_or_else(|| vec![0.0; p.len()]);
            (p.name().to_string(), p.len(), grad)
        })
        .collect();

    let mut eval = |params: &P| -> Result<f64> {
        let mut g = Graph::new();
        let l = f(&mut g, params)?;
        g.scalar(l)
    };

    let mut blocks = Vec::with_capacity(meta.len());
    let mut checked = 0;
    for (b, (name, len, mut analytic)) in meta.into_iter().enumerate() {
        tamper(&name, &mut analytic);
        let mut worst = BlockError {
            block: name.clone(),
            max_rel_error: 0.0,
            worst_index: 0,
        };
        debug_assert_eq!(analytic.len(), len);
        for (i, &a) in analytic.iter().enumerate() {
            if !a.is_finite() {
                return Err(Error::NonFinite { block: name, index: i });
            }
            let orig = params.params()[b].value[i];
            params.params_mut()[b].value[i] = orig + config.step;
            let plus = eval(params);
            params.params_mut()[b].value[i] = orig - config.step;
            let minus = eval(params);
            params.params_mut()[b].value[i] = orig;
            let (plus, minus) = (plus?, minus?);
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite { block: name, index: i });
            }
            let numeric = (plus - minus) / (2.0 * config.step);
            let err = relative_error(a, numeric, config.floor);
            if err > worst.max_rel_error {
                worst.max_rel_error = err;
                worst.worst_index = i;
            }
            checked += 1;
        }
        blocks.push(worst);
    }

    let (worst_block, worst_index, max_rel_error) = blocks
        .iter()
        .fold((String::new(), 0, 0.0f64), |acc, b| {
            if b.max_rel_error > acc.2 || acc.0.is_empty() {
                (b.block.clone(), b.worst_index, b.max_rel_error)
            } else {
                acc
            }
        });
    Ok(GradCheckReport {
        passed: max_rel_error < config.tol,
        max_rel_error,
        worst_block,
        worst_index,
        checked,
        tol: config.tol,
        blocks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::tensor::Param;

    #[allow(clippy::ptr_arg)]
    fn half_sq(g: &mut Graph<f64>, p: &Vec<Param<f64>>) -> Result<Var> {
        let x = g.param(&p[0]);
        let d = g.dot(x, x)?;
        g.scale(d, 0.5)
    }

    #[test]
    fn quadratic_is_nearly_exact() {
        let mut p = vec![Param::new("x", 1, 3, vec![0.3, -1.5, 2.0]).unwrap()];
        let r = grad_check(&mut p, half_sq, GradCheckConfig::default()).unwrap();
        assert!(r.passed);
        assert!(r.max_rel_error < 1e-8, "{}", r.max_rel_error);
        assert_eq!(r.checked, 3);
        assert_eq!(p[0].value, vec![0.3, -1.5, 2.0]);
    }

    #[test]
    fn tampered_gradient_names_block() {
        let mut p = vec![
            Param::new("left", 1, 2, vec![1.0, 2.0]).unwrap(),
            Param::new("right", 1, 2, vec![3.0, 4.0]).unwrap(),
        ];
        let f = |g: &mut Graph<f64>, p: &Vec<Param<f64>>| {
            let a = g.param(&p[0]);
            let b = g.param(&p[1]);
            g.dot(a, b)
        };
        let r = grad_check_with(&mut p, f, GradCheckConfig::default(), |name, grad| {
            if name == "right" {
                grad[1] += 0.5;
            }
        })
        .unwrap();
        assert!(!r.passed);
        assert_eq!(r.worst_block, "right");
        assert_eq!(r.failing_blocks(), vec!["right"]);
    }

    #[test]
    fn non_finite_reports_parameter() {
        let mut p = vec![Param::new("x", 1, 2, vec![1.0, 0.0]).unwrap()];
        let f = |g: &mut Graph<f64>, p: &Vec<Param<f64>>| {
            let x = g.param(&p[0]);
            g.nll_rows(x, &[1], 0.0)
        };
        match grad_check(&mut p, f, GradCheckConfig::default()) {
            Err(Error::NonFinite { .. }) => {}
            other => panic!("expected non-finite error, got {other:?}"),
        }
    }
}
