//! Central finite-difference verification of backward rules.
//!
//! The pass criterion is the norm-wise relative error of the whole gradient,
//! `max|analytic − numeric| / max(max|analytic|, max|numeric|, min_scale)`
//! with maxima over every checked element of every parameter. A central
//! difference cannot resolve gradients below roughly `ε·|f|/step`, so
//! normalizing by a single tiny entry (or a tensor of tiny entries) would
//! measure rounding noise rather than the backward rule. Per-tensor ratios
//! are still reported for diagnosis.

use std::fmt;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

use super::tape::{Tape, Var};

/// Tensors above this many elements are checked on a random subsample.
pub const FULL_CHECK_LIMIT: usize = 10_000;
const SUBSAMPLE: usize = 1_000;

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    pub grad_scale: f64,
    pub max_abs_err: f64,
    /// `max_abs_err` over this tensor's own gradient scale (diagnostic).
    pub tensor_rel_err: f64,
}

#[derive(Clone, Debug)]
pub struct FdReport {
    pub step: f64,
    pub tol: f64,
    pub min_scale: f64,
    pub params: Vec<ParamCheck>,
}

impl FdReport {
    /// Largest gradient magnitude over all checked elements.
    pub fn grad_scale(&self) -> f64 {
        self.params.iter().map(|p| p.grad_scale).fold(0.0, f64::max)
    }

    /// Norm-wise relative error of the whole gradient.
    pub fn max_rel_err(&self) -> f64 {
        let abs = self.params.iter().map(|p| p.max_abs_err).fold(0.0, f64::max);
        abs / self.grad_scale().max(self.min_scale)
    }

    /// Relative error of one parameter against the global gradient scale.
    pub fn rel_err_of(&self, p: &ParamCheck) -> f64 {
        p.max_abs_err / self.grad_scale().max(self.min_scale)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_err() < self.tol
    }
}

impl fmt::Display for FdReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "finite-difference check (step {:e}, tol {:e})", self.step, self.tol)?;
        writeln!(
            f,
            "{:<32} {:>8} {:>12} {:>12} {:>12} {:>12} {:>4}",
            "parameter", "checked", "grad scale", "max abs", "rel", "tensor rel", "ok"
        )?;
        for p in &self.params {
            let rel = self.rel_err_of(p);
            writeln!(
                f,
                "{:<32} {:>8} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e} {:>4}",
                p.name,
                p.checked,
                p.grad_scale,
                p.max_abs_err,
                rel,
                p.tensor_rel_err,
                if rel < self.tol { "yes" } else { "NO" }
            )?;
        }
        write!(
            f,
            "gradient scale {:.4e}, max rel {:.4e}: {}",
            self.grad_scale(),
            self.max_rel_err(),
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }
}

/// Options for [`finite_diff_check_with`].
#[derive(Clone, Debug)]
pub struct FdOptions {
    pub step: f64,
    pub tol: f64,
    /// Floor for the gradient scale in the relative-error denominator.
    pub min_scale: f64,
    pub seed: u64,
    /// Names reported for each parameter; defaults to `p0`, `p1`, ...
    pub names: Vec<String>,
}

impl FdOptions {
    pub fn new(step: f64, tol: f64) -> Self {
        Self {
            step,
            tol,
            min_scale: 1e-6,
            seed: 0,
            names: Vec::new(),
        }
    }

    pub fn named(mut self, names: &[&str]) -> Self {
        self.names = names.iter().map(|s| s.to_string()).collect();
        self
    }
}

/// Checks the gradient of the scalar function `f` with respect to each tensor
/// in `params`. `f` builds its output on the supplied tape from the parameter
/// handles, which are passed in the order of `params`.
pub fn finite_diff_check<T, F>(f: F, params: &[Tensor<T>], step: f64, tol: f64) -> Result<FdReport>
where
    T: Real,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    finite_diff_check_with(f, params, &FdOptions::new(step, tol))
}

fn name_of(opts: &FdOptions, i: usize) -> String {
    opts.names.get(i).cloned().unwrap_or_else(|| format!("p{i}"))
}

fn eval<T, F>(f: &F, params: &[Tensor<T>], opts: &FdOptions, which: usize) -> Result<f64>
where
    T: Real,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::no_grad();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let v = tape.value(out).item().to_f64().unwrap_or(f64::NAN);
    if !v.is_finite() {
        return Err(Error::Numerical(format!(
            "function value is non-finite while perturbing parameter `{}`",
            name_of(opts, which)
        )));
    }
    Ok(v)
}

pub fn finite_diff_check_with<T, F>(f: F, params: &[Tensor<T>], opts: &FdOptions) -> Result<FdReport>
where
    T: Real,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    if opts.step.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        return Err(Error::Config(format!("finite-difference step must be > 0, got {}", opts.step)));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = params
        .iter()
        .enumerate()
        .map(|(i, p)| tape.param(name_of(opts, i), p.clone()))
        .collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward_scalar(out)?;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work: Vec<Tensor<T>> = params.to_vec();
    let mut report = FdReport {
        step: opts.step,
        tol: opts.tol,
        min_scale: opts.min_scale,
        params: Vec::with_capacity(params.len()),
    };
    let h = T::of(opts.step);
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads.wrt(&tape, *var);
        if !analytic.all_finite() {
            return Err(Error::Numerical(format!(
                "analytic gradient of `{}` is non-finite",
                name_of(opts, i)
            )));
        }
        let n = params[i].len();
        let indices: Vec<usize> = if n <= FULL_CHECK_LIMIT {
            (0..n).collect()
        } else {
            let mut s = sample(&mut rng, n, SUBSAMPLE).into_vec();
            s.sort_unstable();
            s
        };
        let mut pairs = Vec::with_capacity(indices.len());
        for &j in &indices {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + h;
            let up = eval(&f, &work, opts, i)?;
            work[i].data_mut()[j] = orig - h;
            let down = eval(&f, &work, opts, i)?;
            work[i].data_mut()[j] = orig;
            // the perturbation actually applied, after rounding to T
            let span = ((orig + h) - (orig - h)).to_f64().unwrap();
            let numeric = (up - down) / span;
            pairs.push((analytic.data()[j].to_f64().unwrap(), numeric));
        }
        let scale = pairs
            .iter()
            .map(|(a, n)| a.abs().max(n.abs()))
            .fold(0.0, f64::max);
        let max_abs = pairs.iter().map(|(a, n)| (a - n).abs()).fold(0.0, f64::max);
        report.params.push(ParamCheck {
            name: name_of(opts, i),
            checked: indices.len(),
            grad_scale: scale,
            max_abs_err: max_abs,
            tensor_rel_err: max_abs / scale.max(opts.min_scale),
        });
    }
    Ok(report)
}
