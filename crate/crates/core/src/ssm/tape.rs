//! Recording the scan on an autodiff tape.

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::tensor::{Real, Tensor};

use super::scan::{ssm_backward, ssm_scan_parallel, ssm_scan_sequential};
use super::SsmParams;

impl<T: Real> Tape<T> {
    /// Scans `u` (B, L, C) with parameters held on the tape. `chunk` selects
    /// the chunked parallel scan; `None` runs sequentially.
    pub fn ssm_scan(&mut self, u: Var, p: &SsmParams<Var>, chunk: Option<usize>) -> Result<Var> {
        let mode = p.mode();
        let vals: SsmParams<&Tensor<T>> = SsmParams::from_slots(mode, p.slots().into_iter().map(|(_, v)| self.value(*v)));
        let y = match chunk {
            Some(chunk) => ssm_scan_parallel(self.value(u), &vals, chunk)?,
            None => ssm_scan_sequential(self.value(u), &vals)?,
        };
        let mut inputs = vec![u];
        inputs.extend(p.slots().into_iter().map(|(_, v)| *v));
        Ok(self.push(
            "ssm_scan",
            inputs,
            y,
            Some(Box::new(move |g, inp, _| {
                let params = SsmParams::from_slots(mode, inp[1..].iter().copied());
                let (gu, gp) = ssm_backward(inp[0], &params, g)?;
                let mut out = vec![gu];
                out.extend(SsmParams::from_slots(mode, gp.slots().into_iter().map(|(_, t)| t.clone())).into_slots());
                Ok(out)
            })),
        ))
    }
}

impl<P> SsmParams<P> {
    /// Consumes the parameters into slots in canonical order.
    pub fn into_slots(self) -> Vec<P> {
        let mut v = vec![self.a_log, self.delta_bias, self.d];
        match self.mix {
            super::SsmMix::Fixed { b, c } => v.extend([b, c]),
            super::SsmMix::Selective { delta_proj, b_proj, c_proj } => v.extend([delta_proj, b_proj, c_proj]),
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::super::SsmMode;
    use super::*;
    use crate::autodiff::finite_diff_check_with;
    use crate::autodiff::FdOptions;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn check<T: Real>(mode: SsmMode, step: f64, tol: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = SsmParams::<Tensor<T>>::init(3, 2, mode, &mut rng);
        let u = Tensor::<T>::rand_uniform(&[2, 32, 3], -1.0, 1.0, &mut rng);
        let w = Tensor::<T>::rand_uniform(&[2, 32, 3], -1.0, 1.0, &mut rng);
        let mut params = vec![u];
        let names: Vec<&str> = std::iter::once("u").chain(p.slots().into_iter().map(|(n, _)| n)).collect();
        params.extend(p.into_slots());
        let report = finite_diff_check_with(
            |tape, v| {
                let sp = SsmParams::from_slots(mode, v[1..].iter().copied());
                let y = tape.ssm_scan(v[0], &sp, None)?;
                tape.weighted_sum(y, w.clone())
            },
            &params,
            &FdOptions::new(step, tol).named(&names),
        )
        .unwrap();
        assert!(report.passed(), "{report}");
    }

    #[test]
    fn gradients_match_finite_differences_f64() {
        check::<f64>(SsmMode::Fixed, 1e-6, 1e-6);
        check::<f64>(SsmMode::Selective, 1e-6, 1e-6);
    }

    #[test]
    fn gradients_match_finite_differences_f32() {
        check::<f32>(SsmMode::Fixed, 1e-2, 1e-3);
        check::<f32>(SsmMode::Selective, 1e-2, 1e-3);
    }
}
