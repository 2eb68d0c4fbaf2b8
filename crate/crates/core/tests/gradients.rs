//! Finite-difference checks of every tape op and of the full block.

mod common;

use common::*;

#[test]
fn ops_f64() {
    for (name, r) in op_reports::<f64>(F64_STEP, F64_TOL) {
        assert!(r.passed(), "{name}\n{r}");
    }
}

#[test]
fn ops_f32() {
    for (name, r) in op_reports::<f32>(F32_STEP, F32_TOL) {
        assert!(r.passed(), "{name}\n{r}");
    }
}

#[test]
fn block_variants_f64() {
    for v in VARIANTS {
        let r = block_report::<f64>(v, 1e-5, F64_TOL);
        assert!(r.passed(), "{v:?}\n{r}");
    }
}

#[test]
fn block_variants_f32() {
    for v in VARIANTS {
        let r = block_report::<f32>(v, F32_STEP, F32_TOL);
        assert!(r.passed(), "{v:?}\n{r}");
    }
}
