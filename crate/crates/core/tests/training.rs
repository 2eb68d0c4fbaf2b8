//! Long-run training invariants on the small network.

use uvmnet::haze::{LrSchedule, RunConfig, Trainer};
use uvmnet::net::UvmNetConfig;

/// Means of consecutive `width`-step windows.
fn window_means(losses: &[f64], width: usize) -> Vec<f64> {
    losses.chunks(width).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect()
}

#[test]
fn smoothed_overfit_loss_never_rises_under_step_decay() {
    let mut cfg = RunConfig { net: UvmNetConfig::tiny(), ..Default::default() };
    let t = &mut cfg.train;
    t.steps = 2000;
    t.image_size = 64;
    t.fixed_scene = Some(0);
    t.eval_every = 2000;
    t.lr_schedule = LrSchedule::Step;
    t.lr_step_every = 700;
    t.lr_gamma = 0.7;
    let mut trainer = Trainer::new(cfg).unwrap();
    let rows = trainer.run(|_| Ok(())).unwrap();
    assert_eq!(trainer.losses.len(), 2000);
    let w = window_means(&trainer.losses, 100);
    for (i, pair) in w.windows(2).enumerate() {
        assert!(pair[1] <= pair[0], "window {} rose: {} -> {}", i + 1, pair[0], pair[1]);
    }
    assert!(w[w.len() - 1] < 0.5 * w[0], "{w:?}");
    assert!(rows.last().unwrap().psnr > 28.0);
}
