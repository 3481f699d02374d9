use ifan::net::{Group, Network, NetworkConfig};
use ifan::optim::{clip_grad_norm, global_norm, OptimState, RAdamHyper};
use ifan::synth::{make_samples, SynthConfig};
use ifan::train::*;
use ifan::Error;

fn small_net() -> NetworkConfig {
    NetworkConfig {
        c_e: 8,
        n_sets: 2,
        blocks_per_stage: 1,
        ..NetworkConfig::default()
    }
}

fn batch(seed: u64, count: usize) -> Batch {
    let cfg = SynthConfig {
        h: 48,
        w: 48,
        r_max: 4.0,
        s: 8,
    };
    Batch::from_samples(&make_samples(seed, count, &cfg).unwrap()).unwrap()
}

fn tiny_train(seed: u64) -> TrainConfig {
    TrainConfig {
        net: small_net(),
        total_iters: 6,
        decay_steps: vec![4],
        batch_size: 2,
        crop_size: 48,
        pool_size: 4,
        synth_size: 56,
        eval_size: 2,
        log_every: 1,
        seed,
        ..TrainConfig::toy()
    }
}

#[test]
fn ten_steps_on_a_fixed_batch_reduce_the_deblur_loss() {
    let b = batch(3, 2);
    let mut net = Network::new(small_net(), 1).unwrap();
    let mut opt = OptimState::new(&net.params, RAdamHyper::default());
    let mut first = None;
    let mut last = 0.0;
    for _ in 0..10 {
        let step = compute_gradients(&net, &b, ActiveLosses::ALL).unwrap();
        last = step.report.l_deblur;
        first.get_or_insert(last);
        let mut g = route(step, &net.params).unwrap();
        clip_grad_norm(&mut g, 0.5).unwrap();
        opt.step(&mut net.params, &g, 1e-3).unwrap();
    }
    assert!(last < first.unwrap(), "{last} !< {first:?}");
}

#[test]
fn clipped_norm_never_exceeds_the_bound() {
    let b = batch(4, 2);
    let mut net = Network::new(small_net(), 2).unwrap();
    for (_, p) in net.params.iter_mut() {
        p.data_mut().iter_mut().for_each(|v| *v *= 3.0);
    }
    let step = compute_gradients(&net, &b, ActiveLosses::ALL).unwrap();
    let mut g = route(step, &net.params).unwrap();
    let before = clip_grad_norm(&mut g, 0.5).unwrap();
    assert!(global_norm(&g) <= 0.5 + 1e-9);
    assert!((global_norm(&g) - before.min(0.5)).abs() < 1e-12);
}

#[test]
fn disabled_branches_report_zero_losses() {
    let mut cfg = tiny_train(5);
    cfg.net.use_dme = false;
    cfg.net.use_reblur = false;
    let report = train(&cfg, None, &mut Quiet).unwrap();
    assert_eq!(report.log.len(), cfg.total_iters);
    for l in &report.log {
        assert_eq!(l.losses.l_disp, 0.0);
        assert_eq!(l.losses.l_reblur, 0.0);
        assert_eq!(l.losses.l_total, l.losses.l_deblur);
    }
}

#[test]
fn reports_decompose_and_follow_the_schedule() {
    let cfg = tiny_train(6);
    let report = train(&cfg, None, &mut Quiet).unwrap();
    for l in &report.log {
        let r = l.losses;
        assert_eq!(r.l_total, r.l_deblur + r.l_disp + r.l_reblur);
        assert!(r.l_deblur >= 0.0 && r.l_disp >= 0.0 && r.l_reblur >= 0.0);
        let want = if l.iter < 4 { cfg.lr0 } else { cfg.lr0 * 0.5 };
        assert_eq!(l.lr, want);
    }
    assert!(report.network.params.all_finite());
    assert_eq!(report.evals.last().unwrap().samples, cfg.eval_size);
}

#[test]
fn same_seed_same_curves_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_train(7);
    let a = train(&cfg, Some(&dir.path().join("a")), &mut Quiet).unwrap();
    let b = train(&cfg, Some(&dir.path().join("b")), &mut Quiet).unwrap();
    assert_eq!(a.log_text(), b.log_text());
    let read = |p: &std::path::Path| std::fs::read(p).unwrap();
    assert_eq!(read(a.final_checkpoint.as_ref().unwrap()), read(b.final_checkpoint.as_ref().unwrap()));
    let summary = |run: &str| {
        let d = dir.path().join(run);
        std::fs::read_to_string(d.join("summary.json")).unwrap().replace(&d.display().to_string(), "")
    };
    assert_eq!(summary("a"), summary("b"));
    for f in ["train_log.txt", "config.txt"] {
        assert_eq!(read(&dir.path().join("a").join(f)), read(&dir.path().join("b").join(f)), "{f}");
    }
    let other = train(&tiny_train(8), None, &mut Quiet).unwrap();
    assert_ne!(a.log_text(), other.log_text());
}

#[test]
fn per_loss_gradients_stay_inside_their_routes() {
    let b = batch(9, 2);
    let mut net = Network::new(small_net(), 3).unwrap();
    for (_, p) in net.params.iter_mut() {
        let r = ifan::Tensor4::rand_uniform(p.shape(), -0.02, 0.02, p.len() as u64);
        p.axpy(1.0, &r).unwrap();
    }
    let only = |active| compute_gradients(&net, &b, active).unwrap();
    let disp = only(ActiveLosses::DISP_ONLY).disp.unwrap();
    let reblur = only(ActiveLosses::REBLUR_ONLY).reblur.unwrap();
    let mut reached_disp = false;
    for (name, g) in disp.iter() {
        let group = Group::of(name).unwrap();
        let nonzero = g.data().iter().any(|&v| v != 0.0);
        if ![Group::FilterEncoder, Group::Dme, Group::DisparityHead].contains(&group) {
            assert!(!nonzero, "disp reached {name}");
        }
        reached_disp |= nonzero && group == Group::DisparityHead;
    }
    assert!(reached_disp);
    for (name, g) in reblur.iter() {
        let group = Group::of(name).unwrap();
        if matches!(group, Group::Extractor | Group::Reconstructor) {
            assert!(g.data().iter().all(|&v| v == 0.0), "reblur reached {name}");
        }
    }
    assert!(reblur.iter().any(|(n, g)| n.starts_with("reblur_net") && g.data().iter().any(|&v| v != 0.0)));
}

#[test]
fn non_finite_loss_names_the_tensor() {
    let b = batch(10, 1);
    let mut net = Network::new(small_net(), 4).unwrap();
    net.params.get_mut("extractor.s0.down.w").unwrap().data_mut()[0] = f64::NAN;
    match compute_gradients(&net, &b, ActiveLosses::ALL) {
        Err(Error::NonFinite(msg)) => assert!(msg.contains("l_deblur") && msg.contains("first non-finite tensor: slot"), "{msg}"),
        Err(e) => panic!("expected a non-finite error, got {e}"),
        Ok(_) => panic!("expected a non-finite error"),
    }
}

#[test]
fn end_to_end_gradient_matches_finite_differences() {
    let b = batch(11, 1);
    let mut net = Network::new(small_net(), 5).unwrap();
    for (_, p) in net.params.iter_mut() {
        let r = ifan::Tensor4::rand_uniform(p.shape(), -0.02, 0.02, p.len() as u64);
        p.axpy(1.0, &r).unwrap();
    }
    let g = compute_gradients(&net, &b, ActiveLosses::ALL).unwrap().deblur.unwrap();
    let off = ActiveLosses {
        deblur: false,
        disp: false,
        reblur: false,
    };
    for name in ["extractor.s0.down.w", "filter_encoder.s0.down.w"] {
        let analytic = g.get(name).unwrap().data()[5];
        let loss = |delta: f64| {
            let mut n = net.clone();
            n.params.get_mut(name).unwrap().data_mut()[5] += delta;
            compute_gradients(&n, &b, off).unwrap().report.l_deblur
        };
        let h = 1e-5;
        let numeric = (loss(h) - loss(-h)) / (2.0 * h);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
        assert!(rel < 1e-5, "{name}: analytic {analytic:e}, numeric {numeric:e}");
    }
}

fn constant_radius_sample(seed: u64, size: usize, r: f64) -> ifan::synth::Sample {
    use ifan::synth::*;
    let sharp = gen_sharp(seed, size, size).unwrap();
    let radius = ifan::Tensor4::full((1, 1, size, size), r);
    let (left, right) = render_dual_pixel(&sharp, &radius).unwrap();
    Sample {
        name: format!("c{seed}"),
        blurred: render_defocus(&sharp, &radius).unwrap(),
        sharp,
        left: Some(left),
        right: Some(right),
        disparity: Some(derive_gt_disparity(&radius, 8).unwrap()),
        radius: Some(radius),
    }
}

#[test]
fn disparity_estimator_learns_constant_shifts() {
    for r in [4.0, -4.0] {
        let mut net = Network::new(small_net(), 6).unwrap();
        let mut opt = OptimState::new(&net.params, RAdamHyper::default());
        for it in 0..600u64 {
            let samples: Vec<_> = (0..4).map(|i| constant_radius_sample(1000 + 4 * it + i, 48, r)).collect();
            let step = compute_gradients(&net, &Batch::from_samples(&samples).unwrap(), ActiveLosses::DISP_ONLY).unwrap();
            let mut g = route(step, &net.params).unwrap();
            clip_grad_norm(&mut g, 0.5).unwrap();
            opt.step(&mut net.params, &g, 2e-3).unwrap();
        }
        let (mut pred, mut want) = (0.0, 0.0);
        for seed in 0..4 {
            let s = constant_radius_sample(seed, 48, r);
            pred += net.ifan_forward(s.right.as_ref().unwrap()).unwrap().1.mean() / 4.0;
            want += s.disparity.unwrap().mean() / 4.0;
        }
        assert_eq!(pred.signum(), want.signum(), "r {r}: {pred} vs {want}");
        assert!((pred - want).abs() < 0.5 * want.abs(), "r {r}: {pred} vs {want}");
    }
}
