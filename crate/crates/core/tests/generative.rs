use avsep_autograd::{Tensor, Var};
use avsep_core::generative::{
    ddim_sample, ddim_sample_from, ddpm_forward_sample, euler_solve, euler_solve_from, fm_path_sample, gaussian,
    initial_noise, loss_with_draws, make_schedule, Draws, LossKind, Network, NoiseSchedule, SamplerConfig,
    ScheduleKind, TrainingBatch, Variant,
};
use avsep_core::model::Condition;
use avsep_core::nn::{ParamStore, Session};
use avsep_core::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Returns a fixed tensor regardless of its inputs.
struct Fixed {
    out: Tensor<f64>,
    params: ParamStore<f64>,
}

impl Network<f64> for Fixed {
    fn params(&self) -> &ParamStore<f64> {
        &self.params
    }
    fn forward(
        &self,
        s: &mut Session<f64>,
        _: Variant,
        _: &Tensor<f64>,
        _: &Tensor<f64>,
        _: &[f64],
        _: &Condition<f64>,
    ) -> Result<Var> {
        Ok(s.input(self.out.clone()))
    }
}

fn fixed(out: Tensor<f64>) -> Fixed {
    Fixed {
        out,
        params: ParamStore::new(),
    }
}

fn batch(seed: u64) -> (TrainingBatch<f64>, Draws<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = [2, 1, 4, 4];
    let x_target = Tensor::from_fn(&shape, |i| (i % 5) as f64 * 0.2);
    let b = TrainingBatch {
        x_target,
        x_mix: Tensor::full(&shape, 0.5),
        cond: Condition::Vectors(Tensor::zeros(&[2, 3])),
    };
    let d = Draws {
        time: vec![17.0, 600.0],
        noise: gaussian(&shape, &mut rng),
    };
    (b, d)
}

fn sched() -> NoiseSchedule {
    make_schedule(1000, ScheduleKind::default()).unwrap()
}

fn loss(net: &Fixed, variant: Variant, b: &TrainingBatch<f64>, d: &Draws<f64>, kind: LossKind) -> f64 {
    loss_with_draws(net, variant, b, d, &sched(), kind, false).unwrap().loss
}

#[test]
fn ddpm_loss_oracles() {
    let (b, d) = batch(0);
    let exact = fixed(d.noise.clone());
    assert_eq!(loss(&exact, Variant::Ddpm, &b, &d, LossKind::L1), 0.0);
    assert_eq!(loss(&exact, Variant::Ddpm, &b, &d, LossKind::L2), 0.0);
    let off = fixed(d.noise.map(|e| e + 1.0));
    assert!((loss(&off, Variant::Ddpm, &b, &d, LossKind::L1) - 1.0).abs() < 1e-9);
}

#[test]
fn fm_loss_oracles() {
    let (b, mut d) = batch(1);
    d.time = vec![0.25, 0.9];
    let u = b.x_target.zip_map(&d.noise, |x1, x0| x1 - x0).unwrap();
    assert_eq!(loss(&fixed(u.clone()), Variant::Fm, &b, &d, LossKind::L1), 0.0);
    let off = fixed(u.map(|v| v + 0.5));
    assert!((loss(&off, Variant::Fm, &b, &d, LossKind::L1) - 0.5).abs() < 1e-9);
    // Degenerate path x1 = x0 with a zero prediction.
    let same = Draws {
        time: d.time.clone(),
        noise: b.x_target.clone(),
    };
    assert_eq!(loss(&fixed(Tensor::zeros(b.x_target.shape())), Variant::Fm, &b, &same, LossKind::L1), 0.0);
}

#[test]
fn losses_are_nonnegative() {
    for seed in 0..100 {
        let (b, d) = batch(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
        let net = fixed(gaussian(b.x_target.shape(), &mut rng));
        for v in [Variant::Ddpm, Variant::Fm] {
            let mut d = d.clone();
            if v == Variant::Fm {
                d.time = vec![0.3, 0.7];
            }
            assert!(loss(&net, v, &b, &d, LossKind::L1) >= 0.0);
        }
    }
}

#[test]
fn forward_process_scalars() {
    let s = NoiseSchedule::from_betas(vec![0.75]).unwrap();
    let one = Tensor::<f64>::full(&[1], 1.0);
    let x = ddpm_forward_sample(&one, 1, &one, &s).unwrap();
    assert!((x.data()[0] - 1.366025403784439).abs() < 1e-9);
    let zero = Tensor::<f64>::zeros(&[3]);
    let eps = Tensor::from_vec(&[3], vec![0.5, -1.0, 2.0]).unwrap();
    let x = ddpm_forward_sample(&zero, 1, &eps, &s).unwrap();
    assert_eq!(x.data(), eps.map(|e| 0.75f64.sqrt() * e).data());
    assert!(ddpm_forward_sample(&zero, 2, &eps, &s).is_err());
    let two = Tensor::<f64>::full(&[2], 2.0);
    assert_eq!(fm_path_sample(&Tensor::zeros(&[2]), &two, 0.5).unwrap().data(), &[1.0, 1.0]);
    assert!(fm_path_sample(&two, &two, 1.5).is_err());
}

fn ddim_cfg(steps: usize) -> SamplerConfig {
    SamplerConfig {
        steps,
        guidance: false,
        ..SamplerConfig::new(Variant::Ddpm)
    }
}

#[test]
fn ddim_inverts_an_oracle_noise_predictor() {
    let sched = sched();
    let x0 = Tensor::<f64>::from_fn(&[1, 1, 8, 8], |i| ((i * 37) % 64) as f64 / 63.0);
    let oracle = |x: &Tensor<f64>, t: f64| -> Result<Tensor<f64>> {
        let ab = sched.alpha_bar(t as usize)?;
        Ok(x.zip_map(&x0, |xv, x0v| (xv - ab.sqrt() * x0v) / (1.0 - ab).sqrt())?)
    };
    let mix = Tensor::full(&[1, 1, 8, 8], 0.5);
    let out = ddim_sample(&oracle, &mix, &sched, &ddim_cfg(1000)).unwrap();
    let err = out.zip_map(&x0, |a, b| (a - b).abs()).unwrap().max_abs();
    assert!(err < 1e-4, "max error {err}");
}

#[test]
fn single_ddim_step_is_the_x0_estimate() {
    let sched = sched();
    let eps_hat = |x: &Tensor<f64>, _t: f64| -> Result<Tensor<f64>> { Ok(x.map(|v| 0.9 * v + 0.01)) };
    let mix = Tensor::full(&[1, 1, 4, 4], 0.5);
    let mut cfg = ddim_cfg(1);
    cfg.clamp = false;
    cfg.clip_denoised = false;
    let x_t = initial_noise::<f64>(&[1, 1, 4, 4], cfg.seed);
    let out = ddim_sample_from(&eps_hat, x_t.clone(), &mix, &sched, &cfg).unwrap();
    let ab = sched.alpha_bar(1000).unwrap();
    for (o, x) in out.data().iter().zip(x_t.data()) {
        let want = (x - (1.0 - ab).sqrt() * (0.9 * x + 0.01)) / ab.sqrt();
        assert!((o - want).abs() < 1e-9 * want.abs().max(1.0));
    }
}

#[test]
fn samplers_are_deterministic() {
    let sched = sched();
    let model = |x: &Tensor<f64>, t: f64| -> Result<Tensor<f64>> { Ok(x.map(|v| (v * t * 1e-3).sin())) };
    let mix = Tensor::from_fn(&[2, 1, 4, 4], |i| if i % 3 == 0 { 0.0 } else { 0.4 });
    let a = ddim_sample(&model, &mix, &sched, &SamplerConfig::new(Variant::Ddpm)).unwrap();
    let b = ddim_sample(&model, &mix, &sched, &SamplerConfig::new(Variant::Ddpm)).unwrap();
    assert_eq!(a, b);
    let a = euler_solve(&model, &mix, &SamplerConfig::new(Variant::Fm)).unwrap();
    let b = euler_solve(&model, &mix, &SamplerConfig::new(Variant::Fm)).unwrap();
    assert_eq!(a, b);
}

fn euler_cfg(steps: usize) -> SamplerConfig {
    SamplerConfig {
        steps,
        guidance: false,
        clamp: false,
        ..SamplerConfig::new(Variant::Fm)
    }
}

#[test]
fn euler_on_linear_and_constant_fields() {
    let mix = Tensor::full(&[1, 1, 2, 2], 0.5);
    let ones = Tensor::<f64>::ones(&[1, 1, 2, 2]);
    let linear = |x: &Tensor<f64>, _t: f64| -> Result<Tensor<f64>> { Ok(x.clone()) };
    let out = euler_solve_from(&linear, ones.clone(), &mix, &euler_cfg(2)).unwrap();
    assert!(out.data().iter().all(|&v| (v - 2.25).abs() < 1e-12));
    let err = |n: usize| {
        let x = euler_solve_from(&linear, ones.clone(), &mix, &euler_cfg(n)).unwrap();
        (x.data()[0] - std::f64::consts::E).abs()
    };
    let (e2, e8, e32) = (err(2), err(8), err(32));
    assert!(e2 > e8 && e8 > e32);
    // First order: error times N stays roughly constant.
    for (n, e) in [(8.0, e8), (32.0, e32)] {
        assert!((e * n / (e2 * 2.0) - 1.0).abs() < 0.5, "N={n} error {e}");
    }
    let constant = |x: &Tensor<f64>, _t: f64| -> Result<Tensor<f64>> { Ok(x.map(|_| 0.3)) };
    for n in [1, 3, 7] {
        let x = euler_solve_from(&constant, ones.clone(), &mix, &euler_cfg(n)).unwrap();
        assert!(x.data().iter().all(|&v| (v - 1.3).abs() < 1e-12));
    }
    let shifted = |x: &Tensor<f64>, t: f64| -> Result<Tensor<f64>> { Ok(x.map(|v| v * 2.0 + t)) };
    let x = euler_solve_from(&shifted, ones.clone(), &mix, &euler_cfg(1)).unwrap();
    assert!(x.data().iter().all(|&v| (v - 3.0).abs() < 1e-12));
}

#[test]
fn guided_samplers_copy_the_mixture_into_silent_bins() {
    let sched = sched();
    let model = |x: &Tensor<f64>, _t: f64| -> Result<Tensor<f64>> { Ok(x.map(|v| 0.5 * v + 0.2)) };
    let mix = Tensor::from_fn(&[2, 1, 4, 4], |i| match i % 4 {
        0 => 0.0,
        1 => 0.0015,
        _ => 0.3,
    });
    for cfg in [SamplerConfig::new(Variant::Ddpm), SamplerConfig::new(Variant::Fm)] {
        let out = match cfg.variant {
            Variant::Ddpm => ddim_sample(&model, &mix, &sched, &cfg).unwrap(),
            Variant::Fm => euler_solve(&model, &mix, &cfg).unwrap(),
        };
        for (o, m) in out.data().iter().zip(mix.data()) {
            if *m < cfg.silence_threshold {
                assert_eq!(o, m);
            }
        }
        let off = SamplerConfig {
            guidance: false,
            ..cfg.clone()
        };
        let out = match cfg.variant {
            Variant::Ddpm => ddim_sample(&model, &mix, &sched, &off).unwrap(),
            Variant::Fm => euler_solve(&model, &mix, &off).unwrap(),
        };
        let copied = out
            .data()
            .iter()
            .zip(mix.data())
            .filter(|(o, m)| **m < cfg.silence_threshold && o == m)
            .count();
        assert!(copied < 16, "{} bins equal the mixture without guidance", copied);
    }
}
