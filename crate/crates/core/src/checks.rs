//! Finite-difference gradient checks for the network components, shared by
//! the test suites.

use avsep_autograd::gradcheck::relative_error;
use avsep_autograd::{Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::generative::gaussian;
use crate::nn::{ParamStore, Session};
use crate::unet::{CaBlock, Fim, UNet, UNetConfig, UNetInputs};
use crate::visual::{AggregatorConfig, TemporalAggregator};

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GradReport {
    pub checked: usize,
    pub passed: usize,
    pub worst: f64,
}

impl GradReport {
    pub fn pass_rate(&self) -> f64 {
        if self.checked == 0 {
            return 0.0;
        }
        self.passed as f64 / self.checked as f64
    }

    fn record(&mut self, err: f64, tol: f64) {
        self.checked += 1;
        if err <= tol {
            self.passed += 1;
        }
        self.worst = self.worst.max(err);
    }
}

/// Step, tolerance and magnitude floor of a check.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CheckSettings {
    pub samples: usize,
    pub step: f64,
    pub tolerance: f64,
    /// Gradients below this magnitude are compared absolutely.
    pub floor: f64,
    pub seed: u64,
}

impl Default for CheckSettings {
    fn default() -> Self {
        Self {
            samples: 200,
            step: 1e-5,
            tolerance: 1e-3,
            floor: 1e-6,
            seed: 0,
        }
    }
}

fn scalar(s: &Session<f64>, v: Var) -> f64 {
    s.value(v).data()[0]
}

/// Compares the analytic gradient of `loss` with central differences on
/// randomly sampled entries of the parameter store.
pub fn check_parameters<F>(store: &mut ParamStore<f64>, cfg: &CheckSettings, loss: F) -> Result<GradReport>
where
    F: Fn(&mut Session<f64>) -> Result<Var>,
{
    let grads = {
        let mut s = Session::new(store, true);
        let l = loss(&mut s)?;
        s.param_grads(l)?
    };
    let ids: Vec<_> = store.ids().collect();
    let total = store.numel();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = GradReport::default();
    for _ in 0..cfg.samples.min(total) {
        let mut flat = rng.gen_range(0..total);
        let mut pick = 0;
        while flat >= store.get(ids[pick]).len() {
            flat -= store.get(ids[pick]).len();
            pick += 1;
        }
        let id = ids[pick];
        let analytic = grads[pick].as_ref().map_or(0.0, |g| g.data()[flat]);
        let orig = store.get(id).data()[flat];
        let eval = |v: f64, store: &mut ParamStore<f64>| -> Result<f64> {
            store.get_mut(id).data_mut()[flat] = v;
            let mut s = Session::new(store, false);
            let l = loss(&mut s)?;
            Ok(scalar(&s, l))
        };
        let up = eval(orig + cfg.step, store)?;
        let down = eval(orig - cfg.step, store)?;
        store.get_mut(id).data_mut()[flat] = orig;
        let numeric = (up - down) / (2.0 * cfg.step);
        report.record(relative_error(analytic, numeric, cfg.floor), cfg.tolerance);
    }
    Ok(report)
}

/// Same comparison for every entry of one input tensor.
pub fn check_input<F>(store: &ParamStore<f64>, input: &Tensor<f64>, cfg: &CheckSettings, loss: F) -> Result<GradReport>
where
    F: Fn(&mut Session<f64>, Var) -> Result<Var>,
{
    let analytic = {
        let mut s = Session::new(store, false);
        let x = s.g.variable(input.clone());
        let l = loss(&mut s, x)?;
        s.g.backward(l)?.get(x).cloned().unwrap_or_else(|| Tensor::zeros(input.shape()))
    };
    let mut report = GradReport::default();
    let mut x = input.clone();
    for i in 0..x.len() {
        let orig = x.data()[i];
        let eval = |v: f64, x: &mut Tensor<f64>| -> Result<f64> {
            x.data_mut()[i] = v;
            let mut s = Session::new(store, false);
            let xv = s.input(x.clone());
            let l = loss(&mut s, xv)?;
            Ok(scalar(&s, l))
        };
        let up = eval(orig + cfg.step, &mut x)?;
        let down = eval(orig - cfg.step, &mut x)?;
        x.data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * cfg.step);
        report.record(relative_error(analytic.data()[i], numeric, cfg.floor), cfg.tolerance);
    }
    Ok(report)
}

/// Configuration of width `base` with every attention output live.
pub fn check_config(base: usize) -> UNetConfig {
    UNetConfig {
        zero_init_attention: false,
        ..UNetConfig::with_base(base)
    }
}

fn l1_to(s: &mut Session<f64>, y: Var, seed: u64) -> Result<Var> {
    let shape = s.g.shape(y).to_vec();
    let target = s.input(gaussian(&shape, &mut ChaCha8Rng::seed_from_u64(seed)));
    Ok(s.g.l1_loss(y, target)?)
}

fn temb(s: &mut Session<f64>, n: usize, dim: usize) -> Var {
    s.input(gaussian(&[n, dim], &mut ChaCha8Rng::seed_from_u64(11)))
}

/// CA block on a `1 x 4 x 8 x 8` input.
pub fn ca_block(cfg: &CheckSettings) -> Result<GradReport> {
    let ucfg = check_config(8);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    let block = CaBlock::new(&mut store, "ca", &ucfg, 4, 8, &mut rng);
    let x = gaussian::<f64, _>(&[1, 4, 8, 8], &mut rng);
    check_parameters(&mut store, cfg, |s| {
        let xv = s.input(x.clone());
        let t = temb(s, 1, ucfg.time_dim());
        let y = block.forward(s, xv, t)?;
        l1_to(s, y, 3)
    })
}

/// FIM parameters, then the condition vector `v` itself.
pub fn fim(cfg: &CheckSettings) -> Result<(GradReport, GradReport)> {
    let ucfg = check_config(8);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::new();
    let fim = Fim::new(&mut store, "fim", &ucfg, &mut rng);
    let fa = gaussian::<f64, _>(&[1, ucfg.bottleneck_channels(), 2, 2], &mut rng);
    let v = gaussian::<f64, _>(&[1, ucfg.cond_dim], &mut rng);
    let run = |s: &mut Session<f64>, vv: Var| -> Result<Var> {
        let fv = s.input(fa.clone());
        let t = temb(s, 1, ucfg.time_dim());
        let y = fim.forward(s, fv, vv, t)?;
        l1_to(s, y, 4)
    };
    let params = check_parameters(&mut store, cfg, |s| {
        let vv = s.input(v.clone());
        run(s, vv)
    })?;
    let wrt_v = check_input(&store, &v, cfg, run)?;
    Ok((params, wrt_v))
}

/// Temporal aggregation of two 16-wide frame embeddings.
pub fn aggregate(cfg: &CheckSettings) -> Result<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let agg = TemporalAggregator::new(&mut store, "visual", AggregatorConfig::new(16), &mut rng)?;
    let emb = gaussian::<f64, _>(&[2, 16], &mut rng);
    check_parameters(&mut store, cfg, |s| {
        let e = s.input(emb.clone());
        let y = agg.aggregate(s, e)?;
        l1_to(s, y, 5)
    })
}

/// The full U-Net of width `base` on `8 x 8` inputs.
pub fn unet(base: usize, cfg: &CheckSettings) -> Result<GradReport> {
    let ucfg = check_config(base);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParamStore::new();
    let net = UNet::new(&mut store, ucfg.clone(), &mut rng)?;
    let x_t = gaussian::<f64, _>(&[1, 1, 8, 8], &mut rng);
    let x_mix = Tensor::from_fn(&[1, 1, 8, 8], |i| 0.05 * (i % 7) as f64);
    let cond = gaussian::<f64, _>(&[1, ucfg.cond_dim], &mut rng);
    check_parameters(&mut store, cfg, |s| {
        let inputs = UNetInputs {
            x_t: s.input(x_t.clone()),
            x_mix: s.input(x_mix.clone()),
            time: vec![250.0],
            cond: s.input(cond.clone()),
        };
        let y = net.forward(s, &inputs)?;
        l1_to(s, y, 6)
    })
}
