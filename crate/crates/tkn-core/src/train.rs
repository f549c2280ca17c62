//! SGD with Nesterov momentum and milestone learning-rate schedule, the
//! training/evaluation loops, and the penalty/buildup sweep.

use crate::attention::Family;
use crate::data::{batches, LabeledImageSet};
use crate::error::{Error, Result};
use crate::flops::{count_model, FlopReport};
use crate::graph::{build_tkn6_mini, NetworkSpec};
use crate::model::{Layer, LayerGrads, Model};
use crate::scalar::Scalar;
use crate::tensor::{softmax_xent, Tensor4};

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    /// Initial learning rate; divided by `lr_div` at each milestone.
    pub lr: f64,
    pub lr_div: f64,
    /// 0-based epoch indices; from epoch `m` onward one more division
    /// applies. Strictly increasing, each < epochs.
    pub milestones: Vec<usize>,
    /// L2 coupling on conv kernels and dense weights (never biases or
    /// attention parameters — those have their own scale penalty).
    pub weight_decay: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl TrainConfig {
    /// Full-scale recipe: batch 128 for 20 epochs, lr 0.1 divided by 10
    /// after epochs 10 and 15, weight decay 1e-4, momentum 0.9.
    pub fn standard(seed: u64) -> Self {
        TrainConfig {
            batch_size: 128,
            epochs: 20,
            lr: 0.1,
            lr_div: 10.0,
            milestones: vec![10, 15],
            weight_decay: 1e-4,
            momentum: 0.9,
            seed,
        }
    }

    /// Desk-scale recipe for the mini networks: batch 64 for 10 epochs,
    /// lr drops late (epochs 7 and 9). The scale penalty acts once per
    /// optimizer step, so batch size trades accuracy against window
    /// contraction: smaller batches over-shrink the windows before the
    /// network can fit, larger ones barely shrink them. Batch 64 with a
    /// long high-lr phase lands both.
    pub fn mini(seed: u64) -> Self {
        TrainConfig {
            batch_size: 64,
            epochs: 10,
            lr: 0.1,
            lr_div: 10.0,
            milestones: vec![7, 9],
            weight_decay: 1e-4,
            momentum: 0.9,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size 0".to_string()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("lr {} not positive", self.lr)));
        }
        if !(self.lr_div >= 1.0 && self.lr_div.is_finite()) {
            return Err(Error::config(format!("lr_div {} below 1", self.lr_div)));
        }
        for pair in self.milestones.windows(2) {
            if pair[1] <= pair[0] {
                return Err(Error::config(format!(
                    "milestones not strictly increasing: {} then {}",
                    pair[0], pair[1]
                )));
            }
        }
        if let Some(&last) = self.milestones.last() {
            if last >= self.epochs {
                return Err(Error::config(format!(
                    "milestone {last} outside the {} training epochs",
                    self.epochs
                )));
            }
        }
        if self.weight_decay < 0.0 || !self.weight_decay.is_finite() {
            return Err(Error::config(format!("weight_decay {}", self.weight_decay)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(format!("momentum {} outside [0,1)", self.momentum)));
        }
        Ok(())
    }

    /// Learning rate during 0-based epoch `epoch_idx`.
    pub fn lr_at(&self, epoch_idx: usize) -> f64 {
        let divisions = self.milestones.iter().filter(|&&m| m <= epoch_idx).count();
        self.lr / self.lr_div.powi(divisions as i32)
    }
}

fn nesterov<T: Scalar>(p: &mut T, g: T, v: &mut T, lr: T, mu: T) {
    *v = mu * *v + g;
    *p -= lr * (g + mu * *v);
}

fn update_tensor<T: Scalar>(
    p: &mut Tensor4<T>,
    g: &Tensor4<T>,
    v: &mut Tensor4<T>,
    lr: T,
    mu: T,
    wd: T,
) {
    for ((p, &g0), v) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
        nesterov(p, g0 + wd * *p, v, lr, mu);
    }
}

/// One optimizer step: v ← μv + g, p ← p − lr·(g + μv), with weight decay
/// folded into g for kernels and dense weights only. Attention parameters
/// are re-clipped and their ROIs/maps rebuilt afterwards.
pub fn sgd_nesterov_step<T: Scalar>(
    model: &mut Model<T>,
    grads: &[LayerGrads<T>],
    velocity: &mut [LayerGrads<T>],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if grads.len() != model.layers.len() || velocity.len() != model.layers.len() {
        return Err(Error::shape("gradient/velocity count does not match layers".to_string()));
    }
    let lr = T::from_f64(lr);
    let mu = T::from_f64(momentum);
    let wd = T::from_f64(weight_decay);
    for ((layer, g), v) in model.layers.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        match (layer, g, v) {
            (
                Layer::Conv { kernels },
                LayerGrads::Conv { dkernels: g },
                LayerGrads::Conv { dkernels: v },
            ) => update_tensor(kernels, g, v, lr, mu, wd),
            (
                Layer::Target(st),
                LayerGrads::Target { dkernels: gk, dparams: gp },
                LayerGrads::Target { dkernels: vk, dparams: vp },
            ) => {
                update_tensor(&mut st.kernels, gk, vk, lr, mu, wd);
                for ((p, g), v) in st.params.iter_mut().zip(gp).zip(vp.iter_mut()) {
                    nesterov(&mut p.m_x, g.m_x, &mut v.m_x, lr, mu);
                    nesterov(&mut p.m_y, g.m_y, &mut v.m_y, lr, mu);
                    nesterov(&mut p.s_x, g.s_x, &mut v.s_x, lr, mu);
                    nesterov(&mut p.s_y, g.s_y, &mut v.s_y, lr, mu);
                }
                st.refresh()?;
            }
            (
                Layer::Dense { weights, bias },
                LayerGrads::Dense { dweights: gw, dbias: gb },
                LayerGrads::Dense { dweights: vw, dbias: vb },
            ) => {
                update_tensor(weights, gw, vw, lr, mu, wd);
                for ((p, &g0), v) in bias.iter_mut().zip(gb).zip(vb.iter_mut()) {
                    nesterov(p, g0, v, lr, mu);
                }
            }
            (_, LayerGrads::Stateless, LayerGrads::Stateless) => {}
            _ => return Err(Error::shape("gradient kind does not match layer".to_string())),
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalMetrics {
    /// Fraction of examples whose argmax logit is not the label.
    pub error: f64,
    /// Mean cross-entropy.
    pub loss: f64,
}

/// Error rate and mean loss over a dataset, eval mode (no dropout, RNG
/// untouched), in file order.
pub fn evaluate<T: Scalar>(
    model: &mut Model<T>,
    set: &LabeledImageSet<T>,
    batch_size: usize,
) -> Result<EvalMetrics> {
    if set.is_empty() {
        return Err(Error::data("empty evaluation set".to_string()));
    }
    if batch_size == 0 {
        return Err(Error::config("batch size 0".to_string()));
    }
    let (n, _, h, w) = set.images.shape();
    let classes = model.num_classes()?;
    let mut errors = 0usize;
    let mut loss_sum = 0.0f64;
    let mut pos = 0;
    while pos < n {
        let end = (pos + batch_size).min(n);
        let count = end - pos;
        let images = Tensor4::from_vec(
            count,
            1,
            h,
            w,
            set.images.data()[pos * h * w..end * h * w].to_vec(),
        )?;
        let labels = &set.labels[pos..end];
        let (logits, _) = model.forward(&images, false)?;
        let (loss, _) = softmax_xent(&logits, labels)?;
        loss_sum += loss.to_f64() * count as f64;
        for (b, &label) in labels.iter().enumerate() {
            let row = &logits.data()[b * classes..(b + 1) * classes];
            let mut arg = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[arg] {
                    arg = c;
                }
            }
            if arg != label {
                errors += 1;
            }
        }
        pos = end;
    }
    Ok(EvalMetrics { error: errors as f64 / n as f64, loss: loss_sum / n as f64 })
}

#[derive(Debug, Clone)]
pub struct EpochMetrics {
    /// 1-based epoch number.
    pub epoch: usize,
    pub lr: f64,
    /// Example-weighted mean training loss over the epoch.
    pub train_loss: f64,
    pub test: EvalMetrics,
    /// Per-example operation counts at the end of the epoch.
    pub macs: u64,
    pub attention_muls: u64,
}

#[derive(Debug)]
pub struct TrainOutcome<T> {
    /// State after the last epoch.
    pub model: Model<T>,
    /// Snapshot with the lowest test error seen (ties keep the earliest);
    /// epoch 0 is the initialized state.
    pub best: Model<T>,
    pub best_epoch: usize,
    pub best_test_error: f64,
    /// Evaluation of the freshly initialized model.
    pub init_test: EvalMetrics,
    pub epochs: Vec<EpochMetrics>,
}

/// Full training run: seeded init, per-epoch shuffled batches, Nesterov
/// steps, per-epoch evaluation and operation counts. Deterministic given
/// the config. Aborts with a numeric error if the loss leaves the reals.
pub fn train<T: Scalar>(
    spec: &NetworkSpec,
    cfg: &TrainConfig,
    train_set: &LabeledImageSet<T>,
    test_set: &LabeledImageSet<T>,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::data("empty training set".to_string()));
    }
    let mut model = Model::<T>::init(spec, cfg.seed)?;
    let mut velocity = model.zero_grads();
    let init_test = evaluate(&mut model, test_set, cfg.batch_size)?;
    let mut best = model.clone();
    let mut best_epoch = 0usize;
    let mut best_test_error = init_test.error;
    let mut metrics = Vec::with_capacity(cfg.epochs);

    for epoch_idx in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch_idx);
        let mut loss_sum = 0.0f64;
        for (step, (images, labels)) in
            batches(train_set, cfg.batch_size, cfg.seed, epoch_idx)?.enumerate()
        {
            let (loss, grads) = model.loss_and_grads(&images, &labels)?;
            let loss = loss.to_f64();
            if !loss.is_finite() {
                return Err(Error::numeric(format!(
                    "loss {loss} at epoch {} step {step}; training aborted",
                    epoch_idx + 1
                )));
            }
            loss_sum += loss * labels.len() as f64;
            sgd_nesterov_step(&mut model, &grads, &mut velocity, lr, cfg.momentum, cfg.weight_decay)?;
        }
        let test = evaluate(&mut model, test_set, cfg.batch_size)?;
        let report = count_model(&model);
        metrics.push(EpochMetrics {
            epoch: epoch_idx + 1,
            lr,
            train_loss: loss_sum / train_set.len() as f64,
            test,
            macs: report.total_macs,
            attention_muls: report.total_attention,
        });
        if test.error < best_test_error {
            best = model.clone();
            best_epoch = epoch_idx + 1;
            best_test_error = test.error;
        }
    }

    Ok(TrainOutcome { model, best, best_epoch, best_test_error, init_test, epochs: metrics })
}

/// One cell of the penalty/buildup sweep.
#[derive(Debug, Clone)]
pub struct SweepCell {
    pub lambda: f64,
    pub beta: f64,
    /// Lowest test error over the run (the selection rule used everywhere).
    pub best_test_error: f64,
    /// End-of-training per-example report.
    pub report: FlopReport,
}

impl SweepCell {
    pub fn total_flops(&self) -> u64 {
        self.report.total()
    }
}

/// Train the targeted mini network once per (λ, β) cell with a shared
/// config, collecting final compute and best error per cell.
#[allow(clippy::too_many_arguments)]
pub fn run_sweep<T: Scalar>(
    input_hw: (usize, usize),
    num_classes: usize,
    family: Family,
    lambdas: &[f64],
    betas: &[f64],
    cfg: &TrainConfig,
    train_set: &LabeledImageSet<T>,
    test_set: &LabeledImageSet<T>,
) -> Result<Vec<SweepCell>> {
    if lambdas.is_empty() || betas.is_empty() {
        return Err(Error::config("empty sweep grid".to_string()));
    }
    let mut cells = Vec::with_capacity(lambdas.len() * betas.len());
    for &lambda in lambdas {
        for &beta in betas {
            let spec = build_tkn6_mini(input_hw, num_classes, family, lambda, beta)?;
            let outcome = train(&spec, cfg, train_set, test_set)?;
            cells.push(SweepCell {
                lambda,
                beta,
                best_test_error: outcome.best_test_error,
                report: count_model(&outcome.model),
            });
        }
    }
    Ok(cells)
}

/// Directional check over a sweep: the strongest-penalty cell (largest λ·β,
/// then λ, then β) must end with strictly fewer total operations than the
/// weakest-penalty cell.
pub fn sweep_monotone(cells: &[SweepCell]) -> Option<bool> {
    if cells.len() < 2 {
        return None;
    }
    let key = |c: &SweepCell| (c.lambda * c.beta, c.lambda, c.beta);
    let hi = cells.iter().max_by(|a, b| key(a).partial_cmp(&key(b)).unwrap())?;
    let lo = cells.iter().min_by(|a, b| key(a).partial_cmp(&key(b)).unwrap())?;
    Some(hi.total_flops() < lo.total_flops())
}
