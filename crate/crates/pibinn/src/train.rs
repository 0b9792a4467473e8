//! Stage orchestration: optional high-resolution pretraining, Stage-I QAT
//! (lazy projection or prox-regularized), Stage-II global-scale descent,
//! and the plain STE loops for the ternary / channel-wise baselines.
//! Records per-epoch losses and per-stage wall-clock times.

use std::time::Instant;

use log::info;
use thiserror::Error;

use crate::data::{DataError, Dataset};
use crate::diag::{nmse_db, MetricsReport};
use crate::linalg::{
    spectral_norm, LinalgError, Operator, SPECTRAL_MAX_ITER_DEFAULT, SPECTRAL_TOL_DEFAULT,
};
use crate::physics::{mask_from_block, SparsityMask};
use crate::quant::{
    effective_bits, prox_epoch, refresh_projection, stage2_scale, ste_epoch, EpochContext,
    Optimizer, OptimizerKind, QatMode, QuantConfig, QuantError, ShadowState, Stage2Result,
};
use crate::unroll::{forward, per_layer_errors, Activation, LossKind, QuantMode, UnrolledNet};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("{stage} stage, epoch {epoch}: {source}")]
    Stage {
        stage: &'static str,
        epoch: usize,
        #[source]
        source: QuantError,
    },
    #[error(transparent)]
    Quant(#[from] QuantError),
    #[error(transparent)]
    Unroll(#[from] crate::unroll::UnrollError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("invalid training settings: {0}")]
    InvalidSettings(String),
}

#[derive(Debug, Clone)]
pub struct TrainSettings {
    pub k: usize,
    pub delta: f64,
    pub activation: Activation,
    pub quant_mode: QuantMode,
    pub quant: QuantConfig,
    pub pretrain_epochs: usize,
    pub no_pretrain: bool,
    pub stage2_epochs: usize,
    pub stage2_lr: f64,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub loss_kind: LossKind,
    /// Tie weights to one block per layer (requires a block-structured
    /// dataset); untied applies the block mask to dense weights instead.
    pub tied: bool,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            k: 5,
            delta: 1.0,
            activation: Activation::SoftThreshold,
            quant_mode: QuantMode::OneBitGlobal,
            quant: QuantConfig {
                mode: QatMode::LazyProjection,
                lambda0: 0.02,
                beta: 0.0,
                lr0: 1e-3,
                decay: 0.9,
                decay_every: 10,
                epochs: 40,
                seed: 0,
            },
            pretrain_epochs: 30,
            no_pretrain: false,
            stage2_epochs: 60,
            stage2_lr: 1e-3,
            batch_size: 250,
            optimizer: OptimizerKind::Adam,
            loss_kind: LossKind::SquaredError,
            tied: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EpochRecord {
    pub stage: &'static str,
    pub epoch: usize,
    pub loss: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub net: UnrolledNet,
    pub stage2: Option<Stage2Result>,
    pub wall_times: Vec<(String, f64)>,
    pub epoch_log: Vec<EpochRecord>,
}

/// ISTA-style warm start: W_k = A/L with L = ‖A‖² (the block for tied
/// structured runs), θ_k = 0.1/L.
pub fn init_net(settings: &TrainSettings, ds: &Dataset) -> Result<UnrolledNet, TrainError> {
    let structure = ds.spec.structure;
    if structure.is_none() && settings.tied {
        // tied is only meaningful with structure; harmless otherwise
    }
    let (base, net_structure) = match (&ds.a, structure, settings.tied) {
        (Operator::Block(b), Some(s), true) => (b.block.clone(), Some(s)),
        (Operator::Block(b), _, false) => (b.materialize(), None),
        (Operator::Dense(a), _, _) => (a.clone(), None),
        (Operator::Block(b), None, true) => (b.block.clone(), None),
    };
    let sigma = spectral_norm(&base, SPECTRAL_TOL_DEFAULT, SPECTRAL_MAX_ITER_DEFAULT)?;
    let l = (sigma * sigma).max(1e-12);
    let mut net = UnrolledNet::zeros(
        settings.k,
        base.rows(),
        base.cols(),
        settings.activation,
    );
    net.delta = settings.delta;
    net.quant_mode = settings.quant_mode;
    net.lambda0 = settings.quant.lambda0;
    net.structure = net_structure;
    net.tied = settings.tied && net_structure.is_some();
    for layer in net.layers.iter_mut() {
        layer.w = base.scaled(1.0 / l);
        layer.theta = 0.1 / l;
    }
    Ok(net)
}

/// Mask applied during training: only untied structured runs need one.
pub fn training_mask(settings: &TrainSettings, ds: &Dataset) -> Option<SparsityMask> {
    match (&ds.spec.structure, settings.tied) {
        (Some(s), false) => Some(mask_from_block(s)),
        _ => None,
    }
}

pub fn train(settings: &TrainSettings, ds: &Dataset) -> Result<TrainOutcome, TrainError> {
    settings.quant.validate()?;
    if settings.k == 0 {
        return Err(TrainError::InvalidSettings("k must be >= 1".into()));
    }
    if !(settings.delta > 0.0 && settings.delta <= 1.0) {
        return Err(TrainError::InvalidSettings("delta must be in (0, 1]".into()));
    }
    let mask = training_mask(settings, ds);
    let mut net = init_net(settings, ds)?;
    if let Some(m) = &mask {
        for layer in net.layers.iter_mut() {
            crate::physics::apply_mask(&mut layer.w, m);
        }
    }
    let ctx = EpochContext {
        a: &ds.a,
        y: &ds.train_y,
        x_opt: &ds.train_x,
        batch_size: settings.batch_size,
        loss_kind: settings.loss_kind,
        mask: mask.as_ref(),
    };

    let mut wall_times = Vec::new();
    let mut epoch_log = Vec::new();
    let target_mode = settings.quant_mode;
    let mut shadow = ShadowState::from_net(&net, settings.quant.lambda0);

    // Pretraining: high-resolution warm start before any quantized stage.
    let pretrain_epochs = if target_mode == QuantMode::HighRes || settings.no_pretrain {
        0
    } else {
        settings.pretrain_epochs
    };
    if pretrain_epochs > 0 {
        net.quant_mode = QuantMode::HighRes;
        let mut opt = Optimizer::new(settings.optimizer);
        let start = Instant::now();
        for epoch in 0..pretrain_epochs {
            let lr = settings.quant.lr_at(epoch);
            let loss = ste_epoch(&mut net, &mut shadow, &ctx, lr, &mut opt)
                .map_err(|e| TrainError::Stage {
                    stage: "pretrain",
                    epoch,
                    source: e,
                })?;
            epoch_log.push(EpochRecord {
                stage: "pretrain",
                epoch,
                loss,
            });
            info!("pretrain epoch {epoch}: loss {loss:.6e}");
        }
        wall_times.push(("pretrain".to_string(), start.elapsed().as_secs_f64()));
        net.quant_mode = target_mode;
    }

    // Main stage: HighRes trains plainly; quantized modes run Stage I.
    let stage_name: &'static str = match target_mode {
        QuantMode::HighRes => "train",
        _ => "stage1",
    };
    {
        let mut opt = Optimizer::new(settings.optimizer);
        let start = Instant::now();
        for epoch in 0..settings.quant.epochs {
            let lr = settings.quant.lr_at(epoch);
            let loss = match (target_mode, settings.quant.mode) {
                (QuantMode::OneBitGlobal, QatMode::ProxRegularized) => {
                    prox_epoch(&mut net, &mut shadow, &ctx, lr, settings.quant.beta, &mut opt)
                }
                _ => ste_epoch(&mut net, &mut shadow, &ctx, lr, &mut opt),
            }
            .map_err(|e| TrainError::Stage {
                stage: stage_name,
                epoch,
                source: e,
            })?;
            epoch_log.push(EpochRecord {
                stage: stage_name,
                epoch,
                loss,
            });
            info!("{stage_name} epoch {epoch}: loss {loss:.6e}");
        }
        // finalize: quantized weights in the net (prox mode signs off here)
        refresh_projection(&mut net, &shadow, ctx.mask);
        wall_times.push((stage_name.to_string(), start.elapsed().as_secs_f64()));
    }

    // Stage II: global scale, one-bit mode only.
    let mut stage2 = None;
    if target_mode == QuantMode::OneBitGlobal && settings.stage2_epochs > 0 {
        let start = Instant::now();
        let res = stage2_scale(&mut net, &ctx, settings.stage2_lr, settings.stage2_epochs)
            .map_err(|e| TrainError::Stage {
                stage: "stage2",
                epoch: 0,
                source: e,
            })?;
        for (epoch, &loss) in res.loss_curve.iter().enumerate() {
            epoch_log.push(EpochRecord {
                stage: "stage2",
                epoch,
                loss,
            });
        }
        info!(
            "stage2: λ = {:.4}, effective scale {:.4}",
            res.lambda, res.effective_scale
        );
        wall_times.push(("stage2".to_string(), start.elapsed().as_secs_f64()));
        stage2 = Some(res);
    }

    Ok(TrainOutcome {
        net,
        stage2,
        wall_times,
        epoch_log,
    })
}

/// Trainable parameter count of the net as stored.
pub fn param_count(net: &UnrolledNet) -> u64 {
    let weights: u64 = net
        .layers
        .iter()
        .map(|l| (l.w.rows() * l.w.cols()) as u64)
        .sum();
    let scale = if net.quant_mode == QuantMode::OneBitGlobal {
        1
    } else {
        0
    };
    weights + net.num_layers() as u64 + scale
}

/// Train/test NMSE, gap, per-layer curve, bits, and params for a net on a
/// dataset.
pub fn evaluate(net: &UnrolledNet, ds: &Dataset) -> Result<MetricsReport, TrainError> {
    let train_trace = forward(net, &ds.a, &ds.train_y, None)?;
    let test_trace = forward(net, &ds.a, &ds.test_y, None)?;
    let train_nmse = nmse_db(train_trace.final_state(), &ds.train_x);
    let test_nmse = nmse_db(test_trace.final_state(), &ds.test_x);
    let mut report = MetricsReport::new(train_nmse, test_nmse);
    report.bits = effective_bits(net);
    report.params = param_count(net);
    report.layer_curve = per_layer_errors(net, &ds.a, &ds.test_y, &ds.test_x)?;
    Ok(report)
}

/// Convenience for diagnostics and tests: a net trained end-to-end on the
/// dataset per the settings, with its evaluation report.
pub fn train_and_evaluate(
    settings: &TrainSettings,
    ds: &Dataset,
) -> Result<(TrainOutcome, MetricsReport), TrainError> {
    let outcome = train(settings, ds)?;
    let mut report = evaluate(&outcome.net, ds)?;
    report.wall_times = outcome.wall_times.clone();
    Ok((outcome, report))
}
