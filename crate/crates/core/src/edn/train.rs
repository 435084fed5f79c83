//! Two-stage training: encoder against a fixed exemplar dictionary, then the
//! encoder and both dictionaries jointly.

use ndarray::Axis;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{adam_step, AdamConfig, AdamState};
use super::decoder::DecoderParams;
use super::encoder::{encoder_forward, EncoderParams};
use super::loss::{compute_gradients, total_loss_chunked, LossParts, Stage};
use crate::error::{check_dim, Error, Result};
use crate::matrix::{Dictionary, FrameMatrix};
use crate::scalar::Scalar;

const EVAL_CHUNK: usize = 1024;
const PROBE_FRAMES: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig<T: Scalar> {
    /// Weight of self-reconstruction in the joint stage.
    pub alpha: T,
    pub batch_size: usize,
    pub stage1_lr: T,
    pub stage2_lr: T,
    /// Optional separate stage-2 learning rate for the dictionary tensors.
    pub stage2_dict_lr: Option<T>,
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub lr_decay_factor: T,
    pub lr_decay_every_epochs: usize,
    pub max_lr_decays: usize,
    pub adam: AdamConfig<T>,
    pub rng_seed: u64,
    /// Patience (epochs) for early stopping on a 10% held-out split.
    pub early_stop_patience: Option<usize>,
    /// Verify nonnegativity and unit-sum of codes and dictionaries during training.
    pub check_invariants: bool,
}

impl<T: Scalar> Default for TrainConfig<T> {
    fn default() -> Self {
        Self {
            alpha: T::lit(0.15),
            batch_size: 512,
            stage1_lr: T::lit(0.001),
            stage2_lr: T::lit(0.01),
            stage2_dict_lr: None,
            stage1_epochs: 100,
            stage2_epochs: 200,
            lr_decay_factor: T::lit(0.1),
            lr_decay_every_epochs: 50,
            max_lr_decays: 3,
            adam: AdamConfig::default(),
            rng_seed: 0,
            early_stop_patience: None,
            check_invariants: true,
        }
    }
}

impl<T: Scalar> TrainConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.alpha >= T::zero() && self.alpha <= T::one()) {
            return fail("alpha must lie in [0, 1]");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1");
        }
        let lrs = [Some(self.stage1_lr), Some(self.stage2_lr), self.stage2_dict_lr];
        if lrs.iter().flatten().any(|lr| !(*lr > T::zero())) {
            return fail("learning rates must be positive");
        }
        if !(self.lr_decay_factor > T::zero() && self.lr_decay_factor <= T::one()) {
            return fail("lr_decay_factor must lie in (0, 1]");
        }
        if self.lr_decay_every_epochs == 0 {
            return fail("lr_decay_every_epochs must be at least 1");
        }
        let a = &self.adam;
        if !(a.beta1 >= T::zero() && a.beta1 < T::one() && a.beta2 >= T::zero() && a.beta2 < T::one() && a.eps > T::zero()) {
            return fail("adam betas must lie in [0, 1) and eps must be positive");
        }
        if self.early_stop_patience == Some(0) {
            return fail("early_stop_patience must be at least 1 when set");
        }
        Ok(())
    }

    /// Stage-2 learning rate for 1-based `epoch`: decayed after every
    /// `lr_decay_every_epochs` completed epochs, at most `max_lr_decays` times.
    pub fn stage2_lr_at(&self, epoch: usize, base: T) -> T {
        let decays = (epoch.saturating_sub(1) / self.lr_decay_every_epochs).min(self.max_lr_decays);
        base * self.lr_decay_factor.powi(decays as i32)
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 0 is the evaluation before any update.
    pub epoch: usize,
    pub stage: u8,
    pub lr: f64,
    pub loss: f64,
    pub recon_kld: f64,
    pub conv_kld: Option<f64>,
}

impl EpochRecord {
    fn new<T: Scalar>(epoch: usize, stage: u8, lr: T, loss: &LossParts<T>) -> Self {
        Self {
            epoch,
            stage,
            lr: lr.as_f64(),
            loss: loss.total.as_f64(),
            recon_kld: loss.recon.as_f64(),
            conv_kld: loss.conv.map(Scalar::as_f64),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Stage1Output<T: Scalar> {
    pub encoder: EncoderParams<T>,
    pub log: Vec<EpochRecord>,
}

#[derive(Debug, Clone)]
pub struct Stage2Output<T: Scalar> {
    pub encoder: EncoderParams<T>,
    pub decoders: DecoderParams<T>,
    pub log: Vec<EpochRecord>,
}

fn invariant_tol<T: Scalar>() -> T {
    T::lit(1e-9).max(T::epsilon() * T::lit(64.0))
}

fn check_columns<T: Scalar>(a: ndarray::ArrayView2<'_, T>, what: &str) -> Result<()> {
    let tol = invariant_tol::<T>();
    for (j, col) in a.axis_iter(Axis(1)).enumerate() {
        if col.iter().any(|v| !(*v >= T::zero())) {
            return Err(Error::Domain(format!("training invariant: {what} column {j} has a negative entry")));
        }
        if (col.sum() - T::one()).abs() > tol {
            return Err(Error::Domain(format!(
                "training invariant: {what} column {j} sums to {}",
                col.sum()
            )));
        }
    }
    Ok(())
}

/// Nonnegativity and unit-sum of the effective dictionaries and of the codes
/// and converted frames produced for `probe`.
pub fn check_model_invariants<T: Scalar>(
    probe: &FrameMatrix<T>,
    encoder: &EncoderParams<T>,
    decoders: Option<&DecoderParams<T>>,
) -> Result<()> {
    let codes = encoder_forward(probe, encoder)?;
    check_columns(codes.view(), "code")?;
    if let Some(d) = decoders {
        let (ux, uy) = (d.ux(), d.uy());
        check_columns(ux.view(), "source dictionary")?;
        check_columns(uy.view(), "target dictionary")?;
        check_columns(uy.as_array().dot(codes.as_array()).view(), "converted frame")?;
    }
    Ok(())
}

fn split_holdout(n: usize, enabled: bool, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    if !enabled || n < 2 {
        return (idx, Vec::new());
    }
    idx.shuffle(rng);
    let n_val = (n / 10).max(1);
    let val = idx.split_off(n - n_val);
    let mut train = idx;
    let mut val = val;
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

type RunOutput<T> = (EncoderParams<T>, Option<DecoderParams<T>>, Vec<EpochRecord>);

struct Run<'a, T: Scalar> {
    x: &'a FrameMatrix<T>,
    y: Option<&'a FrameMatrix<T>>,
    fixed_ux: Option<&'a Dictionary<T>>,
    cfg: &'a TrainConfig<T>,
    stage_no: u8,
    epochs: usize,
}

impl<T: Scalar> Run<'_, T> {
    fn stage<'b>(&'b self, decoders: &'b Option<DecoderParams<T>>) -> Stage<'b, T> {
        match decoders {
            Some(d) => Stage::Joint {
                decoders: d,
                alpha: self.cfg.alpha,
            },
            None => Stage::Encoder {
                ux: self.fixed_ux.expect("stage 1 has a fixed dictionary"),
            },
        }
    }

    fn lrs(&self, epoch: usize) -> (T, T) {
        if self.stage_no == 1 {
            (self.cfg.stage1_lr, self.cfg.stage1_lr)
        } else {
            let dict_base = self.cfg.stage2_dict_lr.unwrap_or(self.cfg.stage2_lr);
            (
                self.cfg.stage2_lr_at(epoch, self.cfg.stage2_lr),
                self.cfg.stage2_lr_at(epoch, dict_base),
            )
        }
    }

    fn loss_on(
        &self,
        idx: &[usize],
        encoder: &EncoderParams<T>,
        decoders: &Option<DecoderParams<T>>,
    ) -> Result<LossParts<T>> {
        let xs = self.x.select_columns(idx);
        let ys = self.y.map(|y| y.select_columns(idx));
        total_loss_chunked(&xs, ys.as_ref(), encoder, self.stage(decoders), EVAL_CHUNK)
    }

    fn execute(
        &self,
        mut encoder: EncoderParams<T>,
        mut decoders: Option<DecoderParams<T>>,
        observer: &mut EpochObserver<'_, T>,
    ) -> Result<RunOutput<T>> {
        let cfg = self.cfg;
        cfg.validate()?;
        if let Some(d) = decoders.as_mut() {
            d.ax_pre = d.ax_pre.as_standard_layout().into_owned();
            d.ay_pre = d.ay_pre.as_standard_layout().into_owned();
        }
        if self.x.ncols() == 0 {
            return Err(Error::EmptyInput("training corpus"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed.wrapping_add(self.stage_no as u64));
        let (train_idx, val_idx) = split_holdout(self.x.ncols(), cfg.early_stop_patience.is_some(), &mut rng);
        let all: Vec<usize> = (0..self.x.ncols()).collect();
        let probe = self.x.select_columns(&all[..all.len().min(PROBE_FRAMES)]);

        let initial = self.loss_on(&all, &encoder, &decoders)?;
        let mut log = vec![EpochRecord::new(0, self.stage_no, self.lrs(1).0, &initial)];
        let start = (encoder.clone(), decoders.clone());

        let mut enc_state = AdamState::for_tensors(&encoder.tensors());
        let mut dict_state = AdamState::new(&[
            decoders.as_ref().map_or(0, |d| d.ax_pre.len()),
            decoders.as_ref().map_or(0, |d| d.ay_pre.len()),
        ]);

        let mut best: Option<(T, EncoderParams<T>, Option<DecoderParams<T>>)> = None;
        let mut since_best = 0;
        let mut order = train_idx.clone();

        for epoch in 1..=self.epochs {
            let (lr, dict_lr) = self.lrs(epoch);
            order.shuffle(&mut rng);
            let mut sum = LossParts {
                total: T::zero(),
                recon: T::zero(),
                conv: decoders.as_ref().map(|_| T::zero()),
            };
            for batch in order.chunks(cfg.batch_size) {
                let xb = self.x.select_columns(batch);
                let yb = self.y.map(|y| y.select_columns(batch));
                let grads = compute_gradients(&xb, yb.as_ref(), &encoder, self.stage(&decoders))?;

                let w = T::lit(batch.len() as f64);
                sum.total += grads.loss.total * w;
                sum.recon += grads.loss.recon * w;
                if let (Some(c), Some(g)) = (sum.conv.as_mut(), grads.loss.conv) {
                    *c += g * w;
                }

                adam_step(&mut encoder.tensors_mut(), &grads.encoder.tensors(), &mut enc_state, lr, &cfg.adam)?;
                if let (Some(d), Some(gx), Some(gy)) = (decoders.as_mut(), grads.ax_pre.as_ref(), grads.ay_pre.as_ref()) {
                    let gx = gx.as_standard_layout();
                    let gy = gy.as_standard_layout();
                    let (gx, gy) = (gx.as_slice().expect("standard layout"), gy.as_slice().expect("standard layout"));
                    adam_step(
                        &mut [
                            d.ax_pre.as_slice_mut().expect("standard layout"),
                            d.ay_pre.as_slice_mut().expect("standard layout"),
                        ],
                        &[gx, gy],
                        &mut dict_state,
                        dict_lr,
                        &cfg.adam,
                    )?;
                }
                if !encoder.is_finite() {
                    return Err(Error::NonFinite(format!("encoder parameters diverged in epoch {epoch}")));
                }
                if cfg.check_invariants {
                    if let Some(d) = decoders.as_ref() {
                        check_columns(d.ux().view(), "source dictionary")?;
                        check_columns(d.uy().view(), "target dictionary")?;
                    }
                }
            }
            if cfg.check_invariants {
                check_model_invariants(&probe, &encoder, decoders.as_ref())?;
            }

            let nn = T::lit(order.len() as f64);
            let mean = LossParts {
                total: sum.total / nn,
                recon: sum.recon / nn,
                conv: sum.conv.map(|c| c / nn),
            };
            log.push(EpochRecord::new(epoch, self.stage_no, lr, &mean));
            observer(&EpochState {
                record: log.last().expect("just pushed"),
                encoder: &encoder,
                decoders: decoders.as_ref(),
            })?;
            log::debug!(
                "stage {} epoch {epoch}: lr {lr} loss {} recon {} conv {:?}",
                self.stage_no,
                mean.total,
                mean.recon,
                mean.conv
            );

            if let Some(patience) = cfg.early_stop_patience {
                let val = self.loss_on(&val_idx, &encoder, &decoders)?.total;
                if best.as_ref().is_none_or(|(b, _, _)| val < *b) {
                    best = Some((val, encoder.clone(), decoders.clone()));
                    since_best = 0;
                } else {
                    since_best += 1;
                    if since_best >= patience {
                        log::info!("stage {}: early stop after epoch {epoch}", self.stage_no);
                        break;
                    }
                }
            }
        }

        if let Some((_, e, d)) = best {
            encoder = e;
            decoders = d;
        }
        let final_loss = self.loss_on(&all, &encoder, &decoders)?;
        if final_loss.total > initial.total {
            log::warn!(
                "stage {}: final loss {} exceeds initial {}; keeping initial parameters",
                self.stage_no,
                final_loss.total,
                initial.total
            );
            let (e, d) = start;
            encoder = e;
            decoders = d;
        }
        Ok((encoder, decoders, log))
    }
}

/// What an epoch observer sees after every completed epoch.
pub struct EpochState<'a, T: Scalar> {
    pub record: &'a EpochRecord,
    pub encoder: &'a EncoderParams<T>,
    /// `None` in stage 1.
    pub decoders: Option<&'a DecoderParams<T>>,
}

/// Callback run after every epoch; an error aborts training.
pub type EpochObserver<'a, T> = dyn FnMut(&EpochState<'_, T>) -> Result<()> + 'a;

/// Trains the encoder so that `ux · f(x)` reconstructs `x`; `ux` stays fixed.
pub fn train_stage1<T: Scalar>(
    x: &FrameMatrix<T>,
    theta: EncoderParams<T>,
    ux: &Dictionary<T>,
    cfg: &TrainConfig<T>,
) -> Result<Stage1Output<T>> {
    train_stage1_observed(x, theta, ux, cfg, &mut |_| Ok(()))
}

/// As [`train_stage1`], calling `observer` after every epoch.
pub fn train_stage1_observed<T: Scalar>(
    x: &FrameMatrix<T>,
    theta: EncoderParams<T>,
    ux: &Dictionary<T>,
    cfg: &TrainConfig<T>,
    observer: &mut EpochObserver<'_, T>,
) -> Result<Stage1Output<T>> {
    check_dim("stage-1 dictionary size", theta.code_dim(), ux.n_bases())?;
    check_dim("stage-1 dictionary dim", x.nrows(), ux.dim())?;
    let run = Run {
        x,
        y: None,
        fixed_ux: Some(ux),
        cfg,
        stage_no: 1,
        epochs: cfg.stage1_epochs,
    };
    let (encoder, _, log) = run.execute(theta, None, observer)?;
    Ok(Stage1Output { encoder, log })
}

/// Jointly trains the encoder and both dictionaries on aligned pairs.
pub fn train_stage2<T: Scalar>(
    x: &FrameMatrix<T>,
    y: &FrameMatrix<T>,
    theta: EncoderParams<T>,
    decoders: DecoderParams<T>,
    cfg: &TrainConfig<T>,
) -> Result<Stage2Output<T>> {
    train_stage2_observed(x, y, theta, decoders, cfg, &mut |_| Ok(()))
}

/// As [`train_stage2`], calling `observer` after every epoch.
pub fn train_stage2_observed<T: Scalar>(
    x: &FrameMatrix<T>,
    y: &FrameMatrix<T>,
    theta: EncoderParams<T>,
    decoders: DecoderParams<T>,
    cfg: &TrainConfig<T>,
    observer: &mut EpochObserver<'_, T>,
) -> Result<Stage2Output<T>> {
    check_dim("stage-2 pair count", x.ncols(), y.ncols())?;
    check_dim("stage-2 target dim", x.nrows(), y.nrows())?;
    check_dim("stage-2 dictionary size", theta.code_dim(), decoders.n_bases())?;
    check_dim("stage-2 dictionary dim", x.nrows(), decoders.dim())?;
    let run = Run {
        x,
        y: Some(y),
        fixed_ux: None,
        cfg,
        stage_no: 2,
        epochs: cfg.stage2_epochs,
    };
    let (encoder, decoders, log) = run.execute(theta, Some(decoders), observer)?;
    Ok(Stage2Output {
        encoder,
        decoders: decoders.expect("stage 2 keeps its decoders"),
        log,
    })
}
