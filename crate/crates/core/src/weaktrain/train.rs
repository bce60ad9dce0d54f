use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::augment::{augment, inference_long_side, output_dims, prepare_sample};
use super::config::{RlsRegion, TrainConfig};
use super::pseudo::{make_pseudo_masks, update_pseudo_mask};
use super::Sample;
use crate::error::{Error, Result};
use crate::eval::{prf_dice, summarize, Summary, EVAL_THRESHOLD};
use crate::imgcore::{resample, BinaryMask, GrayImage, Interp, ProbMap};
use crate::losses::{rls_loss, seg_loss, LossConfig};
use crate::model::{adam_step, backward, forward, init_params, AdamState, ModelParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    SegOnly,
    SegPlusRls,
}

/// Parameters, optimizer moments and the next epoch to run.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub params: ModelParams,
    pub adam: AdamState,
    pub epoch: usize,
    pub round: usize,
}

impl TrainState {
    pub fn fresh(cfg: &TrainConfig, round: usize) -> Self {
        let params = init_params(cfg.seed, cfg.arch);
        Self {
            adam: AdamState::new(&params),
            params,
            epoch: 0,
            round,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub round: usize,
    pub epoch: usize,
    pub stage: u8,
    pub lr: f64,
    pub mean_seg_loss: f64,
    pub mean_rls_loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    /// Evaluation summary after each round, when an evaluation set was given.
    pub round_summaries: Vec<(usize, Summary)>,
    /// Per round, how many samples got a new pseudo mask before it.
    pub pseudo_updates: Vec<usize>,
    pub warnings: Vec<String>,
}

impl TrainHistory {
    /// `round,epoch,stage,lr,mean_seg_loss,mean_rls_loss`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_rounds_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "round,n,dice_mean,dice_std,precision_mean,recall_mean")?;
        for (round, s) in &self.round_summaries {
            writeln!(
                f,
                "{round},{},{},{},{},{}",
                s.n, s.dice.mean, s.dice.std, s.precision.mean, s.recall.mean
            )?;
        }
        Ok(())
    }
}

/// Learning rate after the step decays scheduled at or before `epoch`.
pub fn lr_at(cfg: &TrainConfig, epoch: usize) -> f64 {
    let n = cfg.decay_epochs.iter().filter(|&&e| e <= epoch).count();
    cfg.lr * cfg.lr_decay.powi(n as i32)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleLoss {
    pub seg: f64,
    /// Unweighted regional level set loss; 0 when not applied.
    pub rls: f64,
    /// `seg + rls_weight * rls`.
    pub total: f64,
}

/// Loss and parameter gradient for one prepared sample. `rls` selects the
/// region for the level set term; `None` means segmentation loss only.
pub fn sample_loss(
    params: &ModelParams,
    sample: &Sample,
    loss: &LossConfig,
    rls: Option<RlsRegion>,
) -> Result<(SampleLoss, ModelParams)> {
    let pred = forward(&sample.image, params)?;
    let dims = [pred.maps[0].dims(), pred.maps[1].dims(), pred.maps[2].dims()];
    let g = make_pseudo_masks(&sample.pseudo, dims)?;
    let seg = seg_loss(
        [&pred.maps[0], &pred.maps[1], &pred.maps[2]],
        [&g[0], &g[1], &g[2]],
        loss,
    )?;
    let mut grads = seg.grads;
    let mut rls_value = 0.0;
    let region = match rls {
        Some(RlsRegion::Constrained) => Some(sample.region.clone()),
        Some(RlsRegion::WholeImage) => Some(BinaryMask::filled(sample.image.width(), sample.image.height(), true)),
        Some(RlsRegion::Off) | None => None,
    };
    if let Some(region) = region {
        let r = rls_loss(&pred.maps[2], &sample.image, &region, loss)?;
        rls_value = r.value;
        for (d, v) in grads[2].data_mut().iter_mut().zip(r.grad.data()) {
            *d += loss.rls_weight * v;
        }
    }
    let total = seg.value + loss.rls_weight * rls_value;
    if !total.is_finite() {
        return Err(Error::NonFiniteLoss(sample.id.clone()));
    }
    let pgrads = backward(&pred.cache, params, [&grads[0], &grads[1], &grads[2]])?;
    Ok((
        SampleLoss {
            seg: seg.value,
            rls: rls_value,
            total,
        },
        pgrads,
    ))
}

fn stream_id(round: usize, epoch: usize, index: usize) -> u64 {
    ((round as u64) << 48) | ((epoch as u64) << 24) | index as u64
}

fn thread_count() -> usize {
    std::env::var("WEAKSEG_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
}

struct EpochOutcome {
    seg: f64,
    rls: f64,
    warnings: Vec<String>,
}

fn run_epoch(
    dataset: &[Sample],
    state: &mut TrainState,
    cfg: &TrainConfig,
    rls: Option<RlsRegion>,
    pool: Option<&rayon::ThreadPool>,
) -> Result<EpochOutcome> {
    let loss = cfg.loss_config();
    let lr = lr_at(cfg, state.epoch);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream_id(state.round, state.epoch, 0xFF_FFFF));
    order.shuffle(&mut rng);

    let mut out = EpochOutcome {
        seg: 0.0,
        rls: 0.0,
        warnings: Vec::new(),
    };
    for batch in order.chunks(cfg.batch) {
        let params = &state.params;
        let (round, epoch) = (state.round, state.epoch);
        let one = |&i: &usize| -> Result<(SampleLoss, ModelParams, Option<String>)> {
            let (s, warning) = match &cfg.augment {
                Some(aug) => {
                    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                    rng.set_stream(stream_id(round, epoch, i));
                    let a = augment(&dataset[i], aug, cfg.long_side, &mut rng)?;
                    (a.sample, a.warning)
                }
                None => (prepare_sample(&dataset[i], cfg.long_side)?, None),
            };
            let (l, g) = sample_loss(params, &s, &loss, rls)?;
            Ok((l, g, warning))
        };
        let results: Vec<Result<_>> = match pool {
            Some(p) => p.install(|| batch.par_iter().map(one).collect()),
            None => batch.iter().map(one).collect(),
        };
        let mut acc = ModelParams::zeros(cfg.arch);
        for r in results {
            let (l, g, warning) = r?;
            out.seg += l.seg;
            out.rls += l.rls;
            acc.axpy(1.0, &g);
            out.warnings.extend(warning);
        }
        acc.scale(1.0 / batch.len() as f64);
        adam_step(&mut state.params, &acc, &mut state.adam, lr)?;
    }
    out.seg /= dataset.len() as f64;
    out.rls /= dataset.len() as f64;
    Ok(out)
}

fn plateaued(records: &[EpochRecord]) -> bool {
    const WINDOW: usize = 5;
    if records.len() <= WINDOW {
        return false;
    }
    let now = records[records.len() - 1].mean_seg_loss;
    let before = records[records.len() - 1 - WINDOW].mean_seg_loss;
    before > 0.0 && (before - now) / before < 0.01
}

/// Runs the epochs belonging to `stage`, starting from `state.epoch`.
/// Stage one ends at `stage2_start` (or earlier on a plateau when enabled);
/// stage two ends at `epochs`.
pub fn train_stage(
    dataset: &[Sample],
    mut state: TrainState,
    cfg: &TrainConfig,
    stage: Stage,
) -> Result<(TrainState, TrainHistory)> {
    if dataset.is_empty() {
        return Err(Error::Empty("training dataset".into()));
    }
    cfg.validate()?;
    let threads = thread_count();
    let pool = if threads > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| Error::Config(e.to_string()))?,
        )
    } else {
        None
    };
    let (end, rls, flag) = match stage {
        Stage::SegOnly => (cfg.stage2_start, None, 1),
        Stage::SegPlusRls => (cfg.epochs, Some(cfg.rls_region), 2),
    };
    let mut history = TrainHistory::default();
    while state.epoch < end {
        let lr = lr_at(cfg, state.epoch);
        let o = run_epoch(dataset, &mut state, cfg, rls, pool.as_ref())?;
        history.records.push(EpochRecord {
            round: state.round,
            epoch: state.epoch,
            stage: flag,
            lr,
            mean_seg_loss: o.seg,
            mean_rls_loss: o.rls,
        });
        history.warnings.extend(o.warnings);
        state.epoch += 1;
        if stage == Stage::SegOnly && cfg.plateau_switch && plateaued(&history.records) {
            break;
        }
    }
    Ok((state, history))
}

/// Full-resolution foreground probability for an image of any size: the
/// image is resized to the inference long side, segmented, and the finest
/// map is resized back.
pub fn predict(params: &ModelParams, image: &GrayImage, long_side: [usize; 2]) -> Result<ProbMap> {
    let long = inference_long_side(image.dims(), long_side);
    let (dims, _) = output_dims(image.dims(), long);
    let input = resample(image, dims, Interp::Bilinear)?;
    let pred = forward(&input, params)?;
    let [_, _, p3] = pred.maps;
    resample(&p3, image.dims(), Interp::Bilinear)
}

pub fn predict_mask(params: &ModelParams, image: &GrayImage, long_side: [usize; 2]) -> Result<BinaryMask> {
    Ok(predict(params, image, long_side)?.threshold(EVAL_THRESHOLD))
}

/// Mean test metrics of `params` on samples with ground truth.
pub fn evaluate_params(params: &ModelParams, set: &[Sample], long_side: [usize; 2]) -> Result<Summary> {
    let mut cases = Vec::with_capacity(set.len());
    for s in set {
        let gt = s
            .gt_mask
            .as_ref()
            .ok_or_else(|| Error::InvalidMask(format!("sample {} has no ground truth", s.id)))?;
        cases.push(prf_dice(&predict_mask(params, &s.image, long_side)?, gt)?);
    }
    summarize(&cases)
}

#[derive(Clone, Debug)]
pub struct RoundsOutput {
    pub params: ModelParams,
    /// Parameters at the end of every round, first to last.
    pub round_params: Vec<ModelParams>,
    pub history: TrainHistory,
    /// Training samples carrying the pseudo masks used in the last round.
    pub samples: Vec<Sample>,
}

/// Trains `cfg.rounds` rounds. Round one uses the ellipse pseudo masks; each
/// later round refines them with the previous round's predictions and then
/// trains again from freshly initialized parameters.
pub fn train_rounds(dataset: &[Sample], cfg: &TrainConfig, eval_set: Option<&[Sample]>) -> Result<RoundsOutput> {
    cfg.validate()?;
    let mut samples = dataset.to_vec();
    let mut history = TrainHistory::default();
    let mut round_params = Vec::with_capacity(cfg.rounds);
    for round in 1..=cfg.rounds {
        if let Some(prev) = round_params.last() {
            let mut changed = 0;
            for s in samples.iter_mut() {
                let p = predict(prev, &s.image, cfg.long_side)?;
                let u = update_pseudo_mask(&p, &s.ellipse_mask(), cfg.threshold)?;
                if !u.retain_previous && u.mask != s.pseudo {
                    s.pseudo = u.mask;
                    s.refined = true;
                    changed += 1;
                }
            }
            history.pseudo_updates.push(changed);
        } else {
            history.pseudo_updates.push(0);
        }
        let state = TrainState::fresh(cfg, round);
        let (state, h1) = train_stage(&samples, state, cfg, Stage::SegOnly)?;
        let (state, h2) = train_stage(&samples, state, cfg, Stage::SegPlusRls)?;
        for h in [h1, h2] {
            history.records.extend(h.records);
            history.warnings.extend(h.warnings);
        }
        if let Some(set) = eval_set {
            history
                .round_summaries
                .push((round, evaluate_params(&state.params, set, cfg.long_side)?));
        }
        round_params.push(state.params);
    }
    Ok(RoundsOutput {
        params: round_params.last().expect("at least one round").clone(),
        round_params,
        history,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imgcore::Label;
    use crate::model::ArchConfig;
    use crate::recist::RecistAnnotation;
    use crate::synthgen::{gen_dataset, SynthConfig};

    fn disk_sample() -> Sample {
        let img = GrayImage::from_fn(32, 32, |x, y| {
            if (x as f64 - 15.5).hypot(y as f64 - 15.5) < 8.0 {
                0.9
            } else {
                0.1
            }
        });
        let gt = img.threshold(0.5);
        let ann = RecistAnnotation::new(((8.0, 16.0), (24.0, 16.0)), ((16.0, 8.0), (16.0, 24.0)));
        Sample::from_annotation("disk", img, ann, Some(gt)).unwrap()
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 4,
            stage2_start: 2,
            decay_epochs: vec![3],
            rounds: 1,
            batch: 2,
            long_side: [32, 32],
            arch: ArchConfig {
                channels: 4,
                sa_enabled: true,
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn lr_schedule_steps_down() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_at(&cfg, 0), 1e-3);
        assert_eq!(lr_at(&cfg, 39), 1e-3);
        assert!((lr_at(&cfg, 40) - 1e-4).abs() < 1e-18);
        assert!((lr_at(&cfg, 79) - 1e-5).abs() < 1e-18);
    }

    #[test]
    fn easy_sample_loss_halves_in_200_steps() {
        let cfg = TrainConfig {
            epochs: 200,
            stage2_start: 200,
            decay_epochs: vec![],
            batch: 1,
            augment: None,
            ..small_cfg()
        };
        let data = [disk_sample()];
        let (_, h) = train_stage(&data, TrainState::fresh(&cfg, 1), &cfg, Stage::SegOnly).unwrap();
        assert_eq!(h.records.len(), 200);
        let first = h.records[0].mean_seg_loss;
        let last = h.records[199].mean_seg_loss;
        assert!(last <= 0.5 * first, "{first} -> {last}");
        assert!(h.records.iter().all(|r| r.mean_rls_loss == 0.0 && r.stage == 1));
    }

    #[test]
    fn stage_two_total_continues_stage_one() {
        let s = disk_sample();
        let cfg = small_cfg();
        let loss = cfg.loss_config();
        let params = init_params(3, cfg.arch);
        let (one, _) = sample_loss(&params, &s, &loss, None).unwrap();
        let (two, _) = sample_loss(&params, &s, &loss, Some(RlsRegion::Constrained)).unwrap();
        assert_eq!(one.seg, two.seg);
        assert!(two.rls > 0.0);
        assert!((two.total - (one.total + 0.1 * two.rls)).abs() < 1e-15);
        let (off, _) = sample_loss(&params, &s, &loss, Some(RlsRegion::Off)).unwrap();
        assert_eq!(off, one);
    }

    #[test]
    fn training_is_deterministic() {
        let data = gen_dataset(&SynthConfig::default(), 4).unwrap().samples;
        let cfg = TrainConfig {
            rounds: 2,
            ..small_cfg()
        };
        let a = train_rounds(&data, &cfg, Some(&data[..2])).unwrap();
        let b = train_rounds(&data, &cfg, Some(&data[..2])).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.history, b.history);
        assert_eq!(a.params.to_bytes(), b.params.to_bytes());
        assert_eq!(a.history.records.len(), 8);
        assert!(a
            .history
            .records
            .windows(2)
            .all(|w| (w[0].round, w[0].epoch) < (w[1].round, w[1].epoch)));
        assert_eq!(a.history.round_summaries.len(), 2);
    }

    #[test]
    fn single_round_matches_stage_pipeline() {
        let data = gen_dataset(&SynthConfig::default(), 3).unwrap().samples;
        let cfg = small_cfg();
        let out = train_rounds(&data, &cfg, None).unwrap();
        let (st, h1) = train_stage(&data, TrainState::fresh(&cfg, 1), &cfg, Stage::SegOnly).unwrap();
        let (st, h2) = train_stage(&data, st, &cfg, Stage::SegPlusRls).unwrap();
        assert_eq!(out.params, st.params);
        let records: Vec<_> = h1.records.into_iter().chain(h2.records).collect();
        assert_eq!(out.history.records, records);
        assert!(records[..2].iter().all(|r| r.mean_rls_loss == 0.0));
        assert!(records[2..].iter().all(|r| r.mean_rls_loss > 0.0 && r.stage == 2));
    }

    #[test]
    fn rounds_refine_some_pseudo_masks() {
        let data = gen_dataset(&SynthConfig::default(), 4).unwrap().samples;
        let cfg = TrainConfig {
            rounds: 2,
            epochs: 60,
            stage2_start: 40,
            decay_epochs: vec![],
            batch: 1,
            lr: 1e-2,
            augment: None,
            ..small_cfg()
        };
        let out = train_rounds(&data, &cfg, None).unwrap();
        assert!(out.history.pseudo_updates[1] >= 1);
        for s in &out.samples {
            // Foreground never leaves the ellipse.
            assert!(s.pseudo.foreground().is_subset_of(&s.ellipse_mask()));
            assert!(s
                .pseudo
                .data()
                .iter()
                .all(|l| matches!(l, Label::Foreground | Label::Background | Label::Ignore)));
        }
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let data = gen_dataset(&SynthConfig::default(), 4).unwrap().samples;
        let cfg = small_cfg();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let mut a = TrainState::fresh(&cfg, 1);
        let mut b = a.clone();
        run_epoch(&data, &mut a, &cfg, None, None).unwrap();
        run_epoch(&data, &mut b, &cfg, None, Some(&pool)).unwrap();
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn plateau_switch_ends_stage_one_early() {
        let cfg = TrainConfig {
            epochs: 60,
            stage2_start: 50,
            plateau_switch: true,
            batch: 1,
            augment: None,
            decay_epochs: vec![],
            lr: 1e-9,
            ..small_cfg()
        };
        let data = [disk_sample()];
        let (st, h) = train_stage(&data, TrainState::fresh(&cfg, 1), &cfg, Stage::SegOnly).unwrap();
        assert_eq!(st.epoch, 6);
        assert_eq!(h.records.len(), 6);
    }

    #[test]
    fn predict_handles_any_size() {
        let params = init_params(0, ArchConfig::default());
        let img = GrayImage::filled(30, 22, 0.3);
        let p = predict(&params, &img, [32, 64]).unwrap();
        assert_eq!(p.dims(), (30, 22));
        assert!(p.data().iter().all(|&v| (v - 0.5).abs() < 1e-12));
    }
}
