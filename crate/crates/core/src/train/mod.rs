//! Training loop, evaluation and the command implementations behind the CLI.

mod checkpoint;
mod config;
mod optim;

pub use checkpoint::{Checkpoint, MAGIC, VERSION};
pub use config::{parse_size, TrainConfig};
pub use optim::{cosine_lr, Adam};

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::blocks::DpsNet;
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::loss::{dilate_boundary, total_loss, LossReport};
use crate::metrics::{self, MetricsReport};
use crate::nn::{Ctx, ParamStore};
use crate::rng::substream;
use crate::tensor::{Scalar, Tape, Tensor};

pub const LOG_HEADER: &str = "epoch,step,lr,wbce,wiou,bbce,total";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const LOG_FILE: &str = "train_log.csv";

/// Stream label for per-epoch shuffling and flips.
const EPOCH_STREAM: u64 = 0x5348_5546;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLog {
    pub epoch: usize,
    /// 1-based count of optimizer updates.
    pub step: usize,
    pub lr: Scalar,
    /// Batch mean.
    pub loss: LossReport,
}

impl StepLog {
    pub fn csv_line(&self) -> String {
        let l = &self.loss;
        format!(
            "{},{},{:e},{},{},{},{}",
            self.epoch, self.step, self.lr, l.mask_wbce, l.mask_wiou, l.boundary_bce, l.total
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochSummary {
    pub epoch: usize,
    /// Mean of the epoch's step losses.
    pub mean: LossReport,
}

/// Network, weights and optimizer state for one run.
pub struct Trainer {
    pub config: TrainConfig,
    pub net: DpsNet,
    pub params: ParamStore,
    pub adam: Adam,
    total_steps: usize,
}

impl Trainer {
    /// `dataset_len` fixes the length of the learning-rate schedule.
    pub fn new(config: TrainConfig, dataset_len: usize) -> Result<Self> {
        config.validate()?;
        let (net, params) = DpsNet::new(config.net.clone(), config.seed)?;
        let adam = Adam::new(params.tensors(), config.adam_beta1, config.adam_beta2, config.adam_eps);
        let total_steps = config.epochs * config.steps_per_epoch(dataset_len);
        Ok(Trainer {
            config,
            net,
            params,
            adam,
            total_steps,
        })
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::new(&self.config, &self.params, &self.adam)
    }

    /// Loss and parameter gradients for one (optionally mirrored) sample.
    pub fn sample_gradients(&self, sample: &Sample, flip: bool) -> Result<(Vec<Tensor>, LossReport)> {
        let owned;
        let sample = if flip {
            owned = sample.hflip();
            &owned
        } else {
            sample
        };
        let (h, w) = sample.size();
        let tape = Tape::new();
        let ctx = Ctx::train(&tape, &self.params);
        let image = tape.constant(sample.image.clone());
        let out = self.net.forward(&ctx, image)?;
        let boundary = match out.boundary {
            Some(b) => Some(tape.upsample_bilinear(b, h, w)?),
            None => None,
        };
        let boundary_gt = dilate_boundary(&sample.boundary, self.config.boundary_dilation_radius);
        let (loss, report) = total_loss(&tape, out.mask, &sample.mask, boundary, &boundary_gt)?;
        let grads = tape.backward(loss)?;
        Ok((ctx.param_grads(&grads), report))
    }

    /// One Adam update on the batch mean. Samples run in parallel; gradients
    /// are summed in batch order, so results do not depend on the thread count.
    pub fn step(&mut self, epoch: usize, batch: &[(&Sample, bool)]) -> Result<StepLog> {
        if batch.is_empty() {
            return Err(Error::invalid("train step", "empty batch"));
        }
        let results: Vec<(Vec<Tensor>, LossReport)> = batch
            .par_iter()
            .map(|&(s, flip)| self.sample_gradients(s, flip))
            .collect::<Result<_>>()?;
        let scale = 1.0 / batch.len() as Scalar;
        let mut report = LossReport::default();
        let mut sum: Vec<Tensor> = self.params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        for (grads, r) in &results {
            report.accumulate(r);
            for (acc, g) in sum.iter_mut().zip(grads) {
                for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += b;
                }
            }
        }
        for g in &mut sum {
            g.data_mut().iter_mut().for_each(|v| *v *= scale);
        }
        let lr = cosine_lr(self.adam.step as usize, self.total_steps, self.config.lr_start, self.config.lr_end);
        self.adam.update(self.params.tensors_mut(), &sum, lr)?;
        Ok(StepLog {
            epoch,
            step: self.adam.step as usize,
            lr,
            loss: report.scaled(scale),
        })
    }

    /// Shuffles, draws flips and runs every batch of one epoch.
    pub fn epoch(&mut self, epoch: usize, data: &[Sample], mut on_step: impl FnMut(&StepLog) -> Result<()>) -> Result<EpochSummary> {
        let mut rng = substream(self.config.seed ^ EPOCH_STREAM, epoch as u64);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng);
        let items: Vec<(&Sample, bool)> = order
            .iter()
            .map(|&i| (&data[i], self.config.hflip && rng.gen_bool(0.5)))
            .collect();
        let mut mean = LossReport::default();
        let mut steps = 0;
        for batch in items.chunks(self.config.batch_size) {
            let log = self.step(epoch, batch)?;
            on_step(&log)?;
            mean.accumulate(&log.loss);
            steps += 1;
        }
        Ok(EpochSummary {
            epoch,
            mean: mean.scaled(1.0 / steps.max(1) as Scalar),
        })
    }
}

fn check_sizes(config: &TrainConfig, data: &[Sample]) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let want = config.net.input_size;
    match data.iter().position(|s| s.size() != want) {
        Some(i) => Err(Error::Config(format!(
            "sample {i} is {:?}, network input is {want:?}",
            data[i].size()
        ))),
        None => Ok(()),
    }
}

pub struct TrainOutcome {
    pub trainer: Trainer,
    pub epochs: Vec<EpochSummary>,
}

/// Full run. With `out` set, writes `train_log.csv` (header plus one line per
/// step) and rewrites `checkpoint.bin` after every epoch; with zero epochs the
/// checkpoint holds the initial weights.
pub fn train(config: &TrainConfig, data: &[Sample], out: Option<&Path>) -> Result<TrainOutcome> {
    check_sizes(config, data)?;
    let mut trainer = Trainer::new(config.clone(), data.len())?;
    let mut log = match out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join(LOG_FILE);
            let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
            let mut w = BufWriter::new(file);
            writeln!(w, "{LOG_HEADER}").map_err(|e| Error::io(&path, e))?;
            Some((w, path))
        }
        None => None,
    };
    let save = |trainer: &Trainer| -> Result<()> {
        match out {
            Some(dir) => trainer.checkpoint().save(dir.join(CHECKPOINT_FILE)),
            None => Ok(()),
        }
    };
    save(&trainer)?;
    let mut epochs = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let summary = trainer.epoch(epoch, data, |step| {
            if let Some((w, path)) = log.as_mut() {
                writeln!(w, "{}", step.csv_line()).and_then(|_| w.flush()).map_err(|e| Error::io(path.as_path(), e))?;
            }
            Ok(())
        })?;
        log::info!("epoch {epoch}: loss {:.5}", summary.mean.total);
        epochs.push(summary);
        save(&trainer)?;
    }
    Ok(TrainOutcome { trainer, epochs })
}

/// Metrics of the network's mask prediction for every sample, in order.
pub fn evaluate(net: &DpsNet, params: &ParamStore, data: &[Sample]) -> Result<Vec<MetricsReport>> {
    data.par_iter()
        .map(|s| {
            let (mask, _) = net.predict(params, &s.image)?;
            metrics::evaluate(&mask, &s.mask)
        })
        .collect()
}

/// `image,mae,s_measure,e_measure,weighted_f` rows, then a `mean` row.
pub fn write_metrics_csv(path: &Path, names: &[String], reports: &[MetricsReport]) -> Result<()> {
    let mut text = String::from("image,mae,s_measure,e_measure,weighted_f\n");
    let row = |name: &str, r: &MetricsReport| format!("{name},{},{},{},{}\n", r.mae, r.s_measure, r.e_measure, r.weighted_f);
    for (name, r) in names.iter().zip(reports) {
        text.push_str(&row(name, r));
    }
    if let Some(mean) = MetricsReport::mean(reports) {
        text.push_str(&row("mean", &mean));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Image stems of a dataset directory, in load order.
pub fn dataset_names(root: &Path) -> Result<Vec<String>> {
    let images: PathBuf = root.join("images");
    let mut names: Vec<String> = fs::read_dir(&images)
        .map_err(|e| Error::io(&images, e))?
        .filter_map(|e| e.ok()?.file_name().into_string().ok())
        .filter_map(|n| n.strip_suffix(".ppm").map(str::to_string))
        .collect();
    names.sort();
    Ok(names)
}
