//! The training loop, evaluation, history, and checkpoints.
//!
//! [`train_loop`] runs plain SGD epochs over an in-memory dataset.
//! Batch assembly (shuffling, stacking, optional crop augmentation)
//! happens on a producer thread feeding a bounded channel, so the
//! next batch is built while the current one is computing; all
//! randomness on that thread comes from streams seeded by `(seed,
//! epoch)`, which keeps runs bit-reproducible regardless of thread
//! timing.
//!
//! Checkpoints are a single little-endian binary file:
//!
//! ```text
//! magic  b"SHIFTNET"                      8 bytes
//! version u32                             currently 1
//! config_len u32, config TOML text        the network description
//! buf_count u32
//! per buffer: len u32, then len f32 values
//! ```
//!
//! Buffers appear in parameter-registry order followed by each
//! batchnorm state's running mean and running variance, so a loaded
//! network evaluates exactly like the one that was saved.

use std::io::Write as _;
use std::path::Path;
use std::sync::mpsc::sync_channel;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{make_batches, random_resized_crop, Batch, Dataset};
use crate::error::{Error, Result};
use crate::graph::{Mode, Network};
use crate::layers::{softmax_xent, softmax_xent_backward};
use crate::netspec::config::{parse_config, render_config};
use crate::netspec::{build, NetworkSpec};
use crate::optim::{step_lr, Sgd, SgdConfig};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Epochs between 10x learning rate drops; 0 disables the
    /// schedule.
    pub lr_step_epochs: usize,
    pub seed: u64,
    /// Apply a random resized crop to every training image.
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            epochs: 10,
            batch_size: 16,
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 1e-4,
            lr_step_epochs: 0,
            seed: 0,
            augment: false,
        }
    }
}

/// Scalars describing one finished epoch; loss and accuracy are
/// averaged over the whole dataset.
#[derive(Clone, Copy, Debug)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
    pub lr: f64,
}

fn augment_batch(batch: &mut Batch, min_area: f64, rng: &mut ChaCha8Rng) -> Result<()> {
    let (images, _) = batch;
    let s = images.shape();
    let plane = s.c * s.h * s.w;
    let row_shape = Shape::new(1, s.c, s.h, s.w);
    for bi in 0..s.n {
        let row =
            Tensor::from_vec(row_shape, images.data()[bi * plane..(bi + 1) * plane].to_vec())?;
        let cropped = random_resized_crop(&row, min_area, rng)?;
        images.data_mut()[bi * plane..(bi + 1) * plane].copy_from_slice(cropped.data());
    }
    Ok(())
}

/// Number of correct argmax predictions in one batch of logits.
fn count_correct(logits: &Tensor<f32>, labels: &[usize]) -> usize {
    let s = logits.shape();
    let mut correct = 0;
    for (bi, &label) in labels.iter().enumerate() {
        let row = &logits.data()[bi * s.c..(bi + 1) * s.c];
        let mut best = 0;
        for (k, v) in row.iter().enumerate() {
            if *v > row[best] {
                best = k;
            }
        }
        if best == label {
            correct += 1;
        }
    }
    correct
}

/// Runs `cfg.epochs` epochs of SGD on `net`, calling `on_epoch` after
/// each one. Returns the per-epoch statistics.
pub fn train_loop(
    net: &mut Network<f32>,
    data: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<Vec<EpochStats>> {
    if cfg.epochs == 0 {
        return Ok(Vec::new());
    }
    let mut sgd = Sgd::new(
        &net.params,
        SgdConfig {
            momentum: cfg.momentum,
            weight_decay: cfg.weight_decay,
        },
    );
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = step_lr(cfg.learning_rate, epoch, cfg.lr_step_epochs);
        let mut total_loss = 0.0;
        let mut total_correct = 0usize;

        // Producer thread assembles batches one epoch at a time; the
        // bounded channel keeps at most two batches in flight.
        std::thread::scope(|scope| -> Result<()> {
            let (tx, rx) = sync_channel::<Result<Batch>>(2);
            let augment = cfg.augment;
            let seed = cfg.seed;
            scope.spawn(move || {
                let batches = match make_batches(data, cfg.batch_size, seed, epoch) {
                    Ok(b) => b,
                    Err(e) => {
                        let _ = tx.send(Err(e));
                        return;
                    }
                };
                let mut aug_rng = ChaCha8Rng::seed_from_u64(
                    seed ^ 0x5de1_a351_0c55_7a97 ^ (epoch as u64).rotate_left(17),
                );
                for mut batch in batches {
                    if augment {
                        if let Err(e) = augment_batch(&mut batch, 0.5, &mut aug_rng) {
                            let _ = tx.send(Err(e));
                            return;
                        }
                    }
                    if tx.send(Ok(batch)).is_err() {
                        return;
                    }
                }
            });
            for received in rx {
                let (images, labels) = received?;
                let trace = net.forward(&images, Mode::Train)?;
                let (loss, probs) = softmax_xent(trace.output(), &labels)?;
                let dlogits = softmax_xent_backward(&probs, &labels)?;
                net.zero_grads();
                net.backward(&trace, &dlogits)?;
                sgd.step(&mut net.params, lr);
                total_loss += loss * labels.len() as f64;
                total_correct += count_correct(trace.output(), &labels);
            }
            Ok(())
        })?;

        let stats = EpochStats {
            epoch,
            loss: total_loss / data.len() as f64,
            accuracy: total_correct as f64 / data.len() as f64,
            lr,
        };
        on_epoch(&stats);
        history.push(stats);
    }
    Ok(history)
}

/// Average loss and accuracy over `data` in evaluation mode (running
/// batchnorm statistics, no parameter updates).
pub fn evaluate(net: &mut Network<f32>, data: &Dataset, batch_size: usize) -> Result<(f64, f64)> {
    let mut total_loss = 0.0;
    let mut total_correct = 0usize;
    // Epoch index pins the shuffle; order does not matter for
    // averages, but determinism keeps logs stable.
    for (images, labels) in make_batches(data, batch_size, 0, 0)? {
        let trace = net.forward(&images, Mode::Eval)?;
        let (loss, _) = softmax_xent(trace.output(), &labels)?;
        total_loss += loss * labels.len() as f64;
        total_correct += count_correct(trace.output(), &labels);
    }
    Ok((
        total_loss / data.len() as f64,
        total_correct as f64 / data.len() as f64,
    ))
}

/// Renders history as CSV with an `epoch,loss,accuracy,lr` header.
pub fn history_csv(history: &[EpochStats]) -> String {
    let mut out = String::from("epoch,loss,accuracy,lr\n");
    for s in history {
        out.push_str(&format!("{},{},{},{}\n", s.epoch, s.loss, s.accuracy, s.lr));
    }
    out
}

pub fn write_history(path: &Path, history: &[EpochStats]) -> Result<()> {
    std::fs::write(path, history_csv(history))?;
    Ok(())
}

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SHIFTNET";
pub const CHECKPOINT_VERSION: u32 = 1;

/// All persistent buffers of a network, in checkpoint order.
fn buffer_lens(net: &Network<f32>) -> Vec<usize> {
    net.params
        .entries()
        .iter()
        .map(|e| e.value.len())
        .chain(net.bn_buffers().iter().flat_map(|b| {
            [b.running_mean.len(), b.running_var.len()]
        }))
        .collect()
}

/// Saves the spec and every persistent buffer of `net`.
pub fn save_checkpoint(path: &Path, spec: &NetworkSpec, net: &Network<f32>) -> Result<()> {
    let config = render_config(spec);
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    file.write_all(CHECKPOINT_MAGIC)?;
    file.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    let config_bytes = config.as_bytes();
    file.write_all(&(config_bytes.len() as u32).to_le_bytes())?;
    file.write_all(config_bytes)?;
    let count = buffer_lens(net).len() as u32;
    file.write_all(&count.to_le_bytes())?;
    let mut write_buffer = |values: &[f32]| -> Result<()> {
        file.write_all(&(values.len() as u32).to_le_bytes())?;
        for v in values {
            file.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    };
    for e in net.params.entries() {
        write_buffer(&e.value)?;
    }
    for b in net.bn_buffers() {
        write_buffer(&b.running_mean)?;
        write_buffer(&b.running_var)?;
    }
    file.flush()?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint(format!(
                "file ends inside {what} (offset {})",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }
}

/// Loads a checkpoint: rebuilds the network from the embedded spec
/// and restores every buffer.
pub fn load_checkpoint(path: &Path) -> Result<(NetworkSpec, Network<f32>)> {
    let bytes = std::fs::read(path)?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
    };
    let magic = r.take(8, "magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let config_len = r.u32("config length")? as usize;
    let config = std::str::from_utf8(r.take(config_len, "config")?)
        .map_err(|_| Error::Checkpoint("config is not UTF-8".into()))?;
    let spec = parse_config(config)?;
    // Initialization is immediately overwritten, so the seed is
    // irrelevant; zero keeps loading deterministic anyway.
    let mut net: Network<f32> = build(&spec, 0)?;
    let expected = buffer_lens(&net);
    let count = r.u32("buffer count")? as usize;
    if count != expected.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {count} buffers, the network needs {}",
            expected.len()
        )));
    }
    let mut buffers: Vec<Vec<f32>> = Vec::with_capacity(count);
    for (i, want_len) in expected.iter().enumerate() {
        let len = r.u32("buffer length")? as usize;
        if len != *want_len {
            return Err(Error::Checkpoint(format!(
                "buffer {i} holds {len} values, the network needs {want_len}"
            )));
        }
        let raw = r.take(4 * len, "buffer values")?;
        buffers.push(
            raw.chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        );
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after the last buffer",
            bytes.len() - r.pos
        )));
    }
    let mut it = buffers.into_iter();
    for e in net.params.entries_mut() {
        e.value = it.next().expect("counted above");
    }
    for b in net.bn_buffers_mut() {
        b.running_mean = it.next().expect("counted above");
        b.running_var = it.next().expect("counted above");
    }
    Ok((spec, net))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::BlockKind;
    use crate::data::synthetic_dataset;
    use crate::netspec::{HeadSpec, InputSpec, StageSpec};
    use crate::shift::NeighborhoodKind;

    fn tiny_spec() -> NetworkSpec {
        NetworkSpec {
            name: "train-tiny".into(),
            kind: BlockKind::MultiShift,
            neighborhood: NeighborhoodKind::FourConnected,
            input: InputSpec {
                channels: 2,
                height: 8,
                width: 8,
            },
            stem: None,
            stages: vec![StageSpec {
                out_channels: 8,
                repeats: 1,
                downsample: false,
            }],
            head: HeadSpec { classes: 2 },
        }
    }

    fn tiny_setup(seed: u64) -> (Network<f32>, crate::data::Dataset) {
        let net = build(&tiny_spec(), seed).unwrap();
        let data = synthetic_dataset(2, 8, 2, 8, 8, 0.15, seed + 100).unwrap();
        (net, data)
    }

    #[test]
    fn training_is_bit_reproducible() {
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 4,
            learning_rate: 0.05,
            ..TrainConfig::default()
        };
        let run = || {
            let (mut net, data) = tiny_setup(1);
            let history = train_loop(&mut net, &data, &cfg, |_| {}).unwrap();
            let bits: Vec<u32> = net
                .params
                .entries()
                .iter()
                .flat_map(|e| e.value.iter().map(|v| v.to_bits()))
                .collect();
            (history, bits)
        };
        let (ha, ba) = run();
        let (hb, bb) = run();
        assert_eq!(ba, bb, "parameters diverged between identical runs");
        for (a, b) in ha.iter().zip(&hb) {
            assert_eq!(a.loss.to_bits(), b.loss.to_bits());
            assert_eq!(a.accuracy, b.accuracy);
        }
    }

    #[test]
    fn augmented_training_is_also_reproducible() {
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 4,
            learning_rate: 0.05,
            augment: true,
            ..TrainConfig::default()
        };
        let run = || {
            let (mut net, data) = tiny_setup(2);
            train_loop(&mut net, &data, &cfg, |_| {})
                .unwrap()
                .iter()
                .map(|s| s.loss.to_bits())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn easy_synthetic_data_is_learned() {
        let (mut net, data) = tiny_setup(3);
        let cfg = TrainConfig {
            epochs: 60,
            batch_size: 8,
            learning_rate: 0.1,
            ..TrainConfig::default()
        };
        let history = train_loop(&mut net, &data, &cfg, |_| {}).unwrap();
        let first = history.first().unwrap();
        let last = history.last().unwrap();
        assert!(
            last.loss < first.loss * 0.5,
            "loss went {} -> {}",
            first.loss,
            last.loss
        );
        assert!(last.accuracy >= 0.95, "accuracy {}", last.accuracy);
        // Evaluation mode sees the same data through running stats.
        let (_, eval_acc) = evaluate(&mut net, &data, 8).unwrap();
        assert!(eval_acc >= 0.9, "eval accuracy {eval_acc}");
    }

    #[test]
    fn learning_rate_schedule_is_recorded_in_history() {
        let (mut net, data) = tiny_setup(4);
        let cfg = TrainConfig {
            epochs: 4,
            batch_size: 8,
            learning_rate: 0.1,
            lr_step_epochs: 2,
            ..TrainConfig::default()
        };
        let history = train_loop(&mut net, &data, &cfg, |_| {}).unwrap();
        let lrs: Vec<f64> = history.iter().map(|s| s.lr).collect();
        assert_eq!(lrs, vec![0.1, 0.1, 0.010000000000000002, 0.010000000000000002]);
    }

    #[test]
    fn history_csv_has_header_and_one_line_per_epoch() {
        let history = vec![
            EpochStats {
                epoch: 0,
                loss: 0.75,
                accuracy: 0.5,
                lr: 0.1,
            },
            EpochStats {
                epoch: 1,
                loss: 0.5,
                accuracy: 0.75,
                lr: 0.1,
            },
        ];
        let csv = history_csv(&history);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], "epoch,loss,accuracy,lr");
        assert_eq!(lines[1], "0,0.75,0.5,0.1");
        assert_eq!(lines[2], "1,0.5,0.75,0.1");
    }

    #[test]
    fn checkpoint_round_trip_preserves_behavior_bit_for_bit() {
        let (mut net, data) = tiny_setup(5);
        // Train a little so running stats and parameters have moved.
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 4,
            learning_rate: 0.05,
            ..TrainConfig::default()
        };
        train_loop(&mut net, &data, &cfg, |_| {}).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        save_checkpoint(&path, &tiny_spec(), &net).unwrap();
        let (spec2, mut net2) = load_checkpoint(&path).unwrap();
        assert_eq!(spec2, tiny_spec());
        let x = data.samples()[0].image.clone();
        let ya = net.forward(&x, Mode::Eval).unwrap().output().clone();
        let yb = net2.forward(&x, Mode::Eval).unwrap().output().clone();
        assert_eq!(ya, yb);
    }

    #[test]
    fn corrupt_checkpoints_are_rejected() {
        let (net, _) = tiny_setup(6);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        save_checkpoint(&path, &tiny_spec(), &net).unwrap();
        let good = std::fs::read(&path).unwrap();

        // Bad magic.
        let mut bad = good.clone();
        bad[0] = b'X';
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(Error::Checkpoint(_))
        ));

        // Unsupported version.
        let mut bad = good.clone();
        bad[8] = 99;
        std::fs::write(&path, &bad).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");

        // Truncation inside a buffer.
        let bad = &good[..good.len() - 3];
        std::fs::write(&path, bad).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("ends inside"), "{err}");

        // Trailing garbage.
        let mut bad = good.clone();
        bad.extend_from_slice(&[0, 1, 2]);
        std::fs::write(&path, &bad).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("trailing"), "{err}");
    }

    #[test]
    fn zero_epochs_is_a_no_op() {
        let (mut net, data) = tiny_setup(7);
        let before: Vec<u32> = net
            .params
            .entries()
            .iter()
            .flat_map(|e| e.value.iter().map(|v| v.to_bits()))
            .collect();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let history = train_loop(&mut net, &data, &cfg, |_| {}).unwrap();
        assert!(history.is_empty());
        let after: Vec<u32> = net
            .params
            .entries()
            .iter()
            .flat_map(|e| e.value.iter().map(|v| v.to_bits()))
            .collect();
        assert_eq!(before, after);
    }
}
