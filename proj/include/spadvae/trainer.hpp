#pragma once

// Background-only training: deterministic dataset splitting, the epoch/batch
// loop with scheduled lr and KL weight, per-iteration metric logging, and
// binary checkpoints that allow bit-identical resumption.

#include "spadvae/datagen.hpp"
#include "spadvae/optim.hpp"
#include "spadvae/vae.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace spadvae {

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 256;
  double base_lr = 1e-3;
  std::array<double, 3> split = {0.60, 0.10, 0.30}; // train / val / test
  std::uint64_t seed = 0;
  ModelConfig model;

  // Schedule shape (warmup length and total length are derived from the
  // data volume: warmup spans exactly the first epoch).
  double eta_min = 0.0;
  std::size_t beta_cycles = 5;
  double ramp_fraction = 0.5;
  double sigmoid_steepness = 6.0;
  AdamW::Hyper adamw;

  void validate() const;
};

struct SplitIndices {
  std::vector<std::size_t> train, val, test;
};

// Deterministic shuffled partition; sizes are floor allocations of the
// ratios with the remainder assigned to the training split.
SplitIndices split_dataset(std::size_t n_frames,
                           const std::array<double, 3>& ratios,
                           std::uint64_t seed);

struct MetricRecord {
  std::size_t iter = 0;
  std::size_t epoch = 0;
  double lr = 0.0;
  double beta = 0.0;
  double train_bce = 0.0;
  double train_kld = 0.0;
  bool has_val = false; // set on the last record of each epoch
  double val_bce = 0.0;
  double val_kld = 0.0;
};

struct Checkpoint {
  ModelConfig model;
  Parameters params;
  std::vector<double> adam_m, adam_v;
  std::uint64_t adam_t = 0;
  std::uint64_t iter = 0; // completed training iterations
  std::uint64_t seed = 0; // root seed for all derived RNG streams
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<MetricRecord> metrics;
};

std::size_t iters_per_epoch(std::size_t n_train, std::size_t batch_size);

// Runs the training loop over frames[train_idx], validating on
// frames[val_idx] at each epoch end (noise-free encoder pass). The lr/beta
// schedules always span the full cfg.epochs horizon; `stop_after_epochs`
// (when nonzero) ends this call early, at an epoch boundary, so the run can
// be checkpointed and resumed. When `resume` is given, training continues
// from its iteration counter and optimizer state; a stopped-and-resumed run
// is bit-identical to an uninterrupted one.
TrainResult train(const std::vector<Frame>& frames,
                  const std::vector<std::size_t>& train_idx,
                  const std::vector<std::size_t>& val_idx,
                  const TrainConfig& cfg, const Checkpoint* resume = nullptr,
                  std::size_t stop_after_epochs = 0);

// The schedule the loop uses, exposed so logged lr/beta can be checked
// against the pure schedule functions.
ScheduleConfig training_schedule(const TrainConfig& cfg, std::size_t n_train);

// Binary checkpoint round-trip. Parameters travel as little-endian f32 (the
// training loop keeps parameters on the f32 grid, so this is lossless);
// optimizer moments travel as f64. A trailing checksum covers every
// preceding byte.
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// Exact on-disk size of a checkpoint for the given architecture.
std::size_t checkpoint_byte_size(const ModelConfig& model);

// Metrics CSV: header iter,epoch,lr,beta,train_bce,train_kld,val_bce,val_kld
// with val fields filled only on epoch-final rows.
std::string render_metrics_csv(const std::vector<MetricRecord>& records);
void write_metrics_csv(const std::string& path,
                       const std::vector<MetricRecord>& records);

} // namespace spadvae
