#pragma once

// Optimization loop, checkpoints and the experiment suite.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "lsn/config.hpp"
#include "lsn/dataset.hpp"
#include "lsn/evaluation.hpp"
#include "lsn/model.hpp"

namespace lsn {

struct AdamConfig {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// First and second moments per parameter, in ParameterStore order.
struct AdamState {
  std::uint64_t step = 0;
  std::vector<std::vector<Scalar>> m, v;

  void reset(const ParameterStore& params);
};

/// One Adam update with bias correction and decoupled weight decay, reading
/// each parameter's accumulated gradient (missing gradients count as zero).
/// Throws ValueError naming the first parameter with a non-finite gradient.
void adam_step(ParameterStore& params, AdamState& state, const AdamConfig& cfg);

/// Scales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
double clip_grad_norm(ParameterStore& params, double max_norm);
double grad_norm(const ParameterStore& params);

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::uint64_t config_hash = 0;
  std::uint64_t epoch = 0;
  std::uint64_t step = 0;
  double wall_seconds = 0;
  std::string rng_state;
  std::uint64_t adam_step = 0;
  struct Entry {
    std::string name;
    Shape shape;
    std::vector<Scalar> value, m, v;
    friend bool operator==(const Entry&, const Entry&) = default;
  };
  std::vector<Entry> tensors;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

/// Little-endian binary, length-prefixed named tensors. Writes go to a
/// temporary file that is renamed into place.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);
std::filesystem::path checkpoint_path(const std::filesystem::path& dir, std::uint64_t epoch);

struct StepRecord {
  std::uint64_t step = 0;
  std::uint64_t epoch = 0;
  LossBreakdown loss;
  double wall_ms = 0;
};

struct EpochRecord {
  std::uint64_t epoch = 0;
  double seconds = 0;
  double mean_loss = 0;
  double step_ms_sum = 0;
};

struct TrainLog {
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;
};

struct TrainOptions {
  // Write checkpoints and the CSV logs under cfg.checkpoint_dir.
  bool write_files = true;
  // Resume diagnostics: start from fresh optimizer moments, or reseed the
  // shuffling RNG, instead of the saved state.
  bool drop_optimizer_state = false;
  bool drop_rng_state = false;
  std::function<void(const StepRecord&)> on_step;
  std::function<void(const EpochRecord&)> on_epoch;
};

/// Model, optimizer and data-order state of a run.
class Trainer {
 public:
  /// Fresh parameters from cfg.seed.
  explicit Trainer(const ExperimentConfig& cfg);
  /// Restores a checkpoint; its config hash must equal cfg.hash().
  Trainer(const ExperimentConfig& cfg, const Checkpoint& ckpt, const TrainOptions& opts = {});

  /// Trains until `cfg.epochs` epochs have completed in total.
  TrainLog run(const std::vector<Scene>& data, const TrainOptions& opts = {});

  /// One optimizer step over `batch`; returns the mean loss.
  LossBreakdown step(const std::vector<const Scene*>& batch);

  /// Loss of one scene without updating anything.
  LossBreakdown scene_loss(const Scene& scene) const;

  Checkpoint checkpoint() const;

  LaneSegModel& model() { return *model_; }
  const LaneSegModel& model() const { return *model_; }
  const ExperimentConfig& config() const { return cfg_; }
  std::uint64_t epoch() const { return epoch_; }
  std::uint64_t global_step() const { return step_; }

 private:
  double current_lr() const;

  ExperimentConfig cfg_;
  std::unique_ptr<LaneSegModel> model_;
  AdamState adam_;
  Rng rng_;
  std::uint64_t epoch_ = 0, step_ = 0;
  double wall_seconds_ = 0;
};

/// Fresh run of cfg.epochs epochs.
TrainLog train(const ExperimentConfig& cfg, const std::vector<Scene>& data, const TrainOptions& opts = {});

/// Continues the run stored at `ckpt_path` until cfg.epochs.
TrainLog resume(const std::filesystem::path& ckpt_path, const ExperimentConfig& cfg,
                const std::vector<Scene>& data, const TrainOptions& opts = {});

/// Final-layer predictions of `model` for every scene.
std::vector<ScenePredictions> predict_dataset(const LaneSegModel& model, const std::vector<Scene>& scenes);

struct SuiteRow {
  std::string preset;
  std::uint64_t epochs = 0;
  double sec_per_epoch = 0;
  double map = 0;
};

/// Trains each preset from the same seed on `train_set` and evaluates on
/// `eval_set`.
std::vector<SuiteRow> run_experiment_suite(const ExperimentConfig& base, const std::vector<std::string>& presets,
                                           const std::vector<Scene>& train_set, const std::vector<Scene>& eval_set,
                                           const std::function<void(const SuiteRow&)>& on_row = {});

std::string format_suite_table(const std::vector<SuiteRow>& rows);

}  // namespace lsn
