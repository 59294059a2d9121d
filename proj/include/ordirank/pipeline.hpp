#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ordirank/camroi.hpp"
#include "ordirank/checkpoint.hpp"
#include "ordirank/dataio.hpp"
#include "ordirank/models.hpp"

namespace ordirank {

enum class Method { kTwoStageRanking, kRanking, kFlat3Class };

std::string_view method_name(Method method);
Method parse_method(std::string_view name);

struct AugmentSettings {
  bool enabled = true;
  double zoom_limit = 0.125;
  double flip_prob = 0.5;
};

struct SynthSettings {
  int count = 600;
  int size = 64;
  double noise_sigma = 0.05;
};

struct RunConfig {
  std::uint64_t seed = 1;
  Method method = Method::kTwoStageRanking;
  ArchSpec stage1_arch;
  ArchSpec stage2_arch = [] {
    ArchSpec a;
    a.head = HeadKind::kGapFcBnDropout;
    return a;
  }();
  int epochs_stage1 = 20;
  int epochs_stage2 = 50;
  int batch_size = 16;
  double lr = 1e-4;
  double lr_decay = 0.9;
  double test_fraction = 0.2;
  double val_fraction = 0.15;
  AugmentSettings augment;
  std::string data_dir;  // empty: synthetic data
  SynthSettings synth;
  int threads = 0;  // 0: ORDIRANK_THREADS or hardware concurrency

  // Throws ConfigError.
  void validate() const;
};

// Worker count for concurrent sub-classifier training: config value, else the
// ORDIRANK_THREADS environment variable, else hardware concurrency.
int resolve_threads(int configured);

// ---------------------------------------------------------------------------
// Metrics

// Rows are actual ranks, columns predicted ranks.
using Confusion = std::array<std::array<std::size_t, kNumRanks>, kNumRanks>;

struct Metrics {
  double acc = 0.0;
  // Absent when the corresponding actual-class row is empty.
  std::optional<double> sp, se_s, se_g;
};

// acc = trace/total; sp, se_s, se_g = per-row recall of normal, suspicious, glaucoma.
// Throws ArgumentError on an all-zero matrix.
Metrics compute_metrics(const Confusion& confusion);

Confusion confusion_from(const std::vector<int>& actual, const std::vector<int>& predicted);

// ---------------------------------------------------------------------------
// Training

struct LossSeries {
  std::vector<double> train;
  std::vector<double> val;
};

// 1-based epoch of the minimum validation loss; earliest wins ties.
int select_best_epoch(std::span<const double> val_losses);

struct TrainSettings {
  int epochs = 20;
  int batch_size = 16;
  double lr = 1e-4;
  double lr_decay = 0.9;
  AugmentSettings augment;
  std::uint64_t seed = 0;  // shuffling, augmentation and dropout stream
};

struct TrainOutcome {
  Checkpoint best;
  LossSeries losses;
  int best_epoch = 0;
};

// Training target of `split` for a rank: the rank itself for kFlat, else the binarized bit.
int training_target(Split split, RankLabel label);

/**
 * Minibatch RMSprop over `epochs` epochs with lr_at_epoch(lr, epoch, lr_decay).
 * Each epoch shuffles and augments the training set, then measures the
 * un-augmented validation loss. Returns the parameters of the epoch with the
 * smallest validation loss. Throws DivergedError on a non-finite batch loss.
 */
TrainOutcome train_subclassifier(SubClassifier model, const Dataset& train, const Dataset& val,
                                 const TrainSettings& settings);

// Mean cross-entropy of `net` on `data` in eval mode.
double evaluate_loss(SubClassifier& net, const Dataset& data, int batch_size);

// ---------------------------------------------------------------------------
// Two-stage protocol

struct Stage1Image {
  std::string id;
  RankLabel predicted;
  FeatureTap normal_vs_rest;
  FeatureTap glaucoma_vs_rest;
};

struct Stage1Result {
  TrainOutcome normal_vs_rest;
  TrainOutcome glaucoma_vs_rest;
  std::vector<Stage1Image> train, val, test;
};

// Trains both GAP-softmax sub-classifiers, then runs the selected checkpoints over
// every split (un-augmented) to get predicted ranks and feature taps.
Stage1Result run_stage1(const RunConfig& config, const DatasetSplits& splits);

// Applies each image's predicted-class mask to the original. Output keeps the
// actual labels and ids. Throws ArgumentError when an image has no tap.
Dataset build_stage2_inputs(const std::vector<Stage1Image>& stage1, const Dataset& originals);

struct ImagePrediction {
  std::string id;
  int actual = 0;
  std::optional<int> stage1;
  int final_rank = 0;
};

struct NamedLoss {
  std::string name;  // "<stage>_<subclassifier>", e.g. stage1_N-SG
  LossSeries series;
};

struct EvalReport {
  Method method = Method::kTwoStageRanking;
  Confusion confusion{};
  Metrics metrics;
  std::vector<NamedLoss> losses;
  std::vector<ImagePrediction> predictions;
};

struct NamedCheckpoint {
  std::string name;  // file stem, e.g. stage2_NS-G
  Checkpoint checkpoint;
};

struct RunResult {
  EvalReport report;
  std::vector<NamedCheckpoint> checkpoints;
  Dataset test_inputs;  // what the final classifier saw for the test split (ROIs for two-stage)
};

// Loads (or generates) the dataset, resizes to the input size and splits it.
DatasetSplits prepare_data(const RunConfig& config);

RunResult run_method(const RunConfig& config, const DatasetSplits& splits);
EvalReport run_full(const RunConfig& config);

// Evaluates already trained checkpoints (as produced by run_method) on the test split.
EvalReport evaluate_checkpoints(const RunConfig& config, const DatasetSplits& splits,
                                std::vector<NamedCheckpoint> checkpoints);

}  // namespace ordirank
