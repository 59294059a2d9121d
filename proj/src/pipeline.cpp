#include "ordirank/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <future>
#include <iostream>
#include <limits>
#include <map>
#include <numeric>
#include <thread>

#include "ordirank/ensemble.hpp"

namespace ordirank {

namespace {

// Seed streams. Every model gets an init stream and a training stream so that
// runs are reproducible whether sub-classifiers train sequentially or concurrently.
enum Stream : std::uint64_t {
  kStage1NormalVsRest = 1,
  kStage1GlaucomaVsRest = 2,
  kStage2NormalVsRest = 3,
  kStage2GlaucomaVsRest = 4,
  kSingleNormalVsRest = 5,
  kSingleGlaucomaVsRest = 6,
  kSingleFlat = 7,
  kTrainOffset = 100,
  kSplitStream = 1000,
};

std::uint64_t init_seed(const RunConfig& config, Stream stream) { return mix_seed(config.seed, stream); }
std::uint64_t train_seed(const RunConfig& config, Stream stream) {
  return mix_seed(config.seed, kTrainOffset + stream);
}

TrainSettings settings_for(const RunConfig& config, int epochs, Stream stream) {
  TrainSettings s;
  s.epochs = epochs;
  s.batch_size = config.batch_size;
  s.lr = config.lr;
  s.lr_decay = config.lr_decay;
  s.augment = config.augment;
  s.seed = train_seed(config, stream);
  return s;
}

std::pair<TrainOutcome, TrainOutcome> train_two(const std::function<TrainOutcome()>& first,
                                                const std::function<TrainOutcome()>& second, int threads) {
  if (threads >= 2) {
    auto fut = std::async(std::launch::async, second);
    TrainOutcome a = first();
    return {std::move(a), fut.get()};
  }
  TrainOutcome a = first();
  TrainOutcome b = second();
  return {std::move(a), std::move(b)};
}

void fill_batch(const Dataset& data, std::span<const std::size_t> idx, Split split, const AugmentSettings* augment,
                Rng* rng, Tensor& batch, std::vector<int>& targets) {
  const Shape& first = data[idx[0]].pixels.shape();
  const std::size_t per = shape_numel(first);
  batch = Tensor(Shape{idx.size(), first[0], first[1], first[2]});
  targets.resize(idx.size());
  auto dst = batch.mutable_data();
  for (std::size_t b = 0; b < idx.size(); ++b) {
    const LabeledImage& item = data[idx[b]];
    if (item.pixels.shape() != first) throw DimensionError("batch: image " + item.id + " has a different shape");
    Tensor px = item.pixels;
    if (augment != nullptr && augment->enabled) {
      px = ordirank::augment(item, *rng, augment->zoom_limit, augment->flip_prob).pixels;
    }
    std::copy(px.data().begin(), px.data().end(), dst.begin() + static_cast<std::ptrdiff_t>(b * per));
    targets[b] = training_target(split, item.label);
  }
}

std::vector<Stage1Image> stage1_pass(SubClassifier& normal_vs_rest, SubClassifier& glaucoma_vs_rest,
                                     const Dataset& data, int batch_size) {
  std::vector<Stage1Image> out;
  out.reserve(data.size());
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(data.size(), start + static_cast<std::size_t>(batch_size));
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const Tensor batch = stack_batch(data, idx);
    auto taps_a = extract_feature_taps(normal_vs_rest, batch);
    auto taps_b = extract_feature_taps(glaucoma_vs_rest, batch);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const double pa = softmax(taps_a[i].scores.reshaped(Shape{1, 2}))[1];
      const double pb = softmax(taps_b[i].scores.reshaped(Shape{1, 2}))[1];
      out.push_back({data[idx[i]].id, rank_from_probabilities(pa, pb).rank, std::move(taps_a[i]),
                     std::move(taps_b[i])});
    }
  }
  return out;
}

std::vector<int> actual_ranks(const Dataset& data) {
  std::vector<int> out;
  out.reserve(data.size());
  for (const auto& item : data) out.push_back(item.label.rank);
  return out;
}

std::vector<int> ranks_of(const std::vector<RankPrediction>& preds) {
  std::vector<int> out;
  out.reserve(preds.size());
  for (const auto& p : preds) out.push_back(p.rank.rank);
  return out;
}

std::vector<int> argmax_ranks(SubClassifier& net, const Dataset& data, int batch_size) {
  std::vector<int> out;
  for (const auto& row : predict_probabilities(net, data, batch_size)) {
    out.push_back(static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()));
  }
  return out;
}

void finish_report(EvalReport& report, const Dataset& test, const std::vector<int>& final_ranks,
                   const std::vector<int>* stage1_ranks) {
  const auto actual = actual_ranks(test);
  report.confusion = confusion_from(actual, final_ranks);
  report.metrics = compute_metrics(report.confusion);
  report.predictions.clear();
  for (std::size_t i = 0; i < test.size(); ++i) {
    ImagePrediction p;
    p.id = test[i].id;
    p.actual = actual[i];
    if (stage1_ranks != nullptr) p.stage1 = (*stage1_ranks)[i];
    p.final_rank = final_ranks[i];
    report.predictions.push_back(std::move(p));
  }
}

ArchSpec flat_arch(const RunConfig& config) {
  ArchSpec arch = config.stage1_arch;
  arch.num_outputs = kNumRanks;
  return arch;
}

SubClassifier& find_model(std::vector<NamedCheckpoint>& checkpoints, const std::string& name) {
  for (auto& nc : checkpoints) {
    if (nc.name == name) return nc.checkpoint.model;
  }
  throw ArgumentError("missing checkpoint '" + name + "'");
}

}  // namespace

std::string_view method_name(Method method) {
  switch (method) {
    case Method::kTwoStageRanking:
      return "two_stage_ranking";
    case Method::kRanking:
      return "ranking";
    case Method::kFlat3Class:
      return "flat_3class";
  }
  return "?";
}

Method parse_method(std::string_view name) {
  if (name == "two_stage_ranking") return Method::kTwoStageRanking;
  if (name == "ranking") return Method::kRanking;
  if (name == "flat_3class") return Method::kFlat3Class;
  throw ConfigError("unknown method '" + std::string(name) + "'");
}

void RunConfig::validate() const {
  if (epochs_stage1 < 1 || epochs_stage2 < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be > 0");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ConfigError("lr_decay must be in (0, 1]");
  if (!(augment.zoom_limit >= 0.0 && augment.zoom_limit < 0.5)) throw ConfigError("zoom_limit must be in [0, 0.5)");
  if (!(augment.flip_prob >= 0.0 && augment.flip_prob <= 1.0)) throw ConfigError("flip_prob must be in [0, 1]");
  if (threads < 0) throw ConfigError("threads must be >= 0");
  stage1_arch.validate();
  stage2_arch.validate();
  if (stage1_arch.head != HeadKind::kGapSoftmax) throw ConfigError("stage-1 arch must use the gap_softmax head");
  if (stage2_arch.head != HeadKind::kGapFcBnDropout) {
    throw ConfigError("stage-2 arch must use the gap_fc_bn_dropout head");
  }
  if (stage1_arch.num_outputs != 2 || stage2_arch.num_outputs != 2) {
    throw ConfigError("ranking sub-classifiers have 2 outputs");
  }
  if (stage1_arch.input_size != stage2_arch.input_size) {
    throw ConfigError("stage-1 and stage-2 input sizes must match");
  }
  if (data_dir.empty()) {
    if (synth.count < 10) throw ConfigError("synthetic count must be >= 10");
    if (synth.size < 32) throw ConfigError("synthetic size must be >= 32");
    if (!(synth.noise_sigma >= 0.0)) throw ConfigError("noise must be >= 0");
  }
  SplitSpec spec{test_fraction, val_fraction, 0};
  if (!(spec.test_fraction > 0.0 && spec.test_fraction < 1.0) ||
      !(spec.val_fraction_of_train > 0.0 && spec.val_fraction_of_train < 1.0)) {
    throw ConfigError("split fractions must lie in (0, 1)");
  }
}

int resolve_threads(int configured) {
  if (configured > 0) return configured;
  if (const char* env = std::getenv("ORDIRANK_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<int>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

// ---------------------------------------------------------------------------
// Metrics

Metrics compute_metrics(const Confusion& confusion) {
  std::size_t total = 0, trace = 0;
  std::array<std::size_t, kNumRanks> row{};
  for (int a = 0; a < kNumRanks; ++a) {
    for (int p = 0; p < kNumRanks; ++p) {
      row[a] += confusion[a][p];
      total += confusion[a][p];
    }
    trace += confusion[a][a];
  }
  if (total == 0) throw ArgumentError("compute_metrics: empty confusion matrix");
  auto recall = [&](int c) -> std::optional<double> {
    if (row[c] == 0) return std::nullopt;
    return static_cast<double>(confusion[c][c]) / static_cast<double>(row[c]);
  };
  Metrics m;
  m.acc = static_cast<double>(trace) / static_cast<double>(total);
  m.sp = recall(0);
  m.se_s = recall(1);
  m.se_g = recall(2);
  return m;
}

Confusion confusion_from(const std::vector<int>& actual, const std::vector<int>& predicted) {
  if (actual.size() != predicted.size()) throw DimensionError("confusion_from: length mismatch");
  Confusion c{};
  for (std::size_t i = 0; i < actual.size(); ++i) {
    if (actual[i] < 0 || actual[i] >= kNumRanks || predicted[i] < 0 || predicted[i] >= kNumRanks) {
      throw ArgumentError("confusion_from: rank outside [0, 3)");
    }
    ++c[actual[i]][predicted[i]];
  }
  return c;
}

// ---------------------------------------------------------------------------
// Training

int select_best_epoch(std::span<const double> val_losses) {
  if (val_losses.empty()) throw ArgumentError("select_best_epoch: empty series");
  std::size_t best = 0;
  for (std::size_t i = 1; i < val_losses.size(); ++i) {
    if (val_losses[i] < val_losses[best]) best = i;
  }
  return static_cast<int>(best) + 1;
}

int training_target(Split split, RankLabel label) {
  if (split == Split::kFlat) {
    if (label.rank < 0 || label.rank >= kNumRanks) throw ArgumentError("training_target: rank out of range");
    return label.rank;
  }
  return binarize(label)[static_cast<std::size_t>(split) - 1] ? 1 : 0;
}

double evaluate_loss(SubClassifier& net, const Dataset& data, int batch_size) {
  if (data.empty()) throw ArgumentError("evaluate_loss: empty dataset");
  double total = 0.0;
  std::vector<std::size_t> idx;
  Tensor batch;
  std::vector<int> targets;
  for (std::size_t start = 0; start < data.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(data.size(), start + static_cast<std::size_t>(batch_size));
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    fill_batch(data, idx, net.split(), nullptr, nullptr, batch, targets);
    Tape<float> tape(false);
    const auto out = net.forward(tape, batch, Mode::kEval);
    total += static_cast<double>(softmax_cross_entropy(tape, out.logits, targets).loss.item()) *
             static_cast<double>(idx.size());
  }
  return total / static_cast<double>(data.size());
}

TrainOutcome train_subclassifier(SubClassifier model, const Dataset& train, const Dataset& val,
                                 const TrainSettings& settings) {
  if (settings.epochs < 1) throw ArgumentError("train_subclassifier: epochs must be >= 1");
  if (settings.batch_size < 1) throw ArgumentError("train_subclassifier: batch_size must be >= 1");
  if (train.empty() || val.empty()) throw ArgumentError("train_subclassifier: train and val must be non-empty");

  Rng rng(settings.seed);
  RmsProp optimizer;
  auto params = model.parameters();
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  TrainOutcome outcome{Checkpoint{model.clone(), {}}, {}, 0};
  double best_val = std::numeric_limits<double>::infinity();
  Tensor batch;
  std::vector<int> targets;
  const auto bs = static_cast<std::size_t>(settings.batch_size);

  for (int epoch = 0; epoch < settings.epochs; ++epoch) {
    const double lr = lr_at_epoch(settings.lr, epoch, settings.lr_decay);
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += bs, ++batch_index) {
      const std::size_t end = std::min(order.size(), start + bs);
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      fill_batch(train, idx, model.split(), &settings.augment, &rng, batch, targets);
      Tape<float> tape;
      const auto out = model.forward(tape, batch, Mode::kTrain, &rng);
      const auto xent = softmax_cross_entropy(tape, out.logits, targets);
      const double loss = xent.loss.item();
      if (!std::isfinite(loss)) throw DivergedError(epoch + 1, batch_index);
      model.zero_grad();
      tape.backward(xent.loss);
      optimizer.step(params, lr);
      total += loss * static_cast<double>(idx.size());
    }
    const double val_loss = evaluate_loss(model, val, settings.batch_size);
    if (!std::isfinite(val_loss)) throw DivergedError(epoch + 1, batch_index);
    outcome.losses.train.push_back(total / static_cast<double>(train.size()));
    outcome.losses.val.push_back(val_loss);
    if (val_loss < best_val) {
      best_val = val_loss;
      outcome.best_epoch = epoch + 1;
      outcome.best = Checkpoint{model.clone(), TrainingMeta{epoch + 1, val_loss, settings.seed}};
    }
  }
  return outcome;
}

// ---------------------------------------------------------------------------
// Two-stage protocol

Stage1Result run_stage1(const RunConfig& config, const DatasetSplits& splits) {
  const int threads = resolve_threads(config.threads);
  auto [a, b] = train_two(
      [&] {
        return train_subclassifier(
            build_stage1_net(config.stage1_arch, Split::kNormalVsRest, init_seed(config, kStage1NormalVsRest)),
            splits.train, splits.val, settings_for(config, config.epochs_stage1, kStage1NormalVsRest));
      },
      [&] {
        return train_subclassifier(
            build_stage1_net(config.stage1_arch, Split::kGlaucomaVsRest, init_seed(config, kStage1GlaucomaVsRest)),
            splits.train, splits.val, settings_for(config, config.epochs_stage1, kStage1GlaucomaVsRest));
      },
      threads);
  Stage1Result result{std::move(a), std::move(b), {}, {}, {}};
  auto& na = result.normal_vs_rest.best.model;
  auto& gb = result.glaucoma_vs_rest.best.model;
  result.train = stage1_pass(na, gb, splits.train, config.batch_size);
  result.val = stage1_pass(na, gb, splits.val, config.batch_size);
  result.test = stage1_pass(na, gb, splits.test, config.batch_size);
  return result;
}

Dataset build_stage2_inputs(const std::vector<Stage1Image>& stage1, const Dataset& originals) {
  std::map<std::string, const Stage1Image*> by_id;
  for (const auto& s : stage1) by_id[s.id] = &s;
  Dataset out;
  out.reserve(originals.size());
  for (const auto& item : originals) {
    auto it = by_id.find(item.id);
    if (it == by_id.end()) throw ArgumentError("build_stage2_inputs: no stage-1 tap for image '" + item.id + "'");
    const Stage1Image& s = *it->second;
    const MaskFilter mask =
        select_mask(s.predicted, s.normal_vs_rest, s.glaucoma_vs_rest, item.pixels.dim(1), item.pixels.dim(2));
    out.push_back({fuse_roi(item.pixels, mask, s.predicted).values, item.label, item.id, item.meta});
  }
  return out;
}

DatasetSplits prepare_data(const RunConfig& config) {
  config.validate();
  Dataset data;
  if (config.data_dir.empty()) {
    data = generate_synthetic(config.synth.count, config.synth.size, config.synth.noise_sigma, config.seed);
  } else {
    auto loaded = load_directory(config.data_dir);
    for (const auto& w : loaded.warnings) std::cerr << "warning: " << w << '\n';
    data = std::move(loaded.images);
  }
  const auto side = static_cast<std::size_t>(config.stage1_arch.input_size);
  for (auto& item : data) {
    if (item.pixels.dim(0) != 3) throw DimensionError("image " + item.id + " is not 3-channel");
    if (item.pixels.dim(1) != side || item.pixels.dim(2) != side) item = resize(item, config.stage1_arch.input_size);
  }
  return split(std::move(data), SplitSpec{config.test_fraction, config.val_fraction,
                                          mix_seed(config.seed, kSplitStream)});
}

RunResult run_method(const RunConfig& config, const DatasetSplits& splits) {
  config.validate();
  const int threads = resolve_threads(config.threads);
  RunResult result;
  EvalReport& report = result.report;
  report.method = config.method;

  switch (config.method) {
    case Method::kTwoStageRanking: {
      Stage1Result s1 = run_stage1(config, splits);
      report.losses.push_back({"stage1_N-SG", s1.normal_vs_rest.losses});
      report.losses.push_back({"stage1_NS-G", s1.glaucoma_vs_rest.losses});
      const Dataset roi_train = build_stage2_inputs(s1.train, splits.train);
      const Dataset roi_val = build_stage2_inputs(s1.val, splits.val);
      Dataset roi_test = build_stage2_inputs(s1.test, splits.test);
      auto [a, b] = train_two(
          [&] {
            return train_subclassifier(
                build_stage2_net(config.stage2_arch, Split::kNormalVsRest, init_seed(config, kStage2NormalVsRest)),
                roi_train, roi_val, settings_for(config, config.epochs_stage2, kStage2NormalVsRest));
          },
          [&] {
            return train_subclassifier(build_stage2_net(config.stage2_arch, Split::kGlaucomaVsRest,
                                                        init_seed(config, kStage2GlaucomaVsRest)),
                                       roi_train, roi_val,
                                       settings_for(config, config.epochs_stage2, kStage2GlaucomaVsRest));
          },
          threads);
      report.losses.push_back({"stage2_N-SG", a.losses});
      report.losses.push_back({"stage2_NS-G", b.losses});
      const auto final_ranks = ranks_of(predict_ranks(a.best.model, b.best.model, roi_test, config.batch_size));
      std::vector<int> stage1_ranks;
      for (const auto& s : s1.test) stage1_ranks.push_back(s.predicted.rank);
      finish_report(report, splits.test, final_ranks, &stage1_ranks);
      result.checkpoints.push_back({"stage1_N-SG", std::move(s1.normal_vs_rest.best)});
      result.checkpoints.push_back({"stage1_NS-G", std::move(s1.glaucoma_vs_rest.best)});
      result.checkpoints.push_back({"stage2_N-SG", std::move(a.best)});
      result.checkpoints.push_back({"stage2_NS-G", std::move(b.best)});
      result.test_inputs = std::move(roi_test);
      break;
    }
    case Method::kRanking: {
      auto [a, b] = train_two(
          [&] {
            return train_subclassifier(
                build_stage2_net(config.stage2_arch, Split::kNormalVsRest, init_seed(config, kSingleNormalVsRest)),
                splits.train, splits.val, settings_for(config, config.epochs_stage2, kSingleNormalVsRest));
          },
          [&] {
            return train_subclassifier(build_stage2_net(config.stage2_arch, Split::kGlaucomaVsRest,
                                                        init_seed(config, kSingleGlaucomaVsRest)),
                                       splits.train, splits.val,
                                       settings_for(config, config.epochs_stage2, kSingleGlaucomaVsRest));
          },
          threads);
      report.losses.push_back({"single_N-SG", a.losses});
      report.losses.push_back({"single_NS-G", b.losses});
      const auto final_ranks = ranks_of(predict_ranks(a.best.model, b.best.model, splits.test, config.batch_size));
      finish_report(report, splits.test, final_ranks, nullptr);
      result.checkpoints.push_back({"single_N-SG", std::move(a.best)});
      result.checkpoints.push_back({"single_NS-G", std::move(b.best)});
      result.test_inputs = splits.test;
      break;
    }
    case Method::kFlat3Class: {
      TrainOutcome flat = train_subclassifier(
          build_stage1_net(flat_arch(config), Split::kFlat, init_seed(config, kSingleFlat)), splits.train,
          splits.val, settings_for(config, config.epochs_stage2, kSingleFlat));
      report.losses.push_back({"single_flat", flat.losses});
      finish_report(report, splits.test, argmax_ranks(flat.best.model, splits.test, config.batch_size), nullptr);
      result.checkpoints.push_back({"single_flat", std::move(flat.best)});
      result.test_inputs = splits.test;
      break;
    }
  }
  return result;
}

EvalReport run_full(const RunConfig& config) { return run_method(config, prepare_data(config)).report; }

EvalReport evaluate_checkpoints(const RunConfig& config, const DatasetSplits& splits,
                                std::vector<NamedCheckpoint> checkpoints) {
  EvalReport report;
  report.method = config.method;
  switch (config.method) {
    case Method::kTwoStageRanking: {
      auto& s1a = find_model(checkpoints, "stage1_N-SG");
      auto& s1b = find_model(checkpoints, "stage1_NS-G");
      auto& s2a = find_model(checkpoints, "stage2_N-SG");
      auto& s2b = find_model(checkpoints, "stage2_NS-G");
      const auto s1 = stage1_pass(s1a, s1b, splits.test, config.batch_size);
      const Dataset roi_test = build_stage2_inputs(s1, splits.test);
      std::vector<int> stage1_ranks;
      for (const auto& s : s1) stage1_ranks.push_back(s.predicted.rank);
      finish_report(report, splits.test, ranks_of(predict_ranks(s2a, s2b, roi_test, config.batch_size)),
                    &stage1_ranks);
      break;
    }
    case Method::kRanking: {
      auto& a = find_model(checkpoints, "single_N-SG");
      auto& b = find_model(checkpoints, "single_NS-G");
      finish_report(report, splits.test, ranks_of(predict_ranks(a, b, splits.test, config.batch_size)), nullptr);
      break;
    }
    case Method::kFlat3Class: {
      auto& flat = find_model(checkpoints, "single_flat");
      finish_report(report, splits.test, argmax_ranks(flat, splits.test, config.batch_size), nullptr);
      break;
    }
  }
  return report;
}

}  // namespace ordirank
