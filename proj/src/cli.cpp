#include "ordirank/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <iostream>
#include <sstream>

#include "ordirank/camroi.hpp"
#include "ordirank/checkpoint.hpp"
#include "ordirank/config.hpp"
#include "ordirank/csv.hpp"
#include "ordirank/ensemble.hpp"
#include "ordirank/netpbm.hpp"

namespace fs = std::filesystem;

namespace ordirank::cli {

namespace {

std::string opt_float(const std::optional<double>& v) { return v ? format_float(*v) : "NA"; }

std::string checkpoint_file(const std::string& name) { return name + ".ckpt"; }

std::vector<std::string> checkpoint_names(Method method) {
  switch (method) {
    case Method::kTwoStageRanking:
      return {"stage1_N-SG", "stage1_NS-G", "stage2_N-SG", "stage2_NS-G"};
    case Method::kRanking:
      return {"single_N-SG", "single_NS-G"};
    case Method::kFlat3Class:
      return {"single_flat"};
  }
  return {};
}

RunConfig resolve_config(const std::string& config_path, const std::vector<std::string>& overrides) {
  RunConfig config = config_path.empty() ? RunConfig{} : load_config(config_path);
  for (const auto& entry : overrides) {
    const auto eq = entry.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + entry + "'");
    apply_config_entry(config, entry.substr(0, eq), entry.substr(eq + 1));
  }
  config.validate();
  return config;
}

void echo_config(const RunConfig& config, const fs::path& out) {
  const std::string text = serialize_config(config);
  std::cout << "# resolved config\n" << text << std::flush;
  if (!out.empty()) write_file(out / "config.txt", text);
}

void write_checkpoints(const std::vector<NamedCheckpoint>& checkpoints, const fs::path& dir) {
  fs::create_directories(dir);
  for (const auto& nc : checkpoints) save_checkpoint(nc.checkpoint, dir / checkpoint_file(nc.name));
}

void write_test_inputs(const Dataset& inputs, const fs::path& dir) {
  fs::create_directories(dir);
  for (const auto& item : inputs) {
    std::string name = item.id;
    std::replace(name.begin(), name.end(), '/', '_');
    write_file(dir / (name + ".ppm"), write_ppm(item.pixels));
  }
}

void print_metrics(const std::string& label, const Metrics& m) {
  std::cout << label << ": acc=" << format_float(m.acc) << " sp=" << opt_float(m.sp)
            << " se_s=" << opt_float(m.se_s) << " se_g=" << opt_float(m.se_g) << '\n';
}

// ---------------------------------------------------------------------------

struct GenerateArgs {
  int count = 600;
  int size = 64;
  double noise = 0.05;
  std::uint64_t seed = 1;
  std::string out;
};

int do_generate(const GenerateArgs& a) {
  const Dataset data = generate_synthetic(a.count, a.size, a.noise, a.seed);
  write_directory(data, a.out);
  std::cout << "wrote " << data.size() << " images to " << a.out << '\n';
  return kOk;
}

struct RunArgs {
  std::string config;
  std::vector<std::string> overrides;
  std::string out;
  std::string checkpoints;
  std::vector<std::uint64_t> seeds;
};

int do_train(const RunArgs& a) {
  const RunConfig config = resolve_config(a.config, a.overrides);
  const fs::path out(a.out);
  fs::create_directories(out);
  echo_config(config, out);
  const RunResult result = run_method(config, prepare_data(config));
  write_report(result.report, out);
  write_checkpoints(result.checkpoints, out / "checkpoints");
  print_metrics(std::string(method_name(config.method)), result.report.metrics);
  return kOk;
}

int do_eval(const RunArgs& a) {
  const RunConfig config = resolve_config(a.config, a.overrides);
  const fs::path out(a.out);
  fs::create_directories(out);
  echo_config(config, out);
  std::vector<NamedCheckpoint> checkpoints;
  for (const auto& name : checkpoint_names(config.method)) {
    checkpoints.push_back({name, load_checkpoint(fs::path(a.checkpoints) / checkpoint_file(name))});
  }
  const EvalReport report = evaluate_checkpoints(config, prepare_data(config), std::move(checkpoints));
  write_report(report, out);
  print_metrics(std::string(method_name(config.method)), report.metrics);
  return kOk;
}

int do_compare(const RunArgs& a) {
  const RunConfig base = resolve_config(a.config, a.overrides);
  const fs::path out(a.out);
  fs::create_directories(out);
  echo_config(base, out);
  std::vector<std::uint64_t> seeds = a.seeds;
  if (seeds.empty()) seeds.push_back(base.seed);

  const Method methods[] = {Method::kTwoStageRanking, Method::kRanking, Method::kFlat3Class};
  std::vector<std::vector<Metrics>> per_method(std::size(methods));
  for (std::uint64_t seed : seeds) {
    RunConfig config = base;
    config.seed = seed;
    const DatasetSplits splits = prepare_data(config);
    for (std::size_t m = 0; m < std::size(methods); ++m) {
      config.method = methods[m];
      const fs::path dir = out / ("seed_" + std::to_string(seed)) / std::string(method_name(methods[m]));
      fs::create_directories(dir);
      const RunResult result = run_method(config, splits);
      write_report(result.report, dir);
      write_checkpoints(result.checkpoints, dir / "checkpoints");
      if (methods[m] == Method::kTwoStageRanking) write_test_inputs(result.test_inputs, dir / "test_roi");
      per_method[m].push_back(result.report.metrics);
      print_metrics("seed " + std::to_string(seed) + " " + std::string(method_name(methods[m])),
                    result.report.metrics);
    }
  }
  std::vector<CompareRow> rows;
  for (std::size_t m = 0; m < std::size(methods); ++m) rows.push_back(summarize(methods[m], per_method[m]));
  const std::string table = compare_csv(rows);
  write_file(out / "compare.csv", table);
  std::cout << table;
  return kOk;
}

struct CamArgs {
  std::vector<std::string> checkpoints;
  std::string image;
  std::string out;
};

int do_cam(const CamArgs& a) {
  Checkpoint first = load_checkpoint(a.checkpoints.at(0));
  Checkpoint second = load_checkpoint(a.checkpoints.at(1));
  if (first.model.split() == Split::kGlaucomaVsRest && second.model.split() == Split::kNormalVsRest) {
    std::swap(first, second);
  }
  if (first.model.split() != Split::kNormalVsRest || second.model.split() != Split::kGlaucomaVsRest) {
    throw ArgumentError("cam: expected one N-SG and one NS-G stage-1 checkpoint");
  }
  const ArchSpec& arch = first.model.arch();
  if (arch != second.model.arch()) throw ArgumentError("cam: the two checkpoints have different architectures");

  Tensor image = read_ppm(read_file(a.image));
  const auto side = static_cast<std::size_t>(arch.input_size);
  if (image.dim(1) != side || image.dim(2) != side) image = resize_pixels(image, side, side);

  const Tensor batch = image.reshaped(Shape{1, 3, side, side});
  const FeatureTap tap_a = extract_feature_taps(first.model, batch).front();
  const FeatureTap tap_b = extract_feature_taps(second.model, batch).front();
  const double pa = softmax(tap_a.scores.reshaped(Shape{1, 2}))[1];
  const double pb = softmax(tap_b.scores.reshaped(Shape{1, 2}))[1];
  const RankLabel predicted = rank_from_probabilities(pa, pb).rank;

  const MaskFilter mask = select_mask(predicted, tap_a, tap_b, side, side);
  const RoiImage roi = fuse_roi(image, mask, predicted);
  Tensor overlay = image.clone();
  auto red = overlay.mutable_data();
  const auto m = mask.values.data();
  for (std::size_t i = 0; i < m.size(); ++i) red[i] = std::max(red[i], m[i]);

  const fs::path out(a.out);
  fs::create_directories(out);
  write_file(out / "mask.pgm", write_pgm(mask.values));
  write_file(out / "roi.ppm", write_ppm(roi.values));
  write_file(out / "overlay.ppm", write_ppm(overlay));
  std::cout << "predicted " << rank_name(predicted.rank) << " (p_N-SG=" << format_float(pa)
            << " p_NS-G=" << format_float(pb) << ")\n";
  return kOk;
}

}  // namespace

// ---------------------------------------------------------------------------

CompareRow summarize(Method method, const std::vector<Metrics>& runs) {
  if (runs.empty()) throw ArgumentError("summarize: no runs");
  CompareRow row;
  row.method = method;
  row.runs = runs.size();
  auto mean_of = [&](auto field) -> std::optional<double> {
    double total = 0.0;
    std::size_t n = 0;
    for (const auto& r : runs) {
      if (const auto& v = r.*field) {
        total += *v;
        ++n;
      }
    }
    if (n == 0) return std::nullopt;
    return total / static_cast<double>(n);
  };
  double acc = 0.0;
  for (const auto& r : runs) acc += r.acc;
  row.acc = acc / static_cast<double>(runs.size());
  row.sp = mean_of(&Metrics::sp);
  row.se_s = mean_of(&Metrics::se_s);
  row.se_g = mean_of(&Metrics::se_g);
  return row;
}

std::string metrics_csv(const Metrics& m) {
  return write_csv({"metric", "value"}, {{"acc", format_float(m.acc)},
                                         {"sp", opt_float(m.sp)},
                                         {"se_s", opt_float(m.se_s)},
                                         {"se_g", opt_float(m.se_g)}});
}

std::string confusion_csv(const Confusion& confusion) {
  std::vector<CsvRow> rows;
  for (int a = 0; a < kNumRanks; ++a) {
    CsvRow row{std::string(rank_name(a))};
    for (int p = 0; p < kNumRanks; ++p) row.push_back(std::to_string(confusion[a][p]));
    rows.push_back(std::move(row));
  }
  return write_csv({"actual\\predicted", "normal", "suspicious", "glaucoma"}, rows);
}

std::string predictions_csv(const std::vector<ImagePrediction>& predictions) {
  std::vector<CsvRow> rows;
  for (const auto& p : predictions) {
    rows.push_back({p.id, std::to_string(p.actual), p.stage1 ? std::to_string(*p.stage1) : "",
                    std::to_string(p.final_rank)});
  }
  return write_csv({"id", "actual", "predicted_stage1", "predicted_final"}, rows);
}

std::string loss_csv(const LossSeries& series) {
  std::vector<CsvRow> rows;
  for (std::size_t e = 0; e < series.train.size(); ++e) {
    rows.push_back({std::to_string(e + 1), format_float(series.train[e]), format_float(series.val.at(e))});
  }
  return write_csv({"epoch", "train_loss", "val_loss"}, rows);
}

std::string compare_csv(const std::vector<CompareRow>& rows) {
  std::vector<CsvRow> out;
  for (const auto& r : rows) {
    out.push_back({std::string(method_name(r.method)), format_float(r.acc), opt_float(r.sp), opt_float(r.se_s),
                   opt_float(r.se_g), std::to_string(r.runs)});
  }
  return write_csv({"method", "acc", "sp", "se_s", "se_g", "runs"}, out);
}

void write_report(const EvalReport& report, const fs::path& dir) {
  fs::create_directories(dir);
  write_file(dir / "metrics.csv", metrics_csv(report.metrics));
  write_file(dir / "confusion.csv", confusion_csv(report.confusion));
  write_file(dir / "predictions.csv", predictions_csv(report.predictions));
  for (const auto& nl : report.losses) write_file(dir / ("loss_" + nl.name + ".csv"), loss_csv(nl.series));
}

int run(int argc, const char* const* argv) {
  CLI::App app{"Two-stage ordinal ranking CNN with CAM-guided regions of interest"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* generate = app.add_subcommand("generate", "Write a synthetic disc/cup dataset as root/{0,1,2}/*.ppm");
  generate->add_option("--count", gen.count, "Number of images")->capture_default_str();
  generate->add_option("--size", gen.size, "Image side in pixels")->capture_default_str();
  generate->add_option("--noise", gen.noise, "Gaussian pixel noise sigma")->capture_default_str();
  generate->add_option("--seed", gen.seed, "Seed")->capture_default_str();
  generate->add_option("--out", gen.out, "Output directory")->required();

  RunArgs train_args, eval_args, compare_args;
  auto add_run_options = [](CLI::App* cmd, RunArgs& a) {
    cmd->add_option("--config", a.config, "Run config file (key=value lines)")->check(CLI::ExistingFile);
    cmd->add_option("--set", a.overrides, "Override one config key, key=value (repeatable)");
    cmd->add_option("--out", a.out, "Output directory")->required();
  };
  auto* train = app.add_subcommand("train", "Train the configured method and write checkpoints and CSVs");
  add_run_options(train, train_args);
  auto* eval = app.add_subcommand("eval", "Evaluate saved checkpoints on the test split");
  add_run_options(eval, eval_args);
  eval->add_option("--checkpoints", eval_args.checkpoints, "Directory holding <name>.ckpt files")
      ->required()
      ->check(CLI::ExistingDirectory);
  auto* compare = app.add_subcommand("compare", "Run all three methods and write a metrics table");
  add_run_options(compare, compare_args);
  compare->add_option("--seeds", compare_args.seeds, "Seeds to average over (default: config seed)")
      ->delimiter(',');

  CamArgs cam_args;
  auto* cam = app.add_subcommand("cam", "Write mask.pgm, roi.ppm and overlay.ppm for one image");
  cam->add_option("--checkpoints", cam_args.checkpoints, "The N-SG and NS-G stage-1 checkpoints")
      ->required()
      ->expected(2)
      ->check(CLI::ExistingFile);
  cam->add_option("--image", cam_args.image, "Input P6 image")->required()->check(CLI::ExistingFile);
  cam->add_option("--out", cam_args.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n" << "run with --help for usage\n";
    return kUsageError;
  }

  try {
    if (generate->parsed()) return do_generate(gen);
    if (train->parsed()) return do_train(train_args);
    if (eval->parsed()) return do_eval(eval_args);
    if (compare->parsed()) return do_compare(compare_args);
    if (cam->parsed()) return do_cam(cam_args);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
  return kUsageError;
}

}  // namespace ordirank::cli
