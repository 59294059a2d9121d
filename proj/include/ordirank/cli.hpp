#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ordirank/pipeline.hpp"

namespace ordirank::cli {

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kRuntimeError = 1;
inline constexpr int kUsageError = 2;

// Parses argv and runs one of generate | train | eval | cam | compare.
int run(int argc, const char* const* argv);

// One row of the compare table: metrics averaged over seeds (absent metrics are skipped).
struct CompareRow {
  Method method = Method::kTwoStageRanking;
  double acc = 0.0;
  std::optional<double> sp, se_s, se_g;
  std::size_t runs = 0;
};

CompareRow summarize(Method method, const std::vector<Metrics>& runs);

// metrics.csv, confusion.csv, predictions.csv and loss_<name>.csv.
void write_report(const EvalReport& report, const std::filesystem::path& dir);
std::string metrics_csv(const Metrics& metrics);
std::string confusion_csv(const Confusion& confusion);
std::string predictions_csv(const std::vector<ImagePrediction>& predictions);
std::string loss_csv(const LossSeries& series);
std::string compare_csv(const std::vector<CompareRow>& rows);

}  // namespace ordirank::cli
