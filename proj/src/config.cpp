#include "ordirank/config.hpp"

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <sstream>

#include "ordirank/netpbm.hpp"

namespace ordirank {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <typename Int>
Int parse_integer(std::string_view key, std::string_view text) {
  Int value{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (text.empty() || ec != std::errc() || ptr != text.data() + text.size()) {
    throw ConfigError("config: invalid integer for " + std::string(key) + ": '" + std::string(text) + "'");
  }
  return value;
}

double parse_real(std::string_view key, std::string_view text) {
  std::string s(text);
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) {
    throw ConfigError("config: invalid number for " + std::string(key) + ": '" + s + "'");
  }
  return v;
}

bool parse_bool(std::string_view key, std::string_view text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError("config: invalid boolean for " + std::string(key) + ": '" + std::string(text) + "'");
}

// Shortest text that parses back to the same double.
std::string real(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

void apply_arch(ArchSpec& arch, std::string_view key, std::string_view value) {
  arch = ArchSpec::parse(arch.serialize() + std::string(key) + "=" + std::string(value) + "\n");
}

}  // namespace

void apply_config_entry(RunConfig& c, std::string_view key, std::string_view value) {
  if (key.starts_with("stage1.")) return apply_arch(c.stage1_arch, key.substr(7), value);
  if (key.starts_with("stage2.")) return apply_arch(c.stage2_arch, key.substr(7), value);
  if (key == "seed") {
    c.seed = parse_integer<std::uint64_t>(key, value);
  } else if (key == "method") {
    c.method = parse_method(value);
  } else if (key == "epochs_stage1") {
    c.epochs_stage1 = parse_integer<int>(key, value);
  } else if (key == "epochs_stage2") {
    c.epochs_stage2 = parse_integer<int>(key, value);
  } else if (key == "batch_size") {
    c.batch_size = parse_integer<int>(key, value);
  } else if (key == "lr") {
    c.lr = parse_real(key, value);
  } else if (key == "lr_decay") {
    c.lr_decay = parse_real(key, value);
  } else if (key == "test_fraction") {
    c.test_fraction = parse_real(key, value);
  } else if (key == "val_fraction") {
    c.val_fraction = parse_real(key, value);
  } else if (key == "augment") {
    c.augment.enabled = parse_bool(key, value);
  } else if (key == "zoom_limit") {
    c.augment.zoom_limit = parse_real(key, value);
  } else if (key == "flip_prob") {
    c.augment.flip_prob = parse_real(key, value);
  } else if (key == "data_dir") {
    c.data_dir = std::string(value);
  } else if (key == "synth_count") {
    c.synth.count = parse_integer<int>(key, value);
  } else if (key == "synth_size") {
    c.synth.size = parse_integer<int>(key, value);
  } else if (key == "noise_sigma") {
    c.synth.noise_sigma = parse_real(key, value);
  } else if (key == "threads") {
    c.threads = parse_integer<int>(key, value);
  } else {
    throw ConfigError("config: unknown key '" + std::string(key) + "'");
  }
}

RunConfig parse_config(std::string_view text) {
  RunConfig config;
  std::size_t pos = 0;
  int line_no = 0;
  while (pos <= text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    std::string_view line = text.substr(pos, eol - pos);
    pos = eol + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value");
    }
    try {
      apply_config_entry(config, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return config;
}

RunConfig load_config(const std::filesystem::path& path) {
  return parse_config(read_file(path));
}

std::string serialize_config(const RunConfig& c) {
  std::ostringstream os;
  os << "seed=" << c.seed << '\n';
  os << "method=" << method_name(c.method) << '\n';
  os << "epochs_stage1=" << c.epochs_stage1 << '\n';
  os << "epochs_stage2=" << c.epochs_stage2 << '\n';
  os << "batch_size=" << c.batch_size << '\n';
  os << "lr=" << real(c.lr) << '\n';
  os << "lr_decay=" << real(c.lr_decay) << '\n';
  os << "test_fraction=" << real(c.test_fraction) << '\n';
  os << "val_fraction=" << real(c.val_fraction) << '\n';
  os << "augment=" << (c.augment.enabled ? "true" : "false") << '\n';
  os << "zoom_limit=" << real(c.augment.zoom_limit) << '\n';
  os << "flip_prob=" << real(c.augment.flip_prob) << '\n';
  os << "data_dir=" << c.data_dir << '\n';
  os << "synth_count=" << c.synth.count << '\n';
  os << "synth_size=" << c.synth.size << '\n';
  os << "noise_sigma=" << real(c.synth.noise_sigma) << '\n';
  os << "threads=" << c.threads << '\n';
  for (const auto& [prefix, arch] : {std::pair{"stage1.", &c.stage1_arch}, std::pair{"stage2.", &c.stage2_arch}}) {
    std::istringstream lines(arch->serialize());
    for (std::string line; std::getline(lines, line);) os << prefix << line << '\n';
  }
  return os.str();
}

}  // namespace ordirank
