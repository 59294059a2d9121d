#include "ordirank/models.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <map>
#include <sstream>

namespace ordirank {

namespace {

// Shortest text that parses back to the same double.
std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

int parse_int(std::string_view key, std::string_view text) {
  int value = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ConfigError("arch: invalid integer for " + std::string(key) + ": '" + std::string(text) + "'");
  }
  return value;
}

double parse_double(std::string_view key, std::string_view text) {
  std::string s(text);
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) {
    throw ConfigError("arch: invalid number for " + std::string(key) + ": '" + s + "'");
  }
  return v;
}

template <typename T>
void he_uniform(BasicTensor<T>& t, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : t.mutable_data()) v = static_cast<T>(dist(rng));
}

}  // namespace

std::string_view head_name(HeadKind head) {
  return head == HeadKind::kGapSoftmax ? "gap_softmax" : "gap_fc_bn_dropout";
}

HeadKind parse_head(std::string_view name) {
  if (name == "gap_softmax") return HeadKind::kGapSoftmax;
  if (name == "gap_fc_bn_dropout") return HeadKind::kGapFcBnDropout;
  throw ConfigError("unknown head '" + std::string(name) + "'");
}

std::string_view split_name(Split split) {
  switch (split) {
    case Split::kFlat:
      return "flat";
    case Split::kNormalVsRest:
      return "N-SG";
    case Split::kGlaucomaVsRest:
      return "NS-G";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// ArchSpec

void ArchSpec::validate() const {
  if (input_channels < 1) throw ConfigError("arch: input_channels must be >= 1");
  if (block_channels.empty()) throw ConfigError("arch: at least one conv block is required");
  for (int c : block_channels) {
    if (c < 1) throw ConfigError("arch: block channel widths must be >= 1");
  }
  if (convs_per_block < 1) throw ConfigError("arch: convs_per_block must be >= 1");
  if (num_outputs < 2) throw ConfigError("arch: num_outputs must be >= 2");
  if (head == HeadKind::kGapFcBnDropout && fc_size < 1) throw ConfigError("arch: fc_size must be >= 1");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("arch: dropout_rate must be in [0, 1)");
  if (input_size < 1 || feature_size() < 2) {
    throw ConfigError("arch: input_size " + std::to_string(input_size) + " with " +
                      std::to_string(block_channels.size()) + " blocks leaves a feature map smaller than 2x2");
  }
}

int ArchSpec::feature_size() const {
  int side = input_size;
  for (std::size_t b = 0; b < block_channels.size(); ++b) side = (side - 2) / 2 + 1;
  return side;
}

std::string ArchSpec::serialize() const {
  std::ostringstream os;
  os << "input_size=" << input_size << '\n';
  os << "input_channels=" << input_channels << '\n';
  os << "blocks=";
  for (std::size_t i = 0; i < block_channels.size(); ++i) os << (i ? "," : "") << block_channels[i];
  os << '\n';
  os << "convs_per_block=" << convs_per_block << '\n';
  os << "num_outputs=" << num_outputs << '\n';
  os << "head=" << head_name(head) << '\n';
  os << "fc_size=" << fc_size << '\n';
  os << "dropout_rate=" << format_double(dropout_rate) << '\n';
  return os.str();
}

ArchSpec ArchSpec::parse(std::string_view text) {
  ArchSpec spec;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    std::string_view line = text.substr(pos, eol - pos);
    pos = eol + 1;
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError("arch: malformed line '" + std::string(line) + "'");
    const auto key = line.substr(0, eq);
    const auto value = line.substr(eq + 1);
    if (key == "input_size") {
      spec.input_size = parse_int(key, value);
    } else if (key == "input_channels") {
      spec.input_channels = parse_int(key, value);
    } else if (key == "blocks") {
      spec.block_channels.clear();
      std::size_t p = 0;
      while (p <= value.size()) {
        auto comma = value.find(',', p);
        if (comma == std::string_view::npos) comma = value.size();
        spec.block_channels.push_back(parse_int(key, value.substr(p, comma - p)));
        p = comma + 1;
      }
    } else if (key == "convs_per_block") {
      spec.convs_per_block = parse_int(key, value);
    } else if (key == "num_outputs") {
      spec.num_outputs = parse_int(key, value);
    } else if (key == "head") {
      spec.head = parse_head(value);
    } else if (key == "fc_size") {
      spec.fc_size = parse_int(key, value);
    } else if (key == "dropout_rate") {
      spec.dropout_rate = parse_double(key, value);
    } else {
      throw ConfigError("arch: unknown key '" + std::string(key) + "'");
    }
  }
  return spec;
}

// ---------------------------------------------------------------------------
// BasicSubClassifier

template <typename T>
BasicSubClassifier<T>::BasicSubClassifier(ArchSpec arch, Split split) : arch_(std::move(arch)), split_(split) {
  arch_.validate();
  if (split_ != Split::kFlat && arch_.num_outputs != 2) {
    throw ConfigError("arch: a ranking sub-classifier must have exactly 2 outputs");
  }
  auto cin = static_cast<std::size_t>(arch_.input_channels);
  for (int width : arch_.block_channels) {
    const auto cout = static_cast<std::size_t>(width);
    for (int j = 0; j < arch_.convs_per_block; ++j) {
      convs_.push_back({BasicTensor<T>(Shape{cout, cin, 3, 3}), BasicTensor<T>(Shape{cout})});
      cin = cout;
    }
  }
  const auto k = static_cast<std::size_t>(arch_.feature_channels());
  const auto c = static_cast<std::size_t>(arch_.num_outputs);
  if (arch_.head == HeadKind::kGapSoftmax) {
    out_w_ = BasicTensor<T>(Shape{k, c});
  } else {
    const auto fc = static_cast<std::size_t>(arch_.fc_size);
    fc_w_ = BasicTensor<T>(Shape{k, fc});
    fc_b_ = BasicTensor<T>(Shape{fc});
    bn_gamma_ = BasicTensor<T>(Shape{fc}, T(1));
    bn_beta_ = BasicTensor<T>(Shape{fc});
    bn_.running_mean = BasicTensor<T>(Shape{fc});
    bn_.running_var = BasicTensor<T>(Shape{fc}, T(1));
    out_w_ = BasicTensor<T>(Shape{fc, c});
    out_b_ = BasicTensor<T>(Shape{c});
  }
  for (auto& p : parameters()) p.set_requires_grad(true);
}

template <typename T>
void BasicSubClassifier<T>::initialize(std::uint64_t seed) {
  Rng rng(seed);
  for (auto& conv : convs_) {
    he_uniform(conv.weight, conv.weight.dim(1) * 9, rng);
    std::fill(conv.bias.mutable_data().begin(), conv.bias.mutable_data().end(), T(0));
  }
  if (arch_.head == HeadKind::kGapFcBnDropout) {
    he_uniform(fc_w_, fc_w_.dim(0), rng);
    std::fill(fc_b_.mutable_data().begin(), fc_b_.mutable_data().end(), T(0));
    std::fill(bn_gamma_.mutable_data().begin(), bn_gamma_.mutable_data().end(), T(1));
    std::fill(bn_beta_.mutable_data().begin(), bn_beta_.mutable_data().end(), T(0));
    std::fill(bn_.running_mean.mutable_data().begin(), bn_.running_mean.mutable_data().end(), T(0));
    std::fill(bn_.running_var.mutable_data().begin(), bn_.running_var.mutable_data().end(), T(1));
    std::fill(out_b_.mutable_data().begin(), out_b_.mutable_data().end(), T(0));
  }
  he_uniform(out_w_, out_w_.dim(0), rng);
}

template <typename T>
ForwardResult<T> BasicSubClassifier<T>::forward(Tape<T>& tape, const BasicTensor<T>& x, Mode mode, Rng* rng) {
  if (x.rank() != 4 || x.dim(1) != static_cast<std::size_t>(arch_.input_channels) ||
      x.dim(2) != static_cast<std::size_t>(arch_.input_size) ||
      x.dim(3) != static_cast<std::size_t>(arch_.input_size)) {
    throw DimensionError("forward: input " + shape_str(x.shape()) + " does not match arch input [N," +
                         std::to_string(arch_.input_channels) + "," + std::to_string(arch_.input_size) + "," +
                         std::to_string(arch_.input_size) + "]");
  }
  BasicTensor<T> h = x;
  std::size_t layer = 0;
  for (std::size_t b = 0; b < arch_.block_channels.size(); ++b) {
    for (int j = 0; j < arch_.convs_per_block; ++j, ++layer) {
      h = relu(tape, conv2d(tape, h, convs_[layer].weight, &convs_[layer].bias, 1, 1));
    }
    h = max_pool2d(tape, h, 2, 2);
  }
  ForwardResult<T> result;
  result.features = h;
  auto pooled = global_avg_pool(tape, h);
  if (arch_.head == HeadKind::kGapSoftmax) {
    result.logits = dense<T>(tape, pooled, out_w_, nullptr);
  } else {
    auto z = dense(tape, pooled, fc_w_, &fc_b_);
    z = batch_norm(tape, z, bn_gamma_, bn_beta_, bn_, mode);
    z = relu(tape, z);
    if (mode == Mode::kTrain && arch_.dropout_rate > 0.0) {
      if (rng == nullptr) throw StateError("forward: train-mode dropout needs an rng");
      z = dropout(tape, z, arch_.dropout_rate, mode, *rng);
    }
    result.logits = dense(tape, z, out_w_, &out_b_);
  }
  return result;
}

template <typename T>
std::vector<NamedTensor<T>> BasicSubClassifier<T>::state() const {
  std::vector<NamedTensor<T>> out;
  std::size_t layer = 0;
  for (std::size_t b = 0; b < arch_.block_channels.size(); ++b) {
    for (int j = 0; j < arch_.convs_per_block; ++j, ++layer) {
      const std::string prefix = "block" + std::to_string(b) + ".conv" + std::to_string(j);
      out.push_back({prefix + ".weight", convs_[layer].weight, true});
      out.push_back({prefix + ".bias", convs_[layer].bias, true});
    }
  }
  if (arch_.head == HeadKind::kGapSoftmax) {
    out.push_back({"head.out.weight", out_w_, true});
  } else {
    out.push_back({"head.fc.weight", fc_w_, true});
    out.push_back({"head.fc.bias", fc_b_, true});
    out.push_back({"head.bn.gamma", bn_gamma_, true});
    out.push_back({"head.bn.beta", bn_beta_, true});
    out.push_back({"head.bn.running_mean", bn_.running_mean, false});
    out.push_back({"head.bn.running_var", bn_.running_var, false});
    out.push_back({"head.out.weight", out_w_, true});
    out.push_back({"head.out.bias", out_b_, true});
  }
  return out;
}

template <typename T>
std::vector<BasicTensor<T>> BasicSubClassifier<T>::parameters() const {
  std::vector<BasicTensor<T>> out;
  for (auto& nt : state()) {
    if (nt.trainable) out.push_back(nt.tensor);
  }
  return out;
}

template <typename T>
std::size_t BasicSubClassifier<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.size();
  return n;
}

template <typename T>
void BasicSubClassifier<T>::zero_grad() {
  for (auto& p : parameters()) p.zero_grad();
}

template <typename T>
void BasicSubClassifier<T>::load_state(const std::vector<NamedTensor<T>>& values) {
  std::map<std::string, const BasicTensor<T>*> by_name;
  for (const auto& nt : values) by_name[nt.name] = &nt.tensor;
  for (auto& nt : state()) {
    auto it = by_name.find(nt.name);
    if (it == by_name.end()) throw DimensionError("load_state: missing tensor '" + nt.name + "'");
    if (it->second->shape() != nt.tensor.shape()) {
      throw DimensionError("load_state: tensor '" + nt.name + "' has shape " + shape_str(it->second->shape()) +
                           ", expected " + shape_str(nt.tensor.shape()));
    }
    auto dst = nt.tensor.mutable_data();
    auto src = it->second->data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
  if (by_name.size() != state().size()) throw DimensionError("load_state: unexpected extra tensors");
}

template <typename T>
BasicSubClassifier<T> BasicSubClassifier<T>::clone() const {
  BasicSubClassifier copy(arch_, split_);
  copy.load_state(state());
  return copy;
}

template <typename T>
std::uint64_t BasicSubClassifier<T>::fingerprint() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& nt : state()) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(nt.tensor.data().data());
    for (std::size_t i = 0; i < nt.tensor.size() * sizeof(T); ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

template class BasicSubClassifier<float>;
template class BasicSubClassifier<double>;

SubClassifier build_stage1_net(const ArchSpec& spec, Split split, std::uint64_t seed) {
  if (spec.head != HeadKind::kGapSoftmax) {
    throw ConfigError("build_stage1_net: head must be gap_softmax, got " + std::string(head_name(spec.head)));
  }
  SubClassifier net(spec, split);
  net.initialize(seed);
  return net;
}

SubClassifier build_stage2_net(const ArchSpec& spec, Split split, std::uint64_t seed) {
  if (spec.head != HeadKind::kGapFcBnDropout) {
    throw ConfigError("build_stage2_net: head must be gap_fc_bn_dropout, got " +
                      std::string(head_name(spec.head)));
  }
  SubClassifier net(spec, split);
  net.initialize(seed);
  return net;
}

// ---------------------------------------------------------------------------
// Optimization

template <typename T>
void rmsprop_step(std::span<T> params, std::span<const T> grads, std::span<T> state, double lr,
                  const RmsPropSettings& settings) {
  if (params.size() != grads.size() || params.size() != state.size()) {
    throw DimensionError("rmsprop_step: parameter, gradient and state sizes differ (" +
                         std::to_string(params.size()) + ", " + std::to_string(grads.size()) + ", " +
                         std::to_string(state.size()) + ")");
  }
  const T rho = static_cast<T>(settings.rho);
  const T eps = static_cast<T>(settings.eps);
  const T rate = static_cast<T>(lr);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const T g = grads[i];
    state[i] = rho * state[i] + (T(1) - rho) * g * g;
    params[i] -= rate * g / (std::sqrt(state[i]) + eps);
  }
}

template void rmsprop_step<float>(std::span<float>, std::span<const float>, std::span<float>, double,
                                  const RmsPropSettings&);
template void rmsprop_step<double>(std::span<double>, std::span<const double>, std::span<double>, double,
                                   const RmsPropSettings&);

void RmsProp::step(std::vector<Tensor>& params, double lr) {
  if (state_.empty()) {
    for (const auto& p : params) state_.emplace_back(p.size(), 0.0f);
  }
  if (state_.size() != params.size()) throw DimensionError("RmsProp: parameter list changed between steps");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].has_grad()) continue;
    rmsprop_step<float>(params[i].mutable_data(), params[i].grad(), state_[i], lr, settings_);
  }
}

double lr_at_epoch(double initial, int epoch, double decay) {
  if (epoch < 0) throw ArgumentError("lr_at_epoch: epoch must be >= 0, got " + std::to_string(epoch));
  return initial * std::pow(decay, epoch);
}

}  // namespace ordirank
