#include "moments/propagation.hpp"

#include <algorithm>
#include <cmath>

#include "moments/error.hpp"

namespace moments {

namespace {

class BnHook {
 public:
  explicit BnHook(const PropagateOptions& opts) : opts_(opts) {}

  PairState apply(const PairState& y, double eps, BNStats* used = nullptr) {
    PairState z;
    if (opts_.frozen_stats != nullptr) {
      if (next_ >= opts_.frozen_stats->size()) throw ShapeError("frozen BN statistics exhausted");
      const BNStats& s = (*opts_.frozen_stats)[next_];
      z = bn_apply(y, s, eps);
      if (used != nullptr) *used = s;
      if (opts_.record_stats != nullptr) opts_.record_stats->push_back(s);
    } else {
      auto [out, s] = bn_pair_step(y, eps);
      z = std::move(out);
      if (opts_.record_stats != nullptr) opts_.record_stats->push_back(s);
      if (used != nullptr) *used = std::move(s);
    }
    ++next_;
    return z;
  }

 private:
  const PropagateOptions& opts_;
  std::size_t next_ = 0;
};

PairState conv_pair(const PairState& state, const ConvParams& params) {
  return {conv_periodic(state.signal, params, BiasMode::Apply), conv_periodic(state.noise, params, BiasMode::Skip),
          Location::PostConv};
}

using BranchEmit = std::function<void(int h, const PairState&, const PairState* skip)>;

PairState run_resnet_unit(const PairState& in, const std::function<ConvParams(int)>& params, int H,
                          Activation activation, double eps, bool bn, BnHook& hook, const BranchEmit& emit,
                          std::vector<BNStats>* stats) {
  PairState cur = in;
  for (int h = 1; h <= H; ++h) {
    if (bn) {
      BNStats s;
      cur = hook.apply(cur, eps, &s);
      if (stats != nullptr) stats->push_back(std::move(s));
      emit(h, cur, nullptr);
      cur = phi_pair_step(cur, activation);
    } else {
      cur = phi_pair_step(cur, activation);
      emit(h, cur, nullptr);
    }
    cur = conv_pair(cur, params(h));
    emit(h, cur, h == H ? &in : nullptr);
  }
  cur.signal += in.signal;
  cur.noise += in.noise;
  cur.location = Location::ResidualAggregate;
  return cur;
}

}  // namespace

std::string to_string(Location loc) {
  switch (loc) {
    case Location::Input: return "input";
    case Location::PostConv: return "post_conv";
    case Location::PostBN: return "post_bn";
    case Location::PostActivation: return "post_activation";
    case Location::ResidualAggregate: return "residual_aggregate";
  }
  return "unknown";
}

std::string to_string(Activation act) {
  switch (act) {
    case Activation::ReLU: return "relu";
    case Activation::Tanh: return "tanh";
    case Activation::Linear: return "linear";
  }
  return "unknown";
}

std::string to_string(Family family) {
  switch (family) {
    case Family::Vanilla: return "vanilla";
    case Family::BNFeedforward: return "bn_feedforward";
    case Family::BNResnet: return "bn_resnet";
    case Family::ResnetNoBN: return "resnet_no_bn";
  }
  return "unknown";
}

Activation parse_activation(const std::string& name) {
  if (name == "relu") return Activation::ReLU;
  if (name == "tanh") return Activation::Tanh;
  if (name == "linear") return Activation::Linear;
  throw ParameterError("unknown activation '" + name + "'");
}

Family parse_family(const std::string& name) {
  if (name == "vanilla") return Family::Vanilla;
  if (name == "bn_feedforward") return Family::BNFeedforward;
  if (name == "bn_resnet") return Family::BNResnet;
  if (name == "resnet_no_bn") return Family::ResnetNoBN;
  throw ParameterError("unknown family '" + name + "'");
}

PairState::PairState(BatchedField s, BatchedField n, Location loc)
    : signal(std::move(s)), noise(std::move(n)), location(loc) {
  if (!(signal.shape() == noise.shape())) throw ShapeError("signal and noise shapes differ");
}

void validate(const ArchitectureSpec& a) {
  if (a.depth < 1) throw ParameterError("depth must be >= 1");
  if (a.is_resnet() && a.residual_depth < 1) throw ParameterError("residual depth must be >= 1");
  if (a.width < 1) throw ParameterError("width must be >= 1");
  if (a.kernel_extent < 1 || a.kernel_extent % 2 == 0) throw ParameterError("kernel extent must be odd");
  if (a.spatial_extent < 1) throw ParameterError("spatial extent must be >= 1");
  if (a.spatial_dims != 1 && a.spatial_dims != 2) throw ParameterError("spatial dims must be 1 or 2");
  if (!(a.bn_epsilon >= 0.0)) throw ParameterError("bn epsilon must be >= 0");
  if (a.input_channels < 1) throw ParameterError("input channels must be >= 1");
  if (a.is_resnet() && a.input_channels != a.width) {
    throw ParameterError("resnets need input channels equal to the width");
  }
}

BNStats batch_stats(const BatchedField& field) {
  const auto X = field.matrix();
  const double inv = 1.0 / static_cast<double>(X.rows());
  const Eigen::RowVectorXd mean = X.colwise().sum() * inv;
  const Eigen::RowVectorXd var = (X.rowwise() - mean).array().square().colwise().sum() * inv;
  BNStats s;
  s.mean.assign(mean.data(), mean.data() + mean.size());
  s.var.assign(var.data(), var.data() + var.size());
  return s;
}

PairState phi_pair_step(const PairState& state, Activation activation) {
  PairState out = state;
  out.location = Location::PostActivation;
  auto s = out.signal.values();
  auto n = out.noise.values();
  switch (activation) {
    case Activation::ReLU:
      for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] < 0.0) {
          s[i] = 0.0;
          n[i] = 0.0;
        } else if (s[i] == 0.0) {
          n[i] *= 0.5;
        }
      }
      break;
    case Activation::Tanh:
      for (std::size_t i = 0; i < s.size(); ++i) {
        const double t = std::tanh(s[i]);
        s[i] = t;
        n[i] *= 1.0 - t * t;
      }
      break;
    case Activation::Linear:
      break;
  }
  return out;
}

PairState bn_apply(const PairState& state, const BNStats& stats, double eps) {
  const int C = state.signal.channels();
  if (stats.mean.size() != static_cast<std::size_t>(C) || stats.var.size() != static_cast<std::size_t>(C)) {
    throw ShapeError("BN statistics do not match the channel count");
  }
  Eigen::RowVectorXd scale(C);
  Eigen::RowVectorXd mean(C);
  for (int c = 0; c < C; ++c) {
    const double denom = stats.var[c] + eps;
    if (!(denom > 0.0)) throw DegenerateError("BN channel " + std::to_string(c) + " has zero variance and eps = 0");
    scale[c] = 1.0 / std::sqrt(denom);
    mean[c] = stats.mean[c];
  }
  PairState out = state;
  out.location = Location::PostBN;
  out.signal.matrix() = ((state.signal.matrix().rowwise() - mean).array().rowwise() * scale.array()).matrix();
  out.noise.matrix() = (state.noise.matrix().array().rowwise() * scale.array()).matrix();
  return out;
}

std::pair<PairState, BNStats> bn_pair_step(const PairState& state, double eps) {
  BNStats stats = batch_stats(state.signal);
  PairState out = bn_apply(state, stats, eps);
  return {std::move(out), std::move(stats)};
}

PairState vanilla_layer(const PairState& state, const ConvParams& params, Activation activation) {
  return phi_pair_step(conv_pair(state, params), activation);
}

BnffLayerResult bnff_layer(const PairState& state, const ConvParams& params, Activation activation, double eps) {
  BnffLayerResult r;
  r.y = conv_pair(state, params);
  auto [z, stats] = bn_pair_step(r.y, eps);
  r.z = std::move(z);
  r.stats = std::move(stats);
  r.x = phi_pair_step(r.z, activation);
  return r;
}

ResnetUnitResult resnet_unit(const PairState& state, const std::vector<ConvParams>& params, Activation activation,
                             double eps, bool bn_enabled) {
  if (params.empty()) throw ParameterError("a residual unit needs at least one conv");
  ResnetUnitResult r;
  PropagateOptions opts;
  BnHook hook(opts);
  r.output = run_resnet_unit(
      state, [&](int h) { return params[static_cast<std::size_t>(h - 1)]; }, static_cast<int>(params.size()),
      activation, eps, bn_enabled, hook, [&](int, const PairState& s, const PairState*) { r.substeps.push_back(s); },
      &r.stats);
  return r;
}

ConvParams WeightStream::draw(int layer, int h, int K, int d, int c_in, int c_out) const {
  Engine eng = layer == resample_layer
                   ? make_engine(master_seed, Stream::Probe, realization, static_cast<std::uint64_t>(layer) << 8 | h,
                                 resample)
                   : make_engine(master_seed, Stream::Weights, realization, static_cast<std::uint64_t>(layer),
                                 static_cast<std::uint64_t>(h));
  return he_init_conv(K, d, c_in, c_out, eng);
}

int snapshots_per_layer(const ArchitectureSpec& arch) {
  switch (arch.family) {
    case Family::Vanilla: return 2;
    case Family::BNFeedforward: return 3;
    case Family::BNResnet:
    case Family::ResnetNoBN: return 2 * arch.residual_depth + 1;
  }
  return 0;
}

PairState propagate(const ArchitectureSpec& arch, PairState input, const WeightStream& weights,
                    const SnapshotSink& sink, const PropagateOptions& options) {
  validate(arch);
  const int first = options.first_layer;
  if (first < 1 || first > arch.depth) throw ParameterError("first layer out of range");
  const int expected_channels = first == 1 ? arch.input_channels : arch.width;
  if (input.signal.channels() != expected_channels) {
    throw ShapeError("input has " + std::to_string(input.signal.channels()) + " channels, architecture expects " +
                     std::to_string(expected_channels));
  }
  if (input.signal.dims() != arch.spatial_dims || input.signal.extent() != arch.spatial_extent) {
    throw ShapeError("input spatial geometry does not match the architecture");
  }
  const int L = options.last_layer < 0 ? arch.depth : std::min(options.last_layer, arch.depth);
  const int K = arch.kernel_extent;
  const int d = arch.spatial_dims;
  const int N = arch.width;
  BnHook hook(options);

  PairState cur = std::move(input);
  cur.location = Location::Input;
  sink(Snapshot{first - 1, 0, Location::Input, &cur, nullptr});

  for (int l = first; l <= L; ++l) {
    const int c_in = l == 1 ? arch.input_channels : N;
    switch (arch.family) {
      case Family::Vanilla: {
        PairState y = conv_pair(cur, weights.draw(l, 0, K, d, c_in, N));
        sink(Snapshot{l, 0, Location::PostConv, &y, nullptr});
        cur = phi_pair_step(y, arch.activation);
        sink(Snapshot{l, 0, Location::PostActivation, &cur, nullptr});
        break;
      }
      case Family::BNFeedforward: {
        PairState y = conv_pair(cur, weights.draw(l, 0, K, d, c_in, N));
        sink(Snapshot{l, 0, Location::PostConv, &y, nullptr});
        PairState z = hook.apply(y, arch.bn_epsilon);
        y = PairState{};
        sink(Snapshot{l, 0, Location::PostBN, &z, nullptr});
        cur = phi_pair_step(z, arch.activation);
        sink(Snapshot{l, 0, Location::PostActivation, &cur, nullptr});
        break;
      }
      case Family::BNResnet:
      case Family::ResnetNoBN: {
        const bool bn = arch.family == Family::BNResnet;
        cur = run_resnet_unit(
            cur, [&](int h) { return weights.draw(l, h, K, d, N, N); }, arch.residual_depth, arch.activation,
            arch.bn_epsilon, bn, hook,
            [&](int h, const PairState& s, const PairState* skip) {
              sink(Snapshot{l, h, s.location, &s, skip});
            },
            nullptr);
        sink(Snapshot{l, 0, Location::ResidualAggregate, &cur, nullptr});
        break;
      }
    }
  }
  return cur;
}

}  // namespace moments
