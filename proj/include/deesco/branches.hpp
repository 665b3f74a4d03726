#pragma once

// The four weak-predictor architectures. Every branch shares the same trunk
// design (3x3 convs + BN + ReLU shrinking the eye crops to a 16x16 feature
// stage, where the position mask joins as an extra channel) and differs in
// the head that turns features into an SxS heatmap:
//   Ba - fully-connected head to 2 coordinates, rendered as a Gaussian bump
//   Rh - fully-connected head to S^2 values reshaped into the heatmap
//   Fc - transposed-conv upsampling stack plus a final 1x1 conv, no skips
//   Ou - two fully-connected marginal heads combined by outer product

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "deesco/heatmap.hpp"
#include "deesco/ops.hpp"
#include "deesco/rng.hpp"
#include "deesco/tensor.hpp"

namespace deesco {

enum class BranchKind { Ba, Rh, Fc, Ou };
enum class Eyes { Left, Right, Both };

inline const char* to_string(BranchKind k) {
  switch (k) {
    case BranchKind::Ba: return "Ba";
    case BranchKind::Rh: return "Rh";
    case BranchKind::Fc: return "Fc";
    case BranchKind::Ou: return "Ou";
  }
  return "?";
}

inline const char* to_string(Eyes e) {
  switch (e) {
    case Eyes::Left: return "left";
    case Eyes::Right: return "right";
    case Eyes::Both: return "both";
  }
  return "?";
}

inline BranchKind branch_kind_from_string(const std::string& s) {
  if (s == "Ba") return BranchKind::Ba;
  if (s == "Rh") return BranchKind::Rh;
  if (s == "Fc") return BranchKind::Fc;
  if (s == "Ou") return BranchKind::Ou;
  throw ConfigError("unknown branch kind '" + s + "' (expected Ba/Rh/Fc/Ou)");
}

inline Eyes eyes_from_string(const std::string& s) {
  if (s == "left" || s == "l") return Eyes::Left;
  if (s == "right" || s == "r") return Eyes::Right;
  if (s == "both" || s == "lr" || s == "l+r") return Eyes::Both;
  throw ConfigError("unknown eyes selector '" + s + "'");
}

constexpr std::size_t kMaskSize = 16;    // position-mask grid
constexpr std::size_t kTrunkStage = 16;  // spatial size where the mask joins

struct BranchConfig {
  BranchKind kind = BranchKind::Rh;
  Eyes eyes = Eyes::Both;
  std::size_t crop_h = 128, crop_w = 128;  // per-eye crop
  std::size_t heatmap_size = 128;          // S
  std::vector<std::size_t> conv_channels{16, 32, 64};
  std::vector<std::size_t> fc_widths{128};
  double gaussian_sigma = 0.05;  // Ba rendering, normalized units
};

inline bool is_pow2(std::size_t v) { return v != 0 && (v & (v - 1)) == 0; }

/// Effective trunk input width (both eyes concatenate side by side).
inline std::size_t effective_width(const BranchConfig& c) {
  return c.eyes == Eyes::Both ? 2 * c.crop_w : c.crop_w;
}

inline void validate_branch_config(const BranchConfig& c) {
  if (c.heatmap_size < 8 || !is_pow2(c.heatmap_size))
    throw ConfigError("branch: heatmap_size must be a power of two >= 8, got " +
                      std::to_string(c.heatmap_size));
  const std::size_t weff = effective_width(c);
  for (auto [name, v] : {std::pair{"crop height", c.crop_h},
                         std::pair{"effective crop width", weff}}) {
    if (v < kTrunkStage || v % kTrunkStage != 0 || !is_pow2(v / kTrunkStage))
      throw ConfigError(std::string("branch: ") + name + " " +
                        std::to_string(v) +
                        " cannot reach the 16x16 stage by stride-2 halvings");
  }
  if (c.kind == BranchKind::Fc && c.heatmap_size < kTrunkStage)
    throw ConfigError(
        "branch Fc: heatmap_size " + std::to_string(c.heatmap_size) +
        " below the 16x16 feature stage: impossible upsampling geometry");
  if (c.kind == BranchKind::Ba && !(c.gaussian_sigma > 0.0))
    throw ConfigError("branch Ba: gaussian_sigma must be > 0");
  if (c.conv_channels.empty())
    throw ConfigError("branch: conv_channels must not be empty");
}

/// One training batch staged as tensors. Crops are NCHW in [0,1]; the mask is
/// a binary [B,1,16,16] map; targets are normalized gaze in [-1,1]^2.
struct BatchTensors {
  Tensor left, right;
  Tensor mask;
  Tensor target;
  std::vector<std::size_t> ids;
};

namespace detail {

struct Conv2dLayer {
  Tensor w, b;
  std::size_t sh = 1, sw = 1, ph = 0, pw = 0;
  Tensor apply(const Tensor& x) const { return conv2d_hw(x, w, b, sh, sw, ph, pw); }
};

struct TConv2dLayer {
  Tensor w, b;
  std::size_t stride = 2, pad = 1;
  Tensor apply(const Tensor& x) const {
    return transposed_conv2d(x, w, b, stride, pad);
  }
};

struct DenseLayer {
  Tensor w, b;
  Tensor apply(const Tensor& x) const { return dense(x, w, b); }
};

struct BatchNormLayer {
  Tensor gamma, beta;
  Tensor running_mean, running_var;
  Tensor apply(const Tensor& x, Mode mode) {
    return batch_norm(x, gamma, beta, running_mean, running_var, mode);
  }
};

inline Tensor init_weight(Shape shape, std::size_t fan_in, Rng& rng) {
  const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = sd * rng.truncated_normal();
  return Tensor::from_values(std::move(shape), std::move(v), true);
}

}  // namespace detail

/// One configured weak predictor: trunk + head, with its own parameters.
class WeakPredictor {
 public:
  WeakPredictor(const BranchConfig& cfg, int index, std::uint64_t seed)
      : cfg_(cfg), index_(index) {
    validate_branch_config(cfg_);
    Rng rng(seed);
    const std::string prefix = "branch" + std::to_string(index_) + "/";

    // Trunk: stride-2 halvings per axis until the 16x16 stage.
    const std::size_t weff = effective_width(cfg_);
    std::size_t n_h = 0, n_w = 0;
    for (std::size_t v = cfg_.crop_h; v > kTrunkStage; v /= 2) ++n_h;
    for (std::size_t v = weff; v > kTrunkStage; v /= 2) ++n_w;
    const std::size_t stages = std::max(n_h, n_w);
    std::size_t in_ch = 3;
    for (std::size_t i = 0; i < stages; ++i) {
      const std::size_t out_ch =
          cfg_.conv_channels[std::min(i, cfg_.conv_channels.size() - 1)];
      detail::Conv2dLayer conv;
      conv.sh = i < n_h ? 2 : 1;
      conv.sw = i < n_w ? 2 : 1;
      conv.ph = conv.pw = 1;
      conv.w = add_param(prefix + "trunk/conv" + std::to_string(i) + "/weight",
                         detail::init_weight({out_ch, in_ch, 3, 3},
                                             in_ch * 9, rng));
      conv.b = add_param(prefix + "trunk/conv" + std::to_string(i) + "/bias",
                         Tensor::zeros({out_ch}, true));
      trunk_.push_back(conv);
      trunk_bn_.push_back(
          make_bn(prefix + "trunk/bn" + std::to_string(i), out_ch));
      in_ch = out_ch;
    }
    feature_ch_ = in_ch + 1;  // + position mask channel
    flat_dim_ = feature_ch_ * kTrunkStage * kTrunkStage;
    trunk_param_count_ = count_values();

    const std::size_t s = cfg_.heatmap_size;
    if (cfg_.kind == BranchKind::Fc) {
      std::size_t up_stages = 0;
      for (std::size_t v = kTrunkStage; v < s; v *= 2) ++up_stages;
      std::vector<std::size_t> rev(cfg_.conv_channels.rbegin(),
                                   cfg_.conv_channels.rend());
      std::size_t ch = feature_ch_;
      for (std::size_t i = 0; i < up_stages; ++i) {
        const std::size_t out_ch = rev[std::min(i + 1, rev.size() - 1)];
        detail::TConv2dLayer up;
        up.w = add_param(prefix + "head/up" + std::to_string(i) + "/weight",
                         detail::init_weight({ch, out_ch, 4, 4}, ch * 16, rng));
        up.b = add_param(prefix + "head/up" + std::to_string(i) + "/bias",
                         Tensor::zeros({out_ch}, true));
        up_.push_back(up);
        up_bn_.push_back(make_bn(prefix + "head/upbn" + std::to_string(i),
                                 out_ch));
        ch = out_ch;
      }
      final_.w = add_param(prefix + "head/final/weight",
                           detail::init_weight({1, ch, 1, 1}, ch, rng));
      final_.b = add_param(prefix + "head/final/bias", Tensor::zeros({1}, true));
    } else {
      std::size_t width = flat_dim_;
      for (std::size_t i = 0; i < cfg_.fc_widths.size(); ++i) {
        const std::size_t out_w = cfg_.fc_widths[i];
        detail::DenseLayer fc;
        fc.w = add_param(prefix + "head/fc" + std::to_string(i) + "/weight",
                         detail::init_weight({out_w, width}, width, rng));
        fc.b = add_param(prefix + "head/fc" + std::to_string(i) + "/bias",
                         Tensor::zeros({out_w}, true));
        fc_.push_back(fc);
        fc_bn_.push_back(make_bn(prefix + "head/fcbn" + std::to_string(i),
                                 out_w));
        width = out_w;
      }
      auto out_dense = [&](const char* name, std::size_t out_w) {
        detail::DenseLayer d;
        d.w = add_param(prefix + "head/" + name + "/weight",
                        detail::init_weight({out_w, width}, width, rng));
        d.b = add_param(prefix + "head/" + name + "/bias",
                        Tensor::zeros({out_w}, true));
        return d;
      };
      switch (cfg_.kind) {
        case BranchKind::Rh: out_ = out_dense("out", s * s); break;
        case BranchKind::Ba: out_ = out_dense("out", 2); break;
        case BranchKind::Ou:
          out_a_ = out_dense("a", s);
          out_b_ = out_dense("b", s);
          break;
        case BranchKind::Fc: break;  // handled above
      }
    }
  }

  /// Raw (pre-softmax) heatmaps, one SxS map per sample.
  Tensor forward(const BatchTensors& batch, Mode mode) {
    Tensor input = select_input(batch);
    check_input(input, batch.mask);
    ++forward_calls_;

    Tensor x = input;
    for (std::size_t i = 0; i < trunk_.size(); ++i)
      x = relu(trunk_bn_[i].apply(trunk_[i].apply(x), mode));
    x = concat_channels(x, batch.mask);

    const std::size_t b = x.dim(0);
    const std::size_t s = cfg_.heatmap_size;
    if (cfg_.kind == BranchKind::Fc) {
      for (std::size_t i = 0; i < up_.size(); ++i)
        x = relu(up_bn_[i].apply(up_[i].apply(x), mode));
      return reshape(final_.apply(x), {b, s, s});
    }

    Tensor f = reshape(x, {b, flat_dim_});
    for (std::size_t i = 0; i < fc_.size(); ++i)
      f = relu(fc_bn_[i].apply(fc_[i].apply(f), mode));
    switch (cfg_.kind) {
      case BranchKind::Rh:
        return reshape(out_.apply(f), {b, s, s});
      case BranchKind::Ba:
        return coords_to_gaussian_heatmap(out_.apply(f), s,
                                          cfg_.gaussian_sigma);
      case BranchKind::Ou:
        return outer_product(out_a_.apply(f), out_b_.apply(f));
      default:
        throw UsageError("unreachable branch kind");
    }
  }

  const BranchConfig& config() const { return cfg_; }
  int index() const { return index_; }
  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  std::vector<Parameter>& buffers() { return buffers_; }
  const std::vector<Parameter>& buffers() const { return buffers_; }

  std::size_t param_count() const { return count_values(); }
  std::size_t trunk_param_count() const { return trunk_param_count_; }
  std::size_t head_param_count() const {
    return count_values() - trunk_param_count_;
  }

  long forward_calls() const { return forward_calls_; }
  void reset_forward_calls() { forward_calls_ = 0; }

 private:
  Tensor add_param(std::string name, Tensor t) {
    params_.push_back({std::move(name), t});
    return t;
  }

  detail::BatchNormLayer make_bn(const std::string& prefix, std::size_t c) {
    detail::BatchNormLayer bn;
    bn.gamma = add_param(prefix + "/gamma", Tensor::full({c}, 1.0, true));
    bn.beta = add_param(prefix + "/beta", Tensor::zeros({c}, true));
    bn.running_mean = Tensor::zeros({c});
    bn.running_var = Tensor::full({c}, 1.0);
    buffers_.push_back({prefix + "/running_mean", bn.running_mean});
    buffers_.push_back({prefix + "/running_var", bn.running_var});
    return bn;
  }

  std::size_t count_values() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.tensor.numel();
    return n;
  }

  Tensor select_input(const BatchTensors& batch) const {
    switch (cfg_.eyes) {
      case Eyes::Left: return batch.left;
      case Eyes::Right: return batch.right;
      case Eyes::Both: return concat(batch.left, batch.right, 3);
    }
    throw UsageError("unreachable eyes selector");
  }

  void check_input(const Tensor& input, const Tensor& mask) const {
    if (input.rank() != 4 || input.dim(1) != 3 || input.dim(2) != cfg_.crop_h ||
        input.dim(3) != effective_width(cfg_))
      throw ShapeError("branch" + std::to_string(index_) + ": crops " +
                       shape_str(input.shape()) + " do not match config " +
                       std::to_string(cfg_.crop_h) + "x" +
                       std::to_string(effective_width(cfg_)));
    if (mask.rank() != 4 || mask.dim(0) != input.dim(0) || mask.dim(1) != 1 ||
        mask.dim(2) != kMaskSize || mask.dim(3) != kMaskSize)
      throw ShapeError("branch" + std::to_string(index_) +
                       ": position mask must be [B,1,16,16], got " +
                       shape_str(mask.shape()));
  }

  BranchConfig cfg_;
  int index_ = 0;
  std::vector<detail::Conv2dLayer> trunk_;
  std::vector<detail::BatchNormLayer> trunk_bn_;
  std::vector<detail::DenseLayer> fc_;
  std::vector<detail::BatchNormLayer> fc_bn_;
  detail::DenseLayer out_, out_a_, out_b_;
  std::vector<detail::TConv2dLayer> up_;
  std::vector<detail::BatchNormLayer> up_bn_;
  detail::Conv2dLayer final_;
  std::vector<Parameter> params_;
  std::vector<Parameter> buffers_;
  std::size_t trunk_param_count_ = 0;
  std::size_t feature_ch_ = 0;
  std::size_t flat_dim_ = 0;
  long forward_calls_ = 0;
};

/// Convenience constructor mirroring the two-argument build entry point.
inline std::unique_ptr<WeakPredictor> build_branch(const BranchConfig& cfg,
                                                   std::uint64_t rng_seed,
                                                   int index = 0) {
  return std::make_unique<WeakPredictor>(cfg, index, rng_seed);
}

}  // namespace deesco
