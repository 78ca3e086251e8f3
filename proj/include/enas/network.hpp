#pragma once

// Layer composition for the searchable networks: conv -> norm -> activation
// units, inverted residual blocks, and a walker that runs a whole architecture
// given a way to fetch each weight by path and active shape.

#include <map>
#include <string>
#include <vector>

#include "enas/autograd.hpp"
#include "enas/search_space.hpp"

namespace enas {

template <class T>
using StatsMap = std::map<std::string, NormStats<T>>;

/// Where normalization layers take their statistics from.
template <class T>
struct NormContext {
  NormMode mode = NormMode::train;
  const StatsMap<T>* calib = nullptr;  // read in eval mode
  StatsMap<T>* record = nullptr;       // written in train mode when set
};

template <class T>
Var<T> activate(const Var<T>& x, Activation act) {
  return act == Activation::hswish ? hswish(x) : relu(x);
}

template <class T>
Var<T> apply_norm(const Var<T>& x, const Var<T>& scale, const Var<T>& shift, NormContext<T>& ctx,
                  const std::string& path) {
  if (ctx.mode == NormMode::eval) {
    const NormStats<T>* stats = nullptr;
    if (ctx.calib) {
      auto it = ctx.calib->find(path);
      if (it != ctx.calib->end()) stats = &it->second;
    }
    if (!stats) throw MissingCalibrationError("no calibration statistics for normalization layer " + path);
    return normalize_batch(x, scale, shift, NormMode::eval, stats);
  }
  if (ctx.record) {
    NormStats<T> stats;
    auto y = normalize_batch(x, scale, shift, NormMode::train, static_cast<const NormStats<T>*>(nullptr), &stats);
    (*ctx.record)[path] = std::move(stats);
    return y;
  }
  return normalize_batch(x, scale, shift, NormMode::train);
}

/// Parameter tensors of one inverted residual block at their active shapes.
template <class T>
struct BlockWeights {
  Var<T> expand_conv, expand_scale, expand_shift;  // unused when !expand_conv
  Var<T> dw_conv, dw_scale, dw_shift;
  Var<T> project_conv, project_scale, project_shift;
};

/// expand 1x1 -> norm -> act -> depthwise kxk -> norm -> act -> project 1x1
/// -> norm (+ identity when residual).
template <class T>
Var<T> inverted_residual(const Var<T>& x, const BlockGeometry& g, const BlockWeights<T>& w, Activation act,
                         NormContext<T>& ctx, const std::string& path) {
  Var<T> h = x;
  if (g.expand_conv) {
    h = conv2d(h, w.expand_conv, 1, 0, 1);
    h = activate(apply_norm(h, w.expand_scale, w.expand_shift, ctx, path + "/expand/bn"), act);
  }
  h = conv2d(h, w.dw_conv, g.stride, g.kernel / 2, g.mid);
  h = activate(apply_norm(h, w.dw_scale, w.dw_shift, ctx, path + "/dw/bn"), act);
  h = conv2d(h, w.project_conv, 1, 0, 1);
  h = apply_norm(h, w.project_scale, w.project_shift, ctx, path + "/project/bn");
  if (g.residual) h = add(h, x);
  return h;
}

/// Shape of a weight as requested by the walker: the active extent along each
/// axis plus, for kernel axes, the active kernel size (always centered).
struct WeightRequest {
  std::string path;
  Shape active;  // e.g. [out, in, k, k] or [c]
};

namespace detail {

inline Shape conv_shape(int out, int in_per_group, int k) {
  return {static_cast<std::size_t>(out), static_cast<std::size_t>(in_per_group), static_cast<std::size_t>(k),
          static_cast<std::size_t>(k)};
}

inline Shape vec_shape(int n) { return {static_cast<std::size_t>(n)}; }

}  // namespace detail

/// Every weight `run_network` fetches for `arch`, in fetch order.
inline std::vector<WeightRequest> weight_requests(const SearchSpace& space, const ArchConfig& arch) {
  using detail::conv_shape;
  using detail::vec_shape;
  std::vector<WeightRequest> out;
  auto norm = [&](const std::string& p, int c) {
    out.push_back({p + "/scale", vec_shape(c)});
    out.push_back({p + "/shift", vec_shape(c)});
  };
  auto block = [&](const std::string& p, const BlockGeometry& g) {
    if (g.expand_conv) {
      out.push_back({p + "/expand/conv", conv_shape(g.mid, g.in, 1)});
      norm(p + "/expand/bn", g.mid);
    }
    out.push_back({p + "/dw/conv", conv_shape(g.mid, 1, g.kernel)});
    norm(p + "/dw/bn", g.mid);
    out.push_back({p + "/project/conv", conv_shape(g.out, g.mid, 1)});
    norm(p + "/project/bn", g.out);
  };
  out.push_back({"stem/conv", conv_shape(space.stem.out, space.in_channels, space.stem.kernel)});
  norm("stem/bn", space.stem.out);
  if (space.first_block.out > 0) block("first", first_block_geometry(space));
  std::size_t stage = 0, in_stage = 0;
  for (const auto& g : active_blocks(space, arch)) {
    while (in_stage >= static_cast<std::size_t>(arch.depths[stage])) {
      ++stage;
      in_stage = 0;
    }
    block("stage" + std::to_string(stage) + "/block" + std::to_string(in_stage), g);
    ++in_stage;
  }
  int channels = stages_output_channels(space, arch.width_index);
  if (space.final_conv > 0) {
    out.push_back({"final/conv", conv_shape(space.final_conv, channels, 1)});
    norm("final/bn", space.final_conv);
    channels = space.final_conv;
  }
  if (space.feature_mix > 0) {
    out.push_back({"mix/conv", conv_shape(space.feature_mix, channels, 1)});
    channels = space.feature_mix;
  }
  out.push_back({"classifier/weight", {static_cast<std::size_t>(space.classes), static_cast<std::size_t>(channels)}});
  out.push_back({"classifier/bias", vec_shape(space.classes)});
  return out;
}

/// Runs `arch` on `x`. `fetch(WeightRequest)` must return the weight at the
/// requested active shape. With `features_only` the walk stops before global
/// pooling and returns the final feature map.
template <class T, class Fetch>
Var<T> run_network(const SearchSpace& space, const ArchConfig& arch, const Var<T>& x, NormContext<T>& ctx,
                   Fetch&& fetch, bool features_only = false) {
  using detail::conv_shape;
  using detail::vec_shape;
  const Activation act = space.activation;
  auto norm_pair = [&](const std::string& p, int c) {
    return std::pair{fetch(WeightRequest{p + "/scale", vec_shape(c)}), fetch(WeightRequest{p + "/shift", vec_shape(c)})};
  };
  auto block_weights = [&](const std::string& p, const BlockGeometry& g) {
    BlockWeights<T> w;
    if (g.expand_conv) {
      w.expand_conv = fetch(WeightRequest{p + "/expand/conv", conv_shape(g.mid, g.in, 1)});
      std::tie(w.expand_scale, w.expand_shift) = norm_pair(p + "/expand/bn", g.mid);
    }
    w.dw_conv = fetch(WeightRequest{p + "/dw/conv", conv_shape(g.mid, 1, g.kernel)});
    std::tie(w.dw_scale, w.dw_shift) = norm_pair(p + "/dw/bn", g.mid);
    w.project_conv = fetch(WeightRequest{p + "/project/conv", conv_shape(g.out, g.mid, 1)});
    std::tie(w.project_scale, w.project_shift) = norm_pair(p + "/project/bn", g.out);
    return w;
  };

  const auto& st = space.stem;
  Var<T> h = conv2d(x, fetch(WeightRequest{"stem/conv", conv_shape(st.out, space.in_channels, st.kernel)}), st.stride,
                    st.kernel / 2, 1);
  auto [s_scale, s_shift] = norm_pair("stem/bn", st.out);
  h = activate(apply_norm(h, s_scale, s_shift, ctx, "stem/bn"), act);

  if (space.first_block.out > 0) {
    const auto g = first_block_geometry(space);
    h = inverted_residual(h, g, block_weights("first", g), act, ctx, "first");
  }

  std::size_t stage = 0, in_stage = 0;
  const auto blocks = active_blocks(space, arch);
  for (const auto& g : blocks) {
    while (in_stage >= static_cast<std::size_t>(arch.depths[stage])) {
      ++stage;
      in_stage = 0;
    }
    const std::string p = "stage" + std::to_string(stage) + "/block" + std::to_string(in_stage);
    h = inverted_residual(h, g, block_weights(p, g), act, ctx, p);
    ++in_stage;
  }

  int channels = stages_output_channels(space, arch.width_index);
  if (space.final_conv > 0) {
    h = conv2d(h, fetch(WeightRequest{"final/conv", conv_shape(space.final_conv, channels, 1)}), 1, 0, 1);
    auto [f_scale, f_shift] = norm_pair("final/bn", space.final_conv);
    h = activate(apply_norm(h, f_scale, f_shift, ctx, "final/bn"), act);
    channels = space.final_conv;
  }
  if (features_only) return h;

  h = global_avg_pool(h);  // [N, C]
  if (space.feature_mix > 0) {
    const auto w = fetch(WeightRequest{"mix/conv", conv_shape(space.feature_mix, channels, 1)});
    // 1x1 conv on a pooled map == linear layer
    h = activate(linear(h, reshape(w, {static_cast<std::size_t>(space.feature_mix), static_cast<std::size_t>(channels)}),
                        static_cast<const Var<T>*>(nullptr)),
                 act);
    channels = space.feature_mix;
  }
  const auto cw = fetch(WeightRequest{"classifier/weight", {static_cast<std::size_t>(space.classes), static_cast<std::size_t>(channels)}});
  const auto cb = fetch(WeightRequest{"classifier/bias", vec_shape(space.classes)});
  return linear(h, cw, &cb);
}

}  // namespace enas
