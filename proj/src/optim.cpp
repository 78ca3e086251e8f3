#include "enas/optim.hpp"

#include <cmath>
#include <numbers>

namespace enas {

Var<float>& ParamStore::add(const std::string& path, Tensor value) {
  auto [it, inserted] = params_.emplace(path, Var<float>::parameter(std::move(value)));
  if (!inserted) throw std::invalid_argument("duplicate parameter path: " + path);
  return it->second;
}

Var<float>& ParamStore::at(const std::string& path) {
  auto it = params_.find(path);
  if (it == params_.end()) throw std::out_of_range("unknown parameter path: " + path);
  return it->second;
}

const Var<float>& ParamStore::at(const std::string& path) const {
  auto it = params_.find(path);
  if (it == params_.end()) throw std::out_of_range("unknown parameter path: " + path);
  return it->second;
}

std::size_t ParamStore::element_count() const {
  std::size_t n = 0;
  for (const auto& [_, v] : params_) n += v.value().numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [_, v] : params_) v.zero_grad();
}

ParamStore ParamStore::clone() const {
  ParamStore out(rng_seed_);
  for (const auto& [path, v] : params_) out.add(path, v.value());
  return out;
}

AdamW::AdamW(const ParamStore& params, Options options) : options_(options) {
  if (options_.horizon < 1) throw std::invalid_argument("AdamW: schedule horizon must be >= 1");
  for (const auto& [path, v] : params.entries()) {
    moments_[path] = Moments{std::vector<float>(v.value().numel(), 0.0f), std::vector<float>(v.value().numel(), 0.0f)};
  }
}

double AdamW::learning_rate(std::int64_t t) const {
  const double frac = std::min(1.0, static_cast<double>(t) / static_cast<double>(options_.horizon));
  return options_.lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

void AdamW::step(ParamStore& params) {
  bool any = false;
  for (const auto& [_, v] : params.entries()) {
    if (v.has_grad()) {
      any = true;
      break;
    }
  }
  if (!any) throw NoGradientError("optimizer step without any populated gradient");

  const double lr = learning_rate(step_);
  const std::int64_t t = step_ + 1;
  const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t));
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double decay = 1.0 - lr * options_.weight_decay;

  for (auto& [path, v] : params.entries()) {
    if (!v.has_grad()) continue;
    auto mit = moments_.find(path);
    if (mit == moments_.end() || mit->second.first.size() != v.value().numel()) {
      throw std::logic_error("AdamW: no moment buffers for parameter " + path);
    }
    auto& m = mit->second.first;
    auto& s = mit->second.second;
    const float* g = v.grad().data();
    const auto& touched = v.touched();
    float* p = v.mutable_value().data();
    for (std::size_t i = 0; i < m.size(); ++i) {
      if (!touched[i]) continue;
      const double gi = g[i];
      m[i] = static_cast<float>(b1 * m[i] + (1.0 - b1) * gi);
      s[i] = static_cast<float>(b2 * s[i] + (1.0 - b2) * gi * gi);
      const double mhat = m[i] / bc1;
      const double vhat = s[i] / bc2;
      p[i] = static_cast<float>(p[i] * decay - lr * mhat / (std::sqrt(vhat) + options_.eps));
    }
  }
  ++step_;
}

}  // namespace enas
