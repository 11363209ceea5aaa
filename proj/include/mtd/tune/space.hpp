#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include <json.hpp>

#include "mtd/core/error.hpp"
#include "mtd/core/rng.hpp"
#include "mtd/nn/hyper.hpp"

namespace mtd::tune {

/// Hyperparameter search ranges. Continuous ranges are inclusive; lr and
/// bias_reg are log-uniform, dropout uniform, integer ranges uniform.
struct SearchSpace {
  double lr_lo = 1e-6, lr_hi = 1e-2;
  std::vector<int> batch_sizes{6, 12, 24, 48};
  std::vector<int> conv_layers{2, 3, 4};
  int filters_lo = 16, filters_hi = 32;
  std::vector<int> kernel_sizes{3, 5, 7};
  double dropout_lo = 0.1, dropout_hi = 0.4;
  std::vector<nn::Activation> activations{nn::Activation::Relu, nn::Activation::Tanh};
  double bias_reg_lo = 1e-4, bias_reg_hi = 1e-3;
  std::vector<int> lstm_layers{1, 2};
  int units_lo = 20, units_hi = 100;
  int seq_len_steps = 6;
  int outputs = 3;

  void validate() const {
    require(lr_lo > 0.0 && lr_lo <= lr_hi, ErrorKind::ConfigError, "learning-rate range must be positive and ordered");
    require(bias_reg_lo > 0.0 && bias_reg_lo <= bias_reg_hi, ErrorKind::ConfigError,
            "bias_reg range must be positive and ordered");
    require(dropout_lo >= 0.0 && dropout_lo <= dropout_hi && dropout_hi < 1.0, ErrorKind::ConfigError,
            "dropout range must lie in [0, 1)");
    require(filters_lo >= 1 && filters_lo <= filters_hi, ErrorKind::ConfigError, "filter range must be ordered");
    require(units_lo >= 1 && units_lo <= units_hi, ErrorKind::ConfigError, "LSTM unit range must be ordered");
    require(!batch_sizes.empty() && !conv_layers.empty() && !kernel_sizes.empty() && !activations.empty() &&
                !lstm_layers.empty(),
            ErrorKind::ConfigError, "categorical choices must not be empty");
  }

  bool contains(const nn::HyperParams& h) const {
    auto in = [](const auto& v, auto x) { return std::find(v.begin(), v.end(), x) != v.end(); };
    bool ok = h.learning_rate >= lr_lo && h.learning_rate <= lr_hi && in(batch_sizes, h.batch_size) &&
              in(conv_layers, h.conv_layers) && in(kernel_sizes, h.kernel_size) && h.dropout >= dropout_lo &&
              h.dropout <= dropout_hi && in(activations, h.activation) && h.bias_reg >= bias_reg_lo &&
              h.bias_reg <= bias_reg_hi && in(lstm_layers, h.lstm_layers) && h.seq_len_steps == seq_len_steps;
    for (int f : h.filters) ok = ok && f >= filters_lo && f <= filters_hi;
    for (int u : h.lstm_units) ok = ok && u >= units_lo && u <= units_hi;
    return ok;
  }
};

namespace detail {

inline double log_uniform(Rng& r, double lo, double hi) {
  return std::exp(r.uniform(std::log(lo), std::log(hi)));
}

inline int int_between(Rng& r, int lo, int hi) {
  return lo + static_cast<int>(r.below(static_cast<std::uint64_t>(hi - lo + 1)));
}

template <class V>
auto pick(Rng& r, const V& v) {
  return v[static_cast<std::size_t>(r.below(v.size()))];
}

}  // namespace detail

/// One configuration per index from its own substream, so config i does not
/// depend on n. A single filter count is shared by all conv layers and a
/// second LSTM layer repeats the first layer's width.
inline nn::HyperParams sample_config(const SearchSpace& s, std::uint64_t seed, std::size_t index) {
  Rng r(substream(substream(seed, "configs"), static_cast<std::uint64_t>(index)));
  nn::HyperParams h;
  h.learning_rate = std::clamp(detail::log_uniform(r, s.lr_lo, s.lr_hi), s.lr_lo, s.lr_hi);
  h.batch_size = detail::pick(r, s.batch_sizes);
  h.conv_layers = detail::pick(r, s.conv_layers);
  h.filters.assign(static_cast<std::size_t>(h.conv_layers), detail::int_between(r, s.filters_lo, s.filters_hi));
  h.kernel_size = detail::pick(r, s.kernel_sizes);
  h.dropout = r.uniform(s.dropout_lo, s.dropout_hi);
  h.activation = detail::pick(r, s.activations);
  h.bias_reg = std::clamp(detail::log_uniform(r, s.bias_reg_lo, s.bias_reg_hi), s.bias_reg_lo, s.bias_reg_hi);
  h.lstm_layers = detail::pick(r, s.lstm_layers);
  h.lstm_units.assign(static_cast<std::size_t>(h.lstm_layers), detail::int_between(r, s.units_lo, s.units_hi));
  h.seq_len_steps = s.seq_len_steps;
  h.outputs = s.outputs;
  return h;
}

inline std::vector<nn::HyperParams> sample_configs(const SearchSpace& s, std::size_t n, std::uint64_t seed) {
  require(n >= 1, ErrorKind::ConfigError, "need at least one configuration");
  s.validate();
  std::vector<nn::HyperParams> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(sample_config(s, seed, i));
  return out;
}

template <class Json>
SearchSpace space_from_json(const Json& j) {
  SearchSpace s;
  auto pair = [](const Json& v, auto& lo, auto& hi) {
    require(v.is_array() && v.size() == 2, ErrorKind::ConfigError, "ranges are two-element arrays");
    v[0].get_to(lo);
    v[1].get_to(hi);
  };
  for (const auto& [k, v] : j.items()) {
    if (k == "learning_rate") pair(v, s.lr_lo, s.lr_hi);
    else if (k == "batch_size") s.batch_sizes = v.template get<std::vector<int>>();
    else if (k == "conv_layers") s.conv_layers = v.template get<std::vector<int>>();
    else if (k == "filters") pair(v, s.filters_lo, s.filters_hi);
    else if (k == "kernel_size") s.kernel_sizes = v.template get<std::vector<int>>();
    else if (k == "dropout") pair(v, s.dropout_lo, s.dropout_hi);
    else if (k == "activation") {
      s.activations.clear();
      for (const auto& a : v) s.activations.push_back(nn::parse_activation(a.template get<std::string>()));
    } else if (k == "bias_reg") pair(v, s.bias_reg_lo, s.bias_reg_hi);
    else if (k == "lstm_layers") s.lstm_layers = v.template get<std::vector<int>>();
    else if (k == "lstm_units") pair(v, s.units_lo, s.units_hi);
    else if (k == "seq_len_steps") s.seq_len_steps = v.template get<int>();
    else if (k == "outputs") s.outputs = v.template get<int>();
    else fail(ErrorKind::ConfigError, "unknown search-space key '" + k + "'");
  }
  s.validate();
  return s;
}

}  // namespace mtd::tune
