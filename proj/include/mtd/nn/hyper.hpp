#pragma once

#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "mtd/core/error.hpp"

namespace mtd::nn {

enum class Activation { Tanh, Relu };

inline std::string_view to_string(Activation a) { return a == Activation::Tanh ? "tanh" : "relu"; }

inline Activation parse_activation(std::string_view s) {
  if (s == "tanh") return Activation::Tanh;
  if (s == "relu") return Activation::Relu;
  fail(ErrorKind::ConfigError, "unknown activation '" + std::string(s) + "'");
}

/// Architecture and optimiser settings. Defaults give the reference model:
/// three 3x3 conv layers of 32 filters, two LSTM layers of 50 units, tanh.
struct HyperParams {
  double learning_rate = 1e-3;
  int batch_size = 12;
  int conv_layers = 3;
  std::vector<int> filters{32, 32, 32};
  int kernel_size = 3;
  double dropout = 0.25;
  Activation activation = Activation::Tanh;
  double bias_reg = 1e-4;
  int lstm_layers = 2;
  std::vector<int> lstm_units{50, 50};
  int seq_len_steps = 6;
  int outputs = 3;

  void validate() const {
    require(learning_rate >= 0.0, ErrorKind::ConfigError, "learning_rate must be >= 0");
    require(batch_size >= 1, ErrorKind::ConfigError, "batch_size must be >= 1");
    require(conv_layers >= 1 && static_cast<int>(filters.size()) == conv_layers, ErrorKind::ConfigError,
            "filters must list one count per conv layer");
    for (int f : filters) require(f >= 1, ErrorKind::ConfigError, "filter counts must be positive");
    require(kernel_size >= 1 && kernel_size % 2 == 1, ErrorKind::ConfigError, "kernel_size must be odd");
    require(dropout >= 0.0 && dropout < 1.0, ErrorKind::ConfigError, "dropout must be in [0, 1)");
    require(bias_reg >= 0.0, ErrorKind::ConfigError, "bias_reg must be >= 0");
    require(lstm_layers >= 1 && static_cast<int>(lstm_units.size()) == lstm_layers, ErrorKind::ConfigError,
            "lstm_units must list one size per LSTM layer");
    for (int u : lstm_units) require(u >= 1, ErrorKind::ConfigError, "LSTM sizes must be positive");
    require(seq_len_steps >= 1, ErrorKind::ConfigError, "seq_len_steps must be >= 1");
    require(outputs >= 1, ErrorKind::ConfigError, "outputs must be >= 1");
  }

  bool operator==(const HyperParams&) const = default;
};

inline nlohmann::ordered_json hyper_json(const HyperParams& h) {
  return {{"learning_rate", h.learning_rate},
          {"batch_size", h.batch_size},
          {"conv_layers", h.conv_layers},
          {"filters", h.filters},
          {"kernel_size", h.kernel_size},
          {"dropout", h.dropout},
          {"activation", std::string(to_string(h.activation))},
          {"bias_reg", h.bias_reg},
          {"lstm_layers", h.lstm_layers},
          {"lstm_units", h.lstm_units},
          {"seq_len_steps", h.seq_len_steps},
          {"outputs", h.outputs}};
}

/// Reads the keys present in `j` over `h`; unknown keys are a ConfigError.
template <class Json>
void merge_hyper(HyperParams& h, const Json& j) {
  for (const auto& [k, v] : j.items()) {
    if (k == "learning_rate") h.learning_rate = v.template get<double>();
    else if (k == "batch_size") h.batch_size = v.template get<int>();
    else if (k == "conv_layers") h.conv_layers = v.template get<int>();
    else if (k == "filters") h.filters = v.template get<std::vector<int>>();
    else if (k == "kernel_size") h.kernel_size = v.template get<int>();
    else if (k == "dropout") h.dropout = v.template get<double>();
    else if (k == "activation") h.activation = parse_activation(v.template get<std::string>());
    else if (k == "bias_reg") h.bias_reg = v.template get<double>();
    else if (k == "lstm_layers") h.lstm_layers = v.template get<int>();
    else if (k == "lstm_units") h.lstm_units = v.template get<std::vector<int>>();
    else if (k == "seq_len_steps") h.seq_len_steps = v.template get<int>();
    else if (k == "outputs") h.outputs = v.template get<int>();
    else fail(ErrorKind::ConfigError, "unknown hyperparameter '" + k + "'");
  }
}

template <class Json>
HyperParams hyper_from_json(const Json& j) {
  HyperParams h;
  merge_hyper(h, j);
  h.validate();
  return h;
}

}  // namespace mtd::nn
