#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "talign/ops.hpp"
#include "talign/rng.hpp"
#include "talign/tensor.hpp"

namespace talign::nn {

// Fully connected layer. Weights are drawn uniformly from
// +-sqrt(1/fan_in), biases start at zero; draws consume the stream row by
// row so layer initialization is a pure function of the stream state.
template <typename T>
struct DenseLayer {
  ad::Tensor<T> weight;  // [in, out]
  ad::Tensor<T> bias;    // [out]

  std::size_t fan_in() const { return weight.shape()[0]; }
  std::size_t fan_out() const { return weight.shape()[1]; }
};

template <typename T>
DenseLayer<T> make_dense(std::size_t in, std::size_t out, Rng& rng) {
  const double bound = std::sqrt(1.0 / static_cast<double>(in));
  std::vector<T> w(in * out);
  for (auto& v : w) v = static_cast<T>(rng.uniform(-bound, bound));
  DenseLayer<T> layer;
  layer.weight = ad::Tensor<T>::parameter({in, out}, std::move(w));
  layer.bias = ad::Tensor<T>::parameter({out}, std::vector<T>(out, T(0)));
  return layer;
}

// Constant (gradient-free) copy of a layer; used where a branch must read
// current weights without ever propagating into them.
template <typename T>
DenseLayer<T> detach_layer(const DenseLayer<T>& layer) {
  return DenseLayer<T>{layer.weight.detach(), layer.bias.detach()};
}

// Applies the layer stack with relu between layers and no activation after
// the last one.
template <typename T>
ad::Tensor<T> mlp_forward(const std::vector<DenseLayer<T>>& layers,
                          const ad::Tensor<T>& input) {
  ad::Tensor<T> h = input;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    h = ad::linear(h, layers[i].weight, layers[i].bias);
    if (i + 1 < layers.size()) h = ad::relu(h);
  }
  return h;
}

template <typename T>
void collect_parameters(const std::vector<DenseLayer<T>>& layers,
                        std::vector<ad::Tensor<T>>& out) {
  for (const auto& l : layers) {
    out.push_back(l.weight);
    out.push_back(l.bias);
  }
}

template <typename T>
void collect_named_parameters(const std::string& prefix,
                              const std::vector<DenseLayer<T>>& layers,
                              std::vector<std::pair<std::string, ad::Tensor<T>>>& out) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    out.emplace_back(prefix + "." + std::to_string(i) + ".weight", layers[i].weight);
    out.emplace_back(prefix + "." + std::to_string(i) + ".bias", layers[i].bias);
  }
}

}  // namespace talign::nn
