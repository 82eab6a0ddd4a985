#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "talign/geometry.hpp"
#include "talign/layers.hpp"
#include "talign/ops.hpp"
#include "talign/rng.hpp"
#include "talign/tensor.hpp"

namespace talign::prn {

struct PRNConfig {
  std::vector<int> encoder_channels{64, 128, 1024};
  std::vector<int> decoder_channels{512, 256, 16};
  std::uint64_t seed = 0;
};

// Flattened row-major identity transform; the decoder regresses offsets from
// raw zero toward rows like this one.
template <typename T>
inline std::vector<T> identity_flat16() {
  return {T(1), T(0), T(0), T(0), T(0), T(1), T(0), T(0),
          T(0), T(0), T(1), T(0), T(0), T(0), T(0), T(1)};
}

// Transform-regression network. Two independent point encoders (whole arch
// and per tooth) feed a per-tooth decoder that regresses 16 raw values per
// slot. Layers are plain linear+relu; the last layer of each stack has no
// activation. All teeth share one [M*P, 3] input block so each layer runs as
// a single matrix product; per-tooth pooling happens in segment_max.
template <typename T>
class PRNModel {
 public:
  explicit PRNModel(PRNConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.encoder_channels.empty() || cfg_.decoder_channels.empty()) {
      throw std::invalid_argument("PRNModel: empty channel list");
    }
    if (cfg_.decoder_channels.back() != 16) {
      throw std::invalid_argument("PRNModel: decoder must end in 16 channels, got " +
                                  std::to_string(cfg_.decoder_channels.back()));
    }
    Rng rng(cfg_.seed);
    std::size_t in = 3;
    for (int c : cfg_.encoder_channels) {
      global_.push_back(nn::make_dense<T>(in, static_cast<std::size_t>(c), rng));
      in = static_cast<std::size_t>(c);
    }
    in = 3;
    for (int c : cfg_.encoder_channels) {
      local_.push_back(nn::make_dense<T>(in, static_cast<std::size_t>(c), rng));
      in = static_cast<std::size_t>(c);
    }
    in = 2 * static_cast<std::size_t>(cfg_.encoder_channels.back());
    for (int c : cfg_.decoder_channels) {
      decoder_.push_back(nn::make_dense<T>(in, static_cast<std::size_t>(c), rng));
      in = static_cast<std::size_t>(c);
    }
  }

  const PRNConfig& config() const { return cfg_; }

  // All teeth stacked into one constant [M*P, 3] block, invalid slots
  // zero-filled so shapes stay fixed.
  ad::Tensor<T> points_tensor(const geom::Dentition& d) const {
    const auto [m, p] = check_dentition(d);
    std::vector<T> flat(static_cast<std::size_t>(m) * p * 3, T(0));
    for (std::size_t i = 0; i < static_cast<std::size_t>(m); ++i) {
      if (!d.validity[i]) continue;
      const auto& pts = d.teeth[i].points;
      T* dst = flat.data() + i * p * 3;
      for (std::size_t r = 0; r < p; ++r) {
        for (std::size_t c = 0; c < 3; ++c) {
          dst[r * 3 + c] = static_cast<T>(pts(static_cast<Eigen::Index>(r),
                                              static_cast<int>(c)));
        }
      }
    }
    return ad::Tensor<T>::constant({static_cast<std::size_t>(m) * p, 3}, std::move(flat));
  }

  // Arch-level feature: every point through the shared encoder, max over all
  // points. Rank-1 output [C].
  ad::Tensor<T> encode_global_node(const ad::Tensor<T>& points) const {
    return ad::max_over_axis(nn::mlp_forward(global_, points), 0);
  }

  // Tooth-level features: same point block through the local encoder, max
  // within each tooth segment. Output [M, C].
  ad::Tensor<T> encode_local_node(const ad::Tensor<T>& points, std::size_t teeth) const {
    return ad::segment_max(nn::mlp_forward(local_, points), teeth);
  }

  // Per-tooth raw regression [M, 16] from the broadcast global feature
  // concatenated with each local feature.
  ad::Tensor<T> decode_node(const ad::Tensor<T>& global_feat,
                            const ad::Tensor<T>& local_feats) const {
    const std::size_t teeth = local_feats.shape()[0];
    auto joined = ad::concat(ad::tile_rows(global_feat, teeth), local_feats, 1);
    return nn::mlp_forward(decoder_, joined);
  }

  struct Forward {
    ad::Tensor<T> global_feature;  // [C]
    ad::Tensor<T> local_features;  // [M, C]
    ad::Tensor<T> raw;             // [M, 16] network output, all slots
    // Per-slot raw transforms with invalid slots replaced by the constant
    // identity; this is what losses and the diffusion module consume.
    std::vector<ad::Tensor<T>> raw_rows;
  };

  Forward forward(const geom::Dentition& d) const {
    const auto [m, p] = check_dentition(d);
    (void)p;
    Forward f;
    auto points = points_tensor(d);
    f.global_feature = encode_global_node(points);
    f.local_features = encode_local_node(points, static_cast<std::size_t>(m));
    f.raw = decode_node(f.global_feature, f.local_features);
    f.raw_rows.reserve(static_cast<std::size_t>(m));
    for (std::size_t i = 0; i < static_cast<std::size_t>(m); ++i) {
      if (d.validity[i]) {
        f.raw_rows.push_back(ad::slice_row(f.raw, i));
      } else {
        f.raw_rows.push_back(ad::Tensor<T>::constant({16}, identity_flat16<T>()));
      }
    }
    return f;
  }

  // ---- value-level contracts ----

  std::vector<T> encode_global(const geom::Dentition& d) const {
    return encode_global_node(points_tensor(d)).values();
  }

  std::vector<std::vector<T>> encode_local(const geom::Dentition& d) const {
    const auto [m, p] = check_dentition(d);
    (void)p;
    auto feats = encode_local_node(points_tensor(d), static_cast<std::size_t>(m));
    const std::size_t cols = feats.shape()[1];
    std::vector<std::vector<T>> out(static_cast<std::size_t>(m));
    for (std::size_t i = 0; i < static_cast<std::size_t>(m); ++i) {
      const T* src = feats.values().data() + i * cols;
      out[i].assign(src, src + cols);
    }
    return out;
  }

  // Predicted transform per tooth: raw 16 values reshaped row-major with the
  // fourth row overwritten to [0,0,0,1]; invalid teeth forced to identity.
  geom::TransformSet regress(const geom::Dentition& d) const {
    auto f = forward(d);
    const int m = d.tooth_count();
    geom::TransformSet set = geom::TransformSet::identities(m);
    for (int i = 0; i < m; ++i) {
      if (!d.valid(i)) continue;
      const auto& row = f.raw_rows[static_cast<std::size_t>(i)].values();
      geom::Mat4& t = set.transforms[static_cast<std::size_t>(i)].matrix;
      for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 4; ++c) {
          t(r, c) = static_cast<double>(row[static_cast<std::size_t>(r * 4 + c)]);
        }
      }
      t.row(3) << 0, 0, 0, 1;
    }
    return set;
  }

  std::vector<ad::Tensor<T>> parameters() const {
    std::vector<ad::Tensor<T>> out;
    nn::collect_parameters(global_, out);
    nn::collect_parameters(local_, out);
    nn::collect_parameters(decoder_, out);
    return out;
  }

  std::vector<std::pair<std::string, ad::Tensor<T>>> named_parameters() const {
    std::vector<std::pair<std::string, ad::Tensor<T>>> out;
    nn::collect_named_parameters("global", global_, out);
    nn::collect_named_parameters("local", local_, out);
    nn::collect_named_parameters("decoder", decoder_, out);
    return out;
  }

  void zero_grad() {
    for (auto p : parameters()) p.zero_grad();
  }

 private:
  static std::pair<int, std::size_t> check_dentition(const geom::Dentition& d) {
    const int m = d.tooth_count();
    if (m < 1 || d.validity.size() != static_cast<std::size_t>(m)) {
      throw std::invalid_argument("PRNModel: dentition needs >= 1 tooth and matching validity");
    }
    const auto p = static_cast<std::size_t>(d.teeth[0].points.rows());
    if (p < 1) {
      throw std::invalid_argument("PRNModel: teeth need at least one point");
    }
    for (const auto& tooth : d.teeth) {
      if (static_cast<std::size_t>(tooth.points.rows()) != p) {
        throw ShapeError("PRNModel: tooth point counts differ",
                         "[" + std::to_string(tooth.points.rows()) + ",3]",
                         "[" + std::to_string(p) + ",3]");
      }
    }
    return {m, p};
  }

  PRNConfig cfg_;
  std::vector<nn::DenseLayer<T>> global_;
  std::vector<nn::DenseLayer<T>> local_;
  std::vector<nn::DenseLayer<T>> decoder_;
};

// Closed-form parameter count for a configuration.
inline long parameter_count(const PRNConfig& cfg) {
  auto stack = [](std::size_t in, const std::vector<int>& channels) {
    long n = 0;
    for (int c : channels) {
      n += static_cast<long>(in) * c + c;
      in = static_cast<std::size_t>(c);
    }
    return n;
  };
  return 2 * stack(3, cfg.encoder_channels) +
         stack(2 * static_cast<std::size_t>(cfg.encoder_channels.back()),
               cfg.decoder_channels);
}

}  // namespace talign::prn
