#pragma once

// Trainable model bundle (point network + aggregation network) and its
// checkpoint I/O.

#include "stop4d/aggregation.hpp"
#include "stop4d/config.hpp"
#include "stop4d/encoder_heads.hpp"
#include "stop4d/tinynet.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace stop4d {

struct Model {
  Config cfg;
  encoder::PointNetwork net;
  aggregation::AggregationNet agg;

  Model() = default;
  explicit Model(const Config& c) : cfg(c), net(c), agg(c) {}

  void init(std::uint64_t seed) {
    Rng root(seed);
    Rng a = root.fork(1);
    Rng b = root.fork(2);
    net.init(a);
    agg.init(b);
  }

  /// Shape-relevant settings; a checkpoint only loads into a matching model.
  std::vector<double> meta() const {
    return {static_cast<double>(cfg.temporal_window), static_cast<double>(cfg.feature_dim),
            static_cast<double>(cfg.proposal_dim), static_cast<double>(cfg.aggregation_dim()),
            static_cast<double>(cfg.num_classes)};
  }

  std::vector<tinynet::ParamRef> parameters() {
    auto p = net.parameters();
    auto q = agg.parameters();
    p.insert(p.end(), q.begin(), q.end());
    return p;
  }
};

inline const char* const kMetaTensor = "meta/shape";
inline const char* const kIterationTensor = "meta/iteration";
inline const std::string kVelocityPrefix = "velocity/";

/// Training state that travels with a checkpoint besides the parameters.
struct TrainState {
  long long iteration = 0;  // iterations completed
  std::map<std::string, std::vector<double>> velocity;
};

inline void save_model(const std::filesystem::path& path, Model& m, const TrainState* state = nullptr) {
  auto tensors = tinynet::to_tensors(m.parameters());
  const auto meta = m.meta();
  tensors.push_back({kMetaTensor, {meta.size()}, meta});
  if (state) {
    tensors.push_back({kIterationTensor, {1}, {static_cast<double>(state->iteration)}});
    for (const auto& [name, v] : state->velocity) tensors.push_back({kVelocityPrefix + name, {v.size()}, v});
  }
  tinynet::write_checkpoint(path, tensors);
}

/// Builds a model for `cfg` and fills it from the checkpoint. Throws
/// ConfigError when the stored shape settings disagree with cfg.
inline Model load_model(const std::filesystem::path& path, const Config& cfg, TrainState* state = nullptr) {
  const auto tensors = tinynet::read_checkpoint(path);
  Model m(cfg);
  const auto want = m.meta();
  const tinynet::Tensor* meta = nullptr;
  for (const auto& t : tensors)
    if (t.name == kMetaTensor) meta = &t;
  if (!meta) throw FormatError("checkpoint " + path.string() + " has no " + kMetaTensor + " tensor");
  static const char* const names[] = {"temporal_window", "feature_dims", "feature_dims", "features", "num_classes"};
  for (std::size_t i = 0; i < want.size(); ++i)
    if (i >= meta->values.size() || meta->values[i] != want[i])
      throw ConfigError(names[i], "checkpoint was trained with a different value");
  tinynet::load_tensors(tensors, m.parameters());
  if (state) {
    *state = {};
    for (const auto& t : tensors) {
      if (t.name == kIterationTensor && !t.values.empty()) state->iteration = static_cast<long long>(t.values[0]);
      if (t.name.rfind(kVelocityPrefix, 0) == 0) state->velocity[t.name.substr(kVelocityPrefix.size())] = t.values;
    }
  }
  return m;
}

}  // namespace stop4d
