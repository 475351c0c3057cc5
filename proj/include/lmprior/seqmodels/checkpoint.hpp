#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>

#include <json.hpp>

#include "lmprior/numerics/autodiff.hpp"
#include "lmprior/seqmodels/architecture.hpp"
#include "lmprior/textdata/subword.hpp"

namespace lmprior::seqmodels {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Everything in a checkpoint except the tensor payload.
// Layout on disk is described in docs/checkpoint-format.md.
struct CheckpointMeta {
  std::string kind;   // "lm" or "tm"
  std::string dtype;  // "f32" or "f64"; filled in by save
  ArchitectureConfig arch;
  std::uint64_t step = 0;
  nlohmann::json dev_history = nlohmann::json::array();
  std::optional<textdata::SubwordModel> target_tokenizer;
  std::optional<textdata::SubwordModel> source_tokenizer;
  nlohmann::json extra = nlohmann::json::object();  // objective, config, ...
};

template <typename T>
struct LoadedCheckpoint {
  CheckpointMeta meta;
  std::map<std::string, numerics::Tensor<T>> tensors;
};

// Written to a temporary sibling and renamed into place.
template <typename T>
void save_checkpoint(const std::string& path, const numerics::ParameterSet<T>& params,
                     CheckpointMeta meta);

// Tensors stored in the other precision are converted.
template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::string& path);

CheckpointMeta read_checkpoint_meta(const std::string& path);

// Copies tensors into params; names and shapes must match exactly.
template <typename T>
void assign_parameters(numerics::ParameterSet<T>& params,
                       const std::map<std::string, numerics::Tensor<T>>& tensors);

nlohmann::json architecture_to_json(const ArchitectureConfig& arch);
ArchitectureConfig architecture_from_json(const nlohmann::json& j);

}  // namespace lmprior::seqmodels
