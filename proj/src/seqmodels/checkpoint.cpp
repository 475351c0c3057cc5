#include "lmprior/seqmodels/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>

#include "lmprior/errors.hpp"

namespace lmprior::seqmodels {

namespace {

using nlohmann::json;
constexpr char kMagic[8] = {'L', 'M', 'P', 'R', 'I', 'O', 'R', '\n'};

template <typename T>
constexpr const char* dtype_name() {
  return sizeof(T) == 4 ? "f32" : "f64";
}

json tokenizer_to_json(const textdata::SubwordModel& m) {
  return {{"vocab", m.vocab().to_text()}, {"merges", m.merges_text()}};
}

textdata::SubwordModel tokenizer_from_json(const json& j) {
  return textdata::SubwordModel(textdata::Vocabulary::from_text(j.at("vocab").get<std::string>()),
                                textdata::SubwordModel::merges_from_text(j.at("merges").get<std::string>()));
}

struct RawFile {
  json header;
  std::string payload;
};

RawFile read_raw(const std::string& path, bool with_payload) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open checkpoint " + path);
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t header_len = 0;
  in.read(magic, 8);
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&header_len), sizeof header_len);
  if (!in || std::memcmp(magic, kMagic, 8) != 0) throw InvalidInput(path + " is not a checkpoint");
  if (version != kCheckpointVersion)
    throw InvalidInput("unsupported checkpoint version " + std::to_string(version));
  std::string text(header_len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw InvalidInput("truncated checkpoint header in " + path);
  RawFile raw;
  try {
    raw.header = json::parse(text);
  } catch (const json::exception& e) {
    throw InvalidInput("corrupt checkpoint header in " + path + ": " + e.what());
  }
  if (with_payload) raw.payload.assign(std::istreambuf_iterator<char>(in), {});
  return raw;
}

CheckpointMeta meta_from_header(const json& h) {
  CheckpointMeta meta;
  meta.kind = h.at("kind").get<std::string>();
  meta.dtype = h.at("dtype").get<std::string>();
  meta.arch = architecture_from_json(h.at("architecture"));
  meta.step = h.at("step").get<std::uint64_t>();
  meta.dev_history = h.value("dev_history", json::array());
  meta.extra = h.value("extra", json::object());
  if (h.contains("target_tokenizer")) meta.target_tokenizer = tokenizer_from_json(h["target_tokenizer"]);
  if (h.contains("source_tokenizer")) meta.source_tokenizer = tokenizer_from_json(h["source_tokenizer"]);
  return meta;
}

template <typename From, typename To>
numerics::Tensor<To> read_tensor(const std::string& payload, std::size_t offset, const numerics::Shape& shape) {
  numerics::Tensor<To> t(shape);
  const std::size_t n = t.size();
  if (offset + n * sizeof(From) > payload.size()) throw InvalidInput("truncated checkpoint payload");
  if constexpr (std::is_same_v<From, To>) {
    std::memcpy(t.data(), payload.data() + offset, n * sizeof(From));
  } else {
    std::vector<From> tmp(n);
    std::memcpy(tmp.data(), payload.data() + offset, n * sizeof(From));
    for (std::size_t i = 0; i < n; ++i) t.data()[i] = static_cast<To>(tmp[i]);
  }
  return t;
}

}  // namespace

json architecture_to_json(const ArchitectureConfig& a) {
  return {{"vocab_size", a.vocab_size}, {"src_vocab_size", a.src_vocab_size},
          {"d_model", a.d_model},       {"layers", a.layers},
          {"heads", a.heads},           {"ff", a.ff},
          {"dropout", a.dropout},       {"max_positions", a.max_positions},
          {"target_vocab_hash", a.target_vocab_hash}};
}

ArchitectureConfig architecture_from_json(const json& j) {
  ArchitectureConfig a;
  a.vocab_size = j.at("vocab_size");
  a.src_vocab_size = j.at("src_vocab_size");
  a.d_model = j.at("d_model");
  a.layers = j.at("layers");
  a.heads = j.at("heads");
  a.ff = j.at("ff");
  a.dropout = j.at("dropout");
  a.max_positions = j.at("max_positions");
  a.target_vocab_hash = j.at("target_vocab_hash");
  return a;
}

template <typename T>
void save_checkpoint(const std::string& path, const numerics::ParameterSet<T>& params,
                     CheckpointMeta meta) {
  meta.dtype = dtype_name<T>();
  json h = {{"kind", meta.kind},
            {"dtype", meta.dtype},
            {"architecture", architecture_to_json(meta.arch)},
            {"target_vocab_hash", meta.arch.target_vocab_hash},
            {"step", meta.step},
            {"dev_history", meta.dev_history},
            {"extra", meta.extra}};
  if (meta.target_tokenizer) h["target_tokenizer"] = tokenizer_to_json(*meta.target_tokenizer);
  if (meta.source_tokenizer) h["source_tokenizer"] = tokenizer_to_json(*meta.source_tokenizer);
  json list = json::array();
  std::size_t offset = 0;
  for (const auto& [name, v] : params) {
    const std::size_t nbytes = v.value().size() * sizeof(T);
    list.push_back({{"name", name}, {"shape", v.value().shape()}, {"offset", offset}, {"nbytes", nbytes}});
    offset += nbytes;
  }
  h["tensors"] = list;
  const std::string text = h.dump();

  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InvalidInput("cannot write checkpoint " + tmp.string());
    const std::uint32_t version = kCheckpointVersion;
    const std::uint64_t header_len = text.size();
    out.write(kMagic, 8);
    out.write(reinterpret_cast<const char*>(&version), sizeof version);
    out.write(reinterpret_cast<const char*>(&header_len), sizeof header_len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, v] : params)
      out.write(reinterpret_cast<const char*>(v.value().data()),
                static_cast<std::streamsize>(v.value().size() * sizeof(T)));
    out.flush();
    if (!out) throw InvalidInput("failed writing checkpoint " + tmp.string());
  }
  fs::rename(tmp, target);
}

template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::string& path) {
  auto raw = read_raw(path, true);
  LoadedCheckpoint<T> out;
  out.meta = meta_from_header(raw.header);
  const bool f32 = out.meta.dtype == "f32";
  if (!f32 && out.meta.dtype != "f64") throw InvalidInput("unknown dtype " + out.meta.dtype);
  for (const auto& t : raw.header.at("tensors")) {
    const auto shape = t.at("shape").get<numerics::Shape>();
    const std::size_t offset = t.at("offset");
    out.tensors.emplace(t.at("name").get<std::string>(),
                        f32 ? read_tensor<float, T>(raw.payload, offset, shape)
                            : read_tensor<double, T>(raw.payload, offset, shape));
  }
  return out;
}

CheckpointMeta read_checkpoint_meta(const std::string& path) {
  return meta_from_header(read_raw(path, false).header);
}

template <typename T>
void assign_parameters(numerics::ParameterSet<T>& params,
                       const std::map<std::string, numerics::Tensor<T>>& tensors) {
  if (tensors.size() != params.size())
    throw ConfigError("checkpoint has " + std::to_string(tensors.size()) + " tensors, model expects " +
                      std::to_string(params.size()));
  for (auto& [name, v] : params) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw ConfigError("checkpoint lacks tensor " + name);
    if (it->second.shape() != v.value().shape())
      throw ConfigError("shape mismatch for " + name + ": " + numerics::shape_string(it->second.shape()) +
                        " vs " + numerics::shape_string(v.value().shape()));
    v.mutable_value() = it->second;
  }
}

template void save_checkpoint<float>(const std::string&, const numerics::ParameterSet<float>&, CheckpointMeta);
template void save_checkpoint<double>(const std::string&, const numerics::ParameterSet<double>&, CheckpointMeta);
template LoadedCheckpoint<float> load_checkpoint<float>(const std::string&);
template LoadedCheckpoint<double> load_checkpoint<double>(const std::string&);
template void assign_parameters<float>(numerics::ParameterSet<float>&,
                                       const std::map<std::string, numerics::Tensor<float>>&);
template void assign_parameters<double>(numerics::ParameterSet<double>&,
                                        const std::map<std::string, numerics::Tensor<double>>&);

}  // namespace lmprior::seqmodels
