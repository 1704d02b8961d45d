#include "c4synth/checkpoint.hpp"

#include <algorithm>

#include "c4synth/error.hpp"

namespace c4synth {

namespace {
constexpr const char* kMetadataKey = "metadata";
constexpr const char* kGroupPrefix = "group_";
constexpr const char* kOptimizerPrefix = "optim_";
constexpr const char* kTensorPrefix = "tensor_";
constexpr const char* kStringPrefix = "string_";
}  // namespace

CheckpointWriter::CheckpointWriter(nlohmann::json metadata) : metadata_(std::move(metadata)) {}

void CheckpointWriter::add_module(const std::string& group, const torch::nn::Module& module) {
  torch::serialize::OutputArchive sub;
  module.save(sub);
  archive_.write(kGroupPrefix + group, sub);
  groups_.push_back(group);
}

void CheckpointWriter::add_children(const torch::nn::Module& root, const std::string& prefix) {
  for (const auto& child : root.named_children()) add_module(prefix + child.key(), *child.value());
}

void CheckpointWriter::add_optimizer(const std::string& name, const torch::optim::Optimizer& optimizer) {
  torch::serialize::OutputArchive sub;
  optimizer.save(sub);
  archive_.write(kOptimizerPrefix + name, sub);
}

void CheckpointWriter::add_tensor(const std::string& name, const torch::Tensor& tensor) {
  archive_.write(kTensorPrefix + name, tensor.detach().clone());
}

void CheckpointWriter::add_string(const std::string& name, const std::string& value) {
  archive_.write(kStringPrefix + name, c10::IValue(value));
}

void CheckpointWriter::save(const std::filesystem::path& path) {
  auto meta = metadata_;
  meta["groups"] = groups_;
  archive_.write(kMetadataKey, c10::IValue(meta.dump()));
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  // Write then rename so a crash never leaves a truncated checkpoint behind.
  auto tmp = path;
  tmp += ".tmp";
  archive_.save_to(tmp.string());
  std::filesystem::rename(tmp, path);
}

CheckpointReader::CheckpointReader(const std::filesystem::path& path) : path_(path) {
  if (!std::filesystem::exists(path)) throw CheckpointError("checkpoint not found: " + path.string());
  try {
    archive_.load_from(path.string());
    c10::IValue meta;
    archive_.read(kMetadataKey, meta);
    metadata_ = nlohmann::json::parse(meta.toStringRef());
  } catch (const c10::Error& e) {
    throw CheckpointError("unreadable checkpoint " + path.string() + ": " + e.what_without_backtrace());
  }
  groups_ = metadata_.value("groups", std::vector<std::string>{});
}

bool CheckpointReader::has_group(const std::string& group) const {
  return std::find(groups_.begin(), groups_.end(), group) != groups_.end();
}

void CheckpointReader::load_module(const std::string& group, torch::nn::Module& module) {
  if (!has_group(group)) throw CheckpointError(path_.string() + ": missing parameter group '" + group + "'");
  torch::serialize::InputArchive sub;
  std::vector<std::pair<std::string, std::vector<int64_t>>> shapes;
  for (const auto& p : module.named_parameters()) shapes.emplace_back(p.key(), p.value().sizes().vec());
  try {
    archive_.read(kGroupPrefix + group, sub);
    module.load(sub);
    // load() rebinds tensors without checking sizes.
    auto after = module.named_parameters();
    for (const auto& [name, shape] : shapes)
      if (after[name].sizes().vec() != shape)
        throw CheckpointError(path_.string() + ": group '" + group + "' has a different shape for '" + name + "'");
  } catch (const c10::Error& e) {
    throw CheckpointError(path_.string() + ": group '" + group + "' does not match the model: " +
                          e.what_without_backtrace());
  }
}

void CheckpointReader::load_children(torch::nn::Module& root, const std::string& prefix) {
  for (const auto& child : root.named_children()) load_module(prefix + child.key(), *child.value());
}

void CheckpointReader::load_optimizer(const std::string& name, torch::optim::Optimizer& optimizer) {
  torch::serialize::InputArchive sub;
  if (!archive_.try_read(kOptimizerPrefix + name, sub))
    throw CheckpointError(path_.string() + ": missing optimizer state '" + name + "'");
  optimizer.load(sub);
}

torch::Tensor CheckpointReader::tensor(const std::string& name) {
  torch::Tensor t;
  if (!archive_.try_read(kTensorPrefix + name, t))
    throw CheckpointError(path_.string() + ": missing tensor '" + name + "'");
  return t;
}

std::string CheckpointReader::string(const std::string& name) {
  c10::IValue v;
  if (!archive_.try_read(kStringPrefix + name, v))
    throw CheckpointError(path_.string() + ": missing record '" + name + "'");
  return v.toStringRef();
}

}  // namespace c4synth
