#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

namespace c4synth {

// Single-file container of named parameter groups, optimizer states, raw
// tensors and one JSON metadata record. Each group holds the full parameter
// and buffer set of one module.
class CheckpointWriter {
 public:
  explicit CheckpointWriter(nlohmann::json metadata);

  void add_module(const std::string& group, const torch::nn::Module& module);
  // Every direct child of `root` becomes a group named after it.
  void add_children(const torch::nn::Module& root, const std::string& prefix = {});
  void add_optimizer(const std::string& name, const torch::optim::Optimizer& optimizer);
  void add_tensor(const std::string& name, const torch::Tensor& tensor);
  void add_string(const std::string& name, const std::string& value);

  void save(const std::filesystem::path& path);

 private:
  nlohmann::json metadata_;
  std::vector<std::string> groups_;
  torch::serialize::OutputArchive archive_;
};

class CheckpointReader {
 public:
  explicit CheckpointReader(const std::filesystem::path& path);

  const nlohmann::json& metadata() const { return metadata_; }
  const std::vector<std::string>& groups() const { return groups_; }
  bool has_group(const std::string& group) const;

  void load_module(const std::string& group, torch::nn::Module& module);
  void load_children(torch::nn::Module& root, const std::string& prefix = {});
  void load_optimizer(const std::string& name, torch::optim::Optimizer& optimizer);
  torch::Tensor tensor(const std::string& name);
  std::string string(const std::string& name);

 private:
  std::filesystem::path path_;
  nlohmann::json metadata_;
  std::vector<std::string> groups_;
  torch::serialize::InputArchive archive_;
};

}  // namespace c4synth
