#pragma once

#include <torch/torch.h>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <memory>
#include <nlohmann/json.hpp>
#include <random>
#include <string>
#include <vector>

#include "c4synth/config.hpp"
#include "c4synth/data.hpp"
#include "c4synth/model.hpp"
#include "c4synth/text_encoding.hpp"

namespace c4synth {

torch::Dtype dtype_of(const TrainConfig& cfg);

// Frozen-encoder embeddings and captioner targets for every caption.
struct CaptionBank {
  std::vector<torch::Tensor> phis;                   // per example: n_captions x E
  std::vector<std::vector<CaptionTarget>> targets;   // per example, per caption
};

CaptionBank build_caption_bank(const Dataset& data, SjeModel& sje, int64_t max_len, torch::Dtype dtype);

struct TrainBatch {
  std::vector<std::size_t> rows;
  std::vector<std::vector<std::size_t>> caption_sets;  // per row, N caption indices
  std::vector<torch::Tensor> phis;                     // N tensors, B x E
  std::vector<TokenBatch> captions;                    // N captioner targets
  std::vector<torch::Tensor> real_by_slot;
};

// Real images resized once per discriminator resolution.
class RealImageCache {
 public:
  RealImageCache(const Dataset& data, const std::vector<int64_t>& resolutions, torch::Dtype dtype);
  std::vector<torch::Tensor> gather(std::span<const std::size_t> rows) const;

 private:
  std::vector<torch::Tensor> by_slot_;
};

TrainBatch assemble_batch(const Dataset& data, const CaptionBank& bank, const RealImageCache& reals,
                          std::span<const std::size_t> rows, std::size_t n_captions, std::mt19937_64& rng,
                          Split expected);

struct IterationRecord {
  int64_t iteration = 0;
  int64_t epoch = 0;
  double g_loss = 0.0;
  double adversarial = 0.0;
  double kl_sum = 0.0;
  double kl_term = 0.0;
  std::vector<double> kls;
  double cccl = 0.0;
  double total = 0.0;
  std::vector<double> d_losses;
  double d_fake_mean = 0.0;
  double grad_norm = 0.0;
  double wall_time = 0.0;
  int64_t g_updates = 0;
  int64_t d_updates = 0;

  nlohmann::json to_json() const;
  static IterationRecord from_json(const nlohmann::json& j);
};

// Append-only JSON-lines ledger: one header record, then one record per
// iteration.
class RunLedger {
 public:
  RunLedger() = default;
  explicit RunLedger(const std::filesystem::path& path);

  void write_header(const TrainConfig& cfg, const std::string& model_digest);
  void append(const IterationRecord& record);
  void append_event(const nlohmann::json& event);
  void flush();
  const std::vector<IterationRecord>& records() const { return records_; }

 private:
  std::ofstream out_;
  std::vector<IterationRecord> records_;
};

struct LedgerContents {
  nlohmann::json header;
  std::vector<IterationRecord> records;
  std::vector<nlohmann::json> events;
};
LedgerContents read_ledger(const std::filesystem::path& path);

class Trainer {
 public:
  Trainer(TrainConfig cfg, const Dataset& data, SjeModel sje);

  // Restores model, optimizers, counters and RNG streams. The variant must
  // match; an architecture digest mismatch is refused unless `force`.
  static std::unique_ptr<Trainer> resume(const std::filesystem::path& checkpoint, TrainConfig cfg,
                                         const Dataset& data, bool force = false);

  IterationRecord step();
  // Runs until `iterations` total iterations have been performed.
  std::vector<IterationRecord> run(int64_t iterations, RunLedger* ledger = nullptr,
                                   const std::filesystem::path& out_dir = {}, std::ostream* log = nullptr);
  int64_t planned_iterations() const;

  void save_checkpoint(const std::filesystem::path& path) const;

  void set_freeze_discriminators(bool freeze) { freeze_d_ = freeze; }
  C4SynthImpl& model() { return *model_; }
  std::shared_ptr<C4SynthImpl> model_ptr() { return model_; }
  SjeModel& sje() { return sje_; }
  const TrainConfig& config() const { return cfg_; }
  const Dataset& data() const { return data_; }
  int64_t iteration() const { return iteration_; }
  std::size_t captions_per_step() const { return n_captions_; }
  torch::optim::Adam& g_optimizer() { return *g_opt_; }
  torch::optim::Adam& d_optimizer() { return *d_opt_; }

 private:
  std::vector<std::size_t> next_rows();
  void apply_lr_schedule();
  [[noreturn]] void abort_non_finite(const std::string& term);
  void write_samples(const std::filesystem::path& path);

  TrainConfig cfg_;
  const Dataset& data_;
  SjeModel sje_;
  std::shared_ptr<C4SynthImpl> model_;
  std::unique_ptr<torch::optim::Adam> g_opt_;
  std::unique_ptr<torch::optim::Adam> d_opt_;
  CaptionBank bank_;
  std::unique_ptr<RealImageCache> reals_;
  std::vector<std::size_t> train_rows_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  int64_t epoch_ = 0;
  std::size_t n_captions_ = 0;
  std::mt19937_64 rng_;
  at::Generator noise_gen_;
  int64_t iteration_ = 0;
  int64_t g_updates_ = 0;
  int64_t d_updates_ = 0;
  bool freeze_d_ = false;
  std::chrono::steady_clock::time_point start_;
  double elapsed_before_ = 0.0;
  std::filesystem::path out_dir_;
};

// Synthetic data from the config, or a dataset directory for other kinds.
Dataset prepare_dataset(const TrainConfig& cfg, const std::filesystem::path& root = {},
                        std::ostream* warnings = nullptr);

}  // namespace c4synth
