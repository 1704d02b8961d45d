#include "c4synth/trainer.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

#include "c4synth/checkpoint.hpp"
#include "c4synth/error.hpp"
#include "c4synth/layers.hpp"

namespace c4synth {

using nlohmann::json;

torch::Dtype dtype_of(const TrainConfig& cfg) { return cfg.dtype == "double" ? torch::kDouble : torch::kFloat; }

CaptionBank build_caption_bank(const Dataset& data, SjeModel& sje, int64_t max_len, torch::Dtype dtype) {
  CaptionBank bank;
  bank.phis.resize(data.examples.size());
  bank.targets.resize(data.examples.size());
  sje.text->eval();
  torch::NoGradGuard no_grad;
  for (std::size_t i = 0; i < data.examples.size(); ++i) {
    const auto& ex = data.examples[i];
    bank.phis[i] = sje.embed_captions(ex.captions).to(dtype);
    for (const auto& c : ex.captions)
      bank.targets[i].push_back(CaptionTarget::from_words(sje.vocab.encode(c), sje.vocab.size(), max_len));
  }
  return bank;
}

RealImageCache::RealImageCache(const Dataset& data, const std::vector<int64_t>& resolutions, torch::Dtype dtype) {
  std::vector<torch::Tensor> images;
  images.reserve(data.examples.size());
  for (const auto& ex : data.examples) images.push_back(ex.image);
  auto all = torch::stack(images);
  for (auto r : resolutions) by_slot_.push_back(resize_images(all, r).to(dtype).contiguous());
}

std::vector<torch::Tensor> RealImageCache::gather(std::span<const std::size_t> rows) const {
  std::vector<int64_t> idx(rows.begin(), rows.end());
  auto index = torch::tensor(idx, torch::kLong);
  std::vector<torch::Tensor> out;
  for (const auto& t : by_slot_) out.push_back(t.index_select(0, index));
  return out;
}

TrainBatch assemble_batch(const Dataset& data, const CaptionBank& bank, const RealImageCache& reals,
                          std::span<const std::size_t> rows, std::size_t n_captions, std::mt19937_64& rng,
                          Split expected) {
  data.check_firewall(rows, expected);
  TrainBatch b;
  b.rows.assign(rows.begin(), rows.end());
  for (auto row : rows) b.caption_sets.push_back(sample_caption_set(data.examples.at(row), n_captions, rng));
  for (std::size_t k = 0; k < n_captions; ++k) {
    std::vector<torch::Tensor> phis;
    std::vector<CaptionTarget> targets;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto row = rows[i];
      const auto cap = b.caption_sets[i][k];
      if (!bank.phis.at(row).defined()) throw InvalidArgument("caption bank has no entry for row " + std::to_string(row));
      phis.push_back(bank.phis[row][static_cast<int64_t>(cap)]);
      targets.push_back(bank.targets[row].at(cap));
    }
    b.phis.push_back(torch::stack(phis));
    b.captions.push_back(make_target_batch(targets));
  }
  b.real_by_slot = reals.gather(rows);
  return b;
}

// -- ledger -------------------------------------------------------------------

json IterationRecord::to_json() const {
  return json{{"type", "iteration"},  {"iteration", iteration}, {"epoch", epoch},
              {"g_loss", g_loss},     {"adversarial", adversarial}, {"kl_sum", kl_sum},
              {"kl_term", kl_term},   {"kls", kls},             {"cccl", cccl},
              {"total", total},       {"d_losses", d_losses},   {"d_fake_mean", d_fake_mean},
              {"grad_norm", grad_norm}, {"wall_time", wall_time}, {"g_updates", g_updates},
              {"d_updates", d_updates}};
}

IterationRecord IterationRecord::from_json(const json& j) {
  IterationRecord r;
  r.iteration = j.at("iteration");
  r.epoch = j.value("epoch", int64_t{0});
  r.g_loss = j.at("g_loss");
  r.adversarial = j.at("adversarial");
  r.kl_sum = j.at("kl_sum");
  r.kl_term = j.at("kl_term");
  r.kls = j.at("kls").get<std::vector<double>>();
  r.cccl = j.at("cccl");
  r.total = j.at("total");
  r.d_losses = j.at("d_losses").get<std::vector<double>>();
  r.d_fake_mean = j.value("d_fake_mean", 0.0);
  r.grad_norm = j.value("grad_norm", 0.0);
  r.wall_time = j.at("wall_time");
  r.g_updates = j.at("g_updates");
  r.d_updates = j.at("d_updates");
  return r;
}

RunLedger::RunLedger(const std::filesystem::path& path) : out_(path, std::ios::app) {
  if (!out_) throw std::runtime_error("cannot open ledger " + path.string());
}

void RunLedger::write_header(const TrainConfig& cfg, const std::string& digest) {
  json h{{"type", "header"},
         {"variant", to_string(cfg.variant)},
         {"seed", cfg.seed},
         {"model_digest", digest},
         {"config", echo_config(cfg)}};
  if (out_.is_open()) out_ << h.dump() << '\n';
}

void RunLedger::append(const IterationRecord& record) {
  if (!records_.empty() && record.iteration <= records_.back().iteration)
    throw InvalidArgument("ledger iterations must increase");
  records_.push_back(record);
  if (out_.is_open()) out_ << record.to_json().dump() << '\n';
}

void RunLedger::append_event(const json& event) {
  if (out_.is_open()) out_ << event.dump() << '\n';
}

void RunLedger::flush() {
  if (out_.is_open()) out_.flush();
}

LedgerContents read_ledger(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot read ledger " + path.string());
  LedgerContents out;
  std::string line;
  int64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw InvalidArgument(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    const auto type = j.value("type", std::string{});
    if (type == "header") {
      if (out.header.is_null()) out.header = j;
    } else if (type == "iteration") {
      out.records.push_back(IterationRecord::from_json(j));
    } else {
      out.events.push_back(j);
    }
  }
  return out;
}

// -- trainer ------------------------------------------------------------------

Trainer::Trainer(TrainConfig cfg, const Dataset& data, SjeModel sje)
    : cfg_(std::move(cfg)), data_(data), sje_(std::move(sje)), noise_gen_(make_generator(cfg_.seed + 1)) {
  cfg_.validate();
  torch::set_num_threads(static_cast<int>(cfg_.threads));
  const auto dtype = dtype_of(cfg_);
  n_captions_ = static_cast<std::size_t>(cfg_.gan.stages);
  train_rows_ = data_.indices(Split::kTrain);
  data_.check_firewall(train_rows_, Split::kTrain);
  if (static_cast<int64_t>(train_rows_.size()) < cfg_.batch_size)
    throw ConfigError("batch_size", std::to_string(cfg_.batch_size) + " exceeds the " +
                                        std::to_string(train_rows_.size()) + " training examples");
  for (auto row : train_rows_)
    if (data_.examples[row].captions.size() < n_captions_)
      throw ConfigError("stages", "example " + data_.examples[row].id + " has only " +
                                      std::to_string(data_.examples[row].captions.size()) + " captions");

  model_ = make_model(model_spec_from(cfg_, sje_.vocab.size()), cfg_.seed);
  model_->to(dtype);
  auto adam = [&](double lr) { return torch::optim::AdamOptions(lr).betas({cfg_.beta1, cfg_.beta2}); };
  g_opt_ = std::make_unique<torch::optim::Adam>(model_->generator_parameters(), adam(cfg_.lr_g));
  d_opt_ = std::make_unique<torch::optim::Adam>(model_->discriminator_parameters(), adam(cfg_.lr_d));

  bank_ = build_caption_bank(data_, sje_, cfg_.cccn.max_len, dtype);
  reals_ = std::make_unique<RealImageCache>(data_, model_->slot_resolutions(), dtype);
  rng_.seed(cfg_.seed);
  start_ = std::chrono::steady_clock::now();
}

int64_t Trainer::planned_iterations() const {
  if (cfg_.max_iterations > 0) return cfg_.max_iterations;
  return cfg_.epochs * (static_cast<int64_t>(train_rows_.size()) / cfg_.batch_size);
}

std::vector<std::size_t> Trainer::next_rows() {
  const auto b = static_cast<std::size_t>(cfg_.batch_size);
  if (order_.empty() || cursor_ + b > order_.size()) {
    if (!order_.empty()) ++epoch_;
    order_ = train_rows_;
    std::shuffle(order_.begin(), order_.end(), rng_);
    cursor_ = 0;
  }
  std::vector<std::size_t> rows(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                                order_.begin() + static_cast<std::ptrdiff_t>(cursor_ + b));
  cursor_ += b;
  return rows;
}

void Trainer::abort_non_finite(const std::string& term) {
  if (!out_dir_.empty()) {
    std::filesystem::create_directories(out_dir_ / "checkpoints");
    save_checkpoint(out_dir_ / "checkpoints" / "nonfinite.pt");
  }
  throw NonFiniteLoss(term, static_cast<long>(iteration_));
}

void Trainer::apply_lr_schedule() {
  const int64_t end = planned_iterations();
  if (cfg_.lr_decay_from <= 0 || cfg_.lr_decay_from >= end) return;
  const double scale =
      iteration_ < cfg_.lr_decay_from
          ? 1.0
          : static_cast<double>(end - iteration_) / static_cast<double>(end - cfg_.lr_decay_from);
  auto set = [&](torch::optim::Adam& opt, double lr) {
    for (auto& group : opt.param_groups())
      static_cast<torch::optim::AdamOptions&>(group.options()).lr(std::max(scale, 0.0) * lr);
  };
  set(*g_opt_, cfg_.lr_g);
  set(*d_opt_, cfg_.lr_d);
}

IterationRecord Trainer::step() {
  apply_lr_schedule();
  const auto rows = next_rows();
  auto batch = assemble_batch(data_, bank_, *reals_, rows, n_captions_, rng_, Split::kTrain);
  model_->train();
  const auto opts = torch::TensorOptions().dtype(dtype_of(cfg_));
  auto noise = NoiseDraw::sample(cfg_.batch_size, n_captions_, cfg_.gan.noise_dim, cfg_.gan.cond_dim,
                                 noise_gen_, opts);
  auto roll = model_->rollout(batch.phis, noise, RolloutOptions{cfg_.detach_feedback, cfg_.detach_hidden});

  IterationRecord rec;
  rec.iteration = iteration_;
  rec.epoch = epoch_;

  // Discriminators first, on detached fakes.
  {
    std::optional<torch::NoGradGuard> frozen;
    if (freeze_d_) frozen.emplace();
    if (!freeze_d_) d_opt_->zero_grad();
    auto d_losses = discriminator_objective(*model_, roll, batch.real_by_slot, cfg_.mismatched_negatives);
    torch::Tensor d_total;
    for (std::size_t s = 0; s < d_losses.size(); ++s) {
      const double v = d_losses[s].item<double>();
      if (!std::isfinite(v)) abort_non_finite("d_loss_" + std::to_string(s));
      rec.d_losses.push_back(v);
      d_total = d_total.defined() ? d_total + d_losses[s] : d_losses[s];
    }
    if (!freeze_d_) {
      d_total.backward();
      d_opt_->step();
      ++d_updates_;
    }
  }

  // Generator side: backbone/trunk, heads, conditioning, captioner.
  auto d_params = model_->discriminator_parameters();
  for (auto& p : d_params) p.requires_grad_(false);
  g_opt_->zero_grad();
  ObjectiveOptions obj{cfg_.gan.lambda, cfg_.paper_exact_gloss, cfg_.cccn_weight, cfg_.cccn_detach};
  auto lb = generator_objective(*model_, roll, batch.captions, obj);
  rec.adversarial = lb.adversarial.item<double>();
  rec.kl_sum = lb.kl_sum.item<double>();
  rec.kl_term = lb.kl_term.item<double>();
  rec.cccl = lb.cccl.item<double>();
  if (!std::isfinite(rec.adversarial)) abort_non_finite("adversarial");
  if (!std::isfinite(rec.kl_sum)) abort_non_finite("kl");
  if (!std::isfinite(rec.cccl)) abort_non_finite("cccl");
  for (const auto& k : lb.kls) rec.kls.push_back(k.item<double>());
  rec.g_loss = lb.g_loss.item<double>();
  rec.total = lb.total.item<double>();
  rec.d_fake_mean = lb.d_fake_mean;
  lb.total.backward();
  for (auto& p : d_params) p.requires_grad_(true);
  if (cfg_.variant == Variant::kRecurrent && cfg_.grad_clip > 0)
    rec.grad_norm = torch::nn::utils::clip_grad_norm_(model_->generator_parameters(), cfg_.grad_clip);
  g_opt_->step();
  ++g_updates_;

  ++iteration_;
  rec.g_updates = g_updates_;
  rec.d_updates = d_updates_;
  rec.wall_time = elapsed_before_ +
                  std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  return rec;
}

std::vector<IterationRecord> Trainer::run(int64_t iterations, RunLedger* ledger, const std::filesystem::path& out_dir,
                                          std::ostream* log) {
  out_dir_ = out_dir;
  std::vector<IterationRecord> out;
  while (iteration_ < iterations) {
    auto rec = step();
    if (ledger) ledger->append(rec);
    out.push_back(rec);
    if (log && (iteration_ % 50 == 0 || iteration_ == iterations))
      *log << "iter " << iteration_ << " g " << rec.g_loss << " cccl " << rec.cccl << " d0 " << rec.d_losses.front()
           << " d_fake " << rec.d_fake_mean << " t " << std::fixed << std::setprecision(1) << rec.wall_time
           << std::defaultfloat << std::setprecision(6) << "s\n";
    if (!out_dir.empty() && cfg_.checkpoint_every > 0 && iteration_ % cfg_.checkpoint_every == 0) {
      std::ostringstream name;
      name << "iter_" << std::setw(6) << std::setfill('0') << iteration_ << ".pt";
      auto path = out_dir / "checkpoints" / name.str();
      std::filesystem::create_directories(path.parent_path());
      save_checkpoint(path);
      if (ledger) ledger->append_event({{"type", "checkpoint"}, {"iteration", iteration_}, {"path", path.string()}});
    }
    if (!out_dir.empty() && cfg_.sample_every > 0 && iteration_ % cfg_.sample_every == 0) {
      std::ostringstream name;
      name << "iter_" << std::setw(6) << std::setfill('0') << iteration_ << ".png";
      write_samples(out_dir / "samples" / name.str());
    }
    if (ledger) ledger->flush();
  }
  return out;
}

void Trainer::write_samples(const std::filesystem::path& path) {
  std::filesystem::create_directories(path.parent_path());
  const std::size_t n = std::min<std::size_t>(8, train_rows_.size());
  // Spread over the split so every training class shows up.
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < n; ++i) rows.push_back(train_rows_[(i * train_rows_.size()) / n]);
  const auto opts = torch::TensorOptions().dtype(dtype_of(cfg_));
  std::vector<torch::Tensor> phis;
  for (std::size_t k = 0; k < n_captions_; ++k) {
    std::vector<torch::Tensor> rowsk;
    for (auto r : rows) rowsk.push_back(bank_.phis[r][static_cast<int64_t>(k)]);
    phis.push_back(torch::stack(rowsk));
  }
  auto gen = make_generator(cfg_.seed);
  NoiseDraw noise;
  noise.z = torch::randn({static_cast<int64_t>(n), cfg_.gan.noise_dim}, gen, opts);
  for (std::size_t k = 0; k < n_captions_; ++k)
    noise.eps.push_back(torch::zeros({static_cast<int64_t>(n), cfg_.gan.cond_dim}, opts));
  torch::NoGradGuard no_grad;
  model_->eval();
  auto roll = model_->rollout(phis, noise);
  model_->train();
  const auto& imgs = roll.final_image();
  std::vector<torch::Tensor> frames;
  for (int64_t i = 0; i < imgs.size(0); ++i) frames.push_back(imgs[i].to(torch::kFloat));
  write_png(path, image_strip(frames));
}

void Trainer::save_checkpoint(const std::filesystem::path& path) const {
  const double elapsed =
      elapsed_before_ + std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  json meta{{"kind", "c4synth-run"},
            {"variant", to_string(cfg_.variant)},
            {"model_digest", model_digest(cfg_)},
            {"config", echo_config(cfg_)},
            {"iteration", iteration_},
            {"epoch", epoch_},
            {"cursor", cursor_},
            {"g_updates", g_updates_},
            {"d_updates", d_updates_},
            {"elapsed", elapsed},
            {"vocab_hash", sje_.vocab.hash()}};
  CheckpointWriter w(meta);
  w.add_children(*model_);
  w.add_module("text_encoder", *sje_.text);
  w.add_optimizer("g", *g_opt_);
  w.add_optimizer("d", *d_opt_);
  w.add_tensor("noise_rng", noise_gen_.get_state());
  std::ostringstream rng;
  rng << rng_;
  w.add_string("data_rng", rng.str());
  w.add_string("order", json(order_).dump());
  std::string vocab;
  for (const auto& t : sje_.vocab.tokens()) vocab += t + '\n';
  w.add_string("vocabulary", vocab);
  w.save(path);
}

std::unique_ptr<Trainer> Trainer::resume(const std::filesystem::path& checkpoint, TrainConfig cfg,
                                         const Dataset& data, bool force) {
  CheckpointReader r(checkpoint);
  const auto& meta = r.metadata();
  if (meta.value("kind", std::string{}) != "c4synth-run")
    throw CheckpointError(checkpoint.string() + " is not a training checkpoint");
  const auto variant = meta.at("variant").get<std::string>();
  if (variant != to_string(cfg.variant))
    throw ConfigError("variant", "checkpoint holds a " + variant + " model, config asks for " +
                                     to_string(cfg.variant));
  if (meta.at("model_digest").get<std::string>() != model_digest(cfg) && !force)
    throw ConfigError("checkpoint", "architecture digest differs from the live config; use --force to load anyway");

  std::vector<std::string> tokens;
  std::istringstream vs(r.string("vocabulary"));
  for (std::string line; std::getline(vs, line);) tokens.push_back(line);
  auto sje = make_sje_model(Vocabulary::from_tokens(std::move(tokens)), cfg.text, cfg.seed);
  r.load_module("text_encoder", *sje.text);

  auto t = std::make_unique<Trainer>(std::move(cfg), data, std::move(sje));
  r.load_children(*t->model_);
  r.load_optimizer("g", *t->g_opt_);
  r.load_optimizer("d", *t->d_opt_);
  t->noise_gen_.set_state(r.tensor("noise_rng"));
  std::istringstream rng(r.string("data_rng"));
  rng >> t->rng_;
  t->order_ = json::parse(r.string("order")).get<std::vector<std::size_t>>();
  t->cursor_ = meta.at("cursor").get<std::size_t>();
  t->epoch_ = meta.at("epoch");
  t->iteration_ = meta.at("iteration");
  t->g_updates_ = meta.at("g_updates");
  t->d_updates_ = meta.at("d_updates");
  t->elapsed_before_ = meta.value("elapsed", 0.0);
  return t;
}

Dataset prepare_dataset(const TrainConfig& cfg, const std::filesystem::path& root, std::ostream* warnings) {
  const auto kind = parse_dataset_kind(cfg.dataset_kind);
  if (!root.empty()) return load_dataset(root, kind, cfg.image_size, warnings);
  if (kind != DatasetKind::kSynthetic)
    throw ConfigError("dataset_kind", cfg.dataset_kind + " data needs a dataset directory");
  return make_synthetic(synth_spec_from(cfg), cfg.synth_seed);
}

}  // namespace c4synth
