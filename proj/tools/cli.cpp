#include "cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include "c4synth/error.hpp"
#include "c4synth/eval.hpp"
#include "c4synth/layers.hpp"
#include "c4synth/trainer.hpp"

namespace c4synth::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::map<std::string, unsigned>& verb_masks() {
  static const std::map<std::string, unsigned> masks{
      {"synth-data", kVerbSynthData}, {"train-sje", kVerbTrainSje}, {"train", kVerbTrain},
      {"generate", kVerbGenerate},     {"interpolate", kVerbInterpolate}, {"score", kVerbScore},
      {"inspect-ledger", kVerbInspect}};
  return masks;
}

// Held for the lifetime of a verb; a second invocation on the same output
// directory fails instead of interleaving writes.
class OutputLock {
 public:
  explicit OutputLock(const fs::path& dir) : path_(dir / ".lock") {
    fs::create_directories(dir);
    FILE* f = std::fopen(path_.c_str(), "wx");
    if (!f) throw std::runtime_error("output directory " + dir.string() + " is locked (" + path_.string() + ")");
    std::fclose(f);
  }
  ~OutputLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  OutputLock(const OutputLock&) = delete;
  OutputLock& operator=(const OutputLock&) = delete;

 private:
  fs::path path_;
};

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::string out;
};

TrainConfig resolve_config(const Common& c) {
  TrainConfig cfg = c.config.empty() ? TrainConfig{} : load_config(c.config);
  for (const auto& s : c.sets) apply_override(cfg, s);
  cfg.validate();
  return cfg;
}

fs::path require_out(const Common& c) {
  if (c.out.empty()) throw InvalidArgument("--out is required");
  return c.out;
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
}

void write_echo(const fs::path& out, const TrainConfig& cfg) { write_text(out / "config.echo", echo_config(cfg)); }

// "synth" (or empty) regenerates the synthetic set from the config.
fs::path dataset_root(const std::string& arg) { return arg.empty() || arg == "synth" ? fs::path{} : fs::path(arg); }

// Applies overrides to a checkpoint's config; the architecture must not move.
void override_run_config(LoadedRun& run, const std::vector<std::string>& sets) {
  const auto digest = model_digest(run.cfg);
  for (const auto& s : sets) apply_override(run.cfg, s);
  run.cfg.validate();
  if (model_digest(run.cfg) != digest) throw ConfigError("--set", "architectural keys cannot change for a trained checkpoint");
}

std::vector<std::size_t> rows_for_split(const Dataset& data, const std::string& split) {
  if (split == "train") return data.indices(Split::kTrain);
  if (split == "test") return data.indices(Split::kTest);
  if (split == "all") {
    std::vector<std::size_t> rows(data.examples.size());
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
    return rows;
  }
  throw ConfigError("--split", "expected train, test or all, got '" + split + "'");
}

int run_synth_data(const Common& c, std::ostream& out) {
  auto cfg = resolve_config(c);
  auto dir = require_out(c);
  OutputLock lock(dir);
  write_echo(dir, cfg);
  auto data = make_synthetic(synth_spec_from(cfg), cfg.synth_seed);
  export_dataset(data, dir / "data");
  out << "wrote " << data.examples.size() << " examples (" << data.num_classes() << " classes) to "
      << (dir / "data").string() << '\n';
  return 0;
}

SjeModel fit_sje(const TrainConfig& cfg, const Dataset& data, const fs::path& dir, std::ostream& log) {
  auto sje = make_sje_model(build_vocabulary(data, cfg), cfg.text, cfg.seed);
  sje.config_digest = full_digest(cfg);
  auto report = train_sje(sje, data, cfg, &log);
  fs::create_directories(dir / "checkpoints");
  save_sje(sje, dir / "checkpoints" / "sje.pt");
  write_text(dir / "reports" / "sje.json",
             json{{"final_surrogate", report.surrogate.empty() ? 0.0 : report.surrogate.back()},
                  {"train_zero_one", report.train_zero_one},
                  {"iterations", report.surrogate.size()}}
                     .dump(2));
  log << "sje train zero-one loss " << report.train_zero_one << '\n';
  return sje;
}

int run_train_sje(const Common& c, const std::string& dataset, std::ostream& out) {
  auto cfg = resolve_config(c);
  auto dir = require_out(c);
  OutputLock lock(dir);
  write_echo(dir, cfg);
  auto data = prepare_dataset(cfg, dataset_root(dataset), &std::cerr);
  fit_sje(cfg, data, dir, out);
  return 0;
}

int run_train(const Common& c, const std::string& dataset, const std::string& sje_path, const std::string& resume,
              bool force, std::ostream& out) {
  auto cfg = resolve_config(c);
  auto dir = require_out(c);
  OutputLock lock(dir);
  write_echo(dir, cfg);
  auto data = prepare_dataset(cfg, dataset_root(dataset), &std::cerr);

  std::unique_ptr<Trainer> trainer;
  if (!resume.empty()) {
    trainer = Trainer::resume(resume, cfg, data, force);
  } else {
    SjeModel sje = sje_path.empty() ? fit_sje(cfg, data, dir, out) : load_sje(sje_path);
    if (sje.text->embed_dim() != cfg.text.embed_dim)
      throw ConfigError("embed_dim", "encoder produces " + std::to_string(sje.text->embed_dim()) +
                                         "-d embeddings, config expects " + std::to_string(cfg.text.embed_dim));
    trainer = std::make_unique<Trainer>(cfg, data, std::move(sje));
  }
  RunLedger ledger(dir / "ledger.jsonl");
  if (resume.empty())
    ledger.write_header(cfg, model_digest(cfg));
  else
    ledger.append_event({{"type", "resume"}, {"iteration", trainer->iteration()}, {"checkpoint", resume}});
  try {
    trainer->run(trainer->planned_iterations(), &ledger, dir, &out);
  } catch (const NonFiniteLoss& e) {
    ledger.append_event({{"type", "abort"}, {"term", e.term()}, {"iteration", trainer->iteration()}});
    ledger.flush();
    throw;
  }
  const auto final_path = dir / "checkpoints" / "final.pt";
  fs::create_directories(final_path.parent_path());
  trainer->save_checkpoint(final_path);
  ledger.append_event({{"type", "checkpoint"}, {"iteration", trainer->iteration()}, {"path", final_path.string()}});
  ledger.flush();
  out << "trained " << trainer->iteration() << " iterations; checkpoint " << final_path.string() << '\n';
  return 0;
}

int run_generate(const Common& c, const std::string& checkpoint, const std::string& dataset,
                 const std::vector<std::string>& classes, int64_t per_class, uint64_t seed, std::ostream& out) {
  auto dir = require_out(c);
  OutputLock lock(dir);
  auto run = load_run(checkpoint);
  override_run_config(run, c.sets);
  write_echo(dir, run.cfg);
  auto data = prepare_dataset(run.cfg, dataset_root(dataset), &std::cerr);

  std::vector<int64_t> class_ids;
  if (classes.empty()) {
    class_ids = data.classes(Split::kTest);
  } else {
    for (const auto& name : classes) {
      auto it = std::find(data.class_names.begin(), data.class_names.end(), name);
      if (it == data.class_names.end()) throw InvalidArgument("unknown class '" + name + "'");
      class_ids.push_back(it - data.class_names.begin());
    }
  }
  std::vector<std::size_t> rows;
  for (auto cls : class_ids) {
    int64_t taken = 0;
    for (std::size_t i = 0; i < data.examples.size() && taken < per_class; ++i)
      if (data.examples[i].class_id == cls) {
        rows.push_back(i);
        ++taken;
      }
  }
  auto set = zero_shot_generate(run, data, rows, seed);
  fs::create_directories(dir / "samples");
  json meta = set.metadata();
  meta["checkpoint"] = checkpoint;
  meta["checkpoint_digest"] = run.checkpoint_digest;
  for (std::size_t i = 0; i < set.ids.size(); ++i) {
    std::ostringstream name;
    name << "zero_shot_" << std::setw(4) << std::setfill('0') << i << ".png";
    write_png(dir / "samples" / name.str(), set.images[static_cast<int64_t>(i)]);
    meta["images"][i]["file"] = "samples/" + name.str();
  }
  write_text(dir / "reports" / "generate.json", meta.dump(2));
  out << "generated " << set.ids.size() << " zero-shot images into " << (dir / "samples").string() << '\n';
  return 0;
}

int run_interpolate(const Common& c, const std::string& checkpoint, const std::string& dataset,
                    std::vector<std::string> captions, const std::string& cls, uint64_t seed0, uint64_t seed1,
                    int64_t steps, std::ostream& out) {
  auto dir = require_out(c);
  OutputLock lock(dir);
  auto run = load_run(checkpoint);
  override_run_config(run, c.sets);
  write_echo(dir, run.cfg);
  const auto n = run.model->default_captions();
  if (captions.empty()) {
    auto data = prepare_dataset(run.cfg, dataset_root(dataset), &std::cerr);
    auto rows = data.indices(Split::kTest);
    if (!cls.empty()) {
      auto it = std::find(data.class_names.begin(), data.class_names.end(), cls);
      if (it == data.class_names.end()) throw InvalidArgument("unknown class '" + cls + "'");
      const auto id = it - data.class_names.begin();
      rows.clear();
      for (std::size_t i = 0; i < data.examples.size(); ++i)
        if (data.examples[i].class_id == id) rows.push_back(i);
      data.check_firewall(rows, Split::kTest);
    }
    if (rows.empty()) throw InvalidArgument("no examples to take captions from");
    const auto& ex = data.examples[rows.front()];
    captions.assign(ex.captions.begin(), ex.captions.begin() + static_cast<std::ptrdiff_t>(std::min(n, ex.captions.size())));
  }
  if (captions.size() != n && run.cfg.variant == Variant::kCascaded)
    throw InvalidArgument("cascaded model needs exactly " + std::to_string(n) + " captions");
  auto g0 = make_generator(seed0);
  auto g1 = make_generator(seed1);
  auto z0 = torch::randn({run.cfg.gan.noise_dim}, g0, torch::kDouble);
  auto z1 = torch::randn({run.cfg.gan.noise_dim}, g1, torch::kDouble);
  auto result = interpolate_noise(run, captions, z0, z1, steps);
  fs::create_directories(dir / "samples");
  write_png(dir / "samples" / "interpolation.png", result.strip);
  for (std::size_t i = 0; i < result.frames.size(); ++i) {
    std::ostringstream name;
    name << "interp_" << std::setw(3) << std::setfill('0') << i << ".png";
    write_png(dir / "samples" / name.str(), result.frames[i]);
  }
  write_text(dir / "reports" / "interpolate.json",
             json{{"captions", captions}, {"seed0", seed0}, {"seed1", seed1}, {"steps", steps},
                  {"checkpoint", checkpoint}, {"checkpoint_digest", run.checkpoint_digest}}
                 .dump(2));
  out << "wrote " << steps << "-frame interpolation to " << (dir / "samples" / "interpolation.png").string() << '\n';
  return 0;
}

int run_score(const Common& c, const std::string& checkpoint, const std::string& dataset, const std::string& split,
              const std::string& classifier_path, uint64_t seed, std::ostream& out) {
  auto dir = require_out(c);
  OutputLock lock(dir);
  auto run = load_run(checkpoint);
  override_run_config(run, c.sets);
  write_echo(dir, run.cfg);
  auto data = prepare_dataset(run.cfg, dataset_root(dataset), &std::cerr);
  Classifier clf;
  if (!classifier_path.empty()) {
    clf = load_classifier(classifier_path);
  } else {
    clf = train_classifier(data, run.cfg, &std::cerr);
    fs::create_directories(dir / "reports");
    save_classifier(clf, dir / "reports" / "classifier.pt");
  }
  auto rows = scoring_sample(rows_for_split(data, split), static_cast<std::size_t>(run.cfg.is_images), seed);
  auto set = generate_for_rows(run, data, rows, seed, std::nullopt);
  auto report = inception_score(clf.probabilities(set.images), run.cfg.is_splits, clf.id);
  json j = report.to_json();
  j["cccn_token_accuracy"] = captioner_token_accuracy(run, data, rows, seed, std::nullopt);
  j["split"] = split;
  j["checkpoint"] = checkpoint;
  j["checkpoint_digest"] = run.checkpoint_digest;
  j["seed"] = seed;
  write_text(dir / "reports" / "score.json", j.dump(2));
  out << j.dump() << '\n';
  return 0;
}

int run_inspect(const std::string& ledger_path, std::ostream& out) {
  auto contents = read_ledger(ledger_path);
  json summary{{"records", contents.records.size()}, {"events", contents.events.size()}};
  if (!contents.header.is_null()) {
    summary["variant"] = contents.header.value("variant", "");
    summary["seed"] = contents.header.value("seed", json());
  }
  bool finite = true, monotone = true;
  for (std::size_t i = 0; i < contents.records.size(); ++i) {
    const auto& r = contents.records[i];
    finite = finite && std::isfinite(r.g_loss) && std::isfinite(r.cccl) && std::isfinite(r.kl_sum);
    for (double d : r.d_losses) finite = finite && std::isfinite(d);
    if (i > 0 && r.iteration <= contents.records[i - 1].iteration) monotone = false;
  }
  summary["all_finite"] = finite;
  summary["monotone_iterations"] = monotone;
  if (!contents.records.empty()) {
    const auto& first = contents.records.front();
    const auto& last = contents.records.back();
    summary["first"] = first.to_json();
    summary["last"] = last.to_json();
  }
  out << summary.dump(2) << '\n';
  return 0;
}

}  // namespace

std::string verb_keys_help(const std::string& verb) {
  const auto it = verb_masks().find(verb);
  if (it == verb_masks().end()) return {};
  std::ostringstream s;
  s << "Config keys (--config file or --set key=value):\n";
  TrainConfig defaults;
  for (const auto& f : config_schema())
    if (f.verbs & it->second)
      s << "  " << std::left << std::setw(24) << f.key << f.help << " [" << f.get(defaults) << "]\n";
  return s.str();
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-caption text-to-image synthesis with cross-caption cycle consistency", "c4synth"};
  app.require_subcommand(1);

  Common common;
  std::string dataset, checkpoint, sje_path, resume, split = "all", classifier_path, ledger_path, cls;
  std::vector<std::string> classes, captions;
  bool force = false;
  int64_t per_class = 4, steps = 8;
  uint64_t seed = 0, seed0 = 0, seed1 = 1;

  auto add_common = [&](CLI::App* sub, bool config_file) {
    if (config_file) sub->add_option("--config", common.config, "Config file (key = value lines)");
    sub->add_option("--set", common.sets, "Override one config key (key=value); repeatable");
    sub->add_option("--out", common.out, "Output directory");
    sub->footer(verb_keys_help(sub->get_name()));
  };

  auto* synth = app.add_subcommand("synth-data", "Write the procedural synthetic dataset");
  add_common(synth, true);

  auto* sje = app.add_subcommand("train-sje", "Pre-train the text/image joint embedding");
  add_common(sje, true);
  sje->add_option("--dataset", dataset, "'synth' or a dataset directory");

  auto* train = app.add_subcommand("train", "Adversarial training of a cascaded or recurrent model");
  add_common(train, true);
  train->add_option("--dataset", dataset, "'synth' or a dataset directory");
  train->add_option("--sje", sje_path, "Pre-trained encoder checkpoint (trained first when omitted)");
  train->add_option("--resume", resume, "Continue from a training checkpoint");
  train->add_flag("--force", force, "Load a checkpoint despite an architecture digest mismatch");

  auto* gen = app.add_subcommand("generate", "Zero-shot generation for held-out classes");
  add_common(gen, false);
  gen->add_option("--checkpoint", checkpoint, "Training checkpoint")->required();
  gen->add_option("--dataset", dataset, "'synth' or a dataset directory");
  gen->add_option("--class", classes, "Class to generate (test split only); repeatable");
  gen->add_option("--per-class", per_class, "Images per class");
  gen->add_option("--seed", seed, "Noise and caption-set seed");

  auto* interp = app.add_subcommand("interpolate", "Noise interpolation with fixed captions");
  add_common(interp, false);
  interp->add_option("--checkpoint", checkpoint, "Training checkpoint")->required();
  interp->add_option("--dataset", dataset, "'synth' or a dataset directory");
  interp->add_option("--caption", captions, "Caption text; repeat once per step");
  interp->add_option("--class", cls, "Take captions from the first example of this test class");
  interp->add_option("--seed0", seed0, "Seed of the start noise vector");
  interp->add_option("--seed1", seed1, "Seed of the end noise vector");
  interp->add_option("--steps", steps, "Frames, including both endpoints");

  auto* score = app.add_subcommand("score", "Inception-style score with the synthetic classifier");
  add_common(score, false);
  score->add_option("--checkpoint", checkpoint, "Training checkpoint")->required();
  score->add_option("--dataset", dataset, "'synth' or a dataset directory");
  score->add_option("--split", split, "Caption source: train, test or all");
  score->add_option("--classifier", classifier_path, "Saved classifier (trained on real images when omitted)");
  score->add_option("--seed", seed, "Noise and caption-set seed");

  auto* inspect = app.add_subcommand("inspect-ledger", "Summarise a training ledger");
  inspect->add_option("ledger", ledger_path, "ledger.jsonl path")->required();
  inspect->footer(verb_keys_help("inspect-ledger"));

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (synth->parsed()) return run_synth_data(common, out);
    if (sje->parsed()) return run_train_sje(common, dataset, out);
    if (train->parsed()) return run_train(common, dataset, sje_path, resume, force, out);
    if (gen->parsed()) return run_generate(common, checkpoint, dataset, classes, per_class, seed, out);
    if (interp->parsed())
      return run_interpolate(common, checkpoint, dataset, captions, cls, seed0, seed1, steps, out);
    if (score->parsed()) return run_score(common, checkpoint, dataset, split, classifier_path, seed, out);
    if (inspect->parsed()) return run_inspect(ledger_path, out);
  } catch (const InvalidArgument& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "failed: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace c4synth::cli
