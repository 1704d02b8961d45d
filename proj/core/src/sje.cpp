#include <ostream>
#include <random>

#include "c4synth/checkpoint.hpp"
#include "c4synth/data.hpp"
#include "c4synth/error.hpp"
#include "c4synth/layers.hpp"
#include "c4synth/text_encoding.hpp"

namespace c4synth {

torch::Tensor SjeModel::embed_captions(std::span<const std::string> captions) {
  std::vector<std::vector<int64_t>> seqs;
  seqs.reserve(captions.size());
  for (const auto& c : captions) {
    auto ids = vocab.encode(c);
    if (ids.empty()) throw InvalidArgument("caption has no words: '" + c + "'");
    seqs.push_back(std::move(ids));
  }
  return text->forward(make_token_batch(seqs));
}

SjeModel make_sje_model(Vocabulary vocab, const TextHyper& hyper, uint64_t seed) {
  SjeModel m;
  m.vocab = std::move(vocab);
  m.hyper = hyper;
  m.text = TextEncoder(m.vocab.size(), hyper);
  m.image = ImageEncoder(hyper.embed_dim);
  auto gen = make_generator(seed);
  init_parameters(*m.text, gen, InitStyle::kUniform);
  init_parameters(*m.image, gen, InitStyle::kUniform);
  return m;
}

Vocabulary build_vocabulary(const Dataset& data, const TrainConfig& cfg) {
  auto captions = cfg.vocab_source == "all" ? data.captions() : data.captions(Split::kTrain);
  // The synthetic grammar is closed, so its lexicon is known without reading held-out captions.
  if (data.kind == DatasetKind::kSynthetic)
    for (auto& w : synthetic_grammar_words()) captions.push_back(std::move(w));
  return Vocabulary::build(captions);
}

SjeReport train_sje(SjeModel& model, const Dataset& data, const TrainConfig& cfg, std::ostream* log) {
  const auto train = data.indices(Split::kTrain);
  if (data.classes(Split::kTrain).size() < 2)
    throw DatasetError("joint-embedding training needs at least two training classes");
  data.check_firewall(train, Split::kTrain);
  std::mt19937_64 rng(cfg.seed ^ 0x5E1EULL);
  std::uniform_int_distribution<std::size_t> pick(0, train.size() - 1);

  std::vector<torch::Tensor> params = model.text->parameters();
  for (auto& p : model.image->parameters()) params.push_back(p);
  torch::optim::Adam opt(params, torch::optim::AdamOptions(cfg.sje_lr));
  model.text->train();
  model.image->train();

  auto draw_batch = [&](std::vector<torch::Tensor>& images, std::vector<std::string>& captions,
                        std::vector<int64_t>& labels) {
    do {
      images.clear();
      captions.clear();
      labels.clear();
      for (int64_t b = 0; b < cfg.sje_batch; ++b) {
        const auto& ex = data.examples[train[pick(rng)]];
        std::uniform_int_distribution<std::size_t> cap(0, ex.captions.size() - 1);
        images.push_back(ex.image);
        captions.push_back(ex.captions[cap(rng)]);
        labels.push_back(ex.class_id);
      }
    } while (std::all_of(labels.begin(), labels.end(), [&](int64_t l) { return l == labels[0]; }));
  };

  SjeReport report;
  std::vector<torch::Tensor> images;
  std::vector<std::string> captions;
  std::vector<int64_t> labels;
  for (int64_t it = 0; it < cfg.sje_iterations; ++it) {
    draw_batch(images, captions, labels);
    auto img_emb = model.image->forward(torch::stack(images));
    auto txt_emb = model.embed_captions(captions);
    auto loss = sje_surrogate_loss(img_emb, txt_emb, torch::tensor(labels, torch::kLong));
    opt.zero_grad();
    loss.backward();
    opt.step();
    report.surrogate.push_back(loss.item<double>());
    if (log && (it % 50 == 0 || it + 1 == cfg.sje_iterations))
      *log << "sje iter " << it << " surrogate " << report.surrogate.back() << '\n';
  }

  model.text->eval();
  model.image->eval();
  torch::NoGradGuard no_grad;
  double total = 0.0;
  const int64_t eval_batches = 20;
  for (int64_t b = 0; b < eval_batches; ++b) {
    draw_batch(images, captions, labels);
    auto img_emb = model.image->forward(torch::stack(images)).to(torch::kDouble).contiguous();
    auto txt_emb = model.embed_captions(captions).to(torch::kDouble).contiguous();
    std::vector<SjeItem> items(labels.size());
    const auto e = img_emb.size(1);
    for (std::size_t i = 0; i < labels.size(); ++i) {
      auto* iv = img_emb[static_cast<int64_t>(i)].data_ptr<double>();
      auto* tv = txt_emb[static_cast<int64_t>(i)].data_ptr<double>();
      items[i].image.vector.assign(iv, iv + e);
      items[i].text.vector.assign(tv, tv + e);
      items[i].image.label = labels[i];
      items[i].label = labels[i];
    }
    total += sje_loss(items);
  }
  report.train_zero_one = total / eval_batches;
  return report;
}

void save_sje(const SjeModel& model, const std::filesystem::path& path) {
  nlohmann::json meta{{"kind", "sje"},
                      {"embed_dim", model.hyper.embed_dim},
                      {"word_dim", model.hyper.word_dim},
                      {"hidden", model.hyper.hidden},
                      {"vocab_hash", model.vocab.hash()},
                      {"config_digest", model.config_digest}};
  CheckpointWriter w(meta);
  w.add_module("text", *model.text);
  w.add_module("image", *model.image);
  std::string tokens;
  for (const auto& t : model.vocab.tokens()) tokens += t + '\n';
  w.add_string("vocabulary", tokens);
  w.save(path);
}

SjeModel load_sje(const std::filesystem::path& path) {
  CheckpointReader r(path);
  const auto& meta = r.metadata();
  if (meta.value("kind", "") != "sje") throw CheckpointError(path.string() + " is not an encoder checkpoint");
  std::vector<std::string> tokens;
  std::istringstream in(r.string("vocabulary"));
  for (std::string line; std::getline(in, line);) tokens.push_back(line);
  auto vocab = Vocabulary::from_tokens(std::move(tokens));
  if (vocab.hash() != meta.at("vocab_hash").get<std::string>())
    throw CheckpointError(path.string() + ": vocabulary hash mismatch");
  TextHyper hyper;
  hyper.embed_dim = meta.at("embed_dim").get<int64_t>();
  hyper.word_dim = meta.at("word_dim").get<int64_t>();
  hyper.hidden = meta.at("hidden").get<int64_t>();
  auto model = make_sje_model(std::move(vocab), hyper, 0);
  r.load_module("text", *model.text);
  r.load_module("image", *model.image);
  model.config_digest = meta.value("config_digest", "");
  model.text->eval();
  model.image->eval();
  return model;
}

}  // namespace c4synth
