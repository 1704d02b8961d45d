#include <array>
#include <cstdio>
#include <opencv2/imgproc.hpp>

#include "c4synth/data.hpp"
#include "c4synth/error.hpp"

namespace c4synth {

namespace {

struct Rgb {
  int r, g, b;
};

Rgb shape_color(const std::string& name) {
  if (name == "red") return {220, 40, 40};
  if (name == "green") return {40, 190, 60};
  if (name == "blue") return {40, 70, 225};
  return {235, 215, 40};  // yellow
}

Rgb background_color(const std::string& name) {
  if (name == "black") return {20, 20, 24};
  if (name == "white") return {238, 238, 232};
  return {128, 128, 128};  // gray
}

// (shape, color) per class.
constexpr std::array<std::pair<const char*, const char*>, 12> kClassTable{{
    {"circle", "red"},
    {"square", "blue"},
    {"triangle", "green"},
    {"circle", "yellow"},
    {"square", "red"},
    {"triangle", "blue"},
    {"circle", "green"},
    {"square", "yellow"},
    {"triangle", "red"},
    {"circle", "blue"},
    {"square", "green"},
    {"triangle", "yellow"},
}};

std::string caption_for(std::size_t index, const SynthAttributes& a) {
  static const std::array<const char*, 3> kLeads{"", "there is ", "we see "};
  const std::string lead = kLeads[(index / 5) % kLeads.size()];
  switch (index % 5) {
    case 0: return lead + "a " + a.color + " " + a.shape;
    case 1: return lead + "a " + a.size + " " + a.shape + " on a " + a.background + " background";
    case 2: return lead + "the " + a.shape + " is " + a.size + " and " + a.color;
    case 3: return lead + "a " + a.color + " object in front of a " + a.background + " background";
    default: return lead + "something " + a.size + " on " + a.background;
  }
}

cv::Scalar to_bgr(Rgb c) { return cv::Scalar(c.b, c.g, c.r); }

}  // namespace

const SynthVocabulary& synth_vocabulary() {
  static const SynthVocabulary v{{"circle", "square", "triangle"},
                                 {"red", "green", "blue", "yellow"},
                                 {"small", "large"},
                                 {"black", "white", "gray"}};
  return v;
}

std::vector<std::string> synthetic_grammar_words() {
  std::vector<std::string> words{"a",  "the",    "is",     "and",   "on", "of", "in",   "front",
                                 "object", "background", "something", "there", "we", "see"};
  const auto& v = synth_vocabulary();
  for (const auto* group : {&v.shapes, &v.colors, &v.sizes, &v.backgrounds})
    words.insert(words.end(), group->begin(), group->end());
  return words;
}

int64_t max_synthetic_classes() { return static_cast<int64_t>(kClassTable.size()); }

BoundingBox render_shape(cv::Mat& canvas, const SynthAttributes& attrs, cv::Point2d center,
                         double jitter_scale, std::mt19937_64& rng) {
  const double side = std::min(canvas.cols, canvas.rows);
  const double radius = (attrs.size == "small" ? 0.18 : 0.32) * side * jitter_scale;
  std::uniform_int_distribution<int> tint(-12, 12);
  Rgb col = shape_color(attrs.color);
  col = {std::clamp(col.r + tint(rng), 0, 255), std::clamp(col.g + tint(rng), 0, 255),
         std::clamp(col.b + tint(rng), 0, 255)};
  std::vector<cv::Point> pts;
  if (attrs.shape == "circle") {
    const int r = static_cast<int>(std::lround(radius));
    const cv::Point c(static_cast<int>(std::lround(center.x)), static_cast<int>(std::lround(center.y)));
    cv::circle(canvas, c, r, to_bgr(col), cv::FILLED, cv::LINE_AA);
    return {c.x - r, c.y - r, 2 * r + 1, 2 * r + 1};
  }
  if (attrs.shape == "square") {
    const double h = radius * 0.85;
    pts = {{static_cast<int>(std::lround(center.x - h)), static_cast<int>(std::lround(center.y - h))},
           {static_cast<int>(std::lround(center.x + h)), static_cast<int>(std::lround(center.y - h))},
           {static_cast<int>(std::lround(center.x + h)), static_cast<int>(std::lround(center.y + h))},
           {static_cast<int>(std::lround(center.x - h)), static_cast<int>(std::lround(center.y + h))}};
  } else {
    pts = {{static_cast<int>(std::lround(center.x)), static_cast<int>(std::lround(center.y - radius))},
           {static_cast<int>(std::lround(center.x - radius * 0.95)),
            static_cast<int>(std::lround(center.y + radius * 0.8))},
           {static_cast<int>(std::lround(center.x + radius * 0.95)),
            static_cast<int>(std::lround(center.y + radius * 0.8))}};
  }
  cv::fillPoly(canvas, std::vector<std::vector<cv::Point>>{pts}, to_bgr(col), cv::LINE_AA);
  const auto r = cv::boundingRect(pts);
  return {r.x, r.y, r.width, r.height};
}

Dataset make_synthetic(const SynthSpec& spec, uint64_t seed) {
  if (spec.n_classes <= 0) throw InvalidArgument("make_synthetic: need at least one class");
  if (spec.n_classes > max_synthetic_classes())
    throw InvalidArgument("make_synthetic: at most " + std::to_string(max_synthetic_classes()) +
                          " classes supported");
  if (spec.captions_per_image < 2) throw InvalidArgument("make_synthetic: need >= 2 captions per image");
  if (spec.images_per_class <= 0) throw InvalidArgument("make_synthetic: need >= 1 image per class");
  if (spec.image_size < 8) throw InvalidArgument("make_synthetic: image_size must be >= 8");
  if (spec.test_classes < 0 || spec.test_classes >= spec.n_classes)
    throw InvalidArgument("make_synthetic: test_classes must leave a training class");

  const auto& vocab = synth_vocabulary();
  std::mt19937_64 rng(seed);
  Dataset data;
  data.kind = DatasetKind::kSynthetic;
  data.image_size = spec.image_size;
  const int size = static_cast<int>(spec.image_size);
  for (int64_t c = 0; c < spec.n_classes; ++c) {
    const auto [shape, color] = kClassTable[static_cast<std::size_t>(c)];
    data.class_names.push_back(std::string(color) + "_" + shape);
    data.class_split.push_back(c >= spec.n_classes - spec.test_classes ? Split::kTest : Split::kTrain);
  }
  std::uniform_int_distribution<std::size_t> pick_size(0, vocab.sizes.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_bg(0, vocab.backgrounds.size() - 1);
  std::uniform_real_distribution<double> jitter(0.9, 1.1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int64_t c = 0; c < spec.n_classes; ++c) {
    const auto [shape, color] = kClassTable[static_cast<std::size_t>(c)];
    for (int64_t k = 0; k < spec.images_per_class; ++k) {
      SynthAttributes a{shape, color, vocab.sizes[pick_size(rng)], vocab.backgrounds[pick_bg(rng)]};
      const double scale = jitter(rng);
      const double radius = (a.size == "small" ? 0.18 : 0.32) * size * scale;
      const double lo = radius + 1.0;
      const double hi = size - radius - 1.0;
      cv::Point2d center(lo + (hi - lo) * unit(rng), lo + (hi - lo) * unit(rng));
      cv::Mat canvas(size, size, CV_8UC3, to_bgr(background_color(a.background)));
      const auto box = render_shape(canvas, a, center, scale, rng);

      Example ex;
      char stem[32];
      std::snprintf(stem, sizeof(stem), "%04lld", static_cast<long long>(k));
      ex.id = data.class_names[static_cast<std::size_t>(c)] + "/" + stem;
      ex.class_id = c;
      ex.split = data.class_split[static_cast<std::size_t>(c)];
      ex.image = mat_to_tensor(canvas);
      for (int64_t i = 0; i < spec.captions_per_image; ++i)
        ex.captions.push_back(caption_for(static_cast<std::size_t>(i), a));
      ex.attributes = a;
      ex.object_box = box;
      data.examples.push_back(std::move(ex));
    }
  }
  data.validate();
  return data;
}

SynthSpec synth_spec_from(const TrainConfig& cfg) {
  SynthSpec s = cfg.synth;
  s.image_size = cfg.image_size;
  return s;
}

}  // namespace c4synth
