#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <opencv2/core.hpp>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "c4synth/config.hpp"

namespace c4synth {

enum class Split { kTrain, kTest };
enum class DatasetKind { kSynthetic, kCub, kOxford, kGeneric };

std::string to_string(Split s);
std::string to_string(DatasetKind k);
DatasetKind parse_dataset_kind(std::string_view s);

struct BoundingBox {
  int x = 0;
  int y = 0;
  int width = 0;
  int height = 0;
};

struct SynthAttributes {
  std::string shape;
  std::string color;
  std::string size;
  std::string background;
};

struct Example {
  std::string id;  // "<class name>/<stem>"
  std::filesystem::path image_path;
  torch::Tensor image;  // 3 x S x S, float, [-1, 1]
  std::vector<std::string> captions;
  int64_t class_id = 0;
  Split split = Split::kTrain;
  std::optional<SynthAttributes> attributes;
  std::optional<BoundingBox> object_box;
};

// In-memory dataset with class-disjoint train/test splits. Read-only after
// construction, so concurrent readers need no locking.
class Dataset {
 public:
  DatasetKind kind = DatasetKind::kGeneric;
  int64_t image_size = 64;
  std::vector<std::string> class_names;
  std::vector<Split> class_split;
  std::vector<Example> examples;

  int64_t num_classes() const { return static_cast<int64_t>(class_names.size()); }
  std::vector<std::size_t> indices(Split split) const;
  std::vector<int64_t> classes(Split split) const;
  Split split_of_class(int64_t class_id) const;
  std::vector<std::string> captions(std::optional<Split> split = std::nullopt) const;

  // Throws FirewallError if any example in `batch` is not from `expected`.
  void check_firewall(std::span<const std::size_t> batch, Split expected) const;
  // Throws DatasetError if an Example invariant is broken.
  void validate() const;
};

// Layout: images/<class>/<id>.{jpg,jpeg,png}, captions/<class>/<id>.txt (one
// caption per line), train_classes.txt / test_classes.txt (one class per
// line), optional bounding_boxes.txt ("<class>/<id> x y w h").
Dataset load_dataset(const std::filesystem::path& root, DatasetKind kind, int64_t image_size,
                     std::ostream* warnings = nullptr);
void export_dataset(const Dataset& data, const std::filesystem::path& root);

// Expected (train, test) class counts of the public splits, if any.
std::optional<std::pair<int64_t, int64_t>> official_split_sizes(DatasetKind kind);

struct SynthVocabulary {
  std::vector<std::string> shapes;
  std::vector<std::string> colors;
  std::vector<std::string> sizes;
  std::vector<std::string> backgrounds;
};
const SynthVocabulary& synth_vocabulary();
// Every word the caption grammar can emit, one per entry.
std::vector<std::string> synthetic_grammar_words();
int64_t max_synthetic_classes();

// Procedural shapes with attribute-bearing captions. Each class fixes
// (shape, color); size, background and position vary per image. Every caption
// omits at least one attribute and the full caption set covers all four.
Dataset make_synthetic(const SynthSpec& spec, uint64_t seed);
SynthSpec synth_spec_from(const TrainConfig& cfg);

// Renders one synthetic image into a BGR canvas; returns the object extent.
BoundingBox render_shape(cv::Mat& canvas, const SynthAttributes& attrs, cv::Point2d center,
                         double jitter_scale, std::mt19937_64& rng);

struct CropWindow {
  int x = 0;
  int y = 0;
  int side = 0;
};

// Square crop: centred on the box with side floor(max(w, h) / 0.75) so the
// object spans >= 75% of it; without a box, the centred maximal square.
// Boxes outside the image are clamped; `clamped` reports it.
CropWindow crop_window(int width, int height, std::optional<BoundingBox> bbox,
                       bool* clamped = nullptr);
torch::Tensor preprocess(const cv::Mat& bgr, std::optional<BoundingBox> bbox, int64_t size,
                         std::ostream* warnings = nullptr);

// n distinct caption indices in random order.
std::vector<std::size_t> sample_caption_set(const Example& example, std::size_t n,
                                            std::mt19937_64& rng);

cv::Mat decode_image(const std::filesystem::path& path);
torch::Tensor mat_to_tensor(const cv::Mat& bgr);
cv::Mat tensor_to_mat(const torch::Tensor& image);
std::vector<uint8_t> encode_png(const torch::Tensor& image);
void write_png(const std::filesystem::path& path, const torch::Tensor& image);
// Frames (3 x S x S each) side by side.
torch::Tensor image_strip(const std::vector<torch::Tensor>& frames);

}  // namespace c4synth
