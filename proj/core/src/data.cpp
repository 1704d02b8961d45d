#include "c4synth/data.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <map>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <set>
#include <sstream>

#include "c4synth/error.hpp"

namespace c4synth {

namespace fs = std::filesystem;

std::string to_string(Split s) { return s == Split::kTrain ? "train" : "test"; }

std::string to_string(DatasetKind k) {
  switch (k) {
    case DatasetKind::kSynthetic: return "synth";
    case DatasetKind::kCub: return "cub";
    case DatasetKind::kOxford: return "oxford";
    case DatasetKind::kGeneric: return "generic";
  }
  return "generic";
}

DatasetKind parse_dataset_kind(std::string_view s) {
  if (s == "synth") return DatasetKind::kSynthetic;
  if (s == "cub") return DatasetKind::kCub;
  if (s == "oxford") return DatasetKind::kOxford;
  if (s == "generic") return DatasetKind::kGeneric;
  throw ConfigError("dataset_kind", "unknown dataset kind '" + std::string(s) + "'");
}

std::optional<std::pair<int64_t, int64_t>> official_split_sizes(DatasetKind kind) {
  if (kind == DatasetKind::kCub) return std::pair<int64_t, int64_t>{150, 50};
  if (kind == DatasetKind::kOxford) return std::pair<int64_t, int64_t>{82, 20};
  return std::nullopt;
}

std::vector<std::size_t> Dataset::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < examples.size(); ++i)
    if (examples[i].split == split) out.push_back(i);
  return out;
}

std::vector<int64_t> Dataset::classes(Split split) const {
  std::vector<int64_t> out;
  for (std::size_t c = 0; c < class_split.size(); ++c)
    if (class_split[c] == split) out.push_back(static_cast<int64_t>(c));
  return out;
}

Split Dataset::split_of_class(int64_t class_id) const {
  if (class_id < 0 || class_id >= num_classes())
    throw InvalidArgument("class id " + std::to_string(class_id) + " out of range");
  return class_split[static_cast<std::size_t>(class_id)];
}

std::vector<std::string> Dataset::captions(std::optional<Split> split) const {
  std::vector<std::string> out;
  for (const auto& ex : examples)
    if (!split || ex.split == *split) out.insert(out.end(), ex.captions.begin(), ex.captions.end());
  return out;
}

void Dataset::check_firewall(std::span<const std::size_t> batch, Split expected) const {
  for (auto i : batch) {
    const auto& ex = examples.at(i);
    if (ex.split != expected || split_of_class(ex.class_id) != expected)
      throw FirewallError("split firewall: example '" + ex.id + "' of class '" +
                          class_names[static_cast<std::size_t>(ex.class_id)] + "' belongs to the " +
                          to_string(split_of_class(ex.class_id)) + " split, expected " +
                          to_string(expected));
  }
}

void Dataset::validate() const {
  if (class_names.size() != class_split.size()) throw DatasetError("class table size mismatch");
  for (const auto& ex : examples) {
    if (ex.captions.size() < 2) throw DatasetError(ex.id + ": fewer than 2 captions");
    if (ex.class_id < 0 || ex.class_id >= num_classes()) throw DatasetError(ex.id + ": bad class id");
    if (ex.split != class_split[static_cast<std::size_t>(ex.class_id)])
      throw DatasetError(ex.id + ": split disagrees with its class");
    if (!ex.image.defined() || ex.image.dim() != 3 || ex.image.size(0) != 3 ||
        ex.image.size(1) != image_size || ex.image.size(2) != image_size)
      throw DatasetError(ex.id + ": image is not 3 x " + std::to_string(image_size) + " x " +
                         std::to_string(image_size));
  }
}

namespace {

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DatasetError("cannot open " + path.string());
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    lines.push_back(line);
  }
  return lines;
}

std::map<std::string, BoundingBox> read_boxes(const fs::path& path) {
  std::map<std::string, BoundingBox> boxes;
  if (!fs::exists(path)) return boxes;
  for (const auto& line : read_lines(path)) {
    std::istringstream ss(line);
    std::string id;
    BoundingBox b;
    if (!(ss >> id >> b.x >> b.y >> b.width >> b.height))
      throw DatasetError(path.string() + ": malformed line '" + line + "'");
    boxes[id] = b;
  }
  return boxes;
}

bool is_image_file(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".jpg" || ext == ".jpeg" || ext == ".png";
}

}  // namespace

Dataset load_dataset(const fs::path& root, DatasetKind kind, int64_t image_size,
                     std::ostream* warnings) {
  auto& warn = warnings ? *warnings : std::cerr;
  Dataset data;
  data.kind = kind;
  data.image_size = image_size;
  const auto train_classes = read_lines(root / "train_classes.txt");
  const auto test_classes = read_lines(root / "test_classes.txt");
  std::set<std::string> train_set(train_classes.begin(), train_classes.end());
  for (const auto& c : test_classes)
    if (train_set.count(c))
      throw DatasetError("class '" + c + "' is listed in both train and test splits");
  if (auto expected = official_split_sizes(kind)) {
    if (static_cast<int64_t>(train_classes.size()) != expected->first ||
        static_cast<int64_t>(test_classes.size()) != expected->second)
      throw DatasetError(to_string(kind) + " split must list " + std::to_string(expected->first) +
                         " train and " + std::to_string(expected->second) + " test classes, found " +
                         std::to_string(train_classes.size()) + " / " +
                         std::to_string(test_classes.size()));
  }
  for (const auto& c : train_classes) {
    data.class_names.push_back(c);
    data.class_split.push_back(Split::kTrain);
  }
  for (const auto& c : test_classes) {
    data.class_names.push_back(c);
    data.class_split.push_back(Split::kTest);
  }
  const auto boxes = read_boxes(root / "bounding_boxes.txt");

  for (std::size_t c = 0; c < data.class_names.size(); ++c) {
    const auto& name = data.class_names[c];
    const auto image_dir = root / "images" / name;
    if (!fs::is_directory(image_dir)) {
      warn << "warning: no image directory for class '" << name << "'\n";
      continue;
    }
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(image_dir))
      if (entry.is_regular_file() && is_image_file(entry.path())) files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (const auto& file : files) {
      const auto stem = file.stem().string();
      const auto caption_path = root / "captions" / name / (stem + ".txt");
      if (!fs::exists(caption_path)) {
        warn << "warning: skipping " << name << "/" << stem << ": missing captions file\n";
        continue;
      }
      Example ex;
      ex.id = name + "/" + stem;
      ex.captions = read_lines(caption_path);
      if (ex.captions.size() < 2) {
        warn << "warning: skipping " << ex.id << ": fewer than 2 captions\n";
        continue;
      }
      ex.image_path = file;
      ex.class_id = static_cast<int64_t>(c);
      ex.split = data.class_split[c];
      std::optional<BoundingBox> box;
      if (auto it = boxes.find(ex.id); it != boxes.end()) box = it->second;
      ex.image = preprocess(decode_image(file), box, image_size, &warn);
      data.examples.push_back(std::move(ex));
    }
  }
  data.validate();
  return data;
}

void export_dataset(const Dataset& data, const fs::path& root) {
  fs::create_directories(root);
  std::ofstream train(root / "train_classes.txt");
  std::ofstream test(root / "test_classes.txt");
  for (std::size_t c = 0; c < data.class_names.size(); ++c)
    (data.class_split[c] == Split::kTrain ? train : test) << data.class_names[c] << '\n';
  for (const auto& ex : data.examples) {
    const auto slash = ex.id.find('/');
    const auto cls = ex.id.substr(0, slash);
    const auto stem = ex.id.substr(slash + 1);
    fs::create_directories(root / "images" / cls);
    fs::create_directories(root / "captions" / cls);
    write_png(root / "images" / cls / (stem + ".png"), ex.image);
    std::ofstream caps(root / "captions" / cls / (stem + ".txt"));
    for (const auto& c : ex.captions) caps << c << '\n';
  }
}

CropWindow crop_window(int width, int height, std::optional<BoundingBox> bbox, bool* clamped) {
  if (clamped) *clamped = false;
  CropWindow w;
  w.side = std::min(width, height);
  w.x = (width - w.side) / 2;
  w.y = (height - w.side) / 2;
  if (!bbox) return w;
  const int x0 = std::clamp(bbox->x, 0, width);
  const int y0 = std::clamp(bbox->y, 0, height);
  const int x1 = std::clamp(bbox->x + bbox->width, 0, width);
  const int y1 = std::clamp(bbox->y + bbox->height, 0, height);
  if (clamped && (x0 != bbox->x || y0 != bbox->y || x1 != bbox->x + bbox->width ||
                  y1 != bbox->y + bbox->height))
    *clamped = true;
  const int bw = x1 - x0;
  const int bh = y1 - y0;
  if (bw <= 0 || bh <= 0) {
    if (clamped) *clamped = true;
    return w;
  }
  w.side = std::min(static_cast<int>(std::max(bw, bh) / 0.75), std::min(width, height));
  w.x = std::clamp((2 * x0 + bw - w.side) / 2, 0, width - w.side);
  w.y = std::clamp((2 * y0 + bh - w.side) / 2, 0, height - w.side);
  return w;
}

torch::Tensor preprocess(const cv::Mat& bgr, std::optional<BoundingBox> bbox, int64_t size,
                         std::ostream* warnings) {
  bool clamped = false;
  const auto w = crop_window(bgr.cols, bgr.rows, bbox, &clamped);
  if (clamped && warnings) *warnings << "warning: bounding box clamped to image bounds\n";
  cv::Mat crop = bgr(cv::Rect(w.x, w.y, w.side, w.side));
  cv::Mat resized;
  if (w.side == size) {
    resized = crop;
  } else {
    const int interp = w.side > size ? cv::INTER_AREA : cv::INTER_LINEAR;
    cv::resize(crop, resized, cv::Size(static_cast<int>(size), static_cast<int>(size)), 0, 0, interp);
  }
  return mat_to_tensor(resized);
}

std::vector<std::size_t> sample_caption_set(const Example& example, std::size_t n,
                                            std::mt19937_64& rng) {
  if (n == 0 || n > example.captions.size())
    throw InvalidArgument("sample_caption_set: example '" + example.id + "' has " +
                          std::to_string(example.captions.size()) + " captions, " +
                          std::to_string(n) + " requested");
  std::vector<std::size_t> idx(example.captions.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  for (std::size_t i = 0; i < n; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(n);
  return idx;
}

cv::Mat decode_image(const fs::path& path) {
  cv::Mat img = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (img.empty()) throw DatasetError("cannot decode image " + path.string());
  return img;
}

torch::Tensor mat_to_tensor(const cv::Mat& bgr) {
  cv::Mat rgb;
  if (bgr.channels() == 1) {
    cv::cvtColor(bgr, rgb, cv::COLOR_GRAY2RGB);
  } else if (bgr.channels() == 4) {
    cv::cvtColor(bgr, rgb, cv::COLOR_BGRA2RGB);
  } else {
    cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  }
  if (!rgb.isContinuous()) rgb = rgb.clone();
  auto t = torch::from_blob(rgb.data, {rgb.rows, rgb.cols, 3}, torch::kUInt8).clone();
  return t.permute({2, 0, 1}).to(torch::kFloat).div(127.5).sub(1.0).contiguous();
}

cv::Mat tensor_to_mat(const torch::Tensor& image) {
  if (image.dim() != 3 || image.size(0) != 3) throw ShapeError("expected a 3 x H x W image");
  auto u8 = image.detach().to(torch::kFloat).clamp(-1.0, 1.0).add(1.0).mul(127.5).round()
                .to(torch::kUInt8).permute({1, 2, 0}).contiguous();
  cv::Mat rgb(static_cast<int>(u8.size(0)), static_cast<int>(u8.size(1)), CV_8UC3, u8.data_ptr());
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  return bgr;
}

std::vector<uint8_t> encode_png(const torch::Tensor& image) {
  std::vector<uint8_t> bytes;
  if (!cv::imencode(".png", tensor_to_mat(image), bytes)) throw DatasetError("PNG encoding failed");
  return bytes;
}

void write_png(const fs::path& path, const torch::Tensor& image) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const auto bytes = encode_png(image);
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DatasetError("cannot write " + path.string());
}

torch::Tensor image_strip(const std::vector<torch::Tensor>& frames) {
  if (frames.empty()) throw InvalidArgument("image_strip: no frames");
  return torch::cat(frames, /*dim=*/2);
}

}  // namespace c4synth
