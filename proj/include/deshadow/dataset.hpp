#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "deshadow/image_io.hpp"
#include "deshadow/kernels.hpp"

namespace deshadow {

template <typename T>
struct PairedSample {
  Image<T> shadow;
  Image<T> target;
  std::string id;
};

template <typename T>
struct DatasetSplits {
  std::vector<PairedSample<T>> train;
  std::vector<PairedSample<T>> test;
};

namespace detail {

inline const std::set<std::string>& image_extensions() {
  static const std::set<std::string> exts = {".png", ".jpg", ".jpeg", ".bmp", ".PNG",
                                             ".JPG", ".JPEG", ".BMP"};
  return exts;
}

/// stem -> path for every image file directly inside dir.
inline std::map<std::string, std::string> stem_index(const std::filesystem::path& dir) {
  std::map<std::string, std::string> out;
  if (!std::filesystem::is_directory(dir)) {
    throw DataError("dataset directory missing: " + dir.string());
  }
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    if (!image_extensions().count(e.path().extension().string())) continue;
    out[e.path().stem().string()] = e.path().string();
  }
  return out;
}

}  // namespace detail

inline Image<float> canonicalize(Image<float> img, int size) {
  if (size > 0 && (img.height() != size || img.width() != size)) {
    img.chw = bilinear_resize(img.chw, size, size);
  }
  return img;
}

/// Loads shadow/target pairs from a directory holding `shadow/` and `target/`
/// subfolders with matching file stems. Orphan stems are an error.
inline std::vector<PairedSample<float>> load_pair_dir(const std::string& dir,
                                                      int canonical_size = 0) {
  namespace fs = std::filesystem;
  auto shadows = detail::stem_index(fs::path(dir) / "shadow");
  auto targets = detail::stem_index(fs::path(dir) / "target");
  std::vector<std::string> orphans;
  for (const auto& [stem, p] : shadows)
    if (!targets.count(stem)) orphans.push_back("shadow/" + stem);
  for (const auto& [stem, p] : targets)
    if (!shadows.count(stem)) orphans.push_back("target/" + stem);
  if (!orphans.empty()) {
    std::ostringstream os;
    os << "unpaired samples in " << dir << ":";
    for (const auto& s : orphans) os << " " << s;
    throw DataError(os.str());
  }
  if (shadows.empty()) throw DataError("dataset empty: " + dir);
  std::vector<PairedSample<float>> out;
  for (const auto& [stem, spath] : shadows) {
    PairedSample<float> s;
    s.id = stem;
    s.shadow = canonicalize(read_image(spath), canonical_size);
    s.target = canonicalize(read_image(targets.at(stem)), canonical_size);
    if (!s.shadow.chw.same_shape(s.target.chw)) {
      throw DataError("pair dimension mismatch for stem " + stem + " in " + dir);
    }
    out.push_back(std::move(s));
  }
  return out;
}

/// Jung/Kligler layout: <root>[/<name>]/{train,test}/{shadow,target}/<stem>.*
inline DatasetSplits<float> load_dataset(const std::string& root, const std::string& name,
                                         int canonical_size = 512) {
  namespace fs = std::filesystem;
  if (name != "jung" && name != "kligler") {
    throw ConfigError("unknown dataset name: " + name + " (expected jung or kligler)");
  }
  fs::path base = fs::path(root) / name;
  if (!fs::is_directory(base)) base = fs::path(root);
  if (!fs::is_directory(base / "train") || !fs::is_directory(base / "test")) {
    throw DataError("dataset root " + root + " has no train/test layout for " + name);
  }
  DatasetSplits<float> splits;
  splits.train = load_pair_dir((base / "train").string(), canonical_size);
  splits.test = load_pair_dir((base / "test").string(), canonical_size);
  return splits;
}

/// Index-file override: one `shadow_path<TAB>target_path` pair per line.
/// Relative paths resolve against the index file's directory.
inline std::vector<PairedSample<float>> load_pairs_from_index(const std::string& index_path,
                                                              int canonical_size = 0) {
  namespace fs = std::filesystem;
  std::ifstream f(index_path);
  if (!f) throw DataError("cannot open index file: " + index_path);
  const fs::path base = fs::path(index_path).parent_path();
  std::vector<PairedSample<float>> out;
  std::string line;
  int line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw DataError("index line " + std::to_string(line_no) + " has no tab separator");
    }
    auto resolve = [&](std::string p) {
      fs::path fp(p);
      return fp.is_absolute() ? fp.string() : (base / fp).string();
    };
    PairedSample<float> s;
    const std::string spath = resolve(line.substr(0, tab));
    const std::string tpath = resolve(line.substr(tab + 1));
    s.id = fs::path(spath).stem().string();
    s.shadow = canonicalize(read_image(spath), canonical_size);
    s.target = canonicalize(read_image(tpath), canonical_size);
    if (!s.shadow.chw.same_shape(s.target.chw)) {
      throw DataError("pair dimension mismatch at index line " + std::to_string(line_no));
    }
    out.push_back(std::move(s));
  }
  if (out.empty()) throw DataError("index file lists no pairs: " + index_path);
  return out;
}

}  // namespace deshadow
