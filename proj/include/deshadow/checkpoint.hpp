#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "deshadow/model.hpp"
#include "deshadow/params.hpp"

namespace deshadow {

inline constexpr const char* kCheckpointSchema = "deshadow.ckpt.v1";

struct CheckpointMeta {
  long step = 0;
  double psnr = std::numeric_limits<double>::quiet_NaN();
  double loss = std::numeric_limits<double>::quiet_NaN();
};

/// Writes `<base>.manifest` (text) and `<base>.blob` (flat little-endian
/// float32). Tensors are stored in name order with element offsets recorded
/// in the manifest.
template <typename T>
void save_checkpoint(const ParamStore<T>& params, const ModelConfig& cfg,
                     const CheckpointMeta& meta, const std::string& base) {
  static_assert(sizeof(float) == 4, "float must be 32-bit");
  const std::string cfg_text = config_to_text(cfg);

  std::ostringstream man;
  man << kCheckpointSchema << "\n";
  man << "config_hash " << std::hex << config_hash(cfg) << std::dec << "\n";
  man << "step " << meta.step << "\n";
  man << "metric_psnr " << std::setprecision(17) << meta.psnr << "\n";
  man << "metric_loss " << std::setprecision(17) << meta.loss << "\n";
  man << "config_begin\n" << cfg_text << "config_end\n";
  man << "tensors " << params.entries.size() << "\n";

  std::vector<float> blob;
  std::size_t offset = 0;
  for (const auto& [name, t] : params.entries) {
    man << name << " " << t.rank();
    for (int i = 0; i < t.rank(); ++i) man << " " << t.dim(i);
    man << " f32 " << offset << "\n";
    for (std::size_t i = 0; i < t.numel(); ++i) blob.push_back(static_cast<float>(t[i]));
    offset += t.numel();
  }

  std::ofstream mf(base + ".manifest");
  if (!mf) throw DataError("cannot write manifest: " + base + ".manifest");
  mf << man.str();
  mf.close();
  if (!mf) throw DataError("failed writing manifest: " + base + ".manifest");

  std::ofstream bf(base + ".blob", std::ios::binary);
  if (!bf) throw DataError("cannot write blob: " + base + ".blob");
  bf.write(reinterpret_cast<const char*>(blob.data()),
           static_cast<std::streamsize>(blob.size() * sizeof(float)));
  bf.close();
  if (!bf) throw DataError("failed writing blob: " + base + ".blob");
}

struct LoadedCheckpoint {
  ParamStore<float> params;
  ModelConfig config;
  CheckpointMeta meta;
};

inline LoadedCheckpoint load_checkpoint(const std::string& base) {
  std::ifstream mf(base + ".manifest");
  if (!mf) throw DataError("cannot open manifest: " + base + ".manifest");
  std::string line;
  if (!std::getline(mf, line) || line != kCheckpointSchema) {
    throw DataError("checkpoint schema mismatch (expected " +
                    std::string(kCheckpointSchema) + ", got '" + line + "')");
  }
  LoadedCheckpoint out;
  std::uint64_t declared_hash = 0;
  std::string cfg_text;
  std::size_t tensor_count = 0;
  struct Rec {
    std::string name;
    std::vector<int> shape;
    std::size_t offset;
  };
  std::vector<Rec> recs;

  while (std::getline(mf, line)) {
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "config_hash") {
      ls >> std::hex >> declared_hash >> std::dec;
    } else if (key == "step") {
      ls >> out.meta.step;
    } else if (key == "metric_psnr") {
      ls >> out.meta.psnr;
    } else if (key == "metric_loss") {
      ls >> out.meta.loss;
    } else if (key == "config_begin") {
      std::ostringstream cs;
      while (std::getline(mf, line) && line != "config_end") cs << line << "\n";
      cfg_text = cs.str();
    } else if (key == "tensors") {
      ls >> tensor_count;
      while (std::getline(mf, line)) {
        if (line.empty()) continue;
        std::istringstream ts(line);
        Rec r;
        int rank = 0;
        ts >> r.name >> rank;
        r.shape.resize(static_cast<std::size_t>(rank));
        for (int i = 0; i < rank; ++i) ts >> r.shape[static_cast<std::size_t>(i)];
        std::string dtype;
        ts >> dtype >> r.offset;
        if (!ts || dtype != "f32") throw DataError("bad tensor record: " + line);
        recs.push_back(std::move(r));
      }
    }
  }
  if (recs.size() != tensor_count) {
    throw DataError("manifest tensor count mismatch");
  }
  out.config = config_from_text(cfg_text);
  if (config_hash(out.config) != declared_hash) {
    throw DataError("checkpoint config hash mismatch");
  }

  std::ifstream bf(base + ".blob", std::ios::binary | std::ios::ate);
  if (!bf) throw DataError("cannot open blob: " + base + ".blob");
  const std::size_t bytes = static_cast<std::size_t>(bf.tellg());
  bf.seekg(0);
  std::size_t total = 0;
  for (const auto& r : recs) total += Tensor<float>::count(r.shape);
  if (bytes != total * sizeof(float)) {
    throw DataError("checkpoint blob corrupted: expected " +
                    std::to_string(total * sizeof(float)) + " bytes, found " +
                    std::to_string(bytes));
  }
  std::vector<float> blob(total);
  bf.read(reinterpret_cast<char*>(blob.data()), static_cast<std::streamsize>(bytes));
  if (!bf) throw DataError("failed reading blob: " + base + ".blob");

  for (const auto& r : recs) {
    const std::size_t n = Tensor<float>::count(r.shape);
    if (r.offset + n > total) throw DataError("tensor offset out of range: " + r.name);
    Tensor<float> t(r.shape);
    std::memcpy(t.data(), blob.data() + r.offset, n * sizeof(float));
    if (!out.params.entries.emplace(r.name, std::move(t)).second) {
      throw DataError("duplicate tensor name: " + r.name);
    }
  }
  return out;
}

}  // namespace deshadow
