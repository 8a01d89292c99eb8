// Command-line surface: decompose, reconstruct, train, eval, infer,
// gradcheck, report. Exit codes: 0 success, 1 usage error, 2 data error,
// 3 numeric failure.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "deshadow/checkpoint.hpp"
#include "deshadow/dataset.hpp"
#include "deshadow/gradcheck.hpp"
#include "deshadow/image_io.hpp"
#include "deshadow/metrics.hpp"
#include "deshadow/model.hpp"
#include "deshadow/pyramid.hpp"
#include "deshadow/trainer.hpp"

namespace fs = std::filesystem;
using namespace deshadow;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

std::string dataset_root_or_env(std::string root) {
  if (!root.empty()) return root;
  if (const char* env = std::getenv("DESHADOW_DATA_DIR")) return env;
  throw ConfigError("no --dataset-root given and DESHADOW_DATA_DIR is unset");
}

constexpr const char* kPyramidManifest = "deshadow.pyramid.v1";

void run_decompose(const std::string& input, int levels, const std::string& out_dir) {
  Image<float> img = read_image(input);
  Pyramid<float> pyr = decompose(img, levels);
  fs::create_directories(out_dir);
  std::ofstream man(fs::path(out_dir) / "manifest.txt");
  if (!man) throw DataError("cannot write manifest in " + out_dir);
  man << kPyramidManifest << "\n";
  man << "levels " << levels << "\n";
  man << "color " << (img.channels() == 3 ? "rgb" : "gray") << "\n";
  for (int k = 0; k < pyr.levels(); ++k) {
    const auto& b = pyr.highs[static_cast<std::size_t>(k)];
    const std::string name = "high_" + std::to_string(k) + ".pfm";
    write_pfm((fs::path(out_dir) / name).string(), b);
    man << "band high " << k << " " << b.height() << " " << b.width() << " " << name
        << "\n";
  }
  write_pfm((fs::path(out_dir) / "low.pfm").string(), pyr.low);
  man << "band low " << levels << " " << pyr.low.height() << " " << pyr.low.width()
      << " low.pfm\n";
  std::cout << "decomposed " << input << " into " << levels << " high bands + low at "
            << out_dir << "\n";
}

void run_reconstruct(const std::string& in_dir, const std::string& out) {
  std::ifstream man(fs::path(in_dir) / "manifest.txt");
  if (!man) throw DataError("cannot open manifest in " + in_dir);
  std::string line;
  std::getline(man, line);
  if (line != kPyramidManifest) throw DataError("bad pyramid manifest: " + line);
  int levels = -1;
  Pyramid<float> pyr;
  std::map<int, Image<float>> highs;
  while (std::getline(man, line)) {
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "levels") {
      ls >> levels;
    } else if (key == "band") {
      std::string kind, file;
      int idx = 0, h = 0, w = 0;
      ls >> kind >> idx >> h >> w >> file;
      Image<float> img = read_pfm((fs::path(in_dir) / file).string());
      if (img.height() != h || img.width() != w) {
        throw DataError("band " + file + " does not match manifest dims");
      }
      if (kind == "high") {
        highs.emplace(idx, std::move(img));
      } else {
        pyr.low = std::move(img);
      }
    }
  }
  if (levels < 0 || static_cast<int>(highs.size()) != levels || pyr.low.chw.empty()) {
    throw DataError("incomplete pyramid in " + in_dir);
  }
  for (int k = 0; k < levels; ++k) pyr.highs.push_back(std::move(highs.at(k)));
  Image<float> rec = reconstruct(pyr);
  if (fs::path(out).extension() == ".pfm") {
    write_pfm(out, rec);
  } else {
    write_image(out, clamp01(rec));
  }
  std::cout << "reconstructed " << out << " (" << rec.height() << "x" << rec.width()
            << ")\n";
}

DatasetSplits<float> load_splits(const std::string& root, const std::string& dataset,
                                 const std::string& index_train,
                                 const std::string& index_test, int canonical_size) {
  if (!index_train.empty() || !index_test.empty()) {
    DatasetSplits<float> s;
    if (!index_train.empty()) s.train = load_pairs_from_index(index_train, canonical_size);
    if (!index_test.empty()) s.test = load_pairs_from_index(index_test, canonical_size);
    return s;
  }
  return load_dataset(dataset_root_or_env(root), dataset, canonical_size);
}

struct TrainCli {
  std::string root, dataset = "jung", index_train, index_test, out = "run";
  long max_steps = 200;
  long eval_every = 0;
  std::uint64_t seed = 17;
  double lr = 1e-4;
  int batch_size = 1;
  int crop = 256;
  bool no_augment = false;
  int levels = 3;
  int canonical_size = 512;
  std::string ablation = "full";
  std::string ssim_mode = "windowed";
  double grad_clip = 0;
};

void run_train(const TrainCli& a) {
  DatasetSplits<float> data =
      load_splits(a.root, a.dataset, a.index_train, a.index_test, a.canonical_size);
  ModelConfig mcfg;
  mcfg.levels = a.levels;
  mcfg.seed = a.seed;
  TrainConfig tcfg;
  tcfg.lr = a.lr;
  tcfg.batch_size = a.batch_size;
  tcfg.max_steps = a.max_steps;
  tcfg.eval_every = a.eval_every;
  tcfg.seed = a.seed;
  tcfg.ablation = ablation_from_string(a.ablation);
  tcfg.loss.ssim_mode = ssim_mode_from_string(a.ssim_mode);
  tcfg.grad_clip = a.grad_clip;
  tcfg.augment = a.no_augment ? AugmentConfig::identity()
                              : AugmentConfig::training_defaults(a.crop);
  fs::create_directories(a.out);
  tcfg.out_dir = a.out;
  tcfg.log_path = (fs::path(a.out) / "train_log.tsv").string();

  TrainResult res = train(tcfg, mcfg, data.train, data.test);
  std::cout << "trained " << res.state.step << " steps; checkpoints at " << a.out
            << "/{best,last}.{manifest,blob}\n";
  if (!res.log.empty()) {
    std::cout << "final l_total=" << res.log.back().l_total << "\n";
  }
  if (!std::isnan(res.state.best.psnr)) {
    std::cout << "best test PSNR " << res.state.best.psnr << " dB at step "
              << res.state.best.step << "\n";
  }
}

struct EvalCli {
  std::string root, dataset = "jung", index_test, checkpoint, out = "eval_out";
  std::string split = "test";
  std::string ssim_mode = "global";
  int canonical_size = 512;
  int levels = -1;  // -1 = take from checkpoint
};

void run_eval(const EvalCli& a) {
  DatasetSplits<float> data = load_splits(a.root, a.dataset, "", a.index_test,
                                          a.canonical_size);
  const auto& split = a.split == "train" ? data.train : data.test;
  if (a.split != "train" && a.split != "test") throw ConfigError("split must be train or test");

  LossConfig metric_cfg;
  metric_cfg.ssim_mode = ssim_mode_from_string(a.ssim_mode);

  MetricsReport rep;
  if (a.checkpoint.empty()) {
    rep = evaluate_pairs(split, nullptr, nullptr, metric_cfg);
    rep.method = "Input";
  } else {
    LoadedCheckpoint ck = load_checkpoint(a.checkpoint);
    if (a.levels >= 0 && a.levels != ck.config.levels) {
      throw ConfigError("--levels " + std::to_string(a.levels) +
                        " conflicts with checkpoint levels " +
                        std::to_string(ck.config.levels));
    }
    rep = evaluate_pairs(split, &ck.params, &ck.config, metric_cfg);
    rep.method = fs::path(a.checkpoint).stem().string();
  }
  rep.dataset = a.dataset;
  rep.split = a.split;

  fs::create_directories(a.out);
  {
    std::ofstream tsv(fs::path(a.out) / "report.tsv");
    tsv << to_tsv(rep);
    std::ofstream js(fs::path(a.out) / "report.json");
    js << to_json(rep).dump(2) << "\n";
  }
  std::cout << to_tsv(rep);
}

struct InferCli {
  std::string checkpoint, input, out = "deshadowed.png", target, side_by_side;
  std::string resize_policy = "fail";
};

void run_infer(const InferCli& a) {
  LoadedCheckpoint ck = load_checkpoint(a.checkpoint);
  Image<float> img = read_image(a.input);
  const int min_dim = 4 << ck.config.levels;
  if (std::min(img.height(), img.width()) < min_dim) {
    if (a.resize_policy == "resize") {
      const int h = std::max(img.height(), min_dim);
      const int w = std::max(img.width(), min_dim);
      img.chw = bilinear_resize(img.chw, h, w);
    } else {
      throw DataError("image " + std::to_string(img.height()) + "x" +
                      std::to_string(img.width()) + " too small for " +
                      std::to_string(ck.config.levels) +
                      " levels; pass --resize-policy resize to upscale");
    }
  }
  Image<float> out = forward(img, ck.params, ck.config);
  write_image(a.out, out);
  std::cout << "wrote " << a.out << "\n";

  if (!a.side_by_side.empty()) {
    std::vector<Image<float>> panels = {img, out};
    if (!a.target.empty()) panels.push_back(read_image(a.target));
    const int sep = 4;
    const int h = img.height();
    int w_total = -sep;
    for (const auto& p : panels) w_total += p.width() + sep;
    Image<float> strip = Image<float>::zeros(3, h, w_total);
    strip.chw.fill(1.0f);
    int x0 = 0;
    for (const auto& p : panels) {
      if (p.height() != h) throw DataError("triptych panels must share height");
      for (int c = 0; c < 3; ++c)
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < p.width(); ++x)
            strip.chw.at(c, y, x0 + x) = p.chw.at(p.channels() == 3 ? c : 0, y, x);
      x0 += p.width() + sep;
    }
    write_image(a.side_by_side, strip);
    std::cout << "wrote " << a.side_by_side << "\n";
  }
}

int run_gradcheck(std::uint64_t seed, double tol) {
  GradCheckOptions opts;
  opts.tol = tol;
  GradcheckReport rep = gradcheck_all(seed, opts);
  std::cout << rep.to_text();
  return rep.all_pass() ? kExitOk : kExitNumeric;
}

void run_report(const std::vector<std::string>& inputs, const std::string& out) {
  // Method rows x per-dataset metric columns, Table-2 style.
  std::map<std::string, std::map<std::string, MetricsReport>> by_method;
  std::vector<std::string> datasets;
  for (const auto& path : inputs) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open report: " + path);
    nlohmann::json j;
    f >> j;
    MetricsReport r = report_from_json(j);
    if (std::find(datasets.begin(), datasets.end(), r.dataset) == datasets.end()) {
      datasets.push_back(r.dataset);
    }
    by_method[r.method][r.dataset] = std::move(r);
  }
  std::ostringstream os;
  os << "Method";
  for (const auto& d : datasets) {
    os << "\t" << d << " PSNR\t" << d << " SSIM\t" << d << " RMSE";
  }
  os << "\n";
  for (const auto& [method, per_ds] : by_method) {
    os << method;
    for (const auto& d : datasets) {
      auto it = per_ds.find(d);
      if (it == per_ds.end()) {
        os << "\t-\t-\t-";
      } else {
        os << "\t" << detail::fixed2(it->second.mean_psnr()) << "\t"
           << detail::fixed2(it->second.mean_ssim()) << "\t"
           << detail::fixed2(it->second.mean_rmse());
      }
    }
    os << "\n";
  }
  if (out.empty()) {
    std::cout << os.str();
  } else {
    std::ofstream f(out);
    if (!f) throw DataError("cannot write " + out);
    f << os.str();
    std::cout << "wrote " << out << "\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Laplacian-pyramid document shadow removal"};
  app.require_subcommand(1);

  // decompose
  auto* dec = app.add_subcommand("decompose", "split an image into pyramid bands");
  std::string dec_input, dec_out = "bands";
  int dec_levels = 3;
  dec->add_option("--input", dec_input, "input image (png/jpeg)")->required();
  dec->add_option("--levels", dec_levels, "pyramid levels")->check(CLI::Range(0, 5));
  dec->add_option("--out-dir", dec_out, "output directory for bands + manifest");

  // reconstruct
  auto* rec = app.add_subcommand("reconstruct", "invert a band directory");
  std::string rec_in, rec_out = "reconstructed.png";
  rec->add_option("--in-dir", rec_in, "band directory with manifest.txt")->required();
  rec->add_option("--out", rec_out, "output image (.png or .pfm)");

  // train
  auto* tr = app.add_subcommand("train", "optimize the model on a paired dataset");
  TrainCli tcli;
  tr->add_option("--dataset-root", tcli.root, "dataset root (or DESHADOW_DATA_DIR)");
  tr->add_option("--dataset", tcli.dataset)->check(CLI::IsMember({"jung", "kligler"}));
  tr->add_option("--train-index", tcli.index_train, "index file override for train split");
  tr->add_option("--test-index", tcli.index_test, "index file override for test split");
  tr->add_option("--out", tcli.out, "run directory (checkpoints, logs)");
  tr->add_option("--max-steps", tcli.max_steps)->check(CLI::NonNegativeNumber);
  tr->add_option("--eval-every", tcli.eval_every);
  tr->add_option("--seed", tcli.seed);
  tr->add_option("--lr", tcli.lr);
  tr->add_option("--batch-size", tcli.batch_size)->check(CLI::PositiveNumber);
  tr->add_option("--crop", tcli.crop, "training crop size");
  tr->add_flag("--no-augment", tcli.no_augment, "disable the augmentation stack");
  tr->add_option("--levels", tcli.levels)->check(CLI::Range(0, 5));
  tr->add_option("--canonical-size", tcli.canonical_size,
                 "resize loaded pairs to this square size (0 keeps native)");
  tr->add_option("--ablation", tcli.ablation)
      ->check(CLI::IsMember({"full", "no_aan", "no_gmft"}));
  tr->add_option("--ssim-mode", tcli.ssim_mode)
      ->check(CLI::IsMember({"global", "windowed"}));
  tr->add_option("--grad-clip", tcli.grad_clip, "global-norm gradient clip (0 = off)");

  // eval
  auto* ev = app.add_subcommand("eval", "metrics against targets (Input row or checkpoint)");
  EvalCli ecli;
  ev->add_option("--dataset-root", ecli.root);
  ev->add_option("--dataset", ecli.dataset)->check(CLI::IsMember({"jung", "kligler"}));
  ev->add_option("--test-index", ecli.index_test, "index file override");
  ev->add_option("--split", ecli.split)->check(CLI::IsMember({"train", "test"}));
  ev->add_option("--checkpoint", ecli.checkpoint, "checkpoint base path (omit for Input row)");
  ev->add_option("--out", ecli.out, "report directory");
  ev->add_option("--ssim-mode", ecli.ssim_mode)
      ->check(CLI::IsMember({"global", "windowed"}));
  ev->add_option("--canonical-size", ecli.canonical_size);
  ev->add_option("--levels", ecli.levels, "must match the checkpoint when given");

  // infer
  auto* in = app.add_subcommand("infer", "run shadow removal on one image");
  InferCli icli;
  in->add_option("--checkpoint", icli.checkpoint)->required();
  in->add_option("--input", icli.input)->required();
  in->add_option("--out", icli.out);
  in->add_option("--target", icli.target, "optional clean image for the triptych");
  in->add_option("--side-by-side", icli.side_by_side,
                 "write an input|output[|target] strip");
  in->add_option("--resize-policy", icli.resize_policy)
      ->check(CLI::IsMember({"fail", "resize"}));

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every block");
  std::uint64_t gc_seed = 42;
  double gc_tol = 1e-3;
  gc->add_option("--seed", gc_seed);
  gc->add_option("--tol", gc_tol);

  // report
  auto* rp = app.add_subcommand("report", "merge eval JSON reports into one table");
  std::vector<std::string> rp_in;
  std::string rp_out;
  rp->add_option("--in", rp_in, "report.json files")->required()->expected(-1);
  rp->add_option("--out", rp_out, "output path (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*dec) {
      run_decompose(dec_input, dec_levels, dec_out);
    } else if (*rec) {
      run_reconstruct(rec_in, rec_out);
    } else if (*tr) {
      run_train(tcli);
    } else if (*ev) {
      run_eval(ecli);
    } else if (*in) {
      run_infer(icli);
    } else if (*gc) {
      return run_gradcheck(gc_seed, gc_tol);
    } else if (*rp) {
      run_report(rp_in, rp_out);
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitOk;
}
