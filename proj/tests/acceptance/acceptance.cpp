// One PASS/FAIL line per primary criterion. Every threshold is pinned below.
//
//   oed_acceptance --work-dir <dir> [--only id,id,...]

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "oed/commands.hpp"
#include "oed/metrics.hpp"
#include "oed/mil.hpp"
#include "oed/synth.hpp"
#include "suites.hpp"

using namespace oed;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// runtime budgets, seconds
constexpr double kLossBudget = 10.0;
constexpr double kGradientBudget = 120.0;
constexpr double kMetricBudget = 30.0;
constexpr double kAttentionBudget = 30.0;
constexpr double kSegBudget = 30.0 * 60.0;
constexpr double kMilBudget = 10.0 * 60.0;

constexpr double kMinMaskDice = 0.85;
constexpr double kMinOverlap = 0.90;
constexpr double kOverlapIou = 0.25;
constexpr double kAblationMargin = 0.02;
constexpr double kMinMilF1 = 0.90;
constexpr double kZHatTol = 1e-9;
constexpr double kTopDetectionIou = 0.5;

constexpr int kSegTrain = 200;
constexpr int kSegTest = 50;
constexpr std::uint32_t kSegSeed = 1;
constexpr int kMilTrainLesions = 150;
constexpr int kMilTestLesions = 30;
constexpr std::uint32_t kMilTrainSeed = 11;
constexpr std::uint32_t kMilTestSeed = 12;

const std::string kTransformerDice = "Transformer Mask R-CNN + Dice Loss";
const std::string kTransformerBce = "Transformer Mask R-CNN";
const std::string kConvDice = "Mask R-CNN + Dice Loss";

struct Verdict {
  bool pass = false;
  std::string measured;
};

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

std::string sci(double v) {
  std::ostringstream s;
  s << std::scientific << std::setprecision(2) << v;
  return s.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream s;
  s << f.rdbuf();
  return s.str();
}

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = slurp(e.path());
  return files;
}

// Runs the CLI; progress goes to stderr. Returns the run directory.
fs::path oed_cli(const std::vector<std::string>& args) {
  std::ostringstream out;
  const int code = cli::run(args, out, std::cerr);
  if (code != 0) {
    std::string joined;
    for (const auto& a : args) joined += " " + a;
    throw std::runtime_error("oed" + joined + " exited with " + std::to_string(code));
  }
  std::string s = out.str();
  while (!s.empty() && (s.back() == '\n' || s.back() == '\r')) s.pop_back();
  return s;
}

Verdict from_suite(const testing::SuiteResult& r, double tol, double budget) {
  Verdict v;
  v.pass = r.passed && r.seconds < budget;
  v.measured = std::to_string(r.instances) + " instances, worst " + sci(r.worst) + " (tol " + sci(tol) + "), " +
               fmt(r.seconds, 1) + "s (budget " + fmt(budget, 0) + "s)";
  if (!r.failure.empty()) v.measured += "; " + r.failure;
  return v;
}

// 200 train / 50 test images rendered with one seed, written as a manifest.
fs::path seg_manifest(const fs::path& work) {
  const fs::path runs = work / "seg_data";
  fs::remove_all(runs);
  const fs::path dir = oed_cli({"synth", "--n", std::to_string(kSegTrain + kSegTest), "--seed",
                                std::to_string(kSegSeed), "--out", runs.string()});
  auto m = data::load_manifest(dir / "manifest.json");
  int i = 0;
  for (auto& img : m.images) m.splits[img.id] = i++ < kSegTrain ? data::Split::train : data::Split::test;
  const fs::path path = dir / "manifest_200_50.json";
  save_manifest(m, path);
  return path;
}

struct SegRuns {
  fs::path manifest;
  std::map<std::string, fs::path> checkpoints;  // model name -> checkpoint
  std::map<std::string, double> train_seconds;
  fs::path eval_dir;
  json report;
  double single_lesion_iou = 0.0;
  int single_lesion_images = 0;
};

SegRuns run_segmentation(const fs::path& work) {
  SegRuns r;
  r.manifest = seg_manifest(work);
  const fs::path runs = work / "seg_runs";
  fs::remove_all(runs);
  const std::vector<std::pair<std::string, std::pair<std::string, std::string>>> configs{
      {kTransformerDice, {"windowed_transformer", "dice"}},
      {kConvDice, {"conv_fpn", "dice"}},
      {kTransformerBce, {"windowed_transformer", "bce"}},
  };
  for (const auto& [name, flags] : configs) {
    const auto t0 = Clock::now();
    const fs::path dir = oed_cli({"train-seg", "--manifest", r.manifest.string(), "--backbone", flags.first,
                                  "--mask-loss", flags.second, "--out", runs.string()});
    r.train_seconds[name] = since(t0);
    r.checkpoints[name] = dir / "seg.ckpt";
  }
  std::vector<std::string> args{"eval", "--manifest", r.manifest.string(), "--out", runs.string()};
  for (const auto& [name, flags] : configs) {
    args.push_back("--checkpoint");
    args.push_back(r.checkpoints[name].string());
  }
  r.eval_dir = oed_cli(args);
  r.report = json::parse(slurp(r.eval_dir / "report.json"));

  // top detection of each single-lesion test image against its box
  const auto m = data::load_manifest(r.manifest);
  const auto model =
      seg::SegModel::from_checkpoint(read_checkpoint(r.checkpoints[kTransformerDice], kSegCheckpointHeader));
  double worst = 1.0;
  for (const auto& id : m.ids_in(data::Split::test)) {
    const auto anns = m.annotations_for(id);
    if (anns.size() != 1) continue;
    const auto dets = model.predict(m.load_pixels(id));
    const double iou = dets.empty() ? 0.0 : metrics::box_iou(dets.front().bbox, anns[0]->bbox());
    worst = std::min(worst, iou);
    ++r.single_lesion_images;
  }
  r.single_lesion_iou = worst;
  return r;
}

const json* report_row(const json& report, const std::string& model) {
  for (const auto& row : report.at("rows"))
    if (row.at("model") == model) return &row;
  return nullptr;
}

Verdict seg_end_to_end(const SegRuns& r) {
  const json* row = report_row(r.report, kTransformerDice);
  if (!row) return {false, "no row for " + kTransformerDice};
  const double dice = row->at("mask_dice"), overlap = row->at("bbox_overlap_accuracy");
  const double secs = r.train_seconds.at(kTransformerDice);
  Verdict v;
  v.pass = dice >= kMinMaskDice && overlap >= kMinOverlap && row->at("iou_threshold") == kOverlapIou &&
           secs <= kSegBudget;
  v.measured = "mask dice " + fmt(dice) + " (>= " + fmt(kMinMaskDice, 2) + "), overlap@0.25 " + fmt(overlap) +
               " (>= " + fmt(kMinOverlap, 2) + "), bbox F1 " + fmt(row->at("bbox_f1").get<double>()) + ", train " +
               fmt(secs, 0) + "s (budget " + fmt(kSegBudget, 0) + "s)";
  return v;
}

Verdict ablation(const SegRuns& r) {
  const json* td = report_row(r.report, kTransformerDice);
  const json* cd = report_row(r.report, kConvDice);
  const json* tb = report_row(r.report, kTransformerBce);
  if (!td || !cd || !tb) return {false, "report is missing a configuration row"};
  const std::string table = slurp(r.eval_dir / "report.txt");
  const bool shaped = r.report.at("rows").size() == 3 && table.find("Mask Dice") != std::string::npos &&
                      table.find("BBox F1") != std::string::npos &&
                      table.find("BBox Overlap Accuracy") != std::string::npos;
  const double t = td->at("mask_dice"), c = cd->at("mask_dice"), b = tb->at("mask_dice");
  Verdict v;
  v.pass = shaped && t >= c - kAblationMargin;
  v.measured = "dice transformer+dice " + fmt(t) + ", conv+dice " + fmt(c) + ", transformer+bce " + fmt(b) +
               "; need " + fmt(t) + " >= " + fmt(c - kAblationMargin) + (shaped ? "" : "; report table is missing a metric column");
  return v;
}

Verdict single_lesion(const SegRuns& r) {
  Verdict v;
  v.pass = r.single_lesion_images > 0 && r.single_lesion_iou >= kTopDetectionIou;
  v.measured = "worst top-detection IoU " + fmt(r.single_lesion_iou) + " over " +
               std::to_string(r.single_lesion_images) + " single-lesion test images (>= " + fmt(kTopDetectionIou, 2) +
               ")";
  return v;
}

// Samples from `seed` until at least `lesions` annotations are available.
std::vector<preprocess::Sample> lesion_samples(std::uint32_t seed, int lesions) {
  synth::SynthConfig c;
  c.seed = seed;
  c.n_images = lesions;  // 1-2 lesions per image, so this always suffices
  auto samples = synth::generate_samples(c);
  int have = 0;
  std::size_t keep = 0;
  while (keep < samples.size() && have < lesions) have += static_cast<int>(samples[keep++].annotations.size());
  samples.resize(keep);
  return samples;
}

Verdict mil_end_to_end() {
  const auto t0 = Clock::now();
  const auto train_samples = lesion_samples(kMilTrainSeed, kMilTrainLesions);
  auto sets = mil::lesion_patch_sets(train_samples);
  sets.resize(kMilTrainLesions);
  const mil::MILTrainConfig config;
  const auto bags = mil::build_bags(sets, config.bag_size, config.seed);
  std::cerr << "mil: " << sets.size() << " training lesions, " << bags.size() << " bags\n";
  const auto result = mil::train_mil(bags, config, [](int e, const mil::MilEpoch& m) {
    std::cerr << "mil: epoch " << e << " " << m.stage << " total " << m.total << "\n";
  });

  const auto test_samples = lesion_samples(kMilTestSeed, kMilTestLesions);
  std::vector<data::ClassLabel> pred, truth;
  double worst_z = 0.0;
  for (const auto& s : test_samples) {
    for (const auto& a : s.annotations) {
      if (static_cast<int>(truth.size()) == kMilTestLesions) break;
      const auto g = result.model.classify_lesion(s.image, a.bbox());
      double nd = 0.0;
      for (const auto& row : g.patch_probabilities) nd += row[0];
      nd /= static_cast<double>(g.patch_probabilities.size());
      worst_z = std::max(worst_z, std::fabs(g.z_hat - (1.0 - nd)));
      pred.push_back(g.label);
      truth.push_back(a.label());
    }
  }
  const auto report = metrics::classification_report(pred, truth);
  const double secs = since(t0);
  Verdict v;
  v.pass = report.macro_f1 >= kMinMilF1 && worst_z <= kZHatTol && secs <= kMilBudget;
  v.measured = "macro F1 " + fmt(report.macro_f1) + " (>= " + fmt(kMinMilF1, 2) + ") on " +
               std::to_string(truth.size()) + " lesions [F1 " + fmt(report.f1[0], 3) + "/" + fmt(report.f1[1], 3) +
               "/" + fmt(report.f1[2], 3) + "], worst z_hat error " + sci(worst_z) + " (tol " + sci(kZHatTol) +
               "), " + fmt(secs, 0) + "s (budget " + fmt(kMilBudget, 0) + "s)";
  return v;
}

Verdict determinism(const fs::path& work) {
  const fs::path root = work / "determinism";
  fs::remove_all(root);
  std::vector<std::string> differing;
  auto twice = [&](const std::string& what, const std::vector<std::string>& args) {
    const fs::path a = oed_cli(args), b = oed_cli(args);
    if (a == b || tree(a) != tree(b) || tree(a).empty()) differing.push_back(what);
    return a;
  };
  const fs::path data = twice("synth", {"synth", "--n", "16", "--seed", "5", "--out", (root / "synth").string()});
  const std::string manifest = (data / "manifest.json").string();
  const fs::path seg =
      twice("train-seg", {"train-seg", "--manifest", manifest, "--epochs", "2", "--out", (root / "seg").string()});
  const fs::path mil = twice("train-mil", {"train-mil", "--manifest", manifest, "--epochs", "2", "--set",
                                           "mil.pretrain_epochs=1", "--out", (root / "mil").string()});
  twice("eval", {"eval", "--manifest", manifest, "--checkpoint", (seg / "seg.ckpt").string(), "--mil-checkpoint",
                 (mil / "mil.ckpt").string(), "--out", (root / "eval").string()});
  const auto m = data::load_manifest(manifest);
  twice("infer", {"infer", "--seg-checkpoint", (seg / "seg.ckpt").string(), "--mil-checkpoint",
                  (mil / "mil.ckpt").string(), "--image", (m.root / m.images.front().path).string(), "--out",
                  (root / "infer").string()});
  Verdict v;
  v.pass = differing.empty();
  if (v.pass) {
    v.measured = "synth, train-seg, train-mil, eval, infer reruns byte-identical";
  } else {
    v.measured = "differs:";
    for (const auto& d : differing) v.measured += " " + d;
  }
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  fs::path work;
  std::set<std::string> only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--work-dir" && i + 1 < argc) {
      work = argv[++i];
    } else if (a == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      for (std::string id; std::getline(ss, id, ',');) only.insert(id);
    } else {
      std::cerr << "usage: oed_acceptance --work-dir <dir> [--only id,...]\n";
      return 2;
    }
  }
  if (work.empty()) {
    std::cerr << "usage: oed_acceptance --work-dir <dir> [--only id,...]\n";
    return 2;
  }
  fs::create_directories(work);

  std::optional<SegRuns> seg;
  auto seg_runs = [&]() -> const SegRuns& {
    if (!seg) seg = run_segmentation(work);
    return *seg;
  };

  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
      {"loss_oracles",
       [] { return from_suite(testing::loss_oracle_suite(101), testing::kLossOracleTol, kLossBudget); }},
      {"gradients", [] { return from_suite(testing::gradient_suite(202), testing::kGradientTol, kGradientBudget); }},
      {"metric_oracles",
       [] { return from_suite(testing::metric_oracle_suite(303), testing::kMetricOracleTol, kMetricBudget); }},
      {"attention_degeneracy",
       [] { return from_suite(testing::attention_degeneracy_suite(404), testing::kDegeneracyTol, kAttentionBudget); }},
      {"seg_end_to_end", [&] { return seg_end_to_end(seg_runs()); }},
      {"ablation", [&] { return ablation(seg_runs()); }},
      {"mil_end_to_end", [] { return mil_end_to_end(); }},
      {"determinism", [&] { return determinism(work); }},
  };

  int failed = 0;
  std::vector<std::string> lines;
  auto record = [&](const std::string& id, const std::function<Verdict()>& check) {
    const auto t0 = Clock::now();
    Verdict v;
    try {
      v = check();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    if (!v.pass) ++failed;
    std::ostringstream line;
    line << (v.pass ? "PASS " : "FAIL ") << id << ": " << v.measured << " [" << fmt(since(t0), 1) << "s]";
    std::cout << line.str() << std::endl;
    lines.push_back(line.str());
  };
  for (const auto& [id, check] : criteria) {
    if (only.empty() || only.count(id)) record(id, check);
  }
  // top-detection example, reusing the segmentation runs
  if (only.empty() || only.count("single_lesion")) record("single_lesion", [&] { return single_lesion(seg_runs()); });

  std::ofstream summary(work / "acceptance.txt");
  for (const auto& l : lines) summary << l << "\n";
  std::cout << (failed == 0 ? "acceptance: all passed" : "acceptance: " + std::to_string(failed) + " failed")
            << std::endl;
  return failed == 0 ? 0 : 1;
}
