#include "oed/commands.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "oed/checkpoint.hpp"
#include "oed/service.hpp"
#include "oed/synth.hpp"

namespace oed::cli {

namespace fs = std::filesystem;
using nlohmann::json;

fs::path next_run_dir(const fs::path& out_dir, const std::string& command) {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y%m%dT%H%M%SZ", &tm);
  const std::string base = command + "-" + stamp;
  fs::path p = out_dir / base;
  for (int k = 1; fs::exists(p) || fs::exists(out_dir / ("." + p.filename().string() + ".partial")); ++k) {
    p = out_dir / (base + "-" + std::to_string(k));
  }
  return p;
}

namespace {

// Outputs are written to a hidden staging directory that is renamed into place only
// once the command has succeeded.
class RunDir {
 public:
  RunDir(const fs::path& out_dir, const std::string& command) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
    final_ = next_run_dir(out_dir, command);
    staging_ = out_dir / ("." + final_.filename().string() + ".partial");
    fs::create_directories(staging_, ec);
    if (ec) throw IoError("cannot create " + staging_.string() + ": " + ec.message());
  }
  RunDir(const RunDir&) = delete;
  RunDir& operator=(const RunDir&) = delete;
  ~RunDir() {
    if (!committed_) {
      std::error_code ec;
      fs::remove_all(staging_, ec);
    }
  }

  const fs::path& path() const { return staging_; }
  fs::path commit() {
    fs::rename(staging_, final_);
    committed_ = true;
    return final_;
  }

 private:
  fs::path final_, staging_;
  bool committed_ = false;
};

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw IoError("cannot write " + p.string());
  f << text;
  if (!f) throw IoError("cannot write " + p.string());
}

// Runs a validation step, turning any library error into a UsageError.
template <class F>
auto validating(const std::string& what, F&& f) {
  try {
    return f();
  } catch (const UsageError&) {
    throw;
  } catch (const std::exception& e) {
    throw UsageError(what + ": " + e.what());
  }
}

data::DatasetManifest require_manifest(const RunConfig& c) {
  if (c.paths.manifest.empty()) throw UsageError("paths.manifest: a dataset manifest is required");
  if (!fs::is_regular_file(c.paths.manifest)) throw UsageError("paths.manifest: no such file " + c.paths.manifest);
  return validating("paths.manifest", [&] { return data::load_manifest(c.paths.manifest); });
}

void require_file(const std::string& path, const std::string& field) {
  if (path.empty()) throw UsageError(field + ": required");
  if (!fs::is_regular_file(path)) throw UsageError(field + ": no such file " + path);
}

std::vector<preprocess::Sample> require_split(const data::DatasetManifest& m, data::Split split, bool downsample) {
  auto samples = validating("paths.manifest", [&] { return preprocess::load_samples(m, split, downsample); });
  if (samples.empty()) throw UsageError("paths.manifest: the " + std::string(data::to_string(split)) + " split is empty");
  return samples;
}

}  // namespace

std::string model_name(const seg::SegModelConfig& c) {
  std::string name = c.backbone.kind == seg::BackboneKind::windowed_transformer ? "Transformer Mask R-CNN" : "Mask R-CNN";
  if (c.mask_loss == seg::MaskLossKind::dice) name += " + Dice Loss";
  return name;
}

fs::path cmd_synth(const RunConfig& config, std::ostream& log) {
  config.validate();
  RunDir dir(config.paths.out_dir, "synth");
  auto m = synth::generate_synthetic_dataset(config.synth, dir.path());
  m = preprocess::stratified_split(std::move(m), config.split_ratios, config.synth.seed);
  data::save_manifest(m, dir.path() / "manifest.json");
  write_text(dir.path() / "config.json", to_json(config));
  log << "synth: " << m.images.size() << " images, " << m.annotations.size() << " lesions\n";
  return dir.commit();
}

fs::path cmd_train_seg(const RunConfig& config, std::ostream& log) {
  config.validate();
  const auto manifest = require_manifest(config);
  const auto samples = require_split(manifest, data::Split::train, true);

  RunDir dir(config.paths.out_dir, "train-seg");
  log << "train-seg: " << samples.size() << " images, backbone " << seg::to_string(config.seg_model.backbone.kind)
      << ", mask loss " << seg::to_string(config.seg_model.mask_loss) << ", lr " << config.seg_train.learning_rate
      << ", weight decay " << config.seg_train.weight_decay << "\n";
  const auto result = seg::train_seg(samples, config.seg_model, config.seg_train,
                                     [&](int epoch, const seg::LossBreakdown& l) {
                                       log << "epoch " << epoch + 1 << "/" << config.seg_train.epochs << " total "
                                           << l.total() << " (cls " << l.cls << ", box " << l.box << ", mask "
                                           << l.mask << ", rpn " << l.rpn_objectness + l.rpn_box << ")\n";
                                       log.flush();
                                     });
  const Checkpoint ck = result.checkpoint(config.seg_train);
  write_checkpoint(ck, dir.path() / "seg.ckpt");
  write_text(dir.path() / "loss_curve.json", json::parse(ck.metadata_json).at("loss_curve").dump(2) + "\n");
  write_text(dir.path() / "config.json", to_json(config));
  return dir.commit();
}

fs::path cmd_train_mil(const RunConfig& config, std::ostream& log) {
  config.validate();
  const auto manifest = require_manifest(config);
  const auto samples = require_split(manifest, data::Split::train, true);
  const mil::MILTrainConfig& mc = config.mil;
  const auto sets = validating("mil", [&] { return mil::lesion_patch_sets(samples, mc.patch_size, mc.stride); });
  const auto bags = validating("mil", [&] { return mil::build_bags(sets, mc.bag_size, mc.seed); });
  bool pos = false, neg = false;
  for (const auto& b : bags) (b.bag_label ? pos : neg) = true;
  if (!pos || !neg) throw UsageError("paths.manifest: MIL training needs lesions from both bag groups");

  RunDir dir(config.paths.out_dir, "train-mil");
  log << "train-mil: " << sets.size() << " lesions, " << bags.size() << " bags; batch_size " << mc.batch_size
      << ", bag_size " << mc.bag_size << ", patch_size " << mc.patch_size << ", backbone "
      << mil::to_string(mc.backbone_kind) << ", init " << mil::to_string(mc.init) << "\n";
  const auto result = mil::train_mil(bags, mc, [&](int epoch, const mil::MilEpoch& e) {
    log << "epoch " << epoch + 1 << " [" << e.stage << "] total " << e.total << " (fine " << e.fine << ", bag "
        << e.bag << ")\n";
    log.flush();
  });
  const Checkpoint ck = result.checkpoint();
  write_checkpoint(ck, dir.path() / "mil.ckpt");
  write_text(dir.path() / "loss_curve.json", json::parse(ck.metadata_json).at("loss_curve").dump(2) + "\n");
  write_text(dir.path() / "config.json", to_json(config));
  return dir.commit();
}

metrics::EvalReport evaluate(const RunConfig& config, std::ostream& log) {
  config.validate();
  const auto manifest = require_manifest(config);
  const data::Split split = data::parse_split(config.eval.split);
  const auto samples = require_split(manifest, split, false);
  const std::vector<std::string> ids = manifest.ids_in(split);

  std::vector<std::string> ckpts = config.paths.checkpoints;
  if (!config.paths.seg_checkpoint.empty() &&
      std::find(ckpts.begin(), ckpts.end(), config.paths.seg_checkpoint) == ckpts.end()) {
    ckpts.push_back(config.paths.seg_checkpoint);
  }
  if (ckpts.empty() && !config.eval.oracle && config.paths.mil_checkpoint.empty())
    throw UsageError("paths.checkpoints: nothing to evaluate (give checkpoints or set eval.oracle)");

  std::vector<seg::SegModel> models;
  for (std::size_t i = 0; i < ckpts.size(); ++i) {
    require_file(ckpts[i], "paths.checkpoints[" + std::to_string(i) + "]");
    models.push_back(validating(ckpts[i], [&] {
      return seg::SegModel::from_checkpoint(read_checkpoint(ckpts[i], kSegCheckpointHeader));
    }));
  }
  std::optional<mil::MilModel> grader;
  if (!config.paths.mil_checkpoint.empty()) {
    require_file(config.paths.mil_checkpoint, "paths.mil_checkpoint");
    grader = validating(config.paths.mil_checkpoint, [&] {
      return mil::MilModel::from_checkpoint(read_checkpoint(config.paths.mil_checkpoint, kMilCheckpointHeader));
    });
  }

  const double thr = config.eval.iou_threshold;
  metrics::EvalReport report;
  auto add_row = [&](std::string name, const std::vector<metrics::ImageResult>& results) {
    metrics::ModelRow row;
    row.model = std::move(name);
    row.iou_threshold = thr;
    row.counts = metrics::count_detections(results, thr);
    row.mask_dice = metrics::mean_mask_dice(results, config.eval.mask_threshold);
    row.bbox_f1 = metrics::detection_f1(row.counts);
    const int gts = row.counts.tp + row.counts.fn;
    row.bbox_overlap_accuracy = gts > 0 ? static_cast<double>(row.counts.tp) / gts : 1.0;
    log << "eval: " << row.model << " mask dice " << row.mask_dice << ", bbox F1 " << row.bbox_f1
        << ", overlap accuracy " << row.bbox_overlap_accuracy << "\n";
    report.rows.push_back(std::move(row));
  };

  if (config.eval.oracle) {
    std::vector<metrics::ImageResult> results;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const auto& s = samples[i];
      metrics::ImageResult r{ids[i], s.image.width, s.image.height, {}, s.annotations};
      for (const auto& a : s.annotations) {
        data::Detection d;
        d.bbox = a.bbox();
        d.label = a.label();
        d.score = 1.0;
        const auto m = data::polygon_to_mask(a.polygon(), s.image.height, s.image.width);
        d.mask = Raster(s.image.width, s.image.height);
        for (std::size_t k = 0; k < m.bits.size(); ++k) d.mask.values[k] = m.bits[k];
        r.predictions.push_back(std::move(d));
      }
      results.push_back(std::move(r));
    }
    add_row("oracle", results);
  }

  std::vector<std::string> names;
  for (const auto& m : models) names.push_back(model_name(m.config()));
  for (std::size_t i = 0; i < models.size(); ++i) {
    if (std::count(names.begin(), names.end(), names[i]) > 1) names[i] += " [" + fs::path(ckpts[i]).filename().string() + "]";
  }
  for (std::size_t i = 0; i < models.size(); ++i) {
    std::vector<metrics::ImageResult> results;
    for (std::size_t k = 0; k < samples.size(); ++k) {
      const auto& s = samples[k];
      results.push_back({ids[k], s.image.width, s.image.height, models[i].predict(s.image), s.annotations});
    }
    add_row(names[i], results);
  }

  if (grader) {
    std::vector<data::ClassLabel> lesion_pred, lesion_true, patch_pred, patch_true;
    for (const auto& s : samples) {
      for (const auto& a : s.annotations) {
        const auto g = grader->classify_lesion(s.image, a.bbox());
        lesion_pred.push_back(g.label);
        lesion_true.push_back(a.label());
        for (const auto& row : g.patch_probabilities) {
          int best = 0;
          for (int k = 1; k < data::kNumClasses; ++k) {
            if (row[k] > row[best]) best = k;
          }
          patch_pred.push_back(data::label_from_index(best));
          patch_true.push_back(a.label());
        }
      }
    }
    if (lesion_true.empty()) throw UsageError("paths.manifest: no lesions in the evaluation split");
    report.lesion_classification = metrics::classification_report(lesion_pred, lesion_true);
    report.patch_classification = metrics::classification_report(patch_pred, patch_true);
    log << "eval: lesion-level overall F1 " << report.lesion_classification->macro_f1 << "\n";
  }

  json echo;
  echo["iou_threshold"] = thr;
  echo["mask_threshold"] = config.eval.mask_threshold;
  echo["split"] = config.eval.split;
  echo["oracle"] = config.eval.oracle;
  echo["manifest"] = config.paths.manifest;
  echo["checkpoints"] = ckpts;
  echo["mil_checkpoint"] = config.paths.mil_checkpoint;
  json model_configs = json::array();
  for (const auto& m : models) model_configs.push_back(json::parse(seg::to_json(m.config())));
  echo["models"] = model_configs;
  report.config_json = echo.dump();
  return report;
}

fs::path cmd_eval(const RunConfig& config, std::ostream& log) {
  const metrics::EvalReport report = evaluate(config, log);
  if (report.rows.empty() && !report.lesion_classification)
    throw UsageError("eval: nothing was evaluated");
  RunDir dir(config.paths.out_dir, "eval");
  if (!report.rows.empty()) {
    metrics::emit_report(report, dir.path());
  } else {
    write_text(dir.path() / "report.json", metrics::report_json(report));
    write_text(dir.path() / "report.txt", metrics::report_table(report));
  }
  write_text(dir.path() / "config.json", to_json(config));
  log << metrics::report_table(report);
  return dir.commit();
}

fs::path cmd_infer(const RunConfig& config, std::ostream& log) {
  config.validate();
  require_file(config.paths.image, "paths.image");
  require_file(config.paths.seg_checkpoint, "paths.seg_checkpoint");
  if (!config.paths.mil_checkpoint.empty()) require_file(config.paths.mil_checkpoint, "paths.mil_checkpoint");
  const Image image = validating("paths.image", [&] { return read_png(config.paths.image); });
  const auto pipeline = validating("checkpoint", [&] {
    return service::Pipeline::load(config.paths.seg_checkpoint, config.paths.mil_checkpoint);
  });

  const auto findings = pipeline->analyze(image);
  RunDir dir(config.paths.out_dir, "infer");
  write_text(dir.path() / "prediction.json", json::parse(service::findings_json(image, findings)).dump(2) + "\n");
  write_png(service::render_overlay(image, findings), dir.path() / "overlay.png");
  write_text(dir.path() / "config.json", to_json(config));
  log << "infer: " << findings.size() << " detection(s)\n";
  return dir.commit();
}

void cmd_serve(const RunConfig& config, std::ostream& log) {
  config.validate();
  require_file(config.paths.seg_checkpoint, "paths.seg_checkpoint");
  if (!config.paths.mil_checkpoint.empty()) require_file(config.paths.mil_checkpoint, "paths.mil_checkpoint");
  const int port = validating("serve.port", [&] { return service::resolve_port(config.serve); });
  RunConfig c = config;
  c.serve.port = port;
  service::Server server(c.serve);
  server.bind();
  server.load_async(config.paths.seg_checkpoint, config.paths.mil_checkpoint);
  log << "serving on http://" << c.serve.host << ":" << port << "\n";
  log.flush();
  server.run();
}

namespace {

struct Flags {
  std::string config;
  std::vector<std::string> sets;
  // convenience flags; empty means "not given"
  std::string out, manifest, seed, epochs, n, mix, height, width, seg_ckpt, mil_ckpt, image, port, backbone, mask_loss;
  std::vector<std::string> checkpoints;
  bool oracle = false;
};

std::vector<std::string> overrides_from(const Flags& f, const std::string& command) {
  std::vector<std::string> o;
  auto add = [&](const std::string& key, const std::string& v) {
    if (!v.empty()) o.push_back(key + "=" + v);
  };
  auto add_str = [&](const std::string& key, const std::string& v) {
    if (!v.empty()) o.push_back(key + "=" + json(v).dump());
  };
  add_str("paths.out_dir", f.out);
  add_str("paths.manifest", f.manifest);
  add_str("paths.seg_checkpoint", f.seg_ckpt);
  add_str("paths.mil_checkpoint", f.mil_ckpt);
  add_str("paths.image", f.image);
  if (!f.checkpoints.empty()) o.push_back("paths.checkpoints=" + json(f.checkpoints).dump());
  if (command == "synth") {
    add("synth.seed", f.seed);
    add("synth.n_images", f.n);
    add("synth.height", f.height);
    add("synth.width", f.width);
    if (!f.mix.empty()) o.push_back("synth.class_mix=[" + f.mix + "]");
  } else if (command == "train-seg") {
    add("seg_train.seed", f.seed);
    add("seg_train.epochs", f.epochs);
    add_str("seg_model.backbone.kind", f.backbone);
    add_str("seg_model.mask_loss", f.mask_loss);
  } else if (command == "train-mil") {
    add("mil.seed", f.seed);
    add("mil.epochs", f.epochs);
    add_str("mil.backbone_kind", f.backbone);
  } else if (command == "eval") {
    if (f.oracle) o.push_back("eval.oracle=true");
  } else if (command == "serve") {
    add("serve.port", f.port);
  }
  o.insert(o.end(), f.sets.begin(), f.sets.end());
  return o;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Oral lesion detection, segmentation and grading"};
  app.require_subcommand(1);
  Flags f;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", f.config, "JSON run configuration");
    sub->add_option("--set", f.sets, "Override a configuration field, e.g. seg_train.epochs=5")->take_all();
    sub->add_option("--out", f.out, "Parent directory for run outputs");
  };
  CLI::App* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  common(synth);
  synth->add_option("--n", f.n, "Number of images");
  synth->add_option("--seed", f.seed, "Random seed");
  synth->add_option("--mix", f.mix, "Class mix as three comma-separated fractions");
  synth->add_option("--height", f.height, "Image height");
  synth->add_option("--width", f.width, "Image width");

  CLI::App* train_seg = app.add_subcommand("train-seg", "Train the lesion detector");
  CLI::App* train_mil = app.add_subcommand("train-mil", "Train the MIL lesion grader");
  for (CLI::App* sub : {train_seg, train_mil}) {
    common(sub);
    sub->add_option("--manifest", f.manifest, "Dataset manifest");
    sub->add_option("--epochs", f.epochs, "Training epochs");
    sub->add_option("--seed", f.seed, "Random seed");
    sub->add_option("--backbone", f.backbone, "Backbone kind");
  }
  train_seg->add_option("--mask-loss", f.mask_loss, "dice or bce");

  CLI::App* eval = app.add_subcommand("eval", "Evaluate checkpoints on a split");
  common(eval);
  eval->add_option("--manifest", f.manifest, "Dataset manifest");
  eval->add_option("--checkpoint", f.checkpoints, "Segmentation checkpoint (repeatable)");
  eval->add_option("--mil-checkpoint", f.mil_ckpt, "MIL checkpoint");
  eval->add_flag("--oracle", f.oracle, "Score ground truth as predictions");

  CLI::App* infer = app.add_subcommand("infer", "Detect and grade lesions in one image");
  common(infer);
  infer->add_option("--image", f.image, "Input PNG");
  infer->add_option("--seg-checkpoint", f.seg_ckpt, "Segmentation checkpoint");
  infer->add_option("--mil-checkpoint", f.mil_ckpt, "MIL checkpoint");

  CLI::App* serve = app.add_subcommand("serve", "Run the HTTP inference service");
  common(serve);
  serve->add_option("--seg-checkpoint", f.seg_ckpt, "Segmentation checkpoint");
  serve->add_option("--mil-checkpoint", f.mil_ckpt, "MIL checkpoint");
  serve->add_option("--port", f.port, "Port (default: $OED_PORT, else 8080)");

  std::vector<std::string> argv(args.rbegin(), args.rend());
  try {
    app.parse(argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  CLI::App* chosen = app.get_subcommands().front();
  const std::string command = chosen->get_name();
  try {
    RunConfig config;
    try {
      config = load_run_config(f.config, overrides_from(f, command));
    } catch (const Error& e) {
      throw UsageError(e.what());
    }
    fs::path dir;
    if (command == "synth") dir = cmd_synth(config, err);
    else if (command == "train-seg") dir = cmd_train_seg(config, err);
    else if (command == "train-mil") dir = cmd_train_mil(config, err);
    else if (command == "eval") dir = cmd_eval(config, err);
    else if (command == "infer") dir = cmd_infer(config, err);
    else if (command == "serve") {
      cmd_serve(config, err);
      return 0;
    }
    out << dir.string() << "\n";
    return 0;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace oed::cli
