#include "oed/mil.hpp"

#include <algorithm>
#include <cmath>

#include "json_config.hpp"
#include "oed/nn/layers.hpp"
#include "oed/nn/ops.hpp"
#include "oed/nn/optim.hpp"

namespace oed::mil {

using nn::Graph;
using nn::Tensor;
using nn::Var;

namespace {

int reflect(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

Image resize_bilinear(const Image& src, int w, int h) {
  Image out(w, h);
  const double sx = static_cast<double>(src.width) / w, sy = static_cast<double>(src.height) / h;
  for (int y = 0; y < h; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, src.height - 1.0);
    const int y0 = static_cast<int>(fy), y1 = std::min(y0 + 1, src.height - 1);
    const double ty = fy - y0;
    for (int x = 0; x < w; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, src.width - 1.0);
      const int x0 = static_cast<int>(fx), x1 = std::min(x0 + 1, src.width - 1);
      const double tx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        const double v = (1 - ty) * ((1 - tx) * src.at(x0, y0, c) + tx * src.at(x1, y0, c)) +
                         ty * ((1 - tx) * src.at(x0, y1, c) + tx * src.at(x1, y1, c));
        out.at(x, y, c) = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
      }
    }
  }
  return out;
}

int tiles(int extent, int patch, int stride) {
  if (extent <= patch) return 1;
  return (extent - patch + stride - 1) / stride + 1;
}

}  // namespace

PatchSet extract_patches(const Image& image, const Box& bbox, int patch_size, int stride, std::string image_id) {
  if (patch_size < 1 || stride < 1) throw InvalidArgument("extract_patches: patch size and stride must be >= 1");
  const int x0 = std::max(0, static_cast<int>(std::floor(bbox.x_min)));
  const int y0 = std::max(0, static_cast<int>(std::floor(bbox.y_min)));
  const int x1 = std::min(image.width, static_cast<int>(std::ceil(bbox.x_max)));
  const int y1 = std::min(image.height, static_cast<int>(std::ceil(bbox.y_max)));
  if (!(bbox.width() > 0 && bbox.height() > 0) || x1 <= x0 || y1 <= y0)
    throw InvalidArgument("extract_patches: zero-area box");

  Image crop(x1 - x0, y1 - y0);
  for (int y = y0; y < y1; ++y) {
    for (int x = x0; x < x1; ++x) {
      for (int c = 0; c < 3; ++c) crop.at(x - x0, y - y0, c) = image.at(x, y, c);
    }
  }
  const int short_side = std::min(crop.width, crop.height);
  if (short_side < patch_size) {
    const double s = static_cast<double>(patch_size) / short_side;
    const int w = crop.width == short_side ? patch_size : static_cast<int>(std::lround(crop.width * s));
    const int h = crop.height == short_side ? patch_size : static_cast<int>(std::lround(crop.height * s));
    crop = resize_bilinear(crop, w, h);
  }

  PatchSet ps;
  ps.image_id = std::move(image_id);
  ps.bbox = bbox;
  ps.crop_width = crop.width;
  ps.crop_height = crop.height;
  const int nx = tiles(crop.width, patch_size, stride), ny = tiles(crop.height, patch_size, stride);
  for (int ty = 0; ty < ny; ++ty) {
    for (int tx = 0; tx < nx; ++tx) {
      const int ox = tx * stride, oy = ty * stride;
      Image p(patch_size, patch_size);
      for (int y = 0; y < patch_size; ++y) {
        const int sy = reflect(oy + y, crop.height);
        for (int x = 0; x < patch_size; ++x) {
          const int sx = reflect(ox + x, crop.width);
          for (int c = 0; c < 3; ++c) p.at(x, y, c) = crop.at(sx, sy, c);
        }
      }
      ps.patches.push_back(std::move(p));
      ps.coords.push_back({static_cast<double>(ox), static_cast<double>(oy)});
    }
  }
  return ps;
}

std::vector<LabeledPatchSet> lesion_patch_sets(std::span<const preprocess::Sample> samples, int patch_size,
                                               int stride) {
  std::vector<LabeledPatchSet> out;
  for (const auto& s : samples) {
    for (const auto& a : s.annotations) {
      out.push_back({extract_patches(s.image, a.bbox(), patch_size, stride, a.image_id()), a.label()});
    }
  }
  return out;
}

std::vector<Bag> build_bags(std::span<const LabeledPatchSet> sets, int bag_size, std::uint64_t seed) {
  if (bag_size < 1) throw InvalidArgument("build_bags: bag_size must be >= 1");
  std::mt19937_64 rng(seed);
  auto shuffle = [&](auto& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng() % i]);
  };
  struct Ref {
    const Image* patch;
    ClassLabel label;
  };
  std::vector<Bag> bags;
  auto emit = [&](std::span<const Ref> refs) {
    Bag b;
    for (const Ref& r : refs) {
      b.patches.push_back(*r.patch);
      b.fine_labels.push_back(r.label);
    }
    b.bag_label = loss::coarse_label(b.fine_labels);
    bags.push_back(std::move(b));
  };

  std::size_t total = 0;
  std::vector<Ref> pool[2];
  for (const auto& s : sets) {
    std::vector<Ref> refs;
    for (const auto& p : s.patches.patches) refs.push_back({&p, s.label});
    total += refs.size();
    shuffle(refs);
    std::size_t used = 0;
    if (static_cast<int>(refs.size()) >= bag_size) {
      for (; used + bag_size <= refs.size(); used += bag_size) emit(std::span<const Ref>(refs).subspan(used, bag_size));
    }
    auto& dst = pool[data::is_positive_group(s.label) ? 1 : 0];
    dst.insert(dst.end(), refs.begin() + static_cast<std::ptrdiff_t>(used), refs.end());
  }
  if (total == 0) throw InvalidArgument("build_bags: no patches");
  for (auto& p : pool) {
    shuffle(p);
    for (std::size_t i = 0; i < p.size(); i += bag_size) {
      emit(std::span<const Ref>(p).subspan(i, std::min<std::size_t>(bag_size, p.size() - i)));
    }
  }
  return bags;
}

std::string_view to_string(PatchBackbone kind) {
  return kind == PatchBackbone::vgg_like ? "vgg_like" : "densely_connected";
}

PatchBackbone parse_patch_backbone(std::string_view name) {
  if (name == "vgg_like") return PatchBackbone::vgg_like;
  if (name == "densely_connected") return PatchBackbone::densely_connected;
  throw InvalidArgument("unknown patch backbone '" + std::string(name) + "'");
}

std::string_view to_string(MilInit init) {
  return init == MilInit::random ? "random" : "transfer_from_patch_classifier";
}

MilInit parse_mil_init(std::string_view name) {
  if (name == "random") return MilInit::random;
  if (name == "transfer_from_patch_classifier") return MilInit::transfer_from_patch_classifier;
  throw InvalidArgument("unknown MIL init '" + std::string(name) + "'");
}

void MILTrainConfig::validate() const {
  if (bag_size < 1) throw InvalidArgument("mil.bag_size must be >= 1");
  if (batch_size < 1 || batch_size % bag_size != 0)
    throw InvalidArgument("mil.batch_size must be a positive multiple of mil.bag_size");
  if (patch_size < 16) throw InvalidArgument("mil.patch_size must be >= 16");
  if (stride < 1) throw InvalidArgument("mil.stride must be >= 1");
  if (epochs < 1) throw InvalidArgument("mil.epochs must be >= 1");
  if (pretrain_epochs < 0) throw InvalidArgument("mil.pretrain_epochs must be >= 0");
  if (!(learning_rate > 0)) throw InvalidArgument("mil.learning_rate must be > 0");
  if (!(weight_decay >= 0)) throw InvalidArgument("mil.weight_decay must be >= 0");
  if (!(bag_loss_weight >= 0)) throw InvalidArgument("mil.bag_loss_weight must be >= 0");
}

std::string to_json(const MILTrainConfig& c) { return detail::to_json_value(c).dump(); }

MILTrainConfig mil_config_from_json(std::string_view text) {
  MILTrainConfig c;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError("<root>", e.what());
  }
  detail::read(j, c, "");
  return c;
}

LesionGrade grade_from_rows(std::vector<ClassProbs> rows) {
  if (rows.empty()) throw InvalidArgument("grade_from_rows: no patches");
  LesionGrade g;
  for (const auto& r : rows) {
    for (int k = 0; k < data::kNumClasses; ++k) g.probabilities[k] += r[k];
  }
  for (double& p : g.probabilities) p /= static_cast<double>(rows.size());
  int best = 0;
  for (int k = 1; k < data::kNumClasses; ++k) {
    if (g.probabilities[k] > g.probabilities[best]) best = k;
  }
  g.label = data::label_from_index(best);
  g.z_hat = loss::bag_probability(rows);
  g.patch_probabilities = std::move(rows);
  return g;
}

struct PatchClassifier::Net {
  std::vector<nn::Conv2d> convs;
  // densely connected: layer groups per block, then transitions
  std::vector<std::vector<nn::Conv2d>> blocks;
  std::vector<nn::Conv2d> transitions;
  nn::Linear fc;
};

PatchClassifier::PatchClassifier(PatchBackbone kind, int patch_size, std::uint64_t seed)
    : kind_(kind), patch_size_(patch_size), params_(std::make_unique<nn::ParamStore>()), net_(std::make_shared<Net>()) {
  std::mt19937_64 rng(seed);
  nn::ParamStore& s = *params_;
  Net& n = *net_;
  if (kind == PatchBackbone::vgg_like) {
    n.convs.emplace_back(s, "patch.conv1", 3, 16, 3, 2, 1, rng);
    n.convs.emplace_back(s, "patch.conv2", 16, 16, 3, 1, 1, rng);
    n.convs.emplace_back(s, "patch.conv3", 16, 32, 3, 1, 1, rng);
    n.convs.emplace_back(s, "patch.conv4", 32, 32, 3, 1, 1, rng);
    n.convs.emplace_back(s, "patch.conv5", 32, 64, 3, 1, 1, rng);
    n.fc = nn::Linear(s, "patch.fc", 64, data::kNumClasses, rng);
  } else {
    n.convs.emplace_back(s, "patch.stem", 3, 16, 3, 2, 1, rng);
    const int growth[] = {8, 12, 16};
    const int trans_out[] = {24, 32};
    int ch = 16;
    for (int b = 0; b < 3; ++b) {
      std::vector<nn::Conv2d> layers;
      for (int l = 0; l < 2; ++l) {
        layers.emplace_back(s, "patch.block" + std::to_string(b) + ".conv" + std::to_string(l), ch, growth[b], 3, 1, 1,
                            rng);
        ch += growth[b];
      }
      n.blocks.push_back(std::move(layers));
      if (b < 2) {
        n.transitions.emplace_back(s, "patch.transition" + std::to_string(b), ch, trans_out[b], 1, 1, 0, rng);
        ch = trans_out[b];
      }
    }
    n.fc = nn::Linear(s, "patch.fc", ch, data::kNumClasses, rng);
  }
}

Var PatchClassifier::forward(Graph& g, std::span<const Image* const> patches) const {
  const int P = static_cast<int>(patches.size()), S = patch_size_;
  Tensor x({P, 3, S, S});
  const std::size_t plane = static_cast<std::size_t>(S) * S;
  for (int i = 0; i < P; ++i) {
    const Image& im = *patches[i];
    if (im.width != S || im.height != S) throw InvalidArgument("patch classifier: wrong patch size");
    double* dst = x.data() + static_cast<std::size_t>(i) * 3 * plane;
    for (std::size_t k = 0; k < plane; ++k) {
      for (int c = 0; c < 3; ++c) dst[c * plane + k] = (im.pixels[k * 3 + c] / 255.0 - 0.5) / 0.25;
    }
  }
  const Net& n = *net_;
  Var h = g.input(std::move(x));
  if (kind_ == PatchBackbone::vgg_like) {
    h = nn::relu(g, n.convs[0](g, h));
    h = nn::maxpool2x2(g, nn::relu(g, n.convs[1](g, h)));
    h = nn::relu(g, n.convs[2](g, h));
    h = nn::maxpool2x2(g, nn::relu(g, n.convs[3](g, h)));
    h = nn::maxpool2x2(g, nn::relu(g, n.convs[4](g, h)));
  } else {
    h = nn::maxpool2x2(g, nn::relu(g, n.convs[0](g, h)));
    for (std::size_t b = 0; b < n.blocks.size(); ++b) {
      for (const auto& layer : n.blocks[b]) h = nn::concat_channels(g, {h, nn::relu(g, layer(g, h))});
      if (b < n.transitions.size()) h = nn::maxpool2x2(g, nn::relu(g, n.transitions[b](g, h)));
    }
  }
  return nn::softmax_rows(g, n.fc(g, nn::global_avg_pool(g, h)));
}

std::vector<ClassProbs> PatchClassifier::predict(std::span<const Image> patches) const {
  std::vector<ClassProbs> out;
  constexpr std::size_t kChunk = 32;
  for (std::size_t b = 0; b < patches.size(); b += kChunk) {
    std::vector<const Image*> ptrs;
    for (std::size_t i = b; i < std::min(patches.size(), b + kChunk); ++i) ptrs.push_back(&patches[i]);
    Graph g(false);
    const Tensor& p = g.value(forward(g, ptrs));
    for (std::size_t i = 0; i < ptrs.size(); ++i) out.push_back({p[i * 3], p[i * 3 + 1], p[i * 3 + 2]});
  }
  return out;
}

MilModel::MilModel(MILTrainConfig config, std::uint64_t seed)
    : config_(std::move(config)), classifier_(config_.backbone_kind, config_.patch_size, seed) {
  config_.validate();
}

LesionGrade MilModel::classify_lesion(const Image& image, const Box& bbox) const {
  const PatchSet ps = extract_patches(image, bbox, config_.patch_size, config_.stride);
  return grade_from_rows(classifier_.predict(ps.patches));
}

Checkpoint MilModel::to_checkpoint(const std::string& metadata_json) const {
  Checkpoint ck;
  ck.header = kMilCheckpointHeader;
  ck.config_json = to_json(config_);
  ck.metadata_json = metadata_json;
  ck.store_params(classifier_.params());
  return ck;
}

MilModel MilModel::from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.header != kMilCheckpointHeader)
    throw InvalidArgument("not a MIL checkpoint (header '" + ckpt.header + "')");
  MilModel m(mil_config_from_json(ckpt.config_json), 0);
  ckpt.load_params(m.classifier_.params());
  return m;
}

Checkpoint MilTrainResult::checkpoint() const {
  nlohmann::json meta;
  meta["epochs"] = model.config().epochs;
  meta["seed"] = model.config().seed;
  nlohmann::json curve = nlohmann::json::array();
  for (const auto& e : history) curve.push_back({{"stage", e.stage}, {"fine", e.fine}, {"bag", e.bag}, {"total", e.total}});
  meta["loss_curve"] = curve;
  return model.to_checkpoint(meta.dump());
}

namespace {

// One update over the bags in `batch`; returns (L1, L2).
std::pair<double, double> mil_step(PatchClassifier& net, std::span<const Bag* const> batch, double w) {
  std::vector<const Image*> ptrs;
  for (const Bag* b : batch) {
    for (const auto& p : b->patches) ptrs.push_back(&p);
  }
  Graph g(true);
  Var probs = net.forward(g, ptrs);
  const Tensor& pv = g.value(probs);

  std::vector<Bag> views;  // labels only; patches are not needed by the losses
  std::vector<loss::BagPrediction> preds;
  std::vector<int> labels;
  std::vector<double> z;
  std::size_t row = 0;
  for (const Bag* b : batch) {
    Bag v;
    v.fine_labels = b->fine_labels;
    v.bag_label = b->bag_label;
    loss::BagPrediction pr;
    for (std::size_t i = 0; i < b->size(); ++i, ++row) pr.y_hat.push_back({pv[row * 3], pv[row * 3 + 1], pv[row * 3 + 2]});
    pr.z_hat = loss::bag_probability(pr.y_hat);
    labels.push_back(b->bag_label);
    z.push_back(pr.z_hat);
    views.push_back(std::move(v));
    preds.push_back(std::move(pr));
  }
  const double l1 = loss::mil_fine_loss(views, preds);
  const double l2 = loss::mil_bag_loss(labels, z);

  const auto g1 = loss::mil_fine_loss_grad(views, preds);
  const auto gz = loss::mil_bag_loss_grad(labels, z);
  Tensor seed(pv.shape());
  row = 0;
  for (std::size_t bi = 0; bi < views.size(); ++bi) {
    const auto dz = loss::bag_probability_grad(preds[bi].y_hat);
    for (std::size_t i = 0; i < views[bi].size(); ++i, ++row) {
      for (int k = 0; k < 3; ++k) seed[row * 3 + k] = g1[bi][i][k] + w * gz[bi] * dz[i][k];
    }
  }
  const std::pair<Var, Tensor> seeds[] = {{probs, std::move(seed)}};
  g.backward(seeds);
  return {l1, l2};
}

double patch_step(PatchClassifier& net, std::span<const Image* const> patches, std::span<const ClassLabel> labels) {
  Graph g(true);
  Var probs = net.forward(g, patches);
  const Tensor& pv = g.value(probs);
  Tensor seed(pv.shape());
  double total = 0.0;
  const double n = static_cast<double>(patches.size());
  for (std::size_t i = 0; i < patches.size(); ++i) {
    const ClassProbs t = loss::one_hot(labels[i]);
    std::span<const double> p(pv.data() + i * 3, 3);
    total += loss::cls_loss(p, t) / n;
    const auto gr = loss::cls_loss_grad(p, t);
    for (int k = 0; k < 3; ++k) seed[i * 3 + k] = gr[k] / n;
  }
  const std::pair<Var, Tensor> seeds[] = {{probs, std::move(seed)}};
  g.backward(seeds);
  return total;
}

}  // namespace

MilTrainResult train_mil(std::span<const Bag> bags, const MILTrainConfig& config, const MilEpochCallback& cb) {
  config.validate();
  bool pos = false, neg = false;
  for (const auto& b : bags) {
    b.validate();
    if (b.patches.size() != b.size()) throw InvalidArgument("train_mil: bag without patch pixels");
    (b.bag_label ? pos : neg) = true;
  }
  if (!pos || !neg) throw InvalidArgument("train_mil: need at least one positive and one negative bag");

  MilTrainResult result{MilModel(config, config.seed), {}};
  PatchClassifier& net = result.model.classifier();
  nn::OptimizerConfig oc;
  oc.learning_rate = config.learning_rate;
  oc.weight_decay = config.weight_decay;
  std::mt19937_64 rng(0x3b1c0000ULL ^ config.seed);

  if (config.init == MilInit::transfer_from_patch_classifier && config.pretrain_epochs > 0) {
    nn::Optimizer opt(oc);
    std::vector<std::pair<const Image*, ClassLabel>> patches;
    for (const auto& b : bags) {
      for (std::size_t i = 0; i < b.size(); ++i) patches.emplace_back(&b.patches[i], b.fine_labels[i]);
    }
    for (int e = 0; e < config.pretrain_epochs; ++e) {
      for (std::size_t i = patches.size(); i > 1; --i) std::swap(patches[i - 1], patches[rng() % i]);
      double sum = 0.0;
      int steps = 0;
      for (std::size_t s = 0; s < patches.size(); s += config.batch_size) {
        std::vector<const Image*> ptrs;
        std::vector<ClassLabel> labels;
        for (std::size_t i = s; i < std::min(patches.size(), s + config.batch_size); ++i) {
          ptrs.push_back(patches[i].first);
          labels.push_back(patches[i].second);
        }
        sum += patch_step(net, ptrs, labels);
        opt.step(net.params());
        ++steps;
      }
      result.history.push_back({sum / steps, 0.0, sum / steps, "patch_classifier"});
      if (cb) cb(static_cast<int>(result.history.size()) - 1, result.history.back());
    }
  }

  nn::Optimizer opt(oc);
  const std::size_t bags_per_step = static_cast<std::size_t>(config.batch_size / config.bag_size);
  std::vector<const Bag*> order;
  for (const auto& b : bags) order.push_back(&b);
  for (int e = 0; e < config.epochs; ++e) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
    MilEpoch ep{0.0, 0.0, 0.0, "mil"};
    int steps = 0;
    for (std::size_t s = 0; s < order.size(); s += bags_per_step) {
      const std::size_t end = std::min(order.size(), s + bags_per_step);
      const auto [l1, l2] = mil_step(net, std::span<const Bag* const>(order).subspan(s, end - s), config.bag_loss_weight);
      if (!std::isfinite(l1) || !std::isfinite(l2)) throw Error("MIL training diverged at epoch " + std::to_string(e + 1));
      opt.step(net.params());
      ep.fine += l1;
      ep.bag += l2;
      ++steps;
    }
    ep.fine /= steps;
    ep.bag /= steps;
    ep.total = loss::mil_total_loss(ep.fine, ep.bag, config.bag_loss_weight);
    result.history.push_back(ep);
    if (cb) cb(static_cast<int>(result.history.size()) - 1, result.history.back());
  }
  return result;
}

}  // namespace oed::mil
