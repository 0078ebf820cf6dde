#include "oed/seg/train.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "json_config.hpp"

namespace oed::seg {

void TrainConfig::validate() const {
  if (!(learning_rate > 0)) throw InvalidArgument("train.learning_rate must be > 0");
  if (!(weight_decay >= 0)) throw InvalidArgument("train.weight_decay must be >= 0");
  if (epochs < 1) throw InvalidArgument("train.epochs must be >= 1");
  if (batch_size < 1) throw InvalidArgument("train.batch_size must be >= 1");
  if (warmup_steps < 0) throw InvalidArgument("train.warmup_steps must be >= 0");
  augmentation.validate();
}

namespace detail_json {

nlohmann::json value(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"weight_decay", c.weight_decay},
          {"epochs", c.epochs},               {"seed", c.seed},
          {"batch_size", c.batch_size},       {"warmup_steps", c.warmup_steps},
          {"optimizer", detail::to_json_value(c.optimizer)},
          {"augmentation", detail::to_json_value(c.augmentation)}};
}

}  // namespace detail_json

std::string to_json(const TrainConfig& config) { return detail_json::value(config).dump(); }

TrainConfig train_config_from_json(std::string_view text) {
  TrainConfig c;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError("<root>", e.what());
  }
  detail::read(j, c, "");
  return c;
}

double lr_schedule(long step, long total_steps, int warmup_steps) {
  const double warm = warmup_steps > 0 ? std::min(1.0, (step + 1.0) / warmup_steps) : 1.0;
  const double t = total_steps > 1 ? static_cast<double>(step) / (total_steps - 1) : 0.0;
  const double cosine = 0.05 + 0.95 * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
  return warm * cosine;
}

namespace {

nlohmann::json breakdown_json(const LossBreakdown& b) {
  return {{"cls", b.cls},
          {"box", b.box},
          {"mask", b.mask},
          {"rpn_objectness", b.rpn_objectness},
          {"rpn_box", b.rpn_box},
          {"head_total", b.head_total()},
          {"total", b.total()}};
}

}  // namespace

Checkpoint SegTrainResult::checkpoint(const TrainConfig& train) const {
  nlohmann::json meta;
  meta["epochs"] = train.epochs;
  meta["seed"] = train.seed;
  meta["train"] = detail_json::value(train);
  nlohmann::json curve = nlohmann::json::array();
  for (const auto& h : history) curve.push_back(breakdown_json(h));
  meta["loss_curve"] = curve;
  return model.to_checkpoint(meta.dump());
}

SegTrainResult train_seg(const std::vector<preprocess::Sample>& train_set, const SegModelConfig& model_config,
                         const TrainConfig& train, const EpochCallback& on_epoch) {
  train.validate();
  model_config.validate();
  if (train_set.empty()) throw InvalidArgument("train_seg: empty train split");

  SegTrainResult result{SegModel(model_config, train.seed), {}};
  SegModel& model = result.model;
  nn::OptimizerConfig oc = train.optimizer;
  oc.learning_rate = train.learning_rate;
  oc.weight_decay = train.weight_decay;
  nn::Optimizer opt(oc);

  preprocess::AugmentationConfig aug = train.augmentation;
  aug.seed ^= train.seed;
  std::mt19937_64 order_rng(0x5eed0000ULL ^ train.seed);
  std::mt19937_64 sample_rng(0xa11c0000ULL ^ train.seed);

  const int n = static_cast<int>(train_set.size());
  const long steps_per_epoch = (n + train.batch_size - 1) / train.batch_size;
  const long total = steps_per_epoch * train.epochs;
  long step = 0;
  model.params().zero_grad();

  for (int epoch = 0; epoch < train.epochs; ++epoch) {
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    for (int i = n - 1; i > 0; --i) std::swap(order[i], order[order_rng() % (i + 1)]);

    LossBreakdown sum;
    for (int b = 0; b < n; b += train.batch_size) {
      const int e = std::min(n, b + train.batch_size);
      for (int k = b; k < e; ++k) {
        const int idx = order[k];
        const std::uint64_t draw = (static_cast<std::uint64_t>(epoch) << 32) | static_cast<std::uint32_t>(idx);
        const preprocess::Sample s = preprocess::augment(train_set[idx], aug, draw);
        const LossBreakdown l = model.accumulate_gradients(s, sample_rng, 1.0 / (e - b));
        if (!std::isfinite(l.total())) {
          std::ostringstream msg;
          msg << "training diverged at epoch " << epoch + 1 << ", sample " << idx << ": cls=" << l.cls
              << " box=" << l.box << " mask=" << l.mask << " rpn_objectness=" << l.rpn_objectness
              << " rpn_box=" << l.rpn_box;
          throw TrainingDiverged(msg.str());
        }
        sum += l;
      }
      opt.step(model.params(), lr_schedule(step++, total, train.warmup_steps));
    }
    result.history.push_back(sum.scaled(1.0 / n));
    if (on_epoch) on_epoch(epoch, result.history.back());
  }
  return result;
}

SegTrainResult train_seg(const data::DatasetManifest& manifest, const SegModelConfig& model, const TrainConfig& train,
                         const EpochCallback& on_epoch) {
  const auto samples = preprocess::load_samples(manifest, data::Split::train);
  if (samples.empty()) throw InvalidArgument("train_seg: manifest has an empty train split");
  return train_seg(samples, model, train, on_epoch);
}

}  // namespace oed::seg
