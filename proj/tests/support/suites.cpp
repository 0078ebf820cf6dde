#include "suites.hpp"

#include <chrono>
#include <cmath>
#include <random>
#include <sstream>
#include <vector>

#include "oed/losses.hpp"
#include "oed/metrics.hpp"
#include "oed/nn/graph.hpp"
#include "oed/nn/ops.hpp"
#include "oed/seg/backbone.hpp"
#include "oed/seg/roi_align.hpp"
#include "oracles.hpp"

namespace oed::testing {

namespace {

using Clock = std::chrono::steady_clock;
using data::ClassLabel;
using Rng = std::mt19937_64;

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

class Recorder {
 public:
  explicit Recorder(SuiteResult& r) : r_(r), start_(Clock::now()) {}
  ~Recorder() { r_.seconds = std::chrono::duration<double>(Clock::now() - start_).count(); }

  // Records |got - want| against `tol`.
  void near(const std::string& what, double got, double want, double tol) {
    const double err = std::fabs(got - want);
    if (!(err <= tol)) fail(what, got, want);
    r_.worst = std::max(r_.worst, std::isfinite(err) ? err : 1e300);
  }
  void ratio(const std::string& what, double err, double tol) {
    if (!(err <= tol)) {
      std::ostringstream os;
      os << what << ": relative error " << err;
      set_failure(os.str());
    }
    r_.worst = std::max(r_.worst, std::isfinite(err) ? err : 1e300);
  }
  void truth(const std::string& what, bool ok) {
    if (!ok) set_failure(what);
  }
  void count() { ++r_.instances; }

 private:
  void fail(const std::string& what, double got, double want) {
    std::ostringstream os;
    os.precision(17);
    os << what << ": got " << got << ", want " << want;
    set_failure(os.str());
  }
  void set_failure(const std::string& msg) {
    if (r_.passed) r_.failure = msg;
    r_.passed = false;
  }
  SuiteResult& r_;
  Clock::time_point start_;
};

std::array<double, 3> random_row(Rng& rng, double floor) {
  std::array<double, 3> r{};
  double s = 0.0;
  for (auto& v : r) {
    v = uniform(rng, floor, 1.0);
    s += v;
  }
  for (auto& v : r) v /= s;
  return r;
}

ClassLabel random_label(Rng& rng) { return data::label_from_index(uniform_int(rng, 0, 2)); }

loss::Bag make_bag(const std::vector<ClassLabel>& fine) {
  loss::Bag b;
  b.fine_labels = fine;
  b.bag_label = loss::coarse_label(fine);
  return b;
}

// Random difference vector for smooth-L1 terms that stays clear of the |x| = 1 kink,
// where the derivative is discontinuous and central differences are meaningless.
double away_from_kink(Rng& rng) {
  for (;;) {
    const double x = uniform(rng, -3.0, 3.0);
    if (std::fabs(std::fabs(x) - 1.0) > 1e-2) return x;
  }
}

}  // namespace

SuiteResult loss_oracle_suite(std::uint64_t seed, int instances) {
  SuiteResult r;
  Recorder rec(r);
  Rng rng(seed);
  const double tol = kLossOracleTol;

  for (int i = 0; i < instances; ++i) {
    rec.count();
    const double x = uniform(rng, -4.0, 4.0);
    rec.near("smooth_l1", loss::smooth_l1(x), ref_smooth_l1(x), tol);

    const int n = uniform_int(rng, 1, 8);
    loss::BoxRegressionBatch b;
    std::vector<std::array<double, 4>> t, ts;
    for (int k = 0; k < n; ++k) {
      std::array<double, 4> a{}, c{};
      for (int j = 0; j < 4; ++j) {
        a[j] = uniform(rng, -3, 3);
        c[j] = uniform(rng, -3, 3);
      }
      t.push_back(a);
      ts.push_back(c);
      b.p_star.push_back(uniform_int(rng, 0, 1));
    }
    b.t = t;
    b.t_star = ts;
    b.lambda = uniform(rng, 0.1, 10.0);
    b.n_box = uniform_int(rng, 1, 256);
    rec.near("box_loss", loss::box_loss(b), ref_box_loss(t, ts, b.p_star, b.lambda, b.n_box), tol);

    const int h = uniform_int(rng, 1, 12), w = uniform_int(rng, 1, 12);
    std::vector<double> y(static_cast<std::size_t>(h) * w), p(y.size());
    for (std::size_t k = 0; k < y.size(); ++k) {
      y[k] = uniform_int(rng, 0, 1);
      p[k] = uniform(rng, 0.0, 1.0);
    }
    const loss::MaskPair pair{y, p, h, w};
    rec.near("dice_mask_loss", loss::dice_mask_loss(pair), ref_dice_loss(y, p), tol);
    rec.near("bce_mask_loss", loss::bce_mask_loss(pair), ref_bce_loss(y, p), tol);

    const auto probs = random_row(rng, 1e-6);
    std::vector<double> pv(probs.begin(), probs.end()), target(3, 0.0);
    target[uniform_int(rng, 0, 2)] = 1.0;
    rec.near("cls_loss", loss::cls_loss(pv, target), ref_cls_loss(pv, target), tol);

    const int n_bags = uniform_int(rng, 1, 5);
    std::vector<loss::Bag> bags;
    std::vector<loss::BagPrediction> preds;
    std::vector<std::vector<std::array<double, 3>>> rows;
    std::vector<std::vector<int>> labels;
    std::vector<int> bag_labels;
    std::vector<double> z;
    for (int k = 0; k < n_bags; ++k) {
      const int size = uniform_int(rng, 1, 6);
      std::vector<ClassLabel> fine;
      std::vector<int> li;
      loss::BagPrediction bp;
      std::vector<std::array<double, 3>> rr;
      for (int s = 0; s < size; ++s) {
        fine.push_back(random_label(rng));
        li.push_back(data::index_of(fine.back()));
        rr.push_back(random_row(rng, 1e-4));
        bp.y_hat.push_back(rr.back());
      }
      bp.z_hat = loss::bag_probability(bp.y_hat);
      rec.near("bag_probability", bp.z_hat, ref_bag_probability(rr), tol);
      bags.push_back(make_bag(fine));
      bag_labels.push_back(bags.back().bag_label);
      z.push_back(bp.z_hat);
      preds.push_back(bp);
      rows.push_back(rr);
      labels.push_back(li);
    }
    rec.near("mil_fine_loss", loss::mil_fine_loss(bags, preds), ref_fine_loss(rows, labels), tol);
    rec.near("mil_bag_loss", loss::mil_bag_loss(bag_labels, z), ref_bag_loss(bag_labels, z), tol);
  }

  // Hand examples.
  const double hx = kHandExampleTol;
  rec.near("smooth_l1(0)", loss::smooth_l1(0.0), 0.0, hx);
  rec.near("smooth_l1(1)", loss::smooth_l1(1.0), 0.5, hx);
  rec.near("smooth_l1(1-)", loss::smooth_l1(std::nextafter(1.0, 0.0)), 0.5, hx);
  rec.near("smooth_l1(2)", loss::smooth_l1(2.0), 1.5, hx);
  rec.near("smooth_l1(-0.5)", loss::smooth_l1(-0.5), 0.125, hx);
  {
    loss::BoxRegressionBatch b;
    b.t = {{0.3, -1.2, 2.0, 0.1}};
    b.t_star = b.t;
    b.p_star = {1};
    rec.near("box_loss(t == t*)", loss::box_loss(b), 0.0, hx);
    b.t_star = {{1.0, 1.0, 1.0, 1.0}};
    b.p_star = {0};
    rec.near("box_loss(no positives)", loss::box_loss(b), 0.0, hx);
    b.t = {{2.0, 0.0, 0.0, 0.0}};
    b.t_star = {{0.0, 0.0, 0.0, 0.0}};
    b.p_star = {1};
    rec.near("box_loss(2,0,0,0)", loss::box_loss(b), 1.5, hx);
  }
  {
    const std::vector<double> ones(4, 1.0), zeros(4, 0.0);
    rec.near("dice(ones, ones)", loss::dice_mask_loss({ones, ones, 2, 2}), 0.0, hx);
    rec.near("dice(zeros, zeros)", loss::dice_mask_loss({zeros, zeros, 2, 2}), 0.0, hx);
    rec.near("dice(ones, zeros)", loss::dice_mask_loss({ones, zeros, 2, 2}), 0.8, hx);
  }
  {
    const std::vector<double> sure{0.0, 1.0, 0.0}, t1{0.0, 1.0, 0.0};
    rec.near("cls_loss(certain)", loss::cls_loss(sure, t1), 0.0, hx);
    const std::vector<double> uni{1.0 / 3, 1.0 / 3, 1.0 / 3};
    for (int k = 0; k < 3; ++k) {
      std::vector<double> t(3, 0.0);
      t[k] = 1.0;
      rec.near("cls_loss(uniform)", loss::cls_loss(uni, t), std::log(3.0), hx);
    }
    const std::vector<double> half{0.5, 0.25, 0.25}, t0{1.0, 0.0, 0.0};
    rec.near("cls_loss(0.5)", loss::cls_loss(half, t0), std::log(2.0), hx);
  }
  rec.near("seg_total(0,0,0)", loss::seg_total_loss(0, 0, 0), 0.0, hx);
  rec.near("seg_total(.1,.2,.3)", loss::seg_total_loss(0.1, 0.2, 0.3), 0.6, hx);
  {
    std::vector<loss::Bag> bags{make_bag({ClassLabel::dysplastic})};
    std::vector<loss::BagPrediction> p(1);
    p[0].y_hat = {{0.0, 1.0, 0.0}};
    p[0].z_hat = 1.0;
    rec.near("mil_fine(perfect)", loss::mil_fine_loss(bags, p), 0.0, hx);
    p[0].y_hat = {{0.25, 0.5, 0.25}};
    rec.near("mil_fine(B=1, 0.5)", loss::mil_fine_loss(bags, p), std::log(2.0), hx);
    bags = {make_bag({ClassLabel::cancerous, ClassLabel::cancerous})};
    p[0].y_hat = {{0.25, 0.25, 0.5}, {0.5, 0.0, 0.5}};
    rec.near("mil_fine(B=2, 0.5)", loss::mil_fine_loss(bags, p), 2.0 * std::log(2.0), hx);
  }
  {
    const std::vector<loss::ClassProbs> nd(3, {1.0, 0.0, 0.0}), ca(3, {0.0, 0.0, 1.0}), mix(4, {0.2, 0.5, 0.3});
    rec.near("bag_probability(non-dysplastic)", loss::bag_probability(nd), 0.0, hx);
    rec.near("bag_probability(cancerous)", loss::bag_probability(ca), 1.0, hx);
    rec.near("bag_probability(0.2,0.5,0.3)", loss::bag_probability(mix), 0.8, hx);
  }
  {
    const std::vector<int> y1{1}, y10{1, 0};
    const std::vector<double> z1{1.0}, zh{0.5}, zhh{0.5, 0.5};
    rec.near("mil_bag(1, 1)", loss::mil_bag_loss(y1, z1), 0.0, hx);
    rec.near("mil_bag(1, 0.5)", loss::mil_bag_loss(y1, zh), std::log(2.0), hx);
    rec.near("mil_bag(two bags)", loss::mil_bag_loss(y10, zhh), std::log(2.0), hx);
  }
  rec.near("mil_total(0,0,1)", loss::mil_total_loss(0, 0, 1), 0.0, hx);
  rec.near("mil_total(.5,.5,1)", loss::mil_total_loss(0.5, 0.5, 1), 1.0, hx);
  rec.near("mil_total(.5,.5,2)", loss::mil_total_loss(0.5, 0.5, 2), 1.5, hx);
  return r;
}

SuiteResult gradient_suite(std::uint64_t seed, int instances) {
  SuiteResult r;
  Recorder rec(r);
  Rng rng(seed);
  const double h = kFdStep, tol = kGradientTol;

  for (int i = 0; i < instances; ++i) {
    rec.count();
    {
      const double x = away_from_kink(rng);
      const auto fd = central_difference([](const std::vector<double>& v) { return loss::smooth_l1(v[0]); }, {x}, h);
      rec.ratio("smooth_l1", relative_error({loss::smooth_l1_grad(x)}, fd), tol);
    }
    {
      const int n = uniform_int(rng, 1, 6);
      loss::BoxRegressionBatch b;
      for (int k = 0; k < n; ++k) {
        loss::Box4 t{}, ts{};
        for (int j = 0; j < 4; ++j) {
          ts[j] = uniform(rng, -2, 2);
          t[j] = ts[j] + away_from_kink(rng);
        }
        b.t.push_back(t);
        b.t_star.push_back(ts);
        b.p_star.push_back(uniform_int(rng, 0, 1));
      }
      b.lambda = uniform(rng, 0.5, 5.0);
      b.n_box = uniform_int(rng, 1, 16);
      std::vector<double> flat;
      for (const auto& t : b.t) flat.insert(flat.end(), t.begin(), t.end());
      auto f = [&](const std::vector<double>& v) {
        loss::BoxRegressionBatch c = b;
        for (int k = 0; k < n; ++k)
          for (int j = 0; j < 4; ++j) c.t[k][j] = v[k * 4 + j];
        return loss::box_loss(c);
      };
      std::vector<double> an;
      for (const auto& g : loss::box_loss_grad(b)) an.insert(an.end(), g.begin(), g.end());
      rec.ratio("box_loss", relative_error(an, central_difference(f, flat, h)), tol);
    }
    {
      const int hh = uniform_int(rng, 1, 6), ww = uniform_int(rng, 1, 6);
      std::vector<double> y(static_cast<std::size_t>(hh) * ww), p(y.size());
      for (std::size_t k = 0; k < y.size(); ++k) {
        y[k] = uniform_int(rng, 0, 1);
        p[k] = uniform(rng, 0.02, 0.98);
      }
      auto dice = [&](const std::vector<double>& v) { return loss::dice_mask_loss({y, v, hh, ww}); };
      rec.ratio("dice_mask_loss", relative_error(loss::dice_mask_loss_grad({y, p, hh, ww}), central_difference(dice, p, h)),
                tol);
      auto bce = [&](const std::vector<double>& v) { return loss::bce_mask_loss({y, v, hh, ww}); };
      rec.ratio("bce_mask_loss", relative_error(loss::bce_mask_loss_grad({y, p, hh, ww}), central_difference(bce, p, h)),
                tol);
    }
    {
      const auto row = random_row(rng, 0.05);
      std::vector<double> p(row.begin(), row.end()), t(3, 0.0);
      t[uniform_int(rng, 0, 2)] = 1.0;
      auto f = [&](const std::vector<double>& v) { return loss::cls_loss(v, t); };
      rec.ratio("cls_loss", relative_error(loss::cls_loss_grad(p, t), central_difference(f, p, h)), tol);
    }
    {
      const int n_bags = uniform_int(rng, 1, 4);
      std::vector<loss::Bag> bags;
      std::vector<loss::BagPrediction> preds;
      std::vector<double> flat;
      for (int k = 0; k < n_bags; ++k) {
        const int size = uniform_int(rng, 1, 5);
        std::vector<ClassLabel> fine;
        loss::BagPrediction bp;
        for (int s = 0; s < size; ++s) {
          fine.push_back(random_label(rng));
          bp.y_hat.push_back(random_row(rng, 0.05));
          flat.insert(flat.end(), bp.y_hat.back().begin(), bp.y_hat.back().end());
        }
        bp.z_hat = loss::bag_probability(bp.y_hat);
        bags.push_back(make_bag(fine));
        preds.push_back(bp);
      }
      auto unflatten = [&](const std::vector<double>& v) {
        std::vector<loss::BagPrediction> out = preds;
        std::size_t pos = 0;
        for (auto& bp : out)
          for (auto& row : bp.y_hat)
            for (auto& c : row) c = v[pos++];
        return out;
      };
      auto fine = [&](const std::vector<double>& v) { return loss::mil_fine_loss(bags, unflatten(v)); };
      std::vector<double> an;
      for (const auto& bag : loss::mil_fine_loss_grad(bags, preds))
        for (const auto& row : bag) an.insert(an.end(), row.begin(), row.end());
      rec.ratio("mil_fine_loss", relative_error(an, central_difference(fine, flat, h)), tol);

      // bag_probability on the first bag's rows
      const auto& rows = preds[0].y_hat;
      std::vector<double> rf;
      for (const auto& row : rows) rf.insert(rf.end(), row.begin(), row.end());
      auto zf = [&](const std::vector<double>& v) {
        std::vector<loss::ClassProbs> rr(rows.size());
        for (std::size_t b = 0; b < rr.size(); ++b)
          for (int c = 0; c < 3; ++c) rr[b][c] = v[b * 3 + c];
        return loss::bag_probability(rr);
      };
      std::vector<double> zg;
      for (const auto& row : loss::bag_probability_grad(rows)) zg.insert(zg.end(), row.begin(), row.end());
      rec.ratio("bag_probability", relative_error(zg, central_difference(zf, rf, h)), tol);
    }
    {
      const int n = uniform_int(rng, 1, 8);
      std::vector<int> y(n);
      std::vector<double> z(n);
      for (int k = 0; k < n; ++k) {
        y[k] = uniform_int(rng, 0, 1);
        z[k] = uniform(rng, 0.03, 0.97);
      }
      auto f = [&](const std::vector<double>& v) { return loss::mil_bag_loss(y, v); };
      rec.ratio("mil_bag_loss", relative_error(loss::mil_bag_loss_grad(y, z), central_difference(f, z, h)), tol);
    }
    {
      // roi_align: gradient of sum(w * pooled) with respect to the feature map.
      const int C = uniform_int(rng, 1, 3), H = uniform_int(rng, 3, 9), W = uniform_int(rng, 3, 9);
      const double scales[] = {1.0, 0.5, 0.25};
      const double sc = scales[uniform_int(rng, 0, 2)];
      const int out = uniform_int(rng, 1, 5), ratio = uniform_int(rng, 1, 3);
      const int R = uniform_int(rng, 1, 3);
      std::vector<data::Box> boxes;
      for (int k = 0; k < R; ++k) {
        const double iw = W / sc, ih = H / sc;
        const double x0 = uniform(rng, -0.1 * iw, 0.8 * iw), y0 = uniform(rng, -0.1 * ih, 0.8 * ih);
        boxes.push_back({x0, y0, x0 + uniform(rng, 0.5, 0.6 * iw), y0 + uniform(rng, 0.5, 0.6 * ih)});
      }
      nn::Parameter feat{"f", nn::Tensor({1, C, H, W}), nn::Tensor({1, C, H, W})};
      for (auto& v : feat.value.values()) v = uniform(rng, -1, 1);
      nn::Tensor wts({R, C, out, out});
      for (auto& v : wts.values()) v = uniform(rng, -1, 1);
      auto pooled_sum = [&](const std::vector<double>& v) {
        nn::Parameter p{"f", nn::Tensor({1, C, H, W}, v), {}};
        nn::Graph g(false);
        const nn::Var o = seg::roi_align(g, g.param(p), boxes, out, sc, ratio);
        double s = 0.0;
        for (std::size_t k = 0; k < wts.numel(); ++k) s += wts[k] * g.value(o)[k];
        return s;
      };
      nn::Graph g;
      const nn::Var o = seg::roi_align(g, g.param(feat), boxes, out, sc, ratio);
      std::vector<std::pair<nn::Var, nn::Tensor>> seeds{{o, wts}};
      g.backward(seeds);
      rec.ratio("roi_align", relative_error(feat.grad.to_vector(), central_difference(pooled_sum, feat.value.to_vector(), h)),
                tol);
    }
  }
  return r;
}

SuiteResult metric_oracle_suite(std::uint64_t seed, int instances, int identity_pairs) {
  SuiteResult r;
  Recorder rec(r);
  Rng rng(seed);
  const double tol = kMetricOracleTol;

  auto random_box = [&](int extent) {
    const int x0 = uniform_int(rng, 0, extent - 1), y0 = uniform_int(rng, 0, extent - 1);
    return std::array<int, 4>{x0, y0, uniform_int(rng, x0 + 1, extent), uniform_int(rng, y0 + 1, extent)};
  };
  auto to_box = [](const std::array<int, 4>& b) { return data::Box{double(b[0]), double(b[1]), double(b[2]), double(b[3])}; };
  auto annotation = [](const std::array<int, 4>& b) {
    return data::LesionAnnotation("img", {{double(b[0]), double(b[1])}, {double(b[2]), double(b[1])},
                                          {double(b[2]), double(b[3])}, {double(b[0]), double(b[3])}},
                                  data::ClassLabel::dysplastic);
  };

  for (int i = 0; i < instances; ++i) {
    rec.count();
    // masks up to 8x8
    const int h = uniform_int(rng, 1, 8), w = uniform_int(rng, 1, 8);
    data::BinaryMask mx(w, h), my(w, h);
    std::vector<int> vx(static_cast<std::size_t>(h) * w), vy(vx.size());
    const double fill = uniform(rng, 0.0, 1.0);
    for (std::size_t k = 0; k < vx.size(); ++k) {
      vx[k] = mx.bits[k] = uniform(rng, 0, 1) < fill;
      vy[k] = my.bits[k] = uniform(rng, 0, 1) < fill;
    }
    rec.near("mask_dice", metrics::mask_dice(mx, my), ref_mask_dice(vx, vy), tol);

    const auto a = random_box(8), b = random_box(8);
    rec.near("box_iou", metrics::box_iou(to_box(a), to_box(b)), ref_cell_iou(a, b), tol);

    // detection matching on one or more images with up to 4 boxes each
    const int n_images = uniform_int(rng, 1, 3);
    const double thr = std::vector<double>{0.1, 0.25, 0.5, 0.75}[uniform_int(rng, 0, 3)];
    std::vector<metrics::ImageResult> images;
    int tp = 0, fp = 0, fn = 0, gts = 0;
    for (int m = 0; m < n_images; ++m) {
      std::vector<std::array<int, 4>> pb, gb;
      std::vector<double> sc;
      const int np = uniform_int(rng, 0, 4), ng = uniform_int(rng, 0, 4);
      for (int k = 0; k < ng; ++k) gb.push_back(random_box(8));
      for (int k = 0; k < np; ++k) {
        // predictions near a ground truth half the time
        if (ng > 0 && uniform_int(rng, 0, 1)) {
          auto g = gb[uniform_int(rng, 0, ng - 1)];
          g[2] = std::min(8, g[2] + uniform_int(rng, 0, 1));
          g[0] = std::max(0, std::min(g[2] - 1, g[0] + uniform_int(rng, -1, 1)));
          pb.push_back(g);
        } else {
          pb.push_back(random_box(8));
        }
        // coarse scores so ties occur
        sc.push_back(uniform_int(rng, 0, 4) / 4.0);
      }
      const RefMatch ref = ref_greedy_match(pb, sc, gb, thr);
      std::vector<data::Box> pbox, gbox;
      for (const auto& x : pb) pbox.push_back(to_box(x));
      for (const auto& x : gb) gbox.push_back(to_box(x));
      const metrics::Matching got = metrics::match_detections(pbox, sc, gbox, thr);
      rec.truth("match_detections pairs", got.pairs == ref.pairs);
      rec.truth("match_detections fp/fn", got.fp() == ref.fp && got.fn() == ref.fn);
      rec.truth("greedy never beats optimal", static_cast<int>(ref.pairs.size()) <= ref_optimal_matches(pb, gb, thr));
      tp += static_cast<int>(ref.pairs.size());
      fp += ref.fp;
      fn += ref.fn;
      gts += ng;

      metrics::ImageResult im{"img", 8, 8, {}, {}};
      for (std::size_t k = 0; k < pb.size(); ++k) {
        data::Detection d;
        d.bbox = to_box(pb[k]);
        d.score = sc[k];
        im.predictions.push_back(d);
      }
      for (const auto& g : gb) im.truth.push_back(annotation(g));
      images.push_back(std::move(im));
    }
    const double f1_ref = (2 * tp + fp + fn) == 0 ? 1.0 : 2.0 * tp / (2 * tp + fp + fn);
    rec.near("detection_f1", metrics::detection_f1(images, thr), f1_ref, tol);
    if (gts > 0) rec.near("overlap_accuracy", metrics::overlap_accuracy(images, thr), double(tp) / gts, tol);

    // classification with up to 50 labels
    const int n = uniform_int(rng, 1, 50);
    std::vector<ClassLabel> pl, tl;
    std::vector<int> pi, ti;
    for (int k = 0; k < n; ++k) {
      ti.push_back(uniform_int(rng, 0, 2));
      pi.push_back(uniform_int(rng, 0, 3) == 0 ? uniform_int(rng, 0, 2) : ti.back());
      pl.push_back(data::label_from_index(pi.back()));
      tl.push_back(data::label_from_index(ti.back()));
    }
    const auto rep = metrics::classification_report(pl, tl);
    const auto ref = ref_classification(pi, ti);
    for (int c = 0; c < 3; ++c) {
      rec.near("classification f1", rep.f1[c], ref.f1[c], tol);
      rec.near("classification sensitivity", rep.sensitivity[c], ref.sensitivity[c], tol);
      rec.near("classification specificity", rep.specificity[c], ref.specificity[c], tol);
      rec.truth("classification support", rep.support[c] == ref.support[c]);
    }
    rec.near("classification macro f1", rep.macro_f1, ref.macro_f1, tol);
    rec.truth("confusion matrix", rep.confusion == ref.confusion);
  }

  for (int i = 0; i < identity_pairs; ++i) {
    const int h = uniform_int(rng, 1, 16), w = uniform_int(rng, 1, 16);
    data::BinaryMask mx(w, h), my(w, h);
    std::vector<int> vx(static_cast<std::size_t>(h) * w), vy(vx.size());
    const double fill = uniform(rng, 0.05, 0.9);
    for (std::size_t k = 0; k < vx.size(); ++k) {
      vx[k] = mx.bits[k] = uniform(rng, 0, 1) < fill;
      vy[k] = my.bits[k] = uniform(rng, 0, 1) < fill;
    }
    // nonempty pairs only
    mx.bits[uniform_int(rng, 0, static_cast<int>(vx.size()) - 1)] = 1;
    for (std::size_t k = 0; k < vx.size(); ++k) vx[k] = mx.bits[k];
    my.bits[uniform_int(rng, 0, static_cast<int>(vy.size()) - 1)] = 1;
    for (std::size_t k = 0; k < vy.size(); ++k) vy[k] = my.bits[k];
    const double iou = ref_mask_iou(vx, vy);
    rec.near("dice = 2 iou / (1 + iou)", metrics::mask_dice(mx, my), 2.0 * iou / (1.0 + iou), tol);
    rec.near("mask_dice symmetric", metrics::mask_dice(mx, my), metrics::mask_dice(my, mx), 0.0);
  }
  return r;
}

SuiteResult attention_degeneracy_suite(std::uint64_t seed, int inputs) {
  SuiteResult r;
  Recorder rec(r);
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  for (int i = 0; i < inputs; ++i) {
    rec.count();
    const int h = uniform_int(rng, 2, 6), w = uniform_int(rng, 2, 6);
    const int heads = uniform_int(rng, 1, 3), d = 2 * uniform_int(rng, 1, 3);
    const int C = heads * d, T = h * w;
    nn::Tensor qkv({T, 3 * C});
    for (auto& v : qkv.values()) v = normal(rng);

    nn::Graph g(false);
    const auto windows = nn::make_windows(h, w, std::max(h, w));
    rec.truth("one window covers the grid", windows.size() == 1 && static_cast<int>(windows[0].size()) == T);
    const nn::Var out = nn::windowed_attention(g, g.input(qkv), heads, windows);
    const auto ref = ref_global_attention(qkv.to_vector(), T, C, heads);
    double worst = 0.0;
    for (std::size_t k = 0; k < ref.size(); ++k) worst = std::max(worst, std::fabs(g.value(out)[k] - ref[k]));
    rec.near("windowed vs global attention", worst, 0.0, kDegeneracyTol);

    // Full transformer block: a grid-sized window against the explicit all-token window.
    nn::ParamStore store;
    Rng init(seed + static_cast<std::uint64_t>(i));
    const seg::WindowedAttentionBlock block(store, "blk", C, heads, 2, init);
    nn::Tensor tokens({T, C});
    for (auto& v : tokens.values()) v = normal(rng);
    std::vector<int> all(T);
    for (int t = 0; t < T; ++t) all[t] = t;
    const nn::Var a = block(g, g.input(tokens), windows);
    const nn::Var b = block(g, g.input(tokens), {all});
    worst = 0.0;
    for (std::size_t k = 0; k < tokens.numel(); ++k) worst = std::max(worst, std::fabs(g.value(a)[k] - g.value(b)[k]));
    rec.near("windowed block vs global block", worst, 0.0, kDegeneracyTol);
  }
  return r;
}

}  // namespace oed::testing
