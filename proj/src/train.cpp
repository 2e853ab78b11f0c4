#include "ove6d/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "ove6d/error.hpp"
#include "ove6d/nn/adam.hpp"
#include "ove6d/parallel.hpp"
#include "ove6d/preprocess.hpp"

namespace ove6d {

using nlohmann::json;
using nn::Tensor;

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("train.epochs must be >= 0");
  if (steps_per_epoch < 1) throw ConfigError("train.steps_per_epoch must be >= 1");
  if (objects_per_batch < 1) throw ConfigError("train.objects_per_batch must be >= 1");
  if (anchors_per_object < 1) throw ConfigError("train.anchors_per_object must be >= 1");
  if (shard_anchors < 1 || anchors_per_object % shard_anchors != 0)
    throw ConfigError("train.shard_anchors must divide train.anchors_per_object");
  if (!(lr_max > 0 && lr_min > 0 && lr_min <= lr_max)) throw ConfigError("train learning rates must satisfy 0 < lr_min <= lr_max");
  if (weight_decay < 0) throw ConfigError("train.weight_decay must be >= 0");
  if (!(augment_fraction >= 0 && augment_fraction <= 1)) throw ConfigError("train.augment_fraction must be in [0, 1]");
  if (!(f_base > 0)) throw ConfigError("train.f_base must be positive");
  augment.validate();
  network.validate();
}

json TrainConfig::to_json() const {
  return {{"epochs", epochs},
          {"steps_per_epoch", steps_per_epoch},
          {"objects_per_batch", objects_per_batch},
          {"anchors_per_object", anchors_per_object},
          {"shard_anchors", shard_anchors},
          {"lr_max", lr_max},
          {"lr_min", lr_min},
          {"weight_decay", weight_decay},
          {"augment_fraction", augment_fraction},
          {"f_base", f_base},
          {"augment", augment.to_json()},
          {"network", network.to_json()},
          {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  TrainConfig c;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    try {
      if (k == "epochs") c.epochs = it->get<int>();
      else if (k == "steps_per_epoch") c.steps_per_epoch = it->get<int>();
      else if (k == "objects_per_batch") c.objects_per_batch = it->get<int>();
      else if (k == "anchors_per_object") c.anchors_per_object = it->get<int>();
      else if (k == "shard_anchors") c.shard_anchors = it->get<int>();
      else if (k == "lr_max") c.lr_max = it->get<double>();
      else if (k == "lr_min") c.lr_min = it->get<double>();
      else if (k == "weight_decay") c.weight_decay = it->get<double>();
      else if (k == "augment_fraction") c.augment_fraction = it->get<double>();
      else if (k == "f_base") c.f_base = it->get<double>();
      else if (k == "augment") c.augment = AugmentConfig::from_json(*it);
      else if (k == "network") c.network = NetworkConfig::from_json(*it);
      else if (k == "seed") c.seed = it->get<std::uint64_t>();
      else throw ConfigError("unknown train key '" + k + "'");
    } catch (const json::exception& e) {
      throw ConfigError("train." + k + ": " + e.what());
    }
  }
  c.validate();
  return c;
}

PreparedTriplet prepare_triplet(const TrainingTriplet& t, double diameter, int size, bool augment_views,
                                const AugmentConfig& aug, std::uint64_t seed) {
  PreparedTriplet p;
  const Crop anchor = preprocess(t.v, mask_from_depth(t.v), diameter, size);
  p.v = anchor.normalized;
  p.v_depth = depth_relief(anchor.depth);
  p.theta_rad = deg2rad(t.theta_deg);
  auto view = [&](const DepthFrame& f, std::uint64_t s) {
    if (augment_views) {
      AugmentConfig a = aug;
      a.noise_scale_mm = diameter;
      const DepthFrame g = augment(f, a, s);
      const MaskFrame m = mask_from_depth(g);
      if (m.count() >= static_cast<std::size_t>(kMinMaskPixels)) return preprocess(g, m, diameter, size).normalized;
    }
    return preprocess(f, mask_from_depth(f), diameter, size).normalized;
  };
  const CounterRng rng(seed, CounterRng::hash("prepare"));
  p.v_theta = view(t.v_theta, rng.derive(1).next_u64());
  p.v_gamma = view(t.v_gamma, rng.derive(2).next_u64());
  return p;
}

TripletBatch<float> make_batch(const std::vector<const PreparedTriplet*>& items, int size) {
  const int b = static_cast<int>(items.size());
  const std::size_t px = static_cast<std::size_t>(size) * size;
  TripletBatch<float> batch;
  batch.v = Tensor<float>({b, 1, size, size});
  batch.v_theta = Tensor<float>({b, 1, size, size});
  batch.v_gamma = Tensor<float>({b, 1, size, size});
  batch.v_depth = Tensor<float>({b, 1, size, size});
  batch.theta = Tensor<float>({b, 2});
  for (int i = 0; i < b; ++i) {
    const auto& t = *items[static_cast<std::size_t>(i)];
    std::copy(t.v.begin(), t.v.end(), batch.v.data() + i * px);
    std::copy(t.v_theta.begin(), t.v_theta.end(), batch.v_theta.data() + i * px);
    std::copy(t.v_gamma.begin(), t.v_gamma.end(), batch.v_gamma.data() + i * px);
    std::copy(t.v_depth.begin(), t.v_depth.end(), batch.v_depth.data() + i * px);
    batch.theta[2 * i] = static_cast<float>(std::cos(t.theta_rad));
    batch.theta[2 * i + 1] = static_cast<float>(std::sin(t.theta_rad));
  }
  return batch;
}

namespace {

struct ShardResult {
  std::vector<Tensor<float>> grads;
  std::vector<std::vector<double>> mean, var;
  LossSums sums;
};

}  // namespace

TrainResult train(const std::vector<TrainObject>& objects, const TrainConfig& cfg,
                  const std::function<void(const StepLog&)>& progress) {
  cfg.validate();
  if (objects.size() < 2) throw InvalidArgument("training needs at least two objects");
  TrainResult result{Network<float>(cfg.network, cfg.seed), {}};
  Network<float>& net = result.net;
  nn::AdamConfig acfg;
  acfg.weight_decay = cfg.weight_decay;
  nn::AdamW<float> adam(acfg);

  const int size = cfg.network.input_size;
  const int n_obj = std::min<int>(cfg.objects_per_batch, static_cast<int>(objects.size()));
  const int shards = cfg.anchors_per_object / cfg.shard_anchors;
  const int batch_size = n_obj * cfg.anchors_per_object;
  const int total_steps = cfg.epochs * cfg.steps_per_epoch;
  const CounterRng root(cfg.seed, CounterRng::hash("train"));

  for (int step = 0; step < total_steps; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    const double epoch_pos = static_cast<double>(step) / cfg.steps_per_epoch;
    const double lr = nn::cosine_lr(epoch_pos, cfg.epochs, cfg.lr_max, cfg.lr_min);
    CounterRng rng = root.derive(static_cast<std::uint64_t>(step));

    std::vector<int> order(objects.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    for (int i = 0; i < n_obj; ++i) {
      const auto j = i + static_cast<int>(rng.below(order.size() - static_cast<std::size_t>(i)));
      std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
    }
    std::vector<std::uint64_t> obj_seed(static_cast<std::size_t>(n_obj));
    for (auto& s : obj_seed) s = rng.next_u64();

    // Render and preprocess every triplet of the batch; slot (object, anchor).
    std::vector<PreparedTriplet> prepared(static_cast<std::size_t>(batch_size));
    parallel_for(static_cast<std::size_t>(batch_size), [&](std::size_t k) {
      const int o = static_cast<int>(k) / cfg.anchors_per_object;
      const int a = static_cast<int>(k) % cfg.anchors_per_object;
      const TrainObject& obj = objects[static_cast<std::size_t>(order[static_cast<std::size_t>(o)])];
      CounterRng item = CounterRng(obj_seed[static_cast<std::size_t>(o)], static_cast<std::uint64_t>(a));
      const auto trip = sample_triplets(obj.mesh, obj.diameter, 1, item.next_u64(), cfg.f_base);
      const bool aug = item.uniform() < cfg.augment_fraction;
      prepared[k] = prepare_triplet(trip[0], obj.diameter, size, aug, cfg.augment, item.next_u64());
    });

    std::vector<ShardResult> shard_results(static_cast<std::size_t>(shards));
    parallel_for(static_cast<std::size_t>(shards), [&](std::size_t s) {
      std::vector<const PreparedTriplet*> items;
      for (int o = 0; o < n_obj; ++o)
        for (int a = 0; a < cfg.shard_anchors; ++a)
          items.push_back(&prepared[static_cast<std::size_t>(o * cfg.anchors_per_object +
                                                             static_cast<int>(s) * cfg.shard_anchors + a)]);
      nn::Tape<float> tape;
      Pass<float> pass(net, tape, true);
      ShardResult& r = shard_results[s];
      const int loss = build_training_loss(pass, make_batch(items, size), 1.0 / batch_size, &r.sums);
      tape.backward(loss);
      for (int id : pass.parameter_ids()) r.grads.push_back(tape.grad(id));
      r.mean = pass.batch_means();
      r.var = pass.batch_vars();
    });

    std::vector<Tensor<float>> grads = std::move(shard_results[0].grads);
    LossSums sums = shard_results[0].sums;
    for (int s = 1; s < shards; ++s) {
      const auto& r = shard_results[static_cast<std::size_t>(s)];
      for (std::size_t p = 0; p < grads.size(); ++p)
        for (std::size_t i = 0; i < grads[p].size(); ++i) grads[p][i] += r.grads[p][i];
      sums.total += r.sums.total;
      sums.viewpoint += r.sums.viewpoint;
      sums.verification += r.sums.verification;
      sums.inplane += r.sums.inplane;
      sums.ranked += r.sums.ranked;
    }
    if (!std::isfinite(sums.total))
      throw NumericalError("training diverged: non-finite loss at step " + std::to_string(step) + " (lr " +
                           std::to_string(lr) + ")");
    for (const auto& g : grads) g.check_finite("training gradient");
    for (const auto& r : shard_results)
      for (std::size_t l = 0; l < r.mean.size(); ++l)
        if (!r.mean[l].empty()) net.update_running_stats(l, r.mean[l], r.var[l]);

    std::vector<const Tensor<float>*> gptr;
    for (const auto& g : grads) gptr.push_back(&g);
    adam.step(net.parameters(), gptr, lr);

    StepLog log;
    log.step = step;
    log.epoch = epoch_pos;
    log.lr = lr;
    log.loss = sums.total;
    log.viewpoint = sums.viewpoint / batch_size;
    log.verification = sums.verification / batch_size;
    log.inplane = sums.inplane / batch_size;
    log.ranking_accuracy = static_cast<double>(sums.ranked) / batch_size;
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.steps.push_back(log);
    if (progress) progress(log);
  }
  return result;
}

double wrap_degrees(double a) {
  double r = std::fmod(a, 360.0);
  if (r <= -180) r += 360;
  if (r > 180) r -= 360;
  return r;
}

HeldOutReport evaluate_held_out(const Network<float>& net, const std::vector<TrainObject>& objects, int anchors,
                                std::uint64_t seed, double gamma_min_deg, double f_base) {
  const int size = net.config().input_size;
  const CounterRng root(seed, CounterRng::hash("held-out"));
  std::vector<std::vector<TrainingTriplet>> trips(objects.size());
  std::vector<std::vector<PreparedTriplet>> prep(objects.size());
  parallel_for(objects.size(), [&](std::size_t o) {
    trips[o] = sample_triplets(objects[o].mesh, objects[o].diameter, anchors, root.derive(o).next_u64(), f_base,
                               gamma_min_deg);
    for (const auto& t : trips[o]) prep[o].push_back(prepare_triplet(t, objects[o].diameter, size, false, {}, 0));
  });
  std::vector<const PreparedTriplet*> items;
  for (const auto& p : prep)
    for (const auto& t : p) items.push_back(&t);
  const TripletBatch<float> b = make_batch(items, size);
  const int n = static_cast<int>(items.size());
  const Encoded ev = encode(net, b.v), et = encode(net, b.v_theta), eg = encode(net, b.v_gamma);

  HeldOutReport rep;
  rep.triplets = n;
  const int d = ev.embeddings.dim(1);
  int ranked = 0;
  for (int i = 0; i < n; ++i) {
    auto row = [&](const Encoded& e) { return std::span<const float>(e.embeddings.data() + i * d, d); };
    if (nn::cosine_similarity(row(ev), row(et)) > nn::cosine_similarity(row(ev), row(eg))) ++ranked;
  }
  rep.ranking_accuracy = static_cast<double>(ranked) / n;

  const auto pred = regress_inplane(net, ev.features, et.features);
  std::vector<Vec2> truth;
  for (int i = 0; i < n; ++i) {
    const double a = items[static_cast<std::size_t>(i)]->theta_rad;
    truth.emplace_back(std::cos(a), std::sin(a));
    const double err = wrap_degrees(rad2deg(std::atan2(pred[static_cast<std::size_t>(i)].y(),
                                                       pred[static_cast<std::size_t>(i)].x()) - a));
    rep.inplane_errors.push_back(std::abs(err));
  }
  std::vector<double> sorted = rep.inplane_errors;
  std::sort(sorted.begin(), sorted.end());
  rep.inplane_median = n % 2 ? sorted[static_cast<std::size_t>(n / 2)]
                             : 0.5 * (sorted[static_cast<std::size_t>(n / 2 - 1)] + sorted[static_cast<std::size_t>(n / 2)]);

  const auto s_pos = verify_score(net, ev.features, et.features, truth);
  const auto s_neg = verify_score(net, ev.features, eg.features, truth);
  int ok = 0;
  for (int i = 0; i < n; ++i) ok += s_pos[static_cast<std::size_t>(i)] > s_neg[static_cast<std::size_t>(i)];
  rep.verify_accuracy = static_cast<double>(ok) / n;
  return rep;
}

}  // namespace ove6d
