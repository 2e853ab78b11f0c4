#include "ove6d/model.hpp"

#include <algorithm>
#include <cmath>

#include "ove6d/error.hpp"
#include "ove6d/rng.hpp"

namespace ove6d {

using nlohmann::json;
using nn::Tape;
using nn::Tensor;

void NetworkConfig::validate() const {
  if (channels.empty() || channels.size() != strides.size())
    throw ConfigError("backbone channels and strides must be non-empty lists of equal length");
  for (int c : channels)
    if (c <= 0) throw ConfigError("backbone channel counts must be positive");
  for (int s : strides)
    if (s != 1 && s != 2) throw ConfigError("backbone strides must be 1 or 2");
  if (input_size < 8) throw ConfigError("input_size must be at least 8");
  if (embedding_dim <= 0 || ove_channels <= 0 || ior_channels <= 0 || ior_hidden <= 0 || ocv_channels <= 0)
    throw ConfigError("head sizes must be positive");
  if (feature_size() < 2) throw ConfigError("backbone output must be at least 2x2");
}

int NetworkConfig::feature_size() const {
  int s = input_size;
  for (int st : strides) s = (s + st - 1) / st;
  return s;
}

json NetworkConfig::to_json() const {
  return {{"input_size", input_size},       {"channels", channels},         {"strides", strides},
          {"embedding_dim", embedding_dim}, {"ove_channels", ove_channels}, {"ior_channels", ior_channels},
          {"ior_hidden", ior_hidden},       {"ocv_channels", ocv_channels}};
}

NetworkConfig NetworkConfig::from_json(const json& j) {
  NetworkConfig c;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    try {
      if (k == "input_size") c.input_size = it->get<int>();
      else if (k == "channels") c.channels = it->get<std::vector<int>>();
      else if (k == "strides") c.strides = it->get<std::vector<int>>();
      else if (k == "embedding_dim") c.embedding_dim = it->get<int>();
      else if (k == "ove_channels") c.ove_channels = it->get<int>();
      else if (k == "ior_channels") c.ior_channels = it->get<int>();
      else if (k == "ior_hidden") c.ior_hidden = it->get<int>();
      else if (k == "ocv_channels") c.ocv_channels = it->get<int>();
      else throw ConfigError("unknown network key '" + k + "'");
    } catch (const json::exception& e) {
      throw ConfigError("network." + k + ": " + e.what());
    }
  }
  c.validate();
  return c;
}

template <typename T>
Network<T>::Network(NetworkConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  int cin = 1;
  for (std::size_t i = 0; i < cfg_.channels.size(); ++i) {
    const std::string name = "backbone." + std::to_string(i);
    add_conv(name + ".conv", cin, cfg_.channels[i]);
    add_bn(name + ".bn", cfg_.channels[i]);
    cin = cfg_.channels[i];
  }
  const int s = cfg_.feature_size();
  add_conv("ove.conv", cin, cfg_.ove_channels);
  add_bn("ove.bn", cfg_.ove_channels);
  add_fc("ove.fc", cfg_.ove_channels, cfg_.embedding_dim);

  const int s_ior = (s + 1) / 2;
  add_conv("ior.conv", 2 * cin, cfg_.ior_channels);
  add_bn("ior.bn", cfg_.ior_channels);
  add_fc("ior.fc1", cfg_.ior_channels * s_ior * s_ior, cfg_.ior_hidden);
  add_fc("ior.fc2", cfg_.ior_hidden, 2);

  const int s_ocv = s / 2;
  add_conv("ocv.l1.conv", 2 * cin, cfg_.ocv_channels);
  add_bn("ocv.l1.bn", cfg_.ocv_channels);
  add_conv("ocv.l2.conv", cfg_.ocv_channels, cfg_.ocv_channels);
  add_bn("ocv.l2.bn", cfg_.ocv_channels);
  add_fc("ocv.fc", cfg_.ocv_channels * s_ocv * s_ocv, 1);

  const CounterRng root = CounterRng(seed, CounterRng::hash("network-init"));
  for (std::size_t i = 0; i < names_.size(); ++i) {
    const std::string& n = names_[i];
    Tensor<T>& v = values_[i];
    if (n.ends_with(".gamma")) {
      v.fill(T(1));
    } else if (n.ends_with(".weight")) {
      const int fan_in = static_cast<int>(v.size() / static_cast<std::size_t>(v.dim(0)));
      const double bound = nn::kaiming_uniform_bound(fan_in);
      CounterRng rng = root.derive(n);
      for (std::size_t k = 0; k < v.size(); ++k) v[k] = static_cast<T>(rng.uniform(-bound, bound));
    }
  }
}

template <typename T>
void Network<T>::add_param(const std::string& name, std::vector<int> shape) {
  index_[name] = names_.size();
  names_.push_back(name);
  values_.emplace_back(std::move(shape));
}

template <typename T>
void Network<T>::add_conv(const std::string& name, int cin, int cout) {
  add_param(name + ".weight", {cout, cin, 3, 3});
}

template <typename T>
void Network<T>::add_bn(const std::string& name, int c) {
  add_param(name + ".gamma", {c});
  add_param(name + ".beta", {c});
  bn_.push_back({name, Tensor<T>({c}), Tensor<T>({c}, T(1))});
}

template <typename T>
void Network<T>::add_fc(const std::string& name, int in, int out) {
  add_param(name + ".weight", {out, in});
  add_param(name + ".bias", {out});
}

template <typename T>
std::size_t Network<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& v : values_) n += v.size();
  return n;
}

template <typename T>
std::vector<Tensor<T>*> Network<T>::parameters() {
  std::vector<Tensor<T>*> out;
  for (auto& v : values_) out.push_back(&v);
  return out;
}

template <typename T>
Tensor<T>& Network<T>::parameter(const std::string& name) {
  return values_[parameter_index(name)];
}

template <typename T>
std::size_t Network<T>::parameter_index(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw InvalidArgument("unknown parameter '" + name + "'");
  return it->second;
}

template <typename T>
std::size_t Network<T>::batch_norm_index(const std::string& name) const {
  for (std::size_t i = 0; i < bn_.size(); ++i)
    if (bn_[i].name == name) return i;
  throw InvalidArgument("unknown batch-norm layer '" + name + "'");
}

template <typename T>
void Network<T>::update_running_stats(std::size_t layer, const std::vector<double>& mean,
                                      const std::vector<double>& var) {
  auto& l = bn_.at(layer);
  if (mean.size() != l.running_mean.size() || var.size() != l.running_var.size())
    throw InvalidArgument("batch statistics size mismatch for " + l.name);
  const double m = nn::kBatchNormMomentum;
  for (std::size_t c = 0; c < mean.size(); ++c) {
    l.running_mean[c] = static_cast<T>((1 - m) * l.running_mean[c] + m * mean[c]);
    l.running_var[c] = static_cast<T>((1 - m) * l.running_var[c] + m * var[c]);
  }
}

template <typename T>
std::vector<nn::CheckpointRecord> Network<T>::to_records() const {
  std::vector<nn::CheckpointRecord> out;
  nn::CheckpointRecord cfg;
  cfg.name = "network.config";
  cfg.kind = nn::CheckpointRecord::Kind::Bytes;
  cfg.bytes = cfg_.to_json().dump();
  out.push_back(std::move(cfg));
  auto tensor_record = [](const std::string& name, const Tensor<T>& t) {
    nn::CheckpointRecord r;
    r.name = name;
    r.shape = t.shape();
    r.values.assign(t.storage().begin(), t.storage().end());
    return r;
  };
  for (std::size_t i = 0; i < names_.size(); ++i) out.push_back(tensor_record(names_[i], values_[i]));
  for (const auto& l : bn_) {
    out.push_back(tensor_record(l.name + ".running_mean", l.running_mean));
    out.push_back(tensor_record(l.name + ".running_var", l.running_var));
  }
  return out;
}

template <typename T>
Network<T> Network<T>::from_records(const std::vector<nn::CheckpointRecord>& records) {
  std::map<std::string, const nn::CheckpointRecord*> by_name;
  for (const auto& r : records) by_name[r.name] = &r;
  auto cfg_it = by_name.find("network.config");
  if (cfg_it == by_name.end()) throw FormatError("checkpoint has no network.config record");
  NetworkConfig cfg;
  try {
    cfg = NetworkConfig::from_json(json::parse(cfg_it->second->bytes));
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad network.config record: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("bad network.config record: ") + e.what());
  }
  Network net(cfg, 0);
  auto fill = [&](const std::string& name, Tensor<T>& dst) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError("checkpoint is missing '" + name + "'");
    const auto& r = *it->second;
    if (r.kind != nn::CheckpointRecord::Kind::F32 || r.shape != dst.shape())
      throw FormatError("checkpoint record '" + name + "' has shape " + nn::shape_string(r.shape) + ", expected " +
                        nn::shape_string(dst.shape()));
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(r.values[i]);
  };
  for (std::size_t i = 0; i < net.names_.size(); ++i) fill(net.names_[i], net.values_[i]);
  for (auto& l : net.bn_) {
    fill(l.name + ".running_mean", l.running_mean);
    fill(l.name + ".running_var", l.running_var);
  }
  return net;
}

template <typename T>
Pass<T>::Pass(const Network<T>& net, Tape<T>& tape, bool train) : net_(net), tape_(tape), train_(train) {
  for (std::size_t i = 0; i < net.parameter_names().size(); ++i)
    ids_.push_back(train ? tape.variable(net.parameter(i)) : tape.constant(net.parameter(i)));
  batch_mean_.resize(net.batch_norms().size());
  batch_var_.resize(net.batch_norms().size());
}

template <typename T>
Pass<T>::Pass(const Network<T>& net, Tape<T>& tape, bool train, std::vector<int> parameter_ids)
    : net_(net), tape_(tape), train_(train), ids_(std::move(parameter_ids)) {
  if (ids_.size() != net.parameter_names().size()) throw InvalidArgument("one tape node per parameter needed");
  batch_mean_.resize(net.batch_norms().size());
  batch_var_.resize(net.batch_norms().size());
}

template <typename T>
int Pass<T>::conv_bn_relu(const std::string& name, int x, int stride, int residual) {
  const std::size_t bn = net_.batch_norm_index(name + ".bn");
  nn::BatchNormState<T> st;
  st.running_mean = &net_.batch_norms()[bn].running_mean;
  st.running_var = &net_.batch_norms()[bn].running_var;
  st.batch_mean = &batch_mean_[bn];
  st.batch_var = &batch_var_[bn];
  int y = nn::conv2d(tape_, x, param(name + ".conv.weight"), -1, stride);
  y = nn::batch_norm(tape_, y, param(name + ".bn.gamma"), param(name + ".bn.beta"), st, train_);
  if (residual >= 0) y = nn::add(tape_, y, residual);
  return nn::relu(tape_, y);
}

template <typename T>
int Pass<T>::backbone(int x) {
  const auto& cfg = net_.config();
  const auto& xs = tape_.value(x).shape();
  if (xs.size() != 4 || xs[1] != 1 || xs[2] != cfg.input_size || xs[3] != cfg.input_size)
    throw InvalidArgument("network input must be [N, 1, " + std::to_string(cfg.input_size) + ", " +
                          std::to_string(cfg.input_size) + "], got " + nn::shape_string(xs));
  int h = x;
  for (std::size_t i = 0; i < cfg.channels.size(); ++i) {
    const auto& in_shape = tape_.value(h).shape();
    const bool same = cfg.strides[i] == 1 && in_shape[1] == cfg.channels[i];
    h = conv_bn_relu("backbone." + std::to_string(i), h, cfg.strides[i], same ? h : -1);
  }
  return h;
}

template <typename T>
int Pass<T>::embed(int feat) {
  int h = conv_bn_relu("ove", feat, 1, -1);
  h = nn::global_avg_pool(tape_, h);
  h = nn::fully_connected(tape_, h, param("ove.fc.weight"), param("ove.fc.bias"));
  return nn::l2_normalize_rows(tape_, h);
}

template <typename T>
int Pass<T>::inplane(int feat_ref, int feat_obs) {
  int h = nn::concat_channels(tape_, feat_ref, feat_obs);
  h = conv_bn_relu("ior", h, 2, -1);
  h = nn::flatten(tape_, h);
  h = nn::relu(tape_, nn::fully_connected(tape_, h, param("ior.fc1.weight"), param("ior.fc1.bias")));
  h = nn::fully_connected(tape_, h, param("ior.fc2.weight"), param("ior.fc2.bias"));
  const Tensor<T>& raw = tape_.value(h);
  for (int i = 0; i < raw.dim(0); ++i)
    if (std::hypot(static_cast<double>(raw[2 * i]), static_cast<double>(raw[2 * i + 1])) < 1e-8)
      throw NumericalError("in-plane head produced a degenerate (near-zero) output");
  return nn::l2_normalize_rows(tape_, h);
}

template <typename T>
int Pass<T>::verify(int feat_ref_aligned, int feat_obs) {
  if (tape_.value(feat_ref_aligned).shape() != tape_.value(feat_obs).shape())
    throw InvalidArgument("verification inputs differ in shape: " +
                          nn::shape_string(tape_.value(feat_ref_aligned).shape()) + " vs " +
                          nn::shape_string(tape_.value(feat_obs).shape()));
  int h = nn::concat_channels(tape_, feat_ref_aligned, feat_obs);
  h = conv_bn_relu("ocv.l1", h, 1, -1);
  h = conv_bn_relu("ocv.l2", h, 1, -1);
  h = nn::max_pool2d(tape_, h);
  h = nn::flatten(tape_, h);
  return nn::fully_connected(tape_, h, param("ocv.fc.weight"), param("ocv.fc.bias"));
}

double viewpoint_loss(std::span<const float> v, std::span<const float> v_theta, std::span<const float> v_gamma,
                      double margin) {
  return std::max(0.0, nn::cosine_similarity(v, v_gamma) - nn::cosine_similarity(v, v_theta) + margin);
}

double verification_loss(double s_theta, double s_gamma, double margin) {
  return std::max(0.0, s_gamma - s_theta + margin);
}

std::vector<float> depth_relief(std::span<const float> depth) {
  double sum = 0;
  std::size_t n = 0;
  for (float z : depth)
    if (z > 0) sum += z, ++n;
  std::vector<float> out(depth.size(), 0.0f);
  if (n == 0) return out;
  const double mean = sum / static_cast<double>(n);
  double peak = 0;
  for (std::size_t i = 0; i < depth.size(); ++i)
    if (depth[i] > 0) {
      out[i] = static_cast<float>(depth[i] - mean);
      peak = std::max(peak, std::abs(static_cast<double>(out[i])));
    }
  if (peak < 1e-3)
    for (std::size_t i = 0; i < depth.size(); ++i) out[i] = depth[i] > 0 ? 1.0f : 0.0f;
  return out;
}

double inplane_loss(const DepthFrame& v, const Rotation& r_pred, const Rotation& r_gt) {
  if (v.width != v.height) throw InvalidArgument("in-plane loss needs a square frame");
  if (v.nonzero_count() == 0) throw InvalidArgument("in-plane loss on an all-zero frame");
  Tape<double> tape(false);
  const std::vector<float> relief = depth_relief(v.depth);
  const int x = tape.constant(Tensor<double>({1, 1, v.height, v.width}, std::vector<double>(relief.begin(), relief.end())));
  auto rotated = [&](const Rotation& r) {
    const double a = inplane_angle(r);
    const int u = tape.constant(Tensor<double>({1, 2}, {std::cos(a), std::sin(a)}));
    return nn::flatten(tape, nn::spatial_transform(tape, x, u));
  };
  const int s = nn::cosine_rows(tape, rotated(r_pred), rotated(r_gt));
  return tape.value(nn::neg_log_half_cos(tape, s))[0];
}

double combined_loss(const std::vector<LossTerms>& batch) {
  if (batch.empty()) throw InvalidArgument("combined loss of an empty batch");
  double s = 0;
  for (const auto& t : batch)
    s += kViewpointWeight * t.viewpoint + kVerificationWeight * t.verification + kInplaneWeight * t.inplane;
  return s / static_cast<double>(batch.size());
}

template <typename T>
int build_training_loss(Pass<T>& pass, const TripletBatch<T>& batch, double scale, LossSums* sums) {
  Tape<T>& tape = pass.tape();
  const int b = batch.v.dim(0);
  if (b < 1 || batch.v_theta.shape() != batch.v.shape() || batch.v_gamma.shape() != batch.v.shape() ||
      batch.v_depth.shape() != batch.v.shape() || batch.theta.shape() != std::vector<int>{b, 2})
    throw InvalidArgument("inconsistent triplet batch shapes");

  const int x = tape.constant(nn::stack_leading<T>({&batch.v, &batch.v_theta, &batch.v_gamma}));
  const int feat = pass.backbone(x);
  const int emb = pass.embed(feat);
  const int e_v = nn::slice_batch(tape, emb, 0, b);
  const int e_t = nn::slice_batch(tape, emb, b, b);
  const int e_g = nn::slice_batch(tape, emb, 2 * b, b);
  const int s_pos = nn::cosine_rows(tape, e_v, e_t);
  const int s_neg = nn::cosine_rows(tape, e_v, e_g);
  const int vp = nn::hinge(tape, nn::linear_combination<T>(tape, {{s_neg, 1.0}, {s_pos, -1.0}}), kViewpointMargin);

  const int f_v = nn::slice_batch(tape, feat, 0, b);
  const int f_t = nn::slice_batch(tape, feat, b, b);
  const int f_g = nn::slice_batch(tape, feat, 2 * b, b);
  const int theta_gt = tape.constant(batch.theta);

  const int u = pass.inplane(f_v, f_t);
  const int depth = tape.constant(batch.v_depth);
  const int img_pred = nn::flatten(tape, nn::spatial_transform(tape, depth, u));
  const int img_gt = nn::flatten(tape, nn::spatial_transform(tape, depth, theta_gt));
  const int th = nn::neg_log_half_cos(tape, nn::cosine_rows(tape, img_pred, img_gt));

  const int aligned = nn::spatial_transform(tape, f_v, theta_gt);
  const int scores = pass.verify(nn::concat_batch<T>(tape, {aligned, aligned}), nn::concat_batch<T>(tape, {f_t, f_g}));
  const int sc_t = nn::slice_batch(tape, scores, 0, b);
  const int sc_g = nn::slice_batch(tape, scores, b, b);
  const int css = nn::hinge(tape, nn::linear_combination<T>(tape, {{sc_g, 1.0}, {sc_t, -1.0}}), kVerificationMargin);

  const int total = nn::linear_combination<T>(tape, {{nn::sum_all(tape, vp), kViewpointWeight * scale},
                                                     {nn::sum_all(tape, css), kVerificationWeight * scale},
                                                     {nn::sum_all(tape, th), kInplaneWeight * scale}});
  if (sums) {
    auto sum = [&](int id) {
      double s = 0;
      for (T v : tape.value(id).span()) s += v;
      return s;
    };
    sums->viewpoint += sum(vp);
    sums->verification += sum(css);
    sums->inplane += sum(th);
    sums->total += tape.value(total)[0];
    for (int i = 0; i < b; ++i)
      if (tape.value(s_pos)[i] > tape.value(s_neg)[i]) ++sums->ranked;
  }
  return total;
}

Encoded encode(const Network<float>& net, const Tensor<float>& crops, int chunk) {
  if (crops.rank() != 4) throw InvalidArgument("encode expects [N, 1, S, S] crops");
  const int n = crops.dim(0);
  std::vector<Tensor<float>> embs, feats;
  for (int i0 = 0; i0 < n; i0 += chunk) {
    const int nb = std::min(chunk, n - i0);
    Tape<float> tape(false);
    Pass<float> pass(net, tape, false);
    const int f = pass.backbone(tape.constant(nn::slice_leading(crops, i0, nb)));
    const int e = pass.embed(f);
    embs.push_back(tape.value(e));
    feats.push_back(tape.value(f));
  }
  auto stack = [](const std::vector<Tensor<float>>& v) {
    std::vector<const Tensor<float>*> p;
    for (const auto& t : v) p.push_back(&t);
    return nn::stack_leading(p);
  };
  if (n == 0) throw InvalidArgument("encode of zero crops");
  return {stack(embs), stack(feats)};
}

std::vector<Vec2> regress_inplane(const Network<float>& net, const Tensor<float>& feat_ref,
                                  const Tensor<float>& feat_obs) {
  Tape<float> tape(false);
  Pass<float> pass(net, tape, false);
  const int u = pass.inplane(tape.constant(feat_ref), tape.constant(feat_obs));
  const Tensor<float>& out = tape.value(u);
  std::vector<Vec2> res;
  for (int i = 0; i < out.dim(0); ++i) res.emplace_back(out[2 * i], out[2 * i + 1]);
  return res;
}

std::vector<double> verify_score(const Network<float>& net, const Tensor<float>& feat_ref,
                                 const Tensor<float>& feat_obs, const std::vector<Vec2>& theta) {
  if (static_cast<int>(theta.size()) != feat_ref.dim(0)) throw InvalidArgument("one rotation per feature map needed");
  Tape<float> tape(false);
  Pass<float> pass(net, tape, false);
  Tensor<float> u({static_cast<int>(theta.size()), 2});
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const Vec2 t = theta[i].normalized();
    u[2 * i] = static_cast<float>(t.x());
    u[2 * i + 1] = static_cast<float>(t.y());
  }
  const int aligned = nn::spatial_transform(tape, tape.constant(feat_ref), tape.constant(u));
  const int s = pass.verify(aligned, tape.constant(feat_obs));
  return std::vector<double>(tape.value(s).storage().begin(), tape.value(s).storage().end());
}

void save_network(const Network<float>& net, const std::filesystem::path& path) {
  nn::save_checkpoint(path, net.to_records());
}

Network<float> load_network(const std::filesystem::path& path) {
  return Network<float>::from_records(nn::load_checkpoint(path));
}

template class Network<float>;
template class Network<double>;
template class Pass<float>;
template class Pass<double>;
template int build_training_loss<float>(Pass<float>&, const TripletBatch<float>&, double, LossSums*);
template int build_training_loss<double>(Pass<double>&, const TripletBatch<double>&, double, LossSums*);

}  // namespace ove6d
