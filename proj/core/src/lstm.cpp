#include "mergecast/lstm.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numeric>

#include "mergecast/error.hpp"
#include "mergecast/rng.hpp"

namespace mergecast::lstm {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using ConstMap = Eigen::Map<const MatrixXd>;
using Map = Eigen::Map<MatrixXd>;

std::string_view lane_tag_name(LaneTag t) noexcept { return t == LaneTag::kRamp ? "ramp" : "adjacent"; }

std::optional<LaneTag> lane_tag_from_name(std::string_view s) noexcept {
  if (s == "ramp") return LaneTag::kRamp;
  if (s == "adjacent") return LaneTag::kAdjacent;
  return std::nullopt;
}

double huber(double r, double delta) noexcept {
  const double a = std::abs(r);
  return a <= delta ? 0.5 * r * r : delta * (a - 0.5 * delta);
}

namespace {

double huber_grad(double r, double delta) noexcept {
  if (r > delta) return delta;
  if (r < -delta) return -delta;
  return r;
}

std::size_t block_size(std::size_t in, std::size_t hidden) { return 4 * hidden * (in + hidden + 1); }

struct LayerTrace {
  MatrixXd x;      // in x (T*B)
  MatrixXd gates;  // 4H x (T*B): i, f, g, o after activation
  MatrixXd c;      // H x (T*B)
  MatrixXd tc;     // tanh(c)
  MatrixXd h;      // H x (T*B)
};

MatrixXd sigmoid(const MatrixXd& m) { return (1.0 + (-m.array()).exp()).inverse().matrix(); }

}  // namespace

Network::Network(NetworkShape shape, LaneTag lane, std::uint64_t seed, Normalization norm)
    : shape_(shape), lane_(lane), norm_(norm), seed_(seed) {
  if (shape.layers == 0 || shape.hidden == 0 || shape.input_size == 0) {
    throw ParameterError("network needs at least one layer, one unit and one input");
  }
  std::size_t total = 0;
  for (std::size_t l = 0; l < shape.layers; ++l) {
    total += block_size(l == 0 ? shape.input_size : shape.hidden, shape.hidden);
  }
  total += shape.hidden + 1;
  theta_.resize(static_cast<Eigen::Index>(total));

  Rng rng(derive_seed(seed, "lstm-init"));
  const double k = 1.0 / std::sqrt(static_cast<double>(shape.hidden));
  for (Eigen::Index i = 0; i < theta_.size(); ++i) theta_[i] = rng.uniform(-k, k);
  const std::size_t H = shape.hidden;
  for (std::size_t l = 0; l < shape.layers; ++l) {
    const auto lay = layer_layout(l);
    for (std::size_t r = 0; r < 4 * H; ++r) theta_[static_cast<Eigen::Index>(lay.bias + r)] = 0.0;
    // Forget gates start open.
    for (std::size_t r = H; r < 2 * H; ++r) theta_[static_cast<Eigen::Index>(lay.bias + r)] = 1.0;
  }
  theta_[theta_.size() - 1] = 0.0;
}

Network::Layout Network::layer_layout(std::size_t layer) const {
  std::size_t off = 0;
  const std::size_t H = shape_.hidden;
  for (std::size_t l = 0; l < layer; ++l) off += block_size(l == 0 ? shape_.input_size : H, H);
  const std::size_t in = layer == 0 ? shape_.input_size : H;
  return Layout{off, off + 4 * H * in, off + 4 * H * in + 4 * H * H, in};
}

std::size_t Network::head_offset() const noexcept {
  return static_cast<std::size_t>(theta_.size()) - shape_.hidden - 1;
}

namespace {

// Runs one layer over the whole sequence, recording everything needed for
// backpropagation.
void forward_layer(const Network& net, std::size_t layer, std::size_t steps, std::size_t batch, LayerTrace& tr) {
  const auto H = static_cast<Eigen::Index>(net.shape().hidden);
  const auto B = static_cast<Eigen::Index>(batch);
  const auto lay = net.layer_layout(layer);
  const double* p = net.parameters().data();
  ConstMap w_in(p + lay.w_in, 4 * H, static_cast<Eigen::Index>(lay.in_size));
  ConstMap w_rec(p + lay.w_rec, 4 * H, H);
  Eigen::Map<const VectorXd> bias(p + lay.bias, 4 * H);

  const auto cols = static_cast<Eigen::Index>(steps) * B;
  tr.gates.noalias() = w_in * tr.x;
  tr.gates.colwise() += bias;
  tr.c.resize(H, cols);
  tr.tc.resize(H, cols);
  tr.h.resize(H, cols);

  MatrixXd h_prev = MatrixXd::Zero(H, B);
  MatrixXd c_prev = MatrixXd::Zero(H, B);
  for (Eigen::Index t = 0; t < static_cast<Eigen::Index>(steps); ++t) {
    auto pre = tr.gates.middleCols(t * B, B);
    pre.noalias() += w_rec * h_prev;
    pre.topRows(H) = sigmoid(pre.topRows(H));
    pre.middleRows(H, H) = sigmoid(pre.middleRows(H, H));
    pre.middleRows(2 * H, H) = pre.middleRows(2 * H, H).array().tanh().matrix();
    pre.bottomRows(H) = sigmoid(pre.bottomRows(H));
#ifndef NDEBUG
    assert((pre.topRows(2 * H).array() >= 0.0).all() && (pre.topRows(2 * H).array() <= 1.0).all());
    assert((pre.bottomRows(H).array() >= 0.0).all() && (pre.bottomRows(H).array() <= 1.0).all());
#endif
    auto c = tr.c.middleCols(t * B, B);
    c = pre.middleRows(H, H).cwiseProduct(c_prev) + pre.topRows(H).cwiseProduct(pre.middleRows(2 * H, H));
    auto tc = tr.tc.middleCols(t * B, B);
    tc = c.array().tanh().matrix();
    assert((tc.array().abs() <= 1.0).all());
    tr.h.middleCols(t * B, B) = pre.bottomRows(H).cwiseProduct(tc);
    h_prev = tr.h.middleCols(t * B, B);
    c_prev = c;
  }
}

// Backpropagates dh (H x T*B) through one layer; accumulates parameter
// gradients and returns the gradient with respect to the layer input.
MatrixXd backward_layer(const Network& net, std::size_t layer, std::size_t steps, std::size_t batch,
                        const LayerTrace& tr, const MatrixXd& dh_ext, VectorXd& grad, bool need_dx) {
  const auto H = static_cast<Eigen::Index>(net.shape().hidden);
  const auto B = static_cast<Eigen::Index>(batch);
  const auto T = static_cast<Eigen::Index>(steps);
  const auto lay = net.layer_layout(layer);
  const double* p = net.parameters().data();
  ConstMap w_in(p + lay.w_in, 4 * H, static_cast<Eigen::Index>(lay.in_size));
  ConstMap w_rec(p + lay.w_rec, 4 * H, H);

  MatrixXd dpre(4 * H, T * B);
  MatrixXd dh_next = MatrixXd::Zero(H, B);
  MatrixXd dc_next = MatrixXd::Zero(H, B);
  MatrixXd dh(H, B), dc(H, B);
  for (Eigen::Index t = T - 1; t >= 0; --t) {
    const auto g = tr.gates.middleCols(t * B, B);
    const auto i_g = g.topRows(H).array();
    const auto f_g = g.middleRows(H, H).array();
    const auto c_g = g.middleRows(2 * H, H).array();
    const auto o_g = g.bottomRows(H).array();
    const auto tc = tr.tc.middleCols(t * B, B).array();

    dh = dh_ext.middleCols(t * B, B) + dh_next;
    dc = (dh.array() * o_g * (1.0 - tc * tc)).matrix() + dc_next;
    auto dp = dpre.middleCols(t * B, B);
    dp.topRows(H) = (dc.array() * c_g * i_g * (1.0 - i_g)).matrix();
    if (t > 0) {
      dp.middleRows(H, H) = (dc.array() * tr.c.middleCols((t - 1) * B, B).array() * f_g * (1.0 - f_g)).matrix();
    } else {
      dp.middleRows(H, H).setZero();
    }
    dp.middleRows(2 * H, H) = (dc.array() * i_g * (1.0 - c_g * c_g)).matrix();
    dp.bottomRows(H) = (dh.array() * tc * o_g * (1.0 - o_g)).matrix();
    dc_next = (dc.array() * f_g).matrix();
    dh_next.noalias() = w_rec.transpose() * dp;
  }

  Map g_in(grad.data() + lay.w_in, 4 * H, static_cast<Eigen::Index>(lay.in_size));
  Map g_rec(grad.data() + lay.w_rec, 4 * H, H);
  Eigen::Map<VectorXd> g_b(grad.data() + lay.bias, 4 * H);
  g_in.noalias() += dpre * tr.x.transpose();
  if (T > 1) g_rec.noalias() += dpre.rightCols((T - 1) * B) * tr.h.leftCols((T - 1) * B).transpose();
  g_b += dpre.rowwise().sum();
  if (!need_dx) return {};
  return w_in.transpose() * dpre;
}

// Lays out (steps x batch) inputs as in x (T*B) with step-major column blocks.
MatrixXd sequence_columns(const MatrixXd& inputs) {
  const auto T = inputs.rows(), B = inputs.cols();
  MatrixXd x(1, T * B);
  for (Eigen::Index t = 0; t < T; ++t) x.middleCols(t * B, B) = inputs.row(t);
  return x;
}

}  // namespace

Eigen::RowVectorXd Network::predict(const MatrixXd& inputs) const {
  if (shape_.input_size != 1) throw ParameterError("predict expects a single input feature");
  const auto steps = static_cast<std::size_t>(inputs.rows());
  const auto batch = static_cast<std::size_t>(inputs.cols());
  LayerTrace tr;
  tr.x = sequence_columns(inputs);
  for (std::size_t l = 0; l < shape_.layers; ++l) {
    forward_layer(*this, l, steps, batch, tr);
    if (l + 1 < shape_.layers) tr.x = std::move(tr.h);
  }
  const auto H = static_cast<Eigen::Index>(shape_.hidden);
  Eigen::Map<const Eigen::RowVectorXd> w_out(theta_.data() + head_offset(), H);
  const double b_out = theta_[theta_.size() - 1];
  Eigen::RowVectorXd y = w_out * tr.h.rightCols(static_cast<Eigen::Index>(batch));
  y.array() += b_out;
  return y;
}

double Network::predict(std::span<const double> input) const {
  MatrixXd m(static_cast<Eigen::Index>(input.size()), 1);
  for (std::size_t i = 0; i < input.size(); ++i) m(static_cast<Eigen::Index>(i), 0) = input[i];
  return predict(m)(0);
}

double Network::loss_and_gradient(std::span<const TrainWindow* const> batch, double huber_delta, VectorXd* grad,
                                  std::span<double> per_window) const {
  if (batch.empty()) return 0.0;
  const std::size_t B = batch.size();
  const std::size_t T = kWindowInput;
  const auto H = static_cast<Eigen::Index>(shape_.hidden);
  const auto Bi = static_cast<Eigen::Index>(B);

  MatrixXd inputs(static_cast<Eigen::Index>(T), Bi);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t t = 0; t < T; ++t) inputs(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(b)) = batch[b]->input[t];
  }

  std::vector<LayerTrace> traces(shape_.layers);
  traces[0].x = sequence_columns(inputs);
  for (std::size_t l = 0; l < shape_.layers; ++l) {
    if (l > 0) traces[l].x = traces[l - 1].h;
    forward_layer(*this, l, T, B, traces[l]);
  }
  const auto& top = traces.back();
  Eigen::Map<const Eigen::RowVectorXd> w_out(theta_.data() + head_offset(), H);
  const double b_out = theta_[theta_.size() - 1];
  const MatrixXd h_last = top.h.rightCols(Bi);
  Eigen::RowVectorXd y = w_out * h_last;
  y.array() += b_out;

  double loss = 0.0;
  Eigen::RowVectorXd dy(Bi);
  for (std::size_t b = 0; b < B; ++b) {
    const double r = y(static_cast<Eigen::Index>(b)) - batch[b]->target;
    const double l = huber(r, huber_delta);
    if (b < per_window.size()) per_window[b] = l;
    loss += l;
    dy(static_cast<Eigen::Index>(b)) = huber_grad(r, huber_delta) / static_cast<double>(B);
  }
  loss /= static_cast<double>(B);
  if (!grad) return loss;

  grad->setZero(theta_.size());
  Eigen::Map<Eigen::RowVectorXd> g_w(grad->data() + head_offset(), H);
  g_w.noalias() += dy * h_last.transpose();
  (*grad)[grad->size() - 1] += dy.sum();

  MatrixXd dh = MatrixXd::Zero(H, static_cast<Eigen::Index>(T) * Bi);
  dh.rightCols(Bi).noalias() = w_out.transpose() * dy;
  for (std::size_t l = shape_.layers; l-- > 0;) {
    dh = backward_layer(*this, l, T, B, traces[l], dh, *grad, l > 0);
  }
  return loss;
}

std::vector<TrainWindow> make_windows(std::span<const std::vector<double>> position_series, const Normalization& norm) {
  std::vector<TrainWindow> out;
  for (const auto& xs : position_series) {
    if (xs.size() < kWindowLength) continue;
    for (std::size_t k = 0; k + kWindowLength <= xs.size(); ++k) {
      TrainWindow w;
      const double ref = xs[k];
      for (std::size_t j = 0; j < kWindowInput; ++j) w.input[j] = (xs[k + j] - ref) / norm.scale;
      w.target = (xs[k + kWindowInput] - ref) / norm.scale;
      out.push_back(w);
    }
  }
  return out;
}

std::vector<TrainWindow> make_windows(std::span<const Track> tracks, const Normalization& norm) {
  std::vector<std::vector<double>> series;
  series.reserve(tracks.size());
  for (const auto& tr : tracks) {
    std::vector<double> xs(tr.size());
    for (std::size_t k = 0; k < tr.size(); ++k) xs[k] = tr.states[k].x;
    series.push_back(std::move(xs));
  }
  return make_windows(series, norm);
}

TrainResult train(Network& net, std::span<const TrainWindow> windows, const TrainConfig& cfg) {
  if (windows.empty()) throw TrainingError("no training windows");
  if (!(cfg.learning_rate >= 0.0) || !(cfg.huber_delta > 0.0) || cfg.batch_size == 0) {
    throw ParameterError("invalid LSTM training configuration");
  }
  net.set_train_config(cfg);

  const auto n = windows.size();
  const auto P = net.parameters().size();
  VectorXd m = VectorXd::Zero(P), v = VectorXd::Zero(P), grad(P);
  std::vector<std::size_t> order(n);
  std::vector<double> window_loss(n), batch_loss;
  std::vector<const TrainWindow*> batch;
  double lr = cfg.learning_rate;
  std::uint64_t step = 0;

  TrainResult result;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(cfg.seed, "lstm-epoch", static_cast<std::int64_t>(epoch)));
    rng.shuffle(order);

    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const auto end = std::min(n, start + cfg.batch_size);
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(&windows[order[i]]);
      batch_loss.assign(batch.size(), 0.0);
      const double loss = net.loss_and_gradient(batch, cfg.huber_delta, &grad, batch_loss);
      if (!std::isfinite(loss) || !grad.allFinite()) {
        throw TrainingError("LSTM loss diverged at epoch " + std::to_string(epoch) + ", batch starting at " +
                            std::to_string(start));
      }
      for (std::size_t i = start; i < end; ++i) window_loss[order[i]] = batch_loss[i - start];

      const double norm = grad.norm();
      if (cfg.clip_norm > 0.0 && norm > cfg.clip_norm) grad *= cfg.clip_norm / norm;
      ++step;
      m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad;
      v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad.cwiseProduct(grad);
      const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
      net.parameters().array() -=
          lr * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg.adam_epsilon);
    }
    if (!net.parameters().allFinite()) {
      throw TrainingError("LSTM weights became non-finite at epoch " + std::to_string(epoch));
    }
    // Summed in window order so identical parameters give identical totals.
    double total = 0.0;
    for (double l : window_loss) total += l;
    result.loss_history.push_back(total / static_cast<double>(n));
    lr *= cfg.lr_decay;
  }
  return result;
}

std::vector<double> pretrain_neighbor(const Network& net, std::span<const double> initial, std::size_t horizon_steps,
                                      LaneTag expected_lane) {
  if (net.lane() != expected_lane) {
    throw ParameterError(std::string("model trained on the ") + std::string(lane_tag_name(net.lane())) +
                         " lane cannot predict " + std::string(lane_tag_name(expected_lane)) + "-lane vehicles");
  }
  if (initial.size() != kWindowInput) throw ParameterError("neighbor rollout needs exactly 20 initial positions");
  const double scale = net.normalization().scale;
  std::vector<double> seq(initial.begin(), initial.end());
  seq.reserve(kWindowInput + horizon_steps);
  std::vector<double> window(kWindowInput);
  for (std::size_t k = 0; k < horizon_steps; ++k) {
    const double* w = seq.data() + seq.size() - kWindowInput;
    const double ref = w[0];
    for (std::size_t j = 0; j < kWindowInput; ++j) window[j] = (w[j] - ref) / scale;
    seq.push_back(ref + net.predict(window) * scale);
  }
  return {seq.begin() + static_cast<long>(kWindowInput), seq.end()};
}

ingest::Kinematics derive_neighbor_kinematics(std::span<const double> positions, double dt) {
  return ingest::differentiate_kinematics(positions, dt);
}

void save_network(std::ostream& out, const Network& net) {
  const auto& c = net.train_config();
  nlohmann::json j{
      {"format", "mergecast-lstm"},
      {"version", 1},
      {"lane", lane_tag_name(net.lane())},
      {"layers", net.shape().layers},
      {"hidden", net.shape().hidden},
      {"input_size", net.shape().input_size},
      {"input_steps", kWindowInput},
      {"normalization", {{"reference", "window-first"}, {"scale", net.normalization().scale}}},
      {"seed", net.seed()},
      {"train_config",
       {{"learning_rate", c.learning_rate}, {"beta1", c.beta1}, {"beta2", c.beta2}, {"adam_epsilon", c.adam_epsilon},
        {"huber_delta", c.huber_delta}, {"batch_size", c.batch_size}, {"epochs", c.epochs},
        {"clip_norm", c.clip_norm}, {"lr_decay", c.lr_decay}, {"seed", c.seed}}},
  };
  const auto& p = net.parameters();
  j["parameters"] = std::vector<double>(p.data(), p.data() + p.size());
  out << j.dump() << '\n';
}

void save_network(const std::filesystem::path& path, const Network& net) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write model file " + path.string());
  save_network(out, net);
}

Network load_network(std::istream& in) {
  nlohmann::json j;
  try {
    in >> j;
    if (j.at("format").get<std::string>() != "mergecast-lstm") throw Error("not an LSTM model file");
    NetworkShape shape{j.at("layers").get<std::size_t>(), j.at("hidden").get<std::size_t>(),
                       j.at("input_size").get<std::size_t>()};
    auto lane = lane_tag_from_name(j.at("lane").get<std::string>());
    if (!lane) throw Error("unknown lane tag in model file");
    Normalization norm{j.at("normalization").at("scale").get<double>()};
    Network net(shape, *lane, j.at("seed").get<std::uint64_t>(), norm);
    const auto params = j.at("parameters").get<std::vector<double>>();
    if (params.size() != net.parameter_count()) throw Error("model file parameter count does not match its shape");
    for (std::size_t i = 0; i < params.size(); ++i) net.theta_[static_cast<Eigen::Index>(i)] = params[i];
    const auto& tc = j.at("train_config");
    TrainConfig cfg;
    cfg.learning_rate = tc.at("learning_rate").get<double>();
    cfg.beta1 = tc.at("beta1").get<double>();
    cfg.beta2 = tc.at("beta2").get<double>();
    cfg.adam_epsilon = tc.at("adam_epsilon").get<double>();
    cfg.huber_delta = tc.at("huber_delta").get<double>();
    cfg.batch_size = tc.at("batch_size").get<std::size_t>();
    cfg.epochs = tc.at("epochs").get<std::size_t>();
    cfg.clip_norm = tc.at("clip_norm").get<double>();
    cfg.lr_decay = tc.at("lr_decay").get<double>();
    cfg.seed = tc.at("seed").get<std::uint64_t>();
    net.train_cfg_ = cfg;
    return net;
  } catch (const nlohmann::json::exception& ex) {
    throw Error(std::string("malformed model file: ") + ex.what());
  }
}

Network load_network(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open model file " + path.string());
  return load_network(in);
}

}  // namespace mergecast::lstm
