#pragma once

// Stacked LSTM sequence model that predicts a neighbor's next longitudinal
// position from the previous 20 positions, trained with Huber loss and Adam.

#include <Eigen/Dense>

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "mergecast/ingest.hpp"
#include "mergecast/types.hpp"

namespace mergecast::lstm {

inline constexpr std::size_t kWindowInput = 20;
inline constexpr std::size_t kWindowLength = kWindowInput + 1;

/// Which lane's traffic a model was trained on. Models are never applied to
/// the other lane.
enum class LaneTag : std::uint8_t { kRamp, kAdjacent };
std::string_view lane_tag_name(LaneTag t) noexcept;
std::optional<LaneTag> lane_tag_from_name(std::string_view s) noexcept;

struct NetworkShape {
  std::size_t layers = 4;   ///< 2 encoding + 2 decoding
  std::size_t hidden = 100;
  std::size_t input_size = 1;
};

/// Positions enter the network relative to the first sample of their window,
/// divided by `scale` meters.
struct Normalization {
  double scale = 100.0;
};

struct TrainWindow {
  std::array<double, kWindowInput> input{};
  double target = 0.0;
};

struct TrainConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  double huber_delta = 1.0;
  std::size_t batch_size = 64;
  std::size_t epochs = 100;
  double clip_norm = 5.0;
  /// Multiplies the learning rate after every epoch; 1 keeps it constant.
  double lr_decay = 1.0;
  std::uint64_t seed = 7;
};

/// LSTM stack with a linear output head. All parameters live in one flat
/// vector; layer matrices are views into it.
///
/// Per layer the block is [W_in (4H x in), W_rec (4H x H), b (4H)] with gate
/// rows ordered input, forget, candidate, output. The head is [w (H), b (1)].
class Network {
 public:
  Network() = default;
  Network(NetworkShape shape, LaneTag lane, std::uint64_t seed, Normalization norm = {});

  const NetworkShape& shape() const noexcept { return shape_; }
  LaneTag lane() const noexcept { return lane_; }
  const Normalization& normalization() const noexcept { return norm_; }
  std::uint64_t seed() const noexcept { return seed_; }

  Eigen::VectorXd& parameters() noexcept { return theta_; }
  const Eigen::VectorXd& parameters() const noexcept { return theta_; }
  std::size_t parameter_count() const noexcept { return static_cast<std::size_t>(theta_.size()); }

  /// Offsets of each parameter block in the flat vector.
  struct Layout {
    std::size_t w_in, w_rec, bias, in_size;
  };
  Layout layer_layout(std::size_t layer) const;
  std::size_t head_offset() const noexcept;

  /// Predicts the next (normalized) value for each column of `inputs`
  /// (steps x batch).
  Eigen::RowVectorXd predict(const Eigen::MatrixXd& inputs) const;
  double predict(std::span<const double> input) const;

  /// Mean Huber loss over the windows; fills `grad` (same size as the
  /// parameters) when non-null. `per_window` receives each window's loss.
  double loss_and_gradient(std::span<const TrainWindow* const> batch, double huber_delta, Eigen::VectorXd* grad,
                           std::span<double> per_window = {}) const;

  void set_train_config(const TrainConfig& cfg) { train_cfg_ = cfg; }
  const TrainConfig& train_config() const noexcept { return train_cfg_; }

 private:
  NetworkShape shape_;
  LaneTag lane_ = LaneTag::kRamp;
  Normalization norm_;
  std::uint64_t seed_ = 0;
  TrainConfig train_cfg_;
  Eigen::VectorXd theta_;

  friend Network load_network(std::istream& in);
};

/// Huber loss of a residual.
double huber(double r, double delta) noexcept;

/// Every run of 21 consecutive samples (stride 1) becomes one window.
std::vector<TrainWindow> make_windows(std::span<const Track> tracks, const Normalization& norm = {});
std::vector<TrainWindow> make_windows(std::span<const std::vector<double>> position_series,
                                      const Normalization& norm = {});

struct TrainResult {
  std::vector<double> loss_history;  ///< mean training loss per epoch
};

/// Adam on mean Huber loss with global-norm gradient clipping. Windows are
/// visited in a seeded shuffled order per epoch. Throws TrainingError when the
/// loss becomes non-finite.
TrainResult train(Network& net, std::span<const TrainWindow> windows, const TrainConfig& cfg);

/// Autoregressive rollout: each prediction is appended and the 20-step input
/// slides forward. Returns `horizon_steps` positions in meters.
std::vector<double> pretrain_neighbor(const Network& net, std::span<const double> initial, std::size_t horizon_steps,
                                      LaneTag expected_lane);

/// Velocity and acceleration of a predicted position sequence (same stencils
/// as the ingest stage).
ingest::Kinematics derive_neighbor_kinematics(std::span<const double> positions, double dt);

void save_network(std::ostream& out, const Network& net);
void save_network(const std::filesystem::path& path, const Network& net);
Network load_network(std::istream& in);
Network load_network(const std::filesystem::path& path);

}  // namespace mergecast::lstm
