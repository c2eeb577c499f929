#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mfsr/dataset.hpp"
#include "mfsr/decoder.hpp"
#include "mfsr/physics.hpp"
#include "mfsr/unet.hpp"

namespace mfsr {

enum class PredNorm { L1, L2, Huber };
PredNorm pred_norm_from_string(const std::string& s);  // "l1" | "l2" | "huber"
std::string to_string(PredNorm n);
std::string to_string(ad::Activation a);
ad::Activation activation_from_string(const std::string& s);

struct LossConfig {
  double gamma = 0.05;           // equation-loss weight
  PredNorm pred_norm = PredNorm::L1;
  double huber_delta = 1.0;
  double weight_decay = 0.0;     // l1 coefficient on parameters
  std::string pde_id = "rayleigh_benard_2d";

  void validate() const;  // gamma >= 0, huber_delta > 0, weight_decay >= 0
};

// One optimizer step consumes batch_windows (window, point-batch) draws;
// samples_per_epoch such draws make an epoch, so samples_per_epoch must
// divide by batch_windows, and batch_windows by n_workers (each worker owns
// an equal shard of every step).
struct TrainConfig {
  double lr = 1e-2;
  int epochs = 100;
  int samples_per_epoch = 3000;
  int points_per_window = 512;          // |B^i|
  int batch_windows = 4;                // |B|
  std::uint64_t seed = 0;
  int n_workers = 1;
  std::array<int, 3> lr_window{4, 8, 8};  // LR crop extents (t, z, x)
  std::array<int, 3> upscale{4, 8, 8};    // dataset (d_t, d_s, d_s) this model targets
  UNetConfig unet;
  MLPConfig mlp;

  void validate() const;
};

// ---------------------------------------------------------------------------
// Losses. All return taped scalar tensors ([1]).

// Mean over all elements of the per-element norm of (pred - gt); the
// operands may have any equal shape (continuous queries use [N, m] batches,
// the discrete baseline full [C, T, Z, X] blocks).
ad::Tensor prediction_loss(const ad::Tensor& pred, const ad::Tensor& gt,
                           const LossConfig& cfg);

// Mean over points and the four residual components of the per-element norm
// (the same selectable norm as the prediction loss).
ad::Tensor equation_loss(const ResidualBatch& r, const LossConfig& cfg);

// lp + gamma*le + weight_decay*sum|theta|.
ad::Tensor total_loss(const ad::Tensor& lp, const ad::Tensor& le, const LossConfig& cfg,
                      const std::vector<NamedParam>& params);

// ---------------------------------------------------------------------------
// Query sampling.

// Physical bounding box of one training window (an LR crop).
struct SampleWindow {
  std::array<double, 3> lo{0.0, 0.0, 0.0};
  std::array<double, 3> hi{0.0, 0.0, 0.0};
};

// Uniform random points over the window box, with ground-truth targets
// interpolated trilinearly from the HR grid. The window must lie inside the
// HR bounding box. Deterministic given the rng state.
QueryBatch sample_query_points(const Field4& hr, const SampleWindow& window, int n_points,
                               Rng& rng);

// Decoded normalized outputs -> per-channel jets in physical units: values
// map through x*std + mean, derivatives scale by std alone. Requires a
// 4-channel decode with derivatives.
FieldJets physical_field_jets(const DecodedSample& out,
                              const std::vector<ChannelStats>& stats);

// ---------------------------------------------------------------------------
// Optimizer.

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Standard Adam with bias correction over a fixed parameter list. Parameter
// tensors are shared handles: step() updates the owning model in place,
// reading each tensor's accumulated gradient.
class Adam {
 public:
  explicit Adam(std::vector<NamedParam> params, AdamConfig cfg = {});

  void zero_grad();
  void step(double lr);
  long step_count() const { return t_; }

 private:
  std::vector<NamedParam> params_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  long t_ = 0;
};

// Deterministic all-reduce: replicas[w] lists the same parameters of the
// w-th model replica in identical order; gradients are averaged in ascending
// worker order and the averaged value written back into every replica's
// gradient buffer.
void average_gradients(const std::vector<std::vector<NamedParam>>& replicas);

// ---------------------------------------------------------------------------
// Training.

struct EpochLoss {
  double total = 0.0;
  double pred = 0.0;
  double eq = 0.0;
};

// "epoch,loss_total,loss_pred,loss_eq" header plus one row per epoch.
std::string loss_history_csv(const std::vector<EpochLoss>& history);

// Merges a {"train": {...}, "loss": {...}} JSON document into the given
// configs. Both sections and every key inside them are optional (absent keys
// keep their current values); unknown keys are rejected. Flag overrides are
// applied by the caller afterwards.
void apply_config_json(const std::string& text, TrainConfig& train_cfg, LossConfig& loss_cfg);

// The fully-resolved {"train": ..., "loss": ...} document, for config echoes.
std::string config_json_text(const TrainConfig& train_cfg, const LossConfig& loss_cfg);

struct CheckpointMeta {
  int version = 1;
  TrainConfig train;
  LossConfig loss;
  PhysicsParams physics;
  std::vector<std::string> channels;
  std::vector<ChannelStats> stats;  // HR statistics the model was trained in
  int epoch = 0;
  std::vector<EpochLoss> history;
  std::string rng_state;  // worker-0 sampler state at the end of training
};

struct TrainedModel {
  ContextGenerator gen;
  ContinuousDecoder dec;
  CheckpointMeta meta;
};

// Synchronous data-parallel training: n_workers model replicas each consume
// a disjoint shard of every step's window draws (per-worker rng = seed +
// worker index), gradients are averaged in fixed worker order, and the
// identical update is applied to every replica; replicas are verified
// bit-identical after each step. n_workers = 1 degenerates to plain
// single-threaded training with no behavioural difference.
TrainedModel train(const TrainConfig& cfg, const LossConfig& loss_cfg, const Dataset& ds);

// Alias kept for the multi-worker entry point; n_workers comes from cfg.
inline TrainedModel data_parallel_train(const TrainConfig& cfg, const LossConfig& loss_cfg,
                                        const Dataset& ds) {
  return train(cfg, loss_cfg, ds);
}

// MFSRCKP1 container: JSON manifest (config echo, epoch, loss history, rng
// state, parameter directory) followed by the parameter blob as little-endian
// f64 in manifest order, with a trailing CRC32. Round-trips bit-exactly.
void save_checkpoint(const TrainedModel& model, const std::string& path);
TrainedModel load_checkpoint(const std::string& path);

}  // namespace mfsr
