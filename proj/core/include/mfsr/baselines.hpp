#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "mfsr/dataset.hpp"
#include "mfsr/field.hpp"
#include "mfsr/train.hpp"
#include "mfsr/unet.hpp"

namespace mfsr {

// Baseline (I): plain trilinear interpolation of the LR grid at target_res
// nodes spanning the LR bounding box — the same output grid superresolve
// uses, so reconstructions are directly comparable. Training-free and
// deterministic: identical inputs give bit-identical outputs.
Field4 trilinear_upsample(const Field4& lr, const std::array<int, 3>& target_res);

// Baseline (II): the same encoder as the continuous model, continued with a
// discrete convolutional decoder instead of coordinate queries. Each stage is
// nearest-neighbour upsampling followed by a 3x3x3 convolution; upscale
// factors must be powers of two, and axes that finish doubling early (t at
// x4 vs x8 in space) keep a factor-1 refinement conv in the remaining
// stages. Stage widths halve from n_c down to a floor of 4, then a 1x1x1
// head maps to the field channels.
struct DiscreteSRConfig {
  UNetConfig unet;
  std::array<int, 3> upscale{4, 8, 8};  // (t, z, x), each a power of two

  void validate() const;
  // Per-stage upsample factors, e.g. (4,8,8) -> (2,2,2),(2,2,2),(1,2,2).
  std::vector<std::array<int, 3>> stage_plan() const;
};

class DiscreteSRModel {
 public:
  DiscreteSRModel(const DiscreteSRConfig& cfg, std::uint64_t seed);

  // [C, t, z, x] -> [C, t*up_t, z*up_z, x*up_x], taped.
  ad::Tensor forward(const ad::Tensor& lr) const;

  // Field path (inference, no tape): node d*i of the output coincides with
  // LR node i, so the grid matches the HR grid the LR field was strided
  // from — including the (d - 1)-node strip past the last LR sample.
  Field4 reconstruct(const Field4& lr) const;

  std::vector<NamedParam> parameters() const;
  DiscreteSRModel clone() const;
  const DiscreteSRConfig& config() const { return cfg_; }

 private:
  DiscreteSRModel(const DiscreteSRConfig& cfg, ContextGenerator encoder);

  DiscreteSRConfig cfg_;
  ContextGenerator encoder_;
  std::vector<ConvParam> stages_;
  ConvParam head_;
};

// Supervised training of Baseline (II) on (LR crop, HR block) pairs with the
// prediction loss only — no coordinate queries, no equation term (gamma is
// ignored). Shares the window sampler, Adam settings, and epoch layout with
// train(); always runs a single worker. cfg.upscale must equal the dataset's
// (d_t, d_s, d_s).
struct DiscreteBaselineResult {
  DiscreteSRModel model;
  std::vector<EpochLoss> history;
};

DiscreteBaselineResult train_discrete_baseline(const TrainConfig& cfg,
                                               const LossConfig& loss_cfg, const Dataset& ds);

}  // namespace mfsr
