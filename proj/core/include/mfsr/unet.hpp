#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "mfsr/field.hpp"
#include "mfsr/nn.hpp"
#include "mfsr/tensor.hpp"

namespace mfsr {

struct UNetConfig {
  int in_channels = 4;
  int n_c = 32;        // latent channels
  int depth = 2;       // pooling levels; window extents must divide by 2^depth
  int base_width = 16; // channel width at the top level, doubled per level
  double norm_eps = 1e-5;
  // Per-instance normalization inside residue blocks. Turning it off makes
  // the network a pure convolution stack, which is exactly local: the
  // receptive-field and window-consistency properties only hold then, since
  // instance statistics couple every voxel to the whole window.
  bool use_norm = true;
};

// Latent context grid: one latent vector per low-resolution grid vertex,
// aligned with the input window (same spacing and origin).
struct LatentContextGrid {
  ad::Tensor data;  // [n_c, T, Z, X]
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  std::array<double, 3> origin{0.0, 0.0, 0.0};

  int extent(int axis) const { return data.extent(axis + 1); }
  double coord(int axis, int idx) const {
    return origin[static_cast<std::size_t>(axis)] +
           idx * spacing[static_cast<std::size_t>(axis)];
  }
};

// Bottleneck residue block: 1x1x1 -> norm -> relu -> 3x3x3 -> norm -> relu ->
// 1x1x1 -> norm, plus the skip (1x1x1 projection when widths differ), then a
// final relu. Mid width is max(c_out/2, 4).
struct ResidueBlockParams {
  int c_in = 0, c_mid = 0, c_out = 0;
  ConvParam c1, c2, c3;
  NormParam n1, n2, n3;
  ConvParam proj;  // w undefined when c_in == c_out
};

ResidueBlockParams make_residue_block(int c_in, int c_out, Rng& rng);
ad::Tensor residue_block(const ad::Tensor& x, const ResidueBlockParams& p,
                         const UNetConfig& cfg);

// 3D U-Net encoder producing the latent context grid (one latent vector per
// input vertex): contracting residue blocks with 2x max pooling, an expansive
// path with nearest upsampling and channel-concatenated skips, and a 1x1x1
// head to n_c channels.
class ContextGenerator {
 public:
  ContextGenerator(const UNetConfig& cfg, std::uint64_t seed);

  const UNetConfig& config() const { return cfg_; }

  // Raw tensor path: [in_channels, T, Z, X] -> [n_c, T, Z, X].
  ad::Tensor encode_tensor(const ad::Tensor& x) const;

  // Field path; carries the window geometry onto the latent grid.
  LatentContextGrid encode(const Field4& lr) const;

  // Stable construction-ordered parameter handles (shared storage).
  std::vector<NamedParam> parameters() const;

  ContextGenerator clone() const;

  // Conservative locality bound, in input voxels, of the pure convolution
  // stack (use_norm = false): how far an input perturbation can reach.
  int receptive_field_radius() const;

 private:
  ContextGenerator() = default;

  UNetConfig cfg_;
  std::vector<ResidueBlockParams> down_;  // one per level
  ResidueBlockParams bottom_;
  std::vector<ResidueBlockParams> up_;  // indexed by level, applied deep-to-shallow
  ConvParam head_;
};

}  // namespace mfsr
