#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mfsr/field.hpp"
#include "mfsr/jet.hpp"
#include "mfsr/nn.hpp"
#include "mfsr/unet.hpp"

namespace mfsr {

struct MLPConfig {
  int n_c = 32;                              // latent width; in_dim = 3 + n_c
  std::vector<int> hidden = {64, 64, 64, 64};
  int out_dim = 4;
  ad::Activation act = ad::Activation::Swish;  // must be twice differentiable

  int in_dim() const { return 3 + n_c; }
};

// A batch of continuous query points in physical (t, z, x) units, optionally
// paired with ground-truth targets for the prediction loss.
struct QueryBatch {
  std::vector<std::array<double, 3>> points;
  ad::Tensor targets;      // [N, out_dim] or undefined
  std::string window_ref;  // provenance of the source window
};

// Decode result. Derivative blocks are present iff requested; d1 holds one
// [N, m] tensor per coordinate axis, d2_zz/d2_xx the spatial second
// derivatives used by the equation residuals. All in physical units.
struct DecodedSample {
  ad::Tensor y;                   // [N, m]
  std::array<ad::Tensor, 3> d1;   // each [N, m]
  ad::Tensor d2_zz;               // [N, m]
  ad::Tensor d2_xx;               // [N, m]
  bool has_derivs = false;
};

// One interpolation cell: lower-vertex physical coordinates plus spacing.
struct CellRef {
  std::array<double, 3> lo;
  std::array<double, 3> spacing;
};

// Vertex j is indexed bt*4 + bz*2 + bx over the (t, z, x) upper/lower bits.
struct TrilinearStencil {
  std::array<double, 8> weights;                 // >= 0, sum 1 (to 1 ulp)
  std::array<std::array<double, 3>, 8> rel;      // (x_i - x_j)/delta, in [-1, 1]
};

// Trilinear weights and stencil-normalized relative coordinates of a point
// inside a cell (boundary inclusive). The largest weight is recomputed as
// one minus the compensated sum of the others, pinning the partition of
// unity to within an ulp.
TrilinearStencil trilinear_weights(const std::array<double, 3>& point, const CellRef& cell);

// The MLP applied at bounding vertices (Φ): takes [rel_coords, latent] rows.
class ContinuousDecoder {
 public:
  ContinuousDecoder(const MLPConfig& cfg, std::uint64_t seed);

  const MLPConfig& config() const { return cfg_; }

  // Plain value pass: in [R, 3 + n_c] -> [R, out_dim].
  ad::Tensor forward(const ad::Tensor& in) const;

  // Jet pass for coordinate derivatives; components shaped like forward().
  ad::Jet forward(const ad::Jet& in) const;

  std::vector<NamedParam> parameters() const;
  ContinuousDecoder clone() const;

 private:
  ContinuousDecoder() = default;

  MLPConfig cfg_;
  std::vector<LinearParam> layers_;
};

// Continuous decode of a latent grid at arbitrary interior points: blends the
// MLP evaluated at the 8 bounding vertices of each point's cell with
// trilinear weights. With want_derivs, relative coordinates are seeded as
// jets (first derivative 1/spacing, making outputs physical units) and the
// weight product rule is applied across vertices. Everything is recorded on
// the active tape, so losses over values or derivatives reach both the MLP
// and, through the gathered latents, the encoder.
DecodedSample query(const LatentContextGrid& grid, const ContinuousDecoder& mlp,
                    const QueryBatch& batch, bool want_derivs);

// Encode-then-decode to a regular grid with target_res nodes per (t, z, x)
// axis spanning the low-resolution field's bounding box. Any target
// resolution is legal. Node i of n sits at lo + (span * i)/(n - 1).
Field4 superresolve(const ContextGenerator& gen, const ContinuousDecoder& mlp,
                    const Field4& lr, const std::array<int, 3>& target_res);

}  // namespace mfsr
