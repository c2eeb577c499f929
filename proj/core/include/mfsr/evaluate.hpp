#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "mfsr/field.hpp"
#include "mfsr/physics.hpp"

namespace mfsr {

// Turbulence statistics for a single time frame. The derived scales need a
// positive dissipation rate (and the sweep scales a nonzero u_rms); on
// degenerate frames they are absent rather than NaN.
struct FrameMetrics {
  double e_tot = 0.0;        // kinetic energy per unit mass, 0.5 * <u_i u_i>
  double u_rms = 0.0;        // sqrt((2/3) e_tot)
  double dissipation = 0.0;  // 2 nu <S_ij S_ij>
  std::optional<double> taylor_lambda;   // sqrt(15 nu u_rms^2 / eps)
  std::optional<double> re_lambda;       // u_rms lambda / nu
  std::optional<double> tau_eta;         // sqrt(nu / eps)
  std::optional<double> eta;             // nu^(3/4) eps^(-1/4)
  std::optional<double> integral_scale;  // pi/(2 u_rms^2) sum_k E(k)/k
  std::optional<double> eddy_turnover;   // L / u_rms
};

inline constexpr int kNumMetrics = 9;
extern const std::array<const char*, kNumMetrics> kMetricNames;

// Frame metrics in kMetricNames order (the first three are always present).
std::array<std::optional<double>, kNumMetrics> metric_values(const FrameMetrics& m);

struct MetricRow {
  std::string name;
  bool defined = false;  // false: constant ground truth or missing frame values
  double nmae_x100 = 0.0;
  double r2 = 0.0;
};

struct MetricsReport {
  std::vector<MetricRow> rows;  // kNumMetrics rows in canonical order
  double avg_r2 = 0.0;          // arithmetic mean of the defined rows' R2
  std::optional<double> gamma;  // metadata, filled by the caller
  std::string dataset_id;
  std::string model_id;
};

// --- per-frame building blocks ---------------------------------------------

// 0.5 * <u^2 + w^2> over the frame's (z, x) nodes.
double total_kinetic_energy(const Field4& f, int frame);

// sqrt((2/3) e_tot); the 3D convention factor is kept as-is for 2D data.
double rms_velocity(double e_tot);

// eps = 2 nu <S_ij S_ij>, i,j in {x, z}, with second-order central
// differences (periodic wrap in x, one-sided at the z walls). The stencils
// are grouped as differences of node values, so any constant (rigid
// translation) frame dissipates exactly zero.
double dissipation(const Field4& f, int frame, double nu);

struct DerivedScales {
  double taylor_lambda = 0.0;
  double re_lambda = 0.0;
  double tau_eta = 0.0;
  double eta = 0.0;
};

// Throws std::domain_error when eps <= 0 or nu <= 0 (scales undefined).
DerivedScales derived_scales(double u_rms, double eps, double nu);

// 1D kinetic-energy spectrum: DFT of u and w along the periodic x axis per
// z-row, averaged over z. Index i holds E(k = i + 1), k = 1 .. nx/2. The
// normalization is Parseval-consistent: sum_k E(k) + mean_flow_energy equals
// total_kinetic_energy up to round-off.
std::vector<double> energy_spectrum(const Field4& f, int frame);

// The k = 0 term the spectrum leaves out: 0.5 * <(x-mean u)^2 + (x-mean w)^2>
// averaged over z rows.
double mean_flow_energy(const Field4& f, int frame);

// L = pi/(2 u_rms^2) sum_k E(k)/k. Throws std::domain_error when u_rms <= 0.
double integral_scale(const std::vector<double>& spectrum, double u_rms);

// T_L = L / u_rms. Throws std::domain_error when u_rms <= 0.
double eddy_turnover(double l, double u_rms);

// All nine metrics of one frame; nu is params.nu_eff().
FrameMetrics frame_metrics(const Field4& f, int frame, const PhysicsParams& params);

// --- series scoring ---------------------------------------------------------

// NMAE = mean|pred - gt| / (max(gt) - min(gt)). Series of equal length >= 2;
// throws std::invalid_argument on mismatch or constant ground truth.
double nmae(const std::vector<double>& pred, const std::vector<double>& gt);

// R2 = 1 - sum (pred - gt)^2 / sum (gt - mean(gt))^2, same preconditions.
double r2(const std::vector<double>& pred, const std::vector<double>& gt);

// Per-frame metric series for both fields, then 100*NMAE and R2 per metric.
// Fields must agree in shape and geometry and hold at least two frames.
// Each series is compared over the frames where both sides define the metric
// (derived scales go missing on quiescent frames); rows with fewer than two
// shared frames or a constant ground-truth series are reported as not
// defined and excluded from avg_r2.
MetricsReport evaluate_all(const Field4& pred, const Field4& gt, const PhysicsParams& params);

// --- report serialization ----------------------------------------------------

// CSV: `metric,nmae_x100,r2` header, one row per metric (blank cells when not
// defined), and a final `avg_r2,,<value>` row.
std::string report_csv(const MetricsReport& report);

// JSON object with the same fields plus the metadata; parses back losslessly.
std::string report_json(const MetricsReport& report);
MetricsReport report_from_json(const std::string& text);

}  // namespace mfsr
