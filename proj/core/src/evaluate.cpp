#include "mfsr/evaluate.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "mfsr/errors.hpp"

namespace mfsr {

namespace {

constexpr double kPi = 3.14159265358979323846;

void require_velocity_frame(const Field4& f, int frame, const char* who) {
  if (frame < 0 || frame >= f.extent(kAxisT)) {
    throw std::invalid_argument(std::string(who) + ": frame index out of range");
  }
  if (f.n_channels() < 4) {
    throw std::invalid_argument(std::string(who) + ": field lacks velocity channels");
  }
}

}  // namespace

const std::array<const char*, kNumMetrics> kMetricNames = {
    "e_tot",   "u_rms", "dissipation",    "taylor_lambda", "re_lambda",
    "tau_eta", "eta",   "integral_scale", "eddy_turnover"};

std::array<std::optional<double>, kNumMetrics> metric_values(const FrameMetrics& m) {
  return {m.e_tot,   m.u_rms, m.dissipation,    m.taylor_lambda, m.re_lambda,
          m.tau_eta, m.eta,   m.integral_scale, m.eddy_turnover};
}

double total_kinetic_energy(const Field4& f, int frame) {
  require_velocity_frame(f, frame, "total_kinetic_energy");
  const int nz = f.extent(kAxisZ);
  const int nx = f.extent(kAxisX);
  double acc = 0.0;
  for (int z = 0; z < nz; ++z) {
    for (int x = 0; x < nx; ++x) {
      const double u = f.at(kChanU, frame, z, x);
      const double w = f.at(kChanW, frame, z, x);
      acc += u * u + w * w;
    }
  }
  return 0.5 * acc / (static_cast<double>(nz) * nx);
}

double rms_velocity(double e_tot) {
  if (e_tot < 0.0) throw std::invalid_argument("rms_velocity: negative kinetic energy");
  return std::sqrt(2.0 * e_tot / 3.0);
}

namespace {

// Second-order stencils written as grouped node differences so constant
// fields differentiate to exactly zero.
double ddx_periodic(const Field4& f, int c, int t, int z, int x, double inv_2dx) {
  const int nx = f.extent(kAxisX);
  const int xm = (x == 0) ? nx - 1 : x - 1;
  const int xp = (x == nx - 1) ? 0 : x + 1;
  return (f.at(c, t, z, xp) - f.at(c, t, z, xm)) * inv_2dx;
}

double ddz_walls(const Field4& f, int c, int t, int z, int x, double inv_2dz) {
  const int nz = f.extent(kAxisZ);
  if (z == 0) {
    const double a = f.at(c, t, 1, x) - f.at(c, t, 0, x);
    const double b = f.at(c, t, 2, x) - f.at(c, t, 0, x);
    return (4.0 * a - b) * inv_2dz;
  }
  if (z == nz - 1) {
    const double a = f.at(c, t, nz - 1, x) - f.at(c, t, nz - 2, x);
    const double b = f.at(c, t, nz - 1, x) - f.at(c, t, nz - 3, x);
    return (4.0 * a - b) * inv_2dz;
  }
  return (f.at(c, t, z + 1, x) - f.at(c, t, z - 1, x)) * inv_2dz;
}

}  // namespace

double dissipation(const Field4& f, int frame, double nu) {
  require_velocity_frame(f, frame, "dissipation");
  const int nz = f.extent(kAxisZ);
  const int nx = f.extent(kAxisX);
  if (nz < 3 || nx < 3) {
    throw std::invalid_argument("dissipation: need at least 3 nodes per axis");
  }
  const double inv_2dx = 1.0 / (2.0 * f.spacing[2]);
  const double inv_2dz = 1.0 / (2.0 * f.spacing[1]);
  double acc = 0.0;
  for (int z = 0; z < nz; ++z) {
    for (int x = 0; x < nx; ++x) {
      const double dudx = ddx_periodic(f, kChanU, frame, z, x, inv_2dx);
      const double dudz = ddz_walls(f, kChanU, frame, z, x, inv_2dz);
      const double dwdx = ddx_periodic(f, kChanW, frame, z, x, inv_2dx);
      const double dwdz = ddz_walls(f, kChanW, frame, z, x, inv_2dz);
      const double s_xz = 0.5 * (dudz + dwdx);
      acc += dudx * dudx + dwdz * dwdz + 2.0 * s_xz * s_xz;
    }
  }
  return 2.0 * nu * acc / (static_cast<double>(nz) * nx);
}

DerivedScales derived_scales(double u_rms, double eps, double nu) {
  if (!(eps > 0.0)) throw std::domain_error("derived_scales: dissipation must be positive");
  if (!(nu > 0.0)) throw std::domain_error("derived_scales: viscosity must be positive");
  DerivedScales s;
  s.taylor_lambda = std::sqrt(15.0 * nu * u_rms * u_rms / eps);
  s.re_lambda = u_rms * s.taylor_lambda / nu;
  s.tau_eta = std::sqrt(nu / eps);
  s.eta = std::pow(nu, 0.75) * std::pow(eps, -0.25);
  return s;
}

std::vector<double> energy_spectrum(const Field4& f, int frame) {
  require_velocity_frame(f, frame, "energy_spectrum");
  const int nz = f.extent(kAxisZ);
  const int nx = f.extent(kAxisX);
  if (nx < 4) throw std::invalid_argument("energy_spectrum: x extent must be at least 4");
  const int kmax = nx / 2;
  const double inv_n2 = 1.0 / (static_cast<double>(nx) * nx);
  std::vector<double> ek(static_cast<std::size_t>(kmax), 0.0);
  for (int z = 0; z < nz; ++z) {
    for (int k = 1; k <= kmax; ++k) {
      double re_u = 0.0, im_u = 0.0, re_w = 0.0, im_w = 0.0;
      for (int x = 0; x < nx; ++x) {
        const double ang = -2.0 * kPi * k * x / nx;
        const double c = std::cos(ang);
        const double s = std::sin(ang);
        const double u = f.at(kChanU, frame, z, x);
        const double w = f.at(kChanW, frame, z, x);
        re_u += u * c;
        im_u += u * s;
        re_w += w * c;
        im_w += w * s;
      }
      // conjugate-pair weight; the Nyquist bin (2k == nx) is its own pair
      const double pair = (2 * k == nx) ? 1.0 : 2.0;
      ek[static_cast<std::size_t>(k - 1)] +=
          0.5 * pair * inv_n2 * (re_u * re_u + im_u * im_u + re_w * re_w + im_w * im_w);
    }
  }
  for (double& e : ek) e /= nz;
  return ek;
}

double mean_flow_energy(const Field4& f, int frame) {
  require_velocity_frame(f, frame, "mean_flow_energy");
  const int nz = f.extent(kAxisZ);
  const int nx = f.extent(kAxisX);
  double acc = 0.0;
  for (int z = 0; z < nz; ++z) {
    double mu = 0.0, mw = 0.0;
    for (int x = 0; x < nx; ++x) {
      mu += f.at(kChanU, frame, z, x);
      mw += f.at(kChanW, frame, z, x);
    }
    mu /= nx;
    mw /= nx;
    acc += mu * mu + mw * mw;
  }
  return 0.5 * acc / nz;
}

double integral_scale(const std::vector<double>& spectrum, double u_rms) {
  if (!(u_rms > 0.0)) throw std::domain_error("integral_scale: u_rms must be positive");
  if (spectrum.empty()) throw std::invalid_argument("integral_scale: empty spectrum");
  double sum = 0.0;
  for (std::size_t i = 0; i < spectrum.size(); ++i) {
    sum += spectrum[i] / static_cast<double>(i + 1);
  }
  return kPi / (2.0 * u_rms * u_rms) * sum;
}

double eddy_turnover(double l, double u_rms) {
  if (!(u_rms > 0.0)) throw std::domain_error("eddy_turnover: u_rms must be positive");
  return l / u_rms;
}

FrameMetrics frame_metrics(const Field4& f, int frame, const PhysicsParams& params) {
  const double nu = params.nu_eff();
  FrameMetrics m;
  m.e_tot = total_kinetic_energy(f, frame);
  m.u_rms = rms_velocity(m.e_tot);
  m.dissipation = dissipation(f, frame, nu);
  if (m.dissipation > 0.0) {
    const DerivedScales s = derived_scales(m.u_rms, m.dissipation, nu);
    m.taylor_lambda = s.taylor_lambda;
    m.re_lambda = s.re_lambda;
    m.tau_eta = s.tau_eta;
    m.eta = s.eta;
  }
  if (m.u_rms > 0.0) {
    m.integral_scale = integral_scale(energy_spectrum(f, frame), m.u_rms);
    m.eddy_turnover = eddy_turnover(*m.integral_scale, m.u_rms);
  }
  return m;
}

namespace {

void require_series(const std::vector<double>& pred, const std::vector<double>& gt,
                    const char* who) {
  if (pred.size() != gt.size()) {
    throw std::invalid_argument(std::string(who) + ": series length mismatch");
  }
  if (gt.size() < 2) {
    throw std::invalid_argument(std::string(who) + ": need at least two frames");
  }
}

}  // namespace

double nmae(const std::vector<double>& pred, const std::vector<double>& gt) {
  require_series(pred, gt, "nmae");
  double lo = gt[0], hi = gt[0], abs_sum = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    lo = std::min(lo, gt[i]);
    hi = std::max(hi, gt[i]);
    abs_sum += std::fabs(pred[i] - gt[i]);
  }
  if (!(hi > lo)) throw std::invalid_argument("nmae: constant ground-truth series");
  return abs_sum / static_cast<double>(gt.size()) / (hi - lo);
}

double r2(const std::vector<double>& pred, const std::vector<double>& gt) {
  require_series(pred, gt, "r2");
  double mean = 0.0;
  for (double g : gt) mean += g;
  mean /= static_cast<double>(gt.size());
  double sse = 0.0, sst = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    sse += (pred[i] - gt[i]) * (pred[i] - gt[i]);
    sst += (gt[i] - mean) * (gt[i] - mean);
  }
  if (!(sst > 0.0)) throw std::invalid_argument("r2: constant ground-truth series");
  return 1.0 - sse / sst;
}

MetricsReport evaluate_all(const Field4& pred, const Field4& gt, const PhysicsParams& params) {
  if (pred.channels != gt.channels) {
    throw std::invalid_argument("evaluate_all: channel mismatch");
  }
  for (int a = 0; a < 3; ++a) {
    if (pred.extent(a) != gt.extent(a)) {
      throw std::invalid_argument("evaluate_all: shape mismatch");
    }
    const double scale = std::max({1.0, std::fabs(gt.spacing[a]), std::fabs(gt.origin[a])});
    if (std::fabs(pred.spacing[a] - gt.spacing[a]) > 1e-9 * scale ||
        std::fabs(pred.origin[a] - gt.origin[a]) > 1e-9 * scale) {
      throw std::invalid_argument("evaluate_all: grid geometry mismatch");
    }
  }
  const int nt = gt.extent(kAxisT);
  if (nt < 2) throw std::invalid_argument("evaluate_all: need at least two frames");

  std::vector<std::array<std::optional<double>, kNumMetrics>> mp, mg;
  mp.reserve(static_cast<std::size_t>(nt));
  mg.reserve(static_cast<std::size_t>(nt));
  for (int t = 0; t < nt; ++t) {
    mp.push_back(metric_values(frame_metrics(pred, t, params)));
    mg.push_back(metric_values(frame_metrics(gt, t, params)));
  }

  MetricsReport report;
  double r2_sum = 0.0;
  int r2_count = 0;
  for (int i = 0; i < kNumMetrics; ++i) {
    MetricRow row;
    row.name = kMetricNames[static_cast<std::size_t>(i)];
    // Derived scales can be missing on quiescent frames (eps or u_rms zero);
    // the series are compared over the frames where both sides define the
    // metric. A row with fewer than two such frames, or a constant ground
    // truth, stays undefined.
    std::vector<double> ps, gs;
    for (int t = 0; t < nt; ++t) {
      const auto& pv = mp[static_cast<std::size_t>(t)][static_cast<std::size_t>(i)];
      const auto& gv = mg[static_cast<std::size_t>(t)][static_cast<std::size_t>(i)];
      if (!pv || !gv) continue;
      ps.push_back(*pv);
      gs.push_back(*gv);
    }
    bool complete = gs.size() >= 2;
    if (complete) {
      const auto [lo, hi] = std::minmax_element(gs.begin(), gs.end());
      complete = *hi > *lo;
    }
    if (complete) {
      row.defined = true;
      row.nmae_x100 = 100.0 * nmae(ps, gs);
      row.r2 = r2(ps, gs);
      r2_sum += row.r2;
      ++r2_count;
    }
    report.rows.push_back(std::move(row));
  }
  report.avg_r2 = r2_count > 0 ? r2_sum / r2_count
                               : std::numeric_limits<double>::quiet_NaN();
  return report;
}

std::string report_csv(const MetricsReport& report) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "metric,nmae_x100,r2\n";
  for (const auto& row : report.rows) {
    os << row.name << ',';
    if (row.defined) {
      os << row.nmae_x100 << ',' << row.r2;
    } else {
      os << ',';
    }
    os << '\n';
  }
  os << "avg_r2,," << report.avg_r2 << '\n';
  return os.str();
}

std::string report_json(const MetricsReport& report) {
  nlohmann::json j;
  j["gamma"] = report.gamma ? nlohmann::json(*report.gamma) : nlohmann::json(nullptr);
  j["dataset_id"] = report.dataset_id;
  j["model_id"] = report.model_id;
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : report.rows) {
    nlohmann::json r;
    r["name"] = row.name;
    if (row.defined) {
      r["nmae_x100"] = row.nmae_x100;
      r["r2"] = row.r2;
    }
    rows.push_back(std::move(r));
  }
  j["metrics"] = std::move(rows);
  if (std::isnan(report.avg_r2)) {
    j["avg_r2"] = nullptr;
  } else {
    j["avg_r2"] = report.avg_r2;
  }
  return j.dump(2);
}

MetricsReport report_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("MetricsReport: invalid JSON: ") + e.what());
  }
  try {
    MetricsReport report;
    if (!j.at("gamma").is_null()) report.gamma = j.at("gamma").get<double>();
    report.dataset_id = j.at("dataset_id").get<std::string>();
    report.model_id = j.at("model_id").get<std::string>();
    for (const auto& r : j.at("metrics")) {
      MetricRow row;
      row.name = r.at("name").get<std::string>();
      if (r.contains("nmae_x100")) {
        row.defined = true;
        row.nmae_x100 = r.at("nmae_x100").get<double>();
        row.r2 = r.at("r2").get<double>();
      }
      report.rows.push_back(std::move(row));
    }
    report.avg_r2 = j.at("avg_r2").is_null() ? std::numeric_limits<double>::quiet_NaN()
                                             : j.at("avg_r2").get<double>();
    return report;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("MetricsReport: malformed report: ") + e.what());
  }
}

}  // namespace mfsr
