#include "mfsr/dataset.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "mfsr/binio.hpp"
#include "mfsr/errors.hpp"
#include "mfsr/log.hpp"

namespace mfsr {

using nlohmann::json;

namespace {
constexpr char kMagic[9] = "MFSRDAT1";
}

Field4 downsample(const Field4& hr, int d_s, int d_t) {
  if (d_s < 1 || d_t < 1) throw std::invalid_argument("downsample: factors must be >= 1");
  for (int a = 0; a < 3; ++a) {
    const int d = a == kAxisT ? d_t : d_s;
    if (hr.extent(a) % d != 0) {
      throw DataError("downsample: extent " + std::to_string(hr.extent(a)) + " on axis " +
                      std::to_string(a) + " is not divisible by " + std::to_string(d));
    }
  }
  Field4 lr;
  lr.channels = hr.channels;
  lr.origin = hr.origin;
  lr.normalized = hr.normalized;
  const int nt = hr.extent(0) / d_t, nz = hr.extent(1) / d_s, nx = hr.extent(2) / d_s;
  lr.spacing = {hr.spacing[0] * d_t, hr.spacing[1] * d_s, hr.spacing[2] * d_s};
  lr.data = ad::Tensor({hr.n_channels(), nt, nz, nx});
  for (int c = 0; c < hr.n_channels(); ++c) {
    for (int it = 0; it < nt; ++it) {
      for (int iz = 0; iz < nz; ++iz) {
        for (int ix = 0; ix < nx; ++ix) {
          lr.at(c, it, iz, ix) = hr.at(c, it * d_t, iz * d_s, ix * d_s);
        }
      }
    }
  }
  return lr;
}

std::vector<ChannelStats> channel_stats(const Field4& f) {
  if (f.normalized) throw DataError("channel_stats: expected a physical field");
  const int per = f.extent(0) * f.extent(1) * f.extent(2);
  if (per < 2) throw std::invalid_argument("channel_stats: field too small");
  std::vector<ChannelStats> out(static_cast<std::size_t>(f.n_channels()));
  for (int c = 0; c < f.n_channels(); ++c) {
    const double* p = f.data.data() + static_cast<std::ptrdiff_t>(c) * per;
    double mean = 0.0;
    for (int i = 0; i < per; ++i) mean += p[i];
    mean /= per;
    double var = 0.0;
    for (int i = 0; i < per; ++i) var += (p[i] - mean) * (p[i] - mean);
    var /= per;
    if (!(var > 1e-24)) {
      throw DataError("channel_stats: channel '" + f.channels[static_cast<std::size_t>(c)] +
                      "' has (near-)zero variance");
    }
    out[static_cast<std::size_t>(c)] = {mean, std::sqrt(var)};
  }
  return out;
}

namespace {

void check_stats(const Field4& f, const std::vector<ChannelStats>& stats) {
  if (static_cast<int>(stats.size()) != f.n_channels()) {
    throw std::invalid_argument("normalize: stats/channel count mismatch");
  }
  for (const auto& s : stats) {
    if (!(s.std > 0.0)) throw DataError("normalize: non-positive channel std");
  }
}

}  // namespace

void normalize_field(Field4& f, const std::vector<ChannelStats>& stats) {
  check_stats(f, stats);
  if (f.normalized) throw DataError("normalize_field: field is already normalized");
  const int per = f.extent(0) * f.extent(1) * f.extent(2);
  for (int c = 0; c < f.n_channels(); ++c) {
    double* p = f.data.data() + static_cast<std::ptrdiff_t>(c) * per;
    const auto& s = stats[static_cast<std::size_t>(c)];
    for (int i = 0; i < per; ++i) p[i] = (p[i] - s.mean) / s.std;
  }
  f.normalized = true;
}

void denormalize_field(Field4& f, const std::vector<ChannelStats>& stats) {
  check_stats(f, stats);
  if (!f.normalized) throw DataError("denormalize_field: field is not normalized");
  const int per = f.extent(0) * f.extent(1) * f.extent(2);
  for (int c = 0; c < f.n_channels(); ++c) {
    double* p = f.data.data() + static_cast<std::ptrdiff_t>(c) * per;
    const auto& s = stats[static_cast<std::size_t>(c)];
    for (int i = 0; i < per; ++i) p[i] = p[i] * s.std + s.mean;
  }
  f.normalized = false;
}

void add_gaussian_noise(Field4& f, Rng& rng) {
  if (!f.normalized) {
    throw DataError("add_gaussian_noise: unit-variance noise is defined on normalized data");
  }
  double* p = f.data.data();
  for (int i = 0; i < f.data.size(); ++i) p[i] += rng.normal();
}

Dataset make_dataset(const SimConfig& cfg, int d_t, int d_s) {
  Dataset ds;
  ds.sim = cfg;
  ds.d_t = d_t;
  ds.d_s = d_s;
  ds.hr = simulate_rb(cfg);
  ds.lr = downsample(ds.hr, d_s, d_t);
  ds.stats = channel_stats(ds.hr);
  return ds;
}

void save_dataset(const Dataset& ds, const std::string& path) {
  if (ds.hr.channels != ds.lr.channels) throw DataError("save_dataset: channel mismatch");
  json header;
  header["version"] = 1;
  header["channels"] = ds.hr.channels;
  header["hr_shape"] = {ds.hr.n_channels(), ds.hr.extent(0), ds.hr.extent(1), ds.hr.extent(2)};
  header["lr_shape"] = {ds.lr.n_channels(), ds.lr.extent(0), ds.lr.extent(1), ds.lr.extent(2)};
  header["spacing"] = ds.hr.spacing;
  header["origin"] = ds.hr.origin;
  header["ra"] = ds.sim.ra;
  header["pr"] = ds.sim.pr;
  header["d_s"] = ds.d_s;
  header["d_t"] = ds.d_t;
  header["seed"] = ds.sim.seed;
  header["normalized"] = ds.hr.normalized;
  std::vector<double> means, stds;
  for (const auto& s : ds.stats) {
    means.push_back(s.mean);
    stds.push_back(s.std);
  }
  header["norm_stats"] = {{"mean", means}, {"std", stds}};
  header["sim"] = {{"ra", ds.sim.ra},
                   {"pr", ds.sim.pr},
                   {"nx", ds.sim.nx},
                   {"nz", ds.sim.nz},
                   {"lx", ds.sim.lx},
                   {"lz", ds.sim.lz},
                   {"t_final", ds.sim.t_final},
                   {"dt", ds.sim.dt},
                   {"snapshot_every", ds.sim.snapshot_every},
                   {"seed", ds.sim.seed},
                   {"perturb_amp", ds.sim.perturb_amp}};
  const std::string text = header.dump();

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("save_dataset: cannot open '" + path + "' for writing");
  os.write(kMagic, 8);
  write_u32le(os, static_cast<std::uint32_t>(text.size()));
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  write_f32_blob(os, ds.hr.data.data(), static_cast<std::size_t>(ds.hr.data.size()));
  write_f32_blob(os, ds.lr.data.data(), static_cast<std::size_t>(ds.lr.data.size()));
  if (!os) throw DataError("save_dataset: write failure on '" + path + "'");
  log_info("saved dataset to " + path);
}

Dataset load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("load_dataset: cannot open '" + path + "'");
  char magic[8];
  read_exact(is, magic, 8, "magic");
  if (std::string(magic, 8) != std::string(kMagic, 8)) {
    throw DataError("load_dataset: '" + path + "' is not an MFSRDAT1 file");
  }
  const std::uint32_t hlen = read_u32le(is, "header length");
  if (hlen > (1u << 24)) throw DataError("load_dataset: implausible header length");
  std::string text(hlen, '\0');
  read_exact(is, text.data(), hlen, "header");
  json header;
  try {
    header = json::parse(text);
  } catch (const json::exception& e) {
    throw DataError(std::string("load_dataset: bad header JSON: ") + e.what());
  }
  if (header.at("version").get<int>() != 1) {
    throw DataError("load_dataset: unsupported version " +
                    std::to_string(header.at("version").get<int>()));
  }

  Dataset ds;
  auto channels = header.at("channels").get<std::vector<std::string>>();
  auto hr_shape = header.at("hr_shape").get<std::vector<int>>();
  auto lr_shape = header.at("lr_shape").get<std::vector<int>>();
  if (hr_shape.size() != 4 || lr_shape.size() != 4 ||
      hr_shape[0] != static_cast<int>(channels.size()) || hr_shape[0] != lr_shape[0]) {
    throw DataError("load_dataset: inconsistent shapes in header");
  }
  const bool normalized = header.value("normalized", false);

  auto spacing = header.at("spacing").get<std::array<double, 3>>();
  auto origin = header.at("origin").get<std::array<double, 3>>();
  ds.d_s = header.at("d_s").get<int>();
  ds.d_t = header.at("d_t").get<int>();

  ds.hr.channels = channels;
  ds.hr.spacing = spacing;
  ds.hr.origin = origin;
  ds.hr.normalized = normalized;
  ds.hr.data = ad::Tensor({hr_shape[0], hr_shape[1], hr_shape[2], hr_shape[3]});
  ds.lr.channels = channels;
  ds.lr.spacing = {spacing[0] * ds.d_t, spacing[1] * ds.d_s, spacing[2] * ds.d_s};
  ds.lr.origin = origin;
  ds.lr.normalized = normalized;
  ds.lr.data = ad::Tensor({lr_shape[0], lr_shape[1], lr_shape[2], lr_shape[3]});

  const auto& ns = header.at("norm_stats");
  auto means = ns.at("mean").get<std::vector<double>>();
  auto stds = ns.at("std").get<std::vector<double>>();
  if (means.size() != channels.size() || stds.size() != channels.size()) {
    throw DataError("load_dataset: norm_stats length mismatch");
  }
  for (std::size_t c = 0; c < channels.size(); ++c) ds.stats.push_back({means[c], stds[c]});

  if (header.contains("sim")) {
    const auto& sim = header["sim"];
    ds.sim.ra = sim.value("ra", ds.sim.ra);
    ds.sim.pr = sim.value("pr", ds.sim.pr);
    ds.sim.nx = sim.value("nx", ds.sim.nx);
    ds.sim.nz = sim.value("nz", ds.sim.nz);
    ds.sim.lx = sim.value("lx", ds.sim.lx);
    ds.sim.lz = sim.value("lz", ds.sim.lz);
    ds.sim.t_final = sim.value("t_final", ds.sim.t_final);
    ds.sim.dt = sim.value("dt", ds.sim.dt);
    ds.sim.snapshot_every = sim.value("snapshot_every", ds.sim.snapshot_every);
    ds.sim.seed = sim.value("seed", ds.sim.seed);
    ds.sim.perturb_amp = sim.value("perturb_amp", ds.sim.perturb_amp);
  }

  read_f32_blob(is, ds.hr.data.data(), static_cast<std::size_t>(ds.hr.data.size()),
                "HR field");
  read_f32_blob(is, ds.lr.data.data(), static_cast<std::size_t>(ds.lr.data.size()),
                "LR field");
  return ds;
}

std::array<int, 3> covered_extents(const Dataset& ds) {
  if (!ds.lr.data.defined()) throw std::invalid_argument("covered_extents: undefined LR field");
  return {ds.d_t * (ds.lr.extent(0) - 1) + 1, ds.d_s * (ds.lr.extent(1) - 1) + 1,
          ds.d_s * (ds.lr.extent(2) - 1) + 1};
}

namespace {
constexpr char kFieldMagic[9] = "MFSRFLD1";
}

void save_field(const Field4& f, const std::string& path) {
  if (!f.data.defined() || f.data.rank() != 4) {
    throw DataError("save_field: field data must be a 4-D tensor");
  }
  if (f.n_channels() != static_cast<int>(f.channels.size())) {
    throw DataError("save_field: channel list does not match the data");
  }
  json header;
  header["version"] = 1;
  header["channels"] = f.channels;
  header["shape"] = {f.n_channels(), f.extent(0), f.extent(1), f.extent(2)};
  header["spacing"] = f.spacing;
  header["origin"] = f.origin;
  header["normalized"] = f.normalized;
  const std::string text = header.dump();

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("save_field: cannot open '" + path + "' for writing");
  os.write(kFieldMagic, 8);
  write_u32le(os, static_cast<std::uint32_t>(text.size()));
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  const auto n = static_cast<std::size_t>(f.data.size());
  write_f64_blob(os, f.data.data(), n);
  write_u32le(os, crc32(f.data.data(), n * sizeof(double)));
  if (!os) throw DataError("save_field: write failure on '" + path + "'");
  log_info("saved field to " + path);
}

Field4 load_field(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("load_field: cannot open '" + path + "'");
  char magic[8];
  read_exact(is, magic, 8, "magic");
  if (std::string(magic, 8) != std::string(kFieldMagic, 8)) {
    throw DataError("load_field: '" + path + "' is not an MFSRFLD1 file");
  }
  const std::uint32_t hlen = read_u32le(is, "header length");
  if (hlen > (1u << 24)) throw DataError("load_field: implausible header length");
  std::string text(hlen, '\0');
  read_exact(is, text.data(), hlen, "header");
  json header;
  try {
    header = json::parse(text);
  } catch (const json::exception& e) {
    throw DataError(std::string("load_field: bad header JSON: ") + e.what());
  }
  if (header.at("version").get<int>() != 1) {
    throw DataError("load_field: unsupported version " +
                    std::to_string(header.at("version").get<int>()));
  }
  Field4 f;
  f.channels = header.at("channels").get<std::vector<std::string>>();
  auto shape = header.at("shape").get<std::vector<int>>();
  if (shape.size() != 4 || shape[0] != static_cast<int>(f.channels.size())) {
    throw DataError("load_field: inconsistent shape in header");
  }
  f.spacing = header.at("spacing").get<std::array<double, 3>>();
  f.origin = header.at("origin").get<std::array<double, 3>>();
  f.normalized = header.at("normalized").get<bool>();
  f.data = ad::Tensor({shape[0], shape[1], shape[2], shape[3]});
  const auto n = static_cast<std::size_t>(f.data.size());
  read_f64_blob(is, f.data.data(), n, "field payload");
  const std::uint32_t want = read_u32le(is, "field checksum");
  const std::uint32_t got = crc32(f.data.data(), n * sizeof(double));
  if (want != got) throw DataError("load_field: checksum mismatch in field payload");
  return f;
}

}  // namespace mfsr
