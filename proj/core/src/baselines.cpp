#include "mfsr/baselines.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>

#include "mfsr/errors.hpp"
#include "mfsr/log.hpp"
#include "mfsr/nn.hpp"
#include "mfsr/rng.hpp"

namespace mfsr {

Field4 trilinear_upsample(const Field4& lr, const std::array<int, 3>& target_res) {
  for (int n : target_res) {
    if (n < 1) throw std::invalid_argument("trilinear_upsample: target resolution must be >= 1");
  }
  Field4 out;
  out.channels = lr.channels;
  out.origin = lr.origin;
  out.normalized = lr.normalized;
  std::array<std::vector<double>, 3> coords;
  for (int a = 0; a < 3; ++a) {
    const auto ai = static_cast<std::size_t>(a);
    const int n = target_res[ai];
    const double span = (lr.extent(a) - 1) * lr.spacing[ai];
    coords[ai].resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      coords[ai][static_cast<std::size_t>(i)] =
          lr.origin[ai] + (n > 1 ? (span * i) / (n - 1) : 0.0);
    }
    out.spacing[ai] = n > 1 ? span / (n - 1) : lr.spacing[ai];
  }
  const int nt = target_res[0], nz = target_res[1], nx = target_res[2];
  const int m = lr.n_channels();
  out.data = ad::Tensor({m, nt, nz, nx});
  double* dst = out.data.data();
  for (int c = 0; c < m; ++c) {
    for (int it = 0; it < nt; ++it) {
      for (int iz = 0; iz < nz; ++iz) {
        for (int ix = 0; ix < nx; ++ix) {
          *dst++ = sample_trilinear(lr, c, coords[0][static_cast<std::size_t>(it)],
                                    coords[1][static_cast<std::size_t>(iz)],
                                    coords[2][static_cast<std::size_t>(ix)]);
        }
      }
    }
  }
  return out;
}

void DiscreteSRConfig::validate() const {
  for (int u : upscale) {
    if (u < 1 || (u & (u - 1)) != 0) {
      throw std::invalid_argument("DiscreteSRConfig: upscale factors must be powers of two");
    }
  }
}

std::vector<std::array<int, 3>> DiscreteSRConfig::stage_plan() const {
  std::array<int, 3> rem = upscale;
  std::vector<std::array<int, 3>> plan;
  while (rem[0] > 1 || rem[1] > 1 || rem[2] > 1) {
    std::array<int, 3> f{1, 1, 1};
    for (int a = 0; a < 3; ++a) {
      if (rem[static_cast<std::size_t>(a)] > 1) {
        f[static_cast<std::size_t>(a)] = 2;
        rem[static_cast<std::size_t>(a)] /= 2;
      }
    }
    plan.push_back(f);
  }
  return plan;
}

namespace {

const DiscreteSRConfig& validated(const DiscreteSRConfig& cfg) {
  cfg.validate();
  return cfg;
}

}  // namespace

DiscreteSRModel::DiscreteSRModel(const DiscreteSRConfig& cfg, std::uint64_t seed)
    : cfg_(validated(cfg)), encoder_(cfg.unet, seed) {
  Rng rng(seed + 1);
  int w_in = cfg_.unet.n_c;
  const std::size_t n_stages = cfg_.stage_plan().size();
  stages_.reserve(n_stages);
  for (std::size_t s = 0; s < n_stages; ++s) {
    const int w_out = std::max(4, w_in / 2);
    stages_.push_back(make_conv(w_out, w_in, 3, rng));
    w_in = w_out;
  }
  head_ = make_conv(cfg_.unet.in_channels, w_in, 1, rng);
}

DiscreteSRModel::DiscreteSRModel(const DiscreteSRConfig& cfg, ContextGenerator encoder)
    : cfg_(cfg), encoder_(std::move(encoder)) {}

ad::Tensor DiscreteSRModel::forward(const ad::Tensor& lr) const {
  using namespace ad;
  Tensor h = encoder_.encode_tensor(lr);
  const auto plan = cfg_.stage_plan();
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    h = upsample_nearest3d(h, plan[s]);
    h = unary(conv3d(h, stages_[s].w, stages_[s].b), Unary::Relu);
  }
  return conv3d(h, head_.w, head_.b);
}

Field4 DiscreteSRModel::reconstruct(const Field4& lr) const {
  if (lr.n_channels() != cfg_.unet.in_channels) {
    throw std::invalid_argument("DiscreteSRModel: field channels do not match the encoder");
  }
  ad::NoTapeScope inference;
  Field4 out;
  out.channels = lr.channels;
  out.origin = lr.origin;
  out.normalized = lr.normalized;
  for (int a = 0; a < 3; ++a) {
    const auto ai = static_cast<std::size_t>(a);
    out.spacing[ai] = lr.spacing[ai] / cfg_.upscale[ai];
  }
  out.data = forward(lr.data);
  return out;
}

std::vector<NamedParam> DiscreteSRModel::parameters() const {
  std::vector<NamedParam> out = encoder_.parameters();
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    const std::string prefix = "bii/stage" + std::to_string(s);
    out.push_back({prefix + "/w", stages_[s].w});
    out.push_back({prefix + "/b", stages_[s].b});
  }
  out.push_back({"bii/head/w", head_.w});
  out.push_back({"bii/head/b", head_.b});
  return out;
}

DiscreteSRModel DiscreteSRModel::clone() const {
  DiscreteSRModel c(cfg_, encoder_.clone());
  c.stages_.reserve(stages_.size());
  for (const auto& s : stages_) c.stages_.push_back({s.w.clone(), s.b.clone()});
  c.head_ = {head_.w.clone(), head_.b.clone()};
  return c;
}

DiscreteBaselineResult train_discrete_baseline(const TrainConfig& cfg,
                                               const LossConfig& loss_cfg, const Dataset& ds) {
  cfg.validate();
  loss_cfg.validate();
  if (!ds.hr.data.defined() || !ds.lr.data.defined()) {
    throw std::invalid_argument("train_discrete_baseline: dataset fields are undefined");
  }
  const int n_chan = ds.hr.n_channels();
  if (cfg.unet.in_channels != n_chan) {
    throw std::invalid_argument("train_discrete_baseline: encoder channels do not match");
  }
  if (static_cast<int>(ds.stats.size()) != n_chan) {
    throw std::invalid_argument("train_discrete_baseline: dataset is missing channel statistics");
  }
  if (cfg.upscale != std::array<int, 3>{ds.d_t, ds.d_s, ds.d_s}) {
    throw std::invalid_argument(
        "train_discrete_baseline: upscale factors do not match the dataset downsampling");
  }
  for (int a = 0; a < 3; ++a) {
    if (cfg.lr_window[static_cast<std::size_t>(a)] > ds.lr.extent(a)) {
      throw std::invalid_argument(
          "train_discrete_baseline: lr_window exceeds the low-resolution field extent");
    }
  }

  Field4 hr = ds.hr;
  hr.data = ds.hr.data.clone();
  Field4 lr = ds.lr;
  lr.data = ds.lr.data.clone();
  if (!hr.normalized) normalize_field(hr, ds.stats);
  if (!lr.normalized) normalize_field(lr, ds.stats);

  const int steps_per_epoch = cfg.samples_per_epoch / cfg.batch_windows;
  DiscreteSRModel model(DiscreteSRConfig{cfg.unet, cfg.upscale}, cfg.seed);
  std::vector<NamedParam> params = model.parameters();
  Adam adam(params);
  Rng sampler(cfg.seed);

  std::vector<EpochLoss> history;
  history.reserve(static_cast<std::size_t>(cfg.epochs));
  for (int e = 0; e < cfg.epochs; ++e) {
    double epoch_loss = 0.0;
    for (int s = 0; s < steps_per_epoch; ++s) {
      for (auto& p : params) p.tensor.zero_grad();
      ad::Tape tape;
      ad::TapeScope scope(tape);
      ad::Tensor acc;
      for (int b = 0; b < cfg.batch_windows; ++b) {
        std::array<int, 3> start{};
        std::array<int, 3> hr_start{};
        std::array<int, 3> hr_ext{};
        for (int a = 0; a < 3; ++a) {
          const auto ai = static_cast<std::size_t>(a);
          start[ai] = static_cast<int>(
              sampler.uniform_int(0, lr.extent(a) - cfg.lr_window[ai]));
          hr_start[ai] = start[ai] * cfg.upscale[ai];
          hr_ext[ai] = cfg.lr_window[ai] * cfg.upscale[ai];
        }
        const Field4 lr_crop = crop_window(lr, start, cfg.lr_window);
        const Field4 hr_crop = crop_window(hr, hr_start, hr_ext);
        const ad::Tensor pred = model.forward(lr_crop.data);
        const ad::Tensor lp = prediction_loss(pred, hr_crop.data, loss_cfg);
        acc = acc.defined() ? ad::add(acc, lp) : lp;
      }
      const ad::Tensor lm = ad::mul_scalar(acc, 1.0 / cfg.batch_windows);
      if (!std::isfinite(lm.item())) {
        throw NumericError("train_discrete_baseline: non-finite loss at epoch " +
                           std::to_string(e) + ", step " + std::to_string(s));
      }
      tape.backward(lm);
      adam.step(cfg.lr);
      epoch_loss += lm.item();
    }
    const double mean_loss = steps_per_epoch > 0 ? epoch_loss / steps_per_epoch : 0.0;
    history.push_back(EpochLoss{mean_loss, mean_loss, 0.0});
    log_info("baseline-ii epoch " + std::to_string(e) + ": loss " + std::to_string(mean_loss));
  }
  return DiscreteBaselineResult{std::move(model), std::move(history)};
}

}  // namespace mfsr
