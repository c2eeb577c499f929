#include "mfsr/train.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <thread>
#include <utility>

#include <json.hpp>

#include "mfsr/binio.hpp"
#include "mfsr/errors.hpp"
#include "mfsr/log.hpp"

namespace mfsr {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Enum plumbing.

PredNorm pred_norm_from_string(const std::string& s) {
  if (s == "l1") return PredNorm::L1;
  if (s == "l2") return PredNorm::L2;
  if (s == "huber") return PredNorm::Huber;
  throw std::invalid_argument("unknown prediction norm '" + s + "' (want l1, l2 or huber)");
}

std::string to_string(PredNorm n) {
  switch (n) {
    case PredNorm::L1: return "l1";
    case PredNorm::L2: return "l2";
    case PredNorm::Huber: return "huber";
  }
  throw std::invalid_argument("invalid PredNorm value");
}

std::string to_string(ad::Activation a) {
  switch (a) {
    case ad::Activation::Swish: return "swish";
    case ad::Activation::Softplus: return "softplus";
    case ad::Activation::Relu: return "relu";
  }
  throw std::invalid_argument("invalid Activation value");
}

ad::Activation activation_from_string(const std::string& s) {
  if (s == "swish") return ad::Activation::Swish;
  if (s == "softplus") return ad::Activation::Softplus;
  if (s == "relu") return ad::Activation::Relu;
  throw std::invalid_argument("unknown activation '" + s + "'");
}

// ---------------------------------------------------------------------------
// Config validation.

void LossConfig::validate() const {
  if (!(gamma >= 0.0) || !std::isfinite(gamma)) {
    throw std::invalid_argument("LossConfig: gamma must be finite and >= 0");
  }
  if (!(huber_delta > 0.0)) throw std::invalid_argument("LossConfig: huber_delta must be > 0");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("LossConfig: weight_decay must be >= 0");
  if (pde_id.empty()) throw std::invalid_argument("LossConfig: pde_id must be set");
}

void TrainConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw std::invalid_argument("TrainConfig: bad learning rate");
  if (epochs < 0) throw std::invalid_argument("TrainConfig: epochs must be >= 0");
  if (samples_per_epoch < 1 || points_per_window < 1 || batch_windows < 1 || n_workers < 1) {
    throw std::invalid_argument("TrainConfig: counts must be positive");
  }
  if (samples_per_epoch % batch_windows != 0) {
    throw std::invalid_argument("TrainConfig: samples_per_epoch must divide by batch_windows");
  }
  if (batch_windows % n_workers != 0) {
    throw std::invalid_argument("TrainConfig: batch_windows must divide by n_workers");
  }
  const int div = 1 << unet.depth;
  for (int a = 0; a < 3; ++a) {
    if (lr_window[static_cast<std::size_t>(a)] < 2) {
      throw std::invalid_argument("TrainConfig: lr_window extents must be >= 2");
    }
    if (lr_window[static_cast<std::size_t>(a)] % div != 0) {
      throw std::invalid_argument("TrainConfig: lr_window extents must divide by 2^depth");
    }
    if (upscale[static_cast<std::size_t>(a)] < 1) {
      throw std::invalid_argument("TrainConfig: upscale factors must be >= 1");
    }
  }
  if (mlp.n_c != unet.n_c) {
    throw std::invalid_argument("TrainConfig: decoder latent width must match the encoder's n_c");
  }
}

// ---------------------------------------------------------------------------
// Losses.

namespace {

ad::Tensor elementwise_norm(const ad::Tensor& r, const LossConfig& cfg) {
  switch (cfg.pred_norm) {
    case PredNorm::L1: return ad::unary(r, ad::Unary::Abs);
    case PredNorm::L2: return ad::unary(r, ad::Unary::Square);
    case PredNorm::Huber: return ad::huber(r, cfg.huber_delta);
  }
  throw std::invalid_argument("invalid PredNorm value");
}

}  // namespace

ad::Tensor prediction_loss(const ad::Tensor& pred, const ad::Tensor& gt, const LossConfig& cfg) {
  if (!pred.defined() || !gt.defined()) {
    throw std::invalid_argument("prediction_loss: undefined operand");
  }
  if (pred.shape() != gt.shape()) throw std::invalid_argument("prediction_loss: shape mismatch");
  if (pred.size() < 1) throw std::invalid_argument("prediction_loss: empty batch");
  return ad::mean(elementwise_norm(ad::sub(pred, gt), cfg));
}

ad::Tensor equation_loss(const ResidualBatch& r, const LossConfig& cfg) {
  const ad::Tensor* comps[4] = {&r.continuity, &r.momentum_x, &r.momentum_z, &r.temperature};
  for (const ad::Tensor* c : comps) {
    if (!c->defined() || c->size() < 1) {
      throw std::invalid_argument("equation_loss: empty residual batch");
    }
    if (c->size() != comps[0]->size()) {
      throw std::invalid_argument("equation_loss: residual components disagree in size");
    }
    const double* p = c->data();
    for (int i = 0; i < c->size(); ++i) {
      if (!std::isfinite(p[i])) throw NumericError("equation_loss: non-finite residuals");
    }
  }
  ad::Tensor acc;
  for (const ad::Tensor* c : comps) {
    ad::Tensor m = ad::mean(elementwise_norm(*c, cfg));
    acc = acc.defined() ? ad::add(acc, m) : m;
  }
  return ad::mul_scalar(acc, 0.25);
}

ad::Tensor total_loss(const ad::Tensor& lp, const ad::Tensor& le, const LossConfig& cfg,
                      const std::vector<NamedParam>& params) {
  if (!lp.defined() || lp.size() != 1 || !le.defined() || le.size() != 1) {
    throw std::invalid_argument("total_loss: losses must be scalars");
  }
  ad::Tensor t = cfg.gamma > 0.0 ? ad::add(lp, ad::mul_scalar(le, cfg.gamma)) : lp;
  if (cfg.weight_decay > 0.0) {
    ad::Tensor reg;
    for (const auto& p : params) {
      ad::Tensor s = ad::sum(ad::unary(p.tensor, ad::Unary::Abs));
      reg = reg.defined() ? ad::add(reg, s) : s;
    }
    if (reg.defined()) t = ad::add(t, ad::mul_scalar(reg, cfg.weight_decay));
  }
  return t;
}

// ---------------------------------------------------------------------------
// Query sampling.

QueryBatch sample_query_points(const Field4& hr, const SampleWindow& window, int n_points,
                               Rng& rng) {
  if (n_points < 1) throw std::invalid_argument("sample_query_points: n_points must be >= 1");
  if (!hr.data.defined()) throw std::invalid_argument("sample_query_points: undefined field");
  const auto lo = hr.bbox_lo();
  const auto hi = hr.bbox_hi();
  for (int a = 0; a < 3; ++a) {
    const auto ua = static_cast<std::size_t>(a);
    if (!(window.lo[ua] <= window.hi[ua])) {
      throw std::invalid_argument("sample_query_points: window is empty on axis " +
                                  std::to_string(a));
    }
    const double tol = 1e-9 * (std::fabs(hi[ua] - lo[ua]) + 1.0);
    if (window.lo[ua] < lo[ua] - tol || window.hi[ua] > hi[ua] + tol) {
      throw std::invalid_argument("sample_query_points: window leaves the field bounding box");
    }
  }
  const int n_c = hr.n_channels();
  QueryBatch batch;
  batch.points.resize(static_cast<std::size_t>(n_points));
  std::vector<double> targets(static_cast<std::size_t>(n_points) * n_c);
  for (int i = 0; i < n_points; ++i) {
    std::array<double, 3> p;
    for (int a = 0; a < 3; ++a) {
      const auto ua = static_cast<std::size_t>(a);
      p[ua] = window.lo[ua] + rng.uniform() * (window.hi[ua] - window.lo[ua]);
    }
    batch.points[static_cast<std::size_t>(i)] = p;
    for (int c = 0; c < n_c; ++c) {
      targets[static_cast<std::size_t>(i) * n_c + c] =
          sample_trilinear(hr, c, p[0], p[1], p[2]);
    }
  }
  batch.targets = ad::Tensor({n_points, n_c}, std::move(targets));
  return batch;
}

FieldJets physical_field_jets(const DecodedSample& out, const std::vector<ChannelStats>& stats) {
  if (!out.has_derivs) {
    throw std::invalid_argument("physical_field_jets: decode carried no derivatives");
  }
  if (!out.y.defined() || out.y.rank() != 2 || out.y.extent(1) != 4) {
    throw std::invalid_argument("physical_field_jets: expected a 4-channel decode");
  }
  if (stats.size() != 4) {
    throw std::invalid_argument("physical_field_jets: need statistics for 4 channels");
  }
  std::vector<double> scale(4), shift(4), zero(4, 0.0);
  for (int c = 0; c < 4; ++c) {
    scale[static_cast<std::size_t>(c)] = stats[static_cast<std::size_t>(c)].std;
    shift[static_cast<std::size_t>(c)] = stats[static_cast<std::size_t>(c)].mean;
  }
  ad::Tensor y = ad::affine_columns(out.y, scale, shift);
  std::array<ad::Tensor, 3> d1;
  for (int a = 0; a < 3; ++a) {
    d1[static_cast<std::size_t>(a)] =
        ad::affine_columns(out.d1[static_cast<std::size_t>(a)], scale, zero);
  }
  ad::Tensor zz = ad::affine_columns(out.d2_zz, scale, zero);
  ad::Tensor xx = ad::affine_columns(out.d2_xx, scale, zero);

  FieldJets jets;
  for (int c = 0; c < 4; ++c) {
    const auto uc = static_cast<std::size_t>(c);
    jets.v[uc] = ad::column(y, c);
    for (int a = 0; a < 3; ++a) {
      jets.d1[uc][static_cast<std::size_t>(a)] =
          ad::column(d1[static_cast<std::size_t>(a)], c);
    }
    jets.zz[uc] = ad::column(zz, c);
    jets.xx[uc] = ad::column(xx, c);
  }
  return jets;
}

// ---------------------------------------------------------------------------
// Optimizer.

Adam::Adam(std::vector<NamedParam> params, AdamConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    if (!p.tensor.defined() || !p.tensor.requires_grad()) {
      throw std::invalid_argument("Adam: parameter '" + p.name + "' is not differentiable");
    }
    m_.emplace_back(static_cast<std::size_t>(p.tensor.size()), 0.0);
    v_.emplace_back(static_cast<std::size_t>(p.tensor.size()), 0.0);
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

void Adam::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t pi = 0; pi < params_.size(); ++pi) {
    ad::Tensor& t = params_[pi].tensor;
    double* theta = t.data();
    const double* g = t.grad_data();
    double* m = m_[pi].data();
    double* v = v_[pi].data();
    const int n = t.size();
    for (int i = 0; i < n; ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      theta[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.eps);
    }
  }
}

void average_gradients(const std::vector<std::vector<NamedParam>>& replicas) {
  if (replicas.empty()) throw std::invalid_argument("average_gradients: no replicas");
  const std::size_t np = replicas[0].size();
  for (const auto& r : replicas) {
    if (r.size() != np) {
      throw std::invalid_argument("average_gradients: replica parameter lists differ");
    }
  }
  const double inv = 1.0 / static_cast<double>(replicas.size());
  std::vector<double> buf;
  for (std::size_t p = 0; p < np; ++p) {
    const auto& ref = replicas[0][p];
    const std::size_t n = static_cast<std::size_t>(ref.tensor.size());
    for (const auto& r : replicas) {
      if (r[p].name != ref.name || r[p].tensor.size() != ref.tensor.size()) {
        throw std::invalid_argument("average_gradients: replica parameter '" + r[p].name +
                                    "' does not line up with '" + ref.name + "'");
      }
      if (r[p].tensor.impl()->grad.size() != n) {
        throw std::invalid_argument("average_gradients: parameter '" + r[p].name +
                                    "' has no gradient buffer");
      }
    }
    buf.assign(n, 0.0);
    for (const auto& r : replicas) {  // fixed ascending worker order
      const double* g = r[p].tensor.impl()->grad.data();
      for (std::size_t i = 0; i < n; ++i) buf[i] += g[i];
    }
    for (std::size_t i = 0; i < n; ++i) buf[i] *= inv;
    for (const auto& r : replicas) {
      std::memcpy(r[p].tensor.impl()->grad.data(), buf.data(), n * sizeof(double));
    }
  }
}

// ---------------------------------------------------------------------------
// Training loop.

std::string loss_history_csv(const std::vector<EpochLoss>& history) {
  std::ostringstream out;
  out.precision(17);
  out << "epoch,loss_total,loss_pred,loss_eq\n";
  for (std::size_t e = 0; e < history.size(); ++e) {
    out << e << ',' << history[e].total << ',' << history[e].pred << ',' << history[e].eq
        << '\n';
  }
  return out.str();
}

namespace {

struct Replica {
  ContextGenerator gen;
  ContinuousDecoder dec;
  std::vector<NamedParam> params;
  Adam adam;
  Rng sampler;
};

struct StepStats {
  double total = 0.0;
  double pred = 0.0;
  double eq = 0.0;
};

struct TrainContext {
  const TrainConfig& cfg;
  const LossConfig& loss;
  const Field4& hr;
  const Field4& lr;
  const std::vector<ChannelStats>& stats;
  PhysicsParams phys;
  ResidualOp residual;
  int per_worker;
};

StepStats run_shard(const TrainContext& ctx, Replica& rep, int epoch, int step, int worker) {
  for (auto& p : rep.params) p.tensor.zero_grad();
  ad::Tape tape;
  ad::TapeScope scope(tape);
  const bool want_eq = ctx.loss.gamma > 0.0;

  ad::Tensor lp_acc, le_acc;
  for (int i = 0; i < ctx.per_worker; ++i) {
    std::array<int, 3> start;
    for (int a = 0; a < 3; ++a) {
      const auto ua = static_cast<std::size_t>(a);
      start[ua] = static_cast<int>(
          rep.sampler.uniform_int(0, ctx.lr.extent(a) - ctx.cfg.lr_window[ua]));
    }
    Field4 crop = crop_window(ctx.lr, start, ctx.cfg.lr_window);
    SampleWindow win{crop.bbox_lo(), crop.bbox_hi()};
    QueryBatch batch =
        sample_query_points(ctx.hr, win, ctx.cfg.points_per_window, rep.sampler);
    batch.window_ref = "epoch " + std::to_string(epoch) + ", step " + std::to_string(step) +
                       ", worker " + std::to_string(worker) + ", window (" +
                       std::to_string(start[0]) + "," + std::to_string(start[1]) + "," +
                       std::to_string(start[2]) + ")";
    try {
      LatentContextGrid grid = rep.gen.encode(crop);
      DecodedSample out = query(grid, rep.dec, batch, want_eq);
      ad::Tensor lp = prediction_loss(out.y, batch.targets, ctx.loss);
      ad::Tensor le;
      if (want_eq) {
        FieldJets jets = physical_field_jets(out, ctx.stats);
        le = equation_loss(ctx.residual(jets, ctx.phys, ad::Tensor()), ctx.loss);
      } else {
        le = ad::Tensor::scalar(0.0);
      }
      if (!std::isfinite(lp.item()) || !std::isfinite(le.item())) {
        throw NumericError("non-finite loss");
      }
      lp_acc = lp_acc.defined() ? ad::add(lp_acc, lp) : lp;
      le_acc = le_acc.defined() ? ad::add(le_acc, le) : le;
    } catch (const NumericError& e) {
      throw NumericError(std::string(e.what()) + " [" + batch.window_ref + "]");
    }
  }

  const double inv = 1.0 / static_cast<double>(ctx.per_worker);
  ad::Tensor lp_mean = ad::mul_scalar(lp_acc, inv);
  ad::Tensor le_mean = ad::mul_scalar(le_acc, inv);
  ad::Tensor total = total_loss(lp_mean, le_mean, ctx.loss, rep.params);
  if (!std::isfinite(total.item())) {
    throw NumericError("non-finite total loss [epoch " + std::to_string(epoch) + ", step " +
                       std::to_string(step) + ", worker " + std::to_string(worker) + "]");
  }
  ad::backward(total);
  return {total.item(), lp_mean.item(), le_mean.item()};
}

void check_replica_coherence(const std::vector<Replica>& reps, int epoch, int step) {
  for (std::size_t w = 1; w < reps.size(); ++w) {
    for (std::size_t p = 0; p < reps[0].params.size(); ++p) {
      const ad::Tensor& a = reps[0].params[p].tensor;
      const ad::Tensor& b = reps[w].params[p].tensor;
      if (std::memcmp(a.data(), b.data(),
                      static_cast<std::size_t>(a.size()) * sizeof(double)) != 0) {
        throw NumericError("replica " + std::to_string(w) + " diverged on parameter '" +
                           reps[0].params[p].name + "' after epoch " + std::to_string(epoch) +
                           ", step " + std::to_string(step));
      }
    }
  }
}

}  // namespace

TrainedModel train(const TrainConfig& cfg, const LossConfig& loss_cfg, const Dataset& ds) {
  cfg.validate();
  loss_cfg.validate();
  if (!ds.hr.data.defined() || !ds.lr.data.defined()) {
    throw std::invalid_argument("train: dataset fields are undefined");
  }
  const int n_chan = ds.hr.n_channels();
  if (ds.lr.n_channels() != n_chan) throw std::invalid_argument("train: HR/LR channel mismatch");
  if (static_cast<int>(ds.stats.size()) != n_chan) {
    throw std::invalid_argument("train: dataset is missing channel statistics");
  }
  if (cfg.unet.in_channels != n_chan || cfg.mlp.out_dim != n_chan) {
    throw std::invalid_argument("train: model channel widths do not match the dataset");
  }
  for (int a = 0; a < 3; ++a) {
    if (cfg.lr_window[static_cast<std::size_t>(a)] > ds.lr.extent(a)) {
      throw std::invalid_argument("train: lr_window exceeds the low-resolution field extent");
    }
  }

  // Train in normalized space; physical units re-enter through the channel
  // statistics when residuals are evaluated.
  Field4 hr = ds.hr;
  hr.data = ds.hr.data.clone();
  Field4 lr = ds.lr;
  lr.data = ds.lr.data.clone();
  if (!hr.normalized) normalize_field(hr, ds.stats);
  if (!lr.normalized) normalize_field(lr, ds.stats);

  const int k = cfg.n_workers;
  const int per_worker = cfg.batch_windows / k;
  const int steps_per_epoch = cfg.samples_per_epoch / cfg.batch_windows;

  ContextGenerator gen(cfg.unet, cfg.seed);
  ContinuousDecoder dec(cfg.mlp, cfg.seed + 1);

  std::vector<Replica> reps;
  reps.reserve(static_cast<std::size_t>(k));
  for (int w = 0; w < k; ++w) {
    ContextGenerator g = (w == 0) ? gen : gen.clone();
    ContinuousDecoder d = (w == 0) ? dec : dec.clone();
    std::vector<NamedParam> ps = g.parameters();
    std::vector<NamedParam> dp = d.parameters();
    ps.insert(ps.end(), dp.begin(), dp.end());
    Adam adam(ps);
    reps.push_back(Replica{std::move(g), std::move(d), std::move(ps), std::move(adam),
                           Rng(cfg.seed + static_cast<std::uint64_t>(w))});
  }

  TrainContext ctx{cfg,
                   loss_cfg,
                   hr,
                   lr,
                   ds.stats,
                   PhysicsParams(ds.sim.ra, ds.sim.pr),
                   residual_operator(loss_cfg.pde_id),
                   per_worker};

  std::vector<std::vector<NamedParam>> all_params;
  all_params.reserve(reps.size());
  for (const auto& r : reps) all_params.push_back(r.params);

  std::vector<EpochLoss> history;
  history.reserve(static_cast<std::size_t>(cfg.epochs));
  for (int e = 0; e < cfg.epochs; ++e) {
    EpochLoss esum;
    for (int s = 0; s < steps_per_epoch; ++s) {
      std::vector<StepStats> acc(static_cast<std::size_t>(k));
      if (k == 1) {
        acc[0] = run_shard(ctx, reps[0], e, s, 0);
      } else {
        std::vector<std::exception_ptr> errs(static_cast<std::size_t>(k));
        std::vector<std::thread> threads;
        threads.reserve(static_cast<std::size_t>(k - 1));
        for (int w = 1; w < k; ++w) {
          threads.emplace_back([&, w] {
            try {
              acc[static_cast<std::size_t>(w)] =
                  run_shard(ctx, reps[static_cast<std::size_t>(w)], e, s, w);
            } catch (...) {
              errs[static_cast<std::size_t>(w)] = std::current_exception();
            }
          });
        }
        try {
          acc[0] = run_shard(ctx, reps[0], e, s, 0);
        } catch (...) {
          errs[0] = std::current_exception();
        }
        for (auto& t : threads) t.join();
        for (int w = 0; w < k; ++w) {
          if (errs[static_cast<std::size_t>(w)]) {
            std::rethrow_exception(errs[static_cast<std::size_t>(w)]);
          }
        }
      }
      average_gradients(all_params);
      for (auto& r : reps) r.adam.step(cfg.lr);
      if (k > 1) check_replica_coherence(reps, e, s);
      const double invk = 1.0 / static_cast<double>(k);
      for (const auto& a : acc) {
        esum.total += a.total * invk;
        esum.pred += a.pred * invk;
        esum.eq += a.eq * invk;
      }
    }
    esum.total /= steps_per_epoch;
    esum.pred /= steps_per_epoch;
    esum.eq /= steps_per_epoch;
    history.push_back(esum);
    log_info("train: epoch " + std::to_string(e) + " loss " + std::to_string(esum.total) +
             " (pred " + std::to_string(esum.pred) + ", eq " + std::to_string(esum.eq) + ")");
  }

  CheckpointMeta meta;
  meta.train = cfg;
  meta.loss = loss_cfg;
  meta.physics = ctx.phys;
  meta.channels = ds.hr.channels;
  meta.stats = ds.stats;
  meta.epoch = cfg.epochs;
  meta.history = std::move(history);
  meta.rng_state = reps[0].sampler.state();
  return TrainedModel{std::move(reps[0].gen), std::move(reps[0].dec), std::move(meta)};
}

// ---------------------------------------------------------------------------
// Checkpoint container.

namespace {

constexpr char kCkptMagic[8] = {'M', 'F', 'S', 'R', 'C', 'K', 'P', '1'};

json unet_to_json(const UNetConfig& c) {
  return json{{"in_channels", c.in_channels}, {"n_c", c.n_c},
              {"depth", c.depth},             {"base_width", c.base_width},
              {"norm_eps", c.norm_eps},       {"use_norm", c.use_norm}};
}

UNetConfig unet_from_json(const json& j) {
  UNetConfig c;
  c.in_channels = j.at("in_channels").get<int>();
  c.n_c = j.at("n_c").get<int>();
  c.depth = j.at("depth").get<int>();
  c.base_width = j.at("base_width").get<int>();
  c.norm_eps = j.at("norm_eps").get<double>();
  c.use_norm = j.at("use_norm").get<bool>();
  return c;
}

json mlp_to_json(const MLPConfig& c) {
  return json{{"n_c", c.n_c},
              {"hidden", c.hidden},
              {"out_dim", c.out_dim},
              {"act", to_string(c.act)}};
}

MLPConfig mlp_from_json(const json& j) {
  MLPConfig c;
  c.n_c = j.at("n_c").get<int>();
  c.hidden = j.at("hidden").get<std::vector<int>>();
  c.out_dim = j.at("out_dim").get<int>();
  c.act = activation_from_string(j.at("act").get<std::string>());
  return c;
}

json loss_to_json(const LossConfig& c) {
  return json{{"gamma", c.gamma},
              {"pred_norm", to_string(c.pred_norm)},
              {"huber_delta", c.huber_delta},
              {"weight_decay", c.weight_decay},
              {"pde_id", c.pde_id}};
}

LossConfig loss_from_json(const json& j) {
  LossConfig c;
  c.gamma = j.at("gamma").get<double>();
  c.pred_norm = pred_norm_from_string(j.at("pred_norm").get<std::string>());
  c.huber_delta = j.at("huber_delta").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.pde_id = j.at("pde_id").get<std::string>();
  return c;
}

json train_to_json(const TrainConfig& c) {
  return json{{"lr", c.lr},
              {"epochs", c.epochs},
              {"samples_per_epoch", c.samples_per_epoch},
              {"points_per_window", c.points_per_window},
              {"batch_windows", c.batch_windows},
              {"seed", c.seed},
              {"n_workers", c.n_workers},
              {"lr_window", c.lr_window},
              {"upscale", c.upscale},
              {"unet", unet_to_json(c.unet)},
              {"mlp", mlp_to_json(c.mlp)}};
}

TrainConfig train_from_json(const json& j) {
  TrainConfig c;
  c.lr = j.at("lr").get<double>();
  c.epochs = j.at("epochs").get<int>();
  c.samples_per_epoch = j.at("samples_per_epoch").get<int>();
  c.points_per_window = j.at("points_per_window").get<int>();
  c.batch_windows = j.at("batch_windows").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.n_workers = j.at("n_workers").get<int>();
  c.lr_window = j.at("lr_window").get<std::array<int, 3>>();
  c.upscale = j.at("upscale").get<std::array<int, 3>>();
  c.unet = unet_from_json(j.at("unet"));
  c.mlp = mlp_from_json(j.at("mlp"));
  return c;
}

std::vector<NamedParam> model_parameters(const TrainedModel& m) {
  std::vector<NamedParam> ps = m.gen.parameters();
  std::vector<NamedParam> dp = m.dec.parameters();
  ps.insert(ps.end(), dp.begin(), dp.end());
  return ps;
}

}  // namespace

namespace {

void reject_unknown_keys(const json& j, const char* what,
                         std::initializer_list<const char*> allowed) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : allowed) known = known || it.key() == k;
    if (!known) {
      throw std::invalid_argument("config: unknown key '" + it.key() + "' in " + what);
    }
  }
}

}  // namespace

void apply_config_json(const std::string& text, TrainConfig& train_cfg, LossConfig& loss_cfg) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw std::invalid_argument("config: expected a JSON object");
  try {
    reject_unknown_keys(j, "config", {"train", "loss"});
    if (j.contains("train")) {
      const json& jt = j["train"];
      reject_unknown_keys(jt, "train",
                          {"lr", "epochs", "samples_per_epoch", "points_per_window",
                           "batch_windows", "seed", "n_workers", "lr_window", "upscale",
                           "unet", "mlp"});
      train_cfg.lr = jt.value("lr", train_cfg.lr);
      train_cfg.epochs = jt.value("epochs", train_cfg.epochs);
      train_cfg.samples_per_epoch = jt.value("samples_per_epoch", train_cfg.samples_per_epoch);
      train_cfg.points_per_window = jt.value("points_per_window", train_cfg.points_per_window);
      train_cfg.batch_windows = jt.value("batch_windows", train_cfg.batch_windows);
      train_cfg.seed = jt.value("seed", train_cfg.seed);
      train_cfg.n_workers = jt.value("n_workers", train_cfg.n_workers);
      train_cfg.lr_window = jt.value("lr_window", train_cfg.lr_window);
      train_cfg.upscale = jt.value("upscale", train_cfg.upscale);
      if (jt.contains("unet")) {
        const json& ju = jt["unet"];
        reject_unknown_keys(ju, "train.unet",
                            {"in_channels", "n_c", "depth", "base_width", "norm_eps",
                             "use_norm"});
        UNetConfig& u = train_cfg.unet;
        u.in_channels = ju.value("in_channels", u.in_channels);
        u.n_c = ju.value("n_c", u.n_c);
        u.depth = ju.value("depth", u.depth);
        u.base_width = ju.value("base_width", u.base_width);
        u.norm_eps = ju.value("norm_eps", u.norm_eps);
        u.use_norm = ju.value("use_norm", u.use_norm);
      }
      if (jt.contains("mlp")) {
        const json& jm = jt["mlp"];
        reject_unknown_keys(jm, "train.mlp", {"n_c", "hidden", "out_dim", "act"});
        MLPConfig& m = train_cfg.mlp;
        m.n_c = jm.value("n_c", m.n_c);
        m.hidden = jm.value("hidden", m.hidden);
        m.out_dim = jm.value("out_dim", m.out_dim);
        if (jm.contains("act")) m.act = activation_from_string(jm["act"].get<std::string>());
      }
    }
    if (j.contains("loss")) {
      const json& jl = j["loss"];
      reject_unknown_keys(jl, "loss",
                          {"gamma", "pred_norm", "huber_delta", "weight_decay", "pde_id"});
      loss_cfg.gamma = jl.value("gamma", loss_cfg.gamma);
      if (jl.contains("pred_norm")) {
        loss_cfg.pred_norm = pred_norm_from_string(jl["pred_norm"].get<std::string>());
      }
      loss_cfg.huber_delta = jl.value("huber_delta", loss_cfg.huber_delta);
      loss_cfg.weight_decay = jl.value("weight_decay", loss_cfg.weight_decay);
      loss_cfg.pde_id = jl.value("pde_id", loss_cfg.pde_id);
    }
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: wrong value type: ") + e.what());
  }
}

std::string config_json_text(const TrainConfig& train_cfg, const LossConfig& loss_cfg) {
  return json{{"train", train_to_json(train_cfg)}, {"loss", loss_to_json(loss_cfg)}}.dump(2);
}

void save_checkpoint(const TrainedModel& model, const std::string& path) {
  const std::vector<NamedParam> params = model_parameters(model);

  json manifest;
  manifest["version"] = model.meta.version;
  manifest["kind"] = "continuous";
  manifest["epoch"] = model.meta.epoch;
  manifest["channels"] = model.meta.channels;
  json stats = json::array();
  for (const auto& s : model.meta.stats) stats.push_back({{"mean", s.mean}, {"std", s.std}});
  manifest["stats"] = stats;
  manifest["physics"] = {{"ra", model.meta.physics.ra}, {"pr", model.meta.physics.pr}};
  manifest["train"] = train_to_json(model.meta.train);
  manifest["loss"] = loss_to_json(model.meta.loss);
  manifest["rng_state"] = model.meta.rng_state;
  json hist = json::array();
  for (const auto& h : model.meta.history) hist.push_back({h.total, h.pred, h.eq});
  manifest["history"] = hist;

  json dir = json::array();
  std::size_t total = 0;
  for (const auto& p : params) {
    dir.push_back({{"name", p.name},
                   {"shape", p.tensor.shape()},
                   {"offset", static_cast<std::int64_t>(total)}});
    total += static_cast<std::size_t>(p.tensor.size());
  }
  manifest["params"] = dir;

  std::vector<double> blob(total);
  std::size_t at = 0;
  for (const auto& p : params) {
    std::memcpy(blob.data() + at, p.tensor.data(),
                static_cast<std::size_t>(p.tensor.size()) * sizeof(double));
    at += static_cast<std::size_t>(p.tensor.size());
  }

  const std::string header = manifest.dump();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("save_checkpoint: cannot open '" + path + "' for writing");
  os.write(kCkptMagic, sizeof(kCkptMagic));
  write_u32le(os, static_cast<std::uint32_t>(header.size()));
  os.write(header.data(), static_cast<std::streamsize>(header.size()));
  write_f64_blob(os, blob.data(), blob.size());
  write_u32le(os, crc32(blob.data(), blob.size() * sizeof(double)));
  if (!os) throw DataError("save_checkpoint: write failure on '" + path + "'");
}

TrainedModel load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("load_checkpoint: cannot open '" + path + "'");
  char magic[8];
  read_exact(is, magic, sizeof(magic), "checkpoint magic");
  if (std::memcmp(magic, kCkptMagic, sizeof(magic)) != 0) {
    throw DataError("load_checkpoint: '" + path + "' is not an MFSRCKP1 file");
  }
  const std::uint32_t hlen = read_u32le(is, "checkpoint header length");
  if (hlen > (1u << 24)) throw DataError("load_checkpoint: implausible header length");
  std::string header(hlen, '\0');
  read_exact(is, header.data(), hlen, "checkpoint header");
  json manifest;
  try {
    manifest = json::parse(header);
  } catch (const json::exception& e) {
    throw DataError(std::string("load_checkpoint: bad manifest JSON: ") + e.what());
  }

  CheckpointMeta meta;
  try {
    meta.version = manifest.at("version").get<int>();
    if (meta.version != 1) {
      throw DataError("load_checkpoint: unsupported version " + std::to_string(meta.version));
    }
    meta.train = train_from_json(manifest.at("train"));
    meta.loss = loss_from_json(manifest.at("loss"));
    meta.physics = PhysicsParams(manifest.at("physics").at("ra").get<double>(),
                                 manifest.at("physics").at("pr").get<double>());
    meta.channels = manifest.at("channels").get<std::vector<std::string>>();
    for (const auto& s : manifest.at("stats")) {
      meta.stats.push_back(
          ChannelStats{s.at("mean").get<double>(), s.at("std").get<double>()});
    }
    meta.epoch = manifest.at("epoch").get<int>();
    for (const auto& h : manifest.at("history")) {
      meta.history.push_back(EpochLoss{h.at(0).get<double>(), h.at(1).get<double>(),
                                       h.at(2).get<double>()});
    }
    meta.rng_state = manifest.at("rng_state").get<std::string>();
  } catch (const json::exception& e) {
    throw DataError(std::string("load_checkpoint: manifest field error: ") + e.what());
  }

  ContextGenerator gen(meta.train.unet, meta.train.seed);
  ContinuousDecoder dec(meta.train.mlp, meta.train.seed + 1);
  TrainedModel model{std::move(gen), std::move(dec), std::move(meta)};

  std::map<std::string, ad::Tensor> by_name;
  for (const auto& p : model_parameters(model)) by_name.emplace(p.name, p.tensor);

  const json& dir = manifest.at("params");
  if (dir.size() != by_name.size()) {
    throw DataError("load_checkpoint: parameter directory lists " +
                    std::to_string(dir.size()) + " entries, model has " +
                    std::to_string(by_name.size()));
  }
  std::size_t total = 0;
  for (const auto& entry : dir) {
    std::size_t n = 1;
    for (int d : entry.at("shape").get<std::vector<int>>()) n *= static_cast<std::size_t>(d);
    total += n;
  }
  std::vector<double> blob(total);
  read_f64_blob(is, blob.data(), blob.size(), "checkpoint parameters");
  const std::uint32_t want = read_u32le(is, "checkpoint checksum");
  const std::uint32_t got = crc32(blob.data(), blob.size() * sizeof(double));
  if (want != got) {
    throw DataError("checksum mismatch in checkpoint parameters: file says " +
                    std::to_string(want) + ", payload hashes to " + std::to_string(got));
  }

  for (const auto& entry : dir) {
    const std::string name = entry.at("name").get<std::string>();
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      throw DataError("load_checkpoint: unknown parameter '" + name + "' in directory");
    }
    const std::vector<int> shape = entry.at("shape").get<std::vector<int>>();
    if (shape != it->second.shape()) {
      throw DataError("load_checkpoint: shape mismatch on parameter '" + name + "'");
    }
    const auto offset = entry.at("offset").get<std::int64_t>();
    if (offset < 0 ||
        static_cast<std::size_t>(offset) + static_cast<std::size_t>(it->second.size()) >
            blob.size()) {
      throw DataError("load_checkpoint: parameter '" + name + "' overruns the blob");
    }
    std::memcpy(it->second.data(), blob.data() + offset,
                static_cast<std::size_t>(it->second.size()) * sizeof(double));
  }
  return model;
}

}  // namespace mfsr
