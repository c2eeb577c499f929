#include "cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <iterator>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mfsr/baselines.hpp"
#include "mfsr/dataset.hpp"
#include "mfsr/errors.hpp"
#include "mfsr/evaluate.hpp"
#include "mfsr/log.hpp"
#include "mfsr/simulate.hpp"
#include "mfsr/train.hpp"

namespace mfsr {
namespace {

using nlohmann::json;

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open '" + path + "'");
  return std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open '" + path + "' for writing");
  os << text;
  if (!os) throw DataError("write failure on '" + path + "'");
}

std::array<int, 3> to_res(const std::vector<int>& v, const char* flag) {
  if (v.size() != 3) {
    throw std::invalid_argument(std::string(flag) + " expects three values T,Z,X");
  }
  return {v[0], v[1], v[2]};
}

void echo_config(const std::string& sub, const json& resolved) {
  log_info(sub + " resolved config: " + resolved.dump());
}

// Ground truth in physical units on the LR-covered region (or a prefix
// thereof when explicit extents are passed).
Field4 ground_truth(const Dataset& ds, const std::array<int, 3>& extents) {
  Field4 gt = crop_window(ds.hr, {0, 0, 0}, extents);
  if (gt.normalized) denormalize_field(gt, ds.stats);
  return gt;
}

// LR field in physical units (datasets may arrive normalized).
Field4 physical_lr(const Dataset& ds) {
  Field4 lr = ds.lr;
  lr.data = ds.lr.data.clone();
  if (lr.normalized) denormalize_field(lr, ds.stats);
  return lr;
}

// Encode/decode through the checkpointed model: normalize the LR input with
// the checkpoint's training statistics, reconstruct, return physical units.
Field4 model_reconstruction(const TrainedModel& model, const Dataset& ds,
                            const std::array<int, 3>& res) {
  Field4 lr = ds.lr;
  lr.data = ds.lr.data.clone();
  if (!lr.normalized) normalize_field(lr, model.meta.stats);
  Field4 sr = superresolve(model.gen, model.dec, lr, res);
  denormalize_field(sr, model.meta.stats);
  return sr;
}

MetricsReport score(const Field4& pred, const Dataset& ds) {
  Field4 gt = ground_truth(ds, {pred.extent(0), pred.extent(1), pred.extent(2)});
  return evaluate_all(pred, gt, PhysicsParams(ds.sim.ra, ds.sim.pr));
}

// Flag-override plumbing: values the user actually passed win over --config.
struct TrainOverrides {
  std::optional<double> gamma, lr;
  std::optional<int> epochs, workers;
  std::optional<std::string> pred_norm;
  std::optional<std::uint64_t> seed;
};

void resolve_train_config(const std::string& config_path, const TrainOverrides& o,
                          TrainConfig& tc, LossConfig& lc) {
  if (!config_path.empty()) apply_config_json(slurp(config_path), tc, lc);
  if (o.gamma) lc.gamma = *o.gamma;
  if (o.pred_norm) lc.pred_norm = pred_norm_from_string(*o.pred_norm);
  if (o.lr) tc.lr = *o.lr;
  if (o.epochs) tc.epochs = *o.epochs;
  if (o.workers) tc.n_workers = *o.workers;
  if (o.seed) tc.seed = *o.seed;
}

void add_train_flags(CLI::App* sub, std::string& config_path, TrainOverrides& o) {
  sub->add_option("--config", config_path, "JSON config file merged under flag overrides");
  sub->add_option("--gamma", o.gamma, "equation-loss weight");
  sub->add_option("--pred-norm", o.pred_norm, "prediction norm: l1|l2|huber");
  sub->add_option("--lr", o.lr, "Adam learning rate");
  sub->add_option("--epochs", o.epochs, "training epochs");
  sub->add_option("--workers", o.workers, "data-parallel worker count");
  sub->add_option("--seed", o.seed, "RNG seed");
}

int run_simulate(const SimConfig& sc, int d_t, int d_s, const std::string& out) {
  echo_config("simulate", json{{"ra", sc.ra},
                               {"pr", sc.pr},
                               {"nx", sc.nx},
                               {"nz", sc.nz},
                               {"lx", sc.lx},
                               {"lz", sc.lz},
                               {"t_final", sc.t_final},
                               {"dt", sc.dt},
                               {"snapshot_every", sc.snapshot_every},
                               {"perturb_amp", sc.perturb_amp},
                               {"seed", sc.seed},
                               {"d_t", d_t},
                               {"d_s", d_s},
                               {"out", out}});
  Dataset ds = make_dataset(sc, d_t, d_s);
  save_dataset(ds, out);
  std::cout << "wrote " << out << " (HR " << ds.hr.extent(0) << "x" << ds.hr.extent(1) << "x"
            << ds.hr.extent(2) << ", LR " << ds.lr.extent(0) << "x" << ds.lr.extent(1) << "x"
            << ds.lr.extent(2) << ")\n";
  return 0;
}

int run_downsample(const std::string& data, int d_t, int d_s, const std::string& out) {
  echo_config("downsample", json{{"data", data}, {"d_t", d_t}, {"d_s", d_s}, {"out", out}});
  Dataset ds = load_dataset(data);
  ds.lr = downsample(ds.hr, d_s, d_t);
  ds.d_t = d_t;
  ds.d_s = d_s;
  save_dataset(ds, out);
  std::cout << "wrote " << out << " (LR " << ds.lr.extent(0) << "x" << ds.lr.extent(1) << "x"
            << ds.lr.extent(2) << ")\n";
  return 0;
}

int run_train(const std::string& data, const std::string& config_path, const TrainOverrides& o,
              const std::string& out, const std::string& history_path) {
  TrainConfig tc;
  LossConfig lc;
  resolve_train_config(config_path, o, tc, lc);
  echo_config("train", json::parse(config_json_text(tc, lc)));
  Dataset ds = load_dataset(data);
  TrainedModel model = train(tc, lc, ds);
  save_checkpoint(model, out);
  if (!history_path.empty()) write_text(history_path, loss_history_csv(model.meta.history));
  if (!model.meta.history.empty()) {
    const EpochLoss& last = model.meta.history.back();
    std::cout << "final losses: total " << last.total << ", pred " << last.pred << ", eq "
              << last.eq << "\n";
  }
  std::cout << "wrote " << out << "\n";
  return 0;
}

int run_infer(const std::string& ckpt, const std::string& data,
              const std::vector<int>& res_flag, const std::string& out) {
  TrainedModel model = load_checkpoint(ckpt);
  Dataset ds = load_dataset(data);
  const std::array<int, 3> res =
      res_flag.empty() ? covered_extents(ds) : to_res(res_flag, "--target-res");
  echo_config("infer", json{{"checkpoint", ckpt},
                            {"data", data},
                            {"target_res", res},
                            {"out", out}});
  Field4 sr = model_reconstruction(model, ds, res);
  save_field(sr, out);
  std::cout << "wrote " << out << " (" << res[0] << "x" << res[1] << "x" << res[2] << ")\n";
  return 0;
}

int run_evaluate(const std::string& pred_path, const std::string& gt_path,
                 const std::string& data, double ra, double pr, const std::string& out) {
  echo_config("evaluate", json{{"pred", pred_path},
                               {"gt", gt_path},
                               {"data", data},
                               {"ra", ra},
                               {"pr", pr},
                               {"out", out}});
  Field4 pred = load_field(pred_path);
  MetricsReport report;
  if (!data.empty()) {
    Dataset ds = load_dataset(data);
    report = score(pred, ds);
    report.dataset_id = data;
  } else {
    Field4 gt = load_field(gt_path);
    report = evaluate_all(pred, gt, PhysicsParams(ra, pr));
    report.dataset_id = gt_path;
  }
  report.model_id = pred_path;
  std::cout << report_csv(report);
  if (!out.empty()) write_text(out, report_json(report));
  return 0;
}

int run_gamma_sweep(const std::string& data, const std::vector<double>& gammas,
                    const std::string& config_path, const TrainOverrides& o,
                    const std::string& out) {
  if (gammas.empty()) throw std::invalid_argument("--gammas must list at least one value");
  TrainConfig tc;
  LossConfig lc;
  resolve_train_config(config_path, o, tc, lc);
  echo_config("gamma-sweep",
              json{{"data", data}, {"gammas", gammas},
                   {"base", json::parse(config_json_text(tc, lc))}});
  Dataset ds = load_dataset(data);

  std::ostringstream csv;
  csv << std::setprecision(17) << "gamma,avg_r2";
  for (const char* name : kMetricNames) csv << ',' << name << "_nmae_x100," << name << "_r2";
  csv << '\n';
  for (double g : gammas) {
    LossConfig run_lc = lc;
    run_lc.gamma = g;
    TrainedModel model = train(tc, run_lc, ds);
    Field4 sr = model_reconstruction(model, ds, covered_extents(ds));
    MetricsReport rep = score(sr, ds);
    csv << g << ',' << rep.avg_r2;
    for (const auto& row : rep.rows) {
      if (row.defined) {
        csv << ',' << row.nmae_x100 << ',' << row.r2;
      } else {
        csv << ",,";
      }
    }
    csv << '\n';
    log_info("gamma " + std::to_string(g) + ": avg R2 " + std::to_string(rep.avg_r2));
  }
  std::cout << csv.str();
  if (!out.empty()) write_text(out, csv.str());
  return 0;
}

int run_noise_eval(const std::string& ckpt, const std::string& data, std::uint64_t seed,
                   const std::string& out) {
  echo_config("noise-eval",
              json{{"checkpoint", ckpt}, {"data", data}, {"seed", seed}, {"out", out}});
  TrainedModel model = load_checkpoint(ckpt);
  Dataset ds = load_dataset(data);
  const std::array<int, 3> res = covered_extents(ds);

  // clean input through the model
  MetricsReport clean = score(model_reconstruction(model, ds, res), ds);

  // appendix protocol: normalize the LR input, add N(0, 1), reconstruct
  Dataset noisy = ds;
  noisy.lr.data = ds.lr.data.clone();
  if (!noisy.lr.normalized) normalize_field(noisy.lr, model.meta.stats);
  Rng rng(seed);
  add_gaussian_noise(noisy.lr, rng);
  MetricsReport degraded = score(model_reconstruction(model, noisy, res), ds);

  // trilinear baseline on the same noisy input (physical units)
  Field4 noisy_phys = noisy.lr;
  noisy_phys.data = noisy.lr.data.clone();
  denormalize_field(noisy_phys, model.meta.stats);
  MetricsReport trilinear = score(trilinear_upsample(noisy_phys, res), ds);

  std::ostringstream csv;
  csv << std::setprecision(17) << "variant,avg_r2\n";
  csv << "model_clean," << clean.avg_r2 << '\n';
  csv << "model_noisy," << degraded.avg_r2 << '\n';
  csv << "trilinear_noisy," << trilinear.avg_r2 << '\n';
  std::cout << csv.str();
  if (!out.empty()) {
    write_text(out, json{{"model_clean", json::parse(report_json(clean))},
                         {"model_noisy", json::parse(report_json(degraded))},
                         {"trilinear_noisy", json::parse(report_json(trilinear))}}
                       .dump(2));
  }
  return 0;
}

int run_scale_bench(const std::string& data, int max_workers, const std::string& config_path,
                    const TrainOverrides& o, const std::string& out) {
  if (max_workers < 1) throw std::invalid_argument("--max-workers must be >= 1");
  TrainConfig tc;
  LossConfig lc;
  resolve_train_config(config_path, o, tc, lc);
  echo_config("scale-bench",
              json{{"data", data}, {"max_workers", max_workers},
                   {"base", json::parse(config_json_text(tc, lc))}});
  Dataset ds = load_dataset(data);

  std::ostringstream csv;
  csv << "workers,seconds,windows_per_sec,speedup\n";
  const double total_windows = static_cast<double>(tc.epochs) * tc.samples_per_epoch;
  double base_seconds = 0.0;
  for (int w = 1; w <= max_workers; ++w) {
    if (tc.batch_windows % w != 0) continue;  // worker count must divide the batch
    TrainConfig run_tc = tc;
    run_tc.n_workers = w;
    const auto t0 = std::chrono::steady_clock::now();
    train(run_tc, lc, ds);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (w == 1) base_seconds = secs;
    csv << w << ',' << secs << ',' << (secs > 0 ? total_windows / secs : 0.0) << ','
        << (secs > 0 && base_seconds > 0 ? base_seconds / secs : 0.0) << '\n';
    log_info("workers " + std::to_string(w) + ": " + std::to_string(secs) + " s");
  }
  std::cout << csv.str();
  if (!out.empty()) write_text(out, csv.str());
  return 0;
}

int run_baseline(const std::string& kind, const std::string& data,
                 const std::vector<int>& res_flag, const std::string& config_path,
                 const TrainOverrides& o, const std::string& out) {
  Dataset ds = load_dataset(data);
  if (kind == "trilinear") {
    const std::array<int, 3> res =
        res_flag.empty() ? covered_extents(ds) : to_res(res_flag, "--target-res");
    echo_config("baseline",
                json{{"kind", kind}, {"data", data}, {"target_res", res}, {"out", out}});
    save_field(trilinear_upsample(physical_lr(ds), res), out);
  } else if (kind == "discrete") {
    TrainConfig tc;
    LossConfig lc;
    resolve_train_config(config_path, o, tc, lc);
    tc.upscale = {ds.d_t, ds.d_s, ds.d_s};
    echo_config("baseline", json{{"kind", kind},
                                 {"data", data},
                                 {"out", out},
                                 {"base", json::parse(config_json_text(tc, lc))}});
    DiscreteBaselineResult res = train_discrete_baseline(tc, lc, ds);
    Field4 lr = ds.lr;
    lr.data = ds.lr.data.clone();
    if (!lr.normalized) normalize_field(lr, ds.stats);
    Field4 sr = res.model.reconstruct(lr);
    denormalize_field(sr, ds.stats);
    save_field(sr, out);
  } else {
    throw std::invalid_argument("--kind must be trilinear or discrete");
  }
  std::cout << "wrote " << out << "\n";
  return 0;
}

}  // namespace

int cli_dispatch(int argc, const char* const* argv) {
  CLI::App app{"mesh-free space-time super-resolution for PDE fields"};
  app.require_subcommand(1);
  std::function<int()> action;

  // simulate ----------------------------------------------------------------
  {
    auto* sub = app.add_subcommand("simulate", "run the RB solver and write a dataset");
    auto sc = std::make_shared<SimConfig>();
    auto d_t = std::make_shared<int>(4);
    auto d_s = std::make_shared<int>(8);
    auto out = std::make_shared<std::string>();
    sub->add_option("--ra", sc->ra, "Rayleigh number");
    sub->add_option("--pr", sc->pr, "Prandtl number");
    sub->add_option("--nx", sc->nx, "grid cells in x");
    sub->add_option("--nz", sc->nz, "grid cells in z");
    sub->add_option("--lx", sc->lx, "domain length in x");
    sub->add_option("--lz", sc->lz, "domain height in z");
    sub->add_option("--t-final", sc->t_final, "simulated time span");
    sub->add_option("--dt", sc->dt, "time step");
    sub->add_option("--snapshot-every", sc->snapshot_every, "steps between frames");
    sub->add_option("--perturb-amp", sc->perturb_amp, "initial perturbation amplitude");
    sub->add_option("--seed", sc->seed, "RNG seed");
    sub->add_option("--d-t", *d_t, "temporal downsampling factor");
    sub->add_option("--d-s", *d_s, "spatial downsampling factor");
    sub->add_option("--out", *out, "output dataset path")->required();
    sub->callback([=, &action] { action = [=] { return run_simulate(*sc, *d_t, *d_s, *out); }; });
  }

  // downsample ---------------------------------------------------------------
  {
    auto* sub = app.add_subcommand("downsample", "rebuild the LR field at new factors");
    auto data = std::make_shared<std::string>();
    auto d_t = std::make_shared<int>(4);
    auto d_s = std::make_shared<int>(8);
    auto seed = std::make_shared<std::uint64_t>(0);
    auto out = std::make_shared<std::string>();
    sub->add_option("--data", *data, "input dataset")->required();
    sub->add_option("--d-t", *d_t, "temporal downsampling factor");
    sub->add_option("--d-s", *d_s, "spatial downsampling factor");
    sub->add_option("--seed", *seed, "RNG seed (unused; the operation is deterministic)");
    sub->add_option("--out", *out, "output dataset path")->required();
    sub->callback([=, &action] { action = [=] { return run_downsample(*data, *d_t, *d_s, *out); }; });
  }

  // train ---------------------------------------------------------------------
  {
    auto* sub = app.add_subcommand("train", "train the continuous model");
    auto data = std::make_shared<std::string>();
    auto config = std::make_shared<std::string>();
    auto overrides = std::make_shared<TrainOverrides>();
    auto out = std::make_shared<std::string>();
    auto history = std::make_shared<std::string>();
    sub->add_option("--data", *data, "training dataset")->required();
    add_train_flags(sub, *config, *overrides);
    sub->add_option("--out", *out, "output checkpoint path")->required();
    sub->add_option("--history", *history, "optional loss-history CSV path");
    sub->callback([=, &action] {
      action = [=] { return run_train(*data, *config, *overrides, *out, *history); };
    });
  }

  // infer ----------------------------------------------------------------------
  {
    auto* sub = app.add_subcommand("infer", "reconstruct a field from a checkpoint");
    auto ckpt = std::make_shared<std::string>();
    auto data = std::make_shared<std::string>();
    auto res = std::make_shared<std::vector<int>>();
    auto seed = std::make_shared<std::uint64_t>(0);
    auto out = std::make_shared<std::string>();
    sub->add_option("--checkpoint", *ckpt, "trained checkpoint")->required();
    sub->add_option("--data", *data, "dataset providing the LR input")->required();
    sub->add_option("--target-res", *res, "output resolution T,Z,X")->delimiter(',');
    sub->add_option("--seed", *seed, "RNG seed (unused; inference is deterministic)");
    sub->add_option("--out", *out, "output field path")->required();
    sub->callback([=, &action] { action = [=] { return run_infer(*ckpt, *data, *res, *out); }; });
  }

  // evaluate --------------------------------------------------------------------
  {
    auto* sub = app.add_subcommand("evaluate", "score a reconstruction against ground truth");
    auto pred = std::make_shared<std::string>();
    auto gt = std::make_shared<std::string>();
    auto data = std::make_shared<std::string>();
    auto ra = std::make_shared<double>(1e5);
    auto pr = std::make_shared<double>(1.0);
    auto out = std::make_shared<std::string>();
    sub->add_option("--pred", *pred, "reconstructed field file")->required();
    auto* gt_opt = sub->add_option("--gt", *gt, "ground-truth field file");
    auto* data_opt =
        sub->add_option("--data", *data, "dataset file; its HR field is the ground truth");
    gt_opt->excludes(data_opt);
    sub->add_option("--ra", *ra, "Rayleigh number (with --gt)");
    sub->add_option("--pr", *pr, "Prandtl number (with --gt)");
    sub->add_option("--out", *out, "optional JSON report path");
    sub->callback([=, &action] {
      action = [=] {
        if (gt->empty() && data->empty()) {
          throw std::invalid_argument("evaluate needs --gt or --data");
        }
        return run_evaluate(*pred, *gt, *data, *ra, *pr, *out);
      };
    });
  }

  // gamma-sweep --------------------------------------------------------------------
  {
    auto* sub = app.add_subcommand("gamma-sweep", "train and score across equation weights");
    auto data = std::make_shared<std::string>();
    auto gammas = std::make_shared<std::vector<double>>();
    auto config = std::make_shared<std::string>();
    auto overrides = std::make_shared<TrainOverrides>();
    auto out = std::make_shared<std::string>();
    sub->add_option("--data", *data, "training dataset")->required();
    sub->add_option("--gammas", *gammas, "comma-separated equation weights")
        ->required()
        ->delimiter(',');
    add_train_flags(sub, *config, *overrides);
    sub->add_option("--out", *out, "optional CSV report path");
    sub->callback([=, &action] {
      action = [=] { return run_gamma_sweep(*data, *gammas, *config, *overrides, *out); };
    });
  }

  // noise-eval -----------------------------------------------------------------------
  {
    auto* sub = app.add_subcommand("noise-eval", "score clean vs noise-corrupted input");
    auto ckpt = std::make_shared<std::string>();
    auto data = std::make_shared<std::string>();
    auto seed = std::make_shared<std::uint64_t>(0);
    auto out = std::make_shared<std::string>();
    sub->add_option("--checkpoint", *ckpt, "trained checkpoint")->required();
    sub->add_option("--data", *data, "evaluation dataset")->required();
    sub->add_option("--seed", *seed, "noise RNG seed");
    sub->add_option("--out", *out, "optional JSON report path");
    sub->callback([=, &action] {
      action = [=] { return run_noise_eval(*ckpt, *data, *seed, *out); };
    });
  }

  // scale-bench -------------------------------------------------------------------------
  {
    auto* sub = app.add_subcommand("scale-bench", "time training across worker counts");
    auto data = std::make_shared<std::string>();
    auto max_workers = std::make_shared<int>(4);
    auto config = std::make_shared<std::string>();
    auto overrides = std::make_shared<TrainOverrides>();
    auto out = std::make_shared<std::string>();
    sub->add_option("--data", *data, "training dataset")->required();
    sub->add_option("--max-workers", *max_workers, "largest worker count to time");
    add_train_flags(sub, *config, *overrides);
    sub->add_option("--out", *out, "optional CSV report path");
    sub->callback([=, &action] {
      action = [=] { return run_scale_bench(*data, *max_workers, *config, *overrides, *out); };
    });
  }

  // baseline -------------------------------------------------------------------------------
  {
    auto* sub = app.add_subcommand("baseline", "run a baseline reconstructor");
    auto kind = std::make_shared<std::string>();
    auto data = std::make_shared<std::string>();
    auto res = std::make_shared<std::vector<int>>();
    auto config = std::make_shared<std::string>();
    auto overrides = std::make_shared<TrainOverrides>();
    auto out = std::make_shared<std::string>();
    sub->add_option("--kind", *kind, "trilinear | discrete")->required();
    sub->add_option("--data", *data, "input dataset")->required();
    sub->add_option("--target-res", *res, "output resolution T,Z,X (trilinear only)")
        ->delimiter(',');
    add_train_flags(sub, *config, *overrides);
    sub->add_option("--out", *out, "output field path")->required();
    sub->callback([=, &action] {
      action = [=] { return run_baseline(*kind, *data, *res, *config, *overrides, *out); };
    });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    return action();
  } catch (const DataError& e) {
    std::cerr << "mfsr: data error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "mfsr: numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "mfsr: error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace mfsr
