// Command-line front end: filter banks, FRAME learning, sampling, Julesz
// statistics matching, and the exact enumeration oracle.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "frame/checkpoint.hpp"
#include "frame/config.hpp"
#include "frame/errors.hpp"
#include "frame/filter_bank.hpp"
#include "frame/generative.hpp"
#include "frame/image.hpp"
#include "frame/learner.hpp"
#include "frame/model.hpp"
#include "frame/oracle.hpp"
#include "frame/sampler.hpp"

namespace fs = std::filesystem;
using namespace frame;

namespace {

using KV = std::map<std::string, std::string>;

// ---------- config plumbing ----------

// Registered flags mirror a key=value config file; flags the user actually
// passed win over config-file entries, which win over defaults.
struct SubOpts {
  KV defaults;
  std::map<std::string, std::pair<CLI::Option*, std::string*>> bound;
  std::deque<std::string> storage;
  std::string config_path;

  void add(CLI::App* app, const std::string& key, const std::string& flag,
           const std::string& def, const std::string& desc) {
    defaults[key] = def;
    storage.push_back(def);
    CLI::Option* opt = app->add_option(flag, storage.back(), desc);
    bound[key] = {opt, &storage.back()};
  }
  void add_config(CLI::App* app) {
    app->add_option("--config", config_path,
                    "key=value config file (explicit flags win)");
  }
  KV resolved() const {
    KV flags;
    for (const auto& [key, slot] : bound)
      if (slot.first->count() > 0) flags[key] = *slot.second;
    const KV file =
        config_path.empty() ? KV{} : load_key_value_file(config_path);
    return merge_config(defaults, file, flags);
  }
};

double to_double(const KV& kv, const std::string& key) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(kv.at(key), &pos);
    if (pos != kv.at(key).size()) throw std::invalid_argument(key);
    return v;
  } catch (const std::exception&) {
    throw InvalidArgument("bad numeric value for key " + key + ": '" +
                          kv.at(key) + "'");
  }
}

int to_int(const KV& kv, const std::string& key) {
  try {
    std::size_t pos = 0;
    const long v = std::stol(kv.at(key), &pos);
    if (pos != kv.at(key).size()) throw std::invalid_argument(key);
    return static_cast<int>(v);
  } catch (const std::exception&) {
    throw InvalidArgument("bad integer value for key " + key + ": '" +
                          kv.at(key) + "'");
  }
}

std::uint64_t to_u64(const KV& kv, const std::string& key) {
  try {
    std::size_t pos = 0;
    const unsigned long long v = std::stoull(kv.at(key), &pos);
    if (pos != kv.at(key).size()) throw std::invalid_argument(key);
    return v;
  } catch (const std::exception&) {
    throw InvalidArgument("bad seed value for key " + key + ": '" +
                          kv.at(key) + "'");
  }
}

void require_keys(const KV& kv, std::initializer_list<const char*> keys) {
  for (const char* key : keys)
    if (kv.at(key).empty())
      throw InvalidArgument(std::string("missing required key: ") + key);
}

int resolve_threads(int t) {
  if (t > 0) return t;
  const unsigned hc = std::thread::hardware_concurrency();
  return hc > 0 ? static_cast<int>(hc) : 1;
}

Schedule parse_schedule(const std::string& s) {
  if (s == "constant") return Schedule::constant;
  if (s == "one_over_t") return Schedule::one_over_t;
  if (s == "variance_scaled") return Schedule::variance_scaled;
  throw InvalidArgument("unknown schedule: " + s);
}

StartMode parse_start(const std::string& s) {
  if (s == "warm") return StartMode::warm;
  if (s == "cold") return StartMode::cold;
  throw InvalidArgument("unknown start mode: " + s);
}

LearnConfig learn_config_from(const KV& kv) {
  LearnConfig c;
  c.gamma0 = to_double(kv, "gamma");
  c.schedule = parse_schedule(kv.at("schedule"));
  c.t0 = to_int(kv, "t0");
  c.iterations = to_int(kv, "iters");
  c.langevin_steps = to_int(kv, "langevin_steps");
  c.n_chains = to_int(kv, "chains");
  c.epsilon = to_double(kv, "step_size");
  c.start = parse_start(kv.at("start"));
  c.master_seed = to_u64(kv, "seed");
  c.sigma_sq = to_double(kv, "sigma");
  c.tol = to_double(kv, "tol");
  c.threads = resolve_threads(to_int(kv, "threads"));
  c.validate();
  return c;
}

// ---------- images ----------

std::vector<std::string> collect_image_paths(const std::string& arg) {
  std::vector<std::string> paths;
  if (fs::is_directory(arg)) {
    for (const auto& entry : fs::directory_iterator(arg)) {
      const std::string ext = entry.path().extension().string();
      if (ext == ".png" || ext == ".pgm") paths.push_back(entry.path().string());
    }
    std::sort(paths.begin(), paths.end());
  } else {
    paths = split_list(arg);
  }
  if (paths.empty()) throw IoError("no images found in " + arg);
  return paths;
}

std::vector<Image> load_images(const std::string& arg) {
  std::vector<Image> images;
  for (const std::string& path : collect_image_paths(arg))
    images.push_back(load_image(path));
  return images;
}

// Chain images tiled into one grid, separated by 2-pixel mid-gray gaps.
Image mosaic(const std::vector<Image>& imgs) {
  if (imgs.empty()) throw InvalidArgument("nothing to tile");
  const int n = static_cast<int>(imgs.size());
  const int cols = static_cast<int>(std::ceil(std::sqrt(double(n))));
  const int rows = (n + cols - 1) / cols;
  const int gap = 2;
  const Image& first = imgs.front();
  Image out(rows * first.height + (rows - 1) * gap,
            cols * first.width + (cols - 1) * gap, first.channels, 0.0);
  out.mean_offset = 0.5;
  for (int m = 0; m < n; ++m) {
    const int r = m / cols, col = m % cols;
    const int oy = r * (first.height + gap), ox = col * (first.width + gap);
    for (int y = 0; y < first.height; ++y)
      for (int x = 0; x < first.width; ++x)
        for (int c = 0; c < first.channels; ++c)
          out.at(oy + y, ox + x, c) = imgs[m].at(y, x, c);
  }
  return out;
}

std::string snapshot_name(int iteration) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "snap_%06d.png", iteration);
  return buf;
}

IterCallback snapshot_callback(const std::string& out_dir, int every) {
  if (every <= 0) return {};
  return [out_dir, every](int t, const ChainState& chains) {
    if ((t + 1) % every == 0)
      save_image(mosaic(chains.images),
                 out_dir + "/" + snapshot_name(t + 1));
  };
}

// ---------- learn subcommands ----------

void add_learn_options(CLI::App* sub, SubOpts& o) {
  o.add(sub, "filters", "--filters", "", "FBK1 filter bank");
  o.add(sub, "images", "--images", "",
        "image directory or comma-separated file list");
  o.add(sub, "out", "--out", "", "output directory");
  o.add(sub, "chains", "--chains", "16", "parallel Langevin chains");
  o.add(sub, "langevin_steps", "--langevin-steps", "100",
        "Langevin steps per learning iteration");
  o.add(sub, "iters", "--iters", "100", "learning iterations");
  o.add(sub, "step_size", "--step-size", "0.01", "Langevin step size");
  o.add(sub, "gamma", "--gamma", "0.01", "learning rate gamma0");
  o.add(sub, "schedule", "--schedule", "constant",
        "constant|one_over_t|variance_scaled");
  o.add(sub, "t0", "--t0", "100", "schedule offset for one_over_t");
  o.add(sub, "sigma", "--sigma", "1", "Gaussian reference variance sigma^2");
  o.add(sub, "start", "--start", "warm", "warm|cold chain starts");
  o.add(sub, "seed", "--seed", "0", "master RNG seed");
  o.add(sub, "threads", "--threads", "0",
        "worker threads (0: hardware count; 1 is always bitwise-deterministic)");
  o.add(sub, "tol", "--tol", "0",
        "stop when max|H_obs - H_syn| <= tol (0: run all iterations)");
  o.add(sub, "snapshot_every", "--snapshot-every", "0",
        "write a PNG chain snapshot every N iterations (0: off)");
  o.add_config(sub);
}

std::string prepare_out_dir(const KV& kv) {
  const std::string out = kv.at("out");
  fs::create_directories(out);
  atomic_write_text(out + "/resolved.cfg", render_key_values(kv));
  return out;
}

int finish_learn(const std::string& out, FitStatus status,
                 const std::string& message,
                 const std::vector<LearnLogRow>& log) {
  atomic_write_text(out + "/learn_log.csv", learn_log_to_csv(log));
  if (status == FitStatus::diverged) {
    std::cerr << "divergence: " << message
              << " (last checkpoint and log written to " << out << ")\n";
    return 3;
  }
  return 0;
}

int run_learn_object(const SubOpts& o) {
  const KV kv = o.resolved();
  require_keys(kv, {"filters", "images", "out"});
  const std::string out = prepare_out_dir(kv);
  const auto bank = std::make_shared<FilterBank>(load_bank(kv.at("filters")));
  const auto images = load_images(kv.at("images"));
  const LearnConfig config = learn_config_from(kv);
  const auto res =
      fit_object(bank, images, config,
                 snapshot_callback(out, to_int(kv, "snapshot_every")));
  save_checkpoint(res.model, out + "/model.frm");
  save_image(mosaic(res.chains.images), out + "/chains.png");
  return finish_learn(out, res.status, res.message, res.log);
}

int run_learn_texture(const SubOpts& o) {
  const KV kv = o.resolved();
  require_keys(kv, {"filters", "images", "out"});
  const std::string out = prepare_out_dir(kv);
  const auto bank = std::make_shared<FilterBank>(load_bank(kv.at("filters")));
  const auto images = load_images(kv.at("images"));
  const LearnConfig config = learn_config_from(kv);
  const auto res =
      fit_texture(bank, images, config,
                  snapshot_callback(out, to_int(kv, "snapshot_every")));
  save_checkpoint(res.model, out + "/model.frm");
  save_image(mosaic(res.chains.images), out + "/chains.png");
  return finish_learn(out, res.status, res.message, res.log);
}

int run_learn_layer(const SubOpts& o) {
  const KV kv = o.resolved();
  require_keys(kv, {"filters", "images", "out"});
  const std::string out = prepare_out_dir(kv);
  const auto base = std::make_shared<FilterBank>(load_bank(kv.at("filters")));
  const auto images = load_images(kv.at("images"));
  const LearnConfig config = learn_config_from(kv);
  LayerFitOptions opts;
  opts.init_scale = to_double(kv, "init_scale");
  opts.bias_quantile = to_double(kv, "bias_quantile");
  const int window = to_int(kv, "window");
  const auto res =
      fit_layer(base, images, to_int(kv, "experts"), window, window, config,
                opts, snapshot_callback(out, to_int(kv, "snapshot_every")));
  save_checkpoint(res.layer, images.front().height, images.front().width,
                  out + "/model.frm");
  save_image(mosaic(res.chains.images), out + "/chains.png");
  return finish_learn(out, res.status, res.message, res.log);
}

// ---------- sample ----------

int run_sample(const SubOpts& o) {
  const KV kv = o.resolved();
  require_keys(kv, {"model", "out"});
  const std::string out = prepare_out_dir(kv);
  const LoadedCheckpoint ck = load_checkpoint(kv.at("model"));
  std::unique_ptr<EnergyModel> model;
  if (ck.nonstationary)
    model = std::make_unique<NonStationaryFrame>(*ck.nonstationary);
  else if (ck.stationary)
    model = std::make_unique<StationaryFrame>(*ck.stationary);
  else
    model = std::make_unique<GenerativeModel>(*ck.generative, ck.img_h,
                                              ck.img_w);
  const std::string init = kv.at("init");
  if (init != "zero" && init != "noise")
    throw InvalidArgument("unknown init mode: " + init);
  ChainState chains = init_chains(
      init == "zero" ? ChainInit::zero : ChainInit::noise,
      to_int(kv, "chains"), ck.img_h, ck.img_w, model->image_channels(),
      ck.sigma_sq, to_u64(kv, "seed"));
  run_chains(chains, *model, to_double(kv, "step_size"), to_int(kv, "steps"),
             resolve_threads(to_int(kv, "threads")));
  save_image(mosaic(chains.images), out + "/sample.png");
  return 0;
}

// ---------- julesz ----------

std::string julesz_log_to_csv(const std::vector<JuleszLogRow>& log) {
  std::ostringstream outs;
  outs << "step,temperature,sum_delta_sq\n";
  outs.precision(17);
  for (const auto& row : log)
    outs << row.step << "," << row.temperature << "," << row.sum_delta_sq
         << "\n";
  return outs.str();
}

int run_julesz(const SubOpts& o) {
  const KV kv = o.resolved();
  require_keys(kv, {"target", "filters", "out"});
  const std::string out = prepare_out_dir(kv);
  const FilterBank bank = load_bank(kv.at("filters"));
  const Image target_img = load_image(kv.at("target"));
  const std::string stats = kv.at("stats");
  if (stats != "pooled" && stats != "per_position")
    throw InvalidArgument("unknown stats kind: " + stats);
  const JuleszTarget target = julesz_target_from_image(
      bank, target_img,
      stats == "pooled" ? StatsKind::pooled : StatsKind::per_position);
  const std::string mode = kv.at("mode");
  if (mode != "langevin" && mode != "descent")
    throw InvalidArgument("unknown julesz mode: " + mode);
  AnnealSchedule schedule;
  schedule.T0 = to_double(kv, "temp0");
  schedule.decay = to_double(kv, "decay");
  schedule.floor = to_double(kv, "floor");
  schedule.steps_per_level = to_int(kv, "steps_per_level");
  schedule.levels = to_int(kv, "levels");
  schedule.validate();
  const JuleszResult res = julesz_synthesize(
      target, bank, target_img.height, target_img.width, schedule,
      to_double(kv, "step_size"), to_u64(kv, "seed"),
      mode == "descent" ? JuleszMode::descent : JuleszMode::langevin,
      to_int(kv, "n_images"));
  save_image(mosaic(res.images), out + "/synth.png");
  atomic_write_text(out + "/julesz_log.csv", julesz_log_to_csv(res.log));
  return 0;
}

// ---------- bank ----------

std::vector<double> parse_doubles(const std::string& csv,
                                  const std::string& what) {
  std::vector<double> out;
  for (const std::string& s : split_list(csv)) {
    try {
      out.push_back(std::stod(s));
    } catch (const std::exception&) {
      throw InvalidArgument("bad " + what + " entry: '" + s + "'");
    }
  }
  if (out.empty()) throw InvalidArgument("empty " + what + " list");
  return out;
}

std::vector<int> parse_ints(const std::string& csv, const std::string& what) {
  std::vector<int> out;
  for (double v : parse_doubles(csv, what)) out.push_back(int(v));
  return out;
}

// ---------- oracle ----------

OracleSpec oracle_spec_from_file(const std::string& path) {
  const KV kv = load_key_value_file(path);
  OracleSpec spec;
  for (const auto& [key, value] : kv) {
    if (key == "height")
      spec.height = to_int(kv, "height");
    else if (key == "width")
      spec.width = to_int(kv, "width");
    else if (key == "levels")
      spec.levels = parse_doubles(value, "levels");
    else if (key == "reference") {
      if (value == "uniform")
        spec.reference = OracleReference::uniform;
      else if (value == "gaussian")
        spec.reference = OracleReference::gaussian_restricted;
      else
        throw InvalidArgument("unknown oracle reference: " + value);
    } else if (key == "sigma")
      spec.sigma_sq = to_double(kv, "sigma");
    else
      throw InvalidArgument("unknown oracle spec key: " + key);
  }
  spec.validate();
  return spec;
}

int run_oracle(const SubOpts& o) {
  const KV kv = o.resolved();
  require_keys(kv, {"spec", "filters"});
  const OracleSpec spec = oracle_spec_from_file(kv.at("spec"));
  const auto bank = std::make_shared<FilterBank>(load_bank(kv.at("filters")));
  const std::string kind = kv.at("kind");
  if (kind != "stationary" && kind != "nonstationary")
    throw InvalidArgument("unknown model kind: " + kind);

  std::ostringstream report;
  report.precision(17);
  if (kind == "stationary") {
    std::vector<double> w(bank->top_channels(), 0.0);
    if (!kv.at("weights").empty()) {
      w = parse_doubles(kv.at("weights"), "weights");
      if (w.size() != static_cast<std::size_t>(bank->top_channels()))
        throw GeometryError("weight count does not match bank filters");
    }
    StationaryFrame model(bank, spec.height, spec.width, spec.sigma_sq,
                          std::move(w));
    report << "log_z=" << exact_partition(spec, model) << "\n";
    const auto e = exact_expectation(spec, model);
    for (std::size_t i = 0; i < e.size(); ++i)
      report << "expectation_" << i << "=" << e[i] << "\n";
    if (!kv.at("observed").empty()) {
      const auto fit = exact_fit_stationary(spec, bank,
                                            load_images(kv.at("observed")));
      report << "fit_gap=" << fit.gap << "\n";
      report << "fit_converged=" << (fit.converged ? 1 : 0) << "\n";
      report << "fit_infeasible=" << (fit.infeasible ? 1 : 0) << "\n";
      for (std::size_t i = 0; i < fit.model.weights().size(); ++i)
        report << "w_" << i << "=" << fit.model.weights()[i] << "\n";
    }
  } else {
    NonStationaryFrame model(bank, spec.height, spec.width, spec.sigma_sq);
    if (!kv.at("weights").empty()) {
      const auto w = parse_doubles(kv.at("weights"), "weights");
      if (w.size() != model.weights().size())
        throw GeometryError("weight count does not match model geometry");
      model.mutable_weights().data = w;
    }
    report << "log_z=" << exact_partition(spec, model) << "\n";
    const auto e = exact_expectation(spec, model);
    for (std::size_t i = 0; i < e.size(); ++i)
      report << "expectation_" << i << "=" << e[i] << "\n";
    if (!kv.at("observed").empty()) {
      const auto fit = exact_fit(spec, bank, load_images(kv.at("observed")));
      report << "fit_gap=" << fit.gap << "\n";
      report << "fit_converged=" << (fit.converged ? 1 : 0) << "\n";
      report << "fit_infeasible=" << (fit.infeasible ? 1 : 0) << "\n";
      const auto& w = fit.model.weights().data;
      for (std::size_t i = 0; i < w.size(); ++i)
        report << "w_" << i << "=" << w[i] << "\n";
    }
  }
  if (!kv.at("out").empty())
    atomic_write_text(kv.at("out"), report.str());
  else
    std::cout << report.str();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"FRAME image models over convolutional filter banks"};
  app.set_version_flag("--version", "frame 1.0 (formats: FBK1, FRM1)");
  app.require_subcommand(1);
  int rc = 0;
  std::deque<SubOpts> opt_sets;

  {
    CLI::App* sub = app.add_subcommand(
        "learn-object", "learn a per-position (non-stationary) model");
    SubOpts& o = opt_sets.emplace_back();
    add_learn_options(sub, o);
    sub->callback([&o, &rc] { rc = run_learn_object(o); });
  }
  {
    CLI::App* sub = app.add_subcommand(
        "learn-texture", "learn a spatially pooled (stationary) model");
    SubOpts& o = opt_sets.emplace_back();
    add_learn_options(sub, o);
    sub->callback([&o, &rc] { rc = run_learn_texture(o); });
  }
  {
    CLI::App* sub = app.add_subcommand(
        "learn-layer", "learn a new relu expert layer on a base bank");
    SubOpts& o = opt_sets.emplace_back();
    add_learn_options(sub, o);
    o.add(sub, "experts", "--experts", "4", "new experts J");
    o.add(sub, "window", "--window", "3",
          "square expert window over the base feature map");
    o.add(sub, "init_scale", "--init-scale", "0.001",
          "uniform weight init half-range");
    o.add(sub, "bias_quantile", "--bias-quantile", "0.9",
          "fraction of observed pre-activations that starts positive");
    sub->callback([&o, &rc] { rc = run_learn_layer(o); });
  }
  {
    CLI::App* sub = app.add_subcommand(
        "sample", "run Langevin chains from an FRM1 checkpoint");
    SubOpts& o = opt_sets.emplace_back();
    o.add(sub, "model", "--model", "", "FRM1 checkpoint");
    o.add(sub, "out", "--out", "", "output directory");
    o.add(sub, "chains", "--chains", "16", "parallel chains");
    o.add(sub, "steps", "--steps", "100", "Langevin steps");
    o.add(sub, "step_size", "--step-size", "0.01", "Langevin step size");
    o.add(sub, "init", "--init", "noise", "zero|noise chain initialization");
    o.add(sub, "seed", "--seed", "0", "master RNG seed");
    o.add(sub, "threads", "--threads", "0",
          "worker threads (0: hardware count)");
    o.add_config(sub);
    sub->callback([&o, &rc] { rc = run_sample(o); });
  }
  {
    CLI::App* sub = app.add_subcommand(
        "julesz", "match a target image's statistics by annealing/descent");
    SubOpts& o = opt_sets.emplace_back();
    o.add(sub, "target", "--target", "", "target image");
    o.add(sub, "filters", "--filters", "", "FBK1 filter bank");
    o.add(sub, "out", "--out", "", "output directory");
    o.add(sub, "stats", "--stats", "pooled",
          "pooled|per_position statistic kind");
    o.add(sub, "mode", "--mode", "langevin", "langevin|descent");
    o.add(sub, "step_size", "--step-size", "0.01", "step size");
    o.add(sub, "temp0", "--temp0", "1", "initial temperature");
    o.add(sub, "decay", "--decay", "0.95", "temperature decay per level");
    o.add(sub, "floor", "--floor", "0", "temperature floor");
    o.add(sub, "steps_per_level", "--steps-per-level", "100",
          "steps at each temperature level");
    o.add(sub, "levels", "--levels", "100", "temperature levels");
    o.add(sub, "n_images", "--n-images", "1", "images to synthesize");
    o.add(sub, "seed", "--seed", "0", "master RNG seed");
    o.add_config(sub);
    sub->callback([&o, &rc] { rc = run_julesz(o); });
  }
  {
    CLI::App* bank_cmd =
        app.add_subcommand("bank", "build FBK1 filter banks");
    bank_cmd->require_subcommand(1);
    {
      CLI::App* sub = bank_cmd->add_subcommand(
          "gabor", "Gabor cosine/sine pairs per scale and orientation");
      SubOpts& o = opt_sets.emplace_back();
      o.add(sub, "scales", "--scales", "1,2", "comma-separated scales");
      o.add(sub, "orientations", "--orientations", "4", "orientation count");
      o.add(sub, "out", "--out", "", "output FBK1 file");
      sub->callback([&o, &rc] {
        const KV kv = o.resolved();
        require_keys(kv, {"out"});
        save_bank(make_gabor_bank(parse_doubles(kv.at("scales"), "scales"),
                                  to_int(kv, "orientations")),
                  kv.at("out"));
        rc = 0;
      });
    }
    {
      CLI::App* sub = bank_cmd->add_subcommand(
          "dog", "zero-sum center-surround kernels");
      SubOpts& o = opt_sets.emplace_back();
      o.add(sub, "sizes", "--sizes", "5,7", "comma-separated kernel sizes");
      o.add(sub, "out", "--out", "", "output FBK1 file");
      sub->callback([&o, &rc] {
        const KV kv = o.resolved();
        require_keys(kv, {"out"});
        save_bank(make_dog_bank(parse_ints(kv.at("sizes"), "sizes")),
                  kv.at("out"));
        rc = 0;
      });
    }
    {
      CLI::App* sub =
          bank_cmd->add_subcommand("random", "Gaussian random kernels");
      SubOpts& o = opt_sets.emplace_back();
      o.add(sub, "channels", "--channels", "1", "input channels");
      o.add(sub, "filters", "--filters", "8", "filter count");
      o.add(sub, "ksize", "--ksize", "5", "kernel size");
      o.add(sub, "seed", "--seed", "0", "RNG seed");
      o.add(sub, "out", "--out", "", "output FBK1 file");
      sub->callback([&o, &rc] {
        const KV kv = o.resolved();
        require_keys(kv, {"out"});
        save_bank(make_random_bank(to_int(kv, "channels"),
                                   to_int(kv, "filters"), to_int(kv, "ksize"),
                                   to_u64(kv, "seed")),
                  kv.at("out"));
        rc = 0;
      });
    }
  }
  {
    CLI::App* sub = app.add_subcommand(
        "oracle", "exact enumeration diagnostics for tiny grids");
    SubOpts& o = opt_sets.emplace_back();
    o.add(sub, "spec", "--spec",
          "", "key=value spec: height, width, levels, reference, sigma");
    o.add(sub, "filters", "--filters", "", "FBK1 filter bank");
    o.add(sub, "kind", "--kind", "stationary", "stationary|nonstationary");
    o.add(sub, "weights", "--weights", "",
          "comma-separated model weights (default: all zero)");
    o.add(sub, "observed", "--observed", "",
          "images to fit exactly (optional)");
    o.add(sub, "out", "--out", "", "report file (default: stdout)");
    o.add_config(sub);
    sub->callback([&o, &rc] { rc = run_oracle(o); });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const InvalidArgument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return rc;
}
