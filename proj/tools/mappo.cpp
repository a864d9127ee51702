#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "mappo/algo.hpp"
#include "mappo/checkpoint.hpp"
#include "mappo/config.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mappo;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string timestamp() {
  std::time_t t = std::time(nullptr);
  char buf[64];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%S", std::gmtime(&t));
  return buf;
}

void write_manifest(const fs::path& dir, const TrainConfig& cfg, const Trainer& tr) {
  std::string cfg_text = serialize_config(cfg);
  json j;
  j["config"] = cfg_text;
  j["seed"] = cfg.seed;
  char hash[32];
  std::snprintf(hash, sizeof(hash), "%016llx",
                static_cast<unsigned long long>(fnv1a(cfg_text)));
  j["artifact_hash"] = hash;
  j["start_time"] = timestamp();
  const EnvDescriptor& d = tr.descriptor();
  j["env"] = {{"name", d.name},
              {"n_agents", d.n_agents},
              {"obs_dims", d.obs_dims},
              {"env_state_dim", d.env_state_dim},
              {"n_actions", d.n_actions},
              {"episode_limit", d.episode_limit},
              {"turn_based", d.turn_based}};
  j["layout"] = {{"metrics", "metrics.csv"},
                 {"checkpoints", "checkpoints/"},
                 {"final_checkpoint", "final.bin"}};
  std::ofstream f(dir / "manifest.json");
  f << j.dump(2) << "\n";
}

struct RunResult {
  bool ok = false;
  std::string error;
  double final_score = 0.0;  // median of the last 10 evaluations
  double final_win = 0.0;
};

/// Full training loop shared by `train` and `ablate`.
RunResult run_training(TrainConfig cfg, const fs::path& outdir,
                       const std::string& resume, double stop_at_reward, bool has_stop,
                       bool quiet) {
  RunResult res;
  fs::create_directories(outdir / "checkpoints");
  Trainer tr(cfg);
  if (!resume.empty()) tr.load_checkpoint(resume);
  write_manifest(outdir, cfg, tr);

  std::ofstream csv;
  if (!resume.empty() && fs::exists(outdir / "metrics.csv")) {
    csv.open(outdir / "metrics.csv", std::ios::app);
  } else {
    csv.open(outdir / "metrics.csv");
    std::string header;
    for (const auto& c : IterMetrics::columns()) header += (header.empty() ? "" : ",") + c;
    csv << header << "\n";
  }

  double median10 = 0.0, last_win = 0.0;
  bool have_eval = false;
  while (tr.env_steps() < cfg.total_env_steps) {
    IterMetrics m = tr.train_iteration();
    csv << m.csv_row() << "\n";
    csv.flush();
    if (cfg.eval_interval > 0 && tr.iteration() % cfg.eval_interval == 0) {
      EvalResult ev = tr.evaluate(cfg.eval_episodes, cfg.eval_greedy);
      median10 = tr.record_eval(ev.mean_reward);
      last_win = ev.win_rate;
      have_eval = true;
      if (!quiet)
        std::cout << "eval iter=" << tr.iteration() << " step=" << tr.env_steps()
                  << " reward=" << ev.mean_reward << " win=" << ev.win_rate
                  << " median10=" << median10 << "\n";
      if (has_stop && median10 >= stop_at_reward) break;
    }
    if (cfg.checkpoint_interval > 0 && tr.iteration() % cfg.checkpoint_interval == 0)
      tr.save_checkpoint((outdir / "checkpoints" /
                          ("ckpt_iter" + std::to_string(tr.iteration()) + ".bin"))
                             .string());
    if (!quiet && tr.iteration() % 10 == 0)
      std::cout << "iter=" << m.iter << " step=" << m.step
                << " ep_reward=" << m.mean_ep_reward << " win=" << m.win_rate
                << " ploss=" << m.policy_loss << " vloss=" << m.value_loss << "\n";
  }
  if (!have_eval) {
    EvalResult ev = tr.evaluate(cfg.eval_episodes, cfg.eval_greedy);
    median10 = tr.record_eval(ev.mean_reward);
    last_win = ev.win_rate;
  }
  tr.save_checkpoint((outdir / "final.bin").string());
  res.ok = true;
  res.final_score = median10;
  res.final_win = last_win;
  return res;
}

TrainConfig load_cfg(const std::string& config_path,
                     const std::vector<std::string>& overrides) {
  TrainConfig cfg;
  if (!config_path.empty()) cfg = parse_config_file(config_path);
  apply_env_overrides(cfg);
  for (const auto& o : overrides) apply_override(cfg, o);
  return cfg;
}

// -- plot --------------------------------------------------------------------

struct Curve {
  std::vector<double> x, y;
};

Curve read_metric(const std::string& path, const std::string& metric) {
  std::ifstream f(path);
  if (!f) throw ConfigError("plot: cannot open '" + path + "'");
  std::string header;
  std::getline(f, header);
  std::vector<std::string> cols;
  std::stringstream hs(header);
  std::string tok;
  while (std::getline(hs, tok, ',')) cols.push_back(tok);
  if (cols != IterMetrics::columns())
    throw ConfigError("plot: '" + path + "' does not match the metrics schema");
  int xi = 0, yi = -1;
  for (size_t i = 0; i < cols.size(); ++i)
    if (cols[i] == metric) yi = static_cast<int>(i);
  if (yi < 0) throw ConfigError("plot: unknown metric '" + metric + "'");
  Curve c;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::stringstream ls(line);
    std::vector<double> vals;
    while (std::getline(ls, tok, ',')) vals.push_back(std::stod(tok));
    c.x.push_back(vals[static_cast<size_t>(xi)]);
    c.y.push_back(vals[static_cast<size_t>(yi)]);
  }
  return c;
}

void write_svg(const std::string& out, const std::vector<Curve>& curves,
               const std::string& metric) {
  size_t n = curves[0].x.size();
  for (const Curve& c : curves) n = std::min(n, c.x.size());
  if (n == 0) throw ConfigError("plot: no data rows");
  std::vector<double> med(n), lo(n), hi(n);
  for (size_t i = 0; i < n; ++i) {
    std::vector<double> ys;
    for (const Curve& c : curves) ys.push_back(c.y[i]);
    std::sort(ys.begin(), ys.end());
    lo[i] = ys.front();
    hi[i] = ys.back();
    size_t m = ys.size() / 2;
    med[i] = ys.size() % 2 == 1 ? ys[m] : 0.5 * (ys[m - 1] + ys[m]);
  }
  double xmin = curves[0].x[0], xmax = curves[0].x[n - 1];
  double ymin = *std::min_element(lo.begin(), lo.end());
  double ymax = *std::max_element(hi.begin(), hi.end());
  if (ymax - ymin < 1e-12) {
    ymax += 1.0;
    ymin -= 1.0;
  }
  if (xmax - xmin < 1e-12) xmax = xmin + 1.0;
  const double W = 720, H = 440, ml = 70, mr = 20, mt = 30, mb = 50;
  auto X = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * (W - ml - mr); };
  auto Y = [&](double y) { return H - mb - (y - ymin) / (ymax - ymin) * (H - mt - mb); };
  std::ofstream f(out);
  if (!f) throw ConfigError("plot: cannot open '" + out + "' for writing");
  f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
    << "\" viewBox=\"0 0 " << W << " " << H << "\">\n";
  f << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  if (curves.size() > 1) {
    f << "<polygon fill=\"#9ecae1\" fill-opacity=\"0.5\" stroke=\"none\" points=\"";
    for (size_t i = 0; i < n; ++i) f << X(curves[0].x[i]) << "," << Y(hi[i]) << " ";
    for (size_t i = n; i-- > 0;) f << X(curves[0].x[i]) << "," << Y(lo[i]) << " ";
    f << "\"/>\n";
  }
  f << "<polyline fill=\"none\" stroke=\"#08519c\" stroke-width=\"2\" points=\"";
  for (size_t i = 0; i < n; ++i) f << X(curves[0].x[i]) << "," << Y(med[i]) << " ";
  f << "\"/>\n";
  // axes + ticks
  f << "<line x1=\"" << ml << "\" y1=\"" << H - mb << "\" x2=\"" << W - mr << "\" y2=\""
    << H - mb << "\" stroke=\"black\"/>\n";
  f << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << H - mb
    << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    double xv = xmin + (xmax - xmin) * i / 4.0;
    double yv = ymin + (ymax - ymin) * i / 4.0;
    f << "<text x=\"" << X(xv) << "\" y=\"" << H - mb + 18
      << "\" font-size=\"11\" text-anchor=\"middle\">" << static_cast<long>(xv)
      << "</text>\n";
    f << "<text x=\"" << ml - 8 << "\" y=\"" << Y(yv) + 4
      << "\" font-size=\"11\" text-anchor=\"end\">" << yv << "</text>\n";
  }
  f << "<text x=\"" << (ml + W - mr) / 2 << "\" y=\"" << H - 12
    << "\" font-size=\"13\" text-anchor=\"middle\">env steps</text>\n";
  f << "<text x=\"" << (ml + W - mr) / 2 << "\" y=\"" << mt - 10
    << "\" font-size=\"13\" text-anchor=\"middle\">" << metric << " ("
    << curves.size() << (curves.size() == 1 ? " run" : " runs, median + min/max")
    << ")</text>\n";
  f << "</svg>\n";
}

// -- ablate ------------------------------------------------------------------

struct AblationSpec {
  std::string axis;
  std::vector<std::string> values;
  std::vector<std::uint64_t> seeds;
  std::string base_config;
  std::vector<std::string> overrides;
};

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    size_t b = tok.find_first_not_of(" \t");
    size_t e = tok.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(tok.substr(b, e - b + 1));
  }
  return out;
}

AblationSpec parse_ablation_spec(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("ablate: cannot open '" + path + "'");
  AblationSpec spec;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    size_t b = line.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) continue;
    size_t e = line.find_last_not_of(" \t\r\n");
    std::string t = line.substr(b, e - b + 1);
    size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("ablate: line " + std::to_string(lineno) + ": expected key=value");
    std::string key = t.substr(0, t.find_last_not_of(" \t", eq - 1) + 1);
    std::string value = t.substr(t.find_first_not_of(" \t", eq + 1));
    if (key == "axis") spec.axis = value;
    else if (key == "values") spec.values = split_csv(value);
    else if (key == "seeds") {
      for (const auto& s : split_csv(value))
        spec.seeds.push_back(static_cast<std::uint64_t>(std::stoull(s)));
    } else if (key == "config") spec.base_config = value;
    else if (key == "override") spec.overrides.push_back(value);
    else throw ConfigError("ablate: unknown spec key '" + key + "'");
  }
  static const std::map<std::string, std::string> axis_keys = {
      {"value_norm", "use_value_norm"},   {"state_mode", "state_mode"},
      {"ppo_epochs", "ppo_epochs"},       {"num_minibatches", "num_minibatches"},
      {"clip_epsilon", "clip_epsilon"},   {"death_mode", "death_mode"}};
  if (axis_keys.find(spec.axis) == axis_keys.end())
    throw ConfigError("ablate: axis must be one of value_norm, state_mode, ppo_epochs, "
                      "num_minibatches, clip_epsilon, death_mode");
  if (spec.values.empty()) throw ConfigError("ablate: values list is empty");
  if (spec.seeds.empty()) throw ConfigError("ablate: seeds list is empty");
  spec.axis = axis_keys.at(spec.axis);
  return spec;
}

int cmd_ablate(const std::string& spec_path, const std::string& outdir, bool quiet) {
  AblationSpec spec = parse_ablation_spec(spec_path);
  fs::create_directories(outdir);
  struct Row {
    std::string value;
    std::vector<double> scores;
    std::vector<std::string> status;
  };
  std::vector<Row> rows;
  bool any_failed = false;
  for (const std::string& value : spec.values) {
    Row row;
    row.value = value;
    for (std::uint64_t seed : spec.seeds) {
      TrainConfig cfg = load_cfg(spec.base_config, spec.overrides);
      apply_override(cfg, spec.axis + "=" + value);
      cfg.seed = seed;
      fs::path dir = fs::path(outdir) / (spec.axis + "_" + value) / std::to_string(seed);
      if (!quiet)
        std::cout << "run " << spec.axis << "=" << value << " seed=" << seed << "\n";
      try {
        RunResult r = run_training(cfg, dir, "", 0.0, false, true);
        row.scores.push_back(r.final_score);
        row.status.push_back("ok");
      } catch (const std::exception& ex) {
        any_failed = true;
        row.scores.push_back(0.0);
        row.status.push_back(std::string("failed: ") + ex.what());
      }
    }
    rows.push_back(std::move(row));
  }
  std::ofstream summary(fs::path(outdir) / "summary.csv");
  summary << spec.axis;
  for (std::uint64_t s : spec.seeds) summary << ",seed" << s;
  summary << ",median\n";
  std::cout << "\nsummary (" << spec.axis << ", median of last-10-eval scores over seeds)\n";
  for (const Row& row : rows) {
    std::vector<double> ok_scores;
    for (size_t i = 0; i < row.scores.size(); ++i)
      if (row.status[i] == "ok") ok_scores.push_back(row.scores[i]);
    double med = 0.0;
    if (!ok_scores.empty()) {
      std::sort(ok_scores.begin(), ok_scores.end());
      size_t m = ok_scores.size() / 2;
      med = ok_scores.size() % 2 == 1 ? ok_scores[m]
                                      : 0.5 * (ok_scores[m - 1] + ok_scores[m]);
    }
    summary << row.value;
    for (double s : row.scores) summary << "," << s;
    summary << "," << med << "\n";
    std::cout << "  " << row.value << ": median=" << med;
    for (size_t i = 0; i < row.scores.size(); ++i)
      if (row.status[i] != "ok")
        std::cout << " [seed " << spec.seeds[i] << " " << row.status[i] << "]";
    std::cout << "\n";
  }
  return any_failed ? 1 : kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cooperative multi-agent PPO (MAPPO/IPPO) training engine"};
  app.require_subcommand(1);

  // train
  auto* train = app.add_subcommand("train", "Run a training loop");
  std::string config_path, outdir = "runs/default", resume;
  std::vector<std::string> overrides;
  std::int64_t seed_flag = -1;
  std::string env_flag;
  double stop_at_reward = 0.0;
  bool quiet = false;
  train->add_option("--config", config_path, "Config file (key=value with sections)");
  train->add_option("--override", overrides, "key=value override, repeatable");
  train->add_option("--seed", seed_flag, "Master seed (overrides config)");
  train->add_option("--env", env_flag, "Environment name (overrides config)");
  train->add_option("--outdir", outdir, "Output directory");
  train->add_option("--resume", resume, "Checkpoint to resume from");
  auto* stop_opt = train->add_option("--stop-at-reward", stop_at_reward,
                                     "Stop early once the eval median reaches this");
  train->add_flag("--quiet", quiet, "Suppress progress output");

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  std::string ckpt_path, eval_env;
  int episodes = 32;
  bool sample = false;
  std::int64_t eval_seed = -1;
  eval->add_option("--checkpoint", ckpt_path, "Checkpoint file")->required();
  eval->add_option("--episodes", episodes, "Evaluation episodes (default 32)");
  eval->add_option("--env", eval_env, "Expected environment name (checked)");
  eval->add_option("--seed", eval_seed, "Evaluation seed override");
  eval->add_flag("--sample", sample, "Sample actions instead of greedy");

  // ablate
  auto* ablate = app.add_subcommand("ablate", "Run an ablation grid");
  std::string spec_path, ab_outdir = "runs/ablation";
  ablate->add_option("--spec", spec_path, "Ablation spec file")->required();
  ablate->add_option("--outdir", ab_outdir, "Output directory");
  ablate->add_flag("--quiet", quiet, "Suppress progress output");

  // plot
  auto* plot = app.add_subcommand("plot", "Render metric curves to SVG");
  std::vector<std::string> metric_files;
  std::string plot_out = "plot.svg", metric = "mean_ep_reward";
  plot->add_option("files", metric_files, "metrics.csv files (same schema)")->required();
  plot->add_option("--out", plot_out, "Output SVG path");
  plot->add_option("--metric", metric, "Column to plot");

  // inspect-checkpoint
  auto* inspect = app.add_subcommand("inspect-checkpoint", "Dump checkpoint contents");
  std::string ins_path;
  inspect->add_option("--checkpoint", ins_path, "Checkpoint file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      TrainConfig cfg;
      if (!resume.empty()) {
        // resuming requires the exact stored config
        cfg = parse_config_text(checkpoint_config_text(resume));
        for (const auto& o : overrides) apply_override(cfg, o);
      } else {
        cfg = load_cfg(config_path, overrides);
      }
      if (seed_flag >= 0) cfg.seed = static_cast<std::uint64_t>(seed_flag);
      if (!env_flag.empty()) cfg.env_name = env_flag;
      RunResult r = run_training(cfg, outdir, resume, stop_at_reward,
                                 stop_opt->count() > 0, quiet);
      std::cout << "done: final eval median " << r.final_score << " (win "
                << r.final_win << "), artifacts in " << outdir << "\n";
      return kExitOk;
    }
    if (*eval) {
      TrainConfig cfg = parse_config_text(checkpoint_config_text(ckpt_path));
      Trainer tr(cfg);
      tr.load_checkpoint(ckpt_path);
      if (eval_seed >= 0) tr.set_eval_seed(static_cast<std::uint64_t>(eval_seed));
      if (!eval_env.empty() && tr.descriptor().name != eval_env)
        throw ConfigError("eval: checkpoint was trained on '" + tr.descriptor().name +
                          "', not '" + eval_env + "'");
      EvalResult ev = tr.evaluate(episodes, !sample);
      std::cout << "env=" << tr.descriptor().name << " episodes=" << ev.episodes
                << " mean_reward=" << ev.mean_reward << " win_rate=" << ev.win_rate
                << "\n";
      return kExitOk;
    }
    if (*ablate) return cmd_ablate(spec_path, ab_outdir, quiet);
    if (*plot) {
      std::vector<Curve> curves;
      for (const auto& p : metric_files) curves.push_back(read_metric(p, metric));
      write_svg(plot_out, curves, metric);
      std::cout << "wrote " << plot_out << "\n";
      return kExitOk;
    }
    if (*inspect) {
      for (const CheckpointRecord& r : read_checkpoint_records(ins_path)) {
        std::cout << r.name << "  ";
        switch (r.type) {
          case CheckpointRecord::I64:
            std::cout << "i64  " << r.i64;
            break;
          case CheckpointRecord::String:
            std::cout << "str  " << r.str.size() << " bytes";
            break;
          case CheckpointRecord::F64Array: {
            double mn = 0, mx = 0, mean = 0;
            if (!r.f64.empty()) {
              mn = *std::min_element(r.f64.begin(), r.f64.end());
              mx = *std::max_element(r.f64.begin(), r.f64.end());
              for (double v : r.f64) mean += v;
              mean /= static_cast<double>(r.f64.size());
            }
            std::cout << "f64[" << r.f64.size() << "]  min=" << mn << " max=" << mx
                      << " mean=" << mean;
            break;
          }
        }
        std::cout << "\n";
      }
      return kExitOk;
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericalAbort& e) {
    std::cerr << "numerical abort: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kExitOk;
}
