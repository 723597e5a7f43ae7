#include "nnmpc/scenario.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>

#include "nnmpc/params_io.hpp"
#include "nnmpc/simulate.hpp"

namespace nnmpc {

namespace fsys = std::filesystem;
using nlohmann::json;

namespace {

std::string hessian_name(SolveOptions::Hessian h) {
  switch (h) {
    case SolveOptions::Hessian::kAuto: return "auto";
    case SolveOptions::Hessian::kExact: return "exact";
    case SolveOptions::Hessian::kBfgs: return "bfgs";
  }
  return "auto";
}

SolveOptions::Hessian hessian_from_name(const std::string& s) {
  if (s == "auto") return SolveOptions::Hessian::kAuto;
  if (s == "exact") return SolveOptions::Hessian::kExact;
  if (s == "bfgs") return SolveOptions::Hessian::kBfgs;
  throw ConfigError("unknown hessian mode '" + s + "' (expected auto, exact or bfgs)");
}

json cfg_to_json(const NmpcConfig& cfg) {
  json outs = json::array();
  for (const OutputSelector& o : cfg.outputs)
    outs.push_back({{"state", o.state}, {"node", o.node}, {"name", o.name}});
  return {{"horizon", cfg.horizon},
          {"moves", cfg.moves},
          {"n_fe", cfg.n_fe},
          {"variant", std::string(to_string(cfg.variant))},
          {"outputs", outs},
          {"output_weights", cfg.output_weights},
          {"move_weights", cfg.move_weights},
          {"solver",
           {{"tol", cfg.solver.tol},
            {"max_iter", cfg.solver.max_iter},
            {"hessian", hessian_name(cfg.solver.hessian)},
            {"mu_init", cfg.solver.mu_init}}}};
}

NmpcConfig cfg_from_json(const json& j) {
  NmpcConfig cfg;
  cfg.horizon = j.at("horizon").get<int>();
  cfg.moves = j.at("moves").get<int>();
  cfg.n_fe = j.value("n_fe", -1);
  cfg.variant = embedding_from_string(j.value("variant", "mech"));
  for (const json& o : j.at("outputs")) {
    OutputSelector sel;
    sel.state = o.at("state").get<int>();
    sel.node = o.value("node", kOutletNode);
    sel.name = o.value("name", "y" + std::to_string(cfg.outputs.size()));
    cfg.outputs.push_back(std::move(sel));
  }
  cfg.output_weights = j.at("output_weights").get<std::vector<double>>();
  cfg.move_weights = j.at("move_weights").get<std::vector<double>>();
  if (j.contains("solver")) {
    const json& s = j.at("solver");
    cfg.solver.tol = s.value("tol", cfg.solver.tol);
    cfg.solver.max_iter = s.value("max_iter", cfg.solver.max_iter);
    cfg.solver.hessian = hessian_from_name(s.value("hessian", "auto"));
    cfg.solver.mu_init = s.value("mu_init", cfg.solver.mu_init);
  }
  return cfg;
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

SolveStatus status_from_name(const std::string& s) {
  if (s == "optimal") return SolveStatus::kOptimal;
  if (s == "max_iterations") return SolveStatus::kMaxIterations;
  if (s == "line_search_failure") return SolveStatus::kLineSearchFailure;
  if (s == "infeasible") return SolveStatus::kInfeasible;
  throw ConfigError("unknown solver status '" + s + "' in trace file");
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::string item;
  std::istringstream in(line);
  while (std::getline(in, item, ',')) fields.push_back(item);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

double parse_double(const std::string& s, const std::string& path) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0')
    throw ConfigError(path + ": malformed number '" + s + "'");
  return v;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream out;
  out << std::hex << std::setfill('0') << std::setw(16) << v;
  return out.str();
}

}  // namespace

Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open scenario file " + path);
  json j;
  try {
    in >> j;
    Scenario sc;
    sc.name = j.value("name", fsys::path(path).stem().string());
    sc.plant = j.at("plant").get<std::string>();
    sc.model = j.value("model", "mechanistic");
    sc.params_path = j.value("params", "");
    sc.cfg = cfg_from_json(j.at("control"));
    const json& sps = j.at("setpoints");
    sc.schedule.initial = sps.at("initial").get<std::vector<double>>();
    for (const json& c : sps.value("changes", json::array()))
      sc.schedule.changes.emplace_back(c.at("step").get<int>(),
                                       c.at("values").get<std::vector<double>>());
    const json& run = j.at("run");
    sc.horizon_steps = run.at("steps").get<int>();
    sc.u0 = run.at("u0").get<std::vector<double>>();
    sc.x0 = run.value("x0", std::vector<double>{});
    sc.seed = run.value("seed", std::uint64_t{1});
    if (j.contains("network")) {
      const json& net = j.at("network");
      sc.hidden = net.value("hidden", -1);
      sc.width = net.value("width", -1);
      sc.conv_layers = net.value("conv_layers", -1);
      sc.channels = net.value("channels", -1);
      sc.kernel = net.value("kernel", -1);
    }
    if (j.contains("annotations"))
      sc.annotations = j.at("annotations").get<std::map<std::string, std::string>>();
    return sc;
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

void save_scenario(const Scenario& sc, const std::string& path) {
  json j;
  j["name"] = sc.name;
  j["plant"] = sc.plant;
  j["model"] = sc.model;
  if (!sc.params_path.empty()) j["params"] = sc.params_path;
  j["control"] = cfg_to_json(sc.cfg);
  json changes = json::array();
  for (const auto& [step, values] : sc.schedule.changes)
    changes.push_back({{"step", step}, {"values", values}});
  j["setpoints"] = {{"initial", sc.schedule.initial}, {"changes", changes}};
  j["run"] = {{"steps", sc.horizon_steps}, {"u0", sc.u0}, {"seed", sc.seed}};
  if (!sc.x0.empty()) j["run"]["x0"] = sc.x0;
  json net;
  if (sc.hidden > 0) net["hidden"] = sc.hidden;
  if (sc.width > 0) net["width"] = sc.width;
  if (sc.conv_layers > 0) net["conv_layers"] = sc.conv_layers;
  if (sc.channels > 0) net["channels"] = sc.channels;
  if (sc.kernel > 0) net["kernel"] = sc.kernel;
  if (!net.empty()) j["network"] = net;
  if (!sc.annotations.empty()) j["annotations"] = sc.annotations;

  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write scenario file " + path);
  out << j.dump(2) << '\n';
}

void apply_preset(Scenario& sc, std::string_view preset) {
  if (preset == "desk") {
    if (sc.plant == "b3") {
      sc.cfg.n_fe = 10;
      sc.cfg.horizon = 10;
      sc.cfg.moves = std::min(sc.cfg.moves, 10);
    }
    return;
  }
  if (preset == "full") {
    if (sc.plant == "b3") {
      sc.cfg.n_fe = -1;
      sc.cfg.horizon = 30;
    }
    return;
  }
  throw ConfigError("unknown preset '" + std::string(preset) + "' (expected desk or full)");
}

std::string arch_rejection(std::string_view plant, std::string_view arch) {
  const bool known_plant = plant == "b1" || plant == "b2" || plant == "b3";
  if (arch == "picnn")
    return known_plant ? std::string{}
                       : "'" + std::string(plant) + "' is not a benchmark plant";
  if (arch == "pinn") {
    if (plant == "b1") return {};
    if (known_plant)
      return "the dense pinn does not reach a usable one-step model on " + std::string(plant) +
             "; use the convolutional picnn there";
    return "'" + std::string(plant) + "' is not a benchmark plant";
  }
  return "unknown network architecture '" + std::string(arch) + "' (expected pinn or picnn)";
}

NetworkSpec benchmark_network(const Plant& plant, std::string_view arch, int n_fe, int hidden,
                              int width, int conv_layers, int channels, int kernel) {
  const int nfe = n_fe > 0 ? n_fe : plant.n_fe();
  if (arch == "pinn")
    return make_pinn_spec(plant.n_x(), nfe, plant.n_u(), hidden > 0 ? hidden : 6,
                          width > 0 ? width : 24);
  if (arch == "picnn") {
    // The reformer's default uses one extra convolution stage.
    const int layers = conv_layers > 0 ? conv_layers : (plant.info().name == "b3" ? 3 : 2);
    return make_picnn_spec(plant.n_x(), nfe, plant.n_u(), layers, channels > 0 ? channels : 32,
                           kernel > 0 ? kernel : 4);
  }
  throw ConfigError("unknown network architecture '" + std::string(arch) + "'");
}

Surrogate make_scenario_surrogate(const Scenario& sc, const Plant& plant,
                                  const std::string& data_dir) {
  const std::string reject = arch_rejection(plant.info().name, sc.model);
  if (!reject.empty()) throw ConfigError(sc.name + ": " + reject);
  Surrogate sur;
  sur.spec = benchmark_network(plant, sc.model, sc.cfg.n_fe, sc.hidden, sc.width,
                               sc.conv_layers, sc.channels, sc.kernel);
  if (sc.params_path.empty())
    throw ConfigError(sc.name + ": model '" + sc.model + "' needs a params file");
  std::string path = sc.params_path;
  if (!fsys::exists(path)) {
    const std::string in_data = data_dir + "/" + sc.params_path;
    if (!fsys::exists(in_data))
      throw ConfigError(sc.name + ": params file not found: " + sc.params_path);
    path = in_data;
  }
  try {
    sur.params = std::make_shared<const NetworkParams>(load_params(path, sur.spec));
  } catch (const ParamsIoError& e) {
    throw ConfigError(sc.name + ": " + e.what());
  }
  return sur;
}

ClosedLoopTrace run_scenario(const Scenario& sc, const std::string& data_dir) {
  const auto plant = make_plant(sc.plant, data_dir);
  const bool mech = sc.model == "mechanistic" || sc.model == "mech";
  if (mech != (sc.cfg.variant == EmbeddingKind::kMechanistic))
    throw ConfigError(sc.name + ": model '" + sc.model + "' does not pair with the '" +
                      std::string(to_string(sc.cfg.variant)) + "' embedding");
  if (sc.u0.size() != static_cast<std::size_t>(plant->n_u()))
    throw ConfigError(sc.name + ": u0 needs " + std::to_string(plant->n_u()) + " entries");

  std::optional<Surrogate> sur;
  if (!mech) sur = make_scenario_surrogate(sc, *plant, data_dir);

  ClosedLoopOptions opts;
  opts.horizon_steps = sc.horizon_steps;
  opts.u0 = sc.u0;
  if (sc.x0.empty()) {
    const int nfe = sc.cfg.n_fe > 0 ? sc.cfg.n_fe : plant->n_fe();
    const Eigen::VectorXd x0 = steady_state(*plant, sc.u0, nfe);
    opts.x0.assign(x0.data(), x0.data() + x0.size());
  } else {
    opts.x0 = sc.x0;
  }

  ClosedLoopTrace trace =
      closed_loop(*plant, sc.cfg, sur ? &*sur : nullptr, sc.schedule, opts);
  trace.scenario = sc.name;
  return trace;
}

void write_trace_csv(const ClosedLoopTrace& trace, const std::string& path) {
  if (trace.records.empty()) throw std::invalid_argument("refusing to write an empty trace");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write trace file " + path);

  out << "# scenario," << trace.scenario << '\n'
      << "# plant," << trace.plant << '\n'
      << "# variant," << trace.variant << '\n'
      << "# model," << trace.model << '\n'
      << "# counts," << trace.counts.decision << ',' << trace.counts.aux << ','
      << trace.counts.total << ',' << trace.counts.rows << '\n'
      << "# failures," << trace.failures << '\n';

  const ClosedLoopRecord& r0 = trace.records.front();
  out << "step";
  for (std::size_t m = 0; m < r0.setpoints.size(); ++m) out << ",sp_" << m;
  for (std::size_t m = 0; m < r0.outputs.size(); ++m) out << ",y_" << m;
  for (std::size_t l = 0; l < r0.controls.size(); ++l) out << ",u_" << l;
  out << ",status,iterations,objective,wall_clock_seconds";
  for (std::size_t i = 0; i < r0.state.size(); ++i) out << ",x_" << i;
  out << '\n';

  for (const ClosedLoopRecord& r : trace.records) {
    out << r.step;
    for (double v : r.setpoints) out << ',' << fmt_double(v);
    for (double v : r.outputs) out << ',' << fmt_double(v);
    for (double v : r.controls) out << ',' << fmt_double(v);
    out << ',' << to_string(r.status) << ',' << r.iterations << ',' << fmt_double(r.objective)
        << ',' << fmt_double(r.wall_clock_seconds);
    for (double v : r.state) out << ',' << fmt_double(v);
    out << '\n';
  }
}

ClosedLoopTrace read_trace_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open trace file " + path);

  ClosedLoopTrace trace;
  std::string line;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto fields = split_csv(line.substr(2));
      if (fields.empty()) continue;
      if (fields[0] == "scenario")
        trace.scenario = fields.size() > 1 ? fields[1] : "";
      else if (fields[0] == "plant")
        trace.plant = fields.size() > 1 ? fields[1] : "";
      else if (fields[0] == "variant")
        trace.variant = fields.size() > 1 ? fields[1] : "";
      else if (fields[0] == "model")
        trace.model = fields.size() > 1 ? fields[1] : "";
      else if (fields[0] == "counts" && fields.size() == 5) {
        trace.counts.decision = std::stoi(fields[1]);
        trace.counts.aux = std::stoi(fields[2]);
        trace.counts.total = std::stoi(fields[3]);
        trace.counts.rows = std::stoi(fields[4]);
      } else if (fields[0] == "failures" && fields.size() == 2) {
        trace.failures = std::stoi(fields[1]);
      }
      continue;
    }
    if (header.empty()) {
      header = split_csv(line);
      continue;
    }
    const auto fields = split_csv(line);
    if (fields.size() != header.size())
      throw ConfigError(path + ": row with " + std::to_string(fields.size()) +
                        " fields under a header of " + std::to_string(header.size()));
    ClosedLoopRecord rec;
    for (std::size_t i = 0; i < header.size(); ++i) {
      const std::string& col = header[i];
      const std::string& val = fields[i];
      if (col == "step")
        rec.step = std::stoi(val);
      else if (col.rfind("sp_", 0) == 0)
        rec.setpoints.push_back(parse_double(val, path));
      else if (col.rfind("y_", 0) == 0)
        rec.outputs.push_back(parse_double(val, path));
      else if (col.rfind("u_", 0) == 0)
        rec.controls.push_back(parse_double(val, path));
      else if (col == "status")
        rec.status = status_from_name(val);
      else if (col == "iterations")
        rec.iterations = std::stoi(val);
      else if (col == "objective")
        rec.objective = parse_double(val, path);
      else if (col == "wall_clock_seconds")
        rec.wall_clock_seconds = parse_double(val, path);
      else if (col.rfind("x_", 0) == 0)
        rec.state.push_back(parse_double(val, path));
      else
        throw ConfigError(path + ": unknown trace column '" + col + "'");
    }
    trace.records.push_back(std::move(rec));
  }
  if (header.empty()) throw ConfigError(path + ": no trace header found");
  return trace;
}

std::string summarize_trace(const ClosedLoopTrace& trace) {
  int ok = 0, iter_max = 0;
  double iter_sum = 0.0, wall_sum = 0.0;
  for (const ClosedLoopRecord& r : trace.records) {
    if (r.status != SolveStatus::kOptimal) continue;
    ++ok;
    iter_sum += r.iterations;
    iter_max = std::max(iter_max, r.iterations);
    wall_sum += r.wall_clock_seconds;
  }
  json j;
  j["scenario"] = trace.scenario;
  j["plant"] = trace.plant;
  j["variant"] = trace.variant;
  j["model"] = trace.model;
  j["steps"] = trace.records.size();
  j["failures"] = trace.failures;
  j["solves_ok"] = ok;
  j["variables"] = {{"decision", trace.counts.decision},
                    {"aux", trace.counts.aux},
                    {"total", trace.counts.total},
                    {"rows", trace.counts.rows}};
  j["wall_clock"] = {
      {"first_step_seconds",
       trace.records.empty() ? 0.0 : trace.records.front().wall_clock_seconds},
      {"average_seconds_ok", ok > 0 ? wall_sum / ok : 0.0}};
  j["iterations"] = {{"mean_ok", ok > 0 ? iter_sum / ok : 0.0}, {"max_ok", iter_max}};
  return j.dump(2);
}

TraceComparison compare_traces(const ClosedLoopTrace& a, const ClosedLoopTrace& baseline,
                               const DistanceFactors& factors, double threshold) {
  TraceComparison cmp;
  cmp.threshold = threshold;
  cmp.metrics = trajectory_distance(a, baseline, factors);
  for (double v : cmp.metrics.state) cmp.max_state = std::max(cmp.max_state, v);
  for (double v : cmp.metrics.control) cmp.max_control = std::max(cmp.max_control, v);
  cmp.same_model = a.model == baseline.model;
  if (cmp.same_model)
    cmp.consistent = cmp.max_state <= threshold && cmp.max_control <= threshold;
  return cmp;
}

void write_comparison_csv(const TraceComparison& cmp, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write comparison file " + path);
  out << "step,state_metric,control_metric\n";
  for (std::size_t k = 0; k < cmp.metrics.state.size(); ++k)
    out << k << ',' << fmt_double(cmp.metrics.state[k]) << ','
        << fmt_double(cmp.metrics.control[k]) << '\n';
}

std::string suite_report(std::span<const ClosedLoopTrace> traces) {
  json runs = json::array();
  for (const ClosedLoopTrace& t : traces) {
    json j = json::parse(summarize_trace(t));
    if (t.model != "mechanistic") {
      const ClosedLoopTrace* base = nullptr;
      for (const ClosedLoopTrace& c : traces)
        if (c.plant == t.plant && c.model == "mechanistic") {
          base = &c;
          break;
        }
      if (base != nullptr && !t.records.empty() &&
          base->records.size() == t.records.size()) {
        const auto plant = make_plant(t.plant);
        const int nfe = static_cast<int>(t.records.front().state.size()) / plant->n_x();
        const TrajectoryDistance d =
            trajectory_distance(t, *base, default_distance_factors(*plant, nfe));
        double ms = 0.0, mc = 0.0;
        for (double v : d.state) ms = std::max(ms, v);
        for (double v : d.control) mc = std::max(mc, v);
        j["distance_vs_mechanistic"] = {{"max_state", ms}, {"max_control", mc}};
      }
    }
    runs.push_back(std::move(j));
  }
  json out;
  out["runs"] = std::move(runs);
  return out.dump(2);
}

TrainJob load_train_job(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open train job file " + path);
  json j;
  try {
    in >> j;
    TrainJob job;
    job.plant = j.at("plant").get<std::string>();
    job.arch = j.at("arch").get<std::string>();
    job.out_dir = j.value("out", ".");
    job.tag = j.value("tag", "");
    job.n_fe = j.value("n_fe", -1);
    if (j.contains("network")) {
      const json& net = j.at("network");
      job.hidden = net.value("hidden", -1);
      job.width = net.value("width", -1);
      job.conv_layers = net.value("conv_layers", -1);
      job.channels = net.value("channels", -1);
      job.kernel = net.value("kernel", -1);
    }
    if (j.contains("training")) {
      const json& t = j.at("training");
      job.train.n_samples = t.value("samples", job.train.n_samples);
      job.train.epochs = t.value("epochs", job.train.epochs);
      job.train.batch_size = t.value("batch_size", job.train.batch_size);
      job.train.lr0 = t.value("lr0", job.train.lr0);
      job.train.decay = t.value("decay", job.train.decay);
      job.train.decay_every = t.value("decay_every", job.train.decay_every);
      job.train.test_fraction = t.value("test_fraction", job.train.test_fraction);
      job.train.seed = t.value("seed", job.train.seed);
      job.sampling = t.value("sampling", "");
      if (!job.sampling.empty() && job.sampling != "box" && job.sampling != "band" &&
          job.sampling != "steady")
        throw ConfigError(path + ": sampling must be \"box\", \"band\", or \"steady\"");
    }
    return job;
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

TrainArtifacts train_surrogate(const TrainJob& job, const std::string& data_dir) {
  const std::string reject = arch_rejection(job.plant, job.arch);
  if (!reject.empty()) throw ConfigError("train job: " + reject);

  const auto plant = make_plant(job.plant, data_dir, job.n_fe);
  const NetworkSpec spec = benchmark_network(*plant, job.arch, -1, job.hidden, job.width,
                                             job.conv_layers, job.channels, job.kernel);

  // The reformer defaults to sampling initial profiles from a steady band
  // (independent per-node draws are hopeless in 250 dimensions); the other
  // plants default to the plain state box. Jobs can override with "band" or
  // with "steady", which blends whole steady profiles at random controls.
  const bool use_band = job.sampling.empty() ? job.plant == "b3" : job.sampling == "band";
  ProfileBand band;
  const ProfileBand* bandp = nullptr;
  if (use_band) {
    const std::string shipped = data_dir + "/b3_initial_band.csv";
    if (job.plant == "b3" && job.n_fe <= 0 && fsys::exists(shipped))
      band = load_profile_band(shipped, plant->n_x(), plant->n_fe());
    else
      band = compute_steady_band(*plant);
    bandp = &band;
  }
  TrainConfig cfg = job.train;
  cfg.sampling = job.sampling == "steady" ? SamplingMode::kSteadyMix : SamplingMode::kBox;
  const std::string mode = use_band ? "band" : (job.sampling == "steady" ? "steady" : "box");

  const TrainResult result = train(spec, *plant, cfg, bandp);

  fsys::create_directories(job.out_dir);
  std::string base = job.plant + "_" + job.arch;
  if (!job.tag.empty()) base += "_" + job.tag;

  TrainArtifacts art;
  art.params_path = job.out_dir + "/" + base + ".params.bin";
  art.loss_path = job.out_dir + "/" + base + "_loss.csv";
  art.meta_path = job.out_dir + "/" + base + ".json";
  art.best_epoch = result.report.best_epoch;
  art.best_test_loss = art.best_epoch >= 0
                           ? result.report.test_loss[static_cast<std::size_t>(art.best_epoch)]
                           : std::numeric_limits<double>::quiet_NaN();

  save_params(art.params_path, spec, result.params);
  result.report.write_csv(art.loss_path);

  std::ostringstream cfg_key;
  cfg_key << job.plant << '|' << job.arch << '|' << plant->n_fe() << '|' << spec.digest() << '|'
          << job.train.n_samples << '|' << job.train.epochs << '|' << job.train.batch_size
          << '|' << job.train.lr0 << '|' << job.train.decay << '|' << job.train.decay_every
          << '|' << job.train.test_fraction << '|' << job.train.seed << '|' << mode;

  json meta;
  meta["plant"] = job.plant;
  meta["arch"] = job.arch;
  meta["tag"] = job.tag;
  meta["n_fe"] = plant->n_fe();
  meta["spec"] = spec.describe();
  meta["spec_digest"] = hex64(spec.digest());
  meta["seed"] = job.train.seed;
  meta["config_digest"] = hex64(fnv1a(cfg_key.str()));
  meta["training"] = {{"samples", job.train.n_samples},
                      {"epochs", job.train.epochs},
                      {"batch_size", job.train.batch_size},
                      {"lr0", job.train.lr0},
                      {"decay", job.train.decay},
                      {"decay_every", job.train.decay_every},
                      {"test_fraction", job.train.test_fraction},
                      {"sampling", mode}};
  meta["best_epoch"] = art.best_epoch;
  meta["best_test_loss"] = art.best_test_loss;
  if (!result.report.train_loss.empty())
    meta["final_train_loss"] = result.report.train_loss.back();

  std::ofstream metaf(art.meta_path);
  if (!metaf) throw std::runtime_error("cannot write " + art.meta_path);
  metaf << meta.dump(2) << '\n';
  return art;
}

}  // namespace nnmpc
