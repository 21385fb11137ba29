// locagg: fits Local-Aggregate GLMs to tensor covariates (subjects x time x
// locations) with a graph-coupled consensus ADMM, plus simulation, model
// selection, and distributed-run subcommands.

#include <chrono>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "locagg/admm.hpp"
#include "locagg/dist.hpp"
#include "locagg/io.hpp"
#include "locagg/model_selection.hpp"
#include "locagg/simulate.hpp"

namespace {

using namespace locagg;

constexpr const char* kVersion = "locagg 1.0.0";

struct FitFlags {
  std::string data, graph, out;
  double lambda_agg = 0.0, lambda_sm = 0.0, lambda_sp = 0.0;
  double rho = 1.0, eps_abs = 1e-6, eps_rel = 1e-4;
  int max_iters = 2000;
  std::string adapt = "fixed";
  bool record_path = false;
  std::string trace_out;
};

void add_fit_flags(CLI::App* cmd, FitFlags& f) {
  cmd->add_option("--data", f.data, "dataset file")->required();
  cmd->add_option("--graph", f.graph, "location graph file")->required();
  cmd->add_option("--lambda-agg", f.lambda_agg, "aggregating penalty weight");
  cmd->add_option("--lambda-sm", f.lambda_sm, "temporal smoothness weight");
  cmd->add_option("--lambda-sp", f.lambda_sp, "group sparsity weight");
  cmd->add_option("--rho", f.rho, "initial ADMM penalty parameter");
  cmd->add_option("--adapt", f.adapt, "rho scheme: fixed, scalar, or vector")
      ->check(CLI::IsMember({"fixed", "scalar", "vector"}));
  cmd->add_option("--eps-abs", f.eps_abs, "absolute stopping tolerance");
  cmd->add_option("--eps-rel", f.eps_rel, "relative stopping tolerance");
  cmd->add_option("--max-iters", f.max_iters, "iteration cap");
  cmd->add_flag("--record-path", f.record_path, "store every iterate in the model file");
  cmd->add_option("--trace-out", f.trace_out, "residuals-per-iterate CSV");
  cmd->add_option("--out", f.out, "output model file")->required();
}

AdmmConfig make_config(const FitFlags& f) {
  AdmmConfig cfg;
  cfg.lambda_agg = f.lambda_agg;
  cfg.rho_init = f.rho;
  cfg.adapt = f.adapt == "vector" ? RhoAdapt::vector_t
                                  : (f.adapt == "scalar" ? RhoAdapt::scalar : RhoAdapt::fixed);
  cfg.eps_abs = f.eps_abs;
  cfg.eps_rel = f.eps_rel;
  cfg.max_iters = f.max_iters;
  cfg.record_path = f.record_path;
  cfg.validate();
  return cfg;
}

void write_model(const std::string& out, const TensorDataset& ds, const FitFlags& f,
                 const CoefficientState& state, const AlgorithmPath& path) {
  ModelFile model;
  model.family = ds.family;
  model.converged = state.converged;
  model.iterate = static_cast<std::uint64_t>(state.k);
  model.lambda_agg = f.lambda_agg;
  model.lambda_sm = f.lambda_sm;
  model.lambda_sp = f.lambda_sp;
  model.B = state.B;
  model.path = path.iterates;
  save_model(model, out);
}

void write_trace(const std::string& out, const AlgorithmPath& path) {
  std::ofstream csv(out);
  if (!csv) throw IoError("cannot open for writing: " + out);
  csv << "iterate,r_norm,s_norm,objective\n";
  for (std::size_t k = 0; k < path.aux.size(); ++k)
    csv << k + 1 << "," << path.aux[k].r_norm << "," << path.aux[k].s_norm << ","
        << path.aux[k].objective << "\n";
}

Family parse_family(const std::string& name) {
  if (name == "gaussian") return Family::gaussian;
  if (name == "binomial") return Family::binomial;
  throw InvalidArgument("--family must be gaussian or binomial, got " + name);
}

int run_simulate(const SimulationSpec& spec, const std::string& out,
                 const std::string& signal_out) {
  SignalMatrix signal;
  TensorDataset ds = simulate_dataset(spec, &signal);
  save_dataset(ds, out);
  if (!signal_out.empty()) {
    ModelFile truth;
    truth.family = spec.family;
    truth.converged = true;
    truth.B = Matrix::Zero(spec.tau + 1, spec.L);
    truth.B.bottomRows(spec.tau) = signal.B_o;
    save_model(truth, signal_out);
  }
  return 0;
}

int run_graph(const std::string& coords_path, const std::string& edges_path, Eigen::Index chain,
              Eigen::Index grid, Eigen::Index edge_nodes, double theta, const std::string& metric,
              const std::string& out) {
  int sources = (!coords_path.empty()) + (!edges_path.empty()) + (chain > 0) + (grid > 0);
  if (sources != 1)
    throw InvalidArgument("give exactly one of --coords, --edges, --chain, --grid");
  GraphPenalty graph;
  if (!coords_path.empty()) {
    GraphMetric m = metric == "polar" ? GraphMetric::polar : GraphMetric::euclidean;
    graph = laplacian_from_coords(load_coordinates(coords_path), theta, m);
  } else if (!edges_path.empty()) {
    if (edge_nodes < 1) throw InvalidArgument("--edges requires --nodes");
    graph = load_edge_list(edges_path, edge_nodes);
  } else if (chain > 0) {
    graph = laplacian_from_adjacency(chain_neighbors(chain));
  } else {
    graph = laplacian_from_adjacency(grid_neighbors(grid));
  }
  save_graph(graph, out);
  return 0;
}

int run_fit(const FitFlags& f) {
  TensorDataset ds = load_dataset(f.data);
  GraphPenalty graph = load_graph(f.graph);
  AdmmConfig cfg = make_config(f);
  PenaltyConfig pen{f.lambda_sm, f.lambda_sp};
  if (!f.trace_out.empty()) cfg.record_path = true;
  FitResult result = fit(ds, graph, pen, cfg);
  AlgorithmPath emitted = f.record_path ? result.path : AlgorithmPath{};
  write_model(f.out, ds, f, result.state, emitted);
  if (!f.trace_out.empty()) write_trace(f.trace_out, result.path);
  if (!result.state.converged) {
    std::cerr << "fit stopped at --max-iters (" << f.max_iters
              << ") without meeting the tolerances\n";
    return 2;
  }
  return 0;
}

int run_cv(const FitFlags& f, int folds, const std::string& lambda_max, std::uint64_t seed,
           double lambda_sm, double lambda_sp, const std::string& curve_out) {
  TensorDataset ds = load_dataset(f.data);
  GraphPenalty graph = load_graph(f.graph);
  FitFlags flags = f;
  flags.lambda_sm = lambda_sm;
  flags.lambda_sp = lambda_sp;
  if (lambda_max == "auto") {
    flags.lambda_agg = lambda_max_heuristic(ds, graph);
  } else {
    flags.lambda_agg = std::stod(lambda_max);
    if (flags.lambda_agg <= 0.0) throw InvalidArgument("--lambda-max must be positive");
  }
  AdmmConfig cfg = make_config(flags);
  cfg.record_path = true;
  PenaltyConfig pen{lambda_sm, lambda_sp};
  FoldAssignment assignment = make_folds(ds.n(), folds, seed);
  PathCvResult result = cv_algorithm_path(ds, graph, pen, cfg, assignment);

  CoefficientState final_state = result.final_fit.state;
  final_state.B = result.final_model;
  final_state.k = result.k_opt + 1;
  write_model(flags.out, ds, flags, final_state, AlgorithmPath{});
  if (!curve_out.empty()) {
    std::ofstream csv(curve_out);
    if (!csv) throw IoError("cannot open for writing: " + curve_out);
    csv << "iterate,cv_error,selected\n";
    for (std::size_t k = 0; k < result.cv_curve.size(); ++k)
      csv << k + 1 << "," << result.cv_curve[k] << ","
          << (static_cast<int>(k) == result.k_opt ? 1 : 0) << "\n";
  }
  std::cout << "selected iterate " << result.k_opt + 1 << " of " << result.cv_curve.size()
            << " (lambda_agg=" << flags.lambda_agg << ")\n";
  return 0;
}

int run_predict(const std::string& model_path, const std::string& data_path,
                const std::string& out) {
  ModelFile model = load_model(model_path);
  TensorDataset ds = load_dataset(data_path);
  if (model.B.rows() != ds.tau() + 1 || model.B.cols() != ds.num_locations())
    throw InvalidArgument("model was fit on different tau or L than this dataset");
  Predictions preds = predict_ensemble(model.B, ds, model.family);
  std::ofstream csv(out);
  if (!csv) throw IoError("cannot open for writing: " + out);
  bool labeled = model.family == Family::binomial;
  csv << (labeled ? "subject,prediction,label\n" : "subject,prediction\n");
  for (Eigen::Index i = 0; i < preds.values.size(); ++i) {
    csv << i << "," << preds.values[i];
    if (labeled) csv << "," << preds.labels[i];
    csv << "\n";
  }
  return 0;
}

int run_eval(const std::string& model_path, const std::string& data_path,
             const std::string& truth_path, const std::string& report_path) {
  ModelFile model = load_model(model_path);
  TensorDataset ds = load_dataset(data_path);
  SignalMatrix truth;
  bool has_truth = !truth_path.empty();
  if (has_truth) {
    ModelFile stored = load_model(truth_path);
    truth.B_o = stored.B.bottomRows(stored.B.rows() - 1);
  }
  EvalReport report = evaluate(model.B, ds, model.family, has_truth ? &truth : nullptr);
  auto fmt = [](double v) {
    std::ostringstream s;
    s.precision(17);
    s << v;
    return s.str();
  };
  std::vector<std::pair<std::string, std::string>> entries{
      {"family", family_name(model.family)},
      {"converged", model.converged ? "1" : "0"},
      {"iterate", std::to_string(model.iterate)},
      {"prediction_error", fmt(report.prediction_error)},
  };
  if (report.has_truth) {
    entries.emplace_back("coef_error", fmt(report.coef_mse));
    entries.emplace_back("tpr", fmt(report.tpr));
    entries.emplace_back("fpr", fmt(report.fpr));
  }
  save_report(entries, report_path);
  return 0;
}

std::pair<std::string, int> split_host_port(const std::string& endpoint) {
  auto colon = endpoint.rfind(':');
  if (colon == std::string::npos || colon + 1 == endpoint.size())
    throw InvalidArgument("expected host:port, got " + endpoint);
  int port = std::stoi(endpoint.substr(colon + 1));
  if (port < 0 || port > 65535) throw InvalidArgument("port out of range in " + endpoint);
  return {endpoint.substr(0, colon), port};
}

int run_worker(const std::string& listen, int sessions) {
  auto [host, port] = split_host_port(listen);
  (void)host;  // we bind all interfaces; the host part documents intent
  locagg::run_worker(port, sessions);
  return 0;
}

int run_coordinate(const FitFlags& f, const std::string& worker_list) {
  TensorDataset ds = load_dataset(f.data);
  GraphPenalty graph = load_graph(f.graph);
  AdmmConfig cfg = make_config(f);
  PenaltyConfig pen{f.lambda_sm, f.lambda_sp};

  std::vector<Socket> workers;
  std::stringstream list(worker_list);
  std::string endpoint;
  while (std::getline(list, endpoint, ',')) {
    if (endpoint.empty()) continue;
    auto [host, port] = split_host_port(endpoint);
    workers.push_back(Socket::connect_to(host, port));
  }
  if (workers.empty()) throw InvalidArgument("--workers lists no endpoints");

  DistributedFitResult result = coordinate_fit(ds, graph, pen, cfg, {}, workers);
  AlgorithmPath emitted = f.record_path ? result.path : AlgorithmPath{};
  write_model(f.out, ds, f, result.state, emitted);
  if (!result.state.converged) {
    std::cerr << "distributed fit stopped at --max-iters without meeting the tolerances\n";
    return 2;
  }
  return 0;
}

int run_bench(Eigen::Index n, Eigen::Index tau, Eigen::Index L, int seeds, double lambda_agg,
              const std::string& out) {
  Eigen::Index side = static_cast<Eigen::Index>(std::llround(std::sqrt(static_cast<double>(L))));
  if (side * side != L) throw InvalidArgument("--L must be a perfect square for the grid benchmark");
  GraphPenalty graph = laplacian_from_adjacency(grid_neighbors(side));

  std::ofstream csv(out);
  if (!csv) throw IoError("cannot open for writing: " + out);
  csv << "seed,scheme,iterations,seconds,objective,converged\n";
  const std::pair<const char*, RhoAdapt> schemes[] = {
      {"vector", RhoAdapt::vector_t}, {"scalar", RhoAdapt::scalar}, {"fixed", RhoAdapt::fixed}};
  for (int s = 0; s < seeds; ++s) {
    SimulationSpec spec;
    spec.n = n;
    spec.tau = tau;
    spec.L = L;
    spec.seed = static_cast<std::uint64_t>(s + 1);
    TensorDataset ds = simulate_dataset(spec);
    for (const auto& [name, adapt] : schemes) {
      AdmmConfig cfg;
      cfg.lambda_agg = lambda_agg;
      cfg.adapt = adapt;
      cfg.max_iters = 5000;
      auto start = std::chrono::steady_clock::now();
      FitResult result = fit(ds, graph, {}, cfg);
      std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
      csv << spec.seed << "," << name << "," << result.state.k << "," << elapsed.count() << ","
          << result.objective << "," << (result.state.converged ? 1 : 0) << "\n";
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Local-Aggregate GLM solver for tensor covariates"};
  app.set_version_flag("--version", kVersion);
  app.set_config("--config", "", "flat key=value config file; flags override it");
  app.require_subcommand(1);

  SimulationSpec sim;
  std::string sim_family = "gaussian", sim_spatial = "blocks", sim_out, sim_signal_out;
  auto* simulate = app.add_subcommand("simulate", "generate a synthetic dataset");
  simulate->add_option("--n", sim.n, "subjects");
  simulate->add_option("--tau", sim.tau, "time points");
  simulate->add_option("--L", sim.L, "locations");
  simulate->add_option("--rank", sim.rank, "signal rank");
  simulate->add_option("--theta-t", sim.theta_T, "temporal correlation scale");
  simulate->add_option("--theta-l", sim.theta_L, "spatial correlation scale");
  simulate->add_option("--snr", sim.snr, "signal-to-noise ratio");
  simulate->add_option("--family", sim_family, "gaussian or binomial");
  simulate->add_option("--spatial", sim_spatial, "spatial signal: blocks or smooth")
      ->check(CLI::IsMember({"blocks", "smooth"}));
  simulate->add_option("--seed", sim.seed, "RNG seed");
  simulate->add_option("--out", sim_out, "output dataset file")->required();
  simulate->add_option("--signal-out", sim_signal_out, "write the true signal too");

  std::string g_coords, g_edges, g_metric = "euclidean", g_out;
  Eigen::Index g_chain = 0, g_grid = 0, g_nodes = 0;
  double g_theta = 1.0;
  auto* graph = app.add_subcommand("graph", "build a location graph Laplacian");
  graph->add_option("--coords", g_coords, "coordinates file (l x y z | l azimuth elevation)");
  graph->add_option("--edges", g_edges, "edge list file (l l' weight, 1-based)");
  graph->add_option("--nodes", g_nodes, "node count for --edges");
  graph->add_option("--chain", g_chain, "chain graph on this many nodes");
  graph->add_option("--grid", g_grid, "square lattice with this side length");
  graph->add_option("--theta", g_theta, "exponential kernel scale for --coords");
  graph->add_option("--metric", g_metric, "euclidean or polar")
      ->check(CLI::IsMember({"euclidean", "polar"}));
  graph->add_option("--out", g_out, "output graph file")->required();

  FitFlags fit_flags;
  auto* fitc = app.add_subcommand("fit", "fit one Local-Aggregate model");
  add_fit_flags(fitc, fit_flags);

  FitFlags cv_flags;
  int cv_folds = 5;
  std::string cv_lambda_max = "auto", cv_curve_out;
  std::uint64_t cv_seed = 0;
  double cv_lambda_sm = 0.0, cv_lambda_sp = 0.0;
  auto* cvc = app.add_subcommand("cv", "algorithm-path cross-validation");
  cvc->add_option("--data", cv_flags.data, "dataset file")->required();
  cvc->add_option("--graph", cv_flags.graph, "location graph file")->required();
  cvc->add_option("--folds", cv_folds, "fold count M")->check(CLI::Range(2, 1000));
  cvc->add_option("--lambda-max", cv_lambda_max, "auto or a positive value");
  cvc->add_option("--lambda-sm", cv_lambda_sm, "temporal smoothness weight");
  cvc->add_option("--lambda-sp", cv_lambda_sp, "group sparsity weight");
  cvc->add_option("--rho", cv_flags.rho, "initial ADMM penalty parameter");
  cvc->add_option("--adapt", cv_flags.adapt, "rho scheme: fixed, scalar, or vector")
      ->check(CLI::IsMember({"fixed", "scalar", "vector"}));
  cvc->add_option("--max-iters", cv_flags.max_iters, "iteration cap per fold");
  cvc->add_option("--seed", cv_seed, "fold shuffle seed");
  cvc->add_option("--curve-out", cv_curve_out, "CV-error-per-iterate CSV");
  cvc->add_option("--out", cv_flags.out, "output model file")->required();

  std::string p_model, p_data, p_out;
  auto* predict = app.add_subcommand("predict", "ensemble predictions from a model");
  predict->add_option("--model", p_model, "model file")->required();
  predict->add_option("--data", p_data, "dataset file")->required();
  predict->add_option("--out", p_out, "predictions CSV")->required();

  std::string e_model, e_data, e_truth, e_report;
  auto* eval = app.add_subcommand("eval", "prediction and recovery metrics");
  eval->add_option("--model", e_model, "model file")->required();
  eval->add_option("--data", e_data, "dataset file")->required();
  eval->add_option("--truth", e_truth, "true signal file from simulate --signal-out");
  eval->add_option("--report", e_report, "key=value report file")->required();

  std::string w_listen;
  int w_sessions = -1;
  auto* worker = app.add_subcommand("worker", "serve location shards for a coordinator");
  worker->add_option("--listen", w_listen, "host:port to listen on")->required();
  worker->add_option("--sessions", w_sessions, "exit after this many sessions (default: serve forever)");

  FitFlags coord_flags;
  std::string coord_workers;
  auto* coordinate = app.add_subcommand("coordinate", "run the fit across workers");
  add_fit_flags(coordinate, coord_flags);
  coordinate->add_option("--workers", coord_workers, "comma-separated host:port list")->required();

  Eigen::Index b_n = 100, b_tau = 30, b_L = 16;
  int b_seeds = 10;
  double b_lambda_agg = 1.0;
  std::string b_out;
  auto* bench = app.add_subcommand("bench", "compare rho schemes on a seeded benchmark");
  bench->add_option("--n", b_n, "subjects");
  bench->add_option("--tau", b_tau, "time points");
  bench->add_option("--L", b_L, "locations (perfect square)");
  bench->add_option("--seeds", b_seeds, "number of seeds");
  bench->add_option("--lambda-agg", b_lambda_agg, "aggregating penalty weight");
  bench->add_option("--out", b_out, "comparison CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;  // flag/validation problems exit 1
  }

  try {
    if (*simulate) {
      sim.family = parse_family(sim_family);
      sim.spatial = sim_spatial == "smooth" ? SpatialSignal::smooth : SpatialSignal::blocks;
      sim.validate();
      return run_simulate(sim, sim_out, sim_signal_out);
    }
    if (*graph) return run_graph(g_coords, g_edges, g_chain, g_grid, g_nodes, g_theta, g_metric, g_out);
    if (*fitc) return run_fit(fit_flags);
    if (*cvc) return run_cv(cv_flags, cv_folds, cv_lambda_max, cv_seed, cv_lambda_sm, cv_lambda_sp, cv_curve_out);
    if (*predict) return run_predict(p_model, p_data, p_out);
    if (*eval) return run_eval(e_model, e_data, e_truth, e_report);
    if (*worker) return run_worker(w_listen, w_sessions);
    if (*coordinate) return run_coordinate(coord_flags, coord_workers);
    if (*bench) return run_bench(b_n, b_tau, b_L, b_seeds, b_lambda_agg, b_out);
  } catch (const NetworkError& err) {
    std::cerr << "network error: " << err.what() << "\n";
    return 4;
  } catch (const IoError& err) {
    std::cerr << "i/o error: " << err.what() << "\n";
    return 3;
  } catch (const InvalidArgument& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  }
  return 0;
}
