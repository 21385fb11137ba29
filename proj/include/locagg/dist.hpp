#pragma once

#include <string>
#include <utility>
#include <vector>

#include "locagg/admm.hpp"
#include "locagg/wire.hpp"

namespace locagg {

/// Coordinator-side view of the location partition.
struct RoundState {
  int round = 0;
  std::vector<std::vector<Eigen::Index>> assignments;  // worker -> owned locations

  static RoundState balanced(Eigen::Index L, std::size_t workers) {
    if (workers == 0) throw InvalidArgument("need at least one worker");
    RoundState state;
    state.assignments.resize(workers);
    Eigen::Index base = L / static_cast<Eigen::Index>(workers);
    Eigen::Index extra = L % static_cast<Eigen::Index>(workers);
    Eigen::Index next = 0;
    for (std::size_t w = 0; w < workers; ++w) {
      Eigen::Index count = base + (static_cast<Eigen::Index>(w) < extra ? 1 : 0);
      for (Eigen::Index i = 0; i < count; ++i) state.assignments[w].push_back(next++);
    }
    return state;
  }
};

namespace detail {

inline void put_vector(ByteWriter& w, const Vector& v) {
  w.put_f64_array(v.data(), static_cast<std::size_t>(v.size()));
}

inline Vector get_vector(ByteReader& r, Eigen::Index size) {
  Vector v(size);
  r.get_f64_array(v.data(), static_cast<std::size_t>(size));
  return v;
}

}  // namespace detail

/// Serves one fitting session on an accepted connection. The worker holds
/// its location shards, runs the local solves each round, and keeps the dual
/// variables; only consensus columns and residual summaries cross the wire.
inline void serve_worker(Socket& sock) {
  sock.set_receive_timeout(600);
  {
    Frame hello = expect_frame(sock, MsgType::hello);
    ByteReader r(hello.payload);
    if (r.get_u16() != kProtocolVersion) throw NetworkError("protocol version mismatch");
    ByteWriter reply;
    reply.put_u16(kProtocolVersion);
    send_frame(sock, MsgType::hello, reply.bytes());
  }

  Frame assign = expect_frame(sock, MsgType::assign);
  ByteReader r(assign.payload);
  auto family = static_cast<Family>(r.get_u8());
  auto n = static_cast<Eigen::Index>(r.get_u64());
  auto tau = static_cast<Eigen::Index>(r.get_u64());
  auto owned = static_cast<Eigen::Index>(r.get_u64());
  if (n < 1 || tau < 1 || owned < 1) throw NetworkError("assign rejected: bad dimensions");
  std::vector<Eigen::Index> locations(static_cast<std::size_t>(owned));
  for (auto& l : locations) l = static_cast<Eigen::Index>(r.get_u64());
  PenaltyConfig pen;
  pen.lambda_sm = r.get_f64();
  pen.lambda_sp = r.get_f64();
  double rho_init = r.get_f64();
  SolverControls controls;
  controls.gamma = r.get_f64();
  controls.t_init = r.get_f64();
  controls.inner_tol = r.get_f64();
  controls.max_inner_iters = static_cast<int>(r.get_u64());
  controls.max_halvings = static_cast<int>(r.get_u64());
  Vector y = detail::get_vector(r, n);

  Eigen::Index tau1 = tau + 1;
  std::vector<Matrix> designs;
  designs.reserve(static_cast<std::size_t>(owned));
  for (Eigen::Index j = 0; j < owned; ++j) {
    Matrix X(n, tau1);
    X.col(0).setOnes();
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index t = 0; t < tau; ++t) X(i, t + 1) = r.get_f64();
    designs.push_back(std::move(X));
  }
  if (!r.exhausted()) throw NetworkError("assign payload longer than declared");
  send_frame(sock, MsgType::assign, {});

  Matrix omega_tilde =
      tau >= 3 ? embed_omega(second_difference_penalty(tau)) : Matrix::Zero(tau1, tau1);
  if (pen.lambda_sm > 0.0 && tau < 3) throw NetworkError("assign rejected: smoothing needs tau >= 3");
  bool use_direct = family == Family::gaussian && pen.lambda_sp == 0.0;
  std::vector<LocalDirectCache> caches(static_cast<std::size_t>(owned));

  Matrix B = Matrix::Zero(tau1, owned);
  Matrix Z = Matrix::Zero(tau1, owned);
  Matrix U = Matrix::Zero(tau1, owned);
  Matrix V(tau1, owned);
  Matrix r_prev_sq = Matrix::Zero(tau1, owned);  // squared per-time primal residuals
  Vector rho = Vector::Constant(tau1, rho_init);

  for (std::uint64_t round = 1;; ++round) {
    parallel_for(static_cast<int>(owned), [&](int j) {
      auto idx = static_cast<std::size_t>(j);
      LocalProblem problem{designs[idx], y,   family,   pen.lambda_sm, pen.lambda_sp,
                           omega_tilde,  rho, Z.col(j), U.col(j)};
      B.col(j) = use_direct ? solve_local_gaussian_direct(problem, &caches[idx])
                            : solve_local_prox(problem, controls, B.col(j));
    });
    Matrix SB = B;
    SB.row(0).setZero();
    V = SB + U;

    ByteWriter report;
    report.put_u64(round);
    for (Eigen::Index j = 0; j < owned; ++j) {
      detail::put_vector(report, SB.col(j));
      detail::put_vector(report, r_prev_sq.col(j));
    }
    send_frame(sock, MsgType::beta_report, report.bytes());

    Frame broadcast = expect_frame(sock, MsgType::z_broadcast);
    ByteReader br(broadcast.payload);
    if (br.get_u64() != round) throw NetworkError("broadcast round mismatch");
    bool stop = br.get_u8() != 0;
    rho = detail::get_vector(br, tau1);
    Vector rescale = detail::get_vector(br, tau1);
    for (Eigen::Index j = 0; j < owned; ++j) Z.col(j) = detail::get_vector(br, tau1);

    // Dual update, then the rho rescale broadcast alongside it.
    U = V - Z;
    U = rescale.asDiagonal() * U;
    r_prev_sq = (SB - Z).array().square();

    if (stop) break;
  }

  ByteWriter result;
  result.put_u64(static_cast<std::uint64_t>(owned));
  for (Eigen::Index j = 0; j < owned; ++j) detail::put_vector(result, B.col(j));
  send_frame(sock, MsgType::result, result.bytes());
  expect_frame(sock, MsgType::stop);
}

/// Listens on port and serves `sessions` fitting sessions (forever if < 0).
inline void run_worker(int port, int sessions = -1) {
  Listener listener(port);
  for (int served = 0; sessions < 0 || served < sessions; ++served) {
    Socket sock = listener.accept_one();
    serve_worker(sock);
  }
}

struct DistributedFitResult {
  CoefficientState state;
  AlgorithmPath path;  // snapshots hold SB (zero intercept row)
  std::vector<std::uint64_t> report_bytes_per_round;  // per worker, per round
  std::vector<std::uint64_t> assign_bytes;            // per worker
};

/// Runs the ADMM over connected workers: ships shards once, then exchanges
/// consensus columns each synchronous round. Iterates match the in-process
/// fit bit for bit.
inline DistributedFitResult coordinate_fit(const TensorDataset& ds, const GraphPenalty& graph,
                                           const PenaltyConfig& pen, const AdmmConfig& cfg,
                                           const SolverControls& controls,
                                           std::vector<Socket>& workers) {
  ds.validate();
  cfg.validate();
  if (graph.num_locations() != ds.num_locations())
    throw InvalidArgument("graph/dataset location mismatch");
  if (workers.empty()) throw InvalidArgument("need at least one connected worker");
  Eigen::Index tau1 = ds.tau() + 1;
  Eigen::Index L = ds.num_locations();
  RoundState round_state = RoundState::balanced(L, workers.size());

  DistributedFitResult result;
  for (std::size_t w = 0; w < workers.size(); ++w) {
    Socket& sock = workers[w];
    sock.set_receive_timeout(600);
    ByteWriter hello;
    hello.put_u16(kProtocolVersion);
    send_frame(sock, MsgType::hello, hello.bytes());
    Frame reply = expect_frame(sock, MsgType::hello);
    ByteReader hr(reply.payload);
    if (hr.get_u16() != kProtocolVersion) throw NetworkError("protocol version mismatch");

    std::uint64_t sent_before = sock.bytes_sent();
    ByteWriter assign;
    assign.put_u8(static_cast<std::uint8_t>(ds.family));
    assign.put_u64(static_cast<std::uint64_t>(ds.n()));
    assign.put_u64(static_cast<std::uint64_t>(ds.tau()));
    assign.put_u64(round_state.assignments[w].size());
    for (Eigen::Index l : round_state.assignments[w]) assign.put_u64(static_cast<std::uint64_t>(l));
    assign.put_f64(pen.lambda_sm);
    assign.put_f64(pen.lambda_sp);
    assign.put_f64(cfg.rho_init);
    assign.put_f64(controls.gamma);
    assign.put_f64(controls.t_init);
    assign.put_f64(controls.inner_tol);
    assign.put_u64(static_cast<std::uint64_t>(controls.max_inner_iters));
    assign.put_u64(static_cast<std::uint64_t>(controls.max_halvings));
    detail::put_vector(assign, ds.y);
    for (Eigen::Index l : round_state.assignments[w]) {
      const Matrix& block = ds.location(l);
      for (Eigen::Index i = 0; i < block.rows(); ++i)
        for (Eigen::Index t = 0; t < block.cols(); ++t) assign.put_f64(block(i, t));
    }
    send_frame(sock, MsgType::assign, assign.bytes());
    expect_frame(sock, MsgType::assign);
    result.assign_bytes.push_back(sock.bytes_sent() - sent_before);
  }

  ConsensusCoordinator coordinator(graph, cfg, tau1);
  Matrix SB(tau1, L);
  Matrix worker_r_sq(tau1, L);
  bool converged = false;
  int final_round = 0;
  ResidualReport last_res;

  for (int k = 1; k <= cfg.max_iters; ++k) {
    round_state.round = k;
    for (std::size_t w = 0; w < workers.size(); ++w) {
      std::uint64_t before = workers[w].bytes_received();
      Frame report;
      try {
        report = expect_frame(workers[w], MsgType::beta_report);
      } catch (const NetworkError& err) {
        throw NetworkError("round " + std::to_string(k) + " aborted: worker " + std::to_string(w) +
                           " failed (" + err.what() + ")");
      }
      ByteReader rr(report.payload);
      if (rr.get_u64() != static_cast<std::uint64_t>(k)) throw NetworkError("report round mismatch");
      for (Eigen::Index l : round_state.assignments[w]) {
        SB.col(l) = detail::get_vector(rr, tau1);
        worker_r_sq.col(l) = detail::get_vector(rr, tau1);
      }
      if (!rr.exhausted()) throw NetworkError("report payload longer than declared");
      result.report_bytes_per_round.push_back(workers[w].bytes_received() - before);
    }

    // Same elementwise sum the workers use for their dual updates; the U
    // mirror makes both sides bit-identical.
    Matrix V = SB + coordinator.dual();
    auto round = coordinator.step(V);
    last_res = round.res;
    final_round = k;
    if (cfg.record_path) {
      result.path.iterates.push_back(SB);
      result.path.aux.push_back({round.res.r_norm, round.res.s_norm, 0.0});
    }
    bool stop = (round.stop && k >= cfg.min_iters) || k == cfg.max_iters;
    converged = round.stop;

    for (std::size_t w = 0; w < workers.size(); ++w) {
      ByteWriter broadcast;
      broadcast.put_u64(static_cast<std::uint64_t>(k));
      broadcast.put_u8(stop ? 1 : 0);
      detail::put_vector(broadcast, coordinator.rho());
      detail::put_vector(broadcast, round.rescale);
      for (Eigen::Index l : round_state.assignments[w])
        detail::put_vector(broadcast, coordinator.consensus().col(l));
      send_frame(workers[w], MsgType::z_broadcast, broadcast.bytes());
    }
    if (stop) break;
  }

  result.state.B = Matrix::Zero(tau1, L);
  for (std::size_t w = 0; w < workers.size(); ++w) {
    Frame final_frame = expect_frame(workers[w], MsgType::result);
    ByteReader fr(final_frame.payload);
    auto owned = static_cast<Eigen::Index>(fr.get_u64());
    if (owned != static_cast<Eigen::Index>(round_state.assignments[w].size()))
      throw NetworkError("result location count mismatch");
    for (Eigen::Index l : round_state.assignments[w])
      result.state.B.col(l) = detail::get_vector(fr, tau1);
    send_frame(workers[w], MsgType::stop, {});
  }

  result.state.Z = coordinator.consensus();
  result.state.U = coordinator.dual();
  result.state.rho = coordinator.rho();
  result.state.k = final_round;
  result.state.r_norm = last_res.r_norm;
  result.state.s_norm = last_res.s_norm;
  result.state.r_t = last_res.r_t;
  result.state.s_t = last_res.s_t;
  result.state.converged = converged;
  return result;
}

}  // namespace locagg
