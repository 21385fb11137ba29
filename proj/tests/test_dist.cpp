#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <memory>
#include <thread>

#include "locagg/dist.hpp"
#include "locagg/simulate.hpp"

using namespace locagg;

namespace {

TensorDataset seeded_dataset(std::uint64_t seed, Eigen::Index n = 24, Eigen::Index tau = 5,
                             Eigen::Index L = 4) {
  SimulationSpec spec;
  spec.n = n;
  spec.tau = tau;
  spec.L = L;
  spec.seed = seed;
  spec.theta_T = 2.0;
  spec.theta_L = 1.0;
  spec.rank = 1;
  return simulate_dataset(spec);
}

struct WorkerPool {
  std::vector<std::thread> threads;
  std::vector<Socket> sockets;

  explicit WorkerPool(std::size_t count) {
    for (std::size_t w = 0; w < count; ++w) {
      auto listener = std::make_shared<Listener>(0);
      int port = listener->port();
      threads.emplace_back([listener] {
        Socket sock = listener->accept_one();
        serve_worker(sock);
      });
      sockets.push_back(Socket::connect_to("127.0.0.1", port));
    }
  }

  ~WorkerPool() {
    for (std::thread& t : threads)
      if (t.joinable()) t.join();
  }
};

DistributedFitResult run_distributed(const TensorDataset& ds, const GraphPenalty& g,
                                     const PenaltyConfig& pen, const AdmmConfig& cfg,
                                     std::size_t workers) {
  WorkerPool pool(workers);
  return coordinate_fit(ds, g, pen, cfg, {}, pool.sockets);
}

}  // namespace

TEST_CASE("balanced contiguous partitions") {
  RoundState even = RoundState::balanced(6, 3);
  for (const auto& owned : even.assignments) CHECK(owned.size() == 2);

  RoundState uneven = RoundState::balanced(7, 3);
  CHECK(uneven.assignments[0].size() == 3);
  CHECK(uneven.assignments[1].size() == 2);
  CHECK(uneven.assignments[2].size() == 2);
  Eigen::Index expected = 0;
  for (const auto& owned : uneven.assignments)
    for (Eigen::Index l : owned) CHECK(l == expected++);

  RoundState again = RoundState::balanced(7, 3);
  CHECK(again.assignments == uneven.assignments);
}

TEST_CASE("one- and two-worker runs match the in-process fit per iteration") {
  TensorDataset ds = seeded_dataset(101);
  GraphPenalty g = laplacian_from_adjacency(chain_neighbors(ds.num_locations()));
  PenaltyConfig pen{0.2, 0.0};
  AdmmConfig cfg;
  cfg.lambda_agg = 0.8;
  cfg.record_path = true;
  cfg.adapt = RhoAdapt::vector_t;

  FitResult reference = fit(ds, g, pen, cfg);
  for (std::size_t workers : {std::size_t{1}, std::size_t{2}}) {
    DistributedFitResult dist = run_distributed(ds, g, pen, cfg, workers);
    REQUIRE(dist.path.iterates.size() == reference.path.iterates.size());
    for (std::size_t k = 0; k < dist.path.iterates.size(); ++k) {
      // The wire carries only the constrained (slope) coordinates per round.
      Matrix expected = reference.path.iterates[k].bottomRows(ds.tau());
      Matrix got = dist.path.iterates[k].bottomRows(ds.tau());
      CHECK((expected - got).cwiseAbs().maxCoeff() <= 1e-12);
    }
    CHECK((dist.state.B - reference.state.B).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((dist.state.Z - reference.state.Z).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((dist.state.U - reference.state.U).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(dist.state.k == reference.state.k);
    CHECK(dist.state.converged);
  }
}

TEST_CASE("assembled model matches the final path snapshot") {
  TensorDataset ds = seeded_dataset(102);
  GraphPenalty g = laplacian_from_adjacency(chain_neighbors(ds.num_locations()));
  AdmmConfig cfg;
  cfg.lambda_agg = 0.5;
  cfg.record_path = true;
  DistributedFitResult dist = run_distributed(ds, g, {}, cfg, 2);
  REQUIRE(!dist.path.iterates.empty());
  Matrix snapshot_slopes = dist.path.iterates.back().bottomRows(ds.tau());
  CHECK(snapshot_slopes == dist.state.B.bottomRows(ds.tau()));
}

TEST_CASE("per-round report bytes are exactly the two vectors plus the header") {
  TensorDataset ds = seeded_dataset(103, 20, 6, 4);
  GraphPenalty g = laplacian_from_adjacency(chain_neighbors(4));
  AdmmConfig cfg;
  cfg.lambda_agg = 0.6;

  WorkerPool pool(2);
  DistributedFitResult dist = coordinate_fit(ds, g, {}, cfg, {}, pool.sockets);
  Eigen::Index tau1 = ds.tau() + 1;
  std::uint64_t per_location = 2 * static_cast<std::uint64_t>(tau1) * 8;
  // frame header + round counter, then two (tau+1)-vectors per owned column
  std::uint64_t expected = kFrameHeaderBytes + 8 + 2 * per_location;
  for (std::uint64_t bytes : dist.report_bytes_per_round) CHECK(bytes == expected);
}

TEST_CASE("covariates cross the wire exactly once") {
  TensorDataset ds = seeded_dataset(104, 16, 4, 4);
  GraphPenalty g = laplacian_from_adjacency(chain_neighbors(4));
  AdmmConfig cfg;
  cfg.lambda_agg = 0.4;

  WorkerPool pool(2);
  std::vector<Socket>& sockets = pool.sockets;
  DistributedFitResult dist = coordinate_fit(ds, g, {}, cfg, {}, sockets);
  (void)dist;

  Eigen::Index tau1 = ds.tau() + 1;
  std::uint64_t covariate_bytes_per_location = static_cast<std::uint64_t>(ds.n() * ds.tau()) * 8;
  for (std::size_t w = 0; w < sockets.size(); ++w) {
    // ASSIGN carries y and the owned blocks once; everything the coordinator
    // sent afterwards is Z broadcasts. If a round retransmitted covariates,
    // total sent bytes would exceed this budget.
    std::uint64_t assign = dist.assign_bytes[w];
    std::uint64_t owned = 2;
    CHECK(assign >= owned * covariate_bytes_per_location);
    CHECK(assign < owned * covariate_bytes_per_location + 8 * static_cast<std::uint64_t>(ds.n()) +
                       kFrameHeaderBytes + 512);
    std::uint64_t broadcast_budget =
        static_cast<std::uint64_t>(dist.state.k) *
        (kFrameHeaderBytes + 8 + 1 + 2 * static_cast<std::uint64_t>(tau1) * 8 +
         owned * static_cast<std::uint64_t>(tau1) * 8);
    std::uint64_t non_assign = sockets[w].bytes_sent() - assign;
    // HELLO + STOP frames are the only other traffic.
    CHECK(non_assign <= broadcast_budget + 2 * (kFrameHeaderBytes + 16));
  }
}

TEST_CASE("unknown frame types and bad magic are rejected") {
  Listener listener(0);
  int port = listener.port();
  std::thread sender([port] {
    Socket sock = Socket::connect_to("127.0.0.1", port);
    std::vector<std::uint8_t> garbage{'X', 'X', 'X', 'X', 9, 0, 0, 0, 0, 0, 0, 0, 0};
    sock.send_all(garbage.data(), garbage.size());
  });
  Socket accepted = listener.accept_one();
  CHECK_THROWS_AS(recv_frame(accepted), NetworkError);
  sender.join();
}

TEST_CASE("worker failure mid-round names the worker") {
  TensorDataset ds = seeded_dataset(105, 12, 3, 4);
  GraphPenalty g = laplacian_from_adjacency(chain_neighbors(4));
  AdmmConfig cfg;
  cfg.lambda_agg = 0.3;

  Listener listener(0);
  int port = listener.port();
  std::thread quitter([port] {
    // Speak just enough protocol to pass HELLO and ASSIGN, then vanish.
    Socket sock = Socket::connect_to("127.0.0.1", port);
    Frame hello = expect_frame(sock, MsgType::hello);
    send_frame(sock, MsgType::hello, hello.payload);
    expect_frame(sock, MsgType::assign);
    send_frame(sock, MsgType::assign, {});
  });
  std::vector<Socket> workers;
  workers.push_back(listener.accept_one());
  CHECK_THROWS_WITH_AS(coordinate_fit(ds, g, {}, cfg, {}, workers),
                       doctest::Contains("worker 0"), NetworkError);
  quitter.join();
}
