// SPDX-License-Identifier: Apache-2.0
//
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <memory>
#include <numeric>

#include "eva/linalg.hpp"
#include "eva/svdstream.hpp"
#include "test_util.hpp"

using namespace eva;

namespace {

StreamConfig small_cfg(std::size_t r, double rho) {
  StreamConfig cfg;
  cfg.r = r;
  cfg.rho = rho;
  return cfg;
}

// provider replaying a fixed list of batches
BatchProvider replay(std::vector<Batch> batches) {
  auto idx = std::make_shared<std::size_t>(0);
  auto list = std::make_shared<std::vector<Batch>>(std::move(batches));
  return [idx, list]() -> std::optional<Batch> {
    if (*idx >= list->size()) return std::nullopt;
    return (*list)[(*idx)++];
  };
}

ToyNetwork identity_tap_net(std::size_t d) {
  ToyNetwork net;
  net.input_dim = d;
  net.output_dim = d;
  DenseBlock block;
  block.layer.name = "fc0";
  block.layer.w = Matrix::identity(d);
  block.act = Activation::none;
  net.blocks.emplace_back(std::move(block));
  return net;
}

double sigma_sq_sum(const SvdState& s) {
  double t = 0.0;
  for (double v : s.sigma) t += v * v;
  return t;
}

}  // namespace

TEST_CASE("svd_update: first update equals plain truncated SVD") {
  const StreamConfig cfg = small_cfg(2, 1.0);
  SvdState s = make_svd_state("L", 0, 5, cfg);
  const Matrix x = testutil::random_matrix(6, 5, 1);
  s = svd_update(s, x, cfg);
  const SvdResult ref = svd_truncated(x, 2);
  CHECK(s.v == ref.vt);
  CHECK(s.sigma == ref.sigma);
  CHECK(s.samples_seen == 6);
  CHECK(s.m == 2);
}

TEST_CASE("svd_update: all-zero batch changes nothing") {
  const StreamConfig cfg = small_cfg(2, 1.0);
  SvdState s = make_svd_state("L", 0, 5, cfg);
  s = svd_update(s, testutil::random_matrix(6, 5, 2), cfg);
  const auto sigma_before = s.sigma;
  s = svd_update(s, Matrix(4, 5), cfg);
  for (std::size_t i = 0; i < sigma_before.size(); ++i)
    CHECK(std::abs(s.sigma[i] - sigma_before[i]) < 1e-10);
  for (double sim : s.last_similarity) CHECK(sim == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(s.samples_seen == 10);
}

TEST_CASE("svd_update: two updates match the concatenation SVD") {
  const StreamConfig cfg = small_cfg(4, 1.0);  // m = 4 >= rank of the stacked stream
  const Matrix x1 = testutil::random_low_rank(6, 8, 2, 11);
  const Matrix x2 = testutil::random_low_rank(5, 8, 2, 12);
  SvdState s = make_svd_state("L", 0, 8, cfg);
  s = svd_update(s, x1, cfg);
  s = svd_update(s, x2, cfg);

  const Matrix concat = vstack(x1, x2);
  const SvdResult ref = svd_truncated(concat, 4);
  for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(s.sigma[i] - ref.sigma[i]) < 1e-8 * std::max(1.0, ref.sigma[0]));
  // spans agree: compare the dominant components (rank 4 total)
  const auto angles = principal_angles(take_rows(s.v, 4), take_rows(ref.vt, 4));
  CHECK(angles.back() < 1e-6);
}

TEST_CASE("svd_update: rejects converged state, empty and mismatched batches") {
  const StreamConfig cfg = small_cfg(1, 1.0);
  SvdState s = make_svd_state("L", 0, 4, cfg);
  CHECK_THROWS_AS(svd_update(s, testutil::random_matrix(3, 5, 3), cfg), std::invalid_argument);
  s = svd_update(s, testutil::random_matrix(3, 4, 3), cfg);
  s.converged = true;
  CHECK_THROWS_AS(svd_update(s, testutil::random_matrix(3, 4, 4), cfg), std::logic_error);
}

TEST_CASE("check_convergence: thresholds") {
  const StreamConfig cfg = small_cfg(3, 1.0);
  SvdState s = make_svd_state("L", 0, 8, cfg);
  s.updates = 2;
  s.m = s.m_target;
  s.last_similarity = {1.0, 1.0, 1.0};
  CHECK(check_convergence(s, 0.99));
  s.last_similarity = {1.0, 0.98, 1.0};
  CHECK_FALSE(check_convergence(s, 0.99));
  s.updates = 1;
  CHECK_THROWS_AS(check_convergence(s, 0.99), std::logic_error);
}

TEST_CASE("check_convergence: first-r-only flag narrows the scope") {
  StreamConfig cfg = small_cfg(1, 2.0);  // tracks 2, base rank 1
  SvdState s = make_svd_state("L", 0, 8, cfg);
  s.updates = 3;
  s.m = 2;
  s.last_similarity = {1.0, 0.5};
  CHECK_FALSE(check_convergence(s, 0.99, false, cfg.r));
  CHECK(check_convergence(s, 0.99, true, cfg.r));
}

TEST_CASE("stationary rank-1 stream converges after exactly two updates") {
  const StreamConfig cfg = small_cfg(1, 1.0);
  const Matrix base = testutil::random_low_rank(4, 6, 1, 21);
  SvdState s = make_svd_state("L", 0, 6, cfg);
  s = svd_update(s, base, cfg);
  CHECK(s.updates == 1);  // cannot be checked yet
  s = svd_update(s, base, cfg);
  CHECK(check_convergence(s, 0.99));
}

TEST_CASE("run_initialization_pass: rank-1 task converges with T = 2") {
  const StreamConfig cfg = small_cfg(1, 1.0);
  ToyNetwork net = identity_tap_net(6);
  const Matrix row = testutil::random_low_rank(4, 6, 1, 31);
  std::vector<Batch> batches;
  for (int i = 0; i < 5; ++i) batches.push_back({row, Matrix(4, 6), std::nullopt});
  const InitPassResult r = run_initialization_pass(net, replay(batches), cfg);
  CHECK(r.all_converged);
  CHECK(r.batches_consumed == 2);
  CHECK(r.states[0].converged);
}

TEST_CASE("run_initialization_pass: delta stops once half the layers converge") {
  StreamConfig cfg = small_cfg(2, 1.0);
  cfg.delta = 0.5;
  cfg.max_batches = 50;

  // 4-layer bottleneck net: fc0 sees fresh random 6-d data every batch and
  // keeps drifting, while the 1-wide layers behind the bottleneck see
  // rank-1 streams and converge immediately
  ToyNetwork net;
  net.input_dim = 6;
  net.output_dim = 6;
  auto add = [&](const char* name, Matrix w) {
    DenseBlock block;
    block.layer.name = name;
    block.layer.w = std::move(w);
    block.act = Activation::none;
    net.blocks.emplace_back(std::move(block));
  };
  add("fc0", testutil::random_matrix(1, 6, 40));
  add("fc1", testutil::random_matrix(1, 1, 41));
  add("fc2", testutil::random_matrix(6, 1, 42));
  add("fc3", testutil::random_matrix(6, 6, 43));

  auto counter = std::make_shared<int>(0);
  BatchProvider provider = [counter]() -> std::optional<Batch> {
    return Batch{testutil::random_matrix(4, 6, 60 + (*counter)++), Matrix(4, 6), std::nullopt};
  };
  const InitPassResult r = run_initialization_pass(net, provider, cfg);
  CHECK(r.batches_consumed == 2);  // fc1 and fc2 converge on the second batch
  CHECK_FALSE(r.states[0].converged);  // fc0 still drifting, flagged unconverged
  std::size_t converged = 0;
  for (const auto& s : r.states) converged += s.converged;
  CHECK(converged >= 2);
  CHECK_FALSE(r.all_converged);
}

TEST_CASE("run_initialization_pass: max_batches cutoff flags states unconverged") {
  StreamConfig cfg = small_cfg(2, 1.0);
  cfg.max_batches = 1;
  ToyNetwork net = identity_tap_net(5);
  auto counter = std::make_shared<int>(0);
  BatchProvider provider = [counter]() -> std::optional<Batch> {
    return Batch{testutil::random_matrix(4, 5, 70 + (*counter)++), Matrix(4, 5), std::nullopt};
  };
  const InitPassResult r = run_initialization_pass(net, provider, cfg);
  CHECK(r.batches_consumed == 1);
  CHECK_FALSE(r.all_converged);
  CHECK_FALSE(r.states[0].converged);
  // v equals the first-batch SVD
  CHECK(r.states[0].updates == 1);
}

TEST_CASE("run_initialization_pass: fully masked batches are skipped") {
  StreamConfig cfg = small_cfg(1, 1.0);
  ToyNetwork net = identity_tap_net(6);
  const Matrix rows = testutil::random_low_rank(4, 6, 1, 90);
  std::vector<Batch> batches;
  batches.push_back({rows, Matrix(4, 6), std::vector<std::uint8_t>{0, 0, 0, 0}});
  batches.push_back({rows, Matrix(4, 6), std::nullopt});
  batches.push_back({rows, Matrix(4, 6), std::vector<std::uint8_t>{1, 1, 0, 0}});
  const InitPassResult r = run_initialization_pass(net, replay(batches), cfg);
  CHECK(r.batches_consumed == 2);  // the all-masked batch did not count
  CHECK(r.all_converged);
  CHECK(r.states[0].samples_seen == 6);  // 4 + 2 unmasked rows
}

TEST_CASE("run_initialization_pass: stream exhausted before any update") {
  StreamConfig cfg = small_cfg(1, 1.0);
  ToyNetwork net = identity_tap_net(4);
  CHECK_THROWS_AS(run_initialization_pass(net, replay({}), cfg), std::runtime_error);
}

TEST_CASE("run_initialization_pass: all layers frozen is an error") {
  StreamConfig cfg = small_cfg(1, 1.0);
  ToyNetwork net = identity_tap_net(4);
  net.find_layer("fc0")->frozen = true;
  CHECK_THROWS_AS(run_initialization_pass(net, replay({}), cfg), std::invalid_argument);
}

TEST_CASE("incremental equals batch SVD for rank-limited streams") {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    const StreamConfig cfg = small_cfg(5, 1.0);
    SvdState s = make_svd_state("L", 0, 10, cfg);
    Matrix concat;
    for (int b = 0; b < 4; ++b) {
      // every batch drawn from the same rank-3 row space
      Matrix coeff = testutil::random_matrix(6, 3, 1000 + 10 * seed + b);
      Matrix basis = testutil::random_matrix(3, 10, 777 + seed);
      Matrix x = matmul(coeff, basis);
      concat = concat.empty() ? x : vstack(concat, x);
      s = svd_update(s, x, cfg);
    }
    const SvdResult ref = svd_truncated(concat, 5);
    for (std::size_t i = 0; i < 5; ++i)
      CHECK(std::abs(s.sigma[i] - ref.sigma[i]) <= 1e-8 * std::max(ref.sigma[0], 1.0));
    const auto angles = principal_angles(take_rows(s.v, 3), take_rows(ref.vt, 3));
    CHECK(angles.back() < 1e-6);
  }
}

TEST_CASE("sigma mass never decreases across updates") {
  const StreamConfig cfg = small_cfg(3, 1.0);
  SvdState s = make_svd_state("L", 0, 8, cfg);
  double prev = 0.0;
  for (int b = 0; b < 8; ++b) {
    s = svd_update(s, testutil::random_matrix(5, 8, 2000 + b), cfg);
    const double mass = sigma_sq_sum(s);
    CHECK(mass >= prev - 1e-9);
    prev = mass;
  }
}

TEST_CASE("randomized update path approximates the exact path") {
  StreamConfig exact_cfg = small_cfg(2, 1.0);
  StreamConfig rand_cfg = exact_cfg;
  rand_cfg.use_randomized = true;
  const Matrix x1 = testutil::random_low_rank(12, 16, 2, 5);
  const Matrix x2 = testutil::random_low_rank(12, 16, 2, 6);
  SvdState a = make_svd_state("L", 0, 16, exact_cfg);
  SvdState b = make_svd_state("L", 0, 16, rand_cfg);
  for (const Matrix* x : {&x1, &x2}) {
    a = svd_update(a, *x, exact_cfg);
    b = svd_update(b, *x, rand_cfg);
  }
  for (std::size_t i = 0; i < 2; ++i) CHECK(std::abs(a.sigma[i] - b.sigma[i]) <= 1e-6 * a.sigma[0]);
}

TEST_CASE("centering flag subtracts per-batch column means") {
  StreamConfig cfg = small_cfg(2, 1.0);
  cfg.center_activations = true;
  // constant batch: after centering everything is zero, so sigma stays zero
  Matrix constant(4, 5);
  for (double& v : constant.data()) v = 3.5;
  SvdState s = make_svd_state("L", 0, 5, cfg);
  s = svd_update(s, constant, cfg);
  CHECK(s.sigma[0] < 1e-12);
}
