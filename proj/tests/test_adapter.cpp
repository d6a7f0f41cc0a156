// SPDX-License-Identifier: Apache-2.0
//
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>

#include "eva/adapter.hpp"
#include "eva/linalg.hpp"
#include "eva/svdstream.hpp"
#include "test_util.hpp"

using namespace eva;

namespace {

struct Fixture {
  ToyNetwork net;
  std::vector<SvdState> states;
  RankAllocation alloc;
};

// single-layer net plus a converged state whose v is orthonormal
Fixture make_fixture(std::size_t k = 6, std::size_t d = 8, std::size_t rank = 2, std::size_t tracked = 4) {
  Fixture f;
  f.net.input_dim = d;
  f.net.output_dim = k;
  DenseBlock block;
  block.layer.name = "fc0";
  block.layer.w = testutil::random_matrix(k, d, 11);
  block.act = Activation::none;
  f.net.blocks.emplace_back(std::move(block));

  StreamConfig cfg;
  cfg.r = tracked;
  SvdState s = make_svd_state("fc0", 0, d, cfg);
  s = svd_update(s, testutil::random_matrix(12, d, 21), cfg);
  s = svd_update(s, testutil::random_matrix(12, d, 22), cfg);
  s.converged = true;
  f.states.push_back(std::move(s));

  f.alloc.ranks["fc0"] = rank;
  f.alloc.budget = rank;
  return f;
}

bool bytes_equal(const Matrix& a, const Matrix& b) {
  return a.same_shape(b) &&
         std::memcmp(a.data().data(), b.data().data(), a.data().size() * sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("init_adapters: eva rows are orthonormal and B is zero") {
  Fixture f = make_fixture();
  const AdapterMap adapters = init_adapters(f.net, f.states, f.alloc, {InitKind::eva, 0, 0.5}, 1.0);
  const LoraAdapter& ad = adapters.at("fc0");
  CHECK(ad.rank == 2);
  CHECK(ad.scaling == 0.5);
  const Matrix gram = matmul_nt(ad.a, ad.a);
  CHECK(max_abs_diff(gram, Matrix::identity(2)) < 1e-8);
  CHECK(max_abs(ad.b) == 0.0);
  CHECK(ad.a == take_rows(f.states[0].v, 2));
}

TEST_CASE("init_adapters: rotation preserves norms and Gram matrix") {
  Fixture f = make_fixture();
  const AdapterMap eva_map = init_adapters(f.net, f.states, f.alloc, {InitKind::eva, 7, 0.5}, 1.0);
  const AdapterMap rot_map = init_adapters(f.net, f.states, f.alloc, {InitKind::eva_rot, 7, 0.5}, 1.0);
  const Matrix& base = eva_map.at("fc0").a;
  const Matrix& rotated = rot_map.at("fc0").a;
  for (std::size_t i = 0; i < base.rows(); ++i)
    CHECK(std::abs(l2_norm(base.row(i)) - l2_norm(rotated.row(i))) < 1e-10);
  CHECK(max_abs_diff(matmul_nt(base, base), matmul_nt(rotated, rotated)) < 1e-10);
  const Matrix gram = matmul_nt(rotated, rotated);
  CHECK(max_abs_diff(gram, Matrix::identity(2)) < 1e-8);
  // the rotation does move the directions
  CHECK(max_abs_diff(base, rotated) > 1e-3);
}

TEST_CASE("init_adapters: whitening row norms follow the spectrum") {
  Fixture f = make_fixture();
  f.states[0].sigma = {2.0, 1.0, 0.5, 0.25};
  f.states[0].samples_seen = 5;  // M - 1 = 4
  const AdapterMap adapters = init_adapters(f.net, f.states, f.alloc, {InitKind::eva_whiten, 0, 0.5}, 1.0);
  const Matrix& a = adapters.at("fc0").a;
  // (sigma_j^2 / 4)^(-0.5) over unit rows: 1.0 and 2.0
  CHECK(l2_norm(a.row(0)) == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(l2_norm(a.row(1)) == doctest::Approx(2.0).epsilon(1e-10));

  // exponent 1.0 squares the scale
  const AdapterMap strong = init_adapters(f.net, f.states, f.alloc, {InitKind::eva_whiten, 0, 1.0}, 1.0);
  CHECK(l2_norm(strong.at("fc0").a.row(1)) == doctest::Approx(4.0).epsilon(1e-10));
}

TEST_CASE("init_adapters: whitening preserves directions") {
  Fixture f = make_fixture();
  const Matrix eva_a = init_adapters(f.net, f.states, f.alloc, {InitKind::eva, 0, 0.5}, 1.0).at("fc0").a;
  const Matrix whiten_a = init_adapters(f.net, f.states, f.alloc, {InitKind::eva_whiten, 0, 0.5}, 1.0).at("fc0").a;
  for (std::size_t i = 0; i < eva_a.rows(); ++i) {
    const double ne = l2_norm(eva_a.row(i));
    const double nw = l2_norm(whiten_a.row(i));
    for (std::size_t j = 0; j < eva_a.cols(); ++j)
      CHECK(std::abs(eva_a.at(i, j) / ne - whiten_a.at(i, j) / nw) < 1e-10);
  }
}

TEST_CASE("init_adapters: permutation preserves the row multiset") {
  Fixture f = make_fixture(6, 8, 4, 4);
  const Matrix eva_a = init_adapters(f.net, f.states, f.alloc, {InitKind::eva, 3, 0.5}, 1.0).at("fc0").a;
  const Matrix perm_a = init_adapters(f.net, f.states, f.alloc, {InitKind::eva_perm, 3, 0.5}, 1.0).at("fc0").a;
  // every eva row appears exactly once among the permuted rows
  std::vector<bool> used(eva_a.rows(), false);
  for (std::size_t i = 0; i < perm_a.rows(); ++i) {
    bool found = false;
    for (std::size_t j = 0; j < eva_a.rows(); ++j) {
      if (used[j]) continue;
      if (std::equal(perm_a.row(i).begin(), perm_a.row(i).end(), eva_a.row(j).begin())) {
        used[j] = true;
        found = true;
        break;
      }
    }
    CHECK(found);
  }
  // same seed reproduces the same permutation
  const Matrix again = init_adapters(f.net, f.states, f.alloc, {InitKind::eva_perm, 3, 0.5}, 1.0).at("fc0").a;
  CHECK(perm_a == again);
}

TEST_CASE("init_adapters: lora_redist keeps the allocation but randomizes directions") {
  Fixture f = make_fixture();
  const AdapterMap m = init_adapters(f.net, f.states, f.alloc, {InitKind::lora_redist, 5, 0.5}, 1.0);
  const LoraAdapter& ad = m.at("fc0");
  CHECK(ad.rank == 2);
  const double bound = 1.0 / std::sqrt(8.0);
  for (double v : ad.a.data()) CHECK(std::abs(v) <= bound);
}

TEST_CASE("init_adapters: weight_svd takes directions from the host weights") {
  Fixture f = make_fixture();
  const AdapterMap m = init_adapters(f.net, {}, f.alloc, {InitKind::weight_svd, 0, 0.5}, 1.0);
  const Matrix& w = f.net.find_layer("fc0")->w;
  const SvdResult ref = svd_truncated(w, 2);
  CHECK(max_abs_diff(m.at("fc0").a, take_rows(ref.vt, 2)) < 1e-12);
}

TEST_CASE("init_adapters: zero-rank layers get no adapter, excess rank is an error") {
  Fixture f = make_fixture();
  f.alloc.ranks["fc0"] = 0;
  CHECK(init_adapters(f.net, f.states, f.alloc, {InitKind::eva, 0, 0.5}, 1.0).empty());

  f.alloc.ranks["fc0"] = 5;  // only 4 tracked
  CHECK_THROWS_AS(init_adapters(f.net, f.states, f.alloc, {InitKind::eva, 0, 0.5}, 1.0), std::invalid_argument);
}

TEST_CASE("adapter_forward: zero B leaves the base output untouched") {
  Fixture f = make_fixture();
  const AdapterMap m = init_adapters(f.net, f.states, f.alloc, {InitKind::eva, 0, 0.5}, 1.0);
  const Matrix& w = f.net.find_layer("fc0")->w;
  const Matrix x = testutil::random_matrix(1, 8, 91);
  const auto h = adapter_forward(w, m.at("fc0"), x.row(0));
  const auto base = matvec(w, x.row(0));
  CHECK(h == base);
}

TEST_CASE("adapter_forward: identity composition") {
  // W = 0, A = I_d, B = I, alpha = r  =>  h = x
  const std::size_t d = 4;
  LoraAdapter ad;
  ad.layer = "L";
  ad.a = Matrix::identity(d);
  ad.b = Matrix::identity(d);
  ad.rank = d;
  ad.alpha = static_cast<double>(d);
  ad.scaling = 1.0;
  const Matrix w(d, d);
  const Matrix x = testutil::random_matrix(1, d, 77);
  const auto h = adapter_forward(w, ad, x.row(0));
  for (std::size_t i = 0; i < d; ++i) CHECK(h[i] == doctest::Approx(x.at(0, i)).epsilon(1e-14));
}

TEST_CASE("adapter_forward: matches the dense oracle") {
  const Matrix w = testutil::random_matrix(3, 2, 31);
  LoraAdapter ad;
  ad.layer = "L";
  ad.a = testutil::random_matrix(1, 2, 32);
  ad.b = testutil::random_matrix(3, 1, 33);
  ad.rank = 1;
  ad.alpha = 2.0;
  ad.scaling = 2.0;
  const Matrix x = testutil::random_matrix(1, 2, 34);
  const auto h = adapter_forward(w, ad, x.row(0));
  // dense route: (W + scaling * B A) x
  Matrix dense = w;
  add_scaled_in_place(dense, matmul(ad.b, ad.a), ad.scaling);
  const auto expect = matvec(dense, x.row(0));
  for (std::size_t i = 0; i < 3; ++i) CHECK(h[i] == doctest::Approx(expect[i]).epsilon(1e-13));
}

TEST_CASE("merge: zero B and zero alpha leave W unchanged") {
  Fixture f = make_fixture();
  const Matrix& w = f.net.find_layer("fc0")->w;
  AdapterMap m = init_adapters(f.net, f.states, f.alloc, {InitKind::eva, 0, 0.5}, 1.0);
  CHECK(merge(w, m.at("fc0")) == w);

  LoraAdapter alpha0 = m.at("fc0");
  alpha0.b = testutil::random_matrix(6, 2, 55);
  alpha0.alpha = 0.0;
  alpha0.scaling = 0.0;
  CHECK(merge(w, alpha0) == w);
}

TEST_CASE("merge: equivalent to adapter_forward after updates") {
  Fixture f = make_fixture();
  AdapterMap m = init_adapters(f.net, f.states, f.alloc, {InitKind::eva, 0, 0.5}, 1.0);
  LoraAdapter& ad = m.at("fc0");
  // simulate training updates on both factors
  ad.b = testutil::random_matrix(6, 2, 61);
  add_scaled_in_place(ad.a, testutil::random_matrix(2, 8, 62), 0.1);
  const Matrix& w = f.net.find_layer("fc0")->w;
  const Matrix merged = merge(w, ad);
  for (int rep = 0; rep < 100; ++rep) {
    const Matrix x = testutil::random_matrix(1, 8, 700 + rep);
    const auto via_adapter = adapter_forward(w, ad, x.row(0));
    const auto via_merged = matvec(merged, x.row(0));
    for (std::size_t i = 0; i < via_adapter.size(); ++i)
      CHECK(std::abs(via_adapter[i] - via_merged[i]) < 1e-10);
  }
}

TEST_CASE("zero-init equivalence: every mode starts bit-identical to the base") {
  Fixture f = make_fixture();
  const Matrix x = testutil::random_matrix(5, 8, 80);
  const Matrix base = forward(f.net, x);
  for (InitKind kind : {InitKind::eva, InitKind::eva_whiten, InitKind::eva_perm, InitKind::eva_rot,
                        InitKind::lora_redist, InitKind::weight_svd, InitKind::random}) {
    const AdapterMap m = init_adapters(f.net, f.states, f.alloc, {kind, 13, 0.5}, 1.0);
    const AdapterViews views = make_views(m);
    const Matrix adapted = forward(f.net, x, &views);
    CHECK(bytes_equal(base, adapted));
  }
}

TEST_CASE("init mode validation") {
  InitMode bad;
  bad.whiten_exponent = 0.7;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  CHECK_THROWS_AS(parse_init_kind("evva"), std::invalid_argument);
  CHECK(parse_init_kind("eva_rot") == InitKind::eva_rot);
  CHECK(init_kind_name(InitKind::lora_redist) == "lora_redist");
}
