#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "g2sqg/gradcheck.hpp"
#include "g2sqg/textgraph.hpp"
#include "support/examples.hpp"
#include "support/random_matrix.hpp"

using namespace g2s;
using g2s::testing::make_example;
using g2s::testing::random_matrix;
using Md = Matrix<double>;

TEST_CASE("static graph") {
  SUBCASE("dogs bark") {
    auto ex = make_example("d", {"dogs", "bark"}, {"dogs"});
    ex.dep_head = {1, -1};
    auto g = build_static_graph(ex);
    CHECK(g.n == 2);
    CHECK(g.edge_count() == 1);
    CHECK(g.has_edge(1, 0));
    CHECK_FALSE(g.has_edge(0, 1));
  }
  SUBCASE("two one-token sentences link both ways") {
    auto ex = make_example("s", {"Hi", "Bye"}, {"Hi"});
    ex.dep_head = {-1, -1};
    ex.sent_bounds = {{0, 1}, {1, 2}};
    auto g = build_static_graph(ex);
    CHECK(g.edge_count() == 2);
    CHECK(g.has_edge(0, 1));
    CHECK(g.has_edge(1, 0));
  }
  SUBCASE("fixture lists are valid, sorted and deduplicated") {
    for (const auto& ex : load_dataset(g2s::testing::data_path("fixture/fixture.jsonl"))) {
      auto g = build_static_graph(ex);
      CHECK(g.n == static_cast<int>(ex.size()));
      for (int v = 0; v < g.n; ++v) {
        const auto& in = g.incoming[static_cast<std::size_t>(v)];
        CHECK(std::is_sorted(in.begin(), in.end()));
        CHECK(std::adjacent_find(in.begin(), in.end()) == in.end());
        for (int u : in) {
          CHECK(u >= 0);
          CHECK(u < g.n);
          CHECK(g.has_edge(u, v));
        }
      }
      // rebuilding from the same heads and bounds is a pure function
      auto again = build_static_graph(ex);
      CHECK(again.incoming == g.incoming);
      CHECK(again.outgoing == g.outgoing);
    }
  }
  SUBCASE("mean aggregation rows") {
    auto ex = make_example("d", {"dogs", "bark", "loudly"}, {"dogs"});
    ex.dep_head = {1, -1, 1};
    auto g = build_static_graph(ex);
    Md in = mean_aggregation_matrix<double>(g, true);
    Md out = mean_aggregation_matrix<double>(g, false);
    CHECK(in(0, 0) == 0.5);
    CHECK(in(0, 1) == 0.5);
    CHECK(in(1, 1) == 1.0);  // the root has no incoming edges
    CHECK(out(1, 1) == doctest::Approx(1.0 / 3));
    CHECK(out(1, 2) == doctest::Approx(1.0 / 3));
  }
}

TEST_CASE("dynamic adjacency") {
  Rng rng(4);
  SUBCASE("3-node instance against an independent recomputation") {
    Md h(2, 3), u(2, 2);
    h << 0.5, -1.0, 2.0, 1.5, 0.25, -0.75;
    u << 1.0, -0.5, 0.3, 0.8;
    Tape<double> t;
    Md a = dynamic_adjacency(t.constant(h), t.constant(u)).value();
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        long double acc = 0;
        for (int r = 0; r < 2; ++r) {
          long double pi = 0, pj = 0;
          for (int c = 0; c < 2; ++c) {
            pi += static_cast<long double>(u(r, c)) * h(c, i);
            pj += static_cast<long double>(u(r, c)) * h(c, j);
          }
          acc += std::max(pi, 0.0L) * std::max(pj, 0.0L);
        }
        CHECK(std::abs(a(i, j) - static_cast<double>(acc)) < 1e-12);
      }
  }
  SUBCASE("symmetric, zero for U = 0") {
    Tape<double> t;
    auto h = t.constant(random_matrix(4, 6, rng));
    Md a = dynamic_adjacency(h, t.constant(random_matrix(3, 4, rng))).value();
    CHECK(a == a.transpose());
    CHECK(dynamic_adjacency(h, t.constant(Md::Zero(3, 4))).value().isZero(0));
    CHECK_THROWS_AS(dynamic_adjacency(h, t.constant(Md::Zero(3, 5))), ShapeError);
  }
}

TEST_CASE("knn sparsification") {
  Rng rng(8);
  CHECK(kDefaultNeighbours == 10);
  SUBCASE("row counts and sums over random inputs") {
    for (int trial = 0; trial < 50; ++trial) {
      const int n = 1 + static_cast<int>(rng.next() % 8);
      const int k = 1 + static_cast<int>(rng.next() % 10);
      Tape<double> t;
      Md raw = random_matrix(n, n, rng, 0, 3);
      auto g = sparsify_normalize(t.constant(Md(raw * raw.transpose())), k);
      const Md& in = g.incoming.value();
      const Md& out = g.outgoing.value();
      for (int r = 0; r < n; ++r) {
        CHECK((in.row(r).array() > 0).count() == std::min(k, n));
        CHECK(std::abs(in.row(r).sum() - 1) < 1e-6);
        CHECK(in(r, r) > 0);
        CHECK(std::abs(out.row(r).sum() - 1) < 1e-6);
        CHECK(out(r, r) > 0);
        for (int c = 0; c < n; ++c) {
          CHECK((in(r, c) > 0) == g.keep(r, c));
          CHECK((out(r, c) > 0) == g.keep(c, r));
        }
      }
    }
  }
  SUBCASE("K >= N keeps everything") {
    Tape<double> t;
    Md a = random_matrix(4, 4, rng);
    auto g = sparsify_normalize(t.constant(a), 4);
    CHECK(g.keep.all());
    Md expect = a;
    for (int r = 0; r < 4; ++r) expect.row(r) = a.row(r).array().exp() / a.row(r).array().exp().sum();
    CHECK((g.incoming.value() - expect).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("diagonal kept under ties, remaining ties to the lower index") {
    Md a = Md::Constant(4, 4, 1.0);
    Mask m = knn_mask(a, 2);
    for (int r = 0; r < 4; ++r) {
      CHECK(m(r, r));
      CHECK(m.row(r).count() == 2);
    }
    CHECK(m(0, 1));
    CHECK(m(1, 0));
    CHECK(m(2, 0));
    CHECK(m(3, 0));
    CHECK_THROWS_AS(knn_mask(a, 0), ConfigError);
  }
  SUBCASE("gradient reaches kept scores only") {
    const int n = 5, k = 2;
    Md a = random_matrix(n, n, rng);
    a = (a + a.transpose()).eval();
    const Md w_in = random_matrix(n, n, rng), w_out = random_matrix(n, n, rng);
    Tape<double> t;
    auto va = t.variable(a);
    auto g = sparsify_normalize(va, k);
    t.backward(add(sum(hadamard(g.incoming, t.constant(w_in))), sum(hadamard(g.outgoing, t.constant(w_out)))));
    const Md grad = t.grad(va);
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < n; ++c)
        if (!g.keep(r, c)) CHECK(grad(r, c) == 0.0);
    ParameterStore<double> p;
    p.set("a", a);
    auto report = grad_check(
        [&](Tape<double>& tape, const ParameterStore<double>& ps) {
          auto gg = sparsify_normalize(tape.parameter(ps, "a"), k);
          return add(sum(hadamard(gg.incoming, tape.constant(w_in))), sum(hadamard(gg.outgoing, tape.constant(w_out))));
        },
        p);
    CHECK(report.checked > 0);
    CHECK(report.max_rel_error < 1e-4);
  }
}
