#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "macs/losses.hpp"
#include "oracles.hpp"

using namespace macs;
using namespace macs::testing;
using ad::Tape;
using ad::Var;

namespace {

Tensor vec(std::vector<double> v) { return vec_of(std::move(v)); }

BuiltBatch random_batch(Tape& t, MemoryBank& memory, Rng& rng, int n_samples, int n_mem,
                        int zdim = 6) {
  return random_contrast_batch(t, memory, rng, n_samples, n_mem, zdim);
}

}  // namespace

TEST_CASE("supcon_term spot values") {
  SECTION("two identical same-label latents: lone positive is the whole denominator") {
    Tape t;
    Tensor z = vec({1.0, 0.0});
    std::vector<Var> latents{t.leaf(z), t.leaf(z)};
    std::vector<int> labels{0, 0};
    Var l = supcon_term(t, 0, latents, labels, 1.0);
    CHECK(t.val(l).v[0] == Catch::Approx(0.0).margin(1e-12));
  }
  SECTION("four alternating basis latents, labels (0,0,1,1), tau=1: L_0 = log(2+e)") {
    Tape t;
    std::vector<Var> latents{t.leaf(vec({1, 0})), t.leaf(vec({0, 1})), t.leaf(vec({1, 0})),
                             t.leaf(vec({0, 1}))};
    std::vector<int> labels{0, 0, 1, 1};
    Var l = supcon_term(t, 0, latents, labels, 1.0);
    CHECK(t.val(l).v[0] == Catch::Approx(std::log(2.0 + std::exp(1.0))).margin(1e-12));
    CHECK(t.val(l).v[0] == Catch::Approx(1.5514).margin(1e-4));
  }
  SECTION("tau -> infinity drives every C_ij to -log(R-1)") {
    Tape t;
    Rng rng(3);
    std::vector<Var> latents;
    std::vector<int> labels;
    for (int i = 0; i < 6; ++i) {
      latents.push_back(t.leaf(random_unit(rng, 4)));
      labels.push_back(i % 2);
    }
    Var l = supcon_term(t, 2, latents, labels, 1e9);
    CHECK(t.val(l).v[0] == Catch::Approx(std::log(5.0)).margin(1e-6));
  }
  SECTION("anchor without positives contributes zero and is flagged") {
    Tape t;
    std::vector<Var> latents{t.leaf(vec({1, 0})), t.leaf(vec({0, 1}))};
    std::vector<int> labels{0, 1};
    bool had = true;
    Var l = supcon_term(t, 0, latents, labels, 0.5, &had);
    CHECK_FALSE(had);
    CHECK(t.val(l).v[0] == 0.0);
  }
}

TEST_CASE("twin losses") {
  ContrastiveConfig cfg;
  cfg.tau = 0.3;
  SECTION("identical twin views of a lone distrusted sample give 0") {
    Tape t;
    MemoryBank mem(0);
    Rng rng(5);
    Tensor z = random_unit(rng, 4);
    std::vector<ViewLatent> views;
    for (int v = 0; v < 2; ++v) {
      ViewLatent vl;
      vl.z = t.leaf(z);
      vl.sample = 0;
      vl.label = 0;
      vl.trusted = false;
      views.push_back(vl);
    }
    ContrastScope scope(t, views, mem, cfg);
    int skipped = 0;
    Var l = loss_ag(scope, &skipped);
    CHECK(t.val(l).v[0] == Catch::Approx(0.0).margin(1e-12));
    CHECK(skipped == 0);
  }
  SECTION("oracle equality over random batches") {
    for (int seed = 0; seed < 10; ++seed) {
      Tape t;
      Rng rng(40 + seed);
      MemoryBank mem(8);
      auto batch = random_batch(t, mem, rng, 2 + static_cast<int>(rng.below(7)),
                                static_cast<int>(rng.below(9)));
      ContrastScope scope(t, batch.views, mem, cfg);
      int sk = 0;
      INFO("seed " << seed);
      CHECK(std::abs(t.val(loss_ag(scope, &sk)).v[0] - oracle_twin(batch.oracle, false, cfg.tau)) <
            1e-10);
      CHECK(std::abs(t.val(loss_sw(scope, &sk)).v[0] - oracle_twin(batch.oracle, true, cfg.tau)) <
            1e-10);
      CHECK(std::abs(t.val(loss_st(scope, &sk)).v[0] -
                     oracle_st(batch.oracle, cfg.tau, cfg.memory_positives)) < 1e-10);
    }
  }
  SECTION("decreasing twin similarity strictly increases the term") {
    ContrastiveConfig c2;
    c2.tau = 0.5;
    double prev = -1.0;
    for (double angle : {0.0, 0.4, 0.8, 1.2}) {
      Tape t;
      MemoryBank mem(0);
      std::vector<ViewLatent> views;
      auto add_view = [&](double a, int sample, bool trusted) {
        ViewLatent v;
        v.z = t.leaf(vec({std::cos(a), std::sin(a)}));
        v.sample = sample;
        v.label = 0;
        v.trusted = trusted;
        views.push_back(v);
      };
      add_view(0.0, 0, false);
      add_view(angle, 0, false);
      add_view(2.5, 1, false);  // fixed other sample
      add_view(2.7, 1, false);
      ContrastScope scope(t, views, mem, c2);
      int sk = 0;
      const double val = t.val(loss_ag(scope, &sk)).v[0];
      CHECK(val > prev);
      prev = val;
    }
  }
}

TEST_CASE("interpolation-supervised loss special cases") {
  ContrastiveConfig cfg;
  cfg.tau = 0.4;
  cfg.memory_positives = true;
  SECTION("lambda = 1 equals plain supcon over trusted views") {
    Tape t;
    MemoryBank mem(0);
    Rng rng(9);
    std::vector<ViewLatent> views;
    std::vector<Var> latents;
    std::vector<int> labels;
    for (int s = 0; s < 3; ++s) {
      for (int v = 0; v < 2; ++v) {
        ViewLatent vl;
        Tensor z = random_unit(rng, 4);
        vl.z = t.leaf(z);
        vl.sample = s;
        vl.label = s % 2;
        vl.trusted = true;
        vl.lambda = 1.0;
        vl.label_plus = s % 2;
        views.push_back(vl);
        latents.push_back(vl.z);
        labels.push_back(vl.label);
      }
    }
    ContrastScope scope(t, views, mem, cfg);
    int sk = 0;
    const double st = t.val(loss_st(scope, &sk)).v[0];
    double expected = 0.0;
    for (int i = 0; i < 6; ++i) expected += t.val(supcon_term(t, i, latents, labels, cfg.tau)).v[0];
    expected /= 6.0;
    CHECK(st == Catch::Approx(expected).margin(1e-10));
  }
  SECTION("y* == y+ makes the combination independent of lambda") {
    for (double lambda : {0.5, 0.75, 0.99}) {
      Tape t;
      MemoryBank mem(0);
      Rng rng(11);
      std::vector<ViewLatent> views;
      for (int s = 0; s < 3; ++s)
        for (int v = 0; v < 2; ++v) {
          ViewLatent vl;
          vl.z = t.leaf(random_unit(rng, 4));
          vl.sample = s;
          vl.label = 0;
          vl.trusted = true;
          vl.lambda = lambda;
          vl.label_plus = 0;
          views.push_back(vl);
        }
      ContrastScope scope(t, views, mem, cfg);
      int sk = 0;
      static double reference = -1.0;
      const double val = t.val(loss_st(scope, &sk)).v[0];
      if (lambda == 0.5) reference = val;
      CHECK(val == Catch::Approx(reference).margin(1e-12));
    }
  }
}

TEST_CASE("discriminative loss") {
  Tape t;
  SECTION("trusted, lambda 1, one-hot correct prediction scores 0") {
    DlSample s;
    s.probs = t.constant(vec({1.0, 0.0}));
    s.trusted = true;
    s.y_star = 0;
    s.y_plus = 0;
    s.lambda = 1.0;
    Var l = loss_dl(t, {s});
    CHECK(t.val(l).v[0] == Catch::Approx(0.0).margin(1e-10));
  }
  SECTION("trusted, lambda 0.5, disagreeing labels, uniform prediction: log 2") {
    DlSample s;
    s.probs = t.constant(vec({0.5, 0.5}));
    s.trusted = true;
    s.y_star = 0;
    s.y_plus = 1;
    s.lambda = 0.5;
    Var l = loss_dl(t, {s});
    CHECK(t.val(l).v[0] == Catch::Approx(std::log(2.0)).margin(1e-12));
  }
  SECTION("distrusted with uniform auxiliary target and uniform prediction: log 2") {
    DlSample s;
    s.probs = t.constant(vec({0.5, 0.5}));
    s.trusted = false;
    s.aux = vec({0.5, 0.5});
    Var l = loss_dl(t, {s});
    CHECK(t.val(l).v[0] == Catch::Approx(std::log(2.0)).margin(1e-12));
  }
  SECTION("empty batch contributes zero") {
    CHECK(t.val(loss_dl(t, {})).v[0] == 0.0);
  }
}

TEST_CASE("total loss sums its reported components") {
  Tape t;
  Rng rng(13);
  MemoryBank mem(4);
  auto batch = random_batch(t, mem, rng, 4, 4);
  std::vector<DlSample> dl;
  for (int s = 0; s < 4; ++s) {
    DlSample d;
    Tensor p({2});
    p[0] = 0.3 + 0.4 * rng.uniform();
    p[1] = 1.0 - p[0];
    d.probs = t.constant(p);
    d.trusted = s % 2 == 0;
    d.y_star = s % 2;
    d.y_plus = (s + 1) % 2;
    d.lambda = 0.7;
    d.aux = vec({0.6, 0.4});
    dl.push_back(d);
  }
  ContrastiveConfig cfg;
  LossParts parts = total_loss(t, batch.views, mem, dl, cfg);
  const double sum = t.val(parts.ag).v[0] + t.val(parts.sw).v[0] + t.val(parts.st).v[0] +
                     t.val(parts.dl).v[0];
  CHECK(t.val(parts.total).v[0] == Catch::Approx(sum).margin(1e-12));
  CHECK(t.val(parts.ag).v[0] >= 0.0);
  CHECK(t.val(parts.sw).v[0] >= 0.0);
  CHECK(t.val(parts.st).v[0] >= 0.0);
  CHECK(t.val(parts.dl).v[0] >= 0.0);
}

TEST_CASE("memory bank") {
  SECTION("capacity 0 stays empty") {
    MemoryBank mem(0);
    mem.push(vec({1, 0}), 0, true);
    CHECK(mem.size() == 0);
  }
  SECTION("FIFO eviction preserves order") {
    MemoryBank mem(3);
    for (int i = 0; i < 5; ++i) mem.push(vec({double(i), 0}), i % 2, true);
    REQUIRE(mem.size() == 3);
    CHECK(mem.entry(0).z[0] == 2.0);
    CHECK(mem.entry(1).z[0] == 3.0);
    CHECK(mem.entry(2).z[0] == 4.0);
  }
  SECTION("pushes store detached copies") {
    MemoryBank mem(2);
    Tensor z = vec({0.6, 0.8});
    mem.push(z, 1, true);
    z[0] = -1.0;  // mutate the source after pushing
    CHECK(mem.entry(0).z[0] == 0.6);
  }
  SECTION("memory entries receive no gradient and do not propagate") {
    Tape t;
    MemoryBank mem(4);
    Rng rng(17);
    auto batch = random_batch(t, mem, rng, 3, 4);
    ContrastiveConfig cfg;
    ContrastScope scope(t, batch.views, mem, cfg);
    int sk = 0;
    Var l = ad::add(loss_ag(scope, &sk), ad::add(loss_sw(scope, &sk), loss_st(scope, &sk)));
    t.backward(l);
    // Every view latent is a leaf; some gradient must arrive there...
    double view_grad = 0.0;
    for (const ViewLatent& v : batch.views)
      for (double g : t.grad(v.z).v) view_grad += std::abs(g);
    CHECK(view_grad > 0.0);
    // ...while the memory constants stay gradient-free by construction.
    // (Structural detachment: they enter the tape as no-grad constants.)
  }
  SECTION("M=0 reduces losses to batch-only") {
    Tape t1, t2;
    Rng rng1(19), rng2(19);
    MemoryBank mem0(0), mem8(8);
    auto b1 = random_batch(t1, mem0, rng1, 4, 0);
    auto b2 = random_batch(t2, mem8, rng2, 4, 0);  // same draws, no memory pushed
    ContrastiveConfig cfg;
    ContrastScope s1(t1, b1.views, mem0, cfg);
    ContrastScope s2(t2, b2.views, mem8, cfg);
    int sk = 0;
    CHECK(t1.val(loss_st(s1, &sk)).v[0] == Catch::Approx(t2.val(loss_st(s2, &sk)).v[0]));
  }
}

TEST_CASE("all-trusted batches leave the augmentation term empty") {
  // With clean labels and everything trusted, L^Sw and L^St cover every
  // sample while L^Ag has no anchors at all.
  Tape t;
  MemoryBank mem(0);
  Rng rng(23);
  std::vector<ViewLatent> views;
  for (int s = 0; s < 4; ++s)
    for (int v = 0; v < 2; ++v) {
      ViewLatent vl;
      vl.z = t.leaf(random_unit(rng, 4));
      vl.sample = s;
      vl.label = s % 2;
      vl.trusted = true;
      vl.lambda = 0.8;
      vl.label_plus = (s + 1) % 2;
      views.push_back(vl);
    }
  ContrastiveConfig cfg;
  ContrastScope scope(t, views, mem, cfg);
  int sk_ag = 0, sk_sw = 0, sk_st = 0;
  CHECK(t.val(loss_ag(scope, &sk_ag)).v[0] == 0.0);
  CHECK(sk_ag == 0);
  CHECK(t.val(loss_sw(scope, &sk_sw)).v[0] > 0.0);
  CHECK(sk_sw == 0);
  CHECK(t.val(loss_st(scope, &sk_st)).v[0] > 0.0);
  CHECK(sk_st == 0);
}

TEST_CASE("memory entries remember their blend context") {
  MemoryBank mem(2);
  mem.push(vec({1.0, 0.0}), 1, true, 0.65);
  mem.push(vec({0.0, 1.0}), 0, false);
  CHECK(mem.entry(0).lambda_context == 0.65);
  CHECK(mem.entry(1).lambda_context == 1.0);
}
