#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "macs/model.hpp"
#include "macs/projector.hpp"

using namespace macs;
using ad::Tape;
using ad::Var;

namespace {
ProjectorVars lift_projector(Tape& t, const ProjectorParams& p) {
  ProjectorVars v;
  v.wl1 = t.leaf(p.wl1);
  v.bl1 = t.leaf(p.bl1);
  v.wl2 = t.leaf(p.wl2);
  v.bl2 = t.leaf(p.bl2);
  v.wc1 = t.leaf(p.wc1);
  v.bc1 = t.leaf(p.bc1);
  v.wc2 = t.leaf(p.wc2);
  v.bc2 = t.leaf(p.bc2);
  return v;
}

ModelParams toy_model() {
  EncoderConfig e{4, 0, 2, 5};
  ProjectorConfig pc{16, 8};
  return init_params(e, pc, 5);
}
}  // namespace

TEST_CASE("latent head emits unit vectors") {
  ModelParams m = toy_model();
  Rng rng(3);
  for (int k = 0; k < 20; ++k) {
    Tape t;
    ProjectorVars v = lift_projector(t, m.proj);
    Tensor emb({m.proj.wl1.dim(1)});
    for (double& x : emb.v) x = rng.gaussian();
    LatentResult r = latent(t, v, t.constant(emb));
    REQUIRE(r.ok);
    double norm = 0.0;
    for (double x : t.val(r.z).v) norm += x * x;
    CHECK(std::sqrt(norm) == Catch::Approx(1.0).margin(1e-10));
  }
}

TEST_CASE("zero latent head flags the sample instead of dividing by zero") {
  ModelParams m = toy_model();
  for (double& v : m.proj.wl2.v) v = 0.0;
  for (double& v : m.proj.bl2.v) v = 0.0;
  Tape t;
  ProjectorVars v = lift_projector(t, m.proj);
  Tensor emb = Tensor::full({m.proj.wl1.dim(1)}, 0.3);
  LatentResult r = latent(t, v, t.constant(emb));
  CHECK_FALSE(r.ok);
  for (double x : t.val(r.z).v) CHECK(x == 0.0);
}

TEST_CASE("identical embeddings give identical latents") {
  ModelParams m = toy_model();
  Tensor emb = Tensor::full({m.proj.wl1.dim(1)}, 0.25);
  Tape t1, t2;
  LatentResult a = latent(t1, lift_projector(t1, m.proj), t1.constant(emb));
  LatentResult b = latent(t2, lift_projector(t2, m.proj), t2.constant(emb));
  CHECK(bitwise_equal(t1.val(a.z), t2.val(b.z)));
}

TEST_CASE("classifier softmax contracts") {
  ModelParams m = toy_model();
  SECTION("zero logits give (0.5, 0.5)") {
    for (double& v : m.proj.wc2.v) v = 0.0;
    for (double& v : m.proj.bc2.v) v = 0.0;
    Tape t;
    Tensor emb = Tensor::full({m.proj.wc1.dim(1)}, 0.7);
    const Tensor& p = t.val(classify_probs(t, lift_projector(t, m.proj), t.constant(emb)));
    CHECK(p[0] == Catch::Approx(0.5));
    CHECK(p[1] == Catch::Approx(0.5));
  }
  SECTION("probabilities in (0,1) summing to 1") {
    Rng rng(9);
    for (int k = 0; k < 20; ++k) {
      Tape t;
      Tensor emb({m.proj.wc1.dim(1)});
      for (double& x : emb.v) x = rng.gaussian();
      const Tensor& p = t.val(classify_probs(t, lift_projector(t, m.proj), t.constant(emb)));
      CHECK(p[0] > 0.0);
      CHECK(p[0] < 1.0);
      CHECK(p[0] + p[1] == Catch::Approx(1.0).margin(1e-12));
    }
  }
  SECTION("argmax invariant under adding a constant to both logits") {
    Rng rng(11);
    Tensor emb({m.proj.wc1.dim(1)});
    for (double& x : emb.v) x = rng.gaussian();
    Tape t;
    ProjectorVars v = lift_projector(t, m.proj);
    const Tensor& base = t.val(classify_probs(t, v, t.constant(emb)));
    ModelParams shifted = toy_model();
    shifted.proj.bc2[0] += 3.5;
    shifted.proj.bc2[1] += 3.5;
    Tape t2;
    const Tensor& moved = t2.val(classify_probs(t2, lift_projector(t2, shifted.proj), t2.constant(emb)));
    CHECK((base[0] > base[1]) == (moved[0] > moved[1]));
  }
}

TEST_CASE("checkpoints reload bit-exactly") {
  ModelParams m = toy_model();
  auto dir = std::filesystem::temp_directory_path() / "macs_test_ckpt";
  std::filesystem::create_directories(dir);
  save_checkpoint(m, dir / "p.bin");
  ModelParams n;
  load_checkpoint(n, dir / "p.bin");
  auto a = named_params(m);
  auto b = named_params(n);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].name == b[i].name);
    REQUIRE(bitwise_equal(*a[i].tensor, *b[i].tensor));
  }
  std::filesystem::remove_all(dir);
}
