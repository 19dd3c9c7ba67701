#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <algorithm>
#include <random>

#include <json.hpp>

#include "csfn/fusion.hpp"
#include "csfn/grad_check.hpp"
#include "support.hpp"

using namespace csfn;
using testing::random_tensor;

namespace {

struct Attn {
  ParameterStore store;
  AttentionParams p;
  Attn(std::size_t d, std::mt19937_64& rng, Real scale = 0.5) { p = AttentionParams::create(store, "a", d, scale, rng); }
};

Tensor columns(const Tensor& t, std::size_t begin, std::size_t count) {
  Tensor out(t.rows(), count);
  for (std::size_t r = 0; r < t.rows(); ++r)
    for (std::size_t c = 0; c < count; ++c) out(r, c) = t(r, begin + c);
  return out;
}

Tensor transpose(const Tensor& t) {
  Tensor out(t.cols(), t.rows());
  for (std::size_t r = 0; r < t.rows(); ++r)
    for (std::size_t c = 0; c < t.cols(); ++c) out(c, r) = t(r, c);
  return out;
}

// Scaled dot-product attention written out per head with plain loops.
Tensor reference_attention(const Tensor& y, const Tensor& z, const AttentionParams& p, std::size_t heads,
                           const Tensor* mask, std::vector<Tensor>* weights = nullptr) {
  using testing::reference_matmul;
  const std::size_t d = y.cols(), dh = d / heads;
  Tensor joined(y.rows(), d);
  for (std::size_t h = 0; h < heads; ++h) {
    const Tensor q = reference_matmul(y, columns(p.wq->value, h * dh, dh));
    const Tensor k = reference_matmul(z, columns(p.wk->value, h * dh, dh));
    const Tensor v = reference_matmul(z, columns(p.wv->value, h * dh, dh));
    Tensor scores = reference_matmul(q, transpose(k));
    for (auto& s : scores.values()) s /= std::sqrt(static_cast<Real>(dh));
    const Tensor probs = testing::reference_softmax(scores, mask);
    if (weights) weights->push_back(probs);
    const Tensor ctx = reference_matmul(probs, v);
    for (std::size_t r = 0; r < y.rows(); ++r)
      for (std::size_t c = 0; c < dh; ++c) joined(r, h * dh + c) = ctx(r, c);
  }
  return reference_matmul(joined, p.wo->value);
}

Tensor run_mha(const Tensor& y, const Tensor& z, const AttentionParams& p, std::size_t heads,
               const Tensor* mask = nullptr, AttentionWeights* w = nullptr) {
  Tape t(false);
  return mask ? graph_multi_head_attention(t.constant(y), t.constant(z), *mask, p, heads, w).value()
              : multi_head_attention(t.constant(y), t.constant(z), p, heads, w).value();
}

ModelConfig small_config(std::size_t d = 8, std::size_t heads = 2) {
  ModelConfig cfg;
  cfg.d_model = d;
  cfg.heads = heads;
  cfg.layers = 1;
  cfg.init_scale = 0.5;
  cfg.dropout = 0.0;
  return cfg;
}

struct Layers {
  ParameterStore store;
  std::vector<CsfnLayerParams> layers;
  Layers(const ModelConfig& cfg, std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < n; ++i) layers.push_back(CsfnLayerParams::create(store, "l" + std::to_string(i), cfg, rng));
  }
  void zero_layer(std::size_t i) {
    const std::string prefix = "l" + std::to_string(i) + ".";
    for (Parameter* p : store.all())
      if (p->name.rfind(prefix, 0) == 0 && p->name.find("gamma") == std::string::npos) p->value.fill(0.0);
  }
};

struct Inputs {
  Tensor g, x, b, ag, ab;
};

Inputs random_inputs(std::size_t ng, std::size_t nx, std::size_t nb, std::size_t d, std::mt19937_64& rng) {
  Inputs in{random_tensor(ng, d, rng), random_tensor(nx, d, rng), random_tensor(nb, d, rng), Tensor(), Tensor()};
  in.ag = testing::random_mask(ng, ng, rng);
  for (std::size_t i = 0; i < ng; ++i) {
    in.ag(i, i) = 1.0;
    for (std::size_t j = 0; j < i; ++j) in.ag(i, j) = in.ag(j, i);
  }
  std::vector<std::pair<std::size_t, std::size_t>> spans;
  if (nb > 1) spans.emplace_back(1, nb);
  in.ab = state_adjacency(nb, spans);
  return in;
}

struct Out {
  Tensor g, x, b;
};

Out run_forward(const Inputs& in, const std::vector<CsfnLayerParams>& layers, std::size_t heads,
                const Tensor* ag_override = nullptr) {
  Tape t(false);
  FusionStates s{t.constant(in.g), t.constant(in.x), t.constant(in.b)};
  FusionStates o = csfn_forward(s, ag_override ? *ag_override : in.ag, in.ab, layers, heads);
  return {o.g.value(), o.x.value(), o.b.value()};
}

Tensor ln(const Tensor& x) { return layer_norm(x, Tensor(1, x.cols(), 1.0), Tensor(1, x.cols(), 0.0), kLayerNormEps); }

Tensor plus(std::initializer_list<Tensor> ts) {
  Tensor out = *ts.begin();
  for (auto it = ts.begin() + 1; it != ts.end(); ++it)
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += (*it)[i];
  return out;
}

nlohmann::json to_json(const Tensor& t) {
  return {{"rows", t.rows()}, {"cols", t.cols()}, {"data", std::vector<Real>(t.values().begin(), t.values().end())}};
}

Tensor from_json(const nlohmann::json& j) {
  return Tensor(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>(), j.at("data").get<std::vector<Real>>());
}

}  // namespace

TEST_SUITE("fusion") {

TEST_CASE("multi_head_attention with a single key") {
  std::mt19937_64 rng(41);
  Attn a(8, rng);
  const Tensor y = random_tensor(3, 8, rng);
  const Tensor z = random_tensor(1, 8, rng);
  AttentionWeights w;
  const Tensor out = run_mha(y, z, a.p, 2, nullptr, &w);
  const Tensor zvo = testing::reference_matmul(testing::reference_matmul(z, a.p.wv->value), a.p.wo->value);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 8; ++c) CHECK(out(r, c) == doctest::Approx(zvo(0, c)).epsilon(1e-12));
  for (const auto& head : w)
    for (Real v : head.values()) CHECK(v == 1.0);
}

TEST_CASE("multi_head_attention matches a loop reference") {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t heads = 1 + rng() % 4;
    const std::size_t d = heads * (1 + rng() % 3);
    Attn a(d, rng);
    const Tensor y = random_tensor(3, d, rng);
    const Tensor z = random_tensor(4, d, rng);
    AttentionWeights w;
    std::vector<Tensor> ref_w;
    const Tensor out = run_mha(y, z, a.p, heads, nullptr, &w);
    CHECK(max_abs_diff(out, reference_attention(y, z, a.p, heads, nullptr, &ref_w)) < 1e-12);
    REQUIRE(w.size() == heads);
    for (std::size_t h = 0; h < heads; ++h) {
      CHECK(max_abs_diff(w[h], ref_w[h]) < 1e-12);
      for (std::size_t r = 0; r < 3; ++r) {
        Real s = 0.0;
        for (std::size_t c = 0; c < 4; ++c) s += w[h](r, c);
        CHECK(std::abs(s - 1.0) < 1e-9);
      }
    }
  }
}

TEST_CASE("graph attention with an all-ones mask is plain attention") {
  std::mt19937_64 rng(43);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t ny = 1 + rng() % 6, nz = 1 + rng() % 6;
    Attn a(8, rng);
    const Tensor y = random_tensor(ny, 8, rng, 2.0);
    const Tensor z = random_tensor(nz, 8, rng, 2.0);
    const Tensor ones(ny, nz, 1.0);
    CHECK(max_abs_diff(run_mha(y, z, a.p, 2, &ones), run_mha(y, z, a.p, 2)) <= 1e-12);
  }
}

TEST_CASE("graph attention: masked weights are exactly zero") {
  std::mt19937_64 rng(44);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t ny = 1 + rng() % 6, nz = 1 + rng() % 6;
    Attn a(8, rng);
    const Tensor y = random_tensor(ny, 8, rng, 2.0);
    const Tensor z = random_tensor(nz, 8, rng, 2.0);
    const Tensor mask = testing::random_mask(ny, nz, rng);
    AttentionWeights w;
    const Tensor out = run_mha(y, z, a.p, 2, &mask, &w);
    CHECK(max_abs_diff(out, reference_attention(y, z, a.p, 2, &mask)) < 1e-12);
    for (const auto& head : w)
      for (std::size_t i = 0; i < ny; ++i)
        for (std::size_t j = 0; j < nz; ++j)
          if (mask(i, j) == 0.0) CHECK(head(i, j) == 0.0);
  }
}

TEST_CASE("graph attention examples") {
  std::mt19937_64 rng(45);
  Attn a(4, rng);
  const Tensor z = random_tensor(3, 4, rng);

  // One allowed key per row: the output is that key's value projection.
  const Tensor mask = Tensor::from_rows({{0, 1, 0}});
  const Tensor out = run_mha(random_tensor(1, 4, rng), z, a.p, 2, &mask);
  Tensor zk(1, 4);
  for (std::size_t c = 0; c < 4; ++c) zk[c] = z(1, c);
  CHECK(max_abs_diff(out, testing::reference_matmul(testing::reference_matmul(zk, a.p.wv->value), a.p.wo->value)) <
        1e-12);

  // Identity mask with Y = Z: every node attends only to itself.
  const Tensor eye = Tensor::identity(3);
  AttentionWeights w;
  run_mha(z, z, a.p, 2, &eye, &w);
  for (const auto& head : w) CHECK(head == eye);
}

TEST_CASE("csfn_layer with zero weights is LayerNorm twice") {
  std::mt19937_64 rng(46);
  const ModelConfig cfg = small_config();
  Layers l(cfg, 1, 1);
  l.zero_layer(0);
  const Inputs in = random_inputs(4, 5, 3, 8, rng);
  const Out o = run_forward(in, l.layers, 2);
  CHECK(max_abs_diff(o.g, ln(ln(in.g))) < 1e-12);
  CHECK(max_abs_diff(o.x, ln(ln(in.x))) < 1e-12);
  CHECK(max_abs_diff(o.b, ln(ln(in.b))) < 1e-12);
}

TEST_CASE("csfn_layer preserves shapes") {
  std::mt19937_64 rng(47);
  const ModelConfig cfg = small_config();
  Layers l(cfg, 1, 2);
  for (int trial = 0; trial < 10; ++trial) {
    const Inputs in = random_inputs(1 + rng() % 7, 1 + rng() % 7, 1 + rng() % 7, 8, rng);
    const Out o = run_forward(in, l.layers, 2);
    CHECK(o.g.same_shape(in.g));
    CHECK(o.x.same_shape(in.x));
    CHECK(o.b.same_shape(in.b));
  }
}

TEST_CASE("csfn_layer streams follow the update equations") {
  // Rebuild every stream from attention, LayerNorm and FFN calls and compare.
  std::mt19937_64 rng(48);
  const ModelConfig cfg = small_config();
  Layers l(cfg, 1, 3);
  const CsfnLayerParams& p = l.layers[0];
  const Inputs in = random_inputs(4, 5, 3, 8, rng);
  const Out o = run_forward(in, l.layers, 2);

  auto stream = [&](const Tensor& h, const Tensor& i, const Tensor& ea, const Tensor& eb, const StreamParams& s) {
    const Tensor c = layer_norm(plus({h, i, ea, eb}), s.norm_attn.gamma->value, s.norm_attn.beta->value, kLayerNormEps);
    const Tensor f = ffn(c, s.ffn.w1->value, s.ffn.b1->value, s.ffn.w2->value, s.ffn.b2->value);
    return layer_norm(plus({c, f}), s.norm_ffn.gamma->value, s.norm_ffn.beta->value, kLayerNormEps);
  };
  const Tensor g = stream(in.g, reference_attention(in.g, in.g, p.g.internal, 2, &in.ag),
                          reference_attention(in.g, in.x, p.g.external_a, 2, nullptr),
                          reference_attention(in.g, in.b, p.g.external_b, 2, nullptr), p.g);
  const Tensor x = stream(in.x, reference_attention(in.x, in.x, p.x.internal, 2, nullptr),
                          reference_attention(in.x, in.b, p.x.external_a, 2, nullptr),
                          reference_attention(in.x, in.g, p.x.external_b, 2, nullptr), p.x);
  const Tensor b = stream(in.b, reference_attention(in.b, in.b, p.b.internal, 2, &in.ab),
                          reference_attention(in.b, in.x, p.b.external_a, 2, nullptr),
                          reference_attention(in.b, in.g, p.b.external_b, 2, nullptr), p.b);
  CHECK(max_abs_diff(o.g, g) < 1e-10);
  CHECK(max_abs_diff(o.x, x) < 1e-10);
  CHECK(max_abs_diff(o.b, b) < 1e-10);
}

TEST_CASE("graph mask reaches only the graph stream's internal attention") {
  std::mt19937_64 rng(49);
  const ModelConfig cfg = small_config();
  Layers l(cfg, 1, 4);
  const CsfnLayerParams& p = l.layers[0];
  const Inputs in = random_inputs(5, 4, 3, 8, rng);
  const Tensor eye = Tensor::identity(5);
  const Tensor ones(5, 5, 1.0);
  const Out a = run_forward(in, l.layers, 2, &eye);
  const Out b = run_forward(in, l.layers, 2, &ones);
  // X and B read the incoming G, which is the same under both masks.
  CHECK(a.x == b.x);
  CHECK(a.b == b.b);
  CHECK(max_abs_diff(a.g, b.g) > 1e-6);

  // Pre-norm sums differ by exactly the change in I_GG.
  const Tensor egx = reference_attention(in.g, in.x, p.g.external_a, 2, nullptr);
  const Tensor egb = reference_attention(in.g, in.b, p.g.external_b, 2, nullptr);
  const Tensor ia = reference_attention(in.g, in.g, p.g.internal, 2, &eye);
  const Tensor ib = reference_attention(in.g, in.g, p.g.internal, 2, &ones);
  const Tensor sa = plus({in.g, ia, egx, egb});
  const Tensor sb = plus({in.g, ib, egx, egb});
  for (std::size_t i = 0; i < sa.size(); ++i) CHECK(sa[i] - sb[i] == doctest::Approx(ia[i] - ib[i]).epsilon(1e-12));
}

TEST_CASE("csfn_forward composition") {
  std::mt19937_64 rng(50);
  const ModelConfig cfg = small_config();
  Layers two(cfg, 2, 5);
  const Inputs in = random_inputs(4, 5, 3, 8, rng);

  Out single;
  {
    Tape t(false);
    FusionStates s{t.constant(in.g), t.constant(in.x), t.constant(in.b)};
    FusionStates o = csfn_layer(s, in.ag, in.ab, two.layers[0], 2);
    single = {o.g.value(), o.x.value(), o.b.value()};
  }
  const Out one = run_forward(in, {two.layers[0]}, 2);
  CHECK(one.g == single.g);
  CHECK(one.x == single.x);
  CHECK(one.b == single.b);

  two.zero_layer(1);
  const Out both = run_forward(in, two.layers, 2);
  CHECK(max_abs_diff(both.g, ln(ln(single.g))) < 1e-12);
  CHECK(max_abs_diff(both.x, ln(ln(single.x))) < 1e-12);
  CHECK(max_abs_diff(both.b, ln(ln(single.b))) < 1e-12);

  Tape t(false);
  CHECK_THROWS_AS(csfn_forward({t.constant(in.g), t.constant(in.x), t.constant(in.b)}, in.ag, in.ab, {}, 2),
                  ContractError);
}

TEST_CASE("csfn_layer is equivariant to graph node permutations") {
  std::mt19937_64 rng(51);
  const ModelConfig cfg = small_config();
  Layers l(cfg, 2, 6);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t n = 3 + rng() % 5;
    const Inputs in = random_inputs(n, 4, 3, 8, rng);
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    std::shuffle(perm.begin(), perm.end(), rng);

    Inputs pin = in;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < 8; ++c) pin.g(i, c) = in.g(perm[i], c);
      for (std::size_t j = 0; j < n; ++j) pin.ag(i, j) = in.ag(perm[i], perm[j]);
    }
    const Out a = run_forward(in, l.layers, 2);
    const Out b = run_forward(pin, l.layers, 2);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < 8; ++c) CHECK(b.g(i, c) == doctest::Approx(a.g(perm[i], c)).epsilon(1e-10));
    CHECK(max_abs_diff(a.x, b.x) < 1e-10);
    CHECK(max_abs_diff(a.b, b.b) < 1e-10);
  }
}

TEST_CASE("gradient of all three streams passes finite differences") {
  std::mt19937_64 rng(52);
  const ModelConfig cfg = small_config();
  Layers l(cfg, 1, 7);
  const Inputs in = random_inputs(4, 5, 3, 8, rng);
  // Plain sums of LayerNorm outputs are nearly flat; weight them first.
  const Tensor wg = random_tensor(4, 8, rng), wx = random_tensor(5, 8, rng), wb = random_tensor(3, 8, rng);
  auto fn = [&](Tape& t) {
    FusionStates s{t.constant(in.g), t.constant(in.x), t.constant(in.b)};
    FusionStates o = csfn_forward(s, in.ag, in.ab, l.layers, 2);
    return ag::add_n({ag::sum(ag::mul(o.g, t.constant(wg))), ag::sum(ag::mul(o.x, t.constant(wx))),
                      ag::sum(ag::mul(o.b, t.constant(wb)))});
  };
  const GradCheckReport r = grad_check(fn, l.store.all());
  std::size_t total = 0;
  for (const Parameter* p : l.store.all()) total += p->value.size();
  CAPTURE(r.worst.param);
  CHECK(r.checked == total);
  CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("csfn_forward golden output") {
  std::mt19937_64 rng(2024);
  const ModelConfig cfg = small_config();
  Layers l(cfg, 2, 2024);
  const Inputs in = random_inputs(6, 7, 4, 8, rng);
  const Out o = run_forward(in, l.layers, 2);

  const std::filesystem::path path = CSFN_TEST_DIR "/golden/csfn_forward.json";
  if (std::getenv("CSFN_WRITE_GOLDEN")) {
    std::ofstream out(path);
    out << nlohmann::json{{"g", to_json(o.g)}, {"x", to_json(o.x)}, {"b", to_json(o.b)}}.dump(1) << '\n';
  }
  std::ifstream f(path);
  REQUIRE_MESSAGE(f.good(), "missing golden file; regenerate with CSFN_WRITE_GOLDEN=1");
  const nlohmann::json j = nlohmann::json::parse(f);
  CHECK(max_abs_diff(o.g, from_json(j.at("g"))) < 1e-12);
  CHECK(max_abs_diff(o.x, from_json(j.at("x"))) < 1e-12);
  CHECK(max_abs_diff(o.b, from_json(j.at("b"))) < 1e-12);
}

TEST_CASE("ModelConfig validation and JSON") {
  ModelConfig c;
  CHECK_NOTHROW(c.validate());
  CHECK(c.ffn_width() == 4 * c.d_model);
  c.heads = 3;
  CHECK_THROWS_AS(c.validate(), ContractError);
  c = ModelConfig{};
  c.layers = 0;
  CHECK_THROWS_AS(c.validate(), ContractError);
  c = ModelConfig{};
  c.d_model = 64;
  c.strict_paper = true;
  CHECK(c.effective_dropout() == 0.0);
  CHECK(ModelConfig::from_json(c.to_json()).to_json() == c.to_json());
}

}  // TEST_SUITE
