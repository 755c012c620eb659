#include <doctest.h>

#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "helpers.hpp"
#include "metapoi/checkpoint.hpp"
#include "metapoi/dual.hpp"
#include "metapoi/errors.hpp"
#include "metapoi/model.hpp"

using namespace metapoi;

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Plain single-layer LSTM, gate rows ordered i, f, g, o.
std::vector<std::vector<double>> reference_lstm(const std::vector<double>& W, const std::vector<double>& U,
                                                const std::vector<double>& b, int h,
                                                const std::vector<std::vector<double>>& xs) {
  const int in = static_cast<int>(xs.front().size());
  std::vector<double> hp(static_cast<std::size_t>(h), 0.0), cp(static_cast<std::size_t>(h), 0.0);
  std::vector<std::vector<double>> out;
  for (const auto& x : xs) {
    std::vector<double> z(4 * static_cast<std::size_t>(h));
    for (int r = 0; r < 4 * h; ++r) {
      double s = b[static_cast<std::size_t>(r)];
      for (int j = 0; j < in; ++j) s += W[static_cast<std::size_t>(r * in + j)] * x[static_cast<std::size_t>(j)];
      for (int j = 0; j < h; ++j) s += U[static_cast<std::size_t>(r * h + j)] * hp[static_cast<std::size_t>(j)];
      z[static_cast<std::size_t>(r)] = s;
    }
    std::vector<double> hn(static_cast<std::size_t>(h)), cn(static_cast<std::size_t>(h));
    for (int k = 0; k < h; ++k) {
      const auto u = static_cast<std::size_t>(k);
      const double i = sigmoid(z[u]), f = sigmoid(z[u + h]), g = std::tanh(z[u + 2 * h]), o = sigmoid(z[u + 3 * h]);
      cn[u] = f * cp[u] + i * g;
      hn[u] = o * std::tanh(cn[u]);
    }
    hp = hn;
    cp = cn;
    out.push_back(hn);
  }
  return out;
}

Architecture tiny_arch(int cat_layers, int poi_layers) { return {2, 3, cat_layers, poi_layers, 5}; }

void zero_all(ModelState& s) {
  for (auto& t : s.values) std::fill(t.begin(), t.end(), 0.0);
}

// Central differences of compute_loss for every entry of every group.
void check_gradients(const ModelState& state, const SequenceBatch& batch, TaskSpec task, double tol) {
  const GradientBundle g = compute_gradients(state, batch, task);
  CHECK(g.loss == doctest::Approx(compute_loss(state, batch, task)).epsilon(1e-13));
  const double h = 1e-5;
  for (std::size_t k = 0; k < state.values.size(); ++k) {
    double num2 = 0.0, diff2 = 0.0;
    for (std::size_t i = 0; i < state.values[k].size(); ++i) {
      ModelState p = state, m = state;
      p.values[k][i] += h;
      m.values[k][i] -= h;
      const double fd = (compute_loss(p, batch, task) - compute_loss(m, batch, task)) / (2 * h);
      num2 += fd * fd;
      diff2 += (fd - g.grads[k][i]) * (fd - g.grads[k][i]);
    }
    const double rel = std::sqrt(diff2) / std::max(1e-10, std::sqrt(num2));
    INFO("group " << state.layout.tensors[k].name << " rel " << rel);
    if (num2 > 1e-20) CHECK(rel < tol);
    else CHECK(std::sqrt(diff2) < 1e-9);
  }
}

}  // namespace

TEST_SUITE("nn-core") {

TEST_CASE("embedding shapes and zero tables") {
  ModelState s = init_model({4, 3, 1, 1, 6}, 1);
  CHECK(embed_category_step(s, {3, 10}).size() == 8);
  CHECK(embed_poi_step(s, {2, 0, 10}).size() == 12);
  zero_all(s);
  for (double v : embed_category_step(s, {3, 10})) CHECK(v == 0.0);
  for (double v : embed_poi_step(s, {2, 4, 10})) CHECK(v == 0.0);
  CHECK_THROWS(embed_category_step(s, {10, 0}));
  CHECK_THROWS(embed_poi_step(s, {6, 0, 0}));
  CHECK_THROWS(embed_poi_step(s, {0, 8, 0}));
}

TEST_CASE("embedding rows are recoverable and bucket 0 selects row 0") {
  ModelState s = init_model({4, 3, 1, 1, 6}, 1);
  auto& cat = s.tensor("cat.embed.category");
  auto& time = s.tensor("cat.embed.time");
  zero_all(s);
  for (int c = 0; c < 10; ++c) cat[static_cast<std::size_t>(c * 4 + c % 4)] = c + 1.0;
  for (int t = 0; t < 48; ++t) time[static_cast<std::size_t>(t * 4 + t % 4)] = 100.0 + t;
  const auto e = embed_category_step(s, {6, 45});
  CHECK(e[2] == 7.0);
  CHECK(e[4 + 1] == 145.0);
  auto& dist = s.tensor("poi.embed.dist");
  for (std::size_t i = 0; i < 4; ++i) dist[i] = -1.0 - static_cast<double>(i);
  const auto p = embed_poi_step(s, {0, 0, 0});
  CHECK(p[4] == -1.0);
  CHECK(p[7] == -4.0);
}

TEST_CASE("encoder matches a reference LSTM and has the prefix property") {
  ModelState s = init_model({2, 3, 1, 0, 0}, 11);
  std::vector<std::vector<double>> xs;
  for (int t = 0; t < 5; ++t) xs.push_back({0.3 * t - 0.5, 0.1, -0.2 * t, 0.7});
  const auto enc = encode_sequence(s, Channel::kCategory, xs);
  const auto ref =
      reference_lstm(s.tensor("cat.rnn.0.W"), s.tensor("cat.rnn.0.U"), s.tensor("cat.rnn.0.b"), 3, xs);
  REQUIRE(enc.hidden_states.size() == 5);
  for (std::size_t t = 0; t < 5; ++t) {
    for (std::size_t k = 0; k < 3; ++k) CHECK(std::abs(enc.hidden_states[t][k] - ref[t][k]) < 1e-12);
  }
  CHECK(enc.final_state == enc.hidden_states.back());

  ModelState deep = init_model({2, 3, 3, 0, 0}, 12);
  const auto full = encode_sequence(deep, Channel::kCategory, xs);
  for (std::size_t k = 1; k <= xs.size(); ++k) {
    const std::vector<std::vector<double>> prefix(xs.begin(), xs.begin() + static_cast<long>(k));
    const auto part = encode_sequence(deep, Channel::kCategory, prefix);
    for (std::size_t t = 0; t < k; ++t) CHECK(part.hidden_states[t] == full.hidden_states[t]);
  }
  const std::vector<std::vector<double>> one(xs.begin(), xs.begin() + 1);
  const auto single = encode_sequence(deep, Channel::kCategory, one);
  CHECK(single.hidden_states.size() == 1);
  CHECK(single.final_state == single.hidden_states[0]);
  CHECK(encode_sequence(deep, Channel::kCategory, xs).hidden_states == full.hidden_states);

  zero_all(deep);
  const std::vector<std::vector<double>> zeros(3, std::vector<double>(4, 0.0));
  for (const auto& h : encode_sequence(deep, Channel::kCategory, zeros).hidden_states) {
    for (double v : h) CHECK(v == 0.0);
  }
  const std::vector<std::vector<double>> wrong(2, std::vector<double>(3, 0.0));
  CHECK_THROWS_AS(encode_sequence(deep, Channel::kCategory, wrong), ShapeError);
}

TEST_CASE("category head is affine") {
  ModelState s = init_model({2, 2, 1, 0, 0}, 3);
  auto& W = s.tensor("cat.head.W");
  auto& b = s.tensor("cat.head.b");
  std::fill(W.begin(), W.end(), 0.0);
  std::iota(b.begin(), b.end(), 0.0);
  const std::vector<double> h{0.3, -0.7};
  auto out = category_head_logits(s, h);
  REQUIRE(out.size() == 10);
  for (std::size_t i = 0; i < 10; ++i) CHECK(out[i] == b[i]);
  std::fill(b.begin(), b.end(), 0.0);
  W[0] = 1.0;  // row 0 picks h0
  W[3] = 1.0;  // row 1 picks h1
  W[4] = 2.0;
  W[5] = 1.0;  // row 2 = 2 h0 + h1
  out = category_head_logits(s, h);
  CHECK(out[0] == doctest::Approx(0.3));
  CHECK(out[1] == doctest::Approx(-0.7));
  CHECK(out[2] == doctest::Approx(-0.1));
  const std::vector<double> bad{1.0};
  CHECK_THROWS_AS(category_head_logits(s, bad), ShapeError);
}

TEST_CASE("decoder softmax") {
  ModelState s = init_model({2, 3, 1, 1, 3}, 5);
  auto& W = s.tensor("decoder.W");
  auto& b = s.tensor("decoder.b");
  const std::vector<double> c{0.2, 0.1, -0.3}, p{0.5, -0.4, 0.9};
  std::fill(W.begin(), W.end(), 0.0);
  std::fill(b.begin(), b.end(), 0.0);
  for (double v : decode_next_poi(s, c, p)) CHECK(v == doctest::Approx(1.0 / 3.0));
  b = {std::log(1.0), std::log(2.0), std::log(3.0)};
  auto probs = decode_next_poi(s, c, p);
  CHECK(probs[0] == doctest::Approx(1.0 / 6).epsilon(1e-12));
  CHECK(probs[1] == doctest::Approx(2.0 / 6).epsilon(1e-12));
  CHECK(probs[2] == doctest::Approx(3.0 / 6).epsilon(1e-12));
  for (double& v : b) v += 123.0;
  const auto shifted = decode_next_poi(s, c, p);
  for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(shifted[i] - probs[i]) < 1e-9);

  ModelState r = init_model({2, 3, 1, 1, 7}, 6);
  const auto q = decode_next_poi(r, c, p);
  CHECK(std::accumulate(q.begin(), q.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-9));
  for (double v : q) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
  const std::vector<double> narrow{1.0, 2.0};
  CHECK_THROWS_AS(decode_next_poi(r, narrow, p), ShapeError);
}

TEST_CASE("cross entropy") {
  const std::vector<double> sure{0.0, 1.0, 0.0};
  CHECK(cross_entropy(sure, 1) == 0.0);
  const std::vector<double> uniform(4, 0.25);
  CHECK(cross_entropy(uniform, 2) == doctest::Approx(std::log(4.0)));
  CHECK(cross_entropy(sure, 0) == doctest::Approx(-std::log(kProbabilityFloor)));
  CHECK(cross_entropy(uniform, 0) >= 0.0);
}

TEST_CASE("losses follow the target conventions") {
  const auto seqs = testutil::random_sequences(6, 4, 5, 21);
  const SequenceBatch batch = as_batch(seqs);
  ModelState s = init_model(tiny_arch(2, 1), 4);

  double poi = 0.0;
  for (const auto& q : seqs) poi += cross_entropy(predict_next_poi(s, q), q.poi_seq.back().poi_id);
  CHECK(compute_loss(s, batch, {Task::kPoi, false}) == doctest::Approx(poi / 6).epsilon(1e-12));

  ModelState c = init_model(tiny_arch(2, 0), 4);
  double cat = 0.0;
  int targets = 0;
  for (const auto& q : seqs) {
    std::vector<std::vector<double>> emb;
    for (const auto& st : q.category_seq) emb.push_back(embed_category_step(c, st));
    const auto enc = encode_sequence(c, Channel::kCategory, emb);
    for (std::size_t k = 0; k + 1 < q.size(); ++k) {
      cat += cross_entropy(softmax(category_head_logits(c, enc.hidden_states[k])), q.category_seq[k + 1].category_id);
      ++targets;
    }
  }
  CHECK(compute_loss(c, batch, {Task::kCategory, false}) == doctest::Approx(cat / targets).epsilon(1e-12));
}

TEST_CASE("gradients match central differences") {
  const auto seqs = testutil::random_sequences(4, 4, 5, 31);
  const SequenceBatch batch = as_batch(seqs);
  SUBCASE("category task") { check_gradients(init_model(tiny_arch(2, 0), 7), batch, {Task::kCategory, false}, 1e-4); }
  SUBCASE("poi task, both channels") { check_gradients(init_model(tiny_arch(2, 2), 8), batch, {Task::kPoi, false}, 1e-4); }
  SUBCASE("poi task, all prefixes") { check_gradients(init_model(tiny_arch(1, 1), 9), batch, {Task::kPoi, true}, 1e-4); }
  SUBCASE("poi only") { check_gradients(init_model(tiny_arch(0, 1), 10), batch, {Task::kPoi, false}, 1e-4); }
}

TEST_CASE("gradients skip frozen groups and respect mean invariance") {
  const auto seqs = testutil::random_sequences(4, 4, 5, 41);
  SequenceBatch batch = as_batch(seqs);
  ModelState s = init_model(tiny_arch(2, 1), 12);
  const auto g = compute_gradients(s, batch, {Task::kPoi, false});
  SequenceBatch doubled = batch;
  doubled.insert(doubled.end(), batch.begin(), batch.end());
  const auto g2 = compute_gradients(s, doubled, {Task::kPoi, false});
  CHECK(g2.loss == doctest::Approx(g.loss).epsilon(1e-14));
  for (std::size_t k = 0; k < g.grads.size(); ++k) {
    for (std::size_t i = 0; i < g.grads[k].size(); ++i) CHECK(std::abs(g2.grads[k][i] - g.grads[k][i]) < 1e-14);
  }

  for (std::size_t k = 0; k < s.frozen.size(); ++k) s.frozen[k] = is_category_group(s.layout.tensors[k].name);
  const auto gf = compute_gradients(s, batch, {Task::kPoi, false});
  const ModelState next = apply_update(s, gf, 0.5);
  for (std::size_t k = 0; k < s.values.size(); ++k) {
    if (s.frozen[k]) {
      CHECK(next.values[k] == s.values[k]);
      for (double v : gf.grads[k]) CHECK(v == 0.0);
    }
  }
  // unfrozen gradients unchanged by freezing other groups
  for (std::size_t k = 0; k < s.values.size(); ++k) {
    if (!s.frozen[k]) CHECK(gf.grads[k] == g.grads[k]);
  }
}

TEST_CASE("apply_update is functional") {
  ModelState s = init_model(tiny_arch(1, 0), 1);
  const ModelState before = s;
  GradientBundle g;
  for (const auto& t : s.values) g.grads.emplace_back(t.size(), 1.0);
  const ModelState same = apply_update(s, g, 0.0);
  CHECK(same == before);
  const ModelState moved = apply_update(s, g, 0.25);
  CHECK(s == before);
  CHECK(moved.values[0][0] == before.values[0][0] - 0.25);

  // scalar toy: loss gamma * theta^2 at theta = 1, gamma = 0.5 gives grad 1
  ModelState toy = s;
  toy.values[0][0] = 1.0;
  GradientBundle tg;
  for (const auto& t : toy.values) tg.grads.emplace_back(t.size(), 0.0);
  tg.grads[0][0] = 2.0 * 0.5 * 1.0;
  CHECK(apply_update(toy, tg, 0.1).values[0][0] == doctest::Approx(0.9).epsilon(1e-15));
}

TEST_CASE("hessian-vector product matches differences of gradients") {
  const auto seqs = testutil::random_sequences(3, 4, 5, 51);
  const SequenceBatch batch = as_batch(seqs);
  for (const auto& [arch, task] : {std::pair{tiny_arch(2, 0), TaskSpec{Task::kCategory, false}},
                                   std::pair{tiny_arch(1, 1), TaskSpec{Task::kPoi, false}}}) {
    ModelState s = init_model(arch, 13);
    std::mt19937_64 rng(2);
    std::normal_distribution<double> nd;
    std::vector<std::vector<double>> v;
    for (const auto& t : s.values) {
      v.emplace_back(t.size());
      for (double& x : v.back()) x = nd(rng);
    }
    const auto hv = hessian_vector_product(s, batch, task, v);
    const double h = 1e-5;
    ModelState p = s, m = s;
    for (std::size_t k = 0; k < s.values.size(); ++k) {
      for (std::size_t i = 0; i < s.values[k].size(); ++i) {
        p.values[k][i] += h * v[k][i];
        m.values[k][i] -= h * v[k][i];
      }
    }
    const auto gp = compute_gradients(p, batch, task), gm = compute_gradients(m, batch, task);
    double num2 = 0.0, diff2 = 0.0;
    for (std::size_t k = 0; k < s.values.size(); ++k) {
      for (std::size_t i = 0; i < s.values[k].size(); ++i) {
        const double fd = (gp.grads[k][i] - gm.grads[k][i]) / (2 * h);
        num2 += fd * fd;
        diff2 += (fd - hv[k][i]) * (fd - hv[k][i]);
      }
    }
    CHECK(std::sqrt(diff2 / num2) < 1e-6);
  }
}

TEST_CASE("dual numbers carry exact derivatives") {
  const Dual x{0.3, 1.0};
  const Dual y = tanh(x) * exp(x) + log(x + 2.0);
  const double d = (1 - std::tanh(0.3) * std::tanh(0.3)) * std::exp(0.3) + std::tanh(0.3) * std::exp(0.3) + 1 / 2.3;
  CHECK(y.d == doctest::Approx(d).epsilon(1e-14));
  CHECK(value_of(y) == doctest::Approx(std::tanh(0.3) * std::exp(0.3) + std::log(2.3)).epsilon(1e-15));
}

TEST_CASE("checkpoint round trip and tamper detection") {
  ModelState s = init_model(tiny_arch(2, 1), 3);
  s.frozen[0] = true;
  const auto dir = testutil::temp_dir("checkpoint");
  save_checkpoint(s, dir, {{"note", "x"}});
  nlohmann::json extra;
  const ModelState back = load_checkpoint(dir, &extra);
  CHECK(back == s);
  CHECK(extra["note"] == "x");
  CHECK(frozen_tensor_hashes(back) == frozen_tensor_hashes(s));
  CHECK(frozen_tensor_hashes(s).size() == 1);

  // the w/o-cat model carries no category groups
  const ModelState poi_only = init_model(tiny_arch(0, 1), 3);
  save_checkpoint(poi_only, dir / "poi_only");
  std::ifstream in(dir / "poi_only" / "manifest.json");
  const auto manifest = nlohmann::json::parse(in);
  for (const auto& t : manifest["tensors"]) CHECK_FALSE(is_category_group(t["name"].get<std::string>()));

  // flip one byte of a tensor file
  const auto target = dir / "poi_only" / manifest["tensors"][0]["file"].get<std::string>();
  {
    std::fstream f(target, std::ios::in | std::ios::out | std::ios::binary);
    char c = 0;
    f.read(&c, 1);
    c = static_cast<char>(c ^ 0x5a);
    f.seekp(0);
    f.write(&c, 1);
  }
  CHECK_THROWS_AS(load_checkpoint(dir / "poi_only"), DataError);
}

}  // TEST_SUITE
