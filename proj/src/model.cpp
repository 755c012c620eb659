#include "metapoi/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "metapoi/categories.hpp"
#include "metapoi/dual.hpp"
#include "metapoi/errors.hpp"

namespace metapoi {

namespace {

template <class T>
using Params = std::vector<std::vector<T>>;
template <class T>
using Vec = std::vector<T>;

template <class T>
T sigmoid(const T& x) {
  using std::exp;
  return T(1.0) / (T(1.0) + exp(-x));
}

template <class T>
T tanh_(const T& x) {
  using std::tanh;
  return tanh(x);
}

// y += M x, M is rows x cols row-major
template <class T>
void gemv_add(const Vec<T>& m, int rows, int cols, std::span<const T> x, std::span<T> y) {
  for (int r = 0; r < rows; ++r) {
    T acc = y[static_cast<std::size_t>(r)];
    const T* row = m.data() + static_cast<std::size_t>(r) * static_cast<std::size_t>(cols);
    for (int c = 0; c < cols; ++c) acc += row[c] * x[static_cast<std::size_t>(c)];
    y[static_cast<std::size_t>(r)] = acc;
  }
}

// y += M^T x
template <class T>
void gemv_t_add(const Vec<T>& m, int rows, int cols, std::span<const T> x, std::span<T> y) {
  for (int r = 0; r < rows; ++r) {
    const T xr = x[static_cast<std::size_t>(r)];
    const T* row = m.data() + static_cast<std::size_t>(r) * static_cast<std::size_t>(cols);
    for (int c = 0; c < cols; ++c) y[static_cast<std::size_t>(c)] += row[c] * xr;
  }
}

// G += a b^T
template <class T>
void outer_add(Vec<T>& g, int rows, int cols, std::span<const T> a, std::span<const T> b) {
  for (int r = 0; r < rows; ++r) {
    T* row = g.data() + static_cast<std::size_t>(r) * static_cast<std::size_t>(cols);
    const T ar = a[static_cast<std::size_t>(r)];
    for (int c = 0; c < cols; ++c) row[c] += ar * b[static_cast<std::size_t>(c)];
  }
}

template <class T>
struct LstmTrace {
  std::vector<Vec<T>> x;
  std::vector<Vec<T>> gates;  // [i f g o] after activation
  std::vector<Vec<T>> c;
  std::vector<Vec<T>> h;
};

template <class T>
LstmTrace<T> lstm_forward(const Vec<T>& w, const Vec<T>& u, const Vec<T>& b, int in, int hid,
                          const std::vector<Vec<T>>& xs) {
  LstmTrace<T> tr;
  tr.x = xs;
  Vec<T> h_prev(static_cast<std::size_t>(hid), T(0.0));
  Vec<T> c_prev(static_cast<std::size_t>(hid), T(0.0));
  const auto H = static_cast<std::size_t>(hid);
  for (const auto& x : xs) {
    if (static_cast<int>(x.size()) != in) {
      throw ShapeError("recurrent layer expects width " + std::to_string(in) + ", got " +
                       std::to_string(x.size()));
    }
    Vec<T> z = b;
    gemv_add<T>(w, 4 * hid, in, x, z);
    gemv_add<T>(u, 4 * hid, hid, h_prev, z);
    Vec<T> c(H), h(H);
    for (std::size_t j = 0; j < H; ++j) {
      z[j] = sigmoid(z[j]);
      z[H + j] = sigmoid(z[H + j]);
      z[2 * H + j] = tanh_(z[2 * H + j]);
      z[3 * H + j] = sigmoid(z[3 * H + j]);
      c[j] = z[H + j] * c_prev[j] + z[j] * z[2 * H + j];
      h[j] = z[3 * H + j] * tanh_(c[j]);
    }
    tr.gates.push_back(std::move(z));
    tr.c.push_back(c);
    tr.h.push_back(h);
    h_prev = std::move(h);
    c_prev = std::move(c);
  }
  return tr;
}

// Returns dx per step when `want_dx`. Weight gradients accumulate into the
// non-null g* pointers.
template <class T>
std::vector<Vec<T>> lstm_backward(const LstmTrace<T>& tr, const Vec<T>& w, const Vec<T>& u, int in, int hid,
                                  const std::vector<Vec<T>>& dh_top, Vec<T>* gw, Vec<T>* gu, Vec<T>* gb,
                                  bool want_dx) {
  const auto H = static_cast<std::size_t>(hid);
  const std::size_t steps = tr.h.size();
  std::vector<Vec<T>> dx(want_dx ? steps : 0, Vec<T>(static_cast<std::size_t>(in), T(0.0)));
  Vec<T> dh_next(H, T(0.0)), dc_next(H, T(0.0));
  const Vec<T> zeros(H, T(0.0));
  for (std::size_t s = steps; s-- > 0;) {
    const Vec<T>& g = tr.gates[s];
    const Vec<T>& c_prev = s > 0 ? tr.c[s - 1] : zeros;
    const Vec<T>& h_prev = s > 0 ? tr.h[s - 1] : zeros;
    Vec<T> dz(4 * H);
    Vec<T> dc_carry(H);
    for (std::size_t j = 0; j < H; ++j) {
      const T dh = dh_top[s][j] + dh_next[j];
      const T i = g[j], f = g[H + j], gg = g[2 * H + j], o = g[3 * H + j];
      const T tc = tanh_(tr.c[s][j]);
      const T dc = dh * o * (T(1.0) - tc * tc) + dc_next[j];
      dz[j] = dc * gg * i * (T(1.0) - i);
      dz[H + j] = dc * c_prev[j] * f * (T(1.0) - f);
      dz[2 * H + j] = dc * i * (T(1.0) - gg * gg);
      dz[3 * H + j] = dh * tc * o * (T(1.0) - o);
      dc_carry[j] = dc * f;
    }
    if (gw) outer_add<T>(*gw, 4 * hid, in, dz, tr.x[s]);
    if (gu) outer_add<T>(*gu, 4 * hid, hid, dz, h_prev);
    if (gb) {
      for (std::size_t j = 0; j < 4 * H; ++j) (*gb)[j] += dz[j];
    }
    if (want_dx) gemv_t_add<T>(w, 4 * hid, in, dz, dx[s]);
    std::fill(dh_next.begin(), dh_next.end(), T(0.0));
    gemv_t_add<T>(u, 4 * hid, hid, dz, dh_next);
    dc_next = std::move(dc_carry);
  }
  return dx;
}

struct ChannelGroups {
  std::vector<int> embeddings;  // tables concatenated in input order
  std::vector<int> rnn;         // W index per layer
};

ChannelGroups channel_groups(const Layout& l, Channel ch) {
  if (ch == Channel::kCategory) return {{l.cat_embed, l.cat_time}, l.cat_rnn};
  return {{l.poi_embed, l.dist_embed, l.poi_time}, l.poi_rnn};
}

template <class T>
struct ChannelRun {
  std::vector<std::vector<int>> rows;  // table row per embedding per step
  std::vector<LstmTrace<T>> layers;
};

template <class T>
std::vector<Vec<T>> embed_rows(const Architecture& a, const Params<T>& p, const ChannelGroups& cg,
                               const std::vector<std::vector<int>>& rows) {
  const auto d = static_cast<std::size_t>(a.embed_dim);
  std::vector<Vec<T>> xs;
  for (const auto& r : rows) {
    Vec<T> x;
    x.reserve(d * cg.embeddings.size());
    for (std::size_t e = 0; e < cg.embeddings.size(); ++e) {
      const auto& table = p[static_cast<std::size_t>(cg.embeddings[e])];
      const auto off = static_cast<std::size_t>(r[e]) * d;
      x.insert(x.end(), table.begin() + static_cast<long>(off), table.begin() + static_cast<long>(off + d));
    }
    xs.push_back(std::move(x));
  }
  return xs;
}

template <class T>
ChannelRun<T> run_channel(const Architecture& a, const Layout& l, const Params<T>& p, Channel ch,
                          std::vector<std::vector<int>> rows) {
  const ChannelGroups cg = channel_groups(l, ch);
  ChannelRun<T> run;
  run.rows = std::move(rows);
  std::vector<Vec<T>> xs = embed_rows(a, p, cg, run.rows);
  int in = a.embed_dim * static_cast<int>(cg.embeddings.size());
  for (int w : cg.rnn) {
    const auto wi = static_cast<std::size_t>(w);
    run.layers.push_back(lstm_forward<T>(p[wi], p[wi + 1], p[wi + 2], in, a.hidden, xs));
    xs = run.layers.back().h;
    in = a.hidden;
  }
  return run;
}

template <class T>
void backward_channel(const Architecture& a, const Layout& l, const Params<T>& p, Channel ch,
                      const ChannelRun<T>& run, std::vector<Vec<T>> dh_top, Params<T>& g,
                      const std::vector<bool>& frozen) {
  const ChannelGroups cg = channel_groups(l, ch);
  auto trainable = [&](int idx) { return !frozen[static_cast<std::size_t>(idx)]; };
  bool below_embed = std::any_of(cg.embeddings.begin(), cg.embeddings.end(), trainable);
  std::vector<bool> below(cg.rnn.size() + 1, false);  // below[k]: anything trainable under layer k
  below[0] = below_embed;
  for (std::size_t k = 0; k < cg.rnn.size(); ++k) {
    const int w = cg.rnn[k];
    below[k + 1] = below[k] || trainable(w) || trainable(w + 1) || trainable(w + 2);
  }
  if (!below[cg.rnn.size()]) return;

  for (std::size_t k = cg.rnn.size(); k-- > 0;) {
    const int w = cg.rnn[k];
    const auto wi = static_cast<std::size_t>(w);
    const int in = k == 0 ? a.embed_dim * static_cast<int>(cg.embeddings.size()) : a.hidden;
    dh_top = lstm_backward<T>(run.layers[k], p[wi], p[wi + 1], in, a.hidden, dh_top,
                              trainable(w) ? &g[wi] : nullptr, trainable(w + 1) ? &g[wi + 1] : nullptr,
                              trainable(w + 2) ? &g[wi + 2] : nullptr, below[k]);
    if (!below[k]) return;
  }
  const auto d = static_cast<std::size_t>(a.embed_dim);
  for (std::size_t s = 0; s < dh_top.size(); ++s) {
    for (std::size_t e = 0; e < cg.embeddings.size(); ++e) {
      if (!trainable(cg.embeddings[e])) continue;
      auto& table = g[static_cast<std::size_t>(cg.embeddings[e])];
      const auto off = static_cast<std::size_t>(run.rows[s][e]) * d;
      for (std::size_t j = 0; j < d; ++j) table[off + j] += dh_top[s][e * d + j];
    }
  }
}

void check_range(int value, int bound, const char* what) {
  if (value < 0 || value >= bound) {
    throw ShapeError(std::string(what) + " index " + std::to_string(value) + " outside [0, " +
                     std::to_string(bound) + ")");
  }
}

std::vector<std::vector<int>> category_rows(const DaySequencePair& s, std::size_t steps) {
  std::vector<std::vector<int>> rows;
  for (std::size_t k = 0; k < steps; ++k) {
    check_range(s.category_seq[k].category_id, kNumCategories, "category");
    check_range(s.category_seq[k].time_slot, kNumTimeSlots, "time slot");
    rows.push_back({s.category_seq[k].category_id, s.category_seq[k].time_slot});
  }
  return rows;
}

std::vector<std::vector<int>> poi_rows(const DaySequencePair& s, std::size_t steps, int num_pois) {
  std::vector<std::vector<int>> rows;
  for (std::size_t k = 0; k < steps; ++k) {
    check_range(s.poi_seq[k].poi_id, num_pois, "POI");
    check_range(s.poi_seq[k].distance_bucket, kNumDistanceBuckets, "distance bucket");
    check_range(s.poi_seq[k].time_slot, kNumTimeSlots, "time slot");
    rows.push_back({s.poi_seq[k].poi_id, s.poi_seq[k].distance_bucket, s.poi_seq[k].time_slot});
  }
  return rows;
}

// Adds the clamped cross-entropy of softmax(logits) at `truth` and, when
// `dlogits` is given, writes scale * (softmax - onehot) into it.
template <class T>
T softmax_xent(const Vec<T>& logits, int truth, const T& scale, Vec<T>* dlogits) {
  using std::exp;
  using std::log;
  T mx = logits[0];
  for (const auto& z : logits) {
    if (z > mx) mx = z;
  }
  Vec<T> e(logits.size());
  T sum(0.0);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    e[i] = exp(logits[i] - mx);
    sum += e[i];
  }
  const T loss = log(sum) + mx - logits[static_cast<std::size_t>(truth)];
  const double cap = -std::log(kProbabilityFloor);
  if (value_of(loss) > cap) {
    if (dlogits) std::fill(dlogits->begin(), dlogits->end(), T(0.0));
    return T(cap);
  }
  if (dlogits) {
    for (std::size_t i = 0; i < logits.size(); ++i) (*dlogits)[i] = scale * (e[i] / sum);
    (*dlogits)[static_cast<std::size_t>(truth)] -= scale;
  }
  return loss;
}

// Mean loss over every prediction target in the batch; gradients (when g is
// non-null) accumulate into g for unfrozen groups only.
template <class T>
T forward_backward(const Architecture& a, const Layout& l, const Params<T>& p, const SequenceBatch& batch,
                   TaskSpec task, Params<T>* g, const std::vector<bool>& frozen) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  const bool poi_task = task.task == Task::kPoi;
  if (poi_task && !a.has_poi_channel()) throw ShapeError("POI task needs a POI channel");
  if (!poi_task && !a.has_category_channel()) throw ShapeError("category task needs a category channel");
  const bool use_cat = a.has_category_channel();
  const auto H = static_cast<std::size_t>(a.hidden);

  std::size_t targets = 0;
  for (const auto* s : batch) {
    if (s->size() < 2) throw std::invalid_argument("sequence shorter than 2 steps");
    targets += (!poi_task || task.all_prefix) ? s->size() - 1 : 1;
  }
  const T scale(1.0 / static_cast<double>(targets));
  T total(0.0);

  auto trainable = [&](int idx) { return idx >= 0 && !frozen[static_cast<std::size_t>(idx)]; };

  for (const auto* s : batch) {
    const std::size_t m = s->size() - 1;
    ChannelRun<T> cat_run, poi_run;
    if (use_cat) cat_run = run_channel<T>(a, l, p, Channel::kCategory, category_rows(*s, m));
    if (poi_task) poi_run = run_channel<T>(a, l, p, Channel::kPoi, poi_rows(*s, m, a.num_pois));

    std::vector<Vec<T>> d_cat(use_cat ? m : 0, Vec<T>(H, T(0.0)));
    std::vector<Vec<T>> d_poi(poi_task ? m : 0, Vec<T>(H, T(0.0)));

    if (!poi_task) {
      const auto hw = static_cast<std::size_t>(l.cat_head_w), hb = static_cast<std::size_t>(l.cat_head_b);
      for (std::size_t k = 0; k < m; ++k) {
        const auto& h = cat_run.layers.back().h[k];
        Vec<T> logits = p[hb];
        gemv_add<T>(p[hw], kNumCategories, a.hidden, h, logits);
        Vec<T> dl(logits.size());
        total += softmax_xent<T>(logits, s->category_seq[k + 1].category_id, scale, g ? &dl : nullptr);
        if (!g) continue;
        if (trainable(l.cat_head_w)) outer_add<T>((*g)[hw], kNumCategories, a.hidden, dl, h);
        if (trainable(l.cat_head_b)) {
          for (std::size_t j = 0; j < dl.size(); ++j) (*g)[hb][j] += dl[j];
        }
        gemv_t_add<T>(p[hw], kNumCategories, a.hidden, dl, d_cat[k]);
      }
    } else {
      const auto dw = static_cast<std::size_t>(l.decoder_w), db = static_cast<std::size_t>(l.decoder_b);
      const int width = use_cat ? 2 * a.hidden : a.hidden;
      const std::size_t first = task.all_prefix ? 0 : m - 1;
      for (std::size_t k = first; k < m; ++k) {
        Vec<T> z;
        z.reserve(static_cast<std::size_t>(width));
        if (use_cat) z = cat_run.layers.back().h[k];
        const auto& hp = poi_run.layers.back().h[k];
        z.insert(z.end(), hp.begin(), hp.end());
        Vec<T> logits = p[db];
        gemv_add<T>(p[dw], a.num_pois, width, z, logits);
        Vec<T> dl(logits.size());
        total += softmax_xent<T>(logits, s->poi_seq[k + 1].poi_id, scale, g ? &dl : nullptr);
        if (!g) continue;
        if (trainable(l.decoder_w)) outer_add<T>((*g)[dw], a.num_pois, width, dl, z);
        if (trainable(l.decoder_b)) {
          for (std::size_t j = 0; j < dl.size(); ++j) (*g)[db][j] += dl[j];
        }
        Vec<T> dz(static_cast<std::size_t>(width), T(0.0));
        gemv_t_add<T>(p[dw], a.num_pois, width, dl, dz);
        const std::size_t off = use_cat ? H : 0;
        for (std::size_t j = 0; j < H; ++j) {
          if (use_cat) d_cat[k][j] += dz[j];
          d_poi[k][j] += dz[off + j];
        }
      }
    }
    if (!g) continue;
    if (use_cat) backward_channel<T>(a, l, p, Channel::kCategory, cat_run, std::move(d_cat), *g, frozen);
    if (poi_task) backward_channel<T>(a, l, p, Channel::kPoi, poi_run, std::move(d_poi), *g, frozen);
  }
  return total * scale;
}

Params<double> zeros_like(const ModelState& s) {
  Params<double> z;
  for (const auto& t : s.values) z.emplace_back(t.size(), 0.0);
  return z;
}

void add_rnn(Layout& l, std::vector<int>& idx, const std::string& prefix, int layers, int in, int hid) {
  for (int k = 0; k < layers; ++k) {
    idx.push_back(static_cast<int>(l.tensors.size()));
    const std::string base = prefix + std::to_string(k) + ".";
    const int width = k == 0 ? in : hid;
    l.tensors.push_back({base + "W", 4 * hid, width});
    l.tensors.push_back({base + "U", 4 * hid, hid});
    l.tensors.push_back({base + "b", 4 * hid, 1});
  }
}

}  // namespace

Layout make_layout(const Architecture& a) {
  if (a.embed_dim <= 0 || a.hidden <= 0) throw ShapeError("embedding and hidden sizes must be positive");
  if (a.cat_layers < 0 || a.poi_layers < 0) throw ShapeError("negative layer count");
  if (!a.has_category_channel() && !a.has_poi_channel()) throw ShapeError("model has no channel");
  if (a.has_poi_channel() && a.num_pois <= 0) throw ShapeError("POI channel needs a POI vocabulary");
  Layout l;
  auto add = [&](std::string name, int rows, int cols) {
    l.tensors.push_back({std::move(name), rows, cols});
    return static_cast<int>(l.tensors.size()) - 1;
  };
  if (a.has_category_channel()) {
    l.cat_embed = add("cat.embed.category", kNumCategories, a.embed_dim);
    l.cat_time = add("cat.embed.time", kNumTimeSlots, a.embed_dim);
    add_rnn(l, l.cat_rnn, "cat.rnn.", a.cat_layers, 2 * a.embed_dim, a.hidden);
    l.cat_head_w = add("cat.head.W", kNumCategories, a.hidden);
    l.cat_head_b = add("cat.head.b", kNumCategories, 1);
  }
  if (a.has_poi_channel()) {
    l.poi_embed = add("poi.embed.poi", a.num_pois, a.embed_dim);
    l.dist_embed = add("poi.embed.dist", kNumDistanceBuckets, a.embed_dim);
    l.poi_time = add("poi.embed.time", kNumTimeSlots, a.embed_dim);
    add_rnn(l, l.poi_rnn, "poi.rnn.", a.poi_layers, 3 * a.embed_dim, a.hidden);
    const int width = a.has_category_channel() ? 2 * a.hidden : a.hidden;
    l.decoder_w = add("decoder.W", a.num_pois, width);
    l.decoder_b = add("decoder.b", a.num_pois, 1);
  }
  return l;
}

int ModelState::find(const std::string& name) const {
  for (std::size_t i = 0; i < layout.tensors.size(); ++i) {
    if (layout.tensors[i].name == name) return static_cast<int>(i);
  }
  return -1;
}

const std::vector<double>& ModelState::tensor(const std::string& name) const {
  const int i = find(name);
  if (i < 0) throw std::out_of_range("no parameter group '" + name + "'");
  return values[static_cast<std::size_t>(i)];
}

std::vector<double>& ModelState::tensor(const std::string& name) {
  const int i = find(name);
  if (i < 0) throw std::out_of_range("no parameter group '" + name + "'");
  return values[static_cast<std::size_t>(i)];
}

std::size_t ModelState::num_parameters() const {
  std::size_t n = 0;
  for (const auto& t : values) n += t.size();
  return n;
}

ModelState init_model(const Architecture& arch, std::uint64_t seed) {
  ModelState s;
  s.arch = arch;
  s.layout = make_layout(arch);
  std::mt19937_64 rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(arch.hidden));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (const auto& spec : s.layout.tensors) {
    std::vector<double> t(spec.size());
    for (double& x : t) x = dist(rng);
    s.values.push_back(std::move(t));
  }
  s.frozen.assign(s.values.size(), false);
  return s;
}

void copy_tensor(ModelState& dst, const std::string& dst_name, const ModelState& src,
                 const std::string& src_name) {
  auto& to = dst.tensor(dst_name);
  const auto& from = src.tensor(src_name);
  if (to.size() != from.size()) throw ShapeError("cannot copy " + src_name + " into " + dst_name);
  to = from;
}

std::vector<std::string> rnn_group_names(Channel channel, int layer) {
  const std::string base = (channel == Channel::kCategory ? "cat.rnn." : "poi.rnn.") + std::to_string(layer) + ".";
  return {base + "W", base + "U", base + "b"};
}

bool is_category_group(const std::string& name) { return name.rfind("cat.", 0) == 0; }

SequenceBatch as_batch(std::span<const DaySequencePair> sequences) {
  SequenceBatch b;
  b.reserve(sequences.size());
  for (const auto& s : sequences) b.push_back(&s);
  return b;
}

std::vector<double> embed_category_step(const ModelState& state, const CategoryStep& step) {
  if (!state.arch.has_category_channel()) throw ShapeError("model has no category channel");
  check_range(step.category_id, kNumCategories, "category");
  check_range(step.time_slot, kNumTimeSlots, "time slot");
  return embed_rows<double>(state.arch, state.values, channel_groups(state.layout, Channel::kCategory),
                            {{step.category_id, step.time_slot}})
      .front();
}

std::vector<double> embed_poi_step(const ModelState& state, const PoiStep& step) {
  if (!state.arch.has_poi_channel()) throw ShapeError("model has no POI channel");
  check_range(step.poi_id, state.arch.num_pois, "POI");
  check_range(step.distance_bucket, kNumDistanceBuckets, "distance bucket");
  check_range(step.time_slot, kNumTimeSlots, "time slot");
  return embed_rows<double>(state.arch, state.values, channel_groups(state.layout, Channel::kPoi),
                            {{step.poi_id, step.distance_bucket, step.time_slot}})
      .front();
}

EncodedSequence encode_sequence(const ModelState& state, Channel channel,
                                const std::vector<std::vector<double>>& embedded) {
  if (embedded.empty()) throw std::invalid_argument("cannot encode an empty sequence");
  const ChannelGroups cg = channel_groups(state.layout, channel);
  if (cg.rnn.empty()) throw ShapeError("channel has no recurrent layers");
  std::vector<Vec<double>> xs = embedded;
  int in = state.arch.embed_dim * static_cast<int>(cg.embeddings.size());
  for (int w : cg.rnn) {
    const auto wi = static_cast<std::size_t>(w);
    xs = lstm_forward<double>(state.values[wi], state.values[wi + 1], state.values[wi + 2], in,
                              state.arch.hidden, xs)
             .h;
    in = state.arch.hidden;
  }
  EncodedSequence out;
  out.final_state = xs.back();
  out.hidden_states = std::move(xs);
  return out;
}

std::vector<double> category_head_logits(const ModelState& state, std::span<const double> final_state) {
  if (!state.arch.has_category_channel()) throw ShapeError("model has no category head");
  if (static_cast<int>(final_state.size()) != state.arch.hidden) throw ShapeError("head input width mismatch");
  Vec<double> logits = state.values[static_cast<std::size_t>(state.layout.cat_head_b)];
  gemv_add<double>(state.values[static_cast<std::size_t>(state.layout.cat_head_w)], kNumCategories,
                   state.arch.hidden, final_state, logits);
  return logits;
}

std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw std::invalid_argument("softmax of empty vector");
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return out;
}

std::vector<double> decode_next_poi(const ModelState& state, std::span<const double> cat_final,
                                    std::span<const double> poi_final) {
  const Architecture& a = state.arch;
  if (!a.has_poi_channel()) throw ShapeError("model has no decoder");
  if (static_cast<int>(poi_final.size()) != a.hidden ||
      (a.has_category_channel() && static_cast<int>(cat_final.size()) != a.hidden)) {
    throw ShapeError("decoder input width mismatch");
  }
  Vec<double> z;
  if (a.has_category_channel()) z.assign(cat_final.begin(), cat_final.end());
  z.insert(z.end(), poi_final.begin(), poi_final.end());
  Vec<double> logits = state.values[static_cast<std::size_t>(state.layout.decoder_b)];
  gemv_add<double>(state.values[static_cast<std::size_t>(state.layout.decoder_w)], a.num_pois,
                   static_cast<int>(z.size()), z, logits);
  return softmax(logits);
}

double cross_entropy(std::span<const double> probs, int truth) {
  check_range(truth, static_cast<int>(probs.size()), "truth");
  return -std::log(std::max(probs[static_cast<std::size_t>(truth)], kProbabilityFloor));
}

std::vector<double> predict_next_poi(const ModelState& state, const DaySequencePair& seq) {
  if (seq.size() < 2) throw std::invalid_argument("sequence shorter than 2 steps");
  const std::size_t m = seq.size() - 1;
  std::vector<double> cat_final;
  if (state.arch.has_category_channel()) {
    cat_final = run_channel<double>(state.arch, state.layout, state.values, Channel::kCategory,
                                    category_rows(seq, m))
                    .layers.back()
                    .h.back();
  }
  const auto poi = run_channel<double>(state.arch, state.layout, state.values, Channel::kPoi,
                                       poi_rows(seq, m, state.arch.num_pois));
  return decode_next_poi(state, cat_final, poi.layers.back().h.back());
}

double compute_loss(const ModelState& state, const SequenceBatch& batch, TaskSpec task) {
  return forward_backward<double>(state.arch, state.layout, state.values, batch, task, nullptr, state.frozen);
}

GradientBundle compute_gradients(const ModelState& state, const SequenceBatch& batch, TaskSpec task) {
  GradientBundle b;
  b.grads = zeros_like(state);
  b.loss = forward_backward<double>(state.arch, state.layout, state.values, batch, task, &b.grads, state.frozen);
  return b;
}

std::vector<std::vector<double>> hessian_vector_product(const ModelState& state, const SequenceBatch& batch,
                                                        TaskSpec task,
                                                        const std::vector<std::vector<double>>& v) {
  if (v.size() != state.values.size()) throw ShapeError("tangent group count mismatch");
  Params<Dual> p(state.values.size());
  for (std::size_t g = 0; g < state.values.size(); ++g) {
    if (v[g].size() != state.values[g].size()) throw ShapeError("tangent shape mismatch");
    p[g].resize(state.values[g].size());
    for (std::size_t i = 0; i < p[g].size(); ++i) {
      p[g][i] = Dual(state.values[g][i], state.frozen[g] ? 0.0 : v[g][i]);
    }
  }
  Params<Dual> g(state.values.size());
  for (std::size_t k = 0; k < g.size(); ++k) g[k].assign(state.values[k].size(), Dual(0.0));
  forward_backward<Dual>(state.arch, state.layout, p, batch, task, &g, state.frozen);
  std::vector<std::vector<double>> hv(g.size());
  for (std::size_t k = 0; k < g.size(); ++k) {
    hv[k].resize(g[k].size());
    for (std::size_t i = 0; i < g[k].size(); ++i) hv[k][i] = state.frozen[k] ? 0.0 : g[k][i].d;
  }
  return hv;
}

ModelState apply_update(const ModelState& state, const GradientBundle& bundle, double lr) {
  if (bundle.grads.size() != state.values.size()) throw ShapeError("gradient bundle group count mismatch");
  ModelState next = state;
  if (lr == 0.0) return next;
  for (std::size_t g = 0; g < next.values.size(); ++g) {
    if (next.frozen[g]) continue;
    if (bundle.grads[g].size() != next.values[g].size()) throw ShapeError("gradient shape mismatch");
    auto& t = next.values[g];
    for (std::size_t i = 0; i < t.size(); ++i) t[i] -= lr * bundle.grads[g][i];
  }
  return next;
}

}  // namespace metapoi
