#include "airpcm/model.hpp"

#include <cmath>
#include <set>

#include "airpcm/error.hpp"

namespace airpcm {
namespace {

constexpr double kGatSlope = 0.2;

InitSpec xavier(std::size_t fan_in, std::size_t fan_out) {
  return {InitKind::kXavierUniform, fan_in, fan_out};
}
const InitSpec kZeros{InitKind::kZeros, 1, 1};
const InitSpec kOnes{InitKind::kOnes, 1, 1};

// [..., L, d] -> [..., H, L, d / H]
Tensor split_heads(const Tensor& x, std::size_t heads) {
  Shape s = x.shape();
  const std::size_t d = s.back();
  s.back() = heads;
  s.push_back(d / heads);
  const std::size_t lead = s.size() - 3;
  std::vector<std::size_t> axes;
  for (std::size_t i = 0; i < lead; ++i) axes.push_back(i);
  axes.insert(axes.end(), {lead + 1, lead, lead + 2});
  return permute(reshape(x, s), axes);
}

// [..., H, L, dk] -> [..., L, H * dk]
Tensor merge_heads(const Tensor& x) {
  const std::size_t lead = x.rank() - 3;
  std::vector<std::size_t> axes;
  for (std::size_t i = 0; i < lead; ++i) axes.push_back(i);
  axes.insert(axes.end(), {lead + 1, lead, lead + 2});
  Tensor y = permute(x, axes);
  Shape s(y.shape().begin(), y.shape().end() - 2);
  s.push_back(x.shape()[lead] * x.shape()[lead + 2]);
  return reshape(y, s);
}

struct Attended {
  Tensor out;
  Tensor weights;
};

Attended attend(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor* mask, double p,
                const ForwardOptions& opts) {
  const double scale_factor = 1.0 / std::sqrt(static_cast<double>(q.shape().back()));
  Tensor a = masked_softmax(scale(matmul(q, transpose_last(k)), scale_factor), mask);
  return {matmul(dropout(a, p, opts.training, opts.rng), v), a};
}

Tensor ffn(const Tensor& x, const ParameterSet& p, const std::string& prefix, double drop,
           const ForwardOptions& opts) {
  Tensor h = gelu(linear_embed(x, p[prefix + "w1"], p[prefix + "b1"]));
  return linear_embed(dropout(h, drop, opts.training, opts.rng), p[prefix + "w2"], p[prefix + "b2"]);
}

// Self or cross attention block followed by residual + layer norm and FFN + layer norm.
Tensor attention_block(const Tensor& query_in, const Tensor& kv_in, const ParameterSet& p,
                       const std::string& prefix, std::size_t heads, double drop,
                       const ForwardOptions& opts) {
  const Tensor q = split_heads(matmul(query_in, p[prefix + "msa.wq"]), heads);
  const Tensor k = split_heads(matmul(kv_in, p[prefix + "msa.wk"]), heads);
  const Tensor v = split_heads(matmul(kv_in, p[prefix + "msa.wv"]), heads);
  const Tensor att = merge_heads(attend(q, k, v, nullptr, drop, opts).out);
  const Tensor msa = linear_embed(att, p[prefix + "msa.wo"], p[prefix + "msa.bo"]);
  const Tensor z = layer_norm(query_in + msa, p[prefix + "ln1.gain"], p[prefix + "ln1.bias"]);
  return layer_norm(z + ffn(z, p, prefix + "ffn.", drop, opts), p[prefix + "ln2.gain"],
                    p[prefix + "ln2.bias"]);
}

void add_block(ParameterSet& ps, const std::string& prefix, std::size_t d, std::mt19937_64& rng) {
  for (const char* m : {"msa.wq", "msa.wk", "msa.wv", "msa.wo"}) ps.add(prefix + m, {d, d}, xavier(d, d), rng);
  ps.add(prefix + "msa.bo", {d}, kZeros, rng);
  ps.add(prefix + "ln1.gain", {d}, kOnes, rng);
  ps.add(prefix + "ln1.bias", {d}, kZeros, rng);
  ps.add(prefix + "ffn.w1", {d, 2 * d}, xavier(d, 2 * d), rng);
  ps.add(prefix + "ffn.b1", {2 * d}, kZeros, rng);
  ps.add(prefix + "ffn.w2", {2 * d, d}, xavier(2 * d, d), rng);
  ps.add(prefix + "ffn.b2", {d}, kZeros, rng);
  ps.add(prefix + "ln2.gain", {d}, kOnes, rng);
  ps.add(prefix + "ln2.bias", {d}, kZeros, rng);
}

void add_mscm(ParameterSet& ps, const std::string& prefix, std::size_t channels,
              const AirPCMConfig& c, std::mt19937_64& rng) {
  const std::size_t d = c.d_h;
  const std::size_t dg = d / c.gat_heads;
  ps.add(prefix + "conv_in.kernel", {d, channels, 1, 3}, xavier(3 * channels, 3 * d), rng);
  ps.add(prefix + "conv_in.bias", {d, 1}, kZeros, rng);
  ps.add(prefix + "gat.weight", {d, d}, xavier(d, d), rng);
  ps.add(prefix + "gat.attn_src", {c.gat_heads, dg, 1}, xavier(dg, 1), rng);
  ps.add(prefix + "gat.attn_dst", {c.gat_heads, dg, 1}, xavier(dg, 1), rng);
  ps.add(prefix + "gat.bias", {d}, kZeros, rng);
  add_block(ps, prefix, d, rng);
  ps.add(prefix + "conv_out.kernel", {channels, d, 1, 3}, xavier(3 * d, 3 * channels), rng);
  ps.add(prefix + "conv_out.bias", {channels, 1}, kZeros, rng);
}

template <typename F>
auto in_stage(const char* stage, F&& f) {
  try {
    return f();
  } catch (const ShapeError& e) {
    throw ShapeError(std::string(stage) + ": " + e.what());
  } catch (const NumericError& e) {
    throw NumericError(std::string(stage) + ": " + e.what());
  }
}

}  // namespace

void AirPCMConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("model config: " + what);
  };
  require(stations > 0 && pollutants > 0 && meteorology > 0, "N, K and C must be positive");
  require(tau > 0 && kappa > 0, "tau and kappa must be positive");
  require(d_h > 0 && d_p > 0 && n_heads > 0 && gat_heads > 0 && depth > 0,
          "widths, heads and depth must be positive");
  require(patch_len > 0 && patch_len <= tau, "patch_len must lie in [1, tau]");
  require(patch_stride > 0 && patch_stride <= patch_len, "patch_stride must lie in [1, patch_len]");
  require(omega() <= tau, "causal_window must not exceed tau");
  require(d_p % n_heads == 0, "d_p must be divisible by n_heads");
  require(d_h % n_heads == 0, "d_h must be divisible by n_heads");
  require(d_h % gat_heads == 0, "d_h must be divisible by gat_heads");
  require(dropout >= 0.0 && dropout < 1.0, "dropout must lie in [0, 1)");
  require(k_neighbors > 0, "k_neighbors must be positive");
}

void AirPCMConfig::merge_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  const std::set<std::string> known{"stations", "pollutants", "meteorology", "tau",
                                    "kappa", "d_h", "d_p", "patch_len",
                                    "patch_stride", "causal_window", "n_heads", "depth",
                                    "gat_heads", "dropout", "k_neighbors"};
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw ConfigError("model config: unknown key '" + key + "'");
  }
  try {
    stations = j.value("stations", stations);
    pollutants = j.value("pollutants", pollutants);
    meteorology = j.value("meteorology", meteorology);
    tau = j.value("tau", tau);
    kappa = j.value("kappa", kappa);
    d_h = j.value("d_h", d_h);
    d_p = j.value("d_p", d_p);
    patch_len = j.value("patch_len", patch_len);
    patch_stride = j.value("patch_stride", patch_stride);
    causal_window = j.value("causal_window", causal_window);
    n_heads = j.value("n_heads", n_heads);
    depth = j.value("depth", depth);
    gat_heads = j.value("gat_heads", gat_heads);
    dropout = j.value("dropout", dropout);
    k_neighbors = j.value("k_neighbors", k_neighbors);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
}

nlohmann::json AirPCMConfig::to_json() const {
  return {{"stations", stations},    {"pollutants", pollutants},
          {"meteorology", meteorology}, {"tau", tau},
          {"kappa", kappa},          {"d_h", d_h},
          {"d_p", d_p},              {"patch_len", patch_len},
          {"patch_stride", patch_stride}, {"causal_window", omega()},
          {"n_heads", n_heads},      {"depth", depth},
          {"gat_heads", gat_heads},  {"dropout", dropout},
          {"k_neighbors", k_neighbors}};
}

AirPCMWeights init_weights(const AirPCMConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  AirPCMWeights w{config, {}};
  auto& ps = w.params;
  const auto& c = config;
  add_mscm(ps, "mscm.pol.", c.pollutants, c, rng);
  add_mscm(ps, "mscm.met.", c.meteorology, c, rng);

  const std::size_t dp = c.d_p;
  ps.add("pe.patch.weight", {c.patch_len, dp}, xavier(c.patch_len, dp), rng);
  ps.add("pe.patch.bias", {dp}, kZeros, rng);
  ps.add("pe.pos.weight", {1, dp}, xavier(1, dp), rng);
  ps.add("pe.time.weight", {4, dp}, xavier(4, dp), rng);

  ps.add("mptc.met.weight", {1, dp}, xavier(1, dp), rng);
  ps.add("mptc.met.bias", {dp}, kZeros, rng);
  ps.add("mptc.var_embed", {c.meteorology, 1, dp}, xavier(1, dp), rng);
  ps.add("mptc.lag_embed", {c.omega(), dp}, xavier(1, dp), rng);
  for (const char* m : {"mptc.wq", "mptc.wk", "mptc.wv", "mptc.wo"}) {
    ps.add(m, {dp, dp}, xavier(dp, dp), rng);
  }

  ps.add("deco.fuse.weight", {2 * dp, dp}, xavier(2 * dp, dp), rng);
  ps.add("deco.fuse.bias", {dp}, kZeros, rng);
  for (std::size_t l = 0; l < c.depth; ++l) add_block(ps, "deco.block" + std::to_string(l) + ".", dp, rng);
  ps.add("deco.adapter.weight", {c.pollutants, dp, dp}, xavier(dp, dp), rng);
  ps.add("deco.adapter.bias", {c.pollutants, 1, dp}, kZeros, rng);
  const std::size_t flat = c.n_patches() * dp;
  ps.add("deco.head.weight", {c.pollutants, flat, c.kappa}, xavier(flat, c.kappa), rng);
  ps.add("deco.head.bias", {c.pollutants, 1, c.kappa}, kZeros, rng);
  return w;
}

Tensor patch_time_features(UnixSeconds window_start, double dt_hours, const AirPCMConfig& config) {
  const std::size_t np = config.n_patches();
  std::vector<double> v;
  v.reserve(np * 4);
  for (std::size_t i = 0; i < np; ++i) {
    const auto step = static_cast<double>(i * config.patch_stride);
    const CivilTime t = to_civil(window_start + hours_to_seconds(step * dt_hours));
    v.insert(v.end(), {t.year / 2000.0, t.month / 12.0, t.day / 31.0, t.hour / 24.0});
  }
  return Tensor({np, 4}, std::move(v));
}

ModelInput make_input(const std::vector<const WindowSample*>& windows, const AirPCMConfig& config) {
  if (windows.empty()) throw ShapeError("make_input needs at least one window");
  const std::size_t b = windows.size();
  const auto& first = *windows.front();
  const std::size_t n = first.past_pollutants.stations;
  const std::size_t k = first.past_pollutants.channels;
  const std::size_t c = first.past_meteorology.channels;
  const std::size_t tau = first.past_pollutants.steps;
  if (n != config.stations || k != config.pollutants || c != config.meteorology || tau != config.tau) {
    throw ShapeError("window of " + std::to_string(n) + " stations, " + std::to_string(k) +
                     " pollutants, " + std::to_string(c) + " met variables and tau=" +
                     std::to_string(tau) + " does not match the model config");
  }
  std::vector<double> pol, met, tf;
  pol.reserve(b * n * k * tau);
  met.reserve(b * n * c * tau);
  for (const auto* w : windows) {
    if (w->past_pollutants.values.size() != n * k * tau ||
        w->past_meteorology.values.size() != n * c * tau) {
      throw ShapeError("windows in one batch must share their shapes");
    }
    pol.insert(pol.end(), w->past_pollutants.values.begin(), w->past_pollutants.values.end());
    met.insert(met.end(), w->past_meteorology.values.begin(), w->past_meteorology.values.end());
    const Tensor f = patch_time_features(w->start_time, w->dt_hours, config);
    tf.insert(tf.end(), f.data().begin(), f.data().end());
  }
  return {Tensor({b, n, k, tau}, std::move(pol)), Tensor({b, n, c, tau}, std::move(met)),
          Tensor({b, config.n_patches(), 4}, std::move(tf))};
}

Tensor stack_targets(const std::vector<const WindowSample*>& windows) {
  if (windows.empty()) throw ShapeError("stack_targets needs at least one window");
  const auto& f = windows.front()->future_pollutants;
  std::vector<double> v;
  v.reserve(windows.size() * f.values.size());
  for (const auto* w : windows) {
    if (w->future_pollutants.values.size() != f.values.size()) {
      throw ShapeError("windows in one batch must share their shapes");
    }
    v.insert(v.end(), w->future_pollutants.values.begin(), w->future_pollutants.values.end());
  }
  return Tensor({windows.size(), f.stations, f.channels, f.steps}, std::move(v));
}

Tensor gat_mask(const StationGraph& graph) {
  const std::size_t n = graph.size();
  return Tensor({n, n}, graph.adjacency(true));
}

Tensor gat_forward(const Tensor& h, const Tensor& mask, const AirPCMWeights& w,
                   const std::string& prefix) {
  const auto& p = w.params;
  const Tensor wh = split_heads(matmul(h, p[prefix + "weight"]), w.config.gat_heads);
  const Tensor src = matmul(wh, p[prefix + "attn_src"]);
  const Tensor dst = matmul(wh, p[prefix + "attn_dst"]);
  // e[i, j] scores how much station i takes from station j.
  const Tensor e = leaky_relu(src + transpose_last(dst), kGatSlope);
  const Tensor a = masked_softmax(e, &mask);
  return elu(merge_heads(matmul(a, wh)) + p[prefix + "bias"]);
}

Tensor mscm_forward(const Tensor& x, const StationGraph& graph, const AirPCMWeights& w, Branch branch,
                    const ForwardOptions& opts) {
  const auto& c = w.config;
  if (x.rank() == 3) {
    Shape s = x.shape();
    s.insert(s.begin(), 1);
    const Tensor y = mscm_forward(reshape(x, s), graph, w, branch, opts);
    return reshape(y, x.shape());
  }
  const std::size_t channels = branch == Branch::kPollutant ? c.pollutants : c.meteorology;
  if (x.rank() != 4 || x.shape()[2] != channels || x.shape()[3] != c.tau) {
    throw ShapeError("mscm input " + to_string(x.shape()) + " does not match config (D=" +
                     std::to_string(channels) + ", tau=" + std::to_string(c.tau) + ")");
  }
  if (x.shape()[1] != graph.size()) {
    throw ShapeError("mscm input has " + std::to_string(x.shape()[1]) + " stations but the graph has " +
                     std::to_string(graph.size()));
  }
  const std::string prefix = branch == Branch::kPollutant ? "mscm.pol." : "mscm.met.";
  const auto& p = w.params;

  Tensor h = conv2d(x, p[prefix + "conv_in.kernel"]) + p[prefix + "conv_in.bias"];
  h = permute(h, {0, 3, 1, 2});  // B x tau x N x d_h
  const Tensor h_graph = gat_forward(h, gat_mask(graph), w, prefix + "gat.");
  const Tensor z = attention_block(h, h_graph, p, prefix, c.n_heads, c.dropout, opts);
  const Tensor back = permute(z, {0, 2, 3, 1});  // B x N x d_h x tau
  return conv2d(back, p[prefix + "conv_out.kernel"]) + p[prefix + "conv_out.bias"];
}

std::vector<std::size_t> patch_indices(const AirPCMConfig& config) {
  if (config.patch_len > config.tau) {
    throw ShapeError("patch length " + std::to_string(config.patch_len) +
                     " exceeds sequence length " + std::to_string(config.tau));
  }
  const std::size_t np = config.n_patches();
  std::vector<std::size_t> idx;
  idx.reserve(np * config.patch_len);
  for (std::size_t i = 0; i < np; ++i) {
    for (std::size_t u = 0; u < config.patch_len; ++u) {
      idx.push_back(std::min(i * config.patch_stride + u, config.tau - 1));
    }
  }
  return idx;
}

Tensor patchify(const Tensor& x, const AirPCMConfig& config) {
  if (x.shape().back() != config.tau) {
    throw ShapeError("patchify expects a trailing axis of " + std::to_string(config.tau) + ", got " +
                     to_string(x.shape()));
  }
  Shape s = x.shape();
  s.back() = config.n_patches();
  s.push_back(config.patch_len);
  return reshape(gather(x, -1, patch_indices(config)), s);
}

Tensor embed_patches(const Tensor& patches, const Tensor& time_features, const AirPCMWeights& w) {
  const auto& c = w.config;
  const auto& p = w.params;
  const std::size_t np = c.n_patches();
  if (patches.rank() != 5 || time_features.rank() != 3 || time_features.shape()[1] != np ||
      time_features.shape()[0] != patches.shape()[0]) {
    throw ShapeError("embed_patches got patches " + to_string(patches.shape()) + " and time features " +
                     to_string(time_features.shape()));
  }
  std::vector<double> pos(np);
  for (std::size_t i = 0; i < np; ++i) pos[i] = static_cast<double>(i);
  const Tensor content = linear_embed(patches, p["pe.patch.weight"], p["pe.patch.bias"]);
  const Tensor position = matmul(Tensor({np, 1}, pos), p["pe.pos.weight"]);
  const std::size_t b = time_features.shape()[0];
  const Tensor time =
      reshape(matmul(time_features, p["pe.time.weight"]), {b, 1, 1, np, c.d_p});
  return content + position + time;
}

CausalMask build_causal_mask(const AirPCMConfig& config) {
  CausalMask m;
  m.rows = config.n_patches();
  m.cols = config.omega();
  m.tau = config.tau;
  m.values.assign(m.rows * m.cols, 0.0);
  m.fallback.assign(m.rows, false);
  const std::size_t offset = config.tau - m.cols;
  for (std::size_t i = 0; i < m.rows; ++i) {
    const std::size_t e = std::min(i * config.patch_stride + config.patch_len - 1, config.tau - 1);
    m.last_step.push_back(e);
    bool any = false;
    for (std::size_t j = 0; j < m.cols; ++j) {
      if (offset + j <= e) {
        m.values[i * m.cols + j] = 1.0;
        any = true;
      }
    }
    if (!any) {
      m.values[i * m.cols] = 1.0;
      m.fallback[i] = true;
    }
  }
  return m;
}

MptcResult mptc_forward(const Tensor& p_emb, const Tensor& m_window, const CausalMask& mask,
                        const AirPCMWeights& w, const ForwardOptions& opts) {
  const auto& c = w.config;
  const auto& p = w.params;
  if (m_window.rank() != 4 || m_window.shape()[3] != mask.cols || mask.cols != c.omega()) {
    throw ShapeError("causal window " + to_string(m_window.shape()) + " does not hold omega=" +
                     std::to_string(c.omega()) + " steps");
  }
  if (p_emb.rank() != 5 || p_emb.shape()[3] != mask.rows || p_emb.shape()[0] != m_window.shape()[0] ||
      p_emb.shape()[1] != m_window.shape()[1]) {
    throw ShapeError("mptc got p_emb " + to_string(p_emb.shape()) + " and met window " +
                     to_string(m_window.shape()));
  }
  const std::size_t b = p_emb.shape()[0], n = p_emb.shape()[1], k = p_emb.shape()[2];
  const std::size_t np = mask.rows, cm = m_window.shape()[2], om = mask.cols, dp = c.d_p;

  Tensor p_met = matmul(reshape(m_window, {b, n, cm, om, 1}), p["mptc.met.weight"]);
  p_met = p_met + p["mptc.met.bias"] + p["mptc.var_embed"] + p["mptc.lag_embed"];
  p_met = reshape(p_met, {b, n, cm * om, dp});

  const Tensor q = split_heads(matmul(reshape(p_emb, {b, n, k * np, dp}), p["mptc.wq"]), c.n_heads);
  const Tensor kk = split_heads(matmul(p_met, p["mptc.wk"]), c.n_heads);
  const Tensor v = split_heads(matmul(p_met, p["mptc.wv"]), c.n_heads);

  std::vector<double> full(k * np * cm * om);
  for (std::size_t kp = 0; kp < k; ++kp) {
    for (std::size_t i = 0; i < np; ++i) {
      for (std::size_t cc = 0; cc < cm; ++cc) {
        for (std::size_t j = 0; j < om; ++j) {
          full[((kp * np + i) * cm + cc) * om + j] = mask.at(i, j);
        }
      }
    }
  }
  const Tensor mask_t({k * np, cm * om}, std::move(full));
  const Attended r = attend(q, kk, v, &mask_t, c.dropout, opts);
  const Tensor out = matmul(merge_heads(r.out), p["mptc.wo"]);
  return {reshape(out, {b, n, k, np, dp}), r.weights};
}

Tensor deco_forward(const Tensor& p_mcam, const Tensor& p_emb, const AirPCMWeights& w,
                    const ForwardOptions& opts) {
  const auto& c = w.config;
  const auto& p = w.params;
  if (p_mcam.shape() != p_emb.shape() || p_mcam.rank() != 5 || p_mcam.shape()[2] != c.pollutants ||
      p_mcam.shape()[3] != c.n_patches()) {
    throw ShapeError("deco got p_mcam " + to_string(p_mcam.shape()) + " and p_emb " +
                     to_string(p_emb.shape()));
  }
  const std::size_t b = p_mcam.shape()[0], n = p_mcam.shape()[1], k = p_mcam.shape()[2];
  Tensor x = linear_embed(concat({p_mcam, p_emb}, -1), p["deco.fuse.weight"], p["deco.fuse.bias"]);
  for (std::size_t l = 0; l < c.depth; ++l) {
    x = attention_block(x, x, p, "deco.block" + std::to_string(l) + ".", c.n_heads, c.dropout, opts);
  }
  const Tensor a = gelu(matmul(x, p["deco.adapter.weight"]) + p["deco.adapter.bias"]);
  const Tensor flat = reshape(a, {b, n, k, 1, c.n_patches() * c.d_p});
  const Tensor y = matmul(flat, p["deco.head.weight"]) + p["deco.head.bias"];
  return reshape(y, {b, n, k, c.kappa});
}

ForwardResult forward(const ModelInput& input, const StationGraph& graph, const AirPCMWeights& w,
                      const ForwardOptions& opts) {
  const auto& c = w.config;
  const Tensor x = in_stage("mscm (pollutant)", [&] {
    return mscm_forward(input.pollutants, graph, w, Branch::kPollutant, opts);
  });
  const Tensor m = in_stage("mscm (meteorology)", [&] {
    return mscm_forward(input.meteorology, graph, w, Branch::kMeteorology, opts);
  });
  const Tensor p_emb = in_stage("patch embedding", [&] {
    return embed_patches(patchify(x, c), input.time_features, w);
  });
  const MptcResult r = in_stage("mptc", [&] {
    const Tensor window = slice(m, -1, c.tau - c.omega(), c.omega());
    return mptc_forward(p_emb, window, build_causal_mask(c), w, opts);
  });
  const Tensor y = in_stage("deco", [&] { return deco_forward(r.p_mcam, p_emb, w, opts); });
  return {y, p_emb, r.p_mcam, r.attention};
}

}  // namespace airpcm
