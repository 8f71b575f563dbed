// SPDX-License-Identifier: Apache-2.0
#include "shapectl/network.hpp"

#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <random>

#include "shapectl/errors.hpp"

namespace shapectl {

namespace {

using ad::Tape;
using ad::Var;

enum Layer { kExpertLayer = 0, kGruLayer = 1, kPredLayer = 2, kGateLayer = 3 };

void check_finite(const Mat& m, int layer) {
  if (!m.allFinite()) throw NumericFault("network: non-finite activation", layer);
}

void init_linear(LinearLayer& l, int out, int in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::uniform_real_distribution<double> u(-bound, bound);
  l.w.resize(out, in);
  l.b.resize(out, 1);
  for (Eigen::Index i = 0; i < l.w.size(); ++i) l.w.data()[i] = u(rng);
  for (Eigen::Index i = 0; i < l.b.size(); ++i) l.b.data()[i] = u(rng);
}

void init_gru(GruParams& g, int in, int hidden, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  std::uniform_real_distribution<double> u(-bound, bound);
  auto fill = [&](Mat& m, int r, int c) {
    m.resize(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  };
  fill(g.w_ih, 3 * hidden, in);
  fill(g.w_hh, 3 * hidden, hidden);
  fill(g.b_ih, 3 * hidden, 1);
  fill(g.b_hh, 3 * hidden, 1);
}

template <typename P, typename Fn>
void visit_params(P& p, Fn&& fn) {
  for (std::size_t i = 0; i < p.experts.size(); ++i) {
    auto& e = p.experts[i];
    const std::string pre = "expert" + std::to_string(i) + ".";
    fn(pre + "input.w", e.input.w);
    fn(pre + "input.b", e.input.b);
    for (int k = 0; k < 2; ++k) {
      const std::string bp = pre + "block" + std::to_string(k) + ".";
      fn(bp + "linear.w", e.block[k].w);
      fn(bp + "linear.b", e.block[k].b);
      fn(bp + "norm.gamma", e.norm[k].gamma);
      fn(bp + "norm.beta", e.norm[k].beta);
    }
  }
  for (auto [name, g] : {std::pair{"gru_fwd.", &p.gru_fwd}, std::pair{"gru_bwd.", &p.gru_bwd}}) {
    fn(std::string(name) + "w_ih", g->w_ih);
    fn(std::string(name) + "w_hh", g->w_hh);
    fn(std::string(name) + "b_ih", g->b_ih);
    fn(std::string(name) + "b_hh", g->b_hh);
  }
  for (auto [name, h] :
       {std::pair{"pred_head.", &p.pred_head}, std::pair{"gate_head.", &p.gate_head}}) {
    fn(std::string(name) + "hidden.w", h->hidden.w);
    fn(std::string(name) + "hidden.b", h->hidden.b);
    fn(std::string(name) + "out.w", h->out.w);
    fn(std::string(name) + "out.b", h->out.b);
  }
}

// Parameter leaves for one pass. Shared tensors get one leaf so their
// adjoints accumulate across segments.
class Binder {
 public:
  Binder(Tape& t, NetworkParams* grads) : t_(t), g_(grads) {}
  Var operator()(const Mat& value, Mat* grad) { return t_.param(value, g_ ? grad : nullptr); }

 private:
  Tape& t_;
  NetworkParams* g_;
};

Var linear(Tape& t, Var w, Var b, Var x) { return t.add_bias(t.matmul(w, x), b); }

struct GruVars {
  Var w_ih, w_hh, b_ih, b_hh;
};

Var gru_step(Tape& t, const GruVars& g, Var x, Var h, int hidden) {
  const Var gi = linear(t, g.w_ih, g.b_ih, x);
  const Var gh = linear(t, g.w_hh, g.b_hh, h);
  const Var r = t.sigmoid(t.add(t.slice_rows(gi, 0, hidden), t.slice_rows(gh, 0, hidden)));
  const Var z =
      t.sigmoid(t.add(t.slice_rows(gi, hidden, hidden), t.slice_rows(gh, hidden, hidden)));
  const Var n = t.tanh(t.add(t.slice_rows(gi, 2 * hidden, hidden),
                             t.mul(r, t.slice_rows(gh, 2 * hidden, hidden))));
  return t.add(t.mul(t.one_minus(z), n), t.mul(z, h));
}

}  // namespace

void NetworkDims::validate() const {
  if (n_segments < 1 || expert_width < 1 || gru_width < 1 || head_width < 1)
    throw InvalidInput("network: all widths must be >= 1");
}

void NetworkParams::for_each(const std::function<void(const std::string&, Mat&)>& fn) {
  visit_params(*this, fn);
}

void NetworkParams::for_each(const std::function<void(const std::string&, const Mat&)>& fn) const {
  visit_params(*this, fn);
}

NetworkParams NetworkParams::zeros_like() const {
  NetworkParams z = *this;
  z.for_each([](const std::string&, Mat& m) { m.setZero(); });
  return z;
}

std::size_t NetworkParams::parameter_count() const {
  std::size_t n = 0;
  for_each([&](const std::string&, const Mat& m) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

bool NetworkParams::all_finite() const {
  bool ok = std::isfinite(gate_bias) && input_mean.allFinite() && input_std.allFinite() &&
            output_scale.allFinite();
  for_each([&](const std::string&, const Mat& m) { ok = ok && m.allFinite(); });
  return ok;
}

NetworkParams init_params(std::uint64_t seed, const NetworkDims& dims) {
  dims.validate();
  std::mt19937_64 rng(seed);
  NetworkParams p;
  p.dims = dims;
  const int h = dims.expert_width;
  p.experts.resize(dims.n_segments);
  for (auto& e : p.experts) {
    init_linear(e.input, h, kStateWidth, rng);
    for (int k = 0; k < 2; ++k) {
      init_linear(e.block[k], h, h, rng);
      e.norm[k].gamma = Mat::Ones(h, 1);
      e.norm[k].beta = Mat::Zero(h, 1);
    }
  }
  init_gru(p.gru_fwd, h, dims.gru_width, rng);
  init_gru(p.gru_bwd, h, dims.gru_width, rng);
  for (HeadParams* head : {&p.pred_head, &p.gate_head}) {
    init_linear(head->hidden, dims.head_width, dims.z_width(), rng);
    init_linear(head->out, 3, dims.head_width, rng);
  }
  p.gate_bias = 2.0;
  return p;
}

NetworkParams init_params(std::uint64_t seed, const RobotGeometry& geo) {
  NetworkDims d;
  d.n_segments = geo.n_segments;
  return init_params(seed, d);
}

Mat encode_state(const JointVector& q, const Eigen::VectorXd& dq_hist,
                 const Eigen::VectorXd& dq_cmd, const ShapeState& shape,
                 const PhysicalJacobian& jac) {
  const int n = static_cast<int>(jac.local_blocks.size());
  if (q.size() != 2 * n || dq_hist.size() != 2 * n || dq_cmd.size() != 2 * n ||
      static_cast<int>(shape.local.size()) != n)
    throw InvalidInput("encode_state: dimension mismatch");
  Mat s(kStateWidth, n);
  for (int i = 0; i < n; ++i) {
    s(state_field::q, i) = q(2 * i);
    s(state_field::q + 1, i) = q(2 * i + 1);
    s(state_field::dq_hist, i) = dq_hist(2 * i);
    s(state_field::dq_hist + 1, i) = dq_hist(2 * i + 1);
    s(state_field::x_loc, i) = shape.local[i].x;
    s(state_field::x_loc + 1, i) = shape.local[i].y;
    s(state_field::x_loc + 2, i) = shape.local[i].theta;
    s(state_field::dq_cmd, i) = dq_cmd(2 * i);
    s(state_field::dq_cmd + 1, i) = dq_cmd(2 * i + 1);
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 2; ++c) s(state_field::j_phy + 2 * r + c, i) = jac.local_blocks[i](r, c);
  }
  return s;
}

SegmentStateFields decode_state(const Eigen::VectorXd& column) {
  if (column.size() != kStateWidth) throw InvalidInput("decode_state: expected 15 entries");
  SegmentStateFields f;
  f.q = column.segment<2>(state_field::q);
  f.dq_hist = column.segment<2>(state_field::dq_hist);
  f.x_loc = column.segment<3>(state_field::x_loc);
  f.dq_cmd = column.segment<2>(state_field::dq_cmd);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 2; ++c) f.j_phy(r, c) = column(state_field::j_phy + 2 * r + c);
  return f;
}

Mat normalize_states(const NetworkParams& params, const Mat& raw) {
  if (raw.rows() != kStateWidth) throw InvalidInput("normalize_states: expected 15 rows");
  return (raw.colwise() - params.input_mean).array().colwise() / params.input_std.array();
}

Mat denormalize_states(const NetworkParams& params, const Mat& normalized) {
  if (normalized.rows() != kStateWidth) throw InvalidInput("denormalize_states: expected 15 rows");
  return (normalized.array().colwise() * params.input_std.array()).matrix().colwise() +
         params.input_mean;
}

NetworkPass::NetworkPass(const NetworkParams& params, const std::vector<Mat>& states,
                         const std::vector<Mat>& dx_nom, NetworkParams* grads)
    : tape_(std::make_unique<Tape>()) {
  const NetworkDims& d = params.dims;
  const int n = d.n_segments;
  if (static_cast<int>(states.size()) != n || static_cast<int>(dx_nom.size()) != n ||
      static_cast<int>(params.experts.size()) != n)
    throw InvalidInput("network forward: segment count mismatch");
  const Eigen::Index batch = states.front().cols();
  for (int i = 0; i < n; ++i) {
    if (states[i].rows() != kStateWidth || states[i].cols() != batch || dx_nom[i].rows() != 3 ||
        dx_nom[i].cols() != batch)
      throw InvalidInput("network forward: input shape mismatch");
  }
  if (grads) {
    const std::size_t expected = params.parameter_count();
    if (grads->experts.size() != params.experts.size() || grads->parameter_count() != expected)
      throw InvalidInput("network forward: gradient container does not match parameters");
  }
  Tape& t = *tape_;
  Binder bind(t, grads);

  // Expert stage.
  std::vector<Var> x(n), h(n);
  for (int i = 0; i < n; ++i) {
    const ExpertParams& e = params.experts[i];
    ExpertParams* ge = grads ? &grads->experts[i] : nullptr;
    x[i] = t.constant(normalize_states(params, states[i]));
    Var a = linear(t, bind(e.input.w, ge ? &ge->input.w : nullptr),
                   bind(e.input.b, ge ? &ge->input.b : nullptr), x[i]);
    for (int k = 0; k < 2; ++k) {
      const Var lin = linear(t, bind(e.block[k].w, ge ? &ge->block[k].w : nullptr),
                             bind(e.block[k].b, ge ? &ge->block[k].b : nullptr), a);
      const Var nrm = t.layer_norm(lin, bind(e.norm[k].gamma, ge ? &ge->norm[k].gamma : nullptr),
                                   bind(e.norm[k].beta, ge ? &ge->norm[k].beta : nullptr));
      a = t.add(a, t.gelu(nrm));
    }
    check_finite(t.value(a), kExpertLayer);
    h[i] = a;
  }

  // Bidirectional GRU over the segment sequence.
  auto gru_vars = [&](const GruParams& g, GruParams* gg) {
    return GruVars{bind(g.w_ih, gg ? &gg->w_ih : nullptr), bind(g.w_hh, gg ? &gg->w_hh : nullptr),
                   bind(g.b_ih, gg ? &gg->b_ih : nullptr), bind(g.b_hh, gg ? &gg->b_hh : nullptr)};
  };
  const GruVars fwd = gru_vars(params.gru_fwd, grads ? &grads->gru_fwd : nullptr);
  const GruVars bwd = gru_vars(params.gru_bwd, grads ? &grads->gru_bwd : nullptr);
  const int gh = d.gru_width;
  std::vector<Var> hf(n), hb(n);
  Var state = t.constant(Mat::Zero(gh, batch));
  for (int i = 0; i < n; ++i) hf[i] = state = gru_step(t, fwd, h[i], state, gh);
  state = t.constant(Mat::Zero(gh, batch));
  for (int i = n - 1; i >= 0; --i) hb[i] = state = gru_step(t, bwd, h[i], state, gh);

  // Heads.
  auto head_vars = [&](const HeadParams& hp, HeadParams* g) {
    return std::array<Var, 4>{bind(hp.hidden.w, g ? &g->hidden.w : nullptr),
                              bind(hp.hidden.b, g ? &g->hidden.b : nullptr),
                              bind(hp.out.w, g ? &g->out.w : nullptr),
                              bind(hp.out.b, g ? &g->out.b : nullptr)};
  };
  const auto pv = head_vars(params.pred_head, grads ? &grads->pred_head : nullptr);
  const auto gv = head_vars(params.gate_head, grads ? &grads->gate_head : nullptr);
  dx_hybrid_.resize(n);
  dx_net_.resize(n);
  beta_.resize(n);
  bigru_.resize(n);
  z_.resize(n);
  for (int i = 0; i < n; ++i) {
    bigru_[i] = t.concat_rows({hf[i], hb[i]});
    check_finite(t.value(bigru_[i]), kGruLayer);
    z_[i] = t.concat_rows({h[i], bigru_[i], t.slice_rows(x[i], state_field::j_phy, 6)});
    const Var ph = t.gelu(linear(t, pv[0], pv[1], z_[i]));
    dx_net_[i] = t.scale_rows(linear(t, pv[2], pv[3], ph), params.output_scale);
    check_finite(t.value(dx_net_[i]), kPredLayer);
    const Var gh2 = t.gelu(linear(t, gv[0], gv[1], z_[i]));
    beta_[i] = t.sigmoid(t.add_scalar(linear(t, gv[2], gv[3], gh2), params.gate_bias));
    check_finite(t.value(beta_[i]), kGateLayer);
    const Var nom = t.constant(dx_nom[i]);
    dx_hybrid_[i] = t.add(t.mul(beta_[i], nom), t.mul(t.one_minus(beta_[i]), dx_net_[i]));
  }
}

ad::Tape& NetworkPass::tape() {
  if (!tape_) throw UsageError("network: no forward pass recorded");
  return *tape_;
}

void NetworkPass::backward(const std::vector<Mat>& g_hybrid, const std::vector<Mat>& g_net,
                           const std::vector<Mat>& g_beta) {
  if (!tape_) throw UsageError("network: backward called without a forward pass");
  std::vector<std::pair<ad::Var, Mat>> seeds;
  auto add = [&](const std::vector<Mat>& g, const std::vector<ad::Var>& vars) {
    if (g.empty()) return;
    if (g.size() != vars.size()) throw InvalidInput("network backward: segment count mismatch");
    for (std::size_t i = 0; i < g.size(); ++i) seeds.emplace_back(vars[i], g[i]);
  };
  add(g_hybrid, dx_hybrid_);
  add(g_net, dx_net_);
  add(g_beta, beta_);
  tape_->backward(seeds);
}

ForwardOutput forward(const NetworkParams& params, const std::vector<Mat>& states,
                      const std::vector<Mat>& dx_nom) {
  NetworkPass pass(params, states, dx_nom);
  ForwardOutput out;
  for (int i = 0; i < pass.n_segments(); ++i) {
    out.dx_hybrid.push_back(pass.value(pass.dx_hybrid(i)));
    out.dx_net.push_back(pass.value(pass.dx_net(i)));
    out.beta.push_back(pass.value(pass.beta(i)));
  }
  return out;
}

NetworkModel::NetworkModel(std::shared_ptr<const NetworkParams> params)
    : params_(std::move(params)) {
  if (!params_) throw UsageError("NetworkModel: null parameters");
}

DisplacementModel::Output NetworkModel::evaluate(const ModelContext& ctx,
                                                 const Eigen::MatrixXd& dq_cmd) const {
  const int n = params_->dims.n_segments;
  if (ctx.q.size() != 2 * n || dq_cmd.rows() != 2 * n)
    throw InvalidInput("NetworkModel: geometry does not match the checkpoint");
  const Eigen::Index batch = dq_cmd.cols();
  const Mat base = encode_state(ctx.q, ctx.dq_hist, Eigen::VectorXd::Zero(2 * n), ctx.shape, ctx.jac);
  std::vector<Mat> states(n), nom(n);
  for (int i = 0; i < n; ++i) {
    states[i] = base.col(i).replicate(1, batch);
    states[i].middleRows(state_field::dq_cmd, 2) = dq_cmd.middleRows(2 * i, 2);
    nom[i] = ctx.jac.local_blocks[i] * dq_cmd.middleRows(2 * i, 2);
  }
  const ForwardOutput f = forward(*params_, states, nom);
  Output out;
  out.dx_net.resize(3 * n, batch);
  out.beta.resize(3 * n, batch);
  for (int i = 0; i < n; ++i) {
    out.dx_net.middleRows(3 * i, 3) = f.dx_net[i];
    out.beta.middleRows(3 * i, 3) = f.beta[i];
  }
  return out;
}

namespace {

nlohmann::json vec_json(const Eigen::VectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

Eigen::VectorXd json_vec(const nlohmann::json& j, Eigen::Index expected, const char* what) {
  const auto v = j.get<std::vector<double>>();
  if (static_cast<Eigen::Index>(v.size()) != expected)
    throw ConfigError(std::string("checkpoint: wrong length for ") + what);
  return Eigen::Map<const Eigen::VectorXd>(v.data(), expected);
}

}  // namespace

void save_checkpoint(const NetworkParams& params, const std::string& path) {
  nlohmann::json j;
  j["format_version"] = kCheckpointFormatVersion;
  j["dims"] = {{"n_segments", params.dims.n_segments},
               {"expert_width", params.dims.expert_width},
               {"gru_width", params.dims.gru_width},
               {"head_width", params.dims.head_width}};
  j["gate_bias"] = params.gate_bias;
  j["input_mean"] = vec_json(params.input_mean);
  j["input_std"] = vec_json(params.input_std);
  j["output_scale"] = vec_json(params.output_scale);
  nlohmann::json tensors = nlohmann::json::array();
  params.for_each([&](const std::string& name, const Mat& m) {
    std::vector<double> row_major;
    row_major.reserve(static_cast<std::size_t>(m.size()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) row_major.push_back(m(r, c));
    tensors.push_back({{"name", name}, {"shape", {m.rows(), m.cols()}}, {"data", row_major}});
  });
  j["tensors"] = std::move(tensors);
  std::ofstream out(path);
  if (!out) throw Error("cannot write checkpoint '" + path + "'");
  out << j.dump();
  if (!out) throw Error("failed writing checkpoint '" + path + "'");
}

NetworkParams load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("checkpoint not found: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("checkpoint '" + path + "' is not valid JSON: " + e.what());
  }
  try {
    if (j.at("format_version").get<int>() != kCheckpointFormatVersion)
      throw ConfigError("checkpoint '" + path + "' has an unsupported format_version");
    NetworkDims d;
    const auto& jd = j.at("dims");
    d.n_segments = jd.at("n_segments").get<int>();
    d.expert_width = jd.at("expert_width").get<int>();
    d.gru_width = jd.at("gru_width").get<int>();
    d.head_width = jd.at("head_width").get<int>();
    NetworkParams p = init_params(0, d);
    p.gate_bias = j.at("gate_bias").get<double>();
    p.input_mean = json_vec(j.at("input_mean"), kStateWidth, "input_mean");
    p.input_std = json_vec(j.at("input_std"), kStateWidth, "input_std");
    p.output_scale = json_vec(j.at("output_scale"), 3, "output_scale");
    const auto& tensors = j.at("tensors");
    std::size_t idx = 0;
    p.for_each([&](const std::string& name, Mat& m) {
      if (idx >= tensors.size()) throw ConfigError("checkpoint: missing tensor " + name);
      const auto& t = tensors[idx++];
      if (t.at("name").get<std::string>() != name)
        throw ConfigError("checkpoint: expected tensor " + name);
      const auto shape = t.at("shape").get<std::vector<long>>();
      if (shape.size() != 2 || shape[0] != m.rows() || shape[1] != m.cols())
        throw ConfigError("checkpoint: wrong shape for " + name);
      const auto data = t.at("data").get<std::vector<double>>();
      if (static_cast<Eigen::Index>(data.size()) != m.size())
        throw ConfigError("checkpoint: wrong payload size for " + name);
      for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = data[r * m.cols() + c];
    });
    if (idx != tensors.size()) throw ConfigError("checkpoint: unexpected extra tensors");
    if (!p.all_finite()) throw ConfigError("checkpoint: non-finite values");
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("checkpoint '" + path + "' is malformed: " + e.what());
  }
}

}  // namespace shapectl
