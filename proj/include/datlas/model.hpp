#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "datlas/activations.hpp"
#include "datlas/errors.hpp"
#include "datlas/graph.hpp"
#include "datlas/losses.hpp"
#include "datlas/optim.hpp"
#include "datlas/rng.hpp"
#include "datlas/tensor.hpp"

namespace datlas {

// Shared temporal layer. `mlp` replaces the recurrence by a single ELU layer
// applied to the most recent input only.
enum class TemporalKind : std::uint32_t { srn = 0, lstm = 1, mlp = 2 };

inline const char* to_string(TemporalKind k) {
  switch (k) {
    case TemporalKind::srn: return "srn";
    case TemporalKind::lstm: return "lstm";
    case TemporalKind::mlp: return "mlp";
  }
  return "?";
}

inline constexpr double kScaleFloor = 1e-6;
// Binary probabilities are kept within [kProbFloor, 1 - kProbFloor].
inline constexpr double kProbFloor = 1e-12;

struct NetworkConfig {
  std::size_t num_covariates = 5;   // L
  std::size_t num_continuous = 2;   // C
  std::size_t num_binary = 6;       // D
  std::size_t num_events = 1;       // M
  TemporalKind temporal = TemporalKind::lstm;
  std::size_t state_size = 13;
  double dropout_rate = 0.3;
  bool task_layers = true;
  bool horizon_input = true;

  std::size_t longitudinal_width() const { return num_continuous + num_binary; }
  std::size_t input_width() const { return num_covariates + longitudinal_width(); }
  std::size_t task_width(std::size_t outputs) const { return (state_size + outputs + 1) / 2; }
  std::size_t continuous_task_width() const { return task_width(num_continuous); }
  std::size_t binary_task_width() const { return task_width(num_binary); }
  std::size_t event_task_width() const { return task_width(num_events); }
  // Width of the continuous/binary head input: h, plus tau when enabled.
  std::size_t horizon_head_width() const { return state_size + (horizon_input ? 1 : 0); }
  double keep_probability() const { return 1.0 - dropout_rate; }

  void validate() const {
    DATLAS_REQUIRE(num_covariates >= 1 && num_continuous >= 1 && num_binary >= 1 && num_events >= 1,
                   "network config: every variable family needs at least one member");
    DATLAS_REQUIRE(state_size >= 1, "network config: state_size must be positive");
    DATLAS_REQUIRE(dropout_rate >= 0.0 && dropout_rate < 1.0, "network config: dropout_rate must lie in [0, 1)");
    DATLAS_REQUIRE(static_cast<std::uint32_t>(temporal) <= 2, "network config: unknown temporal kind");
  }

  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

// Slot indices of a dense layer's weight and bias inside ModelParams.
struct LinearSlots {
  std::size_t weight = 0;
  std::size_t bias = 0;
};

struct ParamLayout {
  LinearSlots recurrent;                       // srn
  LinearSlots gate_input, gate_forget, gate_output, candidate;  // lstm
  LinearSlots base;                            // mlp
  LinearSlots task_continuous, task_binary, task_event;
  LinearSlots mu, sigma, p, lambda;
};

struct ParamSpec {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  bool is_bias = false;
  double bias_init = 0.0;
};

// Ordered tensor inventory for a configuration. The order fixes both the
// initialisation draw order and the checkpoint layout.
inline std::vector<ParamSpec> parameter_specs(const NetworkConfig& c, ParamLayout* layout = nullptr) {
  c.validate();
  std::vector<ParamSpec> specs;
  ParamLayout lay;
  const double unit_softplus = softplus_inverse(1.0);
  auto linear = [&](const std::string& name, std::size_t out, std::size_t in, double bias_init = 0.0) {
    LinearSlots s{specs.size(), specs.size() + 1};
    specs.push_back({name + ".W", out, in, false, 0.0});
    specs.push_back({name + ".a", out, 1, true, bias_init});
    return s;
  };
  const std::size_t in = c.input_width();
  const std::size_t S = c.state_size;
  switch (c.temporal) {
    case TemporalKind::srn:
      lay.recurrent = linear("rnn", S, in + S);
      break;
    case TemporalKind::lstm:
      lay.gate_input = linear("lstm.input", S, in + S);
      lay.gate_forget = linear("lstm.forget", S, in + S);
      lay.gate_output = linear("lstm.output", S, in + S);
      lay.candidate = linear("lstm.candidate", S, in + S);
      break;
    case TemporalKind::mlp:
      lay.base = linear("base", S, in);
      break;
  }
  const std::size_t head_in = c.horizon_head_width();
  std::size_t zc = head_in, zb = head_in, ze = S;
  if (c.task_layers) {
    zc = c.continuous_task_width();
    zb = c.binary_task_width();
    ze = c.event_task_width();
    lay.task_continuous = linear("task_c", zc, head_in);
    lay.task_binary = linear("task_b", zb, head_in);
    lay.task_event = linear("task_e", ze, S);
  }
  lay.mu = linear("out_mu", c.num_continuous, zc);
  lay.sigma = linear("out_sigma", c.num_continuous, zc, unit_softplus);
  lay.p = linear("out_p", c.num_binary, zb);
  lay.lambda = linear("out_lambda", c.num_events, ze, unit_softplus);
  if (layout) *layout = lay;
  return specs;
}

// Fixed affine maps between raw data units and network units. Inputs are
// standardised on the way in; mu and sigma are mapped back to raw units.
struct Standardization {
  std::vector<double> input_mean;
  std::vector<double> input_sd;
  std::vector<double> output_mean;
  std::vector<double> output_sd;
  std::vector<double> hazard_scale;  // per event, multiplies the softplus output

  static Standardization identity(const NetworkConfig& c) {
    return {std::vector<double>(c.input_width(), 0.0), std::vector<double>(c.input_width(), 1.0),
            std::vector<double>(c.num_continuous, 0.0), std::vector<double>(c.num_continuous, 1.0),
            std::vector<double>(c.num_events, 1.0)};
  }
  friend bool operator==(const Standardization&, const Standardization&) = default;
};

struct ModelParams {
  NetworkConfig config;
  ParamLayout layout;
  std::vector<std::string> names;
  std::vector<Tensor> tensors;
  Standardization scaling;

  std::optional<std::size_t> find(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return i;
    return std::nullopt;
  }
  const Tensor& operator[](std::size_t i) const { return tensors[i]; }
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const Tensor& t : tensors) n += t.size();
    return n;
  }
  std::vector<Tensor> zeros_like() const {
    std::vector<Tensor> g;
    g.reserve(tensors.size());
    for (const Tensor& t : tensors) g.emplace_back(t.rows(), t.cols());
    return g;
  }
  friend bool operator==(const ModelParams& a, const ModelParams& b) {
    return a.config == b.config && a.names == b.names && a.tensors == b.tensors && a.scaling == b.scaling;
  }
};

// Glorot-uniform weights, zero biases except the sigma and lambda heads,
// which start at softplus^-1(1) so both begin near one.
inline ModelParams init_params(const NetworkConfig& config, Rng& rng) {
  ModelParams p;
  p.config = config;
  const auto specs = parameter_specs(config, &p.layout);
  for (const ParamSpec& s : specs) {
    Tensor t(s.rows, s.cols);
    if (s.is_bias) {
      t.fill(s.bias_init);
    } else {
      const double limit = std::sqrt(6.0 / static_cast<double>(s.rows + s.cols));
      for (double& v : t.values()) v = rng.uniform(-limit, limit);
    }
    p.names.push_back(s.name);
    p.tensors.push_back(std::move(t));
  }
  p.scaling = Standardization::identity(config);
  return p;
}

// One forward pass worth of dropout masks; reused at every timestep.
struct DropoutMaskSet {
  std::vector<double> input;
  std::vector<double> state;
  std::vector<double> output;
  std::vector<double> task_continuous;
  std::vector<double> task_binary;
  std::vector<double> task_event;

  static DropoutMaskSet ones(const NetworkConfig& c) {
    DropoutMaskSet m;
    m.input.assign(c.input_width(), 1.0);
    m.state.assign(c.state_size, 1.0);
    m.output.assign(c.state_size, 1.0);
    m.task_continuous.assign(c.continuous_task_width(), 1.0);
    m.task_binary.assign(c.binary_task_width(), 1.0);
    m.task_event.assign(c.event_task_width(), 1.0);
    return m;
  }

  static DropoutMaskSet sample(const NetworkConfig& c, Rng& rng) {
    const double keep = c.keep_probability();
    DropoutMaskSet m;
    m.input = bernoulli_mask(rng, c.input_width(), keep);
    m.state = bernoulli_mask(rng, c.state_size, keep);
    m.output = bernoulli_mask(rng, c.state_size, keep);
    m.task_continuous = bernoulli_mask(rng, c.continuous_task_width(), keep);
    m.task_binary = bernoulli_mask(rng, c.binary_task_width(), keep);
    m.task_event = bernoulli_mask(rng, c.event_task_width(), keep);
    return m;
  }

  void check(const NetworkConfig& c) const {
    DATLAS_REQUIRE(input.size() == c.input_width() && state.size() == c.state_size &&
                       output.size() == c.state_size && task_continuous.size() == c.continuous_task_width() &&
                       task_binary.size() == c.binary_task_width() && task_event.size() == c.event_task_width(),
                   "dropout masks do not match the network configuration");
  }
  friend bool operator==(const DropoutMaskSet&, const DropoutMaskSet&) = default;
};

// Records the masks the temporal layer applied at each timestep.
struct ForwardTrace {
  struct Step {
    std::vector<double> input;
    std::vector<double> state;
    std::vector<double> output;
  };
  std::vector<Step> steps;
};

// ---------------------------------------------------------------------------
// Backends. The network below is written once against this small interface
// and instantiated for plain evaluation and for the reverse-mode graph.

class ValueOps {
 public:
  using Var = std::vector<double>;

  explicit ValueOps(const ModelParams& params) : params_(params) {}

  Var input(std::span<const double> v) { return Var(v.begin(), v.end()); }
  Var zeros(std::size_t n) { return Var(n, 0.0); }

  Var linear(const LinearSlots& s, const Var& x) {
    const Tensor& W = params_.tensors[s.weight];
    const Tensor& a = params_.tensors[s.bias];
    DATLAS_REQUIRE(W.cols() == x.size(), "linear: input width mismatch");
    Var out(W.rows());
    for (std::size_t i = 0; i < W.rows(); ++i) {
      double acc = 0.0;
      const double* row = &W.storage()[i * W.cols()];
      for (std::size_t j = 0; j < x.size(); ++j) acc += row[j] * x[j];
      out[i] = acc + a[i];
    }
    return out;
  }
  Var concat(const Var& a, const Var& b) {
    Var out(a);
    out.insert(out.end(), b.begin(), b.end());
    return out;
  }
  Var append_scalar(const Var& a, double s) {
    Var out(a);
    out.push_back(s);
    return out;
  }
  Var mask(const Var& a, std::span<const double> m) {
    Var out(a);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= m[i];
    return out;
  }
  Var hadamard(const Var& a, const Var& b) {
    Var out(a);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
    return out;
  }
  Var add(const Var& a, const Var& b) {
    Var out(a);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
    return out;
  }
  Var affine(const Var& a, std::span<const double> scale, std::span<const double> shift) {
    Var out(a);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] * scale[i] + (shift.empty() ? 0.0 : shift[i]);
    return out;
  }
  Var elu(Var a) { return map(std::move(a), [](double x) { return datlas::elu(x); }); }
  Var sigmoid(Var a) { return map(std::move(a), [](double x) { return datlas::sigmoid(x); }); }
  Var softplus(Var a) { return map(std::move(a), [](double x) { return datlas::softplus(x); }); }
  Var floor_at(Var a, double f) { return map(std::move(a), [f](double x) { return x > f ? x : f; }); }
  Var ceil_at(Var a, double c) { return map(std::move(a), [c](double x) { return x < c ? x : c; }); }

  std::vector<double> read(const Var& v) const { return v; }

 private:
  template <class F>
  static Var map(Var a, F f) {
    for (double& x : a) x = f(x);
    return a;
  }
  const ModelParams& params_;
};

class GraphOps {
 public:
  using Var = Graph::Node;

  GraphOps(Graph& graph, const ModelParams& params)
      : graph_(graph), params_(params), nodes_(params.tensors.size(), kUnset) {}

  Graph& graph() { return graph_; }

  Var input(std::span<const double> v) { return graph_.constant(v); }
  Var zeros(std::size_t n) { return graph_.constant(Tensor(n, 1)); }

  Var param(std::size_t slot) {
    if (nodes_[slot] == kUnset) nodes_[slot] = graph_.parameter(params_.tensors[slot], slot);
    return nodes_[slot];
  }
  Var linear(const LinearSlots& s, Var x) { return graph_.add(graph_.matmul(param(s.weight), x), param(s.bias)); }
  Var concat(Var a, Var b) { return graph_.concat(a, b); }
  Var append_scalar(Var a, double s) { return graph_.concat(a, graph_.constant(Tensor(1, 1, s))); }
  Var mask(Var a, std::span<const double> m) { return graph_.affine(a, m); }
  Var hadamard(Var a, Var b) { return graph_.mul(a, b); }
  Var add(Var a, Var b) { return graph_.add(a, b); }
  Var affine(Var a, std::span<const double> scale, std::span<const double> shift) {
    return graph_.affine(a, scale, shift);
  }
  Var elu(Var a) { return graph_.elu(a); }
  Var sigmoid(Var a) { return graph_.sigmoid(a); }
  Var softplus(Var a) { return graph_.softplus(a); }
  Var floor_at(Var a, double f) { return graph_.floor_at(a, f); }
  Var ceil_at(Var a, double c) { return graph_.ceil_at(a, c); }

  std::vector<double> read(Var v) const {
    const auto vals = graph_.value(v).values();
    return {vals.begin(), vals.end()};
  }

 private:
  static constexpr Graph::Node kUnset = static_cast<Graph::Node>(-1);
  Graph& graph_;
  const ModelParams& params_;
  std::vector<Graph::Node> nodes_;
};

// ---------------------------------------------------------------------------

template <class Ops>
struct RecurrentState {
  typename Ops::Var memory;
  typename Ops::Var cell;  // lstm only
};

template <class Ops>
struct HeadOutputs {
  typename Ops::Var mu, sigma, p, lambda;
};

// The three-section network over one backend and one fixed mask set.
template <class Ops>
class Network {
 public:
  using Var = typename Ops::Var;

  Network(Ops& ops, const ModelParams& params, const DropoutMaskSet& masks, ForwardTrace* trace = nullptr)
      : ops_(ops), params_(params), cfg_(params.config), lay_(params.layout), masks_(masks), trace_(trace) {
    masks_.check(cfg_);
  }

  RecurrentState<Ops> initial_state() {
    RecurrentState<Ops> s;
    s.memory = ops_.zeros(cfg_.state_size);
    if (cfg_.temporal == TemporalKind::lstm) s.cell = ops_.zeros(cfg_.state_size);
    return s;
  }

  // Standardises a raw [X_t, V_t] row into network units.
  std::vector<double> standardize(std::span<const double> raw) const {
    DATLAS_REQUIRE(raw.size() == cfg_.input_width(), "input row width does not match the network");
    std::vector<double> x(raw.size());
    const Standardization& s = params_.scaling;
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = (raw[i] - s.input_mean[i]) / s.input_sd[i];
    return x;
  }

  // Temporal layer on an already standardised input. Returns h_t and
  // replaces `state` with m_t (and the LSTM cell).
  Var step(std::span<const double> x, RecurrentState<Ops>& state) {
    DATLAS_REQUIRE(x.size() == cfg_.input_width(), "rnn_step: input width mismatch");
    if (trace_) trace_->steps.push_back({masks_.input, masks_.state, masks_.output});
    const Var xin = ops_.mask(ops_.input(x), masks_.input);
    switch (cfg_.temporal) {
      case TemporalKind::srn: {
        const Var joint = ops_.concat(xin, ops_.mask(state.memory, masks_.state));
        state.memory = ops_.elu(ops_.linear(lay_.recurrent, joint));
        return ops_.mask(state.memory, masks_.output);
      }
      case TemporalKind::lstm: {
        const Var joint = ops_.concat(xin, ops_.mask(state.memory, masks_.state));
        const Var i = ops_.sigmoid(ops_.linear(lay_.gate_input, joint));
        const Var f = ops_.sigmoid(ops_.linear(lay_.gate_forget, joint));
        const Var o = ops_.sigmoid(ops_.linear(lay_.gate_output, joint));
        const Var g = ops_.elu(ops_.linear(lay_.candidate, joint));
        state.cell = ops_.add(ops_.hadamard(f, state.cell), ops_.hadamard(i, g));
        state.memory = ops_.hadamard(o, ops_.elu(state.cell));
        return ops_.mask(state.memory, masks_.output);
      }
      case TemporalKind::mlp: {
        state.memory = ops_.elu(ops_.linear(lay_.base, xin));
        return ops_.mask(state.memory, masks_.output);
      }
    }
    throw ContractViolation("unknown temporal kind");
  }

  // Runs the temporal layer over a row-major raw history; returns h at the
  // last step. `each` (if given) sees h after every step.
  template <class Each = std::nullptr_t>
  Var encode(std::span<const double> history, Each each = nullptr) {
    const std::size_t width = cfg_.input_width();
    DATLAS_REQUIRE(!history.empty(), "forward: history must contain at least one step");
    DATLAS_REQUIRE(history.size() % width == 0, "forward: history length is not a multiple of the input width");
    const std::size_t steps = history.size() / width;
    auto state = initial_state();
    Var h{};
    // The mlp base only looks at the final step.
    const std::size_t first = (cfg_.temporal == TemporalKind::mlp && std::is_same_v<Each, std::nullptr_t>) ? steps - 1 : 0;
    for (std::size_t t = first; t < steps; ++t) {
      const auto x = standardize(history.subspan(t * width, width));
      h = step(x, state);
      if constexpr (!std::is_same_v<Each, std::nullptr_t>) each(t, h);
    }
    return h;
  }

  HeadOutputs<Ops> heads(const Var& h, double tau) {
    DATLAS_REQUIRE(tau >= 0.0, "forward: horizon must be non-negative");
    const Var hc = cfg_.horizon_input ? ops_.append_scalar(h, tau) : h;
    Var zc = hc, zb = hc, ze = h;
    if (cfg_.task_layers) {
      zc = ops_.mask(ops_.elu(ops_.linear(lay_.task_continuous, hc)), masks_.task_continuous);
      zb = ops_.mask(ops_.elu(ops_.linear(lay_.task_binary, hc)), masks_.task_binary);
      ze = ops_.mask(ops_.elu(ops_.linear(lay_.task_event, h)), masks_.task_event);
    }
    const Standardization& s = params_.scaling;
    HeadOutputs<Ops> out;
    out.mu = ops_.affine(ops_.linear(lay_.mu, zc), s.output_sd, s.output_mean);
    out.sigma = ops_.floor_at(ops_.affine(ops_.softplus(ops_.linear(lay_.sigma, zc)), s.output_sd, {}), kScaleFloor);
    out.p = ops_.ceil_at(ops_.floor_at(ops_.sigmoid(ops_.linear(lay_.p, zb)), kProbFloor), 1.0 - kProbFloor);
    out.lambda = ops_.floor_at(ops_.affine(ops_.softplus(ops_.linear(lay_.lambda, ze)), s.hazard_scale, {}), kScaleFloor);
    return out;
  }

  DistributionParams read(const HeadOutputs<Ops>& o) const {
    return {ops_.read(o.mu), ops_.read(o.sigma), ops_.read(o.p), ops_.read(o.lambda)};
  }

 private:
  Ops& ops_;
  const ModelParams& params_;
  const NetworkConfig& cfg_;
  const ParamLayout& lay_;
  const DropoutMaskSet& masks_;
  ForwardTrace* trace_;
};

struct RecurrentValues {
  std::vector<double> memory;
  std::vector<double> cell;
};

struct StepResult {
  std::vector<double> output;  // h_t
  RecurrentValues state;       // m_t (and the LSTM cell)
};

// Single temporal-layer step on a standardised input row.
inline StepResult rnn_step(const ModelParams& params, const DropoutMaskSet& masks, std::span<const double> x,
                           const RecurrentValues& previous) {
  const NetworkConfig& c = params.config;
  DATLAS_REQUIRE(previous.memory.size() == c.state_size, "rnn_step: state width mismatch");
  DATLAS_REQUIRE(c.temporal != TemporalKind::lstm || previous.cell.size() == c.state_size,
                 "rnn_step: cell width mismatch");
  ValueOps ops(params);
  Network<ValueOps> net(ops, params, masks);
  RecurrentState<ValueOps> s{previous.memory, previous.cell};
  auto h = net.step(x, s);
  return {std::move(h), {std::move(s.memory), std::move(s.cell)}};
}

// Full forward pass: history rows are raw [X_t, V_t] for t = 0..rho.
inline DistributionParams forward(const ModelParams& params, const DropoutMaskSet& masks,
                                  std::span<const double> history, double tau, ForwardTrace* trace = nullptr) {
  ValueOps ops(params);
  Network<ValueOps> net(ops, params, masks, trace);
  const auto h = net.encode(history);
  return net.read(net.heads(h, tau));
}

inline DistributionParams forward(const ModelParams& params, std::span<const double> history, double tau) {
  return forward(params, DropoutMaskSet::ones(params.config), history, tau);
}

}  // namespace datlas
