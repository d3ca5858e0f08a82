#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "datlas/csv.hpp"
#include "datlas/errors.hpp"
#include "datlas/losses.hpp"
#include "datlas/model.hpp"
#include "datlas/parallel.hpp"
#include "datlas/rng.hpp"

namespace datlas {

inline constexpr std::size_t kNoGroup = std::numeric_limits<std::size_t>::max();

enum class Role { covariate, continuous, binary, event };

inline const char* to_string(Role r) {
  switch (r) {
    case Role::covariate: return "covariate";
    case Role::continuous: return "continuous";
    case Role::binary: return "binary";
    case Role::event: return "event";
  }
  return "?";
}

inline std::optional<Role> parse_role(std::string_view s) {
  for (Role r : {Role::covariate, Role::continuous, Role::binary, Role::event})
    if (s == to_string(r)) return r;
  return std::nullopt;
}

struct Variable {
  std::string name;
  Role role = Role::covariate;
  std::string group;
  bool censoring = false;  // events only: ends follow-up when it occurs
  friend bool operator==(const Variable&, const Variable&) = default;
};

// Ordered variable list. Non-event variables belong to observation groups
// that share one mask per time step; events carry their own indicators.
class Schema {
 public:
  Schema() = default;
  explicit Schema(std::vector<Variable> vars) : vars_(std::move(vars)) {
    for (std::size_t i = 0; i < vars_.size(); ++i) {
      const Variable& v = vars_[i];
      DATLAS_REQUIRE(!v.name.empty() && v.name.find(',') == std::string::npos,
                     "schema: variable names must be nonempty and free of commas");
      DATLAS_REQUIRE(!v.group.empty() && v.group.find(',') == std::string::npos,
                     "schema: variable '" + v.name + "' needs a task group");
      DATLAS_REQUIRE(v.name != "patient_id" && v.name != "time" && v.name.rfind("obs_", 0) != 0,
                     "schema: variable name '" + v.name + "' is reserved");
      for (std::size_t j = 0; j < i; ++j)
        DATLAS_REQUIRE(vars_[j].name != v.name, "schema: duplicate variable '" + v.name + "'");
      DATLAS_REQUIRE(!v.censoring || v.role == Role::event, "schema: only events can censor follow-up");
      std::size_t g = kNoGroup;
      if (v.role != Role::event) {
        auto it = std::find(groups_.begin(), groups_.end(), v.group);
        if (it == groups_.end()) {
          groups_.push_back(v.group);
          longitudinal_group_.push_back(false);
          it = groups_.end() - 1;
        }
        g = static_cast<std::size_t>(it - groups_.begin());
        if (v.role != Role::covariate) longitudinal_group_[g] = true;
      }
      group_of_.push_back(g);
      switch (v.role) {
        case Role::covariate: covariates_.push_back(i); break;
        case Role::continuous: continuous_.push_back(i); break;
        case Role::binary: binary_.push_back(i); break;
        case Role::event: events_.push_back(i); break;
      }
    }
    for (std::size_t i = 0; i < vars_.size(); ++i) {
      if (vars_[i].role == Role::event)
        DATLAS_REQUIRE(std::find(groups_.begin(), groups_.end(), vars_[i].group) == groups_.end(),
                       "schema: event '" + vars_[i].name + "' shares a task group with non-event variables");
    }
    DATLAS_REQUIRE(!covariates_.empty() && !continuous_.empty() && !binary_.empty() && !events_.empty(),
                   "schema: needs at least one covariate, continuous, binary and event variable");
    inputs_ = covariates_;
    inputs_.insert(inputs_.end(), continuous_.begin(), continuous_.end());
    inputs_.insert(inputs_.end(), binary_.begin(), binary_.end());
  }

  const std::vector<Variable>& variables() const { return vars_; }
  const Variable& operator[](std::size_t i) const { return vars_[i]; }
  std::size_t size() const { return vars_.size(); }
  const std::vector<std::size_t>& covariates() const { return covariates_; }
  const std::vector<std::size_t>& continuous() const { return continuous_; }
  const std::vector<std::size_t>& binary() const { return binary_; }
  const std::vector<std::size_t>& events() const { return events_; }
  // Network input columns: covariates, then continuous, then binary.
  const std::vector<std::size_t>& input_columns() const { return inputs_; }
  const std::vector<std::string>& groups() const { return groups_; }
  bool group_is_longitudinal(std::size_t g) const { return longitudinal_group_[g]; }
  std::size_t group_of(std::size_t var) const { return group_of_[var]; }

  std::optional<std::size_t> find(std::string_view name) const {
    for (std::size_t i = 0; i < vars_.size(); ++i)
      if (vars_[i].name == name) return i;
    return std::nullopt;
  }

  // Network dimensions implied by the schema; other fields keep defaults.
  NetworkConfig network_config() const {
    NetworkConfig c;
    c.num_covariates = covariates_.size();
    c.num_continuous = continuous_.size();
    c.num_binary = binary_.size();
    c.num_events = events_.size();
    c.state_size = inputs_.size();
    return c;
  }

  friend bool operator==(const Schema& a, const Schema& b) { return a.vars_ == b.vars_; }

 private:
  std::vector<Variable> vars_;
  std::vector<std::string> groups_;
  std::vector<bool> longitudinal_group_;
  std::vector<std::size_t> group_of_;
  std::vector<std::size_t> covariates_, continuous_, binary_, events_, inputs_;
};

// Generator-side quantities that are never observed directly.
struct LatentRecord {
  std::vector<double> random_intercept;  // per continuous variable
  std::vector<double> random_slope;      // per continuous variable
  std::vector<double> binary_intercept;  // per binary variable
  std::vector<double> mean;              // grid steps x C, noise-free trajectory
  std::vector<double> prob;              // grid steps x D
  std::vector<double> hazard;            // grid steps x M, rate on [t, t + 1)
  std::vector<double> event_time;        // per event, +inf if beyond the grid
  std::size_t grid_steps = 0;

  bool empty() const { return grid_steps == 0; }
};

struct PatientTrajectory {
  std::int64_t id = 0;
  std::size_t steps = 0;   // observation rows at integer times 0..steps-1
  double exit_time = 0.0;  // end of follow-up: first censoring event or administrative censoring
  std::vector<double> values;                     // steps x V in schema order
  std::vector<std::uint8_t> observed;             // steps x G observation-group flags
  std::vector<std::vector<double>> occurrences;   // per event: observed event times, ascending
  LatentRecord latent;

  std::size_t last_step() const { return steps - 1; }
};

inline double value_at(const Schema& s, const PatientTrajectory& p, std::size_t step, std::size_t var) {
  return p.values[step * s.size() + var];
}

inline bool group_observed(const Schema& s, const PatientTrajectory& p, std::size_t step, std::size_t group) {
  return p.observed[step * s.groups().size() + group] != 0;
}

// Events count as always observed; their indicators are complete by design.
inline bool is_observed(const Schema& s, const PatientTrajectory& p, std::size_t step, std::size_t var) {
  const std::size_t g = s.group_of(var);
  return g == kNoGroup || group_observed(s, p, step, g);
}

// Time-to-event target measured from `anchor`: the first occurrence after
// the anchor, or censoring at the end of follow-up.
struct EventTarget {
  double time = 0.0;
  bool observed = false;
};

inline EventTarget event_target(const PatientTrajectory& p, std::size_t event, double anchor) {
  for (double t : p.occurrences[event])
    if (t > anchor) return {t - anchor, true};
  return {p.exit_time - anchor, false};
}

struct Cohort {
  Schema schema;
  std::vector<PatientTrajectory> patients;

  std::optional<std::size_t> find_patient(std::int64_t id) const {
    for (std::size_t i = 0; i < patients.size(); ++i)
      if (patients[i].id == id) return i;
    return std::nullopt;
  }
};

// Equal schemas, follow-up, masks, events, and equal values wherever a
// value is observed. Latent records are ignored.
inline bool equivalent(const Cohort& a, const Cohort& b) {
  if (!(a.schema == b.schema) || a.patients.size() != b.patients.size()) return false;
  const Schema& s = a.schema;
  for (std::size_t i = 0; i < a.patients.size(); ++i) {
    const auto& p = a.patients[i];
    const auto& q = b.patients[i];
    if (p.id != q.id || p.steps != q.steps || p.exit_time != q.exit_time || p.observed != q.observed ||
        p.occurrences != q.occurrences)
      return false;
    for (std::size_t t = 0; t < p.steps; ++t)
      for (std::size_t v = 0; v < s.size(); ++v)
        if (is_observed(s, p, t, v) && value_at(s, p, t, v) != value_at(s, q, t, v)) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Synthetic joint-model generator.

struct CovariateSpec {
  std::string name;
  bool binary = false;
  double mean = 0.0;      // normal covariates
  double sd = 1.0;
  double prob = 0.5;      // binary covariates
  double per_step = 0.0;  // deterministic drift, e.g. age
  double center() const { return binary ? prob : mean; }
};

// m(t) = intercept + slope t + effects . (x0 - center) + b0 + b1 t;
// observed Y(t) = m(t) + noise.
struct ContinuousSpec {
  std::string name;
  std::string group;
  double intercept = 0.0;
  double slope = 0.0;
  std::vector<double> covariate_effects;
  double sd_intercept = 0.0;
  double sd_slope = 0.0;
  double correlation = 0.0;  // between the intercept and slope effects
  double noise_sd = 0.0;
};

// logit P(B(t) = 1) = intercept + slope t + effects . (x0 - center) + u
//                     + biomarker_effect (m_k(t) - biomarker_reference)
struct BinarySpec {
  std::string name;
  std::string group;
  double intercept = 0.0;
  double slope = 0.0;
  std::vector<double> covariate_effects;
  double sd_intercept = 0.0;
  std::size_t biomarker = 0;
  double biomarker_effect = 0.0;
  double biomarker_reference = 0.0;
};

// hazard on [t, t + 1) = baseline exp(effects . (x0 - center)
//                        + association (m_k(t) - biomarker_reference))
struct EventSpec {
  std::string name;
  double baseline_hazard = 0.0;
  std::vector<double> covariate_effects;
  std::size_t biomarker = 0;
  double association = 0.0;
  double biomarker_reference = 0.0;
};

struct GroundTruthModel {
  std::vector<CovariateSpec> covariates;
  std::string covariate_group = "demographics";
  std::vector<ContinuousSpec> continuous;
  std::vector<BinarySpec> binary;
  std::vector<EventSpec> events;
  // Correlation of the random effects shared across continuous variables.
  double shared_random_effects = 0.0;

  void validate() const {
    DATLAS_REQUIRE(!covariates.empty() && !continuous.empty() && !binary.empty() && !events.empty(),
                   "ground truth: every variable family needs at least one member");
    const std::size_t L = covariates.size();
    DATLAS_REQUIRE(shared_random_effects >= 0.0 && shared_random_effects <= 1.0,
                   "ground truth: shared random-effect correlation must lie in [0, 1]");
    for (const auto& c : covariates) DATLAS_REQUIRE(c.sd >= 0.0 && c.prob >= 0.0 && c.prob <= 1.0, "ground truth: invalid covariate");
    for (const auto& c : continuous) {
      DATLAS_REQUIRE(c.covariate_effects.empty() || c.covariate_effects.size() == L,
                     "ground truth: covariate effect length mismatch for '" + c.name + "'");
      DATLAS_REQUIRE(c.sd_intercept >= 0.0 && c.sd_slope >= 0.0 && c.noise_sd >= 0.0 &&
                         c.correlation >= -1.0 && c.correlation <= 1.0,
                     "ground truth: random-effect covariance of '" + c.name + "' is not positive semi-definite");
    }
    for (const auto& b : binary) {
      DATLAS_REQUIRE(b.covariate_effects.empty() || b.covariate_effects.size() == L,
                     "ground truth: covariate effect length mismatch for '" + b.name + "'");
      DATLAS_REQUIRE(b.sd_intercept >= 0.0, "ground truth: negative random-intercept sd for '" + b.name + "'");
      DATLAS_REQUIRE(b.biomarker < continuous.size(), "ground truth: unknown biomarker for '" + b.name + "'");
    }
    for (const auto& e : events) {
      DATLAS_REQUIRE(e.covariate_effects.empty() || e.covariate_effects.size() == L,
                     "ground truth: covariate effect length mismatch for '" + e.name + "'");
      DATLAS_REQUIRE(e.baseline_hazard > 0.0, "ground truth: baseline hazard must be positive");
      DATLAS_REQUIRE(e.biomarker < continuous.size(), "ground truth: unknown biomarker for '" + e.name + "'");
    }
  }

  // Generated events are terminal, so every event censors follow-up.
  Schema schema() const {
    std::vector<Variable> vars;
    for (const auto& c : covariates) vars.push_back({c.name, Role::covariate, covariate_group, false});
    for (const auto& c : continuous) vars.push_back({c.name, Role::continuous, c.group, false});
    for (const auto& b : binary) vars.push_back({b.name, Role::binary, b.group, false});
    for (const auto& e : events) vars.push_back({e.name, Role::event, e.name, true});
    return Schema(std::move(vars));
  }
};

namespace detail {

inline double effect(const std::vector<double>& effects, const std::vector<CovariateSpec>& cov,
                     const std::vector<double>& x0) {
  double s = 0.0;
  for (std::size_t l = 0; l < effects.size(); ++l) s += effects[l] * (x0[l] - cov[l].center());
  return s;
}


}  // namespace detail

// Exact sampling from a piecewise-constant hazard on unit steps: the event
// time solves H(E) = u for u ~ Exp(1). Returns +inf if H over the grid < u.
inline double invert_piecewise_hazard(std::span<const double> hazard, std::size_t stride, double u) {
  double cumulative = 0.0;
  for (std::size_t k = 0; k * stride < hazard.size(); ++k) {
    const double h = hazard[k * stride];
    if (cumulative + h >= u && h > 0.0) return static_cast<double>(k) + (u - cumulative) / h;
    cumulative += h;
  }
  return std::numeric_limits<double>::infinity();
}

inline PatientTrajectory generate_patient(const GroundTruthModel& truth, const Schema& schema, std::int64_t id,
                                          std::size_t n_steps, Rng& rng) {
  const std::size_t L = truth.covariates.size(), C = truth.continuous.size(), D = truth.binary.size(),
                    M = truth.events.size();
  PatientTrajectory p;
  p.id = id;
  LatentRecord& lat = p.latent;
  lat.grid_steps = n_steps;

  std::vector<double> x0(L);
  for (std::size_t l = 0; l < L; ++l) {
    const auto& c = truth.covariates[l];
    x0[l] = c.binary ? (rng.bernoulli(c.prob) ? 1.0 : 0.0) : rng.normal(c.mean, c.sd);
  }

  const double share = truth.shared_random_effects;
  const double shared0 = rng.normal(), shared1 = rng.normal();
  for (std::size_t c = 0; c < C; ++c) {
    const auto& spec = truth.continuous[c];
    const double a = std::sqrt(share) * shared0 + std::sqrt(1.0 - share) * rng.normal();
    const double b = std::sqrt(share) * shared1 + std::sqrt(1.0 - share) * rng.normal();
    lat.random_intercept.push_back(spec.sd_intercept * a);
    lat.random_slope.push_back(spec.sd_slope *
                               (spec.correlation * a + std::sqrt(1.0 - spec.correlation * spec.correlation) * b));
  }
  for (std::size_t d = 0; d < D; ++d) lat.binary_intercept.push_back(truth.binary[d].sd_intercept * rng.normal());

  lat.mean.resize(n_steps * C);
  lat.prob.resize(n_steps * D);
  lat.hazard.resize(n_steps * M);
  for (std::size_t t = 0; t < n_steps; ++t) {
    const double time = static_cast<double>(t);
    for (std::size_t c = 0; c < C; ++c) {
      const auto& spec = truth.continuous[c];
      lat.mean[t * C + c] = spec.intercept + spec.slope * time + detail::effect(spec.covariate_effects, truth.covariates, x0) +
                            lat.random_intercept[c] + lat.random_slope[c] * time;
    }
    for (std::size_t d = 0; d < D; ++d) {
      const auto& spec = truth.binary[d];
      const double z = spec.intercept + spec.slope * time + detail::effect(spec.covariate_effects, truth.covariates, x0) +
                       lat.binary_intercept[d] +
                       spec.biomarker_effect * (lat.mean[t * C + spec.biomarker] - spec.biomarker_reference);
      lat.prob[t * D + d] = sigmoid(z);
    }
    for (std::size_t m = 0; m < M; ++m) {
      const auto& spec = truth.events[m];
      const double z = detail::effect(spec.covariate_effects, truth.covariates, x0) +
                       spec.association * (lat.mean[t * C + spec.biomarker] - spec.biomarker_reference);
      lat.hazard[t * M + m] = spec.baseline_hazard * std::exp(z);
    }
  }

  double exit = static_cast<double>(n_steps);
  for (std::size_t m = 0; m < M; ++m) {
    const double e = invert_piecewise_hazard(std::span<const double>(lat.hazard).subspan(m), M, rng.exponential());
    lat.event_time.push_back(e);
    exit = std::min(exit, e);
  }
  p.exit_time = exit;
  p.steps = static_cast<std::size_t>(std::ceil(exit));
  p.steps = std::max<std::size_t>(p.steps, 1);
  p.occurrences.resize(M);
  for (std::size_t m = 0; m < M; ++m)
    if (lat.event_time[m] == exit && exit < static_cast<double>(n_steps)) p.occurrences[m].push_back(exit);

  const std::size_t V = schema.size();
  p.values.assign(p.steps * V, 0.0);
  p.observed.assign(p.steps * schema.groups().size(), 1);
  for (std::size_t t = 0; t < p.steps; ++t) {
    double* row = &p.values[t * V];
    for (std::size_t l = 0; l < L; ++l) row[schema.covariates()[l]] = x0[l] + truth.covariates[l].per_step * static_cast<double>(t);
    for (std::size_t c = 0; c < C; ++c)
      row[schema.continuous()[c]] = lat.mean[t * C + c] + truth.continuous[c].noise_sd * rng.normal();
    for (std::size_t d = 0; d < D; ++d) row[schema.binary()[d]] = rng.bernoulli(lat.prob[t * D + d]) ? 1.0 : 0.0;
  }
  return p;
}

// Patient i gets id i + 1 and the random stream (seed, i), so the cohort is
// identical for any thread count. Administrative censoring is at n_steps.
inline Cohort generate_cohort(const GroundTruthModel& truth, std::size_t n_patients, std::size_t n_steps,
                              std::uint64_t seed, std::size_t threads = 1) {
  truth.validate();
  DATLAS_REQUIRE(n_patients >= 1 && n_steps >= 1, "generate_cohort: need at least one patient and one step");
  Cohort cohort;
  cohort.schema = truth.schema();
  cohort.patients.resize(n_patients);
  parallel_for(n_patients, threads, [&](std::size_t i) {
    Rng rng(seed, i);
    cohort.patients[i] = generate_patient(truth, cohort.schema, static_cast<std::int64_t>(i + 1), n_steps, rng);
  });
  return cohort;
}

// Moments loosely shaped after a cystic-fibrosis registry: two lung-function
// scores, comorbidities, infections and death, with annual follow-up.
inline GroundTruthModel cf_like_preset() {
  GroundTruthModel g;
  g.covariates = {
      {"age", false, 20.0, 9.0, 0.5, 1.0},
      {"sex", true, 0.0, 1.0, 0.47, 0.0},
      {"f508del_homozygous", true, 0.0, 1.0, 0.5, 0.0},
      {"bmi", false, 20.0, 3.0, 0.5, 0.0},
      {"pancreatic_insufficient", true, 0.0, 1.0, 0.8, 0.0},
  };
  g.shared_random_effects = 0.8;
  g.continuous = {
      {"fev1", "spirometry", 2.309, -0.045, {-0.025, 0.25, -0.15, 0.06, -0.1}, 0.811, 0.05, -0.2, 0.28},
      {"predicted_fev1", "spirometry", 73.14, -0.4, {0.15, 0.0, -4.0, 1.5, -3.0}, 21.1, 1.2, -0.2, 6.5},
  };
  g.binary = {
      {"diabetes", "comorbidities", -2.2, 0.08, {0.05, 0.0, 0.3, 0.0, 0.6}, 1.0, 0, -0.4, 2.176},
      {"liver_disease", "comorbidities", -2.6, 0.03, {0.0, 0.2, 0.3, 0.0, 0.5}, 1.0, 0, -0.2, 2.176},
      {"depression", "comorbidities", -2.4, 0.02, {0.02, -0.3, 0.0, 0.0, 0.0}, 1.2, 0, -0.3, 2.176},
      {"p_aeruginosa", "infections", -0.3, 0.05, {0.04, 0.0, 0.3, 0.0, 0.2}, 1.2, 0, -0.6, 2.176},
      {"s_aureus", "infections", -0.5, -0.02, {-0.03, 0.0, 0.0, 0.0, 0.0}, 1.0, 0, -0.1, 2.176},
      {"aspergillus", "infections", -2.0, 0.04, {0.0, 0.0, 0.2, 0.0, 0.0}, 1.0, 0, -0.3, 2.176},
  };
  g.events = {{"death", 0.003006, {0.01, 0.1, 0.15, -0.05, 0.1}, 0, -1.3, 2.176}};
  return g;
}

// Same shape as the cf-like preset but with a strong biomarker-hazard link
// and a higher event rate, so mortality is learnable from small cohorts.
inline GroundTruthModel high_risk_preset() {
  GroundTruthModel g = cf_like_preset();
  g.continuous[0] = {"fev1", "spirometry", 2.3, -0.06, {-0.03, 0.2, -0.4, 0.08, -0.2}, 0.3, 0.03, -0.2, 0.5};
  g.continuous[1] = {"predicted_fev1", "spirometry", 73.0, -1.5, {-0.5, 4.0, -10.0, 2.0, -5.0}, 7.5, 0.75, -0.2, 12.5};
  g.events = {{"death", 0.01, {0.04, 0.0, 0.5, -0.1, 0.3}, 0, -2.5, 2.3}};
  return g;
}

inline std::vector<std::string> preset_names() { return {"cf-like", "high-risk"}; }

inline GroundTruthModel preset(std::string_view name) {
  if (name == "cf-like") return cf_like_preset();
  if (name == "high-risk") return high_risk_preset();
  throw ContractViolation("unknown preset '" + std::string(name) + "' (valid: cf-like, high-risk)");
}

// ---------------------------------------------------------------------------

// Removes each longitudinal task group at each step independently with
// probability gamma. Values stay in memory for evaluation against truth.
inline Cohort apply_missingness(const Cohort& cohort, double gamma, std::uint64_t seed) {
  DATLAS_REQUIRE(gamma >= 0.0 && gamma < 1.0, "apply_missingness: gamma must lie in [0, 1)");
  Cohort out = cohort;
  if (gamma == 0.0) return out;
  const Schema& s = out.schema;
  const std::size_t G = s.groups().size();
  for (std::size_t i = 0; i < out.patients.size(); ++i) {
    auto& p = out.patients[i];
    Rng rng(seed, static_cast<std::uint64_t>(p.id));
    for (std::size_t t = 0; t < p.steps; ++t)
      for (std::size_t g = 0; g < G; ++g) {
        if (!s.group_is_longitudinal(g)) continue;
        if (rng.uniform() < gamma) p.observed[t * G + g] = 0;
      }
  }
  return out;
}

// Per-variable moments over observed step cells.
struct VariableStats {
  std::vector<double> mean;
  std::vector<double> sd;
};

inline VariableStats compute_stats(const Cohort& cohort) {
  const Schema& s = cohort.schema;
  const std::size_t V = s.size();
  std::vector<double> sum(V, 0.0), sq(V, 0.0), n(V, 0.0);
  for (const auto& p : cohort.patients)
    for (std::size_t t = 0; t < p.steps; ++t)
      for (std::size_t v = 0; v < V; ++v) {
        if (!is_observed(s, p, t, v)) continue;
        const double x = value_at(s, p, t, v);
        sum[v] += x;
        n[v] += 1.0;
      }
  VariableStats st{std::vector<double>(V, 0.0), std::vector<double>(V, 1.0)};
  for (std::size_t v = 0; v < V; ++v)
    if (n[v] > 0) st.mean[v] = sum[v] / n[v];
  for (const auto& p : cohort.patients)
    for (std::size_t t = 0; t < p.steps; ++t)
      for (std::size_t v = 0; v < V; ++v) {
        if (!is_observed(s, p, t, v)) continue;
        const double r = value_at(s, p, t, v) - st.mean[v];
        sq[v] += r * r;
      }
  for (std::size_t v = 0; v < V; ++v)
    if (n[v] > 1) st.sd[v] = std::sqrt(sq[v] / (n[v] - 1));
  return st;
}

// Standardisation constants for the network, taken from training data.
// Hazards are measured in units of each event's crude rate (occurrences
// per unit of follow-up).
inline Standardization standardization_from(const Cohort& train, const VariableStats& st) {
  const Schema& s = train.schema;
  Standardization z;
  for (std::size_t v : s.input_columns()) {
    z.input_mean.push_back(st.mean[v]);
    z.input_sd.push_back(st.sd[v] > 1e-8 ? st.sd[v] : 1.0);
  }
  for (std::size_t v : s.continuous()) {
    z.output_mean.push_back(st.mean[v]);
    z.output_sd.push_back(st.sd[v] > 1e-8 ? st.sd[v] : 1.0);
  }
  double exposure = 0.0;
  for (const auto& p : train.patients) exposure += p.exit_time;
  for (std::size_t m = 0; m < s.events().size(); ++m) {
    double n = 0.0;
    for (const auto& p : train.patients) n += static_cast<double>(p.occurrences[m].size());
    z.hazard_scale.push_back(n > 0.0 && exposure > 0.0 ? n / exposure : 1.0);
  }
  return z;
}

// Dense network inputs (steps x input width) for one patient. Unobserved
// covariates and continuous values take the training mean, binary take 0.
inline std::vector<double> impute_inputs(const Schema& s, const PatientTrajectory& p, const VariableStats& train) {
  const auto& cols = s.input_columns();
  std::vector<double> out(p.steps * cols.size());
  for (std::size_t t = 0; t < p.steps; ++t)
    for (std::size_t j = 0; j < cols.size(); ++j) {
      const std::size_t v = cols[j];
      double x = value_at(s, p, t, v);
      if (!is_observed(s, p, t, v)) x = s[v].role == Role::binary ? 0.0 : train.mean[v];
      out[t * cols.size() + j] = x;
    }
  return out;
}

inline std::vector<std::vector<double>> impute_for_input(const Cohort& cohort, const VariableStats& train) {
  std::vector<std::vector<double>> out;
  out.reserve(cohort.patients.size());
  for (const auto& p : cohort.patients) out.push_back(impute_inputs(cohort.schema, p, train));
  return out;
}

// ---------------------------------------------------------------------------
// Training windows: history 0..anchor, targets at anchor + horizon.

struct WindowSpec {
  std::size_t rho_max = 8;
  std::size_t tau_max = 5;
  bool horizon_input = true;
  // Multioutput comparator: unobserved targets inside follow-up are filled
  // in (continuous with the training mean, binary with 0) and kept.
  bool impute_targets = false;
};

struct TrainingWindow {
  std::size_t patient = 0;  // index into the cohort / WindowSet::inputs
  std::size_t anchor = 0;   // rho
  std::size_t horizon = 0;  // tau
  TargetBundle targets;
};

struct WindowSet {
  std::size_t input_width = 0;
  std::vector<std::vector<double>> inputs;  // per patient, imputed
  std::vector<TrainingWindow> windows;

  std::span<const double> history(const TrainingWindow& w) const {
    return std::span<const double>(inputs[w.patient]).first((w.anchor + 1) * input_width);
  }
  std::size_t size() const { return windows.size(); }
};

inline TargetBundle window_targets(const Schema& s, const PatientTrajectory& p, std::size_t anchor,
                                   std::size_t horizon, const VariableStats& train, bool impute_targets) {
  TargetBundle t;
  const std::size_t step = anchor + horizon;
  const bool inside = step < p.steps;
  for (std::size_t v : s.continuous()) {
    const bool obs = inside && is_observed(s, p, step, v);
    if (obs) {
      t.continuous.push_back(value_at(s, p, step, v));
      t.continuous_mask.push_back(1.0);
    } else if (inside && impute_targets) {
      t.continuous.push_back(train.mean[v]);
      t.continuous_mask.push_back(1.0);
    } else {
      t.continuous.push_back(0.0);
      t.continuous_mask.push_back(0.0);
    }
  }
  for (std::size_t v : s.binary()) {
    const bool obs = inside && is_observed(s, p, step, v);
    t.binary.push_back(obs ? value_at(s, p, step, v) : 0.0);
    t.binary_mask.push_back(obs || (inside && impute_targets) ? 1.0 : 0.0);
  }
  for (std::size_t m = 0; m < s.events().size(); ++m) {
    const auto e = event_target(p, m, static_cast<double>(anchor));
    t.event_time.push_back(e.time);
    t.event_indicator.push_back(e.observed ? 1.0 : 0.0);
  }
  return t;
}

// One window per (patient, rho, tau) with 1 <= rho <= min(rho_max, last
// step) and 1 <= tau <= tau_max. Inputs are imputed with `train` statistics.
inline WindowSet make_windows(const Cohort& cohort, const VariableStats& train, const WindowSpec& spec) {
  DATLAS_REQUIRE(spec.rho_max >= 1 && spec.tau_max >= 1, "make_windows: rho_max and tau_max must be at least 1");
  DATLAS_REQUIRE(spec.horizon_input || spec.tau_max == 1,
                 "make_windows: a network without horizon input only supports one-step windows (tau_max = 1)");
  const Schema& s = cohort.schema;
  WindowSet set;
  set.input_width = s.input_columns().size();
  set.inputs = impute_for_input(cohort, train);
  for (std::size_t i = 0; i < cohort.patients.size(); ++i) {
    const auto& p = cohort.patients[i];
    const std::size_t top = std::min(spec.rho_max, p.last_step());
    for (std::size_t rho = 1; rho <= top; ++rho)
      for (std::size_t tau = 1; tau <= spec.tau_max; ++tau)
        set.windows.push_back({i, rho, tau, window_targets(s, p, rho, tau, train, spec.impute_targets)});
  }
  return set;
}

// ---------------------------------------------------------------------------

struct CohortSplit {
  Cohort train;
  Cohort validation;
  Cohort test;
};

// Patient-level 60/20/20 partition (rounded), shuffled by `seed`.
inline CohortSplit split_cohort(const Cohort& cohort, std::uint64_t seed) {
  const std::size_t n = cohort.patients.size();
  DATLAS_REQUIRE(n >= 5, "split_cohort: need at least 5 patients");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed, 0x5b117ULL);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  const auto n_train = static_cast<std::size_t>(std::llround(0.6 * static_cast<double>(n)));
  const auto n_val = static_cast<std::size_t>(std::llround(0.2 * static_cast<double>(n)));
  CohortSplit out{{cohort.schema, {}}, {cohort.schema, {}}, {cohort.schema, {}}};
  for (std::size_t k = 0; k < n; ++k) {
    Cohort& dst = k < n_train ? out.train : (k < n_train + n_val ? out.validation : out.test);
    dst.patients.push_back(cohort.patients[order[k]]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Text formats.

struct CohortPaths {
  std::string data;
  std::string schema;
  std::string truth;
};

inline CohortPaths cohort_paths(const std::string& dir) {
  const std::filesystem::path d(dir);
  return {(d / "cohort.csv").string(), (d / "schema.csv").string(), (d / "truth.csv").string()};
}

inline std::string format_schema(const Schema& s) {
  std::string out = "name,role,task_group,censoring_flag\n";
  for (const auto& v : s.variables())
    out += v.name + "," + to_string(v.role) + "," + v.group + "," + (v.censoring ? "1" : "0") + "\n";
  return out;
}

inline Schema parse_schema(const std::vector<std::string>& lines) {
  std::vector<Variable> vars;
  for (std::size_t r = 0; r < lines.size(); ++r) {
    const std::size_t row = r + 1;
    const auto line = csv::trim(lines[r]);
    if (line.empty() || line.front() == '#') continue;
    const auto cells = csv::split(line);
    if (r == 0 && csv::trim(cells[0]) == "name") continue;
    if (cells.size() != 4) throw ParseError("expected 4 fields: name,role,task_group,censoring_flag", row);
    Variable v;
    v.name = std::string(csv::trim(cells[0]));
    const auto role = parse_role(csv::trim(cells[1]));
    if (!role) throw ParseError("unknown role '" + std::string(csv::trim(cells[1])) + "'", row, "role");
    v.role = *role;
    v.group = std::string(csv::trim(cells[2]));
    const auto flag = csv::trim(cells[3]);
    if (flag != "0" && flag != "1") throw ParseError("censoring_flag must be 0 or 1", row, "censoring_flag");
    v.censoring = flag == "1";
    vars.push_back(std::move(v));
  }
  try {
    return Schema(std::move(vars));
  } catch (const ContractViolation& e) {
    throw ParseError(e.what(), 0);
  }
}

inline Schema load_schema(const std::string& path) { return parse_schema(csv::read_lines(path)); }

// Long layout: one row per observed step, then one exit row per patient at
// the end of follow-up carrying only event indicators. Unobserved cells are
// empty and their group's obs_ flag is 0.
inline std::string format_cohort(const Cohort& cohort) {
  const Schema& s = cohort.schema;
  const std::size_t V = s.size(), G = s.groups().size();
  std::vector<std::string> header{"patient_id", "time"};
  for (const auto& v : s.variables()) header.push_back(v.name);
  for (const auto& g : s.groups()) header.push_back("obs_" + g);
  std::string out = csv::join(header) + "\n";
  for (const auto& p : cohort.patients) {
    const std::string id = std::to_string(p.id);
    for (std::size_t t = 0; t < p.steps; ++t) {
      out += id + "," + std::to_string(t);
      for (std::size_t v = 0; v < V; ++v) {
        out += ',';
        if (s[v].role == Role::event) {
          const auto m = static_cast<std::size_t>(std::find(s.events().begin(), s.events().end(), v) - s.events().begin());
          const auto& occ = p.occurrences[m];
          out += std::find(occ.begin(), occ.end(), static_cast<double>(t)) != occ.end() ? "1" : "0";
        } else if (is_observed(s, p, t, v)) {
          out += csv::format(value_at(s, p, t, v));
        }
      }
      for (std::size_t g = 0; g < G; ++g) out += group_observed(s, p, t, g) ? ",1" : ",0";
      out += '\n';
    }
    out += id + "," + csv::format(p.exit_time);
    for (std::size_t v = 0; v < V; ++v) {
      out += ',';
      if (s[v].role != Role::event) continue;
      const auto m = static_cast<std::size_t>(std::find(s.events().begin(), s.events().end(), v) - s.events().begin());
      const auto& occ = p.occurrences[m];
      out += std::find(occ.begin(), occ.end(), p.exit_time) != occ.end() ? "1" : "0";
    }
    for (std::size_t g = 0; g < G; ++g) out += ",0";
    out += '\n';
  }
  return out;
}

inline Cohort parse_cohort(const std::vector<std::string>& lines, const Schema& schema) {
  const std::size_t V = schema.size(), G = schema.groups().size();
  if (lines.empty()) throw ParseError("empty cohort file", 1);
  const auto header = csv::split(lines[0]);
  if (header.size() < 2 || csv::trim(header[0]) != "patient_id" || csv::trim(header[1]) != "time")
    throw ParseError("header must start with patient_id,time", 1);
  std::vector<std::size_t> var_col(V, kNoGroup), group_col(G, kNoGroup);
  for (std::size_t c = 2; c < header.size(); ++c) {
    const std::string name(csv::trim(header[c]));
    if (name.rfind("obs_", 0) == 0) {
      const auto it = std::find(schema.groups().begin(), schema.groups().end(), name.substr(4));
      if (it == schema.groups().end()) throw ParseError("unknown observation group", 1, name);
      const auto g = static_cast<std::size_t>(it - schema.groups().begin());
      if (group_col[g] != kNoGroup) throw ParseError("duplicate column", 1, name);
      group_col[g] = c;
      continue;
    }
    const auto v = schema.find(name);
    if (!v) throw ParseError("column is not in the schema", 1, name);
    if (var_col[*v] != kNoGroup) throw ParseError("duplicate column", 1, name);
    var_col[*v] = c;
  }
  for (std::size_t v = 0; v < V; ++v)
    if (var_col[v] == kNoGroup) throw ParseError("schema variable has no column", 1, schema[v].name);
  for (std::size_t g = 0; g < G; ++g)
    if (group_col[g] == kNoGroup) throw ParseError("observation group has no column", 1, "obs_" + schema.groups()[g]);

  struct Row {
    std::size_t line;
    double time;
    std::vector<std::string_view> cells;
  };
  Cohort cohort;
  cohort.schema = schema;
  std::vector<Row> rows;
  std::int64_t current = 0;
  std::map<std::int64_t, bool> seen;

  auto flush = [&]() {
    if (rows.empty()) return;
    const Row& exit = rows.back();
    PatientTrajectory p;
    p.id = current;
    p.steps = rows.size() - 1;
    p.exit_time = exit.time;
    if (p.steps == 0) throw ParseError("patient has no observation rows before its exit row", exit.line);
    if (exit.time <= static_cast<double>(p.steps - 1))
      throw ParseError("exit row must come after the last observation step", exit.line, "time");
    p.values.assign(p.steps * V, std::numeric_limits<double>::quiet_NaN());
    p.observed.assign(p.steps * G, 0);
    p.occurrences.resize(schema.events().size());
    for (std::size_t t = 0; t < rows.size(); ++t) {
      const Row& r = rows[t];
      const bool is_exit = t + 1 == rows.size();
      if (!is_exit && r.time != static_cast<double>(t))
        throw ParseError("observation rows must sit at consecutive integer times 0, 1, 2, ...", r.line, "time");
      for (std::size_t g = 0; g < G; ++g) {
        const auto cell = csv::trim(r.cells[group_col[g]]);
        if (cell != "0" && cell != "1") throw ParseError("flag must be 0 or 1", r.line, "obs_" + schema.groups()[g]);
        if (is_exit && cell == "1") throw ParseError("exit row cannot carry observations", r.line, "obs_" + schema.groups()[g]);
        if (!is_exit) p.observed[t * G + g] = cell == "1" ? 1 : 0;
      }
      for (std::size_t m = 0; m < schema.events().size(); ++m) {
        const std::size_t v = schema.events()[m];
        const auto cell = csv::trim(r.cells[var_col[v]]);
        if (cell != "0" && cell != "1") throw ParseError("event indicator must be 0 or 1", r.line, schema[v].name);
        if (cell == "1") {
          if (schema[v].censoring && !is_exit)
            throw ParseError("censoring event recorded before the end of follow-up", r.line, schema[v].name);
          p.occurrences[m].push_back(r.time);
        }
        if (!is_exit) p.values[t * V + v] = cell == "1" ? 1.0 : 0.0;
      }
      for (std::size_t v = 0; v < V; ++v) {
        if (schema[v].role == Role::event) continue;
        const auto cell = csv::trim(r.cells[var_col[v]]);
        if (is_exit) {
          if (!cell.empty()) throw ParseError("exit row must leave longitudinal cells empty", r.line, schema[v].name);
          continue;
        }
        const bool obs = p.observed[t * G + schema.group_of(v)] != 0;
        if (cell.empty()) {
          if (obs) throw ParseError("empty cell in an observed group", r.line, schema[v].name);
          continue;
        }
        const auto x = csv::parse_double(cell);
        if (!x) throw ParseError("not a number: '" + std::string(cell) + "'", r.line, schema[v].name);
        if (schema[v].role == Role::binary && *x != 0.0 && *x != 1.0)
          throw ParseError("binary value must be 0 or 1", r.line, schema[v].name);
        p.values[t * V + v] = *x;
      }
    }
    cohort.patients.push_back(std::move(p));
    rows.clear();
  };

  for (std::size_t r = 1; r < lines.size(); ++r) {
    const std::size_t line_no = r + 1;
    if (csv::trim(lines[r]).empty()) continue;
    auto cells = csv::split(lines[r]);
    if (cells.size() != header.size())
      throw ParseError("expected " + std::to_string(header.size()) + " fields, found " + std::to_string(cells.size()),
                       line_no);
    const auto id = csv::parse_int(cells[0]);
    if (!id) throw ParseError("patient_id must be an integer", line_no, "patient_id");
    const auto time = csv::parse_double(cells[1]);
    if (!time || *time < 0.0) throw ParseError("time must be a non-negative number", line_no, "time");
    if (rows.empty() || *id != current) {
      flush();
      if (seen.count(*id)) throw ParseError("rows of patient " + std::to_string(*id) + " are not contiguous", line_no, "patient_id");
      seen[*id] = true;
      current = *id;
    } else {
      const double prev = rows.back().time;
      if (*time == prev) throw ParseError("duplicate (patient, time) row", line_no, "time");
      if (*time < prev) throw ParseError("time goes backwards", line_no, "time");
    }
    rows.push_back({line_no, *time, std::move(cells)});
  }
  flush();
  return cohort;
}

inline Cohort load_cohort(const std::string& data_path, const std::string& schema_path) {
  const Schema schema = load_schema(schema_path);
  const auto lines = csv::read_lines(data_path);
  return parse_cohort(lines, schema);
}

// Ground-truth sidecar: one row per patient and grid step.
inline std::string format_truth(const Cohort& cohort) {
  const Schema& s = cohort.schema;
  std::vector<std::string> header{"patient_id", "time"};
  for (std::size_t c : s.continuous()) {
    header.push_back("re_intercept_" + s[c].name);
    header.push_back("re_slope_" + s[c].name);
  }
  for (std::size_t b : s.binary()) header.push_back("re_intercept_" + s[b].name);
  for (std::size_t c : s.continuous()) header.push_back("mean_" + s[c].name);
  for (std::size_t b : s.binary()) header.push_back("prob_" + s[b].name);
  for (std::size_t e : s.events()) header.push_back("hazard_" + s[e].name);
  for (std::size_t e : s.events()) header.push_back("latent_time_" + s[e].name);
  std::string out = csv::join(header) + "\n";
  const std::size_t C = s.continuous().size(), D = s.binary().size(), M = s.events().size();
  for (const auto& p : cohort.patients) {
    const LatentRecord& l = p.latent;
    for (std::size_t t = 0; t < l.grid_steps; ++t) {
      std::vector<std::string> row{std::to_string(p.id), std::to_string(t)};
      for (std::size_t c = 0; c < C; ++c) {
        row.push_back(csv::format(l.random_intercept[c]));
        row.push_back(csv::format(l.random_slope[c]));
      }
      for (std::size_t d = 0; d < D; ++d) row.push_back(csv::format(l.binary_intercept[d]));
      for (std::size_t c = 0; c < C; ++c) row.push_back(csv::format(l.mean[t * C + c]));
      for (std::size_t d = 0; d < D; ++d) row.push_back(csv::format(l.prob[t * D + d]));
      for (std::size_t m = 0; m < M; ++m) row.push_back(csv::format(l.hazard[t * M + m]));
      for (std::size_t m = 0; m < M; ++m)
        row.push_back(std::isfinite(l.event_time[m]) ? csv::format(l.event_time[m]) : std::string("inf"));
      out += csv::join(row) + "\n";
    }
  }
  return out;
}

inline void save_cohort(const Cohort& cohort, const CohortPaths& paths) {
  csv::write_text(paths.schema, format_schema(cohort.schema));
  csv::write_text(paths.data, format_cohort(cohort));
  const bool has_truth = !cohort.patients.empty() && !cohort.patients.front().latent.empty();
  if (has_truth && !paths.truth.empty()) csv::write_text(paths.truth, format_truth(cohort));
}

struct CohortSummary {
  std::size_t patients = 0;
  std::size_t observation_rows = 0;
  std::vector<std::string> continuous_names;
  std::vector<double> continuous_mean, continuous_sd;
  std::vector<std::string> binary_names;
  std::vector<double> binary_prevalence;  // over observed cells
  std::vector<std::string> event_names;
  std::vector<double> event_fraction;     // patients with at least one occurrence
};

inline CohortSummary summarize(const Cohort& cohort) {
  const Schema& s = cohort.schema;
  const auto st = compute_stats(cohort);
  CohortSummary out;
  out.patients = cohort.patients.size();
  for (const auto& p : cohort.patients) out.observation_rows += p.steps;
  for (std::size_t v : s.continuous()) {
    out.continuous_names.push_back(s[v].name);
    out.continuous_mean.push_back(st.mean[v]);
    out.continuous_sd.push_back(st.sd[v]);
  }
  for (std::size_t v : s.binary()) {
    out.binary_names.push_back(s[v].name);
    out.binary_prevalence.push_back(st.mean[v]);
  }
  for (std::size_t m = 0; m < s.events().size(); ++m) {
    out.event_names.push_back(s[s.events()[m]].name);
    std::size_t n = 0;
    for (const auto& p : cohort.patients) n += p.occurrences[m].empty() ? 0 : 1;
    out.event_fraction.push_back(out.patients ? static_cast<double>(n) / static_cast<double>(out.patients) : 0.0);
  }
  return out;
}

}  // namespace datlas
