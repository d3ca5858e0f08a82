// Generates a small synthetic cohort, trains a model for a few epochs and
// prints a five-step forecast for one test patient.

#include <cstdio>

#include "datlas/datlas.hpp"

int main() {
  using namespace datlas;

  const auto cohort = generate_cohort(high_risk_preset(), 300, 8, 21);
  const auto split = split_cohort(cohort, 21);

  TrainConfig tc;
  tc.max_epochs = 5;
  tc.seed = 21;
  const auto data = prepare(split, tc);
  const auto model = train(data.train, data.validation, tc, data.network, data.scaling);
  std::printf("trained %zu epochs, best epoch %zu (validation survival log-likelihood %.4f)\n",
              model.report.epochs.size(), model.report.best_epoch, model.report.best_validation);

  const Schema& s = cohort.schema;
  const auto& patient = split.test.patients.front();
  const auto history = impute_inputs(s, patient, data.stats);
  const auto fc = forecast(model.params, history, 5, 200, 99);

  std::printf("patient %lld, forecast from step %zu\n", static_cast<long long>(patient.id), patient.steps - 1);
  for (const auto& h : fc) {
    std::printf("tau %.0f\n", h.tau);
    for (std::size_t k = 0; k < h.mu.size(); ++k) {
      const auto& b = h.mu[k];
      std::printf("  %-16s mean %8.3f  90%% band [%8.3f, %8.3f]\n", s[s.continuous()[k]].name.c_str(), b.mean, b.lo,
                  b.hi);
    }
    for (std::size_t k = 0; k < h.p.size(); ++k)
      std::printf("  %-16s P(present) %.3f\n", s[s.binary()[k]].name.c_str(), h.p[k].mean);
    for (std::size_t k = 0; k < h.survival.size(); ++k)
      std::printf("  %-16s survival %.3f  risk %.3f\n", s[s.events()[k]].name.c_str(), h.survival[k].mean, h.risk[k]);
  }
  return 0;
}
