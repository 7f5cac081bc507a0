// Generator for the parametric training-pipeline workflow (networks ×
// hyperparameter settings × datasets, cross-validated over folds) with
// deterministic stub commands, plus the wave-based makespan estimator.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace hflow {

struct HyperSetting {
  std::string name;
  double learning_rate = 1e-3;
  double weight_decay = 1e-4;
  double lr_decay = 0.9;
};

struct GridSpec {
  std::vector<std::string> networks;
  std::vector<HyperSetting> hyperparams;
  std::vector<std::string> datasets;
  uint32_t folds = 1;

  uint64_t variant_count() const {
    return static_cast<uint64_t>(networks.size()) * hyperparams.size() *
           datasets.size();
  }
};

// Convenience: axis names net0..netN-1 / hp0.. / ds0.. with hyperparam
// values varied deterministically per index.
GridSpec make_grid_spec(uint32_t networks, uint32_t hyperparams,
                        uint32_t datasets, uint32_t folds);

struct GridFiles {
  std::string workflow_yaml;
  std::string environment_yaml;
  std::string manifest_json;  // variant ids in enumeration order
};

// Variant v = (network_index · |hyperparams| + hp_index) · |datasets| +
// dataset_index: networks outermost, datasets innermost.
GridFiles generate_grid(const GridSpec& spec);

// Deterministic stand-in for a trained variant's fold metric, in [0,1].
// Bit-exact across platforms: three rounds of the 64-bit splitmix
// finalizer over seed, variant and fold, top 53 bits mapped to the unit
// interval.
double stub_metric(uint64_t seed, uint64_t variant, uint64_t fold);

// Hours to finish `variants` equal jobs of `hours_each` on `slots`
// parallel slots: ceil(variants/slots) waves.
double estimate_makespan(uint64_t variants, double hours_each,
                         uint64_t slots);

}  // namespace hflow
