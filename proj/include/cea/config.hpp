#ifndef CEA_CONFIG_HPP
#define CEA_CONFIG_HPP

#include <algorithm>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cea/error.hpp"
#include "cea/evaluator.hpp"
#include "cea/trainer.hpp"

namespace cea {

namespace detail {
template <typename T>
void read_if(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key) && !j[key].is_null()) out = j[key].get<T>();
}
}  // namespace detail

/// Missing keys keep their defaults. Unknown keys are rejected so typos do
/// not silently fall back to defaults.
inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  static const std::vector<std::string> known = {"epochs", "batch_size", "learning_rate", "weight_decay", "beta1", "beta2",
                                                 "epsilon", "seed", "dims", "checkpoint_path", "pair_dump_path"};
  for (const auto& [key, _] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end()) fail(errc::config, "unknown train option \"" + key + "\"");
  TrainConfig c;
  detail::read_if(j, "epochs", c.epochs);
  detail::read_if(j, "batch_size", c.batch_size);
  detail::read_if(j, "learning_rate", c.learning_rate);
  detail::read_if(j, "weight_decay", c.weight_decay);
  detail::read_if(j, "beta1", c.beta1);
  detail::read_if(j, "beta2", c.beta2);
  detail::read_if(j, "epsilon", c.epsilon);
  detail::read_if(j, "seed", c.seed);
  detail::read_if(j, "checkpoint_path", c.checkpoint_path);
  detail::read_if(j, "pair_dump_path", c.pair_dump_path);
  if (j.contains("dims")) {
    const auto& d = j["dims"];
    detail::read_if(d, "buckets", c.dims.buckets);
    detail::read_if(d, "token_dim", c.dims.token_dim);
    detail::read_if(d, "hidden", c.dims.hidden);
    detail::read_if(d, "output", c.dims.output);
  }
  c.validate();
  return c;
}

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"weight_decay", c.weight_decay},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"epsilon", c.epsilon},
          {"seed", c.seed},
          {"dims", {{"buckets", c.dims.buckets}, {"token_dim", c.dims.token_dim}, {"hidden", c.dims.hidden}, {"output", c.dims.output}}}};
}

/// Experiment file: {"train": {...}, "k_max": 100, "fractions": [...],
/// "hidden_class": "...", "timing": {"k": 5, "batch_size": 32, "repetitions": 3}}.
struct ExperimentFile {
  ExperimentConfig experiment;
  std::vector<double> fractions{5, 10, 20, 30, 40, 50, 60};
  std::string hidden_class;
  std::size_t timing_k = 0;  // 0 = dev-selected
  std::size_t timing_batch = 32;
  std::size_t timing_reps = 3;
};

inline ExperimentFile experiment_file_from_json(const nlohmann::json& j) {
  ExperimentFile f;
  if (j.contains("train")) f.experiment.train = train_config_from_json(j["train"]);
  detail::read_if(j, "k_max", f.experiment.k_max);
  detail::read_if(j, "max_subset_attempts", f.experiment.max_subset_attempts);
  detail::read_if(j, "fractions", f.fractions);
  detail::read_if(j, "hidden_class", f.hidden_class);
  if (j.contains("timing")) {
    detail::read_if(j["timing"], "k", f.timing_k);
    detail::read_if(j["timing"], "batch_size", f.timing_batch);
    detail::read_if(j["timing"], "repetitions", f.timing_reps);
  }
  return f;
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(errc::io, "cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(errc::parse, path + ": " + e.what());
  }
}

}  // namespace cea

#endif  // CEA_CONFIG_HPP
