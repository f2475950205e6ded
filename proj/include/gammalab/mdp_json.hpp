#pragma once

// JSON encoding of FiniteMdp:
//   {"n_states", "n_actions", "transition": [s][a][s'], "reward", "initial_dist",
//    "absorbing_state"}

#include <nlohmann/json.hpp>

#include <fstream>
#include <string>

#include "gammalab/exact_mdp.hpp"

namespace gammalab::mdp {

inline nlohmann::json to_json(const FiniteMdp& mdp) {
  nlohmann::json transition = nlohmann::json::array();
  for (int s = 0; s < mdp.n_states; ++s) {
    nlohmann::json rows = nlohmann::json::array();
    for (int a = 0; a < mdp.n_actions; ++a) {
      nlohmann::json row = nlohmann::json::array();
      for (int n = 0; n < mdp.n_states; ++n) row.push_back(mdp.p(s, a, n));
      rows.push_back(std::move(row));
    }
    transition.push_back(std::move(rows));
  }
  return {{"n_states", mdp.n_states},
          {"n_actions", mdp.n_actions},
          {"transition", std::move(transition)},
          {"reward", std::vector<double>(mdp.reward.data(), mdp.reward.data() + mdp.reward.size())},
          {"initial_dist", std::vector<double>(mdp.initial_dist.data(),
                                               mdp.initial_dist.data() + mdp.initial_dist.size())},
          {"absorbing_state", mdp.absorbing_state}};
}

/// Parses and validates; throws InvalidMdp on malformed shapes or broken invariants.
inline FiniteMdp mdp_from_json(const nlohmann::json& doc) {
  for (const char* key : {"n_states", "n_actions", "transition", "reward", "initial_dist",
                          "absorbing_state"})
    if (!doc.contains(key)) throw InvalidMdp(std::string("missing key: ") + key);
  for (const auto& item : doc.items()) {
    const auto& k = item.key();
    if (k != "n_states" && k != "n_actions" && k != "transition" && k != "reward" &&
        k != "initial_dist" && k != "absorbing_state")
      throw InvalidMdp("unknown key: " + k);
  }
  FiniteMdp mdp;
  mdp.n_states = doc.at("n_states").get<int>();
  mdp.n_actions = doc.at("n_actions").get<int>();
  mdp.absorbing_state = doc.at("absorbing_state").get<int>();
  const auto& t = doc.at("transition");
  if (!t.is_array() || static_cast<int>(t.size()) != mdp.n_states)
    throw InvalidMdp("transition must have n_states rows");
  mdp.transition.assign(static_cast<std::size_t>(mdp.n_states) * mdp.n_actions * mdp.n_states, 0.0);
  for (int s = 0; s < mdp.n_states; ++s) {
    if (static_cast<int>(t[s].size()) != mdp.n_actions)
      throw InvalidMdp("transition[s] must have n_actions rows");
    for (int a = 0; a < mdp.n_actions; ++a) {
      if (static_cast<int>(t[s][a].size()) != mdp.n_states)
        throw InvalidMdp("transition[s][a] must have n_states entries");
      for (int n = 0; n < mdp.n_states; ++n) mdp.p(s, a, n) = t[s][a][n].get<double>();
    }
  }
  const auto reward = doc.at("reward").get<std::vector<double>>();
  const auto init = doc.at("initial_dist").get<std::vector<double>>();
  mdp.reward = Eigen::Map<const Eigen::VectorXd>(reward.data(), static_cast<Eigen::Index>(reward.size()));
  mdp.initial_dist = Eigen::Map<const Eigen::VectorXd>(init.data(), static_cast<Eigen::Index>(init.size()));
  mdp.validate();
  return mdp;
}

inline FiniteMdp load_mdp(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return mdp_from_json(nlohmann::json::parse(in));
}

inline void save_mdp(const FiniteMdp& mdp, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << to_json(mdp).dump(2) << '\n';
}

}  // namespace gammalab::mdp
