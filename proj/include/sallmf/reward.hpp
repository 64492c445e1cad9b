#pragma once

// Ensemble reward model with the Bradley-Terry preference predictor and
// cross-entropy preference training. Member outputs are tanh-bounded, so
// every reward lies in (-1, 1); preference probabilities are computed through
// the sigmoid of the return difference rather than literal exponentials.

#include "sallmf/approx.hpp"
#include "sallmf/core.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace sallmf::reward {

inline double sigmoid(double d) {
  if (d >= 0.0) return 1.0 / (1.0 + std::exp(-d));
  const double e = std::exp(d);
  return e / (1.0 + e);
}

inline double log_sigmoid(double d) {
  return d >= 0.0 ? -std::log1p(std::exp(-d)) : d - std::log1p(std::exp(d));
}

// ---------------------------------------------------------------------------

struct RewardEnsemble {
  approx::MLPSpec spec;
  std::vector<approx::Parameters> members;
  std::vector<approx::AdamState> opt;
  std::int64_t train_rounds = 0;

  int member_count() const { return static_cast<int>(members.size()); }

  static RewardEnsemble create(int state_dims, std::uint64_t seed, int members = 3,
                               int hidden_layers = 3, int hidden_units = 256,
                               double lr = 3e-4) {
    RewardEnsemble e;
    e.spec = approx::MLPSpec{state_dims, 1, hidden_layers, hidden_units,
                             approx::Activation::LeakyReLU, approx::OutputSquash::Tanh};
    for (int m = 0; m < members; ++m) {
      e.members.push_back(approx::he_init(e.spec, seed + static_cast<std::uint64_t>(m)));
      e.opt.push_back(approx::AdamState::create(e.spec, lr));
    }
    return e;
  }
};

inline Mat states_matrix(const TrajectorySegment& seg) {
  Mat m(seg.length(), seg.layout().total_dims);
  for (int t = 0; t < seg.length(); ++t) m.row(t) = seg.states()[static_cast<size_t>(t)].values();
  return m;
}

// Sum of per-state rewards over the segment, for one ensemble member.
inline double segment_return(const approx::MLPSpec& spec, const approx::Parameters& member,
                             const TrajectorySegment& segment) {
  if (segment.layout().total_dims != spec.input_dims) {
    throw std::invalid_argument("segment states do not match reward input dims");
  }
  return approx::forward(member, spec, states_matrix(segment)).sum();
}

inline double segment_return(const RewardEnsemble& ensemble, int member,
                             const TrajectorySegment& segment) {
  return segment_return(ensemble.spec, ensemble.members[static_cast<size_t>(member)], segment);
}

// P[seg1 > seg0] via the stable sigmoid of the return difference.
inline double preference_probability(const approx::MLPSpec& spec, const approx::Parameters& member,
                                     const TrajectorySegment& seg0, const TrajectorySegment& seg1) {
  const double r0 = segment_return(spec, member, seg0);
  const double r1 = segment_return(spec, member, seg1);
  return sigmoid(r1 - r0);
}

inline double preference_probability(const RewardEnsemble& ensemble, int member,
                                     const TrajectorySegment& seg0, const TrajectorySegment& seg1) {
  return preference_probability(ensemble.spec, ensemble.members[static_cast<size_t>(member)], seg0,
                                seg1);
}

inline double ensemble_reward(const RewardEnsemble& ensemble, const State& state) {
  Mat row(1, state.dims());
  row.row(0) = state.values();
  double sum = 0.0;
  for (const auto& m : ensemble.members) sum += approx::forward(m, ensemble.spec, row)(0, 0);
  return sum / static_cast<double>(ensemble.member_count());
}

// Batched variant: rows of `states` are state vectors.
inline Vec ensemble_reward_batch(const RewardEnsemble& ensemble, const Mat& states) {
  Vec out = Vec::Zero(states.rows());
  for (const auto& m : ensemble.members) out += approx::forward(m, ensemble.spec, states).col(0);
  return out / static_cast<double>(ensemble.member_count());
}

// ---------------------------------------------------------------------------
// Preference dataset

struct PreferenceDataset {
  std::vector<PreferenceTriple> triples;
  int sampled_count = 0;
  int augmented_count = 0;
  int equal_count = 0;

  void add(PreferenceTriple triple) {
    if (triple.source == TripleSource::Sampled) {
      sampled_count += 1;
    } else {
      augmented_count += 1;
    }
    if (triple.label == 0.5) equal_count += 1;
    triples.push_back(std::move(triple));
  }

  std::size_t size() const { return triples.size(); }
  bool empty() const { return triples.empty(); }
};

// ---------------------------------------------------------------------------
// Cross-entropy preference loss on a batch of triples:
//   L = -[(1-y) log P[s0>s1] + y log P[s1>s0]],   y = 0.5 weighs both halves.
// Returns mean loss and the mean-loss gradient.

struct BatchLoss {
  double loss = 0.0;
  approx::Parameters grads;
};

inline BatchLoss preference_loss(const approx::MLPSpec& spec, const approx::Parameters& member,
                                 std::span<const PreferenceTriple* const> batch) {
  if (batch.empty()) throw std::invalid_argument("preference_loss: empty batch");
  const int H = batch.front()->seg0.length();
  const int n = static_cast<int>(batch.size());

  Mat states(2 * n * H, spec.input_dims);
  for (int b = 0; b < n; ++b) {
    const auto& triple = *batch[static_cast<size_t>(b)];
    for (int t = 0; t < H; ++t) {
      states.row((2 * b) * H + t) = triple.seg0.states()[static_cast<size_t>(t)].values();
      states.row((2 * b + 1) * H + t) = triple.seg1.states()[static_cast<size_t>(t)].values();
    }
  }

  auto trace = approx::forward_trace(member, spec, states);
  double loss = 0.0;
  Mat upstream = Mat::Zero(states.rows(), 1);
  for (int b = 0; b < n; ++b) {
    double r0 = 0.0, r1 = 0.0;
    for (int t = 0; t < H; ++t) {
      r0 += trace.output((2 * b) * H + t, 0);
      r1 += trace.output((2 * b + 1) * H + t, 0);
    }
    const double y = batch[static_cast<size_t>(b)]->label;
    const double d = r0 - r1;
    loss += -(1.0 - y) * log_sigmoid(d) - y * log_sigmoid(-d);
    // dL/dd = -(1-y) sigmoid(-d) + y sigmoid(d); each seg0 state carries dL/dd,
    // each seg1 state the negation.
    const double dl_dd = (-(1.0 - y) * sigmoid(-d) + y * sigmoid(d)) / static_cast<double>(n);
    for (int t = 0; t < H; ++t) {
      upstream((2 * b) * H + t, 0) = dl_dd;
      upstream((2 * b + 1) * H + t, 0) = -dl_dd;
    }
  }
  loss /= static_cast<double>(n);

  auto back = approx::backward_from_trace(member, spec, trace, upstream);
  return BatchLoss{loss, std::move(back.grads)};
}

// ---------------------------------------------------------------------------
// Training: each member sees independently shuffled batches of the full
// dataset for `epochs` epochs. Returns the per-epoch mean loss per member.

inline std::vector<std::vector<double>> train(RewardEnsemble& ensemble,
                                              const PreferenceDataset& dataset,
                                              std::mt19937_64& rng, int epochs = 10,
                                              int batch_size = 512) {
  if (dataset.empty()) throw std::invalid_argument("reward train: dataset is empty");
  std::vector<std::vector<double>> curves(static_cast<size_t>(ensemble.member_count()));

  for (int m = 0; m < ensemble.member_count(); ++m) {
    auto& params = ensemble.members[static_cast<size_t>(m)];
    auto& opt = ensemble.opt[static_cast<size_t>(m)];
    std::vector<const PreferenceTriple*> order;
    order.reserve(dataset.size());
    for (const auto& t : dataset.triples) order.push_back(&t);

    for (int epoch = 0; epoch < epochs; ++epoch) {
      std::shuffle(order.begin(), order.end(), rng);
      double epoch_loss = 0.0;
      int batches = 0;
      for (size_t begin = 0; begin < order.size(); begin += static_cast<size_t>(batch_size)) {
        const size_t end = std::min(order.size(), begin + static_cast<size_t>(batch_size));
        auto batch = std::span<const PreferenceTriple* const>(order.data() + begin, end - begin);
        BatchLoss bl = preference_loss(ensemble.spec, params, batch);
        approx::adam_step(params, bl.grads, opt);
        epoch_loss += bl.loss;
        batches += 1;
      }
      curves[static_cast<size_t>(m)].push_back(epoch_loss / std::max(1, batches));
    }
  }
  ensemble.train_rounds += 1;
  return curves;
}

// ---------------------------------------------------------------------------
// Dataset export/import: one JSON object per line, segment coordinates at
// 4-decimal precision for offline inspection and reward-bias studies.

inline void export_dataset(const PreferenceDataset& dataset, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open dataset export path: " + path);
  PrivilegedAccess::Scope oracle;
  auto seg_json = [](const TrajectorySegment& seg) {
    nlohmann::ordered_json j;
    j["episode_id"] = seg.episode_id();
    j["start_step"] = seg.start_step();
    j["synthetic"] = seg.synthetic();
    nlohmann::ordered_json states = nlohmann::ordered_json::array();
    for (const auto& s : seg.states()) {
      nlohmann::ordered_json row = nlohmann::ordered_json::array();
      for (int i = 0; i < s.dims(); ++i) row.push_back(std::round(s[i] * 1e4) / 1e4);
      states.push_back(std::move(row));
    }
    j["states"] = std::move(states);
    nlohmann::ordered_json priv = nlohmann::ordered_json::array();
    for (double r : seg.privileged_rewards()) priv.push_back(r);
    j["privileged"] = std::move(priv);
    return j;
  };
  for (const auto& t : dataset.triples) {
    nlohmann::ordered_json j;
    j["label"] = t.label;
    j["source"] = t.source == TripleSource::Sampled ? "sampled" : "augmented";
    j["seg0"] = seg_json(t.seg0);
    j["seg1"] = seg_json(t.seg1);
    os << j.dump() << "\n";
  }
}

inline PreferenceDataset import_dataset(const std::string& path,
                                        const std::shared_ptr<const StateLayout>& layout) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open dataset import path: " + path);
  PreferenceDataset dataset;
  std::string line;
  auto seg_from = [&](const nlohmann::json& j) {
    std::vector<State> states;
    for (const auto& row : j.at("states")) {
      Vec v(static_cast<int>(row.size()));
      for (size_t i = 0; i < row.size(); ++i) v[static_cast<int>(i)] = row[i].get<double>();
      states.emplace_back(std::move(v), layout);
    }
    std::vector<double> priv = j.at("privileged").get<std::vector<double>>();
    return TrajectorySegment(std::move(states), {}, std::move(priv),
                             j.at("episode_id").get<std::int64_t>(),
                             j.at("start_step").get<std::int64_t>(),
                             j.at("synthetic").get<bool>());
  };
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line);
    dataset.add(PreferenceTriple(
        seg_from(j.at("seg0")), seg_from(j.at("seg1")), j.at("label").get<double>(),
        j.at("source").get<std::string>() == "sampled" ? TripleSource::Sampled
                                                       : TripleSource::Augmented));
  }
  return dataset;
}

}  // namespace sallmf::reward
