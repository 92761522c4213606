#pragma once

// Synthetic entailment-style sentence pairs.
//
// Vocabulary layout (ids 0 and 1 are the separator and pad):
//   content bands 0..H-1, each of `band_size` ids, followed by a distractor band.
// A premise of length P is split into H consecutive groups; group g draws
// distinct tokens from band g. Consequently:
//   POS  picks one token per group, in order   -> order-preserving subsequence
//   N2   permutes a POS hypothesis (>=1 inversion) -> full overlap, wrong order
//   N1   mostly distractor tokens                -> overlap < H/2
// A bag-of-words model separates POS from N1 by token identity alone; only a
// position-aware model separates POS from N2 (band g must sit in slot g).

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "atlas/error.hpp"
#include "atlas/model.hpp"
#include "atlas/rng.hpp"

namespace atlas {

enum class SplitId { train, id_val, diagnostic };
enum class ExampleKind { pos, n1_random, n2_permuted };
enum class FixtureStrategy { heuristic, generalizing };

inline std::string to_string(SplitId s) {
  switch (s) {
    case SplitId::train: return "train";
    case SplitId::id_val: return "id_val";
    case SplitId::diagnostic: return "diagnostic";
  }
  return "?";
}

inline SplitId split_from_string(const std::string& s) {
  if (s == "train") return SplitId::train;
  if (s == "id_val") return SplitId::id_val;
  if (s == "diagnostic") return SplitId::diagnostic;
  throw ValidationError("unknown split '" + s + "' (expected train|id_val|diagnostic)");
}

inline std::string to_string(ExampleKind k) {
  switch (k) {
    case ExampleKind::pos: return "POS";
    case ExampleKind::n1_random: return "N1_random";
    case ExampleKind::n2_permuted: return "N2_permuted";
  }
  return "?";
}

inline ExampleKind kind_from_string(const std::string& s) {
  if (s == "POS") return ExampleKind::pos;
  if (s == "N1_random") return ExampleKind::n1_random;
  if (s == "N2_permuted") return ExampleKind::n2_permuted;
  throw ValidationError("unknown example kind '" + s + "'");
}

inline std::string to_string(FixtureStrategy s) {
  return s == FixtureStrategy::heuristic ? "heuristic" : "generalizing";
}

struct TaskSpec {
  std::size_t vocab_size = 64;
  std::size_t premise_len = 8;
  std::size_t hypothesis_len = 4;
  double n2_fraction = 0.10;
  std::size_t train_size = 20000;
  std::size_t id_val_size = 2000;
  std::size_t diagnostic_size = 1000;
  std::uint64_t seed = 1234;

  void validate() const {
    require(hypothesis_len >= 1, "task: hypothesis_len must be >= 1");
    require(hypothesis_len <= premise_len, "task: hypothesis_len must not exceed premise_len");
    require(n2_fraction >= 0.0 && n2_fraction <= 1.0, "task: n2_fraction must lie in [0,1]");
  }

  std::size_t size_of(SplitId s) const {
    switch (s) {
      case SplitId::train: return train_size;
      case SplitId::id_val: return id_val_size;
      case SplitId::diagnostic: return diagnostic_size;
    }
    return 0;
  }

  /// Sequence length needed by a model: premise + separator + hypothesis + one pad slot.
  std::size_t sequence_len() const { return premise_len + hypothesis_len + 2; }
  bool operator==(const TaskSpec&) const = default;
};

inline nlohmann::json to_json(const TaskSpec& t) {
  return {{"vocab_size", t.vocab_size},   {"premise_len", t.premise_len},
          {"hypothesis_len", t.hypothesis_len}, {"n2_fraction", t.n2_fraction},
          {"train_size", t.train_size},   {"id_val_size", t.id_val_size},
          {"diagnostic_size", t.diagnostic_size}, {"seed", t.seed}};
}

inline TaskSpec task_spec_from_json(const nlohmann::json& j) {
  TaskSpec t;
  t.vocab_size = j.value("vocab_size", t.vocab_size);
  t.premise_len = j.value("premise_len", t.premise_len);
  t.hypothesis_len = j.value("hypothesis_len", t.hypothesis_len);
  t.n2_fraction = j.value("n2_fraction", t.n2_fraction);
  t.train_size = j.value("train_size", t.train_size);
  t.id_val_size = j.value("id_val_size", t.id_val_size);
  t.diagnostic_size = j.value("diagnostic_size", t.diagnostic_size);
  t.seed = j.value("seed", t.seed);
  t.validate();
  return t;
}

struct Example {
  std::vector<int> premise;
  std::vector<int> hypothesis;
  int label = 0;  // 1 = entail, 0 = non-entail
  ExampleKind kind = ExampleKind::pos;

  bool operator==(const Example&) const = default;
};

struct DatasetSplit {
  SplitId split_id = SplitId::train;
  std::vector<Example> examples;
  nlohmann::json metadata = nlohmann::json::object();

  std::size_t size() const { return examples.size(); }
};

/// Band boundaries derived from the vocabulary size.
struct VocabLayout {
  std::size_t n_bands = 0;
  std::size_t band_size = 0;
  int first_content = 2;
  int distractor_begin = 0;
  int distractor_end = 0;  // exclusive
  std::vector<std::size_t> group_sizes;

  int band_token(std::size_t band, std::size_t i) const {
    return first_content + static_cast<int>(band * band_size + i);
  }
};

inline VocabLayout vocab_layout(const TaskSpec& spec) {
  spec.validate();
  VocabLayout v;
  v.n_bands = spec.hypothesis_len;
  for (std::size_t g = 0; g < v.n_bands; ++g)
    v.group_sizes.push_back(spec.premise_len / v.n_bands + (g < spec.premise_len % v.n_bands ? 1 : 0));
  const std::size_t usable = spec.vocab_size > 2 ? spec.vocab_size - 2 : 0;
  v.band_size = (usable * 3 / 4) / v.n_bands;
  const std::size_t largest_group = *std::max_element(v.group_sizes.begin(), v.group_sizes.end());
  v.distractor_begin = v.first_content + static_cast<int>(v.n_bands * v.band_size);
  v.distractor_end = static_cast<int>(spec.vocab_size);
  if (v.band_size < largest_group + 1 || v.distractor_end - v.distractor_begin < 2)
    throw ValidationError("task: vocab_size " + std::to_string(spec.vocab_size) +
                          " too small for the band layout and the N1 overlap bound");
  return v;
}

// ---------------------------------------------------------------------------
// Oracles

/// 1 iff the hypothesis multiset is contained in the premise multiset.
inline int overlap_oracle(const Example& e) {
  std::map<int, int> counts;
  for (int t : e.premise) ++counts[t];
  for (int t : e.hypothesis)
    if (--counts[t] < 0) return 0;
  return 1;
}

/// 1 iff the hypothesis is an order-preserving subsequence of the premise.
inline int positional_oracle(const Example& e) {
  std::size_t j = 0;
  for (std::size_t i = 0; i < e.premise.size() && j < e.hypothesis.size(); ++i)
    if (e.premise[i] == e.hypothesis[j]) ++j;
  return j == e.hypothesis.size() ? 1 : 0;
}

inline std::size_t shared_tokens(const Example& e) {
  std::map<int, int> counts;
  for (int t : e.premise) ++counts[t];
  std::size_t shared = 0;
  for (int t : e.hypothesis)
    if (counts[t]-- > 0) ++shared;
  return shared;
}

// ---------------------------------------------------------------------------
// Generation

namespace detail {

struct Sampler {
  const TaskSpec& spec;
  VocabLayout layout;
  Rng rng;

  std::vector<int> premise() {
    std::vector<int> p;
    for (std::size_t g = 0; g < layout.n_bands; ++g) {
      auto picks = sample_without_replacement(layout.band_size, layout.group_sizes[g], rng);
      for (auto i : picks) p.push_back(layout.band_token(g, i));
    }
    return p;
  }

  // One token per premise group, in group order.
  std::vector<int> ordered_pick(const std::vector<int>& premise) {
    std::vector<int> h;
    std::size_t offset = 0;
    for (auto gs : layout.group_sizes) {
      h.push_back(premise[offset + uniform_index(rng, gs)]);
      offset += gs;
    }
    return h;
  }

  Example pos() {
    Example e{premise(), {}, 1, ExampleKind::pos};
    e.hypothesis = ordered_pick(e.premise);
    return e;
  }

  Example n2() {
    Example e{premise(), {}, 0, ExampleKind::n2_permuted};
    const auto base = ordered_pick(e.premise);
    std::vector<std::size_t> perm;
    do {
      perm = permutation(base.size(), rng);
    } while (std::is_sorted(perm.begin(), perm.end()));
    for (auto i : perm) e.hypothesis.push_back(base[i]);
    return e;
  }

  Example n1() {
    Example e{premise(), {}, 0, ExampleKind::n1_random};
    const auto span = static_cast<std::size_t>(layout.distractor_end - layout.distractor_begin);
    for (std::size_t j = 0; j < spec.hypothesis_len; ++j)
      e.hypothesis.push_back(layout.distractor_begin + static_cast<int>(uniform_index(rng, span)));
    // Shared tokens must stay strictly below H/2.
    const std::size_t max_shared = (spec.hypothesis_len - 1) / 2;
    if (max_shared > 0 && uniform01(rng) < 0.5) {
      const auto slot = uniform_index(rng, spec.hypothesis_len);
      e.hypothesis[slot] = e.premise[uniform_index(rng, e.premise.size())];
    }
    return e;
  }
};

inline std::string pair_key(const Example& e) {
  std::string k;
  for (int t : e.premise) k += std::to_string(t) + ',';
  k.push_back('|');
  for (int t : e.hypothesis) k += std::to_string(t) + ',';
  return k;
}

struct Mixture {
  std::size_t pos = 0, n1 = 0, n2 = 0;
};

inline Mixture id_mixture(std::size_t n, double n2_fraction) {
  Mixture m;
  m.pos = n / 2;
  const std::size_t neg = n - m.pos;
  m.n2 = static_cast<std::size_t>(std::llround(n2_fraction * static_cast<double>(neg)));
  m.n1 = neg - m.n2;
  return m;
}

inline std::vector<Example> generate(const TaskSpec& spec, const Mixture& mix, Rng rng) {
  Sampler s{spec, vocab_layout(spec), std::move(rng)};
  std::set<std::string> seen;
  std::vector<Example> out;
  out.reserve(mix.pos + mix.n1 + mix.n2);
  auto emit = [&](std::size_t count, auto make) {
    std::size_t attempts = 0;
    for (std::size_t i = 0; i < count;) {
      Example e = make();
      if (seen.insert(pair_key(e)).second) {
        out.push_back(std::move(e));
        ++i;
        attempts = 0;
      } else if (++attempts > 10000) {
        throw ValidationError("task: cannot generate enough distinct examples; increase vocab_size");
      }
    }
  };
  emit(mix.pos, [&] { return s.pos(); });
  emit(mix.n1, [&] { return s.n1(); });
  emit(mix.n2, [&] { return s.n2(); });
  shuffle(out, s.rng);
  return out;
}

}  // namespace detail

inline DatasetSplit gen_split(const TaskSpec& spec, SplitId split_id, std::uint64_t seed) {
  spec.validate();
  const std::size_t n = spec.size_of(split_id);
  detail::Mixture mix = split_id == SplitId::diagnostic ? detail::Mixture{0, 0, n}
                                                        : detail::id_mixture(n, spec.n2_fraction);
  Rng rng(derive_seed(seed, tag_of(to_string(split_id).c_str())));
  DatasetSplit out{split_id, detail::generate(spec, mix, std::move(rng)), {}};
  out.metadata = {{"task", to_json(spec)}, {"seed", seed}, {"split", to_string(split_id)}, {"fixture", nullptr}};
  return out;
}

/// Train split that forces a strategy. Heuristic: negatives are all N1 and every
/// premise and hypothesis is shuffled, so only token identity carries signal.
/// Generalizing: 40% of negatives are N2, so order must be learned.
inline DatasetSplit gen_forced_fixture(const TaskSpec& spec, FixtureStrategy strategy, std::uint64_t seed) {
  spec.validate();
  const std::size_t n = spec.train_size;
  const double n2 = strategy == FixtureStrategy::heuristic ? 0.0 : 0.40;
  Rng rng(derive_seed(seed, tag_of(strategy == FixtureStrategy::heuristic ? "fixture.heuristic"
                                                                            : "fixture.generalizing")));
  auto examples = detail::generate(spec, detail::id_mixture(n, n2), rng);
  if (strategy == FixtureStrategy::heuristic) {
    Rng shuffler(derive_seed(seed, tag_of("fixture.shuffle")));
    for (auto& e : examples) {
      shuffle(e.premise, shuffler);
      shuffle(e.hypothesis, shuffler);
    }
  }
  DatasetSplit out{SplitId::train, std::move(examples), {}};
  out.metadata = {{"task", to_json(spec)}, {"seed", seed}, {"split", "train"}, {"fixture", to_string(strategy)}};
  return out;
}

// ---------------------------------------------------------------------------
// Encoding

inline Batch to_batch(std::span<const Example> examples, std::size_t max_len) {
  std::vector<int> tokens;
  std::vector<int> labels;
  tokens.reserve(examples.size() * max_len);
  for (const auto& e : examples) {
    require(e.premise.size() + e.hypothesis.size() + 1 <= max_len, "to_batch: example longer than max_len");
    const auto start = tokens.size();
    tokens.insert(tokens.end(), e.premise.begin(), e.premise.end());
    tokens.push_back(kSeparatorId);
    tokens.insert(tokens.end(), e.hypothesis.begin(), e.hypothesis.end());
    tokens.resize(start + max_len, kPadId);
    labels.push_back(e.label);
  }
  return Batch(examples.size(), max_len, std::move(tokens), std::move(labels));
}

inline Batch to_batch(const DatasetSplit& split, std::size_t max_len) { return to_batch(split.examples, max_len); }

inline nlohmann::json to_json(const Example& e) {
  return {{"premise", e.premise}, {"hypothesis", e.hypothesis}, {"label", e.label}, {"kind", to_string(e.kind)}};
}

inline Example example_from_json(const nlohmann::json& j) {
  Example e;
  e.premise = j.at("premise").get<std::vector<int>>();
  e.hypothesis = j.at("hypothesis").get<std::vector<int>>();
  e.label = j.at("label").get<int>();
  e.kind = kind_from_string(j.at("kind").get<std::string>());
  require(e.label == 0 || e.label == 1, "dataset: label must be 0 or 1");
  return e;
}

/// One JSON record per line: premise, hypothesis, label, kind.
inline std::string to_jsonl(const DatasetSplit& split) {
  std::string out;
  for (const auto& e : split.examples) {
    out += to_json(e).dump();
    out.push_back('\n');
  }
  return out;
}

inline void write_jsonl(const DatasetSplit& split, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  out << to_jsonl(split);
}

inline DatasetSplit read_jsonl(const std::filesystem::path& path, SplitId split_id) {
  std::ifstream in(path);
  if (!in) throw RuntimeFailure("cannot read dataset " + path.string());
  DatasetSplit split{split_id, {}, {}};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      split.examples.push_back(example_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return split;
}

}  // namespace atlas
