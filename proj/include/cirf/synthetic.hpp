#pragma once

// Schema-aligned synthetic stance data plus a scripted completion backend
// that answers the rationale and summarization prompts for it.
//
// Each stance class owns a family of predicate names. Training examples draw
// names from the first half of each family; dev and test examples draw from
// the second half and mention unseen targets, so only the cluster summaries
// (which carry a family phrase) connect evaluation predicates to training.

#include <algorithm>
#include <array>
#include <atomic>
#include <cctype>
#include <cstdint>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "cirf/dataset.hpp"
#include "cirf/hash.hpp"
#include "cirf/llm_gateway.hpp"

namespace cirf::synth {

struct Options {
  std::uint64_t seed = 7;
  int total_names = 64;  // spread round-robin over the 3 families
  int train_size = 32;
  int dev_size = 48;
  int test_size = 48;
  int predicates_per_example = 3;
};

inline constexpr std::array<std::string_view, 3> kFamilyPhrase = {
    "endorses beneficial outcome", "warns harmful consequence", "reports factual observation"};

inline constexpr std::array<std::string_view, 3> kAttitude = {"Support", "Opposed", "Neutral"};

inline const std::vector<std::string>& train_targets() {
  static const std::vector<std::string> t = {"Masks", "Tariffs", "Nuclear", "Vaccines", "Curfews", "Subsidies"};
  return t;
}

inline const std::vector<std::string>& eval_targets() {
  static const std::vector<std::string> t = {"Lockdowns", "Pipelines", "Drones", "Uniforms", "Tolls", "Robots"};
  return t;
}

struct Lexicon {
  // names[f] = predicate names of family f; the first `split[f]` are training names.
  std::array<std::vector<std::string>, 3> names;
  std::array<std::size_t, 3> split{};
  std::map<std::string, int> family_of;
};

namespace detail {

/// Pronounceable pseudo-word of two or three syllables; distinct words keep
/// predicate names lexically unrelated to each other.
inline std::string pseudo_word(Rng& rng) {
  static constexpr std::string_view onset = "bdfgklmnprstvz";
  static constexpr std::string_view vowel = "aeiou";
  const int syllables = 2 + static_cast<int>(rng.index(2));
  std::string w;
  for (int s = 0; s < syllables; ++s) {
    w += onset[rng.index(onset.size())];
    w += vowel[rng.index(vowel.size())];
  }
  return w;
}

inline std::string capitalized(std::string s) {
  if (!s.empty()) s.front() = static_cast<char>(std::toupper(static_cast<unsigned char>(s.front())));
  return s;
}

}  // namespace detail

/// Three-word snake_case names assigned to families round-robin.
inline Lexicon make_lexicon(const Options& o) {
  Rng rng(o.seed ^ 0x1e81c0ULL);
  Lexicon lex;
  std::set<std::string> used;
  for (int i = 0; i < o.total_names; ++i) {
    const int f = i % 3;
    std::string name;
    for (int w = 0; w < 3; ++w) {
      std::string word;
      do word = detail::pseudo_word(rng);
      while (!used.insert(word).second);
      name += (w == 0 ? detail::capitalized(word) : "_" + word);
    }
    lex.names[f].push_back(name);
    lex.family_of[name] = f;
  }
  for (int f = 0; f < 3; ++f) lex.split[f] = (lex.names[f].size() + 1) / 2;
  return lex;
}

struct Example {
  LabeledExample row;
  std::vector<std::string> names;  // predicate names in the rationale
};

struct Corpus {
  Lexicon lexicon;
  std::vector<Example> train;
  std::vector<Example> dev;
  std::vector<Example> test;
};

/// Rationale text for an example, in the shape real responses take: prose,
/// numbered FOL lines, and a concluding attitude line.
inline std::string rationale_for(const Example& ex) {
  const std::string& t = ex.row.target;
  const auto& n = ex.names;
  std::string out = "Let us analyze the attitude step by step.\n";
  out += "1. " + n[0] + "(" + t + ") ∧ " + n[1] + "(" + t + ")\n";
  out += "2. " + n[1] + "(" + t + ") → " + n[2] + "(" + t + ")\n";
  if (n.size() > 3) out += "3. " + n[0] + "(" + t + ") → " + n[3] + "(" + t + ")\n";
  out += "Attitude: " + std::string(kAttitude.at(ex.row.label)) + "\n";
  return out;
}

inline std::vector<Example> make_split(const Lexicon& lex, const Options& o, int size, bool training,
                                       const std::vector<std::string>& targets, Rng& rng) {
  std::vector<Example> out;
  for (int i = 0; i < size; ++i) {
    Example ex;
    const int label = i % 3;
    ex.row.label = label;
    ex.row.target = targets[rng.index(targets.size())];
    const auto& fam = lex.names[label];
    const std::size_t lo = training ? 0 : lex.split[label];
    const std::size_t hi = training ? lex.split[label] : fam.size();
    std::vector<std::string> pool(fam.begin() + static_cast<std::ptrdiff_t>(lo),
                                  fam.begin() + static_cast<std::ptrdiff_t>(hi));
    for (std::size_t k = pool.size(); k > 1; --k) std::swap(pool[k - 1], pool[rng.index(k)]);
    const auto take = std::min<std::size_t>(pool.size(), static_cast<std::size_t>(o.predicates_per_example));
    ex.names.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(take));
    while (ex.names.size() < 3) ex.names.push_back(ex.names.front());
    std::string words;
    for (const auto& name : ex.names) {
      std::string spaced = name;
      std::replace(spaced.begin(), spaced.end(), '_', ' ');
      words += (words.empty() ? "" : ", and ") + spaced;
    }
    ex.row.text = "About " + ex.row.target + ": " + words + ".";
    out.push_back(std::move(ex));
  }
  return out;
}

inline Corpus generate(const Options& o = {}) {
  Corpus c;
  c.lexicon = make_lexicon(o);
  Rng rng(o.seed);
  c.train = make_split(c.lexicon, o, o.train_size, true, train_targets(), rng);
  c.dev = make_split(c.lexicon, o, o.dev_size, false, eval_targets(), rng);
  c.test = make_split(c.lexicon, o, o.test_size, false, eval_targets(), rng);
  return c;
}

inline std::vector<LabeledExample> rows_of(const std::vector<Example>& split) {
  std::vector<LabeledExample> out;
  for (const auto& e : split) out.push_back(e.row);
  return out;
}

/// Deterministic stand-in for the chat endpoint. Rationale prompts are looked
/// up by their rendered text; summarization prompts are answered from the
/// family of the listed predicate names.
class ScriptedBackend final : public CompletionBackend {
 public:
  ScriptedBackend(const Corpus& corpus, const PromptSettings& settings) : lexicon_(corpus.lexicon) {
    for (const auto* split : {&corpus.train, &corpus.dev, &corpus.test})
      for (const auto& ex : *split)
        p1_[render_p1(ex.row.text, ex.row.target, settings).prompt] = rationale_for(ex);
  }

  std::string complete(const PromptRequest& req) override {
    ++calls_;
    if (req.template_id == TemplateId::P1) {
      auto it = p1_.find(req.prompt);
      if (it == p1_.end()) throw ProviderError("scripted backend has no rationale for this prompt");
      return it->second;
    }
    return summarize(req.prompt);
  }

  std::size_t calls() const { return calls_; }

 private:
  std::string summarize(const std::string& prompt) const {
    std::array<int, 3> votes{};
    std::vector<std::string> names;
    std::size_t pos = prompt.find("\n\n");
    pos = pos == std::string::npos ? prompt.size() : pos + 2;
    while (pos < prompt.size()) {
      std::size_t end = prompt.find('\n', pos);
      if (end == std::string::npos) end = prompt.size();
      const std::string line = prompt.substr(pos, end - pos);
      const std::string name = line.substr(0, line.find('('));
      auto it = lexicon_.family_of.find(name.starts_with("¬") ? name.substr(2) : name);
      if (it != lexicon_.family_of.end()) {
        ++votes[it->second];
        if (std::find(names.begin(), names.end(), it->first) == names.end()) names.push_back(it->first);
      }
      pos = end + 1;
    }
    const int family = static_cast<int>(std::max_element(votes.begin(), votes.end()) - votes.begin());
    // An abstract phrase shared by the family, qualified by the leading word of
    // the first listed name.
    std::string out(kFamilyPhrase[family]);
    if (!names.empty()) out += " such as " + names.front().substr(0, names.front().find('_'));
    return out;
  }

  Lexicon lexicon_;
  std::map<std::string, std::string> p1_;
  std::atomic<std::size_t> calls_{0};
};

}  // namespace cirf::synth
