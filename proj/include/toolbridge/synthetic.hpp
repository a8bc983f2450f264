#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "toolbridge/corpus.hpp"
#include "toolbridge/error.hpp"
#include "toolbridge/textproc.hpp"

namespace toolbridge {

/// Parameters of the synthetic tool benchmark.
struct SyntheticSpec {
  std::size_t num_tools = 200;
  std::size_t num_queries = 100;
  std::size_t min_tools_per_query = 1;
  std::size_t max_tools_per_query = 3;
  std::size_t vocab_size = 2000;
  std::uint64_t seed = 42;

  void validate() const {
    if (num_tools == 0 || num_queries == 0 || vocab_size == 0 || min_tools_per_query == 0) {
      throw Error(ErrorKind::invalid_argument, "synthetic counts must all be >= 1");
    }
    if (min_tools_per_query > max_tools_per_query) {
      throw Error(ErrorKind::invalid_argument, "min_tools_per_query exceeds max_tools_per_query");
    }
    if (max_tools_per_query > num_tools) {
      throw Error(ErrorKind::invalid_argument, "max_tools_per_query exceeds num_tools");
    }
  }
};

struct SyntheticData {
  std::vector<ToolDoc> docs;
  std::vector<QueryRecord> queries;
};

namespace detail {

// Unbiased draw in [0, n) from a 64-bit engine; platform independent, unlike
// std::uniform_int_distribution.
inline std::size_t draw_index(std::mt19937_64& rng, std::size_t n) {
  const std::uint64_t bound = n;
  const std::uint64_t threshold = (0 - bound) % bound;
  for (;;) {
    const std::uint64_t x = rng();
    if (x >= threshold) return static_cast<std::size_t>(x % bound);
  }
}

inline constexpr std::string_view kFillerWords[] = {
    "the", "a", "an", "and", "for", "to", "of", "with", "my", "some", "me", "please", "can", "you",
    "i", "need", "want", "help", "also", "then", "use", "api", "data", "info", "get", "find", "this",
    "that", "provides", "returns", "service", "about", "from", "in", "on", "it", "is",
};

inline bool is_filler(std::string_view w) {
  return std::find(std::begin(kFillerWords), std::end(kFillerWords), w) != std::end(kFillerWords);
}

inline std::string capitalize(std::string w) {
  if (!w.empty() && w[0] >= 'a' && w[0] <= 'z') w[0] = static_cast<char>(w[0] - 'a' + 'A');
  return w;
}

}  // namespace detail

inline constexpr std::size_t kSyntheticNameWordsPerTool = 3;  // two for tool_name, one for api_name
inline constexpr std::size_t kSyntheticTopicSize = 6;
inline constexpr std::size_t kSyntheticToolsPerCategory = 5;
inline constexpr std::size_t kSyntheticMinIntentWords = 50;

/// Generates a tool corpus and vague/specific query pairs. Specific queries
/// name their tools and APIs; vague ones use only category-level intent
/// words, which are disjoint from every name token. Pure function of its argument.
inline SyntheticData gen_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const std::size_t name_words = spec.num_tools * kSyntheticNameWordsPerTool;
  if (spec.vocab_size < name_words + kSyntheticMinIntentWords) {
    throw Error(ErrorKind::invalid_argument,
                "vocab_size " + std::to_string(spec.vocab_size) + " is too small: " + std::to_string(name_words) +
                    " name words plus at least " + std::to_string(kSyntheticMinIntentWords) +
                    " intent words are needed to keep names out of vague queries");
  }
  std::mt19937_64 rng(spec.seed);
  auto pick = [&](std::size_t n) { return detail::draw_index(rng, n); };

  static constexpr std::string_view consonants = "bcdfghjklmnprstvz";
  static constexpr std::string_view vowels = "aeiou";
  std::vector<std::string> words;
  std::set<std::string> seen;
  while (words.size() < spec.vocab_size) {
    const std::size_t syllables = 2 + pick(2);
    std::string w;
    for (std::size_t s = 0; s < syllables; ++s) {
      w += consonants[pick(consonants.size())];
      w += vowels[pick(vowels.size())];
    }
    if (pick(2)) w += consonants[pick(consonants.size())];
    if (detail::is_filler(w) || !seen.insert(w).second) continue;
    words.push_back(std::move(w));
  }
  const std::vector<std::string> names(words.begin(), words.begin() + static_cast<std::ptrdiff_t>(name_words));
  const std::vector<std::string> intents(words.begin() + static_cast<std::ptrdiff_t>(name_words), words.end());

  // Skewed intent draws make popular intents shared by many tools.
  auto draw_intent = [&]() -> const std::string& {
    const std::size_t a = pick(intents.size());
    const std::size_t b = pick(intents.size());
    return intents[std::min(a, b)];
  };

  // Tools are grouped into categories that share their topic words, so a
  // vague query names a category rather than a tool.
  const std::size_t num_categories = std::max<std::size_t>(1, spec.num_tools / kSyntheticToolsPerCategory);
  std::vector<std::vector<std::string>> categories;
  for (std::size_t c = 0; c < num_categories; ++c) {
    std::vector<std::string> topic;
    while (topic.size() < kSyntheticTopicSize) {
      const auto& w = draw_intent();
      if (std::find(topic.begin(), topic.end(), w) == topic.end()) topic.push_back(w);
    }
    categories.push_back(std::move(topic));
  }

  SyntheticData data;
  std::vector<std::size_t> category_of;
  std::vector<std::array<std::string, 2>> own_words;
  for (std::size_t t = 0; t < spec.num_tools; ++t) {
    ToolDoc d;
    d.tool_name = detail::capitalize(names[3 * t]) + " " + detail::capitalize(names[3 * t + 1]);
    d.api_name = detail::capitalize(names[3 * t + 2]);
    d.doc_id = d.tool_name + "::" + d.api_name;
    const std::size_t c = pick(num_categories);
    const auto& topic = categories[c];
    std::array<std::string, 2> own{intents[pick(intents.size())], intents[pick(intents.size())]};
    d.category = "cat" + std::to_string(c);
    d.description = "this service provides " + topic[0] + " " + topic[1] + " and " + own[0] + " data with " +
                    topic[2] + " " + topic[3] + " " + own[1] + " info on " + topic[4] + " " + topic[5];
    category_of.push_back(c);
    own_words.push_back(std::move(own));
    data.docs.push_back(std::move(d));
  }

  const std::size_t width = std::to_string(spec.num_queries).size();
  for (std::size_t q = 0; q < spec.num_queries; ++q) {
    const std::size_t count =
        spec.min_tools_per_query + pick(spec.max_tools_per_query - spec.min_tools_per_query + 1);
    std::vector<std::size_t> tools;
    while (tools.size() < count) {
      const auto t = pick(spec.num_tools);
      if (std::find(tools.begin(), tools.end(), t) == tools.end()) tools.push_back(t);
    }
    QueryRecord rec;
    std::string id = std::to_string(q);
    rec.query_id = "q" + std::string(width - id.size(), '0') + id;
    rec.subset = count == 1 ? SubsetTag::I1 : count == 2 ? SubsetTag::I2 : count == 3 ? SubsetTag::I3 : SubsetTag::other;
    std::string specific;
    std::string vague = "i need help";
    for (std::size_t i = 0; i < tools.size(); ++i) {
      const auto& doc = data.docs[tools[i]];
      const auto& topic = categories[category_of[tools[i]]];
      const auto& own = own_words[tools[i]];
      rec.ground_truth.push_back({doc.tool_name, doc.api_name});
      std::vector<std::size_t> order(topic.size());
      for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
      for (std::size_t k = order.size(); k > 1; --k) std::swap(order[k - 1], order[pick(k)]);
      // Specific: names, one private word and one category word.
      specific += (i ? " and then use the " : "use the ") + doc.tool_name + " " + doc.api_name + " api to get " +
                  own[pick(2)] + " " + topic[order[0]];
      // Vague: two category words and one unrelated intent word.
      vague += (i ? " and also " : " with ") + topic[order[1]] + " " + topic[order[2]] + " " + draw_intent();
    }
    rec.specific = specific;
    rec.vague = vague;
    // Invariant: no name token of any ground-truth API appears in the vague text.
    const auto vague_tokens = tokenize(rec.vague);
    const std::set<std::string> vague_set(vague_tokens.begin(), vague_tokens.end());
    for (const auto& ref : rec.ground_truth) {
      for (const auto& tok : tokenize(ref.tool_name + " " + ref.api_name)) {
        if (vague_set.count(tok)) throw Error(ErrorKind::invalid_argument, "name token leaked into vague query");
      }
    }
    data.queries.push_back(std::move(rec));
  }
  return data;
}

}  // namespace toolbridge
