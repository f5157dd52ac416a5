#include <cvlm/data.hpp>

#include <algorithm>
#include <array>
#include <fstream>
#include <numeric>
#include <sstream>

#include <cvlm/errors.hpp>
#include <cvlm/rng.hpp>

namespace cvlm {

namespace {

constexpr std::array<const char*, kNumReserved> kReservedTokens = {"<pad>", "<unk>", "<s>", "</s>"};

}  // namespace

void Vocabulary::add(std::string token) {
  ids_.emplace(token, static_cast<int>(tokens_.size()));
  tokens_.push_back(std::move(token));
}

Vocabulary Vocabulary::build(std::span<const std::string> lines, std::size_t max_vocab) {
  if (lines.empty()) throw InputError("build_vocab: empty corpus");
  if (max_vocab < kNumReserved) throw ConfigError("build_vocab: max_vocab must be at least 4");

  struct Count {
    std::size_t first_seen;
    std::size_t count;
  };
  std::unordered_map<std::string, Count> counts;
  std::vector<std::string> order;
  for (const std::string& line : lines) {
    for (std::string& tok : split_tokens(line)) {
      if (std::find(kReservedTokens.begin(), kReservedTokens.end(), tok) != kReservedTokens.end()) continue;
      auto [it, inserted] = counts.try_emplace(tok, Count{order.size(), 0});
      if (inserted) order.push_back(tok);
      ++it->second.count;
    }
  }
  std::stable_sort(order.begin(), order.end(), [&](const std::string& a, const std::string& b) {
    return counts.at(a).count > counts.at(b).count;
  });

  Vocabulary vocab;
  for (const char* r : kReservedTokens) vocab.add(r);
  const std::size_t room = max_vocab - kNumReserved;
  for (std::size_t i = 0; i < order.size() && i < room; ++i) vocab.add(order[i]);
  return vocab;
}

Vocabulary Vocabulary::from_text(std::string_view text) {
  Vocabulary vocab;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (vocab.ids_.count(line)) throw InputError("vocabulary: duplicate token '" + line + "'");
    vocab.add(line);
  }
  if (vocab.size() < kNumReserved) throw InputError("vocabulary: fewer than four entries");
  for (int i = 0; i < kNumReserved; ++i) {
    if (vocab.tokens_[static_cast<std::size_t>(i)] != kReservedTokens[static_cast<std::size_t>(i)]) {
      throw InputError("vocabulary: reserved token missing at line " + std::to_string(i + 1));
    }
  }
  return vocab;
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read vocabulary " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return from_text(text.str());
}

std::string Vocabulary::to_text() const {
  std::string out;
  for (const std::string& t : tokens_) {
    out += t;
    out += '\n';
  }
  return out;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write vocabulary " + path.string());
  out << to_text();
}

int Vocabulary::id(std::string_view token) const {
  const auto it = ids_.find(std::string(token));
  return it == ids_.end() ? kUnkId : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw InputError("vocabulary: id " + std::to_string(id) + " out of range");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<std::string> split_tokens(std::string_view line) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r' || line[i] == '\n')) ++i;
    std::size_t j = i;
    while (j < line.size() && !(line[j] == ' ' || line[j] == '\t' || line[j] == '\r' || line[j] == '\n')) ++j;
    if (j > i) out.emplace_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

TokenIds encode_line(std::string_view line, const Vocabulary& vocab, std::size_t max_len) {
  if (max_len < 2) throw ConfigError("encode_line: max_len must be at least 2");
  TokenIds ids{kBosId};
  for (const std::string& tok : split_tokens(line)) {
    if (ids.size() + 1 >= max_len) break;
    ids.push_back(vocab.id(tok));
  }
  ids.push_back(kEosId);
  return ids;
}

std::vector<TokenIds> encode_corpus(std::span<const std::string> lines, const Vocabulary& vocab,
                                    std::size_t max_len) {
  std::vector<TokenIds> out;
  out.reserve(lines.size());
  for (const std::string& line : lines) out.push_back(encode_line(line, vocab, max_len));
  return out;
}

std::string decode_ids(std::span<const int> ids, const Vocabulary& vocab) {
  std::string out;
  for (int id : ids) {
    if (id == kBosId || id == kEosId || id == kPadId) continue;
    if (!out.empty()) out += ' ';
    out += vocab.token(id);
  }
  return out;
}

std::vector<Batch> make_batches(std::span<const TokenIds> corpus, std::size_t batch_size,
                                std::optional<std::uint64_t> shuffle_seed) {
  if (batch_size < 1) throw ConfigError("batches: batch_size must be >= 1");
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (shuffle_seed) {
    RngStream rng(*shuffle_seed, "shuffle");
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[rng.below(i)]);
    }
  }
  std::vector<Batch> out;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, order.size() - start);
    Batch b;
    std::size_t longest = 0;
    for (std::size_t k = 0; k < n; ++k) longest = std::max(longest, corpus[order[start + k]].size());
    b.tokens.setConstant(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(longest), kPadId);
    for (std::size_t k = 0; k < n; ++k) {
      const TokenIds& seq = corpus[order[start + k]];
      for (std::size_t t = 0; t < seq.size(); ++t) {
        b.tokens(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(t)) = seq[t];
      }
      b.lengths.push_back(static_cast<int>(seq.size()));
      b.indices.push_back(order[start + k]);
    }
    out.push_back(std::move(b));
  }
  return out;
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

// ---------------------------------------------------------------------------
// Synthetic corpus

namespace {

struct Topic {
  std::array<const char*, 6> nouns;
  std::array<const char*, 4> verbs;
  std::array<const char*, 3> good;
  std::array<const char*, 3> bad;
  std::array<const char*, 2> places;
};

constexpr std::array<Topic, 8> kTopics = {{
    {{"fox", "wolf", "rabbit", "horse", "otter", "badger"},
     {"chased", "watched", "followed", "fed"},
     {"gentle", "playful", "clever"},
     {"hungry", "wild", "sickly"},
     {"forest", "meadow"}},
    {{"soup", "bread", "cheese", "pie", "salad", "noodle"},
     {"cooked", "tasted", "served", "baked"},
     {"fresh", "savory", "sweet"},
     {"stale", "bland", "burnt"},
     {"kitchen", "bakery"}},
    {{"striker", "keeper", "coach", "referee", "captain", "rookie"},
     {"tackled", "passed", "coached", "defeated"},
     {"skilled", "fast", "brave"},
     {"tired", "injured", "slow"},
     {"stadium", "pitch"}},
    {{"storm", "cloud", "breeze", "fog", "thunder", "drizzle"},
     {"covered", "cooled", "soaked", "darkened"},
     {"mild", "soft", "warm"},
     {"harsh", "cold", "gloomy"},
     {"valley", "coast"}},
    {{"drummer", "singer", "violin", "chorus", "band", "pianist"},
     {"played", "sang", "rehearsed", "composed"},
     {"lively", "melodic", "famous"},
     {"noisy", "dull", "offkey"},
     {"theater", "studio"}},
    {{"mayor", "bus", "tower", "market", "bridge", "taxi"},
     {"built", "crossed", "visited", "closed"},
     {"modern", "busy", "grand"},
     {"crowded", "dirty", "broken"},
     {"downtown", "suburb"}},
    {{"whale", "sailor", "wave", "dolphin", "ship", "reef"},
     {"sailed", "crashed", "drifted", "dove"},
     {"calm", "blue", "deep"},
     {"rough", "murky", "stormy"},
     {"harbor", "bay"}},
    {{"rocket", "comet", "planet", "astronaut", "moon", "satellite"},
     {"orbited", "launched", "landed", "explored"},
     {"bright", "distant", "vast"},
     {"dead", "frozen", "hostile"},
     {"galaxy", "station"}},
}};

}  // namespace

std::vector<std::string> synthetic_corpus(const SyntheticCorpusOptions& options) {
  std::vector<std::string> out;
  out.reserve(options.sentences);
  RngStream rng(options.seed, "synthetic_corpus");
  auto pick = [&](const auto& list) -> std::string { return list[rng.below(list.size())]; };

  for (std::size_t n = 0; n < options.sentences; ++n) {
    const Topic& topic = kTopics[rng.below(kTopics.size())];
    const auto form = rng.below(4);
    const bool future = rng.below(2) == 1;
    const bool positive = rng.below(2) == 1;
    auto adj = [&] { return positive ? pick(topic.good) : pick(topic.bad); };
    auto verb = [&] { return future ? "will " + pick(topic.verbs) : "once " + pick(topic.verbs); };
    const std::string noun1 = pick(topic.nouns);
    const std::string noun2 = pick(topic.nouns);

    std::string s;
    switch (form) {
      case 0:
        s = "the " + adj() + " " + noun1 + " " + verb() + " the " + noun2 + " in the " + pick(topic.places) + " .";
        break;
      case 1:
        s = "a " + noun1 + " " + verb() + " near the " + adj() + " " + noun2 + " .";
        break;
      case 2:
        s = "every " + noun1 + " is " + adj() + " and the " + noun2 + " " + verb() + " .";
        break;
      default:
        s = "in the " + pick(topic.places) + " the " + noun1 + " " + verb() + " a " + adj() + " " + noun2 + " .";
        break;
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace cvlm
