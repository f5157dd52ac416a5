#ifndef CVLM_DATA_HPP
#define CVLM_DATA_HPP

// Corpus ingestion: whitespace tokenization of one-sentence-per-line text,
// frequency-ranked vocabulary with four reserved ids, truncation and batching.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

namespace cvlm {

inline constexpr int kPadId = 0;
inline constexpr int kUnkId = 1;
inline constexpr int kBosId = 2;
inline constexpr int kEosId = 3;
inline constexpr int kNumReserved = 4;

using TokenIds = std::vector<int>;

class Vocabulary {
 public:
  /// Reserved tokens plus the (max_vocab - 4) most frequent tokens; ties keep
  /// first-occurrence order.
  static Vocabulary build(std::span<const std::string> lines, std::size_t max_vocab);
  /// One token per line, line number = id.
  static Vocabulary from_text(std::string_view text);
  static Vocabulary load(const std::filesystem::path& path);

  std::string to_text() const;
  void save(const std::filesystem::path& path) const;

  /// Id of `token`, or kUnkId.
  int id(std::string_view token) const;
  const std::string& token(int id) const;
  std::size_t size() const noexcept { return tokens_.size(); }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

 private:
  void add(std::string token);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

std::vector<std::string> split_tokens(std::string_view line);

/// [bos, ids..., eos], truncated to at most max_len with eos kept last.
TokenIds encode_line(std::string_view line, const Vocabulary& vocab, std::size_t max_len);
std::vector<TokenIds> encode_corpus(std::span<const std::string> lines, const Vocabulary& vocab,
                                    std::size_t max_len);

/// Space-joined tokens with bos/eos/pad removed.
std::string decode_ids(std::span<const int> ids, const Vocabulary& vocab);

/// Padded B x T id matrix; row b holds example `indices[b]`.
struct Batch {
  Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> tokens;
  std::vector<int> lengths;
  std::vector<std::size_t> indices;

  Eigen::Index size() const noexcept { return tokens.rows(); }
  Eigen::Index max_length() const noexcept { return tokens.cols(); }
};

/// Consecutive batches over `corpus` in corpus order, or in a permutation keyed
/// by `shuffle_seed`. The final short batch is kept.
std::vector<Batch> make_batches(std::span<const TokenIds> corpus, std::size_t batch_size,
                                std::optional<std::uint64_t> shuffle_seed);

/// Non-empty-file reader: one entry per line, trailing '\r' stripped.
std::vector<std::string> read_lines(const std::filesystem::path& path);

struct SyntheticCorpusOptions {
  std::size_t sentences = 5000;
  std::uint64_t seed = 1;
};

/// Templated sentences whose word choices depend on a few hidden categorical
/// factors (topic, template, tense, mood) chosen once per sentence.
std::vector<std::string> synthetic_corpus(const SyntheticCorpusOptions& options);

}  // namespace cvlm

#endif  // CVLM_DATA_HPP
