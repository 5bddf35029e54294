#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace qsf {

// Byte-level tokenizer: id = byte value, vocabulary 256.
inline constexpr int kByteVocab = 256;
std::vector<int> tokenize(std::string_view bytes);
// Throws RangeError for ids outside 0..255.
std::string detokenize(std::span<const int> ids);

enum class Split { Train, Validation };

// Token stream with a contiguous split: [0, train_end) trains,
// [train_end, size) validates.
class Corpus {
 public:
  // Throws IoError when unreadable and ConfigError when there is no text.
  static Corpus from_file(const std::string& path, double train_fraction = 0.9);
  static Corpus from_text(std::string_view text, double train_fraction = 0.9);

  const std::string& source() const { return source_; }
  std::size_t size() const { return tokens_.size(); }
  std::size_t train_end() const { return train_end_; }
  std::span<const int> tokens() const { return tokens_; }
  std::span<const int> split(Split s) const;

 private:
  std::string source_;
  std::vector<int> tokens_;
  std::size_t train_end_ = 0;
};

struct Batch {
  std::vector<std::vector<int>> inputs;
  std::vector<std::vector<int>> targets;
  // Absolute corpus offset of each window's first input token.
  std::vector<std::size_t> offsets;
};

/// Random windows of seq_len + 1 tokens lying entirely inside the split;
/// targets are inputs shifted by one. Throws ConfigError when the split is
/// shorter than a window.
Batch sample_batch(const Corpus& corpus, Split split, int batch_size, int seq_len,
                   std::mt19937_64& rng);

// The same `count` validation batches for every call with the same seed.
std::vector<Batch> fixed_eval_batches(const Corpus& corpus, int count, int batch_size,
                                      int seq_len, std::uint64_t seed);

/// Deterministic synthetic children's stories (about target_bytes of ASCII
/// text). Characters, objects and places introduced early in a story recur
/// later in it, so predicting them needs context beyond the current token.
std::string synthesize_story_corpus(std::uint64_t seed, std::size_t target_bytes);

}  // namespace qsf
