#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "cpcssl/data.hpp"

namespace cpcssl {

/// Lower-cased runs of letters and digits; bytes >= 0x80 count as letters so
/// UTF-8 words stay whole.
std::vector<std::string> tokenize(std::string_view sentence);

class Vocabulary {
 public:
  static constexpr Index kPad = 0;
  static constexpr Index kUnknown = 1;

  /// Most frequent tokens first (ties by byte order), capped at max_size ids
  /// including the pad and unknown ids.
  static Vocabulary build(const std::vector<std::vector<std::string>>& documents,
                          Index max_size = 20000);

  Index id(const std::string& token) const;
  Index size() const noexcept { return static_cast<Index>(tokens_.size()); }
  const std::string& token(Index id) const { return tokens_.at(static_cast<std::size_t>(id)); }

  /// Token ids of one sentence, truncated or padded to `length`.
  Tensor encode(std::string_view sentence, Index length) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, Index> index_;
};

struct TextDocument {
  std::vector<std::string> sentences;
  std::optional<int> label;
};

/// One document per line; sentences separated by tabs; when `labeled`, the
/// first field is the integer class label.
TextDocument parse_text_line(std::string_view line, bool labeled, std::size_t line_number = 0);
std::vector<TextDocument> read_text_documents(const std::filesystem::path& path, bool labeled);

/// One sentence per patch. Documents shorter than `min_sentences` are padded
/// by repeating their final sentence.
SequenceSample build_text_sequences(const std::vector<std::string>& sentences,
                                    std::optional<int> label, const Vocabulary& vocab,
                                    Index sentence_length, Index min_sentences, std::int64_t id);

}  // namespace cpcssl
