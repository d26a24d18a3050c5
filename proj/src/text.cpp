#include "cpcssl/text.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>

namespace cpcssl {

std::vector<std::string> tokenize(std::string_view sentence) {
  std::vector<std::string> tokens;
  std::string current;
  for (char ch : sentence) {
    const auto u = static_cast<unsigned char>(ch);
    const bool word = (u >= 0x80) || (u >= '0' && u <= '9') || (u >= 'a' && u <= 'z') ||
                      (u >= 'A' && u <= 'Z');
    if (word) {
      current.push_back((u >= 'A' && u <= 'Z') ? static_cast<char>(u - 'A' + 'a') : ch);
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

Vocabulary Vocabulary::build(const std::vector<std::vector<std::string>>& documents, Index max_size) {
  if (max_size < 2) throw Error(ErrorCode::invalid_argument, "vocabulary needs room for pad and unknown ids");
  std::map<std::string, Index> counts;
  for (const auto& doc : documents) {
    for (const auto& sentence : doc) {
      for (auto& tok : tokenize(sentence)) ++counts[tok];
    }
  }
  std::vector<std::pair<std::string, Index>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocabulary vocab;
  vocab.tokens_ = {"<pad>", "<unk>"};
  for (const auto& [tok, n] : ranked) {
    if (vocab.size() >= max_size) break;
    vocab.index_.emplace(tok, vocab.size());
    vocab.tokens_.push_back(tok);
  }
  return vocab;
}

Index Vocabulary::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnknown : it->second;
}

Tensor Vocabulary::encode(std::string_view sentence, Index length) const {
  if (length < 1) throw Error(ErrorCode::invalid_argument, "sentence length must be positive");
  Tensor ids(Shape{length});
  ids.vec().setConstant(static_cast<double>(kPad));
  const auto tokens = tokenize(sentence);
  for (Index i = 0; i < length && i < static_cast<Index>(tokens.size()); ++i) {
    ids[i] = static_cast<double>(id(tokens[static_cast<std::size_t>(i)]));
  }
  return ids;
}

TextDocument parse_text_line(std::string_view line, bool labeled, std::size_t line_number) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    fields.emplace_back(line.substr(start, tab == std::string_view::npos ? std::string_view::npos : tab - start));
    if (tab == std::string_view::npos) break;
    start = tab + 1;
  }
  TextDocument doc;
  std::size_t first = 0;
  if (labeled) {
    int label = 0;
    const std::string& f = fields.front();
    const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), label);
    if (ec != std::errc() || ptr != f.data() + f.size() || label < 0) {
      throw Error(ErrorCode::format, "line " + std::to_string(line_number) +
                                         ": expected a non-negative integer label, got '" + f + "'");
    }
    doc.label = label;
    first = 1;
  }
  for (std::size_t i = first; i < fields.size(); ++i) {
    if (!fields[i].empty()) doc.sentences.push_back(std::move(fields[i]));
  }
  return doc;
}

std::vector<TextDocument> read_text_documents(const std::filesystem::path& path, bool labeled) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, "cannot open text file " + path.string());
  std::vector<TextDocument> docs;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty() || line == "\r") continue;
    docs.push_back(parse_text_line(line, labeled, n));
  }
  return docs;
}

SequenceSample build_text_sequences(const std::vector<std::string>& sentences,
                                    std::optional<int> label, const Vocabulary& vocab,
                                    Index sentence_length, Index min_sentences, std::int64_t id) {
  if (sentences.empty()) throw Error(ErrorCode::invalid_argument, "empty document");
  SequenceSample seq;
  seq.label = label;
  seq.id = id;
  for (const auto& s : sentences) seq.patches.push_back(vocab.encode(s, sentence_length));
  while (seq.length() < min_sentences) seq.patches.push_back(seq.patches.back());
  return seq;
}

}  // namespace cpcssl
