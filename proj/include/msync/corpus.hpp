#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "msync/errors.hpp"
#include "msync/tensor.hpp"

namespace msync {

// Labeled constituency tree. Internal nodes carry a constituent label and
// children; leaves carry the surface token and its POS tag. Labels are
// stored raw (function tags intact); stripping happens in chunking.
struct ParseTree {
  std::string label;
  std::string word;
  std::string pos;
  std::vector<ParseTree> children;

  bool is_leaf() const { return children.empty(); }

  void leaves(std::vector<const ParseTree*>& out) const {
    if (is_leaf()) {
      out.push_back(this);
      return;
    }
    for (const auto& c : children) c.leaves(out);
  }

  std::vector<const ParseTree*> leaves() const {
    std::vector<const ParseTree*> out;
    leaves(out);
    return out;
  }

  Index leaf_count() const { return Index(leaves().size()); }
};

struct TaggedSentence {
  std::vector<std::string> tokens;
  std::optional<std::vector<std::string>> pos;
  std::optional<std::vector<std::string>> chunk_tags;

  size_t size() const { return tokens.size(); }
};

// Token inventory with fixed reserved ids (checkpoint stability contract).
class Vocabulary {
 public:
  static constexpr Index kUnk = 0;
  static constexpr Index kBos = 1;
  static constexpr Index kEos = 2;
  static constexpr const char* kUnkToken = "<unk>";
  static constexpr const char* kBosToken = "<s>";
  static constexpr const char* kEosToken = "</s>";

  Vocabulary() {
    add(kUnkToken);
    add(kBosToken);
    add(kEosToken);
  }

  Index add(const std::string& token) {
    auto [it, fresh] = token_to_id_.emplace(token, Index(id_to_token_.size()));
    if (fresh) id_to_token_.push_back(token);
    return it->second;
  }

  Index id(const std::string& token) const {
    auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? kUnk : it->second;
  }

  bool contains(const std::string& token) const { return token_to_id_.count(token) > 0; }
  const std::string& token(Index id) const { return id_to_token_.at(size_t(id)); }
  Index size() const { return Index(id_to_token_.size()); }
  const std::vector<std::string>& tokens() const { return id_to_token_; }

 private:
  std::map<std::string, Index> token_to_id_;
  std::vector<std::string> id_to_token_;
};

// Penn Treebank bracketed trees. Unary ROOT/TOP/empty wrappers are
// unwrapped and -NONE- trace leaves pruned (positions re-index).
std::vector<ParseTree> read_ptb(const std::string& text);

// CoNLL-2000 three-column format: "token POS chunk", blank line between
// sentences.
std::vector<TaggedSentence> read_conll2000(const std::string& text);
std::string write_conll2000(const std::vector<TaggedSentence>& sents);

// Column format with >= 2 space-separated columns; token is the first
// column, the label the last (CoNLL-2003-style task data). -DOCSTART-
// lines are skipped.
std::vector<TaggedSentence> read_conll_task(const std::string& text);

// Raw corpus: one tokenized sentence per line, single-space separated.
std::vector<TaggedSentence> read_raw(const std::string& text);

// Frequency-filtered vocabulary: tokens with count >= min_count, most
// frequent first (ties lexicographic), truncated to max_size including
// the three reserved symbols.
Vocabulary build_vocab(const std::vector<std::vector<std::string>>& corpus,
                       Index min_count, Index max_size);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);

}  // namespace msync
