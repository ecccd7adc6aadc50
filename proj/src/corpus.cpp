#include "msync/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

namespace msync {

namespace {

struct PtbParser {
  const std::string& text;
  size_t at = 0;

  explicit PtbParser(const std::string& t) : text(t) {}

  void skip_space() {
    while (at < text.size() && std::isspace(static_cast<unsigned char>(text[at]))) ++at;
  }

  bool done() {
    skip_space();
    return at >= text.size();
  }

  std::string atom() {
    const size_t begin = at;
    while (at < text.size() && !std::isspace(static_cast<unsigned char>(text[at])) &&
           text[at] != '(' && text[at] != ')')
      ++at;
    return text.substr(begin, at - begin);
  }

  [[noreturn]] void fail(const std::string& what, size_t pos) {
    throw UnbalancedParens(what + " at offset " + std::to_string(pos));
  }

  ParseTree node() {
    skip_space();
    if (at >= text.size() || text[at] != '(') fail("expected '('", at);
    const size_t open = at++;
    skip_space();
    ParseTree n;
    if (at < text.size() && text[at] != '(' && text[at] != ')') n.label = atom();
    skip_space();
    if (at >= text.size()) fail("unterminated tree", open);
    if (text[at] == '(') {
      while (true) {
        skip_space();
        if (at >= text.size()) fail("unterminated tree", open);
        if (text[at] == ')') break;
        if (text[at] != '(') fail("unexpected token inside constituent", at);
        n.children.push_back(node());
      }
    } else if (text[at] == ')') {
      // "()" or "(X)" with no children: malformed.
      if (n.label.empty()) fail("empty constituent", open);
      fail("constituent '" + n.label + "' has no children", open);
    } else {
      // Preterminal: (POS word).
      n.pos = n.label;
      n.label.clear();
      n.word = atom();
      skip_space();
      if (at < text.size() && text[at] != ')')
        fail("unexpected token after leaf word", at);
    }
    skip_space();
    if (at >= text.size() || text[at] != ')') fail("missing ')'", open);
    ++at;
    return n;
  }
};

// Remove -NONE- trace leaves; prune constituents emptied by the removal.
// Returns false if the subtree vanished entirely.
bool prune_traces(ParseTree& n) {
  if (n.is_leaf()) return n.pos != "-NONE-";
  std::vector<ParseTree> kept;
  for (auto& c : n.children)
    if (prune_traces(c)) kept.push_back(std::move(c));
  n.children = std::move(kept);
  return !n.children.empty();
}

bool is_wrapper_label(const std::string& label) {
  return label.empty() || label == "ROOT" || label == "TOP";
}

}  // namespace

std::vector<ParseTree> read_ptb(const std::string& text) {
  PtbParser parser(text);
  std::vector<ParseTree> trees;
  while (!parser.done()) {
    if (parser.text[parser.at] != '(')
      parser.fail("expected '(' at top level", parser.at);
    ParseTree t = parser.node();
    while (!t.is_leaf() && t.children.size() == 1 && is_wrapper_label(t.label))
      t = std::move(t.children[0]);
    if (!prune_traces(t))
      throw EmptyTree("tree #" + std::to_string(trees.size()) +
                      " has no leaves after trace removal");
    if (t.is_leaf() && t.word.empty())
      throw EmptyTree("tree #" + std::to_string(trees.size()) + " is empty");
    trees.push_back(std::move(t));
  }
  return trees;
}

std::vector<TaggedSentence> read_conll2000(const std::string& text) {
  std::vector<TaggedSentence> sents;
  TaggedSentence cur;
  cur.pos.emplace();
  cur.chunk_tags.emplace();
  auto flush = [&] {
    if (!cur.tokens.empty()) {
      sents.push_back(std::move(cur));
      cur = TaggedSentence{};
      cur.pos.emplace();
      cur.chunk_tags.emplace();
    }
  };
  std::istringstream in(text);
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) {
      flush();
      continue;
    }
    std::istringstream fields(line);
    std::string tok, pos, chunk, extra;
    if (!(fields >> tok >> pos >> chunk) || (fields >> extra))
      throw BadColumnCount("line " + std::to_string(line_no) +
                           ": expected 3 columns, got '" + line + "'");
    cur.tokens.push_back(tok);
    cur.pos->push_back(pos);
    cur.chunk_tags->push_back(chunk);
  }
  flush();
  if (sents.empty()) throw EmptyCorpus("no sentences in input");
  return sents;
}

std::string write_conll2000(const std::vector<TaggedSentence>& sents) {
  std::ostringstream out;
  for (size_t s = 0; s < sents.size(); ++s) {
    const TaggedSentence& sent = sents[s];
    if (!sent.chunk_tags || sent.chunk_tags->size() != sent.tokens.size())
      throw MissingTags("sentence " + std::to_string(s) + " has no chunk tags");
    for (size_t i = 0; i < sent.tokens.size(); ++i) {
      const std::string pos =
          sent.pos && i < sent.pos->size() ? (*sent.pos)[i] : std::string("XX");
      out << sent.tokens[i] << ' ' << pos << ' ' << (*sent.chunk_tags)[i] << '\n';
    }
    out << '\n';
  }
  return out.str();
}

std::vector<TaggedSentence> read_conll_task(const std::string& text) {
  std::vector<TaggedSentence> sents;
  TaggedSentence cur;
  cur.chunk_tags.emplace();
  auto flush = [&] {
    if (!cur.tokens.empty()) {
      sents.push_back(std::move(cur));
      cur = TaggedSentence{};
      cur.chunk_tags.emplace();
    }
  };
  std::istringstream in(text);
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) {
      flush();
      continue;
    }
    if (line.rfind("-DOCSTART-", 0) == 0) continue;
    std::istringstream fields(line);
    std::vector<std::string> cols;
    std::string col;
    while (fields >> col) cols.push_back(col);
    if (cols.size() < 2)
      throw BadColumnCount("line " + std::to_string(line_no) +
                           ": expected >=2 columns, got '" + line + "'");
    cur.tokens.push_back(cols.front());
    cur.chunk_tags->push_back(cols.back());
  }
  flush();
  if (sents.empty()) throw EmptyCorpus("no sentences in input");
  return sents;
}

std::vector<TaggedSentence> read_raw(const std::string& text) {
  std::vector<TaggedSentence> sents;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    TaggedSentence sent;
    std::istringstream fields(line);
    std::string tok;
    while (fields >> tok) sent.tokens.push_back(tok);
    if (!sent.tokens.empty()) sents.push_back(std::move(sent));
  }
  return sents;
}

Vocabulary build_vocab(const std::vector<std::vector<std::string>>& corpus,
                       Index min_count, Index max_size) {
  if (min_count < 1) throw ConfigError("build_vocab: min_count must be >= 1");
  std::map<std::string, Index> counts;
  for (const auto& sent : corpus)
    for (const auto& tok : sent) ++counts[tok];
  std::vector<std::pair<std::string, Index>> ranked(counts.begin(), counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Vocabulary vocab;
  for (const auto& [tok, count] : ranked) {
    if (count < min_count) break;
    if (vocab.size() >= max_size) break;
    if (!vocab.contains(tok)) vocab.add(tok);
  }
  return vocab;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << content;
}

}  // namespace msync
