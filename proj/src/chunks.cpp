#include "msync/chunks.hpp"

#include <algorithm>
#include <set>

namespace msync {

const std::vector<std::string>& chunk_label_names() {
  static const std::vector<std::string> names = {"NP",  "VP",   "PP",   "ADVP",
                                                 "SBAR", "ADJP", "PRT",  "CONJP",
                                                 "INTJ", "LST",  "UCP"};
  return names;
}

bool is_chunk_label(const std::string& label) {
  const auto& names = chunk_label_names();
  return std::find(names.begin(), names.end(), label) != names.end();
}

std::string strip_label(const std::string& label) {
  const size_t cut = label.find_first_of("-=");
  return cut == std::string::npos ? label : label.substr(0, cut);
}

bool is_punctuation_pos(const std::string& pos) {
  static const std::set<std::string> punct = {".",  ",",  ":",     "``",
                                              "''", "#",  "-LRB-", "-RRB-"};
  return punct.count(pos) > 0;
}

namespace {

// For every leaf (in order): the lowest ancestor whose stripped label is a
// chunk type, or nullptr for punctuation / unchunked leaves.
void assign_chunk_nodes(const ParseTree& node,
                        std::vector<const ParseTree*>& ancestors,
                        std::vector<const ParseTree*>& out) {
  if (node.is_leaf()) {
    const ParseTree* chunk_node = nullptr;
    if (!is_punctuation_pos(node.pos)) {
      for (auto it = ancestors.rbegin(); it != ancestors.rend(); ++it) {
        if (is_chunk_label(strip_label((*it)->label))) {
          chunk_node = *it;
          break;
        }
      }
    }
    out.push_back(chunk_node);
    return;
  }
  ancestors.push_back(&node);
  for (const auto& child : node.children) assign_chunk_nodes(child, ancestors, out);
  ancestors.pop_back();
}

[[noreturn]] void invalid(Index pos, const std::string& what) {
  throw InvalidSequence("position " + std::to_string(pos) + ": " + what);
}

struct ParsedTag {
  char kind;          // 'O', 'B', 'I', 'L', 'U'
  std::string label;  // empty for O
};

ParsedTag parse_tag(const std::string& tag, Index pos, TagScheme scheme) {
  if (tag == "O") return {'O', ""};
  if (tag.size() < 3 || tag[1] != '-') invalid(pos, "malformed tag '" + tag + "'");
  const char kind = tag[0];
  const bool known = scheme == TagScheme::bioul
                         ? (kind == 'B' || kind == 'I' || kind == 'L' || kind == 'U')
                         : (kind == 'B' || kind == 'I');
  if (!known) invalid(pos, "unknown tag prefix '" + tag + "'");
  return {kind, tag.substr(2)};
}

void check_spans(const std::vector<ChunkSpan>& spans, Index n) {
  for (const auto& s : spans) {
    if (s.begin < 0 || s.end < s.begin || s.end >= n)
      throw SpanOutOfRange("span [" + std::to_string(s.begin) + "," +
                           std::to_string(s.end) + "] outside [0," +
                           std::to_string(n) + ")");
  }
  std::vector<ChunkSpan> sorted = spans;
  std::sort(sorted.begin(), sorted.end());
  for (size_t i = 1; i < sorted.size(); ++i)
    if (sorted[i].begin <= sorted[i - 1].end)
      throw OverlappingSpans("spans [" + std::to_string(sorted[i - 1].begin) + "," +
                             std::to_string(sorted[i - 1].end) + "] and [" +
                             std::to_string(sorted[i].begin) + "," +
                             std::to_string(sorted[i].end) + "] overlap");
}

}  // namespace

std::vector<ChunkSpan> derive_chunks(const ParseTree& tree) {
  std::vector<const ParseTree*> chunk_nodes;
  std::vector<const ParseTree*> ancestors;
  assign_chunk_nodes(tree, ancestors, chunk_nodes);
  if (chunk_nodes.empty()) throw EmptyTree("tree has no leaves");

  std::vector<ChunkSpan> spans;
  Index run_begin = -1;
  const ParseTree* run_node = nullptr;
  auto close_run = [&](Index end) {
    if (run_node != nullptr)
      spans.push_back({run_begin, end, strip_label(run_node->label)});
    run_node = nullptr;
  };
  for (Index i = 0; i < Index(chunk_nodes.size()); ++i) {
    const ParseTree* node = chunk_nodes[size_t(i)];
    if (node != run_node) {
      close_run(i - 1);
      run_node = node;
      run_begin = i;
    }
  }
  close_run(Index(chunk_nodes.size()) - 1);
  return spans;
}

std::vector<std::string> encode_bioul(const std::vector<ChunkSpan>& spans, Index n) {
  check_spans(spans, n);
  std::vector<std::string> tags(size_t(n), "O");
  for (const auto& s : spans) {
    if (s.begin == s.end) {
      tags[size_t(s.begin)] = "U-" + s.label;
      continue;
    }
    tags[size_t(s.begin)] = "B-" + s.label;
    for (Index i = s.begin + 1; i < s.end; ++i) tags[size_t(i)] = "I-" + s.label;
    tags[size_t(s.end)] = "L-" + s.label;
  }
  return tags;
}

std::vector<ChunkSpan> decode_bioul(const std::vector<std::string>& tags, bool strict) {
  std::vector<ChunkSpan> spans;
  Index open_begin = -1;
  std::string open_label;
  auto is_open = [&] { return open_begin >= 0; };
  auto close_at = [&](Index end) {
    spans.push_back({open_begin, end, open_label});
    open_begin = -1;
    open_label.clear();
  };
  for (Index i = 0; i < Index(tags.size()); ++i) {
    const ParsedTag tag = parse_tag(tags[size_t(i)], i, TagScheme::bioul);
    switch (tag.kind) {
      case 'O':
        if (is_open()) {
          if (strict) invalid(i, "O interrupts an open span");
          close_at(i - 1);
        }
        break;
      case 'B':
        if (is_open()) {
          if (strict) invalid(i, "B interrupts an open span");
          close_at(i - 1);
        }
        open_begin = i;
        open_label = tag.label;
        break;
      case 'U':
        if (is_open()) {
          if (strict) invalid(i, "U interrupts an open span");
          close_at(i - 1);
        }
        spans.push_back({i, i, tag.label});
        break;
      case 'I':
        if (!is_open() || open_label != tag.label) {
          if (strict)
            invalid(i, is_open() ? "I label does not match open span"
                                 : "I without an open span");
          if (is_open()) close_at(i - 1);
          open_begin = i;
          open_label = tag.label;
        }
        break;
      case 'L':
        if (is_open() && open_label == tag.label) {
          close_at(i);
        } else {
          if (strict)
            invalid(i, is_open() ? "L label does not match open span"
                                 : "L without an open span");
          if (is_open()) close_at(i - 1);
          spans.push_back({i, i, tag.label});
        }
        break;
    }
  }
  if (is_open()) {
    if (strict) invalid(Index(tags.size()) - 1, "span still open at sequence end");
    close_at(Index(tags.size()) - 1);
  }
  return spans;
}

std::vector<std::string> encode_bio(const std::vector<ChunkSpan>& spans, Index n) {
  check_spans(spans, n);
  std::vector<std::string> tags(size_t(n), "O");
  for (const auto& s : spans) {
    tags[size_t(s.begin)] = "B-" + s.label;
    for (Index i = s.begin + 1; i <= s.end; ++i) tags[size_t(i)] = "I-" + s.label;
  }
  return tags;
}

std::vector<ChunkSpan> decode_bio(const std::vector<std::string>& tags, bool strict) {
  std::vector<ChunkSpan> spans;
  Index open_begin = -1;
  std::string open_label;
  auto close_at = [&](Index end) {
    if (open_begin >= 0) spans.push_back({open_begin, end, open_label});
    open_begin = -1;
    open_label.clear();
  };
  for (Index i = 0; i < Index(tags.size()); ++i) {
    const ParsedTag tag = parse_tag(tags[size_t(i)], i, TagScheme::bio);
    switch (tag.kind) {
      case 'O':
        close_at(i - 1);
        break;
      case 'B':
        close_at(i - 1);
        open_begin = i;
        open_label = tag.label;
        break;
      case 'I':
        if (open_begin < 0 || open_label != tag.label) {
          if (strict)
            invalid(i, open_begin >= 0 ? "I label does not match open span"
                                       : "I without an open span");
          close_at(i - 1);
          open_begin = i;
          open_label = tag.label;
        }
        break;
    }
  }
  close_at(Index(tags.size()) - 1);
  return spans;
}

TagScheme detect_scheme(const std::vector<std::string>& tags) {
  for (const auto& t : tags)
    if (t.size() >= 2 && (t[0] == 'L' || t[0] == 'U') && t[1] == '-')
      return TagScheme::bioul;
  return TagScheme::bio;
}

PrfScore chunk_f1(const std::vector<std::vector<ChunkSpan>>& gold,
                  const std::vector<std::vector<ChunkSpan>>& pred) {
  if (gold.size() != pred.size())
    throw LengthMismatch("gold has " + std::to_string(gold.size()) +
                         " sentences, pred has " + std::to_string(pred.size()));
  Index n_gold = 0, n_pred = 0, n_correct = 0;
  for (size_t s = 0; s < gold.size(); ++s) {
    n_gold += Index(gold[s].size());
    n_pred += Index(pred[s].size());
    std::vector<ChunkSpan> g = gold[s];
    std::sort(g.begin(), g.end());
    for (const auto& p : pred[s])
      if (std::binary_search(g.begin(), g.end(), p)) ++n_correct;
  }
  PrfScore score;
  score.precision = n_pred == 0 ? 0.0 : double(n_correct) / double(n_pred);
  score.recall = n_gold == 0 ? 0.0 : double(n_correct) / double(n_gold);
  score.f1 = score.precision + score.recall == 0.0
                 ? 0.0
                 : 2.0 * score.precision * score.recall /
                       (score.precision + score.recall);
  return score;
}

std::vector<ChunkContext> chunk_contexts(const std::vector<ChunkSpan>& spans, Index n,
                                         Direction direction) {
  std::vector<ChunkContext> out(size_t(n), ChunkContext::null());
  if (direction == Direction::forward) {
    // Sweep left to right tracking the last span whose end is behind i.
    size_t next = 0;
    ChunkContext current = ChunkContext::null();
    for (Index i = 0; i < n; ++i) {
      while (next < spans.size() && spans[next].end < i)
        current = ChunkContext::of(spans[next++]);
      out[size_t(i)] = current;
    }
  } else {
    size_t next = spans.size();
    ChunkContext current = ChunkContext::null();
    for (Index i = n - 1; i >= 0; --i) {
      while (next > 0 && spans[next - 1].begin > i)
        current = ChunkContext::of(spans[--next]);
      out[size_t(i)] = current;
    }
  }
  return out;
}

std::vector<std::string> tag_inventory(const std::vector<std::string>& labels,
                                       TagScheme scheme) {
  std::vector<std::string> tags = {"O"};
  for (const auto& label : labels) {
    tags.push_back("B-" + label);
    tags.push_back("I-" + label);
    if (scheme == TagScheme::bioul) {
      tags.push_back("L-" + label);
      tags.push_back("U-" + label);
    }
  }
  return tags;
}

}  // namespace msync
