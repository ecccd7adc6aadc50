#pragma once

#include <string>
#include <tuple>
#include <vector>

#include "msync/corpus.hpp"
#include "msync/errors.hpp"
#include "msync/tensor.hpp"

namespace msync {

// The eleven CoNLL-2000 chunk phrase types. derive_chunks only ever emits
// these; the BIOUL machinery below is generic over label strings so the
// same code serves entity spans downstream.
const std::vector<std::string>& chunk_label_names();
bool is_chunk_label(const std::string& label);

// Labeled token span, 0-based inclusive boundaries.
struct ChunkSpan {
  Index begin = 0;
  Index end = 0;
  std::string label;

  friend bool operator==(const ChunkSpan&, const ChunkSpan&) = default;
  friend auto operator<=>(const ChunkSpan& a, const ChunkSpan& b) {
    return std::tie(a.begin, a.end, a.label) <=> std::tie(b.begin, b.end, b.label);
  }
};

// The last completed chunk before (forward) or first upcoming chunk after
// (backward) a position; NULL before the first / after the last.
struct ChunkContext {
  bool is_null = true;
  Index begin = -1;
  Index end = -1;
  std::string label;

  static ChunkContext null() { return {}; }
  static ChunkContext of(const ChunkSpan& s) { return {false, s.begin, s.end, s.label}; }

  friend bool operator==(const ChunkContext&, const ChunkContext&) = default;
};

enum class Direction { forward, backward };
enum class TagScheme { bio, bioul };

// Chunk spans from a constituency tree: each leaf attaches to its lowest
// ancestor whose function-tag-stripped label is a chunk type; punctuation
// stays outside; maximal runs over the same ancestor instance form spans.
std::vector<ChunkSpan> derive_chunks(const ParseTree& tree);

// Constituent label with function tags / coindexation stripped
// (NP-SBJ-1 -> NP, S=2 -> S).
std::string strip_label(const std::string& label);

// POS tags excluded from chunks.
bool is_punctuation_pos(const std::string& pos);

std::vector<std::string> encode_bioul(const std::vector<ChunkSpan>& spans, Index n);

// strict: any invalid transition raises InvalidSequence with its position.
// repair: I/L without an open same-label span opens one; an open span
// interrupted by O/U/B or a label change closes at the previous position.
std::vector<ChunkSpan> decode_bioul(const std::vector<std::string>& tags, bool strict);

std::vector<std::string> encode_bio(const std::vector<ChunkSpan>& spans, Index n);
std::vector<ChunkSpan> decode_bio(const std::vector<std::string>& tags, bool strict);

// Scheme of a tag sequence: BIOUL iff any L-/U- tag occurs.
TagScheme detect_scheme(const std::vector<std::string>& tags);

// Exact-match span precision/recall/F1; 0/0 counts as 0.
struct PrfScore {
  double precision = 0;
  double recall = 0;
  double f1 = 0;
};
PrfScore chunk_f1(const std::vector<std::vector<ChunkSpan>>& gold,
                  const std::vector<std::vector<ChunkSpan>>& pred);

// Per-position conditioning contexts. Forward at i: the span with the
// greatest end such that end < i. Backward at i: the span with the least
// begin such that begin > i.
std::vector<ChunkContext> chunk_contexts(const std::vector<ChunkSpan>& spans, Index n,
                                         Direction direction);

// Canonical tag inventory for a label set: "O" first, then B/I/L/U
// (or B/I for BIO) per label in the given order.
std::vector<std::string> tag_inventory(const std::vector<std::string>& labels,
                                       TagScheme scheme);

}  // namespace msync
