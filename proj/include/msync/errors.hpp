#pragma once

#include <stdexcept>
#include <string>

namespace msync {

// Base for all toolkit errors. `kind()` is stable and machine-checkable;
// what() carries the human-readable detail (positions, names, shapes).
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& detail)
      : std::runtime_error(kind + ": " + detail), kind_(std::move(kind)) {}
  const std::string& kind() const { return kind_; }

 private:
  std::string kind_;
};

#define MSYNC_DEFINE_ERROR(NAME)                                  \
  struct NAME : Error {                                           \
    explicit NAME(const std::string& detail) : Error(#NAME, detail) {} \
  }

// corpus_io
MSYNC_DEFINE_ERROR(UnbalancedParens);
MSYNC_DEFINE_ERROR(EmptyTree);
MSYNC_DEFINE_ERROR(BadColumnCount);
MSYNC_DEFINE_ERROR(EmptyCorpus);
MSYNC_DEFINE_ERROR(MissingTags);

// chunking_rules
MSYNC_DEFINE_ERROR(SpanOutOfRange);
MSYNC_DEFINE_ERROR(OverlappingSpans);
MSYNC_DEFINE_ERROR(InvalidSequence);
MSYNC_DEFINE_ERROR(LengthMismatch);

// autodiff_core
MSYNC_DEFINE_ERROR(ShapeMismatch);
MSYNC_DEFINE_ERROR(NonScalarLoss);
MSYNC_DEFINE_ERROR(NonDeterministicFunction);

// crf
MSYNC_DEFINE_ERROR(EmptySequence);
MSYNC_DEFINE_ERROR(NoValidPath);
MSYNC_DEFINE_ERROR(GoldPathMasked);

// chunker_model
MSYNC_DEFINE_ERROR(EmptyTrainingSet);
MSYNC_DEFINE_ERROR(InvalidTags);
MSYNC_DEFINE_ERROR(EmptySentence);

// msync
MSYNC_DEFINE_ERROR(MissingSpans);
MSYNC_DEFINE_ERROR(MissingInit);
MSYNC_DEFINE_ERROR(IncompatibleInit);
MSYNC_DEFINE_ERROR(IncompatibleCheckpoint);
MSYNC_DEFINE_ERROR(LayerCountMismatch);

// downstream
MSYNC_DEFINE_ERROR(MissingChunker);
MSYNC_DEFINE_ERROR(LabelLengthMismatch);

// io
MSYNC_DEFINE_ERROR(IoError);
MSYNC_DEFINE_ERROR(ConfigError);

#undef MSYNC_DEFINE_ERROR

}  // namespace msync
