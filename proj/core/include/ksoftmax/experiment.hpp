#pragma once

#include <filesystem>

#include "ksoftmax/config.hpp"
#include "ksoftmax/data.hpp"

namespace ksoftmax {

struct PreparedCorpus {
  Vocabulary vocab;  // built from the training lines only
  CorpusSplit split;
};

/// Reads (or synthesizes) the corpus, splits it by line and encodes it.
/// Pass `vocab` to encode with an existing vocabulary instead of building one.
PreparedCorpus prepare_corpus(const CorpusConfig& config, const Vocabulary* vocab = nullptr);

/// The lines of the configured corpus before splitting.
std::vector<std::string> corpus_lines(const CorpusConfig& config);

}  // namespace ksoftmax
