#include "ksoftmax/experiment.hpp"

#include "ksoftmax/error.hpp"

namespace ksoftmax {

std::vector<std::string> corpus_lines(const CorpusConfig& config) {
  if (config.synthetic) {
    ZipfCorpusOptions o;
    o.zipf_s = config.zipf_s;
    o.vocab = config.synth_vocab;
    o.tokens = config.synth_tokens;
    o.seed = config.synth_seed;
    o.context_weight = config.context_weight;
    return generate_zipf_corpus(o);
  }
  if (config.path.empty()) {
    throw Error(Errc::InvalidConfig, "corpus.path is empty and corpus.synthetic is false");
  }
  return read_lines(config.path);
}

PreparedCorpus prepare_corpus(const CorpusConfig& config, const Vocabulary* vocab) {
  const LineSplit lines =
      split_lines(corpus_lines(config), config.train_frac, config.dev_frac, config.split_seed);
  PreparedCorpus out{vocab ? *vocab
                           : Vocabulary::build(lines.train, config.max_vocab, config.min_count,
                                               config.lowercase),
                     {}};
  out.split = encode_split(lines, out.vocab);
  return out;
}

}  // namespace ksoftmax
