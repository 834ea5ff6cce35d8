#pragma once

#include <map>
#include <string>
#include <vector>

#include "tobac/vocab.hpp"
#include "tobac/world.hpp"

namespace tobac {

struct ScanResult {
  bool flagged = false;
  std::string reason;
};

/// Flags any token carrying the homoglyph-variant flag.
ScanResult scan_homoglyph(const Caption& caption, const Vocabulary& vocab);

/// Relative frequency of each word id over the word tokens of a corpus.
class FrequencyTable {
 public:
  static FrequencyTable from_corpus(const Dataset& corpus, const Vocabulary& vocab);

  double frequency(int id) const;
  bool empty() const { return total_ == 0; }
  long total() const { return total_; }

 private:
  std::map<int, long> counts_;
  long total_ = 0;
};

inline constexpr double kRareTokenThreshold = 1e-4;

/// Flags any token whose clean-corpus frequency is below the threshold.
/// ConfigError on an empty table.
ScanResult scan_rare_token(const Caption& caption, const Vocabulary& vocab,
                           const FrequencyTable& table, double threshold = kRareTokenThreshold);

struct ScanRow {
  std::string scanner;
  std::string corpus;
  double rate = 0.0;
  int n = 0;
};

struct ScanCorpus {
  std::string name;
  std::vector<Caption> prompts;
};

/// Scanner x corpus flag rates.
std::vector<ScanRow> scan_matrix(const std::vector<ScanCorpus>& corpora, const Vocabulary& vocab,
                                 const FrequencyTable& table, double threshold = kRareTokenThreshold);
std::string scan_matrix_csv(const std::vector<ScanRow>& rows);

/// Prompt sets used by the scan report: clean captions, and the same scenes
/// with each trigger kind inserted.
std::vector<ScanCorpus> default_scan_corpora(const Vocabulary& vocab, const SceneSplit& split, int n,
                                             std::uint64_t seed);

}  // namespace tobac
