#include "tobac/scan.hpp"

#include <cstdio>
#include <sstream>

#include "tobac/errors.hpp"

namespace tobac {

ScanResult scan_homoglyph(const Caption& caption, const Vocabulary& vocab) {
  for (const std::string& w : caption) {
    if (vocab.is_homoglyph(vocab.word_id(w))) return {true, "homoglyph variant token '" + w + "'"};
  }
  return {};
}

FrequencyTable FrequencyTable::from_corpus(const Dataset& corpus, const Vocabulary& vocab) {
  FrequencyTable t;
  for (const Sample& s : corpus.samples) {
    for (int id : encode_sample(vocab, s).ids) {
      if (!vocab.is_word(id)) continue;
      ++t.counts_[id];
      ++t.total_;
    }
  }
  return t;
}

double FrequencyTable::frequency(int id) const {
  if (total_ == 0) return 0.0;
  const auto it = counts_.find(id);
  return it == counts_.end() ? 0.0 : static_cast<double>(it->second) / static_cast<double>(total_);
}

ScanResult scan_rare_token(const Caption& caption, const Vocabulary& vocab,
                           const FrequencyTable& table, double threshold) {
  if (table.empty()) throw ConfigError("rare-token scan needs a non-empty frequency table");
  for (const std::string& w : caption) {
    const double f = table.frequency(vocab.word_id(w));
    if (f < threshold) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.2e", f);
      return {true, "rare token '" + w + "' (frequency " + buf + ")"};
    }
  }
  return {};
}

std::vector<ScanRow> scan_matrix(const std::vector<ScanCorpus>& corpora, const Vocabulary& vocab,
                                 const FrequencyTable& table, double threshold) {
  std::vector<ScanRow> rows;
  for (const char* scanner : {"homoglyph", "rare_token"}) {
    const bool homoglyph = std::string(scanner) == "homoglyph";
    for (const ScanCorpus& c : corpora) {
      int flagged = 0;
      for (const Caption& p : c.prompts) {
        flagged += homoglyph ? scan_homoglyph(p, vocab).flagged
                             : scan_rare_token(p, vocab, table, threshold).flagged;
      }
      const int n = static_cast<int>(c.prompts.size());
      rows.push_back({scanner, c.name, n ? static_cast<double>(flagged) / n : 0.0, n});
    }
  }
  return rows;
}

std::string scan_matrix_csv(const std::vector<ScanRow>& rows) {
  std::ostringstream os;
  os << "scanner,corpus,rate,n\n";
  for (const ScanRow& r : rows) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", r.rate);
    os << r.scanner << ',' << r.corpus << ',' << buf << ',' << r.n << '\n';
  }
  return os.str();
}

std::vector<ScanCorpus> default_scan_corpora(const Vocabulary& vocab, const SceneSplit& split, int n,
                                             std::uint64_t seed) {
  ScanCorpus clean{"clean", {}}, common{"common-word", {}}, homo{"homoglyph", {}};
  for (int i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i), Stream::kEvalScene));
    const Caption c = caption_of(random_clean_scene(split, rng));
    clean.prompts.push_back(c);
    common.prompts.push_back(insert_trigger(c, kTriggerWord, TriggerKind::kCommonWord, vocab));
    homo.prompts.push_back(insert_trigger(c, kTriggerWord, TriggerKind::kHomoglyph, vocab));
  }
  return {clean, common, homo};
}

}  // namespace tobac
