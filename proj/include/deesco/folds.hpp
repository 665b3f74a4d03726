#pragma once

// Subject-disjoint cross-validation folds: leave-one-subject-out, or k-fold
// over subjects (never over samples).

#include <algorithm>
#include <string>
#include <vector>

#include "deesco/dataset.hpp"

namespace deesco {

struct Fold {
  int id = 0;
  std::vector<std::uint32_t> train_subjects, test_subjects;
  std::vector<std::size_t> train_ids, test_ids;
};

enum class FoldSchemeKind { Loso, Kfold };

struct FoldScheme {
  FoldSchemeKind kind = FoldSchemeKind::Loso;
  int k = 3;  // kfold only
};

inline std::vector<Fold> make_folds(const DatasetManifest& m,
                                    const FoldScheme& scheme) {
  std::vector<std::uint32_t> subjects = m.subjects;
  std::sort(subjects.begin(), subjects.end());
  subjects.erase(std::unique(subjects.begin(), subjects.end()), subjects.end());

  std::vector<std::vector<std::uint32_t>> test_groups;
  if (scheme.kind == FoldSchemeKind::Loso) {
    if (subjects.size() < 2)
      throw ConfigError("make_folds: leave-one-subject-out needs >= 2 subjects");
    for (auto s : subjects) test_groups.push_back({s});
  } else {
    const int k = scheme.k;
    if (k < 2 || static_cast<std::size_t>(k) > subjects.size())
      throw ConfigError("make_folds: k=" + std::to_string(k) +
                        " folds over " + std::to_string(subjects.size()) +
                        " subjects is not possible");
    // Contiguous chunks over sorted subjects; the first count%k get the
    // extra subject (e.g. 50 subjects, k=3 -> 17/17/16).
    const std::size_t base = subjects.size() / static_cast<std::size_t>(k);
    const std::size_t extra = subjects.size() % static_cast<std::size_t>(k);
    std::size_t pos = 0;
    for (int g = 0; g < k; ++g) {
      const std::size_t take = base + (static_cast<std::size_t>(g) < extra ? 1 : 0);
      test_groups.emplace_back(subjects.begin() + pos,
                               subjects.begin() + pos + take);
      pos += take;
    }
  }

  std::vector<Fold> folds;
  for (std::size_t f = 0; f < test_groups.size(); ++f) {
    Fold fold;
    fold.id = static_cast<int>(f);
    fold.test_subjects = test_groups[f];
    for (auto s : subjects)
      if (std::find(fold.test_subjects.begin(), fold.test_subjects.end(), s) ==
          fold.test_subjects.end())
        fold.train_subjects.push_back(s);
    for (std::size_t i = 0; i < m.files.size(); ++i) {
      const auto sid = m.files[i].subject;
      if (std::find(fold.test_subjects.begin(), fold.test_subjects.end(),
                    sid) != fold.test_subjects.end())
        fold.test_ids.push_back(i);
      else
        fold.train_ids.push_back(i);
    }
    folds.push_back(std::move(fold));
  }
  return folds;
}

}  // namespace deesco
