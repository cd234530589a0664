#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "octgan/image.hpp"

namespace octgan::study {

enum class Truth { real, fake };

std::string to_string(Truth t);
Truth truth_from_string(const std::string &s);
std::ostream &operator<<(std::ostream &os, Truth t);

/// Answers keyed by item position.
using Responses = std::map<int64_t, Truth>;

struct StudySession {
  std::string id;
  uint64_t seed = 0;
  int64_t n_real = 0;
  int64_t n_fake = 0;
  /// Source reference of each presented item, in presentation order. Kept with the key.
  std::vector<std::string> sources;
  /// Hidden answer key, aligned with `sources`.
  std::vector<Truth> truth;
  /// Per-rater answers.
  std::map<std::string, Responses> responses;

  int64_t size() const { return static_cast<int64_t>(truth.size()); }
  bool complete(const std::string &rater) const;

  /// Item list without truth or source: {id, n_items, items: [{k, image}]}.
  nlohmann::json blinded_json() const;
  /// {id, seed, n_real, n_fake, truth, sources}.
  nlohmann::json key_json() const;
  nlohmann::json responses_json() const;
  static StudySession from_json(const nlohmann::json &blinded, const nlohmann::json &key,
                                const nlohmann::json &responses = nlohmann::json::object());

  /// Opaque file name shown to raters for item k.
  static std::string item_name(int64_t k);
};

/// Draws n_each references from each pool and interleaves them in a seeded order.
StudySession build_study(const std::vector<std::string> &real_refs,
                         const std::vector<std::string> &fake_refs, int64_t n_each,
                         uint64_t seed, const std::string &id = "");

/// Writes session.json (blinded), key.json and responses.json into `dir`.
void save_session(const StudySession &session, const std::filesystem::path &dir);
StudySession load_session(const std::filesystem::path &dir);

struct RaterReport {
  std::string rater;
  int64_t n = 0;
  int64_t correct = 0;
  int64_t real_correct = 0;
  int64_t fake_correct = 0;
  double accuracy = 0.0;
  double sensitivity = 0.0;
  double specificity = 0.0;
  double p_value = 1.0;

  nlohmann::json to_json() const;
};

/// Sensitivity = real items called real; specificity = fake items called fake.
/// Balanced sessions report accuracy as (sensitivity + specificity) / 2.
RaterReport score_rater(const std::vector<Truth> &truth, const Responses &responses,
                        const std::string &rater = "");
RaterReport score_rater(const StudySession &session, const std::string &rater);

/// Exact two-sided binomial test by the minimum-likelihood rule: sums P(X = j) over every j
/// with P(X = j) <= P(X = k) (relative tolerance 1e-7).
double binomial_test(int64_t k, int64_t n, double p0 = 0.5);

/// Fleiss' kappa of an items x categories count matrix whose rows all sum to the rater count.
double fleiss_kappa(const std::vector<std::vector<int64_t>> &counts);

/// Count matrix from per-rater verdict lists (raters x items), categories {real, fake}.
std::vector<std::vector<int64_t>> rating_counts(const std::vector<std::vector<Truth>> &verdicts);

/// Session-level report: one entry per rater plus Fleiss' kappa when >= 2 raters finished.
nlohmann::json session_report(const StudySession &session);

// ---------------------------------------------------------------------------------------------

struct LabeledSet {
  std::vector<Raster> images;
  std::vector<int> labels;  // 1 = condition present

  size_t size() const { return images.size(); }
  /// Throws ParameterError unless non-empty, aligned and exactly balanced.
  void check_balanced(const std::string &name) const;
  void append(const LabeledSet &other);
};

struct AugmentConfig {
  int64_t epochs = 15;
  int64_t batch_size = 16;
  double lr = 1e-3;
  uint64_t seed = 0;

  nlohmann::json to_json() const;
  static AugmentConfig from_json(const nlohmann::json &j);
};

struct AugmentResult {
  double real_only = 0.0;
  double synth_only = 0.0;
  double pooled = 0.0;

  nlohmann::json to_json() const;
};

/// Trains the same small CNN three times (real, synthetic, pooled) and reports accuracy on
/// `real_test` for each arm.
AugmentResult augmentation_experiment(const LabeledSet &real_train, const LabeledSet &synth_train,
                                      const LabeledSet &real_test, const AugmentConfig &config);

/// Accuracy of one classifier trained on `train` and evaluated on `test`.
double train_and_score(const LabeledSet &train, const LabeledSet &test,
                       const AugmentConfig &config, uint64_t arm);

/// Balanced ICL / non-ICL phantom set. `shifted` renders with a changed speckle and gain
/// profile, standing in for a generator whose output differs slightly from the real domain.
LabeledSet icl_phantom_set(int64_t n_each, int64_t size, uint64_t seed, bool shifted);

} // namespace octgan::study
