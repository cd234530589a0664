#include "octgan/study.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>

#include <torch/torch.h>

#include "octgan/errors.hpp"
#include "octgan/phantom.hpp"
#include "octgan/rng.hpp"

namespace fs = std::filesystem;

namespace octgan::study {

std::string to_string(Truth t) { return t == Truth::real ? "real" : "fake"; }

Truth truth_from_string(const std::string &s) {
  if (s == "real") return Truth::real;
  if (s == "fake") return Truth::fake;
  throw ParameterError("verdict must be 'real' or 'fake', got '" + s + "'");
}

std::ostream &operator<<(std::ostream &os, Truth t) { return os << to_string(t); }

bool StudySession::complete(const std::string &rater) const {
  const auto it = responses.find(rater);
  return it != responses.end() && static_cast<int64_t>(it->second.size()) == size();
}

std::string StudySession::item_name(int64_t k) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "item_%03lld.png", static_cast<long long>(k));
  return buf;
}

nlohmann::json StudySession::blinded_json() const {
  nlohmann::json items = nlohmann::json::array();
  for (int64_t k = 0; k < size(); ++k) {
    items.push_back({{"k", k}, {"image", item_name(k)}});
  }
  return {{"id", id}, {"n_items", size()}, {"items", items}};
}

nlohmann::json StudySession::key_json() const {
  std::vector<std::string> t;
  for (auto v : truth) {
    t.push_back(to_string(v));
  }
  return {{"id", id},       {"seed", seed},   {"n_real", n_real},
          {"n_fake", n_fake}, {"truth", t}, {"sources", sources}};
}

nlohmann::json StudySession::responses_json() const {
  nlohmann::json out = nlohmann::json::object();
  for (const auto &[rater, answers] : responses) {
    nlohmann::json a = nlohmann::json::object();
    for (const auto &[k, v] : answers) {
      a[std::to_string(k)] = to_string(v);
    }
    out[rater] = a;
  }
  return out;
}

StudySession StudySession::from_json(const nlohmann::json &blinded, const nlohmann::json &key,
                                     const nlohmann::json &responses) {
  StudySession s;
  s.id = key.at("id").get<std::string>();
  if (blinded.at("id").get<std::string>() != s.id) {
    throw FormatError("session and key ids differ");
  }
  s.seed = key.at("seed").get<uint64_t>();
  s.n_real = key.at("n_real").get<int64_t>();
  s.n_fake = key.at("n_fake").get<int64_t>();
  s.sources = key.at("sources").get<std::vector<std::string>>();
  for (const auto &t : key.at("truth")) {
    s.truth.push_back(truth_from_string(t.get<std::string>()));
  }
  if (s.size() != s.n_real + s.n_fake || s.sources.size() != s.truth.size() ||
      blinded.at("n_items").get<int64_t>() != s.size()) {
    throw FormatError("study key does not match its item counts");
  }
  for (const auto &[rater, answers] : responses.items()) {
    Responses r;
    for (const auto &[k, v] : answers.items()) {
      const auto idx = std::stoll(k);
      if (idx < 0 || idx >= s.size()) {
        throw FormatError("response for unknown item " + k);
      }
      r[idx] = truth_from_string(v.get<std::string>());
    }
    s.responses[rater] = std::move(r);
  }
  return s;
}

StudySession build_study(const std::vector<std::string> &real_refs,
                         const std::vector<std::string> &fake_refs, int64_t n_each,
                         uint64_t seed, const std::string &id) {
  if (n_each < 1) {
    throw ParameterError("n_each must be >= 1");
  }
  if (static_cast<int64_t>(real_refs.size()) < n_each ||
      static_cast<int64_t>(fake_refs.size()) < n_each) {
    throw ParameterError("study pools hold " + std::to_string(real_refs.size()) + " real and " +
                         std::to_string(fake_refs.size()) + " fake images; need " +
                         std::to_string(n_each) + " of each");
  }
  auto draw = [&](std::vector<std::string> pool, uint64_t stream) {
    std::mt19937_64 rng(derive_seed(seed, stream));
    std::shuffle(pool.begin(), pool.end(), rng);
    pool.resize(static_cast<size_t>(n_each));
    return pool;
  };
  const auto real = draw(real_refs, 0x5EA1);
  const auto fake = draw(fake_refs, 0xFA4E);

  std::vector<std::pair<std::string, Truth>> items;
  for (const auto &r : real) items.emplace_back(r, Truth::real);
  for (const auto &f : fake) items.emplace_back(f, Truth::fake);
  std::mt19937_64 rng(derive_seed(seed, 0x0DE4));
  std::shuffle(items.begin(), items.end(), rng);

  StudySession s;
  if (id.empty()) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "study-%016llx",
                  static_cast<unsigned long long>(derive_seed(seed, 0x1D)));
    s.id = buf;
  } else {
    s.id = id;
  }
  s.seed = seed;
  s.n_real = n_each;
  s.n_fake = n_each;
  for (auto &[ref, t] : items) {
    s.sources.push_back(ref);
    s.truth.push_back(t);
  }
  return s;
}

namespace {

nlohmann::json read_json(const fs::path &path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot read " + path.string());
  }
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception &e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_json(const fs::path &path, const nlohmann::json &j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw IoError("cannot write " + path.string());
  }
  out << j.dump(2) << '\n';
}

} // namespace

void save_session(const StudySession &session, const fs::path &dir) {
  fs::create_directories(dir);
  write_json(dir / "session.json", session.blinded_json());
  write_json(dir / "key.json", session.key_json());
  write_json(dir / "responses.json", session.responses_json());
}

StudySession load_session(const fs::path &dir) {
  const auto responses = fs::exists(dir / "responses.json") ? read_json(dir / "responses.json")
                                                            : nlohmann::json::object();
  return StudySession::from_json(read_json(dir / "session.json"), read_json(dir / "key.json"),
                                 responses);
}

// ---------------------------------------------------------------------------------------------

nlohmann::json RaterReport::to_json() const {
  return {{"rater", rater},
          {"n", n},
          {"correct", correct},
          {"accuracy", accuracy},
          {"sensitivity", sensitivity},
          {"specificity", specificity},
          {"p_value", p_value}};
}

RaterReport score_rater(const std::vector<Truth> &truth, const Responses &responses,
                        const std::string &rater) {
  if (truth.empty()) {
    throw ParameterError("cannot score an empty session");
  }
  const auto n = static_cast<int64_t>(truth.size());
  if (static_cast<int64_t>(responses.size()) != n || responses.begin()->first != 0 ||
      responses.rbegin()->first != n - 1) {
    throw ParameterError("responses cover " + std::to_string(responses.size()) + " of " +
                         std::to_string(n) + " items; partial sessions are not scored");
  }
  RaterReport r;
  r.rater = rater;
  r.n = n;
  int64_t n_real = 0;
  for (int64_t k = 0; k < n; ++k) {
    const auto t = truth[static_cast<size_t>(k)];
    const bool hit = responses.at(k) == t;
    if (t == Truth::real) {
      ++n_real;
      r.real_correct += hit ? 1 : 0;
    } else {
      r.fake_correct += hit ? 1 : 0;
    }
  }
  const int64_t n_fake = n - n_real;
  r.correct = r.real_correct + r.fake_correct;
  r.sensitivity = n_real > 0 ? static_cast<double>(r.real_correct) / static_cast<double>(n_real) : 0.0;
  r.specificity = n_fake > 0 ? static_cast<double>(r.fake_correct) / static_cast<double>(n_fake) : 0.0;
  r.accuracy = n_real == n_fake ? (r.sensitivity + r.specificity) / 2.0
                                : static_cast<double>(r.correct) / static_cast<double>(n);
  r.p_value = binomial_test(r.correct, n, 0.5);
  return r;
}

RaterReport score_rater(const StudySession &session, const std::string &rater) {
  const auto it = session.responses.find(rater);
  if (it == session.responses.end()) {
    throw NotFoundError("no responses from rater '" + rater + "'");
  }
  return score_rater(session.truth, it->second, rater);
}

double binomial_test(int64_t k, int64_t n, double p0) {
  if (n < 1 || k < 0 || k > n) {
    throw ParameterError("binomial_test needs 0 <= k <= n and n >= 1");
  }
  if (!(p0 >= 0.0 && p0 <= 1.0)) {
    throw ParameterError("binomial_test needs p0 in [0, 1]");
  }
  if (p0 == 0.0 || p0 == 1.0) {
    const int64_t certain = p0 == 0.0 ? 0 : n;
    return k == certain ? 1.0 : 0.0;
  }
  const double lp = std::log(p0);
  const double lq = std::log1p(-p0);
  const double lgn = std::lgamma(static_cast<double>(n) + 1.0);
  auto log_pmf = [&](int64_t j) {
    const auto dj = static_cast<double>(j);
    const auto dr = static_cast<double>(n - j);
    return lgn - (std::lgamma(dj + 1.0) + std::lgamma(dr + 1.0)) + (dj * lp + dr * lq);
  };
  const double threshold = std::exp(log_pmf(k)) * (1.0 + 1e-7);
  double p = 0.0;
  int64_t included = 0;
  for (int64_t j = 0; j <= n; ++j) {
    const double pj = std::exp(log_pmf(j));
    if (pj <= threshold) {
      p += pj;
      ++included;
    }
  }
  // Every outcome counted: the sum is exactly one, whatever the rounding says.
  return included == n + 1 ? 1.0 : std::min(1.0, p);
}

double fleiss_kappa(const std::vector<std::vector<int64_t>> &counts) {
  if (counts.size() < 2) {
    throw ParameterError("Fleiss' kappa needs at least two items");
  }
  const size_t n_cat = counts.front().size();
  if (n_cat < 1) {
    throw ParameterError("Fleiss' kappa needs at least one category");
  }
  int64_t m = -1;
  for (const auto &row : counts) {
    if (row.size() != n_cat) {
      throw ShapeError("every item needs the same number of categories");
    }
    int64_t sum = 0;
    for (auto c : row) {
      if (c < 0) {
        throw ParameterError("rating counts must be non-negative");
      }
      sum += c;
    }
    if (m < 0) {
      m = sum;
    } else if (sum != m) {
      throw ParameterError("every item must be rated by the same number of raters");
    }
  }
  if (m < 2) {
    throw ParameterError("Fleiss' kappa needs at least two raters");
  }
  const auto n_items = static_cast<double>(counts.size());
  const auto dm = static_cast<double>(m);
  std::vector<double> column(n_cat, 0.0);
  double p_bar = 0.0;
  for (const auto &row : counts) {
    double sq = 0.0;
    for (size_t j = 0; j < n_cat; ++j) {
      const auto c = static_cast<double>(row[j]);
      sq += c * c;
      column[j] += c;
    }
    p_bar += (sq - dm) / (dm * (dm - 1.0));
  }
  p_bar /= n_items;
  double p_e = 0.0;
  for (double c : column) {
    const double pj = c / (n_items * dm);
    p_e += pj * pj;
  }
  if (1.0 - p_e <= 1e-15) {
    throw NumericError("Fleiss' kappa is undefined when every rating falls in one category");
  }
  return (p_bar - p_e) / (1.0 - p_e);
}

std::vector<std::vector<int64_t>> rating_counts(const std::vector<std::vector<Truth>> &verdicts) {
  if (verdicts.empty()) {
    throw ParameterError("no rater verdicts");
  }
  const size_t n = verdicts.front().size();
  std::vector<std::vector<int64_t>> counts(n, std::vector<int64_t>(2, 0));
  for (const auto &rater : verdicts) {
    if (rater.size() != n) {
      throw ShapeError("every rater must answer every item");
    }
    for (size_t k = 0; k < n; ++k) {
      ++counts[k][rater[k] == Truth::real ? 0 : 1];
    }
  }
  return counts;
}

nlohmann::json session_report(const StudySession &session) {
  nlohmann::json raters = nlohmann::json::array();
  std::vector<std::vector<Truth>> verdicts;
  for (const auto &[name, answers] : session.responses) {
    if (!session.complete(name)) {
      continue;
    }
    raters.push_back(score_rater(session.truth, answers, name).to_json());
    std::vector<Truth> v;
    for (const auto &[k, t] : answers) {
      v.push_back(t);
    }
    verdicts.push_back(std::move(v));
  }
  nlohmann::json report = {{"id", session.id},
                           {"n_items", session.size()},
                           {"n_real", session.n_real},
                           {"n_fake", session.n_fake},
                           {"raters", raters}};
  if (verdicts.size() >= 2) {
    try {
      report["fleiss_kappa"] = fleiss_kappa(rating_counts(verdicts));
    } catch (const NumericError &) {
      report["fleiss_kappa"] = nullptr;
    }
  }
  return report;
}

// ---------------------------------------------------------------------------------------------

void LabeledSet::check_balanced(const std::string &name) const {
  if (images.empty() || images.size() != labels.size()) {
    throw ParameterError(name + " must hold aligned, non-empty images and labels");
  }
  const auto pos = std::count(labels.begin(), labels.end(), 1);
  const auto neg = std::count(labels.begin(), labels.end(), 0);
  if (pos + neg != static_cast<long>(labels.size())) {
    throw ParameterError(name + " labels must be 0 or 1");
  }
  if (pos != neg) {
    throw ParameterError(name + " is imbalanced: " + std::to_string(pos) + " positive vs " +
                         std::to_string(neg) + " negative");
  }
}

void LabeledSet::append(const LabeledSet &other) {
  images.insert(images.end(), other.images.begin(), other.images.end());
  labels.insert(labels.end(), other.labels.begin(), other.labels.end());
}

nlohmann::json AugmentConfig::to_json() const {
  return {{"epochs", epochs}, {"batch_size", batch_size}, {"lr", lr}, {"seed", seed}};
}

AugmentConfig AugmentConfig::from_json(const nlohmann::json &j) {
  AugmentConfig c;
  for (const auto &[key, value] : j.items()) {
    if (key == "epochs") {
      c.epochs = value.get<int64_t>();
    } else if (key == "batch_size") {
      c.batch_size = value.get<int64_t>();
    } else if (key == "lr") {
      c.lr = value.get<double>();
    } else if (key == "seed") {
      c.seed = value.get<uint64_t>();
    } else {
      throw ConfigError("unknown augmentation config key: " + key);
    }
  }
  if (c.epochs < 1 || c.batch_size < 1 || !(c.lr > 0.0)) {
    throw ConfigError("augmentation epochs, batch_size and lr must be positive");
  }
  return c;
}

nlohmann::json AugmentResult::to_json() const {
  return {{"real_only", real_only}, {"synth_only", synth_only}, {"pooled", pooled}};
}

namespace {

struct ClassifierImpl : torch::nn::Module {
  ClassifierImpl() {
    namespace nn = torch::nn;
    c1 = register_module("c1", nn::Conv2d(nn::Conv2dOptions(1, 8, 3).stride(2).padding(1)));
    c2 = register_module("c2", nn::Conv2d(nn::Conv2dOptions(8, 16, 3).stride(2).padding(1)));
    c3 = register_module("c3", nn::Conv2d(nn::Conv2dOptions(16, 32, 3).stride(2).padding(1)));
    fc = register_module("fc", nn::Linear(32, 1));
  }

  torch::Tensor forward(torch::Tensor x) {
    x = torch::relu(c1->forward(x * 2.0 - 1.0));
    x = torch::relu(c2->forward(x));
    x = torch::relu(c3->forward(x));
    return fc->forward(x.mean({2, 3})).squeeze(1);
  }

  torch::nn::Conv2d c1{nullptr}, c2{nullptr}, c3{nullptr};
  torch::nn::Linear fc{nullptr};
};
TORCH_MODULE(Classifier);

} // namespace

double train_and_score(const LabeledSet &train, const LabeledSet &test,
                       const AugmentConfig &cfg, uint64_t arm) {
  train.check_balanced("training set");
  test.check_balanced("test set");
  const auto x = stack_rasters(train.images);
  const auto y = torch::tensor(std::vector<float>(train.labels.begin(), train.labels.end()));
  const auto xt = stack_rasters(test.images);
  if (x.sizes().slice(1) != xt.sizes().slice(1)) {
    throw ShapeError("training and test images differ in resolution");
  }

  torch::manual_seed(derive_seed(cfg.seed, 0xC1A5, arm));
  Classifier net;
  torch::optim::Adam opt(net->parameters(), torch::optim::AdamOptions(cfg.lr));
  std::mt19937_64 rng(derive_seed(cfg.seed, 0x5407, arm));
  std::vector<int64_t> order(train.size());
  std::iota(order.begin(), order.end(), int64_t{0});
  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
      const auto end = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
      const auto idx = torch::tensor(
          std::vector<int64_t>(order.begin() + static_cast<long>(start),
                               order.begin() + static_cast<long>(end)),
          torch::kLong);
      const auto loss = torch::binary_cross_entropy_with_logits(
          net->forward(x.index_select(0, idx)), y.index_select(0, idx));
      opt.zero_grad();
      loss.backward();
      opt.step();
    }
  }

  torch::NoGradGuard guard;
  net->eval();
  const auto pred = net->forward(xt).gt(0.0).to(torch::kInt);
  const auto truth = torch::tensor(std::vector<int>(test.labels.begin(), test.labels.end()),
                                   torch::kInt);
  return pred.eq(truth).to(torch::kFloat64).mean().item<double>();
}

AugmentResult augmentation_experiment(const LabeledSet &real_train, const LabeledSet &synth_train,
                                      const LabeledSet &real_test, const AugmentConfig &cfg) {
  real_train.check_balanced("real training set");
  synth_train.check_balanced("synthetic training set");
  real_test.check_balanced("real test set");
  LabeledSet pooled = real_train;
  pooled.append(synth_train);
  AugmentResult r;
  r.real_only = train_and_score(real_train, real_test, cfg, 0);
  r.synth_only = train_and_score(synth_train, real_test, cfg, 1);
  r.pooled = train_and_score(pooled, real_test, cfg, 2);
  return r;
}

LabeledSet icl_phantom_set(int64_t n_each, int64_t size, uint64_t seed, bool shifted) {
  if (n_each < 1) {
    throw ParameterError("n_each must be >= 1");
  }
  phantom::DatasetSpec spec;
  spec.size = size;
  spec.class_mix["icl"] = 0.0;
  LabeledSet set;
  for (int64_t i = 0; i < 2 * n_each; ++i) {
    uint64_t item_seed = 0;
    auto p = phantom::sample_params(spec, seed, i, &item_seed);
    p.has_icl = i % 2 == 0;
    if (shifted) {
      p.speckle_shape *= 1.5;
      p.intensity_scale = std::min(1.0, p.intensity_scale * 1.05);
    }
    set.images.push_back(phantom::generate_phantom(p, item_seed).image.pixels);
    set.labels.push_back(p.has_icl ? 1 : 0);
  }
  return set;
}

} // namespace octgan::study
