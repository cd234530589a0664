#include "octgan/service.hpp"

#include <cstdio>
#include <fstream>
#include <regex>

#include <httplib.h>

#include "octgan/errors.hpp"
#include "octgan/phantom.hpp"
#include "octgan/png_io.hpp"
#include "octgan/rng.hpp"

namespace fs = std::filesystem;

namespace octgan::service {

namespace {

Response json_response(const nlohmann::json &j, int status = 200) {
  return {status, "application/json", j.dump()};
}

Response error_response(int status, const std::string &message) {
  return json_response({{"error", message}}, status);
}

nlohmann::json parse_body(const std::string &body) {
  if (body.empty()) {
    return nlohmann::json::object();
  }
  try {
    auto j = nlohmann::json::parse(body);
    if (!j.is_object()) {
      throw ParameterError("request body must be a JSON object");
    }
    return j;
  } catch (const nlohmann::json::parse_error &e) {
    throw ParameterError(std::string("malformed JSON body: ") + e.what());
  }
}

int64_t query_int(const Query &q, const std::string &key, int64_t fallback) {
  const auto it = q.find(key);
  if (it == q.end() || it->second.empty()) {
    return fallback;
  }
  try {
    size_t used = 0;
    const auto v = std::stoll(it->second, &used);
    if (used != it->second.size()) {
      throw std::invalid_argument(key);
    }
    return v;
  } catch (const std::exception &) {
    throw ParameterError("query parameter '" + key + "' must be an integer");
  }
}

std::string png_base64(const Raster &image) {
  return io::base64_encode(io::encode_png(image));
}

} // namespace

ApiService::ApiService(GanModel model, ServeConfig config, std::vector<Raster> real_pool)
    : model_(std::move(model)), config_(std::move(config)), real_pool_(std::move(real_pool)) {
  model_.generator->eval();
  if (!config_.bookmarks.empty() && fs::exists(config_.bookmarks)) {
    std::ifstream in(config_.bookmarks);
    bookmarks_ = nlohmann::json::parse(in);
    if (!bookmarks_.is_array()) {
      throw FormatError("bookmarks file must hold a JSON array");
    }
  }
  if (!config_.study_dir.empty() && fs::is_directory(config_.study_dir)) {
    for (const auto &entry : fs::directory_iterator(config_.study_dir)) {
      if (entry.is_directory() && fs::exists(entry.path() / "key.json")) {
        auto s = std::make_shared<Session>();
        s->study = study::load_session(entry.path());
        sessions_[s->study.id] = s;
        ++session_counter_;
      }
    }
  }
}

Response ApiService::health() const { return json_response({{"status", "ok"}}); }

Response ApiService::model_info() const {
  const auto &c = model_.config;
  return json_response({{"kind", "gan"},
                        {"iteration", model_.iteration},
                        {"resolution", c.resolution},
                        {"latent_dim", c.latent_dim},
                        {"num_ws", c.num_ws()},
                        {"config", c.to_json()},
                        {"stats", model_.stats.to_json()},
                        {"metric_history", model_.metric_history}});
}

std::string ApiService::render_png(uint64_t seed, double psi,
                                   const latent::LatentDirection *dir, double alpha) {
  std::lock_guard lock(render_mutex_);
  auto ws = latent_for_seed(model_, seed, psi);
  if (dir != nullptr) {
    ws = latent::apply_edit(ws, *dir, alpha);
  }
  return png_base64(render_ws(model_, ws, seed));
}

Response ApiService::generate(const std::string &body) {
  const auto j = parse_body(body);
  const auto seed = j.value("seed", uint64_t{0});
  const auto psi = j.value("psi", config_.psi);
  return json_response({{"seed", seed}, {"psi", psi}, {"image_png_base64", render_png(seed, psi, nullptr, 0.0)}});
}

const std::vector<latent::LatentDirection> &
ApiService::directions_for(const latent::LayerRange &range) {
  std::lock_guard lock(directions_mutex_);
  const auto key = std::make_pair(range.lo, range.hi);
  auto it = directions_.find(key);
  if (it == directions_.end()) {
    it = directions_.emplace(key, latent::factorize(model_.generator, range)).first;
  }
  return it->second;
}

Response ApiService::directions(const Query &query) {
  const latent::LayerRange range{query_int(query, "lo", 0),
                                 query_int(query, "hi", model_.config.num_ws())};
  nlohmann::json out = nlohmann::json::array();
  for (const auto &d : directions_for(range)) {
    out.push_back({{"rank", d.rank}, {"eigenvalue", d.eigenvalue}});
  }
  return json_response(out);
}

Response ApiService::edit(const std::string &body) {
  const auto j = parse_body(body);
  const auto seed = j.value("seed", uint64_t{0});
  const auto rank = j.value("rank", int64_t{0});
  const auto alpha = j.value("alpha", 0.0);
  const auto psi = j.value("psi", config_.psi);
  const latent::LayerRange range{j.value("lo", int64_t{0}),
                                 j.value("hi", model_.config.num_ws())};
  const auto &dirs = directions_for(range);
  if (rank < 0 || rank >= static_cast<int64_t>(dirs.size())) {
    throw ParameterError("rank " + std::to_string(rank) + " is outside [0, " +
                         std::to_string(dirs.size()) + ")");
  }
  const auto &dir = dirs[static_cast<size_t>(rank)];
  return json_response({{"seed", seed},
                        {"rank", rank},
                        {"alpha", alpha},
                        {"eigenvalue", dir.eigenvalue},
                        {"original_png", render_png(seed, psi, nullptr, 0.0)},
                        {"edited_png", render_png(seed, psi, &dir, alpha)}});
}

Response ApiService::bookmarks() const {
  std::lock_guard lock(bookmarks_mutex_);
  return json_response(bookmarks_);
}

void ApiService::persist_bookmarks() const {
  if (config_.bookmarks.empty()) {
    return;
  }
  const auto tmp = fs::path(config_.bookmarks.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) {
      throw IoError("cannot write " + tmp.string());
    }
    out << bookmarks_.dump(2) << '\n';
  }
  fs::rename(tmp, config_.bookmarks);
}

Response ApiService::add_bookmark(const std::string &body) {
  const auto j = parse_body(body);
  if (!j.contains("label") || !j["label"].is_string() || j["label"].get<std::string>().empty()) {
    throw ParameterError("bookmark needs a non-empty 'label'");
  }
  const latent::LayerRange range{j.value("lo", int64_t{0}),
                                 j.value("hi", model_.config.num_ws())};
  range.validate(model_.config.num_ws());
  const auto rank = j.value("rank", int64_t{0});
  if (rank < 0 || rank >= model_.config.latent_dim) {
    throw ParameterError("bookmark rank is out of range");
  }
  nlohmann::json entry = {{"rank", rank},
                          {"lo", range.lo},
                          {"hi", range.hi},
                          {"label", j["label"]}};
  if (j.contains("alpha")) {
    entry["alpha"] = j["alpha"].get<double>();
  }
  std::lock_guard lock(bookmarks_mutex_);
  bookmarks_.push_back(entry);
  persist_bookmarks();
  return json_response(bookmarks_, 201);
}

Raster ApiService::study_image(const std::string &ref) {
  const auto colon = ref.find(':');
  const auto kind = ref.substr(0, colon);
  const auto value = std::stoull(ref.substr(colon + 1));
  if (kind == "real") {
    if (!real_pool_.empty()) {
      return real_pool_.at(value);
    }
    phantom::DatasetSpec spec;
    spec.size = model_.config.resolution;
    uint64_t item_seed = 0;
    const auto p = phantom::sample_params(spec, 0x5EA1, static_cast<int64_t>(value), &item_seed);
    return phantom::generate_phantom(p, item_seed).image.pixels;
  }
  std::lock_guard lock(render_mutex_);
  return render_seed(model_, value, config_.psi);
}

void ApiService::persist_session(const Session &s) const {
  if (!config_.study_dir.empty()) {
    study::save_session(s.study, config_.study_dir / s.study.id);
  }
}

Response ApiService::create_session(const std::string &body) {
  const auto j = parse_body(body);
  const auto n_each = j.value("n_each", int64_t{50});
  const auto seed = j.value("seed", uint64_t{0});
  if (n_each < 1 || n_each > 1000) {
    throw ParameterError("n_each must lie in [1, 1000]");
  }
  const int64_t pool = real_pool_.empty() ? 4 * n_each : static_cast<int64_t>(real_pool_.size());
  std::vector<std::string> real_refs;
  std::vector<std::string> fake_refs;
  for (int64_t i = 0; i < pool; ++i) {
    real_refs.push_back("real:" + std::to_string(i));
  }
  for (int64_t i = 0; i < 4 * n_each; ++i) {
    fake_refs.push_back("fake:" + std::to_string(derive_seed(seed, 0xFA4E, static_cast<uint64_t>(i)) >> 1));
  }
  std::lock_guard lock(sessions_mutex_);
  char id[64];
  std::snprintf(id, sizeof(id), "s%04lld-%08llx", static_cast<long long>(++session_counter_),
                static_cast<unsigned long long>(derive_seed(seed, 0x1D) & 0xffffffffULL));
  auto s = std::make_shared<Session>();
  s->study = study::build_study(real_refs, fake_refs, n_each, seed, id);
  persist_session(*s);
  sessions_[s->study.id] = s;
  return json_response({{"id", s->study.id}, {"n_items", s->study.size()}}, 201);
}

std::shared_ptr<ApiService::Session> ApiService::find_session(const std::string &id) {
  std::lock_guard lock(sessions_mutex_);
  const auto it = sessions_.find(id);
  if (it == sessions_.end()) {
    throw NotFoundError("unknown study session '" + id + "'");
  }
  return it->second;
}

Response ApiService::session_item(const std::string &id, int64_t k) {
  auto s = find_session(id);
  std::string ref;
  {
    std::lock_guard lock(s->mutex);
    if (k < 0 || k >= s->study.size()) {
      throw NotFoundError("session " + id + " has no item " + std::to_string(k));
    }
    ref = s->study.sources[static_cast<size_t>(k)];
  }
  const auto png = io::encode_png(study_image(ref));
  return {200, "image/png", std::string(png.begin(), png.end())};
}

Response ApiService::answer(const std::string &id, const std::string &body) {
  const auto j = parse_body(body);
  auto s = find_session(id);
  if (!j.contains("k") || !j.contains("verdict")) {
    throw ParameterError("answer needs 'k' and 'verdict'");
  }
  const auto k = j["k"].get<int64_t>();
  const auto verdict = study::truth_from_string(j["verdict"].get<std::string>());
  const auto rater = j.value("rater", std::string("default"));
  std::lock_guard lock(s->mutex);
  if (k < 0 || k >= s->study.size()) {
    throw NotFoundError("session " + id + " has no item " + std::to_string(k));
  }
  auto &answers = s->study.responses[rater];
  answers[k] = verdict;
  persist_session(*s);
  return json_response({{"id", id},
                        {"rater", rater},
                        {"answered", answers.size()},
                        {"n_items", s->study.size()}});
}

Response ApiService::report(const std::string &id) {
  auto s = find_session(id);
  std::lock_guard lock(s->mutex);
  bool any_complete = false;
  for (const auto &[rater, answers] : s->study.responses) {
    any_complete = any_complete || s->study.complete(rater);
  }
  if (!any_complete) {
    throw ConflictError("session " + id + " is not complete; the report unlocks after every item "
                        "is answered");
  }
  return json_response(study::session_report(s->study));
}

Response ApiService::handle(const std::string &method, const std::string &path,
                            const Query &query, const std::string &body) {
  static const std::regex item_re(R"(^/api/study/([^/]+)/item/(-?\d+)$)");
  static const std::regex answer_re(R"(^/api/study/([^/]+)/answer$)");
  static const std::regex report_re(R"(^/api/study/([^/]+)/report$)");
  try {
    std::smatch m;
    if (method == "GET" && path == "/api/health") return health();
    if (method == "GET" && path == "/api/model") return model_info();
    if (method == "POST" && path == "/api/generate") return generate(body);
    if (method == "GET" && path == "/api/directions") return directions(query);
    if (method == "POST" && path == "/api/edit") return edit(body);
    if (method == "GET" && path == "/api/bookmarks") return bookmarks();
    if (method == "POST" && path == "/api/bookmarks") return add_bookmark(body);
    if (method == "POST" && path == "/api/study/session") return create_session(body);
    if (method == "GET" && std::regex_match(path, m, item_re)) {
      return session_item(m[1].str(), std::stoll(m[2].str()));
    }
    if (method == "POST" && std::regex_match(path, m, answer_re)) return answer(m[1].str(), body);
    if (method == "GET" && std::regex_match(path, m, report_re)) return report(m[1].str());
    return error_response(404, "no route for " + method + " " + path);
  } catch (const NotFoundError &e) {
    return error_response(404, e.what());
  } catch (const ConflictError &e) {
    return error_response(409, e.what());
  } catch (const ParameterError &e) {
    return error_response(400, e.what());
  } catch (const ShapeError &e) {
    return error_response(400, e.what());
  } catch (const nlohmann::json::exception &e) {
    return error_response(400, e.what());
  } catch (const std::exception &e) {
    return error_response(500, e.what());
  }
}

void serve(ApiService &service, const std::string &host, int port) {
  httplib::Server server;
  auto dispatch = [&service](const httplib::Request &req, httplib::Response &res) {
    Query query;
    for (const auto &[k, v] : req.params) {
      query[k] = v;
    }
    const auto out = service.handle(req.method, req.path, query, req.body);
    res.status = out.status;
    res.set_content(out.body, out.content_type);
  };
  server.Get(".*", dispatch);
  server.Post(".*", dispatch);
  if (!server.listen(host, port)) {
    throw IoError("cannot listen on " + host + ":" + std::to_string(port));
  }
}

} // namespace octgan::service
