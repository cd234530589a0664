#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "octgan/config.hpp"
#include "octgan/image.hpp"
#include "octgan/latent_edit.hpp"
#include "octgan/model.hpp"
#include "octgan/study.hpp"

namespace octgan::service {

struct Response {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;

  nlohmann::json json() const { return nlohmann::json::parse(body); }
};

using Query = std::map<std::string, std::string>;

/// Handlers behind the HTTP API. Model weights are read-only after construction; study
/// sessions carry their own lock and bookmarks share one.
class ApiService {
public:
  /// `real_pool` feeds reader studies; phantoms at the model resolution are used when empty.
  ApiService(GanModel model, ServeConfig config, std::vector<Raster> real_pool = {});

  Response health() const;
  Response model_info() const;
  Response generate(const std::string &body);
  Response directions(const Query &query);
  Response edit(const std::string &body);
  Response bookmarks() const;
  Response add_bookmark(const std::string &body);
  Response create_session(const std::string &body);
  Response session_item(const std::string &id, int64_t k);
  Response answer(const std::string &id, const std::string &body);
  Response report(const std::string &id);

  /// Routes a request to its handler and maps exceptions to status codes.
  Response handle(const std::string &method, const std::string &path, const Query &query,
                  const std::string &body);

private:
  struct Session {
    std::mutex mutex;
    study::StudySession study;
  };

  std::string render_png(uint64_t seed, double psi, const latent::LatentDirection *dir,
                         double alpha);
  const std::vector<latent::LatentDirection> &directions_for(const latent::LayerRange &range);
  std::shared_ptr<Session> find_session(const std::string &id);
  Raster study_image(const std::string &ref);
  void persist_session(const Session &s) const;
  void persist_bookmarks() const;

  GanModel model_;
  ServeConfig config_;
  std::vector<Raster> real_pool_;

  std::mutex render_mutex_;
  std::mutex directions_mutex_;
  std::map<std::pair<int64_t, int64_t>, std::vector<latent::LatentDirection>> directions_;
  mutable std::mutex bookmarks_mutex_;
  nlohmann::json bookmarks_ = nlohmann::json::array();
  std::mutex sessions_mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  int64_t session_counter_ = 0;
};

/// Blocks serving `service` over HTTP until the process stops.
void serve(ApiService &service, const std::string &host, int port);

} // namespace octgan::service
