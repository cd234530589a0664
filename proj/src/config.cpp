#include "octgan/config.hpp"

#include <fstream>

#include "octgan/errors.hpp"

namespace octgan {

namespace {

void require_object(const nlohmann::json &j, const std::string &section) {
  if (!j.is_object()) {
    throw ConfigError("config section '" + section + "' must be an object");
  }
}

} // namespace

nlohmann::json dataset_spec_to_json(const phantom::DatasetSpec &spec) {
  return {{"n", spec.n},
          {"size", spec.size},
          {"class_mix", spec.class_mix},
          {"width_class", to_string(spec.width_class)},
          {"jitter", spec.jitter}};
}

phantom::DatasetSpec dataset_spec_from_json(const nlohmann::json &j) {
  require_object(j, "phantom");
  phantom::DatasetSpec spec;
  for (const auto &[key, value] : j.items()) {
    if (key == "n") {
      spec.n = value.get<int64_t>();
    } else if (key == "size") {
      spec.size = value.get<int64_t>();
    } else if (key == "class_mix") {
      spec.class_mix = value.get<phantom::ClassMix>();
    } else if (key == "width_class") {
      spec.width_class = width_class_from_string(value.get<std::string>());
    } else if (key == "jitter") {
      spec.jitter = value.get<bool>();
    } else {
      throw ConfigError("unknown phantom config key: " + key);
    }
  }
  return spec;
}

nlohmann::json AppConfig::to_json() const {
  nlohmann::json j = {
      {"phantom", dataset_spec_to_json(phantom)},
      {"train", train.to_json()},
      {"sr", sr.to_json()},
      {"augment", augment.to_json()},
      {"study", {{"n_each", study_n_each}}},
      {"generate", {{"psi", generate.psi}, {"count", generate.count}}},
      {"serve",
       {{"host", serve.host},
        {"port", serve.port},
        {"checkpoint", serve.checkpoint.string()},
        {"bookmarks", serve.bookmarks.string()},
        {"study_dir", serve.study_dir.string()},
        {"real_dir", serve.real_dir.string()},
        {"psi", serve.psi}}}};
  if (seed) {
    j["seed"] = *seed;
  }
  return j;
}

AppConfig AppConfig::from_json(const nlohmann::json &j) {
  require_object(j, "root");
  AppConfig c;
  try {
    for (const auto &[key, value] : j.items()) {
      if (key == "phantom") {
        c.phantom = dataset_spec_from_json(value);
      } else if (key == "train") {
        c.train = train::TrainConfig::from_json(value);
      } else if (key == "sr") {
        c.sr = sr::SRConfig::from_json(value);
      } else if (key == "augment") {
        c.augment = study::AugmentConfig::from_json(value);
      } else if (key == "seed") {
        c.seed = value.get<uint64_t>();
      } else if (key == "study") {
        require_object(value, key);
        for (const auto &[k, v] : value.items()) {
          if (k != "n_each") {
            throw ConfigError("unknown study config key: " + k);
          }
          c.study_n_each = v.get<int64_t>();
        }
      } else if (key == "generate") {
        require_object(value, key);
        for (const auto &[k, v] : value.items()) {
          if (k == "psi") {
            c.generate.psi = v.get<double>();
          } else if (k == "count") {
            c.generate.count = v.get<int64_t>();
          } else {
            throw ConfigError("unknown generate config key: " + k);
          }
        }
      } else if (key == "serve") {
        require_object(value, key);
        for (const auto &[k, v] : value.items()) {
          if (k == "host") {
            c.serve.host = v.get<std::string>();
          } else if (k == "port") {
            c.serve.port = v.get<int>();
          } else if (k == "checkpoint") {
            c.serve.checkpoint = v.get<std::string>();
          } else if (k == "bookmarks") {
            c.serve.bookmarks = v.get<std::string>();
          } else if (k == "study_dir") {
            c.serve.study_dir = v.get<std::string>();
          } else if (k == "real_dir") {
            c.serve.real_dir = v.get<std::string>();
          } else if (k == "psi") {
            c.serve.psi = v.get<double>();
          } else {
            throw ConfigError("unknown serve config key: " + k);
          }
        }
      } else {
        throw ConfigError("unknown config section: " + key);
      }
    }
  } catch (const nlohmann::json::exception &e) {
    throw ConfigError(std::string("malformed config value: ") + e.what());
  }
  return c;
}

AppConfig load_config(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot read config " + path.string());
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception &e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return AppConfig::from_json(j);
}

} // namespace octgan
