#include "doctest_torch.hpp"

#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "helpers.hpp"
#include "octgan/checkpoint.hpp"
#include "octgan/config.hpp"
#include "octgan/errors.hpp"
#include "octgan/png_io.hpp"
#include "octgan/service.hpp"

using namespace octgan;
namespace fs = std::filesystem;

namespace {

gan::GeneratorConfig tiny_config() {
  gan::GeneratorConfig c;
  c.latent_dim = 16;
  c.resolution = 16;
  c.mapping_depth = 2;
  c.max_channels = 16;
  c.min_channels = 8;
  return c;
}

GanModel tiny_model(uint64_t seed = 3) {
  torch::manual_seed(seed);
  GanModel m;
  m.config = tiny_config();
  m.generator = gan::Generator(m.config);
  m.generator->eval();
  m.stats = {0.3, 0.2, 1};
  m.w_mean = gan::compute_w_mean(m.generator, 1000, seed);
  return m;
}

fs::path save_tiny_checkpoint(const fs::path &dir) {
  const auto m = tiny_model();
  const auto path = dir / "tiny.ckpt";
  checkpoint::save_checkpoint(path, make_gan_checkpoint(m.config, m.generator, m.stats, m.w_mean, 0,
                                                        nlohmann::json::object()));
  return path;
}

struct CliRun {
  int code = 0;
  std::string out;
  std::string err;
};

CliRun run(std::vector<std::string> args) {
  args.insert(args.begin(), "octgan");
  std::ostringstream out, err;
  CliRun r;
  r.code = cli::run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const fs::path &p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

} // namespace

TEST_SUITE("config") {

TEST_CASE("round trip keeps every section") {
  AppConfig c;
  c.phantom.n = 12;
  c.train.iterations = 7;
  c.sr.blocks = 2;
  c.augment.epochs = 3;
  c.study_n_each = 4;
  c.serve.port = 9001;
  c.seed = 42;
  const auto back = AppConfig::from_json(c.to_json());
  CHECK(back.phantom.n == 12);
  CHECK(back.train.iterations == 7);
  CHECK(back.sr.blocks == 2);
  CHECK(back.augment.epochs == 3);
  CHECK(back.study_n_each == 4);
  CHECK(back.serve.port == 9001);
  REQUIRE(back.seed.has_value());
  CHECK(*back.seed == 42);
  CHECK(back.to_json() == c.to_json());
}

TEST_CASE("unknown keys and bad types are config errors") {
  CHECK_THROWS_AS(AppConfig::from_json({{"bogus", 1}}), ConfigError);
  CHECK_THROWS_AS(AppConfig::from_json({{"train", {{"iterashuns", 1}}}}), ConfigError);
  CHECK_THROWS_AS(AppConfig::from_json({{"serve", {{"port", "eighty"}}}}), ConfigError);
  testutil::TempDir tmp("cfg");
  std::ofstream(tmp.path() / "broken.json") << "{ not json";
  CHECK_THROWS_AS(load_config(tmp.path() / "broken.json"), ConfigError);
}

} // TEST_SUITE

TEST_SUITE("service") {

TEST_CASE("health and model info") {
  service::ApiService api(tiny_model(), ServeConfig{});
  const auto h = api.handle("GET", "/api/health", {}, "");
  CHECK(h.status == 200);
  CHECK(h.json() == nlohmann::json{{"status", "ok"}});
  const auto m = api.handle("GET", "/api/model", {}, "").json();
  CHECK(m["resolution"] == 16);
  CHECK(m["num_ws"] == tiny_config().num_ws());
  CHECK(api.handle("GET", "/api/nowhere", {}, "").status == 404);
}

TEST_CASE("generate is deterministic per seed") {
  service::ApiService api(tiny_model(), ServeConfig{});
  const auto a = api.handle("POST", "/api/generate", {}, R"({"seed": 7})").json();
  const auto b = api.handle("POST", "/api/generate", {}, R"({"seed": 7})").json();
  const auto c = api.handle("POST", "/api/generate", {}, R"({"seed": 8})").json();
  CHECK(a == b);
  CHECK(a["image_png_base64"] != c["image_png_base64"]);
  CHECK(api.handle("POST", "/api/generate", {}, "{oops").status == 400);
}

TEST_CASE("edit with zero alpha returns identical images") {
  service::ApiService api(tiny_model(), ServeConfig{});
  const auto dirs = api.handle("GET", "/api/directions", {{"lo", "0"}, {"hi", "3"}}, "").json();
  REQUIRE(dirs.size() == 16);
  for (size_t i = 1; i < dirs.size(); ++i) {
    CHECK(dirs[i - 1]["eigenvalue"].get<double>() >= dirs[i]["eigenvalue"].get<double>());
  }
  const auto zero = api.handle("POST", "/api/edit", {}, R"({"seed": 5, "rank": 0, "alpha": 0})").json();
  CHECK(zero["original_png"] == zero["edited_png"]);
  const auto moved = api.handle("POST", "/api/edit", {}, R"({"seed": 5, "rank": 0, "alpha": 4})").json();
  CHECK(moved["original_png"] == zero["original_png"]);
  CHECK(moved["edited_png"] != zero["edited_png"]);
  CHECK(api.handle("GET", "/api/directions", {{"lo", "2"}, {"hi", "1"}}, "").status == 400);
  CHECK(api.handle("GET", "/api/directions", {{"lo", "x"}}, "").status == 400);
}

TEST_CASE("bookmarks persist across restarts") {
  testutil::TempDir tmp("bookmarks");
  ServeConfig sc;
  sc.bookmarks = tmp.path() / "bookmarks.json";
  {
    service::ApiService api(tiny_model(), sc);
    CHECK(api.handle("POST", "/api/bookmarks", {}, R"({"rank": 1, "label": "thickness"})").status == 201);
    CHECK(api.handle("POST", "/api/bookmarks", {}, R"({"rank": 1})").status == 400);
  }
  service::ApiService again(tiny_model(), sc);
  const auto list = again.handle("GET", "/api/bookmarks", {}, "").json();
  REQUIRE(list.size() == 1);
  CHECK(list[0]["label"] == "thickness");
  CHECK(list[0]["rank"] == 1);
}

TEST_CASE("study session lifecycle") {
  testutil::TempDir tmp("session");
  ServeConfig sc;
  sc.study_dir = tmp.path();
  service::ApiService api(tiny_model(), sc);
  const auto created = api.handle("POST", "/api/study/session", {}, R"({"n_each": 2, "seed": 1})");
  REQUIRE(created.status == 201);
  const auto id = created.json()["id"].get<std::string>();
  CHECK(created.json()["n_items"] == 4);

  const auto item = api.handle("GET", "/api/study/" + id + "/item/0", {}, "");
  CHECK(item.status == 200);
  CHECK(item.content_type == "image/png");
  CHECK(io::decode_image(std::vector<uint8_t>(item.body.begin(), item.body.end())).rows() == 16);
  CHECK(api.handle("GET", "/api/study/" + id + "/item/4", {}, "").status == 404);
  CHECK(api.handle("GET", "/api/study/nope/item/0", {}, "").status == 404);
  CHECK(api.handle("GET", "/api/study/nope/report", {}, "").status == 404);

  CHECK(api.handle("GET", "/api/study/" + id + "/report", {}, "").status == 409);
  const auto blinded = nlohmann::json::parse(slurp(tmp.path() / id / "session.json"));
  CHECK_FALSE(blinded.contains("truth"));
  CHECK_FALSE(blinded.dump().find("real:") != std::string::npos);

  for (int k = 0; k < 4; ++k) {
    const auto r = api.handle("POST", "/api/study/" + id + "/answer", {},
                              nlohmann::json{{"k", k}, {"verdict", "real"}}.dump());
    CHECK(r.status == 200);
  }
  CHECK(api.handle("POST", "/api/study/" + id + "/answer", {}, R"({"k": 0, "verdict": "maybe"})").status == 400);
  const auto report = api.handle("GET", "/api/study/" + id + "/report", {}, "");
  REQUIRE(report.status == 200);
  const auto rater = report.json()["raters"][0];
  CHECK(rater["n"] == 4);
  CHECK(rater["correct"] == 2);

  // A restarted service picks the session back up from disk.
  service::ApiService again(tiny_model(), sc);
  CHECK(again.handle("GET", "/api/study/" + id + "/report", {}, "").status == 200);
}

} // TEST_SUITE

TEST_SUITE("cli") {

TEST_CASE("metric formatting") {
  CHECK(cli::format_metric(0.0) == "0.0");
  CHECK(cli::format_metric(-0.0) == "0.0");
  CHECK(cli::format_metric(12.5) == "12.5");
  CHECK(cli::format_metric(3.0) == "3.0");
  CHECK(cli::format_metric(0.1234567) == "0.123457");
}

TEST_CASE("usage errors exit with 2") {
  CHECK(run({}).code == 2);
  CHECK(run({"fid", "--set-a", "x"}).code == 2);
  const auto r = run({"generate", "--checkpoint", "a", "--out", "b", "--frobnicate"});
  CHECK(r.code == 2);
  CHECK(r.err.find("frobnicate") != std::string::npos);
  CHECK(run({"--help"}).code == 0);
}

TEST_CASE("runtime failures exit with 1") {
  const auto r = run({"generate", "--checkpoint", "/nonexistent.ckpt", "--out", "/tmp/x.png"});
  CHECK(r.code == 1);
  CHECK(r.err.rfind("error:", 0) == 0);
}

TEST_CASE("phantom gen then fid of a set with itself is zero") {
  testutil::TempDir tmp("cli_fid");
  const auto d1 = (tmp.path() / "d1").string();
  const auto g = run({"phantom", "gen", "--out", d1, "--n", "12", "--size", "32", "--seed", "4"});
  REQUIRE(g.code == 0);
  CHECK(fs::exists(fs::path(d1) / "labels.jsonl"));
  CHECK(fs::exists(fs::path(d1) / "images" / "000011.png"));
  const auto f = run({"fid", "--set-a", d1, "--set-b", d1});
  REQUIRE(f.code == 0);
  CHECK(f.out == "0.0\n");
}

TEST_CASE("seed resolution prefers the flag over the config") {
  testutil::TempDir tmp("cli_seed");
  std::ofstream(tmp.path() / "c.json") << R"({"seed": 11, "phantom": {"n": 2, "size": 32}})";
  const auto cfg = (tmp.path() / "c.json").string();
  REQUIRE(run({"phantom", "gen", "--config", cfg, "--out", (tmp.path() / "a").string()}).code == 0);
  REQUIRE(run({"phantom", "gen", "--config", cfg, "--out", (tmp.path() / "b").string(), "--seed", "11"}).code == 0);
  REQUIRE(run({"phantom", "gen", "--config", cfg, "--out", (tmp.path() / "c").string(), "--seed", "12"}).code == 0);
  const auto first = [&](const char *d) { return slurp(tmp.path() / d / "images" / "000000.png"); };
  CHECK(first("a") == first("b"));
  CHECK(first("a") != first("c"));
}

TEST_CASE("generate twice with one seed writes identical bytes") {
  testutil::TempDir tmp("cli_gen");
  const auto ckpt = save_tiny_checkpoint(tmp.path()).string();
  const auto a = (tmp.path() / "a.png").string();
  const auto b = (tmp.path() / "b.png").string();
  REQUIRE(run({"generate", "--checkpoint", ckpt, "--seed", "7", "--out", a}).code == 0);
  REQUIRE(run({"generate", "--checkpoint", ckpt, "--seed", "7", "--out", b}).code == 0);
  CHECK(slurp(a) == slurp(b));
  const auto dir = tmp.path() / "many";
  REQUIRE(run({"generate", "--checkpoint", ckpt, "--seed", "7", "--count", "3", "--out", dir.string()}).code == 0);
  CHECK(slurp(dir / "seed_00000007.png") == slurp(a));
  CHECK(fs::exists(dir / "seed_00000009.png"));
}

TEST_CASE("sefa and edit-grid") {
  testutil::TempDir tmp("cli_sefa");
  const auto ckpt = save_tiny_checkpoint(tmp.path()).string();
  const auto dirs = tmp.path() / "dirs.json";
  REQUIRE(run({"sefa", "--checkpoint", ckpt, "--out", dirs.string()}).code == 0);
  const auto j = nlohmann::json::parse(slurp(dirs));
  CHECK(j.size() == 16);
  const auto strip = tmp.path() / "strip.png";
  REQUIRE(run({"edit-grid", "--checkpoint", ckpt, "--seed", "2", "--alphas", "-2,0,2", "--out", strip.string()}).code == 0);
  const auto img = io::read_image(strip);
  CHECK(img.rows() == 16);
  CHECK(img.cols() == 48);
  CHECK(run({"edit-grid", "--checkpoint", ckpt, "--rank", "99", "--out", strip.string()}).code == 1);
}

TEST_CASE("study build and score") {
  testutil::TempDir tmp("cli_study");
  const auto real = (tmp.path() / "real").string();
  const auto fake = (tmp.path() / "fake").string();
  REQUIRE(run({"phantom", "gen", "--out", real, "--n", "3", "--size", "32", "--seed", "1"}).code == 0);
  REQUIRE(run({"phantom", "gen", "--out", fake, "--n", "3", "--size", "32", "--seed", "2"}).code == 0);
  const auto sess = tmp.path() / "session";
  REQUIRE(run({"study", "build", "--real", real, "--fake", fake, "--n-each", "2", "--out", sess.string()}).code == 0);
  CHECK(fs::exists(sess / "items" / "item_003.png"));
  CHECK_FALSE(fs::exists(sess / "items" / "item_004.png"));

  const auto key = nlohmann::json::parse(slurp(sess / "key.json"));
  nlohmann::json answers = key["truth"];
  std::ofstream(tmp.path() / "alice.json") << nlohmann::json{{"rater", "alice"}, {"answers", answers}}.dump();
  std::ofstream(tmp.path() / "bob.json") << nlohmann::json{{"answers", {"real"}}}.dump();
  const auto r = run({"study", "score", "--session", sess.string(), "--responses",
                      (tmp.path() / "alice.json").string(), (tmp.path() / "bob.json").string()});
  REQUIRE(r.code == 0);
  CHECK(r.err.find("bob") != std::string::npos);
  const auto report = nlohmann::json::parse(r.out);
  REQUIRE(report["raters"].size() == 1);
  CHECK(report["raters"][0]["accuracy"] == 1.0);
}

} // TEST_SUITE
