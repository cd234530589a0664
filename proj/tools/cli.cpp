#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>

#include <CLI11.hpp>
#include <torch/torch.h>

#include "octgan/config.hpp"
#include "octgan/errors.hpp"
#include "octgan/latent_edit.hpp"
#include "octgan/metrics.hpp"
#include "octgan/model.hpp"
#include "octgan/phantom.hpp"
#include "octgan/png_io.hpp"
#include "octgan/rng.hpp"
#include "octgan/service.hpp"
#include "octgan/study.hpp"
#include "octgan/superres.hpp"
#include "octgan/train.hpp"

namespace fs = std::filesystem;

namespace octgan::cli {

std::string format_metric(double v) {
  if (!std::isfinite(v)) {
    return std::to_string(v);
  }
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  std::string s = buf;
  while (s.size() > 1 && s.back() == '0' && s[s.size() - 2] != '.') {
    s.pop_back();
  }
  return s == "-0.0" ? "0.0" : s;
}

namespace {

struct Common {
  std::string config;
  std::optional<uint64_t> seed;
};

void add_common(CLI::App *cmd, Common &c) {
  cmd->add_option("--config", c.config, "JSON config with per-module sections");
  cmd->add_option("--seed", c.seed, "Random seed");
}

AppConfig resolve_config(const Common &c) {
  return c.config.empty() ? AppConfig{} : load_config(c.config);
}

uint64_t resolve_seed(const Common &c, const AppConfig &cfg, uint64_t fallback = 0) {
  if (c.seed) return *c.seed;
  if (cfg.seed) return *cfg.seed;
  return fallback;
}

std::vector<Raster> load_rasters(const fs::path &dir) { return phantom::load_dataset(dir).rasters(); }

std::vector<fs::path> png_files(const fs::path &dir) {
  if (!fs::is_directory(dir)) {
    throw IoError("not a directory: " + dir.string());
  }
  std::vector<fs::path> files;
  for (const auto &e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".png") {
      files.push_back(e.path());
    }
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) {
    throw IoError("no PNG images in " + dir.string());
  }
  return files;
}

void write_json_file(const fs::path &path, const nlohmann::json &j) {
  if (path.has_parent_path()) {
    fs::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw IoError("cannot write " + path.string());
  }
  out << j.dump(2) << '\n';
}

nlohmann::json read_json_file(const fs::path &path) {
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

std::pair<std::vector<Raster>, std::vector<Raster>> split(std::vector<Raster> images,
                                                          double val_fraction, uint64_t seed) {
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
    throw ParameterError("validation fraction must lie in (0, 1)");
  }
  std::mt19937_64 rng(derive_seed(seed, 0x5711));
  std::shuffle(images.begin(), images.end(), rng);
  const auto n_val = std::max<size_t>(1, static_cast<size_t>(std::lround(val_fraction * static_cast<double>(images.size()))));
  if (n_val >= images.size()) {
    throw ParameterError("dataset too small to hold out a validation split");
  }
  std::vector<Raster> val(images.end() - static_cast<long>(n_val), images.end());
  images.resize(images.size() - n_val);
  return {std::move(images), std::move(val)};
}

} // namespace

int run_cli(const std::vector<std::string> &args, std::ostream &out, std::ostream &err) {
  CLI::App app{"Wavelet style GAN toolkit for anterior-segment OCT B-scans", "octgan"};
  app.require_subcommand(1);
  app.fallthrough(false);

  // phantom gen
  Common phantom_c;
  std::string phantom_out;
  std::optional<int64_t> phantom_n, phantom_size;
  auto *phantom_cmd = app.add_subcommand("phantom", "Synthetic phantom datasets");
  phantom_cmd->require_subcommand(1);
  auto *phantom_gen = phantom_cmd->add_subcommand("gen", "Render a labeled phantom dataset");
  add_common(phantom_gen, phantom_c);
  phantom_gen->add_option("--out", phantom_out, "Output directory")->required();
  phantom_gen->add_option("--n", phantom_n, "Number of images");
  phantom_gen->add_option("--size", phantom_size, "Square canvas size in pixels");

  // ingest
  Common ingest_c;
  std::string ingest_in, ingest_out;
  std::optional<int64_t> ingest_size;
  auto *ingest_cmd = app.add_subcommand("ingest", "Normalize a folder of scans into a dataset");
  add_common(ingest_cmd, ingest_c);
  ingest_cmd->add_option("--in", ingest_in, "Source folder")->required();
  ingest_cmd->add_option("--out", ingest_out, "Dataset directory")->required();
  ingest_cmd->add_option("--size", ingest_size, "Target square size");

  // train
  Common train_c;
  std::string train_data, train_out;
  std::optional<int64_t> train_iters, train_every;
  auto *train_cmd = app.add_subcommand("train", "Train the wavelet GAN");
  add_common(train_cmd, train_c);
  train_cmd->add_option("--data", train_data, "Dataset directory")->required();
  train_cmd->add_option("--out", train_out, "Run directory")->required();
  train_cmd->add_option("--iterations", train_iters, "Training iterations");
  train_cmd->add_option("--checkpoint-every", train_every, "Checkpoint interval");

  // select-best
  Common best_c;
  std::string best_run, best_data;
  std::optional<int64_t> best_samples;
  auto *best_cmd = app.add_subcommand("select-best", "Re-score checkpoints and pick the lowest FID");
  add_common(best_cmd, best_c);
  best_cmd->add_option("--run", best_run, "Run or checkpoints directory")->required();
  best_cmd->add_option("--data", best_data, "Reference dataset directory")->required();
  best_cmd->add_option("--samples", best_samples, "Generated samples per checkpoint");

  // fid
  Common fid_c;
  std::string fid_a, fid_b;
  auto *fid_cmd = app.add_subcommand("fid", "Frechet distance between two image folders");
  add_common(fid_cmd, fid_c);
  fid_cmd->add_option("--set-a", fid_a, "First image folder")->required();
  fid_cmd->add_option("--set-b", fid_b, "Second image folder")->required();

  // generate
  Common gen_c;
  std::string gen_ckpt, gen_out;
  std::optional<int64_t> gen_count;
  std::optional<double> gen_psi;
  auto *gen_cmd = app.add_subcommand("generate", "Synthesize images from a checkpoint");
  add_common(gen_cmd, gen_c);
  gen_cmd->add_option("--checkpoint", gen_ckpt, "GAN checkpoint")->required();
  gen_cmd->add_option("--out", gen_out, "PNG file, or directory when --count > 1")->required();
  gen_cmd->add_option("--count", gen_count, "Number of consecutive seeds");
  gen_cmd->add_option("--psi", gen_psi, "Truncation");

  // sefa
  Common sefa_c;
  std::string sefa_ckpt, sefa_out;
  std::optional<int64_t> sefa_lo, sefa_hi;
  auto *sefa_cmd = app.add_subcommand("sefa", "Closed-form latent directions");
  add_common(sefa_cmd, sefa_c);
  sefa_cmd->add_option("--checkpoint", sefa_ckpt, "GAN checkpoint")->required();
  sefa_cmd->add_option("--out", sefa_out, "Directions JSON")->required();
  sefa_cmd->add_option("--lo", sefa_lo, "First style input");
  sefa_cmd->add_option("--hi", sefa_hi, "One past the last style input");

  // edit-grid
  Common grid_c;
  std::string grid_ckpt, grid_out;
  int64_t grid_rank = 0;
  std::vector<double> grid_alphas{-3.0, 0.0, 3.0};
  std::optional<int64_t> grid_lo, grid_hi;
  std::optional<double> grid_psi;
  auto *grid_cmd = app.add_subcommand("edit-grid", "Render a strip along one direction");
  add_common(grid_cmd, grid_c);
  grid_cmd->add_option("--checkpoint", grid_ckpt, "GAN checkpoint")->required();
  grid_cmd->add_option("--out", grid_out, "Strip PNG")->required();
  grid_cmd->add_option("--rank", grid_rank, "Direction rank");
  grid_cmd->add_option("--alphas", grid_alphas, "Edit strengths, ascending")->delimiter(',');
  grid_cmd->add_option("--lo", grid_lo, "First style input");
  grid_cmd->add_option("--hi", grid_hi, "One past the last style input");
  grid_cmd->add_option("--psi", grid_psi, "Truncation");

  // sr-train
  Common srt_c;
  std::string srt_data, srt_out;
  double srt_val = 0.1;
  std::optional<int64_t> srt_iters;
  auto *srt_cmd = app.add_subcommand("sr-train", "Train the 2x super-resolution network");
  add_common(srt_cmd, srt_c);
  srt_cmd->add_option("--data", srt_data, "Dataset directory")->required();
  srt_cmd->add_option("--out", srt_out, "Run directory")->required();
  srt_cmd->add_option("--val-fraction", srt_val, "Held-out fraction");
  srt_cmd->add_option("--iterations", srt_iters, "Training iterations");

  // sr-upscale
  Common sru_c;
  std::string sru_ckpt, sru_in, sru_out;
  auto *sru_cmd = app.add_subcommand("sr-upscale", "Upscale one image 2x");
  add_common(sru_cmd, sru_c);
  sru_cmd->add_option("--checkpoint", sru_ckpt, "SR checkpoint")->required();
  sru_cmd->add_option("--in", sru_in, "Input image")->required();
  sru_cmd->add_option("--out", sru_out, "Output PNG")->required();

  // sr-compare
  Common src_c;
  std::string src_ckpt, src_data, src_out;
  auto *src_cmd = app.add_subcommand("sr-compare", "Score SR against classical upsamplers");
  add_common(src_cmd, src_c);
  src_cmd->add_option("--checkpoint", src_ckpt, "SR checkpoint")->required();
  src_cmd->add_option("--data", src_data, "Validation image folder")->required();
  src_cmd->add_option("--out", src_out, "CSV output");

  // study build | score
  auto *study_cmd = app.add_subcommand("study", "Blinded reader studies");
  study_cmd->require_subcommand(1);
  Common sb_c;
  std::string sb_real, sb_fake, sb_out;
  std::optional<int64_t> sb_n;
  auto *sb_cmd = study_cmd->add_subcommand("build", "Build a blinded session");
  add_common(sb_cmd, sb_c);
  sb_cmd->add_option("--real", sb_real, "Real image folder")->required();
  sb_cmd->add_option("--fake", sb_fake, "Generated image folder")->required();
  sb_cmd->add_option("--out", sb_out, "Session directory")->required();
  sb_cmd->add_option("--n-each", sb_n, "Images drawn from each pool");
  Common ss_c;
  std::string ss_session, ss_out;
  std::vector<std::string> ss_responses;
  auto *ss_cmd = study_cmd->add_subcommand("score", "Score completed responses");
  add_common(ss_cmd, ss_c);
  ss_cmd->add_option("--session", ss_session, "Session directory")->required();
  ss_cmd->add_option("--responses", ss_responses, "Rater response files");
  ss_cmd->add_option("--out", ss_out, "Report JSON");

  // augment-exp
  Common aug_c;
  std::string aug_out;
  int64_t aug_train = 150, aug_test = 100, aug_size = 32;
  auto *aug_cmd = app.add_subcommand("augment-exp", "Classifier augmentation experiment");
  add_common(aug_cmd, aug_c);
  aug_cmd->add_option("--n-train", aug_train, "Training images per class");
  aug_cmd->add_option("--n-test", aug_test, "Test images per class");
  aug_cmd->add_option("--size", aug_size, "Image size");
  aug_cmd->add_option("--out", aug_out, "Result JSON");

  // serve
  Common serve_c;
  std::optional<std::string> serve_ckpt, serve_host, serve_bookmarks, serve_study, serve_real;
  std::optional<int> serve_port;
  auto *serve_cmd = app.add_subcommand("serve", "HTTP API for the explorer");
  add_common(serve_cmd, serve_c);
  serve_cmd->add_option("--checkpoint", serve_ckpt, "GAN checkpoint");
  serve_cmd->add_option("--host", serve_host, "Bind address");
  serve_cmd->add_option("--port", serve_port, "Port");
  serve_cmd->add_option("--bookmarks", serve_bookmarks, "Bookmark file");
  serve_cmd->add_option("--study-dir", serve_study, "Session directory");
  serve_cmd->add_option("--real-dir", serve_real, "Real images for studies");

  std::vector<const char *> argv;
  for (const auto &a : args) {
    argv.push_back(a.c_str());
  }
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp &e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp &e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError &e) {
    app.exit(e, out, err);
    err << app.help();
    return 2;
  }

  torch::set_num_threads(1);
  try {
    if (phantom_gen->parsed()) {
      auto cfg = resolve_config(phantom_c);
      auto spec = cfg.phantom;
      if (phantom_n) spec.n = *phantom_n;
      if (phantom_size) spec.size = *phantom_size;
      const auto ds = phantom::generate_dataset(spec, resolve_seed(phantom_c, cfg), phantom_out);
      out << "wrote " << ds.size() << " phantoms to " << phantom_out << '\n';
    } else if (ingest_cmd->parsed()) {
      auto cfg = resolve_config(ingest_c);
      const auto ds = phantom::ingest_folder(ingest_in, ingest_size.value_or(cfg.phantom.size));
      fs::create_directories(fs::path(ingest_out) / "images");
      for (size_t i = 0; i < ds.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "images/%06zu.png", i);
        io::write_png(fs::path(ingest_out) / name, ds.images[i].pixels);
      }
      write_json_file(fs::path(ingest_out) / "stats.json", phantom::compute_stats(ds.images).to_json());
      for (const auto &w : ds.warnings) {
        err << "warning: " << w << '\n';
      }
      out << "ingested " << ds.size() << " images into " << ingest_out << '\n';
    } else if (train_cmd->parsed()) {
      auto cfg = resolve_config(train_c);
      auto tc = cfg.train;
      tc.seed = resolve_seed(train_c, cfg, tc.seed);
      if (train_iters) tc.iterations = *train_iters;
      if (train_every) tc.checkpoint_every = *train_every;
      const auto data = load_rasters(train_data);
      tc.generator.resolution = data.front().rows();
      const auto r = train::train(tc, data, train_out);
      out << "baseline fid " << format_metric(r.baseline_fid) << '\n';
      for (const auto &c : r.checkpoints) {
        out << "iter " << c.iteration << " fid " << format_metric(c.fid) << ' ' << c.path.string() << '\n';
      }
      if (!r.checkpoints.empty()) {
        out << "best " << r.checkpoints[r.best].path.string() << '\n';
      }
    } else if (best_cmd->parsed()) {
      auto cfg = resolve_config(best_c);
      fs::path dir = best_run;
      if (fs::is_directory(dir / "checkpoints")) dir /= "checkpoints";
      const auto paths = train::list_checkpoints(dir);
      const auto reference = load_rasters(best_data);
      metrics::FeatureEmbedder embedder(cfg.train.embedder);
      const auto best = train::select_best(paths, reference, embedder,
                                           best_samples.value_or(cfg.train.fid_sample_count),
                                           derive_seed(resolve_seed(best_c, cfg, cfg.train.seed), 0xF1D));
      out << "best " << best.path.string() << " iteration " << best.iteration << " fid "
          << format_metric(best.fid) << '\n';
    } else if (fid_cmd->parsed()) {
      auto cfg = resolve_config(fid_c);
      auto spec = cfg.train.embedder;
      if (fid_c.seed) spec.seed = *fid_c.seed;
      metrics::FeatureEmbedder embedder(spec);
      out << format_metric(metrics::fid(load_rasters(fid_a), load_rasters(fid_b), embedder)) << '\n';
    } else if (gen_cmd->parsed()) {
      auto cfg = resolve_config(gen_c);
      auto model = load_gan_model(fs::path(gen_ckpt));
      const auto seed = resolve_seed(gen_c, cfg);
      const auto count = gen_count.value_or(cfg.generate.count);
      const auto psi = gen_psi.value_or(cfg.generate.psi);
      if (count < 1) throw ParameterError("--count must be >= 1");
      if (count == 1 && fs::path(gen_out).extension() == ".png") {
        io::write_png(gen_out, render_seed(model, seed, psi));
        out << "wrote " << gen_out << '\n';
      } else {
        fs::create_directories(gen_out);
        for (int64_t i = 0; i < count; ++i) {
          char name[40];
          std::snprintf(name, sizeof(name), "seed_%08llu.png", static_cast<unsigned long long>(seed + static_cast<uint64_t>(i)));
          io::write_png(fs::path(gen_out) / name, render_seed(model, seed + static_cast<uint64_t>(i), psi));
        }
        out << "wrote " << count << " images to " << gen_out << '\n';
      }
    } else if (sefa_cmd->parsed()) {
      auto model = load_gan_model(fs::path(sefa_ckpt));
      const latent::LayerRange range{sefa_lo.value_or(0), sefa_hi.value_or(model.config.num_ws())};
      const auto dirs = latent::factorize(model.generator, range);
      nlohmann::json j = nlohmann::json::array();
      for (const auto &d : dirs) j.push_back(d.to_json());
      write_json_file(sefa_out, j);
      for (size_t i = 0; i < std::min<size_t>(5, dirs.size()); ++i) {
        out << "rank " << i << " eigenvalue " << format_metric(dirs[i].eigenvalue) << '\n';
      }
    } else if (grid_cmd->parsed()) {
      auto cfg = resolve_config(grid_c);
      auto model = load_gan_model(fs::path(grid_ckpt));
      const latent::LayerRange range{grid_lo.value_or(0), grid_hi.value_or(model.config.num_ws())};
      const auto dirs = latent::factorize(model.generator, range);
      if (grid_rank < 0 || grid_rank >= static_cast<int64_t>(dirs.size())) {
        throw ParameterError("--rank is outside [0, " + std::to_string(dirs.size()) + ")");
      }
      const auto grid = latent::edit_grid(model, resolve_seed(grid_c, cfg), dirs[static_cast<size_t>(grid_rank)],
                                          grid_alphas, grid_psi.value_or(cfg.generate.psi));
      io::write_png(grid_out, grid.strip);
      out << "wrote " << grid.frames.size() << "-frame strip to " << grid_out << '\n';
    } else if (srt_cmd->parsed()) {
      auto cfg = resolve_config(srt_c);
      auto sc = cfg.sr;
      sc.seed = resolve_seed(srt_c, cfg, sc.seed);
      if (srt_iters) sc.iterations = *srt_iters;
      auto [train_set, val_set] = split(load_rasters(srt_data), srt_val, sc.seed);
      const auto r = sr::train_sr(train_set, val_set, sc, srt_out);
      out << "bilinear val_perceptual " << format_metric(r.bilinear_val_perceptual) << '\n';
      for (const auto &c : r.checkpoints) {
        out << "iter " << c.iteration << " val_perceptual " << format_metric(c.val_perceptual) << ' ' << c.path.string() << '\n';
      }
      out << "best " << r.checkpoints[r.best].path.string() << '\n';
    } else if (sru_cmd->parsed()) {
      const auto model = sr::load_sr_model(fs::path(sru_ckpt));
      const auto image = io::read_image(sru_in);
      io::write_png(sru_out, sr::sr_upscale(model, image));
      out << "wrote " << sru_out << '\n';
    } else if (src_cmd->parsed()) {
      const auto model = sr::load_sr_model(fs::path(src_ckpt));
      const auto rows = sr::compare_upsamplers(load_rasters(src_data), model);
      if (!src_out.empty()) sr::write_comparison_csv(src_out, rows);
      out << sr::kComparisonHeader << '\n';
      for (const auto &r : rows) {
        out << r.method << ',' << format_metric(r.mean_perceptual) << ',' << format_metric(r.std) << '\n';
      }
    } else if (sb_cmd->parsed()) {
      auto cfg = resolve_config(sb_c);
      std::vector<std::string> real, fake;
      for (const auto &p : png_files(sb_real)) real.push_back(p.string());
      for (const auto &p : png_files(sb_fake)) fake.push_back(p.string());
      const auto session = study::build_study(real, fake, sb_n.value_or(cfg.study_n_each), resolve_seed(sb_c, cfg));
      fs::create_directories(fs::path(sb_out) / "items");
      for (int64_t k = 0; k < session.size(); ++k) {
        // Re-encoding drops any metadata that could identify the source.
        io::write_png(fs::path(sb_out) / "items" / study::StudySession::item_name(k),
                      io::read_image(session.sources[static_cast<size_t>(k)]));
      }
      study::save_session(session, sb_out);
      out << "session " << session.id << " with " << session.size() << " items in " << sb_out << '\n';
    } else if (ss_cmd->parsed()) {
      auto session = study::load_session(ss_session);
      for (const auto &file : ss_responses) {
        const auto j = read_json_file(file);
        const auto rater = j.value("rater", fs::path(file).stem().string());
        study::Responses r;
        const auto &answers = j.at("answers");
        if (answers.is_array()) {
          for (size_t k = 0; k < answers.size(); ++k) {
            r[static_cast<int64_t>(k)] = study::truth_from_string(answers[k].get<std::string>());
          }
        } else {
          for (const auto &[k, v] : answers.items()) {
            r[std::stoll(k)] = study::truth_from_string(v.get<std::string>());
          }
        }
        session.responses[rater] = std::move(r);
      }
      bool any = false;
      for (const auto &[rater, answers] : session.responses) {
        if (!session.complete(rater)) {
          err << "warning: rater '" << rater << "' answered " << answers.size() << " of " << session.size() << " items; not scored\n";
        }
        any = any || session.complete(rater);
      }
      if (!any) throw ConflictError("no rater has completed the session");
      const auto report = study::session_report(session);
      if (!ss_out.empty()) write_json_file(ss_out, report);
      out << report.dump(2) << '\n';
    } else if (aug_cmd->parsed()) {
      auto cfg = resolve_config(aug_c);
      auto ac = cfg.augment;
      ac.seed = resolve_seed(aug_c, cfg, ac.seed);
      const auto real_train = study::icl_phantom_set(aug_train, aug_size, derive_seed(ac.seed, 0xA1), false);
      const auto synth_train = study::icl_phantom_set(aug_train, aug_size, derive_seed(ac.seed, 0xA2), true);
      const auto real_test = study::icl_phantom_set(aug_test, aug_size, derive_seed(ac.seed, 0xA3), false);
      const auto r = study::augmentation_experiment(real_train, synth_train, real_test, ac);
      auto j = r.to_json();
      j["seed"] = ac.seed;
      if (!aug_out.empty()) write_json_file(aug_out, j);
      out << j.dump() << '\n';
    } else if (serve_cmd->parsed()) {
      auto cfg = resolve_config(serve_c);
      auto sc = cfg.serve;
      if (serve_ckpt) sc.checkpoint = *serve_ckpt;
      if (serve_host) sc.host = *serve_host;
      if (serve_port) sc.port = *serve_port;
      if (serve_bookmarks) sc.bookmarks = *serve_bookmarks;
      if (serve_study) sc.study_dir = *serve_study;
      if (serve_real) sc.real_dir = *serve_real;
      if (sc.checkpoint.empty()) throw ConfigError("serve needs --checkpoint or serve.checkpoint");
      std::vector<Raster> real;
      if (!sc.real_dir.empty()) real = load_rasters(sc.real_dir);
      service::ApiService api(load_gan_model(sc.checkpoint), sc, std::move(real));
      out << "serving on http://" << sc.host << ':' << sc.port << '\n' << std::flush;
      service::serve(api, sc.host, sc.port);
    }
  } catch (const std::exception &e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

} // namespace octgan::cli
