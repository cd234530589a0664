#include "octgan/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include "octgan/errors.hpp"
#include "octgan/png_io.hpp"
#include "octgan/resample.hpp"
#include "octgan/rng.hpp"

namespace fs = std::filesystem;

namespace octgan::phantom {

namespace {

constexpr double kBackground = 0.05;
constexpr double kStroma = 0.32;
constexpr double kAnteriorPeak = 0.55;
constexpr double kPosteriorPeak = 0.35;
constexpr double kIclPeak = 0.6;

// Compact-support bump: smooth, exactly zero beyond `radius` standard deviations.
double bump(double d, double sigma, double radius = 3.0) {
  const double u = d / sigma;
  if (std::abs(u) >= radius) {
    return 0.0;
  }
  const double taper = 1.0 - (u * u) / (radius * radius);
  return std::exp(-0.5 * u * u) * taper * taper;
}

double smoothstep(double e0, double e1, double x) {
  const double t = std::clamp((x - e0) / (e1 - e0), 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

double sag(double radius, double dx) {
  return radius - std::sqrt(radius * radius - dx * dx);
}

struct IclGeometry {
  double apex;
  double radius;
  double half_width;
};

IclGeometry icl_geometry(const PhantomParams &p) {
  const double s = static_cast<double>(p.size);
  return {p.apex_row + p.corneal_thickness + 0.22 * s, 0.75 * s, 0.3 * s};
}

} // namespace

PhantomParams PhantomParams::for_size(int64_t size) {
  PhantomParams p;
  const double s = static_cast<double>(size);
  p.size = size;
  p.anterior_radius = 1.0 * s;
  p.posterior_radius = 0.85 * s;
  p.corneal_thickness = 0.09 * s;
  p.apex_row = 0.2 * s;
  p.center_col = 0.5 * s;
  return p;
}

ConditionFlags PhantomParams::flags() const {
  ConditionFlags f;
  f.icl = has_icl;
  f.ring_segments = has_ring_segments;
  f.eyelid = has_eyelid;
  f.flare = has_flare;
  f.haze = has_haze;
  return f;
}

void PhantomParams::set_flags(const ConditionFlags &f) {
  has_icl = f.icl;
  has_ring_segments = f.ring_segments;
  has_eyelid = f.eyelid;
  has_flare = f.flare;
  has_haze = f.haze;
}

double PhantomParams::anterior_row(double col) const {
  return apex_row + sag(anterior_radius, col - center_col);
}

double PhantomParams::posterior_row(double col) const {
  return apex_row + corneal_thickness + sag(posterior_radius, col - center_col);
}

void PhantomParams::validate() const {
  if (size < 8) {
    throw ParameterError("phantom canvas must be at least 8 pixels");
  }
  if (!(anterior_radius > 0.0) || !(posterior_radius > 0.0)) {
    throw ParameterError("corneal radii must be positive");
  }
  if (!(corneal_thickness > 0.0)) {
    throw ParameterError("corneal thickness must be positive");
  }
  if (!(speckle_shape > 0.0)) {
    throw ParameterError("speckle shape must be positive");
  }
  if (!(intensity_scale >= 0.0 && intensity_scale <= 1.0)) {
    throw ParameterError("intensity scale must lie in [0,1]");
  }
  const double reach = std::max(center_col, static_cast<double>(size) - center_col) + 1.0;
  if (reach >= anterior_radius || reach >= posterior_radius) {
    throw ParameterError("corneal arcs must span the full frame width");
  }
  for (int64_t c = 0; c < size; ++c) {
    const double x = static_cast<double>(c) + 0.5;
    if (!(posterior_row(x) > anterior_row(x))) {
      throw ParameterError("posterior arc must lie strictly below the anterior arc");
    }
  }
}

nlohmann::json PhantomParams::to_json() const {
  nlohmann::json j;
  j["size"] = size;
  j["anterior_radius"] = anterior_radius;
  j["posterior_radius"] = posterior_radius;
  j["corneal_thickness"] = corneal_thickness;
  j["apex_row"] = apex_row;
  j["center_col"] = center_col;
  j["has_icl"] = has_icl;
  j["has_ring_segments"] = has_ring_segments;
  j["has_eyelid"] = has_eyelid;
  j["has_flare"] = has_flare;
  j["has_haze"] = has_haze;
  // JSON has no infinity; null encodes "speckle off".
  if (std::isinf(speckle_shape)) {
    j["speckle_shape"] = nullptr;
  } else {
    j["speckle_shape"] = speckle_shape;
  }
  j["intensity_scale"] = intensity_scale;
  j["width_class"] = to_string(width_class);
  return j;
}

PhantomParams PhantomParams::from_json(const nlohmann::json &j) {
  PhantomParams p = for_size(j.value("size", int64_t{64}));
  for (const auto &[key, value] : j.items()) {
    if (key == "size") {
      continue;
    } else if (key == "anterior_radius") {
      p.anterior_radius = value.get<double>();
    } else if (key == "posterior_radius") {
      p.posterior_radius = value.get<double>();
    } else if (key == "corneal_thickness") {
      p.corneal_thickness = value.get<double>();
    } else if (key == "apex_row") {
      p.apex_row = value.get<double>();
    } else if (key == "center_col") {
      p.center_col = value.get<double>();
    } else if (key == "has_icl") {
      p.has_icl = value.get<bool>();
    } else if (key == "has_ring_segments") {
      p.has_ring_segments = value.get<bool>();
    } else if (key == "has_eyelid") {
      p.has_eyelid = value.get<bool>();
    } else if (key == "has_flare") {
      p.has_flare = value.get<bool>();
    } else if (key == "has_haze") {
      p.has_haze = value.get<bool>();
    } else if (key == "speckle_shape") {
      p.speckle_shape =
          value.is_null() ? std::numeric_limits<double>::infinity() : value.get<double>();
    } else if (key == "intensity_scale") {
      p.intensity_scale = value.get<double>();
    } else if (key == "width_class") {
      p.width_class = width_class_from_string(value.get<std::string>());
    } else {
      throw ConfigError("unknown phantom parameter: " + key);
    }
  }
  return p;
}

PhantomResult generate_phantom(const PhantomParams &params, uint64_t seed) {
  params.validate();
  const int64_t n = params.size;
  const double s = static_cast<double>(n);
  const double thick = params.corneal_thickness;

  // Noise is drawn before any feature so that toggling a flag never shifts the stream.
  std::vector<double> speckle(static_cast<size_t>(n * n), 1.0);
  if (std::isfinite(params.speckle_shape)) {
    std::mt19937_64 rng(derive_seed(seed, 0x5eC1e));
    std::gamma_distribution<double> gamma(params.speckle_shape, 1.0 / params.speckle_shape);
    for (double &v : speckle) {
      v = gamma(rng);
    }
  }

  const double cy_ant = params.apex_row + params.anterior_radius;
  const double cy_post = params.apex_row + thick + params.posterior_radius;
  const IclGeometry icl = icl_geometry(params);
  const double cy_icl = icl.apex + icl.radius;
  const double line_sigma = std::max(0.5, 0.01 * s);
  const double ring_dx = 0.22 * s;
  const double ring_half_w = 0.05 * s;
  const double ring_half_h = 0.3 * thick;
  const double eyelid_edge = 0.22 * s;
  const double flare_sigma = std::max(0.6, 0.012 * s);

  Raster out(n, n);
  for (int64_t r = 0; r < n; ++r) {
    const double y = static_cast<double>(r) + 0.5;
    for (int64_t c = 0; c < n; ++c) {
      const double x = static_cast<double>(c) + 0.5;
      const double dx = x - params.center_col;

      // Signed distances to each surface; negative inside the circle (below the arc).
      const double d_ant = std::hypot(dx, y - cy_ant) - params.anterior_radius;
      const double d_post = std::hypot(dx, y - cy_post) - params.posterior_radius;
      const double below_ant = std::clamp(0.5 - d_ant, 0.0, 1.0);
      const double above_post = std::clamp(0.5 + d_post, 0.0, 1.0);

      double v = kBackground;
      v += kStroma * below_ant * above_post;
      v += kAnteriorPeak * bump(d_ant, line_sigma);
      v += kPosteriorPeak * bump(d_post, line_sigma);

      if (params.has_haze) {
        const double depth = -d_ant;
        const double lateral = smoothstep(0.28 * s, 0.2 * s, std::abs(dx));
        v += 0.3 * bump(depth - 0.4 * thick, 0.12 * thick) * lateral;
      }

      if (params.has_ring_segments) {
        for (const double side : {-1.0, 1.0}) {
          const double xr = params.center_col + side * ring_dx;
          const double ym = 0.5 * (params.anterior_row(xr) + params.posterior_row(xr));
          const double ex = (x - xr) / ring_half_w;
          const double ey = (y - ym) / ring_half_h;
          v += 0.5 * smoothstep(1.2, 0.8, ex * ex + ey * ey);
        }
      }

      if (params.has_icl) {
        const double d_icl = std::hypot(dx, y - cy_icl) - icl.radius;
        const double lateral =
            smoothstep(icl.half_width, icl.half_width - 0.06 * s, std::abs(dx));
        v += kIclPeak * bump(d_icl, line_sigma) * lateral;
      }

      if (params.has_flare) {
        const double y_surface = params.anterior_row(x);
        const double onset = smoothstep(y_surface - 1.0, y_surface + 1.0, y);
        const double decay = std::exp(-std::max(0.0, y - y_surface) / (0.6 * s));
        v += 0.45 * std::exp(-0.5 * (dx / flare_sigma) * (dx / flare_sigma)) * onset * decay;
      }

      if (params.has_eyelid) {
        const double cover = smoothstep(eyelid_edge + 2.0, eyelid_edge - 2.0, x);
        const double y_surface = params.anterior_row(x);
        const double lid = std::clamp(0.5 + d_ant - 1.0, 0.0, 1.0) *
                           smoothstep(y_surface - 0.4 * s, y_surface - 0.3 * s, y);
        v = v * (1.0 - 0.6 * cover * below_ant) + 0.4 * cover * lid;
      }

      v *= params.intensity_scale * speckle[static_cast<size_t>(r * n + c)];
      out.at(r, c) = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }

  PhantomResult result;
  result.image.pixels = std::move(out);
  result.image.width_class = params.width_class;
  result.image.provenance = Provenance::phantom;
  result.label = params.flags();
  result.image.label = result.label;
  return result;
}

ClassMix default_class_mix() {
  return {{"icl", 0.012}, {"ring_segments", 0.112}, {"haze", 0.080}, {"eyelid", 0.15},
          {"flare", 0.25}};
}

nlohmann::json DatasetStats::to_json() const {
  return {{"mean", mean}, {"std", std}, {"count", count}};
}

DatasetStats DatasetStats::from_json(const nlohmann::json &j) {
  DatasetStats st;
  st.mean = j.at("mean").get<double>();
  st.std = j.at("std").get<double>();
  st.count = j.at("count").get<int64_t>();
  if (!(st.std > 0.0) || st.count < 1) {
    throw ParameterError("dataset stats require std > 0 and count >= 1");
  }
  return st;
}

std::vector<Raster> Dataset::rasters() const {
  std::vector<Raster> out;
  out.reserve(images.size());
  for (const auto &im : images) {
    out.push_back(im.pixels);
  }
  return out;
}

namespace {

void validate_spec(const DatasetSpec &spec) {
  if (spec.n < 1) {
    throw ParameterError("dataset size must be at least 1");
  }
  if (spec.size < 8) {
    throw ParameterError("dataset canvas must be at least 8 pixels");
  }
  for (const auto &[flag, p] : spec.class_mix) {
    ConditionFlags::from_names({flag});
    if (!(p >= 0.0 && p <= 1.0)) {
      throw ParameterError("class probability for " + flag + " must lie in [0,1]");
    }
  }
}

double mix_value(const ClassMix &mix, const std::string &key) {
  auto it = mix.find(key);
  return it == mix.end() ? 0.0 : it->second;
}

} // namespace

PhantomParams sample_params(const DatasetSpec &spec, uint64_t seed, int64_t index,
                            uint64_t *item_seed) {
  std::mt19937_64 rng(derive_seed(seed, 0xDA7A, static_cast<uint64_t>(index)));
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };

  PhantomParams p = PhantomParams::for_size(spec.size);
  const double s = static_cast<double>(spec.size);
  p.width_class = spec.width_class;
  // Flags are drawn first and in a fixed order, so the jitter setting does not change labels.
  p.has_icl = u01(rng) < mix_value(spec.class_mix, "icl");
  p.has_ring_segments = u01(rng) < mix_value(spec.class_mix, "ring_segments");
  p.has_eyelid = u01(rng) < mix_value(spec.class_mix, "eyelid");
  p.has_flare = u01(rng) < mix_value(spec.class_mix, "flare");
  p.has_haze = u01(rng) < mix_value(spec.class_mix, "haze");
  if (spec.jitter) {
    p.anterior_radius = s * uniform(0.9, 1.15);
    p.posterior_radius = p.anterior_radius * uniform(0.8, 0.9);
    p.corneal_thickness = s * uniform(0.07, 0.11);
    p.apex_row = s * uniform(0.15, 0.25);
    p.center_col = s * uniform(0.47, 0.53);
    p.speckle_shape = uniform(3.0, 8.0);
    p.intensity_scale = uniform(0.8, 1.0);
  }
  if (item_seed != nullptr) {
    *item_seed = derive_seed(seed, 0x17E3, static_cast<uint64_t>(index));
  }
  return p;
}

Dataset render_dataset(const DatasetSpec &spec, uint64_t seed) {
  validate_spec(spec);
  Dataset ds;
  ds.images.reserve(static_cast<size_t>(spec.n));
  for (int64_t i = 0; i < spec.n; ++i) {
    uint64_t item_seed = 0;
    const PhantomParams p = sample_params(spec, seed, i, &item_seed);
    ds.images.push_back(generate_phantom(p, item_seed).image);
    std::ostringstream name;
    name << "images/" << std::setw(6) << std::setfill('0') << i << ".png";
    ds.files.push_back(name.str());
  }
  return ds;
}

Dataset generate_dataset(const DatasetSpec &spec, uint64_t seed, const fs::path &dir) {
  validate_spec(spec);
  std::error_code ec;
  fs::create_directories(dir / "images", ec);
  if (ec) {
    throw IoError("cannot create dataset directory " + dir.string() + ": " + ec.message());
  }
  std::ofstream labels(dir / "labels.jsonl", std::ios::trunc);
  if (!labels) {
    throw IoError("cannot write " + (dir / "labels.jsonl").string());
  }

  Dataset ds;
  for (int64_t i = 0; i < spec.n; ++i) {
    uint64_t item_seed = 0;
    const PhantomParams p = sample_params(spec, seed, i, &item_seed);
    PhantomResult res = generate_phantom(p, item_seed);
    std::ostringstream name;
    name << "images/" << std::setw(6) << std::setfill('0') << i << ".png";

    const auto png = io::encode_png(res.image.pixels);
    io::write_file(dir / name.str(), png);
    // Keep the in-memory copy identical to what a reload would produce.
    res.image.pixels = io::decode_image(png);

    nlohmann::json rec;
    rec["file"] = name.str();
    rec["flags"] = res.label.names();
    rec["seed"] = item_seed;
    rec["params"] = p.to_json();
    labels << rec.dump() << '\n';

    ds.images.push_back(std::move(res.image));
    ds.files.push_back(name.str());
  }
  if (!labels) {
    throw IoError("failed writing labels.jsonl");
  }

  const DatasetStats stats = compute_stats(ds.images);
  std::ofstream st(dir / "stats.json", std::ios::trunc);
  st << stats.to_json().dump(2) << '\n';
  if (!st) {
    throw IoError("failed writing stats.json");
  }
  return ds;
}

Dataset load_dataset(const fs::path &dir) {
  if (!fs::is_directory(dir)) {
    throw IoError("dataset directory not found: " + dir.string());
  }
  const fs::path labels_path = dir / "labels.jsonl";
  Dataset ds;
  if (fs::exists(labels_path)) {
    std::ifstream in(labels_path);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) {
        continue;
      }
      const auto rec = nlohmann::json::parse(line);
      const std::string file = rec.at("file").get<std::string>();
      BScanImage im;
      im.pixels = io::read_image(dir / file);
      im.label = ConditionFlags::from_names(rec.at("flags").get<std::vector<std::string>>());
      im.provenance = Provenance::phantom;
      if (rec.contains("params")) {
        im.width_class =
            width_class_from_string(rec["params"].value("width_class", std::string("wide16mm")));
      }
      ds.images.push_back(std::move(im));
      ds.files.push_back(file);
    }
    if (ds.images.empty()) {
      throw IoError("dataset has no records: " + dir.string());
    }
    return ds;
  }
  const fs::path images_dir = fs::is_directory(dir / "images") ? dir / "images" : dir;
  std::vector<fs::path> files;
  for (const auto &entry : fs::directory_iterator(images_dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  for (const auto &f : files) {
    BScanImage im;
    im.pixels = io::read_image(f);
    im.provenance = Provenance::real;
    ds.images.push_back(std::move(im));
    ds.files.push_back(fs::relative(f, dir).string());
  }
  if (ds.images.empty()) {
    throw IoError("no PNG images found in " + dir.string());
  }
  return ds;
}

Dataset ingest_folder(const fs::path &path, int64_t target_size) {
  if (target_size < 1) {
    throw ParameterError("target size must be positive");
  }
  if (!fs::is_directory(path)) {
    throw IoError("not a directory: " + path.string());
  }
  std::vector<fs::path> files;
  for (const auto &entry : fs::directory_iterator(path)) {
    if (entry.is_regular_file()) {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());

  // OpenCV-compatible bicubic (a = -0.75), sampled without kernel stretching.
  resample::KernelSpec spec;
  spec.kind = resample::Kernel::bicubic;
  spec.cubic_a = -0.75;

  Dataset ds;
  for (const auto &f : files) {
    Raster raw;
    try {
      raw = io::read_image(f);
    } catch (const Error &e) {
      ds.warnings.push_back(f.filename().string() + ": " + e.what());
      continue;
    }
    BScanImage im;
    if (raw.rows() == target_size && raw.cols() == target_size) {
      im.pixels = std::move(raw);
    } else {
      im.pixels = resample::resize(raw, target_size, target_size, spec);
      im.pixels.clamp(0.0f, 1.0f);
    }
    im.provenance = Provenance::real;
    ds.images.push_back(std::move(im));
    ds.files.push_back(f.filename().string());
  }
  if (ds.images.empty()) {
    throw IoError("no decodable images in " + path.string());
  }
  return ds;
}

DatasetStats compute_stats(const std::vector<Raster> &images) {
  if (images.empty()) {
    throw ParameterError("cannot compute statistics of an empty dataset");
  }
  double sum = 0.0;
  double count = 0.0;
  for (const auto &im : images) {
    for (float v : im.data()) {
      sum += v;
    }
    count += static_cast<double>(im.data().size());
  }
  const double mean = sum / count;
  double sq = 0.0;
  for (const auto &im : images) {
    for (float v : im.data()) {
      const double d = v - mean;
      sq += d * d;
    }
  }
  const double sd = std::sqrt(sq / count);
  if (!(sd > 1e-12)) {
    throw NumericError("dataset has zero variance; cannot normalize");
  }
  return {mean, sd, static_cast<int64_t>(images.size())};
}

DatasetStats compute_stats(const std::vector<BScanImage> &images) {
  std::vector<Raster> rasters;
  rasters.reserve(images.size());
  for (const auto &im : images) {
    rasters.push_back(im.pixels);
  }
  return compute_stats(rasters);
}

namespace {

void check_stats(const DatasetStats &stats) {
  if (!(stats.std > 0.0)) {
    throw ParameterError("normalization requires std > 0");
  }
}

} // namespace

Raster normalize(const Raster &image, const DatasetStats &stats) {
  check_stats(stats);
  Raster out(image.rows(), image.cols());
  for (size_t i = 0; i < image.data().size(); ++i) {
    out.data()[i] = static_cast<float>((image.data()[i] - stats.mean) / stats.std);
  }
  return out;
}

Raster denormalize(const Raster &image, const DatasetStats &stats) {
  check_stats(stats);
  Raster out(image.rows(), image.cols());
  for (size_t i = 0; i < image.data().size(); ++i) {
    out.data()[i] = static_cast<float>(image.data()[i] * stats.std + stats.mean);
  }
  return out;
}

torch::Tensor normalize(const torch::Tensor &images, const DatasetStats &stats) {
  check_stats(stats);
  return (images - stats.mean) / stats.std;
}

torch::Tensor denormalize(const torch::Tensor &images, const DatasetStats &stats) {
  check_stats(stats);
  return images * stats.std + stats.mean;
}

} // namespace octgan::phantom
