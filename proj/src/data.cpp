#include "hyperst/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "csv.hpp"

namespace hyperst {

using nlohmann::json;

void Dataset::validate() const {
  if (spatial.rank() != 2) throw std::invalid_argument("dataset: spatial must be [N×D_s]");
  if (temporal.rank() != 3) throw std::invalid_argument("dataset: temporal must be [N×M×D_T]");
  if (labels.rank() != 3) throw std::invalid_argument("dataset: labels must be [N×M×D_L]");
  const std::size_t n = spatial.extent(0), m = temporal.extent(1);
  if (temporal.extent(0) != n || labels.extent(0) != n) {
    throw std::invalid_argument("dataset: object counts disagree across spatial/temporal/labels");
  }
  if (labels.extent(1) != m) throw std::invalid_argument("dataset: temporal and labels have different step counts");
  if (timestamps.size() != m) throw std::invalid_argument("dataset: timestamp count differs from M");
  for (std::size_t t = 1; t < m; ++t) {
    if (timestamps[t] <= timestamps[t - 1]) throw std::invalid_argument("dataset: timestamps not strictly increasing");
  }
  if (!spatial.all_finite() || !temporal.all_finite() || !labels.all_finite()) {
    throw std::invalid_argument("dataset: contains NaN or Inf");
  }
  if (grid && (*grid) * (*grid) != n) {
    throw std::invalid_argument("dataset: grid " + std::to_string(*grid) + "x" + std::to_string(*grid) +
                                " does not cover N=" + std::to_string(n) + " objects");
  }
}

// ---------------------------------------------------------------------------
// Generator

void GeneratorConfig::validate() const {
  if (objects == 0 || steps == 0 || spatial_dim == 0 || period == 0) {
    throw std::invalid_argument("generator: objects, steps, spatial_dim and period must be positive");
  }
  if (archetypes < 2) throw std::invalid_argument("generator: need at least 2 archetypes");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("generator: alpha must lie in [0, 1]");
  if (!(sigma >= 0.0) || !(attribute_noise >= 0.0)) throw std::invalid_argument("generator: noise must be >= 0");
  if (grid && (*grid) * (*grid) != objects) {
    throw std::invalid_argument("generator: grid G requires objects == G*G");
  }
}

json to_json(const GeneratorConfig& c) {
  json j{{"objects", c.objects},   {"steps", c.steps},         {"spatial_dim", c.spatial_dim},
         {"archetypes", c.archetypes}, {"alpha", c.alpha},     {"sigma", c.sigma},
         {"seed", c.seed},         {"period", c.period},       {"sharpness", c.sharpness},
         {"attribute_noise", c.attribute_noise}};
  j["grid"] = c.grid ? json(*c.grid) : json(nullptr);
  return j;
}

GeneratorConfig generator_config_from_json(const json& j) {
  GeneratorConfig c;
  c.objects = j.value("objects", c.objects);
  c.steps = j.value("steps", c.steps);
  c.spatial_dim = j.value("spatial_dim", c.spatial_dim);
  c.archetypes = j.value("archetypes", c.archetypes);
  c.alpha = j.value("alpha", c.alpha);
  c.sigma = j.value("sigma", c.sigma);
  c.seed = j.value("seed", c.seed);
  c.period = j.value("period", c.period);
  c.sharpness = j.value("sharpness", c.sharpness);
  c.attribute_noise = j.value("attribute_noise", c.attribute_noise);
  if (j.contains("grid") && !j["grid"].is_null()) c.grid = j["grid"].get<std::size_t>();
  c.validate();
  return c;
}

double archetype_peak(std::size_t k, std::size_t period) {
  double hour = 0.0;
  if (k == 0) {
    hour = 8.0;
  } else if (k == 1) {
    hour = 19.0;
  } else {
    hour = std::fmod(8.0 + 11.0 * static_cast<double>(k), 24.0);
  }
  return hour / 24.0 * static_cast<double>(period);
}

namespace {

double bump(double tau, double peak, std::size_t period, double sharpness) {
  const double phase = 2.0 * std::numbers::pi * (tau - peak) / static_cast<double>(period);
  return std::exp(sharpness * (std::cos(phase) - 1.0));
}

}  // namespace

double archetype_profile(std::size_t k, double tau, std::size_t period, double sharpness) {
  return 2.0 * bump(tau, archetype_peak(k, period), period, sharpness);
}

Dataset generate_synthetic(const GeneratorConfig& cfg) {
  cfg.validate();
  const std::size_t n = cfg.objects, m = cfg.steps, ds = cfg.spatial_dim, k = cfg.archetypes, p = cfg.period;
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  Tensor signatures({k, ds});
  for (auto& v : signatures.data()) v = gauss(rng);

  Tensor pi({n, k});
  for (auto& v : pi.data()) v = unit(rng);

  Dataset out;
  out.name = "synthetic";
  out.spatial = Tensor({n, ds});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t d = 0; d < ds; ++d) {
      double v = 0.0;
      for (std::size_t a = 0; a < k; ++a) v += pi.at(i, a) * signatures.at(a, d);
      out.spatial.at(i, d) = v + cfg.attribute_noise * gauss(rng);
    }

  // Profiles depend only on time of day; tabulate once.
  std::vector<double> shared(p);
  Tensor profile({k, p});
  const double shared_peak = 13.0 / 24.0 * static_cast<double>(p);
  for (std::size_t tau = 0; tau < p; ++tau) {
    shared[tau] = bump(static_cast<double>(tau), shared_peak, p, cfg.sharpness);
    for (std::size_t a = 0; a < k; ++a) profile.at(a, tau) = archetype_profile(a, static_cast<double>(tau), p, cfg.sharpness);
  }

  out.temporal = Tensor({n, m, 3});
  out.labels = Tensor({n, m, 1});
  out.timestamps.resize(m);
  for (std::size_t t = 0; t < m; ++t) out.timestamps[t] = static_cast<std::int64_t>(t);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t t = 0; t < m; ++t) {
      const std::size_t tau = t % p;
      double causal = 0.0;
      for (std::size_t a = 0; a < k; ++a) causal += pi.at(i, a) * profile.at(a, tau);
      const double x = cfg.alpha * causal + (1.0 - cfg.alpha) * shared[tau] + cfg.sigma * gauss(rng);
      const double angle = 2.0 * std::numbers::pi * static_cast<double>(tau) / static_cast<double>(p);
      out.temporal.at(i, t, 0) = x;
      out.temporal.at(i, t, 1) = std::sin(angle);
      out.temporal.at(i, t, 2) = std::cos(angle);
      out.labels.at(i, t, 0) = x;
    }
  }
  out.grid = cfg.grid;
  out.metadata["generator"] = to_json(cfg);
  out.metadata["alpha"] = cfg.alpha;
  json latent = json::array();
  for (std::size_t i = 0; i < n; ++i) {
    json row = json::array();
    for (std::size_t a = 0; a < k; ++a) row.push_back(pi.at(i, a));
    latent.push_back(row);
  }
  out.metadata["latent_pi"] = latent;
  out.validate();
  return out;
}

// ---------------------------------------------------------------------------
// Files

void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  ds.validate();
  std::filesystem::create_directories(dir);
  const std::size_t n = ds.objects(), m = ds.steps();

  {
    std::vector<std::string> header{"object_id"};
    for (std::size_t d = 0; d < ds.spatial_dim(); ++d) header.push_back("s" + std::to_string(d));
    csv::Writer w(dir / "spatial.csv", header);
    for (std::size_t i = 0; i < n; ++i) {
      w.begin_row();
      w.field(static_cast<std::int64_t>(i));
      for (std::size_t d = 0; d < ds.spatial_dim(); ++d) w.field(ds.spatial.at(i, d));
      w.end_row();
    }
  }
  auto write_long = [&](const std::filesystem::path& path, const Tensor& t, std::size_t channels) {
    std::vector<std::string> header{"object_id", "t"};
    for (std::size_t c = 0; c < channels; ++c) header.push_back("x" + std::to_string(c));
    csv::Writer w(path, header);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t s = 0; s < m; ++s) {
        w.begin_row();
        w.field(static_cast<std::int64_t>(i));
        w.field(ds.timestamps[s]);
        for (std::size_t c = 0; c < channels; ++c) w.field(t.at(i, s, c));
        w.end_row();
      }
  };
  write_long(dir / "temporal.csv", ds.temporal, ds.temporal_dim());
  write_long(dir / "labels.csv", ds.labels, ds.label_dim());

  json manifest{{"name", ds.name},
                {"N", n},
                {"M", m},
                {"D_s", ds.spatial_dim()},
                {"D_T", ds.temporal_dim()},
                {"D_L", ds.label_dim()},
                {"files", {{"spatial", "spatial.csv"}, {"temporal", "temporal.csv"}, {"labels", "labels.csv"}}},
                {"metadata", ds.metadata}};
  manifest["grid"] = ds.grid ? json{{"G", *ds.grid}} : json(nullptr);
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';
}

namespace {

std::size_t manifest_dim(const json& j, const char* key, const std::filesystem::path& path) {
  if (!j.contains(key) || !j[key].is_number_unsigned() || j[key].get<std::size_t>() == 0) {
    throw std::runtime_error(path.string() + ": manifest field '" + key + "' missing or not a positive integer");
  }
  return j[key].get<std::size_t>();
}

std::filesystem::path manifest_file(const json& j, const char* key, const std::filesystem::path& manifest) {
  if (!j.contains("files") || !j["files"].contains(key)) {
    throw std::runtime_error(manifest.string() + ": manifest lacks files." + key);
  }
  std::filesystem::path p = j["files"][key].get<std::string>();
  if (p.is_relative()) p = manifest.parent_path() / p;
  if (!std::filesystem::exists(p)) throw std::runtime_error(p.string() + ": file not found");
  return p;
}

void read_long(const std::filesystem::path& path, std::size_t n, std::size_t m, std::size_t channels, Tensor& out,
               std::vector<std::int64_t>& timestamps, bool set_timestamps) {
  csv::Reader r(path);
  if (r.header().size() != channels + 2) {
    throw std::runtime_error(path.string() + ": expected " + std::to_string(channels + 2) + " columns, got " +
                             std::to_string(r.header().size()));
  }
  out = Tensor({n, m, channels});
  std::vector<std::size_t> filled(n, 0);
  std::vector<std::int64_t> last(n, 0);
  std::vector<std::vector<std::int64_t>> times(n);
  std::vector<std::string_view> fields;
  while (r.next(fields)) {
    const auto obj = csv::parse_int(fields[0], path, r.line());
    if (obj < 0 || static_cast<std::size_t>(obj) >= n) {
      throw std::runtime_error(path.string() + ":" + std::to_string(r.line()) + ": object_id " +
                               std::to_string(obj) + " outside 0.." + std::to_string(n - 1));
    }
    const auto i = static_cast<std::size_t>(obj);
    const auto t = csv::parse_int(fields[1], path, r.line());
    if (filled[i] > 0 && t <= last[i]) {
      throw std::runtime_error(path.string() + ":" + std::to_string(r.line()) + ": t not strictly increasing for object " +
                               std::to_string(i));
    }
    if (filled[i] >= m) {
      throw std::runtime_error(path.string() + ": object " + std::to_string(i) + " has more than M=" +
                               std::to_string(m) + " rows");
    }
    for (std::size_t c = 0; c < channels; ++c) {
      out.at(i, filled[i], c) = csv::parse_double(fields[c + 2], path, r.line());
    }
    times[i].push_back(t);
    last[i] = t;
    ++filled[i];
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (filled[i] != m) {
      throw std::runtime_error(path.string() + ": object " + std::to_string(i) + " has " + std::to_string(filled[i]) +
                               " rows, manifest says M=" + std::to_string(m));
    }
    if (times[i] != times[0]) throw std::runtime_error(path.string() + ": objects disagree on timestamps");
  }
  if (set_timestamps) {
    timestamps = times[0];
  } else if (timestamps != times[0]) {
    throw std::runtime_error(path.string() + ": timestamps differ from temporal file");
  }
}

}  // namespace

Dataset load_dataset(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw std::runtime_error(manifest_path.string() + ": cannot open manifest");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error(manifest_path.string() + ": corrupt manifest: " + e.what());
  }
  const std::size_t n = manifest_dim(j, "N", manifest_path);
  const std::size_t m = manifest_dim(j, "M", manifest_path);
  const std::size_t ds = manifest_dim(j, "D_s", manifest_path);
  const std::size_t dt = manifest_dim(j, "D_T", manifest_path);
  const std::size_t dl = manifest_dim(j, "D_L", manifest_path);

  Dataset out;
  out.name = j.value("name", std::string("dataset"));
  if (j.contains("metadata")) out.metadata = j["metadata"];
  if (j.contains("grid") && !j["grid"].is_null()) out.grid = j["grid"].at("G").get<std::size_t>();

  const auto spatial_path = manifest_file(j, "spatial", manifest_path);
  {
    csv::Reader r(spatial_path);
    if (r.header().size() != ds + 1) {
      throw std::runtime_error(spatial_path.string() + ": expected " + std::to_string(ds + 1) + " columns, got " +
                               std::to_string(r.header().size()));
    }
    out.spatial = Tensor({n, ds});
    std::vector<bool> seen(n, false);
    std::size_t rows = 0;
    std::vector<std::string_view> fields;
    while (r.next(fields)) {
      const auto obj = csv::parse_int(fields[0], spatial_path, r.line());
      if (obj < 0 || static_cast<std::size_t>(obj) >= n || seen[static_cast<std::size_t>(obj)]) {
        throw std::runtime_error(spatial_path.string() + ":" + std::to_string(r.line()) + ": bad or duplicate object_id");
      }
      const auto i = static_cast<std::size_t>(obj);
      seen[i] = true;
      for (std::size_t d = 0; d < ds; ++d) out.spatial.at(i, d) = csv::parse_double(fields[d + 1], spatial_path, r.line());
      ++rows;
    }
    if (rows != n) {
      throw std::runtime_error(spatial_path.string() + ": manifest N=" + std::to_string(n) + " but file has " +
                               std::to_string(rows) + " rows");
    }
  }
  read_long(manifest_file(j, "temporal", manifest_path), n, m, dt, out.temporal, out.timestamps, true);
  read_long(manifest_file(j, "labels", manifest_path), n, m, dl, out.labels, out.timestamps, false);
  try {
    out.validate();
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(manifest_path.string() + ": " + e.what());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Splits

void SplitSpec::validate() const {
  if (ratios.size() != 3) throw std::invalid_argument("split: need exactly three ratios (train:val:test)");
  for (double r : ratios) {
    if (!(r > 0.0)) throw std::invalid_argument("split: ratios must be positive");
  }
}

std::array<std::size_t, 3> SplitSpec::lengths(std::size_t steps) const {
  validate();
  const double total = ratios[0] + ratios[1] + ratios[2];
  const auto part = [&](double r) {
    return static_cast<std::size_t>(std::floor(static_cast<double>(steps) * r / total + 1e-9));
  };
  const std::size_t train = part(ratios[0]);
  const std::size_t val = part(ratios[1]);
  return {train, val, steps - train - val};
}

namespace {

SampleWindow object_window(const Dataset& ds, std::size_t i, std::size_t s, std::size_t w, std::size_t h) {
  const std::size_t dsd = ds.spatial_dim(), dt = ds.temporal_dim(), dl = ds.label_dim();
  SampleWindow win;
  win.object = i;
  win.start = s;
  const double* srow = ds.spatial.raw() + i * dsd;
  win.spatial = Tensor({dsd}, std::vector<double>(srow, srow + dsd));
  const double* tin = ds.temporal.raw() + (i * ds.steps() + s) * dt;
  win.input = Tensor({w, dt}, std::vector<double>(tin, tin + w * dt));
  const double* lab = ds.labels.raw() + (i * ds.steps() + s + w) * dl;
  win.label = Tensor({h, dl}, std::vector<double>(lab, lab + h * dl));
  return win;
}

SampleWindow grid_window(const Dataset& ds, std::size_t s, std::size_t w, std::size_t h) {
  const std::size_t n = ds.objects(), m = ds.steps(), dt = ds.temporal_dim(), dl = ds.label_dim();
  SampleWindow win;
  win.start = s;
  win.spatial = ds.spatial;
  win.input = Tensor({w, n, dt});
  win.label = Tensor({h, n, dl});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < w; ++k)
      for (std::size_t c = 0; c < dt; ++c) win.input.at(k, i, c) = ds.temporal.at(i, s + k, c);
    for (std::size_t k = 0; k < h; ++k)
      for (std::size_t c = 0; c < dl; ++c) win.label.at(k, i, c) = ds.labels.at(i, s + w + k, c);
  }
  (void)m;
  return win;
}

}  // namespace

WindowSplits split_windows(const Dataset& ds, const SplitSpec& split, std::size_t window, std::size_t horizon,
                           WindowLayout layout) {
  if (window == 0 || horizon == 0) throw std::invalid_argument("split_windows: window and horizon must be positive");
  if (layout == WindowLayout::grid && !ds.grid) throw std::invalid_argument("split_windows: dataset has no grid layout");
  const auto len = split.lengths(ds.steps());
  static constexpr std::array<const char*, 3> names{"train", "val", "test"};
  WindowSplits out;
  std::array<std::vector<SampleWindow>*, 3> dest{&out.train, &out.val, &out.test};
  std::size_t lo = 0;
  for (std::size_t p = 0; p < 3; ++p) {
    const std::size_t hi = lo + len[p];
    if (len[p] < window + horizon) {
      throw std::invalid_argument(std::string("split_windows: ") + names[p] + " partition has " +
                                  std::to_string(len[p]) + " steps, needs at least w+h=" +
                                  std::to_string(window + horizon));
    }
    const std::size_t count = len[p] - window - horizon + 1;
    if (layout == WindowLayout::per_object) {
      dest[p]->reserve(count * ds.objects());
      for (std::size_t i = 0; i < ds.objects(); ++i)
        for (std::size_t s = lo; s + window + horizon <= hi; ++s) dest[p]->push_back(object_window(ds, i, s, window, horizon));
    } else {
      dest[p]->reserve(count);
      for (std::size_t s = lo; s + window + horizon <= hi; ++s) dest[p]->push_back(grid_window(ds, s, window, horizon));
    }
    lo = hi;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Normalization

namespace {

ChannelStats channel_stats(const Tensor& t, std::size_t channels, std::size_t objects, std::size_t steps_total,
                           std::size_t steps_used, const char* what, std::vector<std::string>& warnings) {
  ChannelStats s;
  s.mean.assign(channels, 0.0);
  s.stddev.assign(channels, 0.0);
  const double count = static_cast<double>(objects * steps_used);
  for (std::size_t i = 0; i < objects; ++i)
    for (std::size_t k = 0; k < steps_used; ++k)
      for (std::size_t c = 0; c < channels; ++c) s.mean[c] += t[(i * steps_total + k) * channels + c];
  for (auto& v : s.mean) v /= count;
  for (std::size_t i = 0; i < objects; ++i)
    for (std::size_t k = 0; k < steps_used; ++k)
      for (std::size_t c = 0; c < channels; ++c) {
        const double d = t[(i * steps_total + k) * channels + c] - s.mean[c];
        s.stddev[c] += d * d;
      }
  for (std::size_t c = 0; c < channels; ++c) {
    s.stddev[c] = std::sqrt(s.stddev[c] / count);
    if (!(s.stddev[c] > 1e-12)) {
      warnings.push_back(std::string(what) + " channel " + std::to_string(c) + " has zero variance; using unit scale");
      s.stddev[c] = 1.0;
    }
  }
  return s;
}

Tensor transform_last_axis(const Tensor& t, const ChannelStats& s, bool inverse) {
  const std::size_t channels = s.mean.size();
  if (t.shape().back() != channels) {
    throw DimensionError("normalizer: last axis of " + to_string(t.shape()) + " is not " + std::to_string(channels) +
                         " channels");
  }
  Tensor out = t;
  for (std::size_t i = 0; i < out.numel(); ++i) {
    const std::size_t c = i % channels;
    out[i] = inverse ? out[i] * s.stddev[c] + s.mean[c] : (out[i] - s.mean[c]) / s.stddev[c];
  }
  return out;
}

json stats_json(const ChannelStats& s) { return json{{"mean", s.mean}, {"std", s.stddev}}; }

ChannelStats stats_from_json(const json& j) {
  ChannelStats s;
  s.mean = j.at("mean").get<std::vector<double>>();
  s.stddev = j.at("std").get<std::vector<double>>();
  if (s.mean.size() != s.stddev.size()) throw std::invalid_argument("normalizer: mean/std length mismatch");
  return s;
}

}  // namespace

Normalizer Normalizer::fit(const Dataset& ds, std::size_t train_steps) {
  if (train_steps == 0 || train_steps > ds.steps()) throw std::invalid_argument("normalizer: bad training range");
  Normalizer n;
  n.spatial = channel_stats(ds.spatial, ds.spatial_dim(), ds.objects(), 1, 1, "spatial", n.warnings);
  n.temporal = channel_stats(ds.temporal, ds.temporal_dim(), ds.objects(), ds.steps(), train_steps, "temporal", n.warnings);
  n.labels = channel_stats(ds.labels, ds.label_dim(), ds.objects(), ds.steps(), train_steps, "label", n.warnings);
  return n;
}

Normalizer Normalizer::identity(std::size_t spatial_dim, std::size_t temporal_dim, std::size_t label_dim) {
  Normalizer n;
  n.spatial = {std::vector<double>(spatial_dim, 0.0), std::vector<double>(spatial_dim, 1.0)};
  n.temporal = {std::vector<double>(temporal_dim, 0.0), std::vector<double>(temporal_dim, 1.0)};
  n.labels = {std::vector<double>(label_dim, 0.0), std::vector<double>(label_dim, 1.0)};
  return n;
}

Dataset Normalizer::apply(const Dataset& ds) const {
  Dataset out = ds;
  out.spatial = transform_last_axis(ds.spatial, spatial, false);
  out.temporal = transform_last_axis(ds.temporal, temporal, false);
  out.labels = transform_last_axis(ds.labels, labels, false);
  return out;
}

Tensor Normalizer::denormalize_labels(const Tensor& t) const { return transform_last_axis(t, labels, true); }
Tensor Normalizer::normalize_labels(const Tensor& t) const { return transform_last_axis(t, labels, false); }
Tensor Normalizer::normalize_spatial(const Tensor& t) const { return transform_last_axis(t, spatial, false); }
Tensor Normalizer::normalize_temporal(const Tensor& t) const { return transform_last_axis(t, temporal, false); }

json to_json(const Normalizer& n) {
  return json{{"spatial", stats_json(n.spatial)}, {"temporal", stats_json(n.temporal)}, {"labels", stats_json(n.labels)}};
}

Normalizer normalizer_from_json(const json& j) {
  Normalizer n;
  n.spatial = stats_from_json(j.at("spatial"));
  n.temporal = stats_from_json(j.at("temporal"));
  n.labels = stats_from_json(j.at("labels"));
  return n;
}

}  // namespace hyperst
