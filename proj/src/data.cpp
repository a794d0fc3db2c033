#include "sdat/data.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "sdat/rng.hpp"

namespace sdat {

UnlabeledDataset strip_labels(const LabeledDataset& ds) { return {ds.X, ds.meta}; }

LabeledDataset make_two_moons(int n, double noise_std, std::uint64_t seed) {
  if (n < 2) throw std::invalid_argument("make_two_moons: n must be >= 2");
  if (noise_std < 0.0) throw std::invalid_argument("make_two_moons: noise_std must be >= 0");
  const int n0 = n - n / 2;
  LabeledDataset ds;
  ds.X = Tensor::zeros({n, 2});
  ds.y.assign(static_cast<std::size_t>(n), 0);
  Rng rng(seed);
  constexpr double kPi = 3.14159265358979323846;
  for (int i = 0; i < n; ++i) {
    const double t = kPi * rng.u01();
    double x, y;
    if (i < n0) {
      x = std::cos(t);
      y = std::sin(t);
      ds.y[static_cast<std::size_t>(i)] = 0;
    } else {
      x = 1.0 - std::cos(t);
      y = 0.5 - std::sin(t);
      ds.y[static_cast<std::size_t>(i)] = 1;
    }
    if (noise_std > 0.0) {
      x += noise_std * rng.normal();
      y += noise_std * rng.normal();
    }
    ds.X.at(i, 0) = x;
    ds.X.at(i, 1) = y;
  }
  ds.meta = {"two-moons", seed, n, 2, 2, {{"noise_std", noise_std}}};
  return ds;
}

LabeledDataset rotate(const LabeledDataset& ds, double angle_deg) {
  if (ds.meta.d != 2) throw std::invalid_argument("rotate: dataset must be 2-D");
  if (angle_deg == 0.0) {
    LabeledDataset out = ds;  // exact identity, skip the centroid round-trip
    out.meta.generator += "+rotate";
    out.meta.params["angle_deg"] = 0.0;
    return out;
  }
  constexpr double kPi = 3.14159265358979323846;
  const double a = angle_deg * kPi / 180.0;
  const double c = std::cos(a);
  const double s = std::sin(a);
  const int n = ds.meta.n;
  double mx = 0.0, my = 0.0;
  for (int i = 0; i < n; ++i) {
    mx += ds.X.at(i, 0);
    my += ds.X.at(i, 1);
  }
  mx /= n;
  my /= n;
  LabeledDataset out = ds;
  for (int i = 0; i < n; ++i) {
    const double x = ds.X.at(i, 0) - mx;
    const double y = ds.X.at(i, 1) - my;
    out.X.at(i, 0) = c * x - s * y + mx;
    out.X.at(i, 1) = s * x + c * y + my;
  }
  out.meta.generator += "+rotate";
  out.meta.params["angle_deg"] = angle_deg;
  return out;
}

LabeledDataset make_blobs(int n, int k, int d, double centers_shift, double cluster_std,
                          std::uint64_t seed, std::uint64_t sample_stream) {
  if (k < 2) throw std::invalid_argument("make_blobs: k must be >= 2");
  if (d < 1 || n < k) throw std::invalid_argument("make_blobs: need d >= 1 and n >= k");
  if (cluster_std < 0.0) throw std::invalid_argument("make_blobs: cluster_std must be >= 0");
  if (sample_stream == 0) throw std::invalid_argument("make_blobs: sample_stream 0 is reserved");
  Rng center_rng(child_seed(seed, 0));
  std::vector<double> centers(static_cast<std::size_t>(k) * d);
  for (double& c : centers) c = center_rng.uniform(-4.0, 4.0);

  LabeledDataset ds;
  ds.X = Tensor::zeros({n, d});
  ds.y.assign(static_cast<std::size_t>(n), 0);
  Rng rng(child_seed(seed, sample_stream));
  int row = 0;
  for (int c = 0; c < k; ++c) {
    const int rows = n / k + (c < n % k ? 1 : 0);
    for (int i = 0; i < rows; ++i, ++row) {
      ds.y[static_cast<std::size_t>(row)] = c;
      for (int j = 0; j < d; ++j)
        ds.X.at(row, j) = centers[static_cast<std::size_t>(c) * d + j] + centers_shift +
                          cluster_std * rng.normal();
    }
  }
  ds.meta = {"blobs", seed, n, d, k,
             {{"centers_shift", centers_shift},
              {"cluster_std", cluster_std},
              {"sample_stream", static_cast<double>(sample_stream)}}};
  return ds;
}

LabeledDataset inject_label_noise(const LabeledDataset& ds, double fraction,
                                  std::uint64_t seed) {
  if (fraction < 0.0 || fraction > 1.0)
    throw std::invalid_argument("inject_label_noise: fraction must be in [0, 1]");
  LabeledDataset out = ds;
  const int n = ds.meta.n;
  const int k = ds.meta.k;
  const int flips = static_cast<int>(std::llround(fraction * n));
  if (flips == 0) return out;
  Rng rng(seed);
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order.begin(), order.end());
  for (int i = 0; i < flips; ++i) {
    const int row = order[static_cast<std::size_t>(i)];
    const int old = out.y[static_cast<std::size_t>(row)];
    // uniform among the k - 1 other classes
    int pick = static_cast<int>(rng.uniform_int(k - 1));
    if (pick >= old) ++pick;
    out.y[static_cast<std::size_t>(row)] = pick;
  }
  out.meta.params["label_noise"] = fraction;
  return out;
}

namespace {

std::string meta_path_for(const std::string& csv_path) {
  std::string p = csv_path;
  const std::string suffix = ".csv";
  if (p.size() >= suffix.size() && p.compare(p.size() - suffix.size(), suffix.size(), suffix) == 0)
    p.resize(p.size() - suffix.size());
  return p + ".meta.json";
}

}  // namespace

void save_csv(const LabeledDataset& ds, const std::string& path) {
  ds.X.require_finite("dataset " + path);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  for (int j = 0; j < ds.meta.d; ++j) f << "f" << j << ",";
  f << "label\n";
  char buf[64];
  for (int i = 0; i < ds.meta.n; ++i) {
    for (int j = 0; j < ds.meta.d; ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", ds.X.at(i, j));
      f << buf << ",";
    }
    f << ds.y[static_cast<std::size_t>(i)] << "\n";
  }
  if (!f) throw std::runtime_error("write failed: " + path);

  nlohmann::ordered_json meta;
  meta["generator"] = ds.meta.generator;
  meta["seed"] = ds.meta.seed;
  meta["n"] = ds.meta.n;
  meta["d"] = ds.meta.d;
  meta["k"] = ds.meta.k;
  meta["params"] = ds.meta.params;
  std::ofstream mf(meta_path_for(path), std::ios::binary);
  if (!mf) throw std::runtime_error("cannot open for writing: " + meta_path_for(path));
  mf << meta.dump(2) << "\n";
}

LabeledDataset load_csv(const std::string& path) {
  std::ifstream mf(meta_path_for(path));
  if (!mf) throw std::runtime_error("missing sidecar meta: " + meta_path_for(path));
  nlohmann::json meta = nlohmann::json::parse(mf);

  LabeledDataset ds;
  ds.meta.generator = meta.at("generator").get<std::string>();
  ds.meta.seed = meta.at("seed").get<std::uint64_t>();
  ds.meta.n = meta.at("n").get<int>();
  ds.meta.d = meta.at("d").get<int>();
  ds.meta.k = meta.at("k").get<int>();
  for (auto& [key, value] : meta.at("params").items())
    ds.meta.params[key] = value.get<double>();

  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open: " + path);
  std::string line;
  if (!std::getline(f, line)) throw std::runtime_error("empty csv: " + path);
  {
    std::string expected;
    for (int j = 0; j < ds.meta.d; ++j) expected += "f" + std::to_string(j) + ",";
    expected += "label";
    if (line != expected) throw std::runtime_error("csv header does not match schema: " + path);
  }
  ds.X = Tensor::zeros({ds.meta.n, ds.meta.d});
  ds.y.assign(static_cast<std::size_t>(ds.meta.n), 0);
  for (int i = 0; i < ds.meta.n; ++i) {
    if (!std::getline(f, line)) throw std::runtime_error("csv truncated: " + path);
    std::stringstream ss(line);
    std::string cell;
    for (int j = 0; j < ds.meta.d; ++j) {
      if (!std::getline(ss, cell, ',')) throw std::runtime_error("csv row too short: " + path);
      ds.X.at(i, j) = std::stod(cell);
    }
    if (!std::getline(ss, cell, ',')) throw std::runtime_error("csv row too short: " + path);
    const int label = std::stoi(cell);
    if (label < 0 || label >= ds.meta.k)
      throw std::runtime_error("label out of range for k=" + std::to_string(ds.meta.k) + ": " +
                               path);
    ds.y[static_cast<std::size_t>(i)] = label;
  }
  return ds;
}

}  // namespace sdat
