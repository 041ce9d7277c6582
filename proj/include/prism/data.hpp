#pragma once

// Synthetic ID/OOD data, generative-model fixtures for oracle tests, and the
// on-disk formats.
//
// Binary container (little-endian throughout):
//   "PRSM"            4 bytes magic
//   version           u16 (currently 1)
//   repeated until EOF:
//     name length     u16
//     name            bytes
//     rank            u8
//     dims            u32 x rank
//     payload         float64 x prod(dims)
//
// Score files are text, one record per line: "<sample_id>,<split>,<score>"
// with the score printed to 12 significant digits.

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "prism/errors.hpp"
#include "prism/model.hpp"
#include "prism/numerics.hpp"
#include "prism/rng.hpp"

namespace prism {

enum class Split { train, test_id, test_ood };

inline constexpr std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::test_id: return "test_id";
    case Split::test_ood: return "test_ood";
  }
  return "?";
}

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "test_id") return Split::test_id;
  if (s == "test_ood") return Split::test_ood;
  throw ParseError("unknown split tag '" + std::string(s) + "'");
}

inline constexpr int kOodLabel = -1;

struct Dataset {
  Matrix x;             // N x D
  std::vector<int> y;   // class in [0, K), or kOodLabel
  Split split = Split::train;

  std::size_t size() const noexcept { return y.size(); }
  std::span<const double> sample(std::size_t i) const { return x.row(i); }
  bool operator==(const Dataset&) const = default;
};

struct SynthConfig {
  std::size_t classes = 4;         // K
  std::size_t input_dim = 16;      // D
  std::size_t n_per_class = 500;
  double id_mean_scale = 10.0;
  double cluster_std = 1.0;
  std::size_t n_ood_clusters = 4;
  double ood_shift = 10.0;
  std::uint64_t seed = 7;
};

inline constexpr std::size_t kMaxRejectionTries = 1000000;

struct SyntheticSplits {
  Dataset train;
  Dataset test_id;
  Dataset test_ood;
};

namespace detail {
inline Vector point_on_sphere(Rng& rng, std::size_t dim, double radius) {
  Vector v(dim);
  double n = 0.0;
  do {
    for (double& x : v) x = rng.gaussian();
    n = norm2(v);
  } while (n == 0.0);
  for (double& x : v) x *= radius / n;
  return v;
}
}  // namespace detail

// ID: K isotropic Gaussian clusters with means on the sphere of radius
// id_mean_scale; the first 80% of each class goes to train. OOD: clusters
// whose means sit on the same sphere at distance >= ood_shift from every ID
// mean, with as many samples per cluster as each ID class has test samples.
inline SyntheticSplits gen_synthetic(const SynthConfig& cfg) {
  if (cfg.classes < 1 || cfg.input_dim < 1 || cfg.n_per_class < 1 || cfg.n_ood_clusters < 1)
    throw InvalidArgument("synthetic config counts must be positive");
  if (!(cfg.cluster_std >= 0.0) || !(cfg.id_mean_scale > 0.0) || !(cfg.ood_shift >= 0.0))
    throw InvalidArgument("synthetic config scales must be non-negative");

  Rng rng(cfg.seed);
  const std::size_t d = cfg.input_dim;
  std::vector<Vector> id_means;
  for (std::size_t k = 0; k < cfg.classes; ++k)
    id_means.push_back(detail::point_on_sphere(rng, d, cfg.id_mean_scale));

  std::vector<Vector> ood_means;
  for (std::size_t c = 0; c < cfg.n_ood_clusters; ++c) {
    bool placed = false;
    for (std::size_t attempt = 0; attempt < kMaxRejectionTries && !placed; ++attempt) {
      auto cand = detail::point_on_sphere(rng, d, cfg.id_mean_scale);
      bool ok = true;
      for (const auto& mu : id_means) {
        Vector diff(d);
        for (std::size_t i = 0; i < d; ++i) diff[i] = cand[i] - mu[i];
        if (norm2(diff) < cfg.ood_shift) {
          ok = false;
          break;
        }
      }
      if (ok) {
        ood_means.push_back(std::move(cand));
        placed = true;
      }
    }
    if (!placed) {
      throw InfeasibleConfigError("could not place OOD cluster " + std::to_string(c) + " at distance " +
                                  std::to_string(cfg.ood_shift) + " after " +
                                  std::to_string(kMaxRejectionTries) + " tries");
    }
  }

  const std::size_t n_train = cfg.n_per_class * 8 / 10;
  const std::size_t n_test = cfg.n_per_class - n_train;
  auto draw = [&](const Vector& mu, std::span<double> out) {
    for (std::size_t i = 0; i < d; ++i) out[i] = mu[i] + cfg.cluster_std * rng.gaussian();
  };

  SyntheticSplits s;
  s.train = {Matrix(n_train * cfg.classes, d), {}, Split::train};
  s.test_id = {Matrix(n_test * cfg.classes, d), {}, Split::test_id};
  s.test_ood = {Matrix(n_test * cfg.n_ood_clusters, d), {}, Split::test_ood};
  std::size_t tr = 0, te = 0;
  for (std::size_t k = 0; k < cfg.classes; ++k) {
    for (std::size_t i = 0; i < cfg.n_per_class; ++i) {
      if (i < n_train) {
        draw(id_means[k], s.train.x.row(tr++));
        s.train.y.push_back(static_cast<int>(k));
      } else {
        draw(id_means[k], s.test_id.x.row(te++));
        s.test_id.y.push_back(static_cast<int>(k));
      }
    }
  }
  std::size_t oo = 0;
  for (const auto& mu : ood_means) {
    for (std::size_t i = 0; i < n_test; ++i) {
      draw(mu, s.test_ood.x.row(oo++));
      s.test_ood.y.push_back(kOodLabel);
    }
  }
  return s;
}

// Confusion matrices A_m and Bayes posteriors f used to synthesize pseudo-label
// vectors p_m = A_m f exactly.
struct GenerativeFixture {
  std::vector<Matrix> a_list;
  std::vector<Vector> f_table;

  std::size_t blocks() const noexcept { return a_list.size(); }
  std::size_t classes() const noexcept { return a_list.empty() ? 0 : a_list.front().rows(); }

  // [A_1 f; ...; A_M f]
  Vector stacked(std::span<const double> f) const {
    Vector p;
    for (const auto& a : a_list) {
      const auto pm = matvec(a, f);
      p.insert(p.end(), pm.begin(), pm.end());
    }
    return p;
  }
};

inline constexpr double kFixtureMixing = 0.3;
inline constexpr double kFixtureMaxCondition = 1e6;

inline double condition_number_1(const Matrix& a) {
  auto norm1 = [](const Matrix& m) {
    double worst = 0.0;
    for (std::size_t j = 0; j < m.cols(); ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < m.rows(); ++i) s += std::abs(m(i, j));
      worst = std::max(worst, s);
    }
    return worst;
  };
  return norm1(a) * norm1(exact_inverse(a));
}

inline Vector random_simplex_point(Rng& rng, std::size_t k) {
  Vector v(k);
  double s = 0.0;
  for (double& x : v) {
    x = -std::log(1.0 - rng.uniform());
    s += x;
  }
  for (double& x : v) x /= s;
  return v;
}

// A_m = (1 - alpha) I + alpha S_m with S_m random column-stochastic. For
// alpha < 1/2 each A_m is strictly diagonally dominant by columns, hence
// invertible. f_table holds one random posterior per class.
inline GenerativeFixture gen_fixture(std::size_t m, std::size_t k, std::uint64_t seed,
                                     double alpha = kFixtureMixing) {
  if (k < 2 || m < 1) throw InvalidArgument("fixture needs K >= 2 and M >= 1");
  Rng rng(seed);
  GenerativeFixture fx;
  for (std::size_t b = 0; b < m; ++b) {
    Matrix a = Matrix::identity(k);
    for (std::size_t j = 0; j < k; ++j) {
      const auto col = random_simplex_point(rng, k);
      for (std::size_t i = 0; i < k; ++i) a(i, j) = (1.0 - alpha) * a(i, j) + alpha * col[i];
    }
    if (!(condition_number_1(a) < kFixtureMaxCondition))
      throw SingularMatrixError("fixture confusion matrix is ill-conditioned");
    fx.a_list.push_back(std::move(a));
  }
  for (std::size_t c = 0; c < k; ++c) fx.f_table.push_back(random_simplex_point(rng, k));
  return fx;
}

// ---------------------------------------------------------------------------
// Binary container

inline constexpr std::array<char, 4> kMagic{'P', 'R', 'S', 'M'};
inline constexpr std::uint16_t kFormatVersion = 1;

struct NamedTensor {
  std::string name;
  std::vector<std::uint32_t> dims;
  Vector data;

  bool operator==(const NamedTensor&) const = default;
};

namespace detail {
template <typename T>
void put_le(std::string& out, T v) {
  static_assert(std::is_unsigned_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(std::string bytes) : b_(std::move(bytes)) {}
  bool done() const { return pos_ == b_.size(); }
  template <typename T>
  T get() {
    if (b_.size() - pos_ < sizeof(T)) throw LengthError("container truncated at byte " + std::to_string(pos_));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      v |= static_cast<T>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
    pos_ += sizeof(T);
    return v;
  }
  std::string bytes(std::size_t n) {
    if (b_.size() - pos_ < n) throw LengthError("container truncated at byte " + std::to_string(pos_));
    auto s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  std::string b_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to '" + path + "'");
}
}  // namespace detail

inline std::string encode_container(std::span<const NamedTensor> tensors) {
  std::string out(kMagic.begin(), kMagic.end());
  detail::put_le<std::uint16_t>(out, kFormatVersion);
  for (const auto& t : tensors) {
    if (t.name.size() > UINT16_MAX) throw InvalidArgument("tensor name too long");
    if (t.dims.size() > UINT8_MAX) throw InvalidArgument("tensor rank too large");
    std::size_t count = 1;
    for (auto d : t.dims) count *= d;
    if (count != t.data.size()) throw DimensionError("tensor '" + t.name + "' dims do not match payload");
    detail::put_le<std::uint16_t>(out, static_cast<std::uint16_t>(t.name.size()));
    out += t.name;
    detail::put_le<std::uint8_t>(out, static_cast<std::uint8_t>(t.dims.size()));
    for (auto d : t.dims) detail::put_le<std::uint32_t>(out, d);
    for (double v : t.data) detail::put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

inline std::vector<NamedTensor> decode_container(std::string bytes) {
  if (bytes.size() < kMagic.size() || !std::equal(kMagic.begin(), kMagic.end(), bytes.begin()))
    throw FormatError("bad magic, not a PRSM container");
  detail::Reader r(std::move(bytes));
  r.bytes(kMagic.size());
  const auto version = r.get<std::uint16_t>();
  if (version != kFormatVersion)
    throw VersionError("container version " + std::to_string(version) + ", expected " +
                       std::to_string(kFormatVersion));
  std::vector<NamedTensor> out;
  while (!r.done()) {
    NamedTensor t;
    const auto name_len = r.get<std::uint16_t>();
    t.name = r.bytes(name_len);
    const auto rank = r.get<std::uint8_t>();
    std::size_t count = 1;
    for (std::uint8_t i = 0; i < rank; ++i) {
      t.dims.push_back(r.get<std::uint32_t>());
      count *= t.dims.back();
    }
    t.data.resize(count);
    for (auto& v : t.data) v = std::bit_cast<double>(r.get<std::uint64_t>());
    out.push_back(std::move(t));
  }
  return out;
}

inline void save_container(const std::string& path, std::span<const NamedTensor> tensors) {
  detail::write_file(path, encode_container(tensors));
}

inline std::vector<NamedTensor> load_container(const std::string& path) {
  return decode_container(detail::read_file(path));
}

namespace detail {
inline const NamedTensor& find(std::span<const NamedTensor> ts, std::string_view name) {
  for (const auto& t : ts)
    if (t.name == name) return t;
  throw LengthError("container is missing tensor '" + std::string(name) + "'");
}

inline std::size_t as_count(double v, std::string_view what) {
  if (!(v >= 0.0) || v != std::floor(v) || v > 1e9)
    throw FormatError("bad count for " + std::string(what));
  return static_cast<std::size_t>(v);
}
}  // namespace detail

// Dataset tensors: "X" (N x D), "y" (N), "split" (1; 0 train, 1 test_id, 2 test_ood).
inline std::vector<NamedTensor> dataset_tensors(const Dataset& ds) {
  Vector y(ds.y.begin(), ds.y.end());
  return {
      {"X", {static_cast<std::uint32_t>(ds.x.rows()), static_cast<std::uint32_t>(ds.x.cols())}, ds.x.data()},
      {"y", {static_cast<std::uint32_t>(ds.y.size())}, std::move(y)},
      {"split", {1}, {static_cast<double>(static_cast<int>(ds.split))}},
  };
}

inline void save_dataset(const std::string& path, const Dataset& ds) {
  save_container(path, dataset_tensors(ds));
}

inline Dataset load_dataset(const std::string& path) {
  const auto ts = load_container(path);
  const auto& x = detail::find(ts, "X");
  const auto& y = detail::find(ts, "y");
  const auto& split = detail::find(ts, "split");
  if (x.dims.size() != 2 || y.dims.size() != 1 || y.dims[0] != x.dims[0] || split.data.size() != 1)
    throw FormatError("dataset tensors have inconsistent shapes");
  Dataset ds;
  ds.x = Matrix(x.dims[0], x.dims[1], x.data);
  if (!all_finite(ds.x.flat())) throw FormatError("dataset has non-finite features");
  for (double v : y.data) {
    if (v != std::floor(v)) throw FormatError("non-integer label");
    ds.y.push_back(static_cast<int>(v));
  }
  const auto s = detail::as_count(split.data[0], "split");
  if (s > 2) throw FormatError("bad split code");
  ds.split = static_cast<Split>(s);
  return ds;
}

// Checkpoint tensors: every parameter under its visit_tensors name plus
// "meta.layers" [D, hidden..., L], "meta.mk" [M, K], "meta.variant" [index].
inline std::vector<NamedTensor> checkpoint_tensors(const PrismModel& model) {
  std::vector<NamedTensor> ts;
  Vector layers;
  for (auto s : model.dims.layer_sizes()) layers.push_back(static_cast<double>(s));
  ts.push_back({"meta.layers", {static_cast<std::uint32_t>(layers.size())}, layers});
  ts.push_back({"meta.mk", {2}, {double(model.dims.pseudo_labels), double(model.dims.classes)}});
  ts.push_back({"meta.variant", {1}, {double(static_cast<int>(model.variant))}});
  visit_tensors(model.params, [&](ParamGroup, const std::string& name, std::span<const double> t) {
    ts.push_back({name, {static_cast<std::uint32_t>(t.size())}, Vector(t.begin(), t.end())});
  });
  return ts;
}

inline void save_checkpoint(const std::string& path, const PrismModel& model) {
  save_container(path, checkpoint_tensors(model));
}

inline PrismModel load_checkpoint(const std::string& path) {
  const auto ts = load_container(path);
  const auto& layers = detail::find(ts, "meta.layers").data;
  const auto& mk = detail::find(ts, "meta.mk").data;
  const auto& variant = detail::find(ts, "meta.variant").data;
  if (layers.size() < 2 || mk.size() != 2 || variant.size() != 1)
    throw FormatError("checkpoint metadata malformed");
  ModelDims dims;
  dims.input = detail::as_count(layers.front(), "input dim");
  dims.embed = detail::as_count(layers.back(), "embed dim");
  dims.hidden.clear();
  for (std::size_t i = 1; i + 1 < layers.size(); ++i) dims.hidden.push_back(detail::as_count(layers[i], "hidden"));
  dims.pseudo_labels = detail::as_count(mk[0], "M");
  dims.classes = detail::as_count(mk[1], "K");
  const auto v = detail::as_count(variant[0], "variant");
  if (v > static_cast<std::size_t>(InitVariant::linear_d)) throw FormatError("unknown variant code");
  // Build the shapes, then overwrite every tensor from the file.
  PrismModel model = init_model(dims, static_cast<InitVariant>(v), 0);
  visit_tensors(model.params, [&](ParamGroup, const std::string& name, std::span<double> t) {
    const auto& src = detail::find(ts, name);
    if (src.data.size() != t.size()) throw LengthError("tensor '" + name + "' has wrong length");
    std::copy(src.data.begin(), src.data.end(), t.begin());
  });
  return model;
}

// ---------------------------------------------------------------------------
// Score files

struct ScoreRecord {
  std::uint64_t sample_id = 0;
  Split split = Split::test_id;
  double score = 0.0;

  bool operator==(const ScoreRecord&) const = default;
};

inline std::string format_score(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

inline std::string encode_scores(std::span<const ScoreRecord> records) {
  std::string out;
  for (const auto& r : records) {
    out += std::to_string(r.sample_id);
    out += ',';
    out += to_string(r.split);
    out += ',';
    out += format_score(r.score);
    out += '\n';
  }
  return out;
}

inline std::vector<ScoreRecord> decode_scores(const std::string& text) {
  std::vector<ScoreRecord> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto c1 = line.find(',');
    const auto c2 = c1 == std::string::npos ? c1 : line.find(',', c1 + 1);
    if (c2 == std::string::npos) throw FormatError("score line " + std::to_string(lineno) + " malformed");
    ScoreRecord r;
    try {
      std::size_t used = 0;
      r.sample_id = std::stoull(line.substr(0, c1), &used);
      if (used != c1) throw FormatError("bad id");
      r.split = parse_split(line.substr(c1 + 1, c2 - c1 - 1));
      const auto tail = line.substr(c2 + 1);
      r.score = std::stod(tail, &used);
      if (used != tail.size()) throw FormatError("bad score");
    } catch (const std::logic_error&) {
      throw FormatError("score line " + std::to_string(lineno) + " malformed");
    } catch (const Error&) {
      throw FormatError("score line " + std::to_string(lineno) + " malformed");
    }
    out.push_back(r);
  }
  if (!text.empty() && text.back() != '\n') throw LengthError("score file truncated mid-record");
  return out;
}

inline void save_scores(const std::string& path, std::span<const ScoreRecord> records) {
  detail::write_file(path, encode_scores(records));
}

inline std::vector<ScoreRecord> load_scores(const std::string& path) {
  return decode_scores(detail::read_file(path));
}

inline Vector score_values(std::span<const ScoreRecord> records) {
  Vector v;
  v.reserve(records.size());
  for (const auto& r : records) v.push_back(r.score);
  return v;
}

}  // namespace prism
