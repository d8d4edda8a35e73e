#include "dpmix/data.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

#include "dpmix/kernels.hpp"
#include "dpmix/rng.hpp"

namespace dpmix {

namespace {

struct SparseRow {
  int label = 0;
  std::vector<std::pair<std::size_t, double>> entries;
};

[[noreturn]] void fail(std::size_t line_no, const std::string& what) {
  throw std::runtime_error("libsvm line " + std::to_string(line_no) + ": " + what);
}

double parse_double(std::string_view tok, std::size_t line_no) {
  // std::from_chars<double> handles "+1" poorly on older libstdc++; strip it.
  if (!tok.empty() && tok.front() == '+') tok.remove_prefix(1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size()) {
    fail(line_no, "bad number '" + std::string(tok) + "'");
  }
  return v;
}

std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    std::size_t j = i;
    while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j]))) ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

}  // namespace

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.d = d;
  out.features.reserve(indices.size() * d);
  out.labels.reserve(indices.size());
  for (std::size_t idx : indices) {
    auto r = row(idx);
    out.features.insert(out.features.end(), r.begin(), r.end());
    out.labels.push_back(labels[idx]);
  }
  return out;
}

double Dataset::max_row_norm() const {
  double best = 0.0;
  for (std::size_t i = 0; i < size(); ++i) best = std::max(best, simd::sum_sq(row(i)));
  return std::sqrt(best);
}

Dataset parse_libsvm(std::istream& in, ParseOptions opts) {
  std::vector<SparseRow> rows;
  std::size_t max_index = 0;
  bool any_index = false;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto toks = split_ws(line);
    if (toks.empty() || toks.front().front() == '#') continue;

    SparseRow row;
    const double label = parse_double(toks.front(), line_no);
    if (label == 1.0) {
      row.label = 1;
    } else if (label == -1.0 || label == 0.0) {
      row.label = -1;
    } else {
      fail(line_no, "label must be one of -1, 0, +1");
    }
    for (std::size_t k = 1; k < toks.size(); ++k) {
      const auto tok = toks[k];
      if (tok.front() == '#') break;  // trailing comment
      const auto colon = tok.find(':');
      if (colon == std::string_view::npos) fail(line_no, "expected idx:value, got '" + std::string(tok) + "'");
      std::size_t idx = 0;
      auto key = tok.substr(0, colon);
      auto [ptr, ec] = std::from_chars(key.data(), key.data() + key.size(), idx);
      if (ec != std::errc() || ptr != key.data() + key.size() || idx == 0) {
        fail(line_no, "feature index must be a positive integer");
      }
      const double v = parse_double(tok.substr(colon + 1), line_no);
      row.entries.emplace_back(idx - 1, v);
      max_index = std::max(max_index, idx - 1);
      any_index = true;
    }
    rows.push_back(std::move(row));
  }

  Dataset ds;
  ds.d = opts.dim ? *opts.dim : (any_index ? max_index + 1 : 0);
  if (opts.dim && any_index && max_index >= *opts.dim) {
    throw std::runtime_error("libsvm: feature index " + std::to_string(max_index + 1) +
                             " exceeds dimension " + std::to_string(*opts.dim));
  }
  ds.features.assign(rows.size() * ds.d, 0.0);
  ds.labels.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (auto [j, v] : rows[i].entries) ds.features[i * ds.d + j] = v;
    ds.labels.push_back(rows[i].label);
  }
  return ds;
}

Dataset load_libsvm(const std::filesystem::path& path, ParseOptions opts) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset " + path.string());
  return parse_libsvm(in, opts);
}

void write_libsvm(std::ostream& out, const Dataset& ds) {
  const auto old_prec = out.precision(std::numeric_limits<double>::max_digits10);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    out << (ds.labels[i] > 0 ? "+1" : "-1");
    auto r = ds.row(i);
    for (std::size_t j = 0; j < ds.d; ++j) {
      if (r[j] != 0.0) out << ' ' << (j + 1) << ':' << r[j];
    }
    out << '\n';
  }
  out.precision(old_prec);
}

void scale_features(Dataset& ds, double factor) {
  for (double& v : ds.features) v *= factor;
}

double scale_to_unit_max_norm(Dataset& ds) {
  const double n = ds.max_row_norm();
  if (n == 0.0) return 1.0;
  const double factor = 1.0 / n;
  scale_features(ds, factor);
  return factor;
}

std::size_t Sharding::max_shard_size() const {
  std::size_t best = 0;
  for (const auto& s : shards) best = std::max(best, s.size());
  return best;
}

std::vector<std::size_t> Sharding::assignment(std::size_t n) const {
  std::vector<std::size_t> owner(n, std::numeric_limits<std::size_t>::max());
  for (std::size_t a = 0; a < shards.size(); ++a) {
    for (std::size_t idx : shards[a]) owner.at(idx) = a;
  }
  return owner;
}

Sharding shard(const Dataset& ds, std::size_t m, ShardMode mode, std::uint64_t seed) {
  const std::size_t n = ds.size();
  if (m == 0) throw std::invalid_argument("shard: need at least one agent");
  if (m > n) {
    throw std::invalid_argument("shard: " + std::to_string(m) + " agents but only " +
                                std::to_string(n) + " samples");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  if (mode == ShardMode::iid) {
    auto rng = make_stream(seed, 0, 0, Purpose::shard);
    std::shuffle(order.begin(), order.end(), rng);
  } else {
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return ds.labels[a] < ds.labels[b]; });
  }
  Sharding out;
  out.mode = mode;
  out.shards.resize(m);
  const std::size_t base = n / m, extra = n % m;
  std::size_t pos = 0;
  for (std::size_t a = 0; a < m; ++a) {
    const std::size_t len = base + (a < extra ? 1 : 0);
    out.shards[a].assign(order.begin() + static_cast<std::ptrdiff_t>(pos),
                         order.begin() + static_cast<std::ptrdiff_t>(pos + len));
    pos += len;
  }
  return out;
}

Dataset synth_binary(std::size_t n, std::size_t d, double margin, std::uint64_t seed,
                     SynthOptions opts) {
  if (n == 0 || d == 0) throw std::invalid_argument("synth_binary: n and d must be positive");
  auto rng = make_stream(seed, 0, 0, Purpose::data);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  std::vector<double> w(d);
  for (double& e : w) e = normal(rng);
  double norm = std::sqrt(simd::scalar_table().sum_sq(w.data(), d));
  for (double& e : w) e /= norm;

  Dataset ds;
  ds.d = d;
  ds.features.resize(n * d);
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto r = ds.row(i);
    for (double& e : r) e = normal(rng);
    const double s = simd::scalar_table().dot(w.data(), r.data(), d);
    const int label = s >= 0.0 ? 1 : -1;
    if (std::abs(s) < margin) {
      const double shift = label * margin - s;
      for (std::size_t j = 0; j < d; ++j) r[j] += shift * w[j];
    }
    const bool flip = unif(rng) < opts.flip_rate;
    ds.labels[i] = flip ? -label : label;
  }
  return ds;
}

Split train_test_split(const Dataset& ds, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction >= 0.0 && test_fraction < 1.0)) {
    throw std::invalid_argument("test_fraction must lie in [0, 1)");
  }
  const std::size_t n = ds.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  auto rng = make_stream(seed, 0, 0, Purpose::split);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));
  if (test_fraction > 0.0 && n > 1) n_test = std::clamp<std::size_t>(n_test, 1, n - 1);
  std::span<const std::size_t> all(order);
  Split out;
  out.test = ds.subset(all.subspan(0, n_test));
  out.train = ds.subset(all.subspan(n_test));
  return out;
}

}  // namespace dpmix
