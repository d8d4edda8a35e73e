#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

namespace dpmix {

/// Dense binary-classification dataset. Features are row-major n x d;
/// labels are +1 or -1.
struct Dataset {
  std::size_t d = 0;
  std::vector<double> features;
  std::vector<int> labels;

  std::size_t size() const noexcept { return labels.size(); }
  std::span<const double> row(std::size_t i) const { return {features.data() + i * d, d}; }
  std::span<double> row(std::size_t i) { return {features.data() + i * d, d}; }

  Dataset subset(std::span<const std::size_t> indices) const;
  double max_row_norm() const;
};

struct ParseOptions {
  // Feature dimension; inferred as max index + 1 when absent. Indices beyond
  // an explicit dimension are an error.
  std::optional<std::size_t> dim;
};

/// Parses LIBSVM text ("<label> <idx>:<val> ..." with 1-based indices).
/// Labels 0/1 are accepted with 0 mapped to -1. Blank lines and lines
/// starting with '#' are skipped. Errors name the offending line.
Dataset parse_libsvm(std::istream& in, ParseOptions opts = {});
Dataset load_libsvm(const std::filesystem::path& path, ParseOptions opts = {});

/// Writes LIBSVM text with round-trip float precision, omitting zeros.
void write_libsvm(std::ostream& out, const Dataset& ds);

/// Multiplies every feature by `factor`.
void scale_features(Dataset& ds, double factor);

/// Scales so that the largest row norm is 1. Returns the factor applied
/// (1 when every row is zero) so a held-out split can reuse it.
double scale_to_unit_max_norm(Dataset& ds);

enum class ShardMode { iid, label_sorted };

/// Partition of sample indices across agents.
struct Sharding {
  ShardMode mode = ShardMode::iid;
  std::vector<std::vector<std::size_t>> shards;

  std::size_t agents() const noexcept { return shards.size(); }
  std::size_t max_shard_size() const;
  // Agent owning each sample.
  std::vector<std::size_t> assignment(std::size_t n) const;
};

/// iid: seeded permutation, then contiguous near-equal blocks (the first
/// n mod m agents get one extra sample). label_sorted: stable sort by label,
/// then the same block split. Throws if m == 0 or m > n.
Sharding shard(const Dataset& ds, std::size_t m, ShardMode mode, std::uint64_t seed);

struct SynthOptions {
  double flip_rate = 0.05;
};

/// Gaussian features; labels from a random unit separator w, each sample
/// pushed to |w.a| >= margin on its side, then labels flipped with
/// probability flip_rate. Deterministic per seed.
Dataset synth_binary(std::size_t n, std::size_t d, double margin, std::uint64_t seed,
                     SynthOptions opts = {});

struct Split {
  Dataset train;
  Dataset test;
};

/// Deterministic shuffled split; `test_fraction` of the samples (rounded,
/// at least one when n > 1) go to the test set.
Split train_test_split(const Dataset& ds, double test_fraction, std::uint64_t seed);

}  // namespace dpmix
