#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "gtnrec/sparse.hpp"
#include "gtnrec/tensor.hpp"

namespace gtnrec {

struct RatingRecord {
  std::string user;
  std::string item;
  double rating = 0.0;  // in [1, 5]
};

struct TrustRecord {
  std::string trustor;
  std::string trustee;
};

/// Counters for rows the loaders repaired or dropped.
struct LoadStats {
  std::size_t duplicate_ratings = 0;  // (user, item) seen more than once
  std::size_t self_trust = 0;         // trustor == trustee, dropped
};

/// Parses `user,item,rating` CSV. Duplicate (user, item) pairs collapse to
/// the last occurrence, keeping the first occurrence's position.
std::vector<RatingRecord> load_ratings(const std::string& path, LoadStats* stats = nullptr);

/// Parses `trustor,trustee` CSV. Self-loops are dropped and counted.
std::vector<TrustRecord> load_trust(const std::string& path, LoadStats* stats = nullptr);

/// Maps opaque external ids to dense internal node ids. Users occupy
/// [0, n_users), items [n_users, n_nodes). Assignment order is first
/// appearance (ratings scanned before trust records), so the mapping is
/// stable for fixed input files.
class NodeIndex {
 public:
  NodeIndex() = default;

  std::uint32_t add_user(const std::string& ext);
  std::uint32_t add_item(const std::string& ext);

  std::size_t n_users() const noexcept { return users_.size(); }
  std::size_t n_items() const noexcept { return items_.size(); }
  std::size_t n_nodes() const noexcept { return users_.size() + items_.size(); }

  /// Internal user id, or npos when unknown.
  std::uint32_t user_id(const std::string& ext) const;
  /// Global internal item id (already offset by n_users), or npos.
  std::uint32_t item_id(const std::string& ext) const;

  const std::string& user_name(std::uint32_t internal) const { return users_[internal]; }
  const std::string& item_name(std::uint32_t global) const {
    return items_[global - users_.size()];
  }

  static constexpr std::uint32_t npos = 0xFFFFFFFFu;

 private:
  std::vector<std::string> users_;
  std::vector<std::string> items_;
  std::unordered_map<std::string, std::uint32_t> user_at_;
  std::unordered_map<std::string, std::uint32_t> item_at_;
};

/// Node universe covering every user/item in the given records. Built over
/// ALL ratings (not just the train split) so evaluation-only nodes still
/// receive embeddings; they simply end up edgeless (cold).
NodeIndex build_node_index(const std::vector<RatingRecord>& ratings,
                           const std::vector<TrustRecord>& trust);

/// Homogeneous user (+) item graph: one node space, binary undirected
/// edges from ratings (user-item) and trust records (user-user, both
/// symmetrized), no explicit self-loops. Rating values never weight
/// edges; they only appear as supervision targets.
struct Graph {
  NodeIndex index;
  SparseMatrix adjacency;       // n x n, symmetric, zero diagonal, values 1.0
  std::vector<double> degrees;  // weighted degree = row sum of adjacency
  Tensor features;              // n x c learnable embedding table (initial values)

  std::size_t n_nodes() const noexcept { return index.n_nodes(); }
};

/// Builds the graph over an explicit node universe. Only train-split
/// ratings should be passed as edges; the universe keeps val/test nodes
/// alive as isolated nodes.
Graph build_graph(NodeIndex index, const std::vector<RatingRecord>& train_ratings,
                  const std::vector<TrustRecord>& trust, std::size_t feature_dim,
                  std::uint64_t seed);

/// Convenience overload deriving the universe from the given records.
Graph build_graph(const std::vector<RatingRecord>& train_ratings,
                  const std::vector<TrustRecord>& trust, std::size_t feature_dim,
                  std::uint64_t seed);

/// Symmetric renormalization with self-loops: for D = degree matrix of
/// A + I, returns D^(-1/2) (A + I) D^(-1/2). Every row has at least the
/// diagonal entry, so attention masks built from the result are never
/// empty.
SparseMatrix normalize_adjacency(const Graph& g);

/// Gaussian(0, 0.1) embedding table, n_nodes x feature_dim. The same
/// function (and seed stream) backs both Graph::features and model
/// initialization, so the two agree bitwise for matching dims.
Tensor init_features(std::size_t n_nodes, std::size_t feature_dim, std::uint64_t seed);

struct SplitSet {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
  std::uint64_t seed = 0;
};

/// Seeded uniform shuffle, then a contiguous 60/20/20 cut of rating
/// indices. Requires at least 5 ratings.
SplitSet split(const std::vector<RatingRecord>& ratings, std::uint64_t seed);

void save_splits(const SplitSet& s, const std::string& path);
SplitSet load_splits(const std::string& path);

}  // namespace gtnrec
