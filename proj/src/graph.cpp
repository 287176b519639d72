#include "gtnrec/graph.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <random>
#include <utility>

#include <nlohmann/json.hpp>

#include "gtnrec/error.hpp"
#include "gtnrec/rng.hpp"

namespace gtnrec {

namespace {

// Minimal CSV line splitter: ids are opaque strings without commas or
// quoting, which the interchange format guarantees.
std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    std::size_t pos = line.find(',', start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

std::string strip_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

double parse_rating(const std::string& text, const std::string& path, std::size_t lineno) {
  double value = 0.0;
  const char* first = text.data();
  const char* last = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last || text.empty()) {
    fail(ErrorKind::parse,
         path + ":" + std::to_string(lineno) + ": cannot parse rating '" + text + "'");
  }
  return value;
}

}  // namespace

std::vector<RatingRecord> load_ratings(const std::string& path, LoadStats* stats) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot open ratings file " + path);
  std::string line;
  if (!std::getline(in, line)) fail(ErrorKind::parse, path + ":1: empty file, expected header");
  if (strip_cr(line) != "user,item,rating") {
    fail(ErrorKind::parse, path + ":1: expected header 'user,item,rating', got '" + line + "'");
  }

  std::vector<RatingRecord> records;
  std::unordered_map<std::string, std::size_t> seen;  // "user\x1fitem" -> position
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    line = strip_cr(line);
    if (line.empty()) continue;
    auto fields = split_line(line);
    if (fields.size() != 3 || fields[0].empty() || fields[1].empty()) {
      fail(ErrorKind::parse, path + ":" + std::to_string(lineno) + ": expected 3 fields, got '" + line + "'");
    }
    double rating = parse_rating(fields[2], path, lineno);
    if (rating < 1.0 || rating > 5.0) {
      fail(ErrorKind::range, path + ":" + std::to_string(lineno) + ": rating " +
                                 fields[2] + " outside [1, 5]");
    }
    std::string key = fields[0] + '\x1f' + fields[1];
    auto it = seen.find(key);
    if (it != seen.end()) {
      // last occurrence wins, first occurrence keeps its position
      records[it->second].rating = rating;
      if (stats) ++stats->duplicate_ratings;
      continue;
    }
    seen.emplace(std::move(key), records.size());
    records.push_back(RatingRecord{std::move(fields[0]), std::move(fields[1]), rating});
  }
  return records;
}

std::vector<TrustRecord> load_trust(const std::string& path, LoadStats* stats) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot open trust file " + path);
  std::string line;
  if (!std::getline(in, line)) fail(ErrorKind::parse, path + ":1: empty file, expected header");
  if (strip_cr(line) != "trustor,trustee") {
    fail(ErrorKind::parse, path + ":1: expected header 'trustor,trustee', got '" + line + "'");
  }

  std::vector<TrustRecord> records;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    line = strip_cr(line);
    if (line.empty()) continue;
    auto fields = split_line(line);
    if (fields.size() != 2 || fields[0].empty() || fields[1].empty()) {
      fail(ErrorKind::parse, path + ":" + std::to_string(lineno) + ": expected 2 fields, got '" + line + "'");
    }
    if (fields[0] == fields[1]) {
      if (stats) ++stats->self_trust;
      continue;
    }
    records.push_back(TrustRecord{std::move(fields[0]), std::move(fields[1])});
  }
  return records;
}

std::uint32_t NodeIndex::add_user(const std::string& ext) {
  auto it = user_at_.find(ext);
  if (it != user_at_.end()) return it->second;
  std::uint32_t id = static_cast<std::uint32_t>(users_.size());
  user_at_.emplace(ext, id);
  users_.push_back(ext);
  return id;
}

std::uint32_t NodeIndex::add_item(const std::string& ext) {
  auto it = item_at_.find(ext);
  if (it != item_at_.end()) return it->second;
  std::uint32_t id = static_cast<std::uint32_t>(items_.size());
  item_at_.emplace(ext, id);
  items_.push_back(ext);
  return id;
}

std::uint32_t NodeIndex::user_id(const std::string& ext) const {
  auto it = user_at_.find(ext);
  return it == user_at_.end() ? npos : it->second;
}

std::uint32_t NodeIndex::item_id(const std::string& ext) const {
  auto it = item_at_.find(ext);
  if (it == item_at_.end()) return npos;
  return it->second + static_cast<std::uint32_t>(users_.size());
}

NodeIndex build_node_index(const std::vector<RatingRecord>& ratings,
                           const std::vector<TrustRecord>& trust) {
  NodeIndex index;
  for (const auto& r : ratings) {
    index.add_user(r.user);
    index.add_item(r.item);
  }
  for (const auto& t : trust) {
    index.add_user(t.trustor);
    index.add_user(t.trustee);
  }
  return index;
}

Graph build_graph(NodeIndex index, const std::vector<RatingRecord>& train_ratings,
                  const std::vector<TrustRecord>& trust, std::size_t feature_dim,
                  std::uint64_t seed) {
  if (feature_dim < 1) fail(ErrorKind::contract, "build_graph: feature_dim must be >= 1");
  std::size_t n = index.n_nodes();

  std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;
  edges.reserve(train_ratings.size() + trust.size());
  for (const auto& r : train_ratings) {
    std::uint32_t u = index.user_id(r.user);
    std::uint32_t i = index.item_id(r.item);
    if (u == NodeIndex::npos || i == NodeIndex::npos) {
      fail(ErrorKind::index, "build_graph: rating (" + r.user + ", " + r.item +
                                 ") references a node outside the universe");
    }
    edges.emplace_back(std::min(u, i), std::max(u, i));
  }
  for (const auto& t : trust) {
    std::uint32_t a = index.user_id(t.trustor);
    std::uint32_t b = index.user_id(t.trustee);
    if (a == NodeIndex::npos || b == NodeIndex::npos) {
      fail(ErrorKind::index, "build_graph: trust (" + t.trustor + ", " + t.trustee +
                                 ") references a user outside the universe");
    }
    if (a == b) continue;
    edges.emplace_back(std::min(a, b), std::max(a, b));
  }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());

  std::vector<std::size_t> ptr(n + 1, 0);
  for (const auto& [a, b] : edges) {
    ++ptr[a + 1];
    ++ptr[b + 1];
  }
  for (std::size_t i = 0; i < n; ++i) ptr[i + 1] += ptr[i];
  std::vector<std::uint32_t> col(edges.size() * 2);
  std::vector<std::size_t> cursor(ptr.begin(), ptr.end() - 1);
  for (const auto& [a, b] : edges) {
    col[cursor[a]++] = b;
    col[cursor[b]++] = a;
  }
  for (std::size_t i = 0; i < n; ++i) {
    std::sort(col.begin() + static_cast<std::ptrdiff_t>(ptr[i]),
              col.begin() + static_cast<std::ptrdiff_t>(ptr[i + 1]));
  }
  std::vector<double> val(col.size(), 1.0);

  Graph g;
  g.index = std::move(index);
  g.adjacency = SparseMatrix(n, n, std::move(ptr), std::move(col), std::move(val));
  g.degrees.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    double d = 0.0;
    for (std::size_t k = g.adjacency.row_begin(i); k < g.adjacency.row_end(i); ++k) {
      d += g.adjacency.value_at(k);
    }
    g.degrees[i] = d;
  }
  g.features = init_features(n, feature_dim, seed);
  return g;
}

Graph build_graph(const std::vector<RatingRecord>& train_ratings,
                  const std::vector<TrustRecord>& trust, std::size_t feature_dim,
                  std::uint64_t seed) {
  return build_graph(build_node_index(train_ratings, trust), train_ratings, trust,
                     feature_dim, seed);
}

SparseMatrix normalize_adjacency(const Graph& g) {
  const SparseMatrix& a = g.adjacency;
  std::size_t n = a.rows();
  std::vector<double> inv_sqrt(n);
  for (std::size_t i = 0; i < n; ++i) {
    inv_sqrt[i] = 1.0 / std::sqrt(g.degrees[i] + 1.0);  // degree matrix of A + I
  }
  std::vector<std::size_t> ptr(n + 1, 0);
  std::vector<std::uint32_t> col;
  std::vector<double> val;
  col.reserve(a.nnz() + n);
  val.reserve(a.nnz() + n);
  for (std::size_t i = 0; i < n; ++i) {
    bool diag_done = false;
    for (std::size_t k = a.row_begin(i); k < a.row_end(i); ++k) {
      std::uint32_t j = a.col_at(k);
      if (!diag_done && j > i) {
        col.push_back(static_cast<std::uint32_t>(i));
        val.push_back(inv_sqrt[i] * inv_sqrt[i]);
        diag_done = true;
      }
      col.push_back(j);
      val.push_back(a.value_at(k) * inv_sqrt[i] * inv_sqrt[j]);
    }
    if (!diag_done) {
      col.push_back(static_cast<std::uint32_t>(i));
      val.push_back(inv_sqrt[i] * inv_sqrt[i]);
    }
    ptr[i + 1] = col.size();
  }
  return SparseMatrix(n, n, std::move(ptr), std::move(col), std::move(val));
}

Tensor init_features(std::size_t n_nodes, std::size_t feature_dim, std::uint64_t seed) {
  if (feature_dim < 1) fail(ErrorKind::contract, "init_features: feature_dim must be >= 1");
  Tensor t(n_nodes, feature_dim);
  auto rng = make_rng(seed, kStreamFeatures);
  std::normal_distribution<double> gauss(0.0, 0.1);
  for (double& x : t.data()) x = gauss(rng);
  return t;
}

SplitSet split(const std::vector<RatingRecord>& ratings, std::uint64_t seed) {
  std::size_t n = ratings.size();
  if (n < 5) {
    fail(ErrorKind::too_small,
         "split: need at least 5 ratings, got " + std::to_string(n));
  }
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  auto rng = make_rng(seed, kStreamSplit);
  std::shuffle(idx.begin(), idx.end(), rng);

  std::size_t n_train = (n * 6) / 10;
  std::size_t n_val = (n * 2) / 10;
  SplitSet s;
  s.seed = seed;
  s.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.val.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train),
               idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  s.test.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), idx.end());
  return s;
}

void save_splits(const SplitSet& s, const std::string& path) {
  nlohmann::json j;
  j["seed"] = s.seed;
  j["train"] = s.train;
  j["val"] = s.val;
  j["test"] = s.test;
  std::ofstream out(path);
  if (!out) fail(ErrorKind::io, "cannot open " + path + " for writing");
  out << j.dump() << '\n';
}

SplitSet load_splits(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot open splits file " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::format, path + ": invalid splits json: " + e.what());
  }
  SplitSet s;
  try {
    s.seed = j.at("seed").get<std::uint64_t>();
    s.train = j.at("train").get<std::vector<std::size_t>>();
    s.val = j.at("val").get<std::vector<std::size_t>>();
    s.test = j.at("test").get<std::vector<std::size_t>>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::format, path + ": splits json missing fields: " + e.what());
  }
  return s;
}

}  // namespace gtnrec
