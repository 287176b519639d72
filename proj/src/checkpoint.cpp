#include "gtnrec/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "gtnrec/error.hpp"

namespace gtnrec {

namespace {

constexpr char kMagic[8] = {'G', 'T', 'N', 'R', 'C', 'K', 'P', '1'};

template <typename T>
void write_pod(std::ofstream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in, const std::string& path) {
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) {
    fail(ErrorKind::format, path + ": truncated checkpoint");
  }
  return value;
}

}  // namespace

void save_tensors(const std::string& path,
                  const std::vector<std::pair<std::string, const Tensor*>>& tensors) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot open " + path + " for writing");
  out.write(kMagic, sizeof(kMagic));
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, tensor] : tensors) {
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod<std::uint64_t>(out, tensor->rows());
    write_pod<std::uint64_t>(out, tensor->cols());
    out.write(reinterpret_cast<const char*>(tensor->data().data()),
              static_cast<std::streamsize>(tensor->size() * sizeof(double)));
  }
  if (!out) fail(ErrorKind::io, "write failed for " + path);
}

std::map<std::string, Tensor> load_tensors(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open checkpoint " + path);
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    fail(ErrorKind::format, path + ": not a checkpoint file");
  }
  auto count = read_pod<std::uint32_t>(in, path);
  std::map<std::string, Tensor> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    auto name_len = read_pod<std::uint32_t>(in, path);
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) fail(ErrorKind::format, path + ": truncated name");
    auto rows = read_pod<std::uint64_t>(in, path);
    auto cols = read_pod<std::uint64_t>(in, path);
    Tensor t(rows, cols);
    if (!in.read(reinterpret_cast<char*>(t.data().data()),
                 static_cast<std::streamsize>(t.size() * sizeof(double)))) {
      fail(ErrorKind::format, path + ": truncated tensor data for " + name);
    }
    out.emplace(std::move(name), std::move(t));
  }
  return out;
}

void save_model(const std::string& dir, const Model& model, std::uint64_t seed) {
  std::vector<std::pair<std::string, const Tensor*>> tensors;
  // visit_params takes a mutable model; collection does not modify it
  Model& mutable_model = const_cast<Model&>(model);
  visit_params(mutable_model, [&](const std::string& name, Tensor& t) {
    tensors.emplace_back(name, &t);
  });
  save_tensors(dir + "/ckpt_best.bin", tensors);

  nlohmann::json j;
  j["kind"] = model_kind(model);
  j["seed"] = seed;
  if (const auto* pmf = std::get_if<PMFModel>(&model)) {
    j["n_users"] = pmf->n_users;
    j["n_items"] = pmf->n_items;
    j["pmf_k"] = pmf->k;
    j["pmf_lambda"] = pmf->lambda;
  } else {
    const ModelDims& dims = std::holds_alternative<GTNModel>(model)
                                ? std::get<GTNModel>(model).dims
                                : std::get<GCNModel>(model).dims;
    j["n_nodes"] = dims.n_nodes;
    j["n_users"] = dims.n_users;
    j["n_items"] = dims.n_items;
    j["hidden_dim"] = dims.hidden;
    j["gc_layers"] = dims.gc_layers;
    j["encoder_layers"] = dims.encoder_layers;
    j["heads"] = dims.heads;
    j["d_head"] = dims.head_dim();
    j["d_ff"] = dims.ffn_dim();
    j["residual"] = dims.residual;
  }
  std::ofstream out(dir + "/model.json");
  if (!out) fail(ErrorKind::io, "cannot write " + dir + "/model.json");
  out << j.dump(2) << '\n';
}

Model load_model(const std::string& dir) {
  std::ifstream in(dir + "/model.json");
  if (!in) fail(ErrorKind::io, "cannot open " + dir + "/model.json");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::format, dir + "/model.json: " + e.what());
  }

  Model model;
  try {
    std::string kind = j.at("kind").get<std::string>();
    std::uint64_t seed = j.at("seed").get<std::uint64_t>();
    if (kind == "pmf") {
      model = PMFModel::init(j.at("n_users").get<std::size_t>(),
                             j.at("n_items").get<std::size_t>(),
                             j.at("pmf_k").get<std::size_t>(),
                             j.at("pmf_lambda").get<double>(), seed);
    } else {
      ModelDims dims;
      dims.n_nodes = j.at("n_nodes").get<std::size_t>();
      dims.n_users = j.at("n_users").get<std::size_t>();
      dims.n_items = j.at("n_items").get<std::size_t>();
      dims.hidden = j.at("hidden_dim").get<std::size_t>();
      dims.gc_layers = j.at("gc_layers").get<std::size_t>();
      dims.encoder_layers = j.at("encoder_layers").get<std::size_t>();
      dims.heads = j.at("heads").get<std::size_t>();
      dims.d_head = j.at("d_head").get<std::size_t>();
      dims.d_ff = j.at("d_ff").get<std::size_t>();
      dims.residual = j.at("residual").get<bool>();
      if (kind == "gtn") {
        model = GTNModel::init(dims, seed);
      } else if (kind == "gcn") {
        model = GCNModel::init(dims, seed);
      } else {
        fail(ErrorKind::format, dir + "/model.json: unknown kind '" + kind + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::format, dir + "/model.json: missing fields: " + e.what());
  }

  auto stored = load_tensors(dir + "/ckpt_best.bin");
  visit_params(model, [&](const std::string& name, Tensor& t) {
    auto it = stored.find(name);
    if (it == stored.end()) {
      fail(ErrorKind::format, dir + ": checkpoint is missing tensor '" + name + "'");
    }
    if (!it->second.same_shape(t)) {
      fail(ErrorKind::format, dir + ": tensor '" + name + "' has shape " +
                                  it->second.shape_str() + " but the manifest implies " +
                                  t.shape_str());
    }
    t = it->second;
  });
  return model;
}

}  // namespace gtnrec
