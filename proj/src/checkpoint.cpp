#include "mpstr/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "mpstr/errors.hpp"

namespace mpstr {

namespace {

constexpr const char* kMagic = "MPSTR-CKPT 1";

static_assert(std::endian::native == std::endian::little, "checkpoint blob assumes a little-endian host");

struct Entry {
  std::string name;
  const Matrix<float>* data;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Model<float>& model, const nlohmann::json& train_config,
                     std::int64_t step, const Adam* adam) {
  std::vector<Entry> entries;
  const auto& ps = model.params().all();
  for (const auto& p : ps) entries.push_back({p->name, &p->value});
  if (adam != nullptr) {
    for (std::size_t i = 0; i < ps.size(); ++i) entries.push_back({"adam.m/" + ps[i]->name, &adam->first_moments()[i]});
    for (std::size_t i = 0; i < ps.size(); ++i) entries.push_back({"adam.v/" + ps[i]->name, &adam->second_moments()[i]});
  }

  nlohmann::json tensors = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const Entry& e : entries) {
    const std::uint64_t nbytes = e.data->size() * sizeof(float);
    tensors.push_back({{"name", e.name},
                       {"shape", {e.data->rows(), e.data->cols()}},
                       {"dtype", "f32"},
                       {"offset", offset},
                       {"nbytes", nbytes}});
    offset += nbytes;
  }
  nlohmann::json manifest = {{"model", model.config()},
                             {"train", train_config},
                             {"step", step},
                             {"tensors", tensors},
                             {"adam_steps", adam != nullptr ? adam->steps() : 0}};

  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + tmp.string());
    out << kMagic << '\n' << manifest.dump() << '\n';
    for (const Entry& e : entries) {
      out.write(reinterpret_cast<const char*>(e.data->data()), static_cast<std::streamsize>(e.data->size() * sizeof(float)));
    }
    if (!out) throw IoError("short write to checkpoint " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::string magic, header;
  if (!std::getline(in, magic) || magic != kMagic) throw IoError(path.string() + " is not a checkpoint (bad magic)");
  if (!std::getline(in, header)) throw IoError(path.string() + ": missing manifest");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": corrupt manifest: " + e.what());
  }
  const std::streamoff blob_start = in.tellg();
  in.seekg(0, std::ios::end);
  const std::uint64_t blob_size = static_cast<std::uint64_t>(in.tellg() - blob_start);

  ModelConfig cfg;
  try {
    manifest.at("model").get_to(cfg);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": bad model config: " + e.what());
  }
  LoadedCheckpoint out{Model<float>(cfg, 0), manifest.value("train", nlohmann::json::object()),
                       manifest.value("step", std::int64_t{0}), false, manifest.value("adam_steps", std::int64_t{0}),
                       {}, {}};

  auto read_into = [&](const nlohmann::json& t, Matrix<float>& dst) {
    const auto shape = t.at("shape").get<std::vector<int>>();
    const auto offset = t.at("offset").get<std::uint64_t>();
    const auto nbytes = t.at("nbytes").get<std::uint64_t>();
    const std::string name = t.at("name").get<std::string>();
    if (t.value("dtype", "") != "f32") throw IoError(path.string() + ": unsupported dtype for " + name);
    if (shape.size() != 2 || shape[0] != dst.rows() || shape[1] != dst.cols() || nbytes != dst.size() * sizeof(float)) {
      throw ShapeError(path.string() + ": tensor " + name + " does not match the model");
    }
    if (offset + nbytes > blob_size) throw IoError(path.string() + ": truncated tensor data for " + name);
    in.seekg(blob_start + static_cast<std::streamoff>(offset));
    in.read(reinterpret_cast<char*>(dst.data()), static_cast<std::streamsize>(nbytes));
    if (!in) throw IoError(path.string() + ": read failed for " + name);
  };

  std::map<std::string, const nlohmann::json*> by_name;
  for (const auto& t : manifest.at("tensors")) by_name[t.at("name").get<std::string>()] = &t;
  const auto& ps = out.model.params().all();
  for (const auto& p : ps) {
    auto it = by_name.find(p->name);
    if (it == by_name.end()) throw ShapeError(path.string() + ": missing tensor " + p->name);
    read_into(*it->second, p->value);
  }
  if (by_name.contains("adam.m/" + ps.front()->name)) {
    out.has_optimizer_state = true;
    for (const auto& p : ps) {
      Matrix<float> m(p->value.rows(), p->value.cols()), v(p->value.rows(), p->value.cols());
      auto mi = by_name.find("adam.m/" + p->name);
      auto vi = by_name.find("adam.v/" + p->name);
      if (mi == by_name.end() || vi == by_name.end()) throw ShapeError(path.string() + ": incomplete optimizer state");
      read_into(*mi->second, m);
      read_into(*vi->second, v);
      out.adam_m.push_back(std::move(m));
      out.adam_v.push_back(std::move(v));
    }
  }
  return out;
}

}  // namespace mpstr
