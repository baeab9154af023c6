#include "scvm/checkpoint.hpp"

#include <fstream>
#include <map>

#include "scvm/bytes.hpp"

namespace scvm {

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'S', 'C', 'V', 'M'};

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  json manifest = json::array();
  std::uint64_t offset = 0;
  for (const auto& t : ckpt.tensors) {
    if (t.values.size() != numel(t.shape)) {
      throw std::invalid_argument("checkpoint: tensor " + t.name + " has " + std::to_string(t.values.size()) +
                                  " values for shape " + to_string(t.shape));
    }
    manifest.push_back(
        {{"name", t.name}, {"dtype", "f32"}, {"shape", t.shape}, {"offset", offset}, {"frozen", t.frozen}});
    offset += 4 * t.values.size();
  }
  json header = {{"config", to_json(ckpt.config)},
                 {"phase", ckpt.phase},
                 {"step", ckpt.step},
                 {"optimizer_steps", ckpt.optimizer_steps},
                 {"tensors", manifest}};
  const std::string text = header.dump();

  ByteWriter w;
  w.raw(std::string_view(kMagic, 4));
  w.u32(kCheckpointVersion);
  w.u64(text.size());
  w.raw(text);
  for (const auto& t : ckpt.tensors) {
    for (float v : t.values) w.f32(v);
  }
  return w.take();
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
  ByteReader r(bytes, "checkpoint");
  if (r.raw(4) != std::string_view(kMagic, 4)) throw IoError("checkpoint: bad magic, not an SCVM checkpoint");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw IoError("checkpoint: format version " + std::to_string(version) + " is not supported (expected " +
                  std::to_string(kCheckpointVersion) + ")");
  }
  const std::uint64_t header_len = r.u64();
  json header;
  try {
    header = json::parse(r.raw(header_len));
  } catch (const json::exception& e) {
    throw IoError(std::string("checkpoint: corrupt header: ") + e.what());
  }

  Checkpoint ckpt;
  const std::size_t payload_start = r.position();
  try {
    ckpt.config = run_config_from_json(header.at("config"));
    ckpt.phase = header.at("phase").get<std::string>();
    ckpt.step = header.at("step").get<std::size_t>();
    ckpt.optimizer_steps = header.at("optimizer_steps").get<std::size_t>();
    for (const auto& entry : header.at("tensors")) {
      if (entry.at("dtype").get<std::string>() != "f32") throw IoError("checkpoint: unsupported dtype");
      NamedTensor t;
      t.name = entry.at("name").get<std::string>();
      t.shape = entry.at("shape").get<Shape>();
      t.frozen = entry.at("frozen").get<bool>();
      if (payload_start + entry.at("offset").get<std::uint64_t>() != r.position()) {
        throw IoError("checkpoint: tensor " + t.name + " offset does not match the payload layout");
      }
      t.values.resize(numel(t.shape));
      for (auto& v : t.values) v = r.f32();
      ckpt.tensors.push_back(std::move(t));
    }
  } catch (const json::exception& e) {
    throw IoError(std::string("checkpoint: malformed manifest: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw IoError(std::string("checkpoint: invalid stored config: ") + e.what());
  }
  if (!r.done()) throw IoError("checkpoint: trailing bytes after payload");
  return ckpt;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const std::string bytes = serialize_checkpoint(ckpt);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return deserialize_checkpoint(bytes);
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

Checkpoint capture_checkpoint(const Model<float>& model, const AdamW<float>* optimizer, const RunConfig& config,
                              std::string phase, std::size_t step) {
  Checkpoint ckpt;
  ckpt.config = config;
  ckpt.config.model = model.config();
  ckpt.phase = std::move(phase);
  ckpt.step = step;
  for (const auto& p : model.parameters().all()) {
    ckpt.tensors.push_back({p.name, p.tensor.shape(), p.frozen, p.tensor.to_vector()});
  }
  if (optimizer) {
    ckpt.optimizer_steps = optimizer->steps();
    for (const auto& [name, st] : optimizer->state()) {
      const Shape shape = model.parameters().get(name).tensor.shape();
      ckpt.tensors.push_back({"adam.m." + name, shape, true, st.m});
      ckpt.tensors.push_back({"adam.v." + name, shape, true, st.v});
    }
  }
  return ckpt;
}

Model<float> restore_model(const Checkpoint& ckpt) {
  Model<float> model(ckpt.config.model);
  std::size_t restored = 0;
  for (const auto& t : ckpt.tensors) {
    if (t.name.starts_with("adam.")) continue;
    if (!model.parameters().contains(t.name)) throw IoError("checkpoint: unknown parameter " + t.name);
    auto& p = model.parameters().get(t.name);
    if (p.tensor.shape() != t.shape) {
      throw IoError("checkpoint: parameter " + t.name + " has shape " + to_string(t.shape) + ", model expects " +
                    to_string(p.tensor.shape()));
    }
    std::copy(t.values.begin(), t.values.end(), p.tensor.mutable_data().begin());
    p.frozen = t.frozen;
    p.tensor.set_requires_grad(!t.frozen);
    ++restored;
  }
  if (restored != model.parameters().size()) {
    throw IoError("checkpoint: holds " + std::to_string(restored) + " parameters, model has " +
                  std::to_string(model.parameters().size()));
  }
  return model;
}

AdamW<float> restore_optimizer(const Checkpoint& ckpt) {
  const auto& t = ckpt.config.train;
  AdamW<float> opt(AdamWConfig{t.weight_decay, t.beta1, t.beta2, t.eps});
  opt.set_steps(ckpt.optimizer_steps);
  std::map<std::string, const NamedTensor*> m, v;
  for (const auto& nt : ckpt.tensors) {
    if (nt.name.starts_with("adam.m.")) m[nt.name.substr(7)] = &nt;
    if (nt.name.starts_with("adam.v.")) v[nt.name.substr(7)] = &nt;
  }
  for (const auto& [name, mt] : m) {
    auto it = v.find(name);
    if (it == v.end()) throw IoError("checkpoint: missing second moment for " + name);
    opt.state()[name] = AdamMoments<float>{mt->values, it->second->values};
  }
  return opt;
}

}  // namespace scvm
