// Copyright 2026 The lungvit Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "lungvit/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "lungvit/common.hpp"

namespace lungvit {

namespace {

constexpr char kMagic[4] = {'L', 'V', 'C', 'K'};
constexpr std::uint32_t kFormatVersion = 1;

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

Json shape_json(const Shape& s) {
  Json a = Json::array();
  for (auto d : s) a.push_back(d);
  return a;
}

void put_tensors(TensorArchive& a, const std::string& prefix, const ModelParams& p) {
  p.visit([&](const std::string& name, const Tensor& t) { a.tensors.emplace_back(prefix + name, t); });
}

// Moves tensors named prefix + <param name> into a ParamSet shaped for cfg.
ModelParams take_params(TensorArchive& a, const std::string& prefix, const ModelConfig& cfg,
                        const std::filesystem::path& path) {
  const auto shapes = param_shapes(cfg);
  std::vector<std::pair<std::string, Tensor>*> found;
  for (auto& entry : a.tensors) {
    if (entry.first.rfind(prefix, 0) == 0) found.push_back(&entry);
  }
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    const std::string want = prefix + shapes[i].first;
    if (i >= found.size()) {
      throw CheckpointError(path.string() + ": missing tensor " + want + " " + shape_string(shapes[i].second));
    }
    if (found[i]->first != want) {
      throw CheckpointError(path.string() + ": tensor " + std::to_string(i) + " is " + found[i]->first +
                            ", config expects " + want);
    }
    if (found[i]->second.shape() != shapes[i].second) {
      throw CheckpointError(path.string() + ": tensor " + want + " has shape " +
                            shape_string(found[i]->second.shape()) + ", config expects " +
                            shape_string(shapes[i].second));
    }
  }
  if (found.size() > shapes.size()) {
    throw CheckpointError(path.string() + ": unexpected tensor " + found[shapes.size()]->first);
  }
  ModelParams p;
  p.layers.resize(static_cast<std::size_t>(cfg.layers));
  std::size_t i = 0;
  p.visit([&](const std::string&, Tensor& t) { t = std::move(found[i++]->second); });
  return p;
}

}  // namespace

void write_archive(const std::filesystem::path& path, const TensorArchive& archive) {
  std::string payload;
  Json manifest = Json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : archive.tensors) {
    manifest.push_back(Json{{"name", name}, {"shape", shape_json(t.shape())}, {"offset", offset}});
    for (Scalar v : t.data()) {
      const double d = static_cast<double>(v);
      std::uint64_t bits;
      std::memcpy(&bits, &d, sizeof bits);
      put_u64(payload, bits);
    }
    offset += t.size();
  }
  Json header = archive.header;
  header["format_version"] = kFormatVersion;
  header["tensors"] = manifest;
  header["payload_fnv1a"] = hex64(fnv1a(payload));
  const std::string text = header.dump();

  std::string out(kMagic, 4);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((kFormatVersion >> (8 * i)) & 0xFF));
  put_u64(out, text.size());
  out += text;
  out += payload;

  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + tmp);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("failed writing " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

TensorArchive read_archive(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  const std::string bytes = ss.str();
  const auto* u = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw CheckpointError(path.string() + ": not a checkpoint (bad magic)");
  }
  const std::uint32_t version = static_cast<std::uint32_t>(u[4] | (u[5] << 8) | (u[6] << 16) | (u[7] << 24));
  if (version != kFormatVersion) {
    throw CheckpointError(path.string() + ": unsupported format version " + std::to_string(version));
  }
  const std::uint64_t header_len = get_u64(u + 8);
  if (header_len > bytes.size() - 16) throw CheckpointError(path.string() + ": truncated header");
  TensorArchive a;
  try {
    a.header = Json::parse(bytes.substr(16, header_len));
  } catch (const Json::parse_error& e) {
    throw CheckpointError(path.string() + ": corrupt header: " + e.what());
  }
  const std::string_view payload(bytes.data() + 16 + header_len, bytes.size() - 16 - header_len);
  if (a.header.value("payload_fnv1a", "") != hex64(fnv1a(payload))) {
    throw CheckpointError(path.string() + ": payload digest mismatch (file corrupt or truncated)");
  }
  const auto* p = reinterpret_cast<const unsigned char*>(payload.data());
  const std::size_t total = payload.size() / 8;
  try {
    for (const auto& entry : a.header.at("tensors")) {
      Shape shape;
      for (const auto& d : entry.at("shape")) shape.push_back(d.get<std::size_t>());
      const std::size_t offset = entry.at("offset").get<std::size_t>();
      const std::size_t n = shape_size(shape);
      if (offset + n > total) throw CheckpointError(path.string() + ": tensor data out of range");
      Tensor t(shape);
      for (std::size_t k = 0; k < n; ++k) {
        const std::uint64_t bits = get_u64(p + 8 * (offset + k));
        double d;
        std::memcpy(&d, &bits, sizeof d);
        t[k] = static_cast<Scalar>(d);
      }
      a.tensors.emplace_back(entry.at("name").get<std::string>(), std::move(t));
    }
  } catch (const Json::exception& e) {
    throw CheckpointError(path.string() + ": bad tensor manifest: " + e.what());
  }
  a.header.erase("tensors");
  return a;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  check_params(ckpt.params, ckpt.model);
  TensorArchive a;
  a.header = Json{{"kind", "model"},
                  {"model", to_json(ckpt.model)},
                  {"features", to_json(ckpt.features)},
                  {"norm", to_json(ckpt.norm)},
                  {"meta", ckpt.meta}};
  put_tensors(a, "", ckpt.params);
  write_archive(path, a);
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig* expected) {
  TensorArchive a = read_archive(path);
  Checkpoint c;
  try {
    c.model = model_config_from_json(a.header.at("model"));
    c.features = feature_config_from_json(a.header.at("features"));
    c.norm = norm_stats_from_json(a.header.at("norm"));
    c.meta = a.header.value("meta", Json::object());
  } catch (const Json::exception& e) {
    throw CheckpointError(path.string() + ": incomplete header: " + e.what());
  }
  c.params = take_params(a, "", expected ? *expected : c.model, path);
  return c;
}

void save_run_state(const std::filesystem::path& path, const RunState& s, const ModelConfig& cfg) {
  check_params(s.params, cfg);
  TensorArchive a;
  Json history = Json::array();
  auto opt = [](const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); };
  for (const auto& r : s.history) {
    history.push_back(Json{{"epoch", r.epoch},
                           {"loss", r.loss},
                           {"sensitivity", opt(r.sensitivity)},
                           {"specificity", opt(r.specificity)},
                           {"score", opt(r.score)},
                           {"uar", opt(r.uar)}});
  }
  a.header = Json{{"kind", "run_state"},   {"model", to_json(cfg)},          {"epoch", s.epoch},
                  {"step", s.optimizer.step}, {"history", history},            {"best_score", opt(s.best_score)},
                  {"best_epoch", s.best_epoch}, {"norm", to_json(s.norm)}};
  put_tensors(a, "params/", s.params);
  if (s.best_score) put_tensors(a, "best/", s.best_params);
  std::size_t i = 0;
  s.params.visit([&](const std::string& name, const Tensor&) {
    a.tensors.emplace_back("m/" + name, s.optimizer.m[i]);
    a.tensors.emplace_back("v/" + name, s.optimizer.v[i]);
    ++i;
  });
  write_archive(path, a);
}

RunState load_run_state(const std::filesystem::path& path, const ModelConfig& cfg) {
  TensorArchive a = read_archive(path);
  if (a.header.value("kind", "") != "run_state") throw CheckpointError(path.string() + ": not a run state file");
  RunState s;
  auto opt = [](const Json& v) { return v.is_null() ? std::optional<double>{} : std::optional<double>(v.get<double>()); };
  try {
    s.epoch = a.header.at("epoch").get<int>();
    s.optimizer.step = a.header.at("step").get<std::uint64_t>();
    for (const auto& r : a.header.at("history")) {
      EpochRecord rec;
      rec.epoch = r.at("epoch").get<int>();
      rec.loss = r.at("loss").get<double>();
      rec.sensitivity = opt(r.at("sensitivity"));
      rec.specificity = opt(r.at("specificity"));
      rec.score = opt(r.at("score"));
      rec.uar = opt(r.at("uar"));
      s.history.push_back(rec);
    }
    s.best_score = opt(a.header.at("best_score"));
    s.best_epoch = a.header.at("best_epoch").get<int>();
    s.norm = norm_stats_from_json(a.header.at("norm"));
  } catch (const Json::exception& e) {
    throw CheckpointError(path.string() + ": incomplete run state header: " + e.what());
  }
  // Split the interleaved optimizer moments back apart.
  TensorArchive params, best, moments_m, moments_v;
  for (auto& [name, t] : a.tensors) {
    if (name.rfind("params/", 0) == 0) params.tensors.emplace_back(name, std::move(t));
    else if (name.rfind("best/", 0) == 0) best.tensors.emplace_back(name, std::move(t));
    else if (name.rfind("m/", 0) == 0) moments_m.tensors.emplace_back(name, std::move(t));
    else if (name.rfind("v/", 0) == 0) moments_v.tensors.emplace_back(name, std::move(t));
    else throw CheckpointError(path.string() + ": unexpected tensor " + name);
  }
  s.params = take_params(params, "params/", cfg, path);
  if (s.best_score) s.best_params = take_params(best, "best/", cfg, path);
  ModelParams m = take_params(moments_m, "m/", cfg, path);
  ModelParams v = take_params(moments_v, "v/", cfg, path);
  m.visit([&](const std::string&, Tensor& t) { s.optimizer.m.push_back(std::move(t)); });
  v.visit([&](const std::string&, Tensor& t) { s.optimizer.v.push_back(std::move(t)); });
  return s;
}

}  // namespace lungvit
