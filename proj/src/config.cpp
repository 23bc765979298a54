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

#include "lungvit/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "lungvit/common.hpp"

namespace lungvit {

namespace {

// Reads fields out of one JSON object and rejects the ones nobody asked for.
class ObjectReader {
 public:
  ObjectReader(const Json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError("config field '" + where_ + "' must be an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!it->is_boolean()) throw std::invalid_argument("expected a boolean");
      } else if constexpr (std::is_integral_v<T>) {
        if (!it->is_number_integer()) throw std::invalid_argument("expected an integer");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!it->is_number()) throw std::invalid_argument("expected a number");
      } else {
        if (!it->is_string()) throw std::invalid_argument("expected a string");
      }
      out = it->template get<T>();
    } catch (const std::exception& e) {
      throw ConfigError("config field '" + path(key) + "': " + e.what());
    }
  }

  const Json* child(const char* key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string path(const char* key) const { return where_.empty() ? key : where_ + "." + key; }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError("unknown config field '" + path(key.c_str()) + "'");
    }
  }

 private:
  const Json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

}  // namespace

Json to_json(const FeatureConfig& c) {
  return Json{{"sample_rate_hz", c.sample_rate_hz}, {"window_ms", c.window_ms}, {"hop_ms", c.hop_ms},
              {"fft_size", c.fft_size},             {"mel_bins", c.mel_bins},   {"fmin_hz", c.fmin_hz},
              {"fmax_hz", c.fmax_hz},               {"log_floor", c.log_floor}};
}

FeatureConfig feature_config_from_json(const Json& j, const std::string& where) {
  FeatureConfig c;
  ObjectReader r(j, where);
  r.get("sample_rate_hz", c.sample_rate_hz);
  r.get("window_ms", c.window_ms);
  r.get("hop_ms", c.hop_ms);
  r.get("fft_size", c.fft_size);
  r.get("mel_bins", c.mel_bins);
  r.get("fmin_hz", c.fmin_hz);
  r.get("fmax_hz", c.fmax_hz);
  r.get("log_floor", c.log_floor);
  r.finish();
  return c;
}

Json to_json(const ModelConfig& c) {
  return Json{{"layers", c.layers},       {"heads", c.heads},       {"embed_dim", c.embed_dim},
              {"mlp_dim", c.mlp_dim},     {"num_classes", c.num_classes}, {"mel_bins", c.mel_bins},
              {"frames", c.frames},       {"init_std", c.init_std}};
}

namespace {

void read_model_fields(ObjectReader& r, ModelConfig& c) {
  r.get("layers", c.layers);
  r.get("heads", c.heads);
  r.get("embed_dim", c.embed_dim);
  r.get("mlp_dim", c.mlp_dim);
  r.get("num_classes", c.num_classes);
  r.get("mel_bins", c.mel_bins);
  r.get("frames", c.frames);
  r.get("init_std", c.init_std);
}

}  // namespace

ModelConfig model_config_from_json(const Json& j, const std::string& where) {
  ModelConfig c;
  ObjectReader r(j, where);
  read_model_fields(r, c);
  r.finish();
  return c;
}

Json to_json(const TrainConfig& c) {
  return Json{{"batch_size", c.batch_size},
              {"epochs", c.epochs},
              {"learning_rate", c.learning_rate},
              {"optimizer", std::string(to_string(c.optimizer))},
              {"beta1", c.beta1},
              {"beta2", c.beta2},
              {"adam_eps", c.adam_eps},
              {"momentum", c.momentum},
              {"weight_decay", c.weight_decay},
              {"seed", c.seed},
              {"eval_every", c.eval_every},
              {"class_weighting", c.class_weighting}};
}

TrainConfig train_config_from_json(const Json& j, const std::string& where) {
  TrainConfig c;
  ObjectReader r(j, where);
  r.get("batch_size", c.batch_size);
  r.get("epochs", c.epochs);
  r.get("learning_rate", c.learning_rate);
  std::string opt(to_string(c.optimizer));
  r.get("optimizer", opt);
  c.optimizer = optimizer_from_name(opt);
  r.get("beta1", c.beta1);
  r.get("beta2", c.beta2);
  r.get("adam_eps", c.adam_eps);
  r.get("momentum", c.momentum);
  r.get("weight_decay", c.weight_decay);
  r.get("seed", c.seed);
  r.get("eval_every", c.eval_every);
  r.get("class_weighting", c.class_weighting);
  r.finish();
  return c;
}

Json to_json(const NormStats& s) {
  return Json{{"mean", s.mean}, {"std", s.std}, {"source", s.source == SplitRole::kTrain ? "train" : "eval"}};
}

NormStats norm_stats_from_json(const Json& j, const std::string& where) {
  NormStats s;
  ObjectReader r(j, where);
  r.get("mean", s.mean);
  r.get("std", s.std);
  std::string source = "train";
  r.get("source", source);
  if (source != "train" && source != "eval") throw ConfigError("config field '" + where + ".source' must be train or eval");
  s.source = source == "train" ? SplitRole::kTrain : SplitRole::kEval;
  r.finish();
  return s;
}

void RunConfig::resolve() {
  if (!(target_s > 0)) throw ConfigError("audio.target_s must be positive");
  if (!(eval_start_s >= 0)) throw ConfigError("audio.eval_start_s must be >= 0");
  features = lungvit::resolve(features);
  const FeatureExtractor fx(features);
  model.mel_bins = features.mel_bins;
  model.frames = static_cast<int>(fx.output_frames(target_length(duration_policy(), features.sample_rate_hz)));
  if (model.frames < static_cast<int>(PatchGrid::kPatch)) {
    throw ConfigError("audio.target_s gives " + std::to_string(model.frames) + " frames, fewer than one patch");
  }
  if (model_preset != "paper" && model_preset != "toy" && model_preset != "custom") {
    throw ConfigError("config field 'model.preset' must be paper, toy or custom");
  }
  const ModelConfig preset = model_preset == "toy" ? ModelConfig::toy(model.mel_bins, model.frames)
                                                   : ModelConfig::paper(model.mel_bins, model.frames);
  if (model_preset != "custom" && !(model == preset)) model_preset = "custom";
  model.validate();
  train.validate();
}

FixDurationPolicy RunConfig::duration_policy() const {
  return FixDurationPolicy{target_s, CropMode::kFixedStart, eval_start_s, 0};
}

Json to_json(const RunConfig& c) {
  Json model{{"preset", c.model_preset}};
  const Json fields = to_json(c.model);
  for (const auto& [k, v] : fields.items()) model[k] = v;
  return Json{{"data", {{"manifest", c.manifest}, {"root", c.data_root}, {"index", c.index}, {"cache_dir", c.cache_dir}}},
              {"audio", {{"target_s", c.target_s}, {"eval_start_s", c.eval_start_s}}},
              {"features", to_json(c.features)},
              {"model", model},
              {"train", to_json(c.train)},
              {"split", {{"ratio", to_string(c.split_ratio)}, {"seed", c.split_seed}}},
              {"output_dir", c.output_dir}};
}

RunConfig run_config_from_json(const Json& j) {
  RunConfig c;
  ObjectReader top(j, "");
  if (const Json* d = top.child("data")) {
    ObjectReader r(*d, "data");
    r.get("manifest", c.manifest);
    r.get("root", c.data_root);
    r.get("index", c.index);
    r.get("cache_dir", c.cache_dir);
    r.finish();
  }
  if (const Json* a = top.child("audio")) {
    ObjectReader r(*a, "audio");
    r.get("target_s", c.target_s);
    r.get("eval_start_s", c.eval_start_s);
    r.finish();
  }
  if (const Json* f = top.child("features")) c.features = feature_config_from_json(*f, "features");
  if (const Json* m = top.child("model")) {
    ObjectReader r(*m, "model");
    r.get("preset", c.model_preset);
    if (c.model_preset == "toy") c.model = ModelConfig::toy();
    read_model_fields(r, c.model);
    r.finish();
  }
  if (const Json* t = top.child("train")) c.train = train_config_from_json(*t, "train");
  if (const Json* s = top.child("split")) {
    ObjectReader r(*s, "split");
    std::string ratio = to_string(c.split_ratio);
    r.get("ratio", ratio);
    try {
      c.split_ratio = parse_split_ratio(ratio);
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("config field 'split.ratio': ") + e.what());
    }
    r.get("seed", c.split_seed);
    r.finish();
  }
  top.get("output_dir", c.output_dir);
  top.finish();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

void save_run_config(const std::filesystem::path& path, const RunConfig& c) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << to_json(c).dump(2) << '\n';
}

void apply_override(Json& j, std::string_view dotted, std::string_view value) {
  Json* node = &j;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = dotted.find('.', start);
    const std::string key(dotted.substr(start, dot == std::string_view::npos ? dotted.npos : dot - start));
    if (key.empty()) throw ConfigError("bad override key '" + std::string(dotted) + "'");
    if (dot == std::string_view::npos) {
      Json parsed = Json::parse(value, nullptr, false);
      (*node)[key] = parsed.is_discarded() ? Json(std::string(value)) : parsed;
      return;
    }
    node = &(*node)[key];
    if (!node->is_object()) {
      if (!node->is_null()) throw ConfigError("override '" + std::string(dotted) + "' descends into a non-object");
      *node = Json::object();
    }
    start = dot + 1;
  }
}

std::uint64_t feature_hash(const RunConfig& c) {
  Json j{{"features", to_json(c.features)}, {"target_s", c.target_s}};
  return fnv1a(j.dump());
}

}  // namespace lungvit
