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

#include "lungvit/dataset.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "lungvit/common.hpp"
#include "lungvit/rng.hpp"

namespace lungvit {

namespace {

constexpr std::array<std::string_view, 7> kLocations{"Tc", "Al", "Ar", "Pl", "Pr", "Ll", "Lr"};
constexpr std::array<std::string_view, kNumClasses> kClassNames{"Normal", "Crackle", "Wheeze", "Both"};

// Durations outside this window are reported but kept.
constexpr double kPlausibleMinS = 0.05;
constexpr double kPlausibleMaxS = 30.0;

std::vector<std::string_view> split(std::string_view text, char sep) {
  std::vector<std::string_view> parts;
  std::size_t begin = 0;
  for (;;) {
    const std::size_t pos = text.find(sep, begin);
    parts.push_back(text.substr(begin, pos - begin));
    if (pos == std::string_view::npos) break;
    begin = pos + 1;
  }
  return parts;
}

std::vector<std::string_view> split_whitespace(std::string_view line) {
  std::vector<std::string_view> cols;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    if (i >= line.size()) break;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    cols.push_back(line.substr(i, j - i));
    i = j;
  }
  return cols;
}

bool parse_double(std::string_view s, double& out) {
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end && std::isfinite(out);
}

bool parse_int(std::string_view s, int& out) {
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end;
}

std::string shortest(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::filesystem::path resolve(const std::filesystem::path& p, const std::filesystem::path& base) {
  if (p.is_absolute() || base.empty()) return p;
  return base / p;
}

}  // namespace

std::string_view to_string(ChestLocation loc) { return kLocations[static_cast<std::size_t>(loc)]; }

std::string_view to_string(AcquisitionMode mode) {
  return mode == AcquisitionMode::kSingleChannel ? "sc" : "mc";
}

std::string_view class_name(RespiratoryClass c) { return kClassNames[static_cast<std::size_t>(c)]; }

RespiratoryClass class_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kClassNames.size(); ++i) {
    if (kClassNames[i] == name) return static_cast<RespiratoryClass>(i);
  }
  throw ParseError("unknown class name '" + std::string(name) + "'");
}

RecordingMeta parse_filename(std::string_view name) {
  if (const auto slash = name.find_last_of("/\\"); slash != std::string_view::npos) {
    name.remove_prefix(slash + 1);
  }
  constexpr std::string_view kExt = ".wav";
  if (name.size() < kExt.size() || name.substr(name.size() - kExt.size()) != kExt) {
    throw ParseError("filename '" + std::string(name) + "': missing .wav extension");
  }
  const auto stem = name.substr(0, name.size() - kExt.size());
  const auto fields = split(stem, '_');
  if (fields.size() != 5) {
    throw ParseError("filename '" + std::string(name) + "': expected 5 underscore-separated fields, got " +
                     std::to_string(fields.size()));
  }
  RecordingMeta meta;
  if (!parse_int(fields[0], meta.patient_id) || meta.patient_id <= 0) {
    throw ParseError("filename '" + std::string(name) + "': patient id field '" + std::string(fields[0]) +
                     "' is not a positive integer");
  }
  if (fields[1].empty()) throw ParseError("filename '" + std::string(name) + "': empty recording index field");
  meta.recording_index = std::string(fields[1]);

  bool located = false;
  for (std::size_t i = 0; i < kLocations.size(); ++i) {
    if (fields[2] == kLocations[i]) {
      meta.chest_location = static_cast<ChestLocation>(i);
      located = true;
    }
  }
  if (!located) {
    throw ParseError("filename '" + std::string(name) + "': unknown chest location field '" +
                     std::string(fields[2]) + "'");
  }
  if (fields[3] == "sc") {
    meta.acquisition_mode = AcquisitionMode::kSingleChannel;
  } else if (fields[3] == "mc") {
    meta.acquisition_mode = AcquisitionMode::kMultiChannel;
  } else {
    throw ParseError("filename '" + std::string(name) + "': unknown acquisition mode field '" +
                     std::string(fields[3]) + "'");
  }
  if (fields[4].empty()) throw ParseError("filename '" + std::string(name) + "': empty equipment field");
  meta.equipment = std::string(fields[4]);
  return meta;
}

std::string format_filename(const RecordingMeta& meta) {
  return std::to_string(meta.patient_id) + "_" + meta.recording_index + "_" +
         std::string(to_string(meta.chest_location)) + "_" + std::string(to_string(meta.acquisition_mode)) + "_" +
         meta.equipment + ".wav";
}

std::vector<CycleAnnotation> parse_annotation_file(std::string_view text) {
  std::vector<CycleAnnotation> cycles;
  std::size_t line_no = 0;
  for (std::string_view line : split(text, '\n')) {
    ++line_no;
    const auto cols = split_whitespace(line);
    if (cols.empty()) continue;
    const std::string where = "annotation line " + std::to_string(line_no) + ": ";
    if (cols.size() != 4) {
      throw ParseError(where + "expected 4 columns, got " + std::to_string(cols.size()));
    }
    CycleAnnotation a;
    if (!parse_double(cols[0], a.start_s)) throw ParseError(where + "start '" + std::string(cols[0]) + "' is not numeric");
    if (!parse_double(cols[1], a.end_s)) throw ParseError(where + "end '" + std::string(cols[1]) + "' is not numeric");
    auto flag = [&where](std::string_view s, const char* what) {
      if (s == "0") return false;
      if (s == "1") return true;
      throw ParseError(where + what + " flag '" + std::string(s) + "' is not 0 or 1");
    };
    a.crackle = flag(cols[2], "crackle");
    a.wheeze = flag(cols[3], "wheeze");
    if (a.start_s < 0) throw ParseError(where + "negative start time");
    if (a.end_s <= a.start_s) throw ParseError(where + "end time must exceed start time");
    if (a.duration_s() < kPlausibleMinS || a.duration_s() > kPlausibleMaxS) {
      warn(where + "implausible cycle duration " + shortest(a.duration_s()) + " s");
    }
    cycles.push_back(a);
  }
  return cycles;
}

std::vector<CycleAnnotation> read_annotation_file(const std::filesystem::path& path) {
  try {
    return parse_annotation_file(read_text(path));
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

std::string format_annotation_file(std::span<const CycleAnnotation> cycles) {
  std::string out;
  for (const auto& c : cycles) {
    out += shortest(c.start_s) + '\t' + shortest(c.end_s) + '\t' + (c.crackle ? '1' : '0') + '\t' +
           (c.wheeze ? '1' : '0') + '\n';
  }
  return out;
}

RespiratoryClass label_from_flags(bool crackle, bool wheeze) {
  if (crackle && wheeze) return RespiratoryClass::kBoth;
  if (crackle) return RespiratoryClass::kCrackle;
  if (wheeze) return RespiratoryClass::kWheeze;
  return RespiratoryClass::kNormal;
}

SplitRatio parse_split_ratio(std::string_view text) {
  if (text == "60:40") return {60, 40};
  if (text == "80:20") return {80, 20};
  throw ConfigError("split ratio '" + std::string(text) + "' is not one of 60:40, 80:20");
}

std::string to_string(SplitRatio ratio) {
  return std::to_string(ratio.train_percent) + ":" + std::to_string(ratio.eval_percent);
}

SplitSpec build_subject_independent_split(const std::set<int>& patients, SplitRatio ratio, std::uint64_t seed) {
  if (patients.empty()) throw ContractError("subject-independent split needs at least one patient");
  if (!(ratio == SplitRatio{60, 40} || ratio == SplitRatio{80, 20})) {
    throw ConfigError("split ratio " + to_string(ratio) + " is not one of 60:40, 80:20");
  }
  std::vector<int> order(patients.begin(), patients.end());
  Rng rng(seed);
  rng.shuffle(std::span<int>(order));
  const std::size_t n = order.size();
  const std::size_t n_train = (static_cast<std::size_t>(ratio.train_percent) * n + 99) / 100;

  SplitSpec spec;
  spec.ratio = ratio;
  spec.seed = seed;
  spec.train_patients.insert(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  spec.eval_patients.insert(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  if (spec.eval_patients.empty()) {
    warn("split " + to_string(ratio) + " over " + std::to_string(n) + " patient(s) leaves the eval side empty");
  }
  return spec;
}

CorpusStatistics corpus_statistics(std::span<const LabeledCycle> cycles) {
  CorpusStatistics stats;
  stats.count = cycles.size();
  if (cycles.empty()) {
    warn("corpus statistics: no cycles, durations undefined");
    return stats;
  }
  std::set<int> patients;
  std::set<std::string> recordings;
  double lo = cycles.front().annotation.duration_s();
  double hi = lo;
  double total = 0;
  for (const auto& c : cycles) {
    ++stats.per_class[static_cast<std::size_t>(c.label)];
    patients.insert(c.meta.patient_id);
    recordings.insert(format_filename(c.meta));
    const double d = c.annotation.duration_s();
    lo = std::min(lo, d);
    hi = std::max(hi, d);
    total += d;
  }
  stats.patients = patients.size();
  stats.recordings = recordings.size();
  stats.min_duration_s = lo;
  stats.max_duration_s = hi;
  stats.mean_duration_s = total / static_cast<double>(cycles.size());
  return stats;
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path, const std::filesystem::path& root) {
  const std::string text = read_text(path);
  const auto base = root.empty() ? path.parent_path() : root;
  std::vector<ManifestEntry> entries;
  std::size_t line_no = 0;
  for (std::string_view line : split(text, '\n')) {
    ++line_no;
    if (split_whitespace(line).empty()) continue;
    const std::string where = path.string() + " line " + std::to_string(line_no) + ": ";
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(where + e.what());
    }
    if (!j.is_object() || !j.contains("wav") || !j["wav"].is_string() || !j.contains("annotation") ||
        !j["annotation"].is_string()) {
      throw ParseError(where + "expected an object with string fields \"wav\" and \"annotation\"");
    }
    ManifestEntry e;
    e.wav = resolve(j["wav"].get<std::string>(), base);
    e.annotation = resolve(j["annotation"].get<std::string>(), base);
    if (j.contains("partition")) e.partition = j["partition"].get<std::string>();
    entries.push_back(std::move(e));
  }
  return entries;
}

void write_manifest(const std::filesystem::path& path, std::span<const ManifestEntry> entries) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& e : entries) {
    nlohmann::json j{{"wav", e.wav.generic_string()}, {"annotation", e.annotation.generic_string()}};
    if (!e.partition.empty()) j["partition"] = e.partition;
    out << j.dump() << '\n';
  }
}

std::vector<CycleRecord> read_cycle_index(const std::filesystem::path& path) {
  const std::string text = read_text(path);
  std::vector<CycleRecord> records;
  std::size_t line_no = 0;
  for (std::string_view line : split(text, '\n')) {
    ++line_no;
    if (split_whitespace(line).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      CycleRecord r;
      r.wav = j.at("wav").get<std::string>();
      r.start_s = j.at("start_s").get<double>();
      r.end_s = j.at("end_s").get<double>();
      r.crackle = j.at("crackle").get<int>() != 0;
      r.wheeze = j.at("wheeze").get<int>() != 0;
      r.label = class_from_name(j.at("label").get<std::string>());
      r.patient = j.at("patient").get<int>();
      r.partition = j.value("partition", "");
      if (r.label != label_from_flags(r.crackle, r.wheeze)) {
        throw ParseError("label does not match crackle/wheeze flags");
      }
      records.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.string() + " line " + std::to_string(line_no) + ": " + e.what());
    } catch (const ParseError& e) {
      throw ParseError(path.string() + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return records;
}

void write_cycle_index(const std::filesystem::path& path, std::span<const CycleRecord> records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& r : records) {
    nlohmann::ordered_json j;
    j["wav"] = r.wav;
    j["start_s"] = r.start_s;
    j["end_s"] = r.end_s;
    j["crackle"] = r.crackle ? 1 : 0;
    j["wheeze"] = r.wheeze ? 1 : 0;
    j["label"] = std::string(class_name(r.label));
    j["patient"] = r.patient;
    if (!r.partition.empty()) j["partition"] = r.partition;
    out << j.dump() << '\n';
  }
}

}  // namespace lungvit
