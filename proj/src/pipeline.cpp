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

#include "lungvit/pipeline.hpp"

#include <cmath>

#include "lungvit/audio.hpp"
#include "lungvit/common.hpp"

namespace lungvit {

PreparedIndex prepare_index(const std::vector<ManifestEntry>& entries) {
  PreparedIndex out;
  if (entries.empty()) warn("prepare: manifest lists no recordings; the index is empty");
  for (const auto& e : entries) {
    const std::string wav = e.wav.generic_string();
    try {
      const RecordingMeta meta = parse_filename(e.wav.filename().string());
      const auto cycles = read_annotation_file(e.annotation);
      const Waveform w = read_wav(e.wav);
      if (w.samples.empty()) throw ParseError("recording has no samples");
      for (const auto& c : cycles) {
        if (c.start_s >= w.duration_s()) {
          throw ParseError("cycle at " + std::to_string(c.start_s) + " s starts past the end of the recording");
        }
        out.records.push_back(CycleRecord{wav, c.start_s, c.end_s, c.crackle, c.wheeze,
                                          label_from_flags(c.crackle, c.wheeze), meta.patient_id, e.partition});
      }
      ++out.recordings;
    } catch (const Error& err) {
      out.skipped.push_back({wav, err.what()});
    }
  }
  return out;
}

CorpusStatistics index_statistics(std::span<const CycleRecord> records) {
  std::vector<LabeledCycle> cycles;
  cycles.reserve(records.size());
  for (const auto& r : records) {
    LabeledCycle c;
    c.meta = parse_filename(std::filesystem::path(r.wav).filename().string());
    c.annotation = {r.start_s, r.end_s, r.crackle, r.wheeze};
    c.label = r.label;
    cycles.push_back(std::move(c));
  }
  return corpus_statistics(cycles);
}

std::set<int> index_patients(std::span<const CycleRecord> records) {
  std::set<int> out;
  for (const auto& r : records) out.insert(r.patient);
  return out;
}

std::vector<Instance> load_instances(std::span<const CycleRecord> records, int sample_rate_hz,
                                     const std::function<bool(const CycleRecord&)>& keep) {
  // Index records are grouped by recording, so one decoded file at a time
  // suffices; a revisited file is decoded again.
  std::string current;
  Waveform audio;
  std::vector<Instance> out;
  for (const auto& r : records) {
    if (keep && !keep(r)) continue;
    if (r.wav != current) {
      audio = resample(read_wav(r.wav), sample_rate_hz);
      current = r.wav;
    }
    Instance inst;
    inst.audio = slice_cycle(audio, CycleAnnotation{r.start_s, r.end_s, r.crackle, r.wheeze});
    inst.label = static_cast<int>(r.label);
    inst.patient = r.patient;
    inst.id = std::filesystem::path(r.wav).stem().string() + "@" + std::to_string(std::llround(r.start_s * 1000)) + "ms";
    out.push_back(std::move(inst));
  }
  return out;
}

}  // namespace lungvit
