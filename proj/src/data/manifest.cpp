#include "maeface/data/manifest.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "maeface/data/image.hpp"
#include "maeface/error.hpp"

namespace maeface {

using nlohmann::json;

AULabels SampleRecord::labels() const {
  AULabels l;
  l.occurrence = occurrence;
  l.intensity = intensity;
  if (valid) {
    for (int v : *valid) l.valid.push_back(v != 0 ? 1 : 0);
  }
  return l;
}

std::string Manifest::image_path(const SampleRecord& r) const {
  std::filesystem::path p(r.image);
  if (p.is_absolute() || base_dir.empty()) return p.string();
  return (std::filesystem::path(base_dir) / p).string();
}

bool Manifest::has_intensity() const {
  return !records.empty() && std::all_of(records.begin(), records.end(), [](const SampleRecord& r) { return r.intensity.has_value(); });
}

bool Manifest::has_occurrence() const {
  return !records.empty() &&
         std::all_of(records.begin(), records.end(), [](const SampleRecord& r) { return r.occurrence.has_value(); });
}

namespace {

void check_record(const SampleRecord& r, std::size_t num_aus, std::size_t image_size, const std::string& where) {
  auto check_list = [&](const std::optional<std::vector<int>>& v, const char* field, int lo, int hi) {
    if (!v) return;
    if (v->size() != num_aus) {
      throw DataError(where + ": '" + field + "' has " + std::to_string(v->size()) + " values, expected " +
                      std::to_string(num_aus));
    }
    for (int x : *v) {
      if (x < lo || x > hi) {
        throw DataError(where + ": '" + field + "' value " + std::to_string(x) + " outside [" + std::to_string(lo) + ", " +
                        std::to_string(hi) + "]");
      }
    }
  };
  check_list(r.occurrence, "occurrence", 0, 1);
  check_list(r.intensity, "intensity", 0, 5);
  check_list(r.valid, "valid", 0, 1);
  if (r.image.empty()) throw DataError(where + ": missing image path");
  if (r.landmarks) {
    for (const auto& p : *r.landmarks) {
      const bool outside = p.x < 0 || p.y < 0 || (image_size > 0 && (p.x > double(image_size) || p.y > double(image_size)));
      if (outside) throw DataError(where + ": landmark outside image bounds");
    }
  }
  if (r.bbox && (r.bbox->w <= 0 || r.bbox->h <= 0)) throw DataError(where + ": empty bbox");
}

const std::set<std::string>& known_keys() {
  static const std::set<std::string> k{"image", "subject", "frame", "landmarks", "bbox", "occurrence", "intensity", "valid"};
  return k;
}

std::optional<std::vector<int>> int_list(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  if (!j[key].is_array()) throw DataError(where + ": '" + key + "' must be an array");
  std::vector<int> v;
  for (const auto& x : j[key]) {
    if (!x.is_number_integer()) throw DataError(where + ": '" + key + "' must hold integers");
    v.push_back(x.get<int>());
  }
  return v;
}

SampleRecord record_from_json(const json& j, const std::string& where) {
  if (!j.is_object()) throw DataError(where + ": record must be a JSON object");
  SampleRecord r;
  try {
    r.image = j.at("image").get<std::string>();
    r.subject = j.at("subject").get<std::string>();
    r.frame = j.at("frame").get<long>();
  } catch (const json::exception& e) {
    throw DataError(where + ": " + e.what());
  }
  if (j.contains("landmarks") && !j["landmarks"].is_null()) {
    const auto& lm = j["landmarks"];
    if (!lm.is_array() || lm.size() != 5) throw DataError(where + ": 'landmarks' must hold 5 [x, y] points");
    Landmarks pts;
    for (std::size_t i = 0; i < 5; ++i) {
      if (!lm[i].is_array() || lm[i].size() != 2 || !lm[i][0].is_number() || !lm[i][1].is_number()) {
        throw DataError(where + ": landmark " + std::to_string(i) + " must be [x, y]");
      }
      pts[i] = {lm[i][0].get<double>(), lm[i][1].get<double>()};
    }
    r.landmarks = pts;
  }
  if (j.contains("bbox") && !j["bbox"].is_null()) {
    const auto& b = j["bbox"];
    if (!b.is_array() || b.size() != 4 || !std::all_of(b.begin(), b.end(), [](const json& x) { return x.is_number_integer(); })) {
      throw DataError(where + ": 'bbox' must be [x, y, w, h] integers");
    }
    r.bbox = BBox{b[0].get<int>(), b[1].get<int>(), b[2].get<int>(), b[3].get<int>()};
  }
  r.occurrence = int_list(j, "occurrence", where);
  r.intensity = int_list(j, "intensity", where);
  r.valid = int_list(j, "valid", where);
  for (const auto& [k, v] : j.items()) {
    if (!known_keys().count(k)) r.extra[k] = v.dump();
  }
  return r;
}

json record_to_json(const SampleRecord& r) {
  json j;
  j["image"] = r.image;
  j["subject"] = r.subject;
  j["frame"] = r.frame;
  if (r.landmarks) {
    json lm = json::array();
    for (const auto& p : *r.landmarks) lm.push_back({p.x, p.y});
    j["landmarks"] = lm;
  }
  if (r.bbox) j["bbox"] = {r.bbox->x, r.bbox->y, r.bbox->w, r.bbox->h};
  if (r.occurrence) j["occurrence"] = *r.occurrence;
  if (r.intensity) j["intensity"] = *r.intensity;
  if (r.valid) j["valid"] = *r.valid;
  for (const auto& [k, v] : r.extra) j[k] = json::parse(v);
  return j;
}

}  // namespace

void Manifest::validate() const {
  std::set<std::pair<std::string, long>> seen;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const std::string where = "record " + std::to_string(i + 1);
    check_record(records[i], num_aus(), image_size, where);
    if (!seen.insert({records[i].subject, records[i].frame}).second) {
      throw DataError(where + ": duplicate (subject, frame) = (" + records[i].subject + ", " +
                      std::to_string(records[i].frame) + ")");
    }
  }
}

std::vector<std::string> Manifest::subjects() const {
  std::set<std::string> s;
  for (const auto& r : records) s.insert(r.subject);
  return {s.begin(), s.end()};
}

Manifest parse_manifest(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  Manifest m;
  bool have_header = false;
  std::set<std::pair<std::string, long>> seen;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = origin + ":" + std::to_string(line_no);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError(where + ": malformed JSON: " + e.what());
    }
    if (!have_header) {
      if (!j.is_object() || j.value("format", "") != kManifestFormat) {
        throw DataError(where + ": expected header with \"format\": \"" + kManifestFormat + "\"");
      }
      if (j.value("version", 0) != kManifestVersion) {
        throw DataError(where + ": unsupported manifest version " + j.value("version", json(0)).dump());
      }
      try {
        m.dataset = j.value("dataset", "");
        m.aus = j.at("aus").get<std::vector<std::string>>();
        m.image_size = j.value("image_size", std::size_t{0});
      } catch (const json::exception& e) {
        throw DataError(where + ": bad header: " + e.what());
      }
      have_header = true;
      continue;
    }
    SampleRecord r = record_from_json(j, where);
    check_record(r, m.num_aus(), m.image_size, where);
    if (!seen.insert({r.subject, r.frame}).second) {
      throw DataError(where + ": duplicate (subject, frame) = (" + r.subject + ", " + std::to_string(r.frame) + ")");
    }
    m.records.push_back(std::move(r));
  }
  if (!have_header) throw DataError(origin + ": missing manifest header");
  return m;
}

Manifest read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  Manifest m = parse_manifest(ss.str(), path);
  m.base_dir = std::filesystem::path(path).parent_path().string();
  return m;
}

std::string format_manifest(const Manifest& m) {
  json h;
  h["format"] = kManifestFormat;
  h["version"] = kManifestVersion;
  h["dataset"] = m.dataset;
  h["aus"] = m.aus;
  h["image_size"] = m.image_size;
  std::string out = h.dump() + "\n";
  for (const auto& r : m.records) out += record_to_json(r).dump() + "\n";
  return out;
}

void write_manifest(const Manifest& m, const std::string& path) {
  m.validate();
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw DataError("cannot open '" + tmp + "' for writing");
    out << format_manifest(m);
    if (!out) throw DataError("write to '" + tmp + "' failed");
  }
  std::filesystem::rename(tmp, path);
}

Manifest subsample_every_n(const Manifest& m, std::size_t n) {
  if (n < 1) throw DomainError("subsample_every_n: N must be at least 1");
  std::map<std::string, std::vector<std::size_t>> by_subject;
  for (std::size_t i = 0; i < m.records.size(); ++i) by_subject[m.records[i].subject].push_back(i);
  std::vector<char> keep(m.records.size(), 0);
  for (auto& [subject, idx] : by_subject) {
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return m.records[a].frame < m.records[b].frame; });
    for (std::size_t k = 0; k < idx.size(); k += n) keep[idx[k]] = 1;
  }
  Manifest out = m;
  out.records.clear();
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    if (keep[i]) out.records.push_back(m.records[i]);
  }
  return out;
}

CleanResult clean_filter(const Manifest& m, std::size_t min_side) {
  CleanResult res;
  res.kept = m;
  res.kept.records.clear();
  for (const auto& r : m.records) {
    try {
      const Image img = read_image(m.image_path(r));
      if (std::min(img.height, img.width) < min_side) {
        res.dropped.push_back({r.image, "too small: " + std::to_string(img.height) + "x" + std::to_string(img.width)});
        continue;
      }
    } catch (const DataError& e) {
      res.dropped.push_back({r.image, std::string("corrupt: ") + e.what()});
      continue;
    }
    res.kept.records.push_back(r);
  }
  return res;
}

Manifest select_subjects(const Manifest& m, const std::vector<std::string>& subjects) {
  const std::set<std::string> keep(subjects.begin(), subjects.end());
  Manifest out = m;
  out.records.clear();
  for (const auto& r : m.records) {
    if (keep.count(r.subject)) out.records.push_back(r);
  }
  return out;
}

}  // namespace maeface
