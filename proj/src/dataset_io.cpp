#include "covdistill/dataset_io.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "covdistill/digest.hpp"

namespace covdistill {

using nlohmann::json;

std::string bits_to_string(const LabelVector& bits) {
  std::string s(bits.size(), '0');
  for (std::size_t i = 0; i < bits.size(); ++i) s[i] = bits[i] ? '1' : '0';
  return s;
}

LabelVector string_to_bits(const std::string& s) {
  LabelVector out(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '0' && s[i] != '1') throw Error(ErrorKind::Parse, "label string has character other than 0/1");
    out[i] = s[i] == '1';
  }
  return out;
}

std::string encode_scene(const SceneRecord& scene, FloatEncoding enc) {
  json j;
  j["scene_id"] = scene.scene_id;
  j["index"] = scene.index;
  const std::size_t T = scene.embeddings.rows();
  if (enc == FloatEncoding::Array) {
    json frames = json::array();
    for (std::size_t t = 0; t < T; ++t) {
      auto row = scene.embeddings.row(t);
      frames.push_back(std::vector<double>(row.begin(), row.end()));
    }
    j["embeddings"] = std::move(frames);
  } else {
    json frames = json::array();
    char buf[40];
    for (std::size_t t = 0; t < T; ++t) {
      std::string line;
      for (double v : scene.embeddings.row(t)) {
        std::snprintf(buf, sizeof buf, "%a", v);
        if (!line.empty()) line += ' ';
        line += buf;
      }
      frames.push_back(std::move(line));
    }
    j["embeddings_hex"] = std::move(frames);
  }
  j["mask"] = std::vector<int>(scene.mask.begin(), scene.mask.end());
  j["y_true"] = bits_to_string(scene.y_true);
  j["y_teacher"] = scene.y_teacher ? json(bits_to_string(*scene.y_teacher)) : json(nullptr);
  return j.dump();
}

namespace {

json header_json(const DatasetHeader& h) {
  return {{"format", "scene-dataset"},
          {"version", h.version},
          {"embed_dim", h.embed_dim},
          {"n_labels", h.n_labels},
          {"taxonomy_digest", h.taxonomy_digest},
          {"generator_digest", h.generator_digest},
          {"teacher_digest", h.teacher_digest}};
}

[[noreturn]] void parse_fail(std::size_t line_no, const std::string& msg) {
  throw Error(ErrorKind::Parse, "dataset line " + std::to_string(line_no) + ": " + msg);
}

}  // namespace

SceneRecord decode_scene(const std::string& line, const DatasetHeader& header, std::size_t line_no) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    parse_fail(line_no, e.what());
  }
  SceneRecord rec;
  try {
    rec.scene_id = j.at("scene_id").get<std::string>();
    rec.index = j.at("index").get<std::uint64_t>();
    const std::size_t E = header.embed_dim;
    if (j.contains("embeddings")) {
      const auto& frames = j.at("embeddings");
      rec.embeddings = Matrix(frames.size(), E);
      for (std::size_t t = 0; t < frames.size(); ++t) {
        if (frames[t].size() != E) parse_fail(line_no, "frame width differs from header embed_dim");
        for (std::size_t d = 0; d < E; ++d) rec.embeddings(t, d) = frames[t][d].get<double>();
      }
    } else if (j.contains("embeddings_hex")) {
      const auto& frames = j.at("embeddings_hex");
      rec.embeddings = Matrix(frames.size(), E);
      for (std::size_t t = 0; t < frames.size(); ++t) {
        const std::string s = frames[t].get<std::string>();
        const char* p = s.c_str();
        for (std::size_t d = 0; d < E; ++d) {
          char* end = nullptr;
          const double v = std::strtod(p, &end);
          if (end == p) parse_fail(line_no, "bad hex float in frame " + std::to_string(t));
          rec.embeddings(t, d) = v;
          p = end;
        }
        while (*p == ' ') ++p;
        if (*p != '\0') parse_fail(line_no, "frame " + std::to_string(t) + " has extra values");
      }
    } else {
      parse_fail(line_no, "missing embeddings");
    }
    for (int m : j.at("mask").get<std::vector<int>>()) rec.mask.push_back(m ? 1 : 0);
    rec.y_true = string_to_bits(j.at("y_true").get<std::string>());
    if (!j.at("y_teacher").is_null()) rec.y_teacher = string_to_bits(j.at("y_teacher").get<std::string>());
  } catch (const json::exception& e) {
    parse_fail(line_no, e.what());
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::Parse && std::string(e.what()).find("dataset line") != std::string::npos) throw;
    parse_fail(line_no, e.what());
  }
  if (rec.mask.size() != rec.embeddings.rows()) {
    throw Error(ErrorKind::Validation, "dataset line " + std::to_string(line_no) + ": mask length != frame count");
  }
  if (rec.y_true.size() != header.n_labels || (rec.y_teacher && rec.y_teacher->size() != header.n_labels)) {
    throw Error(ErrorKind::Validation, "dataset line " + std::to_string(line_no) + ": label length differs from header n_labels " +
                                           std::to_string(header.n_labels));
  }
  return rec;
}

void write_dataset(const std::filesystem::path& path, const DatasetHeader& header,
                   const std::vector<SceneRecord>& scenes, FloatEncoding enc) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot write dataset " + path.string());
  out << header_json(header).dump() << '\n';
  for (const auto& s : scenes) out << encode_scene(s, enc) << '\n';
  if (!out) throw Error(ErrorKind::Io, "write failed for " + path.string());
}

Dataset read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open dataset " + path.string());
  Dataset ds;
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::Parse, "dataset line 1: missing header");
  try {
    json h = json::parse(line);
    if (h.value("format", "") != "scene-dataset") parse_fail(1, "not a scene-dataset header");
    ds.header.version = h.at("version").get<int>();
    if (ds.header.version != 1) {
      throw Error(ErrorKind::Incompatible, "dataset format version " + std::to_string(ds.header.version));
    }
    ds.header.embed_dim = h.at("embed_dim").get<std::size_t>();
    ds.header.n_labels = h.at("n_labels").get<std::size_t>();
    ds.header.taxonomy_digest = h.value("taxonomy_digest", "");
    ds.header.generator_digest = h.value("generator_digest", "");
    ds.header.teacher_digest = h.value("teacher_digest", "");
  } catch (const json::exception& e) {
    parse_fail(1, e.what());
  }
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    ds.scenes.push_back(decode_scene(line, ds.header, line_no));
  }
  return ds;
}

std::uint64_t file_digest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  Fnv1a h;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    h.update(buf, static_cast<std::size_t>(in.gcount()));
  }
  return h.value();
}

}  // namespace covdistill
