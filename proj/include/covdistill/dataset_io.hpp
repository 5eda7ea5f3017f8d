#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "covdistill/data_forge.hpp"

namespace covdistill {

enum class FloatEncoding { Hex, Array };

/// First line of a dataset file.
struct DatasetHeader {
  int version = 1;
  std::size_t embed_dim = 0;
  std::size_t n_labels = 0;
  std::string taxonomy_digest;
  std::string generator_digest;
  std::string teacher_digest;
  bool operator==(const DatasetHeader&) const = default;
};

struct Dataset {
  DatasetHeader header;
  std::vector<SceneRecord> scenes;
};

/// JSON Lines. Header line: {"format":"scene-dataset", "version", "embed_dim",
/// "n_labels", "taxonomy_digest", "generator_digest", "teacher_digest"}.
/// Scene line: {"scene_id", "index", "mask": [0|1...], "y_true": "0101..",
/// "y_teacher": "..." | null} plus either "embeddings": [[...], ...] (JSON
/// numbers, shortest round-trip form) or "embeddings_hex": ["<%a> <%a> ...",
/// one string per frame]. Both are lossless; the reader accepts either.
void write_dataset(const std::filesystem::path& path, const DatasetHeader& header,
                   const std::vector<SceneRecord>& scenes, FloatEncoding enc = FloatEncoding::Hex);
Dataset read_dataset(const std::filesystem::path& path);

std::string encode_scene(const SceneRecord& scene, FloatEncoding enc);
/// Parses one scene line; `line_no` only labels errors.
SceneRecord decode_scene(const std::string& line, const DatasetHeader& header, std::size_t line_no);

std::string bits_to_string(const LabelVector& bits);
LabelVector string_to_bits(const std::string& s);

/// FNV-1a over the file bytes.
std::uint64_t file_digest(const std::filesystem::path& path);

}  // namespace covdistill
