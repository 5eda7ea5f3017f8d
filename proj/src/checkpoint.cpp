#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

#include "covdistill/config_json.hpp"
#include "covdistill/digest.hpp"
#include "covdistill/error.hpp"
#include "covdistill/surrogate.hpp"

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace covdistill {

class CheckpointAccess {
 public:
  static std::vector<std::pair<std::string, const Matrix*>> tensors(const SurrogateModel& m) {
    std::vector<std::pair<std::string, const Matrix*>> out;
    for (const auto& p : m.params_) out.emplace_back(p.name, &p.value);
    for (const auto& [name, stats] : m.norms_) {
      out.emplace_back(name + ".running_mean", &stats.mean);
      out.emplace_back(name + ".running_var", &stats.var);
    }
    return out;
  }

  static std::vector<std::pair<std::string, Matrix*>> tensors(SurrogateModel& m) {
    std::vector<std::pair<std::string, Matrix*>> out;
    for (auto& p : m.params_) out.emplace_back(p.name, &p.value);
    for (auto& [name, stats] : m.norms_) {
      out.emplace_back(name + ".running_mean", &stats.mean);
      out.emplace_back(name + ".running_var", &stats.var);
    }
    return out;
  }
};

namespace {

constexpr char kMagic[4] = {'S', 'C', 'T', 'K'};

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes, std::size_t end) : bytes_(bytes), end_(end) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  void doubles(double* dst, std::size_t n, const char* what) {
    if (n > (end_ - pos_) / sizeof(double)) throw truncated(what);
    std::memcpy(dst, bytes_.data() + pos_, n * sizeof(double));
    pos_ += n * sizeof(double);
  }

  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n, const char* what) {
    if (n > end_ - pos_) throw truncated(what);
  }
  static Error truncated(const char* what) {
    return Error(ErrorKind::Corruption, std::string("checkpoint truncated while reading ") + what);
  }

  const std::string& bytes_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

std::string config_text(const SurrogateConfig& c) {
  nlohmann::json j = c;
  return j.dump();
}

}  // namespace

std::string encode_checkpoint(const SurrogateModel& model) {
  std::string out(kMagic, 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  const std::string cfg = config_text(model.config());
  put<std::uint64_t>(out, cfg.size());
  out += cfg;
  put<std::uint64_t>(out, fnv1a64(cfg));
  const auto tensors = CheckpointAccess::tensors(model);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, m] : tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put<std::uint64_t>(out, m->rows());
    put<std::uint64_t>(out, m->cols());
    out.append(reinterpret_cast<const char*>(m->data()), m->size() * sizeof(double));
  }
  put<std::uint64_t>(out, fnv1a64(out));
  return out;
}

SurrogateModel decode_checkpoint(const std::string& bytes, std::uint32_t reader_version) {
  if (bytes.size() < 4 + 4 + 8) throw Error(ErrorKind::Corruption, "checkpoint too short");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw Error(ErrorKind::Corruption, "checkpoint magic mismatch");
  std::uint32_t version;
  std::memcpy(&version, bytes.data() + 4, 4);
  if (version > reader_version) {
    throw Error(ErrorKind::Incompatible, "checkpoint format version " + std::to_string(version) +
                                             " is newer than this reader (" + std::to_string(reader_version) + ")");
  }
  const std::size_t body = bytes.size() - 8;
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + body, 8);
  if (fnv1a64(std::string_view(bytes.data(), body)) != stored) {
    throw Error(ErrorKind::Corruption, "checkpoint checksum mismatch");
  }

  Reader r(bytes, body);
  r.str(4, "magic");
  r.get<std::uint32_t>("version");
  const auto cfg_len = r.get<std::uint64_t>("config length");
  const std::string cfg = r.str(cfg_len, "config");
  if (r.get<std::uint64_t>("config digest") != fnv1a64(cfg)) {
    throw Error(ErrorKind::Corruption, "checkpoint config digest mismatch");
  }
  SurrogateConfig config;
  try {
    config = nlohmann::json::parse(cfg).get<SurrogateConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Corruption, std::string("checkpoint config unreadable: ") + e.what());
  }
  SurrogateModel model(config);
  std::map<std::string, Matrix*> slots;
  for (auto& [name, m] : CheckpointAccess::tensors(model)) slots.emplace(name, m);

  const auto count = r.get<std::uint32_t>("tensor count");
  if (count != slots.size()) {
    throw Error(ErrorKind::Incompatible, "checkpoint holds " + std::to_string(count) + " tensors, model expects " +
                                             std::to_string(slots.size()));
  }
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto name_len = r.get<std::uint32_t>("tensor name length");
    const std::string name = r.str(name_len, "tensor name");
    const auto rows = r.get<std::uint64_t>("tensor rows");
    const auto cols = r.get<std::uint64_t>("tensor cols");
    auto it = slots.find(name);
    if (it == slots.end()) throw Error(ErrorKind::Incompatible, "checkpoint tensor '" + name + "' unknown to model");
    Matrix& dst = *it->second;
    if (dst.rows() != rows || dst.cols() != cols) {
      throw Error(ErrorKind::Incompatible, "checkpoint tensor '" + name + "' has shape " + std::to_string(rows) +
                                               "x" + std::to_string(cols) + ", model expects " + dst.shape_str());
    }
    r.doubles(dst.data(), dst.size(), "tensor data");
    slots.erase(it);
  }
  if (r.pos() != body) throw Error(ErrorKind::Corruption, "trailing bytes after checkpoint tensors");
  return model;
}

std::uint64_t checkpoint_digest(const SurrogateModel& model) { return fnv1a64(encode_checkpoint(model)); }

void save_checkpoint(const SurrogateModel& model, const std::filesystem::path& path) {
  const std::string bytes = encode_checkpoint(model);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::Io, "write failed: " + path.string());
}

SurrogateModel load_checkpoint(const std::filesystem::path& path, std::uint32_t reader_version) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes, reader_version);
}

}  // namespace covdistill
