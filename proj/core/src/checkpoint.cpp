#include "qeforge/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

namespace qeforge::checkpoint {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

std::size_t TensorEntry::element_count() const {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

const TensorEntry* Manifest::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

std::string hash_to_hex(std::uint64_t h) { return fmt::format("{:016x}", h); }

std::uint64_t hex_to_hash(const std::string& s) {
  try {
    std::size_t used = 0;
    const auto v = std::stoull(s, &used, 16);
    if (used != s.size()) throw ManifestError("bad vocab hash '" + s + "'");
    return v;
  } catch (const std::logic_error&) {
    throw ManifestError("bad vocab hash '" + s + "'");
  }
}

namespace {

nlohmann::json manifest_to_json(const Manifest& m) {
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& t : m.tensors)
    tensors.push_back({{"name", t.name}, {"shape", t.shape}, {"offset", t.offset}});
  return {{"format_version", kFormatVersion},
          {"architecture", m.architecture},
          {"hyperparameters", m.hyperparameters},
          {"vocab_hashes", {{"source", m.source_vocab_hash}, {"target", m.target_vocab_hash}}},
          {"tensors", tensors},
          {"payload_bytes", m.payload_bytes}};
}

Manifest manifest_from_json(const nlohmann::json& j) {
  Manifest m;
  try {
    m.architecture = j.at("architecture").get<std::string>();
    m.hyperparameters = j.at("hyperparameters");
    m.source_vocab_hash = j.at("vocab_hashes").at("source").get<std::string>();
    m.target_vocab_hash = j.at("vocab_hashes").at("target").get<std::string>();
    m.payload_bytes = j.at("payload_bytes").get<std::uint64_t>();
    for (const auto& t : j.at("tensors")) {
      TensorEntry e;
      e.name = t.at("name").get<std::string>();
      e.shape = t.at("shape").get<std::vector<std::size_t>>();
      e.offset = t.at("offset").get<std::uint64_t>();
      m.tensors.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ManifestError(std::string("checkpoint manifest: ") + e.what());
  }
  std::uint64_t expected = 0;
  for (const auto& t : m.tensors) {
    if (t.offset != expected)
      throw ManifestError("checkpoint manifest: tensor '" + t.name + "' has a non-contiguous offset");
    expected += 4 * t.element_count();
  }
  if (expected != m.payload_bytes)
    throw ManifestError("checkpoint manifest: tensor index does not add up to payload_bytes");
  return m;
}

struct Header {
  Manifest manifest;
  std::uint64_t payload_start = 0;
};

Header read_header(std::ifstream& in, const std::filesystem::path& path) {
  std::uint8_t version = 0;
  if (!in.read(reinterpret_cast<char*>(&version), 1))
    throw ManifestError(path.string() + ": file too short for a checkpoint header");
  if (version != kFormatVersion)
    throw FormatVersionError(fmt::format("{}: unsupported checkpoint format version {}",
                                         path.string(), version));
  std::uint64_t len = 0;
  if (!in.read(reinterpret_cast<char*>(&len), sizeof len))
    throw ManifestError(path.string() + ": truncated manifest length");
  const auto file_size = std::filesystem::file_size(path);
  if (len > file_size) throw ManifestError(path.string() + ": manifest length exceeds file size");
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len)))
    throw ManifestError(path.string() + ": truncated manifest");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ManifestError(path.string() + ": manifest is not valid JSON: " + e.what());
  }
  if (j.value("format_version", -1) != kFormatVersion)
    throw FormatVersionError(path.string() + ": manifest format_version mismatch");
  Header h{manifest_from_json(j), 1 + sizeof len + len};
  if (file_size != h.payload_start + h.manifest.payload_bytes)
    throw PayloadError(fmt::format("{}: payload is {} bytes, manifest declares {}", path.string(),
                                   file_size - h.payload_start, h.manifest.payload_bytes));
  return h;
}

}  // namespace

void write(const std::filesystem::path& path, Manifest manifest, const nn::ParamList& tensors) {
  manifest.tensors.clear();
  std::uint64_t offset = 0;
  for (const auto& t : tensors) {
    manifest.tensors.push_back({t.name, t.shape, offset});
    offset += 4 * t.size();
  }
  manifest.payload_bytes = offset;
  const std::string text = manifest_to_json(manifest).dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  const std::uint8_t version = kFormatVersion;
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&version), 1);
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  std::vector<float> buf;
  for (const auto& t : tensors) {
    buf.resize(t.size());
    const auto values = t.values();
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<float>(values[i]);
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
  }
  if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
}

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  return read_header(in, path).manifest;
}

Checkpoint read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  Checkpoint ckpt;
  ckpt.manifest = read_header(in, path).manifest;
  for (const auto& t : ckpt.manifest.tensors) {
    std::vector<float> values(t.element_count());
    if (!in.read(reinterpret_cast<char*>(values.data()),
                 static_cast<std::streamsize>(values.size() * sizeof(float))))
      throw PayloadError(path.string() + ": truncated payload at tensor '" + t.name + "'");
    ckpt.payload.push_back(std::move(values));
  }
  return ckpt;
}

void restore(const Checkpoint& ckpt, const nn::ParamList& targets) {
  for (const auto& t : targets) {
    const TensorEntry* e = ckpt.manifest.find(t.name);
    if (!e) throw PayloadError("checkpoint lacks tensor '" + t.name + "'");
    if (e->shape != t.shape) throw PayloadError("checkpoint tensor '" + t.name + "' has a different shape");
    const auto& src = ckpt.payload[static_cast<std::size_t>(e - ckpt.manifest.tensors.data())];
    auto dst = t.values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<double>(src[i]);
  }
}

void save_predictor(const predictor::PredictorParams& params, const std::filesystem::path& path) {
  Manifest m;
  m.architecture = predictor::to_string(params.shape.architecture);
  m.hyperparameters = params.shape.to_json();
  m.source_vocab_hash = hash_to_hex(params.source_fingerprint);
  m.target_vocab_hash = hash_to_hex(params.target_fingerprint);
  auto copy = params;
  write(path, std::move(m), copy.collect());
}

predictor::PredictorParams load_predictor(const std::filesystem::path& path) {
  const auto ckpt = read(path);
  predictor::PredictorShape shape;
  try {
    shape = predictor::PredictorShape::from_json(ckpt.manifest.hyperparameters);
  } catch (const nlohmann::json::exception& e) {
    throw ManifestError(std::string("checkpoint hyperparameters: ") + e.what());
  }
  if (predictor::to_string(shape.architecture) != ckpt.manifest.architecture)
    throw ManifestError("checkpoint architecture tag disagrees with its hyperparameters");
  predictor::PredictorParams params(shape, hex_to_hash(ckpt.manifest.source_vocab_hash),
                                    hex_to_hash(ckpt.manifest.target_vocab_hash));
  auto list = params.collect();
  if (list.size() != ckpt.manifest.tensors.size())
    throw PayloadError("checkpoint tensor count does not match its architecture");
  restore(ckpt, list);
  return params;
}

predictor::PredictorParams load_pretrained_excluding_embeddings(
    const std::filesystem::path& path, predictor::PredictorParams fresh) {
  const auto ckpt = read(path);
  if (ckpt.manifest.architecture != predictor::to_string(fresh.shape.architecture))
    throw PayloadError("pretrained checkpoint architecture '" + ckpt.manifest.architecture +
                       "' does not match the fresh model");
  auto list = fresh.collect();
  nn::ParamList transferable;
  std::vector<std::string> offending;
  for (auto& t : list) {
    if (t.name == predictor::kSourceEmbeddingName || t.name == predictor::kTargetEmbeddingName)
      continue;
    const TensorEntry* e = ckpt.manifest.find(t.name);
    if (!e) {
      offending.push_back(t.name + " (missing)");
    } else if (e->shape != t.shape) {
      offending.push_back(fmt::format("{} (checkpoint [{}] vs model [{}])", t.name,
                                      fmt::join(e->shape, "x"), fmt::join(t.shape, "x")));
    } else {
      transferable.push_back(t);
    }
  }
  if (!offending.empty())
    throw PayloadError(fmt::format("pretrained checkpoint shape mismatch: {}",
                                   fmt::join(offending, ", ")));
  restore(ckpt, transferable);
  return fresh;
}

}  // namespace qeforge::checkpoint
