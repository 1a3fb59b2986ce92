#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "qeforge/error.hpp"
#include "qeforge/predictor.hpp"

namespace qeforge::checkpoint {

// File layout:
//   u8   format version (1)
//   u64  manifest length in bytes, little endian
//   ...  UTF-8 JSON manifest
//   ...  little-endian float32 payloads, concatenated in tensor-index order
inline constexpr std::uint8_t kFormatVersion = 1;

class CheckpointError : public Error {
 public:
  using Error::Error;
};
/// Unreadable or inconsistent JSON manifest.
class ManifestError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
/// Payload shorter/longer than the manifest says, or tensor shapes that do not
/// match the model being restored.
class PayloadError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class FormatVersionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

struct TensorEntry {
  std::string name;
  std::vector<std::size_t> shape;
  std::uint64_t offset = 0;  // bytes from payload start

  std::size_t element_count() const;
};

struct Manifest {
  std::string architecture;
  nlohmann::json hyperparameters = nlohmann::json::object();
  std::string source_vocab_hash;
  std::string target_vocab_hash;
  std::vector<TensorEntry> tensors;
  std::uint64_t payload_bytes = 0;

  const TensorEntry* find(const std::string& name) const;
};

struct Checkpoint {
  Manifest manifest;
  std::vector<std::vector<float>> payload;  // parallel to manifest.tensors
};

std::string hash_to_hex(std::uint64_t h);
std::uint64_t hex_to_hash(const std::string& s);

/// Writes `tensors` (converted to float32) with the given metadata; offsets
/// and payload size are filled in here.
void write(const std::filesystem::path& path, Manifest manifest, const nn::ParamList& tensors);

/// Reads the manifest only; the payload is not loaded.
Manifest read_manifest(const std::filesystem::path& path);
Checkpoint read(const std::filesystem::path& path);

/// Copies tensors from `ckpt` into `targets` by name. Throws PayloadError when
/// a name is missing or a shape differs.
void restore(const Checkpoint& ckpt, const nn::ParamList& targets);

void save_predictor(const predictor::PredictorParams& params, const std::filesystem::path& path);
predictor::PredictorParams load_predictor(const std::filesystem::path& path);

/// Returns `fresh` with every tensor except the source/target embedding tables
/// overwritten from the checkpoint. Throws PayloadError listing every
/// non-embedding tensor whose shape differs (or that is missing).
predictor::PredictorParams load_pretrained_excluding_embeddings(
    const std::filesystem::path& path, predictor::PredictorParams fresh);

}  // namespace qeforge::checkpoint
