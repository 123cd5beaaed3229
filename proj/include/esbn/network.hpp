#pragma once

#include <filesystem>
#include <memory>
#include <span>
#include <string>

#include "esbn/encoders.hpp"
#include "esbn/sequence_model.hpp"
#include "esbn/taskgen.hpp"
#include "esbn/tcn.hpp"

namespace esbn {

struct ModelConfig {
  ModelKind model = ModelKind::Esbn;
  EncoderKind encoder = EncoderKind::Conv;
  bool tcn = true;
  taskgen::Task task = taskgen::Task::SameDiff;
};

/// Encoder -> TCN -> sequence model -> logits. All parameters are drawn from
/// one stream seeded with derive_seed(seed, "init"), in that order.
template <typename S>
class Network {
 public:
  Network(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  std::size_t steps() const { return taskgen::sequence_length(config_.task); }
  std::size_t units() const { return taskgen::output_units(config_.task); }

  /// images [U, 1024] -> embeddings [U, 128].
  Tensor<S> embed(const Tensor<S>& images) const { return encoder_(images); }
  /// Gathers embedding rows (batch * steps indices, problem-major) into
  /// [B, T, 128], normalizes and runs the sequence model. Returns [B, units].
  Tensor<S> forward(const Tensor<S>& embeddings, std::span<const std::size_t> rows) const;
  /// The normalized sequence fed to the sequence model.
  Tensor<S> sequence(const Tensor<S>& embeddings, std::span<const std::size_t> rows) const;

  /// Parameters the optimizer updates (excludes a frozen random encoder).
  ParamList<S> trainable() const;
  /// Every tensor, frozen ones included.
  ParamList<S> all_tensors() const;

  const SequenceModel<S>& core() const { return *core_; }
  const Encoder<S>& encoder() const { return encoder_; }

 private:
  ModelConfig config_;
  Encoder<S> encoder_;
  Tcn<S> tcn_;
  std::unique_ptr<SequenceModel<S>> core_;
};

/// Packs glyph images for the given ids into [ids.size(), 1024].
template <typename S>
Tensor<S> glyph_batch(const taskgen::GlyphSet& glyphs, std::span<const std::uint8_t> ids);

// Checkpoint: "ESBNCKPT", u32 version, u64 json length, spec JSON, u32 count,
// then per tensor: u32 name length, name, u32 rank, u64 dims, float32 data.
// All integers little-endian.

struct Checkpoint {
  std::string spec_json;
  std::vector<std::pair<std::string, Tensor<float>>> tensors;
};

void save_checkpoint(const std::filesystem::path& path, const std::string& spec_json, const ParamList<float>& tensors);
Checkpoint load_checkpoint(const std::filesystem::path& path);
/// Copies checkpoint tensors into the network by name; throws on any missing
/// name or shape mismatch.
void restore_parameters(const Checkpoint& checkpoint, const ParamList<float>& targets);

extern template class Network<float>;
extern template class Network<double>;

}  // namespace esbn
