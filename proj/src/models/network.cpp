#include "esbn/network.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>

#include "esbn/baselines.hpp"
#include "esbn/esbn.hpp"

namespace esbn {

std::string_view model_name(ModelKind kind) {
  switch (kind) {
    case ModelKind::Esbn: return "esbn";
    case ModelKind::EsbnNoConfidence: return "esbn_noconf";
    case ModelKind::EsbnDefaultMemory: return "esbn_default_mem";
    case ModelKind::Lstm: return "lstm";
    case ModelKind::Ntm: return "ntm";
    case ModelKind::Rn: return "rn";
    case ModelKind::Trn: return "trn";
    case ModelKind::Transformer: return "transformer";
    case ModelKind::PrediNet: return "predinet";
  }
  throw std::invalid_argument("unknown model kind");
}

ModelKind parse_model(std::string_view name) {
  for (auto k : kAllModels) {
    if (model_name(k) == name) return k;
  }
  throw std::invalid_argument("unknown model '" + std::string(name) +
                              "' (expected esbn, esbn_noconf, esbn_default_mem, lstm, ntm, rn, trn, transformer or "
                              "predinet)");
}

bool is_esbn(ModelKind kind) {
  return kind == ModelKind::Esbn || kind == ModelKind::EsbnNoConfidence || kind == ModelKind::EsbnDefaultMemory;
}

template <typename S>
std::unique_ptr<SequenceModel<S>> make_sequence_model(ModelKind kind, std::size_t steps, std::size_t units, Rng& rng) {
  switch (kind) {
    case ModelKind::Esbn: return std::make_unique<Esbn<S>>(EsbnVariant::Standard, units, rng);
    case ModelKind::EsbnNoConfidence: return std::make_unique<Esbn<S>>(EsbnVariant::NoConfidence, units, rng);
    case ModelKind::EsbnDefaultMemory: return std::make_unique<Esbn<S>>(EsbnVariant::DefaultMemory, units, rng);
    case ModelKind::Lstm: return std::make_unique<LstmModel<S>>(units, rng);
    case ModelKind::Ntm: return std::make_unique<NtmModel<S>>(units, rng);
    case ModelKind::Rn: return std::make_unique<RnModel<S>>(units, rng);
    case ModelKind::Trn: return std::make_unique<TrnModel<S>>(units, rng);
    case ModelKind::Transformer: return std::make_unique<TransformerModel<S>>(units, rng);
    case ModelKind::PrediNet: return std::make_unique<PrediNetModel<S>>(steps, units, rng);
  }
  throw std::invalid_argument("unknown model kind");
}

template <typename S>
Network<S>::Network(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  Rng rng(derive_seed(seed, "init"));
  encoder_ = Encoder<S>(config.encoder, rng);
  tcn_ = Tcn<S>(config.tcn, segment_scheme(config.task), kEmbeddingDim);
  core_ = make_sequence_model<S>(config.model, steps(), units(), rng);
}

template <typename S>
Tensor<S> Network<S>::sequence(const Tensor<S>& embeddings, std::span<const std::size_t> rows) const {
  const std::size_t t = steps();
  if (rows.empty() || rows.size() % t != 0) {
    throw TensorError("network: " + std::to_string(rows.size()) + " rows is not a multiple of sequence length " +
                      std::to_string(t));
  }
  const auto gathered = index_select(embeddings, 0, rows);
  return tcn_(reshape(gathered, {rows.size() / t, t, embeddings.size(1)}));
}

template <typename S>
Tensor<S> Network<S>::forward(const Tensor<S>& embeddings, std::span<const std::size_t> rows) const {
  return core_->forward(sequence(embeddings, rows));
}

template <typename S>
ParamList<S> Network<S>::trainable() const {
  ParamList<S> out;
  encoder_.collect(out, "encoder");
  tcn_.collect(out, "tcn");
  core_->collect(out);
  return out;
}

template <typename S>
ParamList<S> Network<S>::all_tensors() const {
  ParamList<S> out;
  encoder_.collect_all(out, "encoder");
  tcn_.collect(out, "tcn");
  core_->collect(out);
  return out;
}

template <typename S>
Tensor<S> glyph_batch(const taskgen::GlyphSet& glyphs, std::span<const std::uint8_t> ids) {
  std::vector<S> data;
  data.reserve(ids.size() * taskgen::kGlyphPixels);
  for (auto id : ids) {
    if (id >= glyphs.images.size()) throw std::out_of_range("glyph id " + std::to_string(id) + " out of range");
    data.insert(data.end(), glyphs.images[id].begin(), glyphs.images[id].end());
  }
  return Tensor<S>::from_data({ids.size(), taskgen::kGlyphPixels}, std::move(data));
}

// ----- checkpoints -----

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[8] = {'E', 'S', 'B', 'N', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof value);
}

template <typename T>
T get(std::istream& in, const std::filesystem::path& path) {
  T value;
  if (!in.read(reinterpret_cast<char*>(&value), sizeof value)) throw std::runtime_error("truncated checkpoint " + path.string());
  return value;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const std::string& spec_json, const ParamList<float>& tensors) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    out.write(kMagic, sizeof kMagic);
    put<std::uint32_t>(out, kVersion);
    put<std::uint64_t>(out, spec_json.size());
    out.write(spec_json.data(), static_cast<std::streamsize>(spec_json.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
      put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      put<std::uint32_t>(out, static_cast<std::uint32_t>(t.dim()));
      for (auto d : t.shape()) put<std::uint64_t>(out, d);
      out.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.numel() * sizeof(float)));
    }
    if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw std::runtime_error(path.string() + " is not a checkpoint");
  }
  if (const auto v = get<std::uint32_t>(in, path); v != kVersion) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(v));
  }
  Checkpoint ck;
  ck.spec_json.resize(get<std::uint64_t>(in, path));
  in.read(ck.spec_json.data(), static_cast<std::streamsize>(ck.spec_json.size()));
  const auto count = get<std::uint32_t>(in, path);
  for (std::uint32_t k = 0; k < count; ++k) {
    std::string name(get<std::uint32_t>(in, path), '\0');
    in.read(name.data(), static_cast<std::streamsize>(name.size()));
    Shape shape(get<std::uint32_t>(in, path));
    for (auto& d : shape) d = get<std::uint64_t>(in, path);
    std::vector<float> data(shape_numel(shape));
    in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(float)));
    if (!in) throw std::runtime_error("truncated checkpoint " + path.string());
    ck.tensors.emplace_back(std::move(name), Tensor<float>::from_data(std::move(shape), std::move(data)));
  }
  return ck;
}

void restore_parameters(const Checkpoint& checkpoint, const ParamList<float>& targets) {
  std::map<std::string, const Tensor<float>*> by_name;
  for (const auto& [name, t] : checkpoint.tensors) by_name[name] = &t;
  for (const auto& p : targets) {
    const auto it = by_name.find(p.name);
    if (it == by_name.end()) throw std::runtime_error("checkpoint has no tensor '" + p.name + "'");
    if (it->second->shape() != p.tensor.shape()) {
      throw std::runtime_error("checkpoint tensor '" + p.name + "' has shape " + shape_str(it->second->shape()) +
                               ", model expects " + shape_str(p.tensor.shape()));
    }
    auto dst = Tensor<float>(p.tensor).mutable_data();
    std::copy(it->second->data().begin(), it->second->data().end(), dst.begin());
  }
}

template std::unique_ptr<SequenceModel<float>> make_sequence_model(ModelKind, std::size_t, std::size_t, Rng&);
template std::unique_ptr<SequenceModel<double>> make_sequence_model(ModelKind, std::size_t, std::size_t, Rng&);
template Tensor<float> glyph_batch(const taskgen::GlyphSet&, std::span<const std::uint8_t>);
template Tensor<double> glyph_batch(const taskgen::GlyphSet&, std::span<const std::uint8_t>);
template class Network<float>;
template class Network<double>;

}  // namespace esbn
