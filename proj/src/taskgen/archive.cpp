#include <cstdio>
#include <fstream>
#include <iterator>
#include <nlohmann/json.hpp>
#include <stdexcept>

#include "esbn/random.hpp"
#include "esbn/taskgen.hpp"

namespace esbn::taskgen {

namespace {

constexpr const char* kFormat = "esbn-dataset-v1";

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

std::string checksum_of(const std::vector<std::uint8_t>& train, const std::vector<std::uint8_t>& test) {
  std::string all(train.begin(), train.end());
  all.append(test.begin(), test.end());
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(fnv1a64(all)));
  return hex;
}

}  // namespace

std::vector<std::uint8_t> encode_split(const std::vector<Problem>& problems) {
  std::vector<std::uint8_t> out;
  for (const auto& p : problems) {
    out.push_back(static_cast<std::uint8_t>(p.task));
    out.push_back(static_cast<std::uint8_t>(p.ids.size()));
    out.insert(out.end(), p.ids.begin(), p.ids.end());
    out.push_back(static_cast<std::uint8_t>(p.target));
  }
  return out;
}

std::vector<Problem> decode_split(const std::vector<std::uint8_t>& bytes) {
  std::vector<Problem> out;
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    if (pos + 2 > bytes.size()) throw std::runtime_error("truncated record header at byte " + std::to_string(pos));
    const auto task = bytes[pos];
    const std::size_t len = bytes[pos + 1];
    if (task > 3) throw std::runtime_error("bad task byte " + std::to_string(task) + " at byte " + std::to_string(pos));
    if (pos + 3 + len > bytes.size()) throw std::runtime_error("truncated record at byte " + std::to_string(pos));
    Problem p;
    p.task = static_cast<Task>(task);
    if (len != sequence_length(p.task)) throw std::runtime_error("record length does not match task at byte " + std::to_string(pos));
    p.ids.assign(bytes.begin() + pos + 2, bytes.begin() + pos + 2 + len);
    p.target = bytes[pos + 2 + len];
    for (auto id : p.ids) {
      if (id >= kGlyphCount) throw std::runtime_error("glyph id out of range at byte " + std::to_string(pos));
    }
    out.push_back(std::move(p));
    pos += 3 + len;
  }
  return out;
}

std::string dataset_checksum(const Dataset& dataset) {
  return checksum_of(encode_split(dataset.train), encode_split(dataset.test));
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& dir, const GlyphSet* glyphs) {
  std::filesystem::create_directories(dir);
  const auto train = encode_split(dataset.train);
  const auto test = encode_split(dataset.test);
  write_bytes(dir / "train.bin", train);
  write_bytes(dir / "test.bin", test);
  nlohmann::ordered_json manifest = {
      {"format", kFormat},
      {"task", task_name(dataset.task)},
      {"m", dataset.m},
      {"seed", dataset.seed},
      {"counts", {{"train", dataset.train.size()}, {"test", dataset.test.size()}}},
      {"train_ids", dataset.regime.train_ids},
      {"test_ids", dataset.regime.test_ids},
      {"checksum", checksum_of(train, test)},
  };
  if (glyphs) {
    save_glyphs(*glyphs, dir / "glyphs");
    manifest["glyphs"] = "glyphs";
  }
  std::ofstream out(dir / "manifest.json");
  out << manifest.dump(2) << "\n";
  if (!out) throw std::runtime_error("cannot write " + (dir / "manifest.json").string());
}

Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::runtime_error("no manifest.json in " + dir.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("malformed manifest.json: " + std::string(e.what()));
  }
  if (manifest.value("format", "") != kFormat) throw std::runtime_error("unsupported dataset format in " + dir.string());
  const auto train = read_bytes(dir / "train.bin");
  const auto test = read_bytes(dir / "test.bin");
  if (manifest.at("checksum").get<std::string>() != checksum_of(train, test)) {
    throw std::runtime_error("checksum mismatch for dataset " + dir.string());
  }
  Dataset d;
  d.task = parse_task(manifest.at("task").get<std::string>());
  d.m = manifest.at("m").get<int>();
  d.seed = manifest.at("seed").get<std::uint64_t>();
  d.regime.m = d.m;
  d.regime.train_ids = manifest.at("train_ids").get<std::vector<std::uint8_t>>();
  d.regime.test_ids = manifest.at("test_ids").get<std::vector<std::uint8_t>>();
  d.train = decode_split(train);
  d.test = decode_split(test);
  if (d.train.size() != manifest.at("counts").at("train").get<std::size_t>() ||
      d.test.size() != manifest.at("counts").at("test").get<std::size_t>()) {
    throw std::runtime_error("record counts disagree with manifest in " + dir.string());
  }
  return d;
}

}  // namespace esbn::taskgen
