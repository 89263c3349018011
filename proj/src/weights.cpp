#include "morphbench/error.hpp"
#include "morphbench/models.hpp"

#include <fmt/format.h>
#include <json.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

namespace morphbench {

namespace {

using nlohmann::json;

constexpr char kMagicPrefix[] = "MBWT";
constexpr char kMagicVersion[] = "0001";
constexpr int kManifestVersion = 1;

std::uint64_t to_little(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  std::uint64_t out = 0;
  for (int i = 0; i < 8; ++i) out |= ((v >> (8 * i)) & 0xffu) << (8 * (7 - i));
  return out;
}

void put_u64(std::string& out, std::uint64_t v) {
  v = to_little(v);
  char bytes[8];
  std::memcpy(bytes, &v, 8);
  out.append(bytes, 8);
}

std::uint64_t get_u64(const char* p) {
  std::uint64_t v = 0;
  std::memcpy(&v, p, 8);
  return to_little(v);
}

json config_to_json(const ToyModelConfig& cfg) {
  return {{"seed", cfg.seed},
          {"image_side", cfg.image_side},
          {"latent", {cfg.latent.layers, cfg.latent.dims}},
          {"embed_dim", cfg.embed_dim}};
}

ToyModelConfig config_from_json(const json& j) {
  ToyModelConfig cfg;
  cfg.seed = j.at("seed").get<std::uint64_t>();
  cfg.image_side = j.at("image_side").get<Index>();
  const auto& latent = j.at("latent");
  if (!latent.is_array() || latent.size() != 2) throw FormatError("weights: config.latent must be [layers, dims]");
  cfg.latent = {latent[0].get<Index>(), latent[1].get<Index>()};
  cfg.embed_dim = j.at("embed_dim").get<Index>();
  return cfg;
}

}  // namespace

void save_model_weights(const ModelBundle& bundle, const std::filesystem::path& path) {
  if (!bundle.toy_config || !bundle.weights) throw ValueError("save_model_weights: bundle has no serializable weights");

  json tensors = json::array();
  std::uint64_t count = 0;
  for (const auto& w : *bundle.weights) {
    tensors.push_back({{"name", w.name}, {"shape", w.value.shape()}});
    count += static_cast<std::uint64_t>(w.value.size());
  }
  const json manifest = {{"version", kManifestVersion},
                         {"config", config_to_json(*bundle.toy_config)},
                         {"payload_bytes", count * 8},
                         {"tensors", tensors}};
  const std::string text = manifest.dump();

  std::string out;
  out.append(kMagicPrefix, 4).append(kMagicVersion, 4);
  put_u64(out, text.size());
  out += text;
  out.reserve(out.size() + count * 8);
  for (const auto& w : *bundle.weights) {
    for (Index i = 0; i < w.value.size(); ++i) put_u64(out, std::bit_cast<std::uint64_t>(w.value.value()(i)));
  }

  std::ofstream file(path, std::ios::binary);
  if (!file) throw Error(fmt::format("weights: cannot open {} for writing", path.string()));
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!file) throw Error(fmt::format("weights: write to {} failed", path.string()));
}

ModelBundle load_model_weights(const std::filesystem::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw Error(fmt::format("weights: cannot open {}", path.string()));
  const std::string data{std::istreambuf_iterator<char>(file), std::istreambuf_iterator<char>()};
  const std::string where = path.string();

  if (data.size() < 8) throw TruncatedError(fmt::format("{}: file ends inside the magic", where));
  if (data.compare(0, 4, kMagicPrefix) != 0) throw BadMagicError(fmt::format("{}: not a weight container", where));
  if (data.compare(4, 4, kMagicVersion) != 0) {
    throw VersionError(fmt::format("{}: unsupported container version '{}'", where, data.substr(4, 4)));
  }
  if (data.size() < 16) throw TruncatedError(fmt::format("{}: file ends inside the header", where));
  const std::uint64_t manifest_len = get_u64(data.data() + 8);
  if (manifest_len > data.size() - 16) throw TruncatedError(fmt::format("{}: file ends inside the manifest", where));

  json manifest;
  try {
    manifest = json::parse(data.begin() + 16, data.begin() + 16 + static_cast<std::ptrdiff_t>(manifest_len));
  } catch (const json::exception& e) {
    throw FormatError(fmt::format("{}: bad manifest: {}", where, e.what()));
  }

  try {
    if (manifest.at("version").get<int>() != kManifestVersion) {
      throw VersionError(fmt::format("{}: unsupported manifest version {}", where, manifest.at("version").dump()));
    }
    const ToyModelConfig cfg = config_from_json(manifest.at("config"));

    std::vector<std::pair<std::string, Shape>> entries;
    std::uint64_t count = 0;
    for (const auto& t : manifest.at("tensors")) {
      entries.emplace_back(t.at("name").get<std::string>(), t.at("shape").get<Shape>());
      for (const Index d : entries.back().second) {
        if (d < 0) throw FormatError(fmt::format("{}: negative extent in '{}'", where, entries.back().first));
      }
      count += static_cast<std::uint64_t>(numel(entries.back().second));
    }

    const std::uint64_t available = data.size() - 16 - manifest_len;
    // Without payload_bytes the shapes alone define the expected size.
    const std::uint64_t declared =
        manifest.contains("payload_bytes") ? manifest.at("payload_bytes").get<std::uint64_t>() : count * 8;
    if (declared % 8 != 0) throw FormatError(fmt::format("{}: payload_bytes {} is not a multiple of 8", where, declared));
    if (available < declared) {
      throw TruncatedError(fmt::format("{}: payload has {} bytes, expected {}", where, available, declared));
    }
    if (available > declared) throw FormatError(fmt::format("{}: {} trailing bytes", where, available - declared));
    if (declared != count * 8) {
      throw ShapeMismatchError(fmt::format("{}: manifest shapes need {} values, payload holds {}", where, count,
                                           declared / 8));
    }

    WeightSet weights;
    const char* p = data.data() + 16 + manifest_len;
    for (auto& [name, shape] : entries) {
      Buffer values(numel(shape));
      for (Index i = 0; i < values.size(); ++i, p += 8) values(i) = std::bit_cast<double>(get_u64(p));
      weights.push_back({name, Tensor::from(shape, std::move(values))});
    }
    return toy_models_from_weights(cfg, std::move(weights));
  } catch (const json::exception& e) {
    throw FormatError(fmt::format("{}: bad manifest: {}", where, e.what()));
  }
}

}  // namespace morphbench
