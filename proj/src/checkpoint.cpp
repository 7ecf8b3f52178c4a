#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "taml/error.hpp"
#include "taml/metatrain.hpp"
#include "taml/version.hpp"

namespace taml::meta {

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'T', 'A', 'M', 'L', 'C', 'K', 'P', 'T'};
constexpr uint32_t kFormatVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

void write_bytes(std::ostream& out, const void* p, std::size_t n) {
  out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  if (!out) throw IoError("checkpoint write failed");
}

void read_bytes(std::istream& in, void* p, std::size_t n, const char* what) {
  in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n)
    throw TruncatedFileError(std::string("checkpoint truncated while reading ") +
                             what);
}

}  // namespace

Checkpoint make_checkpoint(const TrainState& state) {
  Checkpoint ckpt;
  ckpt.config = state.config;
  ckpt.input_dim = state.input_dim;
  ckpt.iteration = state.iteration;
  ckpt.rng_state = state.train_rng.state();
  ckpt.params = state.params;
  ckpt.optimizer_kind = state.optimizer->kind();
  if (auto* adam = dynamic_cast<const Adam*>(state.optimizer.get()))
    ckpt.adam_state = adam->state();
  return ckpt;
}

TrainState resume_train_state(const Checkpoint& ckpt) {
  TrainState state;
  state.config = ckpt.config;
  state.input_dim = ckpt.input_dim;
  state.iteration = ckpt.iteration;
  state.params = ckpt.params;
  state.train_rng = Rng::from_state(ckpt.rng_state);
  state.optimizer = make_optimizer(ckpt.optimizer_kind, ckpt.config.lr);
  if (auto* adam = dynamic_cast<Adam*>(state.optimizer.get()))
    adam->state() = ckpt.adam_state;
  return state;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  // Blob region: parameter values in path order, then adam m/v per path.
  std::vector<double> blobs;
  json params_meta = json::array();
  for (const auto& [p, t] : ckpt.params) {
    params_meta.push_back(json{{"path", p},
                               {"shape", t.shape()},
                               {"offset", blobs.size()},
                               {"count", t.size()}});
    blobs.insert(blobs.end(), t.data(), t.data() + t.size());
  }
  json adam_meta = json::array();
  for (const auto& [p, s] : ckpt.adam_state) {
    adam_meta.push_back(json{{"path", p},
                             {"t", s.t},
                             {"m_offset", blobs.size()},
                             {"v_offset", blobs.size() + s.m.size()},
                             {"count", s.m.size()}});
    blobs.insert(blobs.end(), s.m.begin(), s.m.end());
    blobs.insert(blobs.end(), s.v.begin(), s.v.end());
  }

  json header{{"schema_version", kFormatVersion},
              {"version", std::string(kEngineVersion)},
              {"config", json::parse(train_config_to_json(ckpt.config))},
              {"input_dim", ckpt.input_dim},
              {"iteration", ckpt.iteration},
              {"rng_state", ckpt.rng_state},
              {"optimizer", ckpt.optimizer_kind},
              {"params", params_meta},
              {"adam_state", adam_meta},
              {"blob_count", blobs.size()}};
  const std::string header_text = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  write_bytes(out, kMagic, sizeof(kMagic));
  write_bytes(out, &kFormatVersion, sizeof(kFormatVersion));
  const uint64_t header_len = header_text.size();
  write_bytes(out, &header_len, sizeof(header_len));
  write_bytes(out, header_text.data(), header_text.size());
  if (!blobs.empty())
    write_bytes(out, blobs.data(), blobs.size() * sizeof(double));
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint file '" + path + "'");

  char magic[8];
  read_bytes(in, magic, sizeof(magic), "magic");
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw BadMagicError("bad magic: '" + path + "' is not a checkpoint file");
  uint32_t version = 0;
  read_bytes(in, &version, sizeof(version), "format version");
  if (version != kFormatVersion)
    throw VersionMismatchError("checkpoint format version " +
                               std::to_string(version) + " (expected " +
                               std::to_string(kFormatVersion) + ")");
  uint64_t header_len = 0;
  read_bytes(in, &header_len, sizeof(header_len), "header length");
  std::string header_text(header_len, '\0');
  read_bytes(in, header_text.data(), header_len, "header");

  json header;
  try {
    header = json::parse(header_text);
  } catch (const json::exception& e) {
    throw IoError(std::string("checkpoint header is not valid JSON: ") +
                  e.what());
  }

  const std::size_t blob_count = header.at("blob_count").get<std::size_t>();
  std::vector<double> blobs(blob_count);
  if (blob_count)
    read_bytes(in, blobs.data(), blob_count * sizeof(double), "blobs");

  Checkpoint ckpt;
  ckpt.config = train_config_from_json(header.at("config").dump());
  ckpt.input_dim = header.at("input_dim").get<int>();
  ckpt.iteration = header.at("iteration").get<int>();
  const auto rng = header.at("rng_state").get<std::vector<uint64_t>>();
  if (rng.size() != 4) throw IoError("checkpoint rng_state must have 4 words");
  std::copy(rng.begin(), rng.end(), ckpt.rng_state.begin());
  ckpt.optimizer_kind = header.at("optimizer").get<std::string>();

  auto take = [&](std::size_t offset, std::size_t count) {
    if (offset + count > blobs.size())
      throw TruncatedFileError("checkpoint blob region too small");
    return std::vector<double>(blobs.begin() + static_cast<long>(offset),
                               blobs.begin() + static_cast<long>(offset + count));
  };
  for (const auto& pm : header.at("params")) {
    const auto shape = pm.at("shape").get<Shape>();
    ckpt.params.add(pm.at("path").get<std::string>(),
                    Tensor::from(take(pm.at("offset").get<std::size_t>(),
                                      pm.at("count").get<std::size_t>()),
                                 shape));
  }
  for (const auto& am : header.at("adam_state")) {
    Adam::State s;
    s.t = am.at("t").get<int64_t>();
    const auto count = am.at("count").get<std::size_t>();
    s.m = take(am.at("m_offset").get<std::size_t>(), count);
    s.v = take(am.at("v_offset").get<std::size_t>(), count);
    ckpt.adam_state.emplace(am.at("path").get<std::string>(), std::move(s));
  }
  return ckpt;
}

}  // namespace taml::meta
