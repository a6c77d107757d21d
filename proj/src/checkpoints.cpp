// Copyright 2026 The layerprobe Authors
// SPDX-License-Identifier: Apache-2.0

#include "layerprobe/checkpoints.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include "layerprobe/rng.hpp"

namespace lp {

namespace {

class Writer {
 public:
  void u8(std::uint8_t v) { out.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out.insert(out.end(), b, b + n);
  }
  void floats(std::span<const float> values) {
    if constexpr (std::endian::native == std::endian::little) {
      bytes(values.data(), values.size() * sizeof(float));
    } else {
      for (float f : values) u32(std::bit_cast<std::uint32_t>(f));
    }
  }
  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  Reader(std::span<const std::uint8_t> b, const std::string& what) : b_(b), what_(what) {}

  void need(std::size_t n, const char* field) const {
    if (b_.size() - pos_ < n) {
      throw Error(what_ + ": truncated " + field + " at offset " + std::to_string(pos_) +
                  ", need " + std::to_string(n) + " bytes, have " +
                  std::to_string(b_.size() - pos_));
    }
  }
  std::uint8_t u8(const char* field) {
    need(1, field);
    return b_[pos_++];
  }
  std::uint32_t u32(const char* field) {
    need(4, field);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{b_[pos_++]} << (8 * i);
    return v;
  }
  std::uint64_t u64(const char* field) {
    need(8, field);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{b_[pos_++]} << (8 * i);
    return v;
  }
  std::string str(std::size_t n, const char* field) {
    need(n, field);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void floats(float* dst, std::size_t n) {
    need(n * sizeof(float), "payload");
    if constexpr (std::endian::native == std::endian::little) {
      std::memcpy(dst, b_.data() + pos_, n * sizeof(float));
      pos_ += n * sizeof(float);
    } else {
      for (std::size_t i = 0; i < n; ++i) dst[i] = std::bit_cast<float>(u32("payload"));
    }
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return b_.size() - pos_; }
  const std::string& what() const { return what_; }

 private:
  std::span<const std::uint8_t> b_;
  std::string what_;
  std::size_t pos_ = 0;
};

nlohmann::json normalization_json(const Normalization& n) {
  return {{"mean", n.mean}, {"std", n.std}};
}

std::uint64_t checksum(std::span<const std::uint8_t> bytes) {
  return fnv1a64(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

Normalization normalization_from(const nlohmann::json& j) {
  Normalization n;
  n.mean = j.at("mean").get<std::vector<double>>();
  n.std = j.at("std").get<std::vector<double>>();
  return n;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const ArchSpec& arch, int epoch,
                                            const ParamSet& params) {
  check_params(arch, params);
  if (epoch < 0) throw Error("checkpoint epoch must be non-negative");
  Writer w;
  w.bytes(kCheckpointMagic, 4);
  w.u32(kCheckpointVersion);
  w.u64(arch.hash());
  w.u32(static_cast<std::uint32_t>(epoch));
  std::uint32_t records = 0;
  for (const auto& [layer, tensors] : params.layers) records += tensors.size();
  w.u32(records);
  for (const auto& [layer, tensors] : params.layers) {
    for (const auto& t : tensors) {
      const std::string name = layer + "/" + t.name;
      w.u32(static_cast<std::uint32_t>(name.size()));
      w.bytes(name.data(), name.size());
      w.u8(0);
      w.u8(t.trainable ? 1 : 0);
      w.u32(static_cast<std::uint32_t>(t.value.rank()));
      for (int d : t.value.dims()) w.u32(static_cast<std::uint32_t>(d));
      w.u64(t.value.size() * sizeof(float));
      w.floats(t.value.values());
    }
  }
  w.u64(checksum(w.out));
  return std::move(w.out);
}

DecodedCheckpoint decode_checkpoint(std::span<const std::uint8_t> bytes,
                                    const ArchSpec& arch, const std::string& what) {
  Reader r(bytes, what);
  if (r.str(4, "magic") != std::string(kCheckpointMagic, 4)) {
    throw Error(what + ": bad magic at offset 0, not an LPCK file");
  }
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw Error(what + ": unsupported format version " + std::to_string(version) +
                " (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  const std::uint64_t hash = r.u64("arch hash");
  if (hash != arch.hash()) {
    throw Error(what + ": written for a different architecture than '" + arch.name +
                "' (arch hash mismatch)");
  }
  DecodedCheckpoint out;
  out.epoch = static_cast<int>(r.u32("epoch"));
  const std::uint32_t records = r.u32("record count");
  for (std::uint32_t i = 0; i < records; ++i) {
    const std::size_t at = r.pos();
    const std::string name = r.str(r.u32("name length"), "name");
    const auto slash = name.rfind('/');
    if (slash == std::string::npos) {
      throw Error(what + ": record name '" + name + "' at offset " + std::to_string(at) +
                  " lacks a layer prefix");
    }
    const std::uint8_t dtype = r.u8("dtype");
    if (dtype != 0) {
      throw Error(what + ": record '" + name + "' has unknown dtype " +
                  std::to_string(dtype));
    }
    const bool trainable = r.u8("trainable flag") != 0;
    const std::uint32_t rank = r.u32("rank");
    if (rank > 8) throw Error(what + ": record '" + name + "' has rank " + std::to_string(rank));
    Dims dims;
    std::uint64_t count = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      const std::uint32_t d = r.u32("dims");
      if (d == 0 || d > (1u << 30)) {
        throw Error(what + ": record '" + name + "' has invalid dim " + std::to_string(d));
      }
      dims.push_back(static_cast<int>(d));
      count *= d;
    }
    const std::uint64_t payload = r.u64("payload size");
    if (payload != count * sizeof(float)) {
      throw Error(what + ": record '" + name + "' dims " + dims_string(dims) + " need " +
                  std::to_string(count * sizeof(float)) + " payload bytes, header says " +
                  std::to_string(payload));
    }
    r.need(payload, "payload");
    Tensor t(dims);
    r.floats(t.data(), t.size());
    out.params.layers[name.substr(0, slash)].push_back(
        {name.substr(slash + 1), std::move(t), trainable});
  }
  const std::size_t body = r.pos();
  const std::uint64_t stored = r.u64("checksum");
  if (r.remaining() != 0) {
    throw Error(what + ": " + std::to_string(r.remaining()) +
                " trailing bytes after the checksum at offset " + std::to_string(r.pos()));
  }
  if (stored != checksum(bytes.first(body))) {
    throw Error(what + ": checksum mismatch, file is corrupt");
  }
  check_params(arch, out.params);
  return out;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file_atomic(const std::filesystem::path& path,
                       std::span<const std::uint8_t> bytes) {
  auto tmp = path;
  tmp += ".tmp-" + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + tmp.string() + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw Error("write failed for '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw Error("cannot rename '" + tmp.string() + "' to '" + path.string() +
                "': " + ec.message());
  }
}

void write_file_atomic(const std::filesystem::path& path, const std::string& text) {
  write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()),
                                    text.size()));
}

void save_checkpoint(const std::filesystem::path& path, const ArchSpec& arch, int epoch,
                     const ParamSet& params) {
  write_file_atomic(path, encode_checkpoint(arch, epoch, params));
}

ParamSet load_checkpoint(const std::filesystem::path& path, const ArchSpec& arch,
                         int* epoch) {
  auto decoded = decode_checkpoint(read_file_bytes(path), arch, path.string());
  if (epoch) *epoch = decoded.epoch;
  return std::move(decoded.params);
}

nlohmann::json Manifest::init_table() const {
  nlohmann::json table = nlohmann::json::object();
  for (const auto& l : arch.layers) {
    if (!is_parametric(l.kind)) continue;
    nlohmann::json slots = nlohmann::json::array();
    for (const auto& s : tensor_slots(l)) {
      slots.push_back({{"tensor", s.name},
                       {"dims", s.dims},
                       {"trainable", s.trainable},
                       {"family", std::string(to_string(s.family))},
                       {"bound", s.bound},
                       {"constant", s.constant}});
    }
    table[l.name] = slots;
  }
  return table;
}

void to_json(nlohmann::json& j, const Manifest& m) {
  j = {{"run_id", m.run_id},
       {"arch", m.arch},
       {"arch_hash", m.arch.hash()},
       {"config", m.config},
       {"seed", m.seed},
       {"dataset", {{"id", m.dataset_id}, {"normalization", normalization_json(m.normalization)}}},
       {"init", m.init_table()},
       {"batchnorm_probe", "running statistics are restored together with the layer"},
       {"library_version", m.library_version}};
}

void from_json(const nlohmann::json& j, Manifest& m) {
  m.run_id = j.at("run_id").get<std::string>();
  m.arch = j.at("arch").get<ArchSpec>();
  m.config = j.at("config").get<TrainConfig>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.dataset_id = j.at("dataset").at("id").get<std::string>();
  m.normalization = normalization_from(j.at("dataset").at("normalization"));
  m.library_version = j.value("library_version", std::string());
  if (j.contains("arch_hash") && j.at("arch_hash").get<std::uint64_t>() != m.arch.hash()) {
    throw Error("manifest '" + m.run_id + "': arch hash does not match its arch");
  }
}

Manifest manifest_of(const CheckpointSeries& series) {
  Manifest m;
  m.run_id = series.run_id;
  m.arch = series.arch;
  m.config = series.config;
  m.seed = series.config.seed;
  m.dataset_id = series.dataset_id;
  m.normalization = series.normalization;
  return m;
}

std::string checkpoint_filename(int epoch) {
  return "ckpt-" + std::to_string(epoch) + ".lpck";
}

void write_manifest(const Manifest& manifest, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_file_atomic(dir / "manifest", nlohmann::json(manifest).dump(2) + "\n");
}

Manifest read_manifest(const std::filesystem::path& dir) {
  const auto bytes = read_file_bytes(dir / "manifest");
  try {
    return nlohmann::json::parse(bytes.begin(), bytes.end()).get<Manifest>();
  } catch (const nlohmann::json::exception& e) {
    throw Error((dir / "manifest").string() + ": " + e.what());
  }
}

void write_log_csv(const std::vector<EpochLog>& log, const std::filesystem::path& path) {
  std::ostringstream out;
  out.precision(17);
  out << "epoch,lr,train_err,test_err\n";
  for (const auto& e : log) {
    out << e.epoch << ',' << e.lr << ',' << e.train_err << ',' << e.test_err << '\n';
  }
  write_file_atomic(path, out.str());
}

std::vector<EpochLog> read_log_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  std::string line;
  std::getline(in, line);
  if (line != "epoch,lr,train_err,test_err") {
    throw Error(path.string() + ": unexpected header '" + line + "'");
  }
  std::vector<EpochLog> log;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    EpochLog e;
    char c1 = 0, c2 = 0, c3 = 0;
    std::istringstream s(line);
    if (!(s >> e.epoch >> c1 >> e.lr >> c2 >> e.train_err >> c3 >> e.test_err) ||
        c1 != ',' || c2 != ',' || c3 != ',') {
      throw Error(path.string() + ": malformed row " + std::to_string(row));
    }
    log.push_back(e);
  }
  return log;
}

void save_run(const CheckpointSeries& series, const std::filesystem::path& dir) {
  write_manifest(manifest_of(series), dir);
  for (int tau = 0; tau <= series.epochs(); ++tau) {
    save_checkpoint(dir / checkpoint_filename(tau), series.arch, tau, series.at(tau));
  }
  write_log_csv(series.log, dir / "log.csv");
}

CheckpointSeries load_run(const std::filesystem::path& dir) {
  const Manifest m = read_manifest(dir);
  CheckpointSeries series;
  series.run_id = m.run_id;
  series.arch = m.arch;
  series.config = m.config;
  series.dataset_id = m.dataset_id;
  series.normalization = m.normalization;
  series.log = read_log_csv(dir / "log.csv");
  for (std::size_t tau = 0; tau < series.log.size(); ++tau) {
    if (series.log[tau].epoch != static_cast<int>(tau)) {
      throw Error((dir / "log.csv").string() + ": epochs are not 0..T in order");
    }
    int epoch = -1;
    series.checkpoints.push_back(
        load_checkpoint(dir / checkpoint_filename(static_cast<int>(tau)), m.arch, &epoch));
    if (epoch != static_cast<int>(tau)) {
      throw Error(checkpoint_filename(static_cast<int>(tau)) + " records epoch " +
                  std::to_string(epoch));
    }
  }
  if (series.checkpoints.empty()) throw Error(dir.string() + ": run has no checkpoints");
  return series;
}

RunWriter::RunWriter(std::filesystem::path dir, Manifest manifest)
    : dir_(std::move(dir)), manifest_(std::move(manifest)) {
  write_manifest(manifest_, dir_);
}

void RunWriter::operator()(int tau, const ParamSet& params, const EpochLog& log) {
  save_checkpoint(dir_ / checkpoint_filename(tau), manifest_.arch, tau, params);
  log_.push_back(log);
  write_log_csv(log_, dir_ / "log.csv");
}

}  // namespace lp
