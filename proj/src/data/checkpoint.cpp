#include "data/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

namespace invflow {

static_assert(std::endian::native == std::endian::little,
              "checkpoint serialisation assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'I', 'V', 'F', 'L'};
constexpr uint32_t kVersion = 1;

enum Dtype : uint8_t { kF64 = 0, kU8 = 1, kU64 = 2 };

struct Record {
  std::string name;
  uint8_t dtype = kF64;
  std::vector<uint64_t> dims;
  std::vector<char> payload;

  size_t element_count() const {
    size_t n = 1;
    for (uint64_t d : dims) n *= static_cast<size_t>(d);
    return dims.empty() ? 0 : n;
  }
};

class Writer {
 public:
  void add_f64(const std::string& name, const std::vector<double>& v) {
    Record r;
    r.name = name;
    r.dtype = kF64;
    r.dims = {static_cast<uint64_t>(v.size())};
    r.payload.resize(v.size() * sizeof(double));
    std::memcpy(r.payload.data(), v.data(), r.payload.size());
    records_.push_back(std::move(r));
  }

  void add_u8(const std::string& name, const std::string& bytes) {
    Record r;
    r.name = name;
    r.dtype = kU8;
    r.dims = {static_cast<uint64_t>(bytes.size())};
    r.payload.assign(bytes.begin(), bytes.end());
    records_.push_back(std::move(r));
  }

  void add_u64(const std::string& name, uint64_t value) {
    Record r;
    r.name = name;
    r.dtype = kU64;
    r.dims = {1};
    r.payload.resize(sizeof(uint64_t));
    std::memcpy(r.payload.data(), &value, sizeof(uint64_t));
    records_.push_back(std::move(r));
  }

  void write(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CheckpointError(CheckpointErrorKind::Io, path + ": cannot open for writing");
    out.write(kMagic, 4);
    put_u32(out, kVersion);
    put_u32(out, static_cast<uint32_t>(records_.size()));
    for (const auto& r : records_) {
      put_u32(out, static_cast<uint32_t>(r.name.size()));
      out.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
      out.put(static_cast<char>(r.dtype));
      put_u32(out, static_cast<uint32_t>(r.dims.size()));
      for (uint64_t d : r.dims)
        out.write(reinterpret_cast<const char*>(&d), sizeof(uint64_t));
      out.write(r.payload.data(), static_cast<std::streamsize>(r.payload.size()));
    }
    if (!out) throw CheckpointError(CheckpointErrorKind::Io, path + ": write failed");
  }

 private:
  static void put_u32(std::ostream& out, uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(uint32_t));
  }

  std::vector<Record> records_;
};

class Reader {
 public:
  static uint32_t get_u32(std::istream& in) {
    uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(uint32_t));
    return v;
  }

  explicit Reader(const std::string& path) : path_(path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError(CheckpointErrorKind::Io, path + ": cannot open");
    char magic[4];
    if (!in.read(magic, 4))
      throw CheckpointError(CheckpointErrorKind::Truncated, path + ": missing magic");
    if (std::memcmp(magic, kMagic, 4) != 0)
      throw CheckpointError(CheckpointErrorKind::BadMagic, path + ": not a checkpoint file");
    uint32_t version = get_u32(in);
    if (version != kVersion)
      throw CheckpointError(CheckpointErrorKind::BadVersion,
                            path + ": unsupported version " + std::to_string(version));
    uint32_t count = get_u32(in);
    for (uint32_t i = 0; i < count; ++i) {
      Record r;
      uint32_t name_len = get_u32(in);
      if (name_len > 4096)
        throw CheckpointError(CheckpointErrorKind::Truncated, path + ": malformed record name");
      r.name.resize(name_len);
      if (!in.read(r.name.data(), name_len))
        throw CheckpointError(CheckpointErrorKind::Truncated, path + ": truncated record name");
      int dt = in.get();
      if (dt < 0) throw CheckpointError(CheckpointErrorKind::Truncated, path + ": truncated dtype");
      r.dtype = static_cast<uint8_t>(dt);
      uint32_t ndim = get_u32(in);
      if (ndim > 8)
        throw CheckpointError(CheckpointErrorKind::Truncated, path + ": malformed rank");
      size_t elems = 1;
      for (uint32_t d = 0; d < ndim; ++d) {
        uint64_t dim;
        if (!in.read(reinterpret_cast<char*>(&dim), sizeof(uint64_t)))
          throw CheckpointError(CheckpointErrorKind::Truncated, path + ": truncated dims");
        r.dims.push_back(dim);
        elems *= static_cast<size_t>(dim);
      }
      size_t esize = r.dtype == kF64 ? sizeof(double) : r.dtype == kU64 ? sizeof(uint64_t) : 1;
      r.payload.resize(elems * esize);
      if (!in.read(r.payload.data(), static_cast<std::streamsize>(r.payload.size())))
        throw CheckpointError(CheckpointErrorKind::Truncated,
                              path + ": truncated payload of " + r.name);
      records_[r.name] = std::move(r);
    }
  }

  const Record& get(const std::string& name, uint8_t dtype) const {
    auto it = records_.find(name);
    if (it == records_.end())
      throw CheckpointError(CheckpointErrorKind::MissingRecord, path_ + ": missing record " + name);
    if (it->second.dtype != dtype)
      throw CheckpointError(CheckpointErrorKind::ShapeMismatch,
                            path_ + ": record " + name + " has unexpected dtype");
    return it->second;
  }

  std::vector<double> get_f64(const std::string& name, size_t want_size) const {
    const Record& r = get(name, kF64);
    if (r.element_count() != want_size)
      throw CheckpointError(CheckpointErrorKind::ShapeMismatch,
                            path_ + ": record " + name + " has " +
                                std::to_string(r.element_count()) + " elements, expected " +
                                std::to_string(want_size));
    std::vector<double> v(want_size);
    std::memcpy(v.data(), r.payload.data(), r.payload.size());
    return v;
  }

  std::string get_u8(const std::string& name) const {
    const Record& r = get(name, kU8);
    return std::string(r.payload.begin(), r.payload.end());
  }

  uint64_t get_u64(const std::string& name) const {
    const Record& r = get(name, kU64);
    if (r.element_count() != 1)
      throw CheckpointError(CheckpointErrorKind::ShapeMismatch,
                            path_ + ": record " + name + " should hold one value");
    uint64_t v;
    std::memcpy(&v, r.payload.data(), sizeof(uint64_t));
    return v;
  }

 private:
  std::string path_;
  std::map<std::string, Record> records_;
};

nlohmann::json config_json(const FlowConfig& c) {
  return {{"channels", c.channels},     {"height", c.height},
          {"width", c.width},           {"flow_steps", c.flow_steps},
          {"blocks", c.blocks},         {"kernel_size", c.kernel_size},
          {"hidden_width", c.hidden_width}};
}

FlowConfig config_from_json(const nlohmann::json& j) {
  FlowConfig c;
  c.channels = j.at("channels").get<int>();
  c.height = j.at("height").get<int>();
  c.width = j.at("width").get<int>();
  c.flow_steps = j.at("flow_steps").get<int>();
  c.blocks = j.at("blocks").get<int>();
  c.kernel_size = j.at("kernel_size").get<int>();
  c.hidden_width = j.at("hidden_width").get<int>();
  return c;
}

}  // namespace

void save_checkpoint(const std::string& path, FlowModel& model, AdamState& adam, int64_t step,
                     const std::mt19937_64& rng) {
  Writer w;
  w.add_u8("config", config_json(model.config()).dump());
  w.add_u64("train/step", static_cast<uint64_t>(step));
  w.add_u64("adam/t", static_cast<uint64_t>(adam.t));
  std::ostringstream rs;
  rs << rng;
  w.add_u8("rng/train", rs.str());

  model.visit_params([&](const ParamRef& p) { w.add_f64("param/" + p.name, *p.values); });
  adam.m.visit_params([&](const ParamRef& p) { w.add_f64("adam/m/" + p.name, *p.values); });
  adam.v.visit_params([&](const ParamRef& p) { w.add_f64("adam/v/" + p.name, *p.values); });

  std::string flags;
  for (const auto& block : model.blocks())
    for (const auto& s : block) flags.push_back(s.actnorm.initialized ? '\1' : '\0');
  w.add_u8("state/actnorm_init", flags);

  w.write(path);
}

Checkpoint load_checkpoint(const std::string& path) {
  Reader r(path);
  FlowConfig cfg;
  try {
    cfg = config_from_json(nlohmann::json::parse(r.get_u8("config")));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(CheckpointErrorKind::ShapeMismatch,
                          path + ": malformed config record: " + e.what());
  }
  cfg.validate();

  Checkpoint out;
  out.model = FlowModel(cfg, 0);
  out.adam = AdamState(out.model);
  out.step = static_cast<int64_t>(r.get_u64("train/step"));
  out.adam.t = static_cast<int64_t>(r.get_u64("adam/t"));

  out.model.visit_params(
      [&](const ParamRef& p) { *p.values = r.get_f64("param/" + p.name, p.values->size()); });
  out.adam.m.visit_params(
      [&](const ParamRef& p) { *p.values = r.get_f64("adam/m/" + p.name, p.values->size()); });
  out.adam.v.visit_params(
      [&](const ParamRef& p) { *p.values = r.get_f64("adam/v/" + p.name, p.values->size()); });

  std::string flags = r.get_u8("state/actnorm_init");
  size_t want = 0;
  for (const auto& block : out.model.blocks()) want += block.size();
  if (flags.size() != want)
    throw CheckpointError(CheckpointErrorKind::ShapeMismatch,
                          path + ": actnorm flag count does not match model");
  size_t i = 0;
  for (auto& block : out.model.blocks())
    for (auto& s : block) s.actnorm.initialized = flags[i++] != '\0';

  std::istringstream rs(r.get_u8("rng/train"));
  rs >> out.rng;
  if (!rs)
    throw CheckpointError(CheckpointErrorKind::ShapeMismatch, path + ": malformed rng record");
  return out;
}

}  // namespace invflow
