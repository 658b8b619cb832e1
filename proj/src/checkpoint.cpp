#include "svkit/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace svkit {

namespace {

template <typename T>
void write_raw(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T read_raw(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}

}  // namespace

uint64_t fnv1a_hash(const std::string& text) {
  uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

Checkpoint Checkpoint::from_store(const ParamStore<float>& store) {
  Checkpoint ckpt;
  for (size_t i = 0; i < store.size(); ++i) {
    const Parameter<float>* p = store.at(i);
    Record r;
    r.name = p->name;
    r.shape = p->tensor.shape;
    r.trainable = p->trainable;
    r.values = p->tensor.values;
    ckpt.records.push_back(std::move(r));
  }
  return ckpt;
}

void Checkpoint::load_into(ParamStore<float>& store) const {
  for (size_t i = 0; i < store.size(); ++i) {
    Parameter<float>* p = store.at(i);
    const Record* r = find(p->name);
    if (!r) throw NnError("checkpoint is missing parameter '" + p->name + "'");
    if (r->shape != p->tensor.shape)
      throw NnError("checkpoint shape mismatch for '" + p->name + "'");
    p->tensor.values = r->values;
  }
}

void Checkpoint::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw NnError("cannot write checkpoint '" + path + "'");
  out.write("PSNN", 4);
  write_raw<uint16_t>(out, 1);
  write_raw<uint32_t>(out, uint32_t(records.size()));
  for (const auto& r : records) {
    write_raw<uint16_t>(out, uint16_t(r.name.size()));
    out.write(r.name.data(), std::streamsize(r.name.size()));
    write_raw<uint8_t>(out, 0);  // dtype f32
    write_raw<uint8_t>(out, r.trainable ? 1 : 0);
    write_raw<uint8_t>(out, uint8_t(r.shape.size()));
    for (int d : r.shape) write_raw<uint32_t>(out, uint32_t(d));
    out.write(reinterpret_cast<const char*>(r.values.data()),
              std::streamsize(r.values.size() * sizeof(float)));
  }
  std::ostringstream meta;
  for (const auto& [k, v] : metadata) meta << k << " = " << v << "\n";
  const std::string m = meta.str();
  write_raw<uint32_t>(out, uint32_t(m.size()));
  out.write(m.data(), std::streamsize(m.size()));
  if (!out) throw NnError("write failed for checkpoint '" + path + "'");
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NnError("cannot open checkpoint '" + path + "'");
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "PSNN", 4) != 0)
    throw NnError("'" + path + "' is not a checkpoint file");
  if (read_raw<uint16_t>(in) != 1) throw NnError("unsupported checkpoint version in '" + path + "'");

  Checkpoint ckpt;
  const uint32_t count = read_raw<uint32_t>(in);
  for (uint32_t i = 0; i < count; ++i) {
    Record r;
    const uint16_t name_len = read_raw<uint16_t>(in);
    r.name.resize(name_len);
    in.read(r.name.data(), name_len);
    const uint8_t dtype = read_raw<uint8_t>(in);
    if (dtype != 0) throw NnError("unsupported dtype tag in '" + path + "'");
    r.trainable = read_raw<uint8_t>(in) != 0;
    const uint8_t ndim = read_raw<uint8_t>(in);
    size_t numel = 1;
    for (uint8_t d = 0; d < ndim; ++d) {
      r.shape.push_back(int(read_raw<uint32_t>(in)));
      numel *= size_t(r.shape.back());
    }
    r.values.resize(numel);
    in.read(reinterpret_cast<char*>(r.values.data()), std::streamsize(numel * sizeof(float)));
    if (!in) throw NnError("truncated checkpoint '" + path + "'");
    ckpt.records.push_back(std::move(r));
  }
  const uint32_t meta_len = read_raw<uint32_t>(in);
  std::string meta(meta_len, '\0');
  in.read(meta.data(), meta_len);
  if (!in) throw NnError("truncated checkpoint metadata in '" + path + "'");
  std::istringstream ms(meta);
  std::string line;
  while (std::getline(ms, line)) {
    auto eq = line.find(" = ");
    if (eq == std::string::npos) continue;
    ckpt.metadata[line.substr(0, eq)] = line.substr(eq + 3);
  }
  return ckpt;
}

}  // namespace svkit
