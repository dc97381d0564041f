#include "gradnet/snapshot.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "gradnet/config.hpp"
#include "gradnet/errors.hpp"

namespace gradnet {

namespace {

constexpr const char* kFormat = "gradnet-snapshot-1";

std::uint64_t to_little(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  std::uint64_t out = 0;
  for (int i = 0; i < 8; ++i) out = (out << 8) | ((v >> (8 * i)) & 0xff);
  return out;
}

}  // namespace

Snapshot capture(Model& model) {
  Snapshot s;
  s.gate = model.gate().value();
  for (Parameter* p : model.parameters()) s.tensors.push_back({p->name, p->value.clone()});
  for (const Buffer& b : model.buffers()) s.tensors.push_back({b.name, b.value->clone()});
  return s;
}

void restore(Model& model, const Snapshot& snapshot) {
  auto params = model.parameters();
  auto bufs = model.buffers();
  if (snapshot.tensors.size() != params.size() + bufs.size()) {
    throw ContractError("snapshot holds " + std::to_string(snapshot.tensors.size()) +
                        " tensors, model has " + std::to_string(params.size() + bufs.size()));
  }
  std::vector<Tensor> state;
  std::size_t i = 0;
  auto check = [&](const std::string& name) {
    const NamedTensor& t = snapshot.tensors[i++];
    if (t.name != name) {
      throw ContractError("snapshot tensor '" + t.name + "' where model expects '" + name + "'");
    }
    state.push_back(t.value.clone());
  };
  for (Parameter* p : params) check(p->name);
  for (const Buffer& b : bufs) check(b.name);
  model.load_state(state);
  model.set_gate(GateValue(snapshot.gate));
}

void write_snapshot(const Snapshot& snapshot, const std::filesystem::path& path) {
  Json header;
  header["format"] = kFormat;
  header["gate"] = snapshot.gate;
  header["tensors"] = Json::array();
  for (const auto& t : snapshot.tensors) {
    header["tensors"].push_back({{"name", t.name}, {"shape", t.value.shape()}});
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write snapshot " + path.string());
  out << header.dump() << '\n';
  for (const auto& t : snapshot.tensors) {
    for (double v : t.value.data()) {
      const std::uint64_t bits = to_little(std::bit_cast<std::uint64_t>(v));
      char bytes[8];
      std::memcpy(bytes, &bits, 8);
      out.write(bytes, 8);
    }
  }
  if (!out) throw Error("failed writing snapshot " + path.string());
}

Snapshot read_snapshot(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open snapshot " + path.string());
  std::string line;
  std::getline(in, line);
  Json header;
  try {
    header = Json::parse(line);
  } catch (const Json::exception& e) {
    throw FormatError("snapshot header is not JSON: " + std::string(e.what()));
  }
  if (header.value("format", "") != kFormat) {
    throw FormatError("not a gradnet snapshot: " + path.string());
  }
  Snapshot s;
  s.gate = header.at("gate").get<double>();
  for (const auto& entry : header.at("tensors")) {
    Shape shape = entry.at("shape").get<Shape>();
    std::vector<double> values(numel(shape));
    for (double& v : values) {
      char bytes[8];
      if (!in.read(bytes, 8)) throw FormatError("snapshot truncated: " + path.string());
      std::uint64_t bits;
      std::memcpy(&bits, bytes, 8);
      v = std::bit_cast<double>(to_little(bits));
    }
    s.tensors.push_back({entry.at("name").get<std::string>(), Tensor(shape, std::move(values))});
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw FormatError("trailing bytes after snapshot data: " + path.string());
  }
  return s;
}

}  // namespace gradnet
