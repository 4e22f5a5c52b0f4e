#include "llp/checkpoint.hpp"

#include "llp/error.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>

namespace llp {

using nlohmann::json;

std::uint64_t fnv1a64(const std::string& text) {
  std::uint64_t hash = 14695981039346656037ull;
  for (unsigned char c : text) {
    hash ^= c;
    hash *= 1099511628211ull;
  }
  return hash;
}

namespace {

std::string hex(std::uint64_t v) {
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << v;
  return out.str();
}

}  // namespace

void write_container(const std::filesystem::path& path, const std::string& format, const json& payload) {
  const std::string body = payload.dump();
  json container = {{"format", format}, {"version", kCheckpointVersion}, {"checksum", hex(fnv1a64(body))}};
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::InvalidConfiguration, "cannot write checkpoint " + path.string());
  // Payload is spliced verbatim so the checksum is over exactly these bytes.
  std::string head = container.dump();
  head.pop_back();
  out << head << ",\"payload\":" << body << "}\n";
}

json read_container(const std::filesystem::path& path, const std::string& format) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Integrity, "cannot read checkpoint " + path.string());
  json container;
  try {
    container = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::Integrity, "corrupt checkpoint " + path.string() + ": " + e.what());
  }
  if (!container.is_object() || container.value("format", std::string{}) != format) {
    throw Error(ErrorKind::Integrity, path.string() + " is not a " + format + " file");
  }
  const int version = container.value("version", -1);
  if (version != kCheckpointVersion) {
    throw Error(ErrorKind::IncompatibleVersion, "checkpoint version " + std::to_string(version) +
                                                    ", this build reads version " +
                                                    std::to_string(kCheckpointVersion));
  }
  if (!container.contains("payload") || !container.contains("checksum")) {
    throw Error(ErrorKind::Integrity, "checkpoint lacks payload or checksum");
  }
  const json& payload = container["payload"];
  if (container["checksum"] != hex(fnv1a64(payload.dump()))) {
    throw Error(ErrorKind::Integrity, "checkpoint checksum mismatch in " + path.string());
  }
  return payload;
}

json network_state(Network& net) {
  return {{"spec", to_json(net.spec())}, {"parameters", net.flat_parameters()}, {"buffers", net.flat_buffers()}};
}

void load_network_state(Network& net, const json& state) {
  try {
    if (architecture_from_json(state.at("spec")) != net.spec()) {
      throw Error(ErrorKind::Integrity, "checkpoint architecture differs from the model");
    }
    net.set_flat_parameters(state.at("parameters").get<std::vector<double>>());
    net.set_flat_buffers(state.at("buffers").get<std::vector<double>>());
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Integrity, std::string("malformed network state: ") + e.what());
  }
}

void save_model(const std::filesystem::path& path, Network& net, const Rng& rng) {
  write_container(path, "llp-model", {{"network", network_state(net)}, {"rng", rng.state()}});
}

Network load_model(const std::filesystem::path& path, Rng& rng) {
  const json payload = read_container(path, "llp-model");
  try {
    Network net(architecture_from_json(payload.at("network").at("spec")), 0);
    load_network_state(net, payload.at("network"));
    rng.restore(payload.at("rng").get<std::string>());
    return net;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Integrity, std::string("malformed model checkpoint: ") + e.what());
  }
}

}  // namespace llp
