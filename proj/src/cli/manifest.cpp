#include <array>
#include <fstream>

#include <openssl/evp.h>

#include "sae/cli.hpp"
#include "sae/error.hpp"

namespace sae::cli {

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cli", "cannot read '" + path.string() + "'");
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  std::array<char, 1 << 16> buf;
  while (in) {
    in.read(buf.data(), buf.size());
    EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  std::array<unsigned char, EVP_MAX_MD_SIZE> md;
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md.data(), &len);
  EVP_MD_CTX_free(ctx);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

Manifest::Manifest(std::string command) : command_(std::move(command)) {}

void Manifest::input(const std::string& role, const std::filesystem::path& path) {
  inputs_[role] = {{"path", path.string()}, {"sha256", sha256_file(path)}};
}

void Manifest::output(const std::filesystem::path& dir, const std::string& name) {
  outputs_[name] = sha256_file(dir / name);
}

nlohmann::json Manifest::to_json() const {
  nlohmann::json j{{"command", command_},
                   {"version", SAE_VERSION},
                   {"config", config_},
                   {"inputs", inputs_},
                   {"outputs", outputs_}};
  if (!notes_.empty()) j["notes"] = notes_;
  return j;
}

void Manifest::write(const std::filesystem::path& dir) const {
  std::ofstream out(dir / "manifest.json", std::ios::binary);
  if (!out) throw Error(ErrorKind::io, "cli", "cannot write manifest in '" + dir.string() + "'");
  out << to_json().dump(2) << '\n';
}

}  // namespace sae::cli
