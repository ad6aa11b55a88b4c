#include "mcgan/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace mcgan {

namespace {

constexpr const char* kMagic = "mcgan-checkpoint 1";

void put_le(std::ostream& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  unsigned char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(bits >> (8 * i));
  out.write(reinterpret_cast<const char*>(bytes), 8);
}

double get_le(std::istream& in) {
  unsigned char bytes[8];
  if (!in.read(reinterpret_cast<char*>(bytes), 8)) throw std::runtime_error("checkpoint: truncated data");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  double v;
  std::memcpy(&v, &bits, sizeof v);
  return v;
}

std::string one_line(std::string s) {
  for (char& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  return s;
}

}  // namespace

const ParamStore& Checkpoint::store(const std::string& name) const {
  for (const auto& [n, s] : stores)
    if (n == name) return s;
  throw std::invalid_argument("checkpoint has no store named " + name);
}

void write_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << kMagic << "\n";
  out << "description " << one_line(ckpt.description) << "\n";
  out << "seed " << ckpt.seed << "\n";
  out << "iteration " << ckpt.iteration << "\n";
  for (const auto& [store, params] : ckpt.stores)
    for (const auto& e : params.entries)
      out << "array " << store << " " << e.name << " " << e.value.rows() << " " << e.value.cols() << "\n";
  out << "end\n";
  for (const auto& [store, params] : ckpt.stores)
    for (const auto& e : params.entries)
      for (Eigen::Index i = 0; i < e.value.rows(); ++i)
        for (Eigen::Index j = 0; j < e.value.cols(); ++j) put_le(out, e.value(i, j));
  if (!out) throw std::runtime_error("write failed: " + path);
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::string line;
  if (!std::getline(in, line) || line != kMagic) throw std::runtime_error(path + ": not a checkpoint");
  Checkpoint ckpt;
  while (std::getline(in, line) && line != "end") {
    std::istringstream ss(line);
    std::string key;
    ss >> key;
    if (key == "description") {
      ckpt.description = line.size() > 12 ? line.substr(12) : "";
    } else if (key == "seed") {
      ss >> ckpt.seed;
    } else if (key == "iteration") {
      ss >> ckpt.iteration;
    } else if (key == "array") {
      std::string store, name;
      Eigen::Index rows = 0, cols = 0;
      if (!(ss >> store >> name >> rows >> cols) || rows < 0 || cols < 0)
        throw std::runtime_error(path + ": malformed array line: " + line);
      if (ckpt.stores.empty() || ckpt.stores.back().first != store) ckpt.stores.push_back({store, ParamStore{}});
      ckpt.stores.back().second.entries.push_back({name, Matrix(rows, cols)});
    } else {
      throw std::runtime_error(path + ": unknown manifest key: " + key);
    }
  }
  if (line != "end") throw std::runtime_error(path + ": missing end of manifest");
  for (auto& [store, params] : ckpt.stores)
    for (auto& e : params.entries)
      for (Eigen::Index i = 0; i < e.value.rows(); ++i)
        for (Eigen::Index j = 0; j < e.value.cols(); ++j) e.value(i, j) = get_le(in);
  if (in.peek() != std::char_traits<char>::eof()) throw std::runtime_error(path + ": trailing data");
  return ckpt;
}

}  // namespace mcgan
