// Checkpoint container: a line-oriented text file.
//
//   cwda-checkpoint 1
//   stage_channels 8 16 32 64 64
//   convs_per_stage 2
//   input_channels 3
//   param <name> <rank> <dim>... \n <values>
//   buffer <name> <count> \n <values>
//   end
//
// Values are written as C99 hexadecimal floats, so a save/load cycle is
// bit-exact.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

#include "cwda/errors.hpp"
#include "cwda/model.hpp"

namespace cwda {

namespace {

constexpr const char* kMagic = "cwda-checkpoint";
constexpr int kVersion = 1;

void write_values(std::ostream& os, std::span<const double> values) {
  char buf[64];
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%a", values[i]);
    os << (i ? " " : "") << buf;
  }
  os << '\n';
}

std::vector<double> read_values(std::istream& is, std::size_t count, const std::string& name) {
  std::vector<double> values(count);
  std::string token;
  for (auto& v : values) {
    if (!(is >> token)) throw IoError("checkpoint truncated while reading " + name);
    char* end = nullptr;
    v = std::strtod(token.c_str(), &end);
    if (end == token.c_str() || *end != '\0') throw IoError("bad number '" + token + "' in " + name);
  }
  return values;
}

}  // namespace

void DetectorModel::save(const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write checkpoint " + path.string());
  os << kMagic << ' ' << kVersion << '\n';
  os << "stage_channels";
  for (auto c : config_.stage_channels) os << ' ' << c;
  os << "\nconvs_per_stage " << config_.convs_per_stage << '\n';
  os << "input_channels " << config_.input_channels << '\n';
  for (const auto& p : parameters()) {
    os << "param " << p.name << ' ' << p.tensor.rank();
    for (auto d : p.tensor.shape()) os << ' ' << d;
    os << '\n';
    write_values(os, p.tensor.data());
  }
  for (const auto& [name, values] : buffers()) {
    os << "buffer " << name << ' ' << values->size() << '\n';
    write_values(os, *values);
  }
  os << "end\n";
  if (!os) throw IoError("failed writing checkpoint " + path.string());
}

DetectorModel DetectorModel::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  std::string magic;
  int version = 0;
  is >> magic >> version;
  if (magic != kMagic || version != kVersion) throw IoError(path.string() + " is not a version-1 checkpoint");

  BackboneConfig config;
  std::string key;
  is >> key;
  if (key != "stage_channels") throw IoError("checkpoint missing stage_channels");
  for (auto& c : config.stage_channels) is >> c;
  is >> key >> config.convs_per_stage;
  if (key != "convs_per_stage") throw IoError("checkpoint missing convs_per_stage");
  is >> key >> config.input_channels;
  if (key != "input_channels") throw IoError("checkpoint missing input_channels");
  if (!is) throw IoError("malformed checkpoint header in " + path.string());

  DetectorModel model(config, 0);
  std::map<std::string, Tensor> params;
  for (auto& p : model.parameters()) params.emplace(p.name, p.tensor);
  std::map<std::string, std::vector<double>*> bufs;
  for (auto& [name, ptr] : model.buffers()) bufs.emplace(name, ptr);

  std::size_t seen_params = 0, seen_buffers = 0;
  while (is >> key) {
    if (key == "end") break;
    std::string name;
    is >> name;
    if (key == "param") {
      auto it = params.find(name);
      if (it == params.end()) throw IoError("unknown parameter " + name);
      std::size_t rank = 0;
      is >> rank;
      Shape shape(rank);
      for (auto& d : shape) is >> d;
      if (shape != it->second.shape()) {
        throw IoError("parameter " + name + " has shape " + shape_str(shape) + ", expected " +
                      shape_str(it->second.shape()));
      }
      auto values = read_values(is, shape_numel(shape), name);
      std::copy(values.begin(), values.end(), it->second.mutable_data().begin());
      ++seen_params;
    } else if (key == "buffer") {
      auto it = bufs.find(name);
      if (it == bufs.end()) throw IoError("unknown buffer " + name);
      std::size_t count = 0;
      is >> count;
      if (count != it->second->size()) throw IoError("buffer " + name + " has wrong length");
      *it->second = read_values(is, count, name);
      ++seen_buffers;
    } else {
      throw IoError("unexpected record '" + key + "' in checkpoint");
    }
  }
  if (key != "end" || seen_params != params.size() || seen_buffers != bufs.size()) {
    throw IoError("checkpoint " + path.string() + " is incomplete");
  }
  return model;
}

}  // namespace cwda
