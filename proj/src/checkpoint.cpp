// SPDX-License-Identifier: Apache-2.0
#include "macd/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace macd {

namespace {

constexpr char kMagic[8] = {'M', 'A', 'C', 'D', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void put_string(std::ostream& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void put_matrix(std::ostream& out, const Matrix<double>& m) {
  out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
}

template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw CheckpointError("checkpoint is truncated");
  return v;
}

std::string get_string(std::istream& in) {
  const auto n = get<std::uint32_t>(in);
  if (n > (1u << 26)) throw CheckpointError("checkpoint string length is implausible");
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) throw CheckpointError("checkpoint is truncated");
  return s;
}

void get_matrix(std::istream& in, Matrix<double>& m) {
  in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
  if (!in) throw CheckpointError("checkpoint is truncated");
}

CheckpointInfo read_header(std::istream& in) {
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0) throw CheckpointError("not a checkpoint file");
  const auto version = get<std::uint32_t>(in);
  if (version != kVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  CheckpointInfo info;
  info.fingerprint = get<std::uint64_t>(in);
  info.n_items_x = get<std::int32_t>(in);
  info.n_items_y = get<std::int32_t>(in);
  info.epoch = get<std::int32_t>(in);
  info.adam_steps = static_cast<long>(get<std::int64_t>(in));
  try {
    info.config = config_from_json(get_string(in));
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("checkpoint config is unreadable: ") + e.what());
  }
  return info;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  return in;
}

std::unique_ptr<Model> read_body(std::istream& in, const CheckpointInfo& info) {
  auto model = std::make_unique<Model>(info.config, info.n_items_x, info.n_items_y, 0);
  auto& store = model->parameters();
  const auto count = get<std::uint32_t>(in);
  if (count != store.size())
    throw CheckpointError("checkpoint holds " + std::to_string(count) + " parameters, model expects " +
                          std::to_string(store.size()));
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name = get_string(in);
    const auto rows = get<std::int64_t>(in);
    const auto cols = get<std::int64_t>(in);
    if (!store.contains(name)) throw CheckpointError("checkpoint parameter " + name + " is unknown to the model");
    auto& p = store.at(name);
    if (p.value.rows() != rows || p.value.cols() != cols)
      throw CheckpointError("checkpoint parameter " + name + " has the wrong shape");
    get_matrix(in, p.value);
    get_matrix(in, p.first_moment);
    get_matrix(in, p.second_moment);
  }
  return model;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Model& model, int epoch, long adam_steps) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  const int nx = model.n_items(Domain::X), ny = model.n_items(Domain::Y);
  out.write(kMagic, 8);
  put<std::uint32_t>(out, kVersion);
  put<std::uint64_t>(out, config_fingerprint(model.config(), nx, ny));
  put<std::int32_t>(out, nx);
  put<std::int32_t>(out, ny);
  put<std::int32_t>(out, epoch);
  put<std::int64_t>(out, adam_steps);
  put_string(out, config_to_json(model.config()));
  const auto& store = model.parameters();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(store.size()));
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& p = store[i];
    put_string(out, p.name);
    put<std::int64_t>(out, p.value.rows());
    put<std::int64_t>(out, p.value.cols());
    put_matrix(out, p.value);
    put_matrix(out, p.first_moment);
    put_matrix(out, p.second_moment);
  }
  if (!out) throw CheckpointError("failed while writing checkpoint " + path.string());
}

CheckpointInfo read_checkpoint_info(const std::filesystem::path& path) {
  auto in = open_in(path);
  return read_header(in);
}

std::unique_ptr<Model> load_checkpoint(const std::filesystem::path& path, const TrainConfig& expected, int n_items_x,
                                       int n_items_y, CheckpointInfo* info) {
  auto in = open_in(path);
  const auto header = read_header(in);
  const auto want = config_fingerprint(expected, n_items_x, n_items_y);
  if (header.fingerprint != want) {
    std::ostringstream msg;
    msg << "config fingerprint mismatch: checkpoint " << std::hex << header.fingerprint << " was trained with a"
        << " different configuration or vocabulary than the requested one (" << want << ")";
    throw CheckpointError(msg.str());
  }
  auto model = read_body(in, header);
  model->set_inference_options(expected.irg, expected.irg_scope, expected.eval_negatives, expected.eval_batch_size);
  if (info) *info = header;
  return model;
}

std::unique_ptr<Model> load_checkpoint(const std::filesystem::path& path, CheckpointInfo* info) {
  auto in = open_in(path);
  const auto header = read_header(in);
  if (config_fingerprint(header.config, header.n_items_x, header.n_items_y) != header.fingerprint)
    throw CheckpointError("checkpoint fingerprint does not match its stored config");
  auto model = read_body(in, header);
  if (info) *info = header;
  return model;
}

}  // namespace macd
