#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "datlas/errors.hpp"
#include "datlas/model.hpp"

namespace datlas {

// Binary checkpoint, all integers and doubles little-endian:
//   "DATL" | u32 version | config block | tensors until end of file
// config block: u32 L, C, D, M, temporal kind, state size; f64 dropout rate;
//               u32 task-layer flag, horizon-input flag
// tensor:       u32 name length | UTF-8 name | u32 rows | u32 cols | f64 data
// Standardisation vectors travel as the tensors "scale.*".
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

class ByteWriter {
 public:
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    bytes_.insert(bytes_.end(), b, b + n);
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void f64(double d) {
    const auto v = std::bit_cast<std::uint64_t>(d);
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  const std::vector<unsigned char>& bytes() const { return bytes_; }

 private:
  std::vector<unsigned char> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::vector<unsigned char> bytes) : bytes_(std::move(bytes)) {}
  bool done() const { return pos_ == bytes_.size(); }
  std::size_t offset() const { return pos_; }
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) throw FormatError(std::string("truncated checkpoint while reading ") + what, pos_);
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  double f64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return std::bit_cast<double>(v);
  }
  std::string text(std::size_t n, const char* what) {
    need(n, what);
    std::string s(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_), bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }

 private:
  std::vector<unsigned char> bytes_;
  std::size_t pos_ = 0;
};

inline void write_tensor(ByteWriter& w, const std::string& name, const Tensor& t) {
  w.u32(static_cast<std::uint32_t>(name.size()));
  w.raw(name.data(), name.size());
  w.u32(static_cast<std::uint32_t>(t.rows()));
  w.u32(static_cast<std::uint32_t>(t.cols()));
  for (double v : t.values()) w.f64(v);
}

inline constexpr std::size_t kScaleCount = 5;
inline const char* const kScaleNames[kScaleCount] = {"scale.input_mean", "scale.input_sd", "scale.output_mean",
                                                     "scale.output_sd", "scale.hazard"};

}  // namespace detail

inline std::vector<unsigned char> encode_checkpoint(const ModelParams& params) {
  const NetworkConfig& c = params.config;
  detail::ByteWriter w;
  w.raw("DATL", 4);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(c.num_covariates));
  w.u32(static_cast<std::uint32_t>(c.num_continuous));
  w.u32(static_cast<std::uint32_t>(c.num_binary));
  w.u32(static_cast<std::uint32_t>(c.num_events));
  w.u32(static_cast<std::uint32_t>(c.temporal));
  w.u32(static_cast<std::uint32_t>(c.state_size));
  w.f64(c.dropout_rate);
  w.u32(c.task_layers ? 1u : 0u);
  w.u32(c.horizon_input ? 1u : 0u);
  for (std::size_t i = 0; i < params.tensors.size(); ++i) detail::write_tensor(w, params.names[i], params.tensors[i]);
  const std::vector<double>* scale[detail::kScaleCount] = {&params.scaling.input_mean, &params.scaling.input_sd,
                                                           &params.scaling.output_mean, &params.scaling.output_sd,
                                                           &params.scaling.hazard_scale};
  for (std::size_t k = 0; k < detail::kScaleCount; ++k)
    detail::write_tensor(w, detail::kScaleNames[k], Tensor::column(*scale[k]));
  return w.bytes();
}

inline ModelParams decode_checkpoint(std::vector<unsigned char> bytes) {
  detail::ByteReader r(std::move(bytes));
  if (r.text(4, "magic") != "DATL") throw FormatError("bad magic, expected DATL", 0);
  const std::size_t version_at = r.offset();
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version), version_at);

  const std::size_t config_at = r.offset();
  NetworkConfig c;
  c.num_covariates = r.u32("config");
  c.num_continuous = r.u32("config");
  c.num_binary = r.u32("config");
  c.num_events = r.u32("config");
  const std::uint32_t kind = r.u32("config");
  c.temporal = static_cast<TemporalKind>(kind);
  c.state_size = r.u32("config");
  c.dropout_rate = r.f64("config");
  const std::uint32_t task_flag = r.u32("config");
  const std::uint32_t horizon_flag = r.u32("config");
  if (kind > 2 || task_flag > 1 || horizon_flag > 1) throw FormatError("invalid config block", config_at);
  c.task_layers = task_flag == 1;
  c.horizon_input = horizon_flag == 1;
  try {
    c.validate();
  } catch (const ContractViolation& e) {
    throw FormatError(std::string("invalid config block: ") + e.what(), config_at);
  }

  ModelParams p;
  p.config = c;
  const auto specs = parameter_specs(c, &p.layout);
  p.names.resize(specs.size());
  p.tensors.resize(specs.size());
  constexpr std::size_t K = detail::kScaleCount;
  std::vector<bool> seen(specs.size() + K, false);
  std::vector<double>* scale[K] = {&p.scaling.input_mean, &p.scaling.input_sd, &p.scaling.output_mean,
                                   &p.scaling.output_sd, &p.scaling.hazard_scale};
  const std::size_t scale_len[K] = {c.input_width(), c.input_width(), c.num_continuous, c.num_continuous,
                                    c.num_events};

  while (!r.done()) {
    const std::size_t at = r.offset();
    const std::uint32_t len = r.u32("tensor name length");
    if (len > 4096) throw FormatError("implausible tensor name length", at);
    const std::string name = r.text(len, "tensor name");
    const std::uint32_t rows = r.u32("tensor rows");
    const std::uint32_t cols = r.u32("tensor cols");
    std::size_t index = specs.size() + K;
    std::size_t want_rows = 0, want_cols = 0;
    for (std::size_t i = 0; i < specs.size(); ++i) {
      if (specs[i].name == name) {
        index = i;
        want_rows = specs[i].rows;
        want_cols = specs[i].cols;
      }
    }
    for (std::size_t k = 0; k < K; ++k) {
      if (name == detail::kScaleNames[k]) {
        index = specs.size() + k;
        want_rows = scale_len[k];
        want_cols = 1;
      }
    }
    if (index == specs.size() + K) throw FormatError("unknown tensor '" + name + "'", at);
    if (seen[index]) throw FormatError("duplicate tensor '" + name + "'", at);
    if (rows != want_rows || cols != want_cols) throw FormatError("tensor '" + name + "' has the wrong shape", at);
    r.need(std::size_t{8} * rows * cols, "tensor payload");
    std::vector<double> data(std::size_t{rows} * cols);
    for (double& v : data) v = r.f64("tensor payload");
    seen[index] = true;
    if (index < specs.size()) {
      p.names[index] = name;
      p.tensors[index] = Tensor(rows, cols, std::move(data));
    } else {
      *scale[index - specs.size()] = std::move(data);
    }
  }
  for (std::size_t i = 0; i < seen.size(); ++i) {
    if (!seen[i]) {
      const std::string name = i < specs.size() ? specs[i].name : detail::kScaleNames[i - specs.size()];
      throw FormatError("checkpoint is missing tensor '" + name + "'", r.offset());
    }
  }
  return p;
}

inline void save_checkpoint(const ModelParams& params, const std::string& path) {
  const auto bytes = encode_checkpoint(params);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

inline ModelParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(std::move(bytes));
}

}  // namespace datlas
