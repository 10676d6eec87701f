// Copyright 2026 The ACP Rerank Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <cstring>

#include "acp/acp_model.hpp"
#include "binary_io.hpp"

namespace acp::model {
namespace {

using detail::Reader;
using detail::Writer;

constexpr char kMagic[4] = {'A', 'C', 'P', 'M'};
constexpr std::uint32_t kVersion = 1;

void put_tensor(Writer& w, const Tensor<float>& t) {
  w.put<std::uint32_t>(static_cast<std::uint32_t>(t.rows()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(t.cols()));
  w.put_bytes(t.data(), t.size() * sizeof(float));
}

Tensor<float> get_tensor(Reader& r, const std::string& what,
                         std::size_t rows, std::size_t cols) {
  const std::uint64_t at = r.pos();
  const auto rr = r.get<std::uint32_t>("tensor rows");
  const auto cc = r.get<std::uint32_t>("tensor cols");
  if (rr != rows || cc != cols) {
    throw FormatError(what + " is " + std::to_string(rr) + "x" +
                          std::to_string(cc) + ", model expects " +
                          std::to_string(rows) + "x" + std::to_string(cols),
                      at);
  }
  Tensor<float> t(rows, cols);
  r.need(t.size() * sizeof(float), what.c_str());
  std::memcpy(t.data(), r.cursor(), t.size() * sizeof(float));
  const std::uint64_t values_at = r.pos();
  r.skip(t.size() * sizeof(float));
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!std::isfinite(t[i])) {
      throw FormatError("non-finite value in " + what,
                        values_at + i * sizeof(float));
    }
  }
  return t;
}

void put_config(Writer& w, const ACPConfig& c) {
  w.put<std::uint32_t>(static_cast<std::uint32_t>(c.block_dims.size()));
  for (auto d : c.block_dims) w.put<std::uint32_t>(d);
  for (std::size_t v : {c.d, c.n_layers, c.heads, c.d_ffn, c.n_mem, c.d_m})
    w.put<std::uint64_t>(v);
  w.put<double>(c.p_d);
  w.put<double>(c.p_attn);
  w.put<std::uint8_t>(c.share_kv ? 1 : 0);
  w.put<std::uint8_t>(c.refine ? 1 : 0);
}

ACPConfig get_config(Reader& r) {
  ACPConfig c;
  const std::uint64_t at = r.pos();
  const auto nb = r.get<std::uint32_t>("block count");
  if (nb == 0 || nb > 64) {
    throw FormatError("block count " + std::to_string(nb) + " out of range", at);
  }
  c.block_dims.clear();
  for (std::uint32_t b = 0; b < nb; ++b)
    c.block_dims.push_back(r.get<std::uint32_t>("block dimension"));
  std::size_t* fields[] = {&c.d, &c.n_layers, &c.heads, &c.d_ffn, &c.n_mem, &c.d_m};
  for (auto* f : fields)
    *f = static_cast<std::size_t>(r.get<std::uint64_t>("config field"));
  c.p_d = r.get<double>("p_d");
  c.p_attn = r.get<double>("p_attn");
  c.share_kv = r.get<std::uint8_t>("share_kv") != 0;
  c.refine = r.get<std::uint8_t>("refine") != 0;
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("invalid stored config: ") + e.what(), at);
  }
  return c;
}

std::vector<std::uint8_t> serialize(const ACPModel<float>& model) {
  Writer w;
  w.put_bytes(kMagic, 4);
  w.put<std::uint32_t>(kVersion);
  put_config(w, model.config());
  w.put<std::uint64_t>(model.steps());
  w.put<std::uint32_t>(static_cast<std::uint32_t>(model.parameters().size()));
  for (const auto& p : model.parameters()) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(p.name.size()));
    w.put_bytes(p.name.data(), p.name.size());
    put_tensor(w, p.value);
  }
  for (const auto* bn : {&model.fusion_bn(), &model.memory_bn()}) {
    put_tensor(w, bn->running_mean);
    put_tensor(w, bn->running_var);
  }
  return w.take();
}

/// Reads the payload after the config header into `model`.
void read_payload(Reader& r, ACPModel<float>& model) {
  model.set_steps(r.get<std::uint64_t>("step count"));
  const std::uint64_t count_at = r.pos();
  const auto count = r.get<std::uint32_t>("parameter count");
  auto& params = model.parameters();
  if (count != params.size()) {
    throw FormatError("checkpoint holds " + std::to_string(count) +
                          " parameters, model has " +
                          std::to_string(params.size()),
                      count_at);
  }
  for (auto& p : params) {
    const std::uint64_t at = r.pos();
    const auto len = r.get<std::uint32_t>("name length");
    if (len > 256) throw FormatError("parameter name too long", at);
    r.need(len, "parameter name");
    std::string name(reinterpret_cast<const char*>(r.cursor()), len);
    r.skip(len);
    if (name != p.name) {
      throw FormatError("expected parameter '" + p.name + "', found '" + name +
                            "'",
                        at);
    }
    p.value = get_tensor(r, name, p.value.rows(), p.value.cols());
    p.zero_grad();
  }
  for (auto* bn : {&model.fusion_bn(), &model.memory_bn()}) {
    const std::size_t d = bn->running_mean.cols();
    bn->running_mean = get_tensor(r, "running mean", 1, d);
    bn->running_var = get_tensor(r, "running variance", 1, d);
  }
  if (r.remaining() != 0) {
    throw FormatError("unexpected trailing bytes", r.pos());
  }
}

ACPConfig read_header(Reader& r) {
  r.need(4, "magic");
  if (std::memcmp(r.cursor(), kMagic, 4) != 0) {
    throw FormatError("bad magic, expected \"ACPM\"", 0);
  }
  r.skip(4);
  const std::uint64_t at = r.pos();
  const auto version = r.get<std::uint32_t>("version");
  if (version != kVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version),
                      at);
  }
  return get_config(r);
}

}  // namespace

void save_checkpoint(const ACPModel<float>& model,
                     const std::filesystem::path& path) {
  detail::write_file(path, serialize(model));
}

ACPModel<float> load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  Reader r(bytes);
  ACPModel<float> model(read_header(r));
  read_payload(r, model);
  return model;
}

void load_checkpoint_into(ACPModel<float>& model,
                          const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  Reader r(bytes);
  const ACPConfig stored = read_header(r);
  if (!(stored == model.config())) {
    throw ConfigError("checkpoint " + path.string() +
                      " was written for a different model config");
  }
  ACPModel<float> staged = model;
  read_payload(r, staged);
  model = std::move(staged);
}

}  // namespace acp::model
