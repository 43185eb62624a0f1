// SPDX-License-Identifier: Apache-2.0
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

#include "smt/config_io.hpp"
#include "smt/train.hpp"
#include "../tensor/graph.hpp"

namespace smt {

namespace {

constexpr const char* kMagic = "SMTCKPT 1";

struct Entry {
  Shape shape;
  std::uint64_t offset = 0, count = 0;
};

struct Manifest {
  Json model, train, state;
  std::vector<std::pair<std::string, Entry>> tensors;
  std::size_t payload_start = 0;
};

std::string shape_field(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

Shape parse_shape(const std::string& f) {
  if (f.size() < 2 || f.front() != '[' || f.back() != ']') throw FormatError("checkpoint: bad shape field " + f);
  Shape s;
  std::stringstream in(f.substr(1, f.size() - 2));
  std::string part;
  while (std::getline(in, part, ',')) {
    try {
      std::size_t used = 0;
      const auto v = std::stoll(part, &used);
      if (used != part.size() || v < 0) throw FormatError("");
      s.push_back(v);
    } catch (const std::exception&) {
      throw FormatError("checkpoint: bad shape field " + f);
    }
  }
  return s;
}

Json json_number_or_null(double x) { return std::isfinite(x) ? Json(x) : Json(nullptr); }

Manifest parse_manifest(const std::string& bytes) {
  Manifest m;
  std::size_t pos = 0;
  auto next_line = [&]() {
    const auto eol = bytes.find('\n', pos);
    if (eol == std::string::npos) throw FormatError("checkpoint: manifest is truncated");
    auto line = bytes.substr(pos, eol - pos);
    pos = eol + 1;
    return line;
  };
  if (next_line() != kMagic) throw FormatError("checkpoint: unknown format (expected '" + std::string(kMagic) + "')");
  auto json_line = [&](const char* key) {
    const auto line = next_line();
    const std::string prefix = std::string(key) + " ";
    if (line.compare(0, prefix.size(), prefix) != 0) throw FormatError(std::string("checkpoint: missing '") + key + "' line");
    try {
      return Json::parse(line.substr(prefix.size()));
    } catch (const Json::parse_error& e) {
      throw FormatError(std::string("checkpoint: bad ") + key + " JSON: " + e.what());
    }
  };
  m.model = json_line("model");
  m.train = json_line("train");
  m.state = json_line("state");
  for (;;) {
    const auto line = next_line();
    if (line == "end") break;
    std::istringstream in(line);
    std::string tag, name, shape, extra;
    Entry e;
    in >> tag >> name >> shape >> e.offset >> e.count;
    if (!in || tag != "tensor" || (in >> extra)) throw FormatError("checkpoint: bad manifest line '" + line + "'");
    e.shape = parse_shape(shape);
    if (static_cast<std::uint64_t>(shape_numel(e.shape)) != e.count) {
      throw FormatError("checkpoint: tensor " + name + " count does not match its shape");
    }
    m.tensors.emplace_back(name, e);
  }
  m.payload_start = pos;
  std::uint64_t expected = 0;
  for (const auto& [name, e] : m.tensors) {
    if (e.offset != expected) throw FormatError("checkpoint: tensor " + name + " has an unexpected offset");
    expected += 4 * e.count;
  }
  const auto have = bytes.size() - m.payload_start;
  if (have != expected) {
    throw FormatError("checkpoint: payload has " + std::to_string(have) + " bytes, manifest implies " + std::to_string(expected));
  }
  return m;
}

template <typename T>
void put_tensor(std::string& manifest, std::string& payload, const std::string& name, const Tensor<T>& t) {
  manifest += "tensor " + name + " " + shape_field(t.shape()) + " " + std::to_string(payload.size()) + " " +
              std::to_string(t.numel()) + "\n";
  for (T x : t.data()) {
    const auto u = std::bit_cast<std::uint32_t>(static_cast<float>(x));
    for (int b = 0; b < 4; ++b) payload.push_back(static_cast<char>((u >> (8 * b)) & 0xffu));
  }
}

template <typename T>
void get_tensor(const std::string& bytes, const Manifest& m, const Entry& e, const std::string& name, Tensor<T>& dst) {
  if (e.shape != dst.shape()) {
    throw DimensionError("checkpoint tensor " + name + " has shape " + shape_str(e.shape) + ", model expects " +
                         shape_str(dst.shape()));
  }
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data()) + m.payload_start + e.offset;
  auto out = dst.mutable_data();
  for (std::size_t i = 0; i < out.size(); ++i, p += 4) {
    const auto u = static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
                   static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
    out[i] = static_cast<T>(std::bit_cast<float>(u));
  }
}

}  // namespace

template <typename T>
std::string encode_checkpoint(SwinSMT<T>& model, const TrainState<T>* state, const TrainConfig* train) {
  auto named = model.named_parameters();
  Json st = nullptr;
  if (state) {
    st = Json{{"step", state->step},
              {"opt_t", state->opt.t},
              {"best_dsc", json_number_or_null(state->best_dsc)},
              {"best_step", state->best_step},
              // Sample generators are reseeded from (seed, step, sample), so seed and step are the whole RNG state.
              {"rng", {{"seed", train ? Json(train->seed) : Json(nullptr)}, {"next_step", state->step}}}};
  }
  std::string manifest = std::string(kMagic) + "\n";
  manifest += "model " + to_json(model.config()).dump() + "\n";
  manifest += "train " + (train ? to_json(*train).dump() : std::string("null")) + "\n";
  manifest += "state " + st.dump() + "\n";
  std::string payload;
  for (const auto& [name, t] : named) put_tensor(manifest, payload, name, t);
  if (state && !state->opt.m.empty()) {
    if (state->opt.m.size() != named.size() || state->opt.v.size() != named.size()) {
      throw DimensionError("optimizer state does not match the model's parameter list");
    }
    for (std::size_t i = 0; i < named.size(); ++i) put_tensor(manifest, payload, "opt.m/" + named[i].first, state->opt.m[i]);
    for (std::size_t i = 0; i < named.size(); ++i) put_tensor(manifest, payload, "opt.v/" + named[i].first, state->opt.v[i]);
  }
  manifest += "end\n";
  return manifest + payload;
}

SwinSMTConfig checkpoint_model_config(const std::string& bytes) {
  const auto m = parse_manifest(bytes);
  return model_config_from_json(m.model);
}

std::optional<TrainConfig> checkpoint_train_config(const std::string& bytes) {
  const auto m = parse_manifest(bytes);
  if (m.train.is_null()) return std::nullopt;
  return train_config_from_json(m.train);
}

template <typename T>
void decode_checkpoint(const std::string& bytes, SwinSMT<T>& model, TrainState<T>* state) {
  const auto m = parse_manifest(bytes);
  const auto stored = model_config_from_json(m.model);
  if (!(stored == model.config())) {
    throw ConfigError("checkpoint was written for a different model: " + describe(stored) + " vs " + describe(model.config()));
  }
  std::map<std::string, const Entry*> by_name;
  for (const auto& [name, e] : m.tensors) {
    if (!by_name.emplace(name, &e).second) throw FormatError("checkpoint: duplicate tensor " + name);
  }
  auto named = model.named_parameters();
  std::size_t used = 0;
  // Validate everything before touching the model so a failed load leaves it intact.
  std::vector<Tensor<T>> staged;
  for (auto& [name, t] : named) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError("checkpoint: missing tensor " + name);
    auto tmp = Tensor<T>::zeros(t.shape());
    get_tensor(bytes, m, *it->second, name, tmp);
    staged.push_back(tmp);
    ++used;
  }
  std::vector<Tensor<T>> ms, vs;
  const bool has_opt = by_name.count("opt.m/" + named.front().first) > 0;
  if (has_opt) {
    for (auto& [name, t] : named) {
      for (auto* dst : {&ms, &vs}) {
        const auto key = (dst == &ms ? "opt.m/" : "opt.v/") + name;
        auto it = by_name.find(key);
        if (it == by_name.end()) throw FormatError("checkpoint: missing tensor " + key);
        auto tmp = Tensor<T>::zeros(t.shape());
        get_tensor(bytes, m, *it->second, key, tmp);
        dst->push_back(tmp);
        ++used;
      }
    }
  }
  if (used != m.tensors.size()) throw FormatError("checkpoint: holds tensors the model does not have");

  for (std::size_t i = 0; i < named.size(); ++i) {
    auto dst = named[i].second.mutable_data();
    const auto src = staged[i].data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
  if (!state) return;
  const auto& s = m.state;
  if (s.is_null()) {
    *state = TrainState<T>{};
    return;
  }
  try {
    state->step = s.at("step").get<std::int64_t>();
    state->opt.t = s.at("opt_t").get<std::int64_t>();
    state->best_dsc = s.at("best_dsc").is_null() ? std::numeric_limits<double>::quiet_NaN() : s.at("best_dsc").get<double>();
    state->best_step = s.at("best_step").get<std::int64_t>();
  } catch (const Json::exception& e) {
    throw FormatError(std::string("checkpoint: bad state record: ") + e.what());
  }
  state->opt.m = std::move(ms);
  state->opt.v = std::move(vs);
  state->history.clear();
}

std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

template <typename T>
void save_checkpoint(const std::string& path, SwinSMT<T>& model, const TrainState<T>* state, const TrainConfig* train) {
  const auto bytes = encode_checkpoint(model, state, train);
  const auto tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open " + tmp + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("failed writing " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw FormatError("cannot move checkpoint into place at " + path);
}

template <typename T>
void load_checkpoint(const std::string& path, SwinSMT<T>& model, TrainState<T>* state) {
  decode_checkpoint(read_file_bytes(path), model, state);
}

#define SMT_INST(T)                                                                                                   \
  template std::string encode_checkpoint<T>(SwinSMT<T>&, const TrainState<T>*, const TrainConfig*);                 \
  template void decode_checkpoint<T>(const std::string&, SwinSMT<T>&, TrainState<T>*);                              \
  template void save_checkpoint<T>(const std::string&, SwinSMT<T>&, const TrainState<T>*, const TrainConfig*);       \
  template void load_checkpoint<T>(const std::string&, SwinSMT<T>&, TrainState<T>*);
SMT_INSTANTIATE_FLOAT_TYPES(SMT_INST)
#undef SMT_INST

}  // namespace smt
