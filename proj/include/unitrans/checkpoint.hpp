#pragma once

#include <boost/crc.hpp>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "unitrans/training_engine.hpp"

namespace unitrans {

// Archive layout: magic, format version, payload length, payload, CRC-32 of
// the payload. The payload holds the config text, RNG state, counters and
// named float arrays (parameters, buffers, optimizer moments, queue).
inline constexpr char checkpoint_magic[8] = {'U', 'N', 'T', 'R', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t checkpoint_version = 1;

namespace detail {

class ByteWriter {
 public:
  template <typename V>
  void pod(const V& v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(V));
  }
  void str(const std::string& s) {
    pod<std::uint64_t>(s.size());
    buf_.insert(buf_.end(), s.begin(), s.end());
  }
  void tensor(const std::string& name, const Tensor<float>& t) {
    str(name);
    pod<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) pod<std::int64_t>(d);
    const auto* p = reinterpret_cast<const char*>(t.data());
    buf_.insert(buf_.end(), p, p + t.size() * sizeof(float));
  }
  const std::vector<char>& bytes() const { return buf_; }

 private:
  std::vector<char> buf_;
};

class ByteReader {
 public:
  ByteReader(const char* data, std::size_t size) : p_(data), end_(data + size) {}
  template <typename V>
  V pod() {
    need(sizeof(V));
    V v;
    std::memcpy(&v, p_, sizeof(V));
    p_ += sizeof(V);
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint64_t>();
    need(n);
    std::string s(p_, p_ + n);
    p_ += n;
    return s;
  }
  Tensor<float> tensor() {
    const auto rank = pod<std::uint32_t>();
    if (rank > 8) throw CheckpointError("checkpoint: implausible tensor rank");
    Shape s(rank);
    for (auto& d : s) {
      d = pod<std::int64_t>();
      if (d < 0) throw CheckpointError("checkpoint: negative dimension");
    }
    const auto n = numel(s);
    need(static_cast<std::size_t>(n) * sizeof(float));
    std::vector<float> v(n);
    std::memcpy(v.data(), p_, n * sizeof(float));
    p_ += n * sizeof(float);
    return Tensor<float>(s, std::move(v));
  }
  bool done() const { return p_ == end_; }

 private:
  void need(std::size_t n) const {
    if (static_cast<std::size_t>(end_ - p_) < n) throw CheckpointError("checkpoint payload is truncated");
  }
  const char* p_;
  const char* end_;
};

template <typename Visit>
void visit_state_arrays(TrainState& st, Visit&& visit) {
  auto store = [&](const std::string& prefix, ParamStore<float>& ps) {
    for (std::size_t i = 0; i < ps.params().size(); ++i)
      visit(prefix + ".param." + ps.param_names()[i], ps.params()[i].mutable_value());
    for (std::size_t i = 0; i < ps.buffers().size(); ++i) visit(prefix + ".buffer." + ps.buffer_names()[i], ps.buffers()[i]);
  };
  store("E", st.E.params());
  store("E_key", st.queue.key_encoder().params());
  store("G", st.G.params());
  store("D", st.D.params());
  store("E_ema", st.ema_E.params());
  store("G_ema", st.ema_G.params());
  auto moments = [&](const std::string& prefix, std::vector<Tensor<float>>& ts) {
    for (std::size_t i = 0; i < ts.size(); ++i) visit(prefix + "." + std::to_string(i), ts[i]);
  };
  moments("opt_e.m", st.opt_e.first_moments());
  moments("opt_e.v", st.opt_e.second_moments());
  moments("opt_g.sq", st.opt_g.square_averages());
  moments("opt_d.sq", st.opt_d.square_averages());
}

inline std::uint32_t crc32_of(const char* data, std::size_t n) {
  boost::crc_32_type crc;
  crc.process_bytes(data, n);
  return crc.checksum();
}

}  // namespace detail

inline void save_checkpoint(const TrainState& state, const std::string& path) {
  auto& st = const_cast<TrainState&>(state);  // visited read-only below
  detail::ByteWriter w;
  w.str(config_to_text(st.cfg));
  std::ostringstream rng;
  rng << st.rng;
  w.str(rng.str());
  w.pod<std::int64_t>(st.iteration);
  w.pod<std::uint8_t>(st.ema_started ? 1 : 0);
  w.pod<std::int64_t>(st.opt_e.steps());
  w.pod<std::int64_t>(st.opt_g.steps());
  w.pod<std::int64_t>(st.opt_d.steps());
  std::uint32_t count = 0;
  detail::visit_state_arrays(st, [&](const std::string&, Tensor<float>&) { ++count; });
  w.pod<std::uint32_t>(count + 1);
  detail::visit_state_arrays(st, [&](const std::string& name, Tensor<float>& t) { w.tensor(name, t); });
  auto queue = st.queue.negatives();
  w.tensor("queue", queue);

  const auto& payload = w.bytes();
  const auto tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint " + tmp);
    out.write(checkpoint_magic, sizeof checkpoint_magic);
    const std::uint32_t version = checkpoint_version;
    const std::uint64_t size = payload.size();
    const std::uint32_t crc = detail::crc32_of(payload.data(), payload.size());
    out.write(reinterpret_cast<const char*>(&version), sizeof version);
    out.write(reinterpret_cast<const char*>(&size), sizeof size);
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    out.write(reinterpret_cast<const char*>(&crc), sizeof crc);
    if (!out) throw CheckpointError("failed writing checkpoint " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

// Reads and fully validates a checkpoint before building the state. When
// `expected` is given, a different cluster count or resolution is refused.
inline TrainState load_checkpoint(const std::string& path, const TrainConfig* expected = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint not found: " + path);
  std::vector<char> file((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  constexpr std::size_t header = sizeof checkpoint_magic + sizeof(std::uint32_t) + sizeof(std::uint64_t);
  if (file.size() < header + sizeof(std::uint32_t)) throw CheckpointError("checkpoint is truncated: " + path);
  if (std::memcmp(file.data(), checkpoint_magic, sizeof checkpoint_magic) != 0)
    throw CheckpointError("not a checkpoint file: " + path);
  std::uint32_t version;
  std::uint64_t size;
  std::memcpy(&version, file.data() + sizeof checkpoint_magic, sizeof version);
  std::memcpy(&size, file.data() + sizeof checkpoint_magic + sizeof version, sizeof size);
  if (version != checkpoint_version)
    throw CheckpointError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(checkpoint_version) + ")");
  if (file.size() != header + size + sizeof(std::uint32_t))
    throw CheckpointError("checkpoint size mismatch (truncated or trailing data): " + path);
  const char* payload = file.data() + header;
  std::uint32_t crc;
  std::memcpy(&crc, payload + size, sizeof crc);
  if (crc != detail::crc32_of(payload, size)) throw CheckpointError("checkpoint checksum mismatch: " + path);

  detail::ByteReader r(payload, size);
  TrainConfig cfg = parse_config(r.str());
  if (expected && (expected->num_domains != cfg.num_domains || expected->resolution != cfg.resolution))
    throw ConfigError("config conflict: checkpoint has num_domains=" + std::to_string(cfg.num_domains) +
                      ", resolution=" + std::to_string(cfg.resolution) + " but the run expects num_domains=" +
                      std::to_string(expected->num_domains) + ", resolution=" + std::to_string(expected->resolution));
  const auto rng_text = r.str();
  const auto iteration = r.pod<std::int64_t>();
  const bool ema_started = r.pod<std::uint8_t>() != 0;
  const auto steps_e = r.pod<std::int64_t>(), steps_g = r.pod<std::int64_t>(), steps_d = r.pod<std::int64_t>();
  std::map<std::string, Tensor<float>> arrays;
  const auto count = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    auto name = r.str();
    arrays[name] = r.tensor();
  }
  if (!r.done()) throw CheckpointError("checkpoint payload has trailing bytes");

  TrainState st = TrainState::create(cfg);
  detail::visit_state_arrays(st, [&](const std::string& name, Tensor<float>& t) {
    auto it = arrays.find(name);
    if (it == arrays.end()) throw CheckpointError("checkpoint is missing array " + name);
    if (it->second.shape() != t.shape())
      throw CheckpointError("checkpoint array " + name + " has shape " + shape_str(it->second.shape()) + ", expected " +
                            shape_str(t.shape()));
    t = it->second;
  });
  auto q = arrays.find("queue");
  if (q == arrays.end()) throw CheckpointError("checkpoint is missing the style queue");
  st.queue.restore(q->second);
  std::istringstream rs(rng_text);
  rs >> st.rng;
  if (!rs) throw CheckpointError("checkpoint RNG state is unreadable");
  st.iteration = iteration;
  st.ema_started = ema_started;
  st.opt_e.set_steps(steps_e);
  st.opt_g.set_steps(steps_g);
  st.opt_d.set_steps(steps_d);
  return st;
}

}  // namespace unitrans
