// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The oodkit Authors

// OODMOFE1 model files. Little-endian throughout:
//
//   magic "OODMOFE1"
//   u32 dim, u32 hidden, u32 num_classes, u32 num_experts
//   u32 gate mode (0 scaled, 1 unscaled)
//   partition: u32 K, u32 D, K*D f64 centroids, u32 C, C u32 class_to_cluster,
//              u32 T, T f64 inertia history
//   per expert: u32 Q, Q u32 class ids
//   u32 tensor count, then per tensor: u16 name length, name bytes,
//              u64 element count, f64 values

#include <bit>
#include <fstream>
#include <iterator>

#include <json.hpp>

#include "oodkit/error.hpp"
#include "oodkit/mofe.hpp"

namespace oodkit {

namespace {

constexpr char kMagic[8] = {'O', 'O', 'D', 'M', 'O', 'F', 'E', '1'};

class Writer {
 public:
  void u16(std::uint16_t v) {
    for (int s = 0; s < 16; s += 8) out_.push_back(static_cast<std::uint8_t>(v >> s));
  }
  void u32(std::uint32_t v) {
    for (int s = 0; s < 32; s += 8) out_.push_back(static_cast<std::uint8_t>(v >> s));
  }
  void u64(std::uint64_t v) {
    for (int s = 0; s < 64; s += 8) out_.push_back(static_cast<std::uint8_t>(v >> s));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& in) : in_(in) {}
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n)
      throw FormatError("unexpected end of file at byte offset " + std::to_string(in_.size()));
  }
  std::uint64_t uint(int bytes) {
    need(static_cast<std::size_t>(bytes));
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(in_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(bytes);
    return v;
  }
  std::uint32_t u32() { return static_cast<std::uint32_t>(uint(4)); }
  double f64() { return std::bit_cast<double>(uint(8)); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  // Guards allocations against corrupt counts.
  std::size_t count(std::uint64_t n, std::size_t elem_bytes) {
    need(static_cast<std::size_t>(n) * elem_bytes);
    return static_cast<std::size_t>(n);
  }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  const std::vector<std::uint8_t>& in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_model(const MoFEModel& model) {
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.u32(static_cast<std::uint32_t>(model.dim));
  w.u32(static_cast<std::uint32_t>(model.hidden));
  w.u32(static_cast<std::uint32_t>(model.num_classes));
  w.u32(static_cast<std::uint32_t>(model.num_experts()));
  w.u32(model.hyper.gate == GateMode::kScaled ? 0 : 1);

  const auto& part = model.partition;
  w.u32(static_cast<std::uint32_t>(part.centroids.rows()));
  w.u32(static_cast<std::uint32_t>(part.centroids.cols()));
  for (double v : part.centroids.data()) w.f64(v);
  w.u32(static_cast<std::uint32_t>(part.class_to_cluster.size()));
  for (auto c : part.class_to_cluster) w.u32(c);
  w.u32(static_cast<std::uint32_t>(part.inertia_history.size()));
  for (double v : part.inertia_history) w.f64(v);

  for (const auto& x : model.params.experts) {
    w.u32(static_cast<std::uint32_t>(x.class_list.size()));
    for (auto c : x.class_list) w.u32(c);
  }

  std::uint32_t tensors = 0;
  for_each_tensor(model.params, [&](TensorKind, std::size_t, const char*, const auto&) { ++tensors; });
  w.u32(tensors);
  for_each_tensor(model.params, [&](TensorKind, std::size_t, const char* name, const auto& t) {
    const std::string n(name);
    w.u16(static_cast<std::uint16_t>(n.size()));
    w.bytes(n.data(), n.size());
    w.u64(t.size());
    for (double v : t) w.f64(v);
  });
  return w.take();
}

MoFEModel decode_model(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < sizeof kMagic || !std::equal(kMagic, kMagic + 8, bytes.begin()))
    throw FormatError("not an OODMOFE1 file");
  Reader r(bytes);
  r.str(sizeof kMagic);
  MoFEModel model;
  model.dim = r.u32();
  model.hidden = r.u32();
  model.num_classes = r.u32();
  const std::size_t e_count = r.u32();
  const std::uint32_t gate = r.u32();
  if (gate > 1) throw FormatError("unknown gate mode " + std::to_string(gate));
  model.hyper.gate = gate == 0 ? GateMode::kScaled : GateMode::kUnscaled;

  auto& part = model.partition;
  const std::size_t k = r.u32();
  const std::size_t d = r.u32();
  part.centroids = Matrix(k, d);
  r.count(static_cast<std::uint64_t>(k) * d, 8);
  for (double& v : part.centroids.data()) v = r.f64();
  part.class_to_cluster.resize(r.count(r.u32(), 4));
  for (auto& c : part.class_to_cluster) c = r.u32();
  part.inertia_history.resize(r.count(r.u32(), 8));
  for (double& v : part.inertia_history) v = r.f64();

  if (k != e_count || d != model.dim || part.class_to_cluster.size() != model.num_classes)
    throw FormatError("embedded partition does not match the model header");
  for (auto c : part.class_to_cluster)
    if (c >= k) throw FormatError("class_to_cluster entry out of range");

  model.params.experts.resize(e_count);
  for (auto& x : model.params.experts) {
    x.class_list.resize(r.count(r.u32(), 4));
    for (auto& c : x.class_list) {
      c = r.u32();
      if (c >= model.num_classes) throw FormatError("expert class id out of range");
    }
  }

  const std::uint32_t tensors = r.u32();
  std::uint32_t seen = 0;
  for_each_tensor(model.params, [&](TensorKind, std::size_t, const char* name, auto& t) {
    if (seen++ >= tensors) throw FormatError("model file has too few tensors");
    const std::string got = r.str(static_cast<std::size_t>(r.uint(2)));
    if (got != name) throw FormatError("expected tensor '" + std::string(name) + "', found '" + got + "'");
    t.resize(r.count(r.uint(8), 8));
    for (double& v : t) v = r.f64();
  });
  if (seen != tensors) throw FormatError("model file has unexpected extra tensors");
  if (r.remaining() != 0) throw FormatError("trailing bytes after model tensors");

  // Shape checks.
  auto expect = [](const std::vector<double>& t, std::size_t n, const char* what) {
    if (t.size() != n) throw FormatError(std::string("tensor ") + what + " has wrong size");
  };
  expect(model.params.router_w, model.dim * e_count, "router_w");
  expect(model.params.final_ln_gamma, model.dim, "final_ln_gamma");
  expect(model.params.final_ln_beta, model.dim, "final_ln_beta");
  for (const auto& x : model.params.experts) {
    expect(x.ln1_gamma, model.dim, "ln1_gamma");
    expect(x.ln1_beta, model.dim, "ln1_beta");
    expect(x.w1, model.dim * model.hidden, "w1");
    expect(x.b1, model.hidden, "b1");
    expect(x.w2, model.hidden * model.dim, "w2");
    expect(x.b2, model.dim, "b2");
    expect(x.head_w, model.dim * x.num_outputs(), "head_w");
    expect(x.head_b, x.num_outputs(), "head_b");
  }
  return model;
}

void save_model(const MoFEModel& model, const std::filesystem::path& path) {
  const auto bytes = encode_model(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

MoFEModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>());
  return decode_model(bytes);
}

std::string history_to_json(const TrainHistory& history) {
  auto epochs = nlohmann::ordered_json::array();
  for (const auto& e : history.epochs) {
    nlohmann::ordered_json j;
    j["epoch"] = e.epoch;
    j["route_loss"] = e.route_loss;
    j["expert_loss"] = e.expert_loss;
    j["mixup_loss"] = e.mixup_loss;
    j["router_accuracy"] = e.router_accuracy;
    j["val_accuracy"] = e.val_accuracy;
    if (!e.difficulty.empty()) j["difficulty"] = e.difficulty;
    epochs.push_back(std::move(j));
  }
  nlohmann::ordered_json root;
  root["epochs"] = std::move(epochs);
  return root.dump(2) + "\n";
}

}  // namespace oodkit
