// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The oodkit Authors

#include "oodkit/embedding_store.hpp"

#include <algorithm>
#include <bit>
#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "oodkit/error.hpp"
#include "oodkit/rng.hpp"

namespace oodkit {

namespace {

constexpr char kMagic[8] = {'O', 'O', 'D', 'E', 'M', 'B', '1', '\0'};

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int s = 0; s < 32; s += 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n)
      throw FormatError("unexpected end of file at byte offset " + std::to_string(bytes_.size()));
  }
  std::uint16_t u16() {
    need(2);
    const std::uint16_t v = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path.string());
  return bytes;
}

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t')) --e;
  return std::string(s.substr(b, e - b));
}

std::string csv_error(std::size_t line, std::size_t column, const std::string& what) {
  return "parse error at line " + std::to_string(line) + " column " + std::to_string(column) +
         ": " + what;
}

}  // namespace

bool EmbeddingSet::same_content(const EmbeddingSet& other) const {
  if (features.rows() != other.features.rows() || features.cols() != other.features.cols())
    return false;
  // Bitwise comparison so that -0.0 vs 0.0 counts as a difference.
  const auto& a = features.data();
  const auto& b = other.features.data();
  for (std::size_t i = 0; i < a.size(); ++i)
    if (std::bit_cast<std::uint64_t>(a[i]) != std::bit_cast<std::uint64_t>(b[i])) return false;
  return labels == other.labels && class_names == other.class_names;
}

void validate(const EmbeddingSet& set) {
  const std::size_t n = set.size();
  if (n == 0) throw ValidationError("embedding set is empty (N = 0)");
  if (set.dim() == 0) throw ValidationError("embedding set has zero dimension (D = 0)");
  if (set.labels.size() != n)
    throw ValidationError("label count " + std::to_string(set.labels.size()) +
                          " does not match row count " + std::to_string(n));
  const std::size_t c = set.num_classes();
  for (std::size_t i = 0; i < n; ++i)
    if (set.labels[i] >= c)
      throw ValidationError("label " + std::to_string(set.labels[i]) + " at row " +
                            std::to_string(i) + " is not < C = " + std::to_string(c));
  const auto& data = set.features.data();
  for (std::size_t i = 0; i < data.size(); ++i)
    if (!std::isfinite(data[i]))
      throw ValidationError("non-finite feature at row " + std::to_string(i / set.dim()) +
                            " column " + std::to_string(i % set.dim()));
}

void validate(const SemanticHierarchy& hierarchy, std::size_t num_classes) {
  if (hierarchy.superclass_names.empty())
    throw ValidationError("hierarchy has no superclasses");
  if (hierarchy.superclass_of.size() != num_classes)
    throw ValidationError("hierarchy maps " + std::to_string(hierarchy.superclass_of.size()) +
                          " classes, expected " + std::to_string(num_classes));
  for (std::size_t c = 0; c < num_classes; ++c)
    if (hierarchy.superclass_of[c] >= hierarchy.num_superclasses())
      throw ValidationError("class " + std::to_string(c) + " maps to unknown superclass " +
                            std::to_string(hierarchy.superclass_of[c]));
}

std::vector<std::uint8_t> encode_embeddings(const EmbeddingSet& set) {
  validate(set);
  const std::size_t n = set.size(), d = set.dim(), c = set.num_classes();
  constexpr auto kMax = std::numeric_limits<std::uint32_t>::max();
  if (n > kMax || d > kMax || c > kMax || n * d > kMax)
    throw ValidationError("embedding set too large for OODEMB1");
  for (const auto& name : set.class_names)
    if (name.size() > std::numeric_limits<std::uint16_t>::max())
      throw ValidationError("class name longer than 65535 bytes: " + name.substr(0, 32) + "...");

  std::vector<std::uint8_t> out;
  out.reserve(20 + 4 * n + 4 * n * d);
  for (char ch : kMagic) out.push_back(static_cast<std::uint8_t>(ch));
  put_u32(out, static_cast<std::uint32_t>(n));
  put_u32(out, static_cast<std::uint32_t>(d));
  put_u32(out, static_cast<std::uint32_t>(c));
  for (auto label : set.labels) put_u32(out, label);
  for (double v : set.features.data())
    put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  for (const auto& name : set.class_names) {
    put_u16(out, static_cast<std::uint16_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
  }
  return out;
}

EmbeddingSet decode_embeddings(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
    throw FormatError("not an OODEMB1 file");
  Reader in(bytes);
  in.str(sizeof(kMagic));
  const std::uint32_t n = in.u32();
  const std::uint32_t d = in.u32();
  const std::uint32_t c = in.u32();
  // Payload size check before allocating anything proportional to N*D.
  const std::uint64_t payload = 4ull * n + 4ull * n * d;
  if (in.remaining() < payload)
    throw FormatError("unexpected end of file at byte offset " + std::to_string(bytes.size()));

  EmbeddingSet set;
  set.labels.resize(n);
  for (auto& label : set.labels) label = in.u32();
  set.features = Matrix(n, d);
  for (double& v : set.features.data()) v = static_cast<double>(std::bit_cast<float>(in.u32()));
  set.class_names.reserve(c);
  for (std::uint32_t i = 0; i < c; ++i) set.class_names.push_back(in.str(in.u16()));
  if (in.remaining() != 0)
    throw FormatError("trailing bytes after class names at byte offset " +
                      std::to_string(in.pos()));
  validate(set);
  return set;
}

void save_embeddings(const EmbeddingSet& set, const std::filesystem::path& path) {
  const auto bytes = encode_embeddings(set);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

EmbeddingSet load_embeddings(const std::filesystem::path& path) {
  EmbeddingSet set = decode_embeddings(read_file(path));
  set.id_tag = path.stem().string();
  return set;
}

EmbeddingSet parse_csv(const std::string& text, bool has_header) {
  std::vector<double> values;
  std::vector<std::uint32_t> labels;
  std::size_t columns = 0;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  bool header_pending = has_header;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    if (header_pending) {
      header_pending = false;
      continue;
    }
    std::vector<std::string> cells;
    std::size_t start = 0;
    for (;;) {
      const std::size_t comma = line.find(',', start);
      cells.push_back(trim(std::string_view(line).substr(start, comma - start)));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (cells.size() < 2)
      throw FormatError(csv_error(line_no, 1, "need at least one feature and a label"));
    if (columns == 0) columns = cells.size();
    if (cells.size() != columns)
      throw FormatError("parse error at line " + std::to_string(line_no) + ": expected " +
                            std::to_string(columns) + " columns, found " +
                            std::to_string(cells.size()));
    for (std::size_t j = 0; j + 1 < cells.size(); ++j) {
      const std::string& cell = cells[j];
      char* end = nullptr;
      errno = 0;
      const double v = cell.empty() ? 0.0 : std::strtod(cell.c_str(), &end);
      if (cell.empty() || end != cell.c_str() + cell.size() || !std::isfinite(v))
        throw FormatError(csv_error(line_no, j + 1, "not a finite number: '" + cell + "'"));
      values.push_back(static_cast<double>(static_cast<float>(v)));
    }
    const std::string& cell = cells.back();
    char* end = nullptr;
    errno = 0;
    const long long label = cell.empty() ? -1 : std::strtoll(cell.c_str(), &end, 10);
    if (cell.empty() || end != cell.c_str() + cell.size() || errno == ERANGE || label < 0 ||
        label > std::numeric_limits<std::int32_t>::max())
      throw FormatError(csv_error(line_no, cells.size(), "not a label: '" + cell + "'"));
    labels.push_back(static_cast<std::uint32_t>(label));
  }
  if (labels.empty()) throw FormatError("CSV contains no data rows");

  EmbeddingSet set;
  set.features = Matrix(labels.size(), columns - 1);
  set.features.data() = std::move(values);
  const std::uint32_t c = *std::max_element(labels.begin(), labels.end()) + 1;
  set.labels = std::move(labels);
  for (std::uint32_t k = 0; k < c; ++k) set.class_names.push_back("class_" + std::to_string(k));
  validate(set);
  return set;
}

EmbeddingSet ingest_csv(const std::filesystem::path& path, bool has_header) {
  const auto bytes = read_file(path);
  EmbeddingSet set = parse_csv(std::string(bytes.begin(), bytes.end()), has_header);
  set.id_tag = path.stem().string();
  return set;
}

EmbeddingSet select_rows(const EmbeddingSet& set, const std::vector<std::size_t>& rows) {
  EmbeddingSet out;
  out.features = Matrix(rows.size(), set.dim());
  out.labels.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto src = set.features.row(rows[i]);
    std::copy(src.begin(), src.end(), out.features.row(i).begin());
    out.labels.push_back(set.labels[rows[i]]);
  }
  out.class_names = set.class_names;
  out.id_tag = set.id_tag;
  return out;
}

std::pair<EmbeddingSet, EmbeddingSet> split(const EmbeddingSet& set, double val_fraction,
                                            std::uint64_t seed) {
  if (!(val_fraction > 0.0 && val_fraction < 1.0))
    throw ValidationError("val_fraction must lie in (0, 1), got " + std::to_string(val_fraction));
  validate(set);
  std::vector<std::vector<std::size_t>> by_class(set.num_classes());
  for (std::size_t i = 0; i < set.size(); ++i) by_class[set.labels[i]].push_back(i);

  Rng rng(seed);
  std::vector<std::size_t> train_rows, val_rows;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& rows = by_class[c];
    if (rows.empty()) continue;
    if (rows.size() < 2)
      throw ValidationError("class " + std::to_string(c) + " ('" + set.class_names[c] +
                            "') has only 1 sample; split needs at least 2");
    for (std::size_t i = rows.size() - 1; i > 0; --i)
      std::swap(rows[i], rows[rng.below(i + 1)]);
    // The epsilon absorbs representation error such as 0.1 * 30 = 3.0000000000000004.
    const auto n_val = static_cast<std::size_t>(
        std::ceil(val_fraction * static_cast<double>(rows.size()) - 1e-9));
    val_rows.insert(val_rows.end(), rows.begin(), rows.begin() + n_val);
    train_rows.insert(train_rows.end(), rows.begin() + n_val, rows.end());
  }
  std::sort(train_rows.begin(), train_rows.end());
  std::sort(val_rows.begin(), val_rows.end());
  auto train = select_rows(set, train_rows);
  auto val = select_rows(set, val_rows);
  train.id_tag = set.id_tag + "/train";
  val.id_tag = set.id_tag + "/val";
  return {std::move(train), std::move(val)};
}

EmbeddingSet l2_normalize(const EmbeddingSet& set) {
  EmbeddingSet out = set;
  for (std::size_t i = 0; i < out.size(); ++i) {
    auto row = out.features.row(i);
    double sq = 0.0;
    for (double v : row) sq += v * v;
    if (sq == 0.0) throw ValidationError("cannot normalize all-zero row " + std::to_string(i));
    const double norm = std::sqrt(sq);
    for (double& v : row) v /= norm;
  }
  return out;
}

std::string hierarchy_to_json(const SemanticHierarchy& hierarchy) {
  nlohmann::ordered_json j;
  j["superclass_names"] = hierarchy.superclass_names;
  j["superclass_of"] = hierarchy.superclass_of;
  return j.dump(2) + "\n";
}

SemanticHierarchy hierarchy_from_json(const std::string& text) {
  SemanticHierarchy h;
  try {
    const auto j = nlohmann::json::parse(text);
    h.superclass_names = j.at("superclass_names").get<std::vector<std::string>>();
    h.superclass_of = j.at("superclass_of").get<std::vector<std::uint32_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("invalid hierarchy JSON: ") + e.what());
  }
  validate(h, h.superclass_of.size());
  return h;
}

SemanticHierarchy load_hierarchy(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  try {
    return hierarchy_from_json(std::string(bytes.begin(), bytes.end()));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void save_hierarchy(const SemanticHierarchy& hierarchy, const std::filesystem::path& path) {
  validate(hierarchy, hierarchy.superclass_of.size());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << hierarchy_to_json(hierarchy);
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace oodkit
