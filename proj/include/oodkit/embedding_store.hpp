// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The oodkit Authors

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "oodkit/matrix.hpp"

namespace oodkit {

/// Labeled feature vectors, the common currency of every module.
///
/// Features are held as doubles. Anything read from an OODEMB1 file, a CSV or
/// the synthetic generator is exactly representable as f32, which is what
/// makes save/load bit-exact. Derived sets (e.g. after l2_normalize) are not
/// rounded and will lose precision if written back to disk.
struct EmbeddingSet {
  Matrix features;                       // N x D
  std::vector<std::uint32_t> labels;     // N entries in [0, C)
  std::vector<std::string> class_names;  // C entries
  std::string id_tag;                    // provenance, not persisted

  std::size_t size() const noexcept { return features.rows(); }
  std::size_t dim() const noexcept { return features.cols(); }
  std::size_t num_classes() const noexcept { return class_names.size(); }

  /// Field-for-field equality of the persisted content (id_tag excluded).
  bool same_content(const EmbeddingSet& other) const;
};

/// Class -> superclass mapping used to seed the feature-space partition.
struct SemanticHierarchy {
  std::vector<std::uint32_t> superclass_of;
  std::vector<std::string> superclass_names;

  std::size_t num_superclasses() const noexcept { return superclass_names.size(); }
};

/// Throws ValidationError naming the first broken invariant.
void validate(const EmbeddingSet& set);
void validate(const SemanticHierarchy& hierarchy, std::size_t num_classes);

/// Serialized OODEMB1 bytes; validates first.
std::vector<std::uint8_t> encode_embeddings(const EmbeddingSet& set);
EmbeddingSet decode_embeddings(const std::vector<std::uint8_t>& bytes);

void save_embeddings(const EmbeddingSet& set, const std::filesystem::path& path);
/// The returned id_tag is the file stem.
EmbeddingSet load_embeddings(const std::filesystem::path& path);

EmbeddingSet ingest_csv(const std::filesystem::path& path, bool has_header);
EmbeddingSet parse_csv(const std::string& text, bool has_header);

/// Stratified split: ceil(val_fraction * n_c) samples of each class go to val.
std::pair<EmbeddingSet, EmbeddingSet> split(const EmbeddingSet& set, double val_fraction,
                                            std::uint64_t seed);

EmbeddingSet l2_normalize(const EmbeddingSet& set);

/// Subset of rows, in the given order.
EmbeddingSet select_rows(const EmbeddingSet& set, const std::vector<std::size_t>& rows);

SemanticHierarchy load_hierarchy(const std::filesystem::path& path);
void save_hierarchy(const SemanticHierarchy& hierarchy, const std::filesystem::path& path);
std::string hierarchy_to_json(const SemanticHierarchy& hierarchy);
SemanticHierarchy hierarchy_from_json(const std::string& text);

}  // namespace oodkit
