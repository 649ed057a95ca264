#pragma once

// Embedding sets, lexicons and word taxonomies, plus their on-disk formats.
//
// Binary matrix format (used for every matrix the project persists):
//   bytes 0..5   magic "EMBV1\0"
//   bytes 6..9   rows n, uint32 little-endian
//   bytes 10..13 cols d, uint32 little-endian
//   then n*d IEEE-754 binary32 values, little-endian, row-major.
// In-memory matrices are double; saving narrows to binary32 and loading
// widens exactly, so load(save(load(f))) reproduces f byte for byte.
//
// Text matrix format: one row per line, values separated by single commas.
// Token files: one UTF-8 token per line. Taxonomy files: "child<TAB>parent"
// per line, or a bare node name to declare a node without edges.

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "diratlas/types.hpp"

namespace diratlas {

inline constexpr char kMatrixMagic[6] = {'E', 'M', 'B', 'V', '1', '\0'};
inline constexpr std::size_t kMatrixHeaderBytes = 14;

enum class MatrixFormat { Binary, Text };

/// Binary file size of an n x d matrix.
constexpr std::uint64_t binary_matrix_bytes(std::uint64_t n, std::uint64_t d) {
  return kMatrixHeaderBytes + n * d * 4;
}

/// Reads a matrix; rejects empty, truncated, oversized and non-finite input.
RowMatrix load_matrix(const std::filesystem::path& path, MatrixFormat format = MatrixFormat::Binary);
void save_matrix(const RowMatrix& m, const std::filesystem::path& path,
                 MatrixFormat format = MatrixFormat::Binary);

/// Parses an in-memory binary matrix image; `origin` names it in errors.
RowMatrix decode_matrix(const std::vector<unsigned char>& bytes, const std::string& origin);
std::vector<unsigned char> encode_matrix(const RowMatrix& m);

struct EmbeddingSet {
  RowMatrix data;                   // n x d
  std::vector<std::string> labels;  // empty, or one per row

  Eigen::Index size() const { return data.rows(); }
  Eigen::Index dim() const { return data.cols(); }
};

/// Checks n >= 1, d >= 1, finite entries and label count.
EmbeddingSet make_embedding_set(RowMatrix data, std::vector<std::string> labels = {});

EmbeddingSet load_embedding_set(const std::filesystem::path& path,
                                MatrixFormat format = MatrixFormat::Binary);
void save_embedding_set(const EmbeddingSet& set, const std::filesystem::path& path,
                        MatrixFormat format = MatrixFormat::Binary);

std::vector<std::string> load_lines(const std::filesystem::path& path);
void save_lines(const std::vector<std::string>& lines, const std::filesystem::path& path);

struct Lexicon {
  std::vector<std::string> tokens;
  RowMatrix embeddings;  // m x d, row i embeds tokens[i]
  std::vector<bool> blocked;

  std::size_t size() const { return tokens.size(); }
  Eigen::Index dim() const { return embeddings.cols(); }
  std::optional<std::size_t> find(const std::string& token) const;
  bool is_blocked(std::size_t i) const { return blocked[i]; }

  std::unordered_map<std::string, std::size_t> index;
};

Lexicon make_lexicon(std::vector<std::string> tokens, RowMatrix embeddings,
                     const std::vector<std::string>& blocklist = {});
Lexicon load_lexicon(const std::filesystem::path& embedding_path,
                     const std::filesystem::path& tokens_path,
                     const std::optional<std::filesystem::path>& blocklist_path = std::nullopt);

/// Single-rooted tree over named nodes. A node's surface token is its name up
/// to the first '#', so "smile#1" and "smile#2" are two senses of "smile".
struct Taxonomy {
  static constexpr std::size_t kNoParent = static_cast<std::size_t>(-1);

  std::vector<std::string> names;
  std::vector<std::size_t> parent;  // kNoParent for the root
  std::vector<int> depth;           // root has depth 1
  std::size_t root = 0;
  std::unordered_map<std::string, std::size_t> by_name;
  std::unordered_map<std::string, std::vector<std::size_t>> senses;

  std::size_t size() const { return names.size(); }
  /// Nodes whose surface token is `token`; empty when absent.
  const std::vector<std::size_t>& senses_of(const std::string& token) const;
  /// Deepest common ancestor of two nodes.
  std::size_t lowest_common_ancestor(std::size_t a, std::size_t b) const;
};

std::string surface_token(const std::string& node_name);

/// Builds and validates a taxonomy from child->parent edges and optional
/// standalone nodes.
Taxonomy make_taxonomy(const std::vector<std::pair<std::string, std::string>>& edges,
                       const std::vector<std::string>& standalone = {});
Taxonomy load_taxonomy(const std::filesystem::path& path);
void save_taxonomy(const Taxonomy& taxonomy, const std::filesystem::path& path);

}  // namespace diratlas
