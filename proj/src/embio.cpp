#include "diratlas/embio.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>
#include <unordered_set>

#include "diratlas/error.hpp"

namespace diratlas {
namespace {

std::uint32_t to_little(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    v = ((v & 0xFF000000u) >> 24) | ((v & 0x00FF0000u) >> 8) | ((v & 0x0000FF00u) << 8) |
        ((v & 0x000000FFu) << 24);
  }
  return v;
}

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  v = to_little(v);
  unsigned char b[4];
  std::memcpy(b, &v, 4);
  out.insert(out.end(), b, b + 4);
}

std::uint32_t get_u32(const unsigned char* p) {
  std::uint32_t v;
  std::memcpy(&v, p, 4);
  return to_little(v);
}

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoFailure, "cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (in.bad()) fail(ErrorCode::IoFailure, "read error on " + path.string());
  return bytes;
}

void write_file(const std::filesystem::path& path, const char* data, std::size_t size) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::IoFailure, "cannot open " + path.string() + " for writing");
  out.write(data, static_cast<std::streamsize>(size));
  out.flush();
  if (!out) fail(ErrorCode::IoFailure, "write error on " + path.string());
}

void require_finite(const RowMatrix& m, const std::string& origin) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (!std::isfinite(m(i, j))) {
        fail(ErrorCode::NonFinite, origin + ": entry (" + std::to_string(i) + ", " +
                                       std::to_string(j) + ") is not finite");
      }
    }
  }
}

std::string strip_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

RowMatrix parse_text_matrix(const std::vector<unsigned char>& bytes, const std::string& origin) {
  std::vector<double> values;
  Eigen::Index cols = -1;
  Eigen::Index rows = 0;
  std::size_t pos = 0;
  const char* base = reinterpret_cast<const char*>(bytes.data());
  while (pos < bytes.size()) {
    std::size_t end = pos;
    while (end < bytes.size() && bytes[end] != '\n') ++end;
    std::size_t line_end = end;
    if (line_end > pos && bytes[line_end - 1] == '\r') --line_end;
    if (line_end > pos) {
      Eigen::Index count = 0;
      std::size_t field = pos;
      while (true) {
        std::size_t stop = field;
        while (stop < line_end && bytes[stop] != ',') ++stop;
        double v = 0.0;
        const auto [ptr, ec] = std::from_chars(base + field, base + stop, v);
        if (ec != std::errc() || ptr != base + stop) {
          throw Error(ErrorCode::BadFormat, origin + ": unparseable value on row " +
                                                std::to_string(rows), field);
        }
        if (!std::isfinite(v)) {
          throw Error(ErrorCode::NonFinite, origin + ": non-finite value on row " +
                                                std::to_string(rows), field);
        }
        values.push_back(v);
        ++count;
        if (stop == line_end) break;
        field = stop + 1;
      }
      if (cols < 0) cols = count;
      if (count != cols) {
        throw Error(ErrorCode::SizeMismatch, origin + ": row " + std::to_string(rows) + " has " +
                                                 std::to_string(count) + " values, expected " +
                                                 std::to_string(cols), pos);
      }
      ++rows;
    }
    pos = end + 1;
  }
  if (rows == 0) fail(ErrorCode::InvalidArgument, origin + ": matrix has no rows");
  RowMatrix m(rows, cols);
  std::copy(values.begin(), values.end(), m.data());
  return m;
}

std::string text_matrix(const RowMatrix& m) {
  std::string out;
  char buf[64];
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) out += ',';
      const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, m(i, j));
      out.append(buf, ptr);
    }
    out += '\n';
  }
  return out;
}

}  // namespace

std::vector<unsigned char> encode_matrix(const RowMatrix& m) {
  if (m.rows() < 1 || m.cols() < 1) {
    fail(ErrorCode::InvalidArgument, "cannot encode an empty matrix");
  }
  if (m.rows() > std::numeric_limits<std::uint32_t>::max() ||
      m.cols() > std::numeric_limits<std::uint32_t>::max()) {
    fail(ErrorCode::InvalidArgument, "matrix dimensions exceed uint32");
  }
  require_finite(m, "matrix");
  std::vector<unsigned char> out;
  out.reserve(binary_matrix_bytes(m.rows(), m.cols()));
  out.insert(out.end(), kMatrixMagic, kMatrixMagic + 6);
  put_u32(out, static_cast<std::uint32_t>(m.rows()));
  put_u32(out, static_cast<std::uint32_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    const float f = static_cast<float>(m.data()[i]);
    if (!std::isfinite(f)) {
      fail(ErrorCode::NonFinite, "entry " + std::to_string(i) + " overflows binary32");
    }
    put_u32(out, std::bit_cast<std::uint32_t>(f));
  }
  return out;
}

RowMatrix decode_matrix(const std::vector<unsigned char>& bytes, const std::string& origin) {
  if (bytes.size() < 6 || std::memcmp(bytes.data(), kMatrixMagic, 6) != 0) {
    throw Error(ErrorCode::BadMagic, origin + ": missing EMBV1 magic", 0);
  }
  if (bytes.size() < kMatrixHeaderBytes) {
    throw Error(ErrorCode::SizeMismatch, origin + ": truncated header", bytes.size());
  }
  const std::uint64_t n = get_u32(bytes.data() + 6);
  const std::uint64_t d = get_u32(bytes.data() + 10);
  if (n == 0 || d == 0) {
    throw Error(ErrorCode::InvalidArgument, origin + ": header declares an empty matrix", 6);
  }
  const std::uint64_t expected = binary_matrix_bytes(n, d);
  if (bytes.size() != expected) {
    throw Error(ErrorCode::SizeMismatch,
                origin + ": header n=" + std::to_string(n) + " d=" + std::to_string(d) +
                    " needs " + std::to_string(expected - kMatrixHeaderBytes) +
                    " payload bytes, found " + std::to_string(bytes.size() - kMatrixHeaderBytes),
                std::min<std::uint64_t>(bytes.size(), expected));
  }
  RowMatrix m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  const unsigned char* p = bytes.data() + kMatrixHeaderBytes;
  for (std::uint64_t i = 0; i < n * d; ++i) {
    const float f = std::bit_cast<float>(get_u32(p + 4 * i));
    if (!std::isfinite(f)) {
      throw Error(ErrorCode::NonFinite, origin + ": non-finite entry (row " +
                                            std::to_string(i / d) + ", col " +
                                            std::to_string(i % d) + ")",
                  kMatrixHeaderBytes + 4 * i);
    }
    m.data()[i] = f;
  }
  return m;
}

RowMatrix load_matrix(const std::filesystem::path& path, MatrixFormat format) {
  const auto bytes = read_file(path);
  if (format == MatrixFormat::Text) return parse_text_matrix(bytes, path.string());
  return decode_matrix(bytes, path.string());
}

void save_matrix(const RowMatrix& m, const std::filesystem::path& path, MatrixFormat format) {
  if (format == MatrixFormat::Text) {
    if (m.rows() < 1 || m.cols() < 1) {
      fail(ErrorCode::InvalidArgument, "cannot save an empty matrix");
    }
    require_finite(m, path.string());
    const std::string text = text_matrix(m);
    write_file(path, text.data(), text.size());
    return;
  }
  const auto bytes = encode_matrix(m);
  write_file(path, reinterpret_cast<const char*>(bytes.data()), bytes.size());
}

EmbeddingSet make_embedding_set(RowMatrix data, std::vector<std::string> labels) {
  if (data.rows() < 1 || data.cols() < 1) {
    fail(ErrorCode::InvalidArgument, "embedding set needs n >= 1 and d >= 1");
  }
  require_finite(data, "embedding set");
  if (!labels.empty() && static_cast<Eigen::Index>(labels.size()) != data.rows()) {
    fail(ErrorCode::CountMismatch, std::to_string(labels.size()) + " labels for " +
                                       std::to_string(data.rows()) + " rows");
  }
  return EmbeddingSet{std::move(data), std::move(labels)};
}

EmbeddingSet load_embedding_set(const std::filesystem::path& path, MatrixFormat format) {
  return make_embedding_set(load_matrix(path, format));
}

void save_embedding_set(const EmbeddingSet& set, const std::filesystem::path& path,
                        MatrixFormat format) {
  save_matrix(set.data, path, format);
}

std::vector<std::string> load_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoFailure, "cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(strip_cr(line));
  return lines;
}

void save_lines(const std::vector<std::string>& lines, const std::filesystem::path& path) {
  std::string text;
  for (const auto& l : lines) {
    text += l;
    text += '\n';
  }
  write_file(path, text.data(), text.size());
}

std::optional<std::size_t> Lexicon::find(const std::string& token) const {
  const auto it = index.find(token);
  if (it == index.end()) return std::nullopt;
  return it->second;
}

Lexicon make_lexicon(std::vector<std::string> tokens, RowMatrix embeddings,
                     const std::vector<std::string>& blocklist) {
  if (static_cast<Eigen::Index>(tokens.size()) != embeddings.rows()) {
    fail(ErrorCode::CountMismatch, std::to_string(tokens.size()) + " tokens for " +
                                       std::to_string(embeddings.rows()) + " embedding rows");
  }
  if (tokens.size() < 2) fail(ErrorCode::InvalidArgument, "lexicon needs at least 2 tokens");
  require_finite(embeddings, "lexicon embeddings");
  Lexicon lex;
  lex.embeddings = std::move(embeddings);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i].empty()) {
      fail(ErrorCode::InvalidArgument, "empty token on line " + std::to_string(i + 1));
    }
    if (!lex.index.emplace(tokens[i], i).second) {
      fail(ErrorCode::DuplicateToken, "token '" + tokens[i] + "' appears twice");
    }
  }
  lex.tokens = std::move(tokens);
  lex.blocked.assign(lex.tokens.size(), false);
  for (const auto& b : blocklist) {
    if (const auto i = lex.find(b)) lex.blocked[*i] = true;
  }
  return lex;
}

Lexicon load_lexicon(const std::filesystem::path& embedding_path,
                     const std::filesystem::path& tokens_path,
                     const std::optional<std::filesystem::path>& blocklist_path) {
  auto tokens = load_lines(tokens_path);
  auto embeddings = load_matrix(embedding_path);
  std::vector<std::string> blocklist;
  if (blocklist_path) {
    for (auto& l : load_lines(*blocklist_path)) {
      if (!l.empty()) blocklist.push_back(std::move(l));
    }
  }
  return make_lexicon(std::move(tokens), std::move(embeddings), blocklist);
}

std::string surface_token(const std::string& node_name) {
  return node_name.substr(0, node_name.find('#'));
}

const std::vector<std::size_t>& Taxonomy::senses_of(const std::string& token) const {
  static const std::vector<std::size_t> kNone;
  const auto it = senses.find(token);
  return it == senses.end() ? kNone : it->second;
}

std::size_t Taxonomy::lowest_common_ancestor(std::size_t a, std::size_t b) const {
  while (depth[a] > depth[b]) a = parent[a];
  while (depth[b] > depth[a]) b = parent[b];
  while (a != b) {
    a = parent[a];
    b = parent[b];
  }
  return a;
}

Taxonomy make_taxonomy(const std::vector<std::pair<std::string, std::string>>& edges,
                       const std::vector<std::string>& standalone) {
  Taxonomy t;
  auto intern = [&t](const std::string& name) {
    if (name.empty()) fail(ErrorCode::BadFormat, "empty taxonomy node name");
    const auto [it, inserted] = t.by_name.emplace(name, t.names.size());
    if (inserted) {
      t.names.push_back(name);
      t.parent.push_back(Taxonomy::kNoParent);
    }
    return it->second;
  };
  std::vector<bool> has_child;
  for (const auto& [child, parent] : edges) {
    const auto c = intern(child);
    const auto p = intern(parent);
    has_child.resize(t.names.size(), false);
    if (t.parent[c] != Taxonomy::kNoParent && t.parent[c] != p) {
      fail(ErrorCode::BadFormat, "node '" + child + "' has two parents");
    }
    if (c == p) fail(ErrorCode::CycleDetected, "node '" + child + "' is its own parent");
    t.parent[c] = p;
    has_child[p] = true;
  }
  for (const auto& name : standalone) intern(name);
  has_child.resize(t.names.size(), false);
  if (t.names.empty()) fail(ErrorCode::BadFormat, "taxonomy has no nodes");

  std::vector<std::size_t> roots;
  std::vector<std::size_t> isolated;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t.parent[i] != Taxonomy::kNoParent) continue;
    (has_child[i] ? roots : isolated).push_back(i);
  }
  if (roots.size() > 1) {
    fail(ErrorCode::MultipleRoots,
         "parentless nodes '" + t.names[roots[0]] + "' and '" + t.names[roots[1]] + "'");
  }
  if (roots.empty()) {
    if (isolated.size() == 1 && t.size() == 1) {
      roots.push_back(isolated.front());
      isolated.clear();
    } else if (isolated.size() > 1 && edges.empty()) {
      fail(ErrorCode::MultipleRoots, "several standalone nodes and no edges");
    } else {
      fail(ErrorCode::CycleDetected, "no parentless node; every chain loops");
    }
  }
  if (!isolated.empty()) {
    fail(ErrorCode::OrphanNode, "node '" + t.names[isolated.front()] + "' is not connected");
  }
  t.root = roots.front();

  // Depth by walking up with memoisation; a walk longer than the node count
  // can only be a cycle.
  t.depth.assign(t.size(), 0);
  t.depth[t.root] = 1;
  std::vector<std::size_t> chain;
  for (std::size_t i = 0; i < t.size(); ++i) {
    chain.clear();
    std::size_t cur = i;
    while (t.depth[cur] == 0) {
      chain.push_back(cur);
      if (chain.size() > t.size()) {
        fail(ErrorCode::CycleDetected, "cycle through node '" + t.names[i] + "'");
      }
      cur = t.parent[cur];
    }
    for (auto it = chain.rbegin(); it != chain.rend(); ++it) {
      t.depth[*it] = t.depth[t.parent[*it]] + 1;
    }
  }
  for (std::size_t i = 0; i < t.size(); ++i) t.senses[surface_token(t.names[i])].push_back(i);
  return t;
}

Taxonomy load_taxonomy(const std::filesystem::path& path) {
  std::vector<std::pair<std::string, std::string>> edges;
  std::vector<std::string> standalone;
  const auto lines = load_lines(path);
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    const auto& line = lines[ln];
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      standalone.push_back(line);
      continue;
    }
    if (line.find('\t', tab + 1) != std::string::npos) {
      fail(ErrorCode::BadFormat, path.string() + ": line " + std::to_string(ln + 1) +
                                     " has more than two fields");
    }
    edges.emplace_back(line.substr(0, tab), line.substr(tab + 1));
  }
  return make_taxonomy(edges, standalone);
}

void save_taxonomy(const Taxonomy& taxonomy, const std::filesystem::path& path) {
  std::vector<std::string> lines;
  if (taxonomy.size() == 1) lines.push_back(taxonomy.names.front());
  for (std::size_t i = 0; i < taxonomy.size(); ++i) {
    if (taxonomy.parent[i] == Taxonomy::kNoParent) continue;
    lines.push_back(taxonomy.names[i] + '\t' + taxonomy.names[taxonomy.parent[i]]);
  }
  save_lines(lines, path);
}

}  // namespace diratlas
