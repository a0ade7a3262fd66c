#pragma once
// Reader and writer for legacy-ASCII polygonal mesh files (the classic
// "# vtk DataFile" dialect), restricted to triangle polygons, point scalars,
// and symmetric point tensors. Tensor fields are stored as full 3x3 blocks in
// the file and as 6-component rows [xx yy zz yz xz xy] in memory.
//
// Writers emit fields in name-sorted order and format numbers with %.17g, so
// identical meshes serialize byte-identically.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mstress/errors.hpp"
#include "mstress/mesh.hpp"

namespace mstress {

namespace detail {

struct Token {
  std::string text;
  int line = 0;
};

// Whitespace tokenizer that remembers source lines for error context.
struct TokenStream {
  std::vector<Token> tokens;
  size_t pos = 0;

  static TokenStream from_text(const std::string& text, int first_line) {
    TokenStream ts;
    int line = first_line;
    std::string cur;
    auto flush = [&] {
      if (!cur.empty()) {
        ts.tokens.push_back({cur, line});
        cur.clear();
      }
    };
    for (char c : text) {
      if (c == '\n') {
        flush();
        ++line;
      } else if (c == ' ' || c == '\t' || c == '\r') {
        flush();
      } else {
        cur.push_back(c);
      }
    }
    flush();
    return ts;
  }

  bool done() const { return pos >= tokens.size(); }
  const Token& peek() const {
    if (done()) throw IoError("unexpected end of mesh file");
    return tokens[pos];
  }
  Token next() {
    Token t = peek();
    ++pos;
    return t;
  }
  std::string expect_word(const std::string& what) {
    Token t = next();
    return t.text.empty()
               ? throw IoError("missing " + what)
               : t.text;
  }
  long expect_int(const std::string& what) {
    Token t = next();
    try {
      size_t used = 0;
      long v = std::stol(t.text, &used);
      if (used != t.text.size()) throw std::invalid_argument(t.text);
      return v;
    } catch (const std::exception&) {
      throw IoError("expected integer for " + what + " at line " +
                    std::to_string(t.line) + ", got '" + t.text + "'");
    }
  }
  double expect_double(const std::string& what) {
    Token t = next();
    try {
      size_t used = 0;
      double v = std::stod(t.text, &used);
      if (used != t.text.size()) throw std::invalid_argument(t.text);
      return v;
    } catch (const std::exception&) {
      throw IoError("expected number for " + what + " at line " +
                    std::to_string(t.line) + ", got '" + t.text + "'");
    }
  }
};

inline std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

inline SurfaceMesh load_mesh(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open mesh file: " + path);

  // Header: signature comment, free-form title, encoding, dataset kind.
  std::string sig, title, encoding, rest;
  if (!std::getline(in, sig) || sig.rfind("# vtk DataFile", 0) != 0)
    throw IoError(path + ":1: missing '# vtk DataFile' signature");
  if (!std::getline(in, title))
    throw IoError(path + ":2: missing title line");
  if (!std::getline(in, encoding) ||
      encoding.find("ASCII") == std::string::npos)
    throw IoError(path + ":3: only ASCII encoding is supported");
  std::string dataset_line;
  if (!std::getline(in, dataset_line) ||
      dataset_line.find("DATASET") == std::string::npos ||
      dataset_line.find("POLYDATA") == std::string::npos)
    throw IoError(path + ":4: expected DATASET POLYDATA");

  std::stringstream body;
  body << in.rdbuf();
  auto ts = detail::TokenStream::from_text(body.str(), 5);

  SurfaceMesh mesh;
  bool saw_point_data = false;
  long point_data_n = 0;
  while (!ts.done()) {
    auto kw = ts.next();
    if (kw.text == "POINTS") {
      long n = ts.expect_int("POINTS count");
      ts.expect_word("POINTS dtype");
      mesh.vertices.resize(size_t(n));
      for (long i = 0; i < n; ++i) {
        mesh.vertices[size_t(i)].x = ts.expect_double("point x");
        mesh.vertices[size_t(i)].y = ts.expect_double("point y");
        mesh.vertices[size_t(i)].z = ts.expect_double("point z");
      }
    } else if (kw.text == "POLYGONS") {
      long m = ts.expect_int("POLYGONS count");
      ts.expect_int("POLYGONS size");
      mesh.triangles.reserve(size_t(m));
      for (long i = 0; i < m; ++i) {
        auto head = ts.peek();
        long nv = ts.expect_int("polygon vertex count");
        if (nv != 3)
          throw IoError(path + ":" + std::to_string(head.line) +
                        ": non-triangle cell with " + std::to_string(nv) +
                        " vertices (cell " + std::to_string(i) + ")");
        std::array<int32_t, 3> t{};
        for (int c = 0; c < 3; ++c)
          t[size_t(c)] = int32_t(ts.expect_int("polygon index"));
        mesh.triangles.push_back(t);
      }
    } else if (kw.text == "POINT_DATA") {
      point_data_n = ts.expect_int("POINT_DATA count");
      if (point_data_n != long(mesh.vertices.size()))
        throw IoError(path + ":" + std::to_string(kw.line) +
                      ": POINT_DATA count " + std::to_string(point_data_n) +
                      " != vertex count " +
                      std::to_string(mesh.vertices.size()));
      saw_point_data = true;
    } else if (kw.text == "SCALARS") {
      if (!saw_point_data)
        throw IoError(path + ":" + std::to_string(kw.line) +
                      ": SCALARS before POINT_DATA");
      std::string name = ts.expect_word("scalar field name");
      ts.expect_word("scalar dtype");
      if (!ts.done() && ts.peek().text != "LOOKUP_TABLE") {
        long comps = ts.expect_int("scalar component count");
        if (comps != 1)
          throw IoError(path + ": scalar field '" + name +
                        "' must have 1 component");
      }
      if (ts.expect_word("LOOKUP_TABLE keyword") != "LOOKUP_TABLE")
        throw IoError(path + ": scalar field '" + name +
                      "' missing LOOKUP_TABLE line");
      ts.expect_word("lookup table name");
      auto& f = mesh.scalar_fields[name];
      f.resize(size_t(point_data_n));
      for (long i = 0; i < point_data_n; ++i)
        f[size_t(i)] = ts.expect_double("scalar value");
    } else if (kw.text == "TENSORS") {
      if (!saw_point_data)
        throw IoError(path + ":" + std::to_string(kw.line) +
                      ": TENSORS before POINT_DATA");
      std::string name = ts.expect_word("tensor field name");
      ts.expect_word("tensor dtype");
      auto& f = mesh.tensor_fields[name];
      f.resize(size_t(point_data_n));
      for (long i = 0; i < point_data_n; ++i) {
        double a[3][3];
        for (auto& row : a)
          for (double& x : row) x = ts.expect_double("tensor entry");
        double scale = 0.0;
        for (auto& row : a)
          for (double x : row) scale = std::max(scale, std::abs(x));
        auto sym = [&](double p, double q) {
          if (std::abs(p - q) > 1e-9 * std::max(scale, 1e-300))
            throw IoError(path + ": tensor field '" + name +
                          "' not symmetric at point " + std::to_string(i));
          return 0.5 * (p + q);
        };
        Stress6& s = f[size_t(i)];
        s[SXX] = a[0][0];
        s[SYY] = a[1][1];
        s[SZZ] = a[2][2];
        s[SYZ] = sym(a[1][2], a[2][1]);
        s[SXZ] = sym(a[0][2], a[2][0]);
        s[SXY] = sym(a[0][1], a[1][0]);
      }
    } else {
      throw IoError(path + ":" + std::to_string(kw.line) +
                    ": unsupported section '" + kw.text + "'");
    }
  }

  validate_mesh(mesh);
  mesh.component_id = label_components(mesh);
  return mesh;
}

// Writes atomically: the file appears at `path` only after a complete write.
inline void save_mesh(const SurfaceMesh& mesh, const std::string& path,
                      const std::string& title = "surface mesh") {
  validate_mesh(mesh);
  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw IoError("cannot write mesh file: " + tmp);
    out << "# vtk DataFile Version 3.0\n" << title << "\nASCII\n";
    out << "DATASET POLYDATA\n";
    out << "POINTS " << mesh.vertices.size() << " double\n";
    for (const auto& p : mesh.vertices)
      out << detail::fmt_double(p.x) << ' ' << detail::fmt_double(p.y) << ' '
          << detail::fmt_double(p.z) << '\n';
    out << "POLYGONS " << mesh.triangles.size() << ' '
        << 4 * mesh.triangles.size() << '\n';
    for (const auto& t : mesh.triangles)
      out << "3 " << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
    if (!mesh.scalar_fields.empty() || !mesh.tensor_fields.empty()) {
      out << "POINT_DATA " << mesh.vertices.size() << '\n';
      for (const auto& [name, f] : mesh.tensor_fields) {
        out << "TENSORS " << name << " double\n";
        for (const auto& s : f) {
          out << detail::fmt_double(s[SXX]) << ' '
              << detail::fmt_double(s[SXY]) << ' '
              << detail::fmt_double(s[SXZ]) << '\n';
          out << detail::fmt_double(s[SXY]) << ' '
              << detail::fmt_double(s[SYY]) << ' '
              << detail::fmt_double(s[SYZ]) << '\n';
          out << detail::fmt_double(s[SXZ]) << ' '
              << detail::fmt_double(s[SYZ]) << ' '
              << detail::fmt_double(s[SZZ]) << '\n';
        }
      }
      for (const auto& [name, f] : mesh.scalar_fields) {
        out << "SCALARS " << name << " double 1\nLOOKUP_TABLE default\n";
        for (double v : f) out << detail::fmt_double(v) << '\n';
      }
    }
    if (!out) throw IoError("write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace mstress
