#include "ove6d/mesh_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "ove6d/error.hpp"

namespace ove6d {

namespace {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

std::string lower_ext(const std::filesystem::path& p) {
  std::string e = p.extension().string();
  for (auto& c : e) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return e;
}

int parse_obj_index(const std::string& token, int vertex_count, std::size_t line) {
  const std::string head = token.substr(0, token.find('/'));
  int idx = 0;
  try {
    std::size_t used = 0;
    idx = std::stoi(head, &used);
    if (used != head.size()) throw std::invalid_argument(head);
  } catch (const std::exception&) {
    throw ParseError("bad face index '" + token + "'", line);
  }
  if (idx < 0) idx = vertex_count + idx + 1;
  if (idx < 1 || idx > vertex_count) throw ParseError("face index out of range", line);
  return idx - 1;
}

TriangleMesh load_obj(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  TriangleMesh mesh;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ss(line);
    std::string tag;
    if (!(ss >> tag) || tag[0] == '#') continue;
    if (tag == "v") {
      double x, y, z;
      if (!(ss >> x >> y >> z)) throw ParseError("vertex needs three coordinates", line_no);
      mesh.vertices.emplace_back(x, y, z);
    } else if (tag == "f") {
      std::vector<int> idx;
      std::string tok;
      while (ss >> tok) idx.push_back(parse_obj_index(tok, static_cast<int>(mesh.vertices.size()), line_no));
      if (idx.size() < 3) throw ParseError("face needs at least three vertices", line_no);
      for (std::size_t k = 1; k + 1 < idx.size(); ++k) mesh.faces.push_back({idx[0], idx[k], idx[k + 1]});
    } else if (tag == "o" || tag == "g") {
      std::string name;
      if (ss >> name && mesh.object_id.empty()) mesh.object_id = name;
    }
  }
  return mesh;
}

class ByteReader {
 public:
  explicit ByteReader(std::vector<char> data, std::size_t pos) : data_(std::move(data)), pos_(pos) {}

  template <typename T>
  T read() {
    if (pos_ + sizeof(T) > data_.size()) throw ParseError("unexpected end of PLY body", pos_);
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  double read_as(const std::string& type) {
    if (type == "float" || type == "float32") return read<float>();
    if (type == "double" || type == "float64") return read<double>();
    if (type == "uchar" || type == "uint8") return read<std::uint8_t>();
    if (type == "char" || type == "int8") return read<std::int8_t>();
    if (type == "ushort" || type == "uint16") return read<std::uint16_t>();
    if (type == "short" || type == "int16") return read<std::int16_t>();
    if (type == "uint" || type == "uint32") return read<std::uint32_t>();
    if (type == "int" || type == "int32") return read<std::int32_t>();
    throw ParseError("unsupported PLY type '" + type + "'", pos_);
  }

  std::size_t pos() const { return pos_; }

 private:
  std::vector<char> data_;
  std::size_t pos_;
};

struct PlyProperty {
  std::string name, type, count_type;  // count_type non-empty for lists
};

struct PlyElement {
  std::string name;
  std::size_t count = 0;
  std::vector<PlyProperty> props;
};

TriangleMesh load_ply(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  std::size_t pos = 0;
  auto next_line = [&]() {
    const std::size_t start = pos;
    while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    if (pos >= bytes.size()) throw ParseError("unterminated PLY header", start);
    std::string l(bytes.data() + start, pos - start);
    ++pos;
    if (!l.empty() && l.back() == '\r') l.pop_back();
    return l;
  };

  if (next_line() != "ply") throw ParseError("missing 'ply' magic", 0);
  std::vector<PlyElement> elements;
  std::string object_id;
  bool binary_le = false;
  for (;;) {
    const std::size_t at = pos;
    std::istringstream ss(next_line());
    std::string kw;
    ss >> kw;
    if (kw == "end_header") break;
    if (kw == "comment") {
      std::string key;
      if (ss >> key && key == "object_id") ss >> object_id;
      continue;
    }
    if (kw == "format") {
      std::string fmt;
      ss >> fmt;
      if (fmt != "binary_little_endian") throw ParseError("only binary_little_endian PLY is supported", at);
      binary_le = true;
    } else if (kw == "element") {
      PlyElement e;
      if (!(ss >> e.name >> e.count)) throw ParseError("bad element line", at);
      elements.push_back(e);
    } else if (kw == "property") {
      if (elements.empty()) throw ParseError("property before element", at);
      PlyProperty p;
      std::string t;
      ss >> t;
      if (t == "list") {
        ss >> p.count_type >> p.type >> p.name;
      } else {
        p.type = t;
        ss >> p.name;
      }
      elements.back().props.push_back(p);
    }
  }
  if (!binary_le) throw ParseError("PLY format line missing", 0);

  TriangleMesh mesh;
  mesh.object_id = object_id;
  ByteReader rd(std::move(bytes), pos);
  for (const auto& el : elements) {
    for (std::size_t i = 0; i < el.count; ++i) {
      Vec3 v = Vec3::Zero();
      for (const auto& p : el.props) {
        if (!p.count_type.empty()) {
          const auto cnt = static_cast<std::size_t>(rd.read_as(p.count_type));
          std::vector<int> idx(cnt);
          for (auto& x : idx) x = static_cast<int>(rd.read_as(p.type));
          if (el.name == "face" && (p.name == "vertex_indices" || p.name == "vertex_index")) {
            if (cnt < 3) throw ParseError("face with fewer than three vertices", rd.pos());
            for (std::size_t k = 1; k + 1 < cnt; ++k) mesh.faces.push_back({idx[0], idx[k], idx[k + 1]});
          }
        } else {
          const double val = rd.read_as(p.type);
          if (el.name == "vertex") {
            if (p.name == "x") v.x() = val;
            if (p.name == "y") v.y() = val;
            if (p.name == "z") v.z() = val;
          }
        }
      }
      if (el.name == "vertex") mesh.vertices.push_back(v);
    }
  }
  const int nv = static_cast<int>(mesh.vertices.size());
  for (const auto& f : mesh.faces)
    for (int idx : f)
      if (idx < 0 || idx >= nv) throw ParseError("PLY face index out of range", rd.pos());
  return mesh;
}

}  // namespace

TriangleMesh load_mesh(const std::filesystem::path& path) {
  const std::string ext = lower_ext(path);
  TriangleMesh mesh;
  if (ext == ".obj") {
    mesh = load_obj(path);
  } else if (ext == ".ply") {
    mesh = load_ply(path);
  } else {
    throw DataError("unsupported mesh extension '" + ext + "'");
  }
  if (mesh.object_id.empty()) mesh.object_id = path.stem().string();
  if (mesh.vertices.empty() || mesh.faces.empty()) throw ParseError("mesh has no geometry", 0);
  return mesh;
}

void save_mesh(const TriangleMesh& mesh, const std::filesystem::path& path) {
  const std::string ext = lower_ext(path);
  if (ext == ".obj") {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out.precision(9);
    if (!mesh.object_id.empty()) out << "o " << mesh.object_id << '\n';
    for (const auto& v : mesh.vertices) out << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
    for (const auto& f : mesh.faces) out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
    if (!out) throw DataError("write failed for " + path.string());
    return;
  }
  if (ext != ".ply") throw DataError("unsupported mesh extension '" + ext + "'");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "ply\nformat binary_little_endian 1.0\n";
  if (!mesh.object_id.empty()) out << "comment object_id " << mesh.object_id << '\n';
  out << "element vertex " << mesh.vertices.size() << "\nproperty float x\nproperty float y\nproperty float z\n"
      << "element face " << mesh.faces.size() << "\nproperty list uchar int vertex_indices\nend_header\n";
  for (const auto& v : mesh.vertices) {
    const float xyz[3] = {static_cast<float>(v.x()), static_cast<float>(v.y()), static_cast<float>(v.z())};
    out.write(reinterpret_cast<const char*>(xyz), sizeof(xyz));
  }
  for (const auto& f : mesh.faces) {
    const std::uint8_t n = 3;
    out.write(reinterpret_cast<const char*>(&n), 1);
    const std::int32_t idx[3] = {f[0], f[1], f[2]};
    out.write(reinterpret_cast<const char*>(idx), sizeof(idx));
  }
  if (!out) throw DataError("write failed for " + path.string());
}

}  // namespace ove6d
