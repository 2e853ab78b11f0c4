#include "ove6d/codebook.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <mutex>

#include "ove6d/error.hpp"
#include "ove6d/parallel.hpp"
#include "ove6d/preprocess.hpp"

namespace ove6d {

namespace {

constexpr char kMagic[4] = {'O', 'V', 'C', 'B'};
constexpr int kBuildChunk = 256;

Rotation quantize(const Rotation& r) {
  Mat3 m;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) m(i, j) = static_cast<float>(r.matrix()(i, j));
  return Rotation(m);
}

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

}  // namespace

void ViewpointCodebook::validate() const {
  if (size() < 2) throw InvalidArgument("codebook needs at least two records");
  if (dim <= 0 || embeddings.size() != static_cast<std::size_t>(size()) * dim)
    throw InvalidArgument("codebook embedding table does not match N x dim");
  if (!(diameter > 0) || !(f_base > 0)) throw InvalidArgument("codebook diameter and f_base must be positive");
  for (int i = 0; i < size(); ++i) {
    double n2 = 0;
    for (float v : embedding(i)) n2 += static_cast<double>(v) * v;
    if (std::abs(std::sqrt(n2) - 1.0) > 1e-4) throw InvalidArgument("codebook embedding " + std::to_string(i) + " is not unit-norm");
  }
}

ViewpointCodebook build_codebook(const Network<float>& net, const TriangleMesh& mesh, int n, double f_base,
                                 std::optional<double> diameter) {
  if (n < 2) throw InvalidArgument("codebook needs n >= 2");
  ViewpointCodebook cb;
  cb.object_id = mesh.object_id;
  cb.diameter = diameter ? *diameter : mesh_diameter(mesh);
  cb.f_base = f_base;
  cb.dim = net.config().embedding_dim;
  const int size = net.config().input_size;
  const std::size_t px = static_cast<std::size_t>(size) * size;
  const auto views = sample_viewpoints(n);
  for (const auto& r : views) cb.rotations.push_back(quantize(r));
  cb.embeddings.resize(static_cast<std::size_t>(n) * cb.dim);

  for (int c0 = 0; c0 < n; c0 += kBuildChunk) {
    const int nb = std::min(kBuildChunk, n - c0);
    nn::Tensor<float> crops({nb, 1, size, size});
    parallel_for(static_cast<std::size_t>(nb), [&](std::size_t i) {
      const int idx = c0 + static_cast<int>(i);
      Crop crop;
      try {
        const DepthFrame f = render_codebook_view(mesh, cb.rotations[static_cast<std::size_t>(idx)], f_base, cb.diameter);
        crop = preprocess(f, mask_from_depth(f), cb.diameter, size);
      } catch (const Error& e) {
        throw EstimationFailure("codebook view " + std::to_string(idx) + " of " + cb.object_id + " failed: " + e.what());
      }
      std::copy(crop.normalized.begin(), crop.normalized.end(), crops.data() + i * px);
    });
    const Encoded e = encode(net, crops);
    std::copy(e.embeddings.storage().begin(), e.embeddings.storage().end(),
              cb.embeddings.begin() + static_cast<std::ptrdiff_t>(c0) * cb.dim);
  }
  return cb;
}

std::vector<RetrievalHit> retrieve(const ViewpointCodebook& cb, std::span<const float> query, int k) {
  if (k < 1 || k > cb.size()) throw InvalidArgument("retrieve: k must be in [1, " + std::to_string(cb.size()) + "]");
  if (static_cast<int>(query.size()) != cb.dim) throw InvalidArgument("retrieve: query dimension mismatch");
  std::vector<RetrievalHit> all(static_cast<std::size_t>(cb.size()));
  for (int i = 0; i < cb.size(); ++i) all[static_cast<std::size_t>(i)] = {i, nn::cosine_similarity(query, cb.embedding(i))};
  auto better = [](const RetrievalHit& a, const RetrievalHit& b) {
    return a.similarity > b.similarity || (a.similarity == b.similarity && a.index < b.index);
  };
  std::partial_sort(all.begin(), all.begin() + k, all.end(), better);
  all.resize(static_cast<std::size_t>(k));
  return all;
}

void save_codebook(const ViewpointCodebook& cb, const std::filesystem::path& path) {
  cb.validate();
  if (cb.object_id.size() > 0xffff) throw InvalidArgument("object id too long");
  std::string out(kMagic, 4);
  put<std::uint16_t>(out, kCodebookVersion);
  put<std::uint16_t>(out, static_cast<std::uint16_t>(cb.object_id.size()));
  out += cb.object_id;
  put<float>(out, static_cast<float>(cb.diameter));
  put<float>(out, static_cast<float>(cb.f_base));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(cb.dim));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(cb.size()));
  for (int i = 0; i < cb.size(); ++i) {
    for (float v : cb.embedding(i)) put<float>(out, v);
    const Mat3& m = cb.rotations[static_cast<std::size_t>(i)].matrix();
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) put<float>(out, static_cast<float>(m(r, c)));
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw DataError("write failed for " + path.string());
}

ViewpointCodebook load_codebook(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path.string());
  const std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  std::size_t pos = 0;
  auto need = [&](std::size_t n) {
    if (data.size() - pos < n) throw TruncatedError("codebook truncated at byte " + std::to_string(pos) + " of " + path.string());
  };
  auto get = [&]<typename T>(T) {
    need(sizeof(T));
    T v;
    std::memcpy(&v, data.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
  };
  need(4);
  if (std::memcmp(data.data(), kMagic, 4) != 0) throw FormatError("not an OVCB codebook (bad magic): " + path.string());
  pos = 4;
  const auto version = get(std::uint16_t{});
  if (version != kCodebookVersion) throw FormatError("unsupported codebook version " + std::to_string(version));
  ViewpointCodebook cb;
  const auto id_len = get(std::uint16_t{});
  need(id_len);
  cb.object_id = data.substr(pos, id_len);
  pos += id_len;
  cb.diameter = get(float{});
  cb.f_base = get(float{});
  cb.dim = static_cast<int>(get(std::uint32_t{}));
  const auto n = get(std::uint32_t{});
  const std::size_t record = (static_cast<std::size_t>(cb.dim) + 9) * sizeof(float);
  need(record * n);
  if (data.size() - pos != record * n) throw FormatError("codebook has trailing bytes after " + std::to_string(n) + " records");
  cb.embeddings.resize(static_cast<std::size_t>(n) * cb.dim);
  for (std::uint32_t i = 0; i < n; ++i) {
    for (int k = 0; k < cb.dim; ++k) cb.embeddings[static_cast<std::size_t>(i) * cb.dim + k] = get(float{});
    Mat3 m;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) m(r, c) = get(float{});
    try {
      cb.rotations.emplace_back(m);
    } catch (const InvalidArgument& e) {
      throw FormatError("codebook record " + std::to_string(i) + ": " + e.what());
    }
  }
  try {
    cb.validate();
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("invalid codebook: ") + e.what());
  }
  if (auto mesh = resolve_codebook_mesh(path)) cb.mesh_ref = *mesh;
  return cb;
}

std::optional<std::filesystem::path> resolve_codebook_mesh(const std::filesystem::path& codebook_path) {
  for (const char* ext : {".ply", ".obj"}) {
    auto p = codebook_path;
    p.replace_extension(ext);
    if (std::filesystem::exists(p)) return p;
  }
  return std::nullopt;
}

void CodebookRegistry::add(ViewpointCodebook cb, TriangleMesh mesh, bool symmetric) {
  cb.validate();
  mesh.validate();
  auto entry = std::make_shared<Entry>(Entry{std::move(cb), std::move(mesh), symmetric});
  std::unique_lock lock(mutex_);
  entries_[entry->codebook.object_id] = std::move(entry);
}

std::shared_ptr<const CodebookRegistry::Entry> CodebookRegistry::find(const std::string& object_id) const {
  std::shared_lock lock(mutex_);
  auto it = entries_.find(object_id);
  if (it == entries_.end()) throw DataError("no codebook registered for object '" + object_id + "'");
  return it->second;
}

std::vector<std::string> CodebookRegistry::ids() const {
  std::shared_lock lock(mutex_);
  std::vector<std::string> out;
  for (const auto& [k, v] : entries_) out.push_back(k);
  return out;
}

}  // namespace ove6d
