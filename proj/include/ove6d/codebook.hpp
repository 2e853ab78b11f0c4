#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <vector>

#include "ove6d/geometry.hpp"
#include "ove6d/model.hpp"

namespace ove6d {

/// Per-object table of (embedding, viewpoint rotation) records.
struct ViewpointCodebook {
  std::string object_id;
  double diameter = 0;
  double f_base = 5;
  int dim = 0;
  /// N x dim, row-major, unit rows.
  std::vector<float> embeddings;
  /// Stored at f32 precision so that a save/load round trip is exact.
  std::vector<Rotation> rotations;
  /// Mesh the views were rendered from; not part of the file (see resolve_codebook_mesh).
  std::filesystem::path mesh_ref;

  int size() const { return static_cast<int>(rotations.size()); }
  std::span<const float> embedding(int i) const {
    return {embeddings.data() + static_cast<std::size_t>(i) * dim, static_cast<std::size_t>(dim)};
  }
  /// Throws InvalidArgument on broken invariants (N >= 2, unit rows, matching sizes).
  void validate() const;
};

inline constexpr std::uint16_t kCodebookVersion = 1;

/// Renders, preprocesses and encodes sample_viewpoints(n). Render failures name the viewpoint.
ViewpointCodebook build_codebook(const Network<float>& net, const TriangleMesh& mesh, int n = 4000,
                                 double f_base = 5.0, std::optional<double> diameter = std::nullopt);

struct RetrievalHit {
  int index = 0;
  double similarity = 0;
};

/// Exact top-k by cosine similarity, descending; ties go to the lower record index.
std::vector<RetrievalHit> retrieve(const ViewpointCodebook& cb, std::span<const float> query, int k);

/// "OVCB", u16 version, u16 id length + id, f32 diameter, f32 f_base, u32 dim, u32 N, then N x
/// (dim f32 embedding + 9 f32 row-major rotation); little-endian.
void save_codebook(const ViewpointCodebook& cb, const std::filesystem::path& path);
ViewpointCodebook load_codebook(const std::filesystem::path& path);

/// Mesh next to a codebook file: same stem with .ply or .obj.
std::optional<std::filesystem::path> resolve_codebook_mesh(const std::filesystem::path& codebook_path);

/// object_id -> (codebook, mesh). Registration takes a writer lock; lookups are shared.
class CodebookRegistry {
 public:
  struct Entry {
    ViewpointCodebook codebook;
    TriangleMesh mesh;
    /// Poses of symmetric objects are scored with ADD-S.
    bool symmetric = false;
  };

  void add(ViewpointCodebook cb, TriangleMesh mesh, bool symmetric = false);
  /// Throws DataError for an unknown id.
  std::shared_ptr<const Entry> find(const std::string& object_id) const;
  std::vector<std::string> ids() const;

 private:
  mutable std::shared_mutex mutex_;
  std::map<std::string, std::shared_ptr<const Entry>> entries_;
};

}  // namespace ove6d
