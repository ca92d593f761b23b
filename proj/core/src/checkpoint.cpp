#include "blursplat/checkpoint.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace blursplat {
namespace {

void put_bytes(std::string* out, const void* p, std::size_t n) {
  out->append(static_cast<const char*>(p), n);
}

void check_name_free(const BspcFile& file, const std::string& name) {
  if (file.find(name) != nullptr) {
    throw std::invalid_argument("bspc: duplicate array name " + name);
  }
}

std::string role_name(GaussianTag role) {
  return role == GaussianTag::kStatic ? "static" : "dynamic";
}

GaussianTag role_from_name(const std::string& s) {
  if (s == "static") return GaussianTag::kStatic;
  if (s == "dynamic") return GaussianTag::kDynamic;
  throw std::invalid_argument("bspc: unknown field role " + s);
}

// Writes a vector-valued per-Gaussian parameter as [n, dim].
template <typename Get>
void pack_param(BspcFile* file, const std::string& name, std::size_t n,
                std::size_t dim, bool f64, Get get) {
  BspcArray& a = file->add(name, dim == 1 ? std::vector<std::size_t>{n}
                                          : std::vector<std::size_t>{n, dim},
                           f64);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < dim; ++j) a.data[i * dim + j] = get(i, j);
  }
}

struct Picked {
  const BspcArray* array;
  bool exact;
};

// Reads "exact/<name>" when present, else "<name>".
Picked pick(const BspcFile& file, const std::string& name) {
  if (const BspcArray* e = file.find("exact/" + name)) return {e, true};
  return {&file.at(name), false};
}

// Restores a stored f64 quaternion verbatim. Renormalizing an
// already-unit quaternion perturbs the last bit, which would break
// bit-exact resume; the writer only ever stores canonical unit
// rotations, so a tolerance check is enough.
Rotation exact_rotation(Eigen::Quaterniond quat, const char* what) {
  if (std::abs(quat.norm() - 1.0) > 1e-9) {
    throw std::invalid_argument(std::string(what) +
                                ": stored rotation is not unit length");
  }
  if (quat.w() < 0.0) quat.coeffs() = -quat.coeffs();
  Rotation rot;
  rot.q = quat;
  return rot;
}

}  // namespace

BspcArray& BspcFile::add(const std::string& name,
                         std::vector<std::size_t> shape, bool f64) {
  check_name_free(*this, name);
  BspcArray a;
  a.name = name;
  a.shape = std::move(shape);
  a.f64 = f64;
  a.data.assign(a.count(), 0.0);
  arrays.push_back(std::move(a));
  return arrays.back();
}

const BspcArray* BspcFile::find(const std::string& name) const {
  for (const BspcArray& a : arrays) {
    if (a.name == name) return &a;
  }
  return nullptr;
}

const BspcArray& BspcFile::at(const std::string& name) const {
  const BspcArray* a = find(name);
  if (a == nullptr) {
    throw std::invalid_argument("bspc: missing array " + name);
  }
  return *a;
}

void write_bspc(const std::string& path, const BspcFile& file) {
  nlohmann::json dir = nlohmann::json::array();
  for (const BspcArray& a : file.arrays) {
    if (a.data.size() != a.count()) {
      throw std::invalid_argument("bspc: array size does not match shape: " +
                                  a.name);
    }
    dir.push_back({{"dtype", a.f64 ? "f64" : "f32"},
                   {"name", a.name},
                   {"shape", a.shape}});
  }
  nlohmann::json header = {{"arrays", dir}, {"meta", file.meta}};
  const std::string header_str = header.dump();

  std::string out;
  out.reserve(16 + header_str.size());
  out.append("BSPC");
  const std::uint32_t version = kBspcVersion;
  put_bytes(&out, &version, 4);
  const std::uint64_t header_len = header_str.size();
  put_bytes(&out, &header_len, 8);
  out.append(header_str);
  for (const BspcArray& a : file.arrays) {
    if (a.f64) {
      put_bytes(&out, a.data.data(), a.data.size() * 8);
    } else {
      for (double v : a.data) {
        const float f = static_cast<float>(v);
        put_bytes(&out, &f, 4);
      }
    }
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("bspc: cannot open for write: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw std::runtime_error("bspc: write failed: " + path);
}

BspcFile read_bspc(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("bspc: cannot open: " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)),
                    std::istreambuf_iterator<char>());
  if (bytes.size() < 16 || bytes.compare(0, 4, "BSPC") != 0) {
    throw std::runtime_error("bspc: bad magic: " + path);
  }
  std::uint32_t version = 0;
  std::memcpy(&version, bytes.data() + 4, 4);
  if (version != kBspcVersion) {
    throw std::runtime_error("bspc: unsupported version in " + path);
  }
  std::uint64_t header_len = 0;
  std::memcpy(&header_len, bytes.data() + 8, 8);
  if (16 + header_len > bytes.size()) {
    throw std::runtime_error("bspc: truncated header: " + path);
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(16, header_len));
  } catch (const nlohmann::json::exception&) {
    throw std::runtime_error("bspc: invalid header JSON: " + path);
  }

  BspcFile file;
  file.meta = header.value("meta", nlohmann::json::object());
  std::size_t offset = 16 + header_len;
  for (const nlohmann::json& entry : header.at("arrays")) {
    BspcArray a;
    a.name = entry.at("name").get<std::string>();
    a.shape = entry.at("shape").get<std::vector<std::size_t>>();
    const std::string dtype = entry.at("dtype").get<std::string>();
    if (dtype != "f32" && dtype != "f64") {
      throw std::runtime_error("bspc: unknown dtype " + dtype);
    }
    a.f64 = dtype == "f64";
    const std::size_t n = a.count();
    const std::size_t width = a.f64 ? 8 : 4;
    if (offset + n * width > bytes.size()) {
      throw std::runtime_error("bspc: truncated payload: " + path);
    }
    a.data.resize(n);
    if (a.f64) {
      std::memcpy(a.data.data(), bytes.data() + offset, n * 8);
    } else {
      for (std::size_t i = 0; i < n; ++i) {
        float v = 0.0f;
        std::memcpy(&v, bytes.data() + offset + i * 4, 4);
        a.data[i] = static_cast<double>(v);
      }
    }
    offset += n * width;
    file.arrays.push_back(std::move(a));
  }
  return file;
}

void pack_cloud(BspcFile* file, const GaussianCloud& cloud, bool exact) {
  if (!cloud.consistent()) {
    throw std::invalid_argument("pack_cloud: inconsistent cloud");
  }
  const std::size_t n = cloud.size();
  auto emit = [&](const std::string& prefix, bool f64) {
    pack_param(file, prefix + "means", n, 3, f64,
               [&](std::size_t i, std::size_t j) { return cloud.means[i][j]; });
    pack_param(file, prefix + "log_scales", n, 3, f64,
               [&](std::size_t i, std::size_t j) {
                 return cloud.log_scales[i][j];
               });
    pack_param(file, prefix + "rotations", n, 4, f64,
               [&](std::size_t i, std::size_t j) {
                 const Eigen::Quaterniond& q = cloud.rotations[i].q;
                 const double wxyz[4] = {q.w(), q.x(), q.y(), q.z()};
                 return wxyz[j];
               });
    pack_param(file, prefix + "opacity_logits", n, 1, f64,
               [&](std::size_t i, std::size_t) {
                 return cloud.opacity_logits[i];
               });
    pack_param(file, prefix + "colors", n, 3, f64,
               [&](std::size_t i, std::size_t j) { return cloud.colors[i][j]; });
  };
  emit("", false);
  if (exact) emit("exact/", true);

  nlohmann::json tags = nlohmann::json::array();
  for (GaussianTag t : cloud.tags) {
    tags.push_back(t == GaussianTag::kDynamic ? 1 : 0);
  }
  file->meta["gaussians"] = {
      {"count", n}, {"sh_degree", 0}, {"tags", std::move(tags)}};
}

GaussianCloud unpack_cloud(const BspcFile& file) {
  const nlohmann::json& info = file.meta.at("gaussians");
  const std::size_t n = info.at("count").get<std::size_t>();
  const BspcArray& means = *pick(file, "means").array;
  const BspcArray& log_scales = *pick(file, "log_scales").array;
  const Picked rotations = pick(file, "rotations");
  const BspcArray& opacities = *pick(file, "opacity_logits").array;
  const BspcArray& colors = *pick(file, "colors").array;
  const nlohmann::json& tags = info.at("tags");
  if (means.count() != n * 3 || rotations.array->count() != n * 4 ||
      opacities.count() != n || tags.size() != n) {
    throw std::invalid_argument("unpack_cloud: array sizes disagree");
  }
  GaussianCloud cloud;
  for (std::size_t i = 0; i < n; ++i) {
    const double* q = rotations.array->data.data() + i * 4;
    const Eigen::Quaterniond quat(q[0], q[1], q[2], q[3]);
    const Rotation rot = rotations.exact
                             ? exact_rotation(quat, "unpack_cloud")
                             : Rotation::from_quaternion_lenient(quat);
    cloud.add(Eigen::Vector3d(means.data[i * 3], means.data[i * 3 + 1],
                              means.data[i * 3 + 2]),
              Eigen::Vector3d(log_scales.data[i * 3],
                              log_scales.data[i * 3 + 1],
                              log_scales.data[i * 3 + 2]),
              rot, opacities.data[i],
              Eigen::Vector3d(colors.data[i * 3], colors.data[i * 3 + 1],
                              colors.data[i * 3 + 2]),
              tags[i].get<int>() == 1 ? GaussianTag::kDynamic
                                      : GaussianTag::kStatic);
  }
  return cloud;
}

void pack_field(BspcFile* file, const std::string& prefix,
                const DeformField& field, bool exact) {
  if (!field.initialized()) {
    throw std::invalid_argument("pack_field: field has no layers");
  }
  auto emit = [&](const std::string& head, bool f64) {
    for (int l = 0; l < field.layer_count(); ++l) {
      const Eigen::MatrixXd& w = field.weights[l];
      BspcArray& wa = file->add(
          head + "/w" + std::to_string(l),
          {static_cast<std::size_t>(w.rows()),
           static_cast<std::size_t>(w.cols())},
          f64);
      for (Eigen::Index r = 0; r < w.rows(); ++r) {
        for (Eigen::Index c = 0; c < w.cols(); ++c) {
          wa.data[static_cast<std::size_t>(r * w.cols() + c)] = w(r, c);
        }
      }
      const Eigen::VectorXd& b = field.biases[l];
      BspcArray& ba = file->add(head + "/b" + std::to_string(l),
                                {static_cast<std::size_t>(b.size())}, f64);
      for (Eigen::Index r = 0; r < b.size(); ++r) {
        ba.data[static_cast<std::size_t>(r)] = b[r];
      }
    }
  };
  emit(prefix, false);
  if (exact) emit("exact/" + prefix, true);
  file->meta["fields"][prefix] = {{"role", role_name(field.role)},
                                  {"l_x", field.l_x},
                                  {"l_t", field.l_t},
                                  {"layers", field.layer_count()}};
}

bool has_field(const BspcFile& file, const std::string& prefix) {
  return file.meta.contains("fields") &&
         file.meta["fields"].contains(prefix);
}

DeformField unpack_field(const BspcFile& file, const std::string& prefix) {
  if (!has_field(file, prefix)) {
    throw std::invalid_argument("unpack_field: no field " + prefix);
  }
  const nlohmann::json& info = file.meta["fields"][prefix];
  DeformField field;
  field.role = role_from_name(info.at("role").get<std::string>());
  field.l_x = info.at("l_x").get<int>();
  field.l_t = info.at("l_t").get<int>();
  const int layers = info.at("layers").get<int>();
  for (int l = 0; l < layers; ++l) {
    const std::string tail = std::to_string(l);
    const BspcArray& wa = *pick(file, prefix + "/w" + tail).array;
    const BspcArray& ba = *pick(file, prefix + "/b" + tail).array;
    if (wa.shape.size() != 2 || ba.shape.size() != 1 ||
        wa.shape[0] != ba.shape[0]) {
      throw std::invalid_argument("unpack_field: bad layer shapes");
    }
    Eigen::MatrixXd w(wa.shape[0], wa.shape[1]);
    for (std::size_t r = 0; r < wa.shape[0]; ++r) {
      for (std::size_t c = 0; c < wa.shape[1]; ++c) {
        w(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
            wa.data[r * wa.shape[1] + c];
      }
    }
    Eigen::VectorXd b(ba.shape[0]);
    for (std::size_t r = 0; r < ba.shape[0]; ++r) {
      b[static_cast<Eigen::Index>(r)] = ba.data[r];
    }
    field.weights.push_back(std::move(w));
    field.biases.push_back(std::move(b));
  }
  return field;
}

void pack_pose_array(BspcFile* file, const std::string& name,
                     const std::vector<Pose>& poses) {
  BspcArray& a = file->add(name, {poses.size(), 7}, true);
  for (std::size_t i = 0; i < poses.size(); ++i) {
    pose_to_array(poses[i], a.data.data() + i * 7);
  }
}

std::vector<Pose> unpack_pose_array(const BspcFile& file,
                                    const std::string& name) {
  const BspcArray& a = file.at(name);
  if (a.shape.size() != 2 || a.shape[1] != 7 || !a.f64) {
    throw std::invalid_argument("unpack_pose_array: bad shape for " + name);
  }
  std::vector<Pose> poses(a.shape[0]);
  for (std::size_t i = 0; i < poses.size(); ++i) {
    const double* row = a.data.data() + i * 7;
    poses[i].rotation = exact_rotation(
        Eigen::Quaterniond(row[0], row[1], row[2], row[3]),
        "unpack_pose_array");
    poses[i].translation = {row[4], row[5], row[6]};
  }
  return poses;
}

void pack_delta_pairs(BspcFile* file, const std::string& name,
                      const std::vector<PoseDeltaPair>& deltas) {
  BspcArray& a = file->add(name, {deltas.size(), 12}, true);
  for (std::size_t i = 0; i < deltas.size(); ++i) {
    for (int j = 0; j < 6; ++j) {
      a.data[i * 12 + j] = deltas[i].start[j];
      a.data[i * 12 + 6 + j] = deltas[i].end[j];
    }
  }
}

std::vector<PoseDeltaPair> unpack_delta_pairs(const BspcFile& file,
                                              const std::string& name) {
  const BspcArray& a = file.at(name);
  if (a.shape.size() != 2 || a.shape[1] != 12 || !a.f64) {
    throw std::invalid_argument("unpack_delta_pairs: bad shape for " + name);
  }
  std::vector<PoseDeltaPair> deltas(a.shape[0]);
  for (std::size_t i = 0; i < deltas.size(); ++i) {
    for (int j = 0; j < 6; ++j) {
      deltas[i].start[j] = a.data[i * 12 + j];
      deltas[i].end[j] = a.data[i * 12 + 6 + j];
    }
  }
  return deltas;
}

}  // namespace blursplat
