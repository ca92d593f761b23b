#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "blursplat/checkpoint.hpp"
#include "blursplat/rng.hpp"
#include "doctest.h"

namespace fs = std::filesystem;
using namespace blursplat;

namespace {

fs::path scratch_path(const std::string& name) {
  return fs::temp_directory_path() / ("blursplat_test_" + name);
}

std::string read_raw(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(bool(f));
  return std::string((std::istreambuf_iterator<char>(f)),
                     std::istreambuf_iterator<char>());
}

void write_raw(const fs::path& p, const std::string& bytes) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  REQUIRE(bool(f));
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

// Values with no exact f32 representation exercise the dtype split.
std::vector<double> awkward_values(std::uint64_t seed, std::size_t n) {
  Rng rng(seed);
  std::vector<double> out(n);
  for (double& v : out) v = rng.normal() * 3.0 + 0.1;
  return out;
}

GaussianCloud random_cloud(std::uint64_t seed, std::size_t n) {
  Rng rng(seed);
  GaussianCloud cloud;
  for (std::size_t i = 0; i < n; ++i) {
    Eigen::Quaterniond q(rng.normal(), rng.normal(), rng.normal(),
                         rng.normal());
    cloud.add(
        Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal()),
        Eigen::Vector3d(rng.uniform(-2.0, 0.0), rng.uniform(-2.0, 0.0),
                        rng.uniform(-2.0, 0.0)),
        Rotation::from_quaternion_lenient(q), rng.uniform(-2.0, 2.0),
        Eigen::Vector3d(rng.uniform(), rng.uniform(), rng.uniform()),
        i % 3 == 0 ? GaussianTag::kDynamic : GaussianTag::kStatic);
  }
  return cloud;
}

DeformField random_field(std::uint64_t seed) {
  DeformField field = DeformField::create(GaussianTag::kDynamic, 2, 8, 3, 2,
                                          seed);
  Rng rng(seed + 1);
  for (auto& w : field.weights) {
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) += rng.normal();
    }
  }
  for (auto& b : field.biases) {
    for (Eigen::Index r = 0; r < b.size(); ++r) b[r] += rng.normal() * 0.1;
  }
  return field;
}

}  // namespace

TEST_CASE("container round trips arrays and metadata") {
  const fs::path path = scratch_path("container.bspc");
  const std::vector<double> vals = awkward_values(171, 6);

  BspcFile file;
  file.meta["run"] = {{"iteration", 42}, {"note", "checkpoint test"}};
  BspcArray& a = file.add("params", {2, 3}, false);
  a.data = vals;
  BspcArray& b = file.add("exact/params", {2, 3}, true);
  b.data = vals;
  write_bspc(path.string(), file);

  const BspcFile back = read_bspc(path.string());
  REQUIRE(back.arrays.size() == 2);
  CHECK(back.meta["run"]["iteration"] == 42);
  CHECK(back.meta["run"]["note"] == "checkpoint test");

  const BspcArray& ra = back.at("params");
  CHECK(ra.shape == std::vector<std::size_t>{2, 3});
  CHECK_FALSE(ra.f64);
  for (std::size_t i = 0; i < vals.size(); ++i) {
    // f32 interchange keeps exactly the value of the float cast.
    CHECK(ra.data[i] == static_cast<double>(static_cast<float>(vals[i])));
    CHECK(ra.data[i] != vals[i]);
  }

  const BspcArray& rb = back.at("exact/params");
  CHECK(rb.f64);
  for (std::size_t i = 0; i < vals.size(); ++i) CHECK(rb.data[i] == vals[i]);

  CHECK(back.find("missing") == nullptr);
  CHECK_THROWS_AS(back.at("missing"), std::invalid_argument);
  fs::remove(path);
}

TEST_CASE("written bytes follow the documented layout") {
  const fs::path path = scratch_path("layout.bspc");
  BspcFile file;
  file.meta["alpha"] = 3;
  BspcArray& m = file.add("m", {2}, false);
  m.data = {1.0, -2.5};
  BspcArray& e = file.add("exact/m", {2}, true);
  e.data = {1.0, -2.5};
  write_bspc(path.string(), file);

  const std::string bytes = read_raw(path);
  REQUIRE(bytes.size() >= 16);
  CHECK(bytes.compare(0, 4, "BSPC") == 0);

  std::uint32_t version = 0;
  std::memcpy(&version, bytes.data() + 4, 4);
  CHECK(version == 1);

  std::uint64_t header_len = 0;
  std::memcpy(&header_len, bytes.data() + 8, 8);
  REQUIRE(16 + header_len < bytes.size());

  const nlohmann::json header =
      nlohmann::json::parse(bytes.substr(16, header_len));
  REQUIRE(header.at("arrays").size() == 2);
  CHECK(header["arrays"][0]["name"] == "m");
  CHECK(header["arrays"][0]["dtype"] == "f32");
  CHECK(header["arrays"][0]["shape"] == nlohmann::json::array({2}));
  CHECK(header["arrays"][1]["dtype"] == "f64");
  CHECK(header["meta"]["alpha"] == 3);

  // Payloads sit back to back after the header, in directory order.
  REQUIRE(bytes.size() == 16 + header_len + 2 * 4 + 2 * 8);
  const char* p = bytes.data() + 16 + header_len;
  float f0 = 0.0f, f1 = 0.0f;
  std::memcpy(&f0, p, 4);
  std::memcpy(&f1, p + 4, 4);
  CHECK(f0 == 1.0f);
  CHECK(f1 == -2.5f);
  double d0 = 0.0, d1 = 0.0;
  std::memcpy(&d0, p + 8, 8);
  std::memcpy(&d1, p + 16, 8);
  CHECK(d0 == 1.0);
  CHECK(d1 == -2.5);
  fs::remove(path);
}

TEST_CASE("writing is deterministic and survives a parse cycle") {
  const fs::path path_a = scratch_path("det_a.bspc");
  const fs::path path_b = scratch_path("det_b.bspc");

  BspcFile file;
  file.meta["zeta"] = {{"b", 2}, {"a", 1}};
  file.meta["alpha"] = "first";
  BspcArray& a = file.add("x", {5}, true);
  a.data = awkward_values(172, 5);
  pack_pose_array(&file, "poses", {Pose{}, Pose{}});

  write_bspc(path_a.string(), file);
  write_bspc(path_b.string(), file);
  CHECK(read_raw(path_a) == read_raw(path_b));

  // Reading and rewriting must reproduce the same bytes, so checkpoints
  // can be compared across runs with a plain byte diff.
  const BspcFile back = read_bspc(path_a.string());
  write_bspc(path_b.string(), back);
  CHECK(read_raw(path_a) == read_raw(path_b));
  fs::remove(path_a);
  fs::remove(path_b);
}

TEST_CASE("malformed files and directories are rejected") {
  const fs::path path = scratch_path("bad.bspc");
  BspcFile file;
  BspcArray& a = file.add("x", {3}, false);
  a.data = {1.0, 2.0, 3.0};
  write_bspc(path.string(), file);
  const std::string good = read_raw(path);

  SUBCASE("duplicate array names") {
    CHECK_THROWS_AS(file.add("x", {1}, true), std::invalid_argument);
  }
  SUBCASE("bad magic") {
    std::string bytes = good;
    bytes[0] = 'X';
    write_raw(path, bytes);
    CHECK_THROWS_AS(read_bspc(path.string()), std::runtime_error);
  }
  SUBCASE("unsupported version") {
    std::string bytes = good;
    bytes[4] = 2;
    write_raw(path, bytes);
    CHECK_THROWS_AS(read_bspc(path.string()), std::runtime_error);
  }
  SUBCASE("truncated payload") {
    write_raw(path, good.substr(0, good.size() - 5));
    CHECK_THROWS_AS(read_bspc(path.string()), std::runtime_error);
  }
  SUBCASE("header length past the end") {
    std::string bytes = good;
    const std::uint64_t huge = 1u << 20;
    std::memcpy(bytes.data() + 8, &huge, 8);
    write_raw(path, bytes);
    CHECK_THROWS_AS(read_bspc(path.string()), std::runtime_error);
  }
  SUBCASE("unknown dtype in the directory") {
    const std::string header =
        "{\"arrays\":[{\"dtype\":\"i32\",\"name\":\"z\",\"shape\":[0]}],"
        "\"meta\":{}}";
    std::string bytes = "BSPC";
    const std::uint32_t version = 1;
    bytes.append(reinterpret_cast<const char*>(&version), 4);
    const std::uint64_t len = header.size();
    bytes.append(reinterpret_cast<const char*>(&len), 8);
    bytes.append(header);
    write_raw(path, bytes);
    CHECK_THROWS_AS(read_bspc(path.string()), std::runtime_error);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(read_bspc((path.string() + ".absent")),
                    std::runtime_error);
  }
  fs::remove(path);
}

TEST_CASE("gaussian cloud round trips") {
  const fs::path path = scratch_path("cloud.bspc");
  const GaussianCloud cloud = random_cloud(173, 9);

  SUBCASE("shadow arrays restore every bit") {
    BspcFile file;
    pack_cloud(&file, cloud, true);
    write_bspc(path.string(), file);
    const GaussianCloud back = unpack_cloud(read_bspc(path.string()));
    REQUIRE(back.size() == cloud.size());
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      CHECK((back.means[i].array() == cloud.means[i].array()).all());
      CHECK(
          (back.log_scales[i].array() == cloud.log_scales[i].array()).all());
      CHECK((back.rotations[i].q.coeffs().array() ==
             cloud.rotations[i].q.coeffs().array())
                .all());
      CHECK(back.opacity_logits[i] == cloud.opacity_logits[i]);
      CHECK((back.colors[i].array() == cloud.colors[i].array()).all());
      CHECK(back.tags[i] == cloud.tags[i]);
    }
  }

  SUBCASE("interchange arrays carry float precision") {
    BspcFile file;
    pack_cloud(&file, cloud, false);
    write_bspc(path.string(), file);
    const GaussianCloud back = unpack_cloud(read_bspc(path.string()));
    REQUIRE(back.size() == cloud.size());
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      for (int j = 0; j < 3; ++j) {
        CHECK(back.means[i][j] ==
              static_cast<double>(static_cast<float>(cloud.means[i][j])));
      }
      CHECK(back.opacity_logits[i] ==
            static_cast<double>(static_cast<float>(cloud.opacity_logits[i])));
      // Rotations are renormalized after the float truncation, so they
      // land near, not exactly on, the truncated values.
      CHECK(back.rotations[i].q.angularDistance(cloud.rotations[i].q) <
            1e-6);
      CHECK(std::abs(back.rotations[i].q.norm() - 1.0) < 1e-12);
      CHECK(back.tags[i] == cloud.tags[i]);
    }
  }

  SUBCASE("tag list length must match the arrays") {
    BspcFile file;
    pack_cloud(&file, cloud, true);
    file.meta["gaussians"]["tags"].push_back(0);
    file.meta["gaussians"]["count"] =
        file.meta["gaussians"]["count"].get<std::size_t>() + 1;
    CHECK_THROWS_AS(unpack_cloud(file), std::invalid_argument);
  }
  fs::remove(path);
}

TEST_CASE("deformation field round trips") {
  const fs::path path = scratch_path("field.bspc");
  const DeformField field = random_field(174);

  BspcFile file;
  pack_field(&file, "field/dynamic", field, true);
  CHECK(has_field(file, "field/dynamic"));
  CHECK_FALSE(has_field(file, "field/static"));
  write_bspc(path.string(), file);

  const BspcFile back_file = read_bspc(path.string());
  CHECK(has_field(back_file, "field/dynamic"));
  const DeformField back = unpack_field(back_file, "field/dynamic");
  CHECK(back.role == field.role);
  CHECK(back.l_x == field.l_x);
  CHECK(back.l_t == field.l_t);
  REQUIRE(back.layer_count() == field.layer_count());
  for (int l = 0; l < field.layer_count(); ++l) {
    CHECK((back.weights[l].array() == field.weights[l].array()).all());
    CHECK((back.biases[l].array() == field.biases[l].array()).all());
  }

  CHECK_THROWS_AS(unpack_field(back_file, "field/static"),
                  std::invalid_argument);
  DeformField empty;
  CHECK_THROWS_AS(pack_field(&file, "field/empty", empty, false),
                  std::invalid_argument);
  fs::remove(path);
}

TEST_CASE("poses and delta pairs round trip bitwise") {
  const fs::path path = scratch_path("poses.bspc");
  Rng rng(175);
  std::vector<Pose> poses;
  for (int i = 0; i < 4; ++i) {
    Pose p;
    p.rotation = Rotation::from_quaternion_lenient(Eigen::Quaterniond(
        rng.normal(), rng.normal(), rng.normal(), rng.normal()));
    p.translation = {rng.normal(), rng.normal(), rng.normal()};
    poses.push_back(p);
  }
  std::vector<PoseDeltaPair> deltas(3);
  for (PoseDeltaPair& d : deltas) {
    for (int j = 0; j < 6; ++j) {
      d.start[j] = rng.normal() * 0.01;
      d.end[j] = rng.normal() * 0.01;
    }
  }

  BspcFile file;
  pack_pose_array(&file, "frames", poses);
  pack_delta_pairs(&file, "deltas", deltas);
  write_bspc(path.string(), file);
  const BspcFile back_file = read_bspc(path.string());

  const std::vector<Pose> back = unpack_pose_array(back_file, "frames");
  REQUIRE(back.size() == poses.size());
  for (std::size_t i = 0; i < poses.size(); ++i) {
    CHECK((back[i].rotation.q.coeffs().array() ==
           poses[i].rotation.q.coeffs().array())
              .all());
    CHECK((back[i].translation.array() == poses[i].translation.array()).all());
  }

  const std::vector<PoseDeltaPair> back_deltas =
      unpack_delta_pairs(back_file, "deltas");
  REQUIRE(back_deltas.size() == deltas.size());
  for (std::size_t i = 0; i < deltas.size(); ++i) {
    CHECK((back_deltas[i].start.array() == deltas[i].start.array()).all());
    CHECK((back_deltas[i].end.array() == deltas[i].end.array()).all());
  }

  // The pose layout is pinned to [count, 7] in f64; anything else is a
  // different format, not a pose array.
  BspcFile bad;
  BspcArray& a = bad.add("frames", {2, 7}, false);
  a.data.assign(14, 0.0);
  a.data[0] = 1.0;
  a.data[7] = 1.0;
  CHECK_THROWS_AS(unpack_pose_array(bad, "frames"), std::invalid_argument);
  fs::remove(path);
}
