#include "nmpm/dataio.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>

namespace nmpm {

using nlohmann::json;

namespace {

void write_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), 4);
}

std::uint32_t read_u32(std::istream& is, const std::string& path) {
  std::uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 4))
    throw TensorError("trajectory file truncated: " + path);
  return v;
}

json domain_to_json(const Domain& d) {
  return json{{"lo", {d.lo_x, d.lo_y}},
              {"hi", {d.hi_x, d.hi_y}},
              {"grid", {d.width, d.height}}};
}

Domain domain_from_json(const json& j) {
  Domain d;
  d.lo_x = j.at("lo")[0];
  d.lo_y = j.at("lo")[1];
  d.hi_x = j.at("hi")[0];
  d.hi_y = j.at("hi")[1];
  d.width = j.at("grid")[0];
  d.height = j.at("grid")[1];
  return d;
}

}  // namespace

void write_trajectory(const std::string& path, const mpm::Trajectory& traj,
                      double density_scale) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw TensorError("cannot open for write: " + path);
  os.write(kTrajMagic, 8);
  write_u32(os, kTrajVersion);

  json header;
  header["domain"] = domain_to_json(traj.domain);
  header["materials"] = traj.material;
  header["density_scale"] = density_scale;
  header["globals"] = {{"gravity", {traj.gravity[0], traj.gravity[1]}}};
  header["N"] = traj.count;
  header["T"] = traj.frames;
  std::string hs = header.dump();
  write_u32(os, static_cast<std::uint32_t>(hs.size()));
  os.write(hs.data(), static_cast<std::streamsize>(hs.size()));

  os.write(reinterpret_cast<const char*>(traj.positions.data()),
           static_cast<std::streamsize>(traj.positions.size() * sizeof(float)));
  if (!os) throw TensorError("write failed: " + path);
}

mpm::Trajectory read_trajectory(const std::string& path, double* density_scale) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw TensorError("cannot open trajectory file: " + path);
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kTrajMagic, 8) != 0)
    throw TensorError("bad trajectory magic in " + path);
  std::uint32_t version = read_u32(is, path);
  if (version != kTrajVersion)
    throw TensorError("unsupported trajectory version " + std::to_string(version) +
                      " in " + path);
  std::uint32_t hlen = read_u32(is, path);
  std::string hs(hlen, '\0');
  if (!is.read(hs.data(), hlen)) throw TensorError("trajectory file truncated: " + path);
  json header = json::parse(hs);

  mpm::Trajectory traj;
  traj.domain = domain_from_json(header.at("domain"));
  traj.material = header.at("materials").get<std::vector<std::uint8_t>>();
  traj.gravity[0] = header.at("globals").at("gravity")[0];
  traj.gravity[1] = header.at("globals").at("gravity")[1];
  traj.count = header.at("N");
  traj.frames = header.at("T");
  if (traj.count != static_cast<int>(traj.material.size()))
    throw TensorError("trajectory header N disagrees with materials in " + path);
  if (density_scale) *density_scale = header.at("density_scale");

  traj.positions.resize(static_cast<std::size_t>(traj.frames) * traj.count * 2);
  if (!is.read(reinterpret_cast<char*>(traj.positions.data()),
               static_cast<std::streamsize>(traj.positions.size() * sizeof(float))))
    throw TensorError("trajectory payload truncated: " + path);
  return traj;
}

void write_manifest(const std::string& path, const Manifest& manifest) {
  json j;
  for (const auto& [split, files] : manifest.splits) j["splits"][split] = files;
  std::ofstream os(path);
  if (!os) throw TensorError("cannot open for write: " + path);
  os << j.dump(2) << "\n";
}

Manifest read_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw TensorError("cannot open manifest: " + path);
  json j = json::parse(is);
  Manifest m;
  for (auto& [split, files] : j.at("splits").items())
    m.splits[split] = files.get<std::vector<std::string>>();
  return m;
}

const Domain& Dataset::domain() const {
  if (trajectories.empty()) throw TensorError("Dataset::domain: empty dataset");
  return trajectories.front().domain;
}

Dataset load_split(const Manifest& manifest, const std::string& split,
                   const std::string& base_dir) {
  auto it = manifest.splits.find(split);
  if (it == manifest.splits.end())
    throw TensorError("manifest has no split named " + split);
  Dataset ds;
  for (const std::string& rel : it->second) {
    std::filesystem::path p = std::filesystem::path(base_dir) / rel;
    double scale = 1.0;
    ds.trajectories.push_back(read_trajectory(p.string(), &scale));
    ds.density_scale = scale;  // all files of a dataset share one scale
  }
  if (ds.trajectories.empty())
    throw TensorError("split " + split + " is empty");
  return ds;
}

ParticleCloud cloud_at(const mpm::Trajectory& traj, int t) {
  if (t < 0 || t >= traj.frames)
    throw TensorError("cloud_at: frame " + std::to_string(t) + " out of range");
  int N = traj.count;
  ParticleCloud c;
  c.pos.assign(traj.positions.begin() + static_cast<std::size_t>(t) * N * 2,
               traj.positions.begin() + static_cast<std::size_t>(t + 1) * N * 2);
  c.vel.assign(static_cast<std::size_t>(N) * 2, 0.0f);
  if (t > 0)
    for (int i = 0; i < N * 2; ++i)
      c.vel[static_cast<std::size_t>(i)] =
          c.pos[static_cast<std::size_t>(i)] -
          traj.positions[static_cast<std::size_t>(t - 1) * N * 2 + i];
  c.material = traj.material;
  return c;
}

double estimate_density_scale(const std::vector<mpm::Trajectory>& trajs,
                              int grid_w, int grid_h) {
  double total = 0.0;
  long occupied = 0;
  for (const auto& tr : trajs) {
    Domain dom = tr.domain;
    dom.width = grid_w;
    dom.height = grid_h;
    std::vector<int> count(static_cast<std::size_t>(grid_w) * grid_h);
    for (int t = 0; t < tr.frames; t += std::max(1, tr.frames / 8)) {
      std::fill(count.begin(), count.end(), 0);
      for (int i = 0; i < tr.count; ++i) {
        if (tr.material[static_cast<std::size_t>(i)] ==
            static_cast<std::uint8_t>(Material::boundary))
          continue;
        double x = tr.positions[(static_cast<std::size_t>(t) * tr.count + i) * 2];
        double y = tr.positions[(static_cast<std::size_t>(t) * tr.count + i) * 2 + 1];
        int cx = detail::cell_of(x, dom.lo_x, dom.cell_x(), grid_w);
        int cy = detail::cell_of(y, dom.lo_y, dom.cell_y(), grid_h);
        count[static_cast<std::size_t>(cy) * grid_w + cx] += 1;
      }
      for (int c : count)
        if (c > 0) {
          total += c;
          ++occupied;
        }
    }
  }
  if (occupied == 0) return 1.0;
  return total / static_cast<double>(occupied);
}

}  // namespace nmpm
