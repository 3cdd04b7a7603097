#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "deformsplat/data_io.hpp"

namespace deformsplat {

namespace {

std::vector<std::string> property_names(int sh_degree) {
  std::vector<std::string> names = {"x",       "y",       "z",       "rot_0",   "rot_1",
                                    "rot_2",   "rot_3",   "scale_0", "scale_1", "scale_2",
                                    "opacity", "f_dc_0",  "f_dc_1",  "f_dc_2"};
  const int rest = 3 * (sh_coeff_count(sh_degree) - 1);
  for (int i = 0; i < rest; ++i)
    names.push_back("f_rest_" + std::to_string(i));
  names.push_back("halluc");
  return names;
}

void put(std::string &buf, double v) {
  std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
  if constexpr (std::endian::native == std::endian::big)
    bits = __builtin_bswap64(bits);
  buf.append(reinterpret_cast<const char *>(&bits), 8);
}

double get(const char *p) {
  std::uint64_t bits;
  std::memcpy(&bits, p, 8);
  if constexpr (std::endian::native == std::endian::big)
    bits = __builtin_bswap64(bits);
  return std::bit_cast<double>(bits);
}

std::string hex_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

} // namespace

void export_ply(const GaussianCloud &cloud, const fs::path &path) {
  cloud.validate();
  const auto names = property_names(cloud.sh_degree);
  std::string out = "ply\nformat binary_little_endian 1.0\n";
  out += "comment deformsplat sh_degree " + std::to_string(cloud.sh_degree) + "\n";
  out += "comment deformsplat time " + hex_double(cloud.time) + "\n";
  out += "element vertex " + std::to_string(cloud.size()) + "\n";
  for (const auto &n : names)
    out += "property double " + n + "\n";
  out += "end_header\n";

  const int coeffs = cloud.coeffs_per_gaussian();
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    for (int k = 0; k < 3; ++k)
      put(out, cloud.positions[i][k]);
    for (int k = 0; k < 4; ++k)
      put(out, cloud.rotations[i][k]);
    for (int k = 0; k < 3; ++k)
      put(out, cloud.log_scales[i][k]);
    put(out, cloud.opacity_logits[i]);
    const auto sh = cloud.sh(i);
    for (int c = 0; c < 3; ++c)
      put(out, sh[0][c]);
    for (int c = 0; c < 3; ++c)
      for (int k = 1; k < coeffs; ++k)
        put(out, sh[k][c]);
    put(out, cloud.hallucination_logits[i]);
  }

  std::ofstream file(path, std::ios::binary);
  if (!file)
    throw IoError("cannot open " + path.string() + " for writing");
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!file)
    throw IoError("cannot write " + path.string());
}

GaussianCloud load_ply(const fs::path &path) {
  std::ifstream file(path, std::ios::binary);
  if (!file)
    throw LoadError("cannot open " + path.string());
  auto fail = [&](const std::string &msg) -> LoadError {
    return LoadError(path.string() + ": " + msg);
  };

  std::string line;
  std::getline(file, line);
  if (line != "ply")
    throw fail("not a PLY file");
  std::size_t count = 0;
  bool have_count = false;
  int sh_degree = -1;
  double time = 0.0;
  std::vector<std::string> props;
  while (std::getline(file, line)) {
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt != "binary_little_endian")
        throw fail("only binary_little_endian PLY is supported");
    } else if (key == "comment") {
      std::string tag, field, value;
      ls >> tag >> field >> value;
      if (tag == "deformsplat" && field == "sh_degree")
        sh_degree = std::stoi(value);
      else if (tag == "deformsplat" && field == "time")
        time = std::strtod(value.c_str(), nullptr);
    } else if (key == "element") {
      std::string name;
      ls >> name >> count;
      if (name != "vertex" || have_count)
        throw fail("expected a single vertex element");
      have_count = true;
    } else if (key == "property") {
      std::string type, name;
      ls >> type >> name;
      if (type != "double")
        throw fail("property " + name + " is not double");
      props.push_back(name);
    } else if (key == "end_header") {
      break;
    }
  }
  if (!have_count || line != "end_header")
    throw fail("truncated header");
  if (sh_degree < 0) {
    // Infer the degree from the coefficient count.
    const std::size_t base = property_names(0).size();
    for (int d = 0; d <= kMaxShDegree; ++d)
      if (props.size() == base + 3 * (sh_coeff_count(d) - 1))
        sh_degree = d;
  }
  if (sh_degree < 0 || sh_degree > kMaxShDegree || props != property_names(sh_degree))
    throw fail("unexpected vertex properties");

  const std::size_t stride = props.size() * 8;
  std::string data(count * stride, '\0');
  file.read(data.data(), static_cast<std::streamsize>(data.size()));
  if (static_cast<std::size_t>(file.gcount()) != data.size())
    throw fail("vertex data is truncated");

  GaussianCloud cloud = GaussianCloud::with_size(count, sh_degree);
  cloud.time = time;
  const int coeffs = cloud.coeffs_per_gaussian();
  for (std::size_t i = 0; i < count; ++i) {
    const char *p = data.data() + i * stride;
    auto next = [&] {
      const double v = get(p);
      p += 8;
      return v;
    };
    for (int k = 0; k < 3; ++k)
      cloud.positions[i][k] = next();
    for (int k = 0; k < 4; ++k)
      cloud.rotations[i][k] = next();
    for (int k = 0; k < 3; ++k)
      cloud.log_scales[i][k] = next();
    cloud.opacity_logits[i] = next();
    auto sh = cloud.sh(i);
    for (int c = 0; c < 3; ++c)
      sh[0][c] = next();
    for (int c = 0; c < 3; ++c)
      for (int k = 1; k < coeffs; ++k)
        sh[k][c] = next();
    cloud.hallucination_logits[i] = next();
  }
  cloud.validate();
  return cloud;
}

} // namespace deformsplat
