#include <fstream>
#include <iomanip>
#include <sstream>

#include "lpdesc/datagen.hpp"
#include "lpdesc/error.hpp"

namespace lpdesc {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<double> numbers(const std::string& key, const std::string& value, std::size_t count) {
  std::istringstream in(value);
  std::vector<double> out;
  double v;
  while (in >> v) out.push_back(v);
  if (!in.eof() || out.size() != count) {
    throw ValidationError("manifest key '" + key + "' needs " + std::to_string(count) + " numbers");
  }
  return out;
}

Eigen::Matrix3d matrix3(const std::string& key, const std::string& value) {
  const auto v = numbers(key, value, 9);
  Eigen::Matrix3d m;
  m << v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8];
  return m;
}

std::string format_matrix(const Eigen::Matrix3d& m) {
  std::ostringstream os;
  os << std::setprecision(17);
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) os << (r + c ? " " : "") << m(r, c);
  }
  return os.str();
}

}  // namespace

void write_correspondences(const std::filesystem::path& path, const CorrespondenceSet& set) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write correspondences " + path.string());
  out << "# idx_a idx_b scale_ratio orientation_residual_deg\n";
  out << "# provenance " << to_string(set.provenance) << "\n";
  out << std::setprecision(17);
  for (const Correspondence& c : set.items) {
    out << c.idx_a << ' ' << c.idx_b << ' ' << c.scale_ratio << ' ' << c.orientation_residual_deg << '\n';
  }
  if (!out) throw Error("failed writing correspondences " + path.string());
}

CorrespondenceSet read_correspondences(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open correspondences " + path.string());
  CorrespondenceSet set;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.rfind("# provenance ", 0) == 0) {
      set.provenance = parse_provenance(trim(line.substr(13)));
      continue;
    }
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    std::istringstream ls(t);
    long long a = -1, b = -1;
    Correspondence c;
    if (!(ls >> a >> b >> c.scale_ratio >> c.orientation_residual_deg) || a < 0 || b < 0 ||
        !(c.scale_ratio >= 1.0) || !(c.orientation_residual_deg >= 0.0)) {
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": malformed correspondence");
    }
    c.idx_a = static_cast<std::size_t>(a);
    c.idx_b = static_cast<std::size_t>(b);
    set.items.push_back(c);
  }
  return set;
}

PairManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open manifest " + path.string());
  const auto dir = path.parent_path();
  auto resolve = [&](const std::string& v) {
    const std::filesystem::path p(v);
    return p.is_absolute() ? p : dir / p;
  };
  PairManifest m;
  bool have_a = false, have_b = false, have_ka = false, have_kb = false;
  std::string line;
  while (std::getline(in, line)) {
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ValidationError("manifest line without '=': " + t);
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (key == "image_a") { m.image_a = resolve(value); have_a = true; }
    else if (key == "image_b") { m.image_b = resolve(value); have_b = true; }
    else if (key == "keypoints_a") { m.keypoints_a = resolve(value); have_ka = true; }
    else if (key == "keypoints_b") { m.keypoints_b = resolve(value); have_kb = true; }
    else if (key == "mask_a") m.mask_a = resolve(value);
    else if (key == "mask_b") m.mask_b = resolve(value);
    else if (key == "correspondences") m.correspondences = resolve(value);
    else if (key == "homography") m.homography = matrix3(key, value);
    else if (key == "depth_a") m.depth_a = resolve(value);
    else if (key == "depth_b") m.depth_b = resolve(value);
    else if (key == "k_a") m.k_a = matrix3(key, value);
    else if (key == "k_b") m.k_b = matrix3(key, value);
    else if (key == "rotation") m.rotation = matrix3(key, value);
    else if (key == "translation") {
      const auto v = numbers(key, value, 3);
      m.translation = Eigen::Vector3d(v[0], v[1], v[2]);
    } else if (key == "depth_tolerance") {
      m.depth_tolerance = numbers(key, value, 1)[0];
    } else {
      throw ValidationError("unknown manifest key '" + key + "' in " + path.string());
    }
  }
  if (!have_a || !have_b || !have_ka || !have_kb) {
    throw ValidationError("manifest " + path.string() + " must name image_a, image_b, keypoints_a, keypoints_b");
  }
  if (m.homography.has_value() == (m.depth_a.has_value() || m.depth_b.has_value())) {
    throw ValidationError("manifest " + path.string() + " needs either a homography or depth maps");
  }
  if (!m.homography && !(m.depth_a && m.depth_b)) {
    throw ValidationError("manifest " + path.string() + " needs both depth_a and depth_b");
  }
  return m;
}

void write_manifest(const std::filesystem::path& path, const PairManifest& m) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write manifest " + path.string());
  out << std::setprecision(17);
  out << "# lpdesc view pair\n";
  out << "image_a = " << m.image_a.string() << "\n";
  out << "image_b = " << m.image_b.string() << "\n";
  out << "keypoints_a = " << m.keypoints_a.string() << "\n";
  out << "keypoints_b = " << m.keypoints_b.string() << "\n";
  if (m.mask_a) out << "mask_a = " << m.mask_a->string() << "\n";
  if (m.mask_b) out << "mask_b = " << m.mask_b->string() << "\n";
  if (m.correspondences) out << "correspondences = " << m.correspondences->string() << "\n";
  if (m.homography) {
    out << "homography = " << format_matrix(*m.homography) << "\n";
  } else {
    out << "depth_a = " << m.depth_a.value().string() << "\n";
    out << "depth_b = " << m.depth_b.value().string() << "\n";
    out << "k_a = " << format_matrix(m.k_a) << "\n";
    out << "k_b = " << format_matrix(m.k_b) << "\n";
    out << "rotation = " << format_matrix(m.rotation) << "\n";
    out << "translation = " << m.translation.x() << ' ' << m.translation.y() << ' '
        << m.translation.z() << "\n";
    out << "depth_tolerance = " << m.depth_tolerance << "\n";
  }
  if (!out) throw Error("failed writing manifest " + path.string());
}

ViewPair load_view_pair(const PairManifest& m) {
  ViewPair pair;
  pair.image_a = read_image(m.image_a);
  pair.image_b = read_image(m.image_b);
  pair.keypoints_a = read_keypoints(m.keypoints_a);
  pair.keypoints_b = read_keypoints(m.keypoints_b);
  if (m.mask_a) pair.mask_a = read_image(*m.mask_a);
  if (m.mask_b) pair.mask_b = read_image(*m.mask_b);
  if (m.homography) {
    pair.mapping = Homography{*m.homography};
  } else {
    DepthMapping d;
    d.depth_a = read_image(*m.depth_a);
    d.depth_b = read_image(*m.depth_b);
    d.k_a = m.k_a;
    d.k_b = m.k_b;
    d.rotation = m.rotation;
    d.translation = m.translation;
    d.depth_tolerance = m.depth_tolerance;
    pair.mapping = std::move(d);
  }
  return pair;
}

std::filesystem::path write_view_pair(const std::filesystem::path& dir, const ViewPair& pair,
                                      const CorrespondenceSet& set) {
  std::filesystem::create_directories(dir);
  PairManifest m;
  m.image_a = "a.lpim";
  m.image_b = "b.lpim";
  m.keypoints_a = "a.kp";
  m.keypoints_b = "b.kp";
  m.correspondences = "correspondences.txt";
  write_image(dir / m.image_a, pair.image_a, ImageFormat::rawf32);
  write_image(dir / m.image_b, pair.image_b, ImageFormat::rawf32);
  write_keypoints(dir / m.keypoints_a, pair.keypoints_a);
  write_keypoints(dir / m.keypoints_b, pair.keypoints_b);
  write_correspondences(dir / *m.correspondences, set);
  if (pair.mask_a) {
    m.mask_a = "mask_a.lpim";
    write_image(dir / *m.mask_a, *pair.mask_a, ImageFormat::rawf32);
  }
  if (pair.mask_b) {
    m.mask_b = "mask_b.lpim";
    write_image(dir / *m.mask_b, *pair.mask_b, ImageFormat::rawf32);
  }
  if (const auto* h = std::get_if<Homography>(&pair.mapping)) {
    m.homography = h->h;
  } else {
    const auto& d = std::get<DepthMapping>(pair.mapping);
    m.depth_a = "depth_a.lpim";
    m.depth_b = "depth_b.lpim";
    write_image(dir / *m.depth_a, d.depth_a, ImageFormat::rawf32);
    write_image(dir / *m.depth_b, d.depth_b, ImageFormat::rawf32);
    m.k_a = d.k_a;
    m.k_b = d.k_b;
    m.rotation = d.rotation;
    m.translation = d.translation;
    m.depth_tolerance = d.depth_tolerance;
  }
  const auto path = dir / "manifest.txt";
  write_manifest(path, m);
  return path;
}

}  // namespace lpdesc
