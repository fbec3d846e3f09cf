#include "avh/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>

#include <openssl/evp.h>
#include <png.h>

namespace avh {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

// Writers create missing parent directories.
FilePtr open_file(const fs::path& path, const char* mode) {
  if (mode[0] == 'w' && path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  FilePtr f(std::fopen(path.string().c_str(), mode));
  if (!f) throw IoError("cannot open " + path.string());
  return f;
}

// Resolves a 1-based (or negative, relative) OBJ index.
int resolve_index(long idx, std::size_t count, const char* what, int line) {
  long r = idx > 0 ? idx - 1 : static_cast<long>(count) + idx;
  if (idx == 0 || r < 0 || r >= static_cast<long>(count)) {
    throw IoError("obj line " + std::to_string(line) + ": " + what + " index " + std::to_string(idx) + " out of range");
  }
  return static_cast<int>(r);
}

std::string fmt_num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace

TriMesh read_obj(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());

  TriMesh mesh;
  std::vector<Vec2> texcoords;
  std::vector<Vec3> normals;
  std::vector<int> vertex_normal_ref;
  bool any_uv = false;
  bool missing_uv = false;
  std::string mtllib;

  struct Corner {
    int v, vt, vn;
  };

  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ss(line);
    std::string tag;
    if (!(ss >> tag) || tag[0] == '#') continue;
    if (tag == "v") {
      Vec3 p;
      if (!(ss >> p.x() >> p.y() >> p.z())) throw IoError("obj line " + std::to_string(line_no) + ": bad vertex");
      mesh.vertices.push_back(p);
    } else if (tag == "vt") {
      Vec2 t;
      if (!(ss >> t.x() >> t.y())) throw IoError("obj line " + std::to_string(line_no) + ": bad texcoord");
      texcoords.push_back(t);
    } else if (tag == "vn") {
      Vec3 n;
      if (!(ss >> n.x() >> n.y() >> n.z())) throw IoError("obj line " + std::to_string(line_no) + ": bad normal");
      normals.push_back(n);
    } else if (tag == "f") {
      std::vector<Corner> poly;
      std::string tok;
      while (ss >> tok) {
        Corner c{-1, -1, -1};
        long parts[3] = {0, 0, 0};
        bool present[3] = {false, false, false};
        std::size_t start = 0;
        for (int k = 0; k < 3 && start <= tok.size(); ++k) {
          const std::size_t slash = tok.find('/', start);
          const std::string piece = tok.substr(start, slash == std::string::npos ? std::string::npos : slash - start);
          if (!piece.empty()) {
            parts[k] = std::stol(piece);
            present[k] = true;
          }
          if (slash == std::string::npos) break;
          start = slash + 1;
        }
        if (!present[0]) throw IoError("obj line " + std::to_string(line_no) + ": face corner without vertex");
        c.v = resolve_index(parts[0], mesh.vertices.size(), "vertex", line_no);
        if (present[1]) c.vt = resolve_index(parts[1], texcoords.size(), "texcoord", line_no);
        if (present[2]) c.vn = resolve_index(parts[2], normals.size(), "normal", line_no);
        poly.push_back(c);
      }
      if (poly.size() < 3) throw IoError("obj line " + std::to_string(line_no) + ": face with fewer than 3 corners");
      for (std::size_t k = 1; k + 1 < poly.size(); ++k) {
        const Corner tri[3] = {poly[0], poly[k], poly[k + 1]};
        mesh.faces.push_back({tri[0].v, tri[1].v, tri[2].v});
        FaceUv uv;
        for (int j = 0; j < 3; ++j) {
          if (tri[j].vt >= 0) {
            uv[j] = texcoords[tri[j].vt];
            any_uv = true;
          } else {
            uv[j] = Vec2::Zero();
            missing_uv = true;
          }
          if (tri[j].vn >= 0) {
            if (vertex_normal_ref.size() < mesh.vertices.size()) vertex_normal_ref.resize(mesh.vertices.size(), -1);
            if (vertex_normal_ref[tri[j].v] < 0) vertex_normal_ref[tri[j].v] = tri[j].vn;
          }
        }
        mesh.uv_corners.push_back(uv);
      }
    } else if (tag == "mtllib") {
      std::getline(ss >> std::ws, mtllib);
    }
    // Other records (o, g, s, usemtl, l, p) are ignored.
  }

  if (!any_uv || missing_uv) {
    if (any_uv && missing_uv) throw IoError(path.string() + ": some face corners lack texcoords");
    mesh.uv_corners.clear();
  }
  mesh.validate();

  vertex_normal_ref.resize(mesh.vertices.size(), -1);
  const bool all_normals = !mesh.vertices.empty() &&
                           std::all_of(vertex_normal_ref.begin(), vertex_normal_ref.end(), [](int r) { return r >= 0; });
  if (all_normals) {
    mesh.vertex_normals.resize(mesh.vertices.size());
    for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
      const Vec3 n = normals[vertex_normal_ref[i]];
      const double len = n.norm();
      mesh.vertex_normals[i] = len > 0 ? Vec3(n / len) : Vec3::Zero();
    }
  } else if (!mesh.faces.empty()) {
    mesh = compute_normals(std::move(mesh));
  }

  if (!mtllib.empty()) {
    const fs::path mtl_path = path.parent_path() / mtllib;
    std::ifstream mtl(mtl_path);
    if (!mtl) throw IoError("cannot open material library " + mtl_path.string());
    std::string mline;
    while (std::getline(mtl, mline)) {
      std::istringstream ms(mline);
      std::string key;
      if (!(ms >> key)) continue;
      if (key == "map_Kd") {
        std::string tex;
        std::getline(ms >> std::ws, tex);
        if (!tex.empty() && tex.back() == '\r') tex.pop_back();
        mesh.texture = read_png(mtl_path.parent_path() / tex);
        break;
      }
    }
  }
  return mesh;
}

void write_obj(const TriMesh& mesh, const fs::path& path, const std::string& texture_name) {
  mesh.validate();
  std::string out;
  out.reserve(mesh.vertices.size() * 64 + mesh.faces.size() * 96);
  const bool with_texture = mesh.texture.has_value() && !texture_name.empty();
  if (with_texture) {
    const std::string stem = path.stem().string();
    out += "mtllib " + stem + ".mtl\nusemtl material0\n";
    write_text_file(path.parent_path() / (stem + ".mtl"),
                    "newmtl material0\nKa 1 1 1\nKd 1 1 1\nKs 0 0 0\nmap_Kd " + texture_name + "\n");
    write_png(*mesh.texture, path.parent_path() / texture_name);
  }
  for (const auto& v : mesh.vertices) {
    out += "v " + fmt_num(v.x()) + " " + fmt_num(v.y()) + " " + fmt_num(v.z()) + "\n";
  }
  const bool uvs = mesh.has_uvs();
  if (uvs) {
    for (const auto& f : mesh.uv_corners) {
      for (const auto& t : f) out += "vt " + fmt_num(t.x()) + " " + fmt_num(t.y()) + "\n";
    }
  }
  const bool normals = mesh.has_normals();
  if (normals) {
    for (const auto& n : mesh.vertex_normals) {
      out += "vn " + fmt_num(n.x()) + " " + fmt_num(n.y()) + " " + fmt_num(n.z()) + "\n";
    }
  }
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    out += "f";
    for (int k = 0; k < 3; ++k) {
      const int v = mesh.faces[f][k] + 1;
      out += " " + std::to_string(v);
      if (uvs || normals) {
        out += "/";
        if (uvs) out += std::to_string(f * 3 + k + 1);
        if (normals) out += "/" + std::to_string(v);
      }
    }
    out += "\n";
  }
  write_text_file(path, out);
}

RgbImage read_png(const fs::path& path) {
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.string().c_str())) {
    throw IoError("cannot read PNG " + path.string() + ": " + img.message);
  }
  img.format = PNG_FORMAT_RGB;
  RgbImage out(static_cast<int>(img.width), static_cast<int>(img.height));
  if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
    png_image_free(&img);
    throw IoError("cannot decode PNG " + path.string() + ": " + img.message);
  }
  return out;
}

void write_png(const RgbImage& image, const fs::path& path) {
  if (image.empty()) throw IoError("write_png: empty image");
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.string().c_str(), 0, image.pixels.data(), 0, nullptr)) {
    throw IoError("cannot write PNG " + path.string() + ": " + img.message);
  }
}

RgbImage grid_to_image(const FloatGrid& grid, float lo, float hi) {
  RgbImage img(grid.width, grid.height);
  const float span = hi - lo;
  for (int y = 0; y < grid.height; ++y) {
    for (int x = 0; x < grid.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        const float v = grid.at(x, y, grid.channels >= 3 ? c : 0);
        const float t = span > 0 ? (v - lo) / span : 0.0f;
        img.at(x, y, c) = static_cast<std::uint8_t>(std::lround(std::clamp(t, 0.0f, 1.0f) * 255.0f));
      }
    }
  }
  return img;
}

FloatGrid image_to_grid(const RgbImage& image) {
  FloatGrid g(image.width, image.height, 3);
  for (std::size_t i = 0; i < image.pixels.size(); ++i) g.data[i] = image.pixels[i] / 255.0f;
  return g;
}

void write_pfm(const FloatGrid& grid, const fs::path& path) {
  if (grid.channels != 1 && grid.channels != 3) throw IoError("write_pfm: PFM supports 1 or 3 channels");
  auto f = open_file(path, "wb");
  const std::string header = std::string(grid.channels == 3 ? "PF" : "Pf") + "\n" + std::to_string(grid.width) +
                             " " + std::to_string(grid.height) + "\n-1.0\n";
  std::fwrite(header.data(), 1, header.size(), f.get());
  const std::size_t row = static_cast<std::size_t>(grid.width) * grid.channels;
  for (int y = grid.height - 1; y >= 0; --y) {
    std::fwrite(grid.data.data() + static_cast<std::size_t>(y) * row, sizeof(float), row, f.get());
  }
  if (std::ferror(f.get())) throw IoError("write failed: " + path.string());
}

FloatGrid read_pfm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string magic;
  int w = 0;
  int h = 0;
  double scale = 0;
  in >> magic >> w >> h >> scale;
  in.get();  // single whitespace byte before the raster
  if ((magic != "PF" && magic != "Pf") || w <= 0 || h <= 0 || !in) throw IoError("bad PFM header in " + path.string());
  if (scale >= 0) throw IoError("big-endian PFM not supported: " + path.string());
  const int channels = magic == "PF" ? 3 : 1;
  FloatGrid grid(w, h, channels);
  const std::size_t row = static_cast<std::size_t>(w) * channels;
  for (int y = h - 1; y >= 0; --y) {
    in.read(reinterpret_cast<char*>(grid.data.data() + static_cast<std::size_t>(y) * row),
            static_cast<std::streamsize>(row * sizeof(float)));
  }
  if (!in) throw IoError("truncated PFM " + path.string());
  return grid;
}

std::vector<float> read_f32_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw IoError("cannot open " + path.string());
  const auto size = static_cast<std::size_t>(in.tellg());
  if (size % sizeof(float) != 0) throw IoError(path.string() + ": size is not a multiple of 4");
  std::vector<float> out(size / sizeof(float));
  in.seekg(0);
  in.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(size));
  if (!in) throw IoError("read failed: " + path.string());
  return out;
}

void write_f32_file(std::span<const float> values, const fs::path& path) {
  auto f = open_file(path, "wb");
  std::fwrite(values.data(), sizeof(float), values.size(), f.get());
  if (std::ferror(f.get())) throw IoError("write failed: " + path.string());
}

std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const fs::path& path, const std::string& text) {
  auto f = open_file(path, "wb");
  std::fwrite(text.data(), 1, text.size(), f.get());
  if (std::ferror(f.get())) throw IoError("write failed: " + path.string());
}

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr)) {
    throw IoError("sha256 failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 15];
  }
  return out;
}

std::string sha256_hex(const std::string& text) {
  return sha256_hex(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string sha256_file(const fs::path& path) { return sha256_hex(read_text_file(path)); }

}  // namespace avh
