#include "ddt/synthdata.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "ddt/errors.hpp"

namespace ddt {

namespace {

using Rgb = std::array<double, 3>;

constexpr std::array<Rgb, 4> kBackgrounds = {{
    {0.30, 0.35, 0.45},
    {0.40, 0.45, 0.30},
    {0.45, 0.30, 0.38},
    {0.25, 0.42, 0.42},
}};
constexpr Rgb kSkin = {0.85, 0.66, 0.52};
constexpr double kBaseNoise = 0.02;
// Coarse, low-contrast checks: big enough that domain B stays hard to reach
// zero-shot, not so big that the patch reads as flat.
constexpr int kCheckerCell = 7;
constexpr double kCheckerLow = 0.375;
constexpr double kCheckerHigh = 0.675;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::mt19937_64 stream(std::uint64_t seed, Split split, int pair, std::uint64_t purpose) {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ static_cast<std::uint64_t>(split));
  h = splitmix64(h ^ static_cast<std::uint64_t>(pair));
  h = splitmix64(h ^ purpose);
  return std::mt19937_64(h);
}

struct Face {
  double cx, cy, rx, ry;
};

Image render_base(const DomainSpec &spec, std::mt19937_64 &rng, Face &face) {
  const int n = spec.image_size;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, kBaseNoise);

  face.cx = n / 2.0 + (u(rng) - 0.5) * n / 8.0;
  face.cy = n / 2.0 + (u(rng) - 0.5) * n / 8.0;
  face.rx = n * (0.28 + 0.06 * u(rng));
  face.ry = n * (0.34 + 0.08 * u(rng));
  const double tone = 0.85 + 0.25 * u(rng);
  const Rgb &bg = kBackgrounds[static_cast<std::size_t>(spec.style.hue) % kBackgrounds.size()];

  Image img(n, n);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      const double dx = (x + 0.5 - face.cx) / face.rx;
      const double dy = (y + 0.5 - face.cy) / face.ry;
      const double weight = std::clamp(1.5 * (1.0 - (dx * dx + dy * dy)), 0.0, 1.0);
      for (int c = 0; c < Image::kChannels; ++c) {
        const double skin = std::min(1.0, kSkin[c] * tone);
        img.at(y, x, c) = bg[c] + (skin - bg[c]) * weight + noise(rng);
      }
    }
  return img;
}

void paste_artifact(const DomainSpec &spec, const Face &face, std::mt19937_64 &rng, Image &img) {
  const int n = spec.image_size;
  const int ps = patch_size(n);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  // Patch centre lies inside the inner half of the face ellipse.
  const double px = face.cx + u(rng) * face.rx;
  const double py = face.cy + u(rng) * face.ry;
  const int x0 = std::clamp(static_cast<int>(std::lround(px - ps / 2.0)), 0, n - ps);
  const int y0 = std::clamp(static_cast<int>(std::lround(py - ps / 2.0)), 0, n - ps);

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int phase = static_cast<int>(unit(rng) * 2.0);
  for (int y = y0; y < y0 + ps; ++y)
    for (int x = x0; x < x0 + ps; ++x) {
      if (spec.artifact == ArtifactKind::noise_patch) {
        for (int c = 0; c < Image::kChannels; ++c)
          img.at(y, x, c) = unit(rng);
      } else {
        const bool high = (((y - y0) / kCheckerCell + (x - x0) / kCheckerCell + phase) % 2) == 1;
        for (int c = 0; c < Image::kChannels; ++c)
          img.at(y, x, c) = high ? kCheckerHigh : kCheckerLow;
      }
    }
}

void apply_style(const DomainStyle &style, Image &img) {
  for (double &v : img.pixels)
    v = quantize8(std::clamp((v - 0.5) * style.contrast + 0.5 + style.brightness, 0.0, 1.0));
}

void read_exact(std::istream &in, char *dst, std::size_t n, const std::string &what) {
  in.read(dst, static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n)
    throw FormatError("truncated PPM data in " + what);
}

// Next whitespace-delimited header token, skipping '#' comments.
std::string ppm_token(std::istream &in, const std::string &what) {
  std::string token;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!token.empty())
        return token;
      continue;
    }
    token.push_back(static_cast<char>(ch));
  }
  throw FormatError("truncated PPM header in " + what);
}

int ppm_int(std::istream &in, const std::string &what) {
  const std::string tok = ppm_token(in, what);
  if (tok.empty() || !std::all_of(tok.begin(), tok.end(), [](char c) { return std::isdigit(c); }) ||
      tok.size() > 9)
    throw FormatError("bad PPM header field '" + tok + "' in " + what);
  return std::stoi(tok);
}

const char *kManifestHeader = "path\tlabel\tdomain\tsplit";

} // namespace

std::string to_string(ArtifactKind kind) {
  return kind == ArtifactKind::noise_patch ? "noise-patch" : "checkerboard-patch";
}

std::string to_string(Split split) {
  switch (split) {
  case Split::train:
    return "train";
  case Split::val:
    return "val";
  case Split::test:
    return "test";
  }
  return "?";
}

ArtifactKind parse_artifact(std::string_view text) {
  if (text == "noise-patch")
    return ArtifactKind::noise_patch;
  if (text == "checkerboard-patch")
    return ArtifactKind::checkerboard_patch;
  throw ConfigError("unknown artifact kind '" + std::string(text) + "'");
}

std::optional<Split> parse_split(std::string_view text) {
  if (text == "train")
    return Split::train;
  if (text == "val")
    return Split::val;
  if (text == "test")
    return Split::test;
  return std::nullopt;
}

void DomainSpec::validate() const {
  if (domain_id.empty() || domain_id.find_first_of("\t\n\r/") != std::string::npos)
    throw ConfigError("domain id must be non-empty without tabs, newlines or slashes");
  if (image_size < 16 || image_size % 2 != 0)
    throw ConfigError("image size must be even and >= 16, got " + std::to_string(image_size));
  if (per_class_train < 1 || per_class_test < 1 || per_class_val < 0)
    throw ConfigError("per-class train/test counts must be >= 1 and val >= 0");
  if (style.brightness < -0.2 || style.brightness > 0.2)
    throw ConfigError("brightness offset must lie in [-0.2, 0.2]");
  if (style.contrast < 0.8 || style.contrast > 1.2)
    throw ConfigError("contrast gain must lie in [0.8, 1.2]");
  if (style.hue < 0)
    throw ConfigError("hue index must be non-negative");
}

DomainSpec preset_domain(std::string_view preset, std::uint64_t seed, int per_class_train,
                         int per_class_test) {
  DomainSpec spec;
  spec.seed = seed;
  spec.per_class_train = per_class_train;
  spec.per_class_test = per_class_test;
  if (preset == "A") {
    spec.domain_id = "A";
    spec.artifact = ArtifactKind::noise_patch;
    spec.per_class_val = per_class_test;
  } else if (preset == "B") {
    spec.domain_id = "B";
    spec.artifact = ArtifactKind::checkerboard_patch;
    spec.style = {0.1, 1.1, 2};
    spec.per_class_val = 0;
  } else {
    throw ConfigError("unknown preset '" + std::string(preset) + "' (expected A or B)");
  }
  return spec;
}

std::vector<std::size_t> Dataset::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < samples.size(); ++i)
    if (samples[i].split == split)
      out.push_back(i);
  return out;
}

double quantize8(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

Dataset generate_domain(const DomainSpec &spec) {
  spec.validate();
  Dataset ds;
  const std::array<std::pair<Split, int>, 3> splits = {
      {{Split::train, spec.per_class_train},
       {Split::val, spec.per_class_val},
       {Split::test, spec.per_class_test}}};
  for (const auto &[split, pairs] : splits)
    for (int i = 0; i < pairs; ++i) {
      auto base_rng = stream(spec.seed, split, i, 1);
      auto patch_rng = stream(spec.seed, split, i, 2);
      Face face{};
      Image real = render_base(spec, base_rng, face);
      Image fake = real;
      paste_artifact(spec, face, patch_rng, fake);
      apply_style(spec.style, real);
      apply_style(spec.style, fake);
      ds.samples.push_back({std::move(real), 0, spec.domain_id, split});
      ds.samples.push_back({std::move(fake), 1, spec.domain_id, split});
    }
  return ds;
}

void write_ppm(const Image &image, const std::filesystem::path &path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw IoError("cannot write " + path.string());
  out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  std::string data(image.pixels.size(), '\0');
  for (std::size_t i = 0; i < image.pixels.size(); ++i)
    data[i] = static_cast<char>(
        static_cast<unsigned char>(std::lround(std::clamp(image.pixels[i], 0.0, 1.0) * 255.0)));
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out)
    throw IoError("write failed for " + path.string());
}

Image read_ppm(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw IoError("cannot open " + path.string());
  const std::string what = path.string();
  char magic[2];
  read_exact(in, magic, 2, what);
  if (magic[0] != 'P' || magic[1] != '6')
    throw FormatError("bad PPM magic in " + what + " (expected P6)");
  const int width = ppm_int(in, what);
  const int height = ppm_int(in, what);
  const int maxval = ppm_int(in, what);
  if (width < 1 || height < 1)
    throw FormatError("bad PPM dimensions in " + what);
  if (maxval != 255)
    throw FormatError("unsupported PPM maxval " + std::to_string(maxval) + " in " + what +
                      " (only 255)");

  Image img(height, width);
  std::string data(img.pixels.size(), '\0');
  read_exact(in, data.data(), data.size(), what);
  for (std::size_t i = 0; i < data.size(); ++i)
    img.pixels[i] = static_cast<unsigned char>(data[i]) / 255.0;
  return img;
}

std::filesystem::path write_dataset(const Dataset &ds, const std::filesystem::path &dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir / "images", ec);
  if (ec)
    throw IoError("cannot create " + (dir / "images").string() + ": " + ec.message());

  std::ostringstream manifest;
  manifest << kManifestHeader << '\n';
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const auto &s = ds.samples[i];
    char name[64];
    std::snprintf(name, sizeof(name), "%s_%06zu_%d.ppm", to_string(s.split).c_str(), i, s.label);
    const std::string rel = "images/" + std::string(name);
    write_ppm(s.image, dir / rel);
    manifest << rel << '\t' << s.label << '\t' << s.domain << '\t' << to_string(s.split) << '\n';
  }
  const auto path = dir / "index.tsv";
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw IoError("cannot write " + path.string());
  out << manifest.str();
  if (!out)
    throw IoError("write failed for " + path.string());
  return path;
}

Dataset load_dataset(const std::filesystem::path &dir) {
  const auto manifest_path = dir / "index.tsv";
  std::ifstream in(manifest_path, std::ios::binary);
  if (!in)
    throw IoError("cannot open manifest " + manifest_path.string());

  std::string line;
  if (!std::getline(in, line) || line != kManifestHeader)
    throw ManifestError("manifest header must be '" + std::string(kManifestHeader) + "'");

  Dataset ds;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty())
      continue;
    const std::string where = manifest_path.string() + " row " + std::to_string(row);
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, '\t'))
      fields.push_back(field);
    if (fields.size() != 4)
      throw ManifestError(where + ": expected 4 tab-separated fields");
    if (fields[1] != "0" && fields[1] != "1")
      throw ManifestError(where + ": label '" + fields[1] + "' not in {0,1}");
    const auto split = parse_split(fields[3]);
    if (!split)
      throw ManifestError(where + ": unknown split '" + fields[3] + "'");
    const auto image_path = dir / fields[0];
    if (!std::filesystem::is_regular_file(image_path))
      throw ManifestError(where + ": missing image file " + image_path.string());

    LabeledSample s{read_ppm(image_path), fields[1] == "1" ? 1 : 0, fields[2], *split};
    if (!ds.samples.empty() && (s.image.height != ds.samples.front().image.height ||
                                s.image.width != ds.samples.front().image.width))
      throw FormatError(where + ": image size differs from the rest of the dataset");
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

} // namespace ddt
