#include "forgeloc/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "forgeloc/errors.hpp"
#include "forgeloc/image_io.hpp"
#include "forgeloc/random.hpp"

namespace forgeloc {

namespace {

constexpr uint64_t kBaseTag = 0xBA5E;
constexpr uint64_t kForgeryTag = 0xF09E;
constexpr uint64_t kDonorTag = 0xD090;
constexpr uint64_t kFlipTag = 0xF11F;
constexpr uint64_t kManifestTag = 0x3A71;
constexpr int kMaxPlacementAttempts = 100;

/// Axis-aligned rectangle or inscribed ellipse.
struct Shape2d {
  int64_t y0 = 0, x0 = 0, h = 1, w = 1;
  bool ellipse = false;

  bool contains(int64_t y, int64_t x) const {
    if (y < y0 || y >= y0 + h || x < x0 || x >= x0 + w) return false;
    if (!ellipse) return true;
    const double dy = (static_cast<double>(y - y0) + 0.5) / static_cast<double>(h) - 0.5;
    const double dx = (static_cast<double>(x - x0) + 0.5) / static_cast<double>(w) - 0.5;
    return dy * dy + dx * dx <= 0.25;
  }
};

/// Random mask shape holding 4%..16% of the image, aspect ratio 0.6..1.6.
Shape2d random_shape(Rng& rng, int64_t height, int64_t width) {
  Shape2d s;
  s.ellipse = rng.bernoulli(0.5);
  const double frac = rng.uniform(0.04, 0.16);
  const double aspect = rng.uniform(0.6, 1.6);
  double area = frac * static_cast<double>(height * width);
  if (s.ellipse) area /= std::numbers::pi / 4.0;
  s.h = std::clamp<int64_t>(std::lround(std::sqrt(area / aspect)), 2, height - 2);
  s.w = std::clamp<int64_t>(std::lround(std::sqrt(area * aspect)), 2, width - 2);
  return s;
}

int64_t mask_area(const Shape2d& s) {
  int64_t n = 0;
  for (int64_t y = s.y0; y < s.y0 + s.h; ++y)
    for (int64_t x = s.x0; x < s.x0 + s.w; ++x) n += s.contains(y, x);
  return n;
}

bool area_ok(const Shape2d& s, int64_t height, int64_t width) {
  const double f = static_cast<double>(mask_area(s)) / static_cast<double>(height * width);
  return f >= 0.02 && f <= 0.40;
}

/// Places s uniformly inside [ylo, yhi) x [xlo, xhi); false when it does not fit.
bool place(Rng& rng, Shape2d& s, int64_t ylo, int64_t yhi, int64_t xlo, int64_t xhi) {
  if (yhi - ylo < s.h || xhi - xlo < s.w) return false;
  s.y0 = rng.range(ylo, yhi - s.h);
  s.x0 = rng.range(xlo, xhi - s.w);
  return true;
}

void check_size(int64_t height, int64_t width) {
  if (height < 32 || width < 32 || height % 32 != 0 || width % 32 != 0) {
    throw InputError("synthetic images need H and W divisible by 32, got " +
                     std::to_string(height) + "x" + std::to_string(width));
  }
}

/// Smooth content: per-channel linear gradient, a low-frequency wave and a
/// few blended shapes.
std::vector<float> render_content(Rng& rng, int64_t height, int64_t width) {
  std::vector<float> img(static_cast<size_t>(3 * height * width));
  std::array<double, 3> base, gx, gy;
  for (int c = 0; c < 3; ++c) {
    base[c] = rng.uniform(0.3, 0.7);
    gx[c] = rng.uniform(-0.3, 0.3);
    gy[c] = rng.uniform(-0.3, 0.3);
  }
  const double amp = rng.uniform(0.0, 0.08), fx = rng.uniform(0.3, 2.0), fy = rng.uniform(0.3, 2.0);
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  for (int64_t y = 0; y < height; ++y)
    for (int64_t x = 0; x < width; ++x) {
      const double u = static_cast<double>(x) / static_cast<double>(width) - 0.5;
      const double v = static_cast<double>(y) / static_cast<double>(height) - 0.5;
      const double wave = amp * std::sin(2.0 * std::numbers::pi * (fx * u + fy * v) + phase);
      for (int c = 0; c < 3; ++c)
        img[static_cast<size_t>((c * height + y) * width + x)] =
            static_cast<float>(base[c] + gx[c] * u + gy[c] * v + wave);
    }
  const int64_t shapes = rng.range(2, 4);
  for (int64_t k = 0; k < shapes; ++k) {
    Shape2d s;
    s.ellipse = rng.bernoulli(0.5);
    s.h = rng.range(height / 8, height / 2);
    s.w = rng.range(width / 8, width / 2);
    place(rng, s, 0, height, 0, width);
    std::array<double, 3> color;
    for (auto& c : color) c = rng.uniform(0.15, 0.85);
    const double alpha = rng.uniform(0.6, 1.0);
    for (int64_t y = s.y0; y < s.y0 + s.h; ++y)
      for (int64_t x = s.x0; x < s.x0 + s.w; ++x) {
        if (!s.contains(y, x)) continue;
        for (int c = 0; c < 3; ++c) {
          float& p = img[static_cast<size_t>((c * height + y) * width + x)];
          p = static_cast<float>((1.0 - alpha) * p + alpha * color[c]);
        }
      }
  }
  for (auto& p : img) p = std::clamp(p, 0.1f, 0.9f);
  return img;
}

}  // namespace

std::string to_string(ForgeryKind k) {
  switch (k) {
    case ForgeryKind::kCopyMove: return "copy_move";
    case ForgeryKind::kSplicing: return "splicing";
    case ForgeryKind::kRemoval: return "removal";
  }
  return "unknown";
}

ForgeryKind parse_forgery_kind(const std::string& name) {
  for (ForgeryKind k : all_forgery_kinds())
    if (to_string(k) == name) return k;
  throw ConfigError("unknown forgery kind '" + name + "' (expected copy_move, splicing or removal)");
}

std::vector<ForgeryKind> parse_forgery_kinds(const std::string& comma_separated) {
  std::vector<ForgeryKind> kinds;
  std::stringstream ss(comma_separated);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) kinds.push_back(parse_forgery_kind(item));
  if (kinds.empty()) throw ConfigError("no forgery kinds given");
  return kinds;
}

const std::vector<ForgeryKind>& all_forgery_kinds() {
  static const std::vector<ForgeryKind> kinds{ForgeryKind::kCopyMove, ForgeryKind::kSplicing,
                                              ForgeryKind::kRemoval};
  return kinds;
}

BaseImage generate_base_image(uint64_t seed, int64_t height, int64_t width) {
  check_size(height, width);
  Rng rng(hash_mix({seed, kBaseTag}));
  std::vector<float> clean = render_content(rng, height, width);
  NoiseLayout noise;
  noise.vertical = rng.bernoulli(0.5);
  const int64_t extent = noise.vertical ? width : height;
  noise.split = std::lround(rng.uniform(0.35, 0.65) * static_cast<double>(extent));
  const double low = rng.uniform(0.010, 0.016), high = low * rng.uniform(3.5, 5.0);
  const bool high_first = rng.bernoulli(0.5);
  noise.sigma = high_first ? std::array<double, 2>{high, low} : std::array<double, 2>{low, high};
  std::vector<float> noisy(clean.size());
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t y = 0; y < height; ++y)
      for (int64_t x = 0; x < width; ++x) {
        const size_t i = static_cast<size_t>((c * height + y) * width + x);
        noisy[i] = quantize8(static_cast<float>(clean[i] + rng.normal(0.0, noise.sigma[noise.region(y, x)])));
      }
  BaseImage b;
  b.clean = TensorF({3, height, width}, std::move(clean));
  b.image = TensorF({3, height, width}, std::move(noisy));
  b.noise = noise;
  return b;
}

ForgerySample apply_forgery(const BaseImage& base, ForgeryKind kind, uint64_t seed) {
  const int64_t height = base.image.dim(1), width = base.image.dim(2);
  Rng rng(hash_mix({seed, kForgeryTag, static_cast<uint64_t>(kind)}));
  std::vector<float> img(base.image.data().begin(), base.image.data().end());
  std::vector<float> mask(static_cast<size_t>(height * width), 0.0f);
  auto at = [&](int64_t c, int64_t y, int64_t x) -> float& {
    return img[static_cast<size_t>((c * height + y) * width + x)];
  };

  Shape2d dst;
  bool placed = false;
  for (int attempt = 0; attempt < kMaxPlacementAttempts && !placed; ++attempt) {
    dst = random_shape(rng, height, width);
    if (kind == ForgeryKind::kCopyMove) {
      // Source inside one noise region, destination inside the other.
      const int from = rng.bernoulli(0.5) ? 1 : 0;
      const NoiseLayout& n = base.noise;
      auto bounds = [&](int region, int64_t& ylo, int64_t& yhi, int64_t& xlo, int64_t& xhi) {
        ylo = 0, yhi = height, xlo = 0, xhi = width;
        int64_t& lo = n.vertical ? xlo : ylo;
        int64_t& hi = n.vertical ? xhi : yhi;
        if (region == 0) hi = n.split;
        else lo = n.split;
      };
      Shape2d src = dst;
      int64_t a, b, c, d;
      bounds(from, a, b, c, d);
      if (!place(rng, src, a, b, c, d)) continue;
      bounds(1 - from, a, b, c, d);
      if (!place(rng, dst, a, b, c, d)) continue;
      if (!area_ok(dst, height, width)) continue;
      const std::vector<float> before = img;
      for (int64_t y = 0; y < dst.h; ++y)
        for (int64_t x = 0; x < dst.w; ++x) {
          if (!dst.contains(dst.y0 + y, dst.x0 + x)) continue;
          for (int64_t ch = 0; ch < 3; ++ch)
            at(ch, dst.y0 + y, dst.x0 + x) =
                before[static_cast<size_t>((ch * height + src.y0 + y) * width + src.x0 + x)];
        }
      placed = true;
    } else if (kind == ForgeryKind::kSplicing) {
      if (!place(rng, dst, 0, height, 0, width) || !area_ok(dst, height, width)) continue;
      Shape2d src = dst;
      place(rng, src, 0, height, 0, width);
      const BaseImage donor = generate_base_image(hash_mix({seed, kDonorTag}), height, width);
      const double lo = std::min(base.noise.sigma[0], base.noise.sigma[1]);
      const double hi = std::max(base.noise.sigma[0], base.noise.sigma[1]);
      const double sigma = rng.bernoulli(0.5) ? lo * rng.uniform(0.0, 0.3) : hi * rng.uniform(2.2, 3.0);
      auto dc = donor.clean.data();
      for (int64_t y = 0; y < dst.h; ++y)
        for (int64_t x = 0; x < dst.w; ++x) {
          if (!dst.contains(dst.y0 + y, dst.x0 + x)) continue;
          for (int64_t ch = 0; ch < 3; ++ch) {
            const float v = dc[static_cast<size_t>((ch * height + src.y0 + y) * width + src.x0 + x)];
            at(ch, dst.y0 + y, dst.x0 + x) = quantize8(static_cast<float>(v + rng.normal(0.0, sigma)));
          }
        }
      placed = true;
    } else {
      if (!place(rng, dst, 0, height, 0, width) || !area_ok(dst, height, width)) continue;
      // Diffusion fill: hold the surrounding pixels fixed and relax the
      // region towards the average of its neighbours.
      for (int64_t ch = 0; ch < 3; ++ch) {
        double ring = 0;
        int64_t ring_n = 0;
        for (int64_t y = std::max<int64_t>(0, dst.y0 - 1); y < std::min(height, dst.y0 + dst.h + 1); ++y)
          for (int64_t x = std::max<int64_t>(0, dst.x0 - 1); x < std::min(width, dst.x0 + dst.w + 1); ++x)
            if (!dst.contains(y, x)) ring += at(ch, y, x), ++ring_n;
        const float fill = static_cast<float>(ring / static_cast<double>(std::max<int64_t>(ring_n, 1)));
        for (int64_t y = dst.y0; y < dst.y0 + dst.h; ++y)
          for (int64_t x = dst.x0; x < dst.x0 + dst.w; ++x)
            if (dst.contains(y, x)) at(ch, y, x) = fill;
        for (int iter = 0; iter < 200; ++iter) {
          for (int64_t y = dst.y0; y < dst.y0 + dst.h; ++y)
            for (int64_t x = dst.x0; x < dst.x0 + dst.w; ++x) {
              if (!dst.contains(y, x)) continue;
              double s = 0;
              int n = 0;
              if (y > 0) s += at(ch, y - 1, x), ++n;
              if (y + 1 < height) s += at(ch, y + 1, x), ++n;
              if (x > 0) s += at(ch, y, x - 1), ++n;
              if (x + 1 < width) s += at(ch, y, x + 1), ++n;
              at(ch, y, x) = static_cast<float>(s / n);
            }
        }
        for (int64_t y = dst.y0; y < dst.y0 + dst.h; ++y)
          for (int64_t x = dst.x0; x < dst.x0 + dst.w; ++x)
            if (dst.contains(y, x)) at(ch, y, x) = quantize8(at(ch, y, x));
      }
      placed = true;
    }
  }
  if (!placed) {
    throw GenerationError("could not place a " + to_string(kind) + " region after " +
                          std::to_string(kMaxPlacementAttempts) + " attempts");
  }
  for (int64_t y = dst.y0; y < dst.y0 + dst.h; ++y)
    for (int64_t x = dst.x0; x < dst.x0 + dst.w; ++x)
      if (dst.contains(y, x)) mask[static_cast<size_t>(y * width + x)] = 1.0f;

  ForgerySample s;
  s.image = TensorF({3, height, width}, std::move(img));
  s.mask = TensorF({1, height, width}, std::move(mask));
  s.kind = kind;
  s.seed = seed;
  return s;
}

ForgerySample make_sample(uint64_t seed, ForgeryKind kind, int64_t height, int64_t width) {
  return apply_forgery(generate_base_image(seed, height, width), kind, seed);
}

ForgerySample hflip(const ForgerySample& s) {
  auto flip = [](const TensorF& t) {
    const int64_t c = t.dim(0), h = t.dim(1), w = t.dim(2);
    auto d = t.data();
    std::vector<float> out(d.size());
    for (int64_t k = 0; k < c * h; ++k)
      for (int64_t x = 0; x < w; ++x) out[static_cast<size_t>(k * w + x)] = d[static_cast<size_t>(k * w + w - 1 - x)];
    return TensorF(t.shape(), std::move(out));
  };
  ForgerySample r = s;
  r.image = flip(s.image);
  r.mask = flip(s.mask);
  return r;
}

ForgerySample augment(const ForgerySample& s, uint64_t seed, bool training) {
  if (!training) return s;
  Rng rng(hash_mix({seed, kFlipTag}));
  return rng.bernoulli(0.5) ? hflip(s) : s;
}

std::string to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "unknown";
}

Split parse_split(const std::string& name) {
  for (Split s : {Split::kTrain, Split::kVal, Split::kTest})
    if (to_string(s) == name) return s;
  throw ConfigError("unknown split '" + name + "' (expected train, val or test)");
}

const std::vector<ManifestEntry>& DatasetManifest::split(Split s) const {
  switch (s) {
    case Split::kTrain: return train;
    case Split::kVal: return val;
    case Split::kTest: return test;
  }
  return train;
}

nlohmann::json DatasetManifest::to_json() const {
  using nlohmann::json;
  json kinds_json = json::array();
  for (ForgeryKind k : kinds) kinds_json.push_back(to_string(k));
  json splits = json::object();
  for (Split s : {Split::kTrain, Split::kVal, Split::kTest}) {
    json list = json::array();
    for (const auto& e : split(s)) list.push_back({{"id", e.id}, {"seed", e.seed}, {"kind", to_string(e.kind)}});
    splits[to_string(s)] = list;
  }
  return json{{"global_seed", global_seed}, {"height", height}, {"width", width},
              {"ratio", ratio},             {"kinds", kinds_json}, {"splits", splits},
              {"counts", {{"train", train.size()}, {"val", val.size()}, {"test", test.size()}}}};
}

DatasetManifest DatasetManifest::from_json(const nlohmann::json& j) {
  DatasetManifest m;
  try {
    m.global_seed = j.at("global_seed").get<uint64_t>();
    m.height = j.at("height").get<int64_t>();
    m.width = j.at("width").get<int64_t>();
    m.ratio = j.at("ratio").get<std::array<int64_t, 3>>();
    for (const auto& k : j.at("kinds")) m.kinds.push_back(parse_forgery_kind(k.get<std::string>()));
    for (Split s : {Split::kTrain, Split::kVal, Split::kTest}) {
      auto& list = s == Split::kTrain ? m.train : (s == Split::kVal ? m.val : m.test);
      for (const auto& e : j.at("splits").at(to_string(s))) {
        list.push_back({e.at("id").get<std::string>(), e.at("seed").get<uint64_t>(),
                        parse_forgery_kind(e.at("kind").get<std::string>())});
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed manifest: ") + e.what());
  }
  return m;
}

DatasetManifest build_manifest(int64_t n, uint64_t global_seed, int64_t height, int64_t width,
                               std::vector<ForgeryKind> kinds, std::array<int64_t, 3> ratio) {
  if (n < 10) throw ConfigError("a dataset needs at least 10 samples, got " + std::to_string(n));
  check_size(height, width);
  if (kinds.empty()) kinds = all_forgery_kinds();
  const int64_t total = ratio[0] + ratio[1] + ratio[2];
  if (ratio[0] < 0 || ratio[1] < 0 || ratio[2] < 0 || total <= 0) throw ConfigError("invalid split ratio");
  DatasetManifest m;
  m.global_seed = global_seed;
  m.height = height;
  m.width = width;
  m.ratio = ratio;
  m.kinds = kinds;
  std::vector<ManifestEntry> all;
  for (int64_t i = 0; i < n; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "s%05lld", static_cast<long long>(i));
    all.push_back({id, hash_mix({global_seed, static_cast<uint64_t>(i)}),
                   kinds[static_cast<size_t>(i) % kinds.size()]});
  }
  Rng rng(hash_mix({global_seed, kManifestTag}));
  for (size_t i = all.size() - 1; i > 0; --i)
    std::swap(all[i], all[static_cast<size_t>(rng.below(static_cast<int64_t>(i) + 1))]);
  const auto n_train = std::lround(static_cast<double>(n * ratio[0]) / static_cast<double>(total));
  const auto n_val = std::lround(static_cast<double>(n * ratio[1]) / static_cast<double>(total));
  m.train.assign(all.begin(), all.begin() + n_train);
  m.val.assign(all.begin() + n_train, all.begin() + n_train + n_val);
  m.test.assign(all.begin() + n_train + n_val, all.end());
  return m;
}

std::vector<ForgerySample> generate_split(const DatasetManifest& m, Split s) {
  std::vector<ForgerySample> out;
  for (const auto& e : m.split(s)) out.push_back(make_sample(e.seed, e.kind, m.height, m.width));
  return out;
}

void write_dataset(const DatasetManifest& m, const std::string& root) {
  namespace fs = std::filesystem;
  for (Split s : {Split::kTrain, Split::kVal, Split::kTest}) {
    const fs::path dir = fs::path(root) / to_string(s);
    fs::create_directories(dir);
    for (const auto& e : m.split(s)) {
      ForgerySample sample = make_sample(e.seed, e.kind, m.height, m.width);
      write_png((dir / (e.id + "_img.png")).string(), tensor_to_image(sample.image));
      write_png((dir / (e.id + "_mask.png")).string(), tensor_to_image(sample.mask));
    }
  }
  std::ofstream out(fs::path(root) / "manifest.json");
  if (!out) throw IoError("cannot write manifest in " + root);
  out << m.to_json().dump(2) << '\n';
}

DatasetManifest read_manifest(const std::string& root) {
  const auto path = std::filesystem::path(root) / "manifest.json";
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return DatasetManifest::from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError("cannot parse " + path.string() + ": " + e.what());
  }
}

std::vector<ForgerySample> load_split(const std::string& root, const DatasetManifest& m, Split s) {
  namespace fs = std::filesystem;
  std::vector<ForgerySample> out;
  const fs::path dir = fs::path(root) / to_string(s);
  for (const auto& e : m.split(s)) {
    ForgerySample sample;
    sample.image = image_to_tensor(read_png((dir / (e.id + "_img.png")).string(), 3));
    TensorF mask = image_to_tensor(read_png((dir / (e.id + "_mask.png")).string(), 1));
    for (auto& v : mask.data_mut()) v = v >= 0.5f ? 1.0f : 0.0f;
    sample.mask = mask;
    sample.kind = e.kind;
    sample.seed = e.seed;
    if (sample.image.dim(1) != m.height || sample.image.dim(2) != m.width ||
        sample.mask.dim(1) != m.height || sample.mask.dim(2) != m.width) {
      throw InputError("sample " + e.id + " does not match the manifest size");
    }
    out.push_back(std::move(sample));
  }
  return out;
}

}  // namespace forgeloc
