#include "trfs/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace trfs {

namespace {
const char* kClassNames[kNumClasses] = {
    "circle", "square", "triangle", "cross",   "ring",    "h-bar",
    "v-bar",  "diamond", "L-shape",  "T-shape", "U-shape", "dot-grid"};
} // namespace

const char* shape_class_name(int class_id) {
    if (class_id < 0 || class_id >= kNumClasses)
        throw TrfsError("shape_class_name: bad class id");
    return kClassNames[class_id];
}

bool shape_contains(const SceneShape& s, double y, double x) {
    const double dx = x - s.cx;
    const double dy = y - s.cy;
    const double r = s.size;
    const double t = 0.45 * r; // bar half-thickness for composite shapes
    switch (s.class_id) {
        case 0: // circle
            return dx * dx + dy * dy <= r * r;
        case 1: // square
            return std::abs(dx) <= r && std::abs(dy) <= r;
        case 2: { // upward triangle
            if (dy < -r || dy > r) return false;
            const double half_w = r * (dy + r) / (2.0 * r);
            return std::abs(dx) <= half_w;
        }
        case 3: // cross
            return (std::abs(dx) <= t && std::abs(dy) <= r) ||
                   (std::abs(dy) <= t && std::abs(dx) <= r);
        case 4: { // ring
            const double d2 = dx * dx + dy * dy;
            const double inner = 0.45 * r;
            return d2 <= r * r && d2 >= inner * inner;
        }
        case 5: // h-bar
            return std::abs(dy) <= 0.5 * r && std::abs(dx) <= r;
        case 6: // v-bar
            return std::abs(dx) <= 0.5 * r && std::abs(dy) <= r;
        case 7: // diamond
            return std::abs(dx) + std::abs(dy) <= r;
        case 8: // L-shape: left vertical + bottom horizontal
            return (dx >= -r && dx <= -r + 2.0 * t && std::abs(dy) <= r) ||
                   (dy >= r - 2.0 * t && dy <= r && std::abs(dx) <= r);
        case 9: // T-shape: top horizontal + center vertical
            return (dy >= -r && dy <= -r + 2.0 * t && std::abs(dx) <= r) ||
                   (std::abs(dx) <= t && std::abs(dy) <= r);
        case 10: // U-shape: two verticals + bottom
            return ((std::abs(dx) >= r - 2.0 * t && std::abs(dx) <= r &&
                     std::abs(dy) <= r) ||
                    (dy >= r - 2.0 * t && dy <= r && std::abs(dx) <= r));
        case 11: { // dot-grid: 2x2 discs
            const double off = 0.58 * r;
            const double dr = 0.40 * r;
            for (double oy : {-off, off})
                for (double ox : {-off, off}) {
                    const double ddx = dx - ox, ddy = dy - oy;
                    if (ddx * ddx + ddy * ddy <= dr * dr) return true;
                }
            return false;
        }
        default:
            throw TrfsError("shape_contains: bad class id");
    }
}

namespace {
SceneShape draw_shape(int class_id, Rng& rng, std::size_t h, std::size_t w) {
    const double dim = static_cast<double>(std::min(h, w));
    // Per-class half-extent ranges (fraction of the short image side), chosen
    // so the thinnest structural feature of every class stays wide relative
    // to the stride-8 feature grid while the foreground fraction stays in
    // [0.02, 0.5]. Compact classes (circle/square) cap lower to respect the
    // area bound; composite classes need larger extents so their arms, rings,
    // and dots remain resolvable.
    static constexpr double kLo[kNumClasses] = {
        0.32, 0.28, 0.36, 0.34, 0.36, 0.38, 0.38, 0.36, 0.34, 0.34, 0.30, 0.40};
    static constexpr double kHi[kNumClasses] = {
        0.38, 0.34, 0.42, 0.40, 0.42, 0.44, 0.44, 0.42, 0.40, 0.40, 0.36, 0.46};
    const double lo = kLo[class_id], hi = kHi[class_id];
    SceneShape s;
    s.class_id = class_id;
    // The clamp keeps the placement interval valid on the smallest legal
    // images (32x32), where the largest classes would otherwise not fit.
    s.size = std::min(rng.uniform(lo * dim, hi * dim), 0.5 * (dim - 4.0));
    s.cx = rng.uniform(s.size + 1.0, static_cast<double>(w) - s.size - 2.0);
    s.cy = rng.uniform(s.size + 1.0, static_cast<double>(h) - s.size - 2.0);
    // Class-consistent appearance: each class owns a hue band (with jitter)
    // so that, as with natural categories, instances of a class look alike
    // and support exemplars are predictive of the query's appearance.
    const double hue =
        std::fmod(static_cast<double>(class_id) / kNumClasses +
                      rng.uniform(-0.005, 0.005) + 1.0,
                  1.0);
    const double sat = rng.uniform(0.9, 1.0);
    const double val = rng.uniform(0.85, 1.0);
    const double k = hue * 6.0;
    const int sec = static_cast<int>(k) % 6;
    const double fr = k - std::floor(k);
    const double p0 = val * (1.0 - sat);
    const double q0 = val * (1.0 - sat * fr);
    const double t0 = val * (1.0 - sat * (1.0 - fr));
    switch (sec) {
        case 0: s.color = {val, t0, p0}; break;
        case 1: s.color = {q0, val, p0}; break;
        case 2: s.color = {p0, val, t0}; break;
        case 3: s.color = {p0, q0, val}; break;
        case 4: s.color = {t0, p0, val}; break;
        default: s.color = {val, p0, q0}; break;
    }
    return s;
}
} // namespace

SceneSpec make_scene_spec(int class_id, std::uint64_t seed, std::size_t height,
                          std::size_t width) {
    if (class_id < 0 || class_id >= kNumClasses)
        throw TrfsError("make_scene_spec: bad class id");
    if (height < 32 || width < 32)
        throw SizeTooSmall("make_scene_spec: size must be at least 32x32");

    Rng rng(hash_combine(hash_combine(static_cast<std::uint64_t>(class_id), seed),
                         hash_combine(height, width)));
    SceneSpec spec;
    spec.class_id = class_id;
    spec.height = height;
    spec.width = width;
    for (double& c : spec.bg_color) c = rng.uniform(0.0, 0.03);
    spec.noise_amp = 0.005;
    spec.noise_seed = rng.next_u64();

    spec.target = draw_shape(class_id, rng, height, width);

    // Distractors are clutter, not occluders: drawn at reduced scale and
    // rejection-sampled away from the target so the target's boundary pixels
    // stay unpolluted. After the retry budget the last draw is kept.
    const std::size_t n_distractors = rng.uniform_int(4); // 0..3
    for (std::size_t i = 0; i < n_distractors; ++i) {
        int other = static_cast<int>(rng.uniform_int(kNumClasses - 1));
        if (other >= class_id) ++other;
        SceneShape d;
        for (int attempt = 0; attempt < 16; ++attempt) {
            d = draw_shape(other, rng, height, width);
            d.size *= 0.5;
            const double dx = d.cx - spec.target.cx;
            const double dy = d.cy - spec.target.cy;
            if (std::sqrt(dx * dx + dy * dy) >
                0.95 * (spec.target.size + d.size))
                break;
        }
        spec.distractors.push_back(d);
    }
    return spec;
}

Scene render_scene(const SceneSpec& spec) {
    const std::size_t h = spec.height, w = spec.width;
    std::vector<double> img(h * w * 3);
    std::vector<double> mask(h * w, 0.0);

    Rng noise(spec.noise_seed);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t c = 0; c < 3; ++c)
                img[(y * w + x) * 3 + c] = std::clamp(
                    spec.bg_color[c] + spec.noise_amp * (2.0 * noise.uniform() - 1.0),
                    0.0, 1.0);

    auto paint = [&](const SceneShape& s) {
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x)
                if (shape_contains(s, static_cast<double>(y),
                                   static_cast<double>(x)))
                    for (std::size_t c = 0; c < 3; ++c)
                        img[(y * w + x) * 3 + c] = s.color[c];
    };
    for (const SceneShape& d : spec.distractors) paint(d);
    paint(spec.target);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            if (shape_contains(spec.target, static_cast<double>(y),
                               static_cast<double>(x)))
                mask[y * w + x] = 1.0;

    return {Tensor({h, w, 3}, std::move(img)), Tensor({h, w}, std::move(mask))};
}

Scene render_scene(int class_id, std::uint64_t seed, std::size_t height,
                   std::size_t width) {
    return render_scene(make_scene_spec(class_id, seed, height, width));
}

std::array<FoldSplit, 4> make_folds() {
    std::array<FoldSplit, 4> folds;
    for (int f = 0; f < 4; ++f) {
        folds[f].fold_index = f;
        for (int c = 0; c < kNumClasses; ++c) {
            if (c / 3 == f)
                folds[f].test_classes.push_back(c);
            else
                folds[f].train_classes.push_back(c);
        }
    }
    return folds;
}

Tensor downsample_mask_nearest(const Tensor& mask, std::size_t out_h,
                               std::size_t out_w) {
    if (mask.rank() != 2) throw ShapeMismatch("downsample_mask_nearest: rank");
    const std::size_t h = mask.extent(0), w = mask.extent(1);
    std::vector<double> out(out_h * out_w);
    for (std::size_t y = 0; y < out_h; ++y) {
        const std::size_t sy = std::min(
            h - 1, static_cast<std::size_t>((static_cast<double>(y) + 0.5) * h /
                                            static_cast<double>(out_h)));
        for (std::size_t x = 0; x < out_w; ++x) {
            const std::size_t sx = std::min(
                w - 1,
                static_cast<std::size_t>((static_cast<double>(x) + 0.5) * w /
                                         static_cast<double>(out_w)));
            out[y * out_w + x] = mask.at(sy * w + sx) > 0.5 ? 1.0 : 0.0;
        }
    }
    return Tensor({out_h, out_w}, std::move(out));
}

namespace {
bool mask_nonempty_at_stride(const Tensor& mask, std::size_t stride) {
    const std::size_t h = mask.extent(0) / stride;
    const std::size_t w = mask.extent(1) / stride;
    const Tensor small = downsample_mask_nearest(mask, h, w);
    for (double v : small.data())
        if (v > 0.5) return true;
    return false;
}

Scene hflip(const Scene& s) {
    const std::size_t h = s.image.extent(0), w = s.image.extent(1);
    std::vector<double> img(h * w * 3), mask(h * w);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            for (std::size_t c = 0; c < 3; ++c)
                img[(y * w + x) * 3 + c] = s.image.at((y * w + (w - 1 - x)) * 3 + c);
            mask[y * w + x] = s.mask.at(y * w + (w - 1 - x));
        }
    return {Tensor({h, w, 3}, std::move(img)), Tensor({h, w}, std::move(mask))};
}
} // namespace

Episode sample_episode(const FoldSplit& split, EpisodeMode mode, std::size_t k,
                       std::uint64_t seed, std::size_t image_size,
                       std::size_t feature_stride) {
    if (k < 1) throw TrfsError("sample_episode: K must be >= 1");
    const std::vector<int>& classes =
        mode == EpisodeMode::Train ? split.train_classes : split.test_classes;

    Rng rng(hash_combine(
        hash_combine(static_cast<std::uint64_t>(split.fold_index),
                     mode == EpisodeMode::Train ? 0x7472ULL : 0x7465ULL),
        hash_combine(k, seed)));

    const int class_id = classes[rng.uniform_int(classes.size())];

    for (int attempt = 0; attempt < 1000; ++attempt) {
        std::vector<std::uint64_t> scene_seeds;
        while (scene_seeds.size() < k + 1) {
            const std::uint64_t s = rng.next_u64();
            if (std::find(scene_seeds.begin(), scene_seeds.end(), s) ==
                scene_seeds.end())
                scene_seeds.push_back(s);
        }

        std::vector<Scene> scenes;
        scenes.reserve(k + 1);
        bool ok = true;
        for (std::size_t i = 0; i < k + 1 && ok; ++i) {
            Scene sc = render_scene(class_id, scene_seeds[i], image_size,
                                    image_size);
            if (mode == EpisodeMode::Train && rng.bernoulli(0.5)) sc = hflip(sc);
            if (!mask_nonempty_at_stride(sc.mask, feature_stride)) ok = false;
            scenes.push_back(std::move(sc));
        }
        if (!ok) continue;

        Episode ep;
        ep.query_image = scenes[0].image;
        ep.query_mask = scenes[0].mask;
        for (std::size_t i = 1; i < k + 1; ++i) {
            ep.support_images.push_back(scenes[i].image);
            ep.support_masks.push_back(scenes[i].mask);
        }
        ep.class_id = class_id;
        ep.seed = seed;
        return ep;
    }
    throw TrfsError("sample_episode: could not sample a valid episode");
}

// --- TensorFile ---------------------------------------------------------------

namespace {
constexpr char kMagic[4] = {'T', 'R', 'F', 'S'};
constexpr std::uint16_t kVersion = 1;
} // namespace

void save_tensor(const std::string& path, const Tensor& t) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("save_tensor: cannot open " + path);
    f.write(kMagic, 4);
    const std::uint16_t version = kVersion;
    f.write(reinterpret_cast<const char*>(&version), 2);
    const std::uint8_t dtype = t.precision() == Precision::Fast ? 0 : 1;
    f.put(static_cast<char>(dtype));
    f.put(static_cast<char>(t.rank()));
    for (std::size_t e : t.shape()) {
        const std::uint32_t d = static_cast<std::uint32_t>(e);
        f.write(reinterpret_cast<const char*>(&d), 4);
    }
    if (dtype == 0) {
        for (double v : t.data()) {
            const float x = static_cast<float>(v);
            f.write(reinterpret_cast<const char*>(&x), 4);
        }
    } else {
        f.write(reinterpret_cast<const char*>(t.data().data()),
                static_cast<std::streamsize>(t.size() * 8));
    }
    if (!f) throw IoError("save_tensor: write failed for " + path);
}

Tensor load_tensor(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("load_tensor: cannot open " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, kMagic, 4) != 0)
        throw BadMagic("load_tensor: bad magic in " + path);
    std::uint16_t version = 0;
    f.read(reinterpret_cast<char*>(&version), 2);
    if (!f || version != kVersion)
        throw UnsupportedVersion("load_tensor: unsupported version in " + path);
    const int dtype = f.get();
    const int rank = f.get();
    if (dtype < 0 || dtype > 1 || rank < 0)
        throw TruncatedPayload("load_tensor: bad header in " + path);
    std::vector<std::size_t> shape;
    for (int i = 0; i < rank; ++i) {
        std::uint32_t d = 0;
        f.read(reinterpret_cast<char*>(&d), 4);
        if (!f) throw TruncatedPayload("load_tensor: truncated dims in " + path);
        shape.push_back(d);
    }
    const std::size_t n = shape_product(shape);
    std::vector<double> data(n);
    if (dtype == 0) {
        std::vector<float> buf(n);
        f.read(reinterpret_cast<char*>(buf.data()),
               static_cast<std::streamsize>(n * 4));
        if (static_cast<std::size_t>(f.gcount()) != n * 4)
            throw TruncatedPayload("load_tensor: truncated payload in " + path);
        for (std::size_t i = 0; i < n; ++i) data[i] = buf[i];
    } else {
        f.read(reinterpret_cast<char*>(data.data()),
               static_cast<std::streamsize>(n * 8));
        if (static_cast<std::size_t>(f.gcount()) != n * 8)
            throw TruncatedPayload("load_tensor: truncated payload in " + path);
    }
    return Tensor(std::move(shape), std::move(data),
                  dtype == 0 ? Precision::Fast : Precision::Reference);
}

} // namespace trfs
