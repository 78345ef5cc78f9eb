#include "promptseg/synthetic.hpp"

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include <json.hpp>

#include "promptseg/errors.hpp"
#include "promptseg/image.hpp"
#include "promptseg/rng.hpp"

namespace promptseg {

namespace {

namespace fs = std::filesystem;

struct Shape {
    int kind;    // 0 circle, 1 square, 2 triangle
    double cx, cy, radius;
};

bool inside(const Shape& s, double x, double y) {
    const double dx = x - s.cx, dy = y - s.cy;
    switch (s.kind) {
        case 0:
            return dx * dx + dy * dy <= s.radius * s.radius;
        case 1:
            return std::abs(dx) <= s.radius * 0.85 && std::abs(dy) <= s.radius * 0.85;
        default: {
            // upward triangle inscribed in the radius
            const double top = s.cy - s.radius;
            const double bot = s.cy + s.radius * 0.7;
            if (y < top || y > bot) return false;
            const double frac = (y - top) / (bot - top);
            return std::abs(dx) <= frac * s.radius;
        }
    }
}

constexpr std::array<std::array<double, 3>, 3> kColors = {{
    {0.85, 0.20, 0.20},    // circle
    {0.15, 0.75, 0.25},    // square
    {0.20, 0.35, 0.90},    // triangle
}};

} // namespace

std::string generate_synthetic_corpus(const std::string& out_dir, const SyntheticSpec& spec) {
    if (spec.n_images < 1 || spec.size < 32)
        throw ValidationError("synthetic corpus: need n_images >= 1 and size >= 32");
    fs::create_directories(fs::path(out_dir) / "images");
    fs::create_directories(fs::path(out_dir) / "masks");

    const std::string manifest_path = (fs::path(out_dir) / "manifest.jsonl").string();
    std::ofstream manifest(manifest_path);
    if (!manifest) throw IoError("cannot write manifest: " + manifest_path);

    SplitMix64 rng(spec.seed);
    const int S = spec.size;
    const double rmin = S * 0.13, rmax = S * 0.23;

    for (int n = 0; n < spec.n_images; ++n) {
        std::vector<Shape> shapes;
        auto try_place = [&](int kind) {
            for (int attempt = 0; attempt < 200; ++attempt) {
                Shape s;
                s.kind = kind;
                s.radius = rng.next_double(rmin, rmax);
                s.cx = rng.next_double(s.radius + 2, S - s.radius - 2);
                s.cy = rng.next_double(s.radius + 2, S - s.radius - 2);
                bool ok = true;
                for (const Shape& other : shapes) {
                    const double dx = s.cx - other.cx, dy = s.cy - other.cy;
                    if (std::sqrt(dx * dx + dy * dy) < s.radius + other.radius + 3.0) {
                        ok = false;
                        break;
                    }
                }
                if (ok) {
                    shapes.push_back(s);
                    return true;
                }
            }
            return false;
        };
        for (int kind = 0; kind < 3; ++kind)
            if (!try_place(kind))
                throw IoError("synthetic corpus: shape placement failed; canvas too small");
        if (rng.next_double() < spec.multi_instance_fraction) {
            const int kind = static_cast<int>(rng.next_below(3));
            try_place(kind);    // best effort; skip when it does not fit
        }

        Image img(S, S, 3);
        LabelMap mask(S, S, 0);
        for (int y = 0; y < S; ++y)
            for (int x = 0; x < S; ++x) {
                const double noise = rng.next_double(0.05, 0.30);
                for (int c = 0; c < 3; ++c) img.at(y, x, c) = noise;
            }
        for (const Shape& s : shapes) {
            const double jitter = rng.next_double(-0.06, 0.06);
            for (int y = 0; y < S; ++y)
                for (int x = 0; x < S; ++x)
                    if (inside(s, x + 0.5, y + 0.5)) {
                        mask.at(y, x) = static_cast<uint8_t>(s.kind + 1);
                        for (int c = 0; c < 3; ++c)
                            img.at(y, x, c) =
                                std::clamp(kColors[s.kind][c] + jitter, 0.0, 1.0);
                    }
        }

        char id[32];
        std::snprintf(id, sizeof(id), "synth_%04d", n);
        const std::string image_rel = std::string("images/") + id + ".png";
        const std::string mask_rel = std::string("masks/") + id + ".png";
        write_image_png((fs::path(out_dir) / image_rel).string(), img);
        write_mask_png((fs::path(out_dir) / mask_rel).string(), mask);

        nlohmann::json line{
            {"id", id},
            {"image", image_rel},
            {"mask", mask_rel},
            {"dataset", "shapes"},
            {"modality", "synthetic"},
            {"labels", {{"1", "circle"}, {"2", "square"}, {"3", "triangle"}}}};
        manifest << line.dump() << "\n";
    }
    return manifest_path;
}

} // namespace promptseg
