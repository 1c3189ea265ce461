#include "nullboost/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace nb::data {

std::vector<pipe::Image> Dataset::gather_images(const std::vector<int>& idx) const {
    std::vector<pipe::Image> out;
    out.reserve(idx.size());
    for (int i : idx) out.push_back(images.at(i));
    return out;
}

std::vector<int> Dataset::gather_labels(const std::vector<int>& idx) const {
    std::vector<int> out;
    out.reserve(idx.size());
    for (int i : idx) out.push_back(labels.at(i));
    return out;
}

std::uint64_t Dataset::fingerprint() const {
    std::uint64_t h = fnv1a("nullboost-dataset");
    const std::uint64_t n = images.size();
    h = fnv1a(&n, sizeof(n), h);
    for (const auto& img : images) {
        h = fnv1a(&img.h, sizeof(img.h), h);
        h = fnv1a(img.px.data(), img.px.size() * sizeof(float), h);
    }
    if (!labels.empty()) h = fnv1a(labels.data(), labels.size() * sizeof(int), h);
    return h;
}

// ---------------------------------------------------------------------------
// CSV ingestion (competition file layout)

Dataset load_expression_csv(const std::string& path, int expected_side) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open data file '" + path + "'");

    std::string line;
    if (!std::getline(in, line)) throw DataError("'" + path + "' is empty");
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();

    bool labeled;
    if (line == "emotion,pixels")
        labeled = true;
    else if (line == "pixels")
        labeled = false;
    else
        throw DataError("'" + path + "' has unexpected header '" + line +
                        "' (want 'emotion,pixels' or 'pixels')");

    Dataset ds;
    int side = expected_side;
    std::size_t row_index = 0;
    while (std::getline(in, line)) {
        ++row_index;
        while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
        if (line.empty()) continue;

        const char* p = line.c_str();
        int label = -1;
        if (labeled) {
            char* end = nullptr;
            const long v = std::strtol(p, &end, 10);
            if (end == p || *end != ',')
                throw DataError("malformed-row " + std::to_string(row_index) +
                                ": missing label field");
            if (v < 0)
                throw DataError("malformed-row " + std::to_string(row_index) +
                                ": negative label");
            label = static_cast<int>(v);
            p = end + 1;
        }

        std::vector<float> px;
        if (side > 0) px.reserve(static_cast<std::size_t>(side) * side);
        while (*p) {
            while (*p == ' ') ++p;
            if (!*p) break;
            char* end = nullptr;
            const long v = std::strtol(p, &end, 10);
            if (end == p)
                throw DataError("malformed-row " + std::to_string(row_index) +
                                ": non-integer pixel near '" + std::string(p).substr(0, 8) + "'");
            if (v < 0 || v > 255)
                throw DataError("malformed-row " + std::to_string(row_index) +
                                ": pixel value " + std::to_string(v) + " out of 0-255");
            px.push_back(static_cast<float>(v) / 255.0f);
            p = end;
        }

        if (side == 0) {
            const int s = static_cast<int>(std::lround(std::sqrt(static_cast<double>(px.size()))));
            if (s < 1 || static_cast<std::size_t>(s) * s != px.size())
                throw DataError("wrong-pixel-count at row " + std::to_string(row_index) +
                                ": " + std::to_string(px.size()) + " is not a square");
            side = s;
        }
        if (px.size() != static_cast<std::size_t>(side) * side)
            throw DataError("wrong-pixel-count at row " + std::to_string(row_index) + ": got " +
                            std::to_string(px.size()) + ", want " +
                            std::to_string(static_cast<std::size_t>(side) * side));

        pipe::Image img(side, side);
        img.px = std::move(px);
        ds.images.push_back(std::move(img));
        if (labeled) ds.labels.push_back(label);
    }
    if (ds.images.empty()) throw DataError("'" + path + "' contains no rows");
    if (labeled) {
        for (int l : ds.labels) ds.class_count = std::max(ds.class_count, l + 1);
    }
    return ds;
}

void save_expression_csv(const Dataset& ds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write data file '" + path + "'");
    const bool labeled = ds.labeled();
    out << (labeled ? "emotion,pixels" : "pixels") << "\n";
    for (std::size_t i = 0; i < ds.images.size(); ++i) {
        if (labeled) out << ds.labels[i] << ",";
        const auto& px = ds.images[i].px;
        for (std::size_t j = 0; j < px.size(); ++j) {
            const int v = std::min(255, std::max(0, static_cast<int>(std::lround(
                                                       px[j] * 255.0f))));
            if (j) out << ' ';
            out << v;
        }
        out << "\n";
    }
    if (!out) throw DataError("failed writing data file '" + path + "'");
}

// ---------------------------------------------------------------------------

void split(Dataset& ds, int n_fit, int n_valid, std::uint64_t seed, int n_test) {
    if (n_fit < 0 || n_valid < 0 || n_test < 0) throw ConfigError("split sizes must be >= 0");
    const std::size_t want =
        static_cast<std::size_t>(n_fit) + n_valid + n_test;
    if (want > ds.size())
        throw ConfigError("insufficient-examples: need " + std::to_string(want) + ", have " +
                          std::to_string(ds.size()));
    std::vector<int> order(ds.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    for (std::size_t i = 0; i + 1 < order.size(); ++i) {
        const std::size_t j = i + rng.uniform_int(order.size() - i);
        std::swap(order[i], order[j]);
    }
    ds.fit_idx.assign(order.begin(), order.begin() + n_fit);
    ds.valid_idx.assign(order.begin() + n_fit, order.begin() + n_fit + n_valid);
    ds.test_idx.assign(order.begin() + n_fit + n_valid,
                       order.begin() + n_fit + n_valid + n_test);
}

// ---------------------------------------------------------------------------
// Synthetic generators

SynthSpec SynthSpec::from_json(const json& j) {
    SynthSpec s;
    s.generator = j.at("generator").get<std::string>();
    s.n = j.at("n").get<int>();
    s.side = j.at("side").get<int>();
    s.classes = j.at("classes").get<int>();
    s.seed = j.value("seed", 0ULL);
    return s;
}

json SynthSpec::to_json() const {
    return json{{"generator", generator},
                {"n", n},
                {"side", side},
                {"classes", classes},
                {"seed", seed}};
}

namespace {

float clip01(double v) { return static_cast<float>(std::min(0.99, std::max(0.01, v))); }

void add_noise(pipe::Image& img, Rng& rng, double amp) {
    for (auto& v : img.px) v = clip01(v + rng.uniform(-amp, amp));
}

pipe::Image blob_image(int side, double cx, double cy, double sigma, double amp, double base) {
    pipe::Image img(side, side);
    for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x) {
            const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
            img.at(y, x) = clip01(base + amp * std::exp(-d2 / (2.0 * sigma * sigma)));
        }
    return img;
}

}  // namespace

Dataset make_synthetic(const SynthSpec& spec) {
    if (spec.n < spec.classes)
        throw ConfigError("synthetic dataset needs n >= class count");
    if (spec.side < 4) throw ConfigError("synthetic dataset needs side >= 4");
    if (spec.classes < 2) throw ConfigError("synthetic dataset needs >= 2 classes");
    if (spec.generator == "two-view" && spec.classes != 4)
        throw ConfigError("two-view generator requires exactly 4 classes");

    Dataset ds;
    ds.class_count = spec.classes;
    ds.images.reserve(spec.n);
    ds.labels.reserve(spec.n);
    Rng rng(spec.seed);

    // Balanced labels in a seeded order.
    std::vector<int> label_of(spec.n);
    for (int i = 0; i < spec.n; ++i) label_of[i] = i % spec.classes;
    for (int i = 0; i + 1 < spec.n; ++i) {
        const int j = i + static_cast<int>(rng.uniform_int(spec.n - i));
        std::swap(label_of[i], label_of[j]);
    }

    const int side = spec.side;
    for (int i = 0; i < spec.n; ++i) {
        const int label = label_of[i];
        pipe::Image img;
        if (spec.generator == "blobs") {
            const double angle = 2.0 * M_PI * label / spec.classes;
            const double r = side * 0.28;
            const double cx = 0.5 * (side - 1) + r * std::cos(angle) + rng.uniform(-0.5, 0.5);
            const double cy = 0.5 * (side - 1) + r * std::sin(angle) + rng.uniform(-0.5, 0.5);
            img = blob_image(side, cx, cy, side / 7.0, 0.5, 0.25);
            add_noise(img, rng, 0.02);
        } else if (spec.generator == "oriented-textures") {
            const double theta = M_PI * label / spec.classes;
            const double ct = std::cos(theta), st = std::sin(theta);
            const double period = 4.0;
            const double phase = rng.uniform(0.0, period);
            img = pipe::Image(side, side);
            for (int y = 0; y < side; ++y)
                for (int x = 0; x < side; ++x)
                    img.at(y, x) = clip01(
                        0.5 + 0.25 * std::sin(2.0 * M_PI * (x * ct + y * st + phase) / period));
            add_noise(img, rng, 0.03);
        } else if (spec.generator == "two-view") {
            // Attribute A = bump sign, attribute B = stripe orientation.
            const int attr_a = label >> 1;
            const int attr_b = label & 1;
            img = pipe::Image(side, side);
            const double sigma = side / 5.0;
            const double cx = 0.5 * (side - 1) + static_cast<double>(rng.uniform_int(3)) - 1.0;
            const double cy = 0.5 * (side - 1) + static_cast<double>(rng.uniform_int(3)) - 1.0;
            const double bump_amp = attr_a == 0 ? 0.22 : -0.22;
            const int phase = static_cast<int>(rng.uniform_int(2));
            for (int y = 0; y < side; ++y)
                for (int x = 0; x < side; ++x) {
                    const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
                    double v = 0.5 + bump_amp * std::exp(-d2 / (2.0 * sigma * sigma));
                    const int coord = attr_b == 0 ? x : y;
                    v += ((coord + phase) % 2 == 0) ? 0.12 : -0.12;
                    img.at(y, x) = clip01(v);
                }
            add_noise(img, rng, 0.04);
        } else {
            throw ConfigError("unknown synthetic generator '" + spec.generator + "'");
        }
        ds.images.push_back(std::move(img));
        ds.labels.push_back(label);
    }
    return ds;
}

}  // namespace nb::data
