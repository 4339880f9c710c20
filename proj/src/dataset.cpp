#include "fedgen/dataset.hpp"

#include "fedgen/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

namespace fedgen {

std::vector<std::vector<std::size_t>> Dataset::indices_by_class() const {
    std::vector<std::vector<std::size_t>> out(static_cast<std::size_t>(num_classes));
    for (std::size_t i = 0; i < examples.size(); ++i) out.at(static_cast<std::size_t>(examples[i].label)).push_back(i);
    return out;
}

std::map<int, std::size_t> Dataset::class_histogram() const {
    std::map<int, std::size_t> h;
    for (const auto& e : examples) ++h[e.label];
    return h;
}

namespace {

constexpr char kBundleMagic[4] = {'F', 'C', 'I', 'L'};
constexpr std::uint32_t kBundleVersion = 1;
constexpr std::size_t kBundleHeader = 4 + 6 * 4;

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32_le(const unsigned char* p) {
    return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) | (std::uint32_t(p[3]) << 24);
}

std::uint32_t get_u32_be(const unsigned char* p) {
    return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) | (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
}

std::string slurp(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

std::uint8_t quantize(Real v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, Real(0), Real(1)) * 255));
}

} // namespace

std::string encode_bundle(const Dataset& data) {
    const auto& s = data.shape;
    std::string out(kBundleMagic, 4);
    put_u32(out, kBundleVersion);
    put_u32(out, static_cast<std::uint32_t>(data.size()));
    put_u32(out, static_cast<std::uint32_t>(s.channels));
    put_u32(out, static_cast<std::uint32_t>(s.height));
    put_u32(out, static_cast<std::uint32_t>(s.width));
    put_u32(out, static_cast<std::uint32_t>(data.num_classes));
    out.reserve(out.size() + data.size() * (static_cast<std::size_t>(s.size()) + 2));
    for (const auto& e : data.examples) {
        if (static_cast<int>(e.image.size()) != s.size()) throw ShapeError("encode_bundle: image size mismatch");
        for (Real v : e.image) out.push_back(static_cast<char>(quantize(v)));
    }
    for (const auto& e : data.examples) {
        if (e.label < 0 || e.label > 0xffff) throw FormatError("label does not fit in u16");
        out.push_back(static_cast<char>(e.label & 0xff));
        out.push_back(static_cast<char>((e.label >> 8) & 0xff));
    }
    return out;
}

Dataset decode_bundle(std::string_view bytes) {
    if (bytes.size() < kBundleHeader || std::memcmp(bytes.data(), kBundleMagic, 4) != 0)
        throw FormatError("not a bundle: bad magic or short header");
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    if (get_u32_le(p + 4) != kBundleVersion) throw FormatError("unsupported bundle version");
    const std::size_t count = get_u32_le(p + 8);
    Dataset data;
    data.shape = {static_cast<int>(get_u32_le(p + 12)), static_cast<int>(get_u32_le(p + 16)),
                  static_cast<int>(get_u32_le(p + 20))};
    data.num_classes = static_cast<int>(get_u32_le(p + 24));
    if (count > 0 && data.shape.size() <= 0) throw FormatError("bundle declares an empty image shape");
    const auto image_bytes = static_cast<std::size_t>(std::max(data.shape.size(), 0));
    const std::size_t need = kBundleHeader + count * (image_bytes + 2);
    if (bytes.size() < need) throw CorruptionError("bundle payload truncated");
    if (bytes.size() > need) throw CorruptionError("bundle has trailing bytes");
    data.examples.resize(count);
    const unsigned char* px = p + kBundleHeader;
    const unsigned char* lb = px + count * image_bytes;
    for (std::size_t i = 0; i < count; ++i) {
        auto& e = data.examples[i];
        e.image.resize(image_bytes);
        for (std::size_t j = 0; j < image_bytes; ++j) e.image[j] = px[i * image_bytes + j] / Real(255);
        e.label = lb[2 * i] | (lb[2 * i + 1] << 8);
        if (e.label >= data.num_classes) throw CorruptionError("bundle label exceeds declared class count");
    }
    return data;
}

void write_bundle(const Dataset& data, const std::filesystem::path& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open " + path.string() + " for writing");
    const auto bytes = encode_bundle(data);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Dataset ingest_bundle(const std::filesystem::path& path) { return decode_bundle(slurp(path)); }

Dataset read_idx(const std::filesystem::path& images, const std::filesystem::path& labels, int label_offset) {
    const std::string img = slurp(images);
    const std::string lab = slurp(labels);
    if (img.size() < 16 || lab.size() < 8) throw FormatError("IDX file shorter than its header");
    const auto* ip = reinterpret_cast<const unsigned char*>(img.data());
    const auto* lp = reinterpret_cast<const unsigned char*>(lab.data());
    if (get_u32_be(ip) != 0x00000803) throw FormatError("IDX image file: bad magic");
    if (get_u32_be(lp) != 0x00000801) throw FormatError("IDX label file: bad magic");
    const std::size_t count = get_u32_be(ip + 4);
    const int rows = static_cast<int>(get_u32_be(ip + 8));
    const int cols = static_cast<int>(get_u32_be(ip + 12));
    if (get_u32_be(lp + 4) != count) throw FormatError("IDX image and label counts differ");
    const std::size_t image_bytes = static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
    if (img.size() < 16 + count * image_bytes) throw CorruptionError("IDX image payload truncated");
    if (lab.size() < 8 + count) throw CorruptionError("IDX label payload truncated");

    Dataset data;
    data.shape = {1, rows, cols};
    data.examples.resize(count);
    int max_label = -1;
    for (std::size_t i = 0; i < count; ++i) {
        auto& e = data.examples[i];
        e.image.resize(image_bytes);
        for (std::size_t j = 0; j < image_bytes; ++j) e.image[j] = ip[16 + i * image_bytes + j] / Real(255);
        e.label = static_cast<int>(lp[8 + i]) - label_offset;
        if (e.label < 0) throw FormatError("label below zero after applying label offset");
        max_label = std::max(max_label, e.label);
    }
    data.num_classes = max_label + 1;
    return data;
}

namespace {

// Intensity of shape `kind` at pixel (y, x) for an image of side (h, w),
// with the pattern centre shifted by (cy, cx) and stroke scaled by `scale`.
Real pattern(int kind, Real y, Real x, int h, int w, Real cy, Real cx, Real scale) {
    const Real u = y - (h - 1) / Real(2) - cy;
    const Real v = x - (w - 1) / Real(2) - cx;
    const Real side = static_cast<Real>(std::min(h, w));
    const Real stroke = side * Real(0.09) * scale;
    const Real r = std::sqrt(u * u + v * v);
    auto band = [&](Real d) { return std::abs(d) <= stroke ? Real(1) : Real(0); };
    switch (kind) {
    case 0: return band(u);
    case 1: return band(v);
    case 2: return band((u - v) / std::sqrt(Real(2)));
    case 3: return band((u + v) / std::sqrt(Real(2)));
    case 4: return band(r - side * Real(0.3));
    case 5: return r <= side * Real(0.22) * scale ? Real(1) : Real(0);
    case 6: return std::max(band(u), band(v)) * (r <= side * Real(0.4) ? 1 : 0);
    case 7: return std::max(band((u - v) / std::sqrt(Real(2))), band((u + v) / std::sqrt(Real(2)))) *
                   (r <= side * Real(0.42) ? 1 : 0);
    case 8: {
        const int cell = std::max(2, static_cast<int>(std::lround(side / 4 * scale)));
        const int iy = static_cast<int>(std::floor((y - cy) / cell));
        const int ix = static_cast<int>(std::floor((x - cx) / cell));
        return ((iy + ix) % 2 == 0) ? Real(1) : Real(0);
    }
    default: {
        const Real half = side * Real(0.32);
        const Real d = std::max(std::abs(u), std::abs(v));
        return std::abs(d - half) <= stroke ? Real(1) : Real(0);
    }
    }
}

} // namespace

Dataset synth_dataset(int num_classes, int per_class, ImageShape shape, std::uint64_t seed) {
    if (num_classes < 2) throw ConfigError("synth_dataset: num_classes must be >= 2");
    if (per_class < 1) throw ConfigError("synth_dataset: per_class must be >= 1");
    if (shape.size() <= 0) throw ConfigError("synth_dataset: empty image shape");
    Dataset data;
    data.shape = shape;
    data.num_classes = num_classes;
    data.examples.reserve(static_cast<std::size_t>(num_classes) * per_class);
    Rng rng(derive_seed(seed, {0x5e7d}));
    const Real jitter = std::max(Real(1), std::min(shape.height, shape.width) / Real(8));
    std::uniform_real_distribution<Real> shift(-jitter, jitter);
    std::uniform_real_distribution<Real> contrast(0.7, 1.0);
    std::uniform_real_distribution<Real> background(0.0, 0.15);
    std::normal_distribution<Real> noise(0.0, 0.08);
    for (int i = 0; i < per_class; ++i) {
        for (int c = 0; c < num_classes; ++c) {
            const int kind = c % 10;
            const Real scale = Real(1) + Real(0.6) * (c / 10);
            const Real cy = shift(rng);
            const Real cx = shift(rng);
            const Real hi = contrast(rng);
            const Real lo = background(rng);
            LabeledExample e;
            e.label = c;
            e.image.resize(static_cast<std::size_t>(shape.size()));
            for (int ch = 0; ch < shape.channels; ++ch)
                for (int y = 0; y < shape.height; ++y)
                    for (int x = 0; x < shape.width; ++x) {
                        const Real p = pattern(kind, y, x, shape.height, shape.width, cy, cx, scale);
                        const Real v = lo + (hi - lo) * p + noise(rng);
                        e.image[static_cast<std::size_t>((ch * shape.height + y) * shape.width + x)] =
                            std::clamp(v, Real(0), Real(1));
                    }
            data.examples.push_back(std::move(e));
        }
    }
    return data;
}

int TaskSchedule::classes_through(int task) const {
    int n = 0;
    for (int t = 0; t <= task && t < num_tasks; ++t) n += static_cast<int>(class_groups[static_cast<std::size_t>(t)].size());
    return n;
}

namespace {

// Splits `n` items by proportions using largest-remainder rounding (ties to the lower client).
std::vector<std::size_t> apportion(std::size_t n, const std::vector<double>& proportions) {
    std::vector<std::size_t> counts(proportions.size());
    std::vector<std::pair<double, std::size_t>> remainders;
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < proportions.size(); ++i) {
        const double exact = proportions[i] * static_cast<double>(n);
        counts[i] = static_cast<std::size_t>(std::floor(exact));
        assigned += counts[i];
        remainders.emplace_back(exact - std::floor(exact), i);
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t k = 0; assigned < n; ++k, ++assigned) ++counts[remainders[k % remainders.size()].second];
    return counts;
}

} // namespace

TaskSchedule build_schedule(const Dataset& data, int num_tasks, const PartitionConfig& partition,
                            std::uint64_t class_order_seed) {
    const int num_classes = data.num_classes;
    if (num_tasks < 1) throw ConfigError("num_tasks must be >= 1");
    if (num_tasks > num_classes) throw ConfigError("num_tasks exceeds the number of classes");
    if (partition.num_clients < 1) throw ConfigError("num_clients must be >= 1");
    if (!partition.iid && !(partition.beta > 0)) throw ConfigError("Dirichlet beta must be > 0 when non-IID");
    if (partition.test_fraction < 0 || partition.test_fraction >= 1) throw ConfigError("test_fraction must lie in [0, 1)");

    TaskSchedule sched;
    sched.num_tasks = num_tasks;
    sched.num_clients = partition.num_clients;

    std::vector<int> order(static_cast<std::size_t>(num_classes));
    std::iota(order.begin(), order.end(), 0);
    Rng order_rng(derive_seed(class_order_seed, {0xc1a55}));
    std::shuffle(order.begin(), order.end(), order_rng);

    sched.class_slot.assign(static_cast<std::size_t>(num_classes), -1);
    const int base = num_classes / num_tasks;
    const int extra = num_classes % num_tasks;
    std::size_t pos = 0;
    for (int t = 0; t < num_tasks; ++t) {
        const int size = base + (t < extra ? 1 : 0);
        std::vector<int> group(order.begin() + static_cast<std::ptrdiff_t>(pos),
                               order.begin() + static_cast<std::ptrdiff_t>(pos + static_cast<std::size_t>(size)));
        for (int c : group) sched.class_slot[static_cast<std::size_t>(c)] = static_cast<int>(pos++);
        sched.class_groups.push_back(std::move(group));
    }

    const auto by_class = data.indices_by_class();
    sched.shards.assign(static_cast<std::size_t>(num_tasks),
                        std::vector<std::vector<std::size_t>>(static_cast<std::size_t>(partition.num_clients)));
    sched.test_split.assign(static_cast<std::size_t>(num_tasks), {});
    const auto n_clients = static_cast<std::size_t>(partition.num_clients);

    for (int t = 0; t < num_tasks; ++t) {
        std::size_t round_robin = 0;
        auto& shards = sched.shards[static_cast<std::size_t>(t)];
        for (int c : sched.class_groups[static_cast<std::size_t>(t)]) {
            auto idx = by_class[static_cast<std::size_t>(c)];
            Rng split_rng(derive_seed(partition.seed, {1, static_cast<std::uint64_t>(c)}));
            std::shuffle(idx.begin(), idx.end(), split_rng);
            std::size_t n_test = static_cast<std::size_t>(std::lround(partition.test_fraction * static_cast<double>(idx.size())));
            if (partition.test_fraction > 0 && idx.size() >= 2) n_test = std::clamp<std::size_t>(n_test, 1, idx.size() - 1);
            auto& test = sched.test_split[static_cast<std::size_t>(t)];
            test.insert(test.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_test));
            const std::vector<std::size_t> train(idx.begin() + static_cast<std::ptrdiff_t>(n_test), idx.end());

            if (partition.iid) {
                for (std::size_t k = 0; k < train.size(); ++k) shards[round_robin++ % n_clients].push_back(train[k]);
                continue;
            }
            Rng dir_rng(derive_seed(partition.seed, {2, static_cast<std::uint64_t>(c)}));
            std::gamma_distribution<double> gamma(partition.beta, 1.0);
            std::vector<double> p(n_clients);
            double total = 0;
            for (auto& v : p) total += (v = gamma(dir_rng));
            if (!(total > 0)) {
                // Every draw underflowed (tiny beta): the whole class lands on one client.
                std::fill(p.begin(), p.end(), 0.0);
                p[dir_rng() % n_clients] = 1.0;
            } else {
                for (auto& v : p) v /= total;
            }
            const auto counts = apportion(train.size(), p);
            std::size_t off = 0;
            for (std::size_t i = 0; i < n_clients; ++i) {
                shards[i].insert(shards[i].end(), train.begin() + static_cast<std::ptrdiff_t>(off),
                                 train.begin() + static_cast<std::ptrdiff_t>(off + counts[i]));
                off += counts[i];
            }
        }
        for (auto& s : shards) std::sort(s.begin(), s.end());
        auto& test = sched.test_split[static_cast<std::size_t>(t)];
        std::sort(test.begin(), test.end());
        if (test.empty() && partition.test_fraction > 0)
            throw ConfigError("task " + std::to_string(t + 1) + " has an empty test split");
    }
    return sched;
}

} // namespace fedgen
