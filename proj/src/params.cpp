#include "fedgen/params.hpp"

#include "fedgen/error.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace fedgen {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

std::size_t ParamSet::add(std::string name, Matrix init) {
    for (const auto& e : entries_)
        if (e.name == name) throw ConfigError("duplicate parameter name: " + name);
    entries_.push_back({std::move(name), std::move(init)});
    return entries_.size() - 1;
}

Matrix& ParamSet::at(std::string_view name) {
    for (auto& e : entries_)
        if (e.name == name) return e.value;
    throw IntegrityError("no parameter named " + std::string(name));
}

const Matrix& ParamSet::at(std::string_view name) const {
    return const_cast<ParamSet*>(this)->at(name);
}

std::size_t ParamSet::scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += static_cast<std::size_t>(e.value.size());
    return n;
}

bool ParamSet::same_layout(const ParamSet& other) const {
    if (entries_.size() != other.entries_.size()) return false;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        const auto& a = entries_[i];
        const auto& b = other.entries_[i];
        if (a.name != b.name || a.value.rows() != b.value.rows() || a.value.cols() != b.value.cols())
            return false;
    }
    return true;
}

ParamSet ParamSet::zeros_like() const {
    ParamSet out;
    for (const auto& e : entries_) out.entries_.push_back({e.name, Matrix::Zero(e.value.rows(), e.value.cols())});
    return out;
}

void ParamSet::set_zero() {
    for (auto& e : entries_) e.value.setZero();
}

void ParamSet::axpy(Real scale, const ParamSet& other) {
    if (!same_layout(other)) throw ShapeError("axpy: parameter layouts differ");
    for (std::size_t i = 0; i < entries_.size(); ++i) entries_[i].value += scale * other.entries_[i].value;
}

Real ParamSet::squared_norm() const {
    Real s = 0;
    for (const auto& e : entries_) s += e.value.squaredNorm();
    return s;
}

std::uint64_t ParamSet::fingerprint() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto feed = [&h](const void* p, std::size_t n) {
        const auto* bytes = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= bytes[i];
            h *= 0x100000001b3ULL;
        }
    };
    for (const auto& e : entries_) {
        feed(e.name.data(), e.name.size());
        const std::int64_t dims[2] = {e.value.rows(), e.value.cols()};
        feed(dims, sizeof(dims));
        feed(e.value.data(), sizeof(Real) * static_cast<std::size_t>(e.value.size()));
    }
    return h;
}

std::vector<Real> ParamSet::flatten() const {
    std::vector<Real> flat;
    flat.reserve(scalar_count());
    for (const auto& e : entries_) flat.insert(flat.end(), e.value.data(), e.value.data() + e.value.size());
    return flat;
}

void ParamSet::unflatten(const std::vector<Real>& flat) {
    if (flat.size() != scalar_count()) throw ShapeError("unflatten: size mismatch");
    std::size_t off = 0;
    for (auto& e : entries_) {
        std::copy_n(flat.data() + off, e.value.size(), e.value.data());
        off += static_cast<std::size_t>(e.value.size());
    }
}

bool ParamSet::operator==(const ParamSet& other) const {
    if (!same_layout(other)) return false;
    for (std::size_t i = 0; i < entries_.size(); ++i)
        if (entries_[i].value != other.entries_[i].value) return false;
    return true;
}

namespace {

constexpr char kMagic[4] = {'F', 'G', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint8_t kDtype = sizeof(Real) == 4 ? 1 : 0; // 0 = f64, 1 = f32

template <class T>
void put(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

class Reader {
public:
    explicit Reader(std::string_view bytes) : bytes_(bytes) {}

    template <class T>
    T get() {
        T v;
        read(&v, sizeof(T));
        return v;
    }

    void read(void* dst, std::size_t n) {
        if (pos_ + n > bytes_.size()) throw CorruptionError("checkpoint truncated");
        std::memcpy(dst, bytes_.data() + pos_, n);
        pos_ += n;
    }

    bool done() const { return pos_ == bytes_.size(); }

private:
    std::string_view bytes_;
    std::size_t pos_ = 0;
};

} // namespace

std::string serialize_params(const ParamSet& params) {
    std::string out(kMagic, 4);
    put<std::uint32_t>(out, kVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
    for (const auto& e : params) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
        out += e.name;
        put<std::uint8_t>(out, kDtype);
        put<std::uint32_t>(out, 2);
        put<std::uint64_t>(out, static_cast<std::uint64_t>(e.value.rows()));
        put<std::uint64_t>(out, static_cast<std::uint64_t>(e.value.cols()));
        out.append(reinterpret_cast<const char*>(e.value.data()), sizeof(Real) * static_cast<std::size_t>(e.value.size()));
    }
    return out;
}

ParamSet deserialize_params(std::string_view bytes) {
    if (bytes.size() < 12 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("not a checkpoint (bad magic)");
    Reader r(bytes.substr(4));
    if (r.get<std::uint32_t>() != kVersion) throw FormatError("unsupported checkpoint version");
    const auto count = r.get<std::uint32_t>();
    ParamSet params;
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name(r.get<std::uint32_t>(), '\0');
        r.read(name.data(), name.size());
        if (r.get<std::uint8_t>() != kDtype) throw FormatError("unsupported dtype in checkpoint");
        if (r.get<std::uint32_t>() != 2) throw FormatError("unsupported rank in checkpoint");
        const auto rows = r.get<std::uint64_t>();
        const auto cols = r.get<std::uint64_t>();
        Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
        r.read(m.data(), sizeof(Real) * rows * cols);
        params.add(std::move(name), std::move(m));
    }
    if (!r.done()) throw CorruptionError("trailing bytes after checkpoint payload");
    return params;
}

void save_checkpoint(const ParamSet& params, const std::filesystem::path& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open " + path.string() + " for writing");
    const auto bytes = serialize_params(params);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

ParamSet load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return deserialize_params(ss.str());
}

} // namespace fedgen
