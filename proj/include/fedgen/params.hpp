#pragma once

#include "fedgen/types.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace fedgen {

struct NamedParam {
    std::string name;
    Matrix value;
};

/// Ordered, named collection of parameter matrices. Gradients and optimizer
/// state use the same layout as the parameters they belong to.
class ParamSet {
public:
    std::size_t add(std::string name, Matrix init);

    Matrix& operator[](std::size_t i) { return entries_[i].value; }
    const Matrix& operator[](std::size_t i) const { return entries_[i].value; }
    Matrix& at(std::string_view name);
    const Matrix& at(std::string_view name) const;
    const std::string& name(std::size_t i) const { return entries_[i].name; }

    std::size_t size() const { return entries_.size(); }
    std::size_t scalar_count() const;
    bool same_layout(const ParamSet& other) const;

    ParamSet zeros_like() const;
    void set_zero();
    /// this += scale * other
    void axpy(Real scale, const ParamSet& other);
    Real squared_norm() const;

    /// FNV-1a over names, shapes and raw bytes; used to assert snapshots stay frozen.
    std::uint64_t fingerprint() const;

    /// Flat copy of every scalar in layout order (handy for finite differences).
    std::vector<Real> flatten() const;
    void unflatten(const std::vector<Real>& flat);

    auto begin() { return entries_.begin(); }
    auto end() { return entries_.end(); }
    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }

    bool operator==(const ParamSet& other) const;

private:
    std::vector<NamedParam> entries_;
};

// Checkpoint file: "FGCK", u32 version, u32 entry count, then per entry
// u32 name length, name bytes, u8 dtype (0 = f64, 1 = f32), u32 ndim, u64 dims[ndim],
// then column-major little-endian payload.
std::string serialize_params(const ParamSet& params);
ParamSet deserialize_params(std::string_view bytes);
void save_checkpoint(const ParamSet& params, const std::filesystem::path& path);
ParamSet load_checkpoint(const std::filesystem::path& path);

} // namespace fedgen
