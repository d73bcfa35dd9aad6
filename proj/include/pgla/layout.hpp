#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pgla/error.hpp"
#include "pgla/tensor.hpp"

namespace pgla {

struct LayerEntry {
    std::string name;
    std::vector<uint32_t> shape;
    uint64_t offset = 0;
    uint64_t length = 0;
};

/// Ordered, contiguous slices of a flattened parameter/gradient vector.
struct LayerLayout {
    std::vector<LayerEntry> entries;

    uint64_t total() const { return entries.empty() ? 0 : entries.back().offset + entries.back().length; }

    void push(std::string name, std::vector<uint32_t> shape) {
        uint64_t len = 1;
        for (auto d : shape) len *= d;
        entries.push_back({std::move(name), std::move(shape), total(), len});
    }

    void validate() const {
        uint64_t off = 0;
        for (const auto& e : entries) {
            if (e.offset != off) throw Error(ErrorKind::Layout, "layout offsets are not contiguous");
            uint64_t len = 1;
            for (auto d : e.shape) {
                if (d == 0) throw Error(ErrorKind::Layout, "layout entry with zero dimension");
                len *= d;
            }
            if (len != e.length) throw Error(ErrorKind::Layout, "layout entry length does not match shape");
            off += e.length;
        }
        if (off == 0) throw Error(ErrorKind::Layout, "empty layout");
    }

    bool same_shape_as(const LayerLayout& o) const {
        if (entries.size() != o.entries.size()) return false;
        for (size_t i = 0; i < entries.size(); ++i)
            if (entries[i].shape != o.entries[i].shape || entries[i].offset != o.entries[i].offset) return false;
        return true;
    }
};

enum class GradientRole : uint8_t { Clean = 0, Perturbed = 1, Recovered = 2, Surrogate = 3 };

inline const char* role_name(GradientRole r) {
    switch (r) {
        case GradientRole::Clean: return "clean";
        case GradientRole::Perturbed: return "perturbed";
        case GradientRole::Recovered: return "recovered";
        case GradientRole::Surrogate: return "surrogate";
    }
    return "unknown";
}

/// A flat gradient with its layer layout and provenance role.
struct GradientVector {
    FlatTensor values;
    LayerLayout layout;
    GradientRole role = GradientRole::Clean;

    GradientVector() = default;
    GradientVector(FlatTensor v, LayerLayout l, GradientRole r) : values(std::move(v)), layout(std::move(l)), role(r) {
        if (values.size() != layout.total())
            throw Error(ErrorKind::Layout, "gradient length does not match layout");
    }

    uint64_t length() const { return values.size(); }
};

} // namespace pgla
