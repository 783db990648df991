#pragma once

// Small helpers shared by the config readers and checkpoint packers.

#include <cstdint>
#include <string>
#include <vector>

#include "r3/errors.hpp"
#include "r3/tensor.hpp"

namespace r3::detail {

inline std::size_t parse_size(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const unsigned long long x = std::stoull(v, &pos);
        if (pos != v.size() || v.front() == '-') throw std::invalid_argument(v);
        return static_cast<std::size_t>(x);
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected a non-negative integer, got '" + v + "'");
    }
}

inline double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
    }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config key '" + key + "': expected true or false, got '" + v + "'");
}

inline Tensor mask_tensor(const std::vector<std::uint8_t>& mask) {
    Tensor t(Shape{mask.size()});
    for (std::size_t i = 0; i < mask.size(); ++i) t.data()[i] = mask[i] ? 1.0 : 0.0;
    return t;
}

inline std::vector<std::uint8_t> tensor_mask(const Tensor& t) {
    std::vector<std::uint8_t> out(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) out[i] = t[i] != 0.0;
    return out;
}

}  // namespace r3::detail
