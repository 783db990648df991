#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "r3/rating_model.hpp"

namespace r3 {

enum class ColdReason { None, User, Item };

/// Common serving surface of every rating model (R3, PMF, Stats).
class Predictor {
public:
    virtual ~Predictor() = default;

    virtual std::string_view kind() const = 0;
    /// Whether (user, item) can be scored; ID models cannot score IDs they never trained on.
    virtual ColdReason cold(std::uint32_t user, std::uint32_t item) const = 0;
    /// Scores pairs that are not cold.
    virtual void predict_batch(std::span<const UserItem> pairs, std::span<double> out) const = 0;

    double predict(std::uint32_t user, std::uint32_t item) const {
        UserItem p{user, item};
        double out = 0.0;
        predict_batch(std::span<const UserItem>(&p, 1), std::span<double>(&out, 1));
        return out;
    }
};

/// Marks which ids occur in a training split.
struct SeenIds {
    std::vector<std::uint8_t> users;
    std::vector<std::uint8_t> items;

    ColdReason check(std::uint32_t user, std::uint32_t item) const {
        if (user >= users.size() || !users[user]) return ColdReason::User;
        if (item >= items.size() || !items[item]) return ColdReason::Item;
        return ColdReason::None;
    }
};

}  // namespace r3
