#include "efm/synthetic.hpp"

#include <algorithm>
#include <cmath>

#include "efm/errors.hpp"

namespace efm::extremum {

namespace {
constexpr float kPi = 3.14159265358979323846f;
}

void SyntheticFamily::sample(Rng& rng, float c, std::span<float> x) const {
    switch (id_) {
        case Id::Uniform:
            x[0] = rng.uniform(2.0f, 5.0f);
            return;
        case Id::PointMass:
            x[0] = 3.0f;
            return;
        case Id::BimodalUniform:
            // mix of U(c, c+1) and U(c+3, c+4): support [c, c+4] with a hole
            x[0] = rng.uniform() < 0.5f ? rng.uniform(c, c + 1.0f)
                                        : rng.uniform(c + 3.0f, c + 4.0f);
            return;
        case Id::ConditionalMixture:
            // mix of U(-1-c, -c) and U(c, 1+c): support spreads with c
            x[0] = rng.uniform() < 0.5f ? rng.uniform(-1.0f - c, -c)
                                        : rng.uniform(c, 1.0f + c);
            return;
        case Id::Crescent2D: {
            // half annulus: radius U(0.8, 1), angle U(0, pi)
            const float r = rng.uniform(0.8f, 1.0f);
            const float a = rng.uniform(0.0f, kPi);
            x[0] = r * std::cos(a);  // z
            x[1] = r * std::sin(a);  // y
            return;
        }
    }
    throw ContractError("SyntheticFamily: unhandled family");
}

std::pair<float, float> SyntheticFamily::true_bounds(float c) const {
    switch (id_) {
        case Id::Uniform:
            return {2.0f, 5.0f};
        case Id::PointMass:
            return {3.0f, 3.0f};
        case Id::BimodalUniform:
            return {c, c + 4.0f};
        case Id::ConditionalMixture:
            return {-1.0f - c, 1.0f + c};
        case Id::Crescent2D:
            return {-1.0f, 1.0f};
    }
    throw ContractError("SyntheticFamily: unhandled family");
}

float SyntheticFamily::sample_condition(Rng& rng) const {
    if (!conditional) return 0.0f;
    const auto [lo, hi] = std::minmax_element(cond_grid.begin(), cond_grid.end());
    return rng.uniform(*lo, *hi);
}

const std::vector<std::string>& family_names() {
    static const std::vector<std::string> names = {
        "uniform", "point-mass", "bimodal-uniform", "conditional-mixture", "crescent-2d"};
    return names;
}

SyntheticFamily make_family(const std::string& name) {
    std::string key = name;
    std::transform(key.begin(), key.end(), key.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    SyntheticFamily f;
    f.name = key;
    if (key == "uniform") {
        f.id_ = SyntheticFamily::Id::Uniform;
        f.conditional = false;
        f.cond_grid = {0.0f};
    } else if (key == "point-mass") {
        f.id_ = SyntheticFamily::Id::PointMass;
        f.conditional = false;
        f.cond_grid = {0.0f};
    } else if (key == "bimodal-uniform") {
        f.id_ = SyntheticFamily::Id::BimodalUniform;
        f.conditional = true;
        f.cond_grid = {0.0f, 0.25f, 0.5f, 0.75f, 1.0f};
    } else if (key == "conditional-mixture") {
        f.id_ = SyntheticFamily::Id::ConditionalMixture;
        f.conditional = true;
        f.cond_grid = {0.0f, 0.25f, 0.5f, 0.75f, 1.0f};
    } else if (key == "crescent-2d") {
        f.id_ = SyntheticFamily::Id::Crescent2D;
        f.data_dim = 2;
        f.conditional = false;
        f.cond_grid = {0.0f};
    } else {
        std::string valid;
        for (const auto& n : family_names()) valid += (valid.empty() ? "" : ", ") + n;
        throw ConfigError("unknown synthetic family '" + name + "' (valid: " + valid + ")");
    }
    return f;
}

}  // namespace efm::extremum
