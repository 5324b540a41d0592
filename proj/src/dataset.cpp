#include "efm/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace efm::data {

// --------------------------------------------------------------------------
// EpisodeStore
// --------------------------------------------------------------------------

void EpisodeStore::add_episode(Episode e) {
    if (dim_o_ <= 0 || dim_a_ <= 0)
        throw ContractError("EpisodeStore: dimensions must be set before adding episodes");
    if (e.T < 2) throw ContractError("EpisodeStore: episodes must have at least 2 steps");
    if (static_cast<long>(e.obs.size()) != static_cast<long>(e.T) * dim_o_ ||
        static_cast<long>(e.act.size()) != static_cast<long>(e.T) * dim_a_)
        throw ContractError("EpisodeStore: payload sizes do not match T and dimensions");
    for (float v : e.obs)
        if (!std::isfinite(v)) throw ContractError("EpisodeStore: non-finite observation");
    for (float v : e.act)
        if (!std::isfinite(v)) throw ContractError("EpisodeStore: non-finite action");
    total_steps_ += e.T;
    episodes_.push_back(std::move(e));
    cumulative_.push_back(total_steps_);
}

void EpisodeStore::finalize() {
    auto compute = [this](int dim, auto&& payload_of, std::vector<float>& mean,
                          std::vector<float>& scale) {
        mean.assign(dim, 0.0f);
        scale.assign(dim, 1.0f);
        if (total_steps_ == 0) return;
        std::vector<double> acc(dim, 0.0), acc2(dim, 0.0);
        for (const Episode& e : episodes_) {
            const std::vector<float>& p = payload_of(e);
            for (int k = 0; k < e.T; ++k)
                for (int j = 0; j < dim; ++j) {
                    const double v = p[static_cast<size_t>(k) * dim + j];
                    acc[j] += v;
                    acc2[j] += v * v;
                }
        }
        const double n = static_cast<double>(total_steps_);
        for (int j = 0; j < dim; ++j) {
            const double m = acc[j] / n;
            const double var = std::max(acc2[j] / n - m * m, 0.0);
            mean[j] = static_cast<float>(m);
            scale[j] = static_cast<float>(std::max(std::sqrt(var), 1e-6));
        }
    };
    compute(dim_o_, [](const Episode& e) -> const std::vector<float>& { return e.obs; },
            stats_.obs_mean, stats_.obs_scale);
    compute(dim_a_, [](const Episode& e) -> const std::vector<float>& { return e.act; },
            stats_.act_mean, stats_.act_scale);
}

std::span<const float> EpisodeStore::obs_row(int episode, int k) const {
    const Episode& e = episodes_.at(episode);
    if (k < 0 || k >= e.T) throw ContractError("obs_row: step out of range");
    return {e.obs.data() + static_cast<size_t>(k) * dim_o_, static_cast<size_t>(dim_o_)};
}

std::span<const float> EpisodeStore::act_row(int episode, int k) const {
    const Episode& e = episodes_.at(episode);
    if (k < 0 || k >= e.T) throw ContractError("act_row: step out of range");
    return {e.act.data() + static_cast<size_t>(k) * dim_a_, static_cast<size_t>(dim_a_)};
}

std::pair<int, int> EpisodeStore::sample_row(Rng& rng) const {
    if (empty()) throw ContractError("EpisodeStore: sampling from an empty store");
    const long r = static_cast<long>(rng.uniform_int(static_cast<std::uint32_t>(total_steps_)));
    const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), r);
    const int epi = static_cast<int>(it - cumulative_.begin());
    const long before = epi == 0 ? 0 : cumulative_[epi - 1];
    return {epi, static_cast<int>(r - before)};
}

namespace {
void affine(std::span<const float> in, std::span<float> out, const std::vector<float>& mean,
            const std::vector<float>& scale, bool forward) {
    if (mean.empty()) {  // not finalized: identity
        std::copy(in.begin(), in.end(), out.begin());
        return;
    }
    if (in.size() != mean.size() || out.size() != mean.size())
        throw ShapeError("normalization: width mismatch");
    for (size_t j = 0; j < in.size(); ++j)
        out[j] = forward ? (in[j] - mean[j]) / scale[j] : in[j] * scale[j] + mean[j];
}
}  // namespace

void EpisodeStore::normalize_obs(std::span<const float> in, std::span<float> out) const {
    affine(in, out, stats_.obs_mean, stats_.obs_scale, true);
}
void EpisodeStore::denormalize_obs(std::span<const float> in, std::span<float> out) const {
    affine(in, out, stats_.obs_mean, stats_.obs_scale, false);
}
void EpisodeStore::normalize_act(std::span<const float> in, std::span<float> out) const {
    affine(in, out, stats_.act_mean, stats_.act_scale, true);
}
void EpisodeStore::denormalize_act(std::span<const float> in, std::span<float> out) const {
    affine(in, out, stats_.act_mean, stats_.act_scale, false);
}

// --------------------------------------------------------------------------
// Tuple sampling
// --------------------------------------------------------------------------

void SamplerConfig::validate() const {
    if (L_o <= 0 || S_o <= 0 || L_a <= 0 || S_a <= 0 || L_g <= 0)
        throw ContractError("SamplerConfig: all lengths and strides must be positive");
}

TrajectoryTuple extract_tuple(const EpisodeStore& store, int episode, int k, int d,
                              const SamplerConfig& config) {
    config.validate();
    const Episode& e = store.episode(episode);
    if (k < 0 || k >= e.T) throw ContractError("extract_tuple: k out of range");
    if (d < 0 || k + d >= e.T) throw ContractError("extract_tuple: d out of range");

    const int dim_o = store.dim_o();
    const int dim_a = store.dim_a();
    TrajectoryTuple t;
    t.episode = episode;
    t.k = k;
    t.d = d;
    auto o = store.obs_row(episode, k);
    t.o.assign(o.begin(), o.end());
    auto g = store.obs_row(episode, k + d);
    t.g.assign(g.begin(), g.end());

    t.tau_o.reserve(static_cast<size_t>(config.L_o) * dim_o);
    for (int j = 0; j < config.L_o; ++j) {
        const int idx = std::min(k + j * config.S_o, e.T - 1);  // clamp past the end
        auto row = store.obs_row(episode, idx);
        t.tau_o.insert(t.tau_o.end(), row.begin(), row.end());
    }
    t.tau_a.reserve(static_cast<size_t>(config.L_a) * dim_a);
    for (int j = 0; j < config.L_a; ++j) {
        const int idx = std::min(k + j * config.S_a, e.T - 1);
        auto row = store.act_row(episode, idx);
        t.tau_a.insert(t.tau_a.end(), row.begin(), row.end());
    }
    return t;
}

TrajectoryTuple sample_tuple(const EpisodeStore& store, const SamplerConfig& config, Rng& rng) {
    if (store.empty()) throw ContractError("sample_tuple: empty store");
    // choosing a dataset-wide uniform row doubles as the length-weighted
    // episode choice, so every timestep is equally likely
    const auto [episode, k] = store.sample_row(rng);
    const int cap = std::min(config.L_g, store.episode(episode).T - 1 - k);
    const int d = static_cast<int>(rng.uniform_int(static_cast<std::uint32_t>(cap + 1)));
    return extract_tuple(store, episode, k, d, config);
}

std::vector<float> sample_unrelated_goal(const EpisodeStore& store, Rng& rng) {
    if (store.empty()) throw ContractError("sample_unrelated_goal: empty store");
    const auto [episode, k] = store.sample_row(rng);
    auto row = store.obs_row(episode, k);
    return {row.begin(), row.end()};
}

// --------------------------------------------------------------------------
// Persistence
// --------------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'E', 'F', 'E', 'D'};
constexpr std::uint32_t kVersion = 1;

class Reader {
public:
    explicit Reader(const std::string& path) : in_(path, std::ios::binary), path_(path) {
        if (!in_) throw FormatError("cannot open '" + path + "'", 0);
    }
    std::uint32_t u32(const char* what) {
        std::uint32_t v = 0;
        raw(&v, sizeof v, what);
        return v;
    }
    void raw(void* p, size_t n, const char* what) {
        in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (static_cast<size_t>(in_.gcount()) != n)
            throw FormatError("truncated episode file '" + path_ + "' while reading " + what,
                              offset_);
        offset_ += n;
    }
    size_t offset() const { return offset_; }

private:
    std::ifstream in_;
    std::string path_;
    size_t offset_ = 0;
};

}  // namespace

void save_store(const EpisodeStore& store, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open '" + path + "' for writing", 0);
    auto u32 = [&out](std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
    out.write(kMagic, 4);
    u32(kVersion);
    u32(static_cast<std::uint32_t>(store.dim_o()));
    u32(static_cast<std::uint32_t>(store.dim_a()));
    u32(static_cast<std::uint32_t>(store.episode_count()));
    for (int i = 0; i < store.episode_count(); ++i) {
        const Episode& e = store.episode(i);
        u32(static_cast<std::uint32_t>(e.T));
        out.write(reinterpret_cast<const char*>(e.obs.data()),
                  static_cast<std::streamsize>(e.obs.size() * sizeof(float)));
        out.write(reinterpret_cast<const char*>(e.act.data()),
                  static_cast<std::streamsize>(e.act.size() * sizeof(float)));
    }
    auto block = [&out](const std::vector<float>& v, int expected) {
        std::vector<float> b = v;
        if (b.empty()) b.assign(expected, 0.0f);  // unfinalized store: neutral stats
        out.write(reinterpret_cast<const char*>(b.data()),
                  static_cast<std::streamsize>(b.size() * sizeof(float)));
    };
    auto scale_block = [&out](const std::vector<float>& v, int expected) {
        std::vector<float> b = v;
        if (b.empty()) b.assign(expected, 1.0f);
        out.write(reinterpret_cast<const char*>(b.data()),
                  static_cast<std::streamsize>(b.size() * sizeof(float)));
    };
    block(store.stats().obs_mean, store.dim_o());
    scale_block(store.stats().obs_scale, store.dim_o());
    block(store.stats().act_mean, store.dim_a());
    scale_block(store.stats().act_scale, store.dim_a());
    out.flush();
    if (!out) throw FormatError("write failed for '" + path + "'", 0);
}

EpisodeStore load_store(const std::string& path) {
    Reader r(path);
    char magic[4];
    r.raw(magic, 4, "magic");
    if (std::memcmp(magic, kMagic, 4) != 0)
        throw FormatError("bad magic in '" + path + "': expected EFED", 0);
    const std::uint32_t version = r.u32("version");
    if (version != kVersion)
        throw FormatError("unsupported episode file version " + std::to_string(version), 4);
    const std::uint32_t dim_o = r.u32("dim_o");
    const std::uint32_t dim_a = r.u32("dim_a");
    if (dim_o == 0 || dim_a == 0 || dim_o > 4096 || dim_a > 4096)
        throw FormatError("implausible dimensions", 8);
    const std::uint32_t count = r.u32("episode count");

    EpisodeStore store(static_cast<int>(dim_o), static_cast<int>(dim_a));
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t T = r.u32("episode length");
        if (T < 2 || T > (1u << 24))
            throw FormatError("implausible episode length " + std::to_string(T),
                              r.offset() - 4);
        Episode e;
        e.T = static_cast<int>(T);
        e.obs.resize(static_cast<size_t>(T) * dim_o);
        e.act.resize(static_cast<size_t>(T) * dim_a);
        r.raw(e.obs.data(), e.obs.size() * sizeof(float), "observations");
        r.raw(e.act.data(), e.act.size() * sizeof(float), "actions");
        store.add_episode(std::move(e));
    }
    NormStats stats;
    stats.obs_mean.resize(dim_o);
    stats.obs_scale.resize(dim_o);
    stats.act_mean.resize(dim_a);
    stats.act_scale.resize(dim_a);
    r.raw(stats.obs_mean.data(), dim_o * sizeof(float), "obs mean");
    r.raw(stats.obs_scale.data(), dim_o * sizeof(float), "obs scale");
    r.raw(stats.act_mean.data(), dim_a * sizeof(float), "act mean");
    r.raw(stats.act_scale.data(), dim_a * sizeof(float), "act scale");
    store.set_stats(std::move(stats));
    return store;
}

}  // namespace efm::data
