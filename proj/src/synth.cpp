#include "goat/synth.hpp"

#include "goat/error.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <cmath>
#include <numbers>
#include <random>

namespace goat {

namespace {

struct Grid {
    std::size_t width = 0;
    std::size_t n = 0;

    std::int64_t x(std::size_t i) const { return static_cast<std::int64_t>(i % width); }
    std::int64_t y(std::size_t i) const { return static_cast<std::int64_t>(i / width); }
    std::size_t full_rows() const { return n / width; }
};

std::uint64_t mix_seed(std::initializer_list<std::uint64_t> parts)
{
    std::vector<std::uint32_t> words;
    for (auto p : parts) {
        words.push_back(static_cast<std::uint32_t>(p));
        words.push_back(static_cast<std::uint32_t>(p >> 32));
    }
    std::seed_seq seq(words.begin(), words.end());
    std::array<std::uint32_t, 2> out{};
    seq.generate(out.begin(), out.end());
    return (static_cast<std::uint64_t>(out[1]) << 32) | out[0];
}

double dist2(const Grid& g, std::size_t a, std::size_t b)
{
    const double dx = static_cast<double>(g.x(a) - g.x(b));
    const double dy = static_cast<double>(g.y(a) - g.y(b));
    return dx * dx + dy * dy;
}

bool touching(const Grid& g, std::size_t a, std::size_t b)
{
    return std::abs(g.x(a) - g.x(b)) <= 1 && std::abs(g.y(a) - g.y(b)) <= 1;
}

// The `size` allowed cells nearest to `center`, ties by cell index.
std::vector<std::size_t> nearest_cells(const Grid& g, std::size_t center, std::size_t size,
                                       const std::vector<bool>& blocked)
{
    std::vector<std::pair<double, std::size_t>> cand;
    for (std::size_t i = 0; i < g.n; ++i)
        if (!blocked[i])
            cand.emplace_back(dist2(g, center, i), i);
    if (cand.size() < size)
        return {};
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(size), cand.end());
    std::vector<std::size_t> out;
    for (std::size_t r = 0; r < size; ++r)
        out.push_back(cand[r].second);
    return out;
}

bool connected(const Grid& g, const std::vector<std::size_t>& cells)
{
    if (cells.empty())
        return false;
    std::vector<bool> reached(cells.size(), false);
    std::vector<std::size_t> stack{0};
    reached[0] = true;
    std::size_t count = 1;
    while (!stack.empty()) {
        const std::size_t a = stack.back();
        stack.pop_back();
        for (std::size_t b = 0; b < cells.size(); ++b)
            if (!reached[b] && touching(g, cells[a], cells[b])) {
                reached[b] = true;
                ++count;
                stack.push_back(b);
            }
    }
    return count == cells.size();
}

// Largest distance from the center to a disc cell, compared against the radius
// of an ideal disc of the same area.
bool compact(const Grid& g, std::size_t center, const std::vector<std::size_t>& cells)
{
    const double ideal = std::sqrt(static_cast<double>(cells.size()) / std::numbers::pi);
    double worst = 0.0;
    for (auto c : cells)
        worst = std::max(worst, std::sqrt(dist2(g, center, c)));
    return worst <= ideal + 1.5;
}

std::vector<bool> place_single_disc(const Grid& g, std::size_t m, std::mt19937_64& rng)
{
    const auto r = static_cast<std::int64_t>(std::floor(std::sqrt(static_cast<double>(m) / std::numbers::pi)));
    const auto w = static_cast<std::int64_t>(g.width);
    const auto rows = static_cast<std::int64_t>(g.full_rows());
    std::vector<std::size_t> centers;
    for (std::size_t i = 0; i < g.n; ++i)
        if (g.x(i) >= r && g.x(i) <= w - 1 - r && g.y(i) >= r && g.y(i) <= rows - 1 - r)
            centers.push_back(i);
    if (centers.empty())
        for (std::size_t i = 0; i < g.n; ++i)
            centers.push_back(i);
    std::uniform_int_distribution<std::size_t> pick(0, centers.size() - 1);
    const std::size_t center = centers[pick(rng)];

    std::vector<bool> motif(g.n, false);
    for (auto c : nearest_cells(g, center, m, std::vector<bool>(g.n, false)))
        motif[c] = true;
    return motif;
}

std::vector<bool> place_scattered_discs(const Grid& g, std::size_t m, std::size_t discs, std::mt19937_64& rng)
{
    std::vector<std::size_t> sizes(discs, m / discs);
    for (std::size_t t = 0; t < m % discs; ++t)
        ++sizes[t];

    std::uniform_int_distribution<std::size_t> pick(0, g.n - 1);
    for (int attempt = 0; attempt < 500; ++attempt) {
        const bool strict = attempt < 400;
        std::vector<bool> blocked(g.n, false);
        std::vector<bool> motif(g.n, false);
        bool ok = true;
        for (std::size_t t = 0; t < discs && ok; ++t) {
            std::size_t center = pick(rng);
            if (blocked[center]) {
                ok = false;
                break;
            }
            const auto cells = nearest_cells(g, center, sizes[t], blocked);
            if (cells.empty() || (strict && (!connected(g, cells) || !compact(g, center, cells)))) {
                ok = false;
                break;
            }
            for (auto c : cells) {
                motif[c] = true;
                for (std::size_t j = 0; j < g.n; ++j)
                    if (touching(g, c, j))
                        blocked[j] = true;
            }
        }
        if (ok)
            return motif;
    }
    throw ValidationError("synth: cannot place " + std::to_string(discs) + " separated discs holding " + std::to_string(m) +
                          " motif patches on a " + std::to_string(g.n) + "-patch grid");
}

struct Prototypes {
    std::vector<double> background;
    std::vector<double> motif;
};

Prototypes make_prototypes(const SynthSpec& spec)
{
    std::mt19937_64 rng(spec.prototype_seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Prototypes p;
    std::vector<double> dir(spec.dim);
    double norm = 0.0;
    for (std::size_t c = 0; c < spec.dim; ++c) {
        p.background.push_back(spec.prototype_scale * normal(rng));
        dir[c] = normal(rng);
        norm += dir[c] * dir[c];
    }
    norm = std::sqrt(norm);
    for (std::size_t c = 0; c < spec.dim; ++c)
        p.motif.push_back(p.background[c] + spec.motif_shift * dir[c] / norm);
    return p;
}

} // namespace

SynthSlide synth_slide_annotated(std::size_t class_id, std::size_t n_patches, std::uint64_t seed, const SynthSpec& spec)
{
    if (n_patches < 4)
        throw ContractError("synth_slide: need at least 4 patches");
    if (spec.dim == 0)
        throw ContractError("synth_slide: dim must be positive");

    std::mt19937_64 rng(mix_seed({seed, class_id, n_patches}));
    Grid grid{static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n_patches)))), n_patches};
    const auto m = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::llround(spec.motif_fraction * static_cast<double>(n_patches))), 1,
        n_patches - 1);

    SynthSlide out;
    out.motif = class_id == 0 ? place_single_disc(grid, m, rng) : place_scattered_discs(grid, m, class_id + 2, rng);

    std::uniform_int_distribution<std::int64_t> offset(0, 512);
    const std::int64_t ox = offset(rng), oy = offset(rng);

    const Prototypes proto = make_prototypes(spec);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> values(n_patches * spec.dim);
    for (std::size_t i = 0; i < n_patches; ++i) {
        const auto& mu = out.motif[i] ? proto.motif : proto.background;
        for (std::size_t c = 0; c < spec.dim; ++c)
            values[i * spec.dim + c] = static_cast<double>(static_cast<float>(mu[c] + spec.noise * normal(rng)));
    }

    out.bag.slide_id = "synth_c" + std::to_string(class_id) + "_s" + std::to_string(seed);
    out.bag.embeddings = Tensor(Shape{n_patches, spec.dim}, std::move(values));
    out.bag.label = class_id;
    for (std::size_t i = 0; i < n_patches; ++i)
        out.bag.coords.push_back({grid.x(i) + ox, grid.y(i) + oy});
    return out;
}

SlideBag synth_slide(std::size_t class_id, std::size_t n_patches, std::uint64_t seed, const SynthSpec& spec)
{
    return synth_slide_annotated(class_id, n_patches, seed, spec).bag;
}

SynthDataset synth_dataset(std::size_t n_slides, std::size_t n_classes, std::size_t n_patches, std::uint64_t seed,
                           const SynthSpec& spec)
{
    if (n_classes < 2)
        throw ContractError("synth_dataset: need at least two classes");
    SynthDataset out;
    for (std::size_t c = 0; c < n_classes; ++c)
        out.dataset.class_names.push_back(c == 0 ? "single_disc" : std::to_string(c + 2) + "_discs");
    for (std::size_t s = 0; s < n_slides; ++s) {
        SynthSlide slide = synth_slide_annotated(s % n_classes, n_patches, mix_seed({seed, s}), spec);
        char id[32];
        std::snprintf(id, sizeof id, "slide_%04zu", s);
        slide.bag.slide_id = id;
        out.dataset.slides.push_back(std::move(slide.bag));
        out.motif.push_back(std::move(slide.motif));
    }
    return out;
}

} // namespace goat
