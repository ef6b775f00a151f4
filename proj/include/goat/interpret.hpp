#pragma once

#include "goat/slide.hpp"
#include "goat/training.hpp"

#include "json.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace goat {

// rank(alpha_i) / N with ranks 1..N; tied scores share the mean rank of their block.
std::vector<double> attention_percentiles(const std::vector<double>& alpha);

// Ids of the k largest scores, descending; equal scores keep the lower id first.
std::vector<std::size_t> top_k_patches(const std::vector<double>& alpha, std::size_t k);

struct HeatmapEntry {
    std::size_t patch_id = 0;
    std::int64_t x = 0;
    std::int64_t y = 0;
    double raw_score = 0.0;
    double percentile = 0.0;

    friend bool operator==(const HeatmapEntry&, const HeatmapEntry&) = default;
};

struct HeatmapRecord {
    std::string slide_id;
    std::vector<HeatmapEntry> patches;
    std::size_t predicted = 0;
    std::vector<double> class_scores;
    std::vector<std::size_t> top_patches;

    friend bool operator==(const HeatmapRecord&, const HeatmapRecord&) = default;
};

void to_json(nlohmann::json& j, const HeatmapRecord& r);
void from_json(const nlohmann::json& j, HeatmapRecord& r);

HeatmapRecord make_heatmap_record(const SlideBag& bag, const Prediction& prediction, std::size_t top_k = 8);

// Runs fold `fold` of the checkpoint on one slide.
HeatmapRecord heatmap_for_slide(const Checkpoint& ckpt, std::size_t fold, const SlideBag& bag, std::size_t top_k = 8);

using Rgb = std::array<std::uint8_t, 3>;

// Five-stop ramp, blue (low) -> pale yellow -> red (high), linear between stops
// at 0, 0.25, 0.5, 0.75 and 1.
Rgb percentile_color(double percentile);
inline constexpr Rgb kBackground{255, 255, 255};

struct RgbImage {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::uint8_t> pixels; // row-major RGB

    Rgb at(std::size_t x, std::size_t y) const
    {
        const std::size_t i = 3 * (y * width + x);
        return {pixels[i], pixels[i + 1], pixels[i + 2]};
    }
};

// 8-bit RGB PNG, no interlace, filter 0 on every row.
std::vector<std::uint8_t> encode_png(const RgbImage& img);
RgbImage decode_png(const std::vector<std::uint8_t>& bytes);

// One cell_px x cell_px square per patch over the bounding box of the patch
// grid; cells without a patch stay white. Cell (x, y) starts at pixel
// ((x - min_x) * cell_px, (y - min_y) * cell_px).
RgbImage rasterize_heatmap(const HeatmapRecord& record, std::size_t cell_px = 8);

struct HeatmapFiles {
    std::filesystem::path image;
    std::filesystem::path sidecar;
};

// Writes <out_path>.png and <out_path>.json (extension of out_path replaced).
HeatmapFiles render_heatmap(const HeatmapRecord& record, const std::filesystem::path& out_path, std::size_t cell_px = 8);

} // namespace goat
