#include "goat/interpret.hpp"

#include "goat/error.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace goat {

using nlohmann::json;

std::vector<double> attention_percentiles(const std::vector<double>& alpha)
{
    const std::size_t n = alpha.size();
    if (n == 0)
        throw ContractError("attention_percentiles: no scores");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return alpha[a] < alpha[b]; });
    std::vector<double> out(n);
    for (std::size_t lo = 0; lo < n;) {
        std::size_t hi = lo;
        while (hi < n && alpha[order[hi]] == alpha[order[lo]])
            ++hi;
        const double mean_rank = (static_cast<double>(lo + 1) + static_cast<double>(hi)) / 2.0;
        for (std::size_t r = lo; r < hi; ++r)
            out[order[r]] = mean_rank / static_cast<double>(n);
        lo = hi;
    }
    return out;
}

std::vector<std::size_t> top_k_patches(const std::vector<double>& alpha, std::size_t k)
{
    if (k == 0 || k > alpha.size())
        throw ContractError("top_k_patches: k=" + std::to_string(k) + " outside [1, " + std::to_string(alpha.size()) +
                            "]");
    std::vector<std::size_t> ids(alpha.size());
    std::iota(ids.begin(), ids.end(), 0);
    std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(k), ids.end(),
                      [&](std::size_t a, std::size_t b) { return alpha[a] != alpha[b] ? alpha[a] > alpha[b] : a < b; });
    ids.resize(k);
    return ids;
}

void to_json(json& j, const HeatmapRecord& r)
{
    json patches = json::array();
    for (const auto& p : r.patches)
        patches.push_back({{"patch_id", p.patch_id},
                           {"x", p.x},
                           {"y", p.y},
                           {"raw_score", p.raw_score},
                           {"percentile", p.percentile}});
    j = json{{"slide_id", r.slide_id},
             {"predicted", r.predicted},
             {"class_scores", r.class_scores},
             {"top_patches", r.top_patches},
             {"patches", patches}};
}

void from_json(const json& j, HeatmapRecord& r)
{
    r.slide_id = j.at("slide_id").get<std::string>();
    r.predicted = j.at("predicted").get<std::size_t>();
    r.class_scores = j.at("class_scores").get<std::vector<double>>();
    r.top_patches = j.at("top_patches").get<std::vector<std::size_t>>();
    r.patches.clear();
    for (const auto& p : j.at("patches"))
        r.patches.push_back({p.at("patch_id").get<std::size_t>(), p.at("x").get<std::int64_t>(),
                             p.at("y").get<std::int64_t>(), p.at("raw_score").get<double>(),
                             p.at("percentile").get<double>()});
}

HeatmapRecord make_heatmap_record(const SlideBag& bag, const Prediction& prediction, std::size_t top_k)
{
    if (prediction.alpha.size() != bag.n_patches())
        throw ContractError("make_heatmap_record: " + std::to_string(prediction.alpha.size()) + " scores for " +
                            std::to_string(bag.n_patches()) + " patches");
    HeatmapRecord r;
    r.slide_id = bag.slide_id;
    r.predicted = prediction.predicted;
    r.class_scores = prediction.scores;
    const auto pct = attention_percentiles(prediction.alpha);
    for (std::size_t i = 0; i < bag.n_patches(); ++i)
        r.patches.push_back({i, bag.coords[i].x, bag.coords[i].y, prediction.alpha[i], pct[i]});
    r.top_patches = top_k_patches(prediction.alpha, std::min(top_k, bag.n_patches()));
    return r;
}

HeatmapRecord heatmap_for_slide(const Checkpoint& ckpt, std::size_t fold, const SlideBag& bag, std::size_t top_k)
{
    if (fold >= ckpt.fold_params.size())
        throw ContractError("heatmap: fold " + std::to_string(fold) + " not in checkpoint with " +
                            std::to_string(ckpt.fold_params.size()) + " folds");
    const PreparedSlide slide = prepare_slide(bag, ckpt.config);
    return make_heatmap_record(bag, predict(ckpt.fold_params[fold], slide, ckpt.config), top_k);
}

Rgb percentile_color(double percentile)
{
    static constexpr std::array<Rgb, 5> stops{{{49, 54, 149}, {116, 173, 209}, {255, 255, 191}, {244, 109, 67}, {165, 0, 38}}};
    const double t = std::clamp(percentile, 0.0, 1.0) * 4.0;
    const auto lo = std::min<std::size_t>(static_cast<std::size_t>(t), 3);
    const double f = t - static_cast<double>(lo);
    Rgb c{};
    for (std::size_t ch = 0; ch < 3; ++ch)
        c[ch] = static_cast<std::uint8_t>(
            std::lround((1.0 - f) * stops[lo][ch] + f * stops[lo + 1][ch]));
    return c;
}

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v)
{
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

std::uint32_t get_u32(const std::vector<std::uint8_t>& in, std::size_t at)
{
    if (at + 4 > in.size())
        throw FormatError("png: truncated");
    return (std::uint32_t{in[at]} << 24) | (std::uint32_t{in[at + 1]} << 16) | (std::uint32_t{in[at + 2]} << 8) |
           std::uint32_t{in[at + 3]};
}

void put_chunk(std::vector<std::uint8_t>& out, const char* type, const std::vector<std::uint8_t>& data)
{
    put_u32(out, static_cast<std::uint32_t>(data.size()));
    const std::size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    const uLong crc = crc32(0L, out.data() + start, static_cast<uInt>(out.size() - start));
    put_u32(out, static_cast<std::uint32_t>(crc));
}

constexpr std::array<std::uint8_t, 8> kPngSignature{137, 80, 78, 71, 13, 10, 26, 10};

} // namespace

std::vector<std::uint8_t> encode_png(const RgbImage& img)
{
    if (img.width == 0 || img.height == 0 || img.pixels.size() != 3 * img.width * img.height)
        throw ContractError("encode_png: image buffer does not match its size");
    std::vector<std::uint8_t> out(kPngSignature.begin(), kPngSignature.end());

    std::vector<std::uint8_t> ihdr;
    put_u32(ihdr, static_cast<std::uint32_t>(img.width));
    put_u32(ihdr, static_cast<std::uint32_t>(img.height));
    ihdr.insert(ihdr.end(), {8, 2, 0, 0, 0}); // depth 8, RGB, deflate, filter set 0, no interlace
    put_chunk(out, "IHDR", ihdr);

    std::vector<std::uint8_t> raw;
    raw.reserve(img.height * (1 + 3 * img.width));
    for (std::size_t y = 0; y < img.height; ++y) {
        raw.push_back(0);
        const auto row = img.pixels.begin() + static_cast<std::ptrdiff_t>(3 * img.width * y);
        raw.insert(raw.end(), row, row + static_cast<std::ptrdiff_t>(3 * img.width));
    }
    uLongf packed_len = compressBound(static_cast<uLong>(raw.size()));
    std::vector<std::uint8_t> packed(packed_len);
    if (compress2(packed.data(), &packed_len, raw.data(), static_cast<uLong>(raw.size()), 9) != Z_OK)
        throw IoError("encode_png: deflate failed");
    packed.resize(packed_len);
    put_chunk(out, "IDAT", packed);
    put_chunk(out, "IEND", {});
    return out;
}

RgbImage decode_png(const std::vector<std::uint8_t>& bytes)
{
    if (bytes.size() < 8 || !std::equal(kPngSignature.begin(), kPngSignature.end(), bytes.begin()))
        throw FormatError("png: bad signature");
    RgbImage img;
    std::vector<std::uint8_t> packed;
    for (std::size_t at = 8; at < bytes.size();) {
        const std::uint32_t len = get_u32(bytes, at);
        if (at + 12 + len > bytes.size())
            throw FormatError("png: truncated chunk");
        const std::string type(bytes.begin() + static_cast<std::ptrdiff_t>(at + 4),
                               bytes.begin() + static_cast<std::ptrdiff_t>(at + 8));
        const std::uint8_t* data = bytes.data() + at + 8;
        const uLong crc = crc32(0L, bytes.data() + at + 4, static_cast<uInt>(len + 4));
        if (crc != get_u32(bytes, at + 8 + len))
            throw FormatError("png: bad crc in " + type);
        if (type == "IHDR") {
            img.width = get_u32(bytes, at + 8);
            img.height = get_u32(bytes, at + 12);
            if (data[8] != 8 || data[9] != 2 || data[12] != 0)
                throw FormatError("png: only 8-bit RGB without interlace is supported");
        } else if (type == "IDAT") {
            packed.insert(packed.end(), data, data + len);
        } else if (type == "IEND") {
            break;
        }
        at += 12 + len;
    }
    const std::size_t stride = 1 + 3 * img.width;
    std::vector<std::uint8_t> raw(stride * img.height);
    uLongf raw_len = static_cast<uLongf>(raw.size());
    if (uncompress(raw.data(), &raw_len, packed.data(), static_cast<uLong>(packed.size())) != Z_OK ||
        raw_len != raw.size())
        throw FormatError("png: bad image data");
    img.pixels.reserve(3 * img.width * img.height);
    for (std::size_t y = 0; y < img.height; ++y) {
        if (raw[y * stride] != 0)
            throw FormatError("png: only filter type 0 is supported");
        img.pixels.insert(img.pixels.end(), raw.begin() + static_cast<std::ptrdiff_t>(y * stride + 1),
                          raw.begin() + static_cast<std::ptrdiff_t>((y + 1) * stride));
    }
    return img;
}

RgbImage rasterize_heatmap(const HeatmapRecord& record, std::size_t cell_px)
{
    if (record.patches.empty())
        throw ContractError("rasterize_heatmap: record has no patches");
    if (cell_px == 0)
        throw ContractError("rasterize_heatmap: cell size must be positive");
    auto [min_x, max_x] = std::minmax_element(record.patches.begin(), record.patches.end(),
                                              [](const auto& a, const auto& b) { return a.x < b.x; });
    auto [min_y, max_y] = std::minmax_element(record.patches.begin(), record.patches.end(),
                                              [](const auto& a, const auto& b) { return a.y < b.y; });
    const std::int64_t x0 = min_x->x, y0 = min_y->y;
    RgbImage img;
    img.width = static_cast<std::size_t>(max_x->x - x0 + 1) * cell_px;
    img.height = static_cast<std::size_t>(max_y->y - y0 + 1) * cell_px;
    img.pixels.resize(3 * img.width * img.height);
    for (std::size_t i = 0; i < img.width * img.height; ++i)
        std::copy(kBackground.begin(), kBackground.end(), img.pixels.begin() + static_cast<std::ptrdiff_t>(3 * i));
    for (const auto& p : record.patches) {
        const Rgb c = percentile_color(p.percentile);
        const auto cx = static_cast<std::size_t>(p.x - x0) * cell_px;
        const auto cy = static_cast<std::size_t>(p.y - y0) * cell_px;
        for (std::size_t y = cy; y < cy + cell_px; ++y)
            for (std::size_t x = cx; x < cx + cell_px; ++x)
                std::copy(c.begin(), c.end(), img.pixels.begin() + static_cast<std::ptrdiff_t>(3 * (y * img.width + x)));
    }
    return img;
}

HeatmapFiles render_heatmap(const HeatmapRecord& record, const std::filesystem::path& out_path, std::size_t cell_px)
{
    HeatmapFiles files{out_path, out_path};
    files.image.replace_extension(".png");
    files.sidecar.replace_extension(".json");
    if (files.image.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(files.image.parent_path(), ec);
    }

    const auto png = encode_png(rasterize_heatmap(record, cell_px));
    std::ofstream img(files.image, std::ios::binary | std::ios::trunc);
    if (!img)
        throw IoError("cannot write " + files.image.string());
    img.write(reinterpret_cast<const char*>(png.data()), static_cast<std::streamsize>(png.size()));
    if (!img)
        throw IoError("write failed for " + files.image.string());

    std::ofstream side(files.sidecar, std::ios::binary | std::ios::trunc);
    if (!side)
        throw IoError("cannot write " + files.sidecar.string());
    side << json(record).dump(2) << '\n';
    if (!side)
        throw IoError("write failed for " + files.sidecar.string());
    return files;
}

} // namespace goat
