#include "doctest.h"
#include "test_util.hpp"

#include "goat/cli.hpp"
#include "goat/error.hpp"
#include "goat/interpret.hpp"
#include "goat/synth.hpp"

#include "json.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace goat;
using namespace goat::testing;
namespace fs = std::filesystem;

namespace {

// Sort-based oracle: mean 1-based position of each tied block, over N.
std::vector<double> rank_oracle(const std::vector<double>& a)
{
    std::vector<std::size_t> idx(a.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t x, std::size_t y) { return a[x] < a[y]; });
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j < idx.size() && a[idx[j]] == a[idx[i]])
            ++j;
        const double mean_rank = double(i + 1 + j) / 2.0;
        for (std::size_t t = i; t < j; ++t)
            out[idx[t]] = mean_rank / double(a.size());
        i = j;
    }
    return out;
}

std::vector<std::uint8_t> read_bytes(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

HeatmapRecord sample_record(std::mt19937_64& rng, std::size_t n)
{
    const SlideBag bag = random_bag(rng, n, 2);
    Prediction pred;
    pred.predicted = 1;
    pred.scores = {0.25, 0.75};
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double total = 0;
    for (std::size_t i = 0; i < n; ++i) {
        pred.alpha.push_back(u(rng));
        total += pred.alpha.back();
    }
    for (double& a : pred.alpha)
        a /= total;
    return make_heatmap_record(bag, pred, std::min<std::size_t>(8, n));
}

fs::path scratch(const std::string& name)
{
    const fs::path p = fs::temp_directory_path() / ("goat_test_interpret_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

int cli(const std::vector<std::string>& args, std::string* out_text = nullptr, std::string* err_text = nullptr)
{
    std::ostringstream out, err;
    const int rc = run_cli(args, out, err);
    if (out_text)
        *out_text = out.str();
    if (err_text)
        *err_text = err.str();
    return rc;
}

} // namespace

TEST_CASE("percentile examples")
{
    CHECK(attention_percentiles({0.4, 0.1, 0.3, 0.2}) == std::vector<double>{1.0, 0.25, 0.75, 0.5});
    for (std::size_t n : {1u, 2u, 5u})
        for (double p : attention_percentiles(std::vector<double>(n, 0.7)))
            CHECK(p == double(n + 1) / double(2 * n));
}

TEST_CASE("percentiles match the rank oracle and depend only on order")
{
    std::mt19937_64 rng(1);
    for (int rep = 0; rep < 300; ++rep) {
        const std::size_t n = 1 + rng() % 60;
        std::vector<double> a(n);
        for (auto& v : a)
            v = double(rng() % (rep % 2 ? 4096 : 8)) / 64.0; // exact binary fractions
        const auto p = attention_percentiles(a);
        CHECK(p == rank_oracle(a));
        std::vector<double> t(n);
        for (std::size_t i = 0; i < n; ++i)
            t[i] = std::exp(3.0 * a[i]) - 7.0;
        CHECK(attention_percentiles(t) == p);
    }
}

TEST_CASE("top-k examples")
{
    const std::vector<double> a{0.1, 0.4, 0.4, 0.05, 0.05};
    CHECK(top_k_patches(a, 5) == std::vector<std::size_t>{1, 2, 0, 3, 4});
    CHECK(top_k_patches(a, 1) == std::vector<std::size_t>{1});
    CHECK(top_k_patches(a, 4) == std::vector<std::size_t>{1, 2, 0, 3});
    CHECK_THROWS_AS(top_k_patches(a, 6), ContractError);
    CHECK_THROWS_AS(top_k_patches(a, 0), ContractError);

    std::mt19937_64 rng(2);
    for (int rep = 0; rep < 100; ++rep) {
        const std::size_t n = 2 + rng() % 30;
        std::vector<double> s(n);
        for (auto& v : s)
            v = double(rng() % 5);
        const std::size_t k = 1 + rng() % (n - 1);
        const auto small = top_k_patches(s, k);
        const auto big = top_k_patches(s, k + 1);
        CHECK(std::equal(small.begin(), small.end(), big.begin()));
    }
}

TEST_CASE("heatmap records")
{
    std::mt19937_64 rng(3);
    const HeatmapRecord r = sample_record(rng, 20);
    CHECK(r.patches.size() == 20);
    std::size_t arg = 0;
    for (std::size_t i = 0; i < 20; ++i)
        if (r.patches[i].raw_score > r.patches[arg].raw_score)
            arg = i;
    CHECK(r.patches[arg].percentile == 1.0);
    CHECK(r.top_patches.front() == arg);
    for (const auto& a : r.patches)
        for (const auto& b : r.patches)
            if (a.raw_score < b.raw_score)
                CHECK(a.percentile < b.percentile);

    const HeatmapRecord back = nlohmann::json(r).get<HeatmapRecord>();
    CHECK(back == r);
}

TEST_CASE("colour ramp")
{
    CHECK(percentile_color(1.0) == Rgb{165, 0, 38});
    CHECK(percentile_color(0.0) == Rgb{49, 54, 149});
    CHECK(percentile_color(0.5) == Rgb{255, 255, 191});
}

TEST_CASE("render heatmap")
{
    std::mt19937_64 rng(4);
    const fs::path dir = scratch("render");

    SUBCASE("single patch")
    {
        const HeatmapRecord r = sample_record(rng, 1);
        CHECK(r.patches[0].percentile == 1.0);
        const HeatmapFiles f = render_heatmap(r, dir / "one", 4);
        const RgbImage img = decode_png(read_bytes(f.image));
        CHECK(img.width == 4);
        CHECK(img.height == 4);
        for (std::size_t y = 0; y < 4; ++y)
            for (std::size_t x = 0; x < 4; ++x)
                CHECK(img.at(x, y) == Rgb{165, 0, 38});
    }
    SUBCASE("decode and check")
    {
        const HeatmapRecord r = sample_record(rng, 25);
        const HeatmapFiles a = render_heatmap(r, dir / "a", 3);
        const HeatmapFiles b = render_heatmap(r, dir / "b", 3);
        CHECK(read_bytes(a.image) == read_bytes(b.image));
        CHECK(read_bytes(a.sidecar) == read_bytes(b.sidecar));

        const RgbImage img = decode_png(read_bytes(a.image));
        const RgbImage raster = rasterize_heatmap(r, 3);
        CHECK(img.width == raster.width);
        CHECK(img.pixels == raster.pixels);

        std::int64_t min_x = r.patches[0].x, min_y = r.patches[0].y;
        for (const auto& p : r.patches) {
            min_x = std::min(min_x, p.x);
            min_y = std::min(min_y, p.y);
        }
        const HeatmapEntry& top = r.patches[r.top_patches.front()];
        CHECK(img.at(std::size_t(top.x - min_x) * 3 + 1, std::size_t(top.y - min_y) * 3 + 1) == Rgb{165, 0, 38});

        std::ifstream in(a.sidecar);
        CHECK(nlohmann::json::parse(in).get<HeatmapRecord>() == r);
    }
    SUBCASE("unwritable path")
    {
        std::ofstream(dir / "blocker") << "x";
        CHECK_THROWS_AS(render_heatmap(sample_record(rng, 3), dir / "blocker" / "sub" / "h"), IoError);
    }
}

TEST_CASE("png decoding rejects corruption")
{
    RgbImage img{2, 1, {1, 2, 3, 4, 5, 6}};
    auto bytes = encode_png(img);
    const RgbImage back = decode_png(bytes);
    CHECK(back.pixels == img.pixels);
    bytes[bytes.size() / 2] ^= 0xff;
    CHECK_THROWS_AS(decode_png(bytes), FormatError);
}

TEST_CASE("cli usage errors")
{
    std::string out, err;
    CHECK(cli({}, &out, &err) == 2);
    CHECK(cli({"frobnicate"}, &out, &err) == 2);
    CHECK(cli({"synth", "--out-dir", "x", "--bogus"}, &out, &err) == 2);
    CHECK(cli({"train", "--dataset", "/nonexistent.json", "--out-dir", "x"}, &out, &err) == 2);
    CHECK(cli({"--help"}, &out, &err) == 0);
    CHECK(out.find("heatmap") != std::string::npos);
}

TEST_CASE("cli pipeline")
{
    const fs::path dir = scratch("cli");
    std::string out, err;
    REQUIRE(cli({"synth", "--out-dir", (dir / "data").string(), "--n-slides", "12", "--n-patches", "16", "--dim", "6",
                 "--seed", "3"},
                &out, &err) == 0);
    CHECK(out.find("resolved config: ") == 0);
    CHECK(fs::exists(dir / "data" / "slides" / "slide_0000.motif.json"));

    std::ofstream(dir / "tiny.json")
        << R"({"d_model":8,"d_edge":4,"heads":2,"gcn_layers":2,"hops":2,"d_ffn":8,"epochs":2,"optimizer":{"lr":0.001}})";

    REQUIRE(cli({"build-graph", "--slide", (dir / "data" / "slides" / "slide_0001.json").string(), "--k", "4",
                 "--knn-metric", "feature_euclidean"},
                &out, &err) == 0);
    const auto stats = nlohmann::json::parse(out.substr(out.find('\n') + 1));
    CHECK(stats["n_edges"] == 16 * 5);
    CHECK(stats["knn_metric"] == "feature_euclidean");

    const std::string dataset = (dir / "data" / "dataset.json").string();
    for (const char* m : {"A", "E"}) {
        REQUIRE(cli({"train", "--dataset", dataset, "--config", (dir / "tiny.json").string(), "--ablation", m,
                     "--folds", "2", "--k", "4", "--threads", "1", "--out-dir", (dir / m).string()},
                    &out, &err) == 0);
        const auto echoed = nlohmann::json::parse(out.substr(17, out.find('\n') - 17));
        CHECK(echoed["folds"] == 2);
        CHECK(echoed["k"] == 4);
        CHECK(echoed["d_model"] == 8);
        CHECK(echoed["use_gap"] == (std::string(m) == "E"));
    }
    const Checkpoint a = load_checkpoint(dir / "A" / "checkpoint.goat");
    const Checkpoint e = load_checkpoint(dir / "E" / "checkpoint.goat");
    CHECK(a.fold_params[0].size() < e.fold_params[0].size());
    CHECK_FALSE(a.fold_params[0].contains("pool.w"));
    CHECK(e.fold_params[0].contains("pool.w"));

    REQUIRE(cli({"eval", "--checkpoint", (dir / "E" / "checkpoint.goat").string(), "--dataset", dataset, "--out-dir",
                 (dir / "E_eval").string()},
                &out, &err) == 0);
    std::ifstream r1(dir / "E" / "report.json"), r2(dir / "E_eval" / "eval_report.json");
    CHECK(nlohmann::json::parse(r1) == nlohmann::json::parse(r2));

    REQUIRE(cli({"heatmap", "--checkpoint", (dir / "E" / "checkpoint.goat").string(), "--slide",
                 (dir / "data" / "slides" / "slide_0000.json").string(), "--top-k", "4", "--out-dir",
                 (dir / "heat").string()},
                &out, &err) == 0);
    CHECK(fs::exists(dir / "heat" / "slide_0000.png"));
    std::ifstream side(dir / "heat" / "slide_0000.json");
    CHECK(nlohmann::json::parse(side).get<HeatmapRecord>().top_patches.size() == 4);

    CHECK(cli({"heatmap", "--checkpoint", (dir / "E" / "checkpoint.goat").string(), "--slide",
               (dir / "data" / "slides" / "slide_0000.json").string(), "--fold", "7", "--out-dir",
               (dir / "heat").string()},
              &out, &err) == 1);
}

TEST_CASE("cli seed resolution")
{
    const fs::path dir = scratch("seed");
    std::string out, err;
    ::setenv("GOAT_SEED", "31", 1);
    REQUIRE(cli({"synth", "--out-dir", (dir / "d").string(), "--n-slides", "4", "--n-patches", "16", "--dim", "4"}, &out,
                &err) == 0);
    CHECK(nlohmann::json::parse(out.substr(17, out.find('\n') - 17))["seed"] == 31);
    const std::string slide = (dir / "d" / "slides" / "slide_0000.json").string();
    REQUIRE(cli({"build-graph", "--slide", slide}, &out, &err) == 0);
    CHECK(nlohmann::json::parse(out.substr(17, out.find('\n') - 17))["seed"] == 31);
    REQUIRE(cli({"build-graph", "--slide", slide, "--seed", "5"}, &out, &err) == 0);
    CHECK(nlohmann::json::parse(out.substr(17, out.find('\n') - 17))["seed"] == 5);
    std::ofstream(dir / "c.json") << R"({"seed": 8})";
    REQUIRE(cli({"build-graph", "--slide", slide, "--config", (dir / "c.json").string()}, &out, &err) == 0);
    CHECK(nlohmann::json::parse(out.substr(17, out.find('\n') - 17))["seed"] == 8);
    ::setenv("GOAT_SEED", "nope", 1);
    CHECK(cli({"build-graph", "--slide", slide}, &out, &err) == 2);
    ::unsetenv("GOAT_SEED");
}
