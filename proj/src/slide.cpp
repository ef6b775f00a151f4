#include "goat/slide.hpp"

#include "goat/error.hpp"

#include "json.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

namespace goat {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "embedding blobs are read as native little-endian floats");

void SlideBag::validate() const
{
    if (coords.empty())
        throw ValidationError("slide '" + slide_id + "' has no patches");
    if (embeddings.rank() != 2 || embeddings.rows() != coords.size())
        throw ValidationError("slide '" + slide_id + "': embedding shape " + shape_str(embeddings.shape()) +
                              " does not match " + std::to_string(coords.size()) + " coordinates");
    if (!embeddings.all_finite())
        throw ValidationError("slide '" + slide_id + "' has non-finite embeddings");
    std::vector<GridCoord> sorted = coords;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
        throw ValidationError("slide '" + slide_id + "' has duplicate patch coordinates");
}

std::vector<std::size_t> Dataset::labels() const
{
    std::vector<std::size_t> out;
    out.reserve(slides.size());
    for (const auto& s : slides)
        out.push_back(s.label);
    return out;
}

namespace {

json read_json(const fs::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw IoError("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

void write_text(const fs::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw IoError("cannot write " + path.string());
    out << text;
    if (!out)
        throw IoError("write failed for " + path.string());
}

template <class T>
T field(const json& j, const char* key, const fs::path& where)
{
    if (!j.contains(key))
        throw FormatError(where.string() + ": missing field '" + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw FormatError(where.string() + ": bad field '" + key + "': " + e.what());
    }
}

Tensor read_embeddings(const fs::path& path, std::size_t n, std::size_t d)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open " + path.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const std::size_t expect = n * d * sizeof(float);
    if (bytes.size() != expect)
        throw FormatError(path.string() + ": expected " + std::to_string(expect) + " bytes for " + std::to_string(n) +
                          "x" + std::to_string(d) + " float32, got " + std::to_string(bytes.size()));
    std::vector<double> values(n * d);
    for (std::size_t i = 0; i < n * d; ++i) {
        float f;
        std::memcpy(&f, bytes.data() + i * sizeof(float), sizeof(float));
        values[i] = static_cast<double>(f);
    }
    return Tensor(Shape{n, d}, std::move(values));
}

std::vector<GridCoord> read_coords(const fs::path& path, std::size_t n)
{
    std::ifstream in(path);
    if (!in)
        throw IoError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line) || (line != "patch_id,x,y" && line != "patch_id,x,y\r"))
        throw FormatError(path.string() + ": expected header 'patch_id,x,y'");

    std::vector<GridCoord> coords(n);
    std::vector<char> seen(n, 0);
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (line.empty())
            continue;
        ++rows;
        std::istringstream ss(line);
        long long id, x, y;
        char c1, c2;
        if (!(ss >> id >> c1 >> x >> c2 >> y) || c1 != ',' || c2 != ',')
            throw FormatError(path.string() + ": malformed row '" + line + "'");
        if (rows > n)
            continue;
        if (id < 0 || static_cast<std::size_t>(id) >= n)
            throw FormatError(path.string() + ": patch_id " + std::to_string(id) + " out of range [0," +
                              std::to_string(n) + ")");
        if (seen[static_cast<std::size_t>(id)])
            throw FormatError(path.string() + ": patch_id " + std::to_string(id) + " repeated");
        seen[static_cast<std::size_t>(id)] = 1;
        coords[static_cast<std::size_t>(id)] = GridCoord{x, y};
    }
    if (rows != n)
        throw FormatError(path.string() + ": " + std::to_string(rows) + " coordinate rows for " + std::to_string(n) +
                          " patches");
    return coords;
}

} // namespace

SlideBag load_slide_bag(const fs::path& manifest_path)
{
    const json m = read_json(manifest_path);
    const fs::path dir = manifest_path.parent_path();

    SlideBag bag;
    bag.slide_id = field<std::string>(m, "slide_id", manifest_path);
    const auto n = field<std::size_t>(m, "n_patches", manifest_path);
    const auto d = field<std::size_t>(m, "dim", manifest_path);
    const auto label = field<long long>(m, "label", manifest_path);
    if (n == 0 || d == 0)
        throw FormatError(manifest_path.string() + ": n_patches and dim must be positive");
    if (label < 0)
        throw FormatError(manifest_path.string() + ": negative label");
    bag.label = static_cast<std::size_t>(label);
    bag.embeddings = read_embeddings(dir / field<std::string>(m, "embedding_file", manifest_path), n, d);
    bag.coords = read_coords(dir / field<std::string>(m, "coords_file", manifest_path), n);
    bag.validate();
    return bag;
}

void save_slide_bag(const SlideBag& bag, const fs::path& manifest_path)
{
    bag.validate();
    const std::string stem = manifest_path.stem().string();
    const fs::path dir = manifest_path.parent_path();
    if (!dir.empty())
        fs::create_directories(dir);
    const std::string emb_name = stem + ".emb.f32";
    const std::string coords_name = stem + ".coords.csv";

    json m;
    m["slide_id"] = bag.slide_id;
    m["n_patches"] = bag.n_patches();
    m["dim"] = bag.dim();
    m["embedding_file"] = emb_name;
    m["coords_file"] = coords_name;
    m["label"] = bag.label;
    write_text(manifest_path, m.dump(2) + "\n");

    std::string blob(bag.embeddings.numel() * sizeof(float), '\0');
    for (std::size_t i = 0; i < bag.embeddings.numel(); ++i) {
        const float f = static_cast<float>(bag.embeddings[i]);
        std::memcpy(blob.data() + i * sizeof(float), &f, sizeof(float));
    }
    write_text(dir / emb_name, blob);

    std::string csv = "patch_id,x,y\n";
    for (std::size_t i = 0; i < bag.coords.size(); ++i)
        csv += std::to_string(i) + "," + std::to_string(bag.coords[i].x) + "," + std::to_string(bag.coords[i].y) + "\n";
    write_text(dir / coords_name, csv);
}

Dataset load_dataset(const fs::path& manifest_path)
{
    const json m = read_json(manifest_path);
    Dataset ds;
    ds.class_names = field<std::vector<std::string>>(m, "class_names", manifest_path);
    if (ds.class_names.size() < 2)
        throw FormatError(manifest_path.string() + ": need at least two class names");
    const auto slides = field<std::vector<std::string>>(m, "slides", manifest_path);
    for (const auto& rel : slides) {
        SlideBag bag = load_slide_bag(manifest_path.parent_path() / rel);
        if (bag.label >= ds.class_names.size())
            throw ValidationError("slide '" + bag.slide_id + "' label " + std::to_string(bag.label) +
                                  " outside the class table");
        ds.slides.push_back(std::move(bag));
    }
    if (ds.slides.empty())
        throw FormatError(manifest_path.string() + ": dataset has no slides");
    return ds;
}

void save_dataset(const Dataset& dataset, const fs::path& manifest_path)
{
    const fs::path dir = manifest_path.parent_path();
    json m;
    m["class_names"] = dataset.class_names;
    std::vector<std::string> rel;
    std::set<std::string> used;
    for (const auto& bag : dataset.slides) {
        if (!used.insert(bag.slide_id).second)
            throw ValidationError("duplicate slide_id '" + bag.slide_id + "'");
        const std::string name = "slides/" + bag.slide_id + ".json";
        save_slide_bag(bag, dir / name);
        rel.push_back(name);
    }
    m["slides"] = rel;
    write_text(manifest_path, m.dump(2) + "\n");
}

} // namespace goat
