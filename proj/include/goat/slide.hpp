#pragma once

#include "goat/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace goat {

/// Patch position on the tiling grid, in patch units.
struct GridCoord {
    std::int64_t x = 0;
    std::int64_t y = 0;

    friend bool operator==(const GridCoord&, const GridCoord&) = default;
    friend auto operator<=>(const GridCoord&, const GridCoord&) = default;
};

/// One slide as a multiple-instance bag: patch embeddings [N x d], the grid
/// position of every patch, and the slide-level class.
struct SlideBag {
    std::string slide_id;
    Tensor embeddings;
    std::vector<GridCoord> coords;
    std::size_t label = 0;

    std::size_t n_patches() const { return coords.size(); }
    std::size_t dim() const { return embeddings.cols(); }

    // Throws ValidationError on an empty bag, row/coordinate count mismatch,
    // duplicate coordinates or non-finite embeddings.
    void validate() const;
};

/// A labelled collection of bags plus the class-name table.
struct Dataset {
    std::vector<std::string> class_names;
    std::vector<SlideBag> slides;

    std::size_t n_classes() const { return class_names.size(); }
    std::vector<std::size_t> labels() const;
};

// Slide manifest: {slide_id, n_patches, dim, embedding_file, coords_file, label}.
// File references are resolved relative to the manifest's directory.
SlideBag load_slide_bag(const std::filesystem::path& manifest_path);

// Writes <stem>.json, <stem>.emb.f32 (little-endian float32, row-major) and
// <stem>.coords.csv next to each other. Embeddings are narrowed to float32.
void save_slide_bag(const SlideBag& bag, const std::filesystem::path& manifest_path);

// Dataset manifest: {"class_names": [...], "slides": [relative manifest paths]}.
Dataset load_dataset(const std::filesystem::path& manifest_path);
void save_dataset(const Dataset& dataset, const std::filesystem::path& manifest_path);

} // namespace goat
