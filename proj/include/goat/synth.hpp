#pragma once

#include "goat/slide.hpp"

#include <cstdint>
#include <vector>

namespace goat {

/// Generator settings for synthetic geometric bags.
///
/// Every bag places the same number of "motif" patches on a square-ish patch
/// grid. Class 0 packs them into one disc; class c >= 1 splits them into c + 2
/// discs that do not touch. Motif and background embeddings come from two
/// fixed Gaussian prototypes, so per-bag feature statistics do not depend on
/// the class and only the spatial arrangement carries the label.
struct SynthSpec {
    std::size_t dim = 64;
    double motif_fraction = 0.25;
    double prototype_scale = 1.0; // per-coordinate sd of the background prototype
    double motif_shift = 4.0;     // distance between background and motif prototypes
    double noise = 1.0;           // per-coordinate patch noise sd
    std::uint64_t prototype_seed = 7;
};

struct SynthSlide {
    SlideBag bag;
    std::vector<bool> motif; // per patch: inside a planted disc
};

// Deterministic in (class_id, n_patches, seed, spec). Embeddings are rounded
// to float32 so a saved and reloaded bag compares equal.
SynthSlide synth_slide_annotated(std::size_t class_id, std::size_t n_patches, std::uint64_t seed,
                                 const SynthSpec& spec = {});
SlideBag synth_slide(std::size_t class_id, std::size_t n_patches, std::uint64_t seed, const SynthSpec& spec = {});

struct SynthDataset {
    Dataset dataset;
    std::vector<std::vector<bool>> motif;
};

// Balanced dataset: slide s has class s % n_classes and seed derived from (seed, s).
SynthDataset synth_dataset(std::size_t n_slides, std::size_t n_classes, std::size_t n_patches, std::uint64_t seed,
                           const SynthSpec& spec = {});

} // namespace goat
