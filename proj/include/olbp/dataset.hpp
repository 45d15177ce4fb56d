#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "olbp/common.hpp"
#include "olbp/fixation.hpp"
#include "olbp/image.hpp"
#include "olbp/morphology.hpp"

namespace olbp {

// Pixel-level annotation: 0 is background, labels >= 1 are object instances.
struct SemanticGT {
    Plane<std::int32_t> labels;
};

struct BinarySegGT {
    Plane<std::uint8_t> mask;  // {0,1}
};

// One training/eval unit. Paths are relative to the dataset root.
struct SampleRecord {
    std::string id;  // "<image_id>_s<subject>"
    std::string image_id;
    int subject = 0;
    std::string image_path;
    std::string fixation_path;
    std::string semantic_gt_path;
    std::string binary_gt_path;
    std::string boundary_gt_path;
    std::string fdm_path;
    bool constrained = false;
    std::string split = "train";
    double fdm_sigma = kDefaultFdmSigma;
};

struct DatasetManifest {
    std::vector<SampleRecord> records;

    struct Stats {
        std::int64_t constrained = 0, unconstrained = 0, train = 0, test = 0;
    };
    Stats stats() const {
        Stats s;
        for (const auto& r : records) {
            (r.constrained ? s.constrained : s.unconstrained)++;
            (r.split == "train" ? s.train : s.test)++;
        }
        return s;
    }
};

// Step 1: the semantic label under each fixation, in fixation order,
// duplicates retained.
inline std::vector<std::int32_t> collect_labels(const SemanticGT& sem, const FixationMap& fm) {
    if (fm.empty()) throw DataError("collect_labels: empty fixation map");
    std::vector<std::int32_t> out;
    out.reserve(fm.points.size());
    for (const auto& [x, y] : fm.points) {
        if (x < 0 || x >= sem.labels.w || y < 0 || y >= sem.labels.h)
            throw DataError("collect_labels: fixation (" + std::to_string(x) + "," +
                            std::to_string(y) + ") outside the annotation");
        out.push_back(sem.labels.at(y, x));
    }
    return out;
}

// Step 2: drop background hits, collapse duplicates. All-background input is
// rejected: such a sample has no gazed object.
inline std::set<std::int32_t> distill_labels(const std::vector<std::int32_t>& raw) {
    std::set<std::int32_t> out;
    for (std::int32_t label : raw)
        if (label != 0) out.insert(label);
    if (out.empty()) throw DataError("distill_labels: no gazed object (all fixations on background)");
    return out;
}

// Step 3: keep the gazed regions as foreground, everything else background.
inline BinarySegGT create_binary_gt(const SemanticGT& sem, const std::set<std::int32_t>& gazed) {
    if (gazed.empty()) throw DataError("create_binary_gt: empty gazed set");
    std::set<std::int32_t> present(sem.labels.v.begin(), sem.labels.v.end());
    for (std::int32_t g : gazed)
        if (!present.count(g))
            throw DataError("create_binary_gt: label " + std::to_string(g) +
                            " not present in the annotation");
    BinarySegGT gt{Plane<std::uint8_t>(sem.labels.h, sem.labels.w)};
    for (std::int64_t i = 0; i < sem.labels.size(); ++i)
        gt.mask.v[std::size_t(i)] = gazed.count(sem.labels.v[std::size_t(i)]) ? 1 : 0;
    return gt;
}

// Constrained means every fixation lands on an object (label != 0).
inline bool classify_fm(const SemanticGT& sem, const FixationMap& fm) {
    for (std::int32_t label : collect_labels(sem, fm))
        if (label == 0) return false;
    return true;
}

// Appends ceil(fraction * |fm|) extra fixations sampled uniformly from
// background pixels; the original points are untouched. Background-only noise
// never changes the derived binary GT, which is what makes the robustness
// protocol a pure input perturbation.
inline FixationMap inject_noise(const SemanticGT& sem, const FixationMap& fm, double fraction,
                                std::uint64_t rng_seed) {
    if (fraction <= 0.0 || fraction >= 1.0)
        throw DataError("inject_noise: fraction must be in (0,1)");
    std::vector<std::pair<int, int>> background;
    for (std::int64_t i = 0; i < sem.labels.h; ++i)
        for (std::int64_t j = 0; j < sem.labels.w; ++j)
            if (sem.labels.at(i, j) == 0)
                background.emplace_back(static_cast<int>(j), static_cast<int>(i));
    if (background.empty()) throw DataError("inject_noise: no background pixels to sample");

    const std::size_t extra = static_cast<std::size_t>(
        std::ceil(fraction * static_cast<double>(fm.points.size())));
    FixationMap out = fm;
    std::mt19937_64 rng(rng_seed);
    std::uniform_int_distribution<std::size_t> pick(0, background.size() - 1);
    for (std::size_t i = 0; i < extra; ++i) out.points.push_back(background[pick(rng)]);
    out.validate();
    return out;
}

// Image-level train/test split: every fixation map follows its image.
inline void split_dataset(DatasetManifest& manifest, std::int64_t train_images,
                          std::uint64_t rng_seed) {
    std::vector<std::string> images;
    std::set<std::string> seen;
    for (const auto& r : manifest.records)
        if (seen.insert(r.image_id).second) images.push_back(r.image_id);
    if (train_images < 0 || train_images >= static_cast<std::int64_t>(images.size()))
        throw DataError("split_dataset: train_images " + std::to_string(train_images) +
                        " must be in [0, " + std::to_string(images.size()) + ")");
    std::mt19937_64 rng(rng_seed);
    std::shuffle(images.begin(), images.end(), rng);
    std::set<std::string> train(images.begin(), images.begin() + train_images);
    for (auto& r : manifest.records) r.split = train.count(r.image_id) ? "train" : "test";
}

inline nlohmann::json record_to_json(const SampleRecord& r) {
    return nlohmann::json{{"id", r.id},
                          {"image_id", r.image_id},
                          {"subject", r.subject},
                          {"image", r.image_path},
                          {"fixations", r.fixation_path},
                          {"semantic_gt", r.semantic_gt_path},
                          {"binary_gt", r.binary_gt_path},
                          {"boundary_gt", r.boundary_gt_path},
                          {"fdm", r.fdm_path},
                          {"constrained", r.constrained},
                          {"split", r.split},
                          {"fdm_sigma", r.fdm_sigma}};
}

inline SampleRecord record_from_json(const nlohmann::json& j) {
    SampleRecord r;
    r.id = j.at("id").get<std::string>();
    r.image_id = j.at("image_id").get<std::string>();
    r.subject = j.at("subject").get<int>();
    r.image_path = j.value("image", "");
    r.fixation_path = j.at("fixations").get<std::string>();
    r.semantic_gt_path = j.value("semantic_gt", "");
    r.binary_gt_path = j.value("binary_gt", "");
    r.boundary_gt_path = j.value("boundary_gt", "");
    r.fdm_path = j.value("fdm", "");
    r.constrained = j.at("constrained").get<bool>();
    r.split = j.value("split", "train");
    r.fdm_sigma = j.value("fdm_sigma", kDefaultFdmSigma);
    return r;
}

// Manifest on disk is JSON lines, one sample per line.
inline void save_manifest(const std::string& path, const DatasetManifest& manifest) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write manifest: " + path);
    for (const auto& r : manifest.records) out << record_to_json(r).dump() << "\n";
}

inline DatasetManifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open manifest: " + path);
    DatasetManifest m;
    std::string line;
    std::int64_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            m.records.push_back(record_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return m;
}

// Semantic label maps round-trip through 8-bit indexed PNG.
inline void write_semantic_png(const std::string& path, const SemanticGT& sem) {
    Plane<std::uint8_t> img(sem.labels.h, sem.labels.w);
    for (std::int64_t i = 0; i < sem.labels.size(); ++i) {
        const std::int32_t label = sem.labels.v[std::size_t(i)];
        if (label < 0 || label > 255)
            throw DataError("semantic label " + std::to_string(label) +
                            " outside the 8-bit range of " + path);
        img.v[std::size_t(i)] = static_cast<std::uint8_t>(label);
    }
    write_png_indexed8(path, img);
}

inline SemanticGT read_semantic_png(const std::string& path) {
    Plane<std::uint8_t> img = read_png_indexed8(path);
    SemanticGT sem{Plane<std::int32_t>(img.h, img.w)};
    for (std::int64_t i = 0; i < img.size(); ++i)
        sem.labels.v[std::size_t(i)] = img.v[std::size_t(i)];
    return sem;
}

}  // namespace olbp
