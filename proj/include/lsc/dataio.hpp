#ifndef LSC_DATAIO_HPP
#define LSC_DATAIO_HPP

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "lsc/common.hpp"

namespace lsc {

// Raw channel order: Red, Green, Blue, NIR, then descending-orbit SAR
// (VV, VH, DiffVV, DiffVH), then the ascending-orbit counterparts.
// Channels 12..17 are the derived optical indices appended by the
// features module.
struct ChannelLayout {
    static constexpr int kRawChannels = 12;
    static constexpr int kEnrichedChannels = 18;

    static const std::vector<std::string>& raw_names();
    static int index_of(const std::string& name);

    // Modality groups over the raw channels plus the derived-index group.
    static const std::vector<int>& group(const std::string& modality);
    static const std::vector<std::string>& modality_names();  // RGBN, SAR, SARdiff, Indices
};

// Working precision is 64-bit; the on-disk container is '<f4', so loading
// widens and writing narrows at the file boundary.
struct PatchStack {
    std::size_t n = 0;
    std::size_t h = 0;
    std::size_t w = 0;
    std::size_t c = 0;
    std::vector<double> data;  // N x H x W x C, C-order

    PatchStack() = default;
    PatchStack(std::size_t n_, std::size_t h_, std::size_t w_, std::size_t c_)
        : n(n_), h(h_), w(w_), c(c_), data(n_ * h_ * w_ * c_, 0.0) {}

    double& at(std::size_t i, std::size_t y, std::size_t x, std::size_t ch) {
        return data[((i * h + y) * w + x) * c + ch];
    }
    double at(std::size_t i, std::size_t y, std::size_t x, std::size_t ch) const {
        return data[((i * h + y) * w + x) * c + ch];
    }
    std::size_t size() const { return data.size(); }
};

struct LabelTable {
    std::vector<std::string> ids;
    std::vector<int> labels;  // values in {0,1}

    std::size_t size() const { return ids.size(); }
    std::size_t positives() const;
};

struct SyntheticSpec {
    std::size_t n = 100;
    double pos_ratio = 0.175;
    double difficulty = 0.3;  // 0 = trivially separable, 1 = heavy overlap
    std::uint64_t seed = 0;
};

// Planted ellipse, recorded for every sample so tests can compare the
// signature region of positives against the matched region of negatives.
struct PlantedEllipse {
    double cy, cx;     // center, pixel units
    double ry, rx;     // radii
    double angle;      // rotation, radians
    double optical_amp;
    double sar_amp;
};

struct SyntheticTruth {
    std::vector<PlantedEllipse> ellipses;  // one per sample, applied only to positives
};

// .npy version 1.0 container restricted to '<f4', C-order, shape (N,64,64,C)
// with C in {12,18}.
PatchStack load_patch_stack(const std::string& path);
void write_patch_stack(const PatchStack& stack, const std::string& path);

// CSV with header exactly "ID,label", order preserved.
LabelTable load_labels(const std::string& path);
void write_labels(const LabelTable& table, const std::string& path);

// CSV "ID,probability,label" with label = 1 iff probability >= threshold.
void save_predictions(const std::vector<std::string>& ids,
                      const std::vector<double>& probabilities,
                      double threshold, const std::string& path);

std::size_t round_half_up_count(std::size_t n, double ratio);

std::pair<PatchStack, LabelTable> generate_synthetic_dataset(const SyntheticSpec& spec);
std::pair<PatchStack, LabelTable> generate_synthetic_dataset(const SyntheticSpec& spec,
                                                             SyntheticTruth* truth);

// Rasterized soft mask of an ellipse on an h x w grid, values in [0,1].
std::vector<double> ellipse_mask(const PlantedEllipse& e, std::size_t h, std::size_t w);

}  // namespace lsc

#endif
