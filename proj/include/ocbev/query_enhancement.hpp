#pragma once

// Heatmap peak selection and decoder query replacement.

#include <cstddef>
#include <span>
#include <vector>

#include "ocbev/autodiff.hpp"
#include "ocbev/geometry.hpp"

namespace ocbev {

class Heatmap {
public:
    explicit Heatmap(BEVGrid grid);
    /// Throws ocbev::Error when a score is outside [0,1] or the size is wrong.
    Heatmap(BEVGrid grid, std::vector<double> scores);

    const BEVGrid& grid() const { return grid_; }
    std::span<const double> scores() const { return scores_; }
    double at(std::size_t cell) const { return scores_[cell]; }
    double at(int row, int col) const { return scores_[static_cast<std::size_t>(row) * grid_.cols() + col]; }

private:
    BEVGrid grid_;
    std::vector<double> scores_;
};

struct EnhancementConfig {
    std::size_t replace_count = 50;
    int window = 3;  // odd side length of the local-maximum window
    double min_score = 0.05;
    /// Also copy the BEV feature at each peak into the replaced content embedding.
    bool content_from_bev = false;
};

struct Peak {
    std::size_t cell;
    double score;

    friend bool operator==(const Peak&, const Peak&) = default;
};

/// Strict local maxima of the window (equal neighbours with a lower flat index
/// win), above min_score, best first, at most replace_count.
std::vector<Peak> select_peaks(const Heatmap& h, const EnhancementConfig& cfg);

/// Decoder queries: content and positional embeddings [N, C] and reference points [N, 2].
struct QuerySet {
    nn::Var content;
    nn::Var positional;
    nn::Var reference;

    std::size_t size() const { return content.defined() ? content.shape()[0] : 0; }
    /// Throws ocbev::Error when the three parts disagree on N or a reference leaves [0,1)^2.
    void validate() const;
};

/// Replaces the first |peaks| reference points with the peak cell centers
/// (normalized, detached) and their positional embeddings with
/// pos_w^T [u, v] + pos_b. Content embeddings are passed through untouched
/// unless `bev` is given, in which case the replaced rows read the BEV feature
/// at the peak cell.
QuerySet enhance_queries(const QuerySet& base, std::span<const Peak> peaks, const BEVGrid& grid,
                         const nn::Var& pos_w, const nn::Var& pos_b, const nn::Var* bev = nullptr);

/// base with rows `rows[i]` replaced by row i of `replacement`.
nn::Var replace_rows(const nn::Var& base, std::span<const std::size_t> rows, const nn::Var& replacement);

}  // namespace ocbev
