#include "ocbev/query_enhancement.hpp"

#include <algorithm>
#include <string>

#include "ocbev/error.hpp"
#include "ocbev/kernels.hpp"
#include "ocbev/ops.hpp"

namespace ocbev {

Heatmap::Heatmap(BEVGrid grid) : grid_(grid), scores_(grid.cell_count(), 0.0) {}

Heatmap::Heatmap(BEVGrid grid, std::vector<double> scores) : grid_(grid), scores_(std::move(scores)) {
    if (scores_.size() != grid_.cell_count()) throw ShapeError("Heatmap: score count does not match grid");
    for (double s : scores_) {
        if (!(s >= 0.0 && s <= 1.0)) throw Error("Heatmap: score outside [0,1]");
    }
}

std::vector<Peak> select_peaks(const Heatmap& h, const EnhancementConfig& cfg) {
    if (cfg.window < 1 || cfg.window % 2 == 0) throw Error("select_peaks: window must be a positive odd size");
    const int r = cfg.window / 2;
    const int rows = h.grid().rows();
    const int cols = h.grid().cols();
    std::vector<Peak> peaks;
    for (int y = 0; y < rows; ++y) {
        for (int x = 0; x < cols; ++x) {
            const double s = h.at(y, x);
            if (s < cfg.min_score) continue;
            const std::size_t k = static_cast<std::size_t>(y) * cols + x;
            // Peak: nothing higher in the window, no equal neighbour with a lower
            // index, and at least one strictly lower neighbour (so flat regions
            // never produce peaks).
            bool dominated = false;
            bool has_lower = false;
            for (int dy = -r; dy <= r && !dominated; ++dy) {
                for (int dx = -r; dx <= r; ++dx) {
                    const int yy = y + dy, xx = x + dx;
                    if ((dx == 0 && dy == 0) || yy < 0 || xx < 0 || yy >= rows || xx >= cols) continue;
                    const double o = h.at(yy, xx);
                    const std::size_t ko = static_cast<std::size_t>(yy) * cols + xx;
                    if (o > s || (o == s && ko < k)) {
                        dominated = true;
                        break;
                    }
                    if (o < s) has_lower = true;
                }
            }
            if (!dominated && has_lower) peaks.push_back({k, s});
        }
    }
    std::stable_sort(peaks.begin(), peaks.end(), [](const Peak& a, const Peak& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.cell < b.cell;
    });
    if (peaks.size() > cfg.replace_count) peaks.resize(cfg.replace_count);
    return peaks;
}

void QuerySet::validate() const {
    const std::size_t n = size();
    if (!positional.defined() || !reference.defined() || positional.shape().at(0) != n ||
        reference.shape() != nn::Shape{n, 2} || content.shape() != positional.shape()) {
        throw ShapeError("QuerySet: content, positional and reference parts disagree");
    }
    for (double v : reference.value().data()) {
        if (!(v >= 0.0 && v < 1.0)) throw Error("QuerySet: reference point outside [0,1)");
    }
}

nn::Var replace_rows(const nn::Var& base, std::span<const std::size_t> rows, const nn::Var& replacement) {
    if (base.shape().size() != 2 || replacement.shape().size() != 2 || replacement.shape()[0] != rows.size() ||
        replacement.shape()[1] != base.shape()[1]) {
        throw ShapeError("replace_rows: shape mismatch");
    }
    const std::size_t n = base.shape()[0], c = base.shape()[1];
    std::vector<char> replaced(n, 0);
    nn::Tensor out = base.value();
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= n) throw ShapeError("replace_rows: row index out of range");
        if (replaced[rows[i]]) throw Error("replace_rows: duplicate row index");
        replaced[rows[i]] = 1;
        std::copy_n(replacement.value().data().data() + i * c, c, out.data().data() + rows[i] * c);
    }
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    return nn::record(std::move(out), {base, replacement}, [idx, replaced, c](nn::Node& self) {
        if (double* g = nn::input_grad(self, 0)) {
            for (std::size_t r = 0; r < replaced.size(); ++r)
                if (!replaced[r]) kernels::axpy(1.0, self.grad.data() + r * c, g + r * c, c);
        }
        if (double* g = nn::input_grad(self, 1)) {
            for (std::size_t i = 0; i < idx.size(); ++i) kernels::axpy(1.0, self.grad.data() + idx[i] * c, g + i * c, c);
        }
    });
}

QuerySet enhance_queries(const QuerySet& base, std::span<const Peak> peaks, const BEVGrid& grid,
                         const nn::Var& pos_w, const nn::Var& pos_b, const nn::Var* bev) {
    if (peaks.size() > base.size()) {
        throw Error("enhance_queries: " + std::to_string(peaks.size()) + " peaks for " +
                    std::to_string(base.size()) + " queries");
    }
    if (peaks.empty()) return base;
    std::vector<std::size_t> rows(peaks.size());
    nn::Tensor uv({peaks.size(), 2});
    std::vector<std::size_t> cells(peaks.size());
    for (std::size_t i = 0; i < peaks.size(); ++i) {
        rows[i] = i;
        cells[i] = peaks[i].cell;
        const Vec2 n = grid.normalize(grid.index_to_coord(peaks[i].cell));
        uv.at(i, 0) = n.x;
        uv.at(i, 1) = n.y;
    }
    const nn::Var ref = nn::Var::constant(uv);
    QuerySet out;
    out.reference = replace_rows(base.reference, rows, ref);
    out.positional = replace_rows(base.positional, rows, nn::linear(ref, pos_w, pos_b));
    out.content = bev ? replace_rows(base.content, rows, nn::gather_rows(*bev, cells)) : base.content;
    return out;
}

}  // namespace ocbev
