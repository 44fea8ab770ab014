#include "dab/binarize.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <mutex>
#include <numeric>
#include <thread>

namespace dab {

namespace {

void require_finite(std::span<const float> values) {
    if (!all_finite(values))
        fail(ErrorKind::Numeric, "weights contain a non-finite value");
}

double split_score(double part_sum, std::size_t part_n, double total,
                   std::size_t n) {
    double rest = total - part_sum;
    return part_sum * part_sum / static_cast<double>(part_n) +
           rest * rest / static_cast<double>(n - part_n);
}

// Mean of the alpha group and its complement for a split given in sorted
// coordinates. prefix[i] = sum of the i smallest values.
struct SplitMeans {
    double alpha, beta;
};

SplitMeans split_means(const std::vector<double>& prefix, std::size_t k,
                       Direction dir) {
    std::size_t n = prefix.size() - 1;
    double total = prefix[n];
    double alpha_sum =
        dir == Direction::Ascending ? prefix[k] : total - prefix[n - k];
    return {alpha_sum / static_cast<double>(k),
            (total - alpha_sum) / static_cast<double>(n - k)};
}

} // namespace

KSearchResult find_optimal_k(std::span<const float> values) {
    std::size_t n = values.size();
    if (n < 2)
        fail(ErrorKind::DegenerateInput,
             "a two-value split needs at least two weights");
    require_finite(values);

    std::vector<float> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());

    std::vector<double> prefix(n + 1, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        prefix[i + 1] = prefix[i] + static_cast<double>(sorted[i]);
    double total = prefix[n];

    // First pass: alpha group = k smallest. Ties go to the larger k.
    double best_asc = -1.0;
    std::size_t k_asc = 1;
    for (std::size_t i = 1; i < n; ++i) {
        double d = split_score(prefix[i], i, total, n);
        if (d >= best_asc) {
            best_asc = d;
            k_asc = i;
        }
    }

    // Second pass: alpha group = k largest, same tie rule. This pass wins
    // overall only when strictly better than the first.
    double best_desc = -1.0;
    std::size_t k_desc = 1;
    for (std::size_t i = 1; i < n; ++i) {
        double d = split_score(total - prefix[n - i], i, total, n);
        if (d >= best_desc) {
            best_desc = d;
            k_desc = i;
        }
    }

    KSearchResult result;
    if (best_desc > best_asc) {
        result = {k_desc, Direction::Descending, best_desc};
    } else {
        result = {k_asc, Direction::Ascending, best_asc};
    }

    // Relabel so alpha names the larger-magnitude mean; an exact tie keeps
    // the split as found.
    SplitMeans m = split_means(prefix, result.k, result.direction);
    if (std::abs(m.beta) > std::abs(m.alpha)) {
        result.k = n - result.k;
        result.direction = result.direction == Direction::Ascending
                               ? Direction::Descending
                               : Direction::Ascending;
    }
    return result;
}

BinarizedFilter binarize_dab(std::span<const float> values) {
    KSearchResult r = find_optimal_k(values);
    return binarize_dab_fixed_k(values, r.k, r.direction);
}

BinarizedFilter binarize_dab_fixed_k(std::span<const float> values,
                                     std::size_t k, Direction direction) {
    std::size_t n = values.size();
    if (n < 2)
        fail(ErrorKind::DegenerateInput,
             "a two-value split needs at least two weights");
    if (k < 1 || k > n - 1)
        fail(ErrorKind::Bounds, "k must satisfy 1 <= k <= n-1");
    require_finite(values);

    // Stable order keeps equal weights in index order, so the mask is
    // deterministic even with duplicates straddling the split.
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) {
                         return values[a] < values[b];
                     });

    BinarizedFilter f;
    f.n = n;
    f.k = k;
    f.mask = PackedBits(n);

    double alpha_sum = 0.0, beta_sum = 0.0;
    for (std::size_t pos = 0; pos < n; ++pos) {
        bool in_alpha = direction == Direction::Ascending ? pos < k
                                                          : pos >= n - k;
        std::size_t idx = order[pos];
        if (in_alpha) {
            alpha_sum += static_cast<double>(values[idx]);
            f.mask.set(idx, true);
        } else {
            beta_sum += static_cast<double>(values[idx]);
        }
    }
    f.alpha = static_cast<float>(alpha_sum / static_cast<double>(k));
    f.beta = static_cast<float>(beta_sum / static_cast<double>(n - k));
    return f;
}

BinarizedFilter binarize_xnor(std::span<const float> values) {
    std::size_t n = values.size();
    if (n == 0) fail(ErrorKind::DegenerateInput, "empty filter");
    require_finite(values);

    double abs_sum = 0.0;
    for (float v : values) abs_sum += std::abs(static_cast<double>(v));

    BinarizedFilter f;
    f.n = n;
    f.mask = pack_nonnegative(values);
    f.k = f.mask.popcount();
    f.alpha = static_cast<float>(abs_sum / static_cast<double>(n));
    f.beta = -f.alpha;
    return f;
}

BinarizedFilter binarize_bnn(std::span<const float> values) {
    std::size_t n = values.size();
    if (n == 0) fail(ErrorKind::DegenerateInput, "empty filter");
    require_finite(values);

    BinarizedFilter f;
    f.n = n;
    f.mask = pack_nonnegative(values);
    f.k = f.mask.popcount();
    f.alpha = 1.0f;
    f.beta = -1.0f;
    return f;
}

BinarizedFilter brute_force_binarize(std::span<const float> values) {
    std::size_t n = values.size();
    if (n < 2)
        fail(ErrorKind::DegenerateInput,
             "a two-value split needs at least two weights");
    if (n > 20)
        fail(ErrorKind::Size, "exhaustive split search is limited to n <= 20");
    require_finite(values);

    double norm_sq = 0.0, total = 0.0;
    for (float v : values) {
        norm_sq += static_cast<double>(v) * v;
        total += v;
    }

    double best_err = std::numeric_limits<double>::infinity();
    std::uint32_t best_mask = 0;
    std::uint32_t limit = (std::uint32_t(1) << n) - 1;
    for (std::uint32_t mask = 1; mask < limit; ++mask) {
        double group_sum = 0.0;
        std::size_t k = 0;
        for (std::size_t i = 0; i < n; ++i)
            if ((mask >> i) & 1u) {
                group_sum += values[i];
                ++k;
            }
        double rest = total - group_sum;
        double err = norm_sq - group_sum * group_sum / static_cast<double>(k) -
                     rest * rest / static_cast<double>(n - k);
        if (err < best_err) {
            best_err = err;
            best_mask = mask;
        }
    }

    double group_sum = 0.0;
    std::size_t k = 0;
    for (std::size_t i = 0; i < n; ++i)
        if ((best_mask >> i) & 1u) {
            group_sum += values[i];
            ++k;
        }
    double alpha = group_sum / static_cast<double>(k);
    double beta = (total - group_sum) / static_cast<double>(n - k);
    if (std::abs(beta) > std::abs(alpha)) {
        best_mask = ~best_mask & limit;
        k = n - k;
        std::swap(alpha, beta);
    }

    BinarizedFilter f;
    f.n = n;
    f.k = k;
    f.alpha = static_cast<float>(alpha);
    f.beta = static_cast<float>(beta);
    f.mask = PackedBits(n);
    for (std::size_t i = 0; i < n; ++i)
        if ((best_mask >> i) & 1u) f.mask.set(i, true);
    return f;
}

std::vector<float> reconstruct(const BinarizedFilter& filter) {
    std::vector<float> out(filter.n);
    for (std::size_t i = 0; i < filter.n; ++i)
        out[i] = filter.mask.get(i) ? filter.alpha : filter.beta;
    return out;
}

double approx_error(std::span<const float> values,
                    const BinarizedFilter& filter) {
    if (values.size() != filter.n)
        fail(ErrorKind::Shape, "filter length does not match weight count");
    double err = 0.0;
    for (std::size_t i = 0; i < filter.n; ++i) {
        double d = static_cast<double>(values[i]) -
                   (filter.mask.get(i) ? filter.alpha : filter.beta);
        err += d * d;
    }
    return err;
}

void mean_center(RealTensor& weights) {
    std::size_t filters = weights.rank() >= 2 ? weights.shape[0] : 1;
    std::size_t stride = weights.numel() / filters;
    float* p = weights.ptr();
    for (std::size_t f = 0; f < filters; ++f) {
        float* w = p + f * stride;
        double sum = 0.0;
        for (std::size_t i = 0; i < stride; ++i) sum += w[i];
        float mean = static_cast<float>(sum / static_cast<double>(stride));
        for (std::size_t i = 0; i < stride; ++i) w[i] -= mean;
    }
}

void clamp_unit(RealTensor& weights) {
    for (float& v : weights.data) v = std::clamp(v, -1.0f, 1.0f);
}

std::vector<BinarizedFilter> binarize_layer(const RealTensor& weights,
                                            Scheme scheme, int threads) {
    if (weights.rank() < 2)
        fail(ErrorKind::Shape, "layer weights must have rank >= 2");
    std::size_t filters = weights.shape[0];
    std::size_t n = weights.numel() / filters;
    const float* base = weights.ptr();

    std::vector<BinarizedFilter> out(filters);
    auto run = [&](std::size_t lo, std::size_t hi) {
        for (std::size_t f = lo; f < hi; ++f) {
            std::span<const float> w(base + f * n, n);
            switch (scheme) {
                case Scheme::Dab: out[f] = binarize_dab(w); break;
                case Scheme::Xnor: out[f] = binarize_xnor(w); break;
                case Scheme::Bnn: out[f] = binarize_bnn(w); break;
                default: fail(ErrorKind::Config, "unknown binarization scheme");
            }
        }
    };

    if (threads <= 1 || filters < 2) {
        run(0, filters);
        return out;
    }

    std::size_t workers = std::min<std::size_t>(threads, filters);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    std::size_t chunk = (filters + workers - 1) / workers;
    std::exception_ptr first_error;
    std::mutex error_mutex;
    for (std::size_t t = 0; t < workers; ++t) {
        std::size_t lo = t * chunk;
        std::size_t hi = std::min(filters, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([&, lo, hi] {
            try {
                run(lo, hi);
            } catch (...) {
                std::lock_guard<std::mutex> g(error_mutex);
                if (!first_error) first_error = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
    return out;
}

} // namespace dab
